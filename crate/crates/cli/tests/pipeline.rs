//! End-to-end runs of the library pipeline and the `postdae` binary on a
//! miniature synthetic configuration.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use postdae_cli::config::ExperimentConfig;
use postdae_cli::pipeline::FAILED_MARKER;
use postdae_cli::plot::read_plot_annotations;
use postdae_cli::{run_experiment, ComparisonReport, TimingMode};
use postdae_core::metrics::{read_eval_csv, PostProc};

const TINY: &str = r#"{
  "dataset": { "synthetic": { "count": 20, "size": 32, "seed": 3 } },
  "split": { "train_frac": 0.5, "val_frac": 0.2, "test_frac": 0.3, "seed": 1 },
  "dae": {
    "spec": { "input_size": 32, "code_width": 16, "encoder_channels": [4, 4, 4, 4, 4], "decoder_channels": 4, "expand_channels": 4 },
    "train": { "learning_rate": 0.001, "batch_size": 2, "epochs": 2 }
  },
  "unet": {
    "spec": { "input_size": 32, "base_channels": 2, "dropout_keep": 0.5 },
    "train": { "learning_rate": 0.001, "batch_size": 2, "checkpoint_period": 1, "max_epochs": 2, "patience": 5 }
  },
  "rf": { "samples_per_image": 50, "forest": { "n_trees": 3, "max_depth": 4 } },
  "crf": { "iterations": 2 },
  "seed": 5,
  "workers": 1
}"#;

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(TINY).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn postdae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_postdae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn full_run_covers_every_arm_and_writes_consistent_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.timing = TimingMode::Record;
    let o = run_experiment(&cfg).unwrap();

    // every (image, stage) is scored once per post-processing arm
    let mut seen: BTreeMap<(String, String), Vec<PostProc>> = BTreeMap::new();
    for r in &o.records {
        seen.entry((r.image_id.clone(), r.stage.clone())).or_default().push(r.postproc);
        assert!(r.runtime_s >= 0.0);
    }
    let stages: std::collections::BTreeSet<_> = o.records.iter().map(|r| r.stage.clone()).collect();
    assert_eq!(
        stages.into_iter().collect::<Vec<_>>(),
        ["rf", "unet-converged", "unet-epoch-001", "unet-epoch-002"]
    );
    for (key, arms) in &seen {
        assert_eq!(arms.len(), 3, "{key:?}");
        for p in PostProc::ALL {
            assert!(arms.contains(&p), "{key:?} lacks {p}");
        }
    }

    // per-record runtimes add up to the measured arm wall-clock
    for t in &o.timings {
        let gap = (t.record_sum_s - t.wall_s).abs();
        assert!(gap <= 0.1 * t.wall_s + 1e-3, "{t:?}");
    }

    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(read_eval_csv(&csv).unwrap().len(), o.records.len());
    for f in ["runtimes.csv", "arm_timings.csv", "skipped.csv", "report.csv", "comparisons.csv", "config.snapshot.json"] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
    assert!(!dir.path().join(FAILED_MARKER).exists());

    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    let flags = doc["flags"].as_array().unwrap();
    assert!(flags.iter().any(|f| f.as_str().unwrap().contains("crf parameters are untuned")));

    // plot annotations carry the same means as the records
    let plots = dir.path().join("plots");
    let dice = read_plot_annotations(&plots.join("dice.png")).unwrap();
    assert_eq!(dice.len(), 12);
    for b in &dice {
        let mut parts = b.label.split('/');
        let (m, s, p) = (parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap());
        let v: Vec<f64> = o
            .records
            .iter()
            .filter(|r| r.method == m && r.stage == s && r.postproc.to_string() == p)
            .map(|r| r.dice)
            .collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((b.mean - mean).abs() < 1e-12, "{}: {} vs {mean}", b.label, b.mean);
    }
    assert_eq!(read_plot_annotations(&plots.join("hausdorff.png")).unwrap().len(), 12);

    // the report rebuilt from the CSV agrees with the in-memory one
    let again = ComparisonReport::from_csv(&csv).unwrap();
    assert_eq!(again.arms.len(), o.report.arms.len());
}

#[test]
fn separate_timing_keeps_results_free_of_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.methods = vec!["rf".into()];
    cfg.timing = TimingMode::Separate;
    let o = run_experiment(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(read_eval_csv(&csv).unwrap().iter().all(|r| r.runtime_s == 0.0));
    let runtimes = std::fs::read_to_string(dir.path().join("runtimes.csv")).unwrap();
    assert_eq!(runtimes.lines().count(), o.records.len() + 1);
}

#[test]
fn broken_dataset_leaves_a_failed_marker() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg_path = dir.path().join("tiny.json");
    std::fs::write(&cfg_path, TINY).unwrap();
    let cfg_arg = cfg_path.to_str().unwrap();
    let gen = postdae(&["--config", cfg_arg, "gen-synthetic", "--dest", data.to_str().unwrap()]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    let victim = std::fs::read_dir(data.join("images")).unwrap().next().unwrap().unwrap().path();
    std::fs::remove_file(victim).unwrap();

    let out = dir.path().join("run");
    let root = format!("dataset.root={}", data.display());
    let run = postdae(&[
        "--config",
        cfg_arg,
        "--set",
        &root,
        "--set",
        "dataset.manifest=manifest.json",
        "--output",
        out.to_str().unwrap(),
        "experiment",
    ]);
    assert!(!run.status.success());
    let marker = std::fs::read_to_string(out.join(FAILED_MARKER)).unwrap();
    assert!(marker.contains("load"), "{marker}");
    assert!(out.join("results.csv").is_file());
}

#[test]
fn set_overrides_reach_the_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.json");
    std::fs::write(&cfg_path, TINY).unwrap();
    let out = dir.path().join("run");
    let run = postdae(&[
        "--config",
        cfg_path.to_str().unwrap(),
        "--set",
        "methods=[\"rf\"]",
        "--set",
        "crf.iterations=1",
        "--output",
        out.to_str().unwrap(),
        "experiment",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let snap: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("config.snapshot.json")).unwrap()).unwrap();
    assert_eq!(snap["crf"]["iterations"], 1);
    assert_eq!(snap["methods"], serde_json::json!(["rf"]));

    let bad = postdae(&["--config", cfg_path.to_str().unwrap(), "--set", "crf.nonsense=1", "experiment"]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("nonsense"));
}

#[test]
fn report_rejects_an_empty_results_file() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("results.csv");
    std::fs::write(&empty, "image_id,method,stage,postproc,dice,hausdorff_px,hausdorff_mm,runtime_s\n").unwrap();
    let run = postdae(&["--output", dir.path().to_str().unwrap(), "report", "--results", empty.to_str().unwrap()]);
    assert!(!run.status.success());
    let err = String::from_utf8_lossy(&run.stderr).to_lowercase();
    assert!(err.contains("schema") || err.contains("no evaluation records"), "{err}");
    assert!(!dir.path().join("plots").exists());
}
