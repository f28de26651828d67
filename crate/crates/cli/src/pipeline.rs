//! The end-to-end experiment: train the shape prior and the baseline
//! segmenters, predict the test fold at every stage, post-process each
//! prediction three ways and evaluate.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use postdae_core::metrics::{write_eval_csv, EvalRecord, PostProc};
use postdae_core::{BinaryMask, GrayImage, ProbabilityMap};
use postdae_models::{
    crf_postprocess, train_dae, train_rf, train_unet, Dae, ModelError, RfModel, Unet, UnetSnapshot,
};
use postdae_nn::Checkpoint;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, TimingMode};
use crate::dataset::{load_dataset, split_dataset, Folds};
use crate::error::{CliError, IoContext, Result};
use crate::plot::report_plots;
use crate::report::ComparisonReport;

/// Marker written to the output directory when a run fails.
pub const FAILED_MARKER: &str = "FAILED";

/// Per-image arm outputs (`None` when skipped) with their runtimes.
type ArmOutputs = Result<Vec<(Option<BinaryMask>, f64)>>;

pub enum Predictor {
    Unet(Box<Unet<f32>>),
    Rf(Box<RfModel>),
}

impl Predictor {
    pub fn predict(&self, image: &GrayImage) -> Result<ProbabilityMap> {
        Ok(match self {
            Predictor::Unet(m) => m.predict(image)?,
            Predictor::Rf(m) => m.predict(image)?,
        })
    }
}

/// A trained segmenter at one point of its training.
pub struct StageModel {
    pub method: String,
    pub stage: String,
    pub predictor: Predictor,
}

pub fn unet_stage_name(epoch: usize) -> String {
    format!("unet-epoch-{epoch:03}")
}

pub const UNET_CONVERGED: &str = "unet-converged";
pub const RF_STAGE: &str = "rf";

/// Wall-clock of one post-processing arm over the test fold next to the
/// sum of its per-record times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmTiming {
    pub method: String,
    pub stage: String,
    pub postproc: PostProc,
    pub wall_s: f64,
    pub record_sum_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedArm {
    pub image_id: String,
    pub method: String,
    pub stage: String,
    pub postproc: PostProc,
    pub reason: String,
}

#[derive(Default)]
pub struct StageOutput {
    /// Records with measured runtimes.
    pub records: Vec<EvalRecord>,
    pub timings: Vec<ArmTiming>,
    pub skipped: Vec<SkippedArm>,
}

pub fn prepare_folds(cfg: &ExperimentConfig) -> Result<Folds> {
    let ds = load_dataset(&cfg.dataset, cfg.synthetic_seed())?;
    let folds = split_dataset(ds, &cfg.split_spec())?;
    info!(
        "folds: {} train, {} val, {} test",
        folds.train.len(),
        folds.val.len(),
        folds.test.len()
    );
    if folds.test.is_empty() {
        return Err(CliError::Config("test fold is empty".into()));
    }
    Ok(folds)
}

/// Trains the shape prior from masks alone.
pub fn train_dae_stage(cfg: &ExperimentConfig, masks: &[BinaryMask], ckpt: Option<&Path>) -> Result<Dae<f32>> {
    let mut dae = Dae::<f32>::build(&cfg.dae.spec, cfg.dae_init_seed())?;
    train_dae(&mut dae, masks, &cfg.dae_train(), |_, _, _| {})?;
    if let Some(dir) = ckpt {
        dae.to_checkpoint().save(dir)?;
    }
    Ok(dae)
}

fn snapshot_checkpoint(s: &UnetSnapshot<f32>) -> Checkpoint {
    s.model.to_checkpoint(serde_json::json!({ "epoch": s.epoch, "val_dice": s.val_dice }))
}

/// Trains the UNet; returns the periodic stages followed by the converged
/// one.
pub fn train_unet_stage(cfg: &ExperimentConfig, folds: &Folds, ckpt: Option<&Path>) -> Result<Vec<StageModel>> {
    let (ti, tm): (Vec<GrayImage>, Vec<BinaryMask>) = folds.train.iter().map(|s| (s.image.clone(), s.mask.clone())).unzip();
    let (vi, vm): (Vec<GrayImage>, Vec<BinaryMask>) = folds.val.iter().map(|s| (s.image.clone(), s.mask.clone())).unzip();
    let model = Unet::<f32>::build(&cfg.unet.spec, cfg.unet_init_seed())?;
    let mut save_err: Option<CliError> = None;
    let outcome = train_unet(model, &ti, &tm, &vi, &vm, &cfg.unet_train(), |snap| {
        if let (Some(dir), None) = (ckpt, &save_err) {
            if let Err(e) = snapshot_checkpoint(snap).save(&dir.join(format!("epoch-{:03}", snap.epoch))) {
                save_err = Some(e.into());
            }
        }
    })?;
    if let Some(e) = save_err {
        return Err(e);
    }
    if let Some(dir) = ckpt {
        snapshot_checkpoint(&outcome.converged).save(&dir.join("converged"))?;
    }
    info!(
        "unet: {} epochs, converged at epoch {} (val dice {:.4})",
        outcome.epochs_run, outcome.converged.epoch, outcome.converged.val_dice
    );
    let mut stages: Vec<StageModel> = outcome
        .periodic
        .into_iter()
        .map(|s| StageModel {
            method: "unet".into(),
            stage: unet_stage_name(s.epoch),
            predictor: Predictor::Unet(Box::new(s.model)),
        })
        .collect();
    stages.push(StageModel {
        method: "unet".into(),
        stage: UNET_CONVERGED.into(),
        predictor: Predictor::Unet(Box::new(outcome.converged.model)),
    });
    Ok(stages)
}

pub fn train_rf_stage(cfg: &ExperimentConfig, folds: &Folds, ckpt: Option<&Path>) -> Result<StageModel> {
    let images: Vec<GrayImage> = folds.train.iter().map(|s| s.image.clone()).collect();
    let masks: Vec<BinaryMask> = folds.train.iter().map(|s| s.mask.clone()).collect();
    let model = train_rf(&images, &masks, &cfg.rf_config())?;
    if let Some(dir) = ckpt {
        model.save(dir)?;
    }
    Ok(StageModel {
        method: "rf".into(),
        stage: RF_STAGE.into(),
        predictor: Predictor::Rf(Box::new(model)),
    })
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64())
}

fn skipped_record(id: &str, method: &str, stage: &str, postproc: PostProc) -> EvalRecord {
    EvalRecord {
        image_id: id.into(),
        method: method.into(),
        stage: stage.into(),
        postproc,
        dice: f64::NAN,
        hausdorff_px: f64::NAN,
        hausdorff_mm: f64::NAN,
        runtime_s: 0.0,
    }
}

/// Predicts the test fold with one stage and evaluates all three arms.
/// Per-image work runs on the current rayon pool.
pub fn evaluate_stage(cfg: &ExperimentConfig, stage: &StageModel, dae: &Dae<f32>, test: &[postdae_core::data::Sample]) -> Result<StageOutput> {
    let probs: Vec<ProbabilityMap> = test
        .par_iter()
        .map(|s| stage.predictor.predict(&s.image))
        .collect::<Result<_>>()?;
    let t_pred = cfg.predict_threshold.0 as f32;
    let mut out = StageOutput::default();
    let (m, st) = (stage.method.as_str(), stage.stage.as_str());

    // none: the thresholded prediction itself
    let (none, wall): (Vec<(BinaryMask, f64)>, f64) = timed(|| {
        test.par_iter()
            .zip(&probs)
            .map(|(s, p)| timed(|| p.threshold(t_pred).with_spacing(s.mask.spacing())))
            .collect()
    });
    push_arm(&mut out, test, m, st, PostProc::None, wall, none.iter().map(|(mask, t)| Ok((Some(mask.clone()), *t))).collect::<Result<_>>()?)?;

    let (dae_out, wall): (ArmOutputs, f64) = timed(|| {
        none.par_iter()
            .map(|(mask, _)| {
                let (r, t) = timed(|| dae.postprocess(mask, cfg.dae.threshold.0));
                Ok((Some(r?), t))
            })
            .collect()
    });
    push_arm(&mut out, test, m, st, PostProc::PostDae, wall, dae_out?)?;

    let (crf_out, wall): (ArmOutputs, f64) = timed(|| {
        test.par_iter()
            .zip(&probs)
            .map(|(s, p)| {
                let (r, t) = timed(|| crf_postprocess(&s.image, p, &cfg.crf));
                match r {
                    Ok(mask) => Ok((Some(mask.with_spacing(s.mask.spacing())), t)),
                    Err(ModelError::ImageTooLarge { .. }) => Ok((None, 0.0)),
                    Err(e) => Err(e.into()),
                }
            })
            .collect()
    });
    push_arm(&mut out, test, m, st, PostProc::Crf, wall, crf_out?)?;
    Ok(out)
}

fn push_arm(
    out: &mut StageOutput,
    test: &[postdae_core::data::Sample],
    method: &str,
    stage: &str,
    postproc: PostProc,
    wall_s: f64,
    masks: Vec<(Option<BinaryMask>, f64)>,
) -> Result<()> {
    let mut sum = 0.0;
    for (s, (mask, t)) in test.iter().zip(masks) {
        match mask {
            Some(mask) => {
                sum += t;
                out.records
                    .push(EvalRecord::evaluate(&s.id, method, stage, postproc, &s.mask, &mask, t)?);
            }
            None => {
                out.records.push(skipped_record(&s.id, method, stage, postproc));
                out.skipped.push(SkippedArm {
                    image_id: s.id.clone(),
                    method: method.into(),
                    stage: stage.into(),
                    postproc,
                    reason: format!("{} pixels above the exact-inference cap", s.mask.pixels().len()),
                });
            }
        }
    }
    out.timings.push(ArmTiming {
        method: method.into(),
        stage: stage.into(),
        postproc,
        wall_s,
        record_sum_s: sum,
    });
    Ok(())
}

pub fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| {
        (&a.method, &a.stage, &a.image_id, a.postproc).cmp(&(&b.method, &b.stage, &b.image_id, b.postproc))
    });
}

/// `results.csv` contents under the configured timing mode.
pub fn results_csv(records: &[EvalRecord], timing: TimingMode) -> String {
    match timing {
        TimingMode::Record => write_eval_csv(records),
        TimingMode::Separate => {
            let zeroed: Vec<EvalRecord> = records
                .iter()
                .map(|r| EvalRecord {
                    runtime_s: 0.0,
                    ..r.clone()
                })
                .collect();
            write_eval_csv(&zeroed)
        }
    }
}

fn runtimes_csv(records: &[EvalRecord]) -> String {
    let mut s = String::from("image_id,method,stage,postproc,runtime_s\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{},{:.6}", r.image_id, r.method, r.stage, r.postproc, r.runtime_s);
    }
    s
}

fn timings_csv(timings: &[ArmTiming]) -> String {
    let mut s = String::from("method,stage,postproc,wall_s,record_sum_s\n");
    for t in timings {
        let _ = writeln!(s, "{},{},{},{:.6},{:.6}", t.method, t.stage, t.postproc, t.wall_s, t.record_sum_s);
    }
    s
}

fn skipped_csv(skipped: &[SkippedArm]) -> String {
    let mut s = String::from("image_id,method,stage,postproc,status,reason\n");
    for k in skipped {
        let _ = writeln!(s, "{},{},{},{},SKIPPED,{}", k.image_id, k.method, k.stage, k.postproc, k.reason);
    }
    s
}

fn write(path: PathBuf, text: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, text).at(path)
}

/// Notes attached to every report about parameters that were chosen
/// rather than measured.
pub fn report_flags(cfg: &ExperimentConfig) -> Vec<String> {
    let c = &cfg.crf;
    vec![format!(
        "crf parameters are untuned defaults: w_appearance={}, w_smoothness={}, theta_alpha={}, theta_beta={}, theta_gamma={}, iterations={}",
        c.w_appearance, c.w_smoothness, c.theta_alpha, c.theta_beta, c.theta_gamma, c.iterations
    )]
}

#[derive(Serialize)]
struct ReportDocument<'a> {
    report: &'a ComparisonReport,
    timings: &'a [ArmTiming],
    skipped: usize,
    flags: Vec<String>,
}

/// Writes `report.csv`, `comparisons.csv` and the plots for a set of
/// records.
pub fn write_report(records: &[EvalRecord], dir: &Path) -> Result<ComparisonReport> {
    let report = ComparisonReport::from_records(records)?;
    fs::create_dir_all(dir).at(dir)?;
    write(dir.join("report.csv"), report.to_csv())?;
    write(dir.join("comparisons.csv"), report.comparisons_csv())?;
    report_plots(records, &dir.join("plots"))?;
    Ok(report)
}

pub struct ExperimentOutcome {
    pub report: ComparisonReport,
    /// Records with measured runtimes, sorted.
    pub records: Vec<EvalRecord>,
    pub timings: Vec<ArmTiming>,
    pub skipped: Vec<SkippedArm>,
    pub output_dir: PathBuf,
}

/// Runs the full protocol. On failure whatever was evaluated so far is
/// flushed to `results.csv` and a `FAILED` marker holds the error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).at(&out)?;
    let _ = fs::remove_file(out.join(FAILED_MARKER));
    write(out.join("config.snapshot.json"), serde_json::to_string_pretty(cfg)?)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    let mut acc = StageOutput::default();
    match pool.install(|| run_stages(cfg, &out, &mut acc)) {
        Ok(()) => {}
        Err(e) => {
            sort_records(&mut acc.records);
            let _ = fs::write(out.join("results.csv"), results_csv(&acc.records, cfg.timing));
            let _ = fs::write(out.join(FAILED_MARKER), format!("{e}\n"));
            return Err(e);
        }
    }
    let StageOutput {
        mut records,
        timings,
        skipped,
    } = acc;
    sort_records(&mut records);
    write(out.join("results.csv"), results_csv(&records, cfg.timing))?;
    write(out.join("runtimes.csv"), runtimes_csv(&records))?;
    write(out.join("arm_timings.csv"), timings_csv(&timings))?;
    write(out.join("skipped.csv"), skipped_csv(&skipped))?;
    let report = write_report(&records, &out)?;
    let doc = ReportDocument {
        report: &report,
        timings: &timings,
        skipped: skipped.len(),
        flags: report_flags(cfg),
    };
    write(out.join("report.json"), serde_json::to_string_pretty(&doc)?)?;
    if !skipped.is_empty() {
        warn!("{} crf evaluations skipped (image above the pixel cap)", skipped.len());
    }
    Ok(ExperimentOutcome {
        report,
        records,
        timings,
        skipped,
        output_dir: out,
    })
}

fn in_stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| CliError::Stage {
        stage: name.into(),
        source: Box::new(e),
    })
}

fn run_stages(cfg: &ExperimentConfig, out: &Path, acc: &mut StageOutput) -> Result<()> {
    let folds = in_stage("load", prepare_folds(cfg))?;
    let ckpt = out.join("checkpoints");
    let train_masks: Vec<BinaryMask> = folds.train.iter().map(|s| s.mask.clone()).collect();
    info!("training post-dae on {} masks", train_masks.len());
    let dae = in_stage("train-dae", train_dae_stage(cfg, &train_masks, Some(&ckpt.join("dae"))))?;

    for method in &cfg.methods {
        let stages = match method.as_str() {
            "unet" => in_stage("train-unet", train_unet_stage(cfg, &folds, Some(&ckpt.join("unet"))))?,
            "rf" => vec![in_stage("train-rf", train_rf_stage(cfg, &folds, Some(&ckpt.join("rf"))))?],
            other => return Err(CliError::Config(format!("unknown method {other:?}"))),
        };
        for stage in &stages {
            info!("evaluating {}", stage.stage);
            let o = in_stage(&stage.stage, evaluate_stage(cfg, stage, &dae, &folds.test))?;
            acc.records.extend(o.records);
            acc.timings.extend(o.timings);
            acc.skipped.extend(o.skipped);
        }
    }
    Ok(())
}
