use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use postdae_core::data::{
    read_gray_png, read_mask_png, write_mask_png, write_probability_png, write_synthetic_dataset, JsrtOptions,
};
use postdae_core::metrics::{read_eval_csv, write_eval_csv, EvalRecord, PostProc};
use postdae_core::ProbabilityMap;
use postdae_models::{crf_postprocess, Dae, RfModel, Unet};
use postdae_nn::Checkpoint;

use postdae_cli::dataset::{import_jsrt, JsrtImport};
use postdae_cli::pipeline::{self, Predictor};
use postdae_cli::{run_experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "postdae", version, about = "Learned shape-prior post-processing for segmentation masks")]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set dae.train.epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Unet,
    Rf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arm {
    PostDae,
    Crf,
}

#[derive(Subcommand)]
enum Command {
    /// Convert JSRT rasters and companion masks to a PNG dataset.
    ImportJsrt {
        /// Directory of `.IMG` files.
        #[arg(long)]
        raw: PathBuf,
        /// Mask directory; repeat for masks that are united (left and right lung).
        #[arg(long = "masks", required = true)]
        masks: Vec<PathBuf>,
        #[arg(long, default_value_t = 1024)]
        size: usize,
        #[arg(long)]
        dest: PathBuf,
        #[arg(long)]
        no_invert: bool,
        /// Clamp raw values above 4095 instead of failing.
        #[arg(long)]
        clamp: bool,
    },
    /// Write the synthetic dataset described by `dataset.synthetic`.
    GenSynthetic {
        #[arg(long)]
        dest: PathBuf,
    },
    /// Train the post-processing autoencoder on training-fold masks.
    TrainDae,
    /// Train the UNet baseline with periodic checkpoints.
    TrainUnet,
    /// Train the random-forest baseline.
    TrainRf,
    /// Predict the test fold with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        kind: ModelKind,
    },
    /// Post-process a directory of predictions.
    Postprocess {
        #[arg(long, value_enum)]
        arm: Arm,
        /// Masks (post-dae) or probability maps (crf), one PNG per image.
        #[arg(long)]
        input: PathBuf,
        /// Autoencoder checkpoint, for post-dae.
        #[arg(long)]
        dae: Option<PathBuf>,
        /// Intensity images matched by file name, for crf.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Score predicted masks against reference masks.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value = "external")]
        method: String,
        #[arg(long, default_value = "final")]
        stage: String,
        #[arg(long, default_value = "none")]
        postproc: PostProc,
        /// mm per pixel of the masks.
        #[arg(long, default_value_t = postdae_core::mask::DEFAULT_SPACING_MM)]
        spacing: f64,
    },
    /// Run the full protocol.
    Experiment,
    /// Summary table and plots from a results CSV.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

fn pngs(dir: &Path) -> anyhow::Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((stem, p));
        }
    }
    out.sort();
    Ok(out)
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = ExperimentConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.output {
        cfg.output_dir = o;
    }
    let out = cfg.output_dir.clone();
    let ckpt = out.join("checkpoints");

    match cli.command {
        Command::ImportJsrt {
            raw,
            masks,
            size,
            dest,
            no_invert,
            clamp,
        } => {
            let m = import_jsrt(&JsrtImport {
                raw_dir: &raw,
                mask_dirs: &masks,
                size,
                output: &dest,
                options: JsrtOptions {
                    invert: !no_invert,
                    clamp,
                },
            })?;
            println!("imported {} images into {}", m.len(), dest.display());
        }
        Command::GenSynthetic { dest } => {
            let mut p = cfg.dataset.synthetic.clone();
            p.seed = cfg.synthetic_seed();
            let m = write_synthetic_dataset(&dest, &p)?;
            println!("wrote {} samples to {}", m.len(), dest.display());
        }
        Command::TrainDae => {
            cfg.validate()?;
            let folds = pipeline::prepare_folds(&cfg)?;
            let masks: Vec<_> = folds.train.into_iter().map(|s| s.mask).collect();
            let dae = pipeline::train_dae_stage(&cfg, &masks, Some(&ckpt.join("dae")))?;
            println!(
                "post-dae trained for {} epochs, final loss {:.5}",
                dae.epoch,
                dae.loss_history.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::TrainUnet => {
            cfg.validate()?;
            let folds = pipeline::prepare_folds(&cfg)?;
            let stages = pipeline::train_unet_stage(&cfg, &folds, Some(&ckpt.join("unet")))?;
            println!("saved {} unet checkpoints under {}", stages.len(), ckpt.join("unet").display());
        }
        Command::TrainRf => {
            cfg.validate()?;
            let folds = pipeline::prepare_folds(&cfg)?;
            pipeline::train_rf_stage(&cfg, &folds, Some(&ckpt.join("rf")))?;
            println!("saved random forest to {}", ckpt.join("rf").display());
        }
        Command::Predict { model, kind } => {
            let predictor = match kind {
                ModelKind::Unet => Predictor::Unet(Box::new(Unet::<f32>::from_checkpoint(&Checkpoint::load(&model)?)?)),
                ModelKind::Rf => Predictor::Rf(Box::new(RfModel::load(&model)?)),
            };
            let folds = pipeline::prepare_folds(&cfg)?;
            let dir = out.join("predictions");
            fs::create_dir_all(dir.join("masks"))?;
            fs::create_dir_all(dir.join("probabilities"))?;
            for s in &folds.test {
                let p = predictor.predict(&s.image)?;
                write_probability_png(&dir.join("probabilities").join(format!("{}.png", s.id)), &p)?;
                let m = p.threshold(cfg.predict_threshold.0 as f32);
                write_mask_png(&dir.join("masks").join(format!("{}.png", s.id)), &m)?;
            }
            println!("predicted {} test images into {}", folds.test.len(), dir.display());
        }
        Command::Postprocess {
            arm,
            input,
            dae,
            images,
        } => {
            let dest = out.join("postprocessed");
            fs::create_dir_all(&dest)?;
            let files = pngs(&input)?;
            match arm {
                Arm::PostDae => {
                    let Some(dae) = dae else { bail!("--dae is required for post-dae") };
                    let model = Dae::<f32>::from_checkpoint(&Checkpoint::load(&dae)?)?;
                    for (id, path) in &files {
                        let m = model.postprocess(&read_mask_png(path)?, cfg.dae.threshold.0)?;
                        write_mask_png(&dest.join(format!("{id}.png")), &m)?;
                    }
                }
                Arm::Crf => {
                    let Some(images) = images else { bail!("--images is required for crf") };
                    for (id, path) in &files {
                        let g = read_gray_png(path)?;
                        let prob = ProbabilityMap::new(g.height, g.width, g.values)?;
                        let image = read_gray_png(&images.join(format!("{id}.png")))?;
                        let m = crf_postprocess(&image, &prob, &cfg.crf)?;
                        write_mask_png(&dest.join(format!("{id}.png")), &m)?;
                    }
                }
            }
            println!("post-processed {} files into {}", files.len(), dest.display());
        }
        Command::Evaluate {
            pred,
            truth,
            method,
            stage,
            postproc,
            spacing,
        } => {
            let mut records = Vec::new();
            for (id, path) in pngs(&pred)? {
                let t = read_mask_png(&truth.join(format!("{id}.png")))?.with_spacing(spacing);
                let p = read_mask_png(&path)?;
                records.push(EvalRecord::evaluate(&id, &method, &stage, postproc, &t, &p, 0.0)?);
            }
            if records.is_empty() {
                bail!("no PNG predictions in {}", pred.display());
            }
            fs::create_dir_all(&out)?;
            fs::write(out.join("results.csv"), write_eval_csv(&records))?;
            let mean = records.iter().map(|r| r.dice).sum::<f64>() / records.len() as f64;
            println!("{} images, mean dice {mean:.4}", records.len());
        }
        Command::Experiment => {
            let o = run_experiment(&cfg)?;
            for a in &o.report.arms {
                println!(
                    "{:<18} {:<9} dice {:.4} ± {:.4}  hausdorff {:.2} ± {:.2} mm",
                    a.stage, a.postproc, a.dice.mean, a.dice.std, a.hausdorff_mm.mean, a.hausdorff_mm.std
                );
            }
            info!("outputs in {}", o.output_dir.display());
        }
        Command::Report { results } => {
            let text = fs::read_to_string(&results).with_context(|| format!("reading {}", results.display()))?;
            let records = read_eval_csv(&text).map_err(|e| postdae_cli::CliError::Schema(e.to_string()))?;
            let report = pipeline::write_report(&records, &out)?;
            println!("{} arms, {} comparisons, written to {}", report.arms.len(), report.comparisons.len(), out.display());
        }
    }
    Ok(())
}
