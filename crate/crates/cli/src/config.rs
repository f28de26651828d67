//! Experiment configuration: one JSON document, every field overridable
//! with `--set dotted.path=value`.

use std::path::{Path, PathBuf};

use postdae_core::data::{dataset_root, SplitSpec, SyntheticParams};
use postdae_core::mask::DegradationConfig;
use postdae_core::seed::derive_seed;
use postdae_models::{DaeSpec, DaeTrainConfig, DenseCrfParams, RfConfig, UnetSpec, UnetTrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, IoContext, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct DatasetConfig {
    /// Manifest path, relative to `root`. When absent a synthetic dataset
    /// is generated in memory from `synthetic`.
    pub manifest: Option<PathBuf>,
    /// Dataset root; falls back to `DATASET_ROOT`, then the working
    /// directory.
    pub root: Option<PathBuf>,
    pub synthetic: SyntheticParams,
    /// Resize images and masks to this side length after loading.
    pub size: Option<usize>,
}


impl DatasetConfig {
    pub fn resolved_root(&self) -> PathBuf {
        dataset_root(self.root.as_deref())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaeSection {
    pub spec: DaeSpec,
    pub train: DaeTrainConfig,
    pub threshold: ThresholdValue,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnetSection {
    pub spec: UnetSpec,
    pub train: UnetTrainConfig,
}

/// Binarisation threshold, `p >= t` is foreground.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ThresholdValue(pub f64);

impl Default for ThresholdValue {
    fn default() -> Self {
        Self(0.5)
    }
}

/// What goes into the `runtime_s` column of `results.csv`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimingMode {
    /// Measured wall-clock seconds per record.
    #[default]
    Record,
    /// Zero in `results.csv` (so reruns are byte-identical); measured
    /// times go to `runtimes.csv`.
    Separate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub split: SplitSpec,
    pub dae: DaeSection,
    pub unet: UnetSection,
    pub rf: RfConfig,
    pub crf: DenseCrfParams,
    /// Which predictors to run.
    pub methods: Vec<String>,
    /// Threshold applied to predictor probabilities.
    pub predict_threshold: ThresholdValue,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub timing: TimingMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            split: SplitSpec::default(),
            dae: DaeSection::default(),
            unet: UnetSection::default(),
            rf: RfConfig::default(),
            crf: DenseCrfParams::default(),
            methods: vec!["unet".into(), "rf".into()],
            predict_threshold: ThresholdValue::default(),
            output_dir: PathBuf::from("runs/experiment"),
            seed: 0,
            workers: 1,
            timing: TimingMode::Record,
        }
    }
}

pub const METHODS: [&str; 2] = ["unet", "rf"];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_json(&text)
    }

    /// Loads `path` (or the defaults) and applies `KEY=VALUE` overrides.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        base.with_overrides(overrides)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.dae.spec.validate()?;
        self.dae.train.validate()?;
        self.unet.spec.validate()?;
        self.unet.train.validate()?;
        self.rf.validate()?;
        self.crf.validate()?;
        let size = self.image_size();
        if size != self.dae.spec.input_size {
            return Err(CliError::Config(format!(
                "dae.spec.input_size {} differs from the dataset image size {size}",
                self.dae.spec.input_size
            )));
        }
        if self.methods.iter().any(|m| m == "unet") && size != self.unet.spec.input_size {
            return Err(CliError::Config(format!(
                "unet.spec.input_size {} differs from the dataset image size {size}",
                self.unet.spec.input_size
            )));
        }
        if let Some(m) = self.methods.iter().find(|m| !METHODS.contains(&m.as_str())) {
            return Err(CliError::Config(format!("unknown method {m:?}; expected unet or rf")));
        }
        for t in [self.dae.threshold.0, self.predict_threshold.0] {
            if !(t > 0.0 && t < 1.0) {
                return Err(CliError::Config(format!("threshold {t} outside (0, 1)")));
            }
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be >= 1".into()));
        }
        if let Some(m) = &self.dataset.manifest {
            let p = self.dataset.resolved_root().join(m);
            if !p.exists() {
                return Err(CliError::Config(format!("manifest {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Side length of the images the models see.
    pub fn image_size(&self) -> usize {
        match (self.dataset.size, &self.dataset.manifest) {
            (Some(s), _) => s,
            (None, None) => self.dataset.synthetic.size,
            // stored size is only known after loading; trust the models
            (None, Some(_)) => self.dae.spec.input_size,
        }
    }

    /// Module seeds combined with the global seed.
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            seed: derive_seed(self.seed, &[1, self.split.seed]),
            ..self.split.clone()
        }
    }

    pub fn dae_train(&self) -> DaeTrainConfig {
        DaeTrainConfig {
            seed: derive_seed(self.seed, &[2, self.dae.train.seed]),
            degradation: DegradationConfig {
                seed: derive_seed(self.seed, &[9, self.dae.train.degradation.seed]),
                ..self.dae.train.degradation.clone()
            },
            ..self.dae.train.clone()
        }
    }

    pub fn dae_init_seed(&self) -> u64 {
        derive_seed(self.seed, &[3, self.dae.train.seed])
    }

    pub fn unet_train(&self) -> UnetTrainConfig {
        UnetTrainConfig {
            seed: derive_seed(self.seed, &[4, self.unet.train.seed]),
            ..self.unet.train.clone()
        }
    }

    pub fn unet_init_seed(&self) -> u64 {
        derive_seed(self.seed, &[5, self.unet.train.seed])
    }

    pub fn rf_config(&self) -> RfConfig {
        let mut rf = self.rf.clone();
        rf.seed = derive_seed(self.seed, &[6, self.rf.seed]);
        rf.forest.seed = derive_seed(self.seed, &[7, self.rf.forest.seed]);
        rf
    }

    pub fn synthetic_seed(&self) -> u64 {
        derive_seed(self.seed, &[8, self.dataset.synthetic.seed])
    }
}

/// Applies one `a.b.c=value` override. The value is parsed as JSON when
/// possible and taken as a string otherwise. Only existing keys may be set.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
    let new: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("{path:?}: {key:?} is not inside an object")))?;
        if !obj.contains_key(*key) {
            return Err(CliError::Config(format!("{path:?}: unknown key {key:?}")));
        }
        let slot = obj.get_mut(*key).expect("checked");
        if i + 1 == keys.len() {
            *slot = new;
            return Ok(());
        }
        if slot.is_null() {
            return Err(CliError::Config(format!("{path:?}: {key:?} is unset and has no sub-keys")));
        }
        cur = slot;
    }
    Ok(())
}
