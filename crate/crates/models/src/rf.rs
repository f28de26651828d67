//! Pixel-wise random-forest segmentation from patch intensity statistics
//! and Haralick texture features.

use std::fs;
use std::path::Path;

use postdae_core::seed::rng_for;
use postdae_core::{BinaryMask, GrayImage, ProbabilityMap};
use postdae_nn::checkpoint::sha256_hex;
use postdae_nn::CheckpointError;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::forest::{FeatureMatrix, ForestConfig, PixelClassifier, RandomForest};
use crate::glcm::{FeatureExtractor, GlcmConfig};

pub const RF_KIND: &str = "random-forest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfConfig {
    pub glcm: GlcmConfig,
    /// Training pixels drawn per image, half from each class.
    pub samples_per_image: usize,
    pub forest: ForestConfig,
    pub seed: u64,
}

impl Default for RfConfig {
    fn default() -> Self {
        Self {
            glcm: GlcmConfig::default(),
            samples_per_image: 2000,
            forest: ForestConfig::default(),
            seed: 0,
        }
    }
}

impl RfConfig {
    pub fn validate(&self) -> Result<()> {
        self.glcm.validate()?;
        self.forest.validate()?;
        if self.samples_per_image < 2 {
            return Err(ModelError::InvalidConfig("samples_per_image must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RfModel {
    pub config: RfConfig,
    pub forest: RandomForest,
}

#[derive(Debug, Serialize, Deserialize)]
struct RfManifest {
    kind: String,
    learner_file: String,
    sha256: String,
    feature_len: usize,
}

/// Up to `per_class` pixel indices of each class, drawn without
/// replacement.
fn balanced_pixels(mask: &BinaryMask, per_class: usize, seed: u64, image: usize) -> Vec<usize> {
    let (fg, bg): (Vec<usize>, Vec<usize>) = (0..mask.pixels().len()).partition(|&i| mask.pixels()[i]);
    let mut rng = rng_for(seed, &[image as u64]);
    let mut out = Vec::with_capacity(2 * per_class);
    for pool in [fg, bg] {
        let k = per_class.min(pool.len());
        let mut picked: Vec<usize> = sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]).collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    out
}

pub fn train_rf(images: &[GrayImage], masks: &[BinaryMask], cfg: &RfConfig) -> Result<RfModel> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if images.len() != masks.len() {
        return Err(ModelError::InvalidConfig(format!(
            "{} images but {} masks",
            images.len(),
            masks.len()
        )));
    }
    let mut x = FeatureMatrix::new(cfg.glcm.feature_len());
    let mut y = Vec::new();
    let mut row = vec![0.0; cfg.glcm.feature_len()];
    for (k, (im, m)) in images.iter().zip(masks).enumerate() {
        if im.dims() != m.dims() {
            return Err(ModelError::DimensionMismatch {
                expected: im.dims(),
                found: m.dims(),
            });
        }
        let ex = FeatureExtractor::new(&cfg.glcm, im)?;
        let w = im.width;
        for i in balanced_pixels(m, cfg.samples_per_image / 2, cfg.seed, k) {
            ex.features_at(i / w, i % w, &mut row);
            x.push_row(&row);
            y.push(m.pixels()[i]);
        }
    }
    let mut forest = RandomForest::new(cfg.forest.clone());
    forest.fit(&x, &y)?;
    Ok(RfModel {
        config: cfg.clone(),
        forest,
    })
}

impl RfModel {
    pub fn predict(&self, image: &GrayImage) -> Result<ProbabilityMap> {
        if !self.forest.is_trained() {
            return Err(ModelError::UntrainedModel);
        }
        let ex = FeatureExtractor::new(&self.config.glcm, image)?;
        let (h, w) = image.dims();
        let mut row = vec![0.0; ex.feature_len()];
        let mut values = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                ex.features_at(r, c, &mut row);
                values.push(self.forest.predict_proba(&row)? as f32);
            }
        }
        Ok(ProbabilityMap::new(h, w, values)?)
    }

    /// Writes `rf_config.json`, the learner blob and a manifest holding the
    /// blob's SHA-256.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("rf_config.json"), serde_json::to_string_pretty(&self.config)?)?;
        let blob = serde_json::to_vec(&self.forest)?;
        let manifest = RfManifest {
            kind: RF_KIND.into(),
            learner_file: "learner.json".into(),
            sha256: sha256_hex(&blob),
            feature_len: self.config.glcm.feature_len(),
        };
        fs::write(dir.join(&manifest.learner_file), &blob)?;
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: RfManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if manifest.kind != RF_KIND {
            return Err(CheckpointError::WrongKind {
                expected: RF_KIND.into(),
                found: manifest.kind,
            }
            .into());
        }
        let config: RfConfig = serde_json::from_str(&fs::read_to_string(dir.join("rf_config.json"))?)?;
        let blob = fs::read(dir.join(&manifest.learner_file))?;
        if sha256_hex(&blob) != manifest.sha256 {
            return Err(CheckpointError::HashMismatch {
                name: manifest.learner_file,
            }
            .into());
        }
        let forest: RandomForest = serde_json::from_slice(&blob)?;
        Ok(Self { config, forest })
    }
}
