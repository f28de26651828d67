//! Segmentation models: the mask autoencoder used as a shape prior, the
//! UNet and random-forest baselines, and dense-CRF post-processing.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod crf;
pub mod dae;
pub mod error;
pub mod forest;
pub mod glcm;
pub mod rf;
pub mod unet;

pub use crf::{crf_postprocess, run_crf_meanfield, unary_from_prob, DenseCrfParams, UnaryField};
pub use dae::{train_dae, Dae, DaeSpec, DaeTrainConfig};
pub use error::{ModelError, Result};
pub use forest::{FeatureMatrix, ForestConfig, PixelClassifier, RandomForest};
pub use glcm::{glcm, haralick_features, GlcmConfig, GlcmOffset, QuantizedPatch};
pub use rf::{train_rf, RfConfig, RfModel};
pub use unet::{train_unet, Unet, UnetSnapshot, UnetSpec, UnetTrainConfig, UnetTrainOutcome};
