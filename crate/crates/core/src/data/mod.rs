//! Dataset ingestion: JSRT raw radiographs, PNG masks, manifests, splits
//! and a synthetic two-lung dataset for desk-scale runs.

mod jsrt;
mod manifest;
mod png_io;
mod resize;
mod split;
mod synthetic;

pub use jsrt::{
    decode_jsrt_raw, encode_raw_values, load_jsrt_image, raw_values, JsrtOptions, JSRT_MAX_VALUE,
    JSRT_SIDE, JSRT_SPACING_MM,
};
pub use manifest::{dataset_root, DatasetManifest, DatasetSource, ManifestEntry, Sample};
pub use png_io::{
    decode_gray_png, read_gray_png, read_mask_png, write_gray_png, write_mask_png,
    write_probability_png,
};
pub use resize::{resize_image, resize_mask};
pub use split::{split, SplitSpec, Splits};
pub use synthetic::{generate_synthetic, write_synthetic_dataset, SyntheticParams};
