use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::raster::GrayImage;

pub const JSRT_SIDE: usize = 2048;
pub const JSRT_MAX_VALUE: u16 = 4095;
pub const JSRT_SPACING_MM: f64 = 0.175;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JsrtOptions {
    /// Map `v -> 4095 - v` so lung fields come out dark.
    pub invert: bool,
    /// Clamp values above 4095 (with a warning) instead of failing.
    pub clamp: bool,
}

impl Default for JsrtOptions {
    fn default() -> Self {
        Self {
            invert: true,
            clamp: false,
        }
    }
}

/// Big-endian 16-bit samples of a headerless raster.
pub fn raw_values(bytes: &[u8]) -> Vec<u16> {
    bytes
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect()
}

pub fn encode_raw_values(values: &[u16]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_be_bytes()).collect()
}

/// Decodes a square headerless 12-bit-in-16 raster of side `side`.
pub fn decode_jsrt_raw(bytes: &[u8], side: usize, opts: JsrtOptions) -> Result<GrayImage> {
    let expected = (side * side * 2) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::BadFileSize {
            expected,
            found: bytes.len() as u64,
        });
    }
    let mut values = raw_values(bytes);
    let mut clamped = 0usize;
    for (index, v) in values.iter_mut().enumerate() {
        if *v > JSRT_MAX_VALUE {
            if !opts.clamp {
                return Err(Error::ValueOutOfRange { index, value: *v });
            }
            *v = JSRT_MAX_VALUE;
            clamped += 1;
        }
    }
    if clamped > 0 {
        warn!("clamped {clamped} raw values above {JSRT_MAX_VALUE}");
    }
    let scale = JSRT_MAX_VALUE as f32;
    let pixels = values
        .into_iter()
        .map(|v| {
            let v = if opts.invert { JSRT_MAX_VALUE - v } else { v };
            v as f32 / scale
        })
        .collect();
    GrayImage::new(side, side, pixels)
}

/// Loads a 2048x2048 JSRT `.IMG` file.
pub fn load_jsrt_image(path: &Path, opts: JsrtOptions) -> Result<GrayImage> {
    let meta = std::fs::metadata(path)?;
    let expected = (JSRT_SIDE * JSRT_SIDE * 2) as u64;
    if meta.len() != expected {
        return Err(Error::BadFileSize {
            expected,
            found: meta.len(),
        });
    }
    decode_jsrt_raw(&std::fs::read(path)?, JSRT_SIDE, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_zero_file_inverts_to_white() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("JPCLN001.IMG");
        std::fs::write(&path, vec![0u8; 8_388_608]).unwrap();
        let img = load_jsrt_image(&path, JsrtOptions::default()).unwrap();
        assert_eq!(img.dims(), (2048, 2048));
        assert!(img.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.IMG");
        std::fs::write(&path, vec![0u8; 8_388_607]).unwrap();
        assert!(matches!(
            load_jsrt_image(&path, JsrtOptions::default()),
            Err(Error::BadFileSize { found: 8_388_607, .. })
        ));
    }

    #[test]
    fn big_endian_decode_and_range_check() {
        let bytes = encode_raw_values(&[0, 4095, 2048, 1]);
        assert_eq!(bytes[..4], [0, 0, 0x0F, 0xFF]);
        let img = decode_jsrt_raw(&bytes, 2, JsrtOptions { invert: false, clamp: false }).unwrap();
        assert_eq!(img.values[1], 1.0);
        let bad = encode_raw_values(&[0, 5000, 0, 0]);
        assert!(matches!(
            decode_jsrt_raw(&bad, 2, JsrtOptions { invert: false, clamp: false }),
            Err(Error::ValueOutOfRange { index: 1, value: 5000 })
        ));
        let ok = decode_jsrt_raw(&bad, 2, JsrtOptions { invert: false, clamp: true }).unwrap();
        assert_eq!(ok.values[1], 1.0);
    }

    #[test]
    fn raw_round_trip_is_lossless() {
        let vals: Vec<u16> = (0..64).map(|i| (i * 61) as u16 % 4096).collect();
        assert_eq!(raw_values(&encode_raw_values(&vals)), vals);
    }
}
