use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Per-pixel foreground probability, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: (height, width),
                found: (values.len() / width.max(1), width),
            });
        }
        if let Some(&bad) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidProbability(bad as f64));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("constant in [0,1]")
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            height: mask.height(),
            width: mask.width(),
            values: mask.pixels().iter().map(|&p| p as u8 as f32).collect(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Foreground where `p >= threshold`.
    pub fn threshold(&self, threshold: f32) -> BinaryMask {
        BinaryMask::from_vec(
            self.height,
            self.width,
            self.values.iter().map(|&p| p >= threshold).collect(),
        )
        .expect("dims consistent")
    }
}

/// Gray-level image with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: (height, width),
                found: (values.len() / width.max(1), width),
            });
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }
}
