//! Binary masks and the operations the degradation model is built from.

mod components;
mod degrade;
mod morphology;
mod shapes;

pub use components::{boundary, boundary_mask, connected_components, Labeling};
pub use degrade::{border_label_swap, degrade, DegradationConfig, OpFamily};
pub use morphology::{close, dilate, erode, open, StructuringElement, ElementShape};
pub use shapes::{rasterize_shape, ShapeKind, ShapeMode, ShapeSpec};

use crate::error::{Error, Result};

/// JSRT pixel spacing (0.175 mm) after downsampling 2048 -> 1024.
pub const DEFAULT_SPACING_MM: f64 = 0.175 * 2.0;

/// A 2-D boolean grid, row-major, `true` is foreground.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    pixels: Vec<bool>,
    spacing: f64,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, false)
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        assert!(height >= 1 && width >= 1, "mask must be at least 1x1");
        Self {
            height,
            width,
            pixels: vec![value; height * width],
            spacing: DEFAULT_SPACING_MM,
        }
    }

    pub fn from_vec(height: usize, width: usize, pixels: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 || pixels.len() != height * width {
            return Err(Error::DimensionMismatch {
                expected: (height, width),
                found: (pixels.len() / width.max(1), width),
            });
        }
        Ok(Self {
            height,
            width,
            pixels,
            spacing: DEFAULT_SPACING_MM,
        })
    }

    /// Builds a mask from rows of `0`/`1` (anything non-zero is foreground).
    pub fn from_rows(rows: &[&[u8]]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let pixels = rows
            .iter()
            .flat_map(|r| {
                assert_eq!(r.len(), width, "ragged rows");
                r.iter().map(|&v| v != 0)
            })
            .collect();
        Self::from_vec(height, width, pixels).expect("non-empty rows")
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::new(height, width);
        for r in 0..height {
            for c in 0..width {
                m.pixels[r * width + c] = f(r, c);
            }
        }
        m
    }

    pub fn with_spacing(mut self, spacing: f64) -> Self {
        assert!(spacing > 0.0, "spacing must be positive");
        self.spacing = spacing;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn pixels(&self) -> &[bool] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.pixels[row * self.width + col]
    }

    /// Signed lookup; anything outside the grid reads as background.
    #[inline]
    pub fn get_or_bg(&self, row: isize, col: isize) -> bool {
        if row < 0 || col < 0 || row as usize >= self.height || col as usize >= self.width {
            false
        } else {
            self.pixels[row as usize * self.width + col as usize]
        }
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.pixels.iter().any(|&p| p)
    }

    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        out.pixels.iter_mut().for_each(|p| *p = !*p);
        out
    }

    pub fn same_dims(&self, other: &BinaryMask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    pub fn and(&self, other: &BinaryMask) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryMask) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    fn zip_with(&self, other: &BinaryMask, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.same_dims(other)?;
        let mut out = self.clone();
        for (o, &b) in out.pixels.iter_mut().zip(&other.pixels) {
            *o = f(*o, b);
        }
        Ok(out)
    }

    /// `true` when every foreground pixel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .pixels
                .iter()
                .zip(&other.pixels)
                .all(|(&a, &b)| !a || b)
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count() as f64 / self.pixels.len() as f64
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &p)| p)
            .map(move |(i, _)| (i / w, i % w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complement_is_involution() {
        let m = BinaryMask::from_rows(&[&[1, 0, 0], &[0, 1, 1]]);
        assert_eq!(m.complement().complement(), m);
        assert_eq!(m.complement().count(), 3);
    }

    #[test]
    fn rejects_wrong_pixel_count() {
        assert!(BinaryMask::from_vec(2, 2, vec![true; 3]).is_err());
    }

    #[test]
    fn out_of_bounds_reads_background() {
        let m = BinaryMask::filled(2, 2, true);
        assert!(!m.get_or_bg(-1, 0));
        assert!(!m.get_or_bg(0, 2));
        assert!(m.get_or_bg(1, 1));
    }
}
