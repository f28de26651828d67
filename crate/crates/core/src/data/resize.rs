use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::raster::GrayImage;

fn square(height: usize, width: usize) -> Result<usize> {
    if height != width {
        return Err(Error::NotSquare { height, width });
    }
    Ok(height)
}

/// Resizes a square image. Integer downsampling factors use box (area)
/// averaging; anything else uses bilinear interpolation with pixel-centre
/// alignment. The two coincide for a factor of two.
pub fn resize_image(image: &GrayImage, size: usize) -> Result<GrayImage> {
    let src = square(image.height, image.width)?;
    if src == size {
        return Ok(image.clone());
    }
    if src > size && src % size == 0 {
        let f = src / size;
        let norm = (f * f) as f32;
        let mut out = vec![0.0f32; size * size];
        for r in 0..size {
            for c in 0..size {
                let mut acc = 0.0f32;
                for dr in 0..f {
                    let row = &image.values[(r * f + dr) * src + c * f..][..f];
                    acc += row.iter().sum::<f32>();
                }
                out[r * size + c] = acc / norm;
            }
        }
        return GrayImage::new(size, size, out);
    }
    let scale = src as f64 / size as f64;
    let coord = |d: usize| -> (usize, usize, f32) {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(src - 1);
        (lo, hi, (s - lo as f64) as f32)
    };
    let mut out = vec![0.0f32; size * size];
    for r in 0..size {
        let (r0, r1, fr) = coord(r);
        for c in 0..size {
            let (c0, c1, fc) = coord(c);
            let top = image.get(r0, c0) * (1.0 - fc) + image.get(r0, c1) * fc;
            let bot = image.get(r1, c0) * (1.0 - fc) + image.get(r1, c1) * fc;
            out[r * size + c] = top * (1.0 - fr) + bot * fr;
        }
    }
    GrayImage::new(size, size, out)
}

/// Nearest-neighbour resize of a square mask; spacing scales with the
/// resolution change.
pub fn resize_mask(mask: &BinaryMask, size: usize) -> Result<BinaryMask> {
    let src = square(mask.height(), mask.width())?;
    let scale = src as f64 / size as f64;
    let pick = |d: usize| (((d as f64 + 0.5) * scale).floor() as usize).min(src - 1);
    Ok(BinaryMask::from_fn(size, size, |r, c| mask.get(pick(r), pick(c)))
        .with_spacing(mask.spacing() * scale))
}
