//! Two-lung synthetic dataset: each mask is a pair of smoothly deformed
//! ellipses, each image a noisy radiograph-like rendering in which the
//! lungs carry a darker, finer texture than the surrounding tissue. A few
//! lung-textured distractor patches outside the lungs give pixel-wise
//! classifiers something to get wrong.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, DatasetSource, ManifestEntry, Sample};
use super::png_io::{write_gray_png, write_mask_png};
use crate::error::{Error, Result};
use crate::mask::{connected_components, BinaryMask, DEFAULT_SPACING_MM};
use crate::raster::GrayImage;
use crate::seed::rng_for;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            count: 500,
            size: 128,
            seed: 0,
        }
    }
}

/// Radial profile of one lung: an ellipse whose radius is modulated by a
/// few low-frequency harmonics.
struct Lobe {
    center: (f64, f64),
    semi: (f64, f64),
    tilt: f64,
    harmonics: [(f64, f64); 3],
    /// Flattening of the lower edge (diaphragm dome).
    base_cut: f64,
}

impl Lobe {
    fn sample<R: Rng>(rng: &mut R, size: f64, col_center: f64) -> Self {
        let mut harmonics = [(0.0, 0.0); 3];
        for h in harmonics.iter_mut() {
            *h = (rng.random_range(-0.07..0.07), rng.random_range(0.0..2.0 * PI));
        }
        Lobe {
            center: (
                size * rng.random_range(0.46..0.54),
                size * (col_center + rng.random_range(-0.025..0.025)),
            ),
            semi: (
                size * rng.random_range(0.25..0.33),
                size * rng.random_range(0.10..0.14),
            ),
            tilt: rng.random_range(-0.15..0.15),
            harmonics,
            base_cut: rng.random_range(0.75..0.95),
        }
    }

    fn contains(&self, r: f64, c: f64) -> bool {
        let (dr, dc) = (r - self.center.0, c - self.center.1);
        let (s, co) = self.tilt.sin_cos();
        let u = (dr * co + dc * s) / self.semi.0;
        let v = (-dr * s + dc * co) / self.semi.1;
        if u > self.base_cut {
            return false;
        }
        let theta = v.atan2(u);
        let radius = 1.0
            + self
                .harmonics
                .iter()
                .enumerate()
                .map(|(k, &(a, ph))| a * ((k + 2) as f64 * theta + ph).cos())
                .sum::<f64>();
        (u * u + v * v).sqrt() <= radius
    }
}

fn lung_mask<R: Rng>(rng: &mut R, size: usize) -> BinaryMask {
    let s = size as f64;
    loop {
        let left = Lobe::sample(rng, s, 0.29);
        let right = Lobe::sample(rng, s, 0.71);
        let m = BinaryMask::from_fn(size, size, |r, c| {
            let (rf, cf) = (r as f64, c as f64);
            left.contains(rf, cf) || right.contains(rf, cf)
        });
        let frac = m.foreground_fraction();
        let touches_edge = (0..size).any(|i| m.get(0, i) || m.get(size - 1, i) || m.get(i, 0) || m.get(i, size - 1));
        if connected_components(&m).count == 2 && (0.05..=0.6).contains(&frac) && !touches_edge {
            return m;
        }
    }
}

/// Value noise: uniform samples on a coarse lattice, bilinearly upsampled.
fn value_noise<R: Rng>(rng: &mut R, size: usize, cell: usize) -> Vec<f32> {
    let n = size / cell + 2;
    let lattice: Vec<f32> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; size * size];
    for r in 0..size {
        let fr = r as f32 / cell as f32;
        let (r0, tr) = (fr.floor() as usize, fr.fract());
        for c in 0..size {
            let fc = c as f32 / cell as f32;
            let (c0, tc) = (fc.floor() as usize, fc.fract());
            let at = |i: usize, j: usize| lattice[i * n + j];
            let top = at(r0, c0) * (1.0 - tc) + at(r0, c0 + 1) * tc;
            let bot = at(r0 + 1, c0) * (1.0 - tc) + at(r0 + 1, c0 + 1) * tc;
            out[r * size + c] = top * (1.0 - tr) + bot * tr;
        }
    }
    out
}

fn render_image<R: Rng>(rng: &mut R, mask: &BinaryMask) -> GrayImage {
    let size = mask.height();
    let coarse = value_noise(rng, size, (size / 8).max(2));
    let mid = value_noise(rng, size, (size / 32).max(2));
    // lung-textured distractor patches outside the lungs
    let n_distractors = rng.random_range(0..=3);
    let mut distract = BinaryMask::new(size, size);
    for _ in 0..n_distractors {
        let (cr, cc) = (
            rng.random_range(0.1..0.9) * size as f64,
            rng.random_range(0.1..0.9) * size as f64,
        );
        let rad = rng.random_range(0.02..0.06) * size as f64;
        for r in 0..size {
            for c in 0..size {
                let (dr, dc) = (r as f64 - cr, c as f64 - cc);
                if dr * dr + dc * dc <= rad * rad && !mask.get(r, c) {
                    distract.set(r, c, true);
                }
            }
        }
    }
    let values = (0..size * size)
        .map(|i| {
            let (r, c) = (i / size, i % size);
            let fine: f32 = rng.random_range(-1.0..1.0);
            let v = if mask.get(r, c) || distract.get(r, c) {
                0.30 + 0.06 * mid[i] + 0.10 * fine
            } else {
                // brighter towards the mediastinum and the image bottom
                let centre = 1.0 - ((c as f32 / size as f32) - 0.5).abs() * 2.0;
                0.55 + 0.12 * centre + 0.10 * (r as f32 / size as f32) + 0.10 * coarse[i] + 0.05 * fine
            };
            v.clamp(0.0, 1.0)
        })
        .collect();
    GrayImage::new(size, size, values).expect("square")
}

fn check_params(count: usize, size: usize) -> Result<()> {
    if count == 0 || size == 0 || !size.is_multiple_of(32) {
        return Err(Error::InvalidConfig(format!(
            "synthetic dataset needs count >= 1 and size divisible by 32, got {count}, {size}"
        )));
    }
    Ok(())
}

/// In-memory generation; sample `i` depends only on `(seed, i)`.
pub fn generate_synthetic(count: usize, size: usize, seed: u64) -> Result<Vec<Sample>> {
    check_params(count, size)?;
    let spacing = DEFAULT_SPACING_MM * 1024.0 / size as f64;
    Ok((0..count)
        .map(|i| {
            let mut rng = rng_for(seed, &[i as u64]);
            let mask = lung_mask(&mut rng, size).with_spacing(spacing);
            let image = render_image(&mut rng, &mask);
            Sample {
                id: format!("syn{i:05}"),
                image,
                mask,
            }
        })
        .collect())
}

/// Writes `images/<id>.png`, `masks/<id>.png` and `manifest.json` under
/// `root`.
pub fn write_synthetic_dataset(root: &Path, params: &SyntheticParams) -> Result<DatasetManifest> {
    let samples = generate_synthetic(params.count, params.size, params.seed)?;
    std::fs::create_dir_all(root.join("images"))?;
    std::fs::create_dir_all(root.join("masks"))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let image_path = Path::new("images").join(format!("{}.png", s.id));
        let mask_path = Path::new("masks").join(format!("{}.png", s.id));
        write_gray_png(&root.join(&image_path), &s.image)?;
        write_mask_png(&root.join(&mask_path), &s.mask)?;
        entries.push(ManifestEntry {
            image_id: s.id.clone(),
            image_path,
            mask_path,
            provenance: Some(format!("synthetic seed={} index={}", params.seed, s.id)),
        });
    }
    let spacing = samples[0].mask.spacing();
    let manifest = DatasetManifest::new(DatasetSource::Synthetic, spacing, entries)?;
    manifest.save(&root.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_have_two_lungs_and_sane_coverage() {
        let samples = generate_synthetic(40, 128, 3).unwrap();
        for s in &samples {
            assert_eq!(connected_components(&s.mask).count, 2);
            let f = s.mask.foreground_fraction();
            assert!((0.05..=0.6).contains(&f), "fraction {f}");
            assert!(s.image.values.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(3, 64, 11).unwrap();
        let b = generate_synthetic(3, 64, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mask, y.mask);
            assert_eq!(x.image, y.image);
        }
    }

    #[test]
    fn lungs_are_darker_than_surroundings() {
        let s = &generate_synthetic(1, 64, 0).unwrap()[0];
        let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0, 0.0, 0);
        for (i, &v) in s.image.values.iter().enumerate() {
            if s.mask.pixels()[i] {
                inside += v;
                n_in += 1;
            } else {
                outside += v;
                n_out += 1;
            }
        }
        assert!(inside / (n_in as f32) + 0.15 < outside / (n_out as f32));
    }

    #[test]
    fn rejects_bad_size() {
        assert!(generate_synthetic(2, 100, 0).is_err());
    }

    #[test]
    fn written_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let params = SyntheticParams {
            count: 3,
            size: 32,
            seed: 1,
        };
        let m = write_synthetic_dataset(dir.path(), &params).unwrap();
        m.check_files(dir.path()).unwrap();
        let loaded = m.load_samples(dir.path()).unwrap();
        let fresh = generate_synthetic(3, 32, 1).unwrap();
        assert_eq!(loaded[0].mask.pixels(), fresh[0].mask.pixels());
    }
}
