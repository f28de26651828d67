//! The corruption model used to synthesise erroneous segmentations from
//! clean masks: random shapes, morphology with variable kernels, and label
//! flips near the mask border.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::morphology::{close, dilate, erode, open, ElementShape, StructuringElement};
use super::shapes::{rasterize_shape, ShapeKind, ShapeMode, ShapeSpec};
use super::{boundary_mask, BinaryMask};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpFamily {
    Shapes,
    Morphology,
    BorderSwap,
}

/// Flat parameterisation of the degradation function. Serialises as a
/// single JSON object; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    pub shape_count_min: usize,
    pub shape_count_max: usize,
    /// Shape size as a fraction of `min(height, width)`.
    pub shape_size_min: f64,
    pub shape_size_max: f64,
    /// Odd kernel sizes in pixels; size `k` is an element of radius `(k-1)/2`.
    pub morph_kernel_min: usize,
    pub morph_kernel_max: usize,
    pub border_swap_probability: f64,
    pub border_band: usize,
    pub p_shapes: f64,
    pub p_morphology: f64,
    pub p_border_swap: f64,
    /// Probability that a sampled shape is added rather than removed.
    pub p_add: f64,
    pub line_thickness: f64,
    /// How many distinct families one call applies (sampled by weight
    /// without replacement).
    pub families_per_call: usize,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            shape_count_min: 1,
            shape_count_max: 3,
            shape_size_min: 0.05,
            shape_size_max: 0.30,
            morph_kernel_min: 3,
            morph_kernel_max: 15,
            border_swap_probability: 0.3,
            border_band: 3,
            p_shapes: 1.0 / 3.0,
            p_morphology: 1.0 / 3.0,
            p_border_swap: 1.0 / 3.0,
            p_add: 0.5,
            line_thickness: 3.0,
            families_per_call: 1,
            seed: 0,
        }
    }
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidConfig(msg.to_string()))
    }
}

fn unit(p: f64) -> bool {
    (0.0..=1.0).contains(&p)
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        check(
            self.shape_count_min <= self.shape_count_max,
            "shape_count_min > shape_count_max",
        )?;
        check(
            self.shape_size_min > 0.0 && self.shape_size_min <= self.shape_size_max,
            "shape size interval must satisfy 0 < min <= max",
        )?;
        check(
            self.morph_kernel_min >= 3 && self.morph_kernel_min <= self.morph_kernel_max,
            "morph kernel interval must satisfy 3 <= min <= max",
        )?;
        check(
            self.kernel_sizes().next().is_some(),
            "morph kernel interval contains no odd size",
        )?;
        check(unit(self.border_swap_probability), "border_swap_probability outside [0,1]")?;
        check(self.border_band >= 1, "border_band must be >= 1")?;
        check(unit(self.p_add), "p_add outside [0,1]")?;
        check(self.line_thickness >= 1.0, "line_thickness must be >= 1")?;
        let w = self.weights();
        check(w.iter().all(|&(_, p)| unit(p)), "family weight outside [0,1]")?;
        let total: f64 = w.iter().map(|&(_, p)| p).sum();
        check((total - 1.0).abs() < 1e-9, "family weights must sum to 1")?;
        check(
            (1..=3).contains(&self.families_per_call),
            "families_per_call must be in 1..=3",
        )?;
        check(
            w.iter().filter(|&&(_, p)| p > 0.0).count() >= self.families_per_call,
            "fewer families with positive weight than families_per_call",
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    fn weights(&self) -> [(OpFamily, f64); 3] {
        [
            (OpFamily::Shapes, self.p_shapes),
            (OpFamily::Morphology, self.p_morphology),
            (OpFamily::BorderSwap, self.p_border_swap),
        ]
    }

    fn kernel_sizes(&self) -> impl Iterator<Item = usize> {
        (self.morph_kernel_min..=self.morph_kernel_max).filter(|k| k % 2 == 1)
    }

    /// Families a single call will apply, in application order.
    pub fn sample_families<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<OpFamily> {
        let mut pool: Vec<(OpFamily, f64)> = self.weights().to_vec();
        let mut picked = Vec::with_capacity(self.families_per_call);
        for _ in 0..self.families_per_call {
            let total: f64 = pool.iter().map(|&(_, p)| p).sum();
            let mut u = rng.random::<f64>() * total;
            let mut idx = pool.len() - 1;
            for (i, &(_, p)) in pool.iter().enumerate() {
                if p > 0.0 && u < p {
                    idx = i;
                    break;
                }
                u -= p;
            }
            // guard against rounding landing on a zero-weight tail entry
            while pool[idx].1 <= 0.0 {
                idx -= 1;
            }
            picked.push(pool.remove(idx).0);
        }
        picked
    }
}

/// Flips each pixel within Chebyshev distance `band` of the foreground
/// boundary independently with probability `p`.
pub fn border_label_swap<R: Rng + ?Sized>(
    mask: &BinaryMask,
    band: usize,
    p: f64,
    rng: &mut R,
) -> BinaryMask {
    assert!(band >= 1, "band must be >= 1");
    assert!(unit(p), "probability must be in [0,1]");
    let ring = dilate(&boundary_mask(mask), &StructuringElement::square(band));
    let mut out = mask.clone();
    for (r, c) in ring.foreground() {
        if rng.random::<f64>() < p {
            out.set(r, c, !mask.get(r, c));
        }
    }
    out
}

fn random_shapes<R: Rng + ?Sized>(
    mask: &BinaryMask,
    cfg: &DegradationConfig,
    rng: &mut R,
) -> BinaryMask {
    let (h, w) = mask.dims();
    let scale = h.min(w) as f64;
    let n = rng.random_range(cfg.shape_count_min..=cfg.shape_count_max);
    let mut out = mask.clone();
    for _ in 0..n {
        let size = (rng.random_range(cfg.shape_size_min..=cfg.shape_size_max) * scale).max(1.0);
        let half = size / 2.0;
        let kind_idx = rng.random_range(0..4u8);
        let mode = if rng.random_bool(cfg.p_add) {
            ShapeMode::Add
        } else {
            ShapeMode::Remove
        };
        // removals are anchored on foreground so that they actually bite
        let fg: Vec<(usize, usize)> = if mode == ShapeMode::Remove {
            out.foreground().collect()
        } else {
            Vec::new()
        };
        let center = if fg.is_empty() {
            (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64)
        } else {
            let (r, c) = fg[rng.random_range(0..fg.len())];
            (r as f64, c as f64)
        };
        let angle = rng.random_range(0.0..PI);
        let aspect = rng.random_range(0.3..=1.0);
        let kind = match kind_idx {
            0 => ShapeKind::Circle {
                center,
                radius: half.max(0.5),
            },
            1 => ShapeKind::Ellipse {
                center,
                semi_axes: (half.max(0.5), (half * aspect).max(0.5)),
                angle,
            },
            2 => {
                let (s, c) = angle.sin_cos();
                ShapeKind::Line {
                    from: (center.0 - half * s, center.1 - half * c),
                    to: (center.0 + half * s, center.1 + half * c),
                    thickness: cfg.line_thickness,
                }
            }
            _ => ShapeKind::Rectangle {
                center,
                half_extent: (half.max(0.5), (half * aspect).max(0.5)),
                angle,
            },
        };
        out = rasterize_shape(&ShapeSpec { kind, mode }, &out)
            .expect("sampled shapes are non-degenerate");
    }
    out
}

fn random_morphology<R: Rng + ?Sized>(
    mask: &BinaryMask,
    cfg: &DegradationConfig,
    rng: &mut R,
) -> BinaryMask {
    let sizes: Vec<usize> = cfg.kernel_sizes().collect();
    let k = sizes[rng.random_range(0..sizes.len())];
    let shape = if rng.random_bool(0.5) {
        ElementShape::Disk
    } else {
        ElementShape::Square
    };
    let se = StructuringElement::new(shape, (k - 1) / 2);
    match rng.random_range(0..4u8) {
        0 => erode(mask, &se),
        1 => dilate(mask, &se),
        2 => open(mask, &se),
        _ => close(mask, &se),
    }
}

/// Applies `cfg.families_per_call` corruption families, sampled by weight.
pub fn degrade<R: Rng + ?Sized>(
    mask: &BinaryMask,
    cfg: &DegradationConfig,
    rng: &mut R,
) -> BinaryMask {
    let mut out = mask.clone();
    for family in cfg.sample_families(rng) {
        out = match family {
            OpFamily::Shapes => random_shapes(&out, cfg, rng),
            OpFamily::Morphology => random_morphology(&out, cfg, rng),
            OpFamily::BorderSwap => {
                border_label_swap(&out, cfg.border_band, cfg.border_swap_probability, rng)
            }
        };
    }
    out
}
