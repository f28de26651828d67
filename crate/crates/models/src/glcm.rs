//! Gray-level co-occurrence matrices and the 13 Haralick texture
//! statistics, plus dense per-pixel feature extraction.

use postdae_core::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

pub const HARALICK_COUNT: usize = 13;

pub const HARALICK_NAMES: [&str; HARALICK_COUNT] = [
    "energy",
    "contrast",
    "correlation",
    "variance",
    "inverse_difference_moment",
    "sum_average",
    "sum_variance",
    "sum_entropy",
    "entropy",
    "difference_variance",
    "difference_entropy",
    "info_correlation_1",
    "info_correlation_2",
];

/// A displacement of `distance` pixels at `angle_deg` (0 = right, 90 = up).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlcmOffset {
    pub distance: usize,
    pub angle_deg: f64,
}

impl GlcmOffset {
    pub fn new(distance: usize, angle_deg: f64) -> Self {
        Self { distance, angle_deg }
    }

    /// `(d_row, d_col)`; rows grow downwards, so 90° moves up.
    pub fn delta(&self) -> (isize, isize) {
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let d = self.distance as f64;
        ((-d * s).round() as isize, (d * c).round() as isize)
    }

    pub fn reach(&self) -> usize {
        let (dr, dc) = self.delta();
        dr.unsigned_abs().max(dc.unsigned_abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlcmConfig {
    pub patch_size: usize,
    pub gray_levels: usize,
    pub offsets: Vec<GlcmOffset>,
}

impl Default for GlcmConfig {
    fn default() -> Self {
        Self {
            patch_size: 15,
            gray_levels: 32,
            offsets: [0.0, 45.0, 90.0, 135.0].iter().map(|&a| GlcmOffset::new(1, a)).collect(),
        }
    }
}

impl GlcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 3 || self.patch_size.is_multiple_of(2) {
            return Err(ModelError::InvalidConfig(format!(
                "patch_size must be odd and >= 3, got {}",
                self.patch_size
            )));
        }
        if !(2..=u16::MAX as usize).contains(&self.gray_levels) {
            return Err(ModelError::InvalidConfig("gray_levels must be >= 2".into()));
        }
        if self.offsets.is_empty() || self.offsets.iter().any(|o| o.distance == 0) {
            return Err(ModelError::InvalidConfig("offsets must be non-empty with distance >= 1".into()));
        }
        if let Some(o) = self.offsets.iter().find(|o| o.reach() >= self.patch_size) {
            return Err(ModelError::DegeneratePatch {
                size: self.patch_size,
                reach: o.reach(),
            });
        }
        Ok(())
    }

    /// Feature vector length: patch mean and std, then 13 per offset.
    pub fn feature_len(&self) -> usize {
        2 + HARALICK_COUNT * self.offsets.len()
    }
}

/// Gray levels in `0..levels`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedPatch {
    pub height: usize,
    pub width: usize,
    pub levels: usize,
    pub data: Vec<u16>,
}

impl QuantizedPatch {
    pub fn new(height: usize, width: usize, levels: usize, data: Vec<u16>) -> Result<Self> {
        if data.len() != height * width || data.iter().any(|&v| v as usize >= levels) {
            return Err(ModelError::InvalidConfig(
                "patch size or gray level out of range".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            levels,
            data,
        })
    }
}

pub fn quantize(value: f32, levels: usize) -> u16 {
    ((value.clamp(0.0, 1.0) * levels as f32) as usize).min(levels - 1) as u16
}

/// Normalised, symmetric co-occurrence matrix, `levels × levels` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Glcm {
    pub levels: usize,
    pub p: Vec<f64>,
}

impl Glcm {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.levels + j]
    }
}

pub fn glcm(patch: &QuantizedPatch, offset: GlcmOffset) -> Result<Glcm> {
    let (dr, dc) = offset.delta();
    let k = patch.levels;
    let mut counts = vec![0u32; k * k];
    let mut pairs = 0u64;
    for r in 0..patch.height as isize {
        for c in 0..patch.width as isize {
            let (r2, c2) = (r + dr, c + dc);
            if r2 < 0 || c2 < 0 || r2 >= patch.height as isize || c2 >= patch.width as isize {
                continue;
            }
            let a = patch.data[r as usize * patch.width + c as usize] as usize;
            let b = patch.data[r2 as usize * patch.width + c2 as usize] as usize;
            counts[a * k + b] += 1;
            counts[b * k + a] += 1;
            pairs += 2;
        }
    }
    if pairs == 0 {
        return Err(ModelError::DegeneratePatch {
            size: patch.height.min(patch.width),
            reach: offset.reach(),
        });
    }
    Ok(Glcm {
        levels: k,
        p: counts.iter().map(|&n| n as f64 / pairs as f64).collect(),
    })
}

fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// Haralick statistics from the non-zero entries `(i, j, p)` of a
/// normalised matrix. Zero probabilities contribute nothing to entropies.
fn haralick_sparse(levels: usize, entries: &[(usize, usize, f64)], out: &mut [f64]) {
    let mut px = vec![0.0; levels];
    let mut py = vec![0.0; levels];
    let mut sum = vec![0.0; 2 * levels - 1];
    let mut diff = vec![0.0; levels];
    let (mut energy, mut contrast, mut idm, mut entropy, mut ij) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(i, j, p) in entries {
        px[i] += p;
        py[j] += p;
        sum[i + j] += p;
        diff[i.abs_diff(j)] += p;
        let d = i as f64 - j as f64;
        energy += p * p;
        contrast += d * d * p;
        idm += p / (1.0 + d * d);
        entropy -= plogp(p);
        ij += (i * j) as f64 * p;
    }
    let moments = |m: &[f64]| -> (f64, f64) {
        let mu: f64 = m.iter().enumerate().map(|(k, &v)| k as f64 * v).sum();
        let var: f64 = m.iter().enumerate().map(|(k, &v)| (k as f64 - mu).powi(2) * v).sum();
        (mu, var)
    };
    let (mux, varx) = moments(&px);
    let (muy, vary) = moments(&py);
    let sd = (varx * vary).sqrt();
    let correlation = if sd > 0.0 { (ij - mux * muy) / sd } else { 0.0 };
    let variance: f64 = entries.iter().map(|&(i, _, p)| (i as f64 - mux).powi(2) * p).sum();
    let (sum_avg, _) = moments(&sum);
    let sum_var: f64 = sum.iter().enumerate().map(|(k, &v)| (k as f64 - sum_avg).powi(2) * v).sum();
    let sum_entropy: f64 = -sum.iter().map(|&v| plogp(v)).sum::<f64>();
    let (_, diff_var) = moments(&diff);
    let diff_entropy: f64 = -diff.iter().map(|&v| plogp(v)).sum::<f64>();
    let hx: f64 = -px.iter().map(|&v| plogp(v)).sum::<f64>();
    let hy: f64 = -py.iter().map(|&v| plogp(v)).sum::<f64>();
    let hxy1: f64 = -entries
        .iter()
        .map(|&(i, j, p)| p * (px[i] * py[j]).ln())
        .sum::<f64>();
    // Σ px(i)·py(j)·log(px(i)·py(j)) over the outer product splits into HX + HY.
    let hxy2 = hx + hy;
    let hmax = hx.max(hy);
    let imc1 = if hmax > 0.0 { (entropy - hxy1) / hmax } else { 0.0 };
    let imc2 = (1.0 - (-2.0 * (hxy2 - entropy)).exp()).max(0.0).sqrt();
    out.copy_from_slice(&[
        energy,
        contrast,
        correlation,
        variance,
        idm,
        sum_avg,
        sum_var,
        sum_entropy,
        entropy,
        diff_var,
        diff_entropy,
        imc1,
        imc2,
    ]);
}

/// The 13 statistics in [`HARALICK_NAMES`] order.
pub fn haralick_features(m: &Glcm) -> [f64; HARALICK_COUNT] {
    let k = m.levels;
    let entries: Vec<(usize, usize, f64)> = m
        .p
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(idx, &p)| (idx / k, idx % k, p))
        .collect();
    let mut out = [0.0; HARALICK_COUNT];
    haralick_sparse(k, &entries, &mut out);
    out
}

/// Per-pixel texture features for a whole image. Patches centred on each
/// pixel replicate the nearest border pixel outside the image.
pub struct FeatureExtractor {
    cfg: GlcmConfig,
    height: usize,
    width: usize,
    levels_img: Vec<u16>,
    values: Vec<f32>,
}

impl FeatureExtractor {
    pub fn new(cfg: &GlcmConfig, image: &GrayImage) -> Result<Self> {
        cfg.validate()?;
        let (height, width) = image.dims();
        Ok(Self {
            cfg: cfg.clone(),
            height,
            width,
            levels_img: image.values.iter().map(|&v| quantize(v, cfg.gray_levels)).collect(),
            values: image.values.clone(),
        })
    }

    pub fn feature_len(&self) -> usize {
        self.cfg.feature_len()
    }

    #[inline]
    fn clamp_index(&self, r: isize, c: isize) -> usize {
        let r = r.clamp(0, self.height as isize - 1) as usize;
        let c = c.clamp(0, self.width as isize - 1) as usize;
        r * self.width + c
    }

    /// Writes the feature vector of pixel `(row, col)` into `out`.
    pub fn features_at(&self, row: usize, col: usize, out: &mut [f32]) {
        let k = self.cfg.gray_levels;
        let s = self.cfg.patch_size as isize;
        let half = s / 2;
        let (r0, c0) = (row as isize - half, col as isize - half);
        let mut patch = Vec::with_capacity((s * s) as usize);
        let (mut sum, mut sq) = (0.0f64, 0.0f64);
        for r in 0..s {
            for c in 0..s {
                let idx = self.clamp_index(r0 + r, c0 + c);
                let v = self.values[idx] as f64;
                sum += v;
                sq += v * v;
                patch.push(self.levels_img[idx]);
            }
        }
        let n = (s * s) as f64;
        let mean = sum / n;
        out[0] = mean as f32;
        out[1] = (sq / n - mean * mean).max(0.0).sqrt() as f32;
        let mut counts = vec![0u32; k * k];
        let mut touched: Vec<usize> = Vec::new();
        let mut entries = Vec::new();
        let mut stats = [0.0; HARALICK_COUNT];
        for (o, off) in self.cfg.offsets.iter().enumerate() {
            let (dr, dc) = off.delta();
            let mut pairs = 0u32;
            for r in 0..s {
                for c in 0..s {
                    let (r2, c2) = (r + dr, c + dc);
                    if r2 < 0 || c2 < 0 || r2 >= s || c2 >= s {
                        continue;
                    }
                    let a = patch[(r * s + c) as usize] as usize;
                    let b = patch[(r2 * s + c2) as usize] as usize;
                    for idx in [a * k + b, b * k + a] {
                        if counts[idx] == 0 {
                            touched.push(idx);
                        }
                        counts[idx] += 1;
                    }
                    pairs += 2;
                }
            }
            touched.sort_unstable();
            entries.clear();
            for &idx in &touched {
                entries.push((idx / k, idx % k, counts[idx] as f64 / pairs as f64));
                counts[idx] = 0;
            }
            touched.clear();
            haralick_sparse(k, &entries, &mut stats);
            for (dst, &v) in out[2 + o * HARALICK_COUNT..2 + (o + 1) * HARALICK_COUNT].iter_mut().zip(&stats) {
                *dst = v as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patch(rows: &[&[u16]], levels: usize) -> QuantizedPatch {
        let h = rows.len();
        let w = rows[0].len();
        QuantizedPatch::new(h, w, levels, rows.concat()).unwrap()
    }

    #[test]
    fn offsets_map_to_expected_deltas() {
        let d: Vec<_> = GlcmConfig::default().offsets.iter().map(|o| o.delta()).collect();
        assert_eq!(d, vec![(0, 1), (-1, 1), (-1, 0), (-1, -1)]);
    }

    #[test]
    fn constant_patch_has_single_entry() {
        let m = glcm(&patch(&[&[3, 3], &[3, 3]], 4), GlcmOffset::new(1, 0.0)).unwrap();
        assert_eq!(m.get(3, 3), 1.0);
        assert_eq!(m.p.iter().filter(|&&v| v > 0.0).count(), 1);
        let f = haralick_features(&m);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[1], 0.0);
        assert_eq!(f[8], 0.0);
    }

    #[test]
    fn checkerboard_mass_is_off_diagonal() {
        let m = glcm(&patch(&[&[0, 1, 0], &[1, 0, 1], &[0, 1, 0]], 2), GlcmOffset::new(1, 0.0)).unwrap();
        assert_eq!(m.get(0, 1), 0.5);
        assert_eq!(m.get(1, 0), 0.5);
        assert_eq!(m.get(0, 0) + m.get(1, 1), 0.0);
    }

    #[test]
    fn too_small_patch_is_degenerate() {
        let p = patch(&[&[1]], 2);
        assert!(matches!(
            glcm(&p, GlcmOffset::new(1, 0.0)),
            Err(ModelError::DegeneratePatch { .. })
        ));
        let cfg = GlcmConfig {
            patch_size: 3,
            offsets: vec![GlcmOffset::new(3, 0.0)],
            ..GlcmConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn uniform_matrix_energy() {
        let k = 5;
        let m = Glcm {
            levels: k,
            p: vec![1.0 / (k * k) as f64; k * k],
        };
        assert!((haralick_features(&m)[0] - 1.0 / 25.0).abs() < 1e-15);
    }

    #[test]
    fn extractor_matches_explicit_patch_glcm() {
        let n = 12;
        let values: Vec<f32> = (0..n * n).map(|i| ((i * 37 % 101) as f32) / 100.0).collect();
        let image = GrayImage::new(n, n, values).unwrap();
        let cfg = GlcmConfig {
            patch_size: 5,
            gray_levels: 8,
            ..GlcmConfig::default()
        };
        let ex = FeatureExtractor::new(&cfg, &image).unwrap();
        let mut f = vec![0.0; cfg.feature_len()];
        let (row, col) = (1, 6);
        ex.features_at(row, col, &mut f);
        let mut data = Vec::new();
        for r in 0..5isize {
            for c in 0..5isize {
                let rr = (row as isize - 2 + r).clamp(0, n as isize - 1) as usize;
                let cc = (col as isize - 2 + c).clamp(0, n as isize - 1) as usize;
                data.push(quantize(image.get(rr, cc), 8));
            }
        }
        let p = QuantizedPatch::new(5, 5, 8, data).unwrap();
        for (o, off) in cfg.offsets.iter().enumerate() {
            let want = haralick_features(&glcm(&p, *off).unwrap());
            for (t, w) in want.iter().enumerate() {
                let got = f[2 + o * HARALICK_COUNT + t] as f64;
                assert!((got - w).abs() <= 1e-5 * w.abs().max(1.0), "offset {o} feature {t}");
            }
        }
    }

    proptest! {
        #[test]
        fn glcm_is_symmetric_and_normalised(
            data in proptest::collection::vec(0u16..6, 36),
            angle in prop_oneof![Just(0.0), Just(45.0), Just(90.0), Just(135.0)],
        ) {
            let p = QuantizedPatch::new(6, 6, 6, data).unwrap();
            let m = glcm(&p, GlcmOffset::new(1, angle)).unwrap();
            prop_assert!((m.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
        }

        #[test]
        fn level_permutation_preserves_energy_and_entropy(
            data in proptest::collection::vec(0u16..5, 25),
            perm_seed in 0u64..120,
        ) {
            let mut perm: Vec<u16> = (0..5).collect();
            let mut s = perm_seed;
            for i in (1..5).rev() {
                perm.swap(i, (s % (i as u64 + 1)) as usize);
                s /= i as u64 + 1;
            }
            let a = QuantizedPatch::new(5, 5, 5, data.clone()).unwrap();
            let b = QuantizedPatch::new(5, 5, 5, data.iter().map(|&v| perm[v as usize]).collect()).unwrap();
            let fa = haralick_features(&glcm(&a, GlcmOffset::new(1, 0.0)).unwrap());
            let fb = haralick_features(&glcm(&b, GlcmOffset::new(1, 0.0)).unwrap());
            prop_assert!((fa[0] - fb[0]).abs() < 1e-12);
            prop_assert!((fa[8] - fb[8]).abs() < 1e-12);
        }

        #[test]
        fn features_are_finite(data in proptest::collection::vec(0u16..4, 9)) {
            let p = QuantizedPatch::new(3, 3, 4, data).unwrap();
            for angle in [0.0, 45.0, 90.0, 135.0] {
                let f = haralick_features(&glcm(&p, GlcmOffset::new(1, angle)).unwrap());
                prop_assert!(f.iter().all(|v| v.is_finite()));
            }
        }
    }
}
