//! Fully connected two-label CRF with Gaussian appearance and smoothness
//! kernels and Potts compatibility, solved by exact synchronous
//! mean-field updates. Cost is quadratic in the pixel count, so inputs
//! above a configurable cap are refused.

use postdae_core::{BinaryMask, GrayImage, ProbabilityMap};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenseCrfParams {
    /// Spatial scale of the appearance kernel, pixels.
    pub theta_alpha: f64,
    /// Intensity scale of the appearance kernel, 8-bit units.
    pub theta_beta: f64,
    /// Spatial scale of the smoothness kernel, pixels.
    pub theta_gamma: f64,
    pub w_appearance: f64,
    pub w_smoothness: f64,
    pub iterations: usize,
    /// Largest pixel count accepted for exact inference.
    pub max_pixels: usize,
    /// Probability clamp used when building unaries.
    pub unary_epsilon: f64,
}

impl Default for DenseCrfParams {
    fn default() -> Self {
        Self {
            theta_alpha: 17.0,
            theta_beta: 3.0,
            theta_gamma: 3.0,
            w_appearance: 1.0,
            w_smoothness: 1.0,
            iterations: 5,
            max_pixels: 128 * 128,
            unary_epsilon: 1e-6,
        }
    }
}

impl DenseCrfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta_alpha > 0.0 && self.theta_beta > 0.0 && self.theta_gamma > 0.0) {
            return Err(ModelError::InvalidConfig("CRF kernel widths must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(ModelError::InvalidConfig("CRF needs at least one iteration".into()));
        }
        if self.w_appearance < 0.0 || self.w_smoothness < 0.0 {
            return Err(ModelError::InvalidConfig("CRF kernel weights must be non-negative".into()));
        }
        if !(self.unary_epsilon > 0.0 && self.unary_epsilon < 0.5) {
            return Err(ModelError::InvalidConfig("unary_epsilon must lie in (0, 0.5)".into()));
        }
        Ok(())
    }

    /// Pairwise kernel between pixels at `pi`, `pj` with 8-bit intensities
    /// `ii`, `ij`.
    pub fn kernel(&self, pi: (usize, usize), pj: (usize, usize), ii: f64, ij: f64) -> f64 {
        let dr = pi.0 as f64 - pj.0 as f64;
        let dc = pi.1 as f64 - pj.1 as f64;
        let d2 = dr * dr + dc * dc;
        let di = ii - ij;
        self.w_appearance
            * (-d2 / (2.0 * self.theta_alpha.powi(2)) - di * di / (2.0 * self.theta_beta.powi(2))).exp()
            + self.w_smoothness * (-d2 / (2.0 * self.theta_gamma.powi(2))).exp()
    }
}

/// Per-pixel label costs (negative log-probabilities).
#[derive(Clone, Debug, PartialEq)]
pub struct UnaryField {
    pub height: usize,
    pub width: usize,
    pub background: Vec<f64>,
    pub foreground: Vec<f64>,
}

impl UnaryField {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Label with the lower cost; ties go to foreground.
    pub fn argmax(&self) -> BinaryMask {
        let px = self
            .foreground
            .iter()
            .zip(&self.background)
            .map(|(f, b)| f <= b)
            .collect();
        BinaryMask::from_vec(self.height, self.width, px).expect("consistent dims")
    }
}

pub fn unary_from_prob(prob: &ProbabilityMap, epsilon: f64) -> UnaryField {
    let clamp = |p: f64| p.clamp(epsilon, 1.0 - epsilon);
    let (foreground, background) = prob
        .values
        .iter()
        .map(|&p| {
            let p = p as f64;
            (-clamp(p).ln(), -clamp(1.0 - p).ln())
        })
        .unzip();
    UnaryField {
        height: prob.height,
        width: prob.width,
        background,
        foreground,
    }
}

/// Intensity in 8-bit units: `round(255·v)`.
pub fn intensity_8bit(v: f32) -> f64 {
    (v.clamp(0.0, 1.0) as f64 * 255.0).round()
}

fn softmax2(cost_bg: f64, cost_fg: f64) -> [f64; 2] {
    let m = cost_bg.min(cost_fg);
    let (eb, ef) = ((m - cost_bg).exp(), (m - cost_fg).exp());
    let z = eb + ef;
    [eb / z, ef / z]
}

/// Mean-field beliefs `[Q(bg), Q(fg)]` per pixel after the configured
/// number of iterations. `observe` sees the beliefs after every
/// iteration.
pub fn meanfield(
    image: &GrayImage,
    unary: &UnaryField,
    params: &DenseCrfParams,
    mut observe: impl FnMut(usize, &[[f64; 2]]),
) -> Result<Vec<[f64; 2]>> {
    params.validate()?;
    if image.dims() != unary.dims() {
        return Err(ModelError::DimensionMismatch {
            expected: image.dims(),
            found: unary.dims(),
        });
    }
    let (h, w) = image.dims();
    let n = h * w;
    if n > params.max_pixels {
        return Err(ModelError::ImageTooLarge {
            pixels: n,
            cap: params.max_pixels,
        });
    }
    // Kernel factors: spatial terms separate into row and column tables,
    // the intensity term is tabulated over 8-bit differences.
    let side = h.max(w);
    let table = |theta: f64| -> Vec<f64> {
        (0..side).map(|d| (-((d * d) as f64) / (2.0 * theta * theta)).exp()).collect()
    };
    let (ta, tg) = (table(params.theta_alpha), table(params.theta_gamma));
    let ti: Vec<f64> = (0..256)
        .map(|d| params.w_appearance * (-((d * d) as f64) / (2.0 * params.theta_beta.powi(2))).exp())
        .collect();
    let level: Vec<usize> = image.values.iter().map(|&v| intensity_8bit(v) as usize).collect();
    let ws = params.w_smoothness;
    let k = |i: usize, j: usize| -> f64 {
        let (ri, ci, rj, cj) = (i / w, i % w, j / w, j % w);
        let (dr, dc) = (ri.abs_diff(rj), ci.abs_diff(cj));
        ta[dr] * ta[dc] * ti[level[i].abs_diff(level[j])] + ws * tg[dr] * tg[dc]
    };

    let mut q: Vec<[f64; 2]> = (0..n)
        .map(|i| softmax2(unary.background[i], unary.foreground[i]))
        .collect();
    // Σ_j k(i, j): with two labels, the background message is this total
    // minus the foreground message.
    let mut total = vec![0.0; n];
    let mut msg_fg = vec![0.0; n];
    for it in 0..params.iterations {
        msg_fg.iter_mut().for_each(|m| *m = 0.0);
        for i in 0..n {
            let (qi, mut acc, mut acc_total) = (q[i][1], 0.0, 0.0);
            for j in i + 1..n {
                let kij = k(i, j);
                acc += kij * q[j][1];
                msg_fg[j] += kij * qi;
                if it == 0 {
                    acc_total += kij;
                    total[j] += kij;
                }
            }
            msg_fg[i] += acc;
            if it == 0 {
                total[i] += acc_total;
            }
        }
        for i in 0..n {
            let msg_bg = total[i] - msg_fg[i];
            // Potts: a label pays for the mass its neighbours put on the other.
            q[i] = softmax2(unary.background[i] + msg_fg[i], unary.foreground[i] + msg_bg);
        }
        observe(it + 1, &q);
    }
    Ok(q)
}

/// Mean-field inference followed by a per-pixel argmax (ties go to
/// foreground).
pub fn run_crf_meanfield(image: &GrayImage, unary: &UnaryField, params: &DenseCrfParams) -> Result<BinaryMask> {
    let q = meanfield(image, unary, params, |_, _| {})?;
    let px = q.iter().map(|b| b[1] >= b[0]).collect();
    Ok(BinaryMask::from_vec(unary.height, unary.width, px)?)
}

/// Convenience wrapper: unaries from `prob`, then inference.
pub fn crf_postprocess(image: &GrayImage, prob: &ProbabilityMap, params: &DenseCrfParams) -> Result<BinaryMask> {
    run_crf_meanfield(image, &unary_from_prob(prob, params.unary_epsilon), params)
}
