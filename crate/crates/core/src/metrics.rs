//! Overlap and boundary-distance metrics for binary segmentations.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{boundary, BinaryMask};
use crate::raster::ProbabilityMap;

/// Default stabiliser for the soft Dice loss.
pub const SOFT_DICE_EPSILON: f64 = 1.0;

/// `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.same_dims(b)?;
    let (mut inter, mut sa, mut sb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.pixels().iter().zip(b.pixels()) {
        inter += (x && y) as usize;
        sa += x as usize;
        sb += y as usize;
    }
    if sa + sb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (sa + sb) as f64)
}

/// `1 - (2 Σ p·t + ε) / (Σ p + Σ t + ε)`.
pub fn soft_dice_loss(pred: &ProbabilityMap, target: &BinaryMask, epsilon: f64) -> Result<f64> {
    check_pair(pred, target)?;
    let p: Vec<f64> = pred.values.iter().map(|&v| v as f64).collect();
    Ok(soft_dice_with_grad(&p, target.pixels(), epsilon, None))
}

/// Loss plus its gradient with respect to every prediction.
pub fn soft_dice_loss_grad(
    pred: &ProbabilityMap,
    target: &BinaryMask,
    epsilon: f64,
) -> Result<(f64, Vec<f64>)> {
    check_pair(pred, target)?;
    let p: Vec<f64> = pred.values.iter().map(|&v| v as f64).collect();
    let mut grad = vec![0.0; p.len()];
    let loss = soft_dice_with_grad(&p, target.pixels(), epsilon, Some(&mut grad));
    Ok((loss, grad))
}

fn check_pair(pred: &ProbabilityMap, target: &BinaryMask) -> Result<()> {
    if pred.dims() != target.dims() {
        return Err(Error::DimensionMismatch {
            expected: target.dims(),
            found: pred.dims(),
        });
    }
    if let Some(&bad) = pred.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidProbability(bad as f64));
    }
    Ok(())
}

/// Slice-level soft Dice used by the training loops. When `grad` is given
/// it receives `dL/dp_i = ((2I + ε) - 2 t_i S) / S²` where
/// `S = Σp + Σt + ε` and `I = Σ p·t`.
pub fn soft_dice_with_grad<T: Float>(
    pred: &[T],
    target: &[bool],
    epsilon: f64,
    grad: Option<&mut [T]>,
) -> T {
    debug_assert_eq!(pred.len(), target.len());
    let eps = T::from(epsilon).unwrap();
    let two = T::from(2.0).unwrap();
    let (mut inter, mut sp, mut st) = (T::zero(), T::zero(), T::zero());
    for (&p, &t) in pred.iter().zip(target) {
        sp = sp + p;
        if t {
            inter = inter + p;
            st = st + T::one();
        }
    }
    let num = two * inter + eps;
    let den = sp + st + eps;
    if let Some(g) = grad {
        let den2 = den * den;
        for (gi, &t) in g.iter_mut().zip(target) {
            let ti = if t { T::one() } else { T::zero() };
            *gi = (num - two * ti * den) / den2;
        }
    }
    T::one() - num / den
}

/// Directed distances from every boundary point of `from` to the nearest
/// boundary point of `to`, via an exact Euclidean distance transform.
fn directed_distances(from: &BinaryMask, to: &BinaryMask) -> Vec<f64> {
    let sq = squared_edt(&boundary_grid(to), to.height(), to.width());
    boundary(from)
        .into_iter()
        .map(|(r, c)| sq[r * from.width() + c].sqrt())
        .collect()
}

fn boundary_grid(mask: &BinaryMask) -> Vec<bool> {
    let mut g = vec![false; mask.height() * mask.width()];
    for (r, c) in boundary(mask) {
        g[r * mask.width() + c] = true;
    }
    g
}

/// Squared distance to the nearest `true` site (separable lower-envelope
/// transform, exact for Euclidean distance).
fn squared_edt(sites: &[bool], h: usize, w: usize) -> Vec<f64> {
    // large enough to lose to any real site, small enough to keep integer sums exact
    const INF: f64 = 1e12;
    let mut grid: Vec<f64> = sites.iter().map(|&s| if s { 0.0 } else { INF }).collect();
    let n = h.max(w);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for c in 0..w {
        for r in 0..h {
            f[r] = grid[r * w + c];
        }
        edt_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for r in 0..h {
            grid[r * w + c] = d[r];
        }
    }
    for r in 0..h {
        f[..w].copy_from_slice(&grid[r * w..(r + 1) * w]);
        edt_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[r * w..(r + 1) * w].copy_from_slice(&d[..w]);
    }
    grid
}

fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            // z[0] is -inf so k never underflows
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, dq_out) in d.iter_mut().enumerate().take(n) {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *dq_out = dq * dq + f[v[k]];
    }
}

fn nonempty_pair(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    a.same_dims(b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Symmetric Hausdorff distance between the boundary point sets, in pixels.
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    nonempty_pair(a, b)?;
    let ab = directed_distances(a, b).into_iter().fold(0.0, f64::max);
    let ba = directed_distances(b, a).into_iter().fold(0.0, f64::max);
    Ok(ab.max(ba))
}

/// 95th-percentile Hausdorff: the larger of the two directed 95th
/// percentiles (linear interpolation between order statistics).
pub fn hausdorff95(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    nonempty_pair(a, b)?;
    let ab = percentile(directed_distances(a, b), 95.0);
    let ba = percentile(directed_distances(b, a), 95.0);
    Ok(ab.max(ba))
}

fn percentile(mut xs: Vec<f64>, q: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q / 100.0 * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    xs[lo] + (xs[hi] - xs[lo]) * (pos - lo as f64)
}

/// Hausdorff distance with the empty-mask case mapped to the image
/// diagonal, which is the worst value any pair of masks can reach.
pub fn hausdorff_or_diagonal(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    match hausdorff(a, b) {
        Err(Error::EmptyMask) => {
            if a.is_empty() && b.is_empty() {
                Ok(0.0)
            } else {
                Ok(diagonal(a))
            }
        }
        other => other,
    }
}

pub fn diagonal(m: &BinaryMask) -> f64 {
    ((m.height() * m.height() + m.width() * m.width()) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostProc {
    None,
    PostDae,
    Crf,
}

impl PostProc {
    pub const ALL: [PostProc; 3] = [PostProc::None, PostProc::PostDae, PostProc::Crf];

    pub fn as_str(&self) -> &'static str {
        match self {
            PostProc::None => "none",
            PostProc::PostDae => "post-dae",
            PostProc::Crf => "crf",
        }
    }
}

impl std::str::FromStr for PostProc {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PostProc::None),
            "post-dae" => Ok(PostProc::PostDae),
            "crf" => Ok(PostProc::Crf),
            other => Err(Error::InvalidConfig(format!("unknown postproc {other:?}"))),
        }
    }
}

impl std::fmt::Display for PostProc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One evaluated (image, stage, post-processing) combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub method: String,
    pub stage: String,
    pub postproc: PostProc,
    pub dice: f64,
    pub hausdorff_px: f64,
    pub hausdorff_mm: f64,
    pub runtime_s: f64,
}

pub const EVAL_CSV_HEADER: &str =
    "image_id,method,stage,postproc,dice,hausdorff_px,hausdorff_mm,runtime_s";

impl EvalRecord {
    pub fn evaluate(
        image_id: &str,
        method: &str,
        stage: &str,
        postproc: PostProc,
        truth: &BinaryMask,
        pred: &BinaryMask,
        runtime_s: f64,
    ) -> Result<Self> {
        let dice = dice(truth, pred)?;
        let hausdorff_px = hausdorff_or_diagonal(truth, pred)?;
        Ok(Self {
            image_id: image_id.to_string(),
            method: method.to_string(),
            stage: stage.to_string(),
            postproc,
            dice,
            hausdorff_px,
            hausdorff_mm: hausdorff_px * truth.spacing(),
            runtime_s: runtime_s.max(0.0),
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.9},{:.9},{:.9},{:.6}",
            self.image_id,
            self.method,
            self.stage,
            self.postproc,
            self.dice,
            self.hausdorff_px,
            self.hausdorff_mm,
            self.runtime_s
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 8 {
            return Err(Error::InvalidConfig(format!(
                "expected 8 columns, found {} in {line:?}",
                f.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidConfig(format!("not a number: {s:?}")))
        };
        Ok(Self {
            image_id: f[0].into(),
            method: f[1].into(),
            stage: f[2].into(),
            postproc: f[3].parse()?,
            dice: num(f[4])?,
            hausdorff_px: num(f[5])?,
            hausdorff_mm: num(f[6])?,
            runtime_s: num(f[7])?,
        })
    }
}

/// Serialises records under the fixed header.
pub fn write_eval_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from(EVAL_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub fn read_eval_csv(text: &str) -> Result<Vec<EvalRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == EVAL_CSV_HEADER => {}
        other => {
            return Err(Error::InvalidConfig(format!(
                "bad results header: {other:?}"
            )))
        }
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(EvalRecord::parse_csv_row)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pixel_at(h: usize, w: usize, r: usize, c: usize) -> BinaryMask {
        let mut m = BinaryMask::new(h, w);
        m.set(r, c, true);
        m
    }

    fn brute_hausdorff(a: &BinaryMask, b: &BinaryMask) -> f64 {
        let (ba, bb) = (boundary(a), boundary(b));
        let directed = |x: &[(usize, usize)], y: &[(usize, usize)]| {
            x.iter()
                .map(|&(r, c)| {
                    y.iter()
                        .map(|&(s, d)| {
                            let dr = r as f64 - s as f64;
                            let dc = c as f64 - d as f64;
                            (dr * dr + dc * dc).sqrt()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        directed(&ba, &bb).max(directed(&bb, &ba))
    }

    #[test]
    fn dice_examples() {
        let a = BinaryMask::from_rows(&[&[1, 1, 0, 0]]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = BinaryMask::from_rows(&[&[0, 0, 1, 1]]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = BinaryMask::from_rows(&[&[0, 1, 1, 0]]);
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
        let e = BinaryMask::new(1, 4);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&a, &BinaryMask::new(2, 2)).is_err());
    }

    #[test]
    fn soft_dice_perfect_prediction() {
        let t = BinaryMask::from_rows(&[&[1, 0, 1], &[0, 1, 1]]);
        let loss = soft_dice_loss(&ProbabilityMap::from_mask(&t), &t, 1e-12).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn soft_dice_zero_prediction() {
        let t = BinaryMask::from_rows(&[&[1, 0, 1], &[0, 1, 1]]);
        let loss = soft_dice_loss(&ProbabilityMap::constant(2, 3, 0.0), &t, 1.0).unwrap();
        assert!((loss - (1.0 - 1.0 / 5.0)).abs() < 1e-12);
    }

    #[test]
    fn soft_dice_on_binary_prediction_is_one_minus_dice() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = BinaryMask::from_fn(6, 7, |_, _| rng.random_bool(0.4));
            let b = BinaryMask::from_fn(6, 7, |_, _| rng.random_bool(0.4));
            if a.is_empty() && b.is_empty() {
                continue;
            }
            let loss = soft_dice_loss(&ProbabilityMap::from_mask(&a), &b, 0.0).unwrap();
            assert!((loss - (1.0 - dice(&a, &b).unwrap())).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_dice_rejects_out_of_range() {
        let t = BinaryMask::new(1, 2);
        let p = ProbabilityMap {
            height: 1,
            width: 2,
            values: vec![0.2, 1.5],
        };
        assert!(matches!(
            soft_dice_loss(&p, &t, 1.0),
            Err(Error::InvalidProbability(_))
        ));
    }

    #[test]
    fn soft_dice_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = 12;
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
            let t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let mut g = vec![0.0; n];
            soft_dice_with_grad(&p, &t, 1.0, Some(&mut g));
            let h = 1e-6;
            for i in 0..n {
                let mut up = p.clone();
                up[i] += h;
                let mut dn = p.clone();
                dn[i] -= h;
                let fd = (soft_dice_with_grad(&up, &t, 1.0, None)
                    - soft_dice_with_grad(&dn, &t, 1.0, None))
                    / (2.0 * h);
                let rel = (fd - g[i]).abs() / g[i].abs().max(fd.abs());
                assert!(rel < 1e-4, "rel error {rel}");
            }
        }
    }

    #[test]
    fn hausdorff_examples() {
        let a = pixel_at(6, 6, 0, 0);
        let b = pixel_at(6, 6, 3, 4);
        assert_eq!(hausdorff(&a, &b).unwrap(), 5.0);
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert!(matches!(
            hausdorff(&a, &BinaryMask::new(6, 6)),
            Err(Error::EmptyMask)
        ));
        let empty = BinaryMask::new(6, 8);
        assert_eq!(hausdorff_or_diagonal(&pixel_at(6, 8, 1, 1), &empty).unwrap(), 10.0);
    }

    #[test]
    fn hausdorff_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..300 {
            let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
            let da = rng.random_range(0.05..0.7);
            let db = rng.random_range(0.05..0.7);
            let a = BinaryMask::from_fn(h, w, |_, _| rng.random_bool(da));
            let b = BinaryMask::from_fn(h, w, |_, _| rng.random_bool(db));
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let got = hausdorff(&a, &b).unwrap();
            assert!((got - brute_hausdorff(&a, &b)).abs() < 1e-9);
            assert!(hausdorff95(&a, &b).unwrap() <= got + 1e-12);
        }
    }

    #[test]
    fn csv_round_trip() {
        let r = EvalRecord {
            image_id: "img7".into(),
            method: "unet".into(),
            stage: "unet-epoch-5".into(),
            postproc: PostProc::PostDae,
            dice: 0.875,
            hausdorff_px: 4.0,
            hausdorff_mm: 1.4,
            runtime_s: 0.25,
        };
        let text = write_eval_csv(std::slice::from_ref(&r));
        assert!(text.starts_with(EVAL_CSV_HEADER));
        assert_eq!(read_eval_csv(&text).unwrap(), vec![r]);
        assert!(read_eval_csv("").is_err());
    }
}
