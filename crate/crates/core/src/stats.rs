//! Wilcoxon signed-rank test for paired per-image scores.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Largest number of non-zero differences for which the null distribution
/// is computed exactly.
pub const EXACT_MAX_N: usize = 25;

/// Two equal-length samples, paired by position (optionally by key).
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSampleSet {
    pub keys: Vec<String>,
    pub values_a: Vec<f64>,
    pub values_b: Vec<f64>,
}

impl PairedSampleSet {
    pub fn new(values_a: Vec<f64>, values_b: Vec<f64>) -> Result<Self> {
        if values_a.len() != values_b.len() || values_a.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "paired samples need equal non-zero lengths, got {} and {}",
                values_a.len(),
                values_b.len()
            )));
        }
        let keys = (0..values_a.len()).map(|i| i.to_string()).collect();
        Ok(Self {
            keys,
            values_a,
            values_b,
        })
    }

    /// Pairs two keyed samples. Both maps must have exactly the same keys.
    pub fn align(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<Self> {
        if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
            return Err(Error::InvalidConfig(
                "paired samples are keyed by different image sets".into(),
            ));
        }
        let mut set = Self::new(a.values().copied().collect(), b.values().copied().collect())?;
        set.keys = a.keys().cloned().collect();
        Ok(set)
    }

    pub fn differences(&self) -> Vec<f64> {
        self.values_a
            .iter()
            .zip(&self.values_b)
            .map(|(a, b)| a - b)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of the ranks of positive differences (`a - b > 0`).
    pub w_plus: f64,
    /// Number of non-zero differences.
    pub n: usize,
    /// Two-sided p-value.
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks (1-based) of `xs`, ties sharing the mean of their ranks.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).expect("finite values"));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test. Zero differences are discarded;
/// exact null distribution up to [`EXACT_MAX_N`], normal approximation with
/// continuity and tie correction above.
pub fn wilcoxon_signed_rank(pairs: &PairedSampleSet) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = pairs.differences().into_iter().filter(|&d| d != 0.0).collect();
    let n = diffs.len();
    if n < 5 {
        return Err(Error::TooFewSamples(n));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    if n <= EXACT_MAX_N {
        Ok(WilcoxonResult {
            w_plus,
            n,
            p_value: exact_p_value(&ranks, w_plus),
            exact: true,
        })
    } else {
        Ok(WilcoxonResult {
            w_plus,
            n,
            p_value: normal_p_value(&ranks, w_plus),
            exact: false,
        })
    }
}

/// Counts sign assignments by their (doubled, hence integral) rank sum.
fn exact_p_value(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(ranks.len() as i32);
    let w = (w_plus * 2.0).round() as usize;
    let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
    let upper: f64 = counts[w..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_p_value(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    // tie correction: sum of t^3 - t over tie groups
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    // two-sided: 2 * (1 - Φ(z)) = erfc(z / √2)
    libm::erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Sign-flip enumeration over all 2^n assignments of the observed ranks.
    fn brute_p(diffs: &[f64]) -> f64 {
        let d: Vec<f64> = diffs.iter().copied().filter(|&x| x != 0.0).collect();
        let ranks = average_ranks(&d.iter().map(|x| x.abs()).collect::<Vec<_>>());
        let observed: f64 = d
            .iter()
            .zip(&ranks)
            .filter(|(x, _)| **x > 0.0)
            .map(|(_, r)| r)
            .sum();
        let n = d.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if w <= observed + 1e-9 {
                le += 1;
            }
            if w >= observed - 1e-9 {
                ge += 1;
            }
        }
        let all = (1u64 << n) as f64;
        (2.0 * (le as f64 / all).min(ge as f64 / all)).min(1.0)
    }

    #[test]
    fn all_zero_differences_is_too_few() {
        let s = PairedSampleSet::new(vec![1.0; 8], vec![1.0; 8]).unwrap();
        assert!(matches!(wilcoxon_signed_rank(&s), Err(Error::TooFewSamples(0))));
    }

    #[test]
    fn five_positive_differences() {
        let s = PairedSampleSet::new(vec![2.0, 3.0, 4.0, 5.0, 6.0], vec![1.0; 5]).unwrap();
        let r = wilcoxon_signed_rank(&s).unwrap();
        assert!(r.exact);
        assert_eq!(r.w_plus, 15.0);
        assert!((r.p_value - 2.0 / 32.0).abs() < 1e-15);
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn exact_matches_enumeration_for_small_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(5..=10);
            // coarse grid to provoke ties and zeros
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64 + 0.5 * rng.random_range(0..2) as f64).collect();
            let s = PairedSampleSet::new(a, b).unwrap();
            match wilcoxon_signed_rank(&s) {
                Ok(r) => assert!((r.p_value - brute_p(&s.differences())).abs() < 1e-12),
                Err(Error::TooFewSamples(k)) => assert!(k < 5),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let a: Vec<f64> = (0..40).map(|i| i as f64 * 0.1 + 1.0).collect();
        let b: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let r = wilcoxon_signed_rank(&PairedSampleSet::new(a, b).unwrap()).unwrap();
        assert!(!r.exact);
        assert!(r.p_value < 1e-6);
        let c: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = wilcoxon_signed_rank(&PairedSampleSet::new(c, vec![0.0; 40]).unwrap()).unwrap();
        assert!(r.p_value > 0.9);
    }

    #[test]
    fn align_requires_matching_keys() {
        let a: BTreeMap<String, f64> = [("x".to_string(), 1.0), ("y".to_string(), 2.0)].into();
        let b: BTreeMap<String, f64> = [("x".to_string(), 1.0), ("z".to_string(), 2.0)].into();
        assert!(PairedSampleSet::align(&a, &b).is_err());
        let s = PairedSampleSet::align(&a, &a).unwrap();
        assert_eq!(s.keys, vec!["x", "y"]);
    }
}
