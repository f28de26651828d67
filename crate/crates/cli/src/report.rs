//! Aggregation of evaluation records into per-arm summaries and paired
//! significance tests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use postdae_core::metrics::{read_eval_csv, EvalRecord, PostProc};
use postdae_core::stats::{wilcoxon_signed_rank, PairedSampleSet};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Mean and sample standard deviation over finite values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub method: String,
    pub stage: String,
    pub postproc: PostProc,
    /// Records with finite metrics.
    pub n: usize,
    /// Records whose arm was skipped (non-finite metrics).
    pub skipped: usize,
    pub dice: MeanStd,
    pub hausdorff_px: MeanStd,
    pub hausdorff_mm: MeanStd,
    pub runtime_s: MeanStd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Dice,
    HausdorffMm,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::HausdorffMm => "hausdorff_mm",
        }
    }

    pub fn of(&self, r: &EvalRecord) -> f64 {
        match self {
            Metric::Dice => r.dice,
            Metric::HausdorffMm => r.hausdorff_mm,
        }
    }
}

/// One paired Wilcoxon test between two post-processing arms of the same
/// stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub method: String,
    pub stage: String,
    pub metric: Metric,
    pub a: PostProc,
    pub b: PostProc,
    /// Size of the shared paired image set.
    pub n: usize,
    /// Mean of `a - b`.
    pub mean_difference: f64,
    /// `None` when the test is undefined (too few non-zero differences).
    pub p_value: Option<f64>,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub arms: Vec<ArmSummary>,
    pub comparisons: Vec<PairedComparison>,
}

/// Arm pairs tested for every stage.
pub const PAIRS: [(PostProc, PostProc); 3] = [
    (PostProc::PostDae, PostProc::None),
    (PostProc::Crf, PostProc::None),
    (PostProc::PostDae, PostProc::Crf),
];

type StageKey = (String, String);

fn records_by_arm(records: &[EvalRecord]) -> BTreeMap<(StageKey, PostProc), Vec<&EvalRecord>> {
    let mut out: BTreeMap<_, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        out.entry(((r.method.clone(), r.stage.clone()), r.postproc)).or_default().push(r);
    }
    out
}

impl ComparisonReport {
    pub fn from_records(records: &[EvalRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(CliError::Schema("no evaluation records".into()));
        }
        let by_arm = records_by_arm(records);
        let arms = by_arm
            .iter()
            .map(|(((method, stage), postproc), rs)| {
                let finite: Vec<&&EvalRecord> = rs.iter().filter(|r| r.dice.is_finite()).collect();
                ArmSummary {
                    method: method.clone(),
                    stage: stage.clone(),
                    postproc: *postproc,
                    n: finite.len(),
                    skipped: rs.len() - finite.len(),
                    dice: MeanStd::of(finite.iter().map(|r| r.dice)),
                    hausdorff_px: MeanStd::of(finite.iter().map(|r| r.hausdorff_px)),
                    hausdorff_mm: MeanStd::of(finite.iter().map(|r| r.hausdorff_mm)),
                    runtime_s: MeanStd::of(finite.iter().map(|r| r.runtime_s)),
                }
            })
            .collect();

        let stages: BTreeSet<&StageKey> = by_arm.keys().map(|(s, _)| s).collect();
        let mut comparisons = Vec::new();
        for stage in stages {
            // One image set per stage: images with finite metrics in every arm
            // present, so all p-values of the stage are paired identically.
            let arms_here: Vec<PostProc> = PostProc::ALL
                .into_iter()
                .filter(|p| by_arm.contains_key(&(stage.clone(), *p)))
                .collect();
            let mut per_arm: BTreeMap<PostProc, BTreeMap<&str, &EvalRecord>> = BTreeMap::new();
            for p in &arms_here {
                per_arm.insert(
                    *p,
                    by_arm[&(stage.clone(), *p)]
                        .iter()
                        .filter(|r| r.dice.is_finite() && r.hausdorff_mm.is_finite())
                        .map(|r| (r.image_id.as_str(), *r))
                        .collect(),
                );
            }
            let shared: BTreeSet<&str> = match per_arm.values().next() {
                None => BTreeSet::new(),
                Some(first) => first
                    .keys()
                    .copied()
                    .filter(|id| per_arm.values().all(|m| m.contains_key(id)))
                    .collect(),
            };
            for (a, b) in PAIRS {
                if !(arms_here.contains(&a) && arms_here.contains(&b)) {
                    continue;
                }
                for metric in [Metric::Dice, Metric::HausdorffMm] {
                    let xs: Vec<f64> = shared.iter().map(|id| metric.of(per_arm[&a][id])).collect();
                    let ys: Vec<f64> = shared.iter().map(|id| metric.of(per_arm[&b][id])).collect();
                    let mean_difference = if xs.is_empty() {
                        f64::NAN
                    } else {
                        xs.iter().zip(&ys).map(|(x, y)| x - y).sum::<f64>() / xs.len() as f64
                    };
                    let p_value = PairedSampleSet::new(xs.clone(), ys)
                        .and_then(|set| wilcoxon_signed_rank(&set))
                        .ok()
                        .map(|w| w.p_value);
                    comparisons.push(PairedComparison {
                        method: stage.0.clone(),
                        stage: stage.1.clone(),
                        metric,
                        a,
                        b,
                        n: xs.len(),
                        mean_difference,
                        p_value,
                        significant: p_value.is_some_and(|p| p < SIGNIFICANCE_LEVEL),
                    });
                }
            }
        }
        Ok(Self { arms, comparisons })
    }

    /// Parses a `results.csv` document and aggregates it.
    pub fn from_csv(text: &str) -> Result<Self> {
        let records = read_eval_csv(text).map_err(|e| CliError::Schema(e.to_string()))?;
        Self::from_records(&records)
    }

    pub fn comparison(&self, method: &str, stage: &str, metric: Metric, a: PostProc, b: PostProc) -> Option<&PairedComparison> {
        self.comparisons
            .iter()
            .find(|c| c.method == method && c.stage == stage && c.metric == metric && c.a == a && c.b == b)
    }

    /// Summary table, one row per arm. p-values of the arm against `none`
    /// are attached to the post-dae and crf rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,stage,postproc,n,skipped,dice_mean,dice_std,hausdorff_px_mean,hausdorff_px_std,\
             hausdorff_mm_mean,hausdorff_mm_std,runtime_s_mean,p_dice_vs_none,p_hausdorff_vs_none\n",
        );
        let fmt_p = |p: Option<&PairedComparison>| match p.and_then(|c| c.p_value) {
            Some(p) => format!("{p:.6e}"),
            None => String::new(),
        };
        for a in &self.arms {
            let (pd, ph) = if a.postproc == PostProc::None {
                (String::new(), String::new())
            } else {
                (
                    fmt_p(self.comparison(&a.method, &a.stage, Metric::Dice, a.postproc, PostProc::None)),
                    fmt_p(self.comparison(&a.method, &a.stage, Metric::HausdorffMm, a.postproc, PostProc::None)),
                )
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{pd},{ph}",
                a.method,
                a.stage,
                a.postproc,
                a.n,
                a.skipped,
                a.dice.mean,
                a.dice.std,
                a.hausdorff_px.mean,
                a.hausdorff_px.std,
                a.hausdorff_mm.mean,
                a.hausdorff_mm.std,
                a.runtime_s.mean,
            );
        }
        out
    }

    /// Pairwise tests as CSV.
    pub fn comparisons_csv(&self) -> String {
        let mut out = String::from("method,stage,metric,a,b,n,mean_difference,p_value,significant\n");
        for c in &self.comparisons {
            let p = c.p_value.map(|p| format!("{p:.6e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.6},{p},{}",
                c.method,
                c.stage,
                c.metric.as_str(),
                c.a,
                c.b,
                c.n,
                c.mean_difference,
                c.significant
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, stage: &str, postproc: PostProc, dice: f64, hd: f64) -> EvalRecord {
        EvalRecord {
            image_id: id.into(),
            method: "unet".into(),
            stage: stage.into(),
            postproc,
            dice,
            hausdorff_px: hd,
            hausdorff_mm: hd * 0.5,
            runtime_s: 0.0,
        }
    }

    #[test]
    fn mean_std_skips_non_finite() {
        let m = MeanStd::of([1.0, 3.0, f64::NAN]);
        assert_eq!(m.mean, 2.0);
        assert!((m.std - 2f64.sqrt()).abs() < 1e-15);
        assert!(MeanStd::of([]).mean.is_nan());
        assert_eq!(MeanStd::of([4.0]).std, 0.0);
    }

    #[test]
    fn empty_input_is_a_schema_error() {
        assert!(matches!(ComparisonReport::from_records(&[]), Err(CliError::Schema(_))));
        assert!(matches!(ComparisonReport::from_csv(""), Err(CliError::Schema(_))));
        assert!(matches!(
            ComparisonReport::from_csv(postdae_core::metrics::EVAL_CSV_HEADER),
            Err(CliError::Schema(_))
        ));
        assert!(matches!(ComparisonReport::from_csv("a,b\n1,2\n"), Err(CliError::Schema(_))));
    }

    #[test]
    fn consistent_improvement_is_significant() {
        let mut rs = Vec::new();
        for i in 0..12 {
            let id = format!("im{i:02}");
            let base = 0.8 + 0.001 * i as f64;
            rs.push(rec(&id, "s", PostProc::None, base, 20.0 + i as f64));
            rs.push(rec(&id, "s", PostProc::PostDae, base + 0.05 + 0.001 * i as f64, 10.0));
            rs.push(rec(&id, "s", PostProc::Crf, base, 20.0 + i as f64));
        }
        let report = ComparisonReport::from_records(&rs).unwrap();
        assert_eq!(report.arms.len(), 3);
        let c = report
            .comparison("unet", "s", Metric::Dice, PostProc::PostDae, PostProc::None)
            .unwrap();
        assert!(c.significant && c.n == 12);
        assert!(c.mean_difference > 0.05);
        // identical arms: every difference is zero, the test is undefined
        let c = report.comparison("unet", "s", Metric::Dice, PostProc::Crf, PostProc::None).unwrap();
        assert_eq!(c.p_value, None);
        assert!(!c.significant);
        assert_eq!(report.comparisons.len(), 6);
    }

    #[test]
    fn skipped_arm_shrinks_the_shared_image_set() {
        let mut rs = Vec::new();
        for i in 0..8 {
            let id = format!("im{i}");
            rs.push(rec(&id, "s", PostProc::None, 0.7, 9.0));
            rs.push(rec(&id, "s", PostProc::PostDae, 0.8 + 0.01 * i as f64, 4.0));
            let crf = if i < 2 { f64::NAN } else { 0.75 };
            rs.push(rec(&id, "s", PostProc::Crf, crf, crf));
        }
        let report = ComparisonReport::from_records(&rs).unwrap();
        assert!(report.comparisons.iter().all(|c| c.n == 6));
        let crf = report.arms.iter().find(|a| a.postproc == PostProc::Crf).unwrap();
        assert_eq!((crf.n, crf.skipped), (6, 2));
        assert!(report.to_csv().lines().count() == 4);
    }
}
