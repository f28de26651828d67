//! Box plots rendered straight to PNG. Every box's statistics are also
//! stored as tEXt chunks so plots can be checked without looking at them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use postdae_core::metrics::{EvalRecord, PostProc};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, IoContext, Result};
use crate::report::Metric;

/// Summary of one box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl BoxStats {
    /// `None` when no value is finite.
    pub fn new(label: String, values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let (q1, q3) = (quantile(&v, 0.25), quantile(&v, 0.75));
        let reach = 1.5 * (q3 - q1);
        let inside = |x: &f64| *x >= q1 - reach && *x <= q3 + reach;
        Some(Self {
            n: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(&v, 0.5),
            q1,
            q3,
            // with few points the interpolated quartiles can pass every
            // non-outlier, so whiskers never end inside the box
            whisker_low: v.iter().find(|x| inside(x)).expect("median is inside").min(q1),
            whisker_high: v.iter().rev().find(|x| inside(x)).expect("median is inside").max(q3),
            outliers: v.iter().copied().filter(|x| !inside(x)).collect(),
            label,
        })
    }
}

const HEIGHT: usize = 360;
const MARGIN: usize = 24;
const SLOT: usize = 28;
const GROUP_GAP: usize = 16;

fn color(p: PostProc) -> [u8; 3] {
    match p {
        PostProc::None => [120, 120, 120],
        PostProc::PostDae => [40, 110, 200],
        PostProc::Crf => [220, 120, 30],
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn new(w: usize, h: usize) -> Self {
        Self { w, h, px: vec![255; w * h * 3] }
    }

    fn set(&mut self, x: i64, y: i64, c: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let i = (y as usize * self.w + x as usize) * 3;
            self.px[i..i + 3].copy_from_slice(&c);
        }
    }

    fn hline(&mut self, x0: i64, x1: i64, y: i64, c: [u8; 3]) {
        for x in x0.min(x1)..=x0.max(x1) {
            self.set(x, y, c);
        }
    }

    fn vline(&mut self, x: i64, y0: i64, y1: i64, c: [u8; 3]) {
        for y in y0.min(y1)..=y0.max(y1) {
            self.set(x, y, c);
        }
    }

    fn fill(&mut self, x0: i64, x1: i64, y0: i64, y1: i64, c: [u8; 3]) {
        for y in y0.min(y1)..=y0.max(y1) {
            self.hline(x0, x1, y, c);
        }
    }
}

/// Groups records of one metric by `(method, stage)` then postproc.
pub fn box_stats(records: &[EvalRecord], metric: Metric) -> Vec<(PostProc, BoxStats)> {
    let mut groups: BTreeMap<(String, String, PostProc), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.method.clone(), r.stage.clone(), r.postproc))
            .or_default()
            .push(metric.of(r));
    }
    groups
        .into_iter()
        .filter_map(|((m, s, p), v)| BoxStats::new(format!("{m}/{s}/{p}"), &v).map(|b| (p, b)))
        .collect()
}

/// Renders one box plot. Boxes of the same stage sit next to each other;
/// the mean is drawn as a black diamond.
pub fn render_box_plot(path: &Path, title: &str, boxes: &[(PostProc, BoxStats)]) -> Result<()> {
    if boxes.is_empty() {
        return Err(CliError::Schema(format!("nothing to plot for {title}")));
    }
    let stage_of = |b: &BoxStats| b.label.rsplit_once('/').map(|(s, _)| s.to_string()).unwrap_or_default();
    let mut xs = Vec::with_capacity(boxes.len());
    let mut x = MARGIN;
    for (i, (_, b)) in boxes.iter().enumerate() {
        if i > 0 && stage_of(&boxes[i - 1].1) != stage_of(b) {
            x += GROUP_GAP;
        }
        xs.push(x + SLOT / 2);
        x += SLOT;
    }
    let width = x + MARGIN;
    let (lo, hi) = boxes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, b)| {
        let o = b.outliers.iter().copied();
        let all = [b.whisker_low, b.whisker_high, b.mean].into_iter().chain(o);
        all.fold((lo, hi), |(l, h), v| (l.min(v), h.max(v)))
    });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let y_of = |v: f64| -> i64 {
        let t = (v - lo) / span;
        (MARGIN as f64 + (1.0 - t) * (HEIGHT - 2 * MARGIN) as f64).round() as i64
    };

    let mut cv = Canvas::new(width, HEIGHT);
    let axis = [0, 0, 0];
    cv.vline(MARGIN as i64 / 2, MARGIN as i64, (HEIGHT - MARGIN) as i64, axis);
    cv.hline(MARGIN as i64 / 2, (width - MARGIN / 2) as i64, (HEIGHT - MARGIN) as i64, axis);
    for k in 0..=4 {
        let y = y_of(lo + span * k as f64 / 4.0);
        cv.hline(MARGIN as i64 / 2 - 3, MARGIN as i64 / 2, y, axis);
    }
    let half = (SLOT / 2 - 4) as i64;
    for ((p, b), &cx) in boxes.iter().zip(&xs) {
        let cx = cx as i64;
        let c = color(*p);
        cv.vline(cx, y_of(b.whisker_low), y_of(b.q1), axis);
        cv.vline(cx, y_of(b.q3), y_of(b.whisker_high), axis);
        cv.hline(cx - half / 2, cx + half / 2, y_of(b.whisker_low), axis);
        cv.hline(cx - half / 2, cx + half / 2, y_of(b.whisker_high), axis);
        cv.fill(cx - half, cx + half, y_of(b.q3), y_of(b.q1), c);
        cv.hline(cx - half, cx + half, y_of(b.median), [255, 255, 255]);
        for &o in &b.outliers {
            cv.fill(cx - 1, cx + 1, y_of(o) - 1, y_of(o) + 1, c);
        }
        let my = y_of(b.mean);
        for d in 0..=3i64 {
            cv.hline(cx - (3 - d), cx + (3 - d), my - d, axis);
            cv.hline(cx - (3 - d), cx + (3 - d), my + d, axis);
        }
    }

    let file = BufWriter::new(File::create(path).at(path)?);
    let mut enc = png::Encoder::new(file, width as u32, HEIGHT as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    enc.add_text_chunk("Title".into(), title.into())?;
    enc.add_text_chunk("y-range".into(), format!("{lo} {hi}"))?;
    for (i, (_, b)) in boxes.iter().enumerate() {
        enc.add_text_chunk(format!("box-{i:03}"), serde_json::to_string(b)?)?;
    }
    let mut w = enc.write_header()?;
    w.write_image_data(&cv.px)?;
    w.finish()?;
    Ok(())
}

/// Reads back the per-box statistics stored in a plot.
pub fn read_plot_annotations(path: &Path) -> Result<Vec<BoxStats>> {
    let file = BufReader::new(File::open(path).at(path)?);
    let reader = png::Decoder::new(file)
        .read_info()
        .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    let mut chunks: Vec<_> = reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .filter(|t| t.keyword.starts_with("box-"))
        .map(|t| (t.keyword.clone(), t.text.clone()))
        .collect();
    chunks.sort();
    chunks
        .into_iter()
        .map(|(_, text)| Ok(serde_json::from_str(&text)?))
        .collect()
}

/// Writes `dice.png` and `hausdorff.png` into `dir`.
pub fn report_plots(records: &[EvalRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(CliError::Schema("no evaluation records".into()));
    }
    std::fs::create_dir_all(dir).at(dir)?;
    let mut out = Vec::new();
    for (metric, name, title) in [
        (Metric::Dice, "dice.png", "Dice"),
        (Metric::HausdorffMm, "hausdorff.png", "Hausdorff distance (mm)"),
    ] {
        let path = dir.join(name);
        render_box_plot(&path, title, &box_stats(records, metric))?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&[7.0], 0.75), 7.0);
    }

    #[test]
    fn outliers_fall_outside_the_whiskers() {
        let b = BoxStats::new("x".into(), &[1.0, 1.1, 1.2, 1.3, 1.4, 9.0]).unwrap();
        assert_eq!(b.outliers, vec![9.0]);
        assert_eq!(b.whisker_high, 1.4);
        assert!(BoxStats::new("y".into(), &[f64::NAN]).is_none());
    }

    proptest! {
        #[test]
        fn box_stats_are_ordered(v in proptest::collection::vec(-100.0f64..100.0, 1..40)) {
            let b = BoxStats::new("p".into(), &v).unwrap();
            prop_assert!(b.whisker_low <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.whisker_high);
            prop_assert_eq!(b.n, v.len());
            prop_assert!(b.outliers.iter().all(|o| *o < b.whisker_low || *o > b.whisker_high));
        }
    }
}
