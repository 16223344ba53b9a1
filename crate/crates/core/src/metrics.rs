//! Detection-level evaluation: centroid matching and precision/recall/F.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEFAULT_MATCH_RADIUS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(&self, o: &Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub centroid: Point,
    /// Confidence in `[0, 1]`.
    pub score: f64,
    pub area: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub counts: ConfusionCounts,
    /// `(prediction index, ground-truth index)` pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// One-to-one matching, greedy by ascending distance. Ties are broken by
/// prediction index, then ground-truth index.
pub fn match_points(preds: &[Point], gts: &[Point], radius: f64) -> Result<Matching> {
    if !(radius >= 0.0) {
        return Err(Error::Config(format!("match radius must be non-negative, got {radius}")));
    }
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in preds.iter().enumerate() {
        for (j, g) in gts.iter().enumerate() {
            let d = p.dist(g);
            if d <= radius {
                cand.push((d, i, j));
            }
        }
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; preds.len()];
    let mut gt_used = vec![false; gts.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cand {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j));
        }
    }
    let tp = pairs.len();
    Ok(Matching {
        counts: ConfusionCounts {
            tp,
            fp: preds.len() - tp,
            fn_: gts.len() - tp,
        },
        pairs,
    })
}

pub fn match_detections(preds: &[Detection], gts: &[Point], radius: f64) -> Result<Matching> {
    let pts: Vec<Point> = preds.iter().map(|d| d.centroid).collect();
    match_points(&pts, gts, radius)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Undefined ratios are reported as 0.
pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn detection_metrics(c: ConfusionCounts) -> DetectionMetrics {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    DetectionMetrics {
        precision,
        recall,
        f_score: f_score(precision, recall),
    }
}

/// Human-readable report, one `key=value` record per line.
pub fn text_report(label: &str, c: ConfusionCounts, m: DetectionMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{label}: precision={:.4} recall={:.4} f_score={:.4} tp={} fp={} fn={}",
        m.precision, m.recall, m.f_score, c.tp, c.fp, c.fn_
    );
    s
}

pub const METRICS_CSV_HEADER: &str = "precision,recall,f_score,tp,fp,fn";

pub fn csv_report(c: ConfusionCounts, m: DetectionMetrics) -> String {
    format!(
        "{METRICS_CSV_HEADER}\n{:.6},{:.6},{:.6},{},{},{}\n",
        m.precision, m.recall, m.f_score, c.tp, c.fp, c.fn_
    )
}
