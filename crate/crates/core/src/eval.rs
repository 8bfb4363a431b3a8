//! Multiclass evaluation: confusion matrix, accuracy, macro
//! precision/recall/F1, and one-vs-rest ROC / precision-recall curves.
//!
//! Averaging is macro (unweighted over classes), and every 0/0 metric
//! cell is defined as 0 so the functions stay total.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ScoreVector, NUM_CLASSES};

/// 3x3 counts; rows are true codes, columns predicted codes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }
}

/// Tallies predictions against truth; both slices carry label codes.
pub fn confusion(preds: &[u8], truth: &[u8]) -> Result<ConfusionMatrix> {
    if preds.len() != truth.len() {
        return Err(Error::Data(format!(
            "length mismatch: {} predictions vs {} truths",
            preds.len(),
            truth.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Data("cannot tally an empty evaluation".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in preds.iter().zip(truth) {
        if p as usize >= NUM_CLASSES || t as usize >= NUM_CLASSES {
            return Err(Error::Data(format!("label code out of range: pred {p}, true {t}")));
        }
        cm.counts[t as usize][p as usize] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: [ClassMetrics; NUM_CLASSES],
}

/// Accuracy, per-class precision/recall/F1, and their macro averages.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Data("confusion matrix has no samples".into()));
    }
    let mut per_class = [ClassMetrics::default(); NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let diag = cm.counts[c][c] as f64;
        let col = cm.col_sum(c) as f64;
        let row = cm.row_sum(c) as f64;
        let precision = if col > 0.0 { diag / col } else { 0.0 };
        let recall = if row > 0.0 { diag / row } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class[c] = ClassMetrics {
            precision,
            recall,
            f1,
        };
    }
    let trace: u64 = (0..NUM_CLASSES).map(|c| cm.counts[c][c]).sum();
    Ok(MetricReport {
        accuracy: trace as f64 / total as f64,
        macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / NUM_CLASSES as f64,
        macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / NUM_CLASSES as f64,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / NUM_CLASSES as f64,
        per_class,
    })
}

/// One swept point: the threshold and the (x, y) curve coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

/// ROC points are (FPR, TPR); PR points are (recall, precision).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCurves {
    pub roc: Vec<CurvePoint>,
    pub pr: Vec<CurvePoint>,
}

/// Per-class curves (None when the class is absent from truth) plus the
/// macro curve averaged pointwise over present classes on the shared
/// threshold grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSet {
    pub per_class: [Option<ClassCurves>; NUM_CLASSES],
    pub macro_avg: ClassCurves,
}

/// One-vs-rest threshold sweeps over the observed scores, descending.
///
/// A sample counts positive at threshold t when its class-c probability
/// is >= t. The ROC for each class starts from an anchor at threshold
/// +inf, (0, 0); PR points exist only at observed thresholds. Precision
/// with no predicted positives is defined as 0 (reachable only on the
/// macro grid).
pub fn ovr_curves(prob_rows: &[ScoreVector], truth: &[u8]) -> Result<CurveSet> {
    if prob_rows.len() != truth.len() {
        return Err(Error::Data(format!(
            "length mismatch: {} probability rows vs {} truths",
            prob_rows.len(),
            truth.len()
        )));
    }
    if prob_rows.is_empty() {
        return Err(Error::Data("cannot sweep an empty evaluation".into()));
    }
    for row in prob_rows {
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !(0.0..=1.0 + 1e-9).contains(p)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("invalid probability row {row:?}")));
        }
    }
    let mut per_class: [Option<ClassCurves>; NUM_CLASSES] = Default::default();
    for c in 0..NUM_CLASSES {
        if truth.iter().any(|&t| t as usize == c) {
            per_class[c] = Some(sweep_class(prob_rows, truth, c, None));
        }
    }

    // Shared grid: union of observed scores over present classes.
    let mut grid: Vec<f64> = Vec::new();
    for c in 0..NUM_CLASSES {
        if per_class[c].is_some() {
            grid.extend(prob_rows.iter().map(|row| row[c]));
        }
    }
    grid.sort_by(|a, b| b.partial_cmp(a).unwrap());
    grid.dedup();

    let present: Vec<usize> = (0..NUM_CLASSES).filter(|&c| per_class[c].is_some()).collect();
    let mut macro_roc = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    let mut macro_pr = Vec::new();
    let class_sweeps: Vec<(usize, ClassCurves)> = present
        .iter()
        .map(|&c| (c, sweep_class(prob_rows, truth, c, Some(&grid))))
        .collect();
    for (i, &threshold) in grid.iter().enumerate() {
        let mut roc = (0.0, 0.0);
        let mut pr = (0.0, 0.0);
        for (_, curves) in &class_sweeps {
            // +1 skips the ROC anchor.
            roc.0 += curves.roc[i + 1].x;
            roc.1 += curves.roc[i + 1].y;
            pr.0 += curves.pr[i].x;
            pr.1 += curves.pr[i].y;
        }
        let n = class_sweeps.len() as f64;
        macro_roc.push(CurvePoint {
            threshold,
            x: roc.0 / n,
            y: roc.1 / n,
        });
        macro_pr.push(CurvePoint {
            threshold,
            x: pr.0 / n,
            y: pr.1 / n,
        });
    }
    Ok(CurveSet {
        per_class,
        macro_avg: ClassCurves {
            roc: macro_roc,
            pr: macro_pr,
        },
    })
}

/// Sweeps one class over its observed scores (descending) or over an
/// explicit threshold grid.
fn sweep_class(
    prob_rows: &[ScoreVector],
    truth: &[u8],
    class: usize,
    grid: Option<&[f64]>,
) -> ClassCurves {
    let mut scored: Vec<(f64, bool)> = prob_rows
        .iter()
        .zip(truth)
        .map(|(row, &t)| (row[class], t as usize == class))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let positives = scored.iter().filter(|(_, pos)| *pos).count() as f64;
    let negatives = scored.len() as f64 - positives;

    let thresholds: Vec<f64> = match grid {
        Some(g) => g.to_vec(),
        None => {
            let mut t: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
            t.dedup();
            t
        }
    };

    let mut roc = vec![CurvePoint {
        threshold: f64::INFINITY,
        x: 0.0,
        y: 0.0,
    }];
    let mut pr = Vec::new();
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut cursor = 0;
    for &threshold in &thresholds {
        while cursor < scored.len() && scored[cursor].0 >= threshold {
            if scored[cursor].1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            cursor += 1;
        }
        let tpr = if positives > 0.0 { tp / positives } else { 0.0 };
        let fpr = if negatives > 0.0 { fp / negatives } else { 0.0 };
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        roc.push(CurvePoint {
            threshold,
            x: fpr,
            y: tpr,
        });
        pr.push(CurvePoint {
            threshold,
            x: tpr,
            y: precision,
        });
    }
    ClassCurves { roc, pr }
}

/// Trapezoidal area under a swept curve.
pub fn trapezoid_area(points: &[CurvePoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].x - w[0].x) * (w[0].y + w[1].y) / 2.0)
        .sum()
}
