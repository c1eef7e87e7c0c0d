//! Confusion-matrix scores for a rare positive class: FAR, TS, sensitivity,
//! specificity, threshold sweeps, ROC/AUC and operating-point selection.
//!
//! An observation is predicted positive iff its probability is strictly
//! greater than the threshold. Ratios with a zero denominator are `None`.

use std::io::{self, Write};

use thiserror::Error;

use crate::scalar::{format_sig17, Scalar};

/// Number of evenly spaced thresholds in a default sweep.
pub const DEFAULT_SWEEP_POINTS: usize = 500;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {probs} probabilities for {labels} labels")]
    Length { probs: usize, labels: usize },
    #[error("degenerate labels: both classes must be present")]
    DegenerateLabels,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub hits: usize,
    pub false_alarms: usize,
    pub misses: usize,
    pub correct_rejections: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.hits + self.false_alarms + self.misses + self.correct_rejections
    }

    /// `false_alarms / (hits + false_alarms)`.
    pub fn far(&self) -> Option<f64> {
        ratio(self.false_alarms, self.hits + self.false_alarms)
    }

    /// `hits / (hits + false_alarms + misses)`.
    pub fn ts(&self) -> Option<f64> {
        ratio(self.hits, self.hits + self.false_alarms + self.misses)
    }

    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.hits, self.hits + self.misses)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(
            self.correct_rejections,
            self.false_alarms + self.correct_rejections,
        )
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn far(cm: &ConfusionMatrix) -> Option<f64> {
    cm.far()
}

pub fn ts(cm: &ConfusionMatrix) -> Option<f64> {
    cm.ts()
}

pub fn sensitivity(cm: &ConfusionMatrix) -> Option<f64> {
    cm.sensitivity()
}

pub fn specificity(cm: &ConfusionMatrix) -> Option<f64> {
    cm.specificity()
}

fn check_inputs<T: Scalar>(probs: &[T], labels: &[u8]) -> Result<(), MetricsError> {
    if probs.len() != labels.len() {
        return Err(MetricsError::Length {
            probs: probs.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = probs.iter().position(|p| !p.is_finite()) {
        return Err(MetricsError::InvalidInput(format!(
            "probability at index {i} is not finite"
        )));
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(MetricsError::InvalidInput(format!(
            "label at index {i} is not 0 or 1"
        )));
    }
    Ok(())
}

pub fn confusion<T: Scalar>(
    probs: &[T],
    labels: &[u8],
    tau: T,
) -> Result<ConfusionMatrix, MetricsError> {
    check_inputs(probs, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in probs.iter().zip(labels) {
        match (p > tau, y == 1) {
            (true, true) => cm.hits += 1,
            (true, false) => cm.false_alarms += 1,
            (false, true) => cm.misses += 1,
            (false, false) => cm.correct_rejections += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint<T> {
    pub threshold: T,
    pub far: Option<f64>,
    pub ts: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub confusion: ConfusionMatrix,
}

impl<T: Scalar> SweepPoint<T> {
    pub fn new(threshold: T, confusion: ConfusionMatrix) -> Self {
        Self {
            threshold,
            far: confusion.far(),
            ts: confusion.ts(),
            sensitivity: confusion.sensitivity(),
            specificity: confusion.specificity(),
            confusion,
        }
    }
}

/// Scores at evenly spaced thresholds `k/(m−1)`, `k = 0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep<T> {
    pub points: Vec<SweepPoint<T>>,
}

/// Sorted view of scored labels for fast threshold counting.
struct Ranked<T> {
    /// Ascending probabilities.
    probs: Vec<T>,
    /// `pos_before[k]` = positives among the `k` smallest probabilities.
    pos_before: Vec<usize>,
    n_pos: usize,
}

impl<T: Scalar> Ranked<T> {
    fn new(probs: &[T], labels: &[u8]) -> Self {
        let mut pairs: Vec<(T, u8)> = probs.iter().copied().zip(labels.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite probabilities"));
        let mut pos_before = Vec::with_capacity(pairs.len() + 1);
        pos_before.push(0);
        let mut acc = 0;
        for &(_, y) in &pairs {
            acc += y as usize;
            pos_before.push(acc);
        }
        Self {
            probs: pairs.into_iter().map(|(p, _)| p).collect(),
            n_pos: acc,
            pos_before,
        }
    }

    fn confusion_at(&self, tau: T) -> ConfusionMatrix {
        let n = self.probs.len();
        let k = self.probs.partition_point(|&p| p <= tau);
        let misses = self.pos_before[k];
        let hits = self.n_pos - misses;
        let correct_rejections = k - misses;
        ConfusionMatrix {
            hits,
            false_alarms: (n - k) - hits,
            misses,
            correct_rejections,
        }
    }
}

pub fn sweep<T: Scalar>(
    probs: &[T],
    labels: &[u8],
    n_points: usize,
) -> Result<ThresholdSweep<T>, MetricsError> {
    check_inputs(probs, labels)?;
    if n_points < 2 {
        return Err(MetricsError::InvalidInput(format!(
            "a sweep needs at least 2 points, got {n_points}"
        )));
    }
    let ranked = Ranked::new(probs, labels);
    let last = T::count(n_points - 1);
    let points = (0..n_points)
        .map(|k| {
            let tau = T::count(k) / last;
            SweepPoint::new(tau, ranked.confusion_at(tau))
        })
        .collect();
    Ok(ThresholdSweep { points })
}

impl<T: Scalar> ThresholdSweep<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Point whose threshold is closest to `tau` (the lower one on ties).
    pub fn nearest(&self, tau: T) -> Option<&SweepPoint<T>> {
        self.points.iter().min_by(|a, b| {
            let da = (a.threshold - tau).abs();
            let db = (b.threshold - tau).abs();
            da.partial_cmp(&db).expect("finite thresholds").then(
                a.threshold
                    .partial_cmp(&b.threshold)
                    .expect("finite thresholds"),
            )
        })
    }

    /// `sweep.csv`: one row per threshold, empty cells for undefined ratios.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "threshold,far,ts,sensitivity,specificity,hits,false_alarms,misses,correct_rejections"
        )?;
        for p in &self.points {
            let c = &p.confusion;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                format_sig17(p.threshold),
                opt_cell(p.far),
                opt_cell(p.ts),
                opt_cell(p.sensitivity),
                opt_cell(p.specificity),
                c.hits,
                c.false_alarms,
                c.misses,
                c.correct_rejections
            )?;
        }
        Ok(())
    }
}

/// CSV cell for an optional ratio: 17 significant digits, empty when undefined.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map(format_sig17).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(1 − specificity, sensitivity)` from the highest threshold to the
    /// lowest, starting at `(0, 0)` and ending at `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "one_minus_specificity,sensitivity")?;
        for &(x, y) in &self.points {
            writeln!(out, "{},{}", format_sig17(x), format_sig17(y))?;
        }
        Ok(())
    }
}

fn class_sizes(labels: &[u8]) -> Result<(usize, usize), MetricsError> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::DegenerateLabels);
    }
    Ok((n_pos, n_neg))
}

/// ROC at every distinct predicted value, with trapezoidal AUC.
pub fn roc<T: Scalar>(probs: &[T], labels: &[u8]) -> Result<RocCurve, MetricsError> {
    check_inputs(probs, labels)?;
    let (n_pos, n_neg) = class_sizes(labels)?;
    let mut pairs: Vec<(T, u8)> = probs.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite probabilities"));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    // Twice the area, in units of 1/(n_pos·n_neg).
    let mut twice_area: u128 = 0;
    let mut k = 0;
    while k < pairs.len() {
        let (prev_tp, prev_fp) = (tp, fp);
        let value = pairs[k].0;
        while k < pairs.len() && pairs[k].0 == value {
            if pairs[k].1 == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        twice_area += ((fp - prev_fp) as u128) * ((tp + prev_tp) as u128);
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    let auc = twice_area as f64 / (2.0 * n_pos as f64 * n_neg as f64);
    Ok(RocCurve { points, auc })
}

/// Mann–Whitney form of the AUC by brute force over all positive/negative
/// pairs: a win counts 1, a tie 1/2.
pub fn auc_pairwise<T: Scalar>(probs: &[T], labels: &[u8]) -> Result<f64, MetricsError> {
    check_inputs(probs, labels)?;
    let (n_pos, n_neg) = class_sizes(labels)?;
    let mut twice: u128 = 0;
    for (i, &pi) in probs.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &pj) in probs.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            if pi > pj {
                twice += 2;
            } else if pi == pj {
                twice += 1;
            }
        }
    }
    Ok(twice as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Highest-TS point among those with a defined FAR ≤ `max_far`; ties go to
/// the smaller FAR, then the smaller threshold.
pub fn best_operating_point<T: Scalar>(
    sweep: &ThresholdSweep<T>,
    max_far: f64,
) -> Option<SweepPoint<T>> {
    sweep
        .points
        .iter()
        .filter(|p| p.far.is_some_and(|f| f <= max_far) && p.ts.is_some())
        .min_by(|a, b| {
            let (ta, tb) = (a.ts.unwrap(), b.ts.unwrap());
            tb.partial_cmp(&ta)
                .unwrap()
                .then(a.far.unwrap().partial_cmp(&b.far.unwrap()).unwrap())
                .then(a.threshold.partial_cmp(&b.threshold).unwrap())
        })
        .cloned()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1() -> ConfusionMatrix {
        ConfusionMatrix {
            hits: 500,
            false_alarms: 500,
            misses: 0,
            correct_rejections: 9000,
        }
    }

    #[test]
    fn table1_scores() {
        let cm = table1();
        assert_eq!(far(&cm), Some(0.5));
        assert_eq!(ts(&cm), Some(0.5));
        assert_eq!(sensitivity(&cm), Some(1.0));
        assert!((specificity(&cm).unwrap() - 9000.0 / 9500.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_ratios_are_missing() {
        let empty = ConfusionMatrix::default();
        assert_eq!(empty.far(), None);
        assert_eq!(empty.ts(), None);
        let cm = ConfusionMatrix {
            hits: 3,
            false_alarms: 0,
            misses: 0,
            correct_rejections: 4,
        };
        assert_eq!(cm.far(), Some(0.0));
        assert_eq!(cm.ts(), Some(1.0));
        let no_pos = ConfusionMatrix {
            hits: 0,
            false_alarms: 1,
            misses: 0,
            correct_rejections: 4,
        };
        assert_eq!(no_pos.sensitivity(), None);
        let mixed = ConfusionMatrix {
            hits: 1,
            false_alarms: 1,
            misses: 2,
            correct_rejections: 0,
        };
        assert_eq!(mixed.ts(), Some(0.25));
    }

    #[test]
    fn confusion_cases() {
        let cm = confusion(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                hits: 1,
                false_alarms: 0,
                misses: 0,
                correct_rejections: 1
            }
        );
        let cm = confusion(&[0.9, 1.0, 0.3], &[1, 0, 1], 1.0).unwrap();
        assert_eq!((cm.hits, cm.false_alarms), (0, 0));
        assert_eq!(
            confusion(&[0.5], &[1, 0], 0.5),
            Err(MetricsError::Length {
                probs: 1,
                labels: 2
            })
        );
        // strict inequality at the boundary
        let cm = confusion(&[0.5], &[1], 0.5).unwrap();
        assert_eq!(cm.misses, 1);
    }

    #[test]
    fn sweep_grid_and_endpoints() {
        let probs = [0.05, 0.2, 0.7, 0.95, 0.3];
        let labels = [0, 0, 1, 1, 0];
        let s = sweep(&probs, &labels, 500).unwrap();
        assert_eq!(s.len(), 500);
        assert_eq!(s.points[0].threshold, 0.0);
        assert_eq!(s.points[499].threshold, 1.0);
        assert_eq!(s.points[0].far, Some(3.0 / 5.0));
        assert_eq!(s.points[0].ts, Some(2.0 / 5.0));
        assert_eq!(s.points[499].ts, Some(0.0));
        assert!(sweep(&probs, &labels, 1).is_err());
    }

    #[test]
    fn perfect_scorer_sweep() {
        let labels = [1u8, 0, 0, 1, 0];
        let probs: Vec<f64> = labels.iter().map(|&y| y as f64).collect();
        let s = sweep(&probs, &labels, 11).unwrap();
        assert!(s
            .points
            .iter()
            .any(|p| p.far == Some(0.0) && p.ts == Some(1.0)));
    }

    #[test]
    fn roc_and_pairwise_simple() {
        let r = roc(&[0.8, 0.2], &[1, 0]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
        assert_eq!(roc(&[0.4; 6], &[1, 0, 1, 0, 0, 0]).unwrap().auc, 0.5);
        assert_eq!(auc_pairwise(&[0.8, 0.2], &[1, 0]).unwrap(), 1.0);
        assert_eq!(auc_pairwise(&[0.3; 4], &[1, 0, 1, 0]).unwrap(), 0.5);
        assert_eq!(
            roc(&[0.1, 0.2], &[1, 1]),
            Err(MetricsError::DegenerateLabels)
        );
    }

    #[test]
    fn operating_point_selection() {
        let mk = |tau: f64, hits, fa, misses| {
            SweepPoint::new(
                tau,
                ConfusionMatrix {
                    hits,
                    false_alarms: fa,
                    misses,
                    correct_rejections: 100,
                },
            )
        };
        // (FAR 0.2, TS 0.3) and (FAR 0.4, TS 0.35)
        let a = mk(0.6, 3, 0, 0);
        let sweep = ThresholdSweep {
            points: vec![
                SweepPoint {
                    far: Some(0.2),
                    ts: Some(0.3),
                    ..a.clone()
                },
                SweepPoint {
                    far: Some(0.4),
                    ts: Some(0.35),
                    threshold: 0.4,
                    ..a.clone()
                },
            ],
        };
        let best = best_operating_point(&sweep, 0.3).unwrap();
        assert_eq!((best.far, best.ts), (Some(0.2), Some(0.3)));
        let no_zero = ThresholdSweep {
            points: vec![mk(0.1, 5, 5, 0), mk(0.9, 2, 1, 3)],
        };
        assert!(best_operating_point(&no_zero, 0.0).is_none());
    }

    #[test]
    fn sweep_csv_layout() {
        let s = sweep(&[0.2, 0.8], &[0, 1], 3).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(
            lines[0],
            "threshold,far,ts,sensitivity,specificity,hits,false_alarms,misses,correct_rejections"
        );
        assert_eq!(lines.len(), 4);
        // tau = 1: nothing predicted positive, FAR undefined
        assert!(lines[3].starts_with("1,,0,"));
    }
}
