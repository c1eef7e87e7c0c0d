//! Diagnostics on predicted probabilities: per-class kernel densities,
//! three-bin histograms, the piecewise rescaling `φ`, Kendall's tau-b between
//! two score vectors, and side-by-side FAR/TS tables for two models.

use std::io::{self, Write};

use itertools::Itertools;
use rayon::prelude::*;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::metrics::{opt_cell, SweepPoint, ThresholdSweep};
use crate::scalar::{format_sig17, Scalar};

pub const DEFAULT_KDE_GRID: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),
    #[error("length mismatch: {left} vs {right}")]
    Length { left: usize, right: usize },
    #[error("value {0} lies outside [0, 1]")]
    Domain(f64),
    #[error("kendall tau is undefined: one vector is entirely tied")]
    UndefinedTau,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityEstimate<T> {
    pub grid: Vec<T>,
    pub values: Vec<T>,
    pub bandwidth: T,
}

impl<T: Scalar> DensityEstimate<T> {
    /// Trapezoidal integral of the density over its grid.
    pub fn integral(&self) -> T {
        self.grid
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(g, v)| (g[1] - g[0]) * (v[0] + v[1]) * T::lit(0.5))
            .sum()
    }
}

/// Type-7 sample quantile of sorted data.
fn quantile<T: Scalar>(sorted: &[T], q: f64) -> T {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = T::lit(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Silverman's rule `0.9·min(sd, IQR/1.34)·n^(−1/5)`; falls back to `sd`
/// when the IQR is zero.
pub fn silverman_bandwidth<T: Scalar>(values: &[T]) -> Result<T, AnalysisError> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    if n < 2 || sorted[0] == sorted[n - 1] {
        return Err(AnalysisError::DegenerateSample(
            "need at least two distinct values".into(),
        ));
    }
    let nf = T::count(n);
    let mean = values.iter().copied().sum::<T>() / nf;
    let var = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / T::count(n - 1);
    let sd = var.sqrt();
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let spread = if iqr > T::zero() {
        sd.min(iqr / T::lit(1.34))
    } else {
        sd
    };
    Ok(T::lit(0.9) * spread * nf.powf(T::lit(-0.2)))
}

/// Gaussian kernel density on `n_grid` even points over `[min−3h, max+3h]`.
pub fn kde<T: Scalar>(values: &[T], n_grid: usize) -> Result<DensityEstimate<T>, AnalysisError> {
    if n_grid < 2 {
        return Err(AnalysisError::InvalidInput(
            "grid needs at least 2 points".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidInput("non-finite value".into()));
    }
    let h = silverman_bandwidth(values)?;
    let (min, max) = values
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let three = T::lit(3.0);
    let (lo, hi) = (min - three * h, max + three * h);
    let step = (hi - lo) / T::count(n_grid - 1);
    let norm =
        T::one() / (T::count(values.len()) * h * T::lit((2.0 * std::f64::consts::PI).sqrt()));
    let half = T::lit(0.5);

    let grid: Vec<T> = (0..n_grid).map(|k| lo + step * T::count(k)).collect();
    let values = grid
        .par_iter()
        .map(|&g| {
            values
                .iter()
                .map(|&v| {
                    let u = (g - v) / h;
                    (-half * u * u).exp()
                })
                .sum::<T>()
                * norm
        })
        .collect();
    Ok(DensityEstimate {
        grid,
        values,
        bandwidth: h,
    })
}

fn split_by_class<T: Scalar>(
    probs: &[T],
    labels: &[u8],
) -> Result<(Vec<T>, Vec<T>), AnalysisError> {
    if probs.len() != labels.len() {
        return Err(AnalysisError::Length {
            left: probs.len(),
            right: labels.len(),
        });
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&p, &y) in probs.iter().zip(labels) {
        if y == 1 {
            pos.push(p);
        } else {
            neg.push(p);
        }
    }
    Ok((pos, neg))
}

/// Densities of the predicted probabilities for class 1 and class 0.
pub fn class_densities<T: Scalar>(
    probs: &[T],
    labels: &[u8],
    n_grid: usize,
) -> Result<(DensityEstimate<T>, DensityEstimate<T>), AnalysisError> {
    let (pos, neg) = split_by_class(probs, labels)?;
    let named = |class: &str, e: AnalysisError| match e {
        AnalysisError::DegenerateSample(msg) => {
            AnalysisError::DegenerateSample(format!("class {class}: {msg}"))
        }
        other => other,
    };
    let d1 = kde(&pos, n_grid).map_err(|e| named("1", e))?;
    let d0 = kde(&neg, n_grid).map_err(|e| named("0", e))?;
    Ok((d1, d0))
}

/// `densities.csv` rows for the classes that have an estimate.
pub fn write_densities_csv<T: Scalar, W: Write>(
    mut out: W,
    positive: Option<&DensityEstimate<T>>,
    negative: Option<&DensityEstimate<T>>,
) -> io::Result<()> {
    writeln!(out, "class,grid,value")?;
    for (class, est) in [(1, positive), (0, negative)] {
        let Some(est) = est else { continue };
        for (g, v) in est.grid.iter().zip(&est.values) {
            writeln!(out, "{class},{},{}", format_sig17(*g), format_sig17(*v))?;
        }
    }
    Ok(())
}

/// Bin edges `[0,0.2]`, `(0.2,0.5]`, `(0.5,1]`.
pub const HISTOGRAM_EDGES: [f64; 4] = [0.0, 0.2, 0.5, 1.0];

/// Counts of each class over the three probability bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct HistogramTriptych {
    pub positive: [usize; 3],
    pub negative: [usize; 3],
}

/// Bin of a probability; every real lands in exactly one bin.
pub fn triptych_bin<T: Scalar>(p: T) -> usize {
    if p <= T::lit(0.2) {
        0
    } else if p <= T::lit(0.5) {
        1
    } else {
        2
    }
}

pub fn histogram_triptych<T: Scalar>(
    probs: &[T],
    labels: &[u8],
) -> Result<HistogramTriptych, AnalysisError> {
    let (pos, neg) = split_by_class(probs, labels)?;
    let mut h = HistogramTriptych::default();
    for p in pos {
        h.positive[triptych_bin(p)] += 1;
    }
    for p in neg {
        h.negative[triptych_bin(p)] += 1;
    }
    Ok(h)
}

impl HistogramTriptych {
    /// `histograms.csv`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "class,bin_low,bin_high,count")?;
        for (class, counts) in [(1, &self.positive), (0, &self.negative)] {
            for (b, count) in counts.iter().enumerate() {
                writeln!(
                    out,
                    "{class},{},{},{count}",
                    HISTOGRAM_EDGES[b],
                    HISTOGRAM_EDGES[b + 1]
                )?;
            }
        }
        Ok(())
    }
}

/// Anchors of the probability rescaling: `α_x = 2(1−low)x + low` on the
/// lower half and `β_x = 2(1−high)(1−x) + high` on the upper half.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaleParams {
    pub low_anchor: f64,
    pub high_anchor: f64,
}

impl Default for RescaleParams {
    fn default() -> Self {
        Self {
            low_anchor: 0.6,
            high_anchor: 1e-3,
        }
    }
}

/// `φ(x) = α_x·x` for `x ≤ 0.5`, `1 − β_x(1−x)` above. Strictly increasing
/// on `[0,1]` with `φ(0)=0`, `φ(0.5)=0.5`, `φ(1)=1`.
pub fn rescale_phi<T: Scalar>(x: T, params: &RescaleParams) -> Result<T, AnalysisError> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(AnalysisError::Domain(x.to_f64().unwrap_or(f64::NAN)));
    }
    let two = T::lit(2.0);
    let one = T::one();
    if x <= T::lit(0.5) {
        let a = T::lit(params.low_anchor);
        let alpha = two * (one - a) * x + a;
        Ok(alpha * x)
    } else {
        let b = T::lit(params.high_anchor);
        let beta = two * (one - b) * (one - x) + b;
        Ok(one - beta * (one - x))
    }
}

pub fn rescale_all<T: Scalar>(xs: &[T], params: &RescaleParams) -> Result<Vec<T>, AnalysisError> {
    xs.iter().map(|&x| rescale_phi(x, params)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KendallResult {
    pub tau: f64,
    pub p_value: f64,
    pub n: usize,
}

fn sign<T: Scalar>(d: T) -> i64 {
    if d > T::zero() {
        1
    } else if d < T::zero() {
        -1
    } else {
        0
    }
}

/// Pair tallies: (Σ sign·sign, pairs tied in a, pairs tied in b).
fn pair_tallies<T: Scalar>(a: &[T], b: &[T]) -> (i64, u64, u64) {
    (0..a.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = (0i64, 0u64, 0u64);
            for j in i + 1..a.len() {
                let sa = sign(a[i] - a[j]);
                let sb = sign(b[i] - b[j]);
                acc.0 += sa * sb;
                acc.1 += u64::from(sa == 0);
                acc.2 += u64::from(sb == 0);
            }
            acc
        })
        .reduce(|| (0, 0, 0), |x, y| (x.0 + y.0, x.1 + y.1, x.2 + y.2))
}

fn tie_groups<T: Scalar>(v: &[T]) -> Vec<u64> {
    let mut s = v.to_vec();
    s.sort_by(|x, y| x.partial_cmp(y).expect("finite values"));
    s.chunk_by(|x, y| x == y)
        .map(|g| g.len() as u64)
        .filter(|&t| t > 1)
        .collect()
}

const EXACT_MAX_N: usize = 8;

/// Paired Kendall tau-b with a two-sided p-value: exact over all
/// permutations for `n ≤ 8`, otherwise the tie-corrected normal
/// approximation with a continuity correction of 1 on the pair statistic.
pub fn kendall_paired<T: Scalar>(a: &[T], b: &[T]) -> Result<KendallResult, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::Length {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(AnalysisError::InvalidInput("need at least 2 pairs".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidInput("non-finite value".into()));
    }
    let (s, ties_a, ties_b) = pair_tallies(a, b);
    let n0 = (n as u64) * (n as u64 - 1) / 2;
    if ties_a == n0 || ties_b == n0 {
        return Err(AnalysisError::UndefinedTau);
    }
    let tau = s as f64 / (((n0 - ties_a) as f64) * ((n0 - ties_b) as f64)).sqrt();

    let p_value = if n <= EXACT_MAX_N {
        let total = (1..=n as u64).product::<u64>();
        let extreme = (0..n)
            .permutations(n)
            .filter(|perm| {
                let permuted: Vec<T> = perm.iter().map(|&k| b[k]).collect();
                pair_tallies(a, &permuted).0.abs() >= s.abs()
            })
            .count() as f64;
        extreme / total as f64
    } else {
        let nf = n as f64;
        let ta = tie_groups(a);
        let tb = tie_groups(b);
        let sum = |g: &[u64], f: &dyn Fn(f64) -> f64| g.iter().map(|&t| f(t as f64)).sum::<f64>();
        let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
        let vt = sum(&ta, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
        let vu = sum(&tb, &|t| t * (t - 1.0) * (2.0 * t + 5.0));
        let t2 =
            sum(&ta, &|t| t * (t - 1.0) * (t - 2.0)) * sum(&tb, &|t| t * (t - 1.0) * (t - 2.0));
        let t1 = sum(&ta, &|t| t * (t - 1.0)) * sum(&tb, &|t| t * (t - 1.0));
        let var = (v0 - vt - vu) / 18.0
            + t2 / (9.0 * nf * (nf - 1.0) * (nf - 2.0))
            + t1 / (2.0 * nf * (nf - 1.0));
        let z = ((s.abs() as f64) - 1.0).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
    };
    Ok(KendallResult { tau, p_value, n })
}

/// One aligned row of a two-model FAR/TS comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow<T> {
    pub threshold: T,
    pub far_a: Option<f64>,
    pub ts_a: Option<f64>,
    pub far_b: Option<f64>,
    pub ts_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison<T> {
    pub rows: Vec<CompareRow<T>>,
    /// Grid point nearest to the marked threshold, per model.
    pub marked_a: SweepPoint<T>,
    pub marked_b: SweepPoint<T>,
    pub warnings: Vec<String>,
}

fn same_grid<T: Scalar>(a: &ThresholdSweep<T>, b: &ThresholdSweep<T>) -> bool {
    a.len() == b.len()
        && a.points
            .iter()
            .zip(&b.points)
            .all(|(p, q)| p.threshold == q.threshold)
}

/// Aligns two sweeps threshold by threshold. Sweeps on different grids are
/// resampled onto the coarser one by nearest threshold, with a warning.
pub fn tsfar_compare<T: Scalar>(
    sweep_a: &ThresholdSweep<T>,
    sweep_b: &ThresholdSweep<T>,
    tau_mark: T,
) -> Result<Comparison<T>, AnalysisError> {
    if sweep_a.is_empty() || sweep_b.is_empty() {
        return Err(AnalysisError::InvalidInput("empty sweep".into()));
    }
    if !(tau_mark >= T::zero() && tau_mark <= T::one()) {
        return Err(AnalysisError::Domain(tau_mark.as_f64()));
    }
    let mut warnings = Vec::new();
    let rows = if same_grid(sweep_a, sweep_b) {
        sweep_a
            .points
            .iter()
            .zip(&sweep_b.points)
            .map(|(p, q)| CompareRow {
                threshold: p.threshold,
                far_a: p.far,
                ts_a: p.ts,
                far_b: q.far,
                ts_b: q.ts,
            })
            .collect()
    } else {
        let (coarse, fine, coarse_is_a) = if sweep_a.len() <= sweep_b.len() {
            (sweep_a, sweep_b, true)
        } else {
            (sweep_b, sweep_a, false)
        };
        warnings.push(format!(
            "threshold grids differ ({} vs {} points); resampled onto the {}-point grid",
            sweep_a.len(),
            sweep_b.len(),
            coarse.len()
        ));
        coarse
            .points
            .iter()
            .map(|c| {
                let f = fine.nearest(c.threshold).expect("non-empty sweep");
                let (pa, pb) = if coarse_is_a { (c, f) } else { (f, c) };
                CompareRow {
                    threshold: c.threshold,
                    far_a: pa.far,
                    ts_a: pa.ts,
                    far_b: pb.far,
                    ts_b: pb.ts,
                }
            })
            .collect()
    };
    Ok(Comparison {
        rows,
        marked_a: sweep_a.nearest(tau_mark).expect("non-empty sweep").clone(),
        marked_b: sweep_b.nearest(tau_mark).expect("non-empty sweep").clone(),
        warnings,
    })
}

impl<T: Scalar> Comparison<T> {
    /// `compare.csv`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "threshold,far_a,ts_a,far_b,ts_b")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                format_sig17(r.threshold),
                opt_cell(r.far_a),
                opt_cell(r.ts_a),
                opt_cell(r.far_b),
                opt_cell(r.ts_b)
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sweep;

    #[test]
    fn phi_anchor_values() {
        let p = RescaleParams::default();
        let phi = |x: f64| rescale_phi(x, &p).unwrap();
        assert_eq!(phi(0.0), 0.0);
        assert!((phi(0.25) - 0.2).abs() < 1e-12);
        assert!((phi(0.5) - 0.5).abs() < 1e-12);
        assert!((phi(0.75) - 0.874875).abs() < 1e-12);
        assert!((phi(1.0) - 1.0).abs() < 1e-12);
        assert!(matches!(
            rescale_phi(1.5, &p),
            Err(AnalysisError::Domain(_))
        ));
        assert!(matches!(
            rescale_phi(-0.1, &p),
            Err(AnalysisError::Domain(_))
        ));
    }

    #[test]
    fn phi_is_strictly_increasing_and_continuous() {
        let p = RescaleParams::default();
        let grid: Vec<f64> = (0..=10_000).map(|k| k as f64 / 10_000.0).collect();
        let v = rescale_all(&grid, &p).unwrap();
        assert!(v.windows(2).all(|w| w[1] > w[0]));
        let below: f64 = rescale_phi(0.5 - 1e-12, &p).unwrap();
        let above = rescale_phi(0.5 + 1e-12, &p).unwrap();
        assert!((above - below).abs() < 1e-10);
    }

    #[test]
    fn histogram_boundaries() {
        let h = histogram_triptych(&[0.1, 0.2, 0.3, 0.9], &[1, 1, 1, 1]).unwrap();
        assert_eq!(h.positive, [2, 1, 1]);
        assert_eq!(h.negative, [0, 0, 0]);
        let h = histogram_triptych(&[0.5, 0.500001, 0.0, 1.0], &[0, 0, 0, 0]).unwrap();
        assert_eq!(h.negative, [1, 1, 2]);
    }

    #[test]
    fn kde_symmetry() {
        let values: Vec<f64> = (0..200)
            .map(|k| 0.5 + ((k as f64) * 0.37).sin() * 0.3)
            .collect();
        let mirrored: Vec<f64> = values.iter().map(|v| 1.0 - v).collect();
        let mut all = values.clone();
        all.extend(mirrored);
        let d = kde(&all, DEFAULT_KDE_GRID).unwrap();
        let m = d.values.len();
        for k in 0..m {
            assert!((d.values[k] - d.values[m - 1 - k]).abs() < 1e-10);
        }
        assert!((d.integral() - 1.0).abs() < 0.02);
    }

    #[test]
    fn kde_degenerate() {
        assert!(matches!(
            kde(&[0.3, 0.3, 0.3], 10),
            Err(AnalysisError::DegenerateSample(_))
        ));
    }

    #[test]
    fn bandwidth_falls_back_to_sd_when_iqr_is_zero() {
        let v = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let h = silverman_bandwidth(&v).unwrap();
        let sd = (1.0_f64 / 6.0 * 5.0 / 6.0 * 6.0 / 5.0).sqrt();
        assert!((h - 0.9 * sd * 6.0_f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn class_density_error_names_class() {
        let err = class_densities(&[0.1, 0.2, 0.4, 0.4], &[0, 0, 1, 1], 16).unwrap_err();
        assert_eq!(
            err,
            AnalysisError::DegenerateSample("class 1: need at least two distinct values".into())
        );
    }

    #[test]
    fn kendall_perfect_and_reversed() {
        let a: Vec<f64> = (0..30).map(|k| (k as f64 * 1.7).sin()).collect();
        let r = kendall_paired(&a, &a).unwrap();
        assert_eq!(r.tau, 1.0);
        assert!(r.p_value < 1e-6);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert_eq!(kendall_paired(&a, &neg).unwrap().tau, -1.0);
        assert_eq!(
            kendall_paired(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(AnalysisError::UndefinedTau)
        );
    }

    #[test]
    fn kendall_exact_small_sample() {
        // n = 4, perfectly concordant: only the identity permutation reaches |S| = 6
        // and the reversal reaches -6, so p = 2/24.
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = kendall_paired(&a, &a).unwrap();
        assert!((r.p_value - 2.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn compare_self_and_mismatched_grids() {
        let probs = [0.1, 0.4, 0.35, 0.8, 0.7, 0.2];
        let labels = [0, 0, 1, 1, 1, 0];
        let s = sweep(&probs, &labels, 101).unwrap();
        let c = tsfar_compare(&s, &s, 0.5).unwrap();
        assert!(c.warnings.is_empty());
        assert!(c
            .rows
            .iter()
            .all(|r| r.far_a == r.far_b && r.ts_a == r.ts_b));
        assert_eq!(c.marked_a.threshold, 0.5);

        let coarse = sweep(&probs, &labels, 11).unwrap();
        let c = tsfar_compare(&s, &coarse, 0.5).unwrap();
        assert_eq!(c.rows.len(), 11);
        assert_eq!(c.warnings.len(), 1);
        assert!(c
            .rows
            .iter()
            .all(|r| r.far_a == r.far_b && r.ts_a == r.ts_b));
    }
}
