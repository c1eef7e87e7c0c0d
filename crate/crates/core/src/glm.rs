//! Maximum-likelihood logistic regression fitted by Newton/IRLS, with
//! bidirectional stepwise selection of the feature subset by AIC.
//!
//! The model is `logit P(Y=1|x) = α + Σ_j β_j x_j`. Coefficients are keyed by
//! column name, so fitting and prediction never depend on column position.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::linalg::{cholesky, cholesky_solve};
use crate::scalar::Scalar;

/// Probability clamp used by the log-likelihood.
pub const PROB_CLAMP: f64 = 1e-12;
pub const DEVIANCE_TOL: f64 = 1e-8;
pub const PARAM_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 50;
pub const MAX_HALVINGS: usize = 10;
/// |parameter| above which a still-improving fit is flagged as separated.
pub const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("feature mismatch: '{0}' is not available")]
    FeatureMismatch(String),
    #[error("singular information matrix: column '{0}' is linearly dependent on the others")]
    Singular(String),
    #[error("dataset has {rows} rows but {labels} labels/values were given")]
    Length { rows: usize, labels: usize },
    #[error("invalid model document: {0}")]
    Document(String),
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(s: T) -> T {
    if s < T::zero() {
        let e = s.exp();
        e / (T::one() + e)
    } else {
        T::one() / (T::one() + (-s).exp())
    }
}

pub fn logit<T: Scalar>(q: T) -> T {
    (q / (T::one() - q)).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LogisticModel<T> {
    pub intercept: T,
    pub coefficients: BTreeMap<String, T>,
}

impl<T: Scalar> LogisticModel<T> {
    pub fn new(intercept: T, coefficients: BTreeMap<String, T>) -> Self {
        Self {
            intercept,
            coefficients,
        }
    }

    pub fn intercept_only(intercept: T) -> Self {
        Self::new(intercept, BTreeMap::new())
    }

    pub fn features(&self) -> impl Iterator<Item = &str> {
        self.coefficients.keys().map(String::as_str)
    }

    /// Linear predictor `S = α + Σ β_j x_j` for a row given by name.
    pub fn score(&self, x: &HashMap<String, T>) -> Result<T, GlmError> {
        self.coefficients
            .iter()
            .try_fold(self.intercept, |acc, (name, &beta)| {
                x.get(name)
                    .map(|&v| acc + beta * v)
                    .ok_or_else(|| GlmError::FeatureMismatch(name.clone()))
            })
    }

    fn bind(&self, data: &Dataset<T>) -> Result<Vec<(usize, T)>, GlmError> {
        self.coefficients
            .iter()
            .map(|(name, &beta)| {
                data.column_index(name)
                    .map(|j| (j, beta))
                    .ok_or_else(|| GlmError::FeatureMismatch(name.clone()))
            })
            .collect()
    }

    /// Linear predictor for every row of `data`.
    pub fn scores(&self, data: &Dataset<T>) -> Result<Vec<T>, GlmError> {
        let bound = self.bind(data)?;
        Ok(data
            .rows()
            .map(|row| {
                bound
                    .iter()
                    .fold(self.intercept, |acc, &(j, beta)| acc + beta * row[j])
            })
            .collect())
    }

    pub fn predict_proba(&self, data: &Dataset<T>) -> Result<Vec<T>, GlmError> {
        Ok(self.scores(data)?.into_iter().map(sigmoid).collect())
    }

    pub fn log_likelihood(&self, data: &Dataset<T>) -> Result<T, GlmError> {
        let probs = self.predict_proba(data)?;
        Ok(log_likelihood_of(&probs, data.labels()))
    }

    /// Analytic gradient of the log-likelihood: `Σ_i (y_i − p_i)` for the
    /// intercept and `Σ_i (y_i − p_i) x_ij` per coefficient.
    pub fn gradient(&self, data: &Dataset<T>) -> Result<(T, BTreeMap<String, T>), GlmError> {
        let bound = self.bind(data)?;
        let probs = self.predict_proba(data)?;
        let mut g0 = T::zero();
        let mut g = vec![T::zero(); bound.len()];
        for ((row, &y), p) in data.rows().zip(data.labels()).zip(probs) {
            let r = T::count(y as usize) - p;
            g0 = g0 + r;
            for (gj, &(j, _)) in g.iter_mut().zip(&bound) {
                *gj = *gj + r * row[j];
            }
        }
        let named = self.coefficients.keys().cloned().zip(g).collect();
        Ok((g0, named))
    }
}

fn clamp_eps<T: Scalar>() -> T {
    T::lit(PROB_CLAMP).max(T::epsilon())
}

/// `Σ y ln p + (1−y) ln(1−p)` with probabilities clamped to `[ε, 1−ε]`.
pub fn log_likelihood_of<T: Scalar>(probs: &[T], labels: &[u8]) -> T {
    let eps = clamp_eps::<T>();
    let hi = T::one() - eps;
    probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.max(eps).min(hi);
            if y == 1 {
                p.ln()
            } else {
                (T::one() - p).ln()
            }
        })
        .sum()
}

/// Fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<T> {
    pub log_likelihood: T,
    pub deviance: T,
    pub aic: T,
    /// Estimated parameters including the intercept.
    pub n_parameters: usize,
    pub n_iterations: usize,
    pub converged: bool,
    pub separation_detected: bool,
    /// Deviance after each accepted iteration, starting with the initial point.
    pub deviance_history: Vec<T>,
}

pub fn aic_value<T: Scalar>(log_likelihood: T, n_parameters: usize) -> T {
    T::lit(-2.0) * log_likelihood + T::lit(2.0) * T::count(n_parameters)
}

/// `−2·logL + 2k`.
pub fn aic<T: Scalar>(report: &FitReport<T>) -> T {
    aic_value(report.log_likelihood, report.n_parameters)
}

struct Design<T> {
    /// Row-major n×k with a leading column of ones.
    x: Vec<T>,
    y: Vec<T>,
    n: usize,
    k: usize,
}

impl Design<f64> {
    /// Fits run in double precision whatever the storage type.
    fn build<T: Scalar>(data: &Dataset<T>, columns: &[usize]) -> Self {
        let k = columns.len() + 1;
        let n = data.n_rows();
        let mut x = Vec::with_capacity(n * k);
        for row in data.rows() {
            x.push(1.0);
            x.extend(columns.iter().map(|&j| row[j].as_f64()));
        }
        let y = data.labels().iter().map(|&l| f64::from(l)).collect();
        Self { x, y, n, k }
    }
}

impl<T: Scalar> Design<T> {
    fn row(&self, i: usize) -> &[T] {
        &self.x[i * self.k..(i + 1) * self.k]
    }

    fn probs(&self, beta: &[T]) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let eta = self
                    .row(i)
                    .iter()
                    .zip(beta)
                    .fold(T::zero(), |acc, (&x, &b)| acc + x * b);
                sigmoid(eta)
            })
            .collect()
    }

    fn deviance(&self, probs: &[T]) -> T {
        let eps = clamp_eps::<T>();
        let hi = T::one() - eps;
        let ll: T = probs
            .iter()
            .zip(&self.y)
            .map(|(&p, &y)| {
                let p = p.max(eps).min(hi);
                if y > T::lit(0.5) {
                    p.ln()
                } else {
                    (T::one() - p).ln()
                }
            })
            .sum();
        T::lit(-2.0) * ll
    }

    /// Gradient `Xᵀ(y − p)` and information `Xᵀ W X`.
    fn newton_system(&self, probs: &[T]) -> (Vec<T>, Vec<T>) {
        let k = self.k;
        let mut grad = vec![T::zero(); k];
        let mut info = vec![T::zero(); k * k];
        for i in 0..self.n {
            let x = self.row(i);
            let p = probs[i];
            let r = self.y[i] - p;
            let w = p * (T::one() - p);
            for a in 0..k {
                grad[a] = grad[a] + r * x[a];
                let wx = w * x[a];
                for b in 0..=a {
                    info[a * k + b] = info[a * k + b] + wx * x[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[b * k + a] = info[a * k + b];
            }
        }
        (grad, info)
    }

    /// Rank check on the unweighted cross-product, normalised to unit
    /// diagonal. Returns the first dependent column (0 = intercept).
    fn dependent_column(&self) -> Option<usize> {
        let k = self.k;
        let mut gram = vec![T::zero(); k * k];
        for i in 0..self.n {
            let x = self.row(i);
            for a in 0..k {
                for b in 0..=a {
                    gram[a * k + b] = gram[a * k + b] + x[a] * x[b];
                }
            }
        }
        let diag: Vec<T> = (0..k).map(|a| gram[a * k + a]).collect();
        if let Some(a) = diag.iter().position(|&d| !(d > T::zero())) {
            return Some(a);
        }
        for a in 0..k {
            for b in 0..=a {
                let v = gram[a * k + b] / (diag[a] * diag[b]).sqrt();
                gram[a * k + b] = v;
                gram[b * k + a] = v;
            }
        }
        cholesky(&mut gram, k, rank_tol::<T>()).err()
    }
}

fn rank_tol<T: Scalar>() -> T {
    T::lit(1e-10).max(T::epsilon() * T::lit(100.0))
}

/// Fits the model on the named features (intercept always included).
pub fn fit_irls<T: Scalar, S: AsRef<str>>(
    data: &Dataset<T>,
    features: &[S],
) -> Result<(LogisticModel<T>, FitReport<T>), GlmError> {
    fit_irls_from(data, features, None)
}

/// As [`fit_irls`], optionally starting Newton iterations from `start`
/// (features absent from `start` begin at zero).
pub fn fit_irls_from<T: Scalar, S: AsRef<str>>(
    data: &Dataset<T>,
    features: &[S],
    start: Option<&LogisticModel<T>>,
) -> Result<(LogisticModel<T>, FitReport<T>), GlmError> {
    let names: Vec<&str> = features.iter().map(AsRef::as_ref).collect();
    let columns: Vec<usize> = names
        .iter()
        .map(|name| {
            data.column_index(name)
                .ok_or_else(|| GlmError::FeatureMismatch(name.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let design = Design::build(data, &columns);
    if let Some(col) = design.dependent_column() {
        let name = if col == 0 {
            "(intercept)"
        } else {
            names[col - 1]
        };
        return Err(GlmError::Singular(name.to_string()));
    }

    let k = design.k;
    let mut beta = vec![0.0; k];
    if let Some(m) = start {
        beta[0] = m.intercept.as_f64();
        for (b, name) in beta[1..].iter_mut().zip(&names) {
            *b = m.coefficients.get(*name).map_or(0.0, |v| v.as_f64());
        }
    }

    let dev_tol = |dev: f64| DEVIANCE_TOL.max(f64::EPSILON * 16.0 * dev.abs());
    let param_tol = PARAM_TOL;
    let bound = SEPARATION_BOUND;
    let mut probs = design.probs(&beta);
    let mut dev = design.deviance(&probs);
    let mut history = vec![dev];
    let mut converged = false;
    let mut separation = false;
    let mut iterations = 0;

    for iter in 1..=MAX_ITERATIONS {
        let (grad, mut info) = design.newton_system(&probs);
        if let Err(col) = cholesky(&mut info, k, 0.0) {
            if separation || beta.iter().any(|b| b.abs() > bound) {
                separation = true;
                break;
            }
            let name = if col == 0 {
                "(intercept)"
            } else {
                names[col - 1]
            };
            return Err(GlmError::Singular(name.to_string()));
        }
        let delta = cholesky_solve(&info, k, &grad);

        let mut step = 1.0;
        let mut accepted = None;
        let mut last_dev = dev;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = beta
                .iter()
                .zip(&delta)
                .map(|(&b, &d)| b + step * d)
                .collect();
            let cand_probs = design.probs(&cand);
            let cand_dev = design.deviance(&cand_probs);
            last_dev = cand_dev;
            if cand_dev <= dev {
                accepted = Some((cand, cand_probs, cand_dev, step));
                break;
            }
            step = step * 0.5;
        }
        let Some((cand, cand_probs, cand_dev, step)) = accepted else {
            // No step decreases the deviance: either at the optimum up to
            // rounding, or stuck.
            converged = (last_dev - dev).abs() < dev_tol(dev);
            break;
        };

        iterations = iter;
        let change = dev - cand_dev;
        let max_step = delta.iter().fold(0.0_f64, |m, &d| m.max((d * step).abs()));
        beta = cand;
        probs = cand_probs;
        dev = cand_dev;
        history.push(dev);
        if change > 0.0 && beta.iter().any(|b| b.abs() > bound) {
            separation = true;
        }
        if change.abs() < dev_tol(dev) || max_step < param_tol {
            converged = true;
            break;
        }
    }

    let model = LogisticModel::new(
        T::lit(beta[0]),
        names
            .iter()
            .map(|s| s.to_string())
            .zip(beta[1..].iter().map(|&b| T::lit(b)))
            .collect(),
    );
    let log_likelihood = -0.5 * dev;
    let report = FitReport {
        log_likelihood: T::lit(log_likelihood),
        deviance: T::lit(dev),
        aic: T::lit(aic_value(log_likelihood, k)),
        n_parameters: k,
        n_iterations: iterations,
        converged,
        separation_detected: separation,
        deviance_history: history.into_iter().map(T::lit).collect(),
    };
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepMove {
    /// Initial model.
    Start,
    Drop(String),
    Add(String),
}

/// One accepted step of the stepwise search.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<T> {
    pub step: usize,
    pub chosen: StepMove,
    pub aic: T,
    pub features: Vec<String>,
    /// Candidate moves whose fit failed at this step, with the reason.
    pub skipped: Vec<(StepMove, String)>,
}

struct Fitted<T> {
    features: Vec<String>,
    model: LogisticModel<T>,
    report: FitReport<T>,
}

fn fit_subset<T: Scalar>(
    data: &Dataset<T>,
    features: Vec<String>,
    start: Option<&LogisticModel<T>>,
) -> Result<Fitted<T>, GlmError> {
    let (model, report) = fit_irls_from(data, &features, start)?;
    Ok(Fitted {
        features,
        model,
        report,
    })
}

/// Bidirectional stepwise selection over all columns of `data`, starting
/// from the full model.
///
/// Each step fits every single-feature deletion and addition; the move with
/// the strictly smallest AIC is taken if it improves on the current AIC.
/// Ties prefer deletions, then the lexicographically smallest name. If the
/// full model cannot be fitted the search starts from the intercept-only
/// model instead.
pub fn stepwise_select<T: Scalar>(
    data: &Dataset<T>,
) -> Result<(LogisticModel<T>, FitReport<T>, Vec<StepRecord<T>>), GlmError> {
    let mut all: Vec<String> = data.column_names().to_vec();
    all.sort();
    let dataset_order = |mut subset: Vec<String>| {
        subset.sort_by_key(|name| data.column_index(name));
        subset
    };

    let mut start_skipped = Vec::new();
    let mut current = match fit_subset(data, dataset_order(all.clone()), None) {
        Ok(f) => f,
        Err(e) => {
            start_skipped.push((StepMove::Start, format!("full model: {e}")));
            fit_subset(data, Vec::new(), None)?
        }
    };
    let mut trace = vec![StepRecord {
        step: 0,
        chosen: StepMove::Start,
        aic: current.report.aic,
        features: current.features.clone(),
        skipped: start_skipped,
    }];

    loop {
        let mut moves: Vec<StepMove> = Vec::new();
        let mut in_model: Vec<&String> = current.features.iter().collect();
        in_model.sort();
        moves.extend(in_model.iter().map(|f| StepMove::Drop((*f).clone())));
        moves.extend(
            all.iter()
                .filter(|f| !current.features.contains(f))
                .map(|f| StepMove::Add(f.clone())),
        );
        if moves.is_empty() {
            break;
        }

        let results: Vec<Result<Fitted<T>, GlmError>> = moves
            .par_iter()
            .map(|mv| {
                let subset = match mv {
                    StepMove::Drop(f) => current
                        .features
                        .iter()
                        .filter(|g| *g != f)
                        .cloned()
                        .collect(),
                    StepMove::Add(f) => {
                        let mut s = current.features.clone();
                        s.push(f.clone());
                        s
                    }
                    StepMove::Start => unreachable!(),
                };
                fit_subset(data, dataset_order(subset), Some(&current.model))
            })
            .collect();

        let mut skipped = Vec::new();
        let mut best: Option<(usize, Fitted<T>)> = None;
        for (idx, result) in results.into_iter().enumerate() {
            match result {
                Ok(f) => {
                    let better = match &best {
                        None => f.report.aic < current.report.aic,
                        Some((_, b)) => f.report.aic < b.report.aic,
                    };
                    if better {
                        best = Some((idx, f));
                    }
                }
                Err(e) => skipped.push((moves[idx].clone(), e.to_string())),
            }
        }
        let Some((idx, next)) = best else {
            if let Some(last) = trace.last_mut() {
                last.skipped.extend(skipped);
            }
            break;
        };
        current = next;
        trace.push(StepRecord {
            step: trace.len(),
            chosen: moves[idx].clone(),
            aic: current.report.aic,
            features: current.features.clone(),
            skipped,
        });
    }

    Ok((current.model, current.report, trace))
}

/// Persisted form of a fitted logistic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    pub fit: FitSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub log_likelihood: f64,
    pub aic: f64,
    pub converged: bool,
}

impl ModelDocument {
    pub fn new<T: Scalar>(model: &LogisticModel<T>, report: &FitReport<T>) -> Self {
        Self {
            intercept: model.intercept.as_f64(),
            coefficients: model
                .coefficients
                .iter()
                .map(|(k, v)| (k.clone(), v.as_f64()))
                .collect(),
            fit: FitSummary {
                log_likelihood: report.log_likelihood.as_f64(),
                aic: report.aic.as_f64(),
                converged: report.converged,
            },
        }
    }

    pub fn model<T: Scalar>(&self) -> LogisticModel<T> {
        LogisticModel::new(
            T::lit(self.intercept),
            self.coefficients
                .iter()
                .map(|(k, &v)| (k.clone(), T::lit(v)))
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GlmError> {
        let doc: Self =
            serde_json::from_str(text).map_err(|e| GlmError::Document(e.to_string()))?;
        let finite = doc.intercept.is_finite() && doc.coefficients.values().all(|v| v.is_finite());
        if !finite {
            return Err(GlmError::Document("non-finite coefficient".into()));
        }
        Ok(doc)
    }
}
