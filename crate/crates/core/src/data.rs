//! Labeled tabular datasets in the `...,cv` CSV layout: loading, writing,
//! class summaries, downsampling of the majority class and a synthetic
//! generator with a known logistic ground truth.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::glm::sigmoid;
use crate::scalar::Scalar;

/// Name of the label column. Always last in the file.
pub const LABEL_COLUMN: &str = "cv";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error(
        "parse error at line {line}, column '{column}': cannot read '{value}' as a finite number"
    )]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("label error at line {line}: 'cv' must be 0 or 1, found '{value}'")]
    Label { line: u64, value: String },
    #[error("structure error at line {line}: expected {expected} fields, found {found}")]
    Structure {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("cannot rebalance: dataset has no minority (positive) observations")]
    EmptyMinority,
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("intercept calibration did not converge after {iterations} bisection steps")]
    Calibration { iterations: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("write error: {0}")]
    Write(String),
}

/// n×p table of finite features with a binary label per row.
///
/// Features are stored row-major. A `Dataset` is immutable once built; every
/// constructor enforces the invariants (labels in {0,1}, finite values,
/// distinct column names none of which is `cv`, n ≥ 1, p ≥ 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    features: Vec<T>,
    labels: Vec<u8>,
    column_names: Vec<String>,
    provenance: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        rows: Vec<Vec<T>>,
        labels: Vec<u8>,
        column_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        let p = column_names.len();
        if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
            return Err(DataError::Invalid(format!(
                "row {i} has {} values but there are {p} columns",
                row.len()
            )));
        }
        let features = rows.into_iter().flatten().collect();
        Self::from_flat(features, labels, column_names, provenance)
    }

    /// Builds a dataset from a row-major feature buffer of length n·p.
    pub fn from_flat(
        features: Vec<T>,
        labels: Vec<u8>,
        column_names: Vec<String>,
        provenance: impl Into<String>,
    ) -> Result<Self, DataError> {
        let p = column_names.len();
        let n = labels.len();
        if n == 0 {
            return Err(DataError::Invalid("dataset has no rows".into()));
        }
        if p == 0 {
            return Err(DataError::Invalid("dataset has no feature columns".into()));
        }
        if features.len() != n * p {
            return Err(DataError::Invalid(format!(
                "feature buffer has {} values, expected {n}×{p}",
                features.len()
            )));
        }
        validate_names(&column_names)?;
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(DataError::Invalid(format!(
                "label {} at row {i} is not 0 or 1",
                labels[i]
            )));
        }
        if let Some(k) = features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::Invalid(format!(
                "non-finite value at row {}, column '{}'",
                k / p,
                column_names[k % p]
            )));
        }
        Ok(Self {
            features,
            labels,
            column_names,
            provenance: provenance.into(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.column_names.len()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let p = self.n_features();
        &self.features[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.features.chunks_exact(self.n_features())
    }

    #[inline]
    pub fn value(&self, row: usize, column: usize) -> T {
        self.features[row * self.n_features() + column]
    }

    pub fn column(&self, column: usize) -> impl Iterator<Item = T> + '_ {
        self.rows().map(move |r| r[column])
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, row: usize) -> u8 {
        self.labels[row]
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn with_provenance(mut self, provenance: impl Into<String>) -> Self {
        self.provenance = provenance.into();
        self
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self, DataError> {
        if names.len() != self.n_features() {
            return Err(DataError::Invalid(format!(
                "{} names given for {} columns",
                names.len(),
                self.n_features()
            )));
        }
        validate_names(&names)?;
        self.column_names = names;
        Ok(self)
    }

    /// New dataset made of the given rows, in the given order. Indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self, DataError> {
        let mut features = Vec::with_capacity(indices.len() * self.n_features());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n_rows() {
                return Err(DataError::Invalid(format!("row index {i} out of range")));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::from_flat(
            features,
            labels,
            self.column_names.clone(),
            self.provenance.clone(),
        )
    }

    /// New dataset with the columns reordered as `order` (indices into the
    /// current columns).
    pub fn select_columns(&self, order: &[usize]) -> Result<Self, DataError> {
        if let Some(&j) = order.iter().find(|&&j| j >= self.n_features()) {
            return Err(DataError::Invalid(format!("column index {j} out of range")));
        }
        let features = self
            .rows()
            .flat_map(|r| order.iter().map(move |&j| r[j]))
            .collect();
        let names = order
            .iter()
            .map(|&j| self.column_names[j].clone())
            .collect();
        Self::from_flat(
            features,
            self.labels.clone(),
            names,
            self.provenance.clone(),
        )
    }
}

fn validate_names(names: &[String]) -> Result<(), DataError> {
    let mut seen = HashSet::new();
    for name in names {
        if name == LABEL_COLUMN {
            return Err(DataError::Schema(format!(
                "feature column may not be named '{LABEL_COLUMN}'"
            )));
        }
        if name.is_empty() {
            return Err(DataError::Schema("empty column name".into()));
        }
        if !seen.insert(name.as_str()) {
            return Err(DataError::Schema(format!("duplicate column name '{name}'")));
        }
    }
    Ok(())
}

/// Loads a CSV file whose header ends in `cv`.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_csv(BufReader::new(file), path.display().to_string())
}

pub fn read_csv<T: Scalar, R: Read>(
    reader: R,
    provenance: impl Into<String>,
) -> Result<Dataset<T>, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();

    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(DataError::Schema(format!("unreadable header: {e}"))),
        None => return Err(DataError::Schema("missing header line".into())),
    };
    let names: Vec<String> = header.iter().map(str::to_string).collect();
    if names.len() < 2 || names.last().map(String::as_str) != Some(LABEL_COLUMN) {
        return Err(DataError::Schema(format!(
            "header must list at least one feature followed by '{LABEL_COLUMN}', found '{}'",
            names.join(",")
        )));
    }
    let width = names.len();
    let p = width - 1;
    let feature_names = names[..p].to_vec();
    validate_names(&feature_names)?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in records {
        let record = record.map_err(|e| DataError::Schema(format!("malformed CSV: {e}")))?;
        let line = record.position().map_or(0, |pos| pos.line());
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != width {
            return Err(DataError::Structure {
                line,
                expected: width,
                found: record.len(),
            });
        }
        for (j, cell) in record.iter().take(p).enumerate() {
            let value = cell
                .parse::<T>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::Parse {
                    line,
                    column: names[j].clone(),
                    value: cell.to_string(),
                })?;
            features.push(value);
        }
        let cell = &record[p];
        let label = cell.parse::<f64>().map_err(|_| DataError::Parse {
            line,
            column: LABEL_COLUMN.into(),
            value: cell.to_string(),
        })?;
        labels.push(match label {
            l if l == 0.0 => 0,
            l if l == 1.0 => 1,
            _ => {
                return Err(DataError::Label {
                    line,
                    value: cell.to_string(),
                })
            }
        });
    }
    if labels.is_empty() {
        return Err(DataError::Invalid(
            "file has a header but no data rows".into(),
        ));
    }
    Dataset::from_flat(features, labels, feature_names, provenance)
}

/// Writes `data` with full round-trip precision; the header ends in `,cv`.
pub fn write_csv<T: Scalar>(data: &Dataset<T>, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = BufWriter::new(file);
    write_csv_to(data, &mut out)?;
    out.flush().map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_csv_to<T: Scalar, W: Write>(data: &Dataset<T>, writer: W) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let werr = |e: csv::Error| DataError::Write(e.to_string());
    wtr.write_record(
        data.column_names()
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(LABEL_COLUMN)),
    )
    .map_err(werr)?;
    let mut cells = Vec::with_capacity(data.n_features() + 1);
    for (row, &label) in data.rows().zip(data.labels()) {
        cells.clear();
        cells.extend(row.iter().map(|v| v.to_string()));
        cells.push(label.to_string());
        wtr.write_record(&cells).map_err(werr)?;
    }
    wtr.flush().map_err(|e| DataError::Write(e.to_string()))
}

/// Class counts of a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSummary {
    pub n_pos: usize,
    pub n_neg: usize,
    pub prevalence: f64,
}

pub fn class_counts<T: Scalar>(data: &Dataset<T>) -> ClassSummary {
    let n_pos = data.labels().iter().filter(|&&y| y == 1).count();
    let n = data.n_rows();
    ClassSummary {
        n_pos,
        n_neg: n - n_pos,
        prevalence: n_pos as f64 / n as f64,
    }
}

/// Target ratio `#minority / #sampled majority` for downsampling, with the
/// seed of the draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RebalanceSpec {
    ratio: f64,
    seed: u64,
}

impl RebalanceSpec {
    pub fn new(ratio: f64, seed: u64) -> Result<Self, DataError> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(DataError::InvalidSpec(format!(
                "ratio must lie in (0, 1], got {ratio}"
            )));
        }
        Ok(Self { ratio, seed })
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Source row indices of the rebalanced sample: every positive row in file
/// order, followed by `min(round(n_pos / ratio), n_neg)` negative rows drawn
/// without replacement (kept in file order).
pub fn rebalance_indices<T: Scalar>(
    data: &Dataset<T>,
    spec: &RebalanceSpec,
) -> Result<Vec<usize>, DataError> {
    let (minority, majority): (Vec<usize>, Vec<usize>) =
        (0..data.n_rows()).partition(|&i| data.label(i) == 1);
    if minority.is_empty() {
        return Err(DataError::EmptyMinority);
    }
    let wanted = (minority.len() as f64 / spec.ratio).round() as usize;
    let take = wanted.min(majority.len());

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut picked = index::sample(&mut rng, majority.len(), take).into_vec();
    picked.sort_unstable();

    let mut out = minority;
    out.extend(picked.into_iter().map(|k| majority[k]));
    Ok(out)
}

/// Keeps all positive rows and downsamples negatives without replacement.
pub fn rebalance<T: Scalar>(
    data: &Dataset<T>,
    spec: &RebalanceSpec,
) -> Result<Dataset<T>, DataError> {
    let indices = rebalance_indices(data, spec)?;
    Ok(data.select_rows(&indices)?.with_provenance(format!(
        "{} rebalanced(ratio={}, seed={})",
        data.provenance(),
        spec.ratio,
        spec.seed
    )))
}

/// Parameters of the synthetic logistic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub p: usize,
    pub true_coefficients: Vec<f64>,
    pub target_prevalence: f64,
    pub mislabel_rate: f64,
    pub seed: u64,
}

const PILOT_SIZE: usize = 100_000;
const CALIBRATION_TOLERANCE: f64 = 1e-3;
const MAX_BISECTIONS: usize = 200;

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.n == 0 || self.p == 0 {
            return Err(DataError::InvalidSpec("n and p must be positive".into()));
        }
        if self.true_coefficients.len() != self.p {
            return Err(DataError::InvalidSpec(format!(
                "{} coefficients given for p = {}",
                self.true_coefficients.len(),
                self.p
            )));
        }
        if self.true_coefficients.iter().any(|b| !b.is_finite()) {
            return Err(DataError::InvalidSpec("coefficients must be finite".into()));
        }
        if !(self.target_prevalence > 0.0 && self.target_prevalence < 1.0) {
            return Err(DataError::InvalidSpec(format!(
                "target prevalence must lie in (0, 1), got {}",
                self.target_prevalence
            )));
        }
        if !(self.mislabel_rate >= 0.0 && self.mislabel_rate < 0.5) {
            return Err(DataError::InvalidSpec(format!(
                "mislabel rate must lie in [0, 0.5), got {}",
                self.mislabel_rate
            )));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Intercept α* such that the mean of `sigmoid(α* + β·x)` over a pilot sample
/// of standard-normal rows matches the target prevalence.
pub fn calibrate_intercept(spec: &SynthSpec) -> Result<f64, DataError> {
    spec.validate()?;
    let mut rng = spec.rng(0);
    let scores: Vec<f64> = (0..PILOT_SIZE)
        .map(|_| {
            spec.true_coefficients
                .iter()
                .map(|b| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    b * z
                })
                .sum()
        })
        .collect();
    let mean_prob =
        |alpha: f64| scores.iter().map(|s| sigmoid(alpha + s)).sum::<f64>() / scores.len() as f64;
    let target = spec.target_prevalence;

    let (mut lo, mut hi) = (-1.0_f64, 1.0_f64);
    while mean_prob(lo) > target && lo > -1e6 {
        lo *= 2.0;
    }
    while mean_prob(hi) < target && hi < 1e6 {
        hi *= 2.0;
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let gap = mean_prob(mid) - target;
        if gap.abs() < 1e-12 || hi - lo < 1e-13 {
            return Ok(mid);
        }
        if gap < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if (mean_prob(mid) - target).abs() <= CALIBRATION_TOLERANCE {
        Ok(mid)
    } else {
        Err(DataError::Calibration {
            iterations: MAX_BISECTIONS,
        })
    }
}

/// Draws a dataset with standard-normal features and labels from a logistic
/// model with the given slopes and a calibrated intercept, then flips each
/// label with probability `mislabel_rate`. Columns are named `x1..xp`.
pub fn synth_generate<T: Scalar>(spec: &SynthSpec) -> Result<Dataset<T>, DataError> {
    let alpha = calibrate_intercept(spec)?;
    let mut rng = spec.rng(1);
    let mut features = Vec::with_capacity(spec.n * spec.p);
    let mut labels = Vec::with_capacity(spec.n);
    let mut row = vec![0.0_f64; spec.p];
    for _ in 0..spec.n {
        for x in row.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        let s: f64 = alpha
            + row
                .iter()
                .zip(&spec.true_coefficients)
                .map(|(x, b)| x * b)
                .sum::<f64>();
        let mut y = u8::from(rng.random::<f64>() < sigmoid(s));
        if rng.random::<f64>() < spec.mislabel_rate {
            y = 1 - y;
        }
        features.extend(row.iter().map(|&v| T::lit(v)));
        labels.push(y);
    }
    let names = (1..=spec.p).map(|j| format!("x{j}")).collect();
    Dataset::from_flat(
        features,
        labels,
        names,
        format!("synthetic(seed={})", spec.seed),
    )
}

/// The 41 explanatory variables of the satellite cloud-system database.
pub const APPENDIX_VARIABLES: [&str; 41] = [
    // temperature group
    "TsBT.0.0",
    "toTmoyBT.0.0",
    "Tmin.0.30",
    "toTmin.0.0",
    "toTmin.0.15",
    "toTmin.0.30",
    "stTmoyTminBT.0.0",
    "stTmoyTminBT.0.15",
    "stTmoyTminST.0.0",
    "stTmoyTminST.0.15",
    "stTmoyTminST.0.30",
    "stTsTmoyBT.0.0",
    "stTsTmoyBT.0.15",
    "stTsTmoyBT.0.30",
    "stTsTmoyST.0.0",
    "stTsTmoyST.0.15",
    "stTsTmoyST.0.30",
    // morphological group
    "Qgp95BT.0.0",
    "Qgp95BT.0.15",
    "Qgp95BT.0.30",
    "Qgp95BT.0.0.15",
    "Qgp95BT.0.15.30",
    "Gsp95ST.0.0.15",
    "Gsp95ST.0.15.30",
    "VtproT.0.0",
    "VtproT.0.0.15",
    "VtproT.0.15.30",
    "RdaBT.0.0",
    "RdaBT.0.15",
    "RdaBT.0.30",
    "RdaBT.0.0.15",
    "RdaBT.0.15.30",
    "SBT.0.0",
    "SBT.0.30",
    "SBT.0.0.15",
    "SBT.0.15.30",
    "SST.0.0",
    "SST.0.15",
    "SST.0.30",
    "SST.0.0.15",
    "SST.0.15.30",
];

/// Canonical column names for a dataset in the satellite layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaDescriptor {
    pub canonical_names: Vec<String>,
}

impl SchemaDescriptor {
    pub fn appendix41() -> Self {
        Self {
            canonical_names: APPENDIX_VARIABLES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.canonical_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical_names.is_empty()
    }
}
