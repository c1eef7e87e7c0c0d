//! File plumbing shared by the subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rarecast_core::scalar::format_sig17;

/// Artifacts are staged in memory and written only once every one of them
/// has been produced. Each file goes to a temporary sibling first and is
/// renamed into place; if any step fails, the files already placed by this
/// commit are removed again.
#[derive(Default)]
pub struct Artifacts {
    staged: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: impl Into<PathBuf>, bytes: impl Into<Vec<u8>>) {
        self.staged.push((path.into(), bytes.into()));
    }

    /// Stages the output of a writer callback.
    pub fn add_with<F>(&mut self, path: impl Into<PathBuf>, write: F) -> Result<()>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.add(path, buf);
        Ok(())
    }

    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut placed = Vec::new();
        for (path, bytes) in &self.staged {
            if let Err(e) = place(path, bytes) {
                for done in &placed {
                    let _ = fs::remove_file(done);
                }
                return Err(e);
            }
            placed.push(path.clone());
        }
        Ok(placed)
    }
}

fn place(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let name = path
        .file_name()
        .with_context(|| format!("{} is not a file path", path.display()))?;
    let tmp = path.with_file_name(format!(".{}.partial", name.to_string_lossy()));
    let written = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(bytes).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(e).with_context(|| format!("cannot write {}", path.display()));
    }
    Ok(())
}

pub fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

/// Probability CSV: a `prob` header and one value per row; `NA` marks a
/// row without an estimate.
pub fn write_probs(probs: &[Option<f64>]) -> Vec<u8> {
    let mut out = String::from("prob\n");
    for p in probs {
        match p {
            Some(p) => out.push_str(&format_sig17(*p)),
            None => out.push_str("NA"),
        }
        out.push('\n');
    }
    out.into_bytes()
}

pub fn read_probs(path: &Path) -> Result<Vec<Option<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let headers = reader.headers()?.clone();
    if headers.len() != 1 || &headers[0] != "prob" {
        bail!("{}: expected a single 'prob' column", path.display());
    }
    let mut probs = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed row", path.display()))?;
        let cell = &record[0];
        if cell.is_empty() || cell == "NA" {
            probs.push(None);
            continue;
        }
        let p: f64 = cell.parse().with_context(|| {
            format!(
                "{}: row {}: '{cell}' is not a number",
                path.display(),
                i + 2
            )
        })?;
        if !(0.0..=1.0).contains(&p) {
            bail!(
                "{}: row {}: probability {p} outside [0, 1]",
                path.display(),
                i + 2
            );
        }
        probs.push(Some(p));
    }
    Ok(probs)
}

/// Labels from either a dataset CSV (its `cv` column) or a one-column file.
pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let column = match headers.iter().position(|h| h == "cv") {
        Some(j) => j,
        None if headers.len() == 1 => 0,
        None => bail!(
            "{}: no 'cv' column and more than one column",
            path.display()
        ),
    };
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed row", path.display()))?;
        let cell = record.get(column).unwrap_or("");
        let label = match cell.parse::<f64>() {
            Ok(v) if v == 0.0 => 0,
            Ok(v) if v == 1.0 => 1,
            _ => bail!(
                "{}: row {}: label '{cell}' is not 0 or 1",
                path.display(),
                i + 2
            ),
        };
        labels.push(label);
    }
    Ok(labels)
}

/// `prob.<stem>.csv` next to `dir`, where `stem` drops the `.csv` suffix.
pub fn prob_path(dir: &Path, tag: Option<&str>, source: &Path) -> PathBuf {
    let name = source
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = name.strip_suffix(".csv").unwrap_or(&name);
    match tag {
        Some(tag) => dir.join(format!("prob.{tag}.{stem}.csv")),
        None => dir.join(format!("prob.{stem}.csv")),
    }
}
