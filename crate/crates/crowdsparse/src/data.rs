//! Dataset container and CSV ingestion.
//!
//! A [`Dataset`] couples an n×k feature matrix with an n×d vote matrix in
//! which individual votes may be absent, plus optional ground-truth labels.
//! All downstream layers (solver, EM, baselines, selection) consume this
//! type and rely on its invariants: binary votes, at least one available
//! vote per unit, finite features, consistent shapes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Dataset {
    features: Array2<f64>,
    votes: Array2<u8>,
    available: Array2<bool>,
    true_labels: Option<Vec<u8>>,
}

impl Dataset {
    /// Builds a dataset and checks every structural invariant.
    ///
    /// `votes[(i, k)]` is only meaningful where `available[(i, k)]` is true;
    /// masked entries must still be 0 or 1.
    pub fn new(
        features: Array2<f64>,
        votes: Array2<u8>,
        available: Array2<bool>,
        true_labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::Invalid("dataset has no units".into()));
        }
        if votes.nrows() != n {
            return Err(Error::Dim(format!(
                "features have {n} rows but votes have {}",
                votes.nrows()
            )));
        }
        if votes.dim() != available.dim() {
            return Err(Error::Dim(format!(
                "votes are {:?} but availability mask is {:?}",
                votes.dim(),
                available.dim()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite feature value".into()));
        }
        if votes.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("votes must be 0 or 1".into()));
        }
        for i in 0..n {
            if !available.row(i).iter().any(|&a| a) {
                return Err(Error::Invalid(format!("unit {i} has no available votes")));
            }
        }
        if let Some(labels) = &true_labels {
            if labels.len() != n {
                return Err(Error::Dim(format!(
                    "{} labels for {n} units",
                    labels.len()
                )));
            }
            if labels.iter().any(|&v| v > 1) {
                return Err(Error::Invalid("true labels must be 0 or 1".into()));
            }
        }
        Ok(Dataset {
            features,
            votes,
            available,
            true_labels,
        })
    }

    /// Builds a dataset in which every expert voted on every unit.
    pub fn new_complete(
        features: Array2<f64>,
        votes: Array2<u8>,
        true_labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let mask = Array2::from_elem(votes.dim(), true);
        Dataset::new(features, votes, mask, true_labels)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn k(&self) -> usize {
        self.features.ncols()
    }

    pub fn d(&self) -> usize {
        self.votes.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn available(&self) -> &Array2<bool> {
        &self.available
    }

    /// The vote of expert `k` on unit `i`, or `None` if absent.
    pub fn vote(&self, i: usize, k: usize) -> Option<u8> {
        if self.available[(i, k)] {
            Some(self.votes[(i, k)])
        } else {
            None
        }
    }

    /// Iterates the available `(expert, vote)` pairs of unit `i`.
    pub fn available_votes(&self, i: usize) -> impl Iterator<Item = (usize, u8)> + '_ {
        (0..self.d()).filter_map(move |k| self.vote(i, k).map(|y| (k, y)))
    }

    pub fn available_count(&self, i: usize) -> usize {
        self.available.row(i).iter().filter(|&&a| a).count()
    }

    /// Total available votes across all units.
    pub fn total_votes(&self) -> usize {
        self.available.iter().filter(|&&a| a).count()
    }

    pub fn true_labels(&self) -> Option<&[u8]> {
        self.true_labels.as_deref()
    }

    /// Extracts the units at `indices` (in the given order) into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::Invalid("subset selects no units".into()));
        }
        let (k, d) = (self.k(), self.d());
        let mut features = Array2::zeros((indices.len(), k));
        let mut votes = Array2::zeros((indices.len(), d));
        let mut available = Array2::from_elem((indices.len(), d), false);
        for (row, &i) in indices.iter().enumerate() {
            if i >= self.n() {
                return Err(Error::Invalid(format!(
                    "subset index {i} out of range for {} units",
                    self.n()
                )));
            }
            features.row_mut(row).assign(&self.features.row(i));
            votes.row_mut(row).assign(&self.votes.row(i));
            available.row_mut(row).assign(&self.available.row(i));
        }
        let labels = self
            .true_labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset::new(features, votes, available, labels)
    }

    /// Loads a dataset from one-row-per-unit CSV files.
    ///
    /// The vote file uses empty cells for absent votes. A header row in any
    /// file is detected (and skipped) when its cells do not all parse as
    /// values of that file's column type.
    pub fn load_csv(
        features_path: &Path,
        votes_path: &Path,
        labels_path: Option<&Path>,
    ) -> Result<Dataset> {
        let feature_rows = read_csv_rows(features_path)?;
        let features = parse_features(features_path, &feature_rows)?;
        let vote_rows = read_csv_rows(votes_path)?;
        let (votes, available) = parse_votes(votes_path, &vote_rows, true)?;
        if votes.nrows() != features.nrows() {
            return Err(Error::Invalid(format!(
                "{} has {} units but {} has {}",
                features_path.display(),
                features.nrows(),
                votes_path.display(),
                votes.nrows()
            )));
        }
        let labels = match labels_path {
            Some(path) => {
                let rows = read_csv_rows(path)?;
                let labels = parse_labels(path, &rows)?;
                if labels.len() != features.nrows() {
                    return Err(Error::Invalid(format!(
                        "{} has {} labels but {} has {} units",
                        path.display(),
                        labels.len(),
                        features_path.display(),
                        features.nrows()
                    )));
                }
                Some(labels)
            }
            None => None,
        };
        Dataset::new(features, votes, available, labels)
    }

    /// Writes the dataset back to CSV (no header rows). Feature values use
    /// shortest round-trip formatting, so `load_csv` reproduces them exactly.
    pub fn write_csv(
        &self,
        features_path: &Path,
        votes_path: &Path,
        labels_path: Option<&Path>,
    ) -> Result<()> {
        let mut out = open_writer(features_path)?;
        for i in 0..self.n() {
            let line = self
                .features
                .row(i)
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            writeln!(out, "{line}").map_err(|e| Error::io(features_path, e))?;
        }
        out.flush().map_err(|e| Error::io(features_path, e))?;

        let mut out = open_writer(votes_path)?;
        for i in 0..self.n() {
            let line = (0..self.d())
                .map(|k| match self.vote(i, k) {
                    Some(y) => y.to_string(),
                    None => String::new(),
                })
                .collect::<Vec<_>>()
                .join(",");
            writeln!(out, "{line}").map_err(|e| Error::io(votes_path, e))?;
        }
        out.flush().map_err(|e| Error::io(votes_path, e))?;

        if let Some(path) = labels_path {
            let labels = self.true_labels().ok_or_else(|| {
                Error::Invalid("dataset has no true labels to write".into())
            })?;
            let mut out = open_writer(path)?;
            for &y in labels {
                writeln!(out, "{y}").map_err(|e| Error::io(path, e))?;
            }
            out.flush().map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Splits into `(train, test)`. Deterministic for a given seed; the two
    /// parts partition the dataset and each keeps at least one unit.
    pub fn split(&self, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
        if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
            return Err(Error::Invalid(format!(
                "test fraction must lie strictly between 0 and 1, got {}",
                spec.test_fraction
            )));
        }
        let n = self.n();
        if n < 2 {
            return Err(Error::Invalid(
                "splitting requires at least two units".into(),
            ));
        }
        let clamp = |t: usize| t.max(1).min(n - 1);
        let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
        let mut test_idx: Vec<usize> = if spec.stratify_on_majority {
            let labels = crate::baselines::majority_vote(self).labels;
            let mut take = Vec::new();
            for class in [0u8, 1u8] {
                let mut group: Vec<usize> =
                    (0..n).filter(|&i| labels[i] == class).collect();
                group.shuffle(&mut rng);
                let t = ((spec.test_fraction * group.len() as f64).round() as usize)
                    .min(group.len());
                take.extend_from_slice(&group[..t]);
            }
            // Per-class rounding can leave a side empty; repair from the
            // larger side while preserving determinism.
            if take.is_empty() {
                take.push(0);
            }
            if take.len() == n {
                take.pop();
            }
            take
        } else {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let t = clamp((spec.test_fraction * n as f64).round() as usize);
            order.truncate(t);
            order
        };
        test_idx.sort_unstable();
        let train_idx: Vec<usize> = (0..n).filter(|i| !test_idx.contains(i)).collect();
        Ok((self.subset(&train_idx)?, self.subset(&test_idx)?))
    }

    /// Centers and scales every feature column to mean 0 and unit sample
    /// standard deviation (n−1 divisor). Rejects constant columns.
    pub fn standardize(&self) -> Result<(Dataset, StandardizeRecord)> {
        let n = self.n();
        if n < 2 {
            return Err(Error::Invalid(
                "standardization requires at least two units".into(),
            ));
        }
        let k = self.k();
        let mut mean = vec![0.0; k];
        let mut scale = vec![0.0; k];
        let mut features = self.features.clone();
        for j in 0..k {
            let col = self.features.column(j);
            let m = col.sum() / n as f64;
            let ss: f64 = col.iter().map(|v| (v - m) * (v - m)).sum();
            if ss == 0.0 {
                return Err(Error::Invalid(format!(
                    "feature column {j} is constant and cannot be standardized"
                )));
            }
            let s = (ss / (n - 1) as f64).sqrt();
            mean[j] = m;
            scale[j] = s;
            features
                .column_mut(j)
                .mapv_inplace(|v| (v - m) / s);
        }
        let record = StandardizeRecord { mean, scale };
        let ds = Dataset {
            features,
            votes: self.votes.clone(),
            available: self.available.clone(),
            true_labels: self.true_labels.clone(),
        };
        Ok((ds, record))
    }

    /// Replaces the feature matrix, keeping votes and labels. Used to apply
    /// or invert a standardization transform.
    pub fn with_features(&self, features: Array2<f64>) -> Result<Dataset> {
        Dataset::new(
            features,
            self.votes.clone(),
            self.available.clone(),
            self.true_labels.clone(),
        )
    }
}

/// Deterministic train/test split parameters.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    /// Stratify on the majority-vote label so both sides keep the class mix.
    pub stratify_on_majority: bool,
}

impl SplitSpec {
    pub fn new(test_fraction: f64, seed: u64) -> Self {
        SplitSpec {
            test_fraction,
            seed,
            stratify_on_majority: false,
        }
    }
}

/// Per-column centering/scaling transform captured by [`Dataset::standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizeRecord {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl StandardizeRecord {
    pub fn k(&self) -> usize {
        self.mean.len()
    }

    /// Applies the transform to a raw feature row in place.
    pub fn apply_row(&self, row: &mut [f64]) -> Result<()> {
        self.check_width(row.len())?;
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - self.mean[j]) / self.scale[j];
        }
        Ok(())
    }

    /// Applies the transform to a full feature matrix.
    pub fn apply(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(features.ncols())?;
        let mut out = features.clone();
        for j in 0..self.k() {
            let (m, s) = (self.mean[j], self.scale[j]);
            out.column_mut(j).mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    /// Undoes the transform: `invert(apply(x)) == x` up to rounding.
    pub fn invert(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_width(features.ncols())?;
        let mut out = features.clone();
        for j in 0..self.k() {
            let (m, s) = (self.mean[j], self.scale[j]);
            out.column_mut(j).mapv_inplace(|v| v * s + m);
        }
        Ok(out)
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.k() {
            return Err(Error::Dim(format!(
                "standardization record covers {} columns, data has {width}",
                self.k()
            )));
        }
        Ok(())
    }
}

/// Reads a feature matrix alone (same format and header auto-detection as
/// [`Dataset::load_csv`]); for scoring new units that have no votes yet.
pub fn load_features_csv(path: &Path) -> Result<Array2<f64>> {
    let rows = read_csv_rows(path)?;
    parse_features(path, &rows)
}

/// Reads a vote matrix alone, returning votes and the availability mask.
/// Unlike [`Dataset::load_csv`], rows with no votes at all are permitted.
pub fn load_votes_csv(path: &Path) -> Result<(Array2<u8>, Array2<bool>)> {
    let rows = read_csv_rows(path)?;
    parse_votes(path, &rows, false)
}

fn open_writer(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_csv_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        rows.push(record.iter().map(|s| s.to_string()).collect());
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "file is empty".into(),
        });
    }
    Ok(rows)
}

fn is_float(cell: &str) -> bool {
    !cell.is_empty() && cell.parse::<f64>().map_or(false, |v| v.is_finite())
}

fn is_vote(cell: &str) -> bool {
    matches!(cell, "" | "0" | "1")
}

fn is_label(cell: &str) -> bool {
    matches!(cell, "0" | "1")
}

/// Rows constituting data, skipping a leading header row when the first row
/// fails the per-cell predicate for this file kind.
fn data_rows<'a>(
    rows: &'a [Vec<String>],
    looks_like_data: impl Fn(&str) -> bool,
) -> (&'a [Vec<String>], usize) {
    let header = !rows[0].iter().all(|c| looks_like_data(c));
    if header {
        (&rows[1..], 2)
    } else {
        (rows, 1)
    }
}

fn parse_features(path: &Path, rows: &[Vec<String>]) -> Result<Array2<f64>> {
    let (data, first_line) = data_rows(rows, is_float);
    if data.is_empty() {
        return Err(Error::parse(path, 1, "no data rows"));
    }
    let k = data[0].len();
    let mut values = Vec::with_capacity(data.len() * k);
    for (r, row) in data.iter().enumerate() {
        let line = first_line + r;
        if row.len() != k {
            return Err(Error::parse(
                path,
                line,
                format!("expected {k} columns, found {}", row.len()),
            ));
        }
        for (c, cell) in row.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(path, line, format!("column {}: not a number: {cell:?}", c + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    line,
                    format!("column {}: non-finite value {cell:?}", c + 1),
                ));
            }
            values.push(v);
        }
    }
    Array2::from_shape_vec((data.len(), k), values)
        .map_err(|e| Error::Invalid(e.to_string()))
}

fn parse_votes(
    path: &Path,
    rows: &[Vec<String>],
    require_votes: bool,
) -> Result<(Array2<u8>, Array2<bool>)> {
    let (data, first_line) = data_rows(rows, is_vote);
    if data.is_empty() {
        return Err(Error::parse(path, 1, "no data rows"));
    }
    let d = data[0].len();
    let n = data.len();
    let mut votes = Array2::zeros((n, d));
    let mut available = Array2::from_elem((n, d), false);
    for (r, row) in data.iter().enumerate() {
        let line = first_line + r;
        if row.len() != d {
            return Err(Error::parse(
                path,
                line,
                format!("expected {d} columns, found {}", row.len()),
            ));
        }
        for (c, cell) in row.iter().enumerate() {
            match cell.as_str() {
                "" => {}
                "0" => available[(r, c)] = true,
                "1" => {
                    votes[(r, c)] = 1;
                    available[(r, c)] = true;
                }
                other => {
                    return Err(Error::parse(
                        path,
                        line,
                        format!("column {}: non-binary vote {other:?}", c + 1),
                    ))
                }
            }
        }
        if require_votes && !available.row(r).iter().any(|&a| a) {
            return Err(Error::parse(path, line, "unit has no available votes"));
        }
    }
    Ok((votes, available))
}

fn parse_labels(path: &Path, rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let (data, first_line) = data_rows(rows, is_label);
    if data.is_empty() {
        return Err(Error::parse(path, 1, "no data rows"));
    }
    let mut labels = Vec::with_capacity(data.len());
    for (r, row) in data.iter().enumerate() {
        let line = first_line + r;
        if row.len() != 1 {
            return Err(Error::parse(
                path,
                line,
                format!("expected a single label column, found {}", row.len()),
            ));
        }
        match row[0].as_str() {
            "0" => labels.push(0),
            "1" => labels.push(1),
            other => {
                return Err(Error::parse(
                    path,
                    line,
                    format!("labels must be 0 or 1, got {other:?}"),
                ))
            }
        }
    }
    Ok(labels)
}
