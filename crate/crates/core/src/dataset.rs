//! Labelled datasets: CSV I/O, synthetic Gaussian blobs, pixel scaling,
//! class-conditional label flipping and random train/validation splits.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;
use crate::transition::TransitionMatrix;

/// Feature matrix plus integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyData("dataset has no rows".into()));
        }
        if features.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: features.nrows(),
                context: "feature rows vs labels",
            });
        }
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "a dataset needs at least 2 classes, got {num_classes}"
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false for a constructed dataset; provided for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Same rows with a different label vector.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(
            self.features.clone(),
            labels,
            self.num_classes,
            self.name.clone(),
        )
    }

    /// Widens the class count, e.g. so a test set that happens to miss the
    /// top class agrees with its training pool.
    pub fn with_num_classes(mut self, num_classes: usize) -> Result<Self> {
        if let Some(&label) = self.labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        self.num_classes = num_classes;
        Ok(self)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels, self.num_classes, self.name.clone())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// CSV serialization used by [`save_csv`].
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * (self.dim() + 1) * 8);
        out.push_str("label");
        for j in 0..self.dim() {
            let _ = write!(out, ",f{j}");
        }
        out.push('\n');
        for (row, &label) in self.features.rows().into_iter().zip(&self.labels) {
            let _ = write!(out, "{label}");
            for v in row {
                // `Display` for f64 prints the shortest string that parses
                // back to the same bits.
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn fingerprint(&self) -> DatasetFingerprint {
        let digest = Sha256::digest(self.to_csv_string().as_bytes());
        DatasetFingerprint {
            name: self.name.clone(),
            n: self.len(),
            d: self.dim(),
            num_classes: self.num_classes,
            sha256: hex::encode(digest),
        }
    }
}

/// Shape and content hash of a dataset, recorded in reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub num_classes: usize,
    pub sha256: String,
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.dim < 1 || self.samples_per_class < 1 {
            return Err(Error::Config(
                "dim and samples_per_class must be at least 1".into(),
            ));
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return Err(Error::Config("class_separation must be positive".into()));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be positive".into()));
        }
        Ok(())
    }

    /// Centre of class `class`.
    ///
    /// Class `i < dim` sits at `separation * e_i`. Beyond `dim` the classes
    /// wrap around the axes, each lap pushed further out, so all centres stay
    /// distinct.
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        let axis = class % self.dim;
        let lap = (class / self.dim) as f64;
        mean[axis] = self.class_separation * (1.0 + lap);
        mean
    }
}

/// Reads the `label,f0,f1,...` CSV format. LF and CRLF line endings are both
/// accepted.
pub fn load_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);

    let malformed = |line: u64, reason: String| Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason,
    };

    let mut records = reader.records();
    let header = match records.next() {
        Some(rec) => rec.map_err(|e| malformed(1, e.to_string()))?,
        None => return Err(Error::EmptyData(format!("{}: empty file", path.display()))),
    };
    if header.get(0).map(str::trim) != Some("label") {
        return Err(malformed(1, "header must begin with `label`".into()));
    }
    let dim = header.len() - 1;

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec.get(0).is_some_and(|c| c.trim().is_empty()) {
            continue;
        }
        if rec.len() != dim + 1 {
            return Err(malformed(
                line,
                format!("expected {} columns, found {}", dim + 1, rec.len()),
            ));
        }
        let label_cell = rec[0].trim();
        let label: i64 = label_cell
            .parse()
            .map_err(|_| malformed(line, format!("label `{label_cell}` is not an integer")))?;
        if label < 0 {
            return Err(malformed(line, format!("negative label {label}")));
        }
        labels.push(label as usize);
        for (col, cell) in rec.iter().enumerate().skip(1) {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| {
                malformed(line, format!("column {col}: `{cell}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(malformed(line, format!("column {col}: non-finite value")));
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyData(format!(
            "{}: no data rows after header",
            path.display()
        )));
    }
    let n = labels.len();
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let features =
        Array2::from_shape_vec((n, dim), values).expect("row lengths checked while parsing");
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(features, labels, num_classes, name)
}

pub fn save_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(ds.to_csv_string().as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Draws `samples_per_class` isotropic Gaussian points around each class
/// mean. Rows are grouped by class.
pub fn synthesize(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let n = spec.num_classes * spec.samples_per_class;
    let mut rng = rng::seeded(spec.seed);
    let mut values = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for class in 0..spec.num_classes {
        let mean = spec.class_mean(class);
        for _ in 0..spec.samples_per_class {
            for &m in &mean {
                let z: f64 = rng.sample(StandardNormal);
                values.push(m + spec.noise_sigma * z);
            }
            labels.push(class);
        }
    }
    let features = Array2::from_shape_vec((n, spec.dim), values).expect("sized above");
    LabeledDataset::new(
        features,
        labels,
        spec.num_classes,
        format!("blobs-c{}-d{}-s{}", spec.num_classes, spec.dim, spec.seed),
    )
}

/// Maps raw 0-255 pixel intensities to `[0, 1]`.
pub fn normalize_255(ds: &LabeledDataset) -> Result<LabeledDataset> {
    for ((row, col), &v) in ds.features.indexed_iter() {
        if !(0.0..=255.0).contains(&v) {
            return Err(Error::Domain { row, col, value: v });
        }
    }
    let features = ds.features.mapv(|v| v / 255.0);
    LabeledDataset::new(
        features,
        ds.labels.clone(),
        ds.num_classes,
        ds.name.clone(),
    )
}

/// Replaces every label `y` by an independent draw from row `y` of `t`.
pub fn inject_noise(ds: &LabeledDataset, t: &TransitionMatrix, seed: u64) -> Result<LabeledDataset> {
    if t.size() != ds.num_classes {
        return Err(Error::DimensionMismatch {
            expected: ds.num_classes,
            got: t.size(),
            context: "transition matrix size vs dataset classes",
        });
    }
    let mut rng = rng::seeded(seed);
    let labels = ds
        .labels
        .iter()
        .map(|&y| sample_row(t.row(y), rng.random::<f64>()))
        .collect();
    ds.with_labels(labels)
}

/// Inverse-CDF draw from a probability row given `u` in `[0, 1)`.
fn sample_row(row: ArrayView1<'_, f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = j;
        }
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left the cumulative sum a hair under 1.
    last_positive
}

/// A random train/validation partition of one dataset.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub split_fraction: f64,
    pub seed: u64,
    /// Source row indices of `train`, then `validation`.
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// Shuffles row indices with `seed` and sends the first
/// `floor(fraction * n)` to the training side.
pub fn split(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    let n_train = (fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::EmptyData(format!(
            "split of {n} rows at fraction {fraction} leaves one side empty"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let validation_indices = order.split_off(n_train);
    let train_indices = order;
    Ok(SplitPair {
        train: ds.select(&train_indices)?,
        validation: ds.select(&validation_indices)?,
        split_fraction: fraction,
        seed,
        train_indices,
        validation_indices,
    })
}
