//! Dataset representation, CSV ingestion, deterministic splitting,
//! standardization, and synthetic fixtures.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;

/// Sparse label substitution: dataset index -> replacement label.
///
/// A `BTreeMap` keeps iteration order deterministic everywhere overrides are
/// folded into training objectives or reports.
pub type LabelOverrides = BTreeMap<usize, usize>;

/// An immutable tabular classification dataset.
///
/// Features are a dense row-major `n x d` matrix, labels are contiguous class
/// indices in `0..class_count`, and every row carries a stable integer id.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    ids: Vec<u64>,
    class_count: usize,
    feature_count: usize,
    /// Original label value for each class index (identity for synthetic data).
    label_values: Vec<i64>,
}

impl Dataset {
    /// Build a dataset from raw parts, enforcing the type invariants:
    /// at least two classes, labels in range, finite features, unique ids.
    pub fn from_parts(
        features: Vec<f64>,
        feature_count: usize,
        labels: Vec<usize>,
        class_count: usize,
        ids: Option<Vec<u64>>,
        label_values: Option<Vec<i64>>,
    ) -> Result<Self> {
        if feature_count == 0 {
            return Err(Error::invalid("Dataset", "feature_count must be >= 1"));
        }
        if class_count < 2 {
            return Err(Error::invalid("Dataset", "class_count must be >= 2"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("Dataset", "dataset must contain rows"));
        }
        if features.len() != labels.len() * feature_count {
            return Err(Error::DimensionMismatch {
                operation: "Dataset",
                expected: labels.len() * feature_count,
                got: features.len(),
            });
        }
        if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "Dataset",
                format!("non-finite feature value at flat position {bad}"),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(
                "Dataset",
                format!("label {bad} out of range for {class_count} classes"),
            ));
        }
        let ids = ids.unwrap_or_else(|| (0..labels.len() as u64).collect());
        if ids.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                operation: "Dataset",
                expected: labels.len(),
                got: ids.len(),
            });
        }
        if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
            return Err(Error::invalid("Dataset", "sample ids must be unique"));
        }
        let label_values =
            label_values.unwrap_or_else(|| (0..class_count as i64).collect::<Vec<_>>());
        if label_values.len() != class_count {
            return Err(Error::DimensionMismatch {
                operation: "Dataset",
                expected: class_count,
                got: label_values.len(),
            });
        }
        Ok(Dataset {
            features,
            labels,
            ids,
            class_count,
            feature_count,
            label_values,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.features[index * self.feature_count..(index + 1) * self.feature_count]
    }

    /// Ground-truth label of one row.
    pub fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn id(&self, index: usize) -> u64 {
        self.ids[index]
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Original label value per class index, as found in the source file.
    pub fn label_values(&self) -> &[i64] {
        &self.label_values
    }

    /// Same rows with replacement labels; used to build noisy fixtures.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::from_parts(
            self.features.clone(),
            self.feature_count,
            labels,
            self.class_count,
            Some(self.ids.clone()),
            Some(self.label_values.clone()),
        )
    }
}

/// Disjoint train/validation/test index sets over one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Labeled-versus-pool bookkeeping for one active-learning run.
///
/// `assigned_labels` holds self-annotated labels; when present for an index
/// they override the dataset label in every training objective.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    pub labeled: BTreeSet<usize>,
    pub pool: BTreeSet<usize>,
    pub assigned_labels: LabelOverrides,
}

impl PoolState {
    /// Move `index` from the pool into the labeled set, optionally recording
    /// a self-assigned label.
    pub fn acquire(&mut self, index: usize, assigned: Option<usize>) -> Result<()> {
        if !self.pool.remove(&index) {
            return Err(Error::invalid(
                "PoolState::acquire",
                format!("index {index} is not in the pool"),
            ));
        }
        self.labeled.insert(index);
        if let Some(label) = assigned {
            self.assigned_labels.insert(index, label);
        }
        Ok(())
    }

    pub fn labeled_vec(&self) -> Vec<usize> {
        self.labeled.iter().copied().collect()
    }

    pub fn pool_vec(&self) -> Vec<usize> {
        self.pool.iter().copied().collect()
    }
}

/// Load a dataset from a CSV file.
///
/// All non-label columns must be numeric; labels are arbitrary integers and
/// are remapped to contiguous `0..C-1` by ascending original value, with the
/// mapping kept as dataset metadata. When `has_header` is false, columns are
/// addressed by their 0-based position as a string (e.g. `"19"`).
pub fn load_csv(path: &Path, label_column: &str, has_header: bool) -> Result<Dataset> {
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::ingestion(&path_str, None, None, &format!("cannot open: {e}")))?;

    let mut records: Vec<csv::StringRecord> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            Error::ingestion(&path_str, Some(i + 1), None, &format!("malformed row: {e}"))
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::ingestion(&path_str, None, None, "no data rows"));
    }

    let width = records[0].len();
    let names: Vec<String> = if has_header {
        reader
            .headers()
            .map_err(|e| Error::ingestion(&path_str, None, None, &format!("bad header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        (0..width).map(|i| i.to_string()).collect()
    };

    let label_idx = names
        .iter()
        .position(|n| n == label_column)
        .ok_or_else(|| {
            Error::ingestion(
                &path_str,
                None,
                Some(label_column),
                "label column not found",
            )
        })?;

    let feature_count = width - 1;
    if feature_count == 0 {
        return Err(Error::ingestion(&path_str, None, None, "no feature columns"));
    }

    let mut raw_labels: Vec<i64> = Vec::with_capacity(records.len());
    let mut features: Vec<f64> = Vec::with_capacity(records.len() * feature_count);
    for (r, rec) in records.iter().enumerate() {
        let row_no = r + 1;
        if rec.len() != width {
            return Err(Error::ingestion(
                &path_str,
                Some(row_no),
                None,
                &format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        for (c, cell) in rec.iter().enumerate() {
            if c == label_idx {
                let value: i64 = cell.parse().map_err(|_| {
                    Error::ingestion(
                        &path_str,
                        Some(row_no),
                        Some(&names[c]),
                        &format!("label `{cell}` is not an integer"),
                    )
                })?;
                raw_labels.push(value);
            } else {
                let value: f64 = cell.parse().map_err(|_| {
                    Error::ingestion(
                        &path_str,
                        Some(row_no),
                        Some(&names[c]),
                        &format!("feature `{cell}` is not numeric"),
                    )
                })?;
                if !value.is_finite() {
                    return Err(Error::ingestion(
                        &path_str,
                        Some(row_no),
                        Some(&names[c]),
                        &format!("feature `{cell}` is not finite"),
                    ));
                }
                features.push(value);
            }
        }
    }

    let distinct: BTreeSet<i64> = raw_labels.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::ingestion(
            &path_str,
            None,
            Some(&names[label_idx]),
            &format!("need at least 2 distinct labels, found {}", distinct.len()),
        ));
    }
    let label_values: Vec<i64> = distinct.into_iter().collect();
    let rank: BTreeMap<i64, usize> = label_values
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i))
        .collect();
    let labels: Vec<usize> = raw_labels.iter().map(|v| rank[v]).collect();

    Dataset::from_parts(
        features,
        feature_count,
        labels,
        label_values.len(),
        None,
        Some(label_values),
    )
}

/// Deterministically split a dataset into train/validation/test index sets.
///
/// Sizes are `floor(n * fraction)` per part with the remainder assigned to
/// train; membership comes from a seeded uniform shuffle of `0..n`.
pub fn split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (ft, fv, fe) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fe > 0.0) {
        return Err(Error::invalid("split", "all fractions must be positive"));
    }
    if (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "split",
            format!("fractions must sum to 1, got {}", ft + fv + fe),
        ));
    }
    let n = ds.len();
    let mut n_train = (n as f64 * ft).floor() as usize;
    let n_val = (n as f64 * fv).floor() as usize;
    let n_test = (n as f64 * fe).floor() as usize;
    n_train += n - (n_train + n_val + n_test);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::invalid(
            "split",
            format!("split sizes ({n_train}, {n_val}, {n_test}) must all be nonzero"),
        ));
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::derive(seed, "split"));

    let mut train: Vec<usize> = perm[..n_train].to_vec();
    let mut validation: Vec<usize> = perm[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = perm[n_train + n_val..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices {
        train,
        validation,
        test,
        seed,
    })
}

/// Choose the initial labeled set from the train indices; the rest become
/// the unlabeled pool.
pub fn init_pool_split(train_indices: &[usize], n_init: usize, seed: u64) -> Result<PoolState> {
    if n_init == 0 || n_init > train_indices.len() {
        return Err(Error::invalid(
            "init_pool_split",
            format!(
                "n_init must be in 1..={}, got {n_init}",
                train_indices.len()
            ),
        ));
    }
    let mut order = train_indices.to_vec();
    order.shuffle(&mut rng::derive(seed, "init"));
    let labeled: BTreeSet<usize> = order[..n_init].iter().copied().collect();
    let pool: BTreeSet<usize> = order[n_init..].iter().copied().collect();
    Ok(PoolState {
        labeled,
        pool,
        assigned_labels: LabelOverrides::new(),
    })
}

/// Per-feature location/scale statistics frozen from one index set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardization {
    /// Fit mean and (population) standard deviation per feature on `fit_on`.
    pub fn fit(ds: &Dataset, fit_on: &[usize]) -> Result<Standardization> {
        if fit_on.is_empty() {
            return Err(Error::invalid("standardize", "fit_on must be nonempty"));
        }
        let d = ds.feature_count();
        let m = fit_on.len() as f64;
        let mut means = vec![0.0; d];
        for &i in fit_on {
            for (acc, v) in means.iter_mut().zip(ds.row(i)) {
                *acc += v;
            }
        }
        for v in &mut means {
            *v /= m;
        }
        let mut vars = vec![0.0; d];
        for &i in fit_on {
            for ((acc, v), mu) in vars.iter_mut().zip(ds.row(i)).zip(&means) {
                let c = v - mu;
                *acc += c * c;
            }
        }
        let stds = vars.iter().map(|v| (v / m).sqrt()).collect();
        Ok(Standardization { means, stds })
    }

    /// Transform every row to `(x - mean) / std`; zero-variance columns map
    /// to zero everywhere.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let d = ds.feature_count();
        if self.means.len() != d {
            return Err(Error::DimensionMismatch {
                operation: "standardize",
                expected: d,
                got: self.means.len(),
            });
        }
        let mut features = Vec::with_capacity(ds.len() * d);
        for i in 0..ds.len() {
            for ((v, mu), sd) in ds.row(i).iter().zip(&self.means).zip(&self.stds) {
                features.push(if *sd > 0.0 { (v - mu) / sd } else { 0.0 });
            }
        }
        Dataset::from_parts(
            features,
            d,
            ds.labels().to_vec(),
            ds.class_count(),
            Some(ds.ids().to_vec()),
            Some(ds.label_values().to_vec()),
        )
    }
}

/// Standardize features using statistics computed on `fit_on` only.
pub fn standardize(ds: &Dataset, fit_on: &[usize]) -> Result<(Dataset, Standardization)> {
    let stats = Standardization::fit(ds, fit_on)?;
    let transformed = stats.apply(ds)?;
    Ok((transformed, stats))
}

/// Generate Gaussian class clusters at seeded-random centers.
///
/// Centers are standard-normal draws scaled by `separation`; unit-variance
/// noise is added per sample. Rows are class-major and labels follow the
/// generating cluster.
pub fn synthetic_blobs(
    n_per_class: usize,
    class_count: usize,
    dims: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || dims == 0 || separation <= 0.0 {
        return Err(Error::invalid(
            "synthetic_blobs",
            "n_per_class, dims, and separation must be positive",
        ));
    }
    if class_count < 2 {
        return Err(Error::invalid("synthetic_blobs", "class_count must be >= 2"));
    }
    let mut stream = rng::derive(seed, "blobs");
    let mut centers = vec![0.0; class_count * dims];
    for v in &mut centers {
        let z: f64 = stream.sample(StandardNormal);
        *v = separation * z;
    }
    let n = n_per_class * class_count;
    let mut features = Vec::with_capacity(n * dims);
    let mut labels = Vec::with_capacity(n);
    for c in 0..class_count {
        for _ in 0..n_per_class {
            for j in 0..dims {
                let z: f64 = stream.sample(StandardNormal);
                features.push(centers[c * dims + j] + z);
            }
            labels.push(c);
        }
    }
    Dataset::from_parts(features, dims, labels, class_count, None, None)
}

/// Flip a seeded-random fraction of the labels at `indices` to a uniformly
/// chosen different class. Used to build label-noise fixtures.
pub fn flip_labels(ds: &Dataset, indices: &[usize], fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("flip_labels", "fraction must be in [0, 1]"));
    }
    let mut order = indices.to_vec();
    let mut stream = rng::derive(seed, "flip");
    order.shuffle(&mut stream);
    let n_flip = (fraction * indices.len() as f64).floor() as usize;
    let mut labels = ds.labels().to_vec();
    for &i in &order[..n_flip] {
        let offset = stream.random_range(1..ds.class_count());
        labels[i] = (labels[i] + offset) % ds.class_count();
    }
    ds.with_labels(labels)
}
