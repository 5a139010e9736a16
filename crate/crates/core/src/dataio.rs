//! Tabular binary-classification datasets: CSV ingestion driven by a small
//! manifest, class-conditional mean imputation, min-max scaling, seeded
//! holdout splits and folds, and information-gain feature ranking.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major feature matrix with binary labels. Missing cells are `NaN` until imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    n: usize,
    features: Vec<f64>,
    labels: Vec<bool>,
    feature_names: Vec<String>,
    /// Row index in the source table, carried through subsetting.
    row_ids: Vec<usize>,
    normalization: Option<Normalization>,
    imputation_log: Vec<Imputation>,
}

/// One filled-in cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputation {
    /// Source row index.
    pub row: usize,
    pub column: usize,
    pub value: f64,
}

impl Dataset {
    pub fn new(name: impl Into<String>, features: Vec<f64>, labels: Vec<bool>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidShape { n, m: 1 });
        }
        if features.len() != labels.len() * n {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * n,
                actual: features.len(),
            });
        }
        let rows = labels.len();
        Ok(Self {
            name: name.into(),
            n,
            features,
            labels,
            feature_names: (0..n).map(|j| format!("x{j}")).collect(),
            row_ids: (0..rows).collect(),
            normalization: None,
            imputation_log: Vec::new(),
        })
    }

    /// Builds a dataset from per-row feature vectors.
    pub fn from_rows(name: impl Into<String>, rows: &[Vec<f64>], labels: &[bool]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                actual: rows.len(),
            });
        }
        let mut features = Vec::with_capacity(rows.len() * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: r.len() });
            }
            features.extend_from_slice(r);
        }
        Self::new(name, features, labels.to_vec(), n)
    }

    pub fn empty(name: impl Into<String>, n: usize) -> Self {
        Self::new(name, Vec::new(), Vec::new(), n).expect("n >= 1")
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: names.len(),
            });
        }
        self.feature_names = names;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of features, `n`.
    pub fn width(&self) -> usize {
        self.n
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n..(i + 1) * self.n]
    }

    pub fn value(&self, row: usize, column: usize) -> f64 {
        self.features[row * self.n + column]
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn normalization(&self) -> Option<&Normalization> {
        self.normalization.as_ref()
    }

    pub fn imputation_log(&self) -> &[Imputation] {
        &self.imputation_log
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }

    /// `(row, column)` of every missing cell.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        self.features
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_nan())
            .map(|(k, _)| (k / self.n, k % self.n))
            .collect()
    }

    /// Errors unless every cell is finite; training entry points call this.
    pub fn ensure_trainable(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let missing = self.features.iter().filter(|v| v.is_nan()).count();
        if missing > 0 {
            return Err(Error::MissingValues(missing));
        }
        if let Some(k) = self.features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index: k });
        }
        Ok(())
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        let keep: std::collections::HashSet<usize> = indices.iter().map(|&i| self.row_ids[i]).collect();
        Dataset {
            name: self.name.clone(),
            n: self.n,
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
            normalization: self.normalization.clone(),
            imputation_log: self
                .imputation_log
                .iter()
                .filter(|e| keep.contains(&e.row))
                .cloned()
                .collect(),
        }
    }

    /// Keeps the columns listed in `columns`, in that order.
    pub fn project(&self, columns: &[usize]) -> Result<Dataset> {
        if columns.is_empty() {
            return Err(Error::InvalidShape { n: 0, m: 1 });
        }
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n) {
            return Err(Error::InvalidConfig(format!(
                "column {bad} out of range for {} features",
                self.n
            )));
        }
        let width = columns.len();
        let mut features = Vec::with_capacity(self.len() * width);
        for r in 0..self.len() {
            let row = self.row(r);
            features.extend(columns.iter().map(|&c| row[c]));
        }
        let remap: BTreeMap<usize, usize> = columns.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        Ok(Dataset {
            name: self.name.clone(),
            n: width,
            features,
            labels: self.labels.clone(),
            feature_names: columns.iter().map(|&c| self.feature_names[c].clone()).collect(),
            row_ids: self.row_ids.clone(),
            normalization: self.normalization.as_ref().map(|nz| Normalization {
                mins: columns.iter().map(|&c| nz.mins[c]).collect(),
                maxs: columns.iter().map(|&c| nz.maxs[c]).collect(),
            }),
            imputation_log: self
                .imputation_log
                .iter()
                .filter_map(|e| {
                    remap.get(&e.column).map(|&column| Imputation { column, ..e.clone() })
                })
                .collect(),
        })
    }
}

/// Per-dataset ingestion settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub label_column: String,
    /// Label token mapped to the positive class.
    pub positive_token: String,
    /// If set, the only token accepted for the negative class.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_token: Option<String>,
    #[serde(default = "default_missing_token")]
    pub missing_token: String,
    #[serde(default)]
    pub id_columns_to_drop: Vec<String>,
}

fn default_missing_token() -> String {
    "?".to_owned()
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }
}

/// Reads a headered CSV. Missing cells become `NaN`; nothing is filled yet.
pub fn load_csv(path: &Path, manifest: &Manifest) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let format_err = |message: String| Error::Format {
        path: path.to_owned(),
        message,
    };

    let label_idx = headers
        .iter()
        .position(|h| h == manifest.label_column)
        .ok_or_else(|| format_err(format!("label column {:?} not in header", manifest.label_column)))?;
    for id in &manifest.id_columns_to_drop {
        if !headers.iter().any(|h| h == id) {
            return Err(format_err(format!("id column {id:?} not in header")));
        }
    }
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_idx && !manifest.id_columns_to_drop.iter().any(|id| id == &headers[c]))
        .collect();
    if feature_cols.is_empty() {
        return Err(format_err("no feature columns".to_owned()));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut negative_seen: Option<String> = manifest.negative_token.clone();
    for record in reader.records() {
        let record = record?;
        // header is line 1
        let line = record.position().map_or(labels.len() + 2, |p| p.line() as usize);
        let cell_err = |column: usize, message: String| Error::Cell {
            path: path.to_owned(),
            row: line,
            column: column + 1,
            name: headers.get(column).unwrap_or("").to_owned(),
            message,
        };
        if record.len() != headers.len() {
            return Err(format_err(format!(
                "line {line}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        for &c in &feature_cols {
            let cell = &record[c];
            if cell == manifest.missing_token {
                features.push(f64::NAN);
            } else {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| cell_err(c, format!("cannot parse {cell:?} as a number")))?;
                if !v.is_finite() {
                    return Err(cell_err(c, format!("non-finite value {cell:?}")));
                }
                features.push(v);
            }
        }
        let token = &record[label_idx];
        if token == manifest.positive_token {
            labels.push(true);
        } else if token == manifest.missing_token || token.is_empty() {
            return Err(cell_err(label_idx, "missing label".to_owned()));
        } else {
            match &negative_seen {
                Some(neg) if neg != token => {
                    return Err(cell_err(
                        label_idx,
                        format!("label {token:?} is neither {:?} nor {neg:?}", manifest.positive_token),
                    ))
                }
                Some(_) => {}
                None => negative_seen = Some(token.to_owned()),
            }
            labels.push(false);
        }
    }
    if labels.is_empty() {
        return Err(format_err("no data rows".to_owned()));
    }
    let name = manifest.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map_or_else(|| "dataset".to_owned(), |s| s.to_string_lossy().into_owned())
    });
    let names = feature_cols.iter().map(|&c| headers[c].to_owned()).collect();
    Dataset::new(name, features, labels, feature_cols.len())?.with_feature_names(names)
}

/// Per-class, per-feature means of the observed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMeans {
    /// `[negative, positive]`; `None` where a class has no observed value.
    pub by_class: [Vec<Option<f64>>; 2],
    /// Mean over all observed cells regardless of class.
    pub pooled: Vec<Option<f64>>,
}

impl ClassMeans {
    pub fn fit(d: &Dataset) -> Self {
        let mut sums = [vec![0.0; d.n], vec![0.0; d.n]];
        let mut counts = [vec![0usize; d.n], vec![0usize; d.n]];
        for (r, &y) in d.labels.iter().enumerate() {
            for (c, &v) in d.row(r).iter().enumerate() {
                if !v.is_nan() {
                    sums[usize::from(y)][c] += v;
                    counts[usize::from(y)][c] += 1;
                }
            }
        }
        let mean = |s: f64, k: usize| (k > 0).then(|| s / k as f64);
        let by_class = [0, 1].map(|k| (0..d.n).map(|c| mean(sums[k][c], counts[k][c])).collect());
        let pooled = (0..d.n)
            .map(|c| mean(sums[0][c] + sums[1][c], counts[0][c] + counts[1][c]))
            .collect();
        Self { by_class, pooled }
    }

    /// Fills each missing cell with the mean of its own class.
    pub fn apply_by_class(&self, d: &Dataset) -> Result<Dataset> {
        self.fill(d, |row_label, c| self.by_class[usize::from(row_label)][c].ok_or(u8::from(row_label)))
    }

    /// Fills each missing cell with the class-agnostic mean; used for held-out rows
    /// so their labels never influence their features.
    pub fn apply_pooled(&self, d: &Dataset) -> Result<Dataset> {
        self.fill(d, |row_label, c| self.pooled[c].ok_or(u8::from(row_label)))
    }

    fn fill(&self, d: &Dataset, pick: impl Fn(bool, usize) -> std::result::Result<f64, u8>) -> Result<Dataset> {
        let mut out = d.clone();
        for r in 0..d.len() {
            for c in 0..d.n {
                let k = r * d.n + c;
                if out.features[k].is_nan() {
                    let value = pick(d.labels[r], c).map_err(|class| Error::ImputationImpossible {
                        class,
                        feature: d.feature_names[c].clone(),
                    })?;
                    out.features[k] = value;
                    out.imputation_log.push(Imputation {
                        row: d.row_ids[r],
                        column: c,
                        value,
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Replaces each missing cell by the mean of that feature over rows of the same class.
pub fn impute_class_mean(d: &Dataset) -> Result<Dataset> {
    ClassMeans::fit(d).apply_by_class(d)
}

/// Per-feature `(min, max)` used for affine scaling to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl Normalization {
    pub fn fit(d: &Dataset) -> Self {
        let mut mins = vec![f64::INFINITY; d.n];
        let mut maxs = vec![f64::NEG_INFINITY; d.n];
        for r in 0..d.len() {
            for (c, &v) in d.row(r).iter().enumerate() {
                if !v.is_nan() {
                    mins[c] = mins[c].min(v);
                    maxs[c] = maxs[c].max(v);
                }
            }
        }
        Self { mins, maxs }
    }

    /// Maps with the fitted statistics. Constant (or never observed) features
    /// map to 0. Values outside the fitted range are not clipped.
    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if self.mins.len() != d.n {
            return Err(Error::DimensionMismatch {
                expected: self.mins.len(),
                actual: d.n,
            });
        }
        let mut out = d.clone();
        for row in out.features.chunks_exact_mut(d.n) {
            for (c, v) in row.iter_mut().enumerate() {
                let span = self.maxs[c] - self.mins[c];
                if v.is_nan() {
                    continue;
                }
                *v = if span > 0.0 { (*v - self.mins[c]) / span } else { 0.0 };
            }
        }
        out.normalization = Some(self.clone());
        Ok(out)
    }
}

pub fn normalize_minmax(d: &Dataset) -> Result<Dataset> {
    Normalization::fit(d).apply(d)
}

/// The full ingestion pipeline: impute, then scale to [0, 1].
pub fn prepare(d: &Dataset) -> Result<Dataset> {
    normalize_minmax(&impute_class_mean(d)?)
}

/// Fits imputation and scaling on `train` only and applies them to both sides.
pub fn prepare_split(train: &Dataset, test: &Dataset) -> Result<(Dataset, Dataset)> {
    let means = ClassMeans::fit(train);
    let train = means.apply_by_class(train)?;
    let test = means.apply_pooled(test)?;
    let scale = Normalization::fit(&train);
    Ok((scale.apply(&train)?, scale.apply(&test)?))
}

/// Seeded shuffle; the first `floor(rate * N)` rows train, the rest test.
pub fn split_indices(len: usize, rate: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidConfig(format!("training rate {rate} must lie in (0, 1)")));
    }
    // the small offset absorbs products such as 0.57 * 100 = 56.999...
    let train_len = (rate * len as f64 + 1e-9).floor() as usize;
    if train_len == 0 || train_len >= len {
        return Err(Error::InvalidConfig(format!(
            "training rate {rate} leaves an empty side for {len} rows"
        )));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(train_len);
    Ok((idx, test))
}

pub fn split_train_test(d: &Dataset, rate: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(d.len(), rate, seed)?;
    Ok((d.subset(&train), d.subset(&test)))
}

/// Assignment of every row to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded fold assignment. Rows are shuffled (within each class when
/// stratified) and dealt round-robin, so fold sizes differ by at most one.
pub fn make_folds(d: &Dataset, k: usize, seed: u64, stratified: bool) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("fold count {k} must be at least 2")));
    }
    if k > d.len() {
        return Err(Error::InvalidConfig(format!(
            "fold count {k} exceeds {} rows",
            d.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = if stratified {
        let (mut pos, mut neg): (Vec<usize>, Vec<usize>) = (0..d.len()).partition(|&i| d.labels[i]);
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        pos.into_iter().chain(neg).collect()
    } else {
        let mut all: Vec<usize> = (0..d.len()).collect();
        all.shuffle(&mut rng);
        all
    };
    let mut assignments = vec![0; d.len()];
    for (slot, &row) in order.iter().enumerate() {
        assignments[row] = slot % k;
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
        stratified,
    })
}

/// Shannon entropy in bits of a two-class count pair.
fn entropy(pos: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    [pos, total - pos]
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

/// Equal-frequency bin of every row for one feature. Tied values share the
/// bin of their first rank, so the binning depends only on the value order.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let len = values.len();
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0; len];
    let mut start = 0;
    while start < len {
        let v = values[order[start]];
        let bin = start * bins / len;
        let mut end = start;
        while end < len && values[order[end]] == v {
            out[order[end]] = bin;
            end += 1;
        }
        start = end;
    }
    out
}

/// Information gain of one feature relative to the labels, after binning.
pub fn information_gain(d: &Dataset, feature: usize, bins: usize) -> f64 {
    let values: Vec<f64> = (0..d.len()).map(|r| d.value(r, feature)).collect();
    let assignment = equal_frequency_bins(&values, bins);
    let mut per_bin: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&b, &y) in assignment.iter().zip(&d.labels) {
        let e = per_bin.entry(b).or_default();
        e.0 += usize::from(y);
        e.1 += 1;
    }
    let total = d.len();
    let conditional: f64 = per_bin
        .values()
        .map(|&(pos, count)| count as f64 / total as f64 * entropy(pos, count))
        .sum();
    (entropy(d.positives(), total) - conditional).max(0.0)
}

/// Feature indices sorted by non-increasing information gain; ties keep ascending index.
pub fn info_gain_rank(d: &Dataset, bins: usize) -> Result<Vec<usize>> {
    if bins < 2 {
        return Err(Error::InvalidConfig(format!("bin count {bins} must be at least 2")));
    }
    if d.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let gains: Vec<f64> = (0..d.n).map(|f| information_gain(d, f, bins)).collect();
    let mut idx: Vec<usize> = (0..d.n).collect();
    idx.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]).then(a.cmp(&b)));
    Ok(idx)
}

/// Keeps the first `k` features of `ranking`.
pub fn select_top_features(d: &Dataset, k: usize, ranking: &[usize]) -> Result<Dataset> {
    if k > d.n || k > ranking.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot select {k} of {} features",
            d.n
        )));
    }
    d.project(&ranking[..k])
}

/// Writes features plus a trailing 0/1 `label` column.
pub fn write_snapshot(d: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = d.feature_names.iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header)?;
    for r in 0..d.len() {
        let mut rec: Vec<String> = d.row(r).iter().map(|v| v.to_string()).collect();
        rec.push(if d.labels[r] { "1" } else { "0" }.to_owned());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Reads a file written by [`write_snapshot`].
pub fn read_snapshot(path: &Path) -> Result<Dataset> {
    let manifest = Manifest {
        name: None,
        label_column: "label".to_owned(),
        positive_token: "1".to_owned(),
        negative_token: Some("0".to_owned()),
        missing_token: "?".to_owned(),
        id_columns_to_drop: Vec::new(),
    };
    let d = load_csv(path, &manifest)?;
    d.ensure_trainable()?;
    Ok(d)
}

pub fn write_imputation_log(d: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["row", "column", "feature", "value"])?;
    for e in &d.imputation_log {
        w.write_record([
            e.row.to_string(),
            e.column.to_string(),
            d.feature_names[e.column].clone(),
            e.value.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}
