//! Experiment protocols: full-set training, hidden-neuron sweeps, k-fold
//! cross-validation, training-rate sweeps and the multi-dataset comparison.
//!
//! An [`ExperimentSpec`] is validated and expanded into a flat list of runs
//! ([`Experiment::plan`]). Each run is independent and deterministic; run
//! `i` trains with seed `spec.seed + i`. Data splits are seeded by
//! `spec.seed + repeat` so every algorithm and driver sees the same splits.
//! Preprocessing (imputation, scaling, feature ranking) is always fit on the
//! training rows of a run and only applied to its test rows.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Deserializer, Serialize};

use crate::dataio::{
    info_gain_rank, load_csv, make_folds, prepare, prepare_split, select_top_features, split_indices,
    Dataset, Manifest, Normalization,
};
use crate::error::{Error, Result};
use crate::metrics::{kpi_suite, Driver, Kpi, KpiReport};
use crate::pdbp::{train_pdbp, PdbpConfig};
use crate::snn::{dimension_count, ModelFile};
use crate::training::{Algorithm, StopReason, TrainedResult};
use crate::vpso::{optimize_vpso, VpsoConfig};

const BASELINES: &str = include_str!("../data/baselines.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    FullTrain,
    IncrementalSweep,
    KfoldCv,
    RateSweep,
    Compare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

fn one_or_many<'de, D, T>(de: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(t) => vec![t],
        OneOrMany::Many(v) => v,
    })
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Pdbp]
}

fn default_drivers() -> Vec<Driver> {
    vec![Driver::Acc]
}

fn default_folds() -> usize {
    10
}

fn default_rates() -> Vec<f64> {
    vec![0.5, 0.6, 0.7, 0.8, 0.9]
}

fn default_top_features() -> usize {
    12
}

fn default_bins() -> usize {
    10
}

fn default_true() -> bool {
    true
}

fn default_jobs() -> usize {
    1
}

/// JSON experiment description. Dataset paths are resolved relative to the
/// spec file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub protocol: Protocol,
    #[serde(default, alias = "dataset", deserialize_with = "one_or_many")]
    pub datasets: Vec<DatasetRef>,
    #[serde(default = "default_algorithms", alias = "algorithm", deserialize_with = "one_or_many")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_drivers", alias = "driver", deserialize_with = "one_or_many")]
    pub drivers: Vec<Driver>,
    /// Hidden neurons. For the comparison protocol this only applies to
    /// datasets that are not reduced; it defaults to half the feature count.
    #[serde(default)]
    pub hidden: Option<usize>,
    /// Inclusive sweep bounds; defaults to `[1, n]`.
    #[serde(default)]
    pub hidden_range: Option<[usize; 2]>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_true")]
    pub stratified: bool,
    #[serde(default = "default_rates")]
    pub rates: Vec<f64>,
    /// Repetitions per cell: repeated k-fold, splits per rate, or comparison
    /// runs. Defaults to 10 for the comparison and rate sweep, 1 otherwise.
    #[serde(default)]
    pub repeats: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Feature budget of the comparison protocol.
    #[serde(default = "default_top_features")]
    pub top_features: usize,
    #[serde(default = "default_bins")]
    pub info_gain_bins: usize,
    #[serde(default)]
    pub pdbp: PdbpConfig,
    #[serde(default)]
    pub vpso: VpsoConfig,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl ExperimentSpec {
    pub fn new(protocol: Protocol, dataset: DatasetRef) -> Self {
        Self {
            name: None,
            protocol,
            datasets: vec![dataset],
            algorithms: default_algorithms(),
            drivers: default_drivers(),
            hidden: None,
            hidden_range: None,
            folds: default_folds(),
            stratified: true,
            rates: default_rates(),
            repeats: None,
            seed: 0,
            top_features: default_top_features(),
            info_gain_bins: default_bins(),
            pdbp: PdbpConfig::default(),
            vpso: VpsoConfig::default(),
            jobs: 1,
        }
    }

    /// Reads a spec and makes its dataset paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut spec: ExperimentSpec = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidSpec(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut spec.datasets {
            d.csv = base.join(&d.csv);
            d.manifest = base.join(&d.manifest);
        }
        Ok(spec)
    }

    pub fn repeats(&self) -> usize {
        self.repeats.unwrap_or(match self.protocol {
            Protocol::Compare | Protocol::RateSweep => 10,
            _ => 1,
        })
    }

    /// Checks everything that does not need the data.
    fn static_problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.datasets.is_empty() {
            p.push("at least one dataset is required".to_owned());
        }
        if self.algorithms.is_empty() {
            p.push("at least one algorithm is required".to_owned());
        }
        if self.drivers.is_empty() {
            p.push("at least one driver is required".to_owned());
        }
        if self.hidden == Some(0) {
            p.push("hidden must be at least 1".to_owned());
        }
        if matches!(self.protocol, Protocol::FullTrain | Protocol::KfoldCv | Protocol::RateSweep)
            && self.hidden.is_none()
        {
            p.push(format!("hidden is required for the {:?} protocol", self.protocol));
        }
        if let Some([lo, hi]) = self.hidden_range {
            if lo == 0 || lo > hi {
                p.push(format!("hidden_range [{lo}, {hi}] must satisfy 1 <= lo <= hi"));
            }
        }
        if self.protocol == Protocol::KfoldCv && self.folds < 2 {
            p.push(format!("folds {} must be at least 2", self.folds));
        }
        if self.protocol == Protocol::RateSweep {
            if self.rates.is_empty() {
                p.push("rates must not be empty".to_owned());
            }
            for r in &self.rates {
                if !(*r > 0.0 && *r < 1.0) {
                    p.push(format!("rate {r} must lie in the open interval (0, 1)"));
                }
            }
        }
        if self.repeats == Some(0) {
            p.push("repeats must be at least 1".to_owned());
        }
        if self.top_features == 0 {
            p.push("top_features must be at least 1".to_owned());
        }
        if self.info_gain_bins < 2 {
            p.push("info_gain_bins must be at least 2".to_owned());
        }
        if self.jobs == 0 {
            p.push("jobs must be at least 1".to_owned());
        }
        if self.algorithms.contains(&Algorithm::Pdbp) {
            if let Err(e) = self.pdbp.validate() {
                p.push(format!("pdbp: {e}"));
            }
        }
        p
    }
}

/// A loaded source table.
#[derive(Debug, Clone)]
pub struct SourceData {
    pub reference: DatasetRef,
    pub manifest: Manifest,
    pub raw: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Split {
    Full,
    Fold { repeat: usize, fold: usize, k: usize },
    Holdout { repeat: usize, rate: f64 },
}

impl Split {
    /// Seed of the row partition; shared by every algorithm and driver.
    pub fn seed(&self, base: u64) -> u64 {
        match *self {
            Split::Full => base,
            Split::Fold { repeat, .. } | Split::Holdout { repeat, .. } => base + repeat as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub index: usize,
    pub dataset: usize,
    pub algorithm: Algorithm,
    pub driver: Driver,
    pub hidden: usize,
    /// Features kept by information-gain ranking, if the protocol reduces.
    pub keep_features: Option<usize>,
    pub seed: u64,
    pub split: Split,
}

/// Everything persisted about one finished run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub dataset: String,
    pub algorithm: Algorithm,
    pub driver: Driver,
    pub hidden: usize,
    pub d: usize,
    pub seed: u64,
    pub split: Split,
    pub split_seed: u64,
    pub source_features: usize,
    pub source_rows: usize,
    pub selected_features: Vec<String>,
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub normalization: Option<Normalization>,
    pub train_report: KpiReport,
    pub test_report: Option<KpiReport>,
    pub best_iteration: usize,
    pub iterations_run: usize,
    pub stop_reason: StopReason,
    pub train_time_ms: f64,
    pub config: serde_json::Value,
    pub model: ModelFile,
}

impl RunRecord {
    /// The report a protocol aggregates: test KPIs when there is a test set.
    pub fn evaluated(&self) -> &KpiReport {
        self.test_report.as_ref().unwrap_or(&self.train_report)
    }

    pub fn rows_disjoint(&self) -> bool {
        let train: std::collections::HashSet<_> = self.train_rows.iter().collect();
        self.test_rows.iter().all(|r| !train.contains(r))
    }

    pub fn raw_row(&self) -> RawRow {
        let r = self.evaluated();
        let (rate, fold, repeat) = match self.split {
            Split::Full => (None, None, 0),
            Split::Fold { repeat, fold, .. } => (None, Some(fold), repeat),
            Split::Holdout { repeat, rate } => (Some(rate), None, repeat),
        };
        RawRow {
            index: self.index,
            dataset: self.dataset.clone(),
            algorithm: self.algorithm,
            driver: self.driver,
            hidden: self.hidden,
            features: self.selected_features.len(),
            source_features: self.source_features,
            source_rows: self.source_rows,
            rate,
            fold,
            repeat,
            seed: self.seed,
            set: if self.test_report.is_some() { "test" } else { "train" }.to_owned(),
            err: r.err,
            acc: r.acc,
            f1: r.f1,
            auc: r.auc,
            tpr: r.tpr,
            tnr: r.tnr,
            tp: r.counts.tp,
            fp: r.counts.fp,
            tn: r.counts.tn,
            fn_: r.counts.fn_,
            best_iteration: self.best_iteration,
            iterations_run: self.iterations_run,
            train_time_ms: self.train_time_ms,
        }
    }
}

/// One line of `runs/raw.csv`; the aggregate report is recomputed from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub index: usize,
    pub dataset: String,
    pub algorithm: Algorithm,
    pub driver: Driver,
    pub hidden: usize,
    pub features: usize,
    pub source_features: usize,
    pub source_rows: usize,
    pub rate: Option<f64>,
    pub fold: Option<usize>,
    pub repeat: usize,
    pub seed: u64,
    pub set: String,
    pub err: f64,
    pub acc: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub tpr: f64,
    pub tnr: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub best_iteration: usize,
    pub iterations_run: usize,
    pub train_time_ms: f64,
}

impl RawRow {
    fn kpi(&self, k: Kpi) -> Option<f64> {
        match k {
            Kpi::Err => Some(self.err),
            Kpi::Acc => Some(self.acc),
            Kpi::F1 => Some(self.f1),
            Kpi::Auc => self.auc,
            Kpi::Tpr => Some(self.tpr),
            Kpi::Tnr => Some(self.tnr),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let var = if count > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Some(Stat {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count,
        })
    }

    /// `a±σ` on the percentage scale.
    pub fn percent(&self) -> String {
        format!("{:.2}±{:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

/// Mean and deviation of every KPI over the runs of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub dataset: String,
    pub algorithm: Algorithm,
    pub driver: Driver,
    pub hidden: usize,
    pub rate: Option<f64>,
    pub set: String,
    pub runs: usize,
    pub features: usize,
    pub source_features: usize,
    pub source_rows: usize,
    pub kpis: BTreeMap<String, Option<Stat>>,
    pub mean_best_iteration: f64,
}

impl AggregateReport {
    pub fn stat(&self, kpi: Kpi) -> Option<Stat> {
        self.kpis.get(kpi.name()).copied().flatten()
    }

    pub fn formatted(&self, kpi: Kpi) -> String {
        self.stat(kpi).map_or_else(|| "n/a".to_owned(), |s| s.percent())
    }

    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = [
            "dataset", "algorithm", "driver", "hidden", "rate", "set", "runs", "features",
        ]
        .iter()
        .map(|s| (*s).to_owned())
        .collect();
        for k in Kpi::ALL {
            h.push(format!("{}_mean", k.name()));
            h.push(format!("{}_std", k.name()));
            h.push(k.name().to_owned());
        }
        h.push("mean_best_iteration".to_owned());
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![
            self.dataset.clone(),
            self.algorithm.to_string(),
            self.driver.to_string(),
            self.hidden.to_string(),
            self.rate.map_or_else(String::new, |r| r.to_string()),
            self.set.clone(),
            self.runs.to_string(),
            self.features.to_string(),
        ];
        for k in Kpi::ALL {
            match self.stat(k) {
                Some(s) => {
                    r.push(s.mean.to_string());
                    r.push(s.std.to_string());
                    r.push(s.percent());
                }
                None => r.extend(["n/a".to_owned(), "n/a".to_owned(), "n/a".to_owned()]),
            }
        }
        r.push(self.mean_best_iteration.to_string());
        r
    }
}

/// Groups raw rows into cells (dataset, algorithm, driver, hidden, rate) in
/// order of first appearance.
pub fn aggregate(rows: &[RawRow]) -> Vec<AggregateReport> {
    let mut order: Vec<(String, Algorithm, Driver, usize, Option<u64>)> = Vec::new();
    let mut cells: BTreeMap<usize, Vec<&RawRow>> = BTreeMap::new();
    for row in rows {
        let key = (
            row.dataset.clone(),
            row.algorithm,
            row.driver,
            row.hidden,
            row.rate.map(f64::to_bits),
        );
        let slot = order.iter().position(|k| *k == key).unwrap_or_else(|| {
            order.push(key);
            order.len() - 1
        });
        cells.entry(slot).or_default().push(row);
    }
    cells
        .into_values()
        .map(|rows| {
            let first = rows[0];
            let kpis = Kpi::ALL
                .iter()
                .map(|&k| {
                    let values: Vec<f64> = rows.iter().filter_map(|r| r.kpi(k)).collect();
                    (k.name().to_owned(), Stat::of(&values))
                })
                .collect();
            AggregateReport {
                dataset: first.dataset.clone(),
                algorithm: first.algorithm,
                driver: first.driver,
                hidden: first.hidden,
                rate: first.rate,
                set: first.set.clone(),
                runs: rows.len(),
                features: first.features,
                source_features: first.source_features,
                source_rows: first.source_rows,
                kpis,
                mean_best_iteration: rows.iter().map(|r| r.best_iteration as f64).sum::<f64>()
                    / rows.len() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
struct BaselineMethod {
    key: String,
    label: String,
    citation: String,
}

#[derive(Debug, Clone, Deserialize)]
struct BaselineDataset {
    name: String,
    aliases: Vec<String>,
    n: usize,
    rows: usize,
    #[serde(flatten)]
    values: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Deserialize)]
struct BaselineFile {
    methods: Vec<BaselineMethod>,
    datasets: Vec<BaselineDataset>,
}

/// Published accuracies of the reference methods, shipped with the crate.
#[derive(Debug, Clone)]
pub struct Baselines {
    file: BaselineFile,
}

impl Baselines {
    pub fn published() -> Self {
        Self {
            file: serde_json::from_str(BASELINES).expect("bundled baselines are valid JSON"),
        }
    }

    /// Method labels with their citations, in display order.
    pub fn methods(&self) -> Vec<(String, String)> {
        self.file
            .methods
            .iter()
            .map(|m| (m.label.clone(), m.citation.clone()))
            .collect()
    }

    /// Published `(mean, std)` in percent for every method, if the dataset is known.
    pub fn lookup(&self, dataset: &str) -> Option<(String, usize, usize, Vec<Option<(f64, f64)>>)> {
        let key = dataset.to_ascii_lowercase();
        let d = self
            .file
            .datasets
            .iter()
            .find(|d| d.name.to_ascii_lowercase() == key || d.aliases.iter().any(|a| *a == key))?;
        let values = self
            .file
            .methods
            .iter()
            .map(|m| {
                let pair = d.values.get(&m.key)?.as_array()?;
                Some((pair.first()?.as_f64()?, pair.get(1)?.as_f64()?))
            })
            .collect();
        Some((d.name.clone(), d.n, d.rows, values))
    }
}

/// Markdown rendering of an aggregate report. The comparison protocol adds
/// the published baselines next to the measured accuracies.
pub fn render_table(protocol: Protocol, reports: &[AggregateReport]) -> String {
    if protocol == Protocol::Compare {
        return render_comparison(reports);
    }
    let mut out = String::from(
        "| dataset | algorithm | m | rate | set | runs | ERR | ACC | F1 | AUC | TPR | TNR | I |\n\
         |---|---|---|---|---|---|---|---|---|---|---|---|---|\n",
    );
    for r in reports {
        out.push_str(&format!(
            "| {} | {}-{} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {:.1} |\n",
            r.dataset,
            r.driver,
            r.algorithm,
            r.hidden,
            r.rate.map_or_else(|| "-".to_owned(), |x| x.to_string()),
            r.set,
            r.runs,
            r.formatted(Kpi::Err),
            r.formatted(Kpi::Acc),
            r.formatted(Kpi::F1),
            r.formatted(Kpi::Auc),
            r.formatted(Kpi::Tpr),
            r.formatted(Kpi::Tnr),
            r.mean_best_iteration,
        ));
    }
    out.push_str("\nValues are mean±standard deviation in percent.\n");
    out
}

fn render_comparison(reports: &[AggregateReport]) -> String {
    let baselines = Baselines::published();
    let methods = baselines.methods();
    let mut measured: Vec<String> = Vec::new();
    for r in reports {
        let label = format!("{}-{}", r.driver, r.algorithm);
        if !measured.contains(&label) {
            measured.push(label);
        }
    }
    let mut datasets: Vec<&str> = Vec::new();
    for r in reports {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }

    let mut out = String::from("| data | n | N |");
    for (label, _) in &methods {
        out.push_str(&format!(" {label} |"));
    }
    for label in &measured {
        out.push_str(&format!(" {label} (measured) |"));
    }
    out.push('\n');
    out.push_str(&"|---".repeat(3 + methods.len() + measured.len()));
    out.push_str("|\n");
    for name in datasets {
        let first = reports.iter().find(|r| r.dataset == name).expect("dataset has a report");
        let published = baselines.lookup(name);
        let display = published.as_ref().map_or(name.to_owned(), |p| format!("{} ({name})", p.0));
        out.push_str(&format!("| {display} | {} | {} |", first.source_features, first.source_rows));
        for i in 0..methods.len() {
            let cell = published
                .as_ref()
                .and_then(|p| p.3[i])
                .map_or_else(|| "-".to_owned(), |(m, s)| format!("{m:.2}±{s:.2}"));
            out.push_str(&format!(" {cell} |"));
        }
        for label in &measured {
            let cell = reports
                .iter()
                .find(|r| r.dataset == name && format!("{}-{}", r.driver, r.algorithm) == *label)
                .map_or_else(|| "-".to_owned(), |r| r.formatted(Kpi::Acc));
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out.push_str(
        "\nTest accuracy in percent, mean±standard deviation over independent 50/50 splits. \
         Published columns are reported constants, not recomputed:\n\n",
    );
    for (label, citation) in &methods {
        out.push_str(&format!("- {label}: {citation}\n"));
    }
    out
}

/// Progress notifications emitted while an experiment runs.
#[derive(Debug, Clone)]
pub enum Progress<'a> {
    Started { plan: &'a RunPlan, total: usize },
    Finished { record: &'a RunRecord, total: usize },
    Failed { plan: &'a RunPlan, error: &'a Error, total: usize },
}

/// A validated experiment with its data loaded and its runs laid out.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub sources: Vec<SourceData>,
    pub runs: Vec<RunPlan>,
}

/// Outcome of one run: the record plus the full training result (for traces).
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub result: TrainedResult,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub outcomes: Vec<RunOutcome>,
    pub failures: Vec<(usize, Error)>,
}

impl ExperimentResult {
    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.outcomes.iter().map(|o| &o.record)
    }

    pub fn raw_rows(&self) -> Vec<RawRow> {
        self.records().map(RunRecord::raw_row).collect()
    }

    pub fn aggregate(&self) -> Vec<AggregateReport> {
        aggregate(&self.raw_rows())
    }
}

impl Experiment {
    /// Loads data and validates the spec, reporting every problem at once.
    pub fn plan(spec: ExperimentSpec) -> Result<Self> {
        let mut problems = spec.static_problems();
        let mut sources = Vec::new();
        for r in &spec.datasets {
            match Manifest::load(&r.manifest).and_then(|m| load_csv(&r.csv, &m).map(|d| (m, d))) {
                Ok((manifest, raw)) => sources.push(SourceData {
                    reference: r.clone(),
                    manifest,
                    raw,
                }),
                Err(e) => problems.push(format!("dataset {}: {e}", r.csv.display())),
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidSpec(problems));
        }

        let repeats = spec.repeats();
        let mut runs = Vec::new();
        for (di, src) in sources.iter().enumerate() {
            let n = src.raw.width();
            let rows = src.raw.len();
            let name = src.raw.name().to_owned();
            let (hiddens, keep): (Vec<usize>, Option<usize>) = match spec.protocol {
                Protocol::IncrementalSweep => {
                    let [lo, hi] = spec.hidden_range.unwrap_or([1, n]);
                    if hi > n {
                        problems.push(format!("{name}: hidden_range upper bound {hi} exceeds n = {n}"));
                    }
                    ((lo..=hi.min(n)).collect(), None)
                }
                Protocol::Compare if n > spec.top_features => {
                    (vec![spec.top_features.div_ceil(2)], Some(spec.top_features))
                }
                Protocol::Compare => (vec![spec.hidden.unwrap_or(n.div_ceil(2))], None),
                _ => (spec.hidden.into_iter().collect(), None),
            };
            let splits: Vec<Split> = match spec.protocol {
                Protocol::FullTrain | Protocol::IncrementalSweep => vec![Split::Full; repeats],
                Protocol::KfoldCv => {
                    if spec.folds > rows {
                        problems.push(format!("{name}: folds {} exceed the {rows} rows", spec.folds));
                    }
                    (0..repeats)
                        .flat_map(|repeat| (0..spec.folds).map(move |fold| Split::Fold { repeat, fold, k: spec.folds }))
                        .collect()
                }
                Protocol::RateSweep => spec
                    .rates
                    .iter()
                    .flat_map(|&rate| (0..repeats).map(move |repeat| Split::Holdout { repeat, rate }))
                    .collect(),
                Protocol::Compare => (0..repeats).map(|repeat| Split::Holdout { repeat, rate: 0.5 }).collect(),
            };
            for split in &splits {
                if let Split::Holdout { rate, .. } = split {
                    let train = (rate * rows as f64 + 1e-9).floor() as usize;
                    if train == 0 || train == rows {
                        problems.push(format!("{name}: rate {rate} leaves an empty side of {rows} rows"));
                    }
                }
            }
            for &algorithm in &spec.algorithms {
                for &driver in &spec.drivers {
                    for &hidden in &hiddens {
                        let width = keep.unwrap_or(n);
                        if algorithm == Algorithm::Vpso {
                            match dimension_count(width, hidden).and_then(|d| spec.vpso.plan(d)) {
                                Ok(_) => {}
                                Err(e) => problems.push(format!("vpso on {name} with m = {hidden}: {e}")),
                            }
                        }
                        for &split in &splits {
                            let index = runs.len();
                            runs.push(RunPlan {
                                index,
                                dataset: di,
                                algorithm,
                                driver,
                                hidden,
                                keep_features: keep,
                                seed: spec.seed + index as u64,
                                split,
                            });
                        }
                    }
                }
            }
        }
        problems.dedup();
        if !problems.is_empty() {
            return Err(Error::InvalidSpec(problems));
        }
        Ok(Self { spec, sources, runs })
    }

    /// Runs every planned run, `spec.jobs` at a time. Failures are collected,
    /// not fatal; results come back ordered by run index.
    pub fn run(&self, progress: &(dyn Fn(Progress<'_>) + Sync)) -> ExperimentResult {
        let total = self.runs.len();
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<RunOutcome>>>> = Mutex::new((0..total).map(|_| None).collect());
        let worker = || loop {
            let i = next.fetch_add(1, Ordering::SeqCst);
            if i >= total {
                break;
            }
            let plan = &self.runs[i];
            progress(Progress::Started { plan, total });
            let outcome = self.execute(plan);
            match &outcome {
                Ok(o) => progress(Progress::Finished { record: &o.record, total }),
                Err(error) => progress(Progress::Failed { plan, error, total }),
            }
            slots.lock().expect("result lock")[i] = Some(outcome);
        };
        let jobs = self.spec.jobs.clamp(1, total.max(1));
        if jobs == 1 {
            worker();
        } else {
            std::thread::scope(|s| {
                for _ in 0..jobs {
                    s.spawn(worker);
                }
            });
        }
        let mut outcomes = Vec::new();
        let mut failures = Vec::new();
        for (i, slot) in slots.into_inner().expect("result lock").into_iter().enumerate() {
            match slot.expect("every run executed") {
                Ok(o) => outcomes.push(o),
                Err(e) => failures.push((i, e)),
            }
        }
        ExperimentResult { outcomes, failures }
    }

    /// Train and test sets of one run, preprocessed on the training rows.
    pub fn materialize(&self, plan: &RunPlan) -> Result<(Dataset, Option<Dataset>)> {
        let raw = &self.sources[plan.dataset].raw;
        let split_seed = plan.split.seed(self.spec.seed);
        let (train, test) = match plan.split {
            Split::Full => (prepare(raw)?, None),
            Split::Fold { fold, k, .. } => {
                let folds = make_folds(raw, k, split_seed, self.spec.stratified)?;
                let (tr, te) = prepare_split(&raw.subset(&folds.train_indices(fold)), &raw.subset(&folds.test_indices(fold)))?;
                (tr, Some(te))
            }
            Split::Holdout { rate, .. } => {
                let (tr, te) = split_indices(raw.len(), rate, split_seed)?;
                let (tr, te) = prepare_split(&raw.subset(&tr), &raw.subset(&te))?;
                (tr, Some(te))
            }
        };
        match plan.keep_features {
            Some(k) if k < train.width() => {
                let ranking = info_gain_rank(&train, self.spec.info_gain_bins)?;
                let reduced = select_top_features(&train, k, &ranking)?;
                let test = test.map(|t| select_top_features(&t, k, &ranking)).transpose()?;
                Ok((reduced, test))
            }
            _ => Ok((train, test)),
        }
    }

    pub fn execute(&self, plan: &RunPlan) -> Result<RunOutcome> {
        let (train, test) = self.materialize(plan)?;
        let (result, config) = match plan.algorithm {
            Algorithm::Pdbp => {
                let config = PdbpConfig {
                    driver: plan.driver,
                    seed: plan.seed,
                    ..self.spec.pdbp.clone()
                };
                (train_pdbp(&train, plan.hidden, &config)?, serde_json::to_value(&config)?)
            }
            Algorithm::Vpso => {
                let config = VpsoConfig {
                    driver: plan.driver,
                    seed: plan.seed,
                    ..self.spec.vpso.clone()
                };
                (optimize_vpso(&train, plan.hidden, &config)?, serde_json::to_value(&config)?)
            }
        };
        let threshold = result.final_report.threshold;
        let test_report = test
            .as_ref()
            .map(|t| kpi_suite(t.labels(), &result.model.predict(t)?, threshold))
            .transpose()?;
        let src = &self.sources[plan.dataset];
        let record = RunRecord {
            index: plan.index,
            dataset: src.raw.name().to_owned(),
            algorithm: plan.algorithm,
            driver: plan.driver,
            hidden: plan.hidden,
            d: result.model.dim(),
            seed: plan.seed,
            split: plan.split,
            split_seed: plan.split.seed(self.spec.seed),
            source_features: src.raw.width(),
            source_rows: src.raw.len(),
            selected_features: train.feature_names().to_vec(),
            train_rows: train.row_ids().to_vec(),
            test_rows: test.as_ref().map(|t| t.row_ids().to_vec()).unwrap_or_default(),
            normalization: train.normalization().cloned(),
            train_report: result.final_report,
            test_report,
            best_iteration: result.best_iteration,
            iterations_run: result.iterations_run,
            stop_reason: result.stop_reason,
            train_time_ms: result.train_time_ms,
            config,
            model: result.model.to_file(),
        };
        Ok(RunOutcome { record, result })
    }
}

pub fn run_experiment(spec: ExperimentSpec) -> Result<ExperimentResult> {
    Ok(Experiment::plan(spec)?.run(&|_| {}))
}

fn with_protocol(mut spec: ExperimentSpec, protocol: Protocol) -> ExperimentSpec {
    spec.protocol = protocol;
    spec
}

/// Trains on the whole dataset; the reports are training-set KPIs.
pub fn run_full_train(spec: ExperimentSpec) -> Result<ExperimentResult> {
    run_experiment(with_protocol(spec, Protocol::FullTrain))
}

/// One full-set training per hidden-neuron count.
pub fn run_incremental_sweep(spec: ExperimentSpec) -> Result<ExperimentResult> {
    run_experiment(with_protocol(spec, Protocol::IncrementalSweep))
}

pub fn run_kfold_cv(spec: ExperimentSpec) -> Result<ExperimentResult> {
    run_experiment(with_protocol(spec, Protocol::KfoldCv))
}

pub fn run_rate_sweep(spec: ExperimentSpec) -> Result<ExperimentResult> {
    run_experiment(with_protocol(spec, Protocol::RateSweep))
}

/// Independent 50/50 splits per dataset, with information-gain reduction to
/// `top_features` inputs and `ceil(top_features / 2)` hidden neurons for
/// wider datasets.
pub fn run_compare(spec: ExperimentSpec) -> Result<ExperimentResult> {
    run_experiment(with_protocol(spec, Protocol::Compare))
}

fn write_csv<I, R>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

/// Writes `report.csv` and `table.md` for a set of aggregates.
pub fn write_report(dir: &Path, protocol: Protocol, reports: &[AggregateReport]) -> Result<()> {
    write_csv(
        &dir.join("report.csv"),
        &AggregateReport::csv_header(),
        reports.iter().map(AggregateReport::csv_record),
    )?;
    let table = dir.join("table.md");
    fs::write(&table, render_table(protocol, reports)).map_err(|e| Error::io(table.display().to_string(), e))
}

/// Writes every artifact of an experiment: per-run metadata and traces, the
/// raw rows, the aggregate report and the rendered table.
pub fn write_outputs(dir: &Path, experiment: &Experiment, result: &ExperimentResult) -> Result<Vec<AggregateReport>> {
    let runs = dir.join("runs");
    fs::create_dir_all(&runs).map_err(|e| Error::io(runs.display().to_string(), e))?;
    for o in &result.outcomes {
        let stem = format!("run_{:04}", o.record.index);
        let meta = runs.join(format!("{stem}.json"));
        fs::write(&meta, serde_json::to_string_pretty(&o.record)?).map_err(|e| Error::io(meta.display().to_string(), e))?;
        o.result.write_trace_csv(&runs.join(format!("{stem}_trace.csv")))?;
    }
    write_raw_rows(&runs.join("raw.csv"), &result.raw_rows())?;
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, serde_json::to_string_pretty(&experiment.spec)?)
        .map_err(|e| Error::io(spec_path.display().to_string(), e))?;
    let reports = result.aggregate();
    write_report(dir, experiment.spec.protocol, &reports)?;
    Ok(reports)
}

pub fn write_raw_rows(path: &Path, rows: &[RawRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_raw_rows(path: &Path) -> Result<Vec<RawRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<RawRow>, _>>()?;
    Ok(rows)
}
