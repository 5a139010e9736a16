//! Binary classification KPIs: average squared error, confusion counts,
//! accuracy, F1, ROC AUC, TPR and TNR.
//!
//! A score is classified positive when `score >= threshold`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// True positive rate; 1 when there are no positives.
    pub fn tpr(&self) -> f64 {
        ratio_or_one(self.tp, self.tp + self.fn_)
    }

    /// True negative rate; 1 when there are no negatives.
    pub fn tnr(&self) -> f64 {
        ratio_or_one(self.tn, self.tn + self.fp)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0 or undefined.
    pub fn f1(&self) -> f64 {
        // 2PR/(P+R) reduces to 2tp / (2tp + fp + fn)
        let denom = 2 * self.tp + self.fp + self.fn_;
        if self.tp == 0 || denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn error_rate(&self) -> f64 {
        (self.fp + self.fn_) as f64 / self.total() as f64
    }
}

fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// The six KPIs of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    /// Average squared error, `E / N`.
    pub err: f64,
    pub acc: f64,
    pub f1: f64,
    /// `None` when the evaluated set holds a single class.
    pub auc: Option<f64>,
    pub tpr: f64,
    pub tnr: f64,
    pub counts: ConfusionCounts,
    pub threshold: f64,
}

impl KpiReport {
    pub const CSV_HEADER: [&'static str; 11] = [
        "err", "acc", "f1", "auc", "tpr", "tnr", "tp", "fp", "tn", "fn", "threshold",
    ];

    pub fn csv_record(&self) -> Vec<String> {
        vec![
            self.err.to_string(),
            self.acc.to_string(),
            self.f1.to_string(),
            fmt_auc(self.auc),
            self.tpr.to_string(),
            self.tnr.to_string(),
            self.counts.tp.to_string(),
            self.counts.fp.to_string(),
            self.counts.tn.to_string(),
            self.counts.fn_.to_string(),
            self.threshold.to_string(),
        ]
    }

    /// Value of a named indicator; `None` only for an undefined AUC.
    pub fn get(&self, kpi: Kpi) -> Option<f64> {
        match kpi {
            Kpi::Err => Some(self.err),
            Kpi::Acc => Some(self.acc),
            Kpi::F1 => Some(self.f1),
            Kpi::Auc => self.auc,
            Kpi::Tpr => Some(self.tpr),
            Kpi::Tnr => Some(self.tnr),
        }
    }
}

pub(crate) fn fmt_auc(auc: Option<f64>) -> String {
    auc.map_or_else(|| "n/a".to_owned(), |a| a.to_string())
}

/// Every indicator reported by [`kpi_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kpi {
    Err,
    Acc,
    F1,
    Auc,
    Tpr,
    Tnr,
}

impl Kpi {
    pub const ALL: [Kpi; 6] = [Kpi::Err, Kpi::Acc, Kpi::F1, Kpi::Auc, Kpi::Tpr, Kpi::Tnr];

    pub fn name(self) -> &'static str {
        match self {
            Kpi::Err => "err",
            Kpi::Acc => "acc",
            Kpi::F1 => "f1",
            Kpi::Auc => "auc",
            Kpi::Tpr => "tpr",
            Kpi::Tnr => "tnr",
        }
    }
}

/// The indicator that drives a training run: the stopping rule of
/// backpropagation or the fitness of the swarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Driver {
    Err,
    Acc,
    F1,
}

impl Driver {
    pub fn minimizes(self) -> bool {
        matches!(self, Driver::Err)
    }

    pub fn value(self, report: &KpiReport) -> f64 {
        match self {
            Driver::Err => report.err,
            Driver::Acc => report.acc,
            Driver::F1 => report.f1,
        }
    }

    /// Maps the natural driver value onto a maximization scale.
    pub fn fitness(self, value: f64) -> f64 {
        if self.minimizes() {
            -value
        } else {
            value
        }
    }

    /// True if `candidate` strictly improves on `incumbent`.
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        if self.minimizes() {
            candidate < incumbent
        } else {
            candidate > incumbent
        }
    }

    /// Driver value computed straight from outputs, skipping the full report.
    pub(crate) fn evaluate(self, labels: &[bool], outputs: &[f64], threshold: f64) -> f64 {
        match self {
            Driver::Err => {
                let sum: f64 = outputs
                    .iter()
                    .zip(labels)
                    .map(|(&o, &y)| {
                        let r = o - if y { 1.0 } else { 0.0 };
                        r * r
                    })
                    .sum();
                0.5 * sum / outputs.len() as f64
            }
            Driver::Acc => tally(labels, outputs, threshold).accuracy(),
            Driver::F1 => tally(labels, outputs, threshold).f1(),
        }
    }
}

impl fmt::Display for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Driver::Err => "ERR",
            Driver::Acc => "ACC",
            Driver::F1 => "F1",
        })
    }
}

impl FromStr for Driver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "err" => Ok(Driver::Err),
            "acc" => Ok(Driver::Acc),
            "f1" => Ok(Driver::F1),
            other => Err(Error::InvalidConfig(format!(
                "unknown driver {other:?} (expected err, acc or f1)"
            ))),
        }
    }
}

fn check_pair(labels: usize, scores: usize) -> Result<()> {
    if labels == 0 {
        return Err(Error::Empty("labels"));
    }
    if labels != scores {
        return Err(Error::DimensionMismatch {
            expected: labels,
            actual: scores,
        });
    }
    Ok(())
}

fn check_threshold(threshold: f64) -> Result<()> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "threshold {threshold} must lie in (0, 1)"
        )))
    }
}

/// Average of the half squared error: `(1/N) * 1/2 * sum (o - y)^2`.
pub fn mean_error(outputs: &[f64], targets: &[bool]) -> Result<f64> {
    check_pair(targets.len(), outputs.len())?;
    Ok(Driver::Err.evaluate(targets, outputs, DEFAULT_THRESHOLD))
}

fn tally(labels: &[bool], scores: &[f64], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&y, &s) in labels.iter().zip(scores) {
        match (y, s >= threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

pub fn confusion(labels: &[bool], scores: &[f64], threshold: f64) -> Result<ConfusionCounts> {
    check_pair(labels.len(), scores.len())?;
    check_threshold(threshold)?;
    Ok(tally(labels, scores, threshold))
}

/// Area under the ROC curve as the probability that a random positive scores
/// above a random negative, ties counting one half.
pub fn auc_roc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_pair(labels.len(), scores.len())?;
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut negatives_below = 0usize;
    let mut concordant = 0.0;
    let mut start = 0;
    while start < order.len() {
        let score = scores[order[start]];
        let mut end = start;
        let (mut pos_here, mut neg_here) = (0usize, 0usize);
        while end < order.len() && scores[order[end]] == score {
            if labels[order[end]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            end += 1;
        }
        concordant += (pos_here * negatives_below) as f64 + 0.5 * (pos_here * neg_here) as f64;
        negatives_below += neg_here;
        start = end;
    }
    Ok(concordant / (positives as f64 * negatives as f64))
}

/// All six KPIs of one set of scores. `err` uses the raw scores, the
/// classification KPIs the thresholded predictions.
pub fn kpi_suite(labels: &[bool], scores: &[f64], threshold: f64) -> Result<KpiReport> {
    let counts = confusion(labels, scores, threshold)?;
    let auc = match auc_roc(labels, scores) {
        Ok(a) => Some(a),
        Err(Error::UndefinedAuc) => None,
        Err(e) => return Err(e),
    };
    Ok(KpiReport {
        err: mean_error(scores, labels)?,
        acc: counts.accuracy(),
        f1: counts.f1(),
        auc,
        tpr: counts.tpr(),
        tnr: counts.tnr(),
        counts,
        threshold,
    })
}
