//! Types shared by the two trainers.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{fmt_auc, Driver, KpiReport};
use crate::snn::SnnModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pdbp,
    Vpso,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Pdbp => "PDBP",
            Algorithm::Vpso => "VPSO",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdbp" => Ok(Algorithm::Pdbp),
            "vpso" => Ok(Algorithm::Vpso),
            other => Err(Error::InvalidConfig(format!(
                "unknown algorithm {other:?} (expected pdbp or vpso)"
            ))),
        }
    }
}

/// KPIs at one iteration. For backpropagation this is the network being
/// trained; for the swarm it is the global-best incumbent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub err: f64,
    pub acc: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub tpr: f64,
    pub tnr: f64,
}

impl TraceRecord {
    pub fn from_report(iteration: usize, r: &KpiReport) -> Self {
        Self {
            iteration,
            err: r.err,
            acc: r.acc,
            f1: r.f1,
            auc: r.auc,
            tpr: r.tpr,
            tnr: r.tnr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The driver did not improve for longer than the tolerance.
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct TrainedResult {
    pub algorithm: Algorithm,
    pub driver: Driver,
    pub model: SnnModel,
    /// 1-based iteration of the last driver improvement.
    pub best_iteration: usize,
    pub iterations_run: usize,
    pub train_time_ms: f64,
    pub stop_reason: StopReason,
    pub trace: Vec<TraceRecord>,
    /// Best driver value seen up to each iteration, in the driver's natural scale.
    pub best_trace: Vec<f64>,
    /// KPIs of the returned model on the training data.
    pub final_report: KpiReport,
}

impl TrainedResult {
    /// Writes the per-iteration trace. Swarm traces carry an extra
    /// `gsbest_fitness` column (the maximized fitness, `-err` for ERR).
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let swarm = self.algorithm == Algorithm::Vpso;
        let mut header = vec!["iteration"];
        if swarm {
            header.push("gsbest_fitness");
        }
        header.extend(["err", "acc", "f1", "auc", "tpr", "tnr"]);
        w.write_record(&header)?;
        for (rec, best) in self.trace.iter().zip(&self.best_trace) {
            let mut row = vec![rec.iteration.to_string()];
            if swarm {
                row.push(self.driver.fitness(*best).to_string());
            }
            row.extend([
                rec.err.to_string(),
                rec.acc.to_string(),
                rec.f1.to_string(),
                fmt_auc(rec.auc),
                rec.tpr.to_string(),
                rec.tnr.to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(())
    }
}
