//! Performance-driven backpropagation.
//!
//! Full-batch gradient descent on the summed squared error. A chosen KPI is
//! evaluated after every step; training stops once that KPI has gone more than
//! `tolerance` iterations without beating its best value, or at
//! `max_iterations`. The weights at the moment of stopping are returned.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{kpi_suite, Driver, KpiReport, DEFAULT_THRESHOLD};
use crate::snn::{backprop, dimension_count, BackpropScratch, Gradients, SnnModel};
use crate::training::{Algorithm, StopReason, TraceRecord, TrainedResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdbpConfig {
    pub driver: Driver,
    pub max_iterations: usize,
    /// Stall tolerance; `None` means `20 * d`.
    pub tolerance: Option<usize>,
    pub learning_rate: f64,
    /// Initial weights are drawn uniformly from `[-init_range, init_range]`.
    pub init_range: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for PdbpConfig {
    fn default() -> Self {
        Self {
            driver: Driver::Acc,
            max_iterations: 20_000,
            tolerance: None,
            learning_rate: 0.05,
            init_range: 0.5,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
        }
    }
}

impl PdbpConfig {
    pub fn tolerance_for(&self, d: usize) -> usize {
        self.tolerance.unwrap_or(20 * d)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.max_iterations == 0 {
            problems.push("max_iterations must be at least 1".to_owned());
        }
        if self.tolerance == Some(0) {
            problems.push("tolerance must be at least 1".to_owned());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            problems.push(format!("learning_rate {} must be finite and positive", self.learning_rate));
        }
        if !(self.init_range.is_finite() && self.init_range >= 0.0) {
            problems.push(format!("init_range {} must be finite and non-negative", self.init_range));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            problems.push(format!("threshold {} must lie in (0, 1)", self.threshold));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Reusable buffers for repeated full-batch steps.
struct Stepper {
    outputs: Vec<f64>,
    scratch: BackpropScratch,
    grads: Gradients,
}

impl Stepper {
    fn new(model: &SnnModel, rows: usize) -> Self {
        Self {
            outputs: vec![0.0; rows],
            scratch: BackpropScratch::new(model.m()),
            grads: Gradients::for_model(model),
        }
    }

    /// Forward pass, backward pass and update in place. The report describes
    /// the forward pass, i.e. the weights before the update.
    fn step(&mut self, model: &mut SnnModel, data: &Dataset, rate: f64, threshold: f64) -> Result<KpiReport> {
        backprop(
            model,
            data.features(),
            data.labels(),
            &mut self.outputs,
            &mut self.scratch,
            &mut self.grads,
        );
        model.descend(&self.grads, rate);
        kpi_suite(data.labels(), &self.outputs, threshold)
    }
}

/// One full-batch gradient step. Returns the updated network and the KPIs of
/// the forward pass that produced the gradient.
pub fn pdbp_step(model: &SnnModel, data: &Dataset, learning_rate: f64) -> Result<(SnnModel, KpiReport)> {
    pdbp_step_with_threshold(model, data, learning_rate, DEFAULT_THRESHOLD)
}

pub fn pdbp_step_with_threshold(
    model: &SnnModel,
    data: &Dataset,
    learning_rate: f64,
    threshold: f64,
) -> Result<(SnnModel, KpiReport)> {
    data.ensure_trainable()?;
    if data.width() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            actual: data.width(),
        });
    }
    let mut next = model.clone();
    let report = Stepper::new(model, data.len()).step(&mut next, data, learning_rate, threshold)?;
    if next.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Diverged { iteration: 1 });
    }
    Ok((next, report))
}

pub(crate) fn init_uniform(n: usize, m: usize, range: f64, rng: &mut ChaCha8Rng) -> Result<SnnModel> {
    let d = dimension_count(n, m)?;
    let params = (0..d)
        .map(|_| if range > 0.0 { rng.gen_range(-range..=range) } else { 0.0 })
        .collect();
    SnnModel::from_params(n, m, params)
}

pub fn train_pdbp(data: &Dataset, m: usize, config: &PdbpConfig) -> Result<TrainedResult> {
    config.validate()?;
    data.ensure_trainable()?;
    let d = dimension_count(data.width(), m)?;
    let tolerance = config.tolerance_for(d);
    let driver = config.driver;

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = init_uniform(data.width(), m, config.init_range, &mut rng)?;
    let mut stepper = Stepper::new(&model, data.len());

    let mut trace = Vec::new();
    let mut best_trace = Vec::new();
    let mut best: Option<f64> = None;
    let mut best_iteration = 0;
    let mut stall = 0usize;
    let mut stop_reason = StopReason::MaxIterations;

    for iteration in 1..=config.max_iterations {
        let report = stepper.step(&mut model, data, config.learning_rate, config.threshold)?;
        let value = driver.value(&report);
        if !value.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { iteration });
        }
        trace.push(TraceRecord::from_report(iteration, &report));
        match best {
            Some(b) if !driver.improves(value, b) => stall += 1,
            _ => {
                best = Some(value);
                best_iteration = iteration;
                stall = 0;
            }
        }
        best_trace.push(best.expect("set on first iteration"));
        if stall > tolerance {
            stop_reason = StopReason::Stalled;
            break;
        }
    }

    let outputs = model.predict(data)?;
    let final_report = kpi_suite(data.labels(), &outputs, config.threshold)?;
    Ok(TrainedResult {
        algorithm: Algorithm::Pdbp,
        driver,
        model,
        best_iteration,
        iterations_run: trace.len(),
        train_time_ms: started.elapsed().as_secs_f64() * 1e3,
        stop_reason,
        trace,
        best_trace,
        final_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snn::gradients;

    fn and_data() -> Dataset {
        Dataset::from_rows(
            "and",
            &[vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]],
            &[false, false, false, true],
        )
        .unwrap()
    }

    fn config(driver: Driver, seed: u64) -> PdbpConfig {
        PdbpConfig {
            driver,
            seed,
            ..PdbpConfig::default()
        }
    }

    #[test]
    fn learns_and_for_most_seeds() {
        let solved = (0..10)
            .filter(|&seed| {
                // ACC sits on a 0.75 plateau for far longer than 20d iterations,
                // so the stall rule is stretched over the whole budget.
                let mut c = config(Driver::Acc, seed);
                c.max_iterations = 5000;
                c.tolerance = Some(5000);
                let r = train_pdbp(&and_data(), 1, &c).unwrap();
                r.trace.iter().any(|t| t.acc == 1.0) && r.final_report.acc == 1.0
            })
            .count();
        assert!(solved >= 8, "solved {solved}/10");
    }

    #[test]
    fn constant_labels_stop_early() {
        let d = Dataset::from_rows("ones", &[vec![0.1], vec![0.7], vec![0.4]], &[true; 3]).unwrap();
        let r = train_pdbp(&d, 2, &config(Driver::Acc, 3)).unwrap();
        let tau = 20 * dimension_count(1, 2).unwrap();
        assert_eq!(r.final_report.acc, 1.0);
        assert_eq!(r.stop_reason, StopReason::Stalled);
        assert!(r.best_iteration < 50, "I = {}", r.best_iteration);
        assert_eq!(r.iterations_run, r.best_iteration + tau + 1);
    }

    #[test]
    fn step_examples() {
        let d = and_data();
        let model = crate::pdbp::init_uniform(2, 2, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let (same, report) = pdbp_step(&model, &d, 0.0).unwrap();
        assert_eq!(same, model);
        assert_eq!(report.counts.total(), 4);

        let two = Dataset::from_rows("two", &[vec![0.2, 0.9], vec![0.8, 0.1]], &[true, false]).unwrap();
        let (next, _) = pdbp_step(&model, &two, 0.3).unwrap();
        let g = gradients(&model, &two).unwrap();
        for ((p, q), gk) in model.params().iter().zip(next.params()).zip(g.values()) {
            assert!((q - (p - 0.3 * gk)).abs() < 1e-15);
        }
    }

    #[test]
    fn step_at_saturated_fit_leaves_model() {
        let mut model = SnnModel::zeros(1, 1).unwrap();
        model.params_mut()[3] = 800.0;
        let d = Dataset::from_rows("ones", &[vec![0.5], vec![0.1]], &[true, true]).unwrap();
        let (next, report) = pdbp_step(&model, &d, 0.05).unwrap();
        for (p, q) in model.params().iter().zip(next.params()) {
            assert!((p - q).abs() < 1e-30);
        }
        assert_eq!(report.acc, 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(train_pdbp(&and_data(), 0, &config(Driver::Acc, 0)), Err(Error::InvalidShape { .. })));
        let mut c = config(Driver::Acc, 0);
        c.learning_rate = f64::NAN;
        assert!(train_pdbp(&and_data(), 1, &c).is_err());
        let holes = Dataset::from_rows("h", &[vec![f64::NAN], vec![1.0]], &[true, false]).unwrap();
        assert!(matches!(train_pdbp(&holes, 1, &config(Driver::Acc, 0)), Err(Error::MissingValues(1))));
    }

    #[test]
    fn divergence_is_reported() {
        let d = Dataset::from_rows("big", &[vec![1e300], vec![-1e300]], &[true, false]).unwrap();
        let mut c = config(Driver::Err, 0);
        c.learning_rate = 1e300;
        assert!(matches!(train_pdbp(&d, 1, &c), Err(Error::Diverged { .. })));
    }

    #[test]
    fn stopping_and_best_trace_bookkeeping() {
        for driver in [Driver::Err, Driver::Acc, Driver::F1] {
            let mut c = config(driver, 11);
            c.tolerance = Some(30);
            c.learning_rate = 0.5;
            let r = train_pdbp(&and_data(), 2, &c).unwrap();
            assert_eq!(r.trace.len(), r.iterations_run);
            assert!(r.best_iteration <= r.iterations_run);
            if r.stop_reason == StopReason::Stalled {
                assert!(r.iterations_run - r.best_iteration <= 31);
            }
            for w in r.best_trace.windows(2) {
                if driver.minimizes() {
                    assert!(w[1] <= w[0]);
                } else {
                    assert!(w[1] >= w[0]);
                }
            }
        }
    }

    #[test]
    fn identical_seeds_identical_traces() {
        let c = config(Driver::F1, 42);
        let a = train_pdbp(&and_data(), 2, &c).unwrap();
        let b = train_pdbp(&and_data(), 2, &c).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.model, b.model);
    }
}
