//! Variant particle swarm optimizer for network weights.
//!
//! Each particle is a flat weight vector in `[-1, 1]^d`. Compared with the
//! textbook swarm this variant
//!
//! - attracts particles to the best value seen in their ring neighbourhood
//!   (`sBest`) and to the best of those across the swarm (`gsBest`),
//! - damps velocities with the Clerc constriction factor,
//! - gives every particle its own inertia weight derived from its normalized
//!   fitness ("mass"),
//! - reshuffles the ring every `T` iterations,
//! - clamps velocities to `[-1, 1]` and re-draws any coordinate that leaves
//!   the box.
//!
//! Fitness is always maximized; the ERR driver is handled as `-err`.
//!
//! All random draws happen sequentially in a fixed order (initial positions,
//! initial velocities, then per iteration: ring shuffle, `r1`/`r2` for every
//! particle and dimension, repairs), so a seed fully determines a run.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{kpi_suite, Driver, KpiReport, DEFAULT_THRESHOLD};
use crate::snn::{dimension_count, forward_batch, SnnModel};
use crate::training::{Algorithm, StopReason, TraceRecord, TrainedResult};

/// Coefficient in the inertia formula; with mass 1 it maps `omega_max` to
/// approximately `omega_min`.
const INERTIA_SPAN: f64 = 2.164;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwarmMode {
    /// Ring-neighbourhood bests with constriction.
    #[default]
    Variant,
    /// Reference swarm: personal and global bests, no constriction.
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VpsoConfig {
    pub driver: Driver,
    /// `None` means `2 * d`.
    pub population: Option<usize>,
    pub max_iterations: usize,
    /// Iterations without a `gsBest` change before stopping; `None` means `20 * d`.
    pub tolerance: Option<usize>,
    /// Ring reshuffle period; `None` means `10 * d`.
    pub reorder_period: Option<usize>,
    pub c1: f64,
    pub c2: f64,
    pub omega_max: f64,
    pub omega_min: f64,
    pub mass_epsilon: f64,
    pub threshold: f64,
    /// Initial velocities are uniform in `[-init_velocity, init_velocity]`.
    pub init_velocity: f64,
    pub mode: SwarmMode,
    pub seed: u64,
}

impl Default for VpsoConfig {
    fn default() -> Self {
        Self {
            driver: Driver::Acc,
            population: None,
            max_iterations: 20_000,
            tolerance: None,
            reorder_period: None,
            c1: 2.05,
            c2: 2.05,
            omega_max: 0.9,
            omega_min: 0.4,
            mass_epsilon: 0.001,
            threshold: DEFAULT_THRESHOLD,
            init_velocity: 0.1,
            mode: SwarmMode::Variant,
            seed: 0,
        }
    }
}

/// Sizes derived from the particle dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwarmPlan {
    pub d: usize,
    pub population: usize,
    pub tolerance: usize,
    pub reorder_period: usize,
    pub chi: f64,
}

impl VpsoConfig {
    pub fn plan(&self, d: usize) -> Result<SwarmPlan> {
        let plan = SwarmPlan {
            d,
            population: self.population.unwrap_or(2 * d),
            tolerance: self.tolerance.unwrap_or(20 * d),
            reorder_period: self.reorder_period.unwrap_or(10 * d),
            chi: match self.mode {
                SwarmMode::Variant => constriction(self.c1, self.c2)?,
                SwarmMode::Standard => 1.0,
            },
        };
        let mut problems = Vec::new();
        if plan.population < 3 {
            problems.push(format!("population {} must be at least 3", plan.population));
        }
        if plan.tolerance == 0 {
            problems.push("tolerance must be at least 1".to_owned());
        }
        if plan.reorder_period == 0 {
            problems.push("reorder_period must be at least 1".to_owned());
        }
        if self.max_iterations == 0 {
            problems.push("max_iterations must be at least 1".to_owned());
        }
        if !(self.mass_epsilon > 0.0 && self.mass_epsilon.is_finite()) {
            problems.push(format!("mass_epsilon {} must be positive", self.mass_epsilon));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            problems.push(format!("threshold {} must lie in (0, 1)", self.threshold));
        }
        if !(self.init_velocity >= 0.0 && self.init_velocity <= 1.0) {
            problems.push(format!("init_velocity {} must lie in [0, 1]", self.init_velocity));
        }
        if !(self.omega_max.is_finite() && self.omega_min.is_finite()) {
            problems.push("inertia bounds must be finite".to_owned());
        }
        if problems.is_empty() {
            Ok(plan)
        } else {
            Err(Error::InvalidConfig(problems.join("; ")))
        }
    }
}

/// Clerc constriction factor for `phi = c1 + c2 > 4`. The magnitude is
/// returned: the closed form is negative for every admissible `phi`.
pub fn constriction(c1: f64, c2: f64) -> Result<f64> {
    let phi = c1 + c2;
    if !(phi > 4.0) || !phi.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "constriction needs c1 + c2 > 4, got {phi}"
        )));
    }
    Ok((2.0 / (2.0 - phi - (phi * (phi - 4.0)).sqrt())).abs())
}

/// Normalized standing of a particle, `(f - worst + eps) / (best - worst + eps)`.
pub fn mass(fitness: f64, best: f64, worst: f64, epsilon: f64) -> f64 {
    (fitness - worst + epsilon) / (best - worst + epsilon)
}

/// Inertia weight falling from `omega_max` (mass near 0) to about `omega_min` (mass 1).
pub fn adaptive_inertia(mass: f64, omega_max: f64, omega_min: f64) -> f64 {
    let e = mass.exp();
    omega_max - INERTIA_SPAN * (omega_max - omega_min) * (e - 1.0) / (e + 1.0)
}

/// Circular particle ordering. `order[slot]` is the particle sitting at `slot`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ring {
    order: Vec<usize>,
    slot_of: Vec<usize>,
}

impl Ring {
    pub fn identity(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            slot_of: (0..len).collect(),
        }
    }

    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let mut slot_of = vec![usize::MAX; order.len()];
        for (slot, &p) in order.iter().enumerate() {
            if p >= order.len() || slot_of[p] != usize::MAX {
                return Err(Error::InvalidConfig("ring order is not a permutation".to_owned()));
            }
            slot_of[p] = slot;
        }
        Ok(Self { order, slot_of })
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Left and right neighbours of `particle`.
    pub fn neighbors(&self, particle: usize) -> (usize, usize) {
        let len = self.order.len();
        let slot = self.slot_of[particle];
        let left = if slot == 0 { len - 1 } else { slot - 1 };
        let right = (slot + 1) % len;
        (self.order[left], self.order[right])
    }

    pub fn shuffle(&mut self, rng: &mut impl Rng) {
        self.order.shuffle(rng);
        for (slot, &p) in self.order.iter().enumerate() {
            self.slot_of[p] = slot;
        }
    }
}

/// Left and right neighbours of particle `i` on the ring described by `order`.
pub fn ring_neighbors(i: usize, order: &[usize], population: usize) -> Result<(usize, usize)> {
    if order.len() != population {
        return Err(Error::DimensionMismatch {
            expected: population,
            actual: order.len(),
        });
    }
    if i >= population {
        return Err(Error::InvalidConfig(format!(
            "particle {i} out of range for population {population}"
        )));
    }
    Ok(Ring::from_order(order.to_vec())?.neighbors(i))
}

/// One velocity component after the variant update, clamped to `[-1, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn update_velocity(
    v: f64,
    p: f64,
    sbest_p: f64,
    gsbest_p: f64,
    omega: f64,
    chi: f64,
    c1: f64,
    c2: f64,
    r1: f64,
    r2: f64,
) -> f64 {
    raw_velocity(v, p, sbest_p, gsbest_p, omega, chi, c1, c2, r1, r2).clamp(-1.0, 1.0)
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn raw_velocity(
    v: f64,
    p: f64,
    sbest_p: f64,
    gsbest_p: f64,
    omega: f64,
    chi: f64,
    c1: f64,
    c2: f64,
    r1: f64,
    r2: f64,
) -> f64 {
    chi * (omega * v + c1 * r1 * (sbest_p - p) + c2 * r2 * (gsbest_p - p))
}

/// Moves one coordinate. A coordinate leaving `[-1, 1]` is re-drawn uniformly
/// in the box and its velocity set to a tenth of the new position.
pub fn apply_position_update_and_repair(p: f64, v: f64, rng: &mut impl Rng) -> (f64, f64) {
    let moved = p + v;
    if (-1.0..=1.0).contains(&moved) {
        (moved, v)
    } else {
        let fresh = rng.gen_range(-1.0..=1.0);
        (fresh, 0.1 * fresh)
    }
}

/// Full swarm state. Positions and velocities are stored row-major, one row per particle.
#[derive(Debug, Clone)]
pub struct SwarmState {
    d: usize,
    mode: SwarmMode,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    fitness: Vec<f64>,
    masses: Vec<f64>,
    inertias: Vec<f64>,
    sbest_values: Vec<f64>,
    sbest_positions: Vec<f64>,
    gsbest_value: f64,
    gsbest_position: Vec<f64>,
    ring: Ring,
    iteration: usize,
    reordered: bool,
}

impl SwarmState {
    pub fn new(positions: Vec<Vec<f64>>, velocities: Vec<Vec<f64>>, mode: SwarmMode) -> Result<Self> {
        let population = positions.len();
        let d = positions.first().map_or(0, Vec::len);
        if population == 0 || d == 0 {
            return Err(Error::Empty("swarm"));
        }
        if velocities.len() != population
            || positions.iter().chain(&velocities).any(|row| row.len() != d)
        {
            return Err(Error::InvalidConfig("ragged swarm rows".to_owned()));
        }
        Ok(Self {
            d,
            mode,
            positions: positions.concat(),
            velocities: velocities.concat(),
            fitness: vec![f64::NEG_INFINITY; population],
            masses: vec![1.0; population],
            inertias: vec![0.0; population],
            sbest_values: vec![f64::NEG_INFINITY; population],
            sbest_positions: vec![0.0; population * d],
            gsbest_value: f64::NEG_INFINITY,
            gsbest_position: vec![0.0; d],
            ring: Ring::identity(population),
            iteration: 0,
            reordered: false,
        })
    }

    fn random(population: usize, d: usize, init_velocity: f64, mode: SwarmMode, rng: &mut ChaCha8Rng) -> Self {
        let positions = (0..population)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect())
            .collect();
        let velocities = (0..population)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        if init_velocity > 0.0 {
                            rng.gen_range(-init_velocity..=init_velocity)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(positions, velocities, mode).expect("non-empty swarm")
    }

    pub fn population(&self) -> usize {
        self.fitness.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.d..(i + 1) * self.d]
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn fitness(&self) -> &[f64] {
        &self.fitness
    }

    pub fn set_fitness(&mut self, fitness: &[f64]) -> Result<()> {
        if fitness.len() != self.population() {
            return Err(Error::DimensionMismatch {
                expected: self.population(),
                actual: fitness.len(),
            });
        }
        self.fitness.copy_from_slice(fitness);
        Ok(())
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn inertias(&self) -> &[f64] {
        &self.inertias
    }

    pub fn sbest_values(&self) -> &[f64] {
        &self.sbest_values
    }

    pub fn sbest_position(&self, i: usize) -> &[f64] {
        &self.sbest_positions[i * self.d..(i + 1) * self.d]
    }

    pub fn gsbest_value(&self) -> f64 {
        self.gsbest_value
    }

    pub fn gsbest_position(&self) -> &[f64] {
        &self.gsbest_position
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    pub fn set_ring(&mut self, ring: Ring) -> Result<()> {
        if ring.len() != self.population() {
            return Err(Error::DimensionMismatch {
                expected: self.population(),
                actual: ring.len(),
            });
        }
        self.ring = ring;
        Ok(())
    }

    /// Number of completed fitness evaluations of the whole swarm.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Whether the ring was reshuffled during the latest iteration.
    pub fn reordered(&self) -> bool {
        self.reordered
    }

    fn copy_position_into_sbest(&mut self, target: usize, source: usize) {
        let d = self.d;
        let (src, dst) = (source * d, target * d);
        self.sbest_positions[dst..dst + d].copy_from_slice(&self.positions[src..src + d]);
    }

    fn update_masses(&mut self, epsilon: f64, omega_max: f64, omega_min: f64) {
        let best = self.fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let worst = self.fitness.iter().copied().fold(f64::INFINITY, f64::min);
        for i in 0..self.population() {
            self.masses[i] = mass(self.fitness[i], best, worst, epsilon);
            self.inertias[i] = adaptive_inertia(self.masses[i], omega_max, omega_min);
        }
    }
}

/// Updates every `sBest` from the current fitness of the particle and its ring
/// neighbours (only the particle itself in standard mode), then `gsBest` from
/// the `sBest` values. Values never decrease. An `sBest` tie takes the newer
/// point, preferring the right neighbour, then the left, then the particle
/// itself, so a swarm on a fitness plateau keeps sharing positions instead of
/// collapsing. `gsBest` only moves on strict improvement.
/// Returns whether `gsBest` changed.
pub fn update_sbest_gsbest(state: &mut SwarmState) -> bool {
    let population = state.population();
    for i in 0..population {
        let candidates = match state.mode {
            SwarmMode::Variant => {
                let (left, right) = state.ring.neighbors(i);
                [i, left, right]
            }
            SwarmMode::Standard => [i, i, i],
        };
        let mut best_value = state.sbest_values[i];
        let mut best_source = None;
        for &c in &candidates {
            if state.fitness[c] >= best_value {
                best_value = state.fitness[c];
                best_source = Some(c);
            }
        }
        if let Some(src) = best_source {
            state.sbest_values[i] = best_value;
            state.copy_position_into_sbest(i, src);
        }
    }

    let mut changed = false;
    for i in 0..population {
        if state.sbest_values[i] > state.gsbest_value {
            state.gsbest_value = state.sbest_values[i];
            let d = state.d;
            state.gsbest_position = state.sbest_positions[i * d..(i + 1) * d].to_vec();
            changed = true;
        }
    }
    changed
}

/// Evaluates every particle on the data and stores its fitness.
fn evaluate(state: &mut SwarmState, data: &Dataset, m: usize, driver: Driver, threshold: f64, outputs: &mut [f64]) {
    let n = data.width();
    for i in 0..state.population() {
        let params = &state.positions[i * state.d..(i + 1) * state.d];
        forward_batch(params, n, m, data.features(), outputs);
        state.fitness[i] = driver.fitness(driver.evaluate(data.labels(), outputs, threshold));
    }
}

/// Velocity then position update for the whole swarm.
fn move_swarm(state: &mut SwarmState, config: &VpsoConfig, plan: &SwarmPlan, rng: &mut ChaCha8Rng) {
    let d = state.d;
    for i in 0..state.population() {
        let omega = state.inertias[i];
        for j in 0..d {
            let k = i * d + j;
            let r1 = 1.0 - rng.gen::<f64>();
            let r2 = 1.0 - rng.gen::<f64>();
            state.velocities[k] = update_velocity(
                state.velocities[k],
                state.positions[k],
                state.sbest_positions[k],
                state.gsbest_position[j],
                omega,
                plan.chi,
                config.c1,
                config.c2,
                r1,
                r2,
            );
        }
    }
    for k in 0..state.positions.len() {
        let (p, v) = apply_position_update_and_repair(state.positions[k], state.velocities[k], rng);
        state.positions[k] = p;
        state.velocities[k] = v;
    }
}

fn incumbent_report(
    position: &[f64],
    data: &Dataset,
    m: usize,
    threshold: f64,
    outputs: &mut [f64],
) -> Result<KpiReport> {
    forward_batch(position, data.width(), m, data.features(), outputs);
    kpi_suite(data.labels(), outputs, threshold)
}

pub fn optimize_vpso(data: &Dataset, m: usize, config: &VpsoConfig) -> Result<TrainedResult> {
    optimize_vpso_observed(data, m, config, |_| {})
}

/// Like [`optimize_vpso`], calling `observer` with the swarm after every
/// completed move (velocity, position and repair).
pub fn optimize_vpso_observed(
    data: &Dataset,
    m: usize,
    config: &VpsoConfig,
    mut observer: impl FnMut(&SwarmState),
) -> Result<TrainedResult> {
    data.ensure_trainable()?;
    let d = dimension_count(data.width(), m)?;
    let plan = config.plan(d)?;
    let driver = config.driver;

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = SwarmState::random(plan.population, d, config.init_velocity, config.mode, &mut rng);
    let mut outputs = vec![0.0; data.len()];

    let mut trace = Vec::new();
    let mut best_trace = Vec::new();
    let mut incumbent: Option<KpiReport> = None;
    let mut best_iteration = 0;
    let mut stall = 0usize;
    let mut stop_reason = StopReason::MaxIterations;

    for iteration in 1..=config.max_iterations {
        evaluate(&mut state, data, m, driver, config.threshold, &mut outputs);
        if state.fitness.iter().any(|f| f.is_nan()) {
            return Err(Error::Diverged { iteration });
        }
        state.iteration = iteration;
        state.reordered = false;
        if update_sbest_gsbest(&mut state) {
            stall = 0;
            best_iteration = iteration;
            incumbent = Some(incumbent_report(
                &state.gsbest_position,
                data,
                m,
                config.threshold,
                &mut outputs,
            )?);
        } else {
            stall += 1;
        }
        let report = incumbent.as_ref().expect("gsBest is set on the first iteration");
        trace.push(TraceRecord::from_report(iteration, report));
        best_trace.push(driver.fitness(state.gsbest_value));
        if stall >= plan.tolerance {
            stop_reason = StopReason::Stalled;
            break;
        }
        if iteration == config.max_iterations {
            break;
        }
        if iteration % plan.reorder_period == 0 {
            state.ring.shuffle(&mut rng);
            state.reordered = true;
        }
        state.update_masses(config.mass_epsilon, config.omega_max, config.omega_min);
        move_swarm(&mut state, config, &plan, &mut rng);
        observer(&state);
    }

    let model = SnnModel::from_params(data.width(), m, state.gsbest_position.clone())?;
    let final_report = incumbent.expect("at least one iteration ran");
    Ok(TrainedResult {
        algorithm: Algorithm::Vpso,
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
