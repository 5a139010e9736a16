//! Single-hidden-layer sigmoid network.
//!
//! Parameters are stored flat, in the same order a particle encodes them: for
//! each hidden neuron `i` its input weights `w_i1..w_in` followed by its bias
//! `b_i`, then the output weights `w_y1..w_ym` followed by the output bias `b_y`.
//! A network with `n` inputs and `m` hidden neurons therefore has
//! `m(n+2)+1` scalars.

use serde::{Deserialize, Serialize};

use crate::dataio::Dataset;
use crate::error::{Error, Result};

/// Version tag written into persisted models; bump if the parameter order changes.
pub const LAYOUT_VERSION: u32 = 1;

/// Numerically stable logistic function.
///
/// The result is kept strictly inside (0, 1) even where `f64` would round to an
/// endpoint, so downstream code never sees an exact 0 or 1 output.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let s = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Number of scalar parameters of a network with `n` inputs and `m` hidden neurons.
pub fn dimension_count(n: usize, m: usize) -> Result<usize> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidShape { n, m });
    }
    Ok(m * (n + 2) + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnnModel {
    n: usize,
    m: usize,
    params: Vec<f64>,
}

impl SnnModel {
    /// All-zero network.
    pub fn zeros(n: usize, m: usize) -> Result<Self> {
        let d = dimension_count(n, m)?;
        Ok(Self {
            n,
            m,
            params: vec![0.0; d],
        })
    }

    /// Builds a network from a flat parameter vector in particle layout.
    pub fn from_params(n: usize, m: usize, params: Vec<f64>) -> Result<Self> {
        let d = dimension_count(n, m)?;
        if params.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: params.len(),
            });
        }
        if let Some(index) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { n, m, params })
    }

    /// Builds a network from its matrix form: `hidden_weights` is `m` rows of `n`.
    pub fn from_parts(
        hidden_weights: &[Vec<f64>],
        hidden_biases: &[f64],
        output_weights: &[f64],
        output_bias: f64,
    ) -> Result<Self> {
        let m = hidden_weights.len();
        let n = hidden_weights.first().map_or(0, Vec::len);
        let d = dimension_count(n, m)?;
        if hidden_biases.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: hidden_biases.len(),
            });
        }
        if output_weights.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: output_weights.len(),
            });
        }
        let mut params = Vec::with_capacity(d);
        for (row, bias) in hidden_weights.iter().zip(hidden_biases) {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: row.len(),
                });
            }
            params.extend_from_slice(row);
            params.push(*bias);
        }
        params.extend_from_slice(output_weights);
        params.push(output_bias);
        Self::from_params(n, m, params)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Total number of scalar parameters, `m(n+2)+1`.
    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn hidden_weight(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.m && j < self.n);
        self.params[i * (self.n + 1) + j]
    }

    pub fn hidden_weights(&self, i: usize) -> &[f64] {
        let start = i * (self.n + 1);
        &self.params[start..start + self.n]
    }

    pub fn hidden_bias(&self, i: usize) -> f64 {
        assert!(i < self.m);
        self.params[i * (self.n + 1) + self.n]
    }

    pub fn output_weights(&self) -> &[f64] {
        let start = self.m * (self.n + 1);
        &self.params[start..start + self.m]
    }

    pub fn output_bias(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    /// Network output for one input row.
    pub fn feedforward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: x.len(),
            });
        }
        Ok(forward_flat(&self.params, self.n, self.m, x))
    }

    /// Outputs for every row of a dataset.
    pub fn predict(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_width(data)?;
        let mut out = vec![0.0; data.len()];
        forward_batch(&self.params, self.n, self.m, data.features(), &mut out);
        Ok(out)
    }

    /// `theta <- theta - rate * grad`.
    pub(crate) fn descend(&mut self, grads: &Gradients, rate: f64) {
        debug_assert_eq!(grads.values.len(), self.params.len());
        for (p, g) in self.params.iter_mut().zip(&grads.values) {
            *p -= rate * g;
        }
    }

    #[cfg(test)]
    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_width(&self, data: &Dataset) -> Result<()> {
        if data.width() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                actual: data.width(),
            });
        }
        Ok(())
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            n: self.n,
            m: self.m,
            params: self.params.clone(),
            layout_version: LAYOUT_VERSION,
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.layout_version != LAYOUT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported model layout version {}",
                file.layout_version
            )));
        }
        Self::from_params(file.n, file.m, file.params)
    }
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub n: usize,
    pub m: usize,
    pub params: Vec<f64>,
    pub layout_version: u32,
}

/// A swarm search point: a flat parameter vector in network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleVector(Vec<f64>);

impl ParticleVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn d(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

pub fn encode_particle(model: &SnnModel) -> ParticleVector {
    ParticleVector(model.params.clone())
}

pub fn decode_particle(v: &ParticleVector, n: usize, m: usize) -> Result<SnnModel> {
    SnnModel::from_params(n, m, v.0.clone())
}

/// Partial derivatives of the summed squared error, laid out like [`SnnModel`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl Gradients {
    fn zeros(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            values: vec![0.0; m * (n + 2) + 1],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn hidden_weight(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.m && j < self.n);
        self.values[i * (self.n + 1) + j]
    }

    pub fn hidden_bias(&self, i: usize) -> f64 {
        self.values[i * (self.n + 1) + self.n]
    }

    pub fn output_weight(&self, i: usize) -> f64 {
        self.values[self.m * (self.n + 1) + i]
    }

    pub fn output_bias(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, g| acc.max(g.abs()))
    }
}

/// Gradient of `E = 1/2 sum (o_i - y_i)^2` over the whole batch.
pub fn gradients(model: &SnnModel, batch: &Dataset) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(Error::Empty("gradient batch"));
    }
    model.check_width(batch)?;
    let mut outputs = vec![0.0; batch.len()];
    let mut scratch = BackpropScratch::new(model.m);
    let mut grads = Gradients::zeros(model.n, model.m);
    backprop(model, batch.features(), batch.labels(), &mut outputs, &mut scratch, &mut grads);
    Ok(grads)
}

/// Summed squared error `E` of the model over a dataset.
pub fn squared_error(model: &SnnModel, data: &Dataset) -> Result<f64> {
    let outputs = model.predict(data)?;
    Ok(outputs
        .iter()
        .zip(data.labels())
        .map(|(o, &y)| {
            let r = o - target(y);
            0.5 * r * r
        })
        .sum())
}

#[inline]
pub(crate) fn target(label: bool) -> f64 {
    if label {
        1.0
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn forward_flat(params: &[f64], n: usize, m: usize, x: &[f64]) -> f64 {
    let stride = n + 1;
    let out = &params[m * stride..];
    let mut z = out[m];
    for (i, w_out) in out[..m].iter().enumerate() {
        let row = &params[i * stride..(i + 1) * stride];
        let a = row[n] + dot(&row[..n], x);
        z += w_out * sigmoid(a);
    }
    sigmoid(z)
}

/// Evaluates a flat parameter vector on every row of a row-major feature block.
pub(crate) fn forward_batch(params: &[f64], n: usize, m: usize, features: &[f64], out: &mut [f64]) {
    for (o, x) in out.iter_mut().zip(features.chunks_exact(n)) {
        *o = forward_flat(params, n, m, x);
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) struct BackpropScratch {
    hidden: Vec<f64>,
}

impl BackpropScratch {
    pub(crate) fn new(m: usize) -> Self {
        Self {
            hidden: vec![0.0; m],
        }
    }
}

/// One full-batch forward and backward pass. Writes the outputs and returns `E`.
pub(crate) fn backprop(
    model: &SnnModel,
    features: &[f64],
    labels: &[bool],
    outputs: &mut [f64],
    scratch: &mut BackpropScratch,
    grads: &mut Gradients,
) -> f64 {
    let (n, m) = (model.n, model.m);
    let stride = n + 1;
    let params = &model.params;
    let out_w = &params[m * stride..m * stride + m];
    let out_b = params[m * stride + m];
    grads.values.iter_mut().for_each(|g| *g = 0.0);
    let mut error = 0.0;

    for ((x, &y), o_slot) in features.chunks_exact(n).zip(labels).zip(outputs.iter_mut()) {
        let mut z = out_b;
        for (i, h) in scratch.hidden.iter_mut().enumerate() {
            let row = &params[i * stride..(i + 1) * stride];
            *h = sigmoid(row[n] + dot(&row[..n], x));
            z += out_w[i] * *h;
        }
        let o = sigmoid(z);
        *o_slot = o;
        let residual = o - target(y);
        error += 0.5 * residual * residual;

        let delta_out = residual * o * (1.0 - o);
        let (hidden_grads, out_grads) = grads.values.split_at_mut(m * stride);
        for (i, &h) in scratch.hidden.iter().enumerate() {
            out_grads[i] += delta_out * h;
            let delta_h = delta_out * out_w[i] * h * (1.0 - h);
            let g_row = &mut hidden_grads[i * stride..(i + 1) * stride];
            for (g, xj) in g_row[..n].iter_mut().zip(x) {
                *g += delta_h * xj;
            }
            g_row[n] += delta_h;
        }
        out_grads[m] += delta_out;
    }
    error
}

impl Gradients {
    pub(crate) fn for_model(model: &SnnModel) -> Self {
        Self::zeros(model.n, model.m)
    }
}
