//! Differentiable desk-scale models and their curvature factors.
//!
//! The model zoo is deliberately closed: dense layers with identity, tanh or
//! relu activations and a softmax-cross-entropy or mean-squared-error head.
//! Over that vocabulary we hand-roll reverse mode (loss gradients, Jacobian
//! rows, vector-Jacobian products) and forward mode (Jacobian-vector
//! products); there is no general tape. That is enough to produce the batch
//! gradient, the stacked Jacobian `J` (rows scaled by 1/sqrt(b) so that
//! `JᵀH_LJ` is the batch mean), the block-diagonal output-space Hessian
//! `H_L`, and matrix-free curvature-vector products in O(bN) time.

use crate::numerics::{DenseMatrix, DenseVector, RngStream};
use serde::{Deserialize, Serialize};
use std::cell::Cell;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CurvatureError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("parameter count {0} too large to materialize (limit {1})")]
    TooLarge(usize, usize),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
}

pub type Result<T> = std::result::Result<T, CurvatureError>;

/// Guard for operations that materialize N x N matrices.
pub const MATERIALIZE_LIMIT: usize = 5000;

// ---------------------------------------------------------------------------
// Model description
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative at pre-activation `x`; relu'(0) is defined as 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossHead {
    SoftmaxCrossEntropy,
    MeanSquaredError,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        self.input_dim * self.output_dim + self.output_dim
    }
}

/// A dense network plus loss head. `output_dim()` of the last layer is d_z.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    layers: Vec<LayerSpec>,
    loss: LossHead,
}

impl ModelSpec {
    pub fn new(layers: Vec<LayerSpec>, loss: LossHead) -> Result<Self> {
        if layers.is_empty() {
            return Err(CurvatureError::InvalidModel("no layers".into()));
        }
        for w in layers.windows(2) {
            if w[0].output_dim != w[1].input_dim {
                return Err(CurvatureError::InvalidModel(format!(
                    "layer dims do not chain: {} -> {}",
                    w[0].output_dim, w[1].input_dim
                )));
            }
        }
        for l in &layers {
            if l.input_dim == 0 || l.output_dim == 0 {
                return Err(CurvatureError::InvalidModel("zero-width layer".into()));
            }
        }
        Ok(Self { layers, loss })
    }

    /// Multi-layer perceptron from a dimension chain; hidden layers use
    /// `activation`, the output layer is linear.
    pub fn mlp(dims: &[usize], activation: Activation, loss: LossHead) -> Result<Self> {
        if dims.len() < 2 {
            return Err(CurvatureError::InvalidModel(
                "need at least input and output dims".into(),
            ));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| LayerSpec {
                input_dim: dims[i],
                output_dim: dims[i + 1],
                activation: if i + 1 == n {
                    Activation::Identity
                } else {
                    activation
                },
            })
            .collect();
        Self::new(layers, loss)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn loss_head(&self) -> LossHead {
        self.loss
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Gaussian weights with variance `scale^2 / fan_in`, zero biases.
    pub fn init_params(&self, rng: &mut RngStream, scale: f64) -> ParamVector {
        let mut data = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            let sd = scale / (layer.input_dim as f64).sqrt();
            for _ in 0..layer.input_dim * layer.output_dim {
                data.push(sd * rng.standard_normal());
            }
            data.extend(std::iter::repeat_n(0.0, layer.output_dim));
        }
        ParamVector::new(DenseVector::from_vec(data))
    }

    fn check_params(&self, theta: &ParamVector) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(CurvatureError::DimensionMismatch(format!(
                "parameter vector of length {} for a model with {} parameters",
                theta.len(),
                self.param_count()
            )));
        }
        Ok(())
    }
}

/// Flattened parameters. Layout per layer: weights row-major (out x in),
/// then biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: DenseVector,
}

impl ParamVector {
    pub fn new(values: DenseVector) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: DenseVector::zeros(n),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DenseVector {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DenseVector {
        &mut self.values
    }

    pub fn into_values(self) -> DenseVector {
        self.values
    }
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum Targets {
    /// Class indices for softmax-cross-entropy.
    Classes(Vec<usize>),
    /// One target row per sample for mean-squared-error.
    Values(DenseMatrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A mini-batch: inputs are (b x input_dim), targets match the loss head.
#[derive(Clone, Debug)]
pub struct Batch {
    pub inputs: DenseMatrix,
    pub targets: Targets,
}

impl Batch {
    pub fn new(inputs: DenseMatrix, targets: Targets) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(CurvatureError::InvalidBatch("empty batch".into()));
        }
        if targets.len() != inputs.rows() {
            return Err(CurvatureError::InvalidBatch(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn size(&self) -> usize {
        self.inputs.rows()
    }
}

/// A full dataset; batches are gathered by row index.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: DenseMatrix,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(inputs: DenseMatrix, targets: Targets) -> Result<Self> {
        if targets.len() != inputs.rows() {
            return Err(CurvatureError::InvalidBatch(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.len()
            )));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn gather(&self, indices: &[usize]) -> Batch {
        let inputs = DenseMatrix::from_fn(indices.len(), self.inputs.cols(), |i, j| {
            self.inputs.get(indices[i], j)
        });
        let targets = match &self.targets {
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(DenseMatrix::from_fn(
                indices.len(),
                v.cols(),
                |i, j| v.get(indices[i], j),
            )),
        };
        Batch { inputs, targets }
    }

    pub fn as_batch(&self) -> Batch {
        Batch {
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Model-call accounting
// ---------------------------------------------------------------------------

/// Counts differentiation sweeps through the network.
///
/// One unit is one sweep: the batched reverse sweep of a loss gradient
/// counts 1; a Jacobian build counts one per (sample, output) reverse sweep,
/// b*d_z in total; a curvature-vector product counts 2 (one batched forward
/// sweep, one batched reverse sweep). Plain forward evaluations that only
/// set the linearization point ride along uncounted.
#[derive(Debug, Default)]
pub struct CallCounter(Cell<u64>);

impl CallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.set(self.0.get() + n);
    }

    pub fn count(&self) -> u64 {
        self.0.get()
    }

    pub fn reset(&self) {
        self.0.set(0);
    }
}

// ---------------------------------------------------------------------------
// Forward / reverse / forward-mode cores
// ---------------------------------------------------------------------------

struct LayerSlices<'a> {
    weights: &'a [f64],
    biases: &'a [f64],
}

fn layer_slices<'a>(model: &ModelSpec, theta: &'a ParamVector) -> Vec<LayerSlices<'a>> {
    let data = theta.values().as_slice();
    let mut out = Vec::with_capacity(model.layers.len());
    let mut offset = 0;
    for layer in &model.layers {
        let w_len = layer.input_dim * layer.output_dim;
        let weights = &data[offset..offset + w_len];
        let biases = &data[offset + w_len..offset + w_len + layer.output_dim];
        out.push(LayerSlices { weights, biases });
        offset += w_len + layer.output_dim;
    }
    out
}

/// Pre- and post-activation values for one sample.
struct Trace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

fn forward_trace(model: &ModelSpec, slices: &[LayerSlices], x: &[f64]) -> Trace {
    let mut pre = Vec::with_capacity(model.layers.len());
    let mut post = Vec::with_capacity(model.layers.len());
    let mut h: Vec<f64> = x.to_vec();
    for (layer, s) in model.layers.iter().zip(slices) {
        let mut a = vec![0.0; layer.output_dim];
        for (o, ao) in a.iter_mut().enumerate() {
            let row = &s.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
            let mut acc = s.biases[o];
            for (w, hv) in row.iter().zip(&h) {
                acc += w * hv;
            }
            *ao = acc;
        }
        let activated: Vec<f64> = a.iter().map(|&v| layer.activation.apply(v)).collect();
        pre.push(a);
        h = activated.clone();
        post.push(activated);
    }
    Trace {
        input: x.to_vec(),
        pre,
        post,
    }
}

/// Reverse sweep: accumulates `weight * Jᵀ u` into `grad`, where `u` is a
/// cotangent on the network output.
fn accumulate_vjp(
    model: &ModelSpec,
    slices: &[LayerSlices],
    trace: &Trace,
    u: &[f64],
    weight: f64,
    grad: &mut [f64],
) {
    let depth = model.layers.len();
    let last = &model.layers[depth - 1];
    let mut delta: Vec<f64> = u
        .iter()
        .zip(&trace.pre[depth - 1])
        .map(|(ui, &a)| ui * last.activation.derivative(a))
        .collect();
    let mut offset_end = model.param_count();
    for l in (0..depth).rev() {
        let layer = &model.layers[l];
        let w_len = layer.input_dim * layer.output_dim;
        let b_start = offset_end - layer.output_dim;
        let w_start = b_start - w_len;
        let h_prev: &[f64] = if l == 0 { &trace.input } else { &trace.post[l - 1] };
        {
            let gw = &mut grad[w_start..b_start];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * layer.input_dim..(o + 1) * layer.input_dim];
                for (g, hv) in row.iter_mut().zip(h_prev) {
                    *g += weight * d * hv;
                }
            }
            let gb = &mut grad[b_start..offset_end];
            for (g, &d) in gb.iter_mut().zip(&delta) {
                *g += weight * d;
            }
        }
        if l > 0 {
            let prev_layer = &model.layers[l - 1];
            let s = &slices[l];
            let mut next = vec![0.0; layer.input_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &s.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
                for (nv, w) in next.iter_mut().zip(row) {
                    *nv += d * w;
                }
            }
            for (nv, &a) in next.iter_mut().zip(&trace.pre[l - 1]) {
                *nv *= prev_layer.activation.derivative(a);
            }
            delta = next;
        }
        offset_end = w_start;
    }
}

/// Forward-mode sweep: the output tangent `J_sample * v` for a parameter
/// tangent `v`, linearized at `trace`.
fn jvp(model: &ModelSpec, slices: &[LayerSlices], trace: &Trace, v: &[f64]) -> Vec<f64> {
    let mut h_dot: Vec<f64> = vec![0.0; model.input_dim()];
    let mut offset = 0;
    for (l, layer) in model.layers.iter().enumerate() {
        let w_len = layer.input_dim * layer.output_dim;
        let vw = &v[offset..offset + w_len];
        let vb = &v[offset + w_len..offset + w_len + layer.output_dim];
        let h_prev: &[f64] = if l == 0 { &trace.input } else { &trace.post[l - 1] };
        let s = &slices[l];
        let mut a_dot = vec![0.0; layer.output_dim];
        for (o, ad) in a_dot.iter_mut().enumerate() {
            let vrow = &vw[o * layer.input_dim..(o + 1) * layer.input_dim];
            let wrow = &s.weights[o * layer.input_dim..(o + 1) * layer.input_dim];
            let mut acc = vb[o];
            for i in 0..layer.input_dim {
                acc += vrow[i] * h_prev[i] + wrow[i] * h_dot[i];
            }
            *ad = acc;
        }
        h_dot = a_dot
            .iter()
            .zip(&trace.pre[l])
            .map(|(&ad, &a)| layer.activation.derivative(a) * ad)
            .collect();
        offset += w_len + layer.output_dim;
    }
    h_dot
}

// ---------------------------------------------------------------------------
// Loss heads
// ---------------------------------------------------------------------------

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn target_row<'a>(targets: &'a Targets, i: usize, d_z: usize) -> Result<TargetRef<'a>> {
    match targets {
        Targets::Classes(c) => {
            let class = c[i];
            if class >= d_z {
                return Err(CurvatureError::InvalidBatch(format!(
                    "class index {class} out of range for output dim {d_z}"
                )));
            }
            Ok(TargetRef::Class(class))
        }
        Targets::Values(v) => {
            if v.cols() != d_z {
                return Err(CurvatureError::DimensionMismatch(format!(
                    "target rows have {} entries, model outputs {d_z}",
                    v.cols()
                )));
            }
            Ok(TargetRef::Row(v.row(i)))
        }
    }
}

enum TargetRef<'a> {
    Class(usize),
    Row(&'a [f64]),
}

fn sample_loss(head: LossHead, z: &[f64], target: &TargetRef) -> Result<f64> {
    match (head, target) {
        (LossHead::SoftmaxCrossEntropy, TargetRef::Class(y)) => {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            Ok(lse - z[*y])
        }
        (LossHead::MeanSquaredError, TargetRef::Row(y)) => Ok(z
            .iter()
            .zip(y.iter())
            .map(|(zi, yi)| 0.5 * (zi - yi) * (zi - yi))
            .sum()),
        _ => Err(CurvatureError::InvalidBatch(
            "target kind does not match loss head".into(),
        )),
    }
}

/// dL/dz for one sample.
fn sample_loss_gradient(head: LossHead, z: &[f64], target: &TargetRef) -> Result<Vec<f64>> {
    match (head, target) {
        (LossHead::SoftmaxCrossEntropy, TargetRef::Class(y)) => {
            let mut p = softmax(z);
            p[*y] -= 1.0;
            Ok(p)
        }
        (LossHead::MeanSquaredError, TargetRef::Row(y)) => {
            Ok(z.iter().zip(y.iter()).map(|(zi, yi)| zi - yi).collect())
        }
        _ => Err(CurvatureError::InvalidBatch(
            "target kind does not match loss head".into(),
        )),
    }
}

/// d²L/dz² for one sample: `diag(p) - p pᵀ` for softmax-CE, identity for MSE.
fn sample_loss_hessian(head: LossHead, z: &[f64]) -> DenseMatrix {
    let d = z.len();
    match head {
        LossHead::SoftmaxCrossEntropy => {
            let p = softmax(z);
            DenseMatrix::from_fn(d, d, |i, j| {
                let kron = if i == j { p[i] } else { 0.0 };
                kron - p[i] * p[j]
            })
        }
        LossHead::MeanSquaredError => DenseMatrix::identity(d),
    }
}

/// Applies d²L/dz² to a tangent without materializing the block.
fn apply_loss_hessian(head: LossHead, z: &[f64], t: &[f64]) -> Vec<f64> {
    match head {
        LossHead::SoftmaxCrossEntropy => {
            let p = softmax(z);
            let pt: f64 = p.iter().zip(t).map(|(pi, ti)| pi * ti).sum();
            p.iter().zip(t).map(|(pi, ti)| pi * (ti - pt)).collect()
        }
        LossHead::MeanSquaredError => t.to_vec(),
    }
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// Deterministic forward pass for a single input row.
pub fn forward(model: &ModelSpec, theta: &ParamVector, x: &DenseVector) -> Result<DenseVector> {
    model.check_params(theta)?;
    if x.len() != model.input_dim() {
        return Err(CurvatureError::DimensionMismatch(format!(
            "input of length {} for model with input dim {}",
            x.len(),
            model.input_dim()
        )));
    }
    let slices = layer_slices(model, theta);
    let trace = forward_trace(model, &slices, x.as_slice());
    Ok(DenseVector::from_vec(trace.post.last().unwrap().clone()))
}

/// Batch-mean loss and its gradient (one batched reverse sweep).
pub fn loss_and_gradient(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    calls: &CallCounter,
) -> Result<(f64, DenseVector)> {
    model.check_params(theta)?;
    check_batch(model, batch)?;
    let slices = layer_slices(model, theta);
    let b = batch.size();
    let inv_b = 1.0 / b as f64;
    let d_z = model.output_dim();
    let mut loss = 0.0;
    let mut grad = vec![0.0; model.param_count()];
    for i in 0..b {
        let trace = forward_trace(model, &slices, batch.inputs.row(i));
        let z = trace.post.last().unwrap();
        let target = target_row(&batch.targets, i, d_z)?;
        loss += sample_loss(model.loss, z, &target)?;
        let u = sample_loss_gradient(model.loss, z, &target)?;
        accumulate_vjp(model, &slices, &trace, &u, inv_b, &mut grad);
    }
    calls.add(1);
    Ok((loss * inv_b, DenseVector::from_vec(grad)))
}

/// Stacked per-sample Jacobian of the network output, shape (b*d_z x N).
///
/// Row `i*d_z + j` holds d z_j(x_i)/d theta scaled by 1/sqrt(b), so that
/// `JᵀH_LJ` is the batch-mean curvature. Counts b*d_z reverse sweeps.
pub fn jacobian(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    calls: &CallCounter,
) -> Result<DenseMatrix> {
    Ok(factors_impl(model, theta, batch, calls, false)?.0)
}

/// Block-diagonal output-space Hessian `H_L`, shape (b*d_z x b*d_z).
pub fn loss_hessian(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<DenseMatrix> {
    model.check_params(theta)?;
    check_batch(model, batch)?;
    let slices = layer_slices(model, theta);
    let b = batch.size();
    let d_z = model.output_dim();
    let mut h = DenseMatrix::zeros(b * d_z, b * d_z);
    for i in 0..b {
        let trace = forward_trace(model, &slices, batch.inputs.row(i));
        let block = sample_loss_hessian(model.loss, trace.post.last().unwrap());
        for r in 0..d_z {
            for c in 0..d_z {
                h.set(i * d_z + r, i * d_z + c, block.get(r, c));
            }
        }
    }
    Ok(h)
}

/// `J` and `H_L` from shared forward traces: the factor build behind the
/// exact, Woodbury and thermodynamic backends. Counts b*d_z sweeps.
pub fn curvature_factors(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    calls: &CallCounter,
) -> Result<(DenseMatrix, DenseMatrix)> {
    factors_impl(model, theta, batch, calls, true)
}

fn factors_impl(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    calls: &CallCounter,
    with_hessian: bool,
) -> Result<(DenseMatrix, DenseMatrix)> {
    model.check_params(theta)?;
    check_batch(model, batch)?;
    let slices = layer_slices(model, theta);
    let b = batch.size();
    let d_z = model.output_dim();
    let n = model.param_count();
    let row_scale = 1.0 / (b as f64).sqrt();
    let mut j = DenseMatrix::zeros(b * d_z, n);
    let mut h = DenseMatrix::zeros(if with_hessian { b * d_z } else { 0 }, if with_hessian { b * d_z } else { 0 });
    let mut unit = vec![0.0; d_z];
    for i in 0..b {
        let trace = forward_trace(model, &slices, batch.inputs.row(i));
        if with_hessian {
            let block = sample_loss_hessian(model.loss, trace.post.last().unwrap());
            for r in 0..d_z {
                for c in 0..d_z {
                    h.set(i * d_z + r, i * d_z + c, block.get(r, c));
                }
            }
        }
        for out in 0..d_z {
            unit[out] = 1.0;
            accumulate_vjp(
                model,
                &slices,
                &trace,
                &unit,
                row_scale,
                j.row_mut(i * d_z + out),
            );
            unit[out] = 0.0;
        }
    }
    calls.add((b * d_z) as u64);
    Ok((j, h))
}

/// Matrix-free damped curvature-vector product
/// `Jᵀ H_L (J v) + lambda v` in O(bN): one batched forward-mode sweep, a
/// d_z-space Hessian application per sample, one batched reverse sweep.
/// Counts 2 sweeps; `J` is never materialized.
pub fn ggn_vector_product(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    v: &DenseVector,
    damping: f64,
    calls: &CallCounter,
) -> Result<DenseVector> {
    model.check_params(theta)?;
    check_batch(model, batch)?;
    if v.len() != model.param_count() {
        return Err(CurvatureError::DimensionMismatch(format!(
            "vector of length {} for {} parameters",
            v.len(),
            model.param_count()
        )));
    }
    let slices = layer_slices(model, theta);
    let b = batch.size();
    let inv_b = 1.0 / b as f64;
    let mut out = vec![0.0; model.param_count()];
    for i in 0..b {
        let trace = forward_trace(model, &slices, batch.inputs.row(i));
        let tangent = jvp(model, &slices, &trace, v.as_slice());
        let u = apply_loss_hessian(model.loss, trace.post.last().unwrap(), &tangent);
        accumulate_vjp(model, &slices, &trace, &u, inv_b, &mut out);
    }
    if damping != 0.0 {
        for (o, vi) in out.iter_mut().zip(v.as_slice()) {
            *o += damping * vi;
        }
    }
    calls.add(2);
    Ok(DenseVector::from_vec(out))
}

/// Materialized damped curvature `JᵀH_LJ + lambda I` (N x N). Guarded by
/// [`MATERIALIZE_LIMIT`].
pub fn build_ggn(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    damping: f64,
    calls: &CallCounter,
) -> Result<DenseMatrix> {
    let n = model.param_count();
    if n > MATERIALIZE_LIMIT {
        return Err(CurvatureError::TooLarge(n, MATERIALIZE_LIMIT));
    }
    let (j, h) = curvature_factors(model, theta, batch, calls)?;
    let hj = h.matmul(&j).expect("shapes fixed");
    let mut g = j.transpose().matmul(&hj).expect("shapes fixed").symmetrized();
    for i in 0..n {
        let v = g.get(i, i) + damping;
        g.set(i, i, v);
    }
    Ok(g)
}

/// Empirical Fisher `(1/b) sum g_i g_iᵀ` over per-sample loss gradients.
/// Counts b reverse sweeps.
pub fn empirical_fisher(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
    calls: &CallCounter,
) -> Result<DenseMatrix> {
    model.check_params(theta)?;
    check_batch(model, batch)?;
    let n = model.param_count();
    if n > MATERIALIZE_LIMIT {
        return Err(CurvatureError::TooLarge(n, MATERIALIZE_LIMIT));
    }
    let slices = layer_slices(model, theta);
    let b = batch.size();
    let d_z = model.output_dim();
    let inv_b = 1.0 / b as f64;
    let mut fisher = DenseMatrix::zeros(n, n);
    let mut grad = vec![0.0; n];
    for i in 0..b {
        let trace = forward_trace(model, &slices, batch.inputs.row(i));
        let target = target_row(&batch.targets, i, d_z)?;
        let u = sample_loss_gradient(model.loss, trace.post.last().unwrap(), &target)?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        accumulate_vjp(model, &slices, &trace, &u, 1.0, &mut grad);
        for (r, &gr) in grad.iter().enumerate() {
            if gr == 0.0 {
                continue;
            }
            for (c, &gc) in grad.iter().enumerate() {
                let v = fisher.get(r, c) + inv_b * gr * gc;
                fisher.set(r, c, v);
            }
        }
    }
    calls.add(b as u64);
    Ok(fisher)
}

/// Mean loss and, for classification heads, argmax accuracy over a dataset.
pub fn evaluate(
    model: &ModelSpec,
    theta: &ParamVector,
    data: &Dataset,
) -> Result<(f64, Option<f64>)> {
    model.check_params(theta)?;
    let slices = layer_slices(model, theta);
    let d_z = model.output_dim();
    if data.feature_dim() != model.input_dim() {
        return Err(CurvatureError::DimensionMismatch(format!(
            "dataset features {} vs model input {}",
            data.feature_dim(),
            model.input_dim()
        )));
    }
    let n = data.len();
    let mut loss = 0.0;
    let mut correct = 0usize;
    let classify = matches!(data.targets, Targets::Classes(_));
    for i in 0..n {
        let trace = forward_trace(model, &slices, data.inputs.row(i));
        let z = trace.post.last().unwrap();
        let target = target_row(&data.targets, i, d_z)?;
        loss += sample_loss(model.loss, z, &target)?;
        if let TargetRef::Class(y) = target {
            let argmax = z
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(k, _)| k)
                .unwrap();
            if argmax == y {
                correct += 1;
            }
        }
    }
    let acc = if classify {
        Some(correct as f64 / n as f64)
    } else {
        None
    };
    Ok((loss / n as f64, acc))
}

/// Batch-mean loss only (no sweeps); used by the damping schedule.
pub fn batch_loss(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<f64> {
    model.check_params(theta)?;
    check_batch(model, batch)?;
    let slices = layer_slices(model, theta);
    let d_z = model.output_dim();
    let mut loss = 0.0;
    for i in 0..batch.size() {
        let trace = forward_trace(model, &slices, batch.inputs.row(i));
        let target = target_row(&batch.targets, i, d_z)?;
        loss += sample_loss(model.loss, trace.post.last().unwrap(), &target)?;
    }
    Ok(loss / batch.size() as f64)
}

fn check_batch(model: &ModelSpec, batch: &Batch) -> Result<()> {
    if batch.inputs.cols() != model.input_dim() {
        return Err(CurvatureError::DimensionMismatch(format!(
            "batch features {} vs model input {}",
            batch.inputs.cols(),
            model.input_dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> ModelSpec {
        ModelSpec::mlp(&[3, 4, 2], Activation::Tanh, LossHead::SoftmaxCrossEntropy).unwrap()
    }

    fn random_batch(model: &ModelSpec, b: usize, seed: u64) -> Batch {
        let mut rng = RngStream::from_seed(seed);
        let inputs = DenseMatrix::from_fn(b, model.input_dim(), |_, _| rng.standard_normal());
        let targets = match model.loss_head() {
            LossHead::SoftmaxCrossEntropy => Targets::Classes(
                (0..b).map(|i| i % model.output_dim()).collect(),
            ),
            LossHead::MeanSquaredError => Targets::Values(DenseMatrix::from_fn(
                b,
                model.output_dim(),
                |_, _| rng.standard_normal(),
            )),
        };
        Batch::new(inputs, targets).unwrap()
    }

    fn random_params(model: &ModelSpec, seed: u64) -> ParamVector {
        let mut rng = RngStream::from_seed(seed);
        model.init_params(&mut rng, 1.0)
    }

    #[test]
    fn forward_zero_params_identity_activations() {
        let model = ModelSpec::mlp(&[2, 3, 2], Activation::Identity, LossHead::MeanSquaredError)
            .unwrap();
        let theta = ParamVector::zeros(model.param_count());
        let z = forward(&model, &theta, &DenseVector::from_slice(&[1.0, -2.0])).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_single_identity_layer() {
        let model = ModelSpec::new(
            vec![LayerSpec {
                input_dim: 3,
                output_dim: 3,
                activation: Activation::Identity,
            }],
            LossHead::MeanSquaredError,
        )
        .unwrap();
        // W = I, b = 0: theta layout is rows of W then biases.
        let mut theta = ParamVector::zeros(model.param_count());
        for i in 0..3 {
            theta.values_mut()[i * 3 + i] = 1.0;
        }
        let x = DenseVector::from_slice(&[0.5, -1.5, 2.0]);
        let z = forward(&model, &theta, &x).unwrap();
        assert_eq!(z.as_slice(), x.as_slice());
    }

    /// Straight-line scalar reimplementation of a fixed 2-layer tanh net.
    #[test]
    fn forward_matches_scalar_reimplementation() {
        let model = ModelSpec::mlp(&[2, 2, 1], Activation::Tanh, LossHead::MeanSquaredError)
            .unwrap();
        // Layer 1: W = [[0.1, -0.2], [0.3, 0.4]], b = [0.05, -0.1]
        // Layer 2: W = [[0.7, -0.6]], b = [0.2]
        let theta = ParamVector::new(DenseVector::from_slice(&[
            0.1, -0.2, 0.3, 0.4, 0.05, -0.1, 0.7, -0.6, 0.2,
        ]));
        let x = [0.6f64, -0.9];
        let a1 = (0.1 * x[0] - 0.2 * x[1] + 0.05).tanh();
        let a2 = (0.3 * x[0] + 0.4 * x[1] - 0.1).tanh();
        let expected = 0.7 * a1 - 0.6 * a2 + 0.2;
        let z = forward(&model, &theta, &DenseVector::from_slice(&x)).unwrap();
        assert!((z[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn mse_loss_zero_when_output_equals_target() {
        let model = ModelSpec::new(
            vec![LayerSpec {
                input_dim: 2,
                output_dim: 2,
                activation: Activation::Identity,
            }],
            LossHead::MeanSquaredError,
        )
        .unwrap();
        let mut theta = ParamVector::zeros(model.param_count());
        theta.values_mut()[0] = 1.0;
        theta.values_mut()[3] = 1.0;
        let inputs = DenseMatrix::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let targets = Targets::Values(DenseMatrix::from_rows(&[vec![0.3, 0.7]]).unwrap());
        let batch = Batch::new(inputs, targets).unwrap();
        let calls = CallCounter::new();
        let (loss, grad) = loss_and_gradient(&model, &theta, &batch, &calls).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grad.max_abs(), 0.0);
    }

    #[test]
    fn ce_loss_uniform_logits() {
        let model = ModelSpec::mlp(&[2, 2], Activation::Identity, LossHead::SoftmaxCrossEntropy)
            .unwrap();
        let theta = ParamVector::zeros(model.param_count());
        let batch = Batch::new(
            DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            Targets::Classes(vec![0]),
        )
        .unwrap();
        let calls = CallCounter::new();
        let (loss, _) = loss_and_gradient(&model, &theta, &batch, &calls).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    fn finite_difference_gradient(
        model: &ModelSpec,
        theta: &ParamVector,
        batch: &Batch,
        h: f64,
    ) -> DenseVector {
        let mut out = DenseVector::zeros(theta.len());
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus.values_mut()[i] += h;
            let mut minus = theta.clone();
            minus.values_mut()[i] -= h;
            let lp = batch_loss(model, &plus, batch).unwrap();
            let lm = batch_loss(model, &minus, batch).unwrap();
            out[i] = (lp - lm) / (2.0 * h);
        }
        out
    }

    #[test]
    fn gradient_matches_central_differences() {
        for (model, seed) in [
            (small_model(), 1u64),
            (
                ModelSpec::mlp(&[4, 6, 3], Activation::Relu, LossHead::MeanSquaredError).unwrap(),
                2,
            ),
        ] {
            let theta = random_params(&model, seed);
            let batch = random_batch(&model, 5, seed + 10);
            let calls = CallCounter::new();
            let (_, grad) = loss_and_gradient(&model, &theta, &batch, &calls).unwrap();
            let fd = finite_difference_gradient(&model, &theta, &batch, 1e-5);
            for i in 0..grad.len() {
                let tol = 1e-5 * grad[i].abs().max(1e-4);
                assert!(
                    (grad[i] - fd[i]).abs() <= tol,
                    "coord {i}: analytic {} vs fd {}",
                    grad[i],
                    fd[i]
                );
            }
        }
    }

    #[test]
    fn jacobian_linear_model_reproduces_inputs() {
        // Single linear layer, one sample: rows of J are the input in the
        // matching weight slots and 1 in the bias slot.
        let model = ModelSpec::mlp(&[3, 2], Activation::Identity, LossHead::MeanSquaredError)
            .unwrap();
        let theta = random_params(&model, 3);
        let x = vec![0.4, -1.1, 2.2];
        let batch = Batch::new(
            DenseMatrix::from_rows(std::slice::from_ref(&x)).unwrap(),
            Targets::Values(DenseMatrix::zeros(1, 2)),
        )
        .unwrap();
        let calls = CallCounter::new();
        let j = jacobian(&model, &theta, &batch, &calls).unwrap();
        // Output 0 depends on weights [0..3] and bias slot 6.
        assert_eq!(j.row(0)[0..3], x[..]);
        assert_eq!(j.row(0)[3..6], [0.0, 0.0, 0.0]);
        assert_eq!(j.row(0)[6], 1.0);
        assert_eq!(j.row(1)[3..6], x[..]);
        assert_eq!(j.row(1)[7], 1.0);
        assert_eq!(calls.count(), 2);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let model = small_model();
        let theta = random_params(&model, 4);
        let batch = random_batch(&model, 3, 14);
        let calls = CallCounter::new();
        let j = jacobian(&model, &theta, &batch, &calls).unwrap();
        let b = batch.size() as f64;
        let d_z = model.output_dim();
        let h = 1e-5;
        for p in 0..theta.len() {
            let mut plus = theta.clone();
            plus.values_mut()[p] += h;
            let mut minus = theta.clone();
            minus.values_mut()[p] -= h;
            for i in 0..batch.size() {
                let xp = DenseVector::from_slice(batch.inputs.row(i));
                let zp = forward(&model, &plus, &xp).unwrap();
                let zm = forward(&model, &minus, &xp).unwrap();
                for out in 0..d_z {
                    let fd = (zp[out] - zm[out]) / (2.0 * h) / b.sqrt();
                    let an = j.get(i * d_z + out, p);
                    let tol = 1e-5 * an.abs().max(1e-4);
                    assert!((an - fd).abs() <= tol, "row {i},{out} param {p}");
                }
            }
        }
    }

    #[test]
    fn jacobian_duplicated_sample_duplicates_rows() {
        let model = small_model();
        let theta = random_params(&model, 5);
        let x = vec![0.2, -0.5, 1.0];
        let single = Batch::new(
            DenseMatrix::from_rows(std::slice::from_ref(&x)).unwrap(),
            Targets::Classes(vec![0]),
        )
        .unwrap();
        let double = Batch::new(
            DenseMatrix::from_rows(&[x.clone(), x]).unwrap(),
            Targets::Classes(vec![0, 0]),
        )
        .unwrap();
        let calls = CallCounter::new();
        let j1 = jacobian(&model, &theta, &single, &calls).unwrap();
        let j2 = jacobian(&model, &theta, &double, &calls).unwrap();
        let d_z = model.output_dim();
        // J2 rows repeat and carry 1/sqrt(2) instead of 1/sqrt(1).
        let rescale = (2.0f64).sqrt();
        for r in 0..d_z {
            for c in 0..j1.cols() {
                assert!((j2.get(r, c) * rescale - j1.get(r, c)).abs() < 1e-12);
                assert!((j2.get(d_z + r, c) - j2.get(r, c)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn loss_hessian_blocks() {
        // MSE head: identity.
        let model = ModelSpec::mlp(&[2, 2], Activation::Identity, LossHead::MeanSquaredError)
            .unwrap();
        let theta = random_params(&model, 6);
        let batch = random_batch(&model, 3, 7);
        let h = loss_hessian(&model, &theta, &batch).unwrap();
        for i in 0..h.rows() {
            for j in 0..h.cols() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_eq!(h.get(i, j), expect);
            }
        }

        // Softmax-CE at uniform p = (1/2, 1/2).
        let model = ModelSpec::mlp(&[2, 2], Activation::Identity, LossHead::SoftmaxCrossEntropy)
            .unwrap();
        let theta = ParamVector::zeros(model.param_count());
        let batch = Batch::new(
            DenseMatrix::from_rows(&[vec![0.3, 0.4]]).unwrap(),
            Targets::Classes(vec![1]),
        )
        .unwrap();
        let h = loss_hessian(&model, &theta, &batch).unwrap();
        assert!((h.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((h.get(0, 1) + 0.25).abs() < 1e-15);
        assert!((h.get(1, 0) + 0.25).abs() < 1e-15);
        assert!((h.get(1, 1) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ce_hessian_matches_finite_differences_of_logit_loss() {
        // d²/dz² of CE at random logits, central differences with h = 1e-4.
        let z = [0.3, -1.2, 0.8];
        let y = 2usize;
        let h_block = sample_loss_hessian(LossHead::SoftmaxCrossEntropy, &z);
        let f = |z: &[f64]| {
            sample_loss(LossHead::SoftmaxCrossEntropy, z, &TargetRef::Class(y)).unwrap()
        };
        let h = 1e-4;
        for a in 0..3 {
            for b in 0..3 {
                let mut zpp = z;
                zpp[a] += h;
                zpp[b] += h;
                let mut zpm = z;
                zpm[a] += h;
                zpm[b] -= h;
                let mut zmp = z;
                zmp[a] -= h;
                zmp[b] += h;
                let mut zmm = z;
                zmm[a] -= h;
                zmm[b] -= h;
                let fd = (f(&zpp) - f(&zpm) - f(&zmp) + f(&zmm)) / (4.0 * h * h);
                assert!(
                    (h_block.get(a, b) - fd).abs() < 1e-6,
                    "({a},{b}): {} vs {}",
                    h_block.get(a, b),
                    fd
                );
            }
        }
    }

    #[test]
    fn ce_hessian_rows_sum_to_zero_and_psd() {
        let model = small_model();
        let theta = random_params(&model, 8);
        let batch = random_batch(&model, 4, 9);
        let h = loss_hessian(&model, &theta, &batch).unwrap();
        for i in 0..h.rows() {
            let sum: f64 = (0..h.cols()).map(|j| h.get(i, j)).sum();
            assert!(sum.abs() < 1e-12, "row {i} sums to {sum}");
        }
        let (vals, _) = crate::numerics::symmetric_eigen(&h).unwrap();
        assert!(vals[0] >= -1e-10, "smallest eigenvalue {}", vals[0]);
    }

    #[test]
    fn ggn_vector_product_basics() {
        let model = small_model();
        let theta = random_params(&model, 10);
        let batch = random_batch(&model, 4, 11);
        let calls = CallCounter::new();
        let zero = ggn_vector_product(
            &model,
            &theta,
            &batch,
            &DenseVector::zeros(model.param_count()),
            0.0,
            &calls,
        )
        .unwrap();
        assert_eq!(zero.max_abs(), 0.0);
        assert_eq!(calls.count(), 2);
    }

    #[test]
    fn ggn_vector_product_matches_explicit() {
        for seed in 0..20u64 {
            let model = if seed % 2 == 0 {
                small_model()
            } else {
                ModelSpec::mlp(&[3, 5, 2], Activation::Tanh, LossHead::MeanSquaredError).unwrap()
            };
            let theta = random_params(&model, 100 + seed);
            let batch = random_batch(&model, 3, 200 + seed);
            let damping = 0.1 * (seed % 3) as f64;
            let calls = CallCounter::new();
            let g = build_ggn(&model, &theta, &batch, damping, &calls).unwrap();
            let mut rng = RngStream::from_seed(300 + seed);
            let v = rng.gaussian_vector(model.param_count(), 0.0, 1.0);
            let fast = ggn_vector_product(&model, &theta, &batch, &v, damping, &calls).unwrap();
            let slow = g.matvec(&v).unwrap();
            let gap = fast.add_scaled(&slow, -1.0).unwrap().max_abs();
            assert!(gap < 1e-8, "seed {seed}: gap {gap}");
        }
    }

    #[test]
    fn ggn_linear_in_v_and_coercive() {
        let model = small_model();
        let theta = random_params(&model, 12);
        let batch = random_batch(&model, 3, 13);
        let calls = CallCounter::new();
        let mut rng = RngStream::from_seed(14);
        let n = model.param_count();
        let damping = 0.05;
        let v = rng.gaussian_vector(n, 0.0, 1.0);
        let w = rng.gaussian_vector(n, 0.0, 1.0);
        let gv = ggn_vector_product(&model, &theta, &batch, &v, damping, &calls).unwrap();
        let gw = ggn_vector_product(&model, &theta, &batch, &w, damping, &calls).unwrap();
        let vw = v.add_scaled(&w, 2.5).unwrap();
        let gvw = ggn_vector_product(&model, &theta, &batch, &vw, damping, &calls).unwrap();
        let lin_gap = gvw
            .add_scaled(&gv.add_scaled(&gw, 2.5).unwrap(), -1.0)
            .unwrap()
            .max_abs();
        assert!(lin_gap < 1e-10, "linearity gap {lin_gap}");
        let quad = v.dot(&gv).unwrap();
        assert!(quad >= damping * v.dot(&v).unwrap() - 1e-10);
    }

    #[test]
    fn ggn_equals_input_gram_for_linear_mse() {
        // Linear model + MSE: G = (1/b) Xᵀ_aug X_aug where rows are (x, 1).
        let model = ModelSpec::mlp(&[2, 1], Activation::Identity, LossHead::MeanSquaredError)
            .unwrap();
        let theta = random_params(&model, 15);
        let xs = [[1.0, 2.0], [-0.5, 0.25]];
        let batch = Batch::new(
            DenseMatrix::from_rows(&[xs[0].to_vec(), xs[1].to_vec()]).unwrap(),
            Targets::Values(DenseMatrix::zeros(2, 1)),
        )
        .unwrap();
        let calls = CallCounter::new();
        let g = build_ggn(&model, &theta, &batch, 0.0, &calls).unwrap();
        let aug = [[1.0, 2.0, 1.0], [-0.5, 0.25, 1.0]];
        for r in 0..3 {
            for c in 0..3 {
                let expect =
                    0.5 * (aug[0][r] * aug[0][c] + aug[1][r] * aug[1][c]);
                assert!((g.get(r, c) - expect).abs() < 1e-14, "({r},{c})");
            }
        }
    }

    #[test]
    fn build_ggn_symmetric_psd_and_column_oracle() {
        let model = small_model();
        let theta = random_params(&model, 16);
        let batch = random_batch(&model, 3, 17);
        let damping = 0.01;
        let calls = CallCounter::new();
        let g = build_ggn(&model, &theta, &batch, damping, &calls).unwrap();
        assert!(g.max_asymmetry() <= 1e-10);
        let (vals, _) = crate::numerics::symmetric_eigen(&g).unwrap();
        assert!(vals[0] >= damping - 1e-8);
        // Column-by-column agreement with the product oracle.
        let n = model.param_count();
        for col in 0..n {
            let mut e = DenseVector::zeros(n);
            e[col] = 1.0;
            let gv = ggn_vector_product(&model, &theta, &batch, &e, damping, &calls).unwrap();
            for r in 0..n {
                assert!((g.get(r, col) - gv[r]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn empirical_fisher_structure() {
        let model = small_model();
        let theta = random_params(&model, 18);
        let calls = CallCounter::new();

        // One sample: rank-1 outer product of the per-sample gradient.
        let batch = random_batch(&model, 1, 19);
        let fisher = empirical_fisher(&model, &theta, &batch, &calls).unwrap();
        let (_, grad) = loss_and_gradient(&model, &theta, &batch, &calls).unwrap();
        for r in 0..grad.len() {
            for c in 0..grad.len() {
                assert!((fisher.get(r, c) - grad[r] * grad[c]).abs() < 1e-12);
            }
        }

        // Diagonal is the mean squared per-sample gradient; PSD overall.
        let batch = random_batch(&model, 4, 20);
        let fisher = empirical_fisher(&model, &theta, &batch, &calls).unwrap();
        let (vals, _) = crate::numerics::symmetric_eigen(&fisher).unwrap();
        assert!(vals[0] >= -1e-10);
        let mut diag_expect = vec![0.0; model.param_count()];
        for i in 0..batch.size() {
            let single = Batch::new(
                DenseMatrix::from_rows(&[batch.inputs.row(i).to_vec()]).unwrap(),
                match &batch.targets {
                    Targets::Classes(c) => Targets::Classes(vec![c[i]]),
                    Targets::Values(v) => {
                        Targets::Values(DenseMatrix::from_rows(&[v.row(i).to_vec()]).unwrap())
                    }
                },
            )
            .unwrap();
            let (_, g) = loss_and_gradient(&model, &theta, &single, &calls).unwrap();
            for (d, gi) in diag_expect.iter_mut().zip(g.as_slice()) {
                *d += gi * gi / batch.size() as f64;
            }
        }
        for (i, d) in diag_expect.iter().enumerate() {
            assert!((fisher.get(i, i) - d).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
        assert_eq!(Activation::Relu.derivative(1e-12), 1.0);
        assert_eq!(Activation::Relu.derivative(-1e-12), 0.0);
    }

    #[test]
    fn call_counts_match_conventions() {
        let model = small_model();
        let theta = random_params(&model, 21);
        let b = 4;
        let batch = random_batch(&model, b, 22);
        let d_z = model.output_dim();

        let calls = CallCounter::new();
        loss_and_gradient(&model, &theta, &batch, &calls).unwrap();
        assert_eq!(calls.count(), 1);

        calls.reset();
        curvature_factors(&model, &theta, &batch, &calls).unwrap();
        assert_eq!(calls.count(), (b * d_z) as u64);

        calls.reset();
        let v = DenseVector::zeros(model.param_count());
        ggn_vector_product(&model, &theta, &batch, &v, 0.0, &calls).unwrap();
        assert_eq!(calls.count(), 2);
    }
}
