//! Dense feed-forward network with exact reverse-mode gradients.
//!
//! A network is an ordered list of blocks. Block 0 is nearest the input; the
//! last block is the linear classifier producing logits. Every hidden block is
//! `y = act(x W^T + b)` with `W` stored row-major as `(out_dim, in_dim)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Shape(format!(
                "row {i} has {} columns, expected {cols}",
                rows[i].len()
            )));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Gathers the given rows into a new tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub block_dims: Vec<usize>,
    pub n_classes: usize,
    pub activation: Activation,
}

impl NetworkSpec {
    pub fn new(
        input_dim: usize,
        block_dims: Vec<usize>,
        n_classes: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = Self {
            input_dim,
            block_dims,
            n_classes,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_dims.is_empty() {
            return Err(Error::InvalidArgument(
                "network needs at least one hidden block".into(),
            ));
        }
        if self.input_dim == 0 || self.n_classes == 0 || self.block_dims.contains(&0) {
            return Err(Error::InvalidArgument("all dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// Hidden blocks plus the final classifier.
    #[inline]
    pub fn n_blocks(&self) -> usize {
        self.block_dims.len() + 1
    }

    /// `(out_dim, in_dim)` of block `b`.
    pub fn block_shape(&self, b: usize) -> (usize, usize) {
        let fan_in = if b == 0 {
            self.input_dim
        } else {
            self.block_dims[b - 1]
        };
        let fan_out = if b == self.block_dims.len() {
            self.n_classes
        } else {
            self.block_dims[b]
        };
        (fan_out, fan_in)
    }

    /// Same trunk with a classifier for `n_classes` outputs.
    pub fn with_classes(&self, n_classes: usize) -> Self {
        Self {
            n_classes,
            ..self.clone()
        }
    }

    pub fn n_params(&self) -> usize {
        (0..self.n_blocks())
            .map(|b| {
                let (o, i) = self.block_shape(b);
                o * i + o
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub weights: Tensor2D,
    pub bias: Vec<f64>,
}

impl Block {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weights: Tensor2D::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// He-normal weights, zero bias, drawn from the block's own seed stream.
    pub fn he_init(out_dim: usize, in_dim: usize, seed: u64, block_index: usize) -> Self {
        let mut rng = seed::rng(seed, &[seed::STREAM_INIT, block_index as u64]);
        let std = (2.0 / in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..out_dim * in_dim).map(|_| normal.sample(&mut rng)).collect();
        Self {
            weights: Tensor2D {
                rows: out_dim,
                cols: in_dim,
                data,
            },
            bias: vec![0.0; out_dim],
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.data.len() + self.bias.len()
    }

    /// Weights followed by bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.data.iter().chain(self.bias.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.data.iter_mut().chain(self.bias.iter_mut())
    }

    pub fn same_shape(&self, other: &Block) -> bool {
        self.weights.shape() == other.weights.shape() && self.bias.len() == other.bias.len()
    }

    pub fn sq_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }
}

/// Per-block parameters (or gradients with the same layout).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub blocks: Vec<Block>,
}

impl ParamSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self {
            blocks: (0..spec.n_blocks())
                .map(|b| {
                    let (o, i) = spec.block_shape(b);
                    Block::zeros(o, i)
                })
                .collect(),
        }
    }

    pub fn zeros_like(other: &ParamSet) -> Self {
        Self {
            blocks: other
                .blocks
                .iter()
                .map(|b| Block::zeros(b.weights.rows, b.weights.cols))
                .collect(),
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(Block::n_params).sum()
    }

    pub fn check_matches(&self, spec: &NetworkSpec) -> Result<()> {
        if self.blocks.len() != spec.n_blocks() {
            return Err(Error::Shape(format!(
                "param set has {} blocks, spec has {}",
                self.blocks.len(),
                spec.n_blocks()
            )));
        }
        for (b, block) in self.blocks.iter().enumerate() {
            let (o, i) = spec.block_shape(b);
            if block.weights.shape() != (o, i) || block.bias.len() != o {
                return Err(Error::Shape(format!(
                    "block {b} is {:?}+{}, spec expects {:?}+{o}",
                    block.weights.shape(),
                    block.bias.len(),
                    (o, i)
                )));
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.same_shape(b))
    }

    pub fn scale(&mut self, factor: f64) {
        for block in &mut self.blocks {
            block.values_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += factor * other`; shapes must agree.
    pub fn axpy(&mut self, factor: f64, other: &ParamSet) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.values_mut().zip(b.values()) {
                *x += factor * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.values().all(|v| v.is_finite()))
    }
}

/// Inputs and integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Tensor2D,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor2D, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("batch must have at least one row".into()));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn check_labels(&self, n_classes: usize) -> Result<()> {
        check_labels(&self.labels, n_classes)
    }

    pub fn select(&self, idx: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

pub(crate) fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l >= n_classes) {
        Some(row) => Err(Error::LabelOutOfRange {
            row,
            label: labels[row],
            n_classes,
        }),
        None => Ok(()),
    }
}

/// He-normal weights (variance `2 / fan_in`), zero biases.
///
/// Each block draws from its own stream derived from `(seed, block index)`,
/// so re-initializing a subset of blocks with the same seed reproduces
/// exactly the blocks a full initialization would produce.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> ParamSet {
    ParamSet {
        blocks: (0..spec.n_blocks())
            .map(|b| {
                let (o, i) = spec.block_shape(b);
                Block::he_init(o, i, seed, b)
            })
            .collect(),
    }
}

/// Activations saved by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each block (`inputs[0]` is the batch itself).
    inputs: Vec<Tensor2D>,
    /// Pre-activations of each hidden block.
    pre: Vec<Tensor2D>,
}

impl ForwardCache {
    pub fn n_rows(&self) -> usize {
        self.inputs.first().map_or(0, Tensor2D::rows)
    }

    /// Output of block `b` (post-activation for hidden blocks).
    pub fn block_output(&self, b: usize) -> Option<&Tensor2D> {
        self.inputs.get(b + 1)
    }
}

fn affine(x: &Tensor2D, block: &Block) -> Tensor2D {
    let (out_dim, in_dim) = block.weights.shape();
    let mut z = Tensor2D::zeros(x.rows, out_dim);
    for i in 0..x.rows {
        let xi = x.row(i);
        let zi = z.row_mut(i);
        for (o, zo) in zi.iter_mut().enumerate() {
            let w = &block.weights.data[o * in_dim..(o + 1) * in_dim];
            *zo = block.bias[o] + w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    z
}

/// Runs the network on `inputs` (`n x input_dim`), returning `n x n_classes` logits.
pub fn forward(
    spec: &NetworkSpec,
    params: &ParamSet,
    inputs: &Tensor2D,
) -> Result<(Tensor2D, ForwardCache)> {
    params.check_matches(spec)?;
    if inputs.cols() != spec.input_dim {
        return Err(Error::Shape(format!(
            "inputs have {} columns, network expects {}",
            inputs.cols(),
            spec.input_dim
        )));
    }
    let n_hidden = spec.block_dims.len();
    let mut cache = ForwardCache {
        inputs: Vec::with_capacity(spec.n_blocks() + 1),
        pre: Vec::with_capacity(n_hidden),
    };
    cache.inputs.push(inputs.clone());
    for b in 0..n_hidden {
        let z = affine(&cache.inputs[b], &params.blocks[b]);
        let mut y = z.clone();
        y.data.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
        cache.pre.push(z);
        cache.inputs.push(y);
    }
    let logits = affine(&cache.inputs[n_hidden], &params.blocks[n_hidden]);
    cache.inputs.push(logits.clone());
    Ok((logits, cache))
}

/// Logits only.
pub fn predict(spec: &NetworkSpec, params: &ParamSet, inputs: &Tensor2D) -> Result<Tensor2D> {
    forward(spec, params, inputs).map(|(logits, _)| logits)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor2D) -> Tensor2D {
    let mut out = logits.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn loss_and_dlogits(logits: &Tensor2D, labels: &[usize]) -> Result<(f64, Tensor2D)> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows but {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    check_labels(labels, logits.cols())?;
    let n = labels.len() as f64;
    let mut d = Tensor2D::zeros(logits.rows, logits.cols);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_sum = sum.ln() + max;
        loss += log_sum - row[label];
        let drow = d.row_mut(i);
        for (j, dj) in drow.iter_mut().enumerate() {
            let p = (row[j] - log_sum).exp();
            *dj = (p - if j == label { 1.0 } else { 0.0 }) / n;
        }
        // Re-center so the row sums to zero to machine precision.
        let s: f64 = drow.iter().sum::<f64>() / drow.len() as f64;
        drow.iter_mut().for_each(|v| *v -= s);
    }
    Ok(((loss / n).max(0.0), d))
}

/// Reverse-mode gradients of a scalar whose logit gradient is `dlogits`.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParamSet,
    cache: &ForwardCache,
    dlogits: &Tensor2D,
) -> Result<ParamSet> {
    backward_from(spec, params, cache, dlogits, 0)
}

/// Like [`backward`], but stops once block `lowest` has its gradient.
///
/// Blocks below `lowest` get zero gradients. Used when lower blocks are frozen.
pub fn backward_from(
    spec: &NetworkSpec,
    params: &ParamSet,
    cache: &ForwardCache,
    dlogits: &Tensor2D,
    lowest: usize,
) -> Result<ParamSet> {
    params.check_matches(spec)?;
    let n_blocks = spec.n_blocks();
    if cache.inputs.len() != n_blocks + 1 || cache.pre.len() != n_blocks - 1 {
        return Err(Error::StaleCache(format!(
            "cache holds {} block inputs, network has {n_blocks} blocks",
            cache.inputs.len().saturating_sub(1)
        )));
    }
    for b in 0..n_blocks {
        let (_, in_dim) = spec.block_shape(b);
        if cache.inputs[b].cols() != in_dim || cache.inputs[b].rows() != dlogits.rows() {
            return Err(Error::StaleCache(format!(
                "cached input of block {b} is {:?}, expected ({}, {in_dim})",
                cache.inputs[b].shape(),
                dlogits.rows()
            )));
        }
    }
    if dlogits.cols() != spec.n_classes || cache.inputs[n_blocks].shape() != dlogits.shape() {
        return Err(Error::StaleCache(format!(
            "dlogits {:?} does not match cached logits {:?}",
            dlogits.shape(),
            cache.inputs[n_blocks].shape()
        )));
    }

    let mut grads = ParamSet::zeros(spec);
    let mut delta = dlogits.clone();
    for b in (lowest..n_blocks).rev() {
        let x = &cache.inputs[b];
        let block = &params.blocks[b];
        let (out_dim, in_dim) = block.weights.shape();
        let g = &mut grads.blocks[b];
        for i in 0..x.rows {
            let xi = x.row(i);
            let di = delta.row(i);
            for (o, &d) in di.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let gw = &mut g.weights.data[o * in_dim..(o + 1) * in_dim];
                for (gv, xv) in gw.iter_mut().zip(xi) {
                    *gv += d * xv;
                }
            }
        }
        if b == lowest {
            break;
        }
        // Propagate to the previous block's pre-activation.
        let pre = &cache.pre[b - 1];
        let mut next = Tensor2D::zeros(x.rows, in_dim);
        for i in 0..x.rows {
            let di = delta.row(i);
            let ni = next.row_mut(i);
            for (o, &d) in di.iter().enumerate().take(out_dim) {
                if d == 0.0 {
                    continue;
                }
                let w = &block.weights.data[o * in_dim..(o + 1) * in_dim];
                for (nv, wv) in ni.iter_mut().zip(w) {
                    *nv += d * wv;
                }
            }
            let zi = pre.row(i);
            let yi = x.row(i);
            for j in 0..in_dim {
                ni[j] *= spec.activation.derivative(zi[j], yi[j]);
            }
        }
        delta = next;
    }
    Ok(grads)
}

/// Mean cross-entropy and full gradient on one batch.
pub fn loss_and_grads(spec: &NetworkSpec, params: &ParamSet, batch: &Batch) -> Result<(f64, ParamSet)> {
    let (logits, cache) = forward(spec, params, &batch.inputs)?;
    let (loss, d) = loss_and_dlogits(&logits, &batch.labels)?;
    Ok((loss, backward(spec, params, &cache, &d)?))
}

pub fn batch_loss(spec: &NetworkSpec, params: &ParamSet, batch: &Batch) -> Result<f64> {
    let logits = predict(spec, params, &batch.inputs)?;
    loss_and_dlogits(&logits, &batch.labels).map(|(l, _)| l)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub max_rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockCheck>,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.blocks.iter().all(|b| b.pass)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Central-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a small floor on the denominator so entries that are
/// both essentially zero do not blow up.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compares `grads` against central finite differences of the batch loss.
pub fn compare_with_finite_differences(
    spec: &NetworkSpec,
    params: &ParamSet,
    batch: &Batch,
    grads: &ParamSet,
    tol: f64,
) -> Result<GradCheckReport> {
    if !grads.same_shape(params) {
        return Err(Error::Shape("gradient layout differs from params".into()));
    }
    let mut probe = params.clone();
    let mut blocks = Vec::with_capacity(params.n_blocks());
    for b in 0..params.n_blocks() {
        let analytic: Vec<f64> = grads.blocks[b].values().copied().collect();
        let mut worst = 0.0f64;
        for (k, &exact) in analytic.iter().enumerate() {
            let orig = *probe.blocks[b].values().nth(k).expect("index in range");
            set_nth(&mut probe.blocks[b], k, orig + FD_STEP);
            let up = batch_loss(spec, &probe, batch)?;
            set_nth(&mut probe.blocks[b], k, orig - FD_STEP);
            let down = batch_loss(spec, &probe, batch)?;
            set_nth(&mut probe.blocks[b], k, orig);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(exact, numeric));
        }
        blocks.push(BlockCheck {
            max_rel_error: worst,
            pass: worst < tol,
        });
    }
    Ok(GradCheckReport { blocks })
}

fn set_nth(block: &mut Block, k: usize, v: f64) {
    let nw = block.weights.data.len();
    if k < nw {
        block.weights.data[k] = v;
    } else {
        block.bias[k - nw] = v;
    }
}

/// Per-block gradient check of [`backward`] against central differences.
pub fn finite_diff_check(
    spec: &NetworkSpec,
    params: &ParamSet,
    batch: &Batch,
    tol: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = loss_and_grads(spec, params, batch)?;
    compare_with_finite_differences(spec, params, batch, &grads, tol)
}

/// Random batch helper shared by tests and benchmarks.
pub fn random_batch<R: Rng>(rng: &mut R, n: usize, dim: usize, n_classes: usize) -> Batch {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let data = (0..n * dim).map(|_| normal.sample(rng)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
    Batch {
        inputs: Tensor2D {
            rows: n,
            cols: dim,
            data,
        },
        labels,
    }
}
