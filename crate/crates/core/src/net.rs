//! Minimal reverse-mode automatic differentiation over dense layers, the
//! noise-prediction MLP built on it, the AdamW optimizer with linear warmup
//! and cosine decay, and the on-disk weight format.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::stats::{normal_cdf, normal_pdf, RngStream};
use crate::{Error, Result};

// ── network description ─────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::config("activation", format!("unknown activation {other:?}"))),
        }
    }
}

/// Dense-network shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::config("mlp", "all dimensions must be positive"));
        }
        Ok(())
    }

    /// Layer shapes as (rows, cols) weight matrices plus bias lengths.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            dims.push((h, prev));
            prev = h;
        }
        dims.push((self.output_dim, prev));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(r, c)| r * c + r).sum()
    }
}

/// A parameter tensor: a (rows × cols) matrix, or a vector when cols = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }
}

/// Full parameter set; tensors ordered [W0, b0, W1, b1, …].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub spec: MlpSpec,
    pub tensors: Vec<Tensor>,
}

/// Normal initialization with per-layer fan scaling; biases start at zero.
pub fn init_params(spec: &MlpSpec, rng: &mut RngStream) -> Result<MlpParams> {
    spec.validate()?;
    let mut tensors = Vec::new();
    for (rows, cols) in spec.layer_dims() {
        let scale = (2.0 / (rows + cols) as f64).sqrt();
        let mut w = Tensor::zeros(rows, cols);
        for v in &mut w.data {
            *v = scale * rng.normal();
        }
        tensors.push(w);
        tensors.push(Tensor::zeros(rows, 1));
    }
    Ok(MlpParams {
        spec: spec.clone(),
        tensors,
    })
}

/// Fast inference pass without recording a graph.
pub fn forward_infer(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != params.spec.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "input has {} values, spec wants {}",
            input.len(),
            params.spec.input_dim
        )));
    }
    let n_layers = params.spec.hidden_dims.len() + 1;
    let mut x = input.to_vec();
    for layer in 0..n_layers {
        let w = &params.tensors[2 * layer];
        let b = &params.tensors[2 * layer + 1];
        let mut y = vec![0.0; w.rows];
        for (r, out) in y.iter_mut().enumerate() {
            let row = &w.data[r * w.cols..(r + 1) * w.cols];
            *out = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() + b.data[r];
        }
        if layer + 1 < n_layers {
            for v in &mut y {
                *v = activate(params.spec.activation, *v);
            }
        }
        x = y;
    }
    Ok(x)
}

fn activate(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => x.max(0.0),
        Activation::Gelu => x * normal_cdf(x),
    }
}

fn activate_grad(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Gelu => normal_cdf(x) + x * normal_pdf(x),
    }
}

// ── reverse-mode tape ───────────────────────────────────────────────────

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec { w: NodeId, x: NodeId, rows: usize, cols: usize },
    Add { a: NodeId, b: NodeId },
    Gelu { x: NodeId },
    Relu { x: NodeId },
    Scale { x: NodeId, c: f64 },
    Sum { x: NodeId },
    /// Mean squared error between two equal-length nodes.
    Mse { x: NodeId, target: NodeId },
    /// Fixed-weight inner product (a scalar probe for Jacobian tests).
    DotConst { x: NodeId, weights: Vec<f64> },
}

/// A tape of vector-valued operations; construction order is execution
/// order, so operands always precede their consumers.
#[derive(Debug, Default)]
pub struct Graph {
    ops: Vec<Op>,
    dims: Vec<usize>,
    vals: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    forwarded: bool,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, op: Op, dim: usize) -> NodeId {
        self.ops.push(op);
        self.dims.push(dim);
        self.vals.push(vec![0.0; dim]);
        self.grads.push(Vec::new());
        self.forwarded = false;
        self.ops.len() - 1
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id >= self.ops.len() {
            return Err(Error::DimensionMismatch(format!("unknown node {id}")));
        }
        Ok(())
    }

    pub fn dim(&self, id: NodeId) -> usize {
        self.dims[id]
    }

    pub fn leaf(&mut self, dim: usize) -> NodeId {
        self.push(Op::Leaf, dim)
    }

    pub fn set_leaf(&mut self, id: NodeId, values: &[f64]) -> Result<()> {
        self.check(id)?;
        if !matches!(self.ops[id], Op::Leaf) {
            return Err(Error::InvalidCommand(format!("node {id} is not a leaf")));
        }
        if values.len() != self.dims[id] {
            return Err(Error::DimensionMismatch(format!(
                "leaf {id} has dim {}, got {} values",
                self.dims[id],
                values.len()
            )));
        }
        self.vals[id].copy_from_slice(values);
        self.forwarded = false;
        Ok(())
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        self.check(w)?;
        self.check(x)?;
        if self.dims[w] != rows * cols || self.dims[x] != cols {
            return Err(Error::DimensionMismatch(format!(
                "matvec wants {rows}x{cols} on dim-{cols} input; got w dim {} and x dim {}",
                self.dims[w], self.dims[x]
            )));
        }
        Ok(self.push(Op::MatVec { w, x, rows, cols }, rows))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        if self.dims[a] != self.dims[b] {
            return Err(Error::DimensionMismatch(format!(
                "add dims differ: {} vs {}",
                self.dims[a], self.dims[b]
            )));
        }
        let dim = self.dims[a];
        Ok(self.push(Op::Add { a, b }, dim))
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let dim = self.dims[x];
        Ok(self.push(Op::Gelu { x }, dim))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let dim = self.dims[x];
        Ok(self.push(Op::Relu { x }, dim))
    }

    pub fn activation(&mut self, a: Activation, x: NodeId) -> Result<NodeId> {
        match a {
            Activation::Relu => self.relu(x),
            Activation::Gelu => self.gelu(x),
        }
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check(x)?;
        let dim = self.dims[x];
        Ok(self.push(Op::Scale { x, c }, dim))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        Ok(self.push(Op::Sum { x }, 1))
    }

    pub fn mse(&mut self, x: NodeId, target: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(target)?;
        if self.dims[x] != self.dims[target] {
            return Err(Error::DimensionMismatch(format!(
                "mse dims differ: {} vs {}",
                self.dims[x], self.dims[target]
            )));
        }
        Ok(self.push(Op::Mse { x, target }, 1))
    }

    pub fn dot_const(&mut self, x: NodeId, weights: Vec<f64>) -> Result<NodeId> {
        self.check(x)?;
        if self.dims[x] != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "dot_const dims differ: {} vs {}",
                self.dims[x],
                weights.len()
            )));
        }
        Ok(self.push(Op::DotConst { x, weights }, 1))
    }

    /// Evaluate every node in construction order.
    pub fn forward(&mut self) {
        for id in 0..self.ops.len() {
            // Split borrows: operands live strictly before id.
            let (done, rest) = self.vals.split_at_mut(id);
            let out = &mut rest[0];
            match &self.ops[id] {
                Op::Leaf => {}
                Op::MatVec { w, x, rows, cols } => {
                    let wv = &done[*w];
                    let xv = &done[*x];
                    for r in 0..*rows {
                        let row = &wv[r * cols..(r + 1) * cols];
                        out[r] = row.iter().zip(xv.iter()).map(|(a, b)| a * b).sum();
                    }
                }
                Op::Add { a, b } => {
                    for ((o, p), q) in out.iter_mut().zip(&done[*a]).zip(&done[*b]) {
                        *o = p + q;
                    }
                }
                Op::Gelu { x } => {
                    for (o, v) in out.iter_mut().zip(&done[*x]) {
                        *o = activate(Activation::Gelu, *v);
                    }
                }
                Op::Relu { x } => {
                    for (o, v) in out.iter_mut().zip(&done[*x]) {
                        *o = activate(Activation::Relu, *v);
                    }
                }
                Op::Scale { x, c } => {
                    for (o, v) in out.iter_mut().zip(&done[*x]) {
                        *o = c * v;
                    }
                }
                Op::Sum { x } => {
                    out[0] = done[*x].iter().sum();
                }
                Op::Mse { x, target } => {
                    let n = done[*x].len() as f64;
                    out[0] = done[*x]
                        .iter()
                        .zip(&done[*target])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        / n;
                }
                Op::DotConst { x, weights } => {
                    out[0] = done[*x].iter().zip(weights).map(|(a, b)| a * b).sum();
                }
            }
        }
        self.forwarded = true;
    }

    /// Reverse pass from a scalar loss node; errors without a prior forward.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check(loss)?;
        if !self.forwarded {
            return Err(Error::InvalidCommand(
                "backward called without a recorded forward pass".into(),
            ));
        }
        if self.dims[loss] != 1 {
            return Err(Error::DimensionMismatch(format!(
                "loss node must be scalar, has dim {}",
                self.dims[loss]
            )));
        }
        for (g, d) in self.grads.iter_mut().zip(&self.dims) {
            g.clear();
            g.resize(*d, 0.0);
        }
        self.grads[loss][0] = 1.0;

        for id in (0..self.ops.len()).rev() {
            let g_out = std::mem::take(&mut self.grads[id]);
            match &self.ops[id] {
                Op::Leaf => {}
                Op::MatVec { w, x, rows, cols } => {
                    let (w, x, rows, cols) = (*w, *x, *rows, *cols);
                    let xv = self.vals[x].clone();
                    let wv = &self.vals[w];
                    // dW[r,c] += g[r]·x[c]; dx[c] += Σ_r W[r,c]·g[r].
                    let mut dx = std::mem::take(&mut self.grads[x]);
                    {
                        let dw = &mut self.grads[w];
                        for r in 0..rows {
                            let gr = g_out[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &wv[r * cols..(r + 1) * cols];
                            let drow = &mut dw[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                drow[c] += gr * xv[c];
                                dx[c] += row[c] * gr;
                            }
                        }
                    }
                    self.grads[x] = dx;
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    for (g, go) in self.grads[a].iter_mut().zip(&g_out) {
                        *g += go;
                    }
                    for (g, go) in self.grads[b].iter_mut().zip(&g_out) {
                        *g += go;
                    }
                }
                Op::Gelu { x } => {
                    let x = *x;
                    for (c, (g, v)) in self.grads[x].iter_mut().zip(&self.vals[x]).enumerate() {
                        *g += g_out[c] * activate_grad(Activation::Gelu, *v);
                    }
                }
                Op::Relu { x } => {
                    let x = *x;
                    for (c, (g, v)) in self.grads[x].iter_mut().zip(&self.vals[x]).enumerate() {
                        *g += g_out[c] * activate_grad(Activation::Relu, *v);
                    }
                }
                Op::Scale { x, c } => {
                    let (x, c) = (*x, *c);
                    for (g, go) in self.grads[x].iter_mut().zip(&g_out) {
                        *g += c * go;
                    }
                }
                Op::Sum { x } => {
                    let x = *x;
                    for g in self.grads[x].iter_mut() {
                        *g += g_out[0];
                    }
                }
                Op::Mse { x, target } => {
                    let (x, target) = (*x, *target);
                    let n = self.dims[x] as f64;
                    let scale = 2.0 * g_out[0] / n;
                    let diffs: Vec<f64> = self.vals[x]
                        .iter()
                        .zip(&self.vals[target])
                        .map(|(a, b)| a - b)
                        .collect();
                    for (g, d) in self.grads[x].iter_mut().zip(&diffs) {
                        *g += scale * d;
                    }
                    for (g, d) in self.grads[target].iter_mut().zip(&diffs) {
                        *g -= scale * d;
                    }
                }
                Op::DotConst { x, weights } => {
                    let x = *x;
                    let ws = weights.clone();
                    for (g, w) in self.grads[x].iter_mut().zip(&ws) {
                        *g += g_out[0] * w;
                    }
                }
            }
            self.grads[id] = g_out;
        }
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.vals[id]
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.grads[id]
    }
}

// ── batched MSE training graph ──────────────────────────────────────────

/// A reusable graph computing the batch-mean MSE between the MLP outputs
/// and per-sample targets, with parameters as leaves.
pub struct BatchMseGraph {
    pub graph: Graph,
    /// Aligned with `MlpParams::tensors`.
    pub param_nodes: Vec<NodeId>,
    pub inputs: Vec<NodeId>,
    pub targets: Vec<NodeId>,
    pub loss: NodeId,
}

impl BatchMseGraph {
    pub fn build(spec: &MlpSpec, batch: usize) -> Result<BatchMseGraph> {
        spec.validate()?;
        if batch == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        let mut g = Graph::new();
        let mut param_nodes = Vec::new();
        for (rows, cols) in spec.layer_dims() {
            param_nodes.push(g.leaf(rows * cols));
            param_nodes.push(g.leaf(rows));
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut total: Option<NodeId> = None;
        let n_layers = spec.hidden_dims.len() + 1;
        for _ in 0..batch {
            let input = g.leaf(spec.input_dim);
            inputs.push(input);
            let mut x = input;
            for layer in 0..n_layers {
                let (rows, cols) = spec.layer_dims()[layer];
                let wx = g.matvec(param_nodes[2 * layer], x, rows, cols)?;
                let pre = g.add(wx, param_nodes[2 * layer + 1])?;
                x = if layer + 1 < n_layers {
                    g.activation(spec.activation, pre)?
                } else {
                    pre
                };
            }
            let target = g.leaf(spec.output_dim);
            targets.push(target);
            let loss_i = g.mse(x, target)?;
            total = Some(match total {
                None => loss_i,
                Some(acc) => g.add(acc, loss_i)?,
            });
        }
        let loss = g.scale(total.expect("batch > 0"), 1.0 / batch as f64)?;
        Ok(BatchMseGraph {
            graph: g,
            param_nodes,
            inputs,
            targets,
            loss,
        })
    }

    /// Copy the current parameters into their leaves.
    pub fn load_params(&mut self, params: &MlpParams) -> Result<()> {
        for (node, tensor) in self.param_nodes.iter().zip(&params.tensors) {
            self.graph.set_leaf(*node, &tensor.data)?;
        }
        Ok(())
    }

    /// Run forward+backward; returns the batch loss, gradients via `grad`.
    pub fn loss_and_grads(&mut self) -> Result<f64> {
        self.graph.forward();
        self.graph.backward(self.loss)?;
        Ok(self.graph.value(self.loss)[0])
    }
}

// ── diffusion-step conditioning ─────────────────────────────────────────

/// Sinusoidal embedding of the diffusion step index; values in [−1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEmbedding {
    pub dim: usize,
}

impl Default for StepEmbedding {
    fn default() -> Self {
        StepEmbedding { dim: 32 }
    }
}

impl StepEmbedding {
    pub fn encode(&self, k: usize) -> Vec<f64> {
        let half = self.dim / 2;
        let mut out = vec![0.0; self.dim];
        for i in 0..half {
            let freq = (10_000f64).powf(-(i as f64) / half as f64);
            out[2 * i] = (k as f64 * freq).sin();
            out[2 * i + 1] = (k as f64 * freq).cos();
        }
        out
    }
}

/// Concatenate [obs_window ∥ noisy_chunk ∥ step embedding] into the MLP input.
pub fn eps_input(
    obs_flat: &[f64],
    noisy_chunk: &[f64],
    k: usize,
    embed: &StepEmbedding,
) -> Vec<f64> {
    let mut input = Vec::with_capacity(obs_flat.len() + noisy_chunk.len() + embed.dim);
    input.extend_from_slice(obs_flat);
    input.extend_from_slice(noisy_chunk);
    input.extend(embed.encode(k));
    input
}

/// The noise-prediction evaluation: predicted noise for a noisy chunk at
/// diffusion step `k`, conditioned on the observation window.
pub fn forward(
    params: &MlpParams,
    obs_flat: &[f64],
    noisy_chunk: &[f64],
    k: usize,
    embed: &StepEmbedding,
) -> Result<Vec<f64>> {
    let input = eps_input(obs_flat, noisy_chunk, k, embed);
    forward_infer(params, &input)
}

// ── optimizer ───────────────────────────────────────────────────────────

/// AdamW with decoupled weight decay, linear warmup, and cosine decay.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    /// Horizon of the cosine decay (total planned optimizer steps).
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: usize,
    pub skipped_non_finite: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(
        learning_rate: f64,
        weight_decay: f64,
        warmup_steps: usize,
        total_steps: usize,
        params: &MlpParams,
    ) -> OptimizerState {
        OptimizerState {
            learning_rate,
            weight_decay,
            warmup_steps,
            total_steps,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            skipped_non_finite: 0,
            m: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            v: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    /// Learning rate at the current step: linear warmup to `learning_rate`,
    /// then cosine decay to 0 at `total_steps`.
    pub fn effective_lr(&self) -> f64 {
        let s = self.step;
        if s < self.warmup_steps {
            return self.learning_rate * (s + 1) as f64 / self.warmup_steps as f64;
        }
        if self.total_steps <= self.warmup_steps {
            return self.learning_rate;
        }
        let progress =
            (s - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        let progress = progress.min(1.0);
        self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// Apply one AdamW update; non-finite gradients skip the step and are
    /// counted instead of propagating.
    pub fn apply(&mut self, params: &mut MlpParams, grads: &[&[f64]]) -> Result<()> {
        if grads.len() != params.tensors.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} gradient tensors, got {}",
                params.tensors.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            self.skipped_non_finite += 1;
            return Ok(());
        }
        let lr = self.effective_lr();
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((tensor, grad), (m, v)) in params
            .tensors
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if grad.len() != tensor.data.len() {
                return Err(Error::DimensionMismatch(
                    "gradient tensor shape mismatch".into(),
                ));
            }
            for i in 0..tensor.data.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                tensor.data[i] -=
                    lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * tensor.data[i]);
            }
        }
        self.step += 1;
        Ok(())
    }
}

// ── weight files ────────────────────────────────────────────────────────

/// Metadata stored in the weight-file header alongside the layer shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFileMeta {
    pub seed: u64,
    pub embed_dim: usize,
    pub schedule_kind: String,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

/// Write a text header followed by all parameters as little-endian f64.
pub fn save_weights(path: &Path, params: &MlpParams, meta: &WeightFileMeta) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "suturesafe-weights v1")?;
    writeln!(f, "input_dim {}", params.spec.input_dim)?;
    let hidden = params
        .spec
        .hidden_dims
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    writeln!(f, "hidden {hidden}")?;
    writeln!(f, "output_dim {}", params.spec.output_dim)?;
    writeln!(f, "activation {}", params.spec.activation)?;
    writeln!(f, "embed_dim {}", meta.embed_dim)?;
    writeln!(f, "seed {}", meta.seed)?;
    writeln!(f, "schedule {}", meta.schedule_kind)?;
    writeln!(f, "diffusion_steps {}", meta.diffusion_steps)?;
    writeln!(f, "beta_start {}", meta.beta_start)?;
    writeln!(f, "beta_end {}", meta.beta_end)?;
    writeln!(f, "tensors {}", params.tensors.len())?;
    writeln!(f, "end-header")?;
    for tensor in &params.tensors {
        for v in &tensor.data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

fn header_field<'a>(line: &'a str, key: &str, path: &Path) -> Result<&'a str> {
    line.strip_prefix(key)
        .map(str::trim)
        .ok_or_else(|| Error::parse(path, format!("expected header line {key:?}, got {line:?}")))
}

/// Load a weight file written by [`save_weights`].
pub fn load_weights(path: &Path) -> Result<(MlpParams, WeightFileMeta)> {
    let file = std::fs::File::open(path)
        .map_err(|_| Error::MissingArtifact(path.display().to_string()))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<std::fs::File>| -> Result<String> {
        line.clear();
        reader.read_line(&mut line)?;
        Ok(line.trim_end().to_string())
    };

    let magic = next_line(&mut reader)?;
    if magic != "suturesafe-weights v1" {
        return Err(Error::parse(path, format!("bad magic {magic:?}")));
    }
    let input_dim: usize = header_field(&next_line(&mut reader)?, "input_dim", path)?
        .parse()
        .map_err(|_| Error::parse(path, "bad input_dim"))?;
    let hidden_raw = next_line(&mut reader)?;
    let hidden_str = header_field(&hidden_raw, "hidden", path)?;
    let hidden_dims: Vec<usize> = if hidden_str.is_empty() {
        Vec::new()
    } else {
        hidden_str
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| Error::parse(path, "bad hidden dims")))
            .collect::<Result<_>>()?
    };
    let output_dim: usize = header_field(&next_line(&mut reader)?, "output_dim", path)?
        .parse()
        .map_err(|_| Error::parse(path, "bad output_dim"))?;
    let activation: Activation =
        header_field(&next_line(&mut reader)?, "activation", path)?.parse()?;
    let embed_dim: usize = header_field(&next_line(&mut reader)?, "embed_dim", path)?
        .parse()
        .map_err(|_| Error::parse(path, "bad embed_dim"))?;
    let seed: u64 = header_field(&next_line(&mut reader)?, "seed", path)?
        .parse()
        .map_err(|_| Error::parse(path, "bad seed"))?;
    let schedule_kind = header_field(&next_line(&mut reader)?, "schedule", path)?.to_string();
    let diffusion_steps: usize = header_field(&next_line(&mut reader)?, "diffusion_steps", path)?
        .parse()
        .map_err(|_| Error::parse(path, "bad diffusion_steps"))?;
    let beta_start: f64 = header_field(&next_line(&mut reader)?, "beta_start", path)?
        .parse()
        .map_err(|_| Error::parse(path, "bad beta_start"))?;
    let beta_end: f64 = header_field(&next_line(&mut reader)?, "beta_end", path)?
        .parse()
        .map_err(|_| Error::parse(path, "bad beta_end"))?;
    let tensor_count: usize = header_field(&next_line(&mut reader)?, "tensors", path)?
        .parse()
        .map_err(|_| Error::parse(path, "bad tensor count"))?;
    let end = next_line(&mut reader)?;
    if end != "end-header" {
        return Err(Error::parse(path, format!("expected end-header, got {end:?}")));
    }

    let spec = MlpSpec {
        input_dim,
        hidden_dims,
        output_dim,
        activation,
    };
    spec.validate()?;
    let mut tensors = Vec::new();
    for (rows, cols) in spec.layer_dims() {
        for shape in [(rows, cols), (rows, 1)] {
            let mut t = Tensor::zeros(shape.0, shape.1);
            let mut buf = [0u8; 8];
            for v in &mut t.data {
                reader.read_exact(&mut buf).map_err(|_| {
                    Error::parse(path, "weight blob shorter than the declared shapes")
                })?;
                *v = f64::from_le_bytes(buf);
            }
            tensors.push(t);
        }
    }
    if tensors.len() != tensor_count {
        return Err(Error::parse(
            path,
            format!("tensor count {tensor_count} does not match shapes ({})", tensors.len()),
        ));
    }
    Ok((
        MlpParams { spec, tensors },
        WeightFileMeta {
            seed,
            embed_dim,
            schedule_kind,
            diffusion_steps,
            beta_start,
            beta_end,
        },
    ))
}

// ── finite-difference oracle ────────────────────────────────────────────

/// Compare analytic parameter gradients of a random net against central
/// finite differences (h = 1e-5); returns the maximum relative error.
pub fn finite_difference_gradcheck(spec: &MlpSpec, seed: u64) -> Result<f64> {
    let mut rng = RngStream::new(seed, 777);
    let mut params = init_params(spec, &mut rng)?;
    let input: Vec<f64> = (0..spec.input_dim).map(|_| rng.normal()).collect();
    let target: Vec<f64> = (0..spec.output_dim).map(|_| rng.normal()).collect();

    let mut batch = BatchMseGraph::build(spec, 1)?;
    batch.load_params(&params)?;
    batch.graph.set_leaf(batch.inputs[0], &input)?;
    batch.graph.set_leaf(batch.targets[0], &target)?;
    batch.loss_and_grads()?;
    let analytic: Vec<Vec<f64>> = batch
        .param_nodes
        .iter()
        .map(|n| batch.graph.grad(*n).to_vec())
        .collect();

    let h = 1e-5;
    let loss_at = |params: &MlpParams| -> Result<f64> {
        let out = forward_infer(params, &input)?;
        let n = out.len() as f64;
        Ok(out
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    };

    let mut max_rel = 0.0f64;
    for ti in 0..params.tensors.len() {
        for i in 0..params.tensors[ti].data.len() {
            let orig = params.tensors[ti].data[i];
            params.tensors[ti].data[i] = orig + h;
            let plus = loss_at(&params)?;
            params.tensors[ti].data[i] = orig - h;
            let minus = loss_at(&params)?;
            params.tensors[ti].data[i] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let an = analytic[ti][i];
            let denom = an.abs().max(fd.abs());
            let rel = if denom < 1e-7 {
                // Both effectively zero; compare absolutely.
                (an - fd).abs() * 1e3
            } else {
                (an - fd).abs() / denom
            };
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
