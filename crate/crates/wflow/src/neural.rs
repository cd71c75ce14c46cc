//! Minimal reverse-mode automatic differentiation, the conditional generator
//! `T_theta(x, z)`, and the Adam optimizer.
//!
//! The tape works at matrix granularity: a node is an `N x d` matrix or a
//! scalar, and the supported primitives are exactly what the two training
//! losses need (affine maps, the rectifier, elementwise sums and products,
//! squared norms, means, pairwise Riesz energy terms, quotients and square
//! roots). Riesz energies enter the losses only through the network outputs,
//! so their adjoints are the closed-form particle gradients — no nested or
//! forward-mode differentiation is required.

use crate::error::{Error, Result};
use crate::functionals::{self, DirectionalForm, Functional};
use crate::measures::{ParticleCloud, RandomSource};
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::rc::Rc;

// ---------------------------------------------------------------------------
// MLP parameters and Adam
// ---------------------------------------------------------------------------

/// One fully connected layer: `y = x W^T + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Weights and biases of the conditional generator `T_theta(x, z)`:
/// input `(x, z)` concatenated (width `2d`), rectifier hidden layers,
/// linear output of width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

impl MlpParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidParam("network needs at least one layer".into()));
        }
        for (idx, layer) in layers.iter().enumerate() {
            if layer.w.nrows() != layer.b.len() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {idx}: weight rows {} vs bias length {}",
                    layer.w.nrows(),
                    layer.b.len()
                )));
            }
            if idx > 0 && layers[idx - 1].w.nrows() != layer.w.ncols() {
                return Err(Error::ShapeMismatch(format!(
                    "layer {idx} input width {} does not compose with previous output {}",
                    layer.w.ncols(),
                    layers[idx - 1].w.nrows()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").w.nrows()
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Gradients shaped like [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

/// Adam optimizer state: first/second moment accumulators and step counter.
/// Fixed `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
#[derive(Debug, Clone)]
pub struct AdamState {
    learning_rate: f64,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
    step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        let zeros = |l: &Layer| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.len()));
        Self {
            learning_rate,
            m: params.layers.iter().map(zeros).collect(),
            v: params.layers.iter().map(zeros).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut MlpParams, grads: &MlpGrads, state: &mut AdamState) {
    assert_eq!(params.layers.len(), grads.layers.len(), "gradient/parameter shape mismatch");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let lr = state.learning_rate;
    for (idx, layer) in params.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[idx];
        let (mw, mb) = &mut state.m[idx];
        let (vw, vb) = &mut state.v[idx];
        azip_update(layer.w.as_slice_mut().unwrap(), gw.as_slice().unwrap(),
                    mw.as_slice_mut().unwrap(), vw.as_slice_mut().unwrap(), lr, bc1, bc2);
        azip_update(layer.b.as_slice_mut().unwrap(), gb.as_slice().unwrap(),
                    mb.as_slice_mut().unwrap(), vb.as_slice_mut().unwrap(), lr, bc1, bc2);
    }
}

fn azip_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], lr: f64, bc1: f64, bc2: f64) {
    for k in 0..p.len() {
        m[k] = ADAM_BETA1 * m[k] + (1.0 - ADAM_BETA1) * g[k];
        v[k] = ADAM_BETA2 * v[k] + (1.0 - ADAM_BETA2) * g[k] * g[k];
        let mhat = m[k] / bc1;
        let vhat = v[k] / bc2;
        p[k] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}

/// Fresh network for clouds of dimension `d`: layer widths
/// `2d -> hidden[0] -> ... -> hidden[last] -> d`, weights drawn
/// `N(0, 2/fan_in)` (rectifier-appropriate), biases zero.
pub fn init_mlp(rng: &mut RandomSource, d: usize, hidden: &[usize]) -> MlpParams {
    assert!(!hidden.is_empty(), "init_mlp requires at least one hidden layer");
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(2 * d);
    dims.extend_from_slice(hidden);
    dims.push(d);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for win in dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let draws = rng.standard_normal(fan_out * fan_in);
        let w = Array2::from_shape_vec((fan_out, fan_in), draws).expect("shape") * std;
        layers.push(Layer { w, b: Array1::zeros(fan_out) });
    }
    MlpParams::new(layers).expect("constructed shapes compose")
}

/// Applies the generator row-wise to `(x_i, z_i)`.
pub fn mlp_forward(params: &MlpParams, x: &ParticleCloud, z: &ParticleCloud) -> Result<ParticleCloud> {
    if x.n() != z.n() {
        return Err(Error::SizeMismatch { left: x.n(), right: z.n() });
    }
    if x.dim() != z.dim() {
        return Err(Error::DimMismatch { left: x.dim(), right: z.dim() });
    }
    if params.input_dim() != 2 * x.dim() || params.output_dim() != x.dim() {
        return Err(Error::ShapeMismatch(format!(
            "network maps {} -> {}, cloud dimension is {}",
            params.input_dim(),
            params.output_dim(),
            x.dim()
        )));
    }
    let input = concat_columns(x.points(), z.points());
    let out = forward_raw(params, &input);
    ParticleCloud::new(out)
}

pub(crate) fn concat_columns(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, da) = a.dim();
    let db = b.ncols();
    let mut out = Array2::zeros((n, da + db));
    out.slice_mut(ndarray::s![.., ..da]).assign(a);
    out.slice_mut(ndarray::s![.., da..]).assign(b);
    out
}

fn forward_raw(params: &MlpParams, input: &Array2<f64>) -> Array2<f64> {
    let last = params.layers.len() - 1;
    let mut h = input.clone();
    for (idx, layer) in params.layers.iter().enumerate() {
        let mut y = h.dot(&layer.w.t());
        y += &layer.b;
        if idx < last {
            y.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
        }
        h = y;
    }
    h
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Node payload: a matrix or a scalar.
#[derive(Debug, Clone)]
pub enum Value {
    Matrix(Array2<f64>),
    Scalar(f64),
}

impl Value {
    pub fn as_matrix(&self) -> &Array2<f64> {
        match self {
            Value::Matrix(m) => m,
            Value::Scalar(_) => panic!("expected matrix node"),
        }
    }

    pub fn as_scalar(&self) -> f64 {
        match self {
            Value::Scalar(s) => *s,
            Value::Matrix(_) => panic!("expected scalar node"),
        }
    }

    fn zeros_like(&self) -> Value {
        match self {
            Value::Matrix(m) => Value::Matrix(Array2::zeros(m.dim())),
            Value::Scalar(_) => Value::Scalar(0.0),
        }
    }
}

enum Op {
    Leaf { requires_grad: bool },
    /// `x W^T + b` with `b` broadcast over rows (`b` is a `1 x out` leaf).
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Relu { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    /// Sum of squared entries (scalar).
    SquaredNorm { x: NodeId },
    /// Mean of all entries (scalar).
    Mean { x: NodeId },
    /// Scalar quotient `a / b`.
    Quotient { a: NodeId, b: NodeId },
    /// Scalar square root.
    Sqrt { x: NodeId },
    /// Discrete energy of the rows of `x` viewed as a particle cloud; the
    /// closed-form particle gradient is computed alongside the value (one
    /// pairwise pass) and stored for the backward sweep.
    FunctionalValue { grad: Array2<f64>, x: NodeId },
    /// Directional derivative form `D(T)` evaluated at the rows of `x`.
    Directional { form: Rc<DirectionalForm>, x: NodeId },
}

/// Records one loss evaluation; reverse-topological backward pass.
pub struct Tape {
    values: Vec<Value>,
    ops: Vec<Op>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { values: Vec::new(), ops: Vec::new() }
    }

    fn push(&mut self, value: Value, op: Op) -> NodeId {
        self.values.push(value);
        self.ops.push(op);
        NodeId(self.values.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Value {
        &self.values[id.0]
    }

    /// Constant input (no gradient).
    pub fn constant(&mut self, m: Array2<f64>) -> NodeId {
        self.push(Value::Matrix(m), Op::Leaf { requires_grad: false })
    }

    /// Trainable leaf.
    pub fn param(&mut self, m: Array2<f64>) -> NodeId {
        self.push(Value::Matrix(m), Op::Leaf { requires_grad: true })
    }

    pub fn scalar_constant(&mut self, s: f64) -> NodeId {
        self.push(Value::Scalar(s), Op::Leaf { requires_grad: false })
    }

    fn matrix(&self, id: NodeId) -> &Array2<f64> {
        self.values[id.0].as_matrix()
    }

    fn scalar(&self, id: NodeId) -> f64 {
        self.values[id.0].as_scalar()
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xm, wm, bm) = (self.matrix(x), self.matrix(w), self.matrix(b));
        if xm.ncols() != wm.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "affine: input width {} vs weight width {}",
                xm.ncols(),
                wm.ncols()
            )));
        }
        if bm.dim() != (1, wm.nrows()) {
            return Err(Error::ShapeMismatch("affine: bias must be 1 x out".into()));
        }
        let mut y = xm.dot(&wm.t());
        y += &bm.row(0);
        Ok(self.push(Value::Matrix(y), Op::Affine { x, w, b }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = self.matrix(x).mapv(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Value::Matrix(y), Op::Relu { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.elementwise(a, b, |x, y| x + y)?;
        Ok(self.push(v, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.elementwise(a, b, |x, y| x - y)?;
        Ok(self.push(v, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.elementwise(a, b, |x, y| x * y)?;
        Ok(self.push(v, Op::Mul { a, b }))
    }

    fn elementwise(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Result<Value> {
        match (&self.values[a.0], &self.values[b.0]) {
            (Value::Scalar(x), Value::Scalar(y)) => Ok(Value::Scalar(f(*x, *y))),
            (Value::Matrix(x), Value::Matrix(y)) => {
                if x.dim() != y.dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "elementwise: {:?} vs {:?}",
                        x.dim(),
                        y.dim()
                    )));
                }
                let mut out = x.clone();
                out.zip_mut_with(y, |p, q| *p = f(*p, *q));
                Ok(Value::Matrix(out))
            }
            _ => Err(Error::ShapeMismatch("elementwise: scalar vs matrix".into())),
        }
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = match &self.values[x.0] {
            Value::Matrix(m) => Value::Matrix(m * c),
            Value::Scalar(s) => Value::Scalar(s * c),
        };
        self.push(v, Op::Scale { x, c })
    }

    pub fn squared_norm(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.matrix(x).iter().map(|v| v * v).sum();
        self.push(Value::Scalar(s), Op::SquaredNorm { x })
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let m = self.matrix(x);
        let s: f64 = m.iter().sum::<f64>() / m.len() as f64;
        self.push(Value::Scalar(s), Op::Mean { x })
    }

    pub fn quotient(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.scalar(a) / self.scalar(b);
        self.push(Value::Scalar(v), Op::Quotient { a, b })
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let v = self.scalar(x).sqrt();
        self.push(Value::Scalar(v), Op::Sqrt { x })
    }

    /// Energy of the rows of `x` as an empirical measure.
    pub fn functional_value(&mut self, f: Rc<Functional>, x: NodeId) -> Result<NodeId> {
        let cloud = ParticleCloud::new(self.matrix(x).clone())?;
        let (v, grad, _) = functionals::value_and_grad(&f, &cloud)?;
        Ok(self.push(Value::Scalar(v), Op::FunctionalValue { grad, x }))
    }

    pub(crate) fn directional(&mut self, form: Rc<DirectionalForm>, x: NodeId) -> Result<NodeId> {
        let m = self.matrix(x);
        if m.dim() != form.linear.dim() {
            return Err(Error::ShapeMismatch(format!(
                "directional form over {:?}, node is {:?}",
                form.linear.dim(),
                m.dim()
            )));
        }
        let v = form.value(m);
        Ok(self.push(Value::Scalar(v), Op::Directional { form, x }))
    }

    /// Exact gradients of the scalar recorded at `root` with respect to every
    /// `param` leaf; untouched parameters get zero gradients.
    pub fn loss_gradient(&self, root: NodeId) -> Result<Gradients> {
        match &self.values[root.0] {
            Value::Scalar(_) => {}
            Value::Matrix(_) => {
                return Err(Error::ShapeMismatch("loss root must be a scalar node".into()))
            }
        }
        let mut adjoints: Vec<Option<Value>> = vec![None; self.values.len()];
        adjoints[root.0] = Some(Value::Scalar(1.0));

        for idx in (0..=root.0).rev() {
            let Some(out_adj) = adjoints[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Leaf { .. } => {
                    adjoints[idx] = Some(out_adj); // keep for extraction
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let delta = out_adj.as_matrix();
                    let dx = delta.dot(self.matrix(*w));
                    let dw = delta.t().dot(self.matrix(*x));
                    let db = delta.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adjoints, *x, Value::Matrix(dx));
                    accumulate(&mut adjoints, *w, Value::Matrix(dw));
                    accumulate(&mut adjoints, *b, Value::Matrix(db));
                }
                Op::Relu { x } => {
                    // Derivative at exactly 0 is defined as 0.
                    let mut dx = out_adj.as_matrix().clone();
                    dx.zip_mut_with(self.matrix(*x), |g, v| {
                        if *v <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    accumulate(&mut adjoints, *x, Value::Matrix(dx));
                }
                Op::Add { a, b } => {
                    accumulate(&mut adjoints, *a, out_adj.clone());
                    accumulate(&mut adjoints, *b, out_adj);
                }
                Op::Sub { a, b } => {
                    accumulate(&mut adjoints, *a, out_adj.clone());
                    accumulate(&mut adjoints, *b, negate(out_adj));
                }
                Op::Mul { a, b } => {
                    let da = value_mul(&out_adj, &self.values[b.0]);
                    let db = value_mul(&out_adj, &self.values[a.0]);
                    accumulate(&mut adjoints, *a, da);
                    accumulate(&mut adjoints, *b, db);
                }
                Op::Scale { x, c } => {
                    accumulate(&mut adjoints, *x, scale_value(out_adj, *c));
                }
                Op::SquaredNorm { x } => {
                    let g = out_adj.as_scalar();
                    let dx = self.matrix(*x) * (2.0 * g);
                    accumulate(&mut adjoints, *x, Value::Matrix(dx));
                }
                Op::Mean { x } => {
                    let m = self.matrix(*x);
                    let g = out_adj.as_scalar() / m.len() as f64;
                    accumulate(&mut adjoints, *x, Value::Matrix(Array2::from_elem(m.dim(), g)));
                }
                Op::Quotient { a, b } => {
                    let g = out_adj.as_scalar();
                    let (av, bv) = (self.scalar(*a), self.scalar(*b));
                    accumulate(&mut adjoints, *a, Value::Scalar(g / bv));
                    accumulate(&mut adjoints, *b, Value::Scalar(-g * av / (bv * bv)));
                }
                Op::Sqrt { x } => {
                    let g = out_adj.as_scalar();
                    let y = self.scalar(*x).sqrt();
                    accumulate(&mut adjoints, *x, Value::Scalar(g / (2.0 * y)));
                }
                Op::FunctionalValue { grad, x } => {
                    accumulate(&mut adjoints, *x, Value::Matrix(grad * out_adj.as_scalar()));
                }
                Op::Directional { form, x } => {
                    let mut dx = Array2::zeros(self.matrix(*x).dim());
                    form.add_grad(self.matrix(*x), out_adj.as_scalar(), &mut dx);
                    accumulate(&mut adjoints, *x, Value::Matrix(dx));
                }
            }
        }

        // Materialize zeros for untouched trainable leaves.
        let mut grads: Vec<Option<Value>> = vec![None; self.values.len()];
        for idx in 0..self.values.len() {
            if let Op::Leaf { requires_grad: true } = self.ops[idx] {
                grads[idx] = Some(
                    adjoints[idx]
                        .take()
                        .unwrap_or_else(|| self.values[idx].zeros_like()),
                );
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(adjoints: &mut [Option<Value>], id: NodeId, delta: Value) {
    match &mut adjoints[id.0] {
        Some(Value::Matrix(m)) => *m += delta.as_matrix(),
        Some(Value::Scalar(s)) => *s += delta.as_scalar(),
        slot @ None => *slot = Some(delta),
    }
}

fn negate(v: Value) -> Value {
    match v {
        Value::Matrix(m) => Value::Matrix(-m),
        Value::Scalar(s) => Value::Scalar(-s),
    }
}

fn scale_value(v: Value, c: f64) -> Value {
    match v {
        Value::Matrix(m) => Value::Matrix(m * c),
        Value::Scalar(s) => Value::Scalar(s * c),
    }
}

fn value_mul(a: &Value, b: &Value) -> Value {
    match (a, b) {
        (Value::Scalar(x), Value::Scalar(y)) => Value::Scalar(x * y),
        (Value::Matrix(x), Value::Matrix(y)) => Value::Matrix(x * y),
        _ => panic!("elementwise shapes were validated at forward time"),
    }
}

/// Result of a backward pass.
pub struct Gradients {
    grads: Vec<Option<Value>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &Value {
        self.grads[id.0]
            .as_ref()
            .expect("gradient queried for a non-parameter node")
    }
}

// ---------------------------------------------------------------------------
// Wiring an MLP onto a tape
// ---------------------------------------------------------------------------

/// Parameter leaves of one MLP registered on a tape.
pub struct MlpNodes {
    pub weights: Vec<(NodeId, NodeId)>,
}

/// Registers all layers as trainable leaves.
pub fn register_mlp(tape: &mut Tape, params: &MlpParams) -> MlpNodes {
    let weights = params
        .layers()
        .iter()
        .map(|layer| {
            let w = tape.param(layer.w.clone());
            let b = tape.param(layer.b.clone().insert_axis(Axis(0)));
            (w, b)
        })
        .collect();
    MlpNodes { weights }
}

/// Forward pass `input -> T` through registered parameters (rectifier on all
/// but the last layer).
pub fn mlp_on_tape(tape: &mut Tape, nodes: &MlpNodes, input: NodeId) -> Result<NodeId> {
    let mut h = input;
    let last = nodes.weights.len() - 1;
    for (idx, (w, b)) in nodes.weights.iter().enumerate() {
        h = tape.affine(h, *w, *b)?;
        if idx < last {
            h = tape.relu(h);
        }
    }
    Ok(h)
}

/// Extracts MLP-shaped gradients from a backward pass.
pub fn extract_mlp_grads(grads: &Gradients, nodes: &MlpNodes) -> MlpGrads {
    let layers = nodes
        .weights
        .iter()
        .map(|(w, b)| {
            let gw = grads.get(*w).as_matrix().clone();
            let gb = grads.get(*b).as_matrix().row(0).to_owned();
            (gw, gb)
        })
        .collect();
    MlpGrads { layers }
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON shape header with row-major weight data.
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointLayer {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    layers: Vec<CheckpointLayer>,
}

/// Saves parameters (JSON: per layer `rows`, `cols`, row-major `w`, `b`).
pub fn save_mlp(params: &MlpParams, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        layers: params
            .layers()
            .iter()
            .map(|l| CheckpointLayer {
                rows: l.w.nrows(),
                cols: l.w.ncols(),
                w: l.w.iter().copied().collect(),
                b: l.b.to_vec(),
            })
            .collect(),
    };
    crate::measures::write_atomic(path, &serde_json::to_string(&ckpt)?)
}

/// Loads parameters saved by [`save_mlp`].
pub fn load_mlp(path: &Path) -> Result<MlpParams> {
    let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let mut layers = Vec::with_capacity(ckpt.layers.len());
    for l in ckpt.layers {
        if l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
            return Err(Error::ShapeMismatch("checkpoint layer sizes inconsistent".into()));
        }
        layers.push(Layer {
            w: Array2::from_shape_vec((l.rows, l.cols), l.w).expect("checked"),
            b: Array1::from_vec(l.b),
        });
    }
    MlpParams::new(layers)
}
