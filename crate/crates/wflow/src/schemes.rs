//! The three time-stepping schemes: neural backward (JKO), neural forward
//! (steepest descent), and the interacting-particle flow, plus initial
//! configurations and the flow runner.
//!
//! Both neural schemes learn a conditional generator `T_theta(x, z)` with a
//! fresh standard-normal `z` draw per Adam iteration. The backward step
//! minimizes the transport-plus-energy objective
//! `1/(2 tau N) sum ||x_i - T_i||^2 + F({T_i})` and replaces the cloud by
//! `T_theta(x_i, z_i)`. The forward step minimizes `D(T)/sqrt(M(T))` with
//! `D` the exact directional derivative of the energy and `M` the mean
//! squared speed, then Euler-steps `x_i + tau * max(-D/M, 0) * T_i`.

use crate::error::{Error, Result};
use crate::functionals::{self, Functional};
use crate::measures::{sample_latent, ParticleCloud, RandomSource};
use crate::neural::{
    adam_step, extract_mlp_grads, init_mlp, mlp_forward, mlp_on_tape, register_mlp, AdamState,
    MlpParams, Tape,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

/// Training hyperparameters for one flow. `iterations` applies to every step
/// beyond the first `first_steps`, which get `first_iterations` each
/// (fresh network per step). `batch = None` trains on the full cloud.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    #[serde(default)]
    pub first_steps: usize,
    #[serde(default)]
    pub first_iterations: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub batch: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidParam("iterations must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParam("learning rate must be positive".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidParam("hidden widths must be non-empty and positive".into()));
        }
        if self.batch == Some(0) {
            return Err(Error::InvalidParam("batch size must be >= 1".into()));
        }
        Ok(())
    }

    fn iterations_for_step(&self, step_index: usize) -> usize {
        if step_index < self.first_steps && self.first_iterations > 0 {
            self.first_iterations
        } else {
            self.iterations
        }
    }
}

/// Piecewise-constant step sizes: `(activation time, tau)` pairs, the first
/// activation at time 0, activation times strictly increasing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepSchedule {
    entries: Vec<(f64, f64)>,
}

impl StepSchedule {
    pub fn new(entries: Vec<(f64, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidParam("schedule needs at least one entry".into()));
        }
        if entries[0].0 != 0.0 {
            return Err(Error::InvalidParam("first schedule activation time must be 0".into()));
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidParam("activation times must be strictly increasing".into()));
        }
        if entries.iter().any(|(_, tau)| !(*tau > 0.0)) {
            return Err(Error::InvalidParam("all step sizes must be positive".into()));
        }
        Ok(Self { entries })
    }

    pub fn constant(tau: f64) -> Result<Self> {
        Self::new(vec![(0.0, tau)])
    }

    /// Step size for a step starting at time `t`.
    pub fn tau_at(&self, t: f64) -> f64 {
        self.entries
            .iter()
            .rev()
            .find(|(activation, _)| *activation <= t)
            .map(|(_, tau)| *tau)
            .expect("first activation is 0")
    }

    pub fn entries(&self) -> &[(f64, f64)] {
        &self.entries
    }
}

/// Per-step diagnostics recorded by [`run_flow`].
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    /// Flow time after the step.
    pub t: f64,
    /// Energy of the cloud after the step.
    pub functional_value: f64,
    /// Forward-scheme rescaling factor, if applicable.
    pub scale: Option<f64>,
    /// Training loss at the last Adam iteration, if a network was trained.
    pub final_loss: Option<f64>,
}

/// Ordered `(time, cloud)` snapshots plus per-step diagnostics.
#[derive(Debug, Clone)]
pub struct FlowTrace {
    snapshots: Vec<(f64, ParticleCloud)>,
    diagnostics: Vec<StepDiagnostics>,
}

impl FlowTrace {
    pub fn snapshots(&self) -> &[(f64, ParticleCloud)] {
        &self.snapshots
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    pub fn final_cloud(&self) -> &ParticleCloud {
        &self.snapshots.last().expect("starts with the initial cloud").1
    }

    pub fn final_time(&self) -> f64 {
        self.snapshots.last().expect("non-empty").0
    }
}

/// Initial particle configurations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Initializer {
    /// All particles at one point.
    Dirac { center: Vec<f64> },
    /// Particles split evenly (round robin) over several points.
    DiracSum { centers: Vec<Vec<f64>> },
    /// Uniform in the axis-aligned cube of half-width `radius`.
    UniformSquare { center: Vec<f64>, radius: f64 },
    /// Equispaced angles on a circle (d = 2).
    Circle { center: Vec<f64>, radius: f64 },
    /// Isotropic Gaussian.
    Gaussian { center: Vec<f64>, stddev: f64 },
    /// Equispaced angles on an ellipse boundary (d = 2).
    Ellipse { center: Vec<f64>, semi_axes: Vec<f64> },
    /// Uniform on the union of two perpendicular segments of half-length
    /// `radius` (d = 2).
    Cross { center: Vec<f64>, radius: f64 },
}

impl Initializer {
    pub fn dim(&self) -> usize {
        match self {
            Initializer::Dirac { center }
            | Initializer::UniformSquare { center, .. }
            | Initializer::Circle { center, .. }
            | Initializer::Gaussian { center, .. }
            | Initializer::Ellipse { center, .. }
            | Initializer::Cross { center, .. } => center.len(),
            Initializer::DiracSum { centers } => centers.first().map_or(0, |c| c.len()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidParam("initializer center must be non-empty".into()));
        }
        match self {
            Initializer::DiracSum { centers } => {
                let d = centers[0].len();
                if centers.iter().any(|c| c.len() != d) {
                    return Err(Error::InvalidParam("dirac_sum centers must share a dimension".into()));
                }
            }
            Initializer::UniformSquare { radius, .. }
            | Initializer::Circle { radius, .. }
            | Initializer::Cross { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidParam("initializer radius must be positive".into()));
                }
            }
            Initializer::Gaussian { stddev, .. } => {
                if !(*stddev > 0.0) {
                    return Err(Error::InvalidParam("initializer stddev must be positive".into()));
                }
            }
            Initializer::Ellipse { semi_axes, .. } => {
                if semi_axes.len() != 2 || semi_axes.iter().any(|a| !(*a > 0.0)) {
                    return Err(Error::InvalidParam(
                        "ellipse needs two positive semi-axes".into(),
                    ));
                }
            }
            _ => {}
        }
        match self {
            Initializer::Circle { center, .. }
            | Initializer::Ellipse { center, .. }
            | Initializer::Cross { center, .. } => {
                if center.len() != 2 {
                    return Err(Error::DimMismatch { left: center.len(), right: 2 });
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Draws `n` particles from an initial configuration.
pub fn make_initial(init: &Initializer, n: usize, rng: &mut RandomSource) -> Result<ParticleCloud> {
    if n == 0 {
        return Err(Error::InvalidParam("particle count must be >= 1".into()));
    }
    init.validate()?;
    let d = init.dim();
    let mut points = Array2::zeros((n, d));
    match init {
        Initializer::Dirac { center } => {
            for i in 0..n {
                for j in 0..d {
                    points[[i, j]] = center[j];
                }
            }
        }
        Initializer::DiracSum { centers } => {
            for i in 0..n {
                let c = &centers[i % centers.len()];
                for j in 0..d {
                    points[[i, j]] = c[j];
                }
            }
        }
        Initializer::UniformSquare { center, radius } => {
            for i in 0..n {
                for j in 0..d {
                    points[[i, j]] = center[j] + rng.uniform_in(-radius, *radius);
                }
            }
        }
        Initializer::Circle { center, radius } => {
            for i in 0..n {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                points[[i, 0]] = center[0] + radius * th.cos();
                points[[i, 1]] = center[1] + radius * th.sin();
            }
        }
        Initializer::Gaussian { center, stddev } => {
            let draws = rng.standard_normal(n * d);
            for i in 0..n {
                for j in 0..d {
                    points[[i, j]] = center[j] + stddev * draws[i * d + j];
                }
            }
        }
        Initializer::Ellipse { center, semi_axes } => {
            for i in 0..n {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                points[[i, 0]] = center[0] + semi_axes[0] * th.cos();
                points[[i, 1]] = center[1] + semi_axes[1] * th.sin();
            }
        }
        Initializer::Cross { center, radius } => {
            for i in 0..n {
                let u = rng.uniform_in(-radius, *radius);
                let horizontal = rng.uniform() < 0.5;
                if horizontal {
                    points[[i, 0]] = center[0] + u;
                    points[[i, 1]] = center[1];
                } else {
                    points[[i, 0]] = center[0];
                    points[[i, 1]] = center[1] + u;
                }
            }
        }
    }
    ParticleCloud::new(points)
}

// ---------------------------------------------------------------------------
// Neural backward (JKO) step
// ---------------------------------------------------------------------------

/// Outcome of one neural backward step.
#[derive(Debug)]
pub struct BackwardStep {
    pub cloud: ParticleCloud,
    pub params: MlpParams,
    pub final_loss: f64,
}

/// One JKO step: trains `T_theta` to minimize
/// `1/(2 tau N) sum_i ||x_i - T_theta(x_i, z_i)||^2 + F({T_theta(x_i, z_i)})`
/// with one fresh `z` draw per iteration, then samples the new cloud with a
/// final fresh draw.
pub fn backward_step(
    c: &ParticleCloud,
    f: &Functional,
    tau: f64,
    cfg: &TrainConfig,
    rng: &mut RandomSource,
) -> Result<BackwardStep> {
    backward_step_impl(c, Some(f), tau, cfg, rng)
}

fn backward_step_impl(
    c: &ParticleCloud,
    f: Option<&Functional>,
    tau: f64,
    cfg: &TrainConfig,
    rng: &mut RandomSource,
) -> Result<BackwardStep> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParam(format!("step size must be positive, got {tau}")));
    }
    cfg.validate()?;
    let d = c.dim();
    let n = c.n();
    let batch = cfg.batch.unwrap_or(n).min(n);
    let f = f.map(|x| Rc::new(x.clone()));

    let mut params = init_mlp(rng, d, &cfg.hidden);
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let mut final_loss = f64::NAN;

    for _ in 0..cfg.iterations {
        let idx = batch_indices(n, batch, rng);
        let x = gather_rows(c.points(), &idx);
        let z = Array2::from_shape_vec((batch, d), rng.standard_normal(batch * d))
            .expect("batch * d draws");

        let mut tape = Tape::new();
        let nodes = register_mlp(&mut tape, &params);
        let loss = build_backward_loss(&mut tape, &nodes, x, z, f.clone(), tau)?;
        final_loss = tape.value(loss).as_scalar();

        let grads = tape.loss_gradient(loss)?;
        let mlp_grads = extract_mlp_grads(&grads, &nodes);
        adam_step(&mut params, &mlp_grads, &mut adam);
    }

    // Final sampling pass with a fresh latent draw over the full cloud.
    let z = sample_latent(rng, n, d);
    let cloud = mlp_forward(&params, c, &z)?;
    Ok(BackwardStep { cloud, params, final_loss })
}

fn build_backward_loss(
    tape: &mut Tape,
    nodes: &crate::neural::MlpNodes,
    x: Array2<f64>,
    z: Array2<f64>,
    f: Option<Rc<Functional>>,
    tau: f64,
) -> Result<crate::neural::NodeId> {
    let batch = x.nrows();
    let input = tape.constant(crate::neural::concat_columns(&x, &z));
    let t_out = mlp_on_tape(tape, nodes, input)?;
    let x_node = tape.constant(x);
    let resid = tape.sub(x_node, t_out)?;
    let sq = tape.squared_norm(resid);
    let transport = tape.scale(sq, 1.0 / (2.0 * tau * batch as f64));
    match f {
        Some(f) => {
            let energy = tape.functional_value(f, t_out)?;
            tape.add(transport, energy)
        }
        None => Ok(transport),
    }
}

fn build_forward_loss(
    tape: &mut Tape,
    nodes: &crate::neural::MlpNodes,
    x: Array2<f64>,
    z: Array2<f64>,
    form: Rc<functionals::DirectionalForm>,
) -> Result<crate::neural::NodeId> {
    let batch = x.nrows();
    let input = tape.constant(crate::neural::concat_columns(&x, &z));
    let t_out = mlp_on_tape(tape, nodes, input)?;
    let d_hat = tape.directional(form, t_out)?;
    let sq = tape.squared_norm(t_out);
    let m_hat = tape.scale(sq, 1.0 / batch as f64);
    let root = tape.sqrt(m_hat);
    Ok(tape.quotient(d_hat, root))
}

/// Loss value and parameter gradients for one evaluation, used by gradient
/// checks of the training objectives.
#[derive(Debug)]
pub struct LossEval {
    pub value: f64,
    pub grads: crate::neural::MlpGrads,
}

/// Evaluates the backward-scheme objective
/// `1/(2 tau N) sum ||x_i - T_theta(x_i, z_i)||^2 + F({T_theta(x_i, z_i)})`
/// and its exact parameter gradients at fixed `(x, z)`.
pub fn backward_loss_eval(
    params: &MlpParams,
    x: &ParticleCloud,
    z: &ParticleCloud,
    f: &Functional,
    tau: f64,
) -> Result<LossEval> {
    let mut tape = Tape::new();
    let nodes = register_mlp(&mut tape, params);
    let loss = build_backward_loss(
        &mut tape,
        &nodes,
        x.points().clone(),
        z.points().clone(),
        Some(Rc::new(f.clone())),
        tau,
    )?;
    let value = tape.value(loss).as_scalar();
    let grads = tape.loss_gradient(loss)?;
    Ok(LossEval { value, grads: extract_mlp_grads(&grads, &nodes) })
}

/// Evaluates the forward-scheme objective `D(T) / sqrt(mean ||T_i||^2)` and
/// its exact parameter gradients at fixed `(x, z)`.
pub fn forward_loss_eval(
    params: &MlpParams,
    x: &ParticleCloud,
    z: &ParticleCloud,
    f: &Functional,
) -> Result<LossEval> {
    let form = Rc::new(functionals::directional_form(f, x)?);
    let mut tape = Tape::new();
    let nodes = register_mlp(&mut tape, params);
    let loss =
        build_forward_loss(&mut tape, &nodes, x.points().clone(), z.points().clone(), form)?;
    let value = tape.value(loss).as_scalar();
    let grads = tape.loss_gradient(loss)?;
    Ok(LossEval { value, grads: extract_mlp_grads(&grads, &nodes) })
}

// ---------------------------------------------------------------------------
// Neural forward (steepest descent) step
// ---------------------------------------------------------------------------

/// Outcome of one neural forward step.
#[derive(Debug)]
pub struct ForwardStep {
    pub cloud: ParticleCloud,
    /// The clamp `max(-D/M, 0)` applied to the learned direction.
    pub scale: f64,
    pub params: MlpParams,
    pub final_loss: f64,
}

/// One steepest-descent Euler step: trains `T_theta` to minimize
/// `D(T) / sqrt(M(T))` where `D` is the exact directional derivative of the
/// energy at the current cloud and `M` is the mean squared speed, then
/// updates `x_i + tau * max(-D/M, 0) * T_theta(x_i, z_i)` on a fresh draw.
///
/// Fails with a "steepest descent undefined" error when `r < 1` and the
/// cloud has coincident particles (the derivative is `-inf` there).
pub fn forward_step(
    c: &ParticleCloud,
    f: &Functional,
    tau: f64,
    cfg: &TrainConfig,
    rng: &mut RandomSource,
) -> Result<ForwardStep> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParam(format!("step size must be positive, got {tau}")));
    }
    cfg.validate()?;
    let d = c.dim();
    let n = c.n();
    let batch = cfg.batch.unwrap_or(n).min(n);
    let full_form = Rc::new(functionals::directional_form(f, c)?);

    let mut params = init_mlp(rng, d, &cfg.hidden);
    let mut adam = AdamState::new(&params, cfg.learning_rate);
    let mut final_loss = f64::NAN;

    for _ in 0..cfg.iterations {
        let (x, form) = if batch == n {
            (c.points().clone(), full_form.clone())
        } else {
            // The batch is treated as a self-contained empirical measure.
            let idx = batch_indices(n, batch, rng);
            let x = gather_rows(c.points(), &idx);
            let sub = ParticleCloud::new(x.clone())?;
            (x, Rc::new(functionals::directional_form(f, &sub)?))
        };
        let z = Array2::from_shape_vec((batch, d), rng.standard_normal(batch * d))
            .expect("batch * d draws");

        let mut tape = Tape::new();
        let nodes = register_mlp(&mut tape, &params);
        let loss = build_forward_loss(&mut tape, &nodes, x, z, form)?;
        final_loss = tape.value(loss).as_scalar();

        let grads = tape.loss_gradient(loss)?;
        let mlp_grads = extract_mlp_grads(&grads, &nodes);
        adam_step(&mut params, &mlp_grads, &mut adam);
    }

    // Euler step on a fresh draw, rescaled by the clamped ratio (x)^- = max(-x, 0).
    let z = sample_latent(rng, n, d);
    let t_final = mlp_forward(&params, c, &z)?;
    let d_final = full_form.value(t_final.points());
    let m_final = t_final.points().iter().map(|v| v * v).sum::<f64>() / n as f64;
    let scale = if m_final > 0.0 { (-d_final / m_final).max(0.0) } else { 0.0 };
    assert!(scale >= 0.0, "forward-scheme rescaling must be nonnegative");

    // A clamped-to-zero direction leaves the cloud bit-identically unchanged.
    let cloud = if scale == 0.0 {
        c.clone()
    } else {
        ParticleCloud::new(c.points() + &(t_final.points() * (tau * scale)))?
    };
    Ok(ForwardStep { cloud, scale, params, final_loss })
}

fn batch_indices(n: usize, batch: usize, rng: &mut RandomSource) -> Vec<usize> {
    if batch >= n {
        return (0..n).collect();
    }
    // Partial Fisher-Yates: uniform subset without replacement.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..batch {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    idx.truncate(batch);
    idx
}

fn gather_rows(points: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let d = points.ncols();
    let mut out = Array2::zeros((idx.len(), d));
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(row).assign(&points.row(i));
    }
    out
}

// ---------------------------------------------------------------------------
// Particle flow step
// ---------------------------------------------------------------------------

/// One explicit Euler step of the particle flow `du/dt = -N grad F_N(u)`.
/// Requires pairwise-distinct particles (exact equality is the error case).
pub fn particle_flow_step(c: &ParticleCloud, f: &Functional, tau: f64) -> Result<ParticleCloud> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParam(format!("step size must be positive, got {tau}")));
    }
    if let Some((i, j)) = find_coincident_pair(c) {
        return Err(Error::CoincidentParticles { i, j });
    }
    let g = functionals::particle_gradient(f, c);
    let scale = tau * c.n() as f64;
    ParticleCloud::new(c.points() - &(g.grad * scale))
}

fn find_coincident_pair(c: &ParticleCloud) -> Option<(usize, usize)> {
    // Lexicographic sort brings exact duplicates next to each other.
    let n = c.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (c.row(a), c.row(b));
        for k in 0..c.dim() {
            match ra[k].partial_cmp(&rb[k]).expect("finite") {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
    for w in order.windows(2) {
        if c.row(w[0]) == c.row(w[1]) {
            return Some((w[0].min(w[1]), w[0].max(w[1])));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Flow runner
// ---------------------------------------------------------------------------

/// Which time-stepping scheme drives a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Backward,
    Forward,
    Particle,
}

/// Runs a flow from `t = 0` until `t >= horizon` with the scheduled step
/// sizes, snapshotting after every step. Trace times are the exact partial
/// sums of the step sizes taken. Step errors carry the failing time.
#[allow(clippy::too_many_arguments)]
pub fn run_flow(
    scheme: Scheme,
    f: &Functional,
    init: &Initializer,
    n: usize,
    schedule: &StepSchedule,
    horizon: f64,
    cfg: &TrainConfig,
    rng: &mut RandomSource,
) -> Result<FlowTrace> {
    if !(horizon > 0.0) {
        return Err(Error::InvalidParam(format!("horizon must be positive, got {horizon}")));
    }
    let cloud = make_initial(init, n, rng)?;
    let mut snapshots = vec![(0.0, cloud)];
    let mut diagnostics = Vec::new();
    let mut t = 0.0;
    let mut step_index = 0usize;

    while t < horizon - 1e-9 {
        let tau = schedule.tau_at(t);
        let current = &snapshots.last().expect("non-empty").1;
        let mut step_cfg = cfg.clone();
        step_cfg.iterations = cfg.iterations_for_step(step_index);

        let (next, scale, final_loss) = match scheme {
            Scheme::Backward => {
                let out = backward_step(current, f, tau, &step_cfg, rng)
                    .map_err(|e| e.at_time(t))?;
                (out.cloud, None, Some(out.final_loss))
            }
            Scheme::Forward => {
                let out = forward_step(current, f, tau, &step_cfg, rng)
                    .map_err(|e| e.at_time(t))?;
                (out.cloud, Some(out.scale), Some(out.final_loss))
            }
            Scheme::Particle => {
                let out = particle_flow_step(current, f, tau).map_err(|e| e.at_time(t))?;
                (out, None, None)
            }
        };

        t += tau;
        let value = functionals::functional_value(f, &next).map_err(|e| e.at_time(t))?;
        diagnostics.push(StepDiagnostics { t, functional_value: value, scale, final_loss });
        snapshots.push((t, next));
        step_index += 1;
    }

    Ok(FlowTrace { snapshots, diagnostics })
}
