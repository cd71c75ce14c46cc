//! Riesz kernels and the discrete energies the flows descend: values,
//! particle gradients, and exact one-sided directional derivatives.
//!
//! The kernel `K(x,y) = -||x-y||^r` with `r in (0,2)` is not smooth and not
//! lambda-convex, so gradients need a subgradient convention: at coincident
//! particle pairs the a.e.-gradient contribution is defined as 0, and the
//! exact one-sided behavior (the `t^r` term along a ray) lives in
//! [`directional_derivative`], which may legally return `-inf` for `r < 1`.
//!
//! Double sums accumulate per-row partials that are combined in index order,
//! which is bit-identical to a sequential i-major loop regardless of how many
//! threads participate.

use crate::error::{Error, Result};
use crate::measures::ParticleCloud;
use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

/// Norm used inside the Riesz kernel. The 2-norm is the paper's default; the
/// 1-norm variant decouples into per-coordinate interactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L2,
    L1,
}

/// Riesz kernel `K(x,y) = -||x-y||^r`, `0 < r < 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RieszKernel {
    r: f64,
    norm: Norm,
}

impl RieszKernel {
    pub fn new(r: f64) -> Result<Self> {
        Self::with_norm(r, Norm::L2)
    }

    pub fn with_norm(r: f64, norm: Norm) -> Result<Self> {
        if !(r > 0.0 && r < 2.0) || !r.is_finite() {
            return Err(Error::InvalidParam(format!(
                "Riesz exponent must satisfy 0 < r < 2, got {r}"
            )));
        }
        Ok(Self { r, norm })
    }

    /// The negative distance kernel, `r = 1`.
    pub fn negative_distance() -> Self {
        Self { r: 1.0, norm: Norm::L2 }
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn norm(&self) -> Norm {
        self.norm
    }
}

/// MMD barycenter objective `sum_i alpha_i D_K^2(mu, mu_i)` with fixed
/// component measures; weights are nonnegative and sum to 1.
#[derive(Debug, Clone)]
pub struct Barycenter {
    kernel: RieszKernel,
    components: Vec<(f64, ParticleCloud)>,
}

impl Barycenter {
    pub fn new(kernel: RieszKernel, components: Vec<(f64, ParticleCloud)>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParam("barycenter needs at least one component".into()));
        }
        if components.iter().any(|(w, _)| *w < 0.0 || !w.is_finite()) {
            return Err(Error::InvalidParam("barycenter weights must be nonnegative".into()));
        }
        let total: f64 = components.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParam(format!(
                "barycenter weights must sum to 1, got {total}"
            )));
        }
        let d = components[0].1.dim();
        if components.iter().any(|(_, c)| c.dim() != d) {
            return Err(Error::DimMismatch { left: d, right: 0 });
        }
        Ok(Self { kernel, components })
    }

    pub fn kernel(&self) -> &RieszKernel {
        &self.kernel
    }

    pub fn components(&self) -> &[(f64, ParticleCloud)] {
        &self.components
    }
}

/// Tagged union of the discrete energies a flow can descend.
#[derive(Debug, Clone)]
pub enum Functional {
    /// Self-repulsion `E_K(mu) = (1/2) int int K d mu d mu`.
    Interaction { kernel: RieszKernel },
    /// `F_nu = E_K + V_{K,nu}`: repulsion plus attraction toward a fixed
    /// target, the MMD objective up to an additive constant.
    MmdToTarget { kernel: RieszKernel, target: ParticleCloud },
    /// Two-dimensional branching energy: drift toward and along the x-axis
    /// plus a y-interaction switched on in the right half plane.
    Branching,
    /// MMD barycenter of several fixed measures.
    Barycenter(Barycenter),
}

impl Functional {
    /// Dimension the functional requires, if it pins one.
    pub fn required_dim(&self) -> Option<usize> {
        match self {
            Functional::Interaction { .. } => None,
            Functional::MmdToTarget { target, .. } => Some(target.dim()),
            Functional::Branching => Some(2),
            Functional::Barycenter(b) => Some(b.components[0].1.dim()),
        }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        match self.required_dim() {
            Some(need) if need != d => Err(Error::DimMismatch { left: d, right: need }),
            _ => Ok(()),
        }
    }

    /// The Riesz exponent of the kernel driving this functional
    /// (the branching energy is built from absolute values, i.e. `r = 1`).
    pub fn riesz_exponent(&self) -> f64 {
        match self {
            Functional::Interaction { kernel } => kernel.r,
            Functional::MmdToTarget { kernel, .. } => kernel.r,
            Functional::Branching => 1.0,
            Functional::Barycenter(b) => b.kernel.r,
        }
    }
}

// ---------------------------------------------------------------------------
// Pairwise primitives
// ---------------------------------------------------------------------------

const PAR_THRESHOLD: usize = 128;

#[inline]
fn norm_of_diff(a: &[f64], b: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L2 => {
            let mut s = 0.0;
            for k in 0..a.len() {
                let u = a[k] - b[k];
                s += u * u;
            }
            s.sqrt()
        }
        Norm::L1 => {
            let mut s = 0.0;
            for k in 0..a.len() {
                s += (a[k] - b[k]).abs();
            }
            s
        }
    }
}

#[inline]
fn norm_pow(n: f64, r: f64) -> f64 {
    if r == 1.0 {
        n
    } else {
        n.powf(r)
    }
}

/// Sums `f(i)` over rows, combining per-row partials in index order.
fn ordered_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    if n < PAR_THRESHOLD {
        (0..n).map(f).sum()
    } else {
        let partials: Vec<f64> = (0..n).into_par_iter().map(f).collect();
        partials.iter().sum()
    }
}

/// Fills row `i` of an `n x d` matrix via `f`, rows computed independently.
fn ordered_rows<F>(n: usize, d: usize, f: F) -> Array2<f64>
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    let mut out = Array2::zeros((n, d));
    let flat = out.as_slice_mut().expect("standard layout");
    if n < PAR_THRESHOLD {
        for (i, chunk) in flat.chunks_mut(d).enumerate() {
            f(i, chunk);
        }
    } else {
        flat.par_chunks_mut(d).enumerate().for_each(|(i, chunk)| f(i, chunk));
    }
    out
}

#[inline]
fn row(points: &[f64], d: usize, i: usize) -> &[f64] {
    &points[i * d..(i + 1) * d]
}

/// Adds the gradient of `||u||_norm^r` with respect to `u = a - b`, scaled by
/// `w`, into `acc`, and returns `||u||_norm`. At `u = 0` the (sub)gradient
/// contribution is 0 and the returned norm is 0, which callers use to track
/// non-differentiable configurations.
#[inline]
fn add_norm_pow_grad(acc: &mut [f64], a: &[f64], b: &[f64], norm: Norm, r: f64, w: f64) -> f64 {
    match norm {
        Norm::L2 => {
            let mut s = 0.0;
            for k in 0..a.len() {
                let u = a[k] - b[k];
                s += u * u;
            }
            if s == 0.0 {
                return 0.0;
            }
            let n = s.sqrt();
            // r * n^(r-2) * u
            let scale = if r == 1.0 { w / n } else { w * r * n.powf(r - 2.0) };
            for k in 0..a.len() {
                acc[k] += scale * (a[k] - b[k]);
            }
            n
        }
        Norm::L1 => {
            let mut n = 0.0;
            for k in 0..a.len() {
                n += (a[k] - b[k]).abs();
            }
            if n == 0.0 {
                return 0.0;
            }
            let scale = if r == 1.0 { w } else { w * r * n.powf(r - 1.0) };
            for k in 0..a.len() {
                let u = a[k] - b[k];
                if u != 0.0 {
                    acc[k] += scale * u.signum();
                }
            }
            n
        }
    }
}

// ---------------------------------------------------------------------------
// Energies
// ---------------------------------------------------------------------------

/// `K(x, y) = -||x - y||^r`. Always `<= 0`, with equality iff `x == y`.
pub fn kernel_eval(k: &RieszKernel, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
    assert_eq!(x.len(), y.len(), "kernel_eval: dimension mismatch");
    let xs = x.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| x.to_vec());
    let ys = y.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| y.to_vec());
    -norm_pow(norm_of_diff(&xs, &ys, k.norm), k.r)
}

/// Interaction energy of the empirical measure:
/// `(1/(2N^2)) sum_{i,j} K(x_i, x_j)`. Diagonal terms vanish.
pub fn interaction_energy(k: &RieszKernel, c: &ParticleCloud) -> f64 {
    let n = c.n();
    let d = c.dim();
    let pts = c.points().as_slice().expect("standard layout");
    let (r, norm) = (k.r, k.norm);
    let total = ordered_sum(n, |i| {
        let xi = row(pts, d, i);
        let mut s = 0.0;
        for j in 0..n {
            if j != i {
                s += norm_pow(norm_of_diff(xi, row(pts, d, j), norm), r);
            }
        }
        s
    });
    -total / (2.0 * (n * n) as f64)
}

/// Potential energy `V_{K,nu}(mu) = -(1/(N M)) sum_{i,j} K(x_i, y_j)`,
/// the attraction toward the target. Always `>= 0`.
pub fn potential_energy(k: &RieszKernel, c: &ParticleCloud, target: &ParticleCloud) -> Result<f64> {
    if c.dim() != target.dim() {
        return Err(Error::DimMismatch { left: c.dim(), right: target.dim() });
    }
    let (n, m, d) = (c.n(), target.n(), c.dim());
    let cp = c.points().as_slice().expect("standard layout");
    let tp = target.points().as_slice().expect("standard layout");
    let (r, norm) = (k.r, k.norm);
    let total = ordered_sum(n, |i| {
        let xi = row(cp, d, i);
        let mut s = 0.0;
        for j in 0..m {
            s += norm_pow(norm_of_diff(xi, row(tp, d, j), norm), r);
        }
        s
    });
    Ok(total / ((n * m) as f64))
}

/// Squared maximum mean discrepancy `D_K^2(a, b) = E_K(a - b)`, expanded as
/// `E(a) + E(b) - (1/(NM)) sum K(a_i, b_j)`. Symmetric, zero for identical
/// clouds, and nonnegative up to rounding (conditional positive definiteness).
pub fn mmd_squared(k: &RieszKernel, a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { left: a.dim(), right: b.dim() });
    }
    Ok(interaction_energy(k, a) + interaction_energy(k, b) + potential_energy(k, a, b)?)
}

/// `O(N log N)` evaluation of [`mmd_squared`] for the negative distance
/// kernel on the line, via sorting and prefix sums.
pub fn mmd_squared_1d_fast(k: &RieszKernel, a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    if k.r != 1.0 || k.norm != Norm::L2 {
        return Err(Error::Unsupported(format!(
            "fast 1D MMD requires the negative distance kernel (r = 1), got r = {}",
            k.r
        )));
    }
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::DimMismatch { left: a.dim(), right: b.dim() });
    }
    let mut xs: Vec<f64> = a.points().column(0).to_vec();
    let mut ys: Vec<f64> = b.points().column(0).to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("finite"));
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    Ok(-sorted_self_abs_sum(&xs) / (2.0 * n * n) - sorted_self_abs_sum(&ys) / (2.0 * m * m)
        + sorted_cross_abs_sum(&xs, &ys) / (n * m))
}

/// `sum_{i,j} |v_i - v_j|` for sorted `v`.
fn sorted_self_abs_sum(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mut s = 0.0;
    for (idx, &x) in v.iter().enumerate() {
        s += (2.0 * idx as f64 - n + 1.0) * x;
    }
    2.0 * s
}

/// `sum_{i,j} |x_i - y_j|` for sorted `x`, `y`, by merging.
fn sorted_cross_abs_sum(xs: &[f64], ys: &[f64]) -> f64 {
    let mut prefix = Vec::with_capacity(xs.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &x in xs {
        acc += x;
        prefix.push(acc);
    }
    let n = xs.len();
    let total = prefix[n];
    let mut s = 0.0;
    let mut m = 0usize; // number of x's <= current y
    for &y in ys {
        while m < n && xs[m] <= y {
            m += 1;
        }
        s += m as f64 * y - prefix[m] + (total - prefix[m]) - (n - m) as f64 * y;
    }
    s
}

/// Branching energy on `R^2` (first coordinate `x`, second `y`):
/// `(1/N) sum_i [1_{x_i<0} |y_i| - x_i]
///  - (1/(2N^2)) sum_{i,j} 1_{x_i>=0} 1_{x_j>=0} |y_i - y_j|`.
fn branching_value(c: &ParticleCloud) -> f64 {
    let n = c.n();
    let pts = c.points().as_slice().expect("standard layout");
    let single = ordered_sum(n, |i| {
        let (x, y) = (pts[2 * i], pts[2 * i + 1]);
        (if x < 0.0 { y.abs() } else { 0.0 }) - x
    });
    let pair = ordered_sum(n, |i| {
        let (xi, yi) = (pts[2 * i], pts[2 * i + 1]);
        if xi < 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for j in 0..n {
            if pts[2 * j] >= 0.0 {
                s += (yi - pts[2 * j + 1]).abs();
            }
        }
        s
    });
    single / n as f64 - pair / (2.0 * (n * n) as f64)
}

/// Value of a functional on a particle cloud.
pub fn functional_value(f: &Functional, c: &ParticleCloud) -> Result<f64> {
    f.check_dim(c.dim())?;
    match f {
        Functional::Interaction { kernel } => Ok(interaction_energy(kernel, c)),
        Functional::MmdToTarget { kernel, target } => {
            Ok(interaction_energy(kernel, c) + potential_energy(kernel, c, target)?)
        }
        Functional::Branching => Ok(branching_value(c)),
        Functional::Barycenter(b) => {
            let mut total = 0.0;
            for (w, comp) in &b.components {
                total += w * mmd_squared(&b.kernel, c, comp)?;
            }
            Ok(total)
        }
    }
}

// ---------------------------------------------------------------------------
// Particle gradient
// ---------------------------------------------------------------------------

/// Euclidean gradient of the restricted functional
/// `F_N(x_1,..,x_N) = F((1/N) sum delta_{x_i})` together with a flag marking
/// configurations where the a.e. gradient is not an honest derivative
/// (coincident Riesz pairs with `r < 1`).
#[derive(Debug, Clone)]
pub struct ParticleGradient {
    pub grad: Array2<f64>,
    /// True when a coincident pair with `r < 1` contributed the 0 subgradient.
    pub non_differentiable: bool,
}

/// Gradient of `F_N` with respect to particle positions. Pairwise Riesz terms
/// between coincident points contribute 0 (the symmetric subgradient choice),
/// keeping the result finite for every configuration.
pub fn particle_gradient(f: &Functional, c: &ParticleCloud) -> ParticleGradient {
    let (_, grad, non_differentiable) =
        value_and_grad(f, c).expect("functional/cloud dimension mismatch");
    ParticleGradient { grad, non_differentiable }
}

/// Energy and particle gradient in one pairwise pass (pair norms are shared).
pub(crate) fn value_and_grad(f: &Functional, c: &ParticleCloud) -> Result<(f64, Array2<f64>, bool)> {
    f.check_dim(c.dim())?;
    match f {
        Functional::Interaction { kernel } => {
            let (v, g, flag) = interaction_value_grad(kernel, c);
            Ok((v, g, flag && kernel.r < 1.0))
        }
        Functional::MmdToTarget { kernel, target } => {
            let (vi, gi, fi) = interaction_value_grad(kernel, c);
            let (vv, gv, fv) = potential_value_grad(kernel, c, target, 1.0);
            Ok((vi + vv, gi + gv, (fi || fv) && kernel.r < 1.0))
        }
        Functional::Branching => {
            let v = branching_value(c);
            Ok((v, branching_grad(c), false))
        }
        Functional::Barycenter(b) => {
            // sum_i alpha_i D^2(c, mu_i) = E(c) + sum_i alpha_i V(c, mu_i)
            // + sum_i alpha_i E(mu_i), using sum_i alpha_i = 1.
            let (mut v, mut g, fi) = interaction_value_grad(&b.kernel, c);
            let mut any = fi;
            for (w, comp) in &b.components {
                let (vv, gv, fv) = potential_value_grad(&b.kernel, c, comp, *w);
                v += vv + w * interaction_energy(&b.kernel, comp);
                g += &gv;
                any = any || fv;
            }
            Ok((v, g, any && b.kernel.r < 1.0))
        }
    }
}

/// Value and gradient of the interaction energy in one pass; the flag
/// reports whether any off-diagonal coincident pair was met. Row `i` of the
/// internal buffer carries `d` gradient entries plus the row's norm sum.
fn interaction_value_grad(k: &RieszKernel, c: &ParticleCloud) -> (f64, Array2<f64>, bool) {
    let n = c.n();
    let d = c.dim();
    let pts = c.points().as_slice().expect("standard layout");
    let (r, norm) = (k.r, k.norm);
    let w = -1.0 / ((n * n) as f64);
    let coincident = std::sync::atomic::AtomicBool::new(false);
    let ext = ordered_rows(n, d + 1, |i, acc| {
        let (gacc, vacc) = acc.split_at_mut(d);
        let xi = row(pts, d, i);
        let mut vi = 0.0;
        for j in 0..n {
            if j != i {
                let nrm = add_norm_pow_grad(gacc, xi, row(pts, d, j), norm, r, w);
                if nrm == 0.0 {
                    coincident.store(true, std::sync::atomic::Ordering::Relaxed);
                } else {
                    vi += norm_pow(nrm, r);
                }
            }
        }
        vacc[0] = vi;
    });
    let value = -ext.column(d).sum() / (2.0 * (n * n) as f64);
    let grad = ext.slice(ndarray::s![.., ..d]).to_owned();
    (value, grad, coincident.into_inner())
}

/// Value and gradient of `scale * V_{K,nu}` in one pass; the flag reports
/// particle/target coincidences.
fn potential_value_grad(
    k: &RieszKernel,
    c: &ParticleCloud,
    target: &ParticleCloud,
    scale: f64,
) -> (f64, Array2<f64>, bool) {
    let (n, m, d) = (c.n(), target.n(), c.dim());
    let cp = c.points().as_slice().expect("standard layout");
    let tp = target.points().as_slice().expect("standard layout");
    let (r, norm) = (k.r, k.norm);
    let w = scale / ((n * m) as f64);
    let coincident = std::sync::atomic::AtomicBool::new(false);
    let ext = ordered_rows(n, d + 1, |i, acc| {
        let (gacc, vacc) = acc.split_at_mut(d);
        let xi = row(cp, d, i);
        let mut vi = 0.0;
        for j in 0..m {
            let nrm = add_norm_pow_grad(gacc, xi, row(tp, d, j), norm, r, w);
            if nrm == 0.0 {
                coincident.store(true, std::sync::atomic::Ordering::Relaxed);
            } else {
                vi += norm_pow(nrm, r);
            }
        }
        vacc[0] = vi;
    });
    let value = scale * ext.column(d).sum() / ((n * m) as f64);
    let grad = ext.slice(ndarray::s![.., ..d]).to_owned();
    (value, grad, coincident.into_inner())
}

fn branching_grad(c: &ParticleCloud) -> Array2<f64> {
    let n = c.n();
    let pts = c.points().as_slice().expect("standard layout");
    let nf = n as f64;
    ordered_rows(n, 2, |i, acc| {
        let (xi, yi) = (pts[2 * i], pts[2 * i + 1]);
        acc[0] = -1.0 / nf;
        if xi < 0.0 {
            acc[1] = yi.signum() / nf * if yi == 0.0 { 0.0 } else { 1.0 };
        } else {
            let mut s = 0.0;
            for j in 0..n {
                if j != i && pts[2 * j] >= 0.0 {
                    let u = yi - pts[2 * j + 1];
                    if u != 0.0 {
                        s += u.signum();
                    }
                }
            }
            acc[1] = -s / (nf * nf);
        }
    })
}

// ---------------------------------------------------------------------------
// Exact one-sided directional derivative
// ---------------------------------------------------------------------------

/// Accumulator for the one-sided expansion
/// `F(c + t dir) - F(c) = jump + frac * t^r + smooth * t + o(t)` as `t -> 0+`.
#[derive(Debug, Default, Clone, Copy)]
struct OneSided {
    smooth: f64,
    /// Coefficient of `t^r` for `r < 1` (coincident Riesz pairs).
    frac: f64,
    /// Coefficient of `t^0` (indicator jumps in the branching energy).
    jump: f64,
}

impl OneSided {
    fn finish(self, r: f64) -> f64 {
        if self.jump != 0.0 {
            return f64::INFINITY * self.jump.signum();
        }
        if r < 1.0 && self.frac != 0.0 {
            return f64::INFINITY * self.frac.signum();
        }
        self.smooth
    }
}

/// One-sided derivative of `t -> ||u + t w||_norm^r` at `t = 0+`, split into
/// the smooth (`t`) and fractional (`t^r`, only when `u = 0` and `r < 1`)
/// coefficients. For `u = 0` and `r = 1` the kink is linear and lands in the
/// smooth slot; for `u = 0` and `r > 1` the derivative is 0.
fn pair_one_sided(u: &[f64], w: &[f64], norm: Norm, r: f64) -> (f64, f64) {
    match norm {
        Norm::L2 => {
            let mut su = 0.0;
            let mut dot = 0.0;
            let mut sw = 0.0;
            for k in 0..u.len() {
                su += u[k] * u[k];
                dot += u[k] * w[k];
                sw += w[k] * w[k];
            }
            if su == 0.0 {
                let nw = sw.sqrt();
                if r == 1.0 {
                    (nw, 0.0)
                } else if r > 1.0 {
                    (0.0, 0.0)
                } else {
                    (0.0, norm_pow(nw, r))
                }
            } else {
                let n = su.sqrt();
                let deriv = if r == 1.0 { dot / n } else { r * n.powf(r - 2.0) * dot };
                (deriv, 0.0)
            }
        }
        Norm::L1 => {
            let mut n = 0.0;
            for k in 0..u.len() {
                n += u[k].abs();
            }
            if n == 0.0 {
                let nw: f64 = w.iter().map(|v| v.abs()).sum();
                if r == 1.0 {
                    (nw, 0.0)
                } else if r > 1.0 {
                    (0.0, 0.0)
                } else {
                    (0.0, norm_pow(nw, r))
                }
            } else {
                // d/dt sum_k |u_k + t w_k| at 0+: sign(u_k) w_k, or |w_k| at
                // components sitting exactly on their kink.
                let mut s = 0.0;
                for k in 0..u.len() {
                    s += if u[k] != 0.0 { u[k].signum() * w[k] } else { w[k].abs() };
                }
                let deriv = if r == 1.0 { s } else { r * n.powf(r - 1.0) * s };
                (deriv, 0.0)
            }
        }
    }
}

/// Exact right-sided directional derivative
/// `lim_{t->0+} (F(c + t dir) - F(c)) / t`.
///
/// Finite for `r >= 1`. For `r < 1`, coincident particle pairs moving apart
/// produce `-inf` (no steepest descent direction exists there); the signed
/// infinity is a legal return value, not an error.
pub fn directional_derivative(f: &Functional, c: &ParticleCloud, dir: &Array2<f64>) -> f64 {
    f.check_dim(c.dim()).expect("functional/cloud dimension mismatch");
    assert_eq!(dir.dim(), c.points().dim(), "direction shape must match the cloud");
    let n = c.n();
    let d = c.dim();
    let pts = c.points().as_slice().expect("standard layout");
    let dirs = dir.as_slice().expect("standard layout");

    let mut acc = OneSided::default();
    match f {
        Functional::Interaction { kernel } => {
            accumulate_interaction(&mut acc, pts, dirs, n, d, kernel);
        }
        Functional::MmdToTarget { kernel, target } => {
            accumulate_interaction(&mut acc, pts, dirs, n, d, kernel);
            accumulate_potential(&mut acc, pts, dirs, n, d, kernel, target, 1.0);
        }
        Functional::Branching => {
            accumulate_branching(&mut acc, pts, dirs, n);
        }
        Functional::Barycenter(b) => {
            accumulate_interaction(&mut acc, pts, dirs, n, d, &b.kernel);
            for (w, comp) in &b.components {
                accumulate_potential(&mut acc, pts, dirs, n, d, &b.kernel, comp, *w);
            }
        }
    }
    acc.finish(f.riesz_exponent())
}

fn accumulate_interaction(
    acc: &mut OneSided,
    pts: &[f64],
    dirs: &[f64],
    n: usize,
    d: usize,
    k: &RieszKernel,
) {
    let w = -1.0 / (2.0 * (n * n) as f64);
    let mut u = vec![0.0; d];
    let mut dw = vec![0.0; d];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for t in 0..d {
                u[t] = pts[i * d + t] - pts[j * d + t];
                dw[t] = dirs[i * d + t] - dirs[j * d + t];
            }
            let (smooth, frac) = pair_one_sided(&u, &dw, k.norm, k.r);
            acc.smooth += w * smooth;
            acc.frac += w * frac;
        }
    }
}

fn accumulate_potential(
    acc: &mut OneSided,
    pts: &[f64],
    dirs: &[f64],
    n: usize,
    d: usize,
    k: &RieszKernel,
    target: &ParticleCloud,
    scale: f64,
) {
    let m = target.n();
    let tp = target.points().as_slice().expect("standard layout");
    let w = scale / ((n * m) as f64);
    let mut u = vec![0.0; d];
    for i in 0..n {
        let wi = &dirs[i * d..(i + 1) * d];
        for j in 0..m {
            for t in 0..d {
                u[t] = pts[i * d + t] - tp[j * d + t];
            }
            let (smooth, frac) = pair_one_sided(&u, wi, k.norm, k.r);
            acc.smooth += w * smooth;
            acc.frac += w * frac;
        }
    }
}

fn accumulate_branching(acc: &mut OneSided, pts: &[f64], dirs: &[f64], n: usize) {
    let nf = n as f64;
    // Activity of the half-plane indicators for t -> 0+ along the direction.
    let neg_now = |i: usize| pts[2 * i] < 0.0;
    let neg_plus = |i: usize| pts[2 * i] < 0.0 || (pts[2 * i] == 0.0 && dirs[2 * i] < 0.0);
    let pos_now = |i: usize| pts[2 * i] >= 0.0;
    let pos_plus = |i: usize| pts[2 * i] > 0.0 || (pts[2 * i] == 0.0 && dirs[2 * i] >= 0.0);

    for i in 0..n {
        let (yi, wy) = (pts[2 * i + 1], dirs[2 * i + 1]);
        // -x drift.
        acc.smooth -= dirs[2 * i] / nf;
        // 1_{x<0} |y| with possible indicator flip at x = 0.
        match (neg_now(i), neg_plus(i)) {
            (true, _) => {
                acc.smooth += if yi != 0.0 { yi.signum() * wy } else { wy.abs() } / nf;
            }
            (false, true) => {
                if yi != 0.0 {
                    acc.jump += yi.abs() / nf;
                } else {
                    acc.smooth += wy.abs() / nf;
                }
            }
            (false, false) => {}
        }
        // Pairwise -|y_i - y_j| on the right half plane.
        for j in 0..n {
            if i == j {
                continue;
            }
            let (yj, wyj) = (pts[2 * j + 1], dirs[2 * j + 1]);
            let w = -1.0 / (2.0 * nf * nf);
            match (pos_now(i) && pos_now(j), pos_plus(i) && pos_plus(j)) {
                (true, true) => {
                    let u = yi - yj;
                    let dwy = wy - wyj;
                    acc.smooth += w * if u != 0.0 { u.signum() * dwy } else { dwy.abs() };
                }
                (true, false) => acc.jump -= w * (yi - yj).abs(),
                (false, true) => acc.jump += w * (yi - yj).abs(),
                (false, false) => {}
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Support for the forward-scheme loss: D-hat as an explicit function of the
// direction matrix T, split into a linear part and exact r=1 kink atoms.
// ---------------------------------------------------------------------------

/// Non-smooth `r = 1` contributions to the directional derivative that stay
/// direction-dependent (kinks at the base configuration). Groups of mutually
/// coincident particles form cliques so a Dirac start evaluates with
/// row-parallel pairwise loops instead of one atom per pair.
#[derive(Debug, Clone)]
pub(crate) enum KinkAtom {
    /// `w * sum_{i != j in members} ||T_i - T_j||` over ordered pairs.
    Clique { members: Vec<u32>, w: f64, norm: Norm },
    /// `w * |T_i[1] - T_j[1]|` (branching y-interaction at coincident y).
    PairAbsY { i: u32, j: u32, w: f64 },
    /// `w * ||T_i||` (particle exactly on a target atom, r = 1).
    SingleL2 { i: u32, w: f64 },
    /// `w * ||T_i||_1`.
    SingleL1 { i: u32, w: f64 },
    /// `w * |T_i[1]|` (branching first term at y = 0 in the left half plane).
    SingleAbsY { i: u32, w: f64 },
}

/// The directional derivative of `F_N` at `c` as an explicit function of the
/// direction matrix: `D(T) = <linear, T> + sum of kink atoms`.
///
/// Only valid when the derivative is finite for every direction, i.e. the
/// functional has `r >= 1` at its coincidences (checked by the caller).
#[derive(Debug, Clone)]
pub(crate) struct DirectionalForm {
    pub linear: Array2<f64>,
    pub atoms: Vec<KinkAtom>,
}

impl DirectionalForm {
    pub fn value(&self, t: &Array2<f64>) -> f64 {
        let mut v: f64 = self
            .linear
            .iter()
            .zip(t.iter())
            .map(|(a, b)| a * b)
            .sum();
        let ts = t.as_slice().expect("standard layout");
        let d = t.ncols();
        for atom in &self.atoms {
            v += atom.value(ts, d);
        }
        v
    }

    /// Adds `scale * dD/dT` into `grad`.
    pub fn add_grad(&self, t: &Array2<f64>, scale: f64, grad: &mut Array2<f64>) {
        grad.scaled_add(scale, &self.linear);
        let ts = t.as_slice().expect("standard layout");
        let d = t.ncols();
        let gs = grad.as_slice_mut().expect("standard layout");
        for atom in &self.atoms {
            atom.add_grad(ts, d, scale, gs);
        }
    }
}

impl KinkAtom {
    fn value(&self, t: &[f64], d: usize) -> f64 {
        match self {
            KinkAtom::Clique { members, w, norm } => {
                let total = ordered_sum(members.len(), |a| {
                    let ti = row(t, d, members[a] as usize);
                    let mut s = 0.0;
                    for (b, &j) in members.iter().enumerate() {
                        if b != a {
                            s += norm_of_diff(ti, row(t, d, j as usize), *norm);
                        }
                    }
                    s
                });
                w * total
            }
            &KinkAtom::PairAbsY { i, j, w } => {
                w * (t[i as usize * d + 1] - t[j as usize * d + 1]).abs()
            }
            &KinkAtom::SingleL2 { i, w } => {
                let ti = row(t, d, i as usize);
                w * ti.iter().map(|v| v * v).sum::<f64>().sqrt()
            }
            &KinkAtom::SingleL1 { i, w } => {
                w * row(t, d, i as usize).iter().map(|v| v.abs()).sum::<f64>()
            }
            &KinkAtom::SingleAbsY { i, w } => w * t[i as usize * d + 1].abs(),
        }
    }

    /// Subgradient: 0 exactly at the atom's own kink.
    fn add_grad(&self, t: &[f64], d: usize, scale: f64, grad: &mut [f64]) {
        match self {
            KinkAtom::Clique { members, w, norm } => {
                // d/dT_i of the ordered pairwise sum: each unordered pair
                // appears twice, and rows only touch their own gradient.
                let (r, norm) = (1.0, *norm);
                let rows = ordered_rows(members.len(), d, |a, acc| {
                    let ti = row(t, d, members[a] as usize);
                    for (b, &j) in members.iter().enumerate() {
                        if b != a {
                            add_norm_pow_grad(acc, ti, row(t, d, j as usize), norm, r, 2.0);
                        }
                    }
                });
                let rs = rows.as_slice().expect("standard layout");
                for (a, &i) in members.iter().enumerate() {
                    for k in 0..d {
                        grad[i as usize * d + k] += scale * w * rs[a * d + k];
                    }
                }
            }
            &KinkAtom::PairAbsY { i, j, w } => {
                let (i, j) = (i as usize, j as usize);
                let u = t[i * d + 1] - t[j * d + 1];
                if u != 0.0 {
                    let c = scale * w * u.signum();
                    grad[i * d + 1] += c;
                    grad[j * d + 1] -= c;
                }
            }
            &KinkAtom::SingleL2 { i, w } => {
                let i = i as usize;
                let s: f64 = (0..d).map(|k| t[i * d + k] * t[i * d + k]).sum();
                if s > 0.0 {
                    let c = scale * w / s.sqrt();
                    for k in 0..d {
                        grad[i * d + k] += c * t[i * d + k];
                    }
                }
            }
            &KinkAtom::SingleL1 { i, w } => {
                let i = i as usize;
                for k in 0..d {
                    if t[i * d + k] != 0.0 {
                        grad[i * d + k] += scale * w * t[i * d + k].signum();
                    }
                }
            }
            &KinkAtom::SingleAbsY { i, w } => {
                let i = i as usize;
                if t[i * d + 1] != 0.0 {
                    grad[i * d + 1] += scale * w * t[i * d + 1].signum();
                }
            }
        }
    }
}

/// Builds the directional form of `F_N` at `c`, or reports that steepest
/// descent is undefined (`r < 1` with a coincident interaction pair).
pub(crate) fn directional_form(f: &Functional, c: &ParticleCloud) -> Result<DirectionalForm> {
    f.check_dim(c.dim())?;
    let n = c.n();
    let d = c.dim();
    let pts = c.points().as_slice().expect("standard layout");
    let mut atoms = Vec::new();
    let r = f.riesz_exponent();

    // Coincident interaction pairs: fatal for r < 1, clique atoms for r = 1,
    // vanishing for r > 1. Identical rows are grouped by sorting.
    let mut scan_interaction = |norm: Norm| -> Result<()> {
        for members in coincident_groups(pts, n, d) {
            if r < 1.0 {
                return Err(Error::SteepestDescentUndefined(format!(
                    "r = {r} < 1 with coincident particles {} and {}: \
                     the directional derivative is -inf",
                    members[0], members[1]
                )));
            }
            if r == 1.0 {
                atoms.push(KinkAtom::Clique {
                    members,
                    w: -1.0 / (2.0 * (n * n) as f64),
                    norm,
                });
            }
        }
        Ok(())
    };

    match f {
        Functional::Interaction { kernel } => scan_interaction(kernel.norm)?,
        Functional::MmdToTarget { kernel, target } => {
            scan_interaction(kernel.norm)?;
            if r == 1.0 {
                let m = target.n();
                let tp = target.points().as_slice().expect("standard layout");
                for i in 0..n {
                    for j in 0..m {
                        if row(pts, d, i) == row(tp, d, j) {
                            let w = 1.0 / ((n * m) as f64);
                            atoms.push(match kernel.norm {
                                Norm::L2 => KinkAtom::SingleL2 { i: i as u32, w },
                                Norm::L1 => KinkAtom::SingleL1 { i: i as u32, w },
                            });
                        }
                    }
                }
            }
        }
        Functional::Branching => {
            for i in 0..n {
                let (xi, yi) = (pts[2 * i], pts[2 * i + 1]);
                if xi < 0.0 && yi == 0.0 {
                    atoms.push(KinkAtom::SingleAbsY { i: i as u32, w: 1.0 / n as f64 });
                }
                if xi >= 0.0 {
                    for j in (i + 1)..n {
                        if pts[2 * j] >= 0.0 && pts[2 * j + 1] == yi {
                            atoms.push(KinkAtom::PairAbsY {
                                i: i as u32,
                                j: j as u32,
                                w: -1.0 / ((n * n) as f64),
                            });
                        }
                    }
                }
            }
        }
        Functional::Barycenter(b) => {
            scan_interaction(b.kernel.norm)?;
            if r == 1.0 {
                for (wc, comp) in &b.components {
                    let m = comp.n();
                    let tp = comp.points().as_slice().expect("standard layout");
                    for i in 0..n {
                        for j in 0..m {
                            if row(pts, d, i) == row(tp, d, j) {
                                let w = wc / ((n * m) as f64);
                                atoms.push(match b.kernel.norm {
                                    Norm::L2 => KinkAtom::SingleL2 { i: i as u32, w },
                                    Norm::L1 => KinkAtom::SingleL1 { i: i as u32, w },
                                });
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(DirectionalForm { linear: particle_gradient(f, c).grad, atoms })
}

/// Groups of particle indices with exactly equal coordinates (size >= 2),
/// each group sorted ascending.
fn coincident_groups(pts: &[f64], n: usize, d: usize) -> Vec<Vec<u32>> {
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (row(pts, d, a as usize), row(pts, d, b as usize));
        for k in 0..d {
            match ra[k].partial_cmp(&rb[k]).expect("finite coordinates") {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        a.cmp(&b)
    });
    let mut groups = Vec::new();
    let mut start = 0;
    for idx in 1..=n {
        let same = idx < n
            && row(pts, d, order[idx] as usize) == row(pts, d, order[start] as usize);
        if !same {
            if idx - start >= 2 {
                let mut g: Vec<u32> = order[start..idx].to_vec();
                g.sort_unstable();
                groups.push(g);
            }
            start = idx;
        }
    }
    groups
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{ParticleCloud, RandomSource};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn cloud_1d(values: &[f64]) -> ParticleCloud {
        ParticleCloud::from_values(values).unwrap()
    }

    fn interaction(r: f64) -> Functional {
        Functional::Interaction { kernel: RieszKernel::new(r).unwrap() }
    }

    #[test]
    fn kernel_values() {
        let k = RieszKernel::new(1.0).unwrap();
        assert_abs_diff_eq!(
            kernel_eval(&k, array![0.0, 0.0].view(), array![3.0, 4.0].view()),
            -5.0,
            epsilon = 1e-15
        );
        let k = RieszKernel::new(0.5).unwrap();
        assert_abs_diff_eq!(
            kernel_eval(&k, array![0.0].view(), array![4.0].view()),
            -2.0,
            epsilon = 1e-15
        );
        let k = RieszKernel::new(1.7).unwrap();
        assert_eq!(kernel_eval(&k, array![2.0, 2.0].view(), array![2.0, 2.0].view()), 0.0);
    }

    #[test]
    fn kernel_rejects_bad_exponent() {
        assert!(RieszKernel::new(0.0).is_err());
        assert!(RieszKernel::new(2.0).is_err());
        assert!(RieszKernel::new(-1.0).is_err());
        assert!(RieszKernel::new(f64::NAN).is_err());
    }

    #[test]
    fn interaction_energy_values() {
        let k = RieszKernel::new(1.0).unwrap();
        assert_eq!(interaction_energy(&k, &cloud_1d(&[3.0])), 0.0);
        // (1/8) * (-1 - 1)
        assert_abs_diff_eq!(interaction_energy(&k, &cloud_1d(&[0.0, 1.0])), -0.25, epsilon = 1e-15);
        // direct double sum over {0,1,2}
        assert_abs_diff_eq!(
            interaction_energy(&k, &cloud_1d(&[0.0, 1.0, 2.0])),
            -4.0 / 9.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn potential_energy_values() {
        let k = RieszKernel::new(1.0).unwrap();
        let zero = cloud_1d(&[0.0]);
        assert_eq!(potential_energy(&k, &zero, &zero).unwrap(), 0.0);
        assert_abs_diff_eq!(
            potential_energy(&k, &zero, &cloud_1d(&[1.0])).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            potential_energy(&k, &cloud_1d(&[0.0, 2.0]), &cloud_1d(&[1.0])).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let c2 = ParticleCloud::new(array![[0.0, 0.0]]).unwrap();
        assert!(potential_energy(&k, &zero, &c2).is_err());
    }

    #[test]
    fn mmd_values() {
        let k = RieszKernel::new(1.0).unwrap();
        let a = cloud_1d(&[0.4, -1.2, 3.0]);
        assert_abs_diff_eq!(mmd_squared(&k, &a, &a).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            mmd_squared(&k, &cloud_1d(&[0.0]), &cloud_1d(&[1.0])).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            mmd_squared(&k, &cloud_1d(&[0.0, 2.0]), &cloud_1d(&[1.0])).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn fast_mmd_matches_brute_force() {
        let k = RieszKernel::new(1.0).unwrap();
        assert_abs_diff_eq!(
            mmd_squared_1d_fast(&k, &cloud_1d(&[0.0]), &cloud_1d(&[1.0])).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let mut rng = RandomSource::new(11);
        let a = cloud_1d(&(0..512).map(|_| rng.uniform_in(-5.0, 5.0)).collect::<Vec<_>>());
        let b = cloud_1d(&(0..317).map(|_| rng.uniform_in(-3.0, 7.0)).collect::<Vec<_>>());
        assert_abs_diff_eq!(mmd_squared_1d_fast(&k, &a, &a).unwrap(), 0.0, epsilon = 1e-12);
        let brute = mmd_squared(&k, &a, &b).unwrap();
        let fast = mmd_squared_1d_fast(&k, &a, &b).unwrap();
        assert!((brute - fast).abs() <= 1e-9 * brute.abs().max(1.0));
        // Guards: wrong exponent, wrong dimension.
        let k05 = RieszKernel::new(0.5).unwrap();
        assert!(mmd_squared_1d_fast(&k05, &a, &b).is_err());
        let c2 = ParticleCloud::new(array![[0.0, 0.0]]).unwrap();
        assert!(mmd_squared_1d_fast(&k, &c2, &c2).is_err());
    }

    #[test]
    fn functional_values() {
        let f = interaction(1.0);
        assert_eq!(functional_value(&f, &cloud_1d(&[7.0])).unwrap(), 0.0);

        let c = ParticleCloud::new(array![[0.5, -0.5], [1.0, 2.0]]).unwrap();
        let bary = Functional::Barycenter(
            Barycenter::new(RieszKernel::new(1.0).unwrap(), vec![(1.0, c.clone())]).unwrap(),
        );
        assert_abs_diff_eq!(functional_value(&bary, &c).unwrap(), 0.0, epsilon = 1e-12);

        // Branching on a single point left of the axis: 0.5 - (-1) = 1.5.
        let p = ParticleCloud::new(array![[-1.0, 0.5]]).unwrap();
        assert_abs_diff_eq!(functional_value(&Functional::Branching, &p).unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn barycenter_validates_weights() {
        let k = RieszKernel::new(1.0).unwrap();
        let c = cloud_1d(&[0.0]);
        assert!(Barycenter::new(k, vec![(0.5, c.clone()), (0.6, c.clone())]).is_err());
        assert!(Barycenter::new(k, vec![(-0.5, c.clone()), (1.5, c.clone())]).is_err());
        assert!(Barycenter::new(k, vec![]).is_err());
        assert!(Barycenter::new(k, vec![(0.5, c.clone()), (0.5, c)]).is_ok());
    }

    #[test]
    fn gradient_two_point_interaction() {
        let f = interaction(1.0);
        let c = ParticleCloud::new(array![[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let g = particle_gradient(&f, &c);
        assert!(!g.non_differentiable);
        assert_abs_diff_eq!(g.grad[[0, 0]], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(g.grad[[0, 1]], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g.grad[[1, 0]], -0.25, epsilon = 1e-14);
    }

    #[test]
    fn gradient_single_particle_is_zero() {
        let f = interaction(1.3);
        let c = ParticleCloud::new(array![[0.0, 0.0, 0.0]]).unwrap();
        let g = particle_gradient(&f, &c);
        assert_eq!(g.grad, Array2::<f64>::zeros((1, 3)));
    }

    #[test]
    fn gradient_pulls_toward_target() {
        let f = Functional::MmdToTarget {
            kernel: RieszKernel::new(1.0).unwrap(),
            target: cloud_1d(&[1.0]),
        };
        let g = particle_gradient(&f, &cloud_1d(&[0.0]));
        assert_abs_diff_eq!(g.grad[[0, 0]], -1.0, epsilon = 1e-14);
    }

    #[test]
    fn coincident_r_below_one_raises_flag() {
        let f = interaction(0.5);
        let c = cloud_1d(&[1.0, 1.0]);
        let g = particle_gradient(&f, &c);
        assert!(g.non_differentiable);
        assert_eq!(g.grad, Array2::<f64>::zeros((2, 1)));
        // r = 1 coincidence is a plain subgradient, no flag.
        let g1 = particle_gradient(&interaction(1.0), &c);
        assert!(!g1.non_differentiable);
    }

    /// Central finite differences of `functional_value`, the gradient oracle.
    fn fd_gradient(f: &Functional, c: &ParticleCloud, h: f64) -> Array2<f64> {
        let mut g = Array2::zeros(c.points().dim());
        for i in 0..c.n() {
            for j in 0..c.dim() {
                let mut plus = c.points().clone();
                plus[[i, j]] += h;
                let mut minus = c.points().clone();
                minus[[i, j]] -= h;
                let fp = functional_value(f, &ParticleCloud::new(plus).unwrap()).unwrap();
                let fm = functional_value(f, &ParticleCloud::new(minus).unwrap()).unwrap();
                g[[i, j]] = (fp - fm) / (2.0 * h);
            }
        }
        g
    }

    fn spread_cloud(rng: &mut RandomSource, n: usize, d: usize) -> ParticleCloud {
        // Random points with pairwise distances >= 1e-2.
        loop {
            let pts = Array2::from_shape_fn((n, d), |_| rng.uniform_in(-2.0, 2.0));
            let c = ParticleCloud::new(pts).unwrap();
            let ok = (0..n).all(|i| {
                ((i + 1)..n).all(|j| {
                    let di: f64 = (0..d)
                        .map(|k| (c.points()[[i, k]] - c.points()[[j, k]]).powi(2))
                        .sum();
                    di.sqrt() >= 1e-2
                })
            });
            if ok {
                return c;
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = RandomSource::new(5);
        let target = spread_cloud(&mut rng, 4, 2);
        let cases: Vec<Functional> = vec![
            interaction(1.0),
            interaction(0.5),
            interaction(1.5),
            Functional::Interaction {
                kernel: RieszKernel::with_norm(1.0, Norm::L1).unwrap(),
            },
            Functional::MmdToTarget { kernel: RieszKernel::new(1.0).unwrap(), target: target.clone() },
            Functional::Branching,
            Functional::Barycenter(
                Barycenter::new(
                    RieszKernel::new(1.0).unwrap(),
                    vec![(0.25, target.clone()), (0.75, spread_cloud(&mut rng, 3, 2))],
                )
                .unwrap(),
            ),
        ];
        for f in &cases {
            let c = spread_cloud(&mut rng, 5, 2);
            let g = particle_gradient(f, &c).grad;
            let fd = fd_gradient(f, &c, 1e-5);
            let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
            for (a, b) in g.iter().zip(fd.iter()) {
                assert!(
                    (a - b).abs() <= 1e-5 * scale,
                    "{f:?}: grad {a} vs fd {b} (scale {scale})"
                );
            }
        }
    }

    #[test]
    fn directional_coincident_pair_r1() {
        // Two coincident particles moving apart: E(t) = -t/2.
        let f = interaction(1.0);
        let c = cloud_1d(&[0.0, 0.0]);
        let dir = array![[1.0], [-1.0]];
        assert_abs_diff_eq!(directional_derivative(&f, &c, &dir), -0.5, epsilon = 1e-14);
        // For r = 1.5 the t^r term has zero one-sided slope.
        assert_eq!(directional_derivative(&interaction(1.5), &c, &dir), 0.0);
        // For r < 1 the descent is unbounded.
        assert_eq!(directional_derivative(&interaction(0.5), &c, &dir), f64::NEG_INFINITY);
    }

    #[test]
    fn directional_distinct_pair() {
        let f = interaction(1.0);
        let c = cloud_1d(&[0.0, 2.0]);
        let dir = array![[1.0], [0.0]];
        assert_abs_diff_eq!(directional_derivative(&f, &c, &dir), 0.25, epsilon = 1e-14);
    }

    /// One-sided difference oracle at t in {1e-4, 1e-5}, Richardson-style
    /// check that both agree with the claimed derivative.
    fn one_sided_ok(f: &Functional, c: &ParticleCloud, dir: &Array2<f64>, claimed: f64) -> bool {
        for &t in &[1e-4, 1e-5] {
            let moved = ParticleCloud::new(c.points() + &(dir * t)).unwrap();
            let fd = (functional_value(f, &moved).unwrap() - functional_value(f, c).unwrap()) / t;
            if (fd - claimed).abs() > 1e-3 {
                return false;
            }
        }
        true
    }

    #[test]
    fn directional_matches_one_sided_differences() {
        let mut rng = RandomSource::new(9);
        let target = spread_cloud(&mut rng, 3, 2);
        let cases: Vec<Functional> = vec![
            interaction(1.0),
            interaction(1.5),
            Functional::MmdToTarget { kernel: RieszKernel::new(1.0).unwrap(), target },
            Functional::Branching,
        ];
        for f in &cases {
            for _ in 0..5 {
                let c = spread_cloud(&mut rng, 4, 2);
                let dir = Array2::from_shape_fn((4, 2), |_| rng.uniform_in(-1.0, 1.0));
                let claimed = directional_derivative(f, &c, &dir);
                assert!(one_sided_ok(f, &c, &dir, claimed), "{f:?}");
            }
        }
        // Including coincident configurations with r = 1.
        let f = interaction(1.0);
        let c = ParticleCloud::new(array![[0.5, 0.5], [0.5, 0.5], [1.5, 0.0]]).unwrap();
        let dir = array![[1.0, 0.0], [0.0, 1.0], [-0.5, 0.25]];
        let claimed = directional_derivative(&f, &c, &dir);
        assert!(claimed.is_finite());
        assert!(one_sided_ok(&f, &c, &dir, claimed));
    }

    #[test]
    fn directional_form_matches_directional_derivative() {
        let mut rng = RandomSource::new(21);
        let c = ParticleCloud::new(array![[0.5, 0.5], [0.5, 0.5], [1.5, 0.0]]).unwrap();
        let f = interaction(1.0);
        let form = directional_form(&f, &c).unwrap();
        for _ in 0..10 {
            let dir = Array2::from_shape_fn((3, 2), |_| rng.uniform_in(-1.0, 1.0));
            assert_abs_diff_eq!(
                form.value(&dir),
                directional_derivative(&f, &c, &dir),
                epsilon = 1e-12
            );
        }
        // r < 1 with coincidences is rejected.
        assert!(matches!(
            directional_form(&interaction(0.5), &c),
            Err(Error::SteepestDescentUndefined(_))
        ));
    }

    #[test]
    fn directional_form_gradient_matches_differences() {
        let mut rng = RandomSource::new(33);
        let c = ParticleCloud::new(array![[0.5, 0.5], [0.5, 0.5], [1.5, 0.0]]).unwrap();
        let f = interaction(1.0);
        let form = directional_form(&f, &c).unwrap();
        let t = Array2::from_shape_fn((3, 2), |_| rng.uniform_in(-1.0, 1.0));
        let mut grad = Array2::zeros((3, 2));
        form.add_grad(&t, 1.0, &mut grad);
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..2 {
                let mut tp = t.clone();
                tp[[i, j]] += h;
                let mut tm = t.clone();
                tm[[i, j]] -= h;
                let fd = (form.value(&tp) - form.value(&tm)) / (2.0 * h);
                assert!((grad[[i, j]] - fd).abs() < 1e-6, "{} vs {}", grad[[i, j]], fd);
            }
        }
    }

    proptest! {
        #[test]
        fn mmd_is_conditionally_positive(
            xs in proptest::collection::vec(-5.0f64..5.0, 2..20),
            ys in proptest::collection::vec(-5.0f64..5.0, 2..20),
            r in 0.25f64..1.9,
        ) {
            let k = RieszKernel::new(r).unwrap();
            let a = cloud_1d(&xs);
            let b = cloud_1d(&ys);
            prop_assert!(mmd_squared(&k, &a, &b).unwrap() >= -1e-9);
        }

        #[test]
        fn mmd_translation_invariance(
            xs in proptest::collection::vec(-5.0f64..5.0, 6),
            ys in proptest::collection::vec(-5.0f64..5.0, 6),
            shift in -3.0f64..3.0,
        ) {
            let k = RieszKernel::new(1.0).unwrap();
            let a = cloud_1d(&xs);
            let b = cloud_1d(&ys);
            let a2 = cloud_1d(&xs.iter().map(|v| v + shift).collect::<Vec<_>>());
            let b2 = cloud_1d(&ys.iter().map(|v| v + shift).collect::<Vec<_>>());
            let lhs = mmd_squared(&k, &a, &b).unwrap();
            let rhs = mmd_squared(&k, &a2, &b2).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn directional_derivative_positively_homogeneous_r1(
            xs in proptest::collection::vec(-2.0f64..2.0, 4),
            ds in proptest::collection::vec(-1.0f64..1.0, 4),
        ) {
            let f = Functional::Interaction { kernel: RieszKernel::new(1.0).unwrap() };
            let c = cloud_1d(&xs);
            let dir = Array2::from_shape_vec((4, 1), ds.clone()).unwrap();
            let doubled = &dir * 2.0;
            let v1 = directional_derivative(&f, &c, &dir);
            let v2 = directional_derivative(&f, &c, &doubled);
            prop_assert!((v2 - 2.0 * v1).abs() <= 1e-12 * v1.abs().max(1.0));
        }

        #[test]
        fn fast_mmd_equals_brute(
            xs in proptest::collection::vec(-10.0f64..10.0, 2..64),
            ys in proptest::collection::vec(-10.0f64..10.0, 2..64),
        ) {
            let k = RieszKernel::new(1.0).unwrap();
            let a = cloud_1d(&xs);
            let b = cloud_1d(&ys);
            let brute = mmd_squared(&k, &a, &b).unwrap();
            let fast = mmd_squared_1d_fast(&k, &a, &b).unwrap();
            prop_assert!((brute - fast).abs() <= 1e-9 * brute.abs().max(1.0));
        }
    }
}
