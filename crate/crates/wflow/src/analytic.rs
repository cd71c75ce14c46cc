//! Closed-form ground truths for interaction-energy flows started at a Dirac
//! measure, plus the exact 1D MMD flow toward a Dirac target.
//!
//! The proximal measure `eta* = prox_{E_K}(delta_0)` is a density
//! `A_s (s^2 - ||x||^2)^{1 - (r+d)/2}` on the ball `s B^d` when `d + r < 4`
//! and the uniform distribution on the sphere `c S^{d-1}` when `d + r >= 4`.
//! The JKO steps are dilations of `eta*` by `t_{tau,n}^{1/(2-r)}`, where each
//! `t_{tau,n}` is the unique positive zero of
//! `h_tau(t, s) = s^{1/(2-r)} t^{(1-r)/(2-r)} - t + tau` at `s = t_{tau,n-1}`,
//! and the limit curve scales by `((2-r) t)^{1/(2-r)}`.

use crate::error::{Error, Result};
use crate::measures::{ParticleCloud, RandomSource};
use ndarray::Array2;
use rand_distr::Distribution;
use statrs::function::gamma::ln_gamma;

/// The proximal measure of the interaction energy at a Dirac.
#[derive(Debug, Clone, PartialEq)]
pub enum EtaStar {
    /// `d + r < 4`: density `A_s (s^2 - ||x||^2)^exponent` on the ball of
    /// radius `s`, with `exponent = 1 - (r+d)/2`.
    BallDensity { d: usize, r: f64, s: f64, exponent: f64, normalizer: f64 },
    /// `d + r >= 4`: uniform distribution on the sphere of radius `c`.
    SphereUniform { d: usize, r: f64, c: f64 },
}

impl EtaStar {
    /// Radius of the support (`s` for the ball, `c` for the sphere).
    pub fn radius(&self) -> f64 {
        match self {
            EtaStar::BallDensity { s, .. } => *s,
            EtaStar::SphereUniform { c, .. } => *c,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EtaStar::BallDensity { d, .. } => *d,
            EtaStar::SphereUniform { d, .. } => *d,
        }
    }
}

fn check_riesz_range(r: f64) -> Result<()> {
    if !(r > 0.0 && r < 2.0) || !r.is_finite() {
        return Err(Error::InvalidParam(format!("Riesz exponent must be in (0,2), got {r}")));
    }
    Ok(())
}

/// Parameters of `eta* = prox_{E_K}(delta_0)` for dimension `d` and Riesz
/// exponent `r`, evaluated through log-Gamma.
///
/// Ball branch: `s = (Gamma(2 - r/2) Gamma((d+r)/2) r / ((d/2) Gamma(d/2)))^{1/(2-r)}`,
/// `A_s = Gamma(d/2) s^{-(2-r)} / (pi^{d/2} B(d/2, 2 - (r+d)/2))`.
/// Sphere branch: `c = ((r/2) 2F1(-r/2, (2-r-d)/2; d/2; 1))^{1/(2-r)}`, where
/// the hypergeometric value at 1 comes from the Gauss summation identity
/// `Gamma(c) Gamma(c-a-b) / (Gamma(c-a) Gamma(c-b))` (here `c-a-b = d+r-1 > 0`).
pub fn eta_star_params(d: usize, r: f64) -> Result<EtaStar> {
    check_riesz_range(r)?;
    if d == 0 {
        return Err(Error::InvalidParam("dimension must be >= 1".into()));
    }
    let df = d as f64;
    if df + r < 4.0 {
        let ln_s = (ln_gamma(2.0 - r / 2.0) + ln_gamma((df + r) / 2.0) + r.ln()
            - (df / 2.0).ln()
            - ln_gamma(df / 2.0))
            / (2.0 - r);
        let s = ln_s.exp();
        let b_arg = 2.0 - (r + df) / 2.0; // > 0 on this branch
        let ln_beta = ln_gamma(df / 2.0) + ln_gamma(b_arg) - ln_gamma(df / 2.0 + b_arg);
        let ln_a = ln_gamma(df / 2.0) - (2.0 - r) * ln_s - (df / 2.0) * std::f64::consts::PI.ln()
            - ln_beta;
        Ok(EtaStar::BallDensity {
            d,
            r,
            s,
            exponent: 1.0 - (r + df) / 2.0,
            normalizer: ln_a.exp(),
        })
    } else {
        // 2F1(a, b; c; 1) with a = -r/2, b = (2-r-d)/2, c = d/2.
        let ln_f = ln_gamma(df / 2.0) + ln_gamma(df + r - 1.0)
            - ln_gamma((df + r) / 2.0)
            - ln_gamma(df + r / 2.0 - 1.0);
        let c = (((r / 2.0).ln() + ln_f) / (2.0 - r)).exp();
        Ok(EtaStar::SphereUniform { d, r, c })
    }
}

/// Draws `n` samples of `eta*`. Sphere branch: normalized Gaussian directions
/// scaled by `c`. Ball branch: uniform direction and squared relative radius
/// `u = (rho/s)^2 ~ Beta(d/2, 2 - (d+r)/2)`, the change of variables of the
/// radial law `rho^{d-1} (s^2 - rho^2)^{1-(r+d)/2}`.
pub fn sample_eta_star(p: &EtaStar, n: usize, rng: &mut RandomSource) -> ParticleCloud {
    assert!(n >= 1, "sample_eta_star requires n >= 1");
    let d = p.dim();
    let mut points = Array2::zeros((n, d));
    match p {
        EtaStar::SphereUniform { c, .. } => {
            for i in 0..n {
                let dir = unit_direction(rng, d);
                for j in 0..d {
                    points[[i, j]] = c * dir[j];
                }
            }
        }
        EtaStar::BallDensity { d: dd, r, s, .. } => {
            let df = *dd as f64;
            let beta = rand_distr::Beta::new(df / 2.0, 2.0 - (df + r) / 2.0)
                .expect("valid Beta parameters on the ball branch");
            for i in 0..n {
                let dir = unit_direction(rng, d);
                let u: f64 = beta.sample(rng.rng());
                let rho = s * u.sqrt();
                for j in 0..d {
                    points[[i, j]] = rho * dir[j];
                }
            }
        }
    }
    ParticleCloud::new(points).expect("finite samples")
}

fn unit_direction(rng: &mut RandomSource, d: usize) -> Vec<f64> {
    loop {
        let g = rng.standard_normal(d);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return g.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// `h_tau(t, s) = s^{1/(2-r)} t^{(1-r)/(2-r)} - t + tau`, whose unique
/// positive zero in `t` advances the JKO time sequence from `s`.
pub fn h_tau(r: f64, tau: f64, t: f64, s: f64) -> f64 {
    let a = if s == 0.0 { 0.0 } else { s.powf(1.0 / (2.0 - r)) };
    let p = (1.0 - r) / (2.0 - r);
    let first = if a == 0.0 { 0.0 } else { a * t.powf(p) };
    first - t + tau
}

/// The JKO time sequence `t_{tau,0} = 0, t_{tau,1}, ..., t_{tau,n}` for the
/// interaction-energy flow started at a Dirac.
#[derive(Debug, Clone)]
pub struct JkoTimeSequence {
    pub r: f64,
    pub tau: f64,
    values: Vec<f64>,
}

impl JkoTimeSequence {
    /// `t_{tau,k}`; index 0 is 0.
    pub fn value(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

const ROOT_TOL: f64 = 1e-12;
const MAX_NEWTON_ITERS: usize = 200;

/// Computes `t_{tau,1}, ..., t_{tau,n_max}` by safeguarded Newton iteration
/// (bisection fallback on a sign-change bracket). Each root satisfies
/// `|h_tau(t, t_prev)| <= 1e-12`; in particular `t_{tau,1} = tau` exactly and
/// `t_{tau,n} = n tau` for `r = 1`.
pub fn jko_time_sequence(r: f64, tau: f64, n_max: usize) -> Result<JkoTimeSequence> {
    check_riesz_range(r)?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParam(format!("step size must be positive, got {tau}")));
    }
    let mut values = Vec::with_capacity(n_max + 1);
    values.push(0.0);
    if n_max >= 1 {
        // h_tau(t, 0) = -t + tau.
        values.push(tau);
    }
    for _ in 2..=n_max {
        let prev = *values.last().expect("non-empty");
        let root = solve_next_time(r, tau, prev)?;
        values.push(root);
    }
    Ok(JkoTimeSequence { r, tau, values })
}

/// Unique positive zero of `t -> h_tau(t, prev)` beyond `prev`.
fn solve_next_time(r: f64, tau: f64, prev: f64) -> Result<f64> {
    let g = |t: f64| h_tau(r, tau, t, prev);
    // h(prev) = tau > 0; widen the upper end until the sign changes.
    let mut lo = prev;
    let mut width = (2.0 * (2.0 - r) + 1.0) * tau;
    let mut hi = prev + width;
    let mut safety = 0;
    while g(hi) > 0.0 {
        width *= 2.0;
        hi = prev + width;
        safety += 1;
        if safety > 200 {
            return Err(Error::NoConvergence(format!(
                "no sign change bracketing the JKO root after {prev} (r={r}, tau={tau})"
            )));
        }
    }
    let a = prev.powf(1.0 / (2.0 - r));
    let p = (1.0 - r) / (2.0 - r);
    let gprime = |t: f64| a * p * t.powf(p - 1.0) - 1.0;

    let mut t = 0.5 * (lo + hi);
    for _ in 0..MAX_NEWTON_ITERS {
        let val = g(t);
        if val.abs() <= ROOT_TOL {
            return Ok(t);
        }
        // Maintain the bracket.
        if val > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let deriv = gprime(t);
        let newton = t - val / deriv;
        t = if deriv < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::NoConvergence(format!(
        "Newton/bisection did not reach |h| <= {ROOT_TOL} (r={r}, tau={tau}, prev={prev})"
    )))
}

/// Dilation factor of the limit curve: `gamma(t) = (((2-r) t)^{1/(2-r)} Id)_# eta*`.
pub fn limit_curve_scale(t: f64, r: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    ((2.0 - r) * t).powf(1.0 / (2.0 - r))
}

/// Dilation factor of the JKO curve: the step function
/// `f_tau|_{((n-1)tau, n tau]} = t_{tau,n}^{1/(2-r)}`, with `f_tau(0) = 0`.
pub fn scheme_scale_curve(r: f64, tau: f64, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    let n = ((t / tau) - 1e-12).ceil().max(1.0) as usize;
    let seq = jko_time_sequence(r, tau, n)?;
    Ok(seq.value(n).powf(1.0 / (2.0 - r)))
}

/// Right-hand side of the logarithmic bound on `|t_{tau,n} - (2-r) tau n|`:
/// `tau |r-1| (1 + (1 + log n) m)` with `m = max(1/(4-2r), 1/2)`.
///
/// For `r >= 1` this is `tau (r-1) (1 + 1/(4-2r) + log(n)/(4-2r))` verbatim.
/// The mirrored `r < 1` case needs the constant `1/2` instead of `1/(4-2r)`:
/// the Taylor-remainder step only has the lower bound `t_{tau,n} > n tau`
/// available there (rather than `(2-r) n tau`), and the smaller constant is
/// numerically violated already at `r = 0.25, tau = 0.05, n = 4`.
pub fn c6_bound(r: f64, tau: f64, n: usize) -> f64 {
    let m = (1.0 / (4.0 - 2.0 * r)).max(0.5);
    tau * (r - 1.0).abs() * (1.0 + (1.0 + (n as f64).ln()) * m)
}

/// Quantile function of the exact 1D MMD flow toward `delta_0` started at
/// `delta_{-1}`: the measure is `delta_{-1}` at `t = 0`, uniform on
/// `[-1, -1+2t]` for `0 < t <= 1/2`, and for `t > 1/2` uniform mass `1/(2t)`
/// on `[-1, 0]` plus an atom of mass `1 - 1/(2t)` at 0.
pub fn line_flow_quantile(t: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParam(format!("quantile level must be in (0,1), got {p}")));
    }
    if t < 0.0 {
        return Err(Error::InvalidParam(format!("time must be >= 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(-1.0);
    }
    if t <= 0.5 {
        return Ok(-1.0 + 2.0 * t * p);
    }
    if p <= 1.0 / (2.0 * t) {
        Ok(-1.0 + 2.0 * t * p)
    } else {
        Ok(0.0)
    }
}
