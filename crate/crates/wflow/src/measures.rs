//! Empirical measures, seeded randomness, and the 1D / radial Wasserstein
//! machinery used for evaluation.
//!
//! All measures in this crate are uniform-weight particle clouds
//! `(1/N) sum_i delta_{x_i}`. For one-dimensional clouds of equal size the
//! quadratic Wasserstein distance reduces to a sort (the quantile embedding of
//! `P_2(R)` into `L_2((0,1))`), and for orthogonally invariant measures the
//! radial pushforward `(||.||_2)_# mu` is an isometry, so `w2_radial` is the
//! true `W_2` on that class.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

/// An empirical measure: `n` points in `R^d` with uniform weights `1/n`.
///
/// Immutable after construction; every coordinate is guaranteed finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    points: Array2<f64>,
}

impl ParticleCloud {
    /// Builds a cloud from an `n x d` matrix of coordinates.
    pub fn new(points: Array2<f64>) -> Result<Self> {
        let (n, d) = points.dim();
        if n == 0 {
            return Err(Error::InvalidParam("particle cloud must be non-empty".into()));
        }
        if d == 0 {
            return Err(Error::InvalidParam("particle dimension must be >= 1".into()));
        }
        if let Some(((i, j), v)) = points.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "coordinate ({i},{j}) of particle cloud is {v}"
            )));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from row vectors, rejecting ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParam("particle cloud must be non-empty".into()));
        }
        let d = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} coordinates, expected {d}",
                    row.len()
                )));
            }
        }
        let mut points = Array2::zeros((rows.len(), d));
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                points[[i, j]] = v;
            }
        }
        Self::new(points)
    }

    /// One-dimensional cloud from scalar values.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let points = Array2::from_shape_vec((values.len(), 1), values.to_vec())
            .expect("shape follows from slice length");
        Self::new(points)
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    /// Consumes the cloud, returning the raw coordinate matrix.
    pub fn into_points(self) -> Array2<f64> {
        self.points
    }

    /// Mean of the particle positions.
    pub fn centroid(&self) -> Array1<f64> {
        self.points.mean_axis(ndarray::Axis(0)).expect("n >= 1")
    }
}

/// Seeded, splittable randomness. Identical seeds give identical draw
/// sequences across runs and platforms (ChaCha8 stream plus Box-Muller).
///
/// A source is single-consumer; parallel work must fork independent children.
#[derive(Debug, Clone)]
pub struct RandomSource {
    rng: ChaCha8Rng,
    seed: u64,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Splits off an independently seeded child source. The child's stream is
    /// a deterministic function of the parent's state, so fork order matters.
    pub fn fork(&mut self) -> RandomSource {
        RandomSource::new(self.rng.next_u64())
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    /// Standard normal draws via Box-Muller on the ChaCha stream.
    pub fn standard_normal(&mut self, count: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            // u1 in (0,1]: guard the log.
            let u1 = 1.0 - self.uniform();
            let u2 = self.uniform();
            let radius = (-2.0 * u1.ln()).sqrt();
            let angle = 2.0 * std::f64::consts::PI * u2;
            out.push(radius * angle.cos());
            if out.len() < count {
                out.push(radius * angle.sin());
            }
        }
        out
    }

    /// Access to the raw RNG for distributions from `rand_distr`.
    pub(crate) fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// A quantile function sampled on a grid: strictly increasing probabilities in
/// `(0,1)` with nondecreasing values (membership in the cone `C((0,1))`).
#[derive(Debug, Clone)]
pub struct QuantileCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl QuantileCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(Error::SizeMismatch {
                left: grid.len(),
                right: values.len(),
            });
        }
        if grid.iter().any(|&p| !(0.0 < p && p < 1.0)) {
            return Err(Error::InvalidParam("quantile grid must lie in (0,1)".into()));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParam("quantile grid must be strictly increasing".into()));
        }
        if values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParam("quantile values must be nondecreasing".into()));
        }
        Ok(Self { grid, values })
    }

    /// Midpoint grid `p_i = (i - 1/2)/n`, the discretization matching the
    /// sorted formula of [`w2_1d`] for uniform-weight clouds.
    pub fn midpoint_grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The quantile values as a 1D particle cloud.
    pub fn to_cloud(&self) -> Result<ParticleCloud> {
        ParticleCloud::from_values(&self.values)
    }
}

/// `W_2` between equal-size one-dimensional clouds via sorting:
/// `sqrt((1/n) sum_i (sort(a)_i - sort(b)_i)^2)`.
pub fn w2_1d(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    if a.dim() != 1 || b.dim() != 1 {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.n() != b.n() {
        return Err(Error::SizeMismatch {
            left: a.n(),
            right: b.n(),
        });
    }
    let mut xs: Vec<f64> = a.points().column(0).to_vec();
    let mut ys: Vec<f64> = b.points().column(0).to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite coordinates"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("finite coordinates"));
    let sum: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sum / a.n() as f64).sqrt())
}

/// Pushforward under the Euclidean norm: point `i` of the output is
/// `||x_i||_2`. For orthogonally invariant measures this is an isometric
/// embedding into `P_2(R_{>=0})`.
pub fn radial_project(c: &ParticleCloud) -> ParticleCloud {
    let norms: Vec<f64> = (0..c.n())
        .map(|i| c.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    ParticleCloud::from_values(&norms).expect("norms of finite points are finite")
}

/// `W_2` between the radial projections of two clouds. Exact `W_2` for
/// orthogonally invariant inputs; only a radial metric otherwise.
pub fn w2_radial(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    if a.n() != b.n() {
        return Err(Error::SizeMismatch {
            left: a.n(),
            right: b.n(),
        });
    }
    w2_1d(&radial_project(a), &radial_project(b))
}

/// `n` i.i.d. standard-normal `d`-vectors from the seeded stream
/// (the latent distribution `P_Z = N(0, Id_d)`).
pub fn sample_latent(rng: &mut RandomSource, n: usize, d: usize) -> ParticleCloud {
    assert!(n >= 1 && d >= 1, "sample_latent requires n >= 1, d >= 1");
    let draws = rng.standard_normal(n * d);
    let points = Array2::from_shape_vec((n, d), draws).expect("n*d draws");
    ParticleCloud::new(points).expect("normal draws are finite")
}

// ---------------------------------------------------------------------------
// Point-cloud CSV format: header `x0,...,x{d-1}`, one row per particle.
// ---------------------------------------------------------------------------

/// Formats a float with 17 significant digits, enough to round-trip `f64`
/// bit-exactly through decimal.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes a cloud to the point-cloud CSV format.
pub fn points_to_csv(c: &ParticleCloud) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..c.dim()).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..c.n() {
        let mut first = true;
        for v in c.row(i) {
            if !first {
                out.push(',');
            }
            let _ = write!(out, "{}", format_f64(*v));
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Parses the point-cloud CSV format, rejecting ragged rows.
pub fn points_from_csv(text: &str) -> Result<ParticleCloud> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse { offset: 0, message: "empty file".into() })?;
    let d = header.split(',').count();
    for (j, name) in header.split(',').enumerate() {
        if name.trim() != format!("x{j}") {
            return Err(Error::Parse {
                offset: 0,
                message: format!("bad header field {j}: {name:?}, expected \"x{j}\""),
            });
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut offset = header.len() + 1;
    for line in lines {
        if line.is_empty() {
            offset += 1;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d {
            return Err(Error::Parse {
                offset,
                message: format!("ragged row: {} fields, expected {d}", fields.len()),
            });
        }
        let mut row = Vec::with_capacity(d);
        for f in fields {
            let v: f64 = f.trim().parse().map_err(|e| Error::Parse {
                offset,
                message: format!("bad number {f:?}: {e}"),
            })?;
            row.push(v);
        }
        rows.push(row);
        offset += line.len() + 1;
    }
    ParticleCloud::from_rows(&rows)
}

/// Atomically writes `contents` to `path` (write temp, then rename).
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Writes a cloud to a point-cloud CSV file.
pub fn write_points_csv(c: &ParticleCloud, path: &Path) -> Result<()> {
    write_atomic(path, &points_to_csv(c))
}

/// Reads a cloud from a point-cloud CSV file.
pub fn read_points_csv(path: &Path) -> Result<ParticleCloud> {
    let text = std::fs::read_to_string(path)?;
    points_from_csv(&text)
}
