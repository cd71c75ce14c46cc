//! Experiment configuration, target ingestion, metric computation against the
//! analytic ground truth, and CSV/SVG emission.
//!
//! Configs are single JSON files with a strict schema (unknown keys are
//! rejected). Relative target paths resolve against the config file's
//! directory; the output directory resolves against the working directory.
//! All file writes are atomic (write temp, then rename) and floats are
//! formatted with 17 significant digits, so reruns with the same seed produce
//! byte-identical files.

use crate::analytic::{eta_star_params, limit_curve_scale, sample_eta_star};
use crate::error::{Error, Result};
use crate::functionals::{mmd_squared, Barycenter, Functional, Norm, RieszKernel};
use crate::measures::{
    format_f64, read_points_csv, w2_radial, write_atomic, ParticleCloud, RandomSource,
};
use crate::schemes::{
    make_initial, run_flow, FlowTrace, Initializer, Scheme, StepSchedule, TrainConfig,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

/// Where a fixed target measure comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// Point-cloud CSV (header `x0,...,x{d-1}`).
    File { path: PathBuf },
    /// Binary PGM (P5) sampled with inverted intensity.
    Image { path: PathBuf, n: usize },
    /// Explicit list of points.
    Points { points: Vec<Vec<f64>> },
    /// Equispaced points on a circle.
    Circle { center: Vec<f64>, radius: f64, n: usize },
    /// Equispaced points on the boundary of an axis-aligned square of
    /// half-width `radius`.
    SquareBoundary { center: Vec<f64>, radius: f64, n: usize },
}

/// Which energy the flow descends.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    Interaction {
        r: f64,
        #[serde(default)]
        norm: Option<Norm>,
    },
    Mmd {
        r: f64,
        #[serde(default)]
        norm: Option<Norm>,
        target: TargetSpec,
    },
    Branching,
    Barycenter {
        r: f64,
        components: Vec<BarycenterComponentSpec>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarycenterComponentSpec {
    pub weight: f64,
    pub target: TargetSpec,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub time: f64,
    pub tau: f64,
}

/// Metrics computed per snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// MMD (negative distance kernel) and radial W2 against samples of the
    /// analytic interaction-energy flow started at a Dirac.
    Analytic,
}

fn default_true() -> bool {
    true
}

/// A complete experiment: scheme, energy, initial configuration, schedule,
/// training hyperparameters, seed, and output settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub functional: FunctionalSpec,
    pub d: usize,
    pub particles: usize,
    pub initializer: Initializer,
    pub schedule: Vec<ScheduleEntry>,
    pub horizon: f64,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_true")]
    pub deterministic: bool,
    #[serde(default)]
    pub metrics: Vec<MetricKind>,
    #[serde(default)]
    pub emit_svg: bool,
}

impl ExperimentConfig {
    /// Parses a config file, resolving relative target paths against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_target = |t: &mut TargetSpec| match t {
            TargetSpec::File { path } | TargetSpec::Image { path, .. } => fix(path),
            _ => {}
        };
        match &mut self.functional {
            FunctionalSpec::Mmd { target, .. } => fix_target(target),
            FunctionalSpec::Barycenter { components, .. } => {
                for c in components {
                    fix_target(&mut c.target);
                }
            }
            _ => {}
        }
    }

    /// All validation problems at once, before any compute.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.particles == 0 {
            problems.push("particles must be >= 1".to_string());
        }
        if self.d == 0 {
            problems.push("d must be >= 1".to_string());
        }
        if !(self.horizon > 0.0) {
            problems.push(format!("horizon must be positive, got {}", self.horizon));
        }
        if let Err(e) = self.initializer.validate() {
            problems.push(e.to_string());
        } else if self.initializer.dim() != self.d {
            problems.push(format!(
                "initializer dimension {} does not match d = {}",
                self.initializer.dim(),
                self.d
            ));
        }
        if self.schedule.is_empty() {
            problems.push("schedule must have at least one entry".into());
        } else if let Err(e) =
            StepSchedule::new(self.schedule.iter().map(|e| (e.time, e.tau)).collect())
        {
            problems.push(e.to_string());
        }
        match self.scheme {
            Scheme::Backward | Scheme::Forward => match &self.train {
                None => problems.push("neural schemes require a train block".into()),
                Some(t) => {
                    if let Err(e) = t.validate() {
                        problems.push(e.to_string());
                    }
                    if t.batch.is_some_and(|b| b > self.particles) {
                        problems.push(format!(
                            "batch {} exceeds particle count {}",
                            t.batch.unwrap(),
                            self.particles
                        ));
                    }
                }
            },
            Scheme::Particle => {}
        }
        self.validate_functional(&mut problems);
        if !self.metrics.is_empty()
            && !matches!(self.functional, FunctionalSpec::Interaction { .. })
        {
            problems.push("analytic metrics require the interaction functional".into());
        }
        if self.emit_svg && self.d != 2 {
            problems.push("svg emission requires d = 2".into());
        }
        if matches!(self.scheme, Scheme::Particle)
            && matches!(
                self.initializer,
                Initializer::Dirac { .. } | Initializer::DiracSum { .. }
            )
        {
            problems.push(
                "particle flow requires pairwise-distinct particles; a Dirac initializer \
                 makes them coincide (use uniform_square with a tiny radius instead)"
                    .into(),
            );
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems.join("\n")))
        }
    }

    fn validate_functional(&self, problems: &mut Vec<String>) {
        let check_r = |r: f64, problems: &mut Vec<String>| {
            if let Err(e) = RieszKernel::new(r) {
                problems.push(e.to_string());
            }
        };
        let check_target = |t: &TargetSpec, d: usize, problems: &mut Vec<String>| match t {
            TargetSpec::File { path } | TargetSpec::Image { path, .. } => {
                if !path.exists() {
                    problems.push(format!("target file does not exist: {}", path.display()));
                }
                if matches!(t, TargetSpec::Image { .. }) && d != 2 {
                    problems.push("image targets are two-dimensional".into());
                }
                if let TargetSpec::Image { n, .. } = t {
                    if *n == 0 {
                        problems.push("image target sample count must be >= 1".into());
                    }
                }
            }
            TargetSpec::Points { points } => {
                if points.is_empty() {
                    problems.push("target point list is empty".into());
                } else if points.iter().any(|p| p.len() != d) {
                    problems.push(format!("target points must have dimension {d}"));
                }
            }
            TargetSpec::Circle { center, radius, n }
            | TargetSpec::SquareBoundary { center, radius, n } => {
                if d != 2 || center.len() != 2 {
                    problems.push("circle/square targets are two-dimensional".into());
                }
                if !(*radius > 0.0) {
                    problems.push("target radius must be positive".into());
                }
                if *n == 0 {
                    problems.push("target sample count must be >= 1".into());
                }
            }
        };
        match &self.functional {
            FunctionalSpec::Interaction { r, .. } => check_r(*r, problems),
            FunctionalSpec::Mmd { r, target, .. } => {
                check_r(*r, problems);
                check_target(target, self.d, problems);
            }
            FunctionalSpec::Branching => {
                if self.d != 2 {
                    problems.push("the branching energy is two-dimensional".into());
                }
            }
            FunctionalSpec::Barycenter { r, components } => {
                check_r(*r, problems);
                if components.is_empty() {
                    problems.push("barycenter needs at least one component".into());
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-12 {
                    problems.push(format!("barycenter weights must sum to 1, got {total}"));
                }
                for c in components {
                    if c.weight < 0.0 {
                        problems.push("barycenter weights must be nonnegative".into());
                    }
                    check_target(&c.target, self.d, problems);
                }
            }
        }
    }

    /// Materializes the functional, sampling file/image targets as needed.
    pub fn build_functional(&self, rng: &mut RandomSource) -> Result<Functional> {
        match &self.functional {
            FunctionalSpec::Interaction { r, norm } => Ok(Functional::Interaction {
                kernel: RieszKernel::with_norm(*r, norm.unwrap_or(Norm::L2))?,
            }),
            FunctionalSpec::Mmd { r, norm, target } => Ok(Functional::MmdToTarget {
                kernel: RieszKernel::with_norm(*r, norm.unwrap_or(Norm::L2))?,
                target: resolve_target(target, rng)?,
            }),
            FunctionalSpec::Branching => Ok(Functional::Branching),
            FunctionalSpec::Barycenter { r, components } => {
                let kernel = RieszKernel::new(*r)?;
                let mut comps = Vec::with_capacity(components.len());
                for c in components {
                    comps.push((c.weight, resolve_target(&c.target, rng)?));
                }
                Ok(Functional::Barycenter(Barycenter::new(kernel, comps)?))
            }
        }
    }
}

/// Samples or loads a target measure.
pub fn resolve_target(spec: &TargetSpec, rng: &mut RandomSource) -> Result<ParticleCloud> {
    match spec {
        TargetSpec::File { path } => read_points_csv(path),
        TargetSpec::Image { path, n } => sample_image_target(path, *n, rng),
        TargetSpec::Points { points } => ParticleCloud::from_rows(points),
        TargetSpec::Circle { center, radius, n } => {
            let init = Initializer::Circle { center: center.clone(), radius: *radius };
            make_initial(&init, *n, rng)
        }
        TargetSpec::SquareBoundary { center, radius, n } => {
            Ok(square_boundary(center, *radius, *n))
        }
    }
}

/// `n` equispaced points on the boundary of the square
/// `[cx - r, cx + r] x [cy - r, cy + r]`, traversed counterclockwise.
pub fn square_boundary(center: &[f64], radius: f64, n: usize) -> ParticleCloud {
    let mut points = Array2::zeros((n, 2));
    let perimeter = 8.0 * radius;
    for i in 0..n {
        let s = perimeter * i as f64 / n as f64;
        let side = (s / (2.0 * radius)) as usize; // 0..3
        let along = s - side as f64 * 2.0 * radius;
        let (x, y) = match side {
            0 => (-radius + along, -radius),
            1 => (radius, -radius + along),
            2 => (radius - along, radius),
            _ => (-radius, radius - along),
        };
        points[[i, 0]] = center[0] + x;
        points[[i, 1]] = center[1] + y;
    }
    ParticleCloud::new(points).expect("finite boundary points")
}

// ---------------------------------------------------------------------------
// Running experiments
// ---------------------------------------------------------------------------

/// One row of `metrics.csv`.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub t: f64,
    pub mmd_to_reference: f64,
    pub w2_radial_to_reference: Option<f64>,
}

/// Result of [`run_experiment`]: the in-memory trace plus every file written.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub trace: FlowTrace,
    pub files: Vec<PathBuf>,
}

/// Validates the config, runs the flow, and writes one `step_{k}.csv` per
/// snapshot (columns `t,x0..x{d-1}`), a `metrics.csv` when metrics are
/// requested, and optional SVG scatter plots. Deterministic under a fixed
/// seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let mut rng = RandomSource::new(cfg.seed);
    let mut target_rng = rng.fork();
    let functional = cfg.build_functional(&mut target_rng)?;
    let schedule = StepSchedule::new(cfg.schedule.iter().map(|e| (e.time, e.tau)).collect())?;
    let train = cfg.train.clone().unwrap_or(TrainConfig {
        iterations: 1,
        first_steps: 0,
        first_iterations: 0,
        learning_rate: 1e-3,
        hidden: vec![1],
        batch: None,
        seed: cfg.seed,
    });

    let trace = run_flow(
        cfg.scheme,
        &functional,
        &cfg.initializer,
        cfg.particles,
        &schedule,
        cfg.horizon,
        &train,
        &mut rng,
    )?;

    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut files = Vec::new();
    for (k, (t, cloud)) in trace.snapshots().iter().enumerate() {
        let path = cfg.output_dir.join(format!("step_{k}.csv"));
        write_atomic(&path, &snapshot_to_csv(*t, cloud))?;
        files.push(path);
        if cfg.emit_svg {
            let svg_path = cfg.output_dir.join(format!("step_{k}.svg"));
            emit_svg(cloud, None, &svg_path)?;
            files.push(svg_path);
        }
    }

    if cfg.metrics.contains(&MetricKind::Analytic) {
        let FunctionalSpec::Interaction { r, .. } = &cfg.functional else {
            return Err(Error::Unsupported(
                "analytic metrics require the interaction functional".into(),
            ));
        };
        let rows = compare_to_analytic(trace.snapshots(), cfg.d, *r, reference_seed(cfg.seed))?;
        let path = cfg.output_dir.join("metrics.csv");
        write_atomic(&path, &metrics_to_csv(&rows))?;
        files.push(path);
    }

    Ok(ExperimentOutput { trace, files })
}

/// Seed of the analytic reference sampler, derived from the experiment seed.
pub fn reference_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Per-snapshot distance to the analytic interaction-energy flow: the square
/// root of the MMD (negative distance kernel) and the radial W2 against
/// `gamma(t)`, sampled once from `eta*` with the given seed and rescaled per
/// snapshot by the limit-curve dilation.
pub fn compare_to_analytic(
    snapshots: &[(f64, ParticleCloud)],
    d: usize,
    r: f64,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let params = eta_star_params(d, r)?;
    let last = snapshots
        .last()
        .ok_or_else(|| Error::InvalidParam("trace has no snapshots".into()))?;
    let n = last.1.n();
    if last.1.dim() != d {
        return Err(Error::DimMismatch { left: last.1.dim(), right: d });
    }
    let mut rng = RandomSource::new(seed);
    let base = sample_eta_star(&params, n, &mut rng);
    let kernel = RieszKernel::negative_distance();
    let mut rows = Vec::with_capacity(snapshots.len());
    for (t, cloud) in snapshots {
        let scale = limit_curve_scale(*t, r);
        let reference = ParticleCloud::new(base.points() * scale).expect("finite");
        let d2 = mmd_squared(&kernel, cloud, &reference)?;
        rows.push(MetricRow {
            t: *t,
            mmd_to_reference: d2.max(0.0).sqrt(),
            w2_radial_to_reference: Some(w2_radial(cloud, &reference)?),
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Trace and metric CSV formats
// ---------------------------------------------------------------------------

/// Snapshot CSV: header `t,x0,...,x{d-1}`, one row per particle.
pub fn snapshot_to_csv(t: f64, cloud: &ParticleCloud) -> String {
    let mut out = String::from("t");
    for j in 0..cloud.dim() {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
    let t_str = format_f64(t);
    for i in 0..cloud.n() {
        out.push_str(&t_str);
        for v in cloud.row(i) {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses a snapshot CSV back into its time and cloud.
pub fn snapshot_from_csv(text: &str) -> Result<(f64, ParticleCloud)> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse { offset: 0, message: "empty snapshot file".into() })?;
    let fields: Vec<&str> = header.split(',').collect();
    if fields.first() != Some(&"t") {
        return Err(Error::Parse { offset: 0, message: "snapshot header must start with t".into() });
    }
    let d = fields.len() - 1;
    let mut offset = header.len() + 1;
    let mut t = None;
    let mut rows = Vec::new();
    for line in lines {
        if line.is_empty() {
            offset += 1;
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != d + 1 {
            return Err(Error::Parse {
                offset,
                message: format!("expected {} fields, got {}", d + 1, cells.len()),
            });
        }
        let mut parsed = Vec::with_capacity(d + 1);
        for c in &cells {
            parsed.push(c.parse::<f64>().map_err(|e| Error::Parse {
                offset,
                message: format!("bad number {c:?}: {e}"),
            })?);
        }
        match t {
            None => t = Some(parsed[0]),
            Some(t0) if t0 != parsed[0] => {
                return Err(Error::Parse {
                    offset,
                    message: "inconsistent time column in snapshot".into(),
                })
            }
            _ => {}
        }
        rows.push(parsed[1..].to_vec());
        offset += line.len() + 1;
    }
    let t = t.ok_or_else(|| Error::Parse { offset, message: "snapshot has no rows".into() })?;
    Ok((t, ParticleCloud::from_rows(&rows)?))
}

/// Reads `step_0.csv, step_1.csv, ...` from a directory.
pub fn read_trace_dir(dir: &Path) -> Result<Vec<(f64, ParticleCloud)>> {
    let mut out = Vec::new();
    loop {
        let path = dir.join(format!("step_{}.csv", out.len()));
        if !path.exists() {
            break;
        }
        let text = std::fs::read_to_string(&path)?;
        out.push(snapshot_from_csv(&text)?);
    }
    if out.is_empty() {
        return Err(Error::InvalidParam(format!(
            "no step_0.csv found in {}",
            dir.display()
        )));
    }
    Ok(out)
}

/// Metrics CSV: `t,mmd,w2_radial` (the last cell empty when absent).
pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("t,mmd,w2_radial\n");
    for row in rows {
        out.push_str(&format_f64(row.t));
        out.push(',');
        out.push_str(&format_f64(row.mmd_to_reference));
        out.push(',');
        if let Some(w) = row.w2_radial_to_reference {
            out.push_str(&format_f64(w));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// PGM (P5) image targets
// ---------------------------------------------------------------------------

struct Pgm {
    width: usize,
    height: usize,
    maxval: u32,
    pixels: Vec<u32>,
}

fn parse_pgm(bytes: &[u8]) -> Result<Pgm> {
    let mut pos;
    let err = |pos: usize, msg: &str| Error::Parse { offset: pos, message: msg.to_string() };

    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(err(0, "not a binary PGM (expected magic P5)"));
    }
    pos = 2;

    let next_token = |pos: &mut usize| -> Result<u32> {
        // Skip whitespace and '#' comments.
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(err(start, "expected an integer in PGM header"));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .expect("digits are ascii")
            .parse::<u32>()
            .map_err(|e| err(start, &format!("bad integer: {e}")))
    };

    let width = next_token(&mut pos)? as usize;
    let height = next_token(&mut pos)? as usize;
    let maxval = next_token(&mut pos)?;
    if width == 0 || height == 0 {
        return Err(err(pos, "image dimensions must be positive"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(err(pos, "maxval must be in 1..=65535"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err(pos, "missing whitespace before pixel data"));
    }
    pos += 1;

    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bytes_per;
    if bytes.len() - pos < need {
        return Err(err(
            bytes.len(),
            &format!("truncated payload: need {need} bytes, have {}", bytes.len() - pos),
        ));
    }
    let mut pixels = Vec::with_capacity(width * height);
    for i in 0..width * height {
        let v = if bytes_per == 1 {
            bytes[pos + i] as u32
        } else {
            // Big-endian per the PGM spec.
            ((bytes[pos + 2 * i] as u32) << 8) | bytes[pos + 2 * i + 1] as u32
        };
        pixels.push(v);
    }
    Ok(Pgm { width, height, maxval, pixels })
}

/// Samples `n` points from a grayscale image interpreted as a density with
/// weight `maxval - intensity` per pixel (dark regions are dense). Each
/// accepted pixel gets uniform sub-pixel jitter and is mapped into `[-1,1]^2`
/// preserving the aspect ratio, y-axis pointing up.
pub fn sample_image_target(path: &Path, n: usize, rng: &mut RandomSource) -> Result<ParticleCloud> {
    let bytes = std::fs::read(path)?;
    let pgm = parse_pgm(&bytes)?;
    let weights: Vec<u32> = pgm.pixels.iter().map(|&v| pgm.maxval - v.min(pgm.maxval)).collect();
    if weights.iter().all(|&w| w == 0) {
        return Err(Error::InvalidParam("zero total mass: image is entirely white".into()));
    }
    let (w, h) = (pgm.width as f64, pgm.height as f64);
    let scale = 2.0 / w.max(h);
    let mut points = Array2::zeros((n, 2));
    for i in 0..n {
        // Rejection sampling proportional to the pixel weight.
        let px = loop {
            let candidate = rng.below(pgm.pixels.len());
            if rng.uniform() * f64::from(pgm.maxval) < f64::from(weights[candidate]) {
                break candidate;
            }
        };
        let col = (px % pgm.width) as f64 + rng.uniform();
        let row = (px / pgm.width) as f64 + rng.uniform();
        points[[i, 0]] = (col - w / 2.0) * scale;
        points[[i, 1]] = (h / 2.0 - row) * scale;
    }
    ParticleCloud::new(points)
}

// ---------------------------------------------------------------------------
// SVG emission
// ---------------------------------------------------------------------------

/// Plot window for [`emit_svg`].
#[derive(Debug, Clone, Copy)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

const SVG_SIZE: f64 = 600.0;
const SVG_POINT_RADIUS: f64 = 2.0;

/// Writes a 600x600 SVG scatter plot with one circle per particle. With no
/// explicit bounds the coordinate range is padded by 5%.
pub fn emit_svg(c: &ParticleCloud, bounds: Option<Bounds>, path: &Path) -> Result<()> {
    if c.dim() != 2 {
        return Err(Error::DimMismatch { left: c.dim(), right: 2 });
    }
    let b = bounds.unwrap_or_else(|| auto_bounds(c));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" \
         viewBox=\"0 0 {SVG_SIZE} {SVG_SIZE}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{SVG_SIZE}\" height=\"{SVG_SIZE}\" fill=\"white\"/>");
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let sx = span(b.min[0], b.max[0]);
    let sy = span(b.min[1], b.max[1]);
    for i in 0..c.n() {
        let x = (c.points()[[i, 0]] - b.min[0]) / sx * SVG_SIZE;
        let y = SVG_SIZE - (c.points()[[i, 1]] - b.min[1]) / sy * SVG_SIZE;
        let _ = writeln!(
            svg,
            "<circle cx=\"{x:.3}\" cy=\"{y:.3}\" r=\"{SVG_POINT_RADIUS}\" fill=\"black\"/>"
        );
    }
    svg.push_str("</svg>\n");
    write_atomic(path, &svg)
}

fn auto_bounds(c: &ParticleCloud) -> Bounds {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for i in 0..c.n() {
        for j in 0..2 {
            min[j] = min[j].min(c.points()[[i, j]]);
            max[j] = max[j].max(c.points()[[i, j]]);
        }
    }
    for j in 0..2 {
        let span = max[j] - min[j];
        let pad = if span > 0.0 { 0.05 * span } else { 0.5 };
        min[j] -= pad;
        max[j] += pad;
    }
    Bounds { min, max }
}
