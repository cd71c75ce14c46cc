//! Command-line driver for Wasserstein flow experiments.
//!
//! Exit codes: 0 on success, 2 on validation/parse errors, 1 on runtime
//! errors.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use wflow::analytic::{eta_star_params, limit_curve_scale, sample_eta_star, scheme_scale_curve};
use wflow::error::Error;
use wflow::functionals::{self, Functional, RieszKernel};
use wflow::harness::{
    compare_to_analytic, metrics_to_csv, read_trace_dir, run_experiment, ExperimentConfig,
};
use wflow::measures::{
    format_f64, points_to_csv, sample_latent, write_atomic, ParticleCloud, RandomSource,
};
use wflow::neural::{init_mlp, MlpParams};
use wflow::schemes::{backward_loss_eval, forward_loss_eval, LossEval};

#[derive(Parser)]
#[command(name = "wflow", about = "Wasserstein flows of Riesz-kernel energies", version)]
struct Cli {
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Force deterministic output (always on; accepted for compatibility).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file.
    Run { config: PathBuf },
    /// Emit the analytic limit and scheme scale curves plus sampled
    /// ground-truth clouds.
    Analytic {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        tau: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Compare a written trace against the analytic interaction-energy flow.
    Compare {
        #[arg(long = "trace-dir")]
        trace_dir: PathBuf,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        r: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gradient-check the two training objectives against central differences.
    Gradcheck,
    /// Quick internal consistency checks.
    Selftest,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation(_)
                | Error::InvalidParam(_)
                | Error::Parse { .. }
                | Error::Json(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn dispatch(cli: Cli) -> wflow::Result<()> {
    match cli.command {
        Command::Run { config } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if cli.deterministic {
                cfg.deterministic = true;
            }
            let out = run_experiment(&cfg)?;
            println!("wrote {} files to {}", out.files.len(), cfg.output_dir.display());
            if let Some(diag) = out.trace.diagnostics().last() {
                println!(
                    "final t = {}, functional value = {}",
                    format_f64(out.trace.final_time()),
                    format_f64(diag.functional_value)
                );
            }
            Ok(())
        }
        Command::Analytic { d, r, tau, steps, out, samples } => {
            std::fs::create_dir_all(&out)?;
            let mut curve = String::from("t,f,f_tau\n");
            let fine = 10;
            for k in 0..=steps * fine {
                let t = tau * k as f64 / fine as f64;
                let f = limit_curve_scale(t, r);
                let f_tau = scheme_scale_curve(r, tau, t)?;
                curve.push_str(&format!(
                    "{},{},{}\n",
                    format_f64(t),
                    format_f64(f),
                    format_f64(f_tau)
                ));
            }
            write_atomic(&out.join("curve.csv"), &curve)?;

            let params = eta_star_params(d, r)?;
            let mut rng = RandomSource::new(cli.seed.unwrap_or(0));
            let base = sample_eta_star(&params, samples, &mut rng);
            for k in 0..=steps {
                let scale = limit_curve_scale(tau * k as f64, r);
                let cloud = ParticleCloud::new(base.points() * scale).expect("finite");
                write_atomic(&out.join(format!("ground_truth_{k}.csv")), &points_to_csv(&cloud))?;
            }
            println!(
                "wrote curve.csv and {} ground-truth clouds to {}",
                steps + 1,
                out.display()
            );
            Ok(())
        }
        Command::Compare { trace_dir, d, r, out } => {
            let snapshots = read_trace_dir(&trace_dir)?;
            let seed = cli.seed.unwrap_or(0);
            let rows = compare_to_analytic(&snapshots, d, r, seed)?;
            write_atomic(&out, &metrics_to_csv(&rows))?;
            let last = rows.last().expect("at least one snapshot");
            println!(
                "wrote {} rows to {}; final mmd = {}",
                rows.len(),
                out.display(),
                format_f64(last.mmd_to_reference)
            );
            Ok(())
        }
        Command::Gradcheck => gradcheck(cli.seed.unwrap_or(1)),
        Command::Selftest => selftest(),
    }
}

/// Central-difference check of both training objectives on a small random
/// network, mirroring the acceptance suite.
fn gradcheck(seed: u64) -> wflow::Result<()> {
    let mut rng = RandomSource::new(seed);
    let d = 2;
    let x = sample_latent(&mut rng, 6, d);
    let z = sample_latent(&mut rng, 6, d);
    let f = Functional::Interaction { kernel: RieszKernel::new(1.0)? };
    let params = init_mlp(&mut rng, d, &[8, 8]);

    let mut worst: f64 = 0.0;
    for name in ["backward", "forward"] {
        let eval = |p: &MlpParams| -> wflow::Result<LossEval> {
            match name {
                "backward" => backward_loss_eval(p, &x, &z, &f, 0.05),
                _ => forward_loss_eval(p, &x, &z, &f),
            }
        };
        let base = eval(&params)?;
        let h = 1e-6;
        let mut max_rel: f64 = 0.0;
        for (li, layer) in params.layers().iter().enumerate() {
            let cols = layer.w.ncols();
            for idx in 0..layer.w.len() {
                let perturbed = |delta: f64| -> wflow::Result<f64> {
                    let mut layers = params.layers().to_vec();
                    layers[li].w[[idx / cols, idx % cols]] += delta;
                    Ok(eval(&MlpParams::new(layers)?)?.value)
                };
                let fd = (perturbed(h)? - perturbed(-h)?) / (2.0 * h);
                let analytic = base.grads.layers[li].0.as_slice().expect("layout")[idx];
                let denom = fd.abs().max(analytic.abs()).max(1e-6);
                max_rel = max_rel.max((fd - analytic).abs() / denom);
            }
        }
        println!("gradcheck {name}: max relative error {max_rel:.3e}");
        worst = worst.max(max_rel);
    }
    if worst > 1e-5 {
        return Err(Error::NoConvergence(format!(
            "gradient check failed: max relative error {worst:.3e} > 1e-5"
        )));
    }
    println!("gradcheck ok");
    Ok(())
}

fn selftest() -> wflow::Result<()> {
    use wflow::analytic::{jko_time_sequence, EtaStar};

    let check = |name: &str, ok: bool| -> wflow::Result<()> {
        if ok {
            println!("ok {name}");
            Ok(())
        } else {
            Err(Error::NoConvergence(format!("selftest failed: {name}")))
        }
    };

    let k = RieszKernel::new(1.0)?;
    let x = ParticleCloud::from_rows(&[vec![0.0, 0.0]])?;
    let y = ParticleCloud::from_rows(&[vec![3.0, 4.0]])?;
    check(
        "negative distance kernel",
        (functionals::kernel_eval(&k, x.row(0), y.row(0)) + 5.0).abs() < 1e-12,
    )?;

    let seq = jko_time_sequence(1.0, 0.05, 100)?;
    check("jko times linear at r=1", (seq.value(100) - 5.0).abs() < 1e-10)?;

    let ball = eta_star_params(2, 1.0)?;
    let sphere = eta_star_params(3, 1.0)?;
    let ball_ok = matches!(ball, EtaStar::BallDensity { s, .. }
        if (s - std::f64::consts::PI / 4.0).abs() < 1e-12);
    let sphere_ok =
        matches!(sphere, EtaStar::SphereUniform { c, .. } if (c - 2.0 / 3.0).abs() < 1e-10);
    check("eta* constants", ball_ok && sphere_ok)?;

    let mut rng = RandomSource::new(42);
    let mut fast_ok = true;
    for _ in 0..16 {
        let a = ParticleCloud::from_values(
            &(0..256).map(|_| rng.uniform_in(-5.0, 5.0)).collect::<Vec<_>>(),
        )?;
        let b = ParticleCloud::from_values(
            &(0..199).map(|_| rng.uniform_in(-4.0, 6.0)).collect::<Vec<_>>(),
        )?;
        let brute = functionals::mmd_squared(&k, &a, &b)?;
        let fast = functionals::mmd_squared_1d_fast(&k, &a, &b)?;
        fast_ok &= (brute - fast).abs() <= 1e-9 * brute.abs().max(1.0);
    }
    check("fast 1D MMD matches brute force", fast_ok)?;

    let a = sample_latent(&mut RandomSource::new(5), 32, 2);
    let b = sample_latent(&mut RandomSource::new(5), 32, 2);
    check("seeded sampling reproduces", a.points() == b.points())?;

    println!("selftest ok");
    Ok(())
}
