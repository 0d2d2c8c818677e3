//! Command-line front end: `foliage <subcommand> --config <path> [--out <dir>] [--seed <n>]`.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::approximation::{remainder_study, Expansion, RemainderStudy};
use crate::config::{load_config, RunConfig, VERSION};
use crate::dynamics::{estimate_lf, integrate};
use crate::error::Result;
use crate::foliation::{lyapunov_perron, select_beta, sweep_csv, FiberQuery, FiberSweepRow, GapReport};
use crate::noise::{sample_stationary, TimeGrid};
use crate::spectral::{spectrum_csv, SemigroupBoundReport, SpectralCoords, Subspace};
use crate::verify::{exp_approach, invariance_check, lipschitz_check, ClaimReport, ExperimentConfig};

/// Sample times of the semigroup bound report.
pub const BOUND_TIMES: [f64; 4] = [0.01, 0.1, 1.0, 10.0];
/// Accepted band for the fitted remainder order.
pub const SLOPE_BAND: (f64, f64) = (1.8, 2.2);

#[derive(Debug, Parser)]
#[command(
    name = "foliage",
    version,
    about = "Stable invariant foliations of a stochastic parabolic equation with dynamic boundary conditions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Spectrum CSV and semigroup bound report.
    Eigen(CommonArgs),
    /// Trajectory CSV per seed.
    Simulate(CommonArgs),
    /// Gap condition and β selection as JSON.
    Gap(CommonArgs),
    /// Fiber sweep CSV per seed.
    Fiber(CommonArgs),
    /// First-order expansion and remainder study as JSON.
    Approx(CommonArgs),
    /// All foliation checks.
    Verify(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    version: &'a str,
    manifest_hash: String,
    passed: bool,
    report: T,
}

struct Run {
    config: RunConfig,
    out: PathBuf,
}

impl Run {
    fn new(args: &CommonArgs) -> Result<Self> {
        let mut config = load_config(&args.config)?;
        if let Some(seed) = args.seed {
            config.seeds = vec![seed];
        }
        let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&config.output));
        if args.out.is_some() {
            config.output = out.to_string_lossy().into_owned();
        }
        fs::create_dir_all(&out)?;
        fs::write(out.join("manifest.toml"), config.to_manifest())?;
        Ok(Self { config, out })
    }

    fn write(&self, name: &str, body: &str) -> Result<()> {
        fs::write(self.out.join(name), body)?;
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, passed: bool, report: T) -> Result<()> {
        self.write(name, &render_json(&self.config, passed, report)?)
    }
}

/// JSON report body: version, manifest hash, overall verdict and the payload.
pub fn render_json<T: Serialize>(config: &RunConfig, passed: bool, report: T) -> Result<String> {
    let env = Envelope {
        version: VERSION,
        manifest_hash: config.manifest_hash(),
        passed,
        report,
    };
    let mut body = serde_json::to_string_pretty(&env)?;
    body.push('\n');
    Ok(body)
}

/// Parses arguments, runs the subcommand and returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    configure_threads();
    match dispatch(&cli.command) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("foliage: one or more checks failed");
            1
        }
        Err(e) => {
            eprintln!("foliage: {e}");
            1
        }
    }
}

/// Caps the worker pool at `FOLIAGE_THREADS` when set.
fn configure_threads() {
    if let Some(n) = std::env::var("FOLIAGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn dispatch(command: &Command) -> Result<bool> {
    match command {
        Command::Eigen(a) => eigen(&Run::new(a)?),
        Command::Simulate(a) => simulate(&Run::new(a)?),
        Command::Gap(a) => gap(&Run::new(a)?),
        Command::Fiber(a) => fiber(&Run::new(a)?),
        Command::Approx(a) => approx(&Run::new(a)?),
        Command::Verify(a) => verify(&Run::new(a)?),
    }
}

fn eigen(run: &Run) -> Result<bool> {
    let model = run.config.model()?;
    run.write("spectrum.csv", &spectrum_csv(&model))?;
    let mut alphas = vec![0.0, 0.25, 0.5, run.config.alpha];
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let reports: Vec<SemigroupBoundReport> = alphas
        .iter()
        .map(|&a| model.check_semigroup_bounds(a, &BOUND_TIMES))
        .collect();
    let passed = reports.iter().all(|r| r.passed());
    run.json("semigroup_bounds.json", passed, reports)?;
    Ok(passed)
}

fn simulate(run: &Run) -> Result<bool> {
    let cfg = &run.config;
    let model = cfg.model()?;
    let nl = cfg.nonlinearity_spec()?;
    let x0 = cfg.x0_coords();
    let results = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let grid = TimeGrid::covering(cfg.h, cfg.t_minus, cfg.horizon)?;
            let path = sample_stationary(&cfg.noise_spec(seed), model.lambdas.as_slice(), grid)?;
            let traj = integrate(&x0, Some(&path), cfg.eps, cfg.horizon, cfg.h, &model, &nl)?;
            Ok((seed, traj.to_csv(&model, cfg.dump == "nodal")))
        })
        .collect::<Result<Vec<_>>>()?;
    for (seed, csv) in results {
        run.write(&format!("trajectory_seed{seed}.csv"), &csv)?;
    }
    Ok(true)
}

fn gap_report(cfg: &RunConfig) -> Result<GapReport> {
    let model = cfg.model()?;
    let nl = cfg.nonlinearity_spec()?;
    select_beta(&model, estimate_lf(&nl, &model, cfg.alpha), cfg.alpha, cfg.split)
}

fn gap(run: &Run) -> Result<bool> {
    let report = gap_report(&run.config)?;
    let passed = report.admissible;
    run.json("gap.json", passed, report)?;
    Ok(passed)
}

fn fiber(run: &Run) -> Result<bool> {
    let exp = ExperimentConfig::new(run.config.clone())?;
    let cfg = &exp.run;
    let x0 = cfg.x0_coords();
    let zeta = cfg.zeta_coords();
    let points = cfg.sweep_points;
    let results = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let path = exp.path(seed, cfg.h, cfg.horizon)?;
            let base = integrate(&x0, Some(&path), cfg.eps, cfg.horizon, cfg.h, &exp.model, &exp.nl)?;
            let mut rows = Vec::with_capacity(points);
            for j in 0..points {
                let s = if points == 1 {
                    1.0
                } else {
                    -1.0 + 2.0 * j as f64 / (points - 1) as f64
                };
                let z = SpectralCoords(&zeta.0 * s);
                let query = FiberQuery {
                    x0: x0.clone(),
                    zeta: z.clone(),
                    path: Some(&path),
                    eps: cfg.eps,
                    horizon: cfg.horizon,
                    h: cfg.h,
                    tol: cfg.tol,
                    max_iter: cfg.max_iter,
                };
                let sol = lyapunov_perron(&query, &base, &exp.model, &exp.nl, &exp.gap)?;
                rows.push(FiberSweepRow {
                    zeta: z,
                    fiber_value: sol.fiber_value,
                    iterations: sol.iterations,
                    residual: sol.final_residual,
                });
            }
            Ok((seed, sweep_csv(&exp.model, &rows, cfg.zeta.len().max(1))))
        })
        .collect::<Result<Vec<_>>>()?;
    for (seed, csv) in results {
        run.write(&format!("fiber_sweep_seed{seed}.csv"), &csv)?;
    }
    Ok(true)
}

#[derive(Debug, Serialize)]
struct ExpansionEntry {
    seed: u64,
    eps: f64,
    f_d: Vec<f64>,
    f_1: Vec<f64>,
    f_eps: Vec<f64>,
    #[serde(rename = "R2_norm")]
    r2_norm: f64,
    slope: Option<f64>,
    study: RemainderStudy,
    passed: bool,
}

fn approx(run: &Run) -> Result<bool> {
    let exp = ExperimentConfig::new(run.config.clone())?;
    let cfg = &exp.run;
    let slow = exp.model.range(Subspace::Slow);
    let head = |c: &SpectralCoords| c.as_slice()[slow.clone()].to_vec();
    let affine = exp.nl.is_affine();
    let entries = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let path = exp.path(seed, cfg.h, cfg.horizon)?;
            let ex = Expansion::new(
                &cfg.zeta_coords(),
                &cfg.x0_coords(),
                &path,
                exp.params(),
                &exp.model,
                &exp.nl,
                &exp.gap,
            )?;
            let at = ex.at(cfg.eps, &exp.model, &exp.nl, &exp.gap)?;
            let (study, _) = remainder_study(&ex, &cfg.eps_list, &exp.model, &exp.nl, &exp.gap)?;
            let passed = if affine {
                study.r2_norm.iter().all(|&r| r <= 10.0 * cfg.tol)
            } else {
                study.slope.is_some_and(|s| (SLOPE_BAND.0..=SLOPE_BAND.1).contains(&s))
            };
            Ok(ExpansionEntry {
                seed,
                eps: at.eps,
                f_d: head(&at.f_d),
                f_1: head(&at.f_1),
                f_eps: head(&at.f_eps),
                r2_norm: at.r2_norm,
                slope: study.slope,
                study,
                passed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let passed = entries.iter().all(|e| e.passed);
    run.json("expansion.json", passed, entries)?;
    Ok(passed)
}

/// Runs the three foliation checks and writes `verify.json` plus traces.
pub fn verify_reports(config: &RunConfig) -> Result<Vec<ClaimReport>> {
    let exp = ExperimentConfig::new(config.clone())?;
    Ok(vec![
        exp_approach(&exp)?,
        invariance_check(&exp)?,
        lipschitz_check(&exp)?,
    ])
}

fn verify(run: &Run) -> Result<bool> {
    let reports = verify_reports(&run.config)?;
    for r in &reports {
        for a in &r.traces {
            run.write(&a.name, &a.csv)?;
        }
    }
    let passed = reports.iter().all(|r| r.passed);
    run.json("verify.json", passed, &reports)?;
    Ok(passed)
}
