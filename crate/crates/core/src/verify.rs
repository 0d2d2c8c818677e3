//! End-to-end experiments on the stable foliation: exponential approach along a
//! fiber, invariance under the flow, and the Lipschitz constant of the fiber map.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::approximation::{ls_slope, SolveParams};
use crate::config::RunConfig;
use crate::dynamics::{estimate_lf, integrate, NonlinearitySpec, ScalarFn, Trajectory};
use crate::error::{Error, Result};
use crate::foliation::{fiber_point, select_beta, FiberQuery, GapReport};
use crate::noise::{sample_stationary, NoisePath, TimeGrid};
use crate::spectral::{SpectralCoords, SpectralModel, Subspace};

/// Minimum fitted approach rate as a fraction of `β`.
pub const RATE_FRACTION: f64 = 0.85;
/// Band for `d(h) / d(h/2)`.
pub const HALVING_BAND: (f64, f64) = (1.4, 2.6);
/// Safety factor on the calibrated invariance constant.
pub const CALIBRATION_FACTOR: f64 = 10.0;
/// Allowed relative change of the Lipschitz estimate under sample doubling.
pub const LIPSCHITZ_STABILITY: f64 = 0.1;
/// Size of the `ζ` perturbations in the Lipschitz sampler.
pub const LIPSCHITZ_STEP: f64 = 0.1;

/// A run configuration together with the model, nonlinearity and gap it implies.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub model: SpectralModel,
    pub nl: NonlinearitySpec,
    pub gap: GapReport,
}

impl ExperimentConfig {
    pub fn new(run: RunConfig) -> Result<Self> {
        run.validate()?;
        let model = run.model()?;
        let nl = run.nonlinearity_spec()?;
        Self::assemble(run, model, nl)
    }

    fn assemble(run: RunConfig, model: SpectralModel, nl: NonlinearitySpec) -> Result<Self> {
        let gap = select_beta(&model, estimate_lf(&nl, &model, run.alpha), run.alpha, run.split)?;
        gap.require_admissible()?;
        Ok(Self { run, model, nl, gap })
    }

    /// Same scenario with another nonlinearity; the gap is recomputed.
    pub fn with_nonlinearity(&self, nl: NonlinearitySpec) -> Result<Self> {
        Self::assemble(self.run.clone(), self.model.clone(), nl)
    }

    pub fn with_seeds(&self, seeds: Vec<u64>) -> Self {
        let mut out = self.clone();
        out.run.seeds = seeds;
        out
    }

    pub fn params(&self) -> SolveParams {
        SolveParams {
            horizon: self.run.horizon,
            h: self.run.h,
            tol: self.run.tol,
            max_iter: self.run.max_iter,
        }
    }

    /// Noise path on step `h_path` covering `[-T_minus, t_plus]`.
    pub fn path(&self, seed: u64, h_path: f64, t_plus: f64) -> Result<NoisePath> {
        let grid = TimeGrid::covering(h_path, self.run.t_minus, t_plus)?;
        sample_stationary(&self.run.noise_spec(seed), self.model.lambdas.as_slice(), grid)
    }

    fn query<'a>(&self, x0: &SpectralCoords, zeta: &SpectralCoords, path: &'a NoisePath, h: f64) -> FiberQuery<'a> {
        FiberQuery {
            x0: x0.clone(),
            zeta: zeta.clone(),
            path: Some(path),
            eps: self.run.eps,
            horizon: self.run.horizon,
            h,
            tol: self.run.tol,
            max_iter: self.run.max_iter,
        }
    }

    /// `𝔣(ζ, X0, ω)` at step `h`, with the base orbit integrated on the same grid.
    pub fn fiber(
        &self,
        x0: &SpectralCoords,
        zeta: &SpectralCoords,
        path: &NoisePath,
        h: f64,
    ) -> Result<SpectralCoords> {
        let base = integrate(x0, Some(path), self.run.eps, self.run.horizon, h, &self.model, &self.nl)?;
        fiber_point(&self.query(x0, zeta, path, h), &base, &self.model, &self.nl, &self.gap)
    }

    fn flow(&self, x: &SpectralCoords, path: &NoisePath, span: f64, h: f64) -> Result<Trajectory> {
        integrate(x, Some(path), self.run.eps, span, h, &self.model, &self.nl)
    }

    fn slow_norm(&self, v: &nalgebra::DVector<f64>) -> f64 {
        self.model
            .alpha_norm_on(v, self.gap.alpha, self.model.range(Subspace::Slow))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    /// Absent when the experiment degenerates (e.g. identical points).
    pub statistic: Option<f64>,
    pub passed: bool,
    pub degenerate: bool,
    pub details: BTreeMap<String, f64>,
}

/// A named CSV produced by an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimReport {
    pub claim: String,
    /// Worst per-seed statistic.
    pub statistic: Option<f64>,
    pub target: f64,
    /// `">="` or `"<="`: how `statistic` must compare to `target`.
    pub relation: String,
    pub passed: bool,
    pub seeds: Vec<SeedOutcome>,
    pub details: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
    #[serde(skip)]
    pub traces: Vec<Artifact>,
}

impl ClaimReport {
    fn assemble(
        claim: &str,
        target: f64,
        relation: &str,
        seeds: Vec<SeedOutcome>,
        details: BTreeMap<String, f64>,
        traces: Vec<Artifact>,
    ) -> Self {
        let stats = seeds.iter().filter_map(|s| s.statistic);
        let statistic = if relation == ">=" {
            stats.reduce(f64::min)
        } else {
            stats.reduce(f64::max)
        };
        Self {
            claim: claim.into(),
            statistic,
            target,
            relation: relation.into(),
            passed: seeds.iter().all(|s| s.passed),
            artifacts: traces.iter().map(|a| a.name.clone()).collect(),
            seeds,
            details,
            traces,
        }
    }

    pub fn passed_seeds(&self) -> usize {
        self.seeds.iter().filter(|s| s.passed).count()
    }
}

fn per_seed<T: Send>(seeds: &[u64], run: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    seeds.par_iter().map(|&s| run(s)).collect()
}

/// Decay rate `-d log y / dt` over `t ∈ [lo, hi]`, from the positive samples only.
pub fn fit_decay_rate(times: &[f64], values: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(values)
        .filter(|(t, v)| **t >= lo - 1e-12 && **t <= hi + 1e-12 && **v > 0.0)
        .map(|(t, v)| (*t, v.ln()))
        .unzip();
    if x.len() < 2 {
        return None;
    }
    Some(-ls_slope(&x, &y))
}

/// Two points on the fiber over `X0` are integrated under the same noise and
/// the decay rate of their `D(A^α)` distance is fitted on the middle half of
/// `[0, approach_T]`.
pub fn exp_approach(cfg: &ExperimentConfig) -> Result<ClaimReport> {
    let run = &cfg.run;
    let target = RATE_FRACTION * cfg.gap.beta;
    let x0 = run.x0_coords();
    let zeta = run.zeta_coords();
    let zeta_alt = SpectralCoords(-&zeta.0);
    let span = run.approach_t;
    let outcomes = per_seed(&run.seeds, |seed| {
        let path = cfg.path(seed, run.h, run.horizon.max(span))?;
        let f1 = cfg.fiber(&x0, &zeta, &path, run.h)?;
        let f2 = cfg.fiber(&x0, &zeta_alt, &path, run.h)?;
        let a = cfg.flow(&SpectralCoords(&zeta.0 + &f1.0), &path, span, run.h)?;
        let b = cfg.flow(&SpectralCoords(&zeta_alt.0 + &f2.0), &path, span, run.h)?;
        let diff = &a.states - &b.states;
        let times: Vec<f64> = (0..a.len()).map(|n| a.time(n)).collect();
        let dist: Vec<f64> = (0..a.len())
            .map(|n| cfg.model.alpha_norm(&diff.column(n).into_owned(), cfg.gap.alpha))
            .collect();
        let rate = fit_decay_rate(&times, &dist, 0.25 * span, 0.75 * span);
        let mut csv = String::from("t,distance\n");
        for (t, d) in times.iter().zip(&dist) {
            csv.push_str(&format!("{t:?},{d:?}\n"));
        }
        let mut details = BTreeMap::new();
        details.insert("initial_distance".into(), dist[0]);
        details.insert("final_distance".into(), *dist.last().unwrap_or(&0.0));
        let outcome = SeedOutcome {
            seed,
            statistic: rate,
            passed: rate.is_none_or(|r| r >= target),
            degenerate: rate.is_none(),
            details,
        };
        Ok((
            outcome,
            Artifact {
                name: format!("approach_seed{seed}.csv"),
                csv,
            },
        ))
    })?;
    let (seeds, traces): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let mut details = BTreeMap::new();
    details.insert("beta".into(), cfg.gap.beta);
    details.insert("approach_T".into(), span);
    Ok(ClaimReport::assemble(
        "exp_approach",
        target,
        ">=",
        seeds,
        details,
        traces,
    ))
}

/// `(d(h), d(h/2))` for one seed and shift `tau`.
///
/// The flow to time `tau` uses the reference step `h / ref_factor`; the
/// fibers over `X0` and over the flowed base use steps `h` and `h/2`.
pub fn invariance_defects(cfg: &ExperimentConfig, seed: u64, tau: f64) -> Result<(f64, f64)> {
    let run = &cfg.run;
    let h_ref = run.h / run.ref_factor as f64;
    let path = cfg.path(seed, h_ref, tau + run.horizon)?;
    let shifted = path.shift(tau)?;
    let x0 = run.x0_coords();
    let zeta = run.zeta_coords();
    let moved_base = cfg.flow(&x0, &path, tau, h_ref)?.last();
    let defect = |h: f64| -> Result<f64> {
        let f = cfg.fiber(&x0, &zeta, &path, h)?;
        let q = cfg.flow(&SpectralCoords(&zeta.0 + &f.0), &path, tau, h_ref)?.last();
        let q2 = cfg.model.project(&q, Subspace::Stable);
        let f_moved = cfg.fiber(&moved_base, &q2, &shifted, h)?;
        let gap = cfg.model.project(&q, Subspace::Slow).0 - f_moved.0;
        Ok(cfg.slow_norm(&gap))
    };
    Ok((defect(run.h)?, defect(0.5 * run.h)?))
}

/// The coupled linear scenario used to calibrate the invariance tolerance:
/// `f(u) = s u` inside and `g(u) = -s u` on the boundary, with `s` the larger
/// Lipschitz constant of `nl`.
pub fn linear_companion(nl: &NonlinearitySpec) -> NonlinearitySpec {
    let s = nl.lip_f().max(nl.lip_g());
    NonlinearitySpec::new(ScalarFn::Linear { slope: s }, ScalarFn::Linear { slope: -s })
}

/// `h + e^{-(β-λ_N) T}`.
pub fn invariance_scale(cfg: &ExperimentConfig) -> f64 {
    cfg.run.h + (-(cfg.gap.beta - cfg.gap.lambda_n) * cfg.run.horizon).exp()
}

/// `C_check`: the configured value, or the safety factor times the largest
/// normalized defect of the linear companion scenario over the seeds.
pub fn calibrate_c_check(cfg: &ExperimentConfig) -> Result<f64> {
    if cfg.run.c_check > 0.0 {
        return Ok(cfg.run.c_check);
    }
    let lin = cfg.with_nonlinearity(linear_companion(&cfg.nl))?;
    let scale = invariance_scale(&lin);
    let defects = per_seed(&cfg.run.seeds, |seed| {
        invariance_defects(&lin, seed, cfg.run.tau).map(|d| d.0)
    })?;
    Ok(CALIBRATION_FACTOR * defects.into_iter().fold(0.0, f64::max) / scale)
}

/// Flows a fiber point to `tau` and measures its distance to the fiber over
/// the flowed base point under the shifted noise.
pub fn invariance_check(cfg: &ExperimentConfig) -> Result<ClaimReport> {
    let run = &cfg.run;
    let c_check = calibrate_c_check(cfg)?;
    let tol_inv = c_check * invariance_scale(cfg);
    // defects at the Picard tolerance carry no step-size signal
    let floor = 10.0 * run.tol;
    let outcomes = per_seed(&run.seeds, |seed| {
        let (d_h, d_h2) = invariance_defects(cfg, seed, run.tau)?;
        let degenerate = d_h <= floor;
        let ratio = d_h / d_h2;
        let halves = degenerate || (HALVING_BAND.0..=HALVING_BAND.1).contains(&ratio);
        let mut details = BTreeMap::new();
        details.insert("d_h".into(), d_h);
        details.insert("d_h_half".into(), d_h2);
        if !degenerate {
            details.insert("halving_ratio".into(), ratio);
        }
        Ok(SeedOutcome {
            seed,
            statistic: Some(d_h),
            passed: d_h <= tol_inv && halves,
            degenerate,
            details,
        })
    })?;
    let mut csv = String::from("seed,d_h,d_h_half,tol_inv\n");
    for s in &outcomes {
        csv.push_str(&format!(
            "{},{:?},{:?},{tol_inv:?}\n",
            s.seed, s.details["d_h"], s.details["d_h_half"]
        ));
    }
    let mut details = BTreeMap::new();
    details.insert("c_check".into(), c_check);
    details.insert("tau".into(), run.tau);
    details.insert("h".into(), run.h);
    details.insert("h_ref".into(), run.h / run.ref_factor as f64);
    details.insert("halving_band_lo".into(), HALVING_BAND.0);
    details.insert("halving_band_hi".into(), HALVING_BAND.1);
    let traces = vec![Artifact {
        name: "invariance.csv".into(),
        csv,
    }];
    Ok(ClaimReport::assemble(
        "invariance",
        tol_inv,
        "<=",
        outcomes,
        details,
        traces,
    ))
}

/// `‖𝔣(ζ0 + δ e_{N+j} λ_{N+j}^{-α}) - 𝔣(ζ0)‖_{D(A₁^α)} / δ` for `j = 1..=count`.
pub fn lipschitz_quotients(cfg: &ExperimentConfig, path: &NoisePath, count: usize) -> Result<Vec<f64>> {
    let run = &cfg.run;
    let x0 = run.x0_coords();
    let zeta = run.zeta_coords();
    let base = integrate(&x0, Some(path), run.eps, run.horizon, run.h, &cfg.model, &cfg.nl)?;
    let fib = |z: &SpectralCoords| fiber_point(&cfg.query(&x0, z, path, run.h), &base, &cfg.model, &cfg.nl, &cfg.gap);
    let f0 = fib(&zeta)?;
    (1..=count)
        .map(|j| {
            let mode = run.split + j - 1;
            if mode >= cfg.model.dof() {
                return Err(Error::InvalidInput(format!("no stable mode {}", mode + 1)));
            }
            let mut z = zeta.clone();
            z[mode] += LIPSCHITZ_STEP * cfg.model.lambdas[mode].powf(-cfg.gap.alpha);
            let f = fib(&z)?;
            Ok(cfg.slow_norm(&(f.0 - &f0.0)) / LIPSCHITZ_STEP)
        })
        .collect()
}

/// `L_F λ_N^α / ((β - λ_N)(1 - k))`.
pub fn lipschitz_factor(gap: &GapReport) -> f64 {
    gap.l_f * gap.lambda_n.powf(gap.alpha) / ((gap.beta - gap.lambda_n) * (1.0 - gap.k))
}

/// Maximum difference quotient of the fiber map over `n` and `2n` directions.
pub fn lipschitz_check(cfg: &ExperimentConfig) -> Result<ClaimReport> {
    let run = &cfg.run;
    let n = run.lip_samples;
    let factor = lipschitz_factor(&cfg.gap);
    let outcomes = per_seed(&run.seeds, |seed| {
        let path = cfg.path(seed, run.h, run.horizon)?;
        let q = lipschitz_quotients(cfg, &path, 2 * n)?;
        let est_n = q[..n].iter().copied().fold(0.0, f64::max);
        let est_2n = q.iter().copied().fold(0.0, f64::max);
        let change = if est_n == 0.0 && est_2n == 0.0 {
            0.0
        } else {
            (est_2n - est_n).abs() / est_n
        };
        let mut details = BTreeMap::new();
        details.insert("lipschitz_n".into(), est_n);
        details.insert("lipschitz_2n".into(), est_2n);
        if factor > 0.0 {
            details.insert("implied_C".into(), est_2n / factor);
        }
        let mut csv = String::from("direction,quotient\n");
        for (j, v) in q.iter().enumerate() {
            csv.push_str(&format!("{},{v:?}\n", run.split + j + 1));
        }
        Ok((
            SeedOutcome {
                seed,
                statistic: Some(change),
                passed: est_2n.is_finite() && change <= LIPSCHITZ_STABILITY,
                degenerate: false,
                details,
            },
            Artifact {
                name: format!("lipschitz_seed{seed}.csv"),
                csv,
            },
        ))
    })?;
    let (seeds, traces): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let mut details = BTreeMap::new();
    details.insert("factor".into(), factor);
    details.insert(
        "empirical_lipschitz".into(),
        seeds.iter().map(|s| s.details["lipschitz_2n"]).fold(0.0, f64::max),
    );
    Ok(ClaimReport::assemble(
        "lipschitz",
        LIPSCHITZ_STABILITY,
        "<=",
        seeds,
        details,
        traces,
    ))
}
