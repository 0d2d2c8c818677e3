//! First-order expansion of the fiber map in the noise intensity.
//!
//! `𝔣^ε = 𝔣^d + ε 𝔣^1 + R₂`. The auxiliary problems are discretized with the
//! same exponential-Euler grid as the fiber solver, so `𝔣^1` is the exact
//! `ε`-derivative at zero of the discrete fiber map.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dynamics::{integrate, ExpEulerCoeffs, NonlinearitySpec, Trajectory};
use crate::error::{Error, Result};
use crate::foliation::{
    check_base, check_zeta, fiber_point, lyapunov_perron, noise_window, picard, FiberQuery, FiberSolution, GapReport,
    LpGrid,
};
use crate::noise::{steps_for, NoisePath};
use crate::spectral::{SpectralCoords, SpectralModel, Subspace};

/// Grid and solver settings shared by every auxiliary solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveParams {
    pub horizon: f64,
    pub h: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// Deterministic base orbit `X^(d)`.
pub fn solve_xd(
    x0: &SpectralCoords,
    params: &SolveParams,
    model: &SpectralModel,
    nl: &NonlinearitySpec,
) -> Result<Trajectory> {
    integrate(x0, None, 0.0, params.horizon, params.h, model, nl)
}

/// Linear response `X^(1)`: `X^(1)_{n+1} = e^{-Ah} X^(1)_n + w F'(X^(d)_n)(X^(1)_n + Z_n)`, `X^(1)_0 = 0`.
pub fn solve_x1(
    xd: &Trajectory,
    path: &NoisePath,
    params: &SolveParams,
    model: &SpectralModel,
    nl: &NonlinearitySpec,
) -> Result<Trajectory> {
    let steps = steps_for(params.horizon, params.h)?;
    check_base(xd, model, steps, params.h)?;
    let dof = model.dof();
    let z = noise_window(Some(path), 1.0, params.horizon, params.h, steps, dof)?;
    let slope = nl.map_nodal2(
        &(&model.modes * xd.states.columns(0, steps)),
        &DMatrix::zeros(dof, steps),
        |f, a, _| f.derivative(a),
    );
    let coeffs = ExpEulerCoeffs::new(&model.lambdas, params.h);
    let mut states = DMatrix::zeros(dof, steps + 1);
    for n in 0..steps {
        let arg = states.column(n) + z.column(n);
        let nodal = (&model.modes * arg).component_mul(&slope.column(n));
        let forcing = &model.projector * nodal;
        let next = states.column(n).component_mul(&coeffs.decay) + forcing.component_mul(&coeffs.weight);
        states.set_column(n + 1, &next);
    }
    Ok(Trajectory {
        h: params.h,
        states,
        eps: 0.0,
        seed: Some(path.spec.seed),
    })
}

/// Deterministic fiber solve against `X^(d)`; `𝔣^d = X_{1,0} + U₁^(d)(0)`.
#[allow(clippy::too_many_arguments)]
pub fn solve_ud(
    zeta: &SpectralCoords,
    x0: &SpectralCoords,
    xd: &Trajectory,
    params: &SolveParams,
    model: &SpectralModel,
    nl: &NonlinearitySpec,
    gap: &GapReport,
) -> Result<FiberSolution> {
    let query = FiberQuery {
        x0: x0.clone(),
        zeta: zeta.clone(),
        path: None,
        eps: 0.0,
        horizon: params.horizon,
        h: params.h,
        tol: params.tol,
        max_iter: params.max_iter,
    };
    lyapunov_perron(&query, xd, model, nl, gap)
}

/// First-order difference trajectory `U^(1)` (both parts) and `𝔣^1 = U₁^(1)(0)`.
///
/// `U^(1)` solves the linear fixed point with forcing
/// `G = F'(X^(d) + U^(d)) U^(1) + (F'(X^(d) + U^(d)) - F'(X^(d)))(X^(1) + Z)`
/// and zero stable initial value.
#[allow(clippy::too_many_arguments)]
pub fn solve_u1(
    ud: &FiberSolution,
    xd: &Trajectory,
    x1: &Trajectory,
    path: &NoisePath,
    params: &SolveParams,
    model: &SpectralModel,
    nl: &NonlinearitySpec,
    gap: &GapReport,
) -> Result<(Trajectory, SpectralCoords)> {
    gap.require_admissible()?;
    let grid = LpGrid::new(model, params.horizon, params.h)?;
    let nt = grid.steps;
    check_base(xd, model, nt, params.h)?;
    check_base(x1, model, nt, params.h)?;
    check_base(&ud.u1, model, nt, params.h)?;
    let dof = model.dof();

    let xd_nodal = &model.modes * xd.states.columns(0, nt);
    let ud_full = &ud.u1.states + &ud.u2.states;
    let on_fiber = &xd_nodal + &model.modes * ud_full.columns(0, nt);
    let zeros = DMatrix::zeros(dof, nt);
    let slope_fiber = nl.map_nodal2(&on_fiber, &zeros, |f, a, _| f.derivative(a));
    let slope_base = nl.map_nodal2(&xd_nodal, &zeros, |f, a, _| f.derivative(a));
    let z = noise_window(Some(path), 1.0, params.horizon, params.h, nt, dof)?;
    let response = &model.modes * (x1.states.columns(0, nt) + z);
    let source = &model.projector * (&slope_fiber - &slope_base).component_mul(&response);
    let u2_0 = nalgebra::DVector::zeros(dof);

    let run = picard(model, gap, params.h, params.tol, params.max_iter, (dof, nt + 1), |u| {
        let nodal = (&model.modes * u.columns(0, nt)).component_mul(&slope_fiber);
        let g = &model.projector * nodal + &source;
        grid.sweep(model, &g, &u2_0)
    })?;
    let f1 = model.project(&SpectralCoords(run.u.column(0).into_owned()), Subspace::Slow);
    let traj = Trajectory {
        h: params.h,
        states: run.u,
        eps: 0.0,
        seed: Some(path.spec.seed),
    };
    Ok((traj, f1))
}

#[derive(Debug, Clone)]
pub struct ExpansionResult {
    pub eps: f64,
    pub f_d: SpectralCoords,
    pub f_1: SpectralCoords,
    pub f_eps: SpectralCoords,
    /// `‖𝔣^ε - 𝔣^d - ε 𝔣^1‖` in `D(A₁^α)`.
    pub r2_norm: f64,
}

/// The ε-independent pieces of the expansion at fixed `(ζ, X0, ω)`.
#[derive(Debug, Clone)]
pub struct Expansion<'a> {
    pub zeta: SpectralCoords,
    pub x0: SpectralCoords,
    pub path: &'a NoisePath,
    pub params: SolveParams,
    pub xd: Trajectory,
    pub x1: Trajectory,
    pub ud: FiberSolution,
    pub u1: Trajectory,
    pub f_d: SpectralCoords,
    pub f_1: SpectralCoords,
}

impl<'a> Expansion<'a> {
    /// Runs the chain `X^(d) → {X^(1), U^(d)} → U^(1)`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        zeta: &SpectralCoords,
        x0: &SpectralCoords,
        path: &'a NoisePath,
        params: SolveParams,
        model: &SpectralModel,
        nl: &NonlinearitySpec,
        gap: &GapReport,
    ) -> Result<Self> {
        check_zeta(zeta, model)?;
        let xd = solve_xd(x0, &params, model, nl)?;
        let x1 = solve_x1(&xd, path, &params, model, nl)?;
        let ud = solve_ud(zeta, x0, &xd, &params, model, nl, gap)?;
        let (u1, f_1) = solve_u1(&ud, &xd, &x1, path, &params, model, nl, gap)?;
        Ok(Self {
            zeta: zeta.clone(),
            x0: x0.clone(),
            path,
            params,
            f_d: ud.fiber_value.clone(),
            xd,
            x1,
            ud,
            u1,
            f_1,
        })
    }

    /// `𝔣^ε` from the full fiber solve.
    pub fn fiber_at(
        &self,
        eps: f64,
        model: &SpectralModel,
        nl: &NonlinearitySpec,
        gap: &GapReport,
    ) -> Result<SpectralCoords> {
        let p = &self.params;
        let base = integrate(&self.x0, Some(self.path), eps, p.horizon, p.h, model, nl)?;
        let query = FiberQuery {
            x0: self.x0.clone(),
            zeta: self.zeta.clone(),
            path: Some(self.path),
            eps,
            horizon: p.horizon,
            h: p.h,
            tol: p.tol,
            max_iter: p.max_iter,
        };
        fiber_point(&query, &base, model, nl, gap)
    }

    pub fn at(
        &self,
        eps: f64,
        model: &SpectralModel,
        nl: &NonlinearitySpec,
        gap: &GapReport,
    ) -> Result<ExpansionResult> {
        let f_eps = self.fiber_at(eps, model, nl, gap)?;
        let r2 = &f_eps.0 - &self.f_d.0 - &self.f_1.0 * eps;
        Ok(ExpansionResult {
            eps,
            f_d: self.f_d.clone(),
            f_1: self.f_1.clone(),
            r2_norm: model.alpha_norm_on(&r2, gap.alpha, model.range(Subspace::Slow)),
            f_eps,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RemainderStudy {
    pub eps: Vec<f64>,
    #[serde(rename = "R2_norm")]
    pub r2_norm: Vec<f64>,
    /// `‖R₂‖ / ε²` per ε.
    pub c_omega: Vec<f64>,
    /// Least-squares slope of `log ‖R₂‖` against `log ε`; absent when some `R₂` vanishes.
    pub slope: Option<f64>,
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Evaluates `R₂` at every ε and fits its order.
pub fn remainder_study(
    expansion: &Expansion<'_>,
    eps_list: &[f64],
    model: &SpectralModel,
    nl: &NonlinearitySpec,
    gap: &GapReport,
) -> Result<(RemainderStudy, Vec<ExpansionResult>)> {
    let mut distinct = eps_list.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 || distinct.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidInput(
            "remainder fit needs at least two distinct positive eps values".into(),
        ));
    }
    let results = eps_list
        .iter()
        .map(|&e| expansion.at(e, model, nl, gap))
        .collect::<Result<Vec<_>>>()?;
    let r2: Vec<f64> = results.iter().map(|r| r.r2_norm).collect();
    let slope = if r2.iter().all(|&r| r > 0.0) {
        let lx: Vec<f64> = eps_list.iter().map(|e| e.ln()).collect();
        let ly: Vec<f64> = r2.iter().map(|r| r.ln()).collect();
        Some(ls_slope(&lx, &ly))
    } else {
        None
    };
    Ok((
        RemainderStudy {
            eps: eps_list.to_vec(),
            c_omega: r2.iter().zip(eps_list).map(|(r, e)| r / (e * e)).collect(),
            r2_norm: r2,
            slope,
        },
        results,
    ))
}
