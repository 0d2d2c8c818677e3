//! Gap condition, Lyapunov–Perron fixed point and the stable fiber map.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::dynamics::{ExpEulerCoeffs, NonlinearitySpec, Trajectory};
use crate::error::{Error, Result};
use crate::noise::{steps_for, stride_for, NoisePath};
use crate::spectral::{SpectralCoords, SpectralModel, Subspace};

/// `α^α Γ(1 - α)`, with `0⁰ = 1`.
pub fn c_alpha(alpha: f64) -> f64 {
    if alpha == 0.0 {
        // Γ(1) = 1 exactly; the Lanczos value is off by a few ulps
        return 1.0;
    }
    alpha.powf(alpha) * gamma(1.0 - alpha)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha must lie in [0,1), got {alpha}")))
    }
}

/// The contraction constant `k(β)` of the Lyapunov–Perron map.
pub fn gap_k(lam_n: f64, lam_n1: f64, l_f: f64, alpha: f64, beta: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(beta > lam_n && beta < lam_n1) {
        return Err(Error::BetaOutsideGap {
            beta,
            lambda_n: lam_n,
            lambda_n1: lam_n1,
        });
    }
    Ok(l_f
        * (lam_n.powf(alpha) / (beta - lam_n)
            + lam_n1.powf(alpha) / (lam_n1 - beta)
            + c_alpha(alpha) / (lam_n1 - beta).powf(1.0 - alpha)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    #[serde(rename = "N")]
    pub n: usize,
    pub alpha: f64,
    #[serde(rename = "L_F")]
    pub l_f: f64,
    pub beta: f64,
    #[serde(rename = "C_alpha")]
    pub c_alpha: f64,
    pub k: f64,
    #[serde(rename = "lambda_N")]
    pub lambda_n: f64,
    #[serde(rename = "lambda_N1")]
    pub lambda_n1: f64,
    pub admissible: bool,
    /// Root of `β - λ_N - (2 L_F / k(β)) λ_N^α`, when `L_F > 0`.
    pub implicit_beta: Option<f64>,
    pub implicit_k: Option<f64>,
}

impl GapReport {
    pub fn require_admissible(&self) -> Result<()> {
        if self.admissible {
            Ok(())
        } else {
            Err(Error::GapInadmissible { k: self.k })
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimizes `k(β)` over the open gap `(λ_N, λ_{N+1})` by golden-section search.
pub fn select_beta(model: &SpectralModel, l_f: f64, alpha: f64, n: usize) -> Result<GapReport> {
    check_alpha(alpha)?;
    if n == 0 || n >= model.dof() {
        return Err(Error::InvalidInput(format!(
            "split index must satisfy 1 <= N < dof = {}, got {n}",
            model.dof()
        )));
    }
    if !(l_f >= 0.0 && l_f.is_finite()) {
        return Err(Error::InvalidInput(format!("L_F must be finite and >= 0, got {l_f}")));
    }
    let lam_n = model.lambdas[n - 1];
    let lam_n1 = model.lambdas[n];
    select_beta_for(lam_n, lam_n1, l_f, alpha, n)
}

/// [`select_beta`] on explicit gap endpoints.
pub fn select_beta_for(lam_n: f64, lam_n1: f64, l_f: f64, alpha: f64, n: usize) -> Result<GapReport> {
    check_alpha(alpha)?;
    if !(lam_n1 - lam_n > 1e-12 * lam_n1.abs().max(1.0)) {
        return Err(Error::InvalidInput(format!(
            "degenerate spectral gap: lambda_N = {lam_n}, lambda_N+1 = {lam_n1}"
        )));
    }
    let beta = if l_f == 0.0 {
        0.5 * (lam_n + lam_n1)
    } else {
        let k = |b: f64| gap_k(lam_n, lam_n1, l_f, alpha, b).unwrap_or(f64::INFINITY);
        let margin = 1e-12 * (lam_n1 - lam_n);
        let (mut a, mut b) = (lam_n + margin, lam_n1 - margin);
        let mut x1 = b - INV_PHI * (b - a);
        let mut x2 = a + INV_PHI * (b - a);
        let (mut k1, mut k2) = (k(x1), k(x2));
        while b - a > 1e-8 {
            if k1 <= k2 {
                b = x2;
                x2 = x1;
                k2 = k1;
                x1 = b - INV_PHI * (b - a);
                k1 = k(x1);
            } else {
                a = x1;
                x1 = x2;
                k1 = k2;
                x2 = a + INV_PHI * (b - a);
                k2 = k(x2);
            }
        }
        0.5 * (a + b)
    };
    let k = gap_k(lam_n, lam_n1, l_f, alpha, beta)?;
    let implicit_beta = implicit_root(lam_n, lam_n1, l_f, alpha);
    let implicit_k = implicit_beta.map(|b| gap_k(lam_n, lam_n1, l_f, alpha, b).unwrap_or(f64::NAN));
    Ok(GapReport {
        n,
        alpha,
        l_f,
        beta,
        c_alpha: c_alpha(alpha),
        k,
        lambda_n: lam_n,
        lambda_n1: lam_n1,
        admissible: k < 1.0,
        implicit_beta,
        implicit_k,
    })
}

/// Sign-change scan plus bisection for `β - λ_N - (2 L_F / k(β)) λ_N^α = 0`.
fn implicit_root(lam_n: f64, lam_n1: f64, l_f: f64, alpha: f64) -> Option<f64> {
    if l_f == 0.0 {
        return None;
    }
    let phi = |b: f64| {
        let k = gap_k(lam_n, lam_n1, l_f, alpha, b).ok()?;
        Some(b - lam_n - 2.0 * l_f / k * lam_n.powf(alpha))
    };
    let samples = 400;
    let width = lam_n1 - lam_n;
    let at = |j: usize| lam_n + width * j as f64 / samples as f64;
    let mut prev = (at(1), phi(at(1))?);
    for j in 2..samples {
        let b = at(j);
        let v = phi(b)?;
        if v == 0.0 {
            return Some(b);
        }
        if prev.1 < 0.0 && v > 0.0 || prev.1 > 0.0 && v < 0.0 {
            let (mut lo, mut hi) = (prev.0, b);
            let lo_sign = prev.1 < 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if hi - lo <= 1e-14 * hi {
                    break;
                }
                if (phi(mid)? < 0.0) == lo_sign {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
        prev = (b, v);
    }
    None
}

/// Inputs of one fiber evaluation `𝔣(ζ, X0, ω)`.
#[derive(Debug, Clone)]
pub struct FiberQuery<'a> {
    pub x0: SpectralCoords,
    /// Fiber parameter, supported on `H₂`.
    pub zeta: SpectralCoords,
    pub path: Option<&'a NoisePath>,
    pub eps: f64,
    pub horizon: f64,
    pub h: f64,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct FiberSolution {
    /// `H₁` part of the difference trajectory (other rows zero).
    pub u1: Trajectory,
    /// `H₂` part of the difference trajectory (other rows zero).
    pub u2: Trajectory,
    /// `X_{1,0} + U₁(0)`, supported on `H₁`.
    pub fiber_value: SpectralCoords,
    pub iterations: usize,
    pub final_residual: f64,
    /// Weighted-norm size of every Picard update, starting from `Ψ¹ - Ψ⁰`.
    pub increments: Vec<f64>,
    /// `increments[j + 1] / increments[j]`.
    pub contraction_estimates: Vec<f64>,
}

/// `max_n e^{β t_n} ‖col_n‖_{D(A^α)}` restricted to `range` rows.
pub fn weighted_sup(
    model: &SpectralModel,
    states: &DMatrix<f64>,
    h: f64,
    alpha: f64,
    beta: f64,
    part: Subspace,
) -> f64 {
    let w = model.alpha_weights(alpha);
    let range = model.range(part);
    let mut best: f64 = 0.0;
    for n in 0..states.ncols() {
        let col = states.column(n);
        let s: f64 = range.clone().map(|i| (w[i] * col[i]).powi(2)).sum();
        if s > 0.0 {
            best = best.max((beta * n as f64 * h).exp() * s.sqrt());
        }
    }
    best
}

/// The norm of `C_{β,α}^+ × C_{β,α}^+` on a difference trajectory.
pub fn lp_norm(model: &SpectralModel, states: &DMatrix<f64>, h: f64, alpha: f64, beta: f64) -> f64 {
    weighted_sup(model, states, h, alpha, beta, Subspace::Slow)
        + weighted_sup(model, states, h, alpha, beta, Subspace::Stable)
}

/// Validated grid and noise data shared by the Lyapunov–Perron solvers.
pub(crate) struct LpGrid {
    pub steps: usize,
    pub coeffs: ExpEulerCoeffs,
    /// `e^{λh}` and `(e^{λh} - 1)/λ` on the slow modes.
    pub growth: DVector<f64>,
    pub growth_weight: DVector<f64>,
}

impl LpGrid {
    pub fn new(model: &SpectralModel, horizon: f64, h: f64) -> Result<Self> {
        let steps = steps_for(horizon, h)?;
        if steps == 0 {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        let coeffs = ExpEulerCoeffs::new(&model.lambdas, h);
        let growth = model.lambdas.map(|l| (l * h).exp());
        let growth_weight = model.lambdas.map(|l| (l * h).exp_m1() / l);
        Ok(Self {
            steps,
            coeffs,
            growth,
            growth_weight,
        })
    }

    /// One application of the discrete Lyapunov–Perron operator given the
    /// forcing `df` (one column per step) and the stable initial value.
    pub fn sweep(&self, model: &SpectralModel, df: &DMatrix<f64>, u2_0: &DVector<f64>) -> DMatrix<f64> {
        let nt = self.steps;
        let mut u = DMatrix::zeros(model.dof(), nt + 1);
        for i in model.range(Subspace::Slow) {
            let (g, gw) = (self.growth[i], self.growth_weight[i]);
            for n in (0..nt).rev() {
                u[(i, n)] = g * u[(i, n + 1)] - gw * df[(i, n)];
            }
        }
        for i in model.range(Subspace::Stable) {
            let (e, w) = (self.coeffs.decay[i], self.coeffs.weight[i]);
            u[(i, 0)] = u2_0[i];
            for n in 0..nt {
                u[(i, n + 1)] = e * u[(i, n)] + w * df[(i, n)];
            }
        }
        u
    }
}

pub(crate) fn check_base(base: &Trajectory, model: &SpectralModel, steps: usize, h: f64) -> Result<()> {
    if base.states.nrows() != model.dof() {
        return Err(Error::DimensionMismatch {
            expected: model.dof(),
            got: base.states.nrows(),
        });
    }
    if base.steps() != steps || (base.h - h).abs() > 1e-12 * h {
        return Err(Error::InvalidInput(format!(
            "base trajectory grid ({} steps of {}) does not match the query ({steps} steps of {h})",
            base.steps(),
            base.h
        )));
    }
    Ok(())
}

pub(crate) fn check_zeta(zeta: &SpectralCoords, model: &SpectralModel) -> Result<()> {
    if zeta.len() != model.dof() {
        return Err(Error::DimensionMismatch {
            expected: model.dof(),
            got: zeta.len(),
        });
    }
    if model.range(Subspace::Slow).any(|i| zeta[i] != 0.0) {
        return Err(Error::InvalidInput("zeta must be supported on the stable modes".into()));
    }
    Ok(())
}

pub(crate) struct Picard {
    pub u: DMatrix<f64>,
    pub iterations: usize,
    pub increments: Vec<f64>,
    pub ratios: Vec<f64>,
}

/// Iterates `u ↦ step(u)` from zero until the weighted increment is at most `tol`.
pub(crate) fn picard(
    model: &SpectralModel,
    gap: &GapReport,
    h: f64,
    tol: f64,
    max_iter: usize,
    dims: (usize, usize),
    mut step: impl FnMut(&DMatrix<f64>) -> DMatrix<f64>,
) -> Result<Picard> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::InvalidInput("tol and max_iter must be positive".into()));
    }
    let mut u = DMatrix::zeros(dims.0, dims.1);
    let mut increments: Vec<f64> = Vec::new();
    let mut ratios = Vec::new();
    for _ in 0..max_iter {
        let next = step(&u);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: increments.len() + 1,
            });
        }
        let inc = lp_norm(model, &(&next - &u), h, gap.alpha, gap.beta);
        if let Some(&prev) = increments.last() {
            if prev > 0.0 {
                ratios.push(inc / prev);
            }
        }
        increments.push(inc);
        u = next;
        if inc <= tol {
            let iterations = increments.iter().filter(|&&v| v > tol).count();
            return Ok(Picard {
                u,
                iterations,
                increments,
                ratios,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        last_increment: increments.last().copied().unwrap_or(f64::NAN),
        contraction: ratios,
    })
}

/// Noise columns `εZ(t_n)` on the query grid, or zeros when `ε = 0`.
pub(crate) fn noise_window(
    path: Option<&NoisePath>,
    eps: f64,
    horizon: f64,
    h: f64,
    count: usize,
    dof: usize,
) -> Result<DMatrix<f64>> {
    if eps == 0.0 {
        return Ok(DMatrix::zeros(dof, count));
    }
    let path = path.ok_or_else(|| Error::InvalidInput("a noise path is required when eps != 0".into()))?;
    path.require_window(0.0, horizon)?;
    let stride = stride_for(h, path.h())?;
    Ok(path.window(0, stride, count, dof) * eps)
}

/// Solves the Lyapunov–Perron fixed point for the difference `Ψ = (U₁, U₂)`
/// between the fiber orbit and the base orbit `base = Φ(·, ω, X0)`.
pub fn lyapunov_perron(
    query: &FiberQuery<'_>,
    base: &Trajectory,
    model: &SpectralModel,
    nl: &NonlinearitySpec,
    gap: &GapReport,
) -> Result<FiberSolution> {
    gap.require_admissible()?;
    if gap.n != model.split {
        return Err(Error::InvalidInput(format!(
            "gap report split N = {} differs from the model split {}",
            gap.n, model.split
        )));
    }
    let dof = model.dof();
    if query.x0.len() != dof {
        return Err(Error::DimensionMismatch {
            expected: dof,
            got: query.x0.len(),
        });
    }
    check_zeta(&query.zeta, model)?;
    let grid = LpGrid::new(model, query.horizon, query.h)?;
    let nt = grid.steps;
    check_base(base, model, nt, query.h)?;

    let z = noise_window(query.path, query.eps, query.horizon, query.h, nt, dof)?;
    let base_arg = &model.modes * (base.states.columns(0, nt) + z);
    let u2_0 = model
        .project(&SpectralCoords(&query.zeta.0 - &query.x0.0), Subspace::Stable)
        .0;

    let skip_f = nl.is_zero();
    let run = picard(model, gap, query.h, query.tol, query.max_iter, (dof, nt + 1), |u| {
        let df = if skip_f {
            DMatrix::zeros(dof, nt)
        } else {
            let u_nodal = &model.modes * u.columns(0, nt);
            let df_nodal = nl.map_nodal2(&base_arg, &u_nodal, |f, a, d| f.increment(a, d));
            &model.projector * df_nodal
        };
        grid.sweep(model, &df, &u2_0)
    })?;

    let slow = model.range(Subspace::Slow);
    let mut fiber_value = model.project(&query.x0, Subspace::Slow);
    for i in slow {
        fiber_value[i] += run.u[(i, 0)];
    }
    let (u1, u2) = split_rows(model, &run.u);
    let traj = |states| Trajectory {
        h: query.h,
        states,
        eps: query.eps,
        seed: query.path.filter(|_| query.eps != 0.0).map(|p| p.spec.seed),
    };
    Ok(FiberSolution {
        u1: traj(u1),
        u2: traj(u2),
        fiber_value,
        iterations: run.iterations,
        final_residual: *run.increments.last().unwrap_or(&0.0),
        increments: run.increments,
        contraction_estimates: run.ratios,
    })
}

pub(crate) fn split_rows(model: &SpectralModel, u: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut u1 = u.clone();
    let mut u2 = u.clone();
    for i in model.range(Subspace::Stable) {
        u1.row_mut(i).fill(0.0);
    }
    for i in model.range(Subspace::Slow) {
        u2.row_mut(i).fill(0.0);
    }
    (u1, u2)
}

/// `𝔣(ζ, X0, ω) = X_{1,0} + U₁(0)`.
pub fn fiber_point(
    query: &FiberQuery<'_>,
    base: &Trajectory,
    model: &SpectralModel,
    nl: &NonlinearitySpec,
    gap: &GapReport,
) -> Result<SpectralCoords> {
    lyapunov_perron(query, base, model, nl, gap).map(|s| s.fiber_value)
}

/// Adds `εZ(0)` to a full state.
pub fn shift_by_z(point: &SpectralCoords, path: &NoisePath, eps: f64) -> SpectralCoords {
    if eps == 0.0 {
        return point.clone();
    }
    SpectralCoords(&point.0 + path.coords_at(0, point.len()) * eps)
}

/// Transports a fiber value of the random system to the stochastic one by
/// adding the `H₁` part of `εZ(0)`.
pub fn shift_fiber_by_z(
    fiber_value: &SpectralCoords,
    path: &NoisePath,
    eps: f64,
    model: &SpectralModel,
) -> SpectralCoords {
    model.project(&shift_by_z(fiber_value, path, eps), Subspace::Slow)
}

/// One row of a fiber sweep.
#[derive(Debug, Clone)]
pub struct FiberSweepRow {
    pub zeta: SpectralCoords,
    pub fiber_value: SpectralCoords,
    pub iterations: usize,
    pub residual: f64,
}

/// CSV with the `ζ` coordinates on `H₂` and the fiber coordinates on `H₁`.
pub fn sweep_csv(model: &SpectralModel, rows: &[FiberSweepRow], zeta_modes: usize) -> String {
    let slow = model.range(Subspace::Slow);
    let stable = model.range(Subspace::Stable);
    let zeta_idx: Vec<usize> = stable.take(zeta_modes).collect();
    let mut out = String::new();
    let mut header: Vec<String> = zeta_idx.iter().map(|i| format!("zeta_{}", i + 1)).collect();
    header.extend(slow.clone().map(|i| format!("f_{}", i + 1)));
    header.push("iterations".into());
    header.push("residual".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut cells: Vec<String> = zeta_idx.iter().map(|&i| format!("{:?}", row.zeta[i])).collect();
        cells.extend(slow.clone().map(|i| format!("{:?}", row.fiber_value[i])));
        cells.push(row.iterations.to_string());
        cells.push(format!("{:?}", row.residual));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble, CoefficientSet, DomainSpec};
    use crate::dynamics::{estimate_lf, integrate};
    use crate::noise::{sample_stationary, NoiseSpec, TimeGrid};
    use crate::spectral::eigendecompose;
    use approx::assert_abs_diff_eq;

    fn model(dof: usize, split: usize) -> SpectralModel {
        let d = DomainSpec::with_dof(0.0, 1.0, dof).unwrap();
        eigendecompose(&assemble(&d, &CoefficientSet::unit()).unwrap(), split).unwrap()
    }

    #[test]
    fn gap_formula_hand_value() {
        let k = gap_k(1.0, 10.0, 1.0, 0.0, 4.0).unwrap();
        assert_abs_diff_eq!(k, 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(gap_k(1.0, 10.0, 0.0, 0.3, 4.0).unwrap(), 0.0);
        assert!(gap_k(1.0, 10.0, 1.0, 0.0, 1.0).is_err());
        assert!(gap_k(1.0, 10.0, 1.0, 0.0, 11.0).is_err());
        assert!(gap_k(1.0, 10.0, 1.0, 1.0, 4.0).is_err());
        assert!(gap_k(1.0, 10.0, 1.0, 0.25, 1.0 + 1e-6).unwrap() > 1e5);
        assert!(gap_k(1.0, 10.0, 1.0, 0.25, 10.0 - 1e-6).unwrap() > 1e4);
    }

    #[test]
    fn c_alpha_values() {
        assert_eq!(c_alpha(0.0), 1.0);
        // 0.5^0.5 Γ(0.5) = sqrt(π/2)
        assert_abs_diff_eq!(c_alpha(0.5), (std::f64::consts::PI / 2.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn golden_section_matches_calculus() {
        let r = select_beta_for(1.0, 10.0, 1.0, 0.0, 1).unwrap();
        let s2 = 2f64.sqrt();
        let beta_star = (10.0 + s2) / (1.0 + s2);
        assert_abs_diff_eq!(r.beta, beta_star, epsilon = 1e-6);
        let k_star = 1.0 / (beta_star - 1.0) + 2.0 / (10.0 - beta_star);
        assert_abs_diff_eq!(r.k, k_star, epsilon = 1e-10);
        assert!(r.admissible);
        for d in [-1e-3, 1e-3] {
            assert!(gap_k(1.0, 10.0, 1.0, 0.0, r.beta + d).unwrap() > r.k);
        }
    }

    #[test]
    fn golden_section_is_stationary_with_alpha() {
        let r = select_beta_for(2.0, 15.0, 0.4, 0.3, 1).unwrap();
        let grid_min = (1..20000)
            .map(|j| gap_k(2.0, 15.0, 0.4, 0.3, 2.0 + 13.0 * j as f64 / 20000.0).unwrap())
            .fold(f64::INFINITY, f64::min);
        assert!(r.k <= grid_min * (1.0 + 1e-6));
        assert!((grid_min - r.k) / r.k < 1e-6);
    }

    #[test]
    fn zero_lipschitz_uses_midpoint() {
        let r = select_beta_for(1.0, 3.0, 0.0, 0.2, 1).unwrap();
        assert_eq!(r.beta, 2.0);
        assert_eq!(r.k, 0.0);
        assert_eq!(r.implicit_beta, None);
        assert!(select_beta_for(2.0, 2.0, 1.0, 0.0, 1).is_err());
    }

    #[test]
    fn implicit_relation_root() {
        let r = select_beta_for(1.0, 10.0, 0.2, 0.25, 1).unwrap();
        let b = r.implicit_beta.unwrap();
        let k = gap_k(1.0, 10.0, 0.2, 0.25, b).unwrap();
        assert!((b - 1.0 - 2.0 * 0.2 / k).abs() < 1e-9);
        assert_eq!(r.implicit_k, Some(k));
    }

    fn fixture() -> (SpectralModel, NoisePath) {
        let m = model(24, 2);
        let path = sample_stationary(
            &NoiseSpec::uniform(4, 11),
            m.lambdas.as_slice(),
            TimeGrid::covering(0.01, 2.0, 2.0).unwrap(),
        )
        .unwrap();
        (m, path)
    }

    fn query<'a>(m: &SpectralModel, path: &'a NoisePath, eps: f64) -> FiberQuery<'a> {
        FiberQuery {
            x0: SpectralCoords::from_leading(m.dof(), &[0.8, -0.6, 0.4, 0.3]),
            zeta: SpectralCoords::from_leading(m.dof(), &[0.0, 0.0, 0.5, -0.4, 0.3]),
            path: Some(path),
            eps,
            horizon: 2.0,
            h: 0.01,
            tol: 1e-11,
            max_iter: 200,
        }
    }

    #[test]
    fn zero_nonlinearity_is_exact_in_one_iteration() {
        let (m, path) = fixture();
        let nl = NonlinearitySpec::zero();
        let gap = select_beta(&m, 0.0, 0.25, 2).unwrap();
        let q = query(&m, &path, 0.3);
        let base = integrate(&q.x0, Some(&path), q.eps, q.horizon, q.h, &m, &nl).unwrap();
        let sol = lyapunov_perron(&q, &base, &m, &nl, &gap).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.u1.states.iter().all(|&v| v == 0.0));
        assert_eq!(sol.fiber_value, m.project(&q.x0, Subspace::Slow));
        let u2_0 = m.project(&SpectralCoords(&q.zeta.0 - &q.x0.0), Subspace::Stable);
        for n in [0, 37, 200] {
            let exact = m.semigroup_apply(Subspace::Stable, n as f64 * q.h, &u2_0).unwrap();
            assert_abs_diff_eq!(sol.u2.state(n).0, exact.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn base_point_lies_on_its_own_fiber() {
        let (m, path) = fixture();
        let nl = NonlinearitySpec::tanh(0.5);
        let gap = select_beta(&m, estimate_lf(&nl, &m, 0.25), 0.25, 2).unwrap();
        let mut q = query(&m, &path, 0.2);
        q.zeta = m.project(&q.x0, Subspace::Stable);
        let base = integrate(&q.x0, Some(&path), q.eps, q.horizon, q.h, &m, &nl).unwrap();
        let sol = lyapunov_perron(&q, &base, &m, &nl, &gap).unwrap();
        assert_eq!(sol.fiber_value, m.project(&q.x0, Subspace::Slow));
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn linear_nonlinearity_matches_per_mode_solve() {
        // f = g = c u collocates to F(X) = c X, so the modes decouple: U₁ ≡ 0
        // and U₂ follows the scalar recursion u ← (e^{-λh} + c w) u.
        let (m, path) = fixture();
        let c = 0.3;
        let nl = NonlinearitySpec::linear(c);
        let gap = select_beta(&m, estimate_lf(&nl, &m, 0.25), 0.25, 2).unwrap();
        let q = query(&m, &path, 0.2);
        let base = integrate(&q.x0, Some(&path), q.eps, q.horizon, q.h, &m, &nl).unwrap();
        let sol = lyapunov_perron(&q, &base, &m, &nl, &gap).unwrap();
        let coeffs = ExpEulerCoeffs::new(&m.lambdas, q.h);
        for i in 2..m.dof() {
            let mut u = q.zeta[i] - q.x0[i];
            for n in 0..=200 {
                assert!((sol.u2.states[(i, n)] - u).abs() <= 1e-8 * (1.0 + u.abs()));
                u *= coeffs.decay[i] + c * coeffs.weight[i];
            }
        }
        assert!(sol.u1.states.amax() <= 1e-8);
    }

    #[test]
    fn contraction_ratios_respect_gap() {
        let (m, path) = fixture();
        let nl = NonlinearitySpec::tanh(0.5);
        let gap = select_beta(&m, estimate_lf(&nl, &m, 0.25), 0.25, 2).unwrap();
        assert!(gap.admissible);
        let q = query(&m, &path, 0.3);
        let base = integrate(&q.x0, Some(&path), q.eps, q.horizon, q.h, &m, &nl).unwrap();
        let sol = lyapunov_perron(&q, &base, &m, &nl, &gap).unwrap();
        assert!(sol.final_residual <= q.tol);
        assert!(sol.iterations > 1);
        for r in &sol.contraction_estimates {
            assert!(*r <= gap.k + 0.1, "{r} vs k = {}", gap.k);
        }
    }

    #[test]
    fn fixed_point_residual_reproduces_solution() {
        // one more exact-kernel sweep from the converged Ψ is a no-op up to tol
        let (m, path) = fixture();
        let nl = NonlinearitySpec::tanh(0.8);
        let gap = select_beta(&m, estimate_lf(&nl, &m, 0.25), 0.25, 2).unwrap();
        let q = query(&m, &path, 0.3);
        let base = integrate(&q.x0, Some(&path), q.eps, q.horizon, q.h, &m, &nl).unwrap();
        let sol = lyapunov_perron(&q, &base, &m, &nl, &gap).unwrap();
        let u = &sol.u1.states + &sol.u2.states;
        let grid = LpGrid::new(&m, q.horizon, q.h).unwrap();
        let z = noise_window(q.path, q.eps, q.horizon, q.h, 200, m.dof()).unwrap();
        let arg = &m.modes * (base.states.columns(0, 200) + z);
        let un = &m.modes * u.columns(0, 200);
        let df = &m.projector * nl.map_nodal2(&arg, &un, |f, a, d| f.increment(a, d));
        let again = grid.sweep(&m, &df, &sol.u2.states.column(0).into_owned());
        let res = lp_norm(&m, &(again - &u), q.h, gap.alpha, gap.beta);
        assert!(res <= 2.0 * q.tol, "residual {res}");
    }

    #[test]
    fn fiber_orbit_is_a_discrete_trajectory() {
        // X + Ψ satisfies the same exponential-Euler recursion as the base
        let (m, path) = fixture();
        let nl = NonlinearitySpec::tanh(0.8);
        let gap = select_beta(&m, estimate_lf(&nl, &m, 0.25), 0.25, 2).unwrap();
        let q = query(&m, &path, 0.3);
        let base = integrate(&q.x0, Some(&path), q.eps, q.horizon, q.h, &m, &nl).unwrap();
        let sol = lyapunov_perron(&q, &base, &m, &nl, &gap).unwrap();
        let start = SpectralCoords(&sol.fiber_value.0 + &q.zeta.0);
        let orbit = integrate(&start, Some(&path), q.eps, q.horizon, q.h, &m, &nl).unwrap();
        let fiber_orbit = &base.states + &sol.u1.states + &sol.u2.states;
        for n in [0, 50, 100] {
            assert!((orbit.state(n).0 - fiber_orbit.column(n)).amax() < 1e-9);
        }
    }

    #[test]
    fn rejections() {
        let (m, path) = fixture();
        let nl = NonlinearitySpec::tanh(0.5);
        let bad_gap = select_beta(&m, 50.0, 0.25, 2).unwrap();
        assert!(!bad_gap.admissible);
        let q = query(&m, &path, 0.3);
        let base = integrate(&q.x0, Some(&path), q.eps, q.horizon, q.h, &m, &nl).unwrap();
        assert!(matches!(
            lyapunov_perron(&q, &base, &m, &nl, &bad_gap),
            Err(Error::GapInadmissible { .. })
        ));
        let gap = select_beta(&m, estimate_lf(&nl, &m, 0.25), 0.25, 2).unwrap();
        let mut bad = q.clone();
        bad.zeta = SpectralCoords::unit(m.dof(), 0);
        assert!(lyapunov_perron(&bad, &base, &m, &nl, &gap).is_err());
        let mut short = q.clone();
        short.horizon = 1.0;
        assert!(lyapunov_perron(&short, &base, &m, &nl, &gap).is_err());
        let mut capped = q.clone();
        capped.max_iter = 2;
        match lyapunov_perron(&capped, &base, &m, &nl, &gap) {
            Err(Error::NotConverged { contraction, .. }) => assert_eq!(contraction.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shift_by_noise_state() {
        let (m, path) = fixture();
        let v = SpectralCoords::from_leading(m.dof(), &[1.0, 2.0]);
        assert_eq!(shift_fiber_by_z(&v, &path, 0.0, &m), v);
        let a = shift_fiber_by_z(&v, &path, 0.2, &m);
        let b = shift_fiber_by_z(&v, &path, 0.4, &m);
        assert_abs_diff_eq!(&b.0 - &v.0, (&a.0 - &v.0) * 2.0, epsilon = 1e-15);
        let back = shift_fiber_by_z(&a, &path, -0.2, &m);
        assert_abs_diff_eq!(back.0, v.0, epsilon = 1e-15);
        assert!(a.0.rows(2, m.dof() - 2).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sweep_csv_layout() {
        let m = model(8, 2);
        let rows = vec![FiberSweepRow {
            zeta: SpectralCoords::from_leading(8, &[0.0, 0.0, 0.5]),
            fiber_value: SpectralCoords::from_leading(8, &[1.0, 2.0]),
            iterations: 3,
            residual: 1e-12,
        }];
        let csv = sweep_csv(&m, &rows, 2);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "zeta_3,zeta_4,f_1,f_2,iterations,residual");
        assert_eq!(lines.next().unwrap(), "0.5,0.0,1.0,2.0,3,1e-12");
    }
}
