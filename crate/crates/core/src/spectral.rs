//! Generalized eigendecomposition of `(K, M)` and the spectral calculus built on it.
//!
//! Eigenvectors are normalized in the mass inner product, so the coordinates
//! `c_i = E_iᵀ M X` are exactly the `H` inner products `(X, E_i)`. The first `N`
//! modes span the slow space `H₁`, the rest span the stable space `H₂`.

use std::ops::{Deref, DerefMut, Range};

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::assembly::AssembledForms;
use crate::error::{Error, Result};

/// Coordinates of a state in the eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoords(pub DVector<f64>);

impl SpectralCoords {
    pub fn zeros(dof: usize) -> Self {
        Self(DVector::zeros(dof))
    }

    pub fn unit(dof: usize, k: usize) -> Self {
        let mut v = DVector::zeros(dof);
        v[k] = 1.0;
        Self(v)
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(DVector::from_vec(v))
    }

    /// Leading coordinates taken from `lead`, the rest zero.
    pub fn from_leading(dof: usize, lead: &[f64]) -> Self {
        let mut v = DVector::zeros(dof);
        for (slot, x) in v.iter_mut().zip(lead) {
            *slot = *x;
        }
        Self(v)
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.0
    }

    /// Copy with every coordinate outside `range` set to zero.
    pub fn restricted(&self, range: Range<usize>) -> Self {
        let mut out = DVector::zeros(self.0.len());
        for i in range {
            out[i] = self.0[i];
        }
        Self(out)
    }
}

impl Deref for SpectralCoords {
    type Target = DVector<f64>;
    fn deref(&self) -> &DVector<f64> {
        &self.0
    }
}

impl DerefMut for SpectralCoords {
    fn deref_mut(&mut self) -> &mut DVector<f64> {
        &mut self.0
    }
}

/// Which invariant subspace a semigroup or projection acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subspace {
    /// `H₁`, modes `0..N`.
    Slow,
    /// `H₂`, modes `N..dof`.
    Stable,
    Full,
}

#[derive(Debug, Clone)]
pub struct SpectralModel {
    /// Ascending eigenvalues.
    pub lambdas: DVector<f64>,
    /// Columns are the M-orthonormal eigenvectors (nodal values).
    pub modes: DMatrix<f64>,
    /// `Eᵀ M`, maps nodal vectors to coordinates.
    pub projector: DMatrix<f64>,
    pub mass: DMatrix<f64>,
    /// Dimension of `H₁`.
    pub split: usize,
}

/// Solves `K E = λ M E` through a Cholesky reduction to a standard symmetric problem.
pub fn eigendecompose(forms: &AssembledForms, split: usize) -> Result<SpectralModel> {
    let n = forms.dof();
    if split == 0 || split >= n {
        return Err(Error::InvalidInput(format!(
            "split index must satisfy 1 <= N < dof = {n}, got {split}"
        )));
    }
    let chol =
        Cholesky::new(forms.mass.clone()).ok_or_else(|| Error::Eigen("mass matrix is not positive definite".into()))?;
    let l = chol.l();

    // C = L⁻¹ K L⁻ᵀ
    let linv_k = l
        .solve_lower_triangular(&forms.stiffness)
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let c_t = l
        .solve_lower_triangular(&linv_k.transpose())
        .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
    let c = (&c_t + c_t.transpose()) * 0.5;

    let eig = SymmetricEigen::try_new(c, f64::EPSILON, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let lt = l.transpose();
    let mut lambdas = DVector::zeros(n);
    let mut modes = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        lambdas[k] = eig.eigenvalues[src];
        let y = eig.eigenvectors.column(src).into_owned();
        let mut e = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Eigen("singular Cholesky factor".into()))?;
        // sign convention: largest-magnitude entry positive
        let pivot = e.iamax();
        if e[pivot] < 0.0 {
            e.neg_mut();
        }
        modes.set_column(k, &e);
    }
    if !(lambdas[0] > 0.0) {
        return Err(Error::Eigen(format!(
            "smallest eigenvalue {} is not positive",
            lambdas[0]
        )));
    }
    let projector = modes.transpose() * &forms.mass;
    Ok(SpectralModel {
        lambdas,
        modes,
        projector,
        mass: forms.mass.clone(),
        split,
    })
}

impl SpectralModel {
    pub fn dof(&self) -> usize {
        self.lambdas.len()
    }

    pub fn lambda_n(&self) -> f64 {
        self.lambdas[self.split - 1]
    }

    pub fn lambda_n1(&self) -> f64 {
        self.lambdas[self.split]
    }

    pub fn range(&self, part: Subspace) -> Range<usize> {
        match part {
            Subspace::Slow => 0..self.split,
            Subspace::Stable => self.split..self.dof(),
            Subspace::Full => 0..self.dof(),
        }
    }

    /// Same eigen data with a different `H₁ ⊕ H₂` split.
    pub fn with_split(&self, split: usize) -> Result<Self> {
        if split == 0 || split >= self.dof() {
            return Err(Error::InvalidInput(format!(
                "split index must satisfy 1 <= N < dof = {}, got {split}",
                self.dof()
            )));
        }
        Ok(Self { split, ..self.clone() })
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.dof() {
            return Err(Error::DimensionMismatch {
                expected: self.dof(),
                got: len,
            });
        }
        Ok(())
    }

    pub fn to_coords(&self, nodal: &DVector<f64>) -> Result<SpectralCoords> {
        self.check_len(nodal.len())?;
        Ok(SpectralCoords(&self.projector * nodal))
    }

    pub fn from_coords(&self, coords: &SpectralCoords) -> Result<DVector<f64>> {
        self.check_len(coords.len())?;
        Ok(&self.modes * &coords.0)
    }

    pub fn project(&self, coords: &SpectralCoords, part: Subspace) -> SpectralCoords {
        coords.restricted(self.range(part))
    }

    /// `λ_i^α` for every mode, with `0⁰ = 1`.
    pub fn alpha_weights(&self, alpha: f64) -> DVector<f64> {
        self.lambdas.map(|l| l.powf(alpha))
    }

    /// The `D(A^α)` norm `(Σ λ_i^{2α} c_i²)^{1/2}`.
    pub fn alpha_norm(&self, coords: &DVector<f64>, alpha: f64) -> f64 {
        self.alpha_norm_on(coords, alpha, 0..coords.len())
    }

    pub fn alpha_norm_on(&self, coords: &DVector<f64>, alpha: f64, range: Range<usize>) -> f64 {
        range
            .map(|i| {
                let w = self.lambdas[i].powf(alpha) * coords[i];
                w * w
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Applies `e^{-A t}` restricted to `part`; the other coordinates are zeroed.
    pub fn semigroup_apply(&self, part: Subspace, t: f64, coords: &SpectralCoords) -> Result<SpectralCoords> {
        self.check_len(coords.len())?;
        if t < 0.0 && part != Subspace::Slow {
            return Err(Error::BackwardStable(t));
        }
        let mut out = DVector::zeros(self.dof());
        for i in self.range(part) {
            out[i] = (-self.lambdas[i] * t).exp() * coords[i];
        }
        Ok(SpectralCoords(out))
    }

    /// Numerical check of the semigroup bounds on `H₂` (forward) and `H₁` (backward).
    pub fn check_semigroup_bounds(&self, alpha: f64, t_samples: &[f64]) -> SemigroupBoundReport {
        check_semigroup_bounds(self, alpha, t_samples)
    }
}

/// One sampled comparison of `sup_i λ_i^α e^{-λ_i t}` against its bound.
#[derive(Debug, Clone, Serialize)]
pub struct BoundSample {
    /// 1: stable part, `t > 0`. 2: slow part, `t ≤ 0`.
    pub item: u8,
    pub t: f64,
    pub lhs: f64,
    /// Bound using the `α^α / t^α` prefactor.
    pub rhs: f64,
    pub holds: bool,
    /// Bound using the `α / t^α` prefactor, recorded for comparison only.
    pub rhs_linear_prefactor: f64,
    pub holds_linear_prefactor: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SemigroupBoundReport {
    pub alpha: f64,
    pub split: usize,
    pub samples: Vec<BoundSample>,
    pub violations: usize,
    pub violations_linear_prefactor: usize,
}

impl SemigroupBoundReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn sup_weighted_exp(lambdas: &[f64], alpha: f64, t: f64) -> f64 {
    lambdas
        .iter()
        .map(|&l| l.powf(alpha) * (-l * t).exp())
        .fold(0.0, f64::max)
}

/// Positive samples test the stable-part bound, non-positive samples the slow-part bound.
pub fn check_semigroup_bounds(model: &SpectralModel, alpha: f64, t_samples: &[f64]) -> SemigroupBoundReport {
    let lam = model.lambdas.as_slice();
    let (slow, stable) = lam.split_at(model.split);
    let lam_n = model.lambda_n();
    let lam_n1 = model.lambda_n1();
    // relative slack for rounding in the comparison
    let slack = 1.0 + 1e-12;
    let mut samples = Vec::with_capacity(t_samples.len());
    for &t in t_samples {
        let sample = if t > 0.0 {
            let lhs = sup_weighted_exp(stable, alpha, t);
            let decay = (-lam_n1 * t).exp();
            let rhs = (alpha.powf(alpha) / t.powf(alpha) + lam_n1.powf(alpha)) * decay;
            let rhs_lin = (alpha / t.powf(alpha) + lam_n1.powf(alpha)) * decay;
            BoundSample {
                item: 1,
                t,
                lhs,
                rhs,
                holds: lhs <= rhs * slack,
                rhs_linear_prefactor: rhs_lin,
                holds_linear_prefactor: lhs <= rhs_lin * slack,
            }
        } else {
            let lhs = sup_weighted_exp(slow, alpha, t);
            let rhs = lam_n.powf(alpha) * (-lam_n * t).exp();
            BoundSample {
                item: 2,
                t,
                lhs,
                rhs,
                holds: lhs <= rhs * slack,
                rhs_linear_prefactor: rhs,
                holds_linear_prefactor: lhs <= rhs * slack,
            }
        };
        samples.push(sample);
    }
    let violations = samples.iter().filter(|s| !s.holds).count();
    let violations_linear_prefactor = samples.iter().filter(|s| !s.holds_linear_prefactor).count();
    SemigroupBoundReport {
        alpha,
        split: model.split,
        samples,
        violations,
        violations_linear_prefactor,
    }
}

/// Spectrum as CSV with columns `k, lambda_k` (1-based `k`).
pub fn spectrum_csv(model: &SpectralModel) -> String {
    let mut out = String::from("k,lambda_k\n");
    for (k, l) in model.lambdas.iter().enumerate() {
        out.push_str(&format!("{},{:?}\n", k + 1, l));
    }
    out
}
