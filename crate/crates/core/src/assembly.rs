//! Finite element assembly of the dynamic-boundary bilinear form on an interval.
//!
//! The state space is `L²(D) × L²(∂D)` with `D = (x_lo, x_hi)`. Piecewise-linear
//! hat functions carry the interior field, and the two endpoint values are kept
//! as genuine unknowns, so the boundary component of the inner product is a unit
//! point mass on each corner degree of freedom.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Uniform mesh on `[x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainSpec {
    pub x_lo: f64,
    pub x_hi: f64,
    pub n_cells: usize,
}

impl DomainSpec {
    pub fn new(x_lo: f64, x_hi: f64, n_cells: usize) -> Result<Self> {
        if !(x_lo.is_finite() && x_hi.is_finite()) || x_lo >= x_hi {
            return Err(Error::InvalidInput(format!(
                "domain requires x_lo < x_hi, got [{x_lo}, {x_hi}]"
            )));
        }
        if n_cells < 2 {
            return Err(Error::InvalidInput(format!(
                "n_cells must be at least 2, got {n_cells}"
            )));
        }
        Ok(Self { x_lo, x_hi, n_cells })
    }

    /// Mesh with `dof` total unknowns (`dof - 1` cells).
    pub fn with_dof(x_lo: f64, x_hi: f64, dof: usize) -> Result<Self> {
        Self::new(x_lo, x_hi, dof.saturating_sub(1))
    }

    pub fn dof(&self) -> usize {
        self.n_cells + 1
    }

    pub fn interior_nodes(&self) -> usize {
        self.n_cells - 1
    }

    pub fn cell_width(&self) -> f64 {
        (self.x_hi - self.x_lo) / self.n_cells as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_cells {
            self.x_hi
        } else {
            self.x_lo + i as f64 * self.cell_width()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.dof()).map(|i| self.node(i)).collect()
    }
}

pub type CoefficientFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Coefficients of the operator: diffusion `a`, zeroth-order term `a0`,
/// and the boundary coefficients `c` at each endpoint.
#[derive(Clone)]
pub struct CoefficientSet {
    pub a: CoefficientFn,
    pub a0: CoefficientFn,
    pub c_lo: f64,
    pub c_hi: f64,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("c_lo", &self.c_lo)
            .field("c_hi", &self.c_hi)
            .finish_non_exhaustive()
    }
}

impl CoefficientSet {
    pub fn new(
        a: impl Fn(f64) -> f64 + Send + Sync + 'static,
        a0: impl Fn(f64) -> f64 + Send + Sync + 'static,
        c_lo: f64,
        c_hi: f64,
    ) -> Self {
        Self {
            a: Arc::new(a),
            a0: Arc::new(a0),
            c_lo,
            c_hi,
        }
    }

    pub fn constant(a: f64, a0: f64, c_lo: f64, c_hi: f64) -> Self {
        Self::new(move |_| a, move |_| a0, c_lo, c_hi)
    }

    /// `a = a0 = c = 1`; the constant function is then an eigenfunction with
    /// eigenvalue one.
    pub fn unit() -> Self {
        Self::constant(1.0, 1.0, 1.0, 1.0)
    }

    /// Smoothly varying coefficients on the reference interval.
    pub fn graded() -> Self {
        Self::new(|x| 1.0 + 0.5 * x, |x| 1.0 + x * x, 1.0, 2.0)
    }

    fn validate(&self, domain: &DomainSpec) -> Result<()> {
        if !(self.c_lo > 0.0) {
            return Err(Error::NonPositiveCoefficient {
                name: "c_lo",
                node: 0,
                x: domain.x_lo,
                value: self.c_lo,
            });
        }
        if !(self.c_hi > 0.0) {
            return Err(Error::NonPositiveCoefficient {
                name: "c_hi",
                node: domain.n_cells,
                x: domain.x_hi,
                value: self.c_hi,
            });
        }
        let h = domain.cell_width();
        for i in 0..domain.dof() {
            let x = domain.node(i);
            check_positive("a", &self.a, i, x)?;
            check_positive("a0", &self.a0, i, x)?;
            if i < domain.n_cells {
                // quadrature point of cell i, reported against its left node
                let m = x + 0.5 * h;
                check_positive("a", &self.a, i, m)?;
                check_positive("a0", &self.a0, i, m)?;
            }
        }
        Ok(())
    }
}

fn check_positive(name: &'static str, f: &CoefficientFn, node: usize, x: f64) -> Result<()> {
    let value = f(x);
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveCoefficient { name, node, x, value })
    }
}

/// Stiffness and mass matrices of the generalized eigenproblem `K E = λ M E`.
#[derive(Debug, Clone)]
pub struct AssembledForms {
    pub domain: DomainSpec,
    pub stiffness: DMatrix<f64>,
    pub mass: DMatrix<f64>,
}

impl AssembledForms {
    pub fn dof(&self) -> usize {
        self.domain.dof()
    }
}

/// Assembles `K` and `M` with linear elements and midpoint quadrature of the
/// coefficients on each cell.
pub fn assemble(domain: &DomainSpec, coeffs: &CoefficientSet) -> Result<AssembledForms> {
    coeffs.validate(domain)?;
    let n = domain.dof();
    let h = domain.cell_width();
    let mut k = DMatrix::zeros(n, n);
    let mut m = DMatrix::zeros(n, n);

    for cell in 0..domain.n_cells {
        let mid = domain.node(cell) + 0.5 * h;
        let a = (coeffs.a)(mid);
        let a0 = (coeffs.a0)(mid);
        let (i, j) = (cell, cell + 1);

        let diff = a / h;
        let mass_diag = h / 3.0;
        let mass_off = h / 6.0;

        k[(i, i)] += diff + a0 * mass_diag;
        k[(j, j)] += diff + a0 * mass_diag;
        k[(i, j)] += -diff + a0 * mass_off;
        k[(j, i)] += -diff + a0 * mass_off;

        m[(i, i)] += mass_diag;
        m[(j, j)] += mass_diag;
        m[(i, j)] += mass_off;
        m[(j, i)] += mass_off;
    }

    // boundary component: counting measure on the two endpoints
    k[(0, 0)] += coeffs.c_lo;
    k[(n - 1, n - 1)] += coeffs.c_hi;
    m[(0, 0)] += 1.0;
    m[(n - 1, n - 1)] += 1.0;

    Ok(AssembledForms {
        domain: *domain,
        stiffness: k,
        mass: m,
    })
}
