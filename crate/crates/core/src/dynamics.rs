//! Nemytskii nonlinearity and exponential-Euler time stepping in eigencoordinates.
//!
//! `F(X) = (f(u), g(γu))` is applied by collocation: the state is synthesized
//! at the nodes, `f` acts on interior nodes and `g` on the two boundary nodes,
//! and the nodal result is projected back with `Eᵀ M`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::noise::{steps_for, stride_for, NoisePath};
use crate::spectral::{SpectralCoords, SpectralModel};

/// Piecewise-linear interpolant, constant beyond the first and last knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "table needs matching knot/value lists of length >= 2 (got {} and {})",
                xs.len(),
                ys.len()
            )));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("table knots must be strictly increasing".into()));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("table entries must be finite".into()));
        }
        Ok(Self { xs, ys })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    /// Index of the segment containing `x`, `None` outside the knot range.
    fn segment(&self, x: f64) -> Option<usize> {
        let n = self.xs.len();
        if x < self.xs[0] || x > self.xs[n - 1] {
            return None;
        }
        let i = self.xs.partition_point(|&k| k <= x);
        Some(i.saturating_sub(1).min(n - 2))
    }

    fn slope_of(&self, i: usize) -> f64 {
        (self.ys[i + 1] - self.ys[i]) / (self.xs[i + 1] - self.xs[i])
    }

    pub fn value(&self, x: f64) -> f64 {
        let n = self.xs.len();
        match self.segment(x) {
            Some(i) => self.ys[i] + self.slope_of(i) * (x - self.xs[i]),
            None if x < self.xs[0] => self.ys[0],
            None => self.ys[n - 1],
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.segment(x).map_or(0.0, |i| self.slope_of(i))
    }

    pub fn max_slope(&self) -> f64 {
        (0..self.xs.len() - 1)
            .map(|i| self.slope_of(i).abs())
            .fold(0.0, f64::max)
    }
}

/// Scalar nonlinearity with a certified global Lipschitz constant.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarFn {
    Zero,
    Linear { slope: f64 },
    Tanh { scale: f64 },
    Sine { amplitude: f64 },
    Table(PiecewiseLinear),
}

impl ScalarFn {
    pub fn value(&self, u: f64) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Linear { slope } => slope * u,
            ScalarFn::Tanh { scale } => scale * u.tanh(),
            ScalarFn::Sine { amplitude } => amplitude * u.sin(),
            ScalarFn::Table(t) => t.value(u),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Linear { slope } => *slope,
            ScalarFn::Tanh { scale } => {
                let s = 1.0 / u.cosh();
                scale * s * s
            }
            ScalarFn::Sine { amplitude } => amplitude * u.cos(),
            ScalarFn::Table(t) => t.slope(u),
        }
    }

    /// `f(a + du) - f(a)`, evaluated without cancellation when `du` is small.
    pub fn increment(&self, a: f64, du: f64) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Linear { slope } => slope * du,
            ScalarFn::Tanh { scale } => {
                let ta = a.tanh();
                let tu = du.tanh();
                let sech = 1.0 / a.cosh();
                scale * tu * sech * sech / (1.0 + ta * tu)
            }
            ScalarFn::Sine { amplitude } => 2.0 * amplitude * (a + 0.5 * du).cos() * (0.5 * du).sin(),
            ScalarFn::Table(t) => match (t.segment(a), t.segment(a + du)) {
                (Some(i), Some(j)) if i == j => t.slope_of(i) * du,
                _ => t.value(a + du) - t.value(a),
            },
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            ScalarFn::Zero => 0.0,
            ScalarFn::Linear { slope } => slope.abs(),
            ScalarFn::Tanh { scale } => scale.abs(),
            ScalarFn::Sine { amplitude } => amplitude.abs(),
            ScalarFn::Table(t) => t.max_slope(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarFn::Zero => true,
            ScalarFn::Linear { slope } => *slope == 0.0,
            ScalarFn::Tanh { scale } => *scale == 0.0,
            ScalarFn::Sine { amplitude } => *amplitude == 0.0,
            ScalarFn::Table(t) => t.ys.iter().all(|&y| y == 0.0),
        }
    }
}

/// Interior nonlinearity `f` and boundary nonlinearity `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearitySpec {
    pub interior: ScalarFn,
    pub boundary: ScalarFn,
}

impl NonlinearitySpec {
    pub fn new(interior: ScalarFn, boundary: ScalarFn) -> Self {
        Self { interior, boundary }
    }

    pub fn zero() -> Self {
        Self::new(ScalarFn::Zero, ScalarFn::Zero)
    }

    pub fn linear(slope: f64) -> Self {
        Self::new(ScalarFn::Linear { slope }, ScalarFn::Linear { slope })
    }

    pub fn tanh(scale: f64) -> Self {
        Self::new(ScalarFn::Tanh { scale }, ScalarFn::Tanh { scale })
    }

    pub fn lip_f(&self) -> f64 {
        self.interior.lipschitz()
    }

    pub fn lip_g(&self) -> f64 {
        self.boundary.lipschitz()
    }

    pub fn is_zero(&self) -> bool {
        self.interior.is_zero() && self.boundary.is_zero()
    }

    /// Second derivatives vanish identically, so `F` is affine.
    pub fn is_affine(&self) -> bool {
        let affine = |s: &ScalarFn| matches!(s, ScalarFn::Zero | ScalarFn::Linear { .. });
        affine(&self.interior) && affine(&self.boundary)
    }

    fn at_node(&self, row: usize, dof: usize) -> &ScalarFn {
        if row == 0 || row + 1 == dof {
            &self.boundary
        } else {
            &self.interior
        }
    }

    /// `F` on a nodal vector.
    pub fn apply_nodal(&self, nodal: &DVector<f64>) -> DVector<f64> {
        let n = nodal.len();
        DVector::from_fn(n, |r, _| self.at_node(r, n).value(nodal[r]))
    }

    /// Entrywise `op(fn_at_row, a, b)` over matching nodal matrices.
    pub(crate) fn map_nodal2(
        &self,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
        op: impl Fn(&ScalarFn, f64, f64) -> f64,
    ) -> DMatrix<f64> {
        let dof = a.nrows();
        let mut out = DMatrix::zeros(dof, a.ncols());
        for c in 0..a.ncols() {
            for r in 0..dof {
                out[(r, c)] = op(self.at_node(r, dof), a[(r, c)], b[(r, c)]);
            }
        }
        out
    }
}

/// `F(X)` in coordinates.
pub fn eval_f(coords: &SpectralCoords, model: &SpectralModel, nl: &NonlinearitySpec) -> SpectralCoords {
    let nodal = &model.modes * &coords.0;
    SpectralCoords(&model.projector * nl.apply_nodal(&nodal))
}

/// Fréchet derivative `F'(X) V`: the diagonal Nemytskii Jacobian at the nodal
/// values of `X` applied to `V`, then projected.
pub fn eval_f_derivative(
    at: &SpectralCoords,
    direction: &SpectralCoords,
    model: &SpectralModel,
    nl: &NonlinearitySpec,
) -> SpectralCoords {
    let a = &model.modes * &at.0;
    let v = &model.modes * &direction.0;
    let n = a.len();
    let jv = DVector::from_fn(n, |r, _| nl.at_node(r, n).derivative(a[r]) * v[r]);
    SpectralCoords(&model.projector * jv)
}

/// `L_F = max(lip_f, lip_g) λ_1^{-α}`: the nodal Lipschitz constant relaxed to
/// the `D(A^α)` norm through `‖·‖ ≤ λ_1^{-α} ‖·‖_{D(A^α)}`.
pub fn estimate_lf(nl: &NonlinearitySpec, model: &SpectralModel, alpha: f64) -> f64 {
    nl.lip_f().max(nl.lip_g()) * model.lambdas[0].powf(-alpha)
}

/// Per-mode exponential-Euler coefficients for a step `h`.
#[derive(Debug, Clone)]
pub struct ExpEulerCoeffs {
    /// `e^{-λ h}`
    pub decay: DVector<f64>,
    /// `(1 - e^{-λ h}) / λ`
    pub weight: DVector<f64>,
}

impl ExpEulerCoeffs {
    pub fn new(lambdas: &DVector<f64>, h: f64) -> Self {
        Self {
            decay: lambdas.map(|l| (-l * h).exp()),
            weight: lambdas.map(|l| -(-l * h).exp_m1() / l),
        }
    }
}

/// A discrete trajectory on `t_n = n h`, states as columns.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub h: f64,
    pub states: DMatrix<f64>,
    pub eps: f64,
    pub seed: Option<u64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn steps(&self) -> usize {
        self.len() - 1
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.h
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps())
    }

    pub fn state(&self, n: usize) -> SpectralCoords {
        SpectralCoords(self.states.column(n).into_owned())
    }

    pub fn last(&self) -> SpectralCoords {
        self.state(self.steps())
    }

    /// CSV with a header row; either eigencoordinates or nodal values per column.
    pub fn to_csv(&self, model: &SpectralModel, nodal: bool) -> String {
        let dof = self.states.nrows();
        let mut out = String::from("t");
        for i in 0..dof {
            if nodal {
                out.push_str(&format!(",u_{i}"));
            } else {
                out.push_str(&format!(",c_{}", i + 1));
            }
        }
        out.push('\n');
        let values = if nodal {
            &model.modes * &self.states
        } else {
            self.states.clone()
        };
        for n in 0..self.len() {
            out.push_str(&format!("{:?}", self.time(n)));
            for i in 0..dof {
                out.push_str(&format!(",{:?}", values[(i, n)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Exponential Euler for `dX + AX dt = F(X + εZ) dt` on `[0, horizon]`.
///
/// The step `h` must be an integer multiple of the noise grid step; the noise
/// is sampled at the left end of each step. With `eps == 0` the path is never
/// read.
pub fn integrate(
    x0: &SpectralCoords,
    path: Option<&NoisePath>,
    eps: f64,
    horizon: f64,
    h: f64,
    model: &SpectralModel,
    nl: &NonlinearitySpec,
) -> Result<Trajectory> {
    let dof = model.dof();
    if x0.len() != dof {
        return Err(Error::DimensionMismatch {
            expected: dof,
            got: x0.len(),
        });
    }
    let steps = steps_for(horizon, h)?;
    let forcing = if eps != 0.0 {
        let path = path.ok_or_else(|| Error::InvalidInput("a noise path is required when eps != 0".into()))?;
        path.require_window(0.0, horizon)?;
        let stride = stride_for(h, path.h())?;
        Some(path.window(0, stride, steps + 1, dof) * eps)
    } else {
        None
    };

    let coeffs = ExpEulerCoeffs::new(&model.lambdas, h);
    let mut states = DMatrix::zeros(dof, steps + 1);
    states.set_column(0, &x0.0);
    let mut x = x0.0.clone();
    let mut arg = DVector::zeros(dof);
    let skip_f = nl.is_zero();
    for n in 0..steps {
        let mut next = x.component_mul(&coeffs.decay);
        if !skip_f {
            arg.copy_from(&x);
            if let Some(z) = &forcing {
                arg += z.column(n);
            }
            let nodal = &model.modes * &arg;
            let f = &model.projector * nl.apply_nodal(&nodal);
            next += f.component_mul(&coeffs.weight);
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: n + 1 });
        }
        states.set_column(n + 1, &next);
        x = next;
    }
    Ok(Trajectory {
        h,
        states,
        eps,
        seed: path.filter(|_| eps != 0.0).map(|p| p.spec.seed),
    })
}
