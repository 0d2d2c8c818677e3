//! Stationary Ornstein–Uhlenbeck forcing in eigencoordinates.
//!
//! The Wiener process is taken diagonal in the eigenbasis of `A`, with the first
//! `m_noise` modes forced at intensities `q_i`. Each forced coordinate of the
//! stationary solution of `dZ + AZ = dW` is then a scalar OU process with rate
//! `λ_i`, sampled here with its exact Gaussian transition on a uniform two-sided
//! grid.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Forcing intensities and the RNG seed.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub m_noise: usize,
    /// Per-mode intensities; modes past `q.len()` are unforced.
    pub q: Vec<f64>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(m_noise: usize, q: Vec<f64>, seed: u64) -> Result<Self> {
        if q.len() > m_noise {
            if let Some(bad) = q[m_noise..].iter().position(|&v| v != 0.0) {
                return Err(Error::InvalidInput(format!(
                    "q[{}] is nonzero but only {m_noise} modes are forced",
                    m_noise + bad
                )));
            }
        }
        if let Some(i) = q.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "noise intensity q[{i}] = {} must be non-negative",
                q[i]
            )));
        }
        let mut q = q;
        q.resize(m_noise, 0.0);
        Ok(Self { m_noise, q, seed })
    }

    /// `m_noise` modes at unit intensity.
    pub fn uniform(m_noise: usize, seed: u64) -> Self {
        Self {
            m_noise,
            q: vec![1.0; m_noise],
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Uniform grid `t_j = (j - n_minus) h` on `[-n_minus h, n_plus h]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub h: f64,
    pub n_minus: usize,
    pub n_plus: usize,
}

impl TimeGrid {
    pub fn new(h: f64, n_minus: usize, n_plus: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidInput(format!("grid step must be positive, got {h}")));
        }
        Ok(Self { h, n_minus, n_plus })
    }

    /// Grid covering `[-t_minus, t_plus]`; both ends must be multiples of `h`.
    pub fn covering(h: f64, t_minus: f64, t_plus: f64) -> Result<Self> {
        let n_minus = steps_for(t_minus, h)?;
        let n_plus = steps_for(t_plus, h)?;
        Self::new(h, n_minus, n_plus)
    }

    pub fn len(&self) -> usize {
        self.n_minus + self.n_plus + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, j: usize) -> f64 {
        (j as f64 - self.n_minus as f64) * self.h
    }
}

/// Number of steps of size `h` in `span`, which must be a non-negative multiple of `h`.
pub fn steps_for(span: f64, h: f64) -> Result<usize> {
    if !(span >= 0.0) || !(h > 0.0) {
        return Err(Error::InvalidInput(format!(
            "span {span} and step {h} must be non-negative and positive"
        )));
    }
    let ratio = span / h;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-7 * n.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "{span} is not an integer multiple of the step {h}"
        )));
    }
    Ok(n as usize)
}

/// Integer ratio `coarse / fine`, required to be at least one.
pub fn stride_for(coarse: f64, fine: f64) -> Result<usize> {
    let s = steps_for(coarse, fine)?;
    if s == 0 {
        return Err(Error::InvalidInput(format!(
            "step {coarse} is finer than the noise grid step {fine}"
        )));
    }
    Ok(s)
}

/// A sampled stationary OU path, anchored so that `t = 0` is grid index `origin`.
#[derive(Debug, Clone)]
pub struct NoisePath {
    pub grid: TimeGrid,
    /// Grid index corresponding to `t = 0`; moved by [`NoisePath::shift`].
    pub origin: usize,
    /// `samples[(i, j)] = z_i(t_j)` for forced modes `i < m_noise`.
    samples: DMatrix<f64>,
    /// Multiplier applied on read, set by [`NoisePath::scale`].
    amplitude: f64,
    pub spec: NoiseSpec,
    pub lambdas: Vec<f64>,
}

/// Samples the stationary path for modes `0..m_noise` on `grid`.
///
/// Each mode draws from its own ChaCha stream, so the path is a function of
/// `(seed, grid, spec, lambdas)` alone.
pub fn sample_stationary(spec: &NoiseSpec, lambdas: &[f64], grid: TimeGrid) -> Result<NoisePath> {
    if lambdas.len() < spec.m_noise {
        return Err(Error::DimensionMismatch {
            expected: spec.m_noise,
            got: lambdas.len(),
        });
    }
    let lambdas = lambdas[..spec.m_noise].to_vec();
    if let Some(i) = lambdas.iter().position(|&l| !(l > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "OU rate must be positive, mode {i} has lambda = {}",
            lambdas[i]
        )));
    }
    let len = grid.len();
    let mut samples = DMatrix::zeros(spec.m_noise, len);
    for i in 0..spec.m_noise {
        let row = ou_row(spec.seed, i, lambdas[i], spec.q[i], grid.h, len, None);
        for (j, v) in row.into_iter().enumerate() {
            samples[(i, j)] = v;
        }
    }
    Ok(NoisePath {
        grid,
        origin: grid.n_minus,
        samples,
        amplitude: 1.0,
        spec: spec.clone(),
        lambdas,
    })
}

fn mode_rng(seed: u64, mode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(mode as u64);
    rng
}

/// One OU coordinate on `len` grid points. With `restart = Some((k, z))` the
/// recursion is restarted at index `k` from state `z`, reusing the same draws.
fn ou_row(seed: u64, mode: usize, lambda: f64, q: f64, h: f64, len: usize, restart: Option<(usize, f64)>) -> Vec<f64> {
    let mut out = vec![0.0; len];
    if q == 0.0 {
        return out;
    }
    let mut rng = mode_rng(seed, mode);
    let stationary_sd = (q / (2.0 * lambda)).sqrt();
    let decay = (-lambda * h).exp();
    let innovation_sd = (q * -(-2.0 * lambda * h).exp_m1() / (2.0 * lambda)).sqrt();

    let xi0: f64 = rng.sample(StandardNormal);
    let mut z = stationary_sd * xi0;
    out[0] = z;
    for (j, slot) in out.iter_mut().enumerate().skip(1) {
        let xi: f64 = rng.sample(StandardNormal);
        z = decay * z + innovation_sd * xi;
        if let Some((k, zk)) = restart {
            if j == k {
                z = zk;
            }
        }
        *slot = z;
    }
    out
}

impl NoisePath {
    pub fn m_noise(&self) -> usize {
        self.spec.m_noise
    }

    pub fn h(&self) -> f64 {
        self.grid.h
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Backward extent of the window around the current anchor.
    pub fn t_minus(&self) -> f64 {
        self.origin as f64 * self.grid.h
    }

    /// Forward extent of the window around the current anchor.
    pub fn t_plus(&self) -> f64 {
        (self.grid.len() - 1 - self.origin) as f64 * self.grid.h
    }

    pub fn steps_minus(&self) -> usize {
        self.origin
    }

    pub fn steps_plus(&self) -> usize {
        self.grid.len() - 1 - self.origin
    }

    /// `z_i` at `k` grid steps from the anchor.
    pub fn value(&self, mode: usize, k: isize) -> f64 {
        if mode >= self.m_noise() {
            return 0.0;
        }
        let j = self.index(k);
        self.amplitude * self.samples[(mode, j)]
    }

    fn index(&self, k: isize) -> usize {
        let j = self.origin as isize + k;
        assert!(
            j >= 0 && (j as usize) < self.grid.len(),
            "noise index {k} outside the sampled window"
        );
        j as usize
    }

    /// Full-length coordinate vector `Z(k h)`, zero on unforced modes.
    pub fn coords_at(&self, k: isize, dof: usize) -> DVector<f64> {
        let j = self.index(k);
        let mut v = DVector::zeros(dof);
        for i in 0..self.m_noise().min(dof) {
            v[i] = self.amplitude * self.samples[(i, j)];
        }
        v
    }

    /// Columns `Z(t_0 + n stride h)` for `n = 0..count` starting `start` steps from the anchor.
    pub fn window(&self, start: isize, stride: usize, count: usize, dof: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(dof, count);
        for n in 0..count {
            let j = self.index(start + (n * stride) as isize);
            for i in 0..self.m_noise().min(dof) {
                out[(i, n)] = self.amplitude * self.samples[(i, j)];
            }
        }
        out
    }

    /// Errors unless the window covers `[-t_minus, t_plus]` around the anchor.
    pub fn require_window(&self, t_minus: f64, t_plus: f64) -> Result<()> {
        let tol = 1e-9 * self.grid.h;
        if self.t_minus() + tol < t_minus || self.t_plus() + tol < t_plus {
            let required_minus = (self.grid.n_minus as f64) * self.grid.h + (t_minus - self.t_minus()).max(0.0);
            let required_plus = (self.grid.n_plus as f64) * self.grid.h + (t_plus - self.t_plus()).max(0.0);
            return Err(Error::WindowOverflow {
                required_minus,
                required_plus,
            });
        }
        Ok(())
    }

    /// The path `t ↦ Z(t + tau)`: the anchor moves by `tau / h` grid steps.
    pub fn shift(&self, tau: f64) -> Result<NoisePath> {
        let steps = steps_for(tau.abs(), self.grid.h)? as isize;
        let k = if tau < 0.0 { -steps } else { steps };
        self.shift_steps(k)
    }

    pub fn shift_steps(&self, k: isize) -> Result<NoisePath> {
        let j = self.origin as isize + k;
        if j < 0 || j as usize >= self.grid.len() {
            let h = self.grid.h;
            let need_minus = if j < 0 { (-j) as f64 * h } else { 0.0 };
            let need_plus = if j as usize >= self.grid.len() {
                (j as usize - (self.grid.len() - 1)) as f64 * h
            } else {
                0.0
            };
            return Err(Error::WindowOverflow {
                required_minus: self.grid.n_minus as f64 * h + need_minus,
                required_plus: self.grid.n_plus as f64 * h + need_plus,
            });
        }
        Ok(NoisePath {
            origin: j as usize,
            ..self.clone()
        })
    }

    /// `εZ`; the amplitude multiplies every read.
    pub fn scale(&self, eps: f64) -> Result<NoisePath> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise scale must be non-negative, got {eps}"
            )));
        }
        Ok(NoisePath {
            amplitude: self.amplitude * eps,
            ..self.clone()
        })
    }

    /// Re-runs the OU recursion of `mode` from its stored state `k` steps past
    /// the anchor, with the same innovations, and returns the values from there
    /// to the end of the window (unscaled).
    pub fn resimulate_from(&self, mode: usize, k: isize) -> Vec<f64> {
        let j = self.index(k);
        let start = self.samples[(mode, j)];
        let row = ou_row(
            self.spec.seed,
            mode,
            self.lambdas[mode],
            self.spec.q[mode],
            self.grid.h,
            self.grid.len(),
            Some((j, start)),
        );
        if j == 0 {
            let mut row = row;
            row[0] = start;
            return row;
        }
        row[j..].to_vec()
    }

    /// Raw stored samples of one mode on the whole grid (unscaled).
    pub fn raw_row(&self, mode: usize) -> Vec<f64> {
        self.samples.row(mode).iter().copied().collect()
    }

    /// CSV with header `t,z_1,...,z_m` over the whole window, times relative to the anchor.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.m_noise() {
            out.push_str(&format!(",z_{}", i + 1));
        }
        out.push('\n');
        for j in 0..self.grid.len() {
            let t = (j as f64 - self.origin as f64) * self.grid.h;
            out.push_str(&format!("{t:?}"));
            for i in 0..self.m_noise() {
                out.push_str(&format!(",{:?}", self.amplitude * self.samples[(i, j)]));
            }
            out.push('\n');
        }
        out
    }
}
