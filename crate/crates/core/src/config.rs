//! Flat `key = value` run configuration, its validation and the run manifest.

use std::path::Path;

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::assembly::{assemble, CoefficientSet, DomainSpec};
use crate::dynamics::{NonlinearitySpec, PiecewiseLinear, ScalarFn};
use crate::error::{Error, Result};
use crate::noise::{steps_for, NoiseSpec};
use crate::spectral::{eigendecompose, SpectralCoords, SpectralModel};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub x_lo: f64,
    pub x_hi: f64,
    pub dof: usize,
    /// `unit`, `constant` or `graded`.
    pub coefficients: String,
    pub coef_a: f64,
    pub coef_a0: f64,
    pub c_lo: f64,
    pub c_hi: f64,
    /// `zero`, `linear`, `tanh`, `sine` or `table`.
    pub nonlinearity: String,
    pub nl_scale: f64,
    pub nl_boundary_scale: f64,
    pub table_x: Vec<f64>,
    pub table_y: Vec<f64>,
    pub split: usize,
    pub alpha: f64,
    pub eps: f64,
    pub horizon: f64,
    pub t_minus: f64,
    pub h: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub m_noise: usize,
    pub q: Vec<f64>,
    pub seeds: Vec<u64>,
    pub output: String,
    /// Leading eigencoordinates of the base point.
    pub x0: Vec<f64>,
    /// Leading stable coordinates of the fiber parameter (mode `N+1` first).
    pub zeta: Vec<f64>,
    pub tau: f64,
    pub ref_factor: usize,
    pub approach_t: f64,
    pub eps_list: Vec<f64>,
    pub lip_samples: usize,
    pub sweep_points: usize,
    /// `coords` or `nodal`.
    pub dump: String,
    /// Invariance tolerance constant; `0` calibrates it on the linear scenario.
    pub c_check: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            x_lo: 0.0,
            x_hi: 1.0,
            dof: 128,
            coefficients: "unit".into(),
            coef_a: 1.0,
            coef_a0: 1.0,
            c_lo: 1.0,
            c_hi: 1.0,
            nonlinearity: "tanh".into(),
            nl_scale: 0.5,
            nl_boundary_scale: 0.5,
            table_x: vec![],
            table_y: vec![],
            split: 2,
            alpha: 0.25,
            eps: 0.1,
            horizon: 10.0,
            t_minus: 10.0,
            h: 1e-3,
            tol: 1e-10,
            max_iter: 200,
            m_noise: 8,
            q: vec![1.0; 8],
            seeds: (1..=16).collect(),
            output: "out".into(),
            x0: vec![0.8, -0.6, 0.4, 0.3],
            zeta: vec![0.5, -0.4, 0.3],
            tau: 0.5,
            ref_factor: 32,
            approach_t: 2.0,
            eps_list: vec![0.1, 0.05, 0.025, 0.0125],
            lip_samples: 3,
            sweep_points: 11,
            dump: "coords".into(),
            c_check: 0.0,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::ConfigValue {
        key: key.into(),
        msg: msg.into(),
    }
}

fn real(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(x) => Ok(*x),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(bad(key, "expected a number")),
    }
}

fn count(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(bad(key, "expected a non-negative integer")),
    }
}

fn text(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        _ => Err(bad(key, "expected a string")),
    }
}

fn reals(key: &str, v: &Value) -> Result<Vec<f64>> {
    match v {
        Value::Array(items) => items.iter().map(|x| real(key, x)).collect(),
        _ => Err(bad(key, "expected a list of numbers")),
    }
}

fn seeds(key: &str, v: &Value) -> Result<Vec<u64>> {
    match v {
        Value::Array(items) => items
            .iter()
            .map(|x| match x {
                Value::Integer(i) if *i >= 0 => Ok(*i as u64),
                _ => Err(bad(key, "seeds must be non-negative integers")),
            })
            .collect(),
        _ => Err(bad(key, "expected a list of integers")),
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(src: &str) -> Result<RunConfig> {
    let table: Table = toml::from_str(src).map_err(|e| {
        let line = e
            .span()
            .map(|s| src[..s.start.min(src.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::ConfigParse {
            line,
            msg: e.message().to_string(),
        }
    })?;
    let mut c = RunConfig::default();
    let mut boundary_scale = None;
    let mut t_minus = None;
    let mut q = None;
    for (key, v) in &table {
        let k = key.as_str();
        match k {
            "name" => c.name = text(k, v)?,
            "x_lo" => c.x_lo = real(k, v)?,
            "x_hi" => c.x_hi = real(k, v)?,
            "dof" => c.dof = count(k, v)?,
            "coefficients" => c.coefficients = text(k, v)?,
            "coef_a" => c.coef_a = real(k, v)?,
            "coef_a0" => c.coef_a0 = real(k, v)?,
            "c_lo" => c.c_lo = real(k, v)?,
            "c_hi" => c.c_hi = real(k, v)?,
            "nonlinearity" => c.nonlinearity = text(k, v)?,
            "nl_scale" => c.nl_scale = real(k, v)?,
            "nl_boundary_scale" => boundary_scale = Some(real(k, v)?),
            "table_x" => c.table_x = reals(k, v)?,
            "table_y" => c.table_y = reals(k, v)?,
            "N" => c.split = count(k, v)?,
            "alpha" => c.alpha = real(k, v)?,
            "eps" => c.eps = real(k, v)?,
            "T" => c.horizon = real(k, v)?,
            "T_minus" => t_minus = Some(real(k, v)?),
            "h" => c.h = real(k, v)?,
            "tol" => c.tol = real(k, v)?,
            "max_iter" => c.max_iter = count(k, v)?,
            "m_noise" => c.m_noise = count(k, v)?,
            "q" => q = Some(v.clone()),
            "seeds" => c.seeds = seeds(k, v)?,
            "output" => c.output = text(k, v)?,
            "x0" => c.x0 = reals(k, v)?,
            "zeta" => c.zeta = reals(k, v)?,
            "tau" => c.tau = real(k, v)?,
            "ref_factor" => c.ref_factor = count(k, v)?,
            "approach_T" => c.approach_t = real(k, v)?,
            "eps_list" => c.eps_list = reals(k, v)?,
            "lip_samples" => c.lip_samples = count(k, v)?,
            "sweep_points" => c.sweep_points = count(k, v)?,
            "dump" => c.dump = text(k, v)?,
            "c_check" => c.c_check = real(k, v)?,
            _ if v.is_table() => return Err(bad(k, "nested tables are not supported")),
            _ => return Err(bad(k, "unknown key")),
        }
    }
    c.nl_boundary_scale = boundary_scale.unwrap_or(c.nl_scale);
    c.t_minus = t_minus.unwrap_or(c.horizon);
    c.q = match q {
        None => vec![1.0; c.m_noise],
        Some(v) if v.is_array() => reals("q", &v)?,
        Some(v) => vec![real("q", &v)?; c.m_noise],
    };
    c.validate()?;
    Ok(c)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

fn multiple_of_h(key: &str, span: f64, h: f64) -> Result<()> {
    steps_for(span, h)
        .map(|_| ())
        .map_err(|_| bad(key, format!("{span} must be a non-negative multiple of h = {h}")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(bad(key, format!("must be positive, got {v}")))
            }
        };
        if !(self.x_lo.is_finite() && self.x_hi.is_finite() && self.x_lo < self.x_hi) {
            return Err(bad("x_hi", "x_lo < x_hi required"));
        }
        if self.dof < 3 {
            return Err(bad("dof", "at least 3 degrees of freedom are required"));
        }
        match self.coefficients.as_str() {
            "unit" | "graded" => {}
            "constant" => {
                positive("coef_a", self.coef_a)?;
                positive("coef_a0", self.coef_a0)?;
                positive("c_lo", self.c_lo)?;
                positive("c_hi", self.c_hi)?;
            }
            other => {
                return Err(bad(
                    "coefficients",
                    format!("unknown preset `{other}` (unit|constant|graded)"),
                ))
            }
        }
        match self.nonlinearity.as_str() {
            "zero" | "linear" | "tanh" | "sine" => {
                if !(self.nl_scale.is_finite() && self.nl_boundary_scale.is_finite()) {
                    return Err(bad("nl_scale", "must be finite"));
                }
            }
            "table" => {
                PiecewiseLinear::new(self.table_x.clone(), self.table_y.clone())
                    .map_err(|e| bad("table_x", e.to_string()))?;
            }
            other => {
                return Err(bad(
                    "nonlinearity",
                    format!("unknown preset `{other}` (zero|linear|tanh|sine|table)"),
                ))
            }
        }
        if self.split == 0 || self.split >= self.dof {
            return Err(bad("N", format!("must satisfy 1 <= N < dof = {}", self.dof)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(bad("alpha", "alpha must lie in [0,1)"));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(bad("eps", "must be non-negative"));
        }
        positive("h", self.h)?;
        positive("T", self.horizon)?;
        multiple_of_h("T", self.horizon, self.h)?;
        if !(self.t_minus >= 0.0 && self.t_minus.is_finite()) {
            return Err(bad("T_minus", "must be non-negative"));
        }
        positive("tol", self.tol)?;
        if self.max_iter == 0 {
            return Err(bad("max_iter", "must be at least 1"));
        }
        if self.m_noise > self.dof {
            return Err(bad("m_noise", format!("cannot exceed dof = {}", self.dof)));
        }
        NoiseSpec::new(self.m_noise, self.q.clone(), 0).map_err(|e| bad("q", e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required"));
        }
        if self.x0.len() > self.dof || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(bad("x0", format!("at most {} finite coordinates", self.dof)));
        }
        if self.zeta.len() > self.dof - self.split || self.zeta.iter().any(|v| !v.is_finite()) {
            return Err(bad(
                "zeta",
                format!("at most {} finite coordinates", self.dof - self.split),
            ));
        }
        multiple_of_h("tau", self.tau, self.h)?;
        if self.ref_factor < 2 || !self.ref_factor.is_multiple_of(2) {
            return Err(bad("ref_factor", "must be an even integer >= 2"));
        }
        positive("approach_T", self.approach_t)?;
        multiple_of_h("approach_T", self.approach_t, self.h)?;
        let mut distinct = self.eps_list.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < 2 || distinct.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(bad("eps_list", "needs at least two distinct positive values"));
        }
        if self.lip_samples == 0 || self.split + 2 * self.lip_samples > self.dof {
            return Err(bad("lip_samples", "need 1 <= lip_samples and N + 2 lip_samples <= dof"));
        }
        if self.sweep_points == 0 {
            return Err(bad("sweep_points", "must be at least 1"));
        }
        if !matches!(self.dump.as_str(), "coords" | "nodal") {
            return Err(bad("dump", "must be `coords` or `nodal`"));
        }
        if !(self.c_check >= 0.0 && self.c_check.is_finite()) {
            return Err(bad("c_check", "must be non-negative (0 calibrates)"));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        DomainSpec::with_dof(self.x_lo, self.x_hi, self.dof)
    }

    pub fn coefficient_set(&self) -> CoefficientSet {
        match self.coefficients.as_str() {
            "constant" => CoefficientSet::constant(self.coef_a, self.coef_a0, self.c_lo, self.c_hi),
            "graded" => CoefficientSet::graded(),
            _ => CoefficientSet::unit(),
        }
    }

    pub fn nonlinearity_spec(&self) -> Result<NonlinearitySpec> {
        let (a, b) = (self.nl_scale, self.nl_boundary_scale);
        Ok(match self.nonlinearity.as_str() {
            "zero" => NonlinearitySpec::zero(),
            "linear" => NonlinearitySpec::new(ScalarFn::Linear { slope: a }, ScalarFn::Linear { slope: b }),
            "tanh" => NonlinearitySpec::new(ScalarFn::Tanh { scale: a }, ScalarFn::Tanh { scale: b }),
            "sine" => NonlinearitySpec::new(ScalarFn::Sine { amplitude: a }, ScalarFn::Sine { amplitude: b }),
            _ => {
                let t = PiecewiseLinear::new(self.table_x.clone(), self.table_y.clone())?;
                NonlinearitySpec::new(ScalarFn::Table(t.clone()), ScalarFn::Table(t))
            }
        })
    }

    pub fn model(&self) -> Result<SpectralModel> {
        eigendecompose(&assemble(&self.domain()?, &self.coefficient_set())?, self.split)
    }

    pub fn noise_spec(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            m_noise: self.m_noise,
            q: {
                let mut q = self.q.clone();
                q.resize(self.m_noise, 0.0);
                q
            },
            seed,
        }
    }

    pub fn x0_coords(&self) -> SpectralCoords {
        SpectralCoords::from_leading(self.dof, &self.x0)
    }

    /// `ζ` as full coordinates, zero on the slow modes.
    pub fn zeta_coords(&self) -> SpectralCoords {
        let mut z = SpectralCoords::zeros(self.dof);
        for (i, v) in self.zeta.iter().enumerate() {
            z[self.split + i] = *v;
        }
        z
    }

    /// Every setting, defaults included, as a reloadable document.
    pub fn to_manifest(&self) -> String {
        fn list<T: std::fmt::Debug>(v: &[T]) -> String {
            let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            format!("[{}]", items.join(", "))
        }
        let mut lines = vec![format!("# foliage {VERSION} run manifest")];
        let mut put = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        put("name", format!("{:?}", self.name));
        put("x_lo", format!("{:?}", self.x_lo));
        put("x_hi", format!("{:?}", self.x_hi));
        put("dof", self.dof.to_string());
        put("coefficients", format!("{:?}", self.coefficients));
        put("coef_a", format!("{:?}", self.coef_a));
        put("coef_a0", format!("{:?}", self.coef_a0));
        put("c_lo", format!("{:?}", self.c_lo));
        put("c_hi", format!("{:?}", self.c_hi));
        put("nonlinearity", format!("{:?}", self.nonlinearity));
        put("nl_scale", format!("{:?}", self.nl_scale));
        put("nl_boundary_scale", format!("{:?}", self.nl_boundary_scale));
        put("table_x", list(&self.table_x));
        put("table_y", list(&self.table_y));
        put("N", self.split.to_string());
        put("alpha", format!("{:?}", self.alpha));
        put("eps", format!("{:?}", self.eps));
        put("T", format!("{:?}", self.horizon));
        put("T_minus", format!("{:?}", self.t_minus));
        put("h", format!("{:?}", self.h));
        put("tol", format!("{:?}", self.tol));
        put("max_iter", self.max_iter.to_string());
        put("m_noise", self.m_noise.to_string());
        put("q", list(&self.q));
        put("seeds", list(&self.seeds));
        put("output", format!("{:?}", self.output));
        put("x0", list(&self.x0));
        put("zeta", list(&self.zeta));
        put("tau", format!("{:?}", self.tau));
        put("ref_factor", self.ref_factor.to_string());
        put("approach_T", format!("{:?}", self.approach_t));
        put("eps_list", list(&self.eps_list));
        put("lip_samples", self.lip_samples.to_string());
        put("sweep_points", self.sweep_points.to_string());
        put("dump", format!("{:?}", self.dump));
        put("c_check", format!("{:?}", self.c_check));
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// SHA-256 of the manifest, hex encoded.
    /// SHA-256 of the manifest without the `output` line, so relocating a run keeps its hash.
    pub fn manifest_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for line in self.to_manifest().lines().filter(|l| !l.starts_with("output = ")) {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}
