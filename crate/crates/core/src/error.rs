use thiserror::Error;

/// Errors raised by the assembly, solvers and drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("coefficient `{name}` is not positive at node {node} (x = {x}): value {value}")]
    NonPositiveCoefficient {
        name: &'static str,
        node: usize,
        x: f64,
        value: f64,
    },

    #[error("generalized eigensolver failed: {0}")]
    Eigen(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("backward evolution on the stable part requested (t = {0})")]
    BackwardStable(f64),

    #[error("noise window too short: need T_minus >= {required_minus}, T_plus >= {required_plus}")]
    WindowOverflow { required_minus: f64, required_plus: f64 },

    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },

    #[error("gap condition violated: k = {k} >= 1")]
    GapInadmissible { k: f64 },

    #[error("beta = {beta} is outside the spectral gap ({lambda_n}, {lambda_n1})")]
    BetaOutsideGap { beta: f64, lambda_n: f64, lambda_n1: f64 },

    #[error("Picard iteration did not converge in {iterations} iterations (last increment {last_increment:e}, contraction ratios {contraction:?})")]
    NotConverged {
        iterations: usize,
        last_increment: f64,
        contraction: Vec<f64>,
    },

    #[error("config line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("config key `{key}`: {msg}")]
    ConfigValue { key: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
