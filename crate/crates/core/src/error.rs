use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// The adaptive integrator gave up. `state` is the last accepted state.
    #[error("integrator failure at t = {t}: {reason} (last state {state:?})")]
    Integrator {
        t: f64,
        state: Vec<f64>,
        reason: String,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The point is too close to the equilibrium (b, b) for the inverse flow.
    #[error("point ({x}, {theta}) lies within the guard radius {radius:e} of the equilibrium")]
    Singularity { x: f64, theta: f64, radius: f64 },

    /// The Volterra march is not solvable at this step size.
    #[error("step size too large: dtau * K(0) / 2 = {value} >= 1, halve dtau (increase tau_steps)")]
    StepSize { value: f64 },

    /// F(lambda_probe) <= 1: the population is not supercritical.
    #[error("spectral condition violated: F({lambda_probe:e}) = {f_probe} <= 1")]
    Subcritical { lambda_probe: f64, f_probe: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An internal consistency check failed, usually because the lattice is under-resolved.
    #[error("diagnostic check failed: {0}")]
    Diagnostic(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Subcritical { .. } | Error::Diagnostic(_) => 1,
            _ => 3,
        }
    }
}
