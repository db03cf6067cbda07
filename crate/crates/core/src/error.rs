use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field is not valid: {0}")]
    InvalidField(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("field mean {mean:e} exceeds the zero-mean tolerance {tolerance:e}")]
    NonZeroMean { mean: f64, tolerance: f64 },

    #[error("point (s = {s}, chi = {chi}) is outside the model domain")]
    Domain { s: f64, chi: f64 },

    #[error("state is infeasible: {0}")]
    Infeasible(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "{stage} did not converge after {iterations} iterations \
         (residual_s = {residual_s:e}, residual_chi = {residual_chi:e})"
    )]
    NonConvergence { stage: &'static str, iterations: usize, residual_s: f64, residual_chi: f64 },

    #[error("descent certificate violated by {violation:e}")]
    DescentViolation { violation: f64 },

    #[error("step {step} failed: {source}")]
    StepFailed {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trial is degenerate: {0}")]
    Degenerate(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical solvers (as opposed to bad input).
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::DescentViolation { .. }
                | Error::StepFailed { .. }
                | Error::Domain { .. }
        )
    }
}
