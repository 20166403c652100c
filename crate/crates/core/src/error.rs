use thiserror::Error;

/// Errors produced by the solvers, generators and file loaders.
#[derive(Debug, Error)]
pub enum Error {
    /// Inputs violate a documented invariant (shapes, ranges, distributions).
    #[error("validation error: {0}")]
    Validation(String),

    /// A linear solve or iteration produced non-finite values or missed its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An iterative method ran out of iterations.
    #[error("no convergence after {iters} iterations (last residual {residual:e})")]
    NoConvergence { iters: usize, residual: f64 },

    /// Malformed text input.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Exact evaluation was requested on an environment above the dense threshold.
    #[error("environment too large for exact evaluation: {0}")]
    TooLarge(String),

    /// A certificate check was handed inputs that break its premise.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A recorded critic is not a best response over its class.
    #[error("critic at iteration {k} is not a best response: recorded {recorded:e}, class maximum {maximum:e}")]
    NotBestResponse { k: usize, recorded: f64, maximum: f64 },

    #[error("gradient ascent diverged at step {step}; try a smaller step size")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn validation<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
