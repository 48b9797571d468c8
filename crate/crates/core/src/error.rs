use thiserror::Error;

/// Errors raised by the solver stack.
#[derive(Debug, Error)]
pub enum LcfError {
    /// Shapes that do not conform to the declared dimensions, asymmetric
    /// inputs that cannot be repaired, malformed documents.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A sampled assumption audit failed.
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("numerical blow-up at path {path}, step {step}")]
    Blowup { path: usize, step: usize },

    #[error("ill-conditioned regression at step {step}: {detail}")]
    Conditioning { step: usize, detail: String },

    /// The descent loop stopped without meeting its tolerance. Carries the
    /// gradient-norm history so callers can report it.
    #[error("descent did not converge after {iterations} iterations (final gradient norm {final_residual:.3e})")]
    Convergence {
        iterations: usize,
        final_residual: f64,
        history: Vec<f64>,
    },

    #[error("Newton solve failed: {0}")]
    Newton(String),

    /// The minimizer of the reduced Hamiltonian is not well defined because
    /// its Hessian lost positive definiteness.
    #[error("regular condition violated: {0}")]
    Regularity(String),

    #[error("Riccati integration became singular at t = {t}: {detail}")]
    RiccatiSingular { t: f64, detail: String },

    #[error("cross-path noise too large: {0}")]
    Noise(String),

    #[error("in direction {direction}: {source}")]
    Direction {
        direction: usize,
        #[source]
        source: Box<LcfError>,
    },

    #[error("at t = {t}, path {path}: {source}")]
    Located {
        t: f64,
        path: usize,
        #[source]
        source: Box<LcfError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, LcfError>;

pub(crate) fn structural(msg: impl Into<String>) -> LcfError {
    LcfError::Structural(msg.into())
}

pub(crate) fn argument(msg: impl Into<String>) -> LcfError {
    LcfError::Argument(msg.into())
}
