use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dimension {dim} exceeds the configured cap {cap}: {hint}")]
    DimensionCap {
        dim: usize,
        cap: usize,
        hint: &'static str,
    },

    #[error("operator is not Hermitian (max |A - A^dag| = {residual:e})")]
    NotHermitian { residual: f64 },

    #[error("eigensolver did not converge after {iterations} restarts (best residual {best_residual:e})")]
    NoConvergence {
        iterations: usize,
        best_residual: f64,
    },

    #[error("Floquet resonance: |delta - mu*hbar*omega| = {gap:e} for mu = {mu}")]
    FloquetResonance { mu: i64, gap: f64 },

    #[error("integrator fault at t = {time}: {reason}")]
    Integrator { time: f64, reason: String },

    #[error("state left the physical set: {0}")]
    Unphysical(String),

    #[error("cavity collision at site {site}: rotated copies carry different parameters")]
    CavityCollision { site: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid value for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
