use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("momentum index {index} exceeds cutoff M_max = {m_max}")]
    MomentumOutOfRange { index: i32, m_max: i32 },

    #[error("position {x} nm lies outside the domain [0, {length}] nm")]
    OutOfDomain { x: f64, length: f64 },

    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error("uniform variate must lie in (0, 1], got {0}")]
    InvalidUniform(f64),

    #[error("empty initial state: the density vanishes on every grid cell")]
    EmptyInitialState,

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("reduced distribution has no mass")]
    ZeroDistribution,

    #[error("runaway creation: {count} live descendants of one particle exceed the bound {limit}")]
    RunawayCreation { count: usize, limit: usize },

    #[error("particle cap exceeded at t = {t} fs: {count} particles > {limit}")]
    ParticleCap { t: f64, count: usize, limit: usize },

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("malformed {what} file {path}: {reason}")]
    Format {
        what: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel quadrature did not converge in cell {cell}: estimated error {estimate:e} > {tolerance:e}")]
    Quadrature {
        cell: usize,
        estimate: f64,
        tolerance: f64,
    },

    #[error("no creation possible here: creation rate vanishes in cell {cell}")]
    NoCreation { cell: usize },

    #[error("position outside the kernel table domain")]
    OutsideDomain,

    #[error("kernel cache mismatch: {0}")]
    Cache(String),
}
