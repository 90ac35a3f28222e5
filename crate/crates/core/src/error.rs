use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure classes; the command-line driver maps them to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad parameters or configuration.
    Config,
    /// Numerical or I/O failure during a run.
    Runtime,
    /// A mathematical invariant was violated (CKP, mass drift, ...).
    Invariant,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("singular point: {0}")]
    Domain(String),

    #[error("quadrature did not converge: worst residual {residual:e} on [{lo}, {hi}] ({context})")]
    Quadrature {
        residual: f64,
        lo: f64,
        hi: f64,
        context: String,
    },

    #[error("non-finite interaction between particle {target:?} and particle {source_particle:?}")]
    NonFiniteDrift {
        target: (usize, usize),
        source_particle: (usize, usize),
    },

    #[error("particle {species}/{index} left the domain (|x| = {norm:e} > {limit:e}) at step {step}")]
    Unstable {
        species: usize,
        index: usize,
        norm: f64,
        limit: f64,
        step: u64,
    },

    #[error("field timeline does not cover t = {t} (covered [{start}, {end}])")]
    TimelineGap { t: f64, start: f64, end: f64 },

    #[error("CFL condition violated: {0}")]
    Cfl(String),

    #[error("positivity lost: {0}")]
    Positivity(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("format error in {path}: {msg} (byte offset {offset})")]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) | Error::Domain(_) => ErrorKind::Config,
            Error::Invariant(_) => ErrorKind::Invariant,
            _ => ErrorKind::Runtime,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
