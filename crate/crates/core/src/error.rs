use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix is singular (pivot {pivot} has magnitude {magnitude:e})")]
    Singular { pivot: usize, magnitude: f64 },

    #[error("matrix is not positive definite (Schur complement {denominator:e})")]
    NotPositiveDefinite { denominator: f64 },

    #[error("non-finite value {value} in {context}")]
    NonFinite { context: &'static str, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{what} index {index} out of range (len {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("degenerate Fisher estimate: every delta is zero")]
    DegenerateFisher,

    #[error("inconsistent moments: second moment minus mean outer product is not positive definite")]
    MomentConsistency,

    #[error("identity `{name}` violated: {lhs} vs {rhs}")]
    IdentityViolation {
        name: &'static str,
        lhs: f64,
        rhs: f64,
    },

    #[error("training diverged: non-finite gradient in layer {layer}{}", location(*.epoch, *.batch))]
    Divergence {
        layer: usize,
        epoch: Option<usize>,
        batch: Option<usize>,
    },

    #[error("bad IDX file {path}: expected magic {expected}, found {found}")]
    Magic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("bad file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("truncated file {path}: needed {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn location(epoch: Option<usize>, batch: Option<usize>) -> String {
    match (epoch, batch) {
        (Some(e), Some(b)) => format!(" (epoch {e}, batch {b})"),
        (Some(e), None) => format!(" (epoch {e})"),
        _ => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }
}
