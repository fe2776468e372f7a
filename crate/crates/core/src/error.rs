use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A configuration value is out of its allowed range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The graph violates a structural invariant (cycle, dead node, ...).
    #[error("invalid graph structure: {0}")]
    Structure(String),

    /// Inputs do not match the shape the graph expects.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("non-finite value at {location}: {detail}")]
    Numeric { location: Location, detail: String },

    #[error("parse error in {source_name} at byte offset {offset}: {msg}")]
    Parse {
        source_name: String,
        offset: u64,
        msg: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("balancing did not converge after {sweeps} sweeps (residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    /// A checked invariant failed; `check` names the failing leg.
    #[error("check `{check}` failed: deviation {deviation:e}")]
    CheckFailed { check: String, deviation: f64 },

    #[error("every step size in the grid {grid:?} diverged")]
    AllDiverged { grid: Vec<u32> },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Where a non-finite value was first seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Node(usize),
    Edge(usize),
    Loss,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Node(v) => write!(f, "node {v}"),
            Location::Edge(e) => write!(f, "edge {e}"),
            Location::Loss => f.write_str("loss"),
        }
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn numeric(location: Location, detail: impl Into<String>) -> Self {
        Error::Numeric {
            location,
            detail: detail.into(),
        }
    }
}
