use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid label set: {0}")]
    InvalidLabelSet(String),

    #[error("multiplicity {0} is not present in the count table")]
    UnknownMultiplicity(usize),

    #[error("duplicate label set {set:?} in multiplicity group {m}")]
    DuplicateLabelSet { m: usize, set: Vec<usize> },

    #[error("degenerate distribution: class {class} never appears in multiplicity group {m}")]
    DegenerateDistribution { m: usize, class: usize },

    #[error(
        "spectral degeneracy at multiplicity {m}: kappa = {kappa:e} does not exceed the \
         tolerance {tol:e} (non-degeneracy on the centered subspace fails)"
    )]
    SpectralDegeneracy { m: usize, kappa: f64, tol: f64 },

    #[error("matrix error: {0}")]
    Matrix(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("multiplicity mismatch: expected |S| = {expected}, got {got}")]
    MultiplicityMismatch { expected: usize, got: usize },

    #[error("missing c1 for multiplicity {0}")]
    MissingC1(usize),

    #[error("empty feature group for multiplicity {0}")]
    EmptyGroup(usize),

    #[error("degenerate classifier: {0}")]
    DegenerateClassifier(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
