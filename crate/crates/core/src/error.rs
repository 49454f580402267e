use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite coordinate in input point")]
    NonFinite,

    #[error("singular Gram matrix ({n} centers{centers}): factorization failed with jitter up to {max_jitter:e}")]
    SingularGram { n: usize, max_jitter: f64, centers: String },

    #[error("duplicate center at index {index}")]
    DuplicateCenter { index: usize },

    #[error("kernel spec mismatch between expansions")]
    SpecMismatch,

    #[error("internal consistency: {0}")]
    InternalConsistency(String),

    #[error("sample not novel: novelty {novelty:e} <= threshold {threshold:e}")]
    NotNovel { novelty: f64, threshold: f64 },

    #[error("agent {agent} diverged at step {step}: |alpha|_inf = {norm:e} exceeds {limit:e} (h*gamma = {h_gamma}); reduce the step size or learning rate")]
    Divergence { agent: usize, step: usize, norm: f64, limit: f64, h_gamma: f64 },

    #[error("trajectory exhausted for agent {0}")]
    TrajectoryExhausted(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
