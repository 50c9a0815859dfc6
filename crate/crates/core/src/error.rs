use thiserror::Error;

/// Errors raised by model construction, kernel assembly and evolution.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate Bohr spectrum: omega{:?} and omega{:?} differ by {separation:e}", .first, .second)]
    DegenerateBohrSpectrum {
        first: (usize, usize),
        second: (usize, usize),
        separation: f64,
    },

    #[error("parameter `{name}` must be strictly positive (got {value})")]
    NonPositiveParameter { name: &'static str, value: f64 },

    #[error("index {index} out of range for {len} entries")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("reaction matrix for l = {l} at energy {energy} is not Hermitian (residual {residual:e})")]
    NonHermitianReactionMatrix { l: usize, energy: f64, residual: f64 },

    #[error("S-matrix for l = {l} at energy {energy} violates unitarity (residual {residual:e})")]
    NonUnitarySMatrix { l: usize, energy: f64, residual: f64 },

    #[error("off-shell amplitude query: relative energy mismatch {mismatch:e}")]
    OffShell { mismatch: f64 },

    #[error("malformed amplitude table: {0}")]
    MalformedTable(String),

    #[error("entrance channel {level} is closed at relative speed {speed}")]
    ClosedEntranceChannel { level: usize, speed: f64 },

    #[error("secular selector rejects K[({m},{j}),({n},{k})]: Bohr frequencies differ")]
    SecularViolation { m: usize, j: usize, n: usize, k: usize },

    #[error("grid or model mismatch: {0}")]
    GridMismatch(String),

    #[error("stability guard tripped: dt * |G| = {product} exceeds {limit}")]
    StabilityGuardTripped { product: f64, limit: f64 },

    #[error("positivity breach at t = {time}: node {node} has eigenvalue {eigenvalue:e}")]
    PositivityBreach { time: f64, node: usize, eigenvalue: f64 },

    #[error("initial state is not positive: node {node} has eigenvalue {eigenvalue:e}")]
    NonPositiveInitialState { node: usize, eigenvalue: f64 },

    #[error("normalization failure: {0}")]
    NormalizationFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("cache container: {0}")]
    Container(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
