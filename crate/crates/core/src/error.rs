use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported dimension {0}; expected 2 or 3")]
    Dimension(usize),
    #[error("even node count {0}; the thin plane must coincide with a node layer")]
    EvenNodeCount(usize),
    #[error("node count {0} too small to resolve the radius ladder (need at least 33)")]
    TooFewNodes(usize),
    #[error("point {0:?} lies outside the grid box")]
    OutOfBox([f64; 3]),
    #[error("radius {radius} outside the resolvable range [{min}, {max}]")]
    Radius { radius: f64, min: f64, max: f64 },
    #[error("coefficient assumption violated: {0}")]
    Assumption(String),
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("undefined at the origin")]
    Origin,
    #[error("infeasible data: {0}")]
    Infeasible(String),
    #[error("solver did not converge in {sweeps} sweeps (last energy decreases: {history:?})")]
    NoConvergence { sweeps: usize, history: Vec<f64> },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("{0} is not a free boundary point")]
    NotFreeBoundary(String),
    #[error("vanishing height")]
    VanishingHeight,
    #[error("too few points: {0}")]
    TooFewPoints(String),
    #[error("degenerate series: {0}")]
    Degenerate(String),
    #[error("cone is empty at grid resolution")]
    EmptyCone,
    #[error("missing blowup fit for {0}")]
    MissingFit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
