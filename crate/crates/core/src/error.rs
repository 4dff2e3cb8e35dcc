use thiserror::Error;

/// Errors raised by the solvers, the discrete layer and the run front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("velocity cutoff too small: boundary integrand ratio {ratio:.3e} at x = {x:?}")]
    CutoffTooSmall { x: Vec<f64>, ratio: f64 },

    #[error("non-finite value in unshifted exponential sum")]
    Overflow,

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e}, drift {drift:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        drift: f64,
    },

    #[error("forward eigen-constant {forward} and backward eigen-constant {backward} disagree")]
    LambdaMismatch { forward: f64, backward: f64 },

    #[error("kernel too large to materialize: {0}")]
    TooLarge(String),

    #[error("power iteration stalled after {iterations} iterations")]
    PowerIterationStalled { iterations: usize },

    #[error("density mass {mass} deviates from 1")]
    MassDeviation { mass: f64 },

    #[error("density has a negative value")]
    NegativeDensity,

    #[error("continuation values are not Cauchy: gaps {gaps:?}")]
    NotCauchy { gaps: Vec<f64> },

    #[error("box mass underflows at epsilon = {epsilon}")]
    MassUnderflow { epsilon: f64 },

    #[error("precondition failed: {0}")]
    PreconditionFailed(String),

    #[error("path graph is not strongly connected")]
    NotStronglyConnected,

    #[error("path step {step} is not an edge of the graph")]
    InvalidEdge { step: usize },

    #[error("running minimum still decreasing after k = {k}: negative cycle, critical value too large")]
    NegativeCycle { k: usize },

    #[error("subaction not calibrated at node {node} (residual {residual:.3e})")]
    NotCalibrated { node: usize, residual: f64 },

    #[error("separation failed at nodes {nodes:?}")]
    SeparationFailed { nodes: Vec<usize> },

    #[error("unknown report kind `{0}`")]
    UnknownReportKind(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Variant name, used as the structured error type in run summaries.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::CutoffTooSmall { .. } => "CutoffTooSmall",
            Self::Overflow => "Overflow",
            Self::HypothesisViolated(_) => "HypothesisViolated",
            Self::NoConvergence { .. } => "NoConvergence",
            Self::LambdaMismatch { .. } => "LambdaMismatch",
            Self::TooLarge(_) => "TooLarge",
            Self::PowerIterationStalled { .. } => "PowerIterationStalled",
            Self::MassDeviation { .. } => "MassDeviation",
            Self::NegativeDensity => "NegativeDensity",
            Self::NotCauchy { .. } => "NotCauchy",
            Self::MassUnderflow { .. } => "MassUnderflow",
            Self::PreconditionFailed(_) => "PreconditionFailed",
            Self::NotStronglyConnected => "NotStronglyConnected",
            Self::InvalidEdge { .. } => "InvalidEdge",
            Self::NegativeCycle { .. } => "NegativeCycle",
            Self::NotCalibrated { .. } => "NotCalibrated",
            Self::SeparationFailed { .. } => "SeparationFailed",
            Self::UnknownReportKind(_) => "UnknownReportKind",
            Self::InvalidInput(_) => "InvalidInput",
            Self::Config(_) => "Config",
            Self::Io(_) => "Io",
            Self::Json(_) => "Json",
            Self::Csv(_) => "Csv",
        }
    }
}
