use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes shared by every stage of the analysis.
///
/// Variants fall in two families: input validation (malformed or
/// incompatible data) and numerical failure (a solver that did not reach its
/// tolerance, a geodesic that left the injectivity radius). Callers that need
/// to tell them apart use [`Error::is_numerical`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("grid needs at least 3 points, got {0}")]
    GridTooSmall(usize),
    #[error("grid mismatch: {left} vs {right} points")]
    GridMismatch { left: usize, right: usize },
    #[error("dimension mismatch between operands")]
    DimensionMismatch,
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("warp is not monotone at sample {index}")]
    NonMonotoneWarp { index: usize },
    #[error("function has zero norm")]
    ZeroNorm,
    #[error("vector is not tangent to the base point (inner product {0:e})")]
    NotTangent(f64),
    #[error("points are (nearly) antipodal: distance {distance}")]
    Antipode { distance: f64 },
    #[error("geodesic overflow: step length {length} reaches pi")]
    GeodesicOverflow { length: f64 },
    #[error("negative density value {value} at sample {index}")]
    NegativeDensity { index: usize, value: f64 },
    #[error("density integrates to {mass}, outside the accepted drift window")]
    MassDrift { mass: f64 },
    #[error("degenerate sample: all values identical")]
    DegenerateSample,
    #[error("degenerate curve: zero length")]
    DegenerateCurve,
    #[error("curve is not closed: endpoint gap {gap:e}")]
    OpenCurve { gap: f64 },
    #[error("closure projection did not converge: residual {residual:e} after {iterations} iterations")]
    ClosureNotConverged { residual: f64, iterations: usize },
    #[error("reconstructed curve does not close: gap {gap:e}")]
    ClosureGap { gap: f64 },
    #[error("rank {requested} infeasible: at most {max} available")]
    RankInfeasible { requested: usize, max: usize },
    #[error("coefficient matrix is rank deficient (condition number {condition:e}); set a positive ridge")]
    RankDeficient { condition: f64 },
    #[error("column {column} has zero variance")]
    ZeroVariance { column: usize },
    #[error("tangent mode {mode} requires both groups to be the same object kind")]
    IncompatibleMode { mode: &'static str },
    #[error("{0} did not converge")]
    NotConverged(&'static str),
}

impl Error {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ClosureNotConverged { .. }
                | Error::ClosureGap { .. }
                | Error::RankDeficient { .. }
                | Error::NotConverged(_)
                | Error::GeodesicOverflow { .. }
                | Error::Antipode { .. }
        )
    }
}
