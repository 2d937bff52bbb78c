use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("time {t} is not on the grid with step {dt}")]
    OffGrid { t: f64, dt: f64 },
    #[error("delay atom at {location} does not snap to the {n_cells}-cell grid")]
    UnsnappedAtom { location: f64, n_cells: usize },
    #[error("density with {pieces} pieces cannot be represented on a {n_cells}-cell grid")]
    DensityResolution { pieces: usize, n_cells: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("state dimension {size} exceeds the dense exponential guard {limit}")]
    SizeGuard { size: usize, limit: usize },
    #[error(
        "picard iteration did not converge in {iterations} iterations (last distance {distance:e})"
    )]
    NotConverged { iterations: usize, distance: f64 },
    #[error("semigroup not exponentially stable on probe: |pi1 T(t)[b,0]| = {residual:e} at t_max = {t_max}")]
    NoDecay { t_max: f64, residual: f64 },
    #[error("integrand is not adapted to the supplied Brownian path")]
    NotAdapted,
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
