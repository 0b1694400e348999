use thiserror::Error;

/// Errors shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("map {index} is not a contraction: |a| = {a}")]
    NonContraction { index: usize, a: f64 },

    #[error("need at least two maps, got {0}")]
    TooFewMaps(usize),

    #[error("probabilities must be positive and sum to 1 (sum = {sum})")]
    BadProbabilities { sum: f64 },

    #[error("attractor is a single point (trivial system)")]
    TrivialAttractor,

    #[error("all translation parts coincide; cannot normalize coordinates")]
    PointAttractor,

    #[error("branch budget exceeded: {words} words for m = {m}, n = {n}")]
    BranchBudget { m: usize, n: u32, words: f64 },

    #[error("no admissible integer band around e^|chi| = {e_chi}; iterate the system first")]
    NoContractionBand { e_chi: f64 },

    #[error("heterogeneous contraction scales; product formula needs a homogeneous system")]
    HeterogeneousScales,

    #[error("frequency window {window} exceeds r_lo^n = {r_pow}")]
    WindowTooWide { window: f64, r_pow: f64 },

    #[error("depth n = {n} leaves residual scale {residual} at the window edge; increase n")]
    DepthTooShallow { n: u32, residual: f64 },

    #[error("power iteration did not converge within {0} iterations")]
    PowerIterationStalled(usize),

    #[error("infimum over beta attained at beta_max = {beta_max}; increase beta_max")]
    BetaMaxTooSmall { beta_max: f64 },

    #[error("r_lo must exceed 1, got {0}")]
    DegenerateBand(u64),

    #[error("grid step {h} too coarse for Lipschitz constant {lipschitz}")]
    GridTooCoarse { h: f64, lipschitz: f64 },

    #[error("partition length band unachievable at level {level} (cell {cell}, target {target})")]
    BandUnachievable { level: usize, cell: i64, target: f64 },

    #[error("xi = {xi} lies outside I(i) = [-{half_width}, {half_width}]")]
    OutsideInterval { xi: f64, half_width: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
