use thiserror::Error;

/// Errors raised anywhere in the estimation and inference pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    // ---- panel ingestion and validation ----
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("could not parse {what} `{value}` on line {line}")]
    Parse {
        what: &'static str,
        value: String,
        line: u64,
    },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("unbalanced panel: unit `{unit}` has no observation at time {time}")]
    UnbalancedPanel { unit: String, time: i64 },
    #[error("duplicate cell: unit `{unit}` observed twice at time {time}")]
    DuplicateCell { unit: String, time: i64 },
    #[error("treatment of unit `{0}` varies over time")]
    TimeVaryingTreatment(String),
    #[error("covariate `{name}` of unit `{unit}` varies over time")]
    TimeVaryingCovariate { unit: String, name: String },
    #[error("treatment value `{value}` of unit `{unit}` is not 0 or 1")]
    NonBinaryTreatment { unit: String, value: String },
    #[error("reference period 0 is not among the observed times")]
    MissingReferencePeriod,
    #[error("event times must be consecutive integers")]
    NonConsecutiveTimes,
    #[error("need at least one pre-reference and one post-reference period (T_pre = {t_pre}, T_post = {t_post})")]
    InsufficientPeriods { t_pre: i64, t_post: i64 },
    #[error("panel needs at least one treated and one untreated unit")]
    NoOverlap,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("operation requires a binary treatment design")]
    NotBinaryDesign,
    #[error("operation requires a staggered (group) design")]
    NotStaggeredDesign,
    #[error("operation requires covariates")]
    NoCovariates,

    // ---- estimation ----
    #[error("no treatment variation: all units share one treatment status")]
    NoTreatmentVariation,
    #[error("demeaned covariate matrix is rank deficient")]
    RankDeficientCovariates,
    #[error("treatment is perfectly explained by the covariates")]
    ZeroResidualTreatment,
    #[error("no never-treated units")]
    NoNeverTreated,
    #[error("treatment group {0} has no units")]
    EmptyGroup(i64),
    #[error("common event window across groups is empty")]
    EmptyCommonWindow,
    #[error("singular design in least-squares solve")]
    SingularDesign,

    // ---- splines ----
    #[error("need at least 2 knots, got {0}")]
    TooFewKnots(usize),
    #[error("knots must be strictly increasing")]
    NonMonotoneKnots,
    #[error("t = {t} is outside the domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
    #[error("variance {variance:e} at t = {t} is below the ridge {ridge:e}")]
    DegenerateVariance { t: f64, variance: f64, ridge: f64 },

    // ---- bands ----
    #[error("covariance matrix is not positive semi-definite")]
    NonPSDCovariance,
    #[error("evaluation grid has no points with non-degenerate variance")]
    DegenerateGrid,
    #[error("no critical value u <= 50 solves the Kac-Rice tail equation")]
    NoRoot,
    #[error("the Kac-Rice method has no infimum variant")]
    InfSideUnsupported,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    // ---- honest testing ----
    #[error("reference band list is empty")]
    EmptyList,
    #[error("band grid does not match the requested test grid")]
    GridMismatch,
    #[error("pre-anticipation window is empty (t_A = {t_a} < -T_pre = {lo})")]
    EmptyPreAnticipationWindow { t_a: f64, lo: f64 },
    #[error("band of kind {found} cannot be used here; expected {expected}")]
    WrongBandKind {
        found: &'static str,
        expected: &'static str,
    },

    // ---- simulation ----
    #[error("Gaussian-process covariance is not positive definite")]
    NonPSDKernel,
    #[error("treatment draw degenerate after {0} retries")]
    DegenerateDraw(usize),
}

/// Coarse classification used by front ends to pick exit codes / status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: malformed data, violated preconditions, bad arguments.
    Validation,
    /// The input was well formed but the numerics failed.
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            NoTreatmentVariation
            | RankDeficientCovariates
            | ZeroResidualTreatment
            | SingularDesign
            | DegenerateVariance { .. }
            | NonPSDCovariance
            | DegenerateGrid
            | NoRoot
            | NonPSDKernel
            | DegenerateDraw(_) => ErrorClass::Numerical,
            _ => ErrorClass::Validation,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
