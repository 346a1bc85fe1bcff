use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("site {site:?} is not contained in the target region")]
    SupportNotContained { site: Vec<i64> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("region of {sites} sites exceeds the size cap of {cap} sites")]
    SizeCap { sites: usize, cap: usize },

    #[error("operator `{label}` is not Hermitian (max |M - M^dagger| = {deviation:e})")]
    NotHermitian { label: String, deviation: f64 },

    #[error("empty region")]
    EmptyRegion,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("family member at {site:?} violates the declared bounds: {reason}")]
    FamilyBounds { site: Vec<i64>, reason: String },

    #[error("region nesting violated: {0}")]
    Nesting(String),

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error(
        "calibration failed: max local discrepancy {achieved:e} exceeds eps/2 = {required:e} \
         (m = {m}, t0 = {t0})"
    )]
    Calibration {
        achieved: f64,
        required: f64,
        m: usize,
        t0: f64,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad input rather than a numerical or I/O failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::SupportNotContained { .. }
                | Error::DimensionMismatch { .. }
                | Error::SizeCap { .. }
                | Error::NotHermitian { .. }
                | Error::EmptyRegion
                | Error::InvalidParameter { .. }
                | Error::FamilyBounds { .. }
                | Error::Nesting(_)
                | Error::InsufficientData(_)
                | Error::Config { .. }
        )
    }
}
