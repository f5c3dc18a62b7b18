use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("items in one set do not share the same dimensions")]
    HeterogeneousDimensions,
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("every input vector has norm below the tolerance")]
    AllVectorsDegenerate,
    #[error("value is not finite")]
    NonFinite,
    #[error("basis rows are not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),
    #[error("descriptor is not unit-norm (norm {0})")]
    NotUnitNorm(f64),
    #[error("block system is near singular (condition estimate {0:e})")]
    NearSingular(f64),
    #[error("distance mode does not match item kinds: {0}")]
    IncompatibleKinds(String),
    #[error("codebook has {available} usable entries, lift needs at least {required}")]
    CodebookTooSmall { available: usize, required: usize },
    #[error("sampled directions stayed rank deficient after repeated resampling")]
    CodebookDegenerate,
    #[error("strategy requires a codebook")]
    MissingCodebook,
    #[error("strategy requires attribute labels")]
    MissingLabels,
    #[error("sub-database index {index} out of range for {count} sub-databases")]
    InvalidSubdatabaseIndex { index: usize, count: usize },
    #[error("only {available} entries carry a label other than {label}, need {required}")]
    InsufficientOppositeLabelEntries { label: u32, available: usize, required: usize },
    #[error("{entries} entries cannot be split into {parts} equal sub-databases")]
    NonDivisible { entries: usize, parts: usize },
    #[error("database is empty")]
    EmptyDatabase,
    #[error("invalid neighbour count K={k} for database of size {size}")]
    InvalidK { k: usize, size: usize },
    #[error("lift metadata missing (lifts were produced outside test mode)")]
    MetadataMissing,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed vector set file: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// True for failures of the numerical kernels rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::AllVectorsDegenerate
                | Error::NearSingular(_)
                | Error::CodebookDegenerate
                | Error::NotOrthonormal(_)
        )
    }
}
