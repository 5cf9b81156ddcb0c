use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("design error: {0}")]
    Design(String),
    #[error("genotype {0} has no plots")]
    MissingGenotype(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate variance for trait {index} ({value})")]
    DegenerateVariance { index: usize, value: f64 },
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("no markers left after filtering")]
    EmptyMarkers,
    #[error("kinship partition error: {0}")]
    Partition(String),
    #[error("insufficient replication: {n} plots for {g} genotypes")]
    InsufficientReplication { n: usize, g: usize },
    #[error("too few genotypes ({0}) to estimate a covariance matrix")]
    TooFewGenotypes(usize),
    #[error("heritability undefined: both variance components are zero")]
    UndefinedHeritability,
    #[error("too few traits ({0}); at least 3 are needed")]
    TooFewTraits(usize),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("ill-conditioned system: {0}")]
    Conditioning(String),
    #[error("ambiguous assignment: row or column {0} of |T| is zero")]
    AmbiguousAssignment(usize),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("too few timepoints ({0})")]
    TooFewTimepoints(usize),
    #[error("interval [{t0}, {t1}] lies outside the fitted range [{lo}, {hi}]")]
    Extrapolation { t0: f64, t1: f64, lo: f64, hi: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("correlation undefined: zero variance")]
    UndefinedCorrelation,
    #[error("concatenated baseline degenerate: {0} columns survive filtering")]
    BaselineDegenerate(usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::DegenerateVariance { .. }
            | Error::NonFinite(_)
            | Error::NotPositiveDefinite(_)
            | Error::Conditioning(_)
            | Error::AmbiguousAssignment(_)
            | Error::UndefinedCorrelation
            | Error::UndefinedHeritability => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
