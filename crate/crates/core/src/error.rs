use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("no phase-matched sideband: {0}")]
    NoPhaseMatch(String),

    #[error("singular calibration system: {0}")]
    SingularCalibration(String),

    #[error("inconsistent calibration reference: {0}")]
    InconsistentReference(String),

    /// A derived metric has a zero denominator.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("mismatched records: {0}")]
    MismatchedRecords(String),

    #[error("empty pulse stream")]
    EmptyStream,

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 2,
            Error::InconsistentReference(_)
            | Error::SingularCalibration(_)
            | Error::NoPhaseMatch(_) => 3,
            _ => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Domain(msg()))
    }
}
