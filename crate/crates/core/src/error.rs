use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("degenerate design: every column is constant")]
    DegenerateDesign,
    #[error("singular system: normal equations are not invertible")]
    SingularSystem,
    #[error("degenerate labels: only one class present")]
    DegenerateLabels,
    #[error("degenerate scenario: {0} consecutive single-class treatment draws")]
    DegenerateScenario(usize),
    #[error("fold {fold} has zero outcome variance")]
    ZeroVarianceFold { fold: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing ground truth: {0}")]
    MissingTruth(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem | Error::DegenerateDesign | Error::ZeroVarianceFold { .. }
        )
    }
}
