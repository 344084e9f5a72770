use contraction_core::Error as CoreError;

/// Failure of a command, carrying its exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Nothing to certify or check against (exit 1).
    Negative(String),
    /// Unreadable or malformed input (exit 2).
    Parse(String),
    /// Well-formed input that fails a dimension or validity check (exit 3).
    Invalid(String),
    /// Integration blow-up or a numerical routine that gave up (exit 4).
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Negative(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Invalid(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Negative(m) | CliError::Parse(m) | CliError::Invalid(m) | CliError::Runtime(m) => m,
        }
    }

    /// Core error with the field or file it came from prefixed.
    pub fn core(context: &str, e: CoreError) -> Self {
        let msg = if context.is_empty() { e.to_string() } else { format!("{context}: {e}") };
        match e {
            CoreError::DimensionMismatch { .. }
            | CoreError::NotSquare { .. }
            | CoreError::NotPositiveDefinite { .. }
            | CoreError::NonPositiveWeight { .. }
            | CoreError::InvalidExponent(_)
            | CoreError::UnsupportedNorm { .. }
            | CoreError::NotMetzler { .. }
            | CoreError::InvalidArgument(_)
            | CoreError::EmptySample => CliError::Invalid(msg),
            CoreError::BlowUp { .. }
            | CoreError::EvaluationFailed(_)
            | CoreError::EigenNonConvergence
            | CoreError::SingularLyapunov
            | CoreError::NotHurwitz { .. }
            | CoreError::NotContracting { .. }
            | CoreError::MaxIterations { .. }
            | CoreError::Divergence { .. }
            | CoreError::DistanceUnderflow => CliError::Runtime(msg),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::core("", e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = std::result::Result<T, CliError>;
