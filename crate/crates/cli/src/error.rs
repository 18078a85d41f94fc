use rsrs_core::corpus::CorpusError;
use rsrs_core::experiment::ExperimentError;
use rsrs_core::policy::PolicyError;
use rsrs_core::training::TrainingError;
use rsrs_core::validation::ValidationError;

/// Failure of a subcommand, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or an invalid configuration value (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Missing, malformed or inconsistent input data (exit 2).
    #[error("{0}")]
    Data(String),
    /// A violated internal invariant, such as a non-finite update (exit 3).
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Config { .. } | CorpusError::Capacity { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Checkpoint { .. } => CliError::Data(e.to_string()),
            PolicyError::LearningRate(_) => CliError::Usage(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<TrainingError> for CliError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::Config { .. } => CliError::Usage(e.to_string()),
            TrainingError::EmptyPool(_) => CliError::Data(e.to_string()),
            TrainingError::Policy(p) => p.into(),
            TrainingError::Reward(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config { .. } => CliError::Usage(e.to_string()),
            ExperimentError::Training(t) => t.into(),
            ExperimentError::Policy(p) => p.into(),
            ExperimentError::EmptyDataset | ExperimentError::Evaluation(_) | ExperimentError::Io { .. } => {
                CliError::Data(e.to_string())
            }
        }
    }
}

impl From<ValidationError> for CliError {
    fn from(e: ValidationError) -> Self {
        match e {
            ValidationError::Config { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
