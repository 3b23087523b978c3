use mentor_eval::analysis::AnalysisError;
use mentor_eval::gateway::GatewayError;
use mentor_eval::jsonl::JsonlError;
use mentor_eval::metrics::MetricsError;
use mentor_eval::report::ReportError;
use mentor_eval::runner::EvalError;
use mentor_eval::store::StoreError;
use mentor_eval::synthetic::SimulationError;
use serde::Serialize;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;
pub const EXIT_STORAGE: u8 = 3;

/// A failed command, printed to stderr as one JSON object.
#[derive(Debug, Serialize)]
pub struct CliError {
    pub exit_code: u8,
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

impl CliError {
    fn new(exit_code: u8, error: &str, message: impl ToString) -> Self {
        CliError { exit_code, error: error.into(), message: message.to_string(), hint: None, details: Vec::new() }
    }

    pub fn config(error: &str, message: impl ToString) -> Self {
        Self::new(EXIT_CONFIG, error, message)
    }

    pub fn partial(error: &str, message: impl ToString) -> Self {
        Self::new(EXIT_PARTIAL, error, message)
    }

    pub fn storage(error: &str, message: impl ToString) -> Self {
        Self::new(EXIT_STORAGE, error, message)
    }

    pub fn with_hint(mut self, hint: impl Into<String>) -> Self {
        self.hint = Some(hint.into());
        self
    }

    pub fn with_details(mut self, details: Vec<String>) -> Self {
        self.details = details;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("error serializes")
    }

    /// Input files that cannot be read or parsed are configuration errors.
    pub fn input(e: JsonlError) -> Self {
        Self::config("InvalidInput", e)
    }

    pub fn output(e: JsonlError) -> Self {
        Self::storage("StorageFailure", e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match &e {
            StoreError::Incomplete(_) => CliError::partial("IncompleteRun", &e)
                .with_hint("resume with run-eval, or pass --allow-partial"),
            StoreError::StorageFailure { .. } => CliError::storage("StorageFailure", &e),
            StoreError::ManifestCorrupt { .. } => CliError::storage("ManifestCorrupt", &e),
            StoreError::DatasetMismatch { .. } => CliError::config("DatasetMismatch", &e),
            StoreError::RunExists(_) => CliError::config("RunExists", &e),
            _ => CliError::storage("StoreError", &e),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Store(s) => s.into(),
            EvalError::UnknownModel(_) => CliError::config("UnknownModel", e),
            other => CliError::config("InvalidRunConfig", other),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        CliError::config("ModelRegistration", e)
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::config("MetricsError", e)
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        let kind = match &e {
            AnalysisError::MismatchedIds(_) => "MismatchedIds",
            AnalysisError::MissingDifficulty(_) => "MissingDifficulty",
            _ => "AnalysisError",
        };
        CliError::config(kind, e)
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        CliError::config("InvalidParams", e)
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::storage("StorageFailure", e)
    }
}
