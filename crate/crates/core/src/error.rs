use thiserror::Error;

/// Errors surfaced by the library. Variants carry enough context to be
/// reported as a single machine-readable line by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A numeric result left the valid domain (NaN/Inf loss, bad logits).
    #[error("numerical error: {0}")]
    NumericalError(String),

    /// Rejection sampling failed to produce a feasible environment.
    #[error("environment generation exhausted after {attempts} attempts (family_seed {family_seed}, index {index})")]
    GenerationExhausted {
        family_seed: u64,
        index: usize,
        attempts: usize,
    },

    /// No collision-free path exists between the requested endpoints.
    #[error("no path between requested points")]
    Infeasible,

    /// The scripted demonstrator ran out of retries.
    #[error("demonstration collection failed on {env_id}: {detail}")]
    DemoCollectionFailed { env_id: String, detail: String },

    /// A demonstration record is malformed (e.g. action out of range).
    #[error("demo format error: {0}")]
    DemoFormatError(String),

    /// A teacher policy could not reach the requested number of successes.
    #[error("teacher too weak on {env_id}: success rate {success_rate:.4} after {attempts} attempts")]
    TeacherTooWeak {
        env_id: String,
        success_rate: f64,
        attempts: usize,
    },

    /// Scanned fine-tuning found zero successful rollouts on its first pass.
    #[error("zero-shot policy too weak on {env_id}: 0 successes in {attempts} attempts")]
    ZeroShotTooWeak { env_id: String, attempts: usize },

    /// Scanned fine-tuning failed to accumulate enough successes.
    #[error("scanned fine-tuning stalled on {env_id} after {iterations} iterations ({successes} successes)")]
    FinetuneStalled {
        env_id: String,
        iterations: usize,
        successes: usize,
    },

    /// A file did not match the documented schema.
    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalError(msg.into())
    }

    /// Short stable identifier for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ContractViolation(_) => "ContractViolation",
            Error::NumericalError(_) => "NumericalError",
            Error::GenerationExhausted { .. } => "GenerationExhausted",
            Error::Infeasible => "Infeasible",
            Error::DemoCollectionFailed { .. } => "DemoCollectionFailed",
            Error::DemoFormatError(_) => "DemoFormatError",
            Error::TeacherTooWeak { .. } => "TeacherTooWeak",
            Error::ZeroShotTooWeak { .. } => "ZeroShotTooWeak",
            Error::FinetuneStalled { .. } => "FinetuneStalled",
            Error::Format { .. } => "Format",
            Error::Io(_) => "Io",
            Error::Json(_) => "Json",
            Error::Csv(_) => "Csv",
        }
    }
}
