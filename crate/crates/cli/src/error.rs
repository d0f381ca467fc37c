use std::fmt;
use std::io;
use std::path::Path;

use windcorr::continual::ContinualError;
use windcorr::datagen::ConfigError;
use windcorr::eval::EvalError;
use windcorr::gbdt::GbError;
use windcorr::ingest::IngestError;
use windcorr::models::ModelError;
use windcorr::nnet::NnError;
use windcorr::sampler::SampleError;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const DATA: u8 = 3;
    pub const MISSING: u8 = 4;
    pub const INTEGRITY: u8 = 5;
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(exit::CONFIG, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(exit::DATA, message)
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self::new(exit::MISSING, message)
    }

    pub fn integrity(message: impl Into<String>) -> Self {
        Self::new(exit::INTEGRITY, message)
    }

    /// Failure to read an input: missing files are missing artifacts,
    /// anything else is a data problem.
    pub fn read(path: &Path, e: io::Error) -> Self {
        let msg = format!("{}: {e}", path.display());
        if e.kind() == io::ErrorKind::NotFound {
            Self::missing(msg)
        } else {
            Self::data(msg)
        }
    }

    /// Prefixes the message, keeping the exit code.
    pub fn context(mut self, what: &str) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    pub fn write(path: &Path, e: impl fmt::Display) -> Self {
        Self::config(format!("cannot write {}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Integrity(m) => Self::integrity(m),
            other => Self::data(other.to_string()),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Spec(_) => Self::config(e.to_string()),
            NnError::Format(_) => Self::integrity(e.to_string()),
            _ => Self::new(exit::FAILURE, e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Integrity(m) => Self::integrity(m),
            ModelError::Artifact(m) => Self::missing(m),
            ModelError::Io(e) if e.kind() == io::ErrorKind::NotFound => Self::missing(e.to_string()),
            ModelError::Input(m) | ModelError::Unsupported(m) => Self::config(m),
            ModelError::Eval(e) => e.into(),
            ModelError::Nn(e) => e.into(),
            ModelError::Gb(GbError::Config(m)) => Self::config(m),
            other => Self::new(exit::FAILURE, other.to_string()),
        }
    }
}

impl From<ContinualError> for CliError {
    fn from(e: ContinualError) -> Self {
        match e {
            ContinualError::Unsupported(m) | ContinualError::Input(m) => Self::config(m),
            ContinualError::Model(e) => e.into(),
            ContinualError::Nn(e) => e.into(),
            ContinualError::Eval(e) => e.into(),
        }
    }
}
