//! Subcommand implementations behind the `refex` binary.

pub mod config;
pub mod presets;
pub mod run;

use refex_core::datagen::DatagenError;
use refex_core::interpret::InterpretError;
use refex_core::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical fault: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::InvalidSpec(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config(m),
            ModelError::NonFinite { .. } | ModelError::Divergence { .. } | ModelError::Adam(_) => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<InterpretError> for CliError {
    fn from(e: InterpretError) -> Self {
        match e {
            InterpretError::Model(m) => m.into(),
            InterpretError::NonFinite => CliError::Numerical(e.to_string()),
            InterpretError::Io(io) => io.into(),
            InterpretError::UnsupportedVariant(_)
            | InterpretError::LayerOutOfRange { .. }
            | InterpretError::HeadOutOfRange { .. } => CliError::Config(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
