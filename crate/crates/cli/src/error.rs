use std::fmt;

use susl_core::checkpoint::CheckpointError;
use susl_core::datasets::DataError;
use susl_core::evaluation::EvalError;
use susl_core::hpsearch::SearchError;
use susl_core::model::ModelError;
use susl_core::trainer::TrainError;

/// Command failure, classified by exit code: usage 1, data 2, numerical 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Model errors come from configuration: shapes, slot counts, layer sizes.
impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numerical() {
            return CliError::Numerical(e.to_string());
        }
        match e {
            TrainError::Config(m) => CliError::Usage(m),
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Eval(v) => v.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Options(m) => CliError::Usage(m),
            SearchError::NoSuccessfulTrial(_) => CliError::Numerical(e.to_string()),
            SearchError::Eval(v) => v.into(),
        }
    }
}
