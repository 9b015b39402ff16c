use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("format error: {0}")]
    Format(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("degenerate problem: {0}")]
    Degenerate(String),
    #[error("oracle scope exceeded: {0}")]
    OracleScope(String),
    #[error("selection error: {0}")]
    Selection(String),
    #[error("consolidation state error: {0}")]
    State(String),
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),
    #[error("log error: {0}")]
    Log(String),
    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
