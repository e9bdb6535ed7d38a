use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("approach direction has zero length")]
    ZeroApproach,
    #[error("degenerate box: {0}")]
    DegenerateBox(&'static str),
}

#[derive(Debug, Error)]
pub enum ShellError {
    #[error("workspace too constrained: {found} high-manipulability samples, need at least {needed}")]
    TooConstrained { found: usize, needed: usize },
    #[error("degenerate sample set: high-manipulability points span fewer than 3 dimensions")]
    Degenerate,
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("inner ellipsoid center lies outside the outer ellipsoid (d_out = {0})")]
    InnerOutside(f64),
    #[error("invalid shell fit parameters: {0}")]
    Config(String),
    #[error("shell file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PddlError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Semantic(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("scenario line {line}: {msg}")]
pub struct ScenarioError {
    pub line: usize,
    pub msg: String,
}

impl ScenarioError {
    pub fn new(line: usize, msg: impl Into<String>) -> Self {
        Self { line, msg: msg.into() }
    }
}

#[derive(Debug, Error)]
pub enum TrialError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Shell(#[from] ShellError),
    #[error("invalid trial config: {0}")]
    Config(String),
    #[error("trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
