use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("Euler-rate map singular: |pitch| = {pitch} rad exceeds the admissible range")]
    EulerSingularity { pitch: f64 },

    #[error("degenerate link geometry: separation {range:e} m is below 1e-9 m")]
    DegenerateRange { range: f64 },

    #[error("slack variables must be non-negative, got {value}")]
    NegativeSlack { value: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("QP infeasible: linearised constraints violated by {violation:e}")]
    InfeasibleQp { violation: f64 },

    #[error("QP solver exceeded {iterations} active-set iterations")]
    QpMaxIterations { iterations: usize },

    #[error("attitude left the admissible set at shooting node {stage}: |pitch| = {pitch} rad")]
    StageSingularity { stage: usize, pitch: f64 },

    #[error("config line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("time {t} s outside [0, {duration}] s")]
    TimeOutOfRange { t: f64, duration: f64 },

    #[error("index {index} out of range 1..={count}")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("empty link history")]
    EmptyHistory,

    #[error("empty simulation log")]
    EmptyLog,

    #[error("closed loop aborted at t = {time} s: {source}")]
    Aborted {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed CSV log: {0}")]
    Csv(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn validation(field: &str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
