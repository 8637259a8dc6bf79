use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("corrupt input: {malformed} of {total} rows malformed; first offenders: {examples:?}")]
    CorruptInput {
        malformed: usize,
        total: usize,
        examples: Vec<String>,
    },

    #[error("empty series: {0}")]
    EmptySeries(String),

    #[error("domain error at {date}: value {value} is outside the log transform domain")]
    Domain { date: NaiveDate, value: f64 },

    #[error("degenerate normalization scale: {0}")]
    DegenerateScale(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical error: {message} (condition estimate {condition:e})")]
    Numerical { message: String, condition: f64 },

    #[error("scenario infeasible for {entity}: {reason}")]
    ScenarioInfeasible { entity: String, reason: String },

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("undefined comparison: reference performance is {0}")]
    UndefinedComparison(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the failure traces back to user-supplied input or configuration
    /// rather than a defect or environment problem.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Numerical { .. })
    }
}
