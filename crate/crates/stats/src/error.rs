use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("incomplete design: {0}")]
    IncompleteDesign(String),

    #[error("group {group} has {count} subjects, at least 2 are required")]
    TooFewSubjects { group: String, count: usize },

    #[error("F statistic for {factor} is undefined: error sum of squares is zero")]
    UndefinedF { factor: String },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("need at least {needed} values, got {got}")]
    TooFewValues { needed: usize, got: usize },

    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
