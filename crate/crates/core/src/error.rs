use chrono::NaiveDate;

/// Errors returned by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// No line items exist for the requested item.
    #[error("no records for item '{0}'")]
    NoRecords(String),
    /// A raw daily map or series was empty.
    #[error("empty input: {0}")]
    Empty(&'static str),
    /// The open-day calendar does not contain a day on which the item sold.
    #[error("calendar does not cover {0}: item sold on a day the venue is not recorded as open")]
    CalendarGap(NaiveDate),
    /// A date precedes the origin of the training date map.
    #[error("date {date} precedes model origin {origin}")]
    BeforeOrigin { date: NaiveDate, origin: NaiveDate },
    /// Vectors or matrices that must be aligned were not.
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },
    /// A non-finite value was found where finite input is required.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    /// An argument was outside its valid domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Too few observations to fit the requested model.
    #[error("too few observations: need at least {needed}, have {have}")]
    TooFewObservations { needed: usize, have: usize },
    /// A fold plan cannot be built from the available observations.
    #[error("infeasible fold plan: need {needed} observations ({folds} folds x {test_size} + {min_train} training), have {have} (short by {shortfall})")]
    InfeasibleFolds {
        needed: usize,
        have: usize,
        shortfall: usize,
        folds: usize,
        test_size: usize,
        min_train: usize,
    },
    /// The optimizer hit a non-finite objective it could not step away from.
    #[error("optimizer failure at iteration {iteration}: {reason}")]
    Optimizer { iteration: usize, reason: String },
    /// Every tuning candidate of a search step failed.
    #[error("all candidates failed while tuning {0}")]
    AllCandidatesFailed(&'static str),
    /// A malformed input record.
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
