use bskiplist::Error as LibError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] LibError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CAPACITY: i32 = 3;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Lib(e) => match e {
                LibError::Overload { .. } | LibError::CapacityExceeded { .. } => EXIT_CAPACITY,
                LibError::InvalidParams(_)
                | LibError::ReservedKey
                | LibError::InvalidRange { .. }
                | LibError::SeedMismatch { .. }
                | LibError::BadHeader(_) => EXIT_USAGE,
                _ => EXIT_FAIL,
            },
            CliError::Io(_) | CliError::Csv(_) => EXIT_FAIL,
        }
    }
}
