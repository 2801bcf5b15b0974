use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("table too small: need N >= {needed}, have {have}")]
    TableTooSmall { needed: u64, have: u64 },
    #[error("integer overflow: {0}")]
    Overflow(String),
    #[error("period lcm(1..{0}) is not representable")]
    PeriodOverflow(u32),
    #[error("cutoff too small: |Phi({a})| = {value:e} >= 1e-9")]
    CutoffTooSmall { a: f64, value: f64 },
    #[error("cache file: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
