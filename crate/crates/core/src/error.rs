use alloc::string::String;

/// Errors raised when inputs violate the model's invariants.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("kernel row (state {state}, action {action}) is not a distribution: sum = {sum}")]
    KernelRow { state: usize, action: usize, sum: f64 },
    #[error("negative or non-finite kernel entry at ({state}, {action}, {next})")]
    KernelEntry { state: usize, action: usize, next: usize },
    #[error("initial distribution is not a distribution: {0}")]
    InitialDistribution(String),
    #[error("{what} entry at (state {state}, action {action}) is {value}, outside [0, 1]")]
    SignalRange { what: String, state: usize, action: usize, value: f64 },
    #[error("discount {0} outside [0, 1)")]
    Discount(f64),
    #[error("contamination radius {0} outside [0, 1]")]
    Radius(f64),
    #[error("smoothing parameter must be strictly negative, got {0}")]
    Smoothing(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("singular linear system")]
    Singular,
}

pub type Result<T> = core::result::Result<T, Error>;
