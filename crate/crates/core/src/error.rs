use thiserror::Error;

/// Errors raised by the solvers, the optimizer and the configuration layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid chain: {0}")]
    InvalidChain(String),

    #[error("invalid control: {0}")]
    InvalidControl(String),

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("breakpoint {index} at t = {tau} is not a multiple of the time quantum {quantum}")]
    Unquantized {
        index: usize,
        tau: f64,
        quantum: f64,
    },

    #[error("grid: {0}")]
    Grid(String),

    #[error("processor {processor}: flux {flux} exceeds capacity {capacity}")]
    CapacityExceeded {
        processor: usize,
        flux: f64,
        capacity: f64,
    },

    #[error("missing upstream history for processor {processor} at step {step}")]
    MissingHistory { processor: usize, step: usize },

    #[error("horizon mismatch: trajectory covers {trajectory}, expected {expected}")]
    HorizonMismatch { trajectory: f64, expected: f64 },

    #[error("shifting breakpoint {index} by {delta} is not admissible (boundary or collision)")]
    InvalidShift { index: usize, delta: f64 },

    #[error("front tracking exceeded {0} events")]
    EventCapExceeded(usize),

    #[error("inconsistent event: {0}")]
    InconsistentEvent(String),

    #[error("convergence study needs at least three refinement levels, got {0}")]
    TooFewLevels(usize),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
