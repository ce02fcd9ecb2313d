use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input {value} outside valid range [{lo}, {hi}] for {what}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("no feasible action: all {subproblems} binary subproblems are infeasible")]
    NoFeasibleAction { subproblems: usize },

    #[error("demand {demand_w} W exceeds fallback capacity {capacity_w} W")]
    CapacityExceeded { demand_w: f64, capacity_w: f64 },

    #[error("episode ended at step {0}")]
    EpisodeEnded(usize),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
