use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("momentum grid too narrow: marginal density {leakage:.3e} at the boundary (limit {limit:.1e})")]
    Span { leakage: f64, limit: f64 },

    #[error("grid under-resolves the smearing kernel: {nodes_per_sd:.2} nodes per standard deviation along {axis} (need {required})")]
    Resolution {
        axis: &'static str,
        nodes_per_sd: f64,
        required: f64,
    },

    #[error("smearing is infinite for zero coupling; use the mean-field route")]
    InfiniteSmearing,

    #[error("distribution is not a probability: minimum {min:.3e} is negative; smear the Wigner function first")]
    NotAProbability { min: f64 },

    #[error("small-grid evaluator refused: {slices} slices x {points} points exceeds the {max_slices} x {max_points} cost guard")]
    CostGuard {
        slices: usize,
        points: usize,
        max_slices: usize,
        max_points: usize,
    },

    #[error("step size {dt} does not resolve the fastest period {period:.4e} by 20 steps; use dt <= {suggested:.4e}")]
    StepResolution { dt: f64, period: f64, suggested: f64 },

    #[error("path grid is not uniform")]
    NonUniformGrid,

    #[error(
        "wavefunction leaked to the grid boundary: probability {leakage:.3e} in the edge region (limit {limit:.1e})"
    )]
    Leakage { leakage: f64, limit: f64 },

    #[error("energy cutoff captures {captured:.12} of the norm (need {required:.12})")]
    Truncation { captured: f64, required: f64 },

    #[error("localization under-resolved: position spread {std:.3e} is below {cells} grid cells")]
    LocalizationResolution { std: f64, cells: f64 },

    #[error("energy grid does not cover level {level} +/- 5 widths")]
    EnergySpan { level: usize },

    #[error("no branch templates supplied")]
    EmptyTemplates,

    #[error("time grids differ: {0}")]
    MismatchedGrids(String),

    #[error("run {run} (seed {seed}) failed: {source}")]
    Run {
        run: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
