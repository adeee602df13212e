use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration field `{field}` must be strictly positive and finite, got {value}")]
    InvalidConfiguration { field: &'static str, value: f64 },

    #[error("support distribution is empty")]
    EmptySupport,

    #[error("probability p[{index}] must be finite and nonnegative, got {value}")]
    InvalidProbability { index: usize, value: f64 },

    #[error("probabilities sum to {sum}, expected 1 within {tolerance:e}")]
    ProbabilitySum { sum: f64, tolerance: f64 },

    #[error("policy entry pi[{index}] must lie in [0, 1], got {value}")]
    PolicyOutOfRange { index: usize, value: f64 },

    #[error("length mismatch: expected {expected} entries, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("parameter `{name}` is invalid: {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("policy is infeasible: f_per - lambda*E[XL] = {slack} is not positive")]
    Infeasible { slack: f64 },

    #[error("nobody offloads under this policy, so the allocated MEC rate is undefined")]
    DegeneratePolicy,

    #[error("evaluation budget exceeded: {required} evaluations requested, cap is {cap}")]
    BudgetExceeded { required: f64, cap: f64 },

    #[error("at least {min} trajectories are needed for a confidence interval, got {found}")]
    TooFewTrajectories { min: usize, found: usize },

    #[error("objective is not finite at the starting point")]
    InfeasibleStart,

    #[error("no finite objective value on the search lattice")]
    NoFeasiblePoint,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
