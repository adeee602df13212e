use crate::scenario::ScenarioError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Model(#[from] mfoffload::Error),
    #[error("{0}")]
    Validation(String),
    #[error("fictitious play did not reach exploitability {tol:e} (final {achieved:e})")]
    NotConverged { tol: f64, achieved: f64 },
    #[error(transparent)]
    FictitiousPlay(#[from] mfoffload::mfg::FictitiousPlayFailure),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    /// 2 for invalid input, 3 for convergence or feasibility failures.
    pub fn exit_code(&self) -> u8 {
        use mfoffload::Error as E;
        match self {
            CliError::Scenario(_) | CliError::Validation(_) => 2,
            CliError::Model(E::Infeasible { .. } | E::DegeneratePolicy | E::NoFeasiblePoint) => 3,
            CliError::Model(_) => 2,
            CliError::NotConverged { .. } | CliError::FictitiousPlay(_) => 3,
            CliError::Io { .. } | CliError::Csv(_) | CliError::Json(_) => 1,
        }
    }
}
