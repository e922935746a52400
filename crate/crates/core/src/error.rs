use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("index error: {what} {index} out of range (bound {bound})")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient in parameter `{parameter}`")]
    NonFiniteGradient { parameter: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("infeasible stage: model of size {n_params:.4e} cannot resume at loss {prev_loss} (floor {floor})")]
    InfeasibleStage {
        n_params: f64,
        prev_loss: f64,
        floor: f64,
    },

    #[error("infeasible schedule: {0}")]
    Infeasible(String),

    #[error("schedule optimization did not converge: {detail} (best compute {best_compute:.6e})")]
    NotConverged { detail: String, best_compute: f64 },

    #[error("insufficient data: need {needed} samples, have {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("target curve never reaches the pre-growth loss {loss}")]
    InfeasibleMatch { loss: f64 },

    #[error("stage {stage} exceeded its budget of {budget} steps (last slope {last_slope:?}, threshold {threshold})")]
    BudgetExceeded {
        stage: usize,
        budget: u64,
        last_slope: Option<f64>,
        threshold: f64,
    },

    #[error("validation loss is not finite at step {step}")]
    NonFiniteLoss { step: u64 },

    /// A run monitor stopped training.
    #[error("run aborted: {0}")]
    Aborted(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
