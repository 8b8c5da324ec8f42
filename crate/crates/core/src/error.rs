use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unresolved component reference `{0}`")]
    UnresolvedComponent(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value produced at node {node}")]
    NonFinite { node: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid component `{id}`: {reason}")]
    InvalidComponent { id: String, reason: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("split `{0}` is empty")]
    EmptySplit(String),

    #[error(
        "gram matrix is numerically singular (condition estimate {condition:.3e}); \
         components look linearly dependent; rerun with a positive ridge"
    )]
    SingularGram { condition: f64 },

    #[error("activation `{0}` does not have a continuous derivative everywhere")]
    NotC1Activation(String),

    #[error("activation derivative at the expansion point is {0:e}, too small to invert")]
    VanishingDerivative(f64),

    #[error("network has no trainable parameters")]
    NoTrainableParameters,

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("non-finite gradient entry at `{path}`")]
    NonFiniteGradient { path: String },

    #[error("every candidate failed to train at step {step}")]
    AllCandidatesFailed { step: String },

    #[error("exhaustive search needs {requested} candidates, over the limit of {limit}")]
    BudgetExceeded { requested: usize, limit: usize },

    #[error("degenerate trial specification: {0}")]
    Degenerate(String),

    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn mismatch(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }
}
