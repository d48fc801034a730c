//! Error type shared by every module.

use crate::explainers::GroupMaskParams;

pub type Result<T> = std::result::Result<T, Error>;

/// State of a mask fit at the last epoch whose parameters were still finite.
#[derive(Debug, Clone)]
pub enum FitState {
    Group(GroupMaskParams),
    Individual(Vec<f64>),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A precondition on the inputs was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value appeared while evaluating or differentiating a node.
    #[error("numeric error at node {node} ({op}): {detail}")]
    Numeric {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    #[error("explainer diverged at epoch {epoch}: {detail}")]
    ExplainerDiverged {
        epoch: usize,
        detail: String,
        last_finite: Box<FitState>,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for failures caused by non-finite arithmetic rather than bad inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Numeric { .. } | Error::TrainingDiverged { .. } | Error::ExplainerDiverged { .. }
        )
    }
}

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)*)));
        }
    };
}
pub(crate) use ensure;
