use thiserror::Error;

use crate::timefn::{EvalError, ParseError};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("index {index} out of range for dimension {m}")]
    IndexOutOfRange { index: usize, m: usize },

    #[error("unsupported dimension {0} (supported: 2..=8)")]
    UnsupportedDimension(usize),

    #[error("entry {offset} is not finite")]
    NonFinite { offset: usize },

    #[error("binary operation is not associative: a(a({x},{y}),{z}) != a({x},a({y},{z}))")]
    NonAssociative { x: usize, y: usize, z: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("evaluation failed at (s={s}, t={t}): {source}")]
    FamilyEval {
        s: f64,
        t: f64,
        #[source]
        source: EvalError,
    },

    /// A validity condition of a family constructor failed at a sampled point.
    #[error("{family}: {condition} violated at {at}: {detail}")]
    Construction {
        family: String,
        condition: String,
        at: String,
        detail: String,
    },

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn construction(
        family: &str,
        condition: impl Into<String>,
        at: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        Error::Construction {
            family: family.to_string(),
            condition: condition.into(),
            at: at.into(),
            detail: detail.into(),
        }
    }
}
