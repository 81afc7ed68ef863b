use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("invalid document: element {}: {field}: {message}", fmt_index(*.element))]
    Validation {
        element: Option<usize>,
        field: String,
        message: String,
    },

    #[error("tokenizer failed on element {element}: {message}")]
    Tokenizer { element: usize, message: String },

    #[error("color palette is empty")]
    EmptyPalette,

    #[error("image {reference}: {message}")]
    Image { reference: String, message: String },

    #[error("captioning failed{}: {message}", fmt_span(*.span_id))]
    Caption { span_id: Option<usize>, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("eigensolver did not converge on a {0}x{0} matrix")]
    EigenNoConvergence(usize),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("non-finite guidance gradient for span {span_id}")]
    NonFiniteGradient { span_id: usize },

    #[error("step {step} (t={t}){}: {source}", fmt_span(*.span_id))]
    AtStep {
        step: usize,
        t: usize,
        span_id: Option<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_index(i: Option<usize>) -> String {
    i.map_or_else(|| "-".to_string(), |i| i.to_string())
}

fn fmt_span(s: Option<usize>) -> String {
    s.map_or_else(String::new, |s| format!(" span {s}"))
}

impl Error {
    pub(crate) fn validation(element: Option<usize>, field: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            element,
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize, t: usize, span_id: Option<usize>) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                t,
                span_id,
                source: Box::new(e),
            },
        }
    }

    /// True for errors caused by the caller's input rather than the engine.
    pub fn is_client_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation { .. }
                | Error::Tokenizer { .. }
                | Error::Image { .. }
                | Error::Caption { .. }
                | Error::InvalidInput(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
