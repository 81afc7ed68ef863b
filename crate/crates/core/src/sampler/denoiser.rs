use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::attnmap::{AttentionRecord, SelfAttentionMap};
use crate::error::Result;
use crate::richdoc::{Token, Tokenizer, WordTokenizer};
use crate::tensor::{Grid, Tensor};

/// Prompt used for the unconditional branch of classifier-free guidance.
pub const UNCONDITIONAL_PROMPT: &str = "";

/// Where in the sampling run a prediction is requested.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepContext {
    pub t: usize,
    pub t_max: usize,
    pub alpha_bar: f64,
}

impl StepContext {
    pub fn new(t: usize, sched: &NoiseSchedule) -> Self {
        StepContext {
            t,
            t_max: sched.t_max(),
            alpha_bar: sched.alpha_bar(t),
        }
    }

    pub fn t_norm(&self) -> f64 {
        self.t as f64 / self.t_max as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenWeight {
    pub token_index: usize,
    pub weight: f64,
}

/// An intermediate activation a backend can hand back for injection.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub layer: usize,
    pub data: Tensor,
}

/// Self-attention maps and residual features captured at one step of the
/// plain pass, replayed into the same step of the rich pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InjectionPayload {
    pub self_attn: Vec<SelfAttentionMap>,
    pub features: Vec<FeatureTensor>,
}

impl InjectionPayload {
    pub fn is_empty(&self) -> bool {
        self.self_attn.is_empty() && self.features.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Hooks {
    pub capture_attention: bool,
    pub capture_features: bool,
    pub inject: Option<Arc<InjectionPayload>>,
    /// Per-token attention weights applied before the cross-attention
    /// softmax.
    pub reweight: Vec<TokenWeight>,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub eps: Tensor,
    pub captures: Option<AttentionRecord>,
    pub features: Option<InjectionPayload>,
}

impl Prediction {
    pub fn eps_only(eps: Tensor) -> Self {
        Prediction {
            eps,
            captures: None,
            features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub name: String,
    /// Sample shape as (channels, height, width).
    pub shape: (usize, usize, usize),
    /// Resolution of the attention captures.
    pub attention_grid: Grid,
    /// Whether concurrent `predict` calls are allowed.
    pub reentrant: bool,
}

impl BackendInfo {
    pub fn image_grid(&self) -> Grid {
        (self.shape.1, self.shape.2)
    }
}

/// A noise-prediction backend.
///
/// Implementations must be deterministic for fixed inputs and return a
/// noise tensor of the same shape as `x`.
pub trait Denoiser: Send + Sync {
    fn info(&self) -> BackendInfo;

    fn predict(&self, x: &Tensor, prompt: &str, step: StepContext, hooks: &Hooks) -> Result<Prediction>;

    /// Tokenization matching the backend's cross-attention token axis.
    fn tokenize(&self, text: &str) -> std::result::Result<Vec<Token>, String> {
        WordTokenizer.tokenize(text)
    }
}

/// Adapts a backend's tokenization to the [`Tokenizer`] trait.
pub struct BackendTokenizer<'a>(pub &'a dyn Denoiser);

impl Tokenizer for BackendTokenizer<'_> {
    fn tokenize(&self, text: &str) -> std::result::Result<Vec<Token>, String> {
        self.0.tokenize(text)
    }
}
