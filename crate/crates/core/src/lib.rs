//! Region-based diffusion driven by rich-text prompts.
//!
//! A rich-text document is compiled into per-span region prompts, the spans
//! are localized with token maps extracted from a plain-prompt sampling
//! pass, and a second pass fuses per-region noise predictions with color
//! and texture guidance while keeping unformatted regions faithful to the
//! plain result.

pub mod attnmap;
pub mod colorbench;
pub mod engine;
pub mod error;
pub mod regionfuse;
pub mod richdoc;
pub mod sampler;
pub mod tensor;

pub use engine::{toy_engine, Engine, GenerateOptions, GenerationResult};
pub use error::{Error, Result};
