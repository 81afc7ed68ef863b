//! Region-based sampling: noise fusion, guidance and plain-trajectory
//! blending.

mod blend;
mod fuse;
mod guidance;
mod pass;
mod reweight;

pub use crate::sampler::cfg_combine;
pub use blend::blend_plain;
pub use fuse::fuse_noise;
pub use guidance::{
    apply_guidance_update, color_gradient, gram_matrix, texture_gradient, tile_texture, ConvExtractor,
    FeatureExtractor, GuidanceSpec,
};
pub use pass::{
    rich_pass, write_diagnostics_jsonl, GenerationConfig, Preview, RichPassContext, RichPassOutput, RichPassPlan,
    SpanLoss, StepDiagnostic,
};
pub use reweight::reweight_attention;
