//! Noise schedules, the backend contract, and the deterministic toy
//! backend.

mod denoiser;
mod plain;
pub mod remote;
mod schedule;
mod step;
mod toy;

pub use denoiser::{
    BackendInfo, BackendTokenizer, Denoiser, FeatureTensor, Hooks, InjectionPayload, Prediction, StepContext,
    TokenWeight, UNCONDITIONAL_PROMPT,
};
pub use plain::{
    cfg_combine, initial_latent, record_plain_pass, record_plain_pass_from, InjectionCache, PlainPass, PlainPassOptions,
};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleKind, BETA_END, BETA_START};
pub use step::{add_noise, ddim_sigma, gaussian, predict_x0, reverse_step};
pub use toy::{
    uniform_image, PaletteTarget, ToyDenoiser, ToyLayoutSpec, ToyRegion, ToyTarget, CROSS_LOGIT_GAP,
    DEFAULT_ATTENTION_NOISE, DEFAULT_TOY_PALETTE, UNCONDITIONAL_GRAY,
};
