use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::denoiser::{Denoiser, Hooks, InjectionPayload, StepContext, UNCONDITIONAL_PROMPT};
use super::schedule::NoiseSchedule;
use super::step::{gaussian, reverse_step};
use crate::attnmap::AttentionRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Everything the rich pass replays from the plain pass.
#[derive(Debug, Clone, Default)]
pub struct InjectionCache {
    /// `states[t]` is the plain-pass sample at timestep `t`; `states[0]` is
    /// the final image.
    pub states: Vec<Tensor>,
    pub payloads: BTreeMap<usize, Arc<InjectionPayload>>,
}

impl InjectionCache {
    pub fn state(&self, t: usize) -> Result<&Tensor> {
        self.states
            .get(t)
            .ok_or_else(|| Error::InvalidInput(format!("plain trajectory has no state for t={t}")))
    }

    pub fn payload(&self, t: usize) -> Option<Arc<InjectionPayload>> {
        self.payloads.get(&t).cloned()
    }

    pub fn final_image(&self) -> Option<&Tensor> {
        self.states.first()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlainPassOptions {
    pub cfg_scale: f64,
    /// Record attention maps and injection features.
    pub capture: bool,
}

impl Default for PlainPassOptions {
    fn default() -> Self {
        PlainPassOptions {
            cfg_scale: 1.0,
            capture: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlainPass {
    pub cache: InjectionCache,
    pub record: AttentionRecord,
}

impl PlainPass {
    pub fn final_image(&self) -> &Tensor {
        &self.cache.states[0]
    }
}

pub fn cfg_combine(eps_cond: &Tensor, eps_uncond: &Tensor, scale: f64) -> Result<Tensor> {
    if eps_cond.dim() != eps_uncond.dim() {
        return Err(Error::Shape(format!(
            "conditional {:?} vs unconditional {:?}",
            eps_cond.dim(),
            eps_uncond.dim()
        )));
    }
    let mut out = eps_uncond.clone();
    out.zip_mut_with(eps_cond, |u, &c| *u += scale * (c - *u));
    Ok(out)
}

/// Initial sample `x_T` for a seed.
pub fn initial_latent(backend: &dyn Denoiser, seed: u64) -> (Tensor, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian(backend.info().shape, &mut rng);
    (x, rng)
}

/// Samples the plain prompt from a seeded `x_T`, keeping every state and,
/// when capturing, the attention maps and injection features of each step.
pub fn record_plain_pass(
    prompt: &str,
    sched: &NoiseSchedule,
    backend: &dyn Denoiser,
    seed: u64,
    opts: PlainPassOptions,
) -> Result<PlainPass> {
    let (x, rng) = initial_latent(backend, seed);
    record_plain_pass_from(prompt, sched, backend, x, rng, opts)
}

/// Like [`record_plain_pass`] but starting from a caller-supplied `x_T`
/// (for example an inverted real image).
pub fn record_plain_pass_from(
    prompt: &str,
    sched: &NoiseSchedule,
    backend: &dyn Denoiser,
    x_t: Tensor,
    mut rng: ChaCha8Rng,
    opts: PlainPassOptions,
) -> Result<PlainPass> {
    let t_max = sched.t_max();
    let info = backend.info();
    if x_t.dim() != info.shape {
        return Err(Error::Shape(format!(
            "x_T is {:?}, backend expects {:?}",
            x_t.dim(),
            info.shape
        )));
    }
    let mut states = vec![Tensor::zeros((0, 0, 0)); t_max + 1];
    let mut payloads = BTreeMap::new();
    let mut record = AttentionRecord::new(info.attention_grid);
    let hooks = Hooks {
        capture_attention: opts.capture,
        capture_features: opts.capture,
        ..Hooks::default()
    };
    let mut x = x_t;
    for t in (1..=t_max).rev() {
        let step = t_max - t + 1;
        let ctx = StepContext::new(t, sched);
        let at = |e: Error| e.at_step(step, t, None);
        let cond = backend.predict(&x, prompt, ctx, &hooks).map_err(at)?;
        let eps = if opts.cfg_scale == 1.0 {
            cond.eps
        } else {
            let uncond = backend
                .predict(&x, UNCONDITIONAL_PROMPT, ctx, &Hooks::default())
                .map_err(at)?;
            cfg_combine(&cond.eps, &uncond.eps, opts.cfg_scale).map_err(at)?
        };
        if let Some(c) = cond.captures {
            record.extend(c);
        }
        if let Some(f) = cond.features {
            payloads.insert(t, Arc::new(f));
        }
        let next = reverse_step(&x, &eps, t, sched, &mut rng).map_err(at)?;
        states[t] = std::mem::replace(&mut x, next);
    }
    states[0] = x;
    Ok(PlainPass {
        cache: InjectionCache { states, payloads },
        record,
    })
}
