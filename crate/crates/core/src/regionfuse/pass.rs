use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blend::blend_plain;
use super::fuse::fuse_noise;
use super::guidance::{apply_guidance_update, color_gradient, texture_gradient, FeatureExtractor, GuidanceSpec};
use crate::attnmap::{LabelReducer, TokenMapSet};
use crate::error::{Error, Result};
use crate::richdoc::{RegionPrompt, UNFORMATTED_SPAN_ID};
use crate::sampler::{
    cfg_combine, predict_x0, reverse_step, Denoiser, Hooks, InjectionCache, NoiseSchedule, ScheduleKind, StepContext,
    TokenWeight, UNCONDITIONAL_PROMPT,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub k_segments: usize,
    pub epsilon: f64,
    /// Injection stays on while normalized time exceeds this.
    pub t_pnp: f64,
    /// Normalized time at which unformatted regions are reset to the plain
    /// trajectory.
    pub t_blend: f64,
    pub steps: usize,
    pub seed: u64,
    pub guidance: GuidanceSpec,
    pub eta: f64,
    pub schedule: ScheduleKind,
    pub label_reducer: LabelReducer,
    /// Emit an `x̂_0` preview every this many steps; 0 disables previews.
    pub preview_interval: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            k_segments: 15,
            epsilon: 0.3,
            t_pnp: 0.3,
            t_blend: 0.3,
            steps: 50,
            seed: 0,
            guidance: GuidanceSpec::default(),
            eta: 0.0,
            schedule: ScheduleKind::LinearBeta,
            label_reducer: LabelReducer::Mean,
            preview_interval: 10,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.k_segments < 2 {
            return bad(format!("k_segments must be at least 2, got {}", self.k_segments));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        for (name, v) in [("t_pnp", self.t_pnp), ("t_blend", self.t_blend)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta must lie in [0, 1], got {}", self.eta));
        }
        self.guidance.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpanLoss {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub texture: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preview {
    /// 1-based sampling step.
    pub step: usize,
    pub t: usize,
    pub t_norm: f64,
    pub image: Tensor,
    pub losses: BTreeMap<usize, SpanLoss>,
}

/// One JSON-lines diagnostics row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    pub step: usize,
    pub t: usize,
    pub span_id: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub texture_loss: Option<f64>,
    /// Wall time of the whole step.
    pub elapsed_us: u64,
}

pub fn write_diagnostics_jsonl<W: Write>(rows: &[StepDiagnostic], mut out: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// What the rich pass needs beyond the backend and the plain-pass cache.
#[derive(Debug, Clone)]
pub struct RichPassPlan<'a> {
    /// One prompt per span, the unformatted span included.
    pub regions: &'a [RegionPrompt],
    /// Plain-prompt token weights, sent with the unformatted span's calls.
    pub reweight: Vec<TokenWeight>,
    /// Texture targets prepared at the sample resolution, by span id.
    pub textures: BTreeMap<usize, Tensor>,
    /// Token maps at the sample resolution.
    pub maps: &'a TokenMapSet,
}

#[derive(Debug, Clone)]
pub struct RichPassOutput {
    pub image: Tensor,
    pub previews: Vec<Preview>,
    pub diagnostics: Vec<StepDiagnostic>,
}

pub struct RichPassContext<'a> {
    pub backend: &'a dyn Denoiser,
    pub sched: &'a NoiseSchedule,
    pub cache: &'a InjectionCache,
    pub extractor: &'a dyn FeatureExtractor,
}

fn predict_regions(
    backend: &dyn Denoiser,
    x: &Tensor,
    ctx: StepContext,
    calls: &[(usize, &str, Hooks)],
) -> Vec<(usize, Result<Tensor>)> {
    let run = |(id, prompt, hooks): &(usize, &str, Hooks)| (*id, backend.predict(x, prompt, ctx, hooks).map(|p| p.eps));
    if calls.len() > 1 && backend.info().reentrant {
        std::thread::scope(|s| {
            let handles: Vec<_> = calls.iter().map(|c| s.spawn(move || run(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("region worker panicked"))
                .collect()
        })
    } else {
        calls.iter().map(run).collect()
    }
}

/// Region-based sampling: per-span predictions fused by the token maps,
/// color and texture guidance, and a one-time reset of unformatted regions
/// to the plain trajectory.
pub fn rich_pass(
    plan: &RichPassPlan<'_>,
    config: &GenerationConfig,
    rc: &RichPassContext<'_>,
    x_t: Tensor,
    mut rng: ChaCha8Rng,
    observer: &mut dyn FnMut(&Preview),
) -> Result<RichPassOutput> {
    let sched = rc.sched;
    let t_max = sched.t_max();
    let region_ids: Vec<usize> = plan.regions.iter().map(|r| r.span_id).collect();
    if region_ids.len() != plan.maps.len() || region_ids.iter().any(|id| plan.maps.get(*id).is_none()) {
        return Err(Error::InvalidInput(format!(
            "region prompts {region_ids:?} do not match token maps {:?}",
            plan.maps.span_ids().collect::<Vec<_>>()
        )));
    }
    let unformatted = plan
        .maps
        .get(UNFORMATTED_SPAN_ID)
        .ok_or_else(|| Error::InvalidInput("token maps lack the unformatted span".into()))?;
    let g = &config.guidance;

    let mut x = x_t;
    let mut previews = Vec::new();
    let mut diagnostics = Vec::new();
    let mut blended = false;
    for t in (1..=t_max).rev() {
        let started = Instant::now();
        let step = t_max - t + 1;
        let ctx = StepContext::new(t, sched);
        let inject = if ctx.t_norm() > config.t_pnp {
            rc.cache.payload(t)
        } else {
            None
        };
        let base = Hooks {
            inject,
            ..Hooks::default()
        };

        let uncond = if g.cfg_scale != 1.0 {
            Some(
                rc.backend
                    .predict(&x, UNCONDITIONAL_PROMPT, ctx, &base)
                    .map_err(|e| e.at_step(step, t, None))?
                    .eps,
            )
        } else {
            None
        };
        let calls: Vec<(usize, &str, Hooks)> = plan
            .regions
            .iter()
            .map(|r| {
                let mut hooks = base.clone();
                if r.span_id == UNFORMATTED_SPAN_ID {
                    hooks.reweight = plan.reweight.clone();
                }
                (r.span_id, r.prompt_text.as_str(), hooks)
            })
            .collect();
        let mut region_eps = BTreeMap::new();
        for (id, eps) in predict_regions(rc.backend, &x, ctx, &calls) {
            let at = |e: Error| e.at_step(step, t, Some(id));
            let eps = eps.map_err(at)?;
            let eps = match &uncond {
                Some(u) => cfg_combine(&eps, u, g.cfg_scale).map_err(at)?,
                None => eps,
            };
            region_eps.insert(id, eps);
        }
        let fused = fuse_noise(&region_eps, plan.maps).map_err(|e| e.at_step(step, t, None))?;

        let mut losses = BTreeMap::new();
        let mut updates = Vec::new();
        for r in plan.regions {
            let texture = plan.textures.get(&r.span_id);
            if r.color_target.is_none() && texture.is_none() {
                continue;
            }
            let at = |e: Error| e.at_step(step, t, Some(r.span_id));
            let map = &plan.maps.maps[&r.span_id];
            let mut loss = SpanLoss::default();
            let mut total = Tensor::zeros(x.dim());
            if let Some(target) = r.color_target {
                if map.sum() > 0.0 {
                    let (l, grad) = color_gradient(&x, &fused, map, target, sched, t).map_err(at)?;
                    loss.color = Some(l);
                    total.scaled_add(g.lambda_color, &grad);
                }
            }
            if let Some(tex) = texture {
                let (l, grad) = texture_gradient(&x, &fused, map, tex, rc.extractor, sched, t).map_err(at)?;
                loss.texture = Some(l);
                total.scaled_add(g.lambda_texture, &grad);
            }
            losses.insert(r.span_id, loss);
            updates.push((r.span_id, total));
        }

        if config.preview_interval > 0 && step % config.preview_interval == 0 {
            let p = Preview {
                step,
                t,
                t_norm: ctx.t_norm(),
                image: predict_x0(&x, &fused, t, sched).map_err(|e| e.at_step(step, t, None))?,
                losses: losses.clone(),
            };
            observer(&p);
            previews.push(p);
        }

        for (id, grad) in &updates {
            x = apply_guidance_update(&x, &plan.maps.maps[id], grad, g, *id)
                .map_err(|e| e.at_step(step, t, Some(*id)))?;
        }
        x = reverse_step(&x, &fused, t, sched, &mut rng).map_err(|e| e.at_step(step, t, None))?;

        if !blended && sched.t_norm(t - 1) <= config.t_blend {
            let plain = rc.cache.state(t - 1).map_err(|e| e.at_step(step, t, None))?;
            x = blend_plain(&x, plain, unformatted).map_err(|e| e.at_step(step, t, None))?;
            blended = true;
        }

        let elapsed_us = started.elapsed().as_micros() as u64;
        diagnostics.extend(losses.into_iter().map(|(span_id, l)| StepDiagnostic {
            step,
            t,
            span_id,
            color_loss: l.color,
            texture_loss: l.texture,
            elapsed_us,
        }));
    }
    Ok(RichPassOutput {
        image: x,
        previews,
        diagnostics,
    })
}
