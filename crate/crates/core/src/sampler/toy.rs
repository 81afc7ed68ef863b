//! Closed-form denoiser whose sampling converges to a known target image,
//! with synthetic attention captures derived from a region layout.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::denoiser::{BackendInfo, Denoiser, FeatureTensor, Hooks, InjectionPayload, Prediction, StepContext};
use crate::attnmap::{AttentionRecord, CaptureTag, CrossAttentionScores, SelfAttentionMap};
use crate::error::{Error, Result};
use crate::richdoc::{ColorPalette, SpanExtraction, Tokenizer, WordTokenizer};
use crate::tensor::{Grid, Map2, Tensor};

/// Logit advantage of a region's keyword tokens on that region's pixels.
pub const CROSS_LOGIT_GAP: f64 = 4.0;
pub const UNCONDITIONAL_GRAY: f64 = 0.5;
pub const DEFAULT_ATTENTION_NOISE: f64 = 0.02;

/// Colors the default target function draws from.
pub const DEFAULT_TOY_PALETTE: [[f64; 3]; 8] = [
    [0.80, 0.36, 0.27],
    [0.27, 0.55, 0.80],
    [0.36, 0.70, 0.38],
    [0.93, 0.78, 0.30],
    [0.58, 0.40, 0.74],
    [0.20, 0.20, 0.25],
    [0.85, 0.85, 0.80],
    [0.45, 0.30, 0.20],
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyRegion {
    /// Binary mask over the image grid.
    pub mask: Map2,
    /// Words whose cross-attention concentrates on this region.
    pub keywords: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyLayoutSpec {
    pub image: Grid,
    pub regions: Vec<ToyRegion>,
    /// Amplitude of the uniform noise added to synthetic attention.
    pub attention_noise: f64,
    /// Image pixels per attention pixel along each axis.
    pub attention_downsample: usize,
    /// Gaussian falloff radius, in attention pixels, of self-attention
    /// within a region. `None` makes every region a flat block.
    pub locality: Option<f64>,
    pub palette: Vec<[f64; 3]>,
    pub seed: u64,
}

impl ToyLayoutSpec {
    pub fn new(image: Grid, regions: Vec<ToyRegion>) -> Self {
        let downsample = if image.0 % 2 == 0 && image.1 % 2 == 0 && image.0 >= 16 {
            2
        } else {
            1
        };
        let attn = (image.0 / downsample).max(image.1 / downsample);
        ToyLayoutSpec {
            image,
            regions,
            attention_noise: DEFAULT_ATTENTION_NOISE,
            attention_downsample: downsample,
            locality: Some(attn as f64 / 4.0),
            palette: DEFAULT_TOY_PALETTE.to_vec(),
            seed: 0,
        }
    }

    /// Equal-width vertical bands, one per keyword set, left to right.
    pub fn bands(image: Grid, keywords: Vec<Vec<String>>) -> Self {
        let n = keywords.len().max(1);
        let regions = keywords
            .into_iter()
            .enumerate()
            .map(|(r, keywords)| ToyRegion {
                mask: Map2::from_shape_fn(image, |(_, x)| if x * n / image.1 == r { 1.0 } else { 0.0 }),
                keywords,
            })
            .collect();
        Self::new(image, regions)
    }

    /// One band for the unformatted words followed by one band per
    /// formatted span, each keyed by its span's words.
    pub fn for_spans(image: Grid, extraction: &SpanExtraction) -> Self {
        let words = |span: &crate::richdoc::SpanAnnotation| {
            span.token_indices()
                .map(|i| extraction.tokens[i].text.clone())
                .collect::<Vec<_>>()
        };
        let keywords = std::iter::once(words(extraction.unformatted()))
            .chain(extraction.formatted().iter().map(words))
            .collect();
        Self::bands(image, keywords)
    }

    pub fn attention_grid(&self) -> Grid {
        (
            self.image.0 / self.attention_downsample,
            self.image.1 / self.attention_downsample,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.attention_downsample;
        if f == 0 || self.image.0 % f != 0 || self.image.1 % f != 0 {
            return Err(Error::InvalidInput(format!(
                "downsample factor {f} does not divide image {:?}",
                self.image
            )));
        }
        if self.regions.is_empty() || self.palette.is_empty() {
            return Err(Error::InvalidInput("toy layout needs regions and a palette".into()));
        }
        if self.attention_noise < 0.0 {
            return Err(Error::InvalidInput("attention noise must be nonnegative".into()));
        }
        let mut cover = Map2::zeros(self.image);
        for (i, r) in self.regions.iter().enumerate() {
            if r.mask.dim() != self.image {
                return Err(Error::Shape(format!("region {i} mask is {:?}", r.mask.dim())));
            }
            if r.mask.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidInput(format!("region {i} mask is not binary")));
            }
            cover += &r.mask;
        }
        if cover.iter().any(|&c| c != 1.0) {
            return Err(Error::InvalidInput("region masks must be disjoint and covering".into()));
        }
        Ok(())
    }

    /// Region index of every image pixel, row-major.
    pub fn image_labels(&self) -> Vec<usize> {
        let (h, w) = self.image;
        (0..h * w)
            .map(|p| {
                self.regions
                    .iter()
                    .position(|r| r.mask[[p / w, p % w]] > 0.5)
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Region index of every attention pixel, sampled at block centers.
    pub fn attention_labels(&self) -> Vec<usize> {
        let (h, w) = self.attention_grid();
        let f = self.attention_downsample;
        let img = self.image_labels();
        (0..h * w)
            .map(|p| img[((p / w) * f + f / 2) * self.image.1 + (p % w) * f + f / 2])
            .collect()
    }
}

/// Maps a prompt to the image the toy backend converges to.
pub trait ToyTarget: Send + Sync {
    fn target(&self, prompt: &str, layout: &ToyLayoutSpec) -> Tensor;
}

impl<F> ToyTarget for F
where
    F: Fn(&str, &ToyLayoutSpec) -> Tensor + Send + Sync,
{
    fn target(&self, prompt: &str, layout: &ToyLayoutSpec) -> Tensor {
        self(prompt, layout)
    }
}

/// Default target function. The empty prompt is mid-gray; a prompt naming
/// a common color is filled with it; any other prompt paints each region
/// with a palette entry picked by hashing the prompt and region index.
#[derive(Debug, Clone)]
pub struct PaletteTarget {
    names: ColorPalette,
}

impl Default for PaletteTarget {
    fn default() -> Self {
        PaletteTarget {
            names: ColorPalette::common(),
        }
    }
}

pub fn uniform_image(grid: Grid, rgb: [f64; 3]) -> Tensor {
    Tensor::from_shape_fn((3, grid.0, grid.1), |(c, _, _)| rgb[c])
}

fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

impl PaletteTarget {
    pub fn named_color(&self, prompt: &str) -> Option<[f64; 3]> {
        let tokens = WordTokenizer.tokenize(prompt).ok()?;
        tokens
            .iter()
            .find_map(|t| self.names.get(&t.text).map(|c| c.normalized()))
    }
}

impl ToyTarget for PaletteTarget {
    fn target(&self, prompt: &str, layout: &ToyLayoutSpec) -> Tensor {
        if prompt.trim().is_empty() {
            return uniform_image(layout.image, [UNCONDITIONAL_GRAY; 3]);
        }
        if let Some(rgb) = self.named_color(prompt) {
            return uniform_image(layout.image, rgb);
        }
        let colors: Vec<[f64; 3]> = (0..layout.regions.len())
            .map(|r| {
                let h = stable_hash(&[prompt.as_bytes(), &(r as u64).to_le_bytes()]);
                layout.palette[(h % layout.palette.len() as u64) as usize]
            })
            .collect();
        let labels = layout.image_labels();
        let w = layout.image.1;
        Tensor::from_shape_fn((3, layout.image.0, w), |(c, y, x)| colors[labels[y * w + x]][c])
    }
}

pub struct ToyDenoiser {
    layout: ToyLayoutSpec,
    target: Arc<dyn ToyTarget>,
    attn_labels: Vec<usize>,
    self_base: Array2<f64>,
}

impl std::fmt::Debug for ToyDenoiser {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyDenoiser")
            .field("layout", &self.layout)
            .finish_non_exhaustive()
    }
}

impl ToyDenoiser {
    pub fn new(layout: ToyLayoutSpec) -> Result<Self> {
        Self::with_target(layout, Arc::new(PaletteTarget::default()))
    }

    pub fn with_target(layout: ToyLayoutSpec, target: Arc<dyn ToyTarget>) -> Result<Self> {
        layout.validate()?;
        let attn_labels = layout.attention_labels();
        let (_, w) = layout.attention_grid();
        let n = attn_labels.len();
        let self_base = Array2::from_shape_fn((n, n), |(i, j)| {
            if attn_labels[i] != attn_labels[j] {
                return 0.0;
            }
            match layout.locality {
                None => 1.0,
                Some(r) => {
                    let dy = (i / w) as f64 - (j / w) as f64;
                    let dx = (i % w) as f64 - (j % w) as f64;
                    (-(dy * dy + dx * dx) / (2.0 * r * r)).exp()
                }
            }
        });
        Ok(ToyDenoiser {
            layout,
            target,
            attn_labels,
            self_base,
        })
    }

    pub fn layout(&self) -> &ToyLayoutSpec {
        &self.layout
    }

    pub fn target(&self, prompt: &str) -> Tensor {
        self.target.target(prompt, &self.layout)
    }

    fn noise_rng(&self, prompt: &str, t: usize, stream: u8) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(stable_hash(&[
            &self.layout.seed.to_le_bytes(),
            prompt.as_bytes(),
            &(t as u64).to_le_bytes(),
            &[stream],
        ]))
    }

    fn self_attention(&self, prompt: &str, step: StepContext) -> SelfAttentionMap {
        let mut rng = self.noise_rng(prompt, step.t, 0);
        let amp = self.layout.attention_noise;
        let mut probs = self.self_base.clone();
        for mut row in probs.outer_iter_mut() {
            if amp > 0.0 {
                row.mapv_inplace(|v| v + amp * rng.gen::<f64>());
            }
            let s = row.sum();
            row /= s;
        }
        SelfAttentionMap {
            tag: tag(step),
            probs: probs.mapv(|v| v as f32),
        }
    }

    fn cross_attention(&self, prompt: &str, step: StepContext, hooks: &Hooks) -> Result<CrossAttentionScores> {
        let tokens = self.tokenize(prompt).map_err(Error::Backend)?;
        let mut log_w = vec![0.0; tokens.len()];
        for tw in &hooks.reweight {
            if !(tw.weight > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "token weight {} must be positive",
                    tw.weight
                )));
            }
            if let Some(l) = log_w.get_mut(tw.token_index) {
                *l = tw.weight.ln();
            }
        }
        let mut rng = self.noise_rng(prompt, step.t, 1);
        let amp = self.layout.attention_noise;
        let scores = Array2::from_shape_fn((tokens.len(), self.attn_labels.len()), |(j, p)| {
            let region = &self.layout.regions[self.attn_labels[p]];
            let gap = if region.keywords.iter().any(|k| k.eq_ignore_ascii_case(&tokens[j].text)) {
                CROSS_LOGIT_GAP
            } else {
                0.0
            };
            (gap + amp * rng.gen::<f64>() + log_w[j]) as f32
        });
        Ok(CrossAttentionScores {
            tag: tag(step),
            grid: self.layout.attention_grid(),
            scores,
        })
    }
}

fn tag(step: StepContext) -> CaptureTag {
    CaptureTag {
        layer: 0,
        head: 0,
        timestep: step.t,
        t_norm: step.t_norm(),
    }
}

impl Denoiser for ToyDenoiser {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            name: "toy".into(),
            shape: (3, self.layout.image.0, self.layout.image.1),
            attention_grid: self.layout.attention_grid(),
            reentrant: true,
        }
    }

    fn predict(&self, x: &Tensor, prompt: &str, step: StepContext, hooks: &Hooks) -> Result<Prediction> {
        let shape = (3, self.layout.image.0, self.layout.image.1);
        if x.dim() != shape {
            return Err(Error::Shape(format!(
                "toy backend expects {shape:?}, got {:?}",
                x.dim()
            )));
        }
        let a = step.alpha_bar;
        if !(a < 1.0) {
            return Err(Error::Backend(format!(
                "toy denoiser is singular at t={} where alpha_bar = {a}",
                step.t
            )));
        }
        let target = self.target(prompt);
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        let mut eps = x.clone();
        eps.zip_mut_with(&target, |v, &tv| *v = (*v - sa * tv) / sn);

        let self_map = (hooks.capture_attention || hooks.capture_features).then(|| self.self_attention(prompt, step));
        let captures = if hooks.capture_attention {
            let mut rec = AttentionRecord::new(self.layout.attention_grid());
            rec.self_maps.push(self_map.clone().expect("computed above"));
            rec.cross.push(self.cross_attention(prompt, step, hooks)?);
            Some(rec)
        } else {
            None
        };
        let features = hooks.capture_features.then(|| InjectionPayload {
            self_attn: self_map.into_iter().collect(),
            features: vec![FeatureTensor {
                layer: 0,
                data: x.clone(),
            }],
        });
        Ok(Prediction {
            eps,
            captures,
            features,
        })
    }
}
