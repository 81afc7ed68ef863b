//! End-to-end generation: plain pass, token maps, rich pass.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attnmap::{
    aggregate_self_attention, build_token_maps, import_external_masks, label_segments, resample_maps,
    reweighted_token_maps, spectral_segment, AttentionRecord, SegmentSet, TokenMapSet,
};
use crate::error::{Error, Result};
use crate::regionfuse::{
    rich_pass, tile_texture, ConvExtractor, FeatureExtractor, GenerationConfig, Preview, RichPassContext, RichPassPlan,
    StepDiagnostic,
};
use crate::richdoc::{
    derive_region_prompts, extract_spans, CaptionTable, ColorPalette, FsImageResolver, ImageResolver, ImageToPrompt,
    RegionPrompt, RichTextDocument, SpanExtraction, WordTokenizer,
};
use crate::sampler::{
    gaussian, make_schedule, record_plain_pass_from, BackendTokenizer, Denoiser, PlainPass, PlainPassOptions,
    TokenWeight, ToyDenoiser, ToyLayoutSpec,
};
use crate::tensor::{from_rgb8, Grid, Map2, Tensor};

#[derive(Debug, Clone)]
pub struct GenerationResult {
    pub image: Tensor,
    /// Final image of the plain-prompt pass.
    pub plain_image: Tensor,
    /// Token maps at the sample resolution, one per span including the
    /// unformatted one.
    pub token_maps: TokenMapSet,
    /// Segmentation behind the token maps; absent when masks were supplied.
    pub segments: Option<SegmentSet>,
    pub previews: Vec<Preview>,
    pub region_prompts: Vec<RegionPrompt>,
    pub diagnostics: Vec<StepDiagnostic>,
    pub spans: SpanExtraction,
}

/// Optional inputs for editing an existing image rather than sampling a new
/// one.
#[derive(Debug, Clone, Default)]
pub struct GenerateOptions {
    /// Per-span region masks replacing attention-derived token maps.
    pub masks: Option<BTreeMap<usize, Map2>>,
    /// Starting sample `x_T`, for example from an inversion of a real image.
    pub initial_latent: Option<Tensor>,
}

#[derive(Clone)]
pub struct Engine {
    backend: Arc<dyn Denoiser>,
    palette: ColorPalette,
    images: Arc<dyn ImageResolver>,
    img2prompt: Arc<dyn ImageToPrompt>,
    extractor: Arc<dyn FeatureExtractor>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("backend", &self.backend.info())
            .finish_non_exhaustive()
    }
}

impl Engine {
    /// Engine with the common color palette, file-system images, an empty
    /// caption table and the reference feature extractor.
    pub fn new(backend: Arc<dyn Denoiser>) -> Self {
        Engine {
            backend,
            palette: ColorPalette::common(),
            images: Arc::new(FsImageResolver::default()),
            img2prompt: Arc::new(CaptionTable::default()),
            extractor: Arc::new(ConvExtractor::reference()),
        }
    }

    pub fn with_palette(mut self, palette: ColorPalette) -> Self {
        self.palette = palette;
        self
    }

    pub fn with_images(mut self, images: Arc<dyn ImageResolver>) -> Self {
        self.images = images;
        self
    }

    pub fn with_captions(mut self, img2prompt: Arc<dyn ImageToPrompt>) -> Self {
        self.img2prompt = img2prompt;
        self
    }

    pub fn with_extractor(mut self, extractor: Arc<dyn FeatureExtractor>) -> Self {
        self.extractor = extractor;
        self
    }

    pub fn backend(&self) -> &Arc<dyn Denoiser> {
        &self.backend
    }

    /// Span extraction and region prompts, without sampling.
    pub fn compile(&self, doc: &RichTextDocument) -> Result<(SpanExtraction, Vec<RegionPrompt>)> {
        doc.validate()?;
        let spans = extract_spans(doc, &BackendTokenizer(self.backend.as_ref()))?;
        let prompts = derive_region_prompts(&spans, &self.palette, self.img2prompt.as_ref(), self.images.as_ref())?;
        Ok((spans, prompts))
    }

    pub fn generate(&self, doc: &RichTextDocument, config: &GenerationConfig) -> Result<GenerationResult> {
        self.generate_with(doc, config, GenerateOptions::default(), &mut |_| {})
    }

    pub fn generate_with(
        &self,
        doc: &RichTextDocument,
        config: &GenerationConfig,
        options: GenerateOptions,
        observer: &mut dyn FnMut(&Preview),
    ) -> Result<GenerationResult> {
        config.validate()?;
        let (spans, prompts) = self.compile(doc)?;
        let backend = self.backend.as_ref();
        let info = backend.info();
        let sched = make_schedule(config.steps, config.schedule, config.eta)?;

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let x_t = match options.initial_latent {
            Some(x) if x.dim() != info.shape => {
                return Err(Error::Shape(format!(
                    "initial latent is {:?}, backend expects {:?}",
                    x.dim(),
                    info.shape
                )))
            }
            Some(x) => x,
            None => gaussian(info.shape, &mut rng),
        };
        let plain_prompt = &prompts[0].prompt_text;
        let plain_opts = PlainPassOptions {
            cfg_scale: config.guidance.cfg_scale,
            capture: true,
        };
        let plain = record_plain_pass_from(plain_prompt, &sched, backend, x_t.clone(), rng.clone(), plain_opts)?;

        let image_grid = info.image_grid();
        let (maps, segments) = match &options.masks {
            Some(masks) => (external_maps(masks, &spans, image_grid)?, None),
            None => {
                let (maps, seg) = token_maps_from_attention(&plain.record, &spans, config)?;
                (resample_maps(&maps, image_grid)?, Some(seg))
            }
        };

        let textures = self.prepare_textures(&prompts, info.shape)?;
        let plan = RichPassPlan {
            regions: &prompts,
            reweight: token_weights(&spans),
            textures,
            maps: &maps,
        };
        let rc = RichPassContext {
            backend,
            sched: &sched,
            cache: &plain.cache,
            extractor: self.extractor.as_ref(),
        };
        let out = rich_pass(&plan, config, &rc, x_t, rng, observer)?;
        let PlainPass { cache, .. } = plain;
        Ok(GenerationResult {
            image: out.image,
            plain_image: cache.states.into_iter().next().expect("trajectory has a final state"),
            token_maps: maps,
            segments,
            previews: out.previews,
            region_prompts: prompts,
            diagnostics: out.diagnostics,
            spans,
        })
    }

    fn prepare_textures(
        &self,
        prompts: &[RegionPrompt],
        shape: (usize, usize, usize),
    ) -> Result<BTreeMap<usize, Tensor>> {
        let mut out = BTreeMap::new();
        for p in prompts {
            if let Some(r) = &p.texture_target {
                if shape.0 != 3 {
                    return Err(Error::InvalidInput(format!(
                        "texture guidance needs an RGB sample space, backend has {} channels",
                        shape.0
                    )));
                }
                let img = self.images.resolve(r)?;
                out.insert(p.span_id, tile_texture(&from_rgb8(&img), (shape.1, shape.2)));
            }
        }
        Ok(out)
    }
}

/// Engine over a toy backend laid out from `doc`: one band for the
/// unformatted words and one per formatted span.
pub fn toy_engine(doc: &RichTextDocument, image: Grid) -> Result<Engine> {
    let spans = extract_spans(doc, &WordTokenizer)?;
    let backend = ToyDenoiser::new(ToyLayoutSpec::for_spans(image, &spans))?;
    Ok(Engine::new(Arc::new(backend)))
}

/// Per-token weights for spans whose size weight differs from one.
pub fn token_weights(spans: &SpanExtraction) -> Vec<TokenWeight> {
    spans
        .formatted()
        .iter()
        .filter(|s| s.attributes.size_weight != 1.0)
        .flat_map(|s| {
            s.token_indices().map(|token_index| TokenWeight {
                token_index,
                weight: s.attributes.size_weight,
            })
        })
        .collect()
}

/// Segments the aggregated self-attention, labels segments by
/// cross-attention and builds token maps at the attention resolution.
pub fn token_maps_from_attention(
    record: &AttentionRecord,
    spans: &SpanExtraction,
    config: &GenerationConfig,
) -> Result<(TokenMapSet, SegmentSet)> {
    let grid = record.grid;
    let sim = aggregate_self_attention(record)?;
    let k = config.k_segments.min(grid.0 * grid.1);
    let segments = spectral_segment(&sim, grid, k, config.seed)?;
    let mut weights = vec![1.0; spans.tokens.len()];
    for tw in token_weights(spans) {
        weights[tw.token_index] = tw.weight;
    }
    let cross = reweighted_token_maps(record, Some(&weights))?;
    let assignment = label_segments(&segments, &cross, &spans.spans, config.epsilon, config.label_reducer)?;
    let maps = build_token_maps(&assignment, &segments, spans.spans.iter().map(|s| s.span_id))?;
    Ok((maps, segments))
}

fn external_maps(
    masks: &BTreeMap<usize, Map2>,
    spans: &SpanExtraction,
    image_grid: (usize, usize),
) -> Result<TokenMapSet> {
    if let Some(id) = masks.keys().find(|id| spans.span(**id).is_none()) {
        return Err(Error::InvalidInput(format!("mask supplied for unknown span {id}")));
    }
    let grid = masks.values().next().map_or(image_grid, |m| m.dim());
    let mut set = import_external_masks(masks, grid)?;
    for s in &spans.spans {
        set.maps.entry(s.span_id).or_insert_with(|| Map2::zeros(grid));
    }
    resample_maps(&set, image_grid)
}
