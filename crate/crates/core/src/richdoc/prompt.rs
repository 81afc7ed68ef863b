use serde::{Deserialize, Serialize};

use super::document::ImageRef;
use super::image::{resolve_embedded_image, ImageResolver, ImageToPrompt};
use super::palette::{nearest_color_name, ColorPalette};
use super::spans::{SpanAnnotation, SpanExtraction};
use crate::error::{Error, Result};

/// The plain-text prompt and guidance targets compiled for one span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPrompt {
    pub span_id: usize,
    pub prompt_text: String,
    /// Target color with channels in `[0, 1]`.
    pub color_target: Option<[f64; 3]>,
    pub texture_target: Option<ImageRef>,
    pub weight: f64,
}

/// Compiles a formatted span into its region prompt:
///
/// 1. start from the span text;
/// 2. an embedded image is captioned into the footnote (overriding any
///    explicit footnote);
/// 3. a footnote replaces the text;
/// 4. a style is appended as `"... in the style of <style>"`;
/// 5. the nearest palette color name is prepended and the exact color
///    becomes the guidance target;
/// 6. a texture description is prepended and the texture image becomes the
///    guidance target.
pub fn derive_region_prompt(
    span: &SpanAnnotation,
    palette: &ColorPalette,
    img2prompt: &dyn ImageToPrompt,
    images: &dyn ImageResolver,
) -> Result<RegionPrompt> {
    if span.is_unformatted {
        return Err(Error::InvalidInput(
            "the unformatted span uses the plain prompt verbatim".into(),
        ));
    }
    let a = &span.attributes;
    let mut prompt = span.text.trim().to_string();

    let mut footnote = a.footnote.clone();
    if let Some(img) = &a.embedded_image {
        let caption = resolve_embedded_image(img, images, img2prompt).map_err(|e| match e {
            Error::Caption { message, .. } => Error::Caption {
                span_id: Some(span.span_id),
                message,
            },
            other => other,
        })?;
        footnote = Some(caption);
    }
    if let Some(f) = footnote {
        prompt = f.trim().to_string();
    }
    if let Some(style) = &a.style {
        prompt = format!("{prompt} in the style of {}", style.trim());
    }
    let mut color_target = None;
    if let Some(rgb) = a.color {
        let name = nearest_color_name(rgb, palette)?;
        prompt = format!("{name} {prompt}");
        color_target = Some(rgb.normalized());
    }
    let mut texture_target = None;
    if let Some(tex) = &a.texture {
        images.resolve(&tex.image)?;
        if let Some(desc) = tex.description.as_deref().map(str::trim).filter(|d| !d.is_empty()) {
            prompt = format!("{desc} {prompt}");
        }
        texture_target = Some(tex.image.clone());
    }

    Ok(RegionPrompt {
        span_id: span.span_id,
        prompt_text: prompt,
        color_target,
        texture_target,
        weight: a.size_weight,
    })
}

/// Region prompts for every span; the unformatted span gets the plain prompt.
pub fn derive_region_prompts(
    extraction: &SpanExtraction,
    palette: &ColorPalette,
    img2prompt: &dyn ImageToPrompt,
    images: &dyn ImageResolver,
) -> Result<Vec<RegionPrompt>> {
    extraction
        .spans
        .iter()
        .map(|span| {
            if span.is_unformatted {
                Ok(RegionPrompt {
                    span_id: span.span_id,
                    prompt_text: extraction.plain_prompt.trim().to_string(),
                    color_target: None,
                    texture_target: None,
                    weight: 1.0,
                })
            } else {
                derive_region_prompt(span, palette, img2prompt, images)
            }
        })
        .collect()
}
