use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::richdoc::{parse_palette_ordered, AttributeSet, Rgb, RichTextDocument, TextElement};

const COMMON_JSON: &str = include_str!("../../data/palettes/common.json");
const HTML_JSON: &str = include_str!("../../data/palettes/html.json");
const RGB_JSON: &str = include_str!("../../data/palettes/rgb.json");

/// Number of colors drawn for the RGB category.
pub const RGB_SAMPLE_COUNT: usize = 50;

/// Object prompts and the words to color in each. `"bottle beverage"` is
/// colored as the phrase `"bottle of beverage"` so the span stays
/// contiguous.
pub const OBJECT_PROMPTS: [(&str, &str); 12] = [
    ("a man wearing a shirt", "shirt"),
    ("a woman wearing pants", "pants"),
    ("a car in the street", "car"),
    ("a basket of fruit", "fruit"),
    ("a bowl of vegetable", "vegetable"),
    ("a flower in a vase", "flower"),
    ("a bottle of beverage on the table", "bottle of beverage"),
    ("a plant in the garden", "plant"),
    ("a candy on the table", "candy"),
    ("a toy on the floor", "toy"),
    ("a gem on the ground", "gem"),
    ("a church with beautiful landscape in the background", "church"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorCategory {
    /// Basic color names.
    Common,
    /// HTML color names with a coarse hue appended.
    Html,
    /// Arbitrary triplets.
    Rgb,
}

impl ColorCategory {
    pub const ALL: [ColorCategory; 3] = [ColorCategory::Common, ColorCategory::Html, ColorCategory::Rgb];

    pub fn as_str(self) -> &'static str {
        match self {
            ColorCategory::Common => "common",
            ColorCategory::Html => "html",
            ColorCategory::Rgb => "rgb",
        }
    }

    fn file_name(self) -> String {
        format!("{}.json", self.as_str())
    }

    fn bundled(self) -> &'static str {
        match self {
            ColorCategory::Common => COMMON_JSON,
            ColorCategory::Html => HTML_JSON,
            ColorCategory::Rgb => RGB_JSON,
        }
    }

    /// The bundled listing, in file order.
    pub fn palette(self) -> Vec<(String, Rgb)> {
        parse_palette_ordered(self.bundled()).expect("bundled palette is valid")
    }
}

impl fmt::Display for ColorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ColorCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown color category {s:?}")))
    }
}

/// Where the RGB category's colors come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "seed")]
pub enum RgbSource {
    /// The fixed list of triplets shipped with the palettes.
    #[default]
    Listed,
    /// Uniform triplets from a seeded generator.
    Sampled(u64),
}

/// `n` uniform RGB triplets named like the listed ones.
pub fn sample_rgb_colors(seed: u64, n: usize) -> Vec<(String, Rgb)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let rgb = Rgb(rng.gen());
            (format!("color of RGB values {rgb}"), rgb)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCase {
    pub case_id: String,
    pub category: ColorCategory,
    pub prompt: String,
    /// Words of `prompt` that carry the color.
    pub target_span: String,
    /// Palette name of the color.
    pub color_name: String,
    pub target_color: Rgb,
}

impl BenchmarkCase {
    /// The prompt with `target_span` colored.
    pub fn document(&self) -> Result<RichTextDocument> {
        let at = self.prompt.find(&self.target_span).ok_or_else(|| {
            Error::InvalidInput(format!("{:?} does not occur in {:?}", self.target_span, self.prompt))
        })?;
        let end = at + self.target_span.len();
        let mut elements = Vec::with_capacity(3);
        if at > 0 {
            elements.push(TextElement::plain(&self.prompt[..at]));
        }
        elements.push(TextElement::with(
            &self.target_span,
            AttributeSet {
                color: Some(self.target_color),
                ..AttributeSet::default()
            },
        ));
        if end < self.prompt.len() {
            elements.push(TextElement::plain(&self.prompt[end..]));
        }
        Ok(RichTextDocument::new(elements))
    }
}

/// The three color lists in category order.
#[derive(Debug, Clone, PartialEq)]
pub struct SuitePalettes {
    pub colors: Vec<(ColorCategory, Vec<(String, Rgb)>)>,
}

impl SuitePalettes {
    pub fn bundled(rgb: RgbSource) -> Self {
        Self::assemble(|c| Ok(c.palette()), rgb).expect("bundled palettes are valid")
    }

    /// Reads `common.json`, `html.json` and (for listed RGB colors)
    /// `rgb.json` from `dir`.
    pub fn load(dir: &Path, rgb: RgbSource) -> Result<Self> {
        Self::assemble(
            |c| {
                let path = dir.join(c.file_name());
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| Error::InvalidInput(format!("palette {}: {e}", path.display())))?;
                let colors = parse_palette_ordered(&text)
                    .map_err(|e| Error::InvalidInput(format!("palette {}: {e}", path.display())))?;
                if colors.is_empty() {
                    return Err(Error::InvalidInput(format!("palette {} is empty", path.display())));
                }
                Ok(colors)
            },
            rgb,
        )
    }

    fn assemble(mut read: impl FnMut(ColorCategory) -> Result<Vec<(String, Rgb)>>, rgb: RgbSource) -> Result<Self> {
        let rgb_colors = match rgb {
            RgbSource::Listed => read(ColorCategory::Rgb)?,
            RgbSource::Sampled(seed) => sample_rgb_colors(seed, RGB_SAMPLE_COUNT),
        };
        Ok(SuitePalettes {
            colors: vec![
                (ColorCategory::Common, read(ColorCategory::Common)?),
                (ColorCategory::Html, read(ColorCategory::Html)?),
                (ColorCategory::Rgb, rgb_colors),
            ],
        })
    }
}

/// Every object prompt crossed with every color, grouped by category then
/// color.
pub fn build_color_suite(palettes: &SuitePalettes) -> Vec<BenchmarkCase> {
    let mut out = Vec::new();
    for (category, colors) in &palettes.colors {
        for (ci, (name, rgb)) in colors.iter().enumerate() {
            for (oi, (prompt, span)) in OBJECT_PROMPTS.iter().enumerate() {
                out.push(BenchmarkCase {
                    case_id: format!("{category}-{ci:02}-{oi:02}"),
                    category: *category,
                    prompt: (*prompt).to_string(),
                    target_span: (*span).to_string(),
                    color_name: name.clone(),
                    target_color: *rgb,
                });
            }
        }
    }
    out
}

/// The bundled suite; `rgb` picks listed or seeded RGB colors.
pub fn default_color_suite(rgb: RgbSource) -> Vec<BenchmarkCase> {
    build_color_suite(&SuitePalettes::bundled(rgb))
}
