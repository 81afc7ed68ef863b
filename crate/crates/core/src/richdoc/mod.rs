//! Rich-text documents: parsing, token alignment, and region prompt
//! compilation.

mod document;
mod image;
mod palette;
mod prompt;
mod spans;
mod tokenize;

pub use self::document::{
    document_from_value, parse_document, AttributeSet, ImageRef, Rgb, RichTextDocument, TextElement, Texture,
    SCHEMA_VERSION,
};
pub use self::image::{
    content_hash, resolve_embedded_image, CaptionTable, FsImageResolver, ImageResolver, ImageToPrompt,
    MemoryImageResolver,
};
pub use self::palette::{nearest_color_name, parse_ordered as parse_palette_ordered, ColorPalette};
pub use self::prompt::{derive_region_prompt, derive_region_prompts, RegionPrompt};
pub use self::spans::{
    check_token_budget, extract_spans, BudgetWarning, SpanAnnotation, SpanExtraction, CLIP_TOKEN_BUDGET,
    UNFORMATTED_SPAN_ID,
};
pub use self::tokenize::{Token, Tokenizer, WordTokenizer};
