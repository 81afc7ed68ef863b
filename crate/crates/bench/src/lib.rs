//! Benchmark fixtures shared by the criterion targets.

use richtx::richdoc::{AttributeSet, Rgb, RichTextDocument, TextElement};

/// Three-span document with a color, a style and a weight.
pub fn sample_document() -> RichTextDocument {
    RichTextDocument::new(vec![
        TextElement::plain("a "),
        TextElement::with(
            "church",
            AttributeSet {
                color: Some(Rgb([220, 20, 60])),
                ..AttributeSet::default()
            },
        ),
        TextElement::plain(" next to a "),
        TextElement::with(
            "lake",
            AttributeSet {
                style: Some("Ukiyo-e".into()),
                ..AttributeSet::default()
            },
        ),
        TextElement::plain(" under a "),
        TextElement::with(
            "sky",
            AttributeSet {
                size_weight: 2.0,
                ..AttributeSet::default()
            },
        ),
    ])
}
