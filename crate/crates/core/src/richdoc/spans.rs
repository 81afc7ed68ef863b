use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::document::{AttributeSet, RichTextDocument};
use super::tokenize::{Token, Tokenizer};
use crate::error::{Error, Result};

/// Span id reserved for the pool of unformatted tokens.
pub const UNFORMATTED_SPAN_ID: usize = 0;

/// CLIP text encoders truncate at this many tokens.
pub const CLIP_TOKEN_BUDGET: usize = 77;

/// A run of prompt tokens sharing one attribute set.
///
/// Formatted spans cover exactly one contiguous range. The unformatted span
/// collects every remaining token and may therefore be split into several
/// ranges (or none at all when every token is formatted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub span_id: usize,
    pub token_ranges: Vec<Range<usize>>,
    /// Element text for formatted spans; the full plain prompt for the
    /// unformatted span, whose region process runs on the plain prompt.
    pub text: String,
    pub attributes: AttributeSet,
    pub is_unformatted: bool,
    /// Index of the source element (formatted spans only).
    pub element: Option<usize>,
}

impl SpanAnnotation {
    pub fn token_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.token_ranges.iter().flat_map(|r| r.clone())
    }

    pub fn token_count(&self) -> usize {
        self.token_ranges.iter().map(|r| r.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanExtraction {
    pub plain_prompt: String,
    pub tokens: Vec<Token>,
    /// The unformatted span first, then formatted spans in document order.
    pub spans: Vec<SpanAnnotation>,
}

impl SpanExtraction {
    pub fn unformatted(&self) -> &SpanAnnotation {
        &self.spans[0]
    }

    pub fn formatted(&self) -> &[SpanAnnotation] {
        &self.spans[1..]
    }

    pub fn span(&self, span_id: usize) -> Option<&SpanAnnotation> {
        self.spans.iter().find(|s| s.span_id == span_id)
    }
}

/// Tokenizes the plain prompt and assigns every token to exactly one span.
pub fn extract_spans(doc: &RichTextDocument, tokenizer: &dyn Tokenizer) -> Result<SpanExtraction> {
    doc.validate()?;
    let plain_prompt = doc.plain_text();

    let mut bounds = Vec::with_capacity(doc.elements.len());
    let mut offset = 0;
    for (i, el) in doc.elements.iter().enumerate() {
        let own = tokenizer
            .tokenize(&el.text)
            .map_err(|message| Error::Tokenizer { element: i, message })?;
        if own.is_empty() {
            return Err(Error::validation(Some(i), "text", "text contains no tokens"));
        }
        bounds.push(offset..offset + el.text.len());
        offset += el.text.len();
    }

    let tokens = tokenizer
        .tokenize(&plain_prompt)
        .map_err(|message| Error::Tokenizer { element: 0, message })?;

    // owner[t] = element index that token t belongs to
    let mut owner = Vec::with_capacity(tokens.len());
    for tok in &tokens {
        let i = bounds.partition_point(|b| b.end <= tok.start);
        if i >= bounds.len() {
            return Err(Error::Invariant(format!(
                "token {:?} lies outside the prompt",
                tok.text
            )));
        }
        let formatted = |k: usize| !doc.elements[k].attributes.is_empty();
        if tok.end > bounds[i].end {
            let last = bounds.partition_point(|b| b.end < tok.end).min(bounds.len() - 1);
            if (i..=last).any(formatted) {
                return Err(Error::validation(
                    Some(i),
                    "text",
                    format!("token {:?} crosses a formatted element boundary", tok.text),
                ));
            }
        }
        owner.push(i);
    }

    let mut spans = vec![SpanAnnotation {
        span_id: UNFORMATTED_SPAN_ID,
        token_ranges: Vec::new(),
        text: plain_prompt.clone(),
        attributes: AttributeSet::default(),
        is_unformatted: true,
        element: None,
    }];
    let mut unformatted: Vec<usize> = Vec::new();

    for (i, el) in doc.elements.iter().enumerate() {
        let first = owner.iter().position(|&o| o == i);
        let count = owner.iter().filter(|&&o| o == i).count();
        if el.attributes.is_empty() {
            unformatted.extend(owner.iter().enumerate().filter(|(_, &o)| o == i).map(|(t, _)| t));
            continue;
        }
        let start = first.ok_or_else(|| Error::validation(Some(i), "text", "text contains no tokens"))?;
        spans.push(SpanAnnotation {
            span_id: spans.len(),
            token_ranges: vec![start..start + count],
            text: el.text.trim().to_string(),
            attributes: el.attributes.clone(),
            is_unformatted: false,
            element: Some(i),
        });
    }
    spans[0].token_ranges = compress_ranges(&unformatted);

    Ok(SpanExtraction {
        plain_prompt,
        tokens,
        spans,
    })
}

fn compress_ranges(indices: &[usize]) -> Vec<Range<usize>> {
    let mut out: Vec<Range<usize>> = Vec::new();
    for &i in indices {
        match out.last_mut() {
            Some(r) if r.end == i => r.end += 1,
            _ => out.push(i..i + 1),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetWarning {
    pub token_count: usize,
    pub budget: usize,
    pub overflow: usize,
}

impl std::fmt::Display for BudgetWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "prompt has {} tokens, {} over the encoder budget of {}; the excess is truncated by the text encoder",
            self.token_count, self.overflow, self.budget
        )
    }
}

/// Advisory check against the text encoder's context length.
pub fn check_token_budget(plain_tokens: &[Token], budget: usize) -> Vec<BudgetWarning> {
    let n = plain_tokens.len();
    if n > budget {
        vec![BudgetWarning {
            token_count: n,
            budget,
            overflow: n - budget,
        }]
    } else {
        Vec::new()
    }
}
