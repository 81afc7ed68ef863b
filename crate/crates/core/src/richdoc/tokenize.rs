use serde::{Deserialize, Serialize};

/// One token of a plain prompt, with byte offsets into the source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits prompt text into tokens. Backends with their own text encoder
/// supply an implementation so that token indices line up with their
/// cross-attention captures.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, String>;
}

/// Lowercase whitespace-plus-punctuation splitting.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordTokenizer;

impl Tokenizer for WordTokenizer {
    fn tokenize(&self, text: &str) -> Result<Vec<Token>, String> {
        let mut tokens = Vec::new();
        let mut start: Option<usize> = None;
        let flush = |tokens: &mut Vec<Token>, s: usize, e: usize| {
            tokens.push(Token {
                text: text[s..e].to_lowercase(),
                start: s,
                end: e,
            });
        };
        for (i, c) in text.char_indices() {
            if c.is_whitespace() || c.is_ascii_punctuation() {
                if let Some(s) = start.take() {
                    flush(&mut tokens, s, i);
                }
                if c.is_ascii_punctuation() {
                    flush(&mut tokens, i, i + c.len_utf8());
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            flush(&mut tokens, s, text.len());
        }
        Ok(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        WordTokenizer.tokenize(s).unwrap().into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn splits_on_whitespace_and_punctuation() {
        assert_eq!(
            words("A Cat,  chasing a butterfly."),
            ["a", "cat", ",", "chasing", "a", "butterfly", "."]
        );
        assert!(words("   ").is_empty());
    }

    #[test]
    fn offsets_index_source() {
        let text = "Ünïcode cafés!";
        for t in WordTokenizer.tokenize(text).unwrap() {
            assert_eq!(text[t.start..t.end].to_lowercase(), t.text);
        }
    }
}
