//! Token-unit abstraction shared by the segmentation and truncation limits.
//!
//! The default tokenizer splits on whitespace. A subword tokenizer can be
//! injected instead so that token budgets line up with a specific encoder's
//! vocabulary; every operation that counts tokens goes through this trait.

/// Converts between strings and token sequences.
///
/// Implementations must satisfy `detokenize(tokenize(s))` equals `s` up to
/// whitespace normalization.
pub trait Tokenizer: Send + Sync {
    fn tokenize(&self, text: &str) -> Vec<String>;
    fn detokenize(&self, tokens: &[String]) -> String;

    fn count(&self, text: &str) -> usize {
        self.tokenize(text).len()
    }
}

/// Whitespace tokenizer: tokens are maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize(&self, text: &str) -> Vec<String> {
        text.split_whitespace().map(str::to_owned).collect()
    }

    fn detokenize(&self, tokens: &[String]) -> String {
        tokens.join(" ")
    }
}
