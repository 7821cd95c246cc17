use std::sync::Arc;

/// Counts tokens for cost accounting. Every cost in the engine is measured
/// with whichever tokenizer is configured, so comparisons stay consistent.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;

    fn id(&self) -> &str;
}

/// Character-based approximation: `ceil(chars / 4)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenizer;

impl Tokenizer for ApproxTokenizer {
    fn count(&self, text: &str) -> usize {
        text.chars().count().div_ceil(4)
    }

    fn id(&self) -> &str {
        "approx-chars-4"
    }
}

pub fn default_tokenizer() -> Arc<dyn Tokenizer> {
    Arc::new(ApproxTokenizer)
}

/// Token count under the default approximation.
pub fn count_tokens(text: &str) -> usize {
    ApproxTokenizer.count(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_is_zero() {
        assert_eq!(count_tokens(""), 0);
    }

    #[test]
    fn four_hundred_ascii_chars() {
        let s = "a".repeat(400);
        assert_eq!(count_tokens(&s), 100);
        assert_eq!(count_tokens(&"a".repeat(401)), 101);
    }

    #[test]
    fn counts_chars_not_bytes() {
        // 4 chars, 8 bytes
        assert_eq!(count_tokens("éééé"), 1);
    }

    proptest! {
        #[test]
        fn subadditive(a in ".{0,64}", b in ".{0,64}") {
            let joined = format!("{a}{b}");
            prop_assert!(count_tokens(&joined) <= count_tokens(&a) + count_tokens(&b) + 1);
            prop_assert!(count_tokens(&joined) + 1 >= count_tokens(&a) + count_tokens(&b));
        }
    }
}
