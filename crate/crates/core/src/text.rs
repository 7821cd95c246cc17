//! Sentence and paragraph boundaries shared by the summarizer and the segmenter.

use once_cell::sync::Lazy;
use regex::Regex;

static SENTENCE_END: Lazy<Regex> = Lazy::new(|| Regex::new(r"[.?!]\s+").unwrap());
static PARAGRAPH_BREAK: Lazy<Regex> = Lazy::new(|| Regex::new(r"\n[ \t]*\n\s*").unwrap());

/// Splits `text` into sentences on `[.?!]` followed by whitespace.
///
/// Returned byte ranges are contiguous and cover the whole input: each range
/// includes the trailing whitespace after its terminator, the first starts at
/// 0 and the last ends at `text.len()`. Whitespace-only tails are folded into
/// the preceding sentence.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for m in SENTENCE_END.find_iter(text) {
        spans.push((start, m.end()));
        start = m.end();
    }
    if start < text.len() {
        if text[start..].trim().is_empty() && !spans.is_empty() {
            spans.last_mut().unwrap().1 = text.len();
        } else {
            spans.push((start, text.len()));
        }
    }
    if spans.is_empty() {
        spans.push((0, text.len()));
    }
    spans
}

/// Byte ranges of paragraphs separated by blank lines.
pub fn paragraph_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for m in PARAGRAPH_BREAK.find_iter(text) {
        if !text[start..m.start()].trim().is_empty() {
            spans.push((start, m.start()));
        }
        start = m.end();
    }
    if start < text.len() && !text[start..].trim().is_empty() {
        spans.push((start, text.len()));
    }
    spans
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentences_cover_text() {
        let text = "One. Two? Three! Four";
        let spans = sentence_spans(text);
        assert_eq!(spans.len(), 4);
        assert_eq!(spans[0], (0, 5));
        assert_eq!(spans.last().unwrap().1, text.len());
        for w in spans.windows(2) {
            assert_eq!(w[0].1, w[1].0);
        }
    }

    #[test]
    fn decimal_point_does_not_split() {
        assert_eq!(sentence_spans("It weighs 3.5 kg. Done.").len(), 2);
    }

    #[test]
    fn trailing_whitespace_folds() {
        let text = "Only sentence.   ";
        assert_eq!(sentence_spans(text), vec![(0, text.len())]);
    }

    #[test]
    fn paragraphs() {
        let text = "A. B.\n\nC. D.\n  \nE.";
        let p = paragraph_spans(text);
        assert_eq!(p.len(), 3);
        assert_eq!(&text[p[1].0..p[1].1], "C. D.");
    }
}
