//! Semantic chunking: sentences merge with their neighbour while adjacent
//! sentence embeddings stay above a cosine threshold.

use super::embed::{cosine, Embedder};
use super::IndexError;
use crate::catalog::{Document, Segment};
use crate::extract::tokenizer::Tokenizer;
use crate::text::sentence_spans;

pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.75;

pub fn segment_document(
    doc: &Document,
    embedder: &dyn Embedder,
    tokenizer: &dyn Tokenizer,
    merge_threshold: f64,
) -> Result<Vec<Segment>, IndexError> {
    let text = &doc.text;
    let spans = sentence_spans(text);
    let embs = spans
        .iter()
        .map(|&(s, e)| embedder.embed(&text[s..e]))
        .collect::<Result<Vec<_>, _>>()?;

    let mut groups: Vec<(usize, usize)> = vec![spans[0]];
    for i in 1..spans.len() {
        if cosine(&embs[i - 1], &embs[i]).min(1.0) > merge_threshold {
            groups.last_mut().unwrap().1 = spans[i].1;
        } else {
            groups.push(spans[i]);
        }
    }

    groups
        .into_iter()
        .enumerate()
        .map(|(i, (s, e))| {
            let seg_text = &text[s..e];
            Ok(Segment {
                seg_id: format!("{}#{i}", doc.doc_id),
                doc_id: doc.doc_id.clone(),
                span: (s, e),
                text: seg_text.to_string(),
                token_count: tokenizer.count(seg_text).max(1),
                embedding: embedder.embed(seg_text)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::tokenizer::ApproxTokenizer;
    use crate::index::HashedEmbedder;

    fn doc(text: &str) -> Document {
        Document {
            doc_id: "d".into(),
            text: text.into(),
            token_count: 0,
            summary: String::new(),
            embedding: None,
        }
    }

    fn check_cover(d: &Document, segs: &[Segment]) {
        assert_eq!(segs[0].span.0, 0);
        assert_eq!(segs.last().unwrap().span.1, d.text.len());
        for w in segs.windows(2) {
            assert_eq!(w[0].span.1, w[1].span.0);
        }
        let joined: String = segs.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(joined, d.text);
    }

    #[test]
    fn single_sentence() {
        let d = doc("Just one sentence here.");
        let segs = segment_document(&d, &HashedEmbedder::default(), &ApproxTokenizer, 0.75).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].span, (0, d.text.len()));
    }

    #[test]
    fn topic_boundary() {
        let a = "orbit comet nebula quasar pulsar";
        let b = "violin cello oboe flute harp";
        let mut text = String::new();
        for i in 0..5 {
            text.push_str(&format!("{a} a{i}. "));
        }
        for i in 0..5 {
            text.push_str(&format!("{b} b{i}. "));
        }
        let d = doc(text.trim_end());
        let segs = segment_document(&d, &HashedEmbedder::default(), &ApproxTokenizer, 0.75).unwrap();
        assert_eq!(segs.len(), 2);
        assert!(segs[1].text.starts_with("violin"));
        check_cover(&d, &segs);
    }

    #[test]
    fn threshold_one_never_merges() {
        let d = doc("Same words here. Same words here. Same words here.");
        let segs = segment_document(&d, &HashedEmbedder::default(), &ApproxTokenizer, 1.0).unwrap();
        assert_eq!(segs.len(), 3);
        check_cover(&d, &segs);
    }
}
