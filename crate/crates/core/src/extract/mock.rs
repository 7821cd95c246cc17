//! Offline provider answering from a sidecar truth file.
//!
//! A value is reported only when one of the supplied segments overlaps the
//! character span where the truth file says the value is stated, so retrieval
//! mistakes surface as NULLs exactly as they would with a real model.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use super::provider::{Provider, ProviderError, ProviderRequest, ProviderResponse, RequestKind};
use super::tokenizer::Tokenizer;
use crate::catalog::{for_each_json_line, CatalogError, Segment, Value};

/// One sidecar record: where a document states an attribute value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub doc_id: String,
    pub attribute: String,
    pub value: Value,
    pub span_start: usize,
    pub span_end: usize,
}

pub fn load_truth(path: &Path) -> Result<Vec<TruthRecord>, CatalogError> {
    let mut out = Vec::new();
    for_each_json_line(path, |_, r: TruthRecord| {
        out.push(r);
        Ok(())
    })?;
    Ok(out)
}

/// How the mock reports token usage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Billing {
    /// Tokens of the rendered prompt and of the reply.
    #[default]
    Prompt,
    /// Exactly the tokens of the supplied segments, nothing for the reply.
    /// Realized costs then equal the planner's estimates.
    Segments,
}

pub struct MockProvider {
    truth: HashMap<(String, String), TruthRecord>,
    billing: Billing,
    tokenizer: Arc<dyn Tokenizer>,
    calls: AtomicUsize,
    fail_first: usize,
    fail_docs: Vec<String>,
}

impl MockProvider {
    pub fn new(truth: Vec<TruthRecord>, billing: Billing, tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self {
            truth: truth
                .into_iter()
                .map(|r| ((r.doc_id.clone(), r.attribute.to_ascii_lowercase()), r))
                .collect(),
            billing,
            tokenizer,
            calls: AtomicUsize::new(0),
            fail_first: 0,
            fail_docs: Vec::new(),
        }
    }

    /// Fails the first `n` calls with a transport error.
    pub fn failing_first(mut self, n: usize) -> Self {
        self.fail_first = n;
        self
    }

    /// Fails every call about the given documents.
    pub fn failing_docs(mut self, docs: Vec<String>) -> Self {
        self.fail_docs = docs;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, doc: &str, table: &str, name: &str) -> Option<&TruthRecord> {
        let qualified = format!("{table}.{name}").to_ascii_lowercase();
        self.truth
            .get(&(doc.to_string(), qualified))
            .or_else(|| self.truth.get(&(doc.to_string(), name.to_ascii_lowercase())))
    }

    fn visible<'a>(&self, rec: &TruthRecord, segments: &[&'a Segment]) -> Vec<&'a Segment> {
        segments
            .iter()
            .copied()
            .filter(|s| s.overlaps(rec.span_start, rec.span_end))
            .collect()
    }
}

fn to_json(v: &Value) -> serde_json::Value {
    serde_json::to_value(v).expect("value serializes")
}

/// Text of the span as seen through the supplied segments.
fn evidence_text(rec: &TruthRecord, segs: &[&Segment]) -> String {
    segs.iter()
        .map(|s| {
            let a = rec.span_start.max(s.span.0) - s.span.0;
            let b = rec.span_end.min(s.span.1) - s.span.0;
            s.text.get(a..b).unwrap_or_default()
        })
        .collect()
}

impl Provider for MockProvider {
    fn id(&self) -> String {
        format!("mock:{:?}", self.billing).to_lowercase()
    }

    fn complete(&self, req: &ProviderRequest<'_>) -> Result<ProviderResponse, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.fail_first || self.fail_docs.iter().any(|d| d == req.doc_id) {
            return Err(ProviderError::Transport("injected failure".into()));
        }
        let mut obj = Map::new();
        match req.kind {
            RequestKind::Extract | RequestKind::Sample => {
                for a in req.attributes {
                    let found = self
                        .lookup(req.doc_id, &a.table, &a.name)
                        .map(|r| (r, self.visible(r, req.segments)))
                        .filter(|(_, segs)| !segs.is_empty());
                    let v = match (req.kind, found) {
                        (_, None) => serde_json::Value::Null,
                        (RequestKind::Extract, Some((r, _))) => to_json(&r.value),
                        (_, Some((r, segs))) => json!({
                            "value": to_json(&r.value),
                            "evidence": evidence_text(r, &segs),
                        }),
                    };
                    obj.insert(a.name.clone(), v);
                }
            }
            RequestKind::Synthesize => {
                let a = &req.attributes[0];
                let ex: Vec<String> = (0..req.exemplars)
                    .map(|i| format!("{}: {} (example {}).", a.name, a.description, i + 1))
                    .collect();
                obj.insert("exemplars".into(), json!(ex));
            }
        }
        let text = serde_json::Value::Object(obj).to_string();
        let (input_tokens, output_tokens) = match (self.billing, req.kind) {
            (Billing::Segments, RequestKind::Extract | RequestKind::Sample) => {
                (req.segments.iter().map(|s| s.token_count).sum(), 0)
            }
            _ => (self.tokenizer.count(&req.prompt), self.tokenizer.count(&text)),
        };
        Ok(ProviderResponse {
            text,
            input_tokens,
            output_tokens,
        })
    }
}
