//! Attribute extraction through a pluggable provider, with caching, retries
//! and token accounting.

pub mod cache;
pub mod mock;
pub mod prompt;
pub mod provider;
pub mod tokenizer;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

pub use cache::{AuditEntry, AuditLog, Charges, ExtractionCache, ExtractionResult};
pub use mock::{load_truth, Billing, MockProvider, TruthRecord};
pub use provider::{HttpProvider, Provider, ProviderError, ProviderRequest, ProviderResponse, RequestKind};
pub use tokenizer::{count_tokens, default_tokenizer, ApproxTokenizer, Tokenizer};

use crate::catalog::{AttributeSpec, Document, Segment, Value};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("provider failed on `{doc_id}` after {attempts} attempts: {source}")]
    Provider {
        doc_id: String,
        attempts: u32,
        #[source]
        source: ProviderError,
    },
    #[error("provider returned no usable exemplars for `{0}`")]
    NoExemplars(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubled for each further one.
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
        }
    }
}

/// `Table.attr`, the key used by the cache and in result rows.
pub fn qualified(attr: &AttributeSpec) -> String {
    format!("{}.{}", attr.table, attr.name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extracted {
    pub result: ExtractionResult,
    /// Served from the cache; no tokens were charged.
    pub cached: bool,
}

pub struct Extractor {
    provider: Arc<dyn Provider>,
    tokenizer: Arc<dyn Tokenizer>,
    cache: ExtractionCache,
    audit: AuditLog,
    retry: RetryPolicy,
    prompt_budget: Option<usize>,
    warnings: AtomicUsize,
}

impl Extractor {
    pub fn new(provider: Arc<dyn Provider>, tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self {
            provider,
            tokenizer,
            cache: ExtractionCache::new(),
            audit: AuditLog::new(),
            retry: RetryPolicy::default(),
            prompt_budget: None,
            warnings: AtomicUsize::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Caps the segment tokens sent in one extraction prompt.
    pub fn with_prompt_budget(mut self, budget: Option<usize>) -> Self {
        self.prompt_budget = budget;
        self
    }

    pub fn cache(&self) -> &ExtractionCache {
        &self.cache
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn tokenizer(&self) -> &Arc<dyn Tokenizer> {
        &self.tokenizer
    }

    pub fn provider_id(&self) -> String {
        self.provider.id()
    }

    /// Replies that could not be read as a single value.
    pub fn warnings(&self) -> usize {
        self.warnings.load(Ordering::Relaxed)
    }

    fn warn(&self, flagged: bool) {
        if flagged {
            self.warnings.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn call(&self, req: &ProviderRequest<'_>) -> Result<ProviderResponse, ExtractError> {
        let attempts = self.retry.attempts.max(1);
        let mut last = None;
        for i in 0..attempts {
            if i > 0 && !self.retry.base_delay.is_zero() {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(i - 1));
            }
            match self.provider.complete(req) {
                Ok(r) => return Ok(r),
                Err(e) => last = Some(e),
            }
        }
        Err(ExtractError::Provider {
            doc_id: req.doc_id.to_string(),
            attempts,
            source: last.expect("at least one attempt"),
        })
    }

    /// Extracts one attribute from the given segments. Cached results are
    /// returned without a provider call and without charges.
    pub fn extract_attribute(
        &self,
        doc_id: &str,
        attr: &AttributeSpec,
        segments: &[&Segment],
        sink: &mut Charges,
    ) -> Result<Extracted, ExtractError> {
        let key = qualified(attr);
        let mut segs: Vec<&Segment> = segments.to_vec();
        if let Some(budget) = self.prompt_budget {
            let mut used = 0;
            segs.retain(|s| {
                used += s.token_count;
                used <= budget
            });
        }
        let (result, cached) = self.cache.get_or_try_insert(doc_id, &key, || {
            if segs.is_empty() {
                return Ok(ExtractionResult::null());
            }
            let attrs = std::slice::from_ref(attr);
            let req = ProviderRequest {
                kind: RequestKind::Extract,
                doc_id,
                attributes: attrs,
                segments: &segs,
                prompt: prompt::extract_prompt(attr, &segs),
                exemplars: 0,
            };
            let resp = self.call(&req)?;
            sink.record(doc_id, &key, RequestKind::Extract, resp.input_tokens, resp.output_tokens);
            let (value, warning) = prompt::parse_extract_reply(&resp.text, attr);
            self.warn(warning);
            let provenance = if value.is_null() {
                Vec::new()
            } else {
                segs.iter().map(|s| s.seg_id.clone()).collect()
            };
            Ok(ExtractionResult {
                value,
                provenance,
                input_tokens: resp.input_tokens,
                output_tokens: resp.output_tokens,
                parse_warning: warning,
            })
        })?;
        Ok(Extracted { result, cached })
    }

    /// Extracts several attributes from a whole document in one call, locating
    /// the evidence of each found value among the document's segments.
    /// Results are cached, so later extractions of the same cells are free.
    pub fn sample_document(
        &self,
        doc: &Document,
        segments: &[&Segment],
        attrs: &[AttributeSpec],
        sink: &mut Charges,
    ) -> Result<Vec<ExtractionResult>, ExtractError> {
        let missing: Vec<AttributeSpec> = attrs
            .iter()
            .filter(|a| !self.cache.contains(&doc.doc_id, &qualified(a)))
            .cloned()
            .collect();
        if !missing.is_empty() {
            let req = ProviderRequest {
                kind: RequestKind::Sample,
                doc_id: &doc.doc_id,
                attributes: &missing,
                segments,
                prompt: prompt::sample_prompt(&missing, &doc.text),
                exemplars: 0,
            };
            let resp = self.call(&req)?;
            let label = missing.iter().map(qualified).collect::<Vec<_>>().join(",");
            sink.record(&doc.doc_id, &label, RequestKind::Sample, resp.input_tokens, resp.output_tokens);
            let obj = prompt::reply_object(&resp.text);
            self.warn(obj.is_none());
            for a in &missing {
                let (value, evidence, mut warning) = match &obj {
                    Some(o) => prompt::parse_sample_field(o, a),
                    None => (Value::Null, None, true),
                };
                let mut provenance = Vec::new();
                let mut value = value;
                if !value.is_null() {
                    provenance = locate_evidence(doc, segments, evidence.as_deref(), &value);
                    if provenance.is_empty() {
                        // A value we cannot tie to any passage is not trusted.
                        value = Value::Null;
                        warning = true;
                    }
                }
                self.warn(warning && obj.is_some());
                self.cache.insert_if_absent(
                    &doc.doc_id,
                    &qualified(a),
                    ExtractionResult {
                        value,
                        provenance,
                        input_tokens: resp.input_tokens,
                        output_tokens: resp.output_tokens,
                        parse_warning: warning,
                    },
                );
            }
        }
        Ok(attrs
            .iter()
            .map(|a| self.cache.get(&doc.doc_id, &qualified(a)).unwrap_or_else(ExtractionResult::null))
            .collect())
    }

    /// Asks the provider for exemplar passages stating an attribute.
    pub fn synthesize_exemplars(
        &self,
        attr: &AttributeSpec,
        n: usize,
        sink: &mut Charges,
    ) -> Result<Vec<String>, ExtractError> {
        let key = qualified(attr);
        let req = ProviderRequest {
            kind: RequestKind::Synthesize,
            doc_id: "",
            attributes: std::slice::from_ref(attr),
            segments: &[],
            prompt: prompt::synthesize_prompt(attr, n),
            exemplars: n,
        };
        let resp = self.call(&req)?;
        sink.record("", &key, RequestKind::Synthesize, resp.input_tokens, resp.output_tokens);
        match prompt::parse_exemplars(&resp.text) {
            Some(list) if !list.is_empty() => Ok(list),
            _ => Err(ExtractError::NoExemplars(key)),
        }
    }
}

/// Segment ids supporting a sampled value: those overlapping the quoted
/// evidence, else those containing the value's text.
fn locate_evidence(doc: &Document, segments: &[&Segment], evidence: Option<&str>, value: &Value) -> Vec<String> {
    if let Some(ev) = evidence.map(str::trim).filter(|e| !e.is_empty()) {
        if let Some(start) = doc.text.find(ev) {
            let end = start + ev.len();
            let hits: Vec<String> = segments
                .iter()
                .filter(|s| s.overlaps(start, end))
                .map(|s| s.seg_id.clone())
                .collect();
            if !hits.is_empty() {
                return hits;
            }
        }
    }
    let needle = match value {
        Value::Null => return Vec::new(),
        Value::Number(n) => n.to_string(),
        Value::Text(s) => s.trim().to_string(),
    };
    if needle.is_empty() {
        return Vec::new();
    }
    segments
        .iter()
        .filter(|s| s.text.contains(&needle))
        .map(|s| s.seg_id.clone())
        .collect()
}

#[cfg(test)]
mod tests;
