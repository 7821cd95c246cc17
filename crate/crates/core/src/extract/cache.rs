//! Extraction cache with single-flight semantics, and the token audit log.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};

use super::provider::RequestKind;
use crate::catalog::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub value: Value,
    /// Segment ids the value was read from; empty for NULL.
    pub provenance: Vec<String>,
    /// Usage of the call that produced this result.
    pub input_tokens: usize,
    pub output_tokens: usize,
    /// The reply could not be read as a single value.
    pub parse_warning: bool,
}

impl ExtractionResult {
    pub fn null() -> Self {
        Self {
            value: Value::Null,
            provenance: Vec::new(),
            input_tokens: 0,
            output_tokens: 0,
            parse_warning: false,
        }
    }
}

type Slot = Arc<OnceCell<ExtractionResult>>;

/// Keyed by `(doc_id, qualified attribute)`. Concurrent requests for the same
/// key block on one in-flight computation instead of issuing duplicate calls.
#[derive(Default)]
pub struct ExtractionCache {
    slots: Mutex<HashMap<(String, String), Slot>>,
}

impl ExtractionCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&self, doc_id: &str, attr: &str) -> Slot {
        let mut slots = self.slots.lock().expect("cache lock");
        slots
            .entry((doc_id.to_string(), attr.to_string()))
            .or_default()
            .clone()
    }

    pub fn get(&self, doc_id: &str, attr: &str) -> Option<ExtractionResult> {
        let slots = self.slots.lock().expect("cache lock");
        slots
            .get(&(doc_id.to_string(), attr.to_string()))
            .and_then(|s| s.get().cloned())
    }

    pub fn contains(&self, doc_id: &str, attr: &str) -> bool {
        self.get(doc_id, attr).is_some()
    }

    /// Returns the cached result or computes it. The flag is true on a hit.
    /// A failed computation leaves the slot empty so a later call may retry.
    pub fn get_or_try_insert<E>(
        &self,
        doc_id: &str,
        attr: &str,
        f: impl FnOnce() -> Result<ExtractionResult, E>,
    ) -> Result<(ExtractionResult, bool), E> {
        let slot = self.slot(doc_id, attr);
        let mut computed = false;
        let r = slot.get_or_try_init(|| {
            computed = true;
            f()
        })?;
        Ok((r.clone(), !computed))
    }

    /// Stores a result unless one is already present. Returns true if stored.
    pub fn insert_if_absent(&self, doc_id: &str, attr: &str, result: ExtractionResult) -> bool {
        self.slot(doc_id, attr).set(result).is_ok()
    }

    pub fn len(&self) -> usize {
        let slots = self.slots.lock().expect("cache lock");
        slots.values().filter(|s| s.get().is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One billed provider call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// Logical timestamp: position in the committed log.
    pub timestamp: u64,
    pub doc_id: String,
    /// Qualified attribute names, comma-joined for multi-attribute calls.
    pub attribute: String,
    pub kind: RequestKind,
    pub input_tokens: usize,
    pub output_tokens: usize,
}

impl AuditEntry {
    pub fn tokens(&self) -> usize {
        self.input_tokens + self.output_tokens
    }
}

/// Charges accumulated while processing one unit of work (usually one
/// document). Committing sinks in a fixed order keeps the log deterministic
/// under parallel execution.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Charges {
    pub entries: Vec<AuditEntry>,
}

impl Charges {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, doc_id: &str, attribute: &str, kind: RequestKind, input: usize, output: usize) {
        self.entries.push(AuditEntry {
            timestamp: 0,
            doc_id: doc_id.to_string(),
            attribute: attribute.to_string(),
            kind,
            input_tokens: input,
            output_tokens: output,
        });
    }

    pub fn tokens(&self) -> usize {
        self.entries.iter().map(AuditEntry::tokens).sum()
    }

    pub fn calls(&self) -> usize {
        self.entries.len()
    }

    pub fn absorb(&mut self, other: Charges) {
        self.entries.extend(other.entries);
    }
}

#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Mutex<Vec<AuditEntry>>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn commit(&self, charges: Charges) {
        let mut log = self.entries.lock().expect("audit lock");
        for mut e in charges.entries {
            e.timestamp = log.len() as u64;
            log.push(e);
        }
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.entries.lock().expect("audit lock").clone()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("audit lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_tokens(&self) -> usize {
        self.entries.lock().expect("audit lock").iter().map(AuditEntry::tokens).sum()
    }

    /// Tokens of entries committed at or after `from`.
    pub fn tokens_since(&self, from: usize) -> usize {
        self.entries.lock().expect("audit lock")[from..]
            .iter()
            .map(AuditEntry::tokens)
            .sum()
    }

    pub fn write_jsonl(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for e in self.entries.lock().expect("audit lock").iter() {
            writeln!(out, "{}", serde_json::to_string(e).expect("audit entry serializes"))?;
        }
        out.flush()
    }
}
