//! Two-level embedding index: one vector per document summary and one per
//! segment, plus evidence-driven retrieval over both.

pub mod embed;
pub mod retrieval;
pub mod segment;
pub mod vector;

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

pub use embed::{cosine, distance, Embedder, HashedEmbedder, HttpEmbedder};
pub use retrieval::{
    calibrate_gamma, calibrate_tau, collect_evidence, kmeans, query_embedding, retrieve_documents,
    retrieve_segments, tau_from_distances, EvidenceSet, EvidenceSource, GammaState, SegmentSelection,
    ThresholdState, DEFAULT_GAMMA, INITIAL_TAU,
};
pub use segment::{segment_document, DEFAULT_MERGE_THRESHOLD};
pub use vector::{Level, VectorIndex};

use crate::catalog::{for_each_json_line, Corpus, Segment};
use crate::extract::tokenizer::Tokenizer;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("duplicate index id `{0}`")]
    DuplicateId(String),
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("evidence unavailable: {0}")]
    EvidenceUnavailable(String),
    #[error("embedding provider error: {0}")]
    Embedding(String),
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IndexError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IndexError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub const DOCUMENT_INDEX_FILE: &str = "documents.idx";
pub const SEGMENT_INDEX_FILE: &str = "segments.idx";
pub const SEGMENT_TEXT_FILE: &str = "segments.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct TwoLevelIndex {
    pub documents: VectorIndex,
    pub segments: VectorIndex,
    by_doc: HashMap<String, Vec<Segment>>,
}

impl TwoLevelIndex {
    /// Assembles an index from precomputed document vectors and segments.
    pub fn from_parts(documents: VectorIndex, segment_lists: Vec<Vec<Segment>>) -> Result<Self, IndexError> {
        let mut segments = VectorIndex::new(Level::Segment, documents.dim(), documents.embedder_id());
        let mut by_doc = HashMap::new();
        for list in segment_lists {
            for s in &list {
                segments.insert(&s.seg_id, s.embedding.clone())?;
            }
            if let Some(first) = list.first() {
                by_doc.insert(first.doc_id.clone(), list);
            }
        }
        Ok(Self {
            documents,
            segments,
            by_doc,
        })
    }

    /// Segments of a document in text order; empty for unknown documents.
    pub fn segments_of(&self, doc_id: &str) -> &[Segment] {
        self.by_doc.get(doc_id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn segment(&self, seg_id: &str) -> Option<&Segment> {
        let doc = seg_id.rsplit_once('#')?.0;
        self.segments_of(doc).iter().find(|s| s.seg_id == seg_id)
    }

    pub fn save(&self, dir: &Path) -> Result<(), IndexError> {
        fs::create_dir_all(dir).map_err(|e| IndexError::io(dir, e))?;
        self.documents.save(&dir.join(DOCUMENT_INDEX_FILE))?;
        self.segments.save(&dir.join(SEGMENT_INDEX_FILE))?;
        let path = dir.join(SEGMENT_TEXT_FILE);
        let file = fs::File::create(&path).map_err(|e| IndexError::io(&path, e))?;
        let mut out = BufWriter::new(file);
        // Document order follows the document index.
        for (doc_id, _) in self.documents.iter() {
            for s in self.segments_of(doc_id) {
                let stripped = Segment {
                    embedding: Vec::new(),
                    ..s.clone()
                };
                let line = serde_json::to_string(&stripped).expect("segment serializes");
                writeln!(out, "{line}").map_err(|e| IndexError::io(&path, e))?;
            }
        }
        out.flush().map_err(|e| IndexError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, IndexError> {
        let documents = VectorIndex::load(&dir.join(DOCUMENT_INDEX_FILE))?;
        let segments = VectorIndex::load(&dir.join(SEGMENT_INDEX_FILE))?;
        let path = dir.join(SEGMENT_TEXT_FILE);
        let mut by_doc: HashMap<String, Vec<Segment>> = HashMap::new();
        for_each_json_line(&path, |line, mut s: Segment| {
            s.embedding = segments
                .get(&s.seg_id)
                .ok_or_else(|| crate::catalog::CatalogError::Format {
                    path: path.clone(),
                    line,
                    message: format!("segment `{}` missing from the segment index", s.seg_id),
                })?
                .to_vec();
            by_doc.entry(s.doc_id.clone()).or_default().push(s);
            Ok(())
        })
        .map_err(|e| IndexError::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;
        Ok(Self {
            documents,
            segments,
            by_doc,
        })
    }
}

/// Segments every document and embeds summaries and segments.
pub fn build_indexes(
    corpus: &Corpus,
    embedder: &dyn Embedder,
    tokenizer: &dyn Tokenizer,
    merge_threshold: f64,
) -> Result<TwoLevelIndex, IndexError> {
    let built: Vec<(Vec<f32>, Vec<Segment>)> = corpus
        .docs()
        .par_iter()
        .map(|d| {
            let v = embedder.embed(&d.summary)?;
            let segs = segment_document(d, embedder, tokenizer, merge_threshold)?;
            Ok((v, segs))
        })
        .collect::<Result<_, IndexError>>()?;
    let mut documents = VectorIndex::new(Level::Document, embedder.dim(), &embedder.id());
    let mut lists = Vec::with_capacity(built.len());
    for (doc, (v, segs)) in corpus.docs().iter().zip(built) {
        documents.insert(&doc.doc_id, v)?;
        lists.push(segs);
    }
    TwoLevelIndex::from_parts(documents, lists)
}

#[cfg(test)]
mod tests;
