//! Corpus, table schema, and extracted tuple records.
//!
//! The corpus and registered tables are immutable once loaded; everything
//! downstream borrows them through `Arc`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::tokenizer::{default_tokenizer, Tokenizer};
use crate::text::{paragraph_spans, sentence_spans};

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("document `{0}` has empty text")]
    EmptyDocument(String),
    #[error("no corpus loaded")]
    UnknownCorpus,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CatalogError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CatalogError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Number,
    String,
    Categorical,
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::Number => "number",
            Dtype::String => "string",
            Dtype::Categorical => "categorical",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub description: String,
    pub dtype: Dtype,
    pub table: String,
}

impl AttributeSpec {
    pub fn new(table: &str, name: &str, dtype: Dtype, description: &str) -> Self {
        Self {
            name: name.to_string(),
            description: description.to_string(),
            dtype,
            table: table.to_string(),
        }
    }

    /// The text embedded to represent this attribute in a query.
    pub fn embedding_text(&self) -> String {
        format!("{}: {}", self.name, self.description)
    }
}

/// Selection of corpus documents backing a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFilter {
    #[default]
    All,
    Ids(Vec<String>),
    /// Glob over document ids, e.g. `players_*`.
    Glob(String),
}

impl CorpusFilter {
    fn resolve(&self, corpus: &Corpus) -> Result<Vec<String>, CatalogError> {
        match self {
            CorpusFilter::All => Ok(corpus.docs.iter().map(|d| d.doc_id.clone()).collect()),
            CorpusFilter::Ids(ids) => {
                for id in ids {
                    if corpus.get(id).is_none() {
                        return Err(CatalogError::InvalidSchema(format!(
                            "corpus filter references unknown document `{id}`"
                        )));
                    }
                }
                Ok(ids.clone())
            }
            CorpusFilter::Glob(pattern) => {
                let pat = glob::Pattern::new(pattern).map_err(|e| {
                    CatalogError::InvalidSchema(format!("bad glob `{pattern}`: {e}"))
                })?;
                Ok(corpus
                    .docs
                    .iter()
                    .filter(|d| pat.matches(&d.doc_id))
                    .map(|d| d.doc_id.clone())
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub attributes: Vec<AttributeSpec>,
    #[serde(default)]
    pub corpus_filter: CorpusFilter,
}

impl TableSpec {
    pub fn attribute(&self, name: &str) -> Option<&AttributeSpec> {
        self.attributes.iter().find(|a| a.name.eq_ignore_ascii_case(name))
    }
}

/// An extracted cell value. NULL marks a failed or empty extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(untagged)]
pub enum Value {
    #[default]
    Null,
    Number(f64),
    Text(String),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn matches_dtype(&self, dtype: Dtype) -> bool {
        match self {
            Value::Null => true,
            Value::Number(_) => dtype == Dtype::Number,
            Value::Text(_) => dtype != Dtype::Number,
        }
    }

    /// Canonical form used for equality: trimmed, case-folded for categoricals.
    pub fn canonical(&self, dtype: Dtype) -> Value {
        match self {
            Value::Text(s) if dtype == Dtype::Categorical => Value::Text(s.trim().to_lowercase()),
            Value::Text(s) => Value::Text(s.trim().to_string()),
            other => other.clone(),
        }
    }

    /// Hashable key for equality joins and IN sets.
    pub fn join_key(&self, dtype: Dtype) -> Option<String> {
        match self.canonical(dtype) {
            Value::Null => None,
            Value::Number(n) => Some(format!("n:{}", n)),
            Value::Text(s) => Some(format!("s:{s}")),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Number(n) => write!(f, "{n}"),
            Value::Text(s) => write!(f, "'{}'", s.replace('\'', "''")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub token_count: usize,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub seg_id: String,
    pub doc_id: String,
    /// Byte offsets into the parent document text.
    pub span: (usize, usize),
    pub text: String,
    pub token_count: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embedding: Vec<f32>,
}

impl Segment {
    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.span.0 < end && start < self.span.1
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TupleRecord {
    pub doc_id: String,
    pub values: BTreeMap<String, Value>,
    pub provenance: BTreeMap<String, Vec<String>>,
}

impl TupleRecord {
    pub fn new(doc_id: &str) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            ..Default::default()
        }
    }

    pub fn value(&self, attr: &str) -> &Value {
        static NULL: Value = Value::Null;
        self.values.get(attr).unwrap_or(&NULL)
    }

    pub fn all_null(&self) -> bool {
        self.values.values().all(Value::is_null)
    }
}

/// Produces the short summary embedded in the document-level index.
pub trait Summarizer: Send + Sync {
    fn summarize(&self, text: &str) -> String;
}

/// First sentence of each paragraph, at most `max_sentences` of them.
#[derive(Debug, Clone)]
pub struct LeadSentenceSummarizer {
    pub max_sentences: usize,
}

impl Default for LeadSentenceSummarizer {
    fn default() -> Self {
        Self { max_sentences: 5 }
    }
}

impl Summarizer for LeadSentenceSummarizer {
    fn summarize(&self, text: &str) -> String {
        paragraph_spans(text)
            .into_iter()
            .take(self.max_sentences)
            .filter_map(|(ps, pe)| {
                let para = &text[ps..pe];
                sentence_spans(para)
                    .first()
                    .map(|&(s, e)| para[s..e].trim().to_string())
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    id: String,
    text: String,
}

impl Corpus {
    /// Builds a corpus from `(id, text)` pairs, computing token counts and summaries.
    pub fn from_records<I>(
        records: I,
        tokenizer: &dyn Tokenizer,
        summarizer: &dyn Summarizer,
    ) -> Result<Self, CatalogError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut corpus = Corpus::default();
        for (id, text) in records {
            if text.trim().is_empty() {
                return Err(CatalogError::EmptyDocument(id));
            }
            let doc = Document {
                token_count: tokenizer.count(&text),
                summary: summarizer.summarize(&text),
                doc_id: id,
                text,
                embedding: None,
            };
            corpus.push(doc)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, doc: Document) -> Result<(), CatalogError> {
        if self.by_id.contains_key(&doc.doc_id) {
            return Err(CatalogError::DuplicateId(doc.doc_id));
        }
        self.by_id.insert(doc.doc_id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn docs_mut(&mut self) -> &mut [Document] {
        &mut self.docs
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    /// Position of a document in load order.
    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.by_id.get(doc_id).copied()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn mean_tokens(&self) -> f64 {
        if self.docs.is_empty() {
            return 0.0;
        }
        self.docs.iter().map(|d| d.token_count as f64).sum::<f64>() / self.docs.len() as f64
    }

    /// Writes one document per line.
    pub fn save(&self, path: &Path) -> Result<(), CatalogError> {
        let file = fs::File::create(path).map_err(|e| CatalogError::io(path, e))?;
        let mut out = BufWriter::new(file);
        for doc in &self.docs {
            let line = serde_json::to_string(doc).expect("document serializes");
            writeln!(out, "{line}").map_err(|e| CatalogError::io(path, e))?;
        }
        out.flush().map_err(|e| CatalogError::io(path, e))
    }

    /// Reloads a corpus persisted with [`Corpus::save`].
    pub fn load_persisted(path: &Path) -> Result<Self, CatalogError> {
        let mut corpus = Corpus::default();
        for_each_json_line(path, |line_no, doc: Document| {
            if doc.text.trim().is_empty() {
                return Err(CatalogError::Format {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: format!("document `{}` has empty text", doc.doc_id),
                });
            }
            corpus.push(doc)
        })?;
        Ok(corpus)
    }
}

/// Parses a line-delimited JSON file, reporting 1-based line numbers on error.
pub(crate) fn for_each_json_line<T, F>(path: &Path, mut f: F) -> Result<(), CatalogError>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(usize, T) -> Result<(), CatalogError>,
{
    let file = fs::File::open(path).map_err(|e| CatalogError::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CatalogError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| CatalogError::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        f(i + 1, rec)?;
    }
    Ok(())
}

/// Loads a corpus from a directory of text files (id = file stem) or a
/// line-delimited `{"id", "text"}` record file.
pub fn load_corpus(source: &Path) -> Result<Corpus, CatalogError> {
    load_corpus_with(source, default_tokenizer().as_ref(), &LeadSentenceSummarizer::default())
}

pub fn load_corpus_with(
    source: &Path,
    tokenizer: &dyn Tokenizer,
    summarizer: &dyn Summarizer,
) -> Result<Corpus, CatalogError> {
    let mut records = Vec::new();
    if source.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(source)
            .map_err(|e| CatalogError::io(source, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();
        for path in paths {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let text = fs::read_to_string(&path).map_err(|e| CatalogError::io(&path, e))?;
            records.push((id, text));
        }
    } else {
        for_each_json_line(source, |_, rec: RawRecord| {
            records.push((rec.id, rec.text));
            Ok(())
        })?;
    }
    Corpus::from_records(records, tokenizer, summarizer)
}

/// A registered table with its resolved document set.
#[derive(Debug, Clone)]
pub struct Table {
    pub spec: TableSpec,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    corpus: Option<Arc<Corpus>>,
    tables: BTreeMap<String, Arc<Table>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaFile {
    tables: Vec<TableSpec>,
}

impl Catalog {
    pub fn new(corpus: Corpus) -> Self {
        Self {
            corpus: Some(Arc::new(corpus)),
            tables: BTreeMap::new(),
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn corpus(&self) -> Result<&Arc<Corpus>, CatalogError> {
        self.corpus.as_ref().ok_or(CatalogError::UnknownCorpus)
    }

    pub fn register_table(&mut self, spec: TableSpec) -> Result<Arc<Table>, CatalogError> {
        let corpus = self.corpus()?.clone();
        if spec.attributes.is_empty() {
            return Err(CatalogError::InvalidSchema(format!(
                "table `{}` has no attributes",
                spec.name
            )));
        }
        if self.tables.contains_key(&spec.name) {
            return Err(CatalogError::InvalidSchema(format!(
                "table `{}` already registered",
                spec.name
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for attr in &spec.attributes {
            if attr.description.trim().is_empty() {
                return Err(CatalogError::InvalidSchema(format!(
                    "attribute `{}.{}` has an empty description",
                    spec.name, attr.name
                )));
            }
            if attr.table != spec.name {
                return Err(CatalogError::InvalidSchema(format!(
                    "attribute `{}` declares table `{}` but is listed under `{}`",
                    attr.name, attr.table, spec.name
                )));
            }
            if !seen.insert(attr.name.to_lowercase()) {
                return Err(CatalogError::InvalidSchema(format!(
                    "duplicate attribute `{}.{}`",
                    spec.name, attr.name
                )));
            }
        }
        let doc_ids = spec.corpus_filter.resolve(&corpus)?;
        if doc_ids.is_empty() {
            return Err(CatalogError::InvalidSchema(format!(
                "corpus filter of table `{}` selects no documents",
                spec.name
            )));
        }
        let table = Arc::new(Table { spec, doc_ids });
        self.tables.insert(table.spec.name.clone(), table.clone());
        Ok(table)
    }

    pub fn table(&self, name: &str) -> Option<&Arc<Table>> {
        self.tables
            .get(name)
            .or_else(|| self.tables.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v))
    }

    pub fn tables(&self) -> impl Iterator<Item = &Arc<Table>> {
        self.tables.values()
    }

    pub fn save_schema(&self, path: &Path) -> Result<(), CatalogError> {
        let schema = SchemaFile {
            tables: self.tables.values().map(|t| t.spec.clone()).collect(),
        };
        let text = serde_json::to_string_pretty(&schema).expect("schema serializes");
        fs::write(path, text).map_err(|e| CatalogError::io(path, e))
    }

    /// Reads table specs from a schema file without registering them.
    pub fn read_schema(path: &Path) -> Result<Vec<TableSpec>, CatalogError> {
        let text = fs::read_to_string(path).map_err(|e| CatalogError::io(path, e))?;
        let schema: SchemaFile = serde_json::from_str(&text).map_err(|e| CatalogError::Format {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(schema.tables)
    }
}
