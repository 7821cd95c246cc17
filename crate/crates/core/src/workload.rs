//! Synthetic workloads: documents with planted attribute sentences, a truth
//! sidecar recording where each value is stated, query groups, and a truth
//! evaluator used as the ground-truth oracle.
//!
//! Geometry under the hashed bag-of-words embedder:
//! * an attribute block is its value sentence repeated, so the block merges
//!   into a single segment whose token count grows with the repetitions while
//!   its direction stays fixed; blocks of one attribute differ only in their
//!   value word;
//! * filler sentences draw from a large vocabulary and stay unmerged and far
//!   from every attribute;
//! * each document opens with a header paragraph listing its table's
//!   attribute names and vocabulary, keeping the summary within the initial
//!   document threshold of any query on that table.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{AttributeSpec, Catalog, CatalogError, Corpus, CorpusFilter, Dtype, LeadSentenceSummarizer, TableSpec, TupleRecord, Value};
use crate::extract::{default_tokenizer, TruthRecord};
use crate::index::{build_indexes, Embedder, IndexError, TwoLevelIndex, DEFAULT_MERGE_THRESHOLD};
use crate::query::{parse_query, QuerySpec};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    Invalid(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("generated query failed to parse: {0}")]
    Query(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    /// Integer in [0, 100); the planted filter is `>= 50`.
    Number,
    /// One of a few category words; the planted filter is `= <first word>`.
    Category,
    /// A unique word per document (names).
    Label,
    /// Unique per document and referenced by other tables.
    Key,
    /// A value of another table's key attribute.
    ForeignKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrGen {
    pub name: String,
    pub kind: AttrKind,
    /// Probability that the planted filter holds.
    #[serde(default = "half")]
    pub selectivity: f64,
    /// Inclusive range of repetitions after the value sentence.
    #[serde(default)]
    pub context: (usize, usize),
    /// Even documents get no repetitions, odd ones the maximum.
    #[serde(default)]
    pub asymmetric: bool,
    /// For foreign keys: `Table.attr` of the referenced key.
    #[serde(default)]
    pub references: Option<String>,
}

fn half() -> f64 {
    0.5
}

impl AttrGen {
    pub fn number(name: &str, selectivity: f64, context: (usize, usize)) -> Self {
        Self {
            name: name.into(),
            kind: AttrKind::Number,
            selectivity,
            context,
            asymmetric: false,
            references: None,
        }
    }

    pub fn of_kind(name: &str, kind: AttrKind, context: (usize, usize)) -> Self {
        Self {
            kind,
            ..Self::number(name, 0.5, context)
        }
    }

    pub fn dtype(&self) -> Dtype {
        match self.kind {
            AttrKind::Number => Dtype::Number,
            AttrKind::Label => Dtype::String,
            _ => Dtype::Categorical,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGen {
    pub name: String,
    /// Document id prefix; the table selects `{prefix}_*`.
    pub prefix: String,
    pub docs: usize,
    pub attrs: Vec<AttrGen>,
}

/// Couples a foreign key to a filter of its table: documents satisfying the
/// planted filter on `filter_attr` reference only the first
/// `round(in_selectivity · |keys|)` keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkGen {
    pub table: String,
    pub foreign_key: String,
    pub filter_attr: String,
    pub in_selectivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub seed: u64,
    pub tables: Vec<TableGen>,
    #[serde(default)]
    pub links: Vec<LinkGen>,
    /// Filler sentences between consecutive blocks (inclusive range).
    #[serde(default = "default_filler")]
    pub filler: (usize, usize),
    /// Unrelated documents added to the first table's document set.
    #[serde(default)]
    pub off_topic: usize,
    /// Documents with a matching header but no attribute statements.
    #[serde(default)]
    pub empty_profiles: usize,
    /// Pads every document to exactly this many tokens.
    #[serde(default)]
    pub doc_tokens: Option<usize>,
    /// Queries generated per group.
    #[serde(default = "default_queries")]
    pub queries_per_group: usize,
}

fn default_filler() -> (usize, usize) {
    (1, 3)
}

fn default_queries() -> usize {
    10
}

impl WorkloadSpec {
    /// Single table of players with eight numeric attributes whose costs and
    /// selectivities vary widely.
    pub fn players(docs: usize, seed: u64) -> Self {
        let attrs = vec![
            AttrGen::of_kind("name", AttrKind::Label, (0, 1)),
            AttrGen::number("age", 0.3, (0, 12)),
            AttrGen::number("all_stars", 0.15, (2, 20)),
            AttrGen::number("points", 0.5, (0, 6)),
            AttrGen::number("height", 0.7, (4, 16)),
            AttrGen::number("weight", 0.4, (0, 24)),
            AttrGen::number("salary", 0.25, (6, 10)),
            AttrGen::number("draft_year", 0.6, (0, 3)),
            AttrGen::number("titles", 0.1, (8, 30)),
        ];
        WorkloadSpec {
            seed,
            tables: vec![TableGen {
                name: "Players".into(),
                prefix: "players".into(),
                docs,
                attrs,
            }],
            links: Vec::new(),
            filler: default_filler(),
            off_topic: 0,
            empty_profiles: 0,
            doc_tokens: None,
            queries_per_group: default_queries(),
        }
    }

    /// Players ⋈ Teams with the IN selectivity of the team key controlled.
    pub fn players_teams(players: usize, teams: usize, in_selectivity: f64, seed: u64) -> Self {
        let mut team = AttrGen::of_kind("team", AttrKind::ForeignKey, (0, 1));
        team.references = Some("Teams.team_name".into());
        WorkloadSpec {
            seed,
            tables: vec![
                TableGen {
                    name: "Players".into(),
                    prefix: "players".into(),
                    docs: players,
                    attrs: vec![
                        AttrGen::of_kind("name", AttrKind::Label, (0, 1)),
                        AttrGen::number("age", 0.3, (2, 10)),
                        team,
                    ],
                },
                TableGen {
                    name: "Teams".into(),
                    prefix: "teams".into(),
                    docs: teams,
                    attrs: vec![
                        AttrGen::of_kind("team_name", AttrKind::Key, (0, 1)),
                        AttrGen::number("championships", 0.5, (10, 24)),
                    ],
                },
            ],
            links: vec![LinkGen {
                table: "Players".into(),
                foreign_key: "team".into(),
                filter_attr: "age".into(),
                in_selectivity,
            }],
            filler: default_filler(),
            off_topic: 0,
            empty_profiles: 0,
            doc_tokens: None,
            queries_per_group: default_queries(),
        }
    }

    /// Player–Team–City / Team–Owner schema for join-ordering tests.
    pub fn league(seed: u64) -> Self {
        let fk = |name: &str, target: &str| {
            let mut a = AttrGen::of_kind(name, AttrKind::ForeignKey, (0, 1));
            a.references = Some(target.into());
            a
        };
        let table = |name: &str, prefix: &str, docs: usize, attrs: Vec<AttrGen>| TableGen {
            name: name.into(),
            prefix: prefix.into(),
            docs,
            attrs,
        };
        WorkloadSpec {
            seed,
            tables: vec![
                table(
                    "Players",
                    "players",
                    80,
                    vec![
                        AttrGen::of_kind("name", AttrKind::Label, (0, 1)),
                        AttrGen::number("age", 0.3, (2, 8)),
                        fk("team", "Teams.team_name"),
                    ],
                ),
                table(
                    "Teams",
                    "teams",
                    30,
                    vec![
                        AttrGen::of_kind("team_name", AttrKind::Key, (0, 1)),
                        AttrGen::number("championships", 0.4, (4, 12)),
                        fk("city", "City.city_name"),
                        fk("owner", "Owner.owner_name"),
                    ],
                ),
                table(
                    "City",
                    "city",
                    20,
                    vec![
                        AttrGen::of_kind("city_name", AttrKind::Key, (0, 1)),
                        AttrGen::number("population", 0.5, (2, 10)),
                    ],
                ),
                table(
                    "Owner",
                    "owner",
                    25,
                    vec![
                        AttrGen::of_kind("owner_name", AttrKind::Key, (0, 1)),
                        AttrGen::number("net_worth", 0.2, (2, 10)),
                    ],
                ),
            ],
            links: Vec::new(),
            filler: default_filler(),
            off_topic: 0,
            empty_profiles: 0,
            doc_tokens: None,
            queries_per_group: default_queries(),
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::Invalid(m));
        if self.tables.is_empty() {
            return bad("no tables".into());
        }
        let mut names = HashSet::new();
        for t in &self.tables {
            if t.docs == 0 {
                return bad(format!("table {} has zero documents", t.name));
            }
            if !names.insert(t.name.to_lowercase()) {
                return bad(format!("duplicate table {}", t.name));
            }
            for a in &t.attrs {
                if !(a.selectivity > 0.0 && a.selectivity < 1.0) {
                    return bad(format!("{}.{}: selectivity {} is outside (0, 1)", t.name, a.name, a.selectivity));
                }
                if a.context.0 > a.context.1 {
                    return bad(format!("{}.{}: empty context range", t.name, a.name));
                }
                if a.kind == AttrKind::ForeignKey {
                    let Some(r) = &a.references else {
                        return bad(format!("{}.{}: foreign key without a reference", t.name, a.name));
                    };
                    let ok = r.split_once('.').is_some_and(|(rt, ra)| {
                        self.tables
                            .iter()
                            .any(|x| x.name == rt && x.attrs.iter().any(|y| y.name == ra && y.kind == AttrKind::Key))
                    });
                    if !ok {
                        return bad(format!("{}.{}: reference {r} is not a key attribute", t.name, a.name));
                    }
                }
            }
        }
        for l in &self.links {
            if !(l.in_selectivity > 0.0 && l.in_selectivity <= 1.0) {
                return bad(format!("link on {}.{}: IN selectivity {} is outside (0, 1]", l.table, l.foreign_key, l.in_selectivity));
            }
        }
        if self.filler.0 > self.filler.1 {
            return bad("empty filler range".into());
        }
        Ok(())
    }
}

/// One generated query with its group label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCase {
    pub group: String,
    pub query: String,
}

/// A generated corpus, truth sidecar, schema and query set.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub spec: WorkloadSpec,
    /// `(doc_id, text)` in corpus order.
    pub documents: Vec<(String, String)>,
    pub truth: Vec<TruthRecord>,
    pub tables: Vec<TableSpec>,
    pub queries: Vec<QueryCase>,
}

struct Words {
    rng: ChaCha8Rng,
    used: HashSet<String>,
    /// Embedding buckets taken by attribute vocabulary.
    buckets: HashSet<u64>,
}

fn bucket(word: &str) -> u64 {
    crate::index::embed::fnv1a(word.to_lowercase().as_bytes()) % crate::index::HashedEmbedder::DEFAULT_DIM as u64
}

impl Words {
    fn reserve(&mut self, text: &str) {
        for w in text.split(|c: char| !c.is_ascii_alphanumeric()).filter(|w| !w.is_empty()) {
            self.buckets.insert(bucket(w));
        }
    }

    /// A fresh word whose embedding bucket no other attribute word uses, so
    /// attribute texts never cancel or alias each other under hashing.
    fn distinct(&mut self) -> String {
        loop {
            let w = self.fresh();
            if self.buckets.insert(bucket(&w)) {
                return w;
            }
        }
    }

    fn fresh(&mut self) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let syl = self.rng.gen_range(2..=4);
            let w: String = (0..syl)
                .flat_map(|_| {
                    [
                        C[self.rng.gen_range(0..C.len())] as char,
                        V[self.rng.gen_range(0..V.len())] as char,
                    ]
                })
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

struct AttrWords {
    /// Eight words of every value sentence; the first is the attribute's
    /// description.
    vocab: Vec<String>,
    /// Category words (Category kind only).
    categories: Vec<String>,
}

fn attr_text(name: &str) -> String {
    name.replace('_', " ")
}

fn sentence(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(f) = s.get(0..1) {
        let up = f.to_uppercase();
        s.replace_range(0..1, &up);
    }
    s.push('.');
    s
}

fn value_word(v: &Value) -> String {
    match v {
        Value::Number(n) => format!("{n}"),
        Value::Text(t) => t.clone(),
        Value::Null => String::new(),
    }
}

/// Planted filter text of an attribute, `None` for keys and labels.
pub fn planted_filter(table: &str, a: &AttrGen, categories: &[String], qualify: bool) -> Option<String> {
    let name = if qualify { format!("{table}.{}", a.name) } else { a.name.clone() };
    match a.kind {
        AttrKind::Number => Some(format!("{name} >= 50")),
        AttrKind::Category => categories.first().map(|c| format!("{name} = '{c}'")),
        _ => None,
    }
}

impl Workload {
    pub fn generate(spec: &WorkloadSpec) -> Result<Self, WorkloadError> {
        spec.validate()?;
        let mut words = Words {
            rng: ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed),
            used: HashSet::new(),
            buckets: HashSet::new(),
        };
        let filler_vocab: Vec<String> = (0..2000).map(|_| words.fresh()).collect();
        let mut attr_words: HashMap<(String, String), AttrWords> = HashMap::new();
        words.reserve("profile notes");
        for t in &spec.tables {
            for a in &t.attrs {
                words.reserve(&a.name);
            }
        }
        for t in &spec.tables {
            for a in &t.attrs {
                let vocab = (0..8).map(|_| words.distinct()).collect();
                let categories = if a.kind == AttrKind::Category {
                    (0..8).map(|_| words.distinct()).collect()
                } else {
                    Vec::new()
                };
                attr_words.insert(
                    (t.name.clone(), a.name.clone()),
                    AttrWords {
                        vocab,
                        categories,
                    },
                );
            }
        }
        // Key values, one unique word per document of the owning table.
        let mut keys: HashMap<String, Vec<String>> = HashMap::new();
        for t in &spec.tables {
            for a in t.attrs.iter().filter(|a| a.kind == AttrKind::Key) {
                keys.insert(format!("{}.{}", t.name, a.name), (0..t.docs).map(|_| words.fresh()).collect());
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut documents = Vec::new();
        let mut truth = Vec::new();
        let mut tables = Vec::new();
        for t in &spec.tables {
            let specs: Vec<AttributeSpec> = t
                .attrs
                .iter()
                .map(|a| {
                    let w = &attr_words[&(t.name.clone(), a.name.clone())];
                    AttributeSpec::new(&t.name, &a.name, a.dtype(), &w.vocab[0])
                })
                .collect();
            tables.push(TableSpec {
                name: t.name.clone(),
                attributes: specs,
                corpus_filter: CorpusFilter::Glob(format!("{}_*", t.prefix)),
            });
            let mut header_words = vec!["profile".to_string()];
            for a in &t.attrs {
                header_words.push(attr_text(&a.name));
                header_words.push(attr_words[&(t.name.clone(), a.name.clone())].vocab[0].clone());
            }
            let header = sentence(&header_words);

            for i in 0..t.docs {
                let doc_id = format!("{}_{:04}", t.prefix, i);
                // Values first: links depend on the filter outcome.
                let mut values: Vec<Value> = Vec::with_capacity(t.attrs.len());
                let mut satisfied: HashMap<&str, bool> = HashMap::new();
                for a in &t.attrs {
                    let w = &attr_words[&(t.name.clone(), a.name.clone())];
                    let hit = rng.gen_bool(a.selectivity);
                    let v = match a.kind {
                        AttrKind::Number => {
                            Value::Number(if hit { rng.gen_range(50..100) } else { rng.gen_range(0..50) } as f64)
                        }
                        AttrKind::Category => {
                            if hit {
                                Value::Text(w.categories[0].clone())
                            } else {
                                Value::Text(w.categories[rng.gen_range(1..w.categories.len())].clone())
                            }
                        }
                        AttrKind::Label => Value::Text(words.fresh()),
                        AttrKind::Key => Value::Text(keys[&format!("{}.{}", t.name, a.name)][i].clone()),
                        AttrKind::ForeignKey => Value::Null,
                    };
                    satisfied.insert(&a.name, hit);
                    values.push(v);
                }
                for (a, v) in t.attrs.iter().zip(values.iter_mut()) {
                    if a.kind != AttrKind::ForeignKey {
                        continue;
                    }
                    let pool = &keys[a.references.as_ref().unwrap()];
                    let link = spec.links.iter().find(|l| l.table == t.name && l.foreign_key == a.name);
                    let limit = match link {
                        Some(l) if satisfied.get(l.filter_attr.as_str()).copied().unwrap_or(false) => {
                            ((l.in_selectivity * pool.len() as f64).round() as usize).clamp(1, pool.len())
                        }
                        _ => pool.len(),
                    };
                    *v = Value::Text(pool[rng.gen_range(0..limit)].clone());
                }

                let mut blocks: Vec<(usize, Vec<String>)> = Vec::new();
                for (k, a) in t.attrs.iter().enumerate() {
                    let w = &attr_words[&(t.name.clone(), a.name.clone())];
                    let mut base = vec![attr_text(&a.name)];
                    base.extend(w.vocab.iter().cloned());
                    let mut value_s = base;
                    value_s.push(value_word(&values[k]));
                    let n_ctx = if a.asymmetric {
                        if i % 2 == 0 {
                            0
                        } else {
                            a.context.1.max(1)
                        }
                    } else {
                        rng.gen_range(a.context.0..=a.context.1)
                    };
                    let sents = vec![sentence(&value_s); n_ctx + 1];
                    blocks.push((k, sents));
                }
                blocks.shuffle(&mut rng);

                let mut body = String::from("Notes.");
                let mut spans: Vec<(usize, (usize, usize))> = Vec::new();
                let filler = |rng: &mut ChaCha8Rng| {
                    let n = rng.gen_range(5..=9);
                    let ws: Vec<String> = (0..n).map(|_| filler_vocab[rng.gen_range(0..filler_vocab.len())].clone()).collect();
                    sentence(&ws)
                };
                let prefix_len = header.len() + 2;
                for (k, sents) in &blocks {
                    for _ in 0..rng.gen_range(spec.filler.0..=spec.filler.1) {
                        body.push(' ');
                        body.push_str(&filler(&mut rng));
                    }
                    body.push(' ');
                    let start = prefix_len + body.len();
                    spans.push((*k, (start, start + sents[0].len())));
                    body.push_str(&sents.join(" "));
                }
                body.push(' ');
                body.push_str(&filler(&mut rng));
                let mut text = format!("{header}\n\n{body}");
                if let Some(target) = spec.doc_tokens {
                    text = pad_to_tokens(text, target, &mut rng, &filler_vocab).ok_or_else(|| {
                        WorkloadError::Invalid(format!("{doc_id}: content exceeds {target} tokens"))
                    })?;
                }
                for (k, span) in spans {
                    truth.push(TruthRecord {
                        doc_id: doc_id.clone(),
                        attribute: format!("{}.{}", t.name, t.attrs[k].name),
                        value: values[k].clone(),
                        span_start: span.0,
                        span_end: span.1,
                    });
                }
                documents.push((doc_id, text));
            }
        }

        // Documents with no attribute statements belong to the first table.
        let first = &spec.tables[0];
        let header = {
            let mut h = vec!["profile".to_string()];
            for a in &first.attrs {
                h.push(attr_text(&a.name));
                h.push(attr_words[&(first.name.clone(), a.name.clone())].vocab[0].clone());
            }
            sentence(&h)
        };
        let mut extra = |id: String, head: String, rng: &mut ChaCha8Rng| {
            let mut body = String::from("Notes.");
            for _ in 0..rng.gen_range(4..10) {
                let n = rng.gen_range(5..=9);
                let ws: Vec<String> = (0..n).map(|_| filler_vocab[rng.gen_range(0..filler_vocab.len())].clone()).collect();
                body.push(' ');
                body.push_str(&sentence(&ws));
            }
            let mut text = format!("{head}\n\n{body}");
            if let Some(target) = spec.doc_tokens {
                text = pad_to_tokens(text.clone(), target, rng, &filler_vocab).unwrap_or(text);
            }
            documents.push((id, text));
        };
        for i in 0..spec.empty_profiles {
            extra(format!("{}_e{:03}", first.prefix, i), header.clone(), &mut rng);
        }
        for i in 0..spec.off_topic {
            let n = rng.gen_range(6..=10);
            let ws: Vec<String> = (0..n).map(|_| filler_vocab[rng.gen_range(0..filler_vocab.len())].clone()).collect();
            extra(format!("{}_x{:03}", first.prefix, i), sentence(&ws), &mut rng);
        }

        let mut wl = Workload {
            spec: spec.clone(),
            documents,
            truth,
            tables,
            queries: Vec::new(),
        };
        wl.queries = wl.generate_queries(&attr_words);
        Ok(wl)
    }

    fn generate_queries(&self, attr_words: &HashMap<(String, String), AttrWords>) -> Vec<QueryCase> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x9e37);
        let n = self.spec.queries_per_group;
        let mut out = Vec::new();
        let filters_of = |t: &TableGen, qualify: bool| -> Vec<String> {
            t.attrs
                .iter()
                .filter_map(|a| planted_filter(&t.name, a, &attr_words[&(t.name.clone(), a.name.clone())].categories, qualify))
                .collect()
        };
        let label = |t: &TableGen| {
            t.attrs
                .iter()
                .find(|a| matches!(a.kind, AttrKind::Label | AttrKind::Key))
                .map(|a| a.name.clone())
        };
        let t0 = &self.spec.tables[0];
        let pool = filters_of(t0, false);
        let select = label(t0).unwrap_or_else(|| t0.attrs[0].name.clone());
        let negate = |f: &str, rng: &mut ChaCha8Rng| {
            if f.contains(">= 50") && rng.gen_bool(0.3) {
                f.replace(">= 50", "< 50")
            } else {
                f.to_string()
            }
        };
        if !pool.is_empty() {
            for (group, lo, hi) in [("C1", 1, 1), ("C2", 2, 3), ("C3", 4, 6)] {
                let hi = hi.min(pool.len());
                if lo > hi {
                    continue;
                }
                for _ in 0..n {
                    let k = rng.gen_range(lo..=hi);
                    let mut fs: Vec<String> = pool.choose_multiple(&mut rng, k).cloned().collect();
                    fs = fs.iter().map(|f| negate(f, &mut rng)).collect();
                    let clause = if group == "C3" { mixed_tree(&fs, &mut rng) } else { fs.join(" AND ") };
                    out.push(QueryCase {
                        group: group.into(),
                        query: format!("SELECT {select} FROM {} WHERE {clause}", t0.name),
                    });
                }
            }
        }
        // Join queries along foreign keys: both sides' planted filters.
        for t in &self.spec.tables {
            for a in t.attrs.iter().filter(|a| a.kind == AttrKind::ForeignKey) {
                let (rt, ra) = a.references.as_ref().unwrap().split_once('.').unwrap();
                let other = self.spec.tables.iter().find(|x| x.name == rt).unwrap();
                let mut fs = filters_of(t, true);
                fs.truncate(1);
                fs.extend(filters_of(other, true).into_iter().take(1));
                let mut sel = vec![];
                if let Some(l) = label(t) {
                    sel.push(format!("{}.{l}", t.name));
                }
                sel.push(format!("{rt}.{ra}"));
                let mut q = format!(
                    "SELECT {} FROM {} JOIN {rt} ON {}.{} = {rt}.{ra}",
                    sel.join(", "),
                    t.name,
                    t.name,
                    a.name
                );
                if !fs.is_empty() {
                    q.push_str(&format!(" WHERE {}", fs.join(" AND ")));
                }
                out.push(QueryCase {
                    group: "J".into(),
                    query: q,
                });
            }
        }
        out
    }

    pub fn queries_in(&self, group: &str) -> Vec<&QueryCase> {
        self.queries.iter().filter(|q| q.group == group).collect()
    }

    /// Token-counted corpus with lead-sentence summaries.
    pub fn corpus(&self) -> Result<Corpus, WorkloadError> {
        Ok(Corpus::from_records(
            self.documents.clone(),
            default_tokenizer().as_ref(),
            &LeadSentenceSummarizer::default(),
        )?)
    }

    pub fn catalog(&self) -> Result<Catalog, WorkloadError> {
        let mut catalog = Catalog::new(self.corpus()?);
        for t in &self.tables {
            catalog.register_table(t.clone())?;
        }
        Ok(catalog)
    }

    /// Catalog plus both index levels.
    pub fn materialize(&self, embedder: &dyn Embedder) -> Result<(Catalog, TwoLevelIndex), WorkloadError> {
        let catalog = self.catalog()?;
        let index = build_indexes(
            catalog.corpus()?,
            embedder,
            default_tokenizer().as_ref(),
            DEFAULT_MERGE_THRESHOLD,
        )?;
        Ok((catalog, index))
    }

    pub fn parse(&self, catalog: &Catalog, query: &str) -> Result<QuerySpec, WorkloadError> {
        parse_query(query, catalog).map_err(|e| WorkloadError::Query(format!("{query}: {e}")))
    }

    /// Writes `corpus.jsonl`, `truth.jsonl`, `schema.json` and `queries.jsonl`.
    pub fn write(&self, dir: &Path) -> Result<(), WorkloadError> {
        let io = |p: &Path, e: std::io::Error| WorkloadError::Catalog(CatalogError::io(p, e));
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let lines = |items: Vec<serde_json::Value>| -> String {
            items.into_iter().map(|v| v.to_string() + "\n").collect()
        };
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| io(&p, e))
        };
        write(
            "corpus.jsonl",
            lines(self.documents.iter().map(|(id, text)| serde_json::json!({"id": id, "text": text})).collect()),
        )?;
        write(
            "truth.jsonl",
            lines(self.truth.iter().map(|t| serde_json::to_value(t).unwrap()).collect()),
        )?;
        write(
            "queries.jsonl",
            lines(self.queries.iter().map(|q| serde_json::to_value(q).unwrap()).collect()),
        )?;
        write(
            "schema.json",
            serde_json::to_string_pretty(&serde_json::json!({ "tables": self.tables })).unwrap(),
        )
    }

    /// Truth values keyed by `(doc_id, qualified attribute)`.
    pub fn truth_map(&self) -> HashMap<(String, String), Value> {
        self.truth
            .iter()
            .map(|t| ((t.doc_id.clone(), t.attribute.clone()), t.value.clone()))
            .collect()
    }

    /// Ground-truth result of `q`, in the executor's output format.
    pub fn truth_results(&self, catalog: &Catalog, q: &QuerySpec) -> Vec<TupleRecord> {
        truth_results(&self.truth_map(), catalog, q)
    }
}

/// Evaluates `q` over truth values. Documents stating none of the query's
/// attributes for a table are not part of that table's result.
pub fn truth_results(truth: &HashMap<(String, String), Value>, catalog: &Catalog, q: &QuerySpec) -> Vec<TupleRecord> {
    let get = |doc: &str, attr: &str| truth.get(&(doc.to_string(), attr.to_string())).cloned().unwrap_or(Value::Null);
    let parts = if q.is_join() {
        match crate::exec::split_where(q.where_clause.as_ref()) {
            Ok(p) => p,
            Err(_) => return Vec::new(),
        }
    } else {
        q.where_clause.iter().map(|w| (q.tables[0].name.clone(), w.clone())).collect()
    };
    let mut passing: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for t in &q.tables {
        let attrs: Vec<String> = q.table_attrs(&t.name).iter().map(|a| a.qualified()).collect();
        let Some(table) = catalog.table(&t.name) else { continue };
        let docs = table
            .doc_ids
            .iter()
            .filter(|d| attrs.iter().any(|a| !get(d, a).is_null()))
            .filter(|d| match parts.get(&t.name) {
                Some(w) => w.eval(&mut |a: &crate::query::AttrRef| get(d, &a.qualified())),
                None => true,
            })
            .cloned()
            .collect();
        passing.insert(t.name.clone(), docs);
    }
    // Join in query order along connecting edges.
    let names: Vec<String> = q.tables.iter().map(|t| t.name.clone()).collect();
    let mut rows: Vec<BTreeMap<String, String>> = passing[&names[0]]
        .iter()
        .map(|d| BTreeMap::from([(names[0].clone(), d.clone())]))
        .collect();
    let mut joined: BTreeSet<String> = BTreeSet::from([names[0].clone()]);
    while joined.len() < names.len() {
        let next = names
            .iter()
            .find(|n| {
                !joined.contains(*n)
                    && q.joins.iter().any(|e| e.side(n).is_some() && e.other(n).is_some_and(|o| joined.contains(&o.table)))
            })
            .expect("join graph is connected")
            .clone();
        let edges: Vec<_> = q
            .joins
            .iter()
            .filter(|e| e.side(&next).is_some() && e.other(&next).is_some_and(|o| joined.contains(&o.table)))
            .collect();
        let mut out = Vec::new();
        for r in &rows {
            for d in &passing[&next] {
                let ok = edges.iter().all(|e| {
                    let (h, o) = (e.side(&next).unwrap(), e.other(&next).unwrap());
                    let a = get(d, &h.qualified()).join_key(h.dtype);
                    a.is_some() && a == get(&r[&o.table], &o.qualified()).join_key(o.dtype)
                });
                if ok {
                    let mut n = r.clone();
                    n.insert(next.clone(), d.clone());
                    out.push(n);
                }
            }
        }
        rows = out;
        joined.insert(next);
    }
    let mut tuples: Vec<TupleRecord> = rows
        .iter()
        .map(|r| {
            let id: Vec<&str> = names.iter().map(|n| r[n].as_str()).collect();
            let mut rec = TupleRecord::new(&id.join("|"));
            for a in &q.select {
                let key = if q.is_join() { a.qualified() } else { a.name.clone() };
                rec.values.insert(key, get(&r[&a.table], &a.qualified()));
            }
            rec
        })
        .collect();
    if q.is_join() {
        tuples.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    }
    tuples
}

/// Random AND/OR tree over `filters` (depth ≤ 3), printed with parentheses.
fn mixed_tree(filters: &[String], rng: &mut ChaCha8Rng) -> String {
    let root_and = rng.gen_bool(0.5);
    let mut rest: Vec<String> = filters.to_vec();
    let mut parts: Vec<String> = Vec::new();
    while !rest.is_empty() {
        let take = rng.gen_range(1..=rest.len().min(3));
        let group: Vec<String> = rest.drain(..take).collect();
        if group.len() == 1 {
            parts.push(group[0].clone());
        } else {
            let sep = if root_and { " OR " } else { " AND " };
            parts.push(format!("({})", group.join(sep)));
        }
    }
    if parts.len() == 1 {
        // Keep the root a real mixed node.
        return parts[0].trim_start_matches('(').trim_end_matches(')').to_string();
    }
    parts.join(if root_and { " AND " } else { " OR " })
}

/// Pads `text` with filler to exactly `target` tokens (4 characters each).
fn pad_to_tokens(mut text: String, target: usize, rng: &mut ChaCha8Rng, vocab: &[String]) -> Option<String> {
    let chars = target * 4;
    if text.len() + 3 > chars {
        return None;
    }
    while text.len() + 100 < chars {
        let n = rng.gen_range(5..=9);
        let ws: Vec<String> = (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())].clone()).collect();
        text.push(' ');
        text.push_str(&sentence(&ws));
    }
    let need = chars - text.len() - 2;
    text.push(' ');
    text.push_str(&"q".repeat(need));
    text.push('.');
    Some(text)
}
