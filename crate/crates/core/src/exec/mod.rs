//! Query execution: retrieval, sampling and calibration, per-document plan
//! execution with lazy extraction, join pipelines and result assembly.

mod document;
mod explain;
mod join;
mod session;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use document::{residual, FilterPlan};
pub use explain::{explain_query, Explain};
pub use join::split_where;
pub use session::TableCtx;

use crate::catalog::{AttributeSpec, Catalog, CatalogError, TupleRecord, Value};
use crate::extract::{qualified, Charges, ExtractError, ExtractionResult, Extractor};
use crate::index::{retrieve_segments, Embedder, GammaState, IndexError, TwoLevelIndex};
use crate::planner::PlannerError;
use crate::query::{leaves, AttrRef, QuerySpec};
use crate::stats::FilterStats;

/// Exhaustive ordering refuses queries with more filters than this.
pub const EXHAUSTIVE_MAX_FILTERS: usize = 8;

/// Filter-ordering strategy. All strategies share every other part of the
/// pipeline, so differences in cost come from ordering alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Per-document costs, priority-sorted expression DP.
    Quest,
    /// Selectivity only; every pending filter costs the same.
    Selectivity,
    /// One cost per attribute, averaged over the sample.
    AvgCost,
    /// A random pending filter at every step.
    Random,
    /// Per-document costs, brute force over each node's permutations.
    Exhaust,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Quest,
        Strategy::Selectivity,
        Strategy::AvgCost,
        Strategy::Random,
        Strategy::Exhaust,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Quest => "quest",
            Strategy::Selectivity => "selectivity",
            Strategy::AvgCost => "avg-cost",
            Strategy::Random => "random",
            Strategy::Exhaust => "exhaust",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}` (expected quest, selectivity, avg-cost, random or exhaust)"))
    }
}

/// How multi-table queries are executed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JoinMode {
    /// Greedy left-deep order; joins become IN filters over exact value sets.
    #[default]
    Adaptive,
    /// Every table filtered independently, then joined.
    Pushdown,
    /// A fixed left-deep table sequence; each later table is probed with IN.
    Forced(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecOptions {
    pub strategy: Strategy,
    pub join_mode: JoinMode,
    /// Seeds sampling and clustering.
    pub seed: u64,
    /// Seeds the random ordering strategy only.
    pub order_seed: u64,
    pub sample_rate: f64,
    pub k: usize,
    pub initial_tau: f64,
    /// Hard token ceiling for the session, sampling included.
    pub budget: Option<usize>,
    /// Extract every query attribute before evaluating (baseline).
    pub eager: bool,
    pub parallel: bool,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            strategy: Strategy::Quest,
            join_mode: JoinMode::Adaptive,
            seed: 0,
            order_seed: 0,
            sample_rate: crate::stats::DEFAULT_SAMPLE_RATE,
            k: crate::index::retrieval::DEFAULT_K,
            initial_tau: crate::index::INITIAL_TAU,
            budget: None,
            eager: false,
            parallel: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Query(#[from] crate::query::QueryError),
    #[error("invalid join order: {0}")]
    InvalidJoinOrder(String),
    #[error("table `{0}` is not registered")]
    UnknownTable(String),
}

/// Everything a query runs against.
#[derive(Clone, Copy)]
pub struct Engine<'a> {
    pub catalog: &'a Catalog,
    pub index: &'a TwoLevelIndex,
    pub embedder: &'a dyn Embedder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub table: String,
    /// Documents within the initial τ.
    pub retrieved: usize,
    pub sampled: usize,
    /// Sampled documents carrying none of the query attributes.
    pub sampled_empty: usize,
    /// Documents within the calibrated τ.
    pub candidates: usize,
    pub tau: f64,
    pub tau_calibrated: bool,
    pub gamma: BTreeMap<String, GammaState>,
    pub filters: Vec<FilterStats>,
}

/// One executed step of a join pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinStep {
    pub table: String,
    /// `(joined-side attribute, table attribute)` when probed through IN.
    pub via: Option<(String, String)>,
    pub in_values: usize,
    pub p_in: Option<f64>,
    pub estimated_tokens: f64,
    pub realized_tokens: usize,
    pub rows_after: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SessionReport {
    pub strategy: String,
    pub tuples: usize,
    pub tokens_in: usize,
    pub tokens_out: usize,
    pub provider_calls: usize,
    pub sampling_tokens: usize,
    pub wall_ms: u128,
    pub failed_docs: Vec<String>,
    pub warnings: Vec<String>,
    /// The budget was exhausted; results cover only processed documents.
    pub partial: bool,
    pub tables: Vec<TableReport>,
    pub joins: Vec<JoinStep>,
}

impl SessionReport {
    pub fn tokens(&self) -> usize {
        self.tokens_in + self.tokens_out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultSet {
    pub tuples: Vec<TupleRecord>,
    /// Tokens charged per document, sampling included.
    pub per_doc_cost: BTreeMap<String, usize>,
    pub report: SessionReport,
}

/// Shared state of one query session.
pub(crate) struct Runner<'a> {
    pub engine: Engine<'a>,
    pub extractor: &'a Extractor,
    pub opts: &'a ExecOptions,
    audit_start: usize,
    exhausted: AtomicBool,
    warnings: Mutex<Vec<String>>,
    failed: Mutex<BTreeSet<String>>,
}

impl<'a> Runner<'a> {
    fn new(engine: Engine<'a>, extractor: &'a Extractor, opts: &'a ExecOptions) -> Self {
        Self {
            engine,
            extractor,
            opts,
            audit_start: extractor.audit().len(),
            exhausted: AtomicBool::new(false),
            warnings: Mutex::new(Vec::new()),
            failed: Mutex::new(BTreeSet::new()),
        }
    }

    pub fn warn(&self, msg: String) {
        self.warnings.lock().expect("warnings lock").push(msg);
    }

    pub fn tokens(&self) -> usize {
        self.extractor.audit().tokens_since(self.audit_start)
    }

    pub fn exhausted(&self) -> bool {
        self.exhausted.load(Ordering::SeqCst)
    }

    /// Commits charges and checks the budget.
    pub fn commit(&self, charges: Charges) {
        self.extractor.audit().commit(charges);
        if let Some(b) = self.opts.budget {
            if self.tokens() > b {
                self.exhausted.store(true, Ordering::SeqCst);
            }
        }
    }

    /// Extracts one attribute of one document through segment retrieval.
    pub fn extract(
        &self,
        ctx: &TableCtx,
        doc_id: &str,
        attr: &AttributeSpec,
        sink: &mut Charges,
    ) -> Result<ExtractionResult, ExtractError> {
        let key = qualified(attr);
        if let Some(r) = self.extractor.cache().get(doc_id, &key) {
            return Ok(r);
        }
        let segs = match ctx.evidence.get(&key) {
            Some(ev) => retrieve_segments(self.engine.index, doc_id, ev, ctx.thresholds.gamma_for(&key)).segments,
            None => Vec::new(),
        };
        Ok(self.extractor.extract_attribute(doc_id, attr, &segs, sink)?.result)
    }

    /// Cached value of an attribute (NULL when never extracted).
    pub fn value(&self, doc_id: &str, attr: &str) -> Value {
        self.extractor
            .cache()
            .get(doc_id, attr)
            .map(|r| r.value)
            .unwrap_or(Value::Null)
    }

    /// Runs `f` for every document and commits charges in document order.
    /// With a budget, documents run sequentially and processing stops once
    /// the budget is exceeded. Failed documents are dropped with a warning.
    pub fn for_each_doc<T, F>(&self, docs: &[String], f: F) -> Vec<(String, T)>
    where
        T: Send,
        F: Fn(&str, &mut Charges) -> Result<T, ExtractError> + Sync,
    {
        let mut out = Vec::new();
        let mut settle = |doc: &String, r: Result<T, ExtractError>, charges: Charges| {
            self.commit(charges);
            match r {
                Ok(v) => out.push((doc.clone(), v)),
                Err(e) => {
                    self.failed.lock().expect("failed lock").insert(doc.clone());
                    self.warn(format!("document `{doc}` skipped: {e}"));
                }
            }
        };
        if self.opts.budget.is_none() && self.opts.parallel {
            let results: Vec<(Result<T, ExtractError>, Charges)> = docs
                .par_iter()
                .map(|d| {
                    let mut sink = Charges::new();
                    let r = f(d, &mut sink);
                    (r, sink)
                })
                .collect();
            for (d, (r, c)) in docs.iter().zip(results) {
                settle(d, r, c);
            }
        } else {
            for d in docs {
                if self.exhausted() {
                    break;
                }
                let mut sink = Charges::new();
                let r = f(d, &mut sink);
                settle(d, r, sink);
            }
        }
        out
    }
}

/// Runs a query end to end with a fresh session on `extractor`.
pub fn execute_query(
    engine: Engine<'_>,
    extractor: &Extractor,
    q: &QuerySpec,
    opts: &ExecOptions,
) -> Result<ResultSet, ExecError> {
    let start = Instant::now();
    let n_filters = q.where_clause.as_ref().map(|w| leaves(w).len()).unwrap_or(0);
    if opts.strategy == Strategy::Exhaust && n_filters > EXHAUSTIVE_MAX_FILTERS {
        return Err(PlannerError::TooManyFilters {
            n: n_filters,
            max: EXHAUSTIVE_MAX_FILTERS,
        }
        .into());
    }
    let runner = Runner::new(engine, extractor, opts);
    let (tuples, tables, joins, sampling_tokens) = if q.is_join() {
        join::execute_join(&runner, q)?
    } else {
        execute_single(&runner, q)?
    };
    let entries = extractor.audit().entries();
    let mine = &entries[runner.audit_start..];
    let mut per_doc_cost = BTreeMap::new();
    for e in mine.iter().filter(|e| !e.doc_id.is_empty()) {
        *per_doc_cost.entry(e.doc_id.clone()).or_insert(0) += e.tokens();
    }
    let report = SessionReport {
        strategy: if opts.eager {
            "eager".into()
        } else {
            opts.strategy.name().into()
        },
        tuples: tuples.len(),
        tokens_in: mine.iter().map(|e| e.input_tokens).sum(),
        tokens_out: mine.iter().map(|e| e.output_tokens).sum(),
        provider_calls: mine.len(),
        sampling_tokens,
        wall_ms: start.elapsed().as_millis(),
        failed_docs: runner.failed.lock().expect("failed lock").iter().cloned().collect(),
        warnings: runner.warnings.lock().expect("warnings lock").clone(),
        partial: runner.exhausted(),
        tables,
        joins,
    };
    Ok(ResultSet {
        tuples,
        per_doc_cost,
        report,
    })
}

type Executed = (Vec<TupleRecord>, Vec<TableReport>, Vec<JoinStep>, usize);

fn execute_single(run: &Runner<'_>, q: &QuerySpec) -> Result<Executed, ExecError> {
    let spec = &q.tables[0];
    let ctx = session::prepare_table(run, spec, &q.table_attrs(&spec.name))?;
    let sampling_tokens = run.tokens();
    let tail: Vec<AttributeSpec> = q.select.iter().map(|a| ctx.attribute(a)).collect();
    let plan = FilterPlan::new(&ctx, q.where_clause.as_ref(), tail);
    let report = ctx.report(&plan);
    if run.exhausted() {
        return Ok((Vec::new(), vec![report], Vec::new(), sampling_tokens));
    }
    let passed = run.for_each_doc(&ctx.dq_star, |doc, sink| document::evaluate_document(run, &ctx, &plan, doc, sink));
    let tuples = passed
        .into_iter()
        .filter(|(_, ok)| *ok)
        .map(|(doc, _)| project(run, &doc, &q.select, false))
        .collect();
    Ok((tuples, vec![report], Vec::new(), sampling_tokens))
}

/// Result row for one document: SELECT values read from the cache.
pub(crate) fn project(run: &Runner<'_>, doc_id: &str, select: &[AttrRef], qualify: bool) -> TupleRecord {
    let mut rec = TupleRecord::new(doc_id);
    for a in select {
        let key = a.qualified();
        let r = run.extractor.cache().get(doc_id, &key).unwrap_or_else(ExtractionResult::null);
        let name = if qualify { key } else { a.name.clone() };
        rec.provenance.insert(name.clone(), r.provenance);
        rec.values.insert(name, r.value);
    }
    rec
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn row_key(r: &TupleRecord) -> String {
    let cells: Vec<String> = r
        .values
        .iter()
        .map(|(k, v)| match v {
            Value::Text(s) => format!("{k}=s:{}", s.trim().to_lowercase()),
            Value::Number(n) => format!("{k}=n:{n}"),
            Value::Null => format!("{k}=null"),
        })
        .collect();
    format!("{}|{}", r.doc_id, cells.join(","))
}

/// Precision, recall and F1 of returned tuples against ground truth. A tuple
/// is correct when its document and every cell match. An empty result has
/// precision 1; F1 is 0 when precision and recall are both 0.
pub fn score_results(result: &[TupleRecord], truth: &[TupleRecord]) -> Scores {
    let got: BTreeSet<String> = result.iter().map(row_key).collect();
    let want: BTreeSet<String> = truth.iter().map(row_key).collect();
    let hit = got.intersection(&want).count() as f64;
    let precision = if got.is_empty() { 1.0 } else { hit / got.len() as f64 };
    let recall = if want.is_empty() { 1.0 } else { hit / want.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Scores { precision, recall, f1 }
}
