//! Per-table session setup: document retrieval, sampling, threshold
//! calibration, evidence collection and selectivity estimation.

use std::collections::{BTreeMap, HashSet};

use crate::catalog::{AttributeSpec, Segment, TableSpec, TupleRecord};
use crate::extract::{qualified, Charges};
use crate::index::embed::normalize;
use crate::index::retrieval::{SYNTHESIZED_EXEMPLARS, THRESHOLD_MARGIN};
use crate::index::{
    calibrate_gamma, calibrate_tau, collect_evidence, query_embedding, retrieve_documents, retrieve_segments,
    distance, EvidenceSet, EvidenceSource, GammaState, ThresholdState, DEFAULT_GAMMA,
};
use crate::query::AttrRef;
use crate::stats::{sample_documents, split_sample};

use super::{Engine, ExecError, ExecOptions, FilterPlan, Runner, TableReport};

/// Everything known about one table of the query after sampling.
#[derive(Debug, Clone)]
pub struct TableCtx {
    pub spec: TableSpec,
    /// Query attributes of this table.
    pub attrs: Vec<AttributeSpec>,
    pub query_embedding: Vec<f32>,
    /// Documents within the initial τ.
    pub retrieved: Vec<String>,
    /// Sampled documents with their extracted values, keyed by qualified name.
    pub sample: Vec<TupleRecord>,
    pub sampled_empty: usize,
    pub thresholds: ThresholdState,
    pub evidence: BTreeMap<String, EvidenceSet>,
    /// Documents within the calibrated τ; the ones a query evaluates.
    pub dq_star: Vec<String>,
    /// Mean retrieval cost per attribute over the sample.
    pub avg_costs: BTreeMap<String, f64>,
}

impl TableCtx {
    pub fn attribute(&self, a: &AttrRef) -> AttributeSpec {
        self.spec
            .attribute(&a.name)
            .cloned()
            .unwrap_or_else(|| AttributeSpec::new(&a.table, &a.name, a.dtype, ""))
    }

    pub fn report(&self, plan: &FilterPlan) -> TableReport {
        TableReport {
            table: self.spec.name.clone(),
            retrieved: self.retrieved.len(),
            sampled: self.sample.len(),
            sampled_empty: self.sampled_empty,
            candidates: self.dq_star.len(),
            tau: self.thresholds.tau,
            tau_calibrated: self.thresholds.calibrated,
            gamma: self.thresholds.gamma.clone(),
            filters: plan.stats.clone(),
        }
    }
}

fn table_seed(seed: u64, table: &str) -> u64 {
    seed ^ crate::index::embed::fnv1a(table.as_bytes())
}

struct Base {
    spec: TableSpec,
    attrs: Vec<AttributeSpec>,
    members: HashSet<String>,
    q: Vec<f32>,
    retrieved: Vec<String>,
}

fn base(engine: Engine<'_>, spec: &TableSpec, attrs: &[AttrRef], opts: &ExecOptions) -> Result<Base, ExecError> {
    let table = engine
        .catalog
        .table(&spec.name)
        .ok_or_else(|| ExecError::UnknownTable(spec.name.clone()))?;
    let attrs: Vec<AttributeSpec> = attrs
        .iter()
        .map(|a| {
            spec.attribute(&a.name)
                .cloned()
                .unwrap_or_else(|| AttributeSpec::new(&a.table, &a.name, a.dtype, ""))
        })
        .collect();
    let members: HashSet<String> = table.doc_ids.iter().cloned().collect();
    let q = query_embedding(&attrs, engine.embedder)?;
    let retrieved = within(engine, &q, opts.initial_tau, &members);
    Ok(Base {
        spec: spec.clone(),
        attrs,
        members,
        q,
        retrieved,
    })
}

fn within(engine: Engine<'_>, q: &[f32], tau: f64, members: &HashSet<String>) -> Vec<String> {
    retrieve_documents(&engine.index.documents, q, tau)
        .into_iter()
        .filter(|d| members.contains(d))
        .collect()
}

/// Evidence centered on the attribute description, used without samples.
fn description_evidence(engine: Engine<'_>, attr: &AttributeSpec) -> Result<EvidenceSet, ExecError> {
    Ok(EvidenceSet {
        attribute: qualified(attr),
        centers: vec![normalize(engine.embedder.embed(&attr.embedding_text())?)],
        source: EvidenceSource::Description,
    })
}

/// γ for description-centered retrieval: descriptions are short, so even
/// relevant segments sit far from them. Use the median distance from the
/// description to each document's nearest segment, plus the margin.
fn description_gamma(engine: Engine<'_>, docs: &[String], ev: &EvidenceSet) -> f64 {
    let mut nearest: Vec<f64> = docs
        .iter()
        .filter_map(|d| {
            engine
                .index
                .segments_of(d)
                .iter()
                .flat_map(|s| ev.centers.iter().map(move |c| distance(&s.embedding, c)))
                .min_by(f64::total_cmp)
        })
        .collect();
    if nearest.is_empty() {
        return DEFAULT_GAMMA;
    }
    nearest.sort_by(f64::total_cmp);
    nearest[nearest.len() / 2] + THRESHOLD_MARGIN
}

fn mean_costs(engine: Engine<'_>, ctx: &TableCtx, docs: &[String]) -> BTreeMap<String, f64> {
    ctx.attrs
        .iter()
        .map(|a| {
            let key = qualified(a);
            let mean = match ctx.evidence.get(&key) {
                Some(ev) if !docs.is_empty() => {
                    let gamma = ctx.thresholds.gamma_for(&key);
                    let total: usize = docs
                        .iter()
                        .map(|d| retrieve_segments(engine.index, d, ev, gamma).tokens)
                        .sum();
                    total as f64 / docs.len() as f64
                }
                _ => 1.0,
            };
            (key, mean)
        })
        .collect()
}

/// Samples the table, calibrates τ and γ, gathers evidence and refines the
/// candidate set. Sampling cost is charged to the session.
pub(crate) fn prepare_table(run: &Runner<'_>, spec: &TableSpec, attrs: &[AttrRef]) -> Result<TableCtx, ExecError> {
    let engine = run.engine;
    let opts = run.opts;
    let b = base(engine, spec, attrs, opts)?;
    let corpus = engine.catalog.corpus()?.clone();
    let plan = sample_documents(&b.retrieved, opts.sample_rate, table_seed(opts.seed, &spec.name));
    let sampled = run.for_each_doc(&plan.sampled_ids, |doc, sink| {
        let d = corpus.get(doc).expect("indexed document is in the corpus");
        let segs: Vec<&Segment> = engine.index.segments_of(doc).iter().collect();
        run.extractor.sample_document(d, &segs, &b.attrs, sink)
    });
    let sample: Vec<TupleRecord> = sampled
        .into_iter()
        .map(|(doc, results)| {
            let mut rec = TupleRecord::new(&doc);
            for (a, r) in b.attrs.iter().zip(results) {
                rec.values.insert(qualified(a), r.value);
                rec.provenance.insert(qualified(a), r.provenance);
            }
            rec
        })
        .collect();
    let keys: Vec<String> = b.attrs.iter().map(qualified).collect();
    let (with, without) = split_sample(&sample, &keys);
    let without: HashSet<&String> = without.iter().collect();

    let mut thresholds = ThresholdState {
        tau: opts.initial_tau,
        ..ThresholdState::default()
    };
    let outcomes: Vec<(String, bool)> = sample
        .iter()
        .map(|r| (r.doc_id.clone(), !without.contains(&r.doc_id)))
        .collect();
    match calibrate_tau(&engine.index.documents, &b.q, &outcomes) {
        Ok(t) => {
            thresholds.tau = t;
            thresholds.calibrated = true;
        }
        Err(e) => run.warn(format!("{}: {e}; keeping τ = {}", spec.name, opts.initial_tau)),
    }

    let mut evidence = BTreeMap::new();
    for a in &b.attrs {
        let key = qualified(a);
        let embs: Vec<Vec<f32>> = sample
            .iter()
            .filter(|r| !r.value(&key).is_null())
            .flat_map(|r| r.provenance.get(&key).cloned().unwrap_or_default())
            .filter_map(|id| engine.index.segment(&id).map(|s| s.embedding.clone()))
            .collect();
        let mut sink = Charges::new();
        let ev = collect_evidence(&key, &embs, opts.k, opts.seed, engine.embedder, || {
            run.extractor
                .synthesize_exemplars(a, SYNTHESIZED_EXEMPLARS, &mut sink)
                .map_err(|e| e.to_string())
        });
        run.commit(sink);
        let gamma = if embs.is_empty() {
            GammaState {
                gamma: DEFAULT_GAMMA,
                fallback: true,
            }
        } else {
            calibrate_gamma(&embs, DEFAULT_GAMMA)
        };
        let ev = match ev {
            Ok(ev) => {
                thresholds.gamma.insert(key.clone(), gamma);
                ev
            }
            Err(e) => {
                run.warn(format!("{e}; using the attribute description"));
                let ev = description_evidence(engine, a)?;
                let gamma = GammaState {
                    gamma: description_gamma(engine, &b.retrieved, &ev),
                    fallback: true,
                };
                thresholds.gamma.insert(key.clone(), gamma);
                ev
            }
        };
        evidence.insert(key, ev);
    }

    let dq_star = within(engine, &b.q, thresholds.tau, &b.members);
    let mut ctx = TableCtx {
        spec: b.spec,
        attrs: b.attrs,
        query_embedding: b.q,
        retrieved: b.retrieved,
        sampled_empty: sample.len() - with.len(),
        sample,
        thresholds,
        evidence,
        dq_star,
        avg_costs: BTreeMap::new(),
    };
    let sampled_ids: Vec<String> = ctx.sample.iter().map(|r| r.doc_id.clone()).collect();
    ctx.avg_costs = mean_costs(engine, &ctx, &sampled_ids);
    Ok(ctx)
}

/// Table context without sampling: initial τ, default γ and evidence taken
/// from attribute descriptions. Makes no provider calls.
pub(crate) fn uninformed_table(
    engine: Engine<'_>,
    spec: &TableSpec,
    attrs: &[AttrRef],
    opts: &ExecOptions,
) -> Result<TableCtx, ExecError> {
    let b = base(engine, spec, attrs, opts)?;
    let mut thresholds = ThresholdState {
        tau: opts.initial_tau,
        ..ThresholdState::default()
    };
    let mut evidence = BTreeMap::new();
    for a in &b.attrs {
        let ev = description_evidence(engine, a)?;
        thresholds.gamma.insert(
            qualified(a),
            GammaState {
                gamma: description_gamma(engine, &b.retrieved, &ev),
                fallback: true,
            },
        );
        evidence.insert(qualified(a), ev);
    }
    let mut ctx = TableCtx {
        spec: b.spec,
        attrs: b.attrs,
        query_embedding: b.q,
        dq_star: b.retrieved.clone(),
        retrieved: b.retrieved,
        sample: Vec::new(),
        sampled_empty: 0,
        thresholds,
        evidence,
        avg_costs: BTreeMap::new(),
    };
    let all = ctx.dq_star.clone();
    ctx.avg_costs = mean_costs(engine, &ctx, &all);
    Ok(ctx)
}
