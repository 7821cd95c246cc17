//! Multi-table execution: per-table WHERE splitting, adaptive left-deep
//! ordering with join → IN transformation, pushdown, and hash joins.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::catalog::{AttributeSpec, TupleRecord, Value};
use crate::extract::{qualified, ExtractionCache};
use crate::planner::{plan_single_join, transform_join_to_in, JoinSide, PlannerError, SideDoc};
use crate::query::{flatten, AttrRef, Expr, JoinEdge, QuerySpec};
use crate::stats::{estimate_in_selectivity, measure_costs};

use super::document::evaluate_document;
use super::session::prepare_table;
use super::{Engine, ExecError, Executed, FilterPlan, JoinMode, JoinStep, Runner, Strategy, TableCtx};

/// Splits a WHERE clause into per-table expressions along its top-level
/// conjuncts. A conjunct reading several tables is rejected.
pub fn split_where(expr: Option<&Expr>) -> Result<BTreeMap<String, Expr>, PlannerError> {
    let mut parts: BTreeMap<String, Vec<Expr>> = BTreeMap::new();
    let conjuncts: Vec<Expr> = match expr {
        None => Vec::new(),
        Some(Expr::And(c)) => c.clone(),
        Some(e) => vec![e.clone()],
    };
    for c in conjuncts {
        let tables = c.tables();
        if tables.len() > 1 {
            return Err(PlannerError::CrossTableDisjunction(tables.into_iter().collect()));
        }
        let t = tables.into_iter().next().expect("a conjunct has at least one leaf");
        parts.entry(t).or_default().push(c);
    }
    Ok(parts
        .into_iter()
        .map(|(t, mut cs)| {
            let e = if cs.len() == 1 { cs.pop().unwrap() } else { flatten(Expr::And(cs)) };
            (t, e)
        })
        .collect())
}

/// Table → document id of each joined table.
type Row = BTreeMap<String, String>;

struct Tables {
    ctx: BTreeMap<String, TableCtx>,
    plan: BTreeMap<String, FilterPlan>,
}

impl Tables {
    fn attr(&self, a: &AttrRef) -> AttributeSpec {
        self.ctx[&a.table].attribute(a)
    }
}

/// Runs a table's filters over its candidates; returns passing documents.
fn filter_table(run: &Runner<'_>, ctx: &TableCtx, plan: &FilterPlan) -> Vec<String> {
    run.for_each_doc(&ctx.dq_star, |doc, sink| evaluate_document(run, ctx, plan, doc, sink))
        .into_iter()
        .filter(|(_, ok)| *ok)
        .map(|(d, _)| d)
        .collect()
}

/// Extracts `attr` for the given documents (cache-aware).
fn extract_for(run: &Runner<'_>, ctx: &TableCtx, docs: &[String], attr: &AttributeSpec) {
    let unique: Vec<String> = docs.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    run.for_each_doc(&unique, |doc, sink| run.extract(ctx, doc, attr, sink));
}

fn key(run: &Runner<'_>, doc: &str, a: &AttrRef) -> Option<String> {
    run.value(doc, &a.qualified()).join_key(a.dtype)
}

/// Joins `rows` with documents of `table` on every edge connecting them.
fn join_rows(run: &Runner<'_>, t: &Tables, rows: Vec<Row>, table: &str, docs: &[String], edges: &[JoinEdge]) -> Vec<Row> {
    for e in edges {
        let here = e.side(table).expect("edge touches table");
        let there = e.other(table).expect("edge has two sides");
        extract_for(run, &t.ctx[table], docs, &t.attr(here));
        let theirs: Vec<String> = rows.iter().map(|r| r[&there.table].clone()).collect();
        extract_for(run, &t.ctx[&there.table], &theirs, &t.attr(there));
    }
    let (first, rest) = edges.split_first().expect("at least one connecting edge");
    let here = first.side(table).unwrap();
    let there = first.other(table).unwrap();
    let mut by_key: HashMap<String, Vec<&String>> = HashMap::new();
    for d in docs {
        if let Some(k) = key(run, d, here) {
            by_key.entry(k).or_default().push(d);
        }
    }
    let mut out = Vec::new();
    for r in rows {
        let Some(k) = key(run, &r[&there.table], there) else { continue };
        for d in by_key.get(&k).into_iter().flatten() {
            let ok = rest.iter().all(|e| {
                let (h, o) = (e.side(table).unwrap(), e.other(table).unwrap());
                key(run, d, h).is_some() && key(run, d, h) == key(run, &r[&o.table], o)
            });
            if ok {
                let mut next = r.clone();
                next.insert(table.to_string(), (*d).clone());
                out.push(next);
            }
        }
    }
    out
}

fn connecting(q: &QuerySpec, joined: &[String], table: &str) -> Vec<JoinEdge> {
    q.joins
        .iter()
        .filter(|e| e.side(table).is_some() && e.other(table).is_some_and(|o| joined.contains(&o.table)))
        .cloned()
        .collect()
}

/// Join side for planning: per-document filter estimates and the cost of
/// the join attribute.
pub(crate) fn side(
    engine: Engine<'_>,
    cache: &ExtractionCache,
    ctx: &TableCtx,
    plan: &FilterPlan,
    join_attr: &AttributeSpec,
) -> JoinSide {
    let mut attrs = plan.filter_attrs();
    attrs.push(join_attr.clone());
    let key = qualified(join_attr);
    let docs = ctx
        .dq_star
        .iter()
        .map(|d| {
            let costs = measure_costs(engine.index, d, &attrs, &ctx.evidence, &ctx.thresholds, cache);
            SideDoc {
                leaves: plan.estimates(ctx, &costs, Strategy::Quest),
                join_cost: costs.cost(&key) as f64,
            }
        })
        .collect();
    JoinSide {
        table: ctx.spec.name.clone(),
        tree: plan.tree.clone(),
        docs,
    }
}

pub(crate) fn execute_join(run: &Runner<'_>, q: &QuerySpec) -> Result<Executed, ExecError> {
    let parts = split_where(q.where_clause.as_ref())?;
    let mut t = Tables {
        ctx: BTreeMap::new(),
        plan: BTreeMap::new(),
    };
    for spec in &q.tables {
        let ctx = prepare_table(run, spec, &q.table_attrs(&spec.name))?;
        let tail = if run.opts.eager { ctx.attrs.clone() } else { Vec::new() };
        let plan = FilterPlan::new(&ctx, parts.get(&spec.name), tail);
        t.plan.insert(spec.name.clone(), plan);
        t.ctx.insert(spec.name.clone(), ctx);
    }
    let sampling_tokens = run.tokens();
    let reports = q.tables.iter().map(|s| t.ctx[&s.name].report(&t.plan[&s.name])).collect();
    if run.exhausted() {
        return Ok((Vec::new(), reports, Vec::new(), sampling_tokens));
    }
    let mode = if run.opts.eager {
        JoinMode::Pushdown
    } else {
        run.opts.join_mode.clone()
    };
    let (rows, steps) = match mode {
        JoinMode::Pushdown => pushdown(run, q, &t),
        JoinMode::Adaptive => left_deep(run, q, &t, None)?,
        JoinMode::Forced(order) => left_deep(run, q, &t, Some(order))?,
    };
    let tuples = assemble(run, q, &t, rows);
    Ok((tuples, reports, steps, sampling_tokens))
}

/// Extracts SELECT attributes of the joined rows and builds result tuples.
fn assemble(run: &Runner<'_>, q: &QuerySpec, t: &Tables, rows: Vec<Row>) -> Vec<TupleRecord> {
    for a in &q.select {
        let docs: Vec<String> = rows.iter().map(|r| r[&a.table].clone()).collect();
        extract_for(run, &t.ctx[&a.table], &docs, &t.attr(a));
    }
    let mut tuples: Vec<TupleRecord> = rows
        .iter()
        .map(|r| {
            let id: Vec<&str> = q.tables.iter().map(|s| r[&s.name].as_str()).collect();
            let mut rec = TupleRecord::new(&id.join("|"));
            for a in &q.select {
                let key = a.qualified();
                let res = run.extractor.cache().get(&r[&a.table], &key);
                let (v, prov) = res.map(|x| (x.value, x.provenance)).unwrap_or((Value::Null, Vec::new()));
                rec.values.insert(key.clone(), v);
                rec.provenance.insert(key, prov);
            }
            rec
        })
        .collect();
    tuples.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    tuples
}

/// Filters every table independently, then joins in query order.
fn pushdown(run: &Runner<'_>, q: &QuerySpec, t: &Tables) -> (Vec<Row>, Vec<JoinStep>) {
    let mut steps = Vec::new();
    let mut passed: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for s in &q.tables {
        let before = run.tokens();
        let docs = filter_table(run, &t.ctx[&s.name], &t.plan[&s.name]);
        steps.push(JoinStep {
            table: s.name.clone(),
            via: None,
            in_values: 0,
            p_in: None,
            estimated_tokens: 0.0,
            realized_tokens: run.tokens() - before,
            rows_after: docs.len(),
        });
        passed.insert(s.name.clone(), docs);
    }
    let first = &q.tables[0].name;
    let mut joined = vec![first.clone()];
    let mut rows: Vec<Row> = passed[first]
        .iter()
        .map(|d| Row::from([(first.clone(), d.clone())]))
        .collect();
    while joined.len() < q.tables.len() {
        let next = q
            .tables
            .iter()
            .map(|s| &s.name)
            .find(|n| !joined.contains(n) && !connecting(q, &joined, n).is_empty())
            .expect("join graph is connected")
            .clone();
        let edges = connecting(q, &joined, &next);
        let before = run.tokens();
        rows = join_rows(run, t, rows, &next, &passed[&next], &edges);
        if let Some(s) = steps.iter_mut().find(|s| s.table == next) {
            s.realized_tokens += run.tokens() - before;
            s.rows_after = rows.len();
        }
        joined.push(next);
    }
    (rows, steps)
}

struct Candidate {
    table: String,
    edges: Vec<JoinEdge>,
    in_attr: AttrRef,
    values: Vec<Value>,
    p_in: f64,
    estimate: f64,
}

fn candidate(run: &Runner<'_>, t: &Tables, q: &QuerySpec, joined: &[String], rows: &[Row], table: &str) -> Candidate {
    let edges = connecting(q, joined, table);
    let e = &edges[0];
    let there = e.other(table).unwrap().clone();
    let here = e.side(table).unwrap().clone();
    let docs: Vec<String> = rows.iter().map(|r| r[&there.table].clone()).collect();
    extract_for(run, &t.ctx[&there.table], &docs, &t.attr(&there));
    let values: Vec<Value> = docs.iter().map(|d| run.value(d, &there.qualified())).collect();
    let ctx = &t.ctx[table];
    let stats = estimate_in_selectivity(&values, &here, &ctx.sample);
    let estimate = side(run.engine, run.extractor.cache(), ctx, &t.plan[table], &t.attr(&here)).cost_with_in(stats.selectivity);
    Candidate {
        table: table.to_string(),
        edges,
        in_attr: here,
        values,
        p_in: stats.selectivity,
        estimate,
    }
}

/// Left-deep execution. With `order` unset the first join is the edge whose
/// cheaper side scores lowest, and each later table is the adjacent one
/// with the lowest estimated cost under its exact IN filter.
fn left_deep(
    run: &Runner<'_>,
    q: &QuerySpec,
    t: &Tables,
    order: Option<Vec<String>>,
) -> Result<(Vec<Row>, Vec<JoinStep>), ExecError> {
    let names: Vec<String> = q.tables.iter().map(|s| s.name.clone()).collect();
    if let Some(o) = &order {
        let given: BTreeSet<&String> = o.iter().collect();
        if o.len() != names.len() || given != names.iter().collect() {
            return Err(ExecError::InvalidJoinOrder(format!("{o:?} is not a permutation of {names:?}")));
        }
        for i in 1..o.len() {
            if connecting(q, &o[..i], &o[i]).is_empty() {
                return Err(ExecError::InvalidJoinOrder(format!("`{}` is not adjacent to {:?}", o[i], &o[..i])));
            }
        }
    }
    let (driver, driver_score, mut first_target) = match &order {
        Some(o) => (o[0].clone(), 0.0, None),
        None => {
            let mut best: Option<(String, f64, Option<String>)> = None;
            for e in &q.joins {
                let (l, r) = (&e.left.table, &e.right.table);
                let cache = run.extractor.cache();
                let sl = side(run.engine, cache, &t.ctx[l], &t.plan[l], &t.attr(&e.left));
                let sr = side(run.engine, cache, &t.ctx[r], &t.plan[r], &t.attr(&e.right));
                let choice = plan_single_join(&sl, &sr);
                let score = choice.score_t1.min(choice.score_t2);
                if best.as_ref().is_none_or(|b| score < b.1) {
                    best = Some((choice.driving_table, score, Some(choice.target_table)));
                }
            }
            best.expect("a join query has at least one edge")
        }
    };
    let before = run.tokens();
    let docs = filter_table(run, &t.ctx[&driver], &t.plan[&driver]);
    let mut rows: Vec<Row> = docs.iter().map(|d| Row::from([(driver.clone(), d.clone())])).collect();
    let mut steps = vec![JoinStep {
        table: driver.clone(),
        via: None,
        in_values: 0,
        p_in: None,
        estimated_tokens: driver_score,
        realized_tokens: run.tokens() - before,
        rows_after: rows.len(),
    }];
    let mut joined = vec![driver];
    while joined.len() < names.len() {
        if run.exhausted() {
            return Ok((Vec::new(), steps));
        }
        if rows.is_empty() {
            run.warn(format!("no rows reach the IN filter after joining {joined:?}; the join is empty"));
            return Ok((Vec::new(), steps));
        }
        let before = run.tokens();
        let first = first_target.take();
        let pending: Vec<&String> = match (&order, &first) {
            (Some(o), _) => vec![&o[joined.len()]],
            (None, Some(f)) => vec![f],
            (None, None) => names
                .iter()
                .filter(|n| !joined.contains(n) && !connecting(q, &joined, n).is_empty())
                .collect(),
        };
        let mut cands: Vec<Candidate> = pending.iter().map(|n| candidate(run, t, q, &joined, &rows, n)).collect();
        let pick = (0..cands.len())
            .min_by(|&a, &b| cands[a].estimate.total_cmp(&cands[b].estimate).then(a.cmp(&b)))
            .expect("a connected graph has an adjacent table");
        let c = cands.swap_remove(pick);
        let ctx = &t.ctx[&c.table];
        let n_values = c.values.len();
        let pred = match transform_join_to_in(c.values.clone(), c.in_attr.clone()) {
            Ok(p) => p,
            Err(e) => {
                run.warn(format!("{e}; the join is empty"));
                return Ok((Vec::new(), steps));
            }
        };
        let distinct = match &pred.op {
            crate::query::PredOp::In(v) => v.len(),
            _ => n_values,
        };
        let stats = estimate_in_selectivity(&c.values, &c.in_attr, &ctx.sample);
        let plan = t.plan[&c.table].with_filter(ctx, pred, stats);
        let docs = filter_table(run, ctx, &plan);
        rows = join_rows(run, t, rows, &c.table, &docs, &c.edges);
        let there = c.edges[0].other(&c.table).unwrap();
        steps.push(JoinStep {
            table: c.table.clone(),
            via: Some((there.qualified(), c.in_attr.qualified())),
            in_values: distinct,
            p_in: Some(c.p_in),
            estimated_tokens: c.estimate,
            realized_tokens: run.tokens() - before,
            rows_after: rows.len(),
        });
        joined.push(c.table);
    }
    Ok((rows, steps))
}
