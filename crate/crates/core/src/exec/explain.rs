//! Plans a query without calling the extractor.
//!
//! No sampling happens, so selectivities are the uninformed default, τ is
//! the initial threshold and segment retrieval is centered on attribute
//! descriptions. Costs are the real per-document retrieval costs.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::Serialize;

use crate::extract::ExtractionCache;
use crate::planner::{plan_single_join, JoinPlanChoice};
use crate::query::QuerySpec;
use crate::stats::{measure_costs, stats_dump, DocCostVector};

use super::document::plan_order;
use super::join::{side, split_where};
use super::session::uninformed_table;
use super::{Engine, ExecError, ExecOptions, FilterPlan, Strategy, TableReport};

#[derive(Debug, Clone, Serialize)]
pub struct DocPlan {
    pub table: String,
    pub doc_id: String,
    /// Filters in execution order.
    pub order: Vec<String>,
    pub expected_tokens: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Explain {
    pub query: String,
    pub strategy: String,
    pub tables: Vec<TableReport>,
    pub plans: Vec<DocPlan>,
    pub joins: Vec<JoinPlanChoice>,
    pub text: String,
}

pub fn explain_query(engine: Engine<'_>, q: &QuerySpec, opts: &ExecOptions) -> Result<Explain, ExecError> {
    let parts = if q.is_join() {
        split_where(q.where_clause.as_ref())?
    } else {
        q.where_clause
            .iter()
            .map(|w| (q.tables[0].name.clone(), w.clone()))
            .collect()
    };
    let empty = ExtractionCache::new();
    let mut tables = Vec::new();
    let mut plans = Vec::new();
    let mut ctxs = BTreeMap::new();
    let mut text = format!("query: {q}\nstrategy: {}\n", opts.strategy);
    for spec in &q.tables {
        let ctx = uninformed_table(engine, spec, &q.table_attrs(&spec.name), opts)?;
        let tail = if q.is_join() {
            Vec::new()
        } else {
            q.select.iter().map(|a| ctx.attribute(a)).collect()
        };
        let plan = FilterPlan::new(&ctx, parts.get(&spec.name), tail);
        let mut costs: Vec<DocCostVector> = Vec::new();
        for d in &ctx.dq_star {
            let c = measure_costs(engine.index, d, &ctx.attrs, &ctx.evidence, &ctx.thresholds, &empty);
            if let Some(tree) = &plan.tree {
                let strategy = match opts.strategy {
                    Strategy::Random => Strategy::Quest,
                    s => s,
                };
                let (order, cost) = plan_order(tree, &plan.estimates(&ctx, &c, strategy), strategy);
                plans.push(DocPlan {
                    table: spec.name.clone(),
                    doc_id: d.clone(),
                    order: order.iter().map(|&i| plan.leaves[i].to_string()).collect(),
                    expected_tokens: cost,
                });
            }
            costs.push(c);
        }
        let report = ctx.report(&plan);
        let _ = writeln!(
            text,
            "table {}: {} candidate documents (τ = {}, uncalibrated; no sampling)",
            spec.name, report.candidates, report.tau
        );
        text.push_str(&stats_dump(&report.filters, &costs));
        tables.push(report);
        ctxs.insert(spec.name.clone(), (ctx, plan));
    }
    if opts.strategy == Strategy::Random {
        text.push_str("random ordering is decided at run time; plans below use priority order\n");
    }
    if !plans.is_empty() {
        text.push_str("plans:\n");
        for p in &plans {
            let _ = writeln!(text, "  {} {}  {}  expected={:.1}", p.table, p.doc_id, p.order.join(" → "), p.expected_tokens);
        }
    }
    let mut joins = Vec::new();
    for e in &q.joins {
        let (cl, pl) = &ctxs[&e.left.table];
        let (cr, pr) = &ctxs[&e.right.table];
        let l = side(engine, &empty, cl, pl, &cl.attribute(&e.left));
        let r = side(engine, &empty, cr, pr, &cr.attribute(&e.right));
        let choice = plan_single_join(&l, &r);
        let _ = writeln!(
            text,
            "join {} = {}: {:?} drives with {} (scores {:.1} / {:.1}; pushdown {:.1})",
            e.left.qualified(),
            e.right.qualified(),
            choice.kind,
            choice.driving_table,
            choice.score_t1,
            choice.score_t2,
            choice.pushdown_cost
        );
        joins.push(choice);
    }
    Ok(Explain {
        query: q.to_string(),
        strategy: opts.strategy.name().into(),
        tables,
        plans,
        joins,
        text,
    })
}
