//! Per-document plan execution with lazy extraction and replanning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::AttributeSpec;
use crate::extract::{qualified, Charges, ExtractError};
use crate::planner::{join::with_in_leaf, order_expression_with, Exhaustive, FilterEstimate, NodeOrderer, PlanTree, PrioritySort};
use crate::query::{leaves, Expr, Predicate};
use crate::stats::{estimate_selectivity, measure_costs, DocCostVector, FilterStats};

use super::{Runner, Strategy, TableCtx};

/// A table's WHERE tree with selectivities and the attributes to extract
/// once the tree evaluates True.
#[derive(Debug, Clone)]
pub struct FilterPlan {
    pub tree: Option<PlanTree>,
    pub leaves: Vec<Predicate>,
    pub leaf_attrs: Vec<AttributeSpec>,
    pub p: Vec<f64>,
    pub stats: Vec<FilterStats>,
    /// Leaves of a flat disjunction whose attribute is projected anyway; they
    /// are scheduled as free.
    pub free_prefix: Vec<bool>,
    pub tail: Vec<AttributeSpec>,
}

impl FilterPlan {
    pub fn new(ctx: &TableCtx, where_clause: Option<&Expr>, tail: Vec<AttributeSpec>) -> Self {
        let preds: Vec<Predicate> = where_clause.map(|w| leaves(w).into_iter().cloned().collect()).unwrap_or_default();
        let stats: Vec<FilterStats> = preds.iter().map(|p| estimate_selectivity(p, &ctx.sample)).collect();
        let mut plan = FilterPlan {
            tree: where_clause.map(PlanTree::from_expr),
            leaf_attrs: preds.iter().map(|p| ctx.attribute(&p.attr)).collect(),
            p: stats.iter().map(|s| s.selectivity).collect(),
            leaves: preds,
            stats,
            free_prefix: Vec::new(),
            tail,
        };
        plan.mark_prefix();
        plan
    }

    fn mark_prefix(&mut self) {
        let flat_or = matches!(&self.tree, Some(PlanTree::Or(c)) if c.iter().all(|x| matches!(x, PlanTree::Leaf(_))));
        let tail: Vec<String> = self.tail.iter().map(qualified).collect();
        self.free_prefix = self
            .leaf_attrs
            .iter()
            .map(|a| flat_or && tail.contains(&qualified(a)))
            .collect();
    }

    /// `AND{where, filter}` with `filter` appended as the last leaf.
    pub fn with_filter(&self, ctx: &TableCtx, pred: Predicate, stats: FilterStats) -> Self {
        let mut next = self.clone();
        next.tree = Some(with_in_leaf(self.tree.as_ref(), self.leaves.len()));
        next.leaf_attrs.push(ctx.attribute(&pred.attr));
        next.leaves.push(pred);
        next.p.push(stats.selectivity);
        next.stats.push(stats);
        next.mark_prefix();
        next
    }

    /// Distinct attributes read by the filters, in leaf order.
    pub fn filter_attrs(&self) -> Vec<AttributeSpec> {
        let mut out: Vec<AttributeSpec> = Vec::new();
        for a in &self.leaf_attrs {
            if !out.iter().any(|x| qualified(x) == qualified(a)) {
                out.push(a.clone());
            }
        }
        out
    }

    /// Leaf estimates a strategy plans with for one document.
    pub fn estimates(&self, ctx: &TableCtx, costs: &DocCostVector, strategy: Strategy) -> Vec<FilterEstimate> {
        (0..self.leaves.len())
            .map(|i| {
                let key = qualified(&self.leaf_attrs[i]);
                let c = match strategy {
                    Strategy::Selectivity => 1.0,
                    Strategy::AvgCost => ctx.avg_costs.get(&key).copied().unwrap_or(1.0),
                    _ => costs.cost(&key) as f64,
                };
                FilterEstimate::new(self.p[i], if self.free_prefix[i] { 0.0 } else { c })
            })
            .collect()
    }
}

/// What remains of `tree` given the leaves evaluated so far: its value if
/// already determined, else the sub-tree over unevaluated leaves.
pub fn residual(tree: &PlanTree, truth: &[Option<bool>]) -> Result<bool, PlanTree> {
    match tree {
        PlanTree::Leaf(i) => truth[*i].ok_or(PlanTree::Leaf(*i)),
        PlanTree::And(c) | PlanTree::Or(c) => {
            let is_and = matches!(tree, PlanTree::And(_));
            let mut pending = Vec::new();
            for child in c {
                match residual(child, truth) {
                    Ok(v) if v != is_and => return Ok(v),
                    Ok(_) => {}
                    Err(t) => pending.push(t),
                }
            }
            match pending.len() {
                0 => Ok(is_and),
                1 => Err(pending.pop().unwrap()),
                _ if is_and => Err(PlanTree::And(pending)),
                _ => Err(PlanTree::Or(pending)),
            }
        }
    }
}

fn step_rng(seed: u64, doc: &str, step: u64) -> ChaCha8Rng {
    let h = crate::index::embed::fnv1a(doc.as_bytes());
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ h ^ step.rotate_left(32))
}

/// Full flattened order the strategy would follow for `tree`.
pub(crate) fn plan_order(tree: &PlanTree, ests: &[FilterEstimate], strategy: Strategy) -> (Vec<usize>, f64) {
    let orderer: &dyn NodeOrderer = match strategy {
        Strategy::Exhaust => &Exhaustive,
        _ => &PrioritySort,
    };
    let plan = order_expression_with(tree, ests, orderer);
    (plan.order, plan.cost)
}

fn next_leaf(
    run: &Runner<'_>,
    ctx: &TableCtx,
    plan: &FilterPlan,
    rest: &PlanTree,
    costs: &DocCostVector,
    doc: &str,
    step: u64,
) -> usize {
    let strategy = run.opts.strategy;
    if strategy == Strategy::Random {
        let ids = rest.leaf_ids();
        return ids[step_rng(run.opts.order_seed, doc, step).gen_range(0..ids.len())];
    }
    plan_order(rest, &plan.estimates(ctx, costs, strategy), strategy).0[0]
}

/// Evaluates the plan on one document: repeatedly extracts the first
/// attribute of the current optimal order for the unresolved part of the
/// tree until the tree's value is known, then extracts the tail if it holds.
pub(crate) fn evaluate_document(
    run: &Runner<'_>,
    ctx: &TableCtx,
    plan: &FilterPlan,
    doc: &str,
    sink: &mut Charges,
) -> Result<bool, ExtractError> {
    let cache = run.extractor.cache();
    let passed = match &plan.tree {
        None => true,
        Some(tree) => {
            if run.opts.eager {
                for a in plan.filter_attrs().iter().chain(&plan.tail) {
                    run.extract(ctx, doc, a, sink)?;
                }
            }
            let costs = measure_costs(
                run.engine.index,
                doc,
                &plan.filter_attrs(),
                &ctx.evidence,
                &ctx.thresholds,
                cache,
            );
            let mut truth: Vec<Option<bool>> = vec![None; plan.leaves.len()];
            let mut step = 0u64;
            loop {
                for (i, t) in truth.iter_mut().enumerate() {
                    if t.is_none() {
                        if let Some(r) = cache.get(doc, &qualified(&plan.leaf_attrs[i])) {
                            *t = Some(plan.leaves[i].eval(&r.value));
                        }
                    }
                }
                match residual(tree, &truth) {
                    Ok(v) => break v,
                    Err(rest) => {
                        let leaf = next_leaf(run, ctx, plan, &rest, &costs, doc, step);
                        run.extract(ctx, doc, &plan.leaf_attrs[leaf], sink)?;
                        step += 1;
                    }
                }
            }
        }
    };
    if passed {
        for a in &plan.tail {
            run.extract(ctx, doc, a, sink)?;
        }
    }
    Ok(passed)
}
