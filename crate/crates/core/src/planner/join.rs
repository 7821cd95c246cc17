//! Single-join plan costs and the join → IN transformation.

use serde::Serialize;

use super::cost::FilterEstimate;
use super::tree::{order_expression, PlanTree};
use super::PlannerError;
use crate::catalog::Value;
use crate::query::{AttrRef, Predicate};

/// Per-document inputs for one join side.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SideDoc {
    /// Estimates for the side's own filters, indexed by leaf id.
    pub leaves: Vec<FilterEstimate>,
    /// Tokens to extract the join attribute.
    pub join_cost: f64,
}

/// One table of a join with its local WHERE tree and per-document costs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinSide {
    pub table: String,
    pub tree: Option<PlanTree>,
    pub docs: Vec<SideDoc>,
}

impl JoinSide {
    /// Uniform side: every document has the same single filter and join cost.
    pub fn uniform(table: &str, n_docs: usize, filter: FilterEstimate, join_cost: f64) -> Self {
        JoinSide {
            table: table.to_string(),
            tree: Some(PlanTree::Leaf(0)),
            docs: vec![
                SideDoc {
                    leaves: vec![filter],
                    join_cost,
                };
                n_docs
            ],
        }
    }

    fn where_plan(&self, doc: &SideDoc) -> (f64, f64) {
        match &self.tree {
            Some(t) => {
                let plan = order_expression(t, &doc.leaves);
                (plan.cost, plan.p)
            }
            None => (0.0, 1.0),
        }
    }

    /// Expected tokens to filter this side and extract the join attribute of
    /// the survivors: Σ C*(where) + p · Σ c_join.
    pub fn score(&self) -> f64 {
        self.docs
            .iter()
            .map(|d| {
                let (c, p) = self.where_plan(d);
                c + p * d.join_cost
            })
            .sum()
    }

    /// Expected tokens to run this side as the target of an IN filter with
    /// selectivity `p_in`, ordered jointly with the side's own filters.
    pub fn cost_with_in(&self, p_in: f64) -> f64 {
        self.docs.iter().map(|d| self.doc_cost_with_in(d, p_in)).sum()
    }

    pub fn doc_cost_with_in(&self, doc: &SideDoc, p_in: f64) -> f64 {
        let in_id = doc.leaves.len();
        let tree = with_in_leaf(self.tree.as_ref(), in_id);
        let mut leaves = doc.leaves.clone();
        leaves.push(FilterEstimate::new(p_in, doc.join_cost));
        order_expression(&tree, &leaves).cost
    }
}

/// `AND{tree, IN}` with the IN filter as leaf `in_id`, flattened.
pub fn with_in_leaf(tree: Option<&PlanTree>, in_id: usize) -> PlanTree {
    match tree {
        None => PlanTree::Leaf(in_id),
        Some(PlanTree::And(c)) => {
            let mut c = c.clone();
            c.push(PlanTree::Leaf(in_id));
            PlanTree::And(c)
        }
        Some(t) => PlanTree::And(vec![t.clone(), PlanTree::Leaf(in_id)]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum JoinPlanKind {
    /// Filter the first table, then probe the second through an IN filter.
    Plan2,
    /// Filter the second table, then probe the first.
    Plan3,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JoinPlanChoice {
    pub kind: JoinPlanKind,
    pub driving_table: String,
    pub target_table: String,
    pub score_t1: f64,
    pub score_t2: f64,
    /// Both sides filtered independently, then joined. Reported only.
    pub pushdown_cost: f64,
}

/// Chooses which side drives by comparing the side scores; ties go to the
/// side with fewer documents, then to the first side.
pub fn plan_single_join(t1: &JoinSide, t2: &JoinSide) -> JoinPlanChoice {
    let (s1, s2) = (t1.score(), t2.score());
    let first_drives = s1 < s2 || (s1 == s2 && t1.docs.len() <= t2.docs.len());
    let (d, t) = if first_drives { (t1, t2) } else { (t2, t1) };
    JoinPlanChoice {
        kind: if first_drives {
            JoinPlanKind::Plan2
        } else {
            JoinPlanKind::Plan3
        },
        driving_table: d.table.clone(),
        target_table: t.table.clone(),
        score_t1: s1,
        score_t2: s2,
        pushdown_cost: s1 + s2,
    }
}

/// Expected cost of pushing each side's filters down and joining afterwards.
pub fn plan_cost_plan1(t1: &JoinSide, t2: &JoinSide) -> f64 {
    t1.score() + t2.score()
}

/// Full expected cost of driving with `driver` and probing `target` through
/// an IN filter of selectivity `p_in`.
pub fn transformed_plan_cost(driver: &JoinSide, target: &JoinSide, p_in: f64) -> f64 {
    driver.score() + target.cost_with_in(p_in)
}

/// Replaces a join by an IN filter over the driving side's join values.
pub fn transform_join_to_in(
    values: impl IntoIterator<Item = Value>,
    target: AttrRef,
) -> Result<Predicate, PlannerError> {
    let pred = Predicate::synthetic_in(target.clone(), values);
    match &pred.op {
        crate::query::PredOp::In(set) if set.is_empty() => Err(PlannerError::EmptyJoinInput(target.qualified())),
        _ => Ok(pred),
    }
}
