//! Bottom-up ordering of AND/OR expression trees.
//!
//! Each node orders its children as units whose cost is the child's optimal
//! expected cost and whose selectivity is composed assuming independence.
//! The resulting flat order keeps every sub-expression contiguous.

use serde::Serialize;

use super::cost::{Connective, FilterEstimate};
use crate::query::Expr;

/// Expression tree over leaf indices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PlanTree {
    Leaf(usize),
    And(Vec<PlanTree>),
    Or(Vec<PlanTree>),
}

impl PlanTree {
    /// Mirrors `expr`, numbering leaves left to right.
    pub fn from_expr(expr: &Expr) -> PlanTree {
        fn build(e: &Expr, next: &mut usize) -> PlanTree {
            match e {
                Expr::Leaf(_) => {
                    *next += 1;
                    PlanTree::Leaf(*next - 1)
                }
                Expr::And(c) => PlanTree::And(c.iter().map(|x| build(x, next)).collect()),
                Expr::Or(c) => PlanTree::Or(c.iter().map(|x| build(x, next)).collect()),
            }
        }
        build(expr, &mut 0)
    }

    pub fn leaf_ids(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.walk(&mut |t| {
            if let PlanTree::Leaf(i) = t {
                out.push(*i)
            }
        });
        out
    }

    fn walk(&self, f: &mut impl FnMut(&PlanTree)) {
        f(self);
        if let PlanTree::And(c) | PlanTree::Or(c) = self {
            c.iter().for_each(|x| x.walk(f));
        }
    }

    pub fn connective(&self) -> Option<Connective> {
        match self {
            PlanTree::Leaf(_) => None,
            PlanTree::And(_) => Some(Connective::And),
            PlanTree::Or(_) => Some(Connective::Or),
        }
    }

    pub fn children(&self) -> &[PlanTree] {
        match self {
            PlanTree::Leaf(_) => &[],
            PlanTree::And(c) | PlanTree::Or(c) => c,
        }
    }

    /// Evaluates under a leaf valuation.
    pub fn eval(&self, truth: &dyn Fn(usize) -> bool) -> bool {
        match self {
            PlanTree::Leaf(i) => truth(*i),
            PlanTree::And(c) => c.iter().all(|x| x.eval(truth)),
            PlanTree::Or(c) => c.iter().any(|x| x.eval(truth)),
        }
    }
}

/// Optimal flat order of a (sub)tree with its expected cost and probability
/// of evaluating True.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodePlan {
    pub order: Vec<usize>,
    pub cost: f64,
    pub p: f64,
}

/// How a node orders its child units.
pub trait NodeOrderer: Sync {
    fn order(&self, conn: Connective, units: &[FilterEstimate]) -> Vec<usize>;
}

/// Descending priority score.
#[derive(Debug, Clone, Copy, Default)]
pub struct PrioritySort;

impl NodeOrderer for PrioritySort {
    fn order(&self, conn: Connective, units: &[FilterEstimate]) -> Vec<usize> {
        conn.sort(units)
    }
}

/// Brute force over all permutations of a node's children.
///
/// Permutations are visited starting from the priority order, and a later one
/// only wins if it is cheaper by more than a relative 1e-9, so equally cheap
/// orders resolve exactly as [`PrioritySort`] resolves them.
#[derive(Debug, Clone, Copy, Default)]
pub struct Exhaustive;

impl NodeOrderer for Exhaustive {
    fn order(&self, conn: Connective, units: &[FilterEstimate]) -> Vec<usize> {
        let base = conn.sort(units);
        let mut best = base.clone();
        let mut best_cost = conn.expected_cost(&base, units);
        let mut perm: Vec<usize> = (0..units.len()).collect();
        while next_permutation(&mut perm) {
            let ord: Vec<usize> = perm.iter().map(|&k| base[k]).collect();
            let c = conn.expected_cost(&ord, units);
            if c < best_cost - 1e-9 * best_cost.abs() {
                best_cost = c;
                best = ord;
            }
        }
        best
    }
}

/// Lexicographic successor; false once the last permutation is reached.
pub fn next_permutation(v: &mut [usize]) -> bool {
    if v.len() < 2 {
        return false;
    }
    let Some(i) = (0..v.len() - 1).rev().find(|&i| v[i] < v[i + 1]) else {
        return false;
    };
    let j = (i + 1..v.len()).rev().find(|&j| v[j] > v[i]).unwrap();
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Orders `tree` given per-leaf estimates indexed by leaf id.
pub fn order_expression(tree: &PlanTree, leaves: &[FilterEstimate]) -> NodePlan {
    order_expression_with(tree, leaves, &PrioritySort)
}

pub fn order_expression_with(tree: &PlanTree, leaves: &[FilterEstimate], orderer: &dyn NodeOrderer) -> NodePlan {
    match tree {
        PlanTree::Leaf(i) => NodePlan {
            order: vec![*i],
            cost: leaves[*i].cost,
            p: leaves[*i].p,
        },
        PlanTree::And(children) | PlanTree::Or(children) => {
            let conn = tree.connective().unwrap();
            let plans: Vec<NodePlan> = children
                .iter()
                .map(|c| order_expression_with(c, leaves, orderer))
                .collect();
            let units: Vec<FilterEstimate> = plans.iter().map(|p| FilterEstimate::new(p.p, p.cost)).collect();
            let ord = orderer.order(conn, &units);
            NodePlan {
                cost: conn.expected_cost(&ord, &units),
                p: conn.combine(units.iter().map(|u| u.p)),
                order: ord.iter().flat_map(|&k| plans[k].order.iter().copied()).collect(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(p: f64, c: f64) -> FilterEstimate {
        FilterEstimate::new(p, c)
    }

    fn mixed() -> PlanTree {
        use PlanTree::*;
        And(vec![
            Or(vec![Leaf(0), Leaf(1)]),
            Or(vec![Leaf(2), And(vec![Leaf(3), Leaf(4)])]),
        ])
    }

    #[test]
    fn single_leaf() {
        let p = order_expression(&PlanTree::Leaf(0), &[f(0.3, 42.0)]);
        assert_eq!(p.order, vec![0]);
        assert_eq!(p.cost, 42.0);
    }

    #[test]
    fn mixed_tree_blocks_stay_contiguous() {
        // Stats under which θ1→θ2→θ3→θ5→θ4 is optimal.
        let leaves = [f(0.2, 5.0), f(0.1, 5.0), f(0.3, 10.0), f(0.5, 40.0), f(0.2, 30.0)];
        let plan = order_expression(&mixed(), &leaves);
        assert_eq!(plan.order, vec![0, 1, 2, 4, 3]);
        let pos = |x| plan.order.iter().position(|&y| y == x).unwrap();
        assert_eq!(pos(1).abs_diff(pos(0)), 1);
        assert_eq!(pos(4).abs_diff(pos(3)), 1);
    }

    #[test]
    fn probability_composition() {
        let leaves = [f(0.5, 1.0), f(0.5, 1.0), f(0.2, 1.0), f(0.5, 1.0), f(0.5, 1.0)];
        let plan = order_expression(&mixed(), &leaves);
        let want = 0.75 * (1.0 - 0.8 * 0.75);
        assert!((plan.p - want).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_agrees_on_ties() {
        let units = [f(0.5, 10.0); 4];
        assert_eq!(Exhaustive.order(Connective::And, &units), vec![0, 1, 2, 3]);
        let units = [f(0.2, 30.0), f(0.1, 30.0), f(0.5, 10.0)];
        assert_eq!(Exhaustive.order(Connective::And, &units), vec![2, 1, 0]);
    }

    #[test]
    fn permutations_enumerate_all() {
        let mut v = vec![0, 1, 2, 3];
        let mut n = 1;
        while next_permutation(&mut v) {
            n += 1;
        }
        assert_eq!(n, 24);
        assert_eq!(v, vec![3, 2, 1, 0]);
    }

    #[test]
    fn leaf_numbering_matches_expr() {
        assert_eq!(mixed().leaf_ids(), vec![0, 1, 2, 3, 4]);
    }
}
