//! Per-document optimizer: filter ordering, expression-tree ordering and
//! join plan selection. Everything here is a pure function of estimates.

pub mod cost;
pub mod join;
pub mod tree;

use thiserror::Error;

pub use cost::{
    expected_cost_conjunction, expected_cost_disjunction, order_conjunction, order_disjunction,
    order_disjunction_with_select, Connective, FilterEstimate,
};
pub use join::{
    plan_cost_plan1, plan_single_join, transform_join_to_in, transformed_plan_cost, JoinPlanChoice,
    JoinPlanKind, JoinSide, SideDoc,
};
pub use tree::{order_expression, order_expression_with, Exhaustive, NodeOrderer, NodePlan, PlanTree, PrioritySort};

#[derive(Debug, Error, PartialEq)]
pub enum PlannerError {
    #[error("join input for {0} is empty")]
    EmptyJoinInput(String),
    #[error("disjunction spans tables {0:?}; only per-table OR is supported")]
    CrossTableDisjunction(Vec<String>),
    #[error("exhaustive ordering is limited to {max} filters, query has {n}")]
    TooManyFilters { n: usize, max: usize },
}
