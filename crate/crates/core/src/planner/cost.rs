//! Expected-cost formulas and priority sorting for flat conjunctions and
//! disjunctions.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Selectivity and extraction cost (tokens) of one unit: a filter or an
/// already-optimized sub-expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterEstimate {
    pub p: f64,
    pub cost: f64,
}

impl FilterEstimate {
    pub fn new(p: f64, cost: f64) -> Self {
        Self { p, cost }
    }
}

/// Boolean context a unit is scheduled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connective {
    And,
    Or,
}

impl Connective {
    /// Probability that evaluation continues past a unit.
    fn pass(self, p: f64) -> f64 {
        match self {
            Connective::And => p,
            Connective::Or => 1.0 - p,
        }
    }

    /// `(1-p)/c` in a conjunction, `p/c` in a disjunction. Infinite at zero cost.
    pub fn priority(self, e: &FilterEstimate) -> f64 {
        let gain = 1.0 - self.pass(e.p);
        if e.cost <= 0.0 {
            f64::INFINITY
        } else {
            gain / e.cost
        }
    }

    /// Probability that a node of this kind evaluates True.
    pub fn combine(self, ps: impl IntoIterator<Item = f64>) -> f64 {
        match self {
            Connective::And => ps.into_iter().product(),
            Connective::Or => 1.0 - ps.into_iter().map(|p| 1.0 - p).product::<f64>(),
        }
    }

    /// Expected cost of evaluating units in `order` with short-circuiting.
    pub fn expected_cost(self, order: &[usize], units: &[FilterEstimate]) -> f64 {
        let mut reach = 1.0;
        let mut total = 0.0;
        for &i in order {
            total += reach * units[i].cost;
            reach *= self.pass(units[i].p);
        }
        total
    }

    /// Priority order: free units first, then descending priority; ties go to
    /// the cheaper unit, then to input order.
    pub fn sort(self, units: &[FilterEstimate]) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..units.len()).collect();
        idx.sort_by(|&a, &b| self.compare(units, a, b));
        idx
    }

    pub(crate) fn compare(self, units: &[FilterEstimate], a: usize, b: usize) -> Ordering {
        let (ea, eb) = (&units[a], &units[b]);
        let paid = |e: &FilterEstimate| e.cost > 0.0;
        paid(ea)
            .cmp(&paid(eb))
            .then_with(|| {
                if ea.cost <= 0.0 {
                    Ordering::Equal
                } else {
                    self.priority(eb).total_cmp(&self.priority(ea))
                }
            })
            .then_with(|| ea.cost.total_cmp(&eb.cost))
            .then_with(|| a.cmp(&b))
    }
}

/// Expected tokens of a conjunction in the given order, including the
/// SELECT tail paid only when every filter passes.
pub fn expected_cost_conjunction(order: &[usize], filters: &[FilterEstimate], select_costs: &[f64]) -> f64 {
    let tail: f64 = select_costs.iter().sum();
    let all_pass: f64 = order.iter().map(|&i| filters[i].p).product();
    Connective::And.expected_cost(order, filters) + tail * all_pass
}

/// Expected tokens of a disjunction in the given order, including the
/// SELECT tail paid when any filter passes.
pub fn expected_cost_disjunction(order: &[usize], filters: &[FilterEstimate], select_costs: &[f64]) -> f64 {
    let tail: f64 = select_costs.iter().sum();
    let none_pass: f64 = order.iter().map(|&i| 1.0 - filters[i].p).product();
    Connective::Or.expected_cost(order, filters) + tail * (1.0 - none_pass)
}

/// Order minimizing expected conjunction cost.
pub fn order_conjunction(filters: &[FilterEstimate]) -> Vec<usize> {
    Connective::And.sort(filters)
}

/// Order minimizing expected disjunction cost.
pub fn order_disjunction(filters: &[FilterEstimate]) -> Vec<usize> {
    Connective::Or.sort(filters)
}

/// Disjunction order when some filters read attributes the query also
/// projects: those attributes are needed whenever the row qualifies and are
/// read anyway when it does not, so they go first at no extra cost.
pub fn order_disjunction_with_select(filters: &[FilterEstimate], projected: &[bool]) -> Vec<usize> {
    let adjusted: Vec<FilterEstimate> = filters
        .iter()
        .zip(projected)
        .map(|(f, &sel)| if sel { FilterEstimate::new(f.p, 0.0) } else { *f })
        .collect();
    order_disjunction(&adjusted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(p: f64, c: f64) -> FilterEstimate {
        FilterEstimate::new(p, c)
    }

    #[test]
    fn conjunction_costs() {
        let fs = [f(0.5, 10.0), f(0.9, 100.0)];
        assert_eq!(expected_cost_conjunction(&[0, 1], &fs, &[]), 60.0);
        assert!((expected_cost_conjunction(&[1, 0], &fs, &[]) - 109.0).abs() < 1e-12);
        assert_eq!(expected_cost_conjunction(&[0], &[f(0.4, 30.0)], &[]), 30.0);
    }

    #[test]
    fn disjunction_costs() {
        let fs = [f(0.9, 10.0), f(0.1, 10.0)];
        assert!((expected_cost_disjunction(&[0, 1], &fs, &[]) - 11.0).abs() < 1e-12);
        let zeros = [f(0.0, 10.0), f(0.0, 7.0)];
        assert_eq!(expected_cost_disjunction(&[0, 1], &zeros, &[]), 17.0);
        assert!((expected_cost_disjunction(&[0], &[f(0.3, 10.0)], &[100.0]) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn sorted_conjunction_example() {
        let fs = [f(0.2, 30.0), f(0.1, 30.0), f(0.5, 10.0)];
        assert_eq!(order_conjunction(&fs), vec![2, 1, 0]);
    }

    #[test]
    fn ties_prefer_cheaper_then_input_order() {
        let same = [f(0.5, 10.0); 4];
        assert_eq!(order_conjunction(&same), vec![0, 1, 2, 3]);
        // Equal priority 0.05, different costs.
        let fs = [f(0.0, 20.0), f(0.5, 10.0)];
        assert_eq!(order_conjunction(&fs), vec![1, 0]);
    }

    #[test]
    fn free_filters_first() {
        let fs = [f(0.1, 5.0), f(0.99, 0.0)];
        assert_eq!(order_conjunction(&fs), vec![1, 0]);
        assert_eq!(order_disjunction(&fs), vec![1, 0]);
    }

    #[test]
    fn disjunction_examples() {
        assert_eq!(order_disjunction(&[f(0.1, 10.0), f(0.9, 10.0)]), vec![1, 0]);
        // Equal selectivity: cheapest first.
        assert_eq!(order_disjunction(&[f(0.3, 30.0), f(0.3, 10.0), f(0.3, 20.0)]), vec![1, 2, 0]);
        let fs = [f(0.9, 1.0), f(0.1, 50.0)];
        assert_eq!(order_disjunction_with_select(&fs, &[false, true]), vec![1, 0]);
    }
}
