//! Sampling, selectivity estimation and per-document cost measurement.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{AttributeSpec, TupleRecord, Value};
use crate::extract::{qualified, ExtractionCache};
use crate::index::{retrieve_segments, EvidenceSet, ThresholdState, TwoLevelIndex};
use crate::query::{AttrRef, Predicate};

pub const DEFAULT_SAMPLE_RATE: f64 = 0.05;
/// Selectivity assumed when no sampled document carried the attribute.
pub const UNINFORMED_SELECTIVITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub rate: f64,
    pub seed: u64,
    /// Chosen documents, in the order of the input set.
    pub sampled_ids: Vec<String>,
}

pub fn sample_size(n: usize, rate: f64) -> usize {
    if n == 0 {
        return 0;
    }
    ((rate * n as f64).round() as usize).clamp(1, n)
}

/// Uniform sample without replacement of `max(1, round(rate·n))` documents.
pub fn sample_documents(doc_ids: &[String], rate: f64, seed: u64) -> SamplePlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, doc_ids.len(), sample_size(doc_ids.len(), rate)).into_vec();
    picked.sort_unstable();
    SamplePlan {
        rate,
        seed,
        sampled_ids: picked.into_iter().map(|i| doc_ids[i].clone()).collect(),
    }
}

/// Splits sampled records into those carrying at least one of `attrs` and
/// those where every one of them is NULL. Returns doc ids of each part.
pub fn split_sample(records: &[TupleRecord], attrs: &[String]) -> (Vec<String>, Vec<String>) {
    let mut with = Vec::new();
    let mut without = Vec::new();
    for r in records {
        if attrs.iter().any(|a| !r.value(a).is_null()) {
            with.push(r.doc_id.clone());
        } else {
            without.push(r.doc_id.clone());
        }
    }
    (with, without)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    /// Printed form of the filter.
    pub predicate: String,
    pub selectivity: f64,
    /// Sampled documents with a non-NULL value for the attribute.
    pub support: usize,
    pub satisfied: usize,
    /// No usable samples; the selectivity is the uninformed default.
    pub fallback: bool,
}

/// Laplace-smoothed frequency `(s + 1) / (n + 2)`.
pub fn smoothed(satisfied: usize, support: usize) -> f64 {
    (satisfied as f64 + 1.0) / (support as f64 + 2.0)
}

fn stats_from_counts(predicate: String, satisfied: usize, support: usize) -> FilterStats {
    if support == 0 {
        return FilterStats {
            predicate,
            selectivity: UNINFORMED_SELECTIVITY,
            support: 0,
            satisfied: 0,
            fallback: true,
        };
    }
    FilterStats {
        predicate,
        selectivity: smoothed(satisfied, support).clamp(0.0, 1.0),
        support,
        satisfied,
        fallback: false,
    }
}

/// Smoothed selectivity over sampled records; NULL values are excluded from
/// both counts.
pub fn estimate_selectivity(pred: &Predicate, sample: &[TupleRecord]) -> FilterStats {
    let key = pred.attr.qualified();
    let values: Vec<&Value> = sample.iter().map(|r| r.value(&key)).filter(|v| !v.is_null()).collect();
    let satisfied = values.iter().filter(|v| pred.eval(v)).count();
    stats_from_counts(pred.to_string(), satisfied, values.len())
}

/// Selectivity of an IN filter over `values` on the other table's sample.
/// An empty value set yields the smoothing floor.
pub fn estimate_in_selectivity(values: &[Value], attr: &AttrRef, sample: &[TupleRecord]) -> FilterStats {
    let keys: BTreeSet<String> = values.iter().filter_map(|v| v.join_key(attr.dtype)).collect();
    let name = attr.qualified();
    let present: Vec<String> = sample
        .iter()
        .filter_map(|r| r.value(&name).join_key(attr.dtype))
        .collect();
    let satisfied = present.iter().filter(|k| keys.contains(*k)).count();
    let label = format!("{name} IN <{} values>", keys.len());
    if keys.is_empty() {
        return FilterStats {
            predicate: label,
            selectivity: smoothed(0, present.len()),
            support: present.len(),
            satisfied: 0,
            fallback: present.is_empty(),
        };
    }
    stats_from_counts(label, satisfied, present.len())
}

/// Per-attribute extraction cost of one document, in tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocCostVector {
    pub doc_id: String,
    /// Keyed by qualified attribute name.
    pub costs: BTreeMap<String, usize>,
}

impl DocCostVector {
    pub fn cost(&self, attr: &str) -> usize {
        self.costs.get(attr).copied().unwrap_or(0)
    }
}

/// Token sum of the segments retrieval would send for each attribute; zero
/// for attributes already in the cache. Makes no provider calls.
pub fn measure_costs(
    index: &TwoLevelIndex,
    doc_id: &str,
    attrs: &[AttributeSpec],
    evidence: &BTreeMap<String, EvidenceSet>,
    thresholds: &ThresholdState,
    cache: &ExtractionCache,
) -> DocCostVector {
    let costs = attrs
        .iter()
        .map(|a| {
            let key = qualified(a);
            let cost = if cache.contains(doc_id, &key) {
                0
            } else {
                evidence
                    .get(&key)
                    .map(|ev| retrieve_segments(index, doc_id, ev, thresholds.gamma_for(&key)).tokens)
                    .unwrap_or(0)
            };
            (key, cost)
        })
        .collect();
    DocCostVector {
        doc_id: doc_id.to_string(),
        costs,
    }
}

/// Plain-text dump of filter statistics and cost vectors for EXPLAIN.
pub fn stats_dump(filters: &[FilterStats], costs: &[DocCostVector]) -> String {
    let mut out = String::from("filters:\n");
    for f in filters {
        let _ = writeln!(
            out,
            "  {}  p={:.4} support={} satisfied={}{}",
            f.predicate,
            f.selectivity,
            f.support,
            f.satisfied,
            if f.fallback { " (default)" } else { "" }
        );
    }
    out.push_str("costs:\n");
    for c in costs {
        let cells: Vec<String> = c.costs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(out, "  {}  {}", c.doc_id, cells.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Dtype;
    use crate::query::{Bound, PredOp};
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("d{i:03}")).collect()
    }

    fn age() -> AttrRef {
        AttrRef {
            table: "P".into(),
            name: "age".into(),
            dtype: Dtype::Number,
        }
    }

    fn rec(id: usize, v: Value) -> TupleRecord {
        let mut r = TupleRecord::new(&format!("d{id}"));
        r.values.insert("P.age".into(), v);
        r
    }

    fn over(x: f64) -> Predicate {
        Predicate {
            attr: age(),
            op: PredOp::Ge(Bound::exclusive(Value::Number(x))),
            synthetic: false,
        }
    }

    #[test]
    fn sample_sizes() {
        assert_eq!(sample_documents(&ids(200), 0.05, 1).sampled_ids.len(), 10);
        assert_eq!(sample_documents(&ids(3), 0.05, 1).sampled_ids.len(), 1);
        assert_eq!(sample_documents(&ids(0), 0.05, 1).sampled_ids.len(), 0);
        assert_eq!(sample_documents(&ids(10), 1.0, 1).sampled_ids, ids(10));
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_documents(&ids(100), 0.2, 7);
        assert_eq!(a, sample_documents(&ids(100), 0.2, 7));
        assert_ne!(a.sampled_ids, sample_documents(&ids(100), 0.2, 8).sampled_ids);
    }

    #[test]
    fn split_counts_all_null_docs() {
        let mut recs: Vec<TupleRecord> = (0..10).map(|i| rec(i, Value::Number(30.0))).collect();
        let attrs = vec!["P.age".to_string()];
        assert!(split_sample(&recs, &attrs).1.is_empty());
        recs[4] = rec(4, Value::Null);
        let (m, n) = split_sample(&recs, &attrs);
        assert_eq!((m.len(), n), (9, vec!["d4".to_string()]));
    }

    #[test]
    fn smoothed_selectivity() {
        let mut recs: Vec<TupleRecord> = (0..10).map(|i| rec(i, Value::Number(20.0))).collect();
        let none = estimate_selectivity(&over(35.0), &recs);
        assert!((none.selectivity - 1.0 / 12.0).abs() < 1e-12);
        recs[0] = rec(0, Value::Number(40.0));
        let one = estimate_selectivity(&over(35.0), &recs);
        assert!((one.selectivity - 2.0 / 12.0).abs() < 1e-12);
        assert_eq!((one.support, one.satisfied, one.fallback), (10, 1, false));
        // NULLs leave the denominator.
        recs[1] = rec(1, Value::Null);
        assert!((estimate_selectivity(&over(35.0), &recs).selectivity - 2.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn all_null_attribute_defaults() {
        let recs: Vec<TupleRecord> = (0..5).map(|i| rec(i, Value::Null)).collect();
        let s = estimate_selectivity(&over(35.0), &recs);
        assert_eq!(s.selectivity, 0.5);
        assert!(s.fallback);
    }

    #[test]
    fn in_selectivity() {
        let team = AttrRef {
            table: "T".into(),
            name: "team".into(),
            dtype: Dtype::Categorical,
        };
        let recs: Vec<TupleRecord> = ["Lakers", "Bulls", "Heat", "Jazz", "Suns", "Nets", "Magic", "Kings", "Hawks", "Spurs"]
            .iter()
            .map(|t| {
                let mut r = TupleRecord::new(t);
                r.values.insert("T.team".into(), Value::Text(t.to_string()));
                r
            })
            .collect();
        let vals: Vec<Value> = ["lakers ", "Celtics", "Warriors"].iter().map(|s| Value::Text(s.to_string())).collect();
        let s = estimate_in_selectivity(&vals, &team, &recs);
        assert!((s.selectivity - 2.0 / 12.0).abs() < 1e-12);
        let empty = estimate_in_selectivity(&[], &team, &recs);
        assert!((empty.selectivity - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn dump_lists_filters_and_costs() {
        let f = estimate_selectivity(&over(35.0), &[rec(0, Value::Number(40.0))]);
        let c = DocCostVector {
            doc_id: "d0".into(),
            costs: BTreeMap::from([("P.age".to_string(), 30)]),
        };
        let text = stats_dump(&[f], &[c]);
        assert!(text.contains("p=0.6667"));
        assert!(text.contains("d0  P.age=30"));
    }

    proptest! {
        #[test]
        fn selectivity_strictly_inside_unit_interval(vals in proptest::collection::vec(proptest::option::of(0f64..100.0), 0..40), x in 0f64..100.0) {
            let recs: Vec<TupleRecord> = vals
                .iter()
                .enumerate()
                .map(|(i, v)| rec(i, v.map(Value::Number).unwrap_or(Value::Null)))
                .collect();
            let s = estimate_selectivity(&over(x), &recs);
            prop_assert!(s.selectivity > 0.0 && s.selectivity < 1.0);
        }

        #[test]
        fn sample_is_subset_without_repeats(n in 1usize..300, rate in 0.001f64..1.0, seed in any::<u64>()) {
            let all = ids(n);
            let s = sample_documents(&all, rate, seed);
            prop_assert_eq!(s.sampled_ids.len(), sample_size(n, rate));
            let set: BTreeSet<&String> = s.sampled_ids.iter().collect();
            prop_assert_eq!(set.len(), s.sampled_ids.len());
            prop_assert!(s.sampled_ids.iter().all(|id| all.contains(id)));
        }
    }
}
