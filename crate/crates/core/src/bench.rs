//! Benchmark harness: runs query groups under every ordering strategy with a
//! fresh extraction session per run and aggregates cost and accuracy.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::catalog::Value;
use crate::exec::{execute_query, score_results, Engine, ExecError, ExecOptions, JoinMode, Strategy, EXHAUSTIVE_MAX_FILTERS};
use crate::extract::Extractor;
use crate::query::leaves;
use crate::workload::{truth_results, QueryCase};

/// Label of the pushdown baseline in join groups.
pub const PUSHDOWN: &str = "pushdown";
/// Label of the extract-everything baseline.
pub const EAGER: &str = "eager";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub strategies: Vec<Strategy>,
    /// Seeds averaged for the random strategy.
    pub random_seeds: usize,
    pub seed: u64,
    pub sample_rate: f64,
    /// Record wall time; off keeps the report byte-identical across runs.
    pub timing: bool,
    /// Also run the eager baseline.
    pub eager: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            random_seeds: 30,
            seed: 0,
            sample_rate: crate::stats::DEFAULT_SAMPLE_RATE,
            timing: true,
            eager: false,
        }
    }
}

/// One query under one strategy (averaged over seeds for random).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRun {
    pub group: String,
    pub query: String,
    pub strategy: String,
    pub tokens: f64,
    pub calls: f64,
    pub wall_ms: f64,
    pub f1: f64,
}

/// Per-group means; the CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub group: String,
    pub strategy: String,
    pub mean_tokens: f64,
    pub mean_calls: f64,
    pub mean_wall_ms: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub runs: Vec<QueryRun>,
    pub rows: Vec<BenchRow>,
}

/// Runs every case under every applicable strategy. Join cases also run the
/// pushdown baseline. `make_extractor` must return a fresh session.
pub fn run_bench(
    engine: Engine<'_>,
    truth: &HashMap<(String, String), Value>,
    cases: &[QueryCase],
    make_extractor: &dyn Fn() -> Extractor,
    opts: &BenchOptions,
) -> Result<BenchReport, ExecError> {
    let mut runs = Vec::new();
    for case in cases {
        let q = crate::query::parse_query(&case.query, engine.catalog)?;
        let expected = truth_results(truth, engine.catalog, &q);
        let n_filters = q.where_clause.as_ref().map(|w| leaves(w).len()).unwrap_or(0);
        let mut variants: Vec<(String, ExecOptions)> = Vec::new();
        let base = ExecOptions {
            seed: opts.seed,
            sample_rate: opts.sample_rate,
            ..Default::default()
        };
        for &s in &opts.strategies {
            if s == Strategy::Exhaust && n_filters > EXHAUSTIVE_MAX_FILTERS {
                continue;
            }
            variants.push((
                s.name().into(),
                ExecOptions {
                    strategy: s,
                    ..base.clone()
                },
            ));
        }
        if q.is_join() {
            variants.push((
                PUSHDOWN.into(),
                ExecOptions {
                    join_mode: JoinMode::Pushdown,
                    ..base.clone()
                },
            ));
        }
        if opts.eager {
            variants.push((
                EAGER.into(),
                ExecOptions {
                    eager: true,
                    ..base.clone()
                },
            ));
        }
        for (label, o) in variants {
            // Random runs vary only the ordering seed; the sample stays fixed.
            let seeds: Vec<u64> = if o.strategy == Strategy::Random && label != EAGER && label != PUSHDOWN {
                (0..opts.random_seeds.max(1) as u64).map(|i| opts.seed + i).collect()
            } else {
                vec![opts.seed]
            };
            let (mut tokens, mut calls, mut wall, mut f1) = (0.0, 0.0, 0.0, 0.0);
            for &seed in &seeds {
                let ex = make_extractor();
                let r = execute_query(engine, &ex, &q, &ExecOptions { order_seed: seed, ..o.clone() })?;
                tokens += r.report.tokens() as f64;
                calls += r.report.provider_calls as f64;
                if opts.timing {
                    wall += r.report.wall_ms as f64;
                }
                f1 += score_results(&r.tuples, &expected).f1;
            }
            let n = seeds.len() as f64;
            runs.push(QueryRun {
                group: case.group.clone(),
                query: case.query.clone(),
                strategy: label,
                tokens: tokens / n,
                calls: calls / n,
                wall_ms: wall / n,
                f1: f1 / n,
            });
        }
    }
    let rows = aggregate(&runs);
    Ok(BenchReport { runs, rows })
}

/// Means per (group, strategy), groups and strategies in first-seen order.
pub fn aggregate(runs: &[QueryRun]) -> Vec<BenchRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in runs {
        let k = (r.group.clone(), r.strategy.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(group, strategy)| {
            let rs: Vec<&QueryRun> = runs.iter().filter(|r| r.group == group && r.strategy == strategy).collect();
            let n = rs.len() as f64;
            let mean = |f: fn(&QueryRun) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            BenchRow {
                mean_tokens: mean(|r| r.tokens),
                mean_calls: mean(|r| r.calls),
                mean_wall_ms: mean(|r| r.wall_ms),
                f1: mean(|r| r.f1),
                group,
                strategy,
            }
        })
        .collect()
}

impl BenchReport {
    pub fn row(&self, group: &str, strategy: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.group == group && r.strategy == strategy)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<6} {:<12} {:>12} {:>10} {:>12} {:>6}\n",
            "group", "strategy", "mean_tokens", "mean_calls", "mean_wall_ms", "f1"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<6} {:<12} {:>12.1} {:>10.1} {:>12.1} {:>6.3}",
                r.group, r.strategy, r.mean_tokens, r.mean_calls, r.mean_wall_ms, r.f1
            );
        }
        s
    }
}
