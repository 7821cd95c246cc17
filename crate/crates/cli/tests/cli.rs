use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn quest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quest"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// Generates a small workload and indexes it; returns the config path.
fn indexed(dir: &Path, docs: usize) -> PathBuf {
    let out = dir.to_str().unwrap();
    let g = quest(&["gen", "--docs", &docs.to_string(), "--seed", "5", "--out", out]);
    assert_eq!(code(&g), 0, "{}", stderr(&g));
    let cfg = dir.join("quest.toml");
    let i = quest(&["index", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&i), 0, "{}", stderr(&i));
    cfg
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn index_prints_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = indexed(dir.path(), 40);
    let first = read_json(&dir.path().join("artifacts/manifest.json"));
    assert_eq!(first["documents"], 40);
    assert!(first["segments"].as_u64().unwrap() > 40);
    assert_eq!(first["digests"].as_object().unwrap().len(), 5);

    let again = quest(&["index", "--config", cfg.to_str().unwrap()]);
    let line = stdout(&again);
    assert_eq!(
        line.trim(),
        format!("documents: 40, segments: {}", first["segments"])
    );
    let second = read_json(&dir.path().join("artifacts/manifest.json"));
    assert_eq!(first["digests"], second["digests"]);
}

#[test]
fn corrupt_record_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&quest(&["gen", "--docs", "20", "--out", out])), 0);
    let corpus = dir.path().join("corpus.jsonl");
    let mut lines: Vec<String> = std::fs::read_to_string(&corpus).unwrap().lines().map(String::from).collect();
    lines[6] = "{\"id\": \"players_0006\", \"text\": ".into();
    std::fs::write(&corpus, lines.join("\n")).unwrap();
    let o = quest(&["index", "--config", dir.path().join("quest.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("corpus.jsonl:7:"), "{}", stderr(&o));
}

#[test]
fn infeasible_workloads_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w");
    let o = quest(&["gen", "--selectivity", "age=1.5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("1.5"));
    assert!(!out.exists());
    let o = quest(&["gen", "--docs", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn invalid_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "corpus = \"c.jsonl\"\nschema = \"s.json\"\nsample_rate = 0.0\nprovider = { kind = \"mock\", truth = \"t.jsonl\" }\n",
    )
    .unwrap();
    let o = quest(&["index", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sample_rate"));
}

#[test]
fn query_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = indexed(dir.path(), 40);
    let report = dir.path().join("r.json");
    let o = quest(&[
        "query",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
        "SELECT name FROM Players WHERE age >= 50 AND points < 50",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = read_json(&report);
    assert_eq!(r["strategy"], "quest");
    let tuples = r["tuples"].as_array().unwrap();
    assert_eq!(tuples.len() as u64, r["report"]["tuples"].as_u64().unwrap());
    assert!(r["report"]["provider_calls"].as_u64().unwrap() > 0);
    assert!(tuples.iter().all(|t| t["values"]["name"].is_string()));
}

#[test]
fn query_text_can_come_from_stdin() {
    use std::io::Write;
    let dir = tempfile::tempdir().unwrap();
    let cfg = indexed(dir.path(), 30);
    let mut child = Command::new(env!("CARGO_BIN_EXE_quest"))
        .args(["query", "--config", cfg.to_str().unwrap(), "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"SELECT name FROM Players WHERE titles >= 50")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["query"], "SELECT name FROM Players WHERE titles >= 50");
}

#[test]
fn strategies_agree_on_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = indexed(dir.path(), 40);
    let q = "SELECT name FROM Players WHERE (age >= 50 OR height < 50) AND salary >= 50";
    let mut seen = Vec::new();
    for s in ["quest", "selectivity", "avg-cost", "random", "exhaust"] {
        let o = quest(&["query", "--config", cfg.to_str().unwrap(), "--strategy", s, "--seed", "3", q]);
        assert_eq!(code(&o), 0, "{s}: {}", stderr(&o));
        let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
        let mut ids: Vec<String> = r["tuples"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t["doc_id"].as_str().unwrap().to_string())
            .collect();
        ids.sort();
        seen.push(ids);
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn explain_never_calls_the_provider() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = indexed(dir.path(), 30);
    // An unreachable endpoint: any provider call would fail the run.
    let http = dir.path().join("http.toml");
    std::fs::write(
        &http,
        "corpus = \"corpus.jsonl\"\nschema = \"schema.json\"\nprovider = { kind = \"http\", url = \"http://127.0.0.1:9/v1\", model = \"m\" }\n",
    )
    .unwrap();
    let q = "SELECT name FROM Players WHERE age >= 50 AND points < 50";
    let o = quest(&["query", "--config", http.to_str().unwrap(), "--explain", q]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(r["provider_calls"], 0);
    assert_eq!(r["explain"]["plans"].as_array().unwrap().len(), 30);
    assert!(stderr(&o).contains("plans:"));
    let _ = cfg;
}

#[test]
fn budget_exhaustion_exits_with_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = indexed(dir.path(), 40);
    let report = dir.path().join("r.json");
    let o = quest(&[
        "query",
        "--config",
        cfg.to_str().unwrap(),
        "--budget",
        "2000",
        "--out",
        report.to_str().unwrap(),
        "SELECT name FROM Players WHERE age >= 50",
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert_eq!(read_json(&report)["report"]["partial"], true);
}

#[test]
fn exhaustive_strategy_refuses_large_queries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = indexed(dir.path(), 20);
    let q = "SELECT name FROM Players WHERE age >= 50 AND points < 50 AND height >= 50 AND weight >= 50 \
             AND salary >= 50 AND titles >= 50 AND all_stars >= 50 AND draft_year >= 50 AND age < 90";
    let o = quest(&["query", "--config", cfg.to_str().unwrap(), "--strategy", "exhaust", q]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("limited to 8 filters"), "{}", stderr(&o));
}

#[test]
fn unknown_attribute_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = indexed(dir.path(), 20);
    let o = quest(&["query", "--config", cfg.to_str().unwrap(), "SELECT name FROM Players WHERE shoe >= 3"]);
    assert_eq!(code(&o), 2);
}

/// Runs `args` inside a fresh network namespace, if the host allows one.
fn offline(args: &[&str]) -> Option<Output> {
    let probe = Command::new("unshare").args(["-n", "true"]).output().ok()?;
    if !probe.status.success() {
        return None;
    }
    let mut full = vec!["-n", env!("CARGO_BIN_EXE_quest")];
    full.extend_from_slice(args);
    Some(Command::new("unshare").args(&full).output().unwrap())
}

#[test]
fn mock_runs_need_no_network() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = indexed(dir.path(), 30);
    let q = "SELECT name FROM Players WHERE age >= 50";
    let Some(o) = offline(&["query", "--config", cfg.to_str().unwrap(), q]) else {
        eprintln!("network namespaces unavailable; skipping");
        return;
    };
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // Control: the same run against an http provider fails without network.
    let http = dir.path().join("http.toml");
    std::fs::write(
        &http,
        "corpus = \"corpus.jsonl\"\nschema = \"schema.json\"\nprovider = { kind = \"http\", url = \"http://127.0.0.1:9/v1\", model = \"m\" }\n",
    )
    .unwrap();
    let o = offline(&["query", "--config", http.to_str().unwrap(), q]).unwrap();
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

fn bench_config(dir: &Path, workload: &str) -> PathBuf {
    let cfg = dir.join("bench.toml");
    std::fs::write(
        &cfg,
        format!(
            "corpus = \"unused\"\nschema = \"unused\"\nprovider = {{ kind = \"mock\", truth = \"unused\" }}\nseed = 2\n[workload]\n{workload}\n"
        ),
    )
    .unwrap();
    cfg
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn bench_csv_is_stable_and_ranked() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench_config(dir.path(), "docs = 60\nqueries_per_group = 10");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = quest(&[
            "bench",
            "--config",
            cfg.to_str().unwrap(),
            "--random-seeds",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("mean_tokens"));
        std::fs::read_to_string(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    let rows = csv_rows(&a);
    assert_eq!(rows[0].join(","), "group,strategy,mean_tokens,mean_calls,mean_wall_ms,f1");
    let tokens = |g: &str, s: &str| -> f64 {
        rows.iter().find(|r| r[0] == g && r[1] == s).unwrap()[2].parse().unwrap()
    };
    for g in ["C1", "C2", "C3"] {
        assert_eq!(tokens(g, "quest"), tokens(g, "exhaust"), "{g}");
    }
    for g in ["C2", "C3"] {
        let order = ["quest", "avg-cost", "selectivity", "random"].map(|s| tokens(g, s));
        assert!(order.windows(2).all(|w| w[0] <= w[1]), "{g}: {order:?}");
    }
    // The many-filter group costs more, and its extra cost is smallest for quest.
    let growth = |s: &str| tokens("C3", s) - tokens("C1", s);
    for s in ["quest", "selectivity", "avg-cost", "random"] {
        assert!(growth(s) > 0.0, "{s}");
    }
    for s in ["selectivity", "avg-cost", "random"] {
        assert!(growth("quest") <= growth(s), "{s}");
    }
    assert!(rows[1..].iter().all(|r| r[5] == "1.0"));
}

#[test]
fn bench_buckets_compare_join_modes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bench_config(dir.path(), "docs = 120\nteams = 30");
    let o = quest(&["bench", "--config", cfg.to_str().unwrap(), "--buckets", "--random-seeds", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let csv = &text[text.find("group,strategy").unwrap()..];
    let rows = csv_rows(csv);
    for g in ["E1", "E2", "E3"] {
        let t = |s: &str| -> f64 { rows.iter().find(|r| r[0] == g && r[1] == s).unwrap()[2].parse().unwrap() };
        assert!(t("quest") <= t("pushdown"), "{g}: {csv}");
    }
}
