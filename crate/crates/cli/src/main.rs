//! `quest` command-line driver: generate workloads, build indexes, run and
//! explain queries, and benchmark ordering strategies.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sha2::{Digest, Sha256};

use quest::bench::{run_bench, BenchOptions, BenchReport};
use quest::catalog::{load_corpus, Catalog, CatalogError, Corpus};
use quest::config::{Config, ConfigError, Preset, ProviderConfig, WorkloadConfig};
use quest::exec::{explain_query, execute_query, Engine, ExecError, JoinMode, Strategy};
use quest::extract::{default_tokenizer, Billing, Extractor, MockProvider};
use quest::index::{build_indexes, HashedEmbedder, IndexError, TwoLevelIndex, DEFAULT_MERGE_THRESHOLD};
use quest::query::parse_query;
use quest::workload::{QueryCase, Workload, WorkloadSpec};

const MANIFEST: &str = "manifest.json";
const CORPUS_FILE: &str = "corpus.jsonl";
const SCHEMA_FILE: &str = "schema.json";
const INDEX_DIR: &str = "index";

/// Join-probe selectivity of each benchmark bucket.
const BUCKETS: [(&str, f64); 3] = [("E1", 0.15), ("E2", 0.45), ("E3", 0.8)];

#[derive(Parser)]
#[command(name = "quest", version, about = "Cost-aware queries over unstructured documents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus, ground truth, schema and queries.
    Gen(GenArgs),
    /// Build the catalog and both index levels and persist them.
    Index(IndexArgs),
    /// Run or explain one query.
    Query(QueryArgs),
    /// Compare ordering strategies on a generated workload.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Workload settings are read from the config's `[workload]` table.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Planted selectivity override, `attribute=p`; repeatable.
    #[arg(long = "selectivity", value_name = "ATTR=P")]
    selectivity: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    config: PathBuf,
    /// Also write the summary as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "quest")]
    strategy: Strategy,
    /// Print plans without calling the provider.
    #[arg(long)]
    explain: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Token ceiling for the session.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, value_enum, default_value = "adaptive")]
    join_mode: JoinModeArg,
    /// Fixed table order for joins, comma separated.
    #[arg(long, value_delimiter = ',')]
    join_order: Vec<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Query text; `-` reads standard input.
    query: String,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run the two-table workload at three join-probe selectivities instead.
    #[arg(long)]
    buckets: bool,
    #[arg(long, default_value_t = 30)]
    random_seeds: usize,
    /// Record wall time (the CSV then differs between runs).
    #[arg(long)]
    timing: bool,
    /// Also run the extract-everything baseline.
    #[arg(long)]
    eager: bool,
    /// Write the CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Players,
    PlayersTeams,
    League,
}

#[derive(Clone, Copy, ValueEnum)]
enum JoinModeArg {
    Adaptive,
    Pushdown,
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn validation(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: error.into() }
    }

    fn provider(error: impl Into<anyhow::Error>) -> Self {
        Failure { code: 3, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure { code: 1, error: e.into() },
            _ => Failure::validation(e),
        }
    }
}

impl From<ExecError> for Failure {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::Index(IndexError::Embedding(_)) => Failure::provider(e),
            ExecError::Index(_) | ExecError::Catalog(_) => Failure { code: 1, error: e.into() },
            _ => Failure::validation(e),
        }
    }
}

/// Malformed input is a validation failure; unreadable files are not.
fn catalog_failure(context: &str, e: CatalogError) -> Failure {
    let code = if matches!(e, CatalogError::Io { .. }) { 1 } else { 2 };
    Failure {
        code,
        error: anyhow::Error::from(e).context(context.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Index(a) => cmd_index(a),
        Command::Query(a) => cmd_query(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_gen(a: GenArgs) -> Result<u8, Failure> {
    let (mut workload, base_seed) = match &a.config {
        Some(p) => {
            let cfg = Config::load(p)?;
            (cfg.workload, cfg.seed)
        }
        None => (WorkloadConfig::default(), 0),
    };
    if let Some(p) = a.preset {
        workload.preset = match p {
            PresetArg::Players => Preset::Players,
            PresetArg::PlayersTeams => Preset::PlayersTeams,
            PresetArg::League => Preset::League,
        };
    }
    if a.docs.is_some() {
        workload.docs = a.docs;
    }
    for item in &a.selectivity {
        let (name, p) = item
            .split_once('=')
            .ok_or_else(|| Failure::validation(anyhow!("expected ATTR=P, got `{item}`")))?;
        let p: f64 = p
            .parse()
            .map_err(|_| Failure::validation(anyhow!("selectivity of `{name}` is not a number: `{p}`")))?;
        workload.selectivity.insert(name.to_string(), p);
    }
    let spec = workload.spec(a.seed.unwrap_or(base_seed))?;
    let wl = Workload::generate(&spec).map_err(Failure::validation)?;
    wl.write(&a.out).context("writing workload")?;
    write_default_config(&a.out).context("writing config")?;
    println!(
        "documents: {}, truth records: {}, queries: {}",
        wl.documents.len(),
        wl.truth.len(),
        wl.queries.len()
    );
    Ok(0)
}

/// A config next to generated files so `index`/`query` work out of the box.
fn write_default_config(dir: &Path) -> std::io::Result<()> {
    let text = "\
corpus = \"corpus.jsonl\"
schema = \"schema.json\"
artifacts = \"artifacts\"
provider = { kind = \"mock\", truth = \"truth.jsonl\" }
";
    std::fs::write(dir.join("quest.toml"), text)
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

fn cmd_index(a: IndexArgs) -> Result<u8, Failure> {
    let cfg = Config::load(&a.config)?;
    let corpus = load_corpus(&cfg.corpus).map_err(|e| catalog_failure("loading corpus", e))?;
    let specs = Catalog::read_schema(&cfg.schema).map_err(|e| catalog_failure("reading schema", e))?;
    let mut catalog = Catalog::new(corpus);
    for s in specs {
        catalog.register_table(s).map_err(Failure::validation)?;
    }
    let embedder = cfg.embedder.build();
    let tokenizer = default_tokenizer();
    let index = build_indexes(
        catalog.corpus().context("corpus")?,
        embedder.as_ref(),
        tokenizer.as_ref(),
        DEFAULT_MERGE_THRESHOLD,
    )
    .map_err(|e| match e {
        IndexError::Embedding(_) => Failure::provider(e),
        other => Failure::from(anyhow::Error::from(other)),
    })?;

    let dir = &cfg.artifacts;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    catalog.corpus().context("corpus")?.save(&dir.join(CORPUS_FILE)).context("saving corpus")?;
    catalog.save_schema(&dir.join(SCHEMA_FILE)).context("saving schema")?;
    index.save(&dir.join(INDEX_DIR)).context("saving index")?;

    let mut files: Vec<PathBuf> = vec![PathBuf::from(CORPUS_FILE), PathBuf::from(SCHEMA_FILE)];
    let mut index_files: Vec<PathBuf> = std::fs::read_dir(dir.join(INDEX_DIR))
        .context("listing index")?
        .filter_map(|e| e.ok())
        .map(|e| Path::new(INDEX_DIR).join(e.file_name()))
        .collect();
    index_files.sort();
    files.extend(index_files);
    let mut digests = BTreeMap::new();
    for f in &files {
        digests.insert(f.to_string_lossy().replace('\\', "/"), sha256_file(&dir.join(f))?);
    }
    let documents = catalog.corpus().context("corpus")?.len();
    let segments = index.segments.len();
    let manifest = json!({
        "documents": documents,
        "segments": segments,
        "embedder": embedder.id(),
        "tables": catalog.tables().map(|t| json!({"name": t.spec.name, "documents": t.doc_ids.len()})).collect::<Vec<_>>(),
        "digests": digests,
    });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(dir.join(MANIFEST), &text).context("writing manifest")?;
    if let Some(out) = &a.out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("documents: {documents}, segments: {segments}");
    Ok(0)
}

fn load_artifacts(cfg: &Config) -> Result<(Catalog, TwoLevelIndex), Failure> {
    let dir = &cfg.artifacts;
    if !dir.join(MANIFEST).exists() {
        return Err(Failure::validation(anyhow!(
            "no index at {}; run `quest index` first",
            dir.display()
        )));
    }
    let corpus = Corpus::load_persisted(&dir.join(CORPUS_FILE)).context("loading persisted corpus")?;
    let mut catalog = Catalog::new(corpus);
    for s in Catalog::read_schema(&dir.join(SCHEMA_FILE)).context("reading persisted schema")? {
        catalog.register_table(s).context("registering table")?;
    }
    let index = TwoLevelIndex::load(&dir.join(INDEX_DIR)).context("loading index")?;
    Ok((catalog, index))
}

fn read_query_text(q: &str) -> anyhow::Result<String> {
    if q == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).context("reading query from stdin")?;
        Ok(s)
    } else {
        Ok(q.to_string())
    }
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn cmd_query(a: QueryArgs) -> Result<u8, Failure> {
    let cfg = Config::load(&a.config)?;
    let (catalog, index) = load_artifacts(&cfg)?;
    let embedder = cfg.embedder.build();
    if embedder.id() != index.documents.embedder_id() {
        return Err(Failure::validation(anyhow!(
            "index was built with embedder `{}` but the config selects `{}`; re-run `quest index`",
            index.documents.embedder_id(),
            embedder.id()
        )));
    }
    let text = read_query_text(&a.query)?;
    let q = parse_query(&text, &catalog).map_err(Failure::validation)?;
    let mut opts = cfg.exec_options();
    opts.strategy = a.strategy;
    if let Some(s) = a.seed {
        opts.seed = s;
        opts.order_seed = s;
    }
    if a.budget.is_some() {
        opts.budget = a.budget;
    }
    opts.join_mode = if !a.join_order.is_empty() {
        JoinMode::Forced(a.join_order.clone())
    } else {
        match a.join_mode {
            JoinModeArg::Adaptive => JoinMode::Adaptive,
            JoinModeArg::Pushdown => JoinMode::Pushdown,
        }
    };
    let engine = Engine {
        catalog: &catalog,
        index: &index,
        embedder: embedder.as_ref(),
    };

    if a.explain {
        let plan = explain_query(engine, &q, &opts)?;
        eprint!("{}", plan.text);
        let report = json!({ "query": text.trim(), "explain": plan, "provider_calls": 0 });
        emit(a.out.as_deref(), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
        return Ok(0);
    }

    let tokenizer = default_tokenizer();
    let provider = cfg.provider.build(tokenizer.clone())?;
    let extractor = Extractor::new(provider, tokenizer);
    let result = execute_query(engine, &extractor, &q, &opts)?;
    for w in &result.report.warnings {
        eprintln!("warning: {w}");
    }
    let report = json!({
        "query": text.trim(),
        "strategy": a.strategy.name(),
        "tuples": result.tuples,
        "report": result.report,
    });
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    if !result.report.failed_docs.is_empty() {
        eprintln!(
            "error: extraction failed for {} document(s): {}",
            result.report.failed_docs.len(),
            result.report.failed_docs.join(", ")
        );
        return Ok(3);
    }
    if result.report.partial {
        eprintln!("error: token budget exceeded; results are partial");
        return Ok(4);
    }
    Ok(0)
}

/// Runs the benchmark over one generated workload.
fn bench_workload(
    spec: &WorkloadSpec,
    cfg: Option<&Config>,
    relabel: Option<&str>,
    opts: &BenchOptions,
) -> Result<BenchReport, Failure> {
    let wl = Workload::generate(spec).map_err(Failure::validation)?;
    let embedder: Box<dyn quest::index::Embedder> = cfg.map(|c| c.embedder.build()).unwrap_or_else(|| Box::new(HashedEmbedder::default()));
    let (catalog, index) = wl.materialize(embedder.as_ref()).context("building indexes")?;
    let engine = Engine {
        catalog: &catalog,
        index: &index,
        embedder: embedder.as_ref(),
    };
    let tokenizer = default_tokenizer();
    // Generated workloads carry their own truth; an http provider is used as-is.
    let http = match cfg.map(|c| &c.provider) {
        Some(p @ ProviderConfig::Http { .. }) => Some(p.build(tokenizer.clone())?),
        _ => None,
    };
    let make = || {
        let provider = http
            .clone()
            .unwrap_or_else(|| Arc::new(MockProvider::new(wl.truth.clone(), Billing::Segments, tokenizer.clone())));
        Extractor::new(provider, tokenizer.clone())
    };
    let cases: Vec<QueryCase> = match relabel {
        Some(label) => wl
            .queries_in("J")
            .into_iter()
            .map(|c| QueryCase {
                group: label.to_string(),
                query: c.query.clone(),
            })
            .collect(),
        None => wl.queries.clone(),
    };
    Ok(run_bench(engine, &wl.truth_map(), &cases, &make, opts)?)
}

fn cmd_bench(a: BenchArgs) -> Result<u8, Failure> {
    let cfg = a.config.as_deref().map(Config::load).transpose()?;
    let seed = a.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let mut opts = BenchOptions {
        random_seeds: a.random_seeds,
        seed,
        timing: a.timing,
        eager: a.eager,
        ..Default::default()
    };
    if let Some(c) = &cfg {
        opts.sample_rate = c.sample_rate;
    }
    let workload = cfg.as_ref().map(|c| c.workload.clone()).unwrap_or_default();
    let report = if a.buckets {
        let mut all = BenchReport::default();
        for (label, p) in BUCKETS {
            let w = WorkloadConfig {
                preset: Preset::PlayersTeams,
                in_selectivity: Some(p),
                ..workload.clone()
            };
            let r = bench_workload(&w.spec(seed)?, cfg.as_ref(), Some(label), &opts)?;
            all.runs.extend(r.runs);
        }
        all.rows = quest::bench::aggregate(&all.runs);
        all
    } else {
        bench_workload(&workload.spec(seed)?, cfg.as_ref(), None, &opts)?
    };
    print!("{}", report.table());
    match &a.out {
        Some(p) => {
            let f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
            report.write_csv(f).context("writing CSV")?;
        }
        None => print!("\n{}", report.to_csv()),
    }
    Ok(0)
}
