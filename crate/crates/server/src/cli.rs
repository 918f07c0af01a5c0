//! The `simsearch` command line.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use simsearch::global::CoresetMethod;
use simsearch::multibody::{Constraint, MultiQuery, SceneFile};
use simsearch::planner::{parse_filter, parse_udf_flag, UdfCache, UdfRegistry};
use simsearch::vset::{load_store, load_store_dir, save_store_dir, STORE_VSET};
use simsearch::{Embedding, Metric};

use crate::bench::{self, BenchReport, LogKind};
use crate::engine::{execute, QueryInput, SearchContext, SearchMode, SearchRequest};
use crate::http::{router, AppState};

#[derive(Debug, Parser)]
#[command(
    name = "simsearch",
    version,
    about = "Vector similarity search: local, global, multi-body, feedback"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
pub enum Command {
    /// Copy a vector file and its sidecar into a store directory.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long)]
        store: PathBuf,
    },
    /// Search a store directory and print the response as JSON.
    Search(SearchArgs),
    /// Serve the HTTP API.
    Serve {
        /// Ignored when BIND_ADDR is set.
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Every subdirectory holding a store is served under its name.
        #[arg(long)]
        store_root: Option<PathBuf>,
    },
    /// Run a seeded experiment and write results.json.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, value_enum)]
    pub mode: SearchMode,
    #[arg(long)]
    pub k: usize,
    /// A JSON vector (or multi-object query), inline or as a file path.
    #[arg(long)]
    pub query: Option<String>,
    /// Use a stored item as the query.
    #[arg(long)]
    pub query_id: Option<u64>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub reg_c: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train the global separator on a coreset of this many negatives.
    #[arg(long)]
    pub coreset: Option<usize>,
    #[arg(long, value_enum)]
    pub coreset_method: Option<CoresetArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scene file for multi-body search; defaults to the store's own metadata.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// JSON list of constraints.
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    #[arg(long)]
    pub k0: Option<usize>,
    /// Metadata filter such as `class=car and 0.5<=conf<=1`.
    #[arg(long)]
    pub filter: Option<String>,
    /// UDF predicate `name[:cost[:selectivity]]`; repeatable.
    #[arg(long)]
    pub udf: Vec<String>,
    /// Force a post-filter plan with this over-fetch factor.
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CoresetArg {
    Uniform,
    KCenterGreedy,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BenchKind {
    Subseq,
    Clusters,
    Multibody,
    Planner,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub kind: BenchKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "results.json")]
    pub out: PathBuf,
    /// Number of consecutive seeds; each bench has its own default.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_enum, default_value = "separated")]
    pub log: LogKind,
    #[arg(long, default_value_t = 3)]
    pub tasks: usize,
    #[arg(long, default_value_t = 24)]
    pub instances: usize,
}

/// A failure and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn input_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn runtime_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| runtime_error(e.to_string()))?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
            Err(runtime_error(format!("cannot write output: {e}")))
        }
        _ => Ok(()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| input_error(format!("bad {what} {}: {e}", path.display())))
}

/// Inline JSON or a path to a JSON file.
fn parse_query(arg: &str) -> Result<QueryInput, Failure> {
    let trimmed = arg.trim_start();
    if trimmed.starts_with('[') || trimmed.starts_with('{') {
        serde_json::from_str(arg).map_err(|e| input_error(format!("bad --query: {e}")))
    } else {
        read_json(Path::new(arg), "query file")
    }
}

fn open_store(dir: &Path) -> Result<simsearch::VectorStore, Failure> {
    if !dir.join(STORE_VSET).is_file() {
        return Err(input_error(format!(
            "no store at {} (expected {STORE_VSET} inside)",
            dir.display()
        )));
    }
    load_store_dir(dir)
        .map_err(|e| input_error(format!("cannot load store {}: {e}", dir.display())))
}

pub fn build_request(args: &SearchArgs) -> Result<SearchRequest, Failure> {
    let mut req = SearchRequest::new(args.mode, args.k);
    req.query = args.query.as_deref().map(parse_query).transpose()?;
    req.query_id = args.query_id;
    req.metric = args.metric;
    req.lambda = args.lambda;
    req.batch = args.batch;
    req.reg_c = args.reg_c;
    req.epochs = args.epochs;
    req.coreset_size = args.coreset;
    req.coreset_method = args.coreset_method.map(|m| match m {
        CoresetArg::Uniform => CoresetMethod::Uniform,
        CoresetArg::KCenterGreedy => CoresetMethod::KCenterGreedy,
    });
    req.seed = args.seed;
    req.k0 = args.k0;
    req.alpha = args.alpha;
    if let Some(p) = &args.scenes {
        req.scenes = Some(read_json::<SceneFile>(p, "scene file")?);
    }
    if let Some(p) = &args.constraints {
        req.constraints = read_json::<Vec<Constraint>>(p, "constraint file")?;
    }
    if let Some(expr) = &args.filter {
        req.filters = parse_filter(expr).map_err(|e| input_error(e.to_string()))?;
    }
    for flag in &args.udf {
        req.filters
            .push(parse_udf_flag(flag).map_err(|e| input_error(e.to_string()))?);
    }
    Ok(req)
}

fn search(args: &SearchArgs) -> Result<(), Failure> {
    let store = open_store(&args.store)?;
    let req = build_request(args)?;
    let registry = UdfRegistry::new();
    let cache = UdfCache::new(store.version());
    let ctx = SearchContext {
        store: &store,
        registry: &registry,
        cache: &cache,
    };
    let res = execute(&ctx, &req).map_err(|e| input_error(e.to_string()))?;
    print_json(&res)
}

fn ingest(input: &Path, meta: Option<&Path>, dir: &Path) -> Result<(), Failure> {
    let store = load_store(input, meta)
        .map_err(|e| input_error(format!("cannot read {}: {e}", input.display())))?;
    save_store_dir(&store, dir)
        .map_err(|e| runtime_error(format!("cannot write {}: {e}", dir.display())))?;
    print_json(&serde_json::json!({ "store": dir, "count": store.len(), "dim": store.dim() }))
}

/// `BIND_ADDR` (e.g. `0.0.0.0:9000`) wins over `--host`/`--port`.
pub fn bind_addr(host: &str, port: u16) -> Result<SocketAddr, Failure> {
    let text = std::env::var("BIND_ADDR").unwrap_or_else(|_| format!("{host}:{port}"));
    text.parse()
        .map_err(|e| input_error(format!("bad bind address {text:?}: {e}")))
}

fn serve(host: &str, port: u16, root: Option<PathBuf>) -> Result<(), Failure> {
    let addr = bind_addr(host, port)?;
    let state = AppState::new(root);
    let loaded = state
        .load_root()
        .map_err(|e| input_error(format!("cannot read store root: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| runtime_error(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| runtime_error(format!("cannot bind {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| runtime_error(e.to_string()))?;
        eprintln!(
            "listening on http://{local} ({} datasets: {})",
            loaded.len(),
            loaded.join(", ")
        );
        axum::serve(listener, router(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| runtime_error(e.to_string()))
    })
}

pub fn run_bench(args: &BenchArgs) -> BenchReport {
    match args.kind {
        BenchKind::Clusters => bench::clusters(args.seed, args.runs.unwrap_or(100)),
        BenchKind::Subseq => {
            let default_runs = match args.log {
                LogKind::Separated => 1,
                LogKind::Skewed => 100,
            };
            bench::subseq(
                args.seed,
                args.runs.unwrap_or(default_runs),
                args.log,
                args.tasks,
                args.instances,
            )
        }
        BenchKind::Multibody => bench::multibody(args.seed, args.runs.unwrap_or(200)),
        BenchKind::Planner => bench::planner(args.seed, args.runs.unwrap_or(200)),
    }
}

fn bench(args: &BenchArgs) -> Result<(), Failure> {
    let report = run_bench(args);
    let text = serde_json::to_string_pretty(&report).map_err(|e| runtime_error(e.to_string()))?;
    std::fs::write(&args.out, text)
        .map_err(|e| runtime_error(format!("cannot write {}: {e}", args.out.display())))?;
    print_json(
        &serde_json::json!({ "bench": report.bench, "out": args.out, "summary": report.summary }),
    )
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match &cli.command {
        Command::Ingest { input, meta, store } => ingest(input, meta.as_deref(), store),
        Command::Search(args) => search(args),
        Command::Serve {
            port,
            host,
            store_root,
        } => serve(host, *port, store_root.clone()),
        Command::Bench(args) => bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Parses an embedding from a JSON array; used by examples and tests.
pub fn embedding(json: &str) -> Result<Embedding, Failure> {
    serde_json::from_str(json).map_err(|e| input_error(e.to_string()))
}

impl From<MultiQuery> for QueryInput {
    fn from(q: MultiQuery) -> Self {
        QueryInput::Multi(q)
    }
}
