use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use prime_core::bench::{hub_pairs, ladder_cases, run_ablation, run_bench, Algorithm, BenchSettings, Engines};
use prime_core::io::{canonical, index_from_json, index_to_json, solution_to_json};
use prime_core::preprocess::resolve_hubs;
use prime_core::{
    generate_synthetic, load_snapshot, save_snapshot, verify_solution, Amount, HubConfig, HubMetric, RouteError,
    RouteQuery, Router, ShortcutConfig, Snapshot, SwapGraph, SynthParams,
};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "prime", version, about = "Pool-disjoint multi-path DEX routing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Route one query and print the result as JSON.
    Route(RouteArgs),
    /// Benchmark algorithms over an amount ladder, or sweep (alpha, beta).
    Bench(BenchArgs),
    /// Write a synthetic snapshot.
    Generate(GenerateArgs),
}

#[derive(Args, Clone)]
struct QueryOpts {
    /// Maximum hops per path.
    #[arg(long, default_value_t = 3)]
    max_hops: usize,
    /// Hub count (top tokens by pool degree) or a comma-separated token list.
    #[arg(long, default_value = "50")]
    hubs: String,
    /// Armijo sufficient-increase fraction.
    #[arg(long)]
    alpha: Option<f64>,
    /// Backtracking decay factor.
    #[arg(long)]
    beta: Option<f64>,
    /// Search the core graph without shortcut legs.
    #[arg(long)]
    no_shortcuts: bool,
}

#[derive(Args)]
struct RouteArgs {
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long = "from")]
    source: String,
    #[arg(long = "to")]
    target: String,
    /// Input in raw token units (decimal integer).
    #[arg(long)]
    amount: String,
    #[arg(long, default_value = "prime")]
    algo: String,
    /// Write the allocator convergence trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Shortcut-index cache; reused when its snapshot hash matches.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Include the replay audit in the output.
    #[arg(long)]
    audit: bool,
    #[command(flatten)]
    opts: QueryOpts,
}

#[derive(Args)]
struct BenchArgs {
    /// Snapshot files; repeat for several.
    #[arg(long, required = true)]
    snapshot: Vec<PathBuf>,
    /// Query pairs as `source:target`, comma-separated. Defaults to
    /// consecutive hub pairs.
    #[arg(long)]
    pairs: Option<String>,
    /// Number of default hub pairs per snapshot.
    #[arg(long, default_value_t = 3)]
    n_pairs: usize,
    /// Amount ladder in whole source-token units.
    #[arg(long, default_value = "1,10,100,1000", value_delimiter = ',')]
    amounts: Vec<u64>,
    #[arg(long, default_value = "prime,osp", value_delimiter = ',')]
    algos: Vec<String>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sweep (alpha, beta) pairs instead of comparing algorithms.
    #[arg(long)]
    ablate: bool,
    #[arg(long, default_value = "0.0001,0.01,0.1,0.5,0.9", value_delimiter = ',')]
    alphas: Vec<f64>,
    #[arg(long, default_value = "0.3,0.5,0.7,0.9,0.95", value_delimiter = ',')]
    betas: Vec<f64>,
    #[command(flatten)]
    opts: QueryOpts,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    tokens: usize,
    #[arg(long, default_value_t = 250)]
    pools: usize,
    #[arg(long, default_value_t = 0.05)]
    hub_fraction: f64,
    #[arg(long, default_value_t = 6)]
    spread: u32,
    #[arg(long)]
    out: PathBuf,
}

/// Input or configuration errors exit 1; a query without a route exits 2.
enum Failure {
    NoRoute(RouteError),
    Input(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

fn main() -> ExitCode {
    let filter = EnvFilter::try_from_env("PRIME_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
    let result = match Cli::parse().command {
        Command::Route(args) => route(args),
        Command::Bench(args) => bench(args).map_err(Failure::Input),
        Command::Generate(args) => generate(args).map_err(Failure::Input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NoRoute(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn hub_config(spec: &str) -> Result<HubConfig> {
    if let Ok(k) = spec.parse::<usize>() {
        return Ok(HubConfig::Top { k, metric: HubMetric::Degree });
    }
    let list: Vec<String> = spec.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    if list.is_empty() {
        bail!("--hubs needs a count or a token list");
    }
    Ok(HubConfig::Explicit(list))
}

fn template(opts: &QueryOpts, source: &str, target: &str, amount: Amount) -> Result<RouteQuery> {
    let mut q = RouteQuery::new(source, target, amount);
    q.max_hops = opts.max_hops;
    q.hubs = hub_config(&opts.hubs)?;
    q.shortcuts = ShortcutConfig { enabled: !opts.no_shortcuts, ..ShortcutConfig::default() };
    if let Some(a) = opts.alpha {
        q.asgm.alpha = a;
    }
    if let Some(b) = opts.beta {
        q.asgm.beta = b;
    }
    q.asgm.validate()?;
    Ok(q)
}

fn load(path: &Path) -> Result<(Snapshot, SwapGraph)> {
    let snapshot = load_snapshot(path).with_context(|| format!("loading {}", path.display()))?;
    let graph = snapshot.to_graph().with_context(|| format!("building graph from {}", path.display()))?;
    Ok((snapshot, graph))
}

/// Builds the router, reusing or refreshing the index cache when given.
fn router<'g>(snapshot: &Snapshot, graph: &'g SwapGraph, q: &RouteQuery, cache: Option<&Path>) -> Result<Router<'g>> {
    let Some(path) = cache.filter(|_| q.shortcuts.enabled) else {
        return Ok(Router::new(graph, &q.hubs, &q.shortcuts));
    };
    let hash = snapshot.hash();
    if let Ok(text) = std::fs::read_to_string(path) {
        match index_from_json(&text, &hash, graph) {
            Ok((hubs, index))
                if hubs == resolve_hubs(graph, &q.hubs)
                    && index.max_intermediates == q.shortcuts.max_intermediates
                    && index.width == q.shortcuts.width =>
            {
                tracing::info!(path = %path.display(), "reusing shortcut index");
                return Ok(Router::with_index(graph, hubs, index));
            }
            Ok(_) => tracing::info!("cached shortcut index has other settings; rebuilding"),
            Err(e) => tracing::warn!(error = %e, "rebuilding shortcut index"),
        }
    }
    let built = Router::new(graph, &q.hubs, &q.shortcuts);
    std::fs::write(path, index_to_json(&hash, built.hubs(), built.index())).with_context(|| format!("writing {}", path.display()))?;
    Ok(built)
}

fn route(args: RouteArgs) -> Result<(), Failure> {
    let amount: Amount = args.amount.parse().map_err(|e| anyhow!("--amount: {e}"))?;
    let algorithm: Algorithm = args.algo.parse()?;
    let (snapshot, graph) = load(&args.snapshot)?;
    let q = template(&args.opts, &args.source, &args.target, amount)?;
    q.validate(&graph)?;
    let engines = Engines::new(router(&snapshot, &graph, &q, args.index.as_deref())?);
    let sol = match engines.run(algorithm, &q) {
        Ok(sol) => sol,
        Err(e @ RouteError::NoRoute { .. }) => return Err(Failure::NoRoute(e)),
        Err(e) => return Err(e.into()),
    };
    if let (Some(path), Some(trace)) = (&args.trace, &sol.trace) {
        std::fs::write(path, trace.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    let audit = args.audit.then(|| verify_solution(&sol, &graph));
    let mut doc = solution_to_json(&sol, audit.as_ref());
    doc["snapshot_hash"] = serde_json::json!(snapshot.hash());
    print!("{}", canonical(&doc));
    Ok(())
}

fn parse_pairs(spec: &str) -> Result<Vec<(String, String)>> {
    spec.split(',')
        .map(|p| {
            let (s, t) = p.split_once(':').ok_or_else(|| anyhow!("pair {p:?} is not source:target"))?;
            Ok((s.trim().to_string(), t.trim().to_string()))
        })
        .collect()
}

fn bench(args: BenchArgs) -> Result<()> {
    let algorithms = args.algos.iter().map(|a| a.parse()).collect::<Result<Vec<Algorithm>, _>>()?;
    let mut report = prime_core::bench::BenchReport::default();
    for path in &args.snapshot {
        let (snapshot, graph) = load(path)?;
        let mut settings = BenchSettings::new(template(&args.opts, "", "", Amount::ZERO)?);
        settings.algorithms = algorithms.clone();
        settings.repetitions = args.reps;
        settings.jobs = args.jobs;
        settings.trace_dir = args.trace_dir.clone();
        let engines = Engines::new(router(&snapshot, &graph, &settings.template, None)?);
        let pairs = match &args.pairs {
            Some(spec) => parse_pairs(spec)?,
            None => hub_pairs(&engines.router, args.n_pairs),
        };
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let cases = ladder_cases(&graph, &name, &pairs, &args.amounts)?;
        let part = if args.ablate {
            run_ablation(&engines, &cases, &args.alphas, &args.betas, &settings)?
        } else {
            run_bench(&engines, &cases, &settings)?
        };
        let offset = report.rows.len();
        report.rows.extend(part.rows.into_iter().map(|mut r| {
            r.case += offset;
            r
        }));
    }
    let csv = report.to_csv()?;
    match &args.out {
        Some(path) => std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let snapshot = generate_synthetic(&SynthParams {
        seed: args.seed,
        n_tokens: args.tokens,
        n_pools: args.pools,
        hub_fraction: args.hub_fraction,
        reserve_spread_orders: args.spread,
    })?;
    save_snapshot(&snapshot, &args.out)?;
    Ok(())
}
