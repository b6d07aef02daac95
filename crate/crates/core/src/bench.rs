//! Benchmark and hyperparameter-ablation harness.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{asgm, MultiEdgePath};
use crate::amount::Amount;
use crate::baselines::{best_single_path_on, prime_flow_with};
use crate::discovery::SearchGraph;
use crate::engine::{RouteQuery, RouteSolution, Router};
use crate::error::RouteError;
use crate::graph::SwapGraph;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bench configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Prime,
    Osp,
    Flow,
}

impl FromStr for Algorithm {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prime" => Ok(Algorithm::Prime),
            "osp" => Ok(Algorithm::Osp),
            "flow" => Ok(Algorithm::Flow),
            other => Err(BenchError::Config(format!("unknown algorithm {other:?}"))),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Prime => "prime",
            Algorithm::Osp => "osp",
            Algorithm::Flow => "flow",
        })
    }
}

/// A router with everything a query needs precomputed: the hub core with
/// shortcuts for the multi-path algorithms and the pruned full graph for the
/// single-path baseline.
pub struct Engines<'g> {
    pub router: Router<'g>,
    pruned: SearchGraph,
}

impl<'g> Engines<'g> {
    pub fn new(router: Router<'g>) -> Engines<'g> {
        let pruned = SearchGraph::from_graph(&router.graph().prune_leaf_tokens(&HashSet::new()));
        Engines { router, pruned }
    }

    pub fn run(&self, algorithm: Algorithm, q: &RouteQuery) -> Result<RouteSolution, RouteError> {
        match algorithm {
            Algorithm::Prime => self.router.route(q),
            Algorithm::Flow => prime_flow_with(&self.router, q),
            Algorithm::Osp => {
                q.validate(self.router.graph())?;
                let full;
                // Leaf pruning may have removed an endpoint; fall back to the full graph.
                let graph = if self.pruned.token_index(&q.source).is_some() && self.pruned.token_index(&q.target).is_some() {
                    &self.pruned
                } else {
                    full = SearchGraph::from_graph(self.router.graph());
                    &full
                };
                best_single_path_on(graph, q)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchCase {
    pub snapshot: String,
    pub source: String,
    pub target: String,
    pub amount: Amount,
}

/// Cases for every pair and every amount of the ladder, amounts given in
/// whole units of the source token.
pub fn ladder_cases(g: &SwapGraph, snapshot: &str, pairs: &[(String, String)], units: &[u64]) -> Result<Vec<BenchCase>, BenchError> {
    let mut cases = Vec::new();
    for (s, t) in pairs {
        let idx = g.token_index(s).ok_or_else(|| BenchError::Config(format!("unknown token {s:?}")))?;
        if !g.contains_token(t) {
            return Err(BenchError::Config(format!("unknown token {t:?}")));
        }
        let scale = Amount::pow10(u32::from(g.token(idx).decimals)).map_err(|e| BenchError::Config(e.to_string()))?;
        for &u in units {
            let amount = scale.checked_mul_u64(u).map_err(|e| BenchError::Config(e.to_string()))?;
            cases.push(BenchCase { snapshot: snapshot.to_string(), source: s.clone(), target: t.clone(), amount });
        }
    }
    Ok(cases)
}

/// Consecutive hub pairs `(h0, h1), (h1, h2), …`, at most `count`.
pub fn hub_pairs(router: &Router<'_>, count: usize) -> Vec<(String, String)> {
    router.hubs().ids().windows(2).take(count).map(|w| (w[0].clone(), w[1].clone())).collect()
}

#[derive(Clone, Debug)]
pub struct BenchSettings {
    pub algorithms: Vec<Algorithm>,
    /// Timed runs per row; the median is reported.
    pub repetitions: usize,
    pub jobs: usize,
    pub trace_dir: Option<PathBuf>,
    /// Source of every query parameter except endpoints and amount.
    pub template: RouteQuery,
}

impl BenchSettings {
    pub fn new(template: RouteQuery) -> BenchSettings {
        BenchSettings {
            algorithms: vec![Algorithm::Prime, Algorithm::Osp],
            repetitions: 3,
            jobs: 1,
            trace_dir: None,
            template,
        }
    }

    fn query(&self, case: &BenchCase) -> RouteQuery {
        RouteQuery { source: case.source.clone(), target: case.target.clone(), amount: case.amount, ..self.template.clone() }
    }

    fn validate(&self) -> Result<(), BenchError> {
        if self.repetitions == 0 || self.jobs == 0 {
            return Err(BenchError::Config("repetitions and jobs must be positive".into()));
        }
        if self.algorithms.is_empty() {
            return Err(BenchError::Config("no algorithms selected".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub case: usize,
    pub snapshot: String,
    pub source: String,
    pub target: String,
    pub amount: Amount,
    pub algorithm: String,
    pub alpha: f64,
    pub beta: f64,
    pub output: Amount,
    /// `10^4 · (output − baseline) / baseline` against the single-path output.
    pub bp_vs_baseline: f64,
    pub wall_time_ms: f64,
    pub iterations: usize,
    pub queue_pushes: usize,
    pub paths: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Basis points of `out` over `base`, from the exact integer difference.
pub fn basis_points(out: Amount, base: Amount) -> f64 {
    if base.is_zero() {
        return 0.0;
    }
    if out >= base {
        1e4 * out.saturating_sub(base).ratio(base)
    } else {
        -1e4 * base.saturating_sub(out).ratio(base)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Runs `q` `reps` times; returns the last solution and the median time.
fn timed(engines: &Engines<'_>, algorithm: Algorithm, q: &RouteQuery, reps: usize) -> Result<(RouteSolution, f64), RouteError> {
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        let started = Instant::now();
        let sol = engines.run(algorithm, q)?;
        times.push(started.elapsed().as_secs_f64() * 1e3);
        last = Some(sol);
    }
    Ok((last.expect("at least one repetition"), median(times)))
}

struct Variant {
    algorithm: Algorithm,
    query: RouteQuery,
}

fn run_variants(engines: &Engines<'_>, cases: &[BenchCase], settings: &BenchSettings, variants: impl Fn(&BenchCase) -> Vec<Variant> + Sync) -> Result<BenchReport, BenchError> {
    settings.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    if let Some(dir) = &settings.trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let per_case: Vec<Result<Vec<BenchRow>, BenchError>> = pool.install(|| {
        cases
            .par_iter()
            .enumerate()
            .map(|(i, case)| {
                let base = match engines.run(Algorithm::Osp, &settings.query(case)) {
                    Ok(sol) => sol.total_output,
                    Err(e) => {
                        tracing::warn!(case = i, error = %e, "skipping case without a single-path route");
                        return Ok(Vec::new());
                    }
                };
                let mut rows = Vec::new();
                for v in variants(case) {
                    let (sol, wall) = match timed(engines, v.algorithm, &v.query, settings.repetitions) {
                        Ok(r) => r,
                        Err(e) => {
                            tracing::warn!(case = i, algorithm = %v.algorithm, error = %e, "run failed");
                            continue;
                        }
                    };
                    if let (Some(dir), Some(trace)) = (&settings.trace_dir, &sol.trace) {
                        let name = format!("case{i:04}_{}_a{}_b{}.csv", v.algorithm, v.query.asgm.alpha, v.query.asgm.beta);
                        std::fs::write(dir.join(name), trace.to_csv())?;
                    }
                    rows.push(BenchRow {
                        case: i,
                        snapshot: case.snapshot.clone(),
                        source: case.source.clone(),
                        target: case.target.clone(),
                        amount: case.amount,
                        algorithm: v.algorithm.to_string(),
                        alpha: v.query.asgm.alpha,
                        beta: v.query.asgm.beta,
                        output: sol.total_output,
                        bp_vs_baseline: basis_points(sol.total_output, base),
                        wall_time_ms: wall,
                        iterations: sol.stats.iterations,
                        queue_pushes: sol.stats.queue_pushes,
                        paths: sol.paths.len(),
                    });
                }
                Ok(rows)
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_case {
        rows.extend(r?);
    }
    Ok(BenchReport { rows })
}

/// Every selected algorithm on every case.
pub fn run_bench(engines: &Engines<'_>, cases: &[BenchCase], settings: &BenchSettings) -> Result<BenchReport, BenchError> {
    run_variants(engines, cases, settings, |case| {
        settings.algorithms.iter().map(|&algorithm| Variant { algorithm, query: settings.query(case) }).collect()
    })
}

/// Allocator sensitivity to `(α, β)`. Each case's path set is discovered
/// once with the template settings; the allocator then reruns on that fixed
/// set from uniform weights for every pair, and only that run is timed.
pub fn run_ablation(
    engines: &Engines<'_>,
    cases: &[BenchCase],
    alphas: &[f64],
    betas: &[f64],
    settings: &BenchSettings,
) -> Result<BenchReport, BenchError> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(BenchError::Config("ablation needs at least one alpha and one beta".into()));
    }
    let mut grid = Vec::new();
    for &alpha in alphas {
        for &beta in betas {
            let mut p = settings.template.asgm;
            p.alpha = alpha;
            p.beta = beta;
            p.validate().map_err(|e| BenchError::Config(e.to_string()))?;
            grid.push(p);
        }
    }
    settings.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    if let Some(dir) = &settings.trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let per_case: Vec<Result<Vec<BenchRow>, BenchError>> = pool.install(|| {
        cases
            .par_iter()
            .enumerate()
            .map(|(i, case)| {
                let q = settings.query(case);
                let (base, sol) = match (engines.run(Algorithm::Osp, &q), engines.run(Algorithm::Prime, &q)) {
                    (Ok(base), Ok(sol)) => (base.total_output, sol),
                    (Err(e), _) | (_, Err(e)) => {
                        tracing::warn!(case = i, error = %e, "skipping case without a route");
                        return Ok(Vec::new());
                    }
                };
                let paths: Vec<MultiEdgePath> = sol.paths.iter().map(uniform_legs).collect();
                let mut rows = Vec::new();
                for params in &grid {
                    let mut times = Vec::with_capacity(settings.repetitions);
                    let mut last = None;
                    for _ in 0..settings.repetitions {
                        let started = Instant::now();
                        let r = asgm(&paths, case.amount, params);
                        times.push(started.elapsed().as_secs_f64() * 1e3);
                        last = Some(r);
                    }
                    let r = match last.expect("at least one repetition") {
                        Ok(r) => r,
                        Err(e) => {
                            tracing::warn!(case = i, error = %e, "allocator failed");
                            continue;
                        }
                    };
                    if let Some(dir) = &settings.trace_dir {
                        let name = format!("case{i:04}_asgm_a{}_b{}.csv", params.alpha, params.beta);
                        std::fs::write(dir.join(name), r.trace.to_csv())?;
                    }
                    rows.push(BenchRow {
                        case: i,
                        snapshot: case.snapshot.clone(),
                        source: case.source.clone(),
                        target: case.target.clone(),
                        amount: case.amount,
                        algorithm: "asgm".into(),
                        alpha: params.alpha,
                        beta: params.beta,
                        output: r.objective,
                        bp_vs_baseline: basis_points(r.objective, base),
                        wall_time_ms: median(times),
                        iterations: r.trace.iterations(),
                        queue_pushes: sol.stats.queue_pushes,
                        paths: paths.len(),
                    });
                }
                Ok(rows)
            })
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_case {
        rows.extend(r?);
    }
    Ok(BenchReport { rows })
}

/// `path` with every hop split evenly across its legs.
fn uniform_legs(path: &MultiEdgePath) -> MultiEdgePath {
    let mut p = path.clone();
    for hop in p.hops_mut() {
        let n = hop.legs().len();
        hop.set_weights(vec![1.0 / n as f64; n]).expect("uniform weights are valid");
    }
    p
}
