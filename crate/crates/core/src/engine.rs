//! Route orchestration: threshold-gated path discovery, merging and
//! expansion of the accepted paths, final allocation and the integer
//! execution plan.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::allocation::{asgm_from, path_shares, Allocation, AsgmParams, ConvergenceTrace, Hop, MultiEdgePath};
use crate::amount::Amount;
use crate::cfmm::SwapFunction;
use crate::discovery::{find_path, SearchGraph, SinglePath, DEFAULT_MAX_HOPS};
use crate::error::{RouteError, SwapError};
use crate::graph::{Edge, Leg, PoolKind, SwapGraph};
use crate::preprocess::{build_shortcut_index, induce_core_graph, resolve_hubs, HubConfig, HubSet, ShortcutConfig, ShortcutIndex};

pub const DEFAULT_N_EXPAND: usize = 2;
pub const DEFAULT_MAX_PATHS: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct RouteQuery {
    pub source: String,
    pub target: String,
    pub amount: Amount,
    pub max_hops: usize,
    pub hubs: HubConfig,
    pub asgm: AsgmParams,
    pub shortcuts: ShortcutConfig,
    /// Parallel edges added per hop during expansion.
    pub n_expand: usize,
    /// Cap on paths accepted during discovery.
    pub max_paths: usize,
}

impl RouteQuery {
    pub fn new(source: &str, target: &str, amount: Amount) -> RouteQuery {
        RouteQuery {
            source: source.to_string(),
            target: target.to_string(),
            amount,
            max_hops: DEFAULT_MAX_HOPS,
            hubs: HubConfig::default(),
            asgm: AsgmParams::default(),
            shortcuts: ShortcutConfig::default(),
            n_expand: DEFAULT_N_EXPAND,
            max_paths: DEFAULT_MAX_PATHS,
        }
    }

    pub fn validate(&self, g: &SwapGraph) -> Result<(), RouteError> {
        g.require_token(&self.source)?;
        g.require_token(&self.target)?;
        if self.source == self.target {
            return Err(RouteError::InvalidQuery("source and target must differ".into()));
        }
        if self.amount.is_zero() {
            return Err(RouteError::InvalidQuery("amount must be positive".into()));
        }
        if self.max_hops == 0 || self.max_paths == 0 {
            return Err(RouteError::InvalidQuery("max_hops and max_paths must be positive".into()));
        }
        self.asgm.validate()?;
        Ok(())
    }

    pub(crate) fn no_route(&self) -> RouteError {
        RouteError::NoRoute { source_token: self.source.clone(), target: self.target.clone() }
    }
}

/// One swap of the execution plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PlanStep {
    pub pool_id: String,
    pub token_in: String,
    pub token_out: String,
    pub amount_in: Amount,
    /// Exact simulated output of this step.
    pub min_out: Amount,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RouteStats {
    /// Threshold after each discovery acceptance.
    pub stage1_tau: Vec<f64>,
    /// Objective after each discovery acceptance.
    pub stage1_objective: Vec<Amount>,
    pub paths_accepted: usize,
    /// FindPath queue pushes over the whole query.
    pub queue_pushes: usize,
    /// Outer allocator iterations over the whole query.
    pub iterations: usize,
    pub core_tokens: usize,
    pub core_legs: usize,
    pub degraded: bool,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug)]
pub struct RouteSolution {
    pub algorithm: String,
    pub source: String,
    pub target: String,
    pub amount_in: Amount,
    pub paths: Vec<MultiEdgePath>,
    pub allocation: Allocation,
    pub total_output: Amount,
    pub tau: f64,
    pub execution_plan: Vec<PlanStep>,
    /// Whether the paths are guaranteed pool-disjoint.
    pub disjoint: bool,
    pub trace: Option<ConvergenceTrace>,
    pub stats: RouteStats,
}

/// Query-independent preprocessing, built once per snapshot and shared by
/// every query.
#[derive(Clone, Debug)]
pub struct Router<'g> {
    graph: &'g SwapGraph,
    hubs: HubSet,
    index: ShortcutIndex,
}

impl<'g> Router<'g> {
    /// Selects hubs on the full graph and indexes shortcuts on the graph with
    /// leaf tokens pruned (hubs kept).
    pub fn new(graph: &'g SwapGraph, hubs: &HubConfig, shortcuts: &ShortcutConfig) -> Router<'g> {
        let hubs = resolve_hubs(graph, hubs);
        let index = if shortcuts.enabled {
            let pruned = graph.prune_leaf_tokens(hubs.as_set());
            build_shortcut_index(&pruned, &hubs, shortcuts.max_intermediates, shortcuts.width)
        } else {
            ShortcutIndex::empty()
        };
        Router { graph, hubs, index }
    }

    /// Reuses a previously built hub set and index.
    pub fn with_index(graph: &'g SwapGraph, hubs: HubSet, index: ShortcutIndex) -> Router<'g> {
        Router { graph, hubs, index }
    }

    pub fn graph(&self) -> &'g SwapGraph {
        self.graph
    }

    pub fn hubs(&self) -> &HubSet {
        &self.hubs
    }

    pub fn index(&self) -> &ShortcutIndex {
        &self.index
    }

    /// The search graph of a query: the core graph plus shortcut legs that
    /// avoid the query endpoints.
    pub fn overlay(&self, q: &RouteQuery) -> SearchGraph {
        let core = induce_core_graph(self.graph, &self.hubs, &q.source, &q.target);
        if q.shortcuts.enabled {
            let exclude: HashSet<&str> = [q.source.as_str(), q.target.as_str()].into();
            SearchGraph::with_shortcuts(&core, &self.index, &exclude)
        } else {
            SearchGraph::from_graph(&core)
        }
    }

    pub fn route(&self, q: &RouteQuery) -> Result<RouteSolution, RouteError> {
        let started = Instant::now();
        q.validate(self.graph)?;
        let x = q.amount;
        let overlay = self.overlay(q);
        let mut stats = RouteStats {
            core_tokens: overlay.token_count(),
            core_legs: overlay.leg_count(),
            ..RouteStats::default()
        };

        // Discovery: accept paths while their zero-flow price beats τ.
        let mut masked: HashSet<Arc<str>> = HashSet::new();
        let mut singles: Vec<SinglePath> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut tau = 0.0;
        while singles.len() < q.max_paths {
            let search = find_path(&overlay, &q.source, &q.target, x, tau, q.max_hops, &masked);
            stats.queue_pushes += search.pushes;
            let Some(path) = search.path else { break };
            if !singles.is_empty() && path.spot_rate <= tau {
                break;
            }
            masked.extend(path.pools().cloned());
            singles.push(path);
            weights.push(0.0);
            if singles.len() == 1 {
                weights[0] = 1.0;
            }
            let multi: Vec<MultiEdgePath> = singles.iter().map(MultiEdgePath::from_single).collect();
            let r = asgm_from(&multi, x, &q.asgm, Some(&weights))?;
            stats.iterations += r.trace.iterations();
            stats.stage1_tau.push(r.tau);
            stats.stage1_objective.push(r.objective);
            tau = r.tau;
            weights = r.allocation.path_weights;
        }
        if singles.is_empty() {
            return Err(q.no_route());
        }
        stats.paths_accepted = singles.len();

        // Merge, expand, and reoptimise from the discovery allocation.
        let (merged, start) = merge_and_expand(&singles, &weights, self.graph, &self.index, &masked, q.n_expand);
        let r = asgm_from(&merged, x, &q.asgm, Some(&start))?;
        stats.iterations += r.trace.iterations();
        stats.degraded = r.trace.degraded();

        let first = &singles[0];
        let mut solution = if r.objective < first.output {
            // Never return less than the first discovered path alone.
            let path = MultiEdgePath::from_single(first);
            assemble("prime", q, vec![path], vec![1.0], first.spot_rate_at(x)?, Some(r.trace), true)?
        } else {
            assemble("prime", q, r.paths, r.allocation.path_weights, r.tau, Some(r.trace), true)?
        };
        stats.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
        solution.stats = stats;
        Ok(solution)
    }
}

impl SinglePath {
    /// Path marginal price when it carries `x` alone.
    pub fn spot_rate_at(&self, x: Amount) -> Result<f64, SwapError> {
        let mut amount = x;
        let mut derivative = 1.0;
        for leg in &self.legs {
            derivative *= leg.marginal_price(amount)?;
            amount = leg.swap_out(amount)?;
        }
        Ok(derivative)
    }
}

/// Runs all stages, building the query-independent artefacts on the fly.
pub fn prime(g: &SwapGraph, q: &RouteQuery) -> Result<RouteSolution, RouteError> {
    Router::new(g, &q.hubs, &q.shortcuts).route(q)
}

/// Merges paths with identical hop token sequences and adds up to `n_expand`
/// unused parallel pools per hop (best spot first), plus shortcut legs whose
/// spot beats every leg already in the hop. Returns the paths and matching
/// path weights; merged hop weights are proportional to the merged paths'
/// weights and added legs start at zero.
pub fn merge_and_expand(
    paths: &[SinglePath],
    weights: &[f64],
    g: &SwapGraph,
    index: &ShortcutIndex,
    used_pools: &HashSet<Arc<str>>,
    n_expand: usize,
) -> (Vec<MultiEdgePath>, Vec<f64>) {
    let mut groups: Vec<(Vec<Arc<str>>, Vec<usize>)> = Vec::new();
    for (i, p) in paths.iter().enumerate() {
        let tokens = p.tokens();
        match groups.iter_mut().find(|(t, _)| *t == tokens) {
            Some((_, members)) => members.push(i),
            None => groups.push((tokens, vec![i])),
        }
    }

    let mut used: HashSet<Arc<str>> = used_pools.clone();
    used.extend(paths.iter().flat_map(|p| p.pools().cloned()));
    let mut out_paths = Vec::with_capacity(groups.len());
    let mut out_weights = Vec::with_capacity(groups.len());

    for (tokens, members) in &groups {
        let mass: f64 = members.iter().map(|&i| weights[i]).sum();
        let mut hops = Vec::with_capacity(tokens.len() - 1);
        for h in 0..tokens.len() - 1 {
            let legs: Vec<Leg> = members.iter().map(|&i| paths[i].legs[h].clone()).collect();
            let hop_weights: Vec<f64> = if mass > 0.0 {
                members.iter().map(|&i| weights[i] / mass).collect()
            } else {
                let mut w = vec![0.0; members.len()];
                w[0] = 1.0;
                w
            };
            let mut hop = Hop::new(legs, hop_weights).expect("merged legs share endpoints");
            expand_hop(&mut hop, g, index, tokens, &mut used, n_expand);
            hops.push(hop);
        }
        out_paths.push(MultiEdgePath::new(hops).expect("merged paths are pool-disjoint"));
        out_weights.push(mass);
    }
    let total: f64 = out_weights.iter().sum();
    if total > 0.0 {
        out_weights.iter_mut().for_each(|w| *w /= total);
    }
    (out_paths, out_weights)
}

fn expand_hop(
    hop: &mut Hop,
    g: &SwapGraph,
    index: &ShortcutIndex,
    path_tokens: &[Arc<str>],
    used: &mut HashSet<Arc<str>>,
    n_expand: usize,
) {
    let (a, b) = (hop.token_in().clone(), hop.token_out().clone());
    let mut candidates: Vec<_> = g.edges_between(&a, &b).into_iter().filter(|e| !used.contains(&e.pool_id)).collect();
    candidates.sort_by(|x, y| {
        y.func.spot_price().total_cmp(&x.func.spot_price()).then_with(|| x.pool_id.cmp(&y.pool_id))
    });
    for e in candidates.into_iter().take(n_expand) {
        used.insert(e.pool_id.clone());
        hop.push_leg(Leg::single(e));
    }

    let best_spot = hop.legs().iter().map(Leg::spot_price).fold(0.0, f64::max);
    for s in index.get(&a, &b) {
        if s.spot_rate <= best_spot {
            break;
        }
        if s.leg.pools().any(|p| used.contains(p)) || s.intermediates().any(|t| path_tokens.contains(t)) {
            continue;
        }
        used.extend(s.leg.pools().cloned());
        hop.push_leg(s.leg.clone());
    }
}

/// Builds a solution and its execution plan from paths and path weights.
pub(crate) fn assemble(
    algorithm: &str,
    q: &RouteQuery,
    paths: Vec<MultiEdgePath>,
    path_weights: Vec<f64>,
    tau: f64,
    trace: Option<ConvergenceTrace>,
    disjoint: bool,
) -> Result<RouteSolution, RouteError> {
    let x = q.amount;
    let mut plan = Vec::new();
    let mut total = Amount::ZERO;
    for (path, share) in paths.iter().zip(path_shares(x, &path_weights)) {
        let mut amount = share;
        for hop in path.hops() {
            let mut hop_out = Amount::ZERO;
            for (leg, leg_in) in hop.legs().iter().zip(hop.split(amount)) {
                let mut flow = leg_in;
                for e in leg.edges() {
                    if flow.is_zero() {
                        break;
                    }
                    let out = e.func.swap_out(flow)?;
                    plan.push(step(e, flow, out));
                    flow = out;
                }
                hop_out = hop_out.checked_add(flow)?;
            }
            amount = hop_out;
        }
        total = total.checked_add(amount)?;
    }
    let allocation = Allocation {
        edge_weights: paths.iter().map(MultiEdgePath::edge_weights).collect(),
        path_weights,
    };
    Ok(RouteSolution {
        algorithm: algorithm.to_string(),
        source: q.source.clone(),
        target: q.target.clone(),
        amount_in: x,
        paths,
        allocation,
        total_output: total,
        tau,
        execution_plan: plan,
        disjoint,
        trace,
        stats: RouteStats::default(),
    })
}

fn step(e: &Edge, amount_in: Amount, out: Amount) -> PlanStep {
    PlanStep {
        pool_id: e.pool_id.to_string(),
        token_in: e.token_in.to_string(),
        token_out: e.token_out.to_string(),
        amount_in,
        min_out: out,
    }
}

/// Live pool states for replaying trades that may revisit a pool.
///
/// Constant-product pools track every reserve, so any direction sees earlier
/// trades. Piecewise pools track each direction's curve separately.
pub struct PoolBook<'g> {
    graph: &'g SwapGraph,
    states: HashMap<Arc<str>, PoolState>,
}

enum PoolState {
    Reserves(Vec<Amount>),
    Curves(HashMap<(usize, usize), SwapFunction>),
}

impl<'g> PoolBook<'g> {
    pub fn new(graph: &'g SwapGraph) -> PoolBook<'g> {
        PoolBook { graph, states: HashMap::new() }
    }

    /// The swap function `edge` currently presents.
    pub fn current(&self, edge: &Edge) -> Result<SwapFunction, SwapError> {
        match self.states.get(&edge.pool_id) {
            None => Ok(edge.func.clone()),
            Some(PoolState::Reserves(r)) => {
                SwapFunction::constant_product(r[edge.in_pos], r[edge.out_pos], edge.func.fee_bps())
            }
            Some(PoolState::Curves(c)) => Ok(c.get(&(edge.in_pos, edge.out_pos)).cloned().unwrap_or_else(|| edge.func.clone())),
        }
    }

    /// Executes `x` through `edge` and returns the output.
    pub fn swap(&mut self, edge: &Edge, x: Amount) -> Result<Amount, SwapError> {
        let func = self.current(edge)?;
        let out = func.swap_out(x)?;
        if !self.states.contains_key(&edge.pool_id) {
            let pool = self
                .graph
                .pool(&edge.pool_id)
                .ok_or_else(|| SwapError::Invalid(format!("unknown pool {}", edge.pool_id)))?;
            let state = match &pool.kind {
                PoolKind::ConstantProduct { reserves } => PoolState::Reserves(reserves.clone()),
                PoolKind::PiecewiseLiquidity { .. } => PoolState::Curves(HashMap::new()),
            };
            self.states.insert(edge.pool_id.clone(), state);
        }
        match self.states.get_mut(&edge.pool_id).expect("inserted above") {
            PoolState::Reserves(r) => {
                r[edge.in_pos] = r[edge.in_pos].checked_add(x)?;
                r[edge.out_pos] = r[edge.out_pos].checked_sub(out)?;
                if r[edge.out_pos].is_zero() {
                    return Err(SwapError::Invalid(format!("pool {} drained", edge.pool_id)));
                }
            }
            PoolState::Curves(c) => {
                c.insert((edge.in_pos, edge.out_pos), func.after_swap(x)?);
            }
        }
        Ok(out)
    }

    pub fn touched(&self) -> impl Iterator<Item = &Arc<str>> {
        self.states.keys()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// A pool appears in more than one step of a disjoint plan.
    PoolReuse { pool_id: String },
    /// The plan does not spend exactly the query amount of the source token.
    Conservation { spent: Amount, expected: Amount },
    /// An intermediate token is left with a non-zero balance.
    Dust { token: String, amount: Amount },
    /// A step spends more of a token than the plan holds at that point.
    Overdraft { step: usize, token: String },
    /// A step's recorded output differs from its replay.
    StepMismatch { step: usize, recorded: Amount, replayed: Amount },
    /// The target balance differs from the reported total output.
    OutputMismatch { reported: Amount, replayed: Amount },
    /// A step cannot be replayed at all.
    Replay { step: usize, reason: String },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub violations: Vec<Violation>,
    pub replayed_output: Amount,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays the execution plan against `g` with a token ledger.
pub fn verify_solution(sol: &RouteSolution, g: &SwapGraph) -> AuditReport {
    let mut violations = Vec::new();
    let mut book = PoolBook::new(g);
    let mut balances: BTreeMap<String, Amount> = BTreeMap::new();
    balances.insert(sol.source.clone(), sol.amount_in);
    let mut seen = HashSet::new();

    for (i, s) in sol.execution_plan.iter().enumerate() {
        if sol.disjoint && !seen.insert(s.pool_id.clone()) {
            violations.push(Violation::PoolReuse { pool_id: s.pool_id.clone() });
        }
        let Some(edge) = g.find_edge(&s.pool_id, &s.token_in, &s.token_out) else {
            violations.push(Violation::Replay { step: i, reason: format!("no edge {} {} -> {}", s.pool_id, s.token_in, s.token_out) });
            continue;
        };
        let held = balances.get(&s.token_in).copied().unwrap_or(Amount::ZERO);
        match held.checked_sub(s.amount_in) {
            Ok(rest) => {
                balances.insert(s.token_in.clone(), rest);
            }
            Err(_) => {
                violations.push(Violation::Overdraft { step: i, token: s.token_in.clone() });
                balances.insert(s.token_in.clone(), Amount::ZERO);
            }
        }
        match book.swap(edge, s.amount_in) {
            Ok(out) => {
                if out != s.min_out {
                    violations.push(Violation::StepMismatch { step: i, recorded: s.min_out, replayed: out });
                }
                let entry = balances.entry(s.token_out.clone()).or_insert(Amount::ZERO);
                *entry = entry.checked_add(out).unwrap_or(Amount::MAX);
            }
            Err(e) => violations.push(Violation::Replay { step: i, reason: e.to_string() }),
        }
    }

    let spent: Amount = sol
        .execution_plan
        .iter()
        .filter(|s| s.token_in == sol.source)
        .map(|s| s.amount_in)
        .sum();
    if spent != sol.amount_in {
        violations.push(Violation::Conservation { spent, expected: sol.amount_in });
    }
    for (token, amount) in &balances {
        if token != &sol.target && token != &sol.source && !amount.is_zero() {
            violations.push(Violation::Dust { token: token.clone(), amount: *amount });
        }
    }
    let replayed = balances.get(&sol.target).copied().unwrap_or(Amount::ZERO);
    if replayed != sol.total_output {
        violations.push(Violation::OutputMismatch { reported: sol.total_output, replayed });
    }
    AuditReport { violations, replayed_output: replayed }
}
