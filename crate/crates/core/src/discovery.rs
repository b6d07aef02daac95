//! Threshold-gated best-path search.
//!
//! The search is breadth-first from the source. A successor is only enqueued
//! when no earlier label at the same token dominates it. Because every swap
//! function is monotone, a larger intermediate amount never produces a
//! smaller downstream amount, so the pruning loses nothing as long as the
//! dominating label can extend the same way. Paths are kept simple (no token
//! revisited, no pool reused), which is what the exhaustive oracle enumerates
//! as well.

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use thiserror::Error;

use crate::amount::Amount;
use crate::graph::{EdgeRef, Leg, SwapGraph};
use crate::preprocess::ShortcutIndex;

pub const DEFAULT_MAX_HOPS: usize = 3;
pub const ORACLE_MAX_TOKENS: usize = 16;

/// The graph FindPath walks: plain pool edges plus, optionally, shortcut legs
/// between hubs. Each leg counts as one hop.
#[derive(Clone, Debug)]
pub struct SearchGraph {
    names: Vec<Arc<str>>,
    index: HashMap<Arc<str>, usize>,
    adjacency: Vec<Vec<(usize, Leg)>>,
}

impl SearchGraph {
    pub fn from_graph(g: &SwapGraph) -> SearchGraph {
        let names: Vec<Arc<str>> = (0..g.token_count()).map(|u| g.token_name(u).clone()).collect();
        let adjacency = (0..g.token_count())
            .map(|u| g.out_edges(u).map(|(v, e)| (v, Leg::single(e.clone()))).collect())
            .collect();
        Self::finish(names, adjacency)
    }

    /// `core` with every indexed shortcut between two of its tokens overlaid.
    /// Shortcuts passing through a token in `exclude` are skipped.
    pub fn with_shortcuts(core: &SwapGraph, index: &ShortcutIndex, exclude: &HashSet<&str>) -> SearchGraph {
        let mut overlay = Self::from_graph(core);
        for ((hub_in, hub_out), shortcuts) in index.pairs() {
            let (Some(u), Some(v)) = (overlay.token_index(hub_in), overlay.token_index(hub_out)) else {
                continue;
            };
            for s in shortcuts {
                if s.intermediates().any(|t| exclude.contains(&**t)) {
                    continue;
                }
                overlay.adjacency[u].push((v, s.leg.clone()));
            }
        }
        let SearchGraph { names, adjacency, .. } = overlay;
        Self::finish(names, adjacency)
    }

    fn finish(names: Vec<Arc<str>>, mut adjacency: Vec<Vec<(usize, Leg)>>) -> SearchGraph {
        for list in &mut adjacency {
            list.sort_by_cached_key(|(v, leg)| (leg.key(), *v));
        }
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        SearchGraph { names, index, adjacency }
    }

    /// Same topology with every edge replaced by `f(edge)`.
    pub fn map_edges<F: Fn(&EdgeRef) -> EdgeRef>(&self, f: F) -> SearchGraph {
        let adjacency = self
            .adjacency
            .iter()
            .map(|list| {
                list.iter()
                    .map(|(v, leg)| (*v, Leg::chain(leg.edges().iter().map(&f).collect())))
                    .collect()
            })
            .collect();
        SearchGraph { names: self.names.clone(), index: self.index.clone(), adjacency }
    }

    /// Same graph without the legs for which `keep` is false.
    pub fn retain_legs<F: Fn(&Leg) -> bool>(&self, keep: F) -> SearchGraph {
        let adjacency = self
            .adjacency
            .iter()
            .map(|list| list.iter().filter(|(_, leg)| keep(leg)).cloned().collect())
            .collect();
        SearchGraph { names: self.names.clone(), index: self.index.clone(), adjacency }
    }

    pub fn token_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn token_count(&self) -> usize {
        self.names.len()
    }

    /// Number of legs (directed edges plus shortcut legs).
    pub fn leg_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    pub fn legs_from(&self, u: usize) -> &[(usize, Leg)] {
        &self.adjacency[u]
    }

    pub fn name(&self, u: usize) -> &Arc<str> {
        &self.names[u]
    }
}

/// A path carrying its full input on one leg per hop.
#[derive(Clone, Debug, PartialEq)]
pub struct SinglePath {
    pub legs: Vec<Leg>,
    /// Input amount the path was evaluated at.
    pub probe: Amount,
    pub output: Amount,
    /// `output / probe`.
    pub average_rate: f64,
    /// Product of leg spot prices: the marginal price at zero allocation.
    pub spot_rate: f64,
}

impl SinglePath {
    pub fn from_legs(legs: Vec<Leg>, probe: Amount) -> Result<SinglePath, crate::error::SwapError> {
        let mut amount = probe;
        for leg in &legs {
            amount = leg.swap_out(amount)?;
        }
        let spot_rate = legs.iter().map(Leg::spot_price).product();
        Ok(SinglePath { average_rate: amount.ratio(probe), legs, probe, output: amount, spot_rate })
    }

    /// Token sequence from source to target (hop endpoints only).
    pub fn tokens(&self) -> Vec<Arc<str>> {
        let mut out = vec![self.legs[0].token_in().clone()];
        out.extend(self.legs.iter().map(|l| l.token_out().clone()));
        out
    }

    pub fn pools(&self) -> impl Iterator<Item = &Arc<str>> {
        self.legs.iter().flat_map(Leg::pools)
    }

    pub fn hop_count(&self) -> usize {
        self.legs.len()
    }
}

#[derive(Clone, Debug)]
pub struct PathSearch {
    pub path: Option<SinglePath>,
    /// Queue pushes performed (instrumentation).
    pub pushes: usize,
}

struct State {
    token: usize,
    amount: Amount,
    parent: Option<usize>,
    /// `(tail token, index into its adjacency)`.
    via: Option<(usize, usize)>,
    hops: usize,
}

fn on_path(states: &[State], mut at: Option<usize>, graph: &SearchGraph, token: usize, leg: &Leg) -> bool {
    while let Some(i) = at {
        let s = &states[i];
        if s.token == token {
            return true;
        }
        if let Some((u, k)) = s.via {
            let used = &graph.adjacency[u][k].1;
            if used.pools().any(|p| leg.pools().any(|q| p == q)) {
                return true;
            }
        }
        at = s.parent;
    }
    false
}

/// Tokens and pools used by the path ending at state `at`.
fn trail<'a>(states: &[State], mut at: Option<usize>, graph: &'a SearchGraph) -> (Vec<usize>, Vec<&'a str>) {
    let (mut tokens, mut pools) = (Vec::new(), Vec::new());
    while let Some(i) = at {
        tokens.push(states[i].token);
        if let Some((u, k)) = states[i].via {
            pools.extend(graph.adjacency[u][k].1.pools().map(|p| &**p));
        }
        at = states[i].parent;
    }
    (tokens, pools)
}

/// Hop distance from every token to `target`, capped at `cap + 1`.
fn distances_to(graph: &SearchGraph, target: usize, cap: usize) -> Vec<usize> {
    let mut reverse = vec![Vec::new(); graph.token_count()];
    for (u, list) in graph.adjacency.iter().enumerate() {
        for (v, _) in list {
            reverse[*v].push(u);
        }
    }
    let mut dist = vec![cap + 1; graph.token_count()];
    dist[target] = 0;
    let mut queue = VecDeque::from([target]);
    while let Some(v) = queue.pop_front() {
        if dist[v] >= cap {
            continue;
        }
        for &u in &reverse[v] {
            if dist[u] > dist[v] + 1 {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

/// For every pool, the least distance to the target from the head of a leg
/// that uses it.
fn pool_reach<'a>(graph: &'a SearchGraph, dist: &[usize]) -> HashMap<&'a str, usize> {
    let mut reach: HashMap<&str, usize> = HashMap::new();
    for list in &graph.adjacency {
        for (v, leg) in list {
            for p in leg.pools() {
                let d = reach.entry(&**p).or_insert(usize::MAX);
                *d = (*d).min(dist[*v]);
            }
        }
    }
    reach
}

/// Largest input at the tail of `leg` that keeps the leg and a downstream
/// continuation admitting up to `downstream` within every capacity. Uses
/// `f(x) ≤ spot · x`, so the bound is conservative.
fn leg_bound(leg: &Leg, downstream: f64) -> f64 {
    let mut bound = downstream;
    for e in leg.edges().iter().rev() {
        bound /= e.func.spot_price();
        if let Some(cap) = e.func.capacity() {
            bound = bound.min(cap.to_f64());
        }
    }
    bound * (1.0 - 1e-9)
}

/// `bounds[r][v]`: an amount at `v` up to which every continuation of at
/// most `r` legs towards the target stays within pool capacities.
fn capacity_bounds(graph: &SearchGraph, dist: &[usize], target: usize, max_hops: usize) -> Vec<Vec<f64>> {
    let n = graph.token_count();
    let mut bounds = vec![vec![f64::INFINITY; n]];
    for r in 1..=max_hops {
        let prev = &bounds[r - 1];
        let row = (0..n)
            .map(|v| {
                if v == target {
                    return f64::INFINITY;
                }
                graph.adjacency[v]
                    .iter()
                    .filter(|(w, _)| dist[*w] < r)
                    .map(|(w, leg)| leg_bound(leg, prev[*w]))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        bounds.push(row);
    }
    bounds
}

/// Pruning context: a label at `v` with `remaining` hops left can only be
/// extended through tokens and pools that lie within reach of the target,
/// and only safely carries amounts up to `bounds[remaining][v]`.
struct Relevance<'a> {
    dist: Vec<usize>,
    reach: HashMap<&'a str, usize>,
    bounds: Vec<Vec<f64>>,
}

impl Relevance<'_> {
    fn token(&self, w: usize, remaining: usize) -> bool {
        remaining > 0 && self.dist[w] < remaining
    }

    fn pool(&self, p: &str, remaining: usize) -> bool {
        remaining > 0 && self.reach.get(p).is_some_and(|d| *d < remaining)
    }
}

/// Best simple path from `source` to `target` of at most `max_hops` legs
/// whose average rate `output / amount` exceeds `tau`, skipping legs that
/// touch a pool in `masked`. Returns the qualifying arrival with the largest
/// output; the first arrival wins ties.
///
/// A new label at a token is dropped when an earlier label there carries at
/// least as much, used no more hops, blocks nothing the new label could
/// still use on its way to the target, and carries an amount every such
/// continuation can absorb. The earlier label can then follow any
/// continuation of the new one, so the result matches exhaustive search.
pub fn find_path(
    graph: &SearchGraph,
    source: &str,
    target: &str,
    amount: Amount,
    tau: f64,
    max_hops: usize,
    masked: &HashSet<Arc<str>>,
) -> PathSearch {
    let (Some(s), Some(t)) = (graph.token_index(source), graph.token_index(target)) else {
        return PathSearch { path: None, pushes: 0 };
    };
    if s == t || amount.is_zero() || max_hops == 0 {
        return PathSearch { path: None, pushes: 0 };
    }
    let dist = distances_to(graph, t, max_hops);
    if dist[s] > max_hops {
        return PathSearch { path: None, pushes: 0 };
    }
    let bounds = capacity_bounds(graph, &dist, t, max_hops);
    let relevance = Relevance { reach: pool_reach(graph, &dist), dist, bounds };
    let mut labels: Vec<Vec<usize>> = vec![Vec::new(); graph.token_count()];
    let mut states = vec![State { token: s, amount, parent: None, via: None, hops: 0 }];
    labels[s].push(0);
    let mut queue = VecDeque::from([0usize]);
    let mut pushes = 1usize;
    let mut winner: Option<usize> = None;

    while let Some(i) = queue.pop_front() {
        let (u, current, hops) = (states[i].token, states[i].amount, states[i].hops);
        if u == t {
            let qualifies = current.ratio(amount) > tau;
            if qualifies && winner.is_none_or(|w| current > states[w].amount) {
                winner = Some(i);
            }
            continue;
        }
        let remaining = max_hops - hops - 1;
        for (k, (v, leg)) in graph.adjacency[u].iter().enumerate() {
            let v = *v;
            if relevance.dist[v] > remaining || leg.pools().any(|p| masked.contains(p)) {
                continue;
            }
            let Ok(next) = leg.swap_out(current) else {
                continue;
            };
            if next.is_zero() || on_path(&states, Some(i), graph, v, leg) {
                continue;
            }
            let state = State { token: v, amount: next, parent: Some(i), via: Some((u, k)), hops: hops + 1 };
            if dominated(&states, &labels[v], &state, graph, &relevance, remaining) {
                continue;
            }
            states.push(state);
            labels[v].push(states.len() - 1);
            queue.push_back(states.len() - 1);
            pushes += 1;
        }
    }

    let path = winner.map(|w| {
        let mut legs = Vec::new();
        let mut at = Some(w);
        while let Some(i) = at {
            if let Some((u, k)) = states[i].via {
                legs.push(graph.adjacency[u][k].1.clone());
            }
            at = states[i].parent;
        }
        legs.reverse();
        let spot_rate = legs.iter().map(Leg::spot_price).product();
        let output = states[w].amount;
        SinglePath { legs, probe: amount, output, average_rate: output.ratio(amount), spot_rate }
    });
    PathSearch { path, pushes }
}

fn dominated(
    states: &[State],
    rivals: &[usize],
    new: &State,
    graph: &SearchGraph,
    relevance: &Relevance<'_>,
    remaining: usize,
) -> bool {
    let mut own: Option<(Vec<usize>, Vec<&str>)> = None;
    let bound = relevance.bounds[remaining][new.token];
    for &r in rivals {
        let rival = &states[r];
        if rival.amount < new.amount || rival.hops > new.hops {
            continue;
        }
        if rival.amount != new.amount && rival.amount.to_f64() > bound {
            continue;
        }
        let (tokens, pools) = own.get_or_insert_with(|| {
            let (mut tokens, mut pools) = trail(states, new.parent, graph);
            let (u, k) = new.via.expect("new labels have a parent");
            tokens.push(new.token);
            pools.extend(graph.adjacency[u][k].1.pools().map(|p| &**p));
            (tokens, pools)
        });
        let (rt, rp) = trail(states, Some(r), graph);
        if rt.iter().all(|w| *w == new.token || !relevance.token(*w, remaining) || tokens.contains(w))
            && rp.iter().all(|p| !relevance.pool(p, remaining) || pools.contains(p))
        {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("exhaustive enumeration is limited to {max} tokens, graph has {got}")]
    GraphTooLarge { max: usize, got: usize },
    #[error("unknown token {0:?}")]
    UnknownToken(String),
}

/// Every simple, pool-distinct path of at most `max_hops` edges from `source`
/// to `target`, in depth-first order over pool-sorted adjacency.
pub fn enumerate_paths_oracle(
    g: &SwapGraph,
    source: &str,
    target: &str,
    max_hops: usize,
) -> Result<Vec<Vec<EdgeRef>>, OracleError> {
    if g.token_count() > ORACLE_MAX_TOKENS {
        return Err(OracleError::GraphTooLarge { max: ORACLE_MAX_TOKENS, got: g.token_count() });
    }
    let s = g.token_index(source).ok_or_else(|| OracleError::UnknownToken(source.into()))?;
    let t = g.token_index(target).ok_or_else(|| OracleError::UnknownToken(target.into()))?;
    let mut out = Vec::new();
    let mut stack = Vec::new();
    let mut visited = vec![s];
    walk(g, s, t, max_hops, &mut stack, &mut visited, &mut out);
    Ok(out)
}

fn walk(
    g: &SwapGraph,
    u: usize,
    t: usize,
    max_hops: usize,
    stack: &mut Vec<EdgeRef>,
    visited: &mut Vec<usize>,
    out: &mut Vec<Vec<EdgeRef>>,
) {
    if stack.len() == max_hops {
        return;
    }
    for (v, e) in g.out_edges(u) {
        if visited.contains(&v) || stack.iter().any(|s| s.pool_id == e.pool_id) {
            continue;
        }
        stack.push(e.clone());
        if v == t {
            out.push(stack.clone());
        } else {
            visited.push(v);
            walk(g, v, t, max_hops, stack, visited, out);
            visited.pop();
        }
        stack.pop();
    }
}

/// Output of a plain edge sequence, `None` when an edge rejects its input.
pub fn simulate_edges(edges: &[EdgeRef], amount: Amount) -> Option<Amount> {
    edges.iter().try_fold(amount, |a, e| e.func.swap_out(a).ok())
}
