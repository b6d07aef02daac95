//! Reference routers and the exhaustive allocation oracle.

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocation::{objective, path_shares, Allocation, MultiEdgePath};
use crate::amount::Amount;
use crate::discovery::{find_path, SearchGraph, SinglePath};
use crate::engine::{assemble, PlanStep, PoolBook, RouteQuery, RouteSolution, RouteStats, Router};
use crate::error::{AllocationError, RouteError, SwapError};
use crate::graph::{EdgeRef, Leg, SwapGraph};

/// Largest path count the grid oracle accepts.
pub const GRID_MAX_PATHS: usize = 4;

/// Ternary search stops at this interval width or iteration count.
const TERNARY_WIDTH: f64 = 1e-6;
const TERNARY_MAX_ITERS: usize = 100;

/// Brute-force enumeration refuses lattices with more points than this.
const BRUTE_FORCE_LIMIT: u128 = 5_000_000;

/// Best single path by exact output, searched on the full graph with leaf
/// tokens pruned.
pub fn best_single_path(g: &SwapGraph, q: &RouteQuery) -> Result<RouteSolution, RouteError> {
    q.validate(g)?;
    let protected: HashSet<String> = [q.source.clone(), q.target.clone()].into();
    let pruned = g.prune_leaf_tokens(&protected);
    best_single_path_on(&SearchGraph::from_graph(&pruned), q)
}

/// [`best_single_path`] on a prebuilt search graph.
pub fn best_single_path_on(graph: &SearchGraph, q: &RouteQuery) -> Result<RouteSolution, RouteError> {
    let started = Instant::now();
    let search = find_path(graph, &q.source, &q.target, q.amount, 0.0, q.max_hops, &HashSet::new());
    let path = search.path.ok_or_else(|| q.no_route())?;
    let tau = path.spot_rate_at(q.amount)?;
    let mut sol = assemble("osp", q, vec![MultiEdgePath::from_single(&path)], vec![1.0], tau, None, true)?;
    sol.stats = RouteStats {
        paths_accepted: 1,
        queue_pushes: search.pushes,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        ..RouteStats::default()
    };
    Ok(sol)
}

/// Sequential execution of overlapping flows: each path trades against the
/// pool states its predecessors left behind.
fn execute<'g>(
    g: &'g SwapGraph,
    paths: &[Vec<EdgeRef>],
    fractions: &[f64],
    x: Amount,
    mut plan: Option<&mut Vec<PlanStep>>,
) -> Result<(Amount, PoolBook<'g>), SwapError> {
    let mut book = PoolBook::new(g);
    let mut total = Amount::ZERO;
    for (path, share) in paths.iter().zip(path_shares(x, fractions)) {
        if share.is_zero() {
            continue;
        }
        let mut amount = share;
        for e in path {
            let out = book.swap(e, amount)?;
            if let Some(plan) = plan.as_deref_mut() {
                plan.push(PlanStep {
                    pool_id: e.pool_id.to_string(),
                    token_in: e.token_in.to_string(),
                    token_out: e.token_out.to_string(),
                    amount_in: amount,
                    min_out: out,
                });
            }
            amount = out;
        }
        total = total.checked_add(amount)?;
    }
    Ok((total, book))
}

fn flatten(path: &SinglePath, g: &SwapGraph) -> Vec<EdgeRef> {
    path.legs
        .iter()
        .flat_map(|l| l.edges())
        .map(|e| g.find_edge(&e.pool_id, &e.token_in, &e.token_out).expect("overlay edges come from g").clone())
        .collect()
}

/// Flow-relaxed routing: paths may share pools. Each round finds the best
/// path against the pool states left by the current flow and ternary-searches
/// how much of the input to move onto it. Stops when no path's residual spot
/// rate beats the current marginal price by more than `eps_rel`, or moving
/// flow does not help.
pub fn prime_flow(g: &SwapGraph, q: &RouteQuery) -> Result<RouteSolution, RouteError> {
    prime_flow_with(&Router::new(g, &q.hubs, &q.shortcuts), q)
}

pub fn prime_flow_with(router: &Router<'_>, q: &RouteQuery) -> Result<RouteSolution, RouteError> {
    let started = Instant::now();
    let g = router.graph();
    q.validate(g)?;
    let x = q.amount;
    let overlay = router.overlay(q);
    let none = HashSet::new();
    let mut stats = RouteStats { core_tokens: overlay.token_count(), core_legs: overlay.leg_count(), ..RouteStats::default() };

    let first = find_path(&overlay, &q.source, &q.target, x, 0.0, q.max_hops, &none);
    stats.queue_pushes += first.pushes;
    let first = first.path.ok_or_else(|| q.no_route())?;
    let mut flows = vec![flatten(&first, g)];
    let mut fractions = vec![1.0];
    let mut total = first.output;

    while flows.len() < q.max_paths {
        let (_, book) = execute(g, &flows, &fractions, x, None)?;
        let tau = residual_price(&book, &flows, &fractions);
        stats.stage1_tau.push(tau);
        stats.stage1_objective.push(total);
        // A pool traded one way is not offered the other way.
        let directions: HashSet<(Arc<str>, Arc<str>)> = flows
            .iter()
            .flatten()
            .map(|e| (e.pool_id.clone(), e.token_in.clone()))
            .collect();
        let state = overlay
            .retain_legs(|leg| leg.edges().iter().all(|e| !is_reverse(&directions, e)))
            .map_edges(|e| match book.current(e) {
                Ok(func) => Arc::new(crate::graph::Edge { func, ..(**e).clone() }),
                Err(_) => e.clone(),
            });
        let search = find_path(&state, &q.source, &q.target, x, 0.0, q.max_hops, &none);
        stats.queue_pushes += search.pushes;
        let Some(candidate) = search.path else { break };
        if candidate.spot_rate <= tau * (1.0 + q.asgm.eps_rel) {
            break;
        }
        let candidate = flatten(&candidate, g);
        let mut trial_flows = flows.clone();
        trial_flows.push(candidate);
        let value = |lambda: f64| -> Amount {
            let mut f: Vec<f64> = fractions.iter().map(|w| w * (1.0 - lambda)).collect();
            f.push(lambda);
            execute(g, &trial_flows, &f, x, None).map_or(Amount::ZERO, |(v, _)| v)
        };
        let (lambda, best) = ternary_max(value);
        stats.iterations += 1;
        if best <= total {
            break;
        }
        fractions.iter_mut().for_each(|w| *w *= 1.0 - lambda);
        fractions.push(lambda);
        flows = trial_flows;
        total = best;
    }

    let mut plan = Vec::new();
    let (total, book) = execute(g, &flows, &fractions, x, Some(&mut plan))?;
    let tau = residual_price(&book, &flows, &fractions);
    let paths: Vec<MultiEdgePath> = flows
        .iter()
        .map(|p| {
            let hops = p.iter().cloned().map(|e| crate::allocation::Hop::single(Leg::single(e))).collect();
            MultiEdgePath::new(hops).expect("flow paths are simple")
        })
        .collect();
    stats.paths_accepted = flows.len();
    stats.elapsed_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(RouteSolution {
        algorithm: "flow".into(),
        source: q.source.clone(),
        target: q.target.clone(),
        amount_in: x,
        allocation: Allocation { edge_weights: paths.iter().map(MultiEdgePath::edge_weights).collect(), path_weights: fractions },
        paths,
        total_output: total,
        tau,
        execution_plan: plan,
        disjoint: false,
        trace: None,
        stats,
    })
}

fn is_reverse(directions: &HashSet<(Arc<str>, Arc<str>)>, e: &EdgeRef) -> bool {
    directions.iter().any(|(p, t_in)| *p == e.pool_id && *t_in != e.token_in)
}

/// Largest marginal price, after the flow, of pushing more along a carrying
/// path.
fn residual_price(book: &PoolBook<'_>, flows: &[Vec<EdgeRef>], fractions: &[f64]) -> f64 {
    flows
        .iter()
        .zip(fractions)
        .filter(|(_, w)| **w > 0.0)
        .map(|(p, _)| p.iter().map(|e| book.current(e).map_or(0.0, |f| f.spot_price())).product::<f64>())
        .fold(0.0, f64::max)
}

/// Maximises a unimodal function of `λ ∈ [0, 1]`; the endpoints are always
/// candidates.
fn ternary_max<F: Fn(f64) -> Amount>(f: F) -> (f64, Amount) {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..TERNARY_MAX_ITERS {
        if hi - lo <= TERNARY_WIDTH {
            break;
        }
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let mid = 0.5 * (lo + hi);
    [(mid, f(mid)), (0.0, f(0.0)), (1.0, f(1.0))]
        .into_iter()
        .fold((0.0, Amount::ZERO), |best, c| if c.1 > best.1 { c } else { best })
}

/// Resolution and size limits of the allocation lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub step: f64,
    pub max_paths: usize,
}

impl GridSpec {
    pub fn new(step: f64) -> GridSpec {
        GridSpec { step, max_paths: GRID_MAX_PATHS }
    }

    /// Lattice points per unit, `1 / step`.
    pub fn divisions(&self) -> Result<usize, AllocationError> {
        if !(self.step > 0.0 && self.step <= 0.1) {
            return Err(AllocationError::InvalidGrid(format!("step {} outside (0, 0.1]", self.step)));
        }
        let n = (1.0 / self.step).round();
        if (n * self.step - 1.0).abs() > 1e-9 {
            return Err(AllocationError::InvalidGrid(format!("step {} does not divide 1", self.step)));
        }
        if self.max_paths == 0 || self.max_paths > GRID_MAX_PATHS {
            return Err(AllocationError::InvalidGrid(format!("max_paths must be in 1..={GRID_MAX_PATHS}")));
        }
        Ok(n as usize)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridResult {
    pub path_weights: Vec<f64>,
    pub edge_weights: Vec<Vec<Vec<f64>>>,
    /// Exact objective at the returned weights.
    pub objective: Amount,
}

fn lattice_share(x: Amount, k: usize, n: usize) -> Amount {
    x.mul_div_floor(Amount::from(k as u64), Amount::from(n as u64)).expect("k ≤ n keeps the share below x")
}

/// Max-plus combination over items: `values[j][k]` is item j's value with
/// k of n units. Returns the best total and the lexicographically smallest
/// unit vector achieving it.
fn allocate_units(values: &[Vec<Option<Amount>>], n: usize) -> Option<(Amount, Vec<usize>)> {
    let m = values.len();
    // suffix[j][r]: best value of items j.. using exactly r units.
    let mut suffix = vec![vec![None; n + 1]; m];
    suffix[m - 1] = values[m - 1].clone();
    for j in (0..m - 1).rev() {
        let row: Vec<Option<Amount>> = (0..=n)
            .into_par_iter()
            .map(|r| {
                let mut best: Option<Amount> = None;
                for k in 0..=r {
                    if let (Some(a), Some(b)) = (values[j][k], suffix[j + 1][r - k]) {
                        let v = a.checked_add(b).ok()?;
                        if best.is_none_or(|c| v > c) {
                            best = Some(v);
                        }
                    }
                }
                best
            })
            .collect();
        suffix[j] = row;
    }
    let total = suffix[0][n]?;
    let mut units = Vec::with_capacity(m);
    let mut r = n;
    for j in 0..m {
        if j == m - 1 {
            units.push(r);
            break;
        }
        let target = suffix[j][r]?;
        let k = (0..=r).find(|&k| {
            matches!((values[j][k], suffix[j + 1][r - k]), (Some(a), Some(b)) if a.checked_add(b) == Ok(target))
        })?;
        units.push(k);
        r -= k;
    }
    Some((total, units))
}

/// Lattices up to this size are searched exhaustively inside a hop.
const EXACT_HOP_LATTICE: usize = 64;
/// Lattice points scanned on each side of a search result inside a hop,
/// absorbing the rounding noise that makes floored outputs only nearly
/// concave.
const HOP_WINDOW: usize = 16;

/// Best lattice weights of one hop for input `a`: `(output, units per leg)`.
fn best_hop(legs: &[Leg], a: Amount, n: usize) -> Option<(Amount, Vec<usize>)> {
    let value = |j: usize, k: usize| legs[j].swap_out(lattice_share(a, k, n)).ok();
    match legs.len() {
        1 => value(0, n).map(|v| (v, vec![n])),
        _ if n <= EXACT_HOP_LATTICE => {
            let values: Vec<Vec<Option<Amount>>> = (0..legs.len()).map(|j| (0..=n).map(|k| value(j, k)).collect()).collect();
            allocate_units(&values, n)
        }
        2 => best_pair(|k| Some(value(0, k)?.checked_add(value(1, n - k)?).ok()?), n),
        _ => best_greedy(&value, legs.len(), n),
    }
}

/// Maximiser of a nearly concave `h` over `0..=n`, `None` where infeasible.
/// Feasibility of `h(k)` is an interval: each leg admits inputs up to a cap.
fn best_pair<H: Fn(usize) -> Option<Amount>>(h: H, n: usize) -> Option<(Amount, Vec<usize>)> {
    // Any feasible point, then the interval edges by bisection.
    let seed = [n / 2, 0, n].into_iter().chain((0..=n).step_by((n / 64).max(1))).find(|&k| h(k).is_some())?;
    let edge = |mut inside: usize, mut outside: isize| {
        while (outside - inside as isize).abs() > 1 {
            let mid = ((inside as isize + outside) / 2) as usize;
            if h(mid).is_some() {
                inside = mid;
            } else {
                outside = mid as isize;
            }
        }
        inside
    };
    let lo = edge(seed, -1);
    let hi = edge(seed, n as isize + 1);
    let (mut l, mut r) = (lo, hi);
    while r - l > 2 {
        let m1 = l + (r - l) / 3;
        let m2 = r - (r - l) / 3;
        if h(m1) < h(m2) {
            l = m1 + 1;
        } else {
            r = m2;
        }
    }
    let from = l.saturating_sub(HOP_WINDOW).max(lo);
    let to = (r + HOP_WINDOW).min(hi);
    let mut best: Option<(Amount, usize)> = None;
    for k in from..=to {
        if let Some(v) = h(k) {
            if best.is_none_or(|(b, _)| v > b) {
                best = Some((v, k));
            }
        }
    }
    best.map(|(v, k)| (v, vec![k, n - k]))
}

/// Unit-by-unit water filling for hops with three or more legs, then
/// pairwise exchanges of up to [`HOP_WINDOW`] units while they help.
fn best_greedy<V: Fn(usize, usize) -> Option<Amount>>(value: &V, legs: usize, n: usize) -> Option<(Amount, Vec<usize>)> {
    let mut units = vec![0usize; legs];
    let mut current: Vec<Amount> = (0..legs).map(|j| value(j, 0)).collect::<Option<_>>()?;
    for _ in 0..n {
        let mut pick: Option<(Amount, usize, Amount)> = None;
        for j in 0..legs {
            if let Some(next) = value(j, units[j] + 1) {
                let gain = next.saturating_sub(current[j]);
                if pick.is_none_or(|(g, _, _)| gain > g) {
                    pick = Some((gain, j, next));
                }
            }
        }
        let (_, j, next) = pick?;
        units[j] += 1;
        current[j] = next;
    }
    let total = |c: &[Amount]| c.iter().try_fold(Amount::ZERO, |acc, v| acc.checked_add(*v).ok());
    let mut best = total(&current)?;
    loop {
        let mut improved = false;
        for from in 0..legs {
            for to in 0..legs {
                if from == to {
                    continue;
                }
                for d in 1..=HOP_WINDOW.min(units[from]) {
                    let (Some(a), Some(b)) = (value(from, units[from] - d), value(to, units[to] + d)) else {
                        continue;
                    };
                    let mut trial = current.clone();
                    trial[from] = a;
                    trial[to] = b;
                    if let Some(t) = total(&trial).filter(|t| *t > best) {
                        units[from] -= d;
                        units[to] += d;
                        current = trial;
                        best = t;
                        improved = true;
                        break;
                    }
                }
            }
        }
        if !improved {
            return Some((best, units));
        }
    }
}

/// Best output of a path for input `a` with every hop's weights on the
/// lattice. Hops are optimised front to back: a larger hop output never
/// lowers what later hops can produce.
fn best_path(path: &MultiEdgePath, a: Amount, n: usize) -> Option<(Amount, Vec<Vec<usize>>)> {
    let mut amount = a;
    let mut choice = Vec::with_capacity(path.hops().len());
    for hop in path.hops() {
        let (out, units) = best_hop(hop.legs(), amount, n)?;
        choice.push(units);
        amount = out;
    }
    Some((amount, choice))
}

fn weights_of(units: &[usize], n: usize) -> Vec<f64> {
    units.iter().map(|&k| k as f64 / n as f64).collect()
}

/// Exhaustive search over the simplex lattice of resolution `spec.step`,
/// path weights and per-hop leg weights alike. Lattice values use floored
/// shares per path and per leg; the returned objective is the exact one at
/// the chosen weights.
pub fn grid_oracle(paths: &[MultiEdgePath], x: Amount, spec: &GridSpec) -> Result<GridResult, AllocationError> {
    let n = spec.divisions()?;
    check_paths(paths, spec)?;
    let per_path: Vec<Vec<Option<(Amount, Vec<Vec<usize>>)>>> = paths
        .iter()
        .map(|p| (0..=n).into_par_iter().map(|k| best_path(p, lattice_share(x, k, n), n)).collect())
        .collect();
    let values: Vec<Vec<Option<Amount>>> =
        per_path.iter().map(|row| row.iter().map(|c| c.as_ref().map(|(v, _)| *v)).collect()).collect();
    let (_, units) = allocate_units(&values, n).ok_or_else(|| AllocationError::InvalidGrid("no feasible lattice point".into()))?;

    let mut chosen = paths.to_vec();
    let mut edge_weights = Vec::with_capacity(paths.len());
    for (j, path) in chosen.iter_mut().enumerate() {
        let hop_units = &per_path[j][units[j]].as_ref().expect("chosen point is feasible").1;
        let mut ew = Vec::with_capacity(hop_units.len());
        for (hop, u) in path.hops_mut().iter_mut().zip(hop_units) {
            let w = weights_of(u, n);
            hop.set_weights(w.clone())?;
            ew.push(w);
        }
        edge_weights.push(ew);
    }
    let path_weights = weights_of(&units, n);
    let value = objective(&chosen, &path_weights, x).map_err(AllocationError::Infeasible)?;
    Ok(GridResult { path_weights, edge_weights, objective: value })
}

fn check_paths(paths: &[MultiEdgePath], spec: &GridSpec) -> Result<(), AllocationError> {
    if paths.is_empty() {
        return Err(AllocationError::NoPaths);
    }
    if paths.len() > spec.max_paths {
        return Err(AllocationError::TooManyPaths { max: spec.max_paths, got: paths.len() });
    }
    Ok(())
}

/// All compositions of `n` into `parts` non-negative parts, lexicographic.
fn compositions(n: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![n]];
    }
    let mut out = Vec::new();
    for k in 0..=n {
        for mut rest in compositions(n - k, parts - 1) {
            rest.insert(0, k);
            out.push(rest);
        }
    }
    out
}

fn binomial(n: u128, k: u128) -> u128 {
    (0..k).fold(1u128, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Reference for [`grid_oracle`]: evaluates the exact objective at every
/// lattice point of every simplex. Only practical for coarse steps.
pub fn grid_brute_force(paths: &[MultiEdgePath], x: Amount, spec: &GridSpec) -> Result<GridResult, AllocationError> {
    let n = spec.divisions()?;
    check_paths(paths, spec)?;
    let mut simplices = vec![paths.len()];
    for p in paths {
        simplices.extend(p.hops().iter().map(|h| h.legs().len()));
    }
    let points = simplices
        .iter()
        .map(|&d| binomial((n + d - 1) as u128, (d - 1) as u128))
        .fold(1u128, u128::saturating_mul);
    if points > BRUTE_FORCE_LIMIT {
        return Err(AllocationError::InvalidGrid(format!("{points} lattice points exceed the brute-force limit")));
    }
    let options: Vec<Vec<Vec<usize>>> = simplices.iter().map(|&d| compositions(n, d)).collect();
    let mut best: Option<(Amount, Vec<Vec<usize>>)> = None;
    let mut pick = vec![0usize; options.len()];
    loop {
        let point: Vec<Vec<usize>> = pick.iter().zip(&options).map(|(&i, o)| o[i].clone()).collect();
        let mut candidate = paths.to_vec();
        let mut s = 1;
        for p in candidate.iter_mut() {
            for hop in p.hops_mut() {
                hop.set_weights(weights_of(&point[s], n))?;
                s += 1;
            }
        }
        if let Ok(v) = objective(&candidate, &weights_of(&point[0], n), x) {
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, point));
            }
        }
        // Odometer over the product of simplices, last coordinate fastest.
        let mut d = options.len();
        loop {
            if d == 0 {
                let (value, point) = best.ok_or_else(|| AllocationError::InvalidGrid("no feasible lattice point".into()))?;
                let mut edge_weights = Vec::new();
                let mut s = 1;
                for p in paths {
                    edge_weights.push(p.hops().iter().map(|_| {
                        s += 1;
                        weights_of(&point[s - 1], n)
                    }).collect());
                }
                return Ok(GridResult { path_weights: weights_of(&point[0], n), edge_weights, objective: value });
            }
            d -= 1;
            pick[d] += 1;
            if pick[d] < options[d].len() {
                break;
            }
            pick[d] = 0;
        }
    }
}
