//! Multi-edge path evaluation and the Adaptive Sign Gradient Method.
//!
//! A multi-edge path is a chain of hops; each hop splits its input over
//! parallel legs by weight and forwards the summed output to the next hop.
//! The allocator moves input between paths (and between legs of a hop) from
//! the lowest marginal price to the highest, with an Armijo backtracking step,
//! until marginal prices agree.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::amount::Amount;
use crate::discovery::SinglePath;
use crate::error::{AllocationError, SwapError};
use crate::graph::Leg;

/// Weight drift tolerated before a simplex is renormalised.
const SIMPLEX_DRIFT: f64 = 1e-12;

/// Parallel legs between the same two tokens with their share of the hop
/// input.
#[derive(Clone, Debug, PartialEq)]
pub struct Hop {
    legs: Vec<Leg>,
    weights: Vec<f64>,
}

impl Hop {
    pub fn new(legs: Vec<Leg>, weights: Vec<f64>) -> Result<Hop, AllocationError> {
        if legs.is_empty() || legs.len() != weights.len() {
            return Err(AllocationError::InvalidWeights("hop needs one weight per leg".into()));
        }
        let (a, b) = (legs[0].token_in(), legs[0].token_out());
        if legs.iter().any(|l| l.token_in() != a || l.token_out() != b) {
            return Err(AllocationError::InvalidWeights("hop legs must join the same tokens".into()));
        }
        check_simplex(&weights)?;
        Ok(Hop { legs, weights })
    }

    pub fn single(leg: Leg) -> Hop {
        Hop { legs: vec![leg], weights: vec![1.0] }
    }

    pub fn legs(&self) -> &[Leg] {
        &self.legs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn token_in(&self) -> &Arc<str> {
        self.legs[0].token_in()
    }

    pub fn token_out(&self) -> &Arc<str> {
        self.legs[0].token_out()
    }

    /// Adds a leg at weight zero.
    pub fn push_leg(&mut self, leg: Leg) {
        self.legs.push(leg);
        self.weights.push(0.0);
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<(), AllocationError> {
        if weights.len() != self.legs.len() {
            return Err(AllocationError::InvalidWeights("weight count mismatch".into()));
        }
        check_simplex(&weights)?;
        self.weights = weights;
        Ok(())
    }

    /// Integer input per leg; see [`split_amount`].
    pub fn split(&self, amount: Amount) -> Vec<Amount> {
        split_amount(amount, &self.weights, |i, j| self.legs[i].key() < self.legs[j].key())
    }

    pub fn output(&self, amount: Amount) -> Result<Amount, SwapError> {
        let mut total = Amount::ZERO;
        for (leg, share) in self.legs.iter().zip(self.split(amount)) {
            total = total.checked_add(leg.swap_out(share)?)?;
        }
        Ok(total)
    }
}

fn check_simplex(weights: &[f64]) -> Result<(), AllocationError> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(AllocationError::InvalidWeights("weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(AllocationError::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    Ok(())
}

fn renormalise(weights: &mut [f64]) {
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_DRIFT && sum > 0.0 {
        for w in weights.iter_mut() {
            *w /= sum;
        }
    }
}

/// Splits `amount` as `floor(w_i · amount)` and hands the leftover units to
/// the largest weight (`earlier(i, j)` breaks ties), so the parts always sum
/// to `amount` exactly.
pub fn split_amount<F: Fn(usize, usize) -> bool>(amount: Amount, weights: &[f64], earlier: F) -> Vec<Amount> {
    let mut shares: Vec<Amount> = weights.iter().map(|&w| amount.mul_weight_floor(w)).collect();
    let mut lead = 0;
    for i in 1..weights.len() {
        if weights[i] > weights[lead] || (weights[i] == weights[lead] && earlier(i, lead)) {
            lead = i;
        }
    }
    let total: Amount = shares.iter().copied().sum();
    if total <= amount {
        shares[lead] = shares[lead].checked_add(amount.saturating_sub(total)).expect("share within amount");
    } else {
        // Weights summing a hair above one; trim the largest share.
        shares[lead] = shares[lead].saturating_sub(total.saturating_sub(amount));
    }
    shares
}

/// Integer input per path for path weights `weights`; ties go to the lower
/// index.
pub fn path_shares(amount: Amount, weights: &[f64]) -> Vec<Amount> {
    split_amount(amount, weights, |i, j| i < j)
}

/// Operating point of a path at a given input.
#[derive(Clone, Debug)]
pub struct PathEval {
    pub output: Amount,
    pub hop_inputs: Vec<Amount>,
    pub shares: Vec<Vec<Amount>>,
    /// Derivative of each leg at its share.
    pub leg_marginals: Vec<Vec<f64>>,
    /// `Σ_e w_e · leg_e'(share_e)` per hop.
    pub hop_derivatives: Vec<f64>,
}

impl PathEval {
    pub fn marginal_price(&self) -> f64 {
        self.hop_derivatives.iter().product()
    }

    /// Product of hop derivatives strictly after `hop`.
    pub fn downstream(&self, hop: usize) -> f64 {
        self.hop_derivatives[hop + 1..].iter().product()
    }
}

/// An ordered sequence of hops from source to target.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiEdgePath {
    hops: Vec<Hop>,
}

impl MultiEdgePath {
    pub fn new(hops: Vec<Hop>) -> Result<MultiEdgePath, AllocationError> {
        if hops.is_empty() {
            return Err(AllocationError::InvalidWeights("path needs at least one hop".into()));
        }
        for w in hops.windows(2) {
            if w[0].token_out() != w[1].token_in() {
                return Err(AllocationError::InvalidWeights("hops must chain".into()));
            }
        }
        let path = MultiEdgePath { hops };
        let mut seen = HashSet::new();
        for p in path.pools() {
            if !seen.insert(p.clone()) {
                return Err(AllocationError::SharedPool(p.to_string()));
            }
        }
        Ok(path)
    }

    pub fn from_single(path: &SinglePath) -> MultiEdgePath {
        MultiEdgePath { hops: path.legs.iter().cloned().map(Hop::single).collect() }
    }

    pub fn hops(&self) -> &[Hop] {
        &self.hops
    }

    pub fn hops_mut(&mut self) -> &mut [Hop] {
        &mut self.hops
    }

    pub fn pools(&self) -> impl Iterator<Item = &Arc<str>> {
        self.hops.iter().flat_map(|h| h.legs.iter().flat_map(Leg::pools))
    }

    /// Hop endpoint tokens from source to target.
    pub fn tokens(&self) -> Vec<Arc<str>> {
        let mut out = vec![self.hops[0].token_in().clone()];
        out.extend(self.hops.iter().map(|h| h.token_out().clone()));
        out
    }

    pub fn edge_weights(&self) -> Vec<Vec<f64>> {
        self.hops.iter().map(|h| h.weights.clone()).collect()
    }

    fn has_parallel_legs(&self) -> bool {
        self.hops.iter().any(|h| h.legs.len() > 1)
    }

    /// Exact output for input `x`; each hop consumes its whole input.
    pub fn output(&self, x: Amount) -> Result<Amount, SwapError> {
        self.hops.iter().try_fold(x, |a, hop| hop.output(a))
    }

    pub fn evaluate(&self, x: Amount) -> Result<PathEval, SwapError> {
        let mut amount = x;
        let mut eval = PathEval {
            output: Amount::ZERO,
            hop_inputs: Vec::with_capacity(self.hops.len()),
            shares: Vec::with_capacity(self.hops.len()),
            leg_marginals: Vec::with_capacity(self.hops.len()),
            hop_derivatives: Vec::with_capacity(self.hops.len()),
        };
        for hop in &self.hops {
            let shares = hop.split(amount);
            let mut out = Amount::ZERO;
            let mut marginals = Vec::with_capacity(shares.len());
            let mut derivative = 0.0;
            for ((leg, &share), &w) in hop.legs.iter().zip(&shares).zip(&hop.weights) {
                out = out.checked_add(leg.swap_out(share)?)?;
                let m = leg.marginal_price(share)?;
                derivative += w * m;
                marginals.push(m);
            }
            eval.hop_inputs.push(amount);
            eval.shares.push(shares);
            eval.leg_marginals.push(marginals);
            eval.hop_derivatives.push(derivative);
            amount = out;
        }
        eval.output = amount;
        Ok(eval)
    }

    /// Chain-rule derivative of the path output at input `a`.
    pub fn marginal_price(&self, a: Amount) -> Result<f64, SwapError> {
        Ok(self.evaluate(a)?.marginal_price())
    }
}

/// `Σ_p f_p(share_p)` with shares from [`path_shares`].
pub fn objective(paths: &[MultiEdgePath], weights: &[f64], x: Amount) -> Result<Amount, SwapError> {
    let mut total = Amount::ZERO;
    for (p, share) in paths.iter().zip(path_shares(x, weights)) {
        total = total.checked_add(p.output(share)?)?;
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsgmParams {
    /// Armijo sufficient-increase fraction.
    pub alpha: f64,
    /// Backtracking decay.
    pub beta: f64,
    /// Initial step, as a fraction of the simplex.
    pub delta0: f64,
    pub delta_min: f64,
    pub max_iters: usize,
    /// Relative marginal-price spread treated as converged.
    pub eps_rel: f64,
}

impl Default for AsgmParams {
    fn default() -> Self {
        AsgmParams { alpha: 1e-4, beta: 0.5, delta0: 0.25, delta_min: 1e-12, max_iters: 1000, eps_rel: 1e-6 }
    }
}

impl AsgmParams {
    pub fn validate(&self) -> Result<(), AllocationError> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.alpha) || !open_unit(self.beta) {
            return Err(AllocationError::InvalidWeights("alpha and beta must lie in (0, 1)".into()));
        }
        if !(self.delta0 > 0.0 && self.delta_min > 0.0 && self.eps_rel > 0.0) {
            return Err(AllocationError::InvalidWeights("step sizes and tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Path weights plus each path's per-hop leg weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub path_weights: Vec<f64>,
    pub edge_weights: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub t: usize,
    pub objective: Amount,
    pub g_max: f64,
    pub g_min: f64,
    pub delta: f64,
    pub backtracks: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Marginal prices agree within tolerance.
    Converged,
    /// No trial step down to the minimum size could be evaluated.
    StepUnderflow,
    IterationLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceTrace {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
}

impl ConvergenceTrace {
    pub fn degraded(&self) -> bool {
        matches!(self.termination, Termination::StepUnderflow | Termination::IterationLimit)
    }

    /// Outer iterations taken (records after the initial state).
    /// Accepted steps on the path simplex.
    pub fn iterations(&self) -> usize {
        self.records.iter().filter(|r| r.delta > 0.0).count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,J,g_max,g_min,delta\n");
        for r in &self.records {
            let _ = writeln!(out, "{},{},{:e},{:e},{:e}", r.t, r.objective, r.g_max, r.g_min, r.delta);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct AsgmResult {
    /// Input paths with optimised leg weights.
    pub paths: Vec<MultiEdgePath>,
    pub allocation: Allocation,
    /// Marginal price at termination (the largest over paths).
    pub tau: f64,
    pub objective: Amount,
    pub trace: ConvergenceTrace,
}

/// Runs the allocator from the uniform allocation.
pub fn asgm(paths: &[MultiEdgePath], x: Amount, params: &AsgmParams) -> Result<AsgmResult, AllocationError> {
    asgm_from(paths, x, params, None)
}

/// `(argmax over all, argmin over positive weight)` of `g`, lowest index on ties.
fn extremes(g: &[f64], weights: &[f64]) -> (usize, Option<usize>) {
    let mut hi = 0;
    let mut lo: Option<usize> = None;
    for i in 0..g.len() {
        if g[i] > g[hi] {
            hi = i;
        }
        if weights[i] > 0.0 && lo.is_none_or(|l| g[i] < g[l]) {
            lo = Some(i);
        }
    }
    (hi, lo)
}

enum Step {
    Accepted { delta: f64, value: Amount, backtracks: u32 },
    /// Feasible trials exist but none raises the objective: stationary at
    /// unit resolution.
    Flat,
    /// Every trial step was infeasible.
    Underflow,
}

/// Backtracks from `min(Δ₀, w[lo])` until moving Δ from `lo` to `hi` gains at
/// least `α·Δ·slope` (rounded toward zero) and at least one unit. When rounding
/// noise defeats that margin at every Δ, the trial with the largest strict
/// gain is taken instead, so each accepted step still raises the objective.
fn line_search<F>(weights: &[f64], hi: usize, lo: usize, slope: f64, current: Amount, params: &AsgmParams, eval: F) -> Step
where
    F: Fn(&[f64]) -> Result<Amount, SwapError>,
{
    let mut delta = params.delta0.min(weights[lo]);
    let mut backtracks = 0;
    let mut trial = weights.to_vec();
    let mut feasible = false;
    let mut fallback: Option<(f64, Amount)> = None;
    while delta >= params.delta_min {
        trial.copy_from_slice(weights);
        trial[hi] += delta;
        trial[lo] = if delta >= weights[lo] { 0.0 } else { weights[lo] - delta };
        if let Ok(value) = eval(&trial) {
            feasible = true;
            let predicted = Amount::from_f64_floor(params.alpha * delta * slope).unwrap_or(Amount::MAX).max(Amount::ONE);
            if current.checked_add(predicted).is_ok_and(|need| value >= need) {
                return Step::Accepted { delta, value, backtracks };
            }
            if value > current && fallback.is_none_or(|(_, v)| value > v) {
                fallback = Some((delta, value));
            }
        }
        delta *= params.beta;
        backtracks += 1;
    }
    match fallback {
        Some((delta, value)) => Step::Accepted { delta, value, backtracks },
        None if feasible => Step::Flat,
        None => Step::Underflow,
    }
}

/// Rebalances the leg weights of every hop of `path` at input `a`, hop by
/// hop, until leg marginal prices agree within `tol`. Paths with no input get
/// all hop weight on their best leg at zero.
fn optimise_legs(path: &mut MultiEdgePath, a: Amount, params: &AsgmParams, tol: f64) {
    if a.is_zero() {
        for hop in &mut path.hops {
            if hop.legs.len() < 2 {
                continue;
            }
            let spots: Vec<f64> = hop.legs.iter().map(Leg::spot_price).collect();
            let best = (0..spots.len()).fold(0, |b, i| if spots[i] > spots[b] { i } else { b });
            hop.weights.iter_mut().enumerate().for_each(|(i, w)| *w = if i == best { 1.0 } else { 0.0 });
        }
        return;
    }
    for h in 0..path.hops.len() {
        if path.hops[h].legs.len() < 2 {
            continue;
        }
        for _ in 0..params.max_iters {
            let Ok(eval) = path.evaluate(a) else {
                return;
            };
            let weights = path.hops[h].weights.clone();
            let (hi, Some(lo)) = extremes(&eval.leg_marginals[h], &weights) else {
                break;
            };
            let (g_hi, g_lo) = (eval.leg_marginals[h][hi], eval.leg_marginals[h][lo]);
            if hi == lo || g_hi - g_lo <= tol * g_hi {
                break;
            }
            let slope = eval.hop_inputs[h].to_f64() * (g_hi - g_lo) * eval.downstream(h);
            let step = line_search(&weights, hi, lo, slope, eval.output, params, |trial| {
                let mut candidate = path.clone();
                candidate.hops[h].weights.copy_from_slice(trial);
                candidate.output(a)
            });
            match step {
                Step::Accepted { delta, .. } => {
                    let w = &mut path.hops[h].weights;
                    let take = delta.min(w[lo]);
                    w[hi] += take;
                    w[lo] = if delta >= weights[lo] { 0.0 } else { w[lo] - take };
                    renormalise(w);
                }
                Step::Flat | Step::Underflow => break,
            }
        }
    }
}

/// Runs the allocator from `start` (uniform when `None`). Zero-weight paths
/// stay in play and regain mass once their marginal price at zero is the
/// largest.
pub fn asgm_from(
    paths: &[MultiEdgePath],
    x: Amount,
    params: &AsgmParams,
    start: Option<&[f64]>,
) -> Result<AsgmResult, AllocationError> {
    if paths.is_empty() {
        return Err(AllocationError::NoPaths);
    }
    if x.is_zero() {
        return Err(AllocationError::ZeroInput);
    }
    params.validate()?;
    let mut seen = HashSet::new();
    for p in paths.iter().flat_map(MultiEdgePath::pools) {
        if !seen.insert(p.clone()) {
            return Err(AllocationError::SharedPool(p.to_string()));
        }
    }
    let n = paths.len();
    let mut weights = match start {
        Some(w) => {
            if w.len() != n {
                return Err(AllocationError::InvalidWeights("start has wrong length".into()));
            }
            check_simplex(w)?;
            w.to_vec()
        }
        None => vec![1.0 / n as f64; n],
    };
    let mut paths = paths.to_vec();
    let x_f = x.to_f64();
    let inner_tol = 10.0 * params.eps_rel;

    let marginals = |paths: &[MultiEdgePath], weights: &[f64]| -> Vec<f64> {
        paths
            .iter()
            .zip(path_shares(x, weights))
            .map(|(p, a)| p.marginal_price(a).unwrap_or(0.0))
            .collect()
    };

    let mut value = objective(&paths, &weights, x).map_err(AllocationError::Infeasible)?;
    let g0 = marginals(&paths, &weights);
    let (hi0, lo0) = extremes(&g0, &weights);
    let mut records = vec![IterationRecord {
        t: 0,
        objective: value,
        g_max: g0[hi0],
        g_min: lo0.map_or(g0[hi0], |l| g0[l]),
        delta: 0.0,
        backtracks: 0,
    }];
    let mut termination = Termination::IterationLimit;

    for t in 1..=params.max_iters {
        if paths.iter().any(MultiEdgePath::has_parallel_legs) {
            for (p, a) in paths.iter_mut().zip(path_shares(x, &weights)) {
                optimise_legs(p, a, params, inner_tol);
            }
            value = objective(&paths, &weights, x).map_err(AllocationError::Infeasible)?;
        }
        let g = marginals(&paths, &weights);
        let (hi, lo) = extremes(&g, &weights);
        let lo = lo.expect("some path carries weight");
        let (g_max, g_min) = (g[hi], g[lo]);
        // `hi == lo`: every weighted path already sits at the top price.
        if n == 1 || hi == lo || g_max - g_min <= params.eps_rel * g_max {
            termination = Termination::Converged;
            break;
        }
        let slope = x_f * (g_max - g_min);
        match line_search(&weights, hi, lo, slope, value, params, |trial| objective(&paths, trial, x)) {
            Step::Accepted { delta, value: next, backtracks } => {
                weights[hi] += delta;
                weights[lo] = if delta >= weights[lo] { 0.0 } else { weights[lo] - delta };
                renormalise(&mut weights);
                value = next;
                records.push(IterationRecord { t, objective: value, g_max, g_min, delta, backtracks });
            }
            Step::Flat => {
                termination = Termination::Converged;
                break;
            }
            Step::Underflow => {
                termination = Termination::StepUnderflow;
                break;
            }
        }
    }

    let g = marginals(&paths, &weights);
    let tau = g.iter().copied().fold(f64::MIN, f64::max);
    let last = records.last().expect("initial record");
    if last.objective != value {
        // Leg rebalancing moved the objective after the last path step.
        let (hi, lo) = extremes(&g, &weights);
        let t = last.t + 1;
        let g_min = lo.map_or(g[hi], |l| g[l]);
        records.push(IterationRecord { t, objective: value, g_max: g[hi], g_min, delta: 0.0, backtracks: 0 });
    }
    let allocation = Allocation {
        path_weights: weights,
        edge_weights: paths.iter().map(MultiEdgePath::edge_weights).collect(),
    };
    Ok(AsgmResult { paths, allocation, tau, objective: value, trace: ConvergenceTrace { records, termination } })
}
