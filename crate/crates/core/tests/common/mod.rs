#![allow(dead_code)]

use prime_core::allocation::{path_shares, MultiEdgePath};
use prime_core::graph::DirectedCurve;
use prime_core::{Amount, Hop, Leg, Pool, PoolKind, Segment, SwapGraph, Token};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn tok(i: usize) -> String {
    format!("t{i}")
}

pub fn tokens(n: usize) -> Vec<Token> {
    (0..n).map(|i| Token { id: tok(i), symbol: tok(i).to_uppercase(), decimals: 18 }).collect()
}

pub fn amount(v: f64) -> Amount {
    Amount::from_f64_floor(v).unwrap()
}

/// Reserve drawn log-uniformly from `[10^lo, 10^hi)`.
pub fn reserve(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo..hi))
}

/// Segments with continuous prices: each ends where the next begins.
pub fn continuous_curve(r_in: f64, r_out: f64, n: usize) -> Vec<Segment> {
    let growth = 1.5f64;
    (0..n)
        .map(|k| {
            let s = growth.powi(k as i32);
            let cap = if k + 1 == n { r_in * 100.0 } else { r_in * s * (growth - 1.0) };
            Segment { capacity_in: amount(cap), virtual_reserve_in: amount(r_in * s), virtual_reserve_out: amount(r_out / s) }
        })
        .collect()
}

pub fn random_pool(rng: &mut ChaCha8Rng, id: &str, a: &str, b: &str, piecewise_share: f64) -> Pool {
    let (ra, rb) = (reserve(rng, 18.0, 22.0), reserve(rng, 18.0, 22.0));
    let fee = [0u16, 5, 30, 100][rng.random_range(0..4)];
    if rng.random_bool(piecewise_share) {
        let n = rng.random_range(2..=3);
        Pool {
            id: id.into(),
            tokens: vec![a.into(), b.into()],
            fee_bps: fee,
            kind: PoolKind::PiecewiseLiquidity {
                curves: vec![
                    DirectedCurve { token_in: a.into(), token_out: b.into(), segments: continuous_curve(ra, rb, n) },
                    DirectedCurve { token_in: b.into(), token_out: a.into(), segments: continuous_curve(rb, ra, n) },
                ],
            },
        }
    } else {
        Pool::constant_product(id, &[a, b], &[amount(ra), amount(rb)], fee)
    }
}

/// A random pool graph on `n` tokens; a spanning chain through a random
/// order keeps `t0` and `t{n-1}` connected.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, pools: usize, piecewise_share: f64) -> SwapGraph {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut pairs: Vec<(usize, usize)> = order.windows(2).map(|w| (w[0], w[1])).collect();
    while pairs.len() < pools {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            pairs.push((a, b));
        }
    }
    let list = pairs
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| random_pool(rng, &format!("p{k:02}"), &tok(a), &tok(b), piecewise_share))
        .collect();
    SwapGraph::build(tokens(n), list).unwrap()
}

pub fn leg(g: &SwapGraph, pool: &str, a: &str, b: &str) -> Leg {
    Leg::single(g.find_edge(pool, a, b).unwrap().clone())
}

/// `k` pool-disjoint CP paths from `t0` to `t1`, path `i` routed through its
/// own intermediates. Some hops get a parallel second pool.
pub fn random_paths(rng: &mut ChaCha8Rng, k: usize, parallel: bool) -> (SwapGraph, Vec<MultiEdgePath>) {
    let mut pools = Vec::new();
    let mut routes: Vec<Vec<Vec<String>>> = Vec::new();
    let mut next_token = 2;
    for i in 0..k {
        let hops = rng.random_range(1..=3);
        let mut chain = vec![tok(0)];
        for _ in 1..hops {
            chain.push(tok(next_token));
            next_token += 1;
        }
        chain.push(tok(1));
        let mut route = Vec::new();
        for (h, w) in chain.windows(2).enumerate() {
            let width = if parallel && rng.random_bool(0.3) { 2 } else { 1 };
            let mut ids = Vec::new();
            for j in 0..width {
                let id = format!("p{i}_{h}_{j}");
                let (ra, rb) = (reserve(rng, 20.0, 22.0), reserve(rng, 20.0, 22.0));
                let fee = [0u16, 5, 30][rng.random_range(0..3)];
                pools.push(Pool::constant_product(&id, &[&w[0], &w[1]], &[amount(ra), amount(rb)], fee));
                ids.push(id);
            }
            route.push(ids.into_iter().chain([w[0].clone(), w[1].clone()]).collect());
        }
        routes.push(route);
    }
    let g = SwapGraph::build(tokens(next_token), pools).unwrap();
    let paths = routes
        .iter()
        .map(|route| {
            let hops = route
                .iter()
                .map(|h| {
                    let (a, b) = (&h[h.len() - 2], &h[h.len() - 1]);
                    let legs: Vec<Leg> = h[..h.len() - 2].iter().map(|p| leg(&g, p, a, b)).collect();
                    let w = vec![1.0 / legs.len() as f64; legs.len()];
                    Hop::new(legs, w).unwrap()
                })
                .collect();
            MultiEdgePath::new(hops).unwrap()
        })
        .collect();
    (g, paths)
}

/// `(max − min) / max` of path marginal prices over paths carrying input.
pub fn marginal_spread(paths: &[MultiEdgePath], weights: &[f64], x: Amount) -> f64 {
    let g: Vec<f64> = paths.iter().zip(path_shares(x, weights)).map(|(p, a)| p.marginal_price(a).unwrap()).collect();
    let max = g.iter().copied().fold(f64::MIN, f64::max);
    let min = g.iter().zip(weights).filter(|(_, w)| **w > 0.0).map(|(g, _)| *g).fold(f64::MAX, f64::min);
    (max - min) / max
}
