//! Seeded synthetic snapshots with hub-concentrated, heterogeneous liquidity.
//!
//! Topology is a preferential-attachment tree (hub tokens seeded with extra
//! attachment weight) plus extra pools between degree-weighted endpoints.
//! Each token gets a price exponent `e ∈ [0, spread]`; a pool of value `L`
//! holds `L · 10^e · 10^decimals` raw units of each of its tokens.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amount::Amount;
use crate::cfmm::Segment;
use crate::graph::{DirectedCurve, Pool, PoolKind, Token};
use crate::io::Snapshot;

const FEE_TIERS: [u16; 3] = [5, 30, 100];
const DECIMALS: [u8; 3] = [6, 8, 18];
/// Share of pools modelled as concentrated liquidity.
const PIECEWISE_SHARE: f64 = 0.1;
/// Ratio between consecutive segment reserves of a piecewise curve.
const SEGMENT_GROWTH: f64 = 1.25;
/// Attachment weight each hub starts with, in units of pool endpoints.
const HUB_SEED_WEIGHT: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub n_tokens: usize,
    pub n_pools: usize,
    /// Fraction of tokens that are hubs (the first ones).
    pub hub_fraction: f64,
    /// Orders of magnitude spanned by token price exponents.
    pub reserve_spread_orders: u32,
}

impl SynthParams {
    pub fn hub_count(&self) -> usize {
        ((self.hub_fraction * self.n_tokens as f64).ceil() as usize).clamp(1, self.n_tokens)
    }
}

pub fn token_id(i: usize) -> String {
    format!("0x{i:040x}")
}

fn raw(value: f64) -> Amount {
    Amount::from_f64_floor(value.max(1e3)).expect("generated reserves fit 256 bits")
}

/// Price-continuous segments: segment k has reserves `(r_in·c^k, r_out/c^k)`
/// and spans exactly the input that moves the curve onto segment k+1's
/// reserves; the last one is effectively unbounded.
fn curve(r_in: f64, r_out: f64, segments: usize) -> Vec<Segment> {
    (0..segments)
        .map(|k| {
            let scale = SEGMENT_GROWTH.powi(k as i32);
            let capacity = if k + 1 == segments { r_in * 1e3 } else { r_in * scale * (SEGMENT_GROWTH - 1.0) };
            Segment {
                capacity_in: raw(capacity),
                virtual_reserve_in: raw(r_in * scale),
                virtual_reserve_out: raw(r_out / scale),
            }
        })
        .collect()
}

/// Deterministic for a given parameter set. `n_pools = n_tokens − 1` yields
/// a spanning tree.
pub fn generate_synthetic(p: &SynthParams) -> Result<Snapshot, SynthError> {
    if p.n_tokens < 2 {
        return Err(SynthError::InvalidParams("need at least two tokens".into()));
    }
    if p.n_pools < p.n_tokens - 1 {
        return Err(SynthError::InvalidParams(format!("{} pools cannot connect {} tokens", p.n_pools, p.n_tokens)));
    }
    if !(p.hub_fraction > 0.0 && p.hub_fraction <= 1.0) {
        return Err(SynthError::InvalidParams("hub_fraction must lie in (0, 1]".into()));
    }
    if p.reserve_spread_orders > 30 {
        return Err(SynthError::InvalidParams("reserve_spread_orders must be at most 30".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n = p.n_tokens;
    let hubs = p.hub_count();
    let spread = f64::from(p.reserve_spread_orders);

    let mut decimals: Vec<u8> = (0..n).map(|_| *DECIMALS.choose(&mut rng).expect("non-empty")).collect();
    let mut exponent: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=spread)).collect();
    // Pin the extremes so the full spread is always present.
    exponent[0] = 0.0;
    decimals[0] = 6;
    if n > 1 {
        exponent[n - 1] = spread;
        decimals[n - 1] = 18;
    }
    let tokens: Vec<Token> = (0..n)
        .map(|i| Token { id: token_id(i), symbol: format!("T{i}"), decimals: decimals[i] })
        .collect();

    // Endpoint list: sampling from it is degree-proportional.
    let mut ends: Vec<usize> = (0..hubs).flat_map(|h| std::iter::repeat_n(h, HUB_SEED_WEIGHT)).collect();
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(p.n_pools);
    for i in 1..n {
        let j = if i <= hubs || ends.is_empty() { rng.random_range(0..i) } else { pick_earlier(&mut rng, &ends, i) };
        pairs.push((j, i));
        ends.extend([i, j]);
    }
    while pairs.len() < p.n_pools {
        let a = *ends.choose(&mut rng).expect("tree has endpoints");
        let b = if rng.random_bool(0.5) { *ends.choose(&mut rng).expect("non-empty") } else { rng.random_range(0..n) };
        if a == b {
            continue;
        }
        pairs.push((a.min(b), a.max(b)));
        ends.extend([a, b]);
    }

    let pools = pairs
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let hub_pool = a < hubs && b < hubs;
            let orders = if hub_pool { rng.random_range(5.0..7.0) } else { rng.random_range(2.0..5.0) };
            let value = 10f64.powf(orders);
            let reserve = |t: usize| value * 10f64.powf(exponent[t]) * 10f64.powi(i32::from(decimals[t]));
            let (ra, rb) = (reserve(a), reserve(b));
            let fee = *FEE_TIERS.choose(&mut rng).expect("non-empty");
            let id = format!("pool{k:06}");
            let (ta, tb) = (token_id(a), token_id(b));
            if rng.random_bool(PIECEWISE_SHARE) {
                let segments = rng.random_range(2..=4);
                Pool {
                    id,
                    tokens: vec![ta.clone(), tb.clone()],
                    fee_bps: fee,
                    kind: PoolKind::PiecewiseLiquidity {
                        curves: vec![
                            DirectedCurve { token_in: ta.clone(), token_out: tb.clone(), segments: curve(ra, rb, segments) },
                            DirectedCurve { token_in: tb, token_out: ta, segments: curve(rb, ra, segments) },
                        ],
                    },
                }
            } else {
                Pool::constant_product(&id, &[&ta, &tb], &[raw(ra), raw(rb)], fee)
            }
        })
        .collect();
    Ok(Snapshot::new(&format!("synthetic-{}", p.seed), tokens, pools))
}

/// A degree-weighted token below `limit`.
fn pick_earlier(rng: &mut ChaCha8Rng, ends: &[usize], limit: usize) -> usize {
    loop {
        let j = *ends.choose(rng).expect("non-empty");
        if j < limit {
            return j;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64, n_tokens: usize, n_pools: usize) -> SynthParams {
        SynthParams { seed, n_tokens, n_pools, hub_fraction: 0.2, reserve_spread_orders: 6 }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic(&params(1, 10, 20)).unwrap();
        let b = generate_synthetic(&params(1, 10, 20)).unwrap();
        assert_eq!(a.to_canonical_json(), b.to_canonical_json());
        assert_ne!(a, generate_synthetic(&params(2, 10, 20)).unwrap());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(generate_synthetic(&params(1, 10, 8)).is_err());
        assert!(generate_synthetic(&params(1, 1, 8)).is_err());
        let mut p = params(1, 10, 20);
        p.hub_fraction = 0.0;
        assert!(generate_synthetic(&p).is_err());
    }

    #[test]
    fn builds_a_valid_graph() {
        let s = generate_synthetic(&params(7, 200, 500)).unwrap();
        let g = s.to_graph().unwrap();
        assert_eq!(g.token_count(), 200);
        assert_eq!(g.pool_count(), 500);
    }
}
