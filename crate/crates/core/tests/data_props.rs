mod common;

use std::collections::VecDeque;

use common::random_graph;
use prime_core::bench::{hub_pairs, ladder_cases, run_bench, BenchSettings, Engines};
use prime_core::io::parse_snapshot;
use prime_core::{generate_synthetic, load_snapshot, save_snapshot, Amount, Router, RouteQuery, Snapshot, SwapGraph, SynthParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn snapshot_of(g: &SwapGraph, block: &str) -> Snapshot {
    let tokens = (0..g.token_count()).map(|u| g.token(u).clone()).collect();
    Snapshot::new(block, tokens, g.pools().map(|p| (**p).clone()).collect())
}

fn params(seed: u64, n_tokens: usize, n_pools: usize, spread: u32) -> SynthParams {
    SynthParams { seed, n_tokens, n_pools, hub_fraction: 0.1, reserve_spread_orders: spread }
}

/// Whole-unit value of every token in units of token 0, propagated along
/// spot prices; `None` for unreachable tokens.
fn token_values(g: &SwapGraph) -> Vec<Option<f64>> {
    let mut value = vec![None; g.token_count()];
    value[0] = Some(1.0);
    let mut queue = VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for (v, e) in g.out_edges(u) {
            if value[v].is_none() {
                let shift = i32::from(g.token(u).decimals) - i32::from(g.token(v).decimals);
                let rate = e.func.spot_price() * 10f64.powi(shift);
                value[v] = Some(value[u].unwrap() / rate);
                queue.push_back(v);
            }
        }
    }
    value
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn snapshot_round_trips(seed in any::<u64>(), n in 2usize..8, extra in 0usize..6) {
        let g = random_graph(&mut ChaCha8Rng::seed_from_u64(seed), n, n - 1 + extra, 0.3);
        let snap = snapshot_of(&g, &format!("block-{seed}"));
        let path = std::env::temp_dir().join(format!("snapshot-{seed}-{}.json", std::process::id()));
        save_snapshot(&snap, &path).unwrap();
        let back = load_snapshot(&path).unwrap();
        std::fs::remove_file(&path).unwrap();
        prop_assert_eq!(&back, &snap);
        prop_assert_eq!(back.hash(), snap.hash());
        prop_assert_eq!(parse_snapshot(&snap.to_canonical_json()).unwrap(), snap);
    }

    #[test]
    fn hash_ignores_formatting(seed in any::<u64>(), n in 2usize..6) {
        let g = random_graph(&mut ChaCha8Rng::seed_from_u64(seed), n, n + 1, 0.3);
        let snap = snapshot_of(&g, "b");
        let pretty = serde_json::to_string_pretty(&snap).unwrap();
        prop_assert_eq!(parse_snapshot(&pretty).unwrap().hash(), snap.hash());
        let mut other = snap.clone();
        other.block_ref.push('x');
        prop_assert_ne!(other.hash(), snap.hash());
    }

    #[test]
    fn tree_budget_gives_a_spanning_tree(seed in any::<u64>(), n in 2usize..200) {
        let snap = generate_synthetic(&params(seed, n, n - 1, 6)).unwrap();
        let g = snap.to_graph().unwrap();
        prop_assert_eq!(g.pools().count(), n - 1);
        prop_assert!(token_values(&g).iter().all(Option::is_some));
    }

    #[test]
    fn generator_is_deterministic(seed in any::<u64>(), n in 2usize..60, extra in 0usize..60) {
        let a = generate_synthetic(&params(seed, n, n - 1 + extra, 8)).unwrap();
        let b = generate_synthetic(&params(seed, n, n - 1 + extra, 8)).unwrap();
        prop_assert_eq!(a.hash(), b.hash());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn prices_span_the_requested_orders(seed in any::<u64>(), n in 20usize..200) {
        let g = generate_synthetic(&params(seed, n, n - 1, 11)).unwrap().to_graph().unwrap();
        let values: Vec<f64> = token_values(&g).into_iter().map(Option::unwrap).collect();
        let max = values.iter().copied().fold(f64::MIN, f64::max);
        let min = values.iter().copied().fold(f64::MAX, f64::min);
        prop_assert!(max / min >= 1e10, "spread {}", max / min);
    }

    #[test]
    fn bench_outputs_are_reproducible(seed in 0u64..1000) {
        let g = generate_synthetic(&params(seed, 60, 150, 6)).unwrap().to_graph().unwrap();
        let template = RouteQuery::new("", "", Amount::ONE);
        let engines = Engines::new(Router::new(&g, &template.hubs, &template.shortcuts));
        let pairs = hub_pairs(&engines.router, 3);
        let cases = ladder_cases(&g, "s", &pairs, &[1, 1000]).unwrap();
        let mut settings = BenchSettings::new(template);
        settings.repetitions = 1;
        let strip = |s: &BenchSettings| -> Vec<(String, Amount, usize)> {
            run_bench(&engines, &cases, s).unwrap().rows.into_iter().map(|r| (r.algorithm, r.output, r.paths)).collect()
        };
        let serial = strip(&settings);
        settings.jobs = 4;
        prop_assert_eq!(strip(&settings), serial);
    }
}
