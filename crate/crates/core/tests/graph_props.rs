mod common;

use std::collections::{BTreeMap, HashSet};

use common::{random_graph, tok, tokens};
use prime_core::discovery::{enumerate_paths_oracle, simulate_edges};
use prime_core::preprocess::{build_shortcut_index, select_hubs};
use prime_core::{find_path, Amount, EdgeRef, HubMetric, Leg, Pool, SearchGraph, SwapGraph};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn graph(seed: u64, n: usize, pools: usize, piecewise: f64) -> SwapGraph {
    random_graph(&mut ChaCha8Rng::seed_from_u64(seed), n, pools, piecewise)
}

/// All hub-to-hub chains through distinct non-hub tokens and distinct pools.
fn chains(g: &SwapGraph, is_hub: &[bool], max_mid: usize) -> BTreeMap<(String, String), Vec<Leg>> {
    fn walk(
        g: &SwapGraph,
        is_hub: &[bool],
        start: usize,
        u: usize,
        max_mid: usize,
        stack: &mut Vec<EdgeRef>,
        seen: &mut Vec<usize>,
        out: &mut BTreeMap<(String, String), Vec<Leg>>,
    ) {
        for (v, e) in g.out_edges(u) {
            if stack.iter().any(|s| s.pool_id == e.pool_id) || seen.contains(&v) {
                continue;
            }
            stack.push(e.clone());
            if is_hub[v] {
                if stack.len() > 1 {
                    let key = (g.token(start).id.clone(), g.token(v).id.clone());
                    out.entry(key).or_default().push(Leg::chain(stack.clone()));
                }
            } else if stack.len() <= max_mid {
                seen.push(v);
                walk(g, is_hub, start, v, max_mid, stack, seen, out);
                seen.pop();
            }
            stack.pop();
        }
    }
    let mut out = BTreeMap::new();
    for h in (0..g.token_count()).filter(|&u| is_hub[u]) {
        walk(g, is_hub, h, h, max_mid, &mut Vec::new(), &mut vec![h], &mut out);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn multi_token_pool_has_all_ordered_pairs(n in 2usize..6) {
        let ids: Vec<String> = (0..n).map(tok).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let reserves = vec![Amount::from(10u128.pow(20)); n];
        let g = SwapGraph::build(tokens(n), vec![Pool::constant_product("p", &refs, &reserves, 30)]).unwrap();
        prop_assert_eq!(g.edge_count(), n * (n - 1));
        for u in 0..n {
            prop_assert_eq!(g.out_degree(u), n - 1);
        }
    }

    #[test]
    fn pruning_leaves_no_unprotected_leaves(seed in any::<u64>(), n in 3usize..12, extra in 0usize..6) {
        let g = graph(seed, n, n - 1 + extra, 0.0);
        let protected: HashSet<String> = [tok(0)].into();
        let pruned = g.prune_leaf_tokens(&protected);
        prop_assert!(pruned.contains_token(&tok(0)));
        for u in 0..pruned.token_count() {
            let id = &pruned.token(u).id;
            prop_assert!(protected.contains(id) || pruned.neighbours(u).len() >= 2, "{} is a leaf", id);
        }
        // Every pool of the pruned graph comes from the input graph.
        for p in pruned.pools() {
            prop_assert!(g.pool(&p.id).is_some());
        }
    }

    #[test]
    fn shortcut_index_keeps_the_best_chains(seed in any::<u64>(), n in 4usize..10, extra in 0usize..8, k in 1usize..4, width in 1usize..4) {
        let g = graph(seed, n, n - 1 + extra, 0.2);
        let hubs = select_hubs(&g, k, &HubMetric::Degree);
        let is_hub: Vec<bool> = (0..n).map(|u| hubs.contains(&g.token(u).id)).collect();
        let index = build_shortcut_index(&g, &hubs, 2, width);
        let expected = chains(&g, &is_hub, 2);
        for ((a, b), mut legs) in expected {
            legs.sort_by(|x, y| y.spot_price().total_cmp(&x.spot_price()).then_with(|| x.key().cmp(&y.key())));
            let got: Vec<String> = index.get(&a, &b).iter().map(|s| s.leg.key()).collect();
            let want: Vec<String> = legs.iter().take(width).map(Leg::key).collect();
            prop_assert_eq!(got, want, "pair {} -> {}", a, b);
        }
        for s in index.shortcuts() {
            prop_assert!(hubs.contains(&s.hub_in) && hubs.contains(&s.hub_out));
            prop_assert!(s.intermediates().all(|t| !hubs.contains(t)));
        }
    }

    #[test]
    fn find_path_matches_exhaustive_search(seed in any::<u64>(), n in 3usize..10, extra in 0usize..12, m in 1usize..=4, scale in 14.0f64..23.0) {
        let g = graph(seed, n, n - 1 + extra, 0.3);
        let x = common::amount(10f64.powf(scale));
        let (s, t) = (tok(0), tok(n - 1));
        let best = enumerate_paths_oracle(&g, &s, &t, m)
            .unwrap()
            .iter()
            .filter_map(|p| simulate_edges(p, x))
            .filter(|o| !o.is_zero())
            .max();
        let found = find_path(&SearchGraph::from_graph(&g), &s, &t, x, 0.0, m, &HashSet::new());
        prop_assert_eq!(found.path.as_ref().map(|p| p.output), best);
        if let Some(p) = &found.path {
            prop_assert!(p.legs.len() <= m);
            let pools: HashSet<&str> = p.legs.iter().flat_map(|l| l.pools()).map(|p| &**p).collect();
            prop_assert_eq!(pools.len(), p.legs.len());
        }
    }

    #[test]
    fn masked_pools_are_avoided(seed in any::<u64>(), n in 3usize..9, extra in 2usize..10) {
        let g = graph(seed, n, n - 1 + extra, 0.0);
        let sg = SearchGraph::from_graph(&g);
        let x = Amount::from(10u128.pow(18));
        let (s, t) = (tok(0), tok(n - 1));
        let Some(first) = find_path(&sg, &s, &t, x, 0.0, 3, &HashSet::new()).path else { return Ok(()); };
        let masked: HashSet<_> = first.pools().cloned().collect();
        if let Some(second) = find_path(&sg, &s, &t, x, 0.0, 3, &masked).path {
            prop_assert!(second.pools().all(|p| !masked.contains(p)));
            prop_assert!(second.output <= first.output);
        }
    }

    #[test]
    fn threshold_filters_by_average_rate(seed in any::<u64>(), n in 3usize..8, tau in 0.0f64..3.0) {
        let g = graph(seed, n, 2 * n, 0.0);
        let x = Amount::from(10u128.pow(18));
        let found = find_path(&SearchGraph::from_graph(&g), &tok(0), &tok(n - 1), x, tau, 3, &HashSet::new());
        if let Some(p) = found.path {
            prop_assert!(p.average_rate > tau);
        }
    }
}
