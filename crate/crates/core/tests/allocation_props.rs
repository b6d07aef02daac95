mod common;

use common::{marginal_spread, random_paths};
use prime_core::allocation::path_shares;
use prime_core::baselines::grid_brute_force;
use prime_core::{asgm, asgm_from, grid_oracle, objective, Amount, AsgmParams, GridSpec, Termination};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, k: usize, parallel: bool) -> Vec<prime_core::MultiEdgePath> {
    random_paths(&mut ChaCha8Rng::seed_from_u64(seed), k, parallel).1
}

fn amount(scale: f64) -> Amount {
    common::amount(10f64.powf(scale))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn objective_never_decreases(seed in any::<u64>(), k in 1usize..=5, scale in 18.0f64..22.0) {
        let paths = instance(seed, k, true);
        let r = asgm(&paths, amount(scale), &AsgmParams::default()).unwrap();
        let js: Vec<Amount> = r.trace.records.iter().map(|rec| rec.objective).collect();
        prop_assert!(js.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*js.last().unwrap(), r.objective);
    }

    #[test]
    fn weights_stay_on_the_simplex(seed in any::<u64>(), k in 1usize..=5, scale in 18.0f64..22.0) {
        let paths = instance(seed, k, true);
        let r = asgm(&paths, amount(scale), &AsgmParams::default()).unwrap();
        let w = &r.allocation.path_weights;
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for path in &r.allocation.edge_weights {
            for hop in path {
                prop_assert!(hop.iter().all(|v| *v >= 0.0));
                prop_assert!((hop.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let shares = path_shares(amount(scale), w);
        prop_assert_eq!(shares.iter().copied().sum::<Amount>(), amount(scale));
    }

    #[test]
    fn converged_prices_are_equal(seed in any::<u64>(), k in 2usize..=4, scale in 19.0f64..22.0) {
        let paths = instance(seed, k, false);
        let x = amount(scale);
        let params = AsgmParams::default();
        let r = asgm(&paths, x, &params).unwrap();
        prop_assert_eq!(r.trace.termination, Termination::Converged);
        let spread = marginal_spread(&r.paths, &r.allocation.path_weights, x);
        prop_assert!(spread <= params.eps_rel, "spread {}", spread);
        prop_assert!(r.tau > 0.0);
    }

    #[test]
    fn close_to_the_grid_optimum(seed in any::<u64>(), k in 2usize..=4, scale in 19.0f64..22.0) {
        let paths = instance(seed, k, true);
        let x = amount(scale);
        let r = asgm(&paths, x, &AsgmParams::default()).unwrap();
        let grid = grid_oracle(&paths, x, &GridSpec::new(0.01)).unwrap();
        prop_assert!(r.objective.to_f64() >= 0.9999 * grid.objective.to_f64());
    }

    #[test]
    fn warm_start_never_loses(seed in any::<u64>(), k in 2usize..=4, scale in 19.0f64..22.0, first in 0.0f64..1.0) {
        let paths = instance(seed, k, false);
        let x = amount(scale);
        let mut start = vec![(1.0 - first) / (k - 1) as f64; k];
        start[0] = first;
        let from = objective(&paths, &start, x).unwrap();
        let r = asgm_from(&paths, x, &AsgmParams::default(), Some(&start)).unwrap();
        prop_assert!(r.objective >= from);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn grid_dp_matches_brute_force(seed in any::<u64>(), k in 2usize..=3, scale in 19.0f64..22.0) {
        // Parallel legs only on two paths keep the brute-force lattice small.
        let paths = instance(seed, k, k == 2);
        let x = amount(scale);
        let spec = GridSpec::new(0.1);
        let dp = grid_oracle(&paths, x, &spec).unwrap();
        let brute = grid_brute_force(&paths, x, &spec).unwrap();
        // The DP works on floored per-leg shares; the brute force evaluates
        // the exact split, which can differ by a unit per leg.
        let legs: usize = paths.iter().flat_map(|p| p.hops()).map(|h| h.legs().len()).sum();
        prop_assert!(dp.objective.to_f64() + legs as f64 >= brute.objective.to_f64());
    }

    #[test]
    fn finer_grids_do_no_worse(seed in any::<u64>(), k in 2usize..=4, scale in 19.0f64..22.0) {
        let paths = instance(seed, k, false);
        let x = amount(scale);
        let coarse = grid_oracle(&paths, x, &GridSpec::new(0.1)).unwrap();
        let fine = grid_oracle(&paths, x, &GridSpec::new(0.01)).unwrap();
        prop_assert!(fine.objective.to_f64() + k as f64 >= coarse.objective.to_f64());
    }
}
