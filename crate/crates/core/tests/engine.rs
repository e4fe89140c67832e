use std::f64::consts::E;

use proptest::prelude::*;
use proptest::strategy::Strategy as _;

use pseudomarket::harness::{run_experiment, ExperimentConfig, Profile};
use pseudomarket::mechanism::{init_state, run_episode, AuctionConfig, TieBreak};
use pseudomarket::strategies::{adversary_cdf_with_delta, AgentContext, Strategy, StrategySpec, ADVERSARY_CDF_CAP};
use pseudomarket::values::ValueDistribution;

fn episode_bids(spec: &str, horizon: usize, seed: u64) -> Vec<Vec<f64>> {
    let dists = vec![ValueDistribution::bernoulli(0.5).unwrap(); 2];
    let config = AuctionConfig::new(horizon, vec![0.5, 0.5], TieBreak::favoring(0, 2)).unwrap();
    let mut strategies: Vec<Box<dyn Strategy>> = [spec, "const:1"]
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.parse::<StrategySpec>()
                .unwrap()
                .build(&AgentContext {
                    fair_share: 0.5,
                    value_dist: &dists[i],
                    horizon,
                })
                .unwrap()
        })
        .collect();
    run_episode(&config, &mut strategies, &dists, seed)
        .unwrap()
        .rounds
        .into_iter()
        .map(|r| r.bids)
        .collect()
}

#[test]
fn rrb_is_a_uniform_fixed_distribution() {
    let b_bar = 1.0 + 2f64.sqrt();
    assert_eq!(episode_bids("rrb", 5000, 3), episode_bids(&format!("fixed:uniform:0:{b_bar}"), 5000, 3));
}

#[test]
fn det_is_a_point_mass_fixed_distribution() {
    assert_eq!(episode_bids("det:2", 5000, 8), episode_bids("fixed:point:2", 5000, 8));
}

#[test]
fn stationary_adversary_spends_its_share() {
    // E[X] = int_0^cap (1 - F) by Simpson's rule
    for (alpha, delta) in [(0.05, 0.0), (0.05, 0.02), (0.3, 0.1)] {
        let adv = adversary_cdf_with_delta(alpha, delta).unwrap();
        let m = 100_000;
        let h = ADVERSARY_CDF_CAP / m as f64;
        let tail = |x: f64| 1.0 - adv.cdf(x.min(ADVERSARY_CDF_CAP - 1e-15));
        let mut sum = tail(0.0) + tail(ADVERSARY_CDF_CAP);
        for k in 1..m {
            sum += if k % 2 == 1 { 4.0 } else { 2.0 } * tail(k as f64 * h);
        }
        let mean = sum * h / 3.0;
        assert!((mean - (1.0 - alpha - delta)).abs() < 1e-6, "mean {mean}");
    }
    assert!((ADVERSARY_CDF_CAP - (E - 1.0) / (E - 2.0)).abs() < 1e-15);
}

fn arb_spec() -> impl proptest::strategy::Strategy<Value = String> {
    prop_oneof![
        Just("rrb".to_string()),
        (0.1..3.0f64).prop_map(|b| format!("det:{b}")),
        (0.0..3.0f64).prop_map(|c| format!("const:{c}")),
        (0.1..3.0f64).prop_map(|h| format!("fixed:uniform:0:{h}")),
        Just("advcdf:0.01".to_string()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn budgets_and_determinism(
        specs in prop::collection::vec(arb_spec(), 1..=4),
        horizon in 1usize..150,
        seed in any::<u64>(),
        p in 0.05..1.0f64,
        uniform_ties in any::<bool>(),
    ) {
        let n = specs.len();
        let mut cfg = ExperimentConfig::new(
            horizon,
            1,
            seed,
            specs.iter().map(|s| s.parse().unwrap()).collect(),
            vec![ValueDistribution::bernoulli(p).unwrap(); n],
        );
        if uniform_ties {
            cfg.tie_break = TieBreak::UniformRandom;
        }
        let a = cfg.transcript(0).unwrap();
        let b = cfg.transcript(0).unwrap();
        prop_assert_eq!(&a.rounds, &b.rounds);

        let initial = init_state(&cfg.auction().unwrap()).unwrap();
        let mut spent = vec![0.0; n];
        for r in &a.rounds {
            prop_assert!(r.budgets_after.iter().all(|&x| x >= 0.0));
            if let Some(w) = r.winner {
                spent[w] += r.payments[w];
                prop_assert!(r.bids.iter().all(|&x| x <= r.bids[w]));
            } else {
                prop_assert!(r.bids.iter().all(|&x| x == 0.0));
            }
        }
        for i in 0..n {
            prop_assert!(spent[i] <= initial[i] + 1e-9);
        }
    }
}

#[test]
fn parallel_and_sequential_agree() {
    let cfg = Profile::Rrb.experiment(3, 2000, 6, 17).unwrap();
    let parallel = run_experiment(&cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let sequential = pool.install(|| run_experiment(&cfg)).unwrap();
    assert_eq!(parallel, sequential);
}

#[test]
fn replications_use_consecutive_seeds() {
    let cfg = Profile::Deterministic.experiment(2, 500, 3, 100).unwrap();
    let report = run_experiment(&cfg).unwrap();
    let mut shifted = cfg.clone();
    shifted.base_seed = 101;
    shifted.reps = 2;
    let later = run_experiment(&shifted).unwrap();
    let relabeled: Vec<_> = later
        .rows
        .into_iter()
        .map(|mut r| {
            r.rep += 1;
            r
        })
        .collect();
    assert_eq!(report.rows[2..], relabeled[..]);
}
