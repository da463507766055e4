mod common;

use proptest::prelude::*;
use psec_core::metrics::msve_values;
use psec_core::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn grid(p: f64) -> TabularMDP {
    build_gridworld(&GridworldConfig { slip_p: p, discount: 1.0 }).unwrap()
}

fn shuffled(b: &Batch, seed: u64) -> Batch {
    let mut episodes = b.episodes.clone();
    episodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Batch::new(episodes, b.seed, b.behavior_policy_id.clone())
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_ignores_row_shifts(
        theta in prop::collection::vec(-20.0f64..20.0, 12),
        shifts in prop::collection::vec(-50.0f64..50.0, 4),
    ) {
        let base = softmax_policy(&SoftmaxParams { n_states: 4, n_actions: 3, theta: theta.clone() }).unwrap();
        let moved: Vec<f64> = theta.iter().enumerate().map(|(i, t)| t + shifts[i / 3]).collect();
        let alt = softmax_policy(&SoftmaxParams { n_states: 4, n_actions: 3, theta: moved }).unwrap();
        for s in 0..4 {
            for a in 0..3 {
                prop_assert!((base.prob(s, a) - alt.prob(s, a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn estimate_ignores_episode_order(seed in 0u64..1000, n in 1usize..30, p in 0.0f64..=1.0, perm in any::<u64>()) {
        let b = sample_batch(&grid(p), &TabularPolicy::uniform(16, 4), n, seed, 1000).unwrap();
        prop_assert_eq!(estimate(&b), estimate(&shuffled(&b, perm)));
    }

    #[test]
    fn fit_ignores_episode_order(seed in 0u64..1000, n in 1usize..10, perm in any::<u64>()) {
        let m = grid(1.0);
        let pi = TabularPolicy::uniform(16, 4);
        let f = FeatureMap::tabular(&m);
        let b = sample_batch(&m, &pi, n, seed, 1000).unwrap();
        let mut cfg = LearnerConfig::new(0.01, WeightMode::PsecEstimate);
        cfg.record_trace = false;
        cfg.max_presentations = 20_000;
        let fit = |b: &Batch| fit_td0(b, &f, &pi, Behavior::Empirical, 1.0, &cfg).map(|(v, r)| (v.values, r.presentations));
        match (fit(&b), fit(&shuffled(&b, perm))) {
            (Ok((v1, n1)), Ok((v2, n2))) => {
                prop_assert_eq!(n1, n2);
                for (x, y) in v1.iter().zip(&v2) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
            (Err(Error::Divergence { .. }), Err(Error::Divergence { .. })) => {}
            (a, b) => prop_assert!(false, "outcomes differ: {:?} vs {:?}", a.is_ok(), b.is_ok()),
        }
    }

    #[test]
    fn support_identity(seed in 0u64..1000, n in 1usize..8, zero_mask in any::<u64>()) {
        let m = grid(0.7);
        let b = sample_batch(&m, &TabularPolicy::uniform(16, 4), n, seed, 1000).unwrap();
        let em = estimate(&b);
        // random eval policy with some actions given zero mass
        let mut probs = Vec::new();
        let base = common::random_policy(seed, 16, 4);
        for s in 0..16 {
            let mut row: Vec<f64> = (0..4).map(|a| if zero_mask >> (4 * s + a) & 1 == 1 && a != 0 { 0.0 } else { base.prob(s, a) }).collect();
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= z);
            let head: f64 = row[..3].iter().sum();
            row[3] = if row[3] == 0.0 { 0.0 } else { 1.0 - head };
            if row[3] == 0.0 {
                let rest: f64 = row[1..].iter().sum();
                row[0] = 1.0 - rest;
            }
            probs.extend(row);
        }
        let pe = TabularPolicy::new(16, 4, probs).unwrap();
        for s in em.source_states() {
            let observed: Vec<usize> = (0..4).filter(|&a| em.sa_count(s, a) > 0).collect();
            let lhs: f64 = observed.iter().map(|&a| em.mle_policy(s, a) * psec_weight(&pe, &em, s, a).unwrap()).sum();
            let rhs: f64 = observed.iter().map(|&a| pe.prob(s, a)).sum();
            prop_assert!((lhs - rhs).abs() < 1e-12);
            prop_assert!(rhs <= 1.0 + 1e-12);
            let full = (0..4).all(|a| pe.prob(s, a) == 0.0 || em.sa_count(s, a) > 0);
            prop_assert_eq!(full, (rhs - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn msve_ignores_state_relabeling(
        values in prop::collection::vec(-100.0f64..100.0, 8),
        truth in prop::collection::vec(-100.0f64..100.0, 8),
        raw in prop::collection::vec(0.0f64..1.0, 8),
        perm in any::<u64>(),
    ) {
        let z: f64 = raw.iter().sum();
        prop_assume!(z > 1e-3);
        let mut w: Vec<f64> = raw.iter().map(|x| x / z).collect();
        let head: f64 = w[..7].iter().sum();
        w[7] = (1.0 - head).max(0.0);
        let p = permutation(8, perm);
        let shuffle = |v: &[f64]| p.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let a = msve_values(&values, &truth, &StateWeighting::new(w.clone()).unwrap()).unwrap();
        let b = msve_values(&shuffle(&values), &shuffle(&truth), &StateWeighting::new(shuffle(&w)).unwrap()).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert_eq!(a, b);
        let zero = msve_values(&truth, &truth, &StateWeighting::new(w).unwrap()).unwrap();
        prop_assert_eq!(zero, 0.0);
    }

    #[test]
    fn aggregate_mean_ignores_order(xs in prop::collection::vec(-1e6f64..1e6, 2..60), perm in any::<u64>()) {
        let p = permutation(xs.len(), perm);
        let ys: Vec<f64> = p.iter().map(|&i| xs[i]).collect();
        let a = aggregate_trials(&xs, 0.95).unwrap();
        let b = aggregate_trials(&ys, 0.95).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.ci_low <= a.mean && a.mean <= a.ci_high);
    }

    #[test]
    fn sampled_episodes_are_chained(seed in any::<u64>(), p in 0.0f64..=1.0, n in 1usize..20) {
        let b = sample_batch(&grid(p), &TabularPolicy::uniform(16, 4), n, seed, 1000).unwrap();
        prop_assert!(b.episodes.iter().all(|e| e.is_chained()));
        prop_assert_eq!(b.transitions().filter(|t| t.next_is_terminal).count() + b.episodes.iter().filter(|e| e.truncated).count(), n);
    }

    #[test]
    fn mrp_and_mdp_cee_agree(seed in 0u64..1000, n in 1usize..10, p in 0.0f64..=1.0) {
        let b = sample_batch(&grid(p), &TabularPolicy::uniform(16, 4), n, seed, 1000).unwrap();
        let em = estimate(&b);
        let mrp = solve_mrp_cee(&em, 1.0, 1e-12).unwrap();
        let mdp = solve_mdp_cee(&em, 1.0, 1e-12).unwrap();
        prop_assert!(common::max_gap(&mrp, &mdp, &em.source_states()) < 1e-10);
    }
}
