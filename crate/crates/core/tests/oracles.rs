mod common;

use apq_core::{
    absolute_priority_waits, cmu_order, foc_gap, scaled_bids, social_cost, solve_heterogeneous,
    tagged_waiting, tagged_waiting_derivative, w_tilde, waiting_times, BidProfile, Model,
    SolverOptions,
};
use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Class waits by direct forward substitution; bids must be strictly
/// increasing.
fn naive_waits(m: &Model, bids: &[f64]) -> Vec<f64> {
    let rho = m.loads();
    let fcfs = m.fcfs_wait();
    let n = bids.len();
    let mut w = vec![0.0; n];
    for j in 0..n {
        let mut num = fcfs;
        for k in 0..j {
            num -= rho[k] * (1.0 - bids[k] / bids[j]) * w[k];
        }
        let mut den = 1.0;
        for k in j..n {
            den -= rho[k] * (1.0 - bids[j] / bids[k]);
        }
        w[j] = num / den;
    }
    w
}

/// Right-hand side of the symmetric first-order condition, written out term
/// by term from the class waits.
fn naive_w_tilde(m: &Model, bids: &[f64], i: usize) -> f64 {
    let rho = m.loads();
    let w = naive_waits(m, bids);
    let c = m.class(i).waiting_cost;
    let b = bids[i];
    let mut top = 1.0;
    let mut rate = 0.0;
    for k in i..bids.len() {
        top -= rho[k] * (1.0 - b / bids[k]);
        rate += rho[k] / bids[k];
    }
    let lower: f64 = (0..i).map(|k| rho[k] * bids[k] * w[k]).sum();
    (top - c * lower / (b * b)) / (c * rate)
}

fn sorted_random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..5.0)).collect();
    b.sort_by(f64::total_cmp);
    b
}

#[test]
fn recursion_matches_direct_substitution() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..300 {
        let n = rng.random_range(1..=6);
        let rho = rng.random_range(0.05..0.95);
        let m = random_model(&mut rng, n, rho);
        let bids = sorted_random(&mut rng, n);
        let expect = naive_waits(&m, &bids);
        let got = waiting_times(&m, &BidProfile::new(bids.clone()).unwrap()).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() <= 1e-10 * e, "{g} vs {e}");
        }
    }
}

#[test]
fn w_tilde_matches_direct_formula_and_foc_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..300 {
        let n = rng.random_range(1..=6);
        let rho = rng.random_range(0.05..0.95);
        let m = random_model(&mut rng, n, rho);
        // solver order assumes classes listed by cost
        let mut costs = m.costs();
        costs.sort_by(f64::total_cmp);
        let m = m.with_costs(&costs).unwrap();
        let bids = sorted_random(&mut rng, n);
        let profile = BidProfile::new(bids.clone()).unwrap();
        for i in 0..n {
            let expect = naive_w_tilde(&m, &bids, i);
            let got = w_tilde(&m, &profile, i).unwrap();
            assert!(
                (got - expect).abs() <= 1e-9 * expect.abs().max(1.0),
                "{got} vs {expect}"
            );

            let marginal =
                costs[i] * tagged_waiting_derivative(&m, &profile, bids[i]).unwrap() + 1.0;
            let gap = foc_gap(&m, &profile, i).unwrap();
            if marginal.abs() > 1e-9 && gap.abs() > 1e-9 {
                assert_eq!(
                    marginal > 0.0,
                    gap < 0.0,
                    "class {i}: marginal {marginal}, gap {gap}"
                );
            }
        }
    }
}

#[test]
fn tagged_wait_at_own_bid_is_class_wait() {
    let m = mix_model(0.5);
    let bids = BidProfile::new(vec![0.091, 0.171, 0.227, 0.273, 0.308]).unwrap();
    let w = waiting_times(&m, &bids).unwrap();
    for (i, &b) in bids.iter().enumerate() {
        assert!((tagged_waiting(&m, &bids, b).unwrap() - w[i]).abs() < 1e-12);
    }
}

#[test]
fn mix_model_waits_at_reference_bids() {
    let m = mix_model(0.5);
    let bids = BidProfile::new(vec![0.091, 0.171, 0.227, 0.273, 0.308]).unwrap();
    let w = waiting_times(&m, &bids).unwrap();
    for (got, reference) in w.iter().zip([1.306, 1.028, 0.915, 0.848, 0.810]) {
        assert!((got - reference).abs() < 5e-3, "{got} vs {reference}");
    }
}

#[test]
fn social_cost_of_reference_equilibrium() {
    let m = mix_model(0.5);
    let bids = BidProfile::new(vec![0.091, 0.171, 0.227, 0.273, 0.308]).unwrap();
    let reference = [1.306, 1.028, 0.915, 0.848, 0.810];
    let expect: f64 = (0..5)
        .map(|i| 0.5 * MIX_SHARES[i] * MIX_COSTS[i] * reference[i])
        .sum();
    let got = social_cost(&m, &bids).unwrap();
    assert!((got - expect).abs() < 2e-3, "{got} vs {expect}");
}

#[test]
fn mixed_service_equilibrium_is_stable_under_restarts() {
    let m = mixed_service_model();
    let r = solve_heterogeneous(
        &m,
        &SolverOptions {
            restarts: 8,
            seed: 99,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(r.residual < 1e-8);
    assert_eq!(r.starts_converged, 9);
    assert!(r.multistart_agreement < 1e-6);
    assert!(r.bids.windows(2).all(|p| p[0] < p[1]));
}

#[test]
fn scaled_bids_match_strict_priority_on_welfare_model() {
    let m = welfare_model(&WELFARE_MEANS_A, 0.5);
    let order = cmu_order(&m);
    assert_eq!(order, vec![0, 1, 3, 4, 2]);
    let target = absolute_priority_waits(&m, &order).unwrap();
    let w = waiting_times(&m, &scaled_bids(&order, 2.0, 10).unwrap()).unwrap();
    for (x, y) in w.iter().zip(target.iter()) {
        assert!((x - y).abs() / y < 1e-3);
    }
}
