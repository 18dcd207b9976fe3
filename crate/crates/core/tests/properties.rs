use apq_core::{
    absolute_priority_waits, cmu_order, homogeneous_equilibrium, individual_best_response,
    mixed_atom_waits, pricing_transform, scaled_bids, solve_heterogeneous, tagged_waiting,
    tagged_waiting_derivative, waiting_times, welfare_report, Atom, BidProfile, ClassSpec,
    MixedBidProfile, Model, ServiceSpec, SolverOptions,
};
use proptest::prelude::*;

fn service() -> impl Strategy<Value = ServiceSpec> {
    (0.2..3.0f64, 0..5u8, 0.05..8.0f64, 1..6u32).prop_map(|(mean, family, scv, shape)| match family
    {
        0 => ServiceSpec::Exponential { mean },
        1 => ServiceSpec::Deterministic { value: mean },
        2 => ServiceSpec::Erlang { shape, mean },
        3 => ServiceSpec::HyperExp2Balanced {
            mean,
            scv: 1.0 + scv,
        },
        _ => ServiceSpec::Gamma { mean, scv },
    })
}

fn model_with(max_rho: f64) -> impl Strategy<Value = Model> {
    (
        prop::collection::vec((0.1..1.0f64, 0.1..3.0f64, service()), 1..=6),
        0.05..max_rho,
    )
        .prop_map(|(classes, rho)| {
            let classes = classes
                .into_iter()
                .map(|(share, cost, s)| ClassSpec::new(0.01 * share, cost, s))
                .collect();
            Model::new(classes).unwrap().scaled_to_load(rho).unwrap()
        })
}

fn model() -> impl Strategy<Value = Model> {
    model_with(0.95)
}

fn model_and_bids() -> impl Strategy<Value = (Model, BidProfile)> {
    model().prop_flat_map(|m| {
        let n = m.len();
        (Just(m), prop::collection::vec(0.05..5.0f64, n))
            .prop_map(|(m, b)| (m, BidProfile::new(b).unwrap()))
    })
}

fn distinct(values: &[f64], gap: f64) -> bool {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).all(|p| p[1] - p[0] > gap * p[1])
}

fn max_rel_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn work_is_conserved((m, bids) in model_and_bids()) {
        let w = waiting_times(&m, &bids).unwrap();
        prop_assert!(w.conservation_gap(&m) < 1e-10);
        prop_assert!(w.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn tagged_wait_matches_class_waits((m, bids) in model_and_bids()) {
        let w = waiting_times(&m, &bids).unwrap();
        for (i, &b) in bids.iter().enumerate() {
            let t = tagged_waiting(&m, &bids, b).unwrap();
            prop_assert!((t - w[i]).abs() <= 1e-10 * w[i]);
        }
    }

    #[test]
    fn tagged_wait_decreasing_and_convex((m, bids) in model_and_bids()) {
        let top = 2.0 * bids.iter().copied().fold(0.0, f64::max);
        let vals: Vec<f64> = (1..=300)
            .map(|k| tagged_waiting(&m, &bids, top * k as f64 / 300.0).unwrap())
            .collect();
        for p in vals.windows(2) {
            prop_assert!(p[1] < p[0]);
        }
        for p in vals.windows(3) {
            prop_assert!(p[0] - 2.0 * p[1] + p[2] >= -1e-12 * p[1]);
        }
    }

    #[test]
    fn derivative_matches_central_difference((m, bids) in model_and_bids(), u in 0.01..2.0f64) {
        let a = u * bids.iter().copied().fold(0.0, f64::max);
        let h = 1e-6 * a;
        prop_assume!(bids.iter().all(|b| (b - a).abs() > 2.0 * h));
        let fd = (tagged_waiting(&m, &bids, a + h).unwrap() - tagged_waiting(&m, &bids, a - h).unwrap())
            / (2.0 * h);
        let d = tagged_waiting_derivative(&m, &bids, a).unwrap();
        prop_assert!((fd - d).abs() <= 1e-6 * d.abs(), "fd {} vs {}", fd, d);
    }

    #[test]
    fn equilibrium_bids_follow_costs(m in model()) {
        prop_assume!(distinct(&m.costs(), 1e-3));
        let r = solve_heterogeneous(&m, &SolverOptions::default()).unwrap();
        prop_assert!(r.residual < 1e-8);
        prop_assert!(r.multistart_agreement < 1e-6);
        let mut order: Vec<usize> = (0..m.len()).collect();
        order.sort_by(|&a, &b| m.class(a).waiting_cost.total_cmp(&m.class(b).waiting_cost));
        for p in order.windows(2) {
            prop_assert!(r.bids[p[0]] < r.bids[p[1]]);
        }
    }

    #[test]
    fn equilibrium_is_a_fixed_point_of_best_responses(m in model()) {
        let r = solve_heterogeneous(&m, &SolverOptions { restarts: 0, ..SolverOptions::default() }).unwrap();
        let bids = r.bid_profile();
        for (i, c) in m.classes().iter().enumerate() {
            let br = individual_best_response(&m, &bids, c.waiting_cost).unwrap();
            prop_assert!((br - r.bids[i]).abs() <= 1e-7, "{} vs {}", br, r.bids[i]);
        }
    }

    #[test]
    fn priced_bids_follow_cost_per_service(m in model()) {
        let index: Vec<f64> = m.classes().iter().map(|c| c.waiting_cost / c.service.mean()).collect();
        prop_assume!(distinct(&index, 1e-3));
        let r = solve_heterogeneous(&pricing_transform(&m), &SolverOptions::default()).unwrap();
        for p in cmu_order(&m).windows(2) {
            prop_assert!(r.bids[p[0]] < r.bids[p[1]]);
        }
    }

    #[test]
    fn scaled_bids_approach_strict_priority(m in model()) {
        let order = cmu_order(&m);
        let target = absolute_priority_waits(&m, &order).unwrap();
        prop_assert!(target.conservation_gap(&m) < 1e-10);
        let gaps: Vec<f64> = (1..=10)
            .map(|n| {
                let w = waiting_times(&m, &scaled_bids(&order, 2.0, n).unwrap()).unwrap();
                max_rel_gap(&w, &target)
            })
            .collect();
        for p in gaps.windows(2) {
            prop_assert!(p[1] <= p[0] + 1e-9);
        }
    }

    #[test]
    fn scaled_bids_close_at_moderate_load(m in model_with(0.5)) {
        let order = cmu_order(&m);
        let target = absolute_priority_waits(&m, &order).unwrap();
        let w = waiting_times(&m, &scaled_bids(&order, 2.0, 10).unwrap()).unwrap();
        prop_assert!(max_rel_gap(&w, &target) < 1e-3);
    }

    #[test]
    fn strict_priority_beats_equilibria(m in model()) {
        let r = welfare_report(&m, &SolverOptions { restarts: 1, ..SolverOptions::default() }).unwrap();
        prop_assert!(r.ratio >= 1.0 - 1e-9);
        prop_assert!(r.priced_ratio >= 1.0 - 1e-9);
    }

    #[test]
    fn mixtures_conserve_work(
        (m, bids) in model_and_bids(),
        spread in prop::collection::vec((0.05..5.0f64, 0.05..0.95f64), 6),
    ) {
        let classes: Vec<Vec<Atom>> = bids
            .iter()
            .zip(&spread)
            .map(|(&b, &(other, p))| vec![Atom { bid: b, prob: p }, Atom { bid: other, prob: 1.0 - p }])
            .collect();
        let mix = MixedBidProfile::new(classes.clone()).unwrap();
        let waits = mixed_atom_waits(&m, &mix).unwrap();
        let total: f64 = waits
            .iter()
            .zip(&classes)
            .zip(m.loads())
            .map(|((w, atoms), rho)| rho * atoms.iter().zip(w).map(|(a, w)| a.prob * w).sum::<f64>())
            .sum();
        let expect = m.total_load() * m.fcfs_wait();
        prop_assert!((total - expect).abs() <= 1e-10 * expect);
    }

    #[test]
    fn common_cost_solver_matches_closed_form(m in model(), cost in 0.1..3.0f64) {
        let m = m.with_costs(&vec![cost; m.len()]).unwrap();
        let closed = homogeneous_equilibrium(&m).unwrap().bid;
        let r = solve_heterogeneous(&m, &SolverOptions::default()).unwrap();
        for b in &r.bids {
            prop_assert!((b - closed).abs() <= 1e-8 * closed.max(1.0));
        }
    }
}
