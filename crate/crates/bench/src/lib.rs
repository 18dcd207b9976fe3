//! Fixture models shared by the benchmarks.

use apq_core::{BidProfile, ClassSpec, Model, ServiceSpec};

/// Five exponential classes with costs 0.2 to 1.0 at total load `rho`.
pub fn five_class(rho: f64) -> Model {
    let shares = [0.2, 0.3, 0.15, 0.25, 0.1];
    let costs = [0.2, 0.4, 0.6, 0.8, 1.0];
    let classes = shares
        .iter()
        .zip(costs)
        .map(|(s, c)| ClassSpec::new(s * rho, c, ServiceSpec::Exponential { mean: 1.0 }))
        .collect();
    Model::new(classes).expect("fixture is stable")
}

/// `n` classes with spread costs and mixed service laws at total load `rho`.
pub fn wide(n: usize, rho: f64) -> Model {
    let classes = (0..n)
        .map(|i| {
            let mean = 0.5 + (i % 4) as f64 * 0.5;
            let service = match i % 3 {
                0 => ServiceSpec::Exponential { mean },
                1 => ServiceSpec::Erlang { shape: 3, mean },
                _ => ServiceSpec::HyperExp2Balanced { mean, scv: 4.0 },
            };
            ClassSpec::new(rho / (n as f64 * mean), 0.1 + i as f64 * 0.2, service)
        })
        .collect();
    Model::new(classes).expect("fixture is stable")
}

pub fn spread_bids(n: usize) -> BidProfile {
    BidProfile::new((1..=n).map(|k| 0.1 * k as f64).collect()).expect("positive bids")
}
