#![allow(dead_code)]

use apq_core::{ClassSpec, Model, ServiceSpec};
use rand::Rng;

/// Service law with the given first two moments.
pub fn with_moments(mean: f64, second: f64) -> ServiceSpec {
    let scv = second / (mean * mean) - 1.0;
    if scv.abs() < 1e-12 {
        ServiceSpec::Deterministic { value: mean }
    } else if (scv - 1.0).abs() < 1e-12 {
        ServiceSpec::Exponential { mean }
    } else if scv > 1.0 {
        ServiceSpec::HyperExp2Balanced { mean, scv }
    } else if ((1.0 / scv) - (1.0 / scv).round()).abs() < 1e-9 {
        ServiceSpec::Erlang {
            shape: (1.0 / scv).round() as u32,
            mean,
        }
    } else {
        ServiceSpec::Gamma { mean, scv }
    }
}

fn build(lambda: &[f64], costs: &[f64], services: &[ServiceSpec]) -> Model {
    Model::new(
        lambda
            .iter()
            .zip(costs)
            .zip(services)
            .map(|((&l, &c), &s)| ClassSpec::new(l, c, s))
            .collect(),
    )
    .unwrap()
}

pub const MIX_COSTS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
pub const MIX_SHARES: [f64; 5] = [0.2, 0.3, 0.15, 0.25, 0.1];

/// Five unit-mean exponential classes with a fixed arrival mix.
pub fn mix_model(rho: f64) -> Model {
    let lambda: Vec<f64> = MIX_SHARES.iter().map(|s| s * rho).collect();
    build(
        &lambda,
        &MIX_COSTS,
        &[ServiceSpec::Exponential { mean: 1.0 }; 5],
    )
}

pub const MIXED_SERVICE_BIDS: [f64; 5] = [0.28, 1.48, 1.565, 2.39, 2.69];

/// Five classes with unequal service laws and costs.
pub fn mixed_service_model() -> Model {
    let means = [0.35, 0.85, 1.0, 4.5, 5.0];
    let seconds = [2.1, 3.7, 1.5, 21.8, 29.0];
    let services: Vec<ServiceSpec> = means
        .iter()
        .zip(seconds)
        .map(|(&m, s)| with_moments(m, s))
        .collect();
    build(
        &[0.06, 0.09, 0.04, 0.07, 0.03],
        &[0.2, 0.7, 0.75, 1.25, 1.6],
        &services,
    )
}

pub const WELFARE_COSTS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];
pub const WELFARE_LAMBDA: [f64; 5] = [0.16, 0.25, 0.12, 0.21, 0.08];
pub const WELFARE_SECONDS: [f64; 5] = [1.36, 5.44, 1.5, 3.75, 5.0];
pub const WELFARE_MEANS_A: [f64; 5] = [1.0, 2.0, 0.5, 1.2, 1.5];
pub const WELFARE_MEANS_B: [f64; 5] = [0.6, 1.2, 3.0, 1.5, 2.0];

/// Welfare benchmark at total load `rho`. When a listed second moment is
/// below `mean²` the class falls back to deterministic service; the welfare
/// ratios do not depend on second moments.
pub fn welfare_model(means: &[f64; 5], rho: f64) -> Model {
    let services: Vec<ServiceSpec> = means
        .iter()
        .zip(WELFARE_SECONDS)
        .map(|(&m, s)| with_moments(m, s.max(m * m)))
        .collect();
    // the listed rates only fix the mix; shrink them to a stable load first
    let lambda: Vec<f64> = WELFARE_LAMBDA.iter().map(|l| 0.1 * l).collect();
    build(&lambda, &WELFARE_COSTS, &services)
        .scaled_to_load(rho)
        .unwrap()
}

pub fn random_service(rng: &mut impl Rng) -> ServiceSpec {
    let mean = rng.random_range(0.2..3.0);
    match rng.random_range(0..5) {
        0 => ServiceSpec::Exponential { mean },
        1 => ServiceSpec::Deterministic { value: mean },
        2 => ServiceSpec::Erlang {
            shape: rng.random_range(2..6),
            mean,
        },
        3 => ServiceSpec::HyperExp2Balanced {
            mean,
            scv: rng.random_range(1.0..8.0),
        },
        _ => ServiceSpec::Gamma {
            mean,
            scv: rng.random_range(0.05..3.0),
        },
    }
}

/// Stable model with `n` classes, distinct costs and total load `rho`.
pub fn random_model(rng: &mut impl Rng, n: usize, rho: f64) -> Model {
    let mut costs: Vec<f64> = Vec::new();
    while costs.len() < n {
        let c: f64 = rng.random_range(0.1..3.0);
        if costs.iter().all(|d| (c - d).abs() > 1e-3) {
            costs.push(c);
        }
    }
    let classes = costs
        .into_iter()
        .map(|c| ClassSpec::new(0.01 * rng.random_range(0.1..1.0), c, random_service(rng)))
        .collect();
    Model::new(classes).unwrap().scaled_to_load(rho).unwrap()
}
