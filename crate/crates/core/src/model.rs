//! Queueing-game data model: service-time families, customer classes and
//! the aggregate quantities every formula downstream depends on.
//!
//! Only the first two service moments enter the mean-value formulas, so a
//! [`ServiceSpec`] is a small closed set of families that between them reach
//! any (mean, scv) pair and can also be sampled by the simulator.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{ApqError, Result};

/// Service-time distribution of one class.
///
/// JSON form: `{"family": "exponential", "mean": 1.0}`. Accepted families are
/// `exponential`, `deterministic` (`value`), `erlang` (`shape`, `mean`),
/// `hyperexp2` (`mean`, `scv`) and `gamma` (`mean`, `scv`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceSpec {
    Exponential {
        mean: f64,
    },
    Deterministic {
        value: f64,
    },
    Erlang {
        shape: u32,
        mean: f64,
    },
    /// Two exponential branches with balanced means; scv >= 1.
    #[serde(rename = "hyperexp2")]
    HyperExp2Balanced {
        mean: f64,
        scv: f64,
    },
    /// Gamma with the given mean and squared coefficient of variation; scv > 0.
    Gamma {
        mean: f64,
        scv: f64,
    },
}

impl ServiceSpec {
    pub fn mean(&self) -> f64 {
        match *self {
            ServiceSpec::Exponential { mean }
            | ServiceSpec::Erlang { mean, .. }
            | ServiceSpec::HyperExp2Balanced { mean, .. }
            | ServiceSpec::Gamma { mean, .. } => mean,
            ServiceSpec::Deterministic { value } => value,
        }
    }

    /// Squared coefficient of variation.
    pub fn scv(&self) -> f64 {
        match *self {
            ServiceSpec::Exponential { .. } => 1.0,
            ServiceSpec::Deterministic { .. } => 0.0,
            ServiceSpec::Erlang { shape, .. } => 1.0 / f64::from(shape),
            ServiceSpec::HyperExp2Balanced { scv, .. } | ServiceSpec::Gamma { scv, .. } => scv,
        }
    }

    /// First and second moments `(E[X], E[X^2])`.
    pub fn moments(&self) -> (f64, f64) {
        let m = self.mean();
        let second = match *self {
            ServiceSpec::Exponential { .. } => 2.0 * m * m,
            ServiceSpec::Deterministic { .. } => m * m,
            ServiceSpec::Erlang { shape, .. } => {
                let k = f64::from(shape);
                m * m * (k + 1.0) / k
            }
            ServiceSpec::HyperExp2Balanced { scv, .. } | ServiceSpec::Gamma { scv, .. } => {
                m * m * (scv + 1.0)
            }
        };
        (m, second)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let m = self.mean();
        if !(m.is_finite() && m > 0.0) {
            return Err(format!("service mean must be positive and finite, got {m}"));
        }
        match *self {
            ServiceSpec::Erlang { shape: 0, .. } => Err("erlang shape must be >= 1".to_string()),
            ServiceSpec::HyperExp2Balanced { scv, .. } if !(scv.is_finite() && scv >= 1.0) => {
                Err(format!("hyperexp2 scv must be >= 1, got {scv}"))
            }
            ServiceSpec::Gamma { scv, .. } if !(scv.is_finite() && scv > 0.0) => {
                Err(format!("gamma scv must be > 0, got {scv}"))
            }
            _ => Ok(()),
        }
    }
}

/// Free-function form of [`ServiceSpec::moments`].
pub fn moments(spec: &ServiceSpec) -> (f64, f64) {
    spec.moments()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    #[serde(rename = "lambda")]
    pub arrival_rate: f64,
    #[serde(rename = "cost")]
    pub waiting_cost: f64,
    pub service: ServiceSpec,
}

impl ClassSpec {
    pub fn new(arrival_rate: f64, waiting_cost: f64, service: ServiceSpec) -> Self {
        ClassSpec {
            arrival_rate,
            waiting_cost,
            service,
        }
    }
}

/// On-disk model document: `{"classes": [ ... ]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub classes: Vec<ClassSpec>,
}

/// A validated, stable set of customer classes with derived load quantities.
///
/// Classes keep the caller's order; nothing here assumes they are sorted by
/// cost or by bid.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    classes: Vec<ClassSpec>,
    loads: Vec<f64>,
    total_load: f64,
    residual: f64,
    arrival_rate: f64,
    bid_caps: Vec<f64>,
}

impl Model {
    pub fn new(classes: Vec<ClassSpec>) -> Result<Model> {
        if classes.is_empty() {
            return Err(ApqError::EmptyModel);
        }
        for (index, c) in classes.iter().enumerate() {
            let invalid = |reason: String| ApqError::InvalidClass { index, reason };
            if !(c.arrival_rate.is_finite() && c.arrival_rate > 0.0) {
                return Err(invalid(format!(
                    "arrival rate must be positive, got {}",
                    c.arrival_rate
                )));
            }
            if !(c.waiting_cost.is_finite() && c.waiting_cost > 0.0) {
                return Err(invalid(format!(
                    "waiting cost must be positive, got {}",
                    c.waiting_cost
                )));
            }
            c.service.validate().map_err(invalid)?;
        }

        let loads: Vec<f64> = classes
            .iter()
            .map(|c| c.arrival_rate * c.service.mean())
            .collect();
        let total_load: f64 = loads.iter().sum();
        if total_load >= 1.0 {
            return Err(ApqError::Unstable { rho: total_load });
        }
        let residual = classes
            .iter()
            .zip(&loads)
            .map(|(c, rho)| {
                let (m1, m2) = c.service.moments();
                rho * m2 / (2.0 * m1)
            })
            .sum();
        let arrival_rate = classes.iter().map(|c| c.arrival_rate).sum();

        let mut model = Model {
            classes,
            loads,
            total_load,
            residual,
            arrival_rate,
            bid_caps: Vec::new(),
        };
        model.bid_caps = model
            .classes
            .iter()
            .map(|c| model.bid_cap_for(c.waiting_cost))
            .collect();
        Ok(model)
    }

    pub fn from_config(config: ModelConfig) -> Result<Model> {
        Model::new(config.classes)
    }

    pub fn from_json(text: &str) -> Result<Model> {
        Model::from_config(serde_json::from_str(text)?)
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            classes: self.classes.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassSpec] {
        &self.classes
    }

    pub fn class(&self, i: usize) -> &ClassSpec {
        &self.classes[i]
    }

    /// Per-class load `rho_i = lambda_i * E[X_i]`.
    pub fn loads(&self) -> &[f64] {
        &self.loads
    }

    pub fn total_load(&self) -> f64 {
        self.total_load
    }

    /// Mean residual service time seen by an arrival, `W_0`.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn arrival_rate(&self) -> f64 {
        self.arrival_rate
    }

    /// FCFS mean wait `W_0 / (1 - rho)`; also the all-equal-bids wait.
    pub fn fcfs_wait(&self) -> f64 {
        self.residual / (1.0 - self.total_load)
    }

    pub fn costs(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.waiting_cost).collect()
    }

    pub fn mean_services(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.service.mean()).collect()
    }

    /// Upper bid bounds, one per class.
    pub fn bid_caps(&self) -> &[f64] {
        &self.bid_caps
    }

    /// Largest bid a customer with waiting cost `cost` could rationally make:
    /// its cost of waiting behind everyone, `C (λx̄² + 2(1-ρ)x̄) / (2(1-ρ)²)`,
    /// with `x̄` the mean service time of an arbitrary customer.
    pub fn bid_cap_for(&self, cost: f64) -> f64 {
        let idle = 1.0 - self.total_load;
        let second = 2.0 * self.residual;
        let mean_service = self.total_load / self.arrival_rate;
        cost * (second + 2.0 * idle * mean_service) / (2.0 * idle * idle)
    }

    /// Same class mix with every arrival rate scaled so the total load is `rho`.
    pub fn scaled_to_load(&self, rho: f64) -> Result<Model> {
        if !(rho.is_finite() && rho > 0.0) {
            return Err(ApqError::InvalidScale(format!(
                "target load must be positive, got {rho}"
            )));
        }
        let factor = rho / self.total_load;
        Model::new(
            self.classes
                .iter()
                .map(|c| ClassSpec {
                    arrival_rate: c.arrival_rate * factor,
                    ..*c
                })
                .collect(),
        )
    }

    /// Same model with the waiting costs replaced.
    pub fn with_costs(&self, costs: &[f64]) -> Result<Model> {
        if costs.len() != self.len() {
            return Err(ApqError::ProfileLength {
                expected: self.len(),
                got: costs.len(),
            });
        }
        Model::new(
            self.classes
                .iter()
                .zip(costs)
                .map(|(c, &waiting_cost)| ClassSpec { waiting_cost, ..*c })
                .collect(),
        )
    }

    pub(crate) fn check_profile_len(&self, got: usize) -> Result<()> {
        if got == self.len() {
            Ok(())
        } else {
            Err(ApqError::ProfileLength {
                expected: self.len(),
                got,
            })
        }
    }
}

/// Free-function form of [`Model::new`].
pub fn build_model(classes: Vec<ClassSpec>) -> Result<Model> {
    Model::new(classes)
}

pub(crate) fn check_bid(index: usize, bid: f64) -> Result<()> {
    if bid.is_finite() && bid > 0.0 {
        Ok(())
    } else {
        Err(ApqError::NonPositiveBid { index, bid })
    }
}

/// One strictly positive accumulation rate per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BidProfile(Vec<f64>);

impl BidProfile {
    pub fn new(bids: Vec<f64>) -> Result<BidProfile> {
        for (i, &b) in bids.iter().enumerate() {
            check_bid(i, b)?;
        }
        Ok(BidProfile(bids))
    }

    pub fn uniform(n: usize, bid: f64) -> Result<BidProfile> {
        BidProfile::new(vec![bid; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Copy with coordinate `i` replaced.
    pub fn with_bid(&self, i: usize, bid: f64) -> Result<BidProfile> {
        check_bid(i, bid)?;
        let mut v = self.0.clone();
        v[i] = bid;
        Ok(BidProfile(v))
    }
}

impl Deref for BidProfile {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub bid: f64,
    pub prob: f64,
}

/// A finite atom distribution of bids for every class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixedBidProfile(Vec<Vec<Atom>>);

impl MixedBidProfile {
    pub const PROB_TOL: f64 = 1e-12;

    pub fn new(classes: Vec<Vec<Atom>>) -> Result<MixedBidProfile> {
        for (class, atoms) in classes.iter().enumerate() {
            let invalid = |reason: String| ApqError::InvalidMixture { class, reason };
            if atoms.is_empty() {
                return Err(invalid("no atoms".into()));
            }
            for a in atoms {
                if !(a.bid.is_finite() && a.bid > 0.0) {
                    return Err(invalid(format!("atom bid {} is not positive", a.bid)));
                }
                if !(a.prob.is_finite() && a.prob > 0.0 && a.prob <= 1.0) {
                    return Err(invalid(format!(
                        "atom probability {} outside (0, 1]",
                        a.prob
                    )));
                }
            }
            let total: f64 = atoms.iter().map(|a| a.prob).sum();
            if (total - 1.0).abs() > Self::PROB_TOL {
                return Err(invalid(format!("probabilities sum to {total}")));
            }
        }
        Ok(MixedBidProfile(classes))
    }

    /// Degenerate mixture with one atom per class.
    pub fn from_pure(bids: &BidProfile) -> MixedBidProfile {
        MixedBidProfile(
            bids.iter()
                .map(|&bid| vec![Atom { bid, prob: 1.0 }])
                .collect(),
        )
    }

    pub fn classes(&self) -> &[Vec<Atom>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
