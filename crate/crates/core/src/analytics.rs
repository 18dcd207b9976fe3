//! Closed-form mean waiting times under linear accumulating priorities.
//!
//! Everything here reduces to one object, [`WaitCurve`]: the distinct bid
//! levels present in the system (ascending, ties merged), the load each
//! level carries, and the mean wait solved for each level by forward
//! substitution. A tagged customer of zero load bidding `a` then waits
//!
//! ```text
//!            W0/(1-ρ) - Σ_{b_k <  a} ρ_k (1 - b_k/a) W_k
//! W(a) = -----------------------------------------------
//!              1 - Σ_{b_k >= a} ρ_k (1 - a/b_k)
//! ```
//!
//! and the level waits are that same expression evaluated at each level.

use std::ops::Deref;

use serde::Serialize;

use crate::error::{ApqError, Result};
use crate::model::{check_bid, BidProfile, MixedBidProfile, Model};

/// Per-class mean queueing delay (service excluded).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct WaitVector(Vec<f64>);

impl WaitVector {
    pub fn new(waits: Vec<f64>) -> WaitVector {
        WaitVector(waits)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Relative deviation of `Σ ρ_i W_i` from the work-conserving total
    /// `ρ W0 / (1-ρ)`.
    pub fn conservation_gap(&self, model: &Model) -> f64 {
        let lhs: f64 = model.loads().iter().zip(&self.0).map(|(r, w)| r * w).sum();
        let rhs = model.total_load() * model.fcfs_wait();
        ((lhs - rhs) / rhs).abs()
    }
}

impl Deref for WaitVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Pieces of the tagged-customer first-order condition at bid `a`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FocTerms {
    pub wait: f64,
    /// `1 - Σ_{b_k >= a} ρ_k (1 - a/b_k)`
    pub denom: f64,
    /// `Σ_{b_k < a} ρ_k b_k W_k`
    pub lower_moment: f64,
    /// `Σ_{b_k >= a} ρ_k / b_k`
    pub upper_rate: f64,
}

/// Solved waiting times for a fixed population of bid levels.
#[derive(Debug, Clone)]
pub struct WaitCurve {
    base: f64,
    bids: Vec<f64>,
    loads: Vec<f64>,
    waits: Vec<f64>,
}

impl WaitCurve {
    /// Build from `(bid, load)` pairs; the pairs need not be sorted and equal
    /// bids are pooled into one level. `base` is `W0 / (1-ρ)`.
    pub(crate) fn from_levels(base: f64, mut levels: Vec<(f64, f64)>) -> WaitCurve {
        levels.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut bids: Vec<f64> = Vec::with_capacity(levels.len());
        let mut loads: Vec<f64> = Vec::with_capacity(levels.len());
        for (b, r) in levels {
            match bids.last() {
                Some(&last) if last == b => *loads.last_mut().unwrap() += r,
                _ => {
                    bids.push(b);
                    loads.push(r);
                }
            }
        }
        let mut curve = WaitCurve {
            base,
            bids,
            loads,
            waits: Vec::new(),
        };
        let mut waits = Vec::with_capacity(curve.bids.len());
        for j in 0..curve.bids.len() {
            let bj = curve.bids[j];
            let num = base
                - curve
                    .loads
                    .iter()
                    .zip(&curve.bids)
                    .zip(&waits)
                    .map(|((r, b), w)| r * (1.0 - b / bj) * w)
                    .sum::<f64>();
            let mut den = 1.0;
            for k in j..curve.bids.len() {
                den -= curve.loads[k] * (1.0 - bj / curve.bids[k]);
            }
            waits.push(num / den);
        }
        curve.waits = waits;
        curve
    }

    pub fn new(model: &Model, bids: &BidProfile) -> Result<WaitCurve> {
        model.check_profile_len(bids.len())?;
        let levels = bids
            .iter()
            .copied()
            .zip(model.loads().iter().copied())
            .collect();
        Ok(WaitCurve::from_levels(model.fcfs_wait(), levels))
    }

    pub fn from_mixture(model: &Model, profile: &MixedBidProfile) -> Result<WaitCurve> {
        model.check_profile_len(profile.len())?;
        let levels = profile
            .classes()
            .iter()
            .zip(model.loads())
            .flat_map(|(atoms, &rho)| atoms.iter().map(move |a| (a.bid, rho * a.prob)))
            .collect();
        Ok(WaitCurve::from_levels(model.fcfs_wait(), levels))
    }

    /// Distinct bid levels, ascending.
    pub fn level_bids(&self) -> &[f64] {
        &self.bids
    }

    pub fn level_loads(&self) -> &[f64] {
        &self.loads
    }

    pub fn level_waits(&self) -> &[f64] {
        &self.waits
    }

    /// Wait of the level holding exactly bid `b`, if there is one.
    pub fn level_wait(&self, b: f64) -> Option<f64> {
        self.bids
            .binary_search_by(|x| x.total_cmp(&b))
            .ok()
            .map(|j| self.waits[j])
    }

    pub(crate) fn foc_terms(&self, a: f64) -> FocTerms {
        let split = self.bids.partition_point(|&b| b < a);
        let mut num = self.base;
        let mut lower_moment = 0.0;
        for k in 0..split {
            num -= self.loads[k] * (1.0 - self.bids[k] / a) * self.waits[k];
            lower_moment += self.loads[k] * self.bids[k] * self.waits[k];
        }
        let mut denom = 1.0;
        let mut upper_rate = 0.0;
        for k in split..self.bids.len() {
            denom -= self.loads[k] * (1.0 - a / self.bids[k]);
            upper_rate += self.loads[k] / self.bids[k];
        }
        FocTerms {
            wait: num / denom,
            denom,
            lower_moment,
            upper_rate,
        }
    }

    /// Mean wait of a zero-load customer bidding `a > 0`.
    pub fn wait_at(&self, a: f64) -> f64 {
        self.foc_terms(a).wait
    }

    /// `d/da` of [`WaitCurve::wait_at`]. At a level bid both one-sided
    /// derivatives coincide, so either side's formula gives the value.
    pub fn slope_at(&self, a: f64) -> f64 {
        let t = self.foc_terms(a);
        let num_slope = -t.lower_moment / (a * a);
        (num_slope - t.wait * t.upper_rate) / t.denom
    }
}

/// Mean waits of every class under a pure bid profile.
pub fn waiting_times(model: &Model, bids: &BidProfile) -> Result<WaitVector> {
    let curve = WaitCurve::new(model, bids)?;
    Ok(WaitVector(
        bids.iter()
            .map(|&b| curve.level_wait(b).expect("every class bid is a level"))
            .collect(),
    ))
}

/// Mean wait of a zero-load tagged customer bidding `a` against `bids`.
pub fn tagged_waiting(model: &Model, bids: &BidProfile, a: f64) -> Result<f64> {
    check_bid(bids.len(), a)?;
    Ok(WaitCurve::new(model, bids)?.wait_at(a))
}

/// Derivative of [`tagged_waiting`] with respect to the tagged bid.
pub fn tagged_waiting_derivative(model: &Model, bids: &BidProfile, a: f64) -> Result<f64> {
    check_bid(bids.len(), a)?;
    Ok(WaitCurve::new(model, bids)?.slope_at(a))
}

/// Tagged wait when every class draws its bid from a finite atom mixture.
pub fn tagged_waiting_mixed(model: &Model, profile: &MixedBidProfile, a: f64) -> Result<f64> {
    check_bid(profile.len(), a)?;
    Ok(WaitCurve::from_mixture(model, profile)?.wait_at(a))
}

/// Mean wait of every atom of every class under a mixed profile.
pub fn mixed_atom_waits(model: &Model, profile: &MixedBidProfile) -> Result<Vec<Vec<f64>>> {
    let curve = WaitCurve::from_mixture(model, profile)?;
    Ok(profile
        .classes()
        .iter()
        .map(|atoms| {
            atoms
                .iter()
                .map(|a| curve.level_wait(a.bid).expect("every atom is a level"))
                .collect()
        })
        .collect())
}

/// Ensures a bid vector is non-decreasing; used where formulas index by order.
pub(crate) fn check_ascending(bids: &[f64]) -> Result<()> {
    match bids.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(ApqError::UnorderedProfile { index: i + 1 }),
        None => Ok(()),
    }
}
