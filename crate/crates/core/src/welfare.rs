//! Social cost of bidding equilibria against the Cμ benchmark, with and
//! without charging customers in proportion to their mean service time.
//!
//! Social cost is the waiting cost rate `Σ λ_i C_i W_i`. Payments are
//! transfers to the operator and do not enter it.

use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{waiting_times, WaitVector};
use crate::equilibrium::{
    solve_heterogeneous, solve_heterogeneous_from, EquilibriumResult, SolverOptions, SweepMode,
};
use crate::error::{ApqError, Result};
use crate::model::{BidProfile, Model};

pub fn social_cost(model: &Model, bids: &BidProfile) -> Result<f64> {
    Ok(social_cost_of_waits(model, &waiting_times(model, bids)?))
}

pub fn social_cost_of_waits(model: &Model, waits: &[f64]) -> f64 {
    model
        .classes()
        .iter()
        .zip(waits)
        .map(|(c, w)| c.arrival_rate * c.waiting_cost * w)
        .sum()
}

const RATIO_TIE_RTOL: f64 = 1e-12;

/// Classes sorted by `C_i / x̄_i`, lowest priority first. Ties (up to
/// rounding) keep class order.
pub fn cmu_order(model: &Model) -> Vec<usize> {
    let index: Vec<f64> = model
        .classes()
        .iter()
        .map(|c| c.waiting_cost / c.service.mean())
        .collect();
    let mut order: Vec<usize> = (0..model.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (index[a], index[b]);
        if (x - y).abs() <= RATIO_TIE_RTOL * x.max(y) {
            std::cmp::Ordering::Equal
        } else {
            x.total_cmp(&y)
        }
    });
    order
}

fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for &i in order {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(ApqError::InvalidConfig(format!(
                "{order:?} is not a permutation of 0..{n}"
            )));
        }
    }
    if order.len() != n {
        return Err(ApqError::InvalidConfig(format!(
            "{order:?} is not a permutation of 0..{n}"
        )));
    }
    Ok(())
}

/// Mean waits under strict non-preemptive priority, `order` listing classes
/// from lowest to highest priority. Returned in model order.
pub fn absolute_priority_waits(model: &Model, order: &[usize]) -> Result<WaitVector> {
    check_permutation(order, model.len())?;
    let base = model.residual();
    let mut waits = vec![0.0; model.len()];
    let mut above = 0.0;
    for &k in order.iter().rev() {
        let with = above + model.loads()[k];
        waits[k] = base / ((1.0 - above) * (1.0 - with));
        above = with;
    }
    Ok(WaitVector::new(waits))
}

/// Bids `β^(n·r)` where `r` is the 1-based rank in `order` (lowest first).
pub fn scaled_bids(order: &[usize], beta: f64, n: u32) -> Result<BidProfile> {
    if !(beta.is_finite() && beta > 1.0) {
        return Err(ApqError::InvalidScale(format!(
            "beta must exceed 1, got {beta}"
        )));
    }
    if n == 0 {
        return Err(ApqError::InvalidScale("n must be >= 1".into()));
    }
    check_permutation(order, order.len())?;
    let mut bids = vec![0.0; order.len()];
    for (rank, &i) in order.iter().enumerate() {
        let b = beta.powf(f64::from(n) * (rank + 1) as f64);
        if !b.is_finite() {
            return Err(ApqError::InvalidScale(format!(
                "beta^{} overflows",
                f64::from(n) * (rank + 1) as f64
            )));
        }
        bids[i] = b;
    }
    BidProfile::new(bids)
}

/// The game played when a customer bidding `b` pays `x̄_i·b`: identical to
/// the original one with waiting costs `C_i / x̄_i`.
pub fn pricing_transform(model: &Model) -> Model {
    let costs: Vec<f64> = model
        .classes()
        .iter()
        .map(|c| c.waiting_cost / c.service.mean())
        .collect();
    model
        .with_costs(&costs)
        .expect("positive costs over positive means stay valid")
}

/// Expected money spent per customer under pricing, `C_i W_i + x̄_i b_i`,
/// with `W` evaluated at `bids`.
pub fn priced_total_costs(model: &Model, bids: &BidProfile) -> Result<Vec<f64>> {
    let waits = waiting_times(model, bids)?;
    Ok(model
        .classes()
        .iter()
        .zip(waits.iter())
        .zip(bids.iter())
        .map(|((c, w), b)| c.waiting_cost * w + c.service.mean() * b)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelfareReport {
    pub rho: f64,
    pub equilibrium_cost: f64,
    pub priced_cost: f64,
    pub optimal_cost: f64,
    /// `equilibrium_cost / optimal_cost`.
    pub ratio: f64,
    /// `priced_cost / optimal_cost`.
    pub priced_ratio: f64,
    pub equilibrium_bids: Vec<f64>,
    pub priced_bids: Vec<f64>,
    pub optimal_order: Vec<usize>,
}

pub fn welfare_report(model: &Model, opts: &SolverOptions) -> Result<WelfareReport> {
    report_from(model, opts, None, None)
}

fn solve(
    model: &Model,
    init: Option<&BidProfile>,
    opts: &SolverOptions,
) -> Result<EquilibriumResult> {
    match init {
        Some(b) => solve_heterogeneous_from(model, b, opts),
        None => solve_heterogeneous(model, opts),
    }
}

fn report_from(
    model: &Model,
    opts: &SolverOptions,
    plain_init: Option<&BidProfile>,
    priced_init: Option<&BidProfile>,
) -> Result<WelfareReport> {
    let plain = solve(model, plain_init, opts)?;
    let priced = solve(&pricing_transform(model), priced_init, opts)?;
    let order = cmu_order(model);
    let optimal_cost = social_cost_of_waits(model, &absolute_priority_waits(model, &order)?);
    let equilibrium_cost = social_cost_of_waits(model, &plain.waits);
    // the transformed model has the same loads, so its waits apply unchanged
    let priced_cost = social_cost_of_waits(model, &priced.waits);
    Ok(WelfareReport {
        rho: model.total_load(),
        equilibrium_cost,
        priced_cost,
        optimal_cost,
        ratio: equilibrium_cost / optimal_cost,
        priced_ratio: priced_cost / optimal_cost,
        equilibrium_bids: plain.bids,
        priced_bids: priced.bids,
        optimal_order: order,
    })
}

/// [`welfare_report`] at each total load in `rhos`, class mix held fixed.
pub fn welfare_sweep(
    model: &Model,
    rhos: &[f64],
    opts: &SolverOptions,
    mode: SweepMode,
) -> Vec<Result<WelfareReport>> {
    match mode {
        SweepMode::Parallel => rhos
            .par_iter()
            .map(|&rho| welfare_report(&model.scaled_to_load(rho)?, opts))
            .collect(),
        SweepMode::WarmStart => {
            let mut prev: Option<(BidProfile, BidProfile)> = None;
            rhos.iter()
                .map(|&rho| {
                    let scaled = model.scaled_to_load(rho)?;
                    let r = report_from(
                        &scaled,
                        opts,
                        prev.as_ref().map(|p| &p.0),
                        prev.as_ref().map(|p| &p.1),
                    );
                    if let Ok(r) = &r {
                        prev = Some((
                            BidProfile::new(r.equilibrium_bids.clone())?,
                            BidProfile::new(r.priced_bids.clone())?,
                        ));
                    }
                    r
                })
                .collect()
        }
    }
}
