//! Nash equilibria of the priority-bidding game.
//!
//! A customer of cost `C` bidding `a` against profile `b` pays
//! `C·W(a; b) + a`. Since `W(·; b)` is decreasing and strictly convex the best
//! response is unique and characterised by `C·W'(a) + 1 = 0`. Evaluated at a
//! class's own bid this becomes the symmetric condition `W(b_i) = W̃(b_i)`,
//! where
//!
//! ```text
//!          1 - Σ_{k>=i} ρ_k (1 - b_i/b_k) - (C_i/b_i²) Σ_{k<i} ρ_k b_k W_k
//! W̃(b_i) = --------------------------------------------------------------
//!                          C_i Σ_{k>=i} ρ_k / b_k
//! ```
//!
//! The sign of `W - W̃` matches the sign of `-(C_i W' + 1)`: positive means the
//! class would gain from bidding more. `W - W̃` is decreasing in the class's
//! own bid on an order-preserving bracket, so a bisection finds the local
//! symmetric response, and cyclic (Gauss–Seidel) sweeps of those responses
//! find the equilibrium.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytics::{check_ascending, waiting_times, WaitCurve};
use crate::error::{ApqError, Result};
use crate::model::{check_bid, BidProfile, Model};

const COST_TIE_RTOL: f64 = 1e-12;
const MAX_BISECTIONS: usize = 400;

/// Closed-form equilibrium when every class has the same waiting cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomogeneousEquilibrium {
    pub bid: f64,
    /// Expected total cost `C·W + b` per customer.
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// Follow the crowd: response increasing in the common bid.
    #[serde(rename = "FTC")]
    FollowTheCrowd,
    /// Avoid the crowd: response decreasing in the common bid.
    #[serde(rename = "ATC")]
    AvoidTheCrowd,
    /// Best response is a zero bid.
    #[serde(rename = "ZERO")]
    Zero,
}

impl Regime {
    pub fn label(self) -> &'static str {
        match self {
            Regime::FollowTheCrowd => "FTC",
            Regime::AvoidTheCrowd => "ATC",
            Regime::Zero => "ZERO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BestResponseReport {
    pub bid: f64,
    pub response: f64,
    pub regime: Regime,
    pub equilibrium_bid: f64,
    /// Where the response switches from increasing to decreasing.
    pub breakpoint: f64,
    /// Common bid at and above which the response is zero.
    pub cutoff: f64,
}

fn common_cost(model: &Model) -> Result<f64> {
    let c0 = model.class(0).waiting_cost;
    if model
        .classes()
        .iter()
        .all(|c| (c.waiting_cost - c0).abs() <= COST_TIE_RTOL * c0)
    {
        Ok(c0)
    } else {
        Err(ApqError::HeterogeneousCosts)
    }
}

pub fn homogeneous_equilibrium(model: &Model) -> Result<HomogeneousEquilibrium> {
    let cost = common_cost(model)?;
    let rho = model.total_load();
    Ok(HomogeneousEquilibrium {
        bid: cost * rho * model.fcfs_wait(),
        cost: cost * (1.0 + rho) * model.fcfs_wait(),
    })
}

/// Best response of one customer when everybody else bids `bid`.
pub fn homogeneous_best_response(model: &Model, bid: f64) -> Result<BestResponseReport> {
    check_bid(0, bid)?;
    let be = homogeneous_equilibrium(model)?.bid;
    let rho = model.total_load();
    let idle = 1.0 - rho;
    let cutoff = be / (idle * idle);
    let breakpoint = be * f64::max(1.0, 1.0 / (4.0 * idle * idle));

    let response = if bid < be {
        (be * bid).sqrt()
    } else if bid < cutoff {
        ((be * bid).sqrt() - idle * bid) / rho
    } else {
        0.0
    };
    let regime = if bid >= cutoff {
        Regime::Zero
    } else if bid < breakpoint {
        Regime::FollowTheCrowd
    } else {
        Regime::AvoidTheCrowd
    };
    Ok(BestResponseReport {
        bid,
        response,
        regime,
        equilibrium_bid: be,
        breakpoint,
        cutoff,
    })
}

fn w_tilde_from_curve(curve: &WaitCurve, bid: f64, cost: f64) -> (f64, f64) {
    let t = curve.foc_terms(bid);
    let tilde = (t.denom - cost * t.lower_moment / (bid * bid)) / (cost * t.upper_rate);
    (t.wait, tilde)
}

/// Right-hand side of the symmetric first-order condition for class `i`.
/// `bids` must be non-decreasing in class order.
pub fn w_tilde(model: &Model, bids: &BidProfile, i: usize) -> Result<f64> {
    check_ascending(bids)?;
    let curve = WaitCurve::new(model, bids)?;
    Ok(w_tilde_from_curve(&curve, bids[i], model.class(i).waiting_cost).1)
}

/// `W(b_i; b) - W̃(b_i; b)` for class `i`; zero at a symmetric best response.
pub fn foc_gap(model: &Model, bids: &BidProfile, i: usize) -> Result<f64> {
    let curve = WaitCurve::new(model, bids)?;
    let (w, t) = w_tilde_from_curve(&curve, bids[i], model.class(i).waiting_cost);
    Ok(w - t)
}

/// Root of a decreasing function on `[lo, hi]`, or the endpoint it points to
/// when there is no sign change.
fn decreasing_root(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    if f(lo) <= 0.0 {
        return lo;
    }
    if f(hi) >= 0.0 {
        return hi;
    }
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Symmetric best response of class `i` to the other coordinates of `bids`,
/// searched in `bracket`.
pub fn class_best_response(
    model: &Model,
    bids: &BidProfile,
    i: usize,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64> {
    let (lo, hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
        return Err(ApqError::InvalidBracket { lo, hi });
    }
    model.check_profile_len(bids.len())?;
    let cost = model.class(i).waiting_cost;
    let loads = model.loads();
    let base = model.fcfs_wait();
    let mut trial = bids.to_vec();
    let gap = |x: f64| {
        trial[i] = x;
        let levels = trial.iter().copied().zip(loads.iter().copied()).collect();
        let curve = WaitCurve::from_levels(base, levels);
        let (w, t) = w_tilde_from_curve(&curve, x, cost);
        w - t
    };
    Ok(decreasing_root(gap, lo, hi, tol))
}

/// [`class_best_response`] on the order-preserving bracket between the
/// neighbouring bids (0 below the first class, the top bid cap above the last).
pub fn local_best_response(model: &Model, bids: &BidProfile, i: usize, tol: f64) -> Result<f64> {
    check_ascending(bids)?;
    let cap = model.bid_caps().iter().copied().fold(0.0, f64::max);
    let eps = 1e-12 * cap;
    let lo = if i == 0 { eps } else { bids[i - 1] };
    let hi = if i + 1 == bids.len() {
        cap
    } else {
        bids[i + 1]
    };
    class_best_response(model, bids, i, (lo, hi), tol)
}

/// Cost-minimising bid of a single customer with waiting cost `cost` facing
/// `bids`. Returns 0 when even the smallest positive bid is not worth it.
pub fn individual_best_response(model: &Model, bids: &BidProfile, cost: f64) -> Result<f64> {
    if !(cost.is_finite() && cost > 0.0) {
        return Err(ApqError::InvalidConfig(format!(
            "cost must be positive, got {cost}"
        )));
    }
    let curve = WaitCurve::new(model, bids)?;
    let cap = model.bid_cap_for(cost);
    let floor = 1e-15 * cap;
    let marginal = |a: f64| cost * curve.slope_at(a) + 1.0;
    if marginal(floor) >= 0.0 {
        return Ok(0.0);
    }
    // marginal cost is increasing, so its negation is decreasing
    Ok(decreasing_root(|a| -marginal(a), floor, cap, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on `max_i |W - W̃|`.
    pub tol: f64,
    /// Maximum number of Gauss–Seidel sweeps per start.
    pub max_iter: usize,
    /// Randomised restarts on top of the default start.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 10_000,
            restarts: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    /// Equilibrium bid of every class, in model order.
    pub bids: Vec<f64>,
    pub waits: Vec<f64>,
    /// `C_i W_i + b_i`.
    pub total_costs: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest coordinate distance between any two converged starts.
    pub multistart_agreement: f64,
    pub starts: usize,
    pub starts_converged: usize,
    /// Residual after every sweep of the reported start.
    pub trace: Vec<f64>,
}

impl EquilibriumResult {
    pub fn bid_profile(&self) -> BidProfile {
        BidProfile::new(self.bids.clone()).expect("equilibrium bids are positive")
    }
}

/// Cost-sorted, tie-merged view of a model that the iteration runs on.
#[derive(Debug, Clone)]
struct Game {
    base: f64,
    loads: Vec<f64>,
    costs: Vec<f64>,
    cap: f64,
    /// Game coordinate of every model class.
    slot: Vec<usize>,
}

impl Game {
    fn new(model: &Model) -> Game {
        let mut order: Vec<usize> = (0..model.len()).collect();
        order.sort_by(|&a, &b| {
            model
                .class(a)
                .waiting_cost
                .total_cmp(&model.class(b).waiting_cost)
        });
        let mut loads: Vec<f64> = Vec::new();
        let mut costs: Vec<f64> = Vec::new();
        let mut slot = vec![0; model.len()];
        for i in order {
            let c = model.class(i).waiting_cost;
            match costs.last() {
                Some(&last) if (c - last).abs() <= COST_TIE_RTOL * last => {
                    *loads.last_mut().unwrap() += model.loads()[i];
                }
                _ => {
                    costs.push(c);
                    loads.push(model.loads()[i]);
                }
            }
            slot[i] = costs.len() - 1;
        }
        let cap = model.bid_cap_for(*costs.last().unwrap());
        Game {
            base: model.fcfs_wait(),
            loads,
            costs,
            cap,
            slot,
        }
    }

    fn len(&self) -> usize {
        self.costs.len()
    }

    fn curve(&self, bids: &[f64]) -> WaitCurve {
        let levels = bids
            .iter()
            .copied()
            .zip(self.loads.iter().copied())
            .collect();
        WaitCurve::from_levels(self.base, levels)
    }

    fn gap(&self, bids: &[f64], j: usize) -> f64 {
        let (w, t) = w_tilde_from_curve(&self.curve(bids), bids[j], self.costs[j]);
        w - t
    }

    fn residual(&self, bids: &[f64]) -> f64 {
        (0..self.len())
            .map(|j| self.gap(bids, j).abs())
            .fold(0.0, f64::max)
    }

    fn default_start(&self) -> Vec<f64> {
        let rho: f64 = self.loads.iter().sum();
        self.costs
            .iter()
            .enumerate()
            .map(|(j, c)| c * rho * self.base + j as f64 * 1e-9)
            .collect()
    }

    fn perturbed_start(&self, seed: u64, stream: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let spread = 3.0_f64.ln();
        let mut start: Vec<f64> = self
            .default_start()
            .into_iter()
            .map(|b| b * rng.random_range(-spread..spread).exp())
            .collect();
        self.order_start(&mut start);
        start
    }

    /// Sort and clip a start so it is strictly ascending and inside the cap.
    fn order_start(&self, start: &mut [f64]) {
        start.sort_by(f64::total_cmp);
        let step = 1e-9 * self.cap;
        for j in 0..start.len() {
            start[j] = start[j].clamp(step, self.cap);
            if j > 0 && start[j] <= start[j - 1] {
                start[j] = start[j - 1] + step;
            }
        }
    }

    fn respond(&self, bids: &mut [f64], j: usize) {
        let eps = 1e-12 * self.cap;
        let n = self.len();
        let lo = if j == 0 { eps } else { bids[j - 1] + eps };
        let hi = if j + 1 == n {
            self.cap
        } else {
            bids[j + 1] - eps
        };
        if hi <= lo {
            return;
        }
        let mut trial = bids.to_vec();
        let cost = self.costs[j];
        let gap = |x: f64| {
            trial[j] = x;
            let (w, t) = w_tilde_from_curve(&self.curve(&trial), x, cost);
            w - t
        };
        bids[j] = decreasing_root(gap, lo, hi, 0.0);
    }

    fn run(&self, start: Vec<f64>, opts: &SolverOptions) -> Run {
        let mut bids = start;
        let mut trace = Vec::new();
        let mut residual = f64::INFINITY;
        for _ in 0..opts.max_iter {
            for j in 0..self.len() {
                self.respond(&mut bids, j);
            }
            residual = self.residual(&bids);
            trace.push(residual);
            if residual < opts.tol {
                break;
            }
        }
        Run {
            converged: residual < opts.tol,
            bids,
            residual,
            trace,
        }
    }
}

#[derive(Debug, Clone)]
struct Run {
    bids: Vec<f64>,
    residual: f64,
    converged: bool,
    trace: Vec<f64>,
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Equilibrium bids of a heterogeneous-cost model.
///
/// Classes are solved in ascending cost order (equal costs pooled). Besides
/// the default start `C_i ρ W0/(1-ρ)`, `restarts` log-uniformly perturbed
/// starts are run; the lexicographically smallest converged profile is
/// reported and `multistart_agreement` records how far the converged starts
/// landed from each other. If no start converges the best iterate is returned
/// inside [`ApqError::NoConvergence`].
pub fn solve_heterogeneous(model: &Model, opts: &SolverOptions) -> Result<EquilibriumResult> {
    solve_from(model, None, opts)
}

/// [`solve_heterogeneous`] with an explicit default start (model order).
pub fn solve_heterogeneous_from(
    model: &Model,
    init: &BidProfile,
    opts: &SolverOptions,
) -> Result<EquilibriumResult> {
    model.check_profile_len(init.len())?;
    solve_from(model, Some(init), opts)
}

fn solve_from(
    model: &Model,
    init: Option<&BidProfile>,
    opts: &SolverOptions,
) -> Result<EquilibriumResult> {
    if opts.tol.is_nan() || opts.tol <= 0.0 || opts.max_iter == 0 {
        return Err(ApqError::InvalidConfig(
            "solver needs tol > 0 and max_iter >= 1".into(),
        ));
    }
    let game = Game::new(model);
    let first = match init {
        None => game.default_start(),
        Some(init) => {
            let mut start = vec![0.0; game.len()];
            for (i, &b) in init.iter().enumerate() {
                start[game.slot[i]] = b;
            }
            game.order_start(&mut start);
            start
        }
    };
    let runs: Vec<Run> = (0..=opts.restarts)
        .into_par_iter()
        .map(|k| {
            let start = if k == 0 {
                first.clone()
            } else {
                game.perturbed_start(opts.seed, k as u64)
            };
            game.run(start, opts)
        })
        .collect();

    let converged: Vec<&Run> = runs.iter().filter(|r| r.converged).collect();
    let mut agreement: f64 = 0.0;
    for (a, ra) in converged.iter().enumerate() {
        for rb in &converged[a + 1..] {
            for (x, y) in ra.bids.iter().zip(&rb.bids) {
                agreement = agreement.max((x - y).abs());
            }
        }
    }
    let primary = converged
        .iter()
        .copied()
        .min_by(|a, b| lexicographic(&a.bids, &b.bids))
        .unwrap_or_else(|| {
            runs.iter()
                .min_by(|a, b| a.residual.total_cmp(&b.residual))
                .expect("at least one start")
        });

    let bids: Vec<f64> = game.slot.iter().map(|&j| primary.bids[j]).collect();
    let profile = BidProfile::new(bids.clone())?;
    let waits = waiting_times(model, &profile)?.into_vec();
    let total_costs = model
        .classes()
        .iter()
        .zip(&waits)
        .zip(&bids)
        .map(|((c, w), b)| c.waiting_cost * w + b)
        .collect();
    let result = EquilibriumResult {
        bids,
        waits,
        total_costs,
        residual: primary.residual,
        iterations: primary.trace.len(),
        converged: primary.converged,
        multistart_agreement: agreement,
        starts: runs.len(),
        starts_converged: converged.len(),
        trace: primary.trace.clone(),
    };
    if result.converged {
        Ok(result)
    } else {
        Err(ApqError::NoConvergence(Box::new(result)))
    }
}

/// How a sweep over total loads is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SweepMode {
    /// In order, each point starting from the previous point's equilibrium.
    #[default]
    WarmStart,
    /// All points concurrently from the default start.
    Parallel,
}

/// Equilibria of `model` rescaled to each total load in `rhos`, with the
/// class mix held fixed.
pub fn sweep_equilibria(
    model: &Model,
    rhos: &[f64],
    opts: &SolverOptions,
    mode: SweepMode,
) -> Vec<Result<EquilibriumResult>> {
    match mode {
        SweepMode::Parallel => rhos
            .par_iter()
            .map(|&rho| solve_heterogeneous(&model.scaled_to_load(rho)?, opts))
            .collect(),
        SweepMode::WarmStart => {
            let mut prev: Option<BidProfile> = None;
            rhos.iter()
                .map(|&rho| {
                    let scaled = model.scaled_to_load(rho)?;
                    let r = match &prev {
                        Some(init) => solve_heterogeneous_from(&scaled, init, opts),
                        None => solve_heterogeneous(&scaled, opts),
                    };
                    if let Ok(r) = &r {
                        prev = Some(r.bid_profile());
                    }
                    r
                })
                .collect()
        }
    }
}
