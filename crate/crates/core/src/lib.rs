//! Expected waiting times, bidding equilibria, welfare accounting and a
//! simulation oracle for the M/G/1 queue with accumulating priorities.

pub mod analytics;
pub mod equilibrium;
pub mod error;
pub mod model;
pub mod simulator;
pub mod welfare;

pub use analytics::{
    mixed_atom_waits, tagged_waiting, tagged_waiting_derivative, tagged_waiting_mixed,
    waiting_times, WaitCurve, WaitVector,
};
pub use equilibrium::{
    class_best_response, foc_gap, homogeneous_best_response, homogeneous_equilibrium,
    individual_best_response, local_best_response, solve_heterogeneous, solve_heterogeneous_from,
    sweep_equilibria, w_tilde, BestResponseReport, EquilibriumResult, HomogeneousEquilibrium,
    Regime, SolverOptions, SweepMode,
};
pub use error::{ApqError, Result};
pub use model::{
    build_model, moments, Atom, BidProfile, ClassSpec, MixedBidProfile, Model, ModelConfig,
    ServiceSpec,
};
pub use simulator::{
    simulate, ClassStats, Customer, SimBids, SimConfig, SimStats, TaggedProbe, WaitingSet,
};
pub use welfare::{
    absolute_priority_waits, cmu_order, priced_total_costs, pricing_transform, scaled_bids,
    social_cost, social_cost_of_waits, welfare_report, welfare_sweep, WelfareReport,
};
