//! Upper-bound terms, the optimal staleness weight, and the lower-bound
//! construction with its coordinate-discovery automaton.

mod bounds;
mod frontier;
mod hard_instance;

pub use bounds::{
    beta_star, check_lr_constraints, theorem1_bound, write_bound_table, BetaStar, BoundBreakdown,
    BoundInputs, LrCheck, LrConstraint,
};
pub use frontier::{
    bernoulli_schedule, deterministic_schedule, dominance_curve, frontier_bound, frontier_sweep,
    lower_bound_curve, track_frontier, write_envelope_table, write_frontier_table,
    CoordinateFrontier, FrontierRow,
};
pub use hard_instance::{frontier_gradient_floor, GradientFloor, HardInstance};
