//! Planners with systematic deviations from the Bellman update, exact Bayesian
//! reward inference over a finite Θ, and sweeps measuring how much a
//! demonstrator's biases help or hurt the inferrer.

pub mod checks;
pub mod environments;
pub mod error;
pub mod experiments;
pub mod inference;
pub mod mdp;
pub mod planners;
pub mod reward;
pub mod rng;

pub use error::{Error, Result};
pub use mdp::{Mdp, Policy, QFunction, Trajectory, ValueFunction};
pub use planners::{PlanOptions, PlannerKind, PlannerSpec, PolicyCache};
pub use reward::{RewardFn, RewardSpec, RewardTable, ThetaSpace};
