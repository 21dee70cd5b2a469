//! Reasoning-data annotation, reward math and open-loop evaluation for
//! vision-language driving planners.
//!
//! - [`model`]: trajectories, meta-actions, rationales and training sequences
//! - [`kinematics`]: meta-action labels derived from ground-truth trajectories
//! - [`filters`]: format, decision and logic checks plus feedback text
//! - [`pipeline`]: the iterative annotate, filter, re-annotate loop
//! - [`gateway`]: chat-completion clients
//! - [`reward`]: stage rewards and the group-relative policy objective
//! - [`eval`]: L2, collision rate and Fréchet distance

pub mod config;
pub mod eval;
pub mod filters;
pub mod gateway;
pub mod kinematics;
pub mod model;
pub mod pipeline;
pub mod reward;
