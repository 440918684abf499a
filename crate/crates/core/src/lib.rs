//! Hybrid multirate pipeline for cooperative object transport by a team of
//! mobile manipulators.
//!
//! The offline layer turns a signal temporal logic task into a timed object
//! trajectory ([`waypoint`], [`smoothing`]) and a collision-free base footprint
//! plan ([`footprint`]). The online layer re-solves a fixed-budget inverse
//! kinematics problem at a slow rate ([`ik`]) and tracks the zero-order-held
//! joint references with decentralized PD control ([`control`]) inside a
//! rigid-body simulation with compliant grasps ([`sim`]). The executed object
//! trajectory is finally checked against the task ([`sim::evaluate_run`]).

pub mod control;
pub mod footprint;
pub mod geometry;
pub mod ik;
pub mod pipeline;
pub mod robot;
pub mod scenario;
mod serde_float;
pub mod sim;
pub mod smoothing;
pub mod stl;
pub mod waypoint;
