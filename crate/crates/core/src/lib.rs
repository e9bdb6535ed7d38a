//! Anchored closed-loop mobile manipulation on a deterministic desk-scale simulator.

// Validation writes `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod anchors;
pub mod error;
pub mod executive;
pub mod geometry;
pub mod grasping;
pub mod harness;
pub mod planner;
pub mod reachability;
pub mod recovery;
pub mod sim;
