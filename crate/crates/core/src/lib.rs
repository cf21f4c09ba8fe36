//! Deterministic 2D multi-agent driving simulator and motion-planning
//! benchmark harness.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod bridge;
pub mod diagnose;
pub mod dynamics;
pub mod engine;
pub mod geom;
pub mod map;
pub mod metrics;
pub mod policies;
pub mod render;
pub mod runner;
pub mod scenario;
pub mod sensors;
pub mod v2v;
