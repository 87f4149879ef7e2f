//! Collaborative perception (CP) scheduling simulator.
//!
//! A discrete-time (10 Hz) simulator of an urban V2V setting where an ego
//! vehicle requests regional feature maps from connected collaborator
//! vehicles (CoVs) over a shared sidelink, fuses the delivered detections,
//! and learns which collaborators are worth scheduling. The crate provides:
//!
//! - [`world`]: grid scenario generation and lane-following mobility;
//! - [`channel`]: LOS/NLOSv/NLOS link classification, path loss, correlated
//!   shadowing, blockage, fading, and achievable rate;
//! - [`perception`]: visibility topology, stochastic detection, Top-K RFM
//!   truncation, and fusion;
//! - [`scheduling`]: baseline and bandit collaborator-selection policies
//!   (all / closest / greedy coverage / ETC / MASS / C-MASS);
//! - [`engine`]: the per-frame protocol loop and experiment runner;
//! - [`metrics`]: perception loss and recall.

pub mod channel;
pub mod engine;
pub mod geometry;
pub mod metrics;
pub mod perception;
pub mod rng;
pub mod scheduling;
pub mod world;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown entity {0}")]
    UnknownEntity(world::EntityId),
    #[error("{0}")]
    Domain(String),
}

pub use engine::{ExperimentConfig, ExperimentResult, ExperimentSummary, Simulation};
pub use geometry::{Rect, Vec2};
pub use scheduling::{KnowledgeBase, Policy, ScheduleDecision};
pub use world::{EntityId, WorldState};
