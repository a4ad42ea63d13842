//! Online resource-constrained scheduling of follow-up observations for
//! telescope arrays, solved by learned local rewriting of dependency-DAG
//! schedules.
//!
//! The crate is layered bottom-up:
//!
//! - [`ephemeris`]: sidereal time, altitude, airmass, the Sun, visibility windows
//! - [`scenario`]: targets of opportunity, their exposure tasks, and a seeded generator
//! - [`schedule`]: feasibility, the dependency DAG, slowdown cost, task embeddings
//! - [`rewriter`]: the single rewriting step and the rewriting search loop
//! - [`heuristics`]: online dispatch baselines, offline STF, and an exhaustive oracle
//! - [`policy`]: the Tree-LSTM encoder, region and rule heads, losses and training

pub mod ephemeris;
pub mod fixtures;
pub mod heuristics;
pub mod policy;
pub mod rewriter;
pub mod scenario;
pub mod schedule;

pub use ephemeris::{GeoCoord, SkyCoord, TimeGrid, VisibilityConstraints, VisibilityWindow};
pub use scenario::{generate_scenario, GenConfig, ObservationTask, Scenario, Site, Target};
pub use schedule::{Assignment, Instance, Node, ScheduleDag, TaskId};
