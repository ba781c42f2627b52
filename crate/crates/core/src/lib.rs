//! Discrete-event simulator of an XR robot teleoperation pipeline.
//!
//! A run plays recorded or analytic user motion through XR-side and
//! agent-side task graphs connected by a lossy, delayed network, and records
//! the age of the user pose behind every submitted frame. Duo mode adds a
//! local predictive space on the XR side that is periodically calibrated
//! against the agent's ground truth.

pub mod geometry;
pub mod ingest;
pub mod kinematics;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod spaces;
pub mod time;

pub use ingest::{load_scenario, ConfigError, Scenario};
pub use metrics::{latency_reduction, summarize, Report, RunTrace};
pub use pipeline::{run_simulation, Mode, SimulationError};
