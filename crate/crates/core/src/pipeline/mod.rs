//! Task graph and the discrete-event engine.

mod engine;
mod graph;

pub use engine::{
    run_simulation, run_simulation_logged, AuditAction, AuditEntry, EventKind, RunLog,
    SimulationError, TaskRun,
};
pub use graph::{
    build_task_graph, topics, Behavior, ExecTime, Mode, Side, TaskGraph, TaskSpec, Trigger,
};
