//! Loading scenarios and recorded trajectories.

mod scenario;
mod trajectory;

pub use scenario::{
    load_scenario, orientation_from, parse_scenario_table, set_dotted_key, ChainPreset, ChainSpec,
    ConfigError, PayloadSizes, Scenario, TaskOverride, TrackSpec, WorkspaceSpec,
    DEFAULT_CALIBRATION_PERIOD, DEFAULT_FRAME_RATE, MAX_HORIZON, REFERENCE_BANDWIDTH,
    REFERENCE_BASE_DELAY, REFERENCE_JITTER,
};
pub use trajectory::{load_trajectory, write_trajectory, Track, Trajectory, TrajectoryError};
