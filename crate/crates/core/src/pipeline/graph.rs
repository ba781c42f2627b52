//! The XR and agent task sets and their publish/subscribe wiring.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::{ConfigError, Scenario};
use crate::time::{format_duration, parse_duration, Nanos};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Duo,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Duo => "duo",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "duo" => Ok(Mode::Duo),
            other => Err(format!("unknown mode `{other}` (expected baseline or duo)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Xr,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecTime {
    Fixed(Nanos),
    /// Inclusive range, sampled per release.
    Uniform {
        lo: Nanos,
        hi: Nanos,
    },
}

impl ExecTime {
    pub fn max(&self) -> Nanos {
        match *self {
            ExecTime::Fixed(n) => n,
            ExecTime::Uniform { hi, .. } => hi,
        }
    }
}

impl fmt::Display for ExecTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            ExecTime::Fixed(n) => f.write_str(&format_duration(n)),
            ExecTime::Uniform { lo, hi } => {
                write!(f, "uniform:{}:{}", format_duration(lo), format_duration(hi))
            }
        }
    }
}

impl FromStr for ExecTime {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix("uniform:") {
            Some(rest) => {
                let (lo, hi) = rest
                    .split_once(':')
                    .ok_or_else(|| format!("`{s}` should look like uniform:<lo>:<hi>"))?;
                let lo = parse_duration(lo).map_err(|e| e.to_string())?;
                let hi = parse_duration(hi).map_err(|e| e.to_string())?;
                if lo > hi {
                    return Err(format!("`{s}` has lo > hi"));
                }
                Ok(ExecTime::Uniform { lo, hi })
            }
            None => parse_duration(s)
                .map(ExecTime::Fixed)
                .map_err(|e| e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Trigger {
    Periodic {
        period: Nanos,
        phase: Nanos,
    },
    /// Released whenever any listed topic is published.
    OnMessage(Vec<String>),
    /// Part of the chain that ends exactly at each frame deadline.
    PreSubmit,
    /// Released at `deadline - exec` so its output is published on the deadline.
    FrameSync,
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Trigger::Periodic { period, phase: 0 } => {
                write!(f, "periodic:{}", format_duration(*period))
            }
            Trigger::Periodic { period, phase } => {
                write!(
                    f,
                    "periodic:{}:{}",
                    format_duration(*period),
                    format_duration(*phase)
                )
            }
            Trigger::OnMessage(topics) => write!(f, "on:{}", topics.join(",")),
            Trigger::PreSubmit => f.write_str("presubmit"),
            Trigger::FrameSync => f.write_str("framesync"),
        }
    }
}

impl FromStr for Trigger {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "presubmit" {
            return Ok(Trigger::PreSubmit);
        }
        if s == "framesync" {
            return Ok(Trigger::FrameSync);
        }
        if let Some(rest) = s.strip_prefix("periodic:") {
            let (period, phase) = match rest.split_once(':') {
                Some((p, ph)) => (p, Some(ph)),
                None => (rest, None),
            };
            let period = parse_duration(period).map_err(|e| e.to_string())?;
            if period == 0 {
                return Err("period must be > 0".into());
            }
            let phase = phase
                .map(parse_duration)
                .transpose()
                .map_err(|e| e.to_string())?
                .unwrap_or(0);
            return Ok(Trigger::Periodic { period, phase });
        }
        if let Some(rest) = s.strip_prefix("on:") {
            let topics: Vec<String> = rest.split(',').map(str::to_string).collect();
            if topics.iter().any(String::is_empty) {
                return Err(format!("`{s}` has an empty topic name"));
            }
            return Ok(Trigger::OnMessage(topics));
        }
        Err(format!(
            "unknown trigger `{s}` (expected periodic:<period>[:<phase>], on:<topics>, presubmit or framesync)"
        ))
    }
}

/// What a task computes when it runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Behavior {
    ImuIntegration,
    Vio,
    HandTracking,
    WsClientSend,
    WsClientRecv,
    TransformListener,
    PointcloudUpdate,
    SceneReconstruction,
    Atw,
    FrameSubmit,
    LocalIkPredict,
    ObjectPredict,
    CalibrationMerge,
    RosbridgeServer,
    StatePublisher,
    IkSolver,
    TransformCompress,
    VisualSlam,
    CamFeed,
    CalibrationSend,
}

pub mod topics {
    pub const IMU: &str = "xr/imu";
    pub const HEAD_POSE: &str = "xr/head_pose";
    pub const HAND_POSE: &str = "xr/hand_pose";
    pub const RX_TRANSFORM: &str = "xr/rx/transform";
    pub const RX_POINTCLOUD: &str = "xr/rx/pointcloud";
    pub const RX_VIDEO: &str = "xr/rx/video";
    pub const RX_CALIBRATION: &str = "xr/rx/calibration";
    pub const TRANSFORM_STRING: &str = "xr/transform_string";
    pub const POINTCLOUD: &str = "xr/pointcloud";
    pub const VIDEO: &str = "xr/video";
    pub const CALIBRATION: &str = "xr/calibration";
    pub const AGENT_STATE: &str = "xr/agent_state";
    pub const OBJECTS: &str = "xr/objects";
    pub const AGENT_PRED: &str = "xr/agent_pred";
    pub const OBJECTS_PRED: &str = "xr/objects_pred";
    pub const DUO_SPACE: &str = "xr/duo_space";
    pub const SCENE: &str = "xr/scene";
    pub const FRAME: &str = "xr/frame";
    pub const SUBMIT: &str = "xr/submit";
    pub const AGENT_RX_USER_POSE: &str = "agent/rx/user_pose";
    pub const AGENT_USER_POSE: &str = "agent/user_pose";
    pub const AGENT_IK_TARGET: &str = "agent/ik_target";
    pub const AGENT_JOINT_CMD: &str = "agent/joint_cmd";

    /// Topics fed by network deliveries rather than by tasks.
    pub const NETWORK: [&str; 5] = [
        RX_TRANSFORM,
        RX_POINTCLOUD,
        RX_VIDEO,
        RX_CALIBRATION,
        AGENT_RX_USER_POSE,
    ];
}

use topics as t;

impl Behavior {
    pub const BASELINE_XR: [Behavior; 10] = [
        Behavior::ImuIntegration,
        Behavior::Vio,
        Behavior::HandTracking,
        Behavior::WsClientSend,
        Behavior::WsClientRecv,
        Behavior::TransformListener,
        Behavior::PointcloudUpdate,
        Behavior::SceneReconstruction,
        Behavior::Atw,
        Behavior::FrameSubmit,
    ];
    pub const DUO_XR: [Behavior; 3] = [
        Behavior::LocalIkPredict,
        Behavior::ObjectPredict,
        Behavior::CalibrationMerge,
    ];
    pub const BASELINE_AGENT: [Behavior; 6] = [
        Behavior::RosbridgeServer,
        Behavior::StatePublisher,
        Behavior::IkSolver,
        Behavior::TransformCompress,
        Behavior::VisualSlam,
        Behavior::CamFeed,
    ];
    pub const DUO_AGENT: [Behavior; 1] = [Behavior::CalibrationSend];

    pub fn all() -> impl Iterator<Item = Behavior> {
        Self::BASELINE_XR
            .into_iter()
            .chain(Self::DUO_XR)
            .chain(Self::BASELINE_AGENT)
            .chain(Self::DUO_AGENT)
    }

    pub fn name(self) -> &'static str {
        match self {
            Behavior::ImuIntegration => "imu_integration",
            Behavior::Vio => "vio",
            Behavior::HandTracking => "hand_tracking",
            Behavior::WsClientSend => "ws_client_send",
            Behavior::WsClientRecv => "ws_client_recv",
            Behavior::TransformListener => "transform_listener",
            Behavior::PointcloudUpdate => "pointcloud_update",
            Behavior::SceneReconstruction => "scene_reconstruction",
            Behavior::Atw => "atw",
            Behavior::FrameSubmit => "frame_submit",
            Behavior::LocalIkPredict => "local_ik_predict",
            Behavior::ObjectPredict => "object_predict",
            Behavior::CalibrationMerge => "calibration_merge",
            Behavior::RosbridgeServer => "rosbridge_server",
            Behavior::StatePublisher => "state_publisher",
            Behavior::IkSolver => "ik_solver",
            Behavior::TransformCompress => "transform_compress",
            Behavior::VisualSlam => "visual_slam",
            Behavior::CamFeed => "cam_feed",
            Behavior::CalibrationSend => "calibration_send",
        }
    }

    pub fn from_name(name: &str) -> Option<Behavior> {
        Self::all().find(|b| b.name() == name)
    }

    pub fn side(self) -> Side {
        if Self::BASELINE_AGENT.contains(&self) || self == Behavior::CalibrationSend {
            Side::Agent
        } else {
            Side::Xr
        }
    }

    /// Position in the pre-submit chain, if the task is part of it.
    pub fn chain_index(self) -> Option<usize> {
        match self {
            Behavior::SceneReconstruction => Some(0),
            Behavior::Atw => Some(1),
            Behavior::FrameSubmit => Some(2),
            _ => None,
        }
    }

    fn default_exec(self) -> ExecTime {
        const US: Nanos = 1_000;
        let ns = match self {
            Behavior::ImuIntegration => 200 * US,
            Behavior::Vio => 5_000 * US,
            Behavior::HandTracking => 8_000 * US,
            Behavior::WsClientSend | Behavior::WsClientRecv => 500 * US,
            Behavior::TransformListener => 1_000 * US,
            Behavior::PointcloudUpdate => 3_000 * US,
            Behavior::SceneReconstruction => 4_000 * US,
            Behavior::Atw => 1_000 * US,
            Behavior::FrameSubmit => 0,
            Behavior::LocalIkPredict => 8_000 * US,
            Behavior::ObjectPredict => 200 * US,
            Behavior::CalibrationMerge => 500 * US,
            Behavior::RosbridgeServer | Behavior::StatePublisher => 1_000 * US,
            Behavior::IkSolver => 8_000 * US,
            Behavior::TransformCompress => 2_000 * US,
            Behavior::VisualSlam => 30_000 * US,
            Behavior::CamFeed | Behavior::CalibrationSend => 500 * US,
        };
        ExecTime::Fixed(ns)
    }

    fn default_trigger(self, frame_period: Nanos, calibration_period: Nanos) -> Trigger {
        let on =
            |topics: &[&str]| Trigger::OnMessage(topics.iter().map(|s| s.to_string()).collect());
        match self {
            Behavior::ImuIntegration => Trigger::Periodic {
                period: 2_000_000,
                phase: 0,
            },
            Behavior::Vio | Behavior::HandTracking => Trigger::FrameSync,
            Behavior::WsClientSend => on(&[t::HAND_POSE]),
            Behavior::WsClientRecv => on(&[
                t::RX_TRANSFORM,
                t::RX_POINTCLOUD,
                t::RX_VIDEO,
                t::RX_CALIBRATION,
            ]),
            Behavior::TransformListener => on(&[t::TRANSFORM_STRING]),
            Behavior::PointcloudUpdate => on(&[t::POINTCLOUD]),
            Behavior::SceneReconstruction | Behavior::Atw | Behavior::FrameSubmit => {
                Trigger::PreSubmit
            }
            Behavior::LocalIkPredict => on(&[t::HAND_POSE]),
            Behavior::ObjectPredict => on(&[t::AGENT_PRED]),
            Behavior::CalibrationMerge => on(&[t::OBJECTS_PRED]),
            Behavior::RosbridgeServer => on(&[t::AGENT_RX_USER_POSE]),
            Behavior::StatePublisher => on(&[t::AGENT_USER_POSE]),
            Behavior::IkSolver => on(&[t::AGENT_IK_TARGET]),
            Behavior::TransformCompress => on(&[t::AGENT_JOINT_CMD]),
            Behavior::VisualSlam => Trigger::Periodic {
                period: 33_333_333,
                phase: 0,
            },
            Behavior::CamFeed => Trigger::Periodic {
                period: frame_period,
                phase: 0,
            },
            Behavior::CalibrationSend => Trigger::Periodic {
                period: calibration_period,
                phase: 0,
            },
        }
    }

    fn io(self, mode: Mode) -> (Vec<&'static str>, Vec<&'static str>) {
        let (reads, writes): (&[&str], &[&str]) = match self {
            Behavior::ImuIntegration => (&[], &[t::IMU]),
            Behavior::Vio => (&[], &[t::HEAD_POSE]),
            Behavior::HandTracking => (&[], &[t::HAND_POSE]),
            Behavior::WsClientSend => (&[t::HEAD_POSE, t::HAND_POSE], &[]),
            Behavior::WsClientRecv => (
                &[
                    t::RX_TRANSFORM,
                    t::RX_POINTCLOUD,
                    t::RX_VIDEO,
                    t::RX_CALIBRATION,
                ],
                &[t::TRANSFORM_STRING, t::POINTCLOUD, t::VIDEO, t::CALIBRATION],
            ),
            Behavior::TransformListener => (&[t::TRANSFORM_STRING], &[t::AGENT_STATE]),
            Behavior::PointcloudUpdate => (&[t::POINTCLOUD], &[t::OBJECTS]),
            Behavior::SceneReconstruction => match mode {
                Mode::Baseline => (
                    &[t::AGENT_STATE, t::OBJECTS, t::HEAD_POSE, t::VIDEO],
                    &[t::SCENE],
                ),
                Mode::Duo => (&[t::DUO_SPACE, t::HEAD_POSE, t::VIDEO], &[t::SCENE]),
            },
            Behavior::Atw => (&[t::SCENE, t::IMU], &[t::FRAME]),
            Behavior::FrameSubmit => (&[t::FRAME], &[t::SUBMIT]),
            Behavior::LocalIkPredict => (&[t::HAND_POSE], &[t::AGENT_PRED]),
            Behavior::ObjectPredict => (&[t::AGENT_PRED], &[t::OBJECTS_PRED]),
            Behavior::CalibrationMerge => (&[t::OBJECTS_PRED, t::CALIBRATION], &[t::DUO_SPACE]),
            Behavior::RosbridgeServer => (&[t::AGENT_RX_USER_POSE], &[t::AGENT_USER_POSE]),
            Behavior::StatePublisher => (&[t::AGENT_USER_POSE], &[t::AGENT_IK_TARGET]),
            Behavior::IkSolver => (&[t::AGENT_IK_TARGET], &[t::AGENT_JOINT_CMD]),
            Behavior::TransformCompress => (&[t::AGENT_JOINT_CMD], &[]),
            Behavior::VisualSlam | Behavior::CamFeed | Behavior::CalibrationSend => (&[], &[]),
        };
        (reads.to_vec(), writes.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub behavior: Behavior,
    pub trigger: Trigger,
    pub exec: ExecTime,
    pub reads: Vec<String>,
    pub writes: Vec<String>,
    pub side: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskGraph {
    pub tasks: Vec<TaskSpec>,
    pub topics: BTreeSet<String>,
    pub mode: Mode,
}

impl TaskGraph {
    pub fn task(&self, name: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.name == name)
    }

    pub fn count(&self, side: Side) -> usize {
        self.tasks.iter().filter(|t| t.side == side).count()
    }

    /// Indices of tasks whose trigger listens on `topic`.
    pub fn subscribers(&self, topic: &str) -> Vec<usize> {
        self.tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| matches!(&t.trigger, Trigger::OnMessage(ts) if ts.iter().any(|x| x == topic)))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Instantiates the task set for `mode`, applying the scenario's overrides.
pub fn build_task_graph(scenario: &Scenario, mode: Mode) -> Result<TaskGraph, ConfigError> {
    let frame_period = scenario.frame_period_nanos();
    let mut behaviors: Vec<Behavior> = Behavior::BASELINE_XR.to_vec();
    if mode == Mode::Duo {
        behaviors.extend(Behavior::DUO_XR);
    }
    behaviors.extend(Behavior::BASELINE_AGENT);
    if mode == Mode::Duo {
        behaviors.extend(Behavior::DUO_AGENT);
    }

    let mut tasks = Vec::with_capacity(behaviors.len());
    for b in behaviors {
        let (reads, writes) = b.io(mode);
        let mut spec = TaskSpec {
            name: b.name().to_string(),
            behavior: b,
            trigger: b.default_trigger(frame_period, scenario.calibration_period),
            exec: b.default_exec(),
            reads: reads.into_iter().map(String::from).collect(),
            writes: writes.into_iter().map(String::from).collect(),
            side: b.side(),
        };
        if let Some(o) = scenario.tasks.get(b.name()) {
            if let Some(exec) = o.exec {
                spec.exec = exec;
            }
            if let Some(trigger) = &o.trigger {
                let key = format!("tasks.{}.trigger", b.name());
                if b.chain_index().is_some() || *trigger == Trigger::PreSubmit {
                    return Err(ConfigError::invalid(
                        key,
                        "the pre-submit chain cannot be re-triggered",
                    ));
                }
                spec.trigger = trigger.clone();
            }
        }
        tasks.push(spec);
    }

    let mut topics: BTreeSet<String> = topics::NETWORK.iter().map(|s| s.to_string()).collect();
    for task in &tasks {
        topics.extend(task.writes.iter().cloned());
    }
    for task in &tasks {
        let key = |field: &str| format!("tasks.{}.{field}", task.name);
        for topic in task.reads.iter().chain(match &task.trigger {
            Trigger::OnMessage(ts) => ts.iter(),
            _ => [].iter(),
        }) {
            if !topics.contains(topic) {
                return Err(ConfigError::invalid(
                    key("trigger"),
                    format!("unknown topic `{topic}`"),
                ));
            }
        }
        if task.trigger == Trigger::FrameSync && task.exec.max() > frame_period {
            return Err(ConfigError::invalid(
                key("exec"),
                "a frame-synchronous task must finish within one frame period",
            ));
        }
    }
    let chain_budget: Nanos = tasks
        .iter()
        .filter(|t| t.behavior.chain_index().is_some())
        .map(|t| t.exec.max())
        .sum();
    if chain_budget > frame_period {
        return Err(ConfigError::invalid(
            "tasks.scene_reconstruction.exec",
            format!(
                "pre-submit chain needs up to {} but a frame lasts {}",
                format_duration(chain_budget),
                format_duration(frame_period)
            ),
        ));
    }
    Ok(TaskGraph {
        tasks,
        topics,
        mode,
    })
}
