//! Scenario files: TOML with strict keys, defaults and a canonical form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::trajectory::{load_trajectory, Track};
use crate::geometry::{quat_normalize, Pose, UnitQuaternion};
use crate::kinematics::{IkParams, JointVector, KinematicChain};
use crate::network::{ChannelModel, Direction, Jitter, PayloadKind};
use crate::pipeline::{Behavior, ExecTime, Mode, Trigger};
use crate::spaces::{MergeStrategy, WorkspaceMap};
use crate::time::{format_duration, parse_duration, Nanos, SimTime, NANOS_PER_SEC};

/// Longest horizon a scenario may request.
pub const MAX_HORIZON: Nanos = 3600 * NANOS_PER_SEC;

pub const DEFAULT_FRAME_RATE: f64 = 90.0;
pub const DEFAULT_CALIBRATION_PERIOD: Nanos = 500_000_000;
pub const REFERENCE_BASE_DELAY: Nanos = 450_000_000;
pub const REFERENCE_JITTER: Jitter = Jitter::Uniform {
    lo: 0,
    hi: 100_000_000,
};
/// Bytes per second of the reference channel.
pub const REFERENCE_BANDWIDTH: u64 = 800_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{0}")]
    Syntax(String),
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadSizes {
    pub user_pose: u64,
    pub transform_string: u64,
    pub pointcloud: u64,
    pub video: u64,
    pub calibration: u64,
}

impl Default for PayloadSizes {
    fn default() -> Self {
        PayloadSizes {
            user_pose: 256,
            transform_string: 128,
            pointcloud: 64 * 1024,
            video: 128 * 1024,
            calibration: 512,
        }
    }
}

impl PayloadSizes {
    pub fn of(&self, kind: PayloadKind) -> u64 {
        match kind {
            PayloadKind::UserPose => self.user_pose,
            PayloadKind::TransformString => self.transform_string,
            PayloadKind::PointCloud => self.pointcloud,
            PayloadKind::Video => self.video,
            PayloadKind::Calibration => self.calibration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskOverride {
    pub exec: Option<ExecTime>,
    pub trigger: Option<Trigger>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainPreset {
    Planar3,
    Kinova6,
    Planar(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    pub preset: ChainPreset,
    /// Initial agent joints.
    pub home: Vec<f64>,
    pub base: [f64; 3],
}

impl ChainSpec {
    pub fn build(&self) -> Result<KinematicChain, ConfigError> {
        let chain = match &self.preset {
            ChainPreset::Planar3 => KinematicChain::planar3(),
            ChainPreset::Kinova6 => KinematicChain::kinova_j2n6s300(),
            ChainPreset::Planar(links) => KinematicChain::planar(links)
                .map_err(|e| ConfigError::invalid("chain.links", e.to_string()))?,
        };
        let base = Pose::from_position(Vector3::from(self.base), SimTime::ZERO);
        KinematicChain::new(chain.joints().to_vec(), base)
            .map_err(|e| ConfigError::invalid("chain", e.to_string()))
    }

    pub fn is_planar(&self) -> bool {
        !matches!(self.preset, ChainPreset::Kinova6)
    }

    fn default_home(preset: &ChainPreset) -> Vec<f64> {
        match preset {
            ChainPreset::Planar3 => vec![0.3, 0.8, 0.8],
            ChainPreset::Kinova6 => vec![4.8, 2.9, 1.0, 4.2, 1.4, 1.3],
            ChainPreset::Planar(links) => vec![0.3; links.len()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceSpec {
    pub center: [f64; 3],
    pub scale: f64,
    /// Fraction of the chain reach that targets are clamped to.
    pub max_radius_fraction: f64,
}

impl Default for WorkspaceSpec {
    fn default() -> Self {
        WorkspaceSpec {
            center: [0.6, 0.3, 0.0],
            scale: 0.25,
            max_radius_fraction: 0.95,
        }
    }
}

/// Where a pose stream comes from, as written in the scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum TrackSpec {
    /// EuRoC ground-truth CSV, relative to the scenario file.
    File(String),
    Static {
        position: [f64; 3],
        orientation: [f64; 4],
    },
    Linear {
        start: [f64; 3],
        velocity: [f64; 3],
    },
    Circle {
        center: [f64; 3],
        radius: f64,
        frequency_hz: f64,
        phase: f64,
    },
}

/// A fully validated scenario with every default applied.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub horizon: Nanos,
    pub frame_rate: f64,
    pub mode: Mode,
    pub seed: u64,
    pub calibration_period: Nanos,
    pub merge: MergeStrategy,
    pub uplink: ChannelModel,
    pub downlink: ChannelModel,
    pub payload: PayloadSizes,
    pub tasks: BTreeMap<String, TaskOverride>,
    pub chain: ChainSpec,
    pub ik: IkParams,
    pub workspace: WorkspaceSpec,
    pub head: TrackSpec,
    pub hand: Option<TrackSpec>,
    /// Hand position in the head frame when no hand track is given.
    pub hand_offset: [f64; 3],
    pub objects: BTreeMap<String, TrackSpec>,
    base_dir: PathBuf,
    resolved: Resolved,
}

#[derive(Debug, Clone)]
struct Resolved {
    head: Track,
    hand: Track,
    objects: Vec<(String, Track)>,
}

// ---- raw file layout -------------------------------------------------------

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    horizon: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    frame_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration_period: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    merge: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    network: Option<RawNetwork>,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload: Option<RawPayload>,
    #[serde(skip_serializing_if = "Option::is_none")]
    chain: Option<RawChain>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ik: Option<RawIk>,
    #[serde(skip_serializing_if = "Option::is_none")]
    workspace: Option<RawWorkspace>,
    trajectories: RawTrajectories,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    objects: BTreeMap<String, RawMotion>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    tasks: BTreeMap<String, RawTask>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawChannel {
    #[serde(skip_serializing_if = "Option::is_none")]
    base_delay: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    jitter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    drop_prob: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    #[serde(skip_serializing_if = "Option::is_none")]
    base_delay: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    jitter: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bandwidth: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    drop_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uplink: Option<RawChannel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    downlink: Option<RawChannel>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawPayload {
    user_pose: Option<u64>,
    transform_string: Option<u64>,
    pointcloud: Option<u64>,
    video: Option<u64>,
    calibration: Option<u64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    #[serde(skip_serializing_if = "Option::is_none")]
    exec: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trigger: Option<String>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawChain {
    #[serde(skip_serializing_if = "Option::is_none")]
    preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    links: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    home: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    base: Option<[f64; 3]>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawIk {
    damping: Option<f64>,
    tol_pos: Option<f64>,
    tol_rot: Option<f64>,
    max_iters: Option<u32>,
    step_clamp: Option<f64>,
    rot_weight: Option<f64>,
}

#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawWorkspace {
    center: Option<[f64; 3]>,
    scale: Option<f64>,
    max_radius_fraction: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawTrajectories {
    head: RawTrack,
    #[serde(skip_serializing_if = "Option::is_none")]
    hand: Option<RawTrack>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hand_offset: Option<[f64; 3]>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(untagged)]
enum RawTrack {
    Path(String),
    Motion(RawMotion),
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "motion", rename_all = "snake_case", deny_unknown_fields)]
enum RawMotion {
    File {
        path: String,
    },
    Static {
        position: [f64; 3],
        #[serde(skip_serializing_if = "Option::is_none")]
        orientation: Option<[f64; 4]>,
    },
    Linear {
        start: [f64; 3],
        velocity: [f64; 3],
    },
    Circle {
        center: [f64; 3],
        radius: f64,
        frequency_hz: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        phase: Option<f64>,
    },
}

// ---- parsing -----------------------------------------------------------------

fn duration(key: &str, text: &str) -> Result<Nanos, ConfigError> {
    parse_duration(text).map_err(|e| ConfigError::invalid(key, e.to_string()))
}

fn parse_jitter(key: &str, text: &str) -> Result<Jitter, ConfigError> {
    if text == "none" {
        return Ok(Jitter::None);
    }
    let bad = || ConfigError::invalid(key, format!("`{text}` should be none or uniform:<lo>:<hi>"));
    let rest = text.strip_prefix("uniform:").ok_or_else(bad)?;
    let (lo, hi) = rest.split_once(':').ok_or_else(bad)?;
    let (lo, hi) = (duration(key, lo)?, duration(key, hi)?);
    if lo > hi {
        return Err(ConfigError::invalid(
            key,
            "jitter lower bound exceeds upper bound",
        ));
    }
    Ok(Jitter::Uniform { lo, hi })
}

fn format_jitter(j: &Jitter) -> String {
    match j {
        Jitter::None => "none".into(),
        Jitter::Uniform { lo, hi } => {
            format!("uniform:{}:{}", format_duration(*lo), format_duration(*hi))
        }
    }
}

fn channel(
    prefix: &str,
    shared: &RawNetwork,
    own: Option<&RawChannel>,
    direction: Direction,
) -> Result<ChannelModel, ConfigError> {
    let empty = RawChannel::default();
    let own = own.unwrap_or(&empty);
    let key = |field: &str| {
        if own_has(own, field) {
            format!("network.{prefix}.{field}")
        } else {
            format!("network.{field}")
        }
    };
    let base_delay = match own.base_delay.as_ref().or(shared.base_delay.as_ref()) {
        Some(t) => duration(&key("base_delay"), t)?,
        None => REFERENCE_BASE_DELAY,
    };
    let jitter = match own.jitter.as_ref().or(shared.jitter.as_ref()) {
        Some(t) => parse_jitter(&key("jitter"), t)?,
        None => REFERENCE_JITTER,
    };
    let bandwidth = own
        .bandwidth
        .or(shared.bandwidth)
        .unwrap_or(REFERENCE_BANDWIDTH);
    let drop_prob = own.drop_prob.or(shared.drop_prob).unwrap_or(0.0);
    if !(0.0..1.0).contains(&drop_prob) {
        return Err(ConfigError::invalid(key("drop_prob"), "must lie in [0, 1)"));
    }
    Ok(ChannelModel {
        base_delay,
        jitter,
        bandwidth,
        drop_prob,
        direction,
    })
}

fn own_has(own: &RawChannel, field: &str) -> bool {
    match field {
        "base_delay" => own.base_delay.is_some(),
        "jitter" => own.jitter.is_some(),
        "bandwidth" => own.bandwidth.is_some(),
        _ => own.drop_prob.is_some(),
    }
}

fn track_spec(key: &str, raw: &RawMotion) -> Result<TrackSpec, ConfigError> {
    let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
    let spec = match raw {
        RawMotion::File { path } => TrackSpec::File(path.clone()),
        RawMotion::Static {
            position,
            orientation,
        } => {
            let q = orientation.unwrap_or([1.0, 0.0, 0.0, 0.0]);
            quat_normalize(q)
                .map_err(|e| ConfigError::invalid(format!("{key}.orientation"), e.to_string()))?;
            if !finite(position) {
                return Err(ConfigError::invalid(
                    format!("{key}.position"),
                    "must be finite",
                ));
            }
            TrackSpec::Static {
                position: *position,
                orientation: q,
            }
        }
        RawMotion::Linear { start, velocity } => {
            if !finite(start) || !finite(velocity) {
                return Err(ConfigError::invalid(key, "values must be finite"));
            }
            TrackSpec::Linear {
                start: *start,
                velocity: *velocity,
            }
        }
        RawMotion::Circle {
            center,
            radius,
            frequency_hz,
            phase,
        } => {
            let phase = phase.unwrap_or(0.0);
            if !finite(center) || !finite(&[*radius, *frequency_hz, phase]) || *radius < 0.0 {
                return Err(ConfigError::invalid(
                    key,
                    "radius must be >= 0 and all values finite",
                ));
            }
            TrackSpec::Circle {
                center: *center,
                radius: *radius,
                frequency_hz: *frequency_hz,
                phase,
            }
        }
    };
    Ok(spec)
}

fn raw_motion(spec: &TrackSpec) -> RawMotion {
    match spec {
        TrackSpec::File(path) => RawMotion::File { path: path.clone() },
        TrackSpec::Static {
            position,
            orientation,
        } => RawMotion::Static {
            position: *position,
            orientation: Some(*orientation),
        },
        TrackSpec::Linear { start, velocity } => RawMotion::Linear {
            start: *start,
            velocity: *velocity,
        },
        TrackSpec::Circle {
            center,
            radius,
            frequency_hz,
            phase,
        } => RawMotion::Circle {
            center: *center,
            radius: *radius,
            frequency_hz: *frequency_hz,
            phase: Some(*phase),
        },
    }
}

fn resolve_track(
    key: &str,
    spec: &TrackSpec,
    base_dir: &Path,
    horizon: Nanos,
) -> Result<Track, ConfigError> {
    let track = match spec {
        TrackSpec::File(path) => {
            let full = base_dir.join(path);
            let file = File::open(&full)
                .map_err(|e| ConfigError::invalid(key, format!("{}: {e}", full.display())))?;
            let traj = load_trajectory(std::io::BufReader::new(file))
                .map_err(|e| ConfigError::invalid(key, format!("{}: {e}", full.display())))?;
            Track::Recorded(Arc::new(traj))
        }
        TrackSpec::Static {
            position,
            orientation,
        } => Track::Static(Pose::new(
            Vector3::from(*position),
            quat_normalize(*orientation).expect("validated"),
            SimTime::ZERO,
        )),
        TrackSpec::Linear { start, velocity } => Track::Linear {
            start: Vector3::from(*start),
            velocity: Vector3::from(*velocity),
        },
        TrackSpec::Circle {
            center,
            radius,
            frequency_hz,
            phase,
        } => Track::Circle {
            center: Vector3::from(*center),
            radius: *radius,
            frequency_hz: *frequency_hz,
            phase: *phase,
        },
    };
    if !track.covers(horizon) {
        return Err(ConfigError::invalid(
            key,
            format!(
                "trajectory ends at {} but the horizon is {}",
                format_duration(track.end().expect("bounded").as_nanos()),
                format_duration(horizon)
            ),
        ));
    }
    Ok(track)
}

impl Scenario {
    /// Parses scenario text; relative trajectory paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Scenario, ConfigError> {
        let raw: RawScenario = toml::from_str(text)
            .map_err(|e| ConfigError::Syntax(e.to_string().trim_end().to_string()))?;
        Scenario::from_raw(raw, base_dir)
    }

    /// Builds a scenario from an already parsed TOML table.
    pub fn from_table(table: toml::Table, base_dir: &Path) -> Result<Scenario, ConfigError> {
        let raw: RawScenario = table.try_into().map_err(|e: toml::de::Error| {
            ConfigError::Syntax(e.to_string().trim_end().to_string())
        })?;
        Scenario::from_raw(raw, base_dir)
    }

    fn from_raw(raw: RawScenario, base_dir: &Path) -> Result<Scenario, ConfigError> {
        let horizon = duration("horizon", &raw.horizon)?;
        if horizon == 0 || horizon > MAX_HORIZON {
            return Err(ConfigError::invalid(
                "horizon",
                "must be > 0 and at most 1 hour",
            ));
        }
        let frame_rate = raw.frame_rate.unwrap_or(DEFAULT_FRAME_RATE);
        if !(frame_rate.is_finite()
            && (frame_rate * 1000.0).round() >= 1.0
            && frame_rate <= 10_000.0)
        {
            return Err(ConfigError::invalid(
                "frame_rate",
                "must be > 0 Hz (and at most 10 kHz)",
            ));
        }
        let mode = match &raw.mode {
            Some(m) => m
                .parse()
                .map_err(|e: String| ConfigError::invalid("mode", e))?,
            None => Mode::Baseline,
        };
        let calibration_period = match &raw.calibration_period {
            Some(t) => duration("calibration_period", t)?,
            None => DEFAULT_CALIBRATION_PERIOD,
        };
        if calibration_period == 0 {
            return Err(ConfigError::invalid("calibration_period", "must be > 0"));
        }
        let merge = match &raw.merge {
            Some(m) => m.parse().map_err(|e: crate::spaces::SpacesError| {
                ConfigError::invalid("merge", e.to_string())
            })?,
            None => MergeStrategy::Snap,
        };

        let net = raw.network.unwrap_or_default();
        let uplink = channel("uplink", &net, net.uplink.as_ref(), Direction::Uplink)?;
        let downlink = channel("downlink", &net, net.downlink.as_ref(), Direction::Downlink)?;

        let defaults = PayloadSizes::default();
        let p = raw.payload.unwrap_or_default();
        let payload = PayloadSizes {
            user_pose: p.user_pose.unwrap_or(defaults.user_pose),
            transform_string: p.transform_string.unwrap_or(defaults.transform_string),
            pointcloud: p.pointcloud.unwrap_or(defaults.pointcloud),
            video: p.video.unwrap_or(defaults.video),
            calibration: p.calibration.unwrap_or(defaults.calibration),
        };
        for kind in PayloadKind::ALL {
            if payload.of(kind) == 0 {
                return Err(ConfigError::invalid(
                    format!("payload.{kind}"),
                    "must be > 0 bytes",
                ));
            }
        }

        let mut tasks = BTreeMap::new();
        for (name, t) in raw.tasks {
            if Behavior::from_name(&name).is_none() {
                return Err(ConfigError::invalid(
                    format!("tasks.{name}"),
                    "unknown task",
                ));
            }
            let exec = t
                .exec
                .map(|e| e.parse::<ExecTime>())
                .transpose()
                .map_err(|e| ConfigError::invalid(format!("tasks.{name}.exec"), e))?;
            let trigger = t
                .trigger
                .map(|e| e.parse::<Trigger>())
                .transpose()
                .map_err(|e| ConfigError::invalid(format!("tasks.{name}.trigger"), e))?;
            tasks.insert(name, TaskOverride { exec, trigger });
        }

        let c = raw.chain.unwrap_or_default();
        let preset = match (c.preset.as_deref().unwrap_or("planar3"), c.links) {
            ("planar3", None) => ChainPreset::Planar3,
            ("kinova6", None) => ChainPreset::Kinova6,
            ("planar", Some(links)) => ChainPreset::Planar(links),
            ("planar", None) => {
                return Err(ConfigError::invalid(
                    "chain.links",
                    "required for the planar preset",
                ))
            }
            ("planar3" | "kinova6", Some(_)) => {
                return Err(ConfigError::invalid(
                    "chain.links",
                    "only allowed with preset = \"planar\"",
                ))
            }
            (other, _) => {
                return Err(ConfigError::invalid(
                    "chain.preset",
                    format!("unknown preset `{other}` (expected planar3, kinova6 or planar)"),
                ))
            }
        };
        let chain = ChainSpec {
            home: c.home.unwrap_or_else(|| ChainSpec::default_home(&preset)),
            preset,
            base: c.base.unwrap_or([0.0; 3]),
        };
        let built = chain.build()?;
        if chain.home.len() != built.dof() {
            return Err(ConfigError::invalid(
                "chain.home",
                format!(
                    "has {} angles but the chain has {} joints",
                    chain.home.len(),
                    built.dof()
                ),
            ));
        }

        let ik_defaults = IkParams {
            rot_weight: 0.0,
            ..IkParams::default()
        };
        let i = raw.ik.unwrap_or_default();
        let ik = IkParams {
            damping: i.damping.unwrap_or(ik_defaults.damping),
            tol_pos: i.tol_pos.unwrap_or(ik_defaults.tol_pos),
            tol_rot: i.tol_rot.unwrap_or(ik_defaults.tol_rot),
            max_iters: i.max_iters.unwrap_or(ik_defaults.max_iters),
            step_clamp: i.step_clamp.unwrap_or(ik_defaults.step_clamp),
            rot_weight: i.rot_weight.unwrap_or(ik_defaults.rot_weight),
        };
        ik.validate()
            .map_err(|e| ConfigError::invalid("ik", e.to_string()))?;

        let w = raw.workspace.unwrap_or_default();
        let wd = WorkspaceSpec::default();
        let workspace = WorkspaceSpec {
            center: w.center.unwrap_or(wd.center),
            scale: w.scale.unwrap_or(wd.scale),
            max_radius_fraction: w.max_radius_fraction.unwrap_or(wd.max_radius_fraction),
        };
        if !workspace.scale.is_finite() || !workspace.center.iter().all(|v| v.is_finite()) {
            return Err(ConfigError::invalid("workspace", "values must be finite"));
        }
        if !(workspace.max_radius_fraction > 0.0 && workspace.max_radius_fraction <= 1.0) {
            return Err(ConfigError::invalid(
                "workspace.max_radius_fraction",
                "must lie in (0, 1]",
            ));
        }

        let to_motion = |raw: RawTrack| match raw {
            RawTrack::Path(p) => RawMotion::File { path: p },
            RawTrack::Motion(m) => m,
        };
        let head = track_spec("trajectories.head", &to_motion(raw.trajectories.head))?;
        let hand = raw
            .trajectories
            .hand
            .map(|h| track_spec("trajectories.hand", &to_motion(h)))
            .transpose()?;
        let hand_offset = raw.trajectories.hand_offset.unwrap_or([0.35, -0.15, -0.25]);
        let mut objects = BTreeMap::new();
        for (id, m) in &raw.objects {
            if id == crate::spaces::AGENT_ID {
                return Err(ConfigError::invalid(
                    format!("objects.{id}"),
                    "name is reserved",
                ));
            }
            objects.insert(id.clone(), track_spec(&format!("objects.{id}"), m)?);
        }

        let head_track = resolve_track("trajectories.head", &head, base_dir, horizon)?;
        let hand_track = match &hand {
            Some(spec) => resolve_track("trajectories.hand", spec, base_dir, horizon)?,
            None => Track::Offset {
                base: Box::new(head_track.clone()),
                offset: Vector3::from(hand_offset),
            },
        };
        let mut object_tracks = Vec::new();
        for (id, spec) in &objects {
            object_tracks.push((
                id.clone(),
                resolve_track(&format!("objects.{id}"), spec, base_dir, horizon)?,
            ));
        }

        Ok(Scenario {
            horizon,
            frame_rate,
            mode,
            seed: raw.seed.unwrap_or(0),
            calibration_period,
            merge,
            uplink,
            downlink,
            payload,
            tasks,
            chain,
            ik,
            workspace,
            head,
            hand,
            hand_offset,
            objects,
            base_dir: base_dir.to_path_buf(),
            resolved: Resolved {
                head: head_track,
                hand: hand_track,
                objects: object_tracks,
            },
        })
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    /// Frame rate in integer millihertz; frame deadlines derive from this.
    pub fn frame_rate_mhz(&self) -> u64 {
        (self.frame_rate * 1000.0).round() as u64
    }

    /// Frame period rounded to the nearest nanosecond.
    pub fn frame_period_nanos(&self) -> Nanos {
        let mhz = u128::from(self.frame_rate_mhz());
        ((1_000_000_000_000u128 + mhz / 2) / mhz) as Nanos
    }

    /// Deadline of frame `k` (k >= 1) on the exact rational grid.
    pub fn frame_deadline(&self, k: u64) -> SimTime {
        let ns = u128::from(k) * 1_000_000_000_000u128 / u128::from(self.frame_rate_mhz());
        SimTime::from_nanos(ns as Nanos)
    }

    pub fn head_track(&self) -> &Track {
        &self.resolved.head
    }

    pub fn hand_track(&self) -> &Track {
        &self.resolved.hand
    }

    pub fn object_tracks(&self) -> &[(String, Track)] {
        &self.resolved.objects
    }

    pub fn workspace_map(&self, chain: &KinematicChain) -> Result<WorkspaceMap, ConfigError> {
        let reference = self
            .hand_track()
            .sample(SimTime::ZERO)
            .map_err(|e| ConfigError::invalid("trajectories.hand", e.to_string()))?
            .position;
        Ok(WorkspaceMap {
            center: Vector3::from(self.workspace.center),
            scale: self.workspace.scale,
            reference,
            planar: self.chain.is_planar(),
            max_radius: self.workspace.max_radius_fraction * chain.reach(),
        })
    }

    pub fn home_joints(&self) -> JointVector {
        JointVector::new(self.chain.home.clone())
    }

    /// Canonical TOML: every field explicit, fixed ordering.
    pub fn to_canonical_toml(&self) -> String {
        let chan = |c: &ChannelModel| RawChannel {
            base_delay: Some(format_duration(c.base_delay)),
            jitter: Some(format_jitter(&c.jitter)),
            bandwidth: Some(c.bandwidth),
            drop_prob: Some(c.drop_prob),
        };
        let (preset, links) = match &self.chain.preset {
            ChainPreset::Planar3 => ("planar3", None),
            ChainPreset::Kinova6 => ("kinova6", None),
            ChainPreset::Planar(l) => ("planar", Some(l.clone())),
        };
        let raw = RawScenario {
            horizon: format_duration(self.horizon),
            frame_rate: Some(self.frame_rate),
            mode: Some(self.mode.to_string()),
            seed: Some(self.seed),
            calibration_period: Some(format_duration(self.calibration_period)),
            merge: Some(self.merge.to_string()),
            network: Some(RawNetwork {
                uplink: Some(chan(&self.uplink)),
                downlink: Some(chan(&self.downlink)),
                ..RawNetwork::default()
            }),
            payload: Some(RawPayload {
                user_pose: Some(self.payload.user_pose),
                transform_string: Some(self.payload.transform_string),
                pointcloud: Some(self.payload.pointcloud),
                video: Some(self.payload.video),
                calibration: Some(self.payload.calibration),
            }),
            chain: Some(RawChain {
                preset: Some(preset.into()),
                links,
                home: Some(self.chain.home.clone()),
                base: Some(self.chain.base),
            }),
            ik: Some(RawIk {
                damping: Some(self.ik.damping),
                tol_pos: Some(self.ik.tol_pos),
                tol_rot: Some(self.ik.tol_rot),
                max_iters: Some(self.ik.max_iters),
                step_clamp: Some(self.ik.step_clamp),
                rot_weight: Some(self.ik.rot_weight),
            }),
            workspace: Some(RawWorkspace {
                center: Some(self.workspace.center),
                scale: Some(self.workspace.scale),
                max_radius_fraction: Some(self.workspace.max_radius_fraction),
            }),
            trajectories: RawTrajectories {
                head: RawTrack::Motion(raw_motion(&self.head)),
                hand: self.hand.as_ref().map(|h| RawTrack::Motion(raw_motion(h))),
                hand_offset: Some(self.hand_offset),
            },
            objects: self
                .objects
                .iter()
                .map(|(k, v)| (k.clone(), raw_motion(v)))
                .collect(),
            tasks: self
                .tasks
                .iter()
                .map(|(k, o)| {
                    (
                        k.clone(),
                        RawTask {
                            exec: o.exec.map(|e| e.to_string()),
                            trigger: o.trigger.as_ref().map(|t| t.to_string()),
                        },
                    )
                })
                .collect(),
        };
        toml::to_string(&raw).expect("scenario serializes to TOML")
    }

    /// SHA-256 of the canonical form, as lowercase hex.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_toml().as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest.iter() {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    Scenario::from_toml_str(&text, base)
}

/// Parses scenario text into a TOML table for key edits.
pub fn parse_scenario_table(text: &str) -> Result<toml::Table, ConfigError> {
    text.parse::<toml::Table>()
        .map_err(|e| ConfigError::Syntax(e.to_string().trim_end().to_string()))
}

/// Sets a dotted key such as `network.base_delay`. Values that parse as a
/// TOML value are used as such; anything else is taken as a string.
pub fn set_dotted_key(table: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::invalid(key, "malformed key"));
    }
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::invalid(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}

/// A unit quaternion from raw config components.
pub fn orientation_from(q: [f64; 4]) -> Option<UnitQuaternion> {
    quat_normalize(q).ok()
}
