//! User-side and agent-side virtual spaces, local prediction models and
//! calibration merges.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{pose_distance, quat_slerp, GeometryError, Pose, PoseSource, UnitQuaternion};
use crate::kinematics::{
    forward_kinematics_at, inverse_kinematics, DecodedTransform, IkParams, JointVector,
    KinematicChain, KinematicsError,
};
use crate::network::CalibrationBody;
use crate::time::{format_duration, parse_duration, Nanos, SimTime, NANOS_PER_SEC};

/// Identifier used for the agent end effector in merge events.
pub const AGENT_ID: &str = "agent";

/// A merge window closes once the remaining correction is below this, in meters.
pub const MERGE_SETTLED: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpacesError {
    #[error("object history is empty")]
    EmptyHistory,
    #[error("prediction time {t} precedes the latest anchor at {anchor}")]
    PredictBeforeAnchor { t: SimTime, anchor: SimTime },
    #[error("calibration stamped {stamp} is not newer than {previous}")]
    StaleCalibration { stamp: SimTime, previous: SimTime },
    #[error("invalid merge strategy `{0}`")]
    InvalidStrategy(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Maps a tracked hand position into the robot workspace as an IK target.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkspaceMap {
    /// Workspace point that the reference hand position maps to.
    pub center: Vector3<f64>,
    pub scale: f64,
    /// Hand position that maps onto `center`.
    pub reference: Vector3<f64>,
    /// Project targets onto the base z = 0 plane.
    pub planar: bool,
    /// Targets are pulled inside this distance from the chain base.
    pub max_radius: f64,
}

impl WorkspaceMap {
    pub fn target(&self, hand: &Pose, base: &Pose) -> Pose {
        let mut p = self.center + (hand.position - self.reference) * self.scale;
        if self.planar {
            p.z = base.position.z;
        }
        let offset = p - base.position;
        let dist = offset.norm();
        if dist > self.max_radius {
            p = base.position + offset * (self.max_radius / dist);
        }
        Pose::from_position(p, hand.stamp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub pose: Pose,
    pub source: PoseSource,
    /// Meters per second.
    pub velocity: Vector3<f64>,
}

/// The poses one side keeps of the shared scene.
///
/// On the user side in duo mode `agent_ee` is the displayed pose, which can
/// carry a merge correction on top of `forward_kinematics(agent_joints)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSpace {
    pub user_head: Pose,
    pub user_body: Pose,
    pub user_hand: Pose,
    pub agent_joints: JointVector,
    pub agent_stamp: SimTime,
    pub agent_source: PoseSource,
    pub agent_ee: Pose,
    /// Stamp of the user pose the agent state derives from, if any.
    pub agent_origin: Option<SimTime>,
    pub objects: BTreeMap<String, ObjectState>,
}

impl VirtualSpace {
    pub fn new(
        chain: &KinematicChain,
        joints: JointVector,
        objects: &[(String, Pose)],
        source: PoseSource,
    ) -> Result<Self, SpacesError> {
        let agent_ee = forward_kinematics_at(chain, &joints, SimTime::ZERO)?;
        Ok(VirtualSpace {
            user_head: Pose::default(),
            user_body: Pose::default(),
            user_hand: Pose::default(),
            agent_joints: joints,
            agent_stamp: SimTime::ZERO,
            agent_source: source,
            agent_ee,
            agent_origin: None,
            objects: objects
                .iter()
                .map(|(id, pose)| {
                    (
                        id.clone(),
                        ObjectState {
                            pose: *pose,
                            source,
                            velocity: Vector3::zeros(),
                        },
                    )
                })
                .collect(),
        })
    }

    /// Replaces the agent joints and recomputes the end effector.
    pub fn set_agent_joints(
        &mut self,
        chain: &KinematicChain,
        joints: JointVector,
        stamp: SimTime,
        source: PoseSource,
    ) -> Result<(), SpacesError> {
        self.agent_ee = forward_kinematics_at(chain, &joints, stamp)?;
        self.agent_joints = joints;
        self.agent_stamp = stamp;
        self.agent_source = source;
        Ok(())
    }

    /// Applies network-fed state in baseline mode. Either input may be absent
    /// (latest-value semantics leave the space unchanged).
    pub fn update_baseline_space(
        &mut self,
        chain: &KinematicChain,
        transform: Option<&DecodedTransform>,
        pointcloud: Option<(SimTime, &[(String, Pose)])>,
    ) -> Result<BaselineUpdate, SpacesError> {
        let mut outcome = BaselineUpdate::default();
        if let Some(ts) = transform {
            let stale = self
                .agent_origin
                .is_some_and(|current| ts.origin_user_stamp < current);
            if stale {
                outcome.stale_transform = true;
            } else {
                self.set_agent_joints(chain, ts.joints.clone(), ts.stamp, PoseSource::GroundTruth)?;
                self.agent_origin = Some(ts.origin_user_stamp);
                outcome.agent_updated = true;
            }
        }
        if let Some((stamp, objects)) = pointcloud {
            for (id, pose) in objects {
                let velocity = match self.objects.get(id) {
                    Some(prev) if stamp > prev.pose.stamp => {
                        let dt = (stamp - prev.pose.stamp) as f64 / NANOS_PER_SEC as f64;
                        (pose.position - prev.pose.position) / dt
                    }
                    Some(prev) => prev.velocity,
                    None => Vector3::zeros(),
                };
                self.objects.insert(
                    id.clone(),
                    ObjectState {
                        pose: pose.with_stamp(stamp),
                        source: PoseSource::GroundTruth,
                        velocity,
                    },
                );
            }
            outcome.objects_updated = objects.len();
        }
        Ok(outcome)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BaselineUpdate {
    pub agent_updated: bool,
    pub stale_transform: bool,
    pub objects_updated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPrediction {
    pub joints: JointVector,
    pub pose: Pose,
    pub converged: bool,
}

/// Runs the mirrored agent IK locally. On non-convergence the seed joints are
/// kept and the prediction is flagged.
pub fn predict_agent_pose(
    target: &Pose,
    chain: &KinematicChain,
    seed: &JointVector,
    ik: &IkParams,
) -> Result<AgentPrediction, SpacesError> {
    let solution = inverse_kinematics(chain, target, seed, ik)?;
    let joints = if solution.converged {
        solution.joints
    } else {
        seed.clone()
    };
    let pose = forward_kinematics_at(chain, &joints, target.stamp)?;
    Ok(AgentPrediction {
        joints,
        pose,
        converged: solution.converged,
    })
}

/// Constant-velocity extrapolation from the two most recent anchors, holding
/// the latest orientation. A single anchor is held constant.
pub fn predict_object_pose(history: &[Pose], t: SimTime) -> Result<Pose, SpacesError> {
    let latest = history.last().ok_or(SpacesError::EmptyHistory)?;
    if t < latest.stamp {
        return Err(SpacesError::PredictBeforeAnchor {
            t,
            anchor: latest.stamp,
        });
    }
    let velocity = object_velocity(history);
    let dt = (t - latest.stamp) as f64 / NANOS_PER_SEC as f64;
    Ok(Pose::new(
        latest.position + velocity * dt,
        latest.orientation,
        t,
    ))
}

fn object_velocity(history: &[Pose]) -> Vector3<f64> {
    match history {
        [.., prev, latest] if latest.stamp > prev.stamp => {
            let dt = (latest.stamp - prev.stamp) as f64 / NANOS_PER_SEC as f64;
            (latest.position - prev.position) / dt
        }
        _ => Vector3::zeros(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MergeStrategy {
    Snap,
    /// Linear correction over a window of simulated time.
    Interp(Nanos),
    /// Removes a fraction of the remaining gap every frame.
    Blend(f64),
}

impl MergeStrategy {
    pub fn validate(&self) -> Result<(), SpacesError> {
        match *self {
            MergeStrategy::Interp(0) => Err(SpacesError::InvalidStrategy(self.to_string())),
            MergeStrategy::Blend(a) if !(a > 0.0 && a <= 1.0) => {
                Err(SpacesError::InvalidStrategy(self.to_string()))
            }
            _ => Ok(()),
        }
    }

    /// Fraction of the initial gap still uncorrected after `frames` frames.
    pub fn remaining(&self, frames: u32, frame_period: Nanos) -> f64 {
        match *self {
            MergeStrategy::Snap => 0.0,
            MergeStrategy::Blend(alpha) => (1.0 - alpha).powi(frames as i32),
            MergeStrategy::Interp(window) => {
                let elapsed = u128::from(frames) * u128::from(frame_period);
                if elapsed >= u128::from(window) {
                    0.0
                } else {
                    1.0 - elapsed as f64 / window as f64
                }
            }
        }
    }
}

impl fmt::Display for MergeStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MergeStrategy::Snap => f.write_str("snap"),
            MergeStrategy::Interp(w) => write!(f, "interp:{}", format_duration(*w)),
            MergeStrategy::Blend(a) => write!(f, "blend:{a}"),
        }
    }
}

impl FromStr for MergeStrategy {
    type Err = SpacesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || SpacesError::InvalidStrategy(s.to_string());
        let strategy = match s.split_once(':') {
            None if s == "snap" => MergeStrategy::Snap,
            Some(("interp", w)) => MergeStrategy::Interp(parse_duration(w).map_err(|_| invalid())?),
            Some(("blend", a)) => MergeStrategy::Blend(a.parse().map_err(|_| invalid())?),
            _ => return Err(invalid()),
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeEvent {
    pub time: SimTime,
    pub id: String,
    /// Displayed pose just before the calibration was applied.
    pub pre_merge: Pose,
    /// Calibrated pose at the merge instant.
    pub ground_truth: Pose,
    pub delta_d: f64,
    /// Largest per-frame change of the applied correction over the window.
    pub max_step: f64,
    pub strategy: MergeStrategy,
}

#[derive(Debug, Clone)]
struct MergeWindow {
    event: MergeEvent,
    offset: Vector3<f64>,
    rot_offset: UnitQuaternion,
    frames: u32,
    remaining: f64,
}

impl MergeWindow {
    fn settled(&self) -> bool {
        self.remaining == 0.0 || self.remaining * self.event.delta_d < MERGE_SETTLED
    }
}

/// Tracks open merge windows and the corrections they apply.
///
/// A correction starts as the gap from the new target to the pre-merge pose
/// and shrinks according to the strategy; the first step is applied in the
/// same frame the calibration is merged.
#[derive(Debug, Clone)]
pub struct Merger {
    strategy: MergeStrategy,
    frame_period: Nanos,
    active: BTreeMap<String, MergeWindow>,
    completed: Vec<MergeEvent>,
}

impl Merger {
    pub fn new(strategy: MergeStrategy, frame_period: Nanos) -> Self {
        Merger {
            strategy,
            frame_period,
            active: BTreeMap::new(),
            completed: Vec::new(),
        }
    }

    pub fn strategy(&self) -> MergeStrategy {
        self.strategy
    }

    pub fn is_active(&self, id: &str) -> bool {
        self.active.contains_key(id)
    }

    /// Opens a window for `id`, closing any window still open for it.
    pub fn begin(
        &mut self,
        id: &str,
        now: SimTime,
        pre_merge: Pose,
        target: Pose,
    ) -> Result<(), SpacesError> {
        if let Some(previous) = self.active.remove(id) {
            self.completed.push(previous.event);
        }
        let delta_d = pose_distance(&pre_merge, &target);
        let mut window = MergeWindow {
            event: MergeEvent {
                time: now,
                id: id.to_string(),
                pre_merge,
                ground_truth: target,
                delta_d,
                max_step: 0.0,
                strategy: self.strategy,
            },
            offset: pre_merge.position - target.position,
            rot_offset: pre_merge.orientation.mul(&target.orientation.inverse()),
            frames: 0,
            remaining: 1.0,
        };
        self.step(&mut window);
        if window.settled() {
            self.completed.push(window.event);
        } else {
            self.active.insert(id.to_string(), window);
        }
        Ok(())
    }

    fn step(&self, window: &mut MergeWindow) {
        window.frames += 1;
        let next = self.strategy.remaining(window.frames, self.frame_period);
        let step = if next == 0.0 {
            // exact for snap: the whole remaining gap in one frame
            window.remaining * window.event.delta_d
        } else {
            (window.remaining - next) * window.event.delta_d
        };
        window.event.max_step = window.event.max_step.max(step);
        window.remaining = next;
    }

    /// Advances every open window by one frame.
    pub fn advance(&mut self) {
        let ids: Vec<String> = self.active.keys().cloned().collect();
        for id in ids {
            let mut window = self.active.remove(&id).expect("key was just listed");
            self.step(&mut window);
            if window.settled() {
                self.completed.push(window.event);
            } else {
                self.active.insert(id, window);
            }
        }
    }

    /// `target` with the open correction for `id` applied.
    pub fn apply(&self, id: &str, target: &Pose) -> Result<Pose, SpacesError> {
        let Some(window) = self.active.get(id) else {
            return Ok(*target);
        };
        let r = window.remaining;
        let rot = quat_slerp(&UnitQuaternion::IDENTITY, &window.rot_offset, r)?;
        Ok(Pose::new(
            target.position + window.offset * r,
            rot.mul(&target.orientation),
            target.stamp,
        ))
    }

    /// Completed events so far, in completion order.
    pub fn take_completed(&mut self) -> Vec<MergeEvent> {
        std::mem::take(&mut self.completed)
    }

    /// Closes every window and returns all events ordered by (time, id).
    pub fn finish(mut self) -> Vec<MergeEvent> {
        let open: Vec<MergeWindow> = std::mem::take(&mut self.active).into_values().collect();
        self.completed.extend(open.into_iter().map(|w| w.event));
        let mut events = self.completed;
        events.sort_by(|a, b| (a.time, &a.id).cmp(&(b.time, &b.id)));
        events
    }
}

/// User-side space in duo mode: local models, anchors and merge state.
#[derive(Debug, Clone)]
pub struct DuoSpace {
    chain: KinematicChain,
    ik: IkParams,
    merger: Merger,
    model_joints: JointVector,
    model_ee: Pose,
    model_origin: Option<SimTime>,
    last_target: Option<Pose>,
    anchors: BTreeMap<String, Vec<Pose>>,
    model_objects: BTreeMap<String, Pose>,
    predict_time: SimTime,
    last_calibration: Option<SimTime>,
    calibration_origin: Option<SimTime>,
    displayed: VirtualSpace,
    stale_calibrations: u64,
    unconverged: u64,
}

impl DuoSpace {
    pub fn new(
        chain: KinematicChain,
        ik: IkParams,
        strategy: MergeStrategy,
        frame_period: Nanos,
        joints: JointVector,
        objects: &[(String, Pose)],
    ) -> Result<Self, SpacesError> {
        strategy.validate()?;
        let displayed = VirtualSpace::new(&chain, joints.clone(), objects, PoseSource::Predicted)?;
        Ok(DuoSpace {
            model_ee: displayed.agent_ee,
            chain,
            ik,
            merger: Merger::new(strategy, frame_period),
            model_joints: joints,
            model_origin: None,
            last_target: None,
            anchors: objects
                .iter()
                .map(|(id, p)| (id.clone(), vec![*p]))
                .collect(),
            model_objects: objects.iter().map(|(id, p)| (id.clone(), *p)).collect(),
            predict_time: SimTime::ZERO,
            last_calibration: None,
            calibration_origin: None,
            displayed,
            stale_calibrations: 0,
            unconverged: 0,
        })
    }

    /// Local agent prediction toward `target`, derived from the user pose born
    /// at `origin`.
    pub fn predict_agent(&mut self, target: &Pose, origin: SimTime) -> Result<bool, SpacesError> {
        let prediction = predict_agent_pose(target, &self.chain, &self.model_joints, &self.ik)?;
        if !prediction.converged {
            self.unconverged += 1;
        }
        self.model_joints = prediction.joints;
        self.model_ee = prediction.pose;
        self.model_origin = Some(origin);
        self.last_target = Some(*target);
        Ok(prediction.converged)
    }

    /// Extrapolates every object model to `t`.
    pub fn predict_objects(&mut self, t: SimTime) -> Result<(), SpacesError> {
        for (id, history) in &self.anchors {
            self.model_objects
                .insert(id.clone(), predict_object_pose(history, t)?);
        }
        self.predict_time = t;
        Ok(())
    }

    /// Merges a calibration into the local models.
    pub fn apply_calibration(
        &mut self,
        gt: &CalibrationBody,
        origin: Option<SimTime>,
        now: SimTime,
    ) -> Result<(), SpacesError> {
        if let Some(previous) = self.last_calibration {
            if gt.stamp <= previous {
                self.stale_calibrations += 1;
                return Err(SpacesError::StaleCalibration {
                    stamp: gt.stamp,
                    previous,
                });
            }
        }
        self.last_calibration = Some(gt.stamp);
        if origin.is_some() {
            self.calibration_origin = origin;
        }

        // agent: reseed the mirrored IK from the ground-truth joints
        let pre_merge = self.merger.apply(AGENT_ID, &self.model_ee)?;
        let reseeded = match self.last_target {
            Some(target) => {
                let p = predict_agent_pose(&target, &self.chain, &gt.joints, &self.ik)?;
                if !p.converged {
                    self.unconverged += 1;
                }
                p
            }
            None => AgentPrediction {
                pose: forward_kinematics_at(&self.chain, &gt.joints, self.model_ee.stamp)?,
                joints: gt.joints.clone(),
                converged: true,
            },
        };
        self.merger.begin(AGENT_ID, now, pre_merge, reseeded.pose)?;
        self.model_joints = reseeded.joints;
        self.model_ee = reseeded.pose;

        // objects: new anchors, then re-predict at the same instant as the
        // pre-merge prediction
        let t = self.predict_time.max(gt.stamp);
        for (id, pose) in &gt.objects {
            let history = self.anchors.entry(id.clone()).or_default();
            history.push(pose.with_stamp(gt.stamp));
            if history.len() > 2 {
                history.remove(0);
            }
            let target = predict_object_pose(history, t)?;
            let previous = match self.model_objects.get(id) {
                Some(p) => self.merger.apply(id, p)?,
                None => target,
            };
            self.merger.begin(id, now, previous, target)?;
            self.model_objects.insert(id.clone(), target);
        }
        Ok(())
    }

    /// One calibration_merge run: merge a new calibration if given, otherwise
    /// advance open windows, then refresh the displayed space.
    pub fn merge_frame(
        &mut self,
        calibration: Option<(&CalibrationBody, Option<SimTime>)>,
        now: SimTime,
    ) -> Result<(), SpacesError> {
        let merged = match calibration {
            Some((gt, origin)) => match self.apply_calibration(gt, origin, now) {
                Ok(()) => true,
                Err(SpacesError::StaleCalibration { .. }) => false,
                Err(e) => return Err(e),
            },
            None => false,
        };
        if !merged {
            self.merger.advance();
        }
        self.refresh(now)
    }

    fn refresh(&mut self, now: SimTime) -> Result<(), SpacesError> {
        let d = &mut self.displayed;
        d.agent_ee = self.merger.apply(AGENT_ID, &self.model_ee)?;
        d.agent_joints = self.model_joints.clone();
        d.agent_stamp = now;
        d.agent_source = if self.merger.is_active(AGENT_ID) {
            PoseSource::Calibrated
        } else {
            PoseSource::Predicted
        };
        d.agent_origin = match (self.model_origin, self.calibration_origin) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        for (id, model) in &self.model_objects {
            let history = &self.anchors[id];
            let source = if self.merger.is_active(id) {
                PoseSource::Calibrated
            } else {
                PoseSource::Predicted
            };
            d.objects.insert(
                id.clone(),
                ObjectState {
                    pose: self.merger.apply(id, model)?,
                    source,
                    velocity: object_velocity(history),
                },
            );
        }
        Ok(())
    }

    pub fn displayed(&self) -> &VirtualSpace {
        &self.displayed
    }

    pub fn stale_calibrations(&self) -> u64 {
        self.stale_calibrations
    }

    pub fn unconverged(&self) -> u64 {
        self.unconverged
    }

    /// Closes all merge windows and returns every merge event.
    pub fn finish(self) -> Vec<MergeEvent> {
        self.merger.finish()
    }
}
