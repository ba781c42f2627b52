//! Deterministic event loop running one scenario in one mode.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::graph::{build_task_graph, topics, Behavior, ExecTime, Mode, TaskGraph, Trigger};
use crate::geometry::{pose_distance, Pose, PoseSource};
use crate::ingest::{ConfigError, Scenario, TrajectoryError};
use crate::kinematics::{
    decode_transform_string, encode_transform_string, forward_kinematics_at, JointVector,
    KinematicChain, KinematicsError,
};
use crate::metrics::{Counters, FrameRecord, MergeRecord, RunTrace};
use crate::network::{Body, CalibrationBody, Channel, Envelope, NetworkError, PayloadKind};
use crate::spaces::{predict_agent_pose, DuoSpace, SpacesError, VirtualSpace, WorkspaceMap};
use crate::time::{Nanos, SimTime};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trajectory exhausted: {0}")]
    TrajectoryExhausted(#[from] TrajectoryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Spaces(#[from] SpacesError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("task {task}: {reason}")]
    Task { task: String, reason: String },
}

/// Event kinds in tie-break order for equal times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    NetworkDelivery,
    TaskRelease,
    TaskFinish,
    FrameDeadline,
}

#[derive(Debug)]
enum Payload {
    Delivery {
        topic: usize,
        envelope: Box<Envelope>,
    },
    /// `tick` marks a periodic release, which schedules the next one.
    Release {
        task: usize,
        exec: Option<Nanos>,
        tick: bool,
    },
    Finish {
        task: usize,
    },
    Deadline {
        frame: u64,
    },
}

#[derive(Debug)]
struct Scheduled {
    time: SimTime,
    kind: EventKind,
    seq: u64,
    payload: Payload,
}

impl Scheduled {
    fn key(&self) -> (SimTime, EventKind, u64) {
        (self.time, self.kind, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other.key().cmp(&self.key())
    }
}

/// What the XR scene shows of the agent.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SceneView {
    agent_ee: Pose,
    origin: Option<SimTime>,
}

#[derive(Debug, Clone)]
enum Msg {
    Pose(Pose),
    UserPose {
        hand: Pose,
        origin: SimTime,
    },
    Target {
        pose: Pose,
        origin: SimTime,
    },
    JointCmd {
        joints: JointVector,
        origin: SimTime,
    },
    Envelope(Box<Envelope>),
    Scene(SceneView),
    Marker,
}

#[derive(Debug, Clone, Default)]
struct Slot {
    msg: Option<Msg>,
    published_at: SimTime,
    /// Count of publishes so far; 0 means never published.
    version: u64,
}

/// One topic access, for checking latest-value semantics after a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    pub time: SimTime,
    pub task: String,
    pub topic: String,
    pub action: AuditAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditAction {
    Publish,
    /// Read of the value published at the given time (`None` if empty).
    Read(Option<SimTime>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskRun {
    pub task: usize,
    pub release: SimTime,
    pub finish: SimTime,
}

/// Everything recorded about a run beyond the trace itself.
#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub audit: Vec<AuditEntry>,
    pub runs: Vec<TaskRun>,
    pub events: u64,
}

#[derive(Debug, Clone, Default)]
struct TaskState {
    busy: bool,
    pending: bool,
    release: SimTime,
    /// Inputs captured at release, by topic index.
    snapshot: Vec<(usize, Option<Msg>, u64)>,
    /// Agent state captured at release, for tasks that report it.
    agent: Option<(JointVector, Option<SimTime>)>,
}

struct Engine<'a> {
    scenario: &'a Scenario,
    graph: TaskGraph,
    mode: Mode,
    horizon: SimTime,
    seed: u64,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    topic_index: HashMap<String, usize>,
    topic_names: Vec<String>,
    slots: Vec<Slot>,
    subscribers: Vec<Vec<usize>>,
    tasks: Vec<TaskState>,
    chain_tasks: [usize; 3],
    chain_exec: [Nanos; 3],
    frame_sync: Vec<usize>,
    uplink: Channel,
    downlink: Channel,
    chain: KinematicChain,
    workspace: WorkspaceMap,
    agent_joints: JointVector,
    agent_origin: Option<SimTime>,
    xr_space: VirtualSpace,
    duo: Option<DuoSpace>,
    initial_view: SceneView,
    last_forwarded: BTreeMap<usize, u64>,
    last_calibration: u64,
    counters: Counters,
    frames: Vec<FrameRecord>,
    log: Option<RunLog>,
}

/// Runs `scenario` in `mode` and returns the frame trace.
pub fn run_simulation(
    scenario: &Scenario,
    mode: Mode,
    seed: u64,
) -> Result<RunTrace, SimulationError> {
    Engine::new(scenario, mode, seed, false)?
        .run()
        .map(|(trace, _)| trace)
}

/// Like [`run_simulation`], also returning the topic audit and task runs.
pub fn run_simulation_logged(
    scenario: &Scenario,
    mode: Mode,
    seed: u64,
) -> Result<(RunTrace, RunLog, TaskGraph), SimulationError> {
    let engine = Engine::new(scenario, mode, seed, true)?;
    let graph = engine.graph.clone();
    let (trace, log) = engine.run()?;
    Ok((trace, log.unwrap_or_default(), graph))
}

fn sample_exec(rng: &mut ChaCha8Rng, exec: ExecTime) -> Nanos {
    match exec {
        ExecTime::Fixed(n) => n,
        ExecTime::Uniform { lo, hi } => rng.random_range(lo..=hi),
    }
}

impl<'a> Engine<'a> {
    fn new(
        scenario: &'a Scenario,
        mode: Mode,
        seed: u64,
        logged: bool,
    ) -> Result<Self, SimulationError> {
        let graph = build_task_graph(scenario, mode)?;
        let topic_names: Vec<String> = graph.topics.iter().cloned().collect();
        let topic_index: HashMap<String, usize> = topic_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let subscribers = topic_names.iter().map(|t| graph.subscribers(t)).collect();
        let find = |b: Behavior| {
            graph
                .tasks
                .iter()
                .position(|t| t.behavior == b)
                .expect("pre-submit chain is always instantiated")
        };
        let chain_tasks = [
            find(Behavior::SceneReconstruction),
            find(Behavior::Atw),
            find(Behavior::FrameSubmit),
        ];
        let frame_sync = graph
            .tasks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.trigger == Trigger::FrameSync)
            .map(|(i, _)| i)
            .collect();

        let chain = scenario.chain.build()?;
        let workspace = scenario.workspace_map(&chain)?;
        let home = scenario.home_joints();
        let objects = sample_objects(scenario, SimTime::ZERO)?;
        let xr_space = VirtualSpace::new(&chain, home.clone(), &objects, PoseSource::GroundTruth)?;
        let initial_view = SceneView {
            agent_ee: xr_space.agent_ee,
            origin: None,
        };
        let duo = match mode {
            Mode::Duo => Some(DuoSpace::new(
                chain.clone(),
                scenario.ik,
                scenario.merge,
                scenario.frame_period_nanos(),
                home.clone(),
                &objects,
            )?),
            Mode::Baseline => None,
        };
        let map_net = |e: NetworkError| ConfigError::invalid("network", e.to_string());
        Ok(Engine {
            scenario,
            mode,
            horizon: SimTime::from_nanos(scenario.horizon),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: BinaryHeap::new(),
            seq: 0,
            slots: vec![Slot::default(); topic_names.len()],
            topic_index,
            topic_names,
            subscribers,
            tasks: vec![TaskState::default(); graph.tasks.len()],
            chain_tasks,
            chain_exec: [0; 3],
            frame_sync,
            uplink: Channel::new(scenario.uplink).map_err(map_net)?,
            downlink: Channel::new(scenario.downlink).map_err(map_net)?,
            graph,
            chain,
            workspace,
            agent_joints: home,
            agent_origin: None,
            xr_space,
            duo,
            initial_view,
            last_forwarded: BTreeMap::new(),
            last_calibration: 0,
            counters: Counters::default(),
            frames: Vec::new(),
            log: logged.then(RunLog::default),
        })
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind, payload: Payload) {
        if time > self.horizon {
            return;
        }
        self.seq += 1;
        self.queue.push(Scheduled {
            time,
            kind,
            seq: self.seq,
            payload,
        });
    }

    fn run(mut self) -> Result<(RunTrace, Option<RunLog>), SimulationError> {
        self.schedule(
            SimTime::ZERO,
            EventKind::FrameDeadline,
            Payload::Deadline { frame: 0 },
        );
        for (i, task) in self.graph.tasks.iter().enumerate() {
            if let Trigger::Periodic { phase, .. } = task.trigger {
                self.seq += 1;
                self.queue.push(Scheduled {
                    time: SimTime::from_nanos(phase),
                    kind: EventKind::TaskRelease,
                    seq: self.seq,
                    payload: Payload::Release {
                        task: i,
                        exec: None,
                        tick: true,
                    },
                });
            }
        }
        self.queue.retain(|e| e.time <= self.horizon);

        while let Some(event) = self.queue.pop() {
            if let Some(log) = &mut self.log {
                log.events += 1;
            }
            let now = event.time;
            match event.payload {
                Payload::Delivery { topic, envelope } => {
                    self.publish(topic, Msg::Envelope(envelope), now, None);
                }
                Payload::Release { task, exec, tick } => self.release(task, exec, tick, now)?,
                Payload::Finish { task } => self.finish(task, now)?,
                Payload::Deadline { frame } => self.deadline(frame, now)?,
            }
        }

        self.counters.dropped_messages = self.uplink.dropped() + self.downlink.dropped();
        let merges = match self.duo {
            Some(duo) => {
                self.counters.stale_calibrations = duo.stale_calibrations();
                self.counters.unconverged_ik += duo.unconverged();
                duo.finish().iter().map(MergeRecord::from).collect()
            }
            None => Vec::new(),
        };
        // fingerprint the configuration that actually ran
        let mut effective = self.scenario.clone();
        effective.mode = self.mode;
        effective.seed = self.seed;
        let trace = RunTrace {
            mode: self.mode,
            seed: self.seed,
            fingerprint: effective.fingerprint(),
            frames: self.frames,
            merges,
            counters: self.counters,
        };
        Ok((trace, self.log))
    }

    fn topic(&self, name: &str) -> usize {
        self.topic_index[name]
    }

    fn publish(&mut self, topic: usize, msg: Msg, now: SimTime, by: Option<usize>) {
        let slot = &mut self.slots[topic];
        slot.msg = Some(msg);
        slot.published_at = now;
        slot.version += 1;
        if let Some(log) = &mut self.log {
            log.audit.push(AuditEntry {
                time: now,
                task: by.map_or_else(
                    || "network".to_string(),
                    |t| self.graph.tasks[t].name.clone(),
                ),
                topic: self.topic_names[topic].clone(),
                action: AuditAction::Publish,
            });
        }
        for i in 0..self.subscribers[topic].len() {
            let task = self.subscribers[topic][i];
            self.schedule(
                now,
                EventKind::TaskRelease,
                Payload::Release {
                    task,
                    exec: None,
                    tick: false,
                },
            );
        }
    }

    fn deadline(&mut self, frame: u64, now: SimTime) -> Result<(), SimulationError> {
        if frame > 0 {
            self.record_frame(now)?;
        }
        let next = self.scenario.frame_deadline(frame + 1);
        if next > self.horizon {
            return Ok(());
        }
        self.schedule(
            next,
            EventKind::FrameDeadline,
            Payload::Deadline { frame: frame + 1 },
        );

        // frame-synchronous tasks publish exactly on the next deadline
        for i in 0..self.frame_sync.len() {
            let task = self.frame_sync[i];
            let exec = sample_exec(&mut self.rng, self.graph.tasks[task].exec);
            if let Some(at) = next.as_nanos().checked_sub(exec) {
                let at = SimTime::from_nanos(at).max(now);
                self.schedule(
                    at,
                    EventKind::TaskRelease,
                    Payload::Release {
                        task,
                        exec: Some(exec),
                        tick: false,
                    },
                );
            }
        }

        // pre-submit chain: sampled together, first task starts so the chain
        // ends on the deadline
        let execs: Vec<Nanos> = self
            .chain_tasks
            .iter()
            .map(|&t| sample_exec(&mut self.rng, self.graph.tasks[t].exec))
            .collect();
        let total: Nanos = execs.iter().sum();
        let start = SimTime::from_nanos(next.as_nanos().saturating_sub(total)).max(now);
        for (k, &task) in self.chain_tasks.iter().enumerate() {
            self.tasks[task].pending = false;
            self.chain_exec[k] = execs[k];
        }
        let first = self.chain_tasks[0];
        self.schedule(
            start,
            EventKind::TaskRelease,
            Payload::Release {
                task: first,
                exec: Some(execs[0]),
                tick: false,
            },
        );
        Ok(())
    }

    fn record_frame(&mut self, now: SimTime) -> Result<(), SimulationError> {
        let submit = self.topic(topics::SUBMIT);
        let slot = &self.slots[submit];
        let view = match &slot.msg {
            Some(Msg::Scene(view)) if slot.published_at == now => *view,
            _ => {
                return Err(SimulationError::Task {
                    task: "frame_submit".into(),
                    reason: format!("no frame submitted for the deadline at {now}"),
                })
            }
        };
        let record = match view.origin {
            Some(origin) => {
                let truth = forward_kinematics_at(&self.chain, &self.agent_joints, now)?;
                FrameRecord::new(now, Some(origin), pose_distance(&view.agent_ee, &truth))
            }
            None => FrameRecord::warmup(now),
        };
        self.frames.push(record);
        Ok(())
    }

    fn release(
        &mut self,
        task: usize,
        exec: Option<Nanos>,
        tick: bool,
        now: SimTime,
    ) -> Result<(), SimulationError> {
        if let (true, Trigger::Periodic { period, .. }) = (tick, &self.graph.tasks[task].trigger) {
            let next = now + *period;
            self.schedule(
                next,
                EventKind::TaskRelease,
                Payload::Release {
                    task,
                    exec: None,
                    tick: true,
                },
            );
        }
        if self.tasks[task].busy {
            self.tasks[task].pending = true;
            return Ok(());
        }
        self.start(task, exec, now);
        Ok(())
    }

    fn start(&mut self, task: usize, exec: Option<Nanos>, now: SimTime) {
        let exec = match exec {
            Some(e) => e,
            None => sample_exec(&mut self.rng, self.graph.tasks[task].exec),
        };
        let reads: Vec<usize> = self.graph.tasks[task]
            .reads
            .iter()
            .map(|r| self.topic(r))
            .collect();
        let snapshot: Vec<(usize, Option<Msg>, u64)> = reads
            .iter()
            .map(|&t| (t, self.slots[t].msg.clone(), self.slots[t].version))
            .collect();
        if let Some(log) = &mut self.log {
            for &t in &reads {
                let slot = &self.slots[t];
                log.audit.push(AuditEntry {
                    time: now,
                    task: self.graph.tasks[task].name.clone(),
                    topic: self.topic_names[t].clone(),
                    action: AuditAction::Read((slot.version > 0).then_some(slot.published_at)),
                });
            }
        }
        let state = &mut self.tasks[task];
        state.busy = true;
        state.release = now;
        state.snapshot = snapshot;
        state.agent = (self.graph.tasks[task].behavior == Behavior::CalibrationSend)
            .then(|| (self.agent_joints.clone(), self.agent_origin));
        self.schedule(now + exec, EventKind::TaskFinish, Payload::Finish { task });
    }

    fn input(&self, task: usize, topic: &str) -> Option<&Msg> {
        let t = self.topic(topic);
        self.tasks[task]
            .snapshot
            .iter()
            .find(|(i, _, _)| *i == t)
            .and_then(|(_, m, _)| m.as_ref())
    }

    fn input_version(&self, task: usize, topic: &str) -> u64 {
        let t = self.topic(topic);
        self.tasks[task]
            .snapshot
            .iter()
            .find(|(i, _, _)| *i == t)
            .map_or(0, |(_, _, v)| *v)
    }

    fn finish(&mut self, task: usize, now: SimTime) -> Result<(), SimulationError> {
        let release = self.tasks[task].release;
        self.tasks[task].busy = false;
        if let Some(log) = &mut self.log {
            log.runs.push(TaskRun {
                task,
                release,
                finish: now,
            });
        }
        self.apply(task, release, now)?;
        self.tasks[task].snapshot.clear();

        // the pre-submit chain hands over directly
        if let Some(k) = self.graph.tasks[task].behavior.chain_index() {
            if k + 1 < self.chain_tasks.len() {
                let next = self.chain_tasks[k + 1];
                let exec = self.chain_exec[k + 1];
                self.schedule(
                    now,
                    EventKind::TaskRelease,
                    Payload::Release {
                        task: next,
                        exec: Some(exec),
                        tick: false,
                    },
                );
            }
        }
        if std::mem::take(&mut self.tasks[task].pending) {
            self.start(task, None, now);
        }
        Ok(())
    }

    fn emit(&mut self, task: usize, topic: &str, msg: Msg, now: SimTime) {
        let t = self.topic(topic);
        self.publish(t, msg, now, Some(task));
    }

    fn send(
        &mut self,
        body: Body,
        origin: Option<SimTime>,
        now: SimTime,
    ) -> Result<(), SimulationError> {
        let kind = body.kind();
        let envelope = Envelope::new(body, self.scenario.payload.of(kind), now, origin)?;
        let (channel, topic) = match kind {
            PayloadKind::UserPose => (&mut self.uplink, topics::AGENT_RX_USER_POSE),
            PayloadKind::TransformString => (&mut self.downlink, topics::RX_TRANSFORM),
            PayloadKind::PointCloud => (&mut self.downlink, topics::RX_POINTCLOUD),
            PayloadKind::Video => (&mut self.downlink, topics::RX_VIDEO),
            PayloadKind::Calibration => (&mut self.downlink, topics::RX_CALIBRATION),
        };
        if let Some(arrival) = channel.transmit(&envelope, now, &mut self.rng) {
            let topic = self.topic_index[topic];
            self.schedule(
                arrival,
                EventKind::NetworkDelivery,
                Payload::Delivery {
                    topic,
                    envelope: Box::new(envelope),
                },
            );
        }
        Ok(())
    }

    fn apply(
        &mut self,
        task: usize,
        release: SimTime,
        now: SimTime,
    ) -> Result<(), SimulationError> {
        use topics as t;
        let behavior = self.graph.tasks[task].behavior;
        match behavior {
            Behavior::ImuIntegration => {
                let pose = self.scenario.head_track().sample(now)?;
                self.emit(task, t::IMU, Msg::Pose(pose), now);
            }
            Behavior::Vio => {
                let pose = self.scenario.head_track().sample(now)?;
                self.emit(task, t::HEAD_POSE, Msg::Pose(pose), now);
            }
            Behavior::HandTracking => {
                let pose = self.scenario.hand_track().sample(now)?;
                self.emit(task, t::HAND_POSE, Msg::Pose(pose), now);
            }
            Behavior::WsClientSend => {
                let head = match self.input(task, t::HEAD_POSE) {
                    Some(Msg::Pose(p)) => Some(*p),
                    _ => None,
                };
                if let Some(Msg::Pose(hand)) = self.input(task, t::HAND_POSE) {
                    let hand = *hand;
                    let head = head.unwrap_or(hand);
                    self.send(Body::UserPose { head, hand }, Some(hand.stamp), now)?;
                }
            }
            Behavior::WsClientRecv => {
                let pairs = [
                    (t::RX_TRANSFORM, t::TRANSFORM_STRING),
                    (t::RX_POINTCLOUD, t::POINTCLOUD),
                    (t::RX_VIDEO, t::VIDEO),
                    (t::RX_CALIBRATION, t::CALIBRATION),
                ];
                for (rx, out) in pairs {
                    let version = self.input_version(task, rx);
                    let idx = self.topic(rx);
                    if version > self.last_forwarded.get(&idx).copied().unwrap_or(0) {
                        self.last_forwarded.insert(idx, version);
                        if let Some(msg) = self.input(task, rx).cloned() {
                            self.emit(task, out, msg, now);
                        }
                    }
                }
            }
            Behavior::TransformListener => {
                if let Some(Msg::Envelope(env)) = self.input(task, t::TRANSFORM_STRING) {
                    let Body::Transform(ts) = &env.body else {
                        return Err(self.task_error(task, "expected a transform string"));
                    };
                    let decoded = decode_transform_string(ts.as_str())
                        .map_err(|e| self.task_error(task, &e.to_string()))?;
                    let outcome =
                        self.xr_space
                            .update_baseline_space(&self.chain, Some(&decoded), None)?;
                    if outcome.stale_transform {
                        self.counters.stale_transforms += 1;
                    }
                    let view = SceneView {
                        agent_ee: self.xr_space.agent_ee,
                        origin: self.xr_space.agent_origin,
                    };
                    self.emit(task, t::AGENT_STATE, Msg::Scene(view), now);
                }
            }
            Behavior::PointcloudUpdate => {
                if let Some(Msg::Envelope(env)) = self.input(task, t::POINTCLOUD) {
                    if let Body::PointCloud { stamp, objects } = &env.body {
                        let (stamp, objects) = (*stamp, objects.clone());
                        self.xr_space.update_baseline_space(
                            &self.chain,
                            None,
                            Some((stamp, &objects)),
                        )?;
                        self.emit(task, t::OBJECTS, Msg::Marker, now);
                    }
                }
            }
            Behavior::SceneReconstruction => {
                let source = match self.mode {
                    Mode::Baseline => t::AGENT_STATE,
                    Mode::Duo => t::DUO_SPACE,
                };
                let view = match self.input(task, source) {
                    Some(Msg::Scene(v)) => *v,
                    _ => self.initial_view,
                };
                self.emit(task, t::SCENE, Msg::Scene(view), now);
            }
            Behavior::Atw | Behavior::FrameSubmit => {
                let (from, to) = if behavior == Behavior::Atw {
                    (t::SCENE, t::FRAME)
                } else {
                    (t::FRAME, t::SUBMIT)
                };
                let view = match self.input(task, from) {
                    Some(Msg::Scene(v)) => *v,
                    _ => self.initial_view,
                };
                self.emit(task, to, Msg::Scene(view), now);
            }
            Behavior::LocalIkPredict => {
                if let Some(Msg::Pose(hand)) = self.input(task, t::HAND_POSE) {
                    let hand = *hand;
                    let target = self.workspace.target(&hand, self.chain.base());
                    self.duo_mut(task)?.predict_agent(&target, hand.stamp)?;
                    self.emit(task, t::AGENT_PRED, Msg::Marker, now);
                }
            }
            Behavior::ObjectPredict => {
                self.duo_mut(task)?.predict_objects(release)?;
                self.emit(task, t::OBJECTS_PRED, Msg::Marker, now);
            }
            Behavior::CalibrationMerge => {
                let version = self.input_version(task, t::CALIBRATION);
                let fresh = version > self.last_calibration;
                let calibration = match self.input(task, t::CALIBRATION) {
                    Some(Msg::Envelope(env)) if fresh => match &env.body {
                        Body::Calibration(body) => Some((body.clone(), env.origin_user_stamp)),
                        _ => None,
                    },
                    _ => None,
                };
                self.last_calibration = self.last_calibration.max(version);
                let duo = self.duo_mut(task)?;
                duo.merge_frame(calibration.as_ref().map(|(b, o)| (b, *o)), now)?;
                let shown = duo.displayed();
                let view = SceneView {
                    agent_ee: shown.agent_ee,
                    origin: shown.agent_origin,
                };
                self.emit(task, t::DUO_SPACE, Msg::Scene(view), now);
            }
            Behavior::RosbridgeServer => {
                if let Some(Msg::Envelope(env)) = self.input(task, t::AGENT_RX_USER_POSE) {
                    if let Body::UserPose { hand, .. } = &env.body {
                        let msg = Msg::UserPose {
                            hand: *hand,
                            origin: env.origin_user_stamp.unwrap_or(hand.stamp),
                        };
                        self.emit(task, t::AGENT_USER_POSE, msg, now);
                    }
                }
            }
            Behavior::StatePublisher => {
                if let Some(Msg::UserPose { hand, origin }) = self.input(task, t::AGENT_USER_POSE) {
                    let (hand, origin) = (*hand, *origin);
                    let pose = self.workspace.target(&hand, self.chain.base());
                    self.emit(task, t::AGENT_IK_TARGET, Msg::Target { pose, origin }, now);
                }
            }
            Behavior::IkSolver => {
                if let Some(Msg::Target { pose, origin }) = self.input(task, t::AGENT_IK_TARGET) {
                    let (pose, origin) = (*pose, *origin);
                    let prediction = predict_agent_pose(
                        &pose,
                        &self.chain,
                        &self.agent_joints,
                        &self.scenario.ik,
                    )?;
                    if !prediction.converged {
                        self.counters.unconverged_ik += 1;
                    }
                    self.agent_joints = prediction.joints.clone();
                    self.agent_origin = Some(origin);
                    let msg = Msg::JointCmd {
                        joints: prediction.joints,
                        origin,
                    };
                    self.emit(task, t::AGENT_JOINT_CMD, msg, now);
                }
            }
            Behavior::TransformCompress => {
                if let Some(Msg::JointCmd { joints, origin }) = self.input(task, t::AGENT_JOINT_CMD)
                {
                    let origin = *origin;
                    let ts = encode_transform_string(joints, now, origin);
                    self.send(Body::Transform(ts), Some(origin), now)?;
                }
            }
            Behavior::VisualSlam => {
                let objects = sample_objects(self.scenario, release)?;
                self.send(
                    Body::PointCloud {
                        stamp: release,
                        objects,
                    },
                    None,
                    now,
                )?;
            }
            Behavior::CamFeed => {
                self.send(Body::Video { stamp: release }, None, now)?;
            }
            Behavior::CalibrationSend => {
                let (joints, origin) = self.tasks[task]
                    .agent
                    .take()
                    .unwrap_or_else(|| (self.agent_joints.clone(), self.agent_origin));
                let body = CalibrationBody {
                    stamp: release,
                    joints,
                    objects: sample_objects(self.scenario, release)?,
                };
                self.send(Body::Calibration(body), origin, now)?;
            }
        }
        Ok(())
    }

    fn duo_mut(&mut self, task: usize) -> Result<&mut DuoSpace, SimulationError> {
        let err = self.task_error(task, "runs only in duo mode");
        self.duo.as_mut().ok_or(err)
    }

    fn task_error(&self, task: usize, reason: &str) -> SimulationError {
        SimulationError::Task {
            task: self.graph.tasks[task].name.clone(),
            reason: reason.to_string(),
        }
    }
}

fn sample_objects(scenario: &Scenario, t: SimTime) -> Result<Vec<(String, Pose)>, SimulationError> {
    scenario
        .object_tracks()
        .iter()
        .map(|(id, track)| Ok((id.clone(), track.sample(t)?)))
        .collect()
}
