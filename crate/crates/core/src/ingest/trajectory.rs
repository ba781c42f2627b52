//! EuRoC-style ground-truth trajectories and analytic motion tracks.

use std::io::Read;
use std::sync::Arc;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{pose_lerp, quat_normalize, Pose, UnitQuaternion};
use crate::time::{Nanos, SimTime, NANOS_PER_SEC};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("line {line}: timestamp {stamp} does not increase")]
    NonMonotonicTimestamps { line: u64, stamp: u64 },
    #[error("trajectory has no samples")]
    Empty,
    #[error("time {t} is outside the trajectory (ends at {end})")]
    OutOfRange { t: SimTime, end: SimTime },
}

/// Time-ordered poses with stamps rebased so the first sample is at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<Pose>,
    rate_hint: f64,
}

impl Trajectory {
    pub fn from_samples(samples: Vec<Pose>) -> Result<Self, TrajectoryError> {
        let first = samples.first().ok_or(TrajectoryError::Empty)?.stamp;
        let mut rebased = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let stamp = SimTime::from_nanos(s.stamp - first);
            if let Some(prev) = rebased.last().map(|p: &Pose| p.stamp) {
                if stamp <= prev {
                    return Err(TrajectoryError::NonMonotonicTimestamps {
                        line: i as u64 + 1,
                        stamp: s.stamp.as_nanos(),
                    });
                }
            }
            rebased.push(s.with_stamp(stamp));
        }
        let span = rebased.last().expect("non-empty").stamp.as_nanos();
        let rate_hint = if rebased.len() > 1 {
            (rebased.len() - 1) as f64 * NANOS_PER_SEC as f64 / span as f64
        } else {
            0.0
        };
        Ok(Trajectory {
            samples: rebased,
            rate_hint,
        })
    }

    pub fn samples(&self) -> &[Pose] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean sample rate in Hz.
    pub fn rate_hint(&self) -> f64 {
        self.rate_hint
    }

    pub fn end(&self) -> SimTime {
        self.samples
            .last()
            .expect("trajectories are non-empty")
            .stamp
    }

    /// Pose at `t`: linear position and slerp orientation between the
    /// bracketing samples, exact at sample stamps.
    pub fn sample_pose(&self, t: SimTime) -> Result<Pose, TrajectoryError> {
        if t > self.end() {
            return Err(TrajectoryError::OutOfRange { t, end: self.end() });
        }
        match self.samples.binary_search_by(|s| s.stamp.cmp(&t)) {
            Ok(i) => Ok(self.samples[i]),
            Err(i) => {
                let (a, b) = (&self.samples[i - 1], &self.samples[i]);
                let frac = (t - a.stamp) as f64 / (b.stamp - a.stamp) as f64;
                let p = pose_lerp(a, b, frac).expect("fraction lies in [0, 1]");
                Ok(p.with_stamp(t))
            }
        }
    }
}

/// Parses a EuRoC ground-truth CSV: `timestamp_ns, p_x, p_y, p_z, q_w, q_x,
/// q_y, q_z`, with further columns ignored and `#` lines skipped.
pub fn load_trajectory<R: Read>(source: R) -> Result<Trajectory, TrajectoryError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut samples = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut last_line = 0;
    loop {
        let more = reader
            .read_record(&mut record)
            .map_err(|e| TrajectoryError::Parse {
                line: e.position().map_or(last_line + 1, |p| p.line()),
                reason: e.to_string(),
            })?;
        if !more {
            break;
        }
        let line = record.position().map_or(last_line + 1, |p| p.line());
        last_line = line;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parse_err = |reason: String| TrajectoryError::Parse { line, reason };
        if record.len() < 8 {
            return Err(parse_err(format!(
                "expected at least 8 columns, found {}",
                record.len()
            )));
        }
        let stamp: u64 = record[0]
            .parse()
            .map_err(|_| parse_err(format!("bad timestamp `{}`", &record[0])))?;
        let mut v = [0.0f64; 7];
        for (k, slot) in v.iter_mut().enumerate() {
            let field = &record[k + 1];
            *slot = field
                .parse()
                .ok()
                .filter(|x: &f64| x.is_finite())
                .ok_or_else(|| parse_err(format!("bad number `{field}` in column {}", k + 2)))?;
        }
        let orientation =
            quat_normalize([v[3], v[4], v[5], v[6]]).map_err(|e| parse_err(e.to_string()))?;
        if let Some(prev) = samples.last().map(|p: &(u64, u64, Pose)| p.0) {
            if stamp <= prev {
                return Err(TrajectoryError::NonMonotonicTimestamps { line, stamp });
            }
        }
        let pose = Pose::new(
            Vector3::new(v[0], v[1], v[2]),
            orientation,
            SimTime::from_nanos(stamp),
        );
        samples.push((stamp, line, pose));
    }
    Trajectory::from_samples(samples.into_iter().map(|(_, _, p)| p).collect())
}

/// Writes a trajectory in the EuRoC ground-truth layout (8 columns).
pub fn write_trajectory(traj: &Trajectory) -> String {
    let mut out = String::from("#timestamp,p_x,p_y,p_z,q_w,q_x,q_y,q_z\n");
    for s in traj.samples() {
        let [w, x, y, z] = s.orientation.coords();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.stamp.as_nanos(),
            s.position.x,
            s.position.y,
            s.position.z,
            w,
            x,
            y,
            z
        ));
    }
    out
}

/// A pose source driven either by recorded data or by an analytic motion.
#[derive(Debug, Clone, PartialEq)]
pub enum Track {
    Static(Pose),
    /// `start + velocity * t`.
    Linear {
        start: Vector3<f64>,
        velocity: Vector3<f64>,
    },
    /// Circle in the XY plane around `center`.
    Circle {
        center: Vector3<f64>,
        radius: f64,
        frequency_hz: f64,
        phase: f64,
    },
    Recorded(Arc<Trajectory>),
    /// Another track with an offset expressed in that track's body frame.
    Offset {
        base: Box<Track>,
        offset: Vector3<f64>,
    },
}

impl Track {
    /// Last time the track can be sampled, or `None` when unbounded.
    pub fn end(&self) -> Option<SimTime> {
        match self {
            Track::Recorded(t) => Some(t.end()),
            Track::Offset { base, .. } => base.end(),
            _ => None,
        }
    }

    pub fn sample(&self, t: SimTime) -> Result<Pose, TrajectoryError> {
        let secs = t.as_nanos() as f64 / NANOS_PER_SEC as f64;
        match self {
            Track::Static(p) => Ok(p.with_stamp(t)),
            Track::Linear { start, velocity } => {
                Ok(Pose::from_position(start + velocity * secs, t))
            }
            Track::Circle {
                center,
                radius,
                frequency_hz,
                phase,
            } => {
                let angle = std::f64::consts::TAU * frequency_hz * secs + phase;
                let position =
                    center + Vector3::new(radius * angle.cos(), radius * angle.sin(), 0.0);
                let heading = UnitQuaternion::from_axis_angle(
                    &Vector3::z(),
                    angle + std::f64::consts::FRAC_PI_2,
                );
                Ok(Pose::new(position, heading, t))
            }
            Track::Recorded(traj) => traj.sample_pose(t),
            Track::Offset { base, offset } => {
                let b = base.sample(t)?;
                Ok(Pose::new(
                    b.position + b.orientation.rotate(offset),
                    b.orientation,
                    t,
                ))
            }
        }
    }

    /// Checks the track can be sampled up to `horizon`.
    pub fn covers(&self, horizon: Nanos) -> bool {
        self.end().is_none_or(|end| end.as_nanos() >= horizon)
    }
}
