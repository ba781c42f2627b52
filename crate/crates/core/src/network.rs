//! XR and agent WebSocket channels: delay, jitter, bandwidth and FIFO delivery.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::kinematics::{JointVector, TransformString};
use crate::time::{Nanos, SimTime, NANOS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    UserPose,
    TransformString,
    PointCloud,
    Video,
    Calibration,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 5] = [
        PayloadKind::UserPose,
        PayloadKind::TransformString,
        PayloadKind::PointCloud,
        PayloadKind::Video,
        PayloadKind::Calibration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::UserPose => "user_pose",
            PayloadKind::TransformString => "transform_string",
            PayloadKind::PointCloud => "pointcloud",
            PayloadKind::Video => "video",
            PayloadKind::Calibration => "calibration",
        }
    }

    /// Kinds that must carry the stamp of the user pose they derive from.
    pub fn requires_provenance(self) -> bool {
        matches!(self, PayloadKind::UserPose | PayloadKind::TransformString)
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ground-truth agent and object state sent periodically in duo mode.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBody {
    /// Agent-side stamp of the snapshot.
    pub stamp: SimTime,
    pub joints: JointVector,
    pub objects: Vec<(String, Pose)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    UserPose {
        head: Pose,
        hand: Pose,
    },
    Transform(TransformString),
    PointCloud {
        stamp: SimTime,
        objects: Vec<(String, Pose)>,
    },
    Video {
        stamp: SimTime,
    },
    Calibration(CalibrationBody),
}

impl Body {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Body::UserPose { .. } => PayloadKind::UserPose,
            Body::Transform(_) => PayloadKind::TransformString,
            Body::PointCloud { .. } => PayloadKind::PointCloud,
            Body::Video { .. } => PayloadKind::Video,
            Body::Calibration(_) => PayloadKind::Calibration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("{0} envelope carries no origin user stamp")]
    MissingProvenance(PayloadKind),
    #[error("envelope payload must be at least one byte")]
    EmptyPayload,
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub kind: PayloadKind,
    pub payload_bytes: u64,
    pub send_stamp: SimTime,
    pub origin_user_stamp: Option<SimTime>,
    pub body: Body,
}

impl Envelope {
    pub fn new(
        body: Body,
        payload_bytes: u64,
        send_stamp: SimTime,
        origin_user_stamp: Option<SimTime>,
    ) -> Result<Self, NetworkError> {
        let kind = body.kind();
        if payload_bytes == 0 {
            return Err(NetworkError::EmptyPayload);
        }
        if kind.requires_provenance() && origin_user_stamp.is_none() {
            return Err(NetworkError::MissingProvenance(kind));
        }
        Ok(Envelope {
            kind,
            payload_bytes,
            send_stamp,
            origin_user_stamp,
            body,
        })
    }
}

/// The stamp of the user pose this envelope derives from.
pub fn provenance_of(env: &Envelope) -> Result<SimTime, NetworkError> {
    match env.kind {
        PayloadKind::UserPose | PayloadKind::TransformString => env
            .origin_user_stamp
            .ok_or(NetworkError::MissingProvenance(env.kind)),
        other => Err(NetworkError::MissingProvenance(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Uplink,
    Downlink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Jitter {
    None,
    /// Inclusive integer-nanosecond range.
    Uniform {
        lo: Nanos,
        hi: Nanos,
    },
}

impl Jitter {
    pub fn mean(&self) -> f64 {
        match *self {
            Jitter::None => 0.0,
            Jitter::Uniform { lo, hi } => (lo as f64 + hi as f64) / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelModel {
    pub base_delay: Nanos,
    pub jitter: Jitter,
    /// Bytes per second; 0 means unlimited.
    pub bandwidth: u64,
    pub drop_prob: f64,
    pub direction: Direction,
}

impl ChannelModel {
    pub fn fixed(base_delay: Nanos, direction: Direction) -> Self {
        ChannelModel {
            base_delay,
            jitter: Jitter::None,
            bandwidth: 0,
            drop_prob: 0.0,
            direction,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if let Jitter::Uniform { lo, hi } = self.jitter {
            if lo > hi {
                return Err(NetworkError::InvalidChannel(format!(
                    "jitter lower bound {lo} exceeds upper bound {hi}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(NetworkError::InvalidChannel(format!(
                "drop_prob {} is outside [0, 1)",
                self.drop_prob
            )));
        }
        Ok(())
    }

    /// Serialization time of `bytes`, rounded up to a whole nanosecond.
    pub fn serialization_delay(&self, bytes: u64) -> Nanos {
        if self.bandwidth == 0 {
            return 0;
        }
        let ns =
            (u128::from(bytes) * u128::from(NANOS_PER_SEC)).div_ceil(u128::from(self.bandwidth));
        Nanos::try_from(ns).unwrap_or(Nanos::MAX)
    }
}

/// A channel and its in-order delivery state.
#[derive(Debug, Clone)]
pub struct Channel {
    model: ChannelModel,
    last_arrival: SimTime,
    sent: u64,
    dropped: u64,
}

impl Channel {
    pub fn new(model: ChannelModel) -> Result<Self, NetworkError> {
        model.validate()?;
        Ok(Channel {
            model,
            last_arrival: SimTime::ZERO,
            sent: 0,
            dropped: 0,
        })
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    pub fn last_arrival(&self) -> SimTime {
        self.last_arrival
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Arrival time of `env` sent at `now`, or `None` if it is dropped.
    ///
    /// The RNG is consulted only for a drop draw (when `drop_prob > 0`) and a
    /// jitter draw (when jitter is uniform), in that order.
    pub fn transmit<R: Rng + ?Sized>(
        &mut self,
        env: &Envelope,
        now: SimTime,
        rng: &mut R,
    ) -> Option<SimTime> {
        self.sent += 1;
        if self.model.drop_prob > 0.0 && rng.random::<f64>() < self.model.drop_prob {
            self.dropped += 1;
            return None;
        }
        let jitter = match self.model.jitter {
            Jitter::None => 0,
            Jitter::Uniform { lo, hi } => rng.random_range(lo..=hi),
        };
        Some(self.deliver(env, now, jitter))
    }

    /// Arrival time for a message given an already drawn jitter value.
    pub fn deliver(&mut self, env: &Envelope, now: SimTime, jitter: Nanos) -> SimTime {
        let arrival = now
            + self.model.base_delay
            + jitter
            + self.model.serialization_delay(env.payload_bytes);
        let arrival = arrival.max(self.last_arrival);
        self.last_arrival = arrival;
        arrival
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::time::NANOS_PER_MILLI;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn video(now: SimTime, bytes: u64) -> Envelope {
        Envelope::new(Body::Video { stamp: now }, bytes, now, None).unwrap()
    }

    #[test]
    fn fixed_delay() {
        let mut ch = Channel::new(ChannelModel::fixed(
            500 * NANOS_PER_MILLI,
            Direction::Uplink,
        ))
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let at = ch.transmit(&video(SimTime::ZERO, 10), SimTime::ZERO, &mut rng);
        assert_eq!(at, Some(SimTime::from_millis(500)));
    }

    #[test]
    fn bandwidth_adds_serialization() {
        let model = ChannelModel {
            bandwidth: 1_000_000,
            ..ChannelModel::fixed(100 * NANOS_PER_MILLI, Direction::Downlink)
        };
        let mut ch = Channel::new(model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let at = ch.transmit(&video(SimTime::ZERO, 200_000), SimTime::ZERO, &mut rng);
        assert_eq!(at, Some(SimTime::from_millis(300)));
    }

    #[test]
    fn fifo_clamp() {
        let model = ChannelModel {
            jitter: Jitter::Uniform {
                lo: 0,
                hi: 10 * NANOS_PER_MILLI,
            },
            ..ChannelModel::fixed(500 * NANOS_PER_MILLI, Direction::Downlink)
        };
        let mut ch = Channel::new(model).unwrap();
        let first = ch.deliver(
            &video(SimTime::ZERO, 1),
            SimTime::ZERO,
            10 * NANOS_PER_MILLI,
        );
        let second = ch.deliver(
            &video(SimTime::from_millis(1), 1),
            SimTime::from_millis(1),
            0,
        );
        assert_eq!(first, SimTime::from_millis(510));
        assert_eq!(second, SimTime::from_millis(510));
    }

    #[test]
    fn provenance() {
        let head = Pose::default();
        let born = SimTime::from_millis(5);
        let up = Envelope::new(Body::UserPose { head, hand: head }, 256, born, Some(born)).unwrap();
        assert_eq!(provenance_of(&up), Ok(born));
        let ts = crate::kinematics::encode_transform_string(
            &JointVector::zeros(3),
            SimTime::from_millis(9),
            born,
        );
        let down = Envelope::new(
            Body::Transform(ts),
            128,
            SimTime::from_millis(9),
            up.origin_user_stamp,
        )
        .unwrap();
        assert_eq!(provenance_of(&down), Ok(born));
        let pc = Envelope::new(
            Body::PointCloud {
                stamp: born,
                objects: vec![],
            },
            65536,
            born,
            None,
        )
        .unwrap();
        assert_eq!(
            provenance_of(&pc),
            Err(NetworkError::MissingProvenance(PayloadKind::PointCloud))
        );
    }

    #[test]
    fn envelope_invariants() {
        let head = Pose::default();
        assert_eq!(
            Envelope::new(
                Body::UserPose { head, hand: head },
                256,
                SimTime::ZERO,
                None
            ),
            Err(NetworkError::MissingProvenance(PayloadKind::UserPose))
        );
        assert_eq!(
            Envelope::new(
                Body::Video {
                    stamp: SimTime::ZERO
                },
                0,
                SimTime::ZERO,
                None
            ),
            Err(NetworkError::EmptyPayload)
        );
    }

    #[test]
    fn rejects_invalid_models() {
        let mut m = ChannelModel::fixed(0, Direction::Uplink);
        m.drop_prob = 1.0;
        assert!(Channel::new(m).is_err());
        m.drop_prob = 0.0;
        m.jitter = Jitter::Uniform { lo: 5, hi: 4 };
        assert!(Channel::new(m).is_err());
    }

    #[test]
    fn drops_keep_fifo() {
        let model = ChannelModel {
            drop_prob: 0.3,
            jitter: Jitter::Uniform {
                lo: 0,
                hi: 50 * NANOS_PER_MILLI,
            },
            ..ChannelModel::fixed(10 * NANOS_PER_MILLI, Direction::Uplink)
        };
        let mut ch = Channel::new(model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut last = SimTime::ZERO;
        let mut delivered = 0;
        for k in 0..2000u64 {
            let now = SimTime::from_nanos(k * NANOS_PER_MILLI);
            if let Some(at) = ch.transmit(&video(now, 100), now, &mut rng) {
                assert!(at >= last);
                assert!(at >= now + model.base_delay);
                last = at;
                delivered += 1;
            }
        }
        assert_eq!(ch.dropped() + delivered, 2000);
        assert!(ch.dropped() > 400 && ch.dropped() < 800);
    }

    #[test]
    fn mean_delay_matches_model() {
        let model = ChannelModel {
            base_delay: 450 * NANOS_PER_MILLI,
            jitter: Jitter::Uniform {
                lo: 0,
                hi: 100 * NANOS_PER_MILLI,
            },
            bandwidth: 1_000_000,
            drop_prob: 0.0,
            direction: Direction::Downlink,
        };
        let mut ch = Channel::new(model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000u64;
        let bytes = 65_536;
        let mut total = 0.0;
        for k in 0..n {
            // spaced wider than the largest delay so the FIFO clamp never binds
            let now = SimTime::from_nanos(k * NANOS_PER_SEC);
            let at = ch.transmit(&video(now, bytes), now, &mut rng).unwrap();
            total += (at - now) as f64;
        }
        let measured = total / n as f64;
        let expected = model.base_delay as f64 + model.jitter.mean() + bytes as f64 * 1e9 / 1e6;
        assert!(
            (measured - expected).abs() / expected < 0.02,
            "{measured} vs {expected}"
        );
    }
}
