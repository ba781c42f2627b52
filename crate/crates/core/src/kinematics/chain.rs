use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, Vector3};

use super::KinematicsError;
use crate::geometry::{Pose, UnitQuaternion};
use crate::time::SimTime;

/// One revolute joint in standard Denavit-Hartenberg form.
///
/// The link transform is `Rz(theta + theta_offset) * Tz(d) * Tx(a) * Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DhJoint {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
    pub lo: f64,
    pub hi: f64,
}

impl DhJoint {
    pub fn revolute(a: f64, alpha: f64, d: f64, theta_offset: f64) -> Self {
        DhJoint {
            a,
            alpha,
            d,
            theta_offset,
            lo: -PI,
            hi: PI,
        }
    }

    pub fn with_limits(mut self, lo: f64, hi: f64) -> Self {
        self.lo = lo;
        self.hi = hi;
        self
    }

    fn transform(&self, theta: f64) -> Frame {
        let rz = UnitQuaternion::from_axis_angle(&Vector3::z(), theta + self.theta_offset);
        let rx = UnitQuaternion::from_axis_angle(&Vector3::x(), self.alpha);
        let translation = rz.rotate(&Vector3::new(self.a, 0.0, self.d));
        Frame {
            rotation: rz.mul(&rx),
            translation,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Frame {
    rotation: UnitQuaternion,
    translation: Vector3<f64>,
}

impl Frame {
    fn compose(&self, next: &Frame) -> Frame {
        Frame {
            rotation: self.rotation.mul(&next.rotation),
            translation: self.translation + self.rotation.rotate(&next.translation),
        }
    }
}

/// Joint configuration in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct JointVector(Vec<f64>);

impl JointVector {
    pub fn new(angles: Vec<f64>) -> Self {
        JointVector(angles)
    }

    pub fn zeros(n: usize) -> Self {
        JointVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(angles: Vec<f64>) -> Self {
        JointVector(angles)
    }
}

/// A serial arm of revolute DH joints mounted at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    joints: Vec<DhJoint>,
    base: Pose,
}

impl KinematicChain {
    pub fn new(joints: Vec<DhJoint>, base: Pose) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::InvalidChain("chain has no joints".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            let params = [j.a, j.alpha, j.d, j.theta_offset, j.lo, j.hi];
            if params.iter().any(|p| !p.is_finite()) {
                return Err(KinematicsError::InvalidChain(format!(
                    "joint {i} has a non-finite parameter"
                )));
            }
            if j.lo >= j.hi {
                return Err(KinematicsError::InvalidChain(format!(
                    "joint {i} limits are empty ({} >= {})",
                    j.lo, j.hi
                )));
            }
        }
        Ok(KinematicChain { joints, base })
    }

    /// Planar arm in the base XY plane with the given link lengths.
    pub fn planar(links: &[f64]) -> Result<Self, KinematicsError> {
        let joints = links
            .iter()
            .map(|&a| DhJoint::revolute(a, 0.0, 0.0, 0.0))
            .collect();
        KinematicChain::new(joints, Pose::default())
    }

    /// The default desk-scale arm: three planar links of 0.5, 0.4 and 0.3 m.
    pub fn planar3() -> Self {
        KinematicChain::planar(&[0.5, 0.4, 0.3]).expect("static chain is valid")
    }

    /// Six-joint arm with the geometry of a Kinova Jaco2 (J2N6S300).
    ///
    /// Joint angles follow the vendor convention; the DH offsets map them onto
    /// the classic DH table.
    pub fn kinova_j2n6s300() -> Self {
        let (d1, d2, d3, d4, d5, d6, e2) = (0.2755, 0.41, 0.2073, 0.0741, 0.0741, 0.16, 0.0098);
        let aa = PI / 6.0;
        let ratio = aa.sin() / (2.0 * aa).sin();
        let d4b = d3 + ratio * d4;
        let d5b = ratio * d4 + ratio * d5;
        let d6b = ratio * d5 + d6;
        let wide = (-2.0 * PI, 2.0 * PI);
        let joints = vec![
            DhJoint::revolute(0.0, FRAC_PI_2, d1, 0.0).with_limits(wide.0, wide.1),
            DhJoint::revolute(d2, PI, 0.0, -FRAC_PI_2).with_limits(0.820, 5.463),
            DhJoint::revolute(0.0, FRAC_PI_2, -e2, FRAC_PI_2).with_limits(0.332, 5.952),
            DhJoint::revolute(0.0, 2.0 * aa, -d4b, 0.0).with_limits(wide.0, wide.1),
            DhJoint::revolute(0.0, 2.0 * aa, -d5b, -PI).with_limits(wide.0, wide.1),
            DhJoint::revolute(0.0, PI, -d6b, 5.0 * PI / 9.0).with_limits(wide.0, wide.1),
        ];
        KinematicChain::new(joints, Pose::default()).expect("static chain is valid")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[DhJoint] {
        &self.joints
    }

    pub fn base(&self) -> &Pose {
        &self.base
    }

    /// Upper bound on the distance from the base origin to the end effector.
    pub fn reach(&self) -> f64 {
        self.joints.iter().map(|j| j.a.abs() + j.d.abs()).sum()
    }

    /// Clamps every angle into its joint limits.
    pub fn clamp(&self, q: &mut [f64]) {
        for (angle, joint) in q.iter_mut().zip(&self.joints) {
            *angle = angle.clamp(joint.lo, joint.hi);
        }
    }

    fn check_len(&self, q: &JointVector) -> Result<(), KinematicsError> {
        if q.len() == self.dof() {
            Ok(())
        } else {
            Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            })
        }
    }

    /// Frames before each joint (joint axes) followed by the end-effector frame.
    fn frames(&self, q: &[f64]) -> Vec<Frame> {
        let mut frames = Vec::with_capacity(self.dof() + 1);
        let mut current = Frame {
            rotation: self.base.orientation,
            translation: self.base.position,
        };
        frames.push(current);
        for (joint, &theta) in self.joints.iter().zip(q) {
            current = current.compose(&joint.transform(theta));
            frames.push(current);
        }
        frames
    }
}

/// End-effector pose for configuration `q`. The result carries the base stamp.
pub fn forward_kinematics(
    chain: &KinematicChain,
    q: &JointVector,
) -> Result<Pose, KinematicsError> {
    chain.check_len(q)?;
    let ee = *chain
        .frames(q.as_slice())
        .last()
        .expect("frames is never empty");
    Ok(Pose::new(ee.translation, ee.rotation, chain.base.stamp))
}

/// Same as [`forward_kinematics`] but stamps the result.
pub fn forward_kinematics_at(
    chain: &KinematicChain,
    q: &JointVector,
    stamp: SimTime,
) -> Result<Pose, KinematicsError> {
    forward_kinematics(chain, q).map(|p| p.with_stamp(stamp))
}

/// Geometric Jacobian: rows 0..3 are linear velocity (m/rad), rows 3..6
/// angular velocity (rad/rad), both in the base world frame.
pub fn jacobian(chain: &KinematicChain, q: &JointVector) -> Result<DMatrix<f64>, KinematicsError> {
    chain.check_len(q)?;
    let frames = chain.frames(q.as_slice());
    let ee = frames[chain.dof()].translation;
    let mut jac = DMatrix::zeros(6, chain.dof());
    for i in 0..chain.dof() {
        let axis = frames[i].rotation.rotate(&Vector3::z());
        let linear = axis.cross(&(ee - frames[i].translation));
        for r in 0..3 {
            jac[(r, i)] = linear[r];
            jac[(r + 3, i)] = axis[r];
        }
    }
    Ok(jac)
}
