//! Serial-arm kinematics and the joint-command wire codec.

mod chain;
mod ik;
mod transform_string;

use thiserror::Error;

pub use chain::{
    forward_kinematics, forward_kinematics_at, jacobian, DhJoint, JointVector, KinematicChain,
};
pub use ik::{inverse_kinematics, IkParams, IkSolution};
pub use transform_string::{
    decode_transform_string, encode_transform_string, DecodedTransform, ParseError, TransformString,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("joint vector has {got} entries but the chain has {expected} joints")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid IK parameters: {0}")]
    InvalidParams(String),
}
