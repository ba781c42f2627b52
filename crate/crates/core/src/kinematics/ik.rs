//! Damped least-squares inverse kinematics.

use nalgebra::{DMatrix, DVector, Vector3};

use super::chain::{forward_kinematics, jacobian, JointVector, KinematicChain};
use super::KinematicsError;
use crate::geometry::Pose;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkParams {
    /// Damping factor lambda; the solve uses lambda squared.
    pub damping: f64,
    /// Position convergence threshold, meters.
    pub tol_pos: f64,
    /// Rotation convergence threshold, radians.
    pub tol_rot: f64,
    pub max_iters: u32,
    /// Largest per-joint change in one iteration, radians.
    pub step_clamp: f64,
    /// Meters per radian applied to the orientation error rows. Zero solves
    /// for position only and skips the rotation convergence check.
    pub rot_weight: f64,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams {
            damping: 0.05,
            tol_pos: 1e-4,
            tol_rot: 1e-3,
            max_iters: 200,
            step_clamp: 0.5,
            rot_weight: 0.5,
        }
    }
}

impl IkParams {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let bad = |what: &str| Err(KinematicsError::InvalidParams(what.to_string()));
        if !(self.damping > 0.0) {
            return bad("damping must be > 0");
        }
        if !(self.tol_pos > 0.0) {
            return bad("tol_pos must be > 0");
        }
        if !(self.tol_rot > 0.0) {
            return bad("tol_rot must be > 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if !(self.step_clamp > 0.0) {
            return bad("step_clamp must be > 0");
        }
        if !(self.rot_weight >= 0.0) || !self.rot_weight.is_finite() {
            return bad("rot_weight must be a finite value >= 0");
        }
        Ok(())
    }

    pub fn position_only(&self) -> bool {
        self.rot_weight == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub joints: JointVector,
    pub converged: bool,
    /// Number of joint updates applied.
    pub iterations: u32,
    pub position_error: f64,
    pub rotation_error: f64,
}

/// Solves for joints that place the end effector at `target`, starting from
/// `seed`. Non-convergence is reported through `converged`, not as an error.
pub fn inverse_kinematics(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointVector,
    params: &IkParams,
) -> Result<IkSolution, KinematicsError> {
    if seed.len() != chain.dof() {
        return Err(KinematicsError::DimensionMismatch {
            expected: chain.dof(),
            got: seed.len(),
        });
    }
    params.validate()?;

    let n = chain.dof();
    let rows = if params.position_only() { 3 } else { 6 };
    let mut q = seed.as_slice().to_vec();
    chain.clamp(&mut q);
    let lambda_sq = params.damping * params.damping;

    let mut iterations = 0;
    loop {
        let current = JointVector::new(q.clone());
        let ee = forward_kinematics(chain, &current)?;
        let pos_err: Vector3<f64> = target.position - ee.position;
        let rot_err: Vector3<f64> = target
            .orientation
            .mul(&ee.orientation.inverse())
            .scaled_axis();
        let (pos_norm, rot_norm) = (pos_err.norm(), rot_err.norm());
        let converged =
            pos_norm < params.tol_pos && (params.position_only() || rot_norm < params.tol_rot);
        if converged || iterations == params.max_iters {
            return Ok(IkSolution {
                joints: current,
                converged,
                iterations,
                position_error: pos_norm,
                rotation_error: rot_norm,
            });
        }

        let full = jacobian(chain, &current)?;
        let mut jac = DMatrix::zeros(rows, n);
        let mut err = DVector::zeros(rows);
        for r in 0..3 {
            err[r] = pos_err[r];
            for c in 0..n {
                jac[(r, c)] = full[(r, c)];
            }
        }
        if rows == 6 {
            for r in 0..3 {
                err[r + 3] = params.rot_weight * rot_err[r];
                for c in 0..n {
                    jac[(r + 3, c)] = params.rot_weight * full[(r + 3, c)];
                }
            }
        }

        // dq = J^T (J J^T + lambda^2 I)^-1 e
        let mut damped = &jac * jac.transpose();
        for i in 0..rows {
            damped[(i, i)] += lambda_sq;
        }
        let y = damped
            .cholesky()
            .ok_or_else(|| {
                KinematicsError::InvalidParams("damped system not positive definite".into())
            })?
            .solve(&err);
        let mut dq = jac.transpose() * y;

        let largest = dq.amax();
        if largest > params.step_clamp {
            dq *= params.step_clamp / largest;
        }
        for (angle, delta) in q.iter_mut().zip(dq.iter()) {
            *angle += delta;
        }
        chain.clamp(&mut q);
        iterations += 1;
    }
}
