//! Parametric biped: mass properties, 5-DoF serial legs, toe/heel contact
//! points, contact Jacobians and speed-dependent motor torque limits.
//!
//! Leg joint order is hip yaw (z), hip roll (x), hip pitch (y), knee (y),
//! ankle pitch (y). Positive knee flexion swings the shank backward. The
//! ankle sits on the sole; toe and heel are `±foot_half_len` along the foot
//! x-axis.

use nalgebra::{Matrix3, Matrix3x5, Matrix5, Rotation3, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hwr::Side;

pub const LEG_DOF: usize = 5;
pub type JointVector = SVector<f64, LEG_DOF>;

pub const HIP_YAW: usize = 0;
pub const HIP_ROLL: usize = 1;
pub const HIP_PITCH: usize = 2;
pub const KNEE: usize = 3;
pub const ANKLE_PITCH: usize = 4;

/// Margin kept from full leg extension by the IK.
pub const REACH_MARGIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobotError {
    #[error("invalid robot parameter: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotParams {
    pub mass: f64,
    /// Torso inertia about the CoM, body frame, row-major.
    pub inertia_body: [[f64; 3]; 3],
    pub gravity: f64,
    pub com_height_nominal: f64,
    /// Lateral distance from the CoM to each hip.
    pub hip_offset_y: f64,
    /// Vertical distance from the CoM down to the hips.
    pub hip_offset_z: f64,
    pub thigh_len: f64,
    pub shank_len: f64,
    pub foot_half_len: f64,
    pub friction_mu: f64,
    pub motor_tau_stall: f64,
    pub motor_speed_at_zero_torque: f64,
    /// `[lower, upper]` per joint.
    pub joint_limits: [[f64; 2]; LEG_DOF],
    /// Maps joint torques to motor torques via its transpose; row-major.
    pub topology_jacobian: [[f64; LEG_DOF]; LEG_DOF],
}

impl Default for RobotParams {
    fn default() -> Self {
        let mut identity = [[0.0; LEG_DOF]; LEG_DOF];
        for (i, row) in identity.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Self {
            mass: 15.8,
            inertia_body: [[0.32, 0.0, 0.0], [0.0, 0.28, 0.0], [0.0, 0.0, 0.12]],
            gravity: 9.81,
            com_height_nominal: 0.5,
            hip_offset_y: 0.05,
            hip_offset_z: 0.08,
            thigh_len: 0.25,
            shank_len: 0.25,
            foot_half_len: 0.05,
            friction_mu: 0.7,
            motor_tau_stall: 45.0,
            motor_speed_at_zero_torque: 25.0,
            joint_limits: [[-0.6, 0.6], [-0.6, 0.6], [-1.6, 1.2], [0.0, 2.6], [-1.3, 1.3]],
            topology_jacobian: identity,
        }
    }
}

impl RobotParams {
    pub fn validate(&self) -> Result<(), RobotError> {
        let bad = |m: &str| Err(RobotError::InvalidParams(m.to_string()));
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        let inertia = self.inertia();
        if (inertia - inertia.transpose()).amax() > 1e-12 {
            return bad("inertia must be symmetric");
        }
        if inertia.cholesky().is_none() {
            return bad("inertia must be positive definite");
        }
        if !(self.friction_mu > 0.0) {
            return bad("friction coefficient must be positive");
        }
        if !(self.gravity > 0.0 && self.com_height_nominal > 0.0) {
            return bad("gravity and nominal CoM height must be positive");
        }
        if !(self.thigh_len > 0.0 && self.shank_len > 0.0 && self.foot_half_len > 0.0) {
            return bad("link lengths must be positive");
        }
        if !(self.motor_tau_stall >= 0.0 && self.motor_speed_at_zero_torque > 0.0) {
            return bad("motor constants must be non-negative with positive no-load speed");
        }
        if self.joint_limits.iter().any(|l| !(l[0] < l[1])) {
            return bad("joint limits must satisfy lower < upper");
        }
        if self.topology_jacobian().lu().try_inverse().is_none() {
            return bad("topology jacobian must be invertible");
        }
        Ok(())
    }

    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.inertia_body[r][c])
    }

    pub fn topology_jacobian(&self) -> Matrix5<f64> {
        Matrix5::from_fn(|r, c| self.topology_jacobian[r][c])
    }

    pub fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity)
    }

    /// Hip joint centre in the torso frame.
    pub fn hip_position(&self, side: Side) -> Vector3<f64> {
        Vector3::new(0.0, side.sign() * self.hip_offset_y, -self.hip_offset_z)
    }

    pub fn max_reach(&self) -> f64 {
        self.thigh_len + self.shank_len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LegJointState {
    pub q: JointVector,
    pub qdot: JointVector,
}

impl LegJointState {
    pub fn at_rest(q: JointVector) -> Self {
        Self { q, qdot: JointVector::zeros() }
    }

    pub fn within_limits(&self, params: &RobotParams) -> bool {
        self.q.iter().zip(params.joint_limits.iter()).all(|(q, l)| *q >= l[0] && *q <= l[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContactId {
    LeftToe,
    LeftHeel,
    RightToe,
    RightHeel,
}

impl ContactId {
    pub const ALL: [ContactId; 4] =
        [ContactId::LeftToe, ContactId::LeftHeel, ContactId::RightToe, ContactId::RightHeel];

    pub fn side(self) -> Side {
        match self {
            ContactId::LeftToe | ContactId::LeftHeel => Side::Left,
            ContactId::RightToe | ContactId::RightHeel => Side::Right,
        }
    }

    pub fn is_toe(self) -> bool {
        matches!(self, ContactId::LeftToe | ContactId::RightToe)
    }

    pub fn of_foot(side: Side) -> [ContactId; 2] {
        match side {
            Side::Left => [ContactId::LeftToe, ContactId::LeftHeel],
            Side::Right => [ContactId::RightToe, ContactId::RightHeel],
        }
    }

    /// Signed offset along the foot axis.
    pub fn foot_offset(self, params: &RobotParams) -> f64 {
        if self.is_toe() {
            params.foot_half_len
        } else {
            -params.foot_half_len
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub id: ContactId,
    pub position_world: Vector3<f64>,
    pub active: bool,
}

/// Torso (CoM) placement in the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorsoPose {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl TorsoPose {
    pub fn identity_at(position: Vector3<f64>) -> Self {
        Self { position, rotation: Matrix3::identity() }
    }

    pub fn to_world(&self, body: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation * body
    }

    pub fn to_body(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (world - self.position)
    }
}

/// Joint frames of one leg expressed in the torso frame.
#[derive(Debug, Clone, Copy)]
struct Chain {
    origins: [Vector3<f64>; LEG_DOF],
    axes: [Vector3<f64>; LEG_DOF],
    ankle: Vector3<f64>,
    foot: Matrix3<f64>,
}

fn rot(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    *Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(axis), angle).matrix()
}

fn chain(params: &RobotParams, q: &JointVector, side: Side) -> Chain {
    let (ex, ey, ez) = (Vector3::x(), Vector3::y(), Vector3::z());
    let hip = params.hip_position(side);
    let r1 = rot(ez, q[HIP_YAW]);
    let r2 = r1 * rot(ex, q[HIP_ROLL]);
    let r3 = r2 * rot(ey, q[HIP_PITCH]);
    let knee = hip + r3 * Vector3::new(0.0, 0.0, -params.thigh_len);
    let r4 = r3 * rot(ey, q[KNEE]);
    let ankle = knee + r4 * Vector3::new(0.0, 0.0, -params.shank_len);
    let r5 = r4 * rot(ey, q[ANKLE_PITCH]);
    Chain { origins: [hip, hip, hip, knee, ankle], axes: [ez, r1 * ex, r2 * ey, r3 * ey, r4 * ey], ankle, foot: r5 }
}

/// World placement of one foot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootKinematics {
    pub ankle: Vector3<f64>,
    pub toe: Vector3<f64>,
    pub heel: Vector3<f64>,
    pub rotation: Matrix3<f64>,
}

impl FootKinematics {
    pub fn contact(&self, id: ContactId) -> Vector3<f64> {
        if id.is_toe() {
            self.toe
        } else {
            self.heel
        }
    }
}

pub fn forward_kinematics(params: &RobotParams, torso: &TorsoPose, leg: &LegJointState, side: Side) -> FootKinematics {
    let c = chain(params, &leg.q, side);
    let axis = c.foot * Vector3::new(params.foot_half_len, 0.0, 0.0);
    FootKinematics {
        ankle: torso.to_world(&c.ankle),
        toe: torso.to_world(&(c.ankle + axis)),
        heel: torso.to_world(&(c.ankle - axis)),
        rotation: torso.rotation * c.foot,
    }
}

/// Contact point position in the torso frame.
pub fn contact_position_body(params: &RobotParams, q: &JointVector, id: ContactId) -> Vector3<f64> {
    let c = chain(params, q, id.side());
    c.ankle + c.foot * Vector3::new(id.foot_offset(params), 0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub joints: JointVector,
    /// The target was outside the workspace or a joint hit its limit.
    pub saturated: bool,
}

/// Places the ankle at `target` (torso frame) with zero hip yaw and the sole
/// level in the world for the given torso orientation.
pub fn leg_ik(params: &RobotParams, target: &Vector3<f64>, side: Side, torso_rotation: &Matrix3<f64>) -> IkSolution {
    let (t, s) = (params.thigh_len, params.shank_len);
    let d = target - params.hip_position(side);
    let mut saturated = false;

    let roll = d.y.atan2(-d.z);
    let in_plane = (d.y * d.y + d.z * d.z).sqrt();
    let mut reach = (d.x * d.x + in_plane * in_plane).sqrt();
    let (lo, hi) = ((t - s).abs() + REACH_MARGIN, t + s - REACH_MARGIN);
    if reach > hi || reach < lo {
        saturated = true;
        reach = reach.clamp(lo, hi);
    }
    let cos_knee = ((reach * reach - t * t - s * s) / (2.0 * t * s)).clamp(-1.0, 1.0);
    let knee = cos_knee.acos();
    let phi = (-d.x).atan2(in_plane);
    let beta = (s * knee.sin()).atan2(t + s * knee.cos());
    let pitch = phi - beta;

    let m = torso_rotation * rot(Vector3::x(), roll);
    let foot_pitch = m[(2, 0)].atan2(m[(2, 2)]);
    let ankle = foot_pitch - pitch - knee;

    let mut joints = JointVector::from_column_slice(&[0.0, roll, pitch, knee, ankle]);
    for (q, lim) in joints.iter_mut().zip(params.joint_limits.iter()) {
        if *q < lim[0] || *q > lim[1] {
            saturated = true;
            *q = q.clamp(lim[0], lim[1]);
        }
    }
    IkSolution { joints, saturated }
}

/// 3×5 Jacobian of a contact point in the torso frame, so that joint
/// torques are `Jᵀ·f` for a body-frame force `f` at that point.
pub fn contact_jacobian(params: &RobotParams, leg: &LegJointState, id: ContactId) -> Matrix3x5<f64> {
    let c = chain(params, &leg.q, id.side());
    let p = c.ankle + c.foot * Vector3::new(id.foot_offset(params), 0.0, 0.0);
    let mut j = Matrix3x5::zeros();
    for i in 0..LEG_DOF {
        j.set_column(i, &c.axes[i].cross(&(p - c.origins[i])));
    }
    j
}

/// Per-motor torque bounds from the linear torque–speed law.
pub fn motor_torque_limits(params: &RobotParams, leg: &LegJointState) -> JointVector {
    let jmj = params.topology_jacobian();
    // Power balance: q̇_joint = J_MJ q̇_motor.
    let motor_speed = jmj.lu().solve(&leg.qdot).unwrap_or(leg.qdot);
    motor_speed.map(|w| (params.motor_tau_stall * (1.0 - w.abs() / params.motor_speed_at_zero_torque)).max(0.0))
}

/// Joint-space posture the robot stands in: ankles under the hips at the
/// nominal CoM height, sole level.
pub fn nominal_stance(params: &RobotParams, side: Side) -> JointVector {
    let target = Vector3::new(0.0, side.sign() * params.hip_offset_y, -params.com_height_nominal);
    leg_ik(params, &target, side, &Matrix3::identity()).joints
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn p() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn defaults_are_valid() {
        p().validate().unwrap();
        let mut bad = p();
        bad.inertia_body[0][1] = 0.1;
        assert!(bad.validate().is_err());
        bad = p();
        bad.mass = 0.0;
        assert!(bad.validate().is_err());
        bad = p();
        bad.inertia_body[2][2] = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn straight_leg_fk() {
        let params = p();
        let torso = TorsoPose::identity_at(Vector3::zeros());
        let fk = forward_kinematics(&params, &torso, &LegJointState::default(), Side::Left);
        let hip = params.hip_position(Side::Left);
        assert_relative_eq!(fk.ankle, hip - Vector3::new(0.0, 0.0, 0.5), epsilon = 1e-15);
        assert_relative_eq!(fk.toe, fk.ankle + Vector3::new(0.05, 0.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(fk.heel, fk.ankle - Vector3::new(0.05, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn right_angle_knee_raises_ankle_by_shank() {
        let params = p();
        let torso = TorsoPose::identity_at(Vector3::zeros());
        let mut leg = LegJointState::default();
        leg.q[KNEE] = FRAC_PI_2;
        let bent = forward_kinematics(&params, &torso, &leg, Side::Right);
        let straight = forward_kinematics(&params, &torso, &LegJointState::default(), Side::Right);
        assert_relative_eq!(bent.ankle.z - straight.ankle.z, params.shank_len, epsilon = 1e-15);
        // hand-composed homogeneous transforms
        let hip = params.hip_position(Side::Right);
        let knee = hip + Vector3::new(0.0, 0.0, -0.25);
        let ankle = knee + rot(Vector3::y(), FRAC_PI_2) * Vector3::new(0.0, 0.0, -0.25);
        assert_relative_eq!(bent.ankle, ankle, epsilon = 1e-15);
    }

    #[test]
    fn ik_near_full_extension() {
        let params = p();
        let hip = params.hip_position(Side::Left);
        let target = hip - Vector3::new(0.0, 0.0, 0.5 - 1e-3);
        let sol = leg_ik(&params, &target, Side::Left, &Matrix3::identity());
        assert!(!sol.saturated);
        assert!(sol.joints[HIP_ROLL].abs() < 1e-12);
        assert!(sol.joints[KNEE] < 0.13, "{}", sol.joints[KNEE]);
        assert!(sol.joints[HIP_PITCH].abs() < 0.07);
    }

    #[test]
    fn ik_is_mirror_symmetric() {
        let params = p();
        let left = leg_ik(&params, &Vector3::new(0.05, 0.09, -0.4), Side::Left, &Matrix3::identity());
        let right = leg_ik(&params, &Vector3::new(0.05, -0.09, -0.4), Side::Right, &Matrix3::identity());
        assert_relative_eq!(left.joints[HIP_ROLL], -right.joints[HIP_ROLL], epsilon = 1e-14);
        for j in [HIP_YAW, HIP_PITCH, KNEE, ANKLE_PITCH] {
            assert_relative_eq!(left.joints[j], right.joints[j], epsilon = 1e-14);
        }
    }

    #[test]
    fn ik_levels_the_sole() {
        let params = p();
        let torso_rot = rot(Vector3::y(), 0.2) * rot(Vector3::x(), -0.05);
        let sol = leg_ik(&params, &Vector3::new(0.1, 0.05, -0.38), Side::Left, &torso_rot);
        let torso = TorsoPose { position: Vector3::zeros(), rotation: torso_rot };
        let fk = forward_kinematics(&params, &torso, &LegJointState::at_rest(sol.joints), Side::Left);
        assert!((fk.toe.z - fk.heel.z).abs() < 1e-12);
    }

    #[test]
    fn unreachable_target_saturates() {
        let params = p();
        let sol = leg_ik(&params, &Vector3::new(0.0, 0.05, -0.9), Side::Left, &Matrix3::identity());
        assert!(sol.saturated);
        let fk = forward_kinematics(
            &params,
            &TorsoPose::identity_at(Vector3::zeros()),
            &LegJointState::at_rest(sol.joints),
            Side::Left,
        );
        assert!(((fk.ankle - params.hip_position(Side::Left)).norm() - 0.5).abs() < 1e-5);
    }

    #[test]
    fn jacobian_zero_force_and_vertical_load() {
        let params = p();
        let leg = LegJointState::at_rest(nominal_stance(&params, Side::Left));
        let j = contact_jacobian(&params, &leg, ContactId::LeftToe);
        assert_eq!(j.transpose() * Vector3::zeros(), JointVector::zeros());
        // straight leg, equal vertical loads on toe and heel: the resultant
        // passes through the ankle, so only the ankle moments cancel out too
        let straight = LegJointState::default();
        let f = Vector3::new(0.0, 0.0, 100.0);
        let tau = contact_jacobian(&params, &straight, ContactId::LeftToe).transpose() * f
            + contact_jacobian(&params, &straight, ContactId::LeftHeel).transpose() * f;
        assert!(tau.amax() < 1e-12, "{tau}");
        let toe_only = contact_jacobian(&params, &straight, ContactId::LeftToe).transpose() * f;
        assert_relative_eq!(toe_only[KNEE], -100.0 * params.foot_half_len, epsilon = 1e-12);
    }

    #[test]
    fn motor_limit_law() {
        let params = p();
        let mut leg = LegJointState::default();
        assert_eq!(motor_torque_limits(&params, &leg), JointVector::repeat(45.0));
        leg.qdot = JointVector::repeat(25.0);
        assert_eq!(motor_torque_limits(&params, &leg), JointVector::zeros());
        leg.qdot = JointVector::repeat(-12.5);
        assert_relative_eq!(motor_torque_limits(&params, &leg), JointVector::repeat(22.5), epsilon = 1e-12);
        leg.qdot = JointVector::repeat(40.0);
        assert_eq!(motor_torque_limits(&params, &leg), JointVector::zeros());
    }

    #[test]
    fn nominal_stance_puts_ankle_at_ground() {
        let params = p();
        for side in [Side::Left, Side::Right] {
            let q = nominal_stance(&params, side);
            let fk = forward_kinematics(
                &params,
                &TorsoPose::identity_at(Vector3::new(0.0, 0.0, params.com_height_nominal)),
                &LegJointState::at_rest(q),
                side,
            );
            assert!(fk.ankle.z.abs() < 1e-12);
            assert!(LegJointState::at_rest(q).within_limits(&params));
        }
    }
}
