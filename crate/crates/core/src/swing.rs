//! Swing-foot trajectories, IK targets and joint-space PD.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::hwr::Side;
use crate::robot::{leg_ik, JointVector, LegJointState, RobotParams, TorsoPose};

/// Phase clamped to `[0, 1]`; `clamped` is set when the input was outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub s: f64,
    pub clamped: bool,
}

impl Phase {
    pub fn new(s: f64) -> Self {
        let c = s.clamp(0.0, 1.0);
        Self { s: c, clamped: c != s || s.is_nan() }
    }
}

/// Position and time derivative along one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingSample<T> {
    pub pos: T,
    pub vel: T,
    pub clamped: bool,
}

/// Cosine interpolation from `p_i` to `p_f`; `s_dot = 1/t_ssp`.
pub fn swing_xy(s: f64, p_i: Vector2<f64>, p_f: Vector2<f64>, s_dot: f64) -> SwingSample<Vector2<f64>> {
    let ph = Phase::new(s);
    let (sin, cos) = (PI * ph.s).sin_cos();
    let w = 0.5 * (1.0 - cos);
    // Same curve as ½[(1 + cos πs)p_i + (1 − cos πs)p_f], arranged to be
    // exact at both ends and for p_i = p_f.
    let pos = if w == 1.0 { p_f } else { p_i + w * (p_f - p_i) };
    let vel = 0.5 * PI * sin * s_dot * (p_f - p_i);
    SwingSample { pos, vel, clamped: ph.clamped }
}

/// Lift-and-return height profile with apex `z_cl` at `s = 0.5`.
pub fn swing_z(s: f64, p_i_z: f64, z_cl: f64, s_dot: f64) -> SwingSample<f64> {
    let ph = Phase::new(s);
    let (sin, cos) = (2.0 * PI * ph.s).sin_cos();
    SwingSample { pos: p_i_z + 0.5 * z_cl * (1.0 - cos), vel: PI * z_cl * sin * s_dot, clamped: ph.clamped }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwingPlan {
    pub p_i: Vector3<f64>,
    pub p_f: Vector2<f64>,
    pub z_cl: f64,
    pub t_ssp_est: f64,
    pub start_time: f64,
}

impl SwingPlan {
    pub fn new(p_i: Vector3<f64>, p_f: Vector2<f64>, z_cl: f64, t_ssp_est: f64, start_time: f64) -> Self {
        Self { p_i, p_f, z_cl: z_cl.max(0.0), t_ssp_est: t_ssp_est.max(1e-3), start_time }
    }

    pub fn phase(&self, now: f64) -> f64 {
        (now - self.start_time) / self.t_ssp_est
    }

    pub fn sample(&self, now: f64) -> SwingSample<Vector3<f64>> {
        let s = self.phase(now);
        let s_dot = 1.0 / self.t_ssp_est;
        let xy = swing_xy(s, self.p_i.xy(), self.p_f, s_dot);
        let z = swing_z(s, self.p_i.z, self.z_cl, s_dot);
        SwingSample {
            pos: Vector3::new(xy.pos.x, xy.pos.y, z.pos),
            vel: Vector3::new(xy.vel.x, xy.vel.y, z.vel),
            clamped: xy.clamped,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwingGains {
    pub kp: [f64; 5],
    pub kd: [f64; 5],
}

impl Default for SwingGains {
    fn default() -> Self {
        Self { kp: [900.0; 5], kd: [60.0; 5] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwingCommand {
    pub tau: JointVector,
    pub q_des: JointVector,
    pub qdot_des: JointVector,
    /// IK target was clamped to the workspace or joint limits.
    pub saturated: bool,
    /// Phase fell outside `[0, 1]`.
    pub phase_clamped: bool,
}

/// Joint PD towards IK of the trajectory point; desired joint velocities
/// are central differences of IK targets one tick apart, with the torso
/// carried along at `torso_velocity` (world frame).
#[allow(clippy::too_many_arguments)]
pub fn swing_torques(
    plan: &SwingPlan,
    now: f64,
    torso: &TorsoPose,
    torso_velocity: &Vector3<f64>,
    leg: &LegJointState,
    side: Side,
    gains: &SwingGains,
    dt: f64,
    params: &RobotParams,
) -> SwingCommand {
    let ik_at = |t: f64| {
        let moved = TorsoPose { position: torso.position + torso_velocity * (t - now), rotation: torso.rotation };
        let target = moved.to_body(&plan.sample(t).pos);
        leg_ik(params, &target, side, &torso.rotation)
    };
    let here = ik_at(now);
    let ahead = ik_at(now + dt);
    let behind = ik_at(now - dt);
    let qdot_des = (ahead.joints - behind.joints) / (2.0 * dt);
    let mut tau = JointVector::zeros();
    for j in 0..5 {
        tau[j] = gains.kp[j] * (here.joints[j] - leg.q[j]) + gains.kd[j] * (qdot_des[j] - leg.qdot[j]);
    }
    SwingCommand {
        tau,
        q_des: here.joints,
        qdot_des,
        saturated: here.saturated,
        phase_clamped: Phase::new(plan.phase(now)).clamped,
    }
}

/// Airborne leg as decoupled joint double integrators.
pub fn step_joint_plant(leg: &mut LegJointState, tau: &JointVector, inertia: f64, dt: f64, params: &RobotParams) {
    for j in 0..5 {
        leg.qdot[j] += tau[j] / inertia * dt;
        leg.q[j] += leg.qdot[j] * dt;
        let [lo, hi] = params.joint_limits[j];
        if leg.q[j] < lo || leg.q[j] > hi {
            leg.q[j] = leg.q[j].clamp(lo, hi);
            leg.qdot[j] = 0.0;
        }
    }
}
