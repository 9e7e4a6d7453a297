//! Single-rigid-body plant with massless legs.
//!
//! Ground reaction forces commanded by the balance controller act directly
//! on the body at the pinned contact points. Translation and body angular
//! velocity are integrated with RK4; the rotation follows the exponential
//! map of the RK4-averaged angular velocity and is re-projected onto SO(3)
//! after every step.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hwr::Side;
use crate::robot::{ContactId, RobotParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SrbState {
    pub p: Vector3<f64>,
    pub pdot: Vector3<f64>,
    /// Body → world.
    pub rot_r: Matrix3<f64>,
    pub omega_body: Vector3<f64>,
    pub time: f64,
}

impl SrbState {
    pub fn at_rest(p: Vector3<f64>) -> Self {
        Self { p, pdot: Vector3::zeros(), rot_r: Matrix3::identity(), omega_body: Vector3::zeros(), time: 0.0 }
    }

    /// `‖RᵀR − I‖_F`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rot_r.transpose() * self.rot_r - Matrix3::identity()).norm()
    }
}

/// Net wrench about the CoM in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.force.x, self.force.y, self.force.z, self.torque.x, self.torque.y, self.torque.z]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SupportDomain {
    SspLeft,
    SspRight,
    Dsp,
}

impl SupportDomain {
    pub fn single(stance: Side) -> Self {
        match stance {
            Side::Left => SupportDomain::SspLeft,
            Side::Right => SupportDomain::SspRight,
        }
    }

    pub fn stance_side(self) -> Option<Side> {
        match self {
            SupportDomain::SspLeft => Some(Side::Left),
            SupportDomain::SspRight => Some(Side::Right),
            SupportDomain::Dsp => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactSchedule {
    pub domain: SupportDomain,
}

impl ContactSchedule {
    pub fn new(domain: SupportDomain) -> Self {
        Self { domain }
    }

    pub fn active(&self) -> Vec<ContactId> {
        match self.domain.stance_side() {
            Some(side) => ContactId::of_foot(side).to_vec(),
            None => ContactId::ALL.to_vec(),
        }
    }

    pub fn is_active(&self, id: ContactId) -> bool {
        self.domain.stance_side().is_none_or(|s| id.side() == s)
    }
}

/// `F = Σ fᵢ`, `τ = Σ rᵢ × fᵢ` with `rᵢ` relative to the CoM.
pub fn net_wrench(contacts: &[(Vector3<f64>, Vector3<f64>)]) -> Wrench {
    contacts
        .iter()
        .fold(Wrench::default(), |acc, (r, f)| Wrench { force: acc.force + f, torque: acc.torque + r.cross(f) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SrbDerivative {
    pub p_dot: Vector3<f64>,
    pub pdot_dot: Vector3<f64>,
    pub rot_dot: Matrix3<f64>,
    pub omega_dot: Vector3<f64>,
}

pub fn srbm_derivative(state: &SrbState, wrench: &Wrench, params: &RobotParams) -> SrbDerivative {
    let inertia = params.inertia();
    let w = state.omega_body;
    let body_torque = state.rot_r.transpose() * wrench.torque - w.cross(&(inertia * w));
    let omega_dot = inertia.cholesky().map(|c| c.solve(&body_torque)).unwrap_or_else(Vector3::zeros);
    SrbDerivative {
        p_dot: state.pdot,
        pdot_dot: wrench.force / params.mass + params.gravity_vector(),
        rot_dot: state.rot_r * w.cross_matrix(),
        omega_dot,
    }
}

fn exp_so3(v: Vector3<f64>) -> Matrix3<f64> {
    *Rotation3::new(v).matrix()
}

/// Nearest rotation in the Frobenius sense.
pub fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => {
            let mut out = u * v_t;
            if out.determinant() < 0.0 {
                let mut u = u;
                u.column_mut(2).neg_mut();
                out = u * v_t;
            }
            out
        }
        _ => *r,
    }
}

/// One fixed RK4 step. `wrench_fn` is evaluated at each stage so forces at
/// fixed world points produce the right moment arm.
pub fn integrate<F>(state: &SrbState, mut wrench_fn: F, dt: f64, params: &RobotParams) -> SrbState
where
    F: FnMut(&SrbState) -> Wrench,
{
    let stage = |s: &SrbState, k: &SrbDerivative, omega_ref: Vector3<f64>, h: f64| SrbState {
        p: s.p + k.p_dot * h,
        pdot: s.pdot + k.pdot_dot * h,
        rot_r: s.rot_r * exp_so3(omega_ref * h),
        omega_body: s.omega_body + k.omega_dot * h,
        time: s.time + h,
    };
    let k1 = srbm_derivative(state, &wrench_fn(state), params);
    let s2 = stage(state, &k1, state.omega_body, 0.5 * dt);
    let k2 = srbm_derivative(&s2, &wrench_fn(&s2), params);
    let s3 = stage(state, &k2, s2.omega_body, 0.5 * dt);
    let k3 = srbm_derivative(&s3, &wrench_fn(&s3), params);
    let s4 = stage(state, &k3, s3.omega_body, dt);
    let k4 = srbm_derivative(&s4, &wrench_fn(&s4), params);

    let avg = |a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>, d: Vector3<f64>| (a + 2.0 * b + 2.0 * c + d) / 6.0;
    let omega_avg = avg(state.omega_body, s2.omega_body, s3.omega_body, s4.omega_body);
    SrbState {
        p: state.p + dt * avg(k1.p_dot, k2.p_dot, k3.p_dot, k4.p_dot),
        pdot: state.pdot + dt * avg(k1.pdot_dot, k2.pdot_dot, k3.pdot_dot, k4.pdot_dot),
        rot_r: reorthonormalize(&(state.rot_r * exp_so3(omega_avg * dt))),
        omega_body: state.omega_body + dt * avg(k1.omega_dot, k2.omega_dot, k3.omega_dot, k4.omega_dot),
        time: state.time + dt,
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum CopError {
    #[error("total vertical force {0} is not positive; CoP undefined")]
    NoVerticalLoad(f64),
}

/// Vertical-force-weighted centroid of contact points on the ground plane.
pub fn cop(contacts: &[(Vector3<f64>, Vector3<f64>)]) -> Result<Vector2<f64>, CopError> {
    let fz: f64 = contacts.iter().map(|(_, f)| f.z).sum();
    if !(fz > 0.0) {
        return Err(CopError::NoVerticalLoad(fz));
    }
    let sum = contacts.iter().fold(Vector2::zeros(), |acc, (p, f)| acc + p.xy() * f.z);
    Ok(sum / fz)
}

/// Roll, pitch, yaw of `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
pub fn roll_pitch_yaw(r: &Matrix3<f64>) -> Vector3<f64> {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    Vector3::new(r[(2, 1)].atan2(r[(2, 2)]), pitch, r[(1, 0)].atan2(r[(0, 0)]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FallReason {
    TooLow { height: f64 },
    Tilted { roll: f64, pitch: f64 },
    NonFinite,
}

pub const FALL_HEIGHT_FRACTION: f64 = 0.5;
pub const FALL_TILT: f64 = 0.6;

pub fn detect_fall(state: &SrbState, params: &RobotParams) -> Option<FallReason> {
    if !state.p.iter().chain(state.pdot.iter()).chain(state.rot_r.iter()).all(|v| v.is_finite()) {
        return Some(FallReason::NonFinite);
    }
    if state.p.z < FALL_HEIGHT_FRACTION * params.com_height_nominal {
        return Some(FallReason::TooLow { height: state.p.z });
    }
    let rpy = roll_pitch_yaw(&state.rot_r);
    if rpy.x.abs() > FALL_TILT || rpy.y.abs() > FALL_TILT {
        return Some(FallReason::Tilted { roll: rpy.x, pitch: rpy.y });
    }
    None
}

/// Counted re-checks of the contact constraints on applied forces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContactViolations {
    pub pull: u64,
    pub friction: u64,
}

/// Plant with contact points pinned at their touch-down locations.
#[derive(Debug, Clone)]
pub struct SrbmPlant {
    pub state: SrbState,
    pinned: [Option<Vector3<f64>>; 4],
    pub violations: ContactViolations,
}

fn slot(id: ContactId) -> usize {
    ContactId::ALL.iter().position(|c| *c == id).unwrap_or(0)
}

impl SrbmPlant {
    pub fn new(state: SrbState) -> Self {
        Self { state, pinned: [None; 4], violations: ContactViolations::default() }
    }

    pub fn pin(&mut self, id: ContactId, position: Vector3<f64>) {
        self.pinned[slot(id)] = Some(Vector3::new(position.x, position.y, 0.0));
    }

    pub fn release(&mut self, id: ContactId) {
        self.pinned[slot(id)] = None;
    }

    pub fn pinned(&self, id: ContactId) -> Option<Vector3<f64>> {
        self.pinned[slot(id)]
    }

    /// Applies world-frame forces at the pinned contacts for one step.
    /// Forces on unpinned contacts are ignored.
    pub fn step(&mut self, grfs: &[(ContactId, Vector3<f64>)], dt: f64, params: &RobotParams) -> Wrench {
        let tol = 1e-6;
        let mut applied = Vec::with_capacity(grfs.len());
        for (id, f) in grfs {
            let Some(point) = self.pinned(*id) else { continue };
            if f.z < -tol {
                self.violations.pull += 1;
                log::warn!("pulling force {f:?} at {id:?}");
            }
            let limit = params.friction_mu * f.z.max(0.0) + tol;
            if f.x.abs() > limit || f.y.abs() > limit {
                self.violations.friction += 1;
                log::warn!("friction bound exceeded at {id:?}: {f:?}");
            }
            applied.push((point, *f));
        }
        let wrench_at = |s: &SrbState| {
            let arms: Vec<_> = applied.iter().map(|(c, f)| (c - s.p, *f)).collect();
            net_wrench(&arms)
        };
        let at_start = wrench_at(&self.state);
        self.state = integrate(&self.state, wrench_at, dt, params);
        at_start
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn wrench_of_force_below_com() {
        let mg = 15.8 * 9.81;
        let w = net_wrench(&[(Vector3::new(0.0, 0.0, -0.5), Vector3::new(0.0, 0.0, mg))]);
        assert_eq!(w.force, Vector3::new(0.0, 0.0, mg));
        assert_eq!(w.torque, Vector3::zeros());
        let sym = net_wrench(&[
            (Vector3::new(0.0, 0.1, -0.5), Vector3::new(0.0, 0.0, 50.0)),
            (Vector3::new(0.0, -0.1, -0.5), Vector3::new(0.0, 0.0, 50.0)),
        ]);
        assert_eq!(sym.torque.x, 0.0);
    }

    #[test]
    fn free_fall_and_principal_spin() {
        let p = params();
        let s = SrbState::at_rest(Vector3::new(0.0, 0.0, 1.0));
        let d = srbm_derivative(&s, &Wrench::default(), &p);
        assert_eq!(d.pdot_dot, Vector3::new(0.0, 0.0, -9.81));
        assert_eq!(d.omega_dot, Vector3::zeros());
        let spin = SrbState { omega_body: Vector3::new(0.0, 0.0, 3.0), ..s };
        assert_eq!(srbm_derivative(&spin, &Wrench::default(), &p).omega_dot, Vector3::zeros());
    }

    #[test]
    fn ballistic_flight_matches_closed_form() {
        let p = params();
        let v0 = Vector3::new(0.3, -0.2, 2.0);
        let mut s = SrbState { pdot: v0, ..SrbState::at_rest(Vector3::new(0.0, 0.0, 1.0)) };
        for _ in 0..1000 {
            s = integrate(&s, |_| Wrench::default(), 1e-3, &p);
        }
        let t = s.time;
        let expected = Vector3::new(0.0, 0.0, 1.0) + v0 * t + 0.5 * p.gravity_vector() * t * t;
        assert!((s.p - expected).amax() <= 1e-9, "{}", (s.p - expected).amax());
    }

    #[test]
    fn torque_free_principal_spin_keeps_rate() {
        let p = params();
        let mut s = SrbState { omega_body: Vector3::new(0.0, 2.0, 0.0), ..SrbState::at_rest(Vector3::zeros()) };
        for _ in 0..10_000 {
            s = integrate(&s, |_| Wrench::default(), 1e-3, &p);
        }
        assert!((s.omega_body.norm() - 2.0).abs() <= 1e-9);
        assert!(s.orthonormality_error() <= 1e-9);
        // rotated by 20 rad about y
        let expected = Rotation3::new(Vector3::new(0.0, 20.0, 0.0));
        assert_relative_eq!(s.rot_r, *expected.matrix(), epsilon = 1e-9);
    }

    #[test]
    fn reprojection_fixes_drift() {
        let mut r = *Rotation3::new(Vector3::new(0.1, -0.4, 0.7)).matrix();
        r[(0, 1)] += 1e-4;
        let fixed = reorthonormalize(&r);
        assert!((fixed.transpose() * fixed - Matrix3::identity()).norm() < 1e-14);
        assert!((fixed.determinant() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cop_cases() {
        let toe = Vector3::new(0.05, 0.1, 0.0);
        let heel = Vector3::new(-0.05, 0.1, 0.0);
        let up = |z| Vector3::new(0.0, 0.0, z);
        assert_eq!(cop(&[(toe, up(10.0))]).unwrap(), toe.xy());
        assert_relative_eq!(cop(&[(toe, up(10.0)), (heel, up(10.0))]).unwrap(), Vector2::new(0.0, 0.1));
        // 3:1 toe:heel → a quarter of the way from toe to heel
        let c = cop(&[(toe, up(30.0)), (heel, up(10.0))]).unwrap();
        assert_relative_eq!(c, toe.xy() + 0.25 * (heel - toe).xy(), epsilon = 1e-15);
        assert!(cop(&[(toe, up(0.0))]).is_err());
    }

    #[test]
    fn schedule_sets() {
        assert_eq!(ContactSchedule::new(SupportDomain::Dsp).active().len(), 4);
        let ssp = ContactSchedule::new(SupportDomain::SspRight).active();
        assert_eq!(ssp, vec![ContactId::RightToe, ContactId::RightHeel]);
    }

    #[test]
    fn euler_extraction_round_trip() {
        let (roll, pitch, yaw) = (0.2, -0.3, 1.1);
        let r = Rotation3::from_euler_angles(roll, pitch, yaw);
        assert_relative_eq!(roll_pitch_yaw(r.matrix()), Vector3::new(roll, pitch, yaw), epsilon = 1e-12);
    }

    #[test]
    fn standing_on_four_pins_is_static() {
        let p = params();
        let mut plant = SrbmPlant::new(SrbState::at_rest(Vector3::new(0.0, 0.0, 0.5)));
        let mut grfs = Vec::new();
        for id in ContactId::ALL {
            let x = id.foot_offset(&p);
            plant.pin(id, Vector3::new(x, id.side().sign() * 0.05, 0.0));
            grfs.push((id, Vector3::new(0.0, 0.0, p.mass * p.gravity / 4.0)));
        }
        for _ in 0..1000 {
            plant.step(&grfs, 1e-3, &p);
        }
        assert!((plant.state.p - Vector3::new(0.0, 0.0, 0.5)).amax() < 1e-12);
        assert_eq!(plant.violations, ContactViolations::default());
        assert!(detect_fall(&plant.state, &p).is_none());
    }
}
