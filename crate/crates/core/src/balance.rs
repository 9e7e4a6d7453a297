//! Stance control: task-space PD wrench, actuation-aware force distribution,
//! stance joint torques and the sigmoid stance/swing blend.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::{ActiveSetSolver, DenseQp, KktResiduals, QpStatus};
use crate::robot::{contact_jacobian, motor_torque_limits, ContactId, JointVector, LegJointState, RobotParams};
use crate::srbm::{roll_pitch_yaw, Wrench};

/// Pitch magnitude beyond which the Z-Y-X extraction is refused.
pub const GIMBAL_MARGIN: f64 = 1e-3;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum BalanceError {
    #[error("euler extraction near gimbal lock (pitch {0})")]
    GimbalLock(f64),
    #[error("gain matrices must be diagonal and non-negative")]
    InvalidGains,
}

/// `q_s = [p, Θ]`, `q̇_s = [ṗ, Θ̇]` with Θ = (roll, pitch, yaw), Z-Y-X.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpaceState {
    pub q_s: Vector6<f64>,
    pub qdot_s: Vector6<f64>,
}

pub fn euler_zyx(r: &Matrix3<f64>) -> Result<Vector3<f64>, BalanceError> {
    let rpy = roll_pitch_yaw(r);
    if rpy.y.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN {
        return Err(BalanceError::GimbalLock(rpy.y));
    }
    Ok(rpy)
}

/// Euler-angle rates from a world-frame angular velocity.
pub fn euler_rates(theta: &Vector3<f64>, omega_world: &Vector3<f64>) -> Vector3<f64> {
    let (sp, cp) = theta.y.sin_cos();
    let (sy, cy) = theta.z.sin_cos();
    // ω = E(Θ)·Θ̇ with Θ̇ = (roll, pitch, yaw) rates
    let e = Matrix3::new(cy * cp, -sy, 0.0, sy * cp, cy, 0.0, -sp, 0.0, 1.0);
    e.lu().solve(omega_world).unwrap_or_else(Vector3::zeros)
}

impl TaskSpaceState {
    pub fn from_body(
        p: Vector3<f64>,
        pdot: Vector3<f64>,
        rot: &Matrix3<f64>,
        omega_body: &Vector3<f64>,
    ) -> Result<Self, BalanceError> {
        let theta = euler_zyx(rot)?;
        let rates = euler_rates(&theta, &(rot * omega_body));
        Ok(Self {
            q_s: Vector6::new(p.x, p.y, p.z, theta.x, theta.y, theta.z),
            qdot_s: Vector6::new(pdot.x, pdot.y, pdot.z, rates.x, rates.y, rates.z),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskGains {
    pub kp: [f64; 6],
    pub kd: [f64; 6],
}

impl Default for TaskGains {
    fn default() -> Self {
        Self { kp: [600.0, 600.0, 1500.0, 300.0, 300.0, 60.0], kd: [120.0, 120.0, 200.0, 30.0, 30.0, 8.0] }
    }
}

impl TaskGains {
    pub fn kp_matrix(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::from_column_slice(&self.kp))
    }

    pub fn kd_matrix(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::from_column_slice(&self.kd))
    }

    pub fn validate(&self) -> Result<(), BalanceError> {
        if self.kp.iter().chain(self.kd.iter()).all(|k| *k >= 0.0 && k.is_finite()) {
            Ok(())
        } else {
            Err(BalanceError::InvalidGains)
        }
    }
}

/// PD wrench plus weight support and an optional feedforward wrench.
pub fn desired_wrench(
    current: &TaskSpaceState,
    desired: &TaskSpaceState,
    gains: &TaskGains,
    feedforward: &Wrench,
    params: &RobotParams,
) -> Result<Wrench, BalanceError> {
    gains.validate()?;
    let mut pose_err = desired.q_s - current.q_s;
    // shortest yaw difference
    pose_err[5] = (pose_err[5] + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    let w = gains.kp_matrix() * pose_err + gains.kd_matrix() * (desired.qdot_s - current.qdot_s);
    Ok(Wrench {
        force: Vector3::new(w[0], w[1], w[2] + params.mass * params.gravity) + feedforward.force,
        torque: Vector3::new(w[3], w[4], w[5]) + feedforward.torque,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpWeights {
    pub w1: f64,
    pub w2: f64,
}

impl Default for QpWeights {
    fn default() -> Self {
        Self { w1: 1.0, w2: 1e-3 }
    }
}

/// One active contact in a force-distribution problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StanceContact {
    pub id: ContactId,
    /// Contact point relative to the CoM, world frame.
    pub r: Vector3<f64>,
    /// Previous GRF (world frame), the regularization target.
    pub f0: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub weights: QpWeights,
    pub desired: Wrench,
    pub contacts: Vec<StanceContact>,
    pub mu: f64,
    /// Motor-torque rows: `motor_map · f ≤ τ_m` and `−motor_map · f ≤ τ_m`.
    pub motor_map: DMatrix<f64>,
    pub motor_bounds: DVector<f64>,
}

impl QpProblem {
    /// Builds the motor projection `J_MJᵀ J_JTᵀ R_BW` from the legs' joint
    /// states and the torso rotation.
    pub fn new(
        weights: QpWeights,
        desired: Wrench,
        contacts: Vec<StanceContact>,
        rot: &Matrix3<f64>,
        legs: &[LegJointState; 2],
        params: &RobotParams,
    ) -> Self {
        let n = contacts.len();
        let jmj_t = params.topology_jacobian().transpose();
        let mut sides: Vec<_> = contacts.iter().map(|c| c.id.side()).collect();
        sides.dedup();
        let mut motor_map = DMatrix::zeros(5 * sides.len(), 3 * n);
        let mut motor_bounds = DVector::zeros(5 * sides.len());
        for (k, side) in sides.iter().enumerate() {
            let leg = &legs[side.index()];
            motor_bounds.rows_mut(5 * k, 5).copy_from(&motor_torque_limits(params, leg));
            for (i, c) in contacts.iter().enumerate().filter(|(_, c)| c.id.side() == *side) {
                let block = jmj_t * contact_jacobian(params, leg, c.id).transpose() * rot.transpose();
                motor_map.view_mut((5 * k, 3 * i), (5, 3)).copy_from(&block);
            }
        }
        Self { weights, desired, contacts, mu: params.friction_mu, motor_map, motor_bounds }
    }

    pub fn dim(&self) -> usize {
        3 * self.contacts.len()
    }

    /// `G` with `[F; τ] = G f`.
    pub fn wrench_map(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(6, self.dim());
        for (i, c) in self.contacts.iter().enumerate() {
            g.view_mut((0, 3 * i), (3, 3)).copy_from(&Matrix3::identity());
            g.view_mut((3, 3 * i), (3, 3)).copy_from(&c.r.cross_matrix());
        }
        g
    }

    pub fn f0(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.contacts.iter().flat_map(|c| c.f0.iter().copied()))
    }

    /// Standard form `½xᵀHx + gᵀx`, `Ax ≤ b` of
    /// `w₁‖Gf − F_d‖² + w₂‖f − f₀‖²` with the motor, friction and no-pull rows.
    pub fn to_dense(&self) -> DenseQp {
        let n = self.dim();
        let g_map = self.wrench_map();
        let fd = DVector::from_column_slice(&self.desired.as_array());
        let QpWeights { w1, w2 } = self.weights;
        let h = 2.0 * (w1 * g_map.transpose() * &g_map + w2 * DMatrix::identity(n, n));
        let g = -2.0 * (w1 * g_map.transpose() * fd + w2 * self.f0());

        let motor_rows = self.motor_map.nrows();
        let rows = 2 * motor_rows + 5 * self.contacts.len();
        let mut a = DMatrix::zeros(rows, n);
        let mut b = DVector::zeros(rows);
        a.view_mut((0, 0), (motor_rows, n)).copy_from(&self.motor_map);
        a.view_mut((motor_rows, 0), (motor_rows, n)).copy_from(&(-&self.motor_map));
        b.rows_mut(0, motor_rows).copy_from(&self.motor_bounds);
        b.rows_mut(motor_rows, motor_rows).copy_from(&self.motor_bounds);
        let mut r = 2 * motor_rows;
        for i in 0..self.contacts.len() {
            let (x, y, z) = (3 * i, 3 * i + 1, 3 * i + 2);
            for (col, sign) in [(x, 1.0), (x, -1.0), (y, 1.0), (y, -1.0)] {
                a[(r, col)] = sign;
                a[(r, z)] = -self.mu;
                r += 1;
            }
            a[(r, z)] = -1.0;
            r += 1;
        }
        DenseQp { h, g, a, b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpSolution {
    /// World-frame GRF per contact, in problem order.
    pub grfs: Vec<(ContactId, Vector3<f64>)>,
    pub kkt_residual: f64,
    pub kkt: KktResiduals,
    pub active_constraints: Vec<usize>,
    pub status: QpStatus,
    pub iterations: usize,
    /// The vertical-only fallback was used.
    pub fallback: bool,
}

impl QpSolution {
    pub fn force_vector(&self) -> DVector<f64> {
        DVector::from_iterator(3 * self.grfs.len(), self.grfs.iter().flat_map(|(_, f)| f.iter().copied()))
    }
}

/// Warm-started force-distribution solver owned by one control loop.
#[derive(Debug, Clone, Default)]
pub struct ForceDistributor {
    solver: ActiveSetSolver,
    last_ids: Vec<ContactId>,
}

impl ForceDistributor {
    pub fn new(max_iterations: usize) -> Self {
        Self { solver: ActiveSetSolver::new(max_iterations), last_ids: Vec::new() }
    }

    pub fn solve(&mut self, problem: &QpProblem, params: &RobotParams) -> QpSolution {
        let ids: Vec<_> = problem.contacts.iter().map(|c| c.id).collect();
        if ids != self.last_ids {
            self.solver.reset_warm_start();
            self.last_ids = ids.clone();
        }
        solve_with(&mut self.solver, problem, params)
    }
}

/// One-shot solve without warm start.
pub fn solve_force_distribution(problem: &QpProblem, params: &RobotParams) -> QpSolution {
    solve_with(&mut ActiveSetSolver::default(), problem, params)
}

fn solve_with(solver: &mut ActiveSetSolver, problem: &QpProblem, params: &RobotParams) -> QpSolution {
    let ids: Vec<_> = problem.contacts.iter().map(|c| c.id).collect();
    if ids.is_empty() {
        return QpSolution {
            grfs: Vec::new(),
            kkt_residual: 0.0,
            kkt: KktResiduals::default(),
            active_constraints: Vec::new(),
            status: QpStatus::Infeasible,
            iterations: 0,
            fallback: true,
        };
    }
    let dense = problem.to_dense();
    let f0 = problem.f0();
    let result = solver.solve(&dense, Some(&f0));
    if result.status == QpStatus::Infeasible {
        log::warn!("force distribution infeasible; using vertical fallback");
        let share = params.mass * params.gravity / ids.len() as f64;
        return QpSolution {
            grfs: ids.iter().map(|id| (*id, Vector3::new(0.0, 0.0, share))).collect(),
            kkt_residual: f64::NAN,
            kkt: result.kkt,
            active_constraints: Vec::new(),
            status: QpStatus::Infeasible,
            iterations: result.iterations,
            fallback: true,
        };
    }
    if result.status == QpStatus::MaxIter {
        log::warn!("force distribution hit the iteration cap");
    }
    QpSolution {
        grfs: ids
            .iter()
            .enumerate()
            .map(|(i, id)| (*id, Vector3::new(result.x[3 * i], result.x[3 * i + 1], result.x[3 * i + 2])))
            .collect(),
        kkt_residual: result.kkt.max(),
        kkt: result.kkt,
        active_constraints: result.active,
        status: result.status,
        iterations: result.iterations,
        fallback: false,
    }
}

/// Joint-space posture PD on hip yaw and ankle pitch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostureGains {
    pub kp: [f64; 5],
    pub kd: [f64; 5],
}

impl Default for PostureGains {
    fn default() -> Self {
        Self { kp: [20.0, 0.0, 0.0, 0.0, 10.0], kd: [1.0, 0.0, 0.0, 0.0, 0.5] }
    }
}

/// `τ = Σ Jᵢᵀ Rᵀ fᵢ + τ_po` for the contacts in `grfs` that belong to this leg.
pub fn stance_torques(
    grfs: &[(ContactId, Vector3<f64>)],
    leg: &LegJointState,
    side: crate::hwr::Side,
    rot: &Matrix3<f64>,
    posture: &PostureGains,
    q_nominal: &JointVector,
    params: &RobotParams,
) -> JointVector {
    let mut tau = JointVector::zeros();
    for (id, f) in grfs.iter().filter(|(id, _)| id.side() == side) {
        tau += contact_jacobian(params, leg, *id).transpose() * (rot.transpose() * f);
    }
    for j in 0..5 {
        tau[j] += posture.kp[j] * (q_nominal[j] - leg.q[j]) - posture.kd[j] * leg.qdot[j];
    }
    tau
}

/// Logistic weight on the new torque, `σ(0) < 0.01`, `σ(T) > 0.99`.
pub fn blend_weight(t: f64, duration: f64) -> f64 {
    let k = 2.0 * 100f64.ln() / duration;
    1.0 / (1.0 + (-k * (t - 0.5 * duration)).exp())
}

pub fn blend(tau_old: &JointVector, tau_new: &JointVector, t: f64, duration: f64) -> JointVector {
    let s = blend_weight(t, duration);
    tau_new * s + tau_old * (1.0 - s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwr::Side;
    use crate::robot::nominal_stance;
    use approx::assert_relative_eq;

    fn p() -> RobotParams {
        RobotParams::default()
    }

    fn at(pos: Vector3<f64>) -> TaskSpaceState {
        TaskSpaceState { q_s: Vector6::new(pos.x, pos.y, pos.z, 0.0, 0.0, 0.0), qdot_s: Vector6::zeros() }
    }

    fn standing_legs(params: &RobotParams) -> [LegJointState; 2] {
        [
            LegJointState::at_rest(nominal_stance(params, Side::Left)),
            LegJointState::at_rest(nominal_stance(params, Side::Right)),
        ]
    }

    fn four_contacts(params: &RobotParams, f0: Vector3<f64>) -> Vec<StanceContact> {
        ContactId::ALL
            .iter()
            .map(|id| StanceContact {
                id: *id,
                r: Vector3::new(
                    id.foot_offset(params),
                    id.side().sign() * params.hip_offset_y,
                    -params.com_height_nominal,
                ),
                f0,
            })
            .collect()
    }

    #[test]
    fn zero_error_gives_weight_support() {
        let params = p();
        let s = at(Vector3::new(0.0, 0.0, 0.5));
        let w = desired_wrench(&s, &s, &TaskGains::default(), &Wrench::default(), &params).unwrap();
        assert_eq!(w.force, Vector3::new(0.0, 0.0, params.mass * params.gravity));
        assert_eq!(w.torque, Vector3::zeros());
        let low = at(Vector3::new(0.0, 0.0, 0.49));
        let w = desired_wrench(&low, &s, &TaskGains::default(), &Wrench::default(), &params).unwrap();
        assert_relative_eq!(w.force.z, params.mass * params.gravity + 1500.0 * 0.01, epsilon = 1e-9);
    }

    #[test]
    fn gimbal_lock_is_an_error() {
        let r = *nalgebra::Rotation3::from_euler_angles(0.0, std::f64::consts::FRAC_PI_2, 0.0).matrix();
        assert!(matches!(euler_zyx(&r), Err(BalanceError::GimbalLock(_))));
        let mut bad = TaskGains::default();
        bad.kp[0] = -1.0;
        let s = at(Vector3::zeros());
        assert!(desired_wrench(&s, &s, &bad, &Wrench::default(), &p()).is_err());
    }

    #[test]
    fn euler_rates_match_numeric_derivative() {
        let theta = Vector3::new(0.1, -0.2, 0.4);
        let rates = Vector3::new(0.3, -0.5, 0.7);
        let h = 1e-6;
        let rot = |t: Vector3<f64>| *nalgebra::Rotation3::from_euler_angles(t.x, t.y, t.z).matrix();
        let rdot = (rot(theta + rates * h) - rot(theta - rates * h)) / (2.0 * h);
        let skew = rdot * rot(theta).transpose();
        let omega = Vector3::new(skew[(2, 1)], skew[(0, 2)], skew[(1, 0)]);
        assert_relative_eq!(euler_rates(&theta, &omega), rates, epsilon = 1e-8);
    }

    #[test]
    fn symmetric_standing_keeps_f0() {
        let params = p();
        let mg = params.mass * params.gravity;
        let f0 = Vector3::new(0.0, 0.0, mg / 4.0);
        let prob = QpProblem::new(
            QpWeights::default(),
            Wrench { force: Vector3::new(0.0, 0.0, mg), torque: Vector3::zeros() },
            four_contacts(&params, f0),
            &Matrix3::identity(),
            &standing_legs(&params),
            &params,
        );
        let sol = solve_force_distribution(&prob, &params);
        assert_eq!(sol.status, QpStatus::Optimal);
        for (_, f) in &sol.grfs {
            assert_relative_eq!(*f, f0, epsilon = 1e-9);
        }
    }

    #[test]
    fn excessive_tangential_demand_clamps_to_friction() {
        let params = p();
        let mg = params.mass * params.gravity;
        let prob = QpProblem::new(
            QpWeights::default(),
            Wrench { force: Vector3::new(2.0 * mg, 0.0, mg), torque: Vector3::zeros() },
            four_contacts(&params, Vector3::zeros()),
            &Matrix3::identity(),
            &standing_legs(&params),
            &params,
        );
        let sol = solve_force_distribution(&prob, &params);
        assert_eq!(sol.status, QpStatus::Optimal);
        for (_, f) in &sol.grfs {
            assert!(f.x <= params.friction_mu * f.z + 1e-9);
        }
        let total: Vector3<f64> = sol.grfs.iter().map(|(_, f)| f).sum();
        assert!(total.x < 2.0 * mg);
        assert!(!sol.active_constraints.is_empty());
    }

    #[test]
    fn single_contact_exact_vertical() {
        let params = p();
        let legs = standing_legs(&params);
        let contact = StanceContact { id: ContactId::LeftToe, r: Vector3::new(0.0, 0.0, -0.5), f0: Vector3::zeros() };
        let prob = QpProblem::new(
            QpWeights { w1: 1.0, w2: 1e-12 },
            Wrench { force: Vector3::new(0.0, 0.0, 100.0), torque: Vector3::zeros() },
            vec![contact],
            &Matrix3::identity(),
            &legs,
            &params,
        );
        let sol = solve_force_distribution(&prob, &params);
        assert_relative_eq!(sol.grfs[0].1, Vector3::new(0.0, 0.0, 100.0), epsilon = 1e-8);
    }

    #[test]
    fn stance_torque_cases() {
        let params = p();
        let leg = LegJointState::default();
        let q0 = JointVector::zeros();
        let gains = PostureGains::default();
        let zero = stance_torques(&[], &leg, Side::Left, &Matrix3::identity(), &gains, &q0, &params);
        assert_eq!(zero, JointVector::zeros());
        let f = Vector3::new(0.0, 0.0, 80.0);
        let tau =
            stance_torques(&[(ContactId::LeftToe, f)], &leg, Side::Left, &Matrix3::identity(), &gains, &q0, &params);
        assert_relative_eq!(tau, contact_jacobian(&params, &leg, ContactId::LeftToe).transpose() * f, epsilon = 1e-12);
        let mut off = leg;
        off.q[crate::robot::HIP_YAW] = 0.1;
        off.q[crate::robot::KNEE] = 0.3;
        let tau = stance_torques(&[], &off, Side::Left, &Matrix3::identity(), &gains, &q0, &params);
        assert_relative_eq!(tau[0], -2.0, epsilon = 1e-12);
        assert_eq!(tau[3], 0.0);
    }

    #[test]
    fn blend_endpoints_and_equal_inputs() {
        let a = JointVector::repeat(10.0);
        let b = JointVector::repeat(-10.0);
        assert!(blend_weight(0.0, 0.05) <= 0.01);
        assert!(blend_weight(0.05, 0.05) >= 0.99);
        assert_relative_eq!(blend_weight(0.025, 0.05), 0.5, epsilon = 1e-15);
        assert!((blend(&a, &b, 0.0, 0.05) - a).amax() <= 0.2);
        assert!((blend(&a, &b, 0.05, 0.05) - b).amax() <= 0.2);
        for i in 0..=50 {
            assert_relative_eq!(blend(&a, &a, i as f64 * 1e-3, 0.05), a, epsilon = 1e-12);
        }
    }
}
