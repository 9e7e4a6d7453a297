//! Fixed-step telelocomotion loop.
//!
//! Each tick reads a pilot sample, turns contact-flag changes into gait
//! events, advances the HWR, scales it to the robot, runs stance and swing
//! control, and integrates the plant. Pilot events are authoritative: the
//! robot's support domain switches in the same tick as the pilot's.

use std::io::Write;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::{
    blend, desired_wrench, stance_torques, ForceDistributor, PostureGains, QpProblem, QpWeights, StanceContact,
    TaskGains, TaskSpaceState,
};
use crate::hlip::{Domain, HlipParams};
use crate::hwr::{
    hwr_tick, GaitEvent, GaitEventKind, HwrError, HwrState, IntervalSmoother, Side, SwingTimingEstimator,
};
use crate::qp::QpStatus;
use crate::robot::{
    forward_kinematics, leg_ik, nominal_stance, ContactId, JointVector, LegJointState, RobotParams, TorsoPose,
};
use crate::srbm::{cop, detect_fall, roll_pitch_yaw, FallReason, SrbState, SrbmPlant, SupportDomain, Wrench};
use crate::swing::{step_joint_plant, swing_torques, SwingGains, SwingPlan};

pub const TELEMETRY_SCHEMA_VERSION: u32 = 1;

/// One pilot measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotSample {
    pub t: f64,
    pub com_x: f64,
    pub com_y: f64,
    pub left_foot: Vector3<f64>,
    pub right_foot: Vector3<f64>,
    pub contact_left: bool,
    pub contact_right: bool,
}

impl PilotSample {
    pub fn foot(&self, side: Side) -> Vector3<f64> {
        match side {
            Side::Left => self.left_foot,
            Side::Right => self.right_foot,
        }
    }

    pub fn contacts(&self) -> [bool; 2] {
        [self.contact_left, self.contact_right]
    }

    pub fn feet_width(&self) -> f64 {
        (self.left_foot.y - self.right_foot.y).abs()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PilotError {
    #[error("sample time {t} does not advance past {prev}")]
    NonMonotone { prev: f64, t: f64 },
    #[error("both feet off the ground at t = {0}; flight phases are not supported")]
    Flight(f64),
    #[error("non-finite value in sample at t = {0}")]
    NonFinite(f64),
}

pub fn validate_sample(sample: &PilotSample, prev: Option<&PilotSample>) -> Result<(), PilotError> {
    let values = [sample.t, sample.com_x, sample.com_y];
    if !values.iter().chain(sample.left_foot.iter()).chain(sample.right_foot.iter()).all(|v| v.is_finite()) {
        return Err(PilotError::NonFinite(sample.t));
    }
    if let Some(p) = prev {
        if !(sample.t > p.t) {
            return Err(PilotError::NonMonotone { prev: p.t, t: sample.t });
        }
    }
    if !sample.contact_left && !sample.contact_right {
        return Err(PilotError::Flight(sample.t));
    }
    Ok(())
}

/// Result of asking a pilot source for the sample at a control tick.
#[derive(Debug, Clone, PartialEq)]
pub enum PilotPoll {
    Sample(PilotSample),
    /// Nothing new arrived (live sources).
    Pending,
    End,
}

pub trait PilotSource {
    fn poll(&mut self, t: f64) -> PilotPoll;
}

/// Pilot standing still with feet `width` apart.
#[derive(Debug, Clone, Copy)]
pub struct StandingPilot {
    pub width: f64,
}

impl PilotSource for StandingPilot {
    fn poll(&mut self, t: f64) -> PilotPoll {
        PilotPoll::Sample(PilotSample {
            t,
            com_x: 0.0,
            com_y: 0.0,
            left_foot: Vector3::new(0.0, 0.5 * self.width, 0.0),
            right_foot: Vector3::new(0.0, -0.5 * self.width, 0.0),
            contact_left: true,
            contact_right: true,
        })
    }
}

/// Gait events implied by a change in contact flags. A direct swap of the
/// supporting foot yields touch-down followed by lift-off.
pub fn detect_events(prev: [bool; 2], now: [bool; 2], t: f64) -> Vec<GaitEvent> {
    let side = |i: usize| if i == 0 { Side::Left } else { Side::Right };
    let mut events = Vec::new();
    for i in 0..2 {
        if !prev[i] && now[i] {
            events.push(GaitEvent::touch_down(t, side(i)));
        }
    }
    for i in 0..2 {
        if prev[i] && !now[i] {
            events.push(GaitEvent::lift_off(t, side(i)));
        }
    }
    events
}

/// Lengths and velocities scale by `h_robot / h_human`; time is shared.
pub fn scale_human_to_robot(value: f64, h_human: f64, h_robot: f64) -> f64 {
    value * h_robot / h_human
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HapticCommand {
    pub force_x_to_human: f64,
    pub force_y_to_human: f64,
}

/// `K·(robot − reference)` per axis on normalized DCMs, hard-saturated.
pub fn haptic_feedback(
    dcm_ref_norm: Vector2<f64>,
    dcm_robot_norm: Vector2<f64>,
    gain: f64,
    bound: f64,
) -> HapticCommand {
    let sat = |v: f64| v.clamp(-bound, bound);
    let e = dcm_robot_norm - dcm_ref_norm;
    HapticCommand { force_x_to_human: sat(gain * e.x), force_y_to_human: sat(gain * e.y) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub dt: f64,
    pub h_human: f64,
    pub blend_duration: f64,
    pub weights: QpWeights,
    pub task_gains: TaskGains,
    /// Convergence gain of the lateral DCM in double support.
    pub lateral_dcm_gain: f64,
    pub posture_gains: PostureGains,
    pub swing_gains: SwingGains,
    pub swing_inertia: f64,
    pub fit_damping: f64,
    pub t_ssp_init: f64,
    pub t_dsp_init: f64,
    pub timing_smoothing: f64,
    /// Largest relative change of the SSP estimate per tick.
    pub estimator_rate_limit: f64,
    /// Largest change of the swing-foot target per tick [m].
    pub foot_target_rate_limit: f64,
    pub z_cl_default: f64,
    pub z_cl_min: f64,
    pub z_cl_max: f64,
    pub max_step_x: f64,
    pub min_step_width: f64,
    pub max_step_width: f64,
    /// Extra sagittal foot-placement feedback on robot DCM error.
    pub foot_x_dcm_gain: f64,
    pub haptic_gain: f64,
    pub haptic_bound: f64,
    /// Longest a live source may go silent before the episode aborts [s].
    pub hold_limit: f64,
    pub qp_max_iterations: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            h_human: 1.0,
            blend_duration: 0.04,
            weights: QpWeights::default(),
            task_gains: TaskGains::default(),
            lateral_dcm_gain: 2.0,
            posture_gains: PostureGains::default(),
            swing_gains: SwingGains::default(),
            swing_inertia: 1.0,
            fit_damping: crate::hwr::DEFAULT_DAMPING,
            t_ssp_init: 0.4,
            t_dsp_init: 0.1,
            timing_smoothing: 0.3,
            estimator_rate_limit: 0.05,
            foot_target_rate_limit: 0.02,
            z_cl_default: 0.04,
            z_cl_min: 0.02,
            z_cl_max: 0.08,
            max_step_x: 0.25,
            min_step_width: 0.06,
            max_step_width: 0.3,
            foot_x_dcm_gain: 0.0,
            haptic_gain: 200.0,
            haptic_bound: 20.0,
            hold_limit: 0.05,
            qp_max_iterations: 200,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("invalid loop configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Robot(#[from] crate::robot::RobotError),
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.h_human > 0.0) {
            return bad("human CoM height must be positive");
        }
        if !(self.blend_duration > 0.0 && self.swing_inertia > 0.0) {
            return bad("blend duration and swing inertia must be positive");
        }
        if !(self.weights.w1 > 0.0 && self.weights.w2 > 0.0) {
            return bad("QP weights must be positive");
        }
        if !(self.t_ssp_init > 0.0 && self.t_dsp_init >= 0.0) {
            return bad("initial timing must be positive");
        }
        if !(self.haptic_bound >= 0.0) {
            return bad("haptic bound must be non-negative");
        }
        if self.task_gains.validate().is_err() {
            return bad("task gains must be non-negative");
        }
        Ok(())
    }
}

/// Foot placement for the swing leg during single support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootTargetInputs {
    pub swing_side: Side,
    /// Robot stance ankle, world xy.
    pub stance_foot: Vector2<f64>,
    pub com: Vector2<f64>,
    pub com_vel: Vector2<f64>,
    pub lambda: f64,
    pub human_feet_width: f64,
    pub omega_robot: f64,
    pub t_ssp: f64,
    pub t_remaining: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FootTarget {
    pub xy: Vector2<f64>,
    pub clamped: bool,
}

/// x: place the foot so the CoM-to-foot offset after touch-down equals the
/// scaled HWR post-impact state. y: keep the lateral DCM on the inner side
/// of the new stance foot at the offset of a symmetric two-step orbit with
/// width `λ·w`.
pub fn update_foot_targets(hwr: &HwrState, inputs: &FootTargetInputs, cfg: &LoopConfig) -> FootTarget {
    let lam = inputs.lambda;
    let mut x = inputs.com.x + lam * (hwr.pending_step_length - hwr.current.x);
    if cfg.foot_x_dcm_gain != 0.0 {
        let w = inputs.omega_robot;
        let robot_dcm = (inputs.com.x - inputs.stance_foot.x) + inputs.com_vel.x / w;
        let ref_dcm = lam * (hwr.current.x + hwr.current.xdot / w);
        x += cfg.foot_x_dcm_gain * (robot_dcm - ref_dcm);
    }

    let w = inputs.omega_robot;
    let width = lam * inputs.human_feet_width;
    let dcm_y = inputs.com.y + inputs.com_vel.y / w;
    let ys = inputs.stance_foot.y;
    let dcm_td = ys + (dcm_y - ys) * (w * inputs.t_remaining.max(0.0)).exp();
    let sign = inputs.swing_side.sign();
    let y = dcm_td + sign * width / ((w * inputs.t_ssp).exp() + 1.0);

    let mut clamped = false;
    let dx = x - inputs.com.x;
    let x = if dx.abs() > cfg.max_step_x {
        clamped = true;
        inputs.com.x + dx.signum() * cfg.max_step_x
    } else {
        x
    };
    let lateral = sign * (y - ys);
    let lateral_c = lateral.clamp(cfg.min_step_width, cfg.max_step_width);
    if lateral_c != lateral {
        clamped = true;
    }
    FootTarget { xy: Vector2::new(x, ys + sign * lateral_c), clamped }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HwrTelemetry {
    pub x: f64,
    pub xdot: f64,
    pub domain: Domain,
    pub step_index: u64,
    pub pending_step_length: f64,
    pub t_ssp_est: f64,
    pub t_dsp: f64,
    pub x_h: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotTelemetry {
    pub p: [f64; 3],
    /// Ankle positions `[left, right]`.
    pub feet: [[f64; 3]; 2],
    pub pdot: [f64; 3],
    pub rpy: [f64; 3],
    pub omega_body: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpTelemetry {
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub schema: u32,
    pub t: f64,
    pub support: SupportDomain,
    pub hwr: HwrTelemetry,
    pub robot: RobotTelemetry,
    /// Normalized sagittal DCM, `[hwr, robot]`.
    pub dcm_norm: [f64; 2],
    pub cop: Option<[f64; 2]>,
    pub cop_norm: Option<[f64; 2]>,
    pub grfs: Vec<(ContactId, [f64; 3])>,
    pub qp: QpTelemetry,
    pub haptic: HapticCommand,
    pub foot_target: Option<[f64; 2]>,
    /// Sagittal CoM reference `[x, ẋ]`.
    pub com_ref: [f64; 2],
    pub events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Completed,
    SourceEnded,
    Fall { t: f64, reason: FallReason },
    Underrun { t: f64 },
    InvalidPilot { t: f64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: f64,
    pub p: [f64; 3],
    pub hwr_x: f64,
    pub hwr_xdot: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreImpact {
    pub t: f64,
    pub x: f64,
    pub xdot: f64,
    pub target_xdot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub verdict: Verdict,
    pub ticks: u64,
    pub duration: f64,
    pub distance_x: f64,
    pub min_x: f64,
    pub max_x: f64,
    pub mean_abs_dcm_error: f64,
    pub max_abs_dcm_error: f64,
    pub falls: u32,
    pub qp_failures: u64,
    pub qp_max_iter: u64,
    pub contact_violations: u64,
    pub steps: u64,
    pub resyncs: u64,
    pub underrun_ticks: u64,
    pub max_rotation_error: f64,
    pub max_haptic: f64,
    pub trace: Vec<TracePoint>,
    pub pre_impacts: Vec<PreImpact>,
}

impl EpisodeResult {
    /// Mean CoM x-velocity between two trace times.
    pub fn mean_velocity(&self, t0: f64, t1: f64) -> Option<f64> {
        let at = |t: f64| self.trace.iter().min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()));
        let (a, b) = (at(t0)?, at(t1)?);
        (b.t > a.t).then(|| (b.p[0] - a.p[0]) / (b.t - a.t))
    }
}

const TRACE_EVERY: u64 = 10;
/// Time constant of the pilot lateral-velocity filter [s].
const PILOT_VELOCITY_FILTER: f64 = 0.01;

struct SwingState {
    side: Side,
    plan: SwingPlan,
    target: Vector2<f64>,
}

/// Controller, reference generator and plant for one episode.
pub struct Telelocomotion {
    cfg: LoopConfig,
    robot: RobotParams,
    lambda: f64,
    pub hwr: HwrState,
    pub plant: SrbmPlant,
    legs: [LegJointState; 2],
    q_nominal: [JointVector; 2],
    robot_contact: [bool; 2],
    /// Stance foot in SSP, previous stance foot in DSP.
    ref_side: Side,
    pilot_prev: Option<PilotSample>,
    swing: Option<SwingState>,
    transition_time: [f64; 2],
    tau_old: [JointVector; 2],
    last_tau: [JointVector; 2],
    lift_off_time: Option<f64>,
    touch_down_time: Option<f64>,
    timing: SwingTimingEstimator,
    fit_swing_side: Option<Side>,
    ssp_smoother: IntervalSmoother,
    dsp_smoother: IntervalSmoother,
    step_period: IntervalSmoother,
    distributor: ForceDistributor,
    last_grfs: Vec<(ContactId, Vector3<f64>)>,
    last_x_h: f64,
    pilot_vy: f64,
    last_touchdown: Option<(Side, f64)>,
    stats: Stats,
}

#[derive(Default)]
struct Stats {
    ticks: u64,
    dcm_err_sum: f64,
    dcm_err_max: f64,
    qp_failures: u64,
    qp_max_iter: u64,
    resyncs: u64,
    steps: u64,
    max_rot_err: f64,
    max_haptic: f64,
    min_x: f64,
    max_x: f64,
    trace: Vec<TracePoint>,
    pre_impacts: Vec<PreImpact>,
}

/// Output of one control tick.
pub struct TickOutput {
    pub record: TelemetryRecord,
    pub fall: Option<FallReason>,
}

impl Telelocomotion {
    pub fn new(robot: RobotParams, cfg: LoopConfig) -> Result<Self, ConfigError> {
        robot.validate()?;
        cfg.validate()?;
        let h = robot.com_height_nominal;
        let q_nominal = [nominal_stance(&robot, Side::Left), nominal_stance(&robot, Side::Right)];
        let legs = [LegJointState::at_rest(q_nominal[0]), LegJointState::at_rest(q_nominal[1])];
        let mut plant = SrbmPlant::new(SrbState::at_rest(Vector3::new(0.0, 0.0, h)));
        let torso = TorsoPose::identity_at(plant.state.p);
        for side in [Side::Left, Side::Right] {
            let fk = forward_kinematics(&robot, &torso, &legs[side.index()], side);
            for id in ContactId::of_foot(side) {
                plant.pin(id, fk.contact(id));
            }
        }
        let lambda = scale_human_to_robot(1.0, cfg.h_human, h);
        let mg4 = robot.mass * robot.gravity / 4.0;
        Ok(Self {
            lambda,
            hwr: HwrState::standing(),
            plant,
            legs,
            q_nominal,
            robot_contact: [true, true],
            ref_side: Side::Left,
            pilot_prev: None,
            swing: None,
            transition_time: [f64::NEG_INFINITY; 2],
            tau_old: [JointVector::zeros(); 2],
            last_tau: [JointVector::zeros(); 2],
            lift_off_time: None,
            touch_down_time: None,
            timing: SwingTimingEstimator::new(cfg.fit_damping, cfg.estimator_rate_limit, cfg.t_ssp_init, 0.1),
            fit_swing_side: None,
            ssp_smoother: IntervalSmoother::new(cfg.timing_smoothing, cfg.t_ssp_init),
            dsp_smoother: IntervalSmoother::new(cfg.timing_smoothing, cfg.t_dsp_init),
            step_period: IntervalSmoother::new(cfg.timing_smoothing, cfg.t_ssp_init + cfg.t_dsp_init),
            distributor: ForceDistributor::new(cfg.qp_max_iterations),
            last_grfs: ContactId::ALL.iter().map(|id| (*id, Vector3::new(0.0, 0.0, mg4))).collect(),
            last_x_h: 0.0,
            pilot_vy: 0.0,
            last_touchdown: None,
            stats: Stats { min_x: 0.0, max_x: 0.0, ..Default::default() },
            cfg,
            robot,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn support(&self) -> SupportDomain {
        match self.robot_contact {
            [true, false] => SupportDomain::SspLeft,
            [false, true] => SupportDomain::SspRight,
            _ => SupportDomain::Dsp,
        }
    }

    pub fn t_ssp_estimate(&self) -> f64 {
        self.timing.estimate()
    }

    pub fn measured_step_period(&self) -> f64 {
        self.step_period.value()
    }

    fn omega_robot(&self) -> f64 {
        (self.robot.gravity / self.robot.com_height_nominal).sqrt()
    }

    fn omega_human(&self) -> f64 {
        (self.robot.gravity / self.cfg.h_human).sqrt()
    }

    fn torso(&self) -> TorsoPose {
        TorsoPose { position: self.plant.state.p, rotation: self.plant.state.rot_r }
    }

    fn ankle(&self, side: Side) -> Option<Vector3<f64>> {
        let [a, b] = ContactId::of_foot(side);
        Some(0.5 * (self.plant.pinned(a)? + self.plant.pinned(b)?))
    }

    fn foot_fk(&self, side: Side) -> crate::robot::FootKinematics {
        forward_kinematics(&self.robot, &self.torso(), &self.legs[side.index()], side)
    }

    fn pilot_ref_foot(&self, sample: &PilotSample) -> Vector3<f64> {
        sample.foot(self.ref_side)
    }

    /// Measured SSP/DSP durations and the start of a new swing fit.
    fn on_pilot_event(&mut self, ev: &GaitEvent, sample: &PilotSample) {
        match ev.kind {
            GaitEventKind::TouchDown => {
                if let Some(lo) = self.lift_off_time {
                    self.ssp_smoother.push_interval(ev.timestamp - lo);
                }
                self.step_period.mark(ev.timestamp);
                self.touch_down_time = Some(ev.timestamp);
                self.fit_swing_side = None;
                self.timing.clear();
            }
            GaitEventKind::LiftOff => {
                if let Some(td) = self.touch_down_time {
                    self.dsp_smoother.push_interval(ev.timestamp - td);
                }
                self.lift_off_time = Some(ev.timestamp);
                self.fit_swing_side = Some(ev.swing_side);
                self.timing.begin(self.ssp_smoother.value(), sample.foot(ev.swing_side).z);
            }
        }
    }

    fn update_timing_estimate(&mut self, sample: &PilotSample) {
        let (Some(side), Some(lo)) = (self.fit_swing_side, self.lift_off_time) else { return };
        self.timing.push(sample.t - lo, sample.foot(side).z);
    }

    fn hwr_params(&self) -> HlipParams {
        let t_ssp = self.timing.estimate().max(0.05);
        HlipParams::new(self.cfg.h_human, self.robot.gravity, t_ssp, self.dsp_smoother.value().max(0.0))
            .or_else(|_| {
                HlipParams::new(self.cfg.h_human, self.robot.gravity, self.cfg.t_ssp_init, self.cfg.t_dsp_init)
            })
            .expect("validated defaults")
    }

    fn robot_event(&mut self, ev: &GaitEvent, t: f64, events: &mut Vec<String>) {
        let s = ev.swing_side;
        let i = s.index();
        match ev.kind {
            GaitEventKind::LiftOff => {
                if !self.robot_contact[i] {
                    return;
                }
                if !self.robot_contact[s.other().index()] {
                    // Lifting the only support foot: land the swinging one first.
                    let other = GaitEvent::touch_down(t, s.other());
                    self.robot_event(&other, t, events);
                    events.push("robot_resync".into());
                }
                let start = self.foot_fk(s).ankle;
                for id in ContactId::of_foot(s) {
                    self.plant.release(id);
                }
                self.robot_contact[i] = false;
                self.ref_side = s.other();
                let z_cl = self.timing.z_cl().map_or(self.cfg.z_cl_default, |z| self.lambda * z);
                let z_cl = z_cl.clamp(self.cfg.z_cl_min, self.cfg.z_cl_max);
                let plan = SwingPlan::new(start, start.xy(), z_cl, self.timing.estimate(), t);
                self.swing = Some(SwingState { side: s, plan, target: start.xy() });
                self.transition_time[i] = t;
                self.tau_old[i] = self.last_tau[i];
                self.stats.steps += 1;
            }
            GaitEventKind::TouchDown => {
                if self.robot_contact[i] {
                    return;
                }
                let fk = self.foot_fk(s);
                for id in ContactId::of_foot(s) {
                    self.plant.pin(id, fk.contact(id));
                }
                self.robot_contact[i] = true;
                self.swing = None;
                self.last_touchdown = Some((s, t));
                self.transition_time[i] = t;
                self.tau_old[i] = self.last_tau[i];
            }
        }
    }

    /// Stance legs follow their pinned feet through IK; joint rates by
    /// finite differences.
    fn update_stance_legs(&mut self) {
        let torso = self.torso();
        for side in [Side::Left, Side::Right] {
            let i = side.index();
            if !self.robot_contact[i] {
                continue;
            }
            let Some(ankle) = self.ankle(side) else { continue };
            let sol = leg_ik(&self.robot, &torso.to_body(&ankle), side, &torso.rotation);
            let q_prev = self.legs[i].q;
            self.legs[i].qdot = (sol.joints - q_prev) / self.cfg.dt;
            self.legs[i].q = sol.joints;
        }
    }

    /// Lateral DCM target in double support. Right after a touch-down it is
    /// the two-step orbit point inside the new stance foot; otherwise the
    /// pilot's lateral DCM, length-scaled about the feet midline.
    fn lateral_dcm_target(&self, t: f64, sample: &PilotSample, w_h: f64, w_r: f64) -> f64 {
        let (Some(l), Some(r)) = (self.ankle(Side::Left), self.ankle(Side::Right)) else {
            return self.plant.state.p.y;
        };
        if let Some((side, t_td)) = self.last_touchdown {
            if t - t_td <= 1.5 * self.dsp_smoother.value() + self.cfg.dt {
                let stance_y = if side == Side::Left { l.y } else { r.y };
                let width = (l.y - r.y).abs();
                return stance_y - side.sign() * width / ((w_r * self.timing.estimate()).exp() + 1.0);
            }
        }
        let mid_r = 0.5 * (l.y + r.y);
        let mid_h = 0.5 * (sample.left_foot.y + sample.right_foot.y);
        mid_r + self.lambda * ((sample.com_y - mid_h) + self.pilot_vy / w_h)
    }

    /// Advances one control tick with the given pilot sample.
    pub fn tick(&mut self, sample: &PilotSample, extra_events: Vec<String>) -> Result<TickOutput, PilotError> {
        validate_sample(sample, self.pilot_prev.as_ref())?;
        let t = sample.t;
        let dt = self.cfg.dt;
        let mut events = extra_events;

        if let Some(p) = self.pilot_prev {
            let raw = (sample.com_y - p.com_y) / (sample.t - p.t);
            let a = dt / (PILOT_VELOCITY_FILTER + dt);
            self.pilot_vy += a * (raw - self.pilot_vy);
        }
        let prev_contacts = self.pilot_prev.map_or([true, true], |p| p.contacts());
        let gait_events = detect_events(prev_contacts, sample.contacts(), t);
        for ev in &gait_events {
            self.on_pilot_event(ev, sample);
        }
        if sample.contact_left != sample.contact_right {
            self.update_timing_estimate(sample);
        }

        // Reference: flow to t, then apply this tick's resets.
        let params = self.hwr_params();
        let x_h = sample.com_x - self.pilot_ref_foot(sample).x;
        if let Err(e) = hwr_tick(&mut self.hwr, None, x_h, params.t_ssp(), dt, &params) {
            log::warn!("hwr flow: {e}");
        }
        for ev in &gait_events {
            events.push(format!("{:?}:{:?}", ev.kind, ev.swing_side).to_lowercase());
            match hwr_tick(&mut self.hwr, Some(ev), x_h, params.t_ssp(), dt, &params) {
                Ok(()) => {}
                Err(HwrError::Resynchronized { .. }) => {
                    self.stats.resyncs += 1;
                    events.push("hwr_resync".into());
                }
                Err(e) => log::warn!("hwr event: {e}"),
            }
            if ev.kind == GaitEventKind::TouchDown {
                let pre = self.hwr.pre_impact;
                self.stats.pre_impacts.push(PreImpact {
                    t,
                    x: pre.x,
                    xdot: pre.xdot,
                    target_xdot: self.hwr.target.map(|o| o.xdot_pre),
                });
            }
            self.robot_event(ev, t, &mut events);
        }
        // x_h is relative to the pilot's reference foot, which may have just changed.
        let x_h = sample.com_x - self.pilot_ref_foot(sample).x;
        self.last_x_h = x_h;

        self.update_stance_legs();
        let state = self.plant.state;
        let torso = self.torso();
        let lam = self.lambda;
        let ref_ankle = self.ankle(self.ref_side).unwrap_or(state.p);
        let support = self.support();
        let in_ssp = support != SupportDomain::Dsp;

        // Desired task-space motion: the length-scaled HWR about the robot's
        // reference foot, with the H-LIP acceleration as feedforward.
        let hwr_now = self.hwr.current;
        let w_h = self.omega_human();
        let w_r = self.omega_robot();
        let x_des = ref_ankle.x + lam * hwr_now.x;
        let xdot_des = lam * hwr_now.xdot;
        let mut ff = Wrench::default();
        let mut gains = self.cfg.task_gains;
        // Lateral: the line feet give no sideways CoP authority in single
        // support, so y is steered through the CoP the force must imply.
        if in_ssp {
            ff.force.x = self.robot.mass * lam * w_h * w_h * hwr_now.x;
        }
        let xi_y = state.p.y + state.pdot.y / w_r;
        let cop_y = if in_ssp {
            ref_ankle.y
        } else {
            xi_y + self.cfg.lateral_dcm_gain * (xi_y - self.lateral_dcm_target(t, sample, w_h, w_r))
        };
        ff.force.y = self.robot.mass * w_r * w_r * (state.p.y - cop_y);
        gains.kp[1] = 0.0;
        gains.kd[1] = 0.0;
        let (y_des, ydot_des) = (state.p.y, state.pdot.y);
        let current = TaskSpaceState::from_body(state.p, state.pdot, &state.rot_r, &state.omega_body);
        let desired = TaskSpaceState {
            q_s: nalgebra::Vector6::new(x_des, y_des, self.robot.com_height_nominal, 0.0, 0.0, 0.0),
            qdot_s: nalgebra::Vector6::new(xdot_des, ydot_des, 0.0, 0.0, 0.0, 0.0),
        };
        let wrench = match &current {
            Ok(cur) => desired_wrench(cur, &desired, &gains, &ff, &self.robot).unwrap_or_default(),
            Err(e) => {
                log::warn!("{e}");
                Wrench { force: Vector3::new(0.0, 0.0, self.robot.mass * self.robot.gravity), torque: Vector3::zeros() }
            }
        };

        // Force distribution over pinned contacts.
        let contacts: Vec<StanceContact> = ContactId::ALL
            .iter()
            .filter_map(|id| {
                let pos = self.plant.pinned(*id)?;
                let f0 = self.last_grfs.iter().find(|(c, _)| c == id).map_or(Vector3::zeros(), |(_, f)| *f);
                Some(StanceContact { id: *id, r: pos - state.p, f0 })
            })
            .collect();
        let problem = QpProblem::new(self.cfg.weights, wrench, contacts, &state.rot_r, &self.legs, &self.robot);
        let sol = self.distributor.solve(&problem, &self.robot);
        match sol.status {
            QpStatus::Infeasible => {
                self.stats.qp_failures += 1;
                events.push("qp_infeasible".into());
            }
            QpStatus::MaxIter => {
                self.stats.qp_max_iter += 1;
                events.push("qp_max_iter".into());
            }
            QpStatus::Optimal => {}
        }
        self.last_grfs = sol.grfs.clone();

        // Joint torques: stance law on every leg, swing PD on the airborne one.
        let mut foot_target = None;
        for side in [Side::Left, Side::Right] {
            let i = side.index();
            let stance_tau = stance_torques(
                &sol.grfs,
                &self.legs[i],
                side,
                &state.rot_r,
                &self.cfg.posture_gains,
                &self.q_nominal[i],
                &self.robot,
            );
            let since = t - self.transition_time[i];
            let tau = if self.robot_contact[i] {
                blend(&self.tau_old[i], &stance_tau, since, self.cfg.blend_duration)
            } else {
                stance_tau
            };
            self.last_tau[i] = tau;
        }
        if let Some(mut sw) = self.swing.take() {
            let i = sw.side.index();
            let elapsed = t - sw.plan.start_time;
            let inputs = FootTargetInputs {
                swing_side: sw.side,
                stance_foot: ref_ankle.xy(),
                com: state.p.xy(),
                com_vel: state.pdot.xy(),
                lambda: lam,
                human_feet_width: sample.feet_width(),
                omega_robot: w_r,
                t_ssp: self.timing.estimate(),
                t_remaining: self.timing.estimate() - elapsed,
            };
            let target = update_foot_targets(&self.hwr, &inputs, &self.cfg);
            if target.clamped {
                events.push("foot_target_clamped".into());
            }
            let first = elapsed <= dt * 0.5;
            let step = target.xy - sw.target;
            let lim = self.cfg.foot_target_rate_limit;
            sw.target = if first || step.norm() <= lim { target.xy } else { sw.target + step * (lim / step.norm()) };
            sw.plan.p_f = sw.target;
            sw.plan.t_ssp_est = self.timing.estimate();
            foot_target = Some([sw.target.x, sw.target.y]);

            let cmd = swing_torques(
                &sw.plan,
                t,
                &torso,
                &state.pdot,
                &self.legs[i],
                sw.side,
                &self.cfg.swing_gains,
                dt,
                &self.robot,
            );
            if cmd.saturated {
                events.push("swing_ik_saturated".into());
            }
            let tau = blend(&self.last_tau[i], &cmd.tau, elapsed, self.cfg.blend_duration);
            self.last_tau[i] = tau;
            step_joint_plant(&mut self.legs[i], &tau, self.cfg.swing_inertia, dt, &self.robot);
            self.swing = Some(sw);
        }

        // Plant.
        let applied: Vec<_> = sol.grfs.iter().filter(|(id, _)| self.plant.pinned(*id).is_some()).copied().collect();
        let violations_before = self.plant.violations;
        self.plant.step(&applied, dt, &self.robot);
        if self.plant.violations != violations_before {
            events.push("contact_violation".into());
        }
        let after = self.plant.state;
        let fall = detect_fall(&after, &self.robot);
        if fall.is_some() {
            events.push("fall".into());
        }

        // Normalized DCMs and haptics.
        let xi_ref = Vector2::new((hwr_now.x + hwr_now.xdot / w_h) / self.cfg.h_human, {
            let pilot_ref = self.pilot_ref_foot(sample);
            ((sample.com_y - pilot_ref.y) + self.pilot_vy / w_h) / self.cfg.h_human
        });
        let h_r = self.robot.com_height_nominal;
        let xi_robot = Vector2::new(
            ((after.p.x - ref_ankle.x) + after.pdot.x / w_h) / h_r,
            ((after.p.y - ref_ankle.y) + after.pdot.y / w_h) / h_r,
        );
        let haptic = haptic_feedback(xi_ref, xi_robot, self.cfg.haptic_gain, self.cfg.haptic_bound);
        let dcm_err = (xi_robot.x - xi_ref.x).abs();

        let loaded: Vec<_> = applied.iter().filter_map(|(id, f)| Some((self.plant.pinned(*id)?, *f))).collect();
        let cop_xy = match cop(&loaded) {
            Ok(c) => Some(c),
            Err(_) => {
                events.push("cop_undefined".into());
                None
            }
        };

        self.stats.ticks += 1;
        self.stats.dcm_err_sum += dcm_err;
        self.stats.dcm_err_max = self.stats.dcm_err_max.max(dcm_err);
        self.stats.max_rot_err = self.stats.max_rot_err.max(after.orthonormality_error());
        self.stats.max_haptic =
            self.stats.max_haptic.max(haptic.force_x_to_human.abs().max(haptic.force_y_to_human.abs()));
        self.stats.min_x = self.stats.min_x.min(after.p.x);
        self.stats.max_x = self.stats.max_x.max(after.p.x);
        if self.stats.ticks.is_multiple_of(TRACE_EVERY) {
            self.stats.trace.push(TracePoint {
                t,
                p: after.p.into(),
                hwr_x: self.hwr.current.x,
                hwr_xdot: self.hwr.current.xdot,
            });
        }

        let rpy = roll_pitch_yaw(&after.rot_r);
        let record = TelemetryRecord {
            schema: TELEMETRY_SCHEMA_VERSION,
            t,
            support: self.support(),
            hwr: HwrTelemetry {
                x: self.hwr.current.x,
                xdot: self.hwr.current.xdot,
                domain: self.hwr.domain(),
                step_index: self.hwr.step_index,
                pending_step_length: self.hwr.pending_step_length,
                t_ssp_est: self.timing.estimate(),
                t_dsp: params.t_dsp(),
                x_h,
            },
            robot: RobotTelemetry {
                p: after.p.into(),
                feet: [self.foot_fk(Side::Left).ankle.into(), self.foot_fk(Side::Right).ankle.into()],
                pdot: after.pdot.into(),
                rpy: rpy.into(),
                omega_body: after.omega_body.into(),
            },
            dcm_norm: [xi_ref.x, xi_robot.x],
            cop: cop_xy.map(|c| [c.x, c.y]),
            cop_norm: cop_xy.map(|c| [(c.x - ref_ankle.x) / h_r, (c.y - ref_ankle.y) / h_r]),
            grfs: applied.iter().map(|(id, f)| (*id, [f.x, f.y, f.z])).collect(),
            qp: QpTelemetry {
                status: sol.status,
                iterations: sol.iterations,
                kkt_residual: sol.kkt_residual,
                fallback: sol.fallback,
            },
            haptic,
            foot_target,
            com_ref: [x_des, xdot_des],
            events,
        };
        self.pilot_prev = Some(*sample);
        Ok(TickOutput { record, fall })
    }

    fn finish(&self, verdict: Verdict, start_x: f64) -> EpisodeResult {
        let s = &self.stats;
        EpisodeResult {
            falls: matches!(verdict, Verdict::Fall { .. }) as u32,
            verdict,
            ticks: s.ticks,
            duration: s.ticks as f64 * self.cfg.dt,
            distance_x: self.plant.state.p.x - start_x,
            min_x: s.min_x,
            max_x: s.max_x,
            mean_abs_dcm_error: if s.ticks > 0 { s.dcm_err_sum / s.ticks as f64 } else { 0.0 },
            max_abs_dcm_error: s.dcm_err_max,
            qp_failures: s.qp_failures,
            qp_max_iter: s.qp_max_iter,
            contact_violations: self.plant.violations.pull + self.plant.violations.friction,
            steps: s.steps,
            resyncs: s.resyncs,
            underrun_ticks: 0,
            max_rotation_error: s.max_rot_err,
            max_haptic: s.max_haptic,
            trace: s.trace.clone(),
            pre_impacts: s.pre_impacts.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("telemetry write failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("telemetry encoding failed: {0}")]
    Encode(#[from] serde_json::Error),
}

/// Runs a fixed-step episode until `duration`, a fall, an underrun or the
/// end of the pilot stream. Telemetry goes to `sink` as JSON lines.
pub fn run_episode(
    robot: &RobotParams,
    cfg: &LoopConfig,
    source: &mut dyn PilotSource,
    duration: f64,
    mut sink: Option<&mut dyn Write>,
) -> Result<EpisodeResult, EpisodeError> {
    let result = run_episode_with(robot, cfg, source, duration, &mut |rec| {
        if let Some(w) = sink.as_deref_mut() {
            serde_json::to_writer(&mut *w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    if let Some(w) = sink {
        w.flush()?;
    }
    Ok(result)
}

/// As [`run_episode`], handing each tick's record to `on_record`.
pub fn run_episode_with(
    robot: &RobotParams,
    cfg: &LoopConfig,
    source: &mut dyn PilotSource,
    duration: f64,
    on_record: &mut dyn FnMut(&TelemetryRecord) -> Result<(), EpisodeError>,
) -> Result<EpisodeResult, EpisodeError> {
    let mut sim = Telelocomotion::new(robot.clone(), *cfg)?;
    let start_x = sim.plant.state.p.x;
    let ticks = (duration / cfg.dt).round() as u64;
    let mut last: Option<f64> = None;
    let mut held: Option<PilotSample> = None;
    let mut underruns = 0;
    let mut verdict = Verdict::Completed;
    for k in 1..=ticks {
        let t = k as f64 * cfg.dt;
        let mut extra = Vec::new();
        let sample = match source.poll(t) {
            PilotPoll::Sample(s) => {
                last = Some(t);
                held = Some(s);
                PilotSample { t, ..s }
            }
            PilotPoll::Pending => match (held, last) {
                (Some(s), Some(since)) if t - since <= cfg.hold_limit + 1e-9 => {
                    underruns += 1;
                    extra.push("underrun_hold".into());
                    PilotSample { t, ..s }
                }
                _ => {
                    verdict = Verdict::Underrun { t };
                    break;
                }
            },
            PilotPoll::End => {
                verdict = Verdict::SourceEnded;
                break;
            }
        };
        let out = match sim.tick(&sample, extra) {
            Ok(o) => o,
            Err(e) => {
                verdict = Verdict::InvalidPilot { t, message: e.to_string() };
                break;
            }
        };
        on_record(&out.record)?;
        if let Some(reason) = out.fall {
            verdict = Verdict::Fall { t, reason };
            break;
        }
    }
    let mut result = sim.finish(verdict, start_x);
    result.underrun_ticks = underruns;
    Ok(result)
}
