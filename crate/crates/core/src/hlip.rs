//! Hybrid linear inverted pendulum (H-LIP).
//!
//! Sagittal-plane model with two domains: single support (`Ssp`), where the
//! CoM obeys `ẍ = ω²x` about the stance foot, and double support (`Dsp`),
//! where it drifts at constant velocity. Domain changes happen only through
//! the reset maps [`reset_s2d`] and [`reset_d2s`]; the step length `ℓ` enters
//! the dynamics exclusively at the DSP→SSP reset.
//!
//! On top of the continuous model this module provides the step-to-step
//! (S2S) linear map between consecutive pre-impact states, the mapping from a
//! pilot's CoM offset and stepping period to a period-one (P1) orbit, and the
//! two-step deadbeat step-length law.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible argument of `coth` before a gait is rejected.
pub const COTH_ARG_MIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HlipError {
    #[error("operation expects domain {expected:?} but state is in {found:?}")]
    DomainMismatch { expected: Domain, found: Domain },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, HlipError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    /// Single support phase.
    Ssp,
    /// Double support phase.
    Dsp,
}

/// CoM position and velocity, `(x, ẋ)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: f64,
    pub xdot: f64,
}

impl PhasePoint {
    pub const ORIGIN: PhasePoint = PhasePoint { x: 0.0, xdot: 0.0 };

    pub fn new(x: f64, xdot: f64) -> Self {
        Self { x, xdot }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.xdot)
    }

    pub fn from_vector(v: Vector2<f64>) -> Self {
        Self { x: v[0], xdot: v[1] }
    }
}

/// Pendulum constants. `ω` is always derived from `g` and `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HlipParamsRaw", into = "HlipParamsRaw")]
pub struct HlipParams {
    com_height: f64,
    gravity: f64,
    omega: f64,
    t_ssp: f64,
    t_dsp: f64,
}

#[derive(Serialize, Deserialize)]
struct HlipParamsRaw {
    com_height: f64,
    gravity: f64,
    t_ssp: f64,
    t_dsp: f64,
}

impl TryFrom<HlipParamsRaw> for HlipParams {
    type Error = HlipError;
    fn try_from(r: HlipParamsRaw) -> Result<Self> {
        HlipParams::new(r.com_height, r.gravity, r.t_ssp, r.t_dsp)
    }
}

impl From<HlipParams> for HlipParamsRaw {
    fn from(p: HlipParams) -> Self {
        Self { com_height: p.com_height, gravity: p.gravity, t_ssp: p.t_ssp, t_dsp: p.t_dsp }
    }
}

impl HlipParams {
    pub fn new(com_height: f64, gravity: f64, t_ssp: f64, t_dsp: f64) -> Result<Self> {
        let finite = [com_height, gravity, t_ssp, t_dsp].iter().all(|v| v.is_finite());
        if !finite {
            return Err(HlipError::InvalidInput("non-finite pendulum parameter".into()));
        }
        if com_height <= 0.0 || gravity <= 0.0 {
            return Err(HlipError::InvalidInput(format!(
                "com height ({com_height}) and gravity ({gravity}) must be positive"
            )));
        }
        if t_ssp <= 0.0 || t_dsp < 0.0 {
            return Err(HlipError::InvalidInput(format!("need t_ssp > 0 and t_dsp >= 0, got {t_ssp}, {t_dsp}")));
        }
        let omega = (gravity / com_height).sqrt();
        if t_ssp * omega < COTH_ARG_MIN {
            return Err(HlipError::InvalidInput(format!("t_ssp·ω = {} is degenerate", t_ssp * omega)));
        }
        Ok(Self { com_height, gravity, omega, t_ssp, t_dsp })
    }

    /// Same pendulum with different phase durations.
    pub fn with_timing(&self, t_ssp: f64, t_dsp: f64) -> Result<Self> {
        Self::new(self.com_height, self.gravity, t_ssp, t_dsp)
    }

    pub fn com_height(&self) -> f64 {
        self.com_height
    }
    pub fn gravity(&self) -> f64 {
        self.gravity
    }
    pub fn omega(&self) -> f64 {
        self.omega
    }
    pub fn t_ssp(&self) -> f64 {
        self.t_ssp
    }
    pub fn t_dsp(&self) -> f64 {
        self.t_dsp
    }
}

/// State of the hybrid pendulum. `x` is measured from the stance foot (in DSP,
/// from the foot that was stance during the preceding SSP).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HlipState {
    pub x: f64,
    pub xdot: f64,
    domain: Domain,
    phase_time: f64,
}

impl HlipState {
    pub fn new(x: f64, xdot: f64, domain: Domain) -> Self {
        Self { x, xdot, domain, phase_time: 0.0 }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Time since the last domain entry.
    pub fn phase_time(&self) -> f64 {
        self.phase_time
    }

    pub fn phase_point(&self) -> PhasePoint {
        PhasePoint::new(self.x, self.xdot)
    }

    /// Same domain, new phase point at a later phase time.
    pub(crate) fn advanced_to(self, point: PhasePoint, phase_time: f64) -> Self {
        Self { x: point.x, xdot: point.xdot, domain: self.domain, phase_time }
    }

    fn expect(&self, expected: Domain) -> Result<()> {
        if self.domain == expected {
            Ok(())
        } else {
            Err(HlipError::DomainMismatch { expected, found: self.domain })
        }
    }
}

/// Closed-form SSP solution applied to a bare phase point.
pub fn ssp_solution(start: PhasePoint, omega: f64, t: f64) -> PhasePoint {
    let c1 = 0.5 * (start.x + start.xdot / omega);
    let c2 = 0.5 * (start.x - start.xdot / omega);
    let ep = (omega * t).exp();
    let em = (-omega * t).exp();
    PhasePoint::new(c1 * ep + c2 * em, omega * (c1 * ep - c2 * em))
}

/// Closed-form DSP solution (constant-velocity drift).
pub fn dsp_solution(start: PhasePoint, t: f64) -> PhasePoint {
    PhasePoint::new(start.x + start.xdot * t, start.xdot)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt >= 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(HlipError::InvalidInput(format!("time step must be finite and >= 0, got {dt}")))
    }
}

pub fn flow_ssp(state: HlipState, params: &HlipParams, dt: f64) -> Result<HlipState> {
    state.expect(Domain::Ssp)?;
    check_dt(dt)?;
    let next = ssp_solution(state.phase_point(), params.omega(), dt);
    Ok(HlipState { x: next.x, xdot: next.xdot, domain: Domain::Ssp, phase_time: state.phase_time + dt })
}

pub fn flow_dsp(state: HlipState, dt: f64) -> Result<HlipState> {
    state.expect(Domain::Dsp)?;
    check_dt(dt)?;
    let next = dsp_solution(state.phase_point(), dt);
    Ok(HlipState { x: next.x, xdot: next.xdot, domain: Domain::Dsp, phase_time: state.phase_time + dt })
}

/// SSP→DSP: identity on `(x, ẋ)`.
pub fn reset_s2d(state: HlipState) -> Result<HlipState> {
    state.expect(Domain::Ssp)?;
    Ok(HlipState { x: state.x, xdot: state.xdot, domain: Domain::Dsp, phase_time: 0.0 })
}

/// DSP→SSP: the CoM is re-expressed relative to the new stance foot placed
/// `step_length` ahead.
pub fn reset_d2s(state: HlipState, step_length: f64) -> Result<HlipState> {
    state.expect(Domain::Dsp)?;
    Ok(HlipState { x: state.x - step_length, xdot: state.xdot, domain: Domain::Ssp, phase_time: 0.0 })
}

/// Divergent component of motion, `x + ẋ/ω`.
pub fn dcm(state: PhasePoint, omega: f64) -> f64 {
    state.x + state.xdot / omega
}

fn coth(v: f64) -> f64 {
    1.0 / v.tanh()
}

/// `σ₁ = ω·coth(ωT/2)`, the pre-impact `ẋ/x` ratio of a P1 orbit with SSP
/// duration `period`.
pub fn orbital_slope(omega: f64, period: f64) -> Result<f64> {
    let arg = 0.5 * omega * period;
    if !(arg >= COTH_ARG_MIN) || !arg.is_finite() {
        return Err(HlipError::InvalidInput(format!("ω·T/2 = {arg} is degenerate")));
    }
    Ok(omega * coth(arg))
}

/// Period-one orbit: pre-impact state, its SSP period and the step length
/// that closes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct P1Orbit {
    pub x_pre: f64,
    pub xdot_pre: f64,
    pub step_period: f64,
    pub orbital_slope: f64,
    pub nominal_step_length: f64,
}

impl P1Orbit {
    pub fn pre_impact(&self) -> PhasePoint {
        PhasePoint::new(self.x_pre, self.xdot_pre)
    }
}

/// Maps the pilot's CoM offset `x_h` (interpreted as the desired pre-impact
/// DCM) and a stepping period to a P1 orbit of the pendulum in `params`.
pub fn map_human_to_p1(x_h: f64, step_period: f64, params: &HlipParams) -> Result<P1Orbit> {
    if !(step_period > 0.0) || !x_h.is_finite() {
        return Err(HlipError::InvalidInput(format!(
            "step period must be positive (got {step_period}) and x_h finite (got {x_h})"
        )));
    }
    let omega = params.omega();
    let sigma = orbital_slope(omega, step_period)?;
    let x_pre = x_h / (1.0 + sigma / omega);
    let xdot_pre = omega * (x_h - x_pre);
    Ok(P1Orbit {
        x_pre,
        xdot_pre,
        step_period,
        orbital_slope: sigma,
        nominal_step_length: 2.0 * x_pre + params.t_dsp() * xdot_pre,
    })
}

/// Sign rule standing in for the P1 existence conditions: an orbit is usable
/// when its pre-impact velocity agrees in sign with `x_h` (or `x_h == 0`).
pub fn orbit_admissible(orbit: &P1Orbit, x_h: f64) -> bool {
    x_h == 0.0 || orbit.xdot_pre * x_h > 0.0
}

/// `x_{k+1} = A x_k + B u_k` between pre-impact states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S2SMatrices {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
}

impl S2SMatrices {
    pub fn step(&self, pre_impact: PhasePoint, step_length: f64) -> PhasePoint {
        PhasePoint::from_vector(self.a * pre_impact.to_vector() + self.b * step_length)
    }
}

/// One step is: pre-impact → S2D → DSP for `t_dsp` → D2S with `ℓ` → SSP for
/// `t_ssp` → next pre-impact.
pub fn s2s_matrices(params: &HlipParams) -> S2SMatrices {
    let w = params.omega();
    let c = (w * params.t_ssp()).cosh();
    let s = (w * params.t_ssp()).sinh();
    let td = params.t_dsp();
    S2SMatrices { a: Matrix2::new(c, c * td + s / w, w * s, w * s * td + c), b: Vector2::new(-c, -w * s) }
}

/// Two-step deadbeat step length toward the target pre-impact state.
pub fn deadbeat_step_length(pre_impact: PhasePoint, target: PhasePoint, params: &HlipParams) -> f64 {
    let w = params.omega();
    // HlipParams::new guarantees t_ssp·ω >= COTH_ARG_MIN.
    let gain = coth(params.t_ssp() * w) / w;
    pre_impact.x + target.x + params.t_dsp() * pre_impact.xdot + gain * (pre_impact.xdot - target.xdot)
}

/// Orbital energy `ẋ² − ω²x²`, invariant along the SSP flow.
pub fn orbital_energy(state: PhasePoint, omega: f64) -> f64 {
    state.xdot * state.xdot - omega * omega * state.x * state.x
}
