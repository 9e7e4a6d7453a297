//! Human walking reference (HWR) generator.
//!
//! The HWR is an H-LIP driven by the pilot: gait events from the pilot's
//! feet trigger the reset maps, the pilot's CoM offset and stepping period
//! pick the target P1 orbit, and the deadbeat law chooses the step length
//! latched into the next DSP→SSP reset.
//!
//! Also here: the swing-height curve fit that estimates the SSP duration
//! while a step is in progress, and the smoothed step-period measurement.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hlip::{
    self, deadbeat_step_length, dsp_solution, map_human_to_p1, orbit_admissible, ssp_solution, Domain, HlipError,
    HlipParams, HlipState, P1Orbit, PhasePoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// +1 for left, −1 for right (left is +y).
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GaitEventKind {
    /// A foot leaves the ground: DSP → SSP.
    LiftOff,
    /// The swing foot lands: SSP → DSP.
    TouchDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitEvent {
    pub kind: GaitEventKind,
    pub timestamp: f64,
    pub swing_side: Side,
}

impl GaitEvent {
    pub fn lift_off(timestamp: f64, swing_side: Side) -> Self {
        Self { kind: GaitEventKind::LiftOff, timestamp, swing_side }
    }

    pub fn touch_down(timestamp: f64, swing_side: Side) -> Self {
        Self { kind: GaitEventKind::TouchDown, timestamp, swing_side }
    }

    /// Domain entered by this event.
    pub fn target_domain(&self) -> Domain {
        match self.kind {
            GaitEventKind::LiftOff => Domain::Ssp,
            GaitEventKind::TouchDown => Domain::Dsp,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HwrError {
    /// The pilot reported an event that does not match the internal domain.
    /// The state has already been re-anchored to the pilot's domain.
    #[error("{event:?} received while in {domain:?}; re-anchored to pilot domain")]
    Resynchronized { event: GaitEventKind, domain: Domain },
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Model(#[from] HlipError),
}

/// Evolving reference. `current` is always `post_impact` flowed for
/// `current.phase_time()` under the active domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HwrState {
    pub current: HlipState,
    pub post_impact: PhasePoint,
    pub pre_impact: PhasePoint,
    /// Step length from the most recent SSP tick; consumed by the next D→S reset.
    pub pending_step_length: f64,
    /// Step length applied at the most recent D→S reset.
    pub applied_step_length: f64,
    pub step_index: u64,
    pub target: Option<P1Orbit>,
    /// End-of-SSP state predicted on the last SSP tick.
    pub predicted_pre_impact: PhasePoint,
    /// Number of reset maps applied so far.
    pub resets: u64,
}

impl HwrState {
    pub fn new(initial: HlipState) -> Self {
        Self {
            current: initial,
            post_impact: initial.phase_point(),
            pre_impact: initial.phase_point(),
            pending_step_length: 0.0,
            applied_step_length: 0.0,
            step_index: 0,
            target: None,
            predicted_pre_impact: initial.phase_point(),
            resets: 0,
        }
    }

    /// Reference at rest in double support.
    pub fn standing() -> Self {
        Self::new(HlipState::new(0.0, 0.0, Domain::Dsp))
    }

    pub fn domain(&self) -> Domain {
        self.current.domain()
    }

    fn apply_reset(&mut self, to: Domain) -> Result<(), HlipError> {
        self.pre_impact = self.current.phase_point();
        self.current = match to {
            Domain::Dsp => hlip::reset_s2d(self.current)?,
            Domain::Ssp => {
                self.applied_step_length = self.pending_step_length;
                self.step_index += 1;
                hlip::reset_d2s(self.current, self.pending_step_length)?
            }
        };
        self.post_impact = self.current.phase_point();
        self.resets += 1;
        Ok(())
    }
}

/// Tolerance for phase time accumulated from many ticks.
const PHASE_TIME_EPS: f64 = 1e-9;

/// Predicted SSP duration: the estimate while it lies ahead, otherwise at
/// least one more tick.
fn predicted_ssp_duration(t_ssp_est: f64, elapsed: f64, dt: f64) -> f64 {
    if t_ssp_est >= elapsed - PHASE_TIME_EPS {
        t_ssp_est.max(elapsed)
    } else {
        elapsed + dt
    }
}

/// One control tick of the HWR.
///
/// `params.t_ssp()` carries the current SSP-duration estimate and
/// `params.t_dsp()` the DSP duration used by the deadbeat law. `x_h` and
/// `t_s` feed the P1 mapping. On a domain-inconsistent event the state is
/// re-anchored and `HwrError::Resynchronized` is returned; the caller may
/// continue ticking.
pub fn hwr_tick(
    state: &mut HwrState,
    event: Option<&GaitEvent>,
    x_h: f64,
    t_s: f64,
    dt: f64,
    params: &HlipParams,
) -> Result<(), HwrError> {
    if !(dt > 0.0) {
        return Err(HwrError::InvalidStep(dt));
    }
    if let Some(ev) = event {
        let to = ev.target_domain();
        let mut resync = None;
        if state.domain() == to {
            // Missed the intermediate transition: replay it so the pilot's
            // domain is reached through the reset maps.
            resync = Some(HwrError::Resynchronized { event: ev.kind, domain: state.domain() });
            let via = match to {
                Domain::Ssp => Domain::Dsp,
                Domain::Dsp => Domain::Ssp,
            };
            state.apply_reset(via)?;
        }
        state.apply_reset(to)?;
        return match resync {
            Some(err) => {
                log::warn!("{err}");
                Err(err)
            }
            None => Ok(()),
        };
    }

    let elapsed = state.current.phase_time() + dt;
    match state.domain() {
        Domain::Ssp => {
            let now = ssp_solution(state.post_impact, params.omega(), elapsed);
            state.current = state.current.advanced_to(now, elapsed);

            match map_human_to_p1(x_h, t_s, params) {
                Ok(orbit) if orbit_admissible(&orbit, x_h) => state.target = Some(orbit),
                Ok(_) => {}
                Err(e) => log::debug!("keeping previous P1 target: {e}"),
            }
            let target = state.target.map(|o| o.pre_impact()).unwrap_or(PhasePoint::ORIGIN);
            let remaining = predicted_ssp_duration(params.t_ssp(), elapsed, dt) - elapsed;
            state.predicted_pre_impact = ssp_solution(now, params.omega(), remaining);
            state.pending_step_length = deadbeat_step_length(state.predicted_pre_impact, target, params);
        }
        Domain::Dsp => {
            let now = dsp_solution(state.post_impact, elapsed);
            state.current = state.current.advanced_to(now, elapsed);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Step-timing estimation
// ---------------------------------------------------------------------------

/// Damping used when the caller does not supply one.
pub const DEFAULT_DAMPING: f64 = 1e-3;
const MAX_ITERATIONS: usize = 50;
const STEP_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least 4 samples spanning > 10% of the period guess ({samples} samples over {span} s)")]
    InsufficientSamples { samples: usize, span: f64 },
    #[error("samples must be time-monotone")]
    NonMonotone,
    /// Swing is flat: the height is known (zero) but the period is not.
    #[error("flat swing, period indeterminate (z_cl = {z_cl})")]
    Indeterminate { z_cl: f64 },
    #[error("fit diverged")]
    Diverged,
}

/// Result of fitting `z(t) = z₀ + (z_cl/2)(1 − cos(2πt/T))` to swing-foot
/// height samples, `t` measured from lift-off.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepTimingFit {
    pub t_ssp_est: f64,
    pub z_cl_est: f64,
    pub damping: f64,
    pub samples: Vec<(f64, f64)>,
    pub converged: bool,
    pub iterations: usize,
    pub cost: f64,
}

fn swing_model(t: f64, z_start: f64, period: f64, z_cl: f64) -> f64 {
    z_start + 0.5 * z_cl * (1.0 - (std::f64::consts::TAU * t / period).cos())
}

fn fit_cost(samples: &[(f64, f64)], z_start: f64, period: f64, z_cl: f64) -> f64 {
    samples.iter().map(|&(t, z)| (z - swing_model(t, z_start, period, z_cl)).powi(2)).sum()
}

/// Damped Gauss–Newton (Levenberg–Marquardt with fixed damping) fit of the
/// swing-height curve. `init` is `(T, z_cl)`.
pub fn fit_step_timing(
    samples: &[(f64, f64)],
    z_start: f64,
    damping: f64,
    init: (f64, f64),
) -> Result<StepTimingFit, FitError> {
    let span = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => b.0 - a.0,
        _ => 0.0,
    };
    if samples.len() < 4 || !(span > 0.1 * init.0) {
        return Err(FitError::InsufficientSamples { samples: samples.len(), span });
    }
    if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(FitError::NonMonotone);
    }
    let amplitude = samples.iter().map(|&(_, z)| (z - z_start).abs()).fold(0.0, f64::max);
    if amplitude <= 1e-12 {
        return Err(FitError::Indeterminate { z_cl: 0.0 });
    }

    let tau = std::f64::consts::TAU;
    let (mut period, mut z_cl) = init;
    let mut cost = fit_cost(samples, z_start, period, z_cl);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        // Normal equations for the residual r = z − model.
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(t, z) in samples {
            let phase = tau * t / period;
            let (sin, cos) = phase.sin_cos();
            let r = z - (z_start + 0.5 * z_cl * (1.0 - cos));
            let j_period = -0.5 * z_cl * sin * tau * t / (period * period);
            let j_height = 0.5 * (1.0 - cos);
            a11 += j_period * j_period;
            a12 += j_period * j_height;
            a22 += j_height * j_height;
            g1 += j_period * r;
            g2 += j_height * r;
        }
        let d11 = a11 * (1.0 + damping) + 1e-300;
        let d22 = a22 * (1.0 + damping) + 1e-300;
        let det = d11 * d22 - a12 * a12;
        if !det.is_finite() || det.abs() < 1e-300 {
            return Err(FitError::Diverged);
        }
        let mut dp = (d22 * g1 - a12 * g2) / det;
        let mut dz = (d11 * g2 - a12 * g1) / det;

        // Backtrack on increases so the fixed damping cannot walk uphill.
        let mut accepted = false;
        for _ in 0..30 {
            let cand_period = period + dp;
            if cand_period > 0.0 {
                let cand_cost = fit_cost(samples, z_start, cand_period, z_cl + dz);
                if cand_cost <= cost {
                    period = cand_period;
                    z_cl += dz;
                    cost = cand_cost;
                    accepted = true;
                    break;
                }
            }
            dp *= 0.5;
            dz *= 0.5;
        }
        let step_norm = (dp * dp + dz * dz).sqrt();
        if !accepted || step_norm < STEP_TOLERANCE {
            converged = true;
            break;
        }
    }
    if !period.is_finite() || !z_cl.is_finite() || period <= 0.0 {
        return Err(FitError::Diverged);
    }
    if z_cl < 0.0 {
        // A downward bump is not a step; treat as flat.
        return Err(FitError::Indeterminate { z_cl: 0.0 });
    }
    Ok(StepTimingFit {
        t_ssp_est: period,
        z_cl_est: z_cl,
        damping,
        samples: samples.to_vec(),
        converged,
        iterations,
        cost,
    })
}

/// Streaming SSP-duration estimate for one swing: every new height sample
/// refits the swing curve, and the estimate moves towards the fitted period
/// by at most `rate_limit` (relative) per sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwingTimingEstimator {
    pub damping: f64,
    pub rate_limit: f64,
    /// Height guess for the first fit of a swing, before any fit succeeded.
    pub z_cl_guess: f64,
    estimate: f64,
    z_cl: Option<f64>,
    z_start: f64,
    samples: Vec<(f64, f64)>,
}

impl SwingTimingEstimator {
    pub fn new(damping: f64, rate_limit: f64, initial: f64, z_cl_guess: f64) -> Self {
        Self { damping, rate_limit, z_cl_guess, estimate: initial, z_cl: None, z_start: 0.0, samples: Vec::new() }
    }

    /// Starts a swing at lift-off height `z_start` from a prior estimate.
    pub fn begin(&mut self, prior: f64, z_start: f64) {
        self.estimate = prior;
        self.z_start = z_start;
        self.samples.clear();
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    /// Adds a sample at `t` after lift-off and returns the updated estimate.
    pub fn push(&mut self, t: f64, z: f64) -> f64 {
        self.samples.push((t, z));
        if self.samples.len() < 4 {
            return self.estimate;
        }
        let guess = (self.estimate, self.z_cl.unwrap_or(self.z_cl_guess));
        match fit_step_timing(&self.samples, self.z_start, self.damping, guess) {
            Ok(fit) => {
                let limit = self.rate_limit * self.estimate;
                self.estimate += (fit.t_ssp_est - self.estimate).clamp(-limit, limit);
                self.z_cl = Some(fit.z_cl_est);
            }
            Err(e) => log::trace!("step timing fit: {e}"),
        }
        self.estimate
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    /// Latest fitted swing height, once a fit has succeeded.
    pub fn z_cl(&self) -> Option<f64> {
        self.z_cl
    }
}

/// Exponentially smoothed interval between consecutive events of one kind.
///
/// `est₁ = Δ₁`, `estₖ = α·Δₖ + (1 − α)·estₖ₋₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSmoother {
    pub smoothing: f64,
    pub fallback: f64,
    last_time: Option<f64>,
    estimate: Option<f64>,
}

impl IntervalSmoother {
    pub fn new(smoothing: f64, fallback: f64) -> Self {
        Self { smoothing: smoothing.clamp(0.0, 1.0), fallback, last_time: None, estimate: None }
    }

    pub fn mark(&mut self, t: f64) {
        if let Some(prev) = self.last_time {
            self.push_interval(t - prev);
        }
        self.last_time = Some(t);
    }

    pub fn push_interval(&mut self, interval: f64) {
        self.estimate = Some(match self.estimate {
            None => interval,
            Some(e) => self.smoothing * interval + (1.0 - self.smoothing) * e,
        });
    }

    pub fn has_estimate(&self) -> bool {
        self.estimate.is_some()
    }

    pub fn value(&self) -> f64 {
        self.estimate.unwrap_or(self.fallback)
    }
}

/// Smoothed inter-touch-down interval; `fallback` until two touch-downs are seen.
pub fn measure_step_period(events: &[GaitEvent], smoothing: f64, fallback: f64) -> f64 {
    let mut smoother = IntervalSmoother::new(smoothing, fallback);
    events.iter().filter(|e| e.kind == GaitEventKind::TouchDown).for_each(|e| smoother.mark(e.timestamp));
    smoother.value()
}
