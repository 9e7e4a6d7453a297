//! Stepping clock and orbit inversion shared by the synthetic pilots.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use telewalk::hlip::{HlipError, HlipParams};
use telewalk::hwr::Side;

/// Step cycle: each step is a DSP followed by an SSP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitTiming {
    pub step_period: f64,
    pub dsp_fraction: f64,
}

impl GaitTiming {
    pub fn t_dsp(&self) -> f64 {
        self.step_period * self.dsp_fraction
    }

    pub fn t_ssp(&self) -> f64 {
        self.step_period - self.t_dsp()
    }

    pub fn phase(&self, since_start: f64) -> GaitPhase {
        let since = since_start.max(0.0);
        let step = (since / self.step_period).floor();
        let within = since - step * self.step_period;
        let step = step as u64;
        let swing = if step.is_multiple_of(2) { Side::Right } else { Side::Left };
        let t_dsp = self.t_dsp();
        if within < t_dsp {
            GaitPhase { step, swing, ssp: None }
        } else {
            GaitPhase { step, swing, ssp: Some(((within - t_dsp) / self.t_ssp()).clamp(0.0, 1.0)) }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaitPhase {
    pub step: u64,
    /// Foot that swings in this step's SSP.
    pub swing: Side,
    /// SSP phase in `[0, 1]`, `None` during the DSP.
    pub ssp: Option<f64>,
}

impl GaitPhase {
    pub fn contacts(&self) -> [bool; 2] {
        match self.ssp {
            None => [true, true],
            Some(_) => {
                let mut c = [true, true];
                c[self.swing.index()] = false;
                c
            }
        }
    }
}

/// A finite or open-ended run of steps that begins with a lateral weight
/// shift. The sway starts at `start`; the first step's DSP begins once the
/// sway has rocked towards the first swing foot and back.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteppingBout {
    pub start: f64,
    pub timing: GaitTiming,
    pub first_swing: Side,
    /// `None` keeps stepping until [`SteppingBout::stop_after`] is called.
    pub steps: Option<u64>,
}

impl SteppingBout {
    pub fn new(start: f64, timing: GaitTiming, first_swing: Side, steps: Option<u64>) -> Self {
        Self { start, timing, first_swing, steps }
    }

    /// Mid-SSP of the first step, where the sway peaks over the stance foot.
    pub fn first_peak(&self) -> f64 {
        self.start + 1.5 * self.timing.step_period
    }

    pub fn first_step_start(&self) -> f64 {
        self.first_peak() - self.timing.t_dsp() - 0.5 * self.timing.t_ssp()
    }

    /// Time after which the pilot stands still again.
    pub fn end(&self) -> Option<f64> {
        self.steps.map(|n| self.first_peak() + (n as f64 - 0.5) * self.timing.step_period)
    }

    /// Ends the bout after the step in progress at `t`.
    pub fn stop_after(&mut self, t: f64) {
        let since = t - self.first_step_start();
        let done = if since < 0.0 { 1 } else { (since / self.timing.step_period).floor() as u64 + 1 };
        self.steps = Some(self.steps.map_or(done, |n| n.min(done)));
    }

    pub fn is_over(&self, t: f64) -> bool {
        self.end().is_some_and(|e| t >= e)
    }

    /// Contact flags, swing side and SSP phase at `t`.
    pub fn phase(&self, t: f64) -> Option<GaitPhase> {
        let t0 = self.first_step_start();
        if t < t0 || self.is_over(t) {
            return None;
        }
        let mut ph = self.timing.phase(t - t0);
        if let Some(n) = self.steps {
            if ph.step >= n {
                return None;
            }
        }
        ph.swing = if ph.step.is_multiple_of(2) { self.first_swing } else { self.first_swing.other() };
        Some(ph)
    }

    /// Lateral CoM offset: positive towards the left foot.
    pub fn sway(&self, t: f64, amplitude: f64) -> f64 {
        if t < self.start || self.is_over(t) {
            return 0.0;
        }
        let p = self.timing.step_period;
        // the first peak sits over the first stance foot
        let sign = self.first_swing.other().sign();
        sign * amplitude * (std::f64::consts::PI * (t - self.first_peak()) / p).cos()
    }
}

/// Human swing-foot height: a single raised-cosine lift of apex `z_cl`.
pub fn swing_height(s: f64, z_cl: f64) -> f64 {
    0.5 * z_cl * (1.0 - (TAU * s.clamp(0.0, 1.0)).cos())
}

/// CoM offset `x_h` whose P1 orbit (SSP period `params.t_ssp()`) walks at
/// `speed`: nominal step length over the full step period.
pub fn invert_p1_speed(speed: f64, params: &HlipParams) -> Result<f64, HlipError> {
    let w = params.omega();
    let t = params.t_ssp();
    let sigma = w / (0.5 * w * t).tanh();
    let xdot_pre = speed * (t + params.t_dsp()) / (2.0 / sigma + params.t_dsp());
    let x_pre = xdot_pre / sigma;
    Ok(x_pre + xdot_pre / w)
}
