//! Synthetic pilots that step in place while leaning to command a speed.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use telewalk::hlip::HlipParams;
use telewalk::telelocomotion::{PilotPoll, PilotSample, PilotSource};

use crate::gait::{invert_p1_speed, swing_height, GaitTiming};

pub const MAX_SPEED: f64 = 0.5;
pub const MIN_STEP_PERIOD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotKind {
    Stand,
    VelocityProfile,
    Backward,
}

/// A constant robot-scale speed target held for `duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedSegment {
    pub duration: f64,
    pub speed: f64,
}

/// Standard deviations as fractions of the clean signal amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub swing_z: f64,
    pub com_x: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { swing_z: 0.01, com_x: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedPilotSpec {
    pub kind: PilotKind,
    pub segments: Vec<SpeedSegment>,
    /// Full step (DSP + SSP) [s].
    pub step_period: f64,
    pub dsp_fraction: f64,
    pub z_cl: f64,
    pub feet_width: f64,
    pub noise: NoiseSpec,
    pub sway_amplitude: f64,
    /// Standing time before the first step [s].
    pub lead_in: f64,
    /// Time to ramp between segment speeds [s].
    pub ramp: f64,
    pub h_human: f64,
    /// Robot CoM height; speeds in `segments` are robot-scale.
    pub h_robot: f64,
    pub gravity: f64,
}

impl Default for ScriptedPilotSpec {
    fn default() -> Self {
        Self {
            kind: PilotKind::Stand,
            segments: Vec::new(),
            step_period: 0.5,
            dsp_fraction: 0.2,
            z_cl: 0.1,
            feet_width: 0.2,
            noise: NoiseSpec::default(),
            sway_amplitude: 0.025,
            lead_in: 1.0,
            ramp: 1.0,
            h_human: 1.0,
            h_robot: 0.5,
            gravity: 9.81,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("segment speed {0} m/s outside ±{MAX_SPEED} m/s")]
    Speed(f64),
    #[error("step period {0} s shorter than {MIN_STEP_PERIOD} s")]
    StepPeriod(f64),
    #[error("invalid pilot spec: {0}")]
    Invalid(String),
}

impl ScriptedPilotSpec {
    pub fn standing(duration: f64) -> Self {
        Self { kind: PilotKind::Stand, segments: vec![SpeedSegment { duration, speed: 0.0 }], ..Self::default() }
    }

    /// 0.1, 0.2 and 0.3 m/s, 20 s each.
    pub fn velocity_tracking() -> Self {
        let seg = |speed| SpeedSegment { duration: 20.0, speed };
        Self { kind: PilotKind::VelocityProfile, segments: vec![seg(0.1), seg(0.2), seg(0.3)], ..Self::default() }
    }

    /// Backward at 0.2 m/s, then forward again.
    pub fn backward() -> Self {
        Self {
            kind: PilotKind::Backward,
            segments: vec![SpeedSegment { duration: 14.0, speed: -0.2 }, SpeedSegment { duration: 14.0, speed: 0.2 }],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if let Some(s) = self.segments.iter().find(|s| !(s.speed.abs() <= MAX_SPEED)) {
            return Err(SpecError::Speed(s.speed));
        }
        if !(self.step_period >= MIN_STEP_PERIOD) {
            return Err(SpecError::StepPeriod(self.step_period));
        }
        if self.segments.iter().any(|s| !(s.duration >= 0.0)) {
            return Err(SpecError::Invalid("segment durations must be non-negative".into()));
        }
        if !(0.0..0.9).contains(&self.dsp_fraction) {
            return Err(SpecError::Invalid("dsp_fraction must be in [0, 0.9)".into()));
        }
        if !(self.h_human > 0.0 && self.h_robot > 0.0 && self.gravity > 0.0) {
            return Err(SpecError::Invalid("heights and gravity must be positive".into()));
        }
        if !(self.z_cl > 0.0 && self.feet_width > 0.0 && self.lead_in >= 0.0 && self.ramp >= 0.0) {
            return Err(SpecError::Invalid("z_cl, feet_width must be positive; lead_in, ramp non-negative".into()));
        }
        self.human_params()?;
        Ok(())
    }

    pub fn timing(&self) -> GaitTiming {
        GaitTiming { step_period: self.step_period, dsp_fraction: self.dsp_fraction }
    }

    pub fn lambda(&self) -> f64 {
        self.h_robot / self.h_human
    }

    pub fn human_params(&self) -> Result<HlipParams, SpecError> {
        let g = self.timing();
        HlipParams::new(self.h_human, self.gravity, g.t_ssp(), g.t_dsp()).map_err(|e| SpecError::Invalid(e.to_string()))
    }

    pub fn duration(&self) -> f64 {
        self.lead_in + self.segments.iter().map(|s| s.duration).sum::<f64>()
    }

    /// Start and end time of each segment.
    pub fn segment_windows(&self) -> Vec<(f64, f64, f64)> {
        let mut t = self.lead_in;
        self.segments
            .iter()
            .map(|s| {
                let w = (t, t + s.duration, s.speed);
                t += s.duration;
                w
            })
            .collect()
    }

    /// Commanded robot-scale speed, ramped linearly from the previous segment.
    pub fn speed_at(&self, t: f64) -> f64 {
        if self.kind == PilotKind::Stand || t < self.lead_in {
            return 0.0;
        }
        let mut prev = 0.0;
        for (start, end, speed) in self.segment_windows() {
            if t < end {
                let a = if self.ramp > 0.0 { ((t - start) / self.ramp).min(1.0) } else { 1.0 };
                return prev + a * (speed - prev);
            }
            prev = speed;
        }
        prev
    }

    /// Human CoM offset for a robot-scale speed.
    pub fn com_offset(&self, robot_speed: f64) -> f64 {
        let params = self.human_params().expect("validated spec");
        invert_p1_speed(robot_speed / self.lambda(), &params).expect("validated spec")
    }
}

/// Lateral CoM sway: a sinusoid at the stepping frequency peaking over the
/// stance foot at mid-SSP. It starts from rest one and a half steps before
/// the first peak, so the first lift-off follows a full weight shift.
pub fn lateral_sway(spec: &ScriptedPilotSpec, t: f64) -> f64 {
    if spec.kind == PilotKind::Stand {
        return 0.0;
    }
    let g = spec.timing();
    let p = g.step_period;
    // first step swings the right foot, so the first peak is on the left
    let first_peak = spec.lead_in + g.t_dsp() + 0.5 * g.t_ssp();
    let start = first_peak - 1.5 * p;
    if t < start {
        return 0.0;
    }
    spec.sway_amplitude * (PI * (t - first_peak) / p).cos()
}

/// Emits the pilot sample at time `t`. Noise draws come from `rng`.
pub fn synth_pilot_tick<R: Rng>(spec: &ScriptedPilotSpec, t: f64, rng: &mut R) -> PilotSample {
    let half = 0.5 * spec.feet_width;
    let mut left = Vector3::new(0.0, half, 0.0);
    let mut right = Vector3::new(0.0, -half, 0.0);
    if spec.kind == PilotKind::Stand || t < spec.lead_in {
        let com_y = lateral_sway(spec, t);
        return PilotSample {
            t,
            com_x: 0.0,
            com_y,
            left_foot: left,
            right_foot: right,
            contact_left: true,
            contact_right: true,
        };
    }
    let phase = spec.timing().phase(t - spec.lead_in);
    let x_h = spec.com_offset(spec.speed_at(t));
    let mut com_x = x_h;
    if spec.noise.com_x > 0.0 {
        let n: f64 = rng.sample(StandardNormal);
        com_x += spec.noise.com_x * x_h.abs() * n;
    }
    let com_y = lateral_sway(spec, t);
    if let Some(s) = phase.ssp {
        let mut z = swing_height(s, spec.z_cl);
        if spec.noise.swing_z > 0.0 {
            let n: f64 = rng.sample(StandardNormal);
            z += spec.noise.swing_z * spec.z_cl * n;
        }
        match phase.swing {
            telewalk::hwr::Side::Left => left.z = z,
            telewalk::hwr::Side::Right => right.z = z,
        }
    }
    let [contact_left, contact_right] = phase.contacts();
    PilotSample { t, com_x, com_y, left_foot: left, right_foot: right, contact_left, contact_right }
}

/// Seeded scripted source; ends after the spec's duration.
pub struct ScriptedPilot {
    spec: ScriptedPilotSpec,
    rng: ChaCha8Rng,
}

impl ScriptedPilot {
    pub fn new(spec: ScriptedPilotSpec, seed: u64) -> Result<Self, SpecError> {
        spec.validate()?;
        Ok(Self { spec, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn spec(&self) -> &ScriptedPilotSpec {
        &self.spec
    }
}

impl PilotSource for ScriptedPilot {
    fn poll(&mut self, t: f64) -> PilotPoll {
        if t > self.spec.duration() + 1e-9 {
            return PilotPoll::End;
        }
        PilotPoll::Sample(synth_pilot_tick(&self.spec, t, &mut self.rng))
    }
}
