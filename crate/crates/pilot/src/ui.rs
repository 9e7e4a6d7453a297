//! Browser console protocol: versioned JSON messages in both directions and
//! the synthesizer that turns console commands into pilot samples.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use telewalk::hlip::Domain;
use telewalk::hwr::Side;
use telewalk::telelocomotion::{HapticCommand, PilotSample, TelemetryRecord, Verdict};

use crate::gait::{swing_height, GaitTiming, SteppingBout};

pub const UI_SCHEMA_VERSION: u32 = 1;
/// Highest command rate the bridge accepts from the console [Hz].
pub const MAX_COMMAND_RATE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UiMode {
    Manual,
    AutoStep,
}

/// Console command. `step_trigger` requests one step in `Manual` mode;
/// `step_period` sets the tempo in `AutoStep` mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UiPilotMessage {
    pub version: u32,
    pub seq: u64,
    pub t: f64,
    /// Human-scale CoM lean [m].
    pub com_x_offset: f64,
    pub step_trigger: bool,
    pub step_period: f64,
    pub feet_width: f64,
    pub mode: UiMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello { version: u32, client: String },
    Pilot(UiPilotMessage),
    Stop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome { version: u32, dt: f64, frame_rate: f64 },
    Refusal { version: u32, reason: String },
    Telemetry(UiTelemetryFrame),
    Ended { verdict: Verdict },
}

/// Decimated telemetry for the console.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiTelemetryFrame {
    pub version: u32,
    pub seq: u64,
    pub t: f64,
    pub robot_p: [f64; 3],
    pub robot_rpy: [f64; 3],
    pub feet: [[f64; 3]; 2],
    /// HWR phase point `[x, ẋ]`.
    pub hwr: [f64; 2],
    pub hwr_domain: Domain,
    /// Normalized sagittal DCM `[hwr, robot]`.
    pub dcm_norm: [f64; 2],
    pub cop: Option<[f64; 2]>,
    pub haptic: HapticCommand,
    /// Every event since the previous frame.
    pub events: Vec<String>,
    /// Sequence number of the last console command applied.
    pub pilot_seq: Option<u64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("console schema version {client} does not match simulator version {server}")]
pub struct VersionMismatch {
    pub client: u32,
    pub server: u32,
}

pub fn check_version(client: u32) -> Result<(), VersionMismatch> {
    if client == UI_SCHEMA_VERSION {
        Ok(())
    } else {
        Err(VersionMismatch { client, server: UI_SCHEMA_VERSION })
    }
}

/// Emits every `every`-th record as a frame; events from skipped records
/// are carried into the next frame.
#[derive(Debug, Clone)]
pub struct FrameDecimator {
    every: u64,
    count: u64,
    seq: u64,
    pending: Vec<String>,
}

impl FrameDecimator {
    pub fn new(every: u64) -> Self {
        Self { every: every.max(1), count: 0, seq: 0, pending: Vec::new() }
    }

    pub fn push(&mut self, rec: &TelemetryRecord, pilot_seq: Option<u64>) -> Option<UiTelemetryFrame> {
        self.pending.extend(rec.events.iter().cloned());
        self.count += 1;
        if !self.count.is_multiple_of(self.every) {
            return None;
        }
        self.seq += 1;
        Some(UiTelemetryFrame {
            version: UI_SCHEMA_VERSION,
            seq: self.seq,
            t: rec.t,
            robot_p: rec.robot.p,
            robot_rpy: rec.robot.rpy,
            feet: rec.robot.feet,
            hwr: [rec.hwr.x, rec.hwr.xdot],
            hwr_domain: rec.hwr.domain,
            dcm_norm: rec.dcm_norm,
            cop: rec.cop,
            haptic: rec.haptic,
            events: std::mem::take(&mut self.pending),
            pilot_seq,
        })
    }

    /// Emits a frame now if events are waiting.
    pub fn flush(&mut self, rec: &TelemetryRecord, pilot_seq: Option<u64>) -> Option<UiTelemetryFrame> {
        if self.pending.is_empty() {
            return None;
        }
        self.count = self.every - 1;
        let mut rec = rec.clone();
        rec.events.clear();
        self.push(&rec, pilot_seq)
    }

    /// Returns a dropped frame's events to the queue.
    pub fn requeue(&mut self, frame: UiTelemetryFrame) {
        let mut events = frame.events;
        events.append(&mut self.pending);
        self.pending = events;
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommandError {
    #[error(transparent)]
    Version(#[from] VersionMismatch),
    #[error("invalid console command: {0}")]
    Invalid(String),
}

/// Turns console commands into a full pilot-sample stream: stepping bouts
/// with swing-foot lifts and lateral sway, and a commanded CoM lean.
#[derive(Debug, Clone)]
pub struct UiPilotSynth {
    command: Option<UiPilotMessage>,
    bout: Option<SteppingBout>,
    next_swing: Side,
    pub dsp_fraction: f64,
    pub z_cl: f64,
    pub sway_amplitude: f64,
}

impl Default for UiPilotSynth {
    fn default() -> Self {
        Self { command: None, bout: None, next_swing: Side::Right, dsp_fraction: 0.2, z_cl: 0.1, sway_amplitude: 0.025 }
    }
}

impl UiPilotSynth {
    pub fn last_seq(&self) -> Option<u64> {
        self.command.map(|c| c.seq)
    }

    pub fn apply(&mut self, msg: UiPilotMessage, now: f64) -> Result<(), CommandError> {
        check_version(msg.version)?;
        if !(msg.step_period >= crate::scripted::MIN_STEP_PERIOD)
            || !(msg.feet_width > 0.0)
            || !msg.com_x_offset.is_finite()
        {
            return Err(CommandError::Invalid(format!(
                "step_period {} s, feet_width {} m, com_x_offset {}",
                msg.step_period, msg.feet_width, msg.com_x_offset
            )));
        }
        if let Some(prev) = self.command {
            if msg.seq <= prev.seq {
                return Err(CommandError::Invalid(format!("stale sequence number {} after {}", msg.seq, prev.seq)));
            }
        }
        let timing = GaitTiming { step_period: msg.step_period, dsp_fraction: self.dsp_fraction };
        let active = self.bout.as_ref().is_some_and(|b| !b.is_over(now));
        match msg.mode {
            UiMode::AutoStep if !active => self.start_bout(now, timing, None),
            UiMode::AutoStep => {}
            UiMode::Manual => {
                if let Some(b) = self.bout.as_mut().filter(|b| b.steps.is_none()) {
                    b.stop_after(now);
                }
                let active = self.bout.as_ref().is_some_and(|b| !b.is_over(now));
                if msg.step_trigger && !active {
                    self.start_bout(now, timing, Some(1));
                }
            }
        }
        self.command = Some(msg);
        Ok(())
    }

    fn start_bout(&mut self, now: f64, timing: GaitTiming, steps: Option<u64>) {
        if let Some(b) = &self.bout {
            // continue alternating from the previous bout
            if let (Some(n), Some(_)) = (b.steps, b.end()) {
                self.next_swing = if n % 2 == 0 { b.first_swing } else { b.first_swing.other() };
            }
        }
        self.bout = Some(SteppingBout::new(now, timing, self.next_swing, steps));
    }

    pub fn sample(&self, t: f64) -> PilotSample {
        let (com_x, width) = self.command.map_or((0.0, 0.2), |c| (c.com_x_offset, c.feet_width));
        let mut left = Vector3::new(0.0, 0.5 * width, 0.0);
        let mut right = Vector3::new(0.0, -0.5 * width, 0.0);
        let mut contacts = [true, true];
        let mut com_y = 0.0;
        if let Some(b) = &self.bout {
            com_y = b.sway(t, self.sway_amplitude);
            if let Some(ph) = b.phase(t) {
                contacts = ph.contacts();
                if let Some(s) = ph.ssp {
                    let z = swing_height(s, self.z_cl);
                    match ph.swing {
                        Side::Left => left.z = z,
                        Side::Right => right.z = z,
                    }
                }
            }
        }
        PilotSample {
            t,
            com_x,
            com_y,
            left_foot: left,
            right_foot: right,
            contact_left: contacts[0],
            contact_right: contacts[1],
        }
    }
}
