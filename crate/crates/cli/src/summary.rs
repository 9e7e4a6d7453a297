//! Episode summary document written next to the telemetry log.

use serde::Serialize;

use telewalk::telelocomotion::{EpisodeResult, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentSpeed {
    pub start: f64,
    pub end: f64,
    pub target: f64,
    /// Mean CoM x-velocity over the segment; absent if the episode ended first.
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DcmStats {
    pub mean_abs: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpStats {
    pub failures: u64,
    pub max_iter: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub verdict: Verdict,
    pub seed: u64,
    pub duration: f64,
    pub ticks: u64,
    pub distance_x: f64,
    pub min_x: f64,
    pub max_x: f64,
    pub segment_speeds: Vec<SegmentSpeed>,
    pub normalized_dcm_error: DcmStats,
    pub falls: u32,
    pub steps: u64,
    pub resyncs: u64,
    pub underrun_ticks: u64,
    pub qp: QpStats,
    pub contact_violations: u64,
    pub max_rotation_error: f64,
    pub max_haptic: f64,
}

impl EpisodeSummary {
    /// `windows` are `(start, end, target speed)` triples, usually from a
    /// scripted pilot.
    pub fn new(result: &EpisodeResult, seed: u64, windows: &[(f64, f64, f64)]) -> Self {
        let segment_speeds = windows
            .iter()
            .map(|&(start, end, target)| SegmentSpeed {
                start,
                end,
                target,
                mean: (end <= result.duration + 1e-9).then(|| result.mean_velocity(start, end)).flatten(),
            })
            .collect();
        Self {
            verdict: result.verdict.clone(),
            seed,
            duration: result.duration,
            ticks: result.ticks,
            distance_x: result.distance_x,
            min_x: result.min_x,
            max_x: result.max_x,
            segment_speeds,
            normalized_dcm_error: DcmStats { mean_abs: result.mean_abs_dcm_error, max_abs: result.max_abs_dcm_error },
            falls: result.falls,
            steps: result.steps,
            resyncs: result.resyncs,
            underrun_ticks: result.underrun_ticks,
            qp: QpStats { failures: result.qp_failures, max_iter: result.qp_max_iter },
            contact_violations: result.contact_violations,
            max_rotation_error: result.max_rotation_error,
            max_haptic: result.max_haptic,
        }
    }
}
