//! CSV recordings of pilot samples.
//!
//! Columns, in order: `t, com_x, com_y, lx, ly, lz, rx, ry, rz, cl, cr`
//! (SI units; contact flags `0`/`1`). Time must increase strictly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use telewalk::telelocomotion::{PilotPoll, PilotSample, PilotSource};

pub const CSV_COLUMNS: [&str; 11] = ["t", "com_x", "com_y", "lx", "ly", "lz", "rx", "ry", "rz", "cl", "cr"];

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot open recording: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("header {found:?} does not match expected columns {expected:?}")]
    Header { expected: Vec<String>, found: Vec<String> },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("row {row}: t = {t} does not advance past {prev}")]
    NonMonotone { row: usize, prev: f64, t: f64 },
    #[error("recording has no samples")]
    Empty,
}

fn parse_flag(v: &str, row: usize) -> Result<bool, ReplayError> {
    match v.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(ReplayError::Row { row, message: format!("contact flag must be 0 or 1, got {other:?}") }),
    }
}

pub fn read_recording<R: Read>(reader: R) -> Result<Vec<PilotSample>, ReplayError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if found != CSV_COLUMNS {
        return Err(ReplayError::Header { expected: CSV_COLUMNS.iter().map(|s| s.to_string()).collect(), found });
    }
    let mut out: Vec<PilotSample> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let mut v = [0.0; 9];
        for (k, slot) in v.iter_mut().enumerate() {
            let field = &rec[k];
            *slot = field.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| ReplayError::Row {
                row,
                message: format!("column {} is not a finite number: {field:?}", CSV_COLUMNS[k]),
            })?;
        }
        let sample = PilotSample {
            t: v[0],
            com_x: v[1],
            com_y: v[2],
            left_foot: Vector3::new(v[3], v[4], v[5]),
            right_foot: Vector3::new(v[6], v[7], v[8]),
            contact_left: parse_flag(&rec[9], row)?,
            contact_right: parse_flag(&rec[10], row)?,
        };
        if let Some(prev) = out.last() {
            if !(sample.t > prev.t) {
                return Err(ReplayError::NonMonotone { row, prev: prev.t, t: sample.t });
            }
        }
        out.push(sample);
    }
    if out.is_empty() {
        return Err(ReplayError::Empty);
    }
    Ok(out)
}

pub fn write_recording<W: Write>(writer: W, samples: &[PilotSample]) -> Result<(), ReplayError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for s in samples {
        let flag = |b: bool| if b { "1".to_string() } else { "0".to_string() };
        let nums = [
            s.t,
            s.com_x,
            s.com_y,
            s.left_foot.x,
            s.left_foot.y,
            s.left_foot.z,
            s.right_foot.x,
            s.right_foot.y,
            s.right_foot.z,
        ];
        let mut row: Vec<String> = nums.iter().map(|v| format!("{v:?}")).collect();
        row.push(flag(s.contact_left));
        row.push(flag(s.contact_right));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Zero-order hold over a recording; ends after the last sample's time.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    samples: Vec<PilotSample>,
    cursor: usize,
}

impl ReplaySource {
    pub fn open(path: &Path) -> Result<Self, ReplayError> {
        Self::from_samples(read_recording(File::open(path)?)?)
    }

    pub fn from_samples(samples: Vec<PilotSample>) -> Result<Self, ReplayError> {
        if samples.is_empty() {
            return Err(ReplayError::Empty);
        }
        Ok(Self { samples, cursor: 0 })
    }

    pub fn samples(&self) -> &[PilotSample] {
        &self.samples
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

const TIME_EPS: f64 = 1e-9;

impl PilotSource for ReplaySource {
    fn poll(&mut self, t: f64) -> PilotPoll {
        if t > self.duration() + TIME_EPS {
            return PilotPoll::End;
        }
        while self.cursor + 1 < self.samples.len() && self.samples[self.cursor + 1].t <= t + TIME_EPS {
            self.cursor += 1;
        }
        PilotPoll::Sample(self.samples[self.cursor])
    }
}
