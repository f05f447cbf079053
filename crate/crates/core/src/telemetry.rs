//! Append-only trial log with versioned CSV and JSON-lines encodings.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actuation::{ActuatorFrame, PowerSample};
use crate::error::{Error, Result};
use crate::morphology::Leg;

pub const LOG_SCHEMA_VERSION: u32 = 1;

/// One logged instant. Forces are those of the ground on each foot,
/// expressed in the trunk frame. Joint arrays are FR, FL, HR, HL, each
/// ab/ad, hip, knee.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time: f64,
    pub position: [f64; 3],
    /// `w, x, y, z`.
    pub orientation: [f64; 4],
    /// World frame.
    pub velocity: [f64; 3],
    /// Trunk frame.
    pub angular_velocity: [f64; 3],
    pub q: [[f64; 3]; 4],
    pub qd: [[f64; 3]; 4],
    /// Torque inferred from motor current.
    pub tau: [[f64; 3]; 4],
    /// Scheduled stance.
    pub stance: [bool; 4],
    pub contact: [bool; 4],
    /// NaN where the limb is too close to singular to estimate.
    pub grf_estimate: [[f64; 3]; 4],
    pub grf_true: [[f64; 3]; 4],
    /// Foot position relative to its hip, trunk frame.
    pub foot_hip: [[f64; 3]; 4],
    /// World frame.
    pub foot_world: [[f64; 3]; 4],
    /// Electrical power per actuator (W).
    pub power: [[f64; 3]; 4],
    /// Same, regeneration not credited.
    pub clamped_power: [[f64; 3]; 4],
    pub imu_accel: [f64; 3],
    pub imu_gyro: [f64; 3],
}

impl LogRecord {
    pub fn total_clamped_power(&self) -> f64 {
        self.clamped_power.iter().flatten().sum()
    }

    pub fn actuator_frame(&self) -> ActuatorFrame {
        let power = self
            .power
            .iter()
            .flatten()
            .zip(self.clamped_power.iter().flatten())
            .map(|(&power, &clamped_power)| PowerSample {
                current: f64::NAN,
                voltage: f64::NAN,
                power,
                clamped_power,
                timestamp: self.time,
            })
            .collect();
        ActuatorFrame {
            time: self.time,
            power,
            torque: self.tau.iter().flatten().copied().collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub records: Vec<LogRecord>,
}

const JOINTS: [&str; 3] = ["abad", "hip", "knee"];
const AXES: [&str; 3] = ["x", "y", "z"];

fn push_leg_columns(header: &mut Vec<String>, prefix: &str, names: &[&str; 3]) {
    for leg in Leg::ALL {
        for n in names {
            header.push(format!("{prefix}_{}_{n}", leg.short_name()));
        }
    }
}

fn push_values(line: &mut String, values: impl IntoIterator<Item = f64>) {
    for v in values {
        let _ = write!(line, ",{v}");
    }
}

impl TrialLog {
    pub fn new() -> Self {
        TrialLog::default()
    }

    pub fn push(&mut self, record: LogRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn csv_header() -> Vec<String> {
        let mut h: Vec<String> = vec!["time".into()];
        h.extend(["x", "y", "z"].map(|a| format!("position_{a}")));
        h.extend(["w", "x", "y", "z"].map(|a| format!("orientation_{a}")));
        h.extend(["x", "y", "z"].map(|a| format!("velocity_{a}")));
        h.extend(["x", "y", "z"].map(|a| format!("angular_velocity_{a}")));
        push_leg_columns(&mut h, "q", &JOINTS);
        push_leg_columns(&mut h, "qd", &JOINTS);
        push_leg_columns(&mut h, "tau", &JOINTS);
        for leg in Leg::ALL {
            h.push(format!("stance_{}", leg.short_name()));
        }
        for leg in Leg::ALL {
            h.push(format!("contact_{}", leg.short_name()));
        }
        push_leg_columns(&mut h, "grf_est", &AXES);
        push_leg_columns(&mut h, "grf_true", &AXES);
        push_leg_columns(&mut h, "foot_hip", &AXES);
        push_leg_columns(&mut h, "foot_world", &AXES);
        push_leg_columns(&mut h, "power", &JOINTS);
        push_leg_columns(&mut h, "clamped_power", &JOINTS);
        h.extend(["x", "y", "z"].map(|a| format!("imu_accel_{a}")));
        h.extend(["x", "y", "z"].map(|a| format!("imu_gyro_{a}")));
        h
    }

    /// First line carries the schema version; second line the column names.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# legsim telemetry schema {LOG_SCHEMA_VERSION}\n");
        out.push_str(&Self::csv_header().join(","));
        out.push('\n');
        let flat = |a: &[[f64; 3]; 4]| a.iter().flatten().copied().collect::<Vec<_>>();
        for r in &self.records {
            let mut line = format!("{}", r.time);
            push_values(&mut line, r.position);
            push_values(&mut line, r.orientation);
            push_values(&mut line, r.velocity);
            push_values(&mut line, r.angular_velocity);
            push_values(&mut line, flat(&r.q));
            push_values(&mut line, flat(&r.qd));
            push_values(&mut line, flat(&r.tau));
            push_values(&mut line, r.stance.map(|b| b as u8 as f64));
            push_values(&mut line, r.contact.map(|b| b as u8 as f64));
            push_values(&mut line, flat(&r.grf_estimate));
            push_values(&mut line, flat(&r.grf_true));
            push_values(&mut line, flat(&r.foot_hip));
            push_values(&mut line, flat(&r.foot_world));
            push_values(&mut line, flat(&r.power));
            push_values(&mut line, flat(&r.clamped_power));
            push_values(&mut line, r.imu_accel);
            push_values(&mut line, r.imu_gyro);
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// A header object, then one record object per line. Non-finite values
    /// encode as `null`.
    pub fn to_json_lines(&self) -> String {
        let mut out = serde_json::json!({ "schema": "legsim-telemetry", "version": LOG_SCHEMA_VERSION }).to_string();
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }

    pub fn write_json_lines(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_json_lines().as_bytes())
    }

    pub fn actuator_frames(&self) -> Vec<ActuatorFrame> {
        self.records.iter().map(LogRecord::actuator_frame).collect()
    }

    /// Records with `start <= time < end`.
    pub fn window(&self, start: f64, end: f64) -> &[LogRecord] {
        let a = self.records.partition_point(|r| r.time < start);
        let b = self.records.partition_point(|r| r.time < end);
        &self.records[a..b]
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(Error::Io)?;
    f.write_all(bytes).map_err(Error::Io)?;
    Ok(())
}
