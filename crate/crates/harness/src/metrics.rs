//! Scalar metrics computed from logged samples.

use std::ops::Range;

use legsim_core::telemetry::{LogRecord, TrialLog};
use legsim_core::world::{integrate_velocity, ImuSample};
use legsim_core::Error;
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpeedSource {
    /// Dead-reckoned from the logged IMU samples.
    ImuIntegrated,
    /// Trunk velocity from the simulator state.
    GroundTruth,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CotBreakdown {
    pub cot: f64,
    /// Mean over samples of the summed clamped actuator power (W).
    pub mean_power: f64,
    pub mean_speed: f64,
    pub samples: usize,
}

/// Per-record speed from integrating the IMU samples of the whole log,
/// starting from the first record's true velocity and attitude.
pub fn imu_speeds(log: &TrialLog, gravity: f64) -> Result<Vec<f64>> {
    let first = log
        .records
        .first()
        .ok_or_else(|| Error::EmptyInput("empty log".into()))?;
    let samples: Vec<ImuSample> = log
        .records
        .iter()
        .map(|r| ImuSample {
            accel: Vector3::from(r.imu_accel),
            gyro: Vector3::from(r.imu_gyro),
            timestamp: r.time,
        })
        .collect();
    let o = first.orientation;
    let attitude = UnitQuaternion::from_quaternion(Quaternion::new(o[0], o[1], o[2], o[3]));
    let trace = integrate_velocity(&samples, Vector3::from(first.velocity), attitude, gravity)?;
    Ok(trace.speeds)
}

/// `COT = P̄ / (M g V̄)` over `window`, with `P̄` the mean summed clamped
/// power and `V̄` the mean Euclidean speed from `source`.
pub fn compute_cot(
    log: &TrialLog,
    window: Range<usize>,
    mass: f64,
    gravity: f64,
    source: SpeedSource,
) -> Result<CotBreakdown> {
    if window.is_empty() || window.end > log.len() {
        return Err(Error::EmptyInput(format!(
            "analysis window {window:?} is empty or outside a log of {} samples",
            log.len()
        ))
        .into());
    }
    let records = &log.records[window.clone()];
    let n = records.len() as f64;
    let mean_power = records.iter().map(LogRecord::total_clamped_power).sum::<f64>() / n;
    let mean_speed = match source {
        SpeedSource::GroundTruth => records.iter().map(|r| Vector3::from(r.velocity).norm()).sum::<f64>() / n,
        SpeedSource::ImuIntegrated => imu_speeds(log, gravity)?[window].iter().sum::<f64>() / n,
    };
    if !(mean_speed > 0.0 && mean_speed.is_finite()) {
        return Err(Error::DegenerateInput(format!("mean speed {mean_speed} must be positive")).into());
    }
    if !(mass > 0.0 && gravity > 0.0) {
        return Err(Error::DegenerateInput("mass and gravity must be positive".into()).into());
    }
    Ok(CotBreakdown {
        cot: mean_power / (mass * gravity * mean_speed),
        mean_power,
        mean_speed,
        samples: records.len(),
    })
}

/// Per-axis root mean squared error over pairs with a finite estimate.
pub fn rmse_axes(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<Vector3<f64>> {
    let mut sum = Vector3::zeros();
    let mut n = 0usize;
    for (est, truth) in pairs {
        if est.iter().all(|v| v.is_finite()) {
            sum += (est - truth).map(|d| d * d);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput("no finite estimate to compare".into()).into());
    }
    Ok((sum / n as f64).map(f64::sqrt))
}

/// Shape of one stride of a foot path in a hip-anchored sagittal frame
/// (`x` forward from the hip, `y` up from the ground-contact level).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrajectoryDescriptors {
    /// Highest minus lowest `y` (m).
    pub peak_vertical: f64,
    /// Largest minus smallest `x` (m).
    pub horizontal_excursion: f64,
    /// Apex `x` relative to the middle of the `x` range, as a fraction of
    /// the half range: 0 symmetric, +1 apex at the front extreme.
    pub asymmetry_index: f64,
}

pub fn describe_path(points: &[[f64; 2]]) -> Result<TrajectoryDescriptors> {
    if points.len() < 2 {
        return Err(Error::EmptyInput("a path needs at least two points".into()).into());
    }
    let fold = |i: usize| {
        points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p[i]), hi.max(p[i]))
        })
    };
    let (x_lo, x_hi) = fold(0);
    let (y_lo, y_hi) = fold(1);
    let apex = points
        .iter()
        .fold(points[0], |best, p| if p[1] > best[1] { *p } else { best });
    let half = 0.5 * (x_hi - x_lo);
    let asymmetry_index = if half > 0.0 {
        (apex[0] - 0.5 * (x_hi + x_lo)) / half
    } else {
        0.0
    };
    Ok(TrajectoryDescriptors {
        peak_vertical: y_hi - y_lo,
        horizontal_excursion: x_hi - x_lo,
        asymmetry_index,
    })
}

/// Largest distance between a point and the point one stride later.
pub fn closure_error(points: &[[f64; 2]], samples_per_stride: usize) -> Result<f64> {
    if samples_per_stride == 0 || points.len() <= samples_per_stride {
        return Err(Error::EmptyInput(format!(
            "closure needs more than {samples_per_stride} samples, got {}",
            points.len()
        ))
        .into());
    }
    Ok(points
        .iter()
        .zip(&points[samples_per_stride..])
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .fold(0.0, f64::max))
}

/// Linear interpolation of a log onto a grid `factor` times finer.
pub fn resample_finer(log: &TrialLog, factor: usize) -> TrialLog {
    if factor <= 1 || log.len() < 2 {
        return log.clone();
    }
    let mut out = TrialLog::new();
    let lerp3 = |a: [f64; 3], b: [f64; 3], s: f64| [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * s);
    let lerp43 = |a: [[f64; 3]; 4], b: [[f64; 3]; 4], s: f64| [0, 1, 2, 3].map(|l| lerp3(a[l], b[l], s));
    for w in log.records.windows(2) {
        for k in 0..factor {
            let s = k as f64 / factor as f64;
            let (a, b) = (&w[0], &w[1]);
            let mut r = a.clone();
            r.time = a.time + (b.time - a.time) * s;
            r.velocity = lerp3(a.velocity, b.velocity, s);
            r.power = lerp43(a.power, b.power, s);
            r.clamped_power = lerp43(a.clamped_power, b.clamped_power, s);
            r.tau = lerp43(a.tau, b.tau, s);
            out.push(r);
        }
    }
    out.push(log.records.last().expect("non-empty").clone());
    out
}
