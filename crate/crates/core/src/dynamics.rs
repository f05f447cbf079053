//! Serial-limb equations of motion, swing-torque feasibility over limb
//! lengths, and a pendulum-period inertia measurement.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DVector, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actuation::ActuatorParams;
use crate::error::{Error, Result};
use crate::kinematics::{link_mass_points, JointAngles};
use crate::morphology::{LimbMorphology, Link, Side};
use crate::multibody::{Body, Frames, JointKind, Multibody};
use crate::spatial::{SpatialInertia, Transform};

pub const STANDARD_GRAVITY: f64 = 9.81;

/// Body indices and foot location of one limb inside a multibody tree.
#[derive(Clone, Copy, Debug)]
pub struct LimbBodies {
    pub trunnion: usize,
    pub femur: usize,
    pub tibia: usize,
    pub tarsus: Option<usize>,
    /// Body carrying the foot point.
    pub foot_body: usize,
    /// Foot point in `foot_body` coordinates.
    pub foot_point: Vector3<f64>,
    /// Generalized-velocity index of the ab/ad joint; hip and knee follow.
    pub first_dof: usize,
}

/// Slender rod along `axis` (unit) with its COM at `com`.
fn rod(mass: f64, length: f64, com: Vector3<f64>, axis: Vector3<f64>) -> SpatialInertia {
    let transverse = mass * length * length / 12.0;
    // I = transverse · (1 − a aᵀ)
    let inertia = transverse * (Matrix3::identity() - axis * axis.transpose());
    SpatialInertia {
        mass,
        com,
        inertia_com: inertia,
    }
}

/// Append a limb's bodies to `mb`. `mount` is the parent-to-hip transform.
pub(crate) fn append_limb(
    mb: &mut Multibody,
    parent: Option<usize>,
    mount: Transform,
    morph: &LimbMorphology,
    side: Side,
    first_dof: usize,
) -> LimbBodies {
    let s = side.sign();
    let pitch_axis = Vector3::new(0.0, -1.0, 0.0);
    let down = Vector3::new(0.0, 0.0, -1.0);
    let payload = |link: Link, base: SpatialInertia, along: Vector3<f64>| match morph.added_mass {
        Some(a) if a.link == link => base.combine(&SpatialInertia::point(a.mass, along * a.position)),
        _ => base,
    };

    let lateral_dir = Vector3::new(0.0, s, 0.0);
    let trunnion = mb.add_body(Body {
        name: "trunnion".into(),
        parent,
        joint: JointKind::Revolute {
            axis: Vector3::new(1.0, 0.0, 0.0),
        },
        dof: first_dof,
        multiplier: 1.0,
        tree: mount,
        inertia: payload(
            Link::Trunnion,
            rod(
                morph.mass(Link::Trunnion),
                morph.l1,
                lateral_dir * morph.com_offset(Link::Trunnion),
                lateral_dir,
            ),
            lateral_dir,
        ),
    });
    let femur = mb.add_body(Body {
        name: "femur".into(),
        parent: Some(trunnion),
        joint: JointKind::Revolute { axis: pitch_axis },
        dof: first_dof + 1,
        multiplier: 1.0,
        tree: Transform::translation(lateral_dir * morph.lateral_offset()),
        inertia: payload(
            Link::Femur,
            rod(
                morph.mass(Link::Femur),
                morph.l2,
                down * morph.com_offset(Link::Femur),
                down,
            ),
            down,
        ),
    });
    let tibia = mb.add_body(Body {
        name: "tibia".into(),
        parent: Some(femur),
        joint: JointKind::Revolute { axis: pitch_axis },
        dof: first_dof + 2,
        multiplier: 1.0,
        tree: Transform::translation(down * morph.l2),
        inertia: payload(
            Link::Tibia,
            rod(
                morph.mass(Link::Tibia),
                morph.l3,
                down * morph.com_offset(Link::Tibia),
                down,
            ),
            down,
        ),
    });
    let tarsus = morph.has_tarsus().then(|| {
        mb.add_body(Body {
            name: "tarsus".into(),
            parent: Some(tibia),
            joint: JointKind::Revolute { axis: pitch_axis },
            dof: first_dof + 2,
            multiplier: -1.0,
            tree: Transform::translation(down * morph.l3),
            inertia: payload(
                Link::Tarsus,
                rod(
                    morph.mass(Link::Tarsus),
                    morph.l4,
                    down * morph.com_offset(Link::Tarsus),
                    down,
                ),
                down,
            ),
        })
    });
    let (foot_body, foot_point) = match tarsus {
        Some(t) => (t, down * morph.l4),
        None => (tibia, down * morph.l3),
    };
    LimbBodies {
        trunnion,
        femur,
        tibia,
        tarsus,
        foot_body,
        foot_point,
        first_dof,
    }
}

/// Fixed-base dynamics of one limb hanging from its hip mount.
#[derive(Clone, Debug)]
pub struct LimbDynamicsModel {
    pub morphology: LimbMorphology,
    pub side: Side,
    /// Gravitational acceleration magnitude (m/s²), acting along -z.
    pub gravity: f64,
    multibody: Multibody,
    bodies: LimbBodies,
}

impl LimbDynamicsModel {
    pub fn new(morph: &LimbMorphology, side: Side) -> Self {
        let mut mb = Multibody::new(3);
        let bodies = append_limb(&mut mb, None, Transform::identity(), morph, side, 0);
        LimbDynamicsModel {
            morphology: morph.clone(),
            side,
            gravity: STANDARD_GRAVITY,
            multibody: mb,
            bodies,
        }
    }

    pub fn with_gravity(mut self, gravity: f64) -> Self {
        self.gravity = gravity;
        self
    }

    pub fn multibody(&self) -> &Multibody {
        &self.multibody
    }

    pub fn bodies(&self) -> &LimbBodies {
        &self.bodies
    }

    fn gravity_vector(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, -self.gravity)
    }

    pub fn frames(&self, q: &JointAngles) -> Frames {
        let qv = DVector::from_column_slice(q.to_vector().as_slice());
        self.multibody.frames(&Transform::identity(), &qv)
    }

    /// Kinetic plus gravitational potential energy (zero potential at the hip).
    pub fn mechanical_energy(&self, q: &JointAngles, qd: &Vector3<f64>) -> f64 {
        let frames = self.frames(q);
        let qdv = DVector::from_column_slice(qd.as_slice());
        self.multibody.kinetic_energy(&frames, &qdv) + self.multibody.potential_energy(&frames, &self.gravity_vector())
    }

    pub fn mass_matrix(&self, q: &JointAngles) -> Matrix3<f64> {
        let m = self.multibody.mass_matrix(&self.frames(q));
        Matrix3::from_fn(|r, c| m[(r, c)])
    }
}

/// Joint torques that realize `(q, q̇, q̈)` against gravity.
pub fn inverse_dynamics(
    model: &LimbDynamicsModel,
    q: &JointAngles,
    qd: &Vector3<f64>,
    qdd: &Vector3<f64>,
) -> Vector3<f64> {
    let frames = model.frames(q);
    let tau = model.multibody.inverse_dynamics(
        &frames,
        &DVector::from_column_slice(qd.as_slice()),
        &DVector::from_column_slice(qdd.as_slice()),
        &model.gravity_vector(),
        None,
    );
    Vector3::new(tau[0], tau[1], tau[2])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SwingSample {
    pub time: f64,
    pub q: JointAngles,
    pub qd: Vector3<f64>,
    pub qdd: Vector3<f64>,
}

/// Sinusoidal joint-space swing used for actuator sizing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwingSpec {
    /// Hip sweep amplitude (rad).
    pub hip_amplitude: f64,
    /// Mean knee flexion (rad).
    pub knee_mean: f64,
    /// Knee sweep amplitude (rad).
    pub knee_amplitude: f64,
    /// Knee phase lead over the hip (rad).
    pub knee_phase: f64,
    /// Stride frequency (Hz).
    pub frequency: f64,
    pub samples: usize,
}

impl Default for SwingSpec {
    /// ±30° hip sweep at the 2 Hz stride frequency of a 0.5 s trot period.
    fn default() -> Self {
        SwingSpec {
            hip_amplitude: 30f64.to_radians(),
            knee_mean: 1.2,
            knee_amplitude: 0.4,
            knee_phase: PI / 2.0,
            frequency: 2.0,
            samples: 200,
        }
    }
}

impl SwingSpec {
    pub fn with_frequency(mut self, frequency: f64) -> Self {
        self.frequency = frequency;
        self
    }

    /// One period of the swing, analytically differentiated.
    pub fn trajectory(&self) -> Vec<SwingSample> {
        let w = 2.0 * PI * self.frequency;
        let period = 1.0 / self.frequency;
        (0..self.samples)
            .map(|i| {
                let t = period * i as f64 / self.samples as f64;
                let (sh, ch) = (w * t).sin_cos();
                let (sk, ck) = (w * t + self.knee_phase).sin_cos();
                SwingSample {
                    time: t,
                    q: JointAngles::new(0.0, self.hip_amplitude * sh, self.knee_mean + self.knee_amplitude * sk),
                    qd: Vector3::new(0.0, self.hip_amplitude * w * ch, self.knee_amplitude * w * ck),
                    qdd: Vector3::new(0.0, -self.hip_amplitude * w * w * sh, -self.knee_amplitude * w * w * sk),
                }
            })
            .collect()
    }
}

/// Relative tolerance for derivative consistency checks on swing samples.
pub const TRAJECTORY_CONSISTENCY_TOL: f64 = 0.05;

fn check_consistency(swing: &[SwingSample]) -> Result<()> {
    for w in swing.windows(2) {
        if !(w[1].time > w[0].time) {
            return Err(Error::InconsistentTrajectory(format!(
                "timestamps must increase strictly (t = {} then {})",
                w[0].time, w[1].time
            )));
        }
    }
    let scale = |f: &dyn Fn(&SwingSample) -> Vector3<f64>| swing.iter().map(|s| f(s).amax()).fold(0.0, f64::max);
    let qd_scale = scale(&|s| s.qd);
    let qdd_scale = scale(&|s| s.qdd);
    for (i, w) in swing.windows(3).enumerate() {
        let dt = w[2].time - w[0].time;
        let fd_qd = (w[2].q.to_vector() - w[0].q.to_vector()) / dt;
        let fd_qdd = (w[2].qd - w[0].qd) / dt;
        let err_qd = (fd_qd - w[1].qd).amax();
        let err_qdd = (fd_qdd - w[1].qdd).amax();
        if err_qd > TRAJECTORY_CONSISTENCY_TOL * qd_scale + 1e-9 {
            return Err(Error::InconsistentTrajectory(format!(
                "velocity at sample {} disagrees with finite differences by {err_qd:.3e}",
                i + 1
            )));
        }
        if err_qdd > TRAJECTORY_CONSISTENCY_TOL * qdd_scale + 1e-9 {
            return Err(Error::InconsistentTrajectory(format!(
                "acceleration at sample {} disagrees with finite differences by {err_qdd:.3e}",
                i + 1
            )));
        }
    }
    Ok(())
}

/// Per-joint peak `|τ|` over a swing.
pub fn max_swing_torque(model: &LimbDynamicsModel, swing: &[SwingSample]) -> Result<Vector3<f64>> {
    if swing.is_empty() {
        return Err(Error::EmptyInput("swing trajectory has no samples".into()));
    }
    check_consistency(swing)?;
    let mut peak = Vector3::zeros();
    for s in swing {
        let tau = inverse_dynamics(model, &s.q, &s.qd, &s.qdd);
        peak = peak.zip_map(&tau, |p: f64, t: f64| p.max(t.abs()));
    }
    Ok(peak)
}

/// Lengths and mass scaling for a feasibility sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub femur_min: f64,
    pub femur_max: f64,
    pub tibia_min: f64,
    pub tibia_max: f64,
    pub cells: usize,
    /// Femur mass per unit length (kg/m).
    pub femur_density: f64,
    /// Tibia mass per unit length (kg/m).
    pub tibia_density: f64,
    /// Trunnion and knee direction come from this limb; lengths and masses
    /// of femur and tibia are replaced per cell.
    pub base_limb: LimbMorphology,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            femur_min: 0.05,
            femur_max: 0.6,
            tibia_min: 0.05,
            tibia_max: 0.6,
            cells: 50,
            femur_density: 1.25,
            tibia_density: 0.75,
            base_limb: LimbMorphology::default(),
        }
    }
}

impl GridSpec {
    fn axis(min: f64, max: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![min];
        }
        (0..n).map(|i| min + (max - min) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn femur_lengths(&self) -> Vec<f64> {
        Self::axis(self.femur_min, self.femur_max, self.cells)
    }

    pub fn tibia_lengths(&self) -> Vec<f64> {
        Self::axis(self.tibia_min, self.tibia_max, self.cells)
    }

    pub fn limb(&self, femur: f64, tibia: f64) -> LimbMorphology {
        let mut limb = self.base_limb.clone();
        limb.l2 = femur;
        limb.l3 = tibia;
        limb.link_masses[Link::Femur.index()] = self.femur_density * femur;
        limb.link_masses[Link::Tibia.index()] = self.tibia_density * tibia;
        limb.added_mass = None;
        limb.center_coms();
        limb
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FeasibilityCell {
    pub femur: f64,
    pub tibia: f64,
    pub feasible: bool,
    pub peak_torque: [f64; 3],
    pub peak_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeasibilityMap {
    pub femur_lengths: Vec<f64>,
    pub tibia_lengths: Vec<f64>,
    /// Row-major: femur index outer, tibia index inner.
    pub cells: Vec<FeasibilityCell>,
    pub torque_limit: f64,
    pub speed_limit: f64,
    /// Modelling assumptions echoed into every export.
    pub assumptions: Vec<(String, String)>,
}

impl FeasibilityMap {
    pub fn cell(&self, femur_index: usize, tibia_index: usize) -> &FeasibilityCell {
        &self.cells[femur_index * self.tibia_lengths.len() + tibia_index]
    }

    pub fn feasible_count(&self) -> usize {
        self.cells.iter().filter(|c| c.feasible).count()
    }

    /// Every cell feasible in `other` is feasible here (same grid required).
    pub fn contains(&self, other: &FeasibilityMap) -> bool {
        self.cells.len() == other.cells.len()
            && self
                .cells
                .iter()
                .zip(&other.cells)
                .all(|(a, b)| a.femur == b.femur && a.tibia == b.tibia && (a.feasible || !b.feasible))
    }

    /// Contains `other` and has at least one extra feasible cell.
    pub fn strictly_contains(&self, other: &FeasibilityMap) -> bool {
        self.contains(other) && self.feasible_count() > other.feasible_count()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.assumptions {
            let _ = writeln!(out, "# {k}: {v}");
        }
        out.push_str("femur_m,tibia_m,feasible,peak_abduction_nm,peak_hip_nm,peak_knee_nm,peak_speed_rad_s\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.femur,
                c.tibia,
                u8::from(c.feasible),
                c.peak_torque[0],
                c.peak_torque[1],
                c.peak_torque[2],
                c.peak_speed
            );
        }
        out
    }
}

/// Sweep femur/tibia lengths and mark cells whose swing torques and speeds fit
/// within the actuator's output limits at its gear ratio.
pub fn feasibility_map(actuator: &ActuatorParams, swing: &SwingSpec, grid: &GridSpec) -> Result<FeasibilityMap> {
    if !(grid.femur_min > 0.0
        && grid.tibia_min > 0.0
        && grid.femur_max >= grid.femur_min
        && grid.tibia_max >= grid.tibia_min
        && grid.cells > 0)
    {
        return Err(Error::DegenerateInput(
            "feasibility grid bounds must be positive".into(),
        ));
    }
    let trajectory = swing.trajectory();
    let peak_speed = trajectory.iter().map(|s| s.qd.amax()).fold(0.0, f64::max);
    let torque_limit = actuator.max_output_torque();
    let speed_limit = actuator.max_output_speed();
    let femurs = grid.femur_lengths();
    let tibias = grid.tibia_lengths();
    let pairs: Vec<(f64, f64)> = femurs
        .iter()
        .flat_map(|&f| tibias.iter().map(move |&t| (f, t)))
        .collect();

    let cells = pairs
        .par_iter()
        .map(|&(femur, tibia)| {
            let model = LimbDynamicsModel::new(&grid.limb(femur, tibia), Side::Left);
            let peak = max_swing_torque(&model, &trajectory)?;
            let feasible = peak.iter().all(|&t| t <= torque_limit) && peak_speed <= speed_limit;
            Ok(FeasibilityCell {
                femur,
                tibia,
                feasible,
                peak_torque: [peak.x, peak.y, peak.z],
                peak_speed,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let assumptions = vec![
        ("gear_ratio".to_string(), actuator.gear_ratio.to_string()),
        ("output_torque_limit_nm".to_string(), torque_limit.to_string()),
        ("output_speed_limit_rad_s".to_string(), speed_limit.to_string()),
        (
            "swing".to_string(),
            format!(
                "assumed sinusoid: hip ±{:.1} deg, knee {:.2}±{:.2} rad, {} Hz",
                swing.hip_amplitude.to_degrees(),
                swing.knee_mean,
                swing.knee_amplitude,
                swing.frequency
            ),
        ),
        (
            "link_mass".to_string(),
            format!(
                "femur {} kg/m, tibia {} kg/m, transmission lossless",
                grid.femur_density, grid.tibia_density
            ),
        ),
    ];
    Ok(FeasibilityMap {
        femur_lengths: femurs,
        tibia_lengths: tibias,
        cells,
        torque_limit,
        speed_limit,
        assumptions,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PendulumMeasurement {
    pub period: f64,
    pub inertia: f64,
    pub swinging_mass: f64,
    pub com_distance: f64,
}

/// Largest release amplitude accepted by [`pendulum_moi`] (rad).
pub const MAX_PENDULUM_AMPLITUDE: f64 = 0.1;

/// Release the limb from `amplitude` about its hanging equilibrium, rotating
/// about the hip pitch axis with ab/ad at zero and the knee locked at
/// `pose.knee`; time the swing and recover `I = T² m g d / 4π²`.
pub fn pendulum_moi(morph: &LimbMorphology, pose: &JointAngles, amplitude: f64) -> Result<PendulumMeasurement> {
    if !(amplitude > 0.0 && amplitude <= MAX_PENDULUM_AMPLITUDE) {
        return Err(Error::DegenerateInput(format!(
            "pendulum amplitude must lie in (0, {MAX_PENDULUM_AMPLITUDE}] rad, got {amplitude}"
        )));
    }
    if !pose.is_finite() {
        return Err(Error::InvalidPose(format!("non-finite joint angles {pose:?}")));
    }
    let model = LimbDynamicsModel::new(morph, Side::Left);
    let g = model.gravity;

    // Mass and COM of the swinging part (the trunnion and anything on it stay
    // put), as one would weigh and balance it on a bench.
    let hanging = JointAngles::new(0.0, 0.0, pose.knee);
    let on_trunnion = matches!(morph.added_mass, Some(a) if a.link == Link::Trunnion);
    let points = link_mass_points(morph, Side::Left, &hanging);
    let last = points.len() - 1;
    let (mass, moment) = points
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != 0 && !(on_trunnion && i == last))
        .fold((0.0, Vector3::zeros()), |(m, s), (_, (mi, p))| (m + mi, s + *mi * p));
    if mass <= 0.0 {
        return Err(Error::DegenerateInput("limb has no swinging mass".into()));
    }
    let com = moment / mass;
    let com_distance = com.x.hypot(com.z);
    if com_distance <= 0.0 {
        return Err(Error::DegenerateInput(
            "swinging mass is centered on the hip axis".into(),
        ));
    }
    // Hip angle that puts the COM straight below the axis.
    let equilibrium = -com.x.atan2(-com.z);

    // Hip-only dynamics from the multibody model: θ̈ = −h(θ, θ̇) / M_hh(θ).
    let zero = DVector::zeros(3);
    let unit = DVector::from_vec(vec![0.0, 1.0, 0.0]);
    let accel = |theta: f64, rate: f64| -> f64 {
        let frames = model.frames(&JointAngles::new(0.0, equilibrium + theta, pose.knee));
        let qd = DVector::from_vec(vec![0.0, rate, 0.0]);
        let h = model
            .multibody
            .inverse_dynamics(&frames, &qd, &zero, &model.gravity_vector(), None)[1];
        let m_hh = model
            .multibody
            .inverse_dynamics(&frames, &zero, &unit, &Vector3::zeros(), None)[1];
        -h / m_hh
    };

    let estimate = 2.0 * PI * (model.mass_matrix(&hanging)[(1, 1)] / (mass * g * com_distance)).sqrt();
    let dt = estimate / 4000.0;
    let periods = 4;
    let (mut theta, mut rate, mut t) = (amplitude, 0.0, 0.0);
    let mut crossings: Vec<f64> = Vec::new();
    while crossings.len() <= periods && t < 100.0 * estimate {
        let (k1t, k1r) = (rate, accel(theta, rate));
        let (k2t, k2r) = (
            rate + 0.5 * dt * k1r,
            accel(theta + 0.5 * dt * k1t, rate + 0.5 * dt * k1r),
        );
        let (k3t, k3r) = (
            rate + 0.5 * dt * k2r,
            accel(theta + 0.5 * dt * k2t, rate + 0.5 * dt * k2r),
        );
        let (k4t, k4r) = (rate + dt * k3r, accel(theta + dt * k3t, rate + dt * k3r));
        let next_theta = theta + dt / 6.0 * (k1t + 2.0 * k2t + 2.0 * k3t + k4t);
        let next_rate = rate + dt / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r);
        // Downward crossings of the equilibrium, linearly interpolated.
        if theta > 0.0 && next_theta <= 0.0 {
            crossings.push(t + dt * theta / (theta - next_theta));
        }
        theta = next_theta;
        rate = next_rate;
        t += dt;
    }
    if crossings.len() <= periods {
        return Err(Error::DegenerateInput("limb did not oscillate".into()));
    }
    let period = (crossings[periods] - crossings[0]) / periods as f64;
    Ok(PendulumMeasurement {
        period,
        inertia: period * period * mass * g * com_distance / (4.0 * PI * PI),
        swinging_mass: mass,
        com_distance,
    })
}
