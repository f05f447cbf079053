//! The reference experiments. Each returns a structured outcome plus the
//! report built from it; independent runs execute on the rayon pool and
//! are reassembled in a fixed order.

use std::fmt;
use std::str::FromStr;

use legsim_core::actuation::{accumulate_energy, ActuatorFrame, EnergyTotals};
use legsim_core::controller::{BodyCommand, Controller};
use legsim_core::dynamics::{feasibility_map, pendulum_moi, FeasibilityMap};
use legsim_core::kinematics::calibrate_axes;
use legsim_core::morphology::{moment_of_inertia_about_hip, BodyMorphology, Leg, Link};
use legsim_core::simulation::{RotationTrace, Simulation};
use legsim_core::telemetry::{LogRecord, TrialLog};
use legsim_core::world::{JointFriction, WorldParams};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::error::{HarnessError, Result};
use crate::metrics::{
    closure_error, compute_cot, describe_path, rmse_axes, CotBreakdown, SpeedSource, TrajectoryDescriptors,
};
use crate::report::{format_value, Plot, Provenance, Series, Table, TrialReport, REPORT_SCHEMA_VERSION};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExperimentId {
    GrfValidation,
    LimbRatioKinematics,
    InertiaCot,
    FeasibilityMap,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 4] = [
        ExperimentId::GrfValidation,
        ExperimentId::LimbRatioKinematics,
        ExperimentId::InertiaCot,
        ExperimentId::FeasibilityMap,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::GrfValidation => "grf-validation",
            ExperimentId::LimbRatioKinematics => "limb-ratio-kinematics",
            ExperimentId::InertiaCot => "inertia-cot",
            ExperimentId::FeasibilityMap => "feasibility-map",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL.into_iter().find(|id| id.name() == s).ok_or_else(|| {
            let known: Vec<&str> = ExperimentId::ALL.iter().map(|id| id.name()).collect();
            HarnessError::Config(format!(
                "unknown experiment {s:?}; expected one of {}",
                known.join(", ")
            ))
        })
    }
}

pub fn run_experiment(id: ExperimentId, config: &Config) -> Result<TrialReport> {
    Ok(match id {
        ExperimentId::GrfValidation => run_grf_validation(config)?.report,
        ExperimentId::LimbRatioKinematics => run_limb_ratio(config)?.report,
        ExperimentId::InertiaCot => run_inertia_cot(config)?.report,
        ExperimentId::FeasibilityMap => run_feasibility(config)?.report,
    })
}

/// Every report names the gait timing it assumed.
pub fn provenance(config: &Config, mut assumptions: Vec<String>) -> Provenance {
    assumptions.insert(
        0,
        format!(
            "gait period {} s, duty factor {} (assumed)",
            config.gait.period, config.gait.duty_factor
        ),
    );
    Provenance {
        schema_version: REPORT_SCHEMA_VERSION,
        generator: format!("legsim {}", env!("CARGO_PKG_VERSION")),
        seed: config.seed,
        config: config.to_toml(),
        assumptions,
    }
}

/// Stream seed for run `index` under the global `seed` (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn new_simulation(config: &Config, morphology: &BodyMorphology, world: WorldParams) -> Result<Simulation> {
    Ok(Simulation::new(
        morphology,
        &config.actuator,
        world,
        config.controller.clone(),
        config.gait.clone(),
        config.simulation.clone(),
    )?)
}

fn attitude(r: &LogRecord) -> UnitQuaternion<f64> {
    let o = r.orientation;
    UnitQuaternion::from_quaternion(Quaternion::new(o[0], o[1], o[2], o[3]))
}

/// Why a walking log counts as a fall, if it does.
fn instability(log: &TrialLog, stand_height: f64) -> Option<String> {
    log.records.iter().find_map(|r| {
        let tilt = (attitude(r) * Vector3::z()).z.clamp(-1.0, 1.0).acos();
        if r.position[2] < 0.5 * stand_height {
            Some(format!(
                "trunk dropped to {:.3} m at t = {:.3} s",
                r.position[2], r.time
            ))
        } else if tilt > 0.5 {
            Some(format!("trunk tilted {tilt:.3} rad at t = {:.3} s", r.time))
        } else {
            None
        }
    })
}

fn legs_table_label(leg: Leg) -> &'static str {
    match leg {
        Leg::FrontRight => "Front Right",
        Leg::FrontLeft => "Front Left",
        Leg::HindRight => "Back Right",
        Leg::HindLeft => "Back Left",
    }
}

fn metric_leg(leg: Leg) -> &'static str {
    match leg {
        Leg::FrontRight => "front_right",
        Leg::FrontLeft => "front_left",
        Leg::HindRight => "hind_right",
        Leg::HindLeft => "hind_left",
    }
}

// ---------------------------------------------------------------------------
// Simple trot

pub struct TrotOutcome {
    pub log: TrialLog,
    pub report: TrialReport,
}

/// Stand for `run.settle`, then trot forward at `run.speed` for `run.duration`.
pub fn run_trot(config: &Config) -> Result<TrotOutcome> {
    let mut sim = new_simulation(config, &config.morphology, config.world.clone())?;
    let run = &config.run;
    sim.run_for(run.settle, |_| BodyCommand::stand())?;
    let start = sim.log().len();
    sim.run_for(run.duration, |_| BodyCommand::walk(run.speed))?;
    let mass = sim.controller().total_mass();
    let log = sim.into_log();
    let mut report = TrialReport::new(
        "simulate",
        provenance(
            config,
            vec![
                "COT over the walking phase, ground-truth speed".into(),
                format!("total mass {mass} kg"),
            ],
        ),
    );
    let walk = start..log.len();
    let last = log.records.last().expect("non-empty log");
    report.metric(
        "distance_m",
        last.position[0] - log.records[start.saturating_sub(1)].position[0],
    );
    report.metric("final_height_m", last.position[2]);
    match compute_cot(&log, walk.clone(), mass, config.world.gravity, SpeedSource::GroundTruth) {
        Ok(c) => {
            report.metric("cot", c.cot);
            report.metric("mean_power_w", c.mean_power);
            report.metric("mean_speed_m_s", c.mean_speed);
        }
        Err(e) => report.failures.push(format!("cot: {e}")),
    }
    if let Some(why) = instability(&log, config.controller.stand_height) {
        report.failures.push(format!("unstable gait: {why}"));
    }
    report.telemetry.push(("telemetry".into(), log.clone()));
    Ok(TrotOutcome { log, report })
}

// ---------------------------------------------------------------------------
// Inertia and cost of transport

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Payload {
    Unloaded,
    Femur,
    Tibia,
}

impl Payload {
    pub const ALL: [Payload; 3] = [Payload::Unloaded, Payload::Femur, Payload::Tibia];

    pub fn link(self) -> Option<Link> {
        match self {
            Payload::Unloaded => None,
            Payload::Femur => Some(Link::Femur),
            Payload::Tibia => Some(Link::Tibia),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Payload::Unloaded => "unloaded",
            Payload::Femur => "femur",
            Payload::Tibia => "tibia",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CotRun {
    pub payload: Payload,
    pub seed: u64,
    pub cot: CotBreakdown,
    /// Same window, trunk velocity from the simulator state.
    pub cot_ground_truth: CotBreakdown,
    pub energy: EnergyTotals,
    pub total_mass: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimbInertia {
    pub analytic: f64,
    pub pendulum: f64,
}

pub struct InertiaCotOutcome {
    /// Completed runs, payload-major then seed order.
    pub runs: Vec<CotRun>,
    pub inertia: [LimbInertia; 3],
    pub failures: Vec<String>,
    pub report: TrialReport,
}

impl InertiaCotOutcome {
    pub fn run(&self, payload: Payload, seed: u64) -> Option<&CotRun> {
        self.runs.iter().find(|r| r.payload == payload && r.seed == seed)
    }

    /// Unloaded < femur < tibia for every seed, with no failed runs.
    pub fn ordering_holds(&self, seeds: &[u64]) -> bool {
        self.failures.is_empty() && cot_ordered(&self.runs, seeds)
    }
}

fn cot_ordered(runs: &[CotRun], seeds: &[u64]) -> bool {
    let find = |p: Payload, s: u64| runs.iter().find(|r| r.payload == p && r.seed == s).map(|r| r.cot.cot);
    seeds.iter().all(|&s| {
        match (
            find(Payload::Unloaded, s),
            find(Payload::Femur, s),
            find(Payload::Tibia, s),
        ) {
            (Some(u), Some(f), Some(t)) => u < f && f < t,
            _ => false,
        }
    })
}

const HARDWARE_COT_REFERENCE: [(&str, [f64; 3]); 5] = [
    ("Peak power", [9584.20, 18603.1, 21109.03]),
    ("Mean power", [5070.20, 9425.62, 9636.00]),
    ("Peak torque", [21.59, 25.49, 27.70]),
    ("Mean torque", [10.66, 13.19, 13.85]),
    ("Cost of transport", [126.12, 135.57, 195.41]),
];

fn inertia_run(config: &Config, payload: Payload, seed: u64) -> Result<CotRun> {
    let spec = &config.experiments.inertia_cot;
    let morphology = config.loaded_morphology(payload.link(), spec.added_mass);
    let stream = derive_seed(config.seed, seed);
    let mut world = config.world.clone();
    world.imu = spec.imu.clone();
    world.imu.seed = stream;
    let mut sim = new_simulation(config, &morphology, world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let jitter = spec.initial_velocity_jitter;
    let speed = spec.profile.speed();
    let walk = config.controller.velocity_ramp + spec.profile.steady_duration();
    sim.run_for(0.5, |_| BodyCommand::stand())?;
    if jitter > 0.0 {
        let v = Vector3::new(
            rng.random_range(-jitter..=jitter),
            rng.random_range(-jitter..=jitter),
            0.0,
        );
        sim.world_mut().set_trunk_velocity(v, Vector3::zeros());
    }
    sim.run_for(walk, |_| BodyCommand::walk(speed))?;
    let mass = sim.controller().total_mass();
    let log = sim.into_log();
    if let Some(why) = instability(&log, config.controller.stand_height) {
        return Err(HarnessError::Report(format!("unstable gait: {why}")));
    }
    let n = spec.analysis_samples;
    if log.len() < n {
        return Err(HarnessError::Report(format!(
            "only {} samples logged, {n} needed",
            log.len()
        )));
    }
    let window = log.len() - n..log.len();
    let g = config.world.gravity;
    let cot = compute_cot(&log, window.clone(), mass, g, spec.speed_source)?;
    let cot_ground_truth = compute_cot(&log, window.clone(), mass, g, SpeedSource::GroundTruth)?;
    let frames: Vec<ActuatorFrame> = log.records[window].iter().map(LogRecord::actuator_frame).collect();
    let energy = accumulate_energy(&frames)?;
    Ok(CotRun {
        payload,
        seed,
        cot,
        cot_ground_truth,
        energy,
        total_mass: mass,
    })
}

/// Limb inertia about the hip pitch axis in the standing pose.
pub fn limb_inertia(config: &Config, payload: Payload) -> Result<LimbInertia> {
    let spec = &config.experiments.inertia_cot;
    let morphology = config.loaded_morphology(payload.link(), spec.added_mass);
    let pose = Controller::nominal_pose(&morphology, Leg::FrontRight, config.controller.stand_height)?;
    let limb = morphology.limb(Leg::FrontRight);
    Ok(LimbInertia {
        analytic: moment_of_inertia_about_hip(limb, &pose)?,
        pendulum: pendulum_moi(limb, &pose, spec.pendulum_amplitude)?.inertia,
    })
}

pub fn run_inertia_cot(config: &Config) -> Result<InertiaCotOutcome> {
    let spec = &config.experiments.inertia_cot;
    let inertia = [
        limb_inertia(config, Payload::Unloaded)?,
        limb_inertia(config, Payload::Femur)?,
        limb_inertia(config, Payload::Tibia)?,
    ];
    let jobs: Vec<(Payload, u64)> = Payload::ALL
        .iter()
        .flat_map(|&p| spec.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<Result<CotRun>> = jobs.par_iter().map(|&(p, s)| inertia_run(config, p, s)).collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for ((p, s), r) in jobs.iter().zip(results) {
        match r {
            Ok(run) => runs.push(run),
            Err(e) => failures.push(format!("{} seed {s}: {e}", p.name())),
        }
    }

    let profile = spec.profile;
    let mut report = TrialReport::new(
        "inertia-cot",
        provenance(
            config,
            vec![
                format!(
                    "profile {}: {} m/s, {} s steady after the speed ramp",
                    profile.name(),
                    profile.speed(),
                    profile.steady_duration()
                ),
                format!("{} kg per limb at the midpoint of the loaded link", spec.added_mass),
                format!(
                    "{} analysis samples at the logging rate, from the end of each run",
                    spec.analysis_samples
                ),
                format!("speed source {:?}", spec.speed_source),
                "power: peak and mean of the summed clamped electrical power of all 12 actuators".into(),
                "torque: peak and mean over actuators and samples of |tau|".into(),
                "limb inertia about the hip pitch axis in the standing pose".into(),
                format!(
                    "seeds drive IMU noise and an initial trunk velocity jitter of up to {} m/s",
                    spec.initial_velocity_jitter
                ),
            ],
        ),
    );
    report.failures = failures.clone();
    for run in &runs {
        let k = format!("{}.seed{}", run.payload.name(), run.seed);
        report.metric(format!("{k}.cot"), run.cot.cot);
        report.metric(format!("{k}.cot_ground_truth"), run.cot_ground_truth.cot);
        report.metric(format!("{k}.mean_speed_m_s"), run.cot.mean_speed);
        report.metric(format!("{k}.peak_power_w"), run.energy.peak_power);
        report.metric(format!("{k}.mean_power_w"), run.energy.mean_power);
        report.metric(format!("{k}.peak_torque_nm"), run.energy.peak_torque);
        report.metric(format!("{k}.mean_torque_nm"), run.energy.mean_torque);
        report.metric(format!("{k}.samples"), run.cot.samples as f64);
    }
    for (p, i) in Payload::ALL.iter().zip(&inertia) {
        report.metric(format!("{}.moi_analytic_kgm2", p.name()), i.analytic);
        report.metric(format!("{}.moi_pendulum_kgm2", p.name()), i.pendulum);
    }
    report.metric("moi_tibia_over_femur", inertia[2].pendulum / inertia[1].pendulum);

    let mut table = Table::new(
        format!("Performance while moving, mean over {} seeds", spec.seeds.len()),
        &["Metric", "Unloaded", "Femur", "Tibia"],
    );
    let mean = |p: Payload, f: &dyn Fn(&CotRun) -> f64| {
        let xs: Vec<f64> = runs.iter().filter(|r| r.payload == p).map(f).collect();
        if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    type Column<'a> = (&'a str, &'a dyn Fn(&CotRun) -> f64);
    let rows: [Column; 6] = [
        ("Peak power (W)", &|r| r.energy.peak_power),
        ("Mean power (W)", &|r| r.energy.mean_power),
        ("Peak torque (N m)", &|r| r.energy.peak_torque),
        ("Mean torque (N m)", &|r| r.energy.mean_torque),
        ("Cost of transport", &|r| r.cot.cot),
        ("Cost of transport, true speed", &|r| r.cot_ground_truth.cot),
    ];
    for (name, f) in rows {
        let values = Payload::ALL.map(|p| mean(p, f));
        for (p, v) in Payload::ALL.iter().zip(values) {
            let key = name
                .split(" (")
                .next()
                .unwrap()
                .to_lowercase()
                .replace([' ', ','], "_")
                .replace("__", "_");
            report.metric(format!("{}.mean.{key}", p.name()), v);
        }
        let mut row = vec![name.to_string()];
        row.extend(values.iter().map(|&v| format_value(v)));
        table.push(row);
    }
    let mut row = vec!["Limb MOI, pendulum (kg m^2)".to_string()];
    row.extend(inertia.iter().map(|i| format_value(i.pendulum)));
    table.push(row);
    let mut row = vec!["Limb MOI, analytic (kg m^2)".to_string()];
    row.extend(inertia.iter().map(|i| format_value(i.analytic)));
    table.push(row);
    report.tables.push(table);

    let mut reference = Table::new(
        "Hardware reference values (comparison only)",
        &["Metric", "Unloaded", "Femur", "Tibia"],
    );
    for (name, v) in HARDWARE_COT_REFERENCE {
        let mut row = vec![name.to_string()];
        row.extend(v.iter().map(|&x| format_value(x)));
        reference.push(row);
    }
    reference.push(vec![
        "Limb MOI (kg m^2)".into(),
        "n/a".into(),
        format_value(0.062),
        format_value(0.080),
    ]);
    report.tables.push(reference);

    let mut per_seed = Table::new(
        "Cost of transport per seed",
        &["Seed", "Unloaded", "Femur", "Tibia", "Ordered"],
    );
    for &s in &spec.seeds {
        let cots = Payload::ALL.map(|p| {
            runs.iter()
                .find(|r| r.payload == p && r.seed == s)
                .map_or(f64::NAN, |r| r.cot.cot)
        });
        let ordered = cots[0] < cots[1] && cots[1] < cots[2];
        let mut row = vec![s.to_string()];
        row.extend(cots.iter().map(|&v| format_value(v)));
        row.push(if ordered { "yes".into() } else { "no".into() });
        per_seed.push(row);
    }
    report.tables.push(per_seed);
    let ordered = failures.is_empty() && cot_ordered(&runs, &spec.seeds);
    report.metric("cot_ordering_all_seeds", if ordered { 1.0 } else { 0.0 });

    Ok(InertiaCotOutcome {
        runs,
        inertia,
        failures,
        report,
    })
}

// ---------------------------------------------------------------------------
// Limb ratio kinematics

#[derive(Clone, Debug, PartialEq)]
pub struct FootPath {
    pub leg: Leg,
    /// Hip-centred forward position and height above the contact level (m).
    pub points: Vec<[f64; 2]>,
    pub descriptors: TrajectoryDescriptors,
    /// Largest stride-to-stride mismatch (m).
    pub closure: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatioRun {
    pub tibia_fraction: f64,
    /// Fore and hind paths, `None` when the gait was flagged unstable.
    pub paths: Option<[FootPath; 2]>,
    pub flag: Option<String>,
}

impl RatioRun {
    /// "femur:tibia" in percent.
    pub fn label(&self) -> String {
        ratio_label(self.tibia_fraction)
    }

    pub fn peak_vertical(&self) -> Option<f64> {
        self.paths.as_ref().map(|p| {
            p.iter()
                .map(|f| f.descriptors.peak_vertical)
                .fold(f64::NEG_INFINITY, f64::max)
        })
    }

    pub fn closure(&self) -> Option<f64> {
        self.paths
            .as_ref()
            .map(|p| p.iter().map(|f| f.closure).fold(0.0, f64::max))
    }
}

fn ratio_label(tibia_fraction: f64) -> String {
    let t = (tibia_fraction * 100.0).round();
    format!("{}:{}", 100.0 - t, t)
}

pub struct LimbRatioOutcome {
    pub runs: Vec<RatioRun>,
    pub report: TrialReport,
}

impl LimbRatioOutcome {
    /// Tibia fraction with the largest peak vertical displacement.
    pub fn argmax_peak(&self) -> Option<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.peak_vertical().map(|p| (r.tibia_fraction, p)))
            .fold(None, |best: Option<(f64, f64)>, (f, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((f, p)),
            })
            .map(|(f, _)| f)
    }
}

/// Marker position for one record: `offset` from the foot centre toward the
/// knee along the distal link. Returns hip-frame forward position and world
/// height.
fn marker(r: &LogRecord, leg: Leg, offset: f64) -> [f64; 2] {
    let i = leg.index();
    let q = r.q[i];
    let (s1, c1) = q[0].sin_cos();
    let (s23, c23) = (q[1] + q[2]).sin_cos();
    let distal = Vector3::new(s23, s1 * c23, -c1 * c23);
    let foot_hip = Vector3::from(r.foot_hip[i]);
    let m_hip = foot_hip - offset * distal;
    let world = Vector3::from(r.foot_world[i]) + attitude(r) * (m_hip - foot_hip);
    [m_hip.x, world.z]
}

fn ratio_morphology(config: &Config, tibia_fraction: f64) -> BodyMorphology {
    let spec = &config.experiments.limb_ratio;
    let mut m = config.morphology.clone();
    for limb in &mut m.limbs {
        limb.l2 = spec.total_length * (1.0 - tibia_fraction);
        limb.l3 = spec.total_length * tibia_fraction;
        limb.center_coms();
    }
    m
}

fn ratio_run(config: &Config, tibia_fraction: f64) -> Result<(RatioRun, TrialLog)> {
    let spec = &config.experiments.limb_ratio;
    let morphology = ratio_morphology(config, tibia_fraction);
    let mut sim = new_simulation(config, &morphology, config.world.clone())?;
    let flagged = |why: String, log: TrialLog| {
        Ok((
            RatioRun {
                tibia_fraction,
                paths: None,
                flag: Some(why),
            },
            log,
        ))
    };
    let run = sim
        .run_for(0.5, |_| BodyCommand::stand())
        .and_then(|_| sim.run_for(spec.duration, |_| BodyCommand::walk(spec.speed)));
    if let Err(e) = run {
        return flagged(format!("unstable gait: {e}"), sim.into_log());
    }
    let log = sim.into_log();
    if let Some(why) = instability(&log, config.controller.stand_height) {
        return flagged(format!("unstable gait: {why}"), log);
    }
    let per_stride = (config.gait.period / config.simulation.log_period).round() as usize;
    let n = spec.analysis_strides * per_stride + 1;
    if per_stride == 0 || log.len() < n {
        return flagged(format!("only {} samples logged, {n} needed", log.len()), log);
    }
    let window = &log.records[log.len() - n..];
    let mut paths = Vec::new();
    for leg in [Leg::FrontRight, Leg::HindRight] {
        let raw: Vec<[f64; 2]> = window.iter().map(|r| marker(r, leg, spec.marker_offset)).collect();
        let ground = raw.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
        let points: Vec<[f64; 2]> = raw.iter().map(|p| [p[0], p[1] - ground]).collect();
        let descriptors = describe_path(&points)?;
        let closure = closure_error(&points, per_stride)?;
        paths.push(FootPath {
            leg,
            points,
            descriptors,
            closure,
        });
    }
    let paths: [FootPath; 2] = paths.try_into().expect("two legs");
    let flag = paths
        .iter()
        .find(|p| p.closure > spec.closure_tolerance)
        .map(|p| format!("{} path does not close: {:.4} m", metric_leg(p.leg), p.closure));
    Ok((
        RatioRun {
            tibia_fraction,
            paths: Some(paths),
            flag,
        },
        log,
    ))
}

pub fn run_limb_ratio(config: &Config) -> Result<LimbRatioOutcome> {
    let spec = &config.experiments.limb_ratio;
    let results: Vec<Result<(RatioRun, TrialLog)>> =
        spec.tibia_fractions.par_iter().map(|&f| ratio_run(config, f)).collect();
    let mut report = TrialReport::new(
        "limb-ratio-kinematics",
        provenance(
            config,
            vec![
                "ratios are femur:tibia in percent of the summed length".into(),
                format!("femur + tibia = {} m, trot at {} m/s", spec.total_length, spec.speed),
                format!(
                    "marker {} m from the foot centre along the distal link",
                    spec.marker_offset
                ),
                "x: forward from the hip axis in the trunk frame; y: height above the lowest marker position".into(),
                format!("descriptors over the final {} strides", spec.analysis_strides),
                "asymmetry index: apex x minus mid-range x, over half the x range".into(),
            ],
        ),
    );
    let mut runs = Vec::new();
    for (f, r) in spec.tibia_fractions.iter().zip(results) {
        match r {
            Ok((run, log)) => {
                report
                    .telemetry
                    .push((format!("ratio_{}", ratio_label(*f).replace(':', "_")), log));
                runs.push(run);
            }
            Err(e) => {
                report.failures.push(format!("{}: {e}", ratio_label(*f)));
                runs.push(RatioRun {
                    tibia_fraction: *f,
                    paths: None,
                    flag: Some(e.to_string()),
                });
            }
        }
    }
    let mut table = Table::new(
        "Foot trajectory descriptors",
        &[
            "Femur:tibia",
            "Limb",
            "Peak vertical (m)",
            "Horizontal excursion (m)",
            "Asymmetry index",
            "Closure (m)",
        ],
    );
    let per_stride = (config.gait.period / config.simulation.log_period).round() as usize;
    let mut plots = [Leg::FrontRight, Leg::HindRight].map(|leg| Plot {
        name: format!("{}_path", if leg.is_front() { "fore" } else { "hind" }),
        title: format!(
            "{} foot path over one stride",
            if leg.is_front() { "Fore" } else { "Hind" }
        ),
        x_label: "forward from hip (m)".into(),
        y_label: "height above contact (m)".into(),
        series: Vec::new(),
        zero_line: true,
    });
    for run in &runs {
        let key = format!("ratio_{}", run.label().replace(':', "_"));
        if let Some(flag) = &run.flag {
            report.failures.push(format!("{}: {flag}", run.label()));
        }
        let Some(paths) = &run.paths else { continue };
        for (plot, p) in plots.iter_mut().zip(paths) {
            let name = if p.leg.is_front() { "fore" } else { "hind" };
            let d = &p.descriptors;
            report.metric(format!("{key}.{name}.peak_vertical_m"), d.peak_vertical);
            report.metric(format!("{key}.{name}.horizontal_excursion_m"), d.horizontal_excursion);
            report.metric(format!("{key}.{name}.asymmetry_index"), d.asymmetry_index);
            report.metric(format!("{key}.{name}.closure_m"), p.closure);
            table.push(vec![
                run.label(),
                name.into(),
                format_value(d.peak_vertical),
                format_value(d.horizontal_excursion),
                format_value(d.asymmetry_index),
                format_value(p.closure),
            ]);
            let start = p.points.len().saturating_sub(per_stride + 1);
            plot.series.push(Series {
                label: run.label(),
                points: p.points[start..].to_vec(),
            });
        }
        report.metric(
            format!("{key}.peak_vertical_m"),
            run.peak_vertical().unwrap_or(f64::NAN),
        );
    }
    report.tables.push(table);
    report.plots.extend(plots);
    let outcome = LimbRatioOutcome { runs, report };
    let argmax = outcome.argmax_peak();
    let mut report = outcome.report;
    if let Some(f) = argmax {
        report.metric("peak_vertical_argmax_tibia_fraction", f);
    }
    Ok(LimbRatioOutcome {
        runs: outcome.runs,
        report,
    })
}

// ---------------------------------------------------------------------------
// GRF validation

#[derive(Clone, Debug, PartialEq)]
pub struct LimbRmse {
    pub leg: Leg,
    pub uncalibrated: Vector3<f64>,
    pub calibrated: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub samples: usize,
}

pub struct GrfOutcome {
    /// FR, FL, HR, HL order.
    pub limbs: Vec<LimbRmse>,
    pub traces: Vec<RotationTrace>,
    pub report: TrialReport,
}

const HARDWARE_RMSE_REFERENCE: [(Leg, [f64; 3]); 4] = [
    (Leg::HindRight, [1.47, 2.51, 6.46]),
    (Leg::HindLeft, [2.86, 1.44, 5.49]),
    (Leg::FrontRight, [1.83, 2.83, 11.15]),
    (Leg::FrontLeft, [1.29, 1.67, 6.84]),
];

/// World with no joint friction and an exact transmission.
pub fn perfect_world(world: &WorldParams) -> WorldParams {
    WorldParams {
        joint_friction: JointFriction::none(),
        transmission_scale: [1.0; 3],
        ..world.clone()
    }
}

pub fn run_grf_validation(config: &Config) -> Result<GrfOutcome> {
    let spec = &config.experiments.grf_validation;
    let world = if spec.perfect_model {
        perfect_world(&config.world)
    } else {
        config.world.clone()
    };
    let traces: Vec<Result<RotationTrace>> = spec
        .axes
        .par_iter()
        .map(|&axis| {
            let mut sim = new_simulation(config, &config.morphology, world.clone())?;
            sim.run_for(spec.protocol.settle, |_| BodyCommand::stand())?;
            Ok(spec.protocol.run(&mut sim, axis)?)
        })
        .collect();
    let traces: Vec<RotationTrace> = traces.into_iter().collect::<Result<_>>()?;

    let mut limbs = Vec::new();
    for leg in Leg::ALL {
        let i = leg.index();
        let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = traces
            .iter()
            .flat_map(|t| t.estimate[i].iter().copied().zip(t.truth[i].iter().copied()))
            .filter(|(e, _)| e.iter().all(|v| v.is_finite()))
            .collect();
        let uncalibrated = rmse_axes(&pairs).map_err(|e| HarnessError::Report(format!("{leg}: {e}")))?;
        let scale = calibrate_axes(&pairs).map_err(|e| e.for_leg(leg))?;
        let scaled: Vec<_> = pairs.iter().map(|(e, t)| (e.component_mul(&scale), *t)).collect();
        let calibrated = rmse_axes(&scaled)?;
        limbs.push(LimbRmse {
            leg,
            uncalibrated,
            calibrated,
            scale,
            samples: pairs.len(),
        });
    }

    let mut report = TrialReport::new(
        "grf-validation",
        provenance(
            config,
            vec![
                format!(
                    "{} sinusoidal rotations of {:.1} deg at {} Hz per axis: {}",
                    spec.protocol.repetitions,
                    spec.protocol.amplitude.to_degrees(),
                    spec.protocol.frequency,
                    spec.axes.iter().map(|a| a.name()).collect::<Vec<_>>().join(", ")
                ),
                "RMSE per limb pooled over every axis run, trunk-frame forces".into(),
                "calibration: per-limb per-axis least-squares scale fitted on the same samples".into(),
                format!(
                    "transmission scale {:?}, {}",
                    world.transmission_scale,
                    if spec.perfect_model {
                        "perfect model"
                    } else {
                        "serial-simplified model"
                    }
                ),
            ],
        ),
    );
    let axes = ["x", "y", "z"];
    let mut raw = Table::new("GRF RMSE, uncalibrated (N)", &["Limb", "x", "y", "z"]);
    let mut cal = Table::new("GRF RMSE, calibrated (N)", &["Limb", "x", "y", "z"]);
    let mut scales = Table::new("Calibration scale", &["Limb", "x", "y", "z"]);
    let mut hardware = Table::new("Hardware reference RMSE (N, comparison only)", &["Limb", "x", "y", "z"]);
    for (ref_leg, values) in HARDWARE_RMSE_REFERENCE {
        let l = limbs.iter().find(|l| l.leg == ref_leg).expect("all legs");
        let name = legs_table_label(ref_leg);
        let row = |v: &Vector3<f64>| {
            let mut r = vec![name.to_string()];
            r.extend(v.iter().map(|&x| format_value(x)));
            r
        };
        raw.push(row(&l.uncalibrated));
        cal.push(row(&l.calibrated));
        scales.push(row(&l.scale));
        hardware.push(row(&Vector3::from(values)));
        for (a, axis) in axes.iter().enumerate() {
            let leg = metric_leg(ref_leg);
            report.metric(format!("{leg}.rmse_uncalibrated_{axis}_n"), l.uncalibrated[a]);
            report.metric(format!("{leg}.rmse_calibrated_{axis}_n"), l.calibrated[a]);
            report.metric(format!("{leg}.scale_{axis}"), l.scale[a]);
            report.metric(format!("{leg}.reference_rmse_{axis}_n"), values[a]);
        }
        report.metric(format!("{}.samples", metric_leg(ref_leg)), l.samples as f64);
    }
    report.tables.extend([raw, cal, scales, hardware]);
    for t in &traces {
        let fr = Leg::FrontRight.index();
        let pick = |v: &[Vector3<f64>], a: usize| t.time.iter().zip(v).map(|(&ti, f)| [ti, f[a]]).collect::<Vec<_>>();
        report.plots.push(Plot {
            name: format!("{}_front_right", t.axis.name()),
            title: format!("Front right force during {} rotations", t.axis.name()),
            x_label: "time (s)".into(),
            y_label: "force (N)".into(),
            series: vec![
                Series {
                    label: "Fz measured".into(),
                    points: pick(&t.truth[fr], 2),
                },
                Series {
                    label: "Fz estimated".into(),
                    points: pick(&t.estimate[fr], 2),
                },
                Series {
                    label: "Fx measured".into(),
                    points: pick(&t.truth[fr], 0),
                },
                Series {
                    label: "Fx estimated".into(),
                    points: pick(&t.estimate[fr], 0),
                },
            ],
            zero_line: true,
        });
        report.telemetry.push((t.axis.name().to_string(), t.log.clone()));
    }
    Ok(GrfOutcome { limbs, traces, report })
}

// ---------------------------------------------------------------------------
// Feasibility map

pub struct FeasibilityOutcome {
    /// Same order as the configured gear ratios.
    pub maps: Vec<(f64, FeasibilityMap)>,
    pub report: TrialReport,
}

pub fn run_feasibility(config: &Config) -> Result<FeasibilityOutcome> {
    let spec = &config.experiments.feasibility;
    let maps: Vec<Result<(f64, FeasibilityMap)>> = spec
        .gear_ratios
        .par_iter()
        .map(|&g| {
            let actuator = config.actuator.clone().with_gear_ratio(g);
            Ok((g, feasibility_map(&actuator, &spec.swing, &spec.grid)?))
        })
        .collect();
    let maps: Vec<(f64, FeasibilityMap)> = maps.into_iter().collect::<Result<_>>()?;
    let mut report = TrialReport::new(
        "feasibility-map",
        provenance(
            config,
            maps.first()
                .map(|(_, m)| m.assumptions.iter().map(|(k, v)| format!("{k}: {v}")).collect())
                .unwrap_or_default(),
        ),
    );
    let mut table = Table::new(
        "Feasible limb lengths",
        &[
            "Gear ratio",
            "Torque limit (N m)",
            "Speed limit (rad/s)",
            "Feasible cells",
            "Grid cells",
        ],
    );
    let mut boundary = Plot {
        name: "boundary".into(),
        title: "Longest feasible tibia per femur length".into(),
        x_label: "femur length (m)".into(),
        y_label: "tibia length (m)".into(),
        series: Vec::new(),
        zero_line: false,
    };
    for (g, m) in &maps {
        let key = format!("gear_{g}");
        report.metric(format!("{key}.feasible_cells"), m.feasible_count() as f64);
        report.metric(format!("{key}.torque_limit_nm"), m.torque_limit);
        report.metric(format!("{key}.speed_limit_rad_s"), m.speed_limit);
        table.push(vec![
            format!("{g}:1"),
            format_value(m.torque_limit),
            format_value(m.speed_limit),
            m.feasible_count().to_string(),
            m.cells.len().to_string(),
        ]);
        let points = (0..m.femur_lengths.len())
            .filter_map(|i| {
                (0..m.tibia_lengths.len())
                    .rev()
                    .find(|&j| m.cell(i, j).feasible)
                    .map(|j| [m.femur_lengths[i], m.tibia_lengths[j]])
            })
            .collect();
        boundary.series.push(Series {
            label: format!("{g}:1"),
            points,
        });
    }
    for (a, (ga, ma)) in maps.iter().enumerate() {
        for (gb, mb) in maps.iter().skip(a + 1) {
            report.metric(
                format!("gear_{gb}.strictly_contains.gear_{ga}"),
                f64::from(u8::from(mb.strictly_contains(ma))),
            );
            report.metric(
                format!("gear_{ga}.strictly_contains.gear_{gb}"),
                f64::from(u8::from(ma.strictly_contains(mb))),
            );
        }
    }
    report.tables.push(table);
    report.plots.push(boundary);
    Ok(FeasibilityOutcome { maps, report })
}
