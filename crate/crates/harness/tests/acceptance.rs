//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use legsim::config::Config;
use legsim::experiments::{
    run_experiment, run_feasibility, run_grf_validation, run_inertia_cot, run_limb_ratio, run_trot, ExperimentId,
    Payload,
};
use legsim::metrics::{compute_cot, SpeedSource};
use legsim::report::{emit_report, Format, TrialReport};
use legsim_core::actuation::ActuatorParams;
use legsim_core::allocation::{allocate_stance_forces, StanceFoot, DEFAULT_REGULARIZATION};
use legsim_core::controller::BodyCommand;
use legsim_core::dynamics::{pendulum_moi, STANDARD_GRAVITY};
use legsim_core::kinematics::{estimate_grf, forward_kinematics, jacobian_foot, JointAngles};
use legsim_core::morphology::{
    moment_of_inertia_about_hip, BodyMorphology, KneeDirection, Leg, LimbMorphology, Link, LinkConfig, Side,
};
use legsim_core::simulation::{Simulation, SimulationConfig};
use legsim_core::telemetry::{LogRecord, TrialLog};
use legsim_core::world::{JointCommand, RobotModel, World, WorldParams};
use nalgebra::{Matrix3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;
type Staged = fn(&Config) -> Result<(Outcome, TrialReport), String>;
type Runner<'a> = dyn FnMut(u32, &'static str, &mut dyn FnMut() -> Outcome) + 'a;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    check(
        elapsed < limit,
        format!(
            "{detail}; {:.1} s of {} s allowed",
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

fn random_limb(rng: &mut impl Rng) -> LimbMorphology {
    let four = rng.random_bool(0.5);
    let mut limb = LimbMorphology {
        config: if four {
            LinkConfig::FourLink
        } else {
            LinkConfig::ThreeLink
        },
        l1: rng.random_range(0.01..0.1),
        l2: rng.random_range(0.05..0.4),
        l3: rng.random_range(0.05..0.4),
        l4: rng.random_range(if four { 0.01..0.1 } else { 0.0..0.1 }),
        knee_direction: if rng.random_bool(0.5) {
            KneeDirection::Forward
        } else {
            KneeDirection::Backward
        },
        link_masses: std::array::from_fn(|_| rng.random_range(0.02..0.5)),
        link_com_offsets: [0.0; 4],
        added_mass: None,
    };
    if !four {
        limb.link_masses[Link::Tarsus.index()] = 0.0;
    }
    for link in Link::ALL {
        limb.link_com_offsets[link.index()] = rng.random_range(0.1..0.9) * limb.length(link);
    }
    limb
}

fn random_angles(rng: &mut impl Rng) -> JointAngles {
    JointAngles::new(
        rng.random_range(-1.2..1.2),
        rng.random_range(-3.1..3.1),
        rng.random_range(-2.8..2.8),
    )
}

fn random_side(rng: &mut impl Rng) -> Side {
    if rng.random_bool(0.5) {
        Side::Left
    } else {
        Side::Right
    }
}

fn jacobian_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let limb = random_limb(&mut rng);
        for _ in 0..500 {
            let side = random_side(&mut rng);
            let q = random_angles(&mut rng);
            let j = jacobian_foot(&limb, side, &q).0;
            let v = q.to_vector();
            let fd = Matrix3::from_fn(|r, c| {
                let (mut p, mut m) = (v, v);
                p[c] += h;
                m[c] -= h;
                let fp = forward_kinematics(&limb, side, &JointAngles::from_vector(&p));
                let fm = forward_kinematics(&limb, side, &JointAngles::from_vector(&m));
                (fp[r] - fm[r]) / (2.0 * h)
            });
            worst = worst.max((j - fd).amax() / j.amax());
        }
    }
    let elapsed = start.elapsed();
    if worst >= 1e-5 {
        return Err(format!("max relative error {worst:.2e} over 10000 configurations"));
    }
    within(
        elapsed,
        Duration::from_secs(10),
        format!("max relative error {worst:.2e} over 10000 configurations"),
    )
}

fn grf_round_trip() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 10_000 {
        let limb = random_limb(&mut rng);
        let side = random_side(&mut rng);
        let q = random_angles(&mut rng);
        let jac = jacobian_foot(&limb, side, &q);
        if jac.reciprocal_condition() < 1e-3 {
            continue;
        }
        let f = Vector3::from_fn(|_, _| rng.random_range(-300.0..300.0));
        let est = estimate_grf(&limb, side, &q, &jac.transpose_mul(&f), &Vector3::repeat(1.0))
            .map_err(|e| format!("estimate failed: {e}"))?;
        worst = worst.max((est.force - f).norm() / f.norm());
        done += 1;
    }
    let elapsed = start.elapsed();
    if worst >= 1e-9 {
        return Err(format!("max relative error {worst:.2e}"));
    }
    within(
        elapsed,
        Duration::from_secs(10),
        format!("max relative error {worst:.2e} over 10000 configurations"),
    )
}

fn zero_angle_jacobian() -> Outcome {
    let limb = LimbMorphology {
        l1: 0.1,
        l4: 0.0,
        ..LimbMorphology::three_link(0.2, 0.2)
    };
    let j = jacobian_foot(&limb, Side::Left, &JointAngles::default()).0;
    let expected = Matrix3::new(0.0, 0.4, 0.2, 0.4, 0.0, 0.0, 0.1, 0.0, 0.0);
    check(j == expected, format!("J(0,0,0) = {:?}", j.transpose().as_slice()))
}

fn moi_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let limb = random_limb(&mut rng);
        let pose = JointAngles::new(0.0, 0.0, rng.random_range(-2.5..2.5));
        let analytic = moment_of_inertia_about_hip(&limb, &pose).map_err(|e| e.to_string())?;
        let measured = pendulum_moi(&limb, &pose, 0.02).map_err(|e| e.to_string())?.inertia;
        worst = worst.max((measured - analytic).abs() / analytic);
    }
    let (m, l) = (0.7, 0.3);
    let mut rod = LimbMorphology {
        link_masses: [0.0; 4],
        ..LimbMorphology::three_link(l, 0.2)
    };
    rod.link_masses[Link::Femur.index()] = m;
    let exact = m * l * l / 3.0;
    let analytic = moment_of_inertia_about_hip(&rod, &JointAngles::default()).map_err(|e| e.to_string())?;
    let swung = pendulum_moi(&rod, &JointAngles::default(), 0.02)
        .map_err(|e| e.to_string())?
        .inertia;
    let (rod_analytic, rod_pendulum) = ((analytic - exact).abs(), (swung - exact).abs() / exact);
    check(
        worst < 0.01 && rod_analytic < 1e-9 && rod_pendulum < 0.01,
        format!(
            "random limbs worst {:.3}%; rod analytic error {rod_analytic:.1e}, pendulum {:.3}%",
            100.0 * worst,
            100.0 * rod_pendulum
        ),
    )
}

fn constant_power_log(total_power: f64, speed: f64, n: usize) -> TrialLog {
    let mut log = TrialLog::new();
    for i in 0..n {
        let t = i as f64 * 0.002;
        log.push(LogRecord {
            time: t,
            position: [speed * t, 0.0, 0.28],
            orientation: [1.0, 0.0, 0.0, 0.0],
            velocity: [speed, 0.0, 0.0],
            angular_velocity: [0.0; 3],
            q: [[0.0; 3]; 4],
            qd: [[0.0; 3]; 4],
            tau: [[0.0; 3]; 4],
            stance: [true; 4],
            contact: [true; 4],
            grf_estimate: [[0.0; 3]; 4],
            grf_true: [[0.0; 3]; 4],
            foot_hip: [[0.0; 3]; 4],
            foot_world: [[0.0; 3]; 4],
            power: [[total_power / 12.0; 3]; 4],
            clamped_power: [[total_power / 12.0; 3]; 4],
            imu_accel: [0.0, 0.0, STANDARD_GRAVITY],
            imu_gyro: [0.0; 3],
        });
    }
    log
}

fn cot_pipeline() -> Outcome {
    let log = constant_power_log(100.0, 1.0, 500);
    let mut values = Vec::new();
    for source in [SpeedSource::GroundTruth, SpeedSource::ImuIntegrated] {
        let b = compute_cot(&log, 0..log.len(), 10.0, STANDARD_GRAVITY, source).map_err(|e| e.to_string())?;
        values.push(b.cot);
    }
    check(
        values.iter().all(|c| (c - 1.019).abs() <= 1e-3),
        format!("COT {:.5} (ground truth), {:.5} (IMU)", values[0], values[1]),
    )
}

fn inertia_cot(config: &Config) -> Result<(Outcome, TrialReport), String> {
    let start = Instant::now();
    let out = run_inertia_cot(config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let seeds = &config.experiments.inertia_cot.seeds;
    let index = |p: Payload| Payload::ALL.iter().position(|&q| q == p).unwrap();
    let femur = out.inertia[index(Payload::Femur)];
    let tibia = out.inertia[index(Payload::Tibia)];
    let ratio = tibia.analytic / femur.analytic;
    let pendulum_ratio = tibia.pendulum / femur.pendulum;
    let mut cots = Vec::new();
    for &s in seeds {
        let c: Vec<String> = Payload::ALL
            .iter()
            .map(|&p| out.run(p, s).map_or("missing".into(), |r| format!("{:.3}", r.cot.cot)))
            .collect();
        cots.push(format!("seed {s}: {}", c.join(" < ")));
    }
    let detail = format!(
        "{}; MOI tibia/femur {ratio:.2} (pendulum {pendulum_ratio:.2})",
        cots.join(", ")
    );
    let ok = out.failures.is_empty() && out.ordering_holds(seeds) && ratio > 1.1 && pendulum_ratio > 1.1;
    let outcome = if ok {
        within(elapsed, Duration::from_secs(300), detail)
    } else {
        Err(detail)
    };
    Ok((outcome, out.report))
}

fn grf_validation(config: &Config) -> Result<(Outcome, TrialReport), String> {
    let out = run_grf_validation(config).map_err(|e| e.to_string())?;
    let mut ok = out.limbs.len() == 4;
    let mut lines = Vec::new();
    for l in &out.limbs {
        let u = l.uncalibrated;
        let c = l.calibrated;
        ok &= (0..3).all(|a| c[a] <= u[a]) && u.z > u.x && u.z > u.y;
        lines.push(format!("{} z {:.2}->{:.2} N", l.leg, u.z, c.z));
    }
    Ok((check(ok, lines.join(", ")), out.report))
}

fn limb_ratio(config: &Config) -> Result<(Outcome, TrialReport), String> {
    let out = run_limb_ratio(config).map_err(|e| e.to_string())?;
    let tolerance = config.experiments.limb_ratio.closure_tolerance;
    let mut ok = out.argmax_peak().is_some_and(|f| (f - 0.5).abs() < 1e-12);
    let mut lines = Vec::new();
    for r in &out.runs {
        let (peak, closure) = (r.peak_vertical(), r.closure());
        ok &= closure.is_some_and(|c| c <= tolerance);
        lines.push(format!(
            "{} peak {} closure {}",
            r.label(),
            peak.map_or("n/a".into(), |p| format!("{:.1} mm", 1e3 * p)),
            closure.map_or("n/a".into(), |c| format!("{:.2} mm", 1e3 * c))
        ));
    }
    Ok((check(ok, lines.join(", ")), out.report))
}

fn feasibility(config: &Config) -> Result<(Outcome, TrialReport), String> {
    let start = Instant::now();
    let out = run_feasibility(config).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let find = |g: f64| out.maps.iter().find(|(r, _)| *r == g).map(|(_, m)| m);
    let (Some(low), Some(high)) = (find(7.5), find(15.0)) else {
        return Err("gear ratios 7.5 and 15 must both be configured".into());
    };
    let cells = high.femur_lengths.len() * high.tibia_lengths.len();
    let detail = format!(
        "{} of {cells} cells feasible at 15:1, {} at 7.5:1",
        high.feasible_count(),
        low.feasible_count()
    );
    let outcome = if high.strictly_contains(low) && cells == 2500 {
        within(elapsed, Duration::from_secs(60), detail)
    } else {
        Err(detail)
    };
    Ok((outcome, out.report))
}

fn emit_all(reports: &[&TrialReport], dir: &Path) -> Result<(), String> {
    let formats = [Format::Json, Format::Csv, Format::Svg, Format::Text, Format::Telemetry];
    for r in reports {
        emit_report(r, dir, &formats).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn directory_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|entry| {
            let path = entry.map_err(|e| e.to_string())?.path();
            let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            Ok((path.file_name().unwrap().to_string_lossy().into_owned(), bytes))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn determinism(config: &Config, first: &[&TrialReport]) -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let trot_a = run_trot(config).map_err(|e| e.to_string())?.report;
    let mut reruns = vec![run_trot(config).map_err(|e| e.to_string())?.report];
    for id in ExperimentId::ALL {
        reruns.push(run_experiment(id, config).map_err(|e| e.to_string())?);
    }
    let mut originals = vec![&trot_a];
    originals.extend_from_slice(first);
    emit_all(&originals, a.path())?;
    emit_all(&reruns.iter().collect::<Vec<_>>(), b.path())?;
    let (fa, fb) = (directory_bytes(a.path())?, directory_bytes(b.path())?);
    let names = |f: &[(String, Vec<u8>)]| f.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>();
    if names(&fa) != names(&fb) {
        return Err(format!("artifact sets differ: {:?} vs {:?}", names(&fa), names(&fb)));
    }
    let differing: Vec<&str> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| x.1 != y.1)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let total: usize = fa.iter().map(|(_, bytes)| bytes.len()).sum();
    check(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts ({total} bytes) identical across reruns", fa.len())
        } else {
            format!("differing artifacts: {differing:?}")
        },
    )
}

fn energy_drift() -> Result<f64, String> {
    let morph = BodyMorphology::default();
    let model = RobotModel::new(&morph, &ActuatorParams::default()).map_err(|e| e.to_string())?;
    let mut params = WorldParams::ideal();
    params.contact.enabled = false;
    let pose = [JointAngles::new(0.1, 0.6, -1.2); 4];
    let mut world = World::new(model, params, Vector3::new(0.0, 0.0, 1.0), pose).map_err(|e| e.to_string())?;
    world.set_trunk_velocity(Vector3::new(0.3, 0.0, 0.5), Vector3::new(0.5, -1.0, 0.3));
    for leg in Leg::ALL {
        world.set_joint_velocities(leg, Vector3::new(1.0, -2.0, 3.0));
    }
    let e0 = world.mechanical_energy();
    let commands = [[JointCommand::default(); 3]; 4];
    let seconds = 2.0;
    for _ in 0..2000 {
        world.step(&commands, 0.001).map_err(|e| e.to_string())?;
    }
    Ok((world.mechanical_energy() - e0).abs() / e0.abs() / seconds)
}

fn allocation_violation(forces: &[Vector3<f64>; 4], stance: [bool; 4], mu: f64) -> Option<String> {
    for leg in Leg::ALL {
        let f = forces[leg.index()];
        if !stance[leg.index()] && f != Vector3::zeros() {
            return Some(format!("{leg} carries {f} out of stance"));
        }
        if f.z < 0.0 || f.x.abs() > mu * f.z || f.y.abs() > mu * f.z {
            return Some(format!("{leg} force {f} outside the friction pyramid"));
        }
    }
    None
}

fn physics_sanity(config: &Config) -> Outcome {
    let drift = energy_drift()?;

    let sim_new = || {
        Simulation::new(
            &config.morphology,
            &config.actuator,
            config.world.clone(),
            config.controller.clone(),
            config.gait.clone(),
            SimulationConfig::default(),
        )
        .map_err(|e| e.to_string())
    };
    let mut standing = sim_new()?;
    standing
        .run_for(1.5, |_| BodyCommand::stand())
        .map_err(|e| e.to_string())?;
    let weight = config.morphology.total_mass() * config.world.gravity;
    let fz = standing.world().contact().total_force().z;
    let support_error = (fz - weight).abs() / weight;

    let mu = config.controller.friction;
    let mut ticks = 0;
    let mut trot = sim_new()?;
    for k in 0..4000 {
        let command = if k < 300 {
            BodyCommand::stand()
        } else {
            BodyCommand::walk(0.5)
        };
        trot.step(&command).map_err(|e| e.to_string())?;
        if k % 2 == 0 {
            let out = trot.last_control().ok_or("no control output")?;
            if let Some(v) = allocation_violation(&out.allocation.forces, out.stance, mu) {
                return Err(format!("closed-loop allocation at t = {:.3} s: {v}", trot.time()));
            }
            ticks += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10_000 {
        let stance: [bool; 4] = std::array::from_fn(|_| rng.random_bool(0.6));
        let feet: Vec<StanceFoot> = Leg::ALL
            .iter()
            .filter(|l| stance[l.index()])
            .map(|&leg| StanceFoot {
                leg,
                position: Vector3::new(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.35..-0.2),
                ),
            })
            .collect();
        let wrench = Vector6::from_fn(|i, _| {
            if i == 2 {
                rng.random_range(-50.0..300.0)
            } else {
                rng.random_range(-80.0..80.0)
            }
        });
        let mu = rng.random_range(0.1..1.2);
        let Ok(a) = allocate_stance_forces(&feet, &wrench, mu, DEFAULT_REGULARIZATION) else {
            if feet.is_empty() {
                continue;
            }
            return Err("allocation failed on a random stance".into());
        };
        if let Some(v) = allocation_violation(&a.forces, stance, mu) {
            return Err(format!("random allocation: {v}"));
        }
    }

    check(
        drift < 1e-3 && support_error < 0.01,
        format!(
            "energy drift {:.2e}/s; standing support {:.3}% off M·g; {ticks} control ticks and 10000 random stances within the friction pyramid",
            drift,
            100.0 * support_error
        ),
    )
}

fn main() -> ExitCode {
    let config = Config::default();
    let mut results: Vec<(u32, &str, Outcome, Duration)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} [{n:>2}] {name}: {detail} ({:.2} s)", elapsed.as_secs_f64());
        results.push((n, name, outcome, elapsed));
    };

    run(1, "jacobian correctness", &mut jacobian_correctness);
    run(2, "grf round trip", &mut grf_round_trip);
    run(3, "zero-angle jacobian", &mut zero_angle_jacobian);
    run(4, "moment of inertia oracles", &mut moi_oracles);
    run(5, "cost of transport pipeline", &mut cot_pipeline);

    let mut reports: Vec<TrialReport> = Vec::new();
    let mut staged = |n: u32, name: &'static str, f: Staged, run: &mut Runner| {
        let mut produced = None;
        run(n, name, &mut || {
            let (outcome, report) = f(&config)?;
            produced = Some(report);
            outcome
        });
        if let Some(r) = produced {
            reports.push(r);
        }
    };
    staged(6, "inertia and cost of transport ordering", inertia_cot, &mut run);
    staged(7, "grf validation protocol", grf_validation, &mut run);
    staged(8, "limb ratio kinematics", limb_ratio, &mut run);
    staged(9, "feasibility nesting", feasibility, &mut run);

    run(10, "determinism", &mut || {
        if reports.len() != 4 {
            return Err("an experiment errored before producing a report".into());
        }
        // Rerun order: grf, limb ratio, inertia, feasibility.
        let order = [1, 2, 0, 3].map(|i| &reports[i]);
        determinism(&config, &order)
    });
    run(11, "physics sanity", &mut || physics_sanity(&config));

    let failed: Vec<u32> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    let total: f64 = results.iter().map(|r| r.3.as_secs_f64()).sum();
    println!(
        "acceptance: {} of {} criteria passed in {total:.1} s",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
