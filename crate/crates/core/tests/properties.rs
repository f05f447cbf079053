//! Property tests for the model-level invariants.

use std::f64::consts::{PI, TAU};

use legsim_core::actuation::{electrical_power, impedance_torque, ActuatorParams, ImpedanceGains};
use legsim_core::allocation::{allocate_stance_forces, StanceFoot, DEFAULT_REGULARIZATION};
use legsim_core::dynamics::{feasibility_map, inverse_dynamics, pendulum_moi, GridSpec, LimbDynamicsModel, SwingSpec};
use legsim_core::gait::GaitSchedule;
use legsim_core::kinematics::{estimate_grf, forward_kinematics, jacobian_foot, JointAngles};
use legsim_core::morphology::{
    limb_ratio, moment_of_inertia_about_hip, AddedMass, BodyMorphology, KneeDirection, Leg, LimbMorphology, Link,
    LinkConfig, Side,
};
use legsim_core::urdf::{export_robot_description, parse_robot_description};
use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;

fn limb_strategy() -> impl Strategy<Value = LimbMorphology> {
    (
        any::<bool>(),
        any::<bool>(),
        0.01..0.1f64,
        0.05..0.4f64,
        0.05..0.4f64,
        0.0..0.1f64,
        prop::array::uniform4(0.02..0.5f64),
        prop::array::uniform4(0.1..0.9f64),
    )
        .prop_map(|(four, forward, l1, l2, l3, l4, masses, com)| {
            let config = if four {
                LinkConfig::FourLink
            } else {
                LinkConfig::ThreeLink
            };
            let mut limb = LimbMorphology {
                config,
                l1,
                l2,
                l3,
                l4: if four { l4.max(0.01) } else { l4 },
                knee_direction: if forward {
                    KneeDirection::Forward
                } else {
                    KneeDirection::Backward
                },
                link_masses: masses,
                link_com_offsets: [0.0; 4],
                added_mass: None,
            };
            if !four {
                limb.link_masses[Link::Tarsus.index()] = 0.0;
            }
            for link in Link::ALL {
                limb.link_com_offsets[link.index()] = com[link.index()] * limb.length(link);
            }
            limb
        })
}

fn angles() -> impl Strategy<Value = JointAngles> {
    (-1.2..1.2f64, -PI..PI, -2.8..2.8f64).prop_map(|(a, h, k)| JointAngles::new(a, h, k))
}

fn side() -> impl Strategy<Value = Side> {
    prop_oneof![Just(Side::Left), Just(Side::Right)]
}

fn fd_jacobian(limb: &LimbMorphology, side: Side, q: &JointAngles) -> nalgebra::Matrix3<f64> {
    let h = 1e-6;
    let v = q.to_vector();
    nalgebra::Matrix3::from_fn(|r, c| {
        let mut plus = v;
        let mut minus = v;
        plus[c] += h;
        minus[c] -= h;
        let fp = forward_kinematics(limb, side, &JointAngles::from_vector(&plus));
        let fm = forward_kinematics(limb, side, &JointAngles::from_vector(&minus));
        (fp[r] - fm[r]) / (2.0 * h)
    })
}

/// Distance of a point on `link` from the hip pitch axis, from the
/// kinematics of a limb truncated at that point.
fn distance_from_pitch_axis(limb: &LimbMorphology, link: Link, along: f64, knee: f64) -> f64 {
    let mut cut = limb.clone();
    cut.l1 = 0.0;
    cut.l4 = 0.0;
    match link {
        Link::Femur => {
            cut.config = LinkConfig::ThreeLink;
            cut.l2 = along;
            cut.l3 = 0.0;
        }
        Link::Tibia => {
            cut.config = LinkConfig::ThreeLink;
            cut.l3 = along;
        }
        Link::Tarsus => cut.l4 = along,
        Link::Trunnion => return 0.0,
    }
    let p = forward_kinematics(&cut, Side::Left, &JointAngles::new(0.0, 0.0, knee));
    p.x.hypot(p.z)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn jacobian_matches_central_differences(limb in limb_strategy(), side in side(), q in angles()) {
        let j = jacobian_foot(&limb, side, &q).0;
        let fd = fd_jacobian(&limb, side, &q);
        let scale = j.amax().max(1e-3);
        prop_assert!((j - fd).amax() / scale < 1e-5, "{j} vs {fd}");
    }

    #[test]
    fn grf_estimate_inverts_the_jacobian_transpose(
        limb in limb_strategy(),
        side in side(),
        q in angles(),
        f in prop::array::uniform3(-200.0..200.0f64),
    ) {
        let f = Vector3::from(f);
        prop_assume!(f.norm() > 1e-3);
        let jac = jacobian_foot(&limb, side, &q);
        prop_assume!(jac.reciprocal_condition() > 1e-6);
        let tau = jac.transpose_mul(&f);
        let est = estimate_grf(&limb, side, &q, &tau, &Vector3::repeat(1.0)).unwrap();
        prop_assert!((est.force - f).norm() / f.norm() < 1e-9);
    }

    #[test]
    fn kinematics_ignore_whole_turns(limb in limb_strategy(), side in side(), q in angles(), k in prop::array::uniform3(-3i32..=3)) {
        let wrapped = JointAngles::new(
            q.abduction + k[0] as f64 * TAU,
            q.hip + k[1] as f64 * TAU,
            q.knee + k[2] as f64 * TAU,
        );
        let a = forward_kinematics(&limb, side, &q);
        let b = forward_kinematics(&limb, side, &wrapped);
        prop_assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn mirroring_negates_only_the_lateral_coordinate(limb in limb_strategy(), q in angles()) {
        let left = forward_kinematics(&limb, Side::Left, &q);
        let mirrored = JointAngles::new(-q.abduction, q.hip, q.knee);
        let right = forward_kinematics(&limb, Side::Right, &mirrored);
        prop_assert!((left.x - right.x).abs() < 1e-12);
        prop_assert!((left.y + right.y).abs() < 1e-12);
        prop_assert!((left.z - right.z).abs() < 1e-12);
    }

    #[test]
    fn limb_ratio_components_sum_to_one(l2 in 1e-3..10.0f64, l3 in 1e-3..10.0f64) {
        let limb = LimbMorphology { l2, l3, ..LimbMorphology::default() };
        let (a, b) = limb_ratio(&limb).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inertia_grows_with_payload_distance(
        limb in limb_strategy(),
        knee in -2.8..2.8f64,
        mass in 0.01..1.0f64,
        a in (0usize..3, 0.0..1.0f64),
        b in (0usize..3, 0.0..1.0f64),
    ) {
        let links = if limb.has_tarsus() { vec![Link::Femur, Link::Tibia, Link::Tarsus] } else { vec![Link::Femur, Link::Tibia] };
        let place = |(i, s): (usize, f64)| {
            let link = links[i % links.len()];
            (link, s * limb.length(link))
        };
        let (la, pa) = place(a);
        let (lb, pb) = place(b);
        let pose = JointAngles::new(0.0, 0.0, knee);
        let moi = |link, position| {
            let loaded = LimbMorphology { added_mass: Some(AddedMass { mass, link, position }), ..limb.clone() };
            moment_of_inertia_about_hip(&loaded, &pose).unwrap()
        };
        let (da, db) = (
            distance_from_pitch_axis(&limb, la, pa, knee),
            distance_from_pitch_axis(&limb, lb, pb, knee),
        );
        let (ia, ib) = (moi(la, pa), moi(lb, pb));
        if da <= db {
            prop_assert!(ia <= ib + 1e-12, "d {da} <= {db} but I {ia} > {ib}");
        } else {
            prop_assert!(ib <= ia + 1e-12, "d {db} < {da} but I {ib} > {ia}");
        }
    }

    #[test]
    fn inverse_dynamics_balances_power(
        limb in limb_strategy(),
        side in side(),
        q0 in angles(),
        amp in prop::array::uniform3(0.05..0.8f64),
        omega in prop::array::uniform3(0.5..8.0f64),
        t in 0.0..2.0f64,
    ) {
        let model = LimbDynamicsModel::new(&limb, side);
        let traj = |t: f64| {
            let q = Vector3::from_fn(|i, _| q0.to_vector()[i] + amp[i] * (omega[i] * t).sin());
            let qd = Vector3::from_fn(|i, _| amp[i] * omega[i] * (omega[i] * t).cos());
            let qdd = Vector3::from_fn(|i, _| -amp[i] * omega[i] * omega[i] * (omega[i] * t).sin());
            (JointAngles::from_vector(&q), qd, qdd)
        };
        let (q, qd, qdd) = traj(t);
        let tau = inverse_dynamics(&model, &q, &qd, &qdd);
        let h = 1e-5;
        let energy = |t: f64| {
            let (q, qd, _) = traj(t);
            model.mechanical_energy(&q, &qd)
        };
        let de_dt = (energy(t + h) - energy(t - h)) / (2.0 * h);
        let power = tau.dot(&qd);
        prop_assert!((power - de_dt).abs() < 1e-6 * (1.0 + power.abs()), "{power} vs {de_dt}");
    }

    #[test]
    fn clamped_power_is_nonnegative_and_motoring_power_is_positive(tau in -40.0..40.0f64, omega in -40.0..40.0f64) {
        let p = electrical_power(&ActuatorParams::default(), tau, omega);
        prop_assert!(p.clamped_power >= 0.0);
        if tau * omega >= 0.0 {
            prop_assert!(p.power >= 0.0);
        }
        let nearby = electrical_power(&ActuatorParams::default(), tau + 1e-7, omega + 1e-7);
        prop_assert!((nearby.power - p.power).abs() < 1e-3);
    }

    #[test]
    fn clamped_power_grows_with_added_actuators(samples in prop::collection::vec((-40.0..40.0f64, -40.0..40.0f64), 1..12)) {
        let p = ActuatorParams::default();
        let mut total = 0.0;
        for (tau, omega) in samples {
            let next = total + electrical_power(&p, tau, omega).clamped_power;
            prop_assert!(next >= total);
            total = next;
        }
    }

    #[test]
    fn impedance_output_respects_the_torque_limit(
        k in 0.0..500.0f64, d in 0.0..50.0f64, ff in -100.0..100.0f64,
        q in -10.0..10.0f64, qd in -50.0..50.0f64, q_des in -10.0..10.0f64, qd_des in -50.0..50.0f64,
    ) {
        let limit = ActuatorParams::default().max_output_torque();
        let out = impedance_torque(&ImpedanceGains { stiffness: k, damping: d, feedforward: ff }, q_des, q, qd_des, qd, limit);
        prop_assert!(out.torque.abs() <= limit);
    }

    #[test]
    fn diagonal_pairs_stay_synchronous(period in 0.1..2.0f64, duty in 0.05..0.95f64, offset in 0.0..0.99f64, t in 0.0..100.0f64) {
        let gait = GaitSchedule { period, duty_factor: duty, offsets: [0.0, offset, offset, 0.0] };
        prop_assume!(gait.validate().is_ok());
        let s = gait.schedule_at(t);
        for leg in [Leg::FrontRight, Leg::FrontLeft] {
            prop_assert_eq!(s[leg.index()], s[leg.diagonal().index()]);
        }
    }

    #[test]
    fn stance_forces_satisfy_their_constraints_exactly(
        mask in 1u8..16,
        positions in prop::array::uniform4(prop::array::uniform3(-0.4..0.4f64)),
        wrench in prop::array::uniform6(-150.0..150.0f64),
        mu in 0.05..1.5f64,
    ) {
        let feet: Vec<StanceFoot> = Leg::ALL
            .iter()
            .filter(|l| mask & (1 << l.index()) != 0)
            .map(|&leg| StanceFoot { leg, position: Vector3::new(positions[leg.index()][0], positions[leg.index()][1], -0.3 + 0.1 * positions[leg.index()][2]) })
            .collect();
        let alloc = allocate_stance_forces(&feet, &Vector6::from(wrench), mu, DEFAULT_REGULARIZATION).unwrap();
        for leg in Leg::ALL {
            let f = alloc.forces[leg.index()];
            if mask & (1 << leg.index()) == 0 {
                prop_assert_eq!(f, Vector3::zeros());
            }
            prop_assert!(f.z >= 0.0);
            prop_assert!(f.x.abs() <= mu * f.z, "{f} mu {mu}");
            prop_assert!(f.y.abs() <= mu * f.z, "{f} mu {mu}");
        }
        prop_assert!(alloc.friction_margin >= 0.0);
    }

    #[test]
    fn symmetric_stances_beat_the_even_split(
        a in 0.05..0.4f64, b in 0.05..0.3f64, h in 0.15..0.4f64,
        weight in 10.0..300.0f64, diagonal in any::<bool>(), mu in 0.3..1.2f64,
    ) {
        let corners = [(Leg::FrontRight, a, -b), (Leg::FrontLeft, a, b), (Leg::HindRight, -a, -b), (Leg::HindLeft, -a, b)];
        let feet: Vec<StanceFoot> = corners
            .iter()
            .filter(|(leg, _, _)| !diagonal || matches!(leg, Leg::FrontRight | Leg::HindLeft))
            .map(|&(leg, x, y)| StanceFoot { leg, position: Vector3::new(x, y, -h) })
            .collect();
        let wrench = Vector6::new(0.0, 0.0, weight, 0.0, 0.0, 0.0);
        let alloc = allocate_stance_forces(&feet, &wrench, mu, DEFAULT_REGULARIZATION).unwrap();
        let share = Vector3::new(0.0, 0.0, weight / feet.len() as f64);
        let mut stacked = Vector6::zeros();
        for foot in &feet {
            let m = foot.position.cross(&share);
            stacked += Vector6::new(share.x, share.y, share.z, m.x, m.y, m.z);
        }
        let guess = (stacked - wrench).norm_squared() + DEFAULT_REGULARIZATION * feet.len() as f64 * share.norm_squared();
        prop_assert!(alloc.objective <= guess * (1.0 + 1e-9) + 1e-12, "{} > {guess}", alloc.objective);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pendulum_agrees_with_parallel_axis_sum(limb in limb_strategy(), knee in -2.5..2.5f64) {
        let pose = JointAngles::new(0.0, 0.0, knee);
        let analytic = moment_of_inertia_about_hip(&limb, &pose).unwrap();
        let measured = pendulum_moi(&limb, &pose, 0.02).unwrap().inertia;
        prop_assert!((measured - analytic).abs() < 0.01 * analytic, "{measured} vs {analytic}");
    }

    #[test]
    fn robot_description_round_trip_is_idempotent(limb in limb_strategy()) {
        let body = BodyMorphology::default().with_limbs(limb);
        let xml = export_robot_description(&body, &ActuatorParams::default()).unwrap();
        let again = parse_robot_description(&xml).unwrap().to_xml();
        prop_assert_eq!(&xml, &again);
        prop_assert_eq!(parse_robot_description(&again).unwrap().to_xml(), again);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn feasibility_nests_with_gear_ratio_and_lighter_links(g in 6.0..12.0f64, step in 1.2..2.5f64, lighter in 0.3..0.9f64) {
        let grid = GridSpec { cells: 10, ..GridSpec::default() };
        let swing = SwingSpec::default();
        let actuator = ActuatorParams::default();
        let low = feasibility_map(&actuator.clone().with_gear_ratio(g), &swing, &grid).unwrap();
        let high = feasibility_map(&actuator.clone().with_gear_ratio(g * step), &swing, &grid).unwrap();
        prop_assert!(high.contains(&low));
        let light_grid = GridSpec { femur_density: grid.femur_density * lighter, tibia_density: grid.tibia_density * lighter, ..grid.clone() };
        let light = feasibility_map(&actuator.clone().with_gear_ratio(g), &swing, &light_grid).unwrap();
        prop_assert!(light.contains(&low));
    }
}
