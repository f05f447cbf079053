//! Limb and body shape parameters.
//!
//! A limb is a serial chain hanging from a hip mount on the trunk:
//!
//! * link 1 (trunnion) rotates about the fore-aft axis and carries the limb
//!   laterally away from the hip,
//! * link 2 (femur) and link 3 (tibia) swing fore-aft in the sagittal plane,
//! * link 4 is either a tarsus held parallel to the femur (`FourLink`) or a
//!   fixed lateral foot offset folded into the trunnion offset (`ThreeLink`).
//!
//! All lengths are meters, masses kilograms, angles radians.

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::JointAngles;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinkConfig {
    ThreeLink,
    FourLink,
}

/// Fore-aft orientation of the knee when the foot sits below the hip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KneeDirection {
    /// Knee behind the hip-foot line (positive knee angle).
    Backward,
    /// Knee ahead of the hip-foot line (negative knee angle).
    Forward,
}

impl KneeDirection {
    pub fn sign(self) -> f64 {
        match self {
            KneeDirection::Backward => 1.0,
            KneeDirection::Forward => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    Trunnion,
    Femur,
    Tibia,
    Tarsus,
}

impl Link {
    pub const ALL: [Link; 4] = [Link::Trunnion, Link::Femur, Link::Tibia, Link::Tarsus];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Trunnion => "trunnion",
            Link::Femur => "femur",
            Link::Tibia => "tibia",
            Link::Tarsus => "tarsus",
        }
    }
}

/// Point payload strapped to one link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddedMass {
    pub mass: f64,
    pub link: Link,
    /// Distance from the link's proximal joint along the link axis.
    pub position: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Right,
    Left,
}

impl Side {
    /// +1 for the left side (positive body y), -1 for the right.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn mirrored(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Leg {
    FrontRight,
    FrontLeft,
    HindRight,
    HindLeft,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::FrontRight, Leg::FrontLeft, Leg::HindRight, Leg::HindLeft];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn side(self) -> Side {
        match self {
            Leg::FrontRight | Leg::HindRight => Side::Right,
            Leg::FrontLeft | Leg::HindLeft => Side::Left,
        }
    }

    pub fn is_front(self) -> bool {
        matches!(self, Leg::FrontRight | Leg::FrontLeft)
    }

    /// The leg on the other side of the sagittal plane.
    pub fn mirror(self) -> Leg {
        match self {
            Leg::FrontRight => Leg::FrontLeft,
            Leg::FrontLeft => Leg::FrontRight,
            Leg::HindRight => Leg::HindLeft,
            Leg::HindLeft => Leg::HindRight,
        }
    }

    /// The diagonal partner that shares its phase in a trot.
    pub fn diagonal(self) -> Leg {
        match self {
            Leg::FrontRight => Leg::HindLeft,
            Leg::HindLeft => Leg::FrontRight,
            Leg::FrontLeft => Leg::HindRight,
            Leg::HindRight => Leg::FrontLeft,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Leg::FrontRight => "fr",
            Leg::FrontLeft => "fl",
            Leg::HindRight => "hr",
            Leg::HindLeft => "hl",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Leg::FrontRight => "Front Right",
            Leg::FrontLeft => "Front Left",
            Leg::HindRight => "Back Right",
            Leg::HindLeft => "Back Left",
        }
    }
}

impl fmt::Display for Leg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimbMorphology {
    pub config: LinkConfig,
    /// Trunnion lateral offset.
    pub l1: f64,
    /// Femur length.
    pub l2: f64,
    /// Tibia length.
    pub l3: f64,
    /// Tarsus length (`FourLink`) or fixed lateral foot offset (`ThreeLink`, may be 0).
    pub l4: f64,
    pub knee_direction: KneeDirection,
    /// Per-link mass, indexed by [`Link::index`].
    pub link_masses: [f64; 4],
    /// Per-link center-of-mass distance from the proximal joint.
    pub link_com_offsets: [f64; 4],
    #[serde(default)]
    pub added_mass: Option<AddedMass>,
}

impl Default for LimbMorphology {
    fn default() -> Self {
        LimbMorphology {
            config: LinkConfig::ThreeLink,
            l1: 0.06,
            l2: 0.2,
            l3: 0.2,
            l4: 0.0,
            knee_direction: KneeDirection::Backward,
            link_masses: [0.3, 0.25, 0.15, 0.0],
            link_com_offsets: [0.03, 0.1, 0.1, 0.0],
            added_mass: None,
        }
    }
}

impl LimbMorphology {
    /// Three-link limb with the given femur/tibia lengths, link centers of mass
    /// at the geometric midpoints.
    pub fn three_link(femur: f64, tibia: f64) -> Self {
        let mut limb = LimbMorphology {
            l2: femur,
            l3: tibia,
            ..LimbMorphology::default()
        };
        limb.center_coms();
        limb
    }

    /// Limb of total femur+tibia length `total` with the given tibia fraction
    /// (0.45 gives a 45:55 tibia:femur limb).
    pub fn with_ratio(total: f64, tibia_fraction: f64) -> Self {
        Self::three_link(total * (1.0 - tibia_fraction), total * tibia_fraction)
    }

    pub fn length(&self, link: Link) -> f64 {
        match link {
            Link::Trunnion => self.l1,
            Link::Femur => self.l2,
            Link::Tibia => self.l3,
            Link::Tarsus => self.l4,
        }
    }

    pub fn mass(&self, link: Link) -> f64 {
        self.link_masses[link.index()]
    }

    pub fn com_offset(&self, link: Link) -> f64 {
        self.link_com_offsets[link.index()]
    }

    /// Place every link's center of mass at its geometric midpoint.
    pub fn center_coms(&mut self) {
        for link in Link::ALL {
            self.link_com_offsets[link.index()] = 0.5 * self.length(link);
        }
    }

    pub fn has_tarsus(&self) -> bool {
        self.config == LinkConfig::FourLink
    }

    /// Sagittal length that rotates with the hip pitch alone: the femur, plus
    /// the femur-parallel tarsus in the four-link configuration.
    pub fn upper_length(&self) -> f64 {
        match self.config {
            LinkConfig::ThreeLink => self.l2,
            LinkConfig::FourLink => self.l2 + self.l4,
        }
    }

    /// Sagittal length that rotates with hip pitch plus knee.
    pub fn lower_length(&self) -> f64 {
        self.l3
    }

    /// Unsigned lateral distance between the ab/adduction axis and the
    /// sagittal plane of the leg. Groups the trunnion with the fixed foot
    /// offset in the three-link configuration.
    pub fn lateral_offset(&self) -> f64 {
        match self.config {
            LinkConfig::ThreeLink => self.l1 + self.l4,
            LinkConfig::FourLink => self.l1,
        }
    }

    /// Total limb mass, including any payload.
    pub fn total_mass(&self) -> f64 {
        let links: f64 = self.link_masses.iter().sum();
        links + self.added_mass.map_or(0.0, |a| a.mass)
    }

    /// Mass that swings about the hip pitch joint (everything distal to the trunnion).
    pub fn swinging_mass(&self) -> f64 {
        let links = self.mass(Link::Femur) + self.mass(Link::Tibia) + self.mass(Link::Tarsus);
        let payload = match self.added_mass {
            Some(a) if a.link != Link::Trunnion => a.mass,
            _ => 0.0,
        };
        links + payload
    }

    /// Collect invariant violations, prefixing field names with `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |field: &str, rule: &str| {
            out.push(Violation {
                field: format!("{prefix}{field}"),
                rule: rule.to_string(),
            })
        };

        for (name, value) in [("l1", self.l1), ("l2", self.l2), ("l3", self.l3)] {
            if !(value.is_finite() && value > 0.0) {
                push(name, "length must be finite and > 0");
            }
        }
        match self.config {
            LinkConfig::FourLink if !(self.l4.is_finite() && self.l4 > 0.0) => push(
                "l4",
                "tarsus length must be finite and > 0 in the four-link configuration",
            ),
            LinkConfig::ThreeLink if !(self.l4.is_finite() && self.l4 >= 0.0) => {
                push("l4", "lateral foot offset must be finite and >= 0")
            }
            _ => {}
        }

        for link in Link::ALL {
            let m = self.mass(link);
            if !(m.is_finite() && m >= 0.0) {
                push(&format!("link_masses.{}", link.name()), "mass must be finite and >= 0");
            }
            let c = self.com_offset(link);
            let len = self.length(link);
            if !(c.is_finite() && c >= 0.0 && c <= len) {
                push(
                    &format!("link_com_offsets.{}", link.name()),
                    "center of mass must lie within [0, link length]",
                );
            }
        }
        if self.config == LinkConfig::ThreeLink && self.mass(Link::Tarsus) != 0.0 {
            push("link_masses.tarsus", "three-link limbs have no tarsus; mass must be 0");
        }

        if let Some(added) = self.added_mass {
            if !(added.mass.is_finite() && added.mass >= 0.0) {
                push("added_mass.mass", "mass must be finite and >= 0");
            }
            if added.link == Link::Tarsus && !self.has_tarsus() {
                push("added_mass.link", "three-link limbs have no tarsus");
            }
            let len = self.length(added.link);
            if !(added.position.is_finite() && added.position >= 0.0 && added.position <= len) {
                push("added_mass.position", "position must lie within [0, link length]");
            }
        }
        out
    }
}

/// Trunk plus four limbs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodyMorphology {
    pub trunk_mass: f64,
    /// Rotational inertia about the trunk center of mass, trunk axes.
    pub trunk_inertia: [[f64; 3]; 3],
    /// Hip mount positions in the trunk frame, indexed by [`Leg::index`].
    pub hip_positions: [[f64; 3]; 4],
    /// Limbs indexed by [`Leg::index`].
    pub limbs: [LimbMorphology; 4],
    /// When set, hip positions must mirror across the sagittal plane.
    #[serde(default = "default_true")]
    pub symmetric: bool,
}

fn default_true() -> bool {
    true
}

/// Inertia of a solid box about its center.
pub fn box_inertia(mass: f64, length: f64, width: f64, height: f64) -> [[f64; 3]; 3] {
    let k = mass / 12.0;
    [
        [k * (width * width + height * height), 0.0, 0.0],
        [0.0, k * (length * length + height * height), 0.0],
        [0.0, 0.0, k * (length * length + width * width)],
    ]
}

impl Default for BodyMorphology {
    /// A 10 kg class robot with 0.4 m limbs. The trunk inertia is a 0.45 x 0.2
    /// x 0.1 m box approximation.
    fn default() -> Self {
        let trunk_mass = 7.0;
        BodyMorphology {
            trunk_mass,
            trunk_inertia: box_inertia(trunk_mass, 0.45, 0.2, 0.1),
            hip_positions: [
                [0.19, -0.06, 0.0],
                [0.19, 0.06, 0.0],
                [-0.19, -0.06, 0.0],
                [-0.19, 0.06, 0.0],
            ],
            limbs: std::array::from_fn(|_| LimbMorphology::default()),
            symmetric: true,
        }
    }
}

impl BodyMorphology {
    pub fn limb(&self, leg: Leg) -> &LimbMorphology {
        &self.limbs[leg.index()]
    }

    pub fn hip(&self, leg: Leg) -> Vector3<f64> {
        Vector3::from(self.hip_positions[leg.index()])
    }

    pub fn trunk_inertia_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.trunk_inertia[r][c])
    }

    /// Trunk plus every link and payload.
    pub fn total_mass(&self) -> f64 {
        self.trunk_mass + self.limbs.iter().map(LimbMorphology::total_mass).sum::<f64>()
    }

    pub fn with_limbs(mut self, limb: LimbMorphology) -> Self {
        self.limbs = std::array::from_fn(|_| limb.clone());
        self
    }

    pub fn with_added_mass(mut self, added: Option<AddedMass>) -> Self {
        for limb in &mut self.limbs {
            limb.added_mass = added;
        }
        self
    }
}

/// One broken invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Every invariant violation in `morph`; empty iff the morphology is valid.
pub fn validate(morph: &BodyMorphology) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(morph.trunk_mass.is_finite() && morph.trunk_mass > 0.0) {
        out.push(Violation {
            field: "trunk_mass".into(),
            rule: "mass must be finite and > 0".into(),
        });
    }

    let inertia = morph.trunk_inertia_matrix();
    let finite = inertia.iter().all(|v| v.is_finite());
    let symmetric = (inertia - inertia.transpose()).abs().max() <= 1e-12 * inertia.abs().max();
    let positive = finite && symmetric && inertia.symmetric_eigenvalues().iter().all(|&ev| ev > 0.0);
    if !positive {
        out.push(Violation {
            field: "trunk_inertia".into(),
            rule: "inertia must be finite, symmetric and positive definite".into(),
        });
    }

    for leg in Leg::ALL {
        if morph.hip_positions[leg.index()].iter().any(|v| !v.is_finite()) {
            out.push(Violation {
                field: format!("hip_positions.{leg}"),
                rule: "position must be finite".into(),
            });
        }
    }
    if morph.symmetric {
        for leg in [Leg::FrontRight, Leg::HindRight] {
            let a = morph.hip(leg);
            let b = morph.hip(leg.mirror());
            let scale = a.norm().max(b.norm()).max(1.0);
            if (a.x - b.x).abs() > 1e-12 * scale
                || (a.y + b.y).abs() > 1e-12 * scale
                || (a.z - b.z).abs() > 1e-12 * scale
            {
                out.push(Violation {
                    field: format!("hip_positions.{leg}"),
                    rule: format!("must mirror hip {} across the sagittal plane", leg.mirror()),
                });
            }
        }
    }

    for leg in Leg::ALL {
        out.extend(morph.limb(leg).violations(&format!("limbs.{leg}.")));
    }
    out
}

/// Fail with [`Error::InvalidMorphology`] unless `morph` is valid.
pub fn ensure_valid(morph: &BodyMorphology) -> Result<()> {
    let violations = validate(morph);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidMorphology(violations))
    }
}

/// `(tibia, femur)` fractions of the femur+tibia length.
pub fn limb_ratio(morph: &LimbMorphology) -> Result<(f64, f64)> {
    let total = morph.l2 + morph.l3;
    if !(morph.l2 > 0.0 && morph.l3 > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateInput(format!(
            "limb ratio needs positive femur and tibia lengths, got {} and {}",
            morph.l2, morph.l3
        )));
    }
    let tibia = morph.l3 / total;
    Ok((tibia, 1.0 - tibia))
}

/// Transverse inertia of a slender uniform rod about its center.
pub fn rod_inertia(mass: f64, length: f64) -> f64 {
    mass * length * length / 12.0
}

/// Moment of inertia of the swinging limb (everything distal to the trunnion)
/// about the hip pitch axis, by parallel-axis summation.
///
/// Links are treated as slender rods; the payload as a point mass. Only the
/// knee angle of `pose` changes the result.
pub fn moment_of_inertia_about_hip(morph: &LimbMorphology, pose: &JointAngles) -> Result<f64> {
    if !pose.is_finite() {
        return Err(Error::InvalidPose(format!("non-finite joint angles {pose:?}")));
    }
    let (s3, c3) = pose.knee.sin_cos();
    let upper = morph.l2;
    let tibia = morph.l3;

    // Squared distance from the pitch axis of a point `along` the given link,
    // in the femur's sagittal plane with the femur along -z.
    let dist_sq = |link: Link, along: f64| -> f64 {
        match link {
            Link::Trunnion => 0.0,
            Link::Femur => along * along,
            Link::Tibia => upper * upper + along * along + 2.0 * upper * along * c3,
            Link::Tarsus => {
                let x = tibia * s3;
                let z = upper + tibia * c3 + along;
                x * x + z * z
            }
        }
    };

    let mut inertia = 0.0;
    for link in [Link::Femur, Link::Tibia, Link::Tarsus] {
        if link == Link::Tarsus && !morph.has_tarsus() {
            continue;
        }
        let m = morph.mass(link);
        inertia += rod_inertia(m, morph.length(link)) + m * dist_sq(link, morph.com_offset(link));
    }
    if let Some(added) = morph.added_mass {
        inertia += added.mass * dist_sq(added.link, added.position);
    }
    Ok(inertia)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn massless_limb(femur: f64, tibia: f64) -> LimbMorphology {
        LimbMorphology {
            link_masses: [0.0; 4],
            ..LimbMorphology::three_link(femur, tibia)
        }
    }

    #[test]
    fn default_body_is_valid() {
        assert!(validate(&BodyMorphology::default()).is_empty());
    }

    #[test]
    fn zero_femur_is_flagged() {
        let mut body = BodyMorphology::default();
        body.limbs[0].l2 = 0.0;
        let violations = validate(&body);
        assert!(violations.iter().any(|v| v.field == "limbs.fr.l2"), "{violations:?}");
        // The femur COM offset now exceeds the femur length too.
        assert!(violations.iter().all(|v| v.field.starts_with("limbs.fr.")));
    }

    #[test]
    fn payload_beyond_tibia_is_flagged() {
        let mut body = BodyMorphology::default();
        body.limbs[2].added_mass = Some(AddedMass {
            mass: 0.5,
            link: Link::Tibia,
            position: 0.5,
        });
        let violations = validate(&body);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].field, "limbs.hr.added_mass.position");
    }

    #[test]
    fn asymmetric_hips_are_flagged_only_when_declared_symmetric() {
        let mut body = BodyMorphology::default();
        body.hip_positions[0][0] = 0.2;
        assert!(validate(&body).iter().any(|v| v.field == "hip_positions.fr"));
        body.symmetric = false;
        assert!(validate(&body).is_empty());
    }

    #[test]
    fn three_link_tarsus_mass_is_flagged() {
        let mut limb = LimbMorphology::default();
        limb.link_masses[3] = 0.1;
        assert_eq!(limb.violations("").len(), 1);
    }

    #[test]
    fn total_mass_is_sum_of_parts() {
        let body = BodyMorphology::default().with_added_mass(Some(AddedMass {
            mass: 0.5,
            link: Link::Femur,
            position: 0.1,
        }));
        let parts = body.trunk_mass + 4.0 * (0.3 + 0.25 + 0.15 + 0.5);
        assert!((body.total_mass() - parts).abs() <= 1e-12 * parts);
    }

    #[test]
    fn limb_ratios() {
        let (t, f) = limb_ratio(&LimbMorphology::three_link(0.2, 0.2)).unwrap();
        assert_eq!((t, f), (0.5, 0.5));
        let (t, f) = limb_ratio(&LimbMorphology::three_link(0.22, 0.18)).unwrap();
        assert!((t - 0.45).abs() < 1e-12 && (f - 0.55).abs() < 1e-12);
        let (t, f) = limb_ratio(&LimbMorphology::three_link(0.3, 0.1)).unwrap();
        assert!((t - 0.25).abs() < 1e-12 && (f - 0.75).abs() < 1e-12);
        assert!(matches!(
            limb_ratio(&LimbMorphology::three_link(0.0, 0.0)),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn point_mass_moi() {
        let mut limb = massless_limb(0.6, 0.2);
        limb.added_mass = Some(AddedMass {
            mass: 1.0,
            link: Link::Femur,
            position: 0.5,
        });
        let moi = moment_of_inertia_about_hip(&limb, &JointAngles::default()).unwrap();
        assert!((moi - 0.25).abs() < 1e-15);
    }

    #[test]
    fn uniform_rod_moi() {
        let (m, l) = (0.7, 0.3);
        let mut limb = massless_limb(l, 0.2);
        limb.link_masses[Link::Femur.index()] = m;
        let moi = moment_of_inertia_about_hip(&limb, &JointAngles::default()).unwrap();
        assert!((moi - m * l * l / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tibia_payload_beats_femur_payload() {
        let limb = LimbMorphology::default();
        let at = |link, position| {
            let mut l = limb.clone();
            l.added_mass = Some(AddedMass {
                mass: 0.5,
                link,
                position,
            });
            moment_of_inertia_about_hip(&l, &JointAngles::default()).unwrap()
        };
        assert!(at(Link::Tibia, 0.1) > at(Link::Femur, 0.1));
    }

    #[test]
    fn invalid_pose_is_rejected() {
        let pose = JointAngles::new(0.0, f64::NAN, 0.0);
        assert!(matches!(
            moment_of_inertia_about_hip(&LimbMorphology::default(), &pose),
            Err(Error::InvalidPose(_))
        ));
    }

    #[test]
    fn four_link_tarsus_adds_inertia() {
        let mut limb = LimbMorphology {
            config: LinkConfig::FourLink,
            l4: 0.08,
            ..LimbMorphology::default()
        };
        limb.link_masses[3] = 0.05;
        limb.link_com_offsets[3] = 0.04;
        assert!(limb.violations("").is_empty());
        let pose = JointAngles::new(0.0, 0.0, 0.0);
        let with = moment_of_inertia_about_hip(&limb, &pose).unwrap();
        let without = moment_of_inertia_about_hip(&LimbMorphology::default(), &pose).unwrap();
        // Straight limb: tarsus COM sits 0.44 m below the hip.
        let expected = without + rod_inertia(0.05, 0.08) + 0.05 * 0.44 * 0.44;
        assert!((with - expected).abs() < 1e-12);
    }
}
