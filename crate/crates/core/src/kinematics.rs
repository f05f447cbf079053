//! Single-limb kinematics under the serial-chain simplification.
//!
//! Limb base frame (at the hip mount, axes parallel to the trunk):
//!
//! ```text
//!        z (up)
//!        |
//!        |___ x (fore-aft, forward positive)
//!       /
//!      y (lateral, body left positive)
//! ```
//!
//! The ab/adduction joint rotates about +x. Hip pitch and knee rotate about
//! -y, so a positive hip angle swings the foot forward. With all angles zero
//! the leg hangs straight down and the foot sits at `(0, e, -(upper + lower))`
//! where `e` is the signed lateral offset (positive for left limbs).
//!
//! In the four-link configuration the tarsus is held parallel to the femur, so
//! the chain is kinematically a three-link chain whose femur-parallel length is
//! femur + tarsus and whose lateral offset is the trunnion alone.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphology::{AddedMass, KneeDirection, LimbMorphology, Link, Side};

/// Reciprocal condition number below which the foot Jacobian is treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointAngles {
    /// Ab/adduction about the fore-aft axis.
    pub abduction: f64,
    /// Femur pitch.
    pub hip: f64,
    /// Tibia pitch relative to the femur.
    pub knee: f64,
}

impl JointAngles {
    pub fn new(abduction: f64, hip: f64, knee: f64) -> Self {
        JointAngles { abduction, hip, knee }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        JointAngles::new(v.x, v.y, v.z)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.abduction, self.hip, self.knee)
    }

    pub fn is_finite(&self) -> bool {
        self.abduction.is_finite() && self.hip.is_finite() && self.knee.is_finite()
    }

    /// Every angle wrapped into (-pi, pi].
    pub fn wrapped(self) -> Self {
        JointAngles::new(wrap_angle(self.abduction), wrap_angle(self.hip), wrap_angle(self.knee))
    }
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut w = a.rem_euclid(TAU);
    if w > PI {
        w -= TAU;
    }
    w
}

/// Derived chain lengths for one limb on one side of the body.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LimbGeometry {
    pub upper: f64,
    pub lower: f64,
    /// Signed lateral offset: positive for left limbs.
    pub lateral: f64,
    pub knee_direction: KneeDirection,
}

impl LimbGeometry {
    pub fn new(morph: &LimbMorphology, side: Side) -> Self {
        LimbGeometry {
            upper: morph.upper_length(),
            lower: morph.lower_length(),
            lateral: side.sign() * morph.lateral_offset(),
            knee_direction: morph.knee_direction,
        }
    }

    pub fn forward_kinematics(&self, q: &JointAngles) -> Vector3<f64> {
        let (s1, c1) = q.abduction.sin_cos();
        let (s2, c2) = q.hip.sin_cos();
        let (s23, c23) = (q.hip + q.knee).sin_cos();
        let along = self.lower * c23 + self.upper * c2;
        Vector3::new(
            self.lower * s23 + self.upper * s2,
            s1 * along + self.lateral * c1,
            -c1 * along + self.lateral * s1,
        )
    }

    pub fn jacobian(&self, q: &JointAngles) -> FootJacobian {
        let (s1, c1) = q.abduction.sin_cos();
        let (s2, c2) = q.hip.sin_cos();
        let (s3, c3) = q.knee.sin_cos();
        let c23 = c2 * c3 - s2 * s3;
        let s23 = s2 * c3 + c2 * s3;
        let (l2, l3, e) = (self.upper, self.lower, self.lateral);
        FootJacobian(Matrix3::new(
            0.0,
            l3 * c23 + l2 * c2,
            l3 * c23,
            l3 * c1 * c23 + l2 * c1 * c2 - e * s1,
            -l3 * s1 * s23 - l2 * s1 * s2,
            -l3 * s1 * s23,
            l3 * s1 * c23 + l2 * c2 * s1 + e * c1,
            l3 * c1 * s23 + l2 * c1 * s2,
            l3 * c1 * s23,
        ))
    }
}

/// Foot-velocity Jacobian: rows are foot velocity components (x, y, z) in the
/// limb base frame, columns are the ab/ad, hip and knee rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FootJacobian(pub Matrix3<f64>);

impl FootJacobian {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Smallest over largest singular value; 0 for a rank-deficient Jacobian.
    pub fn reciprocal_condition(&self) -> f64 {
        let sv = self.0.singular_values();
        let max = sv.max();
        if max == 0.0 {
            0.0
        } else {
            sv.min() / max
        }
    }

    /// Joint torques produced by a foot force: `J^T f`.
    pub fn transpose_mul(&self, force: &Vector3<f64>) -> Vector3<f64> {
        self.0.tr_mul(force)
    }
}

pub fn forward_kinematics(morph: &LimbMorphology, side: Side, q: &JointAngles) -> Vector3<f64> {
    LimbGeometry::new(morph, side).forward_kinematics(q)
}

pub fn jacobian_foot(morph: &LimbMorphology, side: Side, q: &JointAngles) -> FootJacobian {
    LimbGeometry::new(morph, side).jacobian(q)
}

/// Ground reaction force recovered from joint torques.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrfEstimate {
    /// Force in the limb base frame (N).
    pub force: Vector3<f64>,
    pub calibration_applied: bool,
    /// Condition number of the foot Jacobian at the estimate.
    pub condition_number: f64,
}

/// `cal ⊙ (J^T)^-1 τ`.
///
/// `tau` is the torque the external foot load exerts on the joints, so a
/// foot force `f` maps to `tau = J^T f` and back to `f`.
pub fn estimate_grf(
    morph: &LimbMorphology,
    side: Side,
    q: &JointAngles,
    tau: &Vector3<f64>,
    cal: &Vector3<f64>,
) -> Result<GrfEstimate> {
    let jac = jacobian_foot(morph, side, q);
    let rcond = jac.reciprocal_condition();
    if !(rcond >= SINGULAR_RCOND) {
        return Err(Error::Singular { condition: 1.0 / rcond });
    }
    let lu = jac.0.transpose().lu();
    let raw = lu.solve(tau).ok_or(Error::Singular {
        condition: f64::INFINITY,
    })?;
    Ok(GrfEstimate {
        force: raw.component_mul(cal),
        calibration_applied: *cal != Vector3::repeat(1.0),
        condition_number: 1.0 / rcond,
    })
}

/// Closed-form inverse kinematics.
///
/// The ab/ad branch closest to `seed` is kept; the knee branch follows the
/// morphology's knee direction. Unreachable targets report the radial
/// projection onto the workspace.
pub fn inverse_kinematics(
    morph: &LimbMorphology,
    side: Side,
    target: &Vector3<f64>,
    seed: &JointAngles,
) -> Result<JointAngles> {
    let geom = LimbGeometry::new(morph, side);
    let (a, b, e) = (geom.upper, geom.lower, geom.lateral);
    let (x, y, z) = (target.x, target.y, target.z);
    let reach_max = a + b;
    let reach_min = (a - b).abs();
    const SLACK: f64 = 1e-12;

    let transverse_sq = y * y + z * z - e * e;
    let along = transverse_sq.max(0.0).sqrt();
    let planar = (x * x + along * along).sqrt();

    let unreachable = transverse_sq < -SLACK * (e * e).max(1.0)
        || planar > reach_max * (1.0 + SLACK)
        || planar < reach_min * (1.0 - SLACK);
    if unreachable || !target.iter().all(|v| v.is_finite()) {
        let nearest = nearest_reachable(&geom, target);
        return Err(Error::Unreachable {
            target: [x, y, z],
            nearest: [nearest.x, nearest.y, nearest.z],
        });
    }

    // Two ab/ad branches: the leg pointing away from (+along) or toward the hip.
    let heading = z.atan2(y);
    let candidates = [heading - (-along).atan2(e), heading - along.atan2(e)];
    let abduction = if along == 0.0 {
        wrap_angle(candidates[0])
    } else {
        let d0 = wrap_angle(candidates[0] - seed.abduction).abs();
        let d1 = wrap_angle(candidates[1] - seed.abduction).abs();
        wrap_angle(if d1 < d0 { candidates[1] } else { candidates[0] })
    };
    let sagittal_along = {
        let (s1, c1) = abduction.sin_cos();
        s1 * y - c1 * z
    };

    let cos_knee = ((x * x + sagittal_along * sagittal_along - a * a - b * b) / (2.0 * a * b)).clamp(-1.0, 1.0);
    let knee = geom.knee_direction.sign() * cos_knee.acos();
    let (s3, c3) = knee.sin_cos();
    let hip = x.atan2(sagittal_along) - (b * s3).atan2(a + b * c3);
    Ok(JointAngles::new(abduction, wrap_angle(hip), knee))
}

fn nearest_reachable(geom: &LimbGeometry, target: &Vector3<f64>) -> Vector3<f64> {
    let (a, b, e) = (geom.upper, geom.lower, geom.lateral);
    let transverse_sq = target.y * target.y + target.z * target.z - e * e;
    let along = transverse_sq.max(0.0).sqrt();
    let planar = (target.x * target.x + along * along).sqrt();
    let heading = target.z.atan2(target.y);
    let abduction = heading - (-along).atan2(e);
    let clamped = planar.clamp((a - b).abs(), a + b);
    let (x, along) = if planar > 0.0 {
        (target.x * clamped / planar, along * clamped / planar)
    } else {
        (0.0, clamped)
    };
    let (s1, c1) = abduction.sin_cos();
    Vector3::new(x, s1 * along + e * c1, -c1 * along + e * s1)
}

/// Least-squares per-axis scale minimizing `Σ (scale·est − ref)²`.
pub fn calibrate_axes(trials: &[(Vector3<f64>, Vector3<f64>)]) -> Result<Vector3<f64>> {
    if trials.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "calibration needs at least 2 trials, got {}",
            trials.len()
        )));
    }
    let mut scale = Vector3::zeros();
    for axis in 0..3 {
        let (mut num, mut den) = (0.0, 0.0);
        for (est, reference) in trials {
            num += est[axis] * reference[axis];
            den += est[axis] * est[axis];
        }
        if den == 0.0 {
            return Err(Error::CalibrationUndetermined { axis });
        }
        scale[axis] = num / den;
    }
    Ok(scale)
}

/// Center of mass of each link (and payload) of a limb, in the limb base frame.
pub fn link_mass_points(morph: &LimbMorphology, side: Side, q: &JointAngles) -> Vec<(f64, Vector3<f64>)> {
    let e = side.sign() * morph.lateral_offset();
    let (s1, c1) = q.abduction.sin_cos();
    let (s2, c2) = q.hip.sin_cos();
    let (s23, c23) = (q.hip + q.knee).sin_cos();
    let l2 = morph.l2;
    let l3 = morph.l3;

    // Sagittal (x, along) coordinates of a point, then rotate by ab/ad.
    let lift =
        |x: f64, along: f64, lateral: f64| Vector3::new(x, s1 * along + lateral * c1, -c1 * along + lateral * s1);
    let trunnion_lateral = side.sign() * morph.l1;
    let point = |link: Link, d: f64| -> Vector3<f64> {
        match link {
            Link::Trunnion => {
                let lat = if morph.l1 > 0.0 {
                    trunnion_lateral * d / morph.l1
                } else {
                    0.0
                };
                lift(0.0, 0.0, lat)
            }
            Link::Femur => lift(d * s2, d * c2, e),
            Link::Tibia => lift(l2 * s2 + d * s23, l2 * c2 + d * c23, e),
            Link::Tarsus => lift(l2 * s2 + l3 * s23 + d * s2, l2 * c2 + l3 * c23 + d * c2, e),
        }
    };

    let mut out: Vec<(f64, Vector3<f64>)> = Link::ALL
        .iter()
        .filter(|&&link| link != Link::Tarsus || morph.has_tarsus())
        .map(|&link| (morph.mass(link), point(link, morph.com_offset(link))))
        .collect();
    if let Some(AddedMass { mass, link, position }) = morph.added_mass {
        out.push((mass, point(link, position)));
    }
    out
}
