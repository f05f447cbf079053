//! Single-step stance force allocation as a small nonnegative least-squares
//! problem over friction-pyramid generators.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::morphology::Leg;

/// Regularization weight on `‖f‖²`.
pub const DEFAULT_REGULARIZATION: f64 = 1e-9;
const MAX_ITERATIONS: usize = 200;
/// Relative to `max|C|·‖d‖`; above the gradient's roundoff, below the pull of
/// the `ε‖f‖²` term among wrench-equivalent force sets.
const KKT_TOLERANCE: f64 = 1e-13;

/// Contact forces on stance feet (world frame, force from ground on foot).
#[derive(Clone, Debug, PartialEq)]
pub struct StanceAllocation {
    /// Zero for legs not in stance.
    pub forces: [Vector3<f64>; 4],
    /// `‖A f − w‖`.
    pub residual: f64,
    /// Smallest `μ f_z − max(|f_x|, |f_y|)` over stance feet; never negative
    /// since every force is a nonnegative combination of pyramid edges.
    pub friction_margin: f64,
    pub objective: f64,
}

impl StanceAllocation {
    pub fn total_force(&self) -> Vector3<f64> {
        self.forces.iter().sum()
    }
}

/// Stance foot positions relative to the point the wrench is taken about.
#[derive(Clone, Copy, Debug)]
pub struct StanceFoot {
    pub leg: Leg,
    pub position: Vector3<f64>,
}

fn generators(mu: f64) -> [Vector3<f64>; 4] {
    [
        Vector3::new(mu, 0.0, 1.0),
        Vector3::new(-mu, 0.0, 1.0),
        Vector3::new(0.0, mu, 1.0),
        Vector3::new(0.0, -mu, 1.0),
    ]
}

/// Wrench map rows for one foot: force then moment about the origin.
fn wrench_columns(foot: &Vector3<f64>, f: &Vector3<f64>) -> Vector6<f64> {
    let m = foot.cross(f);
    Vector6::new(f.x, f.y, f.z, m.x, m.y, m.z)
}

/// Minimize `‖A f − w‖² + ε‖f‖²` with each `f` inside the linearized
/// friction pyramid `|f_x|, |f_y| ≤ μ f_z` (scaled down by the generator
/// parameterization to `|f_x| + |f_y| ≤ μ f_z`).
///
/// `wrench` is `(force, moment)` about the origin of the foot positions.
pub fn allocate_stance_forces(
    feet: &[StanceFoot],
    wrench: &Vector6<f64>,
    mu: f64,
    regularization: f64,
) -> Result<StanceAllocation> {
    allocate_stance_forces_weighted(feet, wrench, &Vector6::repeat(1.0), mu, regularization)
}

/// As [`allocate_stance_forces`] with the wrench residual scaled row by row,
/// `‖S (A f − w)‖² + ε‖f‖²`, `S = diag(weights)`. `residual` and `objective`
/// stay unweighted and weighted respectively.
pub fn allocate_stance_forces_weighted(
    feet: &[StanceFoot],
    wrench: &Vector6<f64>,
    weights: &Vector6<f64>,
    mu: f64,
    regularization: f64,
) -> Result<StanceAllocation> {
    if !weights.iter().all(|w| w.is_finite() && *w > 0.0) {
        return Err(Error::Infeasible(format!(
            "wrench weights {weights:?} must be finite and > 0"
        )));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::Infeasible(format!(
            "friction coefficient {mu} must be finite and >= 0"
        )));
    }
    if feet.is_empty() {
        if wrench.iter().all(|&w| w == 0.0) {
            return Ok(StanceAllocation {
                forces: [Vector3::zeros(); 4],
                residual: 0.0,
                friction_margin: 0.0,
                objective: 0.0,
            });
        }
        return Err(Error::Infeasible("nonzero wrench requested with no stance feet".into()));
    }
    let gens = generators(mu);
    let n = 4 * feet.len();
    let reg = regularization.max(0.0).sqrt();
    // Stack [A G; √ε G] β ≈ [w; 0].
    let mut c = DMatrix::zeros(6 + 3 * feet.len(), n);
    for (i, foot) in feet.iter().enumerate() {
        for (j, g) in gens.iter().enumerate() {
            let col = 4 * i + j;
            let w = wrench_columns(&foot.position, g);
            for r in 0..6 {
                c[(r, col)] = weights[r] * w[r];
            }
            for r in 0..3 {
                c[(6 + 3 * i + r, col)] = reg * g[r];
            }
        }
    }
    let mut d = DVector::zeros(6 + 3 * feet.len());
    d.rows_mut(0, 6).copy_from(&wrench.component_mul(weights));
    let beta = nnls(&c, &d)?;

    let mut forces = [Vector3::zeros(); 4];
    let mut stacked = Vector6::zeros();
    let mut margin = f64::INFINITY;
    let mut norm_sq = 0.0;
    for (i, foot) in feet.iter().enumerate() {
        let f: Vector3<f64> = (0..4).map(|j| gens[j] * beta[4 * i + j]).sum();
        stacked += wrench_columns(&foot.position, &f);
        margin = margin.min(mu * f.z - f.x.abs().max(f.y.abs()));
        norm_sq += f.norm_squared();
        forces[foot.leg.index()] += f;
    }
    let residual = (stacked - wrench).norm();
    Ok(StanceAllocation {
        forces,
        residual,
        friction_margin: margin,
        objective: (stacked - wrench).component_mul(weights).norm_squared() + regularization.max(0.0) * norm_sq,
    })
}

/// Lawson–Hanson active-set solver for `min ‖C x − d‖` subject to `x ≥ 0`.
///
/// Passive-set subproblems are solved by SVD on the columns of `C`, which
/// keeps redundant generators well posed; ties break toward the lowest index,
/// which keeps the result deterministic.
pub fn nnls(c: &DMatrix<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
    let n = c.ncols();
    // Roundoff floor of the gradient is about ε·max|C|·‖d‖.
    let scale = (c.amax() * d.norm()).max(f64::MIN_POSITIVE);

    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    // Entered with a gradient that is roundoff, and left at once; barred until `x` moves.
    let mut barred = vec![false; n];

    let solve_passive = |passive: &[bool]| -> Option<DVector<f64>> {
        let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
        let sub = c.select_columns(&idx);
        let svd = sub.clone().svd(true, true);
        let mut z = svd.solve(d, 1e-13).ok()?;
        // One refinement pass recovers the digits lost along the √ε directions.
        z += svd.solve(&(d - &sub * &z), 1e-13).ok()?;
        let mut full = DVector::zeros(n);
        for (r, &i) in idx.iter().enumerate() {
            full[i] = z[r];
        }
        Some(full)
    };

    for _ in 0..MAX_ITERATIONS {
        let grad = c.tr_mul(&(d - c * &x));
        let candidate = (0..n)
            .filter(|&i| !passive[i] && !barred[i])
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if grad[b] >= grad[i] => Some(b),
                _ => Some(i),
            });
        let Some(j) = candidate.filter(|&j| grad[j] > KKT_TOLERANCE * scale) else {
            return Ok(x);
        };
        passive[j] = true;
        let mut first = true;
        loop {
            let z = solve_passive(&passive)
                .ok_or_else(|| Error::Infeasible("force allocation subproblem is singular".into()))?;
            if first && z[j] <= 0.0 {
                passive[j] = false;
                barred[j] = true;
                break;
            }
            first = false;
            barred.fill(false);
            if (0..n).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                x = z;
                break;
            }
            // Step toward z until the first passive variable hits zero.
            let mut alpha = f64::INFINITY;
            for i in (0..n).filter(|&i| passive[i] && z[i] <= 0.0) {
                alpha = alpha.min(x[i] / (x[i] - z[i]));
            }
            x = &x + (&z - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= 1e-15 * scale {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
        }
    }
    Err(Error::Infeasible(format!(
        "force allocation did not converge in {MAX_ITERATIONS} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    const WEIGHT: f64 = 10.0 * 9.81;

    fn foot(leg: Leg, x: f64, y: f64) -> StanceFoot {
        StanceFoot {
            leg,
            position: Vector3::new(x, y, -0.28),
        }
    }

    fn support(weight: f64) -> Vector6<f64> {
        Vector6::new(0.0, 0.0, weight, 0.0, 0.0, 0.0)
    }

    #[test]
    fn symmetric_stance_shares_weight() {
        let feet = [
            foot(Leg::FrontRight, 0.19, -0.12),
            foot(Leg::FrontLeft, 0.19, 0.12),
            foot(Leg::HindRight, -0.19, -0.12),
            foot(Leg::HindLeft, -0.19, 0.12),
        ];
        let a = allocate_stance_forces(&feet, &support(WEIGHT), 0.6, DEFAULT_REGULARIZATION).unwrap();
        for f in &a.forces {
            assert!((f.z - WEIGHT / 4.0).abs() < 1e-6, "{f}");
            assert!(f.x.abs() < 1e-6 && f.y.abs() < 1e-6);
        }
    }

    #[test]
    fn diagonal_stance_balances_moment() {
        // The COM lies on the support line, closer to the hind foot.
        let feet = [foot(Leg::FrontRight, 0.2, -0.12), foot(Leg::HindLeft, -0.18, 0.108)];
        let a = allocate_stance_forces(&feet, &support(WEIGHT), 0.6, DEFAULT_REGULARIZATION).unwrap();
        let moment: Vector3<f64> = feet.iter().map(|f| f.position.cross(&a.forces[f.leg.index()])).sum();
        assert!(moment.norm() < 1e-6, "{moment}");
        assert!((a.total_force().z - WEIGHT).abs() < 1e-6);
        let front = a.forces[Leg::FrontRight.index()].z;
        assert!((front - WEIGHT * 0.18 / 0.38).abs() < 1e-6, "{front}");
    }

    #[test]
    fn frictionless_lateral_request_leaves_residual() {
        let feet = [foot(Leg::FrontRight, 0.19, -0.12), foot(Leg::HindLeft, -0.19, 0.12)];
        let w = Vector6::new(0.0, 20.0, 0.0, 0.0, 0.0, 0.0);
        let a = allocate_stance_forces(&feet, &w, 0.0, DEFAULT_REGULARIZATION).unwrap();
        for f in &a.forces {
            assert_eq!(f.x, 0.0);
            assert_eq!(f.y, 0.0);
        }
        assert!(a.residual > 19.0);
    }

    #[test]
    fn weights_trade_force_error_for_moment_error() {
        // Support line misses the origin: zero moment needs lateral force.
        let feet = [foot(Leg::FrontRight, 0.25, -0.12), foot(Leg::HindLeft, -0.13, 0.12)];
        let plain = allocate_stance_forces(&feet, &support(WEIGHT), 0.6, DEFAULT_REGULARIZATION).unwrap();
        let w = Vector6::new(0.1, 0.1, 0.1, 5.0, 5.0, 5.0);
        let weighted =
            allocate_stance_forces_weighted(&feet, &support(WEIGHT), &w, 0.6, DEFAULT_REGULARIZATION).unwrap();
        let moment = |a: &StanceAllocation| -> f64 {
            feet.iter()
                .map(|f| f.position.cross(&a.forces[f.leg.index()]))
                .sum::<Vector3<f64>>()
                .norm()
        };
        assert!(moment(&weighted) < moment(&plain));
        assert!(allocate_stance_forces_weighted(&feet, &support(WEIGHT), &Vector6::zeros(), 0.6, 0.0).is_err());
    }

    #[test]
    fn no_feet_and_upward_wrench_is_infeasible() {
        assert!(matches!(
            allocate_stance_forces(&[], &support(WEIGHT), 0.6, DEFAULT_REGULARIZATION),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn nnls_matches_unconstrained_solution_when_interior() {
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 2.0, 1.0, 1.0]);
        let d = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        let x = nnls(&c, &d).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
        let d = DVector::from_vec(vec![-1.0, 2.0, 0.0]);
        let x = nnls(&c, &d).unwrap();
        assert_eq!(x[0], 0.0);
        assert!(x[1] > 0.0);
    }
}
