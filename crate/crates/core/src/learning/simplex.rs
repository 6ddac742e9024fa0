//! Euclidean projection onto `{u : a^T u = 1, G u >= 0}`.
//!
//! Dual active-set method for the strictly convex QP
//! `min 1/2 ||u - w||^2`: start from the equality-constrained minimizer, then
//! repeatedly add the most violated inequality, dropping active inequalities
//! whose multipliers would turn negative. With identity Hessian the primal
//! step direction is the residual of projecting the new constraint normal onto
//! the span of the active normals.

use nalgebra::{DMatrix, DVector};

use super::LinearRatioModel;
use crate::error::{Error, Result};
use crate::linalg;
use crate::mdp::StateDistribution;
use crate::tolerances;

/// Projects the model's weights onto the `d_mu`-weighted simplex
/// `{u : sum_s d_mu(s) phi(s)^T u = 1, phi(s)^T u >= 0}`.
pub fn project_weighted_simplex(
    model: &LinearRatioModel,
    d_mu: &StateDistribution,
) -> Result<DVector<f64>> {
    let phi = model.features.matrix();
    crate::mdp::check_len("d_mu", phi.nrows(), d_mu.len())?;
    let a = phi.tr_mul(d_mu.probs());
    project_polyhedron(&model.weights, &a, 1.0, phi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Active {
    Equality,
    Inequality(usize),
}

/// Minimizes `||u - w||_2` subject to `a^T u = b` and `g_i^T u >= 0` for every
/// row `g_i` of `g`.
pub fn project_polyhedron(
    w: &DVector<f64>,
    a: &DVector<f64>,
    b: f64,
    g: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let k = w.len();
    crate::mdp::check_len("equality normal", k, a.len())?;
    crate::mdp::check_len("inequality normals", k, g.ncols())?;
    let a_norm2 = a.norm_squared();
    let scale = g.amax().max(1.0) * w.amax().max(1.0);
    let feasible = |u: &DVector<f64>, tol: f64| {
        (a.dot(u) - b).abs() <= tol * b.abs().max(1.0) && (g * u).min() >= -tol * scale
    };
    if feasible(w, tolerances::CONSTRUCTION) {
        return Ok(w.clone());
    }
    if a_norm2 <= tolerances::DEGENERATE_MASS {
        return Err(Error::Infeasible);
    }

    let mut x = w + a * ((b - a.dot(w)) / a_norm2);
    let mut active = vec![Active::Equality];
    let mut multipliers = vec![(b - a.dot(w)) / a_norm2];
    let normal = |c: Active| -> DVector<f64> {
        match c {
            Active::Equality => a.clone(),
            Active::Inequality(i) => g.row(i).transpose(),
        }
    };

    let max_rounds = 50 * (g.nrows() + k) + 100;
    let mut rounds = 0;
    loop {
        let slacks = g * &x;
        let (p, &violation) = slacks
            .iter()
            .enumerate()
            .min_by(|l, r| l.1.total_cmp(r.1))
            .expect("at least one inequality");
        if violation >= -tolerances::SOLVER_RESIDUAL * scale {
            break;
        }
        let n_plus = g.row(p).transpose();
        let mut new_multiplier = 0.0;
        loop {
            rounds += 1;
            if rounds > max_rounds {
                return Err(Error::SolverFailure {
                    detail: "simplex projection did not terminate".into(),
                });
            }
            let (z, r) = step_direction(&active, &normal, &n_plus)?;
            let z_dot = z.dot(&n_plus);
            let full_step = if z.norm() > 1e-12 * n_plus.norm() && z_dot > 0.0 {
                Some(-n_plus.dot(&x) / z_dot)
            } else {
                None
            };
            let mut partial: Option<(f64, usize)> = None;
            for (j, (&c, &rj)) in active.iter().zip(r.iter()).enumerate() {
                if matches!(c, Active::Inequality(_)) && rj > 0.0 {
                    let t = multipliers[j] / rj;
                    if partial.is_none_or(|(best, _)| t < best) {
                        partial = Some((t, j));
                    }
                }
            }
            let (t, drop) = match (full_step, partial) {
                (None, None) => return Err(Error::Infeasible),
                (None, Some((t1, j))) => {
                    for (u, rj) in multipliers.iter_mut().zip(r.iter()) {
                        *u -= t1 * rj;
                    }
                    new_multiplier += t1;
                    active.remove(j);
                    multipliers.remove(j);
                    continue;
                }
                (Some(t2), None) => (t2, None),
                (Some(t2), Some((t1, j))) => {
                    if t1 < t2 {
                        (t1, Some(j))
                    } else {
                        (t2, None)
                    }
                }
            };
            x += &z * t;
            for (u, rj) in multipliers.iter_mut().zip(r.iter()) {
                *u -= t * rj;
            }
            new_multiplier += t;
            match drop {
                Some(j) => {
                    active.remove(j);
                    multipliers.remove(j);
                }
                None => {
                    active.push(Active::Inequality(p));
                    multipliers.push(new_multiplier);
                    break;
                }
            }
        }
    }
    if !feasible(&x, tolerances::SIMPLEX_FEASIBILITY) {
        return Err(Error::SolverFailure {
            detail: "simplex projection left constraints violated".into(),
        });
    }
    Ok(x)
}

/// `z = (I - N (N^T N)^{-1} N^T) n`, `r = (N^T N)^{-1} N^T n`.
fn step_direction(
    active: &[Active],
    normal: &impl Fn(Active) -> DVector<f64>,
    n_plus: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if active.is_empty() {
        return Ok((n_plus.clone(), DVector::zeros(0)));
    }
    let columns: Vec<DVector<f64>> = active.iter().map(|&c| normal(c)).collect();
    let n = DMatrix::from_columns(&columns);
    let r = linalg::solve(n.tr_mul(&n), &n.tr_mul(n_plus))?;
    let z = n_plus - &n * &r;
    Ok((z, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::FeatureMap;

    fn model(phi: FeatureMap, w: &[f64]) -> LinearRatioModel {
        LinearRatioModel::new(phi, DVector::from_column_slice(w)).unwrap()
    }

    #[test]
    fn feasible_input_is_unchanged() {
        let d = StateDistribution::from_slice(&[0.25, 0.75]).unwrap();
        let m = model(FeatureMap::identity(2), &[1.0, 1.0]);
        assert_eq!(project_weighted_simplex(&m, &d).unwrap(), m.weights);
    }

    #[test]
    fn single_feature_equality_closed_form() {
        let phi = FeatureMap::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let d = StateDistribution::from_slice(&[0.2, 0.3, 0.5]).unwrap();
        let m = model(phi, &[5.0]);
        let bar = 0.2 + 0.6 + 1.5;
        let expected = 5.0 + bar * (1.0 - bar * 5.0) / (bar * bar);
        let u = project_weighted_simplex(&m, &d).unwrap();
        assert!((u[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn clips_negative_coordinate() {
        // Equality projection of [-1, 3] onto u0 + u1 = 2 leaves it unchanged
        // but violates u0 >= 0; the answer is [0, 2].
        let d = StateDistribution::from_slice(&[0.5, 0.5]).unwrap();
        let m = model(FeatureMap::identity(2), &[-1.0, 3.0]);
        let u = project_weighted_simplex(&m, &d).unwrap();
        assert!((u - DVector::from_vec(vec![0.0, 2.0])).amax() < 1e-12);
    }

    #[test]
    fn infeasible_when_constraints_conflict() {
        // phi = [1, -1] for two states: u >= 0 and -u >= 0 forces u = 0,
        // while the weighted sum 0.3 u - 0.7 u = 1 needs u = -2.5.
        let phi = FeatureMap::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let d = StateDistribution::from_slice(&[0.3, 0.7]).unwrap();
        let m = model(phi, &[1.0]);
        assert_eq!(project_weighted_simplex(&m, &d), Err(Error::Infeasible));
    }
}
