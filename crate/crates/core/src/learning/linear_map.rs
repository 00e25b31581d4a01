//! Linear map update.
//!
//! Minimizes
//!
//! ```text
//! ½||AX - T||² + λ2/2 ||A||² + λ3/2 ||AAᵀ - I||² - λ4 log|det AᵀA|
//! ```
//!
//! by gradient descent with Armijo backtracking. Steps are scaled on the
//! right by `(XXᵀ + λ2 I)⁻¹`, the inverse curvature of the quadratic part,
//! which keeps the number of steps small on badly scaled data.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::learning::HyperParams;
use crate::measures::f_d;

const MAX_STEPS: usize = 200;
const GRAD_TOL: f64 = 1e-8;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn check_shapes(x: &DMatrix<f64>, target: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<()> {
    check_len("map update sample count", x.ncols(), target.ncols())?;
    check_len("map update input dimension", a.ncols(), x.nrows())?;
    check_len("map update output dimension", a.nrows(), target.nrows())
}

/// Value of the map objective at `a`.
pub fn map_objective(
    x: &DMatrix<f64>,
    target: &DMatrix<f64>,
    a: &DMatrix<f64>,
    hyper: &HyperParams,
) -> Result<f64> {
    check_shapes(x, target, a)?;
    let fit = 0.5 * (a * x - target).norm_squared();
    Ok(fit + f_d(a, hyper.lambda2, hyper.lambda3, hyper.lambda4)?)
}

/// Analytic gradient of [`map_objective`]:
/// `(AX - T)Xᵀ + λ2 A + 2λ3 (AAᵀ - I)A - 2λ4 A(AᵀA)⁻¹`.
pub fn map_gradient(
    x: &DMatrix<f64>,
    target: &DMatrix<f64>,
    a: &DMatrix<f64>,
    hyper: &HyperParams,
) -> Result<DMatrix<f64>> {
    check_shapes(x, target, a)?;
    let gram = a.transpose() * a;
    let mut grad = (a * x - target) * x.transpose() + a * hyper.lambda2;
    if hyper.lambda3 != 0.0 {
        // (AAᵀ - I)A = A(AᵀA) - A
        grad += (a * &gram - a) * (2.0 * hyper.lambda3);
    }
    if hyper.lambda4 != 0.0 {
        let inv = gram
            .try_inverse()
            .ok_or_else(|| Error::Numeric("AᵀA is singular in the map gradient".into()))?;
        grad -= a * inv * (2.0 * hyper.lambda4);
    }
    Ok(grad)
}

/// Returns a map whose objective does not exceed that of `a_current`.
pub fn update_a(
    x: &DMatrix<f64>,
    target: &DMatrix<f64>,
    a_current: &DMatrix<f64>,
    hyper: &HyperParams,
) -> Result<DMatrix<f64>> {
    check_shapes(x, target, a_current)?;
    let n = x.nrows();
    let mut curvature = x * x.transpose();
    let ridge = hyper
        .lambda2
        .max(1e-12 * (1.0 + curvature.trace() / n as f64));
    for i in 0..n {
        curvature[(i, i)] += ridge;
    }
    let precond = curvature
        .try_inverse()
        .ok_or_else(|| Error::Numeric("map update preconditioner is singular".into()))?;

    let mut a = a_current.clone();
    let mut value = map_objective(x, target, &a, hyper)?;
    let mut step = 1.0;
    for _ in 0..MAX_STEPS {
        let grad = map_gradient(x, target, &a, hyper)?;
        if grad.norm() < GRAD_TOL * (1.0 + a.norm()) {
            break;
        }
        let dir = -(&grad * &precond);
        let slope = grad.dot(&dir);
        if slope >= 0.0 {
            break;
        }
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &a + &dir * step;
            // A singular trial map is outside the domain of the log term.
            if let Ok(v) = map_objective(x, target, &trial, hyper) {
                if v.is_finite() && v <= value + ARMIJO * step * slope {
                    accepted = Some((trial, v));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((trial, v)) => {
                let gain = value - v;
                a = trial;
                value = v;
                step = (step * 2.0).min(1.0);
                if gain <= 1e-15 * (1.0 + value.abs()) {
                    break;
                }
            }
            None => break,
        }
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear map"));
    }
    Ok(a)
}

/// `(1 - ρ)·A_prev + ρ·A_new`.
pub fn blend_online(a_prev: &DMatrix<f64>, a_new: &DMatrix<f64>, rho_online: f64) -> DMatrix<f64> {
    a_prev.zip_map(a_new, |p, n| (1.0 - rho_online) * p + rho_online * n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weights(l2: f64, l3: f64, l4: f64) -> HyperParams {
        HyperParams {
            lambda2: l2,
            lambda3: l3,
            lambda4: l4,
            ..HyperParams::default()
        }
    }

    #[test]
    fn unregularized_identity_problem_is_solved() {
        let eye = DMatrix::<f64>::identity(2, 2);
        let start = DMatrix::from_row_slice(2, 2, &[0.3, -1.2, 2.0, 0.7]);
        let a = update_a(&eye, &eye, &start, &weights(0.0, 0.0, 0.0)).unwrap();
        assert!((a - eye).norm() < 1e-9);
    }

    #[test]
    fn ridge_shrinks_the_map() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.5, 1.0, -1.0]);
        let t = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0, -1.0, 0.5, 2.0]);
        let start = DMatrix::from_element(3, 2, 0.1);
        let mut last = f64::INFINITY;
        for l2 in [0.0, 1.0, 10.0, 100.0, 1000.0] {
            let a = update_a(&x, &t, &start, &weights(l2, 0.0, 0.0)).unwrap();
            let norm = a.norm();
            assert!(norm < last, "λ2={l2}: {norm} !< {last}");
            last = norm;
        }
        assert!(last < 0.05);
    }

    #[test]
    fn blend_matches_definition() {
        let zero = DMatrix::<f64>::zeros(2, 2);
        let eye = DMatrix::<f64>::identity(2, 2);
        assert_eq!(blend_online(&zero, &eye, 0.5), &eye * 0.5);
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(blend_online(&p, &eye, 1.0), eye);
    }

    #[test]
    fn singular_start_with_log_term_fails() {
        let x = DMatrix::<f64>::identity(2, 2);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = update_a(&x, &x, &singular, &weights(1.0, 1.0, 1.0)).unwrap_err();
        assert!(err.is_numeric(), "{err}");
    }
}
