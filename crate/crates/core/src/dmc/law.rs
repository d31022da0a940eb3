use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{DynamicMatrix, WeightingSet};
use crate::{Error, Result};

/// What to do when the normal matrix is not numerically positive definite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Regularization {
    /// Add a ridge of `1e-10 · trace / (mM)` once and retry.
    #[default]
    RidgeOnce,
    /// Report the singularity.
    None,
}

fn scale_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut row, &wk) in out.row_iter_mut().zip(w.iter()) {
        row *= wk;
    }
    out
}

/// `AᵀQA + R`.
pub fn two_term_hessian(a: &DynamicMatrix, w: &WeightingSet) -> DMatrix<f64> {
    let am = &a.matrix;
    let mut h = am.transpose() * scale_rows(am, &w.q);
    for k in 0..h.nrows() {
        h[(k, k)] += w.r[k];
    }
    h
}

/// `AᵀT₂ᵀST₂A`, the contribution of the output-increment term.
pub fn increment_hessian(a: &DynamicMatrix, w: &WeightingSet) -> DMatrix<f64> {
    let diff = &w.t2 * &a.matrix;
    diff.transpose() * scale_rows(&diff, &w.s)
}

/// `AᵀQA + R + AᵀT₂ᵀST₂A`.
pub fn three_term_hessian(a: &DynamicMatrix, w: &WeightingSet) -> DMatrix<f64> {
    two_term_hessian(a, w) + increment_hessian(a, w)
}

/// `AᵀQ(W − Y_P0)`.
pub fn two_term_rhs(
    y_p0: &DVector<f64>,
    setpoint: &DVector<f64>,
    a: &DynamicMatrix,
    w: &WeightingSet,
) -> DVector<f64> {
    let err = (setpoint - y_p0).component_mul(&w.q);
    a.matrix.tr_mul(&err)
}

/// `AᵀQ(W − Y_P0) − AᵀT₂ᵀS(T₂Y_P0 − T₃y)`.
pub fn three_term_rhs(
    y_p0: &DVector<f64>,
    setpoint: &DVector<f64>,
    y_now: &DVector<f64>,
    a: &DynamicMatrix,
    w: &WeightingSet,
) -> DVector<f64> {
    let increment = (&w.t2 * y_p0 - &w.t3 * y_now).component_mul(&w.s);
    let diff = &w.t2 * &a.matrix;
    two_term_rhs(y_p0, setpoint, a, w) - diff.tr_mul(&increment)
}

/// Cholesky factor of a normal matrix, with the ridge fallback.
pub fn factor_normal_matrix(
    h: &DMatrix<f64>,
    policy: Regularization,
) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = h.clone().cholesky() {
        return Ok(c);
    }
    let describe = |h: &DMatrix<f64>| {
        let eig = h.clone().symmetric_eigenvalues();
        format!(
            "normal matrix ({n}×{n}) is not positive definite: eigenvalues span [{:e}, {:e}]",
            eig.min(),
            eig.max(),
            n = h.nrows()
        )
    };
    if policy == Regularization::None {
        return Err(Error::Singular(describe(h)));
    }
    let n = h.nrows();
    let ridge = 1e-10 * h.trace() / n as f64;
    log::warn!("normal matrix factorization failed; adding ridge {ridge:e}");
    let mut reg = h.clone();
    for k in 0..n {
        reg[(k, k)] += ridge;
    }
    reg.clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{} (after ridge {ridge:e})", describe(&reg))))
}

/// Unconstrained two-term move sequence `(AᵀQA + R)⁻¹AᵀQ(W − Y_P0)`.
pub fn solve_two_term(
    y_p0: &DVector<f64>,
    setpoint: &DVector<f64>,
    w: &WeightingSet,
    a: &DynamicMatrix,
) -> Result<DVector<f64>> {
    check_shapes(y_p0, setpoint, a)?;
    let chol = factor_normal_matrix(&two_term_hessian(a, w), Regularization::RidgeOnce)?;
    Ok(chol.solve(&two_term_rhs(y_p0, setpoint, a, w)))
}

/// Unconstrained three-term move sequence. With `S = 0` every extra term is an
/// exact zero, so the result is bit-identical to [`solve_two_term`].
pub fn solve_three_term(
    y_p0: &DVector<f64>,
    setpoint: &DVector<f64>,
    y_now: &DVector<f64>,
    w: &WeightingSet,
    a: &DynamicMatrix,
) -> Result<DVector<f64>> {
    check_shapes(y_p0, setpoint, a)?;
    if y_now.len() != a.outputs() {
        return Err(Error::shape("current output vector length differs from p"));
    }
    let chol = factor_normal_matrix(&three_term_hessian(a, w), Regularization::RidgeOnce)?;
    Ok(chol.solve(&three_term_rhs(y_p0, setpoint, y_now, a, w)))
}

fn check_shapes(y_p0: &DVector<f64>, setpoint: &DVector<f64>, a: &DynamicMatrix) -> Result<()> {
    let rows = a.matrix.nrows();
    if y_p0.len() != rows || setpoint.len() != rows {
        return Err(Error::shape(format!(
            "prediction vectors must have length pP = {rows}"
        )));
    }
    Ok(())
}

/// Three-term loss `‖W − Y_P0 − AΔU‖²_Q + ‖ΔU‖²_R + ‖T₂(Y_P0 + AΔU) − T₃y‖²_S`.
pub fn three_term_loss(
    du: &DVector<f64>,
    y_p0: &DVector<f64>,
    setpoint: &DVector<f64>,
    y_now: &DVector<f64>,
    w: &WeightingSet,
    a: &DynamicMatrix,
) -> f64 {
    let y = y_p0 + &a.matrix * du;
    let e = setpoint - &y;
    let inc = &w.t2 * &y - &w.t3 * y_now;
    e.component_mul(&e).dot(&w.q) + du.component_mul(du).dot(&w.r) + inc.component_mul(&inc).dot(&w.s)
}

/// Gradient of [`three_term_loss`] with respect to ΔU.
pub fn three_term_gradient(
    du: &DVector<f64>,
    y_p0: &DVector<f64>,
    setpoint: &DVector<f64>,
    y_now: &DVector<f64>,
    w: &WeightingSet,
    a: &DynamicMatrix,
) -> DVector<f64> {
    let y = y_p0 + &a.matrix * du;
    let e = (setpoint - &y).component_mul(&w.q);
    let inc = (&w.t2 * &y - &w.t3 * y_now).component_mul(&w.s);
    let diff = &w.t2 * &a.matrix;
    (a.matrix.tr_mul(&e) * -2.0) + du.component_mul(&w.r) * 2.0 + diff.tr_mul(&inc) * 2.0
}

/// The first move of each input: entries `0, M, 2M, …` of ΔU.
pub fn first_move(du: &DVector<f64>, control_horizon: usize) -> Vec<f64> {
    debug_assert!(control_horizon > 0 && du.len() % control_horizon == 0);
    du.iter().step_by(control_horizon).copied().collect()
}

/// The m×mM selector `L` with `L·ΔU = first_move(ΔU)`.
pub fn move_selector(inputs: usize, control_horizon: usize) -> DMatrix<f64> {
    DMatrix::from_fn(inputs, inputs * control_horizon, |j, c| {
        if c == j * control_horizon { 1.0 } else { 0.0 }
    })
}

/// Pre-factored unconstrained law for repeated use inside a control loop.
#[derive(Debug, Clone)]
pub struct UnconstrainedLaw {
    chol: Cholesky<f64, Dyn>,
    error_gain: DMatrix<f64>,
    increment_gain: DMatrix<f64>,
    t2: DMatrix<f64>,
    t3: DMatrix<f64>,
}

impl UnconstrainedLaw {
    pub fn new(a: &DynamicMatrix, w: &WeightingSet) -> Result<Self> {
        let chol = factor_normal_matrix(&three_term_hessian(a, w), Regularization::RidgeOnce)?;
        let diff = &w.t2 * &a.matrix;
        Ok(Self {
            chol,
            error_gain: scale_rows(&a.matrix, &w.q).transpose(),
            increment_gain: scale_rows(&diff, &w.s).transpose(),
            t2: w.t2.clone(),
            t3: w.t3.clone(),
        })
    }

    pub fn solve(&self, y_p0: &DVector<f64>, setpoint: &DVector<f64>, y_now: &DVector<f64>) -> DVector<f64> {
        let increment = &self.t2 * y_p0 - &self.t3 * y_now;
        let rhs = &self.error_gain * (setpoint - y_p0) - &self.increment_gain * increment;
        self.chol.solve(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmc::{build_dynamic_matrix, ControllerSpec};
    use crate::lti::StepResponse;
    use crate::signal::GaussianSource;
    use proptest::prelude::*;

    fn scalar_problem(a: f64, q: f64, r: f64) -> (DynamicMatrix, WeightingSet) {
        let coeffs = StepResponse::from_coefficients(vec![vec![vec![a]]]).unwrap();
        let spec = ControllerSpec::new(1, 1, 1, vec![q], vec![r], vec![0.0], vec![1]);
        (build_dynamic_matrix(&coeffs, &spec).unwrap(), WeightingSet::new(&spec).unwrap())
    }

    fn random_problem(seed: u64, s_scale: f64) -> (DynamicMatrix, WeightingSet, [DVector<f64>; 3]) {
        let mut g = GaussianSource::new(seed, 0);
        let (p, m, n, ph, mh) = (2, 2, 12, 8, 3);
        let coeffs = (0..p)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        let mut acc = 0.0;
                        (0..n).map(|_| { acc += g.standard_normal() * 0.3; acc }).collect()
                    })
                    .collect()
            })
            .collect();
        let coeffs = StepResponse::from_coefficients(coeffs).unwrap();
        let spec = ControllerSpec::new(
            n, ph, mh,
            vec![1.0 + g.uniform(), 0.5 + g.uniform()],
            vec![0.1 + g.uniform(), 0.1 + g.uniform()],
            vec![s_scale * g.uniform(), s_scale * g.uniform()],
            vec![1, 2],
        );
        let a = build_dynamic_matrix(&coeffs, &spec).unwrap();
        let w = WeightingSet::new(&spec).unwrap();
        let y0 = DVector::from_fn(p * ph, |_, _| g.standard_normal());
        let sp = DVector::from_fn(p * ph, |_, _| g.standard_normal());
        let yn = DVector::from_fn(p, |_, _| g.standard_normal());
        (a, w, [y0, sp, yn])
    }

    #[test]
    fn no_error_no_move() {
        let (a, w, [y0, _, _]) = random_problem(3, 1.0);
        let du = solve_two_term(&y0, &y0, &w, &a).unwrap();
        assert!(du.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn at_rest_on_setpoint_three_term_is_zero() {
        let (a, w, _) = random_problem(4, 2.0);
        let level = 0.7;
        let y0 = DVector::from_element(16, level);
        let yn = DVector::from_element(2, level);
        let du = solve_three_term(&y0, &y0, &yn, &w, &a).unwrap();
        assert!(du.amax() < 1e-14);
    }

    #[test]
    fn scalar_closed_form() {
        let (a, q, r, sp, y0) = (0.8, 3.0, 0.5, 2.0, 0.4);
        let (dm, w) = scalar_problem(a, q, r);
        let du = solve_two_term(&DVector::from_element(1, y0), &DVector::from_element(1, sp), &w, &dm).unwrap();
        let expect = q * a * (sp - y0) / (q * a * a + r);
        assert!((du[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn heavy_move_suppression_shrinks_moves() {
        let mut last = f64::INFINITY;
        for r in [1e-2, 1.0, 1e2, 1e4, 1e6, 1e9] {
            let (dm, w) = scalar_problem(0.8, 1.0, r);
            let du = solve_two_term(&DVector::from_element(1, 0.0), &DVector::from_element(1, 1.0), &w, &dm).unwrap();
            assert!(du[0].abs() < last);
            last = du[0].abs();
        }
        assert!(last < 1e-8);
    }

    #[test]
    fn singular_without_regularization() {
        let (dm, w) = scalar_problem(0.0, 1.0, 0.0);
        let err = factor_normal_matrix(&two_term_hessian(&dm, &w), Regularization::None).unwrap_err();
        assert!(err.to_string().contains("not positive definite"));
    }

    #[test]
    fn first_move_selection() {
        let du = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(first_move(&du, 3), vec![1.0, 4.0]);
        assert_eq!(first_move(&DVector::from_vec(vec![9.0, 8.0]), 2), vec![9.0]);
        let l = move_selector(2, 3);
        assert_eq!((l * du).as_slice(), &[1.0, 4.0]);
    }

    #[test]
    fn prefactored_law_matches_free_function() {
        let (a, w, [y0, sp, yn]) = random_problem(11, 3.0);
        let law = UnconstrainedLaw::new(&a, &w).unwrap();
        let d1 = law.solve(&y0, &sp, &yn);
        let d2 = solve_three_term(&y0, &sp, &yn, &w, &a).unwrap();
        assert!((d1 - &d2).amax() <= 1e-10 * (1.0 + d2.amax()));
    }

    proptest! {
        #[test]
        fn zero_increment_weight_reduces_to_two_term(seed in 0u64..10_000) {
            let (a, w, [y0, sp, yn]) = random_problem(seed, 0.0);
            let d2 = solve_two_term(&y0, &sp, &w, &a).unwrap();
            let d3 = solve_three_term(&y0, &sp, &yn, &w, &a).unwrap();
            prop_assert_eq!(d2, d3);
        }

        #[test]
        fn stationarity_and_finite_differences(seed in 0u64..10_000) {
            let (a, w, [y0, sp, yn]) = random_problem(seed, 5.0);
            let du = solve_three_term(&y0, &sp, &yn, &w, &a).unwrap();
            let g = three_term_gradient(&du, &y0, &sp, &yn, &w, &a);
            prop_assert!(g.norm() <= 1e-8 * (1.0 + du.norm()));

            let d2 = solve_two_term(&y0, &sp, &w, &a).unwrap();
            let resid = a.matrix.tr_mul(&(&sp - &y0 - &a.matrix * &d2).component_mul(&w.q)) - d2.component_mul(&w.r);
            prop_assert!(resid.norm() < 1e-8 * (1.0 + d2.norm()));

            // analytic gradient against central differences at a random point
            let mut gs = GaussianSource::new(seed, 9);
            let x = DVector::from_fn(du.len(), |_, _| gs.standard_normal());
            let g = three_term_gradient(&x, &y0, &sp, &yn, &w, &a);
            let h = 1e-5;
            for k in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (three_term_loss(&xp, &y0, &sp, &yn, &w, &a) - three_term_loss(&xm, &y0, &sp, &yn, &w, &a)) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1.0));
            }
        }

        #[test]
        fn delay_rows_of_setpoint_are_ignored(seed in 0u64..10_000, junk in -100.0..100.0f64) {
            let (a, w, [y0, sp, yn]) = random_problem(seed, 2.0);
            let mut altered = sp.clone();
            // output 2 has delay 2: its first predicted sample carries zero weight
            altered[8] = junk;
            let d1 = solve_three_term(&y0, &sp, &yn, &w, &a).unwrap();
            let d2 = solve_three_term(&y0, &altered, &yn, &w, &a).unwrap();
            prop_assert_eq!(d1, d2);
        }
    }
}
