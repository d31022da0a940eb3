//! Equivalent two-term form of the three-term loss and the ideal closed-loop
//! response predictor.
//!
//! Folding the output-increment term into the output-error term gives the
//! weight `Q′ = Q + T₂ᵀST₂` and an equivalent reference `W′` solving
//! `Q′W′ = QW + T₂ᵀST₃y`. For a constant setpoint and long horizons `W′` is
//! close to the first-order curve with time constant `λ = √(s/q)`, and with
//! negligible move suppression the loop follows it, up to an extra geometric
//! transient of ratio `α` when the output has dead time.

use nalgebra::{DMatrix, DVector};

use crate::dmc::WeightingSet;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentWeights {
    pub qprime: DMatrix<f64>,
}

/// `Q′ = Q + T₂ᵀST₂`.
pub fn equivalent_qprime(w: &WeightingSet) -> EquivalentWeights {
    let mut qprime = w.t2.transpose() * DMatrix::from_diagonal(&w.s) * &w.t2;
    for k in 0..w.q.len() {
        qprime[(k, k)] += w.q[k];
    }
    EquivalentWeights { qprime }
}

/// `Q′` assembled directly from its tridiagonal block pattern: `q + 2s` on the
/// interior diagonal, `q + s` on the last sample, `−s` beside the diagonal,
/// and a corner `s` on the last dead-time sample.
pub fn qprime_from_pattern(w: &WeightingSet) -> EquivalentWeights {
    let ph = w.prediction_horizon;
    let n = w.outputs * ph;
    let mut qprime = DMatrix::zeros(n, n);
    for i in 0..w.outputs {
        let skip = w.delays[i] - 1;
        let base = i * ph;
        let (q, s) = (w.q[base + skip], w.s[base + skip]);
        for h in skip..ph {
            let r = base + h;
            qprime[(r, r)] = if h + 1 == ph { q + s } else { q + 2.0 * s };
            if h + 1 < ph {
                qprime[(r, r + 1)] = -s;
                qprime[(r + 1, r)] = -s;
            }
        }
        if skip > 0 {
            let c = base + skip - 1;
            qprime[(c, c)] = s;
            qprime[(c, c + 1)] = -s;
            qprime[(c + 1, c)] = -s;
        }
    }
    EquivalentWeights { qprime }
}

/// Equivalent reference `W′` for a stacked setpoint window: solves
/// `Q′W′ = QW + T₂ᵀST₃y` on the rows of each block where `Q′` is nonzero and
/// copies `W` on the remaining dead-time rows, which carry no weight.
pub fn equivalent_setpoint(
    w: &WeightingSet,
    setpoint: &DVector<f64>,
    y_now: &DVector<f64>,
) -> Result<DVector<f64>> {
    let ph = w.prediction_horizon;
    if setpoint.len() != w.outputs * ph || y_now.len() != w.outputs {
        return Err(Error::shape("setpoint window or current output has the wrong length"));
    }
    let qprime = equivalent_qprime(w).qprime;
    let rhs = setpoint.component_mul(&w.q) + w.t2.transpose() * (w.s.component_mul(&(&w.t3 * y_now)));
    let mut out = setpoint.clone();
    for i in 0..w.outputs {
        let base = i * ph;
        let first = (0..ph).find(|&h| qprime[(base + h, base + h)] != 0.0);
        let Some(first) = first else { continue };
        let len = ph - first;
        let sub = qprime.view((base + first, base + first), (len, len)).into_owned();
        let chol = sub.cholesky().ok_or_else(|| {
            Error::Singular(format!("equivalent weight of output {} is singular (q = 0?)", i + 1))
        })?;
        let sol = chol.solve(&rhs.rows(base + first, len).into_owned());
        out.rows_mut(base + first, len).copy_from(&sol);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    Exact,
    FirstOrder,
    RampShifted,
}

/// Reference values for samples `k+1..=k+P` of one output.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    pub values: Vec<f64>,
    pub kind: ReferenceKind,
    /// `√(s/q)` in samples (0 when `s = 0`).
    pub lambda: f64,
}

/// `λ = √(s/q)`.
pub fn time_constant(q: f64, s: f64) -> Result<f64> {
    if !(q > 0.0) || !(s >= 0.0) {
        return Err(Error::invalid("weights", format!("λ needs q > 0 and s ≥ 0, got q={q}, s={s}")));
    }
    Ok((s / q).sqrt())
}

/// Exact equivalent reference of one dead-time-free output block:
/// `(qI + sT₂ᵀT₂) w′ = q·w + s·e₁·y_now`.
pub fn exact_reference(setpoint: &[f64], y_now: f64, q: f64, s: f64) -> Result<ReferenceTrajectory> {
    if setpoint.is_empty() {
        return Err(Error::invalid("setpoint", "empty window"));
    }
    if !(q > 0.0) {
        return Err(Error::Singular(format!(
            "exact reference needs q > 0 on weighted samples, got q = {q}"
        )));
    }
    if !(s >= 0.0) {
        return Err(Error::invalid("s", "must be ≥ 0"));
    }
    let lambda = (s / q).sqrt();
    if s == 0.0 {
        return Ok(ReferenceTrajectory { values: setpoint.to_vec(), kind: ReferenceKind::Exact, lambda });
    }
    let n = setpoint.len();
    let diag: Vec<f64> = (0..n).map(|h| if h + 1 == n { q + s } else { q + 2.0 * s }).collect();
    let mut rhs: Vec<f64> = setpoint.iter().map(|w| q * w).collect();
    rhs[0] += s * y_now;
    let values = solve_symmetric_tridiagonal(&diag, -s, &rhs);
    Ok(ReferenceTrajectory { values, kind: ReferenceKind::Exact, lambda })
}

fn solve_symmetric_tridiagonal(diag: &[f64], off: f64, rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = off / diag[0];
    d[0] = rhs[0] / diag[0];
    for k in 1..n {
        let denom = diag[k] - off * c[k - 1];
        c[k] = off / denom;
        d[k] = (rhs[k] - off * d[k - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for k in (0..n - 1).rev() {
        x[k] = d[k] - c[k] * x[k + 1];
    }
    x
}

/// Setpoint description for the closed-form references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SetpointShape {
    Constant { value: f64 },
    /// `w(k+h) = current + slope·h`.
    Ramp { current: f64, slope: f64 },
}

/// First-order (constant setpoint) or shifted-ramp reference with
/// `λ = √(s/q)`.
pub fn closed_form_reference(
    shape: SetpointShape,
    y_now: f64,
    q: f64,
    s: f64,
    prediction_horizon: usize,
) -> Result<ReferenceTrajectory> {
    if !(q > 0.0 && s > 0.0) {
        return Err(Error::invalid("weights", format!("closed-form reference needs q > 0 and s > 0, got q={q}, s={s}")));
    }
    let lambda = (s / q).sqrt();
    Ok(match shape {
        SetpointShape::Constant { value } => ReferenceTrajectory {
            values: first_order_curve(value, y_now, lambda, prediction_horizon),
            kind: ReferenceKind::FirstOrder,
            lambda,
        },
        SetpointShape::Ramp { current, slope } => ReferenceTrajectory {
            values: (1..=prediction_horizon)
                .map(|h| {
                    let hf = h as f64;
                    current + slope * hf + (y_now - current) * (-hf / lambda).exp()
                })
                .collect(),
            kind: ReferenceKind::RampShifted,
            lambda,
        },
    })
}

/// `y + (w − y)(1 − e^{−h/λ})` for `h = 1..=len`.
pub fn first_order_curve(setpoint: f64, y_now: f64, lambda: f64, len: usize) -> Vec<f64> {
    (1..=len)
        .map(|h| y_now + (setpoint - y_now) * (1.0 - (-(h as f64) / lambda).exp()))
        .collect()
}

/// The root inside the unit circle of `α² − (q/s + 2)α + 1 = 0`.
pub fn alpha_coefficient(q: f64, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::invalid("s", format!("α is undefined for s = {s}")));
    }
    if !(q >= 0.0) {
        return Err(Error::invalid("q", format!("must be ≥ 0, got {q}")));
    }
    let rho = q / s;
    // product of the roots is one; dividing avoids cancellation for small q/s
    Ok(2.0 / (rho + 2.0 + (rho * (rho + 4.0)).sqrt()))
}

/// Predicted closed-loop output for samples `k+1..=k+P`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePrediction {
    pub values: Vec<f64>,
    /// `None` for dead-time-free outputs with `s = 0`, where α plays no role.
    pub alpha: Option<f64>,
    pub delay: usize,
}

/// Ideal closed-loop response (negligible move suppression, long horizons):
/// the reference itself when `d = 1`, otherwise zero over the dead time and
/// `w′(h) − w′(d−1)·α^{h−d+1}` after it.
pub fn predict_closed_loop(
    reference: &ReferenceTrajectory,
    delay: usize,
    q: f64,
    s: f64,
) -> Result<ResponsePrediction> {
    if delay < 1 {
        return Err(Error::invalid("delay", "must be at least 1"));
    }
    let alpha = if s > 0.0 { Some(alpha_coefficient(q, s)?) } else { None };
    if delay == 1 {
        return Ok(ResponsePrediction { values: reference.values.clone(), alpha, delay });
    }
    let a = alpha.ok_or_else(|| Error::invalid("s", "prediction with dead time needs s > 0"))?;
    if reference.values.len() < delay - 1 {
        return Err(Error::invalid("reference", "shorter than the dead time"));
    }
    let anchor = reference.values[delay - 2];
    let values = reference
        .values
        .iter()
        .enumerate()
        .map(|(idx, &w)| {
            let h = idx + 1;
            if h < delay {
                0.0
            } else {
                w - anchor * a.powi((h + 1 - delay) as i32)
            }
        })
        .collect();
    Ok(ResponsePrediction { values, alpha, delay })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmc::{build_dynamic_matrix, three_term_hessian, three_term_loss, two_term_hessian, ControllerSpec, DynamicMatrix};
    use crate::lti::StepResponse;
    use crate::signal::GaussianSource;
    use proptest::prelude::*;

    fn weights(q: f64, s: f64, d: usize, ph: usize) -> WeightingSet {
        WeightingSet::new(&ControllerSpec::new(ph, ph, 1, vec![q], vec![1.0], vec![s], vec![d])).unwrap()
    }

    #[test]
    fn qprime_small_cases() {
        let d1 = equivalent_qprime(&weights(1.0, 1.0, 1, 3)).qprime;
        assert_eq!(d1, DMatrix::from_row_slice(3, 3, &[3.0, -1.0, 0.0, -1.0, 3.0, -1.0, 0.0, -1.0, 2.0]));
        let d2 = equivalent_qprime(&weights(1.0, 1.0, 2, 3)).qprime;
        assert_eq!(d2, DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 3.0, -1.0, 0.0, -1.0, 2.0]));
        let w = weights(2.0, 0.0, 3, 6);
        assert_eq!(equivalent_qprime(&w).qprime, w.q_matrix());
    }

    #[test]
    fn pattern_route_agrees() {
        for (q, s, d, ph) in [(1.0, 1.0, 1, 3), (50.0, 800.0, 1, 40), (1.0, 2.0, 4, 45), (3.0, 0.5, 7, 7), (0.0, 1.0, 2, 5)] {
            let w = weights(q, s, d, ph);
            let a = equivalent_qprime(&w).qprime;
            let b = qprime_from_pattern(&w).qprime;
            assert!((a - b).amax() <= 1e-12 * (q + s), "q={q} s={s} d={d}");
        }
        let spec = crate::fixtures::process_b_spec();
        let w = WeightingSet::new(&spec).unwrap();
        assert!((equivalent_qprime(&w).qprime - qprime_from_pattern(&w).qprime).amax() < 1e-12);
    }

    #[test]
    fn lambda_of_process_a_settings() {
        assert_eq!(time_constant(50.0, 800.0).unwrap(), 4.0);
        assert_eq!(time_constant(50.0, 200.0).unwrap(), 2.0);
        let r = closed_form_reference(SetpointShape::Constant { value: 1.0 }, 0.0, 50.0, 800.0, 40).unwrap();
        assert_eq!(r.lambda, 4.0);
    }

    #[test]
    fn exact_reference_trivial_cases() {
        let sp = vec![2.0; 10];
        assert_eq!(exact_reference(&sp, 0.3, 1.0, 0.0).unwrap().values, sp);
        let at_rest = exact_reference(&sp, 2.0, 1.0, 5.0).unwrap();
        assert!(at_rest.values.iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(matches!(exact_reference(&sp, 0.0, 0.0, 1.0), Err(Error::Singular(_))));
    }

    #[test]
    fn exact_reference_close_to_first_order_curve() {
        let sp = vec![1.0; 40];
        let exact = exact_reference(&sp, 0.0, 50.0, 800.0).unwrap();
        let closed = closed_form_reference(SetpointShape::Constant { value: 1.0 }, 0.0, 50.0, 800.0, 40).unwrap();
        let gap = exact.values.iter().zip(&closed.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 0.02, "gap {gap}");
    }

    #[test]
    fn exact_and_closed_form_converge() {
        let mut last = f64::INFINITY;
        for (ph, lambda) in [(20usize, 2.0f64), (40, 4.0), (80, 8.0)] {
            let q = 1.0;
            let s = lambda * lambda * q;
            let sp = vec![1.0; ph];
            let exact = exact_reference(&sp, 0.0, q, s).unwrap();
            let closed = closed_form_reference(SetpointShape::Constant { value: 1.0 }, 0.0, q, s, ph).unwrap();
            let gap = exact.values.iter().zip(&closed.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap < last, "P={ph}: {gap} !< {last}");
            last = gap;
        }
    }

    #[test]
    fn closed_form_trivial_cases() {
        let flat = closed_form_reference(SetpointShape::Constant { value: 3.0 }, 3.0, 1.0, 4.0, 10).unwrap();
        assert!(flat.values.iter().all(|&v| v == 3.0));
        let ramp = closed_form_reference(SetpointShape::Ramp { current: 1.0, slope: 0.5 }, 1.0, 1.0, 4.0, 10).unwrap();
        for (h, v) in ramp.values.iter().enumerate() {
            assert_eq!(*v, 1.0 + 0.5 * (h + 1) as f64);
        }
        assert!(closed_form_reference(SetpointShape::Constant { value: 1.0 }, 0.0, 0.0, 1.0, 5).is_err());
        assert!(closed_form_reference(SetpointShape::Constant { value: 1.0 }, 0.0, 1.0, 0.0, 5).is_err());
    }

    #[test]
    fn alpha_values() {
        assert!((alpha_coefficient(1.0, 1.0).unwrap() - 0.381966).abs() < 1e-6);
        assert!((alpha_coefficient(1.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(alpha_coefficient(0.0, 1.0).unwrap(), 1.0);
        assert!(alpha_coefficient(1.0, 0.0).is_err());
    }

    #[test]
    fn predictor_shapes() {
        let r = closed_form_reference(SetpointShape::Constant { value: 1.0 }, 0.0, 1.0, 2.0, 20).unwrap();
        let one = predict_closed_loop(&r, 1, 1.0, 2.0).unwrap();
        assert_eq!(one.values, r.values);
        let three = predict_closed_loop(&r, 3, 1.0, 2.0).unwrap();
        assert_eq!(&three.values[..2], &[0.0, 0.0]);
        assert_eq!(three.alpha, Some(0.5));
        assert!(predict_closed_loop(&r, 0, 1.0, 2.0).is_err());
    }

    fn random_setup(seed: u64, delays: [usize; 2]) -> (DynamicMatrix, WeightingSet, GaussianSource) {
        let mut g = GaussianSource::new(seed, 0);
        let (n, ph, mh) = (15, 10, 4);
        let coeffs = (0..2)
            .map(|i| {
                (0..2)
                    .map(|_| {
                        let mut acc = 0.0;
                        (0..n).map(|h| { if h + 1 >= delays[i] { acc += 0.3 * g.standard_normal(); } acc }).collect()
                    })
                    .collect()
            })
            .collect();
        let coeffs = StepResponse::from_coefficients(coeffs).unwrap();
        let spec = ControllerSpec::new(
            n, ph, mh,
            vec![0.5 + g.uniform(), 0.5 + g.uniform()],
            vec![0.1 + g.uniform(), 0.1 + g.uniform()],
            vec![3.0 * g.uniform(), 3.0 * g.uniform()],
            delays.to_vec(),
        );
        let a = build_dynamic_matrix(&coeffs, &spec).unwrap();
        (a, WeightingSet::new(&spec).unwrap(), g)
    }

    proptest! {
        #[test]
        fn hessian_identity(seed in 0u64..10_000) {
            let (a, w, _) = random_setup(seed, [1, 3]);
            let qp = equivalent_qprime(&w).qprime;
            let lhs = a.matrix.transpose() * qp * &a.matrix + DMatrix::from_diagonal(&w.r);
            let rhs = three_term_hessian(&a, &w);
            let scale = rhs.amax();
            prop_assert!((lhs - &rhs).amax() <= 1e-12 * scale);
            prop_assert!(two_term_hessian(&a, &w).amax() <= scale);
        }

        #[test]
        fn loss_identity(seed in 0u64..10_000, d1 in 1usize..4, d2 in 1usize..4) {
            let (a, w, mut g) = random_setup(seed, [d1, d2]);
            let y0 = DVector::from_fn(20, |_, _| g.standard_normal());
            let sp = DVector::from_fn(20, |_, _| g.standard_normal());
            let yn = DVector::from_fn(2, |_, _| g.standard_normal());
            let wp = equivalent_setpoint(&w, &sp, &yn).unwrap();
            let qp = equivalent_qprime(&w).qprime;
            let mut gaps = Vec::new();
            let mut scale: f64 = 1.0;
            for _ in 0..50 {
                let du = DVector::from_fn(8, |_, _| g.standard_normal());
                let j3 = three_term_loss(&du, &y0, &sp, &yn, &w, &a);
                let e = &wp - (&y0 + &a.matrix * &du);
                let j2 = e.dot(&(&qp * &e)) + du.component_mul(&du).dot(&w.r);
                scale = scale.max(j3.abs());
                gaps.push(j3 - j2);
            }
            let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
            let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64;
            prop_assert!(var < 1e-16 * scale * scale);
        }

        #[test]
        fn alpha_is_the_stable_root(q in 0.0..100.0f64, s in 1e-3..100.0f64) {
            let a = alpha_coefficient(q, s).unwrap();
            let b = q / s + 2.0;
            prop_assert!(a > 0.0 && a <= 1.0);
            prop_assert!((a * a - b * a + 1.0).abs() <= 1e-12 * b.max(1.0));
            prop_assert!(1.0 / a >= 1.0);
        }

        #[test]
        fn monotone_decay_after_dead_time(q in 0.1..10.0f64, s in 0.1..10.0f64, d in 2usize..6, target in -5.0..5.0f64) {
            let r = closed_form_reference(SetpointShape::Constant { value: target }, 0.0, q, s, 60).unwrap();
            let pred = predict_closed_loop(&r, d, q, s).unwrap();
            let mut last = f64::INFINITY;
            for h in d..=60 {
                let gap = (r.values[h - 1] - pred.values[h - 1]).abs();
                prop_assert!(gap <= last + 1e-15);
                last = gap;
            }
        }
    }
}
