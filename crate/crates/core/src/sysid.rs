//! Prediction-error identification of ARMAX models in diagonal
//! matrix-fraction form: one independent MISO subsystem per output,
//!
//! `A_i(q⁻¹) y_i(k) = Σ_j B_ij(q⁻¹) u_j(k) + C_i(q⁻¹) e_i(k)`.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::lti::{simulate_plant, MimoPlant, SisoChannel};
use crate::poly::Polynomial;
use crate::{Error, Result};

/// Orders of one MISO subsystem. Input `j` enters through
/// `b_j1 q^{-d_j} + … + b_j,nb q^{-(d_j+nb-1)}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmaxOrders {
    pub na: usize,
    pub nb: Vec<usize>,
    pub nc: usize,
    pub delays: Vec<usize>,
}

impl ArmaxOrders {
    pub fn new(na: usize, nb: Vec<usize>, nc: usize, delays: Vec<usize>) -> Self {
        Self { na, nb, nc, delays }
    }

    pub fn inputs(&self) -> usize {
        self.nb.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.na + self.nb.iter().sum::<usize>() + self.nc
    }

    /// Samples at the start of the record excluded from the loss.
    pub fn margin(&self) -> usize {
        let b = self.nb.iter().zip(&self.delays).map(|(n, d)| n + d).max().unwrap_or(0);
        self.na.max(b).max(self.nc)
    }

    pub fn validate(&self, inputs: usize) -> Result<()> {
        if self.nb.len() != inputs || self.delays.len() != inputs {
            return Err(Error::invalid(
                "orders",
                format!("nb and delays need {inputs} entries, got {} and {}", self.nb.len(), self.delays.len()),
            ));
        }
        if let Some(j) = self.delays.iter().position(|&d| d == 0) {
            return Err(Error::invalid("orders", format!("input {} has zero delay; at least one sample is required", j + 1)));
        }
        if self.parameter_count() == 0 {
            return Err(Error::invalid("orders", "no parameters to estimate"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmaxSubsystem {
    pub a: Polynomial,
    /// One numerator per input, delay included as leading zeros.
    pub b: Vec<Polynomial>,
    pub c: Polynomial,
    pub orders: ArmaxOrders,
}

impl ArmaxSubsystem {
    fn from_parameters(theta: &DVector<f64>, orders: &ArmaxOrders) -> Result<Self> {
        let mut at = 0;
        let mut take = |n: usize| {
            let s = theta.rows(at, n).iter().copied().collect::<Vec<_>>();
            at += n;
            s
        };
        let mut a = vec![1.0];
        a.extend(take(orders.na));
        let b = orders
            .nb
            .iter()
            .zip(&orders.delays)
            .map(|(&n, &d)| {
                let mut coeffs = vec![0.0; d];
                coeffs.extend(take(n));
                if n == 0 {
                    coeffs = vec![0.0];
                }
                Polynomial::new(coeffs)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut c = vec![1.0];
        c.extend(take(orders.nc));
        Ok(Self { a: Polynomial::monic(a)?, b, c: Polynomial::monic(c)?, orders: orders.clone() })
    }

    /// `[a_1.., b_1.., …, c_1..]`.
    pub fn parameters(&self) -> Vec<f64> {
        let mut theta = self.a.coeffs()[1..].to_vec();
        for (b, &d) in self.b.iter().zip(&self.orders.delays) {
            if b.coeffs().len() > d {
                theta.extend_from_slice(&b.coeffs()[d..]);
            }
        }
        theta.extend_from_slice(&self.c.coeffs()[1..]);
        theta
    }

    /// Deterministic channel `B_j/A` from input `j`.
    pub fn channel(&self, input: usize) -> Result<SisoChannel> {
        SisoChannel::new(self.b[input].clone(), self.a.clone(), 0)
    }

    /// Noise filter `C/A`.
    pub fn noise_filter(&self) -> Result<SisoChannel> {
        SisoChannel::noise_filter(self.c.clone(), self.a.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifiedModel {
    pub subsystems: Vec<ArmaxSubsystem>,
    /// Mean squared one-step prediction error per output.
    pub fit_metrics: Vec<f64>,
    /// Prediction errors per output, starting after the initialization margin.
    pub residuals: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    /// Loss after each accepted Gauss-Newton step, per output.
    pub loss_history: Vec<Vec<f64>>,
}

impl IdentifiedModel {
    pub fn outputs(&self) -> usize {
        self.subsystems.len()
    }

    pub fn inputs(&self) -> usize {
        self.subsystems.first().map_or(0, |s| s.b.len())
    }

    /// The deterministic part as a plant with the given sample time.
    pub fn to_plant(&self, sample_time: f64) -> Result<MimoPlant> {
        let rows = self
            .subsystems
            .iter()
            .map(|s| (0..s.b.len()).map(|j| s.channel(j)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(MimoPlant::new(rows)?.with_sample_time(sample_time))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceEstimate {
    /// T×p, output units.
    pub v: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PemOptions {
    pub max_iterations: usize,
    pub extended_ls_passes: usize,
    pub gradient_tolerance: f64,
}

impl Default for PemOptions {
    fn default() -> Self {
        Self { max_iterations: 200, extended_ls_passes: 20, gradient_tolerance: 1e-6 }
    }
}

/// Fits one subsystem per output. `u` is T×m, `y` is T×p and `orders` has
/// one entry per output.
pub fn identify(u: &DMatrix<f64>, y: &DMatrix<f64>, orders: &[ArmaxOrders]) -> Result<IdentifiedModel> {
    identify_with(u, y, orders, &PemOptions::default())
}

pub fn identify_with(
    u: &DMatrix<f64>,
    y: &DMatrix<f64>,
    orders: &[ArmaxOrders],
    options: &PemOptions,
) -> Result<IdentifiedModel> {
    if u.nrows() != y.nrows() {
        return Err(Error::shape(format!("{} input samples but {} output samples", u.nrows(), y.nrows())));
    }
    if orders.len() != y.ncols() {
        return Err(Error::invalid("orders", format!("{} outputs need {} order sets, got {}", y.ncols(), y.ncols(), orders.len())));
    }
    let inputs: Vec<Vec<f64>> = (0..u.ncols()).map(|j| u.column(j).iter().copied().collect()).collect();
    let mut model = IdentifiedModel { subsystems: vec![], fit_metrics: vec![], residuals: vec![], iterations: vec![], loss_history: vec![] };
    for (i, ord) in orders.iter().enumerate() {
        ord.validate(u.ncols())?;
        let n_par = ord.parameter_count();
        if y.nrows() < 10 * n_par {
            return Err(Error::InsufficientData(format!(
                "output {}: {} samples for {n_par} parameters, need at least {}",
                i + 1,
                y.nrows(),
                10 * n_par
            )));
        }
        let output: Vec<f64> = y.column(i).iter().copied().collect();
        let fit = fit_subsystem(&inputs, &output, ord, options).map_err(|e| match e {
            Error::Singular(msg) => Error::Singular(format!("output {}: {msg}", i + 1)),
            other => other,
        })?;
        model.subsystems.push(ArmaxSubsystem::from_parameters(&fit.theta, ord)?);
        model.fit_metrics.push(fit.loss);
        model.residuals.push(fit.residuals[ord.margin()..].to_vec());
        model.iterations.push(fit.iterations);
        model.loss_history.push(fit.history);
    }
    Ok(model)
}

/// `v = y − ŷ` where `ŷ` is the deterministic model response to `u`.
pub fn estimate_disturbance(model: &IdentifiedModel, u: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DisturbanceEstimate> {
    if u.ncols() != model.inputs() || y.ncols() != model.outputs() || u.nrows() != y.nrows() {
        return Err(Error::shape(format!(
            "model is {}×{}, data has {} inputs and {} outputs over {}/{} samples",
            model.outputs(),
            model.inputs(),
            u.ncols(),
            y.ncols(),
            u.nrows(),
            y.nrows()
        )));
    }
    let plant = model.to_plant(1.0)?;
    let y_hat = simulate_plant(&plant, u, None)?;
    Ok(DisturbanceEstimate { v: y - y_hat })
}

struct SubsystemFit {
    theta: DVector<f64>,
    loss: f64,
    residuals: Vec<f64>,
    iterations: usize,
    /// Loss after initialization, then after every accepted step.
    history: Vec<f64>,
}

/// Pseudo-linear regressor `[−y(k−l), u_j(k−d_j−l), ε(k−l)]` at sample `k`.
fn regressor(inputs: &[Vec<f64>], y: &[f64], eps: &[f64], ord: &ArmaxOrders, k: usize, row: &mut [f64]) {
    let mut c = 0;
    for l in 1..=ord.na {
        row[c] = -y[k - l];
        c += 1;
    }
    for (j, (&n, &d)) in ord.nb.iter().zip(&ord.delays).enumerate() {
        for l in 0..n {
            row[c] = inputs[j][k - d - l];
            c += 1;
        }
    }
    for l in 1..=ord.nc {
        row[c] = eps[k - l];
        c += 1;
    }
}

/// One-step prediction errors for `theta`, zero before the margin.
fn prediction_errors(inputs: &[Vec<f64>], y: &[f64], ord: &ArmaxOrders, theta: &DVector<f64>) -> Vec<f64> {
    let margin = ord.margin();
    let mut eps = vec![0.0; y.len()];
    let mut row = vec![0.0; theta.len()];
    for k in margin..y.len() {
        regressor(inputs, y, &eps, ord, k, &mut row);
        eps[k] = y[k] - row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum::<f64>();
    }
    eps
}

fn mean_square(eps: &[f64], margin: usize) -> f64 {
    let tail = &eps[margin..];
    tail.iter().map(|e| e * e).sum::<f64>() / tail.len() as f64
}

/// Least squares via thin QR, with a rank check on the singular values.
fn least_squares(phi: &DMatrix<f64>, target: &DVector<f64>) -> Result<DVector<f64>> {
    let sv = phi.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > 1e-12 * smax) {
        return Err(Error::Singular(format!("regressor matrix is rank deficient (singular values {smin:e}..{smax:e})")));
    }
    if smax / smin > 1e8 {
        warn!("regressor condition number {:.3e}: input may not be persistently exciting", smax / smin);
    }
    let qr = phi.clone().qr();
    let rhs = qr.q().transpose() * target;
    qr.r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::Singular("triangular factor has a zero pivot".into()))
}

fn regression_matrix(inputs: &[Vec<f64>], y: &[f64], eps: &[f64], ord: &ArmaxOrders) -> (DMatrix<f64>, DVector<f64>) {
    let margin = ord.margin();
    let n = ord.parameter_count();
    let rows = y.len() - margin;
    let mut phi = DMatrix::zeros(rows, n);
    let mut row = vec![0.0; n];
    for k in margin..y.len() {
        regressor(inputs, y, eps, ord, k, &mut row);
        phi.row_mut(k - margin).copy_from_slice(&row);
    }
    (phi, DVector::from_column_slice(&y[margin..]))
}

/// Moves the noise-polynomial roots inside the unit circle.
fn stabilize_noise_part(theta: &mut DVector<f64>, ord: &ArmaxOrders) {
    if ord.nc == 0 {
        return;
    }
    let start = theta.len() - ord.nc;
    let mut c = vec![1.0];
    c.extend(theta.rows(start, ord.nc).iter());
    let poly = Polynomial::new(c).expect("finite parameters");
    if !poly.is_stable() {
        debug!("noise polynomial left the unit circle (max root {:.4}), reflecting", poly.max_root_modulus());
        let fixed = poly.reflected_inside();
        for l in 0..ord.nc {
            theta[start + l] = fixed.coeffs()[l + 1];
        }
    }
}

/// `ψ` with `C(q⁻¹) ψ(k) = φ(k)`: the negative error gradient per sample.
fn gradient_regressors(
    inputs: &[Vec<f64>],
    y: &[f64],
    eps: &[f64],
    ord: &ArmaxOrders,
    theta: &DVector<f64>,
) -> DMatrix<f64> {
    let margin = ord.margin();
    let n = theta.len();
    let c = &theta.as_slice()[n - ord.nc..];
    let rows = y.len() - margin;
    let mut psi = DMatrix::zeros(rows, n);
    let mut row = vec![0.0; n];
    for k in margin..y.len() {
        regressor(inputs, y, eps, ord, k, &mut row);
        let r = k - margin;
        for col in 0..n {
            let mut v = row[col];
            for (l, cl) in c.iter().enumerate() {
                if r > l {
                    v -= cl * psi[(r - l - 1, col)];
                }
            }
            psi[(r, col)] = v;
        }
    }
    psi
}

fn fit_subsystem(inputs: &[Vec<f64>], y: &[f64], ord: &ArmaxOrders, options: &PemOptions) -> Result<SubsystemFit> {
    let margin = ord.margin();
    let n = ord.parameter_count();
    let zeros = vec![0.0; y.len()];

    // Extended least squares: start from the ARX fit, then regress on the
    // previous pass's residuals.
    let (phi, target) = regression_matrix(inputs, y, &zeros, ord);
    let mut theta = if ord.nc == 0 {
        least_squares(&phi, &target)?
    } else {
        let arx = ArmaxOrders { nc: 0, ..ord.clone() };
        let (phi_arx, _) = regression_matrix(inputs, y, &zeros, &arx);
        let mut t = DVector::zeros(n);
        t.rows_mut(0, n - ord.nc).copy_from(&least_squares(&phi_arx, &target)?);
        t
    };
    let mut eps = prediction_errors(inputs, y, ord, &theta);
    let mut loss = mean_square(&eps, margin);
    let passes = if ord.nc == 0 { 0 } else { options.extended_ls_passes };
    for _ in 0..passes {
        let (phi, target) = regression_matrix(inputs, y, &eps, ord);
        let mut cand = least_squares(&phi, &target)?;
        stabilize_noise_part(&mut cand, ord);
        let cand_eps = prediction_errors(inputs, y, ord, &cand);
        let cand_loss = mean_square(&cand_eps, margin);
        if !(cand_loss < loss) {
            break;
        }
        theta = cand;
        eps = cand_eps;
        loss = cand_loss;
    }
    let mut history = vec![loss];

    // Gauss-Newton with backtracking.
    let count = (y.len() - margin) as f64;
    let mut iterations = 0;
    loop {
        let psi = gradient_regressors(inputs, y, &eps, ord, &theta);
        let e = DVector::from_column_slice(&eps[margin..]);
        let grad_norm = (psi.transpose() * &e).norm() * 2.0 / count;
        if grad_norm < options.gradient_tolerance * (1.0 + loss) {
            break;
        }
        if iterations == options.max_iterations {
            return Err(Error::NotConverged { iterations, residual: grad_norm });
        }
        iterations += 1;
        let direction = least_squares(&psi, &e)?;
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let mut cand = &theta + &direction * step;
            stabilize_noise_part(&mut cand, ord);
            let cand_eps = prediction_errors(inputs, y, ord, &cand);
            let cand_loss = mean_square(&cand_eps, margin);
            if cand_loss <= loss {
                improved = cand_loss < loss;
                theta = cand;
                eps = cand_eps;
                loss = cand_loss;
                history.push(loss);
                break;
            }
            step *= 0.5;
        }
        if !improved {
            // Loss is flat to rounding along the Gauss-Newton direction.
            debug!("line search stalled at loss {loss:e}, gradient {grad_norm:e}");
            break;
        }
    }
    Ok(SubsystemFit { theta, loss, residuals: eps, iterations, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lti::ArmaDisturbance;
    use crate::signal::prbs;

    fn prbs_inputs(len: usize, m: usize, amplitude: f64, seed: u64) -> DMatrix<f64> {
        let cols: Vec<Vec<f64>> = (0..m).map(|j| prbs(len, 3, amplitude, seed, j as u64)).collect();
        DMatrix::from_fn(len, m, |k, j| cols[j][k])
    }

    fn process_a_orders() -> Vec<ArmaxOrders> {
        vec![ArmaxOrders::new(2, vec![2, 2], 0, vec![1, 1]); 2]
    }

    fn true_parameters() -> [Vec<f64>; 2] {
        [
            vec![-1.7347, 0.7660, 0.045, 0.045, 0.12, 0.015],
            vec![-1.3490, 0.5140, 0.07, 0.05, 0.05, 0.02],
        ]
    }

    #[test]
    fn margin_follows_orders() {
        let ord = ArmaxOrders::new(2, vec![2, 3], 1, vec![1, 4]);
        assert_eq!(ord.margin(), 7);
        assert_eq!(ord.parameter_count(), 8);
    }

    #[test]
    fn noise_free_arx_recovered() {
        let plant = fixtures::process_a();
        let u = prbs_inputs(400, 2, 1.0, 3);
        let y = simulate_plant(&plant, &u, None).unwrap();
        let model = identify(&u, &y, &process_a_orders()).unwrap();
        for (sub, truth) in model.subsystems.iter().zip(true_parameters()) {
            for (est, t) in sub.parameters().iter().zip(&truth) {
                assert!((est - t).abs() < 1e-6, "{est} vs {t}");
            }
        }
        assert_eq!(model.residuals[0].len(), 400 - 3);
    }

    #[test]
    fn arx_orders_reduce_to_least_squares() {
        // With no noise polynomial the prediction error is linear in the
        // parameters, so the fit must equal the normal-equation solution.
        let plant = fixtures::process_a();
        let u = prbs_inputs(500, 2, 1.0, 9);
        let v = fixtures::comparison_disturbance(4).generate_outputs(2, 500);
        let y = simulate_plant(&plant, &u, Some(&v)).unwrap();
        let ord = process_a_orders();
        let model = identify(&u, &y, &ord).unwrap();
        let inputs: Vec<Vec<f64>> = (0..2).map(|j| u.column(j).iter().copied().collect()).collect();
        let out: Vec<f64> = y.column(0).iter().copied().collect();
        let (phi, target) = regression_matrix(&inputs, &out, &vec![0.0; 500], &ord[0]);
        let normal = (phi.transpose() * &phi).cholesky().unwrap().solve(&(phi.transpose() * target));
        for (a, b) in model.subsystems[0].parameters().iter().zip(normal.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn armax_noise_model_and_white_residuals() {
        // Correctly specified ARMAX: A y = B u + C e.
        let a = [1.0, -0.8];
        let len = 3000;
        let u = prbs_inputs(len, 1, 1.0, 21);
        let e = crate::signal::GaussianSource::new(5, 0).white_noise(len, 0.04);
        let mut y = vec![0.0; len];
        for k in 2..len {
            y[k] = -a[1] * y[k - 1] + 0.5 * u[(k - 1, 0)] + 0.3 * u[(k - 2, 0)] + e[k] + 0.5 * e[k - 1];
        }
        let ord = ArmaxOrders::new(1, vec![2], 1, vec![1]);
        let model = identify(&u, &DMatrix::from_column_slice(len, 1, &y), &[ord]).unwrap();
        let theta = model.subsystems[0].parameters();
        for (est, t) in theta.iter().zip([-0.8, 0.5, 0.3, 0.5]) {
            assert!((est - t).abs() < 0.05, "{theta:?}");
        }
        let r = &model.residuals[0];
        let n = r.len() as f64;
        let mean = r.iter().sum::<f64>() / n;
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let band = 2.0 / n.sqrt();
        let inside = (1..=20)
            .filter(|&lag| {
                let c = r.iter().zip(&r[lag..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / n / var;
                c.abs() < band
            })
            .count();
        assert!(inside >= 18, "{inside} of 20 lags inside the whiteness band");
    }

    #[test]
    fn loss_is_monotone_from_initialization() {
        let plant = fixtures::process_a();
        let u = prbs_inputs(1000, 2, 5.0, 2);
        let v = fixtures::comparison_disturbance(8).generate_outputs(2, 1000);
        let y = simulate_plant(&plant, &u, Some(&v)).unwrap();
        let ord = ArmaxOrders::new(2, vec![2, 2], 1, vec![1, 1]);
        let inputs: Vec<Vec<f64>> = (0..2).map(|j| u.column(j).iter().copied().collect()).collect();
        for i in 0..2 {
            let out: Vec<f64> = y.column(i).iter().copied().collect();
            let fit = fit_subsystem(&inputs, &out, &ord, &PemOptions::default()).unwrap();
            assert!(fit.history.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(*fit.history.last().unwrap(), fit.loss);
            let c = Polynomial::monic(vec![1.0, fit.theta[6]]).unwrap();
            assert!(c.is_stable());
        }
    }

    #[test]
    fn disturbance_estimate_is_exact_for_known_model() {
        let plant = fixtures::process_a();
        let u = prbs_inputs(300, 2, 1.0, 1);
        let clean = simulate_plant(&plant, &u, None).unwrap();
        let model = identify(&u, &clean, &process_a_orders()).unwrap();
        let est = estimate_disturbance(&model, &u, &clean).unwrap();
        assert!(est.v.amax() < 1e-10);
        let delta = DMatrix::from_fn(300, 2, |k, i| ((k * (i + 2)) as f64).sin());
        let est = estimate_disturbance(&model, &u, &(&clean + &delta)).unwrap();
        assert!((est.v - delta).amax() < 1e-10);
    }

    #[test]
    fn replay_reproduces_measurements() {
        let plant = fixtures::process_a();
        let u = prbs_inputs(800, 2, 10.0, 7);
        let v = ArmaDisturbance::first_order(0.23, 0.9, 0.01, 3).unwrap().generate_outputs(2, 800);
        let y = simulate_plant(&plant, &u, Some(&v)).unwrap();
        let model = identify(&u, &y, &vec![ArmaxOrders::new(2, vec![2, 2], 1, vec![1, 1]); 2]).unwrap();
        let est = estimate_disturbance(&model, &u, &y).unwrap();
        let y_hat = simulate_plant(&model.to_plant(1.0).unwrap(), &u, None).unwrap();
        assert!((y_hat + &est.v - &y).amax() < 1e-12);
    }

    #[test]
    fn too_little_data_and_singular_regressors() {
        let u = DMatrix::zeros(30, 2);
        let y = DMatrix::zeros(30, 2);
        assert!(matches!(identify(&u, &y, &process_a_orders()), Err(Error::InsufficientData(_))));
        let u = DMatrix::zeros(300, 2);
        let y = DMatrix::from_fn(300, 2, |k, _| (k as f64 * 0.1).sin());
        assert!(matches!(identify(&u, &y, &process_a_orders()), Err(Error::Singular(_))));
    }
}
