//! Constrained three-term DMC as a dense convex QP, solved by a dual
//! active-set method.
//!
//! The problem is `min ½xᵀΦx + fᵀx  s.t.  Ωx ≤ ω`. The solver starts from the
//! unconstrained minimizer and adds violated rows one at a time, dropping rows
//! whose multipliers would turn negative, so every iterate is dual feasible
//! and the first primal-feasible iterate is optimal. A final solve of the
//! active-set KKT system removes accumulated rounding.

use std::fmt;
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::dmc::{three_term_hessian, three_term_rhs, Bounds, DynamicMatrix, WeightingSet};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    InputLevel,
    InputRate,
    OutputLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Upper,
    Lower,
}

/// Identifies the origin of one constraint row. Channels and samples are
/// zero-based; `sample` is the move index for input rows and the prediction
/// step (0 = k+1) for output rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RowLabel {
    pub kind: BoundKind,
    pub side: BoundSide,
    pub channel: usize,
    pub sample: usize,
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            BoundKind::InputLevel => "u",
            BoundKind::InputRate => "du",
            BoundKind::OutputLevel => "y",
        };
        let side = match self.side {
            BoundSide::Upper => "max",
            BoundSide::Lower => "min",
        };
        write!(f, "{kind}_{side}[channel {}, sample {}]", self.channel + 1, self.sample + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub phi: DMatrix<f64>,
    pub f: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub omega_rhs: DVector<f64>,
    pub meta: Vec<RowLabel>,
}

impl QpProblem {
    pub fn new(
        phi: DMatrix<f64>,
        f: DVector<f64>,
        omega: DMatrix<f64>,
        omega_rhs: DVector<f64>,
        meta: Vec<RowLabel>,
    ) -> Result<Self> {
        let n = f.len();
        if phi.shape() != (n, n) {
            return Err(Error::shape("Φ must be square with the size of f"));
        }
        if omega.ncols() != n && omega.nrows() > 0 {
            return Err(Error::shape("Ω must have one column per variable"));
        }
        if omega.nrows() != omega_rhs.len() || meta.len() != omega_rhs.len() {
            return Err(Error::shape("Ω, ω and row labels must have equal row counts"));
        }
        Ok(Self { phi, f, omega, omega_rhs, meta })
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn rows(&self) -> usize {
        self.omega_rhs.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.phi * x)) + self.f.dot(x)
    }

    /// Largest `Ω_i x − ω_i` (≤ 0 when feasible); `-∞` without rows.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        if self.rows() == 0 {
            return f64::NEG_INFINITY;
        }
        (&self.omega * x - &self.omega_rhs).max()
    }

    /// Long-format CSV of every entry: `part, row, col, value, label`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = crate::io::versioned_writer(file, "qp")?;
        w.write_record(["part", "row", "col", "value", "label"])?;
        for r in 0..self.dim() {
            for c in 0..self.dim() {
                w.write_record(["phi", &r.to_string(), &c.to_string(), &self.phi[(r, c)].to_string(), ""])?;
            }
        }
        for r in 0..self.dim() {
            w.write_record(["f", &r.to_string(), "0", &self.f[r].to_string(), ""])?;
        }
        for r in 0..self.rows() {
            let label = self.meta[r].to_string();
            for c in 0..self.dim() {
                w.write_record(["omega", &r.to_string(), &c.to_string(), &self.omega[(r, c)].to_string(), &label])?;
            }
            w.write_record(["omega_rhs", &r.to_string(), "0", &self.omega_rhs[r].to_string(), &label])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpOptions {
    /// Iteration cap; defaults to `50 · dim`.
    pub max_iterations: Option<usize>,
    /// Relative feasibility tolerance.
    pub tolerance: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self { max_iterations: None, tolerance: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub du: DVector<f64>,
    /// Active row indices in ascending order.
    pub active_set: Vec<usize>,
    /// One multiplier per row, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// True when output bounds had to be relaxed to find a solution.
    pub softened: bool,
}

/// Scaled KKT residual: the largest of relative stationarity error, relative
/// primal infeasibility, negative multipliers and complementarity products.
pub fn kkt_residual(problem: &QpProblem, x: &DVector<f64>, multipliers: &DVector<f64>) -> f64 {
    let hx = &problem.phi * x;
    let mut grad = &hx + &problem.f;
    let mut scale = 1.0 + hx.amax().max(problem.f.amax());
    if problem.rows() > 0 {
        let dual = problem.omega.tr_mul(multipliers);
        scale = scale.max(1.0 + dual.amax());
        grad += dual;
    }
    let mut res = grad.amax() / scale;
    for i in 0..problem.rows() {
        let b = problem.omega_rhs[i];
        let slack = problem.omega.row(i).dot(&x.transpose()) - b;
        let mu = multipliers[i];
        res = res.max(slack.max(0.0) / (1.0 + b.abs()));
        res = res.max((-mu).max(0.0));
        res = res.max((mu * slack).abs() / ((1.0 + mu.abs()) * (1.0 + b.abs())));
    }
    res
}

fn factor_phi(phi: &DMatrix<f64>) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    if let Some(c) = phi.clone().cholesky() {
        return Ok((phi.clone(), c));
    }
    let n = phi.nrows();
    let ridge = 1e-10 * phi.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    log::warn!("QP Hessian is not positive definite; adding ridge {ridge:e}");
    let mut reg = phi.clone();
    for k in 0..n {
        reg[(k, k)] += ridge;
    }
    let c = reg
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("QP Hessian is not positive definite after ridge".into()))?;
    Ok((reg, c))
}

/// Solves `S r = b` for the small active-set Schur complement.
fn solve_small(s: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(c) = s.clone().cholesky() {
        return Some(c.solve(b));
    }
    s.clone().lu().solve(b)
}

pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(problem, &[], &QpOptions::default())
}

/// Solves the QP. Rows listed in `warm_start` (typically the previous control
/// step's active set) are examined first when choosing the entering row.
pub fn solve_qp_with(problem: &QpProblem, warm_start: &[usize], options: &QpOptions) -> Result<QpSolution> {
    let n = problem.dim();
    let rows = problem.rows();
    let (h, chol) = factor_phi(&problem.phi)?;
    let cap = options.max_iterations.unwrap_or(50 * n.max(1));
    let tol = options.tolerance;

    let row = |i: usize| -> DVector<f64> { problem.omega.row(i).transpose() };
    let norms: Vec<f64> = (0..rows).map(|i| problem.omega.row(i).norm()).collect();
    for i in 0..rows {
        if norms[i] == 0.0 && problem.omega_rhs[i] < -tol * (1.0 + problem.omega_rhs[i].abs()) {
            return Err(Error::Infeasible { rows: vec![format!("{} (row {i})", problem.meta[i])] });
        }
    }
    let mut hinv_rows: Vec<Option<DVector<f64>>> = vec![None; rows];
    let hinv_row = |i: usize, cache: &mut Vec<Option<DVector<f64>>>| -> DVector<f64> {
        if cache[i].is_none() {
            cache[i] = Some(chol.solve(&row(i)));
        }
        cache[i].clone().expect("cached")
    };

    let mut x = chol.solve(&(-&problem.f));
    let mut active: Vec<usize> = Vec::new();
    let mut mu: Vec<f64> = Vec::new();
    let mut iterations = 0usize;
    let mut warm: Vec<usize> = warm_start.iter().copied().filter(|&i| i < rows).collect();
    warm.sort_unstable();
    warm.dedup();

    loop {
        let violation = |i: usize, x: &DVector<f64>| problem.omega.row(i).dot(&x.transpose()) - problem.omega_rhs[i];
        let mut entering: Option<(usize, f64)> = None;
        for candidates in [warm.clone(), (0..rows).collect::<Vec<_>>()] {
            for i in candidates {
                if norms[i] == 0.0 || active.contains(&i) {
                    continue;
                }
                let v = violation(i, &x);
                if v > tol * (1.0 + problem.omega_rhs[i].abs()) {
                    let score = v / norms[i];
                    if entering.is_none_or(|(_, best)| score > best) {
                        entering = Some((i, score));
                    }
                }
            }
            if entering.is_some() {
                break;
            }
        }
        let Some((p, _)) = entering else { break };
        let np = row(p);
        let hinv_np = hinv_row(p, &mut hinv_rows);
        let mut mu_p = 0.0;

        loop {
            iterations += 1;
            if iterations > cap {
                let mut full = DVector::zeros(rows);
                for (k, &i) in active.iter().enumerate() {
                    full[i] = mu[k];
                }
                return Err(Error::NotConverged {
                    iterations: cap,
                    residual: kkt_residual(problem, &x, &full),
                });
            }
            let q = active.len();
            let (z, r) = if q == 0 {
                (hinv_np.clone(), DVector::zeros(0))
            } else {
                let cols: Vec<DVector<f64>> = active.iter().map(|&i| hinv_row(i, &mut hinv_rows)).collect();
                let s = DMatrix::from_fn(q, q, |a, b| problem.omega.row(active[a]).dot(&cols[b].transpose()));
                let rhs = DVector::from_fn(q, |a, _| cols[a].dot(&np));
                let r = solve_small(&s, &rhs).ok_or_else(|| {
                    Error::Singular("active constraint normals became linearly dependent".into())
                })?;
                let mut z = hinv_np.clone();
                for (k, col) in cols.iter().enumerate() {
                    z.axpy(-r[k], col, 1.0);
                }
                (z, r)
            };
            let curvature = np.dot(&z);
            let hmax = h.diagonal().amax().max(f64::MIN_POSITIVE);
            let full_step = if curvature > 1e-11 * np.norm_squared() / hmax {
                (np.dot(&x) - problem.omega_rhs[p]) / curvature
            } else {
                f64::INFINITY
            };
            let rmax = r.amax();
            let mut partial_step = f64::INFINITY;
            let mut leaving = None;
            for k in 0..q {
                if r[k] > 1e-10 * rmax {
                    let ratio = mu[k] / r[k];
                    if ratio < partial_step {
                        partial_step = ratio;
                        leaving = Some(k);
                    }
                }
            }
            if full_step.is_infinite() && partial_step.is_infinite() {
                let mut conflict = vec![format!("{} (row {p})", problem.meta[p])];
                for k in 0..q {
                    if r[k] < -1e-10 * rmax.max(f64::MIN_POSITIVE) || rmax == 0.0 {
                        conflict.push(format!("{} (row {})", problem.meta[active[k]], active[k]));
                    }
                }
                return Err(Error::Infeasible { rows: conflict });
            }
            let step = full_step.min(partial_step);
            if full_step.is_finite() {
                x.axpy(-step, &z, 1.0);
            }
            for k in 0..q {
                mu[k] -= step * r[k];
            }
            mu_p += step;
            if full_step <= partial_step {
                active.push(p);
                mu.push(mu_p);
                break;
            }
            let k = leaving.expect("partial step has a leaving row");
            active.remove(k);
            mu.remove(k);
        }
    }

    // Polish: re-solve the KKT system of the final active set.
    if !active.is_empty() {
        let q = active.len();
        let mut kkt = DMatrix::zeros(n + q, n + q);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        let mut rhs = DVector::zeros(n + q);
        rhs.rows_mut(0, n).copy_from(&(-&problem.f));
        for (k, &i) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(c, n + k)] = problem.omega[(i, c)];
                kkt[(n + k, c)] = problem.omega[(i, c)];
            }
            rhs[n + k] = problem.omega_rhs[i];
        }
        if let Some(sol) = kkt.lu().solve(&rhs) {
            let xp = sol.rows(0, n).into_owned();
            let mp: Vec<f64> = sol.rows(n, q).iter().copied().collect();
            let ok = sol.iter().all(|v| v.is_finite())
                && mp.iter().all(|&m| m >= -1e-9 * (1.0 + m.abs()))
                && (0..rows).all(|i| {
                    problem.omega.row(i).dot(&xp.transpose()) - problem.omega_rhs[i]
                        <= 1e-9 * (1.0 + problem.omega_rhs[i].abs())
                });
            if ok {
                x = xp;
                mu = mp.into_iter().map(|m| m.max(0.0)).collect();
            }
        }
    }

    let mut order: Vec<usize> = (0..active.len()).collect();
    order.sort_by_key(|&k| active[k]);
    let mut multipliers = DVector::zeros(rows);
    for &k in &order {
        multipliers[active[k]] = mu[k];
    }
    let active_set: Vec<usize> = order.iter().map(|&k| active[k]).collect();
    let kkt_residual = kkt_residual(problem, &x, &multipliers);
    Ok(QpSolution {
        du: x,
        active_set,
        multipliers,
        iterations,
        kkt_residual,
        softened: false,
    })
}

/// Penalty on the squared output-bound slack of the relaxed problem.
pub const SOFT_PENALTY: f64 = 1e6;

/// Like [`solve_qp_with`], but when the problem is infeasible and has output
/// bound rows, retries with one non-negative slack per output channel on those
/// rows. Input rows are never relaxed.
pub fn solve_qp_soft(problem: &QpProblem, warm_start: &[usize], options: &QpOptions) -> Result<QpSolution> {
    match solve_qp_with(problem, warm_start, options) {
        Err(Error::Infeasible { rows }) => {
            let outputs: Vec<usize> = {
                let mut c: Vec<usize> = problem
                    .meta
                    .iter()
                    .filter(|l| l.kind == BoundKind::OutputLevel)
                    .map(|l| l.channel)
                    .collect();
                c.sort_unstable();
                c.dedup();
                c
            };
            if outputs.is_empty() {
                return Err(Error::Infeasible { rows });
            }
            log::warn!("QP infeasible ({}); relaxing output bounds", rows.join(", "));
            let relaxed = soften_output_rows(problem, &outputs);
            let sol = solve_qp_with(&relaxed, warm_start, options)?;
            let n = problem.dim();
            let active_set = sol.active_set.iter().copied().filter(|&i| i < problem.rows()).collect();
            Ok(QpSolution {
                du: sol.du.rows(0, n).into_owned(),
                active_set,
                multipliers: sol.multipliers.rows(0, problem.rows()).into_owned(),
                iterations: sol.iterations,
                kkt_residual: sol.kkt_residual,
                softened: true,
            })
        }
        other => other,
    }
}

fn soften_output_rows(problem: &QpProblem, outputs: &[usize]) -> QpProblem {
    let (n, rows, extra) = (problem.dim(), problem.rows(), outputs.len());
    let mut phi = DMatrix::zeros(n + extra, n + extra);
    phi.view_mut((0, 0), (n, n)).copy_from(&problem.phi);
    for k in 0..extra {
        phi[(n + k, n + k)] = SOFT_PENALTY;
    }
    let mut f = DVector::zeros(n + extra);
    f.rows_mut(0, n).copy_from(&problem.f);
    let mut omega = DMatrix::zeros(rows + extra, n + extra);
    omega.view_mut((0, 0), (rows, n)).copy_from(&problem.omega);
    let mut rhs = DVector::zeros(rows + extra);
    rhs.rows_mut(0, rows).copy_from(&problem.omega_rhs);
    let mut meta = problem.meta.clone();
    for (i, label) in problem.meta.iter().enumerate() {
        if label.kind == BoundKind::OutputLevel {
            let k = outputs.iter().position(|&c| c == label.channel).expect("listed output");
            omega[(i, n + k)] = -1.0;
        }
    }
    for (k, &c) in outputs.iter().enumerate() {
        omega[(rows + k, n + k)] = -1.0;
        meta.push(RowLabel { kind: BoundKind::OutputLevel, side: BoundSide::Lower, channel: c, sample: usize::MAX });
    }
    QpProblem { phi, f, omega, omega_rhs: rhs, meta }
}

/// Builds the constrained three-term problem for one control step.
///
/// `Φ = AᵀQA + R + AᵀT₂ᵀST₂A` and `f = AᵀQ(Y_P0 − W) + AᵀT₂ᵀS(T₂Y_P0 − T₃y)`,
/// so `xᵀΦx + 2fᵀx` equals the three-term loss up to a constant. Rows are
/// stacked as input-level upper, rate upper, output upper, then the mirrored
/// lower rows, each group only for declared bounds. Output rows skip the
/// dead-time samples of each output, which no move can influence.
pub fn assemble_qp(
    y_p0: &DVector<f64>,
    setpoint: &DVector<f64>,
    y_now: &DVector<f64>,
    weights: &WeightingSet,
    a: &DynamicMatrix,
    bounds: &Bounds,
    last_u: &[f64],
) -> Result<QpProblem> {
    let (p, m) = (weights.outputs, weights.inputs);
    let (ph, mh) = (weights.prediction_horizon, weights.control_horizon);
    if y_p0.len() != p * ph || setpoint.len() != p * ph || y_now.len() != p || last_u.len() != m {
        return Err(Error::shape("QP assembly inputs do not match the weighting dimensions"));
    }
    bounds.validate(p, m)?;
    let phi = three_term_hessian(a, weights);
    let f = -three_term_rhs(y_p0, setpoint, y_now, a, weights);
    let n = m * mh;

    let mut rows: Vec<(DVector<f64>, f64, RowLabel)> = Vec::new();
    let cumulative = |j: usize, c: usize| DVector::from_fn(n, |col, _| {
        if col >= j * mh && col <= j * mh + c { 1.0 } else { 0.0 }
    });
    let unit = |j: usize, c: usize| DVector::from_fn(n, |col, _| if col == j * mh + c { 1.0 } else { 0.0 });
    let first_output_row = |i: usize| {
        // first predicted sample that some input can move
        (0..ph).find(|&h| a.matrix.row(i * ph + h).iter().any(|&v| v != 0.0)).unwrap_or(ph)
    };
    let label = |kind, side, channel, sample| RowLabel { kind, side, channel, sample };

    for side in [BoundSide::Upper, BoundSide::Lower] {
        let sign = if side == BoundSide::Upper { 1.0 } else { -1.0 };
        let level = if side == BoundSide::Upper { &bounds.u_max } else { &bounds.u_min };
        if let Some(lim) = level {
            for j in 0..m {
                for c in 0..mh {
                    rows.push((cumulative(j, c) * sign, sign * (lim[j] - last_u[j]), label(BoundKind::InputLevel, side, j, c)));
                }
            }
        }
        if let Some(du) = &bounds.du_max {
            for j in 0..m {
                for c in 0..mh {
                    rows.push((unit(j, c) * sign, du[j], label(BoundKind::InputRate, side, j, c)));
                }
            }
        }
        let level = if side == BoundSide::Upper { &bounds.y_max } else { &bounds.y_min };
        if let Some(lim) = level {
            for i in 0..p {
                for h in first_output_row(i)..ph {
                    let r = i * ph + h;
                    rows.push((a.matrix.row(r).transpose() * sign, sign * (lim[i] - y_p0[r]), label(BoundKind::OutputLevel, side, i, h)));
                }
            }
        }
    }

    let count = rows.len();
    let mut omega = DMatrix::zeros(count, n);
    let mut omega_rhs = DVector::zeros(count);
    let mut meta = Vec::with_capacity(count);
    for (k, (r, b, l)) in rows.into_iter().enumerate() {
        omega.row_mut(k).copy_from(&r.transpose());
        omega_rhs[k] = b;
        meta.push(l);
    }
    QpProblem::new(phi, f, omega, omega_rhs, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dmc::{build_dynamic_matrix, solve_three_term, three_term_loss, ControllerSpec};
    use crate::lti::step_response;
    use crate::signal::GaussianSource;
    use proptest::prelude::*;

    fn box_problem(seed: u64, n: usize) -> QpProblem {
        let mut g = GaussianSource::new(seed, 0);
        let b = DMatrix::from_fn(n, n, |_, _| g.standard_normal());
        let phi = b.transpose() * &b + DMatrix::identity(n, n) * 0.5;
        let f = DVector::from_fn(n, |_, _| 3.0 * g.standard_normal());
        let mut omega = DMatrix::zeros(2 * n, n);
        let mut rhs = DVector::zeros(2 * n);
        let mut meta = Vec::new();
        for k in 0..n {
            let lo = -0.5 - g.uniform();
            let hi = 0.5 + g.uniform();
            omega[(k, k)] = 1.0;
            rhs[k] = hi;
            omega[(n + k, k)] = -1.0;
            rhs[n + k] = -lo;
        }
        for side in [BoundSide::Upper, BoundSide::Lower] {
            for k in 0..n {
                meta.push(RowLabel { kind: BoundKind::InputRate, side, channel: k, sample: 0 });
            }
        }
        QpProblem::new(phi, f, omega, rhs, meta).unwrap()
    }

    #[test]
    fn scalar_clamp() {
        let label = RowLabel { kind: BoundKind::InputRate, side: BoundSide::Upper, channel: 0, sample: 0 };
        let p = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -4.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.5),
            vec![label],
        )
        .unwrap();
        let s = solve_qp(&p).unwrap();
        assert!((s.du[0] - 1.5).abs() < 1e-14);
        assert_eq!(s.active_set, vec![0]);
        assert!((s.multipliers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unconstrained_minimizer_needs_no_rows() {
        let mut p = box_problem(1, 4);
        p.omega_rhs.fill(1e6);
        let s = solve_qp(&p).unwrap();
        let x = p.phi.clone().cholesky().unwrap().solve(&(-&p.f));
        assert!(s.active_set.is_empty());
        assert!((s.du - x).amax() < 1e-12);
    }

    #[test]
    fn infeasible_rows_reported() {
        let up = RowLabel { kind: BoundKind::InputLevel, side: BoundSide::Upper, channel: 0, sample: 0 };
        let lo = RowLabel { side: BoundSide::Lower, ..up };
        let p = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::from_element(1, 3.0),
            DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            DVector::from_row_slice(&[-1.0, -1.0]),
            vec![up, lo],
        )
        .unwrap();
        match solve_qp(&p) {
            Err(Error::Infeasible { rows }) => {
                assert_eq!(rows.len(), 2);
                assert!(rows.iter().any(|r| r.contains("u_max")));
                assert!(rows.iter().any(|r| r.contains("u_min")));
            }
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let p = box_problem(5, 6);
        let opts = QpOptions { max_iterations: Some(1), ..QpOptions::default() };
        let unconstrained = p.phi.clone().cholesky().unwrap().solve(&(-&p.f));
        if p.max_violation(&unconstrained) > 0.0 && solve_qp(&p).unwrap().iterations > 1 {
            assert!(matches!(solve_qp_with(&p, &[], &opts), Err(Error::NotConverged { .. })));
        }
    }

    fn process_a_problem(bounds: &Bounds, seed: u64) -> (QpProblem, [DVector<f64>; 3], WeightingSet, DynamicMatrix) {
        let plant = crate::fixtures::process_a();
        let spec = ControllerSpec::new(30, 20, 5, vec![2.0, 1.0], vec![0.5, 0.3], vec![3.0, 1.0], vec![1, 1]);
        let coeffs = step_response(&plant, 30).unwrap();
        let a = build_dynamic_matrix(&coeffs, &spec).unwrap();
        let w = WeightingSet::new(&spec).unwrap();
        let mut g = GaussianSource::new(seed, 0);
        let y0 = DVector::from_fn(40, |_, _| g.standard_normal());
        let sp = DVector::from_fn(40, |_, _| 2.0 * g.standard_normal());
        let yn = DVector::from_fn(2, |_, _| g.standard_normal());
        let p = assemble_qp(&y0, &sp, &yn, &w, &a, bounds, &[0.1, -0.2]).unwrap();
        (p, [y0, sp, yn], w, a)
    }

    #[test]
    fn assembly_matches_three_term_loss() {
        let (p, [y0, sp, yn], w, a) = process_a_problem(&Bounds::default(), 2);
        assert_eq!(p.rows(), 0);
        let mut g = GaussianSource::new(3, 0);
        let x0 = DVector::zeros(10);
        let base = three_term_loss(&x0, &y0, &sp, &yn, &w, &a) - 2.0 * p.objective(&x0);
        for _ in 0..100 {
            let x = DVector::from_fn(10, |_, _| g.standard_normal());
            let j = three_term_loss(&x, &y0, &sp, &yn, &w, &a);
            let via_qp = 2.0 * p.objective(&x) + base;
            assert!((j - via_qp).abs() <= 1e-9 * j.abs().max(1.0));
        }
        let sol = solve_qp(&p).unwrap();
        let direct = solve_three_term(&y0, &sp, &yn, &w, &a).unwrap();
        assert!((sol.du - direct).amax() < 1e-10);
    }

    #[test]
    fn cumulative_rows_for_input_levels() {
        let plant = MimoFixture::siso();
        let spec = ControllerSpec::new(5, 3, 2, vec![1.0], vec![1.0], vec![0.0], vec![1]).with_bounds(Bounds {
            u_max: Some(vec![1.0]),
            u_min: Some(vec![-2.0]),
            ..Bounds::default()
        });
        let coeffs = step_response(&plant, 5).unwrap();
        let a = build_dynamic_matrix(&coeffs, &spec).unwrap();
        let w = WeightingSet::new(&spec).unwrap();
        let z = DVector::zeros(3);
        let p = assemble_qp(&z, &z, &DVector::zeros(1), &w, &a, &spec.bounds, &[0.25]).unwrap();
        assert_eq!(p.omega.rows(0, 2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));
        assert_eq!(p.omega.rows(2, 2), DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, -1.0, -1.0]));
        assert_eq!(p.omega_rhs.as_slice(), &[0.75, 0.75, 2.25, 2.25]);
    }

    struct MimoFixture;
    impl MimoFixture {
        fn siso() -> crate::lti::MimoPlant {
            crate::lti::MimoPlant::new(vec![vec![crate::lti::SisoChannel::pure_gain(1.0, 1).unwrap()]]).unwrap()
        }
    }

    #[test]
    fn output_rows_skip_dead_time_and_soften() {
        let plant = crate::fixtures::process_b();
        let spec = crate::fixtures::process_b_spec().with_bounds(Bounds {
            y_max: Some(vec![0.5, 0.5]),
            u_max: Some(vec![10.0, 10.0]),
            u_min: Some(vec![-10.0, -10.0]),
            ..Bounds::default()
        });
        let coeffs = step_response(&plant, 55).unwrap();
        let a = build_dynamic_matrix(&coeffs, &spec).unwrap();
        let w = WeightingSet::new(&spec).unwrap();
        // free response already far above the bound on the first movable samples
        let y0 = DVector::from_element(90, 5.0);
        let sp = DVector::zeros(90);
        let p = assemble_qp(&y0, &sp, &DVector::from_element(2, 5.0), &w, &a, &spec.bounds, &[0.0, 0.0]).unwrap();
        let out_rows: Vec<_> = p.meta.iter().filter(|l| l.kind == BoundKind::OutputLevel).collect();
        assert_eq!(out_rows.iter().filter(|l| l.channel == 0).count(), 44);
        assert_eq!(out_rows.iter().filter(|l| l.channel == 1).count(), 42);
        assert!(matches!(solve_qp(&p), Err(Error::Infeasible { .. })));
        let soft = solve_qp_soft(&p, &[], &QpOptions::default()).unwrap();
        assert!(soft.softened);
        assert!(soft.du.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn kkt_holds_on_constrained_dmc_problem() {
        let bounds = Bounds { du_max: Some(vec![0.3, 0.3]), ..Bounds::input_box(2, 0.5) };
        for seed in 0..20 {
            let (p, ..) = process_a_problem(&bounds, seed);
            let s = solve_qp(&p).unwrap();
            assert!(s.kkt_residual < 1e-8, "seed {seed}: {}", s.kkt_residual);
        }
    }

    fn enumeration_oracle(p: &QpProblem) -> f64 {
        // every variable at its lower bound, upper bound, or free
        let n = p.dim();
        let hi: Vec<f64> = (0..n).map(|k| p.omega_rhs[k]).collect();
        let lo: Vec<f64> = (0..n).map(|k| -p.omega_rhs[n + k]).collect();
        let mut best = f64::INFINITY;
        for code in 0..3usize.pow(n as u32) {
            let mut state = vec![0u8; n];
            let mut c = code;
            for s in state.iter_mut() {
                *s = (c % 3) as u8;
                c /= 3;
            }
            let free: Vec<usize> = (0..n).filter(|&k| state[k] == 2).collect();
            let mut x = DVector::from_fn(n, |k, _| match state[k] { 0 => lo[k], 1 => hi[k], _ => 0.0 });
            if !free.is_empty() {
                let hff = DMatrix::from_fn(free.len(), free.len(), |a, b| p.phi[(free[a], free[b])]);
                let rhs = DVector::from_fn(free.len(), |a, _| {
                    -p.f[free[a]] - (0..n).filter(|k| state[*k] != 2).map(|k| p.phi[(free[a], k)] * x[k]).sum::<f64>()
                });
                let sol = hff.cholesky().unwrap().solve(&rhs);
                for (a, &k) in free.iter().enumerate() {
                    x[k] = sol[a];
                }
            }
            if (0..n).all(|k| x[k] <= hi[k] + 1e-12 && x[k] >= lo[k] - 1e-12) {
                best = best.min(p.objective(&x));
            }
        }
        best
    }

    #[test]
    fn box_problems_match_enumeration() {
        for seed in 0..30 {
            let p = box_problem(seed, 4);
            let s = solve_qp(&p).unwrap();
            let oracle = enumeration_oracle(&p);
            assert!((p.objective(&s.du) - oracle).abs() < 1e-9 * (1.0 + oracle.abs()), "seed {seed}");
        }
    }

    proptest! {
        #[test]
        fn no_random_feasible_point_beats_solution(seed in 0u64..5000) {
            let p = box_problem(seed, 5);
            let s = solve_qp(&p).unwrap();
            let j = p.objective(&s.du);
            let mut g = GaussianSource::new(seed, 1);
            for _ in 0..1000 {
                // project a random point onto the box
                let x = DVector::from_fn(5, |k, _| (3.0 * g.standard_normal()).clamp(-p.omega_rhs[5 + k], p.omega_rhs[k]));
                prop_assert!(j <= p.objective(&x) + 1e-8);
            }
        }

        #[test]
        fn loosening_bounds_never_hurts(seed in 0u64..5000, row in 0usize..8, extra in 0.0..2.0f64) {
            let p = box_problem(seed, 4);
            let mut loose = p.clone();
            loose.omega_rhs[row] += extra;
            let j = p.objective(&solve_qp(&p).unwrap().du);
            let jl = loose.objective(&solve_qp(&loose).unwrap().du);
            prop_assert!(jl <= j + 1e-10 * (1.0 + j.abs()));
        }

        #[test]
        fn warm_start_gives_same_answer(seed in 0u64..5000) {
            let p = box_problem(seed, 6);
            let cold = solve_qp(&p).unwrap();
            let warm = solve_qp_with(&p, &cold.active_set, &QpOptions::default()).unwrap();
            prop_assert!((cold.du - warm.du).amax() < 1e-10);
        }
    }
}
