use nalgebra::{DMatrix, DVector};

use super::ControllerSpec;
use crate::lti::StepResponse;
use crate::{Error, Result};

/// Block-Toeplitz prediction matrix mapping the stacked future moves
/// `[Δu_1(k..k+M-1); ...; Δu_m(...)]` to the stacked predicted outputs
/// `[y_1(k+1..k+P); ...; y_p(...)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicMatrix {
    pub coefficients: StepResponse,
    pub matrix: DMatrix<f64>,
    pub prediction_horizon: usize,
    pub control_horizon: usize,
}

impl DynamicMatrix {
    pub fn outputs(&self) -> usize {
        self.coefficients.outputs()
    }

    pub fn inputs(&self) -> usize {
        self.coefficients.inputs()
    }
}

pub fn build_dynamic_matrix(coeffs: &StepResponse, spec: &ControllerSpec) -> Result<DynamicMatrix> {
    let (ph, mh) = (spec.prediction_horizon, spec.control_horizon);
    if coeffs.horizon() < ph {
        return Err(Error::invalid(
            "step response",
            format!(
                "{} coefficients per channel, prediction horizon needs {ph}",
                coeffs.horizon()
            ),
        ));
    }
    if mh == 0 || mh > ph {
        return Err(Error::invalid("control horizon", format!("need 1 ≤ M ≤ P, got M={mh}")));
    }
    let (p, m) = (coeffs.outputs(), coeffs.inputs());
    let mut a = DMatrix::zeros(p * ph, m * mh);
    for i in 0..p {
        for j in 0..m {
            let c = coeffs.channel(i, j);
            for h in 0..ph {
                for col in 0..=h.min(mh - 1) {
                    a[(i * ph + h, j * mh + col)] = c[h - col];
                }
            }
        }
    }
    Ok(DynamicMatrix {
        coefficients: coeffs.clone(),
        matrix: a,
        prediction_horizon: ph,
        control_horizon: mh,
    })
}

/// Diagonal weights plus the difference and selector matrices of the
/// output-increment term.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightingSet {
    pub q: DVector<f64>,
    pub r: DVector<f64>,
    pub s: DVector<f64>,
    /// Block difference matrix: 1 on the diagonal, −1 below it, per output.
    pub t2: DMatrix<f64>,
    /// Places the current output of channel `i` in the first row of block `i`.
    pub t3: DMatrix<f64>,
    pub delays: Vec<usize>,
    pub outputs: usize,
    pub inputs: usize,
    pub prediction_horizon: usize,
    pub control_horizon: usize,
}

impl WeightingSet {
    /// Weights for `spec`, zeroing the first `d_i − 1` samples of output `i`
    /// in both Q and S.
    pub fn new(spec: &ControllerSpec) -> Result<Self> {
        spec.validate()?;
        let (p, m) = (spec.outputs(), spec.inputs());
        let (ph, mh) = (spec.prediction_horizon, spec.control_horizon);
        let mut q = DVector::zeros(p * ph);
        let mut s = DVector::zeros(p * ph);
        let mut t2 = DMatrix::zeros(p * ph, p * ph);
        let mut t3 = DMatrix::zeros(p * ph, p);
        for i in 0..p {
            let skip = spec.delays[i] - 1;
            for h in 0..ph {
                let row = i * ph + h;
                if h >= skip {
                    q[row] = spec.q[i];
                    s[row] = spec.s[i];
                }
                t2[(row, row)] = 1.0;
                if h > 0 {
                    t2[(row, row - 1)] = -1.0;
                }
            }
            t3[(i * ph, i)] = 1.0;
        }
        let r = DVector::from_fn(m * mh, |k, _| spec.r[k / mh]);
        Ok(Self {
            q,
            r,
            s,
            t2,
            t3,
            delays: spec.delays.clone(),
            outputs: p,
            inputs: m,
            prediction_horizon: ph,
            control_horizon: mh,
        })
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.q)
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.r)
    }

    pub fn s_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.s)
    }

    pub fn has_increment_term(&self) -> bool {
        self.s.iter().any(|&v| v != 0.0)
    }
}
