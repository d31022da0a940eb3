use nalgebra::DVector;

use crate::lti::StepResponse;
use crate::{Error, Result};

/// Open-loop output predictions for the samples `k, k+1, …, k+N`, one row per
/// output, advanced by the moving-horizon feedback convention.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionState {
    predictions: Vec<Vec<f64>>,
    last_u: Vec<f64>,
    last_correction: Vec<f64>,
}

impl PredictionState {
    /// Start-up state: every future sample equals the measured output.
    pub fn new(y0: &[f64], u0: &[f64], model_horizon: usize) -> Self {
        Self {
            predictions: y0.iter().map(|&y| vec![y; model_horizon + 1]).collect(),
            last_u: u0.to_vec(),
            last_correction: vec![0.0; y0.len()],
        }
    }

    pub fn outputs(&self) -> usize {
        self.predictions.len()
    }

    pub fn last_u(&self) -> &[f64] {
        &self.last_u
    }

    /// Measured-minus-predicted gap applied by the latest [`correct`](Self::correct).
    pub fn last_correction(&self) -> &[f64] {
        &self.last_correction
    }

    /// Prediction of output `i` for sample `k + h`.
    pub fn predicted(&self, output: usize, h: usize) -> f64 {
        self.predictions[output][h]
    }

    /// Adds the gap between the measured and predicted current output to every
    /// future sample, so the current prediction equals the measurement.
    pub fn correct(&mut self, y: &[f64]) -> Result<()> {
        if y.len() != self.outputs() {
            return Err(Error::shape("measured output length differs from p"));
        }
        for (i, row) in self.predictions.iter_mut().enumerate() {
            let e = y[i] - row[0];
            self.last_correction[i] = e;
            for v in row.iter_mut().skip(1) {
                *v += e;
            }
            row[0] = y[i];
        }
        Ok(())
    }

    /// Stacked `[y_1(k+1..=k+P); …; y_p(k+1..=k+P)]` assuming frozen inputs.
    pub fn free_response(&self, prediction_horizon: usize) -> DVector<f64> {
        let p = self.outputs();
        DVector::from_fn(p * prediction_horizon, |r, _| {
            self.predictions[r / prediction_horizon][1 + r % prediction_horizon]
        })
    }

    /// Adds the effect of the moves applied at sample `k`.
    pub fn apply_moves(&mut self, du: &[f64], model: &StepResponse) {
        for (i, row) in self.predictions.iter_mut().enumerate() {
            for (j, &d) in du.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let a = model.channel(i, j);
                for (h, v) in row.iter_mut().enumerate().skip(1) {
                    *v += a[h - 1] * d;
                }
            }
        }
        for (u, d) in self.last_u.iter_mut().zip(du) {
            *u += d;
        }
    }

    /// Moves the window one sample forward, holding the last prediction.
    pub fn advance(&mut self) {
        for row in &mut self.predictions {
            row.rotate_left(1);
            let n = row.len();
            row[n - 1] = row[n - 2];
        }
    }
}
