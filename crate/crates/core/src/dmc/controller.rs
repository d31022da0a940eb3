use std::path::PathBuf;

use nalgebra::DVector;

use super::{build_dynamic_matrix, first_move, ControllerSpec, DynamicMatrix, PredictionState, UnconstrainedLaw, WeightingSet};
use crate::lti::StepResponse;
use crate::qp::{assemble_qp, solve_qp_soft, QpOptions};
use crate::{Error, Result};

/// Outcome of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub du: Vec<f64>,
    pub u: Vec<f64>,
    pub qp: Option<QpStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpStats {
    pub iterations: usize,
    pub active_rows: usize,
    pub kkt_residual: f64,
    pub softened: bool,
}

/// A receding-horizon DMC controller: two-term when `s = 0`, three-term
/// otherwise, constrained whenever the spec declares bounds.
#[derive(Debug, Clone)]
pub struct DmcController {
    spec: ControllerSpec,
    model: StepResponse,
    dynamic: DynamicMatrix,
    weights: WeightingSet,
    law: UnconstrainedLaw,
    state: PredictionState,
    warm_start: Vec<usize>,
    qp_options: QpOptions,
    qp_dump: Option<PathBuf>,
    steps: usize,
}

impl DmcController {
    /// Builds the controller from a step-response model (truncated to the
    /// spec's model horizon), starting at rest with outputs `y0` and inputs `u0`.
    pub fn new(spec: &ControllerSpec, model: &StepResponse, y0: &[f64], u0: &[f64]) -> Result<Self> {
        spec.validate()?;
        if model.outputs() != spec.outputs() || model.inputs() != spec.inputs() {
            return Err(Error::shape(format!(
                "model is {}×{}, controller weights are {}×{}",
                model.outputs(),
                model.inputs(),
                spec.outputs(),
                spec.inputs()
            )));
        }
        if y0.len() != spec.outputs() || u0.len() != spec.inputs() {
            return Err(Error::shape("initial output/input vectors do not match the spec"));
        }
        let model = model.truncated(spec.model_horizon)?;
        let dynamic = build_dynamic_matrix(&model, spec)?;
        let weights = WeightingSet::new(spec)?;
        let law = UnconstrainedLaw::new(&dynamic, &weights)?;
        Ok(Self {
            spec: spec.clone(),
            state: PredictionState::new(y0, u0, spec.model_horizon),
            model,
            dynamic,
            weights,
            law,
            warm_start: Vec::new(),
            qp_options: QpOptions::default(),
            qp_dump: None,
            steps: 0,
        })
    }

    /// Writes every QP posed by this controller as CSV files into `dir`.
    pub fn dump_qp_to(&mut self, dir: PathBuf) {
        self.qp_dump = Some(dir);
    }

    pub fn spec(&self) -> &ControllerSpec {
        &self.spec
    }

    pub fn dynamic_matrix(&self) -> &DynamicMatrix {
        &self.dynamic
    }

    pub fn weights(&self) -> &WeightingSet {
        &self.weights
    }

    pub fn state(&self) -> &PredictionState {
        &self.state
    }

    /// The setpoint vector actually tracked: either `setpoint` itself or its
    /// first-order shaping from the current output.
    pub fn shaped_setpoint(&self, setpoint: &DVector<f64>, y: &[f64]) -> DVector<f64> {
        let ph = self.spec.prediction_horizon;
        match &self.spec.reference_lambda {
            None => setpoint.clone(),
            Some(lambda) => DVector::from_fn(setpoint.len(), |r, _| {
                let (i, h) = (r / ph, r % ph + 1);
                let blend = 1.0 - (-(h as f64) / lambda[i]).exp();
                y[i] + (setpoint[r] - y[i]) * blend
            }),
        }
    }

    /// One control step: feed back the measurement `y(k)`, compute the move
    /// toward the stacked setpoint window `w(k+1..=k+P)` and advance.
    pub fn step(&mut self, y: &[f64], setpoint: &DVector<f64>) -> Result<StepOutcome> {
        let ph = self.spec.prediction_horizon;
        if setpoint.len() != self.spec.outputs() * ph {
            return Err(Error::shape("setpoint window must have length pP"));
        }
        self.state.correct(y)?;
        let y_p0 = self.state.free_response(ph);
        let target = self.shaped_setpoint(setpoint, y);
        let y_now = DVector::from_column_slice(y);

        let (du_seq, qp) = if self.spec.is_constrained() {
            let problem = assemble_qp(
                &y_p0,
                &target,
                &y_now,
                &self.weights,
                &self.dynamic,
                &self.spec.bounds,
                self.state.last_u(),
            )?;
            if let Some(dir) = &self.qp_dump {
                std::fs::create_dir_all(dir)?;
                problem.write_csv(&dir.join(format!("qp_{:06}.csv", self.steps)))?;
            }
            let sol = solve_qp_soft(&problem, &self.warm_start, &self.qp_options)?;
            self.warm_start = sol.active_set.clone();
            let stats = QpStats {
                iterations: sol.iterations,
                active_rows: sol.active_set.len(),
                kkt_residual: sol.kkt_residual,
                softened: sol.softened,
            };
            (sol.du, Some(stats))
        } else {
            (self.law.solve(&y_p0, &target, &y_now), None)
        };

        let du = first_move(&du_seq, self.spec.control_horizon);
        self.state.apply_moves(&du, &self.model);
        let u = self.state.last_u().to_vec();
        self.state.advance();
        self.steps += 1;
        Ok(StepOutcome { du, u, qp })
    }
}
