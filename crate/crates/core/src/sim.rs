//! Closed-loop simulation of a DMC controller against a plant.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::dmc::{ControllerSpec, DmcController, QpStats};
use crate::lti::{MimoPlant, PlantSimulator, StepResponse};
use crate::{Error, Result};

/// One setpoint change on one output. Times are sample indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SetpointEvent {
    /// Jump to `value` at sample `at` and hold.
    Step { output: usize, at: usize, value: f64 },
    /// From sample `at`, move by `slope` per sample starting from the level
    /// reached at `at`.
    Ramp { output: usize, at: usize, slope: f64 },
}

impl SetpointEvent {
    fn output(&self) -> usize {
        match *self {
            SetpointEvent::Step { output, .. } | SetpointEvent::Ramp { output, .. } => output,
        }
    }

    fn at(&self) -> usize {
        match *self {
            SetpointEvent::Step { at, .. } | SetpointEvent::Ramp { at, .. } => at,
        }
    }
}

/// Piecewise constant/linear setpoints for every output, zero before the
/// first event.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SetpointProgram {
    events: Vec<SetpointEvent>,
}

impl SetpointProgram {
    pub fn new(mut events: Vec<SetpointEvent>) -> Self {
        events.sort_by_key(|e| (e.output(), e.at()));
        Self { events }
    }

    /// Unit steps on all `outputs` at sample 0.
    pub fn unit_steps(outputs: usize) -> Self {
        Self::new((0..outputs).map(|i| SetpointEvent::Step { output: i, at: 0, value: 1.0 }).collect())
    }

    pub fn events(&self) -> &[SetpointEvent] {
        &self.events
    }

    pub fn validate(&self, outputs: usize) -> Result<()> {
        for e in &self.events {
            if e.output() >= outputs {
                return Err(Error::invalid("setpoint", format!("output {} does not exist", e.output() + 1)));
            }
        }
        Ok(())
    }

    /// `(w_i(k), slope_i(k))`.
    pub fn level_and_slope(&self, output: usize, k: usize) -> (f64, f64) {
        let (mut level, mut slope, mut since) = (0.0, 0.0, 0usize);
        for e in self.events.iter().filter(|e| e.output() == output && e.at() <= k) {
            let reached = level + slope * (e.at() - since) as f64;
            match *e {
                SetpointEvent::Step { at, value, .. } => {
                    level = value;
                    slope = 0.0;
                    since = at;
                }
                SetpointEvent::Ramp { at, slope: s, .. } => {
                    level = reached;
                    slope = s;
                    since = at;
                }
            }
        }
        (level + slope * (k - since) as f64, slope)
    }

    pub fn value(&self, output: usize, k: usize) -> f64 {
        self.level_and_slope(output, k).0
    }

    /// Stacked window `w_i(k) + h·slope_i(k)` for `h = 1..=P`: constant
    /// setpoints are held and ramps extrapolated linearly.
    pub fn window(&self, outputs: usize, k: usize, prediction_horizon: usize) -> DVector<f64> {
        let mut w = DVector::zeros(outputs * prediction_horizon);
        for i in 0..outputs {
            let (level, slope) = self.level_and_slope(i, k);
            for h in 0..prediction_horizon {
                w[i * prediction_horizon + h] = level + slope * (h + 1) as f64;
            }
        }
        w
    }
}

/// Time-indexed record of a closed-loop run. Row `k` of every matrix is
/// sample `k`; `du` is the move applied at `k` and `u` the resulting input.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub setpoints: DMatrix<f64>,
    pub outputs: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub moves: DMatrix<f64>,
    pub disturbances: DMatrix<f64>,
    /// Sample at which the run was stopped because the output blew up.
    pub diverged_at: Option<usize>,
    pub qp_stats: Vec<QpStats>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.outputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// CSV with columns `k, w_i…, y_i…, u_j…, du_j…, v_i…`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let (p, m) = (self.outputs.ncols(), self.inputs.ncols());
        let mut header = vec!["k".to_string()];
        for (prefix, count) in [("w", p), ("y", p), ("u", m), ("du", m), ("v", p)] {
            header.extend((1..=count).map(|i| format!("{prefix}_{i}")));
        }
        let mut w = crate::io::versioned_writer(out, "trace")?;
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![k.to_string()];
            for mat in [&self.setpoints, &self.outputs, &self.inputs, &self.moves, &self.disturbances] {
                row.extend(mat.row(k).iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopConfig {
    pub length: usize,
    /// The run stops once any |y| exceeds this value or turns non-finite.
    pub divergence_limit: f64,
}

impl ClosedLoopConfig {
    pub fn new(length: usize) -> Self {
        Self { length, divergence_limit: 1e6 }
    }
}

/// Runs `spec` (built on the step-response `model`) against `plant` from rest.
/// Output disturbances, if given, are added to the measured outputs.
pub fn simulate_closed_loop(
    plant: &MimoPlant,
    model: &StepResponse,
    spec: &ControllerSpec,
    program: &SetpointProgram,
    disturbance: Option<&DMatrix<f64>>,
    config: &ClosedLoopConfig,
) -> Result<SimulationTrace> {
    let (p, m) = (plant.outputs(), plant.inputs());
    program.validate(p)?;
    if let Some(v) = disturbance {
        if v.ncols() != p || v.nrows() < config.length {
            return Err(Error::shape(format!(
                "disturbance is {}×{}, run needs at least {}×{p}",
                v.nrows(),
                v.ncols(),
                config.length
            )));
        }
    }
    let mut controller = DmcController::new(spec, model, &vec![0.0; p], &vec![0.0; m])?;
    run_with_controller(plant, &mut controller, program, disturbance, config)
}

/// Like [`simulate_closed_loop`] with a caller-built controller.
pub fn run_with_controller(
    plant: &MimoPlant,
    controller: &mut DmcController,
    program: &SetpointProgram,
    disturbance: Option<&DMatrix<f64>>,
    config: &ClosedLoopConfig,
) -> Result<SimulationTrace> {
    let (p, m) = (plant.outputs(), plant.inputs());
    let t = config.length;
    let ph = controller.spec().prediction_horizon;
    let mut trace = SimulationTrace {
        setpoints: DMatrix::zeros(t, p),
        outputs: DMatrix::zeros(t, p),
        inputs: DMatrix::zeros(t, m),
        moves: DMatrix::zeros(t, m),
        disturbances: DMatrix::zeros(t, p),
        diverged_at: None,
        qp_stats: Vec::new(),
    };
    let mut sim = PlantSimulator::new(plant);
    for k in 0..t {
        let mut y = sim.output();
        for i in 0..p {
            let v = disturbance.map_or(0.0, |d| d[(k, i)]);
            y[i] += v;
            trace.disturbances[(k, i)] = v;
            trace.setpoints[(k, i)] = program.value(i, k);
            trace.outputs[(k, i)] = y[i];
        }
        if y.iter().any(|v| !v.is_finite() || v.abs() > config.divergence_limit) {
            trace.diverged_at = Some(k);
            truncate(&mut trace, k + 1);
            return Ok(trace);
        }
        let window = program.window(p, k, ph);
        let step = controller.step(&y, &window)?;
        for j in 0..m {
            trace.moves[(k, j)] = step.du[j];
            trace.inputs[(k, j)] = step.u[j];
        }
        if let Some(stats) = step.qp {
            trace.qp_stats.push(stats);
        }
        sim.apply(&step.u);
    }
    Ok(trace)
}

fn truncate(trace: &mut SimulationTrace, len: usize) {
    for mat in [
        &mut trace.setpoints,
        &mut trace.outputs,
        &mut trace.inputs,
        &mut trace.moves,
        &mut trace.disturbances,
    ] {
        *mat = mat.rows(0, len).into_owned();
    }
}
