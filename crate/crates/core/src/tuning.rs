//! The two weight-tuning procedures: closed-loop step-response shaping and
//! optimal disturbance reduction. Both sweep the output/input weight ratio
//! `k_yu` over a grid with normalized weights and a fixed ratio `s/q`.

use std::io::Write;

use log::{debug, info};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::compare::{is_unstable, mismatch_run, MismatchScenario, Normalization};
use crate::dmc::ControllerSpec;
use crate::lti::{step_response, MimoPlant, StepResponse};
use crate::sim::{simulate_closed_loop, ClosedLoopConfig, SetpointProgram, SimulationTrace};
use crate::signal::SignalRange;
use crate::{Error, Result};

/// Overshoot reference floor as a fraction of the input range, used when the
/// steady-state input is near zero.
pub const OVERSHOOT_FLOOR: f64 = 1e-3;
/// Fine tuning scales each output weight within `[1 − x, 1 + x]`.
pub const FINE_TUNE_SPAN: f64 = 0.2;
/// An input "reaches" its bound when its overshoot is within this fraction.
pub const REACH_FRACTION: f64 = 0.1;

/// `points` values spaced logarithmically from `min` to `max` inclusive.
pub fn log_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![min],
        _ => {
            let ratio = (max / min).ln();
            (0..points)
                .map(|k| if k + 1 == points { max } else { min * (ratio * k as f64 / (points - 1) as f64).exp() })
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizedWeights {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub k_yu: f64,
}

/// `q_i = k_y/width_i²`, `r_j = k_u/width_j²`.
pub fn normalize_weights(
    output_ranges: &[SignalRange],
    input_ranges: &[SignalRange],
    k_y: f64,
    k_u: f64,
) -> Result<NormalizedWeights> {
    for (k, r) in output_ranges.iter().enumerate() {
        r.validate(&format!("output {} range", k + 1))?;
    }
    for (k, r) in input_ranges.iter().enumerate() {
        r.validate(&format!("input {} range", k + 1))?;
    }
    if !(k_y >= 0.0 && k_u > 0.0) {
        return Err(Error::invalid("k_y/k_u", format!("need k_y ≥ 0 and k_u > 0, got {k_y} and {k_u}")));
    }
    Ok(NormalizedWeights {
        q: output_ranges.iter().map(|r| k_y / r.width().powi(2)).collect(),
        r: input_ranges.iter().map(|r| k_u / r.width().powi(2)).collect(),
        k_yu: k_y / k_u,
    })
}

/// `s_i = λ_i² q_i`: the increment weight that makes output `i` follow a
/// first-order reference with time constant `λ_i` samples.
pub fn s_from_time_constants(time_constants: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if time_constants.len() != q.len() {
        return Err(Error::shape(format!("{} time constants for {} outputs", time_constants.len(), q.len())));
    }
    time_constants
        .iter()
        .zip(q)
        .enumerate()
        .map(|(i, (&lambda, &qi))| {
            if !(lambda > 0.0 && qi > 0.0) {
                Err(Error::invalid(format!("output {}", i + 1), format!("need λ > 0 and q > 0, got {lambda} and {qi}")))
            } else {
                Ok(lambda * lambda * qi)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpeedPreset {
    Slow,
    Medium,
    Fast,
}

impl SpeedPreset {
    /// Closed-loop time constant as a fraction of the open-loop response time.
    pub fn factor(self) -> f64 {
        match self {
            SpeedPreset::Slow => 0.8,
            SpeedPreset::Medium => 0.4,
            SpeedPreset::Fast => 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGoal {
    /// Desired closed-loop time constant per output, samples.
    pub time_constants: Vec<f64>,
    /// Relative overshoot bound per input; `inf` leaves an input unbounded.
    pub overshoot_bounds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_preset: Option<SpeedPreset>,
}

impl TuningGoal {
    pub fn new(time_constants: Vec<f64>, overshoot_bounds: Vec<f64>) -> Self {
        Self { time_constants, overshoot_bounds, speed_preset: None }
    }

    /// Time constants from a preset fraction of each output's open-loop
    /// response time.
    pub fn from_preset(plant: &MimoPlant, preset: SpeedPreset, overshoot_bounds: Vec<f64>) -> Result<Self> {
        let time_constants = open_loop_response_times(plant)?.iter().map(|t| (preset.factor() * t).max(1.0)).collect();
        Ok(Self { time_constants, overshoot_bounds, speed_preset: Some(preset) })
    }

    pub fn validate(&self, p: usize, m: usize) -> Result<()> {
        if self.time_constants.len() != p || self.overshoot_bounds.len() != m {
            return Err(Error::shape(format!(
                "goal has {} time constants and {} overshoot bounds for a {p}×{m} plant",
                self.time_constants.len(),
                self.overshoot_bounds.len()
            )));
        }
        if let Some(i) = self.time_constants.iter().position(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!("time constant {}", i + 1), "must be positive"));
        }
        if let Some(j) = self.overshoot_bounds.iter().position(|&b| !(b >= 0.0)) {
            return Err(Error::invalid(format!("overshoot bound {}", j + 1), "must be ≥ 0"));
        }
        Ok(())
    }

    fn has_finite_bound(&self) -> bool {
        self.overshoot_bounds.iter().any(|b| b.is_finite())
    }
}

fn long_step_response(plant: &MimoPlant) -> Result<StepResponse> {
    step_response(plant, 5000)
}

/// Samples until the slowest channel stays within 2% of its final value.
pub fn open_loop_settling_time(plant: &MimoPlant) -> Result<usize> {
    let sr = long_step_response(plant)?;
    let mut worst = 1;
    for i in 0..sr.outputs() {
        for j in 0..sr.inputs() {
            let c = sr.channel(i, j);
            let fin = *c.last().expect("non-empty");
            let band = 0.02 * fin.abs();
            if band == 0.0 {
                continue;
            }
            let last_out = c.iter().rposition(|v| (v - fin).abs() > band).map_or(0, |k| k + 1);
            worst = worst.max(last_out + 1);
        }
    }
    Ok(worst)
}

/// Per output: samples from the first response to 63.2% of the final value
/// of its largest-gain channel.
pub fn open_loop_response_times(plant: &MimoPlant) -> Result<Vec<f64>> {
    let sr = long_step_response(plant)?;
    (0..sr.outputs())
        .map(|i| {
            let j = (0..sr.inputs())
                .max_by(|&a, &b| {
                    let ga = sr.channel(i, a).last().unwrap().abs();
                    let gb = sr.channel(i, b).last().unwrap().abs();
                    ga.partial_cmp(&gb).expect("finite gains")
                })
                .expect("at least one input");
            let c = sr.channel(i, j);
            let fin = *c.last().unwrap();
            if fin == 0.0 {
                return Err(Error::invalid(format!("output {}", i + 1), "has zero static gain"));
            }
            let start = c.iter().position(|v| *v != 0.0).unwrap_or(0);
            let rise = c.iter().position(|v| v / fin >= 0.632).unwrap_or(c.len() - 1);
            Ok((rise - start + 1) as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTestMetrics {
    /// Relative overshoot per input.
    pub overshoot: Vec<f64>,
    /// Samples until each output stays within 2% of the step; `inf` if never.
    pub settle_time: Vec<f64>,
    /// RMS of `y − w` per output over the whole test.
    pub tracking_rms: Vec<f64>,
    /// Every output settled within the first 90% of the window.
    pub settled: bool,
}

/// `(max_k |u(k)| − |u(∞)|)` relative to `|u(∞)|`, or to the floor
/// `OVERSHOOT_FLOOR·width` when the final value is smaller than that.
pub fn input_overshoot(series: &[f64], range: &SignalRange) -> f64 {
    let fin = series.last().copied().unwrap_or(0.0).abs();
    let peak = series.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = OVERSHOOT_FLOOR * range.width();
    (peak - fin) / if fin > floor { fin } else { floor }
}

/// Unit steps on every setpoint at sample 0 against the true plant.
pub fn run_step_test(
    plant: &MimoPlant,
    model: &StepResponse,
    spec: &ControllerSpec,
    input_ranges: &[SignalRange],
    length: usize,
) -> Result<(SimulationTrace, StepTestMetrics)> {
    let (p, m) = (plant.outputs(), plant.inputs());
    if input_ranges.len() != m {
        return Err(Error::shape(format!("{} input ranges for {m} inputs", input_ranges.len())));
    }
    let config = ClosedLoopConfig { length, divergence_limit: 1e6 };
    let trace = simulate_closed_loop(plant, model, spec, &SetpointProgram::unit_steps(p), None, &config)?;
    let unit = vec![SignalRange { min: 0.0, max: 1.0 }; p];
    if let Some(k) = trace.diverged_at {
        return Err(Error::Unstable { sample: k });
    }
    if is_unstable(&trace.outputs, &unit) {
        return Err(Error::Unstable { sample: length - 1 });
    }
    let overshoot = (0..m)
        .map(|j| input_overshoot(trace.inputs.column(j).as_slice(), &input_ranges[j]))
        .collect();
    let mut settle_time = Vec::with_capacity(p);
    let mut tracking_rms = Vec::with_capacity(p);
    for i in 0..p {
        let col = trace.outputs.column(i);
        let last_out = col.iter().rposition(|y| (y - 1.0).abs() > 0.02);
        settle_time.push(match last_out {
            Some(k) if k + 1 == length => f64::INFINITY,
            Some(k) => (k + 1) as f64,
            None => 0.0,
        });
        tracking_rms.push((col.iter().map(|y| (y - 1.0).powi(2)).sum::<f64>() / length as f64).sqrt());
    }
    let settled = settle_time.iter().all(|&t| t <= 0.9 * length as f64);
    Ok((trace, StepTestMetrics { overshoot, settle_time, tracking_rms, settled }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointStatus {
    Feasible,
    BoundViolated,
    NotSettled,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub k_yu: f64,
    pub q: Vec<f64>,
    pub s: Vec<f64>,
    pub status: PointStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<StepTestMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i_sigma: Option<f64>,
}

impl SweepPoint {
    pub fn feasible(&self) -> bool {
        self.status == PointStatus::Feasible
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FineTuneStep {
    pub output: usize,
    pub scale: f64,
    pub reached: usize,
    pub feasible: bool,
    pub applied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Procedure {
    StepResponse,
    Disturbance,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningReport {
    pub procedure: Procedure,
    pub goal: TuningGoal,
    pub points: Vec<SweepPoint>,
    pub selected: usize,
    pub selected_k_yu: f64,
    /// The sweep stopped because the next point broke an overshoot bound.
    pub bound_limited: bool,
    pub fine_tune: Vec<FineTuneStep>,
    pub output_scales: Vec<f64>,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub final_metrics: StepTestMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_i_sigma: Option<f64>,
}

/// Everything a sweep needs: the true plant, the controller's model, the
/// fixed part of the controller settings and the normalization ranges.
#[derive(Debug, Clone)]
pub struct TuningSetup {
    pub plant: MimoPlant,
    pub model: StepResponse,
    /// Horizons, delays and bounds; its weights are replaced at every point.
    pub base: ControllerSpec,
    pub ranges: Normalization,
    pub goal: TuningGoal,
    pub grid: Vec<f64>,
    pub step_test_length: usize,
}

impl TuningSetup {
    /// Uses the plant's own step response as the model, the default
    /// 25-point grid over [1e-2, 1e3] and a step-test window of ten open-loop
    /// settling times.
    pub fn new(plant: MimoPlant, base: ControllerSpec, ranges: Normalization, goal: TuningGoal) -> Result<Self> {
        let model = step_response(&plant, base.model_horizon)?;
        let settle = open_loop_settling_time(&plant)?;
        let step_test_length = (10 * settle).max(2 * base.model_horizon);
        let setup = Self { plant, model, base, ranges, goal, grid: log_grid(1e-2, 1e3, 25), step_test_length };
        setup.validate()?;
        Ok(setup)
    }

    pub fn with_grid(mut self, grid: Vec<f64>) -> Result<Self> {
        self.grid = grid;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (p, m) = (self.plant.outputs(), self.plant.inputs());
        self.goal.validate(p, m)?;
        if self.ranges.outputs.len() != p || self.ranges.inputs.len() != m {
            return Err(Error::shape(format!("ranges do not match the {p}×{m} plant")));
        }
        if self.grid.is_empty() || self.grid.iter().any(|&k| !(k > 0.0)) || self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid", "needs positive, strictly increasing k_yu values"));
        }
        if self.base.outputs() != p || self.base.inputs() != m {
            return Err(Error::shape("base controller settings do not match the plant"));
        }
        Ok(())
    }

    /// Controller settings at ratio `k_yu` with per-output weight scales.
    pub fn spec_at(&self, k_yu: f64, scales: &[f64]) -> Result<ControllerSpec> {
        let w = normalize_weights(&self.ranges.outputs, &self.ranges.inputs, k_yu, 1.0)?;
        let q: Vec<f64> = w.q.iter().zip(scales).map(|(q, s)| q * s).collect();
        let s = s_from_time_constants(&self.goal.time_constants, &q)?;
        let mut spec = self.base.clone();
        spec.q = q;
        spec.r = w.r;
        spec.s = s;
        spec.reference_lambda = None;
        Ok(spec)
    }

    fn step_test(&self, spec: &ControllerSpec) -> Result<Option<StepTestMetrics>> {
        match run_step_test(&self.plant, &self.model, spec, &self.ranges.inputs, self.step_test_length) {
            Ok((_, m)) => Ok(Some(m)),
            Err(Error::Unstable { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn status(&self, metrics: Option<&StepTestMetrics>) -> PointStatus {
        match metrics {
            None => PointStatus::Unstable,
            Some(m) if !m.settled => PointStatus::NotSettled,
            Some(m) if m.overshoot.iter().zip(&self.goal.overshoot_bounds).any(|(o, b)| *o > b + 1e-9) => {
                PointStatus::BoundViolated
            }
            Some(_) => PointStatus::Feasible,
        }
    }

    fn evaluate(&self, k_yu: f64, disturbance: Option<&DMatrix<f64>>) -> Result<SweepPoint> {
        let ones = vec![1.0; self.plant.outputs()];
        let spec = self.spec_at(k_yu, &ones)?;
        let metrics = self.step_test(&spec)?;
        let mut status = self.status(metrics.as_ref());
        let i_sigma = match disturbance {
            Some(v) => {
                let i = self.i_sigma(&spec, v)?;
                if i.is_none() {
                    status = PointStatus::Unstable;
                }
                i
            }
            None => None,
        };
        debug!("k_yu {k_yu:.4e}: {status:?}");
        Ok(SweepPoint { k_yu, q: spec.q, s: spec.s, status, metrics, i_sigma })
    }

    /// Mean normalized output standard deviation under `v`, `None` if the
    /// loop is unstable.
    pub fn i_sigma(&self, spec: &ControllerSpec, v: &DMatrix<f64>) -> Result<Option<f64>> {
        let (_, m) = mismatch_run(&self.plant, &self.model, spec, &MismatchScenario::nominal(), v, &self.ranges)?;
        Ok(m.stable.then(|| m.j_e / self.plant.outputs() as f64))
    }

    fn reached(&self, metrics: &StepTestMetrics) -> usize {
        metrics
            .overshoot
            .iter()
            .zip(&self.goal.overshoot_bounds)
            .filter(|(o, b)| b.is_finite() && **o >= (1.0 - REACH_FRACTION) * **b)
            .count()
    }

    fn feasible_metrics(&self, k_yu: f64, scales: &[f64]) -> Result<Option<StepTestMetrics>> {
        let spec = self.spec_at(k_yu, scales)?;
        let metrics = self.step_test(&spec)?;
        Ok(match self.status(metrics.as_ref()) {
            PointStatus::Feasible => metrics,
            _ => None,
        })
    }

    /// Per-output refinement of `q_i` (with `s_i` following) within ±20% until
    /// at least ⌈m/2⌉ inputs are within 10% of their overshoot bound.
    fn fine_tune(&self, k_yu: f64, start: StepTestMetrics) -> Result<(Vec<f64>, Vec<FineTuneStep>, StepTestMetrics)> {
        let (p, m) = (self.plant.outputs(), self.plant.inputs());
        let mut scales = vec![1.0; p];
        let mut steps = Vec::new();
        let mut current = start;
        if !self.goal.has_finite_bound() {
            return Ok((scales, steps, current));
        }
        let target = m.div_ceil(2);
        for i in 0..p {
            if self.reached(&current) >= target {
                break;
            }
            let mut trial = scales.clone();
            let mut candidates: Vec<(f64, StepTestMetrics)> = Vec::new();

            // Largest feasible upward scale by bisection.
            trial[i] = scales[i] * (1.0 + FINE_TUNE_SPAN);
            if let Some(mt) = self.feasible_metrics(k_yu, &trial)? {
                candidates.push((trial[i], mt));
            } else {
                let (mut lo, mut hi) = (scales[i], scales[i] * (1.0 + FINE_TUNE_SPAN));
                let mut best: Option<(f64, StepTestMetrics)> = None;
                for _ in 0..12 {
                    let mid = 0.5 * (lo + hi);
                    trial[i] = mid;
                    match self.feasible_metrics(k_yu, &trial)? {
                        Some(mt) => {
                            lo = mid;
                            best = Some((mid, mt));
                        }
                        None => hi = mid,
                    }
                }
                candidates.extend(best);
            }
            for down in [1.0 - FINE_TUNE_SPAN / 2.0, 1.0 - FINE_TUNE_SPAN] {
                trial[i] = scales[i] * down;
                if let Some(mt) = self.feasible_metrics(k_yu, &trial)? {
                    candidates.push((trial[i], mt));
                }
            }
            let base_reached = self.reached(&current);
            let mut chosen: Option<usize> = None;
            for (k, (_, mt)) in candidates.iter().enumerate() {
                let r = self.reached(mt);
                if r > chosen.map_or(base_reached, |c| self.reached(&candidates[c].1)) {
                    chosen = Some(k);
                }
            }
            for (k, (scale, mt)) in candidates.iter().enumerate() {
                steps.push(FineTuneStep { output: i, scale: *scale, reached: self.reached(mt), feasible: true, applied: chosen == Some(k) });
            }
            if let Some(c) = chosen {
                let (scale, mt) = candidates.swap_remove(c);
                scales[i] = scale;
                current = mt;
            }
        }
        Ok((scales, steps, current))
    }

    fn finish(
        &self,
        procedure: Procedure,
        points: Vec<SweepPoint>,
        selected: usize,
        bound_limited: bool,
        disturbance: Option<&DMatrix<f64>>,
    ) -> Result<TuningReport> {
        let k_yu = points[selected].k_yu;
        let start = points[selected].metrics.clone().expect("feasible points carry metrics");
        let (scales, fine_tune, final_metrics) = self.fine_tune(k_yu, start)?;
        let spec = self.spec_at(k_yu, &scales)?;
        let final_i_sigma = match disturbance {
            Some(v) => self.i_sigma(&spec, v)?,
            None => None,
        };
        info!("selected k_yu = {k_yu:.4e} (point {} of {})", selected + 1, points.len());
        Ok(TuningReport {
            procedure,
            goal: self.goal.clone(),
            points,
            selected,
            selected_k_yu: k_yu,
            bound_limited,
            fine_tune,
            output_scales: scales,
            q: spec.q,
            r: spec.r,
            s: spec.s,
            final_metrics,
            final_i_sigma,
        })
    }

    fn no_feasible(points: &[SweepPoint]) -> Error {
        let first = &points[0];
        let detail = match &first.metrics {
            Some(m) => format!("overshoot {:?} at k_yu = {:.4e} ({:?})", m.overshoot, first.k_yu, first.status),
            None => format!("unstable at k_yu = {:.4e}", first.k_yu),
        };
        Error::NoFeasibleTuning(format!("no grid point meets the goal; smallest point: {detail}"))
    }
}

/// Sweeps `k_yu` upward and keeps the last feasible point before the first
/// one that breaks an overshoot bound or destabilizes the loop, then fine
/// tunes the output weights.
pub fn tune_step_response(setup: &TuningSetup) -> Result<TuningReport> {
    let points = setup.grid.iter().map(|&k| setup.evaluate(k, None)).collect::<Result<Vec<_>>>()?;
    let stop = points
        .iter()
        .position(|p| matches!(p.status, PointStatus::BoundViolated | PointStatus::Unstable))
        .unwrap_or(points.len());
    let selected = points[..stop].iter().rposition(SweepPoint::feasible).ok_or_else(|| TuningSetup::no_feasible(&points))?;
    setup.finish(Procedure::StepResponse, points, selected, stop < setup.grid.len(), None)
}

/// Source of the disturbance record for the disturbance-reduction procedure.
#[derive(Debug, Clone)]
pub enum DisturbanceSource {
    /// A recorded or estimated T×p realization.
    Realization(DMatrix<f64>),
    /// A generator; one realization of `length` samples is drawn and reused
    /// at every grid point.
    Generator { disturbance: crate::lti::ArmaDisturbance, length: usize },
}

impl DisturbanceSource {
    pub fn realize(&self, outputs: usize) -> DMatrix<f64> {
        match self {
            DisturbanceSource::Realization(v) => v.clone(),
            DisturbanceSource::Generator { disturbance, length } => disturbance.generate_outputs(outputs, *length),
        }
    }
}

/// Minimizes the mean normalized output standard deviation over the
/// feasible grid points (ties go to the smallest `k_yu`), then fine tunes.
pub fn tune_disturbance(setup: &TuningSetup, disturbance: &DisturbanceSource) -> Result<TuningReport> {
    let v = disturbance.realize(setup.plant.outputs());
    if v.ncols() != setup.plant.outputs() {
        return Err(Error::shape(format!("disturbance has {} columns for {} outputs", v.ncols(), setup.plant.outputs())));
    }
    let points = setup.grid.iter().map(|&k| setup.evaluate(k, Some(&v))).collect::<Result<Vec<_>>>()?;
    let mut selected: Option<usize> = None;
    for (k, p) in points.iter().enumerate() {
        if !p.feasible() {
            continue;
        }
        let value = p.i_sigma.expect("feasible points are stable");
        if selected.is_none_or(|s| value < points[s].i_sigma.unwrap()) {
            selected = Some(k);
        }
    }
    let selected = selected.ok_or_else(|| TuningSetup::no_feasible(&points))?;
    setup.finish(Procedure::Disturbance, points, selected, false, Some(&v))
}

impl TuningReport {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Columns `k_yu, I_sigma, overshoot_1.., feasible, status`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.goal.overshoot_bounds.len();
        let mut w = crate::io::versioned_writer(out, "tuning")?;
        let mut header = vec!["k_yu".to_string(), "I_sigma".to_string()];
        header.extend((1..=m).map(|j| format!("overshoot_{j}")));
        header.extend(["feasible".to_string(), "status".to_string()]);
        w.write_record(&header)?;
        for p in &self.points {
            let mut row = vec![p.k_yu.to_string(), p.i_sigma.map_or(String::new(), |v| v.to_string())];
            match &p.metrics {
                Some(mt) => row.extend(mt.overshoot.iter().map(|o| o.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), m)),
            }
            row.push(p.feasible().to_string());
            row.push(format!("{:?}", p.status));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plot data: `I_sigma` against `k_yu` for every stable point.
    pub fn write_curve<W: Write>(&self, out: W) -> Result<()> {
        let pts: Vec<(f64, f64)> = self.points.iter().filter_map(|p| p.i_sigma.map(|i| (p.k_yu, i))).collect();
        crate::io::write_plot_data(out, "I_sigma vs k_yu", ["k_yu", "I_sigma"], &pts)
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:?} tuning: selected k_yu = {:.6e} (point {} of {}){}\n",
            self.procedure,
            self.selected_k_yu,
            self.selected + 1,
            self.points.len(),
            if self.bound_limited { ", bound-limited" } else { "" }
        );
        s.push_str(&format!("  q = {:?}\n  r = {:?}\n  s = {:?}\n", self.q, self.r, self.s));
        s.push_str(&format!("  overshoot = {:?}\n", self.final_metrics.overshoot));
        if let Some(i) = self.final_i_sigma {
            s.push_str(&format!("  I_sigma = {i:.6}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lti::SisoChannel;

    #[test]
    fn grid_endpoints_and_spacing() {
        let g = log_grid(1e-2, 1e3, 6);
        assert_eq!(g.len(), 6);
        assert_eq!(g[0], 1e-2);
        assert_eq!(g[5], 1e3);
        for w in g.windows(2) {
            assert!((w[1] / w[0] - 10.0).abs() < 1e-9);
        }
        assert_eq!(log_grid(2.0, 5.0, 1), vec![2.0]);
    }

    #[test]
    fn normalization_examples() {
        let unit = SignalRange::new(0.0, 1.0).unwrap();
        let w = normalize_weights(&[unit, unit], &[unit], 1.0, 1.0).unwrap();
        assert_eq!((w.q.clone(), w.r.clone()), (vec![1.0, 1.0], vec![1.0]));
        let w = normalize_weights(&[SignalRange::new(0.0, 10.0).unwrap()], &[unit], 50.0, 1.0).unwrap();
        assert_eq!(w.q, vec![0.5]);
        assert_eq!(w.k_yu, 50.0);
        assert!(normalize_weights(&[SignalRange { min: 1.0, max: 1.0 }], &[unit], 1.0, 1.0).is_err());
    }

    #[test]
    fn doubling_ranges_quarters_weights() {
        let ys = [SignalRange::new(-1.0, 3.0).unwrap(), SignalRange::new(0.0, 0.5).unwrap()];
        let us = [SignalRange::new(2.0, 7.0).unwrap()];
        let dbl = |r: &SignalRange| SignalRange::new(2.0 * r.min, 2.0 * r.max).unwrap();
        let a = normalize_weights(&ys, &us, 3.0, 0.7).unwrap();
        let b = normalize_weights(&ys.map(|r| dbl(&r)), &us.map(|r| dbl(&r)), 3.0, 0.7).unwrap();
        for (x, y) in a.q.iter().chain(&a.r).zip(b.q.iter().chain(&b.r)) {
            assert!((x / 4.0 - y).abs() < 1e-15 * x);
        }
    }

    #[test]
    fn increment_weight_examples() {
        assert_eq!(s_from_time_constants(&[4.0, 2.0, 1.0], &[50.0, 50.0, 1.0]).unwrap(), vec![800.0, 200.0, 1.0]);
        assert!(s_from_time_constants(&[0.0], &[1.0]).is_err());
        assert!(s_from_time_constants(&[1.0], &[-1.0]).is_err());
    }

    #[test]
    fn time_constant_round_trip() {
        let ranges = [SignalRange::new(0.0, 3.0).unwrap(), SignalRange::new(-2.0, 2.0).unwrap()];
        let w = normalize_weights(&ranges, &ranges, 7.3, 1.0).unwrap();
        let lambdas = [3.7, 0.4];
        let s = s_from_time_constants(&lambdas, &w.q).unwrap();
        for i in 0..2 {
            assert!(((s[i] / w.q[i]).sqrt() - lambdas[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn overshoot_definition() {
        let r = SignalRange::new(-1.0, 1.0).unwrap();
        assert!((input_overshoot(&[0.0, 3.0, 2.0], &r) - 0.5).abs() < 1e-15);
        assert_eq!(input_overshoot(&[0.0, 0.5, 1.0], &r), 0.0);
        // near-zero final value: measured against 1e-3 of the range width
        assert!((input_overshoot(&[0.0, 0.01, 0.0], &r) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn heavy_move_suppression_gives_monotone_input() {
        let ch = SisoChannel::pure_gain(1.0, 1).unwrap();
        let plant = MimoPlant::new(vec![vec![ch]]).unwrap();
        let model = step_response(&plant, 10).unwrap();
        let spec = ControllerSpec::new(10, 10, 3, vec![1.0], vec![100.0], vec![0.0], vec![1]);
        let (trace, m) = run_step_test(&plant, &model, &spec, &[SignalRange::new(0.0, 1.0).unwrap()], 600).unwrap();
        assert!(trace.inputs.column(0).as_slice().windows(2).all(|w| w[1] >= w[0] - 1e-12));
        assert!(m.overshoot[0].abs() < 1e-9);
        assert!(m.settled);
    }

    fn process_a_setup(bounds: Vec<f64>) -> TuningSetup {
        let r = SignalRange::new(0.0, 1.0).unwrap();
        TuningSetup::new(
            fixtures::process_a(),
            fixtures::process_a_spec(),
            Normalization::new(vec![r; 2], vec![r; 2]).unwrap(),
            TuningGoal::new(vec![4.0, 2.0], bounds),
        )
        .unwrap()
    }

    fn spearman(x: &[f64], y: &[f64]) -> f64 {
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            let mut r = vec![0.0; v.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let (rx, ry) = (rank(x), rank(y));
        let n = x.len() as f64;
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b).powi(2)).sum();
        1.0 - 6.0 * d2 / (n * (n * n - 1.0))
    }

    #[test]
    fn overshoot_grows_with_ratio() {
        let setup = process_a_setup(vec![f64::INFINITY; 2]).with_grid(log_grid(1e-2, 1e3, 10)).unwrap();
        let points: Vec<SweepPoint> = setup.grid.iter().map(|&k| setup.evaluate(k, None).unwrap()).collect();
        let ks: Vec<f64> = points.iter().map(|p| p.k_yu).collect();
        for j in 0..2 {
            let os: Vec<f64> = points.iter().map(|p| p.metrics.as_ref().unwrap().overshoot[j]).collect();
            let rho = spearman(&ks, &os);
            assert!(rho > 0.9, "input {j}: rho {rho}, overshoots {os:?}");
        }
    }

    #[test]
    fn unbounded_goal_selects_largest_ratio() {
        let setup = process_a_setup(vec![f64::INFINITY; 2]).with_grid(log_grid(1e-2, 1e3, 6)).unwrap();
        let rep = tune_step_response(&setup).unwrap();
        assert_eq!(rep.selected, 5);
        assert!(!rep.bound_limited);
        assert!(rep.fine_tune.is_empty());
        assert_eq!(rep.output_scales, vec![1.0, 1.0]);
    }

    #[test]
    fn step_selection_matches_exhaustive_grid() {
        let setup = process_a_setup(vec![0.3, 0.3]).with_grid(log_grid(1e-2, 1e3, 12)).unwrap();
        let rep = tune_step_response(&setup).unwrap();
        // independent pass over the grid
        let mut expect = None;
        for &k in &setup.grid {
            let spec = setup.spec_at(k, &[1.0, 1.0]).unwrap();
            let (_, m) = run_step_test(&setup.plant, &setup.model, &spec, &setup.ranges.inputs, setup.step_test_length).unwrap();
            if m.overshoot.iter().any(|&o| o > 0.3 + 1e-9) {
                break;
            }
            if m.settled {
                expect = Some(k);
            }
        }
        assert_eq!(Some(rep.selected_k_yu), expect);
        assert!(rep.bound_limited);
        for o in &rep.final_metrics.overshoot {
            assert!(*o <= 0.3 + 1e-9);
        }
        assert!(rep.output_scales.iter().all(|s| (0.8..=1.2).contains(s)));
    }

    #[test]
    fn reports_are_deterministic_and_serialize() {
        let setup = process_a_setup(vec![0.5, 0.5]).with_grid(log_grid(1e-1, 1e2, 5)).unwrap();
        let dist = DisturbanceSource::Generator { disturbance: fixtures::comparison_disturbance(3), length: 400 };
        let a = tune_disturbance(&setup, &dist).unwrap();
        let b = tune_disturbance(&setup, &dist).unwrap();
        assert_eq!(a, b);
        let text = a.to_toml().unwrap();
        assert!(text.contains("procedure = \"disturbance\""));
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with("# dmc-tuning v1\nk_yu,I_sigma,overshoot_1,overshoot_2,feasible,status\n"));
        assert_eq!(csv.lines().count(), 2 + 5);
        let mut curve = Vec::new();
        a.write_curve(&mut curve).unwrap();
        assert_eq!(String::from_utf8(curve).unwrap().lines().count(), 2 + 5);
    }

    #[test]
    fn zero_disturbance_falls_to_smallest_feasible_ratio() {
        let setup = process_a_setup(vec![f64::INFINITY; 2]).with_grid(log_grid(1e-1, 1e2, 4)).unwrap();
        let rep = tune_disturbance(&setup, &DisturbanceSource::Realization(DMatrix::zeros(300, 2))).unwrap();
        assert!(rep.points.iter().all(|p| p.i_sigma == Some(0.0)));
        let first = rep.points.iter().position(SweepPoint::feasible).unwrap();
        assert_eq!(rep.selected, first);
    }

    #[test]
    fn infeasible_goal_is_reported() {
        let setup = process_a_setup(vec![0.0, 0.0]).with_grid(vec![10.0, 100.0]).unwrap();
        assert!(matches!(tune_step_response(&setup), Err(Error::NoFeasibleTuning(_))));
    }

    #[test]
    fn presets_scale_open_loop_response() {
        let plant = fixtures::process_c();
        let slow = TuningGoal::from_preset(&plant, SpeedPreset::Slow, vec![1.0; 2]).unwrap();
        let fast = TuningGoal::from_preset(&plant, SpeedPreset::Fast, vec![1.0; 2]).unwrap();
        let t = open_loop_response_times(&plant).unwrap();
        // first-order lag with pole 0.93: 63% rise after about 14 samples
        assert!((t[0] - 14.0).abs() <= 1.0, "{t:?}");
        assert!((slow.time_constants[0] / fast.time_constants[0] - 4.0).abs() < 1e-12);
    }
}
