//! Performance and robustness comparison of controller families: the
//! normalized control-error and control-action indices, their trade-off
//! frontiers, and model-mismatch runs.

use std::io::Write;

use log::error;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::dmc::ControllerSpec;
use crate::lti::{MimoPlant, StepResponse};
use crate::sim::{simulate_closed_loop, ClosedLoopConfig, SetpointProgram, SimulationTrace};
use crate::signal::SignalRange;
use crate::{Error, Result};

/// Ranges used to normalize output and input deviations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Normalization {
    pub outputs: Vec<SignalRange>,
    pub inputs: Vec<SignalRange>,
}

impl Normalization {
    pub fn new(outputs: Vec<SignalRange>, inputs: Vec<SignalRange>) -> Result<Self> {
        for (k, r) in outputs.iter().enumerate() {
            r.validate(&format!("output {} range", k + 1))?;
        }
        for (k, r) in inputs.iter().enumerate() {
            r.validate(&format!("input {} range", k + 1))?;
        }
        Ok(Self { outputs, inputs })
    }

    /// Width-one ranges `[0, 1]`.
    pub fn unit(outputs: usize, inputs: usize) -> Self {
        let r = SignalRange { min: 0.0, max: 1.0 };
        Self { outputs: vec![r; outputs], inputs: vec![r; inputs] }
    }

    fn check(&self, p: usize, m: usize) -> Result<()> {
        if self.outputs.len() != p || self.inputs.len() != m {
            return Err(Error::shape(format!(
                "{} output and {} input ranges for a {p}×{m} loop",
                self.outputs.len(),
                self.inputs.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub j_e: f64,
    pub j_u: f64,
    pub j_w: f64,
    pub sigma_y: Vec<f64>,
    pub sigma_u: Vec<f64>,
    pub stable: bool,
}

impl RunMetrics {
    fn unstable(p: usize, m: usize) -> Self {
        Self {
            j_e: f64::INFINITY,
            j_u: f64::INFINITY,
            j_w: f64::INFINITY,
            sigma_y: vec![f64::INFINITY; p],
            sigma_u: vec![f64::INFINITY; m],
            stable: false,
        }
    }
}

/// Population standard deviation.
pub fn std_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// True if any output is non-finite, leaves ±10⁶ ranges, or its sample
/// increments grow steadily over the last fifth of the record: the four
/// block RMS values of the increments rise strictly and the last is at least
/// twice the first. The growth test needs blocks of at least five samples
/// and a last-block RMS above 1e-3 of the range width, so small transients
/// such as model-truncation effects do not count.
pub fn is_unstable(outputs: &DMatrix<f64>, ranges: &[SignalRange]) -> bool {
    let t = outputs.nrows();
    for (i, r) in ranges.iter().enumerate() {
        let col = outputs.column(i);
        if col.iter().any(|v| !v.is_finite() || v.abs() > 1e6 * r.width()) {
            return true;
        }
        let block = t / 20;
        if block < 5 {
            continue;
        }
        let start = t - 4 * block;
        let rms: Vec<f64> = (0..4)
            .map(|b| {
                let s = start + b * block;
                let sq: f64 = (s.max(1)..s + block).map(|k| (col[k] - col[k - 1]).powi(2)).sum();
                (sq / block as f64).sqrt()
            })
            .collect();
        let visible = rms[3] > 1e-3 * r.width();
        if visible && rms.windows(2).all(|w| w[1] > w[0]) && rms[3] >= 2.0 * rms[0] {
            return true;
        }
    }
    false
}

/// Normalized indices over the trace with its first 10% discarded.
pub fn run_metrics(trace: &SimulationTrace, ranges: &Normalization) -> Result<RunMetrics> {
    let (p, m) = (trace.outputs.ncols(), trace.inputs.ncols());
    ranges.check(p, m)?;
    if trace.diverged() || is_unstable(&trace.outputs, &ranges.outputs) {
        return Ok(RunMetrics::unstable(p, m));
    }
    let skip = trace.len() / 10;
    let tail = trace.len() - skip;
    let sigma = |mat: &DMatrix<f64>, c: usize| std_dev(mat.column(c).rows(skip, tail).iter().copied());
    let sigma_y: Vec<f64> = (0..p).map(|i| sigma(&trace.outputs, i)).collect();
    let sigma_u: Vec<f64> = (0..m).map(|j| sigma(&trace.inputs, j)).collect();
    let j_e = sigma_y.iter().zip(&ranges.outputs).map(|(s, r)| s / r.width()).sum::<f64>();
    let j_u = sigma_u.iter().zip(&ranges.inputs).map(|(s, r)| s / r.width()).sum::<f64>();
    Ok(RunMetrics { j_e, j_u, j_w: j_e + j_u, sigma_y, sigma_u, stable: true })
}

/// Gain-only plant/model mismatch: the true plant is the nominal one with
/// every gain multiplied by `gain_scale`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MismatchScenario {
    pub gain_scale: f64,
    pub label: String,
}

impl MismatchScenario {
    pub fn new(gain_scale: f64, label: impl Into<String>) -> Result<Self> {
        if !(gain_scale > 0.0 && gain_scale.is_finite()) {
            return Err(Error::invalid("gain_scale", format!("must be positive, got {gain_scale}")));
        }
        Ok(Self { gain_scale, label: label.into() })
    }

    pub fn nominal() -> Self {
        Self { gain_scale: 1.0, label: "nominal".into() }
    }
}

/// Disturbance-rejection run with the controller built on `model` and the
/// plant scaled per `scenario`. Setpoints stay at zero.
pub fn mismatch_run(
    plant: &MimoPlant,
    model: &StepResponse,
    spec: &ControllerSpec,
    scenario: &MismatchScenario,
    disturbance: &DMatrix<f64>,
    ranges: &Normalization,
) -> Result<(SimulationTrace, RunMetrics)> {
    if !(scenario.gain_scale > 0.0) {
        return Err(Error::invalid("gain_scale", format!("must be positive, got {}", scenario.gain_scale)));
    }
    let truth = plant.with_gain_scale(scenario.gain_scale);
    let limit = 1e6 * ranges.outputs.iter().map(SignalRange::width).fold(0.0, f64::max);
    let config = ClosedLoopConfig { length: disturbance.nrows(), divergence_limit: limit };
    let trace = simulate_closed_loop(&truth, model, spec, &SetpointProgram::default(), Some(disturbance), &config)?;
    let metrics = run_metrics(&trace, ranges)?;
    Ok((trace, metrics))
}

/// One tuning family: a labelled list of controller settings, each with the
/// swept parameter value it was generated from.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodFamily {
    pub label: String,
    pub parameters: Vec<f64>,
    pub specs: Vec<ControllerSpec>,
}

impl MethodFamily {
    pub fn new(label: impl Into<String>, parameters: Vec<f64>, specs: Vec<ControllerSpec>) -> Result<Self> {
        if specs.is_empty() || parameters.len() != specs.len() {
            return Err(Error::invalid(
                "family",
                format!("needs a non-empty spec list with one parameter each, got {} and {}", specs.len(), parameters.len()),
            ));
        }
        Ok(Self { label: label.into(), parameters, specs })
    }

    /// Builds a family by mapping every grid value through `make`.
    pub fn from_grid(label: impl Into<String>, grid: &[f64], make: impl Fn(f64) -> ControllerSpec) -> Result<Self> {
        Self::new(label, grid.to_vec(), grid.iter().map(|&g| make(g)).collect())
    }

    /// This family followed by `other`'s settings.
    pub fn union(&self, other: &MethodFamily) -> Self {
        let mut out = self.clone();
        out.parameters.extend_from_slice(&other.parameters);
        out.specs.extend(other.specs.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    First,
    Second,
    Tie,
    NoOverlap,
}

impl Verdict {
    fn from_counts(first: usize, second: usize, points: usize) -> Self {
        match (points, first.cmp(&second)) {
            (0, _) => Verdict::NoOverlap,
            (_, std::cmp::Ordering::Greater) => Verdict::First,
            (_, std::cmp::Ordering::Less) => Verdict::Second,
            _ => Verdict::Tie,
        }
    }
}

/// Point-by-point comparison of two frontiers on a shared abscissa.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedComparison {
    pub points: usize,
    pub first_better: usize,
    pub second_better: usize,
    pub ties: usize,
    pub verdict: Verdict,
}

impl MatchedComparison {
    /// Share of matched points where the first method is on or below the
    /// second.
    pub fn first_on_or_below(&self) -> f64 {
        (self.first_better + self.ties) as f64 / self.points.max(1) as f64
    }

    pub fn second_on_or_below(&self) -> f64 {
        (self.second_better + self.ties) as f64 / self.points.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdicts {
    /// Control error at equal control action.
    pub matched_action: MatchedComparison,
    /// Control action at equal control error.
    pub matched_error: MatchedComparison,
    /// Runs of each method dominated by some run of the other.
    pub dominated_first: usize,
    pub dominated_second: usize,
    pub dominance: Verdict,
}

/// Result of the set-inclusion check: every setting of the second family
/// also belongs to the first with a zero output-increment weight.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddingCheck {
    pub embedded_points: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioComparison {
    pub scenario: MismatchScenario,
    pub first: Vec<RunMetrics>,
    pub second: Vec<RunMetrics>,
    pub first_frontier: Vec<(f64, f64)>,
    pub second_frontier: Vec<(f64, f64)>,
    pub min_jw_first: f64,
    pub min_jw_second: f64,
    pub first_unstable_throughout: bool,
    pub second_unstable_throughout: bool,
    pub verdicts: Verdicts,
    pub embedding: Option<EmbeddingCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub first_label: String,
    pub second_label: String,
    pub first_parameters: Vec<f64>,
    pub second_parameters: Vec<f64>,
    pub scenarios: Vec<ScenarioComparison>,
}

/// Lower-left Pareto frontier of the stable `(J_u, J_e)` points, sorted by
/// increasing `J_u` (and so decreasing `J_e`).
pub fn frontier(runs: &[RunMetrics]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = runs.iter().filter(|r| r.stable).map(|r| (r.j_u, r.j_e)).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (ju, je) in pts {
        if out.last().is_none_or(|&(_, best)| je < best) {
            out.push((ju, je));
        }
    }
    out
}

/// Piecewise-linear interpolation on breakpoints sorted by abscissa.
fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let k = points.partition_point(|p| p.0 < x);
    if k == 0 {
        return points[0].1;
    }
    if k == points.len() {
        return points[k - 1].1;
    }
    let (x0, y0) = points[k - 1];
    let (x1, y1) = points[k];
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Compares two curves over the overlap of their abscissa ranges, at the
/// union of their breakpoints. Lower ordinates win.
pub fn matched_comparison(first: &[(f64, f64)], second: &[(f64, f64)]) -> MatchedComparison {
    let empty = MatchedComparison { points: 0, first_better: 0, second_better: 0, ties: 0, verdict: Verdict::NoOverlap };
    if first.is_empty() || second.is_empty() {
        return empty;
    }
    let lo = first[0].0.max(second[0].0);
    let hi = first[first.len() - 1].0.min(second[second.len() - 1].0);
    if lo > hi {
        return empty;
    }
    let mut xs: Vec<f64> = first.iter().chain(second).map(|p| p.0).filter(|&x| x >= lo && x <= hi).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    xs.dedup();
    let (mut fb, mut sb, mut ties) = (0, 0, 0);
    for &x in &xs {
        let (a, b) = (interpolate(first, x), interpolate(second, x));
        if (a - b).abs() <= 1e-12 * a.abs().max(b.abs()) {
            ties += 1;
        } else if a < b {
            fb += 1;
        } else {
            sb += 1;
        }
    }
    MatchedComparison {
        points: xs.len(),
        first_better: fb,
        second_better: sb,
        ties,
        verdict: Verdict::from_counts(fb, sb, xs.len()),
    }
}

fn dominated_count(runs: &[RunMetrics], by: &[RunMetrics]) -> usize {
    runs.iter()
        .filter(|r| r.stable)
        .filter(|r| {
            by.iter()
                .filter(|o| o.stable)
                .any(|o| o.j_e <= r.j_e && o.j_u <= r.j_u && (o.j_e < r.j_e || o.j_u < r.j_u))
        })
        .count()
}

fn verdicts(first: &[RunMetrics], second: &[RunMetrics]) -> Verdicts {
    let (fa, fb) = (frontier(first), frontier(second));
    let swap = |f: &[(f64, f64)]| {
        let mut v: Vec<(f64, f64)> = f.iter().map(|&(ju, je)| (je, ju)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        v
    };
    let dominated_first = dominated_count(first, second);
    let dominated_second = dominated_count(second, first);
    let dominance = match dominated_first.cmp(&dominated_second) {
        std::cmp::Ordering::Less => Verdict::First,
        std::cmp::Ordering::Greater => Verdict::Second,
        std::cmp::Ordering::Equal => Verdict::Tie,
    };
    Verdicts {
        matched_action: matched_comparison(&fa, &fb),
        matched_error: matched_comparison(&swap(&fa), &swap(&fb)),
        dominated_first,
        dominated_second,
        dominance,
    }
}

fn embedding(first: &MethodFamily, second: &MethodFamily) -> Option<usize> {
    let embedded = second.specs.iter().all(|b| b.is_two_term() && first.specs.contains(b));
    embedded.then_some(second.specs.len())
}

fn min_jw(runs: &[RunMetrics]) -> f64 {
    runs.iter().map(|r| r.j_w).fold(f64::INFINITY, f64::min)
}

/// Runs both families under every scenario on the same disturbance record.
pub fn compare_methods(
    plant: &MimoPlant,
    model: &StepResponse,
    first: &MethodFamily,
    second: &MethodFamily,
    disturbance: &DMatrix<f64>,
    scenarios: &[MismatchScenario],
    ranges: &Normalization,
) -> Result<ComparisonReport> {
    if scenarios.is_empty() {
        return Err(Error::invalid("scenarios", "at least one mismatch scenario is required"));
    }
    let embedded = embedding(first, second);
    let mut out = Vec::with_capacity(scenarios.len());
    for scenario in scenarios {
        let run_all = |family: &MethodFamily| -> Result<Vec<RunMetrics>> {
            family
                .specs
                .iter()
                .map(|spec| mismatch_run(plant, model, spec, scenario, disturbance, ranges).map(|(_, m)| m))
                .collect()
        };
        let a = run_all(first)?;
        let b = run_all(second)?;
        let (min_a, min_b) = (min_jw(&a), min_jw(&b));
        let embedding = embedded.map(|n| {
            let holds = min_a <= min_b;
            if !holds {
                error!("set-inclusion bound violated under '{}': {min_a} > {min_b}", scenario.label);
            }
            EmbeddingCheck { embedded_points: n, holds }
        });
        out.push(ScenarioComparison {
            scenario: scenario.clone(),
            first_frontier: frontier(&a),
            second_frontier: frontier(&b),
            min_jw_first: min_a,
            min_jw_second: min_b,
            first_unstable_throughout: a.iter().all(|r| !r.stable),
            second_unstable_throughout: b.iter().all(|r| !r.stable),
            verdicts: verdicts(&a, &b),
            first: a,
            second: b,
            embedding,
        });
    }
    Ok(ComparisonReport {
        first_label: first.label.clone(),
        second_label: second.label.clone(),
        first_parameters: first.parameters.clone(),
        second_parameters: second.parameters.clone(),
        scenarios: out,
    })
}

impl ComparisonReport {
    /// Columns `scenario, method, param_id, k_yu_or_q, J_e, J_u, J_w, stable`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = crate::io::versioned_writer(out, "comparison")?;
        w.write_record(["scenario", "method", "param_id", "k_yu_or_q", "J_e", "J_u", "J_w", "stable"])?;
        for sc in &self.scenarios {
            for (label, params, runs) in [
                (&self.first_label, &self.first_parameters, &sc.first),
                (&self.second_label, &self.second_parameters, &sc.second),
            ] {
                for (id, (param, r)) in params.iter().zip(runs).enumerate() {
                    w.write_record([
                        sc.scenario.label.clone(),
                        label.clone(),
                        id.to_string(),
                        param.to_string(),
                        r.j_e.to_string(),
                        r.j_u.to_string(),
                        r.j_w.to_string(),
                        r.stable.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Human-readable verdict block.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let (a, b) = (&self.first_label, &self.second_label);
        for sc in &self.scenarios {
            let v = &sc.verdicts;
            s.push_str(&format!("scenario {} (gain x{}):\n", sc.scenario.label, sc.scenario.gain_scale));
            s.push_str(&format!("  min J_w: {a} {:.6}, {b} {:.6}\n", sc.min_jw_first, sc.min_jw_second));
            let describe = |m: &MatchedComparison| {
                format!("{:?} ({} points: {a} {}, {b} {}, tie {})", m.verdict, m.points, m.first_better, m.second_better, m.ties)
            };
            s.push_str(&format!("  same control action: {}\n", describe(&v.matched_action)));
            s.push_str(&format!("  same control error:  {}\n", describe(&v.matched_error)));
            s.push_str(&format!(
                "  dominance: {:?} ({a} dominated {}, {b} dominated {})\n",
                v.dominance, v.dominated_first, v.dominated_second
            ));
            for (label, flag) in [(a, sc.first_unstable_throughout), (b, sc.second_unstable_throughout)] {
                if flag {
                    s.push_str(&format!("  {label}: unstable throughout\n"));
                }
            }
            if let Some(e) = &sc.embedding {
                s.push_str(&format!("  embedding of {} settings: bound {}\n", e.embedded_points, if e.holds { "holds" } else { "VIOLATED" }));
            }
        }
        s
    }
}
