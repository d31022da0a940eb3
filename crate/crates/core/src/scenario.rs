//! Scenario files: TOML descriptions of a plant, a controller, a setpoint
//! program, a disturbance and the settings of each command. Field names
//! carry their units.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::compare::{MethodFamily, MismatchScenario, Normalization};
use crate::dmc::{Bounds, ControllerSpec};
use crate::lti::{ArmaDisturbance, MimoPlant, SisoChannel};
use crate::poly::Polynomial;
use crate::sim::{SetpointEvent, SetpointProgram};
use crate::signal::SignalRange;
use crate::sysid::ArmaxOrders;
use crate::tuning::{log_grid, SpeedPreset, TuningGoal};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    pub length_samples: usize,
    pub plant: PlantConfig,
    /// Plant description the controller is built on; defaults to `plant`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PlantConfig>,
    pub controller: ControllerConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub setpoints: Vec<SetpointConfig>,
    #[serde(default)]
    pub disturbance: DisturbanceConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranges: Option<RangesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identify: Option<IdentifyConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(default = "one")]
    pub sample_time_seconds: f64,
    /// Non-zero channels; any output/input pair not listed has zero gain.
    pub channels: Vec<ChannelConfig>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// 1-based output index.
    pub output: usize,
    /// 1-based input index.
    pub input: usize,
    /// Ascending powers of the unit delay.
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    #[serde(default)]
    pub extra_delay_samples: usize,
}

impl PlantConfig {
    pub fn to_plant(&self) -> Result<MimoPlant> {
        let p = self.channels.iter().map(|c| c.output).max().unwrap_or(0);
        let m = self.channels.iter().map(|c| c.input).max().unwrap_or(0);
        if p == 0 || m == 0 || self.channels.iter().any(|c| c.output == 0 || c.input == 0) {
            return Err(Error::invalid("plant.channels", "need at least one channel with 1-based output and input indices"));
        }
        let mut grid: Vec<Vec<Option<SisoChannel>>> = vec![vec![None; m]; p];
        for c in &self.channels {
            let field = format!("plant.channels[output {}, input {}]", c.output, c.input);
            let wrap = |e: Error| Error::invalid(field.clone(), e.to_string());
            let ch = SisoChannel::new(
                Polynomial::new(c.numerator.clone()).map_err(wrap)?,
                Polynomial::monic(c.denominator.clone()).map_err(wrap)?,
                c.extra_delay_samples,
            )
            .map_err(wrap)?;
            if grid[c.output - 1][c.input - 1].replace(ch).is_some() {
                return Err(Error::invalid(field, "listed twice"));
            }
        }
        let rows = grid.into_iter().map(|row| row.into_iter().map(|c| c.unwrap_or_else(SisoChannel::zero)).collect()).collect();
        if !(self.sample_time_seconds > 0.0) {
            return Err(Error::invalid("plant.sample_time_seconds", "must be positive"));
        }
        Ok(MimoPlant::new(rows)?.with_sample_time(self.sample_time_seconds))
    }

    pub fn from_plant(plant: &MimoPlant) -> Self {
        let mut channels = Vec::new();
        for i in 0..plant.outputs() {
            for j in 0..plant.inputs() {
                let ch = plant.channel(i, j);
                if ch.numerator().is_zero() {
                    continue;
                }
                channels.push(ChannelConfig {
                    output: i + 1,
                    input: j + 1,
                    numerator: ch.numerator().coeffs().to_vec(),
                    denominator: ch.denominator().coeffs().to_vec(),
                    extra_delay_samples: ch.extra_delay(),
                });
            }
        }
        // keep the grid size visible when the last row or column is all zero
        let (p, m) = (plant.outputs(), plant.inputs());
        if !channels.iter().any(|c| c.output == p) || !channels.iter().any(|c| c.input == m) {
            let ch = plant.channel(p - 1, m - 1);
            channels.push(ChannelConfig {
                output: p,
                input: m,
                numerator: ch.numerator().coeffs().to_vec(),
                denominator: ch.denominator().coeffs().to_vec(),
                extra_delay_samples: ch.extra_delay(),
            });
        }
        Self { sample_time_seconds: plant.sample_time(), channels }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub model_horizon_samples: usize,
    pub prediction_horizon_samples: usize,
    pub control_horizon_samples: usize,
    pub output_weights: Vec<f64>,
    pub move_weights: Vec<f64>,
    /// Output-increment weights; zero (two-term loss) when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub increment_weights: Option<Vec<f64>>,
    /// Defaults to the minimum channel delay of each plant output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_delays_samples: Option<Vec<usize>>,
    /// First-order setpoint shaping for two-term controllers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_time_constants_samples: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "BoundsConfig::is_empty")]
    pub bounds: BoundsConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_max: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_rate_max_per_sample: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_min: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_max: Option<Vec<f64>>,
}

impl BoundsConfig {
    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

impl ControllerConfig {
    pub fn to_spec(&self, plant: &MimoPlant) -> Result<ControllerSpec> {
        let p = plant.outputs();
        let mut spec = ControllerSpec::new(
            self.model_horizon_samples,
            self.prediction_horizon_samples,
            self.control_horizon_samples,
            self.output_weights.clone(),
            self.move_weights.clone(),
            self.increment_weights.clone().unwrap_or_else(|| vec![0.0; p]),
            self.output_delays_samples.clone().unwrap_or_else(|| plant.output_delays()),
        );
        spec.reference_lambda = self.reference_time_constants_samples.clone();
        spec.bounds = Bounds {
            u_min: self.bounds.input_min.clone(),
            u_max: self.bounds.input_max.clone(),
            du_max: self.bounds.input_rate_max_per_sample.clone(),
            y_min: self.bounds.output_min.clone(),
            y_max: self.bounds.output_max.clone(),
        };
        if spec.outputs() != p || spec.inputs() != plant.inputs() {
            return Err(Error::invalid(
                "controller",
                format!("weights describe a {}×{} loop, plant is {p}×{}", spec.outputs(), spec.inputs(), plant.inputs()),
            ));
        }
        spec.validate().map_err(|e| Error::invalid("controller", e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SetpointConfig {
    Step { output: usize, at_sample: usize, value: f64 },
    Ramp { output: usize, at_sample: usize, slope_per_sample: f64 },
}

pub fn setpoint_program(setpoints: &[SetpointConfig], outputs: usize) -> Result<SetpointProgram> {
    let events = setpoints
        .iter()
        .map(|s| {
            let (output, event) = match *s {
                SetpointConfig::Step { output, at_sample, value } => {
                    (output, SetpointEvent::Step { output: output.wrapping_sub(1), at: at_sample, value })
                }
                SetpointConfig::Ramp { output, at_sample, slope_per_sample } => {
                    (output, SetpointEvent::Ramp { output: output.wrapping_sub(1), at: at_sample, slope: slope_per_sample })
                }
            };
            if output == 0 || output > outputs {
                return Err(Error::invalid("setpoints.output", format!("{output} is not an output of a {outputs}-output plant")));
            }
            Ok(event)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SetpointProgram::new(events))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DisturbanceConfig {
    #[default]
    None,
    /// `(1 + ma·q⁻¹)/(1 − ar·q⁻¹) e` on every output, independent streams.
    Arma { ma_coefficient: f64, ar_pole: f64, noise_variance: f64 },
    /// CSV with columns `k, v_1, …, v_p`.
    File { path: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangesConfig {
    pub output_min: Vec<f64>,
    pub output_max: Vec<f64>,
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
}

impl RangesConfig {
    pub fn to_normalization(&self) -> Result<Normalization> {
        let pair = |lo: &[f64], hi: &[f64], name: &str| -> Result<Vec<SignalRange>> {
            if lo.len() != hi.len() {
                return Err(Error::invalid(format!("ranges.{name}"), "min and max lengths differ"));
            }
            lo.iter()
                .zip(hi)
                .enumerate()
                .map(|(k, (&a, &b))| SignalRange::new(a, b).map_err(|_| Error::invalid(format!("ranges.{name}[{}]", k + 1), format!("need min < max, got [{a}, {b}]"))))
                .collect()
        };
        Normalization::new(pair(&self.output_min, &self.output_max, "output")?, pair(&self.input_min, &self.input_max, "input")?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { min: 1e-2, max: 1e3, points: 25 }
    }
}

impl GridConfig {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.min > 0.0 && self.max > self.min && self.points >= 1) {
            return Err(Error::invalid("grid", format!("need 0 < min < max and points ≥ 1, got {self:?}")));
        }
        Ok(log_grid(self.min, self.max, self.points))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_constants_samples: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_preset: Option<SpeedPreset>,
    /// Relative input overshoot bounds; `inf` for none.
    pub overshoot_bounds: Vec<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_test_length_samples: Option<usize>,
}

impl TuningConfig {
    pub fn goal(&self, plant: &MimoPlant) -> Result<TuningGoal> {
        match (&self.time_constants_samples, self.speed_preset) {
            (Some(l), None) => Ok(TuningGoal::new(l.clone(), self.overshoot_bounds.clone())),
            (None, Some(p)) => TuningGoal::from_preset(plant, p, self.overshoot_bounds.clone()),
            _ => Err(Error::invalid("tuning", "give exactly one of time_constants_samples and speed_preset")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyConfig {
    pub label: String,
    /// `s_i = ratio_i · q`.
    pub increment_ratios: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_time_constants_samples: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    /// Output weight `q` shared by all outputs at each point.
    #[serde(default)]
    pub q_grid: GridConfig,
    pub first: FamilyConfig,
    pub second: FamilyConfig,
    #[serde(default = "nominal_scale")]
    pub gain_scales: Vec<f64>,
    /// Adds the second family's settings to the first, so the first contains
    /// the second as its zero-increment-weight members.
    #[serde(default)]
    pub embed_second_in_first: bool,
}

fn nominal_scale() -> Vec<f64> {
    vec![1.0]
}

impl CompareConfig {
    pub fn family(&self, which: &FamilyConfig, base: &ControllerSpec) -> Result<MethodFamily> {
        let p = base.outputs();
        if which.increment_ratios.len() != p {
            return Err(Error::invalid(format!("compare.{}.increment_ratios", which.label), format!("need {p} entries")));
        }
        let grid = self.q_grid.values()?;
        let specs = grid
            .iter()
            .map(|&q| {
                let mut spec = base.clone();
                spec.q = vec![q; p];
                spec.s = which.increment_ratios.iter().map(|r| r * q).collect();
                spec.reference_lambda = which.reference_time_constants_samples.clone();
                spec.validate()?;
                Ok(spec)
            })
            .collect::<Result<Vec<_>>>()?;
        MethodFamily::new(which.label.clone(), grid, specs)
    }

    pub fn scenarios(&self) -> Result<Vec<MismatchScenario>> {
        self.gain_scales
            .iter()
            .map(|&g| MismatchScenario::new(g, if g == 1.0 { "nominal".to_string() } else { format!("gain-x{g}") }))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrdersConfig {
    pub na: usize,
    pub nb: Vec<usize>,
    pub nc: usize,
    pub delays_samples: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentifyConfig {
    /// CSV with columns `k, u_1, …, u_m, y_1, …, y_p`.
    pub data_path: String,
    /// One entry per output.
    pub orders: Vec<OrdersConfig>,
}

impl IdentifyConfig {
    pub fn orders(&self) -> Vec<ArmaxOrders> {
        self.orders.iter().map(|o| ArmaxOrders::new(o.na, o.nb.clone(), o.nc, o.delays_samples.clone())).collect()
    }
}

/// A parsed scenario together with the directory relative paths resolve
/// against.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<LoadedScenario> {
        let text = std::fs::read_to_string(path)?;
        let scenario = Self::from_toml_str(&text)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedScenario { scenario, base_dir })
    }

    pub fn validate(&self) -> Result<()> {
        let plant = self.plant.to_plant()?;
        if let Some(m) = &self.model {
            let model = m.to_plant()?;
            if model.outputs() != plant.outputs() || model.inputs() != plant.inputs() {
                return Err(Error::invalid("model", "dimensions differ from the plant"));
            }
        }
        self.controller.to_spec(&plant)?;
        setpoint_program(&self.setpoints, plant.outputs())?;
        if self.length_samples == 0 {
            return Err(Error::invalid("length_samples", "must be positive"));
        }
        if let DisturbanceConfig::Arma { ar_pole, noise_variance, .. } = self.disturbance {
            if !(ar_pole.abs() < 1.0) || !(noise_variance >= 0.0) {
                return Err(Error::invalid("disturbance", "need |ar_pole| < 1 and noise_variance ≥ 0"));
            }
        }
        if let Some(r) = &self.ranges {
            let n = r.to_normalization()?;
            if n.outputs.len() != plant.outputs() || n.inputs.len() != plant.inputs() {
                return Err(Error::invalid("ranges", "lengths do not match the plant"));
            }
        }
        if let Some(t) = &self.tuning {
            t.grid.values()?;
            if t.overshoot_bounds.len() != plant.inputs() {
                return Err(Error::invalid("tuning.overshoot_bounds", format!("need {} entries", plant.inputs())));
            }
        }
        if let Some(c) = &self.compare {
            let spec = self.controller.to_spec(&plant)?;
            c.family(&c.first, &spec)?;
            c.family(&c.second, &spec)?;
            c.scenarios()?;
        }
        if let Some(id) = &self.identify {
            if id.orders.len() != plant.outputs() {
                return Err(Error::invalid("identify.orders", format!("need one entry per output ({})", plant.outputs())));
            }
            for o in self.identify.as_ref().unwrap().orders() {
                o.validate(plant.inputs()).map_err(|e| Error::invalid("identify.orders", e.to_string()))?;
            }
        }
        Ok(())
    }
}

impl LoadedScenario {
    pub fn resolve(&self, path: &str) -> PathBuf {
        self.base_dir.join(path)
    }

    pub fn plant(&self) -> Result<MimoPlant> {
        self.scenario.plant.to_plant()
    }

    /// The plant description the controller is built on.
    pub fn model_plant(&self) -> Result<MimoPlant> {
        self.scenario.model.as_ref().unwrap_or(&self.scenario.plant).to_plant()
    }

    pub fn spec(&self) -> Result<ControllerSpec> {
        self.scenario.controller.to_spec(&self.plant()?)
    }

    pub fn program(&self) -> Result<SetpointProgram> {
        setpoint_program(&self.scenario.setpoints, self.plant()?.outputs())
    }

    pub fn normalization(&self) -> Result<Normalization> {
        let plant = self.plant()?;
        match &self.scenario.ranges {
            Some(r) => r.to_normalization(),
            None => Ok(Normalization::unit(plant.outputs(), plant.inputs())),
        }
    }

    /// `length` samples of output disturbance, zero when none is configured.
    pub fn disturbance(&self, length: usize) -> Result<Option<DMatrix<f64>>> {
        let p = self.plant()?.outputs();
        match &self.scenario.disturbance {
            DisturbanceConfig::None => Ok(None),
            DisturbanceConfig::Arma { ma_coefficient, ar_pole, noise_variance } => {
                let d = ArmaDisturbance::first_order(*ma_coefficient, *ar_pole, *noise_variance, self.scenario.seed)?;
                Ok(Some(d.generate_outputs(p, length)))
            }
            DisturbanceConfig::File { path } => {
                let file = std::fs::File::open(self.resolve(path))?;
                let (names, data) = crate::io::read_table(file)?;
                let cols = (1..=p)
                    .map(|i| {
                        let name = format!("v_{i}");
                        names.iter().position(|n| *n == name).ok_or_else(|| Error::invalid("disturbance.path", format!("missing column {name}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if data.nrows() < length {
                    return Err(Error::invalid("disturbance.path", format!("{} rows, run needs {length}", data.nrows())));
                }
                Ok(Some(DMatrix::from_fn(length, p, |k, i| data[(k, cols[i])])))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    pub(crate) const PROCESS_A: &str = r#"
name = "process A"
seed = 3
length_samples = 120

[plant]
sample_time_seconds = 1.0

[[plant.channels]]
output = 1
input = 1
numerator = [0.0, 0.045, 0.045]
denominator = [1.0, -1.7347, 0.766]

[[plant.channels]]
output = 1
input = 2
numerator = [0.0, 0.12, 0.015]
denominator = [1.0, -1.7347, 0.766]

[[plant.channels]]
output = 2
input = 1
numerator = [0.0, 0.07, 0.05]
denominator = [1.0, -1.349, 0.514]

[[plant.channels]]
output = 2
input = 2
numerator = [0.0, 0.05, 0.02]
denominator = [1.0, -1.349, 0.514]

[controller]
model_horizon_samples = 60
prediction_horizon_samples = 40
control_horizon_samples = 10
output_weights = [50.0, 50.0]
move_weights = [1.0, 1.0]
increment_weights = [800.0, 200.0]

[controller.bounds]
input_min = [-5.0, -5.0]
input_max = [5.0, 5.0]

[[setpoints]]
kind = "step"
output = 1
at_sample = 0
value = 1.0

[[setpoints]]
kind = "ramp"
output = 2
at_sample = 10
slope_per_sample = 0.05

[disturbance]
kind = "arma"
ma_coefficient = 0.23
ar_pole = 0.9
noise_variance = 0.01

[ranges]
output_min = [-1.0, -1.0]
output_max = [1.0, 1.0]
input_min = [-5.0, -5.0]
input_max = [5.0, 5.0]

[tuning]
time_constants_samples = [4.0, 2.0]
overshoot_bounds = [0.5, inf]

[tuning.grid]
min = 0.01
max = 1000.0
points = 25
"#;

    #[test]
    fn parses_and_builds_process_a() {
        let s = Scenario::from_toml_str(PROCESS_A).unwrap();
        let loaded = LoadedScenario { scenario: s, base_dir: PathBuf::new() };
        assert_eq!(loaded.plant().unwrap(), fixtures::process_a());
        let spec = loaded.spec().unwrap();
        assert_eq!(spec.s, vec![800.0, 200.0]);
        assert_eq!(spec.delays, vec![1, 1]);
        assert_eq!(spec.bounds.u_max, Some(vec![5.0, 5.0]));
        let prog = loaded.program().unwrap();
        assert_eq!(prog.value(1, 12), 0.1);
        assert_eq!(loaded.disturbance(50).unwrap().unwrap().shape(), (50, 2));
        assert!(loaded.scenario.tuning.as_ref().unwrap().overshoot_bounds[1].is_infinite());
    }

    #[test]
    fn round_trip_is_semantically_identical() {
        let s = Scenario::from_toml_str(PROCESS_A).unwrap();
        let text = s.to_toml_string().unwrap();
        let back = Scenario::from_toml_str(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn plant_config_round_trip() {
        for plant in [fixtures::process_a(), fixtures::process_b(), fixtures::process_c()] {
            assert_eq!(PlantConfig::from_plant(&plant).to_plant().unwrap(), plant);
        }
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let bad = PROCESS_A.replace("prediction_horizon_samples = 40", "prediction_horizon_samples = \"forty\"");
        let err = Scenario::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("line") && err.contains("prediction_horizon_samples"), "{err}");
        let bad = PROCESS_A.replace("output_weights = [50.0, 50.0]", "output_weights = [50.0]");
        let err = Scenario::from_toml_str(&bad).unwrap_err().to_string();
        assert!(err.contains("controller"), "{err}");
        let bad = PROCESS_A.replace("seed = 3", "seed = 3\nsead = 4");
        assert!(Scenario::from_toml_str(&bad).unwrap_err().to_string().contains("sead"));
    }

    #[test]
    fn default_delays_come_from_the_plant() {
        let plant = fixtures::process_b();
        let cfg = ControllerConfig {
            model_horizon_samples: 55,
            prediction_horizon_samples: 45,
            control_horizon_samples: 10,
            output_weights: vec![1.0; 2],
            move_weights: vec![1e-4; 2],
            increment_weights: Some(vec![1.0, 2.0]),
            output_delays_samples: None,
            reference_time_constants_samples: None,
            bounds: BoundsConfig::default(),
        };
        assert_eq!(cfg.to_spec(&plant).unwrap(), fixtures::process_b_spec());
    }
}
