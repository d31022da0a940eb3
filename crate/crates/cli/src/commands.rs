use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dmc_core::analysis::{closed_form_reference, predict_closed_loop, SetpointShape};
use dmc_core::compare::{compare_methods, run_metrics, Normalization};
use dmc_core::lti::step_response;
use dmc_core::nalgebra::DMatrix;
use dmc_core::scenario::{DisturbanceConfig, LoadedScenario, PlantConfig, Scenario};
use dmc_core::sim::{simulate_closed_loop, ClosedLoopConfig, SetpointEvent, SimulationTrace};
use dmc_core::sysid::{estimate_disturbance, identify as identify_armax};
use dmc_core::tuning::{tune_disturbance, tune_step_response, DisturbanceSource, TuningSetup};
use dmc_core::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_UNSTABLE: u8 = 3;
pub const EXIT_NO_TUNING: u8 = 4;

pub fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(e) = err.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return EXIT_FAILURE;
    };
    match e {
        Error::Parse(_) | Error::Invalid { .. } | Error::Shape(_) | Error::Io(_) | Error::Csv(_) => EXIT_CONFIG,
        Error::Unstable { .. } => EXIT_UNSTABLE,
        Error::NoFeasibleTuning(_) => EXIT_NO_TUNING,
        _ => EXIT_FAILURE,
    }
}

fn load(path: &Path) -> Result<LoadedScenario> {
    Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    let file = File::create(&path).map_err(Error::from).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_text(out: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    fs::write(&path, text).map_err(Error::from).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// First sample after which output `i` stays within 2% of the range width
/// of its setpoint.
fn settle_sample(trace: &SimulationTrace, i: usize, width: f64) -> Option<usize> {
    let band = 0.02 * width;
    let last_out = (0..trace.len()).rev().find(|&k| (trace.outputs[(k, i)] - trace.setpoints[(k, i)]).abs() > band);
    match last_out {
        None => Some(0),
        Some(k) if k + 1 < trace.len() => Some(k + 1),
        Some(_) => None,
    }
}

pub fn simulate(path: &Path, out: &Path) -> Result<u8> {
    let loaded = load(path)?;
    let plant = loaded.plant()?;
    let spec = loaded.spec()?;
    let model = step_response(&loaded.model_plant()?, spec.model_horizon)?;
    let program = loaded.program()?;
    let length = loaded.scenario.length_samples;
    let disturbance = loaded.disturbance(length)?;
    let ranges = loaded.normalization()?;
    let trace = simulate_closed_loop(&plant, &model, &spec, &program, disturbance.as_ref(), &ClosedLoopConfig::new(length))?;
    trace.write_csv(create(out, "trace.csv")?)?;

    let metrics = run_metrics(&trace, &ranges)?;
    let mut summary = String::new();
    writeln!(summary, "samples = {}", trace.len())?;
    writeln!(summary, "stable = {}", metrics.stable && !trace.diverged())?;
    if let Some(k) = trace.diverged_at {
        writeln!(summary, "diverged_at = {k}")?;
    }
    writeln!(summary, "J_e = {}", finite_or_inf(metrics.j_e))?;
    writeln!(summary, "J_u = {}", finite_or_inf(metrics.j_u))?;
    writeln!(summary, "J_w = {}", finite_or_inf(metrics.j_w))?;
    let settle: Vec<String> = (0..plant.outputs())
        .map(|i| match settle_sample(&trace, i, ranges.outputs[i].width()) {
            Some(k) => k.to_string(),
            None => "-1".into(),
        })
        .collect();
    writeln!(summary, "settle_samples = [{}]", settle.join(", "))?;
    write_text(out, "summary.toml", &summary)?;
    print!("{summary}");

    if trace.diverged() || !metrics.stable {
        eprintln!("closed loop unstable; partial trace written");
        return Ok(EXIT_UNSTABLE);
    }
    Ok(EXIT_OK)
}

fn finite_or_inf(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "inf".into()
    }
}

struct OutputPrediction {
    start: usize,
    reference: Vec<f64>,
    predicted: Vec<f64>,
    alpha: Option<f64>,
    lambda: f64,
}

pub fn predict(path: &Path, out: &Path) -> Result<u8> {
    let loaded = load(path)?;
    let plant = loaded.plant()?;
    let spec = loaded.spec()?;
    let program = loaded.program()?;
    let (p, horizon) = (plant.outputs(), spec.prediction_horizon);

    let mut per_output = Vec::with_capacity(p);
    for i in 0..p {
        let first = program.events().iter().find(|e| match **e {
            SetpointEvent::Step { output, .. } | SetpointEvent::Ramp { output, .. } => output == i,
        });
        let (start, shape) = match first {
            None => (0, SetpointShape::Constant { value: 0.0 }),
            Some(&SetpointEvent::Step { at, value, .. }) => (at, SetpointShape::Constant { value }),
            Some(&SetpointEvent::Ramp { at, slope, .. }) => {
                (at, SetpointShape::Ramp { current: program.value(i, at), slope })
            }
        };
        let (q, s) = (spec.q[i], spec.s[i]);
        let reference = closed_form_reference(shape, 0.0, q, s, horizon)
            .with_context(|| format!("output {}", i + 1))?;
        let prediction = predict_closed_loop(&reference, spec.delays[i], q, s)?;
        per_output.push(OutputPrediction {
            start,
            reference: reference.values,
            predicted: prediction.values,
            alpha: prediction.alpha,
            lambda: reference.lambda,
        });
    }

    let length = loaded.scenario.length_samples;
    let model = step_response(&loaded.model_plant()?, spec.model_horizon)?;
    let trace = simulate_closed_loop(&plant, &model, &spec, &program, None, &ClosedLoopConfig::new(length))?;

    // sample k+h of the run maps to prediction index h-1, with k the event sample
    let at = |o: &OutputPrediction, v: &[f64], k: usize| -> Option<f64> {
        if k <= o.start {
            Some(0.0)
        } else {
            v.get(k - o.start - 1).copied()
        }
    };
    let rows = length.max(per_output.iter().map(|o| o.start + horizon + 1).max().unwrap_or(0));

    let mut header = vec!["k".to_string()];
    for i in 1..=p {
        header.extend(["w", "reference", "predicted", "alpha", "lambda"].map(|c| format!("{c}_{i}")));
    }
    let mut w = dmc_core::io::versioned_writer(create(out, "prediction.csv")?, "prediction")?;
    w.write_record(&header)?;
    for k in 0..rows {
        let mut row = vec![k.to_string()];
        for (i, o) in per_output.iter().enumerate() {
            row.push(program.value(i, k).to_string());
            row.push(at(o, &o.reference, k).map(|v| v.to_string()).unwrap_or_default());
            row.push(at(o, &o.predicted, k).map(|v| v.to_string()).unwrap_or_default());
            row.push(o.alpha.map(|a| a.to_string()).unwrap_or_default());
            row.push(o.lambda.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut header = vec!["k".to_string()];
    for prefix in ["y_sim", "y_pred", "gap"] {
        header.extend((1..=p).map(|i| format!("{prefix}_{i}")));
    }
    let mut w = dmc_core::io::versioned_writer(create(out, "overlay.csv")?, "overlay")?;
    w.write_record(&header)?;
    let mut max_gap = vec![0.0f64; p];
    for k in 0..trace.len() {
        let sim: Vec<f64> = (0..p).map(|i| trace.outputs[(k, i)]).collect();
        let pred: Vec<Option<f64>> = per_output.iter().map(|o| at(o, &o.predicted, k)).collect();
        let mut row = vec![k.to_string()];
        row.extend(sim.iter().map(f64::to_string));
        row.extend(pred.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
        for i in 0..p {
            match pred[i] {
                Some(v) => {
                    let gap = (sim[i] - v).abs();
                    max_gap[i] = max_gap[i].max(gap);
                    row.push(gap.to_string());
                }
                None => row.push(String::new()),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    for (i, o) in per_output.iter().enumerate() {
        let alpha = o.alpha.map(|a| format!("{a:.6}")).unwrap_or_else(|| "-".into());
        println!(
            "output {}: delay {}, lambda {:.6}, alpha {alpha}, max |y_sim - y_pred| {:.6}",
            i + 1,
            spec.delays[i],
            o.lambda,
            max_gap[i]
        );
    }
    if trace.diverged() {
        eprintln!("closed loop diverged at sample {}", trace.diverged_at.unwrap_or(0));
        return Ok(EXIT_UNSTABLE);
    }
    Ok(EXIT_OK)
}

pub fn tune(path: &Path, out: &Path, disturbance_procedure: bool) -> Result<u8> {
    let loaded = load(path)?;
    let config = loaded
        .scenario
        .tuning
        .clone()
        .ok_or_else(|| Error::invalid("tuning", "the scenario has no [tuning] table"))?;
    let plant = loaded.plant()?;
    let goal = config.goal(&plant)?;
    let mut setup = TuningSetup::new(plant.clone(), loaded.spec()?, loaded.normalization()?, goal)?.with_grid(config.grid.values()?)?;
    setup.model = step_response(&loaded.model_plant()?, setup.base.model_horizon)?;
    if let Some(len) = config.step_test_length_samples {
        setup.step_test_length = len;
    }
    setup.validate()?;

    let report = if disturbance_procedure {
        let length = loaded.scenario.length_samples;
        let v = loaded.disturbance(length)?.unwrap_or_else(|| DMatrix::zeros(length, plant.outputs()));
        tune_disturbance(&setup, &DisturbanceSource::Realization(v))?
    } else {
        tune_step_response(&setup)?
    };

    write_text(out, "tuning_report.toml", &report.to_toml()?)?;
    report.write_csv(create(out, "tuning.csv")?)?;
    if disturbance_procedure {
        report.write_curve(create(out, "i_sigma_curve.dat")?)?;
    }
    let mut tuned = loaded.scenario.clone();
    tuned.controller.output_weights = report.q.clone();
    tuned.controller.move_weights = report.r.clone();
    tuned.controller.increment_weights = Some(report.s.clone());
    write_text(out, "tuned_scenario.toml", &tuned.to_toml_string()?)?;
    println!("{}", report.summary());
    Ok(EXIT_OK)
}

pub fn compare(path: &Path, out: &Path) -> Result<u8> {
    let loaded = load(path)?;
    let config = loaded
        .scenario
        .compare
        .clone()
        .ok_or_else(|| Error::invalid("compare", "the scenario has no [compare] table"))?;
    let plant = loaded.plant()?;
    let base = loaded.spec()?;
    let model = step_response(&loaded.model_plant()?, base.model_horizon)?;
    let length = loaded.scenario.length_samples;
    let v = loaded
        .disturbance(length)?
        .ok_or_else(|| Error::invalid("disturbance", "compare needs a disturbance (arma or file)"))?;
    let ranges: Normalization = loaded.normalization()?;
    let first = config.family(&config.first, &base)?;
    let second = config.family(&config.second, &base)?;
    let first = if config.embed_second_in_first { first.union(&second) } else { first };
    let report = compare_methods(&plant, &model, &first, &second, &v, &config.scenarios()?, &ranges)?;

    write_text(out, "comparison.toml", &report.to_toml()?)?;
    report.write_csv(create(out, "comparison.csv")?)?;
    for sc in &report.scenarios {
        for (label, points) in [(&report.first_label, &sc.first_frontier), (&report.second_label, &sc.second_frontier)] {
            let name = format!("frontier_{}_{}.dat", file_token(&sc.scenario.label), file_token(label));
            let title = format!("{label} frontier, {}", sc.scenario.label);
            dmc_core::io::write_plot_data(create(out, &name)?, &title, ["J_u", "J_e"], points)?;
        }
    }
    println!("{}", report.summary());
    Ok(EXIT_OK)
}

fn file_token(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn identify(path: &Path, out: &Path) -> Result<u8> {
    let loaded = load(path)?;
    let config = loaded
        .scenario
        .identify
        .clone()
        .ok_or_else(|| Error::invalid("identify", "the scenario has no [identify] table"))?;
    let plant = loaded.plant()?;
    let (p, m) = (plant.outputs(), plant.inputs());
    let data_path = loaded.resolve(&config.data_path);
    let file = File::open(&data_path).map_err(Error::from).with_context(|| format!("opening {}", data_path.display()))?;
    let (names, data) = dmc_core::io::read_table(file)?;
    let column = |name: String| -> Result<usize> {
        names
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| Error::invalid("identify.data_path", format!("missing column {name}")).into())
    };
    let u_cols = (1..=m).map(|j| column(format!("u_{j}"))).collect::<Result<Vec<_>>>()?;
    let y_cols = (1..=p).map(|i| column(format!("y_{i}"))).collect::<Result<Vec<_>>>()?;
    let t = data.nrows();
    let u = DMatrix::from_fn(t, m, |k, j| data[(k, u_cols[j])]);
    let y = DMatrix::from_fn(t, p, |k, i| data[(k, y_cols[i])]);

    let model = identify_armax(&u, &y, &config.orders())?;
    let estimate = estimate_disturbance(&model, &u, &y)?;

    let v_names: Vec<String> = (1..=p).map(|i| format!("v_{i}")).collect();
    dmc_core::io::write_series(create(out, "disturbance.csv")?, "disturbance", &v_names, &estimate.v)?;

    let mut header = vec!["k".to_string()];
    header.extend((1..=p).map(|i| format!("e_{i}")));
    let mut w = dmc_core::io::versioned_writer(create(out, "residuals.csv")?, "residuals")?;
    w.write_record(&header)?;
    for k in 0..t {
        let mut row = vec![k.to_string()];
        for (i, sub) in model.subsystems.iter().enumerate() {
            let margin = sub.orders.margin();
            row.push(if k < margin { String::new() } else { model.residuals[i][k - margin].to_string() });
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut scenario = loaded.scenario.clone();
    scenario.plant = PlantConfig::from_plant(&model.to_plant(plant.sample_time())?);
    scenario.model = None;
    scenario.identify = None;
    scenario.disturbance = DisturbanceConfig::File { path: "disturbance.csv".into() };
    scenario.length_samples = scenario.length_samples.min(t);
    write_text(out, "identified_scenario.toml", &scenario.to_toml_string()?)?;

    for (i, fit) in model.fit_metrics.iter().enumerate() {
        println!(
            "output {}: residual mean square {:.6e}, {} iterations, parameters {:?}",
            i + 1,
            fit,
            model.iterations[i],
            model.subsystems[i].parameters()
        );
    }
    Ok(EXIT_OK)
}
