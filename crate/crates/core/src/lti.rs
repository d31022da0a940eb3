//! Discrete-time LTI plants, simulation, step responses and ARMA disturbances.

use std::io::Write;

use nalgebra::DMatrix;

use crate::poly::Polynomial;
use crate::signal::GaussianSource;
use crate::{Error, Result};

/// One transfer function `q^-extra · B(q⁻¹)/A(q⁻¹)` with monic `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct SisoChannel {
    numerator: Polynomial,
    denominator: Polynomial,
    extra_delay: usize,
}

impl SisoChannel {
    /// A plant channel. The total input-to-output delay must be at least one
    /// sample unless the numerator is identically zero.
    pub fn new(numerator: Polynomial, denominator: Polynomial, extra_delay: usize) -> Result<Self> {
        let ch = Self::noise_filter_with_delay(numerator, denominator, extra_delay)?;
        if let Some(d) = ch.total_delay() {
            if d < 1 {
                return Err(Error::invalid(
                    "channel",
                    "total delay must be at least one sample",
                ));
            }
        }
        Ok(ch)
    }

    /// A filter without the causality margin, as used for disturbance models.
    pub fn noise_filter(numerator: Polynomial, denominator: Polynomial) -> Result<Self> {
        Self::noise_filter_with_delay(numerator, denominator, 0)
    }

    fn noise_filter_with_delay(
        numerator: Polynomial,
        denominator: Polynomial,
        extra_delay: usize,
    ) -> Result<Self> {
        if !denominator.is_monic() {
            return Err(Error::invalid(
                "denominator",
                "leading coefficient must be exactly 1",
            ));
        }
        Ok(Self {
            numerator,
            denominator,
            extra_delay,
        })
    }

    /// Static gain `g` after `delay` samples.
    pub fn pure_gain(gain: f64, delay: usize) -> Result<Self> {
        let mut num = vec![0.0; delay];
        num.push(gain);
        Self::new(Polynomial::new(num)?, Polynomial::one(), 0)
    }

    pub fn zero() -> Self {
        Self {
            numerator: Polynomial::constant(0.0),
            denominator: Polynomial::one(),
            extra_delay: 1,
        }
    }

    pub fn numerator(&self) -> &Polynomial {
        &self.numerator
    }

    pub fn denominator(&self) -> &Polynomial {
        &self.denominator
    }

    pub fn extra_delay(&self) -> usize {
        self.extra_delay
    }

    /// Extra delay plus leading numerator zeros; `None` for a zero channel.
    pub fn total_delay(&self) -> Option<usize> {
        self.numerator.leading_zeros().map(|z| z + self.extra_delay)
    }

    pub fn static_gain(&self) -> f64 {
        self.numerator.eval(1.0) / self.denominator.eval(1.0)
    }

    pub fn with_gain_scale(&self, scale: f64) -> Self {
        Self {
            numerator: self.numerator.scaled(scale),
            denominator: self.denominator.clone(),
            extra_delay: self.extra_delay,
        }
    }

    /// Output sample `k` of the difference equation. Inputs beyond the end of
    /// `input` are treated as zero, which is exact whenever the delay is ≥ 1
    /// and `input` holds samples up to `k − 1`.
    fn sample(&self, input: &[f64], output: &[f64], k: usize) -> f64 {
        let mut acc = 0.0;
        for (l, &b) in self.numerator.coeffs().iter().enumerate() {
            let lag = l + self.extra_delay;
            if b != 0.0 && lag <= k {
                if let Some(&u) = input.get(k - lag) {
                    acc += b * u;
                }
            }
        }
        for (l, &a) in self.denominator.coeffs().iter().enumerate().skip(1) {
            if l <= k {
                acc -= a * output[k - l];
            }
        }
        acc
    }

    /// Filters a whole input series from zero initial conditions.
    pub fn filter(&self, input: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(input.len());
        for k in 0..input.len() {
            let y = self.sample(input, &out, k);
            out.push(y);
        }
        out
    }
}

/// A p×m grid of channels. Row `i` holds the channels into output `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MimoPlant {
    channels: Vec<Vec<SisoChannel>>,
    sample_time: f64,
}

impl MimoPlant {
    pub fn new(channels: Vec<Vec<SisoChannel>>) -> Result<Self> {
        let p = channels.len();
        if p == 0 {
            return Err(Error::invalid("plant", "no outputs"));
        }
        let m = channels[0].len();
        if m == 0 {
            return Err(Error::invalid("plant", "no inputs"));
        }
        if channels.iter().any(|row| row.len() != m) {
            return Err(Error::shape("every plant row must hold one channel per input"));
        }
        Ok(Self {
            channels,
            sample_time: 1.0,
        })
    }

    pub fn with_sample_time(mut self, sample_time: f64) -> Self {
        self.sample_time = sample_time;
        self
    }

    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }

    pub fn outputs(&self) -> usize {
        self.channels.len()
    }

    pub fn inputs(&self) -> usize {
        self.channels[0].len()
    }

    pub fn channel(&self, output: usize, input: usize) -> &SisoChannel {
        &self.channels[output][input]
    }

    pub fn channels(&self) -> &[Vec<SisoChannel>] {
        &self.channels
    }

    /// The same plant with every numerator multiplied by `scale`.
    pub fn with_gain_scale(&self, scale: f64) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|row| row.iter().map(|c| c.with_gain_scale(scale)).collect())
                .collect(),
            sample_time: self.sample_time,
        }
    }

    /// Smallest channel delay into each output (1 when a row is all zero).
    pub fn output_delays(&self) -> Vec<usize> {
        self.channels
            .iter()
            .map(|row| {
                row.iter()
                    .filter_map(SisoChannel::total_delay)
                    .min()
                    .unwrap_or(1)
            })
            .collect()
    }

    pub fn is_stable(&self) -> bool {
        self.channels
            .iter()
            .flatten()
            .all(|c| c.numerator.is_zero() || c.denominator.is_stable())
    }

    pub fn static_gains(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.outputs(), self.inputs(), |i, j| {
            self.channels[i][j].static_gain()
        })
    }
}

/// Simulates the plant from rest. `inputs` is T×m (one row per sample); the
/// optional `disturbances` (T×p) are added at the outputs.
pub fn simulate_plant(
    plant: &MimoPlant,
    inputs: &DMatrix<f64>,
    disturbances: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let (p, m) = (plant.outputs(), plant.inputs());
    if inputs.ncols() != m {
        return Err(Error::shape(format!(
            "input series has {} columns, plant has {m} inputs",
            inputs.ncols()
        )));
    }
    let t = inputs.nrows();
    if t == 0 {
        return Err(Error::shape("input series is empty"));
    }
    let mut out = match disturbances {
        Some(v) => {
            if v.shape() != (t, p) {
                return Err(Error::shape(format!(
                    "disturbance series is {}×{}, expected {t}×{p}",
                    v.nrows(),
                    v.ncols()
                )));
            }
            v.clone()
        }
        None => DMatrix::zeros(t, p),
    };
    for j in 0..m {
        let u: Vec<f64> = inputs.column(j).iter().copied().collect();
        for i in 0..p {
            let y = plant.channels[i][j].filter(&u);
            for k in 0..t {
                out[(k, i)] += y[k];
            }
        }
    }
    Ok(out)
}

/// Step-response coefficients `a_ij(1..=N)` for every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse {
    coeffs: Vec<Vec<Vec<f64>>>,
}

impl StepResponse {
    /// Builds from a p×m grid of coefficient lists of equal length N ≥ 1.
    pub fn from_coefficients(coeffs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let p = coeffs.len();
        if p == 0 || coeffs[0].is_empty() {
            return Err(Error::shape("step response grid is empty"));
        }
        let m = coeffs[0].len();
        let n = coeffs[0][0].len();
        if n == 0 {
            return Err(Error::invalid("model horizon", "must be at least 1"));
        }
        if coeffs
            .iter()
            .any(|row| row.len() != m || row.iter().any(|c| c.len() != n))
        {
            return Err(Error::shape("step response lists must share one length"));
        }
        Ok(Self { coeffs })
    }

    pub fn outputs(&self) -> usize {
        self.coeffs.len()
    }

    pub fn inputs(&self) -> usize {
        self.coeffs[0].len()
    }

    pub fn horizon(&self) -> usize {
        self.coeffs[0][0].len()
    }

    /// Coefficients `a_ij(1..=N)`, zero-based: element `k-1` is `a_ij(k)`.
    pub fn channel(&self, output: usize, input: usize) -> &[f64] {
        &self.coeffs[output][input]
    }

    /// `a_ij(k)` for `k ≥ 1`, holding the last coefficient beyond the horizon.
    pub fn at(&self, output: usize, input: usize, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let c = &self.coeffs[output][input];
        c[(k - 1).min(c.len() - 1)]
    }

    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.horizon() {
            return Err(Error::invalid(
                "model horizon",
                format!("cannot truncate {} coefficients to {n}", self.horizon()),
            ));
        }
        Ok(Self {
            coeffs: self
                .coeffs
                .iter()
                .map(|row| row.iter().map(|c| c[..n].to_vec()).collect())
                .collect(),
        })
    }

    /// CSV with columns `k, a_1_1, a_1_2, ...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut header = vec!["k".to_string()];
        for i in 0..self.outputs() {
            for j in 0..self.inputs() {
                header.push(format!("a_{}_{}", i + 1, j + 1));
            }
        }
        let mut w = crate::io::versioned_writer(out, "step-response")?;
        w.write_record(&header)?;
        for k in 1..=self.horizon() {
            let mut row = vec![k.to_string()];
            for i in 0..self.outputs() {
                for j in 0..self.inputs() {
                    row.push(self.at(i, j, k).to_string());
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Unit-step response of every channel over `n` samples.
pub fn step_response(plant: &MimoPlant, n: usize) -> Result<StepResponse> {
    if n < 1 {
        return Err(Error::invalid("model horizon", "must be at least 1"));
    }
    let step = vec![1.0; n + 1];
    let coeffs = plant
        .channels
        .iter()
        .map(|row| row.iter().map(|c| c.filter(&step)[1..].to_vec()).collect())
        .collect();
    StepResponse::from_coefficients(coeffs)
}

/// Impulse response `h_ij(0..n)` of every channel.
pub fn impulse_response(plant: &MimoPlant, n: usize) -> Vec<Vec<Vec<f64>>> {
    let mut pulse = vec![0.0; n];
    if n > 0 {
        pulse[0] = 1.0;
    }
    plant
        .channels
        .iter()
        .map(|row| row.iter().map(|c| c.filter(&pulse)).collect())
        .collect()
}

/// Incremental plant simulation for closed-loop use: read the output at the
/// current sample, then apply the input chosen for that sample.
pub struct PlantSimulator<'a> {
    plant: &'a MimoPlant,
    inputs: Vec<Vec<f64>>,
    states: Vec<Vec<Vec<f64>>>,
}

impl<'a> PlantSimulator<'a> {
    pub fn new(plant: &'a MimoPlant) -> Self {
        let (p, m) = (plant.outputs(), plant.inputs());
        Self {
            plant,
            inputs: vec![Vec::new(); m],
            states: vec![vec![Vec::new(); m]; p],
        }
    }

    /// Current sample index.
    pub fn time(&self) -> usize {
        self.inputs[0].len()
    }

    /// Noise-free output at the current sample; depends on past inputs only.
    pub fn output(&mut self) -> Vec<f64> {
        let k = self.time();
        let mut y = vec![0.0; self.plant.outputs()];
        for (i, row) in self.plant.channels.iter().enumerate() {
            for (j, ch) in row.iter().enumerate() {
                let state = &mut self.states[i][j];
                if state.len() == k {
                    let x = ch.sample(&self.inputs[j], state, k);
                    state.push(x);
                }
                y[i] += state[k];
            }
        }
        y
    }

    /// Records the input applied at the current sample and advances time.
    pub fn apply(&mut self, u: &[f64]) {
        self.output();
        for (series, &v) in self.inputs.iter_mut().zip(u) {
            series.push(v);
        }
    }
}

/// A filtered white-noise source `v = F(q⁻¹) e` with `var(e) = noise_variance`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmaDisturbance {
    pub filter: SisoChannel,
    pub noise_variance: f64,
    pub seed: u64,
}

impl ArmaDisturbance {
    pub fn new(filter: SisoChannel, noise_variance: f64, seed: u64) -> Result<Self> {
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::invalid(
                "noise_variance",
                format!("must be finite and ≥ 0, got {noise_variance}"),
            ));
        }
        Ok(Self {
            filter,
            noise_variance,
            seed,
        })
    }

    /// `(1 + c q⁻¹)/(1 − a q⁻¹) e`.
    pub fn first_order(c: f64, a: f64, noise_variance: f64, seed: u64) -> Result<Self> {
        let filter = SisoChannel::noise_filter(
            Polynomial::new(vec![1.0, c])?,
            Polynomial::monic(vec![1.0, -a])?,
        )?;
        Self::new(filter, noise_variance, seed)
    }

    /// One realization on the given stream of this seed.
    pub fn generate_stream(&self, length: usize, stream: u64) -> Vec<f64> {
        if self.noise_variance == 0.0 {
            return vec![0.0; length];
        }
        let e = GaussianSource::new(self.seed, stream).white_noise(length, self.noise_variance);
        self.filter.filter(&e)
    }

    /// Independent realizations for `outputs` channels (stream `i` for output
    /// `i`), as a length×outputs matrix.
    pub fn generate_outputs(&self, outputs: usize, length: usize) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(length, outputs);
        for i in 0..outputs {
            let series = self.generate_stream(length, i as u64);
            v.column_mut(i).copy_from_slice(&series);
        }
        v
    }
}

/// One realization of the disturbance (stream 0).
pub fn generate_disturbance(d: &ArmaDisturbance, length: usize) -> Vec<f64> {
    d.generate_stream(length, 0)
}
