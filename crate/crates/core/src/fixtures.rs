//! Benchmark plants and controller settings used by the examples, the
//! acceptance suite and the documentation scenarios.

use crate::dmc::{Bounds, ControllerSpec};
use crate::lti::{ArmaDisturbance, MimoPlant, SisoChannel};
use crate::poly::Polynomial;
use crate::sim::{SetpointEvent, SetpointProgram};

fn channel(num: &[f64], den: &[f64], extra_delay: usize) -> SisoChannel {
    SisoChannel::new(
        Polynomial::new(num.to_vec()).expect("fixture numerator"),
        Polynomial::monic(den.to_vec()).expect("fixture denominator"),
        extra_delay,
    )
    .expect("fixture channel")
}

fn process_a_with_delays(extra: [usize; 2]) -> MimoPlant {
    let den1 = [1.0, -1.7347, 0.7660];
    let den2 = [1.0, -1.3490, 0.5140];
    MimoPlant::new(vec![
        vec![
            channel(&[0.0, 0.045, 0.045], &den1, extra[0]),
            channel(&[0.0, 0.12, 0.015], &den1, extra[0]),
        ],
        vec![
            channel(&[0.0, 0.07, 0.05], &den2, extra[1]),
            channel(&[0.0, 0.05, 0.02], &den2, extra[1]),
        ],
    ])
    .expect("fixture plant")
}

/// Second-order 2×2 plant with one sample of delay on every channel.
pub fn process_a() -> MimoPlant {
    process_a_with_delays([0, 0])
}

/// Process A with output delays of 2 and 4 samples.
pub fn process_b() -> MimoPlant {
    process_a_with_delays([1, 3])
}

/// First-order-lag 2×2 plant with output delays of 10 and 2 samples, used as
/// the comparison benchmark.
pub fn process_c() -> MimoPlant {
    let pole = 0.93;
    let gains = [[1.0, 1.5], [0.8, 0.4]];
    let extra = [9, 1];
    let rows = (0..2)
        .map(|i| {
            (0..2)
                .map(|j| channel(&[0.0, gains[i][j] * (1.0 - pole)], &[1.0, -pole], extra[i]))
                .collect()
        })
        .collect();
    MimoPlant::new(rows).expect("fixture plant")
}

/// Ill-conditioned 2×2 plant `[[4, −5], [−3, 4]]/(100 s + 1)` sampled at one
/// second, used for tight input-bound scenarios.
pub fn process_d() -> MimoPlant {
    let pole = (-0.01f64).exp();
    let gains = [[4.0, -5.0], [-3.0, 4.0]];
    let rows = (0..2)
        .map(|i| {
            (0..2)
                .map(|j| channel(&[0.0, gains[i][j] * (1.0 - pole)], &[1.0, -pole], 0))
                .collect()
        })
        .collect();
    MimoPlant::new(rows).expect("fixture plant")
}

/// `(1 + 0.23 q⁻¹)/(1 − 0.9 q⁻¹) e` with `var(e) = 0.01`.
pub fn comparison_disturbance(seed: u64) -> ArmaDisturbance {
    ArmaDisturbance::first_order(0.23, 0.9, 0.01, seed).expect("fixture disturbance")
}

/// Three-term settings for Process A: λ = (4, 2).
pub fn process_a_spec() -> ControllerSpec {
    ControllerSpec::new(60, 40, 10, vec![50.0; 2], vec![1.0; 2], vec![800.0, 200.0], vec![1, 1])
}

/// Three-term settings for Process B with near-zero move suppression.
pub fn process_b_spec() -> ControllerSpec {
    ControllerSpec::new(55, 45, 10, vec![1.0; 2], vec![1e-4; 2], vec![1.0, 2.0], vec![2, 4])
}

/// Three-term point of the comparison sweep on Process C: `s = (4q, q)`.
pub fn process_c_three_term(q: f64) -> ControllerSpec {
    ControllerSpec::new(55, 45, 10, vec![q; 2], vec![1.0; 2], vec![4.0 * q, q], vec![10, 2])
}

/// Two-term point of the comparison sweep on Process C with first-order
/// reference shaping of time constants (2, 1).
pub fn process_c_two_term(q: f64) -> ControllerSpec {
    ControllerSpec::new(55, 45, 10, vec![q; 2], vec![1.0; 2], vec![0.0; 2], vec![10, 2])
        .with_reference_lambda(vec![2.0, 1.0])
}

/// Two-term settings for Process D with inputs bounded to ±0.7.
pub fn process_d_tight_spec() -> ControllerSpec {
    ControllerSpec::new(500, 60, 5, vec![1.0; 2], vec![0.01; 2], vec![0.0; 2], vec![1, 1])
        .with_bounds(Bounds::input_box(2, 0.7))
}

/// Setpoint steps to (0.1, 0.05) at sample 10; the steady inputs are
/// (0.65, 0.5), close to the bounds.
pub fn process_d_tight_program() -> SetpointProgram {
    SetpointProgram::new(vec![
        SetpointEvent::Step { output: 0, at: 10, value: 0.1 },
        SetpointEvent::Step { output: 1, at: 10, value: 0.05 },
    ])
}

/// The comparison q grid: `points` values spaced logarithmically over
/// [0.01, 1000].
pub fn comparison_q_grid(points: usize) -> Vec<f64> {
    crate::tuning::log_grid(1e-2, 1e3, points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_stable_with_stated_delays() {
        for (plant, delays) in [
            (process_a(), vec![1, 1]),
            (process_b(), vec![2, 4]),
            (process_c(), vec![10, 2]),
            (process_d(), vec![1, 1]),
        ] {
            assert!(plant.is_stable());
            assert_eq!(plant.output_delays(), delays);
        }
    }

    #[test]
    fn process_d_gain_matrix() {
        let g = process_d().static_gains();
        assert!((g[(0, 1)] + 5.0).abs() < 1e-12);
        assert!((g.determinant() - 1.0).abs() < 1e-9);
    }
}
