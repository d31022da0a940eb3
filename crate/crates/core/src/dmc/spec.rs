use crate::{Error, Result};

/// Optional per-signal bounds. Absent vectors mean "no bound of that kind".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bounds {
    pub u_min: Option<Vec<f64>>,
    pub u_max: Option<Vec<f64>>,
    pub du_max: Option<Vec<f64>>,
    pub y_min: Option<Vec<f64>>,
    pub y_max: Option<Vec<f64>>,
}

impl Bounds {
    pub fn is_empty(&self) -> bool {
        self.u_min.is_none()
            && self.u_max.is_none()
            && self.du_max.is_none()
            && self.y_min.is_none()
            && self.y_max.is_none()
    }

    /// Symmetric input-level bounds `[-limit, limit]` on every input.
    pub fn input_box(m: usize, limit: f64) -> Self {
        Self {
            u_min: Some(vec![-limit; m]),
            u_max: Some(vec![limit; m]),
            ..Self::default()
        }
    }

    pub fn validate(&self, outputs: usize, inputs: usize) -> Result<()> {
        let check = |name: &str, v: &Option<Vec<f64>>, len: usize| -> Result<()> {
            if let Some(v) = v {
                if v.len() != len {
                    return Err(Error::shape(format!(
                        "bounds.{name} has {} entries, expected {len}",
                        v.len()
                    )));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::invalid(format!("bounds.{name}"), "must be finite"));
                }
            }
            Ok(())
        };
        check("u_min", &self.u_min, inputs)?;
        check("u_max", &self.u_max, inputs)?;
        check("du_max", &self.du_max, inputs)?;
        check("y_min", &self.y_min, outputs)?;
        check("y_max", &self.y_max, outputs)?;
        if let Some(du) = &self.du_max {
            if du.iter().any(|&x| x < 0.0) {
                return Err(Error::invalid("bounds.du_max", "must be ≥ 0"));
            }
        }
        let ordered = |lo: &Option<Vec<f64>>, hi: &Option<Vec<f64>>, name: &str| -> Result<()> {
            if let (Some(lo), Some(hi)) = (lo, hi) {
                if let Some(k) = lo.iter().zip(hi).position(|(a, b)| a > b) {
                    return Err(Error::invalid(
                        format!("bounds.{name}"),
                        format!(
                            "infeasible by construction: min {} > max {} on channel {}",
                            lo[k],
                            hi[k],
                            k + 1
                        ),
                    ));
                }
            }
            Ok(())
        };
        ordered(&self.u_min, &self.u_max, "u")?;
        ordered(&self.y_min, &self.y_max, "y")
    }
}

/// Horizons, weights, delays and bounds of one DMC controller.
///
/// A two-term controller is the special case `s = 0`. The optional
/// `reference_lambda` shapes the setpoint into the first-order trajectory
/// `y + (w − y)(1 − e^{−h/λ})` before it enters the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub model_horizon: usize,
    pub prediction_horizon: usize,
    pub control_horizon: usize,
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub delays: Vec<usize>,
    pub reference_lambda: Option<Vec<f64>>,
    pub bounds: Bounds,
}

impl ControllerSpec {
    pub fn new(
        model_horizon: usize,
        prediction_horizon: usize,
        control_horizon: usize,
        q: Vec<f64>,
        r: Vec<f64>,
        s: Vec<f64>,
        delays: Vec<usize>,
    ) -> Self {
        Self {
            model_horizon,
            prediction_horizon,
            control_horizon,
            q,
            r,
            s,
            delays,
            reference_lambda: None,
            bounds: Bounds::default(),
        }
    }

    pub fn with_reference_lambda(mut self, lambda: Vec<f64>) -> Self {
        self.reference_lambda = Some(lambda);
        self
    }

    pub fn with_bounds(mut self, bounds: Bounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn outputs(&self) -> usize {
        self.q.len()
    }

    pub fn inputs(&self) -> usize {
        self.r.len()
    }

    pub fn is_two_term(&self) -> bool {
        self.s.iter().all(|&s| s == 0.0)
    }

    pub fn is_constrained(&self) -> bool {
        !self.bounds.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p_h, m_h) = (
            self.model_horizon,
            self.prediction_horizon,
            self.control_horizon,
        );
        if !(1 <= m_h && m_h <= p_h && p_h <= n) {
            return Err(Error::invalid(
                "horizons",
                format!("need 1 ≤ M ≤ P ≤ N, got N={n}, P={p_h}, M={m_h}"),
            ));
        }
        let p = self.q.len();
        if p == 0 || self.r.is_empty() {
            return Err(Error::invalid("weights", "q and r must be non-empty"));
        }
        if self.s.len() != p || self.delays.len() != p {
            return Err(Error::shape(format!(
                "q has {p} entries but s has {} and delays {}",
                self.s.len(),
                self.delays.len()
            )));
        }
        for (name, w) in [("q", &self.q), ("r", &self.r), ("s", &self.s)] {
            if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(Error::invalid(name, format!("weights must be in [0, ∞), got {bad}")));
            }
        }
        for (i, &d) in self.delays.iter().enumerate() {
            if d < 1 || d > p_h {
                return Err(Error::invalid(
                    "delays",
                    format!("output {} delay {d} must lie in 1..={p_h}", i + 1),
                ));
            }
        }
        if let Some(l) = &self.reference_lambda {
            if l.len() != p {
                return Err(Error::shape("reference_lambda needs one entry per output"));
            }
            if l.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::invalid("reference_lambda", "time constants must be > 0"));
            }
        }
        for (i, &q) in self.q.iter().enumerate() {
            if q == 0.0 {
                log::warn!(
                    "output {} has q = 0: its tracking error is ignored and λ = √(s/q) is undefined",
                    i + 1
                );
            }
        }
        self.bounds.validate(p, self.r.len())
    }
}
