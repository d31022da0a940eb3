//! Polynomials in the unit-delay operator q⁻¹.

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Coefficients in ascending powers of q⁻¹: `c[0] + c[1] q⁻¹ + c[2] q⁻² + ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::invalid("polynomial", "coefficient list is empty"));
        }
        if let Some(bad) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::invalid(
                "polynomial",
                format!("non-finite coefficient {bad}"),
            ));
        }
        Ok(Self { coeffs })
    }

    /// A polynomial whose leading coefficient is exactly one.
    pub fn monic(coeffs: Vec<f64>) -> Result<Self> {
        let poly = Self::new(coeffs)?;
        if poly.coeffs[0] != 1.0 {
            return Err(Error::invalid(
                "polynomial",
                format!("leading coefficient must be 1, got {}", poly.coeffs[0]),
            ));
        }
        Ok(poly)
    }

    pub fn one() -> Self {
        Self { coeffs: vec![1.0] }
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: vec![c] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn is_monic(&self) -> bool {
        self.coeffs[0] == 1.0
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Number of leading zero coefficients, i.e. the pure delay carried by the
    /// polynomial. `None` for the zero polynomial.
    pub fn leading_zeros(&self) -> Option<usize> {
        self.coeffs.iter().position(|&c| c != 0.0)
    }

    /// Evaluates the polynomial at `q⁻¹ = x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|c| c * k).collect(),
        }
    }

    /// Roots in the z-plane, where `q⁻¹ = z⁻¹`. Leading zeros (pure delays)
    /// carry no roots; trailing zeros give roots at the origin.
    pub fn roots(&self) -> Vec<Complex<f64>> {
        let Some(start) = self.leading_zeros() else {
            return Vec::new();
        };
        let c = &self.coeffs[start..];
        let n = c.len() - 1;
        if n == 0 {
            return Vec::new();
        }
        let mut companion = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            companion[(0, k)] = -c[k + 1] / c[0];
        }
        for k in 1..n {
            companion[(k, k - 1)] = 1.0;
        }
        companion.complex_eigenvalues().iter().copied().collect()
    }

    pub fn max_root_modulus(&self) -> f64 {
        self.roots().iter().map(|r| r.norm()).fold(0.0, f64::max)
    }

    /// True when every root lies strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.max_root_modulus() < 1.0
    }

    /// Builds `lead · Π (1 − r q⁻¹)` from z-plane roots. Complex roots must come
    /// in conjugate pairs for the result to be real.
    pub fn from_roots(roots: &[Complex<f64>], lead: f64) -> Self {
        let mut acc = vec![Complex::new(lead, 0.0)];
        for &r in roots {
            let mut next = vec![Complex::new(0.0, 0.0); acc.len() + 1];
            for (k, &a) in acc.iter().enumerate() {
                next[k] += a;
                next[k + 1] -= a * r;
            }
            acc = next;
        }
        Self {
            coeffs: acc.into_iter().map(|c| c.re).collect(),
        }
    }

    /// Reflects roots outside the unit circle to their conjugate reciprocals,
    /// keeping the leading coefficient. Returns the polynomial unchanged when
    /// it is already stable.
    pub fn reflected_inside(&self) -> Self {
        let roots = self.roots();
        if roots.iter().all(|r| r.norm() < 1.0) {
            return self.clone();
        }
        let reflected: Vec<_> = roots
            .iter()
            .map(|&r| {
                let m = r.norm();
                if m > 1.0 + 1e-9 {
                    r.conj().inv()
                } else if m >= 1.0 {
                    r * (1.0 - 1e-6) / m
                } else {
                    r
                }
            })
            .collect();
        let start = self.leading_zeros().unwrap_or(0);
        let mut coeffs = vec![0.0; start];
        coeffs.extend(Self::from_roots(&reflected, self.coeffs[start]).coeffs);
        coeffs.resize(self.coeffs.len(), 0.0);
        Self { coeffs }
    }
}

impl TryFrom<Vec<f64>> for Polynomial {
    type Error = Error;
    fn try_from(coeffs: Vec<f64>) -> Result<Self> {
        Self::new(coeffs)
    }
}

impl From<Polynomial> for Vec<f64> {
    fn from(p: Polynomial) -> Self {
        p.coeffs
    }
}
