//! Exact time averages of trigonometric polynomials along linear flows
//! `q(t) = q0 + tΛ` on the torus.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `f(q) = Σ_s f_s e^{i s·q}` with finitely many terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPolynomial {
    pub terms: Vec<(Vec<i64>, Complex64)>,
}

impl TrigPolynomial {
    pub fn constant(dim: usize, c: f64) -> Self {
        Self { terms: vec![(vec![0; dim], Complex64::new(c, 0.0))] }
    }

    /// `cos(s·q)`.
    pub fn cos_harmonic(s: &[i64]) -> Self {
        let neg: Vec<i64> = s.iter().map(|x| -x).collect();
        let half = Complex64::new(0.5, 0.0);
        Self { terms: vec![(s.to_vec(), half), (neg, half)] }
    }

    /// Mean over the torus, `f_0`.
    pub fn mean(&self) -> Complex64 {
        self.terms.iter().filter(|(s, _)| s.iter().all(|&x| x == 0)).map(|(_, c)| c).sum()
    }

    pub fn eval(&self, q: &[f64]) -> Complex64 {
        self.terms
            .iter()
            .map(|(s, c)| c * Complex64::from_polar(1.0, dot(s, q)))
            .sum()
    }
}

fn dot(s: &[i64], x: &[f64]) -> f64 {
    s.iter().zip(x).map(|(&a, b)| a as f64 * b).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeAverage {
    pub average: Complex64,
    /// `|average − f_0|`.
    pub deviation: f64,
}

/// `(e^{ix} − 1)/(ix)`, continuous at 0.
fn phase_mean(x: f64) -> Complex64 {
    if x.abs() < 1e-6 {
        Complex64::new(1.0 - x * x / 6.0, x / 2.0)
    } else {
        (Complex64::from_polar(1.0, x) - 1.0) / Complex64::new(0.0, x)
    }
}

/// `(1/T) ∫₀^T f(q0 + tΛ) dt`, integrated exactly term by term.
pub fn time_average_quasiperiodic(
    f: &TrigPolynomial,
    freqs: &[f64],
    q0: &[f64],
    horizon: f64,
) -> Result<TimeAverage> {
    if q0.len() != freqs.len() {
        return Err(Error::DimensionMismatch { expected: freqs.len(), got: q0.len() });
    }
    if let Some((s, _)) = f.terms.iter().find(|(s, _)| s.len() != freqs.len()) {
        return Err(Error::DimensionMismatch { expected: freqs.len(), got: s.len() });
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidParams("horizon must be positive".into()));
    }
    let average: Complex64 = f
        .terms
        .iter()
        .map(|(s, c)| {
            let omega = dot(s, freqs);
            c * Complex64::from_polar(1.0, dot(s, q0)) * phase_mean(omega * horizon)
        })
        .sum();
    Ok(TimeAverage { average, deviation: (average - f.mean()).norm() })
}

/// Largest deviation over horizons in `[T, 2T]` (sampled on `samples`
/// equispaced points); removes the oscillating factor of a single horizon.
pub fn decay_envelope(
    f: &TrigPolynomial,
    freqs: &[f64],
    q0: &[f64],
    horizon: f64,
    samples: usize,
) -> Result<f64> {
    let samples = samples.max(2);
    (0..samples).try_fold(0.0_f64, |acc, i| {
        let t = horizon * (1.0 + i as f64 / (samples - 1) as f64);
        Ok(acc.max(time_average_quasiperiodic(f, freqs, q0, t)?.deviation))
    })
}
