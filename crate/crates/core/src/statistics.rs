//! Action-angle extraction and the ensemble statistics used to compare
//! full and effective dynamics.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::{stream_rng, uniform, Domain};

/// Actions `I_k = |v_k|²/2` and angles `φ_k = Arg v_k ∈ [0, 2π)`, `φ_k = 0` at `v_k = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionAngle {
    pub actions: Vec<f64>,
    pub angles: Vec<f64>,
}

pub fn angle(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let a = z.im.atan2(z.re);
    let a = if a < 0.0 { a + TAU } else { a };
    if a >= TAU {
        0.0
    } else {
        a
    }
}

pub fn actions_angles(v: &[Complex64]) -> ActionAngle {
    ActionAngle {
        actions: v.iter().map(|z| 0.5 * z.norm_sqr()).collect(),
        angles: v.iter().map(|z| angle(*z)).collect(),
    }
}

/// Pairwise summation; the result does not depend on thread scheduling.
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 16 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// A point estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    /// `|value − target| ≤ k·se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se
    }

    /// Distance to `target` in standard errors.
    pub fn z(&self, target: f64) -> f64 {
        (self.value - target) / self.se
    }
}

/// Sample mean with the iid standard error.
pub fn mean_se(x: &[f64]) -> Estimate {
    let n = x.len() as f64;
    let mean = pairwise_sum(x) / n;
    let dev: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
    let var = if x.len() > 1 { pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
    Estimate { value: mean, se: (var / n).sqrt() }
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Wasserstein-1 distance between two empirical distributions on the line.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    let (a, b) = (sorted(a), sorted(b));
    if a.len() == b.len() {
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect();
        return Ok(pairwise_sum(&d) / a.len() as f64);
    }
    // ∫₀¹ |F_a⁻¹(t) − F_b⁻¹(t)| dt over the merged quantile breakpoints
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut t = 0.0;
    let mut acc = 0.0;
    while i < na && j < nb {
        let ta = (i + 1) as f64 / na as f64;
        let tb = (j + 1) as f64 / nb as f64;
        let next = ta.min(tb);
        acc += (next - t) * (a[i] - b[j]).abs();
        t = next;
        if ta <= next {
            i += 1;
        }
        if tb <= next {
            j += 1;
        }
    }
    Ok(acc)
}

/// Bootstrap standard error of [`wasserstein1_1d`], resampling both sets.
pub fn wasserstein1_bootstrap_se(a: &[f64], b: &[f64], reps: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut rng = stream_rng(seed, Domain::Bootstrap, 0);
    let draw = |x: &[f64], rng: &mut dyn RngCore| -> Vec<f64> {
        (0..x.len()).map(|_| x[(uniform(rng) * x.len() as f64) as usize]).collect()
    };
    let reps: Vec<f64> = (0..reps)
        .map(|_| {
            let ra = draw(a, &mut rng);
            let rb = draw(b, &mut rng);
            wasserstein1_1d(&ra, &rb)
        })
        .collect::<Result<_>>()?;
    let e = mean_se(&reps);
    Ok(e.se * (reps.len() as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Uniformity {
    pub n: usize,
    /// Mean resultant length `|n⁻¹ Σ e^{iφ_j}|`.
    pub resultant: f64,
    /// Kolmogorov–Smirnov distance of `φ/2π` to the uniform law.
    pub ks: f64,
}

impl Uniformity {
    /// Resultant and KS thresholds of the uniform null at about 99%.
    pub fn passes_99(&self) -> bool {
        let sqrt_n = (self.n as f64).sqrt();
        self.resultant <= 3.0 / sqrt_n && self.ks <= 1.63 / sqrt_n
    }
}

pub fn circular_uniformity(angles: &[f64]) -> Result<Uniformity> {
    if angles.is_empty() {
        return Err(Error::EmptySamples);
    }
    let n = angles.len();
    let c: Vec<f64> = angles.iter().map(|a| a.cos()).collect();
    let s: Vec<f64> = angles.iter().map(|a| a.sin()).collect();
    let resultant = pairwise_sum(&c).hypot(pairwise_sum(&s)) / n as f64;
    let u = sorted(&angles.iter().map(|a| a.rem_euclid(TAU) / TAU).collect::<Vec<_>>());
    let ks = u
        .iter()
        .enumerate()
        .map(|(i, x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
        .fold(0.0, f64::max);
    Ok(Uniformity { n, resultant, ks })
}

/// Time-weighted fraction of `[t_0, t_last]` spent in `{I ≤ δ}`, with the
/// action held constant on each sampling interval.
pub fn occupation_below(times: &[f64], actions: &[f64], delta: f64) -> Result<f64> {
    if actions.is_empty() || times.len() != actions.len() {
        return Err(Error::EmptySamples);
    }
    if actions.len() == 1 {
        return Ok(if actions[0] <= delta { 1.0 } else { 0.0 });
    }
    let span = times[times.len() - 1] - times[0];
    let inside: f64 = times
        .windows(2)
        .zip(actions)
        .filter(|(_, a)| **a <= delta)
        .map(|(w, _)| w[1] - w[0])
        .sum();
    Ok(inside / span)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub n: usize,
    pub mean_re: Estimate,
    pub mean_im: Estimate,
    /// `E|v|²`.
    pub second: Estimate,
    /// `E|v|⁴`.
    pub fourth: Estimate,
    /// `E|v|⁴ / (2 (E|v|²)²)`, equal to 1 for a circular complex Gaussian.
    pub kurtosis_ratio: Estimate,
}

/// Moments of complex samples with delete-one-group jackknife standard
/// errors over `groups` contiguous blocks (`groups = n` is the ordinary
/// jackknife; one block per trajectory handles correlated pooled samples).
pub fn gaussian_moment_check(samples: &[Complex64], groups: usize) -> Result<GaussianMoments> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::EmptySamples);
    }
    let g = groups.clamp(2, n);
    // per-group sums of (re, im, |v|², |v|⁴) and counts
    let mut sums = vec![[0.0f64; 4]; g];
    let mut counts = vec![0usize; g];
    for (i, z) in samples.iter().enumerate() {
        let gi = i * g / n;
        let r2 = z.norm_sqr();
        sums[gi][0] += z.re;
        sums[gi][1] += z.im;
        sums[gi][2] += r2;
        sums[gi][3] += r2 * r2;
        counts[gi] += 1;
    }
    let total: [f64; 4] = std::array::from_fn(|c| pairwise_sum(&sums.iter().map(|s| s[c]).collect::<Vec<_>>()));
    let stats = |s: [f64; 4], cnt: f64| -> [f64; 5] {
        let m2 = s[2] / cnt;
        let m4 = s[3] / cnt;
        [s[0] / cnt, s[1] / cnt, m2, m4, m4 / (2.0 * m2 * m2)]
    };
    let full = stats(total, n as f64);
    let loo: Vec<[f64; 5]> = (0..g)
        .map(|gi| {
            let s = std::array::from_fn(|c| total[c] - sums[gi][c]);
            stats(s, (n - counts[gi]) as f64)
        })
        .collect();
    let se = |c: usize| -> f64 {
        let mean = loo.iter().map(|x| x[c]).sum::<f64>() / g as f64;
        let ss: f64 = loo.iter().map(|x| (x[c] - mean).powi(2)).sum();
        ((g as f64 - 1.0) / g as f64 * ss).sqrt()
    };
    let est = |c: usize| Estimate { value: full[c], se: se(c) };
    Ok(GaussianMoments {
        n,
        mean_re: est(0),
        mean_im: est(1),
        second: est(2),
        fourth: est(3),
        kurtosis_ratio: est(4),
    })
}

/// Per-mode statistics of an ensemble snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    /// `E_k = ½ E|v_k|²`.
    #[serde(rename = "E_k")]
    pub energy: Estimate,
    /// Variance of the action `I_k`.
    pub var: f64,
    pub kurtosis_ratio: Estimate,
    pub resultant: f64,
    pub ks: f64,
    pub wasserstein_vs: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n_samples: usize,
    pub modes: Vec<ModeSummary>,
    #[serde(skip)]
    actions: Vec<Vec<f64>>,
}

impl EnsembleSummary {
    /// `samples[k]` holds the samples of `v_k`; all modes equally long.
    /// `groups` is passed to [`gaussian_moment_check`].
    pub fn from_samples(samples: &[Vec<Complex64>], groups: usize) -> Result<Self> {
        let n = samples.first().map_or(0, Vec::len);
        if n < 2 {
            return Err(Error::EmptySamples);
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, got: bad.len() });
        }
        let mut modes = Vec::with_capacity(samples.len());
        let mut actions = Vec::with_capacity(samples.len());
        for s in samples {
            let act: Vec<f64> = s.iter().map(|z| 0.5 * z.norm_sqr()).collect();
            let ang: Vec<f64> = s.iter().map(|z| angle(*z)).collect();
            let energy = mean_se(&act);
            let var = act.iter().map(|a| (a - energy.value).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            let g = gaussian_moment_check(s, groups)?;
            let u = circular_uniformity(&ang)?;
            modes.push(ModeSummary {
                energy,
                var,
                kurtosis_ratio: g.kurtosis_ratio,
                resultant: u.resultant,
                ks: u.ks,
                wasserstein_vs: BTreeMap::new(),
            });
            actions.push(act);
        }
        Ok(Self { n_samples: n, modes, actions })
    }

    pub fn actions(&self, mode: usize) -> &[f64] {
        &self.actions[mode]
    }

    /// Records the per-mode action Wasserstein distances to `other` under `run_id`.
    pub fn compare(&mut self, run_id: &str, other: &EnsembleSummary) -> Result<Vec<f64>> {
        let d: Vec<f64> = self
            .actions
            .iter()
            .zip(&other.actions)
            .map(|(a, b)| wasserstein1_1d(a, b))
            .collect::<Result<_>>()?;
        for (m, x) in self.modes.iter_mut().zip(&d) {
            m.wasserstein_vs.insert(run_id.to_string(), *x);
        }
        Ok(d)
    }
}
