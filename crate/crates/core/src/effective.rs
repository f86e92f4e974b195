//! Effective (averaged) equations
//!
//! ```text
//! dv_k = R_k(v) dτ + Y_k dβ_k,
//! ```
//!
//! with the rotation-invariant drift `R` obtained by averaging the
//! perturbation over the torus of angles. Closed forms exist for `p ∈ {0, 1}`;
//! [`phase_average_oracle`] evaluates the average numerically for any `p`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coefficients::EffectiveCoefficients;
use crate::dynamics::{Component, EnergyRates, FullSystem, ModelParams, Stepper};
use crate::error::{Error, Result};
use crate::noise::{stream_rng, uniform, Domain};
use crate::statistics::{mean_se, Estimate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// `R_k = −(κ(λ_k − M_k) + γ_R) v_k`.
    LinearP0,
    /// `R_k = −v_k (κ(λ_k − M_k) + γ_R Σ_l |v_l|² L_{kl})`.
    CubicP1,
}

/// Closed-form effective drift. `γ_I` never enters.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveDrift {
    pub kind: DriftKind,
    /// `κ(λ_k − M_k)`, plus `κ` under the shifted Laplacian.
    pub damping: Vec<f64>,
    pub gamma_r: f64,
    pub l: DMatrix<f64>,
}

impl EffectiveDrift {
    pub fn new(params: &ModelParams, coeffs: &EffectiveCoefficients) -> Result<Self> {
        let kind = match (params.linear_damping_substitute, params.p) {
            (true, _) | (false, 0) => DriftKind::LinearP0,
            (false, 1) => DriftKind::CubicP1,
            (false, p) => {
                return Err(Error::Unsupported(format!(
                    "closed-form effective drift exists for p = 0 and p = 1 only, got p = {p}"
                )))
            }
        };
        let kappa = if params.linear_damping_substitute { 0.0 } else { params.kappa };
        let shift = if params.laplacian_shift { 1.0 } else { 0.0 };
        let damping = coeffs.stiffness().iter().map(|s| kappa * (s + shift)).collect();
        Ok(Self { kind, damping, gamma_r: params.gamma_r, l: coeffs.l.clone() })
    }

    pub fn m(&self) -> usize {
        self.damping.len()
    }

    /// Total modulus damping `κ(λ_k − M_k) + γ_R D_k(v)`.
    fn rates(&self, v: &[Complex64], out: &mut [f64]) {
        match self.kind {
            DriftKind::LinearP0 => {
                for (o, d) in out.iter_mut().zip(&self.damping) {
                    *o = d + self.gamma_r;
                }
            }
            DriftKind::CubicP1 => {
                for (k, o) in out.iter_mut().enumerate() {
                    let d: f64 = v.iter().enumerate().map(|(l, z)| z.norm_sqr() * self.l[(k, l)]).sum();
                    *o = self.damping[k] + self.gamma_r * d;
                }
            }
        }
    }
}

pub fn drift_effective(v: &[Complex64], drift: &EffectiveDrift) -> Result<Vec<Complex64>> {
    if v.len() != drift.m() {
        return Err(Error::DimensionMismatch { expected: drift.m(), got: v.len() });
    }
    let mut rates = vec![0.0; v.len()];
    drift.rates(v, &mut rates);
    Ok(v.iter().zip(&rates).map(|(z, r)| -z * r).collect())
}

/// Per-component Monte-Carlo estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexEstimate {
    pub re: Estimate,
    pub im: Estimate,
}

impl ComplexEstimate {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re.value, self.im.value)
    }

    /// Both parts within `k` standard errors of `target` (plus a rounding floor).
    pub fn within(&self, target: Complex64, k: f64) -> bool {
        let floor = 1e-12 * (1.0 + target.norm());
        (self.re.value - target.re).abs() <= k * self.re.se + floor
            && (self.im.value - target.im).abs() <= k * self.im.se + floor
    }
}

/// `∫ e^{−iθ_k} P_k(Φ_θ v) dθ` by sampling independent uniform phases.
pub fn phase_average_oracle(
    system: &FullSystem,
    component: Component,
    v: &[Complex64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ComplexEstimate>> {
    if n_samples < 1000 {
        return Err(Error::InvalidParams(format!("n_samples must be >= 1000, got {n_samples}")));
    }
    let m = system.modes();
    if v.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: v.len() });
    }
    let mut rng = stream_rng(seed, Domain::Phases, 0);
    let mut re = vec![Vec::with_capacity(n_samples); m];
    let mut im = vec![Vec::with_capacity(n_samples); m];
    let mut rotated = vec![Complex64::new(0.0, 0.0); m];
    let mut phases = vec![Complex64::new(0.0, 0.0); m];
    for _ in 0..n_samples {
        for k in 0..m {
            phases[k] = Complex64::from_polar(1.0, std::f64::consts::TAU * uniform(&mut rng));
            rotated[k] = v[k] * phases[k];
        }
        let p = system.component(component, &rotated);
        for k in 0..m {
            let z = p[k] * phases[k].conj();
            re[k].push(z.re);
            im[k].push(z.im);
        }
    }
    Ok((0..m).map(|k| ComplexEstimate { re: mean_se(&re[k]), im: mean_se(&im[k]) }).collect())
}

/// Semi-implicit integrator for the effective equations.
#[derive(Clone, Debug)]
pub struct EffectiveSystem {
    drift: EffectiveDrift,
    y: Vec<f64>,
    h: f64,
    steps: usize,
    horizon: f64,
    blowup_threshold: f64,
}

impl EffectiveSystem {
    /// Step size `h_max` of the model's step policy; `ν` plays no role.
    pub fn new(params: &ModelParams, coeffs: &EffectiveCoefficients) -> Result<Self> {
        let steps = (params.horizon / params.step.h_max).ceil().max(1.0) as usize;
        Self::with_steps(params, coeffs, steps)
    }

    pub fn with_steps(params: &ModelParams, coeffs: &EffectiveCoefficients, steps: usize) -> Result<Self> {
        let steps = steps.max(1);
        Ok(Self {
            drift: EffectiveDrift::new(params, coeffs)?,
            y: coeffs.y.clone(),
            h: params.horizon / steps as f64,
            steps,
            horizon: params.horizon,
            blowup_threshold: params.blowup_threshold,
        })
    }

    pub fn drift(&self) -> &EffectiveDrift {
        &self.drift
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// `v'_k = (v_k + Y_k Δβ_k) / (1 + h κ(λ_k − M_k) + h γ_R D_k(v))`.
    pub fn step_effective(&self, v: &mut [Complex64], dbeta: &[Complex64]) {
        let mut scratch = self.scratch();
        self.advance(v, dbeta, &mut scratch);
    }
}

impl Stepper for EffectiveSystem {
    fn modes(&self) -> usize {
        self.y.len()
    }

    fn noise_dim(&self) -> usize {
        self.y.len()
    }

    fn step_size(&self) -> f64 {
        self.h
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn blowup_threshold(&self) -> f64 {
        self.blowup_threshold
    }

    fn scratch(&self) -> Vec<Complex64> {
        vec![Complex64::new(0.0, 0.0); self.y.len()]
    }

    fn advance(&self, v: &mut [Complex64], dbeta: &[Complex64], scratch: &mut [Complex64]) -> EnergyRates {
        let m = self.y.len();
        let mut rates = vec![0.0; m];
        self.drift.rates(v, &mut rates);
        let mut out = EnergyRates { forcing: self.y.iter().map(|y| y * y).sum(), ..Default::default() };
        for k in 0..m {
            let a = v[k].norm_sqr();
            out.dissipation_viscous += self.drift.damping[k] * a;
            out.dissipation_nonlinear += (rates[k] - self.drift.damping[k]) * a;
            scratch[k] = (v[k] + dbeta[k] * self.y[k]) / (1.0 + self.h * rates[k]);
        }
        v.copy_from_slice(&scratch[..m]);
        out
    }
}

/// Stationary `σ_k² = E|v_k|²` of the linear effective equations:
/// `Y_k² / (κ(λ_k − M_k) + γ_R)`. Applies when the drift is linear, i.e.
/// `γ_R = 0` or `p = 0`.
pub fn stationary_gaussian_reference(params: &ModelParams, coeffs: &EffectiveCoefficients) -> Result<Vec<f64>> {
    let linear = params.linear_damping_substitute || params.p == 0 || params.gamma_r == 0.0;
    if !linear {
        return Err(Error::Unsupported(format!(
            "no Gaussian reference for gamma_r = {} with p = {}",
            params.gamma_r, params.p
        )));
    }
    let kappa = if params.linear_damping_substitute { 0.0 } else { params.kappa };
    let shift = if params.laplacian_shift { 1.0 } else { 0.0 };
    coeffs
        .stiffness()
        .iter()
        .zip(&coeffs.y)
        .enumerate()
        .map(|(k, (s, y))| {
            let total = kappa * (s + shift) + params.gamma_r;
            if total <= 1e-12 {
                Err(Error::DegenerateMode { mode: k + 1, gap: total })
            } else {
                Ok(y * y / total)
            }
        })
        .collect()
}

/// `Re⟨R(v), v⟩ + Σ Y_k²`, the mean rate of `½‖v‖²`.
pub fn energy_drift(v: &[Complex64], drift: &EffectiveDrift, y: &[f64]) -> Result<f64> {
    let r = drift_effective(v, drift)?;
    let dot: f64 = r.iter().zip(v).map(|(a, b)| (a * b.conj()).re).sum();
    Ok(dot + y.iter().map(|x| x * x).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::NoiseSpec;
    use crate::dynamics::{simulate_ensemble, simulate_trajectory, SampleSchedule};
    use crate::noise::complex_normal;
    use crate::spectral::{build_basis, PotentialSpec};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn coeffs(potential: &PotentialSpec, m: usize, noise: &NoiseSpec) -> (crate::spectral::SpectralBasis, EffectiveCoefficients) {
        let basis = build_basis(potential, m, 4 * m).unwrap();
        let co = EffectiveCoefficients::compute(&basis, noise).unwrap();
        (basis, co)
    }

    fn random_state(seed: u64, m: usize, scale: f64) -> Vec<Complex64> {
        let mut rng = stream_rng(seed, Domain::Synthetic, 0);
        (0..m).map(|_| complex_normal(&mut rng) * scale).collect()
    }

    #[test]
    fn linear_drift_without_viscosity() {
        let noise = NoiseSpec::Explicit { b: vec![1.0] };
        let (_, co) = coeffs(&PotentialSpec::cosines(vec![1.0, 0.5]), 4, &noise);
        let params = ModelParams::linear_damping(0.1, 0.8, 0.2, 1, noise, 1.0);
        let d = EffectiveDrift::new(&params, &co).unwrap();
        assert_eq!(d.kind, DriftKind::LinearP0);
        let v = random_state(1, 4, 1.0);
        let r = drift_effective(&v, &d).unwrap();
        for k in 0..4 {
            assert_eq!(r[k], -v[k] * 0.8);
        }
        assert!(drift_effective(&v[..3], &d).is_err());
    }

    #[test]
    fn cubic_drift_on_a_single_free_mode() {
        let noise = NoiseSpec::Explicit { b: vec![1.0] };
        let (_, co) = coeffs(&PotentialSpec::zero(), 3, &noise);
        let params = ModelParams::new(0.1, 0.4, 0.7, 0.3, 1, 1, noise, 1.0);
        let d = EffectiveDrift::new(&params, &co).unwrap();
        let a = c(0.6, -1.1);
        let r = drift_effective(&[a, c(0.0, 0.0), c(0.0, 0.0)], &d).unwrap();
        let want = -a * (0.4 + 0.7 * a.norm_sqr() * 3.0 / (4.0 * PI));
        assert!((r[0] - want).norm() < 1e-12);
        assert_eq!(r[1], c(0.0, 0.0));
    }

    #[test]
    fn higher_powers_have_no_closed_form() {
        let noise = NoiseSpec::Explicit { b: vec![1.0] };
        let (_, co) = coeffs(&PotentialSpec::zero(), 3, &noise);
        let params = ModelParams::new(0.1, 0.4, 1.0, 0.0, 2, 1, noise, 1.0);
        assert!(matches!(EffectiveDrift::new(&params, &co), Err(Error::Unsupported(_))));
    }

    #[test]
    fn gamma_i_does_not_enter() {
        let noise = NoiseSpec::Explicit { b: vec![1.0] };
        let (_, co) = coeffs(&PotentialSpec::cosines(vec![1.0, 0.2]), 3, &noise);
        let a = EffectiveDrift::new(&ModelParams::new(0.1, 0.4, 0.3, 0.7, 1, 1, noise.clone(), 1.0), &co).unwrap();
        let b = EffectiveDrift::new(&ModelParams::new(0.1, 0.4, 0.3, 0.0, 1, 3, noise, 1.0), &co).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_reproduces_diagonal_linear_parts() {
        let noise = NoiseSpec::Explicit { b: vec![0.0] };
        let potential = PotentialSpec::cosines(vec![1.0, 0.6, -0.3]);
        let (basis, co) = coeffs(&potential, 4, &noise);
        let params = ModelParams::new(0.1, 0.5, 0.5, 0.5, 0, 0, noise, 1.0);
        let sys = FullSystem::new(&params, &basis, &co).unwrap();
        let d = EffectiveDrift::new(&params, &co).unwrap();
        let v = random_state(2, 4, 1.0);
        // P¹ mixes modes through V; its average keeps only the diagonal −κ(λ − M)
        let r1 = phase_average_oracle(&sys, Component::P1, &v, 4000, 9).unwrap();
        for k in 0..4 {
            let want = -v[k] * d.damping[k];
            assert!(r1[k].within(want, 4.0), "{k}: {:?} vs {want}", r1[k]);
        }
        let r2 = phase_average_oracle(&sys, Component::P2, &v, 1000, 9).unwrap();
        for k in 0..4 {
            assert!((r2[k].value() + v[k] * 0.5).norm() < 1e-12);
        }
        assert!(phase_average_oracle(&sys, Component::P2, &v, 999, 9).is_err());
    }

    #[test]
    fn oracle_matches_cubic_closed_form() {
        let noise = NoiseSpec::Explicit { b: vec![0.0] };
        let potential = PotentialSpec::cosines(vec![1.0, 0.4, 0.2]);
        let (basis, co) = coeffs(&potential, 4, &noise);
        let params = ModelParams::new(0.1, 0.0, 0.6, 0.4, 1, 1, noise, 1.0);
        let sys = FullSystem::new(&params, &basis, &co).unwrap();
        let d = EffectiveDrift::new(&params, &co).unwrap();
        let v = random_state(3, 4, 0.8);
        let closed = drift_effective(&v, &d).unwrap();
        let est = phase_average_oracle(&sys, Component::P2, &v, 20_000, 4).unwrap();
        for k in 0..4 {
            assert!(est[k].within(closed[k], 4.0), "{k}: {:?} vs {}", est[k], closed[k]);
        }
        let ham = phase_average_oracle(&sys, Component::P3, &v, 20_000, 5).unwrap();
        for k in 0..4 {
            let action: Vec<f64> = vec![(v[k].conj() * ham[k].value()).re];
            let se = v[k].norm() * ham[k].re.se.hypot(ham[k].im.se);
            assert!(action[0].abs() <= 4.0 * se + 1e-12, "{k}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn drift_commutes_with_rotations(seed in 0u64..1000, theta in proptest::collection::vec(0.0..6.3f64, 4)) {
            let noise = NoiseSpec::Explicit { b: vec![1.0] };
            let (_, co) = coeffs(&PotentialSpec::cosines(vec![1.0, 0.3]), 4, &noise);
            let d = EffectiveDrift::new(&ModelParams::new(0.1, 0.3, 1.0, 0.0, 1, 1, noise, 1.0), &co).unwrap();
            let v = random_state(seed, 4, 1.0);
            let rot: Vec<Complex64> = theta.iter().map(|t| Complex64::from_polar(1.0, *t)).collect();
            let rv: Vec<Complex64> = v.iter().zip(&rot).map(|(a, b)| a * b).collect();
            let r = drift_effective(&v, &d).unwrap();
            let rr = drift_effective(&rv, &d).unwrap();
            for k in 0..4 {
                prop_assert!((rr[k] - r[k] * rot[k]).norm() < 1e-12);
            }
        }

        #[test]
        fn cubic_drift_is_monotone(seed in 0u64..1000, scale in 0.1..3.0f64) {
            let noise = NoiseSpec::Explicit { b: vec![1.0] };
            let (_, co) = coeffs(&PotentialSpec::cosines(vec![1.0, 0.5, 0.2]), 4, &noise);
            let d = EffectiveDrift::new(&ModelParams::new(0.1, 0.2, 1.0, 0.0, 1, 1, noise, 1.0), &co).unwrap();
            let a = random_state(seed, 4, scale);
            let b = random_state(seed + 5000, 4, scale);
            let (ra, rb) = (drift_effective(&a, &d).unwrap(), drift_effective(&b, &d).unwrap());
            let mut dot = 0.0;
            let mut h1 = 0.0;
            for k in 0..4 {
                let dv = a[k] - b[k];
                dot += ((ra[k] - rb[k]) * dv.conj()).re;
                h1 += d.damping[k] * dv.norm_sqr();
            }
            prop_assert!(dot <= -h1 * (1.0 - 1e-12) + 1e-12);
        }

        #[test]
        fn semi_implicit_step_contracts(seed in 0u64..1000, h in 1e-4..5e-2f64) {
            let noise = NoiseSpec::Explicit { b: vec![0.5, 0.3, 0.2, 0.1] };
            let (_, co) = coeffs(&PotentialSpec::cosines(vec![1.0, 0.5]), 4, &noise);
            let params = ModelParams::new(0.1, 0.2, 1.0, 0.0, 1, 1, noise, h);
            let sys = EffectiveSystem::with_steps(&params, &co, 1).unwrap();
            let mut a = random_state(seed, 4, 1.5);
            let mut b = random_state(seed + 7000, 4, 1.5);
            let db = random_state(seed + 9000, 4, h.sqrt());
            let before: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum();
            sys.step_effective(&mut a, &db);
            sys.step_effective(&mut b, &db);
            let after: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).norm_sqr()).sum();
            prop_assert!(after.sqrt() <= before.sqrt() + 1e-10);
        }
    }

    #[test]
    fn implicit_linear_decay() {
        let noise = NoiseSpec::Explicit { b: vec![0.0] };
        let (_, co) = coeffs(&PotentialSpec::zero(), 2, &noise);
        let params = ModelParams::linear_damping(0.1, 1.0, 0.0, 1, noise, 1.0);
        for steps in [100usize, 1000] {
            let sys = EffectiveSystem::with_steps(&params, &co, steps).unwrap();
            let tr = simulate_trajectory(&sys, &[c(1.0, 0.0), c(0.0, 2.0)], &sys.noise_plan(0, 0), &SampleSchedule::fixed(&[1.0]))
                .unwrap();
            let want = (1.0 + 1.0 / steps as f64).powi(-(steps as i32));
            assert!((tr.samples[0].v[0].re - want).abs() < 1e-12);
            assert!((want - (-1.0f64).exp()).abs() < 1.0 / steps as f64);
        }
    }

    #[test]
    fn gaussian_references() {
        let b: Vec<f64> = (1..=4).map(|k| (-(k as f64)).exp()).collect();
        let noise = NoiseSpec::Explicit { b: b.clone() };
        let (_, co) = coeffs(&PotentialSpec::zero(), 4, &noise);
        let damped = ModelParams::linear_damping(0.1, 1.0, 0.0, 1, noise.clone(), 1.0);
        let s = stationary_gaussian_reference(&damped, &co).unwrap();
        for k in 0..4 {
            assert!((s[k] - (-2.0 * (k + 1) as f64).exp()).abs() < 1e-14);
        }
        let viscous = ModelParams::new(0.1, 1.0, 0.0, 1.0, 1, 1, noise.clone(), 1.0);
        let s = stationary_gaussian_reference(&viscous, &co).unwrap();
        for k in 0..4 {
            let kk = ((k + 1) * (k + 1)) as f64;
            assert!((s[k] - b[k] * b[k] / kk).abs() < 1e-12);
        }
        let (_, co2) = coeffs(&PotentialSpec::zero(), 4, &NoiseSpec::Explicit { b: b.iter().map(|x| 2.0 * x).collect() });
        let s2 = stationary_gaussian_reference(&viscous, &co2).unwrap();
        for k in 0..4 {
            assert!((s2[k] / s[k] - 4.0).abs() < 1e-12);
        }
        let cubic = ModelParams::new(0.1, 1.0, 1.0, 0.0, 1, 1, noise.clone(), 1.0);
        assert!(stationary_gaussian_reference(&cubic, &co).is_err());
        let frozen = ModelParams::new(0.1, 0.0, 0.0, 1.0, 1, 1, noise, 1.0);
        assert!(matches!(stationary_gaussian_reference(&frozen, &co), Err(Error::DegenerateMode { mode: 1, .. })));
    }

    #[test]
    fn linear_stationary_action_is_weakly_accurate() {
        let noise = NoiseSpec::Explicit { b: vec![0.8, 0.5] };
        let (_, co) = coeffs(&PotentialSpec::zero(), 2, &noise);
        let mut params = ModelParams::linear_damping(0.1, 1.0, 0.0, 1, noise, 200.0);
        params.step.h_max = 1e-2;
        let sys = EffectiveSystem::new(&params, &co).unwrap();
        let times: Vec<f64> = (0..=1900).map(|i| 10.0 + 0.1 * i as f64).collect();
        let ens = simulate_ensemble(&sys, &[c(0.0, 0.0); 2], 17, 40, &SampleSchedule::fixed(&times)).unwrap();
        for k in 0..2 {
            let per_traj: Vec<f64> = ens
                .trajectories
                .iter()
                .map(|t| t.samples.iter().map(|s| s.action_angle.actions[k]).sum::<f64>() / t.samples.len() as f64)
                .collect();
            let est = mean_se(&per_traj);
            let want = co.y[k] * co.y[k] / 2.0;
            assert!((est.value - want).abs() < 0.02 * want, "{k}: {est:?} vs {want}");
        }
    }

    #[test]
    fn action_drift_matches_lifted_drift() {
        let noise = NoiseSpec::Explicit { b: vec![0.6, 0.4, 0.3] };
        let (_, co) = coeffs(&PotentialSpec::cosines(vec![1.0, 0.3]), 3, &noise);
        let params = ModelParams::new(0.1, 0.3, 1.0, 0.0, 1, 1, noise, 0.02);
        let sys = EffectiveSystem::with_steps(&params, &co, 20).unwrap();
        let v0 = vec![c(0.8, 0.1), c(-0.4, 0.5), c(0.2, 0.2)];
        let ens = simulate_ensemble(&sys, &v0, 23, 4000, &SampleSchedule::fixed(&[0.0, 0.02])).unwrap();
        let r = drift_effective(&v0, sys.drift()).unwrap();
        for k in 0..3 {
            let rates: Vec<f64> = ens
                .trajectories
                .iter()
                .map(|t| (t.samples[1].action_angle.actions[k] - t.samples[0].action_angle.actions[k]) / 0.02)
                .collect();
            let est = mean_se(&rates);
            let want = (v0[k].conj() * r[k]).re + co.y[k] * co.y[k];
            // O(δ) bias from the drift evolving over the window
            assert!((est.value - want).abs() < 3.0 * est.se + 0.05 * want.abs(), "{k}: {est:?} vs {want}");
        }
    }
}
