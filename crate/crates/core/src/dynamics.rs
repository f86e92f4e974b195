//! Pathwise integration of the full mode system
//!
//! ```text
//! v̇_k + iν⁻¹λ_k v_k = P_k(v) + Σ_j B_{kj} β̇_j,
//! ```
//!
//! with an exponential Euler–Maruyama step: the fast rotation is applied
//! exactly, drift and noise are explicit. The perturbation `P = P¹ + P² + P³`
//! is evaluated pseudo-spectrally on the basis quadrature grid.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::{EffectiveCoefficients, NoiseSpec};
use crate::error::{Error, Result};
use crate::noise::{stream_rng, uniform, Domain, NoisePlan};
use crate::spectral::SpectralBasis;
use crate::statistics::{actions_angles, mean_se, ActionAngle, Estimate};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `h = min(h_max, c·ν)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepPolicy {
    pub h_max: f64,
    pub c: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self { h_max: 1e-3, c: 0.1 }
    }
}

impl StepPolicy {
    pub fn step(&self, nu: f64) -> f64 {
        self.h_max.min(self.c * nu)
    }
}

fn default_blowup() -> f64 {
    1e6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Scale separation `0 < ν ≤ 1`.
    pub nu: f64,
    /// Viscosity `κ ≥ 0`.
    pub kappa: f64,
    pub gamma_r: f64,
    pub gamma_i: f64,
    pub p: u32,
    pub q: u32,
    pub noise: NoiseSpec,
    /// Slow-time horizon `T`.
    pub horizon: f64,
    /// Replace `κ∂²u − γ_R|u|^{2p}u` by the linear damping `−γ_R u`.
    #[serde(default)]
    pub linear_damping_substitute: bool,
    /// Use `κ(∂²u − u)` instead of `κ∂²u`.
    #[serde(default)]
    pub laplacian_shift: bool,
    #[serde(default)]
    pub step: StepPolicy,
    /// Trajectories whose `‖v‖` exceeds this are flagged and stopped.
    #[serde(default = "default_blowup")]
    pub blowup_threshold: f64,
}

impl ModelParams {
    pub fn new(nu: f64, kappa: f64, gamma_r: f64, gamma_i: f64, p: u32, q: u32, noise: NoiseSpec, horizon: f64) -> Self {
        Self {
            nu,
            kappa,
            gamma_r,
            gamma_i,
            p,
            q,
            noise,
            horizon,
            linear_damping_substitute: false,
            laplacian_shift: false,
            step: StepPolicy::default(),
            blowup_threshold: default_blowup(),
        }
    }

    /// Model with linear damping `−γ_R u` and no viscosity.
    pub fn linear_damping(nu: f64, gamma_r: f64, gamma_i: f64, q: u32, noise: NoiseSpec, horizon: f64) -> Self {
        Self { linear_damping_substitute: true, ..Self::new(nu, 0.0, gamma_r, gamma_i, 0, q, noise, horizon) }
    }

    pub fn step_size(&self) -> f64 {
        self.step.step(self.nu)
    }

    /// Constraint violations, each prefixed with its field path.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut push = |field: &str, msg: String| out.push(format!("{prefix}{field}: {msg}"));
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            push("nu", format!("must lie in (0, 1], got {}", self.nu));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            push("kappa", format!("must be finite and >= 0, got {}", self.kappa));
        }
        if !(self.gamma_r >= 0.0) {
            push("gamma_r", format!("must be >= 0, got {}", self.gamma_r));
        }
        if !(self.gamma_i >= 0.0) {
            push("gamma_i", format!("must be >= 0, got {}", self.gamma_i));
        }
        if (self.gamma_r + self.gamma_i - 1.0).abs() > 1e-12 {
            push(
                "gamma_r",
                format!("gamma_r + gamma_i must equal 1, got {} + {}", self.gamma_r, self.gamma_i),
            );
        }
        if self.kappa == 0.0 {
            if !(self.gamma_r > 0.0) {
                push("gamma_r", "kappa = 0 requires gamma_r > 0 (non-viscous damping regime)".into());
            }
            if self.p != 0 {
                push("p", format!("kappa = 0 requires p = 0 (non-viscous damping regime), got {}", self.p));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            push("horizon", format!("must be positive, got {}", self.horizon));
        }
        if !(self.step.h_max > 0.0 && self.step.c > 0.0) {
            push("step", "h_max and c must be positive".into());
        }
        if !(self.blowup_threshold > 0.0) {
            push("blowup_threshold", "must be positive".into());
        }
        if let Err(e) = self.noise.validate() {
            push("noise", e.to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations("");
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(v.join("; ")))
        }
    }
}

/// Coefficients in the eigenbasis at slow time `τ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeState {
    pub v: Vec<Complex64>,
    pub tau: f64,
}

impl ModeState {
    pub fn new(v: Vec<Complex64>) -> Self {
        Self { v, tau: 0.0 }
    }

    /// `Σ λ_k |v_k|²`.
    pub fn h1_norm_sqr(&self, lambda: &[f64]) -> f64 {
        self.v.iter().zip(lambda).map(|(z, l)| l * z.norm_sqr()).sum()
    }
}

pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Parts of the perturbation `P`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    /// Viscous part `κΨ(∂²u)`.
    P1,
    /// Dissipative nonlinearity `−γ_R Ψ(|u|^{2p}u)`.
    P2,
    /// Hamiltonian nonlinearity `−iγ_I Ψ(|u|^{2q}u)`.
    P3,
    Full,
}

/// Terms of the energy identity
/// `d(½‖u‖²) = (−γ_R |u|^{2p+2}_{2p+2} − κ‖u‖₁² + Σ_k Y_k²) dτ + dM`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyRates {
    pub dissipation_nonlinear: f64,
    pub dissipation_viscous: f64,
    pub forcing: f64,
}

impl EnergyRates {
    pub fn total(&self) -> f64 {
        self.forcing - self.dissipation_nonlinear - self.dissipation_viscous
    }

    pub fn magnitude(&self) -> f64 {
        self.forcing + self.dissipation_nonlinear + self.dissipation_viscous
    }
}

/// One step of an SDE in mode variables.
pub trait Stepper: Sync {
    fn modes(&self) -> usize;
    /// Number of complex Wiener increments consumed per step.
    fn noise_dim(&self) -> usize;
    fn step_size(&self) -> f64;
    fn horizon(&self) -> f64;
    fn blowup_threshold(&self) -> f64;
    fn scratch(&self) -> Vec<Complex64>;
    /// Advances `v` by one step with increments `dbeta`, returning the
    /// energy-identity rates at the pre-step state.
    fn advance(&self, v: &mut [Complex64], dbeta: &[Complex64], scratch: &mut [Complex64]) -> EnergyRates;

    fn steps(&self) -> usize {
        (self.horizon() / self.step_size()).round().max(1.0) as usize
    }

    fn noise_plan(&self, base_seed: u64, trajectory: u64) -> NoisePlan {
        NoisePlan::new(base_seed, trajectory, self.noise_dim(), self.step_size())
    }
}

/// The full (non-averaged) system on a truncated eigenbasis.
#[derive(Clone, Debug)]
pub struct FullSystem {
    params: ModelParams,
    m: usize,
    lambda: Vec<f64>,
    /// `φ_k(x_i)` on interior points of `(0, π)`, point-major.
    phi: Vec<f64>,
    v_grid: Vec<f64>,
    /// Folded trapezoidal weight `2·2π/N`.
    weight: f64,
    dispersion: Vec<Vec<(usize, f64)>>,
    noise_power: f64,
    rotation: Vec<Complex64>,
    n_noise: usize,
    h: f64,
    steps: usize,
}

impl FullSystem {
    pub fn new(params: &ModelParams, basis: &SpectralBasis, coeffs: &EffectiveCoefficients) -> Result<Self> {
        let h = params.step_size();
        if !(h > 0.0) {
            return Err(Error::InvalidParams(format!("step size must be positive, got {h}")));
        }
        let steps = (params.horizon / h).ceil().max(1.0) as usize;
        Self::with_steps(params, basis, coeffs, steps)
    }

    /// Uses exactly `steps` steps of size `horizon/steps`.
    pub fn with_steps(
        params: &ModelParams,
        basis: &SpectralBasis,
        coeffs: &EffectiveCoefficients,
        steps: usize,
    ) -> Result<Self> {
        let m = basis.m();
        if coeffs.m() != m {
            return Err(Error::DimensionMismatch { expected: m, got: coeffs.m() });
        }
        if coeffs.dispersion.ncols() != basis.n_galerkin() {
            return Err(Error::DimensionMismatch { expected: basis.n_galerkin(), got: coeffs.dispersion.ncols() });
        }
        let n = basis.n_grid();
        if !n.is_multiple_of(2) {
            return Err(Error::GridTooSmall { n_grid: n, required: n + 1 });
        }
        // |u|^{2r}u·φ_k is a sine polynomial of degree (2r+2)·n_galerkin
        let nonlinear_degree = [(params.gamma_r, params.p), (params.gamma_i, params.q)]
            .iter()
            .filter(|(g, r)| *g != 0.0 && *r > 0)
            .map(|(_, r)| *r as usize)
            .max();
        if let Some(r) = nonlinear_degree {
            let required = (2 * r + 2) * basis.n_galerkin();
            if n <= required {
                return Err(Error::GridTooSmall { n_grid: n, required });
            }
        }
        let steps = steps.max(1);
        let h = params.horizon / steps as f64;
        let half = n / 2;
        let mut phi = Vec::with_capacity((half - 1) * m);
        let mut v_grid = Vec::with_capacity(half - 1);
        for i in 1..half {
            for k in 0..m {
                phi.push(basis.phi()[(k, i)]);
            }
            v_grid.push(basis.potential_samples()[i]);
        }
        let dispersion = (0..m)
            .map(|k| {
                coeffs
                    .dispersion
                    .row(k)
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| **b != 0.0)
                    .map(|(j, b)| (j, *b))
                    .collect()
            })
            .collect();
        let rotation = basis
            .lambda()
            .iter()
            .map(|l| Complex64::from_polar(1.0, -l * h / params.nu))
            .collect();
        Ok(Self {
            params: params.clone(),
            m,
            lambda: basis.lambda().to_vec(),
            phi,
            v_grid,
            weight: 2.0 * basis.weight(),
            dispersion,
            noise_power: coeffs.noise_power(),
            rotation,
            n_noise: basis.n_galerkin(),
            h,
            steps,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    fn viscosity(&self) -> f64 {
        if self.params.linear_damping_substitute {
            0.0
        } else {
            self.params.kappa
        }
    }

    /// Evaluates the selected part of `P(v)` into `out`, and the energy rates.
    fn evaluate(&self, v: &[Complex64], which: Component, out: &mut [Complex64]) -> EnergyRates {
        let m = self.m;
        let pr = &self.params;
        let kappa = self.viscosity();
        let want = |c: Component| which == Component::Full || which == c;
        let (p1, p2, p3) = (want(Component::P1), want(Component::P2), want(Component::P3));

        // linear cases handled exactly in mode space
        let p2_linear = pr.linear_damping_substitute || pr.p == 0;
        let p3_linear = pr.q == 0;
        let grid_p1 = p1 && kappa != 0.0;
        let grid_p2 = p2 && pr.gamma_r != 0.0 && !p2_linear;
        let grid_p3 = p3 && pr.gamma_i != 0.0 && !p3_linear;

        out[..m].iter_mut().for_each(|z| *z = ZERO);
        let mut rates = EnergyRates { forcing: self.noise_power, ..Default::default() };
        let mut pot_energy = 0.0;
        let mut power_int = 0.0;
        let need_grid = grid_p1 || grid_p2 || grid_p3 || (kappa != 0.0) || (!p2_linear && pr.gamma_r != 0.0);

        if need_grid {
            for (i, row) in self.phi.chunks_exact(m).enumerate() {
                let mut u = ZERO;
                for (vk, p) in v.iter().zip(row) {
                    u += vk * *p;
                }
                let r2 = u.norm_sqr();
                let vi = self.v_grid[i];
                pot_energy += vi * r2;
                let mut g = ZERO;
                if grid_p1 {
                    g += u * (kappa * vi);
                }
                if !p2_linear {
                    let a = r2.powi(pr.p as i32);
                    power_int += a * r2;
                    if grid_p2 {
                        g -= u * (pr.gamma_r * a);
                    }
                }
                if grid_p3 {
                    let b = r2.powi(pr.q as i32) * pr.gamma_i;
                    g += Complex64::new(u.im * b, -u.re * b);
                }
                if g != ZERO {
                    for (o, p) in out.iter_mut().zip(row) {
                        *o += g * *p;
                    }
                }
            }
            out[..m].iter_mut().for_each(|z| *z *= self.weight);
            pot_energy *= self.weight;
            power_int *= self.weight;
        }

        let shift = if pr.laplacian_shift { 1.0 } else { 0.0 };
        let v2 = norm_sqr(v);
        for k in 0..m {
            if p1 && kappa != 0.0 {
                out[k] -= v[k] * (kappa * (self.lambda[k] + shift));
            }
            if p2 && p2_linear {
                out[k] -= v[k] * pr.gamma_r;
            }
            if p3 && p3_linear {
                out[k] += Complex64::new(v[k].im, -v[k].re) * pr.gamma_i;
            }
        }
        if kappa != 0.0 {
            let h1: f64 = v.iter().zip(&self.lambda).map(|(z, l)| l * z.norm_sqr()).sum();
            rates.dissipation_viscous = kappa * (h1 - pot_energy + shift * v2);
        }
        rates.dissipation_nonlinear = pr.gamma_r * if p2_linear { v2 } else { power_int };
        rates
    }

    /// `P(v) = P¹ + P² + P³`.
    pub fn drift_full(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.component(Component::Full, v)
    }

    pub fn component(&self, which: Component, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.m];
        self.evaluate(v, which, &mut out);
        out
    }

    pub fn energy_rates(&self, v: &[Complex64]) -> EnergyRates {
        let mut out = vec![ZERO; self.m];
        self.evaluate(v, Component::Full, &mut out)
    }

    /// `v'_k = e^{−iν⁻¹λ_k h}(v_k + h P_k(v) + Σ_j B_{kj} Δβ_j)`.
    pub fn step_full(&self, v: &mut [Complex64], dbeta: &[Complex64]) {
        let mut scratch = self.scratch();
        self.advance(v, dbeta, &mut scratch);
    }
}

impl Stepper for FullSystem {
    fn modes(&self) -> usize {
        self.m
    }

    fn noise_dim(&self) -> usize {
        self.n_noise
    }

    fn step_size(&self) -> f64 {
        self.h
    }

    fn horizon(&self) -> f64 {
        self.params.horizon
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn blowup_threshold(&self) -> f64 {
        self.params.blowup_threshold
    }

    fn scratch(&self) -> Vec<Complex64> {
        vec![ZERO; self.m]
    }

    fn advance(&self, v: &mut [Complex64], dbeta: &[Complex64], scratch: &mut [Complex64]) -> EnergyRates {
        let rates = self.evaluate(v, Component::Full, scratch);
        for k in 0..self.m {
            let mut z = v[k] + scratch[k] * self.h;
            for &(j, b) in &self.dispersion[k] {
                z += dbeta[j] * b;
            }
            v[k] = self.rotation[k] * z;
        }
        rates
    }
}

/// Snapshot recorded along a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub tau: f64,
    pub v: Vec<Complex64>,
    #[serde(flatten)]
    pub action_angle: ActionAngle,
    /// `½‖u(τ)‖²`.
    pub energy: f64,
    /// Left-point integral of the energy-identity drift over `[0, τ]`.
    pub drift_integral: f64,
    /// Same integral of the absolute drift terms.
    pub drift_magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlowUp {
    pub tau: f64,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trajectory: u64,
    /// Samples at the fixed schedule times.
    pub samples: Vec<TrajectorySample>,
    /// Samples at the random window times.
    #[serde(default)]
    pub window: Vec<TrajectorySample>,
    pub blowup: Option<BlowUp>,
}

/// `count` independent uniform times in `[start, end]` per trajectory:
/// draws from the time-averaged law with a flat weight on the window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

/// Which times to record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSchedule {
    /// The same slow times for every trajectory, snapped to the step grid.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default)]
    pub window: Option<Window>,
}

impl SampleSchedule {
    pub fn fixed(times: &[f64]) -> Self {
        Self { times: times.to_vec(), window: None }
    }

    pub fn window(start: f64, end: f64, count: usize) -> Self {
        Self { times: Vec::new(), window: Some(Window { start, end, count }) }
    }

    pub fn with_window(mut self, start: f64, end: f64, count: usize) -> Self {
        self.window = Some(Window { start, end, count });
        self
    }

    /// Sorted step indices of the fixed and window samples of one trajectory.
    pub fn step_indices(&self, h: f64, steps: usize, seed: u64, trajectory: u64) -> (Vec<usize>, Vec<usize>) {
        let snap = |t: f64| ((t / h).round().max(0.0) as usize).min(steps);
        let mut fixed: Vec<usize> = self.times.iter().map(|&t| snap(t)).collect();
        fixed.sort_unstable();
        let mut window: Vec<usize> = match self.window {
            Some(w) => {
                let mut rng = stream_rng(seed, Domain::SampleTimes, trajectory);
                (0..w.count).map(|_| snap(w.start + (w.end - w.start) * uniform(&mut rng))).collect()
            }
            None => Vec::new(),
        };
        window.sort_unstable();
        (fixed, window)
    }
}

/// Integrates one trajectory from `v0`, recording at the scheduled times.
pub fn simulate_trajectory<S: Stepper + ?Sized>(
    system: &S,
    v0: &[Complex64],
    plan: &NoisePlan,
    schedule: &SampleSchedule,
) -> Result<Trajectory> {
    let m = system.modes();
    if v0.len() != m {
        return Err(Error::DimensionMismatch { expected: m, got: v0.len() });
    }
    if plan.n_noise < system.noise_dim() {
        return Err(Error::DimensionMismatch { expected: system.noise_dim(), got: plan.n_noise });
    }
    let h = system.step_size();
    let steps = system.steps();
    let (fixed_steps, window_steps) = schedule.step_indices(h, steps, plan.base_seed, plan.trajectory);
    let threshold2 = system.blowup_threshold().powi(2);

    let mut v = v0.to_vec();
    let mut scratch = system.scratch();
    let mut dbeta = vec![ZERO; plan.n_noise.max(1)];
    let mut stream = plan.stream();
    let mut drift_integral = 0.0;
    let mut drift_magnitude = 0.0;
    let mut samples = Vec::with_capacity(fixed_steps.len());
    let mut window = Vec::with_capacity(window_steps.len());
    let mut next = fixed_steps.iter().peekable();
    let mut next_window = window_steps.iter().peekable();

    let record = |v: &[Complex64], n: usize, di: f64, dm: f64| TrajectorySample {
        tau: n as f64 * h,
        v: v.to_vec(),
        action_angle: actions_angles(v),
        energy: 0.5 * norm_sqr(v),
        drift_integral: di,
        drift_magnitude: dm,
    };

    for n in 0..=steps {
        while next.peek().is_some_and(|&&s| s == n) {
            samples.push(record(&v, n, drift_integral, drift_magnitude));
            next.next();
        }
        while next_window.peek().is_some_and(|&&s| s == n) {
            window.push(record(&v, n, drift_integral, drift_magnitude));
            next_window.next();
        }
        if n == steps {
            break;
        }
        stream.fill(&mut dbeta);
        let rates = system.advance(&mut v, &dbeta, &mut scratch);
        drift_integral += rates.total() * h;
        drift_magnitude += rates.magnitude() * h;
        let norm2 = norm_sqr(&v);
        if !norm2.is_finite() || norm2 > threshold2 {
            return Ok(Trajectory {
                trajectory: plan.trajectory,
                samples,
                window,
                blowup: Some(BlowUp { tau: (n + 1) as f64 * h, norm: norm2.sqrt() }),
            });
        }
    }
    Ok(Trajectory { trajectory: plan.trajectory, samples, window, blowup: None })
}

/// Independent trajectories `0..n` from a common initial state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub base_seed: u64,
    pub step_size: f64,
    pub trajectories: Vec<Trajectory>,
}

pub fn simulate_ensemble<S: Stepper + ?Sized>(
    system: &S,
    v0: &[Complex64],
    base_seed: u64,
    n: usize,
    schedule: &SampleSchedule,
) -> Result<Ensemble> {
    let trajectories = (0..n as u64)
        .into_par_iter()
        .map(|t| simulate_trajectory(system, v0, &system.noise_plan(base_seed, t), schedule))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { base_seed, step_size: system.step_size(), trajectories })
}

impl Ensemble {
    pub fn blowups(&self) -> usize {
        self.trajectories.iter().filter(|t| t.blowup.is_some()).count()
    }

    fn complete(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.iter().filter(|t| t.blowup.is_none())
    }

    /// `out[k]` = samples of `v_k` at sample index `s` over non-blown-up trajectories.
    pub fn mode_samples(&self, s: usize) -> Vec<Vec<Complex64>> {
        let m = self.trajectories.first().and_then(|t| t.samples.first()).map_or(0, |x| x.v.len());
        (0..m).map(|k| self.complete().map(|t| t.samples[s].v[k]).collect()).collect()
    }

    /// Window samples pooled per mode, grouped trajectory by trajectory.
    pub fn window_mode_samples(&self) -> Vec<Vec<Complex64>> {
        let m = self.trajectories.first().and_then(|t| t.window.first()).map_or(0, |x| x.v.len());
        (0..m)
            .map(|k| self.complete().flat_map(|t| t.window.iter().map(move |s| s.v[k])).collect())
            .collect()
    }

    pub fn window_angles(&self, k: usize) -> Vec<f64> {
        self.complete().flat_map(|t| t.window.iter().map(move |s| s.action_angle.angles[k])).collect()
    }

    pub fn complete_count(&self) -> usize {
        self.complete().count()
    }

    pub fn sample_times(&self) -> Vec<f64> {
        self.trajectories.first().map_or(Vec::new(), |t| t.samples.iter().map(|s| s.tau).collect())
    }
}

/// Energy-identity residual between consecutive sample times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPoint {
    pub tau_start: f64,
    pub tau_end: f64,
    /// `E[Δ½‖u‖²] − E[∫ drift]` with its standard error.
    pub residual: Estimate,
    /// `E ∫ |drift terms|` over the interval.
    pub scale: f64,
    pub normalized: f64,
}

/// Requires at least 100 complete trajectories with fixed sample times.
pub fn energy_balance_residual(ensemble: &Ensemble) -> Result<Vec<ResidualPoint>> {
    let trajs: Vec<&Trajectory> = ensemble.complete().collect();
    if trajs.len() < 100 {
        return Err(Error::InvalidParams(format!("need >= 100 trajectories, got {}", trajs.len())));
    }
    let ns = trajs[0].samples.len();
    (0..ns.saturating_sub(1))
        .map(|s| {
            let d: Vec<f64> = trajs
                .iter()
                .map(|t| {
                    let (a, b) = (&t.samples[s], &t.samples[s + 1]);
                    (b.energy - a.energy) - (b.drift_integral - a.drift_integral)
                })
                .collect();
            let mag: Vec<f64> = trajs
                .iter()
                .map(|t| t.samples[s + 1].drift_magnitude - t.samples[s].drift_magnitude)
                .collect();
            let residual = mean_se(&d);
            let scale = mean_se(&mag).value;
            Ok(ResidualPoint {
                tau_start: trajs[0].samples[s].tau,
                tau_end: trajs[0].samples[s + 1].tau,
                residual,
                scale,
                normalized: if scale > 0.0 { residual.value / scale } else { residual.value },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{build_basis, PotentialSpec};
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn setup(potential: PotentialSpec, m: usize, params: &ModelParams) -> (SpectralBasis, EffectiveCoefficients) {
        let basis = build_basis(&potential, m, 4 * m).unwrap();
        let coeffs = EffectiveCoefficients::compute(&basis, &params.noise).unwrap();
        (basis, coeffs)
    }

    fn quiet() -> NoiseSpec {
        NoiseSpec::Explicit { b: vec![0.0] }
    }

    fn system(potential: PotentialSpec, m: usize, params: &ModelParams) -> FullSystem {
        let (basis, coeffs) = setup(potential, m, params);
        FullSystem::new(params, &basis, &coeffs).unwrap()
    }

    #[test]
    fn step_policy_and_validation() {
        let p = ModelParams::new(0.05, 0.1, 1.0, 0.0, 1, 1, quiet(), 1.0);
        assert_eq!(p.step_size(), 1e-3);
        assert_eq!(ModelParams { nu: 1e-3, ..p.clone() }.step_size(), 1e-4);
        assert!(p.validate().is_ok());
        let bad = ModelParams { gamma_r: 0.7, ..p.clone() };
        assert!(bad.violations("model.")[0].starts_with("model.gamma_r"));
        let inviscid = ModelParams { kappa: 0.0, ..p.clone() };
        assert!(inviscid.validate().is_err());
        assert!(ModelParams::linear_damping(0.1, 1.0, 0.0, 1, quiet(), 1.0).validate().is_ok());
        assert!(ModelParams { nu: 0.0, ..p }.validate().is_err());
    }

    #[test]
    fn viscous_part_on_free_modes_is_minus_kappa_k_squared() {
        let params = ModelParams::new(0.1, 0.3, 1.0, 0.0, 1, 1, quiet(), 1.0);
        let sys = system(PotentialSpec::zero(), 4, &params);
        let v = vec![c(1.0, -0.5), c(0.2, 0.3), c(-0.7, 0.1), c(0.05, 0.9)];
        let p1 = sys.component(Component::P1, &v);
        for k in 0..4 {
            let want = v[k] * (-0.3 * ((k + 1) * (k + 1)) as f64);
            assert!((p1[k] - want).norm() < 1e-12, "{k}: {} vs {}", p1[k], want);
        }
    }

    #[test]
    fn viscous_part_with_constant_potential_vanishes() {
        // ∂²u + c u − λ u on eigenfunctions with λ_k = k² + c: P¹_k = −κ k² v_k
        let params = ModelParams::new(0.1, 0.3, 1.0, 0.0, 1, 1, quiet(), 1.0);
        let sys = system(PotentialSpec::constant(2.0), 3, &params);
        let v = vec![c(1.0, 0.0), c(0.0, 1.0), c(0.5, 0.5)];
        let p1 = sys.component(Component::P1, &v);
        for k in 0..3 {
            let want = v[k] * (-0.3 * ((k + 1) * (k + 1)) as f64);
            assert!((p1[k] - want).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_exponent_damping_is_linear() {
        let params = ModelParams::new(0.1, 0.2, 0.6, 0.4, 0, 0, quiet(), 1.0);
        let sys = system(PotentialSpec::cosines(vec![1.0, 0.3]), 3, &params);
        let v = vec![c(0.3, -0.2), c(1.0, 0.4), c(-0.1, 0.8)];
        let p2 = sys.component(Component::P2, &v);
        let p3 = sys.component(Component::P3, &v);
        for k in 0..3 {
            assert_eq!(p2[k], -v[k] * 0.6);
            assert_eq!(p3[k], -Complex64::i() * v[k] * 0.4);
        }
    }

    #[test]
    fn cubic_terms_of_a_single_sine_mode() {
        // sin³x = (3 sin x − sin 3x)/4
        let params = ModelParams::new(0.1, 0.0, 0.7, 0.3, 1, 1, quiet(), 1.0);
        let sys = system(PotentialSpec::zero(), 4, &params);
        let a = c(0.8, -0.6) * 1.3;
        let v = vec![a, c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)];
        let cube = a * a.norm_sqr();
        let p2 = sys.component(Component::P2, &v);
        let p3 = sys.component(Component::P3, &v);
        let expect = [-3.0 / (4.0 * PI), 0.0, 1.0 / (4.0 * PI), 0.0];
        for k in 0..4 {
            assert!((p2[k] - cube * (0.7 * expect[k])).norm() < 1e-12, "P2 {k}");
            assert!((p3[k] - Complex64::i() * cube * (0.3 * expect[k])).norm() < 1e-12, "P3 {k}");
        }
    }

    #[test]
    fn nonlinearity_matches_fine_grid_quadrature() {
        let params = ModelParams::new(0.1, 0.2, 0.5, 0.5, 2, 1, quiet(), 1.0);
        let potential = PotentialSpec::cosines(vec![1.0, 0.4, -0.2]);
        let basis = build_basis(&potential, 3, 12).unwrap();
        let coeffs = EffectiveCoefficients::compute(&basis, &params.noise).unwrap();
        let sys = FullSystem::new(&params, &basis, &coeffs).unwrap();
        let v = vec![c(0.4, 0.1), c(-0.3, 0.5), c(0.2, -0.6)];
        let got = sys.drift_full(&v);

        // independent quadrature: reconstruct u on a fine grid from Ψ and project
        let n = 4096;
        let w = 2.0 * PI / n as f64;
        let mut want = [ZERO; 3];
        for i in 0..n {
            let x = i as f64 * w;
            let mut u = ZERO;
            let mut uxx = ZERO;
            let phis: Vec<f64> = (0..3)
                .map(|k| (0..12).map(|j| basis.psi()[(k, j)] * ((j + 1) as f64 * x).sin() / PI.sqrt()).sum())
                .collect();
            for k in 0..3 {
                u += v[k] * phis[k];
                for j in 0..12 {
                    let jj = (j + 1) as f64;
                    uxx -= v[k] * (basis.psi()[(k, j)] * jj * jj * (jj * x).sin() / PI.sqrt());
                }
            }
            let r2 = u.norm_sqr();
            let g = uxx * 0.2 - u * (0.5 * r2 * r2) - Complex64::i() * u * (0.5 * r2);
            for k in 0..3 {
                want[k] += g * (phis[k] * w);
            }
        }
        for k in 0..3 {
            assert!((got[k] - want[k]).norm() < 1e-10, "{k}: {} vs {}", got[k], want[k]);
        }
    }

    #[test]
    fn coarse_grid_is_refused() {
        let params = ModelParams::new(0.1, 0.2, 1.0, 0.0, 5, 1, quiet(), 1.0);
        let (basis, coeffs) = setup(PotentialSpec::zero(), 2, &params);
        assert!(matches!(FullSystem::new(&params, &basis, &coeffs), Err(Error::GridTooSmall { .. })));
    }

    #[test]
    fn free_rotation_is_exact() {
        let params = ModelParams::new(0.01, 0.0, 0.0, 0.0, 0, 0, quiet(), 0.37);
        let sys = system(PotentialSpec::constant(0.5), 3, &params);
        let v0 = vec![c(1.0, 0.0), c(0.3, 0.4), c(0.0, -2.0)];
        let plan = sys.noise_plan(1, 0);
        let tr = simulate_trajectory(&sys, &v0, &plan, &SampleSchedule::fixed(&[0.37])).unwrap();
        let v = &tr.samples[0].v;
        let lambda = [1.5, 4.5, 9.5];
        for k in 0..3 {
            let want = v0[k] * Complex64::from_polar(1.0, -lambda[k] * 0.37 / 0.01);
            assert!((v[k] - want).norm() < 1e-10);
        }
        assert!((norm_sqr(v) - norm_sqr(&v0)).abs() < 1e-12);
    }

    #[test]
    fn linear_viscous_decay_converges_to_exponential() {
        let params = ModelParams::new(0.2, 0.5, 0.0, 0.0, 0, 0, quiet(), 1.0);
        let sys = system(PotentialSpec::zero(), 3, &params);
        let v0 = vec![c(1.0, 0.0), c(0.0, 1.0), c(0.6, 0.8)];
        let plan = sys.noise_plan(3, 0);
        let tr = simulate_trajectory(&sys, &v0, &plan, &SampleSchedule::fixed(&[1.0])).unwrap();
        let h = sys.step_size();
        for k in 0..3 {
            let a = 0.5 * ((k + 1) * (k + 1)) as f64;
            let exact = (-2.0 * a).exp() * v0[k].norm_sqr();
            let got = tr.samples[0].v[k].norm_sqr();
            assert!(((got - exact) / exact).abs() < 2.0 * a * a * h, "{k}");
        }
    }

    #[test]
    fn strong_error_is_first_order() {
        let noise = NoiseSpec::Explicit { b: vec![0.5, 0.3, 0.2] };
        let params = ModelParams::new(0.5, 0.4, 0.6, 0.4, 1, 1, noise, 0.5);
        let (basis, coeffs) = setup(PotentialSpec::cosines(vec![1.0, 0.3]), 3, &params);
        let fine_steps = 4096;
        let reference = FullSystem::with_steps(&params, &basis, &coeffs, fine_steps).unwrap();
        let v0 = vec![c(0.5, 0.2), c(-0.3, 0.1), c(0.1, 0.4)];
        let end = SampleSchedule::fixed(&[0.5]);
        let paths = 16;
        let mut errors = Vec::new();
        for factor in [32usize, 64, 128] {
            let coarse = FullSystem::with_steps(&params, &basis, &coeffs, fine_steps / factor).unwrap();
            let mut err = 0.0;
            for t in 0..paths {
                let plan = reference.noise_plan(11, t);
                let vf = &simulate_trajectory(&reference, &v0, &plan, &end).unwrap().samples[0].v;
                let vc = &simulate_trajectory(&coarse, &v0, &plan.coarsened(factor), &end).unwrap().samples[0].v;
                err += vf.iter().zip(vc).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            }
            errors.push(err / paths as f64);
        }
        for w in errors.windows(2) {
            let ratio = w[1] / w[0];
            assert!(ratio > 1.6 && ratio < 2.6, "errors {errors:?}");
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let noise = NoiseSpec::Exponential { amplitude: 0.5, rate: 0.5 };
        let params = ModelParams::new(0.1, 0.2, 1.0, 0.0, 1, 1, noise, 0.2);
        let sys = system(PotentialSpec::cosines(vec![1.0, 0.2]), 3, &params);
        let v0 = vec![ZERO; 3];
        let schedule = SampleSchedule::fixed(&[0.2]).with_window(0.1, 0.2, 3);
        let a = simulate_ensemble(&sys, &v0, 42, 4, &schedule).unwrap();
        let b = simulate_ensemble(&sys, &v0, 42, 4, &schedule).unwrap();
        assert_eq!(a, b);
        let single = simulate_trajectory(&sys, &v0, &sys.noise_plan(42, 2), &schedule).unwrap();
        assert_eq!(single, a.trajectories[2]);
        let c = simulate_ensemble(&sys, &v0, 43, 4, &schedule).unwrap();
        assert_ne!(a.trajectories[0].samples[0].v, c.trajectories[0].samples[0].v);
        let t = &a.trajectories[1];
        assert_eq!(t.window.len(), 3);
        assert!(t.window.iter().all(|s| (0.1 - 1e-12..=0.2 + 1e-12).contains(&s.tau)));
        assert_ne!(t.window[0].tau, a.trajectories[0].window[0].tau);
    }

    #[test]
    fn step_commutes_with_global_phase() {
        let noise = NoiseSpec::Explicit { b: vec![0.3, 0.2, 0.1] };
        let params = ModelParams::new(0.1, 0.2, 0.5, 0.5, 1, 2, noise, 1.0);
        let sys = system(PotentialSpec::cosines(vec![1.0, 0.5]), 3, &params);
        let rot = Complex64::from_polar(1.0, 1.234);
        let mut v = vec![c(0.4, 0.1), c(-0.3, 0.5), c(0.2, -0.6)];
        let db: Vec<Complex64> = (0..12).map(|j| c(0.01 * j as f64, -0.02)).collect();
        let mut w: Vec<Complex64> = v.iter().map(|z| z * rot).collect();
        let dbw: Vec<Complex64> = db.iter().map(|z| z * rot).collect();
        sys.step_full(&mut v, &db);
        sys.step_full(&mut w, &dbw);
        for k in 0..3 {
            assert!((v[k] * rot - w[k]).norm() < 1e-14);
        }
    }

    #[test]
    fn unforced_energy_does_not_increase() {
        let params = ModelParams::new(0.05, 0.1, 0.5, 0.5, 1, 1, quiet(), 2.0);
        let sys = system(PotentialSpec::cosines(vec![1.0, 0.3, 0.1]), 4, &params);
        let v0 = vec![c(1.0, 0.5), c(-0.4, 0.8), c(0.3, 0.3), c(0.1, -0.2)];
        let times: Vec<f64> = (0..=40).map(|i| i as f64 * 0.05).collect();
        let tr = simulate_trajectory(&sys, &v0, &sys.noise_plan(0, 0), &SampleSchedule::fixed(&times)).unwrap();
        for w in tr.samples.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-15);
        }
        // the deterministic identity holds up to the O(h) splitting error
        let last = tr.samples.last().unwrap();
        let resid = last.energy - tr.samples[0].energy - last.drift_integral;
        assert!(resid.abs() < 0.02 * last.drift_magnitude, "{resid} vs {}", last.drift_magnitude);
    }

    #[test]
    fn energy_identity_holds_in_mean() {
        let noise = NoiseSpec::Explicit { b: vec![0.6, 0.4, 0.3] };
        let params = ModelParams::new(0.1, 0.3, 1.0, 0.0, 1, 1, noise, 0.5);
        let sys = system(PotentialSpec::cosines(vec![1.0, 0.3]), 3, &params);
        let v0 = vec![c(0.3, 0.0), ZERO, ZERO];
        let ens = simulate_ensemble(&sys, &v0, 5, 200, &SampleSchedule::fixed(&[0.0, 0.25, 0.5])).unwrap();
        let res = energy_balance_residual(&ens).unwrap();
        assert_eq!(res.len(), 2);
        for r in &res {
            assert!(r.residual.value.abs() < 4.0 * r.residual.se + 0.01 * r.scale, "{r:?}");
        }
        let few = Ensemble { trajectories: ens.trajectories[..10].to_vec(), ..ens };
        assert!(energy_balance_residual(&few).is_err());
    }

    #[test]
    fn blowup_is_flagged() {
        let noise = NoiseSpec::Explicit { b: vec![1.0] };
        let mut params = ModelParams::new(0.1, 0.1, 1.0, 0.0, 1, 1, noise, 1.0);
        params.blowup_threshold = 0.5;
        let sys = system(PotentialSpec::zero(), 2, &params);
        let tr = simulate_trajectory(&sys, &[c(1.0, 0.0), ZERO], &sys.noise_plan(0, 0), &SampleSchedule::fixed(&[1.0]))
            .unwrap();
        assert!(tr.blowup.is_some());
        assert!(tr.samples.is_empty());
    }
}
