use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, Recipe, RecipeOutput, StreamRange, SystemKind};
use crate::coefficients::{CoefficientDump, EffectiveCoefficients};
use crate::dynamics::{
    energy_balance_residual, simulate_ensemble, simulate_trajectory, Ensemble, FullSystem, ModelParams,
    ResidualPoint, SampleSchedule, Stepper, TrajectorySample,
};
use crate::effective::{stationary_gaussian_reference, EffectiveSystem};
use crate::error::{Error, Result};
use crate::spectral::{
    build_basis_with_grid, check_nonresonance, decay_envelope, time_average_quasiperiodic, BasisDump, Cluster,
    ResonanceReport, ResonanceSearch, SpectralBasis, TrigPolynomial,
};
use crate::statistics::{
    circular_uniformity, gaussian_moment_check, mean_se, wasserstein1_1d, wasserstein1_bootstrap_se, EnsembleSummary,
    Estimate, Uniformity,
};

/// Offset separating the effective ensemble's seed from the full ones.
const EFFECTIVE_SEED_OFFSET: u64 = 1 << 32;

pub(super) fn json_output<T: Serialize>(report: &T) -> RecipeOutput {
    RecipeOutput { summary: serde_json::to_value(report).expect("report serializes"), files: Vec::new() }
}

pub fn setup(cfg: &ExperimentConfig) -> Result<(SpectralBasis, EffectiveCoefficients)> {
    let basis = build_basis_with_grid(&cfg.potential, cfg.m, cfg.n_galerkin, cfg.n_grid())?;
    let coeffs = EffectiveCoefficients::compute(&basis, &cfg.model.noise)?;
    Ok((basis, coeffs))
}

fn with_nu(model: &ModelParams, nu: f64) -> ModelParams {
    ModelParams { nu, ..model.clone() }
}

fn full_steps(model: &ModelParams) -> f64 {
    (model.horizon / model.step_size()).ceil()
}

fn effective_steps(model: &ModelParams) -> f64 {
    (model.horizon / model.step.h_max).ceil()
}

/// Rough single-core cost model calibrated on the pseudo-spectral step.
pub fn estimate_cpu_secs(cfg: &ExperimentConfig) -> Result<f64> {
    let m = cfg.m as f64;
    let full_step = 7e-9 * m * (cfg.n_grid() / 2) as f64 + 3e-8 * cfg.n_galerkin as f64;
    let eff_step = 1e-8 * m * m + 3e-8 * m;
    let n = cfg.ensemble as f64;
    let full = |model: &ModelParams| n * full_steps(model) * full_step;
    let eff = |count: f64| count * effective_steps(&cfg.model) * eff_step;
    Ok(match cfg.experiment {
        Recipe::Spectrum | Recipe::Resonance | Recipe::Kweyl => 0.0,
        Recipe::SimulateFull => full(&cfg.model),
        Recipe::SimulateEffective => eff(cfg.effective_ensemble() as f64),
        Recipe::CompareAveraging => {
            cfg.nu_grid.iter().map(|&nu| full(&with_nu(&cfg.model, nu))).sum::<f64>()
                + eff(cfg.effective_ensemble() as f64)
        }
        Recipe::Stationary | Recipe::Cascade => match cfg.system {
            SystemKind::Full => full(&cfg.model),
            SystemKind::Effective => eff(n),
        },
        Recipe::Contraction => eff(2.0 * n),
    })
}

pub(super) fn streams(cfg: &ExperimentConfig) -> Vec<StreamRange> {
    let s = cfg.base_seed;
    let range = |label: String, base_seed: u64, trajectories: usize| StreamRange { label, base_seed, trajectories };
    match cfg.experiment {
        Recipe::Spectrum | Recipe::Resonance | Recipe::Kweyl => Vec::new(),
        Recipe::SimulateFull => vec![range("full".into(), s, cfg.ensemble)],
        Recipe::SimulateEffective => vec![range("effective".into(), s, cfg.effective_ensemble())],
        Recipe::CompareAveraging => cfg
            .nu_grid
            .iter()
            .enumerate()
            .map(|(i, nu)| range(format!("full nu={nu}"), s.wrapping_add(i as u64), cfg.ensemble))
            .chain(std::iter::once(range(
                "effective".into(),
                s.wrapping_add(EFFECTIVE_SEED_OFFSET),
                cfg.effective_ensemble(),
            )))
            .collect(),
        Recipe::Stationary | Recipe::Cascade => vec![range(format!("{:?}", cfg.system).to_lowercase(), s, cfg.ensemble)],
        Recipe::Contraction => vec![range("pairs (common noise)".into(), s, cfg.ensemble)],
    }
}

fn schedule_times(cfg: &ExperimentConfig, extra: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = cfg.sample_times.iter().chain(extra).copied().collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn sample_index(times: &[f64], t: f64) -> usize {
    times.iter().position(|&x| x == t).expect("time is scheduled")
}

/// Samples CSV: `trajectory,tau,k,re_v,im_v,I,phi,flag`, fixed times then window times.
fn samples_csv(ensemble: &Ensemble, flag: &str) -> Vec<u8> {
    let mut s = String::from("trajectory,tau,k,re_v,im_v,I,phi,flag\n");
    let mut row = |t: u64, x: &TrajectorySample| {
        for (k, v) in x.v.iter().enumerate() {
            let _ = writeln!(
                s,
                "{t},{},{},{},{},{},{},{flag}",
                x.tau,
                k + 1,
                v.re,
                v.im,
                x.action_angle.actions[k],
                x.action_angle.angles[k]
            );
        }
    };
    for tr in &ensemble.trajectories {
        for x in tr.samples.iter().chain(&tr.window) {
            row(tr.trajectory, x);
        }
    }
    s.into_bytes()
}

fn csv_table(header: &str, rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s.into_bytes()
}

// ---------------------------------------------------------------- spectrum

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub lambda: Vec<f64>,
    pub m_shift: Vec<f64>,
    pub stiffness: Vec<f64>,
    pub y: Vec<f64>,
    pub clusters: Vec<Cluster>,
    pub orthonormality_defect: f64,
    pub warnings: Vec<String>,
    #[serde(skip)]
    basis: Option<BasisDump>,
    #[serde(skip)]
    coefficients: Option<CoefficientDump>,
    #[serde(skip)]
    l_csv: String,
}

impl SpectrumReport {
    pub fn output(&self) -> RecipeOutput {
        let lambda = csv_table(
            "k,lambda",
            self.lambda.iter().enumerate().map(|(k, l)| vec![(k + 1).to_string(), l.to_string()]),
        );
        let mut out = json_output(self);
        out.files = vec![
            ("lambda.csv".into(), lambda),
            ("basis.json".into(), serde_json::to_vec_pretty(&self.basis).expect("dump serializes")),
            ("coefficients.json".into(), serde_json::to_vec_pretty(&self.coefficients).expect("dump serializes")),
            ("L.csv".into(), self.l_csv.clone().into_bytes()),
        ];
        out
    }
}

pub fn spectrum(cfg: &ExperimentConfig) -> Result<SpectrumReport> {
    let (basis, coeffs) = setup(cfg)?;
    Ok(SpectrumReport {
        lambda: basis.lambda().to_vec(),
        m_shift: coeffs.m_shift.clone(),
        stiffness: coeffs.stiffness(),
        y: coeffs.y.clone(),
        clusters: basis.clusters().to_vec(),
        orthonormality_defect: basis.orthonormality_defect(),
        warnings: coeffs.warnings.clone(),
        basis: Some(basis.dump()),
        coefficients: Some(coeffs.dump()),
        l_csv: coeffs.l_csv(),
    })
}

// ---------------------------------------------------------------- resonance

pub fn resonance(cfg: &ExperimentConfig) -> Result<ResonanceReport> {
    let basis = build_basis_with_grid(&cfg.potential, cfg.m, cfg.n_galerkin, cfg.n_grid())?;
    let r = &cfg.resonance;
    let mut search = ResonanceSearch::new(cfg.m, r.s_max).with_eps(r.eps);
    if let Some(l1) = r.l1_max {
        search = search.with_l1_max(l1);
    }
    check_nonresonance(basis.lambda(), &search)
}

// ---------------------------------------------------------------- kweyl

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KweylRow {
    pub horizon: f64,
    pub deviation: f64,
    /// Largest deviation over horizons in `[T, 2T]`.
    pub envelope: f64,
    /// `2 / (T |s·Λ|)`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KweylReport {
    pub harmonic: Vec<i64>,
    pub frequency: f64,
    pub rows: Vec<KweylRow>,
    /// Least-squares slope of `log envelope` against `log T`.
    pub slope: Option<f64>,
}

impl KweylReport {
    pub fn output(&self) -> RecipeOutput {
        let mut out = json_output(self);
        let rows = self.rows.iter().map(|r| {
            vec![r.horizon.to_string(), r.deviation.to_string(), r.envelope.to_string(), r.bound.to_string()]
        });
        out.files = vec![("kweyl.csv".into(), csv_table("T,deviation,envelope,bound", rows))];
        out
    }
}

pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn kweyl(cfg: &ExperimentConfig) -> Result<KweylReport> {
    let basis = build_basis_with_grid(&cfg.potential, cfg.m, cfg.n_galerkin, cfg.n_grid())?;
    let freqs = basis.lambda();
    let mut s = cfg.kweyl.harmonic.clone();
    s.resize(cfg.m, 0);
    let mut q0 = cfg.kweyl.q0.clone();
    q0.resize(cfg.m, 0.0);
    let f = TrigPolynomial::cos_harmonic(&s);
    let frequency: f64 = s.iter().zip(freqs).map(|(a, l)| *a as f64 * l).sum();
    let rows = cfg
        .kweyl
        .horizons
        .iter()
        .map(|&t| {
            Ok(KweylRow {
                horizon: t,
                deviation: time_average_quasiperiodic(&f, freqs, &q0, t)?.deviation,
                envelope: decay_envelope(&f, freqs, &q0, t, 257)?,
                bound: 2.0 / (t * frequency.abs()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let slope = loglog_slope(
        &rows.iter().map(|r| r.horizon).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.envelope).collect::<Vec<_>>(),
    );
    Ok(KweylReport { harmonic: s, frequency, rows, slope })
}

// ---------------------------------------------------------------- simulate

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub tau: f64,
    #[serde(flatten)]
    pub summary: EnsembleSummary,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationReport {
    pub system: String,
    pub trajectories: usize,
    pub blowups: usize,
    pub step_size: f64,
    pub snapshots: Vec<SnapshotSummary>,
    pub window: Option<EnsembleSummary>,
    pub energy_residual: Vec<ResidualPoint>,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub ensemble: Option<Ensemble>,
}

impl SimulationReport {
    pub fn output(&self) -> RecipeOutput {
        let mut out = json_output(self);
        if let Some(e) = &self.ensemble {
            out.files.push(("samples.csv".into(), samples_csv(e, &self.system)));
        }
        out
    }
}

fn summarize(ensemble: &Ensemble, s: usize) -> Result<EnsembleSummary> {
    let samples = ensemble.mode_samples(s);
    let n = samples.first().map_or(0, Vec::len);
    EnsembleSummary::from_samples(&samples, n.min(100))
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<SimulationReport> {
    let (basis, coeffs) = setup(cfg)?;
    let times = schedule_times(cfg, &[0.0, cfg.model.horizon]);
    let schedule = SampleSchedule { times: times.clone(), window: cfg.window };
    let v0 = cfg.initial.modes(cfg.m);
    let (system, ensemble) = if cfg.experiment == Recipe::SimulateEffective {
        let sys = EffectiveSystem::new(&cfg.model, &coeffs)?;
        ("effective", simulate_ensemble(&sys, &v0, cfg.base_seed, cfg.effective_ensemble(), &schedule)?)
    } else {
        let sys = FullSystem::new(&cfg.model, &basis, &coeffs)?;
        ("full", simulate_ensemble(&sys, &v0, cfg.base_seed, cfg.ensemble, &schedule)?)
    };
    let complete = ensemble.complete_count();
    let snapshots = if complete >= 2 {
        times
            .iter()
            .enumerate()
            .map(|(i, &tau)| Ok(SnapshotSummary { tau, summary: summarize(&ensemble, i)? }))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let window = match cfg.window {
        Some(_) if complete >= 2 => Some(EnsembleSummary::from_samples(&ensemble.window_mode_samples(), complete)?),
        _ => None,
    };
    let energy_residual = if complete >= 100 { energy_balance_residual(&ensemble)? } else { Vec::new() };
    Ok(SimulationReport {
        system: system.into(),
        trajectories: ensemble.trajectories.len(),
        blowups: ensemble.blowups(),
        step_size: ensemble.step_size,
        snapshots,
        window,
        energy_residual,
        warnings: coeffs.warnings.clone(),
        ensemble: cfg.write_samples.then_some(ensemble),
    })
}

// ---------------------------------------------------------------- compare-averaging

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub claim: String,
    pub nu_grid: Vec<f64>,
    pub horizon: f64,
    /// `wasserstein[i][k]`: W1 between full (ν_i) and effective actions of mode `k+1` at `T`.
    pub wasserstein: Vec<Vec<f64>>,
    pub wasserstein_se: Vec<Vec<f64>>,
    /// Window-pooled angle uniformity of the full system, `[i][k]`.
    pub uniformity: Vec<Vec<Uniformity>>,
    /// Energy identity over `[0, T]` for each full ensemble.
    pub energy_residual: Vec<ResidualPoint>,
    pub effective_energy_residual: ResidualPoint,
    pub blowups: Vec<usize>,
    pub effective_blowups: usize,
    pub full: Vec<EnsembleSummary>,
    pub effective: EnsembleSummary,
}

impl CompareReport {
    pub fn output(&self) -> RecipeOutput {
        let mut out = json_output(self);
        let mut w = Vec::new();
        let mut u = Vec::new();
        for (i, nu) in self.nu_grid.iter().enumerate() {
            for k in 0..self.wasserstein[i].len() {
                w.push(vec![
                    nu.to_string(),
                    (k + 1).to_string(),
                    self.wasserstein[i][k].to_string(),
                    self.wasserstein_se[i][k].to_string(),
                ]);
                let x = &self.uniformity[i][k];
                u.push(vec![
                    nu.to_string(),
                    (k + 1).to_string(),
                    x.n.to_string(),
                    x.resultant.to_string(),
                    x.ks.to_string(),
                    x.passes_99().to_string(),
                ]);
            }
        }
        out.files = vec![
            ("wasserstein.csv".into(), csv_table("nu,k,w1,se", w)),
            ("uniformity.csv".into(), csv_table("nu,k,n,resultant,ks,pass99", u)),
        ];
        out
    }

    /// `W(ν_{i+1}) ≤ W(ν_i) + z·√(se_i² + se_{i+1}²)` for each consecutive pair
    /// of a decreasing ν-grid.
    pub fn nonincreasing(&self, mode: usize, z: f64) -> bool {
        let mut order: Vec<usize> = (0..self.nu_grid.len()).collect();
        order.sort_by(|a, b| self.nu_grid[*b].total_cmp(&self.nu_grid[*a]));
        order.windows(2).all(|p| {
            let (a, b) = (p[0], p[1]);
            let slack = z * self.wasserstein_se[a][mode].hypot(self.wasserstein_se[b][mode]);
            self.wasserstein[b][mode] <= self.wasserstein[a][mode] + slack
        })
    }
}

pub fn compare_averaging(cfg: &ExperimentConfig) -> Result<CompareReport> {
    let (basis, coeffs) = setup(cfg)?;
    let t = cfg.model.horizon;
    let v0 = cfg.initial.modes(cfg.m);
    let w = cfg.window();
    let schedule = SampleSchedule { times: vec![0.0, t], window: Some(w) };

    let eff = EffectiveSystem::new(&cfg.model, &coeffs)?;
    let eff_seed = cfg.base_seed.wrapping_add(EFFECTIVE_SEED_OFFSET);
    let eff_ens = simulate_ensemble(&eff, &v0, eff_seed, cfg.effective_ensemble(), &SampleSchedule::fixed(&[0.0, t]))?;
    let effective = summarize(&eff_ens, 1)?;
    let effective_energy_residual = residual_over_horizon(&eff_ens)?;

    let mut report = CompareReport {
        claim: "laws of the actions of the full system approach the effective-equation law as nu -> 0".into(),
        nu_grid: cfg.nu_grid.clone(),
        horizon: t,
        wasserstein: Vec::new(),
        wasserstein_se: Vec::new(),
        uniformity: Vec::new(),
        energy_residual: Vec::new(),
        effective_energy_residual,
        blowups: Vec::new(),
        effective_blowups: eff_ens.blowups(),
        full: Vec::new(),
        effective,
    };
    for (i, &nu) in cfg.nu_grid.iter().enumerate() {
        let model = with_nu(&cfg.model, nu);
        let sys = FullSystem::new(&model, &basis, &coeffs)?;
        let ens = simulate_ensemble(&sys, &v0, cfg.base_seed.wrapping_add(i as u64), cfg.ensemble, &schedule)?;
        let mut summary = summarize(&ens, 1)?;
        let (dist, se): (Vec<f64>, Vec<f64>) = (0..cfg.m)
            .into_par_iter()
            .map(|k| {
                let a = summary.actions(k);
                let b = report.effective.actions(k);
                let seed = cfg.base_seed.wrapping_add((i * cfg.m + k) as u64);
                Ok((wasserstein1_1d(a, b)?, wasserstein1_bootstrap_se(a, b, cfg.bootstrap, seed)?))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        summary.compare("effective", &report.effective)?;
        report.wasserstein.push(dist);
        report.wasserstein_se.push(se);
        report
            .uniformity
            .push((0..cfg.m).map(|k| circular_uniformity(&ens.window_angles(k))).collect::<Result<_>>()?);
        report.energy_residual.push(residual_over_horizon(&ens)?);
        report.blowups.push(ens.blowups());
        report.full.push(summary);
    }
    Ok(report)
}

/// Residual over `[0, T]` from an ensemble sampled at `0` and `T` (the last fixed time).
fn residual_over_horizon(ens: &Ensemble) -> Result<ResidualPoint> {
    let mut r = energy_balance_residual(ens)?;
    if r.len() == 1 {
        Ok(r.remove(0))
    } else {
        Err(Error::InvalidParams("expected samples at 0 and T only".into()))
    }
}

// ---------------------------------------------------------------- stationary / cascade

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationaryReport {
    pub system: SystemKind,
    pub trajectories: usize,
    pub blowups: usize,
    pub window: (f64, f64),
    pub samples_per_trajectory: usize,
    /// `E|v_k|²` over the window; standard errors from per-trajectory means.
    pub second_moment: Vec<Estimate>,
    /// `E I_k = ½ E|v_k|²`.
    pub mean_action: Vec<Estimate>,
    /// `E|v_k|⁴ / (2 (E|v_k|²)²)`, jackknifed over trajectories.
    pub kurtosis_ratio: Vec<Estimate>,
    /// Angles at `T`, one per trajectory.
    pub final_uniformity: Vec<Uniformity>,
    /// Window-pooled angles.
    pub window_uniformity: Vec<Uniformity>,
    /// `σ_k²` of the Gaussian reference where it applies.
    pub reference: Option<Vec<f64>>,
    pub relative_error: Option<Vec<f64>>,
    pub energy_residual: Vec<ResidualPoint>,
}

impl StationaryReport {
    pub fn output(&self) -> RecipeOutput {
        let mut out = json_output(self);
        let rows = (0..self.second_moment.len()).map(|k| {
            vec![
                (k + 1).to_string(),
                self.second_moment[k].value.to_string(),
                self.second_moment[k].se.to_string(),
                self.reference.as_ref().map_or(String::new(), |r| r[k].to_string()),
                self.kurtosis_ratio[k].value.to_string(),
                self.kurtosis_ratio[k].se.to_string(),
            ]
        });
        out.files = vec![("moments.csv".into(), csv_table("k,second,se,reference,kurtosis_ratio,kurtosis_se", rows))];
        out
    }
}

fn stationary_ensemble(cfg: &ExperimentConfig, basis: &SpectralBasis, coeffs: &EffectiveCoefficients) -> Result<Ensemble> {
    let t = cfg.model.horizon;
    let schedule = SampleSchedule { times: schedule_times(cfg, &[0.0, t]), window: Some(cfg.window()) };
    let v0 = cfg.initial.modes(cfg.m);
    match cfg.system {
        SystemKind::Full => {
            let sys = FullSystem::new(&cfg.model, basis, coeffs)?;
            simulate_ensemble(&sys, &v0, cfg.base_seed, cfg.ensemble, &schedule)
        }
        SystemKind::Effective => {
            let sys = EffectiveSystem::new(&cfg.model, coeffs)?;
            simulate_ensemble(&sys, &v0, cfg.base_seed, cfg.ensemble, &schedule)
        }
    }
}

pub fn stationary(cfg: &ExperimentConfig) -> Result<StationaryReport> {
    let (basis, coeffs) = setup(cfg)?;
    let ens = stationary_ensemble(cfg, &basis, &coeffs)?;
    let complete: Vec<_> = ens.trajectories.iter().filter(|t| t.blowup.is_none()).collect();
    if complete.len() < 2 {
        return Err(Error::EmptySamples);
    }
    let w = cfg.window();
    let pooled = ens.window_mode_samples();
    let times = schedule_times(cfg, &[0.0, cfg.model.horizon]);
    let last = sample_index(&times, cfg.model.horizon);
    let mut second = Vec::with_capacity(cfg.m);
    let mut kurt = Vec::with_capacity(cfg.m);
    let mut final_u = Vec::with_capacity(cfg.m);
    let mut window_u = Vec::with_capacity(cfg.m);
    for k in 0..cfg.m {
        let per_traj: Vec<f64> = complete
            .iter()
            .map(|t| t.window.iter().map(|s| s.v[k].norm_sqr()).sum::<f64>() / t.window.len() as f64)
            .collect();
        second.push(mean_se(&per_traj));
        kurt.push(gaussian_moment_check(&pooled[k], complete.len())?.kurtosis_ratio);
        final_u.push(circular_uniformity(&complete.iter().map(|t| t.samples[last].action_angle.angles[k]).collect::<Vec<_>>())?);
        window_u.push(circular_uniformity(&ens.window_angles(k))?);
    }
    let reference = stationary_gaussian_reference(&cfg.model, &coeffs).ok();
    let relative_error = reference
        .as_ref()
        .map(|r| second.iter().zip(r).map(|(e, s)| (e.value - s) / s).collect());
    let energy_residual = if complete.len() >= 100 { energy_balance_residual(&ens)? } else { Vec::new() };
    Ok(StationaryReport {
        system: cfg.system,
        trajectories: ens.trajectories.len(),
        blowups: ens.blowups(),
        window: (w.start, w.end),
        samples_per_trajectory: w.count,
        mean_action: second.iter().map(|e| Estimate { value: e.value / 2.0, se: e.se / 2.0 }).collect(),
        second_moment: second,
        kurtosis_ratio: kurt,
        final_uniformity: final_u,
        window_uniformity: window_u,
        reference,
        relative_error,
        energy_residual,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CascadeReport {
    pub forced_mode: usize,
    /// Window-averaged `E_l = ½ E|v_l|²`.
    pub energy: Vec<Estimate>,
    /// `E_{j*} / E_l`.
    pub ratio: Vec<f64>,
    /// Smallest ratio over modes with `|l − j*| ≥ 2`.
    pub min_far_ratio: Option<f64>,
    pub stationary: StationaryReport,
}

impl CascadeReport {
    pub fn output(&self) -> RecipeOutput {
        let mut out = json_output(self);
        let rows = self.energy.iter().enumerate().map(|(k, e)| {
            vec![(k + 1).to_string(), e.value.to_string(), e.se.to_string(), self.ratio[k].to_string()]
        });
        out.files = vec![("energy_profile.csv".into(), csv_table("l,E,se,ratio", rows))];
        out
    }
}

pub fn cascade(cfg: &ExperimentConfig) -> Result<CascadeReport> {
    let st = stationary(cfg)?;
    let j = cfg.cascade_mode;
    let energy = st.mean_action.clone();
    let ej = energy[j - 1].value;
    let ratio: Vec<f64> = energy.iter().map(|e| ej / e.value).collect();
    let min_far_ratio = ratio
        .iter()
        .enumerate()
        .filter(|(l, _)| (*l as i64 + 1 - j as i64).abs() >= 2)
        .map(|(_, r)| *r)
        .reduce(f64::min);
    Ok(CascadeReport { forced_mode: j, energy, ratio, min_far_ratio, stationary: st })
}

// ---------------------------------------------------------------- contraction

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionReport {
    pub times: Vec<f64>,
    pub pairs: usize,
    /// Mean `|v¹ − v²|` over pairs at each time.
    pub mean_distance: Vec<f64>,
    /// Largest increase of `|v¹ − v²|` between consecutive samples, per step.
    pub max_increase_per_step: f64,
    pub monotone: bool,
    /// Largest final/initial distance ratio over pairs.
    pub max_ratio: f64,
    /// `exp(−κ λ_1 T / 2)`.
    pub bound: f64,
}

impl ContractionReport {
    pub fn output(&self) -> RecipeOutput {
        let mut out = json_output(self);
        let rows = self.times.iter().zip(&self.mean_distance).map(|(t, d)| vec![t.to_string(), d.to_string()]);
        out.files = vec![("distance.csv".into(), csv_table("tau,mean_distance", rows))];
        out
    }
}

/// Tolerance on the per-step growth of the pair distance.
pub const CONTRACTION_TOL: f64 = 1e-10;

pub fn contraction(cfg: &ExperimentConfig) -> Result<ContractionReport> {
    let (basis, coeffs) = setup(cfg)?;
    let sys = EffectiveSystem::new(&cfg.model, &coeffs)?;
    let t = cfg.model.horizon;
    let times = if cfg.sample_times.is_empty() {
        (0..=20).map(|i| t * i as f64 / 20.0).collect()
    } else {
        schedule_times(cfg, &[0.0, t])
    };
    let schedule = SampleSchedule::fixed(&times);
    let a0 = cfg.initial.modes(cfg.m);
    let b0 = cfg.initial_pair.as_ref().map(|ic| ic.modes(cfg.m)).ok_or_else(|| {
        Error::Config(vec!["initial_pair: required by contraction".into()])
    })?;
    let dist = |x: &[Complex64], y: &[Complex64]| x.iter().zip(y).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let series: Vec<Vec<f64>> = (0..cfg.ensemble as u64)
        .into_par_iter()
        .map(|i| {
            let plan = sys.noise_plan(cfg.base_seed, i);
            let a = simulate_trajectory(&sys, &a0, &plan, &schedule)?;
            let b = simulate_trajectory(&sys, &b0, &plan, &schedule)?;
            if a.blowup.is_some() || b.blowup.is_some() {
                return Err(Error::BlowUp { tau: t, norm: f64::INFINITY, threshold: cfg.model.blowup_threshold });
            }
            Ok(a.samples.iter().zip(&b.samples).map(|(x, y)| dist(&x.v, &y.v)).collect())
        })
        .collect::<Result<_>>()?;
    let h = sys.step_size();
    let taus: Vec<f64> = {
        let plan = sys.noise_plan(cfg.base_seed, 0);
        simulate_trajectory(&sys, &a0, &plan, &schedule)?.samples.iter().map(|s| s.tau).collect()
    };
    let mut max_increase = f64::NEG_INFINITY;
    let mut monotone = true;
    for d in &series {
        for (i, w) in d.windows(2).enumerate() {
            let steps = ((taus[i + 1] - taus[i]) / h).round().max(1.0);
            let inc = (w[1] - w[0]) / steps;
            max_increase = max_increase.max(inc);
            if w[1] > w[0] + CONTRACTION_TOL * steps {
                monotone = false;
            }
        }
    }
    let n = series.len().max(1) as f64;
    let mean_distance = (0..taus.len()).map(|i| series.iter().map(|d| d[i]).sum::<f64>() / n).collect();
    let max_ratio = series
        .iter()
        .map(|d| if d[0] > 0.0 { d[d.len() - 1] / d[0] } else { 0.0 })
        .fold(0.0, f64::max);
    let kappa = if cfg.model.linear_damping_substitute { 0.0 } else { cfg.model.kappa };
    Ok(ContractionReport {
        times: taus,
        pairs: series.len(),
        mean_distance,
        max_increase_per_step: max_increase,
        monotone,
        max_ratio,
        bound: (-kappa * basis.lambda()[0] * t / 2.0).exp(),
    })
}
