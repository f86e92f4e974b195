//! JSON experiment configuration and its validation.

use std::path::PathBuf;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelParams, Window};
use crate::spectral::PotentialSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    Spectrum,
    Resonance,
    Kweyl,
    SimulateFull,
    SimulateEffective,
    CompareAveraging,
    Stationary,
    Cascade,
    Contraction,
}

impl Recipe {
    pub const ALL: [Recipe; 9] = [
        Recipe::Spectrum,
        Recipe::Resonance,
        Recipe::Kweyl,
        Recipe::SimulateFull,
        Recipe::SimulateEffective,
        Recipe::CompareAveraging,
        Recipe::Stationary,
        Recipe::Cascade,
        Recipe::Contraction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::Spectrum => "spectrum",
            Recipe::Resonance => "resonance",
            Recipe::Kweyl => "kweyl",
            Recipe::SimulateFull => "simulate-full",
            Recipe::SimulateEffective => "simulate-effective",
            Recipe::CompareAveraging => "compare-averaging",
            Recipe::Stationary => "stationary",
            Recipe::Cascade => "cascade",
            Recipe::Contraction => "contraction",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == name)
    }

    pub fn is_stochastic(self) -> bool {
        !matches!(self, Recipe::Spectrum | Recipe::Resonance | Recipe::Kweyl)
    }
}

/// Initial mode coefficients.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialCondition {
    #[default]
    Zero,
    /// `v_k = re[k] + i·im[k]`, zero beyond the listed modes.
    Modes {
        re: Vec<f64>,
        #[serde(default)]
        im: Vec<f64>,
    },
}

impl InitialCondition {
    pub fn modes(&self, m: usize) -> Vec<Complex64> {
        match self {
            InitialCondition::Zero => vec![Complex64::new(0.0, 0.0); m],
            InitialCondition::Modes { re, im } => (0..m)
                .map(|k| Complex64::new(re.get(k).copied().unwrap_or(0.0), im.get(k).copied().unwrap_or(0.0)))
                .collect(),
        }
    }

    fn len(&self) -> usize {
        match self {
            InitialCondition::Zero => 0,
            InitialCondition::Modes { re, im } => re.len().max(im.len()),
        }
    }

    fn finite(&self) -> bool {
        match self {
            InitialCondition::Zero => true,
            InitialCondition::Modes { re, im } => re.iter().chain(im).all(|x| x.is_finite()),
        }
    }
}

/// Which system the stationary and cascade recipes simulate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    #[default]
    Full,
    Effective,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceConfig {
    pub s_max: u32,
    #[serde(default)]
    pub l1_max: Option<u32>,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-9
}

impl Default for ResonanceConfig {
    fn default() -> Self {
        Self { s_max: 4, l1_max: None, eps: default_eps() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KweylConfig {
    /// Integer vector `s` of the harmonic `cos(s·q)`.
    pub harmonic: Vec<i64>,
    pub horizons: Vec<f64>,
    #[serde(default)]
    pub q0: Vec<f64>,
}

impl Default for KweylConfig {
    fn default() -> Self {
        Self { harmonic: vec![1, -1], horizons: vec![1e2, 1e3, 1e4], q0: Vec::new() }
    }
}

fn default_ensemble() -> usize {
    500
}

fn default_budget() -> f64 {
    600.0
}

fn default_bootstrap() -> usize {
    200
}

fn default_cascade_mode() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Recipe,
    pub potential: PotentialSpec,
    pub model: ModelParams,
    pub m: usize,
    pub n_galerkin: usize,
    /// Quadrature points; defaults to `8·n_galerkin`.
    #[serde(default)]
    pub n_grid: Option<usize>,
    #[serde(default = "default_ensemble")]
    pub ensemble: usize,
    /// Size of the effective-equation ensemble; defaults to `ensemble`.
    #[serde(default)]
    pub effective_ensemble: Option<usize>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub nu_grid: Vec<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub sample_times: Vec<f64>,
    /// Random-time window for time-averaged statistics; defaults to
    /// `[T/2, T]` with one time per trajectory.
    #[serde(default)]
    pub window: Option<Window>,
    #[serde(default)]
    pub initial: InitialCondition,
    /// Second initial state of the contraction pairs.
    #[serde(default)]
    pub initial_pair: Option<InitialCondition>,
    #[serde(default)]
    pub system: SystemKind,
    #[serde(default)]
    pub resonance: ResonanceConfig,
    #[serde(default)]
    pub kweyl: KweylConfig,
    /// Forced mode `j*` of the cascade recipe.
    #[serde(default = "default_cascade_mode")]
    pub cascade_mode: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    /// Write raw samples as CSV.
    #[serde(default)]
    pub write_samples: bool,
    /// Estimated CPU seconds above which a run is refused without `--force`.
    #[serde(default = "default_budget")]
    pub budget_cpu_secs: f64,
}

impl ExperimentConfig {
    pub fn n_grid(&self) -> usize {
        self.n_grid.unwrap_or(8 * self.n_galerkin)
    }

    pub fn effective_ensemble(&self) -> usize {
        self.effective_ensemble.unwrap_or(self.ensemble)
    }

    pub fn window(&self) -> Window {
        self.window.unwrap_or(Window { start: self.model.horizon / 2.0, end: self.model.horizon, count: 1 })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Semantic checks beyond the schema, each prefixed with its field path.
    pub fn violations(&self) -> Vec<String> {
        let mut out = self.model.violations("model.");
        let t = self.model.horizon;
        if let Err(e) = self.potential.validate() {
            out.push(format!("potential: {e}"));
        }
        if self.m == 0 {
            out.push("m: must be >= 1".into());
        }
        if self.n_galerkin < 4 * self.m {
            out.push(format!("n_galerkin: must be >= 4·m = {}, got {}", 4 * self.m, self.n_galerkin));
        }
        if self.n_grid() < 8 * self.n_galerkin || !self.n_grid().is_multiple_of(2) {
            out.push(format!("n_grid: must be even and >= 8·n_galerkin = {}", 8 * self.n_galerkin));
        }
        if self.recipe_simulates() && self.ensemble == 0 {
            out.push("ensemble: must be >= 1".into());
        }
        if self.effective_ensemble == Some(0) {
            out.push("effective_ensemble: must be >= 1".into());
        }
        for (i, nu) in self.nu_grid.iter().enumerate() {
            if !(*nu > 0.0 && *nu <= 1.0) {
                out.push(format!("nu_grid[{i}]: must lie in (0, 1], got {nu}"));
            }
        }
        for (i, s) in self.sample_times.iter().enumerate() {
            if !(*s >= 0.0 && *s <= t) {
                out.push(format!("sample_times[{i}]: must lie in [0, horizon], got {s}"));
            }
        }
        if let Some(w) = self.window {
            if !(w.start >= 0.0 && w.start <= w.end && w.end <= t) {
                out.push(format!("window: need 0 <= start <= end <= horizon, got [{}, {}]", w.start, w.end));
            }
        }
        for (name, ic) in [("initial", Some(&self.initial)), ("initial_pair", self.initial_pair.as_ref())] {
            if let Some(ic) = ic {
                if ic.len() > self.m {
                    out.push(format!("{name}: {} coefficients for m = {}", ic.len(), self.m));
                }
                if !ic.finite() {
                    out.push(format!("{name}: coefficients must be finite"));
                }
            }
        }
        let closed_form = self.model.linear_damping_substitute || self.model.p <= 1;
        match self.experiment {
            Recipe::CompareAveraging => {
                if self.nu_grid.is_empty() {
                    out.push("nu_grid: compare-averaging needs at least one nu".into());
                }
                if !closed_form {
                    out.push(format!("model.p: effective equations need p in {{0, 1}}, got {}", self.model.p));
                }
            }
            Recipe::SimulateEffective | Recipe::Contraction if !closed_form => {
                out.push(format!("model.p: effective equations need p in {{0, 1}}, got {}", self.model.p));
            }
            Recipe::Stationary | Recipe::Cascade if self.system == SystemKind::Effective && !closed_form => {
                out.push(format!("model.p: effective equations need p in {{0, 1}}, got {}", self.model.p));
            }
            _ => {}
        }
        if self.experiment == Recipe::Contraction && self.initial_pair.is_none() {
            out.push("initial_pair: required by contraction".into());
        }
        if self.experiment == Recipe::Cascade && !(1..=self.m).contains(&self.cascade_mode) {
            out.push(format!("cascade_mode: must lie in 1..={}, got {}", self.m, self.cascade_mode));
        }
        if self.experiment == Recipe::Kweyl {
            if self.kweyl.harmonic.len() > self.m {
                out.push(format!("kweyl.harmonic: {} entries for m = {}", self.kweyl.harmonic.len(), self.m));
            }
            if self.kweyl.horizons.iter().any(|h| !(*h > 0.0)) {
                out.push("kweyl.horizons: must be positive".into());
            }
        }
        if self.bootstrap < 2 {
            out.push("bootstrap: must be >= 2".into());
        }
        if !(self.budget_cpu_secs > 0.0) {
            out.push("budget_cpu_secs: must be positive".into());
        }
        out
    }

    fn recipe_simulates(&self) -> bool {
        self.experiment.is_stochastic()
    }
}

/// Parses and checks a JSON config, collecting every violation.
pub fn validate_config(raw: &str) -> std::result::Result<ExperimentConfig, Vec<String>> {
    let de = &mut serde_json::Deserializer::from_str(raw);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        vec![format!("{path}: {}", e.into_inner())]
    })?;
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(v)
    }
}
