//! Config-driven experiment recipes with deterministic seeding, a CPU budget
//! and a checksummed run manifest.

mod config;
mod recipes;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use config::{
    validate_config, ExperimentConfig, InitialCondition, KweylConfig, Recipe, ResonanceConfig, SystemKind,
};
pub use recipes::{
    cascade, compare_averaging, contraction, estimate_cpu_secs, kweyl, resonance, setup, simulate, spectrum,
    stationary, CascadeReport, CompareReport, ContractionReport, KweylReport, KweylRow, SimulationReport,
    SpectrumReport, StationaryReport,
};

/// Files produced by a recipe, relative to the output directory.
#[derive(Clone, Debug, Default)]
pub struct RecipeOutput {
    pub summary: serde_json::Value,
    pub files: Vec<(String, Vec<u8>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Trajectory streams of one ensemble: trajectory `i` draws its noise from
/// ChaCha8 seeded with `base_seed` on stream `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamRange {
    pub label: String,
    pub base_seed: u64,
    pub trajectories: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub recipe: Recipe,
    pub config: ExperimentConfig,
    pub code_version: String,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub estimated_cpu_secs: f64,
    pub streams: Vec<StreamRange>,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output directory: explicit argument, then the config, then `runs/<recipe>`.
pub fn output_dir(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment.name()))
}

/// Runs the configured recipe without touching the file system.
pub fn execute(cfg: &ExperimentConfig) -> Result<RecipeOutput> {
    match cfg.experiment {
        Recipe::Spectrum => spectrum(cfg).map(|r| r.output()),
        Recipe::Resonance => resonance(cfg).map(|r| recipes::json_output(&r)),
        Recipe::Kweyl => kweyl(cfg).map(|r| r.output()),
        Recipe::SimulateFull | Recipe::SimulateEffective => simulate(cfg).map(|r| r.output()),
        Recipe::CompareAveraging => compare_averaging(cfg).map(|r| r.output()),
        Recipe::Stationary => stationary(cfg).map(|r| r.output()),
        Recipe::Cascade => cascade(cfg).map(|r| r.output()),
        Recipe::Contraction => contraction(cfg).map(|r| r.output()),
    }
}

/// Validates, checks the budget, runs and writes `summary.json`, recipe
/// files and `manifest.json` into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, force: bool) -> Result<RunManifest> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let estimated = estimate_cpu_secs(cfg)?;
    if estimated > cfg.budget_cpu_secs && !force {
        return Err(Error::Budget { estimated_secs: estimated, cap_secs: cfg.budget_cpu_secs });
    }
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let output = execute(cfg)?;
    let wall_clock_secs = clock.elapsed().as_secs_f64();

    std::fs::create_dir_all(out)?;
    let mut files = Vec::with_capacity(output.files.len() + 1);
    let summary = serde_json::to_vec_pretty(&output.summary)?;
    for (name, bytes) in std::iter::once(("summary.json".to_string(), summary)).chain(output.files) {
        std::fs::write(out.join(&name), &bytes)?;
        files.push(FileEntry { sha256: sha256_hex(&bytes), bytes: bytes.len() as u64, name });
    }
    let manifest = RunManifest {
        recipe: cfg.experiment,
        config: cfg.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        started_unix,
        wall_clock_secs,
        estimated_cpu_secs: estimated,
        streams: recipes::streams(cfg),
        files,
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(recipe: &str, extra: &str) -> String {
        format!(
            r#"{{
                "experiment": "{recipe}",
                "potential": {{ "kind": "trig-polynomial", "cos": [0.0] }},
                "model": {{
                    "nu": 0.1, "kappa": 0.5, "gamma_r": 0.3, "gamma_i": 0.7, "p": 1, "q": 1,
                    "noise": {{ "kind": "exponential", "amplitude": 0.5, "rate": 0.5 }},
                    "horizon": 0.2
                }},
                "m": 3,
                "n_galerkin": 12
                {extra}
            }}"#
        )
    }

    fn errors(raw: &str) -> Vec<String> {
        validate_config(raw).err().unwrap_or_default()
    }

    #[test]
    fn accepts_constrained_coefficients() {
        let cfg = validate_config(&base("spectrum", "")).unwrap();
        assert_eq!(cfg.n_grid(), 96);
        assert_eq!(cfg.ensemble, 500);
        assert_eq!(cfg.window().start, 0.1);
    }

    #[test]
    fn rejects_unbalanced_coefficients() {
        let raw = base("spectrum", "").replace("\"gamma_i\": 0.7", "\"gamma_i\": 0.3");
        let e = errors(&raw);
        assert_eq!(e.len(), 1);
        assert!(e[0].starts_with("model.gamma_r") && e[0].contains("must equal 1"), "{e:?}");
    }

    #[test]
    fn rejects_inviscid_cubic_damping() {
        let raw = base("spectrum", "").replace("\"kappa\": 0.5", "\"kappa\": 0.0");
        let e = errors(&raw);
        assert!(e.iter().any(|s| s.starts_with("model.p")), "{e:?}");
    }

    #[test]
    fn reports_unknown_keys_with_path() {
        let raw = base("spectrum", "").replace("\"horizon\": 0.2", "\"horizon\": 0.2, \"bogus\": 1");
        let e = errors(&raw);
        assert!(e[0].starts_with("model") && e[0].contains("bogus"), "{e:?}");
        let e = errors(&base("simulate-fast", ""));
        assert!(e[0].starts_with("experiment"), "{e:?}");
    }

    #[test]
    fn collects_every_violation() {
        let raw = base("compare-averaging", r#", "n_galerkin": 4, "sample_times": [5.0]"#).replace("\"m\": 3,\n                \"n_galerkin\": 12", "\"m\": 3");
        let e = errors(&raw);
        for field in ["n_galerkin", "nu_grid", "sample_times[0]"] {
            assert!(e.iter().any(|s| s.starts_with(field)), "{field}: {e:?}");
        }
        let e = errors(&base("contraction", ""));
        assert!(e.iter().any(|s| s.starts_with("initial_pair")));
        let e = errors(&base("simulate-effective", "").replace("\"p\": 1", "\"p\": 2"));
        assert!(e.iter().any(|s| s.starts_with("model.p")));
    }

    #[test]
    fn free_spectrum_recipe() {
        let cfg = validate_config(&base("spectrum", "")).unwrap();
        let r = spectrum(&cfg).unwrap();
        for (k, l) in r.lambda.iter().enumerate() {
            assert!((l - ((k + 1) * (k + 1)) as f64).abs() < 1e-10);
        }
        let names: Vec<String> = r.output().files.into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["lambda.csv", "basis.json", "coefficients.json", "L.csv"]);
    }

    #[test]
    fn budget_is_enforced() {
        let cfg = validate_config(&base("simulate-full", r#", "ensemble": 100000000"#)).unwrap();
        let dir = std::env::temp_dir().join("cglab-budget-test");
        let err = run(&cfg, &dir, false).unwrap_err();
        assert!(matches!(err, Error::Budget { .. }), "{err}");
        assert!(!dir.join("manifest.json").exists());
    }

    #[test]
    fn manifest_lists_every_output_and_reruns_match() {
        let cfg = validate_config(&base(
            "simulate-effective",
            r#", "ensemble": 120, "base_seed": 3, "window": {"start": 0.1, "end": 0.2, "count": 2}, "write_samples": true"#,
        ))
        .unwrap();
        let root = std::env::temp_dir().join(format!("cglab-manifest-{}", std::process::id()));
        let (a, b) = (root.join("a"), root.join("b"));
        let ma = run(&cfg, &a, false).unwrap();
        let mb = run(&cfg, &b, false).unwrap();
        let mut on_disk: Vec<String> = std::fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .filter(|n| n != "manifest.json")
            .collect();
        on_disk.sort();
        let mut listed: Vec<String> = ma.files.iter().map(|f| f.name.clone()).collect();
        listed.sort();
        assert_eq!(on_disk, listed);
        for f in &ma.files {
            let bytes = std::fs::read(a.join(&f.name)).unwrap();
            assert_eq!(sha256_hex(&bytes), f.sha256);
        }
        let sums = |m: &RunManifest| m.files.iter().map(|f| f.sha256.clone()).collect::<Vec<_>>();
        assert_eq!(sums(&ma), sums(&mb));
        let echoed: RunManifest = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(echoed.config, cfg);
        assert_eq!(echoed.streams[0].trajectories, 120);
        std::fs::remove_dir_all(root).ok();
    }

    #[test]
    fn deterministic_recipes_are_bit_exact() {
        for recipe in ["spectrum", "resonance", "kweyl"] {
            let cfg = validate_config(&base(recipe, "")).unwrap();
            let a = serde_json::to_string(&execute(&cfg).unwrap().summary).unwrap();
            let b = serde_json::to_string(&execute(&cfg).unwrap().summary).unwrap();
            assert_eq!(a, b);
        }
    }
}
