use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cglab::experiments::{output_dir, run, validate_config, Recipe};
use cglab::Error;

/// Run a cglab experiment recipe from a JSON config.
#[derive(Parser, Debug)]
#[command(name = "cglab", version, about)]
struct Cli {
    /// spectrum | resonance | kweyl | simulate-full | simulate-effective |
    /// compare-averaging | stationary | cascade | contraction
    #[arg(value_parser = parse_recipe)]
    recipe: Recipe,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `base_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `ensemble`.
    #[arg(long)]
    ensemble: Option<usize>,
    /// Run even if the estimated cost exceeds `budget_cpu_secs`.
    #[arg(long)]
    force: bool,
}

fn parse_recipe(s: &str) -> Result<Recipe, String> {
    Recipe::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Recipe::ALL.iter().map(|r| r.name()).collect();
        format!("unknown recipe `{s}`, expected one of {}", names.join(", "))
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let raw = match std::fs::read_to_string(&cli.config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot read {}: {e}", cli.config.display());
            return ExitCode::from(2);
        }
    };
    // flags override the file; re-validate after applying them
    let patched = match serde_json::from_str::<serde_json::Value>(&raw) {
        Ok(mut v) => {
            if let Some(obj) = v.as_object_mut() {
                obj.insert("experiment".into(), cli.recipe.name().into());
                if let Some(seed) = cli.seed {
                    obj.insert("base_seed".into(), seed.into());
                }
                if let Some(n) = cli.ensemble {
                    obj.insert("ensemble".into(), n.into());
                }
            }
            v.to_string()
        }
        Err(_) => raw,
    };
    let cfg = match validate_config(&patched) {
        Ok(cfg) => cfg,
        Err(errors) => {
            eprintln!("invalid config {}:", cli.config.display());
            for e in errors {
                eprintln!("  {e}");
            }
            return ExitCode::from(2);
        }
    };
    let out = output_dir(&cfg, cli.out.as_deref());
    match run(&cfg, &out, cli.force) {
        Ok(manifest) => {
            println!("{} finished in {:.1}s -> {}", cfg.experiment.name(), manifest.wall_clock_secs, out.display());
            for f in &manifest.files {
                println!("  {}  {}", &f.sha256[..12], f.name);
            }
            ExitCode::SUCCESS
        }
        Err(Error::Config(errors)) => {
            for e in errors {
                eprintln!("  {e}");
            }
            ExitCode::from(2)
        }
        Err(e @ Error::Budget { .. }) => {
            eprintln!("{e}; pass --force to run anyway");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
