use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("potential is not even: |V(x) - V(2pi - x)| = {deviation:e} exceeds {tolerance:e}")]
    NonEvenPotential { deviation: f64, tolerance: f64 },

    #[error("potential is negative: min V = {min:e}")]
    NegativePotential { min: f64 },

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    #[error("galerkin dimension {n_galerkin} too small for {m} modes (need >= {required})")]
    GalerkinTooSmall { m: usize, n_galerkin: usize, required: usize },

    #[error("quadrature grid of {n_grid} points too small (need > {required})")]
    GridTooSmall { n_grid: usize, required: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("resonance search space of {size} vectors exceeds budget {budget}")]
    SearchBudget { size: u128, budget: u128 },

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("blow-up at tau = {tau}: norm {norm:e} exceeds threshold {threshold:e}")]
    BlowUp { tau: f64, norm: f64, threshold: f64 },

    #[error("degenerate mode {mode}: lambda - M = {gap:e} is not positive")]
    DegenerateMode { mode: usize, gap: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("config validation failed:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("budget exceeded: estimated {estimated_secs:.0} CPU-seconds > cap {cap_secs:.0} (use --force)")]
    Budget { estimated_secs: f64, cap_secs: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
