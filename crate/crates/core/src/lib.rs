//! Spectral laboratory for the weakly nonlinear stochastic complex
//! Ginzburg–Landau equation on odd 2π-periodic functions,
//!
//! ```text
//! u̇ + iν⁻¹(−u_xx + V(x)u) = κu_xx − γ_R|u|^{2p}u − iγ_I|u|^{2q}u + Σ_j b_j β̇_j(τ) e_j(x),
//! ```
//!
//! and its rotation-invariant effective equations in the limit ν → 0.
//!
//! Module map:
//!
//! * [`spectral`]: Sturm–Liouville eigenbasis of `−∂² + V`, mode transforms,
//!   resonance search and quasi-periodic time averages.
//! * [`coefficients`]: `M_k`, `L'_{kl}`, `L_{kl}`, `Y_k` and the dispersion matrix.
//! * [`noise`]: seeded, step-addressable complex Wiener increments.
//! * [`dynamics`]: exponential Euler–Maruyama integration of the full mode system.
//! * [`effective`]: closed-form effective drifts, phase-average oracle and
//!   the semi-implicit effective integrator.
//! * [`statistics`]: action-angle extraction, Wasserstein distances, uniformity
//!   and Gaussian moment checks.
//! * [`experiments`]: config-driven recipes behind the `cglab` CLI.

pub mod coefficients;
pub mod dynamics;
pub mod effective;
pub mod error;
pub mod experiments;
pub mod noise;
pub mod spectral;
pub mod statistics;

pub use num_complex::Complex64;

pub use error::{Error, Result};
