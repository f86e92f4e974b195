//! Coefficients of the effective equations: damping shifts `M_k`, quartic
//! interaction integrals `L'_{kl}`, `L_{kl}`, noise intensities `Y_k` and the
//! dispersion matrix `B_{kj} = Ψ_{kj} b_j`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{PotentialSpec, SpectralBasis};

/// Amplitudes `b_j` of the forcing `Σ_j b_j β̇_j(τ) e_j(x)`; zero beyond the
/// listed or truncated range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// `b_j = b[j - 1]`.
    Explicit { b: Vec<f64> },
    /// `b_j = amplitude · e^{−rate·j}`.
    Exponential { amplitude: f64, rate: f64 },
    /// `b_mode = amplitude`, `b_j = background` otherwise.
    Forced { mode: usize, amplitude: f64, background: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidNoise(msg.into()));
        match self {
            NoiseSpec::Explicit { b } => {
                if b.is_empty() {
                    return bad("empty amplitude list");
                }
                if b.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return bad("amplitudes must be finite and nonnegative");
                }
            }
            NoiseSpec::Exponential { amplitude, rate } => {
                if !(amplitude.is_finite() && *amplitude >= 0.0 && rate.is_finite() && *rate >= 0.0) {
                    return bad("amplitude and rate must be finite and nonnegative");
                }
            }
            NoiseSpec::Forced { mode, amplitude, background } => {
                if *mode == 0 {
                    return bad("forced mode index is 1-based");
                }
                if !(amplitude.is_finite() && *amplitude >= 0.0 && background.is_finite() && *background >= 0.0) {
                    return bad("amplitudes must be finite and nonnegative");
                }
            }
        }
        Ok(())
    }

    /// `b_1..b_n`, zero-padded.
    pub fn amplitudes(&self, n: usize) -> Vec<f64> {
        (1..=n)
            .map(|j| match self {
                NoiseSpec::Explicit { b } => b.get(j - 1).copied().unwrap_or(0.0),
                NoiseSpec::Exponential { amplitude, rate } => amplitude * (-rate * j as f64).exp(),
                NoiseSpec::Forced { mode, amplitude, background } => {
                    if j == *mode {
                        *amplitude
                    } else {
                        *background
                    }
                }
            })
            .collect()
    }

    /// Noise intensity `B_r = 2 Σ_{j ≤ n} j^{2r} b_j²`.
    pub fn intensity(&self, r: u32, n: usize) -> f64 {
        2.0 * self
            .amplitudes(n)
            .iter()
            .enumerate()
            .map(|(j, b)| ((j + 1) as f64).powi(2 * r as i32) * b * b)
            .sum::<f64>()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            NoiseSpec::Explicit { b } => NoiseSpec::Explicit { b: b.iter().map(|x| x * factor).collect() },
            NoiseSpec::Exponential { amplitude, rate } => {
                NoiseSpec::Exponential { amplitude: amplitude * factor, rate: *rate }
            }
            NoiseSpec::Forced { mode, amplitude, background } => NoiseSpec::Forced {
                mode: *mode,
                amplitude: amplitude * factor,
                background: background * factor,
            },
        }
    }
}

fn check_potential(basis: &SpectralBasis, potential: &PotentialSpec) -> Result<()> {
    if basis.potential() != potential {
        return Err(Error::InvalidPotential("basis was built from a different potential".into()));
    }
    Ok(())
}

/// `M_k = ⟨V φ_k, φ_k⟩`.
pub fn compute_damping_shifts(basis: &SpectralBasis, potential: &PotentialSpec) -> Result<Vec<f64>> {
    check_potential(basis, potential)?;
    let v = basis.potential_samples();
    Ok((0..basis.m())
        .map(|k| {
            let row = basis.phi().row(k);
            basis.weight() * row.iter().zip(v).map(|(p, vi)| vi * p * p).sum::<f64>()
        })
        .collect())
}

/// `(L', L)` with `L'_{kl} = ∫ φ_k² φ_l²` and `L_{kl} = (2 − δ_{kl}) L'_{kl}`.
pub fn compute_interaction_matrix(basis: &SpectralBasis) -> (DMatrix<f64>, DMatrix<f64>) {
    let sq = basis.phi().map(|p| p * p);
    let lprime = (&sq * sq.transpose()) * basis.weight();
    let lprime = (&lprime + lprime.transpose()) * 0.5;
    let l = DMatrix::from_fn(basis.m(), basis.m(), |k, j| {
        if k == j {
            lprime[(k, j)]
        } else {
            2.0 * lprime[(k, j)]
        }
    });
    (lprime, l)
}

/// `(Y, B, warnings)` with `B_{kj} = Ψ_{kj} b_j`, `Y_k = (Σ_j B_{kj}²)^{1/2}`.
pub fn compute_noise_coefficients(
    basis: &SpectralBasis,
    noise: &NoiseSpec,
) -> Result<(Vec<f64>, DMatrix<f64>, Vec<String>)> {
    noise.validate()?;
    let b = noise.amplitudes(basis.n_galerkin());
    let mut warnings = Vec::new();
    let zeros: Vec<usize> = b.iter().enumerate().filter(|(_, x)| **x == 0.0).map(|(j, _)| j + 1).collect();
    if !zeros.is_empty() {
        warnings.push(format!(
            "b_j = 0 for j in {zeros:?}: noise is degenerate, uniqueness of the limit is not guaranteed"
        ));
    }
    let dispersion = DMatrix::from_fn(basis.m(), basis.n_galerkin(), |k, j| basis.psi()[(k, j)] * b[j]);
    let y = (0..basis.m()).map(|k| dispersion.row(k).norm()).collect();
    Ok((y, dispersion, warnings))
}

#[derive(Clone, Debug)]
pub struct EffectiveCoefficients {
    pub lambda: Vec<f64>,
    pub m_shift: Vec<f64>,
    pub lprime: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub y: Vec<f64>,
    pub dispersion: DMatrix<f64>,
    pub amplitudes: Vec<f64>,
    pub warnings: Vec<String>,
}

impl EffectiveCoefficients {
    pub fn compute(basis: &SpectralBasis, noise: &NoiseSpec) -> Result<Self> {
        let m_shift = compute_damping_shifts(basis, basis.potential())?;
        let (lprime, l) = compute_interaction_matrix(basis);
        let (y, dispersion, warnings) = compute_noise_coefficients(basis, noise)?;
        Ok(Self {
            lambda: basis.lambda().to_vec(),
            m_shift,
            lprime,
            l,
            y,
            dispersion,
            amplitudes: noise.amplitudes(basis.n_galerkin()),
            warnings,
        })
    }

    pub fn m(&self) -> usize {
        self.lambda.len()
    }

    /// `λ_k − M_k = ‖φ_k′‖²`.
    pub fn stiffness(&self) -> Vec<f64> {
        self.lambda.iter().zip(&self.m_shift).map(|(l, m)| l - m).collect()
    }

    /// `Σ_k Y_k²`, the Itô energy input of the truncated system.
    pub fn noise_power(&self) -> f64 {
        self.y.iter().map(|y| y * y).sum()
    }

    pub fn dump(&self) -> CoefficientDump {
        CoefficientDump {
            m: self.m_shift.clone(),
            lprime: rows(&self.lprime),
            y: self.y.clone(),
        }
    }

    /// `L` as CSV, one row per line.
    pub fn l_csv(&self) -> String {
        rows(&self.l)
            .iter()
            .map(|r| r.iter().map(|x| format!("{x:.17e}")).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }
}

fn rows(a: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDump {
    #[serde(rename = "M")]
    pub m: Vec<f64>,
    #[serde(rename = "Lprime")]
    pub lprime: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    pub y: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::spectral::{build_basis, build_basis_with_grid};

    #[test]
    fn constant_potentials_give_constant_shifts() {
        for c in [0.0, 1.0] {
            let v = PotentialSpec::constant(c);
            let basis = build_basis(&v, 5, 20).unwrap();
            let m = compute_damping_shifts(&basis, &v).unwrap();
            assert!(m.iter().all(|x| (x - c).abs() < 1e-12));
        }
    }

    #[test]
    fn shifts_converge_under_quadrature_refinement() {
        let v = PotentialSpec::cosines(vec![1.0, 0.0, 1.0]);
        let a = build_basis(&v, 6, 24).unwrap();
        let b = build_basis_with_grid(&v, 6, 24, 32 * 24).unwrap();
        let ma = compute_damping_shifts(&a, &v).unwrap();
        let mb = compute_damping_shifts(&b, &v).unwrap();
        for (x, y) in ma.iter().zip(&mb) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, l) in ma.iter().zip(a.lambda()) {
            assert!(*x <= l + 1e-8);
        }
    }

    #[test]
    fn mismatched_potential_is_rejected() {
        let basis = build_basis(&PotentialSpec::zero(), 2, 8).unwrap();
        assert!(compute_damping_shifts(&basis, &PotentialSpec::constant(1.0)).is_err());
    }

    #[test]
    fn free_interaction_integrals() {
        let basis = build_basis(&PotentialSpec::zero(), 5, 20).unwrap();
        let (lp, l) = compute_interaction_matrix(&basis);
        for k in 0..5 {
            for j in 0..5 {
                let want = if k == j { 3.0 / (4.0 * PI) } else { 1.0 / (2.0 * PI) };
                assert!((lp[(k, j)] - want).abs() < 1e-12);
                let factor = if k == j { 1.0 } else { 2.0 };
                assert!((l[(k, j)] - factor * want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_basis_gives_y_equal_b() {
        let basis = build_basis(&PotentialSpec::zero(), 4, 16).unwrap();
        let noise = NoiseSpec::Exponential { amplitude: 1.0, rate: 1.0 };
        let (y, _, w) = compute_noise_coefficients(&basis, &noise).unwrap();
        assert!(w.is_empty());
        for (k, yk) in y.iter().enumerate() {
            assert!((yk - (-((k + 1) as f64)).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn square_basis_preserves_noise_power() {
        // m = n_galerkin / 4 < n_galerkin, so compare the full orthogonal eigenbasis instead
        let v = PotentialSpec::cosines(vec![0.7, 0.4, 0.2]);
        let basis = build_basis(&v, 8, 32).unwrap();
        let noise = NoiseSpec::Explicit { b: vec![0.3, 0.2, 0.1] };
        let (_, disp, _) = compute_noise_coefficients(&basis, &noise).unwrap();
        // columns of Ψᵀ restricted to the first three sines are almost entirely captured by 8 modes
        let captured: f64 = disp.iter().map(|x| x * x).sum();
        let total = noise.intensity(0, 32) / 2.0;
        assert!(captured <= total + 1e-12);
        assert!(captured > 0.99 * total);
    }

    #[test]
    fn full_orthogonal_basis_gives_exact_noise_power() {
        let v = PotentialSpec::cosines(vec![0.7, 0.4, 0.2]);
        let basis = build_basis(&v, 4, 16).unwrap();
        let full = nalgebra::SymmetricEigen::new(basis.galerkin().clone()).eigenvectors;
        let b = NoiseSpec::Exponential { amplitude: 0.5, rate: 0.3 }.amplitudes(16);
        let y2: f64 = (0..16)
            .map(|k| (0..16).map(|j| (full[(j, k)] * b[j]).powi(2)).sum::<f64>())
            .sum();
        let total: f64 = b.iter().map(|x| x * x).sum();
        assert!((y2 - total).abs() < 1e-12);
    }

    #[test]
    fn single_column_noise() {
        let v = PotentialSpec::cosines(vec![0.7, 0.4, 0.2]);
        let basis = build_basis(&v, 4, 16).unwrap();
        let noise = NoiseSpec::Explicit { b: vec![1.0] };
        let (y, _, w) = compute_noise_coefficients(&basis, &noise).unwrap();
        assert_eq!(w.len(), 1);
        for k in 0..4 {
            assert!((y[k] - basis.psi()[(k, 0)].abs()).abs() < 1e-14);
        }
    }

    #[test]
    fn negative_amplitudes_rejected() {
        assert!(NoiseSpec::Explicit { b: vec![0.1, -0.2] }.validate().is_err());
    }

    #[test]
    fn intensity_formula() {
        let noise = NoiseSpec::Explicit { b: vec![1.0, 0.5] };
        assert!((noise.intensity(0, 4) - 2.0 * 1.25).abs() < 1e-15);
        assert!((noise.intensity(1, 4) - 2.0 * (1.0 + 4.0 * 0.25)).abs() < 1e-15);
    }
}
