//! Sturm–Liouville eigenbasis of `A_V = −∂²/∂x² + V(x)` on odd 2π-periodic
//! functions, computed by Galerkin projection onto the sine basis
//! `e_j(x) = sin(jx)/√π` with trapezoidal quadrature on a uniform grid.

mod quasiperiodic;
mod resonance;

pub use quasiperiodic::{decay_envelope, time_average_quasiperiodic, TimeAverage, TrigPolynomial};
pub use resonance::{check_nonresonance, ResonanceReport, ResonanceSearch};

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parity tolerance for sampled potentials.
pub const PARITY_TOL: f64 = 1e-10;
/// Eigenvalues closer than this (relative to `max(1, |λ|)`) are reported as a cluster.
pub const GAP_TOL: f64 = 1e-8;
/// Quadrature points per Galerkin mode.
pub const GRID_FACTOR: usize = 8;

/// Even, 2π-periodic potential `V(x) ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `V(x) = Σ_j cos[j]·cos(jx) + Σ_j sin[j]·sin(jx)`; any nonzero `sin`
    /// coefficient makes the potential non-even and is rejected.
    TrigPolynomial {
        cos: Vec<f64>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        sin: Vec<f64>,
    },
    /// Samples `V(2πi/n)`, `i = 0..n`, trigonometrically interpolated.
    GridSamples { values: Vec<f64> },
}

impl PotentialSpec {
    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        PotentialSpec::TrigPolynomial { cos: vec![c], sin: Vec::new() }
    }

    pub fn cosines(cos: Vec<f64>) -> Self {
        PotentialSpec::TrigPolynomial { cos, sin: Vec::new() }
    }

    /// Checks parity and finiteness. Nonnegativity is checked on the
    /// quadrature grid by [`PotentialSpec::sample`].
    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialSpec::TrigPolynomial { cos, sin } => {
                if cos.iter().chain(sin).any(|c| !c.is_finite()) {
                    return Err(Error::InvalidPotential("non-finite coefficient".into()));
                }
                // sin(jx) - sin(j(2π - x)) = 2 sin(jx), so the odd part is bounded by 2Σ|s_j|.
                let deviation = 2.0 * sin.iter().map(|s| s.abs()).sum::<f64>();
                if deviation > PARITY_TOL {
                    return Err(Error::NonEvenPotential { deviation, tolerance: PARITY_TOL });
                }
            }
            PotentialSpec::GridSamples { values } => {
                let n = values.len();
                if n < 2 {
                    return Err(Error::InvalidPotential("need at least two samples".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidPotential("non-finite sample".into()));
                }
                let deviation = (1..n)
                    .map(|i| (values[i] - values[n - i]).abs())
                    .fold(0.0, f64::max);
                if deviation > PARITY_TOL {
                    return Err(Error::NonEvenPotential { deviation, tolerance: PARITY_TOL });
                }
            }
        }
        Ok(())
    }

    /// Cosine coefficients of the (even) potential.
    fn cosine_coefficients(&self) -> Vec<f64> {
        match self {
            PotentialSpec::TrigPolynomial { cos, .. } => cos.clone(),
            PotentialSpec::GridSamples { values } => {
                let n = values.len();
                let half = n / 2;
                (0..=half)
                    .map(|j| {
                        let s: f64 = values
                            .iter()
                            .enumerate()
                            .map(|(i, v)| v * (2.0 * PI * (j * i) as f64 / n as f64).cos())
                            .sum();
                        if j == 0 || (n % 2 == 0 && j == half) {
                            s / n as f64
                        } else {
                            2.0 * s / n as f64
                        }
                    })
                    .collect()
            }
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.cosine_coefficients()
            .iter()
            .enumerate()
            .map(|(j, c)| c * (j as f64 * x).cos())
            .sum()
    }

    /// Samples the potential on `grid`, rejecting negative values.
    pub fn sample(&self, grid: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let coeffs = self.cosine_coefficients();
        let values: Vec<f64> = grid
            .iter()
            .map(|&x| coeffs.iter().enumerate().map(|(j, c)| c * (j as f64 * x).cos()).sum())
            .collect();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        if min < -1e-12 {
            return Err(Error::NegativePotential { min });
        }
        Ok(values)
    }
}

/// Uniform trapezoidal grid on `[0, 2π)`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()
}

/// Sine basis samples `e_j(x_i)`, rows `j = 1..=n_galerkin`.
pub fn sine_table(n_galerkin: usize, grid: &[f64]) -> DMatrix<f64> {
    let norm = 1.0 / PI.sqrt();
    DMatrix::from_fn(n_galerkin, grid.len(), |j, i| norm * ((j + 1) as f64 * grid[i]).sin())
}

/// Galerkin matrix `A_{jl} = j²δ_{jl} + ⟨V e_j, e_l⟩` assembled by quadrature.
pub fn assemble_galerkin(v_grid: &[f64], sines: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sines.nrows();
    let w = 2.0 * PI / v_grid.len() as f64;
    let weighted = DMatrix::from_fn(n, v_grid.len(), |j, i| sines[(j, i)] * v_grid[i] * w);
    let mut a = &weighted * sines.transpose();
    for j in 0..n {
        a[(j, j)] += ((j + 1) * (j + 1)) as f64;
    }
    // symmetrize away rounding
    let at = a.transpose();
    (a + at) * 0.5
}

/// Eigenvalues closer than the gap tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// 1-based index `k` of the lower eigenvalue of the pair `(λ_k, λ_{k+1})`.
    pub mode: usize,
    pub gap: f64,
}

/// Truncated eigenbasis of `A_V`.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    potential: PotentialSpec,
    m: usize,
    n_galerkin: usize,
    lambda: Vec<f64>,
    psi: DMatrix<f64>,
    galerkin: DMatrix<f64>,
    grid: Vec<f64>,
    weight: f64,
    v_grid: Vec<f64>,
    phi: DMatrix<f64>,
    clusters: Vec<Cluster>,
}

/// Builds the lowest `m` eigenpairs using `n_galerkin` sine modes and the
/// default grid of `8·n_galerkin` quadrature points.
pub fn build_basis(potential: &PotentialSpec, m: usize, n_galerkin: usize) -> Result<SpectralBasis> {
    build_basis_with_grid(potential, m, n_galerkin, GRID_FACTOR * n_galerkin)
}

pub fn build_basis_with_grid(
    potential: &PotentialSpec,
    m: usize,
    n_galerkin: usize,
    n_grid: usize,
) -> Result<SpectralBasis> {
    if m == 0 || n_galerkin < 4 * m {
        return Err(Error::GalerkinTooSmall { m, n_galerkin, required: 4 * m.max(1) });
    }
    if n_grid < GRID_FACTOR * n_galerkin {
        return Err(Error::GridTooSmall { n_grid, required: GRID_FACTOR * n_galerkin - 1 });
    }
    let grid = uniform_grid(n_grid);
    let v_grid = potential.sample(&grid)?;
    let sines = sine_table(n_galerkin, &grid);
    let galerkin = assemble_galerkin(&v_grid, &sines);

    let eig = SymmetricEigen::new(galerkin.clone());
    let mut order: Vec<usize> = (0..n_galerkin).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut lambda = Vec::with_capacity(m);
    let mut psi = DMatrix::zeros(m, n_galerkin);
    for (k, &idx) in order.iter().take(m).enumerate() {
        lambda.push(eig.eigenvalues[idx]);
        let col = eig.eigenvectors.column(idx);
        let scale = col.amax();
        let sign = col
            .iter()
            .find(|c| c.abs() > 1e-10 * scale)
            .map_or(1.0, |c| c.signum());
        for j in 0..n_galerkin {
            psi[(k, j)] = sign * col[j];
        }
    }

    let clusters = lambda
        .windows(2)
        .enumerate()
        .filter_map(|(k, w)| {
            let gap = w[1] - w[0];
            (gap < GAP_TOL * w[1].abs().max(1.0)).then_some(Cluster { mode: k + 1, gap })
        })
        .collect();

    let phi = &psi * &sines;
    Ok(SpectralBasis {
        potential: potential.clone(),
        m,
        n_galerkin,
        lambda,
        psi,
        galerkin,
        weight: 2.0 * PI / n_grid as f64,
        grid,
        v_grid,
        phi,
        clusters,
    })
}

impl SpectralBasis {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_galerkin(&self) -> usize {
        self.n_galerkin
    }

    pub fn n_grid(&self) -> usize {
        self.grid.len()
    }

    pub fn potential(&self) -> &PotentialSpec {
        &self.potential
    }

    /// Ascending eigenvalues `λ_1..λ_m`.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    /// `Ψ_{kj} = ⟨φ_k, e_j⟩`, `m × n_galerkin`.
    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn galerkin(&self) -> &DMatrix<f64> {
        &self.galerkin
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// Trapezoidal weight `2π/n_grid`.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// `V(x_i)` on the quadrature grid.
    pub fn potential_samples(&self) -> &[f64] {
        &self.v_grid
    }

    /// Eigenfunction samples `φ_k(x_i)`, `m × n_grid`.
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Near-degenerate eigenvalue pairs (diagnostic only).
    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    /// `v_k = ⟨u, φ_k⟩` by quadrature.
    pub fn to_modes(&self, u: &[Complex64]) -> Result<Vec<Complex64>> {
        if u.len() != self.n_grid() {
            return Err(Error::DimensionMismatch { expected: self.n_grid(), got: u.len() });
        }
        Ok((0..self.m)
            .map(|k| {
                let row = self.phi.row(k);
                let s: Complex64 = row.iter().zip(u).map(|(p, z)| z * *p).sum();
                s * self.weight
            })
            .collect())
    }

    /// `u(x_i) = Σ_k v_k φ_k(x_i)`.
    pub fn from_modes(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.m {
            return Err(Error::DimensionMismatch { expected: self.m, got: v.len() });
        }
        let mut u = vec![Complex64::new(0.0, 0.0); self.n_grid()];
        for (k, vk) in v.iter().enumerate() {
            for (ui, p) in u.iter_mut().zip(self.phi.row(k).iter()) {
                *ui += vk * *p;
            }
        }
        Ok(u)
    }

    /// `max |ΨΨᵀ − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = &self.psi * self.psi.transpose();
        (gram - DMatrix::identity(self.m, self.m)).amax()
    }

    pub fn dump(&self) -> BasisDump {
        BasisDump {
            m: self.m,
            n_galerkin: self.n_galerkin,
            lambda: self.lambda.clone(),
            psi: (0..self.m)
                .flat_map(|k| self.psi.row(k).iter().copied().collect::<Vec<_>>())
                .collect(),
            potential: self.potential.clone(),
        }
    }
}

/// JSON form of a basis: `Ψ` flattened row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisDump {
    pub m: usize,
    pub n_galerkin: usize,
    pub lambda: Vec<f64>,
    pub psi: Vec<f64>,
    pub potential: PotentialSpec,
}
