//! Brute-force composite evolution.
//!
//! The total Hamiltonian is diagonal in the product basis |nk⟩ with
//! eigenvalues E_n + ε_nk, so exact evolution is an elementwise phase on the
//! joint density matrix. Partial traces of the evolved state are the ground
//! truth against which the spectral formulas in [`crate::dynamics`] are
//! checked. Basis index layout: (n, k) ↦ n·K + k.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{observable_average, ReducedModel};
use crate::environment::{DiscreteBath, Distribution};
use crate::spectrum::{validate_density_matrix, Observable, SystemSpectrum};
use crate::{CMatrix, Complex64, Error, RMatrix, Result};

pub const DEFAULT_DIMENSION_CAP: usize = 4096;

/// Tolerance for agreement of the two trace routes in [`exact_average`].
pub const TRACE_ROUTE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSystem {
    energies: Vec<f64>,
    bath_eigenvalues: RMatrix,
    total_energies: Vec<f64>,
}

pub fn build_composite(spectrum: &SystemSpectrum, bath_eigenvalues: RMatrix) -> Result<CompositeSystem> {
    build_composite_with_cap(spectrum, bath_eigenvalues, DEFAULT_DIMENSION_CAP)
}

pub fn build_composite_with_cap(
    spectrum: &SystemSpectrum,
    bath_eigenvalues: RMatrix,
    cap: usize,
) -> Result<CompositeSystem> {
    let (n, k) = bath_eigenvalues.shape();
    if n != spectrum.len() {
        return Err(Error::dimension("bath eigenvalue rows", spectrum.len(), n));
    }
    if k == 0 {
        return Err(Error::InvalidParameter("bath needs at least one state".into()));
    }
    if bath_eigenvalues.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidParameter("bath eigenvalues must be finite".into()));
    }
    let dim = n * k;
    if dim > cap {
        return Err(Error::DimensionCap { dim, cap });
    }
    let energies = spectrum.energies().to_vec();
    let total_energies = (0..n)
        .flat_map(|level| {
            let e = energies[level];
            let row: Vec<f64> = (0..k).map(|q| e + bath_eigenvalues[(level, q)]).collect();
            row
        })
        .collect();
    Ok(CompositeSystem {
        energies,
        bath_eigenvalues,
        total_energies,
    })
}

impl CompositeSystem {
    pub fn levels(&self) -> usize {
        self.energies.len()
    }

    pub fn bath_size(&self) -> usize {
        self.bath_eigenvalues.ncols()
    }

    pub fn dim(&self) -> usize {
        self.total_energies.len()
    }

    pub fn bath_eigenvalues(&self) -> &RMatrix {
        &self.bath_eigenvalues
    }

    /// Eigenvalues E_n + ε_nk of the total Hamiltonian, in basis order.
    pub fn total_energies(&self) -> &[f64] {
        &self.total_energies
    }

    pub fn hamiltonian(&self) -> CMatrix {
        diag(&self.total_energies)
    }

    /// H_A ⊗ 1 in the product basis.
    pub fn subsystem_hamiltonian(&self) -> CMatrix {
        let k = self.bath_size();
        let e: Vec<f64> = (0..self.dim()).map(|i| self.energies[i / k]).collect();
        diag(&e)
    }

    /// max |[H_A ⊗ 1, H_AB]_ij| from explicit matrix products.
    pub fn quasi_isolation_residual(&self) -> f64 {
        let ha = self.subsystem_hamiltonian();
        let hab = self.hamiltonian();
        let comm = &ha * &hab - &hab * &ha;
        comm.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn check_state(&self, state: &CompositeState) -> Result<()> {
        if state.dim() != self.dim() {
            return Err(Error::dimension("composite state", self.dim(), state.dim()));
        }
        Ok(())
    }
}

fn diag(values: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        values.len(),
        values.iter().map(|&v| Complex64::new(v, 0.0)),
    ))
}

/// Joint density matrix on the product space.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeState {
    rho: CMatrix,
}

impl CompositeState {
    pub fn new(rho: CMatrix) -> Result<Self> {
        validate_density_matrix(&rho, "composite state")?;
        Ok(CompositeState { rho })
    }

    /// ρ_A ⊗ ρ_B.
    pub fn product(rho_a: &CMatrix, rho_b: &CMatrix) -> Result<Self> {
        validate_density_matrix(rho_a, "subsystem factor")?;
        validate_density_matrix(rho_b, "bath factor")?;
        Ok(CompositeState {
            rho: rho_a.kronecker(rho_b),
        })
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        CompositeState {
            rho: CMatrix::identity(dim, dim).scale(1.0 / dim as f64),
        }
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn into_matrix(self) -> CMatrix {
        self.rho
    }

    /// Bath-diagonal blocks ρ_mnk(0) = ⟨mk|ρ|nk⟩ as a bath table.
    pub fn to_discrete_bath(&self, sys: &CompositeSystem) -> Result<DiscreteBath> {
        sys.check_state(self)?;
        let (n, k) = (sys.levels(), sys.bath_size());
        let slices = (0..k)
            .map(|q| CMatrix::from_fn(n, n, |m, l| self.rho[(m * k + q, l * k + q)]))
            .collect();
        DiscreteBath::new(sys.bath_eigenvalues.clone(), slices)
    }
}

/// ⟨mk|ρ(t)|nq⟩ = ⟨mk|ρ(0)|nq⟩ exp{−i[(E_m + ε_mk) − (E_n + ε_nq)]t}.
pub fn evolve_exact(sys: &CompositeSystem, rho0: &CompositeState, t: f64) -> Result<CompositeState> {
    sys.check_state(rho0)?;
    let lam = sys.total_energies();
    let d = sys.dim();
    let rho = CMatrix::from_fn(d, d, |i, j| {
        rho0.rho[(i, j)] * Complex64::cis(-(lam[i] - lam[j]) * t)
    });
    Ok(CompositeState { rho })
}

/// Tr_B: ρ^A_mn = Σ_k ⟨mk|ρ|nk⟩.
pub fn partial_trace(rho: &CMatrix, bath_size: usize) -> Result<CMatrix> {
    let d = rho.nrows();
    if !rho.is_square() || bath_size == 0 || d % bath_size != 0 {
        return Err(Error::dimension(
            "partial trace layout",
            format!("square N*K matrix with K = {bath_size}"),
            format!("{}x{}", rho.nrows(), rho.ncols()),
        ));
    }
    let n = d / bath_size;
    Ok(CMatrix::from_fn(n, n, |m, l| {
        (0..bath_size)
            .map(|q| rho[(m * bath_size + q, l * bath_size + q)])
            .sum()
    }))
}

/// ⟨A(t)⟩ computed twice: as Tr_AB[ρ(t)(A ⊗ 1)] over the full space and as
/// Tr_A[ρ_A(t) A] after the partial trace. Disagreement is a bug.
pub fn exact_average(sys: &CompositeSystem, rho0: &CompositeState, a: &Observable, t: f64) -> Result<Complex64> {
    a.check_dim(sys.levels())?;
    let evolved = evolve_exact(sys, rho0, t)?;
    let k = sys.bath_size();
    let am = a.matrix();
    let d = sys.dim();

    // (A ⊗ 1)_{(n,q),(m,k)} = A_nm δ_qk, generated on the fly.
    let mut full = Complex64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            if i % k == j % k {
                full += evolved.rho[(i, j)] * am[(j / k, i / k)];
            }
        }
    }

    let reduced_state = partial_trace(&evolved.rho, k)?;
    let reduced = crate::linalg::trace_of_product(&reduced_state, am);

    let scale = am.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let gap = (full - reduced).norm();
    if gap > TRACE_ROUTE_TOL * scale {
        return Err(Error::Invariant(format!(
            "full-space and reduced traces disagree by {gap:e} at t = {t}"
        )));
    }
    Ok(reduced)
}

/// Stratified deterministic bath: the quantiles (k + 1/2)/K of an analytic
/// density.
pub fn sample_bath_from_density(density: &Distribution, bath_size: usize) -> Result<Vec<f64>> {
    let Distribution::Family(family) = density else {
        return Err(Error::Unsupported(
            "bath sampling needs a gaussian, lorentz, poisson or uniform family".into(),
        ));
    };
    family.validate()?;
    if bath_size == 0 {
        return Err(Error::InvalidParameter("bath size must be >= 1".into()));
    }
    let k = bath_size as f64;
    Ok((0..bath_size)
        .map(|i| family.quantile((i as f64 + 0.5) / k))
        .collect())
}

/// One row of an oracle comparison report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleComparison {
    pub t: f64,
    pub exact: [f64; 2],
    pub spectral: [f64; 2],
    pub abs_diff: f64,
}

/// Exact composite averages against the spectral formula built from the
/// same state's bath table.
pub fn compare_with_spectral(
    sys: &CompositeSystem,
    rho0: &CompositeState,
    spectrum: &SystemSpectrum,
    a: &Observable,
    times: &[f64],
) -> Result<Vec<OracleComparison>> {
    let bath = rho0.to_discrete_bath(sys)?;
    let model = ReducedModel::from_bath(spectrum.clone(), &bath)?;
    times
        .par_iter()
        .map(|&t| {
            let exact = exact_average(sys, rho0, a, t)?;
            let spectral = observable_average(&model, a, t)?;
            Ok(OracleComparison {
                t,
                exact: [exact.re, exact.im],
                spectral: [spectral.re, spectral.im],
                abs_diff: (exact - spectral).norm(),
            })
        })
        .collect()
}
