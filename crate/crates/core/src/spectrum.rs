//! Subsystem spectral data: eigenenergies, observables and the initial
//! reduced state, all expressed in the energy eigenbasis of the subsystem.

use crate::linalg::{hermiticity_violation, min_hermitian_eigenvalue, trace};
use crate::{CMatrix, Error, RMatrix, Result};

/// Tolerance for Hermiticity, trace and positivity checks.
pub const VALIDATION_TOL: f64 = 1e-12;

/// Eigenenergies of the subsystem Hamiltonian.
///
/// Levels may be unsorted and degenerate; the index order is the basis order
/// used by every matrix in the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpectrum {
    energies: Vec<f64>,
}

impl SystemSpectrum {
    pub fn new(energies: Vec<f64>) -> Result<Self> {
        if energies.is_empty() {
            return Err(Error::InvalidParameter("spectrum needs at least one level".into()));
        }
        if let Some(i) = energies.iter().position(|e| !e.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "energy E_{i} = {} is not finite",
                energies[i]
            )));
        }
        Ok(SystemSpectrum { energies })
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// ω_mn = E_m − E_n.
    pub fn transition_frequency(&self, m: usize, n: usize) -> f64 {
        self.energies[m] - self.energies[n]
    }

    pub fn transition_frequencies(&self) -> RMatrix {
        let n = self.len();
        RMatrix::from_fn(n, n, |m, k| self.transition_frequency(m, k))
    }
}

/// Result of checking a candidate observable matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiticityReport {
    pub max_violation: f64,
    pub accepted: bool,
}

pub fn validate_observable(elements: &CMatrix, dim: usize) -> Result<HermiticityReport> {
    if elements.nrows() != dim || elements.ncols() != dim {
        return Err(Error::dimension(
            "observable",
            format!("{dim}x{dim}"),
            format!("{}x{}", elements.nrows(), elements.ncols()),
        ));
    }
    let max_violation = hermiticity_violation(elements);
    Ok(HermiticityReport {
        max_violation,
        accepted: max_violation <= VALIDATION_TOL,
    })
}

/// A Hermitian observable A_mn in the subsystem eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    elements: CMatrix,
}

impl Observable {
    pub fn new(elements: CMatrix) -> Result<Self> {
        if !elements.is_square() {
            return Err(Error::dimension(
                "observable",
                "square matrix",
                format!("{}x{}", elements.nrows(), elements.ncols()),
            ));
        }
        let report = validate_observable(&elements, elements.nrows())?;
        if !report.accepted {
            return Err(Error::NotHermitian {
                what: "observable".into(),
                violation: report.max_violation,
            });
        }
        Ok(Observable { elements })
    }

    pub fn identity(n: usize) -> Self {
        Observable {
            elements: CMatrix::identity(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.elements
    }

    /// Real diagonal element A_nn.
    pub fn diagonal(&self, n: usize) -> f64 {
        self.elements[(n, n)].re
    }

    pub(crate) fn check_dim(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::dimension("observable", n, self.dim()));
        }
        Ok(())
    }
}

/// Initial reduced density matrix ρ_mn(0).
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedInitialState {
    rho0: CMatrix,
}

impl ReducedInitialState {
    pub fn new(rho0: CMatrix) -> Result<Self> {
        validate_density_matrix(&rho0, "initial reduced state")?;
        Ok(ReducedInitialState { rho0 })
    }

    pub fn dim(&self) -> usize {
        self.rho0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho0
    }

    /// Population ρ_nn(0).
    pub fn population(&self, n: usize) -> f64 {
        self.rho0[(n, n)].re
    }
}

/// Hermitian, unit trace and positive semidefinite, each to 1e-12.
pub(crate) fn validate_density_matrix(rho: &CMatrix, what: &str) -> Result<()> {
    if !rho.is_square() || rho.nrows() == 0 {
        return Err(Error::dimension(
            what,
            "non-empty square matrix",
            format!("{}x{}", rho.nrows(), rho.ncols()),
        ));
    }
    let violation = hermiticity_violation(rho);
    if violation > VALIDATION_TOL {
        return Err(Error::NotHermitian {
            what: what.into(),
            violation,
        });
    }
    let tr = trace(rho).re;
    if (tr - 1.0).abs() > VALIDATION_TOL {
        return Err(Error::Trace {
            what: what.into(),
            value: tr,
        });
    }
    let min_eigenvalue = min_hermitian_eigenvalue(rho);
    if min_eigenvalue < -VALIDATION_TOL {
        return Err(Error::NotPositive {
            what: what.into(),
            min_eigenvalue,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_level_frequencies() {
        let s = SystemSpectrum::new(vec![0.0, 1.0]).unwrap();
        let w = s.transition_frequencies();
        assert_eq!(w[(0, 0)], 0.0);
        assert_eq!(w[(0, 1)], -1.0);
        assert_eq!(w[(1, 0)], 1.0);
        assert_eq!(w[(1, 1)], 0.0);
    }

    #[test]
    fn degenerate_levels_do_not_rotate() {
        let s = SystemSpectrum::new(vec![2.0, 2.0]).unwrap();
        assert!(s.transition_frequencies().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn rejects_empty_and_nonfinite() {
        assert!(SystemSpectrum::new(vec![]).is_err());
        assert!(SystemSpectrum::new(vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn identity_observable_has_no_violation() {
        let r = validate_observable(&CMatrix::identity(3, 3), 3).unwrap();
        assert!(r.accepted);
        assert_eq!(r.max_violation, 0.0);
    }

    #[test]
    fn antihermitian_offdiagonal_rejected() {
        let m = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., 1.), c(0., 1.), c(0., 0.)]);
        let r = validate_observable(&m, 2).unwrap();
        assert!(!r.accepted);
        assert!(Observable::new(m).is_err());
    }

    #[test]
    fn hermitian_by_construction_accepted() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1., 0.), c(1., 1.), c(1., -1.), c(2., 0.)]);
        assert!(validate_observable(&m, 2).unwrap().accepted);
        assert!(Observable::new(m).is_ok());
    }

    #[test]
    fn dimension_mismatch_reports_both() {
        let err = validate_observable(&CMatrix::identity(2, 2), 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3x3") && msg.contains("2x2"), "{msg}");
    }

    #[test]
    fn initial_state_checks() {
        let good = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.), c(0.5, 0.), c(0.5, 0.), c(0.5, 0.)]);
        assert!(ReducedInitialState::new(good).is_ok());

        let bad_trace = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.), c(0., 0.), c(0., 0.), c(0.5, 0.)]);
        match ReducedInitialState::new(bad_trace) {
            Err(Error::Trace { value, .. }) => assert_eq!(value, 1.5),
            other => panic!("{other:?}"),
        }

        let negative = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.), c(0.9, 0.), c(0.9, 0.), c(0.5, 0.)]);
        assert!(matches!(
            ReducedInitialState::new(negative),
            Err(Error::NotPositive { .. })
        ));
    }
}
