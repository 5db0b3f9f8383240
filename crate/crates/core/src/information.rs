//! Average information I(t) = Tr ρ(t) ln ρ(0) of the composite system and
//! the Gibbs-Klein inequality behind its monotonicity.

use std::fmt::Write as _;

use crate::fmt::float;
use crate::linalg::{hermiticity_violation, trace, trace_of_product, HermitianEigen};
use crate::oracle::{evolve_exact, CompositeState, CompositeSystem};
use crate::spectrum::VALIDATION_TOL;
use crate::{CMatrix, Error, Result};

/// Smallest eigenvalue of ρ(0) for which ln ρ(0) is accepted.
pub const DEFAULT_EIGENVALUE_FLOOR: f64 = 1e-12;
/// Slack for the inequality checks.
pub const INEQUALITY_TOL: f64 = 1e-10;

/// ln ρ(0) precomputed once and shared across a time sweep.
#[derive(Debug, Clone)]
pub struct InformationModel<'a> {
    sys: &'a CompositeSystem,
    rho0: &'a CompositeState,
    log_rho0: CMatrix,
    initial: f64,
}

impl<'a> InformationModel<'a> {
    pub fn new(sys: &'a CompositeSystem, rho0: &'a CompositeState) -> Result<Self> {
        Self::with_floor(sys, rho0, DEFAULT_EIGENVALUE_FLOOR)
    }

    pub fn with_floor(sys: &'a CompositeSystem, rho0: &'a CompositeState, floor: f64) -> Result<Self> {
        if rho0.dim() != sys.dim() {
            return Err(Error::dimension("composite state", sys.dim(), rho0.dim()));
        }
        let eig = HermitianEigen::new(rho0.matrix());
        let min = eig.min_eigenvalue();
        if min < floor {
            return Err(Error::SingularState { eigenvalue: min, floor });
        }
        let initial = eig.eigenvalues.iter().map(|&l| l * l.ln()).sum();
        Ok(InformationModel {
            sys,
            rho0,
            log_rho0: eig.map(f64::ln),
            initial,
        })
    }

    /// I(0) = Σ λ ln λ over the spectrum of ρ(0).
    pub fn initial(&self) -> f64 {
        self.initial
    }

    pub fn log_state(&self) -> &CMatrix {
        &self.log_rho0
    }

    /// I(t) = Re Tr[ρ(t) ln ρ(0)].
    pub fn at(&self, t: f64) -> Result<f64> {
        let evolved = evolve_exact(self.sys, self.rho0, t)?;
        Ok(trace_of_product(evolved.matrix(), &self.log_rho0).re)
    }

    /// (I(0) − I(t), Tr[ρ(0) − ρ(−t)]), failing if the deficit falls below
    /// the bound by more than 1e-10.
    pub fn deficit_bound(&self, t: f64) -> Result<(f64, f64)> {
        let deficit = self.initial - self.at(t)?;
        let backwards = evolve_exact(self.sys, self.rho0, -t)?;
        let bound = (trace(self.rho0.matrix()) - trace(backwards.matrix())).re;
        if deficit < bound - INEQUALITY_TOL {
            return Err(Error::Invariant(format!(
                "information deficit {deficit:e} below bound {bound:e} at t = {t}"
            )));
        }
        Ok((deficit, bound))
    }

    pub fn trace_over(&self, times: &[f64]) -> Result<InformationTrace> {
        let mut out = InformationTrace::default();
        for &t in times {
            let (deficit, bound) = self.deficit_bound(t)?;
            out.times.push(t);
            out.values.push(self.initial - deficit);
            out.deficits.push(deficit);
            out.bounds.push(bound);
        }
        Ok(out)
    }
}

pub fn average_information(sys: &CompositeSystem, rho0: &CompositeState, t: f64) -> Result<f64> {
    InformationModel::new(sys, rho0)?.at(t)
}

pub fn information_deficit_bound(sys: &CompositeSystem, rho0: &CompositeState, t: f64) -> Result<(f64, f64)> {
    InformationModel::new(sys, rho0)?.deficit_bound(t)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InformationTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub deficits: Vec<f64>,
    pub bounds: Vec<f64>,
}

impl InformationTrace {
    pub fn min_deficit(&self) -> f64 {
        self.deficits.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_deficit(&self) -> f64 {
        self.deficits.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every deficit ≥ −1e-10.
    pub fn non_increasing(&self) -> bool {
        self.deficits.iter().all(|&d| d >= -INEQUALITY_TOL)
    }

    /// Columns t, I, deficit, bound.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,I,deficit,bound\n");
        for i in 0..self.times.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                float(self.times[i]),
                float(self.values[i]),
                float(self.deficits[i]),
                float(self.bounds[i])
            );
        }
        out
    }
}

/// `count` times spaced logarithmically over [lo, hi].
pub fn log_times(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) || count < 2 {
        return Err(Error::InvalidParameter(format!(
            "log-spaced times need 0 < lo < hi and count >= 2 (got {lo}, {hi}, {count})"
        )));
    }
    let (a, b) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| {
            if i == 0 {
                lo
            } else if i == count - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (count - 1) as f64).exp()
            }
        })
        .collect())
}

/// Default sweep: 50 log-spaced times in [1e-2, 1e2].
pub fn default_sweep_times() -> Vec<f64> {
    log_times(1e-2, 1e2, 50).expect("static range is valid")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsKlein {
    /// Tr(A ln A − A ln B)
    pub lhs: f64,
    /// Tr(A − B)
    pub rhs: f64,
    pub holds: bool,
}

/// Checks Tr(A ln A − A ln B) ≥ Tr(A − B) for A ⪰ 0 and B ≻ 0, with
/// 0 · ln 0 = 0 on the kernel of A.
pub fn gibbs_klein_check(a: &CMatrix, b: &CMatrix) -> Result<GibbsKlein> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::dimension(
            "Gibbs-Klein operands",
            format!("{}x{}", a.nrows(), a.nrows()),
            format!("{}x{}", b.nrows(), b.ncols()),
        ));
    }
    for (m, what) in [(a, "A"), (b, "B")] {
        let violation = hermiticity_violation(m);
        if violation > VALIDATION_TOL {
            return Err(Error::NotHermitian {
                what: what.into(),
                violation,
            });
        }
    }
    let ea = HermitianEigen::new(a);
    let eb = HermitianEigen::new(b);
    let min_a = ea.min_eigenvalue();
    if min_a < -VALIDATION_TOL {
        return Err(Error::NotPositive {
            what: "A".into(),
            min_eigenvalue: min_a,
        });
    }
    let min_b = eb.min_eigenvalue();
    if min_b <= 0.0 {
        return Err(Error::SingularState {
            eigenvalue: min_b,
            floor: 0.0,
        });
    }
    let a_log_a: f64 = ea
        .eigenvalues
        .iter()
        .map(|&l| if l > 0.0 { l * l.ln() } else { 0.0 })
        .sum();
    let log_b = eb.map(f64::ln);
    let lhs = a_log_a - trace_of_product(a, &log_b).re;
    let rhs = (trace(a) - trace(b)).re;
    Ok(GibbsKlein {
        lhs,
        rhs,
        holds: lhs >= rhs - INEQUALITY_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::SystemSpectrum;
    use crate::{Complex64, RMatrix};

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn diag(v: &[f64]) -> CMatrix {
        CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(v.len(), v.iter().map(|&x| c(x))))
    }

    fn small_system() -> CompositeSystem {
        let spec = SystemSpectrum::new(vec![0.0, 1.0]).unwrap();
        crate::oracle::build_composite(&spec, RMatrix::from_row_slice(2, 2, &[0.0, 0.3, 0.1, 0.7])).unwrap()
    }

    #[test]
    fn maximally_mixed_is_minus_log_dimension() {
        let sys = small_system();
        let rho = CompositeState::maximally_mixed(4);
        for t in [0.0, 1.0, 50.0] {
            assert!((average_information(&sys, &rho, t).unwrap() + 4f64.ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn initial_value_is_eigen_sum() {
        let sys = small_system();
        let lam = [0.1, 0.2, 0.3, 0.4];
        let rho = CompositeState::new(diag(&lam)).unwrap();
        let expected: f64 = lam.iter().map(|l| l * l.ln()).sum();
        let model = InformationModel::new(&sys, &rho).unwrap();
        assert!((model.initial() - expected).abs() < 1e-14);
        assert!((model.at(0.0).unwrap() - expected).abs() < 1e-14);
        // stationary: zero deficit everywhere
        for t in [0.5, 10.0] {
            let (d, b) = model.deficit_bound(t).unwrap();
            assert!(d.abs() < 1e-14 && b.abs() < 1e-14);
        }
    }

    #[test]
    fn singular_state_refused() {
        let sys = small_system();
        let rho = CompositeState::new(diag(&[0.5, 0.5, 0.0, 0.0])).unwrap();
        assert!(matches!(
            InformationModel::new(&sys, &rho),
            Err(Error::SingularState { .. })
        ));
    }

    #[test]
    fn gibbs_klein_equality_case() {
        let b = diag(&[0.2, 0.5, 0.3]);
        let g = gibbs_klein_check(&b, &b).unwrap();
        assert!(g.lhs.abs() < 1e-15 && g.rhs.abs() < 1e-15 && g.holds);
    }

    #[test]
    fn gibbs_klein_rank_deficient_a() {
        let g = gibbs_klein_check(&diag(&[1.0, 0.0]), &diag(&[0.5, 0.5])).unwrap();
        assert!((g.lhs - 2f64.ln()).abs() < 1e-15);
        assert!(g.rhs.abs() < 1e-15);
        assert!(g.holds);
    }

    #[test]
    fn gibbs_klein_rejects_bad_inputs() {
        assert!(gibbs_klein_check(&diag(&[1.0, 0.0]), &diag(&[1.0, 0.0])).is_err());
        let mut nh = diag(&[1.0, 1.0]);
        nh[(0, 1)] = c(0.3);
        assert!(matches!(
            gibbs_klein_check(&nh, &diag(&[1.0, 1.0])),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn log_grid_endpoints() {
        let t = default_sweep_times();
        assert_eq!(t.len(), 50);
        assert_eq!(t[0], 1e-2);
        assert_eq!(t[49], 1e2);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }
}
