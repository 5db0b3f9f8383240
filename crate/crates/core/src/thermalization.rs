//! Window states around a level j and the eigenstate-thermalization bound
//! |Σ_n ρ_nn A_nn − A_jj| ≤ max_window A_nn − min_window A_nn.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::dynamics::{equilibrium_value, ReducedModel};
use crate::spectrum::{Observable, ReducedInitialState, SystemSpectrum};
use crate::{CMatrix, Complex64, Error, Result};

/// Rounding slack, relative to the largest |A_nn| in the window, allowed on
/// the mean-value bound.
const BOUND_SLACK: f64 = 4.0 * f64::EPSILON;

/// Index set N_j containing its centre j.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    center: usize,
    members: BTreeSet<usize>,
}

impl Window {
    pub fn new(center: usize, members: impl IntoIterator<Item = usize>, dim: usize) -> Result<Self> {
        let members: BTreeSet<usize> = members.into_iter().collect();
        if members.is_empty() {
            return Err(Error::InvalidParameter("window is empty".into()));
        }
        if let Some(&bad) = members.iter().find(|&&m| m >= dim) {
            return Err(Error::IndexOutOfRange { index: bad, len: dim });
        }
        if !members.contains(&center) {
            return Err(Error::InvalidParameter(format!(
                "window centre {center} is not a member"
            )));
        }
        Ok(Window { center, members })
    }

    pub fn singleton(center: usize, dim: usize) -> Result<Self> {
        Self::new(center, [center], dim)
    }

    /// {n : |E_n − E_j| ≤ δE}.
    pub fn energy_band(spectrum: &SystemSpectrum, center: usize, half_width: f64) -> Result<Self> {
        if center >= spectrum.len() {
            return Err(Error::IndexOutOfRange {
                index: center,
                len: spectrum.len(),
            });
        }
        if !(half_width >= 0.0) {
            return Err(Error::InvalidParameter(format!("band half-width must be >= 0, got {half_width}")));
        }
        let ej = spectrum.energies()[center];
        let members = spectrum
            .energies()
            .iter()
            .enumerate()
            .filter(|(_, &e)| (e - ej).abs() <= half_width)
            .map(|(n, _)| n);
        Self::new(center, members, spectrum.len())
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn members(&self) -> &BTreeSet<usize> {
        &self.members
    }

    /// Z_j.
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Uniform populations 1/Z_j on the window.
pub fn microcanonical_state(window: &Window, dim: usize) -> Result<ReducedInitialState> {
    if let Some(&bad) = window.members.iter().find(|&&m| m >= dim) {
        return Err(Error::IndexOutOfRange { index: bad, len: dim });
    }
    let p = 1.0 / window.size() as f64;
    let mut rho = CMatrix::zeros(dim, dim);
    for &n in &window.members {
        rho[(n, n)] = Complex64::new(p, 0.0);
    }
    ReducedInitialState::new(rho)
}

/// ΔA = max_{n∈N_j} A_nn − min_{n∈N_j} A_nn.
pub fn observable_spread(a: &Observable, window: &Window) -> f64 {
    let (lo, hi) = window
        .members
        .iter()
        .map(|&n| a.diagonal(n))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermalizationReport {
    pub j: usize,
    pub window: Vec<usize>,
    #[serde(rename = "Z")]
    pub z: usize,
    #[serde(rename = "A_jj")]
    pub a_jj: f64,
    pub equilibrium: f64,
    pub diff: f64,
    pub spread: f64,
    /// ΔA / |A_jj|, absent when A_jj = 0.
    pub ratio: Option<f64>,
    /// diff ≤ spread (up to a few ulps).
    pub holds: bool,
    /// Some kernel does not decay, so the equilibrium is only a time average.
    pub partial: bool,
}

/// Compares the long-time value of a window-supported initial state with
/// A_jj. Populations outside the window are a precondition violation.
pub fn thermalization_check(model: &ReducedModel, a: &Observable, window: &Window) -> Result<ThermalizationReport> {
    let dim = model.dim();
    a.check_dim(dim)?;
    if let Some(&bad) = window.members.iter().find(|&&m| m >= dim) {
        return Err(Error::IndexOutOfRange { index: bad, len: dim });
    }
    let rho = model.initial_state();
    if let Some(n) = (0..dim).find(|n| !window.members.contains(n) && rho.population(*n) != 0.0) {
        return Err(Error::Precondition(format!(
            "initial population {} on level {n} lies outside the window",
            rho.population(n)
        )));
    }
    let eq = equilibrium_value(model, a)?;
    let a_jj = a.diagonal(window.center);
    let spread = observable_spread(a, window);
    let diff = (eq.value - a_jj).abs();
    let scale = window
        .members
        .iter()
        .map(|&n| a.diagonal(n).abs())
        .fold(0.0, f64::max);
    Ok(ThermalizationReport {
        j: window.center,
        window: window.members.iter().copied().collect(),
        z: window.size(),
        a_jj,
        equilibrium: eq.value,
        diff,
        spread,
        ratio: (a_jj != 0.0).then(|| spread / a_jj.abs()),
        holds: diff <= spread + BOUND_SLACK * scale,
        partial: eq.partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::KernelAssignment;
    use crate::kernels::KernelSpec;

    fn diag_observable(values: &[f64]) -> Observable {
        Observable::new(CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            values.len(),
            values.iter().map(|&v| Complex64::new(v, 0.0)),
        )))
        .unwrap()
    }

    fn model_with(rho: ReducedInitialState) -> ReducedModel {
        let n = rho.dim();
        ReducedModel::new(
            SystemSpectrum::new((0..n).map(|i| i as f64).collect()).unwrap(),
            rho,
            KernelAssignment::uniform(KernelSpec::gaussian(1.0).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn singleton_window_is_delta() {
        let w = Window::singleton(2, 5).unwrap();
        let rho = microcanonical_state(&w, 5).unwrap();
        for n in 0..5 {
            assert_eq!(rho.population(n), if n == 2 { 1.0 } else { 0.0 });
        }
        let a = diag_observable(&[1.0, 4.0, -2.5, 3.0, 0.0]);
        let r = thermalization_check(&model_with(rho), &a, &w).unwrap();
        assert_eq!(r.diff, 0.0);
        assert_eq!(r.spread, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn four_member_window_quarter_weights() {
        let w = Window::new(1, [0, 1, 2, 3], 6).unwrap();
        let rho = microcanonical_state(&w, 6).unwrap();
        assert!((0..4).all(|n| rho.population(n) == 0.25));
        assert_eq!(rho.population(5), 0.0);
    }

    #[test]
    fn full_window_is_maximally_mixed() {
        let w = Window::new(0, 0..4, 4).unwrap();
        let rho = microcanonical_state(&w, 4).unwrap();
        assert_eq!(*rho.matrix(), CMatrix::identity(4, 4).scale(0.25));
    }

    #[test]
    fn spread_examples() {
        let a = diag_observable(&[1.0, 2.0, 5.0, 7.0]);
        assert_eq!(observable_spread(&a, &Window::new(0, [0, 1, 2], 4).unwrap()), 4.0);
        assert_eq!(observable_spread(&a, &Window::singleton(3, 4).unwrap()), 0.0);
        let flat = diag_observable(&[2.0, 2.0, 2.0, 9.0]);
        assert_eq!(observable_spread(&flat, &Window::new(1, [0, 1, 2], 4).unwrap()), 0.0);
    }

    #[test]
    fn window_validation() {
        assert!(Window::new(0, [], 3).is_err());
        assert!(Window::new(0, [1, 2], 3).is_err());
        assert!(Window::new(0, [0, 3], 3).is_err());
    }

    #[test]
    fn energy_band_membership() {
        let s = SystemSpectrum::new(vec![0.0, 0.9, 1.0, 1.05, 2.0]).unwrap();
        let w = Window::energy_band(&s, 2, 0.1).unwrap();
        assert_eq!(w.members().iter().copied().collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn weight_outside_window_is_rejected() {
        let w = Window::new(1, [1, 2], 4).unwrap();
        let rho = microcanonical_state(&Window::new(0, [0, 1], 4).unwrap(), 4).unwrap();
        let a = diag_observable(&[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            thermalization_check(&model_with(rho), &a, &w),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn extremal_two_point_state_saturates_bound() {
        // all weight on the window's maximum, centre at its minimum
        let a = diag_observable(&[1.0, 3.0, 2.0]);
        let w = Window::new(0, [0, 1, 2], 3).unwrap();
        let mut rho = CMatrix::zeros(3, 3);
        rho[(1, 1)] = Complex64::new(1.0, 0.0);
        let r = thermalization_check(&model_with(ReducedInitialState::new(rho).unwrap()), &a, &w).unwrap();
        assert_eq!(r.diff, r.spread);
        assert_eq!(r.ratio, Some(2.0));
    }

    #[test]
    fn microcanonical_equilibrium_is_window_mean() {
        let a = diag_observable(&[1.0, 3.0, 2.0, 10.0]);
        let w = Window::new(1, [0, 1, 2], 4).unwrap();
        let r = thermalization_check(&model_with(microcanonical_state(&w, 4).unwrap()), &a, &w).unwrap();
        assert!((r.equilibrium - 2.0).abs() < 1e-15);
        assert!(r.holds);
    }
}
