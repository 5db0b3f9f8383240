//! Reduced density matrices and observable trajectories.
//!
//! With populations frozen by quasi-isolation, every coherence evolves as
//!
//! ```text
//! ρ^A_mn(t) = ρ_mn(0) e^{−iω_mn t} D_mn(t)
//! ```
//!
//! so the whole trajectory is a direct O(N²) sum per time point; nothing is
//! time-stepped.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::environment::{density_from_bath, normalize_density, DiscreteBath, Normalization, UnnormalizedDensity};
use crate::fmt::float;
use crate::kernels::{kernel_eval, KernelSpec};
use crate::spectrum::{Observable, ReducedInitialState, SystemSpectrum};
use crate::{CMatrix, Complex64, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Which kernel drives each off-diagonal pair.
#[derive(Debug, Clone, Default)]
pub struct KernelAssignment {
    pub default: Option<KernelSpec>,
    pub pairs: BTreeMap<(usize, usize), KernelSpec>,
}

impl KernelAssignment {
    pub fn uniform(kernel: KernelSpec) -> Self {
        KernelAssignment {
            default: Some(kernel),
            pairs: BTreeMap::new(),
        }
    }

    /// Kernel for (m, n); the reversed pair gets the conjugate.
    pub fn with_pair(mut self, m: usize, n: usize, kernel: KernelSpec) -> Self {
        self.pairs.insert((m, n), kernel);
        self
    }
}

/// Subsystem spectrum, initial state and one kernel per unordered pair.
///
/// Only pairs m < n are stored; (n, m) evaluates to the conjugate. Pairs with
/// ρ_mn(0) = 0 are dark (`None`) and skipped everywhere.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    spectrum: SystemSpectrum,
    rho0: ReducedInitialState,
    pairs: Vec<Option<KernelSpec>>,
    warnings: Vec<String>,
}

impl ReducedModel {
    pub fn new(spectrum: SystemSpectrum, rho0: ReducedInitialState, assignment: KernelAssignment) -> Result<Self> {
        let n = spectrum.len();
        if rho0.dim() != n {
            return Err(Error::dimension("initial reduced state", n, rho0.dim()));
        }
        let mut upper: BTreeMap<(usize, usize), KernelSpec> = BTreeMap::new();
        for (&(a, b), k) in &assignment.pairs {
            if a >= n || b >= n {
                return Err(Error::IndexOutOfRange { index: a.max(b), len: n });
            }
            if a == b {
                return Err(Error::InvalidParameter(format!(
                    "kernel assigned to diagonal pair ({a}, {a}); diagonal factors are fixed to 1"
                )));
            }
            k.validate()?;
            let (key, kernel) = if a < b { ((a, b), k.clone()) } else { ((b, a), k.conjugate()) };
            if upper.insert(key, kernel).is_some() {
                return Err(Error::InvalidParameter(format!(
                    "pair ({}, {}) assigned twice",
                    key.0, key.1
                )));
            }
        }
        if let Some(d) = &assignment.default {
            d.validate()?;
        }
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for m in 0..n {
            for k in m + 1..n {
                let dark = rho0.matrix()[(m, k)] == ZERO && rho0.matrix()[(k, m)] == ZERO;
                let kernel = match upper.remove(&(m, k)).or_else(|| assignment.default.clone()) {
                    Some(kernel) => kernel,
                    None if dark => {
                        pairs.push(None);
                        continue;
                    }
                    None => {
                        return Err(Error::InvalidParameter(format!(
                            "no kernel assigned to pair ({m}, {k}) and no default given"
                        )))
                    }
                };
                pairs.push(if dark { None } else { Some(kernel) });
            }
        }
        let warnings = pairs.iter().flatten().flat_map(KernelSpec::warnings).collect();
        Ok(ReducedModel {
            spectrum,
            rho0,
            pairs,
            warnings,
        })
    }

    /// Model of a finite bath: each pair's kernel is the exact comb of
    /// bath frequency shifts weighted by ρ_mnk(0).
    pub fn from_bath(spectrum: SystemSpectrum, bath: &DiscreteBath) -> Result<Self> {
        let n = spectrum.len();
        if bath.levels() != n {
            return Err(Error::dimension("bath levels", n, bath.levels()));
        }
        let rho0 = ReducedInitialState::new(bath.reduced_state())?;
        let mut pairs = Vec::new();
        let mut warnings = Vec::new();
        for m in 0..n {
            for k in m + 1..n {
                let comb = density_from_bath(bath, m, k)?;
                let nonzero_atoms = comb.atoms.iter().any(|a| a.weight != ZERO);
                match normalize_density(UnnormalizedDensity::Comb(comb))? {
                    Normalization::Dark => {
                        if nonzero_atoms {
                            warnings.push(format!(
                                "pair ({m}, {k}) has zero total weight but nonzero bath components; \
                                 dropped as dark"
                            ));
                        }
                        pairs.push(None);
                    }
                    Normalization::Normalized(sd) => {
                        let crate::environment::Distribution::Comb(c) = sd.distribution else {
                            unreachable!("comb normalizes to comb")
                        };
                        pairs.push(Some(KernelSpec::from_comb(c)?));
                    }
                }
            }
        }
        Ok(ReducedModel {
            spectrum,
            rho0,
            pairs,
            warnings,
        })
    }

    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    pub fn spectrum(&self) -> &SystemSpectrum {
        &self.spectrum
    }

    pub fn initial_state(&self) -> &ReducedInitialState {
        &self.rho0
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn pair_index(&self, m: usize, n: usize) -> usize {
        let dim = self.dim();
        m * (2 * dim - m - 1) / 2 + (n - m - 1)
    }

    /// Kernel stored for m < n; `None` for dark pairs.
    pub fn kernel(&self, m: usize, n: usize) -> Option<&KernelSpec> {
        assert!(m < n && n < self.dim(), "pair ({m}, {n}) is not an upper-triangle pair");
        self.pairs[self.pair_index(m, n)].as_ref()
    }

    /// Active (non-dark) pairs m < n with their kernels.
    pub fn active_pairs(&self) -> impl Iterator<Item = (usize, usize, &KernelSpec)> + '_ {
        let n = self.dim();
        (0..n)
            .flat_map(move |m| (m + 1..n).map(move |k| (m, k)))
            .filter_map(move |(m, k)| self.kernel(m, k).map(|s| (m, k, s)))
    }

    /// D_mn(t) for any ordered pair; `None` if dark.
    pub fn factor(&self, m: usize, n: usize, t: f64) -> Option<Complex64> {
        match m.cmp(&n) {
            std::cmp::Ordering::Equal => Some(Complex64::new(1.0, 0.0)),
            std::cmp::Ordering::Less => self.kernel(m, n).map(|k| kernel_eval(k, t)),
            std::cmp::Ordering::Greater => self.kernel(n, m).map(|k| kernel_eval(k, t).conj()),
        }
    }

    pub fn all_decaying(&self) -> bool {
        self.active_pairs().all(|(_, _, k)| k.is_decaying())
    }
}

/// Phase-rotated, decohered coherence for m < n, returned for both orders.
fn coherence_pair(model: &ReducedModel, m: usize, n: usize, kernel: &KernelSpec, t: f64) -> (Complex64, Complex64) {
    let rho = model.rho0.matrix();
    let phase = Complex64::cis(-model.spectrum.transition_frequency(m, n) * t);
    let rotated = phase * kernel_eval(kernel, t);
    (rho[(m, n)] * rotated, rho[(n, m)] * rotated.conj())
}

/// ρ^A(t): populations copied from ρ(0), coherences ρ_mn(0) e^{−iω_mn t} D_mn(t).
pub fn reduced_density_at(model: &ReducedModel, t: f64) -> CMatrix {
    let n = model.dim();
    let rho = model.rho0.matrix();
    let mut out = CMatrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = rho[(i, i)];
    }
    for (m, k, kernel) in model.active_pairs() {
        let (upper, lower) = coherence_pair(model, m, k, kernel, t);
        out[(m, k)] = upper;
        out[(k, m)] = lower;
    }
    out
}

/// ⟨A(t)⟩ = Σ_n ρ_nn(0) A_nn + Σ_{m≠n} ρ_mn(0) e^{−iω_mn t} A_nm D_mn(t).
pub fn observable_average(model: &ReducedModel, a: &Observable, t: f64) -> Result<Complex64> {
    a.check_dim(model.dim())?;
    Ok(average_unchecked(model, a, t))
}

fn average_unchecked(model: &ReducedModel, a: &Observable, t: f64) -> Complex64 {
    let am = a.matrix();
    let rho = model.rho0.matrix();
    let mut acc: Complex64 = (0..model.dim()).map(|n| rho[(n, n)] * am[(n, n)]).sum();
    for (m, k, kernel) in model.active_pairs() {
        let (upper, lower) = coherence_pair(model, m, k, kernel, t);
        acc += upper * am[(k, m)] + lower * am[(m, k)];
    }
    acc
}

/// Long-time value Σ_n ρ_nn(0) A_nn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub value: f64,
    /// Some active pair has a non-decaying kernel, so the limit is only
    /// reached on average.
    pub partial: bool,
}

pub fn equilibrium_value(model: &ReducedModel, a: &Observable) -> Result<Equilibrium> {
    a.check_dim(model.dim())?;
    let value = (0..model.dim())
        .map(|n| model.rho0.population(n) * a.diagonal(n))
        .sum();
    Ok(Equilibrium {
        value,
        partial: !model.all_decaying(),
    })
}

/// Late-time form with only the non-decaying kernel parts kept.
pub fn fluctuation_asymptote(model: &ReducedModel, a: &Observable, t: f64) -> Result<Complex64> {
    a.check_dim(model.dim())?;
    let am = a.matrix();
    let rho = model.rho0.matrix();
    let mut acc: Complex64 = (0..model.dim()).map(|n| rho[(n, n)] * am[(n, n)]).sum();
    for (m, k, kernel) in model.active_pairs() {
        let atoms = kernel.fluctuating_part()?;
        if atoms.is_empty() {
            continue;
        }
        let df: f64 = atoms.iter().map(|x| x.coefficient * (x.frequency * t).cos()).sum();
        let phase = Complex64::cis(-model.spectrum.transition_frequency(m, k) * t);
        let upper = rho[(m, k)] * phase * df;
        let lower = rho[(k, m)] * phase.conj() * df;
        acc += upper * am[(k, m)] + lower * am[(m, k)];
    }
    Ok(acc)
}

/// Σ_{m≠n} |ρ_mn(0) A_nm| |D_mn(t)|: bounds |⟨A(t)⟩ − equilibrium|.
pub fn coherence_envelope(model: &ReducedModel, a: &Observable, t: f64) -> Result<f64> {
    a.check_dim(model.dim())?;
    let am = a.matrix();
    let rho = model.rho0.matrix();
    Ok(model
        .active_pairs()
        .map(|(m, k, kernel)| {
            let d = kernel_eval(kernel, t).norm();
            ((rho[(m, k)] * am[(k, m)]).norm() + (rho[(k, m)] * am[(m, k)]).norm()) * d
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairMagnitudes {
    pub m: usize,
    pub n: usize,
    pub abs_d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Imaginary parts are kept as a diagnostic of broken Hermitian pairing.
    pub averages: Vec<Complex64>,
    pub deviations: Vec<f64>,
    pub equilibrium: Equilibrium,
    pub pair_magnitudes: Vec<PairMagnitudes>,
    pub reduced_matrices: Option<Vec<CMatrix>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TrajectoryOptions {
    pub pair_columns: bool,
    pub keep_matrices: bool,
}

pub(crate) fn check_increasing(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::Precondition("time grid is empty".into()));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("time grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// Samples ⟨A(t)⟩ on a grid; time points are evaluated independently.
pub fn trajectory(model: &ReducedModel, a: &Observable, times: &[f64], opts: TrajectoryOptions) -> Result<Trajectory> {
    a.check_dim(model.dim())?;
    check_increasing(times)?;
    let equilibrium = equilibrium_value(model, a)?;
    let averages: Vec<Complex64> = times.par_iter().map(|&t| average_unchecked(model, a, t)).collect();
    let deviations = averages.iter().map(|z| (z.re - equilibrium.value).abs()).collect();
    let pair_magnitudes = if opts.pair_columns {
        model
            .active_pairs()
            .map(|(m, n, k)| PairMagnitudes {
                m,
                n,
                abs_d: times.iter().map(|&t| kernel_eval(k, t).norm()).collect(),
            })
            .collect()
    } else {
        Vec::new()
    };
    let reduced_matrices = opts
        .keep_matrices
        .then(|| times.par_iter().map(|&t| reduced_density_at(model, t)).collect());
    Ok(Trajectory {
        times: times.to_vec(),
        averages,
        deviations,
        equilibrium,
        pair_magnitudes,
        reduced_matrices,
        warnings: model.warnings().to_vec(),
    })
}

impl Trajectory {
    pub fn max_imaginary(&self) -> f64 {
        self.averages.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    /// Columns t, avg_re, avg_im, deviation_from_equilibrium, then one
    /// abs_D_m_n column per active pair when requested.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,avg_re,avg_im,deviation_from_equilibrium");
        for p in &self.pair_magnitudes {
            let _ = write!(out, ",abs_D_{}_{}", p.m, p.n);
        }
        out.push('\n');
        for (i, &t) in self.times.iter().enumerate() {
            let z = self.averages[i];
            let _ = write!(out, "{},{},{},{}", float(t), float(z.re), float(z.im), float(self.deviations[i]));
            for p in &self.pair_magnitudes {
                let _ = write!(out, ",{}", float(p.abs_d[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Uniform grid 0, h, …, horizon with `steps` intervals.
pub fn time_grid(horizon: f64, steps: usize) -> Result<Vec<f64>> {
    if !(horizon > 0.0 && horizon.is_finite()) || steps == 0 {
        return Err(Error::InvalidParameter(format!(
            "time grid needs a positive horizon and steps >= 1 (got {horizon}, {steps})"
        )));
    }
    Ok((0..=steps)
        .map(|i| horizon * i as f64 / steps as f64)
        .collect())
}

pub const DEFAULT_SCAN_STEPS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EquilibrationTime {
    Reached { t_star: f64 },
    NotReached { final_deviation: f64 },
}

/// Earliest grid time after which |⟨A(t)⟩ − equilibrium| stays within
/// `tolerance` up to `horizon`.
pub fn equilibration_time(
    model: &ReducedModel,
    a: &Observable,
    tolerance: f64,
    horizon: f64,
    steps: usize,
) -> Result<EquilibrationTime> {
    if !(tolerance > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be positive, got {tolerance}")));
    }
    if !model.all_decaying() {
        return Err(Error::Precondition(
            "equilibration time needs decaying kernels on every active pair".into(),
        ));
    }
    let grid = time_grid(horizon, steps)?;
    let eq = equilibrium_value(model, a)?.value;
    let devs: Vec<f64> = grid
        .par_iter()
        .map(|&t| (average_unchecked(model, a, t).re - eq).abs())
        .collect();
    match devs.iter().rposition(|&d| d > tolerance) {
        None => Ok(EquilibrationTime::Reached { t_star: 0.0 }),
        Some(i) if i + 1 == grid.len() => Ok(EquilibrationTime::NotReached {
            final_deviation: devs[i],
        }),
        Some(i) => Ok(EquilibrationTime::Reached { t_star: grid[i + 1] }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecurrenceHit {
    /// First and last grid times of a contiguous run within `delta`.
    pub start: f64,
    pub end: f64,
    /// Grid time of the closest approach inside the run.
    pub time: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceScan {
    pub hits: Vec<RecurrenceHit>,
    /// The signal never leaves the `delta` band (e.g. no coherences).
    pub always_recurrent: bool,
}

impl RecurrenceScan {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("start,end,time,deviation\n");
        for h in &self.hits {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                float(h.start),
                float(h.end),
                float(h.time),
                float(h.deviation)
            );
        }
        out
    }
}

/// Times t > 0 where |⟨A(t)⟩ − ⟨A(0)⟩| ≤ delta, with contiguous grid hits
/// merged. The run that starts at t = 0 is the initial state itself and is
/// not reported, unless it covers the whole horizon.
pub fn recurrence_scan(
    model: &ReducedModel,
    a: &Observable,
    horizon: f64,
    delta: f64,
    steps: usize,
) -> Result<RecurrenceScan> {
    a.check_dim(model.dim())?;
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    if let Some((m, n, k)) = model.active_pairs().find(|(_, _, k)| !k.is_quasi_periodic()) {
        return Err(Error::Unsupported(format!(
            "recurrence scan needs delta-comb or fluctuating kernels; pair ({m}, {n}) has {}",
            k.describe()
        )));
    }
    let grid = time_grid(horizon, steps)?;
    let initial = average_unchecked(model, a, 0.0);
    let devs: Vec<f64> = grid
        .par_iter()
        .map(|&t| (average_unchecked(model, a, t) - initial).norm())
        .collect();

    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < grid.len() {
        if devs[i] <= delta {
            let start = i;
            while i + 1 < grid.len() && devs[i + 1] <= delta {
                i += 1;
            }
            runs.push((start, i));
        }
        i += 1;
    }
    let always_recurrent = runs.len() == 1 && runs[0] == (0, grid.len() - 1);
    let hits = runs
        .into_iter()
        .filter_map(|(s, e)| {
            let s = if s == 0 {
                if !always_recurrent {
                    return None;
                }
                1.min(e)
            } else {
                s
            };
            let best = (s..=e)
                .min_by(|&x, &y| devs[x].total_cmp(&devs[y]))
                .expect("run is non-empty");
            Some(RecurrenceHit {
                start: grid[s],
                end: grid[e],
                time: grid[best],
                deviation: devs[best],
            })
        })
        .collect();
    Ok(RecurrenceScan {
        hits,
        always_recurrent,
    })
}

/// Decay and revival of the normalized coherence envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasiEquilibrium {
    /// First grid time the envelope drops below the threshold fraction.
    pub decay_time: Option<f64>,
    /// First grid time after that when it climbs back to the threshold.
    pub revival_time: Option<f64>,
}

/// Lifetime of the quasi-equilibrium of a finite surrounding, measured on
/// the envelope of [`coherence_envelope`] relative to its t = 0 value.
pub fn quasi_equilibrium_lifetime(
    model: &ReducedModel,
    a: &Observable,
    fraction: f64,
    horizon: f64,
    steps: usize,
) -> Result<QuasiEquilibrium> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!("fraction must lie in (0, 1), got {fraction}")));
    }
    let e0 = coherence_envelope(model, a, 0.0)?;
    if e0 == 0.0 {
        return Err(Error::Precondition("observable sees no coherences; envelope is zero".into()));
    }
    let grid = time_grid(horizon, steps)?;
    let ratio: Vec<f64> = grid
        .par_iter()
        .map(|&t| coherence_envelope(model, a, t).map(|e| e / e0))
        .collect::<Result<_>>()?;
    let decay = ratio.iter().position(|&r| r < fraction);
    let revival = decay.and_then(|d| ratio[d..].iter().position(|&r| r >= fraction).map(|j| d + j));
    Ok(QuasiEquilibrium {
        decay_time: decay.map(|i| grid[i]),
        revival_time: revival.map(|i| grid[i]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{FluctuatingAtom, MixturePart};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn plus_state_model(kernel: KernelSpec, energies: [f64; 2]) -> ReducedModel {
        let rho = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.), c(0.5, 0.), c(0.5, 0.), c(0.5, 0.)]);
        ReducedModel::new(
            SystemSpectrum::new(energies.to_vec()).unwrap(),
            ReducedInitialState::new(rho).unwrap(),
            KernelAssignment::uniform(kernel),
        )
        .unwrap()
    }

    fn sigma_x() -> Observable {
        Observable::new(CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])).unwrap()
    }

    #[test]
    fn initial_time_is_exact() {
        let model = plus_state_model(KernelSpec::gaussian(1.0).unwrap(), [0.0, 1.0]);
        assert_eq!(reduced_density_at(&model, 0.0), *model.initial_state().matrix());
    }

    #[test]
    fn two_level_gaussian_coherence() {
        let model = plus_state_model(KernelSpec::gaussian(1.0).unwrap(), [0.0, 1.0]);
        let r = reduced_density_at(&model, 1.0);
        let expected = 0.5 * (-0.5f64).exp();
        assert!((r[(1, 0)].norm() - expected).abs() < 1e-15);
        assert!((expected - 0.3033).abs() < 1e-4);
        let avg = observable_average(&model, &sigma_x(), 1.0).unwrap();
        // 2 Re(0.5 e^{-i} e^{-1/2})
        let oracle = 2.0 * 0.5 * (1.0f64).cos() * (-0.5f64).exp();
        assert!((avg.re - oracle).abs() < 1e-15);
        assert!((oracle - 0.3278).abs() < 1e-4);
        assert!(avg.im.abs() < 1e-15);
    }

    #[test]
    fn isolated_system_only_rotates() {
        let model = plus_state_model(KernelSpec::coherent(), [0.0, 1.3]);
        let eig0 = crate::linalg::HermitianEigen::new(&reduced_density_at(&model, 0.0)).eigenvalues;
        for t in [0.5, 3.0, 40.0] {
            let eig = crate::linalg::HermitianEigen::new(&reduced_density_at(&model, t)).eigenvalues;
            for (a, b) in eig.iter().zip(&eig0) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn identity_average_is_one() {
        let model = plus_state_model(KernelSpec::lorentz(0.3).unwrap(), [0.0, 1.0]);
        for t in [0.0, 0.7, 12.0] {
            let z = observable_average(&model, &Observable::identity(2), t).unwrap();
            assert!((z - c(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn diagonal_state_is_constant() {
        let rho = CMatrix::from_row_slice(2, 2, &[c(0.3, 0.), c(0., 0.), c(0., 0.), c(0.7, 0.)]);
        let a = Observable::new(CMatrix::from_row_slice(2, 2, &[c(2., 0.), c(1., 1.), c(1., -1.), c(-1., 0.)]))
            .unwrap();
        let model = ReducedModel::new(
            SystemSpectrum::new(vec![0.0, 1.0]).unwrap(),
            ReducedInitialState::new(rho).unwrap(),
            KernelAssignment::uniform(KernelSpec::gaussian(1.0).unwrap()),
        )
        .unwrap();
        for t in [0.0, 1.0, 5.0] {
            assert_eq!(observable_average(&model, &a, t).unwrap().re, 0.3 * 2.0 - 0.7);
        }
        assert_eq!(
            equilibration_time(&model, &a, 1e-9, 10.0, 100).unwrap(),
            EquilibrationTime::Reached { t_star: 0.0 }
        );
    }

    #[test]
    fn equilibrium_examples() {
        let a = Observable::new(CMatrix::from_row_slice(2, 2, &[c(2., 0.), c(1., 0.), c(1., 0.), c(5., 0.)])).unwrap();
        let model = plus_state_model(KernelSpec::gaussian(1.0).unwrap(), [0.0, 1.0]);
        let eq = equilibrium_value(&model, &a).unwrap();
        assert_eq!(eq, Equilibrium { value: 3.5, partial: false });
        assert_eq!(equilibrium_value(&model, &Observable::identity(2)).unwrap().value, 1.0);

        let excited = CMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., 0.), c(0., 0.), c(1., 0.)]);
        let model = ReducedModel::new(
            SystemSpectrum::new(vec![0.0, 1.0]).unwrap(),
            ReducedInitialState::new(excited).unwrap(),
            KernelAssignment::default(),
        )
        .unwrap();
        assert_eq!(equilibrium_value(&model, &a).unwrap().value, 5.0);
    }

    #[test]
    fn partial_tag_for_fluctuating_pairs() {
        let model = plus_state_model(
            KernelSpec::fluctuating(vec![FluctuatingAtom { coefficient: 1.0, frequency: 0.4 }]).unwrap(),
            [0.0, 1.0],
        );
        assert!(equilibrium_value(&model, &sigma_x()).unwrap().partial);
        assert!(matches!(
            equilibration_time(&model, &sigma_x(), 1e-3, 10.0, 100),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn asymptote_without_fluctuations_is_equilibrium() {
        let model = plus_state_model(KernelSpec::poisson(1.0).unwrap(), [0.0, 1.0]);
        let eq = equilibrium_value(&model, &sigma_x()).unwrap().value;
        for t in [0.0, 2.0, 30.0] {
            assert_eq!(fluctuation_asymptote(&model, &sigma_x(), t).unwrap().re, eq);
        }
    }

    #[test]
    fn asymptote_rejects_combs() {
        let comb = KernelSpec::from_comb(crate::environment::DeltaComb::from_real(&[(0.5, 1.0)])).unwrap();
        let model = plus_state_model(comb, [0.0, 1.0]);
        assert!(matches!(
            fluctuation_asymptote(&model, &sigma_x(), 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn asymptote_time_average_vanishes() {
        let fl = KernelSpec::fluctuating(vec![FluctuatingAtom { coefficient: 1.0, frequency: 0.5 }]).unwrap();
        let mix = KernelSpec::mixture(vec![
            MixturePart { weight: 0.6, kernel: KernelSpec::gaussian(2.0).unwrap() },
            MixturePart { weight: 0.4, kernel: fl },
        ])
        .unwrap();
        let model = plus_state_model(mix, [0.0, 1.0]);
        let eq = equilibrium_value(&model, &sigma_x()).unwrap().value;
        let mut previous = f64::INFINITY;
        for window in [100.0, 400.0, 1600.0] {
            let steps = (window * 20.0) as usize;
            let h = window / steps as f64;
            // trapezoid average over [0, T]
            let mut sum = 0.0;
            for i in 0..=steps {
                let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
                sum += w * (fluctuation_asymptote(&model, &sigma_x(), i as f64 * h).unwrap().re - eq);
            }
            let avg = (sum * h / window).abs();
            // amplitude 0.4, slowest frequency 0.5: |avg| <= 2 * 0.4 / (0.5 T)
            assert!(avg <= 1.6 / window, "T = {window}: {avg}");
            assert!(avg <= previous + 1e-12);
            previous = avg;
        }
    }

    #[test]
    fn gaussian_equilibration_time_inverts_envelope() {
        // degenerate levels: deviation equals the envelope 2c e^{-(σt)²/2}
        let sigma = 0.8;
        let model = plus_state_model(KernelSpec::gaussian(sigma).unwrap(), [1.0, 1.0]);
        let tol = 1e-4;
        let cpl = 0.5;
        let horizon = 10.0;
        let steps = 4096;
        let EquilibrationTime::Reached { t_star } =
            equilibration_time(&model, &sigma_x(), tol, horizon, steps).unwrap()
        else {
            panic!("not reached")
        };
        let analytic = (2.0 * (2.0 * cpl / tol).ln()).sqrt() / sigma;
        assert!((t_star - analytic).abs() <= horizon / steps as f64 + 1e-12, "{t_star} vs {analytic}");
    }

    #[test]
    fn lorentz_equilibration_time_inverts_envelope() {
        let gamma = 0.5;
        let model = plus_state_model(KernelSpec::lorentz(gamma).unwrap(), [2.0, 2.0]);
        let tol = 1e-3;
        let horizon = 30.0;
        let steps = 4096;
        let EquilibrationTime::Reached { t_star } =
            equilibration_time(&model, &sigma_x(), tol, horizon, steps).unwrap()
        else {
            panic!("not reached")
        };
        let analytic = (2.0 * 0.5 / tol).ln() / gamma;
        assert!((t_star - analytic).abs() <= horizon / steps as f64 + 1e-12);
    }

    #[test]
    fn equilibration_not_reached_reports_deviation() {
        let model = plus_state_model(KernelSpec::lorentz(0.01).unwrap(), [1.0, 1.0]);
        match equilibration_time(&model, &sigma_x(), 1e-6, 1.0, 64).unwrap() {
            EquilibrationTime::NotReached { final_deviation } => {
                assert!((final_deviation - (-0.01f64).exp()).abs() < 1e-14)
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn commensurate_recurrence_at_two_pi() {
        let fl = KernelSpec::fluctuating(vec![
            FluctuatingAtom { coefficient: 0.5, frequency: 1.0 },
            FluctuatingAtom { coefficient: 0.5, frequency: 3.0 },
        ])
        .unwrap();
        let model = plus_state_model(fl, [0.0, 2.0]);
        let scan = recurrence_scan(&model, &sigma_x(), 4.0 * std::f64::consts::PI, 1e-9, 4000).unwrap();
        assert!(!scan.always_recurrent);
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!(scan.hits.iter().any(|h| (h.time - two_pi).abs() < 1e-12));
    }

    #[test]
    fn diagonal_state_always_recurs() {
        let rho = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.), c(0., 0.), c(0., 0.), c(0.5, 0.)]);
        let model = ReducedModel::new(
            SystemSpectrum::new(vec![0.0, 1.0]).unwrap(),
            ReducedInitialState::new(rho).unwrap(),
            KernelAssignment::default(),
        )
        .unwrap();
        let scan = recurrence_scan(&model, &sigma_x(), 10.0, 1e-12, 100).unwrap();
        assert!(scan.always_recurrent);
        assert_eq!(scan.hits.len(), 1);
        assert_eq!(scan.hits[0].end, 10.0);
    }

    #[test]
    fn recurrence_rejects_decaying_kernels() {
        let model = plus_state_model(KernelSpec::gaussian(1.0).unwrap(), [0.0, 1.0]);
        assert!(matches!(
            recurrence_scan(&model, &sigma_x(), 10.0, 1e-3, 100),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn diagonal_kernel_assignment_rejected() {
        let rho = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.), c(0.5, 0.), c(0.5, 0.), c(0.5, 0.)]);
        let err = ReducedModel::new(
            SystemSpectrum::new(vec![0.0, 1.0]).unwrap(),
            ReducedInitialState::new(rho).unwrap(),
            KernelAssignment::default().with_pair(1, 1, KernelSpec::gaussian(1.0).unwrap()),
        )
        .unwrap_err();
        assert!(err.to_string().contains("diagonal"));
    }

    #[test]
    fn missing_kernel_rejected() {
        let rho = CMatrix::from_row_slice(2, 2, &[c(0.5, 0.), c(0.5, 0.), c(0.5, 0.), c(0.5, 0.)]);
        assert!(ReducedModel::new(
            SystemSpectrum::new(vec![0.0, 1.0]).unwrap(),
            ReducedInitialState::new(rho).unwrap(),
            KernelAssignment::default(),
        )
        .is_err());
    }

    #[test]
    fn trajectory_csv_columns() {
        let model = plus_state_model(KernelSpec::gaussian(1.0).unwrap(), [0.0, 1.0]);
        let traj = trajectory(
            &model,
            &sigma_x(),
            &[0.0, 0.5, 1.0],
            TrajectoryOptions { pair_columns: true, keep_matrices: true },
        )
        .unwrap();
        let csv = traj.to_csv();
        assert_eq!(csv.lines().next(), Some("t,avg_re,avg_im,deviation_from_equilibrium,abs_D_0_1"));
        assert_eq!(traj.reduced_matrices.as_ref().unwrap().len(), 3);
        assert!(trajectory(&model, &sigma_x(), &[0.0, 0.0], TrajectoryOptions::default()).is_err());
    }
}
