//! Spectral data of the surrounding.
//!
//! A finite bath is described by the eigenvalues ε_nk of the environment
//! part of the Hamiltonian in each subsystem sector n, together with the
//! bath-diagonal blocks ρ_mnk(0) of the joint initial state. Each pair of
//! subsystem levels (m, n) then sees a spectral density
//!
//! ```text
//! g_mn(ε) = Σ_k ρ_mnk(0) δ(ε − ε_mk + ε_nk) = ρ_mn(0) p_mn(ε)
//! ```
//!
//! whose normalized part p_mn drives the decoherence factor of that pair.
//! Continuous surroundings are represented either by an analytic family, a
//! tabulated density, or a radial dispersion relation reduced to a density
//! of states by [`dos_from_dispersion`].

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::fmt::float;
use crate::linalg::hermiticity_violation;
use crate::spectrum::VALIDATION_TOL;
use crate::{CMatrix, Complex64, Error, RMatrix, Result};

/// Tolerance on the integral of a tabulated density.
pub const TABULATED_NORM_TOL: f64 = 1e-9;

/// |ε′| below this at a root is treated as a non-simple zero.
pub const SINGULAR_DERIVATIVE: f64 = 1e-10;

/// Finite bath table {ε_nk, ρ_mnk(0)}.
#[derive(Debug, Clone)]
pub struct DiscreteBath {
    eigenvalues: RMatrix,
    joint_weights: Vec<CMatrix>,
}

impl DiscreteBath {
    /// `eigenvalues` is N×K; `joint_weights[k]` is the N×N slice ρ_··k(0).
    pub fn new(eigenvalues: RMatrix, joint_weights: Vec<CMatrix>) -> Result<Self> {
        let (n, k) = eigenvalues.shape();
        if n == 0 || k == 0 {
            return Err(Error::InvalidParameter("bath needs N >= 1 and K >= 1".into()));
        }
        if joint_weights.len() != k {
            return Err(Error::dimension("bath joint weights (slices)", k, joint_weights.len()));
        }
        if eigenvalues.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidParameter("bath eigenvalues must be finite".into()));
        }
        for (idx, slice) in joint_weights.iter().enumerate() {
            if slice.shape() != (n, n) {
                return Err(Error::dimension(
                    format!("bath slice k = {idx}"),
                    format!("{n}x{n}"),
                    format!("{}x{}", slice.nrows(), slice.ncols()),
                ));
            }
            let violation = hermiticity_violation(slice);
            if violation > VALIDATION_TOL {
                return Err(Error::NotHermitian {
                    what: format!("bath slice k = {idx}"),
                    violation,
                });
            }
        }
        let bath = DiscreteBath {
            eigenvalues,
            joint_weights,
        };
        let mut total = 0.0;
        for level in 0..n {
            let pop = bath.reduced_element(level, level).re;
            if pop < -VALIDATION_TOL {
                return Err(Error::NotPositive {
                    what: format!("bath population of level {level}"),
                    min_eigenvalue: pop,
                });
            }
            total += pop;
        }
        if (total - 1.0).abs() > VALIDATION_TOL {
            return Err(Error::Trace {
                what: "bath joint weights".into(),
                value: total,
            });
        }
        Ok(bath)
    }

    pub fn levels(&self) -> usize {
        self.eigenvalues.nrows()
    }

    pub fn bath_size(&self) -> usize {
        self.eigenvalues.ncols()
    }

    pub fn eigenvalues(&self) -> &RMatrix {
        &self.eigenvalues
    }

    pub fn joint_weight(&self, m: usize, n: usize, k: usize) -> Complex64 {
        self.joint_weights[k][(m, n)]
    }

    /// ρ_mn(0) = Σ_k ρ_mnk(0), summed in ascending k.
    pub fn reduced_element(&self, m: usize, n: usize) -> Complex64 {
        self.joint_weights.iter().map(|s| s[(m, n)]).sum()
    }

    pub fn reduced_state(&self) -> CMatrix {
        let n = self.levels();
        CMatrix::from_fn(n, n, |i, j| self.reduced_element(i, j))
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.levels() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.levels(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub epsilon: f64,
    pub weight: Complex64,
}

/// Weighted sum of delta functions Σ_k w_k δ(ε − ε_k).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeltaComb {
    pub atoms: Vec<Atom>,
}

impl DeltaComb {
    pub fn new(atoms: Vec<Atom>) -> Self {
        DeltaComb { atoms }
    }

    pub fn from_real(pairs: &[(f64, f64)]) -> Self {
        DeltaComb {
            atoms: pairs
                .iter()
                .map(|&(epsilon, w)| Atom {
                    epsilon,
                    weight: Complex64::new(w, 0.0),
                })
                .collect(),
        }
    }

    pub fn total_weight(&self) -> Complex64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,weight_re,weight_im\n");
        for a in &self.atoms {
            let _ = writeln!(
                out,
                "{},{},{}",
                float(a.epsilon),
                float(a.weight.re),
                float(a.weight.im)
            );
        }
        out
    }
}

/// Named analytic distributions p(ε), all centred at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticFamily {
    Gaussian { sigma: f64 },
    Lorentz { gamma: f64 },
    /// Two-sided exponential exp(−|ε|/γ)/(2γ).
    Poisson { gamma: f64 },
    /// Flat on [−Δ, Δ].
    Uniform { delta: f64 },
}

impl AnalyticFamily {
    pub fn validate(&self) -> Result<()> {
        let (name, value) = match *self {
            AnalyticFamily::Gaussian { sigma } => ("sigma", sigma),
            AnalyticFamily::Lorentz { gamma } | AnalyticFamily::Poisson { gamma } => ("gamma", gamma),
            AnalyticFamily::Uniform { delta } => ("delta", delta),
        };
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "{} width {name} must be positive and finite, got {value}",
                self.name()
            )));
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticFamily::Gaussian { .. } => "gaussian",
            AnalyticFamily::Lorentz { .. } => "lorentz",
            AnalyticFamily::Poisson { .. } => "poisson",
            AnalyticFamily::Uniform { .. } => "uniform",
        }
    }

    /// Density value. The uniform law takes the midpoint value 1/(4Δ) at
    /// its two jumps.
    pub fn pdf(&self, eps: f64) -> f64 {
        match *self {
            AnalyticFamily::Gaussian { sigma } => {
                (-0.5 * (eps / sigma).powi(2)).exp() / ((2.0 * PI).sqrt() * sigma)
            }
            AnalyticFamily::Lorentz { gamma } => gamma / (PI * (eps * eps + gamma * gamma)),
            AnalyticFamily::Poisson { gamma } => (-eps.abs() / gamma).exp() / (2.0 * gamma),
            AnalyticFamily::Uniform { delta } => {
                let a = eps.abs();
                if a < delta {
                    0.5 / delta
                } else if a == delta {
                    0.25 / delta
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, eps: f64) -> f64 {
        match *self {
            AnalyticFamily::Gaussian { sigma } => standard_normal().cdf(eps / sigma),
            AnalyticFamily::Lorentz { gamma } => 0.5 + (eps / gamma).atan() / PI,
            AnalyticFamily::Poisson { gamma } => {
                if eps < 0.0 {
                    0.5 * (eps / gamma).exp()
                } else {
                    1.0 - 0.5 * (-eps / gamma).exp()
                }
            }
            AnalyticFamily::Uniform { delta } => ((eps + delta) / (2.0 * delta)).clamp(0.0, 1.0),
        }
    }

    /// Inverse CDF for q in (0, 1).
    pub fn quantile(&self, q: f64) -> f64 {
        match *self {
            AnalyticFamily::Gaussian { sigma } => {
                let n = standard_normal();
                let mut x = n.inverse_cdf(q);
                for _ in 0..2 {
                    let p = n.pdf(x);
                    if p > 0.0 {
                        x -= (n.cdf(x) - q) / p;
                    }
                }
                sigma * x
            }
            AnalyticFamily::Lorentz { gamma } => {
                if q == 0.5 {
                    0.0
                } else {
                    gamma * (PI * (q - 0.5)).tan()
                }
            }
            AnalyticFamily::Poisson { gamma } => {
                if q < 0.5 {
                    gamma * (2.0 * q).ln()
                } else {
                    -gamma * (2.0 * (1.0 - q)).ln()
                }
            }
            AnalyticFamily::Uniform { delta } => delta * (2.0 * q - 1.0),
        }
    }

    /// Mass of the density inside [a, b].
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        (self.cdf(b) - self.cdf(a)).max(0.0)
    }
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal parameters are valid")
}

/// Nonnegative density tabulated on a strictly increasing grid, linearly
/// interpolated in between and zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    epsilon: Vec<f64>,
    values: Vec<f64>,
}

impl TabulatedDensity {
    /// Builds a density that must integrate to one within 1e-9.
    pub fn new(epsilon: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let t = Self::unchecked(epsilon, values)?;
        let mass = t.integral();
        if (mass - 1.0).abs() > TABULATED_NORM_TOL {
            return Err(Error::InvalidParameter(format!(
                "tabulated density integrates to {mass}, expected 1 within {TABULATED_NORM_TOL:e}"
            )));
        }
        Ok(t)
    }

    /// Shape checks only; used for unnormalized tables.
    fn unchecked(epsilon: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if epsilon.len() < 2 || epsilon.len() != values.len() {
            return Err(Error::dimension(
                "tabulated density",
                format!("two equal-length columns with >= 2 rows (epsilon has {})", epsilon.len()),
                values.len(),
            ));
        }
        if epsilon.windows(2).any(|w| !(w[1] > w[0])) || epsilon.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidParameter(
                "tabulated epsilon grid must be finite and strictly increasing".into(),
            ));
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "tabulated density value {} at epsilon = {} is negative or not finite",
                values[i], epsilon[i]
            )));
        }
        Ok(TabulatedDensity { epsilon, values })
    }

    /// Samples an analytic family on a uniform grid of `points` nodes and
    /// rescales the table to unit integral on that grid.
    pub fn from_family(family: AnalyticFamily, eps_min: f64, eps_max: f64, points: usize) -> Result<Self> {
        family.validate()?;
        let grid = uniform_grid(eps_min, eps_max, points)?;
        let raw = Self::unchecked(grid.clone(), grid.iter().map(|&e| family.pdf(e)).collect())?;
        let total = raw.integral();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{} density has no mass on [{eps_min}, {eps_max}]",
                family.name()
            )));
        }
        Self::new(grid, raw.values.iter().map(|v| v / total).collect())
    }

    pub fn epsilon(&self) -> &[f64] {
        &self.epsilon
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at(&self, eps: f64) -> f64 {
        let xs = &self.epsilon;
        if eps < xs[0] || eps > xs[xs.len() - 1] {
            return 0.0;
        }
        let i = xs.partition_point(|&x| x <= eps);
        if i == 0 {
            return self.values[0];
        }
        if i == xs.len() {
            return self.values[xs.len() - 1];
        }
        let (x0, x1) = (xs[i - 1], xs[i]);
        let (y0, y1) = (self.values[i - 1], self.values[i]);
        y0 + (y1 - y0) * (eps - x0) / (x1 - x0)
    }

    /// Exact integral of the interpolant.
    pub fn integral(&self) -> f64 {
        self.epsilon
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1]))
            .sum()
    }

    /// Exact integral of the interpolant over [a, b].
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for (x, _) in self.epsilon.windows(2).zip(self.values.windows(2)) {
            let lo = x[0].max(a);
            let hi = x[1].min(b);
            if hi > lo {
                total += 0.5 * (hi - lo) * (self.value_at(lo) + self.value_at(hi));
            }
        }
        total
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,density\n");
        for (e, v) in self.epsilon.iter().zip(&self.values) {
            let _ = writeln!(out, "{},{}", float(*e), float(*v));
        }
        out
    }

    /// Parses the two-column `epsilon,density` format written by [`to_csv`](Self::to_csv).
    pub fn from_csv(text: &str) -> Result<Self> {
        let (eps, vals) = parse_two_columns(text)?;
        Self::new(eps, vals)
    }
}

fn parse_two_columns(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut eps = Vec::new();
    let mut vals = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 2 {
            return Err(Error::InvalidParameter(format!(
                "line {}: expected 2 columns, found {}",
                lineno + 1,
                cols.len()
            )));
        }
        match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
            (Ok(e), Ok(v)) => {
                eps.push(e);
                vals.push(v);
            }
            // header row
            _ if lineno == 0 => continue,
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "line {}: cannot parse `{line}` as numbers",
                    lineno + 1
                )))
            }
        }
    }
    Ok((eps, vals))
}

pub(crate) fn uniform_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if points < 2 || !(hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "grid needs lo < hi and >= 2 points (got [{lo}, {hi}], {points})"
        )));
    }
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| if i == points - 1 { hi } else { lo + step * i as f64 })
        .collect())
}

/// Shape of a normalized distribution p_mn(ε).
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Family(AnalyticFamily),
    /// Atoms with weights summing to one. Weights may be complex when the
    /// comb comes from an off-diagonal bath pair.
    Comb(DeltaComb),
    Tabulated(TabulatedDensity),
}

/// g_mn(ε) = ρ_mn(0) p_mn(ε).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensity {
    pub weight: Complex64,
    pub distribution: Distribution,
}

/// A density before splitting off its total mass.
#[derive(Debug, Clone, PartialEq)]
pub enum UnnormalizedDensity {
    Comb(DeltaComb),
    Tabulated { epsilon: Vec<f64>, values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Normalization {
    Normalized(SpectralDensity),
    /// Zero total weight: the pair drops out of every sum.
    Dark,
}

impl Normalization {
    pub fn is_dark(&self) -> bool {
        matches!(self, Normalization::Dark)
    }
}

/// Spectral density of the pair (m, n) for a finite bath: atoms at
/// ε_mk − ε_nk carrying ρ_mnk(0), in ascending k.
pub fn density_from_bath(bath: &DiscreteBath, m: usize, n: usize) -> Result<DeltaComb> {
    bath.check_index(m)?;
    bath.check_index(n)?;
    let eps = bath.eigenvalues();
    Ok(DeltaComb {
        atoms: (0..bath.bath_size())
            .map(|k| Atom {
                epsilon: eps[(m, k)] - eps[(n, k)],
                weight: bath.joint_weight(m, n, k),
            })
            .collect(),
    })
}

/// Splits g into ρ_mn(0) · p_mn with ∫p = 1, or marks the pair dark.
pub fn normalize_density(g: UnnormalizedDensity) -> Result<Normalization> {
    match g {
        UnnormalizedDensity::Comb(comb) => {
            let total = comb.total_weight();
            if total == Complex64::new(0.0, 0.0) {
                return Ok(Normalization::Dark);
            }
            let atoms = comb
                .atoms
                .iter()
                .map(|a| Atom {
                    epsilon: a.epsilon,
                    weight: a.weight / total,
                })
                .collect();
            Ok(Normalization::Normalized(SpectralDensity {
                weight: total,
                distribution: Distribution::Comb(DeltaComb { atoms }),
            }))
        }
        UnnormalizedDensity::Tabulated { epsilon, values } => {
            let raw = TabulatedDensity::unchecked(epsilon, values)?;
            let total = raw.integral();
            if total == 0.0 {
                return Ok(Normalization::Dark);
            }
            let values = raw.values.iter().map(|v| v / total).collect();
            let table = TabulatedDensity::new(raw.epsilon, values)?;
            Ok(Normalization::Normalized(SpectralDensity {
                weight: Complex64::new(total, 0.0),
                distribution: Distribution::Tabulated(table),
            }))
        }
    }
}

type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Radial dispersion ε(k) with weight ρ(k) in d dimensions.
#[derive(Clone)]
pub struct Dispersion {
    dimension: u32,
    energy: RadialFn,
    weight: RadialFn,
    derivative: Option<RadialFn>,
    k_max: f64,
    k_points: usize,
}

impl std::fmt::Debug for Dispersion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dispersion")
            .field("dimension", &self.dimension)
            .field("analytic_derivative", &self.derivative.is_some())
            .field("k_max", &self.k_max)
            .field("k_points", &self.k_points)
            .finish()
    }
}

impl Dispersion {
    pub const DEFAULT_K_POINTS: usize = 10_000;

    pub fn new(
        dimension: u32,
        energy: impl Fn(f64) -> f64 + Send + Sync + 'static,
        weight: impl Fn(f64) -> f64 + Send + Sync + 'static,
        k_max: f64,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidParameter("dispersion dimension must be >= 1".into()));
        }
        if !(k_max > 0.0 && k_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("k_max must be positive, got {k_max}")));
        }
        Ok(Dispersion {
            dimension,
            energy: Arc::new(energy),
            weight: Arc::new(weight),
            derivative: None,
            k_max,
            k_points: Self::DEFAULT_K_POINTS,
        })
    }

    pub fn with_derivative(mut self, derivative: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(derivative));
        self
    }

    pub fn with_k_points(mut self, k_points: usize) -> Result<Self> {
        if k_points < 2 {
            return Err(Error::InvalidParameter("k grid needs at least 2 points".into()));
        }
        self.k_points = k_points;
        Ok(self)
    }

    pub fn dimension(&self) -> u32 {
        self.dimension
    }

    pub fn energy(&self, k: f64) -> f64 {
        (self.energy)(k)
    }

    pub fn weight(&self, k: f64) -> f64 {
        (self.weight)(k)
    }

    /// ε′(k): analytic if supplied, otherwise a central difference
    /// (second-order one-sided near k = 0).
    pub fn slope(&self, k: f64) -> f64 {
        if let Some(d) = &self.derivative {
            return d(k);
        }
        let h = 1e-6 * k.abs().max(1.0);
        if k >= h {
            (self.energy(k + h) - self.energy(k - h)) / (2.0 * h)
        } else {
            (-3.0 * self.energy(k) + 4.0 * self.energy(k + h) - self.energy(k + 2.0 * h)) / (2.0 * h)
        }
    }

    /// 2π^{d/2} / Γ(d/2): area of the unit sphere in d dimensions.
    pub fn surface_factor(&self) -> f64 {
        let half = self.dimension as f64 / 2.0;
        2.0 * PI.powf(half) / statrs::function::gamma::gamma(half)
    }

    fn k_grid(&self) -> Vec<f64> {
        uniform_grid(0.0, self.k_max, self.k_points).expect("validated at construction")
    }
}

/// Density of states on an ε grid, with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct DosTable {
    pub epsilon: Vec<f64>,
    pub density: Vec<f64>,
    /// Number of roots k_i found for each grid point.
    pub root_counts: Vec<usize>,
    pub warnings: Vec<String>,
}

impl DosTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,density\n");
        for (e, v) in self.epsilon.iter().zip(&self.density) {
            let _ = writeln!(out, "{},{}", float(*e), float(*v));
        }
        out
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let mut f_lo = f(lo);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-12 * mid.abs().max(f64::MIN_POSITIVE) || mid <= lo || mid >= hi {
            return mid;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Reduces a radial dispersion to the density of states
///
/// ```text
/// g(ε) = 2π^{d/2}/Γ(d/2) · Σ_i ρ(k_i) k_i^{d−1} / |ε′(k_i)|,   ε(k_i) = ε
/// ```
///
/// Roots are bracketed by sign changes of ε(k) − ε on the dispersion's
/// uniform k grid and refined by bisection.
pub fn dos_from_dispersion(disp: &Dispersion, eps_grid: &[f64]) -> Result<DosTable> {
    let ks = disp.k_grid();
    let energies: Vec<f64> = ks.iter().map(|&k| disp.energy(k)).collect();
    if ks.iter().all(|&k| disp.slope(k).abs() < SINGULAR_DERIVATIVE) {
        return Err(Error::SingularDispersion {
            epsilon: energies[0],
            k: 0.0,
            derivative: disp.slope(0.0).abs(),
        });
    }
    let surface = disp.surface_factor();
    let d = disp.dimension as i32;
    let k_max = *ks.last().expect("grid is non-empty");
    let e_max = *energies.last().expect("grid is non-empty");
    let slope_max = disp.slope(k_max);

    // interior extrema of ε(k): any ε that meets one has a vanishing ε′ root
    let slopes: Vec<f64> = ks.iter().map(|&k| disp.slope(k)).collect();
    let mut extrema = Vec::new();
    for i in 1..ks.len() {
        let (a, b) = (slopes[i - 1], slopes[i]);
        if a != 0.0 && b != 0.0 && (a < 0.0) != (b < 0.0) {
            let k = bisect(|k| disp.slope(k), ks[i - 1], ks[i]);
            extrema.push((k, disp.energy(k)));
        }
    }

    let per_point: Vec<Result<(f64, usize, bool)>> = eps_grid
        .par_iter()
        .map(|&eps| {
            if let Some(&(k, _)) = extrema
                .iter()
                .find(|(_, e)| (e - eps).abs() <= 1e-9 * eps.abs().max(1.0))
            {
                return Err(Error::SingularDispersion {
                    epsilon: eps,
                    k,
                    derivative: disp.slope(k).abs(),
                });
            }
            let f = |k: f64| disp.energy(k) - eps;
            let mut roots = Vec::new();
            for i in 0..ks.len() {
                let fi = energies[i] - eps;
                if fi == 0.0 {
                    roots.push(ks[i]);
                    continue;
                }
                if i + 1 < ks.len() {
                    let fj = energies[i + 1] - eps;
                    if fj != 0.0 && (fi < 0.0) != (fj < 0.0) {
                        roots.push(bisect(f, ks[i], ks[i + 1]));
                    }
                }
            }
            let mut g = 0.0;
            for &k in &roots {
                let slope = disp.slope(k).abs();
                if slope < SINGULAR_DERIVATIVE {
                    return Err(Error::SingularDispersion {
                        epsilon: eps,
                        k,
                        derivative: slope,
                    });
                }
                g += disp.weight(k) * k.powi(d - 1) / slope;
            }
            // Still heading towards eps at k_max: more roots may lie beyond.
            let beyond = e_max != eps && (e_max - eps) * slope_max < 0.0;
            Ok((surface * g, roots.len(), beyond))
        })
        .collect();

    let mut table = DosTable {
        epsilon: eps_grid.to_vec(),
        density: Vec::with_capacity(eps_grid.len()),
        root_counts: Vec::with_capacity(eps_grid.len()),
        warnings: Vec::new(),
    };
    let mut truncated = Vec::new();
    for (r, &eps) in per_point.into_iter().zip(eps_grid) {
        let (g, count, beyond) = r?;
        table.density.push(g);
        table.root_counts.push(count);
        if beyond {
            truncated.push(eps);
        }
    }
    if !truncated.is_empty() {
        let lo = truncated.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = truncated.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        table.warnings.push(format!(
            "root search truncated at k_max = {k_max}: {} grid point(s) in [{lo}, {hi}] may have roots beyond k_max",
            truncated.len()
        ));
    }
    Ok(table)
}
