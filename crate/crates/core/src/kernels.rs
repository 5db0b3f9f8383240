//! Decoherence factors D(t) = ∫ p(ε) e^{−iεt} dε.
//!
//! Four analytic families have closed-form transforms; a fluctuating part
//! built from symmetric delta pairs gives a pure cosine sum; mixtures are
//! convex combinations; anything else is integrated numerically (composite
//! Simpson on a truncated window) or, for delta combs, summed exactly.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::environment::{AnalyticFamily, DeltaComb, Distribution};
use crate::fmt::float;
use crate::{Complex64, Error, Result};

/// Tolerance on Σ c_j = 1 and Σ w_i = 1.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// A quadrature window capturing less than 1 − this of the mass is flagged.
pub const TRUNCATION_TOL: f64 = 1e-6;
pub const MIN_PANELS: usize = 16;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadratureRule {
    CompositeSimpson,
}

/// Truncation window and resolution for numeric transforms. `panels` counts
/// subintervals of the uniform ε grid and must be even.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureParams {
    pub eps_min: f64,
    pub eps_max: f64,
    pub panels: usize,
    pub rule: QuadratureRule,
}

impl QuadratureParams {
    pub fn new(eps_min: f64, eps_max: f64, panels: usize) -> Result<Self> {
        let q = QuadratureParams {
            eps_min,
            eps_max,
            panels,
            rule: QuadratureRule::CompositeSimpson,
        };
        q.validate()?;
        Ok(q)
    }

    /// Panels scaled so the fastest oscillation e^{−iε t_max} gets at least
    /// 20 subintervals per period, rounded up to a multiple of 4 so that the
    /// window midpoint is a panel boundary.
    pub fn auto(eps_min: f64, eps_max: f64, t_max: f64) -> Result<Self> {
        let periods = t_max.abs() * (eps_max - eps_min) / (2.0 * PI);
        let wanted = (20.0 * periods).ceil().max(64.0) as usize;
        Self::new(eps_min, eps_max, wanted.div_ceil(4) * 4)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_min < self.eps_max) || !self.eps_min.is_finite() || !self.eps_max.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "quadrature window [{}, {}] must be finite with eps_min < eps_max",
                self.eps_min, self.eps_max
            )));
        }
        if self.panels < MIN_PANELS || self.panels % 2 != 0 {
            return Err(Error::InvalidParameter(format!(
                "quadrature needs an even panel count >= {MIN_PANELS}, got {}",
                self.panels
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.eps_max - self.eps_min) / self.panels as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let h = self.step();
        (0..=self.panels)
            .map(|i| {
                if i == self.panels {
                    self.eps_max
                } else {
                    self.eps_min + h * i as f64
                }
            })
            .collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        let h3 = self.step() / 3.0;
        (0..=self.panels)
            .map(|i| {
                if i == 0 || i == self.panels {
                    h3
                } else if i % 2 == 1 {
                    4.0 * h3
                } else {
                    2.0 * h3
                }
            })
            .collect()
    }
}

/// c_j cos(α_j t) term of a fluctuating factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluctuatingAtom {
    pub coefficient: f64,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixturePart {
    pub weight: f64,
    pub kernel: KernelSpec,
}

/// Transform of an arbitrary normalized distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericKernel {
    source: NumericSource,
    captured_mass: f64,
    warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum NumericSource {
    Comb(DeltaComb),
    Quadrature {
        params: QuadratureParams,
        nodes: Arc<[f64]>,
        /// Simpson weight times density at each node.
        weights: Arc<[f64]>,
    },
}

impl NumericKernel {
    pub fn is_comb(&self) -> bool {
        matches!(self.source, NumericSource::Comb(_))
    }

    pub fn comb(&self) -> Option<&DeltaComb> {
        match &self.source {
            NumericSource::Comb(c) => Some(c),
            NumericSource::Quadrature { .. } => None,
        }
    }

    pub fn quadrature(&self) -> Option<&QuadratureParams> {
        match &self.source {
            NumericSource::Comb(_) => None,
            NumericSource::Quadrature { params, .. } => Some(params),
        }
    }

    /// Exact mass of the density inside the quadrature window (1 for combs).
    pub fn captured_mass(&self) -> f64 {
        self.captured_mass
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    fn eval(&self, t: f64) -> Complex64 {
        match &self.source {
            NumericSource::Comb(comb) => comb
                .atoms
                .iter()
                .map(|a| a.weight * Complex64::cis(-a.epsilon * t))
                .sum(),
            NumericSource::Quadrature { nodes, weights, .. } => nodes
                .iter()
                .zip(weights.iter())
                .map(|(&e, &w)| Complex64::cis(-e * t) * w)
                .sum(),
        }
    }

    fn conjugate(&self) -> NumericKernel {
        let source = match &self.source {
            NumericSource::Comb(comb) => NumericSource::Comb(DeltaComb::new(
                comb.atoms
                    .iter()
                    .map(|a| crate::environment::Atom {
                        epsilon: -a.epsilon,
                        weight: a.weight.conj(),
                    })
                    .collect(),
            )),
            NumericSource::Quadrature {
                params,
                nodes,
                weights,
            } => NumericSource::Quadrature {
                params: QuadratureParams {
                    eps_min: -params.eps_max,
                    eps_max: -params.eps_min,
                    ..*params
                },
                nodes: nodes.iter().map(|e| -e).collect(),
                weights: weights.clone(),
            },
        };
        NumericKernel {
            source,
            captured_mass: self.captured_mass,
            warnings: self.warnings.clone(),
        }
    }
}

/// A decoherence factor D(t).
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// exp(−(σt)²/2)
    Gaussian { sigma: f64 },
    /// exp(−γ|t|)
    Lorentz { gamma: f64 },
    /// 1/(1 + (γt)²)
    Poisson { gamma: f64 },
    /// sin(Δt)/(Δt)
    Uniform { delta: f64 },
    /// Σ_j c_j cos(α_j t)
    Fluctuating(Vec<FluctuatingAtom>),
    /// Σ_i w_i D_i(t)
    Mixture(Vec<MixturePart>),
    Numeric(NumericKernel),
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        positive("sigma", sigma)?;
        Ok(KernelSpec::Gaussian { sigma })
    }

    pub fn lorentz(gamma: f64) -> Result<Self> {
        positive("gamma", gamma)?;
        Ok(KernelSpec::Lorentz { gamma })
    }

    pub fn poisson(gamma: f64) -> Result<Self> {
        positive("gamma", gamma)?;
        Ok(KernelSpec::Poisson { gamma })
    }

    pub fn uniform(delta: f64) -> Result<Self> {
        positive("delta", delta)?;
        Ok(KernelSpec::Uniform { delta })
    }

    pub fn fluctuating(atoms: Vec<FluctuatingAtom>) -> Result<Self> {
        let k = KernelSpec::Fluctuating(atoms);
        k.validate()?;
        Ok(k)
    }

    pub fn mixture(parts: Vec<MixturePart>) -> Result<Self> {
        let k = KernelSpec::Mixture(parts);
        k.validate()?;
        Ok(k)
    }

    /// Constant factor 1: no decoherence.
    pub fn coherent() -> Self {
        KernelSpec::Fluctuating(vec![FluctuatingAtom {
            coefficient: 1.0,
            frequency: 0.0,
        }])
    }

    /// Exact finite-sum factor of a normalized comb.
    pub fn from_comb(comb: DeltaComb) -> Result<Self> {
        kernel_from_comb(comb)
    }

    pub fn from_family(family: AnalyticFamily) -> Result<Self> {
        family.validate()?;
        Ok(match family {
            AnalyticFamily::Gaussian { sigma } => KernelSpec::Gaussian { sigma },
            AnalyticFamily::Lorentz { gamma } => KernelSpec::Lorentz { gamma },
            AnalyticFamily::Poisson { gamma } => KernelSpec::Poisson { gamma },
            AnalyticFamily::Uniform { delta } => KernelSpec::Uniform { delta },
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Gaussian { sigma } => positive("sigma", *sigma),
            KernelSpec::Lorentz { gamma } | KernelSpec::Poisson { gamma } => positive("gamma", *gamma),
            KernelSpec::Uniform { delta } => positive("delta", *delta),
            KernelSpec::Fluctuating(atoms) => {
                if atoms.is_empty() {
                    return Err(Error::InvalidParameter("fluctuating kernel needs at least one atom".into()));
                }
                for a in atoms {
                    if !(a.coefficient >= 0.0 && a.coefficient.is_finite() && a.frequency.is_finite()) {
                        return Err(Error::InvalidParameter(format!(
                            "fluctuating atom ({}, {}) needs finite c >= 0 and finite alpha",
                            a.coefficient, a.frequency
                        )));
                    }
                }
                let sum: f64 = atoms.iter().map(|a| a.coefficient).sum();
                if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "fluctuating coefficients sum to {sum}, expected 1"
                    )));
                }
                Ok(())
            }
            KernelSpec::Mixture(parts) => {
                if parts.is_empty() {
                    return Err(Error::InvalidParameter("mixture needs at least one part".into()));
                }
                for p in parts {
                    if !(p.weight >= 0.0 && p.weight.is_finite()) {
                        return Err(Error::InvalidParameter(format!(
                            "mixture weight {} must be finite and >= 0",
                            p.weight
                        )));
                    }
                    p.kernel.validate()?;
                }
                let sum: f64 = parts.iter().map(|p| p.weight).sum();
                if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "mixture weights sum to {sum}, expected 1"
                    )));
                }
                Ok(())
            }
            KernelSpec::Numeric(_) => Ok(()),
        }
    }

    /// Whether |D(t)| → 0: true for measurable densities, false for anything
    /// with a delta-comb component.
    pub fn is_decaying(&self) -> bool {
        match self {
            KernelSpec::Gaussian { .. }
            | KernelSpec::Lorentz { .. }
            | KernelSpec::Poisson { .. }
            | KernelSpec::Uniform { .. } => true,
            KernelSpec::Fluctuating(_) => false,
            KernelSpec::Mixture(parts) => parts
                .iter()
                .all(|p| p.weight == 0.0 || p.kernel.is_decaying()),
            KernelSpec::Numeric(n) => !n.is_comb(),
        }
    }

    /// True when D(t) is a finite sum of exponentials (finite surrounding).
    pub fn is_quasi_periodic(&self) -> bool {
        match self {
            KernelSpec::Fluctuating(_) => true,
            KernelSpec::Numeric(n) => n.is_comb(),
            KernelSpec::Mixture(parts) => parts
                .iter()
                .all(|p| p.weight == 0.0 || p.kernel.is_quasi_periodic()),
            _ => false,
        }
    }

    /// The non-decaying remainder D^F(t) as cosine atoms, with mixture
    /// weights folded into the coefficients. Empty for purely decaying
    /// kernels; an error when a comb part cannot be written as symmetric
    /// cosine pairs.
    pub fn fluctuating_part(&self) -> Result<Vec<FluctuatingAtom>> {
        match self {
            KernelSpec::Fluctuating(atoms) => Ok(atoms.clone()),
            KernelSpec::Mixture(parts) => {
                let mut out = Vec::new();
                for p in parts {
                    for a in p.kernel.fluctuating_part()? {
                        out.push(FluctuatingAtom {
                            coefficient: p.weight * a.coefficient,
                            frequency: a.frequency,
                        });
                    }
                }
                Ok(out)
            }
            KernelSpec::Numeric(n) if n.is_comb() => Err(Error::Unsupported(
                "delta-comb kernel cannot be separated into decaying and fluctuating parts".into(),
            )),
            _ => Ok(Vec::new()),
        }
    }

    /// D for the reversed pair: conj(D(t)) as a function of t.
    pub fn conjugate(&self) -> KernelSpec {
        match self {
            KernelSpec::Mixture(parts) => KernelSpec::Mixture(
                parts
                    .iter()
                    .map(|p| MixturePart {
                        weight: p.weight,
                        kernel: p.kernel.conjugate(),
                    })
                    .collect(),
            ),
            KernelSpec::Numeric(n) => KernelSpec::Numeric(n.conjugate()),
            // real and even
            other => other.clone(),
        }
    }

    /// Truncation warnings from numeric parts.
    pub fn warnings(&self) -> Vec<String> {
        match self {
            KernelSpec::Numeric(n) => n.warnings.clone(),
            KernelSpec::Mixture(parts) => parts.iter().flat_map(|p| p.kernel.warnings()).collect(),
            _ => Vec::new(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            KernelSpec::Gaussian { sigma } => format!("gaussian(sigma={sigma})"),
            KernelSpec::Lorentz { gamma } => format!("lorentz(gamma={gamma})"),
            KernelSpec::Poisson { gamma } => format!("poisson(gamma={gamma})"),
            KernelSpec::Uniform { delta } => format!("uniform(delta={delta})"),
            KernelSpec::Fluctuating(a) => format!("fluctuating({} atoms)", a.len()),
            KernelSpec::Mixture(p) => format!(
                "mixture[{}]",
                p.iter()
                    .map(|p| format!("{}*{}", p.weight, p.kernel.describe()))
                    .collect::<Vec<_>>()
                    .join(" + ")
            ),
            KernelSpec::Numeric(n) => match &n.source {
                NumericSource::Comb(c) => format!("comb({} atoms)", c.atoms.len()),
                NumericSource::Quadrature { params, .. } => format!(
                    "quadrature([{}, {}], {} panels)",
                    params.eps_min, params.eps_max, params.panels
                ),
            },
        }
    }
}

/// Evaluates D(t). D(0) is pinned to 1, the normalization of p.
pub fn kernel_eval(spec: &KernelSpec, t: f64) -> Complex64 {
    if t == 0.0 {
        return ONE;
    }
    match spec {
        KernelSpec::Gaussian { sigma } => {
            let x = sigma * t;
            Complex64::new((-0.5 * x * x).exp(), 0.0)
        }
        KernelSpec::Lorentz { gamma } => Complex64::new((-gamma * t.abs()).exp(), 0.0),
        KernelSpec::Poisson { gamma } => {
            let x = gamma * t;
            Complex64::new(1.0 / (1.0 + x * x), 0.0)
        }
        KernelSpec::Uniform { delta } => {
            let x = delta * t;
            let v = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
            Complex64::new(v, 0.0)
        }
        KernelSpec::Fluctuating(atoms) => Complex64::new(
            atoms
                .iter()
                .map(|a| a.coefficient * (a.frequency * t).cos())
                .sum(),
            0.0,
        ),
        KernelSpec::Mixture(parts) => parts
            .iter()
            .map(|p| kernel_eval(&p.kernel, t) * p.weight)
            .sum(),
        KernelSpec::Numeric(n) => n.eval(t),
    }
}

fn kernel_from_comb(comb: DeltaComb) -> Result<KernelSpec> {
    if comb.atoms.is_empty() {
        return Err(Error::InvalidParameter("delta comb has no atoms".into()));
    }
    let total = comb.total_weight();
    if (total - ONE).norm() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "delta comb weights sum to {total}, expected 1"
        )));
    }
    Ok(KernelSpec::Numeric(NumericKernel {
        source: NumericSource::Comb(comb),
        captured_mass: 1.0,
        warnings: Vec::new(),
    }))
}

/// Wraps a normalized distribution as a numeric decoherence factor. Combs
/// are summed exactly and ignore `quad`; quadrature weights are rescaled to
/// sum to the density's exact mass inside the window.
pub fn kernel_from_density(density: &Distribution, quad: &QuadratureParams) -> Result<KernelSpec> {
    let (pdf, captured): (Box<dyn Fn(f64) -> f64>, f64) = match density {
        Distribution::Comb(comb) => return kernel_from_comb(comb.clone()),
        Distribution::Family(f) => {
            f.validate()?;
            let f = *f;
            (Box::new(move |e| f.pdf(e)), f.mass_between(quad.eps_min, quad.eps_max))
        }
        Distribution::Tabulated(t) => {
            let captured = t.mass_between(quad.eps_min, quad.eps_max);
            let t = t.clone();
            (Box::new(move |e| t.value_at(e)), captured)
        }
    };
    quad.validate()?;
    let nodes = quad.nodes();
    let mut weights: Vec<f64> = quad
        .weights()
        .iter()
        .zip(&nodes)
        .map(|(w, &e)| w * pdf(e))
        .collect();
    // weights sum to the exact window mass, so |D(t)| <= D(0)
    let sum: f64 = weights.iter().sum();
    if sum > 0.0 {
        let scale = captured / sum;
        weights.iter_mut().for_each(|w| *w *= scale);
    }
    let mut warnings = Vec::new();
    if captured < 1.0 - TRUNCATION_TOL {
        warnings.push(format!(
            "quadrature window [{}, {}] captures {captured} of the density's mass (< 1 - {TRUNCATION_TOL:e})",
            quad.eps_min, quad.eps_max
        ));
    }
    Ok(KernelSpec::Numeric(NumericKernel {
        source: NumericSource::Quadrature {
            params: *quad,
            nodes: nodes.into(),
            weights: weights.into(),
        },
        captured_mass: captured,
        warnings,
    }))
}

/// Tail behaviour of |D(t)| on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    /// Structural classification (see [`KernelSpec::is_decaying`]).
    pub decaying: bool,
    /// Second half of the grid's time span.
    pub trailing_window: (f64, f64),
    pub trailing_sup: f64,
    /// (window start, sup |D|) for the trailing 1/2, 1/4 and 1/8 of the span.
    pub window_sups: Vec<(f64, f64)>,
}

pub fn kernel_decay_report(spec: &KernelSpec, t_grid: &[f64]) -> Result<DecayReport> {
    if t_grid.is_empty() {
        return Err(Error::Precondition("decay report needs a non-empty time grid".into()));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("decay report time grid must be increasing".into()));
    }
    let first = t_grid[0];
    let last = t_grid[t_grid.len() - 1];
    let mags: Vec<f64> = t_grid.iter().map(|&t| kernel_eval(spec, t).norm()).collect();
    let sup_from = |start: f64| {
        t_grid
            .iter()
            .zip(&mags)
            .filter(|(&t, _)| t >= start)
            .map(|(_, &m)| m)
            .fold(0.0, f64::max)
    };
    let window_sups: Vec<(f64, f64)> = [2.0, 4.0, 8.0]
        .iter()
        .map(|div| {
            let start = last - (last - first) / div;
            (start, sup_from(start))
        })
        .collect();
    Ok(DecayReport {
        decaying: spec.is_decaying(),
        trailing_window: (window_sups[0].0, last),
        trailing_sup: window_sups[0].1,
        window_sups,
    })
}

/// Kernel table with columns t, D_re, D_im, abs_D.
pub fn kernel_table_csv(spec: &KernelSpec, times: &[f64]) -> String {
    let mut out = String::from("t,D_re,D_im,abs_D\n");
    for &t in times {
        let d = kernel_eval(spec, t);
        let _ = writeln!(out, "{},{},{},{}", float(t), float(d.re), float(d.im), float(d.norm()));
    }
    out
}
