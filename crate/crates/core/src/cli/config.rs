//! JSON run configuration: schema, defaults and validation into domain types.
//!
//! Complex numbers are written as `[re, im]` pairs (a bare number is read as
//! a real value). Matrices are arrays of rows.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{KernelAssignment, ReducedModel};
use crate::environment::{AnalyticFamily, DeltaComb, Dispersion, Distribution, TabulatedDensity, Atom};
use crate::kernels::{kernel_from_density, FluctuatingAtom, KernelSpec, MixturePart, QuadratureParams};
use crate::oracle::{build_composite, sample_bath_from_density, CompositeState, CompositeSystem};
use crate::spectrum::{Observable, ReducedInitialState, SystemSpectrum};
use crate::thermalization::{microcanonical_state, Window};
use crate::{CMatrix, Complex64, Error, RMatrix, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Kernel,
    Trajectory,
    OracleCompare,
    Information,
    Thermalize,
    Recurrence,
    Dos,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Kernel => "kernel",
            Mode::Trajectory => "trajectory",
            Mode::OracleCompare => "oracle-compare",
            Mode::Information => "information",
            Mode::Thermalize => "thermalize",
            Mode::Recurrence => "recurrence",
            Mode::Dos => "dos",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexValue {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexValue {
    fn value(self) -> Complex64 {
        match self {
            ComplexValue::Real(re) => Complex64::new(re, 0.0),
            ComplexValue::Pair([re, im]) => Complex64::new(re, im),
        }
    }
}

pub type MatrixConfig = Vec<Vec<ComplexValue>>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub environment: Option<EnvironmentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermalize: Option<WindowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recurrence: Option<RecurrenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dos: Option<DosConfig>,
    #[serde(default)]
    pub numeric: NumericConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub energies: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observable: Option<MatrixConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<MatrixConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernels: Option<KernelsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bath: Option<BathConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampled_bath: Option<SampledBathConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<KernelConfig>,
    #[serde(default)]
    pub pairs: Vec<PairKernelConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairKernelConfig {
    pub m: usize,
    pub n: usize,
    pub kernel: KernelConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathConfig {
    /// N rows of K eigenvalues ε_nk.
    pub eigenvalues: Vec<Vec<f64>>,
    pub state: CompositeStateConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompositeStateConfig {
    /// system.initial_state ⊗ bath_state (uniform 1/K when omitted).
    Product {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bath_state: Option<MatrixConfig>,
    },
    Full { matrix: MatrixConfig },
}

/// ε_nk = coupling[n] · s_k with s_k stratified samples of `family`; the
/// joint state is system.initial_state ⊗ 1/K.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledBathConfig {
    pub family: FamilyConfig,
    pub size: usize,
    pub coupling: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    Gaussian { sigma: f64 },
    Lorentz { gamma: f64 },
    Poisson { gamma: f64 },
    Uniform { delta: f64 },
}

impl FamilyConfig {
    fn family(self) -> AnalyticFamily {
        match self {
            FamilyConfig::Gaussian { sigma } => AnalyticFamily::Gaussian { sigma },
            FamilyConfig::Lorentz { gamma } => AnalyticFamily::Lorentz { gamma },
            FamilyConfig::Poisson { gamma } => AnalyticFamily::Poisson { gamma },
            FamilyConfig::Uniform { delta } => AnalyticFamily::Uniform { delta },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelConfig {
    Gaussian { sigma: f64 },
    Lorentz { gamma: f64 },
    Poisson { gamma: f64 },
    Uniform { delta: f64 },
    /// `[c_j, alpha_j]` pairs.
    Fluctuating { atoms: Vec<[f64; 2]> },
    Mixture { parts: Vec<MixturePartConfig> },
    Numeric {
        density: DensityConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        quadrature: Option<QuadratureConfig>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixturePartConfig {
    pub weight: f64,
    pub kernel: Box<KernelConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityConfig {
    Family(FamilyConfig),
    Tabulated { epsilon: Vec<f64>, density: Vec<f64> },
    /// Two-column `epsilon,density` file, relative to the config file.
    Csv(PathBuf),
    /// `[epsilon, weight]` atoms; weights must sum to one.
    Comb(Vec<(f64, ComplexValue)>),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    pub eps_min: f64,
    pub eps_max: f64,
    /// Auto-scaled to the time grid when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub panels: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialChoice {
    #[default]
    Microcanonical,
    Config,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub center: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub members: Option<Vec<usize>>,
    /// Energy half-width δE for a band window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<f64>,
    #[serde(default)]
    pub initial: InitialChoice,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrenceConfig {
    /// Defaults to numeric.t_max.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Defaults to numeric.tolerance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    /// Defaults to numeric.t_steps − 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Also report decay/revival of the coherence envelope at this fraction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revival_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DosConfig {
    pub dimension: u32,
    pub energy: RadialConfig,
    pub weight: RadialConfig,
    pub k_max: f64,
    #[serde(default = "default_k_points")]
    pub k_points: usize,
    pub epsilon: GridConfig,
}

fn default_k_points() -> usize {
    Dispersion::DEFAULT_K_POINTS
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

/// Radial profiles f(k).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RadialConfig {
    /// offset + coefficient · k^exponent
    Power {
        coefficient: f64,
        exponent: f64,
        #[serde(default)]
        offset: f64,
    },
    /// scale · exp(−k²/(2 width²))
    Gaussian { scale: f64, width: f64 },
    /// scale · exp(−k/length)
    Exponential { scale: f64, length: f64 },
    Constant { value: f64 },
}

impl RadialConfig {
    fn function(self) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
        move |k: f64| match self {
            RadialConfig::Power {
                coefficient,
                exponent,
                offset,
            } => offset + coefficient * k.powf(exponent),
            RadialConfig::Gaussian { scale, width } => scale * (-0.5 * (k / width).powi(2)).exp(),
            RadialConfig::Exponential { scale, length } => scale * (-k / length).exp(),
            RadialConfig::Constant { value } => value,
        }
    }

    fn derivative(self) -> Option<impl Fn(f64) -> f64 + Send + Sync + 'static> {
        match self {
            RadialConfig::Power {
                coefficient,
                exponent,
                ..
            } => Some(move |k: f64| {
                if exponent == 1.0 {
                    coefficient
                } else {
                    coefficient * exponent * k.powf(exponent - 1.0)
                }
            }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericConfig {
    #[serde(default)]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Number of grid points in [t_min, t_max].
    #[serde(default = "default_t_steps")]
    pub t_steps: usize,
    /// Explicit time grid; replaces t_min/t_max/t_steps. Information mode
    /// falls back to 50 log-spaced times in [1e-2, 1e2] without it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Grid intervals for the equilibration-time scan.
    #[serde(default = "default_scan_steps")]
    pub scan_steps: usize,
}

fn default_t_max() -> f64 {
    10.0
}
fn default_t_steps() -> usize {
    1001
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_scan_steps() -> usize {
    crate::dynamics::DEFAULT_SCAN_STEPS
}

impl Default for NumericConfig {
    fn default() -> Self {
        NumericConfig {
            t_min: 0.0,
            t_max: default_t_max(),
            t_steps: default_t_steps(),
            times: None,
            tolerance: default_tolerance(),
            scan_steps: default_scan_steps(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Add abs_D_m_n columns to trajectory tables.
    #[serde(default)]
    pub pair_columns: bool,
}

/// Command-line overrides of scalar fields.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub t_max: Option<f64>,
    pub t_steps: Option<usize>,
    pub tolerance: Option<f64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum EnvironmentModel {
    Kernels(KernelAssignment),
    Composite {
        system: CompositeSystem,
        state: CompositeState,
    },
}

/// A validated run: every section the mode needs is present and every
/// domain invariant has been checked.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    /// Resolved configuration (defaults and overrides applied), echoed into
    /// the manifest.
    pub file: ConfigFile,
    pub spectrum: Option<SystemSpectrum>,
    pub observable: Option<Observable>,
    pub initial_state: Option<ReducedInitialState>,
    pub environment: Option<EnvironmentModel>,
    pub kernel: Option<KernelSpec>,
    pub window: Option<Window>,
    pub dispersion: Option<(Dispersion, Vec<f64>)>,
    pub times: Vec<f64>,
    pub tolerance: f64,
    pub scan_steps: usize,
}

impl RunConfig {
    /// The reduced model for modes that work on ρ^A(t).
    pub fn reduced_model(&self) -> Result<ReducedModel> {
        let spectrum = self.require(&self.spectrum, "system.energies")?.clone();
        match self.require(&self.environment, "environment")? {
            EnvironmentModel::Kernels(assignment) => {
                let rho0 = self.require(&self.initial_state, "system.initial_state")?.clone();
                ReducedModel::new(spectrum, rho0, assignment.clone())
            }
            EnvironmentModel::Composite { system, state } => {
                ReducedModel::from_bath(spectrum, &state.to_discrete_bath(system)?)
            }
        }
    }

    pub fn composite(&self) -> Result<(&CompositeSystem, &CompositeState)> {
        match self.require(&self.environment, "environment")? {
            EnvironmentModel::Composite { system, state } => Ok((system, state)),
            EnvironmentModel::Kernels(_) => Err(Error::config(
                "environment",
                format!("{} mode needs a bath or sampled_bath environment", self.mode.name()),
            )),
        }
    }

    pub(crate) fn require<'a, T>(&self, field: &'a Option<T>, path: &str) -> Result<&'a T> {
        field
            .as_ref()
            .ok_or_else(|| Error::config(path, format!("required for {} mode", self.mode.name())))
    }
}

fn at<T>(path: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other),
    })
}

fn matrix(path: &str, rows: &MatrixConfig) -> Result<CMatrix> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::config(path, "matrix is empty"));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n {
            return Err(Error::config(
                format!("{path}[{i}]"),
                format!("row has {} entries, expected {n} (square matrix)", r.len()),
            ));
        }
    }
    Ok(CMatrix::from_fn(n, n, |i, j| rows[i][j].value()))
}

/// Parses a configuration whose `mode` field selects the run mode.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, None, &Overrides::default(), None)
}

/// Parses with an explicit mode (which must agree with the file's `mode`
/// field when both are given), command-line overrides, and the directory
/// that relative paths are resolved against.
pub fn parse_config_with(
    text: &str,
    mode: Option<Mode>,
    overrides: &Overrides,
    base_dir: Option<&Path>,
) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut file: ConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path.is_empty() { ".".to_string() } else { path }, e.into_inner())
    })?;

    let mode = match (mode, file.mode) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::config(
                "mode",
                format!("file says `{}` but `{}` was requested", b.name(), a.name()),
            ))
        }
        (Some(m), _) | (None, Some(m)) => m,
        (None, None) => return Err(Error::config("mode", "no run mode given")),
    };
    file.mode = Some(mode);
    if let Some(v) = overrides.t_max {
        file.numeric.t_max = v;
    }
    if let Some(v) = overrides.t_steps {
        file.numeric.t_steps = v;
    }
    if let Some(v) = overrides.tolerance {
        file.numeric.tolerance = v;
    }
    if let Some(v) = &overrides.out {
        file.output.dir = Some(v.clone());
    }

    let numeric = &file.numeric;
    if !(numeric.tolerance > 0.0) {
        return Err(Error::config("numeric.tolerance", "must be positive"));
    }
    if numeric.scan_steps == 0 {
        return Err(Error::config("numeric.scan_steps", "must be >= 1"));
    }
    let times = match (&numeric.times, mode) {
        (Some(t), _) => t.clone(),
        (None, Mode::Information) => crate::information::default_sweep_times(),
        (None, _) => {
            if numeric.t_steps < 2 || !(numeric.t_max > numeric.t_min) {
                return Err(Error::config(
                    "numeric",
                    format!(
                        "time grid needs t_max > t_min and t_steps >= 2 (got [{}, {}], {})",
                        numeric.t_min, numeric.t_max, numeric.t_steps
                    ),
                ));
            }
            at("numeric", crate::environment::uniform_grid(numeric.t_min, numeric.t_max, numeric.t_steps))?
        }
    };
    at("numeric.times", crate::dynamics::check_increasing(&times))?;
    let t_span = times.iter().map(|t| t.abs()).fold(0.0, f64::max);

    let mut cfg = RunConfig {
        mode,
        spectrum: None,
        observable: None,
        initial_state: None,
        environment: None,
        kernel: None,
        window: None,
        dispersion: None,
        times,
        tolerance: numeric.tolerance,
        scan_steps: numeric.scan_steps,
        file: ConfigFile::default(),
    };

    if let Some(sys) = &file.system {
        let spectrum = at("system.energies", SystemSpectrum::new(sys.energies.clone()))?;
        let n = spectrum.len();
        if let Some(obs) = &sys.observable {
            let m = matrix("system.observable", obs)?;
            if m.nrows() != n {
                return Err(Error::config("system.observable", format!("dimension {} != {n} levels", m.nrows())));
            }
            cfg.observable = Some(at("system.observable", Observable::new(m))?);
        }
        if let Some(rho) = &sys.initial_state {
            let m = matrix("system.initial_state", rho)?;
            if m.nrows() != n {
                return Err(Error::config(
                    "system.initial_state",
                    format!("dimension {} != {n} levels", m.nrows()),
                ));
            }
            cfg.initial_state = Some(at("system.initial_state", ReducedInitialState::new(m))?);
        }
        cfg.spectrum = Some(spectrum);
    }

    if let Some(k) = &file.kernel {
        cfg.kernel = Some(kernel(k, "kernel", t_span, base_dir)?);
    }

    if let Some(env) = &file.environment {
        cfg.environment = Some(environment(env, &cfg, t_span, base_dir)?);
    }

    if let Some(w) = &file.thermalize {
        let spectrum = cfg.require(&cfg.spectrum, "system.energies")?;
        let window = match (&w.members, w.band) {
            (Some(members), None) => Window::new(w.center, members.iter().copied(), spectrum.len()),
            (None, Some(band)) => Window::energy_band(spectrum, w.center, band),
            (None, None) => Window::singleton(w.center, spectrum.len()),
            (Some(_), Some(_)) => {
                return Err(Error::config("thermalize", "give either members or band, not both"))
            }
        };
        let window = at("thermalize", window)?;
        if w.initial == InitialChoice::Microcanonical {
            cfg.initial_state = Some(at("thermalize", microcanonical_state(&window, spectrum.len()))?);
        }
        cfg.window = Some(window);
    }

    if let Some(d) = &file.dos {
        let mut disp = at(
            "dos",
            Dispersion::new(d.dimension, d.energy.function(), d.weight.function(), d.k_max),
        )?;
        if let Some(der) = d.energy.derivative() {
            disp = disp.with_derivative(der);
        }
        disp = at("dos.k_points", disp.with_k_points(d.k_points))?;
        let grid = at(
            "dos.epsilon",
            crate::environment::uniform_grid(d.epsilon.min, d.epsilon.max, d.epsilon.points),
        )?;
        cfg.dispersion = Some((disp, grid));
    }

    check_mode_requirements(&cfg)?;
    cfg.file = file;
    Ok(cfg)
}

fn check_mode_requirements(cfg: &RunConfig) -> Result<()> {
    match cfg.mode {
        Mode::Kernel => {
            cfg.require(&cfg.kernel, "kernel")?;
        }
        Mode::Trajectory | Mode::Recurrence | Mode::Thermalize => {
            cfg.require(&cfg.observable, "system.observable")?;
            let env = cfg.require(&cfg.environment, "environment")?;
            if matches!(env, EnvironmentModel::Kernels(_)) {
                cfg.require(&cfg.initial_state, "system.initial_state")?;
            }
            if cfg.mode == Mode::Thermalize {
                cfg.require(&cfg.window, "thermalize")?;
            }
        }
        Mode::OracleCompare => {
            cfg.require(&cfg.observable, "system.observable")?;
            cfg.composite()?;
        }
        Mode::Information => {
            cfg.composite()?;
        }
        Mode::Dos => {
            cfg.require(&cfg.dispersion, "dos")?;
        }
    }
    Ok(())
}

fn default_window(family: AnalyticFamily) -> (f64, f64) {
    let half = match family {
        AnalyticFamily::Gaussian { sigma } => 12.0 * sigma,
        AnalyticFamily::Poisson { gamma } => 40.0 * gamma,
        AnalyticFamily::Uniform { delta } => delta,
        AnalyticFamily::Lorentz { gamma } => 1000.0 * gamma,
    };
    (-half, half)
}

fn kernel(k: &KernelConfig, path: &str, t_span: f64, base_dir: Option<&Path>) -> Result<KernelSpec> {
    let spec = match k {
        KernelConfig::Gaussian { sigma } => KernelSpec::gaussian(*sigma),
        KernelConfig::Lorentz { gamma } => KernelSpec::lorentz(*gamma),
        KernelConfig::Poisson { gamma } => KernelSpec::poisson(*gamma),
        KernelConfig::Uniform { delta } => KernelSpec::uniform(*delta),
        KernelConfig::Fluctuating { atoms } => KernelSpec::fluctuating(
            atoms
                .iter()
                .map(|&[coefficient, frequency]| FluctuatingAtom {
                    coefficient,
                    frequency,
                })
                .collect(),
        ),
        KernelConfig::Mixture { parts } => {
            let parts = parts
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    Ok(MixturePart {
                        weight: p.weight,
                        kernel: kernel(&p.kernel, &format!("{path}.parts[{i}].kernel"), t_span, base_dir)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            KernelSpec::mixture(parts)
        }
        KernelConfig::Numeric { density, quadrature } => {
            let dpath = format!("{path}.density");
            let dist = match density {
                DensityConfig::Family(f) => {
                    let fam = f.family();
                    at(&dpath, fam.validate())?;
                    Distribution::Family(fam)
                }
                DensityConfig::Tabulated { epsilon, density } => Distribution::Tabulated(at(
                    &dpath,
                    TabulatedDensity::new(epsilon.clone(), density.clone()),
                )?),
                DensityConfig::Csv(file) => {
                    let full = base_dir.map(|b| b.join(file)).unwrap_or_else(|| file.clone());
                    let text = std::fs::read_to_string(&full).map_err(|e| Error::io(&full, e))?;
                    Distribution::Tabulated(at(&dpath, TabulatedDensity::from_csv(&text))?)
                }
                DensityConfig::Comb(atoms) => Distribution::Comb(DeltaComb::new(
                    atoms
                        .iter()
                        .map(|&(epsilon, w)| Atom {
                            epsilon,
                            weight: w.value(),
                        })
                        .collect(),
                )),
            };
            let (lo, hi) = match (quadrature, &dist) {
                (Some(q), _) => (q.eps_min, q.eps_max),
                (None, Distribution::Family(f)) => default_window(*f),
                (None, Distribution::Tabulated(t)) => (t.epsilon()[0], t.epsilon()[t.epsilon().len() - 1]),
                (None, Distribution::Comb(_)) => (-1.0, 1.0),
            };
            let qpath = format!("{path}.quadrature");
            let quad = match quadrature.and_then(|q| q.panels) {
                Some(panels) => at(&qpath, QuadratureParams::new(lo, hi, panels))?,
                None => at(&qpath, QuadratureParams::auto(lo, hi, t_span))?,
            };
            kernel_from_density(&dist, &quad)
        }
    };
    at(path, spec)
}

fn environment(env: &EnvironmentConfig, cfg: &RunConfig, t_span: f64, base_dir: Option<&Path>) -> Result<EnvironmentModel> {
    let given = [env.kernels.is_some(), env.bath.is_some(), env.sampled_bath.is_some()]
        .iter()
        .filter(|&&b| b)
        .count();
    if given != 1 {
        return Err(Error::config(
            "environment",
            "give exactly one of kernels, bath, sampled_bath",
        ));
    }
    let spectrum = cfg.require(&cfg.spectrum, "system.energies")?;
    let n = spectrum.len();

    if let Some(k) = &env.kernels {
        let mut assignment = KernelAssignment::default();
        if let Some(d) = &k.default {
            assignment.default = Some(kernel(d, "environment.kernels.default", t_span, base_dir)?);
        }
        for (i, p) in k.pairs.iter().enumerate() {
            let path = format!("environment.kernels.pairs[{i}]");
            if p.m == p.n {
                return Err(Error::config(
                    path,
                    format!("kernel assigned to diagonal pair ({}, {}); diagonal factors are fixed to 1", p.m, p.n),
                ));
            }
            if p.m >= n || p.n >= n {
                return Err(Error::config(path, format!("pair ({}, {}) out of range for {n} levels", p.m, p.n)));
            }
            let spec = kernel(&p.kernel, &format!("{path}.kernel"), t_span, base_dir)?;
            if assignment.pairs.contains_key(&(p.m, p.n)) || assignment.pairs.contains_key(&(p.n, p.m)) {
                return Err(Error::config(path, "pair assigned twice"));
            }
            assignment.pairs.insert((p.m, p.n), spec);
        }
        if let Some(rho0) = &cfg.initial_state {
            at(
                "environment.kernels",
                ReducedModel::new(spectrum.clone(), rho0.clone(), assignment.clone()),
            )?;
        }
        return Ok(EnvironmentModel::Kernels(assignment));
    }

    let (eigenvalues, state) = if let Some(b) = &env.bath {
        let k = b.eigenvalues.first().map_or(0, Vec::len);
        if b.eigenvalues.len() != n || k == 0 || b.eigenvalues.iter().any(|r| r.len() != k) {
            return Err(Error::config(
                "environment.bath.eigenvalues",
                format!("expected {n} rows of equal, non-zero length"),
            ));
        }
        let eps = RMatrix::from_fn(n, k, |i, j| b.eigenvalues[i][j]);
        let state = match &b.state {
            CompositeStateConfig::Full { matrix: m } => {
                at("environment.bath.state.matrix", CompositeState::new(matrix("environment.bath.state.matrix", m)?))?
            }
            CompositeStateConfig::Product { bath_state } => {
                let rho_a = cfg.require(&cfg.initial_state, "system.initial_state")?;
                let rho_b = match bath_state {
                    Some(m) => matrix("environment.bath.state.bath_state", m)?,
                    None => CMatrix::identity(k, k).scale(1.0 / k as f64),
                };
                if rho_b.nrows() != k {
                    return Err(Error::config(
                        "environment.bath.state.bath_state",
                        format!("dimension {} != bath size {k}", rho_b.nrows()),
                    ));
                }
                at("environment.bath.state", CompositeState::product(rho_a.matrix(), &rho_b))?
            }
        };
        (eps, state)
    } else {
        let s = env.sampled_bath.as_ref().expect("exactly one environment kind");
        if s.coupling.len() != n {
            return Err(Error::config(
                "environment.sampled_bath.coupling",
                format!("expected {n} entries, found {}", s.coupling.len()),
            ));
        }
        let samples = at(
            "environment.sampled_bath",
            sample_bath_from_density(&Distribution::Family(s.family.family()), s.size),
        )?;
        let eps = RMatrix::from_fn(n, s.size, |i, j| s.coupling[i] * samples[j]);
        let rho_a = cfg.require(&cfg.initial_state, "system.initial_state")?;
        let rho_b = CMatrix::identity(s.size, s.size).scale(1.0 / s.size as f64);
        let state = at("environment.sampled_bath", CompositeState::product(rho_a.matrix(), &rho_b))?;
        (eps, state)
    };
    let system = at("environment", build_composite(spectrum, eigenvalues))?;
    if state.dim() != system.dim() {
        return Err(Error::config(
            "environment.bath.state",
            format!("composite state dimension {} != N*K = {}", state.dim(), system.dim()),
        ));
    }
    Ok(EnvironmentModel::Composite { system, state })
}
