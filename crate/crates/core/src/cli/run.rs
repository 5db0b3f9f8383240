use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{Mode, RunConfig};
use crate::dynamics::{
    equilibration_time, quasi_equilibrium_lifetime, recurrence_scan, trajectory, EquilibrationTime, ReducedModel,
    TrajectoryOptions,
};
use crate::environment::dos_from_dispersion;
use crate::information::InformationModel;
use crate::kernels::{kernel_decay_report, kernel_eval, kernel_table_csv, KernelSpec};
use crate::oracle::compare_with_spectral;
use crate::thermalization::thermalization_check;
use crate::{Error, Result};

pub const DEFAULT_OUT_DIR: &str = "qisim-out";

/// Everything a run produces before anything touches the disk.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    /// File name to contents.
    pub files: BTreeMap<String, String>,
    pub summary: BTreeMap<String, Value>,
    pub verdicts: BTreeMap<String, bool>,
    pub warnings: Vec<String>,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.verdicts.values().all(|&v| v)
    }
}

fn push_unique(out: &mut Vec<String>, w: String) {
    if !out.contains(&w) {
        out.push(w);
    }
}

fn kernel_warnings(spec: &KernelSpec, out: &mut Vec<String>) {
    for w in spec.warnings() {
        push_unique(out, w);
    }
}

fn model_warnings(model: &ReducedModel, out: &mut Vec<String>) {
    for w in model.warnings() {
        push_unique(out, w.clone());
    }
    for (_, _, k) in model.active_pairs() {
        kernel_warnings(k, out);
    }
}

pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    let mut out = RunOutcome::default();
    match cfg.mode {
        Mode::Kernel => {
            let spec = cfg.require(&cfg.kernel, "kernel")?;
            kernel_warnings(spec, &mut out.warnings);
            out.files.insert("kernel.csv".into(), kernel_table_csv(spec, &cfg.times));
            let report = kernel_decay_report(spec, &cfg.times)?;
            let max_abs = cfg.times.iter().map(|&t| kernel_eval(spec, t).norm()).fold(0.0, f64::max);
            out.summary.insert("kernel".into(), json!(spec.describe()));
            out.summary.insert("decaying".into(), json!(report.decaying));
            out.summary.insert("quasi_periodic".into(), json!(spec.is_quasi_periodic()));
            out.summary.insert("trailing_window".into(), json!([report.trailing_window.0, report.trailing_window.1]));
            out.summary.insert("trailing_sup_abs_D".into(), json!(report.trailing_sup));
            out.summary.insert(
                "window_sups".into(),
                json!(report.window_sups.iter().map(|(s, v)| json!({"start": s, "sup_abs_D": v})).collect::<Vec<_>>()),
            );
            if let KernelSpec::Numeric(n) = spec {
                out.summary.insert("captured_mass".into(), json!(n.captured_mass()));
            }
            out.summary.insert("max_abs_D".into(), json!(max_abs));
        }
        Mode::Trajectory => {
            let model = cfg.reduced_model()?;
            let a = cfg.require(&cfg.observable, "system.observable")?;
            model_warnings(&model, &mut out.warnings);
            let traj = trajectory(
                &model,
                a,
                &cfg.times,
                TrajectoryOptions {
                    pair_columns: cfg.file.output.pair_columns,
                    keep_matrices: false,
                },
            )?;
            out.files.insert("trajectory.csv".into(), traj.to_csv());
            out.summary.insert("equilibrium".into(), json!(traj.equilibrium.value));
            out.summary.insert("equilibrium_partial".into(), json!(traj.equilibrium.partial));
            out.summary.insert("max_imaginary".into(), json!(traj.max_imaginary()));
            out.summary.insert("final_deviation".into(), json!(traj.deviations.last().copied()));
            let scale = a.matrix().iter().map(|z| z.norm()).fold(1.0, f64::max);
            out.verdicts.insert("real_average".into(), traj.max_imaginary() <= 1e-12 * scale);
            if model.all_decaying() {
                let horizon = *cfg.times.last().expect("validated non-empty");
                if horizon > 0.0 {
                    match equilibration_time(&model, a, cfg.tolerance, horizon, cfg.scan_steps)? {
                        EquilibrationTime::Reached { t_star } => {
                            out.summary.insert("equilibration_time".into(), json!(t_star));
                            out.verdicts.insert("equilibrated".into(), true);
                        }
                        EquilibrationTime::NotReached { final_deviation } => {
                            out.summary.insert("equilibration_time".into(), Value::Null);
                            out.summary.insert("scan_final_deviation".into(), json!(final_deviation));
                            out.verdicts.insert("equilibrated".into(), false);
                        }
                    }
                }
            } else {
                out.warnings
                    .push("some kernels do not decay; the equilibrium is a time average".into());
            }
        }
        Mode::OracleCompare => {
            let (sys, state) = cfg.composite()?;
            let spectrum = cfg.require(&cfg.spectrum, "system.energies")?;
            let a = cfg.require(&cfg.observable, "system.observable")?;
            let rows = compare_with_spectral(sys, state, spectrum, a, &cfg.times)?;
            let max = rows.iter().map(|r| r.abs_diff).fold(0.0, f64::max);
            let text = serde_json::to_string_pretty(&rows).map_err(|e| Error::Invariant(e.to_string()))?;
            out.files.insert("oracle_compare.json".into(), text + "\n");
            out.summary.insert("max_abs_diff".into(), json!(max));
            out.summary.insert("composite_dim".into(), json!(sys.dim()));
            out.summary.insert("quasi_isolation_residual".into(), json!(sys.quasi_isolation_residual()));
            out.verdicts.insert("agreement".into(), max <= cfg.tolerance);
        }
        Mode::Information => {
            let (sys, state) = cfg.composite()?;
            let model = InformationModel::new(sys, state)?;
            let trace = model.trace_over(&cfg.times)?;
            out.files.insert("information.csv".into(), trace.to_csv());
            out.summary.insert("initial".into(), json!(model.initial()));
            out.summary.insert("min_deficit".into(), json!(trace.min_deficit()));
            out.summary.insert("max_deficit".into(), json!(trace.max_deficit()));
            out.verdicts.insert("non_increasing".into(), trace.non_increasing());
        }
        Mode::Thermalize => {
            let model = cfg.reduced_model()?;
            let a = cfg.require(&cfg.observable, "system.observable")?;
            let window = cfg.require(&cfg.window, "thermalize")?;
            model_warnings(&model, &mut out.warnings);
            let report = thermalization_check(&model, a, window)?;
            let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Invariant(e.to_string()))?;
            out.files.insert("thermalization.json".into(), text + "\n");
            out.summary.insert("diff".into(), json!(report.diff));
            out.summary.insert("spread".into(), json!(report.spread));
            out.verdicts.insert("bound".into(), report.holds);
        }
        Mode::Recurrence => {
            let model = cfg.reduced_model()?;
            let a = cfg.require(&cfg.observable, "system.observable")?;
            model_warnings(&model, &mut out.warnings);
            let rc = cfg.file.recurrence.clone().unwrap_or_default();
            let horizon = rc.horizon.unwrap_or(cfg.file.numeric.t_max);
            let delta = rc.delta.unwrap_or(cfg.tolerance);
            let steps = rc.steps.unwrap_or(cfg.file.numeric.t_steps.saturating_sub(1).max(1));
            let scan = recurrence_scan(&model, a, horizon, delta, steps)?;
            out.files.insert("recurrence.csv".into(), scan.to_csv());
            out.summary.insert("hits".into(), json!(scan.hits.len()));
            out.summary.insert("first_recurrence".into(), json!(scan.hits.first().map(|h| h.time)));
            out.summary.insert("always_recurrent".into(), json!(scan.always_recurrent));
            if let Some(fraction) = rc.revival_fraction {
                let q = quasi_equilibrium_lifetime(&model, a, fraction, horizon, steps)?;
                out.summary.insert("decay_time".into(), json!(q.decay_time));
                out.summary.insert("revival_time".into(), json!(q.revival_time));
            }
        }
        Mode::Dos => {
            let (disp, grid) = cfg.require(&cfg.dispersion, "dos")?;
            let table = dos_from_dispersion(disp, grid)?;
            out.warnings.extend(table.warnings.iter().cloned());
            out.files.insert("dos.csv".into(), table.to_csv());
            out.summary.insert("points".into(), json!(table.epsilon.len()));
            out.summary.insert("max_root_count".into(), json!(table.root_counts.iter().max()));
        }
    }
    Ok(out)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Writes every output file and `manifest.json` into `dir`. If any write
/// fails, files already written by this call are removed.
pub fn write_outputs(dir: &Path, config_bytes: &[u8], cfg: &RunConfig, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    // output.dir is not echoed
    let mut echo = cfg.file.clone();
    echo.output.dir = None;
    let manifest = json!({
        "tool": "qisim",
        "version": env!("CARGO_PKG_VERSION"),
        "mode": cfg.mode.name(),
        "config_sha256": hex::encode(Sha256::digest(config_bytes)),
        "config": serde_json::to_value(&echo).map_err(|e| Error::Invariant(e.to_string()))?,
        "outputs": outcome.files.keys().collect::<Vec<_>>(),
        "summary": outcome.summary,
        "verdicts": outcome.verdicts,
        "passed": outcome.passed(),
        "warnings": outcome.warnings,
    });
    let manifest = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Invariant(e.to_string()))? + "\n";

    let mut written: Vec<PathBuf> = Vec::new();
    let entries = outcome
        .files
        .iter()
        .map(|(k, v)| (k.as_str(), v.as_bytes()))
        .chain(std::iter::once(("manifest.json", manifest.as_bytes())));
    for (name, bytes) in entries {
        let path = dir.join(name);
        if let Err(e) = write_atomic(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(e);
        }
        written.push(path);
    }
    Ok(())
}
