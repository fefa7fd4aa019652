//! `run`, `study` and `equilibria` subcommands.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nonlocal_sir::diagnostics::{refinement_order, viscosity_study, Order};
use nonlocal_sir::equilibria::{analytic_steady_states, center_of_mass, support_width, EquilibriumReport, SUPPORT_THRESHOLD};
use nonlocal_sir::solver::RunSummary;
use nonlocal_sir::{Error, Solver, State};
use thiserror::Error;

use crate::config::{parse_config, ConfigError, RunConfig};
use crate::output::{fmt_num, mass_lines, write_diagnostics, write_summary, write_table, SnapshotWriter};

/// Environment variable that relocates every output directory.
pub const OUTPUT_ROOT_VAR: &str = "NLSIR_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Validation(String),
    #[error("solver aborted: {0}")]
    Abort(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Abort(_) => 2,
            _ => 1,
        }
    }

    fn io(context: impl Into<String>) -> impl FnOnce(io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }
}

fn classify(e: Error) -> CliError {
    match e {
        Error::CflViolation { .. } | Error::NonFiniteState { .. } | Error::NegativeDensity { .. } => {
            CliError::Abort(e.to_string())
        }
        other => CliError::Validation(other.to_string()),
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// A parsed config with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base: PathBuf,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(CliError::io(path.display().to_string()))?;
    let config = parse_config(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, base })
}

fn output_root() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from)
}

/// Files produced by a run.
#[derive(Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub diagnostics: PathBuf,
    pub summary: PathBuf,
    pub final_state: State,
    pub run: RunSummary,
    pub equilibrium: Option<EquilibriumReport>,
}

/// Equilibrium report for shared-`QuadAbs` SIS runs in 1D, keyed off the
/// initial mass and center of mass.
fn equilibrium_for(loaded: &LoadedConfig, init: &State) -> Option<EquilibriumReport> {
    let m = &loaded.config.model;
    if init.grid().dim() != 1 {
        return None;
    }
    let model = loaded.config.model(&loaded.base).ok()?;
    let gamma = model.shared_quadabs_sis_gamma()?;
    let n = init.total_density();
    let mass: f64 = nonlocal_sir::diagnostics::total_mass(init.grid(), &n);
    let center = center_of_mass(&n)?;
    analytic_steady_states(mass, m.alpha, m.beta, gamma, center).ok()
}

pub fn cmd_run(loaded: &LoadedConfig) -> Result<RunArtifacts> {
    cmd_run_in(loaded, output_root().as_deref())
}

/// [`cmd_run`] with an explicit output root.
pub fn cmd_run_in(loaded: &LoadedConfig, root: Option<&Path>) -> Result<RunArtifacts> {
    let cfg = &loaded.config;
    let setup = cfg.setup(&loaded.base)?;
    let solver = Solver::new(&setup.model, &setup.grid, setup.solver).map_err(classify)?;
    let dir = cfg.output_dir(root);
    let names = setup.model.compartments().to_vec();
    let mut writer = SnapshotWriter::new(&dir, &cfg.output.prefix, &names)
        .map_err(CliError::io(dir.display().to_string()))?;
    let outcome = solver.run(&setup.init, &mut [&mut writer]).map_err(classify)?;
    if let Some(e) = writer.error.take() {
        return Err(CliError::Io {
            context: "writing snapshots".into(),
            source: e,
        });
    }
    let prefix = &cfg.output.prefix;
    let diagnostics = dir.join(format!("{prefix}_diagnostics.csv"));
    write_diagnostics(&diagnostics, &names, &writer.series)
        .map_err(CliError::io(diagnostics.display().to_string()))?;

    let s = &outcome.summary;
    let fin = &outcome.state;
    let grid = setup.grid;
    let mut lines: Vec<(String, String)> = Vec::new();
    let status = match (&s.abort, writer.aborted_at) {
        (Some(e), step) => format!("ABORTED at step {}: {e}", step.unwrap_or(s.steps)),
        (None, _) => "ok".to_string(),
    };
    lines.push(("status".into(), status));
    lines.push(("prefix".into(), prefix.clone()));
    lines.push(("compartments".into(), names.join(",")));
    lines.push(("dim".into(), grid.dim().to_string()));
    for a in 0..grid.dim() {
        lines.push((format!("domain_{a}"), format!("{},{}", fmt_num(grid.lo(a)), fmt_num(grid.hi(a)))));
        lines.push((format!("cells_{a}"), grid.n(a).to_string()));
        lines.push((format!("dx_{a}"), fmt_num(grid.dx(a))));
    }
    lines.push(("epsilon".into(), fmt_num(setup.model.epsilon())));
    lines.push(("t_final".into(), fmt_num(fin.time())));
    lines.push(("steps".into(), s.steps.to_string()));
    lines.push(("initial_mass".into(), fmt_num(s.initial_mass)));
    lines.push(("final_mass".into(), fmt_num(s.final_mass)));
    lines.push(("max_relative_mass_drift".into(), fmt_num(s.max_mass_drift)));
    lines.push(("min_value".into(), fmt_num(s.min_value)));
    lines.push(("max_linf".into(), fmt_num(s.max_linf)));
    lines.push(("max_speed".into(), fmt_num(s.max_speed)));
    lines.push(("max_cfl_number".into(), fmt_num(s.max_cfl_number)));
    lines.push(("cfl_warnings".into(), s.cfl_warnings.to_string()));
    lines.extend(mass_lines(&names, &setup.init, "initial"));
    lines.extend(mass_lines(&names, fin, "final"));
    for (n, f) in names.iter().zip(fin.fields()) {
        lines.push((format!("final_linf_{n}"), fmt_num(f.max())));
    }
    lines.push((
        "final_support_width_N".into(),
        fmt_num(support_width(&fin.total_density(), SUPPORT_THRESHOLD)),
    ));
    let equilibrium = equilibrium_for(loaded, &setup.init);
    if let Some(report) = &equilibrium {
        for (k, v) in report.summary_lines() {
            lines.push((format!("equilibrium_{k}"), v));
        }
    }
    let summary = dir.join(format!("{prefix}_summary.txt"));
    write_summary(&summary, &lines).map_err(CliError::io(summary.display().to_string()))?;
    eprintln!(
        "{prefix}: {} steps to t = {} in {:.2?}",
        s.steps,
        fmt_num(fin.time()),
        s.wall_time
    );
    if let Some(e) = &s.abort {
        return Err(CliError::Abort(e.to_string()));
    }
    Ok(RunArtifacts {
        dir,
        snapshots: std::mem::take(&mut writer.written),
        diagnostics,
        summary,
        final_state: outcome.state,
        run: outcome.summary,
        equilibrium,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum StudyKind {
    Refinement,
    Viscosity,
}

/// Study table location and verdict.
#[derive(Debug)]
pub struct StudyArtifacts {
    pub table: PathBuf,
    pub summary: PathBuf,
    pub verdict: String,
}

pub fn cmd_study(loaded: &LoadedConfig, kind: StudyKind) -> Result<StudyArtifacts> {
    cmd_study_in(loaded, kind, output_root().as_deref())
}

pub fn cmd_study_in(loaded: &LoadedConfig, kind: StudyKind, root: Option<&Path>) -> Result<StudyArtifacts> {
    let cfg = &loaded.config;
    let setup = cfg.setup(&loaded.base)?;
    let dir = cfg.output_dir(root);
    fs::create_dir_all(&dir).map_err(CliError::io(dir.display().to_string()))?;
    let prefix = &cfg.output.prefix;
    let names = setup.model.compartments().to_vec();
    let (table, header, rows, lines) = match kind {
        StudyKind::Viscosity => {
            if cfg.study.eps.is_empty() {
                return Err(CliError::Validation("study.eps: empty epsilon list".into()));
            }
            let t = viscosity_study(&setup.model, &setup.init, setup.solver, &cfg.study.eps).map_err(classify)?;
            let mut header = vec!["eps".to_string()];
            header.extend(names.iter().map(|n| format!("l2_distance_{n}")));
            let rows: Vec<Vec<f64>> = t
                .eps
                .iter()
                .zip(&t.distances)
                .map(|(e, d)| std::iter::once(*e).chain(d.iter().copied()).collect())
                .collect();
            let verdict = if t.is_monotone() {
                "monotone-decreasing"
            } else {
                "not-monotone"
            };
            let mut lines = vec![("verdict".to_string(), verdict.to_string())];
            for (n, slope) in names.iter().zip(t.slopes()) {
                let v = slope.map_or_else(|| "n/a".to_string(), fmt_num);
                lines.push((format!("log_slope_{n}"), v));
            }
            (dir.join(format!("{prefix}_viscosity.csv")), header, rows, lines)
        }
        StudyKind::Refinement => {
            if cfg.study.dx.is_empty() {
                return Err(CliError::Validation("study.dx: empty width list".into()));
            }
            let init = |g: &nonlocal_sir::Grid| {
                cfg.initial_state(g)
                    .map_err(|e| Error::InvalidStudy(e.to_string()))
            };
            let r = refinement_order(&setup.model, &init, setup.solver, &setup.grid, &cfg.study.dx)
                .map_err(classify)?;
            let header = vec!["dx".to_string(), "l1_difference".to_string(), "order".to_string()];
            // the finest level has no difference and the first no order
            let rows: Vec<Vec<f64>> = r
                .dx
                .iter()
                .enumerate()
                .map(|(k, dx)| {
                    let diff = r.differences.get(k).copied().unwrap_or(f64::NAN);
                    let order = match k {
                        0 => f64::NAN,
                        _ => r.pairwise_orders.get(k - 1).copied().unwrap_or(f64::NAN),
                    };
                    vec![*dx, diff, order]
                })
                .collect();
            let (verdict, order) = match r.order {
                Order::Exact => ("exact".to_string(), "inf".to_string()),
                Order::Value(p) => (format!("order {}", fmt_num(p)), fmt_num(p)),
            };
            let lines = vec![("verdict".to_string(), verdict), ("order".to_string(), order)];
            (dir.join(format!("{prefix}_refinement.csv")), header, rows, lines)
        }
    };
    write_table(&table, &header, &rows).map_err(CliError::io(table.display().to_string()))?;
    let summary = table.with_extension("txt");
    write_summary(&summary, &lines).map_err(CliError::io(summary.display().to_string()))?;
    Ok(StudyArtifacts {
        table,
        summary,
        verdict: lines[0].1.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    #[default]
    Text,
    Csv,
}

/// Renders the steady-state report for the given parameters.
pub fn cmd_equilibria(mass: f64, alpha: f64, beta: f64, gamma: f64, center: f64, format: Format) -> Result<String> {
    let report =
        analytic_steady_states(mass, alpha, beta, gamma, center).map_err(|e| CliError::Validation(e.to_string()))?;
    let lines = report.summary_lines();
    let out = match format {
        Format::Text => lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect(),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let keys = [
                "mass",
                "gamma",
                "alpha",
                "beta",
                "r0",
                "classification",
                "support_lo",
                "support_hi",
                "disease_free_S",
                "disease_free_I",
                "endemic_S",
                "endemic_I",
            ];
            let value = |k: &str| {
                lines
                    .iter()
                    .find(|(key, _)| key == k)
                    .map_or_else(String::new, |(_, v)| v.clone())
            };
            let emit = |w: &mut csv::Writer<Vec<u8>>| -> csv::Result<()> {
                w.write_record(keys)?;
                w.write_record(keys.iter().map(|k| value(k)))?;
                w.flush()?;
                Ok(())
            };
            emit(&mut w).map_err(|e| CliError::Validation(e.to_string()))?;
            String::from_utf8(w.into_inner().map_err(|e| CliError::Validation(e.to_string()))?)
                .expect("csv output is utf-8")
        }
    };
    Ok(out)
}
