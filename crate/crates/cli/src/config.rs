//! Sectioned `key = value` run descriptions.
//!
//! ```text
//! [model]
//! kind = sis
//! alpha = 1
//! beta = 0.5
//! kernel = quadabs gamma=0.5
//!
//! [grid]
//! lo = -1.7
//! hi = 1.7
//! n = 340
//!
//! [init]
//! S = indicator lo=-0.5 hi=0.5 value=0.4
//! I = indicator lo=-0.1 hi=0.1 value=0.25
//!
//! [solver]
//! t_final = 15
//! dt = 0.001
//! ```
//!
//! `#` starts a comment. Unknown sections and keys are errors. In 2D, every
//! per-axis value is a comma-separated pair.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use nonlocal_sir::kernels::tabulated_from_csv;
use nonlocal_sir::solver::CflPolicy;
use nonlocal_sir::{
    build_grid, make_generic, make_sir, make_sis, project_function, Field, GenericReaction, Grid,
    Interaction, KernelMatrix, KernelSpec, ModelSpec, RkScheme, SolverConfig, State, TimeStep,
};
use thiserror::Error;

use crate::output::fmt_num;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },
}

impl ConfigError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        ConfigError::Parse {
            line,
            message: message.into(),
        }
    }

    fn invalid(field: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Sir,
    Sis,
    Generic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelDef {
    QuadAbs { gamma: f64 },
    Gaussian {
        amplitude: f64,
        sigma: f64,
        interaction: Interaction,
    },
    Zero,
    /// CSV table, resolved relative to the config file.
    Table { path: String },
}

/// Linear flow `rate · u_from` from one compartment to another.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: String,
    pub to: String,
    pub rate: f64,
}

/// Mass-action flow `rate · u_from · u_by` from `from` to `to`.
#[derive(Debug, Clone, PartialEq)]
pub struct Incidence {
    pub from: String,
    pub to: String,
    pub by: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Declared names for generic models; fixed for SIR and SIS.
    pub compartments: Vec<String>,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    /// Kernel for every pair not listed in `pair_kernels`.
    pub kernel: Option<KernelDef>,
    pub pair_kernels: Vec<(String, String, KernelDef)>,
    pub transitions: Vec<Transition>,
    pub incidences: Vec<Incidence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSection {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Indicator { lo: Vec<f64>, hi: Vec<f64>, value: f64 },
    /// Normalised Gaussian carrying `mass`.
    Gaussian { center: Vec<f64>, width: f64, mass: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub t_final: f64,
    pub step: TimeStep,
    pub rk: RkScheme,
    pub snapshot_every: usize,
    pub cfl_policy: CflPolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub directory: String,
    pub prefix: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudySection {
    pub eps: Vec<f64>,
    pub dx: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    /// Initial profile per compartment; unlisted compartments start at zero.
    pub init: Vec<(String, Profile)>,
    pub solver: SolverSection,
    pub output: OutputSection,
    pub study: StudySection,
}

/// Everything needed to start a run.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: ModelSpec,
    pub grid: Grid,
    pub init: State,
    pub solver: SolverConfig,
}

const SECTIONS: [&str; 6] = ["model", "grid", "init", "solver", "output", "study"];

struct Entry {
    line: usize,
    section: String,
    key: String,
    value: String,
}

fn tokenize(text: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    let mut section: Option<String> = None;
    let mut seen = HashSet::new();
    let mut seen_sections = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::parse(line, "unterminated section header"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::parse(line, format!("unknown section [{name}]")));
            }
            if !seen_sections.insert(name.to_string()) {
                return Err(ConfigError::parse(line, format!("duplicate section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::parse(line, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::parse(line, "empty key"));
        }
        let section = section
            .clone()
            .ok_or_else(|| ConfigError::parse(line, "key outside of any section"))?;
        if !seen.insert((section.clone(), key.to_string())) {
            return Err(ConfigError::parse(line, format!("duplicate key `{key}`")));
        }
        entries.push(Entry {
            line,
            section,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(entries)
}

fn parse_f64(line: usize, key: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| ConfigError::parse(line, format!("`{key}`: expected a number, got `{s}`")))?;
    if !v.is_finite() {
        return Err(ConfigError::parse(line, format!("`{key}`: value must be finite")));
    }
    Ok(v)
}

fn parse_usize(line: usize, key: &str, s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| ConfigError::parse(line, format!("`{key}`: expected a non-negative integer, got `{s}`")))
}

fn parse_list<T>(line: usize, key: &str, s: &str, item: fn(usize, &str, &str) -> Result<T>) -> Result<Vec<T>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| item(line, key, p)).collect()
}

fn check_name(line: usize, name: &str) -> Result<()> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(ConfigError::parse(
            line,
            format!("compartment names must be alphanumeric, got `{name}`"),
        ));
    }
    Ok(())
}

/// Splits `head k=v k=v` into the head word and its parameters, rejecting
/// duplicates.
fn parse_call<'a>(line: usize, s: &'a str) -> Result<(&'a str, Vec<(&'a str, &'a str)>)> {
    let mut words = s.split_whitespace();
    let head = words
        .next()
        .ok_or_else(|| ConfigError::parse(line, "empty value"))?;
    let mut params: Vec<(&str, &str)> = Vec::new();
    for w in words {
        let (k, v) = w
            .split_once('=')
            .ok_or_else(|| ConfigError::parse(line, format!("expected `name=value`, got `{w}`")))?;
        if params.iter().any(|(p, _)| *p == k) {
            return Err(ConfigError::parse(line, format!("duplicate parameter `{k}`")));
        }
        params.push((k, v));
    }
    Ok((head, params))
}

struct Params<'a> {
    line: usize,
    head: &'a str,
    items: Vec<(&'a str, &'a str)>,
}

impl<'a> Params<'a> {
    fn take(&mut self, name: &str) -> Result<&'a str> {
        let pos = self
            .items
            .iter()
            .position(|(k, _)| *k == name)
            .ok_or_else(|| ConfigError::parse(self.line, format!("`{}` needs `{name}=`", self.head)))?;
        Ok(self.items.remove(pos).1)
    }

    fn num(&mut self, name: &str) -> Result<f64> {
        let v = self.take(name)?;
        parse_f64(self.line, name, v)
    }

    fn nums(&mut self, name: &str) -> Result<Vec<f64>> {
        let v = self.take(name)?;
        parse_list(self.line, name, v, parse_f64)
    }

    fn finish(self) -> Result<()> {
        match self.items.first() {
            Some((k, _)) => Err(ConfigError::parse(
                self.line,
                format!("unknown parameter `{k}` for `{}`", self.head),
            )),
            None => Ok(()),
        }
    }
}

fn parse_kernel(line: usize, s: &str) -> Result<KernelDef> {
    let (head, items) = parse_call(line, s)?;
    let mut p = Params { line, head, items };
    let def = match head {
        "quadabs" => KernelDef::QuadAbs { gamma: p.num("gamma")? },
        "gaussian" => {
            let amplitude = p.num("amplitude")?;
            let sigma = p.num("sigma")?;
            let interaction = match p.take("interaction")? {
                "attractive" => Interaction::Attractive,
                "repulsive" => Interaction::Repulsive,
                other => {
                    return Err(ConfigError::parse(
                        line,
                        format!("interaction must be attractive or repulsive, got `{other}`"),
                    ))
                }
            };
            KernelDef::Gaussian {
                amplitude,
                sigma,
                interaction,
            }
        }
        "zero" => KernelDef::Zero,
        "table" => KernelDef::Table {
            path: p.take("path")?.to_string(),
        },
        other => return Err(ConfigError::parse(line, format!("unknown kernel `{other}`"))),
    };
    p.finish()?;
    Ok(def)
}

fn parse_profile(line: usize, s: &str) -> Result<Profile> {
    let (head, items) = parse_call(line, s)?;
    let mut p = Params { line, head, items };
    let profile = match head {
        "indicator" => Profile::Indicator {
            lo: p.nums("lo")?,
            hi: p.nums("hi")?,
            value: p.num("value")?,
        },
        "gaussian" => Profile::Gaussian {
            center: p.nums("center")?,
            width: p.num("width")?,
            mass: p.num("mass")?,
        },
        "constant" => Profile::Constant { value: p.num("value")? },
        other => return Err(ConfigError::parse(line, format!("unknown profile `{other}`"))),
    };
    p.finish()?;
    Ok(profile)
}

#[derive(Default)]
struct Draft {
    kind: Option<ModelKind>,
    compartments: Option<Vec<String>>,
    alpha: Option<(usize, f64)>,
    beta: Option<(usize, f64)>,
    epsilon: f64,
    kernel: Option<KernelDef>,
    pair_kernels: Vec<(usize, String, String, KernelDef)>,
    transitions: Vec<(usize, Transition)>,
    incidences: Vec<(usize, Incidence)>,
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
    n: Option<Vec<usize>>,
    dim: Option<(usize, usize)>,
    init: Vec<(usize, String, Profile)>,
    t_final: Option<f64>,
    dt: Option<(usize, f64)>,
    cfl: Option<(usize, f64)>,
    rk: RkScheme,
    snapshot_every: usize,
    cfl_policy: CflPolicy,
    directory: Option<String>,
    prefix: Option<String>,
    study: StudySection,
}

fn dotted<'a>(line: usize, key: &'a str, prefix: &str, parts: usize) -> Result<Option<Vec<&'a str>>> {
    let Some(rest) = key.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')) else {
        return Ok(None);
    };
    let names: Vec<&str> = rest.split('.').collect();
    if names.len() != parts {
        return Err(ConfigError::parse(
            line,
            format!("`{prefix}` keys take {parts} compartment names, got `{key}`"),
        ));
    }
    for n in &names {
        check_name(line, n)?;
    }
    Ok(Some(names))
}

fn apply(d: &mut Draft, e: &Entry) -> Result<()> {
    let (line, key, value) = (e.line, e.key.as_str(), e.value.as_str());
    let unknown = || ConfigError::parse(line, format!("unknown key `{key}` in [{}]", e.section));
    match e.section.as_str() {
        "model" => match key {
            "kind" => {
                d.kind = Some(match value {
                    "sir" => ModelKind::Sir,
                    "sis" => ModelKind::Sis,
                    "generic" => ModelKind::Generic,
                    other => {
                        return Err(ConfigError::parse(
                            line,
                            format!("kind must be sir, sis or generic, got `{other}`"),
                        ))
                    }
                })
            }
            "compartments" => {
                let names: Vec<String> = value.split(',').map(|s| s.trim().to_string()).collect();
                for n in &names {
                    check_name(line, n)?;
                }
                d.compartments = Some(names);
            }
            "alpha" => d.alpha = Some((line, parse_f64(line, key, value)?)),
            "beta" => d.beta = Some((line, parse_f64(line, key, value)?)),
            "epsilon" => d.epsilon = parse_f64(line, key, value)?,
            "kernel" => d.kernel = Some(parse_kernel(line, value)?),
            _ => {
                if let Some(n) = dotted(line, key, "kernel", 2)? {
                    let def = parse_kernel(line, value)?;
                    d.pair_kernels.push((line, n[0].into(), n[1].into(), def));
                } else if let Some(n) = dotted(line, key, "transition", 2)? {
                    let t = Transition {
                        from: n[0].into(),
                        to: n[1].into(),
                        rate: parse_f64(line, key, value)?,
                    };
                    d.transitions.push((line, t));
                } else if let Some(n) = dotted(line, key, "incidence", 3)? {
                    let i = Incidence {
                        from: n[0].into(),
                        to: n[1].into(),
                        by: n[2].into(),
                        rate: parse_f64(line, key, value)?,
                    };
                    d.incidences.push((line, i));
                } else {
                    return Err(unknown());
                }
            }
        },
        "grid" => match key {
            "lo" => d.lo = Some(parse_list(line, key, value, parse_f64)?),
            "hi" => d.hi = Some(parse_list(line, key, value, parse_f64)?),
            "n" => d.n = Some(parse_list(line, key, value, parse_usize)?),
            "dim" => d.dim = Some((line, parse_usize(line, key, value)?)),
            _ => return Err(unknown()),
        },
        "init" => {
            check_name(line, key)?;
            d.init.push((line, key.to_string(), parse_profile(line, value)?));
        }
        "solver" => match key {
            "t_final" => d.t_final = Some(parse_f64(line, key, value)?),
            "dt" => d.dt = Some((line, parse_f64(line, key, value)?)),
            "cfl" => d.cfl = Some((line, parse_f64(line, key, value)?)),
            "rk" => {
                d.rk = match value {
                    "ssp2" => RkScheme::Ssp2,
                    "ssp3" => RkScheme::Ssp3,
                    other => {
                        return Err(ConfigError::parse(line, format!("rk must be ssp2 or ssp3, got `{other}`")))
                    }
                }
            }
            "snapshot_every" => d.snapshot_every = parse_usize(line, key, value)?,
            "cfl_policy" => {
                d.cfl_policy = match value {
                    "strict" => CflPolicy::Strict,
                    "permissive" => CflPolicy::Permissive,
                    other => {
                        return Err(ConfigError::parse(
                            line,
                            format!("cfl_policy must be strict or permissive, got `{other}`"),
                        ))
                    }
                }
            }
            _ => return Err(unknown()),
        },
        "output" => match key {
            "directory" => d.directory = Some(value.to_string()),
            "prefix" => {
                check_name(line, value)?;
                d.prefix = Some(value.to_string());
            }
            _ => return Err(unknown()),
        },
        "study" => match key {
            "eps" => d.study.eps = parse_list(line, key, value, parse_f64)?,
            "dx" => d.study.dx = parse_list(line, key, value, parse_f64)?,
            _ => return Err(unknown()),
        },
        _ => unreachable!("sections are checked while tokenizing"),
    }
    Ok(())
}

fn finish(d: Draft) -> Result<RunConfig> {
    let kind = d
        .kind
        .ok_or_else(|| ConfigError::invalid("model.kind", "missing"))?;
    let compartments: Vec<String> = match (kind, d.compartments) {
        (ModelKind::Generic, Some(c)) => c,
        (ModelKind::Generic, None) => {
            return Err(ConfigError::invalid("model.compartments", "required for generic models"))
        }
        (_, Some(_)) => {
            return Err(ConfigError::invalid(
                "model.compartments",
                "only generic models declare compartments",
            ))
        }
        (ModelKind::Sir, None) => vec!["S".into(), "I".into(), "R".into()],
        (ModelKind::Sis, None) => vec!["S".into(), "I".into()],
    };
    let known = |line: usize, name: &str| -> Result<()> {
        if compartments.iter().any(|c| c == name) {
            Ok(())
        } else {
            Err(ConfigError::parse(line, format!("unknown compartment `{name}`")))
        }
    };
    let (alpha, beta) = match kind {
        ModelKind::Generic => {
            if let Some((line, _)) = d.alpha.or(d.beta) {
                return Err(ConfigError::parse(
                    line,
                    "generic models take transition/incidence rates, not alpha/beta",
                ));
            }
            (0.0, 0.0)
        }
        _ => {
            if let Some((line, _)) = d.transitions.first() {
                return Err(ConfigError::parse(*line, "transitions are only allowed in generic models"));
            }
            if let Some((line, _)) = d.incidences.first() {
                return Err(ConfigError::parse(*line, "incidences are only allowed in generic models"));
            }
            let alpha = d.alpha.ok_or_else(|| ConfigError::invalid("model.alpha", "missing"))?.1;
            let beta = d.beta.ok_or_else(|| ConfigError::invalid("model.beta", "missing"))?.1;
            (alpha, beta)
        }
    };
    for (line, t) in &d.transitions {
        known(*line, &t.from)?;
        known(*line, &t.to)?;
    }
    for (line, i) in &d.incidences {
        known(*line, &i.from)?;
        known(*line, &i.to)?;
        known(*line, &i.by)?;
    }
    for (line, a, b, _) in &d.pair_kernels {
        known(*line, a)?;
        known(*line, b)?;
    }
    for (line, name, _) in &d.init {
        known(*line, name)?;
    }
    let lo = d.lo.ok_or_else(|| ConfigError::invalid("grid.lo", "missing"))?;
    let hi = d.hi.ok_or_else(|| ConfigError::invalid("grid.hi", "missing"))?;
    let n = d.n.ok_or_else(|| ConfigError::invalid("grid.n", "missing"))?;
    if let Some((line, dim)) = d.dim {
        if dim != lo.len() {
            return Err(ConfigError::parse(
                line,
                format!("dim = {dim} but lo has {} values", lo.len()),
            ));
        }
    }
    let step = match (d.dt, d.cfl) {
        (Some(_), Some((line, _))) => {
            return Err(ConfigError::parse(line, "give either dt or cfl, not both"))
        }
        (Some((_, dt)), None) => TimeStep::Fixed(dt),
        (None, Some((_, c))) => TimeStep::Cfl(c),
        (None, None) => return Err(ConfigError::invalid("solver.dt", "missing dt or cfl")),
    };
    let t_final = d
        .t_final
        .ok_or_else(|| ConfigError::invalid("solver.t_final", "missing"))?;
    let config = RunConfig {
        model: ModelSection {
            kind,
            compartments,
            alpha,
            beta,
            epsilon: d.epsilon,
            kernel: d.kernel,
            pair_kernels: d.pair_kernels.into_iter().map(|(_, a, b, k)| (a, b, k)).collect(),
            transitions: d.transitions.into_iter().map(|(_, t)| t).collect(),
            incidences: d.incidences.into_iter().map(|(_, i)| i).collect(),
        },
        grid: GridSection { lo, hi, n },
        init: d.init.into_iter().map(|(_, n, p)| (n, p)).collect(),
        solver: SolverSection {
            t_final,
            step,
            rk: d.rk,
            snapshot_every: d.snapshot_every,
            cfl_policy: d.cfl_policy,
        },
        output: OutputSection {
            directory: d.directory.unwrap_or_else(|| ".".into()),
            prefix: d.prefix.unwrap_or_else(|| "run".into()),
        },
        study: d.study,
    };
    config.validate()?;
    Ok(config)
}

/// Parses and validates a run description.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut draft = Draft::default();
    for entry in tokenize(text)? {
        apply(&mut draft, &entry)?;
    }
    finish(draft)
}

fn core_err(field: &str) -> impl Fn(nonlocal_sir::Error) -> ConfigError + '_ {
    move |e| ConfigError::invalid(field, e)
}

impl KernelDef {
    fn to_spec(&self, base: &Path) -> Result<KernelSpec> {
        let spec = match self {
            KernelDef::QuadAbs { gamma } => KernelSpec::QuadAbs { gamma: *gamma },
            KernelDef::Gaussian {
                amplitude,
                sigma,
                interaction,
            } => KernelSpec::Gaussian {
                amplitude: *amplitude,
                sigma: *sigma,
                interaction: *interaction,
            },
            KernelDef::Zero => KernelSpec::Zero,
            KernelDef::Table { path } => {
                let full = base.join(path);
                let file = File::open(&full)
                    .map_err(|e| ConfigError::invalid("model.kernel", format!("{}: {e}", full.display())))?;
                KernelSpec::Tabulated(tabulated_from_csv(file).map_err(core_err("model.kernel"))?)
            }
        };
        Ok(spec)
    }
}

impl Profile {
    fn sample(&self, grid: &Grid) -> std::result::Result<Field, nonlocal_sir::Error> {
        let dim = grid.dim();
        match self {
            Profile::Indicator { lo, hi, value } => project_function(grid, |x| {
                let inside = (0..dim).all(|a| x[a] >= lo[a] && x[a] <= hi[a]);
                if inside {
                    *value
                } else {
                    0.0
                }
            }),
            Profile::Gaussian { center, width, mass } => {
                let norm = mass / (2.0 * std::f64::consts::PI * width * width).powf(dim as f64 / 2.0);
                project_function(grid, |x| {
                    let r2: f64 = (0..dim).map(|a| (x[a] - center[a]).powi(2)).sum();
                    norm * (-r2 / (2.0 * width * width)).exp()
                })
            }
            Profile::Constant { value } => project_function(grid, |_| *value),
        }
    }

    fn check(&self, dim: usize, field: &str) -> Result<()> {
        let axes = |name: &str, v: &[f64]| {
            if v.len() != dim {
                Err(ConfigError::invalid(
                    field,
                    format!("`{name}` needs {dim} value(s), got {}", v.len()),
                ))
            } else {
                Ok(())
            }
        };
        match self {
            Profile::Indicator { lo, hi, value } => {
                axes("lo", lo)?;
                axes("hi", hi)?;
                if lo.iter().zip(hi).any(|(a, b)| b <= a) {
                    return Err(ConfigError::invalid(field, "indicator needs hi > lo"));
                }
                if *value < 0.0 {
                    return Err(ConfigError::invalid(field, "densities must be non-negative"));
                }
            }
            Profile::Gaussian { center, width, mass } => {
                axes("center", center)?;
                if *width <= 0.0 {
                    return Err(ConfigError::invalid(field, "width must be positive"));
                }
                if *mass < 0.0 {
                    return Err(ConfigError::invalid(field, "mass must be non-negative"));
                }
            }
            Profile::Constant { value } => {
                if *value < 0.0 {
                    return Err(ConfigError::invalid(field, "densities must be non-negative"));
                }
            }
        }
        Ok(())
    }
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.kind != ModelKind::Generic {
            if !(m.alpha > 0.0) {
                return Err(ConfigError::invalid("model.alpha", format!("must be positive, got {}", m.alpha)));
            }
            if m.beta < 0.0 {
                return Err(ConfigError::invalid("model.beta", format!("must be non-negative, got {}", m.beta)));
            }
        }
        if m.epsilon < 0.0 {
            return Err(ConfigError::invalid("model.epsilon", format!("must be non-negative, got {}", m.epsilon)));
        }
        for t in &m.transitions {
            if t.rate < 0.0 {
                return Err(ConfigError::invalid(
                    format!("model.transition.{}.{}", t.from, t.to),
                    "rates must be non-negative",
                ));
            }
        }
        for i in &m.incidences {
            if i.rate < 0.0 {
                return Err(ConfigError::invalid(
                    format!("model.incidence.{}.{}.{}", i.from, i.to, i.by),
                    "rates must be non-negative",
                ));
            }
        }
        let mut pairs = HashSet::new();
        for (a, b, _) in &m.pair_kernels {
            if !pairs.insert((a, b)) {
                return Err(ConfigError::invalid(format!("model.kernel.{a}.{b}"), "given twice"));
            }
        }
        if m.kernel.is_none() && pairs.len() < m.compartments.len().pow(2) {
            return Err(ConfigError::invalid(
                "model.kernel",
                "give a default `kernel` or one `kernel.X.Y` per pair",
            ));
        }
        let mut names = HashSet::new();
        for c in &m.compartments {
            if !names.insert(c) {
                return Err(ConfigError::invalid("model.compartments", format!("`{c}` listed twice")));
            }
        }
        let dim = self.grid.lo.len();
        if !(1..=2).contains(&dim) || self.grid.hi.len() != dim || self.grid.n.len() != dim {
            return Err(ConfigError::invalid(
                "grid",
                "lo, hi and n need one value per axis, in one or two dimensions",
            ));
        }
        build_grid(&self.grid.lo, &self.grid.hi, &self.grid.n).map_err(core_err("grid"))?;
        let mut seen = HashSet::new();
        for (name, profile) in &self.init {
            if !seen.insert(name) {
                return Err(ConfigError::invalid(format!("init.{name}"), "given twice"));
            }
            profile.check(dim, &format!("init.{name}"))?;
        }
        self.solver_config().validate().map_err(core_err("solver"))?;
        for (field, list) in [("study.eps", &self.study.eps), ("study.dx", &self.study.dx)] {
            if list.iter().any(|v| *v < 0.0) {
                return Err(ConfigError::invalid(field, "values must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.grid.lo.len()
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            t_final: self.solver.t_final,
            step: self.solver.step,
            rk: self.solver.rk,
            snapshot_every: self.solver.snapshot_every,
            boundary: Default::default(),
            cfl_policy: self.solver.cfl_policy,
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        build_grid(&self.grid.lo, &self.grid.hi, &self.grid.n).map_err(core_err("grid"))
    }

    /// Builds the model; table paths are resolved against `base`.
    pub fn model(&self, base: &Path) -> Result<ModelSpec> {
        let m = &self.model;
        let names = &m.compartments;
        let rows = names
            .iter()
            .map(|a| {
                names
                    .iter()
                    .map(|b| {
                        let def = m
                            .pair_kernels
                            .iter()
                            .find(|(x, y, _)| x == a && y == b)
                            .map(|(_, _, k)| k)
                            .or(m.kernel.as_ref())
                            .expect("kernel coverage is validated");
                        def.to_spec(base)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let km = KernelMatrix::from_rows(names, rows).map_err(core_err("model.kernel"))?;
        let model = match m.kind {
            ModelKind::Sir => make_sir(m.alpha, m.beta, km, m.epsilon),
            ModelKind::Sis => {
                if !km.is_shared() {
                    return Err(ConfigError::invalid("model.kernel", "SIS models use one shared kernel"));
                }
                let shared = km.get(0, 0).clone();
                make_sis(m.alpha, m.beta, shared, m.epsilon)
            }
            ModelKind::Generic => {
                let index = |n: &str| names.iter().position(|c| c == n).expect("names are validated");
                let transitions: Vec<(usize, usize, f64)> = m
                    .transitions
                    .iter()
                    .map(|t| (index(&t.from), index(&t.to), t.rate))
                    .collect();
                let incidences: Vec<(usize, usize, usize, f64)> = m
                    .incidences
                    .iter()
                    .map(|i| (index(&i.from), index(&i.to), index(&i.by), i.rate))
                    .collect();
                let reaction = GenericReaction::new(names.len(), move |u, out| {
                    out.fill(0.0);
                    for &(a, b, r) in &transitions {
                        let flow = r * u[a];
                        out[a] -= flow;
                        out[b] += flow;
                    }
                    for &(a, b, c, r) in &incidences {
                        let flow = r * u[a] * u[c];
                        out[a] -= flow;
                        out[b] += flow;
                    }
                })
                .map_err(core_err("model"))?;
                make_generic(km, reaction, m.epsilon)
            }
        };
        model.map_err(|e| match e {
            nonlocal_sir::Error::NegativeRate { name, .. } => ConfigError::invalid(format!("model.{name}"), e),
            nonlocal_sir::Error::NonPositiveAlpha(_) => ConfigError::invalid("model.alpha", e),
            other => ConfigError::invalid("model", other),
        })
    }

    /// Samples the initial profiles on `grid`.
    pub fn initial_state(&self, grid: &Grid) -> Result<State> {
        let fields = self
            .model
            .compartments
            .iter()
            .map(|name| match self.init.iter().find(|(n, _)| n == name) {
                Some((_, p)) => p.sample(grid).map_err(core_err(&format!("init.{name}"))),
                None => Ok(Field::zeros(grid)),
            })
            .collect::<Result<Vec<_>>>()?;
        State::physical(0.0, fields).map_err(core_err("init"))
    }

    pub fn setup(&self, base: &Path) -> Result<Setup> {
        let grid = self.grid()?;
        let model = self.model(base)?;
        if !model.kernels().supports_dim(grid.dim()) {
            return Err(ConfigError::invalid(
                "model.kernel",
                format!("a kernel does not support {}D grids", grid.dim()),
            ));
        }
        Ok(Setup {
            init: self.initial_state(&grid)?,
            solver: self.solver_config(),
            model,
            grid,
        })
    }

    /// Output directory, placed under `root` when given.
    pub fn output_dir(&self, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) => r.join(&self.output.directory),
            None => PathBuf::from(&self.output.directory),
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(",")
}

impl fmt::Display for KernelDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelDef::QuadAbs { gamma } => write!(f, "quadabs gamma={}", fmt_num(*gamma)),
            KernelDef::Gaussian {
                amplitude,
                sigma,
                interaction,
            } => write!(
                f,
                "gaussian amplitude={} sigma={} interaction={}",
                fmt_num(*amplitude),
                fmt_num(*sigma),
                match interaction {
                    Interaction::Attractive => "attractive",
                    Interaction::Repulsive => "repulsive",
                }
            ),
            KernelDef::Zero => write!(f, "zero"),
            KernelDef::Table { path } => write!(f, "table path={path}"),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Profile::Indicator { lo, hi, value } => {
                write!(f, "indicator lo={} hi={} value={}", join(lo), join(hi), fmt_num(*value))
            }
            Profile::Gaussian { center, width, mass } => write!(
                f,
                "gaussian center={} width={} mass={}",
                join(center),
                fmt_num(*width),
                fmt_num(*mass)
            ),
            Profile::Constant { value } => write!(f, "constant value={}", fmt_num(*value)),
        }
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = &self.model;
        writeln!(f, "[model]")?;
        let kind = match m.kind {
            ModelKind::Sir => "sir",
            ModelKind::Sis => "sis",
            ModelKind::Generic => "generic",
        };
        writeln!(f, "kind = {kind}")?;
        if m.kind == ModelKind::Generic {
            writeln!(f, "compartments = {}", m.compartments.join(","))?;
        } else {
            writeln!(f, "alpha = {}", fmt_num(m.alpha))?;
            writeln!(f, "beta = {}", fmt_num(m.beta))?;
        }
        writeln!(f, "epsilon = {}", fmt_num(m.epsilon))?;
        if let Some(k) = &m.kernel {
            writeln!(f, "kernel = {k}")?;
        }
        for (a, b, k) in &m.pair_kernels {
            writeln!(f, "kernel.{a}.{b} = {k}")?;
        }
        for t in &m.transitions {
            writeln!(f, "transition.{}.{} = {}", t.from, t.to, fmt_num(t.rate))?;
        }
        for i in &m.incidences {
            writeln!(f, "incidence.{}.{}.{} = {}", i.from, i.to, i.by, fmt_num(i.rate))?;
        }
        writeln!(f, "\n[grid]")?;
        writeln!(f, "dim = {}", self.dim())?;
        writeln!(f, "lo = {}", join(&self.grid.lo))?;
        writeln!(f, "hi = {}", join(&self.grid.hi))?;
        let n: Vec<String> = self.grid.n.iter().map(usize::to_string).collect();
        writeln!(f, "n = {}", n.join(","))?;
        writeln!(f, "\n[init]")?;
        for (name, p) in &self.init {
            writeln!(f, "{name} = {p}")?;
        }
        let s = &self.solver;
        writeln!(f, "\n[solver]")?;
        writeln!(f, "t_final = {}", fmt_num(s.t_final))?;
        match s.step {
            TimeStep::Fixed(dt) => writeln!(f, "dt = {}", fmt_num(dt))?,
            TimeStep::Cfl(c) => writeln!(f, "cfl = {}", fmt_num(c))?,
        }
        let rk = match s.rk {
            RkScheme::Ssp2 => "ssp2",
            RkScheme::Ssp3 => "ssp3",
        };
        writeln!(f, "rk = {rk}")?;
        writeln!(f, "snapshot_every = {}", s.snapshot_every)?;
        let policy = match s.cfl_policy {
            CflPolicy::Strict => "strict",
            CflPolicy::Permissive => "permissive",
        };
        writeln!(f, "cfl_policy = {policy}")?;
        writeln!(f, "\n[output]")?;
        writeln!(f, "directory = {}", self.output.directory)?;
        writeln!(f, "prefix = {}", self.output.prefix)?;
        if !self.study.eps.is_empty() || !self.study.dx.is_empty() {
            writeln!(f, "\n[study]")?;
            if !self.study.eps.is_empty() {
                writeln!(f, "eps = {}", join(&self.study.eps))?;
            }
            if !self.study.dx.is_empty() {
                writeln!(f, "dx = {}", join(&self.study.dx))?;
            }
        }
        Ok(())
    }
}
