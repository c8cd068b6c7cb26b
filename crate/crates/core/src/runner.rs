//! Scenario configuration, run orchestration and artifact IO.
//!
//! A config is a flat list of `key = value` lines (`#` starts a comment):
//!
//! ```text
//! scenario = riemann_demo
//! flux = burgers,burgers_plus_1
//! initial = riemann:1,-1,0
//! domain = bounded
//! x_min = -1
//! x_max = 1
//! t_end = 0.5
//! ```
//!
//! Initial data specs: `example11`, `constant:c`, `sine:amp`,
//! `riemann:ul,ur[,x0]` and `table:x:u,x:u,...` (piecewise linear through
//! the points; a repeated x makes a jump).

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{l1_series, structural_checks, DiagnosticsError, DiagnosticsReport, Snapshot, Thresholds, Trajectory};
use crate::flux::{split_flux_pair_spec, Branch, FluxError, FluxPair};
use crate::profile::{l1_distance, parse_csv, write_csv, Domain, Node, Profile, ProfileError};
use crate::semigroup::{run_semigroup, run_semigroup_with, DynamicsMode, Event, SemigroupError, SemigroupRun};
use crate::viscous::{run_viscous_at, GridRun, TimeScheme, ViscousError, ViscousParams};

/// Sample count used to build smooth initial data.
const SAMPLES: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid `{key}`: {msg}")]
    Validation { key: String, msg: String },
}

impl ConfigError {
    fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
        ConfigError::Validation { key: key.to_string(), msg: msg.into() }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Flux(#[from] FluxError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Semigroup(#[from] SemigroupError),
    #[error(transparent)]
    Viscous(#[from] ViscousError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Artifact { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// u0 = eˣ for x < 0 and −e⁻ˣ for x > 0 on [−5, 5], sampled at n + 1
/// equally spaced nodes (n even) with the unit downward jump at 0 kept exact.
pub fn example11_profile(n: usize) -> Profile {
    let n = n.max(2) + n % 2;
    let dom = Domain::Bounded { x_min: -5.0, x_max: 5.0 };
    let nodes = (0..=n)
        .map(|k| {
            let x = -5.0 + 10.0 * k as f64 / n as f64;
            if 2 * k == n {
                Node { x: 0.0, u_left: 1.0, u_right: -1.0 }
            } else {
                let u = if x < 0.0 { x.exp() } else { -(-x).exp() };
                Node { x, u_left: u, u_right: u }
            }
        })
        .collect();
    Profile::new(dom, nodes).expect("valid example profile")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Viscous,
    Semigroup,
    Both,
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Solver::Viscous => "viscous",
            Solver::Semigroup => "semigroup",
            Solver::Both => "both",
        })
    }
}

impl FromStr for Solver {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "viscous" => Ok(Solver::Viscous),
            "semigroup" => Ok(Solver::Semigroup),
            "both" => Ok(Solver::Both),
            other => Err(format!("unknown solver `{other}` (viscous | semigroup | both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Example11,
    Constant(f64),
    /// amp · sin(2π (x − lo) / L)
    Sine(f64),
    Riemann { ul: f64, ur: f64, x0: f64 },
    Table(Vec<(f64, f64)>),
}

impl fmt::Display for InitialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialSpec::Example11 => f.write_str("example11"),
            InitialSpec::Constant(c) => write!(f, "constant:{c}"),
            InitialSpec::Sine(a) => write!(f, "sine:{a}"),
            InitialSpec::Riemann { ul, ur, x0 } => write!(f, "riemann:{ul},{ur},{x0}"),
            InitialSpec::Table(pts) => {
                f.write_str("table:")?;
                for (i, (x, u)) in pts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{x}:{u}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for InitialSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let nums = |args: &str| -> Result<Vec<f64>, String> {
            args.split(',').map(|a| a.trim().parse::<f64>().map_err(|e| format!("bad number `{a}`: {e}"))).collect()
        };
        if s == "example11" {
            return Ok(InitialSpec::Example11);
        }
        let (head, args) = s.split_once(':').ok_or_else(|| format!("unknown initial data `{s}`"))?;
        match head {
            "constant" => match nums(args)?.as_slice() {
                [c] => Ok(InitialSpec::Constant(*c)),
                _ => Err("constant takes one value".into()),
            },
            "sine" => match nums(args)?.as_slice() {
                [a] => Ok(InitialSpec::Sine(*a)),
                _ => Err("sine takes one amplitude".into()),
            },
            "riemann" => match nums(args)?.as_slice() {
                [ul, ur] => Ok(InitialSpec::Riemann { ul: *ul, ur: *ur, x0: 0.0 }),
                [ul, ur, x0] => Ok(InitialSpec::Riemann { ul: *ul, ur: *ur, x0: *x0 }),
                _ => Err("riemann takes ul,ur[,x0]".into()),
            },
            "table" => {
                let pts = args
                    .split(',')
                    .map(|pair| {
                        let (x, u) = pair.split_once(':').ok_or_else(|| format!("table entry `{pair}` is not x:u"))?;
                        let x = x.trim().parse::<f64>().map_err(|e| format!("bad x `{x}`: {e}"))?;
                        let u = u.trim().parse::<f64>().map_err(|e| format!("bad u `{u}`: {e}"))?;
                        Ok((x, u))
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                if pts.is_empty() {
                    return Err("empty table".into());
                }
                Ok(InitialSpec::Table(pts))
            }
            other => Err(format!("unknown initial data kind `{other}`")),
        }
    }
}

impl InitialSpec {
    pub fn profile(&self, domain: Domain) -> Result<Profile, ConfigError> {
        let bad = |m: String| ConfigError::invalid("initial", m);
        let (lo, hi) = (domain.lo(), domain.hi());
        match self {
            InitialSpec::Example11 => {
                if domain != (Domain::Bounded { x_min: -5.0, x_max: 5.0 }) {
                    return Err(bad("example11 lives on the bounded domain [-5, 5]".into()));
                }
                Ok(example11_profile(SAMPLES))
            }
            InitialSpec::Constant(c) => Ok(Profile::constant(domain, *c)),
            InitialSpec::Sine(a) => {
                let (a, len) = (*a, domain.length());
                Profile::sample_fn(domain, SAMPLES, |x| a * (2.0 * std::f64::consts::PI * (x - lo) / len).sin()).map_err(|e| bad(e.to_string()))
            }
            InitialSpec::Riemann { ul, ur, x0 } => {
                if domain.is_periodic() {
                    return Err(bad("riemann data needs a bounded domain".into()));
                }
                if !(*x0 > lo && *x0 < hi) {
                    return Err(bad(format!("jump position {x0} outside ({lo}, {hi})")));
                }
                Profile::piecewise_constant(domain, &[*x0], &[*ul, *ur]).map_err(|e| bad(e.to_string()))
            }
            InitialSpec::Table(pts) => {
                if pts.windows(2).any(|w| w[1].0 < w[0].0) {
                    return Err(bad("table x values must be nondecreasing".into()));
                }
                let mut nodes: Vec<Node> = Vec::new();
                for &(x, u) in pts {
                    match nodes.last_mut() {
                        Some(n) if n.x == x => n.u_right = u,
                        _ => nodes.push(Node { x, u_left: u, u_right: u }),
                    }
                }
                if !domain.is_periodic() {
                    let first = nodes[0];
                    if first.x > lo {
                        nodes.insert(0, Node { x: lo, u_left: first.u_left, u_right: first.u_left });
                    }
                    let last = *nodes.last().unwrap();
                    if last.x < hi {
                        nodes.push(Node { x: hi, u_left: last.u_right, u_right: last.u_right });
                    }
                }
                Profile::new(domain, nodes).map_err(|e| bad(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub domain: Domain,
    pub initial: InitialSpec,
    pub flux_f: String,
    pub flux_g: String,
    pub solver: Solver,
    pub epsilon: f64,
    pub delta: f64,
    pub dx: f64,
    pub cfl: f64,
    pub h: f64,
    pub t_end: f64,
    /// Snapshot times; 0 and t_end are always added when running.
    pub snapshots: Vec<f64>,
    /// Refinement levels for `viscous_convergence`.
    pub levels: usize,
    pub out: Option<PathBuf>,
}

pub const DEFAULT_DX: f64 = 1.0 / 400.0;
pub const DEFAULT_H: f64 = 0.02;
pub const DEFAULT_EPS: f64 = 1e-3;
pub const DEFAULT_CFL: f64 = 0.45;

const KEYS: &[&str] = &[
    "scenario", "domain", "x_min", "x_max", "period", "flux", "flux_f", "flux_g", "initial", "solver", "epsilon", "delta", "dx", "cfl", "h",
    "t_end", "snapshots", "levels", "out",
];

/// Parses and validates a config; omitted optional keys get their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut kv: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Parse { line: line_no, msg: format!("expected key = value, got `{line}`") })?;
        let (k, v) = (k.trim(), v.trim());
        let Some(key) = KEYS.iter().find(|&&known| known == k) else {
            return Err(ConfigError::Parse { line: line_no, msg: format!("unknown key `{k}`") });
        };
        if kv.insert(key, (line_no, v)).is_some() {
            return Err(ConfigError::Parse { line: line_no, msg: format!("duplicate key `{k}`") });
        }
    }
    let num = |key: &str| -> Result<Option<f64>, ConfigError> {
        match kv.get(key) {
            None => Ok(None),
            Some(&(line, v)) => v.parse::<f64>().map(Some).map_err(|e| ConfigError::Parse { line, msg: format!("`{key}`: {e}") }),
        }
    };
    let required = |key: &str| kv.get(key).map(|&(_, v)| v.to_string()).ok_or_else(|| ConfigError::invalid(key, "missing"));

    let scenario = required("scenario")?;
    let initial: InitialSpec = {
        let (line, v) = *kv.get("initial").ok_or_else(|| ConfigError::invalid("initial", "missing"))?;
        v.parse().map_err(|msg| ConfigError::Parse { line, msg })?
    };
    let (flux_f, flux_g) = match (kv.get("flux"), kv.get("flux_f"), kv.get("flux_g")) {
        (Some(&(line, v)), None, None) => split_flux_pair_spec(v).map_err(|e| ConfigError::Parse { line, msg: e.to_string() })?,
        (None, Some(&(_, f)), Some(&(_, g))) => (f.to_string(), g.to_string()),
        (None, _, _) => return Err(ConfigError::invalid("flux", "give `flux = f,g` or both `flux_f` and `flux_g`")),
        (Some(_), _, _) => return Err(ConfigError::invalid("flux", "`flux` cannot be combined with `flux_f` / `flux_g`")),
    };
    let domain = match kv.get("domain").map(|&(_, v)| v) {
        Some("periodic") => Domain::Periodic { period: num("period")?.unwrap_or(1.0) },
        Some("bounded") => {
            let (lo, hi) = if initial == InitialSpec::Example11 { (-5.0, 5.0) } else { (-1.0, 1.0) };
            Domain::Bounded { x_min: num("x_min")?.unwrap_or(lo), x_max: num("x_max")?.unwrap_or(hi) }
        }
        None if initial == InitialSpec::Example11 => Domain::Bounded { x_min: -5.0, x_max: 5.0 },
        None => Domain::Periodic { period: num("period")?.unwrap_or(1.0) },
        Some(other) => return Err(ConfigError::invalid("domain", format!("`{other}` (periodic | bounded)"))),
    };
    let solver = match kv.get("solver") {
        None => Solver::Both,
        Some(&(line, v)) => v.parse().map_err(|msg| ConfigError::Parse { line, msg })?,
    };
    let t_end = num("t_end")?.ok_or_else(|| ConfigError::invalid("t_end", "missing"))?;
    let epsilon = num("epsilon")?.unwrap_or(DEFAULT_EPS);
    let snapshots = match kv.get("snapshots") {
        None => (0..=10).map(|k| t_end * k as f64 / 10.0).collect(),
        Some(&(line, v)) => {
            if let Some(every) = v.strip_prefix("every:") {
                let dt: f64 = every.trim().parse().map_err(|e| ConfigError::Parse { line, msg: format!("`snapshots`: {e}") })?;
                if !(dt > 0.0) {
                    return Err(ConfigError::invalid("snapshots", "spacing must be > 0"));
                }
                let n = (t_end / dt + 1e-9).floor() as usize;
                (0..=n).map(|k| k as f64 * dt).collect()
            } else if v.is_empty() {
                vec![]
            } else {
                v.split(',')
                    .map(|s| s.trim().parse::<f64>().map_err(|e| ConfigError::Parse { line, msg: format!("`snapshots`: {e}") }))
                    .collect::<Result<Vec<_>, _>>()?
            }
        }
    };
    let levels = match kv.get("levels") {
        None => 3,
        Some(&(line, v)) => v.parse::<usize>().map_err(|e| ConfigError::Parse { line, msg: format!("`levels`: {e}") })?,
    };
    let cfg = RunConfig {
        scenario,
        domain,
        initial,
        flux_f,
        flux_g,
        solver,
        epsilon,
        delta: num("delta")?.unwrap_or(epsilon),
        dx: num("dx")?.unwrap_or(DEFAULT_DX),
        cfl: num("cfl")?.unwrap_or(DEFAULT_CFL),
        h: num("h")?.unwrap_or(DEFAULT_H),
        t_end,
        snapshots,
        levels,
        out: kv.get("out").map(|&(_, v)| PathBuf::from(v)),
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.scenario.is_empty() || self.scenario.contains(['/', '\\']) {
            return Err(ConfigError::invalid("scenario", "must be a non-empty name without path separators"));
        }
        match self.domain {
            Domain::Periodic { period } if !(period > 0.0 && period.is_finite()) => return Err(ConfigError::invalid("period", "must be > 0")),
            Domain::Bounded { x_min, x_max } if !(x_min < x_max && x_min.is_finite() && x_max.is_finite()) => {
                return Err(ConfigError::invalid("x_max", "need x_min < x_max"))
            }
            _ => {}
        }
        for (key, v) in [("epsilon", self.epsilon), ("delta", self.delta), ("dx", self.dx), ("cfl", self.cfl), ("h", self.h), ("t_end", self.t_end)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid(key, format!("must be positive, got {v}")));
            }
        }
        if self.cfl > 0.9 {
            return Err(ConfigError::invalid("cfl", "must be <= 0.9"));
        }
        if let Some(t) = self.snapshots.iter().find(|&&t| !(0.0..=self.t_end).contains(&t)) {
            return Err(ConfigError::invalid("snapshots", format!("{t} outside [0, t_end]")));
        }
        if self.levels == 0 {
            return Err(ConfigError::invalid("levels", "must be >= 1"));
        }
        crate::flux::Flux::parse(&self.flux_f).map_err(|e| ConfigError::invalid("flux_f", e.to_string()))?;
        crate::flux::Flux::parse(&self.flux_g).map_err(|e| ConfigError::invalid("flux_g", e.to_string()))?;
        self.initial.profile(self.domain)?;
        Ok(())
    }

    /// key = value text that [`parse_config`] maps back to `self`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("scenario", self.scenario.clone());
        match self.domain {
            Domain::Periodic { period } => {
                put("domain", "periodic".into());
                put("period", period.to_string());
            }
            Domain::Bounded { x_min, x_max } => {
                put("domain", "bounded".into());
                put("x_min", x_min.to_string());
                put("x_max", x_max.to_string());
            }
        }
        put("flux_f", self.flux_f.clone());
        put("flux_g", self.flux_g.clone());
        put("initial", self.initial.to_string());
        put("solver", self.solver.to_string());
        put("epsilon", self.epsilon.to_string());
        put("delta", self.delta.to_string());
        put("dx", self.dx.to_string());
        put("cfl", self.cfl.to_string());
        put("h", self.h.to_string());
        put("t_end", self.t_end.to_string());
        put("snapshots", self.snapshots.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        put("levels", self.levels.to_string());
        if let Some(out) = &self.out {
            put("out", out.display().to_string());
        }
        s
    }

    pub fn initial_profile(&self) -> Result<Profile, ConfigError> {
        self.initial.profile(self.domain)
    }

    /// Flux pair with its gap checked over the initial range plus a unit margin.
    pub fn flux_pair(&self, p0: &Profile) -> Result<FluxPair, FluxError> {
        let (lo, hi) = p0.min_max();
        FluxPair::from_specs(&self.flux_f, &self.flux_g, lo - 1.0, hi + 1.0, 2000)
    }

    /// Snapshot times with 0 and t_end added, sorted.
    pub fn times(&self) -> Vec<f64> {
        let mut ts = self.snapshots.clone();
        ts.push(0.0);
        ts.push(self.t_end);
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    pub fn viscous_params(&self) -> ViscousParams {
        ViscousParams {
            epsilon: self.epsilon,
            delta: self.delta,
            dx: self.dx,
            cfl: self.cfl,
            t_end: self.t_end,
            snapshot_every: 0.0,
            scheme: TimeScheme::Implicit,
        }
    }
}

/// Trajectory of a grid run (u from the cells, θ from the faces).
pub fn grid_trajectory(run: &GridRun) -> Trajectory {
    Trajectory {
        snapshots: (0..run.snapshots.len()).map(|i| Snapshot { t: run.snapshots[i].t, profile: run.profile(i), theta: run.theta_field(i) }).collect(),
    }
}

/// The single-flux weak solution that keeps the downward jump at x = 0 as a
/// g-shock: each side evolves with f, θ ≡ 1 except at the jump.
pub fn burgers_embedded_solution(cfg: &RunConfig) -> Result<SemigroupRun, RunError> {
    let p0 = cfg.initial_profile()?;
    let fp = cfg.flux_pair(&p0)?;
    check_embedded_shape(&p0, &fp)?;
    Ok(run_semigroup_with(&p0, &fp, cfg.h, cfg.t_end, &cfg.times(), DynamicsMode::FrozenExtrema)?)
}

fn check_embedded_shape(p0: &Profile, fp: &FluxPair) -> Result<(), RunError> {
    let bad = |m: String| Err(RunError::PreconditionViolation(m));
    if p0.domain().is_periodic() {
        return bad("data must live on a bounded domain".into());
    }
    let down: Vec<&Node> = p0.nodes().iter().filter(|n| n.u_right < n.u_left).collect();
    if down.len() != 1 || down[0].x != 0.0 {
        return bad(format!("need exactly one downward jump, at x = 0; found {}", down.len()));
    }
    if p0.segments().iter().any(|s| s.u1 < s.u0) {
        return bad("data must be nondecreasing away from x = 0".into());
    }
    let (ul, ur) = (down[0].u_left, down[0].u_right);
    let speed = fp.branch(Branch::G).chord_slope(ul, ur);
    if speed.abs() > 1e-9 {
        return bad(format!("the jump at 0 moves with speed {speed} under g"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesEntry {
    pub t: f64,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesManifest {
    pub name: String,
    pub thresholds: Thresholds,
    pub snapshots: Vec<SeriesEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub series: Vec<SeriesManifest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub h: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub dx: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discriminator {
    /// θ stays below the jump threshold for t > 0 in the semigroup run.
    pub semigroup_theta_clear: bool,
    /// θ exceeds the jump threshold at every snapshot of the control.
    pub control_theta_raised: bool,
    /// L1 distance between the two is positive for t > 0 and increasing.
    pub distance_positive_growing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub reports: Vec<DiagnosticsReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pairwise: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub discriminator: Option<Discriminator>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub convergence: Option<Vec<LevelResult>>,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    pub fn text(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            out.push_str(&r.summary());
            out.push('\n');
        }
        if let Some(pw) = &self.pairwise {
            writeln!(out, "pairwise L1 distance").unwrap();
            for (t, d) in pw {
                writeln!(out, "{t:>10.4} {d:>14.6e}").unwrap();
            }
        }
        if let Some(d) = &self.discriminator {
            writeln!(
                out,
                "discriminator: semigroup theta clear {}, control theta raised {}, distance positive and growing {}",
                d.semigroup_theta_clear, d.control_theta_raised, d.distance_positive_growing
            )
            .unwrap();
        }
        if let Some(levels) = &self.convergence {
            writeln!(out, "{:>10} {:>10} {:>10} {:>12} {:>14} {:>8}", "h", "epsilon", "delta", "dx", "L1", "ratio").unwrap();
            for (i, l) in levels.iter().enumerate() {
                let ratio = if i > 0 { format!("{:.3}", levels[i - 1].l1 / l.l1) } else { "-".into() };
                writeln!(out, "{:>10.5} {:>10.2e} {:>10.2e} {:>12.6} {:>14.6e} {:>8}", l.h, l.epsilon, l.delta, l.dx, l.l1, ratio).unwrap();
            }
        }
        out
    }
}

/// Sidecar written next to viscous snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscousMeta {
    pub epsilon: f64,
    pub delta: f64,
    pub dx: f64,
    pub dt: f64,
    pub cfl: f64,
    pub t_end: f64,
    pub steps: u64,
}

impl ViscousMeta {
    fn of(run: &GridRun) -> Self {
        let p = &run.params;
        ViscousMeta { epsilon: p.epsilon, delta: p.delta, dx: p.dx, dt: run.dt, cfl: p.cfl, t_end: p.t_end, steps: run.steps }
    }
}

struct Series {
    name: &'static str,
    traj: Trajectory,
    thresholds: Thresholds,
    events: Option<Vec<Event>>,
    meta: Option<ViscousMeta>,
}

fn semigroup_thresholds(h: f64) -> Thresholds {
    Thresholds::for_semigroup(h, 5.0 * h)
}

/// Runs the configured scenario, writing artifacts into `dir`. `jobs`
/// bounds the worker threads used for independent solver runs.
pub fn run_scenario(cfg: &RunConfig, dir: &Path, jobs: usize) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool");
    let (series, summary) = pool.install(|| execute(cfg))?;
    write_artifacts(cfg, dir, &series, &summary)?;
    Ok(summary)
}

fn execute(cfg: &RunConfig) -> Result<(Vec<Series>, RunSummary), RunError> {
    let p0 = cfg.initial_profile()?;
    let fp = cfg.flux_pair(&p0)?;
    let times = cfg.times();
    let semigroup = || -> Result<Series, RunError> {
        let run = run_semigroup(&p0, &fp, cfg.h, cfg.t_end, &times)?;
        Ok(Series { name: "semi", traj: run.trajectory, thresholds: semigroup_thresholds(cfg.h), events: Some(run.events), meta: None })
    };
    let viscous = || -> Result<Series, RunError> {
        let run = run_viscous_at(&p0, &fp, &cfg.viscous_params(), &times)?;
        Ok(Series {
            name: "visc",
            traj: grid_trajectory(&run),
            thresholds: Thresholds::for_grid(cfg.dx),
            events: None,
            meta: Some(ViscousMeta::of(&run)),
        })
    };
    let mut summary = RunSummary { scenario: cfg.scenario.clone(), reports: vec![], pairwise: None, discriminator: None, convergence: None };
    let series: Vec<Series> = match cfg.scenario.as_str() {
        "example11_discriminator" => {
            let (a, b) = rayon::join(semigroup, || {
                let run = burgers_embedded_solution(cfg)?;
                Ok::<_, RunError>(Series { name: "control", traj: run.trajectory, thresholds: semigroup_thresholds(cfg.h), events: Some(run.events), meta: None })
            });
            let (a, b) = (a?, b?);
            let pw = l1_series(&a.traj, &b.traj)?;
            let ra = structural_checks("example11_discriminator/semigroup", &a.traj, &fp, a.thresholds);
            let rb = structural_checks("example11_discriminator/control", &b.traj, &fp, b.thresholds);
            let later = |r: &DiagnosticsReport| r.series.iter().filter(|p| p.t > 0.0).map(|p| p.theta_max_jump).collect::<Vec<_>>();
            let positive: Vec<f64> = pw.iter().filter(|p| p.0 > 0.0).map(|p| p.1).collect();
            summary.discriminator = Some(Discriminator {
                semigroup_theta_clear: later(&ra).iter().all(|&j| j <= ra.thresholds.theta_jump_max),
                control_theta_raised: rb.series.iter().all(|p| p.theta_max_jump > rb.thresholds.theta_jump_max),
                distance_positive_growing: !positive.is_empty() && positive[0] > 0.0 && positive.windows(2).all(|w| w[1] > w[0]),
            });
            summary.reports = vec![ra, rb];
            summary.pairwise = Some(pw);
            vec![a, b]
        }
        "viscous_convergence" => {
            let levels: Vec<usize> = (0..cfg.levels).collect();
            let results: Vec<Result<(LevelResult, Series, Series), RunError>> = levels
                .par_iter()
                .map(|&k| {
                    let scale = (1u64 << (cfg.levels - 1 - k)) as f64;
                    let lvl = RunConfig {
                        h: cfg.h * scale,
                        epsilon: cfg.epsilon * scale,
                        delta: cfg.delta * scale,
                        dx: cfg.dx * scale,
                        snapshots: vec![],
                        ..cfg.clone()
                    };
                    let run_s = run_semigroup(&p0, &fp, lvl.h, lvl.t_end, &[0.0])?;
                    let run_v = run_viscous_at(&p0, &fp, &lvl.viscous_params(), &[0.0, lvl.t_end])?;
                    let semi = &run_s.trajectory.last().profile;
                    let visc = run_v.profile(run_v.snapshots.len() - 1);
                    let l1 = l1_distance(semi, &visc)?;
                    let res = LevelResult { h: lvl.h, epsilon: lvl.epsilon, delta: lvl.delta, dx: lvl.dx, l1 };
                    let s = Series { name: "semi", traj: run_s.trajectory, thresholds: semigroup_thresholds(lvl.h), events: Some(run_s.events), meta: None };
                    let v = Series {
                        name: "visc",
                        traj: grid_trajectory(&run_v),
                        thresholds: Thresholds::for_grid(lvl.dx),
                        events: None,
                        meta: Some(ViscousMeta::of(&run_v)),
                    };
                    Ok((res, s, v))
                })
                .collect();
            let mut table = Vec::new();
            let mut finest = None;
            for r in results {
                let (res, s, v) = r?;
                table.push(res);
                finest = Some((s, v));
            }
            let (s, v) = finest.expect("at least one level");
            summary.reports = vec![
                structural_checks("viscous_convergence/semigroup", &s.traj, &fp, s.thresholds),
                structural_checks("viscous_convergence/viscous", &v.traj, &fp, v.thresholds),
            ];
            summary.convergence = Some(table);
            vec![s, v]
        }
        _ => {
            let series = match cfg.solver {
                Solver::Semigroup => vec![semigroup()?],
                Solver::Viscous => vec![viscous()?],
                Solver::Both => {
                    let (a, b) = rayon::join(semigroup, viscous);
                    vec![a?, b?]
                }
            };
            for s in &series {
                let label = format!("{}/{}", cfg.scenario, if s.name == "semi" { "semigroup" } else { "viscous" });
                summary.reports.push(structural_checks(&label, &s.traj, &fp, s.thresholds));
            }
            if series.len() == 2 {
                summary.pairwise = Some(l1_series(&series[0].traj, &series[1].traj)?);
            }
            series
        }
    };
    Ok((series, summary))
}

fn snapshot_file(prefix: &str, t: f64) -> String {
    format!("{prefix}_t{t:.6}.csv")
}

fn write_file(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_artifacts(cfg: &RunConfig, dir: &Path, series: &[Series], summary: &RunSummary) -> Result<(), RunError> {
    write_file(&dir.join("config.txt"), &cfg.serialize())?;
    let mut manifest = Manifest { scenario: cfg.scenario.clone(), series: vec![] };
    for s in series {
        let mut entries = Vec::new();
        for snap in &s.traj.snapshots {
            let file = snapshot_file(s.name, snap.t);
            write_file(&dir.join(&file), &write_csv(&snap.profile, &snap.theta)?)?;
            entries.push(SeriesEntry { t: snap.t, file });
        }
        manifest.series.push(SeriesManifest { name: s.name.to_string(), thresholds: s.thresholds, snapshots: entries });
        if let Some(events) = &s.events {
            let mut text = String::new();
            for e in events {
                text.push_str(&serde_json::to_string(e).expect("event serializes"));
                text.push('\n');
            }
            write_file(&dir.join(format!("events_{}.jsonl", s.name)), &text)?;
        }
        if let Some(meta) = &s.meta {
            write_file(&dir.join(format!("{}_meta.json", s.name)), &serde_json::to_string_pretty(meta).expect("meta serializes"))?;
        }
    }
    write_file(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    write_file(&dir.join("diagnostics.json"), &summary.to_json())?;
    if let Some(levels) = &summary.convergence {
        let mut csv = String::from("h,epsilon,delta,dx,l1\n");
        for l in levels {
            writeln!(csv, "{},{},{},{},{}", l.h, l.epsilon, l.delta, l.dx, l.l1).unwrap();
        }
        write_file(&dir.join("convergence.csv"), &csv)?;
    }
    write_file(&dir.join("summary.txt"), &summary.text())?;
    Ok(())
}

/// Re-runs the structural checks on the snapshots stored in a run directory.
pub fn check_run_dir(dir: &Path) -> Result<RunSummary, RunError> {
    let read = |name: &str| -> Result<String, RunError> {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(io_err(&path))
    };
    let cfg = parse_config(&read("config.txt")?)?;
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest =
        serde_json::from_str(&read("manifest.json")?).map_err(|e| RunError::Artifact { path: manifest_path.clone(), msg: e.to_string() })?;
    let p0 = cfg.initial_profile()?;
    let fp = cfg.flux_pair(&p0)?;
    let mut trajs = Vec::new();
    let mut summary = RunSummary { scenario: manifest.scenario.clone(), reports: vec![], pairwise: None, discriminator: None, convergence: None };
    for s in &manifest.series {
        let mut traj = Trajectory::default();
        for e in &s.snapshots {
            let (profile, theta) = parse_csv(&read(&e.file)?, cfg.domain)?;
            traj.snapshots.push(Snapshot { t: e.t, profile, theta });
        }
        summary.reports.push(structural_checks(&format!("{}/{}", manifest.scenario, s.name), &traj, &fp, s.thresholds));
        trajs.push(traj);
    }
    if let [a, b] = trajs.as_slice() {
        if a.times() == b.times() {
            summary.pairwise = Some(l1_series(a, b)?);
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "scenario = demo\nflux = burgers,burgers_plus_1\ninitial = sine:0.5\nt_end = 0.2\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.dx, 1.0 / 400.0);
        assert_eq!(cfg.h, 0.02);
        assert_eq!(cfg.epsilon, 1e-3);
        assert_eq!(cfg.delta, 1e-3);
        assert_eq!(cfg.cfl, 0.45);
        assert_eq!(cfg.domain, Domain::Periodic { period: 1.0 });
        assert_eq!(cfg.solver, Solver::Both);
        assert_eq!(cfg.snapshots.len(), 11);
        assert_eq!(cfg.flux_g, "burgers_plus_1");
    }

    #[test]
    fn negative_end_time_is_rejected() {
        let text = MINIMAL.replace("t_end = 0.2", "t_end = -1");
        match parse_config(&text) {
            Err(ConfigError::Validation { key, .. }) => assert_eq!(key, "t_end"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = format!("{MINIMAL}bogus = 3\n");
        assert_eq!(parse_config(&text).unwrap_err(), ConfigError::Parse { line: 5, msg: "unknown key `bogus`".into() });
        let text = MINIMAL.replace("t_end = 0.2", "t_end = soon");
        assert!(matches!(parse_config(&text), Err(ConfigError::Parse { line: 4, .. })));
        let text = MINIMAL.replace("initial = sine:0.5", "initial sine");
        assert!(matches!(parse_config(&text), Err(ConfigError::Parse { line: 3, .. })));
    }

    #[test]
    fn example11_config_uses_its_domain() {
        let cfg = parse_config("scenario = e\nflux = burgers,burgers_plus_1\ninitial = example11\nt_end = 0.5\n").unwrap();
        assert_eq!(cfg.domain, Domain::Bounded { x_min: -5.0, x_max: 5.0 });
        let p = cfg.initial_profile().unwrap();
        assert_eq!(p.left_limit(0.0), 1.0);
        assert_eq!(p.right_limit(0.0), -1.0);
        assert!((p.eval(-1.0) - (-1.0f64).exp()).abs() < 1e-12);
        assert!((p.eval(2.0) + (-2.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn table_initial_data() {
        let spec: InitialSpec = "table:-0.5:0,0:1,0:-1,0.5:0".parse().unwrap();
        let p = spec.profile(Domain::Bounded { x_min: -1.0, x_max: 1.0 }).unwrap();
        assert_eq!(p.eval(-0.75), 0.0);
        assert!((p.eval(-0.25) - 0.5).abs() < 1e-15);
        assert_eq!(p.left_limit(0.0), 1.0);
        assert_eq!(p.right_limit(0.0), -1.0);
        assert_eq!(spec.to_string().parse::<InitialSpec>().unwrap(), spec);
    }

    #[test]
    fn embedded_solution_rejects_wrong_shapes() {
        let cfg = parse_config("scenario = e\nflux = burgers,burgers_plus_1\ninitial = riemann:1,-0.5\ndomain = bounded\nt_end = 0.1\n").unwrap();
        assert!(matches!(burgers_embedded_solution(&cfg), Err(RunError::PreconditionViolation(_))));
        let cfg = RunConfig { initial: InitialSpec::Riemann { ul: -1.0, ur: 1.0, x0: 0.0 }, ..cfg };
        assert!(matches!(burgers_embedded_solution(&cfg), Err(RunError::PreconditionViolation(_))));
        let cfg = RunConfig { initial: InitialSpec::Riemann { ul: 1.0, ur: -1.0, x0: 0.0 }, ..cfg };
        assert!(burgers_embedded_solution(&cfg).is_ok());
    }
}
