//! Python bindings for gradflux-core.
//!
//! Domains are given as text: `periodic:L` or `bounded:x_min,x_max`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;

use gradflux_core::diagnostics::{self, Thresholds};
use gradflux_core::flux::{self, Branch};
use gradflux_core::profile::{self, Domain, Node};
use gradflux_core::riemann::{self, WaveKind};
use gradflux_core::runner;
use gradflux_core::semigroup;
use gradflux_core::viscous::{self, TimeScheme, ViscousParams};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_domain(text: &str) -> PyResult<Domain> {
    let bad = || PyValueError::new_err(format!("domain `{text}`: expected periodic:L or bounded:x_min,x_max"));
    let (kind, args) = text.split_once(':').ok_or_else(bad)?;
    let nums: Vec<f64> = args.split(',').map(|a| a.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let domain = match (kind.trim(), nums.as_slice()) {
        ("periodic", [period]) => Domain::Periodic { period: *period },
        ("bounded", [x_min, x_max]) => Domain::Bounded { x_min: *x_min, x_max: *x_max },
        _ => return Err(bad()),
    };
    domain.validate().map_err(value_err)?;
    Ok(domain)
}

fn domain_text(d: Domain) -> String {
    match d {
        Domain::Periodic { period } => format!("periodic:{period}"),
        Domain::Bounded { x_min, x_max } => format!("bounded:{x_min},{x_max}"),
    }
}

/// The flux pair f < g.
#[pyclass(name = "FluxPair", frozen)]
struct PyFluxPair {
    inner: flux::FluxPair,
}

#[pymethods]
impl PyFluxPair {
    #[new]
    #[pyo3(signature = (f, g, u_lo = -3.0, u_hi = 3.0))]
    fn new(f: &str, g: &str, u_lo: f64, u_hi: f64) -> PyResult<Self> {
        let inner = flux::FluxPair::from_specs(f, g, u_lo, u_hi, 2000).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Parses `f,g`.
    #[staticmethod]
    #[pyo3(signature = (spec, u_lo = -3.0, u_hi = 3.0))]
    fn parse(spec: &str, u_lo: f64, u_hi: f64) -> PyResult<Self> {
        let (f, g) = flux::split_flux_pair_spec(spec).map_err(value_err)?;
        Self::new(&f, &g, u_lo, u_hi)
    }

    fn f(&self, u: f64) -> f64 {
        self.inner.f.value(u)
    }

    fn g(&self, u: f64) -> f64 {
        self.inner.g.value(u)
    }

    fn gap(&self, u: f64) -> f64 {
        self.inner.gap(u)
    }

    fn blended(&self, theta: f64, u: f64) -> f64 {
        self.inner.blended(theta, u)
    }

    #[getter]
    fn c0(&self) -> f64 {
        self.inner.c0
    }

    fn __repr__(&self) -> String {
        format!("FluxPair({:?}, {:?}, c0={})", self.inner.f.spec(), self.inner.g.spec(), self.inner.c0)
    }
}

/// Piecewise-linear profile with jumps.
#[pyclass(name = "Profile", frozen)]
struct PyProfile {
    inner: profile::Profile,
}

#[pymethods]
impl PyProfile {
    /// Nodes as (x, u_left, u_right) triples.
    #[new]
    fn new(domain: &str, nodes: Vec<(f64, f64, f64)>) -> PyResult<Self> {
        let nodes = nodes.into_iter().map(|(x, u_left, u_right)| Node { x, u_left, u_right }).collect();
        let inner = profile::Profile::new(parse_domain(domain)?, nodes).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn constant(domain: &str, c: f64) -> PyResult<Self> {
        Ok(Self { inner: profile::Profile::constant(parse_domain(domain)?, c) })
    }

    #[staticmethod]
    fn piecewise_constant(domain: &str, jumps: Vec<f64>, values: Vec<f64>) -> PyResult<Self> {
        let inner = profile::Profile::piecewise_constant(parse_domain(domain)?, &jumps, &values).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Samples a Python callable at `n` + 1 equally spaced points.
    #[staticmethod]
    fn sample(domain: &str, n: usize, func: &Bound<'_, PyAny>) -> PyResult<Self> {
        let domain = parse_domain(domain)?;
        let (lo, len) = (domain.lo(), domain.length());
        let values: Vec<f64> = (0..=n).map(|k| func.call1((lo + len * k as f64 / n as f64,))?.extract::<f64>()).collect::<PyResult<_>>()?;
        let inner = profile::Profile::sample_fn(domain, n, |x| {
            let k = ((x - lo) / len * n as f64).round() as usize;
            values[k.min(n)]
        })
        .map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (n = 20000))]
    fn example11(n: usize) -> Self {
        Self { inner: runner::example11_profile(n) }
    }

    #[staticmethod]
    fn from_csv(domain: &str, text: &str) -> PyResult<Self> {
        let (inner, _) = profile::parse_csv(text, parse_domain(domain)?).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn domain(&self) -> String {
        domain_text(self.inner.domain())
    }

    #[getter]
    fn nodes(&self) -> Vec<(f64, f64, f64)> {
        self.inner.nodes().iter().map(|n| (n.x, n.u_left, n.u_right)).collect()
    }

    fn __call__(&self, x: f64) -> f64 {
        self.inner.eval(x)
    }

    fn total_variation(&self) -> f64 {
        profile::total_variation(&self.inner)
    }

    fn integral(&self) -> f64 {
        self.inner.integral()
    }

    fn l1_distance(&self, other: &PyProfile) -> PyResult<f64> {
        profile::l1_distance(&self.inner, &other.inner).map_err(value_err)
    }

    fn plateau_count(&self) -> usize {
        diagnostics::plateau_count(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Profile({}, {} nodes)", self.domain(), self.inner.nodes().len())
    }
}

/// Snapshots (t, u, θ) of one run.
#[pyclass(name = "Trajectory", frozen)]
struct PyTrajectory {
    inner: diagnostics::Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times()
    }

    fn __len__(&self) -> usize {
        self.inner.snapshots.len()
    }

    fn profile(&self, i: usize) -> PyResult<PyProfile> {
        let s = self.inner.snapshots.get(i).ok_or_else(|| PyIndexError::new_err(i))?;
        Ok(PyProfile { inner: s.profile.clone() })
    }

    /// CSV text (x,u,theta) of snapshot i.
    fn csv(&self, i: usize) -> PyResult<String> {
        let s = self.inner.snapshots.get(i).ok_or_else(|| PyIndexError::new_err(i))?;
        profile::write_csv(&s.profile, &s.theta).map_err(value_err)
    }

    /// Largest θ oscillation over windows of width `scale`, per snapshot.
    fn theta_max_jump(&self, scale: f64) -> Vec<f64> {
        self.inner.snapshots.iter().map(|s| profile::theta_discontinuity(&s.theta, scale)).collect()
    }

    fn l1_series(&self, other: &PyTrajectory) -> PyResult<Vec<(f64, f64)>> {
        diagnostics::l1_series(&self.inner, &other.inner).map_err(value_err)
    }

    fn contraction_gap(&self, other: &PyTrajectory) -> PyResult<Vec<(f64, f64)>> {
        diagnostics::contraction_gap(&self.inner, &other.inner).map_err(value_err)
    }

    fn semigroup_defect(&self, py: Python<'_>, fp: &PyFluxPair, h: f64) -> PyResult<Vec<(f64, f64)>> {
        py.detach(|| diagnostics::semigroup_defect(&self.inner, &fp.inner, h)).map_err(value_err)
    }

    /// Structural report as JSON text. `h` selects semigroup thresholds,
    /// otherwise `dx` selects grid thresholds.
    #[pyo3(signature = (fp, scenario = "run", h = None, dx = None))]
    fn structural_checks(&self, fp: &PyFluxPair, scenario: &str, h: Option<f64>, dx: Option<f64>) -> PyResult<String> {
        let th = match (h, dx) {
            (Some(h), None) => Thresholds::for_semigroup(h, 5.0 * h),
            (None, Some(dx)) => Thresholds::for_grid(dx),
            _ => return Err(PyValueError::new_err("give exactly one of h or dx")),
        };
        Ok(diagnostics::structural_checks(scenario, &self.inner, &fp.inner, th).to_json())
    }
}

/// Front-tracking run. Returns the trajectory and the event log as
/// (t, kind, position, tv_before, tv_after) tuples.
#[pyfunction]
#[pyo3(signature = (p0, fp, h, t_end, times = Vec::new(), control = false))]
fn run_semigroup(
    py: Python<'_>,
    p0: &PyProfile,
    fp: &PyFluxPair,
    h: f64,
    t_end: f64,
    times: Vec<f64>,
    control: bool,
) -> PyResult<(PyTrajectory, Vec<(f64, String, f64, f64, f64)>)> {
    let mode = if control { semigroup::DynamicsMode::FrozenExtrema } else { semigroup::DynamicsMode::Semigroup };
    let run = py.detach(|| semigroup::run_semigroup_with(&p0.inner, &fp.inner, h, t_end, &times, mode)).map_err(value_err)?;
    let events = run
        .events
        .iter()
        .map(|e| (e.t, format!("{:?}", e.kind).to_lowercase(), e.position, e.tv_before, e.tv_after))
        .collect();
    Ok((PyTrajectory { inner: run.trajectory }, events))
}

/// Vanishing-viscosity run on a uniform grid (implicit in time).
#[pyfunction]
#[pyo3(signature = (p0, fp, epsilon, delta, dx, t_end, times = Vec::new(), cfl = 0.45))]
#[allow(clippy::too_many_arguments)]
fn run_viscous(
    py: Python<'_>,
    p0: &PyProfile,
    fp: &PyFluxPair,
    epsilon: f64,
    delta: f64,
    dx: f64,
    t_end: f64,
    times: Vec<f64>,
    cfl: f64,
) -> PyResult<PyTrajectory> {
    let params = ViscousParams { epsilon, delta, dx, cfl, t_end, snapshot_every: 0.0, scheme: TimeScheme::Implicit };
    let mut times = times;
    times.extend([0.0, t_end]);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let run = py.detach(|| viscous::run_viscous_at(&p0.inner, &fp.inner, &params, &times)).map_err(value_err)?;
    Ok(PyTrajectory { inner: runner::grid_trajectory(&run) })
}

/// Entropy fan as (speed, u_before, u_after, kind) tuples, plus the branch used.
#[pyfunction]
#[pyo3(signature = (ul, ur, fp, step = 0.05, h = None))]
fn solve_riemann(ul: f64, ur: f64, fp: &PyFluxPair, step: f64, h: Option<f64>) -> PyResult<(String, Vec<(f64, f64, f64, String)>)> {
    let fan = match h {
        Some(h) => riemann::solve_riemann_on_grid(ul, ur, &fp.inner, h),
        None => riemann::solve_riemann(ul, ur, &fp.inner, step),
    }
    .map_err(value_err)?;
    let waves = fan
        .waves
        .iter()
        .map(|w| {
            let kind = match w.kind {
                WaveKind::Shock => "shock",
                WaveKind::RarefactionStep => "rarefaction",
            };
            (w.speed, w.u_before, w.u_after, kind.to_string())
        })
        .collect();
    Ok((fan.flux_used.to_string(), waves))
}

#[pyfunction]
fn rh_speed(ul: f64, ur: f64, fp: &PyFluxPair) -> PyResult<f64> {
    riemann::rh_speed(ul, ur, &fp.inner).map_err(value_err)
}

/// Liu test for the jump ul -> ur under the branch the jump selects.
#[pyfunction]
#[pyo3(signature = (ul, ur, fp, n_scan = 1000))]
fn liu_admissible(ul: f64, ur: f64, fp: &PyFluxPair, n_scan: usize) -> PyResult<bool> {
    let flux = fp.inner.branch(Branch::of_jump(ul, ur));
    riemann::liu_admissible(ul, ur, flux, n_scan).map_err(value_err)
}

/// Runs a key = value config into `out_dir`; returns the summary as JSON text.
#[pyfunction]
#[pyo3(signature = (config, out_dir, jobs = 1))]
fn run_config(py: Python<'_>, config: &str, out_dir: PathBuf, jobs: usize) -> PyResult<String> {
    let cfg = runner::parse_config(config).map_err(value_err)?;
    let summary = py.detach(|| runner::run_scenario(&cfg, &out_dir, jobs)).map_err(value_err)?;
    Ok(summary.to_json())
}

#[pymodule]
fn gradflux(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFluxPair>()?;
    m.add_class::<PyProfile>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(run_semigroup, m)?)?;
    m.add_function(wrap_pyfunction!(run_viscous, m)?)?;
    m.add_function(wrap_pyfunction!(solve_riemann, m)?)?;
    m.add_function(wrap_pyfunction!(rh_speed, m)?)?;
    m.add_function(wrap_pyfunction!(liu_admissible, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
