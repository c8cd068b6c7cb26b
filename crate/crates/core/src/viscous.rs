//! Finite-volume solver for the regularized equation
//! u_t + [θ_ε(u_x) f(u) + (1 − θ_ε(u_x)) g(u)]_x = δ u_xx.
//!
//! The default time scheme is backward Euler solved by Newton iteration.
//! The switch term acts as a diffusion of strength ~ |g − f| / ε wherever
//! |u_x| < ε, and an explicit step of size ~ dx·ε turns that into a
//! grid-scale zigzag that stalls plateau decay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flux::FluxPair;
use crate::profile::{Domain, Profile, ProfileError, ThetaField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ViscousError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("blow-up at t = {t}: max |u| = {max_abs} exceeds {bound}")]
    BlowUp { t: f64, max_abs: f64, bound: f64 },
    #[error("implicit step did not converge at t = {t}")]
    NoConvergence { t: f64 },
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeScheme {
    /// Backward Euler; dt = cfl · dx / (max(|f'|, |g'|) + max |f − g|).
    #[default]
    Implicit,
    /// Forward Euler; dt = cfl · min(dx/Λ, dx²/(2δ)) with
    /// Λ = max(|f'|, |g'|) + max |f − g| / ε.
    Explicit,
}

/// Smoothed switch: cubic smoothstep of (s/ε + 1)/2, clipped to [0, 1].
#[inline]
pub fn theta_eps(s: f64, epsilon: f64) -> f64 {
    let t = (0.5 * (s / epsilon + 1.0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscousParams {
    pub epsilon: f64,
    pub delta: f64,
    pub dx: f64,
    pub cfl: f64,
    pub t_end: f64,
    /// Snapshot spacing; 0 keeps only the initial and final states.
    pub snapshot_every: f64,
    #[serde(default)]
    pub scheme: TimeScheme,
}

impl ViscousParams {
    pub fn validate(&self) -> Result<(), ViscousError> {
        let bad = |m: &str| Err(ViscousError::InvalidParams(m.into()));
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.delta > 0.0) {
            return bad("delta must be > 0");
        }
        if !(self.dx > 0.0) {
            return bad("dx must be > 0");
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.9) {
            return bad("cfl must lie in (0, 0.9]");
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad("t_end must be finite and >= 0");
        }
        if !(self.snapshot_every >= 0.0) {
            return bad("snapshot_every must be >= 0");
        }
        Ok(())
    }

    /// Number of cells for `domain`; dx must divide the domain length.
    pub fn cells(&self, domain: &Domain) -> Result<usize, ViscousError> {
        let n = (domain.length() / self.dx).round();
        if n < 8.0 || ((n * self.dx) - domain.length()).abs() > 1e-9 * domain.length() {
            return Err(ViscousError::InvalidParams(format!(
                "dx = {} does not split a domain of length {} into >= 8 cells",
                self.dx,
                domain.length()
            )));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub domain: Domain,
    pub dx: f64,
    pub u: Vec<f64>,
    pub t: f64,
}

impl GridState {
    pub fn from_profile(p: &Profile, n: usize) -> Result<GridState, ViscousError> {
        if n < 8 {
            return Err(ViscousError::InvalidParams("need at least 8 cells".into()));
        }
        let domain = p.domain();
        Ok(GridState {
            domain,
            dx: domain.length() / n as f64,
            u: p.cell_averages(n),
            t: 0.0,
        })
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn cell_center(&self, j: usize) -> f64 {
        self.domain.lo() + (j as f64 + 0.5) * self.dx
    }

    pub fn integral(&self) -> f64 {
        self.u.iter().sum::<f64>() * self.dx
    }

    pub fn to_profile(&self) -> Profile {
        Profile::from_cells(self.domain, &self.u).expect("grid state is a valid profile")
    }

    /// Face positions matching [`face_theta`].
    pub fn face_positions(&self) -> Vec<f64> {
        let count = if self.domain.is_periodic() { self.n() } else { self.n() + 1 };
        (0..count).map(|j| self.domain.lo() + j as f64 * self.dx).collect()
    }
}

/// θ_ε of the face gradients. Periodic: n faces, face j is the left face of
/// cell j. Bounded: n + 1 faces; each boundary face repeats its interior
/// neighbour.
pub fn face_theta(state: &GridState, epsilon: f64) -> Vec<f64> {
    let (u, n, dx) = (&state.u, state.n(), state.dx);
    match state.domain {
        Domain::Periodic { .. } => (0..n).map(|j| theta_eps((u[j] - u[(j + n - 1) % n]) / dx, epsilon)).collect(),
        Domain::Bounded { .. } => {
            let mut th: Vec<f64> = (0..=n)
                .map(|j| if j == 0 || j == n { 0.0 } else { theta_eps((u[j] - u[j - 1]) / dx, epsilon) })
                .collect();
            th[0] = th[1];
            th[n] = th[n - 1];
            th
        }
    }
}

pub fn theta_field(state: &GridState, epsilon: f64) -> ThetaField {
    ThetaField::from_samples(state.domain, &state.face_positions(), &face_theta(state, epsilon))
        .expect("face θ lies in [0, 1]")
}

/// Reusable work arrays for stepping one grid.
struct Stepper {
    fv: Vec<f64>,
    gv: Vec<f64>,
    fd: Vec<f64>,
    gd: Vec<f64>,
    flux: Vec<f64>,
    next: Vec<f64>,
    // face flux derivatives w.r.t. the left and right cell
    dl: Vec<f64>,
    dr: Vec<f64>,
    // tridiagonal system: sub, diag, super, rhs
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    rhs: Vec<f64>,
    work: Vec<f64>,
}

const NEWTON_MAX_ITER: usize = 60;
const MAX_HALVINGS: u32 = 12;

impl Stepper {
    fn new(n: usize) -> Stepper {
        Stepper {
            fv: vec![0.0; n],
            gv: vec![0.0; n],
            fd: vec![0.0; n],
            gd: vec![0.0; n],
            flux: vec![0.0; n + 1],
            next: vec![0.0; n],
            dl: vec![0.0; n + 1],
            dr: vec![0.0; n + 1],
            sub: vec![0.0; n],
            diag: vec![0.0; n],
            sup: vec![0.0; n],
            rhs: vec![0.0; n],
            work: vec![0.0; 2 * n],
        }
    }

    /// Evaluates f, g and derivatives per cell; returns (max |f'|, |g'|; max |f − g|).
    fn evaluate(&mut self, u: &[f64], fp: &FluxPair) -> (f64, f64) {
        let (mut speed, mut gap) = (0.0f64, 0.0f64);
        for (j, &uj) in u.iter().enumerate() {
            let (f, fd) = fp.f.value_and_derivative(uj);
            let (g, gd) = fp.g.value_and_derivative(uj);
            self.fv[j] = f;
            self.gv[j] = g;
            self.fd[j] = fd;
            self.gd[j] = gd;
            speed = speed.max(fd.abs()).max(gd.abs());
            gap = gap.max((f - g).abs());
        }
        (speed, gap)
    }

    fn dt((speed, gap): (f64, f64), p: &ViscousParams, dx: f64) -> f64 {
        match p.scheme {
            TimeScheme::Explicit => {
                let lambda = speed + gap / p.epsilon;
                let adv = if lambda > 0.0 { dx / lambda } else { f64::INFINITY };
                p.cfl * adv.min(dx * dx / (2.0 * p.delta))
            }
            TimeScheme::Implicit => {
                let lambda = speed + gap;
                let adv = if lambda > 0.0 { dx / lambda } else { f64::INFINITY };
                // a pure diffusion still gets a finite step
                p.cfl * adv.min(dx.sqrt())
            }
        }
    }

    /// Face flux and its derivatives w.r.t. the two adjacent cell values,
    /// with the Lax-Friedrichs coefficients held fixed.
    #[inline]
    fn face(&self, l: usize, r: usize, ul: f64, ur: f64, dx: f64, epsilon: f64) -> (f64, f64, f64) {
        let du = ur - ul;
        let t = (0.5 * (du / (dx * epsilon) + 1.0)).clamp(0.0, 1.0);
        let th = t * t * (3.0 - 2.0 * t);
        let dth = 3.0 * t * (1.0 - t) / (dx * epsilon);
        let af = self.fd[l].abs().max(self.fd[r].abs());
        let ag = self.gd[l].abs().max(self.gd[r].abs());
        let fh = 0.5 * (self.fv[l] + self.fv[r]) - 0.5 * af * du;
        let gh = 0.5 * (self.gv[l] + self.gv[r]) - 0.5 * ag * du;
        let flux = th * fh + (1.0 - th) * gh;
        let d_l = th * 0.5 * (self.fd[l] + af) + (1.0 - th) * 0.5 * (self.gd[l] + ag) - dth * (fh - gh);
        let d_r = th * 0.5 * (self.fd[r] - af) + (1.0 - th) * 0.5 * (self.gd[r] - ag) + dth * (fh - gh);
        (flux, d_l, d_r)
    }

    /// Fills `flux` (and `dl`, `dr`) from the cell values `u`; `evaluate`
    /// must have been called on `u`. Bounded boundary faces use the cell
    /// value with θ copied from the adjacent interior face; there `dl` and
    /// `dr` hold the derivatives w.r.t. the two cells nearest the boundary.
    fn fluxes(&mut self, domain: Domain, u: &[f64], dx: f64, epsilon: f64) {
        let n = u.len();
        match domain {
            Domain::Periodic { .. } => {
                for j in 0..n {
                    let l = (j + n - 1) % n;
                    let (fl, a, b) = self.face(l, j, u[l], u[j], dx, epsilon);
                    (self.flux[j], self.dl[j], self.dr[j]) = (fl, a, b);
                }
                self.flux[n] = self.flux[0];
                self.dl[n] = self.dl[0];
                self.dr[n] = self.dr[0];
            }
            Domain::Bounded { .. } => {
                for j in 1..n {
                    let (fl, a, b) = self.face(j - 1, j, u[j - 1], u[j], dx, epsilon);
                    (self.flux[j], self.dl[j], self.dr[j]) = (fl, a, b);
                }
                let end = |st: &Stepper, c: usize, du: f64| {
                    let t = (0.5 * (du / (dx * epsilon) + 1.0)).clamp(0.0, 1.0);
                    let th = t * t * (3.0 - 2.0 * t);
                    let dth = 3.0 * t * (1.0 - t) / (dx * epsilon);
                    let gap = st.fv[c] - st.gv[c];
                    let flux = th * st.fv[c] + (1.0 - th) * st.gv[c];
                    (flux, th * st.fd[c] + (1.0 - th) * st.gd[c], dth * gap)
                };
                // face 0: d/du0 in dl, d/du1 in dr
                let (fl, dc, dth_gap) = end(self, 0, u[1] - u[0]);
                (self.flux[0], self.dl[0], self.dr[0]) = (fl, dc - dth_gap, dth_gap);
                // face n: d/du_{n-2} in dl, d/du_{n-1} in dr
                let (fl, dc, dth_gap) = end(self, n - 1, u[n - 1] - u[n - 2]);
                (self.flux[n], self.dl[n], self.dr[n]) = (fl, -dth_gap, dc + dth_gap);
            }
        }
    }

    /// u_new[j] = u[j] − c (F[j+1] − F[j]) + d Δv[j] with the current fluxes
    /// and Laplacian taken from `v`.
    fn conservative_update(&mut self, domain: Domain, u: &[f64], v: &[f64], c: f64, d: f64) {
        let n = u.len();
        let periodic = domain.is_periodic();
        for j in 0..n {
            let (vl, vr) = if periodic {
                (v[(j + n - 1) % n], v[(j + 1) % n])
            } else {
                (v[j.saturating_sub(1)], v[(j + 1).min(n - 1)])
            };
            self.next[j] = u[j] - c * (self.flux[j + 1] - self.flux[j]) + d * (vr - 2.0 * v[j] + vl);
        }
    }

    /// One explicit step of size dt; `evaluate` must have been called on `state.u`.
    fn explicit_step(&mut self, state: &mut GridState, p: &ViscousParams, dt: f64) {
        let dx = state.dx;
        self.fluxes(state.domain, &state.u, dx, p.epsilon);
        let (c, d) = (dt / dx, p.delta * dt / (dx * dx));
        let u = std::mem::take(&mut state.u);
        self.conservative_update(state.domain, &u, &u, c, d);
        state.u = u;
        std::mem::swap(&mut state.u, &mut self.next);
        state.t += dt;
    }

    /// Residual R(v) = v − u + c ΔF(v) − d Δv into `rhs` (negated) and the
    /// Jacobian into sub/diag/sup; returns max |R|.
    fn residual(&mut self, domain: Domain, u: &[f64], v: &[f64], fp: &FluxPair, p: &ViscousParams, dx: f64, c: f64, d: f64) -> f64 {
        let n = u.len();
        self.evaluate(v, fp);
        self.fluxes(domain, v, dx, p.epsilon);
        self.conservative_update(domain, u, v, c, d);
        let mut norm = 0.0f64;
        for j in 0..n {
            let r = v[j] - self.next[j];
            self.rhs[j] = -r;
            norm = norm.max(r.abs());
        }
        if domain.is_periodic() {
            for j in 0..n {
                self.sub[j] = -c * self.dl[j] - d;
                self.diag[j] = 1.0 + c * (self.dl[j + 1] - self.dr[j]) + 2.0 * d;
                self.sup[j] = c * self.dr[j + 1] - d;
            }
        } else {
            for j in 1..n - 1 {
                self.sub[j] = -c * self.dl[j] - d;
                self.diag[j] = 1.0 + c * (self.dl[j + 1] - self.dr[j]) + 2.0 * d;
                self.sup[j] = c * self.dr[j + 1] - d;
            }
            self.sub[0] = 0.0;
            self.diag[0] = 1.0 + c * (self.dl[1] - self.dl[0]) + d;
            self.sup[0] = c * (self.dr[1] - self.dr[0]) - d;
            let m = n - 1;
            self.sub[m] = c * (self.dl[n] - self.dl[m]) - d;
            self.diag[m] = 1.0 + c * (self.dr[n] - self.dr[m]) + d;
            self.sup[m] = 0.0;
        }
        norm
    }

    /// Backward Euler step by damped Newton; false if it fails to converge.
    fn implicit_step(&mut self, state: &mut GridState, fp: &FluxPair, p: &ViscousParams, dt: f64) -> bool {
        let dx = state.dx;
        let (c, d) = (dt / dx, p.delta * dt / (dx * dx));
        let domain = state.domain;
        let u = state.u.clone();
        let scale = 1.0 + u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = 1e-12 * scale;
        let mut v = u.clone();
        let mut norm = self.residual(domain, &u, &v, fp, p, dx, c, d);
        let mut converged = norm <= tol;
        let mut trial = vec![0.0; v.len()];
        let mut delta = vec![0.0; v.len()];
        for _ in 0..NEWTON_MAX_ITER {
            if converged {
                break;
            }
            delta.copy_from_slice(&self.rhs);
            let periodic = domain.is_periodic();
            solve_tridiagonal(&self.sub, &self.diag, &self.sup, &mut delta, periodic, &mut self.work);
            let before = norm;
            let step_size = delta.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let mut lambda = 1.0;
            loop {
                for j in 0..v.len() {
                    trial[j] = v[j] + lambda * delta[j];
                }
                let trial_norm = self.residual(domain, &u, &trial, fp, p, dx, c, d);
                if trial_norm < (1.0 - 1e-4 * lambda) * norm || lambda < 1.0 / 1024.0 {
                    std::mem::swap(&mut v, &mut trial);
                    norm = trial_norm;
                    break;
                }
                lambda *= 0.5;
            }
            // round-off floor: accept once further steps stop helping
            converged = norm <= tol || (norm <= 1e-9 * scale && (step_size <= 1e-13 * scale || !(norm < before)));
        }
        if !converged || !norm.is_finite() {
            return false;
        }
        // `residual` left the conservative update of the converged fluxes in `next`
        std::mem::swap(&mut state.u, &mut self.next);
        state.t += dt;
        true
    }

    /// Advances by dt with the configured scheme; implicit steps that fail to
    /// converge are split in halves.
    fn step(&mut self, state: &mut GridState, fp: &FluxPair, p: &ViscousParams, dt: f64) -> Result<(), ViscousError> {
        match p.scheme {
            TimeScheme::Explicit => {
                self.explicit_step(state, p, dt);
                Ok(())
            }
            TimeScheme::Implicit => {
                let t_end = state.t + dt;
                let mut pieces = vec![(dt, 0u32)];
                while let Some((h, depth)) = pieces.pop() {
                    let saved = state.clone();
                    if self.implicit_step(state, fp, p, h) {
                        continue;
                    }
                    *state = saved;
                    if depth >= MAX_HALVINGS {
                        return Err(ViscousError::NoConvergence { t: state.t });
                    }
                    pieces.push((0.5 * h, depth + 1));
                    pieces.push((0.5 * h, depth + 1));
                }
                state.t = t_end;
                Ok(())
            }
        }
    }
}

/// Solves a (cyclic, if `periodic`) tridiagonal system in place. The
/// matrices produced here are diagonally dominant, so no pivoting is done.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], periodic: bool, work: &mut [f64]) {
    let n = rhs.len();
    let (cp, z) = work.split_at_mut(n);
    if !periodic {
        thomas(sub, diag, sup, rhs, cp);
        return;
    }
    // Sherman-Morrison on the corner entries sub[0] (row 0, col n-1) and
    // sup[n-1] (row n-1, col 0)
    let gamma = -diag[0];
    let mut b = diag.to_vec();
    b[0] -= gamma;
    b[n - 1] -= sup[n - 1] * sub[0] / gamma;
    let mut a = sub.to_vec();
    a[0] = 0.0;
    let mut c = sup.to_vec();
    c[n - 1] = 0.0;
    thomas(&a, &b, &c, rhs, cp);
    let z = &mut z[..n];
    z.fill(0.0);
    z[0] = gamma;
    z[n - 1] = sup[n - 1];
    thomas(&a, &b, &c, z, cp);
    let fact = (rhs[0] + sub[0] * rhs[n - 1] / gamma) / (1.0 + z[0] + sub[0] * z[n - 1] / gamma);
    for j in 0..n {
        rhs[j] -= fact * z[j];
    }
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], x: &mut [f64], cp: &mut [f64]) {
    let n = x.len();
    cp[0] = sup[0] / diag[0];
    x[0] /= diag[0];
    for j in 1..n {
        let m = diag[j] - sub[j] * cp[j - 1];
        cp[j] = sup[j] / m;
        x[j] = (x[j] - sub[j] * x[j - 1]) / m;
    }
    for j in (0..n - 1).rev() {
        x[j] -= cp[j] * x[j + 1];
    }
}

/// The step size used from `state` under the configured scheme.
pub fn stable_dt(state: &GridState, fp: &FluxPair, p: &ViscousParams) -> f64 {
    let mut st = Stepper::new(state.n());
    let bounds = st.evaluate(&state.u, fp);
    Stepper::dt(bounds, p, state.dx)
}

/// One conservative step of size [`stable_dt`].
pub fn viscous_step(state: &GridState, fp: &FluxPair, p: &ViscousParams) -> Result<GridState, ViscousError> {
    p.validate()?;
    let mut st = Stepper::new(state.n());
    let bounds = st.evaluate(&state.u, fp);
    let dt = Stepper::dt(bounds, p, state.dx);
    let mut next = state.clone();
    st.step(&mut next, fp, p, dt)?;
    if next.u.iter().any(|v| !v.is_finite()) {
        return Err(ViscousError::BlowUp { t: next.t, max_abs: f64::INFINITY, bound: f64::NAN });
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSnapshot {
    pub t: f64,
    pub state: GridState,
    /// Face values of θ_ε, see [`face_theta`].
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRun {
    pub params: ViscousParams,
    /// Step size of the first step (later steps may differ as the range changes).
    pub dt: f64,
    pub steps: u64,
    pub snapshots: Vec<GridSnapshot>,
    /// Domain integral of u at each snapshot.
    pub mass: Vec<f64>,
}

impl GridRun {
    pub fn profile(&self, i: usize) -> Profile {
        self.snapshots[i].state.to_profile()
    }

    pub fn theta_field(&self, i: usize) -> ThetaField {
        let s = &self.snapshots[i];
        ThetaField::from_samples(s.state.domain, &s.state.face_positions(), &s.theta).expect("face θ lies in [0, 1]")
    }

    pub fn last(&self) -> &GridSnapshot {
        self.snapshots.last().expect("run has snapshots")
    }
}

/// Snapshot times k·every up to t_end, always including 0 and t_end.
pub fn snapshot_schedule(t_end: f64, every: f64) -> Vec<f64> {
    let mut ts = vec![0.0];
    if every > 0.0 {
        let mut k = 1u64;
        loop {
            let t = k as f64 * every;
            if t >= t_end - 1e-12 * t_end.max(1.0) {
                break;
            }
            ts.push(t);
            k += 1;
        }
    }
    if t_end > 0.0 {
        ts.push(t_end);
    }
    ts
}

pub fn run_viscous(p0: &Profile, fp: &FluxPair, params: &ViscousParams) -> Result<GridRun, ViscousError> {
    run_viscous_at(p0, fp, params, &snapshot_schedule(params.t_end, params.snapshot_every))
}

/// Runs to the last of `times` (sorted, starting at 0), landing exactly on each.
pub fn run_viscous_at(p0: &Profile, fp: &FluxPair, params: &ViscousParams, times: &[f64]) -> Result<GridRun, ViscousError> {
    params.validate()?;
    if times.first() != Some(&0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ViscousError::InvalidParams("snapshot times must start at 0 and increase".into()));
    }
    let n = params.cells(&p0.domain())?;
    let mut state = GridState::from_profile(p0, n)?;
    let scale = state.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (lo, hi) = state.u.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let bound = 10.0 * scale.max(hi - lo).max(f64::MIN_POSITIVE);
    let mut st = Stepper::new(n);
    let mut snapshots = Vec::with_capacity(times.len());
    let mut mass = Vec::with_capacity(times.len());
    let mut steps = 0u64;
    let mut first_dt = None;
    let record = |state: &GridState, snaps: &mut Vec<GridSnapshot>, mass: &mut Vec<f64>, t: f64| {
        snaps.push(GridSnapshot { t, state: GridState { t, ..state.clone() }, theta: face_theta(state, params.epsilon) });
        mass.push(state.integral());
    };
    record(&state, &mut snapshots, &mut mass, 0.0);
    for &target in &times[1..] {
        while state.t < target {
            let bounds = st.evaluate(&state.u, fp);
            let mut dt = Stepper::dt(bounds, params, state.dx);
            first_dt.get_or_insert(dt);
            // land on the target; avoid a sliver step just short of it
            if state.t + dt >= target || target - (state.t + dt) < 1e-3 * dt {
                dt = target - state.t;
            }
            st.step(&mut state, fp, params, dt)?;
            if state.t >= target - 1e-15 * target.max(1.0) {
                state.t = target;
            }
            steps += 1;
            if steps.is_multiple_of(64) || state.t == target {
                let max_abs = state.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if !(max_abs <= bound) {
                    return Err(ViscousError::BlowUp { t: state.t, max_abs, bound });
                }
            }
        }
        record(&state, &mut snapshots, &mut mass, target);
    }
    Ok(GridRun {
        params: *params,
        dt: first_dt.unwrap_or(0.0),
        steps,
        snapshots,
        mass,
    })
}
