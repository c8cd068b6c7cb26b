//! Event-driven front tracking for the two-flux law.
//!
//! The state is piecewise constant. Fronts move at Rankine–Hugoniot speeds
//! of their branch flux; a piece that is a strict local extremum of finite
//! width is a plateau whose level follows du/dt = ±(g − f)/(b − a), with θ
//! affine across it. Levels are advanced with the conservative update
//! m₁ = m₀ + Δt·c/w₁, so the front motion and the level change together
//! preserve the integral exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{Snapshot, Trajectory};
use crate::flux::{Branch, FluxPair};
use crate::profile::{reconstruct_theta, Domain, Orientation, PlateauSpec, Profile, ProfileError, ThetaField, ThetaNode};
use crate::riemann::{solve_riemann_on_grid, RiemannError};

pub const MAX_EVENTS: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemigroupError {
    #[error("plateau has non-positive width [{0}, {1}]")]
    ZeroWidth(f64, f64),
    #[error("more than {0} events")]
    EventOverflow(u64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Riemann(#[from] RiemannError),
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

/// Whether extremum pieces evolve as plateaus (the semigroup) or keep their
/// level (the single-flux embedded solution used as a negative control).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    Semigroup,
    FrozenExtrema,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Front {
    pub x: f64,
    pub u_left: f64,
    pub u_right: f64,
    pub branch: Branch,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub a: f64,
    pub b: f64,
    pub level: f64,
    pub orientation: Orientation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Collision,
    Absorption,
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub position: f64,
    pub tv_before: f64,
    pub tv_after: f64,
}

/// du/dt of a plateau level: (f − g)/(b − a) on maxima, (g − f)/(b − a) on minima.
pub fn plateau_rate(fp: &FluxPair, level: f64, a: f64, b: f64, orientation: Orientation) -> Result<f64, SemigroupError> {
    if !(b > a) {
        return Err(SemigroupError::ZeroWidth(a, b));
    }
    let c = plateau_numerator(fp, level, orientation);
    Ok(c / (b - a))
}

fn plateau_numerator(fp: &FluxPair, level: f64, orientation: Orientation) -> f64 {
    let gap = fp.g.value(level) - fp.f.value(level);
    match orientation {
        Orientation::Max => -gap,
        Orientation::Min => gap,
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Anchor {
    t: f64,
    xs: Vec<f64>,
    values: Vec<f64>,
}

/// Front-tracking state.
///
/// Piece k lies left of front k. Bounded: `values.len() == xs.len() + 1`
/// and the two end pieces are unbounded. Periodic: `values.len() ==
/// xs.len()` (or 1 when constant) and piece 0 spans from the last front
/// (shifted by −L) to front 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontState {
    domain: Domain,
    h: f64,
    t: f64,
    mode: DynamicsMode,
    xs: Vec<f64>,
    values: Vec<f64>,
    /// Start of the step in progress when `t` falls inside it; resuming
    /// from here makes a stop at `t` invisible to the trajectory.
    origin: Option<Box<Anchor>>,
    events: u64,
}

impl FrontState {
    pub fn constant(domain: Domain, h: f64, c: f64, mode: DynamicsMode) -> FrontState {
        FrontState { domain, h, t: 0.0, mode, xs: vec![], values: vec![c], origin: None, events: 0 }
    }

    /// Builds a state from fronts and pieces (layout as documented on the type).
    pub fn from_parts(domain: Domain, h: f64, t: f64, mode: DynamicsMode, xs: Vec<f64>, values: Vec<f64>) -> Result<FrontState, SemigroupError> {
        let ok_len = if domain.is_periodic() {
            values.len() == xs.len().max(1) && xs.len() != 1
        } else {
            values.len() == xs.len() + 1
        };
        if !ok_len {
            return Err(SemigroupError::InvalidArgument("front/piece counts do not match the domain layout".into()));
        }
        if xs.windows(2).any(|w| w[1] < w[0]) {
            return Err(SemigroupError::InvalidArgument("front positions must be sorted".into()));
        }
        if domain.is_periodic() && xs.len() > 1 && xs[xs.len() - 1] - xs[0] > domain.length() {
            return Err(SemigroupError::InvalidArgument("periodic fronts span more than one period".into()));
        }
        let s = FrontState { domain, h, t, mode, xs, values, origin: None, events: 0 };
        if (0..s.xs.len()).any(|k| s.front_states(k).0 == s.front_states(k).1) {
            return Err(SemigroupError::InvalidArgument("front with equal states".into()));
        }
        Ok(s)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn mode(&self) -> DynamicsMode {
        self.mode
    }

    pub fn positions(&self) -> &[f64] {
        &self.xs
    }

    pub fn piece_values(&self) -> &[f64] {
        &self.values
    }

    pub fn event_count(&self) -> u64 {
        self.events
    }

    fn nf(&self) -> usize {
        self.xs.len()
    }

    fn np(&self) -> usize {
        self.values.len()
    }

    fn front_states(&self, k: usize) -> (f64, f64) {
        (self.values[k], self.values[(k + 1) % self.np()])
    }

    fn left_front(&self, k: usize) -> Option<usize> {
        if self.domain.is_periodic() {
            (self.nf() > 0).then(|| (k + self.nf() - 1) % self.nf())
        } else {
            k.checked_sub(1)
        }
    }

    fn right_front(&self, k: usize) -> Option<usize> {
        (k < self.nf()).then_some(k)
    }

    /// Width of piece k; `None` for unbounded end pieces.
    fn width(&self, k: usize) -> Option<f64> {
        let (l, r) = (self.left_front(k)?, self.right_front(k)?);
        if self.domain.is_periodic() && k == 0 {
            Some(self.xs[r] - (self.xs[l] - self.domain.length()))
        } else {
            Some(self.xs[r] - self.xs[l])
        }
    }

    fn neighbours(&self, k: usize) -> Option<(f64, f64)> {
        let np = self.np();
        if self.domain.is_periodic() {
            (np >= 2).then(|| (self.values[(k + np - 1) % np], self.values[(k + 1) % np]))
        } else {
            (k >= 1 && k + 1 < np).then(|| (self.values[k - 1], self.values[k + 1]))
        }
    }

    fn extremum(&self, k: usize) -> Option<Orientation> {
        let (l, r) = self.neighbours(k)?;
        let v = self.values[k];
        if v > l && v > r {
            Some(Orientation::Max)
        } else if v < l && v < r {
            Some(Orientation::Min)
        } else {
            None
        }
    }

    /// Plateau orientation of piece k, if it is one.
    fn plateau_of(&self, k: usize) -> Option<Orientation> {
        if self.mode != DynamicsMode::Semigroup {
            return None;
        }
        let w = self.width(k)?;
        if w > 0.0 {
            self.extremum(k)
        } else {
            None
        }
    }

    pub fn fronts(&self, fp: &FluxPair) -> Vec<Front> {
        (0..self.nf())
            .map(|k| {
                let (ul, ur) = self.front_states(k);
                let branch = Branch::of_jump(ul, ur);
                Front { x: self.xs[k], u_left: ul, u_right: ur, branch, speed: fp.branch(branch).chord_slope(ul, ur) }
            })
            .collect()
    }

    pub fn plateaus(&self) -> Vec<Plateau> {
        (0..self.np())
            .filter_map(|k| {
                let orientation = self.plateau_of(k)?;
                let (l, r) = (self.left_front(k)?, self.right_front(k)?);
                let a = if self.domain.is_periodic() && k == 0 { self.xs[l] - self.domain.length() } else { self.xs[l] };
                Some(Plateau { a, b: self.xs[r], level: self.values[k], orientation })
            })
            .collect()
    }

    pub fn total_variation(&self) -> f64 {
        (0..self.nf())
            .map(|k| {
                let (l, r) = self.front_states(k);
                (r - l).abs()
            })
            .sum()
    }

    fn anchor(&self) -> Anchor {
        match &self.origin {
            Some(a) => (**a).clone(),
            None => Anchor { t: self.t, xs: self.xs.clone(), values: self.values.clone() },
        }
    }

    fn with_anchor(&self, a: Anchor) -> FrontState {
        FrontState { xs: a.xs, values: a.values, t: a.t, origin: None, ..self.clone() }
    }
}

/// Quantized value k·h nearest to u.
fn quantize(u: f64, h: f64) -> f64 {
    (u / h).round() * h
}

/// Front tracking initial state: sloped parts are rounded to the value grid
/// h·Z with jumps where u crosses half-grid levels, flat parts keep their
/// value, and every jump is replaced by its grid Riemann fan.
pub fn init_fronts(p0: &Profile, fp: &FluxPair, h: f64) -> Result<FrontState, SemigroupError> {
    init_fronts_with(p0, fp, h, DynamicsMode::Semigroup)
}

pub fn init_fronts_with(p0: &Profile, fp: &FluxPair, h: f64, mode: DynamicsMode) -> Result<FrontState, SemigroupError> {
    if !(h > 0.0) {
        return Err(SemigroupError::InvalidArgument("h must be positive".into()));
    }
    let domain = p0.domain();
    let segs = p0.segments();
    let seg_start = |i: usize| -> f64 {
        let s = segs[i];
        if s.u0 == s.u1 {
            s.u0
        } else {
            quantize(s.u0, h)
        }
    };
    let mut jumps: Vec<(f64, f64, f64)> = Vec::new();
    let mut push = |x: f64, a: f64, b: f64| {
        if let Some(last) = jumps.last_mut() {
            if last.0 == x {
                last.2 = b;
                return;
            }
        }
        jumps.push((x, a, b));
    };
    let first = seg_start(0);
    let mut cur = first;
    for (i, s) in segs.iter().enumerate() {
        let v0 = seg_start(i);
        if v0 != cur {
            push(s.x0, cur, v0);
            cur = v0;
        }
        if s.u0 != s.u1 {
            let (k0, k1) = ((s.u0 / h - 0.5).floor() as i64, (s.u1 / h - 0.5).floor() as i64);
            let ks: Vec<i64> = if s.u1 > s.u0 { (k0..=k1).collect() } else { (k1..=k0).rev().collect() };
            for k in ks {
                let level = (k as f64 + 0.5) * h;
                if !(level > s.u0.min(s.u1) && level < s.u0.max(s.u1)) {
                    continue;
                }
                let x = s.x0 + (level - s.u0) / (s.u1 - s.u0) * (s.x1 - s.x0);
                let next = if s.u1 > s.u0 { (k + 1) as f64 * h } else { k as f64 * h };
                if next != cur {
                    push(x, cur, next);
                    cur = next;
                }
            }
        }
    }
    if domain.is_periodic() && cur != first {
        push(segs[0].x0 + domain.length(), cur, first);
    }
    jumps.retain(|j| j.1 != j.2);
    if domain.is_periodic() && jumps.len() >= 2 && jumps[0].0 + domain.length() == jumps.last().unwrap().0 {
        // two jumps at the same periodic point
        let last = jumps.pop().unwrap();
        jumps[0].1 = last.1;
        jumps.retain(|j| j.1 != j.2);
    }
    // each jump is followed by the piece it opens; chain consistency
    let mut state = build_from_jumps(domain, h, 0.0, mode, &jumps, first, fp)?;
    state.t = 0.0;
    Ok(state)
}

/// Rebuilds xs/values from a consistent jump list, replacing each jump by
/// its grid fan. `base` is the value when there are no jumps.
fn build_from_jumps(
    domain: Domain,
    h: f64,
    t: f64,
    mode: DynamicsMode,
    jumps: &[(f64, f64, f64)],
    base: f64,
    fp: &FluxPair,
) -> Result<FrontState, SemigroupError> {
    if jumps.is_empty() {
        return Ok(FrontState { t, ..FrontState::constant(domain, h, base, mode) });
    }
    let mut xs = Vec::new();
    let mut values = vec![jumps[0].1];
    for &(x, a, b) in jumps {
        let fan = solve_riemann_on_grid(a, b, fp, h)?;
        for w in &fan.waves {
            xs.push(x);
            values.push(w.u_after);
        }
    }
    if domain.is_periodic() {
        // last piece value equals the first (wrap)
        values.pop();
    }
    Ok(FrontState { domain, h, t, mode, xs, values, origin: None, events: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pending {
    Collision { piece: usize },
    Annihilation { front: usize },
}

/// Frozen-rate motion from an anchor.
struct Plan {
    speeds: Vec<f64>,
    /// Per piece: (c, w0, dw) for plateaus.
    rates: Vec<Option<(f64, f64, f64)>>,
    dt: f64,
    event: Option<(f64, Pending)>,
}

impl Plan {
    fn level(&self, s: &FrontState, k: usize, tau: f64) -> f64 {
        match self.rates[k] {
            Some((c, w0, dw)) => s.values[k] + tau * c / (w0 + dw * tau),
            None => s.values[k],
        }
    }
}

fn plan(s: &FrontState, fp: &FluxPair) -> Plan {
    let nf = s.nf();
    let np = s.np();
    let fronts = s.fronts(fp);
    let speeds: Vec<f64> = fronts.iter().map(|f| f.speed).collect();
    let mut rates = vec![None; np];
    let mut cap = f64::INFINITY;
    let mut event: Option<(f64, Pending)> = None;
    let better = |cand: (f64, Pending), pos: f64, cur: &Option<(f64, Pending)>, cur_pos: f64| -> bool {
        match cur {
            None => true,
            Some((t, _)) => cand.0 < *t || (cand.0 == *t && pos < cur_pos),
        }
    };
    let mut event_pos = f64::INFINITY;
    for k in 0..np {
        let (Some(l), Some(r)) = (s.left_front(k), s.right_front(k)) else { continue };
        if nf == 0 {
            continue;
        }
        let w0 = s.width(k).unwrap();
        let dw = speeds[r] - speeds[l];
        if let Some(orient) = s.plateau_of(k) {
            let c = plateau_numerator(fp, s.values[k], orient);
            rates[k] = Some((c, w0, dw));
            let w_eff = if dw < 0.0 {
                cap = cap.min(w0 / (2.0 * -dw));
                0.5 * w0
            } else {
                w0
            };
            if c != 0.0 {
                cap = cap.min(0.25 * s.h * w_eff / c.abs());
            }
        } else if dw < 0.0 {
            let tau = (w0 / -dw).max(0.0);
            let pos = s.xs[l] + speeds[l] * tau;
            let cand = (tau, Pending::Collision { piece: k });
            if better(cand, pos, &event, event_pos) {
                event = Some(cand);
                event_pos = pos;
            }
        }
    }
    let mut p = Plan { speeds, rates, dt: cap, event: None };
    let horizon = match event {
        Some((t, _)) => t.min(cap),
        None => cap,
    };
    if horizon.is_finite() {
        for k in 0..nf {
            let (lp, rp) = (k, (k + 1) % np);
            if p.rates[lp].is_none() && p.rates[rp].is_none() {
                continue;
            }
            let d = |tau: f64| p.level(s, lp, tau) - p.level(s, rp, tau);
            let d0 = d(0.0);
            let tau = if d0 == 0.0 {
                0.0
            } else {
                let d1 = d(horizon);
                if d1 != 0.0 && d1.signum() == d0.signum() {
                    continue;
                }
                let (mut a, mut b) = (0.0, horizon);
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    if m <= a || m >= b {
                        break;
                    }
                    let dm = d(m);
                    if dm == 0.0 || dm.signum() != d0.signum() {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                b
            };
            let pos = s.xs[k] + p.speeds[k] * tau;
            let cand = (tau, Pending::Annihilation { front: k });
            if better(cand, pos, &event, event_pos) {
                event = Some(cand);
                event_pos = pos;
            }
        }
    }
    match event {
        Some((t, e)) if t <= cap => {
            p.dt = t;
            p.event = Some((t, e));
        }
        _ => p.dt = cap,
    }
    p
}

/// Moves the anchor state by tau under the plan (fronts linear, plateau
/// levels by the conservative update).
fn materialize(s: &FrontState, p: &Plan, tau: f64) -> (Vec<f64>, Vec<f64>) {
    let mut xs: Vec<f64> = s.xs.iter().zip(&p.speeds).map(|(x, v)| x + v * tau).collect();
    for k in 1..xs.len() {
        if xs[k] < xs[k - 1] {
            xs[k] = xs[k - 1];
        }
    }
    let values = (0..s.np()).map(|k| p.level(s, k, tau)).collect();
    (xs, values)
}

fn jump_list(s: &FrontState) -> Vec<(f64, f64, f64)> {
    (0..s.nf())
        .map(|k| {
            let (a, b) = s.front_states(k);
            (s.xs[k], a, b)
        })
        .collect()
}

/// Applies a pending event to a state already moved to the event time.
/// `plateau` flags the pieces that were plateaus before the move.
fn apply_event(s: &FrontState, e: Pending, plateau: &[bool], fp: &FluxPair) -> Result<(FrontState, Event), SemigroupError> {
    let tv_before = s.total_variation();
    let periodic = s.domain.is_periodic();
    let len = s.domain.length();
    // (x, u_left, u_right, needs a fresh Riemann fan)
    let mut jumps: Vec<(f64, f64, f64, bool)> = jump_list(s).into_iter().map(|(x, a, b)| (x, a, b, false)).collect();
    let mut base = s.values[0];
    let (kind, position) = match e {
        Pending::Collision { piece } => {
            let l = s.left_front(piece).unwrap();
            let r = s.right_front(piece).unwrap();
            let pos = s.xs[r];
            let (ul, ur) = (jumps[l].1, jumps[r].2);
            let (hi, lo) = if l > r { (l, r) } else { (r, l) };
            jumps.remove(hi);
            jumps.remove(lo);
            if ul != ur {
                // a piece wrapping through x = 0 re-enters at the end of the window
                let (x, idx) = if periodic && l > r { (pos + len, jumps.len()) } else { (pos, lo) };
                jumps.insert(idx, (x, ul, ur, true));
            } else {
                let n = jumps.len();
                if n == 0 {
                    base = ul;
                } else if !periodic && lo == 0 {
                    jumps[0].1 = ul;
                }
            }
            (EventKind::Collision, pos)
        }
        Pending::Annihilation { front } => {
            let (lp, rp) = (front, (front + 1) % s.np());
            let (lplat, rplat) = (plateau[lp], plateau[rp]);
            let v = match (s.width(lp), s.width(rp)) {
                (Some(a), Some(b)) if a + b > 0.0 => (s.values[lp] * a + s.values[rp] * b) / (a + b),
                (None, _) => s.values[lp],
                (_, None) => s.values[rp],
                _ => 0.5 * (s.values[lp] + s.values[rp]),
            };
            let kind = if lplat && rplat { EventKind::Merge } else { EventKind::Absorption };
            let pos = s.xs[front];
            jumps.remove(front);
            let n = jumps.len();
            if n == 0 {
                base = v;
            } else {
                let before = if front == 0 { periodic.then_some(n - 1) } else { Some(front - 1) };
                let after = if front < n { Some(front) } else { periodic.then_some(0) };
                if let Some(i) = before {
                    jumps[i].2 = v;
                }
                if let Some(i) = after {
                    jumps[i].1 = v;
                }
            }
            (kind, pos)
        }
    };
    // drop jumps the level snap has reduced to round-off
    let eta = 1e-9 * s.h;
    while let Some(i) = jumps.iter().position(|j| (j.2 - j.1).abs() <= eta) {
        let keep = jumps[i].1;
        jumps.remove(i);
        let n = jumps.len();
        if n == 0 {
            base = keep;
        } else if i < n {
            jumps[i].1 = keep;
        } else if periodic {
            jumps[0].1 = keep;
        }
        if periodic && n > 0 {
            let prev = if i == 0 { n - 1 } else { i - 1 };
            jumps[prev].2 = keep;
        }
    }
    let mut next = rebuild(s, &jumps, base, fp)?;
    next.events = s.events + 1;
    let ev = Event { t: s.t, kind, position: s.domain.wrap(position), tv_before, tv_after: next.total_variation() };
    Ok((next, ev))
}

/// Rebuilds the state from a consistent jump list; flagged jumps are
/// replaced by their grid Riemann fan.
fn rebuild(s: &FrontState, jumps: &[(f64, f64, f64, bool)], base: f64, fp: &FluxPair) -> Result<FrontState, SemigroupError> {
    if jumps.is_empty() {
        return Ok(FrontState { t: s.t, events: s.events, ..FrontState::constant(s.domain, s.h, base, s.mode) });
    }
    let mut xs = Vec::with_capacity(jumps.len() + 4);
    let mut values = vec![jumps[0].1];
    for &(x, a, b, fresh) in jumps {
        if fresh {
            let fan = solve_riemann_on_grid(a, b, fp, s.h)?;
            for w in &fan.waves {
                xs.push(x);
                values.push(w.u_after);
            }
        } else {
            xs.push(x);
            values.push(b);
        }
    }
    if s.domain.is_periodic() {
        values.pop();
        if xs.len() == 1 {
            return Err(SemigroupError::InvalidArgument("inconsistent periodic jump chain".into()));
        }
    }
    Ok(FrontState { domain: s.domain, h: s.h, t: s.t, mode: s.mode, xs, values, origin: None, events: s.events })
}

/// Advances by at most `dt_max`; returns the new state and the events met.
pub fn advance(s: &FrontState, fp: &FluxPair, dt_max: f64) -> Result<(FrontState, Vec<Event>), SemigroupError> {
    let mut events = Vec::new();
    let next = advance_to(s, fp, s.t + dt_max, &mut events)?;
    Ok((next, events))
}

/// Runs to time `t_stop`, appending events to `log`.
pub fn advance_to(s: &FrontState, fp: &FluxPair, t_stop: f64, log: &mut Vec<Event>) -> Result<FrontState, SemigroupError> {
    if t_stop < s.t {
        return Err(SemigroupError::InvalidArgument(format!("cannot advance backwards from {} to {t_stop}", s.t)));
    }
    let mut cur = s.with_anchor(s.anchor());
    loop {
        let p = plan(&cur, fp);
        let t_end = cur.t + p.dt;
        if t_end > t_stop || (p.event.is_none() && !p.dt.is_finite()) {
            if t_stop == cur.t {
                return Ok(cur);
            }
            let (xs, values) = materialize(&cur, &p, t_stop - cur.t);
            let origin = Anchor { t: cur.t, xs: cur.xs.clone(), values: cur.values.clone() };
            return Ok(FrontState { xs, values, t: t_stop, origin: Some(Box::new(origin)), ..cur });
        }
        let (mut xs, values) = materialize(&cur, &p, p.dt);
        if let Some((_, Pending::Collision { piece })) = p.event {
            // make the colliding fronts coincide exactly
            let l = cur.left_front(piece).unwrap();
            let r = cur.right_front(piece).unwrap();
            if l < r {
                xs[r] = xs[l];
            } else {
                xs[l] = xs[r] + cur.domain.length();
            }
        }
        let moved = FrontState { xs, values, t: t_end, origin: None, ..cur.clone() };
        cur = match p.event {
            Some((_, e)) => {
                let plateau: Vec<bool> = p.rates.iter().map(Option::is_some).collect();
                let (next, ev) = apply_event(&moved, e, &plateau, fp)?;
                if next.events > MAX_EVENTS {
                    return Err(SemigroupError::EventOverflow(MAX_EVENTS));
                }
                log.push(ev);
                next
            }
            None => moved,
        };
        if cur.t == t_stop {
            return Ok(cur);
        }
    }
}

/// Piecewise-constant profile of the state (jumps exactly at the fronts).
pub fn snapshot_to_profile(s: &FrontState) -> Profile {
    let d = s.domain;
    if s.nf() == 0 {
        return Profile::constant(d, s.values[0]);
    }
    // coincident fronts collapse into one jump
    let mut jumps: Vec<(f64, f64, f64)> = Vec::new();
    for (x, a, b) in jump_list(s) {
        let x = d.wrap(x);
        match jumps.iter_mut().find(|j| j.0 == x) {
            Some(j) => j.2 = b,
            None => jumps.push((x, a, b)),
        }
    }
    jumps.retain(|j| j.1 != j.2);
    match d {
        Domain::Bounded { x_min, x_max } => {
            let inside: Vec<&(f64, f64, f64)> = jumps.iter().filter(|j| j.0 > x_min && j.0 < x_max).collect();
            let first = jumps.iter().rfind(|j| j.0 <= x_min).map(|j| j.2).unwrap_or(s.values[0]);
            let xs: Vec<f64> = inside.iter().map(|j| j.0).collect();
            let mut vals = vec![first];
            vals.extend(inside.iter().map(|j| j.2));
            Profile::piecewise_constant(d, &xs, &vals).expect("sorted fronts")
        }
        Domain::Periodic { .. } => {
            jumps.sort_by(|a, b| a.0.total_cmp(&b.0));
            if jumps.is_empty() {
                return Profile::constant(d, s.values[0]);
            }
            let xs: Vec<f64> = jumps.iter().map(|j| j.0).collect();
            let vals: Vec<f64> = jumps.iter().map(|j| j.1).collect();
            Profile::piecewise_constant(d, &xs, &vals).expect("consistent periodic jumps")
        }
    }
}

/// θ for the state: affine across plateaus (semigroup), or the embedded
/// single-flux field (θ = 1 with point value 0 at downward fronts).
pub fn snapshot_theta(s: &FrontState, p: &Profile) -> Result<ThetaField, SemigroupError> {
    match s.mode {
        DynamicsMode::Semigroup => {
            let specs: Vec<PlateauSpec> = s
                .plateaus()
                .into_iter()
                .filter(|pl| pl.b - pl.a > 0.0)
                .filter_map(|pl| match s.domain {
                    Domain::Bounded { x_min, x_max } => (pl.b > x_min && pl.a < x_max).then_some((pl.a, pl.b)),
                    Domain::Periodic { .. } => {
                        let a = s.domain.wrap(pl.a);
                        Some((a, a + (pl.b - pl.a)))
                    }
                }
                .map(|(a, b)| PlateauSpec { a, b, orientation: pl.orientation }))
                .collect();
            Ok(reconstruct_theta(p, &specs)?)
        }
        DynamicsMode::FrozenExtrema => Ok(embedded_theta(p)?),
    }
}

/// θ ≡ 1 except for point value 0 at every downward jump of `p`.
pub fn embedded_theta(p: &Profile) -> Result<ThetaField, ProfileError> {
    let d = p.domain();
    let mut nodes: Vec<ThetaNode> = p
        .nodes()
        .iter()
        .map(|n| ThetaNode { x: n.x, left: 1.0, at: if n.u_right < n.u_left { 0.0 } else { 1.0 }, right: 1.0 })
        .collect();
    nodes.dedup_by(|b, a| a.x == b.x);
    ThetaField::new(d, nodes)
}

#[derive(Debug, Clone)]
pub struct SemigroupRun {
    pub trajectory: Trajectory,
    /// Front states at the snapshot times.
    pub states: Vec<FrontState>,
    pub events: Vec<Event>,
}

/// Runs from `p0` and records snapshots at `snapshot_times` (t_end is
/// always included).
pub fn run_semigroup(p0: &Profile, fp: &FluxPair, h: f64, t_end: f64, snapshot_times: &[f64]) -> Result<SemigroupRun, SemigroupError> {
    run_semigroup_with(p0, fp, h, t_end, snapshot_times, DynamicsMode::Semigroup)
}

pub fn run_semigroup_with(
    p0: &Profile,
    fp: &FluxPair,
    h: f64,
    t_end: f64,
    snapshot_times: &[f64],
    mode: DynamicsMode,
) -> Result<SemigroupRun, SemigroupError> {
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(SemigroupError::InvalidArgument("t_end must be finite and >= 0".into()));
    }
    let mut times: Vec<f64> = snapshot_times.iter().copied().filter(|&t| (0.0..=t_end).contains(&t)).collect();
    times.push(t_end);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut state = init_fronts_with(p0, fp, h, mode)?;
    let mut events = Vec::new();
    let mut snaps = Vec::with_capacity(times.len());
    let mut states = Vec::with_capacity(times.len());
    for &t in &times {
        state = advance_to(&state, fp, t, &mut events)?;
        let profile = snapshot_to_profile(&state);
        let theta = snapshot_theta(&state, &profile)?;
        snaps.push(Snapshot { t, profile, theta });
        states.push(state.clone());
    }
    Ok(SemigroupRun { trajectory: Trajectory { snapshots: snaps }, states, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::Flux;
    use crate::profile::{l1_distance, total_variation, Node};
    use crate::riemann::liu_admissible_on_nodes;
    use approx::assert_relative_eq;

    fn bp() -> FluxPair {
        FluxPair::burgers_pair()
    }

    const BOX: Domain = Domain::Bounded { x_min: -1.0, x_max: 1.0 };
    const UNIT: Domain = Domain::Periodic { period: 1.0 };

    #[test]
    fn plateau_rate_examples() {
        assert_eq!(plateau_rate(&bp(), 1.0, 0.0, 0.5, Orientation::Max).unwrap(), -2.0);
        assert_eq!(plateau_rate(&bp(), -1.0, 0.0, 0.25, Orientation::Min).unwrap(), 4.0);
        let fp = FluxPair::from_specs("burgers", "burgers+poly:1+sin:0.1", -3.0, 3.0, 1000).unwrap();
        let r = plateau_rate(&fp, 0.3, 0.0, 1.0, Orientation::Max).unwrap();
        assert_relative_eq!(r, -(1.0 + 0.1 * 0.3f64.sin()), epsilon = 1e-14);
        assert!(matches!(plateau_rate(&bp(), 0.0, 0.5, 0.5, Orientation::Max), Err(SemigroupError::ZeroWidth(..))));
    }

    #[test]
    fn constant_data_has_no_fronts() {
        let s = init_fronts(&Profile::constant(BOX, 0.3), &bp(), 0.1).unwrap();
        assert_eq!(s.fronts(&bp()).len(), 0);
        assert!(s.plateaus().is_empty());
        let run = run_semigroup(&Profile::constant(UNIT, 0.3), &bp(), 0.1, 1.0, &[0.5]).unwrap();
        for sn in &run.trajectory.snapshots {
            assert!(sn.profile.is_constant());
            assert_eq!(sn.profile.eval(0.2), 0.3);
        }
    }

    #[test]
    fn stationary_shock_does_not_move() {
        let p0 = Profile::piecewise_constant(BOX, &[0.0], &[1.0, -1.0]).unwrap();
        let s0 = init_fronts(&p0, &bp(), 0.05).unwrap();
        assert_eq!(s0.fronts(&bp()).len(), 1);
        let (s1, ev) = advance(&s0, &bp(), 0.7).unwrap();
        assert!(ev.is_empty());
        assert_eq!(s1.positions(), &[0.0]);
        assert_eq!(s1.piece_values(), &[1.0, -1.0]);
    }

    #[test]
    fn frozen_flank_plateau_level_is_linear() {
        // fronts far enough that no absorption happens before t = 0.1
        let s = FrontState::from_parts(BOX, 0.01, 0.0, DynamicsMode::Semigroup, vec![0.0, 0.5], vec![-1.0, 1.0, -1.0]).unwrap();
        let fp = FluxPair::from_specs("poly:0", "poly:1", -3.0, 3.0, 100).unwrap();
        let mut log = vec![];
        for k in 0..=10 {
            let t = 0.01 * k as f64;
            let st = advance_to(&s, &fp, t, &mut log).unwrap();
            assert!((st.piece_values()[1] - (1.0 - 2.0 * t)).abs() <= 1e-12);
        }
        assert!(log.is_empty());
    }

    #[test]
    fn max_and_min_plateaus_merge() {
        // zero flux pair with unit gap: fronts stay put, levels approach
        let fp = FluxPair::from_specs("poly:0", "poly:1", -3.0, 3.0, 100).unwrap();
        let s = FrontState::from_parts(UNIT, 0.01, 0.0, DynamicsMode::Semigroup, vec![0.0, 0.5], vec![-0.1, 0.1]).unwrap();
        assert_eq!(s.plateaus().len(), 2);
        let mut log = vec![];
        let end = advance_to(&s, &fp, 1.0, &mut log).unwrap();
        assert!(end.plateaus().is_empty());
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].kind, EventKind::Merge);
        assert_relative_eq!(log[0].t, 0.05, epsilon = 1e-9);
        assert!(end.fronts(&fp).is_empty());
        assert_relative_eq!(end.piece_values()[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn absorption_removes_one_quantum_each_side() {
        let fp = FluxPair::from_specs("poly:0", "poly:1", -3.0, 3.0, 100).unwrap();
        let h = 0.1;
        let s = FrontState::from_parts(BOX, h, 0.0, DynamicsMode::Semigroup, vec![-0.5, -0.25, 0.25, 0.5], vec![0.0, 0.1, 0.2, 0.1, 0.0]).unwrap();
        let tv0 = total_variation(&snapshot_to_profile(&s));
        let mut log = vec![];
        // the top plateau falls at rate 2 and lands on both neighbours at t = 0.05
        let end = advance_to(&s, &fp, 0.1, &mut log).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].kind, EventKind::Absorption);
        assert_relative_eq!(log[0].t, 0.05, epsilon = 1e-9);
        assert!(log[0].tv_after <= log[0].tv_before + 1e-12);
        let at = advance_to(&s, &fp, log[0].t, &mut vec![]).unwrap();
        assert_relative_eq!(tv0 - total_variation(&snapshot_to_profile(&at)), 2.0 * h, epsilon = 1e-9);
        // merged plateau of width 1 keeps falling at rate 1
        assert_eq!(end.plateaus().len(), 1);
        assert_relative_eq!(end.plateaus()[0].level, 0.05, epsilon = 1e-9);
    }

    #[test]
    fn example_data_initialization() {
        let d = Domain::Bounded { x_min: -5.0, x_max: 5.0 };
        let p0 = crate::runner::example11_profile(4000);
        let s = init_fronts(&p0, &bp(), 0.05).unwrap();
        let pl = s.plateaus();
        assert_eq!(pl.len(), 2);
        assert_eq!(pl[0].orientation, Orientation::Max);
        assert_eq!(pl[1].orientation, Orientation::Min);
        assert_eq!(pl[0].level, 1.0);
        assert_eq!(pl[1].level, -1.0);
        let fr = s.fronts(&bp());
        let g: Vec<&Front> = fr.iter().filter(|f| f.branch == Branch::G).collect();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].x, 0.0);
        assert_eq!(g[0].speed, 0.0);
        assert_eq!(p0.domain(), d);
    }

    #[test]
    fn sine_initialization_plateaus() {
        let p0 = Profile::sample_fn(UNIT, 1000, |x| 0.5 * (2.0 * std::f64::consts::PI * x).sin()).unwrap();
        let s = init_fronts(&p0, &bp(), 0.1).unwrap();
        let pl = s.plateaus();
        assert_eq!(pl.len(), 2);
        let levels: Vec<f64> = pl.iter().map(|p| p.level).collect();
        assert!(levels.contains(&0.5) && levels.contains(&-0.5));
        // closed-form quantization oracle: the top piece is where sin > 0.45/0.5
        let top = pl.iter().find(|p| p.orientation == Orientation::Max).unwrap();
        let half = (0.9f64).asin() / (2.0 * std::f64::consts::PI);
        assert!((top.a - half).abs() < 1e-5);
        assert!((top.b - (0.5 - half)).abs() < 1e-5);
        // 10 quanta up and 10 down
        assert_eq!(s.fronts(&bp()).len(), 20);
    }

    #[test]
    fn semigroup_property_is_bit_exact() {
        let p0 = Profile::sample_fn(UNIT, 200, |x| 0.5 * (2.0 * std::f64::consts::PI * x).sin()).unwrap();
        let direct = run_semigroup(&p0, &bp(), 0.05, 0.4, &[]).unwrap();
        let split = run_semigroup(&p0, &bp(), 0.05, 0.4, &[0.1, 0.17, 0.3]).unwrap();
        assert_eq!(direct.states.last().unwrap().positions(), split.states.last().unwrap().positions());
        assert_eq!(direct.states.last().unwrap().piece_values(), split.states.last().unwrap().piece_values());
    }

    #[test]
    fn single_branch_matches_classical_burgers() {
        // g = f: plain Burgers front tracking; rarefaction oracle u = x/t
        let fp = FluxPair::unchecked(Flux::burgers(), Flux::burgers(), -3.0, 3.0);
        let p0 = Profile::piecewise_constant(BOX, &[0.0], &[-0.5, 0.5]).unwrap();
        let run = run_semigroup_with(&p0, &fp, 0.01, 0.5, &[], DynamicsMode::FrozenExtrema).unwrap();
        let exact = Profile::sample_fn(BOX, 4000, |x| (x / 0.5).clamp(-0.5, 0.5)).unwrap();
        let err = l1_distance(&run.trajectory.snapshots.last().unwrap().profile, &exact).unwrap();
        assert!(err < 0.01, "{err}");
    }

    #[test]
    fn fronts_are_rh_and_admissible_along_a_run() {
        let p0 = Profile::new(
            BOX,
            vec![Node::smooth(-1.0, 0.0), Node::smooth(-0.3, 0.8), Node { x: 0.1, u_left: 0.6, u_right: -0.4 }, Node::smooth(1.0, 0.2)],
        )
        .unwrap();
        let run = run_semigroup(&p0, &bp(), 0.05, 0.6, &[0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        for st in &run.states {
            for f in st.fronts(&bp()) {
                let flux = bp();
                let h = flux.branch(f.branch);
                assert!((f.speed - (h.value(f.u_right) - h.value(f.u_left)) / (f.u_right - f.u_left)).abs() < 1e-12);
                assert!(liu_admissible_on_nodes(f.u_left, f.u_right, h, 0.05));
            }
        }
        let tvs: Vec<f64> = run.trajectory.snapshots.iter().map(|s| total_variation(&s.profile)).collect();
        assert!(tvs.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{tvs:?}");
    }
}
