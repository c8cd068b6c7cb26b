//! Single-jump problems under the two-flux rule: upward jumps are governed by
//! `f`, downward jumps by `g`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envelope::{flux_envelope, lower_hull_indices, EnvelopeKind, SegmentKind};
use crate::flux::{Branch, Flux, FluxError, FluxPair};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiemannError {
    #[error("left and right states are equal ({0})")]
    EqualStates(f64),
    #[error("envelope construction failed: {0}")]
    EnvelopeFailure(#[from] FluxError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Slope equality within this tolerance counts as admissible.
pub const LIU_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaveKind {
    Shock,
    RarefactionStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub speed: f64,
    pub u_before: f64,
    pub u_after: f64,
    pub kind: WaveKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveFan {
    pub u_left: f64,
    pub u_right: f64,
    pub waves: Vec<Wave>,
    pub flux_used: Branch,
}

/// Rankine–Hugoniot speed of the jump, with the flux chosen by the jump sign.
pub fn rh_speed(u_minus: f64, u_plus: f64, fp: &FluxPair) -> Result<f64, RiemannError> {
    if u_minus == u_plus {
        return Err(RiemannError::EqualStates(u_minus));
    }
    let flux = fp.branch(Branch::of_jump(u_minus, u_plus));
    Ok((flux.value(u_plus) - flux.value(u_minus)) / (u_plus - u_minus))
}

fn liu_violated(flux: &Flux, u_minus: f64, full: f64, u_star: f64) -> bool {
    let (fs, fm) = (flux.value(u_star), flux.value(u_minus));
    let d = u_star - u_minus;
    // rounding in the difference quotient grows like eps/|d| near u_minus
    let roundoff = 8.0 * f64::EPSILON * (fs.abs() + fm.abs() + full.abs() * d.abs()) / d.abs();
    (fs - fm) / d < full - LIU_TIE_TOL - roundoff
}

/// Liu chord-slope test for the jump `u_minus -> u_plus` under `flux`.
///
/// Scans `n_scan` uniform intermediate states, then refines geometrically
/// toward both endpoints where a thin violation layer could hide between samples.
pub fn liu_admissible(u_minus: f64, u_plus: f64, flux: &Flux, n_scan: usize) -> Result<bool, RiemannError> {
    if u_minus == u_plus {
        return Err(RiemannError::EqualStates(u_minus));
    }
    if n_scan < 2 {
        return Err(RiemannError::InvalidArgument("n_scan must be >= 2".into()));
    }
    let d = u_plus - u_minus;
    let full = (flux.value(u_plus) - flux.value(u_minus)) / d;
    for k in 1..n_scan {
        if liu_violated(flux, u_minus, full, u_minus + d * k as f64 / n_scan as f64) {
            return Ok(false);
        }
    }
    let step = d / n_scan as f64;
    let mut frac = 0.5;
    for _ in 0..10 {
        if liu_violated(flux, u_minus, full, u_minus + step * frac)
            || liu_violated(flux, u_minus, full, u_plus - step * frac)
        {
            return Ok(false);
        }
        frac *= 0.5;
    }
    Ok(true)
}

/// Liu test against the piecewise-linear interpolant of `flux` on `nodes`
/// (the value grid used by front tracking). Only node states need checking:
/// the chord slope is monotone between consecutive nodes.
pub fn liu_admissible_on_nodes(u_minus: f64, u_plus: f64, flux: &Flux, h: f64) -> bool {
    if u_minus == u_plus {
        return true;
    }
    let d = u_plus - u_minus;
    let full = (flux.value(u_plus) - flux.value(u_minus)) / d;
    grid_nodes_between(u_minus, u_plus, h)
        .into_iter()
        .all(|u| !liu_violated(flux, u_minus, full, u))
}

/// Value-grid nodes k·h strictly between `a` and `b`, ordered from `a` to `b`.
pub fn grid_nodes_between(a: f64, b: f64, h: f64) -> Vec<f64> {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let k_lo = (lo / h).floor() as i64 + 1;
    let k_hi = (hi / h).ceil() as i64 - 1;
    let mut v: Vec<f64> = (k_lo..=k_hi.max(k_lo - 1))
        .map(|k| k as f64 * h)
        .filter(|&u| u > lo && u < hi)
        .collect();
    if a > b {
        v.reverse();
    }
    v
}

/// Entropy fan from the exact envelope of the active flux; arcs are cut into
/// equal rarefaction steps no taller than `rarefaction_step`.
pub fn solve_riemann(u_minus: f64, u_plus: f64, fp: &FluxPair, rarefaction_step: f64) -> Result<WaveFan, RiemannError> {
    if u_minus == u_plus {
        return Err(RiemannError::EqualStates(u_minus));
    }
    if !(rarefaction_step > 0.0) {
        return Err(RiemannError::InvalidArgument("rarefaction_step must be positive".into()));
    }
    let branch = Branch::of_jump(u_minus, u_plus);
    let flux = fp.branch(branch);
    let kind = match branch {
        Branch::F => EnvelopeKind::LowerConvex,
        Branch::G => EnvelopeKind::UpperConcave,
    };
    let env = flux_envelope(flux, u_minus, u_plus, kind, 1e-12)?;
    // walk from u_minus to u_plus
    let mut segs = env.segments.clone();
    if branch == Branch::G {
        segs.reverse();
    }
    let mut waves = Vec::new();
    for s in segs {
        let (from, to) = match branch {
            Branch::F => (s.u0, s.u1),
            Branch::G => (s.u1, s.u0),
        };
        match s.kind {
            SegmentKind::Chord => waves.push(Wave {
                speed: flux.chord_slope(from, to),
                u_before: from,
                u_after: to,
                kind: WaveKind::Shock,
            }),
            SegmentKind::Arc => {
                let n = ((to - from).abs() / rarefaction_step - 1e-9).ceil().max(1.0) as usize;
                for i in 0..n {
                    let a = from + (to - from) * i as f64 / n as f64;
                    let b = if i + 1 == n { to } else { from + (to - from) * (i + 1) as f64 / n as f64 };
                    waves.push(Wave {
                        speed: flux.chord_slope(a, b),
                        u_before: a,
                        u_after: b,
                        kind: WaveKind::RarefactionStep,
                    });
                }
            }
        }
    }
    // pin exact endpoints
    if let Some(w) = waves.first_mut() {
        w.u_before = u_minus;
    }
    if let Some(w) = waves.last_mut() {
        w.u_after = u_plus;
    }
    Ok(WaveFan {
        u_left: u_minus,
        u_right: u_plus,
        waves,
        flux_used: branch,
    })
}

/// Front-tracking fan: the states are restricted to the value grid h·Z plus
/// the two end states, and the fan is the hull of the flux interpolant on
/// those nodes. Every wave speed is an exact Rankine–Hugoniot chord of the
/// true flux.
pub fn solve_riemann_on_grid(u_minus: f64, u_plus: f64, fp: &FluxPair, h: f64) -> Result<WaveFan, RiemannError> {
    if u_minus == u_plus {
        return Err(RiemannError::EqualStates(u_minus));
    }
    let branch = Branch::of_jump(u_minus, u_plus);
    let flux = fp.branch(branch);
    let (lo, hi) = if u_minus < u_plus { (u_minus, u_plus) } else { (u_plus, u_minus) };
    let mut us = Vec::with_capacity(2 + ((hi - lo) / h) as usize);
    us.push(lo);
    us.extend(grid_nodes_between(lo, hi, h));
    us.push(hi);
    let sign = if branch == Branch::F { 1.0 } else { -1.0 };
    let vs: Vec<f64> = us.iter().map(|&u| sign * flux.value(u)).collect();
    let hull = lower_hull_indices(&us, &vs);
    let mut waves: Vec<Wave> = hull
        .windows(2)
        .map(|w| {
            let (a, b) = (us[w[0]], us[w[1]]);
            // chord strictly inside the flux graph side => genuine shock
            let mid = 0.5 * (a + b);
            let chord_mid = 0.5 * (vs[w[0]] + vs[w[1]]);
            let kind = if w[1] - w[0] > 1 || sign * flux.value(mid) >= chord_mid {
                WaveKind::Shock
            } else {
                WaveKind::RarefactionStep
            };
            let (from, to) = if branch == Branch::F { (a, b) } else { (b, a) };
            Wave {
                speed: (flux.value(to) - flux.value(from)) / (to - from),
                u_before: from,
                u_after: to,
                kind,
            }
        })
        .collect();
    if branch == Branch::G {
        waves.reverse();
    }
    Ok(WaveFan {
        u_left: u_minus,
        u_right: u_plus,
        waves,
        flux_used: branch,
    })
}

impl WaveFan {
    pub fn speeds_nondecreasing(&self) -> bool {
        self.waves.windows(2).all(|w| w[1].speed >= w[0].speed - 1e-12)
    }

    pub fn states_chain(&self) -> bool {
        let Some(first) = self.waves.first() else {
            return false;
        };
        first.u_before == self.u_left
            && self.waves.last().unwrap().u_after == self.u_right
            && self.waves.windows(2).all(|w| w[0].u_after == w[1].u_before)
    }
}
