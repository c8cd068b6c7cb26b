//! Trajectory-level checks: L1 contraction, the restart defect, TV decay,
//! plateau count, conservation and θ continuity.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flux::FluxPair;
use crate::profile::{l1_distance, theta_discontinuity, total_variation, Domain, Profile, ProfileError, ThetaField};
use crate::riemann::liu_admissible_on_nodes;
use crate::semigroup::{run_semigroup, FrontState, SemigroupError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagnosticsError {
    #[error("snapshot mismatch: {0}")]
    SnapshotMismatch(String),
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Semigroup(#[from] SemigroupError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub profile: Profile,
    pub theta: ThetaField,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn last(&self) -> &Snapshot {
        self.snapshots.last().expect("non-empty trajectory")
    }

    /// Snapshot at exactly time t, if recorded.
    pub fn at(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().find(|s| s.t == t)
    }
}

fn check_matching(u: &Trajectory, v: &Trajectory) -> Result<(), DiagnosticsError> {
    if u.snapshots.is_empty() || u.snapshots.len() != v.snapshots.len() {
        return Err(DiagnosticsError::SnapshotMismatch(format!(
            "{} vs {} snapshots",
            u.snapshots.len(),
            v.snapshots.len()
        )));
    }
    for (a, b) in u.snapshots.iter().zip(&v.snapshots) {
        if a.t != b.t {
            return Err(DiagnosticsError::SnapshotMismatch(format!("times {} vs {}", a.t, b.t)));
        }
    }
    Ok(())
}

/// (t, ‖u(t) − v(t)‖₁) at the common snapshot times.
pub fn l1_series(u: &Trajectory, v: &Trajectory) -> Result<Vec<(f64, f64)>, DiagnosticsError> {
    check_matching(u, v)?;
    u.snapshots
        .iter()
        .zip(&v.snapshots)
        .map(|(a, b)| Ok((a.t, l1_distance(&a.profile, &b.profile)?)))
        .collect()
}

/// (t, ‖u(t) − v(t)‖₁ − ‖u(0) − v(0)‖₁).
pub fn contraction_gap(u: &Trajectory, v: &Trajectory) -> Result<Vec<(f64, f64)>, DiagnosticsError> {
    let series = l1_series(u, v)?;
    let d0 = series[0].1;
    Ok(series.into_iter().map(|(t, d)| (t, d - d0)).collect())
}

/// For each snapshot τ (except the last): restart the front-tracking
/// semigroup from traj(τ), run it to the next snapshot time τ + Δt and
/// return ‖traj(τ + Δt) − S_Δt traj(τ)‖₁ / Δt.
pub fn semigroup_defect(traj: &Trajectory, fp: &FluxPair, h_reference: f64) -> Result<Vec<(f64, f64)>, DiagnosticsError> {
    traj.snapshots
        .windows(2)
        .map(|w| {
            let dt = w[1].t - w[0].t;
            if !(dt > 0.0) {
                return Err(DiagnosticsError::SnapshotMismatch("snapshot times must increase".into()));
            }
            let run = run_semigroup(&w[0].profile, fp, h_reference, dt, &[])?;
            let restarted = &run.trajectory.last().profile;
            Ok((w[0].t, l1_distance(&w[1].profile, restarted)? / dt))
        })
        .collect()
}

/// Interior constant stretches of positive length that are strict local
/// extrema.
pub fn plateau_count(p: &Profile) -> usize {
    // sequence of (direction, is_flat_length) items in domain order
    let segs = p.segments();
    let mut dirs: Vec<i8> = Vec::new();
    for (i, n) in p.nodes().iter().enumerate() {
        if n.u_right != n.u_left {
            dirs.push(if n.u_right > n.u_left { 1 } else { -1 });
        }
        if let Some(s) = segs.get(i) {
            let d = s.u1 - s.u0;
            dirs.push(if d > 0.0 {
                1
            } else if d < 0.0 {
                -1
            } else {
                0
            });
        }
    }
    let m = dirs.len();
    let periodic = p.domain().is_periodic();
    if dirs.iter().all(|&d| d == 0) {
        return 0;
    }
    let start = if periodic { dirs.iter().position(|&d| d != 0).unwrap() } else { 0 };
    let seq: Vec<i8> = (0..m).map(|k| dirs[(start + k) % m]).collect();
    let mut count = 0;
    let mut k = 0;
    while k < m {
        if seq[k] != 0 {
            k += 1;
            continue;
        }
        let k0 = k;
        while k < m && seq[k] == 0 {
            k += 1;
        }
        let left = if k0 > 0 { Some(seq[k0 - 1]) } else if periodic { Some(seq[m - 1]) } else { None };
        let right = if k < m { Some(seq[k]) } else if periodic { Some(seq[0]) } else { None };
        if let (Some(l), Some(r)) = (left, right) {
            if l != r {
                count += 1;
            }
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Allowed TV increase between snapshots.
    pub tv_tol: f64,
    /// Allowed conservation drift per unit time.
    pub conservation_rate: f64,
    pub theta_jump_max: f64,
    pub theta_scale: f64,
}

impl Thresholds {
    /// Semigroup runs with value quantum h: drift 10·h per unit time, θ
    /// jump threshold 0.6 at the given scale.
    pub fn for_semigroup(h: f64, theta_scale: f64) -> Thresholds {
        Thresholds { tv_tol: 1e-12, conservation_rate: 10.0 * h, theta_jump_max: 0.6, theta_scale }
    }

    /// Grid runs: drift 10·dx per unit time, θ jump threshold 0.6 at scale 4·dx.
    pub fn for_grid(dx: f64) -> Thresholds {
        Thresholds { tv_tol: 1e-12, conservation_rate: 10.0 * dx, theta_jump_max: 0.6, theta_scale: 4.0 * dx }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub tv: f64,
    pub integral: f64,
    /// |∫u(t) − ∫u(0) + boundary outflow| (outflow is zero on periodic domains).
    pub drift: f64,
    pub plateau_count: usize,
    pub theta_max_jump: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub tv_nonincreasing: bool,
    pub plateau_count_nonincreasing: bool,
    pub conservation_ok: bool,
    pub theta_continuous: bool,
}

impl Flags {
    pub fn all(&self) -> bool {
        self.tv_nonincreasing && self.plateau_count_nonincreasing && self.conservation_ok && self.theta_continuous
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub scenario: String,
    pub thresholds: Thresholds,
    pub series: Vec<SeriesPoint>,
    /// (t, L1 distance) when two runs are compared.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pairwise: Option<Vec<(f64, f64)>>,
    pub flags: Flags,
}

fn boundary_flux(s: &Snapshot, fp: &FluxPair, x: f64, from_left: bool) -> f64 {
    let u = if from_left { s.profile.left_limit(x) } else { s.profile.right_limit(x) };
    let th = s.theta.eval(x);
    fp.blended(th, u)
}

/// Fills the per-snapshot series and sets the flags.
pub fn structural_checks(scenario: &str, traj: &Trajectory, fp: &FluxPair, th: Thresholds) -> DiagnosticsReport {
    let mut series = Vec::with_capacity(traj.snapshots.len());
    let i0 = traj.snapshots.first().map(|s| s.profile.integral()).unwrap_or(0.0);
    let mut outflow = 0.0;
    let mut prev_flux: Option<(f64, f64)> = None;
    for s in &traj.snapshots {
        let net = match s.profile.domain() {
            Domain::Periodic { .. } => 0.0,
            Domain::Bounded { x_min, x_max } => boundary_flux(s, fp, x_max, true) - boundary_flux(s, fp, x_min, false),
        };
        if let Some((t_prev, f_prev)) = prev_flux {
            outflow += 0.5 * (net + f_prev) * (s.t - t_prev);
        }
        prev_flux = Some((s.t, net));
        let integral = s.profile.integral();
        series.push(SeriesPoint {
            t: s.t,
            tv: total_variation(&s.profile),
            integral,
            drift: (integral - i0 + outflow).abs(),
            plateau_count: plateau_count(&s.profile),
            theta_max_jump: theta_discontinuity(&s.theta, th.theta_scale),
        });
    }
    let flags = flags_for(&series, &th);
    DiagnosticsReport { scenario: scenario.to_string(), thresholds: th, series, pairwise: None, flags }
}

/// Flags as a pure function of the series and thresholds.
pub fn flags_for(series: &[SeriesPoint], th: &Thresholds) -> Flags {
    let t0 = series.first().map(|p| p.t).unwrap_or(0.0);
    Flags {
        tv_nonincreasing: series.windows(2).all(|w| w[1].tv <= w[0].tv + th.tv_tol),
        plateau_count_nonincreasing: series.windows(2).all(|w| w[1].plateau_count <= w[0].plateau_count),
        conservation_ok: series.iter().all(|p| p.drift <= th.conservation_rate * (p.t - t0) + 1e-12),
        theta_continuous: series.iter().all(|p| p.theta_max_jump <= th.theta_jump_max),
    }
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let yn = |b: bool| if b { "ok" } else { "FAIL" };
        writeln!(out, "scenario {}", self.scenario).unwrap();
        writeln!(out, "{:>10} {:>12} {:>14} {:>10} {:>8} {:>10}", "t", "TV", "integral", "drift", "plateaus", "theta_jump").unwrap();
        for p in &self.series {
            writeln!(
                out,
                "{:>10.4} {:>12.6} {:>14.8} {:>10.2e} {:>8} {:>10.4}",
                p.t, p.tv, p.integral, p.drift, p.plateau_count, p.theta_max_jump
            )
            .unwrap();
        }
        if let Some(pw) = &self.pairwise {
            writeln!(out, "pairwise L1:").unwrap();
            for (t, d) in pw {
                writeln!(out, "{t:>10.4} {d:>12.6e}").unwrap();
            }
        }
        let f = &self.flags;
        writeln!(
            out,
            "tv_nonincreasing {}  plateau_count_nonincreasing {}  conservation {}  theta_continuous {}",
            yn(f.tv_nonincreasing),
            yn(f.plateau_count_nonincreasing),
            yn(f.conservation_ok),
            yn(f.theta_continuous)
        )
        .unwrap();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontCheck {
    pub fronts: usize,
    pub max_rh_residual: f64,
    pub liu_failures: usize,
}

/// RH residual and Liu admissibility (on the value grid of each state) of
/// every front.
pub fn front_checks(states: &[FrontState], fp: &FluxPair) -> FrontCheck {
    let mut out = FrontCheck { fronts: 0, max_rh_residual: 0.0, liu_failures: 0 };
    for s in states {
        for f in s.fronts(fp) {
            let flux = fp.branch(f.branch);
            let rh = (flux.value(f.u_right) - flux.value(f.u_left)) / (f.u_right - f.u_left);
            out.fronts += 1;
            out.max_rh_residual = out.max_rh_residual.max((f.speed - rh).abs());
            if !liu_admissible_on_nodes(f.u_left, f.u_right, flux, s.h()) {
                out.liu_failures += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{Domain, ThetaField};
    use crate::semigroup::run_semigroup;

    const UNIT: Domain = Domain::Periodic { period: 1.0 };

    fn constant_traj(c: f64, times: &[f64]) -> Trajectory {
        Trajectory {
            snapshots: times
                .iter()
                .map(|&t| Snapshot { t, profile: Profile::constant(UNIT, c), theta: ThetaField::constant(UNIT, 1.0) })
                .collect(),
        }
    }

    #[test]
    fn gap_of_identical_and_constant_trajectories() {
        let a = constant_traj(0.2, &[0.0, 0.5, 1.0]);
        assert!(contraction_gap(&a, &a).unwrap().iter().all(|p| p.1 == 0.0));
        let b = constant_traj(-0.3, &[0.0, 0.5, 1.0]);
        assert!(contraction_gap(&a, &b).unwrap().iter().all(|p| p.1 == 0.0));
        let c = constant_traj(-0.3, &[0.0, 0.4, 1.0]);
        assert!(matches!(contraction_gap(&a, &c), Err(DiagnosticsError::SnapshotMismatch(_))));
    }

    #[test]
    fn shifted_shocks_keep_their_distance() {
        let fp = FluxPair::burgers_pair();
        let d = Domain::Bounded { x_min: -1.0, x_max: 1.0 };
        let times = [0.1, 0.2, 0.3];
        let p = Profile::piecewise_constant(d, &[-0.1], &[0.8, -0.4]).unwrap();
        let q = Profile::piecewise_constant(d, &[0.1], &[0.8, -0.4]).unwrap();
        let h = 0.02;
        let a = run_semigroup(&p, &fp, h, 0.3, &times).unwrap();
        let b = run_semigroup(&q, &fp, h, 0.3, &times).unwrap();
        let gap = contraction_gap(&a.trajectory, &b.trajectory).unwrap();
        assert!(gap.iter().all(|p| p.1 <= 10.0 * h), "{gap:?}");
    }

    #[test]
    fn constant_trajectory_defect_is_zero_and_checks_pass() {
        let a = constant_traj(0.2, &[0.0, 0.1, 0.2]);
        let fp = FluxPair::burgers_pair();
        assert!(semigroup_defect(&a, &fp, 0.02).unwrap().iter().all(|p| p.1 == 0.0));
        let rep = structural_checks("const", &a, &fp, Thresholds::for_semigroup(0.02, 0.05));
        assert!(rep.flags.all());
        let again = structural_checks("const", &a, &fp, Thresholds::for_semigroup(0.02, 0.05));
        assert_eq!(rep, again);
    }

    #[test]
    fn plateau_counting() {
        let d = Domain::Bounded { x_min: 0.0, x_max: 1.0 };
        let p = Profile::piecewise_constant(d, &[0.2, 0.4, 0.6, 0.8], &[0.0, 1.0, 0.5, 0.7, 0.1]).unwrap();
        assert_eq!(plateau_count(&p), 3);
        let q = Profile::piecewise_constant(UNIT, &[0.2, 0.6], &[0.0, 1.0]).unwrap();
        assert_eq!(plateau_count(&q), 2);
        assert_eq!(plateau_count(&Profile::constant(UNIT, 1.0)), 0);
    }
}
