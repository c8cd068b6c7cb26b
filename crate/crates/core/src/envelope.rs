//! Convex/concave envelopes of a flux over a state interval.
//!
//! The envelope is stored as alternating arcs (where it coincides with the
//! flux) and chords (straight bridges). Construction samples the graph, takes
//! the monotone-chain hull, doubles the sampling until successive envelopes
//! agree to `tol`, then polishes every interior chord endpoint to the exact
//! tangency.

use serde::{Deserialize, Serialize};

use crate::flux::{Flux, FluxError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeKind {
    LowerConvex,
    UpperConcave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentKind {
    Arc,
    Chord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSegment {
    pub kind: SegmentKind,
    pub u0: f64,
    pub u1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub kind: EnvelopeKind,
    /// Source interval as given (may be decreasing).
    pub u_a: f64,
    pub u_b: f64,
    /// Segments ordered by increasing u, covering [min(u_a,u_b), max(u_a,u_b)].
    pub segments: Vec<EnvelopeSegment>,
    /// (u, value) at every segment boundary, increasing in u.
    pub breakpoints: Vec<(f64, f64)>,
}

const START_SAMPLES: usize = 257;
const MAX_SAMPLES: usize = 1 << 18;

pub fn flux_envelope(flux: &Flux, u_a: f64, u_b: f64, kind: EnvelopeKind, tol: f64) -> Result<Envelope, FluxError> {
    let (lo, hi) = if u_a < u_b { (u_a, u_b) } else { (u_b, u_a) };
    let scale = lo.abs().max(hi.abs()).max(1.0);
    if !(hi - lo > 64.0 * f64::EPSILON * scale) {
        return Err(FluxError::DegenerateInterval(u_a, u_b));
    }
    let sign = match kind {
        EnvelopeKind::LowerConvex => 1.0,
        EnvelopeKind::UpperConcave => -1.0,
    };
    let h = |u: f64| sign * flux.value(u);
    let dh = |u: f64| (sign * flux.derivative(u), sign * flux.second_derivative(u));

    let mut n = START_SAMPLES;
    let mut segs = hull_segments(&h, lo, hi, n);
    while n < MAX_SAMPLES {
        let n2 = 2 * n - 1;
        let segs2 = hull_segments(&h, lo, hi, n2);
        let diff = sup_difference(&h, &segs, &segs2, lo, hi, 4 * n2);
        segs = segs2;
        n = n2;
        if diff < tol {
            break;
        }
    }
    polish_tangencies(&h, &dh, &mut segs, lo, hi);

    let mut breakpoints = Vec::with_capacity(segs.len() + 1);
    breakpoints.push((segs[0].u0, flux.value(segs[0].u0)));
    for s in &segs {
        breakpoints.push((s.u1, flux.value(s.u1)));
    }
    Ok(Envelope {
        kind,
        u_a,
        u_b,
        segments: segs,
        breakpoints,
    })
}

impl Envelope {
    pub fn lo(&self) -> f64 {
        self.u_a.min(self.u_b)
    }

    pub fn hi(&self) -> f64 {
        self.u_a.max(self.u_b)
    }

    /// Envelope value at `u` (clamped to the interval).
    pub fn eval(&self, flux: &Flux, u: f64) -> f64 {
        let u = u.clamp(self.lo(), self.hi());
        let idx = self
            .segments
            .partition_point(|s| s.u1 < u)
            .min(self.segments.len() - 1);
        let s = &self.segments[idx];
        match s.kind {
            SegmentKind::Arc => flux.value(u),
            SegmentKind::Chord => {
                let (f0, f1) = (flux.value(s.u0), flux.value(s.u1));
                f0 + (f1 - f0) * (u - s.u0) / (s.u1 - s.u0)
            }
        }
    }

    /// Slopes along the envelope sampled at breakpoints and chord interiors,
    /// in increasing u. Monotone for a valid envelope.
    pub fn slope_sequence(&self, flux: &Flux) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.segments {
            match s.kind {
                SegmentKind::Arc => {
                    for i in 0..=8 {
                        out.push(flux.derivative(s.u0 + (s.u1 - s.u0) * i as f64 / 8.0));
                    }
                }
                SegmentKind::Chord => out.push(flux.chord_slope(s.u0, s.u1)),
            }
        }
        out
    }
}

/// Lower hull of the sampled graph of `h` on [lo, hi] as arc/chord segments.
fn hull_segments(h: &impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Vec<EnvelopeSegment> {
    let us: Vec<f64> = (0..n)
        .map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
        .collect();
    let vs: Vec<f64> = us.iter().map(|&u| h(u)).collect();
    let hull = lower_hull_indices(&us, &vs);
    let mut segs: Vec<EnvelopeSegment> = Vec::new();
    for w in hull.windows(2) {
        let kind = if w[1] - w[0] == 1 { SegmentKind::Arc } else { SegmentKind::Chord };
        let seg = EnvelopeSegment { kind, u0: us[w[0]], u1: us[w[1]] };
        match segs.last_mut() {
            Some(last) if last.kind == SegmentKind::Arc && kind == SegmentKind::Arc => last.u1 = seg.u1,
            _ => segs.push(seg),
        }
    }
    segs
}

/// Andrew's monotone chain, lower part, on points sorted by abscissa.
pub(crate) fn lower_hull_indices(xs: &[f64], ys: &[f64]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

fn eval_segments(h: &impl Fn(f64) -> f64, segs: &[EnvelopeSegment], u: f64) -> f64 {
    let idx = segs.partition_point(|s| s.u1 < u).min(segs.len() - 1);
    let s = &segs[idx];
    match s.kind {
        SegmentKind::Arc => h(u),
        SegmentKind::Chord => {
            let (a, b) = (h(s.u0), h(s.u1));
            a + (b - a) * (u - s.u0) / (s.u1 - s.u0)
        }
    }
}

fn sup_difference(
    h: &impl Fn(f64) -> f64,
    a: &[EnvelopeSegment],
    b: &[EnvelopeSegment],
    lo: f64,
    hi: f64,
    n: usize,
) -> f64 {
    (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .map(|u| (eval_segments(h, a, u) - eval_segments(h, b, u)).abs())
        .fold(0.0, f64::max)
}

/// Golden-section search for the maximiser (`maximise`) or minimiser of `phi` on [a, b].
fn golden(phi: impl Fn(f64) -> f64, mut a: f64, mut b: f64, maximise: bool) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let sgn = if maximise { -1.0 } else { 1.0 };
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (sgn * phi(c), sgn * phi(d));
    for _ in 0..200 {
        if (b - a).abs() <= 4.0 * f64::EPSILON * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = sgn * phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = sgn * phi(d);
        }
    }
    0.5 * (a + b)
}

/// Maximiser of `phi` on [a, b]: a uniform scan, then golden section around the best sample.
fn scan_max(phi: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    const N: usize = 64;
    let at = |k: usize| a + (b - a) * k as f64 / N as f64;
    let best = (0..=N).max_by(|&i, &j| phi(at(i)).total_cmp(&phi(at(j)))).unwrap();
    golden(&phi, at(best.saturating_sub(1)), at((best + 1).min(N)), true)
}

/// Move chord endpoints onto exact tangency points of the lower hull. A
/// chord ending at the interval boundary is also checked for a tangency
/// closer to the boundary than the sampling resolved; an arc is inserted
/// when one is found.
fn polish_tangencies(h: &impl Fn(f64) -> f64, dh: &impl Fn(f64) -> (f64, f64), segs: &mut Vec<EnvelopeSegment>, lo: f64, hi: f64) {
    let slope = |a: f64, b: f64| (h(b) - h(a)) / (b - a);
    // golden section leaves the tangency ~sqrt(eps) off; Newton on
    // h'(u) = slope(u, other) finishes it (the derivative there is h'')
    let newton = |mut u: f64, other: f64, a: f64, b: f64| {
        for _ in 0..8 {
            let (d1, d2) = dh(u);
            if d2.abs() < 1e-300 {
                break;
            }
            let next = u - (d1 - slope(u, other)) / d2;
            if !(next > a && next < b) || next == u {
                break;
            }
            u = next;
        }
        u
    };
    // slope gains below this are round-off
    const GAIN: f64 = 1e-13;
    let mut i = 0;
    while i < segs.len() {
        if segs[i].kind != SegmentKind::Chord {
            i += 1;
            continue;
        }
        let left_bound = if i > 0 { segs[i - 1].u0 } else { lo };
        let right_bound = if i + 1 < segs.len() { segs[i + 1].u1 } else { hi };
        let (mut p, mut q) = (segs[i].u0, segs[i].u1);
        let width = q - p;
        for _ in 0..40 {
            let (p_old, q_old) = (p, q);
            if p > lo {
                // tangent point seen from q: maximiser of slope(u, q) for u < q
                let a = (p - 0.25 * width).max(left_bound);
                let b = (p + 0.25 * width).min(q - 1e-3 * width);
                p = newton(golden(|u| slope(u, q), a, b, true), q, a.min(p), b);
            } else {
                let u = scan_max(|u| slope(u, q), lo, lo + 0.25 * (q - lo));
                if u > lo && slope(u, q) > slope(lo, q) + GAIN {
                    p = newton(u, q, lo, q);
                }
            }
            if q < hi {
                let a = (q - 0.25 * width).max(p + 1e-3 * width);
                let b = (q + 0.25 * width).min(right_bound);
                q = newton(golden(|u| slope(p, u), a, b, false), p, a, b.max(q));
            } else {
                let u = scan_max(|u| -slope(p, u), hi - 0.25 * (hi - p), hi);
                if u < hi && slope(p, u) < slope(p, hi) - GAIN {
                    q = newton(u, p, p, hi);
                }
            }
            if (p - p_old).abs() + (q - q_old).abs() <= 1e-15 * width.max(1.0) {
                break;
            }
        }
        segs[i].u0 = p;
        segs[i].u1 = q;
        if i > 0 {
            segs[i - 1].u1 = p;
        } else if p > lo {
            segs.insert(0, EnvelopeSegment { kind: SegmentKind::Arc, u0: lo, u1: p });
            i += 1;
        }
        if i + 1 < segs.len() {
            segs[i + 1].u0 = q;
        } else if q < hi {
            segs.push(EnvelopeSegment { kind: SegmentKind::Arc, u0: q, u1: hi });
        }
        i += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_lower_hull_value(flux: &Flux, lo: f64, hi: f64, n: usize, u: f64) -> f64 {
        // monotone chain on a dense sampling, evaluated by linear interpolation
        let us: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        let vs: Vec<f64> = us.iter().map(|&x| flux.value(x)).collect();
        let hull = lower_hull_indices(&us, &vs);
        for w in hull.windows(2) {
            let (a, b) = (us[w[0]], us[w[1]]);
            if u >= a && u <= b {
                return vs[w[0]] + (vs[w[1]] - vs[w[0]]) * (u - a) / (b - a);
            }
        }
        unreachable!()
    }

    #[test]
    fn convex_flux_is_its_own_lower_envelope() {
        let f = Flux::burgers();
        let env = flux_envelope(&f, -1.0, 1.0, EnvelopeKind::LowerConvex, 1e-10).unwrap();
        assert_eq!(env.segments.len(), 1);
        assert_eq!(env.segments[0].kind, SegmentKind::Arc);
        assert_eq!(env.breakpoints, vec![(-1.0, 0.5), (1.0, 0.5)]);
        for i in 0..=100 {
            let u = -1.0 + 0.02 * i as f64;
            assert!((env.eval(&f, u) - f.value(u)).abs() < 1e-10);
        }
    }

    #[test]
    fn concave_envelope_of_convex_flux_is_the_chord() {
        let f = Flux::burgers();
        let env = flux_envelope(&f, 1.0, -1.0, EnvelopeKind::UpperConcave, 1e-10).unwrap();
        assert_eq!(env.segments.len(), 1);
        assert_eq!(env.segments[0].kind, SegmentKind::Chord);
        assert_eq!(env.breakpoints, vec![(-1.0, 0.5), (1.0, 0.5)]);
        // chord lies above the flux on 1e4 points
        for i in 0..=10_000 {
            let u = -1.0 + 2.0 * i as f64 / 10_000.0;
            assert!(env.eval(&f, u) >= f.value(u) - 1e-15);
            assert!((env.eval(&f, u) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn double_well_gets_flat_bridge() {
        let f = Flux::parse("poly:0,0,-0.5,0,0.25").unwrap();
        let env = flux_envelope(&f, -1.2, 1.2, EnvelopeKind::LowerConvex, 1e-9).unwrap();
        let kinds: Vec<_> = env.segments.iter().map(|s| s.kind).collect();
        assert_eq!(kinds, vec![SegmentKind::Arc, SegmentKind::Chord, SegmentKind::Arc]);
        let bridge = env.segments[1];
        assert!((bridge.u0 + 1.0).abs() < 1e-7 && (bridge.u1 - 1.0).abs() < 1e-7);
        assert!(f.chord_slope(bridge.u0, bridge.u1).abs() < 1e-12);
        for i in 0..=1000 {
            let u = -1.2 + 2.4 * i as f64 / 1000.0;
            let oracle = brute_lower_hull_value(&f, -1.2, 1.2, 200_000, u);
            assert!((env.eval(&f, u) - oracle).abs() < 1e-8, "u={u}");
        }
    }

    #[test]
    fn degenerate_interval() {
        let f = Flux::burgers();
        assert!(matches!(
            flux_envelope(&f, 0.5, 0.5, EnvelopeKind::LowerConvex, 1e-9),
            Err(FluxError::DegenerateInterval(..))
        ));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn envelope_is_supporting_and_monotone(
            c1 in -1.0f64..1.0, c2 in -1.0f64..1.0, c3 in -1.0f64..1.0,
            a in -2.0f64..2.0, w in 0.05f64..2.0, lower in proptest::bool::ANY,
        ) {
            let f = Flux::polynomial(&[0.0, c1, c2, c3]);
            let kind = if lower { EnvelopeKind::LowerConvex } else { EnvelopeKind::UpperConcave };
            let env = flux_envelope(&f, a, a + w, kind, 1e-10).unwrap();
            let sgn = if lower { 1.0 } else { -1.0 };
            for i in 0..=400 {
                let u = a + w * i as f64 / 400.0;
                proptest::prop_assert!(sgn * (f.value(u) - env.eval(&f, u)) >= -1e-9);
            }
            proptest::prop_assert!((env.eval(&f, a) - f.value(a)).abs() < 1e-12);
            proptest::prop_assert!((env.eval(&f, a + w) - f.value(a + w)).abs() < 1e-12);
            let s = env.slope_sequence(&f);
            for p in s.windows(2) {
                proptest::prop_assert!(sgn * (p[1] - p[0]) >= -1e-7, "{:?}", s);
            }
        }
    }
}
