//! Flux laws and the (f, g) pair.
//!
//! A flux is described by a small text grammar: the builtins `burgers`
//! (u²/2) and `burgers_plus_1` (u²/2 + 1), polynomial terms
//! `poly:c0,c1,c2,...` meaning c0 + c1·u + c2·u² + …, and sine terms
//! `sin:a[,k[,phi]]` meaning a·sin(k·u + phi). Terms may be summed with `+`,
//! e.g. `burgers+poly:0.5+sin:0.1`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluxError {
    #[error("malformed flux spec `{spec}`: {reason}")]
    Parse { spec: String, reason: String },
    #[error("g - f = {min_gap} <= 0 at u = {at} (strict gap required)")]
    GapViolation { min_gap: f64, at: f64 },
    #[error("invalid state bounds: {0}")]
    InvalidBounds(String),
    #[error("degenerate envelope interval [{0}, {1}]")]
    DegenerateInterval(f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
enum Term {
    Poly(Vec<f64>),
    Sin { amp: f64, freq: f64, phase: f64 },
}

impl Term {
    fn eval(&self, u: f64) -> (f64, f64, f64) {
        match self {
            Term::Poly(c) => {
                // Horner for p, p', p''
                let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
                for &ck in c.iter().rev() {
                    ddp = ddp * u + 2.0 * dp;
                    dp = dp * u + p;
                    p = p * u + ck;
                }
                (p, dp, ddp)
            }
            Term::Sin { amp, freq, phase } => {
                let arg = freq * u + phase;
                let (s, c) = arg.sin_cos();
                (amp * s, amp * freq * c, -amp * freq * freq * s)
            }
        }
    }
}

/// A smooth scalar flux law.
#[derive(Debug, Clone, PartialEq)]
pub struct Flux {
    spec: String,
    terms: Vec<Term>,
}

impl Flux {
    pub fn parse(spec: &str) -> Result<Flux, FluxError> {
        let spec = spec.trim();
        let err = |reason: &str| FluxError::Parse {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        if spec.is_empty() {
            return Err(err("empty"));
        }
        let mut terms = Vec::new();
        for raw in split_terms(spec) {
            let raw = raw.trim();
            let term = match raw {
                "burgers" => Term::Poly(vec![0.0, 0.0, 0.5]),
                "burgers_plus_1" => Term::Poly(vec![1.0, 0.0, 0.5]),
                _ => {
                    let (head, args) = raw
                        .split_once(':')
                        .ok_or_else(|| err(&format!("unknown term `{raw}`")))?;
                    let nums = args
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| err(&format!("bad number in `{raw}`: {e}")))?;
                    if nums.iter().any(|v| !v.is_finite()) {
                        return Err(err("non-finite coefficient"));
                    }
                    match head.trim() {
                        "poly" => {
                            if nums.is_empty() {
                                return Err(err("poly needs at least one coefficient"));
                            }
                            Term::Poly(nums)
                        }
                        "sin" => match nums.as_slice() {
                            [a] => Term::Sin { amp: *a, freq: 1.0, phase: 0.0 },
                            [a, k] => Term::Sin { amp: *a, freq: *k, phase: 0.0 },
                            [a, k, p] => Term::Sin { amp: *a, freq: *k, phase: *p },
                            _ => return Err(err("sin takes 1 to 3 arguments")),
                        },
                        other => return Err(err(&format!("unknown term kind `{other}`"))),
                    }
                }
            };
            terms.push(term);
        }
        Ok(Flux {
            spec: spec.to_string(),
            terms,
        })
    }

    /// Polynomial flux from coefficients c0 + c1·u + ….
    pub fn polynomial(coeffs: &[f64]) -> Flux {
        let body = coeffs
            .iter()
            .map(|c| format!("{c}"))
            .collect::<Vec<_>>()
            .join(",");
        Flux {
            spec: format!("poly:{body}"),
            terms: vec![Term::Poly(coeffs.to_vec())],
        }
    }

    pub fn burgers() -> Flux {
        Flux::parse("burgers").expect("builtin")
    }

    pub fn spec(&self) -> &str {
        &self.spec
    }

    #[inline]
    pub fn value(&self, u: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(u).0).sum()
    }

    #[inline]
    pub fn derivative(&self, u: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(u).1).sum()
    }

    #[inline]
    pub fn value_and_derivative(&self, u: f64) -> (f64, f64) {
        self.terms.iter().fold((0.0, 0.0), |(v, d), t| {
            let (tv, td, _) = t.eval(u);
            (v + tv, d + td)
        })
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        self.terms.iter().map(|t| t.eval(u).2).sum()
    }

    /// Difference quotient (h(b) - h(a)) / (b - a); falls back to h'(a) when a == b.
    #[inline]
    pub fn chord_slope(&self, a: f64, b: f64) -> f64 {
        if a == b {
            self.derivative(a)
        } else {
            (self.value(b) - self.value(a)) / (b - a)
        }
    }

    /// Upper bound of |h'| on [lo, hi], by sampling plus endpoint values.
    pub fn max_abs_derivative(&self, lo: f64, hi: f64) -> f64 {
        let n = 64;
        (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .map(|u| self.derivative(u).abs())
            .fold(0.0, f64::max)
    }
}

/// Split at `+` signs that start a new term (followed by a letter), so
/// exponents like `1e+3` stay intact.
fn split_terms(spec: &str) -> Vec<&str> {
    let bytes = spec.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 0..bytes.len() {
        if bytes[i] == b'+' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_alphabetic() {
            out.push(&spec[start..i]);
            start = i + 1;
        }
    }
    out.push(&spec[start..]);
    out
}

impl FromStr for Flux {
    type Err = FluxError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Flux::parse(s)
    }
}

impl fmt::Display for Flux {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.spec)
    }
}

impl Serialize for Flux {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.spec)
    }
}

impl<'de> Deserialize<'de> for Flux {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Flux::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Which flux law governs a front or a region: `F` where u increases
/// (θ = 1), `G` where u decreases (θ = 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    F,
    G,
}

impl Branch {
    /// Branch selected by the sign of a jump from `u_minus` to `u_plus`.
    pub fn of_jump(u_minus: f64, u_plus: f64) -> Branch {
        if u_plus > u_minus {
            Branch::F
        } else {
            Branch::G
        }
    }

    pub fn theta(self) -> f64 {
        match self {
            Branch::F => 1.0,
            Branch::G => 0.0,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::F => "f",
            Branch::G => "g",
        })
    }
}

/// The two flux laws with the verified gap constant c0 ≤ min (g - f).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxPair {
    pub f: Flux,
    pub g: Flux,
    pub u_lo: f64,
    pub u_hi: f64,
    pub c0: f64,
}

impl FluxPair {
    /// Validates the strict gap g - f > 0 on `n_samples` uniform points of [u_lo, u_hi].
    pub fn new(f: Flux, g: Flux, u_lo: f64, u_hi: f64, n_samples: usize) -> Result<Self, FluxError> {
        if !(u_lo < u_hi) || !u_lo.is_finite() || !u_hi.is_finite() {
            return Err(FluxError::InvalidBounds(format!("need u_lo < u_hi, got [{u_lo}, {u_hi}]")));
        }
        if n_samples < 2 {
            return Err(FluxError::InvalidBounds("n_samples must be >= 2".into()));
        }
        let (mut min_gap, mut at) = (f64::INFINITY, u_lo);
        for i in 0..n_samples {
            let u = u_lo + (u_hi - u_lo) * i as f64 / (n_samples - 1) as f64;
            let gap = g.value(u) - f.value(u);
            if gap < min_gap {
                min_gap = gap;
                at = u;
            }
        }
        if !(min_gap > 0.0) {
            return Err(FluxError::GapViolation { min_gap, at });
        }
        Ok(FluxPair { f, g, u_lo, u_hi, c0: min_gap })
    }

    pub fn from_specs(f: &str, g: &str, u_lo: f64, u_hi: f64, n_samples: usize) -> Result<Self, FluxError> {
        FluxPair::new(Flux::parse(f)?, Flux::parse(g)?, u_lo, u_hi, n_samples)
    }

    /// Pair without the gap check (c0 set to the sampled minimum, possibly ≤ 0).
    /// Used by harnesses that evolve a single law, e.g. g = f.
    pub fn unchecked(f: Flux, g: Flux, u_lo: f64, u_hi: f64) -> Self {
        let c0 = (0..=1000)
            .map(|i| u_lo + (u_hi - u_lo) * i as f64 / 1000.0)
            .map(|u| g.value(u) - f.value(u))
            .fold(f64::INFINITY, f64::min);
        FluxPair { f, g, u_lo, u_hi, c0 }
    }

    /// The Example-style pair f = u²/2, g = u²/2 + 1 on [-3, 3].
    pub fn burgers_pair() -> Self {
        FluxPair::from_specs("burgers", "burgers_plus_1", -3.0, 3.0, 1000).expect("builtin pair")
    }

    pub fn branch(&self, b: Branch) -> &Flux {
        match b {
            Branch::F => &self.f,
            Branch::G => &self.g,
        }
    }

    #[inline]
    pub fn gap(&self, u: f64) -> f64 {
        self.g.value(u) - self.f.value(u)
    }

    /// Blended flux θ f(u) + (1 - θ) g(u).
    #[inline]
    pub fn blended(&self, theta: f64, u: f64) -> f64 {
        theta * self.f.value(u) + (1.0 - theta) * self.g.value(u)
    }
}

/// Split a comma-joined pair `f_spec,g_spec` where poly/sin arguments also
/// use commas: numeric tokens continue the previous spec.
pub fn split_flux_pair_spec(text: &str) -> Result<(String, String), FluxError> {
    let mut specs: Vec<String> = Vec::new();
    for tok in text.split(',') {
        let t = tok.trim();
        let starts_term = t.chars().next().is_some_and(|c| c.is_ascii_alphabetic());
        match specs.last_mut() {
            Some(last) if !starts_term => {
                last.push(',');
                last.push_str(t);
            }
            _ => specs.push(t.to_string()),
        }
    }
    match <[String; 2]>::try_from(specs) {
        Ok([f, g]) => Ok((f, g)),
        Err(v) => Err(FluxError::Parse {
            spec: text.to_string(),
            reason: format!("expected two flux specs, found {}", v.len()),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn builtins_and_poly_agree() {
        let b = Flux::parse("burgers").unwrap();
        let p = Flux::parse("poly:0,0,0.5").unwrap();
        for u in [-2.0, -0.3, 0.0, 1.7] {
            assert_eq!(b.value(u), p.value(u));
            assert_eq!(b.derivative(u), u);
            assert_eq!(b.second_derivative(u), 1.0);
        }
        let b1 = Flux::parse("burgers_plus_1").unwrap();
        assert_eq!(b1.value(2.0), 3.0);
    }

    #[test]
    fn sum_and_sine_terms() {
        let g = Flux::parse("burgers+poly:0.5+sin:0.1").unwrap();
        let u: f64 = 0.7;
        assert_relative_eq!(g.value(u), 0.5 * u * u + 0.5 + 0.1 * u.sin(), epsilon = 1e-15);
        assert_relative_eq!(g.derivative(u), u + 0.1 * u.cos(), epsilon = 1e-15);
        assert_relative_eq!(g.second_derivative(u), 1.0 - 0.1 * u.sin(), epsilon = 1e-15);
        // exponent with '+' is not a term separator
        let p = Flux::parse("poly:1e+0,2").unwrap();
        assert_eq!(p.value(1.0), 3.0);
    }

    #[test]
    fn parse_errors() {
        for bad in ["", "cubic", "poly:", "poly:1,x", "sin:1,2,3,4", "tanh:1"] {
            assert!(matches!(Flux::parse(bad), Err(FluxError::Parse { .. })), "{bad}");
        }
    }

    #[test]
    fn example_pair_has_unit_gap() {
        let fp = FluxPair::from_specs("burgers", "burgers_plus_1", -3.0, 3.0, 1000).unwrap();
        assert_relative_eq!(fp.c0, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_fluxes_violate_gap() {
        let r = FluxPair::from_specs("burgers", "burgers", -3.0, 3.0, 1000);
        assert!(matches!(r, Err(FluxError::GapViolation { .. })));
    }

    #[test]
    fn sine_gap_matches_dense_minimum() {
        let fp = FluxPair::from_specs("burgers", "burgers+poly:0.5+sin:0.1", -3.0, 3.0, 1000).unwrap();
        // dense oracle over 1e6 points
        let n = 1_000_000;
        let oracle = (0..=n)
            .map(|i| -3.0 + 6.0 * i as f64 / n as f64)
            .map(|u| 0.5 + 0.1 * f64::sin(u))
            .fold(f64::INFINITY, f64::min);
        assert!((fp.c0 - oracle).abs() < 1e-3);
        assert!((fp.c0 - 0.4).abs() < 1e-3);
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(FluxPair::from_specs("burgers", "burgers_plus_1", 1.0, 1.0, 10).is_err());
        assert!(FluxPair::from_specs("burgers", "burgers_plus_1", 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn pair_spec_splitting() {
        let (f, g) = split_flux_pair_spec("burgers,burgers_plus_1").unwrap();
        assert_eq!((f.as_str(), g.as_str()), ("burgers", "burgers_plus_1"));
        let (f, g) = split_flux_pair_spec("poly:0,0,-0.5,0,0.25,poly:1,0,-0.5,0,0.25").unwrap();
        assert_eq!(f, "poly:0,0,-0.5,0,0.25");
        assert_eq!(g, "poly:1,0,-0.5,0,0.25");
        assert!(split_flux_pair_spec("burgers").is_err());
    }

    proptest::proptest! {
        #[test]
        fn c0_bounds_every_later_sample(shift in 0.01f64..2.0, amp in 0.0f64..0.009, u in -3.0f64..3.0) {
            let g = format!("burgers+poly:{shift}+sin:{amp}");
            let fp = FluxPair::from_specs("burgers", &g, -3.0, 3.0, 1000).unwrap();
            // sampling resolution bound: |d(gap)/du| <= amp, spacing 6/999
            proptest::prop_assert!(fp.c0 <= fp.gap(u) + amp * 6.0 / 999.0);
        }
    }
}
