//! Piecewise-linear BV profiles with explicit jumps, and the paired switch
//! field θ.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("domain mismatch: {0:?} vs {1:?}")]
    DomainMismatch(Domain, Domain),
    #[error("invalid profile: {0}")]
    Invalid(String),
    #[error("plateau [{a}, {b}] is inconsistent with the profile: {reason}")]
    InconsistentPlateau { a: f64, b: f64, reason: String },
    #[error("ambiguous theta on constant stretch [{a}, {b}]: flanks disagree and no plateau declared")]
    AmbiguousTheta { a: f64, b: f64 },
    #[error("csv line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Periodic { period: f64 },
    Bounded { x_min: f64, x_max: f64 },
}

impl Domain {
    pub fn lo(&self) -> f64 {
        match *self {
            Domain::Periodic { .. } => 0.0,
            Domain::Bounded { x_min, .. } => x_min,
        }
    }

    pub fn hi(&self) -> f64 {
        match *self {
            Domain::Periodic { period } => period,
            Domain::Bounded { x_max, .. } => x_max,
        }
    }

    pub fn length(&self) -> f64 {
        self.hi() - self.lo()
    }

    pub fn is_periodic(&self) -> bool {
        matches!(self, Domain::Periodic { .. })
    }

    /// Maps x into [0, L) on periodic domains; identity otherwise.
    pub fn wrap(&self, x: f64) -> f64 {
        match *self {
            Domain::Periodic { period } => {
                let r = x.rem_euclid(period);
                if r >= period {
                    0.0
                } else {
                    r
                }
            }
            Domain::Bounded { .. } => x,
        }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        let ok = match *self {
            Domain::Periodic { period } => period.is_finite() && period > 0.0,
            Domain::Bounded { x_min, x_max } => x_min.is_finite() && x_max.is_finite() && x_min < x_max,
        };
        if ok {
            Ok(())
        } else {
            Err(ProfileError::Invalid(format!("bad domain {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub x: f64,
    pub u_left: f64,
    pub u_right: f64,
}

impl Node {
    pub fn smooth(x: f64, u: f64) -> Node {
        Node { x, u_left: u, u_right: u }
    }

    pub fn jump(&self) -> f64 {
        self.u_right - self.u_left
    }
}

/// u(·) on a domain: affine between consecutive nodes, with a jump wherever
/// a node's one-sided values differ.
///
/// Bounded profiles have their first node at `x_min` and last at `x_max`
/// (both without a jump). Periodic profiles keep nodes in [0, L) and the
/// last segment wraps to the first node.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    domain: Domain,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Max,
    Min,
}

impl Orientation {
    /// θ at the left and right end of a plateau.
    pub fn theta_ends(self) -> (f64, f64) {
        match self {
            Orientation::Max => (1.0, 0.0),
            Orientation::Min => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauSpec {
    pub a: f64,
    pub b: f64,
    pub orientation: Orientation,
}

/// Affine piece [x0, x1] with end values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub x0: f64,
    pub u0: f64,
    pub x1: f64,
    pub u1: f64,
}

impl Segment {
    fn at(&self, x: f64) -> f64 {
        if self.x1 == self.x0 {
            return self.u0;
        }
        let t = (x - self.x0) / (self.x1 - self.x0);
        self.u0 + t * (self.u1 - self.u0)
    }
}

fn check_nodes(domain: &Domain, nodes: &[Node], what: &str) -> Result<(), ProfileError> {
    domain.validate()?;
    if nodes.is_empty() {
        return Err(ProfileError::Invalid(format!("{what}: no nodes")));
    }
    for n in nodes {
        if !(n.x.is_finite() && n.u_left.is_finite() && n.u_right.is_finite()) {
            return Err(ProfileError::Invalid(format!("{what}: non-finite node {n:?}")));
        }
    }
    if nodes.windows(2).any(|w| w[1].x <= w[0].x) {
        return Err(ProfileError::Invalid(format!("{what}: abscissae not strictly increasing")));
    }
    match *domain {
        Domain::Periodic { period } => {
            if nodes[0].x < 0.0 || nodes.last().unwrap().x >= period {
                return Err(ProfileError::Invalid(format!("{what}: periodic nodes must lie in [0, L)")));
            }
        }
        Domain::Bounded { x_min, x_max } => {
            let (first, last) = (nodes[0], *nodes.last().unwrap());
            if nodes.len() < 2 || first.x != x_min || last.x != x_max {
                return Err(ProfileError::Invalid(format!("{what}: bounded nodes must start at x_min and end at x_max")));
            }
            if first.u_left != first.u_right || last.u_left != last.u_right {
                return Err(ProfileError::Invalid(format!("{what}: no jump allowed at the domain ends")));
            }
        }
    }
    Ok(())
}

/// Nodes extended by one periodic image on each side, so every point of
/// [lo, hi] lies between two entries.
fn extended(domain: &Domain, nodes: &[Node]) -> Vec<Node> {
    match *domain {
        Domain::Bounded { .. } => nodes.to_vec(),
        Domain::Periodic { period } => {
            let mut v = Vec::with_capacity(nodes.len() + 2);
            let last = *nodes.last().unwrap();
            v.push(Node { x: last.x - period, ..last });
            v.extend_from_slice(nodes);
            v.push(Node { x: nodes[0].x + period, ..nodes[0] });
            v
        }
    }
}

fn right_limit(ext: &[Node], x: f64) -> f64 {
    let k = ext.partition_point(|n| n.x <= x);
    if k == 0 {
        return ext[0].u_left;
    }
    let n = ext[k - 1];
    if n.x == x || k == ext.len() {
        return n.u_right;
    }
    let m = ext[k];
    Segment { x0: n.x, u0: n.u_right, x1: m.x, u1: m.u_left }.at(x)
}

fn left_limit(ext: &[Node], x: f64) -> f64 {
    let k = ext.partition_point(|n| n.x < x);
    if k == ext.len() {
        return ext[k - 1].u_right;
    }
    let m = ext[k];
    if m.x == x || k == 0 {
        return m.u_left;
    }
    let n = ext[k - 1];
    Segment { x0: n.x, u0: n.u_right, x1: m.x, u1: m.u_left }.at(x)
}

/// Exact ∫|d| over [a, b] for d affine with end values d0, d1.
fn abs_affine_integral(d0: f64, d1: f64, w: f64) -> f64 {
    if d0 * d1 >= 0.0 {
        0.5 * (d0.abs() + d1.abs()) * w
    } else {
        0.5 * (d0 * d0 + d1 * d1) / (d0.abs() + d1.abs()) * w
    }
}

impl Profile {
    pub fn new(domain: Domain, nodes: Vec<Node>) -> Result<Profile, ProfileError> {
        check_nodes(&domain, &nodes, "profile")?;
        Ok(Profile { domain, nodes })
    }

    pub fn constant(domain: Domain, c: f64) -> Profile {
        let nodes = match domain {
            Domain::Periodic { .. } => vec![Node::smooth(0.0, c)],
            Domain::Bounded { x_min, x_max } => vec![Node::smooth(x_min, c), Node::smooth(x_max, c)],
        };
        Profile { domain, nodes }
    }

    /// Piecewise-constant profile: `values[k]` holds between `jumps[k-1]` and
    /// `jumps[k]`. Bounded: `values.len() == jumps.len() + 1`. Periodic:
    /// `values.len() == jumps.len()` and `values[0]` also covers the wrap
    /// piece after the last jump. Equal neighbours are merged.
    pub fn piecewise_constant(domain: Domain, jumps: &[f64], values: &[f64]) -> Result<Profile, ProfileError> {
        domain.validate()?;
        let mut nodes = Vec::new();
        match domain {
            Domain::Bounded { x_min, x_max } => {
                if values.len() != jumps.len() + 1 {
                    return Err(ProfileError::Invalid("need one more value than jumps".into()));
                }
                nodes.push(Node::smooth(x_min, values[0]));
                for (k, &x) in jumps.iter().enumerate() {
                    if x <= x_min || x >= x_max {
                        return Err(ProfileError::Invalid(format!("jump {x} outside the open domain")));
                    }
                    if values[k] != values[k + 1] {
                        nodes.push(Node { x, u_left: values[k], u_right: values[k + 1] });
                    }
                }
                nodes.push(Node::smooth(x_max, *values.last().unwrap()));
            }
            Domain::Periodic { .. } => {
                if values.len() != jumps.len() || values.is_empty() {
                    return Err(ProfileError::Invalid("periodic: need as many values as jumps".into()));
                }
                let n = jumps.len();
                let mut pairs: Vec<Node> = (0..n)
                    .filter(|&k| values[k] != values[(k + 1) % n])
                    .map(|k| Node { x: domain.wrap(jumps[k]), u_left: values[k], u_right: values[(k + 1) % n] })
                    .collect();
                pairs.sort_by(|a, b| a.x.total_cmp(&b.x));
                if pairs.is_empty() {
                    return Ok(Profile::constant(domain, values[0]));
                }
                nodes = pairs;
            }
        }
        Profile::new(domain, nodes)
    }

    /// Interpolates `u` at n+1 equispaced points (continuous data).
    pub fn sample_fn(domain: Domain, n: usize, u: impl Fn(f64) -> f64) -> Result<Profile, ProfileError> {
        let (lo, len) = (domain.lo(), domain.length());
        let count = if domain.is_periodic() { n } else { n + 1 };
        let nodes = (0..count)
            .map(|i| {
                let x = if i == n { domain.hi() } else { lo + len * i as f64 / n as f64 };
                Node::smooth(x, u(x))
            })
            .collect();
        Profile::new(domain, nodes)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Affine pieces covering the domain, in order; the periodic wrap piece
    /// extends past L.
    pub fn segments(&self) -> Vec<Segment> {
        let mut s: Vec<Segment> = self
            .nodes
            .windows(2)
            .map(|w| Segment { x0: w[0].x, u0: w[0].u_right, x1: w[1].x, u1: w[1].u_left })
            .collect();
        if let Domain::Periodic { period } = self.domain {
            let (last, first) = (*self.nodes.last().unwrap(), self.nodes[0]);
            s.push(Segment { x0: last.x, u0: last.u_right, x1: first.x + period, u1: first.u_left });
        }
        s
    }

    pub fn right_limit(&self, x: f64) -> f64 {
        right_limit(&extended(&self.domain, &self.nodes), self.domain.wrap(x))
    }

    pub fn left_limit(&self, x: f64) -> f64 {
        let xw = self.domain.wrap(x);
        let xw = if self.domain.is_periodic() && xw == 0.0 { self.domain.hi() } else { xw };
        left_limit(&extended(&self.domain, &self.nodes), xw)
    }

    /// Right-continuous evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.right_limit(x)
    }

    pub fn is_constant(&self) -> bool {
        let c = self.nodes[0].u_left;
        self.nodes.iter().all(|n| n.u_left == c && n.u_right == c)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.nodes
            .iter()
            .flat_map(|n| [n.u_left, n.u_right])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), u| (lo.min(u), hi.max(u)))
    }

    pub fn integral(&self) -> f64 {
        self.segments().iter().map(|s| 0.5 * (s.u0 + s.u1) * (s.x1 - s.x0)).sum()
    }

    /// ∫_a^b u for lo ≤ a < b ≤ hi (no wrapping).
    pub fn integral_between(&self, a: f64, b: f64) -> f64 {
        let ext = extended(&self.domain, &self.nodes);
        let mut pts = vec![a];
        pts.extend(ext.iter().map(|n| n.x).filter(|&x| x > a && x < b));
        pts.push(b);
        pts.windows(2)
            .map(|w| 0.5 * (right_limit(&ext, w[0]) + left_limit(&ext, w[1])) * (w[1] - w[0]))
            .sum()
    }

    /// Cell averages on a uniform n-cell grid over the domain.
    pub fn cell_averages(&self, n: usize) -> Vec<f64> {
        let (lo, dx) = (self.domain.lo(), self.domain.length() / n as f64);
        let ext = extended(&self.domain, &self.nodes);
        let mut out = Vec::with_capacity(n);
        let mut k = 0usize;
        for j in 0..n {
            let a = lo + dx * j as f64;
            let b = if j + 1 == n { self.domain.hi() } else { lo + dx * (j + 1) as f64 };
            while k < ext.len() && ext[k].x <= a {
                k += 1;
            }
            let mut acc = 0.0;
            let mut x0 = a;
            let mut kk = k;
            while kk < ext.len() && ext[kk].x < b {
                let x1 = ext[kk].x;
                acc += 0.5 * (right_limit(&ext, x0) + left_limit(&ext, x1)) * (x1 - x0);
                x0 = x1;
                kk += 1;
            }
            acc += 0.5 * (right_limit(&ext, x0) + left_limit(&ext, b)) * (b - x0);
            out.push(acc / (b - a));
        }
        out
    }

    /// Piecewise-constant profile from grid cell values.
    pub fn from_cells(domain: Domain, u: &[f64]) -> Result<Profile, ProfileError> {
        let n = u.len();
        if n == 0 {
            return Err(ProfileError::Invalid("no cells".into()));
        }
        let (lo, dx) = (domain.lo(), domain.length() / n as f64);
        match domain {
            Domain::Bounded { .. } => {
                let jumps: Vec<f64> = (1..n).map(|j| lo + dx * j as f64).collect();
                Profile::piecewise_constant(domain, &jumps, u)
            }
            Domain::Periodic { .. } => {
                // jump k sits at the right face of cell k; the last face is x = 0
                let jumps: Vec<f64> = (0..n).map(|j| if j + 1 == n { 0.0 } else { dx * (j + 1) as f64 }).collect();
                Profile::piecewise_constant(domain, &jumps, u)
            }
        }
    }
}

/// Σ|jumps| + Σ|affine increments| (wrap term included on periodic domains).
pub fn total_variation(p: &Profile) -> f64 {
    let jumps: f64 = p.nodes.iter().map(|n| n.jump().abs()).sum();
    let slopes: f64 = p.segments().iter().map(|s| (s.u1 - s.u0).abs()).sum();
    jumps + slopes
}

/// Exact ∫|p − q| over the domain (one period when periodic).
pub fn l1_distance(p: &Profile, q: &Profile) -> Result<f64, ProfileError> {
    if p.domain != q.domain {
        return Err(ProfileError::DomainMismatch(p.domain, q.domain));
    }
    let (lo, hi) = (p.domain.lo(), p.domain.hi());
    let (ep, eq) = (extended(&p.domain, &p.nodes), extended(&q.domain, &q.nodes));
    let mut pts: Vec<f64> = vec![lo, hi];
    pts.extend(ep.iter().chain(eq.iter()).map(|n| n.x).filter(|&x| x > lo && x < hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    Ok(pts
        .windows(2)
        .map(|w| {
            let d0 = right_limit(&ep, w[0]) - right_limit(&eq, w[0]);
            let d1 = left_limit(&ep, w[1]) - left_limit(&eq, w[1]);
            abs_affine_integral(d0, d1, w[1] - w[0])
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaNode {
    pub x: f64,
    pub left: f64,
    pub at: f64,
    pub right: f64,
}

/// θ(·): affine between nodes, with one-sided limits and a point value at
/// every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaField {
    domain: Domain,
    nodes: Vec<ThetaNode>,
}

impl ThetaField {
    pub fn new(domain: Domain, nodes: Vec<ThetaNode>) -> Result<ThetaField, ProfileError> {
        domain.validate()?;
        if nodes.is_empty() {
            return Err(ProfileError::Invalid("theta: no nodes".into()));
        }
        for n in &nodes {
            for v in [n.left, n.at, n.right] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(ProfileError::Invalid(format!("theta value {v} outside [0,1] at x={}", n.x)));
                }
            }
        }
        if nodes.windows(2).any(|w| w[1].x <= w[0].x) {
            return Err(ProfileError::Invalid("theta: abscissae not strictly increasing".into()));
        }
        Ok(ThetaField { domain, nodes })
    }

    pub fn constant(domain: Domain, v: f64) -> ThetaField {
        let nodes = match domain {
            Domain::Periodic { .. } => vec![ThetaNode { x: 0.0, left: v, at: v, right: v }],
            Domain::Bounded { x_min, x_max } => vec![
                ThetaNode { x: x_min, left: v, at: v, right: v },
                ThetaNode { x: x_max, left: v, at: v, right: v },
            ],
        };
        ThetaField { domain, nodes }
    }

    /// Continuous θ through the given (x, θ) samples. Bounded fields are
    /// extended flat to the domain ends.
    pub fn from_samples(domain: Domain, xs: &[f64], th: &[f64]) -> Result<ThetaField, ProfileError> {
        let mut nodes: Vec<ThetaNode> = xs
            .iter()
            .zip(th)
            .map(|(&x, &v)| ThetaNode { x, left: v, at: v, right: v })
            .collect();
        if let Domain::Bounded { x_min, x_max } = domain {
            if nodes.first().is_some_and(|n| n.x > x_min) {
                let v = nodes[0].at;
                nodes.insert(0, ThetaNode { x: x_min, left: v, at: v, right: v });
            }
            if nodes.last().is_some_and(|n| n.x < x_max) {
                let v = nodes.last().unwrap().at;
                nodes.push(ThetaNode { x: x_max, left: v, at: v, right: v });
            }
        }
        ThetaField::new(domain, nodes)
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn nodes(&self) -> &[ThetaNode] {
        &self.nodes
    }

    fn extended(&self) -> Vec<ThetaNode> {
        match self.domain {
            Domain::Bounded { .. } => self.nodes.clone(),
            Domain::Periodic { period } => {
                let n = self.nodes.len();
                let mut v = Vec::with_capacity(3 * n);
                for shift in [-period, 0.0, period] {
                    v.extend(self.nodes.iter().map(|t| ThetaNode { x: t.x + shift, ..*t }));
                }
                v
            }
        }
    }

    /// Point value (at a node, the recorded point value).
    pub fn eval(&self, x: f64) -> f64 {
        let x = self.domain.wrap(x);
        let ext = self.extended();
        let k = ext.partition_point(|n| n.x < x);
        if k < ext.len() && ext[k].x == x {
            return ext[k].at;
        }
        if k == 0 {
            return ext[0].left;
        }
        if k == ext.len() {
            return ext[k - 1].right;
        }
        let (a, b) = (ext[k - 1], ext[k]);
        a.right + (x - a.x) / (b.x - a.x) * (b.left - a.right)
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.nodes
            .iter()
            .flat_map(|n| [n.left, n.at, n.right])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    }
}

/// Largest oscillation max θ − min θ over any closed window of width `scale`.
///
/// For piecewise-affine θ the oscillation, as a function of window position,
/// is convex between positions where a window end meets a node, so windows
/// anchored at nodes suffice.
pub fn theta_discontinuity(t: &ThetaField, scale: f64) -> f64 {
    assert!(scale > 0.0, "scale must be positive");
    let ext = t.extended();
    let (lo, hi) = match t.domain {
        Domain::Bounded { x_min, x_max } => (x_min, x_max),
        Domain::Periodic { period } => (-period, 2.0 * period),
    };
    let value_at = |x: f64| -> f64 {
        let k = ext.partition_point(|n| n.x < x);
        if k < ext.len() && ext[k].x == x {
            return ext[k].at;
        }
        if k == 0 {
            return ext[0].left;
        }
        if k == ext.len() {
            return ext[k - 1].right;
        }
        let (a, b) = (ext[k - 1], ext[k]);
        a.right + (x - a.x) / (b.x - a.x) * (b.left - a.right)
    };
    let window = |a: f64, b: f64| -> f64 {
        let (a, b) = (a.max(lo), b.min(hi));
        let mut mn = value_at(a).min(value_at(b));
        let mut mx = value_at(a).max(value_at(b));
        let i0 = ext.partition_point(|n| n.x < a);
        let i1 = ext.partition_point(|n| n.x <= b);
        for n in &ext[i0..i1] {
            for v in [n.left, n.at, n.right] {
                mn = mn.min(v);
                mx = mx.max(v);
            }
        }
        mx - mn
    };
    let anchors: Vec<f64> = match t.domain {
        Domain::Bounded { .. } => ext.iter().map(|n| n.x).collect(),
        Domain::Periodic { .. } => t.nodes.iter().map(|n| n.x).collect(),
    };
    anchors
        .iter()
        .map(|&x| window(x, x + scale).max(window(x - scale, x)))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Item {
    Jump { x: f64, up: bool },
    Seg { x0: f64, x1: f64, dir: i8 },
}

impl Item {
    fn theta(&self) -> Option<f64> {
        match *self {
            Item::Jump { up, .. } => Some(if up { 1.0 } else { 0.0 }),
            Item::Seg { dir: 1, .. } => Some(1.0),
            Item::Seg { dir: -1, .. } => Some(0.0),
            Item::Seg { .. } => None,
        }
    }

    fn dir(&self) -> i8 {
        match *self {
            Item::Jump { up, .. } => {
                if up {
                    1
                } else {
                    -1
                }
            }
            Item::Seg { dir, .. } => dir,
        }
    }
}

fn sign(d: f64) -> i8 {
    if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    }
}

/// Builds θ from the profile: 1 where u increases, 0 where it decreases,
/// affine across each declared plateau, flank value on other constant
/// stretches. A profile with no variation at all gets θ ≡ 1.
pub fn reconstruct_theta(p: &Profile, plateaus: &[PlateauSpec]) -> Result<ThetaField, ProfileError> {
    let domain = p.domain;
    if p.is_constant() {
        if let Some(pl) = plateaus.first() {
            if !domain.is_periodic() {
                return Err(ProfileError::InconsistentPlateau {
                    a: pl.a,
                    b: pl.b,
                    reason: "constant profile has no extremum plateau".into(),
                });
            }
        }
        return Ok(ThetaField::constant(domain, 1.0));
    }
    for pl in plateaus {
        if !(pl.b > pl.a) {
            return Err(ProfileError::InconsistentPlateau { a: pl.a, b: pl.b, reason: "non-positive width".into() });
        }
    }
    let segs = p.segments();
    let mut items = Vec::new();
    for (i, n) in p.nodes.iter().enumerate() {
        if n.u_left != n.u_right {
            items.push(Item::Jump { x: n.x, up: n.u_right > n.u_left });
        }
        if i < segs.len() {
            let s = segs[i];
            items.push(Item::Seg { x0: s.x0, x1: s.x1, dir: sign(s.u1 - s.u0) });
        }
    }
    let periodic = domain.is_periodic();
    let m = items.len();
    // rotate so a periodic walk starts on a non-flat item
    let start = if periodic { items.iter().position(|it| it.dir() != 0).unwrap() } else { 0 };
    let order: Vec<usize> = (0..m).map(|k| (start + k) % m).collect();

    // θ over each flat segment: (value at x0+, value at x1-, interior breakpoints)
    let mut seg_theta: Vec<Option<(f64, f64, Vec<(f64, f64)>)>> = vec![None; m];
    let mut used = vec![false; plateaus.len()];
    let mut k = 0;
    while k < m {
        let idx = order[k];
        if items[idx].dir() != 0 {
            k += 1;
            continue;
        }
        let k0 = k;
        while k < m && items[order[k]].dir() == 0 {
            k += 1;
        }
        let run: Vec<usize> = order[k0..k].to_vec();
        let left_flank = if k0 > 0 || periodic { Some(items[order[(k0 + m - 1) % m]]) } else { None };
        let right_flank = if k < m || periodic { Some(items[order[k % m]]) } else { None };
        let (Item::Seg { x0: s0, .. }, Item::Seg { x1: s1, .. }) = (items[run[0]], items[*run.last().unwrap()]) else {
            unreachable!()
        };
        // unwrap a wrapped stretch into increasing coordinates
        let s1 = if s1 < s0 { s1 + domain.length() } else { s1 };
        let lf = left_flank.and_then(|it| it.theta());
        let rf = right_flank.and_then(|it| it.theta());
        let tol = 1e-12 * (1.0 + domain.length());
        let mut found = None;
        for (j, pl) in plateaus.iter().enumerate() {
            let shifts: &[f64] = if periodic { &[-1.0, 0.0, 1.0] } else { &[0.0] };
            for &sh in shifts {
                let (a, b) = (pl.a + sh * domain.length(), pl.b + sh * domain.length());
                let open_left = lf.is_none();
                let open_right = rf.is_none();
                let inside = (a >= s0 - tol || (open_left && b > s0)) && (b <= s1 + tol || (open_right && a < s1));
                if inside && b > s0 && a < s1 {
                    found = Some((j, a, b, pl.orientation));
                }
            }
        }
        let theta_fn: Box<dyn Fn(f64) -> f64> = match found {
            Some((j, a, b, orient)) => {
                used[j] = true;
                let (ta, tb) = orient.theta_ends();
                if lf.is_some_and(|v| v != ta) || rf.is_some_and(|v| v != tb) {
                    return Err(ProfileError::InconsistentPlateau {
                        a,
                        b,
                        reason: format!("{orient:?} plateau flanked by θ {lf:?} / {rf:?}"),
                    });
                }
                Box::new(move |x: f64| {
                    if x <= a {
                        ta
                    } else if x >= b {
                        tb
                    } else {
                        ta + (x - a) / (b - a) * (tb - ta)
                    }
                })
            }
            None => {
                let v = match (lf, rf) {
                    (Some(l), Some(r)) if l == r => l,
                    (Some(_), Some(_)) => return Err(ProfileError::AmbiguousTheta { a: s0, b: s1 }),
                    (Some(l), None) => l,
                    (None, Some(r)) => r,
                    (None, None) => 1.0,
                };
                Box::new(move |_x: f64| v)
            }
        };
        let mut offset = 0.0;
        let mut prev_x1 = f64::NEG_INFINITY;
        let breaks: Vec<f64> = match found {
            Some((_, a, b, _)) => vec![a, b],
            None => vec![],
        };
        for &i in &run {
            let Item::Seg { x0, x1, .. } = items[i] else { unreachable!() };
            if x0 + offset < prev_x1 {
                offset += domain.length();
            }
            let (ux0, ux1) = (x0 + offset, x1 + offset);
            prev_x1 = ux1;
            let inner: Vec<(f64, f64)> = breaks
                .iter()
                .filter(|&&c| c > ux0 && c < ux1)
                .map(|&c| (domain.wrap(c - offset), theta_fn(c)))
                .collect();
            seg_theta[i] = Some((theta_fn(ux0), theta_fn(ux1), inner));
        }
    }
    if let Some(j) = used.iter().position(|u| !u) {
        let pl = plateaus[j];
        return Err(ProfileError::InconsistentPlateau { a: pl.a, b: pl.b, reason: "not a constant stretch of the profile".into() });
    }

    // per-item θ at its start and end
    let ends = |i: usize| -> (f64, f64) {
        match items[i] {
            Item::Seg { dir: 0, .. } => {
                let (a, b, _) = seg_theta[i].as_ref().unwrap();
                (*a, *b)
            }
            it => {
                let v = it.theta().unwrap();
                (v, v)
            }
        }
    };
    let mut nodes: Vec<ThetaNode> = Vec::new();
    // walk items in natural order; each profile node becomes a θ node
    let mut i = 0;
    let mut node_idx = 0;
    while node_idx < p.nodes.len() {
        let n = p.nodes[node_idx];
        let has_jump = n.u_left != n.u_right;
        let prev_item = if i == 0 {
            if periodic {
                Some(m - 1)
            } else {
                None
            }
        } else {
            Some(i - 1)
        };
        let left = prev_item.map(|k| ends(k).1);
        let (at, next_i) = if has_jump {
            (items[i].theta().unwrap(), i + 1)
        } else {
            (f64::NAN, i)
        };
        let right = if next_i < m { Some(ends(next_i).0) } else { None };
        let left = left.or(right).unwrap();
        let right = right.unwrap_or(left);
        let at = if at.is_nan() { left } else { at };
        nodes.push(ThetaNode { x: n.x, left, at, right });
        if next_i < m {
            if let Some((_, _, inner)) = &seg_theta[next_i] {
                for &(x, v) in inner {
                    nodes.push(ThetaNode { x, left: v, at: v, right: v });
                }
            }
        }
        i = next_i + 1;
        node_idx += 1;
    }
    nodes.sort_by(|a, b| a.x.total_cmp(&b.x));
    if let Domain::Bounded { x_min, x_max } = domain {
        nodes.retain(|n| n.x >= x_min && n.x <= x_max);
    }
    nodes.dedup_by(|b, a| a.x == b.x);
    ThetaField::new(domain, nodes)
}

/// Point value θ at a node whose one-sided θ limits are `l`, `r` and whose
/// u jump is `du`, as recovered from a two-row CSV record.
fn csv_point_theta(l: f64, r: f64, du: f64) -> f64 {
    if du > 0.0 && (l == 1.0 || r == 1.0) {
        1.0
    } else if du < 0.0 && (l == 0.0 || r == 0.0) {
        0.0
    } else if l == r {
        l
    } else {
        r
    }
}

/// CSV with header `x,u,theta`. Jumps produce two rows with equal x; a third
/// middle row carries θ's point value when it differs from what the two
/// limits imply.
pub fn write_csv(p: &Profile, t: &ThetaField) -> Result<String, ProfileError> {
    if p.domain != t.domain {
        return Err(ProfileError::DomainMismatch(p.domain, t.domain));
    }
    let mut xs: Vec<f64> = p.nodes.iter().map(|n| n.x).chain(t.nodes.iter().map(|n| n.x)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let pe = extended(&p.domain, &p.nodes);
    let mut out = String::from("x,u,theta\n");
    for &x in &xs {
        let (ul, ur) = (left_limit(&pe, x), right_limit(&pe, x));
        let (tl, ta, tr) = theta_limits(t, x);
        if ul == ur && tl == tr && ta == tl {
            writeln!(out, "{x},{ul},{tl}").unwrap();
        } else {
            writeln!(out, "{x},{ul},{tl}").unwrap();
            if csv_point_theta(tl, tr, ur - ul) != ta {
                writeln!(out, "{x},{ur},{ta}").unwrap();
            }
            writeln!(out, "{x},{ur},{tr}").unwrap();
        }
    }
    Ok(out)
}

fn theta_limits(t: &ThetaField, x: f64) -> (f64, f64, f64) {
    let ext = t.extended();
    let k = ext.partition_point(|n| n.x < x);
    if k < ext.len() && ext[k].x == x {
        let n = ext[k];
        return (n.left, n.at, n.right);
    }
    let v = t.eval(x);
    (v, v, v)
}

/// Parses the CSV written by [`write_csv`].
pub fn parse_csv(text: &str, domain: Domain) -> Result<(Profile, ThetaField), ProfileError> {
    let mut rows: Vec<(usize, f64, f64, f64)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with('x')) {
            continue;
        }
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(ProfileError::Csv { line: i + 1, reason: "expected 3 columns".into() });
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| ProfileError::Csv { line: i + 1, reason: e.to_string() });
        rows.push((i + 1, parse(parts[0])?, parse(parts[1])?, parse(parts[2])?));
    }
    let mut pn = Vec::new();
    let mut tn = Vec::new();
    let mut k = 0;
    while k < rows.len() {
        let mut j = k + 1;
        while j < rows.len() && rows[j].1 == rows[k].1 {
            j += 1;
        }
        let group = &rows[k..j];
        let x = group[0].1;
        let (ul, ur) = (group[0].2, group.last().unwrap().2);
        let (tl, tr) = (group[0].3, group.last().unwrap().3);
        let ta = match group.len() {
            1 => tl,
            2 => csv_point_theta(tl, tr, ur - ul),
            3 => group[1].3,
            _ => return Err(ProfileError::Csv { line: group[0].0, reason: "more than 3 rows share one x".into() }),
        };
        pn.push(Node { x, u_left: ul, u_right: ur });
        tn.push(ThetaNode { x, left: tl, at: ta, right: tr });
        k = j;
    }
    Ok((Profile::new(domain, pn)?, ThetaField::new(domain, tn)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const UNIT: Domain = Domain::Periodic { period: 1.0 };
    const BOX: Domain = Domain::Bounded { x_min: 0.0, x_max: 1.0 };

    fn step(at: f64) -> Profile {
        Profile::piecewise_constant(BOX, &[at], &[1.0, -1.0]).unwrap()
    }

    #[test]
    fn tv_examples() {
        assert_eq!(total_variation(&Profile::constant(UNIT, 0.4)), 0.0);
        let saw = Profile::new(UNIT, vec![Node::smooth(0.0, 0.0), Node::smooth(0.5, 1.0)]).unwrap();
        assert_eq!(total_variation(&saw), 2.0);
        let jump = Profile::piecewise_constant(Domain::Bounded { x_min: -1.0, x_max: 1.0 }, &[0.0], &[1.0, -1.0]).unwrap();
        assert_eq!(total_variation(&jump), 2.0);
    }

    #[test]
    fn l1_examples() {
        let p = step(0.5);
        assert_eq!(l1_distance(&p, &p).unwrap(), 0.0);
        let z = Profile::constant(UNIT, 0.0);
        let c = Profile::constant(UNIT, 0.3);
        assert_relative_eq!(l1_distance(&z, &c).unwrap(), 0.3, epsilon = 1e-15);
        let q = step(0.6);
        let exact = l1_distance(&p, &q).unwrap();
        // Riemann-sum oracle
        let n = 100_000;
        let sum: f64 = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                (p.eval(x) - q.eval(x)).abs() / n as f64
            })
            .sum();
        assert!((exact - 0.2).abs() < 1e-12);
        assert!((sum - exact).abs() < 1e-4);
        assert!(matches!(l1_distance(&p, &z), Err(ProfileError::DomainMismatch(..))));
    }

    #[test]
    fn l1_of_crossing_affine_pieces() {
        let p = Profile::new(BOX, vec![Node::smooth(0.0, -1.0), Node::smooth(1.0, 1.0)]).unwrap();
        let z = Profile::constant(BOX, 0.0);
        assert_relative_eq!(l1_distance(&p, &z).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn validation() {
        assert!(Profile::new(BOX, vec![Node::smooth(0.0, 1.0), Node::smooth(0.9, 1.0)]).is_err());
        assert!(Profile::new(UNIT, vec![Node::smooth(0.5, 1.0), Node::smooth(0.2, 1.0)]).is_err());
        assert!(Profile::new(UNIT, vec![Node::smooth(1.0, 1.0)]).is_err());
    }

    #[test]
    fn integrals_and_cells() {
        let p = Profile::new(BOX, vec![Node::smooth(0.0, 0.0), Node { x: 0.5, u_left: 0.5, u_right: 2.0 }, Node::smooth(1.0, 2.0)])
            .unwrap();
        assert_relative_eq!(p.integral(), 0.125 + 1.0, epsilon = 1e-15);
        let cells = p.cell_averages(4);
        assert_relative_eq!(cells[0], 0.125, epsilon = 1e-15);
        assert_relative_eq!(cells[1], 0.375, epsilon = 1e-15);
        assert_eq!(cells[2], 2.0);
        let saw = Profile::new(UNIT, vec![Node::smooth(0.25, 1.0), Node::smooth(0.75, 0.0)]).unwrap();
        let c = saw.cell_averages(2);
        assert_relative_eq!(c[0] + c[1], 1.0, epsilon = 1e-15);
        assert_relative_eq!(c[0], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn cells_round_trip_through_profile() {
        let u = [0.1, 0.4, -0.2, -0.2, 0.9];
        for d in [UNIT, BOX] {
            let p = Profile::from_cells(d, &u).unwrap();
            let back = p.cell_averages(5);
            for (a, b) in u.iter().zip(&back) {
                assert_relative_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn theta_of_increasing_profile_is_one() {
        let p = Profile::new(BOX, vec![Node::smooth(0.0, 0.0), Node { x: 0.3, u_left: 0.3, u_right: 0.6 }, Node::smooth(1.0, 2.0)])
            .unwrap();
        let th = reconstruct_theta(&p, &[]).unwrap();
        assert_eq!(th.min_max(), (1.0, 1.0));
    }

    #[test]
    fn theta_affine_on_max_plateau() {
        let p = Profile::new(
            BOX,
            vec![Node::smooth(0.0, 0.0), Node::smooth(0.4, 1.0), Node::smooth(0.6, 1.0), Node::smooth(1.0, 0.0)],
        )
        .unwrap();
        assert!(matches!(reconstruct_theta(&p, &[]), Err(ProfileError::AmbiguousTheta { .. })));
        let th = reconstruct_theta(&p, &[PlateauSpec { a: 0.4, b: 0.6, orientation: Orientation::Max }]).unwrap();
        assert_eq!(th.eval(0.2), 1.0);
        assert_relative_eq!(th.eval(0.5), 0.5, epsilon = 1e-15);
        assert_eq!(th.eval(0.8), 0.0);
        assert!(theta_discontinuity(&th, 0.01) < 0.06);
    }

    #[test]
    fn theta_slope_on_min_plateau_piecewise_constant() {
        let p = Profile::piecewise_constant(BOX, &[0.3, 0.5], &[0.0, -1.0, 0.0]).unwrap();
        let th = reconstruct_theta(&p, &[PlateauSpec { a: 0.3, b: 0.5, orientation: Orientation::Min }]).unwrap();
        let slope = (th.eval(0.45) - th.eval(0.35)) / 0.1;
        assert_relative_eq!(slope, 5.0, epsilon = 1e-12);
        assert_eq!(th.eval(0.1), 0.0);
        assert_eq!(th.eval(0.9), 1.0);
        assert_eq!(th.eval(0.3), 0.0);
        assert_eq!(th.eval(0.5), 1.0);
    }

    #[test]
    fn inconsistent_plateaus() {
        let p = Profile::piecewise_constant(BOX, &[0.3, 0.5], &[0.0, -1.0, 0.0]).unwrap();
        let wrong = PlateauSpec { a: 0.3, b: 0.5, orientation: Orientation::Max };
        assert!(matches!(reconstruct_theta(&p, &[wrong]), Err(ProfileError::InconsistentPlateau { .. })));
        let sloped = Profile::new(BOX, vec![Node::smooth(0.0, 0.0), Node::smooth(1.0, 1.0)]).unwrap();
        let pl = PlateauSpec { a: 0.2, b: 0.4, orientation: Orientation::Max };
        assert!(matches!(reconstruct_theta(&sloped, &[pl]), Err(ProfileError::InconsistentPlateau { .. })));
    }

    #[test]
    fn periodic_sawtooth_plateaus() {
        let p = Profile::piecewise_constant(UNIT, &[0.1, 0.4, 0.6, 0.9], &[-1.0, 0.0, 1.0, 0.0]).unwrap();
        // pieces: [0.9,1.1) -> -1 (wrapping min), [0.1,0.4) -> 0, [0.4,0.6) -> 1 max, [0.6,0.9) -> 0
        let pls = [
            PlateauSpec { a: 0.4, b: 0.6, orientation: Orientation::Max },
            PlateauSpec { a: 0.9, b: 1.1, orientation: Orientation::Min },
        ];
        let th = reconstruct_theta(&p, &pls).unwrap();
        assert_relative_eq!(th.eval(0.5), 0.5, epsilon = 1e-12);
        assert_relative_eq!(th.eval(0.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(th.eval(0.95), 0.25, epsilon = 1e-12);
        assert_eq!(th.eval(0.2), 1.0);
        assert_eq!(th.eval(0.7), 0.0);
        assert!(theta_discontinuity(&th, 0.01) < 0.06);
    }

    #[test]
    fn discontinuity_examples() {
        assert_eq!(theta_discontinuity(&ThetaField::constant(UNIT, 1.0), 0.1), 0.0);
        let hard = ThetaField::new(
            BOX,
            vec![
                ThetaNode { x: 0.0, left: 1.0, at: 1.0, right: 1.0 },
                ThetaNode { x: 0.5, left: 1.0, at: 0.0, right: 0.0 },
                ThetaNode { x: 1.0, left: 0.0, at: 0.0, right: 0.0 },
            ],
        )
        .unwrap();
        assert_eq!(theta_discontinuity(&hard, 0.01), 1.0);
        let ramp = ThetaField::from_samples(BOX, &[0.25, 0.75], &[1.0, 0.0]).unwrap();
        assert_relative_eq!(theta_discontinuity(&ramp, 0.01), 0.02, epsilon = 1e-12);
    }

    #[test]
    fn point_dip_counts_as_jump() {
        let dip = ThetaField::new(
            BOX,
            vec![
                ThetaNode { x: 0.0, left: 1.0, at: 1.0, right: 1.0 },
                ThetaNode { x: 0.5, left: 1.0, at: 0.0, right: 1.0 },
                ThetaNode { x: 1.0, left: 1.0, at: 1.0, right: 1.0 },
            ],
        )
        .unwrap();
        assert_eq!(theta_discontinuity(&dip, 0.05), 1.0);
    }

    #[test]
    fn csv_round_trip_with_point_value() {
        let dom = Domain::Bounded { x_min: -1.0, x_max: 1.0 };
        let p = Profile::piecewise_constant(dom, &[-0.5, 0.0, 0.5], &[0.1, 0.7, -0.7, -0.1]).unwrap();
        let th = ThetaField::new(
            dom,
            vec![
                ThetaNode { x: -1.0, left: 1.0, at: 1.0, right: 1.0 },
                ThetaNode { x: 0.0, left: 1.0, at: 0.0, right: 1.0 },
                ThetaNode { x: 1.0, left: 1.0, at: 1.0, right: 1.0 },
            ],
        )
        .unwrap();
        let text = write_csv(&p, &th).unwrap();
        assert!(text.starts_with("x,u,theta\n"));
        let (p2, th2) = parse_csv(&text, dom).unwrap();
        assert_eq!(p2, p);
        assert_eq!(th2.eval(0.0), 0.0);
        assert_eq!(theta_discontinuity(&th2, 0.05), 1.0);
        assert_eq!(write_csv(&p2, &th2).unwrap(), text);
    }

    #[test]
    fn csv_round_trip_plateau_theta() {
        let p = Profile::piecewise_constant(UNIT, &[0.1, 0.4, 0.6, 0.9], &[-1.0, 0.0, 1.0, 0.0]).unwrap();
        let pls = [
            PlateauSpec { a: 0.4, b: 0.6, orientation: Orientation::Max },
            PlateauSpec { a: 0.9, b: 1.1, orientation: Orientation::Min },
        ];
        let th = reconstruct_theta(&p, &pls).unwrap();
        let text = write_csv(&p, &th).unwrap();
        let (p2, th2) = parse_csv(&text, UNIT).unwrap();
        assert_eq!(l1_distance(&p, &p2).unwrap(), 0.0);
        for k in 0..200 {
            let x = k as f64 / 200.0;
            assert_eq!(th.eval(x), th2.eval(x));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_pc() -> impl Strategy<Value = Profile> {
            (1usize..8)
                .prop_flat_map(|n| (proptest::collection::vec(0.001f64..0.999, n), proptest::collection::vec(-2.0f64..2.0, n + 1)))
                .prop_map(|(mut xs, vs)| {
                    xs.sort_by(f64::total_cmp);
                    xs.dedup();
                    let vs = vs[..xs.len() + 1].to_vec();
                    Profile::piecewise_constant(BOX, &xs, &vs).unwrap()
                })
        }

        fn arb_pl() -> impl Strategy<Value = Profile> {
            (2usize..10).prop_flat_map(|n| proptest::collection::vec(-2.0f64..2.0, n + 1)).prop_map(|vs| {
                let n = vs.len() - 1;
                let nodes = (0..=n).map(|i| Node::smooth(i as f64 / n as f64, vs[i])).collect();
                Profile::new(BOX, nodes).unwrap()
            })
        }

        proptest! {
            #[test]
            fn l1_metric_axioms(p in arb_pc(), q in arb_pl(), r in arb_pc()) {
                let (pq, qp) = (l1_distance(&p, &q).unwrap(), l1_distance(&q, &p).unwrap());
                prop_assert_eq!(pq, qp);
                let pr = l1_distance(&p, &r).unwrap();
                let qr = l1_distance(&q, &r).unwrap();
                prop_assert!(pr <= pq + qr + 1e-12);
                prop_assert_eq!(l1_distance(&p, &p).unwrap(), 0.0);
            }

            #[test]
            fn tv_is_limit_of_sampled_tv(p in arb_pl(), q in arb_pc()) {
                for prof in [p, q] {
                    // uniform samples plus the midpoint of every piece, so
                    // narrow pieces are not skipped
                    let n = 10_000;
                    let mut xs: Vec<f64> = (0..n).map(|i| i as f64 / n as f64).collect();
                    xs.extend(prof.nodes().windows(2).map(|w| 0.5 * (w[0].x + w[1].x)));
                    xs.sort_by(f64::total_cmp);
                    let mut grid_tv = 0.0;
                    let mut prev = prof.eval(0.0);
                    for &x in xs.iter().skip(1).chain([1.0].iter()) {
                        let v = if x == 1.0 { prof.left_limit(1.0) } else { prof.eval(x) };
                        grid_tv += (v - prev).abs();
                        prev = v;
                    }
                    let tv = total_variation(&prof);
                    prop_assert!((grid_tv - tv).abs() <= 1e-3 * tv.max(1e-9));
                }
            }

            #[test]
            fn reconstructed_theta_invariants(p in arb_pc()) {
                // declare every interior strict extremum piece as a plateau
                let nodes = p.nodes();
                let mut pls = Vec::new();
                for w in nodes.windows(2) {
                    if w[0].x == 0.0 || w[1].x == 1.0 { continue; }
                    let v = w[0].u_right;
                    if w[0].u_left < v && w[1].u_right < v {
                        pls.push(PlateauSpec { a: w[0].x, b: w[1].x, orientation: Orientation::Max });
                    } else if w[0].u_left > v && w[1].u_right > v {
                        pls.push(PlateauSpec { a: w[0].x, b: w[1].x, orientation: Orientation::Min });
                    }
                }
                let th = reconstruct_theta(&p, &pls).unwrap();
                let (lo, hi) = th.min_max();
                prop_assert!(lo >= 0.0 && hi <= 1.0);
                for n in nodes.iter().filter(|n| n.jump() != 0.0) {
                    let expect = if n.jump() > 0.0 { 1.0 } else { 0.0 };
                    prop_assert_eq!(th.eval(n.x), expect);
                }
                let s1 = theta_discontinuity(&th, 0.01);
                let s2 = theta_discontinuity(&th, 0.05);
                prop_assert!(s1 <= s2 + 1e-15);
            }
        }
    }
}
