//! Compact Ahlfors-regular model spaces with exactly computable ball measures.
//!
//! Every space is normalized so that `diam <= 1`. Points of symbolic and
//! Cantor spaces are digit strings of a fixed working depth; two points that
//! agree on all stored digits are at distance 0.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SYMBOLIC_DEPTH: usize = 64;
pub const CANTOR_DEPTH: usize = 34;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum SpaceKind {
    /// `[0,1)^d` mod 1 with the max of circle distances.
    Torus { d: usize },
    /// Sequences over `{0..m-1}` with `rho = b^(common prefix length)`.
    Symbolic { m: u32, b: f64 },
    /// Middle-third Cantor set with the Euclidean metric.
    Cantor3,
    /// Max metric and product measure.
    Product(Vec<Space>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Space {
    pub kind: SpaceKind,
    pub s: f64,
    pub c: f64,
    pub diam: f64,
    /// Working depth of digit coordinates (0 for the torus).
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Point {
    Torus(Vec<f64>),
    /// Symbolic digits, or Cantor ternary digits in `{0, 2}`.
    Digits(Vec<u8>),
    Tuple(Vec<Point>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ball {
    pub center: Point,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Point, radius: f64) -> Self {
        Ball { center, radius }
    }

    pub fn is_empty(&self) -> bool {
        self.radius <= 0.0
    }

    /// `cB = B(x, c r)`.
    pub fn dilate(&self, c: f64) -> Ball {
        Ball::new(self.center.clone(), c * self.radius)
    }

    /// `B^t = B(x, r^(t/s))`.
    pub fn inflate(&self, t: f64, s: f64) -> Ball {
        let r = if self.radius <= 0.0 { 0.0 } else { self.radius.powf(t / s) };
        Ball::new(self.center.clone(), r)
    }
}

impl Space {
    pub fn torus(d: usize) -> Result<Space> {
        if d == 0 {
            return Err(Error::InvalidParameter("torus dimension must be >= 1".into()));
        }
        Ok(Space {
            kind: SpaceKind::Torus { d },
            s: d as f64,
            c: 2f64.powi(d as i32),
            diam: 0.5,
            depth: 0,
        })
    }

    pub fn symbolic(m: u32, b: f64) -> Result<Space> {
        Self::symbolic_with_depth(m, b, SYMBOLIC_DEPTH)
    }

    pub fn symbolic_with_depth(m: u32, b: f64, depth: usize) -> Result<Space> {
        if !(2..=255).contains(&m) {
            return Err(Error::InvalidParameter(format!("symbolic alphabet size {m} outside 2..=255")));
        }
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::InvalidParameter(format!("symbolic ratio b = {b} outside (0, 1)")));
        }
        if depth == 0 {
            return Err(Error::InvalidParameter("working depth must be positive".into()));
        }
        Ok(Space {
            kind: SpaceKind::Symbolic { m, b },
            s: (m as f64).ln() / (1.0 / b).ln(),
            c: m as f64,
            diam: 1.0,
            depth,
        })
    }

    pub fn cantor3() -> Space {
        Space {
            kind: SpaceKind::Cantor3,
            s: 2f64.ln() / 3f64.ln(),
            c: 4.0,
            diam: 1.0,
            depth: CANTOR_DEPTH,
        }
    }

    pub fn product(factors: Vec<Space>) -> Result<Space> {
        if factors.is_empty() {
            return Err(Error::InvalidParameter("product needs at least one factor".into()));
        }
        let s = factors.iter().map(|f| f.s).sum();
        let c = factors.iter().map(|f| f.c).product();
        let diam = factors.iter().map(|f| f.diam).fold(0.0, f64::max);
        Ok(Space { kind: SpaceKind::Product(factors), s, c, diam, depth: 0 })
    }

    pub fn name(&self) -> String {
        match &self.kind {
            SpaceKind::Torus { d } => format!("torus{d}"),
            SpaceKind::Symbolic { m, b } => format!("symbolic({m},{b})"),
            SpaceKind::Cantor3 => "cantor3".into(),
            SpaceKind::Product(fs) => {
                let names: Vec<String> = fs.iter().map(|f| f.name()).collect();
                format!("product({})", names.join(","))
            }
        }
    }

    /// Parses `[space]`-style key-value text, e.g. `space = "symbolic"`, `m = 2`, `b = 0.5`.
    pub fn from_config(text: &str) -> Result<Space> {
        let cfg: SpaceConfig = toml::from_str(text).map_err(|e| Error::InvalidInput(e.to_string()))?;
        cfg.build()
    }

    pub fn check_point(&self, x: &Point) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        match (&self.kind, x) {
            (SpaceKind::Torus { d }, Point::Torus(v)) => {
                if v.len() != *d {
                    return bad(format!("torus{d} point has {} coordinates", v.len()));
                }
                if v.iter().any(|c| !(0.0..1.0).contains(c)) {
                    return bad("torus coordinates must lie in [0, 1)".into());
                }
                Ok(())
            }
            (SpaceKind::Symbolic { m, .. }, Point::Digits(ds)) => {
                if ds.len() != self.depth {
                    return bad(format!("symbolic point has {} digits, working depth is {}", ds.len(), self.depth));
                }
                if ds.iter().any(|&d| d as u32 >= *m) {
                    return bad(format!("symbolic digit outside 0..{m}"));
                }
                Ok(())
            }
            (SpaceKind::Cantor3, Point::Digits(ds)) => {
                if ds.len() != self.depth {
                    return bad(format!("cantor point has {} digits, working depth is {}", ds.len(), self.depth));
                }
                if ds.iter().any(|&d| d != 0 && d != 2) {
                    return bad("cantor digits must be 0 or 2".into());
                }
                Ok(())
            }
            (SpaceKind::Product(fs), Point::Tuple(ps)) => {
                if fs.len() != ps.len() {
                    return bad(format!("product of {} factors given a {}-tuple", fs.len(), ps.len()));
                }
                fs.iter().zip(ps).try_for_each(|(f, p)| f.check_point(p))
            }
            _ => bad(format!("point kind does not match space {}", self.name())),
        }
    }

    /// The distinguished point with all coordinates (digits) zero.
    pub fn zero_point(&self) -> Point {
        match &self.kind {
            SpaceKind::Torus { d } => Point::Torus(vec![0.0; *d]),
            SpaceKind::Symbolic { .. } | SpaceKind::Cantor3 => Point::Digits(vec![0; self.depth]),
            SpaceKind::Product(fs) => Point::Tuple(fs.iter().map(|f| f.zero_point()).collect()),
        }
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match &self.kind {
            SpaceKind::Torus { d } => Point::Torus((0..*d).map(|_| rng.random::<f64>()).collect()),
            SpaceKind::Symbolic { m, .. } => {
                Point::Digits((0..self.depth).map(|_| rng.random_range(0..*m) as u8).collect())
            }
            SpaceKind::Cantor3 => {
                Point::Digits((0..self.depth).map(|_| if rng.random::<bool>() { 2 } else { 0 }).collect())
            }
            SpaceKind::Product(fs) => Point::Tuple(fs.iter().map(|f| f.random_point(rng)).collect()),
        }
    }

    /// Distance with kind checking.
    pub fn distance(&self, x: &Point, y: &Point) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.dist(x, y))
    }

    /// Distance without validation; panics on mismatched kinds.
    pub fn dist(&self, x: &Point, y: &Point) -> f64 {
        match (&self.kind, x, y) {
            (SpaceKind::Torus { .. }, Point::Torus(a), Point::Torus(b)) => {
                a.iter().zip(b).map(|(p, q)| circle_dist(*p, *q)).fold(0.0, f64::max)
            }
            (SpaceKind::Symbolic { b, .. }, Point::Digits(p), Point::Digits(q)) => {
                let k = common_prefix(p, q);
                if k >= self.depth {
                    0.0
                } else {
                    b.powi(k as i32)
                }
            }
            (SpaceKind::Cantor3, Point::Digits(p), Point::Digits(q)) => (cantor_value(p) - cantor_value(q)).abs(),
            (SpaceKind::Product(fs), Point::Tuple(p), Point::Tuple(q)) => {
                fs.iter().zip(p.iter().zip(q)).map(|(f, (a, b))| f.dist(a, b)).fold(0.0, f64::max)
            }
            _ => panic!("point kind does not match space {}", self.name()),
        }
    }

    /// Exact `mu(B(x, r))`. Radius 0 gives 0; radii beyond the diameter give 1.
    pub fn measure_ball(&self, x: &Point, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match (&self.kind, x) {
            (SpaceKind::Torus { d }, _) => (2.0 * r).min(1.0).powi(*d as i32),
            (SpaceKind::Symbolic { m, b }, _) => {
                if r > 1.0 {
                    return 1.0;
                }
                (*m as f64).powi(-(symbolic_ball_depth(*b, r) as i32))
            }
            (SpaceKind::Cantor3, Point::Digits(p)) => {
                let v = cantor_value(p);
                cantor_cdf(v + r) - cantor_cdf(v - r)
            }
            (SpaceKind::Product(fs), Point::Tuple(ps)) => {
                fs.iter().zip(ps).map(|(f, p)| f.measure_ball(p, r)).product()
            }
            _ => panic!("point kind does not match space {}", self.name()),
        }
    }

    pub fn measure(&self, ball: &Ball) -> f64 {
        self.measure_ball(&ball.center, ball.radius)
    }

    /// Draws a point from `mu` restricted to `B(x, r)`; requires `r > 0`.
    pub fn sample_in_ball<R: Rng + ?Sized>(&self, x: &Point, r: f64, rng: &mut R) -> Point {
        match (&self.kind, x) {
            (SpaceKind::Torus { .. }, Point::Torus(c)) => Point::Torus(
                c.iter()
                    .map(|&ci| {
                        if 2.0 * r >= 1.0 {
                            rng.random::<f64>()
                        } else {
                            wrap(ci - r + 2.0 * r * rng.random::<f64>())
                        }
                    })
                    .collect(),
            ),
            (SpaceKind::Symbolic { m, b }, Point::Digits(p)) => {
                let k = if r > 1.0 { 0 } else { symbolic_ball_depth(*b, r).min(self.depth) };
                let mut out = p[..k].to_vec();
                out.extend((k..self.depth).map(|_| rng.random_range(0..*m) as u8));
                Point::Digits(out)
            }
            (SpaceKind::Cantor3, Point::Digits(p)) => {
                let v = cantor_value(p);
                let lo = cantor_cdf(v - r);
                let hi = cantor_cdf(v + r);
                Point::Digits(cantor_digits_of_mass(lo + (hi - lo) * rng.random::<f64>(), self.depth))
            }
            (SpaceKind::Product(fs), Point::Tuple(ps)) => {
                Point::Tuple(fs.iter().zip(ps).map(|(f, p)| f.sample_in_ball(p, r, rng)).collect())
            }
            _ => panic!("point kind does not match space {}", self.name()),
        }
    }

    /// Diameter of `B(x, r)` (exact for torus and symbolic; `min(2r, 1)` for Cantor).
    pub fn ball_diam(&self, x: &Point, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match (&self.kind, x) {
            (SpaceKind::Torus { .. }, _) => (2.0 * r).min(0.5),
            (SpaceKind::Symbolic { b, .. }, _) => {
                if r > 1.0 {
                    1.0
                } else {
                    b.powi(symbolic_ball_depth(*b, r) as i32)
                }
            }
            (SpaceKind::Cantor3, _) => (2.0 * r).min(1.0),
            (SpaceKind::Product(fs), Point::Tuple(ps)) => {
                fs.iter().zip(ps).map(|(f, p)| f.ball_diam(p, r)).fold(0.0, f64::max)
            }
            _ => panic!("point kind does not match space {}", self.name()),
        }
    }

    /// Flattened list of one-dimensional factors (a torus(d) counts as d circles).
    pub fn factors(&self) -> Vec<Space> {
        match &self.kind {
            SpaceKind::Torus { d } => (0..*d).map(|_| Space::torus(1).unwrap()).collect(),
            SpaceKind::Product(fs) => fs.iter().flat_map(|f| f.factors()).collect(),
            _ => vec![self.clone()],
        }
    }

    /// Splits a point into coordinates matching [`Space::factors`].
    pub fn split_point(&self, x: &Point) -> Vec<Point> {
        match (&self.kind, x) {
            (SpaceKind::Torus { .. }, Point::Torus(v)) => v.iter().map(|c| Point::Torus(vec![*c])).collect(),
            (SpaceKind::Product(fs), Point::Tuple(ps)) => {
                fs.iter().zip(ps).flat_map(|(f, p)| f.split_point(p)).collect()
            }
            _ => vec![x.clone()],
        }
    }

    /// Inverse of [`Space::split_point`].
    pub fn join_point(&self, parts: &[Point]) -> Point {
        let mut it = parts.iter();
        self.join_from(&mut it)
    }

    fn join_from<'a, I: Iterator<Item = &'a Point>>(&self, it: &mut I) -> Point {
        match &self.kind {
            SpaceKind::Torus { d } => Point::Torus(
                (0..*d)
                    .map(|_| match it.next() {
                        Some(Point::Torus(v)) => v[0],
                        _ => panic!("missing torus coordinate"),
                    })
                    .collect(),
            ),
            SpaceKind::Product(fs) => Point::Tuple(fs.iter().map(|f| f.join_from(it)).collect()),
            _ => it.next().expect("missing factor coordinate").clone(),
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Space {
    type Err = Error;

    /// Accepts `torusD`, `cantor3`, `symbolic`, `symbolic(m,b)` and
    /// `product(a,b,...)`; a bare comma list is read as a product.
    fn from_str(s: &str) -> Result<Space> {
        let s = s.trim();
        let parts = split_top_level(s);
        if parts.len() > 1 {
            let fs = parts.iter().map(|p| p.parse()).collect::<Result<Vec<Space>>>()?;
            return Space::product(fs);
        }
        if let Some(d) = s.strip_prefix("torus") {
            let d = if d.is_empty() { 1 } else { d.parse().map_err(|_| bad_name(s))? };
            return Space::torus(d);
        }
        if s == "cantor3" || s == "cantor" {
            return Ok(Space::cantor3());
        }
        if s == "symbolic" {
            return Space::symbolic(2, 0.5);
        }
        if let Some(inner) = s.strip_prefix("symbolic(").and_then(|r| r.strip_suffix(')')) {
            let args: Vec<&str> = inner.split(',').map(str::trim).collect();
            if args.len() != 2 {
                return Err(bad_name(s));
            }
            let m = args[0].parse().map_err(|_| bad_name(s))?;
            let b = parse_ratio(args[1]).ok_or_else(|| bad_name(s))?;
            return Space::symbolic(m, b);
        }
        if let Some(inner) = s.strip_prefix("product(").and_then(|r| r.strip_suffix(')')) {
            let fs = split_top_level(inner).iter().map(|p| p.parse()).collect::<Result<Vec<Space>>>()?;
            return Space::product(fs);
        }
        Err(bad_name(s))
    }
}

fn bad_name(s: &str) -> Error {
    Error::InvalidInput(format!("unknown space '{s}'"))
}

/// Parses `0.25` or `1/4`.
pub fn parse_ratio(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => s.trim().parse().ok(),
    }
}

fn split_top_level(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        if ch == ',' && depth == 0 {
            out.push(std::mem::take(&mut cur).trim().to_string());
        } else {
            cur.push(ch);
        }
    }
    out.push(cur.trim().to_string());
    out
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceConfig {
    space: String,
    d: Option<usize>,
    m: Option<u32>,
    b: Option<f64>,
    depth: Option<usize>,
    factors: Option<Vec<String>>,
}

impl SpaceConfig {
    fn build(self) -> Result<Space> {
        match self.space.as_str() {
            "torus" => Space::torus(self.d.unwrap_or(1)),
            "symbolic" => Space::symbolic_with_depth(
                self.m.unwrap_or(2),
                self.b.unwrap_or(0.5),
                self.depth.unwrap_or(SYMBOLIC_DEPTH),
            ),
            "cantor3" => Ok(Space::cantor3()),
            "product" => {
                let fs = self.factors.ok_or_else(|| Error::InvalidInput("product needs `factors`".into()))?;
                Space::product(fs.iter().map(|f| f.parse()).collect::<Result<_>>()?)
            }
            other => other.parse(),
        }
    }
}

#[inline]
pub fn circle_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

#[inline]
pub fn wrap(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

pub fn common_prefix(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// Smallest `k` with `b^k < r`, so that `B(x, r)` is the depth-`k` cylinder.
pub fn symbolic_ball_depth(b: f64, r: f64) -> usize {
    let mut k = 0usize;
    let mut p = 1.0f64;
    while p >= r && k < 4096 {
        k += 1;
        p *= b;
    }
    k
}

pub fn cantor_value(digits: &[u8]) -> f64 {
    let mut v = 0.0;
    let mut w = 1.0 / 3.0;
    for &d in digits {
        v += d as f64 * w;
        w /= 3.0;
    }
    v
}

/// Distribution function of the natural Cantor measure.
pub fn cantor_cdf(y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if y >= 1.0 {
        return 1.0;
    }
    let mut y = y;
    let mut acc = 0.0;
    let mut w = 0.5;
    for _ in 0..64 {
        if y < 1.0 / 3.0 {
            y *= 3.0;
        } else if y < 2.0 / 3.0 {
            return acc + w;
        } else {
            acc += w;
            y = 3.0 * y - 2.0;
        }
        w *= 0.5;
    }
    acc
}

/// Inverse distribution function: the Cantor point carrying mass `v` to its left.
pub fn cantor_digits_of_mass(v: f64, depth: usize) -> Vec<u8> {
    let mut v = v.clamp(0.0, 1.0 - f64::EPSILON);
    (0..depth)
        .map(|_| {
            v *= 2.0;
            if v >= 1.0 {
                v -= 1.0;
                2
            } else {
                0
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub space: String,
    pub trials: usize,
    pub declared_c: f64,
    /// max of `mu(B)/r^s`
    pub worst_upper: f64,
    /// max of `r^s/mu(B)`
    pub worst_lower: f64,
    pub witness_radius: f64,
}

impl AuditReport {
    pub fn worst(&self) -> f64 {
        self.worst_upper.max(self.worst_lower)
    }
}

/// Samples `(x, r)` with `r` log-uniform in `[diam 1e-6, diam]` (the first
/// trial uses `r = diam`) and checks both regularity ratios against `C`.
pub fn regularity_audit(space: &Space, trials: usize, seed: u64) -> Result<AuditReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be >= 1".into()));
    }
    let mut rng = crate::rng::stream(seed, crate::rng::AUDIT, 0);
    let span = (1e6f64).ln();
    let mut rep = AuditReport {
        space: space.name(),
        trials,
        declared_c: space.c,
        worst_upper: 0.0,
        worst_lower: 0.0,
        witness_radius: space.diam,
    };
    let mut worst = 0.0;
    for i in 0..trials {
        let x = space.random_point(&mut rng);
        let r = if i == 0 { space.diam } else { space.diam * (-span * rng.random::<f64>()).exp() };
        let mu = space.measure_ball(&x, r);
        let rs = r.powf(space.s);
        let up = mu / rs;
        let lo = rs / mu;
        rep.worst_upper = rep.worst_upper.max(up);
        rep.worst_lower = rep.worst_lower.max(lo);
        let w = up.max(lo);
        if w > worst {
            worst = w;
            rep.witness_radius = r;
        }
        if w > space.c * (1.0 + 1e-9) {
            return Err(Error::AuditFailure {
                ratio: w,
                c: space.c,
                witness: format!("B({:?}, {r})", x),
            });
        }
    }
    Ok(rep)
}

/// Greedy disjoint subfamily: radius descending, ties by input order.
/// Radius-0 balls are empty and never selected.
pub fn vitali_5r(space: &Space, balls: &[Ball]) -> Vec<Ball> {
    let mut order: Vec<usize> = (0..balls.len()).filter(|&i| balls[i].radius > 0.0).collect();
    order.sort_by(|&i, &j| balls[j].radius.total_cmp(&balls[i].radius).then(i.cmp(&j)));
    let mut chosen: Vec<&Ball> = Vec::new();
    for i in order {
        let b = &balls[i];
        if chosen.iter().all(|c| space.dist(&c.center, &b.center) > c.radius + b.radius) {
            chosen.push(b);
        }
    }
    chosen.into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn t(v: &[f64]) -> Point {
        Point::Torus(v.to_vec())
    }

    fn digits(prefix: &[u8], depth: usize) -> Point {
        let mut d = prefix.to_vec();
        d.resize(depth, 0);
        Point::Digits(d)
    }

    #[test]
    fn distance_examples() {
        let t1 = Space::torus(1).unwrap();
        assert!((t1.distance(&t(&[0.1]), &t(&[0.9])).unwrap() - 0.2).abs() < 1e-12);

        let sy = Space::symbolic(2, 0.5).unwrap();
        let mut x = vec![0u8, 1, 1, 1];
        x.resize(64, 1);
        let mut y = vec![0u8, 1, 0, 0];
        y.resize(64, 0);
        assert_eq!(sy.distance(&Point::Digits(x), &Point::Digits(y)).unwrap(), 0.25);

        let p = Space::product(vec![Space::torus(1).unwrap(), Space::torus(1).unwrap()]).unwrap();
        let a = Point::Tuple(vec![t(&[0.0]), t(&[0.0])]);
        let b = Point::Tuple(vec![t(&[0.1]), t(&[0.3])]);
        assert!((p.distance(&a, &b).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn mismatched_kinds_rejected() {
        let t1 = Space::torus(1).unwrap();
        let err = t1.distance(&t(&[0.1]), &digits(&[1], 64)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        assert!(t1.distance(&t(&[0.1, 0.2]), &t(&[0.1])).is_err());
    }

    #[test]
    fn measure_examples() {
        let t1 = Space::torus(1).unwrap();
        assert!((t1.measure_ball(&t(&[0.3]), 0.2) - 0.4).abs() < 1e-12);
        assert_eq!(t1.measure_ball(&t(&[0.3]), 0.0), 0.0);
        assert_eq!(t1.measure_ball(&t(&[0.3]), 3.0), 1.0);

        let sy = Space::symbolic(2, 0.5).unwrap();
        assert_eq!(sy.measure_ball(&digits(&[1, 0, 1], 64), 0.3), 0.25);
        assert_eq!(sy.measure_ball(&digits(&[], 64), 1.5), 1.0);
    }

    #[test]
    fn cantor_ball_at_triadic_radius() {
        let c = Space::cantor3();
        let mut rng = crate::rng::stream(3, 0, 0);
        for _ in 0..200 {
            let x = c.random_point(&mut rng);
            for n in 0..12 {
                let r = 3f64.powi(-n);
                let mu = c.measure_ball(&x, r);
                let rs = r.powf(c.s);
                assert!(mu <= c.c * rs * (1.0 + 1e-9) && mu >= rs / c.c * (1.0 - 1e-9), "n={n} mu={mu}");
            }
        }
    }

    #[test]
    fn cantor_cdf_fixed_points() {
        assert_eq!(cantor_cdf(1.0 / 3.0), 0.5);
        assert_eq!(cantor_cdf(0.5), 0.5);
        assert!((cantor_cdf(2.0 / 9.0) - 0.25).abs() < 1e-12);
        assert!((cantor_cdf(0.75) - 2.0 / 3.0).abs() < 1e-9);
        assert!((cantor_cdf(0.25) - 1.0 / 3.0).abs() < 1e-9);
        let d = cantor_digits_of_mass(0.25, 10);
        assert_eq!(&d[..3], &[0, 2, 0]);
    }

    #[test]
    fn audits_pass() {
        for sp in [
            Space::torus(1).unwrap(),
            Space::torus(2).unwrap(),
            Space::symbolic(2, 0.5).unwrap(),
            Space::cantor3(),
        ] {
            let rep = regularity_audit(&sp, 10_000, 11).unwrap();
            assert!(rep.worst() <= sp.c * (1.0 + 1e-9), "{}", sp.name());
        }
        let rep = regularity_audit(&Space::torus(1).unwrap(), 1, 0).unwrap();
        assert!(rep.worst().is_finite());
        assert_eq!(rep.witness_radius, 0.5);
    }

    #[test]
    fn audit_reports_witness_on_bad_constant() {
        let mut sp = Space::torus(1).unwrap();
        sp.c = 1.5;
        match regularity_audit(&sp, 100, 1) {
            Err(Error::AuditFailure { ratio, witness, .. }) => {
                assert!(ratio > 1.5);
                assert!(witness.starts_with("B("));
            }
            other => panic!("expected audit failure, got {other:?}"),
        }
    }

    #[test]
    fn vitali_examples() {
        let t1 = Space::torus(1).unwrap();
        let single = vec![Ball::new(t(&[0.0]), 0.1)];
        assert_eq!(vitali_5r(&t1, &single), single);

        let two = vec![Ball::new(t(&[0.0]), 0.1), Ball::new(t(&[0.05]), 0.1)];
        let sel = vitali_5r(&t1, &two);
        assert_eq!(sel, vec![two[0].clone()]);
        assert!(t1.dist(&two[1].center, &sel[0].center) + two[1].radius <= 5.0 * sel[0].radius);
    }

    #[test]
    fn vitali_grid_cover() {
        let t1 = Space::torus(1).unwrap();
        let mut rng = crate::rng::stream(5, 0, 0);
        let balls: Vec<Ball> =
            (0..50).map(|_| Ball::new(t1.random_point(&mut rng), 0.002 + 0.05 * rng.random::<f64>())).collect();
        let sel = vitali_5r(&t1, &balls);
        for (i, a) in sel.iter().enumerate() {
            for b in &sel[i + 1..] {
                assert!(t1.dist(&a.center, &b.center) > a.radius + b.radius);
            }
        }
        for g in 0..10_000 {
            let y = t(&[g as f64 / 10_000.0]);
            if balls.iter().any(|b| t1.dist(&b.center, &y) < b.radius) {
                assert!(sel.iter().any(|b| t1.dist(&b.center, &y) < 5.0 * b.radius), "grid point {g}");
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for name in ["torus1", "torus2", "symbolic(2,0.5)", "cantor3", "product(torus1,symbolic(3,0.25))"] {
            let sp: Space = name.parse().unwrap();
            assert_eq!(sp.name(), name);
        }
        let p: Space = "torus1,torus1".parse().unwrap();
        assert_eq!(p.s, 2.0);
        assert!("klein".parse::<Space>().is_err());
    }

    #[test]
    fn config_parsing() {
        let sp = Space::from_config("space = \"symbolic\"\nm = 2\nb = 0.5\n").unwrap();
        assert_eq!(sp.kind, SpaceKind::Symbolic { m: 2, b: 0.5 });
        let p = Space::from_config("space = \"product\"\nfactors = [\"torus1\", \"cantor3\"]\n").unwrap();
        assert_eq!(p.factors().len(), 2);
        assert!(Space::from_config("space = \"torus\"\ncolour = 3\n").is_err());
    }

    #[test]
    fn inflate_and_dilate() {
        let b = Ball::new(t(&[0.5]), 0.01);
        assert!((b.inflate(0.5, 1.0).radius - 0.1).abs() < 1e-12);
        assert!((b.dilate(5.0).radius - 0.05).abs() < 1e-12);
        assert!(Ball::new(t(&[0.5]), 0.0).inflate(0.5, 1.0).is_empty());
    }

    fn spaces() -> Vec<Space> {
        vec![
            Space::torus(1).unwrap(),
            Space::torus(2).unwrap(),
            Space::symbolic(2, 0.5).unwrap(),
            Space::symbolic(3, 0.25).unwrap(),
            Space::cantor3(),
            Space::product(vec![Space::torus(1).unwrap(), Space::symbolic(2, 0.5).unwrap()]).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn metric_axioms(seed in any::<u64>(), which in 0usize..6) {
            let sp = &spaces()[which];
            let mut rng = crate::rng::stream(seed, 0, 0);
            for _ in 0..16 {
                let x = sp.random_point(&mut rng);
                let y = sp.random_point(&mut rng);
                let z = sp.random_point(&mut rng);
                let dxy = sp.dist(&x, &y);
                prop_assert_eq!(sp.dist(&x, &x), 0.0);
                prop_assert!((dxy - sp.dist(&y, &x)).abs() < 1e-15);
                prop_assert!(dxy <= sp.dist(&x, &z) + sp.dist(&z, &y) + 1e-12);
                prop_assert!(dxy <= sp.diam + 1e-12);
            }
        }

        #[test]
        fn measure_monotone_and_regular(seed in any::<u64>(), which in 0usize..6, r1 in 1e-5f64..1.0, r2 in 1e-5f64..1.0) {
            let sp = &spaces()[which];
            let mut rng = crate::rng::stream(seed, 0, 0);
            let x = sp.random_point(&mut rng);
            let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(sp.measure_ball(&x, lo) <= sp.measure_ball(&x, hi) + 1e-15);
            let r = lo.min(sp.diam);
            let mu = sp.measure_ball(&x, r);
            let rs = r.powf(sp.s);
            prop_assert!(mu <= sp.c * rs * (1.0 + 1e-9));
            prop_assert!(rs <= sp.c * mu * (1.0 + 1e-9));
        }

        #[test]
        fn product_measure_factorizes(seed in any::<u64>(), r in 1e-4f64..0.6) {
            let f1 = Space::torus(1).unwrap();
            let f2 = Space::symbolic(2, 0.5).unwrap();
            let p = Space::product(vec![f1.clone(), f2.clone()]).unwrap();
            let mut rng = crate::rng::stream(seed, 0, 0);
            let x = p.random_point(&mut rng);
            let Point::Tuple(parts) = &x else { unreachable!() };
            let expect = f1.measure_ball(&parts[0], r) * f2.measure_ball(&parts[1], r);
            prop_assert!((p.measure_ball(&x, r) - expect).abs() < 1e-15);
        }

        #[test]
        fn vitali_output_disjoint(seed in any::<u64>(), n in 1usize..40, which in 0usize..6) {
            let sp = &spaces()[which];
            let mut rng = crate::rng::stream(seed, 0, 0);
            let balls: Vec<Ball> = (0..n).map(|_| Ball::new(sp.random_point(&mut rng), 0.2 * rng.random::<f64>())).collect();
            let sel = vitali_5r(sp, &balls);
            for (i, a) in sel.iter().enumerate() {
                for b in &sel[i + 1..] {
                    prop_assert!(sp.dist(&a.center, &b.center) > a.radius + b.radius);
                }
            }
            for b in &balls {
                if b.radius > 0.0 {
                    prop_assert!(sel.iter().any(|c| sp.dist(&c.center, &b.center) + b.radius <= 5.0 * c.radius + 1e-12));
                }
            }
        }

        #[test]
        fn ball_samples_land_in_ball(seed in any::<u64>(), which in 0usize..6, r in 1e-4f64..0.9) {
            let sp = &spaces()[which];
            let mut rng = crate::rng::stream(seed, 0, 0);
            let x = sp.random_point(&mut rng);
            for _ in 0..8 {
                let y = sp.sample_in_ball(&x, r, &mut rng);
                prop_assert!(sp.check_point(&y).is_ok());
                prop_assert!(sp.dist(&x, &y) <= r + 1e-12);
            }
        }
    }
}
