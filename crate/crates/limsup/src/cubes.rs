//! Generalized dyadic cubes on the model spaces and finite-resolution cube sets.
//!
//! A tree is the product of one-dimensional factor trees: b-adic half-open
//! arcs on each circle, cylinders on symbolic and Cantor factors. A level-n
//! cube is addressed by a mixed-radix index whose base-`B` digits (most
//! significant first) form the path from the root, with `B` the product of
//! the factor branchings. Every level-n cube has measure `B^-n`.

use std::fmt::Write as _;

use fixedbitset::FixedBitSet;
use rand::Rng;
use serde::Serialize;

use crate::spaces::{circle_dist, symbolic_ball_depth, Point, Space, SpaceKind};
use crate::{Error, Result};

/// Largest number of level-N cubes a [`CubeSet`] may index.
pub const MAX_SET_CUBES: u64 = 1 << 28;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Factor {
    /// Arcs `[i/K, (i+1)/K)` with `K = k^n`; the center sits at relative offset `p`.
    Circle { k: u64, p: f64 },
    Digits { m: u64, b: f64, depth: usize },
    /// Ternary cylinders, two per parent, centered at their left endpoint.
    Cantor { depth: usize },
}

impl Factor {
    pub fn branching(&self) -> u64 {
        match self {
            Factor::Circle { k, .. } => *k,
            Factor::Digits { m, .. } => *m,
            Factor::Cantor { .. } => 2,
        }
    }

    fn depth(&self) -> Option<usize> {
        match self {
            Factor::Circle { .. } => None,
            Factor::Digits { depth, .. } | Factor::Cantor { depth } => Some(*depth),
        }
    }


    /// Exact sandwich constants of the natural cells.
    fn exact_constants(&self) -> (f64, f64) {
        match self {
            Factor::Circle { p, .. } => (p.min(1.0 - p), p.max(1.0 - p)),
            Factor::Digits { b, .. } => (1.0 / b, 1.0),
            Factor::Cantor { .. } => (1.0, 1.0),
        }
    }

    /// Index of the level-n cell containing the coordinate `x`.
    pub fn index_of(&self, x: &Point, n: u32) -> u64 {
        match (self, x) {
            (Factor::Circle { k, .. }, Point::Torus(v)) => {
                let cells = k.pow(n);
                ((v[0] * cells as f64).floor() as u64).min(cells - 1)
            }
            (Factor::Digits { m, .. }, Point::Digits(d)) => {
                d[..n as usize].iter().fold(0u64, |acc, &di| acc * m + di as u64)
            }
            (Factor::Cantor { .. }, Point::Digits(d)) => {
                d[..n as usize].iter().fold(0u64, |acc, &di| acc * 2 + (di / 2) as u64)
            }
            _ => panic!("coordinate does not match factor"),
        }
    }

    fn digits_of(&self, idx: u64, n: u32, depth: usize) -> Vec<u8> {
        let k = self.branching();
        let mut out = vec![0u8; depth];
        let mut v = idx;
        for l in (0..n as usize).rev() {
            let d = (v % k) as u8;
            out[l] = if matches!(self, Factor::Cantor { .. }) { 2 * d } else { d };
            v /= k;
        }
        out
    }

    pub fn center(&self, idx: u64, n: u32) -> Point {
        match self {
            Factor::Circle { k, p } => Point::Torus(vec![(idx as f64 + p) / k.pow(n) as f64]),
            Factor::Digits { depth, .. } | Factor::Cantor { depth } => Point::Digits(self.digits_of(idx, n, *depth)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, idx: u64, n: u32, rng: &mut R) -> Point {
        match self {
            Factor::Circle { k, .. } => {
                let cells = k.pow(n) as f64;
                let v = (idx as f64 + rng.random::<f64>()) / cells;
                Point::Torus(vec![if v >= 1.0 { 0.0 } else { v }])
            }
            Factor::Digits { m, depth, .. } => {
                let mut d = self.digits_of(idx, n, *depth);
                for x in d.iter_mut().skip(n as usize) {
                    *x = rng.random_range(0..*m) as u8;
                }
                Point::Digits(d)
            }
            Factor::Cantor { depth } => {
                let mut d = self.digits_of(idx, n, *depth);
                for x in d.iter_mut().skip(n as usize) {
                    *x = if rng.random::<bool>() { 2 } else { 0 };
                }
                Point::Digits(d)
            }
        }
    }

    /// Half-open ranges of level-N indices whose centers lie strictly within `r` of `x`.
    fn centers_within(&self, x: &Point, r: f64, level: u32) -> Vec<(u64, u64)> {
        let total = self.branching().pow(level);
        if r <= 0.0 {
            return Vec::new();
        }
        match (self, x) {
            (Factor::Circle { k, p }, Point::Torus(v)) => circle_centers_within(k.pow(level), *p, v[0], r),
            (Factor::Digits { m, b, depth }, Point::Digits(d)) => {
                let mut out = Vec::new();
                let mut prefix = 0u64;
                for n in 0..level {
                    // siblings off the path of x share exactly n digits with it
                    let span = m.pow(level - n - 1);
                    if b.powi(n as i32) < r {
                        for dig in 0..*m {
                            if dig != d[n as usize] as u64 {
                                let lo = (prefix * m + dig) * span;
                                out.push((lo, lo + span));
                            }
                        }
                    }
                    prefix = prefix * m + d[n as usize] as u64;
                }
                let zeros = d[level as usize..].iter().take_while(|&&z| z == 0).count();
                let cp = level as usize + zeros;
                let dist = if cp >= *depth { 0.0 } else { b.powi(cp as i32) };
                if dist < r {
                    out.push((prefix, prefix + 1));
                }
                normalize_ranges(out, total)
            }
            (Factor::Cantor { .. }, Point::Digits(d)) => {
                let xv = crate::spaces::cantor_value(d);
                let mut out = Vec::new();
                cantor_descend(0, 0, 0.0, level, xv, r, &mut out);
                normalize_ranges(out, total)
            }
            _ => panic!("coordinate does not match factor"),
        }
    }
}

fn circle_centers_within(cells: u64, p: f64, x: f64, r: f64) -> Vec<(u64, u64)> {
    if r > 0.5 {
        return vec![(0, cells)];
    }
    let kf = cells as f64;
    let inside = |i: i64| {
        let c = ((i.rem_euclid(cells as i64)) as f64 + p) / kf;
        circle_dist(c, x) < r
    };
    let mut lo = (x * kf - r * kf - p).floor() as i64 + 1;
    let mut hi = (x * kf + r * kf - p).ceil() as i64 - 1;
    // settle floating-point edges against the exact predicate
    while inside(lo - 1) && hi - lo + 1 < cells as i64 {
        lo -= 1;
    }
    while lo <= hi && !inside(lo) {
        lo += 1;
    }
    while inside(hi + 1) && hi - lo + 1 < cells as i64 {
        hi += 1;
    }
    while hi >= lo && !inside(hi) {
        hi -= 1;
    }
    if hi < lo {
        return Vec::new();
    }
    if hi - lo + 1 >= cells as i64 {
        return vec![(0, cells)];
    }
    let a = lo.rem_euclid(cells as i64) as u64;
    let len = (hi - lo + 1) as u64;
    if a + len <= cells {
        vec![(a, a + len)]
    } else {
        vec![(0, a + len - cells), (a, cells)]
    }
}

fn cantor_descend(n: u32, idx: u64, v: f64, level: u32, x: f64, r: f64, out: &mut Vec<(u64, u64)>) {
    let w = 3f64.powi(-(n as i32));
    let gap = if x < v {
        v - x
    } else if x > v + w {
        x - v - w
    } else {
        0.0
    };
    if gap >= r {
        return;
    }
    let span = 1u64 << (level - n);
    if (x - v).abs().max((v + w - x).abs()) < r {
        out.push((idx * span, (idx + 1) * span));
        return;
    }
    if n == level {
        if (v - x).abs() < r {
            out.push((idx, idx + 1));
        }
        return;
    }
    cantor_descend(n + 1, idx * 2, v, level, x, r, out);
    cantor_descend(n + 1, idx * 2 + 1, v + 2.0 * w / 3.0, level, x, r, out);
}

fn normalize_ranges(mut v: Vec<(u64, u64)>, total: u64) -> Vec<(u64, u64)> {
    v.sort_unstable();
    let mut out: Vec<(u64, u64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        let b = b.min(total);
        if a >= b {
            continue;
        }
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CubeId {
    pub level: u32,
    pub index: u64,
}

impl CubeId {
    pub const ROOT: CubeId = CubeId { level: 0, index: 0 };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Mode {
    Inner,
    Outer,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CubeTree {
    pub space: Space,
    pub b: f64,
    pub max_level: u32,
    pub factors: Vec<Factor>,
    /// Branching of the product tree.
    pub branching: u64,
    pub c1: f64,
    pub c1prime: f64,
    /// Whether level-n centers reappear as level-(n+1) centers.
    pub nested_centers: bool,
    #[serde(skip)]
    factor_spaces: Vec<Space>,
    #[serde(skip)]
    strides: Vec<u64>,
}

impl CubeTree {
    /// Builds the cube tree of `space` with ratio `b`.
    ///
    /// Circles accept `b = 1/k` for integers `k >= 2`; symbolic factors only
    /// their own ratio; Cantor factors only `1/3`.
    pub fn new(space: &Space, b: f64, max_level: u32) -> Result<CubeTree> {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::InvalidParameter(format!("cube ratio b = {b} outside (0, 1)")));
        }
        let factor_spaces = space.factors();
        let mut factors = Vec::with_capacity(factor_spaces.len());
        for f in &factor_spaces {
            let fac = match &f.kind {
                SpaceKind::Torus { .. } => {
                    let k = (1.0 / b).round();
                    if (k * b - 1.0).abs() > 1e-9 || k < 2.0 {
                        return Err(Error::InvalidParameter(format!(
                            "circle cells need b = 1/k for an integer k >= 2, got {b}"
                        )));
                    }
                    let k = k as u64;
                    let p = if k == 2 { 0.5 } else { ((k - 1) / 2) as f64 / (k - 1) as f64 };
                    Factor::Circle { k, p }
                }
                SpaceKind::Symbolic { m, b: b0 } => {
                    if (b0 - b).abs() > 1e-12 {
                        return Err(Error::InvalidParameter(format!(
                            "symbolic({m},{b0}) cylinders have ratio {b0}, not {b}"
                        )));
                    }
                    Factor::Digits { m: *m as u64, b: *b0, depth: f.depth }
                }
                SpaceKind::Cantor3 => {
                    if (b - 1.0 / 3.0).abs() > 1e-12 {
                        return Err(Error::InvalidParameter(format!("cantor3 cylinders have ratio 1/3, not {b}")));
                    }
                    Factor::Cantor { depth: f.depth }
                }
                SpaceKind::Product(_) => unreachable!("factors are flattened"),
            };
            if let Some(d) = fac.depth() {
                if max_level as usize > d {
                    return Err(Error::ResolutionExceeded { level: max_level, max: d as u32 });
                }
            }
            factors.push(fac);
        }
        let branching: u64 = factors.iter().map(|f| f.branching()).product();
        let cap = (63.0 / (branching as f64).log2()).floor() as u32;
        if max_level > cap {
            return Err(Error::ResolutionExceeded { level: max_level, max: cap });
        }
        let (c1, c1prime) = if b < 1.0 / 3.0 {
            (0.5 - b / (1.0 - b), 1.0 / (1.0 - b))
        } else {
            factors.iter().map(|f| f.exact_constants()).fold((f64::INFINITY, 0.0f64), |(a, c), (x, y)| (a.min(x), c.max(y)))
        };
        let nested_centers = !factors.iter().any(|f| matches!(f, Factor::Circle { k: 2, .. }));
        let mut strides = Vec::with_capacity(factors.len());
        let mut acc = 1u64;
        for f in &factors {
            strides.push(acc);
            acc *= f.branching();
        }
        Ok(CubeTree {
            space: space.clone(),
            b,
            max_level,
            factors,
            branching,
            c1,
            c1prime,
            nested_centers,
            factor_spaces,
            strides,
        })
    }

    /// Tree with the space's natural ratio (`1/2` on tori unless a factor fixes it).
    pub fn natural(space: &Space, max_level: u32) -> Result<CubeTree> {
        CubeTree::new(space, natural_ratio(space), max_level)
    }

    pub fn count(&self, n: u32) -> u64 {
        self.branching.pow(n)
    }

    pub fn cube_measure(&self, n: u32) -> f64 {
        (self.branching as f64).powi(-(n as i32))
    }

    pub fn scale(&self, n: u32) -> f64 {
        self.b.powi(n as i32)
    }

    pub fn parent(&self, q: CubeId) -> CubeId {
        assert!(q.level > 0, "root has no parent");
        CubeId { level: q.level - 1, index: q.index / self.branching }
    }

    pub fn ancestor(&self, q: CubeId, n: u32) -> CubeId {
        assert!(n <= q.level);
        CubeId { level: n, index: q.index / self.branching.pow(q.level - n) }
    }

    pub fn children(&self, q: CubeId) -> impl Iterator<Item = CubeId> + '_ {
        (0..self.branching).map(move |d| CubeId { level: q.level + 1, index: q.index * self.branching + d })
    }

    /// Contiguous range of level-`n` indices below `q`.
    pub fn descendant_range(&self, q: CubeId, n: u32) -> (u64, u64) {
        let span = self.branching.pow(n - q.level);
        (q.index * span, (q.index + 1) * span)
    }

    pub fn cubes_at(&self, n: u32) -> impl Iterator<Item = CubeId> {
        (0..self.count(n)).map(move |index| CubeId { level: n, index })
    }

    /// Base-`B` digits from the root.
    pub fn path(&self, q: CubeId) -> Vec<u64> {
        let mut out = vec![0; q.level as usize];
        let mut v = q.index;
        for slot in out.iter_mut().rev() {
            *slot = v % self.branching;
            v /= self.branching;
        }
        out
    }

    pub fn from_path(&self, path: &[u64]) -> Result<CubeId> {
        if path.len() > self.max_level as usize {
            return Err(Error::ResolutionExceeded { level: path.len() as u32, max: self.max_level });
        }
        let mut index = 0u64;
        for &d in path {
            if d >= self.branching {
                return Err(Error::InvalidInput(format!("path digit {d} exceeds branching {}", self.branching)));
            }
            index = index * self.branching + d;
        }
        Ok(CubeId { level: path.len() as u32, index })
    }

    pub fn path_string(&self, q: CubeId) -> String {
        let digits = self.path(q);
        if self.branching <= 36 {
            digits.iter().map(|&d| std::char::from_digit(d as u32, 36).unwrap()).collect()
        } else {
            digits.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(".")
        }
    }

    pub fn parse_path(&self, s: &str, level: u32) -> Result<CubeId> {
        let bad = || Error::InvalidInput(format!("bad cube path '{s}'"));
        let digits: Vec<u64> = if level == 0 {
            Vec::new()
        } else if self.branching <= 36 {
            s.chars().map(|c| c.to_digit(36).map(u64::from).ok_or_else(bad)).collect::<Result<_>>()?
        } else {
            s.split('.').map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?
        };
        if digits.len() != level as usize {
            return Err(bad());
        }
        self.from_path(&digits)
    }

    /// Per-factor indices of a level-n cube.
    pub fn split_index(&self, q: CubeId) -> Vec<u64> {
        if self.factors.len() == 1 {
            return vec![q.index];
        }
        let mut out = vec![0u64; self.factors.len()];
        for d in self.path(q) {
            for (f, fac) in self.factors.iter().enumerate() {
                let k = fac.branching();
                out[f] = out[f] * k + (d / self.strides[f]) % k;
            }
        }
        out
    }

    /// Inverse of [`CubeTree::split_index`].
    pub fn combine_index(&self, parts: &[u64], n: u32) -> u64 {
        if self.factors.len() == 1 {
            return parts[0];
        }
        let mut idx = 0u64;
        for l in 0..n {
            let mut digit = 0u64;
            for (f, fac) in self.factors.iter().enumerate() {
                let k = fac.branching();
                digit += ((parts[f] / k.pow(n - 1 - l)) % k) * self.strides[f];
            }
            idx = idx * self.branching + digit;
        }
        idx
    }

    pub fn cube_containing(&self, x: &Point, n: u32) -> CubeId {
        let parts = self.space.split_point(x);
        let idx: Vec<u64> = self.factors.iter().zip(&parts).map(|(f, p)| f.index_of(p, n)).collect();
        CubeId { level: n, index: self.combine_index(&idx, n) }
    }

    pub fn center(&self, q: CubeId) -> Point {
        let idx = self.split_index(q);
        let parts: Vec<Point> = self.factors.iter().zip(idx).map(|(f, i)| f.center(i, q.level)).collect();
        self.space.join_point(&parts)
    }

    /// Root center, the distinguished point shared by every level.
    pub fn x0(&self) -> Point {
        self.center(CubeId::ROOT)
    }

    /// Draws a point from `mu` restricted to `q`.
    pub fn sample_in_cube<R: Rng + ?Sized>(&self, q: CubeId, rng: &mut R) -> Point {
        let idx = self.split_index(q);
        let parts: Vec<Point> = self.factors.iter().zip(idx).map(|(f, i)| f.sample(i, q.level, rng)).collect();
        self.space.join_point(&parts)
    }

    /// Rectangle `prod_f B_f(x_f, radii[f])` over the flattened factors, at level `n`.
    pub fn rect_to_cubeset(&self, center: &Point, radii: &[f64], n: u32, mode: Mode) -> Result<CubeSet> {
        let mut set = CubeSet::empty(self, n)?;
        self.insert_rect(&mut set, center, radii, mode)?;
        Ok(set)
    }

    /// Adds the cubes of `rect_to_cubeset` at `set`'s level to `set`.
    pub fn insert_rect(&self, set: &mut CubeSet, center: &Point, radii: &[f64], mode: Mode) -> Result<()> {
        let n = set.level;
        if radii.len() != self.factors.len() {
            return Err(Error::InvalidInput(format!(
                "{} radii given for {} factors",
                radii.len(),
                self.factors.len()
            )));
        }
        if radii.iter().any(|&r| r <= 0.0) {
            return Ok(());
        }
        let slack = self.c1prime * self.scale(n);
        let parts = self.space.split_point(center);
        let mut lists = Vec::with_capacity(self.factors.len());
        for ((fac, fs), (p, &r)) in self.factors.iter().zip(&self.factor_spaces).zip(parts.iter().zip(radii)) {
            let total = fac.branching().pow(n);
            let reach = match mode {
                Mode::Outer => r + slack,
                Mode::Inner => r - slack,
            };
            let ranges = if reach > fs.diam { vec![(0, total)] } else { fac.centers_within(p, reach, n) };
            if ranges.is_empty() {
                return Ok(());
            }
            lists.push(ranges);
        }
        if lists.len() == 1 {
            for &(a, b) in &lists[0] {
                set.bits.insert_range(a as usize..b as usize);
            }
            return Ok(());
        }
        let expanded: Vec<Vec<u64>> = lists.iter().map(|l| l.iter().flat_map(|&(a, b)| a..b).collect()).collect();
        let mut cursor = vec![0usize; expanded.len()];
        let mut parts_idx = vec![0u64; expanded.len()];
        'outer: loop {
            for (f, c) in cursor.iter().enumerate() {
                parts_idx[f] = expanded[f][*c];
            }
            set.bits.insert(self.combine_index(&parts_idx, n) as usize);
            for f in (0..cursor.len()).rev() {
                cursor[f] += 1;
                if cursor[f] < expanded[f].len() {
                    continue 'outer;
                }
                cursor[f] = 0;
            }
            break;
        }
        Ok(())
    }

    /// Level-`n` cubes whose outer sandwich ball meets (outer mode) or lies
    /// inside (inner mode) `B(x, r)`.
    pub fn ball_to_cubeset(&self, x: &Point, r: f64, n: u32, mode: Mode) -> Result<CubeSet> {
        if n > self.max_level {
            return Err(Error::ResolutionExceeded { level: n, max: self.max_level });
        }
        if r > self.space.diam {
            return CubeSet::full(self, n);
        }
        let radii = vec![r; self.factors.len()];
        self.rect_to_cubeset(x, &radii, n, mode)
    }

    pub fn factor_spaces(&self) -> &[Space] {
        &self.factor_spaces
    }
}

/// Default cube ratio for a space.
pub fn natural_ratio(space: &Space) -> f64 {
    space
        .factors()
        .iter()
        .find_map(|f| match f.kind {
            SpaceKind::Symbolic { b, .. } => Some(b),
            SpaceKind::Cantor3 => Some(1.0 / 3.0),
            _ => None,
        })
        .unwrap_or(0.5)
}

/// A set of cubes at one level, stored as a bitset over level indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CubeSet {
    pub level: u32,
    pub branching: u64,
    bits: FixedBitSet,
}

impl CubeSet {
    pub fn empty(tree: &CubeTree, level: u32) -> Result<CubeSet> {
        if level > tree.max_level {
            return Err(Error::ResolutionExceeded { level, max: tree.max_level });
        }
        let n = tree.count(level);
        if n > MAX_SET_CUBES {
            let max = (MAX_SET_CUBES as f64).log(tree.branching as f64).floor() as u32;
            return Err(Error::ResolutionExceeded { level, max });
        }
        Ok(CubeSet { level, branching: tree.branching, bits: FixedBitSet::with_capacity(n as usize) })
    }

    pub fn full(tree: &CubeTree, level: u32) -> Result<CubeSet> {
        let mut s = CubeSet::empty(tree, level)?;
        s.bits.insert_range(..);
        Ok(s)
    }

    pub fn from_cubes(tree: &CubeTree, level: u32, cubes: impl IntoIterator<Item = CubeId>) -> Result<CubeSet> {
        let mut s = CubeSet::empty(tree, level)?;
        for q in cubes {
            s.insert(q)?;
        }
        Ok(s)
    }

    pub fn capacity(&self) -> u64 {
        self.bits.len() as u64
    }

    pub fn insert(&mut self, q: CubeId) -> Result<()> {
        if q.level != self.level || q.index >= self.capacity() {
            return Err(Error::InvalidInput(format!("cube {q:?} not at set level {}", self.level)));
        }
        self.bits.insert(q.index as usize);
        Ok(())
    }

    /// Adds every level-N descendant of `q` (a cube at level ≤ N).
    pub fn insert_subtree(&mut self, q: CubeId) {
        let span = self.branching.pow(self.level - q.level);
        self.bits.insert_range((q.index * span) as usize..((q.index + 1) * span) as usize);
    }

    pub fn insert_index_range(&mut self, lo: u64, hi: u64) {
        self.bits.insert_range(lo as usize..hi as usize);
    }

    pub fn contains(&self, q: CubeId) -> bool {
        q.level == self.level && self.bits.contains(q.index as usize)
    }

    pub fn contains_index(&self, idx: u64) -> bool {
        self.bits.contains(idx as usize)
    }

    pub fn len(&self) -> u64 {
        self.bits.count_ones(..) as u64
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_clear()
    }

    pub fn is_full(&self) -> bool {
        self.bits.is_full()
    }

    pub fn measure(&self) -> f64 {
        self.len() as f64 * (self.branching as f64).powi(-(self.level as i32))
    }

    pub fn iter(&self) -> impl Iterator<Item = CubeId> + '_ {
        let level = self.level;
        self.bits.ones().map(move |i| CubeId { level, index: i as u64 })
    }

    pub fn indices(&self) -> impl Iterator<Item = u64> + '_ {
        self.bits.ones().map(|i| i as u64)
    }

    /// Whether some member lies in `[lo, hi)`.
    pub fn any_in_range(&self, lo: u64, hi: u64) -> bool {
        self.bits.count_ones(lo as usize..hi as usize) > 0
    }

    /// Same set expressed at a finer level; measure is preserved exactly.
    pub fn refine(&self, tree: &CubeTree, level: u32) -> Result<CubeSet> {
        if level < self.level {
            return Err(Error::InvalidInput(format!("cannot refine level {} to coarser {level}", self.level)));
        }
        if level == self.level {
            return Ok(self.clone());
        }
        let mut out = CubeSet::empty(tree, level)?;
        let span = tree.branching.pow(level - self.level);
        for i in self.indices() {
            out.bits.insert_range((i * span) as usize..((i + 1) * span) as usize);
        }
        Ok(out)
    }

    /// Level-`n` ancestors of the members (the cubes meeting the set).
    pub fn project(&self, tree: &CubeTree, n: u32) -> Result<CubeSet> {
        if n > self.level {
            return Err(Error::InvalidInput(format!("cannot project level {} to finer {n}", self.level)));
        }
        let mut out = CubeSet::empty(tree, n)?;
        let span = tree.branching.pow(self.level - n);
        let mut last = u64::MAX;
        for i in self.indices() {
            let a = i / span;
            if a != last {
                out.bits.insert(a as usize);
                last = a;
            }
        }
        Ok(out)
    }

    /// Number of level-`n` cubes meeting the set.
    pub fn count_at(&self, tree: &CubeTree, n: u32) -> u64 {
        let span = tree.branching.pow(self.level - n);
        let mut last = u64::MAX;
        let mut c = 0;
        for i in self.indices() {
            let a = i / span;
            if a != last {
                c += 1;
                last = a;
            }
        }
        c
    }

    fn aligned(&self, tree: &CubeTree, other: &CubeSet) -> Result<(CubeSet, CubeSet)> {
        let n = self.level.max(other.level);
        Ok((self.refine(tree, n)?, other.refine(tree, n)?))
    }

    pub fn union(&self, tree: &CubeTree, other: &CubeSet) -> Result<CubeSet> {
        let (mut a, b) = self.aligned(tree, other)?;
        a.bits.union_with(&b.bits);
        Ok(a)
    }

    pub fn intersect(&self, tree: &CubeTree, other: &CubeSet) -> Result<CubeSet> {
        let (mut a, b) = self.aligned(tree, other)?;
        a.bits.intersect_with(&b.bits);
        Ok(a)
    }

    /// In-place union with a set at the same level.
    pub fn union_with(&mut self, other: &CubeSet) {
        assert_eq!(self.level, other.level);
        self.bits.union_with(&other.bits);
    }

    /// In-place intersection with a set at the same level.
    pub fn intersect_with(&mut self, other: &CubeSet) {
        assert_eq!(self.level, other.level);
        self.bits.intersect_with(&other.bits);
    }

    pub fn complement(&self) -> CubeSet {
        let mut c = self.clone();
        c.bits.toggle_range(..);
        c
    }

    pub fn is_subset(&self, other: &CubeSet) -> bool {
        self.level == other.level && self.bits.is_subset(&other.bits)
    }

    /// Header line plus sorted member paths.
    pub fn to_text(&self, tree: &CubeTree) -> String {
        let mut out = format!("# space={} b={} level={}\n", tree.space.name(), tree.b, self.level);
        for q in self.iter() {
            let _ = writeln!(out, "{}", tree.path_string(q));
        }
        out
    }

    pub fn from_text(tree: &CubeTree, text: &str) -> Result<CubeSet> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidInput("empty cube set text".into()))?;
        let mut level = None;
        for field in header.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("space", v)) if v != tree.space.name() => {
                    return Err(Error::InvalidInput(format!("cube set is for space {v}, tree is {}", tree.space.name())));
                }
                Some(("b", v)) => {
                    let b: f64 = v.parse().map_err(|_| Error::InvalidInput(format!("bad ratio '{v}'")))?;
                    if (b - tree.b).abs() > 1e-12 {
                        return Err(Error::InvalidInput(format!("cube set ratio {b} differs from tree ratio {}", tree.b)));
                    }
                }
                Some(("level", v)) => level = Some(v.parse().map_err(|_| Error::InvalidInput(format!("bad level '{v}'")))?),
                _ => {}
            }
        }
        let level = level.ok_or_else(|| Error::InvalidInput("header lacks level".into()))?;
        let mut set = CubeSet::empty(tree, level)?;
        for line in lines.map(str::trim).filter(|l| !l.is_empty()) {
            set.insert(tree.parse_path(line, level)?)?;
        }
        Ok(set)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AxiomReport {
    pub space: String,
    pub b: f64,
    pub levels: u32,
    pub partition: bool,
    pub nesting: bool,
    pub sandwich: bool,
    pub root_point: bool,
    pub nested_centers: bool,
    pub counts: bool,
    pub failures: Vec<String>,
}

impl AxiomReport {
    /// Partition, nesting, sandwich, nested centers and the count bounds.
    pub fn core_ok(&self) -> bool {
        self.partition && self.nesting && self.sandwich && self.nested_centers && self.counts
    }
}

const EXHAUSTIVE_CELLS: u64 = 1 << 22;
const EPS: f64 = 1e-12;

fn cell_bounds(fac: &Factor, idx: u64, n: u32) -> (f64, f64) {
    match fac {
        Factor::Circle { k, .. } => {
            let w = (k.pow(n) as f64).recip();
            (idx as f64 * w, (idx + 1) as f64 * w)
        }
        Factor::Cantor { .. } => {
            let w = 3f64.powi(-(n as i32));
            let d = fac.digits_of(idx, n, n as usize);
            (crate::spaces::cantor_value(&d), crate::spaces::cantor_value(&d) + w)
        }
        Factor::Digits { .. } => unreachable!(),
    }
}

/// Open ball `B(center(idx), r)` inside the cell, exactly from the cell geometry.
fn factor_inner_ok(fac: &Factor, idx: u64, n: u32, x: &Point, r: f64) -> bool {
    if n == 0 {
        return true;
    }
    match (fac, x) {
        (Factor::Circle { .. }, Point::Torus(v)) => {
            let (lo, hi) = cell_bounds(fac, idx, n);
            v[0] - r >= lo - EPS && v[0] + r <= hi + EPS
        }
        (Factor::Digits { b, .. }, Point::Digits(d)) => {
            fac.index_of(x, n) == idx && !(r > 1.0) && symbolic_ball_depth(*b, r) >= n as usize && d.len() >= n as usize
        }
        (Factor::Cantor { .. }, Point::Digits(d)) => {
            // neighbouring level-n intervals sit at least one cell width away
            let (lo, hi) = cell_bounds(fac, idx, n);
            let w = hi - lo;
            let v = crate::spaces::cantor_value(d);
            v - r >= lo - w - EPS && v + r <= hi + w + EPS && v >= lo - EPS && v <= hi + EPS
        }
        _ => false,
    }
}

/// Cell inside the closed ball `B(center(idx), r)`.
fn factor_outer_ok(fac: &Factor, idx: u64, n: u32, x: &Point, r: f64) -> bool {
    match (fac, x) {
        (Factor::Circle { .. }, Point::Torus(v)) => {
            let (lo, hi) = cell_bounds(fac, idx, n);
            (v[0] - lo).max(hi - v[0]).min(0.5) <= r + EPS
        }
        (Factor::Digits { b, depth, .. }, Point::Digits(d)) => {
            fac.index_of(x, n) == idx && (n as usize >= *depth || b.powi(n as i32) <= r + EPS) && d.len() == *depth
        }
        (Factor::Cantor { .. }, Point::Digits(d)) => {
            let (lo, hi) = cell_bounds(fac, idx, n);
            let v = crate::spaces::cantor_value(d);
            (v - lo).max(hi - v) <= r + EPS
        }
        _ => false,
    }
}

/// Checks the cube properties level by level.
///
/// Sandwiching and nested centers are verified exactly on every cell of each
/// one-dimensional factor (sampled when a factor has more than 2^22 cells);
/// partition and nesting are checked on the index arithmetic and on random
/// points; counts against the bounds implied by regularity.
pub fn verify_axioms(tree: &CubeTree, levels: u32, samples: usize, seed: u64) -> Result<AxiomReport> {
    if levels > tree.max_level {
        return Err(Error::ResolutionExceeded { level: levels, max: tree.max_level });
    }
    let mut rng = crate::rng::stream(seed, crate::rng::TREE, 0);
    let mut rep = AxiomReport {
        space: tree.space.name(),
        b: tree.b,
        levels,
        partition: true,
        nesting: true,
        sandwich: true,
        root_point: true,
        nested_centers: true,
        counts: true,
        failures: Vec::new(),
    };
    let s = tree.space.s;
    let c = tree.space.c;
    let x0 = tree.space.split_point(&tree.x0());
    for n in 0..=levels {
        let scale = tree.scale(n);
        let inner_r = tree.c1 * scale;
        let outer_r = tree.c1prime * scale;

        // partition: level-n cells of each factor tile the factor; measures sum to one
        let total = tree.count(n) as f64 * tree.cube_measure(n);
        if (total - 1.0).abs() > 1e-9 {
            rep.partition = false;
            rep.failures.push(format!("level {n}: total measure {total}"));
        }
        for fac in &tree.factors {
            if let Factor::Circle { k, .. } = fac {
                let cells = k.pow(n);
                let (first, _) = cell_bounds(fac, 0, n);
                let (_, last) = cell_bounds(fac, cells - 1, n);
                if first != 0.0 || (last - 1.0).abs() > EPS {
                    rep.partition = false;
                    rep.failures.push(format!("level {n}: circle cells do not tile [0,1)"));
                }
            }
        }

        // sandwich and nested centers: every factor cell, exactly
        for (f, fac) in tree.factors.iter().enumerate() {
            let cells = fac.branching().pow(n);
            let exhaustive = cells <= EXHAUSTIVE_CELLS;
            let checks = if exhaustive { cells } else { 1 << 16 };
            for j in 0..checks {
                let idx = if exhaustive { j } else { rng.random_range(0..cells) };
                let ctr = fac.center(idx, n);
                if !factor_inner_ok(fac, idx, n, &ctr, inner_r) || !factor_outer_ok(fac, idx, n, &ctr, outer_r) {
                    if rep.sandwich {
                        rep.failures.push(format!("level {n}: factor {f} cell {idx} breaks the sandwich"));
                    }
                    rep.sandwich = false;
                }
                if n < levels {
                    let nested = (0..fac.branching()).any(|d| {
                        let child = fac.center(idx * fac.branching() + d, n + 1);
                        match (&ctr, &child) {
                            (Point::Torus(a), Point::Torus(b)) => (a[0] - b[0]).abs() <= EPS,
                            _ => ctr == child,
                        }
                    });
                    if !nested {
                        if rep.nested_centers {
                            rep.failures.push(format!("level {n}: factor {f} cell {idx} center not a child center"));
                        }
                        rep.nested_centers = false;
                    }
                }
            }
            // root point at the root center
            let idx = fac.index_of(&x0[f], n);
            if !factor_inner_ok(fac, idx, n, &x0[f], inner_r) {
                if rep.root_point {
                    rep.failures.push(format!("level {n}: ball at x0 leaves its cube in factor {f}"));
                }
                rep.root_point = false;
            }
        }

        // partition, nesting and sandwich on random points of the full space
        for _ in 0..samples {
            let x = tree.space.random_point(&mut rng);
            let q = tree.cube_containing(&x, n);
            if q.index >= tree.count(n) {
                rep.partition = false;
            }
            if n < levels && tree.parent(tree.cube_containing(&x, n + 1)) != q {
                if rep.nesting {
                    rep.failures.push(format!("level {n}: nesting fails at a sampled point"));
                }
                rep.nesting = false;
            }
            let ctr = tree.center(q);
            if tree.space.dist(&ctr, &x) > outer_r * (1.0 + 1e-12) + EPS {
                rep.sandwich = false;
            }
            let y = tree.space.sample_in_ball(&ctr, inner_r, &mut rng);
            if tree.space.dist(&ctr, &y) < inner_r && tree.cube_containing(&y, n) != q {
                if rep.sandwich {
                    rep.failures.push(format!("level {n}: inner ball point outside its cube"));
                }
                rep.sandwich = false;
            }
        }

        let count = tree.count(n) as f64;
        let lo = c.recip() * tree.c1prime.powf(-s) * scale.powf(-s);
        let hi = c * tree.c1.powf(-s) * scale.powf(-s);
        if count < lo * (1.0 - 1e-9) || count > hi * (1.0 + 1e-9) {
            rep.counts = false;
            rep.failures.push(format!("level {n}: count {count} outside [{lo}, {hi}]"));
        }
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DoublingReport {
    pub trials: usize,
    pub max_count: u64,
    pub bound: f64,
}

/// Counts the level-`n0` cubes meeting `closed-B(x, 2r)`, with `n0` the first
/// level where `c1' b^n < r`, against `C^2 (4 c1' / (b c1))^s`.
pub fn doubling_check(tree: &CubeTree, trials: usize, seed: u64) -> Result<DoublingReport> {
    let mut rng = crate::rng::stream(seed, crate::rng::TREE, 1);
    let s = tree.space.s;
    let bound = tree.space.c.powi(2) * (4.0 * tree.c1prime / (tree.b * tree.c1)).powf(s);
    let mut max_count = 0;
    let max_n = tree.max_level.min((MAX_SET_CUBES as f64).log(tree.branching as f64).floor() as u32);
    let r_min = tree.c1prime * tree.scale(max_n);
    let span = (tree.space.diam / r_min).ln();
    for _ in 0..trials {
        let x = tree.space.random_point(&mut rng);
        let r = tree.space.diam * (-span * rng.random::<f64>()).exp();
        let mut n0 = 1;
        while tree.c1prime * tree.scale(n0) >= r && n0 < max_n {
            n0 += 1;
        }
        let set = tree.ball_to_cubeset(&x, 2.0 * r * (1.0 + 1e-12), n0, Mode::Outer)?;
        max_count = max_count.max(set.len());
    }
    Ok(DoublingReport { trials, max_count, bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn t1() -> Space {
        Space::torus(1).unwrap()
    }

    #[test]
    fn generic_constants() {
        let tree = CubeTree::new(&t1(), 0.25, 6).unwrap();
        assert!((tree.c1 - 1.0 / 6.0).abs() < 1e-15);
        assert!((tree.c1prime - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(tree.count(3), 64);
        assert_eq!(tree.cube_measure(3), 4f64.powi(-3));
    }

    #[test]
    fn symbolic_counts_and_root() {
        let sy = Space::symbolic(2, 0.5).unwrap();
        let tree = CubeTree::new(&sy, 0.5, 10).unwrap();
        for n in 0..=10 {
            assert_eq!(tree.count(n), 1 << n);
        }
        let x = sy.zero_point();
        assert_eq!(tree.cube_containing(&x, 0), CubeId::ROOT);
    }

    #[test]
    fn dyadic_address() {
        let tree = CubeTree::new(&t1(), 0.5, 8).unwrap();
        let q = tree.cube_containing(&Point::Torus(vec![0.3]), 2);
        assert_eq!(q, CubeId { level: 2, index: 1 });
        assert_eq!(tree.path_string(q), "01");
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(matches!(CubeTree::new(&t1(), 0.3, 4), Err(Error::InvalidParameter(_))));
        assert!(CubeTree::new(&Space::symbolic(2, 0.5).unwrap(), 0.25, 4).is_err());
        assert!(CubeTree::new(&Space::cantor3(), 0.5, 4).is_err());
        assert!(matches!(CubeTree::new(&t1(), 0.5, 70), Err(Error::ResolutionExceeded { .. })));
    }

    #[test]
    fn axioms_hold_on_shipped_trees() {
        let cases = [
            CubeTree::new(&t1(), 0.25, 12).unwrap(),
            CubeTree::new(&Space::symbolic(2, 0.5).unwrap(), 0.5, 12).unwrap(),
            CubeTree::new(&Space::symbolic(3, 0.25).unwrap(), 0.25, 10).unwrap(),
            CubeTree::new(&Space::cantor3(), 1.0 / 3.0, 12).unwrap(),
            CubeTree::new(&Space::torus(2).unwrap(), 0.25, 6).unwrap(),
            CubeTree::new(&t1(), 1.0 / 3.0, 10).unwrap(),
        ];
        for tree in &cases {
            let rep = verify_axioms(tree, tree.max_level, 200, 1).unwrap();
            assert!(rep.core_ok() && rep.root_point, "{}: {:?}", tree.space.name(), rep.failures);
        }
    }

    #[test]
    fn binary_torus_lacks_nested_centers() {
        let tree = CubeTree::new(&t1(), 0.5, 8).unwrap();
        assert!(!tree.nested_centers);
        let rep = verify_axioms(&tree, 8, 100, 1).unwrap();
        assert!(rep.partition && rep.nesting && rep.sandwich && rep.counts);
        assert!(!rep.nested_centers);
    }

    #[test]
    fn doubling_within_bound() {
        for tree in [
            CubeTree::new(&t1(), 0.25, 10).unwrap(),
            CubeTree::new(&Space::symbolic(2, 0.5).unwrap(), 0.5, 16).unwrap(),
            CubeTree::new(&Space::cantor3(), 1.0 / 3.0, 14).unwrap(),
        ] {
            let rep = doubling_check(&tree, 1000, 4).unwrap();
            assert!((rep.max_count as f64) <= rep.bound, "{} {:?}", tree.space.name(), rep);
        }
    }

    #[test]
    fn ball_bracket_example() {
        let tree = CubeTree::new(&t1(), 0.5, 10).unwrap();
        let x = Point::Torus(vec![0.5]);
        let inner = tree.ball_to_cubeset(&x, 0.25, 4, Mode::Inner).unwrap();
        let outer = tree.ball_to_cubeset(&x, 0.25, 4, Mode::Outer).unwrap();
        assert!(inner.is_subset(&outer));
        let slack = 2.0 * 2.0 * tree.c1prime * tree.scale(4);
        assert!(inner.measure() <= 0.5 && inner.measure() >= 0.5 - slack);
        assert!(outer.measure() >= 0.5 && outer.measure() <= 0.5 + slack);
    }

    #[test]
    fn degenerate_balls() {
        let tree = CubeTree::new(&t1(), 0.5, 10).unwrap();
        let x = Point::Torus(vec![0.2]);
        for mode in [Mode::Inner, Mode::Outer] {
            assert!(tree.ball_to_cubeset(&x, 0.0, 5, mode).unwrap().is_empty());
            assert!(tree.ball_to_cubeset(&x, 0.6, 5, mode).unwrap().is_full());
        }
    }

    #[test]
    fn set_algebra() {
        let tree = CubeTree::new(&t1(), 0.5, 10).unwrap();
        let a = tree.ball_to_cubeset(&Point::Torus(vec![0.1]), 0.2, 6, Mode::Outer).unwrap();
        let u = a.union(&tree, &a.complement()).unwrap();
        assert!(u.is_full());
        let r = a.refine(&tree, 9).unwrap();
        assert_eq!(r.measure(), a.measure());
        assert_eq!(r.project(&tree, 6).unwrap(), a);
        let mut over = CubeSet::empty(&tree, 10).unwrap();
        assert!(over.insert(CubeId { level: 10, index: 3 }).is_ok());
        assert!(matches!(a.refine(&tree, 11), Err(Error::ResolutionExceeded { .. })));
    }

    #[test]
    fn text_round_trip() {
        let tree = CubeTree::new(&Space::symbolic(2, 0.5).unwrap(), 0.5, 8).unwrap();
        let mut rng = crate::rng::stream(9, 0, 0);
        let set = CubeSet::from_cubes(
            &tree,
            5,
            (0..10).map(|_| CubeId { level: 5, index: rng.random_range(0..32) }),
        )
        .unwrap();
        let text = set.to_text(&tree);
        assert!(text.starts_with("# space=symbolic(2,0.5) b=0.5 level=5\n"));
        assert_eq!(CubeSet::from_text(&tree, &text).unwrap(), set);

        let big = CubeTree::new(&Space::symbolic(40, 0.02).unwrap(), 0.02, 3).unwrap();
        let q = CubeId { level: 2, index: 39 * 40 + 7 };
        assert_eq!(big.path_string(q), "39.7");
        assert_eq!(big.parse_path("39.7", 2).unwrap(), q);
    }

    #[test]
    fn product_indices_round_trip() {
        let sp = Space::product(vec![t1(), Space::symbolic(2, 0.5).unwrap()]).unwrap();
        let tree = CubeTree::new(&sp, 0.5, 10).unwrap();
        assert_eq!(tree.branching, 4);
        let mut rng = crate::rng::stream(2, 0, 0);
        for _ in 0..100 {
            let x = sp.random_point(&mut rng);
            let q = tree.cube_containing(&x, 7);
            assert_eq!(tree.combine_index(&tree.split_index(q), 7), q.index);
            let y = tree.sample_in_cube(q, &mut rng);
            assert_eq!(tree.cube_containing(&y, 7), q);
            assert!(sp.dist(&tree.center(q), &y) <= tree.c1prime * tree.scale(7) + 1e-12);
        }
    }

    /// Reference: test every level-N center directly.
    fn brute_ball(tree: &CubeTree, x: &Point, r: f64, n: u32, mode: Mode) -> CubeSet {
        let slack = tree.c1prime * tree.scale(n);
        let mut s = CubeSet::empty(tree, n).unwrap();
        if r <= 0.0 {
            return s;
        }
        for q in tree.cubes_at(n) {
            let d = tree.space.dist(&tree.center(q), x);
            let hit = match mode {
                Mode::Outer => d < r + slack,
                Mode::Inner => d + slack < r,
            };
            if hit {
                s.insert(q).unwrap();
            }
        }
        s
    }

    fn trees() -> Vec<CubeTree> {
        vec![
            CubeTree::new(&t1(), 0.5, 9).unwrap(),
            CubeTree::new(&t1(), 0.25, 5).unwrap(),
            CubeTree::new(&Space::symbolic(2, 0.5).unwrap(), 0.5, 9).unwrap(),
            CubeTree::new(&Space::symbolic(3, 0.25).unwrap(), 0.25, 6).unwrap(),
            CubeTree::new(&Space::cantor3(), 1.0 / 3.0, 9).unwrap(),
            CubeTree::new(&Space::product(vec![t1(), t1()]).unwrap(), 0.5, 5).unwrap(),
            CubeTree::new(&Space::product(vec![t1(), Space::symbolic(2, 0.5).unwrap()]).unwrap(), 0.5, 5).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn ball_conversion_matches_reference(seed in any::<u64>(), which in 0usize..7, r in 0.0f64..0.6) {
            let tree = &trees()[which];
            let mut rng = crate::rng::stream(seed, 0, 0);
            let x = tree.space.random_point(&mut rng);
            let n = tree.max_level;
            for mode in [Mode::Inner, Mode::Outer] {
                let fast = tree.ball_to_cubeset(&x, r, n, mode).unwrap();
                if r > tree.space.diam {
                    prop_assert!(fast.is_full());
                } else {
                    prop_assert_eq!(&fast, &brute_ball(tree, &x, r, n, mode));
                }
            }
        }

        #[test]
        fn inner_outer_sandwich(seed in any::<u64>(), which in 0usize..7, r in 0.01f64..0.45) {
            let tree = &trees()[which];
            let mut rng = crate::rng::stream(seed, 0, 0);
            let x = tree.space.random_point(&mut rng);
            // Inner sets need not grow level by level, but they always sit
            // below the ball and the outer sets above it.
            let exact = tree.space.measure_ball(&x, r);
            for n in 1..=tree.max_level {
                let i = tree.ball_to_cubeset(&x, r, n, Mode::Inner).unwrap();
                let o = tree.ball_to_cubeset(&x, r, n, Mode::Outer).unwrap();
                prop_assert!(i.is_subset(&o));
                prop_assert!(i.measure() <= exact + 1e-12);
                prop_assert!(o.measure() >= exact - 1e-12);
            }
        }

        #[test]
        fn containing_cube_nests(seed in any::<u64>(), which in 0usize..7) {
            let tree = &trees()[which];
            let mut rng = crate::rng::stream(seed, 0, 0);
            let x = tree.space.random_point(&mut rng);
            prop_assert_eq!(tree.cube_containing(&x, 0), CubeId::ROOT);
            for n in 0..tree.max_level {
                prop_assert_eq!(tree.parent(tree.cube_containing(&x, n + 1)), tree.cube_containing(&x, n));
            }
        }

        #[test]
        fn intersect_measure_at_most_min(seed in any::<u64>(), n in 1u32..9) {
            let tree = CubeTree::new(&t1(), 0.5, 9).unwrap();
            let mut rng = crate::rng::stream(seed, 0, 0);
            let mut a = CubeSet::empty(&tree, n).unwrap();
            let mut b = CubeSet::empty(&tree, 9).unwrap();
            for q in tree.cubes_at(n) { if rng.random::<bool>() { a.insert(q).unwrap(); } }
            for q in tree.cubes_at(9) { if rng.random::<bool>() { b.insert(q).unwrap(); } }
            let i = a.intersect(&tree, &b).unwrap();
            prop_assert!(i.measure() <= a.measure().min(b.measure()) + 1e-15);
            let u = a.union(&tree, &b).unwrap();
            prop_assert!((u.measure() + i.measure() - a.measure() - b.measure()).abs() < 1e-12);
        }
    }
}
