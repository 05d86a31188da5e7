//! t-energies `I_t(mu, U)`, the two-sided energy bounds, and the empirical
//! large-intersection index.
//!
//! Exact evaluation covers boxes on tori (piecewise-polynomial distance law)
//! and any cube set on a symbolic space (first-divergence recursion). All
//! other cases use importance-sampled Monte Carlo: the partner point is drawn
//! half the time from `mu|U` and otherwise from a ball around the first point
//! whose radius is picked from a geometric ladder with weights `2^(-k(s-t))`.
//! That proposal makes the per-sample weight bounded, so the estimator has
//! finite variance for every `t < s`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::covering::RadiusSchedule;
use crate::cubes::{CubeSet, CubeTree, Factor};
use crate::spaces::{circle_dist, symbolic_ball_depth, wrap, Point, SpaceKind};
use crate::{Error, Result};

const SHARDS: u64 = 64;
const MAX_LADDER: usize = 96;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Region {
    Whole,
    Ball { center: Point, radius: f64 },
    /// Product of factor balls; one radius per flattened factor.
    Rect { center: Point, radii: Vec<f64> },
    #[serde(skip)]
    Cubes(CubeSet),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    Recursion,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
    pub method: Method,
    /// Pairs redrawn because they fell below the distance floor.
    pub resampled: u64,
}

impl EnergyEstimate {
    fn exact(value: f64, method: Method) -> Self {
        EnergyEstimate { value, stderr: 0.0, samples: 0, method, resampled: 0 }
    }
}

impl Region {
    pub fn measure(&self, tree: &CubeTree) -> f64 {
        let sp = &tree.space;
        match self {
            Region::Whole => 1.0,
            Region::Ball { center, radius } => sp.measure_ball(center, *radius),
            Region::Rect { center, radii } => {
                let parts = sp.split_point(center);
                tree.factor_spaces().iter().zip(parts.iter().zip(radii)).map(|(f, (p, r))| f.measure_ball(p, *r)).product()
            }
            Region::Cubes(set) => set.measure(),
        }
    }

    /// Diameter; exact except for multi-cube sets and Cantor balls, where it
    /// is an upper bound.
    pub fn diam(&self, tree: &CubeTree) -> f64 {
        let sp = &tree.space;
        match self {
            Region::Whole => sp.diam,
            Region::Ball { center, radius } => sp.ball_diam(center, *radius),
            Region::Rect { center, radii } => {
                let parts = sp.split_point(center);
                tree.factor_spaces()
                    .iter()
                    .zip(parts.iter().zip(radii))
                    .map(|(f, (p, r))| f.ball_diam(p, *r))
                    .fold(0.0, f64::max)
            }
            Region::Cubes(set) => {
                let n = set.level;
                match set.len() {
                    0 => 0.0,
                    1 => cube_diam(tree, n),
                    k if k <= 2000 => {
                        let centers: Vec<Point> = set.iter().map(|q| tree.center(q)).collect();
                        let slack = 2.0 * tree.c1prime * tree.scale(n);
                        let mut d: f64 = 0.0;
                        for (i, a) in centers.iter().enumerate() {
                            for b in &centers[i + 1..] {
                                d = d.max(sp.dist(a, b));
                            }
                        }
                        (d + slack).min(sp.diam)
                    }
                    _ => sp.diam,
                }
            }
        }
    }

    pub fn contains(&self, tree: &CubeTree, y: &Point) -> bool {
        let sp = &tree.space;
        match self {
            Region::Whole => true,
            Region::Ball { center, radius } => sp.dist(center, y) < *radius,
            Region::Rect { center, radii } => {
                let a = sp.split_point(center);
                let b = sp.split_point(y);
                tree.factor_spaces().iter().enumerate().all(|(f, fs)| fs.dist(&a[f], &b[f]) < radii[f])
            }
            Region::Cubes(set) => set.contains(tree.cube_containing(y, set.level)),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, tree: &CubeTree, rng: &mut R) -> Point {
        let sp = &tree.space;
        match self {
            Region::Whole => sp.random_point(rng),
            Region::Ball { center, radius } => sp.sample_in_ball(center, *radius, rng),
            Region::Rect { center, radii } => {
                let parts = sp.split_point(center);
                let ys: Vec<Point> = tree
                    .factor_spaces()
                    .iter()
                    .zip(parts.iter().zip(radii))
                    .map(|(f, (p, r))| f.sample_in_ball(p, *r, rng))
                    .collect();
                sp.join_point(&ys)
            }
            Region::Cubes(set) => {
                let k = rng.random_range(0..set.len());
                let q = set.iter().nth(k as usize).expect("index within set");
                tree.sample_in_cube(q, rng)
            }
        }
    }
}

fn cube_diam(tree: &CubeTree, n: u32) -> f64 {
    tree.factors
        .iter()
        .map(|f| match f {
            Factor::Circle { k, .. } => (k.pow(n) as f64).recip().min(0.5),
            Factor::Digits { b, depth, .. } => {
                if n as usize >= *depth {
                    0.0
                } else {
                    b.powi(n as i32)
                }
            }
            Factor::Cantor { .. } => 3f64.powi(-(n as i32)),
        })
        .fold(0.0, f64::max)
}

fn check_exponent(tree: &CubeTree, t: f64) -> Result<()> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter(format!("energy exponent t = {t} must be >= 0")));
    }
    if t >= tree.space.s {
        return Err(Error::DivergentEnergy { t, s: tree.space.s });
    }
    Ok(())
}

/// `I_t(mu, U)`: exact where a closed form or recursion exists, otherwise
/// Monte Carlo with `budget` pairs.
pub fn energy(tree: &CubeTree, region: &Region, t: f64, budget: u64, seed: u64) -> Result<EnergyEstimate> {
    check_exponent(tree, t)?;
    if let Some(e) = energy_exact(tree, region, t) {
        return Ok(e);
    }
    energy_monte_carlo(tree, region, t, budget, seed)
}

/// Exact value when available.
pub fn energy_exact(tree: &CubeTree, region: &Region, t: f64) -> Option<EnergyEstimate> {
    if check_exponent(tree, t).is_err() {
        return None;
    }
    let mu = region.measure(tree);
    if t == 0.0 || mu == 0.0 {
        return Some(EnergyEstimate::exact(mu * mu, Method::ClosedForm));
    }
    if let Some(arcs) = torus_box(tree, region) {
        if arcs.iter().all(|a| a.is_none_or(|(_, h)| h <= 0.25)) {
            let lengths: Vec<Option<f64>> = arcs.iter().map(|a| a.map(|(_, h)| 2.0 * h)).collect();
            return Some(EnergyEstimate::exact(mu * mu * torus_mean_inverse_power(&lengths, t), Method::ClosedForm));
        }
        return None;
    }
    if let [Factor::Digits { m, b, depth }] = tree.factors.as_slice() {
        let (m, b) = (*m as f64, *b);
        let ball = |r: f64| {
            let k = if r > 1.0 { 0 } else { symbolic_ball_depth(b, r).min(*depth) };
            symbolic_cylinder_energy(m, b, k as u32, t)
        };
        let value = match region {
            Region::Whole => symbolic_cylinder_energy(m, b, 0, t),
            Region::Ball { radius, .. } => ball(*radius),
            Region::Rect { radii, .. } => ball(radii[0]),
            Region::Cubes(set) => symbolic_set_energy(tree, set, m, b, t),
        };
        return Some(EnergyEstimate::exact(value, Method::Recursion));
    }
    None
}

/// Energy of one depth-`n` cylinder: `mu^2 (1 - 1/m) b^(-tn) / (1 - b^(-t)/m)`.
fn symbolic_cylinder_energy(m: f64, b: f64, n: u32, t: f64) -> f64 {
    let mu = m.powi(-(n as i32));
    mu * mu * (1.0 - 1.0 / m) * b.powf(-t * n as f64) / (1.0 - b.powf(-t) / m)
}

/// Bottom-up recursion `I(v) = sum I(c) + b^(-t l) [(sum mu_c)^2 - sum mu_c^2]`.
fn symbolic_set_energy(tree: &CubeTree, set: &CubeSet, m: f64, b: f64, t: f64) -> f64 {
    let n = set.level;
    let leaf = symbolic_cylinder_energy(m, b, n, t);
    let mu_leaf = tree.cube_measure(n);
    // (index, mass, energy)
    let mut nodes: Vec<(u64, f64, f64)> = set.indices().map(|i| (i, mu_leaf, leaf)).collect();
    let br = tree.branching;
    for l in (0..n).rev() {
        let cross = b.powf(-t * l as f64);
        let mut next: Vec<(u64, f64, f64)> = Vec::with_capacity(nodes.len());
        let mut i = 0;
        while i < nodes.len() {
            let p = nodes[i].0 / br;
            let (mut mass, mut en, mut sq) = (0.0, 0.0, 0.0);
            while i < nodes.len() && nodes[i].0 / br == p {
                mass += nodes[i].1;
                en += nodes[i].2;
                sq += nodes[i].1 * nodes[i].1;
                i += 1;
            }
            next.push((p, mass, en + cross * (mass * mass - sq)));
        }
        nodes = next;
    }
    nodes.first().map_or(0.0, |r| r.2)
}

/// Per-factor arcs `(center, half-width)` when the region is a box on a torus;
/// `None` entries are whole circles.
fn torus_box(tree: &CubeTree, region: &Region) -> Option<Vec<Option<(f64, f64)>>> {
    if !tree.factors.iter().all(|f| matches!(f, Factor::Circle { .. })) {
        return None;
    }
    let d = tree.factors.len();
    let coords = |p: &Point| -> Vec<f64> {
        match p {
            Point::Torus(v) => v.clone(),
            other => tree.space.split_point(other).iter().map(|q| if let Point::Torus(v) = q { v[0] } else { 0.0 }).collect(),
        }
    };
    let arc = |c: f64, h: f64| if h >= 0.5 { None } else { Some((c, h)) };
    match region {
        Region::Whole => Some(vec![None; d]),
        Region::Ball { center, radius } => Some(coords(center).into_iter().map(|c| arc(c, *radius)).collect()),
        Region::Rect { center, radii } => Some(coords(center).into_iter().zip(radii).map(|(c, h)| arc(c, *h)).collect()),
        Region::Cubes(set) if set.len() == 1 => {
            let q = set.iter().next()?;
            if q.level == 0 {
                return Some(vec![None; d]);
            }
            let idx = tree.split_index(q);
            Some(
                tree.factors
                    .iter()
                    .zip(idx)
                    .map(|(f, i)| {
                        let Factor::Circle { k, .. } = f else { unreachable!() };
                        let w = (k.pow(q.level) as f64).recip();
                        Some(((i as f64 + 0.5) * w, 0.5 * w))
                    })
                    .collect(),
            )
        }
        _ => None,
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `E[rho^-t]` for independent uniform pairs in a box whose factors are arcs
/// of the given lengths (at most 1/2) or whole circles (`None`).
///
/// The max-distance law is `G = prod F_i` with `F(u) = 2u/L - u^2/L^2` on an
/// arc and `F(u) = 2u` on a circle; `G` is polynomial between breakpoints.
pub fn torus_mean_inverse_power(lengths: &[Option<f64>], t: f64) -> f64 {
    let ends: Vec<f64> = lengths.iter().map(|l| l.unwrap_or(0.5)).collect();
    let mut breaks = ends.clone();
    breaks.push(0.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mut g = vec![1.0];
        for (l, end) in lengths.iter().zip(&ends) {
            if *end <= a {
                continue;
            }
            let f = match l {
                Some(l) => vec![0.0, 2.0 / l, -1.0 / (l * l)],
                None => vec![0.0, 2.0],
            };
            g = poly_mul(&g, &f);
        }
        for (j, c) in g.iter().enumerate().skip(1).filter(|(_, c)| **c != 0.0) {
            // d/du u^j = j u^(j-1); integrate u^(j-1-t)
            let e = j as f64 - t;
            let piece = if e.abs() < 1e-12 {
                (b / a).ln()
            } else {
                let lo = if a == 0.0 { 0.0 } else { a.powf(e) };
                (b.powf(e) - lo) / e
            };
            total += c * j as f64 * piece;
        }
    }
    total
}

struct Ladder {
    radii: Vec<f64>,
    weights: Vec<f64>,
    cdf: Vec<f64>,
    floor: f64,
}

impl Ladder {
    fn new(diam: f64, floor: f64, s: f64, t: f64) -> Ladder {
        let k = ((diam / floor).log2().ceil().max(0.0) as usize).min(MAX_LADDER);
        let radii: Vec<f64> = (0..=k).map(|j| diam * 2f64.powi(-(j as i32))).collect();
        let raw: Vec<f64> = (0..=k).map(|j| 2f64.powf(-(j as f64) * (s - t))).collect();
        let z: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / z).collect();
        let mut acc = 0.0;
        let cdf = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ladder { radii, weights, cdf, floor }
    }

    fn pick(&self, u: f64) -> usize {
        self.cdf.partition_point(|&c| c <= u).min(self.radii.len() - 1)
    }

    /// Largest `k` with `R_k > rho`, or `None`.
    fn top(&self, rho: f64) -> Option<usize> {
        let n = self.radii.partition_point(|&r| r > rho);
        n.checked_sub(1)
    }
}

#[derive(Clone, Copy, Default)]
struct Acc {
    n: u64,
    sum: f64,
    sumsq: f64,
    resampled: u64,
}

fn merge(parts: &[Acc]) -> Acc {
    parts.iter().fold(Acc::default(), |a, b| Acc {
        n: a.n + b.n,
        sum: a.sum + b.sum,
        sumsq: a.sumsq + b.sumsq,
        resampled: a.resampled + b.resampled,
    })
}

fn shard_sizes(budget: u64) -> Vec<(u64, u64)> {
    (0..SHARDS).map(|i| (i, budget / SHARDS + u64::from(i < budget % SHARDS))).filter(|p| p.1 > 0).collect()
}

/// Monte Carlo estimate with `budget` pairs, sharded deterministically.
pub fn energy_monte_carlo(tree: &CubeTree, region: &Region, t: f64, budget: u64, seed: u64) -> Result<EnergyEstimate> {
    check_exponent(tree, t)?;
    if budget < 2 {
        return Err(Error::InvalidParameter("Monte Carlo budget must be >= 2".into()));
    }
    let mu = region.measure(tree);
    if mu == 0.0 {
        return Ok(EnergyEstimate::exact(0.0, Method::MonteCarlo));
    }
    let diam = region.diam(tree).max(tree.scale(tree.max_level));
    let floor = tree.scale(tree.max_level);
    let ladder = Ladder::new(diam, floor, tree.space.s, t);
    let boxed = torus_box(tree, region);
    let parts: Vec<Acc> = shard_sizes(budget)
        .into_par_iter()
        .map(|(shard, n)| {
            let mut rng = crate::rng::stream(seed, crate::rng::ENERGY, shard);
            match &boxed {
                Some(arcs) => torus_shard(arcs, mu, t, &ladder, n, &mut rng),
                None => generic_shard(tree, region, mu, t, &ladder, n, &mut rng),
            }
        })
        .collect();
    let acc = merge(&parts);
    let n = acc.n as f64;
    let mean = acc.sum / n;
    let var = ((acc.sumsq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(EnergyEstimate {
        value: mu * mu * mean,
        stderr: mu * mu * (var / n).sqrt(),
        samples: acc.n,
        method: Method::MonteCarlo,
        resampled: acc.resampled,
    })
}

fn torus_shard(arcs: &[Option<(f64, f64)>], mu: f64, t: f64, ladder: &Ladder, n: u64, rng: &mut ChaCha8Rng) -> Acc {
    let d = arcs.len() as i32;
    let ball_mass: Vec<f64> = ladder.radii.iter().map(|r| (2.0 * r).min(1.0).powi(d)).collect();
    let mut prefix = Vec::with_capacity(ladder.radii.len());
    let mut acc_q = 0.0;
    for (w, m) in ladder.weights.iter().zip(&ball_mass) {
        acc_q += w / m;
        prefix.push(acc_q);
    }
    let mut x = vec![0.0; arcs.len()];
    let mut y = vec![0.0; arcs.len()];
    let mut out = Acc::default();
    for _ in 0..n {
        for (xi, a) in x.iter_mut().zip(arcs) {
            *xi = match a {
                None => rng.random::<f64>(),
                Some((c, h)) => wrap(c - h + 2.0 * h * rng.random::<f64>()),
            };
        }
        let rho = loop {
            if rng.random::<bool>() {
                for (yi, a) in y.iter_mut().zip(arcs) {
                    *yi = match a {
                        None => rng.random::<f64>(),
                        Some((c, h)) => wrap(c - h + 2.0 * h * rng.random::<f64>()),
                    };
                }
            } else {
                let r = ladder.radii[ladder.pick(rng.random::<f64>())];
                for (yi, xi) in y.iter_mut().zip(&x) {
                    *yi = if 2.0 * r >= 1.0 { rng.random::<f64>() } else { wrap(xi - r + 2.0 * r * rng.random::<f64>()) };
                }
            }
            let rho = x.iter().zip(&y).map(|(a, b)| circle_dist(*a, *b)).fold(0.0, f64::max);
            if rho >= ladder.floor {
                break rho;
            }
            out.resampled += 1;
        };
        let inside = arcs.iter().zip(&y).all(|(a, yi)| a.is_none_or(|(c, h)| circle_dist(c, *yi) < h));
        let val = if inside {
            let ladder_q = ladder.top(rho).map_or(0.0, |k| prefix[k]);
            let q = 0.5 / mu + 0.5 * ladder_q;
            rho.powf(-t) / (mu * q)
        } else {
            0.0
        };
        out.n += 1;
        out.sum += val;
        out.sumsq += val * val;
    }
    out
}

fn generic_shard(tree: &CubeTree, region: &Region, mu: f64, t: f64, ladder: &Ladder, n: u64, rng: &mut ChaCha8Rng) -> Acc {
    let sp = &tree.space;
    let uniform_balls = !sp.factors().iter().any(|f| matches!(f.kind, SpaceKind::Cantor3));
    let mut out = Acc::default();
    for _ in 0..n {
        let x = region.sample(tree, rng);
        let (y, rho) = loop {
            let y = if rng.random::<bool>() {
                region.sample(tree, rng)
            } else {
                let r = ladder.radii[ladder.pick(rng.random::<f64>())];
                sp.sample_in_ball(&x, r, rng)
            };
            let rho = sp.dist(&x, &y);
            if rho >= ladder.floor {
                break (y, rho);
            }
            out.resampled += 1;
        };
        let val = if region.contains(tree, &y) {
            let ladder_q: f64 = match ladder.top(rho) {
                None => 0.0,
                Some(top) => (0..=top)
                    .map(|k| {
                        let m = if uniform_balls {
                            sp.measure_ball(&x, ladder.radii[k])
                        } else {
                            sp.measure_ball(&x, ladder.radii[k]).max(f64::MIN_POSITIVE)
                        };
                        ladder.weights[k] / m
                    })
                    .sum(),
            };
            let q = 0.5 / mu + 0.5 * ladder_q;
            rho.powf(-t) / (mu * q)
        } else {
            0.0
        };
        out.n += 1;
        out.sum += val;
        out.sumsq += val * val;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub t: f64,
    pub value: f64,
    pub stderr: f64,
    pub method: Method,
    pub lower: f64,
    pub upper: f64,
    /// The explicit upper-bound constant `C_1`.
    pub c1_const: f64,
    /// `I_t / ((diam U)^(s-t) mu(U))`
    pub measured_constant: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
}

/// `C_1 = sum_{j>=0} 2^((1+j)(t-s)) (C 2^s - C^-1)`.
pub fn upper_constant(c: f64, s: f64, t: f64) -> f64 {
    let q = 2f64.powf(t - s);
    (c * 2f64.powf(s) - 1.0 / c) * q / (1.0 - q)
}

/// Checks `(diam U)^-t mu(U)^2 <= I_t(mu, U) <= C_1 (diam U)^(s-t) mu(U)`,
/// allowing three standard errors for Monte Carlo values.
pub fn energy_bounds_check(tree: &CubeTree, region: &Region, t: f64, budget: u64, seed: u64) -> Result<BoundsReport> {
    let diam = region.diam(tree);
    if !(diam > 0.0) {
        return Err(Error::InvalidInput("region must have positive diameter".into()));
    }
    let e = energy(tree, region, t, budget, seed)?;
    let mu = region.measure(tree);
    let s = tree.space.s;
    let lower = diam.powf(-t) * mu * mu;
    let c1 = upper_constant(tree.space.c, s, t);
    let upper = c1 * diam.powf(s - t) * mu;
    let slack = 3.0 * e.stderr + 1e-12 * e.value.abs();
    let lower_ok = lower <= e.value + slack;
    let upper_ok = e.value - slack <= upper;
    if !lower_ok {
        return Err(Error::BoundViolated(format!(
            "energy {} (stderr {}) below the lower bound {lower} at t = {t}",
            e.value, e.stderr
        )));
    }
    Ok(BoundsReport {
        t,
        value: e.value,
        stderr: e.stderr,
        method: e.method,
        lower,
        upper,
        c1_const: c1,
        measured_constant: e.value / (diam.powf(s - t) * mu),
        lower_ok,
        upper_ok,
    })
}

/// How `E_n` is cut out of `B_n = B(xi_n, r_n)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum InnerRule {
    /// `E_n = B(xi_n, r_n^(s/t0))`, so that `B_n` is the `t0`-inflation of `E_n`.
    BallPower { t0: f64 },
    /// `E_n = prod_i B_i(xi_{n,i}, r_n^(a_i))` over the flattened factors.
    Rectangle { a: Vec<f64> },
    /// `E_n = B(xi_n, c r_n)`.
    Shrink { c: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaQuery {
    pub schedule: RadiusSchedule,
    pub inner: InnerRule,
    pub n_values: Vec<u64>,
    pub t_grid: Vec<f64>,
    pub budget: u64,
    pub seed: u64,
    pub slope_threshold: f64,
}

impl LambdaQuery {
    pub fn new(schedule: RadiusSchedule, inner: InnerRule, n_values: Vec<u64>, t_grid: Vec<f64>) -> Self {
        LambdaQuery { schedule, inner, n_values, t_grid, budget: 20_000, seed: 0, slope_threshold: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioRow {
    pub t: f64,
    pub n: u64,
    pub r_n: f64,
    pub ratio: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeRow {
    pub t: f64,
    pub slope: f64,
    pub bounded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaReport {
    /// Empirical index: the largest grid exponent classified bounded.
    pub lambda: Option<f64>,
    pub slopes: Vec<SlopeRow>,
    pub rows: Vec<RatioRow>,
}

/// Uniform grid `step, 2 step, ...` strictly below `s`.
pub fn t_grid(s: f64, step: f64) -> Vec<f64> {
    (1..).map(|k| (k as f64 * step * 1e10).round() / 1e10).take_while(|t| *t < s - 1e-12).collect()
}

/// Least-squares slope, its standard error and `r^2`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return (0.0, f64::INFINITY, 0.0);
    }
    let slope = sxy / sxx;
    let resid: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    let stderr = if n > 2.0 { (resid / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - resid / syy };
    (slope, stderr, r2)
}

/// Classifies each `t` by the slope of `ln R_t(n)` against `ln(1/r_n)`, where
/// `R_t(n) = I_t(E_n) mu(B_n) / mu(E_n)^2`.
pub fn lambda_index(tree: &CubeTree, q: &LambdaQuery) -> Result<LambdaReport> {
    let s = tree.space.s;
    q.schedule.validate()?;
    if q.n_values.len() < 2 {
        return Err(Error::InvalidParameter("lambda_index needs at least two indices".into()));
    }
    if let Some(t) = q.t_grid.iter().find(|t| !(**t >= 0.0 && **t < s)) {
        return Err(Error::InvalidParameter(format!("grid exponent {t} outside [0, {s})")));
    }
    let nf = tree.factors.len();
    match &q.inner {
        InnerRule::BallPower { t0 } if !(*t0 > 0.0 && *t0 <= s) => {
            return Err(Error::InvalidParameter(format!("t0 = {t0} outside (0, {s}]")));
        }
        InnerRule::Shrink { c } if !(*c > 0.0 && *c <= 1.0) => {
            return Err(Error::InvalidParameter(format!("shrink factor {c} outside (0, 1]")));
        }
        InnerRule::Rectangle { a } => {
            if a.len() != nf {
                return Err(Error::InvalidParameter(format!("{} exponents for {nf} factors", a.len())));
            }
            if a[0] < 1.0 || a.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidParameter("exponents must satisfy 1 <= a_1 <= ... <= a_d".into()));
            }
        }
        _ => {}
    }
    let mut grid = q.t_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for &t in &grid {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for &n in &q.n_values {
            let r = q.schedule.radius(n);
            let mut rng = crate::rng::stream(q.seed, crate::rng::CENTERS, n);
            let center = tree.space.random_point(&mut rng);
            let e_region = match &q.inner {
                InnerRule::BallPower { t0 } => Region::Ball { center: center.clone(), radius: r.powf(s / t0) },
                InnerRule::Shrink { c } => Region::Ball { center: center.clone(), radius: c * r },
                InnerRule::Rectangle { a } => {
                    Region::Rect { center: center.clone(), radii: a.iter().map(|ai| r.powf(*ai)).collect() }
                }
            };
            let mu_b = tree.space.measure_ball(&center, r);
            let mu_e = e_region.measure(tree);
            if mu_e == 0.0 {
                return Err(Error::InvalidParameter(format!("E_n is empty at n = {n}")));
            }
            let e = energy(tree, &e_region, t, q.budget, q.seed ^ n)?;
            let ratio = e.value * mu_b / (mu_e * mu_e);
            let stderr = e.stderr * mu_b / (mu_e * mu_e);
            rows.push(RatioRow { t, n, r_n: r, ratio, stderr });
            xs.push((1.0 / r).ln());
            ys.push(ratio.ln());
        }
        let (slope, _, _) = least_squares(&xs, &ys);
        slopes.push(SlopeRow { t, slope, bounded: slope < q.slope_threshold });
    }
    let first_unbounded = slopes.iter().position(|r| !r.bounded).unwrap_or(slopes.len());
    if slopes[first_unbounded..].iter().any(|r| r.bounded) {
        let table: Vec<String> = slopes.iter().map(|r| format!("t={} slope={:.4}", r.t, r.slope)).collect();
        return Err(Error::Ambiguous(format!("non-monotone boundedness: {}", table.join(", "))));
    }
    let lambda = first_unbounded.checked_sub(1).map(|i| slopes[i].t);
    Ok(LambdaReport { lambda, slopes, rows })
}

/// Ratio table as CSV with columns `t,n,r_n,R_t,stderr`.
pub fn ratio_csv(rows: &[RatioRow]) -> String {
    let mut out = String::from("t,n,r_n,R_t,stderr\n");
    for r in rows {
        out.push_str(&format!("{},{},{:e},{:e},{:e}\n", r.t, r.n, r.r_n, r.ratio, r.stderr));
    }
    out
}
