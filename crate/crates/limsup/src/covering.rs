//! Random covering sets `limsup B(xi_n, r_n)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubes::{CubeSet, CubeTree, Mode};
use crate::dimension::{box_dimension, fit_counts, geometric_windows, multiscale_lab, DimReport, Isometry, LabReport};
use crate::energy::least_squares;
use crate::netcontent::li_certificate;
use crate::rng::{self, CENTERS, MAPS};
use crate::spaces::{wrap, Point, Space, SpaceKind};
use crate::{Error, Result};

/// Radius sequence `r_n`, `n >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "camelCase", deny_unknown_fields)]
pub enum RadiusSchedule {
    /// `r_n = scale * n^-alpha`
    Power {
        alpha: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `r_n = e^(-c n)`
    Exponential { c: f64 },
    /// `r_n = n^-alpha (ln n)^-beta` for `n >= 2`; `r_1 = r_2`
    LogPower { alpha: f64, beta: f64 },
    Explicit { radii: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

impl RadiusSchedule {
    pub fn power(alpha: f64) -> RadiusSchedule {
        RadiusSchedule::Power { alpha, scale: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            RadiusSchedule::Power { alpha, scale } => {
                if !(*alpha > 0.0) || !(*scale > 0.0) {
                    return bad(format!("power schedule needs alpha > 0 and scale > 0, got {alpha}, {scale}"));
                }
            }
            RadiusSchedule::Exponential { c } => {
                if !(*c > 0.0) {
                    return bad(format!("exponential schedule needs c > 0, got {c}"));
                }
            }
            RadiusSchedule::LogPower { alpha, beta } => {
                if !(*alpha > 0.0) || *beta < 0.0 {
                    return bad(format!("logPower schedule needs alpha > 0, beta >= 0, got {alpha}, {beta}"));
                }
            }
            RadiusSchedule::Explicit { radii } => {
                if radii.iter().any(|r| !(*r > 0.0)) {
                    return bad("explicit radii must be positive".into());
                }
                if radii.windows(2).any(|w| w[1] > w[0]) {
                    return bad("explicit radii must be non-increasing".into());
                }
            }
        }
        Ok(())
    }

    /// `r_n`; `n` starts at 1. Explicit lists end at their length.
    pub fn radius(&self, n: u64) -> f64 {
        let n = n.max(1);
        match self {
            RadiusSchedule::Power { alpha, scale } => scale * (n as f64).powf(-alpha),
            RadiusSchedule::Exponential { c } => (-c * n as f64).exp(),
            RadiusSchedule::LogPower { alpha, beta } => {
                let m = n.max(2) as f64;
                m.powf(-alpha) * m.ln().powf(-beta)
            }
            RadiusSchedule::Explicit { radii } => radii.get(n as usize - 1).copied().unwrap_or(0.0),
        }
    }

    /// Largest usable index (`u64::MAX` for closed forms).
    pub fn len(&self) -> u64 {
        match self {
            RadiusSchedule::Explicit { radii } => radii.len() as u64,
            _ => u64::MAX,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Critical exponent `inf { t >= 0 : sum r_n^t < inf }`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct S0 {
    pub value: f64,
    /// `closedForm` or `numeric`.
    pub method: String,
    /// Whether `sum r_n^s0` converges, when known.
    pub convergent_at_s0: Option<bool>,
    pub note: String,
}

const MIN_EXPLICIT: usize = 16;

pub fn s0(schedule: &RadiusSchedule) -> Result<S0> {
    schedule.validate()?;
    let closed = |value: f64, conv: bool, note: &str| S0 { value, method: "closedForm".into(), convergent_at_s0: Some(conv), note: note.into() };
    Ok(match schedule {
        RadiusSchedule::Power { alpha, .. } => closed(1.0 / alpha, false, "p-series"),
        RadiusSchedule::Exponential { .. } => closed(0.0, false, "geometric series converges for every t > 0"),
        RadiusSchedule::LogPower { alpha, beta } => closed(1.0 / alpha, beta / alpha > 1.0, "integral test on n^-1 (ln n)^(-beta/alpha)"),
        RadiusSchedule::Explicit { radii } => {
            if radii.len() < MIN_EXPLICIT {
                return Err(Error::Inconclusive(format!("{} radii; need at least {MIN_EXPLICIT} to classify", radii.len())));
            }
            let from = radii.len() / 2;
            let ns: Vec<f64> = (from + 1..=radii.len()).map(|n| n as f64).collect();
            let y: Vec<f64> = radii[from..].iter().map(|r| r.ln()).collect();
            let lx: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
            let (sp, _, r2p) = least_squares(&lx, &y);
            let (se, _, r2e) = least_squares(&ns, &y);
            let range = format!("n in [{}, {}]", from + 1, radii.len());
            if se < 0.0 && r2e > r2p {
                S0 { value: 0.0, method: "numeric".into(), convergent_at_s0: None, note: format!("exponential decay fit over {range}, r2={r2e:.4}") }
            } else if sp < -1e-2 {
                S0 {
                    value: -1.0 / sp,
                    method: "numeric".into(),
                    convergent_at_s0: None,
                    note: format!("power-law fit over {range}, alpha={:.6}, r2={r2p:.4}", -sp),
                }
            } else {
                return Err(Error::Inconclusive(format!("no decay detected over {range}")));
            }
        }
    })
}

/// Center sequence `xi_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
pub enum CenterProcess {
    IidUniform,
    /// Torus chain: with probability `refresh` draw a fresh uniform point,
    /// otherwise rotate by a fixed irrational vector.
    ///
    /// The uniform law is stationary. Reversed in time the chain is again
    /// "refresh or rotate back", so by the Markov property
    /// `P(xi_1 in A | xi_(n+1), ...) = (1-p)^n 1_A(xi_(n+1) - n theta) + (1 - (1-p)^n) mu(A)`,
    /// which gives the mixing bound with `c = 1`, `gamma = 1 - p`.
    MixingMarkov {
        refresh: f64,
        #[serde(default)]
        rotation: Option<Vec<f64>>,
    },
}

const ROTATION_SEEDS: [f64; 8] = [5.0, 2.0, 3.0, 7.0, 11.0, 13.0, 17.0, 19.0];

impl CenterProcess {
    pub fn markov(refresh: f64) -> CenterProcess {
        CenterProcess::MixingMarkov { refresh, rotation: None }
    }

    /// Declared `(c, gamma)` of the mixing bound; `None` for i.i.d. centers.
    pub fn mixing_constants(&self) -> Option<(f64, f64)> {
        match self {
            CenterProcess::IidUniform => None,
            CenterProcess::MixingMarkov { refresh, .. } => Some((1.0, 1.0 - refresh)),
        }
    }

    fn rotation(&self, d: usize) -> Result<Vec<f64>> {
        match self {
            CenterProcess::MixingMarkov { rotation: Some(v), .. } => {
                if v.len() != d {
                    return Err(Error::InvalidParameter(format!("rotation has {} coordinates, space has {d}", v.len())));
                }
                Ok(v.iter().map(|x| x.rem_euclid(1.0)).collect())
            }
            _ => {
                if d > ROTATION_SEEDS.len() {
                    return Err(Error::Unsupported(format!("no default rotation in dimension {d}")));
                }
                Ok(ROTATION_SEEDS[..d].iter().map(|p| p.sqrt().fract()).collect())
            }
        }
    }

    pub fn validate(&self, space: &Space) -> Result<()> {
        if let CenterProcess::MixingMarkov { refresh, .. } = self {
            if !(*refresh > 0.0 && *refresh < 1.0) {
                return Err(Error::InvalidParameter(format!("refresh probability must lie in (0, 1), got {refresh}")));
            }
            let SpaceKind::Torus { d } = space.kind else {
                return Err(Error::Unsupported("the mixing chain is defined on tori only".into()));
            };
            self.rotation(d)?;
        }
        Ok(())
    }

    /// `xi_1, ..., xi_count`, generated sequentially from the seed's center stream.
    pub fn centers(&self, space: &Space, seed: u64, count: u64) -> Result<Vec<Point>> {
        self.validate(space)?;
        let mut rng = rng::stream(seed, CENTERS, 0);
        match self {
            CenterProcess::IidUniform => Ok((0..count).map(|_| space.random_point(&mut rng)).collect()),
            CenterProcess::MixingMarkov { refresh, .. } => {
                let SpaceKind::Torus { d } = space.kind else { unreachable!("validated") };
                let theta = self.rotation(d)?;
                let mut out = Vec::with_capacity(count as usize);
                let mut x = space.random_point(&mut rng);
                for i in 0..count {
                    if i > 0 {
                        if rng.random::<f64>() < *refresh {
                            x = space.random_point(&mut rng);
                        } else if let Point::Torus(v) = &mut x {
                            for (c, t) in v.iter_mut().zip(&theta) {
                                *c = wrap(*c + t);
                            }
                        }
                    }
                    out.push(x.clone());
                }
                Ok(out)
            }
        }
    }
}

/// Window unions of `B(xi_n, r_n)` at one level, and their intersection.
#[derive(Clone, Debug)]
pub struct CoveringRun {
    pub level: u32,
    pub windows: Vec<(u64, u64)>,
    pub window_sets: Vec<CubeSet>,
    pub approx: CubeSet,
}

pub fn check_range(schedule: &RadiusSchedule, n_max: u64) -> Result<()> {
    schedule.validate()?;
    if n_max == 0 || n_max > schedule.len() {
        return Err(Error::InvalidParameter(format!("nMax = {n_max} outside the schedule's domain")));
    }
    Ok(())
}

/// Outer-mode cube approximation of the covering set with `k` geometric windows.
pub fn simulate_covering(tree: &CubeTree, centers: &[Point], schedule: &RadiusSchedule, level: u32, k: usize) -> Result<CoveringRun> {
    let n_max = centers.len() as u64;
    check_range(schedule, n_max)?;
    if level > tree.max_level {
        return Err(Error::ResolutionExceeded { level, max: tree.max_level });
    }
    let (windows, window_sets) = window_sets(tree, centers, level, k, |n| vec![schedule.radius(n); tree.factors.len()])?;
    let mut approx = CubeSet::full(tree, level)?;
    for w in &window_sets {
        approx.intersect_with(w);
    }
    Ok(CoveringRun { level, windows, window_sets, approx })
}

/// Index windows with the union of their balls.
type Windows = (Vec<(u64, u64)>, Vec<CubeSet>);

fn window_sets(
    tree: &CubeTree,
    centers: &[Point],
    level: u32,
    k: usize,
    radii: impl Fn(u64) -> Vec<f64> + Sync,
) -> Result<Windows> {
    let windows = geometric_windows(1, centers.len() as u64, k);
    let sets = windows
        .par_iter()
        .map(|&(a, b)| {
            let mut set = CubeSet::empty(tree, level)?;
            for n in a..=b {
                tree.insert_rect(&mut set, &centers[n as usize - 1], &radii(n), Mode::Outer)?;
            }
            Ok(set)
        })
        .collect::<Result<_>>()?;
    Ok((windows, sets))
}

/// `∩_k ∪_{n in window k}` of outer rectangles with per-factor radii `radii(n)`.
pub fn geometric_windows_product(
    tree: &CubeTree,
    centers: &[Point],
    level: u32,
    k: usize,
    radii: impl Fn(u64) -> Vec<f64> + Sync,
) -> Result<CubeSet> {
    let (_, sets) = window_sets(tree, centers, level, k, radii)?;
    let mut approx = CubeSet::full(tree, level)?;
    for w in &sets {
        approx.intersect_with(w);
    }
    Ok(approx)
}

fn insert_ball(tree: &CubeTree, set: &mut CubeSet, x: &Point, r: f64) -> Result<()> {
    if r > tree.space.diam {
        set.insert_index_range(0, set.capacity());
        return Ok(());
    }
    tree.insert_rect(set, x, &vec![r; tree.factors.len()], Mode::Outer)
}

/// Finite union of closed arcs on the circle, kept sorted and disjoint.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ArcSet {
    pub arcs: Vec<(f64, f64)>,
}

impl ArcSet {
    pub fn from_balls(balls: impl IntoIterator<Item = (f64, f64)>) -> ArcSet {
        let mut raw = Vec::new();
        for (x, r) in balls {
            if r >= 0.5 {
                raw.push((0.0, 1.0));
            } else if r > 0.0 {
                let (a, b) = (x - r, x + r);
                if a < 0.0 {
                    raw.push((a + 1.0, 1.0));
                    raw.push((0.0, b));
                } else if b > 1.0 {
                    raw.push((a, 1.0));
                    raw.push((0.0, b - 1.0));
                } else {
                    raw.push((a, b));
                }
            }
        }
        raw.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut arcs: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (a, b) in raw {
            match arcs.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => arcs.push((a, b)),
            }
        }
        ArcSet { arcs }
    }

    pub fn measure(&self) -> f64 {
        self.arcs.iter().map(|(a, b)| b - a).sum()
    }

    pub fn intersect(&self, other: &ArcSet) -> ArcSet {
        let (mut i, mut j) = (0, 0);
        let mut arcs = Vec::new();
        while i < self.arcs.len() && j < other.arcs.len() {
            let (a0, a1) = self.arcs[i];
            let (b0, b1) = other.arcs[j];
            let (lo, hi) = (a0.max(b0), a1.min(b1));
            if lo < hi {
                arcs.push((lo, hi));
            }
            if a1 < b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        ArcSet { arcs }
    }
}

fn circle_coord(x: &Point) -> Result<f64> {
    match x {
        Point::Torus(v) if v.len() == 1 => Ok(v[0]),
        _ => Err(Error::Unsupported("exact arc measures need torus(1)".into())),
    }
}

/// Exact measure of `∪_{from <= n <= to} B(xi_n, r_n)` on the circle.
pub fn union_measure_exact(centers: &[Point], schedule: &RadiusSchedule, from: u64, to: u64) -> Result<f64> {
    Ok(arc_union(centers, schedule, from, to)?.measure())
}

fn arc_union(centers: &[Point], schedule: &RadiusSchedule, from: u64, to: u64) -> Result<ArcSet> {
    let to = to.min(centers.len() as u64);
    let balls: Vec<(f64, f64)> = (from.max(1)..=to).map(|n| Ok((circle_coord(&centers[n as usize - 1])?, schedule.radius(n)))).collect::<Result<_>>()?;
    Ok(ArcSet::from_balls(balls))
}

/// Exact measure of the intersection of the `k` window unions on the circle.
pub fn windows_measure_exact(centers: &[Point], schedule: &RadiusSchedule, k: usize) -> Result<f64> {
    let mut acc = ArcSet { arcs: vec![(0.0, 1.0)] };
    for (a, b) in geometric_windows(1, centers.len() as u64, k) {
        acc = acc.intersect(&arc_union(centers, schedule, a, b)?);
    }
    Ok(acc.measure())
}

/// Level `l` with `b^(l+1) < r <= b^l`: the scale at which a ball is one piece.
pub fn native_level(b: f64, r: f64) -> u32 {
    if r >= 1.0 {
        return 0;
    }
    let l = (r.ln() / b.ln()).floor();
    // guard against rounding at exact powers
    let l = if b.powf(l + 1.0) >= r { l + 1.0 } else if b.powf(l) < r { l - 1.0 } else { l };
    l.max(0.0) as u32
}

/// Pieces grouped by native level: entry `j` collects, at level `levels[j]`,
/// every piece `n <= n_max` with `level_of(n) == levels[j]`. A level is
/// complete when some later piece is already finer, so nothing is missing.
pub fn pieces_by_level(
    tree: &CubeTree,
    n_max: u64,
    levels: &[u32],
    level_of: impl Fn(u64) -> u32,
    mut insert: impl FnMut(&mut CubeSet, u64) -> Result<()>,
) -> Result<(Vec<CubeSet>, Vec<bool>)> {
    let mut sets: Vec<CubeSet> = levels.iter().map(|&l| CubeSet::empty(tree, l)).collect::<Result<_>>()?;
    let top = levels.iter().copied().max().unwrap_or(0);
    let mut reached = 0;
    for n in 1..=n_max {
        let l = level_of(n);
        reached = reached.max(l);
        if l > top {
            break;
        }
        if let Some(pos) = levels.iter().position(|&v| v == l) {
            insert(&mut sets[pos], n)?;
        }
    }
    let complete = levels.iter().map(|&l| reached > l).collect();
    Ok((sets, complete))
}

/// Outer cubes of `B(xi_n, r_n)` at their native levels.
pub fn native_pieces(tree: &CubeTree, centers: &[Point], schedule: &RadiusSchedule, levels: &[u32]) -> Result<(Vec<CubeSet>, Vec<bool>)> {
    pieces_by_level(
        tree,
        centers.len() as u64,
        levels,
        |n| native_level(tree.b, schedule.radius(n)),
        |set, n| insert_ball(tree, set, &centers[n as usize - 1], schedule.radius(n)),
    )
}

/// Fit over the complete levels only.
pub fn fit_pieces(b: f64, levels: &[u32], sets: &[CubeSet], complete: &[bool]) -> Result<DimReport> {
    let (lv, ct): (Vec<u32>, Vec<u64>) = levels.iter().zip(sets).zip(complete).filter(|(_, c)| **c).map(|((l, s), _)| (*l, s.len())).unzip();
    fit_counts(b, &lv, &ct)
}

/// Per level `l`, a level-`l` cover of every ball from the first one of
/// native level `>= l` onwards; built at level `fine` and projected.
pub fn native_tails(tree: &CubeTree, centers: &[Point], schedule: &RadiusSchedule, levels: &[u32], fine: u32) -> Result<Vec<CubeSet>> {
    let first: Vec<usize> = levels
        .iter()
        .map(|&l| (0..centers.len()).find(|&i| native_level(tree.b, schedule.radius(i as u64 + 1)) >= l).unwrap_or(centers.len()))
        .collect();
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by_key(|&j| std::cmp::Reverse(first[j]));
    let mut acc = CubeSet::empty(tree, fine)?;
    let mut next = centers.len();
    let mut out: Vec<Option<CubeSet>> = vec![None; levels.len()];
    for j in order {
        while next > first[j] {
            next -= 1;
            insert_ball(tree, &mut acc, &centers[next], schedule.radius(next as u64 + 1))?;
        }
        out[j] = Some(acc.project(tree, levels[j])?);
    }
    Ok(out.into_iter().map(|s| s.expect("filled")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CoverReport {
    pub seed: u64,
    pub s0: f64,
    pub target: f64,
    pub dim: Option<DimReport>,
    pub fit_error: Option<String>,
    pub within_tol: Option<bool>,
    pub approx_level: u32,
    pub approx_measure: f64,
    pub certificate_t: f64,
    /// `(level, min c)` of the certificate on the approximation at a few levels.
    pub certificate_trend: Vec<(u32, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverConfig {
    pub n_max: u64,
    pub levels: (u32, u32),
    pub windows: usize,
    pub tol: f64,
    pub cert_depth: u32,
}

impl Default for CoverConfig {
    fn default() -> Self {
        CoverConfig { n_max: 1_000_000, levels: (6, 14), windows: 4, tol: 0.1, cert_depth: 6 }
    }
}

/// Piece-count dimension of the covering set against `min(s, s0)`, plus the
/// net-content certificate of the window approximation at `t = 0.8 min(s, s0)`.
pub fn covering_dimension_experiment(tree: &CubeTree, proc: &CenterProcess, schedule: &RadiusSchedule, seed: u64, cfg: &CoverConfig) -> Result<CoverReport> {
    check_range(schedule, cfg.n_max)?;
    let crit = s0(schedule)?;
    let s = tree.space.s;
    let target = s.min(crit.value);
    let centers = proc.centers(&tree.space, seed, cfg.n_max)?;
    let levels: Vec<u32> = (cfg.levels.0..=cfg.levels.1).collect();
    let (pieces, complete) = native_pieces(tree, &centers, schedule, &levels)?;
    let (dim, fit_error) = match fit_pieces(tree.b, &levels, &pieces, &complete) {
        Ok(d) => (Some(d), None),
        Err(e) if crit.value >= s => {
            // Too few complete levels (slowly shrinking balls); count the
            // window approximation instead.
            let run = simulate_covering(tree, &centers, schedule, cfg.levels.1, cfg.windows)?;
            match box_dimension(tree, &run.approx, &levels) {
                Ok(d) => (Some(d), None),
                Err(_) => (None, Some(e.to_string())),
            }
        }
        Err(e) => (None, Some(e.to_string())),
    };
    let within_tol = dim.as_ref().map(|d| (d.slope - target).abs() <= cfg.tol);
    let cert_t = 0.8 * target;
    let hi = cfg.levels.1;
    let mut trend = Vec::new();
    let mut approx_measure = 0.0;
    for level in [hi.saturating_sub(4), hi.saturating_sub(2), hi] {
        if level < cfg.cert_depth {
            continue;
        }
        let run = simulate_covering(tree, &centers, schedule, level, cfg.windows)?;
        approx_measure = run.approx.measure();
        if run.approx.is_empty() {
            trend.push((level, 0.0));
            continue;
        }
        let cert = li_certificate(tree, &run.approx, cert_t, cfg.cert_depth)?;
        trend.push((level, cert.min_c));
    }
    Ok(CoverReport {
        seed,
        s0: crit.value,
        target,
        dim,
        fit_error,
        within_tol,
        approx_level: hi,
        approx_measure,
        certificate_t: cert_t,
        certificate_trend: trend,
    })
}

/// Intersection lab on native pieces with `maps` random isometries drawn from the seed.
pub fn covering_lab(tree: &CubeTree, centers: &[Point], schedule: &RadiusSchedule, levels: (u32, u32), maps: usize, seed: u64, t: f64, tol: f64) -> Result<LabReport> {
    let all: Vec<u32> = (levels.0..=levels.1).collect();
    let (_, complete) = native_pieces(tree, centers, schedule, &all)?;
    let lv: Vec<u32> = all.iter().zip(&complete).filter(|(_, c)| **c).map(|(l, _)| *l).collect();
    let (pieces, _) = native_pieces(tree, centers, schedule, &lv)?;
    let tails = native_tails(tree, centers, schedule, &lv, levels.1)?;
    let mut rng = rng::stream(seed, MAPS, 0);
    let isos: Vec<Isometry> = (0..maps).map(|_| Isometry::random(tree, &mut rng)).collect();
    multiscale_lab(tree, &lv, &pieces, &tails, &isos, levels.1, t, tol)
}
