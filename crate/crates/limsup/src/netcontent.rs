//! Net content `M^t_inf(F) = inf sum mu(Q_i)^(t/s)` over covers of `F` by
//! tree cubes, and the large-intersection certificate built from it.
//!
//! Covers never need cubes finer than the resolution of `F`: a level-N cube of
//! `F` costs `mu^(t/s)`, no more than any cover of it by its descendants when
//! `t <= s`. The dynamic program therefore stops at `F`'s level.

use serde::Serialize;

use crate::cubes::{CubeId, CubeSet, CubeTree};
use crate::{Error, Result};

const BRUTE_MAX_DEPTH: u32 = 4;
const BRUTE_MAX_COVERS: f64 = 2e6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NetContentResult {
    pub value: f64,
    pub optimal_cover: Vec<CubeId>,
    pub t: f64,
}

fn exponent(tree: &CubeTree, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= tree.space.s) {
        return Err(Error::InvalidParameter(format!("net content exponent t = {t} outside [0, {}]", tree.space.s)));
    }
    Ok(t / tree.space.s)
}

/// `mu(Q)^(t/s)` for a level-n cube.
fn content(tree: &CubeTree, n: u32, e: f64) -> f64 {
    tree.cube_measure(n).powf(e)
}

/// Sparse bottom-up pass. Returns per-level `(index, cost, take_self)` rows,
/// `rows[l]` for levels `top..=N`, restricted to cubes meeting `F` below `top_cube`.
fn dp(tree: &CubeTree, f: &CubeSet, e: f64, top_cube: CubeId) -> Vec<Vec<(u64, f64, bool)>> {
    let n = f.level;
    let (lo, hi) = tree.descendant_range(top_cube, n);
    let leaf = content(tree, n, e);
    let mut levels = vec![Vec::new(); (n - top_cube.level + 1) as usize];
    let mut cur: Vec<(u64, f64, bool)> = f.indices().filter(|i| (lo..hi).contains(i)).map(|i| (i, leaf, true)).collect();
    for l in (top_cube.level..n).rev() {
        let own = content(tree, l, e);
        let mut next = Vec::new();
        let mut i = 0;
        while i < cur.len() {
            let p = cur[i].0 / tree.branching;
            let mut sum = 0.0;
            while i < cur.len() && cur[i].0 / tree.branching == p {
                sum += cur[i].1;
                i += 1;
            }
            let take = own <= sum;
            next.push((p, if take { own } else { sum }, take));
        }
        levels[(l + 1 - top_cube.level) as usize] = cur;
        cur = next;
    }
    levels[0] = cur;
    levels
}

/// Exact net content of `F ∩ within`.
pub fn net_content(tree: &CubeTree, f: &CubeSet, t: f64, within: CubeId) -> Result<NetContentResult> {
    let e = exponent(tree, t)?;
    if within.level > f.level {
        return Err(Error::InvalidInput(format!(
            "cube at level {} is finer than the set level {}",
            within.level, f.level
        )));
    }
    let levels = dp(tree, f, e, within);
    let Some(&(_, value, _)) = levels[0].first() else {
        return Ok(NetContentResult { value: 0.0, optimal_cover: Vec::new(), t });
    };
    // walk down from `within`, keeping cubes whose own cost was chosen
    let mut cover = Vec::new();
    let mut frontier = vec![within.index];
    for (depth, rows) in levels.iter().enumerate() {
        let level = within.level + depth as u32;
        let mut expand = Vec::new();
        for &(idx, _, take) in rows {
            let parent_open = if depth == 0 {
                true
            } else {
                frontier.binary_search(&(idx / tree.branching)).is_ok()
            };
            if !parent_open {
                continue;
            }
            if take {
                cover.push(CubeId { level, index: idx });
            } else {
                expand.push(idx);
            }
        }
        frontier = expand;
    }
    Ok(NetContentResult { value, optimal_cover: cover, t })
}

/// Minimum cost over every antichain cover of `F ∩ within`, by enumeration.
pub fn net_content_bruteforce(tree: &CubeTree, f: &CubeSet, t: f64, within: CubeId) -> Result<f64> {
    let e = exponent(tree, t)?;
    if within.level > f.level {
        return Err(Error::InvalidInput("cube finer than the set level".into()));
    }
    let depth = f.level - within.level;
    if depth > BRUTE_MAX_DEPTH {
        return Err(Error::Refused(format!("{depth} levels below the cube exceeds {BRUTE_MAX_DEPTH}")));
    }
    // antichains of a complete subtree: a(0) = 2, a(d) = a(d-1)^B + 1
    let mut count = 2.0f64;
    for _ in 0..depth {
        count = count.powf(tree.branching as f64) + 1.0;
    }
    if count > BRUTE_MAX_COVERS {
        return Err(Error::Refused(format!("about {count:.3e} antichains to enumerate")));
    }
    let costs = covers(tree, f, e, within);
    Ok(costs.into_iter().fold(f64::INFINITY, f64::min))
}

/// Costs of all antichains below `q` that cover `F ∩ q`.
fn covers(tree: &CubeTree, f: &CubeSet, e: f64, q: CubeId) -> Vec<f64> {
    let (lo, hi) = tree.descendant_range(q, f.level);
    let meets = f.any_in_range(lo, hi);
    let mut out = vec![content(tree, q.level, e)];
    if !meets {
        out.push(0.0);
    }
    if q.level < f.level {
        let mut acc = vec![0.0];
        for c in tree.children(q) {
            let sub = covers(tree, f, e, c);
            let mut next = Vec::with_capacity(acc.len() * sub.len());
            for a in &acc {
                for b in &sub {
                    next.push(a + b);
                }
            }
            acc = next;
        }
        if meets {
            out.extend(acc);
        } else {
            // the all-empty combination duplicates the empty cover
            out.extend(acc.into_iter().filter(|c| *c != 0.0));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Certificate {
    pub t: f64,
    pub max_depth: u32,
    pub min_c: f64,
    pub argmin_cube: String,
    /// Counts of `c(Q)` in ten equal bins of `[0, 1]`.
    pub histogram: [u64; 10],
    #[serde(skip)]
    pub argmin: CubeId,
}

/// `c(Q) = M^t_inf(F ∩ Q) / mu(Q)^(t/s)` for every cube of level at most `max_depth`.
pub fn li_certificate(tree: &CubeTree, f: &CubeSet, t: f64, max_depth: u32) -> Result<Certificate> {
    let e = exponent(tree, t)?;
    if max_depth > f.level {
        return Err(Error::ResolutionExceeded { level: max_depth, max: f.level });
    }
    let levels = dp(tree, f, e, CubeId::ROOT);
    let mut min_c = f64::INFINITY;
    let mut argmin = CubeId::ROOT;
    let mut histogram = [0u64; 10];
    for n in 0..=max_depth {
        let own = content(tree, n, e);
        let rows = &levels[n as usize];
        let mut it = rows.iter().peekable();
        for index in 0..tree.count(n) {
            let cost = match it.peek() {
                Some(&&(i, c, _)) if i == index => {
                    it.next();
                    c
                }
                _ => 0.0,
            };
            let c = (cost / own).min(1.0);
            histogram[((c * 10.0) as usize).min(9)] += 1;
            if c < min_c {
                min_c = c;
                argmin = CubeId { level: n, index };
            }
        }
    }
    Ok(Certificate { t, max_depth, min_c, argmin_cube: tree.path_string(argmin), histogram, argmin })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubes::Mode;
    use crate::spaces::{Point, Space};
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::Rng;

    fn binary(level: u32) -> CubeTree {
        CubeTree::new(&Space::symbolic(2, 0.5).unwrap(), 0.5, level).unwrap()
    }

    fn set(tree: &CubeTree, level: u32, idx: &[u64]) -> CubeSet {
        CubeSet::from_cubes(tree, level, idx.iter().map(|&index| CubeId { level, index })).unwrap()
    }

    #[test]
    fn whole_cube_has_full_content() {
        let tree = CubeTree::new(&Space::torus(1).unwrap(), 0.25, 6).unwrap();
        let full = CubeSet::full(&tree, 5).unwrap();
        for n in 0..=5 {
            for q in tree.cubes_at(n) {
                let r = net_content(&tree, &full, 0.6, q).unwrap();
                assert_eq!(r.value, tree.cube_measure(n).powf(0.6));
            }
        }
    }

    #[test]
    fn root_cover_beats_leaves() {
        let tree = binary(4);
        let f = set(&tree, 2, &[0, 1, 2]);
        let r = net_content(&tree, &f, 0.5, CubeId::ROOT).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.optimal_cover, vec![CubeId::ROOT]);
        assert_eq!(net_content_bruteforce(&tree, &f, 0.5, CubeId::ROOT).unwrap(), 1.0);
    }

    #[test]
    fn empty_and_single_leaf() {
        let tree = binary(4);
        assert_eq!(net_content(&tree, &CubeSet::empty(&tree, 3).unwrap(), 0.5, CubeId::ROOT).unwrap().value, 0.0);
        let f = set(&tree, 3, &[5]);
        let t = 0.3;
        let chain = (0..=3).map(|n| tree.cube_measure(n).powf(t)).fold(f64::INFINITY, f64::min);
        assert_eq!(net_content(&tree, &f, t, CubeId::ROOT).unwrap().value, chain);
        assert_eq!(net_content_bruteforce(&tree, &f, t, CubeId::ROOT).unwrap(), chain);
    }

    #[test]
    fn exponent_s_is_measure() {
        let tree = binary(6);
        let f = set(&tree, 4, &[0, 3, 4, 5, 11]);
        let r = net_content(&tree, &f, 1.0, CubeId::ROOT).unwrap();
        assert!((r.value - f.measure()).abs() < 1e-15);
    }

    #[test]
    fn brute_force_refuses_large_subtrees() {
        let tree = binary(8);
        let f = set(&tree, 6, &[1]);
        assert!(matches!(net_content_bruteforce(&tree, &f, 0.5, CubeId::ROOT), Err(Error::Refused(_))));
        let quad = CubeTree::new(&Space::torus(2).unwrap(), 0.5, 6).unwrap();
        let g = CubeSet::full(&quad, 3).unwrap();
        assert!(matches!(net_content_bruteforce(&quad, &g, 0.5, CubeId::ROOT), Err(Error::Refused(_))));
    }

    #[test]
    fn certificate_examples() {
        let tree = CubeTree::new(&Space::torus(1).unwrap(), 0.5, 12).unwrap();
        let all = CubeSet::full(&tree, 10).unwrap();
        let c = li_certificate(&tree, &all, 0.5, 6).unwrap();
        assert_eq!(c.min_c, 1.0);
        assert_eq!(c.histogram[9], (1 << 7) - 1);

        let ball = tree.ball_to_cubeset(&Point::Torus(vec![0.5]), 0.1, 10, Mode::Outer).unwrap();
        let mut prev = f64::INFINITY;
        for depth in [1, 3, 6] {
            let c = li_certificate(&tree, &ball, 0.9, depth).unwrap();
            assert!(c.min_c <= prev);
            prev = c.min_c;
        }
        assert_eq!(prev, 0.0);
        let json = serde_json::to_string(&li_certificate(&tree, &ball, 0.9, 2).unwrap()).unwrap();
        assert!(json.contains("\"maxDepth\":2") && json.contains("\"minC\"") && json.contains("\"argminCube\""));
    }

    #[test]
    fn cover_is_valid_antichain() {
        let tree = binary(8);
        let mut rng = crate::rng::stream(4, 0, 0);
        for _ in 0..50 {
            let f = CubeSet::from_cubes(&tree, 6, (0..64).filter(|_| rng.random::<f64>() < 0.3).map(|index| CubeId { level: 6, index })).unwrap();
            let t = rng.random::<f64>();
            let r = net_content(&tree, &f, t, CubeId::ROOT).unwrap();
            let sum: f64 = r.optimal_cover.iter().map(|q| tree.cube_measure(q.level).powf(t)).sum();
            assert!((sum - r.value).abs() < 1e-12);
            for q in f.iter() {
                let hits = r.optimal_cover.iter().filter(|c| tree.ancestor(q, c.level) == **c).count();
                assert_eq!(hits, 1);
            }
        }
    }

    fn random_set(tree: &CubeTree, level: u32, seed: u64, p: f64) -> CubeSet {
        let mut rng = crate::rng::stream(seed, 0, 0);
        let cubes: Vec<CubeId> = tree.cubes_at(level).filter(|_| rng.random::<f64>() < p).collect();
        CubeSet::from_cubes(tree, level, cubes).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn dp_equals_brute_force(seed in any::<u64>(), t in 0.0f64..1.0, p in 0.0f64..1.0, depth in 1u32..4) {
            let tree = binary(6);
            let f = random_set(&tree, depth, seed, p);
            let dp = net_content(&tree, &f, t, CubeId::ROOT).unwrap().value;
            let bf = net_content_bruteforce(&tree, &f, t, CubeId::ROOT).unwrap();
            prop_assert_eq!(dp, bf);
        }

        #[test]
        fn monotone_subadditive_and_decreasing(seed in any::<u64>(), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let tree = binary(8);
            let a = random_set(&tree, 6, seed, 0.2);
            let b = random_set(&tree, 6, seed ^ 1, 0.2);
            let u = a.union(&tree, &b).unwrap();
            let nc = |s: &CubeSet, t: f64| net_content(&tree, s, t, CubeId::ROOT).unwrap().value;
            prop_assert!(nc(&a, t1) <= nc(&u, t1) + 1e-12);
            prop_assert!(nc(&u, t1) <= nc(&a, t1) + nc(&b, t1) + 1e-12);
            prop_assert!(nc(&u, t1) <= 1.0);
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(nc(&u, hi) <= nc(&u, lo) + 1e-12);
        }
    }
}
