//! Box-counting on cube sets, fits of piece counts, and intersection labs
//! under measure-preserving isometries.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cubes::{CubeSet, CubeTree, Factor};
use crate::energy::least_squares;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimReport {
    pub slope: f64,
    pub stderr: f64,
    pub r2: f64,
    pub levels: Vec<u32>,
    pub counts: Vec<u64>,
}

/// Least-squares slope of `ln N(n)` against `n ln(1/b)`. Zero counts are dropped.
pub fn fit_counts(b: f64, levels: &[u32], counts: &[u64]) -> Result<DimReport> {
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::UndefinedDimension("no pieces at any level".into()));
    }
    let (lv, ct): (Vec<u32>, Vec<u64>) = levels.iter().zip(counts).filter(|(_, c)| **c > 0).map(|(l, c)| (*l, *c)).unzip();
    if lv.len() < 3 {
        return Err(Error::InsufficientResolution(format!("{} usable levels, need 3", lv.len())));
    }
    let x: Vec<f64> = lv.iter().map(|&n| n as f64 * (1.0 / b).ln()).collect();
    let y: Vec<f64> = ct.iter().map(|&c| (c as f64).ln()).collect();
    let (slope, stderr, r2) = least_squares(&x, &y);
    Ok(DimReport { slope, stderr, r2, levels: lv, counts: ct })
}

/// Counts the level-n cubes meeting `f` for each requested level and fits.
///
/// Levels where every cube is hit are dropped when at least three others
/// remain; otherwise all levels are kept.
pub fn box_dimension(tree: &CubeTree, f: &CubeSet, levels: &[u32]) -> Result<DimReport> {
    if f.is_empty() {
        return Err(Error::UndefinedDimension("empty set".into()));
    }
    if let Some(&n) = levels.iter().find(|&&n| n > f.level) {
        return Err(Error::ResolutionExceeded { level: n, max: f.level });
    }
    let counts: Vec<u64> = levels.iter().map(|&n| f.count_at(tree, n)).collect();
    let unsaturated: Vec<usize> = (0..levels.len()).filter(|&i| counts[i] < tree.count(levels[i])).collect();
    let keep: Vec<usize> = if unsaturated.len() >= 3 { unsaturated } else { (0..levels.len()).collect() };
    let lv: Vec<u32> = keep.iter().map(|&i| levels[i]).collect();
    let ct: Vec<u64> = keep.iter().map(|&i| counts[i]).collect();
    fit_counts(tree.b, &lv, &ct)
}

/// `k` windows tiling `[lo, hi]` geometrically (ratio `hi^(1/k)`), as
/// inclusive index ranges; empty windows are skipped.
pub fn geometric_windows(lo: u64, hi: u64, k: usize) -> Vec<(u64, u64)> {
    let lo = lo.max(1);
    let ratio = (hi as f64 / lo as f64).powf(1.0 / k as f64);
    let mut out = Vec::with_capacity(k);
    let mut start = lo;
    for j in 1..=k {
        let end = if j == k { hi } else { ((lo as f64 * ratio.powi(j as i32)).ceil() as u64 - 1).min(hi) };
        if end >= start {
            out.push((start, end));
            start = end + 1;
        }
    }
    out
}

/// Isometry of one flattened factor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FactorMap {
    Identity,
    /// Rotation of a circle, snapped to the cube grid when applied.
    Translate(f64),
    /// The same digit permutation at every position. On a Cantor factor only
    /// `[1, 0]` (the reflection `x -> 1 - x`) is an isometry.
    Permute(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Isometry {
    pub parts: Vec<FactorMap>,
}

impl Isometry {
    pub fn identity(tree: &CubeTree) -> Isometry {
        Isometry { parts: vec![FactorMap::Identity; tree.factors.len()] }
    }

    pub fn validate(&self, tree: &CubeTree) -> Result<()> {
        if self.parts.len() != tree.factors.len() {
            return Err(Error::InvalidMap(format!("{} factor maps for {} factors", self.parts.len(), tree.factors.len())));
        }
        for (f, (fac, map)) in tree.factors.iter().zip(&self.parts).enumerate() {
            match (fac, map) {
                (_, FactorMap::Identity) => {}
                (Factor::Circle { .. }, FactorMap::Translate(v)) if v.is_finite() => {}
                (Factor::Digits { m, .. }, FactorMap::Permute(p)) if is_permutation(p, *m) => {}
                (Factor::Cantor { .. }, FactorMap::Permute(p)) if p == &[0, 1] || p == &[1, 0] => {}
                _ => {
                    return Err(Error::InvalidMap(format!("{map:?} is not a measure-preserving isometry of factor {f}")));
                }
            }
        }
        Ok(())
    }

    /// Random isometry: uniform rotations, uniform digit permutations, and a
    /// fair coin for the Cantor reflection.
    pub fn random<R: Rng + ?Sized>(tree: &CubeTree, rng: &mut R) -> Isometry {
        let parts = tree
            .factors
            .iter()
            .map(|f| match f {
                Factor::Circle { .. } => FactorMap::Translate(rng.random::<f64>()),
                Factor::Digits { m, .. } => {
                    let mut p: Vec<u8> = (0..*m as u8).collect();
                    p.shuffle(rng);
                    FactorMap::Permute(p)
                }
                Factor::Cantor { .. } => FactorMap::Permute(if rng.random::<bool>() { vec![1, 0] } else { vec![0, 1] }),
            })
            .collect();
        Isometry { parts }
    }
}

fn is_permutation(p: &[u8], m: u64) -> bool {
    let mut seen = vec![false; m as usize];
    p.len() == m as usize && p.iter().all(|&d| (d as u64) < m && !std::mem::replace(&mut seen[d as usize], true))
}

fn map_factor_index(fac: &Factor, map: &FactorMap, idx: u64, n: u32) -> u64 {
    match (fac, map) {
        (_, FactorMap::Identity) => idx,
        (Factor::Circle { k, .. }, FactorMap::Translate(v)) => {
            let cells = k.pow(n);
            let shift = (v.rem_euclid(1.0) * cells as f64).round() as u64 % cells;
            (idx + shift) % cells
        }
        (fac, FactorMap::Permute(p)) => {
            let m = fac.branching();
            let mut out = 0;
            let mut place = 1;
            let mut v = idx;
            for _ in 0..n {
                out += p[(v % m) as usize] as u64 * place;
                place *= m;
                v /= m;
            }
            out
        }
        _ => unreachable!("validated"),
    }
}

/// Image of a cube set. Translations are snapped to the level-`grid` cube
/// grid (`grid >= f.level`); the image is reported at `f`'s level as the
/// cubes meeting it.
pub fn apply_map(tree: &CubeTree, f: &CubeSet, map: &Isometry, grid: u32) -> Result<CubeSet> {
    map.validate(tree)?;
    let grid = grid.max(f.level);
    let fine = f.refine(tree, grid)?;
    let mut out = CubeSet::empty(tree, grid)?;
    for q in fine.iter() {
        let parts: Vec<u64> = tree
            .split_index(q)
            .into_iter()
            .zip(tree.factors.iter().zip(&map.parts))
            .map(|(i, (fac, m))| map_factor_index(fac, m, i, grid))
            .collect();
        out.insert_index_range(tree.combine_index(&parts, grid), tree.combine_index(&parts, grid) + 1);
    }
    out.project(tree, f.level)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabRow {
    pub k: usize,
    pub counts: Vec<u64>,
    pub dim: Option<DimReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabReport {
    pub t: f64,
    pub tol: f64,
    pub rows: Vec<LabRow>,
    /// Every prefix estimate is at least `t - tol`.
    pub all_above: bool,
}

fn lab_row(k: usize, counts: Vec<u64>, fit: Result<DimReport>) -> LabRow {
    match fit {
        Ok(d) => LabRow { k, counts, dim: Some(d), error: None },
        Err(e) => LabRow { k, counts, dim: None, error: Some(e.to_string()) },
    }
}

fn finish(t: f64, tol: f64, rows: Vec<LabRow>) -> LabReport {
    let all_above = rows.iter().all(|r| r.dim.as_ref().is_some_and(|d| d.slope >= t - tol));
    LabReport { t, tol, rows, all_above }
}

/// Box dimension of `F ∩ f_1(F) ∩ ... ∩ f_k(F)` for `k = 0..=K`.
pub fn intersection_lab(tree: &CubeTree, f: &CubeSet, maps: &[Isometry], t: f64, levels: &[u32], tol: f64) -> Result<LabReport> {
    maps.iter().try_for_each(|m| m.validate(tree))?;
    let mut acc = f.clone();
    let mut rows = vec![lab_row(0, levels.iter().map(|&n| acc.count_at(tree, n)).collect(), box_dimension(tree, &acc, levels))];
    for (k, m) in maps.iter().enumerate() {
        acc.intersect_with(&apply_map(tree, f, m, f.level)?);
        let counts = levels.iter().map(|&n| acc.count_at(tree, n)).collect();
        rows.push(lab_row(k + 1, counts, box_dimension(tree, &acc, levels)));
    }
    Ok(finish(t, tol, rows))
}

/// Multiscale variant for limsup sets given by native pieces.
///
/// `pieces[i]` holds the level-`levels[i]` cubes of the pieces whose natural
/// scale is that level; `tails[i]` (same level) covers every later piece, so
/// the limsup set lies in `tails[i]`. The prefix count at a level is the
/// number of pieces meeting all mapped tails, which covers
/// `F ∩ f_1(F) ∩ ... ∩ f_k(F)` at that scale.
pub fn multiscale_lab(
    tree: &CubeTree,
    levels: &[u32],
    pieces: &[CubeSet],
    tails: &[CubeSet],
    maps: &[Isometry],
    grid: u32,
    t: f64,
    tol: f64,
) -> Result<LabReport> {
    maps.iter().try_for_each(|m| m.validate(tree))?;
    let mut current: Vec<CubeSet> = pieces.to_vec();
    let mut rows = Vec::with_capacity(maps.len() + 1);
    let counts: Vec<u64> = current.iter().map(|s| s.len()).collect();
    rows.push(lab_row(0, counts.clone(), fit_counts(tree.b, levels, &counts)));
    for (k, m) in maps.iter().enumerate() {
        for (cur, tail) in current.iter_mut().zip(tails) {
            cur.intersect_with(&apply_map(tree, tail, m, grid)?);
        }
        let counts: Vec<u64> = current.iter().map(|s| s.len()).collect();
        rows.push(lab_row(k + 1, counts.clone(), fit_counts(tree.b, levels, &counts)));
    }
    Ok(finish(t, tol, rows))
}

/// CSV rows `id,k,slope,stderr,r2,levels` with levels joined by `;`.
pub fn dim_csv(rows: &[(String, usize, DimReport)]) -> String {
    let mut out = String::from("id,k,slope,stderr,r2,levels\n");
    for (id, k, d) in rows {
        let lv: Vec<String> = d.levels.iter().map(|l| l.to_string()).collect();
        out.push_str(&format!("{id},{k},{},{},{},{}\n", d.slope, d.stderr, d.r2, lv.join(";")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cubes::{CubeId, Mode};
    use crate::spaces::{Point, Space};
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    #[test]
    fn full_set_has_dimension_s() {
        for (sp, b) in [(Space::torus(1).unwrap(), 0.5), (Space::torus(2).unwrap(), 0.25), (Space::symbolic(3, 0.25).unwrap(), 0.25)] {
            let tree = CubeTree::new(&sp, b, 6).unwrap();
            let full = CubeSet::full(&tree, 6).unwrap();
            let d = box_dimension(&tree, &full, &[2, 3, 4, 5, 6]).unwrap();
            assert!((d.slope - sp.s).abs() < 1e-12, "{}", sp.name());
        }
    }

    #[test]
    fn cantor_canonical_set() {
        let tree = CubeTree::new(&Space::cantor3(), 1.0 / 3.0, 12).unwrap();
        let all = CubeSet::full(&tree, 12).unwrap();
        let d = box_dimension(&tree, &all, &(4..=12).collect::<Vec<_>>()).unwrap();
        assert!((d.slope - 2f64.ln() / 3f64.ln()).abs() < 0.02);
    }

    #[test]
    fn single_cube_and_errors() {
        let tree = CubeTree::new(&Space::torus(1).unwrap(), 0.5, 10).unwrap();
        let one = CubeSet::from_cubes(&tree, 10, [CubeId { level: 10, index: 7 }]).unwrap();
        assert_eq!(box_dimension(&tree, &one, &[4, 6, 8, 10]).unwrap().slope, 0.0);
        let empty = CubeSet::empty(&tree, 10).unwrap();
        assert!(matches!(box_dimension(&tree, &empty, &[4, 6, 8]), Err(Error::UndefinedDimension(_))));
        assert!(matches!(box_dimension(&tree, &one, &[4, 6]), Err(Error::InsufficientResolution(_))));
    }

    #[test]
    fn windows_tile_the_range() {
        assert_eq!(geometric_windows(1, 16, 4), vec![(1, 1), (2, 3), (4, 7), (8, 16)]);
        let w = geometric_windows(1, 1_000_000, 4);
        assert_eq!(w.len(), 4);
        assert_eq!(w[0].0, 1);
        assert_eq!(w[3].1, 1_000_000);
        for p in w.windows(2) {
            assert_eq!(p[0].1 + 1, p[1].0);
        }
    }

    #[test]
    fn lab_examples() {
        let tree = CubeTree::new(&Space::torus(1).unwrap(), 0.5, 12).unwrap();
        let ball = tree.ball_to_cubeset(&Point::Torus(vec![0.2]), 0.05, 12, Mode::Outer).unwrap();
        let levels: Vec<u32> = (6..=12).collect();
        let id = Isometry::identity(&tree);
        let rep = intersection_lab(&tree, &ball, &[id], 0.0, &levels, 0.1).unwrap();
        assert_eq!(rep.rows[0].dim, rep.rows[1].dim);

        let far = Isometry { parts: vec![FactorMap::Translate(0.5)] };
        let rep = intersection_lab(&tree, &ball, &[far], 0.5, &levels, 0.15).unwrap();
        assert!(rep.rows[1].error.as_deref().unwrap().contains("undefined"));
        assert!(!rep.all_above);
    }

    #[test]
    fn invalid_maps_rejected() {
        let tree = CubeTree::new(&Space::cantor3(), 1.0 / 3.0, 6).unwrap();
        let set = CubeSet::full(&tree, 4).unwrap();
        assert!(matches!(
            apply_map(&tree, &set, &Isometry { parts: vec![FactorMap::Translate(0.1)] }, 4),
            Err(Error::InvalidMap(_))
        ));
        let sym = CubeTree::new(&Space::symbolic(3, 0.25).unwrap(), 0.25, 4).unwrap();
        assert!(Isometry { parts: vec![FactorMap::Permute(vec![0, 0, 1])] }.validate(&sym).is_err());
        assert!(Isometry { parts: vec![FactorMap::Permute(vec![2, 0, 1])] }.validate(&sym).is_ok());
    }

    #[test]
    fn cantor_reflection_is_exact() {
        let tree = CubeTree::new(&Space::cantor3(), 1.0 / 3.0, 8).unwrap();
        let x = Space::cantor3().zero_point();
        let set = tree.ball_to_cubeset(&x, 0.05, 8, Mode::Outer).unwrap();
        let img = apply_map(&tree, &set, &Isometry { parts: vec![FactorMap::Permute(vec![1, 0])] }, 8).unwrap();
        let expect: Vec<u64> = set.indices().map(|i| 255 - i).collect();
        let mut got: Vec<u64> = img.indices().collect();
        got.reverse();
        assert_eq!(got, expect);
    }

    #[test]
    fn csv_format() {
        let d = DimReport { slope: 0.5, stderr: 0.01, r2: 0.99, levels: vec![6, 7, 8], counts: vec![1, 2, 3] };
        assert_eq!(dim_csv(&[("cover".into(), 2, d)]), "id,k,slope,stderr,r2,levels\ncover,2,0.5,0.01,0.99,6;7;8\n");
    }

    fn random_set(tree: &CubeTree, n: u32, seed: u64) -> CubeSet {
        let mut rng = crate::rng::stream(seed, 0, 0);
        let mut s = CubeSet::empty(tree, n).unwrap();
        for _ in 0..20 {
            let x = tree.space.random_point(&mut rng);
            let r = 0.2 * rng.random::<f64>().powi(3);
            s.union_with(&tree.ball_to_cubeset(&x, r, n, Mode::Outer).unwrap());
        }
        s
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutations_preserve_counts(seed in any::<u64>()) {
            let tree = CubeTree::new(&Space::symbolic(3, 0.25).unwrap(), 0.25, 7).unwrap();
            let f = random_set(&tree, 7, seed);
            let mut rng = crate::rng::stream(seed, 1, 0);
            let m = Isometry::random(&tree, &mut rng);
            let g = apply_map(&tree, &f, &m, 7).unwrap();
            for n in 0..=7 {
                prop_assert!(f.count_at(&tree, n) == g.count_at(&tree, n));
            }
        }

        #[test]
        fn translations_barely_move_slopes(seed in any::<u64>()) {
            let tree = CubeTree::new(&Space::torus(1).unwrap(), 0.5, 12).unwrap();
            let f = random_set(&tree, 12, seed);
            let mut rng = crate::rng::stream(seed, 1, 0);
            let m = Isometry::random(&tree, &mut rng);
            let g = apply_map(&tree, &f, &m, 12).unwrap();
            let levels: Vec<u32> = (4..=12).collect();
            let a = box_dimension(&tree, &f, &levels).unwrap();
            let b = box_dimension(&tree, &g, &levels).unwrap();
            prop_assert!((a.slope - b.slope).abs() <= 2.0 / (levels.len() as f64 * 2f64.ln()));
        }

        #[test]
        fn prefix_counts_monotone(seed in any::<u64>()) {
            let tree = CubeTree::new(&Space::torus(1).unwrap(), 0.5, 10).unwrap();
            let f = random_set(&tree, 10, seed);
            let mut rng = crate::rng::stream(seed, 1, 0);
            let maps: Vec<Isometry> = (0..3).map(|_| Isometry::random(&tree, &mut rng)).collect();
            let rep = intersection_lab(&tree, &f, &maps, 0.0, &[4, 6, 8, 10], 0.1).unwrap();
            for w in rep.rows.windows(2) {
                for (a, b) in w[0].counts.iter().zip(&w[1].counts) {
                    prop_assert!(b <= a);
                }
            }
        }
    }
}
