//! Limsup random fractals `A = limsup A(n)`, where `A(n)` is the union of
//! the level-n cubes whose coin `Z_n(Q)` came up 1.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubes::{CubeId, CubeSet, CubeTree};
use crate::dimension::{fit_counts, geometric_windows, DimReport};
use crate::rng::{self, COINS};
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 0.01;
const CHUNK: u64 = 1 << 16;

/// Survival probability rule `P_n(Q)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "camelCase", deny_unknown_fields)]
pub enum Survival {
    /// `P_n = b^(n gamma)` for every cube.
    Uniform { gamma: f64 },
    /// `b^(n gamma_lo)` under even first digits, `b^(n gamma_hi)` under odd ones.
    #[serde(rename_all = "camelCase")]
    Alternating { gamma_lo: f64, gamma_hi: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", deny_unknown_fields)]
pub enum Dependence {
    Independent,
    /// Consecutive runs of `ceil(b^(-n delta))` cubes share one coin.
    BlockCoupled { delta: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomFractalModel {
    pub survival: Survival,
    pub dependence: Dependence,
    pub seed: u64,
}

impl RandomFractalModel {
    pub fn uniform(gamma: f64, seed: u64) -> RandomFractalModel {
        RandomFractalModel { survival: Survival::Uniform { gamma }, dependence: Dependence::Independent, seed }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |g: f64| g.is_finite() && g >= 0.0;
        let good = match self.survival {
            Survival::Uniform { gamma } => ok(gamma),
            Survival::Alternating { gamma_lo, gamma_hi } => ok(gamma_lo) && ok(gamma_hi),
        };
        if !good {
            return Err(Error::InvalidParameter("survival exponents must be finite and >= 0".into()));
        }
        if let Dependence::BlockCoupled { delta } = self.dependence {
            if !(delta.is_finite() && delta >= 0.0) {
                return Err(Error::InvalidParameter(format!("block exponent must be >= 0, got {delta}")));
            }
        }
        Ok(())
    }

    /// `P_n(Q)` for the cube with index `idx` at level `n`.
    pub fn probability(&self, tree: &CubeTree, n: u32, idx: u64) -> f64 {
        let gamma = match self.survival {
            Survival::Uniform { gamma } => gamma,
            Survival::Alternating { gamma_lo, gamma_hi } => {
                if n == 0 || tree.ancestor(CubeId { level: n, index: idx }, 1).index.is_multiple_of(2) {
                    gamma_lo
                } else {
                    gamma_hi
                }
            }
        };
        tree.b.powf(n as f64 * gamma)
    }

    /// Extreme exponents `(min gamma, max gamma)` over cubes.
    fn gamma_range(&self) -> (f64, f64) {
        match self.survival {
            Survival::Uniform { gamma } => (gamma, gamma),
            Survival::Alternating { gamma_lo, gamma_hi } => (gamma_lo.min(gamma_hi), gamma_lo.max(gamma_hi)),
        }
    }

    pub fn block_size(&self, tree: &CubeTree, n: u32) -> u64 {
        match self.dependence {
            Dependence::Independent => 1,
            Dependence::BlockCoupled { delta } => (tree.b.powf(-(n as f64) * delta) - 1e-9).ceil().max(1.0) as u64,
        }
    }
}

/// Survivors at level `n`. Coin `j` of level `n` is the `j`-th uniform of the
/// `(seed, n)` stream, where `j` is the cube index (or block index), so the
/// chunked parallel evaluation equals any sequential one.
pub fn simulate_level(model: &RandomFractalModel, tree: &CubeTree, n: u32) -> Result<CubeSet> {
    model.validate()?;
    if n > tree.max_level {
        return Err(Error::ResolutionExceeded { level: n, max: tree.max_level });
    }
    let total = tree.count(n);
    let block = model.block_size(tree, n);
    let chunks: Vec<(u64, u64)> = (0..total.div_ceil(CHUNK)).map(|c| (c * CHUNK, ((c + 1) * CHUNK).min(total))).collect();
    let hits: Vec<Vec<u64>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut rng = rng::stream(model.seed, COINS, n as u64);
            let mut coin_id = lo / block;
            rng.set_word_pos(2 * coin_id as u128);
            let mut u = rng::unit(rng.next_u64());
            let mut out = Vec::new();
            for idx in lo..hi {
                if idx / block != coin_id {
                    coin_id = idx / block;
                    u = rng::unit(rng.next_u64());
                }
                if u < model.probability(tree, n, idx) {
                    out.push(idx);
                }
            }
            out
        })
        .collect();
    let mut set = CubeSet::empty(tree, n)?;
    for idx in hits.into_iter().flatten() {
        set.insert_index_range(idx, idx + 1);
    }
    Ok(set)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LevelIndex {
    pub n: u32,
    /// `-max_Q log_{1/b} P_n(Q) / n`
    pub gamma1: f64,
    /// `-min_Q log_{1/b} P_n(Q) / n`
    pub gamma2: f64,
    /// `f(n, epsilon)`: cubes whose indicator covaries with a given one by at least `epsilon P P'`.
    pub f: u64,
    /// `log_{1/b} max(f, 1) / n`
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IndexReport {
    pub gamma1_hat: f64,
    pub gamma2_hat: f64,
    pub delta_hat: f64,
    pub epsilon: f64,
    pub per_level: Vec<LevelIndex>,
}

/// Indices computed from the survival rule itself. The hats are averages over
/// the upper half of `levels`, except `delta_hat` for block coupling, which
/// is its limit `delta`.
pub fn empirical_indices(model: &RandomFractalModel, tree: &CubeTree, levels: (u32, u32), epsilon: f64) -> Result<IndexReport> {
    model.validate()?;
    let (lo, hi) = (levels.0.max(1), levels.1);
    if lo > hi {
        return Err(Error::InvalidParameter(format!("empty level range {lo}..{hi}")));
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter("epsilon must be positive".into()));
    }
    let (g_min, g_max) = model.gamma_range();
    let inv = (1.0 / tree.b).ln();
    let per_level: Vec<LevelIndex> = (lo..=hi)
        .map(|n| {
            // Same-coin pairs have covariance P(1-P); the condition
            // P(1-P) >= eps P^2 is easiest to meet at the smallest P.
            let p = tree.b.powf(n as f64 * g_max);
            let f = if 1.0 - p >= epsilon * p { model.block_size(tree, n) } else { 0 };
            LevelIndex { n, gamma1: g_min, gamma2: g_max, f, delta: (f.max(1) as f64).ln() / inv / n as f64 }
        })
        .collect();
    let tail = &per_level[per_level.len() / 2..];
    let avg = |g: &dyn Fn(&LevelIndex) -> f64| tail.iter().map(g).sum::<f64>() / tail.len() as f64;
    let delta_hat = match model.dependence {
        Dependence::Independent => 0.0,
        Dependence::BlockCoupled { delta } => delta,
    };
    Ok(IndexReport { gamma1_hat: avg(&|l| l.gamma1), gamma2_hat: avg(&|l| l.gamma2), delta_hat, epsilon, per_level })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LevelRecord {
    pub n: u32,
    pub survivors: u64,
    pub expected: f64,
    /// Survivors meeting the finite-resolution limsup approximation.
    pub pieces: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct FractalReport {
    pub seed: u64,
    pub windows: Vec<(u64, u64)>,
    pub records: Vec<LevelRecord>,
    pub approx_measure: f64,
    /// Last level of the window at which the running intersection emptied.
    pub extinct_at: Option<u32>,
    pub dim: Option<DimReport>,
    pub fit_error: Option<String>,
    pub lower: f64,
    pub upper: f64,
    pub within_bounds: Option<bool>,
}

/// Simulates `A(lo..=hi)`, forms `∩_k ∪_{n in window k} A(n)` at level `hi`,
/// and fits the counts of level-n survivors meeting it (each piece counted at
/// its own level) over the levels of the last window.
pub fn fractal_dimension_experiment(
    model: &RandomFractalModel,
    tree: &CubeTree,
    levels: (u32, u32),
    windows: usize,
    tol: f64,
) -> Result<FractalReport> {
    let (lo, hi) = (levels.0.max(1), levels.1);
    if lo > hi || windows == 0 {
        return Err(Error::InvalidParameter("need a nonempty level range and at least one window".into()));
    }
    let sets: Vec<CubeSet> = (lo..=hi).map(|n| simulate_level(model, tree, n)).collect::<Result<_>>()?;
    let wins = geometric_windows(lo as u64, hi as u64, windows);
    let mut approx = CubeSet::full(tree, hi)?;
    let mut extinct_at = None;
    for &(a, b) in &wins {
        let mut u = CubeSet::empty(tree, hi)?;
        for n in a..=b {
            u.union_with(&sets[(n - lo as u64) as usize].refine(tree, hi)?);
        }
        approx.intersect_with(&u);
        if approx.is_empty() && extinct_at.is_none() {
            extinct_at = Some(b as u32);
        }
    }
    let records: Vec<LevelRecord> = sets
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let n = lo + i as u32;
            let expected = (0..tree.count(n).min(1 << 20)).map(|q| model.probability(tree, n, q)).sum::<f64>()
                * (tree.count(n) as f64 / tree.count(n).min(1 << 20) as f64);
            let pieces = s
                .iter()
                .filter(|&q| {
                    let (a, b) = tree.descendant_range(q, hi);
                    approx.any_in_range(a, b)
                })
                .count() as u64;
            LevelRecord { n, survivors: s.len(), expected, pieces }
        })
        .collect();
    let last = wins.last().copied().unwrap_or((lo as u64, hi as u64));
    let fit_levels: Vec<u32> = (last.0 as u32..=hi).collect();
    let counts: Vec<u64> = fit_levels.iter().map(|&n| records[(n - lo) as usize].pieces).collect();
    let (dim, fit_error) = if extinct_at.is_some() {
        (None, Some("extinct".to_string()))
    } else {
        match fit_counts(tree.b, &fit_levels, &counts) {
            Ok(d) => (Some(d), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let idx = empirical_indices(model, tree, (lo, hi), DEFAULT_EPSILON)?;
    let s = tree.space.s;
    let lower = (s - idx.gamma2_hat - idx.delta_hat).max(0.0);
    let upper = (s - idx.gamma1_hat).max(0.0);
    let within_bounds = dim.as_ref().map(|d| d.slope >= lower - tol && d.slope <= upper + tol);
    Ok(FractalReport {
        seed: model.seed,
        windows: wins,
        records,
        approx_measure: approx.measure(),
        extinct_at,
        dim,
        fit_error,
        lower,
        upper,
        within_bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::Space;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn sym_tree(level: u32) -> CubeTree {
        CubeTree::new(&Space::symbolic(2, 0.5).unwrap(), 0.5, level).unwrap()
    }

    #[test]
    fn trivial_probabilities() {
        let tree = sym_tree(10);
        assert!(simulate_level(&RandomFractalModel::uniform(0.0, 3), &tree, 10).unwrap().is_full());
        assert!(simulate_level(&RandomFractalModel::uniform(1e6, 3), &tree, 10).unwrap().is_empty());
    }

    #[test]
    fn survivor_count_matches_binomial() {
        let tree = sym_tree(12);
        let mut flagged = 0;
        for seed in 0..20 {
            let m = RandomFractalModel::uniform(0.5, seed);
            for n in 4..=12 {
                let p = 0.5f64.powf(n as f64 * 0.5);
                let total = tree.count(n) as f64;
                let z = (simulate_level(&m, &tree, n).unwrap().len() as f64 - total * p) / (total * p * (1.0 - p)).sqrt();
                assert!(z.abs() < 4.0, "seed {seed} n {n} z {z}");
                if z.abs() > 3.0 {
                    flagged += 1;
                }
            }
        }
        assert!(flagged <= 3);
    }

    #[test]
    fn matches_seek_based_coins() {
        let tree = CubeTree::new(&Space::symbolic(2, 0.5).unwrap(), 0.5, 18).unwrap();
        let m = RandomFractalModel::uniform(0.3, 11);
        let set = simulate_level(&m, &tree, 18).unwrap();
        for idx in (0..tree.count(18)).step_by(977) {
            let u = rng::uniform_at(11, COINS, 18, idx);
            assert_eq!(set.contains_index(idx), u < m.probability(&tree, 18, idx));
        }
    }

    #[test]
    fn blocks_are_all_or_nothing() {
        let tree = sym_tree(14);
        let m = RandomFractalModel { survival: Survival::Uniform { gamma: 0.4 }, dependence: Dependence::BlockCoupled { delta: 0.3 }, seed: 5 };
        for n in [6, 10, 14] {
            let block = m.block_size(&tree, n);
            assert_eq!(block, 2f64.powf(0.3 * n as f64).ceil() as u64);
            let set = simulate_level(&m, &tree, n).unwrap();
            for start in (0..tree.count(n)).step_by(block as usize) {
                let end = (start + block).min(tree.count(n));
                let c = (start..end).filter(|&i| set.contains_index(i)).count() as u64;
                assert!(c == 0 || c == end - start);
            }
        }
    }

    #[test]
    fn index_examples() {
        let tree = sym_tree(14);
        let r = empirical_indices(&RandomFractalModel::uniform(0.5, 0), &tree, (1, 14), DEFAULT_EPSILON).unwrap();
        assert!(r.per_level.iter().all(|l| l.gamma1 == 0.5 && l.gamma2 == 0.5 && l.f == 1));
        assert_eq!((r.gamma1_hat, r.gamma2_hat, r.delta_hat), (0.5, 0.5, 0.0));

        let m = RandomFractalModel { survival: Survival::Uniform { gamma: 0.5 }, dependence: Dependence::BlockCoupled { delta: 0.3 }, seed: 0 };
        let r = empirical_indices(&m, &tree, (1, 14), DEFAULT_EPSILON).unwrap();
        for l in &r.per_level {
            assert_eq!(l.f, 2f64.powf(0.3 * l.n as f64).ceil() as u64);
        }
        assert_eq!(r.delta_hat, 0.3);

        let alt = RandomFractalModel { survival: Survival::Alternating { gamma_lo: 0.2, gamma_hi: 0.6 }, dependence: Dependence::Independent, seed: 0 };
        let r = empirical_indices(&alt, &tree, (1, 14), DEFAULT_EPSILON).unwrap();
        assert!((r.gamma1_hat - 0.2).abs() < 1e-12 && (r.gamma2_hat - 0.6).abs() < 1e-12);
        // P = 1 gives no covariance at all.
        let r = empirical_indices(&RandomFractalModel::uniform(0.0, 0), &tree, (1, 4), DEFAULT_EPSILON).unwrap();
        assert!(r.per_level.iter().all(|l| l.f == 0));
    }

    #[test]
    fn dimension_examples() {
        let tree = sym_tree(14);
        let r = fractal_dimension_experiment(&RandomFractalModel::uniform(0.5, 1), &tree, (1, 14), 4, 0.1).unwrap();
        if r.extinct_at.is_none() {
            let d = r.dim.unwrap().slope;
            assert!((d - 0.5).abs() < 0.2, "{d}");
        }
        let r = fractal_dimension_experiment(&RandomFractalModel::uniform(0.0, 1), &tree, (1, 14), 4, 0.1).unwrap();
        assert!((r.dim.unwrap().slope - 1.0).abs() < 1e-12);

        let torus = CubeTree::new(&Space::torus(1).unwrap(), 0.5, 14).unwrap();
        let slopes: Vec<f64> = (0..5)
            .filter_map(|s| fractal_dimension_experiment(&RandomFractalModel::uniform(0.3, s), &torus, (1, 14), 4, 0.1).unwrap().dim)
            .map(|d| d.slope)
            .collect();
        let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
        assert!((mean - 0.7).abs() < 0.1, "{slopes:?}");
    }

    #[test]
    fn model_serde() {
        let m = RandomFractalModel { survival: Survival::Alternating { gamma_lo: 0.1, gamma_hi: 0.2 }, dependence: Dependence::BlockCoupled { delta: 0.3 }, seed: 4 };
        let j = serde_json::to_string(&m).unwrap();
        assert!(j.contains("\"gammaLo\""));
        assert_eq!(serde_json::from_str::<RandomFractalModel>(&j).unwrap(), m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn monotone_coupling(seed in any::<u64>(), g in 0.05f64..1.0, dg in 0.0f64..0.5) {
            let tree = sym_tree(12);
            let hi = simulate_level(&RandomFractalModel::uniform(g, seed), &tree, 12).unwrap();
            let lo = simulate_level(&RandomFractalModel::uniform(g + dg, seed), &tree, 12).unwrap();
            prop_assert!(lo.is_subset(&hi));
        }

        #[test]
        fn deterministic(seed in any::<u64>()) {
            let tree = sym_tree(17);
            let m = RandomFractalModel::uniform(0.4, seed);
            prop_assert!(simulate_level(&m, &tree, 17).unwrap() == simulate_level(&m, &tree, 17).unwrap());
        }
    }
}
