//! Limsup sets of anisotropic rectangles `prod_i B_i(x_{n,i}, r_n^{a_i})`.

use serde::{Deserialize, Serialize};

use crate::covering::{fit_pieces, geometric_windows_product, native_level, pieces_by_level, CenterProcess, RadiusSchedule};
use crate::cubes::{CubeTree, Mode};
use crate::dimension::DimReport;
use crate::netcontent::li_certificate;
use crate::spaces::Space;
use crate::{Error, Result};

/// One radius schedule shared by every factor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RectangleSpec {
    pub factors: Vec<Space>,
    pub a: Vec<f64>,
    pub schedule: RadiusSchedule,
}

/// Config form with factors given by name (`"torus1"`, `"symbolic(2,1/2)"`, ...).
/// There is deliberately no per-factor radius field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectangleConfig {
    pub factors: Vec<String>,
    pub a: Vec<f64>,
    pub schedule: RadiusSchedule,
}

impl RectangleConfig {
    pub fn into_spec(self) -> Result<RectangleSpec> {
        let factors = self.factors.iter().map(|f| f.parse::<Space>()).collect::<Result<_>>()?;
        let spec = RectangleSpec { factors, a: self.a, schedule: self.schedule };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ExponentReport {
    pub exponent: f64,
    /// 0-based index of the minimizing term (the first one on ties).
    pub argmin: usize,
    pub table: Vec<f64>,
}

impl RectangleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() || self.factors.len() != self.a.len() {
            return Err(Error::InvalidParameter(format!("{} factors but {} exponents", self.factors.len(), self.a.len())));
        }
        if !(self.a[0] >= 1.0) || self.a.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("a_1 must be >= 1, got {}", self.a[0])));
        }
        if self.a.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidParameter(format!("exponents must be non-decreasing, got {:?}", self.a)));
        }
        self.schedule.validate()
    }

    pub fn space(&self) -> Result<Space> {
        if self.factors.len() == 1 {
            Ok(self.factors[0].clone())
        } else {
            Space::product(self.factors.clone())
        }
    }

    /// Sides `r^{a_i}` spread over the flattened factors of each `B_i`.
    fn flat_radii(&self, r: f64) -> Vec<f64> {
        self.factors.iter().zip(&self.a).flat_map(|(f, a)| std::iter::repeat_n(r.powf(*a), f.factors().len())).collect()
    }
}

/// `min_i (sum_j s_j + a_i sum_{j<=i} s_j - sum_{j<=i} a_j s_j) / a_i`.
pub fn rectangle_exponent(spec: &RectangleSpec) -> Result<ExponentReport> {
    spec.validate()?;
    let s: Vec<f64> = spec.factors.iter().map(|f| f.s).collect();
    let total: f64 = s.iter().sum();
    let mut prefix_s = 0.0;
    let mut prefix_as = 0.0;
    let mut table = Vec::with_capacity(s.len());
    for (si, ai) in s.iter().zip(&spec.a) {
        prefix_s += si;
        prefix_as += ai * si;
        table.push((total + ai * prefix_s - prefix_as) / ai);
    }
    let argmin = (0..table.len()).fold(0, |best, i| if table[i] < table[best] { i } else { best });
    Ok(ExponentReport { exponent: table[argmin], argmin, table })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RectReport {
    pub seed: u64,
    pub exponent: ExponentReport,
    pub square_measure: f64,
    pub dim: Option<DimReport>,
    pub fit_error: Option<String>,
    pub within_tol: Option<bool>,
    pub certificate_t: f64,
    pub certificate_min_c: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RectConfig {
    pub n_max: u64,
    pub levels: (u32, u32),
    pub windows: usize,
    pub tol: f64,
    pub cert_depth: u32,
    pub min_square_measure: f64,
}

impl Default for RectConfig {
    fn default() -> Self {
        RectConfig { n_max: 100_000, levels: (4, 10), windows: 4, tol: 0.15, cert_depth: 4, min_square_measure: 0.99 }
    }
}

/// I.i.d. uniform centers on the product. Checks that the squares
/// `B(x_n, r_n)` cover at working resolution, then counts each rectangle at
/// the native level of its side `r_n^{a_i}` for the minimizing `i`.
pub fn rectangle_dimension_experiment(spec: &RectangleSpec, tree: &CubeTree, seed: u64, cfg: &RectConfig) -> Result<RectReport> {
    let exponent = rectangle_exponent(spec)?;
    crate::covering::check_range(&spec.schedule, cfg.n_max)?;
    let space = spec.space()?;
    if space != tree.space {
        return Err(Error::InvalidInput("tree is not built on the rectangle product space".into()));
    }
    let centers = CenterProcess::IidUniform.centers(&space, seed, cfg.n_max)?;
    let hi = cfg.levels.1;
    let square_radii = |r: f64| vec![r; tree.factors.len()];
    let squares = geometric_windows_product(tree, &centers, hi, cfg.windows, |n| square_radii(spec.schedule.radius(n)))?;
    let square_measure = squares.measure();
    if square_measure < cfg.min_square_measure {
        return Err(Error::PreconditionViolated(format!(
            "squares cover {square_measure:.4} < {} at level {hi}; the limsup of balls is not full",
            cfg.min_square_measure
        )));
    }
    let i_star = exponent.argmin;
    let levels: Vec<u32> = (cfg.levels.0..=hi).collect();
    let (pieces, complete) = pieces_by_level(
        tree,
        cfg.n_max,
        &levels,
        |n| native_level(tree.b, spec.schedule.radius(n).powf(spec.a[i_star])),
        |set, n| tree.insert_rect(set, &centers[n as usize - 1], &spec.flat_radii(spec.schedule.radius(n)), Mode::Outer),
    )?;
    let (dim, fit_error) = match fit_pieces(tree.b, &levels, &pieces, &complete) {
        Ok(d) => (Some(d), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let within_tol = dim.as_ref().map(|d| (d.slope - exponent.exponent).abs() <= cfg.tol);
    let certificate_t = 0.8 * exponent.exponent;
    let rects = geometric_windows_product(tree, &centers, hi, cfg.windows, |n| spec.flat_radii(spec.schedule.radius(n)))?;
    let certificate_min_c = if rects.is_empty() { None } else { Some(li_certificate(tree, &rects, certificate_t, cfg.cert_depth.min(hi))?.min_c) };
    Ok(RectReport { seed, exponent, square_measure, dim, fit_error, within_tol, certificate_t, certificate_min_c })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covering::{covering_dimension_experiment, CoverConfig};
    use crate::energy::{lambda_index, t_grid, InnerRule, LambdaQuery};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn t1() -> Space {
        Space::torus(1).unwrap()
    }

    fn spec(a: Vec<f64>, alpha: f64) -> RectangleSpec {
        RectangleSpec { factors: vec![t1(); a.len()], a, schedule: RadiusSchedule::power(alpha) }
    }

    #[test]
    fn exponent_examples() {
        let r = rectangle_exponent(&spec(vec![1.0, 2.0], 0.5)).unwrap();
        assert_eq!(r.table, vec![2.0, 1.5]);
        assert_eq!((r.exponent, r.argmin), (1.5, 1));
        assert_eq!(rectangle_exponent(&spec(vec![1.0, 1.0, 1.0], 0.5)).unwrap().exponent, 3.0);
        let same = rectangle_exponent(&spec(vec![2.5, 2.5], 0.5)).unwrap();
        assert!(same.table.iter().all(|v| (v - 0.8).abs() < 1e-12));
        assert!(matches!(rectangle_exponent(&spec(vec![2.0, 1.0], 0.5)), Err(Error::InvalidParameter(_))));
        assert!(matches!(rectangle_exponent(&spec(vec![0.5, 1.0], 0.5)), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn per_factor_radii_rejected() {
        let ok = r#"{"factors":["torus1","torus1"],"a":[1.0,2.0],"schedule":{"form":"power","alpha":0.5}}"#;
        let spec = serde_json::from_str::<RectangleConfig>(ok).unwrap().into_spec().unwrap();
        assert_eq!(rectangle_exponent(&spec).unwrap().exponent, 1.5);
        let text = r#"{"factors":["torus1"],"a":[1.0],"schedule":{"form":"power","alpha":1.0},"radii":[[1.0]]}"#;
        assert!(serde_json::from_str::<RectangleConfig>(text).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exponent_at_most_total(a in proptest::collection::vec(1.0f64..4.0, 1..5), s in proptest::collection::vec(0.2f64..3.0, 4)) {
            let mut a = a;
            a.sort_by(f64::total_cmp);
            let factors: Vec<Space> = a.iter().zip(&s).map(|(_, &si)| Space::symbolic(2, 0.5f64.powf(1.0 / si)).unwrap()).collect();
            let total: f64 = factors.iter().map(|f| f.s).sum();
            let r = rectangle_exponent(&RectangleSpec { factors, a: a.clone(), schedule: RadiusSchedule::power(1.0) }).unwrap();
            prop_assert!(r.exponent <= total + 1e-9);
            let all_one = a.iter().all(|&x| x == 1.0);
            prop_assert!(all_one == ((r.exponent - total).abs() < 1e-12));
        }

        #[test]
        fn permutation_invariance(a in proptest::collection::vec(1.0f64..4.0, 3), s in proptest::collection::vec(0.2f64..3.0, 3), perm in 0usize..6) {
            let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let canon = |pairs: Vec<(f64, f64)>| {
                let mut p = pairs;
                p.sort_by(|x, y| x.0.total_cmp(&y.0));
                let factors = p.iter().map(|(_, si)| Space::symbolic(2, 0.5f64.powf(1.0 / si)).unwrap()).collect();
                rectangle_exponent(&RectangleSpec { factors, a: p.iter().map(|x| x.0).collect(), schedule: RadiusSchedule::power(1.0) }).unwrap().exponent
            };
            let base: Vec<(f64, f64)> = a.iter().copied().zip(s.iter().copied()).collect();
            let permuted: Vec<(f64, f64)> = orders[perm].iter().map(|&i| base[i]).collect();
            prop_assert!(canon(base) == canon(permuted));
        }
    }

    #[test]
    fn lambda_agrees_with_formula() {
        let sp = spec(vec![1.0, 2.0], 0.5);
        let space = sp.space().unwrap();
        let tree = CubeTree::natural(&space, 10).unwrap();
        let q = LambdaQuery::new(RadiusSchedule::power(2.0), InnerRule::Rectangle { a: sp.a.clone() }, vec![10, 30, 100, 300, 1000], t_grid(2.0, 0.05));
        let lambda = lambda_index(&tree, &q).unwrap().lambda.unwrap();
        assert!((lambda - rectangle_exponent(&sp).unwrap().exponent).abs() <= 0.05 + 1e-9);
    }

    #[test]
    fn dimension_examples() {
        let sp = spec(vec![1.0, 2.0], 0.5);
        let tree = CubeTree::new(&sp.space().unwrap(), 0.5, 10).unwrap();
        let r = rectangle_dimension_experiment(&sp, &tree, 1, &RectConfig::default()).unwrap();
        let d = r.dim.as_ref().unwrap().slope;
        assert!((d - 1.5).abs() < 0.15, "{r:?}");
        assert!(r.square_measure >= 0.99);

        let sq = spec(vec![1.0, 1.0], 0.5);
        let cfg = RectConfig { levels: (3, 7), ..RectConfig::default() };
        let r = rectangle_dimension_experiment(&sq, &tree, 1, &cfg).unwrap();
        assert!((r.dim.unwrap().slope - 2.0).abs() < 0.15);
    }

    #[test]
    fn precondition_enforced() {
        let sp = spec(vec![1.0, 2.0], 2.0);
        let tree = CubeTree::new(&sp.space().unwrap(), 0.5, 10).unwrap();
        let got = rectangle_dimension_experiment(&sp, &tree, 1, &RectConfig::default());
        assert!(matches!(got, Err(Error::PreconditionViolated(_))));
    }

    #[test]
    fn one_factor_reduces_to_covering() {
        let sp = spec(vec![1.0], 2.0);
        let tree = CubeTree::new(&t1(), 0.5, 14).unwrap();
        let cfg = RectConfig { n_max: 50_000, levels: (6, 14), min_square_measure: 0.0, ..RectConfig::default() };
        let r = rectangle_dimension_experiment(&sp, &tree, 4, &cfg).unwrap();
        let c = covering_dimension_experiment(&tree, &CenterProcess::IidUniform, &sp.schedule, 4, &CoverConfig { n_max: 50_000, ..CoverConfig::default() }).unwrap();
        assert_eq!(r.dim, c.dim);
    }
}
