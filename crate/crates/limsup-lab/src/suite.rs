//! The acceptance battery. Each criterion yields a deterministic verdict and
//! details; wall-clock time is measured separately so that result records of
//! two runs compare byte for byte.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use limsup::covering::{
    covering_dimension_experiment, covering_lab, simulate_covering, union_measure_exact, windows_measure_exact, CenterProcess, CoverConfig,
    RadiusSchedule,
};
use limsup::cubes::{verify_axioms, CubeId, CubeSet, CubeTree};
use limsup::energy::{energy_bounds_check, energy_exact, energy_monte_carlo, lambda_index, t_grid, InnerRule, LambdaQuery, Region};
use limsup::netcontent::{li_certificate, net_content, net_content_bruteforce};
use limsup::randfractal::{fractal_dimension_experiment, RandomFractalModel};
use limsup::rng::{uniform_at, INSTANCES};
use limsup::spaces::{regularity_audit, Space};

use crate::{LabError, LabResult, Outcome};

/// Seed shared by every single-seed criterion.
const PIN: u64 = 20_240_601;

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub details: Value,
    #[serde(skip)]
    pub elapsed_ms: u128,
    #[serde(skip)]
    pub budget_ms: Option<u128>,
}

impl CriterionResult {
    pub fn within_time(&self) -> bool {
        self.budget_ms.is_none_or(|b| self.elapsed_ms <= b)
    }

    /// Verdict and time budget together.
    pub fn ok(&self) -> bool {
        self.pass && self.within_time()
    }
}

/// Budgets scaled down for `--quick`.
#[derive(Debug, Clone, Copy)]
pub struct Scale {
    pub quick: bool,
}

impl Scale {
    fn pick<T>(&self, full: T, quick: T) -> T {
        if self.quick {
            quick
        } else {
            full
        }
    }
}

type Verdict = LabResult<(bool, Value)>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget_s: Option<u64>,
    run: fn(Scale) -> Verdict,
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "regularity audit", budget_s: Some(5), run: c1_audit },
    Criterion { id: 2, name: "cube axioms", budget_s: Some(10), run: c2_axioms },
    Criterion { id: 3, name: "energy oracle", budget_s: Some(60), run: c3_energy },
    Criterion { id: 4, name: "net content oracle", budget_s: Some(10), run: c4_netcontent },
    Criterion { id: 5, name: "lambda recovery", budget_s: Some(120), run: c5_lambda },
    Criterion { id: 6, name: "random fractal dimension", budget_s: Some(120), run: c6_fractal },
    Criterion { id: 7, name: "covering dichotomy", budget_s: Some(180), run: c7_dichotomy },
    Criterion { id: 8, name: "covering dimension", budget_s: None, run: c8_cover_dim },
    Criterion { id: 9, name: "intersection lab", budget_s: Some(180), run: c9_intersect },
    Criterion { id: 10, name: "certificate trend", budget_s: Some(120), run: c10_certificate },
];

fn timed(id: u32, name: &'static str, budget_s: Option<u64>, f: impl FnOnce() -> Verdict) -> CriterionResult {
    let start = Instant::now();
    let (pass, details) = match f() {
        Ok(v) => v,
        Err(e) => (false, json!({"error": e.to_string()})),
    };
    CriterionResult { id, name, pass, details, elapsed_ms: start.elapsed().as_millis(), budget_ms: budget_s.map(|s| s as u128 * 1000) }
}

/// Criteria 1 to 10 at the given scale.
pub fn battery(scale: Scale) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|c| timed(c.id, c.name, c.budget_s, || (c.run)(scale))).collect()
}

/// The whole battery: criteria 1 to 10, then the determinism check, which
/// runs the quick battery twice and compares the records.
pub fn acceptance(scale: Scale) -> Vec<CriterionResult> {
    let mut out = battery(scale);
    out.push(timed(11, "determinism", None, c11_determinism));
    out
}

fn records(results: &[CriterionResult]) -> LabResult<Vec<String>> {
    results.iter().map(|r| serde_json::to_string(r).map_err(|e| LabError::Io(e.to_string()))).collect()
}

pub fn run_suite(name: &str, quick: bool) -> LabResult<Outcome> {
    if name != "acceptance" {
        return Err(LabError::Schema(format!("unknown suite `{name}` (available: acceptance)")));
    }
    let results = acceptance(Scale { quick });
    let mut out = Outcome::new();
    out.records = records(&results)?;
    let mut csv = String::from("id,name,pass,elapsedMs,budgetMs,withinTime\n");
    for r in &results {
        let budget = r.budget_ms.map(|b| b.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{},{budget},{}\n", r.id, r.name, r.pass, r.elapsed_ms, r.within_time()));
        out.say(line(r));
        out.ok &= r.ok();
    }
    out.csv = Some(csv);
    Ok(out)
}

/// `PASS 3 energy oracle (12.3 s)`
pub fn line(r: &CriterionResult) -> String {
    let mut s = format!("{} {:>2} {} ({:.1} s", if r.ok() { "PASS" } else { "FAIL" }, r.id, r.name, r.elapsed_ms as f64 / 1000.0);
    if let Some(b) = r.budget_ms {
        s.push_str(&format!(" of {} s", b / 1000));
    }
    s.push(')');
    if !r.pass {
        s.push_str(&format!(": {}", r.details));
    } else if !r.within_time() {
        s.push_str(": over the time budget");
    }
    s
}

fn u(stream: u64, counter: u64) -> f64 {
    uniform_at(PIN, INSTANCES, stream, counter)
}

fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) })
}

fn seeds(n: u64) -> Vec<u64> {
    (0..n).collect()
}

fn c1_audit(sc: Scale) -> Verdict {
    let samples = sc.pick(10_000, 2_000);
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["torus1", "torus2", "symbolic(2,1/2)", "cantor3"] {
        let space: Space = name.parse()?;
        match regularity_audit(&space, samples, PIN) {
            Ok(r) => details.push(json!({"space": name, "c": r.declared_c, "worstUpper": r.worst_upper, "worstLower": r.worst_lower})),
            Err(e) => {
                pass = false;
                details.push(json!({"space": name, "error": e.to_string()}));
            }
        }
    }
    Ok((pass, json!({"samples": samples, "spaces": details})))
}

fn c2_axioms(sc: Scale) -> Verdict {
    let levels = sc.pick(12, 8);
    let mut details = Vec::new();
    let mut pass = true;
    for (name, b) in [("torus1", 0.25), ("torus2", 0.25), ("symbolic(2,1/2)", 0.5)] {
        let space: Space = name.parse()?;
        let tree = CubeTree::new(&space, b, levels)?;
        let r = verify_axioms(&tree, levels, 2_000, PIN)?;
        pass &= r.core_ok();
        details.push(json!({"space": name, "b": b, "ok": r.core_ok(), "failures": r.failures}));
    }
    Ok((pass, json!({"levels": levels, "trees": details})))
}

fn c3_energy(sc: Scale) -> Verdict {
    let space = Space::torus(1)?;
    let tree = CubeTree::natural(&space, 60)?;
    let runs = sc.pick(100u64, 20);
    let pairs = sc.pick(1_000_000u64, 100_000);
    let need = runs - (runs / 100).max(1);
    let mut pass = true;
    let mut per_t = Vec::new();
    for t in [0.25, 0.5, 0.75] {
        let oracle = 2f64.powf(t) / (1.0 - t);
        let closed = energy_exact(&tree, &Region::Whole, t).map(|e| e.value);
        let agree: u64 = (0..runs)
            .into_par_iter()
            .map(|seed| energy_monte_carlo(&tree, &Region::Whole, t, pairs, seed).map(|e| ((e.value - oracle).abs() <= 3.0 * e.stderr) as u64))
            .collect::<limsup::Result<Vec<_>>>()?
            .into_iter()
            .sum();
        let closed_ok = closed.is_some_and(|c| (c - oracle).abs() <= 1e-12 * oracle);
        pass &= agree >= need && closed_ok;
        per_t.push(json!({"t": t, "oracle": oracle, "closedForm": closed, "agree": agree, "runs": runs}));
    }
    // two-sided bounds on random balls and random exponents
    let instances = sc.pick(100u64, 30);
    let trees: Vec<CubeTree> = ["torus1", "torus2", "symbolic(2,1/2)", "cantor3"]
        .iter()
        .map(|n| -> LabResult<CubeTree> {
            let sp: Space = n.parse()?;
            let level = if matches!(*n, "torus1" | "symbolic(2,1/2)") { 40 } else { 20 };
            Ok(CubeTree::natural(&sp, level)?)
        })
        .collect::<LabResult<_>>()?;
    let checks: Vec<(bool, String)> = (0..instances)
        .into_par_iter()
        .map(|i| {
            let tree = &trees[(u(1, i) * trees.len() as f64) as usize % trees.len()];
            let level = 1 + (u(2, i) * 6.0) as u32;
            let q = CubeId { level, index: (u(3, i) * tree.count(level) as f64) as u64 % tree.count(level) };
            let radius = tree.space.diam * (0.01 + 0.99 * u(4, i));
            let t = tree.space.s * (0.05 + 0.9 * u(5, i));
            let region = Region::Ball { center: tree.center(q), radius };
            match energy_bounds_check(tree, &region, t, 20_000, i) {
                Ok(b) => (b.lower_ok && b.upper_ok, String::new()),
                Err(e) => (false, format!("{} r={radius} t={t}: {e}", tree.space.name())),
            }
        })
        .collect();
    let bound_fail: Vec<&String> = checks.iter().filter(|(ok, _)| !ok).map(|(_, m)| m).collect();
    pass &= bound_fail.is_empty();
    Ok((pass, json!({"need": need, "pairs": pairs, "oracle": per_t, "boundInstances": instances, "boundFailures": bound_fail})))
}

fn c4_netcontent(sc: Scale) -> Verdict {
    let instances = sc.pick(200u64, 50);
    let trees: Vec<CubeTree> = [("torus1", 0.5), ("symbolic(2,1/2)", 0.5), ("cantor3", 1.0 / 3.0), ("torus2", 0.5)]
        .iter()
        .map(|(n, b)| Ok(CubeTree::new(&n.parse::<Space>()?, *b, 8)?))
        .collect::<LabResult<_>>()?;
    let mut mismatches = Vec::new();
    for i in 0..instances {
        let which = (u(10, i) * 4.0) as usize % 4;
        let tree = &trees[which];
        let max_depth = if tree.branching > 2 { 2 } else { 3 };
        let depth = 1 + (u(11, i) * max_depth as f64) as u32 % max_depth;
        let density = u(12, i);
        let cells: Vec<CubeId> =
            (0..tree.count(depth)).filter(|&j| u(1_000 + i, j) < density).map(|index| CubeId { level: depth, index }).collect();
        let f = CubeSet::from_cubes(tree, depth, cells)?;
        let t = tree.space.s * u(14, i);
        let dp = net_content(tree, &f, t, CubeId::ROOT)?.value;
        let bf = net_content_bruteforce(tree, &f, t, CubeId::ROOT)?;
        if dp != bf {
            mismatches.push(json!({"instance": i, "dp": dp, "bruteForce": bf}));
        }
    }
    // content of a whole cube is its own measure power
    let mut identity_fail = 0u64;
    let mut cubes = 0u64;
    for tree in &trees[..3] {
        let full = CubeSet::full(tree, 8)?;
        for t in [0.0, 0.3 * tree.space.s, 0.7 * tree.space.s, tree.space.s] {
            for n in 0..=8 {
                for q in tree.cubes_at(n) {
                    cubes += 1;
                    let expect = tree.cube_measure(n).powf(t / tree.space.s);
                    if net_content(tree, &full, t, q)?.value != expect {
                        identity_fail += 1;
                    }
                }
            }
        }
    }
    Ok((
        mismatches.is_empty() && identity_fail == 0,
        json!({"instances": instances, "mismatches": mismatches, "identityCubes": cubes, "identityFailures": identity_fail}),
    ))
}

fn c5_lambda(sc: Scale) -> Verdict {
    let step = 0.05;
    let budget = sc.pick(20_000, 5_000);
    let n_values = vec![10, 30, 100, 300, 1000];
    let run = |space: &str, inner: InnerRule| -> LabResult<Option<f64>> {
        let sp: Space = space.parse()?;
        let tree = CubeTree::natural(&sp, 30)?;
        let mut q = LambdaQuery::new(RadiusSchedule::power(2.0), inner, n_values.clone(), t_grid(sp.s, step));
        q.budget = budget;
        q.seed = PIN;
        Ok(lambda_index(&tree, &q)?.lambda)
    };
    let mut pass = true;
    let mut rows = Vec::new();
    for t0 in [0.25, 0.5, 0.75] {
        let l = run("torus1", InnerRule::BallPower { t0 })?;
        let ok = l.is_some_and(|l| (l - t0).abs() <= step + 1e-9);
        pass &= ok;
        rows.push(json!({"inner": "ball", "t0": t0, "lambda": l, "ok": ok}));
    }
    let l = run("product(torus1,torus1)", InnerRule::Rectangle { a: vec![1.0, 2.0] })?;
    let ok = l.is_some_and(|l| (l - 1.5).abs() <= step + 1e-9);
    pass &= ok;
    rows.push(json!({"inner": "rectangle", "a": [1.0, 2.0], "expected": 1.5, "lambda": l, "ok": ok}));
    Ok((pass, json!({"step": step, "rows": rows})))
}

fn c6_fractal(_sc: Scale) -> Verdict {
    let space = Space::symbolic(2, 0.5)?;
    let tree = CubeTree::new(&space, 0.5, 14)?;
    let reports = seeds(10)
        .into_par_iter()
        .map(|seed| fractal_dimension_experiment(&RandomFractalModel::uniform(0.5, seed), &tree, (1, 14), 3, 0.1))
        .collect::<limsup::Result<Vec<_>>>()?;
    let mut dims = Vec::new();
    let mut every = true;
    let mut per_seed = Vec::new();
    for r in &reports {
        let d = r.dim.as_ref().map(|d| d.slope);
        let ok = r.extinct_at.is_some() || d.is_some_and(|d| (0.30..=0.70).contains(&d));
        every &= ok;
        if let Some(d) = d {
            dims.push(d);
        }
        per_seed.push(json!({"seed": r.seed, "dim": d, "extinctAt": r.extinct_at, "ok": ok}));
    }
    let med = median(dims);
    let pass = every && med.is_some_and(|m| (0.40..=0.60).contains(&m));
    Ok((pass, json!({"median": med, "seeds": per_seed})))
}

fn c7_dichotomy(sc: Scale) -> Verdict {
    let space = Space::torus(1)?;
    let n_max = sc.pick(1_000_000u64, 100_000);
    let xs = CenterProcess::IidUniform.centers(&space, PIN, n_max)?;
    let tails: Vec<f64> =
        [100u64, 1_000, 10_000].iter().map(|&m| union_measure_exact(&xs, &RadiusSchedule::power(2.0), m, n_max)).collect::<limsup::Result<_>>()?;
    let decreasing = tails.windows(2).all(|w| w[1] < w[0]);
    let full = windows_measure_exact(&xs, &RadiusSchedule::power(1.0), 4)?;
    Ok((decreasing && full >= 0.95, json!({"nMax": n_max, "tailsAlpha2": tails, "windowsAlpha1": full})))
}

fn c8_cover_dim(sc: Scale) -> Verdict {
    let space = Space::torus(1)?;
    let tree = CubeTree::natural(&space, 14)?;
    let cfg = CoverConfig { n_max: sc.pick(1_000_000, 100_000), ..CoverConfig::default() };
    let schedule = RadiusSchedule::power(2.0);
    let mut pass = true;
    let mut rows = Vec::new();
    for (label, proc) in [("iid", CenterProcess::IidUniform), ("markov", CenterProcess::markov(0.5))] {
        let reports = seeds(10)
            .into_par_iter()
            .map(|seed| covering_dimension_experiment(&tree, &proc, &schedule, seed, &cfg))
            .collect::<limsup::Result<Vec<_>>>()?;
        let dims: Vec<f64> = reports.iter().filter_map(|r| r.dim.as_ref().map(|d| d.slope)).collect();
        let med = median(dims.clone());
        pass &= med.is_some_and(|m| (0.40..=0.60).contains(&m));
        rows.push(json!({"centers": label, "median": med, "dims": dims}));
    }
    Ok((pass, json!({"nMax": cfg.n_max, "processes": rows})))
}

fn c9_intersect(sc: Scale) -> Verdict {
    let space = Space::torus(1)?;
    let tree = CubeTree::natural(&space, 14)?;
    let n_max = sc.pick(1_000_000u64, 100_000);
    let schedule = RadiusSchedule::power(2.0);
    let reports = seeds(10)
        .into_par_iter()
        .map(|seed| {
            let xs = CenterProcess::IidUniform.centers(&space, seed, n_max)?;
            covering_lab(&tree, &xs, &schedule, (6, 14), 3, seed, 0.5, 0.15)
        })
        .collect::<limsup::Result<Vec<_>>>()?;
    let above = reports.iter().filter(|r| r.all_above).count();
    let slopes: Vec<Vec<Option<f64>>> = reports.iter().map(|r| r.rows.iter().map(|row| row.dim.as_ref().map(|d| d.slope)).collect()).collect();
    Ok((above >= 8, json!({"seedsAbove": above, "of": reports.len(), "prefixSlopes": slopes})))
}

fn c10_certificate(sc: Scale) -> Verdict {
    let space = Space::torus(1)?;
    let tree = CubeTree::natural(&space, 12)?;
    let n_max = sc.pick(1_000_000u64, 100_000);
    let schedule = RadiusSchedule::power(2.0);
    let xs = CenterProcess::IidUniform.centers(&space, PIN, n_max)?;
    let mut mins = Vec::new();
    for level in [8, 12] {
        let run = simulate_covering(&tree, &xs, &schedule, level, 4)?;
        mins.push(li_certificate(&tree, &run.approx, 0.4, 6)?.min_c);
    }
    let pass = mins[1] >= 0.5 * mins[0];
    Ok((pass, json!({"nMax": n_max, "t": 0.4, "depth": 6, "minC8": mins[0], "minC12": mins[1]})))
}

fn c11_determinism() -> Verdict {
    let first = records(&battery(Scale { quick: true }))?;
    let second = records(&battery(Scale { quick: true }))?;
    let differing: Vec<usize> = first.iter().zip(&second).enumerate().filter(|(_, (a, b))| a != b).map(|(i, _)| i + 1).collect();
    Ok((first.len() == second.len() && differing.is_empty(), json!({"records": first.len(), "differing": differing})))
}
