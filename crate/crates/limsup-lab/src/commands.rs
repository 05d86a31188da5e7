//! One function per subcommand. Each validates its merged parameters, runs
//! every seed (in parallel, results kept in seed order) and fills an `Outcome`.

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use limsup::covering::{covering_dimension_experiment, covering_lab, s0, simulate_covering, CenterProcess, CoverConfig, RadiusSchedule};
use limsup::cubes::{natural_ratio, verify_axioms, CubeId, CubeTree};
use limsup::dimension::dim_csv;
use limsup::energy::{energy_bounds_check, energy_exact, energy_monte_carlo, lambda_index, ratio_csv, t_grid, InnerRule, LambdaQuery, Region};
use limsup::netcontent::{li_certificate, net_content};
use limsup::randfractal::{fractal_dimension_experiment, Dependence, RandomFractalModel, Survival};
use limsup::rectangles::{rectangle_dimension_experiment, rectangle_exponent, RectConfig, RectangleSpec};
use limsup::spaces::{parse_ratio, regularity_audit, Space};

use crate::{parse_levels, parse_list, LabError, LabResult, Outcome, Settings};

fn per_seed<T: Send>(seeds: &[u64], f: impl Fn(u64) -> LabResult<T> + Sync) -> LabResult<Vec<(u64, T)>> {
    seeds.par_iter().map(|&s| f(s).map(|v| (s, v))).collect()
}

fn space_of(st: &Settings, default: &str) -> LabResult<Space> {
    Ok(st.space.as_deref().unwrap_or(default).parse::<Space>()?)
}

/// Tree from `--b`/`--max-level`; without `--max-level` the deepest level
/// up to `default_level` that the space supports is used.
fn tree_of(st: &Settings, space: &Space, default_level: u32) -> LabResult<CubeTree> {
    let b = match &st.b {
        Some(text) => parse_ratio(text).ok_or_else(|| LabError::Schema(format!("b: cannot parse `{text}`")))?,
        None => natural_ratio(space),
    };
    if let Some(level) = st.max_level {
        return Ok(CubeTree::new(space, b, level)?);
    }
    let mut level = default_level;
    loop {
        match CubeTree::new(space, b, level) {
            Ok(t) => return Ok(t),
            Err(limsup::Error::ResolutionExceeded { .. }) if level > 1 => level -= 1,
            Err(e) => return Err(e.into()),
        }
    }
}

fn median(xs: &mut [f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    Some(if xs.len() % 2 == 1 { xs[m] } else { 0.5 * (xs[m - 1] + xs[m]) })
}

fn fmt(x: f64) -> String {
    format!("{:.4}", x).trim_end_matches('0').trim_end_matches('.').to_string()
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AuditArgs {
    /// Random balls per audit.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Levels checked for the cube axioms.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<u32>,
}

pub fn audit(st: &Settings, a: &AuditArgs) -> LabResult<Outcome> {
    let space = space_of(st, "torus1")?;
    let samples = a.samples.unwrap_or(if st.quick { 2_000 } else { 10_000 });
    // binary circle cells have no nested centers, so tori are audited with quartic cells
    let mut st = st.clone();
    if st.b.is_none() && natural_ratio(&space) == 0.5 {
        st.b = Some("1/4".into());
    }
    let tree = tree_of(&st, &space, a.levels.unwrap_or(8))?;
    let levels = a.levels.unwrap_or(8).min(tree.max_level);
    let runs = per_seed(&st.seeds, |seed| {
        let audit = regularity_audit(&space, samples, seed)?;
        let axioms = verify_axioms(&tree, levels, samples.min(2_000), seed)?;
        Ok((audit, axioms))
    })?;
    let mut out = Outcome::new();
    for (seed, (audit, axioms)) in &runs {
        out.record(&json!({"kind": "audit", "seed": seed, "audit": audit, "axioms": axioms, "axiomsOk": axioms.core_ok()}))?;
        out.ok &= axioms.core_ok();
        out.say(format!(
            "seed={seed} space={} C={} worst={} axioms(b={}, levels<={levels}) {}",
            audit.space,
            fmt(audit.declared_c),
            fmt(audit.worst()),
            fmt(tree.b),
            verdict(axioms.core_ok())
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EnergyArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Ball radius around the root center; the whole space when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    /// Monte Carlo pairs.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    /// `auto` (closed form when available) or `mc`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

pub fn energy(st: &Settings, a: &EnergyArgs) -> LabResult<Outcome> {
    let space = space_of(st, "torus1")?;
    let tree = tree_of(st, &space, 60)?;
    let t = a.t.unwrap_or(0.5);
    let budget = a.budget.unwrap_or(if st.quick { 100_000 } else { 1_000_000 });
    let force_mc = match a.method.as_deref().unwrap_or("auto") {
        "auto" => false,
        "mc" => true,
        other => return Err(LabError::Schema(format!("method: expected `auto` or `mc`, got `{other}`"))),
    };
    let region = match a.radius {
        Some(r) => Region::Ball { center: tree.x0(), radius: r },
        None => Region::Whole,
    };
    let exact = energy_exact(&tree, &region, t).map(|e| e.value);
    let runs = per_seed(&st.seeds, |seed| {
        let est = if force_mc { Some(energy_monte_carlo(&tree, &region, t, budget, seed)?) } else { None };
        let bounds = energy_bounds_check(&tree, &region, t, budget, seed)?;
        Ok((est, bounds))
    })?;
    let mut out = Outcome::new();
    for (seed, (est, bounds)) in &runs {
        let z = match (est, exact) {
            (Some(e), Some(x)) if e.stderr > 0.0 => Some((e.value - x) / e.stderr),
            _ => None,
        };
        out.record(&json!({"kind": "energy", "seed": seed, "t": t, "closedForm": exact, "monteCarlo": est, "z": z, "bounds": bounds}))?;
        let ok = bounds.lower_ok && bounds.upper_ok && z.is_none_or(|z| z.abs() <= 3.0);
        out.ok &= ok;
        let mut line = format!("seed={seed} t={t} energy={} bounds=[{}, {}]", fmt(bounds.value), fmt(bounds.lower), fmt(bounds.upper));
        if let Some(e) = est {
            line.push_str(&format!(" mc={}±{}", fmt(e.value), fmt(e.stderr)));
        }
        if let Some(z) = z {
            line.push_str(&format!(" z={}", fmt(z)));
        }
        out.say(format!("{line} {}", verdict(ok)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LambdaArgs {
    /// Radii `r_n = n^-alpha`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Inner balls `B(xi_n, r_n^(s/t0))`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    /// Inner rectangles with exponents, e.g. 1,2 (over torus1 factors by default).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    /// Comma-separated indices n.
    #[arg(long = "n-values")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_values: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
}

pub fn lambda(st: &Settings, a: &LambdaArgs) -> LabResult<Outcome> {
    let (inner, default_space) = match (&a.a, a.t0) {
        (Some(_), Some(_)) => return Err(LabError::Schema("give either t0 or a, not both".into())),
        (Some(list), None) => {
            let ex: Vec<f64> = parse_list(list, "a")?;
            let sp = vec!["torus1"; ex.len()].join(",");
            (InnerRule::Rectangle { a: ex }, if ex_len_one(list) { "torus1".to_string() } else { format!("product({sp})") })
        }
        (None, t0) => (InnerRule::BallPower { t0: t0.unwrap_or(0.5) }, "torus1".to_string()),
    };
    let space = space_of(st, &default_space)?;
    let tree = tree_of(st, &space, 60)?;
    let n_values: Vec<u64> = parse_list(a.n_values.as_deref().unwrap_or("10,30,100,300,1000"), "n-values")?;
    let step = a.step.unwrap_or(0.05);
    if step.is_nan() || step <= 0.0 {
        return Err(LabError::Schema("step must be positive".into()));
    }
    let schedule = RadiusSchedule::power(a.alpha.unwrap_or(2.0));
    let budget = a.budget.unwrap_or(if st.quick { 5_000 } else { 20_000 });
    let runs = per_seed(&st.seeds, |seed| {
        let mut q = LambdaQuery::new(schedule.clone(), inner.clone(), n_values.clone(), t_grid(space.s, step));
        q.budget = budget;
        q.seed = seed;
        Ok(lambda_index(&tree, &q)?)
    })?;
    let mut out = Outcome::new();
    let mut csv = String::new();
    for (seed, rep) in &runs {
        out.record(&json!({"kind": "lambda", "seed": seed, "inner": inner, "report": rep}))?;
        let body = ratio_csv(&rep.rows);
        if csv.is_empty() {
            csv.push_str("seed,");
            csv.push_str(body.lines().next().unwrap_or(""));
            csv.push('\n');
        }
        for line in body.lines().skip(1) {
            csv.push_str(&format!("{seed},{line}\n"));
        }
        match rep.lambda {
            Some(l) => out.say(format!("seed={seed} lambda={}", fmt(l))),
            None => {
                out.ok = false;
                out.say(format!("seed={seed} lambda=undetermined (no bounded exponent on the grid)"));
            }
        }
    }
    out.csv = Some(csv);
    Ok(out)
}

fn ex_len_one(list: &str) -> bool {
    !list.contains(',')
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct NetcontentArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Deepest cube level of the certificate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<u32>,
    /// Resolution of the covering approximation.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmax: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<usize>,
}

pub fn netcontent(st: &Settings, a: &NetcontentArgs) -> LabResult<Outcome> {
    let space = space_of(st, "torus1")?;
    let level = a.level.unwrap_or(12);
    let tree = tree_of(st, &space, level)?;
    let level = level.min(tree.max_level);
    let t = a.t.unwrap_or(0.4);
    let depth = a.depth.unwrap_or(6);
    let schedule = RadiusSchedule::power(a.alpha.unwrap_or(2.0));
    let nmax = a.nmax.unwrap_or(if st.quick { 100_000 } else { 1_000_000 });
    let windows = a.windows.unwrap_or(4);
    let runs = per_seed(&st.seeds, |seed| {
        let xs = CenterProcess::IidUniform.centers(&space, seed, nmax)?;
        let run = simulate_covering(&tree, &xs, &schedule, level, windows)?;
        if run.approx.is_empty() {
            return Err(LabError::Precondition(format!("seed {seed}: empty covering approximation")));
        }
        let cert = li_certificate(&tree, &run.approx, t, depth)?;
        let root = net_content(&tree, &run.approx, t, CubeId::ROOT)?;
        Ok((cert, root.value, run.approx.measure()))
    })?;
    let mut out = Outcome::new();
    let mut csv = String::from("seed,bin,count\n");
    for (seed, (cert, root, measure)) in &runs {
        out.record(&json!({"kind": "netcontent", "seed": seed, "level": level, "measure": measure, "netContent": root, "certificate": cert}))?;
        for (i, c) in cert.histogram.iter().enumerate() {
            csv.push_str(&format!("{seed},{i},{c}\n"));
        }
        out.say(format!("seed={seed} t={t} level={level} netContent={} minC={} at {}", fmt(*root), fmt(cert.min_c), if cert.argmin_cube.is_empty() { "root" } else { &cert.argmin_cube }));
    }
    out.csv = Some(csv);
    Ok(out)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FractalArgs {
    /// Uniform survival `P_n = b^(n gamma)`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Cube-dependent survival: exponent under even first digits.
    #[arg(long = "gamma-lo")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_lo: Option<f64>,
    #[arg(long = "gamma-hi")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_hi: Option<f64>,
    /// Block coupling exponent; independent coins when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

pub fn fractal(st: &Settings, a: &FractalArgs) -> LabResult<Outcome> {
    let space = space_of(st, "symbolic(2,1/2)")?;
    let levels = parse_levels(a.levels.as_deref().unwrap_or("1:14"))?;
    let tree = tree_of(st, &space, levels.1)?;
    let survival = match (a.gamma, a.gamma_lo, a.gamma_hi) {
        (g, None, None) => Survival::Uniform { gamma: g.unwrap_or(0.5) },
        (None, Some(lo), Some(hi)) => Survival::Alternating { gamma_lo: lo, gamma_hi: hi },
        _ => return Err(LabError::Schema("give gamma, or both gamma-lo and gamma-hi".into())),
    };
    let dependence = match a.delta {
        Some(d) => Dependence::BlockCoupled { delta: d },
        None => Dependence::Independent,
    };
    let windows = a.windows.unwrap_or(3);
    let tol = a.tol.unwrap_or(0.1);
    let runs = per_seed(&st.seeds, |seed| {
        let model = RandomFractalModel { survival: survival.clone(), dependence: dependence.clone(), seed };
        Ok(fractal_dimension_experiment(&model, &tree, levels, windows, tol)?)
    })?;
    let mut out = Outcome::new();
    let mut csv = String::from("seed,n,survivors,expected,pieces\n");
    let mut slopes = Vec::new();
    for (seed, rep) in &runs {
        for r in &rep.records {
            out.record(&json!({"kind": "fractalLevel", "seed": seed, "n": r.n, "survivors": r.survivors, "expected": r.expected, "pieces": r.pieces}))?;
            csv.push_str(&format!("{seed},{},{},{},{}\n", r.n, r.survivors, r.expected, r.pieces));
        }
        out.record(&json!({"kind": "fractal", "seed": seed, "report": {
            "windows": rep.windows, "approxMeasure": rep.approx_measure, "extinctAt": rep.extinct_at,
            "dim": rep.dim, "fitError": rep.fit_error, "lower": rep.lower, "upper": rep.upper, "withinBounds": rep.within_bounds,
        }}))?;
        match (&rep.dim, rep.extinct_at) {
            (_, Some(l)) => out.say(format!("seed={seed} extinct at level {l}")),
            (Some(d), None) => {
                slopes.push(d.slope);
                out.say(format!(
                    "seed={seed} dim={} bounds=[{}, {}] ± {} {}",
                    fmt(d.slope),
                    fmt(rep.lower),
                    fmt(rep.upper),
                    fmt(tol),
                    verdict(rep.within_bounds == Some(true))
                ));
                out.ok &= rep.within_bounds == Some(true);
            }
            (None, None) => {
                out.ok = false;
                out.say(format!("seed={seed} no estimate: {}", rep.fit_error.clone().unwrap_or_default()));
            }
        }
    }
    if let Some(m) = median(&mut slopes) {
        out.say(format!("median dim={} over {} surviving seeds", fmt(m), slopes.len()));
    }
    out.csv = Some(csv);
    Ok(out)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CoverArgs {
    /// Radii `n^-alpha` (or `n^-alpha (ln n)^-beta` with --beta).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Refresh probability of the mixing Markov centers; i.i.d. when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markov: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmax: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Certificate depth.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<u32>,
}

fn schedule_of(alpha: Option<f64>, beta: Option<f64>) -> LabResult<RadiusSchedule> {
    let alpha = alpha.unwrap_or(2.0);
    let s = match beta {
        Some(beta) => RadiusSchedule::LogPower { alpha, beta },
        None => RadiusSchedule::power(alpha),
    };
    s.validate()?;
    Ok(s)
}

fn process_of(markov: Option<f64>) -> CenterProcess {
    match markov {
        Some(p) => CenterProcess::markov(p),
        None => CenterProcess::IidUniform,
    }
}

pub fn cover(st: &Settings, a: &CoverArgs) -> LabResult<Outcome> {
    let space = space_of(st, "torus1")?;
    let levels = parse_levels(a.levels.as_deref().unwrap_or("6:14"))?;
    let tree = tree_of(st, &space, levels.1)?;
    let schedule = schedule_of(a.alpha, a.beta)?;
    let proc = process_of(a.markov);
    proc.validate(&space)?;
    let crit = s0(&schedule)?;
    let cfg = CoverConfig {
        n_max: a.nmax.unwrap_or(if st.quick { 100_000 } else { 1_000_000 }),
        levels,
        windows: a.windows.unwrap_or(4),
        tol: a.tol.unwrap_or(0.1),
        cert_depth: a.depth.unwrap_or(6),
    };
    let runs = per_seed(&st.seeds, |seed| Ok(covering_dimension_experiment(&tree, &proc, &schedule, seed, &cfg)?))?;
    let mut out = Outcome::new();
    out.say(format!("s0={} target=min(s, s0)={}", fmt(crit.value), fmt(space.s.min(crit.value))));
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for (seed, rep) in &runs {
        out.record(&json!({"kind": "cover", "seed": seed, "process": proc, "schedule": schedule, "report": rep}))?;
        match &rep.dim {
            Some(d) => {
                slopes.push(d.slope);
                rows.push((seed.to_string(), 0, d.clone()));
                let trend: Vec<String> = rep.certificate_trend.iter().map(|(l, c)| format!("{l}:{}", fmt(*c))).collect();
                out.say(format!(
                    "seed={seed} dim={} ± {} (target {} ± {}) {} approx measure={} minC[{}]",
                    fmt(d.slope),
                    fmt(d.stderr),
                    fmt(rep.target),
                    fmt(cfg.tol),
                    verdict(rep.within_tol == Some(true)),
                    fmt(rep.approx_measure),
                    trend.join(" ")
                ));
                out.ok &= rep.within_tol == Some(true);
            }
            None => {
                out.ok = false;
                out.say(format!("seed={seed} no estimate: {}", rep.fit_error.clone().unwrap_or_default()));
            }
        }
    }
    if let Some(m) = median(&mut slopes) {
        out.say(format!("median dim={} over {} seeds", fmt(m), slopes.len()));
    }
    out.csv = Some(dim_csv(&rows));
    Ok(out)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RectArgs {
    /// Factor spaces, e.g. torus1,torus1 (default: one torus1 per exponent).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factors: Option<String>,
    /// Non-decreasing exponents starting at >= 1, e.g. 1,2.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<String>,
    /// Base radii `n^-alpha`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmax: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub windows: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Evaluate the exponent only, without simulating.
    #[arg(long = "exponent-only", num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exponent_only: Option<bool>,
}

pub fn rect(st: &Settings, a: &RectArgs) -> LabResult<Outcome> {
    let ex: Vec<f64> = parse_list(a.a.as_deref().unwrap_or("1,2"), "a")?;
    let names: Vec<String> = match &a.factors {
        Some(f) => f.split(',').map(|x| x.trim().to_string()).collect(),
        None => vec!["torus1".to_string(); ex.len()],
    };
    let factors: Vec<Space> = names.iter().map(|n| n.parse::<Space>()).collect::<Result<_, _>>()?;
    let spec = RectangleSpec { factors, a: ex, schedule: RadiusSchedule::power(a.alpha.unwrap_or(0.5)) };
    let exponent = rectangle_exponent(&spec)?;
    let mut out = Outcome::new();
    let table: Vec<String> = exponent.table.iter().map(|v| fmt(*v)).collect();
    out.say(format!("exponent={} argmin i={} table=[{}]", fmt(exponent.exponent), exponent.argmin + 1, table.join(", ")));
    if a.exponent_only == Some(true) {
        out.record(&json!({"kind": "rectExponent", "spec": spec, "exponent": exponent}))?;
        return Ok(out);
    }
    let levels = parse_levels(a.levels.as_deref().unwrap_or("4:10"))?;
    let space = spec.space()?;
    let tree = tree_of(&Settings { space: None, ..st.clone() }, &space, levels.1)?;
    let cfg = RectConfig {
        n_max: a.nmax.unwrap_or(if st.quick { 20_000 } else { 100_000 }),
        levels,
        windows: a.windows.unwrap_or(4),
        tol: a.tol.unwrap_or(0.15),
        ..RectConfig::default()
    };
    let runs = per_seed(&st.seeds, |seed| Ok(rectangle_dimension_experiment(&spec, &tree, seed, &cfg)?))?;
    let mut rows = Vec::new();
    for (seed, rep) in &runs {
        out.record(&json!({"kind": "rect", "seed": seed, "spec": spec, "report": rep}))?;
        match &rep.dim {
            Some(d) => {
                rows.push((seed.to_string(), 0, d.clone()));
                out.say(format!(
                    "seed={seed} dim={} (exponent {} ± {}) {} squares measure={}",
                    fmt(d.slope),
                    fmt(exponent.exponent),
                    fmt(cfg.tol),
                    verdict(rep.within_tol == Some(true)),
                    fmt(rep.square_measure)
                ));
                out.ok &= rep.within_tol == Some(true);
            }
            None => {
                out.ok = false;
                out.say(format!("seed={seed} no estimate: {}", rep.fit_error.clone().unwrap_or_default()));
            }
        }
    }
    out.csv = Some(dim_csv(&rows));
    Ok(out)
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct IntersectArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmax: Option<u64>,
    /// Number of random isometries.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<String>,
    /// Reference exponent; defaults to min(s, s0).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

pub fn intersect(st: &Settings, a: &IntersectArgs) -> LabResult<Outcome> {
    let space = space_of(st, "torus1")?;
    let levels = parse_levels(a.levels.as_deref().unwrap_or("6:14"))?;
    let tree = tree_of(st, &space, levels.1)?;
    let schedule = schedule_of(a.alpha, None)?;
    let t = a.t.unwrap_or(space.s.min(s0(&schedule)?.value));
    let tol = a.tol.unwrap_or(0.15);
    let maps = a.maps.unwrap_or(3);
    let nmax = a.nmax.unwrap_or(if st.quick { 100_000 } else { 1_000_000 });
    let runs = per_seed(&st.seeds, |seed| {
        let xs = CenterProcess::IidUniform.centers(&space, seed, nmax)?;
        Ok(covering_lab(&tree, &xs, &schedule, levels, maps, seed, t, tol)?)
    })?;
    let mut out = Outcome::new();
    let mut rows = Vec::new();
    let mut passing = 0;
    for (seed, rep) in &runs {
        out.record(&json!({"kind": "intersect", "seed": seed, "report": rep}))?;
        let slopes: Vec<String> = rep
            .rows
            .iter()
            .map(|r| match &r.dim {
                Some(d) => {
                    rows.push((seed.to_string(), r.k, d.clone()));
                    format!("k={}:{}", r.k, fmt(d.slope))
                }
                None => format!("k={}:undefined", r.k),
            })
            .collect();
        passing += rep.all_above as usize;
        out.say(format!("seed={seed} {} (>= {} - {}) {}", slopes.join(" "), fmt(t), fmt(tol), verdict(rep.all_above)));
    }
    out.say(format!("{passing}/{} seeds keep every prefix above {}", runs.len(), fmt(t - tol)));
    out.ok = passing == runs.len();
    out.csv = Some(dim_csv(&rows));
    Ok(out)
}
