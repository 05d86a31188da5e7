//! Batch driver for the limsup workbench: config ingestion, per-seed runs,
//! JSON-lines records, CSV plot data and the acceptance suite.

pub mod commands;
pub mod suite;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use commands::{
    AuditArgs, CoverArgs, EnergyArgs, FractalArgs, IntersectArgs, LambdaArgs, NetcontentArgs, RectArgs,
};

#[derive(Debug, Parser)]
#[command(name = "limsup-lab", version, about = "Experiments on limsup sets, energies and net contents")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each can also be set in the config file.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Global {
    /// Flat key-value TOML file; flags override its values.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// First seed.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<u64>,
    /// JSON-lines output; CSV goes next to it with a .csv extension.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Reduced budgets.
    #[arg(long, global = true)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub quick: bool,
    /// Space descriptor such as torus1, torus2, cantor3, "symbolic(2,1/2)".
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub space: Option<String>,
    /// Cube ratio, e.g. 1/4.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<String>,
    /// Deepest cube level (default: what the command needs, capped by the space).
    #[arg(long = "max-level", global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_level: Option<u32>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Regularity audit of the measure and the cube axioms.
    Audit(AuditArgs),
    /// t-energy of a region with the two-sided bound check.
    Energy(EnergyArgs),
    /// Energy-ratio index of a sequence of inner sets.
    Lambda(LambdaArgs),
    /// Net-content certificate of a covering approximation.
    Netcontent(NetcontentArgs),
    /// Limsup random fractal simulation.
    Fractal(FractalArgs),
    /// Random covering set experiment.
    Cover(CoverArgs),
    /// Limsup of rectangles.
    Rect(RectArgs),
    /// Intersection lab on a covering set.
    Intersect(IntersectArgs),
    /// Named experiment battery.
    Suite(SuiteArgs),
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Command::Audit(_) => "audit",
            Command::Energy(_) => "energy",
            Command::Lambda(_) => "lambda",
            Command::Netcontent(_) => "netcontent",
            Command::Fractal(_) => "fractal",
            Command::Cover(_) => "cover",
            Command::Rect(_) => "rect",
            Command::Intersect(_) => "intersect",
            Command::Suite(_) => "suite",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SuiteArgs {
    /// Suite name; only "acceptance" exists.
    pub name: String,
}

#[derive(Debug)]
pub enum LabError {
    /// Bad config, flag or parameter: exit code 2.
    Schema(String),
    /// The experiment refused or its precondition failed: exit code 3.
    Precondition(String),
    Io(String),
}

impl std::fmt::Display for LabError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabError::Schema(m) => write!(f, "invalid configuration: {m}"),
            LabError::Precondition(m) => write!(f, "experiment failed: {m}"),
            LabError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for LabError {}

impl LabError {
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Schema(_) => 2,
            LabError::Precondition(_) => 3,
            LabError::Io(_) => 1,
        }
    }
}

impl From<limsup::Error> for LabError {
    fn from(e: limsup::Error) -> Self {
        use limsup::Error as E;
        match e {
            E::InvalidInput(_) | E::InvalidParameter(_) | E::InvalidMap(_) => LabError::Schema(e.to_string()),
            other => LabError::Precondition(other.to_string()),
        }
    }
}

pub type LabResult<T> = std::result::Result<T, LabError>;

/// What a run produced. `records` are JSON lines sorted by seed.
#[derive(Debug, Default, Clone)]
pub struct Outcome {
    pub records: Vec<String>,
    pub csv: Option<String>,
    pub summary: Vec<String>,
    /// False when a verdict failed; the binary exits 1.
    pub ok: bool,
}

impl Outcome {
    pub fn new() -> Outcome {
        Outcome { ok: true, ..Outcome::default() }
    }

    pub fn record<T: Serialize>(&mut self, value: &T) -> LabResult<()> {
        self.records.push(serde_json::to_string(value).map_err(|e| LabError::Io(e.to_string()))?);
        Ok(())
    }

    pub fn say(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }
}

/// Global settings after merging the config file with flags.
#[derive(Debug, Clone)]
pub struct Settings {
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub quick: bool,
    pub space: Option<String>,
    pub b: Option<String>,
    pub max_level: Option<u32>,
}

/// Seeds in a config file: a count or an explicit list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum SeedSpec {
    Count(u64),
    List(Vec<u64>),
}

const GLOBAL_KEYS: [&str; 7] = ["seed", "seeds", "out", "quick", "space", "b", "max-level"];

/// Reads the config file (if any) and splits it into global and
/// command-specific tables. `kind`, when present, must name the subcommand.
fn load_config(path: Option<&Path>, kind: &str) -> LabResult<(toml::Table, toml::Table)> {
    let Some(path) = path else {
        return Ok((toml::Table::new(), toml::Table::new()));
    };
    let text = std::fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| LabError::Schema(format!("{}: {e}", path.display())))?;
    if let Some(k) = table.remove("kind") {
        if k.as_str() != Some(kind) {
            return Err(LabError::Schema(format!("config kind {k} does not match subcommand `{kind}`")));
        }
    }
    let mut global = toml::Table::new();
    for key in GLOBAL_KEYS {
        if let Some(v) = table.remove(key) {
            global.insert(key.to_string(), v);
        }
    }
    Ok((global, table))
}

fn overlay<T: Serialize + DeserializeOwned>(base: toml::Table, flags: &T, what: &str) -> LabResult<T> {
    let mut merged = base;
    let flag_table = toml::Table::try_from(flags).map_err(|e| LabError::Schema(e.to_string()))?;
    for (k, v) in flag_table {
        merged.insert(k, v);
    }
    merged.try_into().map_err(|e: toml::de::Error| LabError::Schema(format!("{what}: {}", e.message())))
}

fn settings(global: &Global, file: toml::Table) -> LabResult<Settings> {
    let seeds_value = file.get("seeds").cloned();
    let mut file = file;
    file.remove("seeds");
    let mut flags = global.clone();
    let seeds_flag = flags.seeds.take();
    let g: Global = overlay(file, &flags, "global settings")?;
    let first = g.seed.unwrap_or(0);
    let seeds = match (seeds_flag, seeds_value) {
        (Some(n), _) => (first..first + n.max(1)).collect(),
        (None, Some(v)) => match v.try_into::<SeedSpec>().map_err(|e| LabError::Schema(format!("seeds: {}", e.message())))? {
            SeedSpec::Count(n) => (first..first + n.max(1)).collect(),
            SeedSpec::List(mut l) => {
                l.sort_unstable();
                l.dedup();
                if l.is_empty() {
                    return Err(LabError::Schema("seeds: empty list".into()));
                }
                l
            }
        },
        (None, None) => vec![first],
    };
    Ok(Settings { seeds, out: g.out, quick: g.quick, space: g.space, b: g.b, max_level: g.max_level })
}

/// Merges config and flags, runs the subcommand and writes `out` if set.
pub fn run(cli: &Cli) -> LabResult<Outcome> {
    let kind = cli.command.kind();
    let (gfile, cfile) = load_config(cli.global.config.as_deref(), kind)?;
    let st = settings(&cli.global, gfile)?;
    let outcome = match &cli.command {
        Command::Audit(a) => commands::audit(&st, &overlay(cfile, a, kind)?)?,
        Command::Energy(a) => commands::energy(&st, &overlay(cfile, a, kind)?)?,
        Command::Lambda(a) => commands::lambda(&st, &overlay(cfile, a, kind)?)?,
        Command::Netcontent(a) => commands::netcontent(&st, &overlay(cfile, a, kind)?)?,
        Command::Fractal(a) => commands::fractal(&st, &overlay(cfile, a, kind)?)?,
        Command::Cover(a) => commands::cover(&st, &overlay(cfile, a, kind)?)?,
        Command::Rect(a) => commands::rect(&st, &overlay(cfile, a, kind)?)?,
        Command::Intersect(a) => commands::intersect(&st, &overlay(cfile, a, kind)?)?,
        Command::Suite(a) => {
            if !cfile.is_empty() {
                return Err(LabError::Schema("the suite takes no config keys".into()));
            }
            suite::run_suite(&a.name, st.quick)?
        }
    };
    if let Some(out) = &st.out {
        write_outputs(out, &outcome)?;
    }
    Ok(outcome)
}

/// Writes records (and CSV, if any) next to `out`.
pub fn write_outputs(out: &Path, outcome: &Outcome) -> LabResult<()> {
    let io = |e: std::io::Error| LabError::Io(format!("{}: {e}", out.display()));
    let mut text = outcome.records.join("\n");
    text.push('\n');
    std::fs::write(out, text).map_err(io)?;
    if let Some(csv) = &outcome.csv {
        std::fs::write(out.with_extension("csv"), csv).map_err(io)?;
    }
    Ok(())
}

/// Parses `lo:hi`.
pub fn parse_levels(s: &str) -> LabResult<(u32, u32)> {
    let bad = || LabError::Schema(format!("levels: expected `lo:hi`, got `{s}`"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let (lo, hi) = (a.trim().parse::<u32>().map_err(|_| bad())?, b.trim().parse::<u32>().map_err(|_| bad())?);
    if lo > hi {
        return Err(LabError::Schema(format!("levels: {lo} > {hi}")));
    }
    Ok((lo, hi))
}

/// Parses a comma-separated list of numbers.
pub fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> LabResult<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse::<T>().map_err(|_| LabError::Schema(format!("{what}: cannot parse `{x}`"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> toml::Table {
        text.parse().unwrap()
    }

    #[test]
    fn levels_and_lists() {
        assert_eq!(parse_levels("6:14").unwrap(), (6, 14));
        assert!(matches!(parse_levels("9:3"), Err(LabError::Schema(_))));
        assert!(matches!(parse_levels("7"), Err(LabError::Schema(_))));
        assert_eq!(parse_list::<f64>("1, 2.5", "a").unwrap(), vec![1.0, 2.5]);
        assert!(parse_list::<u64>("1,x", "n").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let flags = CoverArgs { alpha: Some(3.0), ..CoverArgs::default() };
        let merged: CoverArgs = overlay(table("alpha = 2.0\nnmax = 500"), &flags, "cover").unwrap();
        assert_eq!(merged.alpha, Some(3.0));
        assert_eq!(merged.nmax, Some(500));
    }

    #[test]
    fn unknown_keys_are_schema_errors() {
        let r: LabResult<CoverArgs> = overlay(table("widgets = 1"), &CoverArgs::default(), "cover");
        assert!(matches!(r, Err(LabError::Schema(_))));
    }

    #[test]
    fn seeds_from_count_list_or_flag() {
        let g = Global { seed: Some(5), ..Global::default() };
        assert_eq!(settings(&g, table("seeds = 3")).unwrap().seeds, vec![5, 6, 7]);
        assert_eq!(settings(&Global::default(), table("seeds = [4, 1, 4]")).unwrap().seeds, vec![1, 4]);
        let g = Global { seeds: Some(2), ..Global::default() };
        assert_eq!(settings(&g, table("seeds = [9]")).unwrap().seeds, vec![0, 1]);
        assert_eq!(settings(&Global::default(), toml::Table::new()).unwrap().seeds, vec![0]);
    }

    #[test]
    fn quick_from_file_survives_absent_flag() {
        assert!(settings(&Global::default(), table("quick = true")).unwrap().quick);
    }

    #[test]
    fn library_errors_map_to_exit_codes() {
        assert_eq!(LabError::from(limsup::Error::InvalidParameter("x".into())).exit_code(), 2);
        assert_eq!(LabError::from(limsup::Error::PreconditionViolated("x".into())).exit_code(), 3);
    }
}
