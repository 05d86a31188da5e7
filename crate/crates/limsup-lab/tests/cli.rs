use std::path::PathBuf;
use std::process::{Command, Output};

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_limsup-lab")).args(args).env("LIMSUP_LAB_THREADS", "2").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("limsup-lab-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn rectangle_exponent_summary() {
    let o = lab(&["rect", "--a", "1,2", "--exponent-only"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("exponent=1.5"), "{}", stdout(&o));
}

#[test]
fn unordered_exponents_are_a_schema_error() {
    let o = lab(&["rect", "--a", "2,1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("non-decreasing"));
}

#[test]
fn unknown_suite_is_a_schema_error() {
    assert_eq!(lab(&["suite", "nightly"]).status.code(), Some(2));
}

#[test]
fn cover_reports_critical_exponent() {
    let o = lab(&["cover", "--nmax", "20000", "--levels", "4:10"]);
    assert!(stdout(&o).contains("s0=0.5"), "{}", stdout(&o));
}

#[test]
fn records_are_deterministic_and_sorted_by_seed() {
    let (a, b) = (scratch("a.jsonl"), scratch("b.jsonl"));
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = Command::new(env!("CARGO_BIN_EXE_limsup-lab"))
            .args(["fractal", "--seeds", "4", "--levels", "1:10", "--out", out.to_str().unwrap()])
            .env("LIMSUP_LAB_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.code().is_some_and(|c| c <= 1));
    }
    let (ta, tb) = (std::fs::read_to_string(&a).unwrap(), std::fs::read_to_string(&b).unwrap());
    assert_eq!(ta, tb);
    assert_eq!(std::fs::read_to_string(a.with_extension("csv")).unwrap(), std::fs::read_to_string(b.with_extension("csv")).unwrap());
    let seeds: Vec<u64> = ta
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["seed"].as_u64().unwrap())
        .collect();
    assert!(seeds.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn config_file_is_merged_and_flags_win() {
    let cfg = scratch("rect.toml");
    std::fs::write(&cfg, "kind = \"rect\"\na = \"1,3\"\nexponent-only = true\n").unwrap();
    let o = lab(&["--config", cfg.to_str().unwrap(), "rect"]);
    assert!(stdout(&o).contains("exponent=1.3333"), "{}", stdout(&o));
    let o = lab(&["--config", cfg.to_str().unwrap(), "rect", "--a", "1,2"]);
    assert!(stdout(&o).contains("exponent=1.5"), "{}", stdout(&o));
}

#[test]
fn unknown_config_key_is_rejected() {
    let cfg = scratch("bad.toml");
    std::fs::write(&cfg, "alpha = 2\nwidgets = 3\n").unwrap();
    assert_eq!(lab(&["--config", cfg.to_str().unwrap(), "cover"]).status.code(), Some(2));
}

#[test]
fn mismatched_config_kind_is_rejected() {
    let cfg = scratch("kind.toml");
    std::fs::write(&cfg, "kind = \"fractal\"\n").unwrap();
    assert_eq!(lab(&["--config", cfg.to_str().unwrap(), "cover"]).status.code(), Some(2));
}

#[test]
fn quick_suite_passes() {
    let o = lab(&["suite", "acceptance", "--quick"]);
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 11, "{text}");
    assert!(o.status.success());
}
