use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semiblind-crb"))
}

fn write_config(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run(sub: &str, config: &Path, extra: &[&str]) -> Output {
    bin().arg(sub).arg("--config").arg(config).args(extra).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

const PILOTED: &str = "seed = 3\ntrials = 5000\ngamma = 10.0\n[dims]\nm = 4\nl = 2\nn = 2\n[pilots]\nkind = \"first\"\ncount = 3\n";

#[test]
fn compute_writes_json_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", PILOTED);
    let out = run("compute", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["dims"]["p"], 6);
    assert_eq!(v["crb_h"]["re"].as_array().unwrap().len(), 3);
    assert_eq!(v["config"]["pilots"]["count"], 3);
    assert!(v["trace_bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn compute_csv_to_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", PILOTED);
    let target = dir.path().join("crb.csv");
    let out = run("compute", &cfg, &["--format", "csv", "--out", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(target).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "row,col,re,im");
    assert_eq!(rows.len(), 10);
    let re: f64 = rows[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!(re > 0.0);
    assert!(text.starts_with("# schema_version: 1\n# config: {"));
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let blind = write_config(&dir, "blind.toml", "gamma = 1.0\n[dims]\nm = 1\nl = 0\nn = 1\n");
    let out = run("compute", &blind, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("T_x^H U~ U~^H T_x"));

    let broken = write_config(&dir, "broken.toml", "gamma = 1.0\n[dims]\nm = 2\n");
    assert_eq!(run("compute", &broken, &[]).status.code(), Some(1));
    let missing = dir.path().join("absent.toml");
    assert_eq!(run("compute", &missing, &[]).status.code(), Some(1));

    let cfg = write_config(&dir, "run.toml", PILOTED);
    assert_eq!(run("simulate", &cfg, &[]).status.code(), Some(1));

    let bad = write_config(
        &dir,
        "fault.toml",
        &format!("{PILOTED}[verify]\ninject = \"score_prefactor\"\n"),
    );
    let out = run("verify", &bad, &[]);
    assert_eq!(out.status.code(), Some(4));
    let v = json(&out);
    assert_eq!(v["pass"], false);
    let fd = v["checks"].as_array().unwrap().iter().find(|c| c["name"] == "score_fd").unwrap();
    assert_eq!(fd["pass"], false);
}

#[test]
fn verify_passes_on_default_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "run.toml", PILOTED);
    let out = run("verify", &cfg, &["--trials", "20000", "--threads", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let v = json(&out);
    assert_eq!(v["config"]["trials"], 20000);
    assert_eq!(v["checks"].as_array().unwrap().len(), 8);
}

#[test]
fn simulate_reference_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "sim.toml",
        "seed = 1\ntrials = 100000\ngamma = 10.0\n[dims]\nm = 4\nl = 2\nn = 2\n[pilots]\nkind = \"all\"\n[symbols]\nconstellation = \"qpsk\"\n",
    );
    let out = run("simulate", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["pass"], true);
    assert_eq!(v["flags"].as_array().unwrap().len(), 0);
    let again = run("simulate", &cfg, &["--threads", "3"]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn sweep_csv_rows_in_order() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        &dir,
        "sweep.toml",
        "gamma = { start = 1.0, stop = 100.0, points = 3, scale = \"log\" }\n[dims]\nm = 4\nl = 1\nn = 2\n[pilots]\nkind = \"first\"\ncount = 2\n",
    );
    let out = run("sweep", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').take(4).map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], 1.0);
    assert!((rows[1][0] - 10.0).abs() < 1e-12);
    for r in &rows {
        assert!((r[1] * r[0] - rows[0][1]).abs() <= 1e-12 * rows[0][1]);
    }
}

#[test]
fn custom_precoder_and_matrix_pilots() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("f.txt"), "1 0\n0 1\n0.5 0.5i\n").unwrap();
    std::fs::write(dir.path().join("a.txt"), "1 0\n").unwrap();
    let cfg = write_config(
        &dir,
        "custom.toml",
        "gamma = 2.0\n[dims]\nm = 2\nl = 1\nn = 1\n[precoder]\nkind = \"custom\"\nfile = \"f.txt\"\n[pilots]\nkind = \"matrix\"\nfile = \"a.txt\"\nvalues = [\"1+1i\"]\n[channel]\ntaps = [\"1\", \"0.3-0.2i\"]\n",
    );
    let out = run("compute", &cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["precoder"], "custom");
    assert_eq!(v["pilot_count"], 1);
}
