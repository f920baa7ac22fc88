use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsm")).args(args).output().unwrap()
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dsm-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn run_writes_a_trace_with_the_fixed_columns() {
    let dir = scratch("run");
    let out = dir.join("out");
    let cfg = configs().join("virtual_iterate.toml");
    let o = dsm(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = fs::read_to_string(out.join("dsm/T50_seed3.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "round,gamma_t,loss,grad_l1,grad_l2sq,max_dir_norm,x_hash");
    assert_eq!(lines.count(), 51);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn jsonl_format_flag_switches_the_trace_file() {
    let dir = scratch("jsonl");
    let cfg = configs().join("virtual_iterate.toml");
    let o = dsm(&["run", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--format", "jsonl"]);
    assert!(o.status.success());
    let text = fs::read_to_string(dir.join("dsm/T50_seed0.jsonl")).unwrap();
    assert!(text.lines().next().unwrap().starts_with("{\"round\":0,"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_errors_exit_with_one() {
    let dir = scratch("bad");
    let bad = dir.join("bad.toml");
    fs::write(&bad, "[problem]\nkind = \"quadratic\"\ndim = 4\nworkers = 2\nbogus = 1\n").unwrap();
    let o = dsm(&["run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));
    assert_eq!(dsm(&["run", dir.join("missing.toml").to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(dsm(&["no-such-command"]).status.code(), Some(1));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn divergence_exits_with_two() {
    let dir = scratch("diverge");
    let cfg = dir.join("diverge.toml");
    fs::write(
        &cfg,
        "[problem]\nkind = \"quadratic\"\ndim = 4\nworkers = 2\neig_min = 1.0\neig_max = 10.0\n\n\
         [algorithm]\nvariant = \"local_avg\"\nrounds = 500\nlocal_lr = { peak = 10.0 }\n\n\
         [output]\ndir = \"",
    )
    .unwrap();
    let mut text = fs::read_to_string(&cfg).unwrap();
    text.push_str(&format!("{}\"\n", dir.join("out").display()));
    fs::write(&cfg, text).unwrap();
    let o = dsm(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn config_free_checks_pass_and_write_reports() {
    let dir = scratch("checks");
    let o = dsm(&["check-reductions", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("reductions: PASS"));
    assert!(dir.join("reductions.json").exists());
    let o = dsm(&["check-lemma1", "--draws", "20000"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn rate_check_writes_theorem_report() {
    let dir = scratch("theorems");
    let cfg = configs().join("theorem2_rate.toml");
    let o = dsm(&["check-theorems", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("theorems.json")).unwrap()).unwrap();
    assert!(report.get("theorem2").is_some(), "{report}");
    fs::remove_dir_all(&dir).unwrap();
}
