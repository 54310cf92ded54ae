use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_paramcrop");

const SMALL: &str = "\
steps = 5
batch = 2
input_shape = 3x8x16x16
crop_shape = 4x8x8
embed_dim = 8
encoder_filters = 4
probe_samples = 8
";

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("PARAMCROP_THREADS").output().unwrap()
}

fn run_env(args: &[&str], threads: &str) -> Output {
    Command::new(BIN).args(args).env("PARAMCROP_THREADS", threads).output().unwrap()
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.cfg");
    fs::write(&p, SMALL).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_writes_csv_manifest_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("run");
    let o = run(&["train", "--config", &cfg, "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,loss,iou,dist_raw,dist_norm,v_sp,v_st,v_theta,v_dx,v_dy,v_dt");
    assert_eq!(lines.len(), 6);
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("output.metrics = metrics.csv"));
    assert!(manifest.contains("seed = 0"));
    assert!(manifest.contains(&format!("version = {}", env!("CARGO_PKG_VERSION"))));
    assert!(out.join("cropper_0/w1.pct").exists() && out.join("cropper_1/cropper.manifest").exists());
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&["train", "--config", &cfg, "--seed", "17", "--out", s(&a)]).status.success());
    let o = run(&["train", "--from-manifest", s(&a.join("manifest.txt")), "--out", s(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
    assert!(fs::read_to_string(b.join("manifest.txt")).unwrap().contains("seed = 17"));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&["train", "--config", &cfg, "--out", s(&a)]).status.success());
    assert!(run(&["train", "--config", &cfg, "--seed", "3", "--out", s(&b)]).status.success());
    assert_ne!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());
}

#[test]
fn plot_spans_all_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("p");
    assert!(run(&["train", "--config", &cfg, "--out", s(&out), "--plot"]).status.success());
    let svg = fs::read_to_string(out.join("plot.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains(r#"data-x-min="0" data-x-max="5""#));
    assert_eq!(svg.matches("<polyline").count(), 3);
    for id in ["loss", "iou", "dist_norm"] {
        assert!(svg.contains(&format!(r#"id="{id}""#)));
    }
}

#[test]
fn print_config_round_trips() {
    let o = run(&["train", "--print-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("steps = 2000") && text.contains("detach_bound = 0.2"));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("defaults.cfg");
    fs::write(&p, &text).unwrap();
    let again = run(&["train", "--config", s(&p), "--print-config"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn unknown_strategy_is_a_config_error() {
    let o = run(&["train", "--set", "strategy=cubic", "--out", "/nonexistent/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`strategy`"), "{}", stderr(&o));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.cfg");
    fs::write(&p, "batch = lots\n").unwrap();
    let o = run(&["train", "--config", s(&p)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`batch`"));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = run(&["train", "--config", &cfg, "--out", s(&blocker.join("sub"))]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn compare_merges_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("c");
    let o = run(&["compare", "--config", &cfg, "--strategies", "paramcrop,random,manual", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("strategy,step,loss"));
    assert_eq!(lines.len(), 1 + 3 * 5);
    for name in ["paramcrop", "random", "manual"] {
        assert_eq!(lines.iter().filter(|l| l.starts_with(&format!("{name},"))).count(), 5);
    }
}

#[test]
fn compare_needs_two_strategies() {
    let o = run(&["compare", "--strategies", "simple", "--out", "/nonexistent/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("strategies"));
}

#[test]
fn threads_do_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = |o: &Path| {
        vec!["compare".to_string(), "--config".into(), cfg.clone(), "--strategies".into(), "paramcrop,random,hard".into(), "--out".into(), s(o).into()]
    };
    let aa = args(&a);
    let bb = args(&b);
    assert!(run_env(&aa.iter().map(String::as_str).collect::<Vec<_>>(), "1").status.success());
    assert!(run_env(&bb.iter().map(String::as_str).collect::<Vec<_>>(), "3").status.success());
    assert_eq!(fs::read(a.join("compare.csv")).unwrap(), fs::read(b.join("compare.csv")).unwrap());
    let bad = run_env(&aa.iter().map(String::as_str).collect::<Vec<_>>(), "zero");
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sweep_reports_one_row_per_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("s");
    let o = run(&["sweep-detach", "--config", &cfg, "--bounds", "0,0.2,0.5", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "detach_bound,final_iou,final_dist_norm,probe_iou,probe_dist_norm");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,") && lines[3].starts_with("0.5,"));
}

#[test]
fn sweep_rejects_out_of_range_bound() {
    let o = run(&["sweep-detach", "--bounds", "0.2,0.7", "--out", "/nonexistent/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bounds"));
}

#[test]
fn gradcheck_passes_and_is_repeatable() {
    let a = run(&["gradcheck"]);
    let b = run(&["gradcheck"]);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stdout));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(String::from_utf8_lossy(&a.stdout).matches("PASS").count(), 7);
}

#[test]
fn gradcheck_zero_tolerance_fails_naming_first_check() {
    let o = run(&["gradcheck", "--tolerance", "0", "--seeds", "2"]);
    assert_eq!(o.status.code(), Some(3));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().last().unwrap().contains("sampler_grid"), "{text}");
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["bogus"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--seed", "minus-one"]).status.code(), Some(2));
    assert!(run(&["--help"]).status.success());
}
