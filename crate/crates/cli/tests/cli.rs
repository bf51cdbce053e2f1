use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tensorcause"))
        .args(args)
        .env_remove("TENSORCAUSE_THREADS")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(dir: &Path, mode: &str, n: usize, seed: u64) -> std::path::PathBuf {
    let out = dir.join(format!("{mode}-{n}-{seed}.csv"));
    let o = run(&["simulate", mode, "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn fit(data: &Path, mode: &str, k: usize, out: &Path) -> Output {
    run(&["fit", mode, "--input", data.to_str().unwrap(), "--k", &k.to_string(), "--out", out.to_str().unwrap()])
}

#[test]
fn simulate_writes_rows_and_truth() {
    let dir = tempdir().unwrap();
    let p = simulate(dir.path(), "multiproxy", 25, 3);
    let csv = text(&p);
    assert_eq!(csv.lines().count(), 26);
    assert!(csv.starts_with("z1_0,"));
    let truth: serde_json::Value = serde_json::from_str(&text(&p.with_extension("truth.json"))).unwrap();
    assert_eq!(truth["n"], 25);
    assert_eq!(truth["labels"].as_array().unwrap().len(), 25);

    let again = dir.path().join("again.csv");
    std::fs::copy(&p, &again).unwrap();
    simulate(dir.path(), "multiproxy", 25, 3);
    assert_eq!(text(&p), text(&again));

    let t = simulate(dir.path(), "multitreatment", 10, 1);
    assert_eq!(text(&t).lines().next().unwrap(), "a1,a2,a3,y");
}

#[test]
fn simulate_zero_rows_gives_header_only() {
    let dir = tempdir().unwrap();
    let p = simulate(dir.path(), "multiproxy", 0, 1);
    assert_eq!(text(&p).lines().count(), 1);
}

#[test]
fn fit_then_estimate() {
    let dir = tempdir().unwrap();
    let data = simulate(dir.path(), "multiproxy", 1500, 5);
    let model = dir.path().join("model.json");
    let o = fit(&data, "multiproxy", 3, &model);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&text(&model)).unwrap();
    let sum: f64 = m["priors"].as_array().unwrap().iter().map(|p| p.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-12);

    let o = run(&["estimate", "--model", model.to_str().unwrap(), "ate", "--a", "0", "--a", "-1.5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines: Vec<serde_json::Value> = stdout(&o).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["inputs"]["a"][0], -1.5);
    assert!(lines.iter().all(|l| l["value"].as_f64().unwrap().is_finite()));

    let o = run(&[
        "estimate", "--model", model.to_str().unwrap(), "cate", "--u", "0", "--a", "1", "--z", "0.1,0.2,0", "--z", "0,0,0", "--z", "0,0,0",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["estimate", "--model", model.to_str().unwrap(), "cate", "--u", "7", "--a", "1", "--z", "0,0,0", "--z", "0,0,0", "--z", "0,0,0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn multitreatment_fit_and_ate() {
    let dir = tempdir().unwrap();
    let data = simulate(dir.path(), "multitreatment", 3000, 2);
    let model = dir.path().join("model.json");
    let o = fit(&data, "multitreatment", 2, &model);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(&["estimate", "--model", model.to_str().unwrap(), "ate", "--a", "1,0,2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn too_many_components_is_a_numerical_failure() {
    let dir = tempdir().unwrap();
    let data = simulate(dir.path(), "multiproxy", 800, 6);
    let o = fit(&data, "multiproxy", 9, &dir.path().join("m.json"));
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("degenerate spectrum") || stderr(&o).contains("rank deficiency"), "{}", stderr(&o));
}

#[test]
fn malformed_model_exits_two() {
    let dir = tempdir().unwrap();
    let model = dir.path().join("bad.json");
    std::fs::write(&model, "{\"schema_version\": 1}").unwrap();
    let o = run(&["estimate", "--model", model.to_str().unwrap(), "ate", "--a", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["fit", "--bogus"])), 1);
    assert_eq!(code(&run(&[])), 1);
    let dir = tempdir().unwrap();
    let data = simulate(dir.path(), "multitreatment", 20, 1);
    // the mode must match the file
    assert_eq!(code(&fit(&data, "multiproxy", 2, &dir.path().join("m.json"))), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn rank_finds_three_components() {
    let dir = tempdir().unwrap();
    let data = simulate(dir.path(), "multiproxy", 2000, 7);
    let scree = dir.path().join("scree.csv");
    let o = run(&["rank", "--input", data.to_str().unwrap(), "--out", scree.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("selected K = 3"), "{}", stdout(&o));
    assert!(text(&scree).lines().count() > 3);
}

#[test]
fn benchmark_smoke() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_tensorcause"))
        .args(["benchmark", "--scenario", "paper-7.1", "--ns", "500", "--trials", "1", "--out", out.to_str().unwrap()])
        .env("TENSORCAUSE_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("on 1 threads"), "{}", stderr(&o));
    assert!(text(&out).lines().count() > 1);
}

#[test]
fn bad_thread_cap_is_rejected() {
    let dir = tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_tensorcause"))
        .args(["benchmark", "--scenario", "paper-7.1", "--ns", "500", "--trials", "1", "--out", out.to_str().unwrap()])
        .env("TENSORCAUSE_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("TENSORCAUSE_THREADS"));
}
