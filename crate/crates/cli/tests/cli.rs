use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fastphase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fastphase"))
        .args(args)
        .env_remove("FASTPHASE_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn gen(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["gen", "--shape", "8x8", "--w", "1,2", "--out", dir.to_str().unwrap()];
    args.extend_from_slice(extra);
    fastphase(&args)
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&gen(&a, &["--seed", "9", "--rho", "4"])), 0);
    assert_eq!(code(&gen(&b, &["--seed", "9", "--rho", "4"])), 0);
    for file in ["y.fpt", "truth.fpt", "meta.json"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn seed_is_read_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&gen(&a, &["--seed", "5"])), 0);
    let out = Command::new(env!("CARGO_BIN_EXE_fastphase"))
        .args(["gen", "--shape", "8x8", "--w", "1,2", "--out", b.to_str().unwrap()])
        .env("FASTPHASE_SEED", "5")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(a.join("y.fpt")).unwrap(), fs::read(b.join("y.fpt")).unwrap());
}

#[test]
fn weak_dominance_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = gen(tmp.path(), &["--rho", "1.5"]);
    assert_eq!(code(&out), 64);
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(code(&fastphase(&["frobnicate"])), 64);
    assert_eq!(code(&fastphase(&["--help"])), 0);
}

#[test]
fn solve_recovers_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("inst");
    assert_eq!(code(&gen(&inst, &["--rho", "4", "--seed", "1"])), 0);
    let out = fastphase(&["solve", "--instance", inst.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(inst.join("xhat.fpt").exists());
    let report = json(&inst.join("report.json"));
    assert_eq!(report["converged"], true);
    assert!(report["rmse_db"].as_f64().unwrap() <= -80.0, "{report}");
    assert_eq!(report["basin_inside"], true);
}

#[test]
fn epsilon_stops_early() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("inst");
    assert_eq!(code(&gen(&inst, &["--seed", "2"])), 0);
    let out = fastphase(&["solve", "--instance", inst.to_str().unwrap(), "--epsilon", "1e-4"]);
    assert_eq!(code(&out), 0);
    let report = json(&inst.join("report.json"));
    let cost = report["final_cost"].as_f64().unwrap();
    assert!(cost <= 1e-4 && cost > 1e-20, "{cost}");
}

#[test]
fn iteration_cap_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("inst");
    assert_eq!(code(&gen(&inst, &["--seed", "3"])), 0);
    let out = fastphase(&["solve", "--instance", inst.to_str().unwrap(), "--max-outer", "1", "--restarts", "0", "--candidates", "1"]);
    assert_eq!(code(&out), 3);
    assert!(inst.join("report.json").exists());
}

#[test]
fn corrupt_measurement_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("inst");
    assert_eq!(code(&gen(&inst, &[])), 0);
    let path = inst.join("y.fpt");
    let mut bytes = fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    fs::write(&path, bytes).unwrap();
    let out = fastphase(&["solve", "--instance", inst.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert_eq!(code(&fastphase(&["solve", "--instance", tmp.path().join("missing").to_str().unwrap()])), 2);
}

#[test]
fn winding_prints_the_planted_index() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("inst");
    assert_eq!(code(&gen(&inst, &["--seed", "4"])), 0);
    let out = fastphase(&["winding", "--instance", inst.to_str().unwrap(), "--top", "3"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let w = v["w"].as_str().unwrap();
    assert!(w == "1,2" || w == "6,5", "{w}");
    assert_eq!(v["ranked"].as_array().unwrap().len(), 3);
}

#[test]
fn schwarz_init_writes_a_tensor() {
    let tmp = tempfile::tempdir().unwrap();
    let inst = tmp.path().join("inst");
    assert_eq!(code(&gen(&inst, &[])), 0);
    let x0 = tmp.path().join("x0.fpt");
    let out = fastphase(&["schwarz-init", "--instance", inst.to_str().unwrap(), "--w", "1,2", "--factor", "2", "--out", x0.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let g: fastphase::ComplexGrid = fastphase::tensor::read_tensor(&x0).unwrap();
    assert_eq!(g.shape().dims(), &[8, 8]);
}

#[test]
fn quadrature_sweep_decreases() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let out = fastphase(&["sweep", "quadrature", "--out", dir, "--shape", "6x6", "--instances", "3", "--factors", "1,2,4", "--reference", "16"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&tmp.path().join("summary.json"));
    let med: Vec<f64> = summary["factors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["median_reference_error"].as_f64().unwrap())
        .collect();
    assert!(med.windows(2).all(|p| p[1] < p[0]), "{med:?}");
    let csv = fs::read_to_string(tmp.path().join("quadrature.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 9);
}

#[test]
fn noise_sweep_writes_rows_per_level_and_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = fastphase(&["sweep", "noise", "--out", dir.to_str().unwrap(), "--shape", "6x6", "--snr", "20,40,inf", "--trials", "2", "--seed", "7"]);
        assert!(matches!(code(&out), 0), "{}", String::from_utf8_lossy(&out.stderr));
        fs::read_to_string(dir.join("rows.csv")).unwrap()
    };
    let first = run("a");
    assert_eq!(first, run("b"));
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "instance_id,seed,snr_db,w,basin_inside,iterations,rmse_db,wall_seconds,status");
    assert_eq!(lines.len(), 1 + 6);
    assert_eq!(lines.iter().filter(|l| l.contains(",inf,")).count(), 2);
}

#[test]
fn wf_sweep_summarizes_each_side() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let out = fastphase(&["sweep", "wf", "--out", dir, "--sides", "2,3", "--trials", "8", "--instances", "4", "--wf-iters", "200"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&tmp.path().join("summary.json"));
    let sides = summary["sides"].as_array().unwrap();
    assert_eq!(sides.len(), 2);
    for s in sides {
        assert_eq!(s["wf_trials"], 8);
        assert_eq!(s["fpr_success_rate"], 1.0);
    }
    let wf = fs::read_to_string(tmp.path().join("wf.csv")).unwrap();
    assert_eq!(wf.lines().count(), 1 + 16);
}

#[test]
fn condition_sweep_never_worsens() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_str().unwrap();
    let out = fastphase(&["sweep", "condition", "--out", dir, "--shape", "3x3", "--ratios", "2,100"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(&tmp.path().join("summary.json"))["preconditioning_never_worse"], true);
    assert_eq!(code(&fastphase(&["sweep", "condition", "--out", dir, "--cost", "bogus"])), 64);
}
