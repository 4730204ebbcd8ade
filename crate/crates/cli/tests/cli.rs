//! End-to-end runs of the `pqlap` binary: exit codes, artifacts, and
//! determinism of the emitted CSVs.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pqlap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn read_solution(dir: &Path) -> Vec<f64> {
    std::fs::read_to_string(dir.join("solution.txt"))
        .unwrap()
        .lines()
        .map(|l| l.trim().parse().unwrap())
        .collect()
}

#[test]
fn solve_default_config_hits_the_manufactured_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["solve", "--out", tmp.path().to_str().unwrap(), "--mesh-n", "8"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // default configuration is the alpha = 1 family with solution 0.25*x
    let sol = read_solution(tmp.path());
    assert_eq!(sol.len(), 81);
    for (k, v) in sol.iter().enumerate() {
        let x = (k % 9) as f64 / 8.0;
        assert!((v - 0.25 * x).abs() <= 1e-9, "node {k}");
    }
    assert!(tmp.path().join("solve_log.csv").exists());
    assert!(tmp.path().join("summary.txt").exists());
}

#[test]
fn solve_dnd_manufactured_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[problem]
kind = "dnd"
[params]
p = 3.0
q = 2.0
[mesh]
n = 8
"#,
    );
    let out = run(&["solve", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let sol = read_solution(tmp.path());
    for (k, v) in sol.iter().enumerate() {
        let x = (k % 9) as f64 / 8.0;
        assert!((v - x).abs() <= 1e-9, "node {k}: {v} vs {x}");
    }
}

#[test]
fn invalid_exponent_order_exits_2_with_field_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[params]\np = 2.0\nq = 3.0\n");
    let out = run(&["solve", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("params.q") && err.contains("1 < q < p"), "{err}");
}

#[test]
fn supercritical_theta_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[params]\np = 1.5\nq = 1.2\ntheta = 6.5\n");
    let out = run(&["solve", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("params.theta") && err.contains("subcritical"), "{err}");
}

#[test]
fn unknown_config_key_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[params]\npp = 2.5\n");
    let out = run(&["solve", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("pp"));
}

#[test]
fn verify_manufactured_passes_and_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["verify", "--out", tmp.path().to_str().unwrap(), "--mesh-n", "8"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert!(csv.starts_with("alpha,v_norm_gap,lp_gap,max_nodal_gap,newton_iters\n"));
    assert!(csv.contains("# config_hash="));
    assert!(tmp.path().join("assertions.json").exists());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("alpha_convergence") && stdout.contains("Pass"), "{stdout}");
}

#[test]
fn verify_random_mode_is_deterministic_across_reruns() {
    let tmp_a = tempfile::tempdir().unwrap();
    let tmp_b = tempfile::tempdir().unwrap();
    let cfg_body = r#"
[mesh]
n = 8
[verify]
mode = "random"
configs = 2
[sweep]
alphas = [1.0, 100.0, 10000.0]
"#;
    for tmp in [&tmp_a, &tmp_b] {
        let cfg = write_config(tmp.path(), cfg_body);
        let out = run(&[
            "verify",
            "--config",
            &cfg,
            "--out",
            tmp.path().to_str().unwrap(),
            "--seed",
            "31",
            "--threads",
            "1",
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["sweep_cfg00.csv", "sweep_cfg01.csv"] {
        let a = std::fs::read(tmp_a.path().join(name)).unwrap();
        let b = std::fs::read(tmp_b.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn sweep_subcommand_tabulates_without_asserting() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[mesh]\nn = 4\n[sweep]\nalphas = [1.0, 10.0, 100.0]\n");
    let out = run(&["sweep", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    let data_rows = csv.lines().skip(1).filter(|l| !l.starts_with('#')).count();
    assert_eq!(data_rows, 3);
}

#[test]
fn reversed_alpha_schedule_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[sweep]\nalphas = [100.0, 1.0]\n");
    let out = run(&["verify", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("strictly increasing"));
}

#[test]
fn control_missing_target_file_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[mesh]
n = 4
[control]
target_source = "file"
"#,
    );
    let out = run(&["control", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("control.target_file"));
}

#[test]
fn degenerate_lambda_zero_asymptotics_exits_0_with_zero_values() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[mesh]
n = 4
[control]
lambda = 0.0
target_source = "zero-solve"
cells_x = 2
cells_y = 2
value_tol = 1e-12
alphas = [1.0, 10.0, 100.0]
"#,
    );
    let out = run(&["asymptotics", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("asymptotics.csv")).unwrap();
    assert!(csv.starts_with("alpha,j_alpha,control_dist,state_dist,dispersion\n"));
    for line in csv.lines().skip(1).filter(|l| !l.starts_with('#')) {
        let j: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(j, 0.0, "{line}");
    }
}

#[test]
fn reachable_target_control_descends_below_zero_cost() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[mesh]
n = 4
[control]
governed = "dnd"
target_source = "reachable"
g_tilde = -0.8
cells_x = 2
cells_y = 2
rho = 1e-3
"#,
    );
    let out = run(&["control", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(tmp.path().join("optimizer_log.csv")).unwrap();
    let costs: Vec<f64> = log
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(costs.len() >= 2);
    assert!(costs.last().unwrap() < costs.first().unwrap());
    assert!(costs.windows(2).all(|w| w[1] <= w[0]), "cost history not monotone");
}

#[test]
fn mesh_info_roundtrips_through_the_text_format() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["mesh-info", "--out", tmp.path().to_str().unwrap(), "--mesh-n", "3"]);
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("nodes: 16") && stdout.contains("triangles: 18"), "{stdout}");
    let mesh_path = tmp.path().join("mesh.txt");
    assert!(mesh_path.exists());

    // feed the exported mesh back in through mesh.file
    let cfg = write_config(
        tmp.path(),
        &format!(
            "[mesh]\nfile = \"{}\"\n[problem]\nkind = \"dnd\"\n[params]\np = 3.0\nq = 2.0\n",
            mesh_path.display()
        ),
    );
    let out = run(&["solve", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let sol = read_solution(tmp.path());
    assert_eq!(sol.len(), 16);
}

#[test]
fn asymptotics_reachable_target_is_consistent() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[mesh]
n = 4
[control]
target_source = "reachable"
g_tilde = -0.5
cells_x = 2
cells_y = 2
value_tol = 0.1
alphas = [1.0, 100.0, 10000.0]
"#,
    );
    let out = run(&["asymptotics", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("asymptotics.csv")).unwrap();
    assert_eq!(csv.lines().skip(1).filter(|l| !l.starts_with('#')).count(), 3);
    assert!(tmp.path().join("asymptotics.json").exists());
}

#[test]
fn h0_random_source_solves() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[mesh]\nn = 6\n[source]\nkind = \"h0-random\"\n[params]\nbeta = 0.5\n",
    );
    let out = run(&["solve", "--config", &cfg, "--out", tmp.path().to_str().unwrap(), "--seed", "9"]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // with g <= 0 data the state stays below the transfer level
    let sol = read_solution(tmp.path());
    assert!(sol.iter().all(|&v| v <= 1.0 + 1e-10));
}

#[test]
fn rect_mesh_reports_its_area() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[mesh]\nn = 4\nrect = [0.0, 2.0, 0.0, 1.0]\n");
    let out = run(&["mesh-info", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("area: 2.0"));
}

#[test]
fn nonconvergent_solve_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[mesh]
n = 6
[params]
p = 3.5
q = 1.3
beta = 1.5
alpha = 100.0
[source]
kind = "constant"
g = -5.0
r = 2.0
[solve]
max_iterations = 1
tolerance = 1e-14
init = "zero"
"#,
    );
    let out = run(&["solve", "--config", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    // the diagnostic log is still written
    assert!(tmp.path().join("solve_log.csv").exists());
}
