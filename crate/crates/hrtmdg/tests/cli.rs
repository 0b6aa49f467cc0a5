//! End-to-end checks of the command-line contract: flags, artifacts, exit
//! codes, and report determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hrtmdg::mesh::{generate_structured, write_mesh};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hrtmdg"))
}

fn run(args: &[&str], out_dir: &Path) -> Output {
    bin()
        .args(args)
        .arg("--out-dir")
        .arg(out_dir)
        .output()
        .expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_summary_with_positive_error_and_conserved_fluxes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "--command",
            "solve",
            "--mesh-n",
            "8",
            "--k",
            "0",
            "--kappa",
            "5",
            "--case",
            "sine_product",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report = json(&dir.path().join("solve.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["command"], "solve");
    assert!(report["err_u"].as_f64().unwrap() > 0.0);
    assert!(report["conservation_max"].as_f64().unwrap() <= 1e-10);
    assert_eq!(report["mesh"]["kind"], "structured");
    assert_eq!(report["solver"]["method"], "direct");
}

#[test]
fn solve_accepts_a_mesh_file() {
    let dir = tempfile::tempdir().unwrap();
    let mesh_path = dir.path().join("square.mesh");
    write_mesh(&generate_structured(4).unwrap(), &mesh_path).unwrap();
    let out = run(
        &[
            "--command",
            "solve",
            "--mesh-file",
            mesh_path.to_str().unwrap(),
            "--k",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let report = json(&dir.path().join("solve.json"));
    assert_eq!(report["mesh"]["kind"], "file");
    assert_eq!(report["mesh"]["cells"], 32);
}

#[test]
fn negative_wavenumber_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--command", "solve", "--kappa", "-1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("kappa"), "diagnostic: {msg}");
}

#[test]
fn missing_mesh_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["--command", "solve", "--mesh-file", "/nonexistent/m.mesh"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unsupported_degree_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--command", "solve", "--k", "7"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("k must be"), "diagnostic: {msg}");
}

#[test]
fn starved_iterative_solver_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "--command",
            "solve",
            "--mesh-n",
            "8",
            "--solver",
            "iterative:tol=1e-14,maxit=2",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "{out:?}");
}

#[test]
fn matrix_dump_writes_matrix_market_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["--command", "solve", "--mesh-n", "2", "--dump-matrix"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = fs::read_to_string(dir.path().join("matrix.mtx")).unwrap();
    assert!(text.starts_with("%%MatrixMarket"), "header: {}", &text[..40]);
}

#[test]
fn no_writes_outside_the_output_directory() {
    let out_dir = tempfile::tempdir().unwrap();
    let cwd = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["--command", "solve", "--mesh-n", "4"])
        .arg("--out-dir")
        .arg(out_dir.path())
        .current_dir(cwd.path())
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(fs::read_dir(cwd.path()).unwrap().count(), 0);
    let names: Vec<String> = fs::read_dir(out_dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, vec!["solve.json"]);
}

#[test]
fn convergence_writes_csv_with_rates() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "--command",
            "convergence",
            "--k",
            "0",
            "--mesh-n",
            "8,16",
            "--case",
            "sine_product",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "case,k,kappa,n,h,err_u,err_sigma,err_energy,rate_u,rate_sigma,const_norm"
    );
    assert_eq!(lines.len(), 3);
    // first level has no rate, second does
    let first: Vec<&str> = lines[1].split(',').collect();
    let second: Vec<&str> = lines[2].split(',').collect();
    assert!(first[8].is_empty());
    assert!(!second[8].is_empty());
}

#[test]
fn single_level_convergence_has_no_rates_and_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["--command", "convergence", "--k", "0", "--mesh-n", "8"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let csv = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert!(cells[8].is_empty() && cells[9].is_empty());
}

#[test]
fn resonant_wavenumber_exits_2_with_guard_message() {
    let dir = tempfile::tempdir().unwrap();
    // kappa^2 = 2 pi^2 is the lowest Dirichlet eigenvalue of the square
    let kappa = (2.0f64 * std::f64::consts::PI.powi(2)).sqrt();
    let out = run(
        &[
            "--command",
            "convergence",
            "--case",
            "sine_product",
            "--kappa",
            &format!("{kappa}"),
            "--mesh-n",
            "8,16",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("resonan"), "diagnostic: {msg}");
}

#[test]
fn verify_passes_on_a_healthy_build_and_is_deterministic() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let out_a = run(&["--command", "verify", "--seed", "7"], dir_a.path());
    assert_eq!(out_a.status.code(), Some(0), "{out_a:?}");
    let out_b = run(&["--command", "verify", "--seed", "7"], dir_b.path());
    assert_eq!(out_b.status.code(), Some(0), "{out_b:?}");
    let bytes_a = fs::read(dir_a.path().join("verify.json")).unwrap();
    let bytes_b = fs::read(dir_b.path().join("verify.json")).unwrap();
    assert_eq!(bytes_a, bytes_b, "report differs across identical seeds");

    let report = json(&dir_a.path().join("verify.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["all_pass"], true);
    assert_eq!(report["seed"], 7);
}

#[test]
fn injected_flux_sign_fault_fails_conservation_probes_and_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["--command", "verify", "--inject-d-sign-fault"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4), "{out:?}");
    let report = json(&dir.path().join("verify.json"));
    assert_eq!(report["fault_injected"], true);
    assert_eq!(report["all_pass"], false);
    let probes = report["probes"].as_array().unwrap();
    let failed: Vec<&str> = probes
        .iter()
        .filter(|p| p["pass"] == false)
        .map(|p| p["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"conservation"), "failed probes: {failed:?}");
    assert!(
        failed.contains(&"flux_continuity"),
        "failed probes: {failed:?}"
    );
}
