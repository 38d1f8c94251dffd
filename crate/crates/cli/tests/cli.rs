use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn rbm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbm")).args(args).current_dir(dir).output().expect("binary runs")
}

fn scenario(body: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), body).unwrap();
    dir
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = "[grid]\nnx = 5\nny = 5\nnz = 5\n";

#[test]
fn verify_default_and_tiny_grids_pass() {
    let d = scenario("");
    let o = rbm(&["verify", "--config", "s.toml", "--out", "v"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let checks = json(&d.path().join("v/identities.json"));
    assert_eq!(checks.as_array().unwrap().len(), 5);

    let d = scenario("[grid]\nnx = 4\nny = 4\nnz = 4\n");
    assert_eq!(code(&rbm(&["verify", "--config", "s.toml", "--out", "v"], d.path())), 0);
}

#[test]
fn corrupted_stencil_is_named() {
    let d = scenario(&format!("{SMALL}[diagnostics]\ncorrupt = \"gradient_stencil\"\n"));
    let o = rbm(&["verify", "--config", "s.toml", "--out", "v"], d.path());
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("summation_by_parts"));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL curl_of_gradient"));
    assert_eq!(json(&d.path().join("v/manifest.json"))["exit_code"], code(&o));
}

#[test]
fn basic_state_solve_has_no_flow() {
    let d = scenario(&format!("{SMALL}[params]\nra = 0.7\nma = 0.3\n"));
    let o = rbm(&["solve", "--config", "s.toml", "--out", "s"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&d.path().join("s/solve_report.json"));
    assert!(r["velocity_max"].as_f64().unwrap() <= 1e-8);
    assert_eq!(r["report"]["converged"], true);
    for f in ["state.vtk", "state.csv", "velocity_nodes.csv", "config.toml", "manifest.json"] {
        assert!(d.path().join("s").join(f).is_file(), "{f}");
    }
}

#[test]
fn hostile_solve_exits_two_with_artifacts() {
    let d = scenario(&format!(
        "{SMALL}[params]\nra = 100.0\nma = 1e5\n[controls]\ng_bump = 1.0\nphi1_offset = 1.0\n[solver]\nmax_iters = 20\n"
    ));
    let o = rbm(&["solve", "--config", "s.toml", "--out", "s"], d.path());
    assert_eq!(code(&o), 2);
    let r = json(&d.path().join("s/solve_report.json"));
    assert_eq!(r["report"]["converged"], false);
    assert!(d.path().join("s/state.vtk").is_file());
}

#[test]
fn configuration_errors_exit_one() {
    let d = scenario("[grid\nnx = ");
    let o = rbm(&["solve", "--config", "s.toml"], d.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("TOML parse error"));

    let d = scenario("[weights]\ngamma5 = 0.0\n");
    assert_eq!(code(&rbm(&["optimize", "--config", "s.toml"], d.path())), 1);

    let d = scenario("");
    assert_eq!(code(&rbm(&["solve", "--config", "missing.toml"], d.path())), 1);
    assert_eq!(code(&rbm(&["solve", "--frobnicate"], d.path())), 1);
    assert_eq!(code(&rbm(&["--help"], d.path())), 0);
}

#[test]
fn optimize_exit_codes() {
    let d = scenario(&format!("{SMALL}[controls]\ng_bump = 0.2\n[optimizer]\nmax_iters = 0\n"));
    assert_eq!(code(&rbm(&["optimize", "--config", "s.toml", "--out", "o"], d.path())), 2);
    assert!(d.path().join("o/optimality_report.json").is_file());

    let d = scenario(&format!("{SMALL}[controls]\ng_bump = 0.2\ng_set = {{ kind = \"box\", lo = -0.05, hi = 0.05 }}\n"));
    let o = rbm(&["optimize", "--config", "s.toml", "--out", "o"], d.path());
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("outside their sets"));
}

#[test]
fn optimize_is_reproducible_and_hashed() {
    let body = format!(
        "{SMALL}[controls]\ng_bump = 0.2\nphi2_offset = 0.1\n[optimizer]\ntol = 1e-3\nmax_iters = 60\n[diagnostics]\nsecond_order_samples = 3\nvi_samples = 5\n"
    );
    let d = scenario(&body);
    let a = rbm(&["optimize", "--config", "s.toml", "--out", "a", "--seed", "7"], d.path());
    let b = rbm(&["optimize", "--config", "s.toml", "--out", "b", "--seed", "7"], d.path());
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(code(&b), 0);
    for f in ["cost_history.csv", "optimality_report.json", "state.csv", "control_g.csv", "state.vtk"] {
        let x = fs::read(d.path().join("a").join(f)).unwrap();
        let y = fs::read(d.path().join("b").join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
    let hist = fs::read_to_string(d.path().join("a/cost_history.csv")).unwrap();
    let costs: Vec<f64> = hist.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(costs.windows(2).all(|w| w[1] <= w[0]));

    let m = json(&d.path().join("a/manifest.json"));
    for (name, hash) in m["artifacts"].as_object().unwrap() {
        let bytes = fs::read(d.path().join("a").join(name)).unwrap();
        let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hash.as_str().unwrap(), digest, "{name}");
    }
    assert!(m["config"].as_str().unwrap().contains("seed = 7"));
}

#[test]
fn sweep_rows_and_flags() {
    let d = scenario(SMALL);
    let o = rbm(&["sweep", "--config", "s.toml", "--axis", "ra=0,1,2", "--out", "w", "--threads", "2"], d.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rd = csv::Reader::from_path(d.path().join("w/sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(&rows[2][2], "2");
    assert!(rows.iter().all(|r| &r[12] == ""));

    assert_eq!(code(&rbm(&["sweep", "--config", "s.toml", "--axis", "ra="], d.path())), 1);
    assert_eq!(code(&rbm(&["sweep", "--config", "s.toml"], d.path())), 1);

    let d = scenario(&format!(
        "{SMALL}[params]\nra = 100.0\n[controls]\ng_bump = 1.0\nphi1_offset = 1.0\n[solver]\nmax_iters = 20\n[sweep]\naxis = \"ma\"\nvalues = [0.1, 1e5]\n"
    ));
    let o = rbm(&["sweep", "--config", "s.toml", "--out", "w"], d.path());
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(d.path().join("w/sweep.csv")).unwrap();
    let flags: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(flags, ["", "not_converged"]);
}

#[test]
fn sweep_output_does_not_depend_on_thread_count() {
    let d = scenario(SMALL);
    rbm(&["sweep", "--config", "s.toml", "--axis", "ma=0,0.5,1,2", "--out", "one", "--threads", "1"], d.path());
    rbm(&["sweep", "--config", "s.toml", "--axis", "ma=0,0.5,1,2", "--out", "four", "--threads", "4"], d.path());
    let a = fs::read(d.path().join("one/sweep.csv")).unwrap();
    let b = fs::read(d.path().join("four/sweep.csv")).unwrap();
    assert_eq!(a, b);
}
