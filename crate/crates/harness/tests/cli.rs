use std::path::Path;
use std::process::{Command, Output};

fn stochevo(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stochevo"))
        .args(args)
        .env("STOCHEVO_OUTPUT_ROOT", root)
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .unwrap()
}

fn config(name: &str) -> String {
    format!("../../configs/{name}.toml")
}

fn write(dir: &Path, text: &str) -> String {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn list_names_every_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stochevo(&["list"], tmp.path());
    assert!(o.status.success());
    let out = String::from_utf8_lossy(&o.stdout);
    for name in ["porous_medium_demo", "bsde_picard_demo", "volterra_consistency", "bihari_table"] {
        assert!(out.contains(name), "{out}");
    }
    assert_eq!(out.lines().count(), 11);
}

#[test]
fn shipped_configs_validate() {
    let tmp = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")).unwrap() {
        let path = entry.unwrap().path();
        let o = stochevo(&["validate", path.to_str().unwrap()], tmp.path());
        assert!(o.status.success(), "{}: {}", path.display(), text(&o));
    }
}

#[test]
fn run_writes_tables_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stochevo(&["run", &config("bihari_table"), "--set", "output.svg=true"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let dir = tmp.path().join("out/bihari_table");
    for f in ["bihari.csv", "zero_limit.csv", "manifest.json", "plot.svg"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 43);
    assert!(manifest["error"].is_null());
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
    let csv = std::fs::read_to_string(dir.join("bihari.csv")).unwrap();
    assert!(csv.starts_with("t,lambda_integral,bound,oracle\n0.0000000000000000e0,"));
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert_eq!(last[0], 1.0);
    assert!((last[2] - std::f64::consts::E).abs() < 1e-12, "{last:?}");
}

#[test]
fn missing_required_fields_are_listed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "[problem]\np = 3.0\n");
    let o = stochevo(&["validate", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let msg = text(&o);
    for f in ["experiment", "monte_carlo.seed", "output.dir"] {
        assert!(msg.contains(f), "{msg}");
    }
}

#[test]
fn precondition_names_field_and_bound() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stochevo(&["validate", &config("porous_medium_demo"), "--set", "problem.p=1.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let msg = text(&o);
    assert!(msg.contains("problem.p = 1.5") && msg.contains("p >= 2"), "{msg}");
}

#[test]
fn unknown_field_reports_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "experiment = \"bihari_table\"\n[numerics]\ndtt = 0.1\n[monte_carlo]\nseed = 1\n[output]\ndir = \"x\"\n",
    );
    let o = stochevo(&["validate", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("numerics"), "{}", text(&o));
}

#[test]
fn failed_assertion_exits_one_with_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    // Unreachable Picard tolerance: both solvers report non-convergence.
    let o = stochevo(
        &[
            "run",
            &config("bsde_picard_demo"),
            "--set",
            "numerics.picard_tol=1e-300",
            "--set",
            "monte_carlo.replicas=200",
            "--set",
            "numerics.picard_max_iter=5",
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("FAIL"));
    assert!(tmp.path().join("out/bsde_picard_demo/manifest.json").exists());
}

#[test]
fn experiment_error_exits_two_with_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let o = stochevo(&["run", &config("functional_delay_demo"), "--set", "numerics.picard_max_iter=1"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    let manifest = std::fs::read_to_string(tmp.path().join("out/functional_delay_demo/manifest.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert!(v["error"].as_str().unwrap().contains("functional_delay_demo"), "{manifest}");
}
