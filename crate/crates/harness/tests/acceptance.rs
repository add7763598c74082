//! The twelve acceptance criteria, run sequentially from the shipped configs.
//! Prints one PASS/FAIL line per criterion, then fails if any line failed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use stochevo_harness::{parse_config, run, ExperimentOutput};

const CONFIGS: [(&str, &str); 12] = [
    ("linear_scalar_moment", include_str!("../../../configs/linear_scalar_moment.toml")),
    ("timestep_convergence", include_str!("../../../configs/timestep_convergence.toml")),
    ("galerkin_convergence", include_str!("../../../configs/galerkin_convergence.toml")),
    ("hypothesis_report", include_str!("../../../configs/hypothesis_report.toml")),
    ("bsde_linear_validation", include_str!("../../../configs/bsde_linear_validation.toml")),
    ("bsde_picard_demo", include_str!("../../../configs/bsde_picard_demo.toml")),
    ("bihari_table", include_str!("../../../configs/bihari_table.toml")),
    ("functional_delay_demo", include_str!("../../../configs/functional_delay_demo.toml")),
    ("volterra_consistency", include_str!("../../../configs/volterra_consistency.toml")),
    ("porous_medium_demo", include_str!("../../../configs/porous_medium_demo.toml")),
    ("reaction_diffusion_demo", include_str!("../../../configs/reaction_diffusion_demo.toml")),
    ("pathwise_uniqueness", include_str!("../../../configs/pathwise_uniqueness.toml")),
];

struct Outcome {
    output: ExperimentOutput,
    seconds: f64,
    dir: PathBuf,
}

fn run_config(name: &str, text: &str, root: &Path) -> Outcome {
    let dir = root.join(name);
    let over = vec![format!("output.dir=\"{}\"", dir.display())];
    let cfg = parse_config(text, &over).unwrap_or_else(|e| panic!("{name}: {e}"));
    let clock = Instant::now();
    let report = run(&cfg, &dir);
    let seconds = clock.elapsed().as_secs_f64();
    if let Some(e) = &report.error {
        panic!("{name}: {e}");
    }
    Outcome {
        output: report.output.expect("output present without error"),
        seconds,
        dir,
    }
}

/// Passes when every named assertion exists and holds and the run met its budget.
fn verdict(out: &Outcome, prefixes: &[&str], budget: f64) -> (bool, String) {
    let picked: Vec<_> = out
        .output
        .assertions
        .iter()
        .filter(|a| prefixes.iter().any(|p| a.name.starts_with(p)))
        .collect();
    let ok = !picked.is_empty() && picked.iter().all(|a| a.passed) && out.seconds < budget;
    let mut detail: Vec<String> = picked
        .iter()
        .map(|a| format!("{}{}: {}", if a.passed { "" } else { "!" }, a.name, a.detail))
        .collect();
    detail.push(format!("{:.2}s of {budget}s", out.seconds));
    (ok, detail.join("; "))
}

fn csv_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension().is_some_and(|x| x == "csv"))
                .then(|| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        })
        .collect()
}

#[test]
fn acceptance_criteria() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let runs: BTreeMap<&str, Outcome> = CONFIGS.iter().map(|(n, t)| (*n, run_config(n, t, first.path()))).collect();

    let table: [(&str, &str, &[&str], f64); 11] = [
        ("1 linear SEE second moment", "linear_scalar_moment", &["second_moment_oracle"], 30.0),
        ("2 implicit Euler order", "timestep_convergence", &["implicit_euler_halving"], 5.0),
        ("3 Galerkin nesting", "galerkin_convergence", &["nesting_distance_decreases"], 60.0),
        ("4 energy identity residual", "timestep_convergence", &["energy_residual_halving"], 10.0),
        ("5 hypothesis checkers", "hypothesis_report", &["random_porous_medium", "random_reaction_diffusion", "planted_sine_flagged"], 10.0),
        ("6 Yosida properties", "hypothesis_report", &["yosida_"], 5.0),
        ("7 BSDE closed form", "bsde_linear_validation", &["x_closed_form", "z_closed_form"], 60.0),
        ("8 Picard diagnostics", "bsde_picard_demo", &["picard_z_eventually_decreasing", "picard_x_rho1_converges"], 60.0),
        ("9 Bihari suite", "bihari_table", &["linear_equals_gronwall", "rho1_matches", "zero_limit"], 5.0),
        ("10 functional uniqueness", "functional_delay_demo", &["fixed_points_agree", "differences_below_iterate_bound"], 30.0),
        ("11 Volterra reduction", "volterra_consistency", &["discrepancy_halves"], 10.0),
    ];
    let mut lines = Vec::new();
    for (label, exp, prefixes, budget) in table {
        let (ok, detail) = verdict(&runs[exp], prefixes, budget);
        lines.push((label.to_string(), ok, detail));
    }

    let mut mismatched = Vec::new();
    for (name, text) in CONFIGS {
        let again = run_config(name, text, second.path());
        let (a, b) = (csv_bytes(&runs[name].dir), csv_bytes(&again.dir));
        if a.is_empty() || a != b {
            mismatched.push(name);
        }
    }
    lines.push((
        "12 determinism".into(),
        mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{} experiments byte-identical on rerun", CONFIGS.len())
        } else {
            format!("differing CSVs: {mismatched:?}")
        },
    ));

    for (label, ok, detail) in &lines {
        println!("{} criterion {label}: {detail}", if *ok { "PASS" } else { "FAIL" });
    }
    let failed: Vec<_> = lines.iter().filter(|l| !l.1).map(|l| l.0.clone()).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
