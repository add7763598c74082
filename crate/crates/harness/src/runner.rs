use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::experiments::run_experiment;
use crate::output::{render_svg, ExperimentOutput, RunManifest};

/// Relative output directories are joined onto this variable when set.
pub const OUTPUT_ROOT_VAR: &str = "STOCHEVO_OUTPUT_ROOT";

pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    let dir = PathBuf::from(&cfg.output.dir);
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

#[derive(Debug)]
pub struct RunReport {
    pub dir: PathBuf,
    pub output: Option<ExperimentOutput>,
    pub error: Option<HarnessError>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    /// 0 when every assertion holds, 1 when one fails, 2 on error.
    pub fn exit_code(&self) -> i32 {
        match (&self.error, &self.output) {
            (Some(e), _) => e.exit_code(),
            (None, Some(out)) if out.all_passed() => 0,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write_outputs(out: &ExperimentOutput, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for t in &out.tables {
        files.push(t.write(dir)?);
    }
    if cfg.output.svg && !out.series.is_empty() {
        let path = dir.join("plot.svg");
        std::fs::write(&path, render_svg(cfg.experiment.as_str(), &out.series)).map_err(io_err(&path))?;
        files.push(path);
    }
    Ok(files)
}

/// Runs one experiment into `dir`. The manifest is written even when the
/// experiment fails.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> RunReport {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let mut report = RunReport {
        dir: dir.to_path_buf(),
        output: None,
        error: None,
        files: Vec::new(),
    };
    if let Err(e) = std::fs::create_dir_all(dir).map_err(io_err(dir)) {
        report.error = Some(e);
        return report;
    }
    match run_experiment(cfg) {
        Ok(out) => {
            match write_outputs(&out, cfg, dir) {
                Ok(files) => report.files = files,
                Err(e) => report.error = Some(e),
            }
            report.output = Some(out);
        }
        Err(source) => {
            report.error = Some(HarnessError::Experiment {
                experiment: cfg.experiment.to_string(),
                source,
            })
        }
    }
    let manifest = RunManifest {
        config: serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null),
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.monte_carlo.seed,
        started_unix: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        summary: report.output.as_ref().map(|o| o.summary.clone()).unwrap_or_default(),
        assertions: report.output.as_ref().map(|o| o.assertions.clone()).unwrap_or_default(),
        files: report
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        error: report.error.as_ref().map(|e| e.to_string()),
    };
    match manifest.write(dir) {
        Ok(p) => report.files.push(p),
        Err(e) => {
            report.error.get_or_insert(e);
        }
    }
    report
}
