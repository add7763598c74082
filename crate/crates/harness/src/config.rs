//! Experiment configuration: TOML with sections, `--set key=value` overrides
//! and a full precondition sweep before anything runs.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stochevo::analysis::ModulusSpec;
use stochevo::galerkin::{InitialGuess, Scheme, SolverConfig};
use stochevo::operators::NoiseShape;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    PorousMediumDemo,
    ReactionDiffusionDemo,
    GalerkinConvergence,
    TimestepConvergence,
    PathwiseUniqueness,
    HypothesisReport,
    BsdeLinearValidation,
    BsdePicardDemo,
    FunctionalDelayDemo,
    VolterraConsistency,
    BihariTable,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 11] = [
        ExperimentName::PorousMediumDemo,
        ExperimentName::ReactionDiffusionDemo,
        ExperimentName::GalerkinConvergence,
        ExperimentName::TimestepConvergence,
        ExperimentName::PathwiseUniqueness,
        ExperimentName::HypothesisReport,
        ExperimentName::BsdeLinearValidation,
        ExperimentName::BsdePicardDemo,
        ExperimentName::FunctionalDelayDemo,
        ExperimentName::VolterraConsistency,
        ExperimentName::BihariTable,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::PorousMediumDemo => "porous_medium_demo",
            ExperimentName::ReactionDiffusionDemo => "reaction_diffusion_demo",
            ExperimentName::GalerkinConvergence => "galerkin_convergence",
            ExperimentName::TimestepConvergence => "timestep_convergence",
            ExperimentName::PathwiseUniqueness => "pathwise_uniqueness",
            ExperimentName::HypothesisReport => "hypothesis_report",
            ExperimentName::BsdeLinearValidation => "bsde_linear_validation",
            ExperimentName::BsdePicardDemo => "bsde_picard_demo",
            ExperimentName::FunctionalDelayDemo => "functional_delay_demo",
            ExperimentName::VolterraConsistency => "volterra_consistency",
            ExperimentName::BihariTable => "bihari_table",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentName::PorousMediumDemo => "porous medium with |w_t| coefficient, replica statistics and invariant checks",
            ExperimentName::ReactionDiffusionDemo => "reaction-diffusion with |w_t| coefficients; linear_scalar operator gives the moment oracle",
            ExperimentName::GalerkinConvergence => "sup-H distance between X_n and the projection of X_2n",
            ExperimentName::TimestepConvergence => "implicit-Euler order on the heat equation and energy-identity residual",
            ExperimentName::PathwiseUniqueness => "contraction of two solutions driven by the same noise",
            ExperimentName::HypothesisReport => "sampled monotonicity/coercivity/growth/hemicontinuity and Yosida suites",
            ExperimentName::BsdeLinearValidation => "backward solver against the closed form for A = -x, X_T = W_T",
            ExperimentName::BsdePicardDemo => "Picard iterations in Z and in X for backward drivers",
            ExperimentName::FunctionalDelayDemo => "Picard iteration for the delay equation from two starts",
            ExperimentName::VolterraConsistency => "direct versus kernel-differentiated Volterra sums",
            ExperimentName::BihariTable => "Bihari bounds with comparison-ODE and zero-limit checks",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Operator selection for the forward experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorChoice {
    /// Porous medium with the `|w_t|` coefficient.
    #[serde(alias = "eq_1_1")]
    RandomPorousMedium,
    /// Reaction-diffusion with `|w_t|` coefficients and multiplicative noise.
    #[serde(alias = "eq_1_2")]
    RandomReactionDiffusion,
    PorousMedium,
    ReactionDiffusion,
    Heat,
    /// `du = a·u dt + b·u dw` on a one-point grid.
    LinearScalar,
}

impl OperatorChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            OperatorChoice::RandomPorousMedium => "random_porous_medium",
            OperatorChoice::RandomReactionDiffusion => "random_reaction_diffusion",
            OperatorChoice::PorousMedium => "porous_medium",
            OperatorChoice::ReactionDiffusion => "reaction_diffusion",
            OperatorChoice::Heat => "heat",
            OperatorChoice::LinearScalar => "linear_scalar",
        }
    }

    pub fn uses_p(self) -> bool {
        !matches!(self, OperatorChoice::Heat | OperatorChoice::LinearScalar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialShape {
    /// `amplitude·e₁`.
    FirstMode,
    /// `amplitude·4x(1 − x)` on the grid.
    Bump,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelId {
    /// `D(t, s) = e^{−(t−s)}`.
    ExpDecay,
    /// `D(t, s) = 1 + s`, independent of `t`.
    TimeIndependent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub operator: Option<OperatorChoice>,
    pub p: f64,
    pub noise: NoiseShape,
    pub noise_modes: usize,
    pub a: f64,
    pub b: f64,
    pub initial_shape: InitialShape,
    pub initial_amplitude: f64,
    /// Size of the perturbation between the two starts of pathwise_uniqueness.
    pub perturbation: f64,
    pub t_final: f64,
    pub kappa: f64,
    pub delay: f64,
    pub sigma: f64,
    pub kernel: KernelId,
    pub modulus: ModulusSpec,
    pub g0: f64,
    pub lambda: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            operator: None,
            p: 3.0,
            noise: NoiseShape::Modes { scale: 0.1 },
            noise_modes: 1,
            a: -1.0,
            b: 0.5,
            initial_shape: InitialShape::FirstMode,
            initial_amplitude: 1.0,
            perturbation: 0.1,
            t_final: 1.0,
            kappa: 0.5,
            delay: 0.1,
            sigma: 0.3,
            kernel: KernelId::ExpDecay,
            modulus: ModulusSpec::Linear { slope: 1.0 },
            g0: 1.0,
            lambda: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub n_grid: usize,
    pub n_modes_galerkin: usize,
    pub dt: f64,
    pub scheme: Scheme,
    pub resolvent_tol: f64,
    pub resolvent_max_iter: usize,
    pub rescale_lambda0: bool,
    pub initial_guess: InitialGuess,
    pub dt_levels: Vec<f64>,
    pub galerkin_levels: Vec<usize>,
    pub basis_degree: usize,
    pub picard_max_iter: usize,
    pub picard_tol: f64,
    pub hypothesis_samples: usize,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            n_grid: 32,
            n_modes_galerkin: 16,
            dt: 1e-3,
            scheme: Scheme::DriftImplicit,
            resolvent_tol: 1e-10,
            resolvent_max_iter: 50,
            rescale_lambda0: false,
            initial_guess: InitialGuess::Explicit,
            dt_levels: vec![4e-3, 2e-3, 1e-3],
            galerkin_levels: vec![8, 16, 32],
            basis_degree: 2,
            picard_max_iter: 50,
            picard_tol: 1e-10,
            hypothesis_samples: 500,
        }
    }
}

impl NumericsConfig {
    pub fn solver(&self, n: usize, dt: f64) -> SolverConfig {
        SolverConfig {
            n_modes_galerkin: n,
            dt,
            scheme: self.scheme,
            resolvent_tol: self.resolvent_tol,
            resolvent_max_iter: self.resolvent_max_iter,
            rescale_lambda0: self.rescale_lambda0,
            initial_guess: self.initial_guess,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    pub seed: u64,
}

fn default_replicas() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    #[serde(default)]
    pub svg: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentName,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    pub monte_carlo: MonteCarloConfig,
    pub output: OutputConfig,
}

const REQUIRED: [&str; 3] = ["experiment", "monte_carlo.seed", "output.dir"];

fn lookup<'a>(root: &'a toml::Value, path: &str) -> Option<&'a toml::Value> {
    path.split('.').try_fold(root, |v, key| v.get(key))
}

fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies `key.path=value`; the value is read as a TOML literal and falls
/// back to a bare string.
pub fn apply_override(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| HarnessError::Override(format!("`{assignment}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(HarnessError::Override(format!("empty key in `{path}`")));
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| HarnessError::Override(format!("`{path}` descends into a non-table")))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| HarnessError::Override(format!("`{path}` descends into a non-table")))?;
    table.insert(keys[keys.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

/// Parses TOML text with overrides into a validated configuration.
pub fn parse_config(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut root: toml::Value = text
        .parse::<toml::Table>()
        .map(toml::Value::Table)
        .map_err(|e| HarnessError::Syntax(e.to_string()))?;
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let missing: Vec<String> = REQUIRED
        .iter()
        .filter(|p| lookup(&root, p).is_none())
        .map(|p| p.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(HarnessError::Missing(missing));
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(root).map_err(|e| HarnessError::Field {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    let issues = cfg.precondition_issues();
    if !issues.is_empty() {
        return Err(HarnessError::Invalid(issues));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config(&text, overrides)
}

fn is_multiple(span: f64, dt: f64) -> bool {
    let r = span / dt;
    (r - r.round()).abs() <= 1e-9 * r.max(1.0)
}

impl ExperimentConfig {
    /// Operator used when the config does not name one.
    pub fn operator(&self) -> OperatorChoice {
        self.problem.operator.unwrap_or(match self.experiment {
            ExperimentName::PorousMediumDemo => OperatorChoice::RandomPorousMedium,
            ExperimentName::ReactionDiffusionDemo => OperatorChoice::RandomReactionDiffusion,
            ExperimentName::TimestepConvergence => OperatorChoice::Heat,
            ExperimentName::FunctionalDelayDemo => OperatorChoice::Heat,
            _ => OperatorChoice::PorousMedium,
        })
    }

    /// Every violated precondition, each naming its field.
    pub fn precondition_issues(&self) -> Vec<String> {
        let mut out = Vec::new();
        let pr = &self.problem;
        let nu = &self.numerics;
        let op = self.operator();
        let needs_p = op.uses_p()
            || matches!(
                self.experiment,
                ExperimentName::HypothesisReport | ExperimentName::GalerkinConvergence
            );
        if needs_p {
            check(
&mut out,
                pr.p >= 2.0 && pr.p.is_finite(),
                format!("problem.p = {} violates p >= 2 (exponent of the porous-medium and reaction-diffusion nonlinearities)", pr.p),
            );
        }
        check(&mut out, pr.t_final > 0.0 && pr.t_final.is_finite(), format!("problem.t_final = {} must be positive", pr.t_final));
        check(&mut out, nu.dt > 0.0 && nu.dt <= pr.t_final, format!("numerics.dt = {} must lie in (0, t_final]", nu.dt));
        if nu.dt > 0.0 && pr.t_final > 0.0 {
            check(
&mut out,
                is_multiple(pr.t_final, nu.dt),
                format!("problem.t_final = {} is not an integer multiple of numerics.dt = {}", pr.t_final, nu.dt),
            );
        }
        check(&mut out, nu.n_grid >= 1, "numerics.n_grid must be at least 1".into());
        check(
&mut out,
            nu.n_modes_galerkin >= 1 && nu.n_modes_galerkin <= nu.n_grid,
            format!("numerics.n_modes_galerkin = {} must lie in [1, n_grid = {}]", nu.n_modes_galerkin, nu.n_grid),
        );
        check(&mut out, nu.resolvent_tol > 0.0, "numerics.resolvent_tol must be positive".into());
        check(&mut out, nu.resolvent_max_iter >= 1, "numerics.resolvent_max_iter must be at least 1".into());
        check(&mut out, nu.picard_max_iter >= 1, "numerics.picard_max_iter must be at least 1".into());
        check(&mut out, nu.picard_tol > 0.0, "numerics.picard_tol must be positive".into());
        check(&mut out, nu.basis_degree <= 2, format!("numerics.basis_degree = {} exceeds 2", nu.basis_degree));
        check(&mut out, self.monte_carlo.replicas >= 1, "monte_carlo.replicas must be at least 1".into());
        check(&mut out, pr.noise_modes >= 1, "problem.noise_modes must be at least 1".into());
        check(&mut out, pr.sigma >= 0.0 && pr.sigma.is_finite(), "problem.sigma must be non-negative".into());
        check(&mut out, pr.kappa.is_finite(), "problem.kappa must be finite".into());
        if let Err(e) = pr.modulus.validate() {
            out.push(format!("problem.modulus: {e}"));
        }
        match self.experiment {
            ExperimentName::TimestepConvergence | ExperimentName::VolterraConsistency => {
                let levels = &nu.dt_levels;
                check(&mut out, levels.len() >= 3, "numerics.dt_levels needs at least three entries".into());
                for (i, dt) in levels.iter().enumerate() {
                    check(
&mut out,
                        *dt > 0.0 && is_multiple(pr.t_final, *dt),
                        format!("numerics.dt_levels[{i}] = {dt} must divide t_final"),
                    );
                }
                check(
&mut out,
                    levels.windows(2).all(|w| w[1] < w[0] && is_multiple(w[0], w[1])),
                    "numerics.dt_levels must decrease, each dividing the previous".into(),
                );
            }
            ExperimentName::GalerkinConvergence => {
                let levels = &nu.galerkin_levels;
                check(&mut out, levels.len() >= 2, "numerics.galerkin_levels needs at least two entries".into());
                check(
&mut out,
                    levels.iter().all(|n| *n >= 1 && 2 * n <= nu.n_grid),
                    format!("numerics.galerkin_levels: every 2n must be at most n_grid = {}", nu.n_grid),
                );
                check(&mut out, levels.windows(2).all(|w| w[1] > w[0]), "numerics.galerkin_levels must increase".into());
            }
            ExperimentName::FunctionalDelayDemo => {
                check(
&mut out,
                    pr.delay >= 0.0 && is_multiple(pr.delay, nu.dt),
                    format!("problem.delay = {} must be a non-negative multiple of numerics.dt", pr.delay),
                );
            }
            ExperimentName::BihariTable => {
                check(&mut out, pr.g0 > 0.0, format!("problem.g0 = {} must be positive", pr.g0));
                check(&mut out, pr.lambda >= 0.0, format!("problem.lambda = {} must be non-negative", pr.lambda));
            }
            _ => {}
        }
        if matches!(
            self.experiment,
            ExperimentName::GalerkinConvergence | ExperimentName::PathwiseUniqueness
        ) {
            check(
                &mut out,
                !matches!(op, OperatorChoice::RandomReactionDiffusion | OperatorChoice::LinearScalar),
                format!("problem.operator = {} has multiplicative noise; {} needs an additive one", op.as_str(), self.experiment),
            );
        }
        if op == OperatorChoice::LinearScalar
            && !matches!(self.experiment, ExperimentName::ReactionDiffusionDemo | ExperimentName::PorousMediumDemo)
        {
            out.push(format!("problem.operator = linear_scalar is only available to the forward demos, not {}", self.experiment));
        }
        if op == OperatorChoice::LinearScalar
            && matches!(self.experiment, ExperimentName::ReactionDiffusionDemo | ExperimentName::PorousMediumDemo)
        {
            check(
&mut out,
                nu.n_grid == 1 && nu.n_modes_galerkin == 1,
                "linear_scalar needs numerics.n_grid = 1 and numerics.n_modes_galerkin = 1".into(),
            );
        }
        out
    }
}

fn check(out: &mut Vec<String>, ok: bool, msg: String) {
    if !ok {
        out.push(msg);
    }
}
