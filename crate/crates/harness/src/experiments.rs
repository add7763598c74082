//! The experiment registry. Each experiment turns a validated config into
//! tables, summary statistics and pass/fail assertions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use stochevo::analysis::{bihari_bound, convergence_order, zero_limit_check, ModulusSpec};
use stochevo::bsde::{
    apriori_bound_check, martingale_check, non_monotone_steps, picard_in_x, picard_in_z, simulate_paths,
    solve_bsde_autonomous_c, terminal_consistency, BsdeOptions, BsdeProblem, Driver,
};
use stochevo::functional::{
    check_partials, delay_direct_stepping, picard_solve_functional, trajectory_distance, volterra_consistency,
    FunctionalCoefficients, InitialIterate, Kernel, PicardOptions, SegmentPath, SegmentView, VolterraCoefficients,
};
use stochevo::galerkin::{apriori_norms, solve_forward, solve_problem, sup_h_distance, SolutionPath};
use stochevo::operators::{
    builtin, check_boundedness, check_coercivity, check_hemicontinuity, check_monotonicity, BuiltinKind,
    BuiltinOptions, DiffusionMap, HypothesisBundle, NoiseShape, OperatorSet, PorousMediumDrift,
    ReactionDiffusionDrift, ScalarFn, StateSampler, ViolationReport,
};
use stochevo::process::TimeProfile;
use stochevo::resolvent::{
    check_yosida_properties, yosida_error_sweep, CubicMap, LinearMap, MonotoneMap, ResolventOptions, SineMap,
    YosidaSampler,
};
use stochevo::triple::{DiscreteTriple, Flavor, GridFunction};
use stochevo::{Error, NoisePath, Process, Result};

use crate::config::{ExperimentConfig, ExperimentName, InitialShape, KernelId, OperatorChoice};
use crate::output::{Cell, ExperimentOutput, Series, Table};

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match cfg.experiment {
        ExperimentName::PorousMediumDemo | ExperimentName::ReactionDiffusionDemo => forward_demo(cfg),
        ExperimentName::GalerkinConvergence => galerkin_convergence(cfg),
        ExperimentName::TimestepConvergence => timestep_convergence(cfg),
        ExperimentName::PathwiseUniqueness => pathwise_uniqueness(cfg),
        ExperimentName::HypothesisReport => hypothesis_report(cfg),
        ExperimentName::BsdeLinearValidation => bsde_linear_validation(cfg),
        ExperimentName::BsdePicardDemo => bsde_picard_demo(cfg),
        ExperimentName::FunctionalDelayDemo => functional_delay_demo(cfg),
        ExperimentName::VolterraConsistency => volterra_experiment(cfg),
        ExperimentName::BihariTable => bihari_table(cfg),
    }
}

fn n_steps(t_final: f64, dt: f64) -> usize {
    (t_final / dt).round() as usize
}

pub fn operator_set(cfg: &ExperimentConfig, choice: OperatorChoice) -> Result<OperatorSet> {
    let p = cfg.problem.p;
    let kind = match choice {
        OperatorChoice::RandomPorousMedium => BuiltinKind::RandomPorousMedium { p },
        OperatorChoice::RandomReactionDiffusion => BuiltinKind::RandomReactionDiffusion { p },
        OperatorChoice::PorousMedium => BuiltinKind::PorousMedium { p },
        OperatorChoice::ReactionDiffusion => BuiltinKind::ReactionDiffusion { p },
        OperatorChoice::Heat => BuiltinKind::Heat,
        OperatorChoice::LinearScalar => return linear_scalar(cfg),
    };
    builtin(
        kind,
        BuiltinOptions {
            n_grid: cfg.numerics.n_grid,
            n_modes: cfg.problem.noise_modes,
            noise: cfg.problem.noise,
        },
    )
}

/// `du = a·u dt + b·u dw` on a one-point grid.
fn linear_scalar(cfg: &ExperimentConfig) -> Result<OperatorSet> {
    let (a, b) = (cfg.problem.a, cfg.problem.b);
    let triple = Arc::new(DiscreteTriple::new(1, Flavor::ReactionDiffusion { q1: 2.0, q2: 2.0 })?);
    let drift = ReactionDiffusionDrift::new(
        triple.clone(),
        ScalarFn::Linear { slope: 1.0 },
        Process::zero(),
        ScalarFn::Linear { slope: 1.0 },
        Process::Constant(-a),
    )?;
    let diffusion = DiffusionMap::Multiplicative(vec![(Process::Constant(b), ScalarFn::Linear { slope: 1.0 })]);
    // 2⟨u, au⟩ + |bu|² = (2a + b²)|u|².
    let bundle = HypothesisBundle {
        lambda0: Process::Constant((2.0 * a + b * b).max(0.0)),
        lambda1: Process::zero(),
        lambda2: Process::zero(),
        lambda3: Process::Constant((2.0 * a + b * b).max(0.0)),
        xi: Process::zero(),
        eta1: Process::zero(),
        eta2: Process::zero(),
        q1: 2.0,
        q2: 2.0,
        c_a1: 1.0,
        c_a2: 1.0,
        c1: 1.0,
    };
    Ok(OperatorSet {
        name: format!("linear_scalar(a={a}, b={b})"),
        triple,
        drift: Arc::new(drift),
        diffusion,
        bundle,
    })
}

fn initial_state(triple: &DiscreteTriple, shape: InitialShape, amplitude: f64) -> Result<GridFunction> {
    let values = match shape {
        InitialShape::FirstMode => triple.basis_vector(0).into_iter().map(|v| amplitude * v).collect(),
        InitialShape::Bump => triple.nodes().into_iter().map(|x| amplitude * 4.0 * x * (1.0 - x)).collect(),
    };
    triple.function(values)
}

fn report_row(table: &mut Table, operator: &str, r: &ViolationReport) {
    table.push(vec![
        operator.into(),
        r.check.clone().into(),
        r.n_samples.into(),
        r.count().into(),
        r.max_relative_excess.into(),
        r.violations.first().map(|v| v.detail.clone()).unwrap_or_default().into(),
    ]);
}

fn hypothesis_reports(set: &OperatorSet, sampler: &StateSampler) -> Vec<ViolationReport> {
    vec![
        check_monotonicity(set.drift.as_ref(), &set.diffusion, &set.bundle, sampler),
        check_coercivity(set.drift.as_ref(), &set.diffusion, &set.bundle, sampler),
        check_boundedness(set.drift.as_ref(), &set.bundle, sampler),
        check_hemicontinuity(set.drift.as_ref(), sampler),
    ]
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

struct ReplicaStats {
    final_h_sq: f64,
    energy_lhs: f64,
    sup_h_sq: f64,
    energy: f64,
    apriori_lhs: f64,
    apriori_rhs: f64,
    exceeded: bool,
    path: Option<SolutionPath>,
}

fn forward_demo(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let pr = &cfg.problem;
    let nu = &cfg.numerics;
    let choice = cfg.operator();
    let set = operator_set(cfg, choice)?;
    let x0 = initial_state(&set.triple, pr.initial_shape, pr.initial_amplitude)?;
    let solver = nu.solver(nu.n_modes_galerkin, nu.dt);
    let steps = n_steps(pr.t_final, nu.dt);
    let modes = set.diffusion.n_modes().max(1);
    let seed = cfg.monte_carlo.seed;
    let stats: Vec<ReplicaStats> = (0..cfg.monte_carlo.replicas)
        .into_par_iter()
        .map(|r| -> Result<ReplicaStats> {
            let noise = NoisePath::sample_replica(seed, r as u64, pr.t_final, steps, modes)?;
            let path = solve_problem(&solver, set.drift.clone(), &set.diffusion, &set.bundle, &noise, &x0)?;
            let ap = apriori_norms(&path, &set.bundle);
            Ok(ReplicaStats {
                final_h_sq: path.ledger.last().map_or(0.0, |l| l.h_norm_sq),
                energy_lhs: path.ledger.last().map_or(0.0, |l| l.h_norm_sq) + ap.int_lambda_x[0] + ap.int_lambda_x[1],
                sup_h_sq: ap.sup_h_sq,
                energy: path.cumulative_energy_residual(),
                apriori_lhs: ap.lhs,
                apriori_rhs: ap.rhs,
                exceeded: ap.exceeded,
                path: (r == 0).then_some(path),
            })
        })
        .collect::<Result<_>>()?;

    let mut out = ExperimentOutput::default();
    let mut replicas = Table::new(
        "replicas",
        &["replica", "final_h_norm_sq", "sup_h_norm_sq", "energy_residual", "apriori_lhs", "apriori_rhs"],
    );
    for (r, s) in stats.iter().enumerate() {
        replicas.push(vec![r.into(), s.final_h_sq.into(), s.sup_h_sq.into(), s.energy.into(), s.apriori_lhs.into(), s.apriori_rhs.into()]);
    }
    let finals: Vec<f64> = stats.iter().map(|s| s.final_h_sq).collect();
    let (mean, se) = mean_and_se(&finals);
    out.stat("replicas", stats.len() as f64);
    out.stat("mean_final_h_norm_sq", mean);
    out.stat("se_final_h_norm_sq", se);
    out.stat("mean_energy_residual", stats.iter().map(|s| s.energy).sum::<f64>() / stats.len() as f64);
    let exceeded = stats.iter().filter(|s| s.exceeded).count();
    out.stat("apriori_pathwise_exceeded", exceeded as f64);
    out.assert("all_states_finite", finals.iter().all(|v| v.is_finite()), format!("{} replicas", finals.len()));
    // The estimate holds in mean: E|X(T)|² + Σ E∫λᵢ|X|^{qᵢ} against E[e^m·budget].
    let (lhs, lhs_se) = mean_and_se(&stats.iter().map(|s| s.energy_lhs).collect::<Vec<_>>());
    let (rhs, _) = mean_and_se(&stats.iter().map(|s| s.apriori_rhs).collect::<Vec<_>>());
    out.stat("apriori_mean_lhs", lhs);
    out.stat("apriori_mean_rhs", rhs);
    let slack = if stats.len() > 1 { 3.0 * lhs_se } else { 0.0 };
    out.assert(
        "apriori_budget_in_mean",
        lhs <= rhs + slack,
        format!("mean lhs {lhs:.4e} vs mean e^m*budget {rhs:.4e}; {exceeded} single paths above"),
    );

    if let Some(path) = stats.first().and_then(|s| s.path.as_ref()) {
        let (header, rows) = path.table();
        out.tables.push(Table::numeric("trajectory", header, rows));
        out.series.push(Series {
            label: "|X(t)|_H^2, replica 0".into(),
            points: path.times.iter().zip(&path.ledger).map(|(t, l)| (*t, l.h_norm_sq)).collect(),
        });
    }
    out.tables.push(replicas);

    if choice == OperatorChoice::LinearScalar {
        let exact = (2.0 * pr.a + pr.b * pr.b) * pr.t_final;
        let exact = exact.exp() * pr.initial_amplitude.powi(2);
        let gap = (mean - exact).abs();
        out.stat("moment_exact", exact);
        out.stat("moment_gap_in_se", gap / se);
        out.assert(
            "second_moment_oracle",
            gap <= 3.0 * se,
            format!("mean {mean:.6} vs exact {exact:.6}, gap {:.2} standard errors", gap / se),
        );
    } else {
        let sampler = StateSampler::new(seed, nu.hypothesis_samples);
        let mut table = Table::new("hypotheses", &["operator", "check", "samples", "violations", "max_relative_excess", "first_violation"]);
        for r in hypothesis_reports(&set, &sampler) {
            report_row(&mut table, &set.name, &r);
            out.assert(&format!("hypothesis_{}", r.check), r.passed(), format!("{} violations in {} samples", r.count(), r.n_samples));
        }
        out.tables.push(table);
    }
    Ok(out)
}

fn galerkin_convergence(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let pr = &cfg.problem;
    let nu = &cfg.numerics;
    let set = operator_set(cfg, cfg.operator())?;
    if !set.diffusion.is_constant() {
        return Err(Error::Config("galerkin_convergence needs a constant diffusion".into()));
    }
    let x0 = initial_state(&set.triple, pr.initial_shape, pr.initial_amplitude)?;
    let steps = n_steps(pr.t_final, nu.dt);
    let noise = NoisePath::sample(cfg.monte_carlo.seed, pr.t_final, steps, set.diffusion.n_modes().max(1))?;
    let levels = &nu.galerkin_levels;
    let distances: Vec<f64> = levels
        .par_iter()
        .map(|&n| -> Result<f64> {
            let coarse = solve_forward(&nu.solver(n, nu.dt), set.drift.clone(), &set.diffusion, &noise, &x0)?;
            let fine = solve_forward(&nu.solver(2 * n, nu.dt), set.drift.clone(), &set.diffusion, &noise, &x0)?;
            sup_h_distance(&set.triple, &coarse, &fine)
        })
        .collect::<Result<_>>()?;
    let mut out = ExperimentOutput::default();
    let mut table = Table::new("galerkin_distance", &["n", "sup_h_distance"]);
    for (n, d) in levels.iter().zip(&distances) {
        table.push(vec![(*n).into(), (*d).into()]);
        out.stat(&format!("distance_n{n}"), *d);
    }
    out.tables.push(table);
    out.series.push(Series {
        label: "sup-H distance vs n".into(),
        points: levels.iter().map(|n| *n as f64).zip(distances.iter().cloned()).collect(),
    });
    let ok = distances.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    out.assert(
        "nesting_distance_decreases",
        ok,
        format!("distances {distances:?} (10% slack per level)"),
    );
    Ok(out)
}

fn heat_set(cfg: &ExperimentConfig, noise: NoiseShape, modes: usize) -> Result<OperatorSet> {
    builtin(
        BuiltinKind::Heat,
        BuiltinOptions {
            n_grid: cfg.numerics.n_grid,
            n_modes: modes,
            noise,
        },
    )
}

fn ratios(values: &[f64]) -> Vec<f64> {
    values.windows(2).map(|w| w[0] / w[1]).collect()
}

fn timestep_convergence(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let pr = &cfg.problem;
    let nu = &cfg.numerics;
    let n = nu.n_modes_galerkin;
    let levels = &nu.dt_levels;
    let mut out = ExperimentOutput::default();

    // Deterministic heat flow from e₁ against e^{−μ₁t}e₁.
    let det = heat_set(cfg, NoiseShape::Zero, 1)?;
    let mu1 = det.triple.eigenvalues()[0];
    let x0 = initial_state(&det.triple, InitialShape::FirstMode, 1.0)?;
    let mut errors = Vec::new();
    for &dt in levels {
        let noise = NoisePath::sample(cfg.monte_carlo.seed, pr.t_final, n_steps(pr.t_final, dt), 1)?;
        let path = solve_forward(&nu.solver(n, dt), det.drift.clone(), &det.diffusion, &noise, &x0)?;
        let err = path
            .times
            .iter()
            .zip(&path.coords)
            .map(|(t, c)| {
                let lead = c[0] - (-mu1 * t).exp();
                (lead * lead + c[1..].iter().map(|v| v * v).sum::<f64>()).sqrt()
            })
            .fold(0.0, f64::max);
        errors.push(err);
    }
    let mut table = Table::new("deterministic_error", &["dt", "sup_h_error"]);
    for (dt, e) in levels.iter().zip(&errors) {
        table.push(vec![(*dt).into(), (*e).into()]);
    }
    out.tables.push(table);
    let r = ratios(&errors);
    out.stat("deterministic_order", convergence_order(levels, &errors)?);
    out.assert(
        "implicit_euler_halving",
        r.iter().all(|x| (1.7..=2.3).contains(x)),
        format!("error ratios {r:?}"),
    );

    // Energy-identity residual with linear drift and constant noise.
    let noisy = heat_set(cfg, pr.noise, pr.noise_modes)?;
    let finest = *levels.last().expect("validated levels");
    let fine_noise = NoisePath::sample(cfg.monte_carlo.seed, pr.t_final, n_steps(pr.t_final, finest), pr.noise_modes)?;
    let x0 = initial_state(&noisy.triple, pr.initial_shape, pr.initial_amplitude)?;
    let mut residuals = Vec::new();
    for &dt in levels {
        let path = solve_forward(&nu.solver(n, dt), noisy.drift.clone(), &noisy.diffusion, &fine_noise, &x0)?;
        residuals.push(path.cumulative_energy_residual());
    }
    let mut table = Table::new("energy_residual", &["dt", "cumulative_residual", "residual_over_dt"]);
    for (dt, e) in levels.iter().zip(&residuals) {
        table.push(vec![(*dt).into(), (*e).into(), (e / dt).into()]);
    }
    out.tables.push(table);
    let constant = residuals.iter().zip(levels).map(|(e, dt)| e / dt).fold(0.0, f64::max);
    out.stat("energy_residual_constant", constant);
    let r = ratios(&residuals);
    out.assert(
        "energy_residual_halving",
        r.iter().all(|x| (1.6..=2.4).contains(x)),
        format!("residual ratios {r:?}, residual <= {constant:.4e}*dt"),
    );
    out.series.push(Series {
        label: "sup H-error vs dt".into(),
        points: levels.iter().cloned().zip(errors.iter().cloned()).collect(),
    });
    Ok(out)
}

fn pathwise_uniqueness(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let pr = &cfg.problem;
    let nu = &cfg.numerics;
    let set = operator_set(cfg, cfg.operator())?;
    if !set.diffusion.is_constant() {
        return Err(Error::Config("pathwise_uniqueness compares paths under additive noise only".into()));
    }
    let x0 = initial_state(&set.triple, pr.initial_shape, pr.initial_amplitude)?;
    let y0 = {
        let n2 = set.triple.basis_vector(1.min(set.triple.n_grid() - 1));
        set.triple.function(x0.values().iter().zip(&n2).map(|(a, b)| a + pr.perturbation * b).collect())?
    };
    let steps = n_steps(pr.t_final, nu.dt);
    let modes = set.diffusion.n_modes().max(1);
    let solver = nu.solver(nu.n_modes_galerkin, nu.dt);
    let mut alt = solver.clone();
    alt.initial_guess = match solver.initial_guess {
        stochevo::galerkin::InitialGuess::Zero => stochevo::galerkin::InitialGuess::Explicit,
        _ => stochevo::galerkin::InitialGuess::Zero,
    };
    let seed = cfg.monte_carlo.seed;
    struct Row {
        d0: f64,
        d_final: f64,
        max_increase: f64,
        guess_gap: f64,
        distances: Vec<f64>,
    }
    let rows: Vec<Row> = (0..cfg.monte_carlo.replicas)
        .into_par_iter()
        .map(|r| -> Result<Row> {
            let noise = NoisePath::sample_replica(seed, r as u64, pr.t_final, steps, modes)?;
            let a = solve_forward(&solver, set.drift.clone(), &set.diffusion, &noise, &x0)?;
            let b = solve_forward(&solver, set.drift.clone(), &set.diffusion, &noise, &y0)?;
            let c = solve_forward(&alt, set.drift.clone(), &set.diffusion, &noise, &x0)?;
            let distances: Vec<f64> = a
                .states
                .iter()
                .zip(&b.states)
                .map(|(u, v)| {
                    let d: Vec<f64> = u.values().iter().zip(v.values()).map(|(p, q)| p - q).collect();
                    set.triple.h_norm(&d)
                })
                .collect();
            let max_increase = distances.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            Ok(Row {
                d0: distances[0],
                d_final: *distances.last().expect("non-empty"),
                max_increase,
                guess_gap: sup_h_distance(&set.triple, &a, &c)?,
                distances: if r == 0 { distances } else { Vec::new() },
            })
        })
        .collect::<Result<_>>()?;
    let mut out = ExperimentOutput::default();
    let mut table = Table::new("replicas", &["replica", "initial_distance", "final_distance", "max_increase", "initial_guess_gap"]);
    for (r, row) in rows.iter().enumerate() {
        table.push(vec![r.into(), row.d0.into(), row.d_final.into(), row.max_increase.into(), row.guess_gap.into()]);
    }
    out.tables.push(table);
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * nu.dt).collect();
    let mut dist = Table::new("distance", &["t", "h_distance"]);
    for (t, d) in times.iter().zip(&rows[0].distances) {
        dist.push(vec![(*t).into(), (*d).into()]);
    }
    out.series.push(Series {
        label: "|X - Y|_H, replica 0".into(),
        points: times.iter().cloned().zip(rows[0].distances.iter().cloned()).collect(),
    });
    out.tables.push(dist);
    let worst_increase = rows.iter().map(|r| r.max_increase / r.d0.max(1e-300)).fold(f64::NEG_INFINITY, f64::max);
    let worst_gap = rows.iter().map(|r| r.guess_gap).fold(0.0, f64::max);
    out.stat("max_relative_increase", worst_increase);
    out.stat("max_initial_guess_gap", worst_gap);
    out.assert(
        "distance_non_increasing",
        worst_increase <= 1e-8,
        format!("largest one-step increase {worst_increase:.3e} relative to the initial distance"),
    );
    out.assert(
        "solver_start_independent",
        worst_gap <= 1e-8 * pr.initial_amplitude.abs().max(1.0),
        format!("sup distance between solves from different initial guesses {worst_gap:.3e}"),
    );
    Ok(out)
}

fn hypothesis_report(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let nu = &cfg.numerics;
    let seed = cfg.monte_carlo.seed;
    let sampler = StateSampler::new(seed, nu.hypothesis_samples);
    let mut out = ExperimentOutput::default();
    let mut table = Table::new("hypotheses", &["operator", "check", "samples", "violations", "max_relative_excess", "first_violation"]);
    for choice in [OperatorChoice::RandomPorousMedium, OperatorChoice::RandomReactionDiffusion] {
        let set = operator_set(cfg, choice)?;
        let reports = hypothesis_reports(&set, &sampler);
        let total: usize = reports.iter().map(|r| r.count()).sum();
        for r in &reports {
            report_row(&mut table, &set.name, r);
        }
        out.assert(
            &format!("{}_satisfies_hypotheses", set.name),
            total == 0,
            format!("{total} violations over {} samples per check", nu.hypothesis_samples),
        );
    }
    // Planted non-monotone operator: porous medium with φ = sin.
    let pm = operator_set(cfg, OperatorChoice::PorousMedium)?;
    let planted = OperatorSet {
        name: "planted_sine".into(),
        drift: Arc::new(PorousMediumDrift::new(pm.triple.clone(), ScalarFn::Sine, Process::Constant(1.0))?),
        ..pm
    };
    let mono = check_monotonicity(planted.drift.as_ref(), &planted.diffusion, &planted.bundle, &sampler);
    report_row(&mut table, &planted.name, &mono);
    out.assert(
        "planted_sine_flagged",
        mono.count() >= 1,
        format!("{} monotonicity violations", mono.count()),
    );
    out.tables.push(table);

    let opts = ResolventOptions::default();
    let ysampler = YosidaSampler::new(seed, 1000);
    let linear = LinearMap {
        matrix: DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.0, -1.0, -1.0, 0.5, 0.0, -0.5, -3.0]),
    };
    let cubic = CubicMap { dim: 3, coeff: 1.0 };
    let sine = SineMap { dim: 3 };
    let maps: [(&str, &dyn MonotoneMap); 3] = [("linear", &linear), ("cubic", &cubic), ("sine", &sine)];
    let mut ytable = Table::new("yosida", &["map", "samples", "violations", "max_relative_excess", "first_violation"]);
    let mut sweep = Table::new("yosida_sweep", &["map", "eps", "error"]);
    for (name, map) in maps {
        let r = check_yosida_properties(map, &ysampler, opts);
        ytable.push(vec![
            name.into(),
            r.n_samples.into(),
            r.count().into(),
            r.max_relative_excess.into(),
            r.violations.first().map(|v| v.detail.clone()).unwrap_or_default().into(),
        ]);
        for (eps, err) in yosida_error_sweep(map, &[0.7, -1.3, 2.1], opts) {
            sweep.push(vec![name.into(), eps.into(), err.into()]);
        }
        match name {
            "sine" => out.assert(
                "yosida_sine_violates_I",
                r.violations.iter().any(|v| v.detail.starts_with("(I)")),
                format!("{} violations", r.count()),
            ),
            _ => out.assert(&format!("yosida_{name}"), r.passed(), format!("{} violations in {} samples", r.count(), r.n_samples)),
        }
    }
    out.tables.push(ytable);
    out.tables.push(sweep);
    Ok(out)
}

fn bsde_options(cfg: &ExperimentConfig) -> BsdeOptions {
    BsdeOptions {
        basis_degree: cfg.numerics.basis_degree,
        resolvent: ResolventOptions {
            tol: cfg.numerics.resolvent_tol,
            max_iter: cfg.numerics.resolvent_max_iter,
        },
        ..BsdeOptions::default()
    }
}

fn bsde_linear_validation(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let pr = &cfg.problem;
    let nu = &cfg.numerics;
    let t_final = pr.t_final;
    let steps = n_steps(t_final, nu.dt);
    let seed = cfg.monte_carlo.seed;
    let problem = BsdeProblem::new(
        Arc::new(LinearMap::scaled_identity(1, -1.0)),
        Driver::zero(1),
        |w: &[f64]| vec![w[0]],
        t_final,
        1,
    );
    let paths = simulate_paths(seed, cfg.monte_carlo.replicas, t_final, steps, 1)?;
    let sol = solve_bsde_autonomous_c(&problem, &paths, &bsde_options(cfg))?;
    let mut out = ExperimentOutput::default();
    let mut table = Table::new(
        "bsde_errors",
        &["t", "rms_error_x", "rms_error_z", "regression_error_x", "regression_error_z", "budget_x", "budget_z"],
    );
    for frac in [0.25, 0.5, 0.75] {
        let t = frac * t_final;
        let k = (t / nu.dt).round() as usize;
        let decay = (-(t_final - t)).exp();
        let n = sol.n_paths as f64;
        let ex = ((0..sol.n_paths).map(|i| (sol.x(k, i)[0] - decay * paths[i].value(k)[0]).powi(2)).sum::<f64>() / n).sqrt();
        let ez = ((0..sol.n_paths).map(|i| (sol.z(k, i)[0] - decay).powi(2)).sum::<f64>() / n).sqrt();
        let bx = 5.0 * (nu.dt + sol.regression_error_x[k]);
        let bz = 5.0 * (nu.dt + sol.regression_error_z[k]);
        table.push(vec![t.into(), ex.into(), ez.into(), sol.regression_error_x[k].into(), sol.regression_error_z[k].into(), bx.into(), bz.into()]);
        out.assert(&format!("x_closed_form_t{frac}"), ex < bx, format!("rms {ex:.4e} vs budget {bx:.4e}"));
        out.assert(&format!("z_closed_form_t{frac}"), ez < bz, format!("rms {ez:.4e} vs budget {bz:.4e}"));
    }
    out.tables.push(table);
    let (header, rows) = sol.table();
    out.tables.push(Table::numeric("bsde_coefficients", header, rows));
    let mart = martingale_check(&problem, &sol, &paths)?;
    let fresh = simulate_paths(seed.wrapping_add(1), cfg.monte_carlo.replicas.min(2000), t_final, steps, 1)?;
    let (ins, outs) = terminal_consistency(&problem, &sol, &paths, &fresh);
    let ap = apriori_bound_check(&sol, 2.0);
    out.stat("martingale_residual", mart);
    out.stat("terminal_in_sample", ins);
    out.stat("terminal_out_of_sample", outs);
    out.stat("apriori_fitted_c0", ap.fitted_c0);
    out.assert("terminal_consistency", outs <= 2.0 * ins + 1e-12, format!("in-sample {ins:.3e}, out-of-sample {outs:.3e}"));
    out.assert("apriori_constant_moderate", !ap.flagged, format!("fitted constant {:.3}", ap.fitted_c0));
    out.series.push(Series {
        label: "E X(t)".into(),
        points: sol.times.iter().enumerate().map(|(k, t)| (*t, sol.x_samples[k].iter().sum::<f64>() / sol.n_paths as f64)).collect(),
    });
    Ok(out)
}

fn bsde_picard_demo(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let pr = &cfg.problem;
    let nu = &cfg.numerics;
    let t_final = pr.t_final;
    let steps = n_steps(t_final, nu.dt);
    let paths = simulate_paths(cfg.monte_carlo.seed, cfg.monte_carlo.replicas, t_final, steps, 1)?;
    let opts = bsde_options(cfg);
    let mut out = ExperimentOutput::default();

    let kappa = pr.kappa;
    let zprob = BsdeProblem::new(
        Arc::new(LinearMap::scaled_identity(1, -1.0)),
        Driver::new("kappa*z", false, true, move |_, _, z| vec![kappa * z[0]]),
        |w: &[f64]| vec![w[0]],
        t_final,
        1,
    );
    let mut ztable = Table::new("picard_z", &["iteration", "residual"]);
    match picard_in_z(&zprob, &paths, &opts, nu.picard_max_iter, nu.picard_tol) {
        Ok(sol) => {
            for (i, r) in sol.picard_residuals.iter().enumerate() {
                ztable.push(vec![(i + 2).into(), (*r).into()]);
            }
            let bad = non_monotone_steps(&sol.picard_residuals);
            out.assert("picard_z_eventually_decreasing", bad <= 1, format!("{bad} non-monotone steps over {} iterations", sol.iterations));
            let k = steps / 2;
            let t = k as f64 * nu.dt;
            let decay = (-(t_final - t)).exp();
            let n = sol.n_paths as f64;
            let err = ((0..sol.n_paths)
                .map(|i| (sol.x(k, i)[0] - decay * (paths[i].value(k)[0] + kappa * (t_final - t))).powi(2))
                .sum::<f64>()
                / n)
                .sqrt();
            let budget = 5.0 * (nu.dt + sol.regression_error_x[k]);
            out.stat("picard_z_iterations", sol.iterations as f64);
            out.assert("picard_z_closed_form", err < budget, format!("rms {err:.4e} vs budget {budget:.4e} at t = {t}"));
        }
        Err(e) => out.assert("picard_z_eventually_decreasing", false, e.to_string()),
    }
    out.tables.push(ztable);

    let spec = ModulusSpec::RhoK { k: 1, c0: 1.0, eta: 0.1 };
    let rho = spec;
    let xprob = BsdeProblem::new(
        Arc::new(LinearMap::scaled_identity(1, -1.0)),
        Driver::new("sign(x) sqrt(rho1(x^2))", true, false, move |_, x, _| {
            vec![x[0].signum() * rho.value(x[0] * x[0]).sqrt()]
        }),
        |w: &[f64]| vec![w[0]],
        t_final,
        1,
    );
    let mut xtable = Table::new("picard_x", &["iteration", "residual"]);
    match picard_in_x(&xprob, &paths, &opts, 20, nu.picard_tol) {
        Ok(sol) => {
            for (i, r) in sol.picard_residuals.iter().enumerate() {
                xtable.push(vec![(i + 1).into(), (*r).into()]);
            }
            out.stat("picard_x_iterations", sol.iterations as f64);
            out.assert("picard_x_rho1_converges", sol.iterations <= 20, format!("{} outer iterations", sol.iterations));
            out.series.push(Series {
                label: "Picard residual in X".into(),
                points: sol.picard_residuals.iter().enumerate().map(|(i, r)| ((i + 1) as f64, r.max(1e-300).log10())).collect(),
            });
        }
        Err(e) => out.assert("picard_x_rho1_converges", false, e.to_string()),
    }
    out.tables.push(xtable);
    Ok(out)
}

fn functional_delay_demo(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let pr = &cfg.problem;
    let nu = &cfg.numerics;
    let set = operator_set(cfg, cfg.operator())?;
    let n = nu.n_modes_galerkin;
    let (kappa, sigma, horizon) = (pr.kappa, pr.sigma, pr.delay);
    let diffusion = DMatrix::from_fn(n, 1, |i, _| if i == 0 { sigma } else { 0.0 });
    let d1 = diffusion.clone();
    let coeffs = FunctionalCoefficients::empty(n, 1)
        .with_c1(move |_, seg: &SegmentView<'_>| DVector::from_vec(seg.at(-horizon)) * kappa)
        .with_d1(move |_, _| d1.clone());
    let mut start = vec![0.0; n];
    start[0] = pr.initial_amplitude;
    let x0 = SegmentPath::constant(horizon, nu.dt, start)?;
    let noise = NoisePath::sample(cfg.monte_carlo.seed, pr.t_final, n_steps(pr.t_final, nu.dt), 1)?;
    let solver = nu.solver(n, nu.dt);
    let tol = nu.picard_tol;
    let base = PicardOptions { max_iter: nu.picard_max_iter, tol, initial: InitialIterate::Constant(0.0) };
    let a = picard_solve_functional(&solver, set.drift.clone(), &coeffs, &noise, &x0, base)?;
    let b = picard_solve_functional(
        &solver,
        set.drift.clone(),
        &coeffs,
        &noise,
        &x0,
        PicardOptions { initial: InitialIterate::Constant(1.0), ..base },
    )?;
    let direct = delay_direct_stepping(&solver, set.drift.clone(), kappa, &diffusion, &noise, &x0)?;
    let mut out = ExperimentOutput::default();
    let starts_gap = trajectory_distance(&a.path, &b.path)?;
    let direct_gap = trajectory_distance(&a.path, &direct)?;
    out.stat("iterations_zero_start", a.iterations as f64);
    out.stat("iterations_one_start", b.iterations as f64);
    out.stat("starts_gap", starts_gap);
    out.stat("direct_gap", direct_gap);
    out.assert("fixed_points_agree", starts_gap <= 10.0 * tol, format!("gap {starts_gap:.3e} vs 10*tol"));
    out.assert("matches_direct_delay_stepping", direct_gap <= 10.0 * tol, format!("gap {direct_gap:.3e} vs 10*tol"));

    let lambda8 = TimeProfile::constant(&a.times, kappa * kappa)?;
    let linear = ModulusSpec::Linear { slope: 1.0 };
    let c0 = pr.t_final;
    let mut dominated = true;
    let mut diff_table = Table::new("picard_differences", &["start", "iteration", "t", "difference", "bound"]);
    for (label, sol) in [("zero", &a), ("one", &b)] {
        dominated &= sol.dominated_by_iterate_bound(&lambda8, &linear, c0, 0.2, 1e-28)?;
        for (it, w) in sol.differences.windows(2).enumerate() {
            let bound = stochevo::analysis::iterate_bound(&w[0], &sol.times, &lambda8, &linear, c0)?;
            for (k, t) in sol.times.iter().enumerate().step_by(10.max(sol.times.len() / 50)) {
                diff_table.push(vec![label.into(), (it + 2).into(), (*t).into(), w[1][k].into(), bound[k].into()]);
            }
        }
    }
    out.assert(
        "differences_below_iterate_bound",
        dominated,
        format!("lambda8 = kappa^2 = {}, c0 = T = {c0}, linear rho, 20% slack", kappa * kappa),
    );
    let mut residuals = Table::new("picard_residuals", &["start", "iteration", "residual"]);
    for (label, sol) in [("zero", &a), ("one", &b)] {
        for (i, r) in sol.residuals.iter().enumerate() {
            residuals.push(vec![Cell::from(label), (i + 1).into(), (*r).into()]);
        }
    }
    let (header, rows) = a.path.table();
    out.tables.push(Table::numeric("trajectory", header, rows));
    out.tables.push(residuals);
    out.tables.push(diff_table);
    out.series.push(Series {
        label: "X(t) coordinate 1".into(),
        points: a.times.iter().zip(a.path.trajectory()).map(|(t, x)| (*t, x[0])).collect(),
    });
    Ok(out)
}

fn volterra_kernels(kernel: KernelId) -> VolterraCoefficients {
    match kernel {
        KernelId::ExpDecay => VolterraCoefficients::empty(1, 1).with_d(
            Kernel::separable(|t: f64| (-t).exp(), |s: f64, _: &SegmentView<'_>| DMatrix::from_element(1, 1, s.exp())),
            Kernel::separable(|t: f64| -(-t).exp(), |s: f64, _: &SegmentView<'_>| DMatrix::from_element(1, 1, s.exp())),
        ),
        KernelId::TimeIndependent => VolterraCoefficients::empty(1, 1).with_d(
            Kernel::general(|_, s: f64, _: &SegmentView<'_>| DMatrix::from_element(1, 1, 1.0 + s)),
            Kernel::general(|_, _, _: &SegmentView<'_>| DMatrix::zeros(1, 1)),
        ),
    }
}

fn sine_path(dt: f64, steps: usize) -> Result<SegmentPath> {
    let mut p = SegmentPath::constant(0.0, dt, vec![0.0])?;
    for k in 1..=steps {
        p.push(vec![(k as f64 * dt).sin()])?;
    }
    Ok(p)
}

fn volterra_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let pr = &cfg.problem;
    let levels = &cfg.numerics.dt_levels;
    let finest = *levels.last().expect("validated levels");
    let fine = NoisePath::sample(cfg.monte_carlo.seed, pr.t_final, n_steps(pr.t_final, finest), 1)?;
    let v = volterra_kernels(pr.kernel);
    let mut gaps = Vec::new();
    for &dt in levels {
        let noise = fine.aggregate((dt / finest).round() as usize)?;
        gaps.push(volterra_consistency(&v, &sine_path(dt, noise.n_steps())?, &noise)?);
    }
    let mut out = ExperimentOutput::default();
    let mut table = Table::new("volterra_discrepancy", &["dt", "sup_discrepancy"]);
    for (dt, g) in levels.iter().zip(&gaps) {
        table.push(vec![(*dt).into(), (*g).into()]);
    }
    out.tables.push(table);
    match pr.kernel {
        KernelId::ExpDecay => {
            let r = ratios(&gaps);
            out.assert("discrepancy_halves", r.iter().all(|x| (1.6..=2.4).contains(x)), format!("ratios {r:?}"));
        }
        KernelId::TimeIndependent => {
            let worst = gaps.iter().cloned().fold(0.0, f64::max);
            out.assert("time_independent_exact", worst <= 1e-12, format!("max discrepancy {worst:.3e}"));
        }
    }
    let path = sine_path(finest, fine.n_steps())?;
    let partials = check_partials(&v, &path, cfg.monte_carlo.seed, 200, 1e-6);
    out.assert("supplied_partials_consistent", partials.passed(), format!("{} mismatches", partials.count()));
    out.series.push(Series {
        label: "sup discrepancy vs dt".into(),
        points: levels.iter().cloned().zip(gaps.iter().cloned()).collect(),
    });
    Ok(out)
}

/// Classical RK4 for `g' = λ·ρ(g)`, stopping at `1e300`.
fn comparison_ode(g0: f64, lambda: f64, spec: &ModulusSpec, times: &[f64], substeps: usize) -> Vec<f64> {
    let f = |g: f64| lambda * spec.value(g.max(0.0));
    let mut out = vec![g0];
    let mut g = g0;
    for w in times.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        for _ in 0..substeps {
            if !g.is_finite() || g > 1e300 {
                g = f64::INFINITY;
                break;
            }
            let k1 = f(g);
            let k2 = f(g + 0.5 * h * k1);
            let k3 = f(g + 0.5 * h * k2);
            let k4 = f(g + h * k3);
            g += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        out.push(g);
    }
    out
}

fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| x.is_finite() && y.is_finite() && **y < 1e300)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-300))
        .fold(0.0, f64::max)
}

fn bihari_table(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let pr = &cfg.problem;
    let dt = cfg.numerics.dt;
    let steps = n_steps(pr.t_final, dt);
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    let lambda = TimeProfile::constant(&times, pr.lambda)?;
    let bound = bihari_bound(pr.g0, &lambda, &pr.modulus, &times)?;
    let oracle = match pr.modulus {
        ModulusSpec::Linear { slope } => times.iter().map(|t| pr.g0 * (slope * pr.lambda * t).exp()).collect(),
        _ => comparison_ode(pr.g0, pr.lambda, &pr.modulus, &times, 64),
    };
    let mut out = ExperimentOutput::default();
    let mut table = Table::new("bihari", &["t", "lambda_integral", "bound", "oracle"]);
    for k in 0..times.len() {
        table.push(vec![times[k].into(), bound.lambda_integral[k].into(), bound.bound[k].into(), oracle[k].into()]);
    }
    out.tables.push(table);
    let gap = relative_gap(&bound.bound, &oracle);
    out.stat("final_bound", bound.final_value());
    out.stat("oracle_relative_gap", gap);
    if let Some(t) = bound.blow_up {
        out.stat("blow_up_time", t);
    }
    let (name, tol) = match pr.modulus {
        ModulusSpec::Linear { .. } => ("linear_equals_gronwall", 1e-10),
        _ => ("bound_matches_comparison_ode", 1e-4),
    };
    out.assert(name, gap <= tol, format!("max relative gap {gap:.3e} (tolerance {tol:e})"));

    // Reference suite on [0, 1] with λ = 1.
    let ref_times: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
    let one = TimeProfile::constant(&ref_times, 1.0)?;
    let rho1 = ModulusSpec::RhoK { k: 1, c0: 1.0, eta: 0.1 };
    let rb = bihari_bound(0.01, &one, &rho1, &ref_times)?;
    let ro = comparison_ode(0.01, 1.0, &rho1, &ref_times, 200);
    let rgap = relative_gap(&rb.bound, &ro);
    out.stat("rho1_oracle_relative_gap", rgap);
    out.assert("rho1_matches_comparison_ode", rgap <= 1e-4, format!("max relative gap {rgap:.3e}"));
    let z_rho = zero_limit_check(&one, &rho1, 1.0)?;
    let sqrt = ModulusSpec::Power { coeff: 1.0, exponent: 0.5 };
    let z_sqrt = zero_limit_check(&one, &sqrt, 1.0)?;
    let mut zt = Table::new("zero_limit", &["modulus", "g0", "final_bound"]);
    for (label, z) in [("rho1", &z_rho), ("sqrt", &z_sqrt)] {
        for (g, b) in z.g0.iter().zip(&z.final_bound) {
            zt.push(vec![label.into(), (*g).into(), (*b).into()]);
        }
    }
    out.tables.push(zt);
    out.assert("zero_limit_rho1_passes", z_rho.passed(), format!("final bounds {:?}", z_rho.final_bound));
    out.assert("zero_limit_sqrt_fails", !z_sqrt.passed(), format!("final bounds {:?}", z_sqrt.final_bound));
    out.series.push(Series {
        label: "Bihari bound".into(),
        points: times.iter().cloned().zip(bound.bound.iter().cloned()).collect(),
    });
    Ok(out)
}
