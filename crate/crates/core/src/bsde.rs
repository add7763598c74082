//! Backward equations `X(t) = X_T + ∫_t^T [A(X) + C(X, Z)] ds − ∫_t^T Z dW`
//! on `ℝᵈ`, solved by least-squares Monte Carlo on simulated noise paths.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::ModulusSpec;
use crate::error::{Error, Result};
use crate::noise::{stream_rng, NoisePath};
use crate::operators::{Violation, ViolationReport};
use crate::resolvent::{resolvent, yosida, MonotoneMap, ResolventOptions};

type DriverFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
type TerminalFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// `C(t, x, z)`; `z` is the `d × n_modes` matrix flattened row-major.
#[derive(Clone)]
pub struct Driver {
    pub label: String,
    pub f: DriverFn,
    pub depends_on_x: bool,
    pub depends_on_z: bool,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Driver({}, x: {}, z: {})",
            self.label, self.depends_on_x, self.depends_on_z
        )
    }
}

impl Driver {
    pub fn zero(dim: usize) -> Self {
        Self {
            label: "zero".into(),
            f: Arc::new(move |_, _, _| vec![0.0; dim]),
            depends_on_x: false,
            depends_on_z: false,
        }
    }

    pub fn new(
        label: impl Into<String>,
        depends_on_x: bool,
        depends_on_z: bool,
        f: impl Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            f: Arc::new(f),
            depends_on_x,
            depends_on_z,
        }
    }

    pub fn eval(&self, t: f64, x: &[f64], z: &[f64]) -> Vec<f64> {
        (self.f)(t, x, z)
    }
}

#[derive(Clone)]
pub struct BsdeProblem {
    pub drift: Arc<dyn MonotoneMap>,
    pub driver: Driver,
    /// `X_T` as a function of `W(T)`.
    pub terminal: TerminalFn,
    pub t_final: f64,
    pub n_modes: usize,
}

impl fmt::Debug for BsdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BsdeProblem")
            .field("drift", &self.drift.name())
            .field("driver", &self.driver)
            .field("t_final", &self.t_final)
            .field("n_modes", &self.n_modes)
            .finish()
    }
}

impl BsdeProblem {
    pub fn new(
        drift: Arc<dyn MonotoneMap>,
        driver: Driver,
        terminal: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        t_final: f64,
        n_modes: usize,
    ) -> Self {
        Self {
            drift,
            driver,
            terminal: Arc::new(terminal),
            t_final,
            n_modes,
        }
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    fn validate(&self, paths: &[NoisePath]) -> Result<()> {
        if paths.is_empty() {
            return Err(Error::Config("at least one forward path is required".into()));
        }
        let first = &paths[0];
        if (first.t_final() - self.t_final).abs() > 1e-12 * self.t_final.max(1.0) {
            return Err(Error::Config(format!(
                "paths end at {} but the horizon is {}",
                first.t_final(),
                self.t_final
            )));
        }
        for p in paths {
            if p.n_steps() != first.n_steps() || p.n_modes() < self.n_modes {
                return Err(Error::Config("forward paths do not share a grid".into()));
            }
        }
        Ok(())
    }
}

/// Independent forward paths on a shared grid.
pub fn simulate_paths(
    seed: u64,
    n_paths: usize,
    t_final: f64,
    n_steps: usize,
    n_modes: usize,
) -> Result<Vec<NoisePath>> {
    (0..n_paths)
        .into_par_iter()
        .map(|r| NoisePath::sample_replica(seed, r as u64, t_final, n_steps, n_modes))
        .collect()
}

/// How the monotone drift enters each backward step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DriftTreatment {
    /// `X_k = J_dt(y)`.
    Resolvent,
    /// `X_k = y + dt·A_dt(y)` with the Yosida approximation at `ε = dt`.
    Yosida,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BsdeOptions {
    /// Total degree of the polynomial regression basis in `W(t_k)`, at most 2.
    pub basis_degree: usize,
    pub treatment: DriftTreatment,
    pub resolvent: ResolventOptions,
}

impl Default for BsdeOptions {
    fn default() -> Self {
        Self {
            basis_degree: 2,
            treatment: DriftTreatment::Resolvent,
            resolvent: ResolventOptions::default(),
        }
    }
}

fn features(w: &[f64], degree: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    if degree >= 1 {
        out.extend_from_slice(w);
    }
    if degree >= 2 {
        for i in 0..w.len() {
            for j in i..w.len() {
                out.push(w[i] * w[j]);
            }
        }
    }
    out
}

/// Least-squares fit of several targets on one design.
struct Fit {
    coeffs: DMatrix<f64>,
    fitted: DMatrix<f64>,
    /// `√(σ̂²·p/N)` averaged over targets.
    error_estimate: f64,
}

fn regress(design: &DMatrix<f64>, targets: &DMatrix<f64>, step: usize, degree: usize) -> Result<Fit> {
    let n = design.nrows() as f64;
    let p = design.ncols();
    let gram = design.tr_mul(design);
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let coeffs = if min > 1e-12 * max {
        let rhs = design.tr_mul(targets);
        gram.cholesky()
            .ok_or(Error::SingularRegression {
                basis: format!("polynomial degree {degree}"),
                step,
            })?
            .solve(&rhs)
    } else if design.columns(1, p - 1).iter().all(|v| *v == design[(0, 1.min(p - 1))]) {
        // Every path shares one state (t = 0): the conditional mean is the mean.
        let mut c = DMatrix::zeros(p, targets.ncols());
        for j in 0..targets.ncols() {
            c[(0, j)] = targets.column(j).mean();
        }
        c
    } else {
        return Err(Error::SingularRegression {
            basis: format!("polynomial degree {degree}"),
            step,
        });
    };
    let fitted = design * &coeffs;
    let resid = targets - &fitted;
    let sigma2 = resid.iter().map(|r| r * r).sum::<f64>() / (n * targets.ncols() as f64);
    Ok(Fit {
        coeffs,
        fitted,
        error_estimate: (sigma2 * p as f64 / n).sqrt(),
    })
}

#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub times: Vec<f64>,
    pub dim: usize,
    pub n_modes: usize,
    pub n_paths: usize,
    pub basis_degree: usize,
    /// Regression coefficients of `X(t_k)` (`p × d`).
    pub x_coeffs: Vec<DMatrix<f64>>,
    /// Regression coefficients of `Z(t_k)` (`p × d·n_modes`), for `k < N`.
    pub z_coeffs: Vec<DMatrix<f64>>,
    /// `x_samples[k][i·d + j]`.
    pub x_samples: Vec<Vec<f64>>,
    /// `z_samples[k][(i·d + j)·m + l]`, for `k < N`.
    pub z_samples: Vec<Vec<f64>>,
    /// Driver values used in each step, same layout as `x_samples`.
    pub c_samples: Vec<Vec<f64>>,
    pub regression_error_x: Vec<f64>,
    pub regression_error_z: Vec<f64>,
    pub picard_residuals: Vec<f64>,
    pub iterations: usize,
}

impl BsdeSolution {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn x(&self, k: usize, path: usize) -> &[f64] {
        &self.x_samples[k][path * self.dim..(path + 1) * self.dim]
    }

    pub fn z(&self, k: usize, path: usize) -> &[f64] {
        let w = self.dim * self.n_modes;
        &self.z_samples[k][path * w..(path + 1) * w]
    }

    /// Largest per-step regression error estimate for `X` and `Z`.
    pub fn max_regression_error(&self) -> (f64, f64) {
        let m = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        (m(&self.regression_error_x), m(&self.regression_error_z))
    }

    pub fn table(&self) -> (Vec<String>, Vec<Vec<f64>>) {
        let p = self.x_coeffs[0].nrows();
        let mut header = vec!["t".to_string()];
        for j in 0..self.dim {
            header.extend((0..p).map(|b| format!("x{j}_b{b}")));
        }
        for c in 0..self.dim * self.n_modes {
            header.extend((0..p).map(|b| format!("z{c}_b{b}")));
        }
        header.push("picard_residual".into());
        let rows = (0..self.times.len())
            .map(|k| {
                let mut row = vec![self.times[k]];
                for j in 0..self.dim {
                    row.extend(self.x_coeffs[k].column(j).iter());
                }
                for c in 0..self.dim * self.n_modes {
                    if k < self.z_coeffs.len() {
                        row.extend(self.z_coeffs[k].column(c).iter());
                    } else {
                        row.extend(std::iter::repeat_n(0.0, p));
                    }
                }
                row.push(self.picard_residuals.get(k).copied().unwrap_or(0.0));
                row
            })
            .collect();
        (header, rows)
    }
}

/// Driver values for step `k` and path `i`.
type Frozen<'a> = dyn Fn(usize, usize) -> Vec<f64> + Sync + 'a;

fn backward_recursion(
    problem: &BsdeProblem,
    paths: &[NoisePath],
    opts: &BsdeOptions,
    frozen: &Frozen<'_>,
) -> Result<BsdeSolution> {
    problem.validate(paths)?;
    if opts.basis_degree > 2 {
        return Err(Error::Config(format!(
            "basis degree {} exceeds 2",
            opts.basis_degree
        )));
    }
    let d = problem.dim();
    let m = problem.n_modes;
    let n_paths = paths.len();
    let n_steps = paths[0].n_steps();
    let times = paths[0].times().to_vec();
    let state = |k: usize, i: usize| -> Vec<f64> { paths[i].value(k)[..m].to_vec() };
    let design_at = |k: usize| {
        let rows: Vec<Vec<f64>> = (0..n_paths).map(|i| features(&state(k, i), opts.basis_degree)).collect();
        let p = rows[0].len();
        DMatrix::from_fn(n_paths, p, |i, j| rows[i][j])
    };

    let mut x_samples = vec![Vec::new(); n_steps + 1];
    let mut z_samples = vec![Vec::new(); n_steps];
    let mut c_samples = vec![Vec::new(); n_steps + 1];
    let mut x_coeffs = vec![DMatrix::zeros(0, 0); n_steps + 1];
    let mut z_coeffs = vec![DMatrix::zeros(0, 0); n_steps];
    let mut regression_error_x = vec![0.0; n_steps + 1];
    let mut regression_error_z = vec![0.0; n_steps];

    let terminal: Vec<f64> = (0..n_paths)
        .flat_map(|i| {
            let v = (problem.terminal)(&state(n_steps, i));
            assert_eq!(v.len(), d, "terminal value has the wrong dimension");
            v
        })
        .collect();
    let design_n = design_at(n_steps);
    let fit_n = regress(&design_n, &DMatrix::from_row_slice(n_paths, d, &terminal), n_steps, opts.basis_degree)?;
    x_coeffs[n_steps] = fit_n.coeffs;
    regression_error_x[n_steps] = fit_n.error_estimate;
    x_samples[n_steps] = terminal;
    c_samples[n_steps] = vec![0.0; n_paths * d];

    for k in (0..n_steps).rev() {
        let dt = times[k + 1] - times[k];
        let design = design_at(k);
        let next = DMatrix::from_row_slice(n_paths, d, &x_samples[k + 1]);
        let fit_x = regress(&design, &next, k, opts.basis_degree)?;
        // Z from the centred martingale increment.
        let mut zt = DMatrix::zeros(n_paths, d * m);
        for i in 0..n_paths {
            let dw = paths[i].increment(k);
            for j in 0..d {
                let centred = next[(i, j)] - fit_x.fitted[(i, j)];
                for l in 0..m {
                    zt[(i, j * m + l)] = centred * dw[l] / dt;
                }
            }
        }
        let fit_z = regress(&design, &zt, k, opts.basis_degree)?;
        let z_k: Vec<f64> = (0..n_paths)
            .flat_map(|i| fit_z.fitted.row(i).iter().cloned().collect::<Vec<_>>())
            .collect();
        z_samples[k] = z_k;
        let drivers: Vec<Vec<f64>> = (0..n_paths).into_par_iter().map(|i| frozen(k, i)).collect();
        let t_next = times[k + 1];
        let stepped: Result<Vec<Vec<f64>>> = (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let y: Vec<f64> = (0..d).map(|j| fit_x.fitted[(i, j)] + dt * drivers[i][j]).collect();
                match opts.treatment {
                    DriftTreatment::Resolvent => resolvent(problem.drift.as_ref(), t_next, dt, &y, opts.resolvent),
                    DriftTreatment::Yosida => {
                        let a = yosida(problem.drift.as_ref(), t_next, dt, &y, opts.resolvent)?;
                        Ok(y.iter().zip(&a).map(|(yv, av)| yv + dt * av).collect())
                    }
                }
            })
            .collect();
        let stepped = stepped.map_err(|e| e.at_step(k))?;
        x_samples[k] = stepped.into_iter().flatten().collect();
        c_samples[k] = drivers.into_iter().flatten().collect();
        let fit_self = regress(&design, &DMatrix::from_row_slice(n_paths, d, &x_samples[k]), k, opts.basis_degree)?;
        x_coeffs[k] = fit_self.coeffs;
        z_coeffs[k] = fit_z.coeffs;
        regression_error_x[k] = fit_x.error_estimate;
        regression_error_z[k] = fit_z.error_estimate;
    }

    Ok(BsdeSolution {
        times,
        dim: d,
        n_modes: m,
        n_paths,
        basis_degree: opts.basis_degree,
        x_coeffs,
        z_coeffs,
        x_samples,
        z_samples,
        c_samples,
        regression_error_x,
        regression_error_z,
        picard_residuals: Vec::new(),
        iterations: 1,
    })
}

/// Solves with a driver `C(t)` independent of `x` and `z`.
pub fn solve_bsde_autonomous_c(
    problem: &BsdeProblem,
    paths: &[NoisePath],
    opts: &BsdeOptions,
) -> Result<BsdeSolution> {
    if problem.driver.depends_on_x || problem.driver.depends_on_z {
        return Err(Error::Config(format!(
            "driver {} depends on the solution; use a Picard solver",
            problem.driver.label
        )));
    }
    let d = problem.dim();
    let zero_x = vec![0.0; d];
    let zero_z = vec![0.0; d * problem.n_modes];
    let times = paths.first().map(|p| p.times().to_vec()).unwrap_or_default();
    let frozen = |k: usize, _i: usize| problem.driver.eval(times[k], &zero_x, &zero_z);
    backward_recursion(problem, paths, opts, &frozen)
}

/// `√(Σ_k dt·mean_i |a − b|²)` over the `Z` samples.
fn z_distance(a: &BsdeSolution, b: &BsdeSolution) -> f64 {
    let mut acc = 0.0;
    for k in 0..a.z_samples.len() {
        let dt = a.times[k + 1] - a.times[k];
        let ss: f64 = a.z_samples[k]
            .iter()
            .zip(&b.z_samples[k])
            .map(|(x, y)| (x - y).powi(2))
            .sum();
        acc += dt * ss / a.n_paths as f64;
    }
    acc.sqrt()
}

/// `sup_k mean_i |a − b|²` over the `X` samples.
fn x_distance(a: &BsdeSolution, b: &BsdeSolution) -> f64 {
    a.x_samples
        .iter()
        .zip(&b.x_samples)
        .map(|(xa, xb)| xa.iter().zip(xb).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.n_paths as f64)
        .fold(0.0, f64::max)
}

fn picard_z_with(
    problem: &BsdeProblem,
    paths: &[NoisePath],
    opts: &BsdeOptions,
    max_iter: usize,
    tol: f64,
    x_frozen: Option<&BsdeSolution>,
) -> Result<BsdeSolution> {
    let d = problem.dim();
    let m = problem.n_modes;
    let times = paths[0].times().to_vec();
    let zero_x = vec![0.0; d];
    let x_at = |k: usize, i: usize| -> Vec<f64> {
        match x_frozen {
            Some(s) => s.x(k, i).to_vec(),
            None => zero_x.clone(),
        }
    };
    let zero_z = vec![0.0; d * m];
    let first = backward_recursion(problem, paths, opts, &|k, i| {
        problem.driver.eval(times[k], &x_at(k, i), &zero_z)
    })?;
    if !problem.driver.depends_on_z {
        return Ok(first);
    }
    let mut residuals = Vec::new();
    let mut prev = first;
    for iter in 2..=max_iter {
        let next = backward_recursion(problem, paths, opts, &|k, i| {
            problem.driver.eval(times[k], &x_at(k, i), prev.z(k, i))
        })?;
        let r = z_distance(&next, &prev);
        residuals.push(r);
        prev = next;
        if r < tol {
            prev.picard_residuals = residuals;
            prev.iterations = iter;
            return Ok(prev);
        }
    }
    Err(Error::NonConvergence {
        context: "Picard iteration in Z",
        iterations: max_iter,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
        history: residuals,
    })
}

/// Picard iteration in `Z` from `Z₀ ≡ 0` for a driver `C(t, z)`.
pub fn picard_in_z(
    problem: &BsdeProblem,
    paths: &[NoisePath],
    opts: &BsdeOptions,
    max_iter: usize,
    tol: f64,
) -> Result<BsdeSolution> {
    if problem.driver.depends_on_x {
        return Err(Error::Config(format!(
            "driver {} depends on x; use picard_in_x",
            problem.driver.label
        )));
    }
    problem.validate(paths)?;
    picard_z_with(problem, paths, opts, max_iter, tol, None)
}

/// Outer Picard iteration in `X` from `X₀ ≡ 0`, each step solved by
/// [`picard_in_z`] with the `x`-argument frozen. Residuals are
/// `sup_t mean |X_n − X_{n−1}|²`.
pub fn picard_in_x(
    problem: &BsdeProblem,
    paths: &[NoisePath],
    opts: &BsdeOptions,
    max_iter: usize,
    tol: f64,
) -> Result<BsdeSolution> {
    problem.validate(paths)?;
    let inner_iter = max_iter.max(50);
    let inner_tol = tol.min(1e-10);
    let mut current = picard_z_with(problem, paths, opts, inner_iter, inner_tol, None)?;
    if !problem.driver.depends_on_x {
        return Ok(current);
    }
    // The first solve above corresponds to X₀ ≡ 0.
    let mut residuals = vec![current.x_samples.iter().map(|xs| xs.iter().map(|v| v * v).sum::<f64>() / current.n_paths as f64).fold(0.0, f64::max)];
    for iter in 2..=max_iter {
        let next = picard_z_with(problem, paths, opts, inner_iter, inner_tol, Some(&current))?;
        let r = x_distance(&next, &current);
        residuals.push(r);
        current = next;
        if r < tol {
            current.picard_residuals = residuals;
            current.iterations = iter;
            return Ok(current);
        }
    }
    Err(Error::NonConvergence {
        context: "Picard iteration in X",
        iterations: max_iter,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
        history: residuals,
    })
}

/// Number of steps where a residual sequence increases.
pub fn non_monotone_steps(residuals: &[f64]) -> usize {
    residuals.windows(2).filter(|w| w[1] > w[0]).count()
}

/// Monte-Carlo estimate of the moment estimate for the backward pair.
#[derive(Debug, Clone, Serialize)]
pub struct AprioriBsdeReport {
    pub q: f64,
    /// `E sup_t |X|^q`.
    pub sup_x: f64,
    /// `E(∫|Z|²)^{q/2}`.
    pub int_z: f64,
    /// `E|X_T|^q`.
    pub terminal: f64,
    /// `E(∫|C|²)^{q/2}`.
    pub driver: f64,
    /// `(sup_x + int_z)/(terminal + driver)`.
    pub fitted_c0: f64,
    /// Set when the fitted constant exceeds `1e2`.
    pub flagged: bool,
}

pub fn apriori_bound_check(solution: &BsdeSolution, q: f64) -> AprioriBsdeReport {
    let n = solution.n_paths;
    let d = solution.dim;
    let w = d * solution.n_modes;
    let norm_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let mut sup_x = 0.0;
    let mut int_z = 0.0;
    let mut terminal = 0.0;
    let mut driver = 0.0;
    let steps = solution.n_steps();
    for i in 0..n {
        let mut sup = 0.0f64;
        for k in 0..=steps {
            sup = sup.max(norm_sq(solution.x(k, i)));
        }
        let (mut zz, mut cc) = (0.0, 0.0);
        for k in 0..steps {
            let dt = solution.times[k + 1] - solution.times[k];
            zz += dt * norm_sq(&solution.z_samples[k][i * w..(i + 1) * w]);
            cc += dt * norm_sq(&solution.c_samples[k][i * d..(i + 1) * d]);
        }
        sup_x += sup.powf(q / 2.0);
        int_z += zz.powf(q / 2.0);
        terminal += norm_sq(solution.x(steps, i)).powf(q / 2.0);
        driver += cc.powf(q / 2.0);
    }
    let nf = n as f64;
    let (sup_x, int_z, terminal, driver) = (sup_x / nf, int_z / nf, terminal / nf, driver / nf);
    let lhs = sup_x + int_z;
    let rhs = terminal + driver;
    let fitted_c0 = if lhs == 0.0 {
        0.0
    } else if rhs == 0.0 {
        f64::INFINITY
    } else {
        lhs / rhs
    };
    AprioriBsdeReport {
        q,
        sup_x,
        int_z,
        terminal,
        driver,
        fitted_c0,
        flagged: fitted_c0 > 1e2,
    }
}

/// Largest RMS (over paths) of the regression-estimated conditional mean of
/// `X_{k+1} − X_k − dt·(A(X_k) + C_k) − Z_k·ΔW_k`.
pub fn martingale_check(problem: &BsdeProblem, solution: &BsdeSolution, paths: &[NoisePath]) -> Result<f64> {
    let d = solution.dim;
    let m = solution.n_modes;
    let n = solution.n_paths;
    let mut worst = 0.0f64;
    for k in 0..solution.n_steps() {
        let dt = solution.times[k + 1] - solution.times[k];
        let mut resid = DMatrix::zeros(n, d);
        for i in 0..n {
            let xk = solution.x(k, i);
            let a = problem.drift.eval(solution.times[k + 1], xk);
            let z = solution.z(k, i);
            let dw = paths[i].increment(k);
            for j in 0..d {
                let zdw: f64 = (0..m).map(|l| z[j * m + l] * dw[l]).sum();
                resid[(i, j)] = solution.x(k + 1, i)[j] - xk[j]
                    + dt * (a[j] + solution.c_samples[k][i * d + j])
                    - zdw;
            }
        }
        let design = DMatrix::from_fn(n, features(&vec![0.0; m], solution.basis_degree).len(), |i, j| {
            features(&paths[i].value(k)[..m], solution.basis_degree)[j]
        });
        let fit = regress(&design, &resid, k, solution.basis_degree)?;
        let rms = (fit.fitted.iter().map(|v| v * v).sum::<f64>() / (n * d) as f64).sqrt();
        worst = worst.max(rms);
    }
    Ok(worst)
}

/// In-sample and out-of-sample RMS residual of the terminal representation.
pub fn terminal_consistency(
    problem: &BsdeProblem,
    solution: &BsdeSolution,
    paths: &[NoisePath],
    fresh: &[NoisePath],
) -> (f64, f64) {
    let d = solution.dim;
    let m = solution.n_modes;
    let k = solution.n_steps();
    let coeffs = &solution.x_coeffs[k];
    let rms = |values: Vec<(Vec<f64>, Vec<f64>)>| {
        let count = values.len() * d;
        let ss: f64 = values
            .iter()
            .map(|(w, target)| {
                let phi = DVector::from_vec(features(w, solution.basis_degree));
                let pred = coeffs.tr_mul(&phi);
                pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>()
            })
            .sum();
        (ss / count as f64).sqrt()
    };
    let in_sample = rms(
        (0..solution.n_paths)
            .map(|i| (paths[i].value(k)[..m].to_vec(), solution.x(k, i).to_vec()))
            .collect(),
    );
    let out_sample = rms(
        fresh
            .iter()
            .map(|p| {
                let w = p.value(p.n_steps())[..m].to_vec();
                let target = (problem.terminal)(&w);
                (w, target)
            })
            .collect(),
    );
    (in_sample, out_sample)
}

/// Sampled check of the driver's modulus condition
/// `|C(x,z) − C(x',z')|² ≤ c₁(ρ(|x−x'|²) + |z−z'|²)` and growth
/// `|C(x,z)| ≤ ζ + c₂(|x| + |z|)`.
pub fn check_driver(
    problem: &BsdeProblem,
    modulus: &ModulusSpec,
    c1: f64,
    c2: f64,
    zeta: f64,
    seed: u64,
    n_samples: usize,
) -> ViolationReport {
    let d = problem.dim();
    let w = d * problem.n_modes;
    let mut report = ViolationReport {
        check: format!("driver[{}]", problem.driver.label),
        n_samples,
        violations: Vec::new(),
        max_relative_excess: f64::NEG_INFINITY,
    };
    let norm_sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    for s in 0..n_samples {
        let mut rng = stream_rng(seed, s as u64, 0x4452_5652);
        let amp = 10f64.powf(rng.random_range(-3.0..1.0));
        let rel = 10f64.powf(rng.random_range(-6.0..0.0));
        let t = rng.random_range(0.0..problem.t_final);
        let x: Vec<f64> = (0..d).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..w).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = x.iter().map(|v| v + rel * amp * rng.random_range(-1.0..1.0)).collect();
        let z2: Vec<f64> = z.iter().map(|v| v + rel * amp * rng.random_range(-1.0..1.0)).collect();
        let c = problem.driver.eval(t, &x, &z);
        let c2v = problem.driver.eval(t, &x2, &z2);
        let dx: Vec<f64> = x.iter().zip(&x2).map(|(a, b)| a - b).collect();
        let dz: Vec<f64> = z.iter().zip(&z2).map(|(a, b)| a - b).collect();
        let dc: Vec<f64> = c.iter().zip(&c2v).map(|(a, b)| a - b).collect();
        let lhs = norm_sq(&dc);
        let rhs = c1 * (modulus.value(norm_sq(&dx)) + norm_sq(&dz));
        let mut record = |excess: f64, scale: f64, detail: &str| {
            let r = excess / scale.max(1e-300);
            report.max_relative_excess = report.max_relative_excess.max(r);
            if excess > 1e-9 * scale {
                report.violations.push(Violation {
                    sample: s,
                    t,
                    w: 0.0,
                    excess,
                    scale,
                    detail: detail.into(),
                });
            }
        };
        record(lhs - rhs, lhs + rhs, "modulus condition");
        let growth = norm_sq(&c).sqrt();
        let bound = zeta + c2 * (norm_sq(&x).sqrt() + norm_sq(&z).sqrt());
        record(growth - bound, growth + bound, "growth condition");
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resolvent::LinearMap;

    fn linear(slope: f64) -> Arc<dyn MonotoneMap> {
        Arc::new(LinearMap::scaled_identity(1, slope))
    }

    fn identity_terminal() -> impl Fn(&[f64]) -> Vec<f64> + Send + Sync {
        |w: &[f64]| vec![w[0]]
    }

    fn rms_at(sol: &BsdeSolution, paths: &[NoisePath], k: usize, exact: impl Fn(f64) -> f64) -> f64 {
        let ss: f64 = (0..sol.n_paths)
            .map(|i| (sol.x(k, i)[0] - exact(paths[i].value(k)[0])).powi(2))
            .sum();
        (ss / sol.n_paths as f64).sqrt()
    }

    #[test]
    fn constant_terminal_decays_exponentially() {
        let problem = BsdeProblem::new(linear(-1.0), Driver::zero(1), |_| vec![2.0], 1.0, 1);
        let paths = simulate_paths(3, 200, 1.0, 64, 1).unwrap();
        let sol = solve_bsde_autonomous_c(&problem, &paths, &BsdeOptions::default()).unwrap();
        // Backward Euler: 2·(1 + dt)^{-64}.
        let discrete = 2.0 * (1.0f64 + 1.0 / 64.0).powi(-64);
        assert!((sol.x(0, 0)[0] - discrete).abs() < 1e-9);
        assert!((sol.x(0, 0)[0] - 2.0 * (-1.0f64).exp()).abs() < 2.0 / 64.0);
        assert!(sol.z_samples.iter().flatten().all(|z| z.abs() < 1e-9));
    }

    #[test]
    fn linear_terminal_matches_closed_form() {
        let problem = BsdeProblem::new(linear(-1.0), Driver::zero(1), identity_terminal(), 1.0, 1);
        let paths = simulate_paths(11, 2000, 1.0, 64, 1).unwrap();
        let sol = solve_bsde_autonomous_c(&problem, &paths, &BsdeOptions::default()).unwrap();
        let dt = 1.0 / 64.0;
        for k in [16, 32, 48] {
            let t = k as f64 * dt;
            let err = rms_at(&sol, &paths, k, |w| (-(1.0 - t)).exp() * w);
            assert!(err < 5.0 * (dt + sol.regression_error_x[k]), "X at {t}: {err}");
            let zerr = (0..sol.n_paths)
                .map(|i| (sol.z(k, i)[0] - (-(1.0 - t)).exp()).powi(2))
                .sum::<f64>()
                / sol.n_paths as f64;
            assert!(zerr.sqrt() < 5.0 * (dt + sol.regression_error_z[k]), "Z at {t}");
        }
        // t = 0 collapses to the mean.
        let x0 = sol.x(0, 0)[0];
        assert!(x0.abs() < 0.05);
    }

    #[test]
    fn yosida_treatment_equals_resolvent() {
        let problem = BsdeProblem::new(linear(-1.5), Driver::zero(1), identity_terminal(), 1.0, 1);
        let paths = simulate_paths(5, 300, 1.0, 32, 1).unwrap();
        let a = solve_bsde_autonomous_c(&problem, &paths, &BsdeOptions::default()).unwrap();
        let b = solve_bsde_autonomous_c(
            &problem,
            &paths,
            &BsdeOptions {
                treatment: DriftTreatment::Yosida,
                ..BsdeOptions::default()
            },
        )
        .unwrap();
        let diff = a
            .x_samples
            .iter()
            .flatten()
            .zip(b.x_samples.iter().flatten())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn picard_in_z_linear_driver() {
        let kappa = 0.5;
        let driver = Driver::new("kappa z", false, true, move |_, _, z| vec![kappa * z[0]]);
        let problem = BsdeProblem::new(linear(-1.0), driver, identity_terminal(), 1.0, 1);
        let paths = simulate_paths(21, 2000, 1.0, 32, 1).unwrap();
        let sol = picard_in_z(&problem, &paths, &BsdeOptions::default(), 30, 1e-8).unwrap();
        assert!(sol.iterations <= 30);
        assert!(non_monotone_steps(&sol.picard_residuals) <= 1);
        let dt = 1.0 / 32.0;
        let k = 16;
        let t = 0.5f64;
        let err = rms_at(&sol, &paths, k, |w| (-(1.0 - t)).exp() * (w + kappa * (1.0 - t)));
        assert!(err < 5.0 * (dt + sol.regression_error_x[k]), "{err}");
    }

    #[test]
    fn z_independent_driver_takes_one_iteration() {
        let driver = Driver::new("time only", false, true, |t, _, _| vec![t]);
        let mut problem = BsdeProblem::new(linear(-1.0), driver, identity_terminal(), 1.0, 1);
        problem.driver.depends_on_z = false;
        let paths = simulate_paths(2, 100, 1.0, 16, 1).unwrap();
        let sol = picard_in_z(&problem, &paths, &BsdeOptions::default(), 10, 1e-10).unwrap();
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn picard_in_x_linear_driver() {
        let kappa = 0.5;
        let driver = Driver::new("kappa x", true, false, move |_, x, _| vec![kappa * x[0]]);
        let problem = BsdeProblem::new(linear(-1.0), driver, identity_terminal(), 1.0, 1);
        let paths = simulate_paths(8, 2000, 1.0, 32, 1).unwrap();
        let sol = picard_in_x(&problem, &paths, &BsdeOptions::default(), 40, 1e-12).unwrap();
        let dt = 1.0 / 32.0;
        let k = 16;
        let err = rms_at(&sol, &paths, k, |w| (-(0.5f64) * 0.5).exp() * w);
        assert!(err < 5.0 * (dt + sol.regression_error_x[k]), "{err}");
    }

    #[test]
    fn rho_one_driver_converges() {
        let spec = ModulusSpec::RhoK {
            k: 1,
            c0: 1.0,
            eta: 0.1,
        };
        let s2 = spec.clone();
        let driver = Driver::new("rho1 direction", true, false, move |_, x, _| {
            let r = s2.value(x[0] * x[0]).sqrt();
            vec![r * x[0].signum()]
        });
        let problem = BsdeProblem::new(linear(-1.0), driver, identity_terminal(), 1.0, 1);
        let paths = simulate_paths(13, 500, 1.0, 32, 1).unwrap();
        let sol = picard_in_x(&problem, &paths, &BsdeOptions::default(), 20, 1e-10).unwrap();
        assert!(sol.iterations <= 20);
        let report = check_driver(&problem, &spec, 1.0, 1.0, 0.0, 1, 200);
        assert!(report.max_relative_excess.is_finite());
    }

    #[test]
    fn apriori_and_jensen() {
        let driver = Driver::new("forcing", false, false, |t, _, _| vec![t.sin()]);
        let problem = BsdeProblem::new(linear(-1.0), driver, identity_terminal(), 1.0, 1);
        let paths = simulate_paths(4, 1000, 1.0, 32, 1).unwrap();
        let sol = solve_bsde_autonomous_c(&problem, &paths, &BsdeOptions::default()).unwrap();
        let r2 = apriori_bound_check(&sol, 2.0);
        let r4 = apriori_bound_check(&sol, 4.0);
        assert!(!r2.flagged && r2.fitted_c0 > 0.0);
        assert!(r4.sup_x >= r2.sup_x * r2.sup_x * (1.0 - 1e-12));
        let mart = martingale_check(&problem, &sol, &paths).unwrap();
        assert!(mart < 0.05, "{mart}");
        let fresh = simulate_paths(99, 500, 1.0, 32, 1).unwrap();
        let (ins, out) = terminal_consistency(&problem, &sol, &paths, &fresh);
        assert!(out <= 2.0 * ins + 1e-12, "{ins} {out}");
    }

    #[test]
    fn collinear_modes_are_singular() {
        let mut paths = Vec::new();
        for r in 0..50u64 {
            let p = NoisePath::sample_replica(1, r, 1.0, 8, 1).unwrap();
            let inc: Vec<f64> = p.increments().iter().flat_map(|v| [*v, *v]).collect();
            paths.push(NoisePath::from_increments(1, 1.0, 2, inc).unwrap());
        }
        let problem = BsdeProblem::new(linear(-1.0), Driver::zero(1), |w| vec![w[0] + w[1]], 1.0, 2);
        let err = solve_bsde_autonomous_c(&problem, &paths, &BsdeOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SingularRegression { .. }), "{err}");
    }

    #[test]
    fn autonomous_rejects_state_dependent_driver() {
        let driver = Driver::new("x", true, false, |_, x, _| x.to_vec());
        let problem = BsdeProblem::new(linear(-1.0), driver, identity_terminal(), 1.0, 1);
        let paths = simulate_paths(1, 10, 1.0, 4, 1).unwrap();
        assert!(solve_bsde_autonomous_c(&problem, &paths, &BsdeOptions::default()).is_err());
    }
}
