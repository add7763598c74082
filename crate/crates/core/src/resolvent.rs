//! Resolvent `J_ε = (I − εF)⁻¹` and Yosida approximation
//! `A_ε = (J_ε − I)/ε = F∘J_ε` of dissipative maps on `ℝⁿ`.
//!
//! Sign convention: maps are *dissipative*, `⟨x − y, F(x) − F(y)⟩ ≤ 0`, so
//! `I − εF` is invertible. This is the opposite of the convex-analysis
//! convention `I + ε∂f`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::stream_rng;
use crate::operators::{Violation, ViolationReport};

/// Declared growth `‖F(x)‖ ≲ constant·(1 + ‖x‖^{exponent−1})`, for reports only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Growth {
    pub exponent: f64,
    pub constant: f64,
}

pub trait MonotoneMap: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, x: &[f64]) -> Vec<f64>;

    /// Analytic Jacobian, if available.
    fn jacobian(&self, _t: f64, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// When true, component `i` of `F` depends on `x_i` only and
    /// [`MonotoneMap::component`] must be implemented.
    fn is_diagonal(&self) -> bool {
        false
    }

    /// Value and derivative of component `i` at `x_i = r`.
    fn component(&self, _t: f64, _i: usize, _r: f64) -> (f64, f64) {
        unimplemented!("component evaluation is only defined for diagonal maps")
    }

    fn growth(&self) -> Growth {
        Growth {
            exponent: 2.0,
            constant: 1.0,
        }
    }

    fn name(&self) -> String {
        "map".into()
    }
}

/// `F(x) = M·x`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub matrix: DMatrix<f64>,
}

impl LinearMap {
    pub fn scaled_identity(n: usize, slope: f64) -> Self {
        Self {
            matrix: DMatrix::identity(n, n) * slope,
        }
    }
}

impl MonotoneMap for LinearMap {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(x)).data.into()
    }

    fn jacobian(&self, _t: f64, _x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.matrix.clone())
    }

    fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.matrix[(i, j)] == 0.0))
    }

    fn component(&self, _t: f64, i: usize, r: f64) -> (f64, f64) {
        let a = self.matrix[(i, i)];
        (a * r, a)
    }

    fn name(&self) -> String {
        "linear".into()
    }
}

/// `F(x)_i = −coeff·x_i³`.
#[derive(Debug, Clone, Copy)]
pub struct CubicMap {
    pub dim: usize,
    pub coeff: f64,
}

impl MonotoneMap for CubicMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| -self.coeff * v * v * v).collect()
    }

    fn is_diagonal(&self) -> bool {
        true
    }

    fn component(&self, _t: f64, _i: usize, r: f64) -> (f64, f64) {
        (-self.coeff * r * r * r, -3.0 * self.coeff * r * r)
    }

    fn growth(&self) -> Growth {
        Growth {
            exponent: 4.0,
            constant: self.coeff,
        }
    }

    fn name(&self) -> String {
        "cubic".into()
    }
}

/// `F(x)_i = sin x_i`; not dissipative, used to exercise the checkers.
#[derive(Debug, Clone, Copy)]
pub struct SineMap {
    pub dim: usize,
}

impl MonotoneMap for SineMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| v.sin()).collect()
    }

    fn is_diagonal(&self) -> bool {
        true
    }

    fn component(&self, _t: f64, _i: usize, r: f64) -> (f64, f64) {
        (r.sin(), r.cos())
    }

    fn name(&self) -> String {
        "sine".into()
    }
}

type VecFn = Arc<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
type JacFn = Arc<dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync>;

/// A map given by closures.
#[derive(Clone)]
pub struct ClosureMap {
    pub dim: usize,
    pub label: String,
    pub f: VecFn,
    pub jac: Option<JacFn>,
}

impl fmt::Debug for ClosureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClosureMap({}, dim {})", self.label, self.dim)
    }
}

impl ClosureMap {
    pub fn new(
        dim: usize,
        label: impl Into<String>,
        f: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            label: label.into(),
            f: Arc::new(f),
            jac: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }
}

impl MonotoneMap for ClosureMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.f)(t, x)
    }

    fn jacobian(&self, t: f64, x: &[f64]) -> Option<DMatrix<f64>> {
        self.jac.as_ref().map(|j| j(t, x))
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventOptions {
    /// Residual tolerance relative to `max(1, ‖x‖)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ResolventOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolventOutcome {
    pub y: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn finite_difference_jacobian(f: &dyn MonotoneMap, t: f64, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        let step = 1e-7 * (1.0 + x[j].abs());
        probe[j] = x[j] + step;
        let plus = f.eval(t, &probe);
        probe[j] = x[j] - step;
        let minus = f.eval(t, &probe);
        probe[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
        }
    }
    jac
}

/// `y` with `y − εF(t, y) = x`.
pub fn resolvent(
    f: &dyn MonotoneMap,
    t: f64,
    eps: f64,
    x: &[f64],
    opts: ResolventOptions,
) -> Result<Vec<f64>> {
    resolvent_from(f, t, eps, x, x, opts).map(|o| o.y)
}

/// [`resolvent`] started from an explicit initial guess.
pub fn resolvent_from(
    f: &dyn MonotoneMap,
    t: f64,
    eps: f64,
    x: &[f64],
    guess: &[f64],
    opts: ResolventOptions,
) -> Result<ResolventOutcome> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::OutOfRange {
            what: "resolvent parameter",
            detail: format!("eps = {eps} must be positive"),
        });
    }
    if x.len() != f.dim() || guess.len() != f.dim() {
        return Err(Error::Dimension {
            what: "resolvent argument",
            expected: f.dim(),
            found: x.len().max(guess.len()),
        });
    }
    crate::error::check_finite("resolvent argument", x)?;
    let scale = opts.tol * norm(x).max(1.0);
    if f.is_diagonal() {
        diagonal_solve(f, t, eps, x, guess, scale, opts.max_iter)
    } else {
        newton_solve(f, t, eps, x, guess, scale, opts.max_iter)
    }
}

fn diagonal_solve(
    f: &dyn MonotoneMap,
    t: f64,
    eps: f64,
    x: &[f64],
    guess: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<ResolventOutcome> {
    let n = x.len();
    let comp_tol = tol / (n as f64).sqrt();
    let mut y = Vec::with_capacity(n);
    let mut iterations = 0;
    let mut res_sq = 0.0;
    for i in 0..n {
        let g = |r: f64| {
            let (v, d) = f.component(t, i, r);
            (r - eps * v - x[i], 1.0 - eps * d)
        };
        let (yi, it, gi) = scalar_root(g, guess[i], x[i], comp_tol, max_iter)?;
        iterations = iterations.max(it);
        res_sq += gi * gi;
        y.push(yi);
    }
    Ok(ResolventOutcome {
        y,
        iterations,
        residual: res_sq.sqrt(),
    })
}

/// Safeguarded Newton–bisection for a scalar root of `g`; returns the root,
/// the iteration count and `|g|` at the root.
fn scalar_root(
    g: impl Fn(f64) -> (f64, f64),
    guess: f64,
    x: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, usize, f64)> {
    let mut r = guess;
    let (mut gr, mut dr) = g(r);
    if gr.abs() <= tol {
        return Ok(polish_scalar(&g, r, gr, dr, 0));
    }
    // Plain Newton while the residual shrinks; smooth monotone maps settle here.
    for it in 1..=8 {
        if dr == 0.0 || !dr.is_finite() {
            break;
        }
        let next = r - gr / dr;
        let (gn, dn) = g(next);
        if !gn.is_finite() || gn.abs() >= gr.abs() {
            break;
        }
        (r, gr, dr) = (next, gn, dn);
        if gr.abs() <= tol {
            return Ok(polish_scalar(&g, r, gr, dr, it));
        }
    }
    // Bracket by stepping against the sign of g.
    let mut step = x.abs().max(1.0);
    let (mut lo, mut hi);
    let mut expansions = 0;
    loop {
        let probe = if gr > 0.0 { r - step } else { r + step };
        let (gp, _) = g(probe);
        if !gp.is_finite() {
            step *= 0.5;
        } else if gp.signum() != gr.signum() || gp == 0.0 {
            if probe < r {
                lo = probe;
                hi = r;
            } else {
                lo = r;
                hi = probe;
            }
            break;
        } else {
            r = probe;
            gr = gp;
            step *= 2.0;
        }
        expansions += 1;
        if expansions > 2000 {
            return Err(Error::NonConvergence {
                context: "scalar resolvent bracket",
                iterations: expansions,
                residual: gr.abs(),
                history: vec![],
            });
        }
    }
    let (glo, _) = g(lo);
    let increasing = glo < 0.0;
    let mut history = Vec::new();
    let cap = max_iter + 64;
    let mut y = 0.5 * (lo + hi);
    for it in 1..=cap {
        let (gy, dy) = g(y);
        history.push(gy.abs());
        if gy.abs() <= tol {
            return Ok(polish_scalar(&g, y, gy, dy, it));
        }
        if (gy < 0.0) == increasing {
            lo = y;
        } else {
            hi = y;
        }
        let newton = y - gy / dy;
        y = if dy != 0.0 && newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1e-300) {
            let (gy, _) = g(y);
            if gy.abs() <= tol.max(16.0 * f64::EPSILON * x.abs().max(1.0)) {
                return Ok((y, it, gy.abs()));
            }
        }
    }
    Err(Error::NonConvergence {
        context: "scalar resolvent",
        iterations: cap,
        residual: *history.last().unwrap_or(&f64::NAN),
        history,
    })
}

fn polish_scalar(g: &impl Fn(f64) -> (f64, f64), y: f64, gy: f64, dy: f64, it: usize) -> (f64, usize, f64) {
    if dy == 0.0 || !dy.is_finite() || gy.abs() <= 4.0 * f64::EPSILON * y.abs().max(1.0) {
        return (y, it, gy.abs());
    }
    let candidate = y - gy / dy;
    let gc = g(candidate).0.abs();
    if gc <= gy.abs() {
        (candidate, it, gc)
    } else {
        (y, it, gy.abs())
    }
}

fn newton_solve(
    f: &dyn MonotoneMap,
    t: f64,
    eps: f64,
    x: &[f64],
    guess: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<ResolventOutcome> {
    let n = x.len();
    let resid_vec = |y: &[f64]| -> Vec<f64> {
        let fy = f.eval(t, y);
        (0..n).map(|i| y[i] - eps * fy[i] - x[i]).collect()
    };
    let mut y = guess.to_vec();
    let mut r = resid_vec(&y);
    let mut rn = norm(&r);
    let mut history = vec![rn];
    let mut polished = false;
    for it in 0..=max_iter {
        if rn <= tol || polished {
            if !polished && rn > 0.0 {
                // One extra Newton step to push below the tolerance floor.
                polished = true;
            } else {
                return Ok(ResolventOutcome {
                    y,
                    iterations: it,
                    residual: rn,
                });
            }
        }
        if it == max_iter {
            break;
        }
        let jf = f
            .jacobian(t, &y)
            .unwrap_or_else(|| finite_difference_jacobian(f, t, &y));
        let jac = DMatrix::identity(n, n) - jf * eps;
        let rhs = -DVector::from_column_slice(&r);
        let delta = match jac.lu().solve(&rhs) {
            Some(d) => d,
            None => {
                return Err(Error::NonConvergence {
                    context: "resolvent Newton (singular Jacobian)",
                    iterations: it,
                    residual: rn,
                    history,
                })
            }
        };
        // Armijo backtracking on ‖G‖.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = (0..n).map(|i| y[i] + step * delta[i]).collect();
            let tr = resid_vec(&trial);
            let tn = norm(&tr);
            if tn.is_finite() && (tn <= (1.0 - 1e-4 * step) * rn || (polished && tn <= rn)) {
                y = trial;
                r = tr;
                rn = tn;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if rn <= tol {
                return Ok(ResolventOutcome {
                    y,
                    iterations: it + 1,
                    residual: rn,
                });
            }
            return Err(Error::NonConvergence {
                context: "resolvent line search",
                iterations: it + 1,
                residual: rn,
                history,
            });
        }
        history.push(rn);
    }
    Err(Error::NonConvergence {
        context: "resolvent Newton",
        iterations: max_iter,
        residual: rn,
        history,
    })
}

/// `A_ε(x) = F(J_ε(x))`, cross-checked against `(J_ε(x) − x)/ε`.
pub fn yosida(
    f: &dyn MonotoneMap,
    t: f64,
    eps: f64,
    x: &[f64],
    opts: ResolventOptions,
) -> Result<Vec<f64>> {
    let out = resolvent_from(f, t, eps, x, x, opts)?;
    let via_map = f.eval(t, &out.y);
    let via_difference: Vec<f64> = out.y.iter().zip(x).map(|(j, xi)| (j - xi) / eps).collect();
    let gap = norm(
        &via_map
            .iter()
            .zip(&via_difference)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    let allowed = 10.0 * (out.residual + opts.tol * norm(x).max(1.0)) / eps
        + 64.0 * f64::EPSILON * (norm(x) / eps + norm(&via_map));
    if gap > allowed {
        return Err(Error::Domain(format!(
            "Yosida identities disagree by {gap:.3e} (allowed {allowed:.3e})"
        )));
    }
    Ok(via_map)
}

/// Draws `(ε, x, y)` for [`check_yosida_properties`].
#[derive(Debug, Clone)]
pub struct YosidaSampler {
    pub seed: u64,
    pub n_samples: usize,
    pub eps_range: (f64, f64),
    pub amplitude: (f64, f64),
}

impl YosidaSampler {
    pub fn new(seed: u64, n_samples: usize) -> Self {
        Self {
            seed,
            n_samples,
            eps_range: (1e-3, 10.0),
            amplitude: (1e-2, 10.0),
        }
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

/// Sampled check of dissipativity (I), the `1/ε` Lipschitz bound (II),
/// domination `‖A_ε‖ ≤ ‖F‖` (III) and the `ε → 0` trend (IV).
pub fn check_yosida_properties(
    f: &dyn MonotoneMap,
    sampler: &YosidaSampler,
    opts: ResolventOptions,
) -> ViolationReport {
    const TOL: f64 = 1e-10;
    let n = f.dim();
    let mut report = ViolationReport {
        check: format!("yosida[{}]", f.name()),
        n_samples: sampler.n_samples,
        violations: Vec::new(),
        max_relative_excess: f64::NEG_INFINITY,
    };
    let push = |report: &mut ViolationReport, i: usize, excess: f64, scale: f64, detail: &str| {
        let rel = excess / scale.max(1.0);
        report.max_relative_excess = report.max_relative_excess.max(rel);
        if rel > TOL || !excess.is_finite() {
            report.violations.push(Violation {
                sample: i,
                t: 0.0,
                w: 0.0,
                excess,
                scale,
                detail: detail.into(),
            });
        }
    };
    for i in 0..sampler.n_samples {
        let mut rng = stream_rng(sampler.seed, i as u64, 0x594f_5349);
        let eps = log_uniform(&mut rng, sampler.eps_range);
        let ax = log_uniform(&mut rng, sampler.amplitude);
        let ay = log_uniform(&mut rng, sampler.amplitude);
        let x: Vec<f64> = (0..n).map(|_| ax * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| ay * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let (ax_eps, ay_eps) = match (yosida(f, 0.0, eps, &x, opts), yosida(f, 0.0, eps, &y, opts)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                push(&mut report, i, f64::INFINITY, 1.0, &format!("solve failed: {e}"));
                continue;
            }
        };
        let dx: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let da: Vec<f64> = ax_eps.iter().zip(&ay_eps).map(|(a, b)| a - b).collect();
        let ip: f64 = dx.iter().zip(&da).map(|(a, b)| a * b).sum();
        push(&mut report, i, ip, norm(&dx) * norm(&da), "(I) <x-y, A_eps(x)-A_eps(y)> > 0");
        let lip = norm(&da) - norm(&dx) / eps;
        push(&mut report, i, lip, norm(&dx) / eps, "(II) Lipschitz bound 1/eps exceeded");
        let fx = norm(&f.eval(0.0, &x));
        push(&mut report, i, norm(&ax_eps) - fx, fx, "(III) |A_eps(x)| > |F(x)|");
    }
    // (IV): for a few sampled points the error must not grow as ε shrinks.
    let trend_points = sampler.n_samples.min(20);
    for i in 0..trend_points {
        let mut rng = stream_rng(sampler.seed, i as u64, 0x5452_4e44);
        let ax = log_uniform(&mut rng, sampler.amplitude);
        let x: Vec<f64> = (0..n).map(|_| ax * (2.0 * rng.random::<f64>() - 1.0)).collect();
        let fx = f.eval(0.0, &x);
        let errors: Vec<f64> = yosida_error_sweep(f, &x, opts)
            .into_iter()
            .map(|(_, e)| e)
            .collect();
        let scale = norm(&fx).max(1.0);
        for w in errors.windows(2) {
            push(
                &mut report,
                sampler.n_samples + i,
                w[1] - w[0],
                scale * 1e2,
                "(IV) |A_eps(x) - F(x)| increased as eps decreased",
            );
        }
    }
    report
}

/// `‖A_ε(x) − F(x)‖` for `ε = 10⁰ … 10⁻⁶`.
pub fn yosida_error_sweep(f: &dyn MonotoneMap, x: &[f64], opts: ResolventOptions) -> Vec<(f64, f64)> {
    let fx = f.eval(0.0, x);
    (0..=6)
        .map(|k| {
            let eps = 10f64.powi(-k);
            let err = match yosida(f, 0.0, eps, x, opts) {
                Ok(a) => norm(&a.iter().zip(&fx).map(|(p, q)| p - q).collect::<Vec<_>>()),
                Err(_) => f64::INFINITY,
            };
            (eps, err)
        })
        .collect()
}
