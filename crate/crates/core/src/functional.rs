//! Functional integral equations with memory and Volterra equations,
//! posed in Galerkin coordinates.
//!
//! A state is a coordinate vector in `ℝⁿ`; its Euclidean norm is the `H`
//! norm of the expanded function. Diffusion values are `n × m` matrices.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::analysis::ModulusSpec;
use crate::error::{Error, Result};
use crate::galerkin::{align_noise, step_with_increment, GalerkinSystem, SolverConfig};
use crate::noise::{stream_rng, NoisePath};
use crate::operators::{DiffusionMap, Drift, Violation, ViolationReport};
use crate::process::NoiseContext;

fn grid_steps(span: f64, dt: f64, what: &str) -> Result<usize> {
    let ratio = span / dt;
    let n = ratio.round();
    if span < 0.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::Config(format!(
            "{what} {span} is not a non-negative multiple of dt = {dt}"
        )));
    }
    Ok(n as usize)
}

/// States on `[−S, t_end]` over a uniform grid of step `dt`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentPath {
    horizon: f64,
    dt: f64,
    /// States at `−S, −S + dt, …, 0`.
    history: Vec<Vec<f64>>,
    /// States at `0, dt, …`; `trajectory[0] == history.last()`.
    trajectory: Vec<Vec<f64>>,
}

impl SegmentPath {
    pub fn new(horizon: f64, dt: f64, history: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        let n = grid_steps(horizon, dt, "memory horizon")?;
        if history.len() != n + 1 {
            return Err(Error::Dimension {
                what: "history samples",
                expected: n + 1,
                found: history.len(),
            });
        }
        let dim = history[0].len();
        for h in &history {
            if h.len() != dim {
                return Err(Error::Dimension {
                    what: "history state",
                    expected: dim,
                    found: h.len(),
                });
            }
            crate::error::check_finite("history", h)?;
        }
        let seam = history[n].clone();
        Ok(Self {
            horizon,
            dt,
            history,
            trajectory: vec![seam],
        })
    }

    /// History `θ ↦ f(θ)` sampled on the grid.
    pub fn from_fn(horizon: f64, dt: f64, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let n = grid_steps(horizon, dt, "memory horizon")?;
        let history = (0..=n).map(|j| f(-horizon + j as f64 * dt)).collect();
        Self::new(horizon, dt, history)
    }

    pub fn constant(horizon: f64, dt: f64, state: Vec<f64>) -> Result<Self> {
        Self::from_fn(horizon, dt, |_| state.clone())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dim(&self) -> usize {
        self.history[0].len()
    }

    pub fn history(&self) -> &[Vec<f64>] {
        &self.history
    }

    pub fn trajectory(&self) -> &[Vec<f64>] {
        &self.trajectory
    }

    pub fn t_end(&self) -> f64 {
        (self.trajectory.len() - 1) as f64 * self.dt
    }

    pub fn push(&mut self, state: Vec<f64>) -> Result<()> {
        if state.len() != self.dim() {
            return Err(Error::Dimension {
                what: "trajectory state",
                expected: self.dim(),
                found: state.len(),
            });
        }
        crate::error::check_finite("trajectory", &state)?;
        self.trajectory.push(state);
        Ok(())
    }

    /// The same history with the trajectory cut back to `X(0)`.
    pub fn restart(&self) -> Self {
        Self {
            horizon: self.horizon,
            dt: self.dt,
            history: self.history.clone(),
            trajectory: vec![self.trajectory[0].clone()],
        }
    }

    fn grid_value(&self, j: isize) -> &[f64] {
        let n_hist = self.history.len() as isize - 1;
        if j <= 0 {
            &self.history[(j + n_hist) as usize]
        } else {
            &self.trajectory[j as usize]
        }
    }

    /// `X(τ)` for `τ ∈ [−S, t_end]`, linear between grid points.
    pub fn value_at(&self, tau: f64) -> Result<Vec<f64>> {
        let lo = -self.horizon;
        let hi = self.t_end();
        let slack = 1e-12 * (1.0 + hi.abs() + lo.abs());
        if tau < lo - slack || tau > hi + slack {
            return Err(Error::OutOfRange {
                what: "segment time",
                detail: format!("{tau} outside [{lo}, {hi}]"),
            });
        }
        let mut pos = tau.clamp(lo, hi) / self.dt;
        if (pos - pos.round()).abs() < 1e-9 {
            pos = pos.round();
        }
        let j0 = pos.floor();
        let frac = pos - j0;
        let j0 = j0 as isize;
        let a = self.grid_value(j0);
        if frac == 0.0 {
            return Ok(a.to_vec());
        }
        let b = self.grid_value(j0 + 1);
        Ok(a.iter().zip(b).map(|(x, y)| x + frac * (y - x)).collect())
    }

    /// The segment `X_t(θ) = X(t + θ)`, `θ ∈ [−S, 0]`.
    pub fn segment(&self, t: f64) -> Result<SegmentView<'_>> {
        if t < -1e-12 || t > self.t_end() + 1e-12 * (1.0 + t.abs()) {
            return Err(Error::OutOfRange {
                what: "segment time",
                detail: format!("{t} outside [0, {}]", self.t_end()),
            });
        }
        Ok(SegmentView { path: self, t })
    }

    /// `sup ‖X(τ)‖²` over every stored state.
    pub fn sup_norm_sq(&self) -> f64 {
        self.history
            .iter()
            .chain(&self.trajectory)
            .map(|v| norm_sq(v))
            .fold(0.0, f64::max)
    }

    /// Rows `[t, x_1, …, x_n]` from `−S` to `t_end`, the seam once.
    pub fn table(&self) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim()).map(|i| format!("c{i}")));
        let n_hist = self.history.len() - 1;
        let mut rows = Vec::new();
        for (j, h) in self.history[..n_hist].iter().enumerate() {
            let mut row = vec![-self.horizon + j as f64 * self.dt];
            row.extend(h);
            rows.push(row);
        }
        for (k, x) in self.trajectory.iter().enumerate() {
            let mut row = vec![k as f64 * self.dt];
            row.extend(x);
            rows.push(row);
        }
        (header, rows)
    }
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[derive(Clone, Copy)]
pub struct SegmentView<'a> {
    path: &'a SegmentPath,
    t: f64,
}

impl fmt::Debug for SegmentView<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SegmentView(t = {})", self.t)
    }
}

impl SegmentView<'_> {
    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn horizon(&self) -> f64 {
        self.path.horizon
    }

    /// `X_t(θ)` for `θ ∈ [−S, 0]`.
    pub fn at(&self, theta: f64) -> Vec<f64> {
        let theta = theta.clamp(-self.path.horizon, 0.0);
        self.path
            .value_at(self.t + theta)
            .expect("segment times lie inside the stored range")
    }

    pub fn current(&self) -> Vec<f64> {
        self.at(0.0)
    }

    /// `sup_θ ‖X_t(θ)‖²`; piecewise-linear paths peak at grid points or ends.
    pub fn sup_norm_sq(&self) -> f64 {
        let dt = self.path.dt;
        let lo = self.t - self.path.horizon;
        let mut sup = norm_sq(&self.at(-self.path.horizon)).max(norm_sq(&self.current()));
        let first = (lo / dt).ceil() as isize;
        let last = (self.t / dt).floor() as isize;
        for j in first..=last {
            sup = sup.max(norm_sq(self.path.grid_value(j)));
        }
        sup
    }
}

type VecFn1 = Arc<dyn Fn(f64, &SegmentView<'_>) -> DVector<f64> + Send + Sync>;
type MatFn1 = Arc<dyn Fn(f64, &SegmentView<'_>) -> DMatrix<f64> + Send + Sync>;

/// A two-time kernel `K(t, s, X_s)`.
pub enum Kernel<T> {
    General(Arc<dyn Fn(f64, f64, &SegmentView<'_>) -> T + Send + Sync>),
    /// `K(t, s, x) = outer(t)·inner(s, x)`; accumulated by running sums.
    Separable {
        outer: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        inner: Arc<dyn Fn(f64, &SegmentView<'_>) -> T + Send + Sync>,
    },
}

impl<T> Clone for Kernel<T> {
    fn clone(&self) -> Self {
        match self {
            Kernel::General(f) => Kernel::General(f.clone()),
            Kernel::Separable { outer, inner } => Kernel::Separable {
                outer: outer.clone(),
                inner: inner.clone(),
            },
        }
    }
}

impl<T> fmt::Debug for Kernel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::General(_) => write!(f, "Kernel::General"),
            Kernel::Separable { .. } => write!(f, "Kernel::Separable"),
        }
    }
}

impl<T: std::ops::Mul<f64, Output = T>> Kernel<T> {
    pub fn general(f: impl Fn(f64, f64, &SegmentView<'_>) -> T + Send + Sync + 'static) -> Self {
        Kernel::General(Arc::new(f))
    }

    pub fn separable(
        outer: impl Fn(f64) -> f64 + Send + Sync + 'static,
        inner: impl Fn(f64, &SegmentView<'_>) -> T + Send + Sync + 'static,
    ) -> Self {
        Kernel::Separable {
            outer: Arc::new(outer),
            inner: Arc::new(inner),
        }
    }

    pub fn eval(&self, t: f64, s: f64, seg: &SegmentView<'_>) -> T {
        match self {
            Kernel::General(f) => f(t, s, seg),
            Kernel::Separable { outer, inner } => inner(s, seg) * outer(t),
        }
    }
}

/// Moduli and growth constants of the functional terms.
#[derive(Clone)]
pub struct FunctionalHypotheses {
    pub modulus: ModulusSpec,
    pub lambda3: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub lambda5: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    /// `c₀·λ₁^{2/q₁}(s)`.
    pub growth1: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub zeta: f64,
    pub lambda6: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub lambda7: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl fmt::Debug for FunctionalHypotheses {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionalHypotheses")
            .field("modulus", &self.modulus)
            .field("zeta", &self.zeta)
            .finish_non_exhaustive()
    }
}

impl FunctionalHypotheses {
    /// Constant `λ₃`, `λ₅`, `λ₇` and a constant growth factor.
    pub fn constants(modulus: ModulusSpec, lambda3: f64, lambda5: f64, growth1: f64, zeta: f64, lambda6: f64, lambda7: f64) -> Self {
        Self {
            modulus,
            lambda3: Arc::new(move |_| lambda3),
            lambda5: Arc::new(move |_, _| lambda5),
            growth1: Arc::new(move |_| growth1),
            zeta,
            lambda6: Arc::new(move |_, _| lambda6),
            lambda7: Arc::new(move |_, _| lambda7),
        }
    }

    /// `λ₈(s) = λ₃(s) + ∫₀ˢ λ₅(s, r) dr` by the trapezoid rule on `n` cells.
    pub fn lambda8(&self, s: f64, n: usize) -> f64 {
        let n = n.max(1);
        let h = s / n as f64;
        let inner: f64 = (0..=n)
            .map(|i| {
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * (self.lambda5)(s, i as f64 * h)
            })
            .sum();
        (self.lambda3)(s) + h * inner
    }
}

/// `C₁(s, X_s)`, `∫₀ˢ C₂(s, r, X_r) dr`, `D₁(s, X_s) dW_s` and
/// `∫₀ˢ D₂(s, r, X_r) dW_r`, each optional.
#[derive(Clone)]
pub struct FunctionalCoefficients {
    pub dim: usize,
    pub n_modes: usize,
    pub c1: Option<VecFn1>,
    pub c2: Option<Kernel<DVector<f64>>>,
    pub d1: Option<MatFn1>,
    pub d2: Option<Kernel<DMatrix<f64>>>,
    pub hypotheses: Option<FunctionalHypotheses>,
}

impl fmt::Debug for FunctionalCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionalCoefficients")
            .field("dim", &self.dim)
            .field("n_modes", &self.n_modes)
            .field("c1", &self.c1.is_some())
            .field("c2", &self.c2)
            .field("d1", &self.d1.is_some())
            .field("d2", &self.d2)
            .finish()
    }
}

impl FunctionalCoefficients {
    pub fn empty(dim: usize, n_modes: usize) -> Self {
        Self {
            dim,
            n_modes,
            c1: None,
            c2: None,
            d1: None,
            d2: None,
            hypotheses: None,
        }
    }

    pub fn with_c1(mut self, f: impl Fn(f64, &SegmentView<'_>) -> DVector<f64> + Send + Sync + 'static) -> Self {
        self.c1 = Some(Arc::new(f));
        self
    }

    pub fn with_c2(mut self, k: Kernel<DVector<f64>>) -> Self {
        self.c2 = Some(k);
        self
    }

    pub fn with_d1(mut self, f: impl Fn(f64, &SegmentView<'_>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.d1 = Some(Arc::new(f));
        self
    }

    pub fn with_d2(mut self, k: Kernel<DMatrix<f64>>) -> Self {
        self.d2 = Some(k);
        self
    }

    pub fn with_hypotheses(mut self, h: FunctionalHypotheses) -> Self {
        self.hypotheses = Some(h);
        self
    }

    /// Whether any term depends on the solution at all.
    pub fn is_trivial(&self) -> bool {
        self.c1.is_none() && self.c2.is_none() && self.d2.is_none()
    }
}

/// Per-step frozen terms of one Picard iteration.
struct FrozenTerms {
    /// `G(t_k)`.
    forcing: Vec<DVector<f64>>,
    /// `D₁(t_k, X_{t_k})`.
    diffusion: Vec<Option<DMatrix<f64>>>,
}

fn dw_vector(noise: &NoisePath, k: usize, m: usize) -> DVector<f64> {
    DVector::from_column_slice(&noise.increment(k)[..m])
}

/// `Σ_{j<k} K(t_k, t_j, X_{t_j})·w_j` for each `k`, where `w_j` turns a
/// kernel value into a vector.
fn accumulate<T>(
    kernel: &Kernel<T>,
    path: &SegmentPath,
    times: &[f64],
    weight: impl Fn(usize, &T) -> DVector<f64>,
    dim: usize,
) -> Vec<DVector<f64>>
where
    T: std::ops::Mul<f64, Output = T>,
{
    let n = times.len() - 1;
    let segs: Vec<SegmentView<'_>> = times[..n]
        .iter()
        .map(|&t| path.segment(t).expect("iterate covers the grid"))
        .collect();
    let mut out = vec![DVector::zeros(dim); n];
    match kernel {
        Kernel::Separable { outer, inner } => {
            let mut running = DVector::zeros(dim);
            for k in 0..n {
                out[k] = &running * outer(times[k]);
                running += weight(k, &inner(times[k], &segs[k]));
            }
        }
        Kernel::General(f) => {
            for k in 0..n {
                let mut acc = DVector::zeros(dim);
                for j in 0..k {
                    acc += weight(j, &f(times[k], times[j], &segs[j]));
                }
                out[k] = acc;
            }
        }
    }
    out
}

fn freeze(coeffs: &FunctionalCoefficients, path: &SegmentPath, noise: &NoisePath) -> FrozenTerms {
    let times = noise.times();
    let n = times.len() - 1;
    let dim = coeffs.dim;
    let m = coeffs.n_modes;
    let dt = noise.dt();
    let mut forcing = vec![DVector::zeros(dim); n];
    if let Some(c1) = &coeffs.c1 {
        for k in 0..n {
            let seg = path.segment(times[k]).expect("iterate covers the grid");
            forcing[k] += c1(times[k], &seg);
        }
    }
    if let Some(c2) = &coeffs.c2 {
        let acc = accumulate(c2, path, times, |_, v: &DVector<f64>| v * dt, dim);
        for (f, a) in forcing.iter_mut().zip(acc) {
            *f += a;
        }
    }
    if let Some(d2) = &coeffs.d2 {
        let acc = accumulate(d2, path, times, |j, v: &DMatrix<f64>| v * dw_vector(noise, j, m), dim);
        for (f, a) in forcing.iter_mut().zip(acc) {
            *f += a;
        }
    }
    let diffusion = (0..n)
        .map(|k| {
            coeffs.d1.as_ref().map(|d1| {
                let seg = path.segment(times[k]).expect("iterate covers the grid");
                d1(times[k], &seg)
            })
        })
        .collect();
    FrozenTerms { forcing, diffusion }
}

/// How the first Picard iterate extends the initial segment to `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InitialIterate {
    /// `X¹(t) = X₀(0)`.
    ConstantExtension,
    /// `X¹(t) = c·1` for `t > 0`.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardOptions {
    pub max_iter: usize,
    /// Stop once the sup distance of successive iterates falls below this.
    pub tol: f64,
    pub initial: InitialIterate,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-10,
            initial: InitialIterate::ConstantExtension,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FunctionalSolution {
    pub path: SegmentPath,
    pub times: Vec<f64>,
    pub iterations: usize,
    /// `sup_t ‖X^{n+1}(t) − Xⁿ(t)‖`, one entry per iteration.
    pub residuals: Vec<f64>,
    /// `t_k ↦ sup_{s ≤ t_k} ‖X^{n+1}(s) − Xⁿ(s)‖²`, one row per iteration.
    pub differences: Vec<Vec<f64>>,
}

impl FunctionalSolution {
    /// Whether each difference function lies below the iterate bound built
    /// from its predecessor, within `slack` relative and `floor` absolute.
    pub fn dominated_by_iterate_bound(
        &self,
        lambda8: &crate::process::TimeProfile,
        spec: &ModulusSpec,
        c0: f64,
        slack: f64,
        floor: f64,
    ) -> Result<bool> {
        for w in self.differences.windows(2) {
            let bound = crate::analysis::iterate_bound(&w[0], &self.times, lambda8, spec, c0)?;
            for (d, b) in w[1].iter().zip(&bound) {
                if *d > (1.0 + slack) * b + floor {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

fn initial_iterate(x0: &SegmentPath, n_steps: usize, initial: InitialIterate) -> Result<SegmentPath> {
    let mut path = x0.restart();
    let state = match initial {
        InitialIterate::ConstantExtension => x0.trajectory[0].clone(),
        InitialIterate::Constant(c) => vec![c; x0.dim()],
    };
    for _ in 0..n_steps {
        path.push(state.clone())?;
    }
    Ok(path)
}

/// One forward sweep with the functional terms frozen at `prev`.
fn sweep(
    system: &GalerkinSystem,
    coeffs: &FunctionalCoefficients,
    noise: &NoisePath,
    x0: &SegmentPath,
    prev: &SegmentPath,
    cfg: &SolverConfig,
) -> Result<SegmentPath> {
    let frozen = freeze(coeffs, prev, noise);
    let times = noise.times();
    let m = coeffs.n_modes;
    let mut next = x0.restart();
    for k in 0..noise.n_steps() {
        let dt = times[k + 1] - times[k];
        let x = next.trajectory.last().expect("seam state").clone();
        let mut inc = &frozen.forcing[k] * dt;
        if let Some(d) = &frozen.diffusion[k] {
            inc += d * dw_vector(noise, k, m);
        }
        let ctx = NoiseContext::at_step(noise, k);
        let y = step_with_increment(system, &x, &ctx, times[k + 1], inc.as_slice(), cfg)
            .map_err(|e| e.at_step(k))?;
        next.push(y)?;
    }
    Ok(next)
}

fn validate_functional(
    cfg: &SolverConfig,
    drift: &Arc<dyn Drift>,
    coeffs: &FunctionalCoefficients,
    noise: &NoisePath,
    x0: &SegmentPath,
) -> Result<()> {
    cfg.validate(drift.triple())?;
    if coeffs.dim != cfg.n_modes_galerkin || x0.dim() != cfg.n_modes_galerkin {
        return Err(Error::Dimension {
            what: "functional state",
            expected: cfg.n_modes_galerkin,
            found: if coeffs.dim != cfg.n_modes_galerkin { coeffs.dim } else { x0.dim() },
        });
    }
    if coeffs.n_modes > noise.n_modes() {
        return Err(Error::Dimension {
            what: "noise modes",
            expected: coeffs.n_modes,
            found: noise.n_modes(),
        });
    }
    if (x0.dt() - cfg.dt).abs() > 1e-12 * cfg.dt {
        return Err(Error::Config(format!(
            "history step {} differs from dt = {}",
            x0.dt(),
            cfg.dt
        )));
    }
    Ok(())
}

/// Picard iteration for the functional equation: each sweep freezes
/// `Gⁿ(s) = C₁(s,Xⁿ_s) + ∫₀ˢC₂ dr + ∫₀ˢD₂ dW_r` and `D₁(s,Xⁿ_s)` and
/// solves the implicit Galerkin scheme with drift `A + Gⁿ`.
pub fn picard_solve_functional(
    cfg: &SolverConfig,
    drift: Arc<dyn Drift>,
    coeffs: &FunctionalCoefficients,
    noise: &NoisePath,
    x0: &SegmentPath,
    opts: PicardOptions,
) -> Result<FunctionalSolution> {
    validate_functional(cfg, &drift, coeffs, noise, x0)?;
    let noise = align_noise(noise, cfg.dt)?;
    let ng = drift.triple().n_grid();
    let system = GalerkinSystem::new(drift, DiffusionMap::zero(ng, 1), cfg.n_modes_galerkin)?;
    let n_steps = noise.n_steps();
    let mut prev = initial_iterate(x0, n_steps, opts.initial)?;
    let mut residuals = Vec::new();
    let mut differences = Vec::new();
    for iter in 1..=opts.max_iter.max(1) {
        let next = sweep(&system, coeffs, &noise, x0, &prev, cfg)?;
        let mut running = 0.0f64;
        let diff: Vec<f64> = next
            .trajectory
            .iter()
            .zip(&prev.trajectory)
            .map(|(a, b)| {
                running = running.max(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum());
                running
            })
            .collect();
        let r = diff.last().copied().unwrap_or(0.0).sqrt();
        residuals.push(r);
        differences.push(diff);
        prev = next;
        if r < opts.tol || coeffs.is_trivial() {
            return Ok(FunctionalSolution {
                path: prev,
                times: noise.times().to_vec(),
                iterations: iter,
                residuals,
                differences,
            });
        }
    }
    Err(Error::NonConvergence {
        context: "functional Picard iteration",
        iterations: opts.max_iter,
        residual: residuals.last().copied().unwrap_or(f64::NAN),
        history: residuals,
    })
}

/// Per-step reference for the delay toy `C₁(t, X_t) = κ·X(t − S)`: reads
/// the lagged value from the path as it is built.
pub fn delay_direct_stepping(
    cfg: &SolverConfig,
    drift: Arc<dyn Drift>,
    kappa: f64,
    diffusion: &DMatrix<f64>,
    noise: &NoisePath,
    x0: &SegmentPath,
) -> Result<SegmentPath> {
    let noise = align_noise(noise, cfg.dt)?;
    let ng = drift.triple().n_grid();
    let system = GalerkinSystem::new(drift, DiffusionMap::zero(ng, 1), cfg.n_modes_galerkin)?;
    let times = noise.times();
    let m = diffusion.ncols();
    let mut path = x0.restart();
    for k in 0..noise.n_steps() {
        let dt = times[k + 1] - times[k];
        let lagged = DVector::from_vec(path.value_at(times[k] - x0.horizon())?);
        let x = path.trajectory.last().expect("seam state").clone();
        let inc = lagged * (kappa * dt) + diffusion * dw_vector(&noise, k, m);
        let ctx = NoiseContext::at_step(&noise, k);
        let y = step_with_increment(&system, &x, &ctx, times[k + 1], inc.as_slice(), cfg)
            .map_err(|e| e.at_step(k))?;
        path.push(y)?;
    }
    Ok(path)
}

/// Sup distance between the trajectories of two paths.
pub fn trajectory_distance(a: &SegmentPath, b: &SegmentPath) -> Result<f64> {
    if a.trajectory.len() != b.trajectory.len() {
        return Err(Error::Dimension {
            what: "trajectory length",
            expected: a.trajectory.len(),
            found: b.trajectory.len(),
        });
    }
    Ok(a.trajectory
        .iter()
        .zip(&b.trajectory)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>())
        .fold(0.0, f64::max)
        .sqrt())
}

/// `C(t, s, X_s)` and `D(t, s, X_s)` with their `t`-partials.
#[derive(Clone, Debug)]
pub struct VolterraCoefficients {
    pub dim: usize,
    pub n_modes: usize,
    pub c: Option<Kernel<DVector<f64>>>,
    pub dc: Option<Kernel<DVector<f64>>>,
    pub d: Option<Kernel<DMatrix<f64>>>,
    pub dd: Option<Kernel<DMatrix<f64>>>,
}

impl VolterraCoefficients {
    pub fn empty(dim: usize, n_modes: usize) -> Self {
        Self {
            dim,
            n_modes,
            c: None,
            dc: None,
            d: None,
            dd: None,
        }
    }

    /// `C` with its partial `∂ₜC`.
    pub fn with_c(mut self, c: Kernel<DVector<f64>>, dc: Kernel<DVector<f64>>) -> Self {
        self.c = Some(c);
        self.dc = Some(dc);
        self
    }

    pub fn with_d(mut self, d: Kernel<DMatrix<f64>>, dd: Kernel<DMatrix<f64>>) -> Self {
        self.d = Some(d);
        self.dd = Some(dd);
        self
    }

    pub fn diagonal_c(&self, s: f64, seg: &SegmentView<'_>) -> Option<DVector<f64>> {
        self.c.as_ref().map(|c| c.eval(s, s, seg))
    }

    pub fn diagonal_d(&self, s: f64, seg: &SegmentView<'_>) -> Option<DMatrix<f64>> {
        self.d.as_ref().map(|d| d.eval(s, s, seg))
    }
}

/// `C₁(s) = C(s,s)`, `C₂(s,r) = ∂ₛC(s,r)`, `D₁(s) = D(s,s)`, `D₂(s,r) = ∂ₛD(s,r)`.
pub fn volterra_to_functional(v: &VolterraCoefficients) -> FunctionalCoefficients {
    let mut out = FunctionalCoefficients::empty(v.dim, v.n_modes);
    if let Some(c) = v.c.clone() {
        out.c1 = Some(Arc::new(move |s, seg| c.eval(s, s, seg)));
    }
    out.c2 = v.dc.clone();
    if let Some(d) = v.d.clone() {
        out.d1 = Some(Arc::new(move |s, seg| d.eval(s, s, seg)));
    }
    out.d2 = v.dd.clone();
    out
}

/// `Σ_{j<k} C(t_k, t_j, X_{t_j}) dt + Σ_{j<k} D(t_k, t_j, X_{t_j}) ΔW_j`.
pub fn volterra_direct_eval(
    v: &VolterraCoefficients,
    path: &SegmentPath,
    noise: &NoisePath,
    k: usize,
) -> Result<DVector<f64>> {
    if k > noise.n_steps() || k >= path.trajectory.len() {
        return Err(Error::OutOfRange {
            what: "volterra evaluation step",
            detail: format!("{k} beyond the stored grid"),
        });
    }
    let times = noise.times();
    let dt = noise.dt();
    let tk = times[k];
    let mut acc = DVector::zeros(v.dim);
    for j in 0..k {
        let seg = path.segment(times[j])?;
        if let Some(c) = &v.c {
            acc += c.eval(tk, times[j], &seg) * dt;
        }
        if let Some(d) = &v.d {
            acc += d.eval(tk, times[j], &seg) * dw_vector(noise, j, v.n_modes);
        }
    }
    Ok(acc)
}

/// The reduced form accumulated on the same path:
/// `Σ_{j<k} [C₁(t_j) dt + D₁(t_j) ΔW_j + G₂(t_j) dt]`, with
/// `G₂(t_j) = Σ_{i<j} C₂(t_j,t_i) dt + Σ_{i<j} D₂(t_j,t_i) ΔW_i`.
pub fn functional_accumulation(
    f: &FunctionalCoefficients,
    path: &SegmentPath,
    noise: &NoisePath,
) -> Result<Vec<DVector<f64>>> {
    let n = noise.n_steps();
    if path.trajectory.len() < n + 1 {
        return Err(Error::Dimension {
            what: "path length",
            expected: n + 1,
            found: path.trajectory.len(),
        });
    }
    let frozen = freeze(f, path, noise);
    let dt = noise.dt();
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = DVector::zeros(f.dim);
    out.push(acc.clone());
    for k in 0..n {
        acc += &frozen.forcing[k] * dt;
        if let Some(d) = &frozen.diffusion[k] {
            acc += d * dw_vector(noise, k, f.n_modes);
        }
        out.push(acc.clone());
    }
    Ok(out)
}

/// Sup over grid times of `‖direct − reduced‖` on a fixed path and noise.
pub fn volterra_consistency(v: &VolterraCoefficients, path: &SegmentPath, noise: &NoisePath) -> Result<f64> {
    let f = volterra_to_functional(v);
    let reduced = functional_accumulation(&f, path, noise)?;
    let mut sup = 0.0f64;
    for (k, r) in reduced.iter().enumerate() {
        let direct = volterra_direct_eval(v, path, noise, k)?;
        sup = sup.max((direct - r).norm());
    }
    Ok(sup)
}

/// Compares supplied `∂ₜ` kernels with centred differences at sampled
/// `(t, s)` pairs, `s ≤ t`, of a stored path.
pub fn check_partials(
    v: &VolterraCoefficients,
    path: &SegmentPath,
    seed: u64,
    n_samples: usize,
    rel_tol: f64,
) -> ViolationReport {
    let mut report = ViolationReport {
        check: "volterra partials".into(),
        n_samples,
        violations: Vec::new(),
        max_relative_excess: f64::NEG_INFINITY,
    };
    let t_end = path.t_end();
    let n_grid = path.trajectory.len();
    for sample in 0..n_samples {
        let mut rng = stream_rng(seed, sample as u64, 0x5654_4c50);
        let js = rng.random_range(0..n_grid);
        let s = js as f64 * path.dt;
        let t = rng.random_range(s..=t_end.max(s));
        let seg = path.segment(s).expect("grid time");
        let h = 1e-5 * t.abs().max(1.0);
        let mut record = |fd: Vec<f64>, given: Vec<f64>, what: &str| {
            let scale = given.iter().chain(&fd).map(|x| x.abs()).fold(0.0, f64::max).max(1e-8);
            let excess = fd.iter().zip(&given).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let rel = excess / scale;
            report.max_relative_excess = report.max_relative_excess.max(rel - rel_tol);
            if rel > rel_tol {
                report.violations.push(Violation {
                    sample,
                    t,
                    w: s,
                    excess,
                    scale,
                    detail: format!("{what}: supplied partial disagrees with centred difference"),
                });
            }
        };
        if let (Some(c), Some(dc)) = (&v.c, &v.dc) {
            let fd = (c.eval(t + h, s, &seg) - c.eval(t - h, s, &seg)) / (2.0 * h);
            record(fd.iter().cloned().collect(), dc.eval(t, s, &seg).iter().cloned().collect(), "C");
        }
        if let (Some(d), Some(dd)) = (&v.d, &v.dd) {
            let fd = (d.eval(t + h, s, &seg) - d.eval(t - h, s, &seg)) / (2.0 * h);
            record(fd.iter().cloned().collect(), dd.eval(t, s, &seg).iter().cloned().collect(), "D");
        }
    }
    report
}

/// Sampled modulus and growth bounds of the functional terms on pairs of
/// random piecewise-linear segments.
pub fn check_functional_hypotheses(
    coeffs: &FunctionalCoefficients,
    horizon: f64,
    dt: f64,
    t_final: f64,
    seed: u64,
    n_samples: usize,
) -> Result<ViolationReport> {
    let hyp = coeffs
        .hypotheses
        .as_ref()
        .ok_or_else(|| Error::Config("coefficients carry no hypothesis constants".into()))?;
    let mut report = ViolationReport {
        check: "functional hypotheses".into(),
        n_samples,
        violations: Vec::new(),
        max_relative_excess: f64::NEG_INFINITY,
    };
    let n_hist = grid_steps(horizon, dt, "memory horizon")?;
    let n_steps = grid_steps(t_final, dt, "horizon")?;
    let dim = coeffs.dim;
    for sample in 0..n_samples {
        let mut rng = stream_rng(seed, sample as u64, 0x4846_4859);
        let amp = 10f64.powf(rng.random_range(-2.0..1.0));
        let rel = 10f64.powf(rng.random_range(-4.0..0.0));
        let mut make = |scale: f64| -> Result<SegmentPath> {
            let hist: Vec<Vec<f64>> = (0..=n_hist)
                .map(|_| (0..dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect())
                .collect();
            let mut p = SegmentPath::new(horizon, dt, hist)?;
            for _ in 0..n_steps {
                p.push((0..dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect())?;
            }
            Ok(p)
        };
        let base = make(amp)?;
        let bump = make(amp * rel)?;
        let mut other = base.clone();
        for (a, b) in other.history.iter_mut().zip(&bump.history) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in other.trajectory.iter_mut().zip(&bump.trajectory) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        other.history.last_mut().expect("history").clone_from(&other.trajectory[0]);
        let kt = rng.random_range(0..=n_steps);
        let ks = rng.random_range(0..=kt);
        let t = kt as f64 * dt;
        let s = ks as f64 * dt;
        let sa = base.segment(t)?;
        let sb = other.segment(t)?;
        let ra = base.segment(s)?;
        let rb = other.segment(s)?;
        // Segment distance over the window of the evaluated segment.
        let diff_path = {
            let mut d = base.clone();
            for (a, b) in d.history.iter_mut().zip(&other.history) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x -= y);
            }
            for (a, b) in d.trajectory.iter_mut().zip(&other.trajectory) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x -= y);
            }
            d
        };
        let dist_t = diff_path.segment(t)?.sup_norm_sq();
        let dist_s = diff_path.segment(s)?.sup_norm_sq();
        let mut record = |lhs: f64, rhs: f64, what: &str| {
            let scale = (lhs + rhs).max(1e-300);
            let excess = lhs - rhs;
            report.max_relative_excess = report.max_relative_excess.max(excess / scale);
            if excess > 1e-9 * scale {
                report.violations.push(Violation {
                    sample,
                    t,
                    w: s,
                    excess,
                    scale,
                    detail: what.into(),
                });
            }
        };
        let rho_t = hyp.modulus.value(dist_t);
        let rho_s = hyp.modulus.value(dist_s);
        if let Some(c1) = &coeffs.c1 {
            let lhs = (c1(t, &sa) - c1(t, &sb)).norm_squared();
            record(lhs, (hyp.lambda3)(t) * rho_t, "C1 modulus");
        }
        if let Some(d1) = &coeffs.d1 {
            let lhs = (d1(t, &sa) - d1(t, &sb)).norm_squared();
            record(lhs, (hyp.lambda3)(t) * rho_t, "D1 modulus");
        }
        if let Some(c2) = &coeffs.c2 {
            let lhs = (c2.eval(t, s, &ra) - c2.eval(t, s, &rb)).norm_squared();
            record(lhs, (hyp.lambda5)(t, s) * rho_s, "C2 modulus");
        }
        if let Some(d2) = &coeffs.d2 {
            let lhs = (d2.eval(t, s, &ra) - d2.eval(t, s, &rb)).norm_squared();
            record(lhs, (hyp.lambda5)(t, s) * rho_s, "D2 modulus");
        }
        let g1 = coeffs.c1.as_ref().map_or(0.0, |c| c(t, &sa).norm_squared())
            + coeffs.d1.as_ref().map_or(0.0, |d| d(t, &sa).norm_squared());
        record(g1, (hyp.growth1)(t) * (hyp.zeta + sa.sup_norm_sq()), "first-order growth");
        let g2 = coeffs.c2.as_ref().map_or(0.0, |c| c.eval(t, s, &ra).norm_squared())
            + coeffs.d2.as_ref().map_or(0.0, |d| d.eval(t, s, &ra).norm_squared());
        record(g2, (hyp.lambda6)(t, s) + (hyp.lambda7)(t, s) * ra.sup_norm_sq(), "kernel growth");
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::iterate_bound;
    use crate::operators::{builtin, BuiltinKind, BuiltinOptions, NoiseShape};
    use crate::process::TimeProfile;

    fn heat(n_grid: usize) -> Arc<dyn Drift> {
        builtin(
            BuiltinKind::Heat,
            BuiltinOptions {
                n_grid,
                n_modes: 1,
                noise: NoiseShape::Zero,
            },
        )
        .unwrap()
        .drift
    }

    fn delay_coeffs(kappa: f64, sigma: f64, horizon: f64) -> FunctionalCoefficients {
        FunctionalCoefficients::empty(1, 1)
            .with_c1(move |_, seg| DVector::from_vec(seg.at(-horizon)) * kappa)
            .with_d1(move |_, _| DMatrix::from_element(1, 1, sigma))
    }

    #[test]
    fn segment_accessors() {
        let dt = 0.1;
        let mut p = SegmentPath::from_fn(0.5, dt, |th| vec![th]).unwrap();
        assert_eq!(p.history().len(), 6);
        for k in 1..=10 {
            p.push(vec![k as f64 * dt]).unwrap();
        }
        let seg0 = p.segment(0.0).unwrap();
        assert!((seg0.at(-0.3)[0] + 0.3).abs() < 1e-12);
        let seg = p.segment(0.7).unwrap();
        assert_eq!(seg.current(), p.trajectory()[7]);
        // Linear path: interpolated midpoint equals the half-sum.
        let mid = p.value_at(0.25).unwrap()[0];
        let half = 0.5 * (p.value_at(0.2).unwrap()[0] + p.value_at(0.3).unwrap()[0]);
        assert!((mid - half).abs() < 1e-12);
        assert!(p.segment(1.5).is_err());
        assert_eq!(p.history().last(), p.trajectory().first());
        assert!((seg.sup_norm_sq() - 0.49).abs() < 1e-12);
    }

    #[test]
    fn trivial_coefficients_take_one_iteration() {
        let drift = heat(8);
        let cfg = SolverConfig::new(2, 0.01);
        let noise = NoisePath::sample(3, 0.5, 50, 2).unwrap();
        let coeffs = FunctionalCoefficients::empty(2, 2)
            .with_d1(|_, _| DMatrix::from_element(2, 2, 0.3));
        let x0 = SegmentPath::constant(0.0, 0.01, vec![1.0, 0.5]).unwrap();
        let sol = picard_solve_functional(&cfg, drift, &coeffs, &noise, &x0, PicardOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn delay_toy_matches_direct_stepping() {
        let drift = heat(4);
        let dt = 0.01;
        let horizon = 0.2;
        let kappa = 1.5;
        let cfg = SolverConfig::new(1, dt);
        let noise = NoisePath::sample(17, 1.0, 100, 1).unwrap();
        let x0 = SegmentPath::from_fn(horizon, dt, |th| vec![1.0 + th]).unwrap();
        let tol = 1e-10;
        let opts = PicardOptions { max_iter: 200, tol, ..PicardOptions::default() };
        let coeffs = delay_coeffs(kappa, 0.4, horizon);
        let sol = picard_solve_functional(&cfg, drift.clone(), &coeffs, &noise, &x0, opts).unwrap();
        let direct = delay_direct_stepping(&cfg, drift, kappa, &DMatrix::from_element(1, 1, 0.4), &noise, &x0).unwrap();
        let d = trajectory_distance(&sol.path, &direct).unwrap();
        assert!(d <= 10.0 * tol, "{d}");
    }

    #[test]
    fn delay_toy_fixed_point_and_iterate_bound() {
        let drift = heat(4);
        let dt = 0.01;
        let horizon = 0.1;
        let kappa = 2.0;
        let cfg = SolverConfig::new(1, dt);
        let noise = NoisePath::sample(5, 1.0, 100, 1).unwrap();
        let x0 = SegmentPath::from_fn(horizon, dt, |_| vec![0.5]).unwrap();
        let tol = 1e-10;
        let coeffs = delay_coeffs(kappa, 0.3, horizon);
        let zero = PicardOptions { max_iter: 200, tol, initial: InitialIterate::Constant(0.0) };
        let one = PicardOptions { initial: InitialIterate::Constant(1.0), ..zero };
        let a = picard_solve_functional(&cfg, drift.clone(), &coeffs, &noise, &x0, zero).unwrap();
        let b = picard_solve_functional(&cfg, drift, &coeffs, &noise, &x0, one).unwrap();
        assert!(trajectory_distance(&a.path, &b.path).unwrap() <= 10.0 * tol);
        let lambda8 = TimeProfile::constant(&a.times, kappa * kappa).unwrap();
        let spec = ModulusSpec::Linear { slope: 1.0 };
        assert!(a.dominated_by_iterate_bound(&lambda8, &spec, 1.0, 0.2, 1e-24).unwrap());
        let bound = iterate_bound(&a.differences[0], &a.times, &lambda8, &spec, 1.0).unwrap();
        assert!(bound.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn nonconvergence_reports_history() {
        let drift = heat(4);
        let cfg = SolverConfig::new(1, 0.01);
        let noise = NoisePath::sample(1, 1.0, 100, 1).unwrap();
        let x0 = SegmentPath::constant(0.1, 0.01, vec![1.0]).unwrap();
        let coeffs = delay_coeffs(3.0, 0.0, 0.1);
        let opts = PicardOptions { max_iter: 2, tol: 1e-14, ..PicardOptions::default() };
        match picard_solve_functional(&cfg, drift, &coeffs, &noise, &x0, opts) {
            Err(Error::NonConvergence { history, .. }) => assert_eq!(history.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn exp_kernel_volterra() -> VolterraCoefficients {
        let d = Kernel::separable(|t: f64| (-t).exp(), |s: f64, _seg: &SegmentView<'_>| DMatrix::from_element(1, 1, s.exp()));
        let dd = Kernel::separable(|t: f64| -(-t).exp(), |s: f64, _seg: &SegmentView<'_>| DMatrix::from_element(1, 1, s.exp()));
        VolterraCoefficients::empty(1, 1).with_d(d, dd)
    }

    fn fixed_path(dt: f64, n: usize) -> SegmentPath {
        let mut p = SegmentPath::constant(0.0, dt, vec![0.0]).unwrap();
        for k in 1..=n {
            p.push(vec![(k as f64 * dt).sin()]).unwrap();
        }
        p
    }

    #[test]
    fn time_independent_kernels_are_consistent_exactly() {
        let dt = 0.01;
        let v = VolterraCoefficients::empty(1, 1)
            .with_c(
                Kernel::general(|_, s, seg: &SegmentView<'_>| DVector::from_vec(seg.current()) * s.cos()),
                Kernel::general(|_, _, _: &SegmentView<'_>| DVector::zeros(1)),
            )
            .with_d(
                Kernel::general(|_, s, _: &SegmentView<'_>| DMatrix::from_element(1, 1, 1.0 + s)),
                Kernel::general(|_, _, _: &SegmentView<'_>| DMatrix::zeros(1, 1)),
            );
        let noise = NoisePath::sample(2, 1.0, 100, 1).unwrap();
        let gap = volterra_consistency(&v, &fixed_path(dt, 100), &noise).unwrap();
        assert!(gap < 1e-12, "{gap}");
    }

    #[test]
    fn exponential_kernel_discrepancy_halves() {
        let v = exp_kernel_volterra();
        let fine = NoisePath::sample(42, 1.0, 400, 1).unwrap();
        let mut gaps = Vec::new();
        for factor in [4, 2, 1] {
            let noise = fine.aggregate(factor).unwrap();
            let n = noise.n_steps();
            gaps.push(volterra_consistency(&v, &fixed_path(noise.dt(), n), &noise).unwrap());
        }
        let r1 = gaps[0] / gaps[1];
        let r2 = gaps[1] / gaps[2];
        assert!((1.6..=2.4).contains(&r1) && (1.6..=2.4).contains(&r2), "{gaps:?}");
    }

    #[test]
    fn reduction_of_product_kernel() {
        // C(t, s) = t·k(s): C₁(s) = s·k(s), C₂(s, r) = k(r).
        let k = |s: f64| 1.0 + s * s;
        let v = VolterraCoefficients::empty(1, 1).with_c(
            Kernel::separable(|t| t, move |s, _: &SegmentView<'_>| DVector::from_element(1, k(s))),
            Kernel::separable(|_| 1.0, move |s, _: &SegmentView<'_>| DVector::from_element(1, k(s))),
        );
        let f = volterra_to_functional(&v);
        let p = fixed_path(0.1, 10);
        let seg = p.segment(0.5).unwrap();
        assert!((f.c1.as_ref().unwrap()(0.5, &seg)[0] - 0.5 * k(0.5)).abs() < 1e-15);
        assert!((f.c2.as_ref().unwrap().eval(0.5, 0.3, &seg)[0] - k(0.3)).abs() < 1e-15);
        assert!(f.d1.is_none() && f.d2.is_none());
    }

    #[test]
    fn shifting_the_kernel_shifts_the_diagonal() {
        let dt = 0.01;
        let noise = NoisePath::sample(8, 1.0, 100, 1).unwrap();
        let p = fixed_path(dt, 100);
        let base = exp_kernel_volterra();
        let g = |s: f64| 0.5 + s;
        let shifted = VolterraCoefficients::empty(1, 1).with_d(
            Kernel::general(move |t: f64, s: f64, _: &SegmentView<'_>| DMatrix::from_element(1, 1, (-(t - s)).exp() + g(s))),
            Kernel::general(|t: f64, s: f64, _: &SegmentView<'_>| DMatrix::from_element(1, 1, -(-(t - s)).exp())),
        );
        let a = functional_accumulation(&volterra_to_functional(&base), &p, &noise).unwrap();
        let b = functional_accumulation(&volterra_to_functional(&shifted), &p, &noise).unwrap();
        let mut extra = 0.0;
        for k in 0..=noise.n_steps() {
            assert!(((&b[k] - &a[k])[0] - extra).abs() < 1e-10);
            if k < noise.n_steps() {
                extra += g(noise.times()[k]) * noise.increment(k)[0];
            }
        }
    }

    #[test]
    fn partial_validator_flags_wrong_derivative() {
        let p = fixed_path(0.05, 20);
        let good = exp_kernel_volterra();
        assert!(check_partials(&good, &p, 1, 50, 1e-6).violations.is_empty());
        let bad = VolterraCoefficients::empty(1, 1).with_d(
            Kernel::separable(|t: f64| (-t).exp(), |s: f64, _: &SegmentView<'_>| DMatrix::from_element(1, 1, s.exp())),
            Kernel::separable(|t: f64| (-t).exp(), |s: f64, _: &SegmentView<'_>| DMatrix::from_element(1, 1, s.exp())),
        );
        assert!(!check_partials(&bad, &p, 1, 50, 1e-6).violations.is_empty());
    }

    #[test]
    fn zero_kernels_and_riemann_sum() {
        let noise = NoisePath::sample(1, 1.0, 100, 1).unwrap();
        let p = fixed_path(0.01, 100);
        let zero = VolterraCoefficients::empty(1, 1);
        assert_eq!(volterra_direct_eval(&zero, &p, &noise, 100).unwrap()[0], 0.0);
        // ∫₀¹ e^{−(1−s)} ds = 1 − e^{−1}; left sums are within O(dt).
        let v = VolterraCoefficients::empty(1, 1).with_c(
            Kernel::general(|t: f64, s: f64, _: &SegmentView<'_>| DVector::from_element(1, (-(t - s)).exp())),
            Kernel::general(|t: f64, s: f64, _: &SegmentView<'_>| DVector::from_element(1, -(-(t - s)).exp())),
        );
        let val = volterra_direct_eval(&v, &p, &noise, 100).unwrap()[0];
        let exact = 1.0 - (-1.0f64).exp();
        assert!((val - exact).abs() < 0.01, "{val}");
    }

    #[test]
    fn delay_hypotheses_hold() {
        let kappa = 1.5;
        let coeffs = delay_coeffs(kappa, 0.2, 0.1).with_hypotheses(FunctionalHypotheses::constants(
            ModulusSpec::Linear { slope: 1.0 },
            kappa * kappa,
            0.0,
            kappa * kappa + 0.04,
            1.0,
            0.0,
            0.0,
        ));
        let report = check_functional_hypotheses(&coeffs, 0.1, 0.01, 1.0, 3, 200).unwrap();
        assert!(report.violations.is_empty(), "{:?}", report.violations.first());
        let tight = coeffs.clone().with_hypotheses(FunctionalHypotheses::constants(
            ModulusSpec::Linear { slope: 1.0 },
            0.5 * kappa * kappa,
            0.0,
            kappa * kappa + 0.04,
            1.0,
            0.0,
            0.0,
        ));
        let report = check_functional_hypotheses(&tight, 0.1, 0.01, 1.0, 3, 200).unwrap();
        assert!(!report.violations.is_empty());
    }
}
