//! Galerkin projection onto `span{e₁..eₙ}` and drift-implicit
//! Euler–Maruyama stepping of the resulting SDE.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::operators::{DiffusionMap, Drift, HypothesisBundle, RescaledDrift};
use crate::process::{NoiseContext, Process, TimeProfile};
use crate::resolvent::{resolvent_from, MonotoneMap, ResolventOptions};
use crate::triple::{DiscreteTriple, GridFunction, Space};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `y − dt·b(y) = x + σ(x)·dW`, solved to tolerance.
    DriftImplicit,
    /// One Newton step of the implicit equation linearized at `x`.
    SemiImplicitLinearized,
}

/// Starting point of the nonlinear solve in each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// `x + σ·dW`.
    Explicit,
    /// The previous state.
    Previous,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub n_modes_galerkin: usize,
    pub dt: f64,
    pub scheme: Scheme,
    pub resolvent_tol: f64,
    pub resolvent_max_iter: usize,
    pub rescale_lambda0: bool,
    pub initial_guess: InitialGuess,
}

impl SolverConfig {
    pub fn new(n_modes_galerkin: usize, dt: f64) -> Self {
        Self {
            n_modes_galerkin,
            dt,
            scheme: Scheme::DriftImplicit,
            resolvent_tol: 1e-10,
            resolvent_max_iter: 50,
            rescale_lambda0: false,
            initial_guess: InitialGuess::Explicit,
        }
    }

    pub fn validate(&self, triple: &DiscreteTriple) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.resolvent_tol > 0.0) {
            return Err(Error::Config(format!(
                "resolvent_tol = {} must be positive",
                self.resolvent_tol
            )));
        }
        if self.resolvent_max_iter == 0 {
            return Err(Error::Config("resolvent_max_iter must be at least 1".into()));
        }
        triple.check_modes(self.n_modes_galerkin)
    }

    fn resolvent_options(&self) -> ResolventOptions {
        ResolventOptions {
            tol: self.resolvent_tol,
            max_iter: self.resolvent_max_iter,
        }
    }
}

/// Coefficients `b(t, x) = [e_i, A(t, x·e)]` and `σ(t, x) = ⟨e_i, B(t, x·e)Π̃ₙ⟩`
/// of the projected SDE.
#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    drift: Arc<dyn Drift>,
    diffusion: DiffusionMap,
    n: usize,
    // n_grid × n, columns e_i.
    basis: DMatrix<f64>,
    // n × n_grid, rows h·e_iᵀ: applied to a representer gives [e_i, ·].
    test: DMatrix<f64>,
}

pub fn galerkin_coefficients(
    drift: Arc<dyn Drift>,
    diffusion: DiffusionMap,
    n: usize,
) -> Result<GalerkinSystem> {
    GalerkinSystem::new(drift, diffusion, n)
}

impl GalerkinSystem {
    pub fn new(drift: Arc<dyn Drift>, diffusion: DiffusionMap, n: usize) -> Result<Self> {
        let triple = drift.triple();
        triple.check_modes(n)?;
        let ng = triple.n_grid();
        let h = triple.h();
        let mut basis = DMatrix::zeros(ng, n);
        for i in 0..n {
            basis.set_column(i, &DVector::from_vec(triple.basis_vector(i)));
        }
        let test = basis.transpose() * h;
        Ok(Self {
            drift,
            diffusion,
            n,
            basis,
            test,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn triple(&self) -> &DiscreteTriple {
        self.drift.triple()
    }

    pub fn drift_operator(&self) -> &Arc<dyn Drift> {
        &self.drift
    }

    pub fn diffusion_map(&self) -> &DiffusionMap {
        &self.diffusion
    }

    /// `Σ x_i e_i` on the grid.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        (&self.basis * DVector::from_column_slice(x)).data.into()
    }

    pub fn coords(&self, u: &[f64]) -> Vec<f64> {
        self.triple().coords(u, self.n)
    }

    pub fn drift(&self, ctx: &NoiseContext<'_>, x: &[f64]) -> Vec<f64> {
        let r = self.drift.representer(ctx, &self.expand(x));
        (&self.test * DVector::from_vec(r)).data.into()
    }

    /// `∂b/∂x`. The pairing shift contributes `shift·I` since `h·eᵢᵀPeⱼ = δᵢⱼ`.
    pub fn drift_jacobian(&self, ctx: &NoiseContext<'_>, x: &[f64]) -> DMatrix<f64> {
        let jac = self.drift.jacobian(ctx, &self.expand(x));
        let mut out = &self.test * jac.local.mul_dense(&self.basis);
        for i in 0..self.n {
            out[(i, i)] += jac.pairing_shift;
        }
        out
    }

    /// `n × n_modes`; noise modes beyond the Galerkin dimension are dropped.
    pub fn diffusion(&self, ctx: &NoiseContext<'_>, x: &[f64]) -> DMatrix<f64> {
        let b = self.diffusion.eval(ctx, &self.expand(x));
        let m = b.ncols();
        let mut out = DMatrix::zeros(self.n, m);
        for j in 0..m.min(self.n) {
            let c = self.triple().coords(b.column(j).as_slice(), self.n);
            out.set_column(j, &DVector::from_vec(c));
        }
        out
    }
}

/// The Galerkin drift with its random coefficients frozen.
struct FrozenDrift<'a> {
    system: &'a GalerkinSystem,
    ctx: NoiseContext<'a>,
}

impl MonotoneMap for FrozenDrift<'_> {
    fn dim(&self) -> usize {
        self.system.n
    }

    fn eval(&self, _t: f64, x: &[f64]) -> Vec<f64> {
        self.system.drift(&self.ctx, x)
    }

    fn jacobian(&self, _t: f64, x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.system.drift_jacobian(&self.ctx, x))
    }

    fn is_diagonal(&self) -> bool {
        self.system.n == 1
    }

    fn component(&self, _t: f64, _i: usize, r: f64) -> (f64, f64) {
        let v = self.system.drift(&self.ctx, &[r])[0];
        let d = self.system.drift_jacobian(&self.ctx, &[r])[(0, 0)];
        (v, d)
    }

    fn name(&self) -> String {
        format!("galerkin[{}]", self.system.drift.name())
    }
}

/// One step from `x` at the left context `ctx` to `t_next`.
///
/// The drift is evaluated at `t_next` with the noise value frozen at the left
/// endpoint.
pub fn step_implicit(
    system: &GalerkinSystem,
    x: &[f64],
    ctx: &NoiseContext<'_>,
    t_next: f64,
    dw: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let kick = noise_kick(system, x, ctx, dw)?;
    step_with_increment(system, x, ctx, t_next, &kick, cfg)
}

/// `σ(t_k, x)·ΔW_k` in coordinates.
fn noise_kick(system: &GalerkinSystem, x: &[f64], ctx: &NoiseContext<'_>, dw: &[f64]) -> Result<Vec<f64>> {
    crate::error::check_finite("step state", x)?;
    let sigma = system.diffusion(ctx, x);
    if dw.len() < sigma.ncols() {
        return Err(Error::Dimension {
            what: "noise increment",
            expected: sigma.ncols(),
            found: dw.len(),
        });
    }
    Ok((&sigma * DVector::from_column_slice(&dw[..sigma.ncols()])).data.into())
}

/// Solves `y − dt·b(t_next, y) = x + increment`, where `increment` carries
/// every explicit (left-point) contribution of the step.
pub fn step_with_increment(
    system: &GalerkinSystem,
    x: &[f64],
    ctx: &NoiseContext<'_>,
    t_next: f64,
    increment: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let dt = t_next - ctx.t;
    if increment.len() != x.len() {
        return Err(Error::Dimension {
            what: "step increment",
            expected: x.len(),
            found: increment.len(),
        });
    }
    let kick = increment;
    let rhs: Vec<f64> = x.iter().zip(kick.iter()).map(|(a, b)| a + b).collect();
    let frozen = FrozenDrift {
        system,
        ctx: ctx.with_time(t_next),
    };
    match cfg.scheme {
        Scheme::DriftImplicit => {
            let guess = match cfg.initial_guess {
                InitialGuess::Explicit => rhs.clone(),
                InitialGuess::Previous => x.to_vec(),
                InitialGuess::Zero => vec![0.0; x.len()],
            };
            resolvent_from(&frozen, t_next, dt, &rhs, &guess, cfg.resolvent_options()).map(|o| o.y)
        }
        Scheme::SemiImplicitLinearized => {
            let n = x.len();
            let b = frozen.eval(t_next, x);
            let jac = DMatrix::identity(n, n) - system.drift_jacobian(&frozen.ctx, x) * dt;
            let rhs = DVector::from_iterator(n, (0..n).map(|i| dt * b[i] + kick[i]));
            let delta = jac.lu().solve(&rhs).ok_or_else(|| {
                Error::Domain("singular linearized step matrix".into())
            })?;
            Ok((0..n).map(|i| x[i] + delta[i]).collect())
        }
    }
}

/// Per-step integrands of the a-priori estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub h_norm_sq: f64,
    pub x1_norm: f64,
    pub x2_norm: f64,
    /// `‖X‖^{q₁}_{𝕏₁}`.
    pub x1_pow: f64,
    /// `‖X‖^{q₂}_{𝕏₂}`.
    pub x2_pow: f64,
}

#[derive(Debug, Clone)]
pub struct SolutionPath {
    pub times: Vec<f64>,
    pub states: Vec<GridFunction>,
    /// `H`-coordinates in `e₁..eₙ`.
    pub coords: Vec<Vec<f64>>,
    pub ledger: Vec<LedgerEntry>,
    /// Defect of the discrete energy identity for the step ending at index `k`
    /// (zero at `k = 0`).
    pub energy_residual: Vec<f64>,
    /// Noise on the solver grid.
    pub noise: NoisePath,
}

impl SolutionPath {
    fn from_coords(
        triple: &DiscreteTriple,
        system: &GalerkinSystem,
        coords: Vec<Vec<f64>>,
        noise: NoisePath,
    ) -> Result<Self> {
        let (q1, q2) = triple.flavor().exponents();
        let mut states = Vec::with_capacity(coords.len());
        let mut ledger = Vec::with_capacity(coords.len());
        for c in &coords {
            let u = triple.function(system.expand(c))?;
            let x1 = triple.x_norm_with(&u, Space::X1, q1);
            let x2 = triple.x_norm_with(&u, Space::X2, q2);
            ledger.push(LedgerEntry {
                h_norm_sq: triple.h_norm_sq(&u),
                x1_norm: x1,
                x2_norm: x2,
                x1_pow: x1.powf(q1),
                x2_pow: x2.powf(q2),
            });
            states.push(u);
        }
        Ok(Self {
            times: noise.times().to_vec(),
            energy_residual: vec![0.0; states.len()],
            states,
            coords,
            ledger,
            noise,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.coords.first().map_or(0, Vec::len)
    }

    pub fn final_state(&self) -> &GridFunction {
        self.states.last().expect("a path has at least one state")
    }

    /// `Σ_k |defect_k|`.
    pub fn cumulative_energy_residual(&self) -> f64 {
        self.energy_residual.iter().map(|r| r.abs()).sum()
    }

    /// Column names and rows for trajectory export.
    pub fn table(&self) -> (Vec<String>, Vec<Vec<f64>>) {
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n_modes()).map(|i| format!("c{i}")));
        header.extend(
            ["h_norm_sq", "x1_norm", "x2_norm", "energy_residual"]
                .iter()
                .map(|s| s.to_string()),
        );
        let rows = (0..self.times.len())
            .map(|k| {
                let mut row = vec![self.times[k]];
                row.extend(&self.coords[k]);
                let l = &self.ledger[k];
                row.extend([l.h_norm_sq, l.x1_norm, l.x2_norm, self.energy_residual[k]]);
                row
            })
            .collect();
        (header, rows)
    }
}

/// `sup_k ‖a_k − Π_n b_k‖_H` where `n` is the Galerkin dimension of `a`.
pub fn sup_h_distance(triple: &DiscreteTriple, a: &SolutionPath, b: &SolutionPath) -> Result<f64> {
    if a.times.len() != b.times.len() {
        return Err(Error::Dimension {
            what: "path lengths",
            expected: a.times.len(),
            found: b.times.len(),
        });
    }
    let n = a.n_modes();
    if b.n_modes() < n {
        return Err(Error::Dimension {
            what: "Galerkin modes of the finer path",
            expected: n,
            found: b.n_modes(),
        });
    }
    triple.check_modes(b.n_modes())?;
    // Orthonormal nested coordinates: Π_n keeps the first n.
    let sup = a
        .coords
        .iter()
        .zip(&b.coords)
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    Ok(sup)
}

/// Brings the noise onto the `dt` grid by summing fine increments.
pub fn align_noise(noise: &NoisePath, dt: f64) -> Result<NoisePath> {
    let ratio = dt / noise.dt();
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
        return Err(Error::Config(format!(
            "dt = {dt} is not a positive multiple of the noise step {}",
            noise.dt()
        )));
    }
    if factor == 1.0 {
        Ok(noise.clone())
    } else {
        noise.aggregate(factor as usize)
    }
}

pub fn solve_forward(
    cfg: &SolverConfig,
    drift: Arc<dyn Drift>,
    diffusion: &DiffusionMap,
    noise: &NoisePath,
    x0: &GridFunction,
) -> Result<SolutionPath> {
    let triple = drift.triple().clone();
    cfg.validate(&triple)?;
    if !triple.owns(x0) {
        return Err(Error::Config("initial state belongs to another triple".into()));
    }
    if diffusion.n_modes() > noise.n_modes() {
        return Err(Error::Dimension {
            what: "noise modes",
            expected: diffusion.n_modes(),
            found: noise.n_modes(),
        });
    }
    let noise = align_noise(noise, cfg.dt)?;
    let system = GalerkinSystem::new(drift, diffusion.clone(), cfg.n_modes_galerkin)?;
    let mut coords = Vec::with_capacity(noise.n_steps() + 1);
    let mut kicks = Vec::with_capacity(noise.n_steps());
    coords.push(system.coords(x0));
    for k in 0..noise.n_steps() {
        let ctx = NoiseContext::at_step(&noise, k);
        let t_next = noise.times()[k + 1];
        let x = coords.last().expect("initial state pushed");
        let kick = noise_kick(&system, x, &ctx, noise.increment(k)).map_err(|e| e.at_step(k))?;
        let y = step_with_increment(&system, x, &ctx, t_next, &kick, cfg).map_err(|e| e.at_step(k))?;
        coords.push(y);
        kicks.push(kick);
    }
    let mut path = SolutionPath::from_coords(&triple, &system, coords, noise)?;
    path.energy_residual = residual_with_kicks(&path, &system, &kicks)?;
    Ok(path)
}

/// The drift, diffusion and constants after the exponential change of
/// variables that removes `λ₀`.
pub fn rescale_problem(
    drift: Arc<dyn Drift>,
    diffusion: &DiffusionMap,
    bundle: &HypothesisBundle,
) -> (Arc<dyn Drift>, DiffusionMap, HypothesisBundle) {
    if bundle.lambda0.is_zero() {
        return (drift, diffusion.clone(), bundle.clone());
    }
    let lambda0 = bundle.lambda0.clone();
    (
        Arc::new(RescaledDrift::new(drift, lambda0.clone())),
        DiffusionMap::Rescaled {
            base: Box::new(diffusion.clone()),
            lambda0,
        },
        bundle.rescaled(),
    )
}

/// [`solve_forward`] honoring `cfg.rescale_lambda0`: the transformed problem
/// is solved and mapped back by `X = γ·X̃`.
pub fn solve_problem(
    cfg: &SolverConfig,
    drift: Arc<dyn Drift>,
    diffusion: &DiffusionMap,
    bundle: &HypothesisBundle,
    noise: &NoisePath,
    x0: &GridFunction,
) -> Result<SolutionPath> {
    if !cfg.rescale_lambda0 || bundle.lambda0.is_zero() {
        return solve_forward(cfg, drift, diffusion, noise, x0);
    }
    let (rd, rb, _) = rescale_problem(drift.clone(), diffusion, bundle);
    let transformed = solve_forward(cfg, rd, &rb, noise, x0)?;
    let coords = (0..transformed.times.len())
        .map(|k| {
            let gamma =
                (0.5 * bundle.lambda0.integral(&NoiseContext::at_step(&transformed.noise, k))).exp();
            transformed.coords[k].iter().map(|c| gamma * c).collect()
        })
        .collect();
    let system = GalerkinSystem::new(drift, diffusion.clone(), cfg.n_modes_galerkin)?;
    let triple = system.triple().clone();
    let mut path = SolutionPath::from_coords(&triple, &system, coords, transformed.noise)?;
    path.energy_residual = energy_residual(&path, &system)?;
    Ok(path)
}

/// Per-step defect of
/// `‖X_{k+1}‖² − ‖X_k‖² − 2dt[X_{k+1}, A] − 2⟨X_k, B·dW⟩ − ‖B·dW‖²`,
/// with `B·dW` restricted to the Galerkin span.
pub fn energy_residual(path: &SolutionPath, system: &GalerkinSystem) -> Result<Vec<f64>> {
    let m = system.diffusion_map().n_modes();
    let kicks = (0..path.states.len() - 1)
        .map(|k| {
            let ctx = NoiseContext::at_step(&path.noise, k);
            let sigma = system.diffusion(&ctx, &path.coords[k]);
            (&sigma * DVector::from_column_slice(&path.noise.increment(k)[..m])).data.into()
        })
        .collect::<Vec<Vec<f64>>>();
    residual_with_kicks(path, system, &kicks)
}

fn residual_with_kicks(path: &SolutionPath, system: &GalerkinSystem, kicks: &[Vec<f64>]) -> Result<Vec<f64>> {
    let triple = system.triple();
    let noise = &path.noise;
    let mut out = vec![0.0; path.states.len()];
    for k in 0..path.states.len() - 1 {
        let ctx = NoiseContext::at_step(noise, k);
        let t_next = path.times[k + 1];
        let dt = t_next - path.times[k];
        let x = &path.states[k];
        let y = &path.states[k + 1];
        let frozen = ctx.with_time(t_next);
        let pairing = crate::operators::drift_pairing(system.drift_operator().as_ref(), &frozen, y, y);
        let kick = system.expand(&kicks[k]);
        let cross = triple.h_inner(x, &kick)?;
        out[k + 1] = triple.h_norm_sq(y)
            - triple.h_norm_sq(x)
            - 2.0 * dt * pairing
            - 2.0 * cross
            - triple.h_norm_sq(&kick);
    }
    Ok(out)
}

/// `θ_m = inf{t : ∫₀ᵗ λ₃ ≥ m}`, or the final time when the level is not reached.
///
/// `λ₃` is linear between nodes, so the crossing is found exactly.
pub fn clock_theta(lambda3: &TimeProfile, m: f64) -> f64 {
    let times = &lambda3.times;
    let values = &lambda3.values;
    if m <= 0.0 {
        return times[0];
    }
    let mut acc = 0.0;
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        let (a, b) = (values[k - 1], values[k]);
        let seg = 0.5 * (a + b) * dt;
        if acc + seg >= m {
            // Solve acc + a·s + (b − a)s²/(2dt) = m for s ∈ [0, dt].
            let need = m - acc;
            let quad = (b - a) / (2.0 * dt);
            let s = if quad.abs() < 1e-300 {
                need / a
            } else {
                let disc = (a * a + 4.0 * quad * need).max(0.0);
                2.0 * need / (a + disc.sqrt())
            };
            return times[k - 1] + s.clamp(0.0, dt);
        }
        acc += seg;
    }
    *times.last().expect("profile has nodes")
}

/// Left- and right-hand sides of the a-priori estimate on one path.
#[derive(Debug, Clone, Serialize)]
pub struct AprioriReport {
    pub sup_h_sq: f64,
    /// `∫λᵢ‖X‖^{qᵢ}_{𝕏ᵢ} dt` for `i = 1, 2`.
    pub int_lambda_x: [f64; 2],
    pub int_lambda3_h: f64,
    pub lhs: f64,
    /// `‖X₀‖² + ∫ξ + Σ∫ηᵢ^{qᵢ/(qᵢ−1)}`.
    pub budget: f64,
    /// `m = ∫λ₃`; the budget is multiplied by `e^m`.
    pub m: f64,
    pub rhs: f64,
    pub exceeded: bool,
}

pub fn apriori_norms(path: &SolutionPath, bundle: &HypothesisBundle) -> AprioriReport {
    let noise = &path.noise;
    let n = path.times.len();
    let ctx = |k: usize| NoiseContext::at_step(noise, k);
    let trapezoid = |f: &dyn Fn(usize) -> f64| {
        (1..n)
            .map(|k| 0.5 * (f(k - 1) + f(k)) * (path.times[k] - path.times[k - 1]))
            .sum::<f64>()
    };
    let pows = |i: usize, k: usize| {
        if i == 0 {
            path.ledger[k].x1_pow
        } else {
            path.ledger[k].x2_pow
        }
    };
    let int_lambda_x = [0, 1].map(|i| {
        trapezoid(&|k| bundle.lambda(i).value(&ctx(k)) * pows(i, k))
    });
    let int_lambda3_h = trapezoid(&|k| bundle.lambda3.value(&ctx(k)) * path.ledger[k].h_norm_sq);
    let m = trapezoid(&|k| bundle.lambda3.value(&ctx(k)));
    let sup_h_sq = path.ledger.iter().map(|l| l.h_norm_sq).fold(0.0, f64::max);
    let int_xi = trapezoid(&|k| bundle.xi.value(&ctx(k)));
    let int_eta: f64 = [0, 1]
        .iter()
        .map(|&i| {
            let q = bundle.exponent(i);
            trapezoid(&|k| bundle.eta(i).value(&ctx(k)).abs().powf(q / (q - 1.0)))
        })
        .sum();
    let budget = path.ledger[0].h_norm_sq + int_xi + int_eta;
    let lhs = sup_h_sq + int_lambda_x[0] + int_lambda_x[1];
    let rhs = m.exp() * budget;
    AprioriReport {
        sup_h_sq,
        int_lambda_x,
        int_lambda3_h,
        lhs,
        budget,
        m,
        rhs,
        exceeded: lhs > rhs * (1.0 + 1e-12),
    }
}

/// `γ(t_k) = exp(½∫₀^{t_k} λ₀)` along a path.
pub fn gamma_profile(lambda0: &Process, noise: &NoisePath) -> Vec<f64> {
    (0..noise.times().len())
        .map(|k| (0.5 * lambda0.integral(&NoiseContext::at_step(noise, k))).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{builtin, BuiltinKind, BuiltinOptions, NoiseShape};
    use crate::operators::{PorousMediumDrift, ReactionDiffusionDrift, ScalarFn};
    use crate::triple::Flavor;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn heat(n_grid: usize, noise: NoiseShape, n_modes: usize) -> crate::operators::OperatorSet {
        builtin(
            BuiltinKind::Heat,
            BuiltinOptions {
                n_grid,
                n_modes,
                noise,
            },
        )
        .unwrap()
    }

    #[test]
    fn heat_drift_is_diagonal_in_eigenbasis() {
        let set = heat(10, NoiseShape::Zero, 1);
        let sys = GalerkinSystem::new(set.drift.clone(), set.diffusion.clone(), 6).unwrap();
        let x = [1.0, -2.0, 0.5, 0.0, 3.0, -1.0];
        let b = sys.drift(&NoiseContext::deterministic(0.0), &x);
        for i in 0..6 {
            assert_abs_diff_eq!(b[i], -set.triple.eigenvalues()[i] * x[i], epsilon = 1e-9 * set.triple.eigenvalues()[i]);
        }
    }

    #[test]
    fn origin_is_fixed() {
        let set = builtin(
            BuiltinKind::RandomReactionDiffusion { p: 3.0 },
            BuiltinOptions {
                n_grid: 8,
                n_modes: 2,
                noise: NoiseShape::Zero,
            },
        )
        .unwrap();
        let sys = GalerkinSystem::new(set.drift, set.diffusion, 4).unwrap();
        let ctx = NoiseContext {
            t: 0.3,
            w: 1.2,
            path: None,
        };
        assert!(sys.drift(&ctx, &[0.0; 4]).iter().all(|v| *v == 0.0));
        assert!(sys.diffusion(&ctx, &[0.0; 4]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn porous_medium_drift_matches_quadrature() {
        let triple = Arc::new(DiscreteTriple::new(16, Flavor::PorousMedium { q: 3.0 }).unwrap());
        let drift = PorousMediumDrift::new(triple.clone(), ScalarFn::power(3.0).unwrap(), Process::Constant(1.0)).unwrap();
        let sys = GalerkinSystem::new(Arc::new(drift), DiffusionMap::zero(16, 1), 2).unwrap();
        let x = [0.7, -0.4];
        let b = sys.drift(&NoiseContext::deterministic(0.0), &x);
        // Direct rectangle-rule quadrature of −∫e_i·φ(u) over grid nodes.
        let h = triple.h();
        let e: Vec<Vec<f64>> = (0..2).map(|i| triple.basis_vector(i)).collect();
        let u: Vec<f64> = (0..16).map(|j| x[0] * e[0][j] + x[1] * e[1][j]).collect();
        for i in 0..2 {
            let q: f64 = (0..16).map(|j| -h * e[i][j] * u[j].abs() * u[j]).sum();
            assert_abs_diff_eq!(b[i], q, epsilon = 1e-10 * (1.0 + q.abs()));
        }
    }

    #[test]
    fn zero_drift_step_is_explicit_kick() {
        let set = heat(6, NoiseShape::Ones { scale: 0.3 }, 2);
        let rd = ReactionDiffusionDrift::new(
            set.triple.clone(),
            ScalarFn::Linear { slope: 0.0 },
            Process::zero(),
            ScalarFn::Linear { slope: 0.0 },
            Process::zero(),
        )
        .unwrap();
        let sys = GalerkinSystem::new(Arc::new(rd), set.diffusion.clone(), 3).unwrap();
        let x = [0.2, 0.1, -0.5];
        let dw = [0.05, -0.02];
        let cfg = SolverConfig::new(3, 0.01);
        let ctx = NoiseContext::deterministic(0.0);
        let y = step_implicit(&sys, &x, &ctx, 0.01, &dw, &cfg).unwrap();
        let s = sys.diffusion(&ctx, &x);
        for i in 0..3 {
            assert_eq!(y[i], x[i] + s[(i, 0)] * dw[0] + s[(i, 1)] * dw[1]);
        }
    }

    #[test]
    fn linear_step_closed_form() {
        let set = heat(8, NoiseShape::Zero, 1);
        let sys = GalerkinSystem::new(set.drift.clone(), set.diffusion.clone(), 3).unwrap();
        let cfg = SolverConfig::new(3, 0.01);
        let x = [1.0, 2.0, -1.0];
        let y = step_implicit(&sys, &x, &NoiseContext::deterministic(0.0), 0.01, &[0.0], &cfg).unwrap();
        for i in 0..3 {
            let mu = set.triple.eigenvalues()[i];
            assert_abs_diff_eq!(y[i], x[i] / (1.0 + mu * 0.01), epsilon = 1e-10);
        }
    }

    #[test]
    fn scalar_cubic_step_matches_bisection() {
        // n_grid = 1: u = √2·x and b(x) = −k·x³ with k = 2 (from h·e₁·(√2x)³).
        let triple = Arc::new(DiscreteTriple::new(1, Flavor::ReactionDiffusion { q1: 2.0, q2: 4.0 }).unwrap());
        let rd = ReactionDiffusionDrift::new(
            triple,
            ScalarFn::Linear { slope: 0.0 },
            Process::zero(),
            ScalarFn::power(4.0).unwrap(),
            Process::Constant(1.0),
        )
        .unwrap();
        let sys = GalerkinSystem::new(Arc::new(rd), DiffusionMap::zero(1, 1), 1).unwrap();
        let dt = 0.3;
        let y = step_implicit(&sys, &[1.7], &NoiseContext::deterministic(0.0), dt, &[0.0], &SolverConfig::new(1, dt)).unwrap()[0];
        let (mut lo, mut hi) = (0.0f64, 1.7f64);
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if m + dt * 2.0 * m * m * m > 1.7 {
                hi = m;
            } else {
                lo = m;
            }
        }
        assert_abs_diff_eq!(y, 0.5 * (lo + hi), epsilon = 1e-10);
    }

    #[test]
    fn still_path_stays_put() {
        let set = heat(5, NoiseShape::Zero, 1);
        let zero = ReactionDiffusionDrift::new(
            set.triple.clone(),
            ScalarFn::Linear { slope: 0.0 },
            Process::zero(),
            ScalarFn::Linear { slope: 0.0 },
            Process::zero(),
        )
        .unwrap();
        let noise = NoisePath::sample(1, 1.0, 20, 1).unwrap();
        let x0 = set.triple.function(set.triple.expand(&[0.3, -0.1, 0.2])).unwrap();
        let path = solve_forward(&SolverConfig::new(3, 0.05), Arc::new(zero), &set.diffusion, &noise, &x0).unwrap();
        for s in &path.states {
            for (a, b) in s.iter().zip(x0.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
        assert!(path.energy_residual.iter().all(|r| r.abs() < 1e-14));
    }

    #[test]
    fn heat_from_first_mode_decays_at_first_rate() {
        let set = heat(16, NoiseShape::Zero, 1);
        let x0 = set.triple.function(set.triple.basis_vector(0)).unwrap();
        let noise = NoisePath::sample(0, 1.0, 400, 1).unwrap();
        let mut errs = Vec::new();
        for factor in [4, 2, 1] {
            let dt = 0.0025 * factor as f64;
            let path = solve_forward(&SolverConfig::new(16, dt), set.drift.clone(), &set.diffusion, &noise, &x0).unwrap();
            let mu = set.triple.eigenvalues()[0];
            let err = path
                .times
                .iter()
                .zip(&path.coords)
                .map(|(t, c)| {
                    let exact = (-mu * t).exp();
                    ((c[0] - exact).powi(2) + c[1..].iter().map(|v| v * v).sum::<f64>()).sqrt()
                })
                .fold(0.0, f64::max);
            errs.push(err);
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..=2.3).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn mismatched_dt_is_rejected() {
        let set = heat(4, NoiseShape::Zero, 1);
        let noise = NoisePath::sample(0, 1.0, 10, 1).unwrap();
        let cfg = SolverConfig::new(2, 0.15);
        assert!(solve_forward(&cfg, set.drift.clone(), &set.diffusion, &noise, &set.triple.zeros()).is_err());
    }

    #[test]
    fn clock_examples() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
        let one = TimeProfile::constant(&times, 1.0).unwrap();
        assert_abs_diff_eq!(clock_theta(&one, 0.37), 0.37, epsilon = 1e-14);
        assert_eq!(clock_theta(&one, 5.0), 1.0);
        let two = TimeProfile::constant(&times, 2.0).unwrap();
        assert_abs_diff_eq!(clock_theta(&two, 1.0), 0.5, epsilon = 1e-14);
    }

    #[test]
    fn clock_matches_cumulative_sum_inversion() {
        let times: Vec<f64> = (0..=8).map(|k| k as f64 / 8.0).collect();
        let vals = vec![0.0, 3.0, 1.0, 0.5, 4.0, 2.0, 0.0, 1.0, 6.0];
        let prof = TimeProfile::new(times, vals).unwrap();
        // Brute force: fine Riemann sums of the interpolant.
        let steps = 200_000;
        let ds = 1.0 / steps as f64;
        for m in [0.1, 0.6, 1.3] {
            let mut acc = 0.0;
            let mut brute = 1.0;
            for j in 0..steps {
                let s = (j as f64 + 0.5) * ds;
                acc += prof.eval(s) * ds;
                if acc >= m {
                    brute = (j + 1) as f64 * ds;
                    break;
                }
            }
            assert_abs_diff_eq!(clock_theta(&prof, m), brute, epsilon = 2.0 * ds);
        }
    }

    #[test]
    fn zero_lambda0_rescale_is_identity() {
        let set = heat(6, NoiseShape::Ones { scale: 1.0 }, 1);
        let (d, b, bundle) = rescale_problem(set.drift.clone(), &set.diffusion, &set.bundle);
        assert!(Arc::ptr_eq(&d, &set.drift));
        assert!(b.is_constant());
        assert_eq!(bundle, set.bundle);
    }

    #[test]
    fn rescaled_solution_matches_original() {
        let set = builtin(
            BuiltinKind::RandomReactionDiffusion { p: 3.0 },
            BuiltinOptions {
                n_grid: 8,
                n_modes: 1,
                noise: NoiseShape::Zero,
            },
        )
        .unwrap();
        let noise = NoisePath::sample(7, 0.5, 400, 1).unwrap();
        let x0 = set.triple.function(set.triple.expand(&[0.5, 0.2, -0.1, 0.05])).unwrap();
        let mut dists = Vec::new();
        for dt in [0.005, 0.0025, 0.00125] {
            let cfg = SolverConfig::new(4, dt);
            let direct = solve_forward(&cfg, set.drift.clone(), &set.diffusion, &noise, &x0).unwrap();
            let cfg = SolverConfig {
                rescale_lambda0: true,
                ..cfg
            };
            let via = solve_problem(&cfg, set.drift.clone(), &set.diffusion, &set.bundle, &noise, &x0).unwrap();
            dists.push(sup_h_distance(&set.triple, &direct, &via).unwrap());
        }
        assert!(dists[2] < dists[0], "{dists:?}");
        assert!(dists[2] < 0.05 * 0.00125 * 400.0, "{dists:?}");
    }

    #[test]
    fn energy_residual_is_first_order() {
        let set = heat(8, NoiseShape::Ones { scale: 0.5 }, 2);
        let noise = NoisePath::sample(3, 1.0, 1600, 2).unwrap();
        let x0 = set.triple.function(set.triple.basis_vector(0)).unwrap();
        let res: Vec<f64> = [0.01, 0.005, 0.0025]
            .iter()
            .map(|&dt| {
                solve_forward(&SolverConfig::new(8, dt), set.drift.clone(), &set.diffusion, &noise, &x0)
                    .unwrap()
                    .cumulative_energy_residual()
            })
            .collect();
        for w in res.windows(2) {
            let r = w[0] / w[1];
            assert!((1.5..=2.5).contains(&r), "{res:?}");
        }
    }

    #[test]
    fn apriori_zero_and_heat() {
        let set = heat(8, NoiseShape::Zero, 1);
        let noise = NoisePath::sample(0, 1.0, 100, 1).unwrap();
        let zero = solve_forward(&SolverConfig::new(4, 0.01), set.drift.clone(), &set.diffusion, &noise, &set.triple.zeros()).unwrap();
        let rep = apriori_norms(&zero, &set.bundle);
        assert_eq!(rep.lhs, 0.0);
        assert!(!rep.exceeded);
        let x0 = set.triple.function(set.triple.basis_vector(0)).unwrap();
        let path = solve_forward(&SolverConfig::new(4, 0.01), set.drift.clone(), &set.diffusion, &noise, &x0).unwrap();
        let rep = apriori_norms(&path, &set.bundle);
        assert!(rep.lhs < rep.rhs, "{rep:?}");
        assert!(path.ledger.iter().all(|l| l.h_norm_sq >= 0.0 && l.x1_pow >= 0.0 && l.x2_pow >= 0.0));
    }

    #[test]
    fn states_stay_in_span() {
        let set = builtin(
            BuiltinKind::PorousMedium { p: 3.0 },
            BuiltinOptions {
                n_grid: 16,
                n_modes: 4,
                noise: NoiseShape::Modes { scale: 0.5 },
            },
        )
        .unwrap();
        let noise = NoisePath::sample(2, 0.2, 50, 4).unwrap();
        let x0 = set.triple.function(set.triple.nodes().iter().map(|x| x * (1.0 - x)).collect()).unwrap();
        let path = solve_forward(&SolverConfig::new(5, 0.004), set.drift.clone(), &set.diffusion, &noise, &x0).unwrap();
        for s in &path.states {
            let p = set.triple.project(s, 5).unwrap();
            let d: Vec<f64> = s.iter().zip(&p).map(|(a, b)| a - b).collect();
            assert!(set.triple.h_norm(&d) < 1e-10);
        }
    }

    #[test]
    fn initial_guess_does_not_change_solution() {
        let set = builtin(
            BuiltinKind::ReactionDiffusion { p: 4.0 },
            BuiltinOptions {
                n_grid: 12,
                n_modes: 2,
                noise: NoiseShape::Ones { scale: 1.0 },
            },
        )
        .unwrap();
        let noise = NoisePath::sample(9, 0.5, 100, 2).unwrap();
        let x0 = set.triple.function(vec![2.0; 12]).unwrap();
        let mut cfg = SolverConfig::new(6, 0.005);
        let a = solve_forward(&cfg, set.drift.clone(), &set.diffusion, &noise, &x0).unwrap();
        cfg.initial_guess = InitialGuess::Zero;
        let b = solve_forward(&cfg, set.drift.clone(), &set.diffusion, &noise, &x0).unwrap();
        assert!(sup_h_distance(&set.triple, &a, &b).unwrap() <= 10.0 * cfg.resolvent_tol);
    }

    proptest! {
        #[test]
        fn implicit_step_is_nonexpansive(
            x in prop::collection::vec(-3.0f64..3.0, 4),
            y in prop::collection::vec(-3.0f64..3.0, 4),
            dt in 1e-3f64..0.2,
        ) {
            let set = builtin(
                BuiltinKind::ReactionDiffusion { p: 3.0 },
                BuiltinOptions { n_grid: 8, n_modes: 1, noise: NoiseShape::Ones { scale: 1.0 } },
            ).unwrap();
            let sys = GalerkinSystem::new(set.drift.clone(), set.diffusion.clone(), 4).unwrap();
            let cfg = SolverConfig::new(4, dt);
            let ctx = NoiseContext::deterministic(0.0);
            let a = step_implicit(&sys, &x, &ctx, dt, &[0.1], &cfg).unwrap();
            let b = step_implicit(&sys, &y, &ctx, dt, &[0.1], &cfg).unwrap();
            let d_out: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            let d_in: f64 = x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            prop_assert!(d_out <= d_in * (1.0 + 1e-9) + 1e-10);
        }
    }
}
