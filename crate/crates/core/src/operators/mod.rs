//! Drift and diffusion operators on a [`DiscreteTriple`].
//!
//! A drift is described by its weak-form representer: a grid vector `r(u)`
//! with `[v, A(u)] = h·vᵀr(u)` for every `v`. For porous medium this is
//! `−φ(u)`; for reaction–diffusion it is `−Dᵀa(Du) − b(u)`. The `X*`
//! coordinates returned by [`eval_drift`] are `P⁻¹r`, so that
//! [`DiscreteTriple::dual_pairing`] reproduces the weak form.

mod builtin;
mod bundle;
mod checks;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_finite, Error, Result};
use crate::process::{NoiseContext, Process};
use crate::triple::{DiscreteTriple, GridFunction};

pub use builtin::{builtin, BuiltinKind, BuiltinOptions, NoiseShape, OperatorSet};
pub use bundle::HypothesisBundle;
pub use checks::{
    check_boundedness, check_coercivity, check_hemicontinuity, check_monotonicity,
    hemicontinuity_profile, StateSampler, Violation, ViolationReport,
};

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar nonlinearity used pointwise (Nemytskii) by the built-in operators.
#[derive(Clone)]
pub enum ScalarFn {
    Linear { slope: f64 },
    /// `|r|^{p−2}·r`.
    Power { p: f64 },
    Sine,
    /// `slope·r + jump·1[r > 0]`.
    Step { slope: f64, jump: f64 },
    Custom {
        label: String,
        value: RealFn,
        derivative: Option<RealFn>,
    },
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Linear { slope } => write!(f, "Linear({slope})"),
            ScalarFn::Power { p } => write!(f, "Power({p})"),
            ScalarFn::Sine => write!(f, "Sine"),
            ScalarFn::Step { slope, jump } => write!(f, "Step({slope}, {jump})"),
            ScalarFn::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl ScalarFn {
    pub fn power(p: f64) -> Result<Self> {
        if !(p >= 2.0) || !p.is_finite() {
            return Err(Error::OutOfRange {
                what: "power exponent",
                detail: format!("p = {p} must be finite and >= 2"),
            });
        }
        Ok(ScalarFn::Power { p })
    }

    pub fn custom(
        label: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ScalarFn::Custom {
            label: label.into(),
            value: Arc::new(value),
            derivative: None,
        }
    }

    pub fn value(&self, r: f64) -> f64 {
        match self {
            ScalarFn::Linear { slope } => slope * r,
            ScalarFn::Power { p } => signed_power(r, p - 1.0),
            ScalarFn::Sine => r.sin(),
            ScalarFn::Step { slope, jump } => slope * r + if r > 0.0 { *jump } else { 0.0 },
            ScalarFn::Custom { value, .. } => value(r),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match self {
            ScalarFn::Linear { slope } => *slope,
            ScalarFn::Power { p } => (p - 1.0) * abs_power(r, p - 2.0),
            ScalarFn::Sine => r.cos(),
            ScalarFn::Step { slope, .. } => *slope,
            ScalarFn::Custom {
                value, derivative, ..
            } => match derivative {
                Some(d) => d(r),
                None => {
                    let step = 1e-6 * (1.0 + r.abs());
                    (value(r + step) - value(r - step)) / (2.0 * step)
                }
            },
        }
    }

    /// True when the map is known to be nondecreasing.
    pub fn is_monotone(&self) -> bool {
        match self {
            ScalarFn::Linear { slope } => *slope >= 0.0,
            ScalarFn::Power { .. } => true,
            ScalarFn::Sine => false,
            ScalarFn::Step { slope, jump } => *slope >= 0.0 && *jump >= 0.0,
            ScalarFn::Custom { .. } => false,
        }
    }

    pub fn is_continuous(&self) -> bool {
        !matches!(self, ScalarFn::Step { jump, .. } if *jump != 0.0)
    }
}

fn abs_power(r: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e.fract() == 0.0 && e.abs() < 64.0 {
        r.abs().powi(e as i32)
    } else {
        r.abs().powf(e)
    }
}

/// `|r|^{e}·sign(r)`.
fn signed_power(r: f64, e: f64) -> f64 {
    if e == 1.0 {
        r
    } else {
        abs_power(r, e - 1.0) * r
    }
}

/// Jacobian of a representer: `local + pairing_shift·P`.
#[derive(Debug, Clone)]
pub struct RepresenterJacobian {
    pub local: LocalJacobian,
    pub pairing_shift: f64,
}

#[derive(Debug, Clone)]
pub enum LocalJacobian {
    Diagonal(Vec<f64>),
    /// `diag` has length n, `off` has length n − 1 (symmetric).
    Tridiagonal { diag: Vec<f64>, off: Vec<f64> },
    Dense(DMatrix<f64>),
}

impl LocalJacobian {
    /// `J·M` for a dense block `M` with `n_grid` rows.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            LocalJacobian::Diagonal(d) => {
                let mut out = m.clone();
                for (i, mut row) in out.row_iter_mut().enumerate() {
                    row *= d[i];
                }
                out
            }
            LocalJacobian::Tridiagonal { diag, off } => {
                let n = diag.len();
                DMatrix::from_fn(n, m.ncols(), |i, j| {
                    let mut acc = diag[i] * m[(i, j)];
                    if i > 0 {
                        acc += off[i - 1] * m[(i - 1, j)];
                    }
                    if i + 1 < n {
                        acc += off[i] * m[(i + 1, j)];
                    }
                    acc
                })
            }
            LocalJacobian::Dense(d) => d * m,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            LocalJacobian::Dense(d) => d.clone(),
            other => {
                let n = match other {
                    LocalJacobian::Diagonal(d) => d.len(),
                    LocalJacobian::Tridiagonal { diag, .. } => diag.len(),
                    LocalJacobian::Dense(_) => unreachable!(),
                };
                other.mul_dense(&DMatrix::identity(n, n))
            }
        }
    }
}

/// A (possibly random, time-dependent) drift `A(t, ω, ·)`.
pub trait Drift: Send + Sync + fmt::Debug {
    fn triple(&self) -> &DiscreteTriple;

    fn name(&self) -> String;

    /// Representers of the split `A = A₁ + A₂`.
    fn representer_parts(&self, ctx: &NoiseContext<'_>, u: &[f64]) -> [Vec<f64>; 2];

    fn representer(&self, ctx: &NoiseContext<'_>, u: &[f64]) -> Vec<f64> {
        let [mut a, b] = self.representer_parts(ctx, u);
        for (x, y) in a.iter_mut().zip(&b) {
            *x += y;
        }
        a
    }

    /// Derivative of [`Drift::representer`] in `u`. The default uses
    /// central differences.
    fn jacobian(&self, ctx: &NoiseContext<'_>, u: &[f64]) -> RepresenterJacobian {
        let n = u.len();
        let mut jac = DMatrix::zeros(n, n);
        let mut probe = u.to_vec();
        for j in 0..n {
            let step = 1e-6 * (1.0 + u[j].abs());
            probe[j] = u[j] + step;
            let plus = self.representer(ctx, &probe);
            probe[j] = u[j] - step;
            let minus = self.representer(ctx, &probe);
            probe[j] = u[j];
            for i in 0..n {
                jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * step);
            }
        }
        RepresenterJacobian {
            local: LocalJacobian::Dense(jac),
            pairing_shift: 0.0,
        }
    }

    /// True when `A(t, ·)` does not depend on `ω` or `t`.
    fn is_autonomous(&self) -> bool {
        false
    }
}

/// `A(u) = Δφ(t, u)` with `φ(t, r) = c(t)·f(r)`.
#[derive(Debug, Clone)]
pub struct PorousMediumDrift {
    triple: Arc<DiscreteTriple>,
    phi: ScalarFn,
    coeff: Process,
}

impl PorousMediumDrift {
    pub fn new(triple: Arc<DiscreteTriple>, phi: ScalarFn, coeff: Process) -> Result<Self> {
        if !triple.flavor().is_porous_medium() {
            return Err(Error::Config(
                "porous medium drift needs a porous-medium triple".into(),
            ));
        }
        Ok(Self { triple, phi, coeff })
    }

    pub fn phi(&self) -> &ScalarFn {
        &self.phi
    }

    pub fn coeff(&self) -> &Process {
        &self.coeff
    }
}

impl Drift for PorousMediumDrift {
    fn triple(&self) -> &DiscreteTriple {
        &self.triple
    }

    fn name(&self) -> String {
        format!("porous_medium[{:?}]", self.phi)
    }

    fn representer_parts(&self, ctx: &NoiseContext<'_>, u: &[f64]) -> [Vec<f64>; 2] {
        let c = self.coeff.value(ctx);
        let r = u.iter().map(|&x| -c * self.phi.value(x)).collect();
        [r, vec![0.0; u.len()]]
    }

    fn jacobian(&self, ctx: &NoiseContext<'_>, u: &[f64]) -> RepresenterJacobian {
        let c = self.coeff.value(ctx);
        RepresenterJacobian {
            local: LocalJacobian::Diagonal(
                u.iter().map(|&x| -c * self.phi.derivative(x)).collect(),
            ),
            pairing_shift: 0.0,
        }
    }

    fn is_autonomous(&self) -> bool {
        matches!(self.coeff, Process::Constant(_))
    }
}

/// `A(u) = div a(t, ∇u) − b(t, u)` split as `A₁ + A₂`.
#[derive(Debug, Clone)]
pub struct ReactionDiffusionDrift {
    triple: Arc<DiscreteTriple>,
    flux: ScalarFn,
    flux_coeff: Process,
    reaction: ScalarFn,
    reaction_coeff: Process,
}

impl ReactionDiffusionDrift {
    pub fn new(
        triple: Arc<DiscreteTriple>,
        flux: ScalarFn,
        flux_coeff: Process,
        reaction: ScalarFn,
        reaction_coeff: Process,
    ) -> Result<Self> {
        if triple.flavor().is_porous_medium() {
            return Err(Error::Config(
                "reaction-diffusion drift needs a reaction-diffusion triple".into(),
            ));
        }
        Ok(Self {
            triple,
            flux,
            flux_coeff,
            reaction,
            reaction_coeff,
        })
    }
}

impl Drift for ReactionDiffusionDrift {
    fn triple(&self) -> &DiscreteTriple {
        &self.triple
    }

    fn name(&self) -> String {
        format!(
            "reaction_diffusion[flux {:?}, reaction {:?}]",
            self.flux, self.reaction
        )
    }

    fn representer_parts(&self, ctx: &NoiseContext<'_>, u: &[f64]) -> [Vec<f64>; 2] {
        let ca = self.flux_coeff.value(ctx);
        let cb = self.reaction_coeff.value(ctx);
        let flux: Vec<f64> = self
            .triple
            .gradient(u)
            .iter()
            .map(|&g| -ca * self.flux.value(g))
            .collect();
        let div = self.triple.gradient_transpose(&flux);
        let reaction = u.iter().map(|&x| -cb * self.reaction.value(x)).collect();
        [div, reaction]
    }

    fn jacobian(&self, ctx: &NoiseContext<'_>, u: &[f64]) -> RepresenterJacobian {
        let ca = self.flux_coeff.value(ctx);
        let cb = self.reaction_coeff.value(ctx);
        let h2 = self.triple.h() * self.triple.h();
        let w: Vec<f64> = self
            .triple
            .gradient(u)
            .iter()
            .map(|&g| ca * self.flux.derivative(g))
            .collect();
        let n = u.len();
        let diag = (0..n)
            .map(|j| -(w[j] + w[j + 1]) / h2 - cb * self.reaction.derivative(u[j]))
            .collect();
        let off = (0..n.saturating_sub(1)).map(|j| w[j + 1] / h2).collect();
        RepresenterJacobian {
            local: LocalJacobian::Tridiagonal { diag, off },
            pairing_shift: 0.0,
        }
    }

    fn is_autonomous(&self) -> bool {
        matches!(self.flux_coeff, Process::Constant(_))
            && matches!(self.reaction_coeff, Process::Constant(_))
    }
}

/// `Ã(t, x) = γ⁻¹A(t, γx) − λ₀x/2` with `γ = exp(½∫₀ᵗλ₀)`.
#[derive(Debug, Clone)]
pub struct RescaledDrift {
    base: Arc<dyn Drift>,
    lambda0: Process,
}

impl RescaledDrift {
    pub fn new(base: Arc<dyn Drift>, lambda0: Process) -> Self {
        Self { base, lambda0 }
    }

    pub fn gamma(&self, ctx: &NoiseContext<'_>) -> f64 {
        (0.5 * self.lambda0.integral(ctx)).exp()
    }
}

impl Drift for RescaledDrift {
    fn triple(&self) -> &DiscreteTriple {
        self.base.triple()
    }

    fn name(&self) -> String {
        format!("rescaled[{}]", self.base.name())
    }

    fn representer_parts(&self, ctx: &NoiseContext<'_>, u: &[f64]) -> [Vec<f64>; 2] {
        let gamma = self.gamma(ctx);
        let half_l0 = 0.5 * self.lambda0.value(ctx);
        let scaled: Vec<f64> = u.iter().map(|x| gamma * x).collect();
        let [mut a1, mut a2] = self.base.representer_parts(ctx, &scaled);
        a1.iter_mut().for_each(|v| *v /= gamma);
        let pu = self.triple().apply_pairing(u);
        for (v, p) in a2.iter_mut().zip(&pu) {
            *v = *v / gamma - half_l0 * p;
        }
        [a1, a2]
    }

    fn jacobian(&self, ctx: &NoiseContext<'_>, u: &[f64]) -> RepresenterJacobian {
        let gamma = self.gamma(ctx);
        let scaled: Vec<f64> = u.iter().map(|x| gamma * x).collect();
        // d/du γ⁻¹ r(γu) = r'(γu).
        let inner = self.base.jacobian(ctx, &scaled);
        RepresenterJacobian {
            local: inner.local,
            pairing_shift: inner.pairing_shift - 0.5 * self.lambda0.value(ctx),
        }
    }
}

/// Checks `u` and returns `A(t, u)` in `X*` coordinates.
pub fn eval_drift(drift: &dyn Drift, ctx: &NoiseContext<'_>, u: &[f64]) -> Result<GridFunction> {
    let triple = drift.triple();
    triple.check_len("eval_drift", u)?;
    check_finite("drift state", u)?;
    let r = drift.representer(ctx, u);
    triple.function(triple.apply_pairing_inv(&r))
}

/// `[v, A(t, u)]` evaluated through the representer.
pub fn drift_pairing(drift: &dyn Drift, ctx: &NoiseContext<'_>, v: &[f64], u: &[f64]) -> f64 {
    let r = drift.representer(ctx, u);
    drift.triple().h() * crate::triple::dot(v, &r)
}

/// Diffusion coefficient `B(t, ω, u) ∈ L₂(𝕌, H)` truncated to `n_modes`.
#[derive(Debug, Clone)]
pub enum DiffusionMap {
    /// Fixed columns in grid coordinates, `n_grid × n_modes`.
    ConstantB(DMatrix<f64>),
    /// Column `j` is `c_j(t)·f_j(u(·))`.
    Multiplicative(Vec<(Process, ScalarFn)>),
    /// `γ⁻¹B(t, γu)` with `γ = exp(½∫₀ᵗλ₀)`.
    Rescaled {
        base: Box<DiffusionMap>,
        lambda0: Process,
    },
}

impl DiffusionMap {
    pub fn zero(n_grid: usize, n_modes: usize) -> Self {
        DiffusionMap::ConstantB(DMatrix::zeros(n_grid, n_modes))
    }

    pub fn n_modes(&self) -> usize {
        match self {
            DiffusionMap::ConstantB(b) => b.ncols(),
            DiffusionMap::Multiplicative(cols) => cols.len(),
            DiffusionMap::Rescaled { base, .. } => base.n_modes(),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            DiffusionMap::ConstantB(_) => true,
            DiffusionMap::Multiplicative(_) => false,
            DiffusionMap::Rescaled { base, lambda0 } => base.is_constant() && lambda0.is_zero(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DiffusionMap::ConstantB(b) => b.iter().all(|v| *v == 0.0),
            DiffusionMap::Multiplicative(cols) => cols.iter().all(|(c, _)| c.is_zero()),
            DiffusionMap::Rescaled { base, .. } => base.is_zero(),
        }
    }

    /// Column-major `n_grid × n_modes` matrix of `B(t, u)`.
    pub fn eval(&self, ctx: &NoiseContext<'_>, u: &[f64]) -> DMatrix<f64> {
        match self {
            DiffusionMap::ConstantB(b) => b.clone(),
            DiffusionMap::Multiplicative(cols) => {
                DMatrix::from_fn(u.len(), cols.len(), |i, j| {
                    let (c, f) = &cols[j];
                    c.value(ctx) * f.value(u[i])
                })
            }
            DiffusionMap::Rescaled { base, lambda0 } => {
                let gamma = (0.5 * lambda0.integral(ctx)).exp();
                let scaled: Vec<f64> = u.iter().map(|x| gamma * x).collect();
                base.eval(ctx, &scaled) / gamma
            }
        }
    }
}

/// `B(t, u)` with a finiteness check on the state.
pub fn eval_diffusion(
    diff: &DiffusionMap,
    triple: &DiscreteTriple,
    ctx: &NoiseContext<'_>,
    u: &[f64],
) -> Result<DMatrix<f64>> {
    triple.check_len("eval_diffusion", u)?;
    check_finite("diffusion state", u)?;
    let b = diff.eval(ctx, u);
    if b.nrows() != triple.n_grid() {
        return Err(Error::Dimension {
            what: "diffusion matrix rows",
            expected: triple.n_grid(),
            found: b.nrows(),
        });
    }
    Ok(b)
}

/// `‖B‖²_{L₂(𝕌,H)} = Σ_j ‖B e_j‖²_H`.
pub fn hs_norm_sq(triple: &DiscreteTriple, b: &DMatrix<f64>) -> f64 {
    b.column_iter()
        .map(|col| triple.h_norm_sq(col.as_slice()))
        .sum()
}
