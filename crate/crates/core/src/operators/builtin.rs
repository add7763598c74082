use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{
    hs_norm_sq, DiffusionMap, Drift, HypothesisBundle, PorousMediumDrift, ReactionDiffusionDrift,
    ScalarFn,
};
use crate::error::Result;
use crate::process::Process;
use crate::triple::{DiscreteTriple, Flavor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BuiltinKind {
    /// `du = Δu dt + B dW` on `L²`.
    Heat,
    /// `du = Δ(|u|^{p−2}u) dt + B dW` on `W^{-1,2}`.
    PorousMedium { p: f64 },
    /// `du = [Δu − |u|^{p−2}u] dt + B dW` on `L²`.
    ReactionDiffusion { p: f64 },
    /// Porous medium with the random factor `|w_t|`.
    RandomPorousMedium { p: f64 },
    /// Reaction–diffusion with factor `|w_t|` and noise `√|w_t|·u dw`.
    RandomReactionDiffusion { p: f64 },
}

/// Shape of the columns of a constant diffusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseShape {
    Zero,
    /// Every column is `scale·1`.
    Ones { scale: f64 },
    /// Column `j` is `scale·e_j`.
    Modes { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuiltinOptions {
    pub n_grid: usize,
    pub n_modes: usize,
    pub noise: NoiseShape,
}

/// A triple with its drift, diffusion and hypothesis constants.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub name: String,
    pub triple: Arc<DiscreteTriple>,
    pub drift: Arc<dyn Drift>,
    pub diffusion: DiffusionMap,
    pub bundle: HypothesisBundle,
}

fn constant_noise(triple: &DiscreteTriple, n_modes: usize, shape: NoiseShape) -> DMatrix<f64> {
    let n = triple.n_grid();
    match shape {
        NoiseShape::Zero => DMatrix::zeros(n, n_modes),
        NoiseShape::Ones { scale } => DMatrix::from_element(n, n_modes, scale),
        NoiseShape::Modes { scale } => DMatrix::from_fn(n, n_modes, |i, j| {
            if j < n {
                scale * triple.basis_vector(j)[i]
            } else {
                0.0
            }
        }),
    }
}

fn bundle_with(
    l0: Process,
    l: Process,
    l3: Process,
    xi: f64,
    q1: f64,
    q2: f64,
    c1: f64,
) -> HypothesisBundle {
    HypothesisBundle {
        lambda0: l0,
        lambda1: l.clone(),
        lambda2: l,
        lambda3: l3,
        xi: Process::Constant(xi),
        eta1: Process::zero(),
        eta2: Process::zero(),
        q1,
        q2,
        c_a1: 1.0,
        c_a2: 1.0,
        c1,
    }
}

pub fn builtin(kind: BuiltinKind, opts: BuiltinOptions) -> Result<OperatorSet> {
    let one = || Process::Constant(1.0);
    match kind {
        BuiltinKind::Heat => {
            let triple = Arc::new(DiscreteTriple::new(
                opts.n_grid,
                Flavor::ReactionDiffusion { q1: 2.0, q2: 2.0 },
            )?);
            let drift = ReactionDiffusionDrift::new(
                triple.clone(),
                ScalarFn::Linear { slope: 1.0 },
                one(),
                ScalarFn::Linear { slope: 0.0 },
                Process::zero(),
            )?;
            let b = constant_noise(&triple, opts.n_modes, opts.noise);
            let xi = hs_norm_sq(&triple, &b);
            Ok(OperatorSet {
                name: "heat".into(),
                drift: Arc::new(drift),
                diffusion: DiffusionMap::ConstantB(b),
                bundle: bundle_with(Process::zero(), one(), one(), xi, 2.0, 2.0, 1.0),
                triple,
            })
        }
        BuiltinKind::PorousMedium { p } | BuiltinKind::RandomPorousMedium { p } => {
            let random = matches!(kind, BuiltinKind::RandomPorousMedium { .. });
            let triple = Arc::new(DiscreteTriple::new(opts.n_grid, Flavor::PorousMedium { q: p })?);
            let coeff = if random { Process::abs_noise(1.0) } else { one() };
            let drift = PorousMediumDrift::new(triple.clone(), ScalarFn::power(p)?, coeff.clone())?;
            let b = constant_noise(&triple, opts.n_modes, opts.noise);
            let xi = hs_norm_sq(&triple, &b);
            Ok(OperatorSet {
                name: if random { format!("random_porous_medium(p={p})") } else { format!("porous_medium(p={p})") },
                drift: Arc::new(drift),
                diffusion: DiffusionMap::ConstantB(b),
                bundle: bundle_with(Process::zero(), coeff, one(), xi, p, p, 1.0),
                triple,
            })
        }
        BuiltinKind::ReactionDiffusion { p } => {
            let triple = Arc::new(DiscreteTriple::new(
                opts.n_grid,
                Flavor::ReactionDiffusion { q1: 2.0, q2: p },
            )?);
            let drift = ReactionDiffusionDrift::new(
                triple.clone(),
                ScalarFn::Linear { slope: 1.0 },
                one(),
                ScalarFn::power(p)?,
                one(),
            )?;
            let b = constant_noise(&triple, opts.n_modes, opts.noise);
            let xi = hs_norm_sq(&triple, &b);
            Ok(OperatorSet {
                name: format!("reaction_diffusion(p={p})"),
                drift: Arc::new(drift),
                diffusion: DiffusionMap::ConstantB(b),
                bundle: bundle_with(Process::zero(), one(), one(), xi, 2.0, p, 1.0),
                triple,
            })
        }
        BuiltinKind::RandomReactionDiffusion { p } => {
            let triple = Arc::new(DiscreteTriple::new(
                opts.n_grid,
                Flavor::ReactionDiffusion { q1: 2.0, q2: p },
            )?);
            let w = Process::abs_noise(1.0);
            let drift = ReactionDiffusionDrift::new(
                triple.clone(),
                ScalarFn::Linear { slope: 1.0 },
                w.clone(),
                ScalarFn::power(p)?,
                w.clone(),
            )?;
            let mut cols = vec![(
                Process::NoisePower {
                    scale: 1.0,
                    power: 0.5,
                },
                ScalarFn::Linear { slope: 1.0 },
            )];
            for _ in 1..opts.n_modes.max(1) {
                cols.push((Process::zero(), ScalarFn::Linear { slope: 0.0 }));
            }
            Ok(OperatorSet {
                name: format!("random_reaction_diffusion(p={p})"),
                drift: Arc::new(drift),
                diffusion: DiffusionMap::Multiplicative(cols),
                bundle: bundle_with(w.clone(), w.clone(), w, 0.0, 2.0, p, 2.0),
                triple,
            })
        }
    }
}
