use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoisePath;
use crate::process::{NoiseContext, Process};

/// Constants and coefficient processes of the monotonicity, coercivity and
/// boundedness conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisBundle {
    pub lambda0: Process,
    pub lambda1: Process,
    pub lambda2: Process,
    pub lambda3: Process,
    pub xi: Process,
    pub eta1: Process,
    pub eta2: Process,
    pub q1: f64,
    pub q2: f64,
    pub c_a1: f64,
    pub c_a2: f64,
    pub c1: f64,
}

/// Monte-Carlo quadrature of `∫₀ᵀ λ_i·exp((q_i−2)/2·∫₀ᵗλ₀) dt` over sampled paths.
#[derive(Debug, Clone, Serialize)]
pub struct IntegrabilityReport {
    pub replicas: usize,
    pub mean: [f64; 2],
    pub max: [f64; 2],
    pub all_finite: bool,
}

impl HypothesisBundle {
    pub fn validate(&self) -> Result<()> {
        for (name, q) in [("q1", self.q1), ("q2", self.q2)] {
            if !(q >= 2.0) || !q.is_finite() {
                return Err(Error::OutOfRange {
                    what: "bundle exponent",
                    detail: format!("{name} = {q} must be >= 2"),
                });
            }
        }
        for (name, c) in [("c_a1", self.c_a1), ("c_a2", self.c_a2), ("c1", self.c1)] {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::OutOfRange {
                    what: "bundle constant",
                    detail: format!("{name} = {c} must be positive"),
                });
            }
        }
        Ok(())
    }

    pub fn exponent(&self, i: usize) -> f64 {
        if i == 0 {
            self.q1
        } else {
            self.q2
        }
    }

    pub fn lambda(&self, i: usize) -> &Process {
        if i == 0 {
            &self.lambda1
        } else {
            &self.lambda2
        }
    }

    pub fn eta(&self, i: usize) -> &Process {
        if i == 0 {
            &self.eta1
        } else {
            &self.eta2
        }
    }

    pub fn c_a(&self, i: usize) -> f64 {
        if i == 0 {
            self.c_a1
        } else {
            self.c_a2
        }
    }

    /// `0 ≤ λ₀ < c₁·min(λ₁, λ₂)`. When the minimum vanishes (degenerate
    /// `|w_t| = 0`) the strict inequality is relaxed to `λ₀ ≤ 0`.
    pub fn con2_holds(&self, ctx: &NoiseContext<'_>) -> bool {
        let l0 = self.lambda0.value(ctx);
        let m = self.lambda1.value(ctx).min(self.lambda2.value(ctx));
        if l0 < 0.0 {
            return false;
        }
        if m > 0.0 {
            l0 < self.c1 * m
        } else {
            l0 <= 0.0
        }
    }

    /// Integrability of the weighted `λ_i`, estimated on `replicas` paths.
    pub fn con_integrability(
        &self,
        seed: u64,
        replicas: usize,
        t_final: f64,
        n_steps: usize,
    ) -> Result<IntegrabilityReport> {
        let mut mean = [0.0; 2];
        let mut max = [0.0f64; 2];
        let mut all_finite = true;
        for r in 0..replicas {
            let path = NoisePath::sample_replica(seed, r as u64, t_final, n_steps, 1)?;
            let dt = path.dt();
            let mut l0_int = 0.0;
            let mut prev_l0 = self.lambda0.value(&NoiseContext::at_step(&path, 0));
            let mut prev = [0.0; 2];
            let mut acc = [0.0; 2];
            for k in 0..=n_steps {
                let ctx = NoiseContext::at_step(&path, k);
                if k > 0 {
                    let l0 = self.lambda0.value(&ctx);
                    l0_int += 0.5 * (l0 + prev_l0) * dt;
                    prev_l0 = l0;
                }
                for i in 0..2 {
                    let weight = ((self.exponent(i) - 2.0) / 2.0 * l0_int).exp();
                    let v = self.lambda(i).value(&ctx) * weight;
                    if k > 0 {
                        acc[i] += 0.5 * (v + prev[i]) * dt;
                    }
                    prev[i] = v;
                }
            }
            for i in 0..2 {
                all_finite &= acc[i].is_finite();
                mean[i] += acc[i] / replicas as f64;
                max[i] = max[i].max(acc[i]);
            }
        }
        Ok(IntegrabilityReport {
            replicas,
            mean,
            max,
            all_finite,
        })
    }

    /// Coefficients after removing `λ₀` by the exponential change of
    /// variables `X̃ = γ⁻¹X`.
    pub fn rescaled(&self) -> Self {
        if self.lambda0.is_zero() {
            return self.clone();
        }
        let weighted = |lambda: &Process, q: f64| Process::ExpWeighted {
            base: Box::new(lambda.clone()),
            lambda0: Box::new(self.lambda0.clone()),
            exponent: (q - 2.0) / 2.0,
        };
        let eta = |eta: &Process, lambda: &Process, q: f64| {
            Process::Sum(vec![
                eta.clone(),
                Process::Pow {
                    base: Box::new(lambda.clone()),
                    exponent: (q - 1.0) / q,
                },
            ])
        };
        Self {
            lambda0: Process::zero(),
            lambda1: weighted(&self.lambda1, self.q1),
            lambda2: weighted(&self.lambda2, self.q2),
            lambda3: Process::Sum(vec![self.lambda3.clone(), self.lambda0.clone()]),
            xi: self.xi.clone(),
            eta1: eta(&self.eta1, &self.lambda1, self.q1),
            eta2: eta(&self.eta2, &self.lambda2, self.q2),
            q1: self.q1,
            q2: self.q2,
            c_a1: self.c_a1 + 1.0,
            c_a2: self.c_a2 + 1.0,
            c1: self.c1,
        }
    }
}
