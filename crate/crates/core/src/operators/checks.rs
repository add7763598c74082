//! Sampled verification of the hemicontinuity, monotonicity, coercivity and
//! boundedness conditions.
//!
//! Each sample `i` draws from its own generator stream, so reports are a pure
//! function of the sampler seed and the operators.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use super::{hs_norm_sq, DiffusionMap, Drift, HypothesisBundle};
use crate::noise::{stream_rng, NoisePath};
use crate::process::NoiseContext;
use crate::triple::{dot, Space};

const SAMPLER_STREAM: u64 = 0x5341_4d50;
const RELATIVE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub sample: usize,
    pub t: f64,
    pub w: f64,
    pub excess: f64,
    pub scale: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViolationReport {
    pub check: String,
    pub n_samples: usize,
    pub violations: Vec<Violation>,
    /// Largest `excess / scale` seen, violating or not.
    pub max_relative_excess: f64,
}

impl ViolationReport {
    fn new(check: &str, n_samples: usize) -> Self {
        Self {
            check: check.into(),
            n_samples,
            violations: Vec::new(),
            max_relative_excess: f64::NEG_INFINITY,
        }
    }

    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self) -> usize {
        self.violations.len()
    }

    fn record(&mut self, sample: usize, ctx: &NoiseContext<'_>, excess: f64, scale: f64, detail: &str) {
        let rel = if scale > 0.0 { excess / scale } else { excess };
        if rel > self.max_relative_excess {
            self.max_relative_excess = rel;
        }
        if excess > RELATIVE_SLACK * scale || !excess.is_finite() {
            self.violations.push(Violation {
                sample,
                t: ctx.t,
                w: ctx.w,
                excess,
                scale,
                detail: detail.into(),
            });
        }
    }
}

/// Draws times, Brownian values and states for the checkers.
///
/// Amplitudes are log-uniform in `amplitude`; times are grid points of a
/// seeded scalar path on `[0, t_final]`, so `t = 0` yields `w = 0`.
#[derive(Debug, Clone)]
pub struct StateSampler {
    pub seed: u64,
    pub n_samples: usize,
    pub amplitude: (f64, f64),
    pub t_final: f64,
    pub context_steps: usize,
}

pub(crate) struct Draw {
    pub k: usize,
    pub rng: ChaCha12Rng,
}

impl StateSampler {
    pub fn new(seed: u64, n_samples: usize) -> Self {
        Self {
            seed,
            n_samples,
            amplitude: (1e-3, 1e3),
            t_final: 1.0,
            context_steps: 64,
        }
    }

    pub fn context_path(&self) -> NoisePath {
        NoisePath::sample(self.seed, self.t_final, self.context_steps.max(1), 1)
            .expect("sampler grid is valid")
    }

    pub(crate) fn draw(&self, i: usize) -> Draw {
        let mut rng = stream_rng(self.seed, i as u64, SAMPLER_STREAM);
        let k = rng.random_range(0..=self.context_steps.max(1));
        Draw { k, rng }
    }

    pub(crate) fn amplitude(&self, rng: &mut ChaCha12Rng) -> f64 {
        let (lo, hi) = self.amplitude;
        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
    }

    pub(crate) fn state(&self, rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
        let amp = self.amplitude(rng);
        let mut u: Vec<f64> = match rng.random_range(0..4u8) {
            0 => (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            1 => {
                let coeffs: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                (0..n)
                    .map(|j| {
                        let x = (j + 1) as f64 / (n + 1) as f64;
                        coeffs
                            .iter()
                            .enumerate()
                            .map(|(m, c)| c * ((m + 1) as f64 * std::f64::consts::PI * x).sin())
                            .sum()
                    })
                    .collect()
            }
            2 => {
                let mut v = vec![0.0; n];
                v[rng.random_range(0..n)] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                v
            }
            _ => {
                let base = if rng.random::<bool>() { 1.0 } else { -1.0 };
                (0..n)
                    .map(|_| base + 0.1 * (rng.random::<f64>() - 0.5))
                    .collect()
            }
        };
        let m = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if m > 0.0 {
            u.iter_mut().for_each(|v| *v *= amp / m);
        }
        u
    }

    /// A second state, either independent or a small perturbation of `u`.
    pub(crate) fn partner(&self, rng: &mut ChaCha12Rng, u: &[f64]) -> Vec<f64> {
        if rng.random::<bool>() {
            self.state(rng, u.len())
        } else {
            let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            let rel = (1e-6f64.ln() * rng.random::<f64>()).exp();
            let d = self.state(rng, u.len());
            let dm = d.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
            u.iter().zip(&d).map(|(a, b)| a + rel * scale * b / dm).collect()
        }
    }
}

/// Terms of `2[u−v, A(u)−A(v)] + ‖B(u)−B(v)‖² − λ₀‖u−v‖²`.
pub fn monotonicity_excess(
    drift: &dyn Drift,
    diff: &DiffusionMap,
    bundle: &HypothesisBundle,
    ctx: &NoiseContext<'_>,
    u: &[f64],
    v: &[f64],
) -> (f64, f64) {
    let triple = drift.triple();
    let ru = drift.representer(ctx, u);
    let rv = drift.representer(ctx, v);
    let du: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let dr: Vec<f64> = ru.iter().zip(&rv).map(|(a, b)| a - b).collect();
    let pairing = 2.0 * triple.h() * dot(&du, &dr);
    let hs = if diff.is_constant() {
        0.0
    } else {
        hs_norm_sq(triple, &(diff.eval(ctx, u) - diff.eval(ctx, v)))
    };
    let damping = bundle.lambda0.value(ctx) * triple.h_norm_sq(&du);
    (
        pairing + hs - damping,
        pairing.abs() + hs.abs() + damping.abs(),
    )
}

pub fn check_monotonicity(
    drift: &dyn Drift,
    diff: &DiffusionMap,
    bundle: &HypothesisBundle,
    sampler: &StateSampler,
) -> ViolationReport {
    let n = drift.triple().n_grid();
    let path = sampler.context_path();
    let mut report = ViolationReport::new("monotonicity", sampler.n_samples);
    for i in 0..sampler.n_samples {
        let mut d = sampler.draw(i);
        let ctx = NoiseContext::at_step(&path, d.k);
        let u = sampler.state(&mut d.rng, n);
        let v = sampler.partner(&mut d.rng, &u);
        let (excess, scale) = monotonicity_excess(drift, diff, bundle, &ctx, &u, &v);
        report.record(i, &ctx, excess, scale, "2[u-v,A(u)-A(v)] + |B(u)-B(v)|^2 > lambda0 |u-v|^2");
    }
    report
}

/// Coercivity inequality together with the constraint `λ₀ < c₁·min(λ₁, λ₂)`.
pub fn check_coercivity(
    drift: &dyn Drift,
    diff: &DiffusionMap,
    bundle: &HypothesisBundle,
    sampler: &StateSampler,
) -> ViolationReport {
    let triple = drift.triple();
    let n = triple.n_grid();
    let path = sampler.context_path();
    let mut report = ViolationReport::new("coercivity", sampler.n_samples);
    for i in 0..sampler.n_samples {
        let mut d = sampler.draw(i);
        let ctx = NoiseContext::at_step(&path, d.k);
        let u = sampler.state(&mut d.rng, n);
        let pairing = 2.0 * triple.h() * dot(&u, &drift.representer(&ctx, &u));
        let hs = hs_norm_sq(triple, &diff.eval(&ctx, &u));
        let mut scale = pairing.abs() + hs;
        let mut rhs = 0.0;
        for (k, space) in [Space::X1, Space::X2].into_iter().enumerate() {
            let q = bundle.exponent(k);
            let term = bundle.lambda(k).value(&ctx) * triple.x_norm_with(&u, space, q).powf(q);
            rhs -= term;
            scale += term.abs();
        }
        let l3 = bundle.lambda3.value(&ctx) * triple.h_norm_sq(&u);
        let xi = bundle.xi.value(&ctx);
        rhs += l3 + xi;
        scale += l3.abs() + xi.abs();
        report.record(i, &ctx, pairing + hs - rhs, scale, "2[u,A(u)] + |B(u)|^2 above coercivity bound");
        if !bundle.con2_holds(&ctx) {
            let l0 = bundle.lambda0.value(&ctx);
            let m = bundle.lambda1.value(&ctx).min(bundle.lambda2.value(&ctx));
            report.violations.push(Violation {
                sample: i,
                t: ctx.t,
                w: ctx.w,
                excess: l0 - bundle.c1 * m,
                scale: l0.abs() + (bundle.c1 * m).abs(),
                detail: "lambda0 >= c1 min(lambda1, lambda2)".into(),
            });
        }
    }
    report
}

pub fn check_boundedness(
    drift: &dyn Drift,
    bundle: &HypothesisBundle,
    sampler: &StateSampler,
) -> ViolationReport {
    let triple = drift.triple();
    let n = triple.n_grid();
    let path = sampler.context_path();
    let mut report = ViolationReport::new("boundedness", sampler.n_samples);
    for i in 0..sampler.n_samples {
        let mut d = sampler.draw(i);
        let ctx = NoiseContext::at_step(&path, d.k);
        let u = sampler.state(&mut d.rng, n);
        let parts = drift.representer_parts(&ctx, &u);
        for (k, space) in [Space::X1, Space::X2].into_iter().enumerate() {
            let q = bundle.exponent(k);
            let lhs = triple.representer_dual_norm(&parts[k], space, q);
            let lambda = bundle.lambda(k).value(&ctx);
            let rhs = bundle.eta(k).value(&ctx) * lambda.powf(1.0 / q)
                + bundle.c_a(k) * lambda * triple.x_norm_with(&u, space, q).powf(q - 1.0);
            let detail = if k == 0 {
                "|A1(u)| above growth bound"
            } else {
                "|A2(u)| above growth bound"
            };
            report.record(i, &ctx, lhs - rhs, lhs.abs() + rhs.abs(), detail);
        }
    }
    report
}

/// `ε ↦ [x, A(t, y + εz)]` on `ε = k/steps`, `k = 0..=steps`.
pub fn hemicontinuity_profile(
    drift: &dyn Drift,
    ctx: &NoiseContext<'_>,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    steps: usize,
) -> Vec<f64> {
    (0..=steps)
        .map(|k| line_pairing(drift, ctx, x, y, z, k as f64 / steps as f64))
        .collect()
}

fn line_pairing(
    drift: &dyn Drift,
    ctx: &NoiseContext<'_>,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    eps: f64,
) -> f64 {
    let point: Vec<f64> = y.iter().zip(z).map(|(a, b)| a + eps * b).collect();
    drift.triple().h() * dot(x, &drift.representer(ctx, &point))
}

/// Flags jumps of `ε ↦ [x, A(t, y+εz)]` that survive 30 bisections.
pub fn check_hemicontinuity(drift: &dyn Drift, sampler: &StateSampler) -> ViolationReport {
    const COARSE: usize = 32;
    const BISECTIONS: usize = 30;
    let n = drift.triple().n_grid();
    let path = sampler.context_path();
    let mut report = ViolationReport::new("hemicontinuity", sampler.n_samples);
    for i in 0..sampler.n_samples {
        let mut d = sampler.draw(i);
        let ctx = NoiseContext::at_step(&path, d.k);
        let x = sampler.state(&mut d.rng, n);
        let y = sampler.state(&mut d.rng, n);
        let z = sampler.state(&mut d.rng, n);
        let g = hemicontinuity_profile(drift, &ctx, &x, &y, &z, COARSE);
        let variation: f64 = g.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-6 * variation + 64.0 * f64::EPSILON * gmax;
        let mut worst = 0.0f64;
        let mut where_eps = 0.0;
        for k in 0..COARSE {
            if (g[k + 1] - g[k]).abs() <= tol {
                continue;
            }
            let (mut a, mut b) = (k as f64 / COARSE as f64, (k + 1) as f64 / COARSE as f64);
            let (mut ga, mut gb) = (g[k], g[k + 1]);
            for _ in 0..BISECTIONS {
                let m = 0.5 * (a + b);
                let gm = line_pairing(drift, &ctx, &x, &y, &z, m);
                if (gm - ga).abs() >= (gb - gm).abs() {
                    b = m;
                    gb = gm;
                } else {
                    a = m;
                    ga = gm;
                }
            }
            let jump = (gb - ga).abs();
            if jump > worst {
                worst = jump;
                where_eps = 0.5 * (a + b);
            }
        }
        if worst > tol {
            report.violations.push(Violation {
                sample: i,
                t: ctx.t,
                w: ctx.w,
                excess: worst - tol,
                scale: tol,
                detail: format!("jump of {worst:.3e} near eps = {where_eps:.6}"),
            });
        }
        let rel = if tol > 0.0 { worst / tol - 1.0 } else { 0.0 };
        report.max_relative_excess = report.max_relative_excess.max(rel);
    }
    report
}
