//! Moduli of continuity, Bihari-type bounds and the norms used to compare
//! discrete solutions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::SolutionPath;
use crate::process::{NoiseContext, Process, TimeProfile};
use crate::triple::Space;

pub use crate::galerkin::sup_h_distance;

/// A concave modulus `ρ: ℝ⁺ → ℝ⁺` with `ρ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModulusSpec {
    /// `ρ(x) = slope·x`.
    Linear { slope: f64 },
    /// `c₀·x·Π_{j≤k} log^j(1/x)` below `eta`, continued linearly with matching slope.
    RhoK { k: u32, c0: f64, eta: f64 },
    /// `ρ(x) = coeff·x^exponent`.
    Power { coeff: f64, exponent: f64 },
}

/// `log^j(1/x)` for `j = 1..=k`.
fn iterated_logs(x: f64, k: u32) -> Vec<f64> {
    let mut out = Vec::with_capacity(k as usize);
    let mut cur = -x.ln();
    for _ in 0..k {
        out.push(cur);
        cur = cur.ln();
    }
    out
}

impl ModulusSpec {
    pub fn rho_k(k: u32, c0: f64, eta: f64) -> Result<Self> {
        let spec = ModulusSpec::RhoK { k, c0, eta };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| {
            Err(Error::OutOfRange {
                what: "modulus",
                detail,
            })
        };
        match *self {
            ModulusSpec::Linear { slope } => {
                if !(slope > 0.0) || !slope.is_finite() {
                    return bad(format!("slope = {slope} must be positive"));
                }
            }
            ModulusSpec::RhoK { k, c0, eta } => {
                if k == 0 {
                    return bad("k must be at least 1".into());
                }
                if !(c0 > 0.0) || !c0.is_finite() {
                    return bad(format!("c0 = {c0} must be positive"));
                }
                if !(eta > 0.0) || eta >= (-(k as f64)).exp() {
                    return bad(format!("eta = {eta} must lie in (0, e^-{k})"));
                }
                if iterated_logs(eta, k).iter().any(|l| !(*l > 0.0)) {
                    return bad(format!(
                        "eta = {eta} too large: an iterated logarithm is not positive"
                    ));
                }
                if !(self.derivative(eta) > 0.0) {
                    return bad(format!("eta = {eta} too large: rho is not increasing below it"));
                }
            }
            ModulusSpec::Power { coeff, exponent } => {
                if !(coeff > 0.0) || !(exponent > 0.0) || !exponent.is_finite() {
                    return bad(format!("coeff = {coeff}, exponent = {exponent} must be positive"));
                }
            }
        }
        Ok(())
    }

    /// `ρ(x)` for `x ≥ 0`.
    pub fn value(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match *self {
            ModulusSpec::Linear { slope } => slope * x,
            ModulusSpec::Power { coeff, exponent } => coeff * x.powf(exponent),
            ModulusSpec::RhoK { k, c0, eta } => {
                if x <= eta {
                    c0 * x * iterated_logs(x, k).iter().product::<f64>()
                } else {
                    self.value(eta) + self.derivative(eta) * (x - eta)
                }
            }
        }
    }

    /// Left derivative `ρ'(x−)`.
    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            ModulusSpec::Linear { slope } => slope,
            ModulusSpec::Power { coeff, exponent } => {
                if x <= 0.0 {
                    if exponent < 1.0 {
                        f64::INFINITY
                    } else if exponent == 1.0 {
                        coeff
                    } else {
                        0.0
                    }
                } else {
                    coeff * exponent * x.powf(exponent - 1.0)
                }
            }
            ModulusSpec::RhoK { k, c0, eta } => {
                let at = x.min(eta);
                if at <= 0.0 {
                    return f64::INFINITY;
                }
                // d/dx [x·ΠL_j] = ΠL_j − Σ_j Π_{i>j} L_i.
                let logs = iterated_logs(at, k);
                let full: f64 = logs.iter().product();
                let tails: f64 = (0..logs.len())
                    .map(|j| logs[j + 1..].iter().product::<f64>())
                    .sum();
                c0 * (full - tails)
            }
        }
    }

    /// Whether `∫₀ dx/ρ(x)` diverges.
    pub fn is_osgood(&self) -> bool {
        match *self {
            ModulusSpec::Linear { .. } | ModulusSpec::RhoK { .. } => true,
            ModulusSpec::Power { exponent, .. } => exponent >= 1.0,
        }
    }

    /// `∫_a^b dy/ρ(y)` for `0 < a ≤ b`.
    pub fn reciprocal_integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match *self {
            ModulusSpec::Linear { slope } => (b / a).ln() / slope,
            ModulusSpec::Power { coeff, exponent } => {
                if exponent == 1.0 {
                    (b / a).ln() / coeff
                } else {
                    let e = 1.0 - exponent;
                    (b.powf(e) - a.powf(e)) / (coeff * e)
                }
            }
            ModulusSpec::RhoK { k, c0, eta } => {
                let mut acc = 0.0;
                if a < eta {
                    // In u = ln y the integrand is 1/(c₀·ΠL_j(e^u)).
                    let f = |u: f64| 1.0 / (c0 * iterated_logs(u.exp(), k).iter().product::<f64>());
                    acc += adaptive_simpson(&f, a.ln(), b.min(eta).ln(), 1e-12);
                }
                if b > eta {
                    let lo = a.max(eta);
                    let base = self.value(eta);
                    let slope = self.derivative(eta);
                    acc += ((base + slope * (b - eta)) / (base + slope * (lo - eta))).ln() / slope;
                }
                acc
            }
        }
    }
}

pub fn rho_eval(x: f64, spec: &ModulusSpec) -> Result<f64> {
    if x < 0.0 || x.is_nan() {
        return Err(Error::Domain(format!("modulus evaluated at x = {x} < 0")));
    }
    Ok(spec.value(x))
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    if b <= a {
        return 0.0;
    }
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 48)
}

/// `g(t) ≤ G⁻¹(G(g₀) + ∫₀ᵗλ)` on a grid, with `G(x) = ∫_{g₀}^x dy/ρ(y)`.
#[derive(Debug, Clone, Serialize)]
pub struct BihariBound {
    pub g0: f64,
    pub times: Vec<f64>,
    /// `∫₀ᵗλ` at each grid time.
    pub lambda_integral: Vec<f64>,
    pub modulus: ModulusSpec,
    /// Infinite after a blow-up.
    pub bound: Vec<f64>,
    pub blow_up: Option<f64>,
}

impl BihariBound {
    pub fn final_value(&self) -> f64 {
        *self.bound.last().expect("non-empty grid")
    }

    pub fn table(&self) -> (Vec<String>, Vec<Vec<f64>>) {
        (
            vec!["t".into(), "bound".into()],
            self.times
                .iter()
                .zip(&self.bound)
                .map(|(t, b)| vec![*t, *b])
                .collect(),
        )
    }
}

const BLOW_UP_LEVEL: f64 = 1e300;

pub fn bihari_bound(
    g0: f64,
    lambda: &TimeProfile,
    spec: &ModulusSpec,
    t_grid: &[f64],
) -> Result<BihariBound> {
    spec.validate()?;
    if !(g0 >= 0.0) || !g0.is_finite() {
        return Err(Error::Domain(format!("initial value g0 = {g0} must be finite and >= 0")));
    }
    if let ModulusSpec::RhoK { .. } = spec {
        if g0 == 0.0 {
            return Err(Error::Domain(
                "the rho_k bound needs g0 > 0 as base point of G".into(),
            ));
        }
    }
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("time grid must be non-empty and increasing".into()));
    }
    if lambda.values.iter().any(|v| *v < 0.0) {
        return Err(Error::Domain("lambda must be nonnegative".into()));
    }
    let base = lambda.integral_to(t_grid[0]);
    let lambda_integral: Vec<f64> = t_grid
        .iter()
        .map(|&t| lambda.integral_to(t) - base)
        .collect();
    let mut bound = Vec::with_capacity(t_grid.len());
    let mut blow_up = None;
    match *spec {
        ModulusSpec::Linear { slope } => {
            bound.extend(lambda_integral.iter().map(|l| g0 * (slope * l).exp()));
        }
        ModulusSpec::Power { coeff, exponent } if exponent != 1.0 => {
            let e = 1.0 - exponent;
            for (k, l) in lambda_integral.iter().enumerate() {
                let s = g0.powf(e) + coeff * e * l;
                if exponent > 1.0 && s <= 0.0 {
                    blow_up.get_or_insert(t_grid[k]);
                    bound.push(f64::INFINITY);
                } else {
                    bound.push(s.powf(1.0 / e));
                }
            }
        }
        ModulusSpec::Power { coeff, .. } => {
            bound.extend(lambda_integral.iter().map(|l| g0 * (coeff * l).exp()));
        }
        ModulusSpec::RhoK { .. } => {
            let mut x = g0;
            let mut prev_level = 0.0;
            for (k, &level) in lambda_integral.iter().enumerate() {
                if blow_up.is_some() {
                    bound.push(f64::INFINITY);
                    continue;
                }
                match invert_increment(spec, x, level - prev_level) {
                    Some(y) => {
                        x = y;
                        prev_level = level;
                        bound.push(x);
                    }
                    None => {
                        blow_up = Some(t_grid[k]);
                        bound.push(f64::INFINITY);
                    }
                }
            }
        }
    }
    Ok(BihariBound {
        g0,
        times: t_grid.to_vec(),
        lambda_integral,
        modulus: *spec,
        bound,
        blow_up,
    })
}

/// `y ≥ x` with `∫_x^y dz/ρ(z) = delta`, or `None` past the blow-up level.
fn invert_increment(spec: &ModulusSpec, x: f64, delta: f64) -> Option<f64> {
    if delta <= 0.0 {
        return Some(x);
    }
    let f = |y: f64| spec.reciprocal_integral(x, y) - delta;
    let mut lo = x;
    let mut hi = x * 2.0;
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > BLOW_UP_LEVEL {
            return None;
        }
    }
    let mut y = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fy = f(y);
        if fy.abs() <= 1e-14 * delta.max(1e-300) {
            break;
        }
        if fy < 0.0 {
            lo = y;
        } else {
            hi = y;
        }
        // G'(y) = 1/ρ(y).
        let newton = y - fy * spec.value(y);
        y = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Some(y)
}

/// Bound sequence for `g₀ → 0`.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroLimitReport {
    pub g0: Vec<f64>,
    pub final_bound: Vec<f64>,
    pub decreasing: bool,
    /// Final bound at the smallest `g₀` below `1e−3`.
    pub vanishes: bool,
    pub osgood: bool,
}

impl ZeroLimitReport {
    pub fn passed(&self) -> bool {
        self.decreasing && self.vanishes
    }
}

/// Evaluates the bound at `t_final` for `g₀ ∈ {1e−2, 1e−4, …, 1e−12}`.
pub fn zero_limit_check(lambda: &TimeProfile, spec: &ModulusSpec, t_final: f64) -> Result<ZeroLimitReport> {
    let t0 = lambda.times[0];
    let g0: Vec<f64> = (1..=6).map(|j| 10f64.powi(-2 * j)).collect();
    let mut final_bound = Vec::with_capacity(g0.len());
    for &g in &g0 {
        final_bound.push(bihari_bound(g, lambda, spec, &[t0, t_final])?.final_value());
    }
    let decreasing = final_bound.windows(2).all(|w| w[1] < w[0]);
    let vanishes = *final_bound.last().expect("six levels") < 1e-3;
    Ok(ZeroLimitReport {
        g0,
        final_bound,
        decreasing,
        vanishes,
        osgood: spec.is_osgood(),
    })
}

/// `∫_{ε·10^{−j}}^{ε} dx/ρ(x)` for `j = 1..=levels`.
pub fn osgood_partial_integrals(spec: &ModulusSpec, eps: f64, levels: u32) -> Vec<f64> {
    (1..=levels)
        .map(|j| spec.reciprocal_integral(eps * 10f64.powi(-(j as i32)), eps))
        .collect()
}

/// Numerical divergence test: the partial integrals keep growing by
/// increments that do not shrink geometrically.
pub fn osgood_diagnostic(spec: &ModulusSpec, eps: f64) -> bool {
    let partial = osgood_partial_integrals(spec, eps, 250);
    let inc: Vec<f64> = std::iter::once(partial[0])
        .chain(partial.windows(2).map(|w| w[1] - w[0]))
        .collect();
    let tail = &inc[inc.len() - 20..];
    tail.windows(2).all(|w| w[1] > 0.5 * w[0]) && tail.iter().all(|v| *v > 0.0)
}

/// `b(t) = c₀·∫₀ᵗ λ(s)·ρ(prev(s)) ds` by the trapezoid rule on `times`.
pub fn iterate_bound(
    prev: &[f64],
    times: &[f64],
    lambda: &TimeProfile,
    spec: &ModulusSpec,
    c0: f64,
) -> Result<Vec<f64>> {
    if prev.len() != times.len() {
        return Err(Error::Dimension {
            what: "iterate bound input",
            expected: times.len(),
            found: prev.len(),
        });
    }
    let integrand: Vec<f64> = times
        .iter()
        .zip(prev)
        .map(|(&t, &p)| lambda.eval(t) * spec.value(p.max(0.0)))
        .collect();
    let mut acc = 0.0;
    let mut out = vec![0.0; times.len()];
    for k in 1..times.len() {
        acc += 0.5 * (integrand[k] + integrand[k - 1]) * (times[k] - times[k - 1]);
        out[k] = c0 * acc;
    }
    Ok(out)
}

/// Discrete `(∫₀^θ ‖X‖^{q}_{𝕏ᵢ}·λᵢ dt)` with `θ` defaulting to the final time.
fn k_integral(path: &SolutionPath, which: Space, lambda: &Process, theta: Option<f64>) -> f64 {
    let theta = theta.unwrap_or(*path.times.last().expect("non-empty path"));
    let f = |k: usize| {
        let pow = match which {
            Space::X1 => path.ledger[k].x1_pow,
            Space::X2 => path.ledger[k].x2_pow,
        };
        pow * lambda.value(&NoiseContext::at_step(&path.noise, k))
    };
    let mut acc = 0.0;
    for k in 1..path.times.len() {
        let (a, b) = (path.times[k - 1], path.times[k]);
        if a >= theta {
            break;
        }
        let (fa, fb) = (f(k - 1), f(k));
        if b <= theta {
            acc += 0.5 * (fa + fb) * (b - a);
        } else {
            let s = (theta - a) / (b - a);
            acc += 0.5 * (fa + fa + s * (fb - fa)) * (theta - a);
        }
    }
    acc
}

/// Single-path discrete `𝕂`-norm.
pub fn k_norm(path: &SolutionPath, which: Space, lambda: &Process, theta: Option<f64>) -> f64 {
    let q = path_exponent(path, which);
    k_integral(path, which, lambda, theta).powf(1.0 / q)
}

/// Replica-averaged `𝕂`-norm `(E∫…)^{1/q}`.
pub fn k_norm_replicas(paths: &[SolutionPath], which: Space, lambda: &Process, theta: Option<f64>) -> f64 {
    if paths.is_empty() {
        return 0.0;
    }
    let q = path_exponent(&paths[0], which);
    let mean = paths
        .iter()
        .map(|p| k_integral(p, which, lambda, theta))
        .sum::<f64>()
        / paths.len() as f64;
    mean.powf(1.0 / q)
}

fn path_exponent(path: &SolutionPath, which: Space) -> f64 {
    // Recover q from the ledger's norm and power columns.
    for l in &path.ledger {
        let (norm, pow) = match which {
            Space::X1 => (l.x1_norm, l.x1_pow),
            Space::X2 => (l.x2_norm, l.x2_pow),
        };
        if norm > 0.0 && norm != 1.0 && pow > 0.0 {
            return pow.ln() / norm.ln();
        }
    }
    2.0
}

/// Least-squares slope of `log error` against `log step`.
pub fn convergence_order(steps: &[f64], errors: &[f64]) -> Result<f64> {
    if steps.len() != errors.len() {
        return Err(Error::Dimension {
            what: "convergence data",
            expected: steps.len(),
            found: errors.len(),
        });
    }
    if steps.len() < 3 {
        return Err(Error::Config(format!(
            "convergence order needs at least 3 points, got {}",
            steps.len()
        )));
    }
    if steps.iter().chain(errors).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("steps and errors must be positive".into()));
    }
    let xs: Vec<f64> = steps.iter().map(|s| s.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn rho1() -> ModulusSpec {
        ModulusSpec::rho_k(1, 1.0, (-1.0f64).exp() * 0.999).unwrap()
    }

    fn grid(n: usize, t: f64) -> Vec<f64> {
        (0..=n).map(|k| t * k as f64 / n as f64).collect()
    }

    #[test]
    fn rho1_example() {
        let spec = ModulusSpec::RhoK {
            k: 1,
            c0: 1.0,
            eta: (-1.0f64).exp(),
        };
        let x = (-2.0f64).exp();
        assert_abs_diff_eq!(rho_eval(x, &spec).unwrap(), 2.0 * x, epsilon = 1e-15);
        assert_abs_diff_eq!(2.0 * x, 0.27067, epsilon = 1e-5);
        assert_eq!(rho_eval(0.0, &spec).unwrap(), 0.0);
        assert!(rho_eval(-1.0, &spec).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(ModulusSpec::rho_k(1, 1.0, 0.5).is_err());
        assert!(ModulusSpec::rho_k(0, 1.0, 0.01).is_err());
        assert!(ModulusSpec::rho_k(2, -1.0, 0.01).is_err());
        // e^-4 satisfies the stated bound but log log log log(1/x) < 0 there.
        assert!(ModulusSpec::rho_k(4, 1.0, (-4.0f64).exp() * 0.9).is_err());
        // e^-3 bound holds but ρ₃ already decreases before 0.04.
        assert!(ModulusSpec::rho_k(3, 1.0, 0.04).is_err());
        assert!(ModulusSpec::rho_k(3, 1.0, 1e-3).is_ok());
    }

    #[test]
    fn continuous_and_smooth_at_eta() {
        for spec in [rho1(), ModulusSpec::rho_k(2, 0.7, 0.1).unwrap(), ModulusSpec::rho_k(3, 2.0, 1e-3).unwrap()] {
            let ModulusSpec::RhoK { eta, .. } = spec else { unreachable!() };
            let d = 1e-9;
            assert!((spec.value(eta - d) - spec.value(eta + d)).abs() < 1e-7);
            let h = 1e-6 * eta;
            let left = (3.0 * spec.value(eta) - 4.0 * spec.value(eta - h) + spec.value(eta - 2.0 * h)) / (2.0 * h);
            let right = (spec.value(eta + h) - spec.value(eta)) / h;
            assert!((left - right).abs() < 1e-4 * left.abs().max(1.0), "{left} {right}");
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let spec = ModulusSpec::rho_k(2, 1.3, 0.1).unwrap();
        for x in [1e-6, 1e-3, 0.05] {
            let h = 1e-6 * x;
            let fd = (spec.value(x + h) - spec.value(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(spec.derivative(x), fd, epsilon = 1e-5 * fd.abs());
        }
    }

    #[test]
    fn reciprocal_integral_matches_closed_form_for_rho1() {
        let spec = rho1();
        let (a, b) = (1e-12f64, 0.2f64);
        let closed = (-a.ln()).ln() - (-b.ln()).ln();
        assert_abs_diff_eq!(spec.reciprocal_integral(a, b), closed, epsilon = 1e-10);
    }

    #[test]
    fn linear_is_gronwall() {
        let times = grid(50, 2.0);
        let lam = TimeProfile::from_fn(&times, |t| 1.0 + t.sin()).unwrap();
        let b = bihari_bound(0.7, &lam, &ModulusSpec::Linear { slope: 1.5 }, &times).unwrap();
        for (k, t) in times.iter().enumerate() {
            let int = lam.integral_to(*t);
            assert_abs_diff_eq!(b.bound[k], 0.7 * (1.5 * int).exp(), epsilon = 1e-10 * b.bound[k]);
        }
        let one = TimeProfile::constant(&times, 1.0).unwrap();
        let e = bihari_bound(1.0, &one, &ModulusSpec::Linear { slope: 1.0 }, &[0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(e.final_value(), std::f64::consts::E, epsilon = 1e-14);
    }

    #[test]
    fn zero_lambda_keeps_initial_value() {
        let times = grid(10, 1.0);
        let zero = TimeProfile::constant(&times, 0.0).unwrap();
        let b = bihari_bound(0.01, &zero, &rho1(), &times).unwrap();
        assert!(b.bound.iter().all(|v| *v == 0.01));
    }

    fn rk4_comparison(g0: f64, spec: &ModulusSpec, lam: &dyn Fn(f64) -> f64, t: f64, n: usize) -> f64 {
        let dt = t / n as f64;
        let f = |s: f64, g: f64| lam(s) * spec.value(g);
        let mut g = g0;
        for k in 0..n {
            let s = k as f64 * dt;
            let k1 = f(s, g);
            let k2 = f(s + 0.5 * dt, g + 0.5 * dt * k1);
            let k3 = f(s + 0.5 * dt, g + 0.5 * dt * k2);
            let k4 = f(s + dt, g + dt * k3);
            g += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        g
    }

    #[test]
    fn rho1_bound_matches_comparison_ode() {
        let spec = rho1();
        let times = grid(100, 1.0);
        let lam = TimeProfile::from_fn(&times, |t| 1.0 + t).unwrap();
        for g0 in [1e-6, 0.01, 0.3] {
            let b = bihari_bound(g0, &lam, &spec, &times).unwrap();
            let ode = rk4_comparison(g0, &spec, &|t| 1.0 + t, 1.0, 200_000);
            assert!((b.final_value() - ode).abs() <= 1e-4 * ode, "{g0}: {} vs {ode}", b.final_value());
        }
    }

    #[test]
    fn power_blow_up_is_reported() {
        let times = grid(100, 2.0);
        let one = TimeProfile::constant(&times, 1.0).unwrap();
        let b = bihari_bound(1.0, &one, &ModulusSpec::Power { coeff: 1.0, exponent: 2.0 }, &times).unwrap();
        // g' = g², g(0) = 1 blows up at t = 1.
        assert_abs_diff_eq!(b.blow_up.unwrap(), 1.0, epsilon = 0.02 + 1e-12);
        assert!(b.final_value().is_infinite());
    }

    #[test]
    fn zero_limit_behaviour() {
        let times = grid(10, 1.0);
        let one = TimeProfile::constant(&times, 1.0).unwrap();
        let rep = zero_limit_check(&one, &rho1(), 1.0).unwrap();
        assert!(rep.passed(), "{rep:?}");
        let lin = zero_limit_check(&one, &ModulusSpec::Linear { slope: 1.0 }, 1.0).unwrap();
        for (g, b) in lin.g0.iter().zip(&lin.final_bound) {
            assert_abs_diff_eq!(*b, g * std::f64::consts::E, epsilon = 1e-12 * b);
        }
        let sqrt = ModulusSpec::Power { coeff: 1.0, exponent: 0.5 };
        let rep = zero_limit_check(&one, &sqrt, 1.0).unwrap();
        assert!(!rep.passed());
        assert!(!rep.osgood);
        for (g, b) in rep.g0.iter().zip(&rep.final_bound) {
            assert_abs_diff_eq!(*b, (g.sqrt() + 0.5).powi(2), epsilon = 1e-12);
        }
    }

    #[test]
    fn osgood_diagnostic_separates_moduli() {
        assert!(osgood_diagnostic(&rho1(), 0.1));
        assert!(osgood_diagnostic(&ModulusSpec::Linear { slope: 2.0 }, 0.1));
        assert!(osgood_diagnostic(&ModulusSpec::rho_k(2, 1.0, 0.1).unwrap(), 0.05));
        assert!(!osgood_diagnostic(&ModulusSpec::Power { coeff: 1.0, exponent: 0.5 }, 0.1));
    }

    #[test]
    fn convergence_order_examples() {
        let e = 0.37;
        let order = convergence_order(&[0.4, 0.2, 0.1], &[4.0 * e, 2.0 * e, e]).unwrap();
        assert_abs_diff_eq!(order, 1.0, epsilon = 1e-6);
        assert!(convergence_order(&[0.1, 0.2], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn iterate_bound_of_constant() {
        let times = grid(4, 1.0);
        let two = TimeProfile::constant(&times, 2.0).unwrap();
        let out = iterate_bound(&[0.5; 5], &times, &two, &ModulusSpec::Linear { slope: 1.0 }, 3.0).unwrap();
        assert_abs_diff_eq!(out[4], 3.0 * 2.0 * 0.5, epsilon = 1e-15);
        assert_eq!(out[0], 0.0);
    }

    proptest! {
        #[test]
        fn rho_is_concave_and_nondecreasing(x in 0.0f64..10.0, y in 0.0f64..10.0, k in 1u32..=3) {
            let eta = [0.3, 0.1, 1e-3][(k - 1) as usize];
            let spec = ModulusSpec::rho_k(k, 1.0, eta).unwrap();
            let mid = spec.value(0.5 * (x + y));
            prop_assert!(mid >= 0.5 * (spec.value(x) + spec.value(y)) - 1e-12);
            let (lo, hi) = if x < y { (x, y) } else { (y, x) };
            prop_assert!(spec.value(lo) <= spec.value(hi) + 1e-15);
        }

        #[test]
        fn bound_monotone_in_inputs(g0 in 1e-6f64..0.5, dg in 0.0f64..0.5, scale in 1.0f64..3.0) {
            let times = grid(20, 1.0);
            let lam = TimeProfile::from_fn(&times, |t| 0.5 + t * t).unwrap();
            let lam2 = TimeProfile::from_fn(&times, |t| scale * (0.5 + t * t)).unwrap();
            let spec = rho1();
            let a = bihari_bound(g0, &lam, &spec, &times).unwrap();
            let b = bihari_bound(g0 + dg, &lam, &spec, &times).unwrap();
            let c = bihari_bound(g0, &lam2, &spec, &times).unwrap();
            for k in 0..times.len() {
                prop_assert!(a.bound[k] <= b.bound[k] * (1.0 + 1e-12));
                prop_assert!(a.bound[k] <= c.bound[k] * (1.0 + 1e-12));
            }
            prop_assert!(a.bound.windows(2).all(|w| w[1] >= w[0]));
            prop_assert_eq!(a.bound[0], g0);
        }

        #[test]
        fn linear_matches_gronwall_on_random_profiles(vals in prop::collection::vec(0.0f64..5.0, 8), g0 in 0.0f64..10.0) {
            let times = grid(7, 1.5);
            let lam = TimeProfile::new(times.clone(), vals).unwrap();
            let b = bihari_bound(g0, &lam, &ModulusSpec::Linear { slope: 1.0 }, &times).unwrap();
            for (k, t) in times.iter().enumerate() {
                let expect = g0 * lam.integral_to(*t).exp();
                prop_assert!((b.bound[k] - expect).abs() <= 1e-10 * expect.max(1e-300));
            }
        }
    }
}
