//! Time-indexed coefficient processes such as `λ_i(t, ω)`, `ξ(t, ω)` and the
//! random factor `|w_t|` that multiplies the built-in operators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoisePath;

/// The `(t, ω)` at which random coefficients are evaluated.
///
/// `w` is the scalar driving Brownian motion at the (frozen) evaluation time.
/// When a path is attached, integrals of path-dependent processes are taken
/// along it.
#[derive(Debug, Clone, Copy)]
pub struct NoiseContext<'a> {
    pub t: f64,
    pub w: f64,
    pub path: Option<&'a NoisePath>,
}

impl<'a> NoiseContext<'a> {
    pub fn deterministic(t: f64) -> Self {
        Self {
            t,
            w: 0.0,
            path: None,
        }
    }

    pub fn at_step(path: &'a NoisePath, k: usize) -> Self {
        Self {
            t: path.times()[k],
            w: path.scalar_path()[k],
            path: Some(path),
        }
    }

    pub fn with_time(self, t: f64) -> Self {
        Self { t, ..self }
    }
}

/// A real function tabulated on an increasing grid, linear between nodes and
/// constant outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeProfile {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl TimeProfile {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Dimension {
                what: "time profile",
                expected: times.len(),
                found: values.len(),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("profile times must be increasing".into()));
        }
        crate::error::check_finite("profile values", &values)?;
        Ok(Self { times, values })
    }

    pub fn constant(times: &[f64], value: f64) -> Result<Self> {
        Self::new(times.to_vec(), vec![value; times.len()])
    }

    pub fn from_fn(times: &[f64], f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(times.to_vec(), times.iter().map(|&t| f(t)).collect())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let s = (t - t0) / (t1 - t0);
        self.values[i] + s * (self.values[i + 1] - self.values[i])
    }

    /// Running trapezoid integral from the first node, one value per node.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        out.push(acc);
        for i in 1..self.len() {
            acc += 0.5 * (self.values[i] + self.values[i - 1]) * (self.times[i] - self.times[i - 1]);
            out.push(acc);
        }
        out
    }

    /// Exact integral of the piecewise-linear interpolant over `[times[0], t]`.
    pub fn integral_to(&self, t: f64) -> f64 {
        let t0 = self.times[0];
        if t <= t0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 1..self.len() {
            let (a, b) = (self.times[i - 1], self.times[i]);
            if t <= a {
                break;
            }
            let end = t.min(b);
            acc += 0.5 * (self.values[i - 1] + self.eval(end)) * (end - a);
        }
        let last = *self.times.last().unwrap();
        if t > last {
            acc += self.values[self.len() - 1] * (t - last);
        }
        acc
    }
}

/// Coefficient process `(t, ω) ↦ value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    Constant(f64),
    /// `scale · |w_t|^power`.
    NoisePower { scale: f64, power: f64 },
    Tabulated(TimeProfile),
    Sum(Vec<Process>),
    /// `base(t)^exponent`.
    Pow { base: Box<Process>, exponent: f64 },
    /// `base(t) · exp(exponent · ∫₀ᵗ λ₀ ds)`.
    ExpWeighted {
        base: Box<Process>,
        lambda0: Box<Process>,
        exponent: f64,
    },
}

impl Process {
    pub fn abs_noise(scale: f64) -> Self {
        Process::NoisePower { scale, power: 1.0 }
    }

    pub fn zero() -> Self {
        Process::Constant(0.0)
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Process::Constant(c) => *c == 0.0,
            Process::NoisePower { scale, .. } => *scale == 0.0,
            Process::Tabulated(p) => p.values.iter().all(|v| *v == 0.0),
            Process::Sum(parts) => parts.iter().all(Process::is_zero),
            Process::Pow { base, exponent } => *exponent > 0.0 && base.is_zero(),
            Process::ExpWeighted { base, .. } => base.is_zero(),
        }
    }

    /// True when the value does not depend on `ω`.
    pub fn is_deterministic(&self) -> bool {
        match self {
            Process::Constant(_) | Process::Tabulated(_) => true,
            Process::NoisePower { scale, .. } => *scale == 0.0,
            Process::Sum(parts) => parts.iter().all(Process::is_deterministic),
            Process::Pow { base, .. } => base.is_deterministic(),
            Process::ExpWeighted { base, lambda0, .. } => {
                base.is_deterministic() && lambda0.is_deterministic()
            }
        }
    }

    pub fn value(&self, ctx: &NoiseContext<'_>) -> f64 {
        match self {
            Process::Constant(c) => *c,
            Process::NoisePower { scale, power } => scale * ctx.w.abs().powf(*power),
            Process::Tabulated(p) => p.eval(ctx.t),
            Process::Sum(parts) => parts.iter().map(|p| p.value(ctx)).sum(),
            Process::Pow { base, exponent } => base.value(ctx).powf(*exponent),
            Process::ExpWeighted {
                base,
                lambda0,
                exponent,
            } => base.value(ctx) * (exponent * lambda0.integral(ctx)).exp(),
        }
    }

    /// `∫₀ᵗ value ds` at `t = ctx.t`.
    ///
    /// Path-dependent processes are integrated by the trapezoid rule along the
    /// attached path; without a path the current `w` is held constant.
    pub fn integral(&self, ctx: &NoiseContext<'_>) -> f64 {
        match self {
            Process::Constant(c) => c * ctx.t,
            Process::Tabulated(p) => p.integral_to(ctx.t) - p.integral_to(0.0),
            Process::Sum(parts) => parts.iter().map(|p| p.integral(ctx)).sum(),
            _ => match ctx.path {
                None => self.value(ctx) * ctx.t,
                Some(path) => self.path_integral(path, ctx.t),
            },
        }
    }

    fn path_integral(&self, path: &NoisePath, t: f64) -> f64 {
        let times = path.times();
        let w = path.scalar_path();
        let at = |k: usize| {
            self.value(&NoiseContext {
                t: times[k],
                w: w[k],
                path: Some(path),
            })
        };
        let mut acc = 0.0;
        let mut prev = at(0);
        for k in 1..times.len() {
            if times[k - 1] >= t {
                break;
            }
            let cur = at(k);
            if times[k] <= t {
                acc += 0.5 * (prev + cur) * (times[k] - times[k - 1]);
            } else {
                let s = (t - times[k - 1]) / (times[k] - times[k - 1]);
                let mid = prev + s * (cur - prev);
                acc += 0.5 * (prev + mid) * (t - times[k - 1]);
            }
            prev = cur;
        }
        acc
    }

    /// Tabulates the process along a path's grid.
    pub fn tabulate(&self, path: &NoisePath) -> TimeProfile {
        let values = (0..path.times().len())
            .map(|k| self.value(&NoiseContext::at_step(path, k)))
            .collect();
        TimeProfile {
            times: path.times().to_vec(),
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_integrals() {
        let p = TimeProfile::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 2.0]).unwrap();
        assert_eq!(p.eval(0.5), 1.0);
        assert!((p.integral_to(1.0) - 1.0).abs() < 1e-15);
        assert!((p.integral_to(2.0) - 3.0).abs() < 1e-15);
        assert!((p.integral_to(0.5) - 0.25).abs() < 1e-15);
        assert_eq!(p.cumulative(), vec![0.0, 1.0, 3.0]);
    }

    #[test]
    fn noise_power_reads_w() {
        let ctx = NoiseContext {
            t: 0.3,
            w: -4.0,
            path: None,
        };
        assert_eq!(Process::abs_noise(1.0).value(&ctx), 4.0);
        let sqrt = Process::NoisePower {
            scale: 1.0,
            power: 0.5,
        };
        assert_eq!(sqrt.value(&ctx), 2.0);
    }

    #[test]
    fn exp_weighted_constant_rate() {
        let p = Process::ExpWeighted {
            base: Box::new(Process::Constant(2.0)),
            lambda0: Box::new(Process::Constant(0.5)),
            exponent: 1.0,
        };
        let v = p.value(&NoiseContext::deterministic(2.0));
        assert!((v - 2.0 * 1f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn path_integral_of_abs_noise_matches_trapezoid() {
        let path = NoisePath::sample(5, 1.0, 20, 1).unwrap();
        let w = path.scalar_path();
        let dt = path.dt();
        let expected: f64 = (0..20).map(|k| 0.5 * (w[k].abs() + w[k + 1].abs()) * dt).sum();
        let got = Process::abs_noise(1.0).integral(&NoiseContext::at_step(&path, 20));
        assert!((got - expected).abs() < 1e-14);
    }
}
