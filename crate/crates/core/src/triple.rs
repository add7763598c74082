//! Grid realization of the evolution triples `X ⊂ H ⊂ X*` on `O = (0, 1)`.
//!
//! Two flavors are supported. `PorousMedium` uses `H = W^{-1,2}` with
//! `X = L^q`; `ReactionDiffusion` uses `H = L²` with `X₁ = W^{1,q₁}_0` and
//! `X₂ = L^{q₂}`. Elements of `X*` are stored so that the pairing with `x` is
//! `h·xᵀ P f`, where `P = (−L)⁻¹` for porous medium and the identity
//! otherwise. The same `P` defines the `H` inner product, so pairing an
//! `H` element reproduces the inner product.
//!
//! The Galerkin basis is the discrete sine basis, which diagonalizes the
//! Dirichlet Laplacian exactly:
//! `v_i(x_j) = √(2h)·sin(iπx_j)`, `μ_i = 4/h²·sin²(iπh/2)`.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

static NEXT_TRIPLE_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Flavor {
    /// `H = W^{-1,2}`, `X = L^q`.
    PorousMedium { q: f64 },
    /// `H = L²`, `X₁ = W^{1,q₁}_0`, `X₂ = L^{q₂}`.
    ReactionDiffusion { q1: f64, q2: f64 },
}

impl Flavor {
    pub fn exponents(&self) -> (f64, f64) {
        match *self {
            Flavor::PorousMedium { q } => (q, q),
            Flavor::ReactionDiffusion { q1, q2 } => (q1, q2),
        }
    }

    pub fn is_porous_medium(&self) -> bool {
        matches!(self, Flavor::PorousMedium { .. })
    }
}

/// Which of the two reflexive spaces a norm refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    X1,
    X2,
}

impl Space {
    pub fn index(self) -> usize {
        match self {
            Space::X1 => 0,
            Space::X2 => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TripleId(u64);

/// A state vector owned by a particular triple.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    values: Vec<f64>,
    triple: TripleId,
}

impl GridFunction {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn triple_id(&self) -> TripleId {
        self.triple
    }
}

impl std::ops::Deref for GridFunction {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteTriple {
    id: TripleId,
    n_grid: usize,
    h: f64,
    flavor: Flavor,
    eigenvalues: Vec<f64>,
    // Columns are Euclidean-orthonormal sine vectors.
    sine: DMatrix<f64>,
    // e_i = basis_scale[i] · sine column i.
    basis_scale: Vec<f64>,
}

impl DiscreteTriple {
    pub fn new(n_grid: usize, flavor: Flavor) -> Result<Self> {
        if n_grid == 0 {
            return Err(Error::Config("n_grid must be at least 1".into()));
        }
        let (q1, q2) = flavor.exponents();
        for (name, q) in [("q1", q1), ("q2", q2)] {
            if !(q >= 2.0) || !q.is_finite() {
                return Err(Error::OutOfRange {
                    what: "exponent",
                    detail: format!("{name} = {q} must be finite and >= 2"),
                });
            }
        }
        let h = 1.0 / (n_grid as f64 + 1.0);
        let pi = std::f64::consts::PI;
        let norm = (2.0 * h).sqrt();
        let sine = DMatrix::from_fn(n_grid, n_grid, |j, i| {
            norm * ((i + 1) as f64 * pi * (j + 1) as f64 * h).sin()
        });
        let eigenvalues: Vec<f64> = (1..=n_grid)
            .map(|i| {
                let s = (i as f64 * pi * h / 2.0).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        let basis_scale = eigenvalues
            .iter()
            .map(|&mu| match flavor {
                Flavor::PorousMedium { .. } => (mu / h).sqrt(),
                Flavor::ReactionDiffusion { .. } => 1.0 / h.sqrt(),
            })
            .collect();
        Ok(Self {
            id: TripleId(NEXT_TRIPLE_ID.fetch_add(1, Ordering::Relaxed)),
            n_grid,
            h,
            flavor,
            eigenvalues,
            sine,
            basis_scale,
        })
    }

    pub fn id(&self) -> TripleId {
        self.id
    }

    pub fn n_grid(&self) -> usize {
        self.n_grid
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor
    }

    /// Interior node coordinates `x_j = j·h`.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.n_grid).map(|j| j as f64 * self.h).collect()
    }

    /// Eigenvalues `μ_i` of `−L`, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Dense Dirichlet Laplacian `L`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n_grid;
        let c = 1.0 / (self.h * self.h);
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -2.0 * c
            } else if i.abs_diff(j) == 1 {
                c
            } else {
                0.0
            }
        })
    }

    /// The `i`-th `H`-orthonormal basis vector (zero-based).
    pub fn basis_vector(&self, i: usize) -> Vec<f64> {
        let s = self.basis_scale[i];
        self.sine.column(i).iter().map(|v| s * v).collect()
    }

    pub fn basis_scale(&self) -> &[f64] {
        &self.basis_scale
    }

    /// Euclidean-orthonormal eigenvectors as columns.
    pub fn sine_matrix(&self) -> &DMatrix<f64> {
        &self.sine
    }

    pub fn function(&self, values: Vec<f64>) -> Result<GridFunction> {
        self.check_len("grid function", &values)?;
        check_finite("grid function", &values)?;
        Ok(GridFunction {
            values,
            triple: self.id,
        })
    }

    pub fn zeros(&self) -> GridFunction {
        GridFunction {
            values: vec![0.0; self.n_grid],
            triple: self.id,
        }
    }

    pub fn owns(&self, u: &GridFunction) -> bool {
        u.triple == self.id
    }

    pub(crate) fn check_len(&self, what: &'static str, u: &[f64]) -> Result<()> {
        if u.len() != self.n_grid {
            return Err(Error::Dimension {
                what,
                expected: self.n_grid,
                found: u.len(),
            });
        }
        Ok(())
    }

    /// `(Lu)_j = (u_{j−1} − 2u_j + u_{j+1})/h²` with zero boundary values.
    pub fn apply_laplacian(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n_grid;
        let c = 1.0 / (self.h * self.h);
        (0..n)
            .map(|j| {
                let left = if j > 0 { u[j - 1] } else { 0.0 };
                let right = if j + 1 < n { u[j + 1] } else { 0.0 };
                c * (left - 2.0 * u[j] + right)
            })
            .collect()
    }

    /// `(−L)⁻¹u` through the eigen-decomposition.
    pub fn apply_neg_laplacian_inv(&self, u: &[f64]) -> Vec<f64> {
        let coeff = self.sine.tr_mul(&DVector::from_column_slice(u));
        let scaled = DVector::from_iterator(
            self.n_grid,
            coeff.iter().zip(&self.eigenvalues).map(|(c, mu)| c / mu),
        );
        (&self.sine * scaled).data.into()
    }

    /// Applies the pairing operator `P`.
    pub fn apply_pairing(&self, f: &[f64]) -> Vec<f64> {
        match self.flavor {
            Flavor::PorousMedium { .. } => self.apply_neg_laplacian_inv(f),
            Flavor::ReactionDiffusion { .. } => f.to_vec(),
        }
    }

    /// Applies `P⁻¹`, turning a weak-form representer into `X*` coordinates.
    pub fn apply_pairing_inv(&self, r: &[f64]) -> Vec<f64> {
        match self.flavor {
            Flavor::PorousMedium { .. } => self.apply_laplacian(r).iter().map(|v| -v).collect(),
            Flavor::ReactionDiffusion { .. } => r.to_vec(),
        }
    }

    pub fn h_inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_len("h_inner", u)?;
        self.check_len("h_inner", v)?;
        Ok(self.h_inner_unchecked(u, v))
    }

    pub(crate) fn h_inner_unchecked(&self, u: &[f64], v: &[f64]) -> f64 {
        let pv = self.apply_pairing(v);
        self.h * dot(u, &pv)
    }

    pub fn h_norm_sq(&self, u: &[f64]) -> f64 {
        self.h_inner_unchecked(u, u).max(0.0)
    }

    pub fn h_norm(&self, u: &[f64]) -> f64 {
        self.h_norm_sq(u).sqrt()
    }

    pub fn dual_pairing(&self, x: &[f64], f: &[f64]) -> Result<f64> {
        self.check_len("dual_pairing", x)?;
        self.check_len("dual_pairing", f)?;
        Ok(self.h_inner_unchecked(x, f))
    }

    pub fn exponent(&self, which: Space) -> f64 {
        let (q1, q2) = self.flavor.exponents();
        match which {
            Space::X1 => q1,
            Space::X2 => q2,
        }
    }

    pub fn x_norm(&self, u: &[f64], which: Space) -> Result<f64> {
        self.check_len("x_norm", u)?;
        Ok(self.x_norm_with(u, which, self.exponent(which)))
    }

    /// The `which`-norm evaluated with an explicit exponent.
    pub fn x_norm_with(&self, u: &[f64], which: Space, q: f64) -> f64 {
        match (self.flavor, which) {
            (Flavor::ReactionDiffusion { .. }, Space::X1) => {
                weighted_lq(&self.gradient(u), self.h, q)
            }
            _ => weighted_lq(u, self.h, q),
        }
    }

    /// Forward differences over the `n_grid + 1` cells, zero-padded.
    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n_grid;
        (0..=n)
            .map(|k| {
                let right = if k < n { u[k] } else { 0.0 };
                let left = if k > 0 { u[k - 1] } else { 0.0 };
                (right - left) / self.h
            })
            .collect()
    }

    /// `Dᵀg` for a cell vector `g` of length `n_grid + 1`.
    pub fn gradient_transpose(&self, g: &[f64]) -> Vec<f64> {
        (0..self.n_grid)
            .map(|j| (g[j] - g[j + 1]) / self.h)
            .collect()
    }

    /// Norm in `X_which*` of an element stored in `X*` coordinates.
    pub fn dual_norm(&self, f: &[f64], which: Space) -> Result<f64> {
        self.check_len("dual_norm", f)?;
        Ok(self.dual_norm_with(f, which, self.exponent(which)))
    }

    /// [`DiscreteTriple::dual_norm`] with an explicit exponent `q` of `X_which`.
    pub fn dual_norm_with(&self, f: &[f64], which: Space, q: f64) -> f64 {
        self.representer_dual_norm(&self.apply_pairing(f), which, q)
    }

    /// Dual norm of the functional `v ↦ h·vᵀr`.
    pub fn representer_dual_norm(&self, r: &[f64], which: Space, q: f64) -> f64 {
        let conj = q / (q - 1.0);
        match (self.flavor, which) {
            (Flavor::ReactionDiffusion { .. }, Space::X1) => {
                // Solve Dᵀg = r, then minimize over the constant kernel of Dᵀ.
                let mut g = Vec::with_capacity(self.n_grid + 1);
                let mut acc = 0.0;
                g.push(acc);
                for &rj in r {
                    acc -= self.h * rj;
                    g.push(acc);
                }
                min_shifted_lq(&g, self.h, conj)
            }
            _ => weighted_lq(r, self.h, conj),
        }
    }

    /// `H`-coefficients `⟨e_i, u⟩_H` for the first `n` basis vectors.
    pub fn coords(&self, u: &[f64], n: usize) -> Vec<f64> {
        let sine_t_u = self.sine.columns(0, n).tr_mul(&DVector::from_column_slice(u));
        (0..n)
            .map(|i| {
                let weight = match self.flavor {
                    Flavor::PorousMedium { .. } => 1.0 / self.eigenvalues[i],
                    Flavor::ReactionDiffusion { .. } => 1.0,
                };
                self.h * self.basis_scale[i] * weight * sine_t_u[i]
            })
            .collect()
    }

    /// `Σ c_i e_i`.
    pub fn expand(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = coeffs.len();
        let scaled = DVector::from_iterator(
            n,
            coeffs.iter().zip(&self.basis_scale).map(|(c, s)| c * s),
        );
        (self.sine.columns(0, n) * scaled).data.into()
    }

    pub fn project(&self, u: &[f64], n: usize) -> Result<Vec<f64>> {
        self.check_len("project", u)?;
        self.check_modes(n)?;
        Ok(self.expand(&self.coords(u, n)))
    }

    pub fn project_function(&self, u: &GridFunction, n: usize) -> Result<GridFunction> {
        if !self.owns(u) {
            return Err(Error::Config("grid function belongs to another triple".into()));
        }
        let values = self.project(u, n)?;
        Ok(GridFunction {
            values,
            triple: self.id,
        })
    }

    pub(crate) fn check_modes(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.n_grid {
            return Err(Error::OutOfRange {
                what: "mode count",
                detail: format!("{n} not in 1..={}", self.n_grid),
            });
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(h·Σ|u_k|^q)^{1/q}`.
pub fn weighted_lq(u: &[f64], h: f64, q: f64) -> f64 {
    if q == 2.0 {
        return (h * dot(u, u)).sqrt();
    }
    let m = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    let s: f64 = u.iter().map(|v| (v.abs() / m).powf(q)).sum();
    m * (h * s).powf(1.0 / q)
}

/// `min_c (h·Σ|g_k − c|^r)^{1/r}` for `r > 1`.
fn min_shifted_lq(g: &[f64], h: f64, r: f64) -> f64 {
    let n = g.len() as f64;
    if r == 2.0 {
        let mean = g.iter().sum::<f64>() / n;
        let shifted: Vec<f64> = g.iter().map(|v| v - mean).collect();
        return weighted_lq(&shifted, h, r);
    }
    let slope = |c: f64| -> f64 {
        g.iter()
            .map(|v| {
                let d = v - c;
                d.signum() * d.abs().powf(r - 1.0)
            })
            .sum()
    };
    let mut lo = g.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        // slope is decreasing in c; its root is the minimizer.
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = 0.5 * (lo + hi);
    let shifted: Vec<f64> = g.iter().map(|v| v - c).collect();
    weighted_lq(&shifted, h, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn pm(n: usize) -> DiscreteTriple {
        DiscreteTriple::new(n, Flavor::PorousMedium { q: 3.0 }).unwrap()
    }

    fn rd(n: usize) -> DiscreteTriple {
        DiscreteTriple::new(n, Flavor::ReactionDiffusion { q1: 2.0, q2: 3.0 }).unwrap()
    }

    #[test]
    fn analytic_basis_matches_numerical_eigensystem() {
        for t in [pm(12), rd(7)] {
            let eig = SymmetricEigen::new(-t.laplacian());
            let mut numeric: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
            numeric.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (a, b) in numeric.iter().zip(t.eigenvalues()) {
                assert!((a - b).abs() < 1e-9 * b, "{a} vs {b}");
            }
            // Each analytic vector is an eigenvector of the dense Laplacian.
            let lap = t.laplacian();
            for i in 0..t.n_grid() {
                let v = DVector::from_column_slice(t.sine_matrix().column(i).as_slice());
                let lv = &lap * &v;
                let resid = (lv + &v * t.eigenvalues()[i]).norm();
                assert!(resid < 1e-9 * t.eigenvalues()[i]);
            }
        }
    }

    #[test]
    fn basis_is_h_orthonormal() {
        for t in [pm(10), rd(10)] {
            for i in 0..10 {
                for j in 0..10 {
                    let ip = t
                        .h_inner(&t.basis_vector(i), &t.basis_vector(j))
                        .unwrap();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(ip, expected, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn grid_spacing_covers_domain() {
        let t = rd(31);
        assert_abs_diff_eq!(t.h() * (t.n_grid() as f64 + 1.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ones_inner_product_is_interior_length() {
        let t = rd(9);
        let ones = vec![1.0; 9];
        assert_abs_diff_eq!(t.h_inner(&ones, &ones).unwrap(), 1.0 - t.h(), epsilon = 1e-14);
        assert_eq!(t.h_inner(&[0.0; 9], &[0.0; 9]).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let t = rd(4);
        assert!(matches!(
            t.h_inner(&[1.0; 4], &[1.0; 5]),
            Err(Error::Dimension { .. })
        ));
        assert!(t.function(vec![f64::NAN; 4]).is_err());
    }

    #[test]
    fn x_norm_examples() {
        let t = DiscreteTriple::new(3, Flavor::ReactionDiffusion { q1: 2.0, q2: 4.0 }).unwrap();
        assert_eq!(t.x_norm(&[0.0; 3], Space::X2).unwrap(), 0.0);
        let c = -1.5;
        let got = t.x_norm(&[c; 3], Space::X2).unwrap();
        assert_abs_diff_eq!(got, c.abs() * (3.0 * t.h()).powf(0.25), epsilon = 1e-14);
        // Hat function (0.5, 1, 0.5) on h = 1/4: slopes 2, 2, −2, −2.
        let hat = [0.5, 1.0, 0.5];
        let h = 0.25;
        let brute: f64 = [0.5, 0.5, -0.5, -0.5]
            .iter()
            .map(|d: &f64| (d / h).powi(2) * h)
            .sum::<f64>()
            .sqrt();
        assert_abs_diff_eq!(t.x_norm(&hat, Space::X1).unwrap(), brute, epsilon = 1e-14);
    }

    #[test]
    fn pairing_against_laplacian_image() {
        let t = pm(16);
        let e1 = t.basis_vector(0);
        let f = t.apply_laplacian(&e1).iter().map(|v| -v).collect::<Vec<_>>();
        let got = t.dual_pairing(&e1, &f).unwrap();
        // (−L)⁻¹(−L)e₁ = e₁, so the pairing is h·|e₁|² = μ₁ h_inner(e₁,e₁)/μ₁·μ₁.
        let expected = t.h() * dot(&e1, &e1);
        assert_abs_diff_eq!(got, expected, epsilon = 1e-10 * expected);
        assert_abs_diff_eq!(expected, t.eigenvalues()[0], epsilon = 1e-10 * expected);
    }

    #[test]
    fn projection_examples() {
        let t = rd(8);
        let u: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
        let full = t.project(&u, 8).unwrap();
        for (a, b) in full.iter().zip(&u) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let e2 = t.basis_vector(1);
        assert!(t.project(&e2, 1).unwrap().iter().all(|v| v.abs() < 1e-13));
        assert!(t.project(&u, 0).is_err());
        assert!(t.project(&u, 9).is_err());
    }

    #[test]
    fn rd_x1_dual_norm_of_divergence_form() {
        // f = Dᵀ(Du) pairs with x as h·(Dx)·(Du); its X1* norm under q = 2 is
        // the norm of the gradient with its mean removed.
        let t = rd(6);
        let u = [0.3, -0.2, 0.5, 0.1, 0.0, -0.4];
        let f = t.gradient_transpose(&t.gradient(&u));
        let g = t.gradient(&u);
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let centred: Vec<f64> = g.iter().map(|v| v - mean).collect();
        let expected = weighted_lq(&centred, t.h(), 2.0);
        assert_abs_diff_eq!(t.dual_norm(&f, Space::X1).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn rd_x1_dual_norm_is_attained_sup() {
        // Brute-force sup over random directions never exceeds the formula,
        // and the Hölder-optimal direction attains it.
        let t = DiscreteTriple::new(5, Flavor::ReactionDiffusion { q1: 3.0, q2: 2.0 }).unwrap();
        let f = [1.0, -0.5, 0.25, 2.0, -1.0];
        let dn = t.dual_norm(&f, Space::X1).unwrap();
        let mut rng_state = 1u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        let mut best = 0.0f64;
        for _ in 0..20000 {
            let x: Vec<f64> = (0..5).map(|_| next()).collect();
            let ratio = t.h() * dot(&x, &f) / t.x_norm(&x, Space::X1).unwrap();
            best = best.max(ratio);
        }
        assert!(best <= dn * (1.0 + 1e-12));
        assert!(best >= 0.9 * dn, "{best} vs {dn}");
    }

    proptest! {
        #[test]
        fn inner_product_positive_definite(u in prop::collection::vec(-10.0f64..10.0, 12)) {
            prop_assume!(u.iter().any(|v| v.abs() > 1e-6));
            for t in [pm(12), rd(12)] {
                prop_assert!(t.h_inner(&u, &u).unwrap() > 0.0);
            }
        }

        #[test]
        fn inner_product_symmetric(
            u in prop::collection::vec(-10.0f64..10.0, 9),
            v in prop::collection::vec(-10.0f64..10.0, 9),
        ) {
            for t in [pm(9), rd(9)] {
                let a = t.h_inner(&u, &v).unwrap();
                let b = t.h_inner(&v, &u).unwrap();
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
                prop_assert_eq!(t.dual_pairing(&u, &v).unwrap(), a);
            }
        }

        #[test]
        fn projection_is_symmetric_idempotent_contractive(
            x in prop::collection::vec(-5.0f64..5.0, 10),
            y in prop::collection::vec(-5.0f64..5.0, 10),
            n in 1usize..=10,
        ) {
            for t in [pm(10), rd(10)] {
                let px = t.project(&x, n).unwrap();
                let py = t.project(&y, n).unwrap();
                let a = t.dual_pairing(&px, &y).unwrap();
                let b = t.dual_pairing(&py, &x).unwrap();
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
                let ppx = t.project(&px, n).unwrap();
                for (p, q) in ppx.iter().zip(&px) {
                    prop_assert!((p - q).abs() <= 1e-12 * (1.0 + q.abs()) * 10.0);
                }
                prop_assert!(t.h_norm(&px) <= t.h_norm(&x) * (1.0 + 1e-12) + 1e-14);
            }
        }
    }
}
