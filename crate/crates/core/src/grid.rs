//! Uniform Dirichlet grid on the unit interval.
//!
//! Grid functions store values at the `n` interior nodes `x_i = i * spacing`,
//! `i = 1..=n`; the boundary values are implicitly zero. The inner product is
//! the rectangle rule `spacing * sum(u_i v_i)`, under which the three-point
//! Laplacian is exactly symmetric.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::linalg::TridiagonalOperator;

/// Uniform grid with `n` interior nodes and spacing `1/(n+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    spacing: f64,
}

impl Grid {
    /// Builds a grid; `n + 1` must be a multiple of 4 so that `x = 1/4, 1/2, 3/4`
    /// are nodes.
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidConfig(format!("grid needs n >= 3, got {n}")));
        }
        if !(n + 1).is_multiple_of(4) {
            return Err(Error::InvalidConfig(format!(
                "grid needs n+1 divisible by 4, got n={n}"
            )));
        }
        Ok(Self {
            n,
            spacing: 1.0 / (n + 1) as f64,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Interior node coordinates.
    pub fn nodes(&self) -> Vec<f64> {
        (1..=self.n).map(|i| i as f64 * self.spacing).collect()
    }

    pub fn zeros(&self) -> GridFunction {
        GridFunction(vec![0.0; self.n])
    }

    /// Samples `f` at the interior nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction(self.nodes().into_iter().map(f).collect())
    }

    /// `sin(k pi x)` at the nodes, computed from the integer index so that
    /// symmetric nodes get symmetric values.
    pub fn sine_mode(&self, k: usize) -> GridFunction {
        let m = (self.n + 1) as f64;
        GridFunction(
            (1..=self.n)
                .map(|i| (PI * ((k * i) % (2 * (self.n + 1))) as f64 / m).sin())
                .collect(),
        )
    }

    /// Three-point stencil `(u_{i-1} - 2u_i + u_{i+1}) / spacing^2` with zero
    /// Dirichlet data.
    pub fn apply_laplacian(&self, u: &[f64]) -> GridFunction {
        debug_assert_eq!(u.len(), self.n);
        let inv = 1.0 / (self.spacing * self.spacing);
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < n { u[i + 1] } else { 0.0 };
            out[i] = ((left - u[i]) + (right - u[i])) * inv;
        }
        GridFunction(out)
    }

    /// The discrete Laplacian as a tridiagonal operator.
    pub fn laplacian(&self) -> TridiagonalOperator {
        let inv = 1.0 / (self.spacing * self.spacing);
        TridiagonalOperator::new(vec![-2.0 * inv; self.n], vec![inv; self.n - 1])
    }

    /// Rectangle-rule inner product.
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), v.len());
        self.spacing * u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.inner(u, u).sqrt()
    }

    /// Closed-form eigenvalue of `-Δ_h`: `(4/spacing^2) sin^2(k pi spacing / 2)`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let s = (k as f64 * PI * self.spacing / 2.0).sin();
        4.0 / (self.spacing * self.spacing) * s * s
    }

    /// Eigenpair `k` of `-Δ_h`, with the eigenvector scaled to maximum 1.
    pub fn eigenpair(&self, k: usize) -> Result<Eigenpair> {
        if k == 0 || k > self.n {
            return Err(Error::InvalidConfig(format!(
                "eigenpair index {k} outside 1..={}",
                self.n
            )));
        }
        let mut v = self.sine_mode(k);
        let max = v.max();
        v.scale(1.0 / max);
        let beta = -v.min();
        Ok(Eigenpair {
            value: self.eigenvalue(k),
            vector: v,
            beta,
        })
    }
}

/// Discrete Dirichlet eigenpair. `beta = -min(vector)`.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: GridFunction,
    pub beta: f64,
}

/// Values at the interior nodes of a [`Grid`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridFunction(pub Vec<f64>);

impl GridFunction {
    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.iter().map(|v| v * s).collect())
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &[f64]) {
        self.0.iter_mut().zip(other).for_each(|(a, b)| *a += s * b);
    }

    pub fn sub(&self, other: &[f64]) -> Self {
        Self(self.0.iter().zip(other).map(|(a, b)| a - b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for GridFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for GridFunction {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_nodes() {
        let g = Grid::new(199).unwrap();
        assert_eq!(g.spacing(), 0.005);
        let g3 = Grid::new(3).unwrap();
        assert_eq!(g3.nodes(), vec![0.25, 0.5, 0.75]);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid::new(4).is_err());
        assert!(Grid::new(2).is_err());
        assert!(Grid::new(0).is_err());
    }

    #[test]
    fn stencil_on_small_grid() {
        let g = Grid::new(3).unwrap();
        let out = g.apply_laplacian(&[0.0, 1.0, 0.0]);
        assert_eq!(out.0, vec![16.0, -32.0, 16.0]);
        assert_eq!(g.apply_laplacian(&[0.0; 3]).0, vec![0.0; 3]);
    }

    #[test]
    fn sine_modes_are_eigenvectors() {
        let g = Grid::new(199).unwrap();
        for k in 1..=4 {
            let u = g.sine_mode(k);
            let lu = g.apply_laplacian(&u);
            let lam = g.eigenvalue(k);
            let err = lu
                .iter()
                .zip(u.iter())
                .map(|(a, b)| (a + lam * b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "k={k} err={err}");
        }
        let phi = g.eigenpair(1).unwrap();
        let r = g.apply_laplacian(&phi.vector);
        let err = r
            .iter()
            .zip(phi.vector.iter())
            .map(|(a, b)| (a + phi.value * b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn first_eigenvalue_near_pi_squared() {
        let g = Grid::new(199).unwrap();
        let l1 = g.eigenvalue(1);
        assert!((l1 - 9.8694).abs() < 1e-4, "{l1}");
    }

    #[test]
    fn beta_is_one() {
        for n in [3, 7, 99, 199, 399] {
            let g = Grid::new(n).unwrap();
            let psi = g.eigenpair(2).unwrap();
            assert_eq!(psi.beta, 1.0);
            assert_eq!(psi.vector.max(), 1.0);
        }
        assert!(Grid::new(7).unwrap().eigenpair(8).is_err());
        assert!(Grid::new(7).unwrap().eigenpair(0).is_err());
    }

    #[test]
    fn inner_products_of_modes() {
        let g = Grid::new(199).unwrap();
        let s1 = g.sine_mode(1);
        let s2 = g.sine_mode(2);
        assert!(g.inner(&s1, &s2).abs() < 1e-15);
        // Oracle: direct summation of sin^2(i pi/(n+1)) equals (n+1)/2.
        let direct: f64 = (1..=199)
            .map(|i| (std::f64::consts::PI * i as f64 / 200.0).sin().powi(2))
            .sum();
        assert!((direct - 100.0).abs() < 1e-11);
        assert!((g.inner(&s1, &s1) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn spectral_convergence_ratio() {
        let e = |n: usize| (Grid::new(n).unwrap().eigenvalue(1) - PI * PI).abs();
        let ratio = e(99) / e(199);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }
}
