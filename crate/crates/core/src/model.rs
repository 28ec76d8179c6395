//! The fixed data of `-u'' = a u - f(u) - c h` on (0, 1): the competition
//! term `f`, the harvesting profile `h`, and the cached eigen-data.

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::linalg::TridiagonalOperator;

/// `f(u) = kappa * ((u - M)^+)^p` with `p >= 3`, so `f` is C² and convex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompetitionTerm {
    threshold: f64,
    kappa: f64,
    power: i32,
}

impl CompetitionTerm {
    pub fn new(threshold: f64, kappa: f64, power: i32) -> Result<Self> {
        if !(threshold >= 0.0 && threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!("M must be >= 0, got {threshold}")));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidConfig(format!("kappa must be > 0, got {kappa}")));
        }
        if power < 3 {
            return Err(Error::InvalidConfig(format!(
                "power must be >= 3 for f to be C^2, got {power}"
            )));
        }
        Ok(Self {
            threshold,
            kappa,
            power,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn power(&self) -> i32 {
        self.power
    }

    /// `(f(u), f'(u), f''(u))`.
    #[inline]
    pub fn eval(&self, u: f64) -> (f64, f64, f64) {
        let s = u - self.threshold;
        if s <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let p = self.power;
        let pf = p as f64;
        let s2 = s.powi(p - 2);
        (
            self.kappa * s2 * s * s,
            self.kappa * pf * s2 * s,
            self.kappa * pf * (pf - 1.0) * s2,
        )
    }

    pub fn value(&self, u: f64) -> f64 {
        self.eval(u).0
    }

    pub fn derivative(&self, u: f64) -> f64 {
        self.eval(u).1
    }

    pub fn second_derivative(&self, u: f64) -> f64 {
        self.eval(u).2
    }
}

/// Harvesting profile: a combination of sine modes `k >= 2`, projected
/// orthogonal to the discrete first eigenvector.
#[derive(Debug, Clone, PartialEq)]
pub struct HarvestTerm {
    modes: Vec<(usize, f64)>,
    values: GridFunction,
    psi_component: f64,
}

impl HarvestTerm {
    /// Realizes `sum b_k sin(k pi x)` and removes its `phi` component.
    pub fn build(grid: &Grid, modes: &[(usize, f64)]) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidConfig("harvest needs at least one mode".into()));
        }
        if let Some((k, _)) = modes.iter().find(|(k, _)| *k < 2 || *k > grid.n()) {
            return Err(Error::InvalidConfig(format!(
                "harvest mode {k} outside 2..={}",
                grid.n()
            )));
        }
        if modes.iter().all(|(_, b)| *b == 0.0) {
            return Err(Error::InvalidConfig("harvest coefficients are all zero".into()));
        }
        let mut h = grid.zeros();
        for &(k, b) in modes {
            h.axpy(b, &grid.sine_mode(k));
        }
        let phi = grid.eigenpair(1)?.vector;
        let proj = grid.inner(&h, &phi) / grid.inner(&phi, &phi);
        h.axpy(-proj, &phi);
        Self::from_values(grid, h, modes.to_vec())
    }

    fn from_values(grid: &Grid, values: GridFunction, modes: Vec<(usize, f64)>) -> Result<Self> {
        let h = Self::from_raw(grid, values)?;
        let psi = grid.eigenpair(2)?.vector;
        let scale = grid.norm(&h.values) * grid.norm(&psi);
        if h.psi_component.abs() <= 1e-12 * scale {
            return Err(Error::Hypothesis(
                "(c) harvest is orthogonal to the second eigenfunction".into(),
            ));
        }
        Ok(Self { modes, ..h })
    }

    /// Uses `values` as given: no projection and no check of (b) or (c).
    /// Used to inject faults into the verification checks.
    pub fn from_raw(grid: &Grid, values: GridFunction) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::InvalidConfig("harvest length does not match grid".into()));
        }
        if !values.is_finite() {
            return Err(Error::Hypothesis("(a) harvest must be bounded".into()));
        }
        let psi = grid.eigenpair(2)?.vector;
        let psi_component = grid.inner(&values, &psi);
        Ok(Self {
            modes: Vec::new(),
            values,
            psi_component,
        })
    }

    pub fn values(&self) -> &GridFunction {
        &self.values
    }

    pub fn modes(&self) -> &[(usize, f64)] {
        &self.modes
    }

    /// `<h, psi>` with `psi` scaled to maximum one.
    pub fn psi_component(&self) -> f64 {
        self.psi_component
    }

    pub fn negated(&self) -> Self {
        Self {
            modes: self.modes.iter().map(|&(k, b)| (k, -b)).collect(),
            values: self.values.scaled(-1.0),
            psi_component: -self.psi_component,
        }
    }
}

/// All fixed data of the discrete problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub grid: Grid,
    pub f: CompetitionTerm,
    pub h: HarvestTerm,
    pub phi: GridFunction,
    pub psi: GridFunction,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub beta: f64,
    phi_sq: f64,
    psi_sq: f64,
}

impl Problem {
    pub fn new(grid: Grid, f: CompetitionTerm, h: HarvestTerm) -> Result<Self> {
        if h.values().len() != grid.n() {
            return Err(Error::InvalidConfig("harvest length does not match grid".into()));
        }
        let e1 = grid.eigenpair(1)?;
        let e2 = grid.eigenpair(2)?;
        let lambda3 = if grid.n() >= 3 {
            grid.eigenvalue(3)
        } else {
            f64::INFINITY
        };
        let phi_sq = grid.inner(&e1.vector, &e1.vector);
        let psi_sq = grid.inner(&e2.vector, &e2.vector);
        Ok(Self {
            grid,
            f,
            h,
            phi: e1.vector,
            psi: e2.vector,
            lambda1: e1.value,
            lambda2: e2.value,
            lambda3,
            beta: e2.beta,
            phi_sq,
            psi_sq,
        })
    }

    /// `M`, `kappa = 1`, `p = 3`, `h = -sin(2 pi x)` on `n` interior nodes.
    pub fn standard(n: usize, threshold: f64) -> Result<Self> {
        let grid = Grid::new(n)?;
        let f = CompetitionTerm::new(threshold, 1.0, 3)?;
        let h = HarvestTerm::build(&grid, &[(2, -1.0)])?;
        Self::new(grid, f, h)
    }

    pub fn with_harvest(&self, h: HarvestTerm) -> Result<Self> {
        Self::new(self.grid, self.f, h)
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn threshold(&self) -> f64 {
        self.f.threshold()
    }

    /// `lambda2 - lambda1`.
    pub fn gap(&self) -> f64 {
        self.lambda2 - self.lambda1
    }

    pub fn phi_sq(&self) -> f64 {
        self.phi_sq
    }

    pub fn psi_sq(&self) -> f64 {
        self.psi_sq
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.grid.inner(u, v)
    }

    /// Component of `u` along `phi`: `<u, phi> / <phi, phi>`.
    pub fn t_phi(&self, u: &[f64]) -> f64 {
        self.inner(u, &self.phi) / self.phi_sq
    }

    /// Component of `u` along `psi`: `<u, psi> / <psi, psi>`.
    pub fn t_psi(&self, u: &[f64]) -> f64 {
        self.inner(u, &self.psi) / self.psi_sq
    }

    pub fn f_values(&self, u: &[f64]) -> GridFunction {
        GridFunction(u.iter().map(|&v| self.f.value(v)).collect())
    }

    /// `Δ_h u + a u - f(u) - c h`.
    pub fn residual(&self, a: f64, u: &[f64], c: f64) -> GridFunction {
        let mut r = self.grid.apply_laplacian(u);
        let h = self.h.values();
        for i in 0..r.len() {
            r[i] += a * u[i] - self.f.value(u[i]) - c * h[i];
        }
        r
    }

    /// `Δ_h + a I - diag(f'(u))`.
    pub fn jacobian(&self, a: f64, u: &[f64]) -> TridiagonalOperator {
        let mut op = self.grid.laplacian();
        for (d, &ui) in op.diagonal.iter_mut().zip(u) {
            *d += a - self.f.derivative(ui);
        }
        op
    }

    /// `(a - lambda1) t <phi, phi> - <f(u), phi>`, zero at every exact solution.
    pub fn phi_identity_defect(&self, a: f64, u: &[f64]) -> f64 {
        (a - self.lambda1) * self.t_phi(u) * self.phi_sq - self.inner(&self.f_values(u), &self.phi)
    }

    pub fn check_hypotheses(&self) -> HypothesisReport {
        check_hypotheses(self)
    }
}

/// One line per hypothesis on `f` and `h`.
#[derive(Debug, Clone)]
pub struct HypothesisReport {
    pub items: Vec<HypothesisCheck>,
}

#[derive(Debug, Clone)]
pub struct HypothesisCheck {
    pub id: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.items.iter().all(|c| c.passed)
    }

    pub fn get(&self, id: &str) -> Option<&HypothesisCheck> {
        self.items.iter().find(|c| c.id == id)
    }
}

pub fn check_hypotheses(problem: &Problem) -> HypothesisReport {
    let f = &problem.f;
    let m = f.threshold();
    let samples: Vec<f64> = (0..=400).map(|i| m - 5.0 + 15.0 * i as f64 / 400.0).collect();
    let mut items = Vec::new();

    // (i): the family is C^2 iff p >= 3; check f'' continuity at M numerically too.
    let jump = f.second_derivative(m + 1e-9);
    items.push(HypothesisCheck {
        id: "(i)",
        passed: f.power() >= 3 && jump < 1e-6,
        detail: format!("p = {}, f''(M+1e-9) = {jump:.3e}", f.power()),
    });

    let bad_sign = samples.iter().find(|&&u| {
        let v = f.value(u);
        if u <= m {
            v != 0.0
        } else {
            v <= 0.0
        }
    });
    items.push(HypothesisCheck {
        id: "(ii)",
        passed: bad_sign.is_none(),
        detail: match bad_sign {
            Some(u) => format!("sign condition fails at u = {u}"),
            None => "f = 0 below M, f > 0 above".into(),
        },
    });

    let min_f2 = samples
        .iter()
        .map(|&u| f.second_derivative(u))
        .fold(f64::INFINITY, f64::min);
    items.push(HypothesisCheck {
        id: "(iii)",
        passed: min_f2 >= 0.0,
        detail: format!("min f'' = {min_f2:.3e}"),
    });

    let big = (m + 1.0) * 1e3;
    let ratio_big = f.value(big) / big;
    let ratio_bigger = f.value(10.0 * big) / (10.0 * big);
    items.push(HypothesisCheck {
        id: "(iv)",
        passed: ratio_bigger > ratio_big && ratio_big > 1.0,
        detail: format!("f(U)/U = {ratio_big:.3e}, f(10U)/(10U) = {ratio_bigger:.3e}"),
    });

    let h = problem.h.values();
    items.push(HypothesisCheck {
        id: "(a)",
        passed: h.is_finite(),
        detail: format!("max |h| = {:.6e}", h.norm_inf()),
    });

    let hphi = problem.inner(h, &problem.phi);
    let scale = problem.grid.norm(h) * problem.phi_sq.sqrt();
    items.push(HypothesisCheck {
        id: "(b)",
        passed: hphi.abs() <= 1e-13 * scale,
        detail: format!("<h, phi> = {hphi:.3e}"),
    });

    let hpsi = problem.inner(h, &problem.psi);
    let scale = problem.grid.norm(h) * problem.psi_sq.sqrt();
    items.push(HypothesisCheck {
        id: "(c)",
        passed: hpsi.abs() > 1e-12 * scale,
        detail: format!("<h, psi> = {hpsi:.6e}"),
    });

    HypothesisReport { items }
}
