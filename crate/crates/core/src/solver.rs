//! Damped Newton solves at fixed `(a, c)`.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::model::Problem;
use crate::spectrum::{self, SpectrumReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Acceptance threshold on the max-norm residual.
    pub newton_tol: f64,
    pub max_iterations: usize,
    /// Smallest damping factor tried by the backtracking line search.
    pub damping_min: f64,
    /// Degeneracy band relative to `max(1, lambda1)`.
    pub tol_deg: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            max_iterations: 40,
            damping_min: 1.0 / 64.0,
            tol_deg: spectrum::DEFAULT_TOL_DEG,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) {
            return Err(Error::InvalidConfig("newton_tol must be > 0".into()));
        }
        if !(self.damping_min > 0.0 && self.damping_min <= 1.0) {
            return Err(Error::InvalidConfig("damping_min must lie in (0, 1]".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        if !(self.tol_deg > 0.0) {
            return Err(Error::InvalidConfig("tol_deg must be > 0".into()));
        }
        Ok(())
    }

    /// Residual level accepted at `u`: `newton_tol`, raised to the
    /// double-precision floor `2 eps |Δ_h| max(1, |u|)` where that is larger.
    pub fn acceptance_tolerance(&self, problem: &Problem, u: &[f64]) -> f64 {
        self.newton_tol.max(residual_floor(problem, u))
    }
}

/// Residual attainable in double precision near `u`: one ulp of `u` moves
/// `Δ_h u` by about `eps |u| 4 / h^2`.
pub fn residual_floor(problem: &Problem, u: &[f64]) -> f64 {
    let h = problem.grid.spacing();
    let umax = u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    2.0 * f64::EPSILON * umax * 4.0 / (h * h)
}

/// An accepted solution `(a, u, c)` with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub a: f64,
    pub u: GridFunction,
    pub c: f64,
    pub residual_norm: f64,
    pub t_phi: f64,
    pub t_psi: f64,
    pub spectrum: SpectrumReport,
}

impl Solution {
    /// Computes diagnostics for a candidate; does not check the residual.
    pub fn evaluate(problem: &Problem, a: f64, u: GridFunction, c: f64, tol_deg: f64) -> Result<Self> {
        let residual_norm = problem.residual(a, &u, c).norm_inf();
        let spectrum = spectrum::morse_index(problem, a, &u, tol_deg)?;
        Ok(Self {
            a,
            t_phi: problem.t_phi(&u),
            t_psi: problem.t_psi(&u),
            u,
            c,
            residual_norm,
            spectrum,
        })
    }

    pub fn morse_index(&self) -> usize {
        self.spectrum.morse_index
    }

    pub fn degenerate(&self) -> bool {
        self.spectrum.degenerate
    }

    /// `(a - lambda1) t <phi,phi> - <f(u), phi>`.
    pub fn phi_identity_defect(&self, problem: &Problem) -> f64 {
        problem.phi_identity_defect(self.a, &self.u)
    }
}

/// Damped Newton on `R(u) = Δ_h u + a u - f(u) - c h`.
pub fn newton_solve(
    problem: &Problem,
    a: f64,
    c: f64,
    initial_guess: &[f64],
    config: &SolverConfig,
) -> Result<Solution> {
    if !a.is_finite() || !c.is_finite() || initial_guess.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("non-finite newton input".into()));
    }
    let mut u = GridFunction(initial_guess.to_vec());
    let mut r = problem.residual(a, &u, c);
    let mut rn = r.norm_inf();
    for _ in 0..config.max_iterations {
        if rn <= config.acceptance_tolerance(problem, &u) {
            return Solution::evaluate(problem, a, u, c, config.tol_deg);
        }
        let jac = problem.jacobian(a, &u);
        let lu = jac.to_band().factor().ok_or(Error::SingularJacobian { residual: rn })?;
        let mut du = r.scaled(-1.0).into_vec();
        lu.solve_in_place(&mut du);
        if du.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularJacobian { residual: rn });
        }
        let mut lambda = 1.0;
        loop {
            let mut trial = u.clone();
            trial.axpy(lambda, &du);
            let tr = problem.residual(a, &trial, c);
            let tn = tr.norm_inf();
            if tn < rn || lambda <= config.damping_min {
                u = trial;
                r = tr;
                rn = tn;
                break;
            }
            lambda *= 0.5;
        }
    }
    if rn <= config.acceptance_tolerance(problem, &u) {
        return Solution::evaluate(problem, a, u, c, config.tol_deg);
    }
    Err(Error::NoConvergence {
        iterations: config.max_iterations,
        residual: rn,
    })
}

/// Linear response `(Δ_h + a)^{-1} h`; `None` when `a` hits an eigenvalue.
pub fn linear_response(problem: &Problem, a: f64) -> Option<GridFunction> {
    let op = problem.grid.laplacian().shifted(-a);
    let lu = op.to_band().factor()?;
    let g = lu.solve(problem.h.values());
    g.iter().all(|v| v.is_finite()).then_some(GridFunction(g))
}

/// Scalar upper-bound check at the maximum node: at an interior maximum
/// `Δ_h u <= 0`, so `a U - f(U) + |c| max|h| >= -residual` with `U = max u`.
pub fn upper_bound_margin(problem: &Problem, sol: &Solution) -> f64 {
    let umax = sol.u.max();
    if umax <= 0.0 {
        return f64::INFINITY;
    }
    sol.a * umax - problem.f.value(umax) + sol.c.abs() * problem.h.values().norm_inf()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn zero_root_below_lambda1() {
        let p = Problem::standard(199, 1.0).unwrap();
        let s = newton_solve(&p, 0.5 * p.lambda1, 0.0, &p.grid.zeros(), &cfg()).unwrap();
        assert_eq!(s.u.norm_inf(), 0.0);
        assert_eq!(s.morse_index(), 0);
    }

    #[test]
    fn multi_start_agreement_below_lambda1() {
        let p = Problem::standard(199, 1.0).unwrap();
        let a = 0.5 * p.lambda1;
        let c = 1.0;
        let g = linear_response(&p, a).unwrap();
        let guesses = [p.grid.zeros(), g.scaled(c), p.phi.scaled(-1.0)];
        let sols: Vec<_> = guesses
            .iter()
            .map(|u0| newton_solve(&p, a, c, u0, &cfg()).unwrap())
            .collect();
        for s in &sols[1..] {
            assert!(s.u.sub(&sols[0].u).norm_inf() <= 1e-8);
        }
        assert_eq!(sols[0].morse_index(), 0);
    }

    #[test]
    fn zero_above_lambda2_has_index_two() {
        let p = Problem::standard(199, 1.0).unwrap();
        let a = p.lambda2 + 0.05 * (p.lambda3 - p.lambda2);
        let s = newton_solve(&p, a, 0.0, &p.grid.zeros(), &cfg()).unwrap();
        assert_eq!(s.u.norm_inf(), 0.0);
        assert_eq!(s.morse_index(), 2);
    }

    #[test]
    fn quadratic_tail() {
        let p = Problem::standard(199, 1.0).unwrap();
        let a = p.lambda1 + 0.5 * p.gap();
        let sol = newton_solve(&p, a, 0.3, &p.phi.scaled(2.5), &cfg()).unwrap();
        // Undamped iterations from a nearby point.
        let mut u = sol.u.clone();
        u.axpy(0.05, &p.phi);
        let mut hist = vec![p.residual(a, &u, 0.3).norm_inf()];
        for _ in 0..12 {
            let jac = p.jacobian(a, &u);
            let lu = jac.to_band().factor().unwrap();
            let mut du = p.residual(a, &u, 0.3).scaled(-1.0).into_vec();
            lu.solve_in_place(&mut du);
            u.axpy(1.0, &du);
            let rn = p.residual(a, &u, 0.3).norm_inf();
            hist.push(rn);
            if rn < 1e-10 {
                break;
            }
        }
        let tail: Vec<_> = hist.windows(2).filter(|w| w[0] < 1e-4 && w[1] > 1e-11).collect();
        for w in tail {
            assert!(w[1] <= 1e3 * w[0] * w[0], "{hist:?}");
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(SolverConfig {
            damping_min: 0.0,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(SolverConfig {
            newton_tol: -1.0,
            ..cfg()
        }
        .validate()
        .is_err());
    }
}
