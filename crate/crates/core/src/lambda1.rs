//! Solution set at `a = lambda1` and the limit profiles as `a -> lambda1`.
//!
//! At `a = lambda1` every solution has the form `t phi + c g` with
//! `g = (Δ_h + lambda1)^{-1} h`, `<g, phi> = 0`, and `(t, c)` ranging over the
//! closed convex set `Λ = {(t, c) : t phi + c g <= M}`.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::linalg::bordered_solve;
use crate::model::Problem;

/// Number of `t` samples of the boundary curves.
pub const SAMPLE_COUNT: usize = 2000;
/// Left end of the sampled `t` range.
pub const SAMPLE_T_MIN: f64 = -10.0;

/// Nodes with `|g_i|` at or below this are treated as zeros of `g`.
const G_ZERO: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct LambdaSet {
    pub g: GridFunction,
    phi: GridFunction,
    threshold: f64,
    /// Largest `t` with a feasible `c`.
    pub t_max: f64,
    pub t_samples: Vec<f64>,
    /// Lower boundary `c^-(t)` on `t_samples`.
    pub c_minus: Vec<f64>,
    /// Upper boundary `c^+(t)` on `t_samples`.
    pub c_plus: Vec<f64>,
    pub c_star_minus: f64,
    pub c_star_plus: f64,
}

/// `g` with `(Δ_h + lambda1) g = h` and `<g, phi> = 0`, from the bordered
/// system with `phi` in both borders.
pub fn solve_resolvent_g(problem: &Problem) -> Result<GridFunction> {
    let sp = problem.grid.spacing();
    let op = problem.grid.laplacian().shifted(-problem.lambda1);
    let row: Vec<f64> = problem.phi.iter().map(|v| sp * v).collect();
    let (g, _) = bordered_solve(&op, &row, &problem.phi, 0.0, problem.h.values(), 0.0)?;
    Ok(GridFunction(g))
}

impl LambdaSet {
    pub fn build(problem: &Problem) -> Result<Self> {
        let g = solve_resolvent_g(problem)?;
        let mut set = Self {
            g,
            phi: problem.phi.clone(),
            threshold: problem.threshold(),
            t_max: 0.0,
            t_samples: Vec::new(),
            c_minus: Vec::new(),
            c_plus: Vec::new(),
            c_star_minus: 0.0,
            c_star_plus: 0.0,
        };
        set.t_max = set.compute_t_max();
        let (lo, hi) = set
            .c_range_at_t(0.0)
            .ok_or_else(|| Error::Hypothesis("t = 0 is infeasible; M must be >= 0".into()))?;
        set.c_star_minus = lo;
        set.c_star_plus = hi;
        let span = set.t_max - SAMPLE_T_MIN;
        set.t_samples = (0..SAMPLE_COUNT)
            .map(|k| {
                if k + 1 == SAMPLE_COUNT {
                    set.t_max
                } else {
                    SAMPLE_T_MIN + span * k as f64 / (SAMPLE_COUNT - 1) as f64
                }
            })
            .collect();
        set.c_minus = set.t_samples.iter().map(|&t| set.lower(t)).collect();
        set.c_plus = set.t_samples.iter().map(|&t| set.upper(t)).collect();
        Ok(set)
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// `max` over nodes with `g_i < 0` of `(M - t phi_i) / g_i`.
    fn lower(&self, t: f64) -> f64 {
        self.g
            .iter()
            .zip(self.phi.iter())
            .filter(|(g, _)| **g < -G_ZERO)
            .map(|(g, p)| (self.threshold - t * p) / g)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `min` over nodes with `g_i > 0` of `(M - t phi_i) / g_i`.
    fn upper(&self, t: f64) -> f64 {
        self.g
            .iter()
            .zip(self.phi.iter())
            .filter(|(g, _)| **g > G_ZERO)
            .map(|(g, p)| (self.threshold - t * p) / g)
            .fold(f64::INFINITY, f64::min)
    }

    /// Feasible `c`-interval at `t`, or `None`.
    pub fn c_range_at_t(&self, t: f64) -> Option<(f64, f64)> {
        let blocked = self
            .g
            .iter()
            .zip(self.phi.iter())
            .any(|(g, p)| g.abs() <= G_ZERO && t * p > self.threshold);
        if blocked {
            return None;
        }
        let (lo, hi) = (self.lower(t), self.upper(t));
        (lo <= hi).then_some((lo, hi))
    }

    pub fn contains(&self, t: f64, c: f64) -> bool {
        self.c_range_at_t(t).is_some_and(|(lo, hi)| lo <= c && c <= hi)
    }

    /// Bisection on feasibility; the feasible `t`-set is an interval
    /// containing `0`.
    fn compute_t_max(&self) -> f64 {
        let mut lo = 0.0;
        let mut hi = 1.0f64.max(2.0 * self.threshold);
        while self.c_range_at_t(hi).is_some() {
            lo = hi;
            hi *= 2.0;
        }
        while hi - lo > 1e-10 * 0.5 {
            let mid = 0.5 * (lo + hi);
            if self.c_range_at_t(mid).is_some() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// `c^-(t)`, increasing in `t`.
    pub fn c_minus_at(&self, t: f64) -> f64 {
        self.lower(t)
    }

    /// `c^+(t)`, decreasing in `t`.
    pub fn c_plus_at(&self, t: f64) -> f64 {
        self.upper(t)
    }

    /// `t <= T` with `c^-(t) = c`; requires `c <= c^-(T)`.
    pub fn inverse_c_minus(&self, c: f64) -> f64 {
        self.invert(c, |t| self.lower(t))
    }

    /// `t <= T` with `c^+(t) = c`; requires `c >= c^+(T)`.
    pub fn inverse_c_plus(&self, c: f64) -> f64 {
        self.invert(-c, |t| -self.upper(t))
    }

    /// Solves `curve(t) = c` on `(-inf, T]` for an increasing `curve`.
    fn invert(&self, c: f64, curve: impl Fn(f64) -> f64) -> f64 {
        let mut hi = self.t_max;
        if curve(hi) <= c {
            return hi;
        }
        let mut lo = (hi - 1.0).min(-1.0);
        while curve(lo) > c {
            lo = 2.0 * lo - 1.0;
            if lo < -1e12 {
                return f64::NEG_INFINITY;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if curve(mid) <= c {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * (1.0 + lo.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// `tau_0(c)`: zero on `[c*-, c*+]`, the inverse boundary curves outside.
    pub fn tau0(&self, c: f64) -> f64 {
        if c < self.c_star_minus {
            self.inverse_c_minus(c)
        } else if c > self.c_star_plus {
            self.inverse_c_plus(c)
        } else {
            0.0
        }
    }

    /// `tau_0(c)` and the limit profile `tau_0(c) phi + c g`.
    pub fn tau_and_limit(&self, c: f64) -> (f64, GridFunction) {
        let tau = self.tau0(c);
        (tau, self.profile(tau, c))
    }

    /// The half-space bound `tau_{t̂}(c)` for `t̂ < 0`.
    pub fn tau_hat(&self, t_hat: f64, c: f64) -> f64 {
        if c < self.c_star_minus {
            self.inverse_c_minus(c).min(t_hat)
        } else if c > self.c_star_plus {
            self.inverse_c_plus(c).min(t_hat)
        } else {
            t_hat
        }
    }

    /// `t_c`: `T` between `c^-(T)` and `c^+(T)`, the inverse curves outside.
    pub fn t_c_profile(&self, c: f64) -> Result<f64> {
        if self.threshold == 0.0 {
            return Err(Error::InvalidConfig("t_c is undefined for M = 0".into()));
        }
        let (lo, hi) = (self.lower(self.t_max), self.upper(self.t_max));
        Ok(if c < lo {
            self.inverse_c_minus(c)
        } else if c > hi {
            self.inverse_c_plus(c)
        } else {
            self.t_max
        })
    }

    /// `t phi + c g`.
    pub fn profile(&self, t: f64, c: f64) -> GridFunction {
        let mut u = self.phi.scaled(t);
        u.axpy(c, &self.g);
        u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::model::{CompetitionTerm, HarvestTerm};

    fn set(m: f64) -> (Problem, LambdaSet) {
        let p = Problem::standard(199, m).unwrap();
        let s = LambdaSet::build(&p).unwrap();
        (p, s)
    }

    #[test]
    fn resolvent_of_single_mode() {
        let (p, s) = set(1.0);
        let expect = p.grid.sine_mode(2).scaled(1.0 / p.gap());
        assert!(s.g.sub(&expect).norm_inf() <= 1e-12);
        let op = p.grid.laplacian().shifted(-p.lambda1);
        let r: f64 = op
            .apply(&s.g)
            .iter()
            .zip(p.h.values().iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()));
        assert!(r <= 1e-11);
        assert!(p.inner(&s.g, &p.phi).abs() <= 1e-13);
        assert!(p.inner(&s.g, &p.psi) > 0.0);
    }

    #[test]
    fn resolvent_per_mode_division() {
        let grid = Grid::new(63).unwrap();
        let h = HarvestTerm::build(&grid, &[(2, -1.0), (4, 0.5)]).unwrap();
        let p = Problem::new(grid, CompetitionTerm::new(1.0, 1.0, 3).unwrap(), h).unwrap();
        let g = solve_resolvent_g(&p).unwrap();
        let mut expect = grid.zeros();
        for (k, b) in [(2usize, -1.0), (4, 0.5)] {
            let mode = grid.sine_mode(k);
            expect.axpy(b / (p.lambda1 - grid.eigenvalue(k)), &mode);
        }
        assert!(g.sub(&expect).norm_inf() <= 1e-12);
    }

    #[test]
    fn symmetric_range_at_zero() {
        let (p, s) = set(1.0);
        let (lo, hi) = s.c_range_at_t(0.0).unwrap();
        let gmax = s.g.max();
        assert!((hi - 1.0 / gmax).abs() <= 1e-9 * hi);
        assert!((lo + hi).abs() <= 1e-9 * hi);
        assert!((hi - p.gap() / p.psi.max()).abs() <= 1e-9 * hi);
    }

    #[test]
    fn threshold_t_for_default_harvest() {
        let (_, s) = set(1.0);
        // g vanishes where phi peaks, which caps t at M.
        assert!((s.t_max - 1.0).abs() <= 1e-9);
        assert!(s.c_range_at_t(s.t_max - 1e-6).is_some());
        assert!(s.c_range_at_t(s.t_max + 1e-6).is_none());
        let (lo, hi) = s.c_range_at_t(1.0).unwrap();
        assert!(lo <= 0.0 && 0.0 <= hi);
    }

    #[test]
    fn zero_threshold_collapses() {
        let (_, s) = set(0.0);
        assert!(s.t_max.abs() <= 1e-10);
        assert_eq!((s.c_star_minus, s.c_star_plus), (0.0, 0.0));
        assert_eq!(s.c_range_at_t(0.0), Some((0.0, 0.0)));
        assert!(s.t_c_profile(0.0).is_err());
    }

    #[test]
    fn range_widens_for_negative_t() {
        let (_, s) = set(1.0);
        let (lo, hi) = s.c_range_at_t(-1e3).unwrap();
        assert!(lo < -1e3 && hi > 1e3);
    }

    #[test]
    fn sampled_curves_are_monotone_and_convex() {
        let (_, s) = set(1.0);
        for w in s.c_minus.windows(2) {
            assert!(w[1] > w[0]);
        }
        for w in s.c_plus.windows(2) {
            assert!(w[1] < w[0]);
        }
        for w in s.c_minus.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-10);
        }
        for w in s.c_plus.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] <= 1e-10);
        }
    }

    #[test]
    fn tau_cases() {
        let (_, s) = set(1.0);
        assert_eq!(s.tau0(0.0), 0.0);
        assert_eq!(s.tau0(s.c_star_minus), 0.0);
        let (t, u) = s.tau_and_limit(0.0);
        assert_eq!(t, 0.0);
        assert_eq!(u.norm_inf(), 0.0);
        let mut last = f64::NEG_INFINITY;
        for k in 1..=10 {
            let c = s.c_star_minus - 5.0 + 0.49 * k as f64;
            let t = s.tau0(c);
            assert!(t < 0.0);
            assert!(t > last);
            assert!((s.c_minus_at(t) - c).abs() <= 1e-9 * c.abs());
            last = t;
        }
        let t = s.tau0(s.c_star_plus + 2.0);
        assert!(t < 0.0);
        assert!((s.c_plus_at(t) - s.c_star_plus - 2.0).abs() <= 1e-9 * s.c_star_plus);
        assert_eq!(s.tau_hat(-0.5, 0.0), -0.5);
        assert!(s.tau_hat(-0.5, s.c_star_minus - 3.0) <= -0.5);
    }

    #[test]
    fn t_c_cases() {
        let (_, s) = set(1.0);
        assert_eq!(s.t_c_profile(0.0).unwrap(), s.t_max);
        assert!(s.t_c_profile(s.c_star_plus).unwrap().abs() <= 1e-9);
        let seam = s.c_plus_at(s.t_max);
        let left = s.t_c_profile(seam).unwrap();
        let right = s.t_c_profile(seam + 1e-12).unwrap();
        assert!((left - right).abs() < 1e-8);
    }
}
