//! Branch tracing in `(u, c)` at fixed `a`.
//!
//! Regular stretches use pseudo-arclength continuation with the composite
//! metric `<u, v> + c c'`. Near the `psi`-kernel region the branch is
//! parametrized by `t = t_psi` instead, and at `a = lambda2` the segment
//! `{t psi : -M/beta <= t <= M}` is inserted in closed form.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::linalg::{BandMatrix, BorderedSystem};
use crate::model::Problem;
use crate::solver::{newton_solve, residual_floor, Solution, SolverConfig};
use crate::spectrum;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationConfig {
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    /// The chart is entered only while `|c|` is below this fraction of the
    /// largest `|c|` seen so far on the branch.
    pub c_switch_factor: f64,
    /// The chart is entered only while the second eigenvalue of the
    /// linearization is within this fraction of `lambda3 - lambda2` of zero.
    pub chart_proximity: f64,
    pub max_points: usize,
    pub max_arclength: f64,
    /// `|c|` beyond which a trace stops.
    pub c_window: f64,
    pub max_folds: usize,
    pub corrector_iterations: usize,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            ds0: 0.05,
            ds_min: 1e-7,
            ds_max: 0.5,
            c_switch_factor: 0.25,
            chart_proximity: 0.1,
            max_points: 20_000,
            max_arclength: 1e4,
            c_window: 1e4,
            max_folds: 16,
            corrector_iterations: 12,
        }
    }
}

impl ContinuationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ds_min > 0.0
            && self.ds_min <= self.ds0
            && self.ds0 <= self.ds_max
            && self.c_switch_factor > 0.0
            && self.chart_proximity > 0.0
            && self.max_points > 2
            && self.max_arclength > 0.0
            && self.c_window > 0.0
            && self.corrector_iterations > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "continuation settings need 0 < ds_min <= ds0 <= ds_max and positive budgets".into(),
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MarkerKind {
    Start,
    Fold0,
    Transition12,
    LStart,
    LEnd,
}

impl MarkerKind {
    pub fn label(self) -> &'static str {
        match self {
            MarkerKind::Start => "start",
            MarkerKind::Fold0 => "fold0",
            MarkerKind::Transition12 => "trans12",
            MarkerKind::LStart => "Lstart",
            MarkerKind::LEnd => "Lend",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Marker {
    pub index: usize,
    pub kind: MarkerKind,
}

/// How a branch point was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parametrization {
    Arclength,
    Chart,
    Analytic,
    Refined,
}

#[derive(Debug, Clone)]
pub struct Branch {
    pub a: f64,
    pub points: Vec<Solution>,
    pub markers: Vec<Marker>,
    pub parametrization: Vec<Parametrization>,
    pub closed: bool,
    pub ds_max: f64,
}

impl Branch {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn marker_at(&self, index: usize) -> Option<MarkerKind> {
        self.markers.iter().find(|m| m.index == index).map(|m| m.kind)
    }

    pub fn indices_of(&self, kind: MarkerKind) -> Vec<usize> {
        self.markers
            .iter()
            .filter(|m| m.kind == kind)
            .map(|m| m.index)
            .collect()
    }

    pub fn fold_c_values(&self) -> Vec<f64> {
        self.indices_of(MarkerKind::Fold0)
            .iter()
            .map(|&i| self.points[i].c)
            .collect()
    }

    pub fn c_range(&self) -> (f64, f64) {
        self.points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.c), hi.max(p.c))
            })
    }

    /// Composite distance between consecutive points.
    pub fn step_lengths(&self, problem: &Problem) -> Vec<f64> {
        self.points
            .windows(2)
            .map(|w| composite_distance(problem, &w[0].u, w[0].c, &w[1].u, w[1].c))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Negative,
    Positive,
}

/// A refined degenerate point with its kernel direction.
#[derive(Debug, Clone)]
pub struct FoldPoint {
    pub solution: Solution,
    /// Unit kernel in the sense `<w, w> = <phi, phi>`, with `<w, phi> >= 0`.
    pub kernel: GridFunction,
    /// `c''(0) = -<f''(u) w^3> / <h, w>` along the branch.
    pub c_second_derivative: f64,
    /// Derivative of the critical eigenvalue along the branch,
    /// `<f''(u) w^3> / <w, w>`.
    pub mu_prime: f64,
}

impl FoldPoint {
    pub fn side(&self) -> Side {
        if self.solution.c < 0.0 {
            Side::Negative
        } else {
            Side::Positive
        }
    }

    pub fn a(&self) -> f64 {
        self.solution.a
    }

    pub fn c(&self) -> f64 {
        self.solution.c
    }
}

#[derive(Debug, Clone)]
pub struct FoldCurve {
    pub side: Side,
    /// Sorted by `a`.
    pub points: Vec<FoldPoint>,
}

pub fn composite_distance(problem: &Problem, u: &[f64], c: f64, v: &[f64], d: f64) -> f64 {
    let du: Vec<f64> = u.iter().zip(v).map(|(x, y)| x - y).collect();
    (problem.inner(&du, &du) + (c - d) * (c - d)).sqrt()
}

/// Unit tangent in the composite metric.
#[derive(Debug, Clone)]
struct Tangent {
    u: Vec<f64>,
    c: f64,
}

impl Tangent {
    fn t_component(&self, problem: &Problem) -> f64 {
        problem.t_psi(&self.u)
    }
}

/// Affine constraint `<nu, u> + nc c = value` (rectangle-rule product).
struct Hyperplane {
    nu: Vec<f64>,
    nc: f64,
    value: f64,
}

impl Hyperplane {
    fn eval(&self, problem: &Problem, u: &[f64], c: f64) -> f64 {
        problem.inner(&self.nu, u) + self.nc * c - self.value
    }
}

fn bordered_jacobian(problem: &Problem, a: f64, u: &[f64], nu: &[f64], nc: f64) -> BorderedSystem {
    let sp = problem.grid.spacing();
    let block = problem.jacobian(a, u).to_band();
    let row: Vec<f64> = nu.iter().map(|v| sp * v).collect();
    let col: Vec<f64> = problem.h.values().iter().map(|v| -v).collect();
    BorderedSystem::new(block, row, col, nc)
}

/// Tangent at `(u, c)` oriented so that it has positive overlap with `prev`.
fn tangent(problem: &Problem, a: f64, u: &[f64], prev: &Tangent) -> Result<Tangent> {
    let sys = bordered_jacobian(problem, a, u, &prev.u, prev.c);
    let zero = vec![0.0; u.len()];
    let (x, y) = sys.solve(&zero, 1.0)?;
    let norm = (problem.inner(&x, &x) + y * y).sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::SingularBorderedSystem);
    }
    Ok(Tangent {
        u: x.iter().map(|v| v / norm).collect(),
        c: y / norm,
    })
}

/// Newton on `R(u, c) = 0` together with one affine constraint.
fn correct(
    problem: &Problem,
    a: f64,
    u0: &[f64],
    c0: f64,
    plane: &Hyperplane,
    solver: &SolverConfig,
    max_iter: usize,
) -> Result<(GridFunction, f64, usize)> {
    let mut u = GridFunction(u0.to_vec());
    let mut c = c0;
    let mut first = None;
    for it in 0..=max_iter {
        let r = problem.residual(a, &u, c);
        let g = plane.eval(problem, &u, c);
        let rn = r.norm_inf();
        if !rn.is_finite() {
            break;
        }
        let scale = 1.0 + u.norm_inf() + c.abs();
        if rn <= solver.acceptance_tolerance(problem, &u) && g.abs() <= 1e-11 * scale {
            return Ok((u, c, it));
        }
        let r0 = *first.get_or_insert(rn);
        if it == max_iter || rn > 1e6 * r0.max(1.0) {
            break;
        }
        let sys = bordered_jacobian(problem, a, &u, &plane.nu, plane.nc);
        let f: Vec<f64> = r.iter().map(|v| -v).collect();
        let (du, dc) = sys.solve(&f, -g)?;
        u.axpy(1.0, &du);
        c += dc;
    }
    let rn = problem.residual(a, &u, c).norm_inf();
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: rn,
    })
}

/// Newton on the extended system `R = 0`, `J w = 0`, `<w, w> = <phi, phi>`,
/// with unknowns `(u, w)` interleaved in a five-diagonal block and `c` in
/// the border.
pub fn refine_degenerate(
    problem: &Problem,
    a: f64,
    u0: &[f64],
    c0: f64,
    w0: &[f64],
    solver: &SolverConfig,
) -> Result<(GridFunction, f64, GridFunction)> {
    let n = problem.n();
    let sp = problem.grid.spacing();
    let target = problem.phi_sq();
    let h = problem.h.values();
    let mut u = GridFunction(u0.to_vec());
    let mut w = GridFunction(w0.to_vec());
    let mut c = c0;
    let mut last = f64::INFINITY;
    for _ in 0..40 {
        let r = problem.residual(a, &u, c);
        let jac = problem.jacobian(a, &u);
        let jw = jac.apply(&w);
        let g = sp * w.iter().map(|v| v * v).sum::<f64>() - target;
        let rn = r.norm_inf();
        let jn = jw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(rn.is_finite() && jn.is_finite() && g.is_finite()) {
            break;
        }
        last = rn.max(jn);
        let kernel_tol = (10.0 * solver.newton_tol).max(residual_floor(problem, &w));
        if rn <= solver.acceptance_tolerance(problem, &u) && jn <= kernel_tol && g.abs() <= 1e-12 * target {
            return Ok((u, c, w));
        }
        let mut block = BandMatrix::zeros(2 * n, 2, 2);
        for i in 0..n {
            let (ru, rw) = (2 * i, 2 * i + 1);
            block.set(ru, 2 * i, jac.diagonal[i]);
            block.set(rw, 2 * i + 1, jac.diagonal[i]);
            block.set(rw, 2 * i, -problem.f.second_derivative(u[i]) * w[i]);
            if i + 1 < n {
                let o = jac.off_diagonal[i];
                block.set(ru, 2 * (i + 1), o);
                block.set(ru + 2, 2 * i, o);
                block.set(rw, 2 * (i + 1) + 1, o);
                block.set(rw + 2, 2 * i + 1, o);
            }
        }
        let mut row = vec![0.0; 2 * n];
        let mut col = vec![0.0; 2 * n];
        let mut f = vec![0.0; 2 * n];
        for i in 0..n {
            row[2 * i + 1] = 2.0 * sp * w[i];
            col[2 * i] = -h[i];
            f[2 * i] = -r[i];
            f[2 * i + 1] = -jw[i];
        }
        let (dz, dc) = BorderedSystem::new(block, row, col, 0.0).solve(&f, -g)?;
        for i in 0..n {
            u[i] += dz[2 * i];
            w[i] += dz[2 * i + 1];
        }
        c += dc;
    }
    Err(Error::FoldRefinement(format!(
        "extended newton stalled at residual {last:.3e}"
    )))
}

fn kernel_guess(problem: &Problem, sol: &Solution) -> Result<GridFunction> {
    let op = problem.jacobian(sol.a, &sol.u).negated();
    let mut w = spectrum::inverse_iteration(&op, sol.spectrum.nearest_zero_eigenvalue)?;
    let s = (problem.phi_sq() / problem.inner(&w, &w)).sqrt();
    w.iter_mut().for_each(|v| *v *= s);
    Ok(GridFunction(w))
}

fn orient_kernel(problem: &Problem, w: &mut GridFunction) {
    if problem.inner(w, &problem.phi) < 0.0 {
        w.scale(-1.0);
    }
}

fn fold_point(
    problem: &Problem,
    a: f64,
    u: GridFunction,
    c: f64,
    mut w: GridFunction,
    solver: &SolverConfig,
) -> Result<FoldPoint> {
    orient_kernel(problem, &mut w);
    let f2w3: Vec<f64> = u
        .iter()
        .zip(w.iter())
        .map(|(&ui, &wi)| problem.f.second_derivative(ui) * wi * wi * wi)
        .collect();
    let num = f2w3.iter().sum::<f64>() * problem.grid.spacing();
    let hw = problem.inner(problem.h.values(), &w);
    let solution = Solution::evaluate(problem, a, u, c, solver.tol_deg)?;
    Ok(FoldPoint {
        solution,
        kernel: w,
        c_second_derivative: -num / hw,
        mu_prime: num / problem.phi_sq(),
    })
}

/// Refines the degenerate point bracketed by two consecutive branch points.
pub fn locate_fold(problem: &Problem, left: &Solution, right: &Solution, solver: &SolverConfig) -> Result<FoldPoint> {
    let near = if left.spectrum.nearest_zero_eigenvalue.abs() <= right.spectrum.nearest_zero_eigenvalue.abs() {
        left
    } else {
        right
    };
    let w0 = kernel_guess(problem, near)?;
    let (u, c, w) = refine_degenerate(problem, near.a, &near.u, near.c, &w0, solver)?;
    let seg = composite_distance(problem, &left.u, left.c, &right.u, right.c);
    let off = composite_distance(problem, &near.u, near.c, &u, c);
    if off > 4.0 * seg + 1e-6 {
        return Err(Error::FoldRefinement(format!(
            "refined point drifted {off:.3e} from a bracket of length {seg:.3e}"
        )));
    }
    fold_point(problem, near.a, u, c, w, solver)
}

/// Solution on the positive stable branch at `c = 0`, reached by natural
/// continuation in `a` from just above `lambda1`.
pub fn positive_branch_u_dagger(problem: &Problem, a: f64, solver: &SolverConfig) -> Result<Solution> {
    if !(a > problem.lambda1) {
        return Err(Error::InvalidConfig(format!(
            "positive branch needs a > lambda1 = {}",
            problem.lambda1
        )));
    }
    let gap = problem.gap();
    let eps0 = (0.01 * gap).min(a - problem.lambda1);
    let mut a_cur = problem.lambda1 + eps0;
    let guess = problem.phi.scaled(problem.threshold() + 0.5);
    let mut cur = newton_solve(problem, a_cur, 0.0, &guess, solver)?;
    let mut prev: Option<Solution> = None;
    let mut da = (0.05 * gap).min(a - a_cur);
    while a_cur < a {
        let a_next = (a_cur + da).min(a);
        let mut guess = cur.u.clone();
        if let Some(p) = &prev {
            let s = (a_next - a_cur) / (a_cur - p.a);
            guess.axpy(s, &cur.u.sub(&p.u));
        }
        match newton_solve(problem, a_next, 0.0, &guess, solver) {
            Ok(s) if s.morse_index() == 0 && s.t_phi > 0.0 => {
                prev = Some(std::mem::replace(&mut cur, s));
                a_cur = a_next;
                da = (da * 1.5).min(0.2 * gap);
            }
            _ => {
                da *= 0.5;
                if da < 1e-10 * gap {
                    return Err(Error::Assembly(format!("lost the positive branch near a = {a_cur}")));
                }
            }
        }
    }
    if cur.morse_index() != 0 || cur.u.min() <= 0.0 {
        return Err(Error::Assembly(
            "positive branch start is not a positive stable solution".into(),
        ));
    }
    Ok(cur)
}

struct Tracer<'a> {
    problem: &'a Problem,
    a: f64,
    cfg: &'a ContinuationConfig,
    solver: &'a SolverConfig,
    branch: Branch,
    tau: Tangent,
    ds: f64,
    arclength: f64,
    c_scale: f64,
    chart_used: bool,
}

enum Step {
    Accepted(Solution, Tangent),
}

impl<'a> Tracer<'a> {
    fn new(
        problem: &'a Problem,
        cfg: &'a ContinuationConfig,
        solver: &'a SolverConfig,
        start: Solution,
        tau: Tangent,
    ) -> Self {
        let a = start.a;
        let mut t = Self {
            problem,
            a,
            cfg,
            solver,
            branch: Branch {
                a,
                points: Vec::new(),
                markers: Vec::new(),
                parametrization: Vec::new(),
                closed: false,
                ds_max: cfg.ds_max,
            },
            tau,
            ds: cfg.ds0,
            arclength: 0.0,
            c_scale: 0.0,
            chart_used: false,
        };
        t.push(start, Parametrization::Arclength, Some(MarkerKind::Start));
        t
    }

    fn last(&self) -> &Solution {
        self.branch.points.last().expect("branch has a start point")
    }

    fn push(&mut self, sol: Solution, how: Parametrization, marker: Option<MarkerKind>) {
        if let Some(prev) = self.branch.points.last() {
            self.arclength += composite_distance(self.problem, &prev.u, prev.c, &sol.u, sol.c);
        }
        self.c_scale = self.c_scale.max(sol.c.abs());
        let index = self.branch.points.len();
        if let Some(kind) = marker {
            self.branch.markers.push(Marker { index, kind });
        }
        self.branch.points.push(sol);
        self.branch.parametrization.push(how);
    }

    fn fold_count(&self) -> usize {
        self.branch.indices_of(MarkerKind::Fold0).len()
    }

    /// Appends `sol`, first inserting a refined point if the Morse index
    /// changed across the step.
    fn accept(&mut self, sol: Solution, how: Parametrization) -> Result<()> {
        let prev = self.last().clone();
        let (i0, i1) = (prev.morse_index(), sol.morse_index());
        if i0 != i1 {
            let kind = if i0.min(i1) == 0 {
                MarkerKind::Fold0
            } else {
                MarkerKind::Transition12
            };
            match locate_fold(self.problem, &prev, &sol, self.solver) {
                Ok(fp) => self.push(fp.solution, Parametrization::Refined, Some(kind)),
                Err(e) if kind == MarkerKind::Fold0 => return Err(e),
                Err(_) => {
                    // Mark whichever endpoint is closer to degenerate.
                    if prev.spectrum.nearest_zero_eigenvalue.abs() <= sol.spectrum.nearest_zero_eigenvalue.abs() {
                        self.mark_last(kind);
                    } else {
                        self.push(sol, how, Some(kind));
                        return Ok(());
                    }
                }
            }
        }
        self.push(sol, how, None);
        Ok(())
    }

    fn arclength_step(&mut self) -> Result<Step> {
        let problem = self.problem;
        loop {
            if self.ds < self.cfg.ds_min {
                let last = self.last();
                return Err(Error::StepUnderflow {
                    c: last.c,
                    t_phi: last.t_phi,
                });
            }
            let last = self.last();
            let mut pu = last.u.clone();
            pu.axpy(self.ds, &self.tau.u);
            let pc = last.c + self.ds * self.tau.c;
            let plane = Hyperplane {
                value: problem.inner(&self.tau.u, &pu) + self.tau.c * pc,
                nu: self.tau.u.clone(),
                nc: self.tau.c,
            };
            let attempt = correct(
                problem,
                self.a,
                &pu,
                pc,
                &plane,
                self.solver,
                self.cfg.corrector_iterations,
            )
            .and_then(|(u, c, it)| {
                let sol = Solution::evaluate(problem, self.a, u, c, self.solver.tol_deg)?;
                let tau = tangent(problem, self.a, &sol.u, &self.tau)?;
                Ok((sol, tau, it))
            });
            let Ok((sol, tau, it)) = attempt else {
                self.ds *= 0.5;
                continue;
            };
            let dist = composite_distance(problem, &last.u, last.c, &sol.u, sol.c);
            let turn = problem.inner(&tau.u, &self.tau.u) + tau.c * self.tau.c;
            let jump = sol.morse_index().abs_diff(last.morse_index());
            if dist > self.cfg.ds_max || dist > 2.0 * self.ds || turn < 0.5 || jump > 1 {
                self.ds *= 0.5;
                continue;
            }
            if it <= 3 {
                self.ds = (self.ds * 1.3).min(self.cfg.ds_max / 1.1);
            }
            return Ok(Step::Accepted(sol, tau));
        }
    }

    fn window(&self) -> (f64, f64) {
        let m = self.problem.threshold();
        let eps = 0.25 * m.max(0.1);
        (-m / self.problem.beta - eps, m + eps)
    }

    /// Chart conditions other than the `t` window.
    fn chart_candidate(&self, p: &Solution) -> bool {
        let prox = self.cfg.chart_proximity * (self.problem.lambda3 - self.problem.lambda2);
        !self.chart_used
            && p.morse_index() >= 1
            && p.c.abs() < self.cfg.c_switch_factor * self.c_scale
            && p.spectrum.second_eigenvalue.abs() <= prox
    }

    fn chart_admissible(&self) -> bool {
        let p = self.last();
        let (lo, hi) = self.window();
        self.chart_candidate(p) && p.t_psi > lo && p.t_psi < hi
    }

    /// A step from the last point to `sol` that skips the whole window.
    fn jumps_window(&self, sol: &Solution) -> bool {
        let last = self.last();
        let (lo, hi) = self.window();
        let skipped = (last.t_psi <= lo && sol.t_psi >= hi) || (last.t_psi >= hi && sol.t_psi <= lo);
        skipped && (self.chart_candidate(last) || self.chart_candidate(sol))
    }

    fn at_lambda2(&self) -> bool {
        (self.a - self.problem.lambda2).abs() <= 1e-12 * self.problem.lambda2
    }

    /// Solves at `t_psi = t` from a predicted point.
    fn chart_solve(&self, t: f64, u0: &[f64], c0: f64) -> Result<(Solution, usize)> {
        let problem = self.problem;
        let plane = Hyperplane {
            nu: problem.psi.scaled(1.0 / problem.psi_sq()).into_vec(),
            nc: 0.0,
            value: t,
        };
        let (u, c, it) = correct(
            problem,
            self.a,
            u0,
            c0,
            &plane,
            self.solver,
            self.cfg.corrector_iterations,
        )?;
        Ok((Solution::evaluate(problem, self.a, u, c, self.solver.tol_deg)?, it))
    }

    fn push_segment_l(&mut self, from: f64, to: f64) -> Result<()> {
        let problem = self.problem;
        let len = (to - from).abs();
        let step = 0.9 * self.cfg.ds_max / problem.psi_sq().sqrt();
        let pieces = if len == 0.0 {
            0
        } else {
            ((len / step).ceil() as usize).max(8)
        };
        for k in 0..=pieces {
            let t = if k == pieces {
                to
            } else {
                from + (to - from) * k as f64 / pieces as f64
            };
            let sol = Solution::evaluate(problem, self.a, problem.psi.scaled(t), 0.0, self.solver.tol_deg)?;
            if sol.residual_norm > self.solver.acceptance_tolerance(problem, &sol.u) {
                return Err(Error::Assembly(format!(
                    "closed-form segment point t = {t} has residual {:.3e}",
                    sol.residual_norm
                )));
            }
            if k == 0 {
                self.accept(sol, Parametrization::Analytic)?;
                self.mark_last(MarkerKind::LStart);
            } else {
                self.push(sol, Parametrization::Analytic, None);
            }
            if k == pieces {
                self.mark_last(MarkerKind::LEnd);
            }
        }
        Ok(())
    }

    fn mark_last(&mut self, kind: MarkerKind) {
        let index = self.branch.points.len() - 1;
        self.branch.markers.push(Marker { index, kind });
    }

    /// Walks through the chart window in `t`, then hands back to arclength.
    fn chart_segment(&mut self) -> Result<()> {
        let problem = self.problem;
        self.chart_used = true;
        let (lo, hi) = self.window();
        let dir = if self.tau.t_component(problem) < 0.0 { -1.0 } else { 1.0 };
        let m = problem.threshold();
        let (l_lo, l_hi) = (-m / problem.beta, m);
        let mut l_done = !self.at_lambda2();
        let dt_max = 0.9 * self.cfg.ds_max / problem.psi_sq().sqrt();
        let mut dt = dt_max.min((hi - lo) / 16.0);
        // Chart slope (du/dt, dc/dt) from the current tangent.
        let tt = self.tau.t_component(problem);
        let mut slope_u: Vec<f64> = self.tau.u.iter().map(|v| v / tt).collect();
        let mut slope_c = self.tau.c / tt;
        if !tt.is_finite() || tt.abs() < 1e-12 {
            slope_u = problem.psi.to_vec();
            slope_c = 0.0;
        }
        loop {
            let last = self.last().clone();
            let t = last.t_psi;
            if !l_done {
                let (enter, exit) = if dir > 0.0 { (l_lo, l_hi) } else { (l_hi, l_lo) };
                if (enter - t) * dir <= dir * dir * dt {
                    self.push_segment_l(enter, exit)?;
                    l_done = true;
                    slope_u = problem.psi.scaled(1.0).into_vec();
                    slope_c = 0.0;
                    continue;
                }
            }
            let edge = if dir > 0.0 { hi } else { lo };
            if (edge - t) * dir <= 1e-12 {
                break;
            }
            let t_next = if (edge - t) * dir <= dt { edge } else { t + dir * dt };
            let mut u0 = last.u.clone();
            u0.axpy(t_next - t, &slope_u);
            let c0 = last.c + (t_next - t) * slope_c;
            let ok = self.chart_solve(t_next, &u0, c0).ok().and_then(|(sol, it)| {
                let dist = composite_distance(problem, &last.u, last.c, &sol.u, sol.c);
                let jump = sol.morse_index().abs_diff(last.morse_index());
                (dist <= self.cfg.ds_max && jump <= 1).then_some((sol, it))
            });
            match ok {
                Some((sol, it)) => {
                    let ht = t_next - t;
                    slope_u = sol.u.iter().zip(last.u.iter()).map(|(a, b)| (a - b) / ht).collect();
                    slope_c = (sol.c - last.c) / ht;
                    self.accept(sol, Parametrization::Chart)?;
                    if it <= 3 {
                        dt = (dt * 1.3).min(dt_max);
                    }
                }
                None => {
                    dt *= 0.5;
                    if dt < 1e-6 * dt_max {
                        break;
                    }
                }
            }
        }
        let prev = Tangent {
            u: problem.psi.scaled(dir / problem.psi_sq()).into_vec(),
            c: 0.0,
        };
        let last = self.last().clone();
        self.tau = tangent(problem, self.a, &last.u, &prev)?;
        self.ds = self.ds.max(self.cfg.ds0).min(self.cfg.ds_max / 1.1);
        Ok(())
    }

    fn over_budget(&self) -> Option<Error> {
        if self.branch.points.len() >= self.cfg.max_points {
            return Some(Error::Assembly(format!(
                "point budget {} exhausted",
                self.cfg.max_points
            )));
        }
        if self.arclength > self.cfg.max_arclength {
            return Some(Error::Assembly(format!(
                "arclength budget {} exhausted",
                self.cfg.max_arclength
            )));
        }
        None
    }
}

/// Signed offset of `(u, c)` from the hyperplane through the start point
/// orthogonal to the start tangent.
fn start_offset(problem: &Problem, start: &Solution, tau0: &Tangent, u: &[f64], c: f64) -> f64 {
    let du: Vec<f64> = u.iter().zip(start.u.iter()).map(|(a, b)| a - b).collect();
    problem.inner(&tau0.u, &du) + tau0.c * (c - start.c)
}

fn initial_tangent(problem: &Problem, start: &Solution, direction: f64) -> Result<Tangent> {
    let prev = Tangent {
        u: vec![0.0; problem.n()],
        c: direction.signum(),
    };
    tangent(problem, start.a, &start.u, &prev)
}

/// Pseudo-arclength continuation from `start`, initially moving with
/// `sign(dc) = direction`. Stops on closure, `|c| > c_window`, the fold
/// budget or the arclength budget.
pub fn continue_in_c(
    problem: &Problem,
    start: Solution,
    direction: f64,
    cfg: &ContinuationConfig,
    solver: &SolverConfig,
) -> Result<Branch> {
    cfg.validate()?;
    let tau0 = initial_tangent(problem, &start, direction)?;
    let mut tr = Tracer::new(problem, cfg, solver, start.clone(), tau0.clone());
    loop {
        if tr.branch.points.len() >= cfg.max_points || tr.arclength > cfg.max_arclength {
            break;
        }
        let Step::Accepted(sol, tau) = tr.arclength_step()?;
        if closes(problem, &tr, &start, &tau0, &sol) {
            tr.accept(start.clone(), Parametrization::Arclength)?;
            tr.branch.closed = true;
            break;
        }
        let out = sol.c.abs() > cfg.c_window;
        tr.accept(sol, Parametrization::Arclength)?;
        tr.tau = tau;
        if out || tr.fold_count() >= cfg.max_folds {
            break;
        }
    }
    Ok(tr.branch)
}

fn closes(problem: &Problem, tr: &Tracer, start: &Solution, tau0: &Tangent, sol: &Solution) -> bool {
    if tr.branch.points.len() < 4 || tr.arclength < 4.0 * tr.cfg.ds_max.min(1.0) {
        return false;
    }
    let prev = tr.last();
    let s0 = start_offset(problem, start, tau0, &prev.u, prev.c);
    let s1 = start_offset(problem, start, tau0, &sol.u, sol.c);
    let near = composite_distance(problem, &sol.u, sol.c, &start.u, start.c) <= 2.0 * tr.cfg.ds_max;
    s0 < 0.0 && s1 >= 0.0 && near
}

/// The bounded index-0/1/2 branch through the positive stable solution at
/// `c = 0`, traversed first in the direction of decreasing `c` and closed
/// back at its start.
pub fn trace_branch(problem: &Problem, a: f64, cfg: &ContinuationConfig, solver: &SolverConfig) -> Result<Branch> {
    cfg.validate()?;
    solver.validate()?;
    let start = positive_branch_u_dagger(problem, a, solver)?;
    let tau0 = initial_tangent(problem, &start, -1.0)?;
    let mut tr = Tracer::new(problem, cfg, solver, start.clone(), tau0.clone());
    loop {
        if let Some(e) = tr.over_budget() {
            return Err(e);
        }
        if tr.chart_admissible() {
            tr.chart_segment()?;
            continue;
        }
        let Step::Accepted(sol, tau) = tr.arclength_step()?;
        if tr.jumps_window(&sol) && tr.ds > cfg.ds_min {
            tr.ds *= 0.5;
            continue;
        }
        if closes(problem, &tr, &start, &tau0, &sol) {
            tr.accept(start.clone(), Parametrization::Arclength)?;
            tr.branch.closed = true;
            return Ok(tr.branch);
        }
        if sol.c.abs() > cfg.c_window {
            return Err(Error::Assembly(format!(
                "branch left the window |c| <= {}",
                cfg.c_window
            )));
        }
        tr.accept(sol, Parametrization::Arclength)?;
        tr.tau = tau;
    }
}

/// Number of branch crossings of the level `c`.
///
/// Segments are half-open: a vertex exactly at level `c` counts as lying
/// above it, so a closed polygon counts each transversal crossing once.
pub fn count_solutions_at(branch: &Branch, c: f64) -> Result<usize> {
    for cf in branch.fold_c_values() {
        if (cf - c).abs() <= 1e-9 {
            return Err(Error::AmbiguousCount { c });
        }
    }
    Ok(crossing_segments(branch, c).len())
}

fn crossing_segments(branch: &Branch, c: f64) -> Vec<usize> {
    branch
        .points
        .windows(2)
        .enumerate()
        .filter(|(_, w)| (w[0].c >= c) != (w[1].c >= c))
        .map(|(i, _)| i)
        .collect()
}

/// Solutions at level `c`, one per branch crossing, each refined by Newton
/// at fixed `c` from the interpolated crossing.
pub fn solutions_at(problem: &Problem, branch: &Branch, c: f64, solver: &SolverConfig) -> Result<Vec<Solution>> {
    let mut out: Vec<Solution> = Vec::new();
    for i in crossing_segments(branch, c) {
        let (p, q) = (&branch.points[i], &branch.points[i + 1]);
        let s = (c - p.c) / (q.c - p.c);
        let mut guess = p.u.scaled(1.0 - s);
        guess.axpy(s, &q.u);
        let sol = newton_solve(problem, branch.a, c, &guess, solver)?;
        if out.iter().all(|o| o.u.sub(&sol.u).norm_inf() > 1e-7) {
            out.push(sol);
        }
    }
    Ok(out)
}

/// Solves on the `t_psi` chart at a single `t`.
pub fn chart_point(
    problem: &Problem,
    a: f64,
    t: f64,
    guess: &[f64],
    c0: f64,
    solver: &SolverConfig,
) -> Result<Solution> {
    let plane = Hyperplane {
        nu: problem.psi.scaled(1.0 / problem.psi_sq()).into_vec(),
        nc: 0.0,
        value: t,
    };
    let (u, c, _) = correct(problem, a, guess, c0, &plane, solver, 30)?;
    Solution::evaluate(problem, a, u, c, solver.tol_deg)
}

/// Central difference `(c(ds) - c(-ds)) / (2 ds)` of the chart through
/// `u = 0`, for `a > lambda2`.
pub fn chart_derivative_at_zero(problem: &Problem, a: f64, ds: f64, solver: &SolverConfig) -> Result<f64> {
    if !(a > problem.lambda2) {
        return Err(Error::ChartUnavailable(format!(
            "needs a > lambda2 = {}",
            problem.lambda2
        )));
    }
    if !(ds > 0.0) {
        return Err(Error::InvalidConfig("ds must be positive".into()));
    }
    let slope = -(a - problem.lambda2);
    let plus = chart_point(problem, a, ds, &problem.psi.scaled(ds), slope * ds, solver)?;
    let minus = chart_point(problem, a, -ds, &problem.psi.scaled(-ds), -slope * ds, solver)?;
    Ok((plus.c - minus.c) / (2.0 * ds))
}

/// Tracks a fold in `a` over `a_grid` (any order; the seed need not lie on
/// the grid). Returns the curve sorted by `a`.
pub fn track_folds_in_a(
    problem: &Problem,
    seed: &FoldPoint,
    a_grid: &[f64],
    solver: &SolverConfig,
) -> Result<FoldCurve> {
    let mut grid: Vec<f64> = a_grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let a0 = seed.a();
    let up: Vec<f64> = grid.iter().copied().filter(|&a| a >= a0).collect();
    let down: Vec<f64> = grid.iter().rev().copied().filter(|&a| a < a0).collect();
    let mut points = Vec::new();
    let mut lower = sweep_fold(problem, seed, &down, solver)?;
    lower.reverse();
    points.extend(lower);
    points.extend(sweep_fold(problem, seed, &up, solver)?);
    Ok(FoldCurve {
        side: seed.side(),
        points,
    })
}

fn sweep_fold(problem: &Problem, seed: &FoldPoint, targets: &[f64], solver: &SolverConfig) -> Result<Vec<FoldPoint>> {
    let mut out = Vec::new();
    // (a, u, c, w) history for secant prediction.
    let mut cur = (seed.a(), seed.solution.u.clone(), seed.c(), seed.kernel.clone());
    let mut prev: Option<(f64, GridFunction, f64, GridFunction)> = None;
    for &target in targets {
        let mut stack = vec![target];
        let mut depth = 0usize;
        while let Some(&a_next) = stack.last() {
            let predict = |x: &GridFunction, px: Option<&GridFunction>, s: f64| {
                let mut g = x.clone();
                if let Some(p) = px {
                    g.axpy(s, &x.sub(p));
                }
                g
            };
            let s = prev.as_ref().map_or(0.0, |p| (a_next - cur.0) / (cur.0 - p.0));
            let u0 = predict(&cur.1, prev.as_ref().map(|p| &p.1), s);
            let w0 = predict(&cur.3, prev.as_ref().map(|p| &p.3), s);
            let c0 = cur.2 + prev.as_ref().map_or(0.0, |p| s * (cur.2 - p.2));
            match refine_degenerate(problem, a_next, &u0, c0, &w0, solver) {
                Ok((u, c, w)) if (c < 0.0) == (seed.c() < 0.0) => {
                    prev = Some(std::mem::replace(&mut cur, (a_next, u, c, w)));
                    stack.pop();
                    depth = depth.saturating_sub(1);
                }
                _ => {
                    depth += 1;
                    if depth > 8 {
                        return Err(Error::FoldLost { last_a: cur.0 });
                    }
                    let mid = 0.5 * (cur.0 + a_next);
                    stack.push(mid);
                }
            }
        }
        out.push(fold_point(problem, cur.0, cur.1.clone(), cur.2, cur.3.clone(), solver)?);
    }
    Ok(out)
}

/// Folds of index 0 on a traced branch, refined.
pub fn branch_folds(problem: &Problem, branch: &Branch, solver: &SolverConfig) -> Result<Vec<FoldPoint>> {
    branch
        .indices_of(MarkerKind::Fold0)
        .into_iter()
        .map(|i| {
            let p = &branch.points[i];
            let w0 = kernel_guess(problem, p)?;
            let (u, c, w) = refine_degenerate(problem, p.a, &p.u, p.c, &w0, solver)?;
            fold_point(problem, p.a, u, c, w, solver)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Problem, ContinuationConfig, SolverConfig) {
        (
            Problem::standard(199, 1.0).unwrap(),
            ContinuationConfig::default(),
            SolverConfig::default(),
        )
    }

    #[test]
    fn u_dagger_is_positive_and_stable() {
        let (p, _, s) = setup();
        let a = p.lambda1 + 0.5 * p.gap();
        let u = positive_branch_u_dagger(&p, a, &s).unwrap();
        assert_eq!(u.morse_index(), 0);
        assert!(u.u.min() > 0.0);
        assert!(u.residual_norm <= 1e-10);
        assert!(positive_branch_u_dagger(&p, p.lambda1 - 1.0, &s).is_err());
    }

    #[test]
    fn branch_between_first_two_eigenvalues() {
        let (p, cfg, s) = setup();
        let a = p.lambda1 + 0.5 * p.gap();
        let b = trace_branch(&p, a, &cfg, &s).unwrap();
        assert!(b.closed);
        let folds = b.indices_of(MarkerKind::Fold0);
        assert_eq!(folds.len(), 2, "{:?}", b.markers);
        assert_eq!(count_solutions_at(&b, 0.0).unwrap(), 2);
        for st in b.step_lengths(&p) {
            assert!(st <= cfg.ds_max * (1.0 + 1e-9));
        }
        let cs = b.fold_c_values();
        assert!(cs.iter().any(|&c| c < 0.0) && cs.iter().any(|&c| c > 0.0));
        assert_eq!(count_solutions_at(&b, 2.0 * cs[0].abs().max(cs[1].abs())).unwrap(), 0);
    }

    #[test]
    fn extended_system_residuals() {
        let (p, cfg, s) = setup();
        let a = p.lambda1 + 0.3 * p.gap();
        let b = trace_branch(&p, a, &cfg, &s).unwrap();
        for fp in branch_folds(&p, &b, &s).unwrap() {
            let jw = p.jacobian(a, &fp.solution.u).apply(&fp.kernel);
            assert!(jw.iter().all(|v| v.abs() <= 1e-7));
            assert!(fp.c_second_derivative != 0.0);
            assert!(fp.solution.degenerate());
            assert_eq!(fp.solution.morse_index(), 0);
            assert!(fp.kernel.iter().all(|&v| v > 0.0));
            // Maximum of c on the positive side, minimum on the negative.
            assert_eq!(fp.c_second_derivative < 0.0, fp.c() > 0.0);
        }
    }

    #[test]
    fn chart_slope_matches_linear_regime() {
        let (p, _, s) = setup();
        let delta = 0.05 * (p.lambda3 - p.lambda2);
        let d = chart_derivative_at_zero(&p, p.lambda2 + delta, 1e-3, &s).unwrap();
        assert!((d + delta).abs() <= 1e-8, "{d}");
        assert!(matches!(
            chart_derivative_at_zero(&p, p.lambda2, 1e-3, &s),
            Err(Error::ChartUnavailable(_))
        ));
    }

    #[test]
    fn count_rejects_fold_levels() {
        let (p, cfg, s) = setup();
        let a = p.lambda1 + 0.5 * p.gap();
        let b = trace_branch(&p, a, &cfg, &s).unwrap();
        let c = b.fold_c_values()[0];
        assert!(matches!(count_solutions_at(&b, c), Err(Error::AmbiguousCount { .. })));
    }
}
