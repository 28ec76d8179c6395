//! Property checks over the whole pipeline, collected into a report.
//!
//! Each check returns measured values next to the tolerances it was held
//! to; failures are recorded rather than raised.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::continuation::{
    self, branch_folds, chart_derivative_at_zero, count_solutions_at, trace_branch, track_folds_in_a, Branch,
    ContinuationConfig, FoldCurve, FoldPoint, MarkerKind, Parametrization, Side,
};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::lambda1::LambdaSet;
use crate::model::{HarvestTerm, Problem};
use crate::solver::{linear_response, newton_solve, Solution, SolverConfig};
use crate::spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Smoke,
    Full,
}

impl std::str::FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoke" => Ok(Level::Smoke),
            "full" => Ok(Level::Full),
            other => Err(Error::InvalidConfig(format!("unknown level {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub level: Level,
    pub seed: u64,
    pub solver: SolverConfig,
    pub continuation: ContinuationConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            level: Level::Full,
            seed: 7,
            solver: SolverConfig::default(),
            continuation: ContinuationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Pass,
    Fail,
    Flagged,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Flagged => "flagged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    pub name: String,
    pub value: f64,
    /// Bound the value was compared against, if any.
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: &'static str,
    pub status: Status,
    pub measures: Vec<Measure>,
    pub notes: Vec<String>,
    /// Accepted solutions touched by the check and their largest
    /// `phi`-identity defect.
    pub solutions_seen: usize,
    pub max_identity_defect: f64,
}

impl Check {
    pub fn new(id: &'static str) -> Self {
        Self {
            id,
            status: Status::Pass,
            measures: Vec::new(),
            notes: Vec::new(),
            solutions_seen: 0,
            max_identity_defect: 0.0,
        }
    }

    fn failed(id: &'static str, err: &Error) -> Self {
        let mut c = Self::new(id);
        c.fail(format!("error: {err}"));
        c
    }

    fn measure(&mut self, name: impl Into<String>, value: f64, tolerance: Option<f64>) {
        self.measures.push(Measure {
            name: name.into(),
            value,
            tolerance,
        });
    }

    fn fail(&mut self, note: impl Into<String>) {
        self.status = Status::Fail;
        self.notes.push(note.into());
    }

    /// Records a condition; failing conditions fail the check.
    fn require(&mut self, ok: bool, note: impl Into<String>) {
        if !ok {
            self.fail(note);
        }
    }

    /// `value <= tol`, recorded.
    fn at_most(&mut self, name: &str, value: f64, tol: f64) {
        self.measure(name, value, Some(tol));
        if !(value <= tol) {
            self.fail(format!("{name} = {value:.3e} exceeds {tol:.3e}"));
        }
    }

    fn see(&mut self, problem: &Problem, sol: &Solution) {
        self.solutions_seen += 1;
        let d = sol.phi_identity_defect(problem).abs();
        if !(d <= self.max_identity_defect) {
            self.max_identity_defect = d;
        }
    }

    fn see_all<'a>(&mut self, problem: &Problem, sols: impl IntoIterator<Item = &'a Solution>) {
        for s in sols {
            self.see(problem, s);
        }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub n: usize,
    pub threshold: f64,
    pub level: Level,
    pub seed: u64,
    pub config_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
    pub environment: Environment,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn status_vector(&self) -> Vec<(&'static str, Status)> {
        self.checks.iter().map(|c| (c.id, c.status)).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.id == id)
    }
}

fn config_hash(problem: &Problem, cfg: &SuiteConfig) -> u64 {
    let mut h = DefaultHasher::new();
    format!(
        "{}|{}|{}|{}|{:?}|{:?}|{:?}|{:?}",
        problem.n(),
        problem.threshold(),
        problem.f.kappa(),
        problem.f.power(),
        problem.h.modes(),
        cfg.solver,
        cfg.continuation,
        cfg.level
    )
    .hash(&mut h);
    cfg.seed.hash(&mut h);
    h.finish()
}

/// Relative positions `(a - lambda1) / (lambda2 - lambda1)` of the loop runs.
pub fn loop_positions(level: Level) -> Vec<f64> {
    match level {
        Level::Smoke => vec![0.5],
        Level::Full => vec![0.1, 0.3, 0.5, 0.7, 0.9],
    }
}

/// Runs every check in a fixed order.
pub fn run_suite(problem: &Problem, cfg: &SuiteConfig) -> VerificationReport {
    let environment = Environment {
        n: problem.n(),
        threshold: problem.threshold(),
        level: cfg.level,
        seed: cfg.seed,
        config_hash: config_hash(problem, cfg),
    };
    let above = find_delta(problem, &cfg.continuation, &cfg.solver);
    let delta = above.as_ref().map(|(d, _)| *d).ok();
    let tasks: Vec<Box<dyn Fn() -> Vec<Check> + Sync + Send + '_>> = vec![
        Box::new(|| vec![check_spectrum(problem)]),
        Box::new(|| vec![check_hypotheses(problem)]),
        Box::new(|| vec![check_lambda_set(problem, cfg.seed)]),
        Box::new(|| vec![check_uniqueness_below(problem, &cfg.solver, cfg.seed, 20)]),
        Box::new(|| vec![check_convergence_below(problem, &cfg.solver)]),
        Box::new(|| {
            let (loops, folds) = check_loops(problem, &loop_positions(cfg.level), &cfg.continuation, &cfg.solver);
            vec![loops, folds]
        }),
        Box::new(move || {
            vec![check_fold_curves(
                problem,
                delta,
                cfg.level,
                &cfg.continuation,
                &cfg.solver,
            )]
        }),
        Box::new(|| {
            vec![if problem.threshold() > 0.0 {
                check_limit_profiles(problem, &cfg.continuation, &cfg.solver)
            } else {
                check_collapse(problem, &cfg.continuation, &cfg.solver)
            }]
        }),
        Box::new(|| vec![check_segment_at_lambda2(problem, &cfg.continuation, &cfg.solver)]),
        Box::new(|| {
            vec![match &above {
                Ok((d, b)) => check_structure_above_lambda2(problem, *d, b, &cfg.solver),
                Err(e) => Check::failed("structure_above_lambda2", e),
            }]
        }),
        Box::new(|| {
            vec![match &above {
                Ok((_, b)) => check_two_nodal(problem, b, &cfg.solver),
                Err(e) => {
                    let mut c = Check::new("stable_two_nodal");
                    c.status = Status::Flagged;
                    c.notes.push(format!("no branch to scan: {e}"));
                    c
                }
            }]
        }),
    ];
    let mut checks: Vec<Check> = tasks
        .par_iter()
        .map(|t| t())
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    checks.push(identity_summary(&checks, &cfg.solver));
    VerificationReport { checks, environment }
}

/// Pools the identity defects of every check into one hard gate.
pub fn identity_summary(checks: &[Check], solver: &SolverConfig) -> Check {
    let mut c = Check::new("phi_identity");
    let seen: usize = checks.iter().map(|c| c.solutions_seen).sum();
    let worst = checks.iter().map(|c| c.max_identity_defect).fold(0.0, f64::max);
    c.measure("solutions", seen as f64, None);
    c.at_most("max_defect", worst, 10.0 * solver.newton_tol);
    c
}

pub fn check_spectrum(problem: &Problem) -> Check {
    let mut c = Check::new("grid_spectrum");
    let op = problem.grid.laplacian().negated();
    for k in 1..=2usize {
        let computed = spectrum::kth_eigenvalue(&op, k - 1);
        let exact = problem.grid.eigenvalue(k);
        c.at_most(&format!("lambda{k}_rel_err"), ((computed - exact) / exact).abs(), 1e-12);
    }
    let beta = -problem.psi.min();
    c.measure("beta", beta, Some(1.0));
    c.require(beta == 1.0, "beta differs from 1");
    let r = problem.grid.apply_laplacian(&problem.phi);
    let defect = r
        .iter()
        .zip(problem.phi.iter())
        .fold(0.0f64, |m, (a, b)| m.max((a + problem.lambda1 * b).abs()));
    c.at_most("eigen_identity", defect, 1e-10);
    c
}

pub fn check_hypotheses(problem: &Problem) -> Check {
    let mut c = Check::new("hypotheses");
    for item in problem.check_hypotheses().items {
        c.measure(item.id, if item.passed { 1.0 } else { 0.0 }, None);
        c.require(item.passed, format!("{}: {}", item.id, item.detail));
    }
    c
}

/// Geometry of the solution set at `a = lambda1`.
pub fn check_lambda_set(problem: &Problem, seed: u64) -> Check {
    let mut c = Check::new("lambda1_geometry");
    let set = match LambdaSet::build(problem) {
        Ok(s) => s,
        Err(e) => return Check::failed("lambda1_geometry", &e),
    };
    let m = problem.threshold();
    let op = problem.grid.laplacian().shifted(-problem.lambda1);
    let g_res = op
        .apply(&set.g)
        .iter()
        .zip(problem.h.values().iter())
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    c.at_most("resolvent_residual", g_res, 1e-11);
    c.at_most(
        "resolvent_phi_component",
        problem.inner(&set.g, &problem.phi).abs(),
        1e-13,
    );
    c.require(set.g.max() > 0.0 && set.g.min() < 0.0, "g does not change sign");
    c.measure("T", set.t_max, Some(m));
    c.require(set.t_max.is_finite() && set.t_max >= m - 1e-10, "T < M");
    c.measure("c_star_minus", set.c_star_minus, None);
    c.measure("c_star_plus", set.c_star_plus, None);
    c.require(
        set.c_star_minus <= 0.0 && 0.0 <= set.c_star_plus,
        "c*- <= 0 <= c*+ violated",
    );
    if m == 0.0 {
        c.require(set.t_max.abs() <= 1e-10, "M = 0 but T != 0");
        c.require(set.c_star_minus == 0.0 && set.c_star_plus == 0.0, "M = 0 but c* != 0");
    }
    let mono = set.c_minus.windows(2).all(|w| w[1] > w[0]) && set.c_plus.windows(2).all(|w| w[1] < w[0]);
    c.require(mono, "boundary curves not strictly monotone");
    let convex_minus = set
        .c_minus
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .fold(f64::INFINITY, f64::min);
    let concave_plus = set
        .c_plus
        .windows(3)
        .map(|w| w[2] - 2.0 * w[1] + w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    c.measure("min_second_difference_c_minus", convex_minus, Some(-1e-10));
    c.measure("max_second_difference_c_plus", concave_plus, Some(1e-10));
    c.require(
        convex_minus >= -1e-10 && concave_plus <= 1e-10,
        "convexity of boundary curves violated",
    );
    c.require(
        set.c_minus.iter().zip(&set.c_plus).all(|(lo, hi)| lo <= hi),
        "c_minus exceeds c_plus on samples",
    );

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inside = Vec::new();
    let (mut worst_res, mut worst_max) = (0.0f64, f64::NEG_INFINITY);
    while inside.len() < 50 {
        let t = rng.gen_range(-2.0..set.t_max.max(1e-9));
        let Some((lo, hi)) = set.c_range_at_t(t) else { continue };
        if hi - lo <= 1e-9 {
            continue;
        }
        let s: f64 = rng.gen_range(0.01..0.99);
        let cc = lo + s * (hi - lo);
        let u = set.profile(t, cc);
        worst_res = worst_res.max(problem.residual(problem.lambda1, &u, cc).norm_inf());
        worst_max = worst_max.max(u.max() - m);
        inside.push((t, cc));
    }
    c.at_most("inside_residual", worst_res, 1e-10);
    c.at_most("inside_max_minus_M", worst_max, 1e-10);
    let mut outside = 0;
    let mut min_excess = f64::INFINITY;
    while outside < 50 {
        let t = rng.gen_range(-2.0..set.t_max + 1.0);
        let cc = rng.gen_range(set.c_star_minus - 20.0..set.c_star_plus + 20.0);
        let feasible = set
            .c_range_at_t(t)
            .is_some_and(|(lo, hi)| lo - 1e-9 <= cc && cc <= hi + 1e-9);
        if feasible {
            continue;
        }
        min_excess = min_excess.min(set.profile(t, cc).max() - m);
        outside += 1;
    }
    c.measure("outside_min_excess", min_excess, Some(0.0));
    c.require(min_excess > 0.0, "an exterior pair gives a solution");
    let mut convex_ok = true;
    for pair in inside.chunks(2) {
        if let [(t0, c0), (t1, c1)] = pair {
            let (tm, cm) = (0.5 * (t0 + t1), 0.5 * (c0 + c1));
            convex_ok &= set
                .c_range_at_t(tm)
                .is_some_and(|(lo, hi)| lo - 1e-9 <= cm && cm <= hi + 1e-9);
        }
    }
    c.require(convex_ok, "midpoint of feasible pairs is infeasible");
    c
}

/// Smooth random start built from the first few sine modes.
fn random_guess(problem: &Problem, rng: &mut ChaCha8Rng, scale: f64) -> GridFunction {
    let mut u = problem.grid.zeros();
    for k in 1..=4 {
        u.axpy(scale * rng.gen_range(-1.0..1.0), &problem.grid.sine_mode(k));
    }
    u
}

/// Multi-start agreement below `lambda1`.
pub fn check_uniqueness_below(problem: &Problem, solver: &SolverConfig, seed: u64, samples: usize) -> Check {
    let mut c = Check::new("uniqueness_below_lambda1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (mut spread, mut eig_gap) = (0.0f64, f64::INFINITY);
    for _ in 0..samples {
        let a = rng.gen_range(-problem.lambda1..0.95 * problem.lambda1);
        let cc = rng.gen_range(-50.0..50.0);
        let mut guesses = vec![problem.grid.zeros(), problem.phi.scaled(-2.0)];
        if let Some(g) = linear_response(problem, a) {
            guesses.push(g.scaled(cc));
        }
        guesses.push(random_guess(problem, &mut rng, 5.0));
        let mut sols = Vec::new();
        for g in &guesses {
            match newton_solve(problem, a, cc, g, solver) {
                Ok(s) => sols.push(s),
                Err(e) => c.fail(format!("newton failed at a = {a:.4}, c = {cc:.4}: {e}")),
            }
        }
        let Some(first) = sols.first() else { continue };
        for s in &sols {
            spread = spread.max(s.u.sub(&first.u).norm_inf());
            c.require(s.morse_index() == 0, format!("index {} at a = {a:.4}", s.morse_index()));
            eig_gap = eig_gap.min(s.spectrum.smallest_eigenvalue - (problem.lambda1 - a));
        }
        c.see_all(problem, &sols);
    }
    c.at_most("multi_start_spread", spread, 1e-8);
    c.measure("min_eigenvalue_margin", eig_gap, Some(-1e-8));
    c.require(eig_gap >= -1e-8, "smallest eigenvalue below lambda1 - a");
    c
}

/// Errors `e(eps)` of the solutions at `a = lambda1 - eps` against the limit
/// profiles, plus the half-space bound.
pub fn convergence_below(problem: &Problem, solver: &SolverConfig, check: &mut Check) -> Result<Vec<f64>> {
    let set = LambdaSet::build(problem)?;
    let cs: Vec<f64> = (0..9)
        .map(|k| set.c_star_minus - 1.0 + (set.c_star_plus - set.c_star_minus + 2.0) * k as f64 / 8.0)
        .collect();
    let mut errors = Vec::new();
    let mut halfspace = f64::INFINITY;
    for eps in [0.3, 0.1, 0.03, 0.01] {
        let a = problem.lambda1 * (1.0 - eps);
        let mut e = 0.0f64;
        for &cc in &cs {
            let (_, lim) = set.tau_and_limit(cc);
            let sol = newton_solve(problem, a, cc, &lim, solver)?;
            e = e.max(sol.u.sub(&lim).norm_inf());
            halfspace = halfspace.min(sol.t_phi - set.tau_hat(-0.5, cc));
            check.see(problem, &sol);
        }
        errors.push(e);
    }
    check.measure("halfspace_margin", halfspace, Some(-1e-6));
    check.require(halfspace > -1e-6, "solution below the half-space bound");
    Ok(errors)
}

fn decay_gate(check: &mut Check, name: &str, errors: &[f64]) {
    for (k, e) in errors.iter().enumerate() {
        check.measure(format!("{name}[{k}]"), *e, None);
    }
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    check.require(decreasing, format!("{name} not decreasing"));
    let ratio = errors[0] / errors[errors.len() - 1];
    check.measure(format!("{name}_ratio"), ratio, Some(3.0));
    check.require(ratio > 3.0, format!("{name} decreased by {ratio:.3}, need > 3"));
}

pub fn check_convergence_below(problem: &Problem, solver: &SolverConfig) -> Check {
    let mut c = Check::new("convergence_below_lambda1");
    match convergence_below(problem, solver, &mut c) {
        Ok(errors) => decay_gate(&mut c, "error", &errors),
        Err(e) => c.fail(format!("error: {e}")),
    }
    c
}

fn interior_levels(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|k| lo + (hi - lo) * (k as f64 + 0.5) / count as f64)
        .collect()
}

/// Loops between `lambda1` and `lambda2` and the fold formulas on them.
pub fn check_loops(
    problem: &Problem,
    positions: &[f64],
    cont: &ContinuationConfig,
    solver: &SolverConfig,
) -> (Check, Check) {
    let mut lc = Check::new("loop_between_eigenvalues");
    let mut fc = Check::new("fold_formulas");
    let mut c_bar = 0.0f64;
    let mut k_emp = f64::NEG_INFINITY;
    for &rel in positions {
        let a = problem.lambda1 + rel * problem.gap();
        let b = match trace_branch(problem, a, cont, solver) {
            Ok(b) => b,
            Err(e) => {
                lc.fail(format!("trace at a_rel = {rel}: {e}"));
                continue;
            }
        };
        lc.see_all(problem, &b.points);
        // A closed branch ends on a copy of its start; measure the gap to
        // the last computed point.
        let first = &b.points[0];
        let last = &b.points[b.len() - if b.closed { 2 } else { 1 }];
        let gap = first.u.sub(&last.u).norm_inf() + (first.c - last.c).abs();
        lc.require(b.closed, format!("a_rel = {rel}: branch not closed"));
        lc.at_most(&format!("closure_gap[{rel}]"), gap, 2.0 * cont.ds_max);
        let folds = b.fold_c_values();
        lc.measure(format!("folds[{rel}]"), folds.len() as f64, Some(2.0));
        let sides_ok = folds.len() == 2 && folds.iter().any(|&f| f < 0.0) && folds.iter().any(|&f| f > 0.0);
        lc.require(sides_ok, format!("a_rel = {rel}: folds {folds:?}"));
        lc.require(
            b.points.iter().all(|p| p.morse_index() <= 1),
            format!("a_rel = {rel}: index above 1"),
        );
        lc.require(
            index_changes_at_folds(&b),
            format!("a_rel = {rel}: index changes off a fold"),
        );
        if sides_ok {
            let (lo, hi) = (folds[0].min(folds[1]), folds[0].max(folds[1]));
            let counts: Vec<usize> = interior_levels(lo, hi, 10)
                .iter()
                .filter_map(|&cc| count_solutions_at(&b, cc).ok())
                .collect();
            lc.require(
                counts.len() == 10 && counts.iter().all(|&n| n == 2),
                format!("a_rel = {rel}: interior counts {counts:?}"),
            );
            let outside: Vec<usize> = [lo - 1.0, hi + 1.0, 1.5 * lo, 1.5 * hi]
                .iter()
                .filter_map(|&cc| count_solutions_at(&b, cc).ok())
                .collect();
            lc.require(
                outside.iter().all(|&n| n == 0),
                format!("a_rel = {rel}: exterior counts {outside:?}"),
            );
        }
        let (clo, chi) = b.c_range();
        c_bar = c_bar.max(clo.abs()).max(chi.abs());
        for p in &b.points {
            k_emp = k_emp.max(p.u.max() - c_bar);
        }
        match branch_folds(problem, &b, solver) {
            Ok(fps) => {
                for fp in &fps {
                    fold_formulas(problem, fp, &mut fc);
                }
            }
            Err(e) => fc.fail(format!("a_rel = {rel}: {e}")),
        }
    }
    lc.measure("c_bar_emp", c_bar, None);
    lc.measure("k_emp", k_emp, None);
    (lc, fc)
}

/// Index is constant between consecutive fold markers and differs by one
/// across each.
fn index_changes_at_folds(b: &Branch) -> bool {
    let folds = b.indices_of(MarkerKind::Fold0);
    b.points.windows(2).enumerate().all(|(i, w)| {
        let (i0, i1) = (w[0].morse_index(), w[1].morse_index());
        i0 == i1 || (i0.abs_diff(i1) == 1 && (folds.contains(&i) || folds.contains(&(i + 1))))
    })
}

fn fold_formulas(problem: &Problem, fp: &FoldPoint, c: &mut Check) {
    c.see(problem, &fp.solution);
    let cs = fp.c();
    let jw = problem.jacobian(fp.a(), &fp.solution.u).apply(&fp.kernel);
    let jw_max = jw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(jw_max <= 1e-7) {
        c.fail(format!("fold at c = {cs:.6}: |J w| = {jw_max:.3e}"));
    }
    let min_w = fp.kernel.min();
    let hw = problem.inner(problem.h.values(), &fp.kernel);
    c.require(
        min_w > 0.0,
        format!("fold at c = {cs:.6}: kernel not positive ({min_w:.3e})"),
    );
    c.require(
        hw != 0.0 && hw.signum() == cs.signum(),
        format!("fold at c = {cs:.6}: <h, w> = {hw:.3e}"),
    );
    c.require(
        fp.mu_prime > 0.0,
        format!("fold at c = {cs:.6}: mu' = {:.3e}", fp.mu_prime),
    );
    c.require(
        fp.c_second_derivative.signum() == -cs.signum(),
        format!("fold at c = {cs:.6}: c'' = {:.3e}", fp.c_second_derivative),
    );
    c.measure(format!("c_second_derivative[{cs:.4}]"), fp.c_second_derivative, None);
}

/// Aitken extrapolation of a sequence sampled at geometric parameter steps.
pub fn aitken(y0: f64, y1: f64, y2: f64) -> f64 {
    let d1 = y1 - y0;
    let d2 = y2 - y1;
    let den = d2 - d1;
    if den == 0.0 {
        y2
    } else {
        y2 - d2 * d2 / den
    }
}

/// The `a`-grid for fold tracking: uniform on `[lambda1 + 0.02 gap,
/// lambda2 + delta]` plus halvings of `a - lambda1` below it.
pub fn fold_grid(problem: &Problem, delta: f64, halvings: usize) -> Vec<f64> {
    let lo = problem.lambda1 + 0.02 * problem.gap();
    let hi = problem.lambda2 + delta;
    let mut grid: Vec<f64> = (0..=20).map(|k| lo + (hi - lo) * k as f64 / 20.0).collect();
    grid.extend((1..=halvings).map(|k| problem.lambda1 + 0.02 * problem.gap() * 0.5f64.powi(k as i32)));
    grid.sort_by(f64::total_cmp);
    grid
}

/// Fold curves in `a` from the two folds of a loop.
pub fn fold_curves(
    problem: &Problem,
    delta: f64,
    halvings: usize,
    cont: &ContinuationConfig,
    solver: &SolverConfig,
) -> Result<Vec<FoldCurve>> {
    let b = trace_branch(problem, problem.lambda1 + 0.3 * problem.gap(), cont, solver)?;
    let seeds = branch_folds(problem, &b, solver)?;
    let grid = fold_grid(problem, delta, halvings);
    seeds
        .iter()
        .map(|s| track_folds_in_a(problem, s, &grid, solver))
        .collect()
}

pub fn check_fold_curves(
    problem: &Problem,
    delta: Option<f64>,
    level: Level,
    cont: &ContinuationConfig,
    solver: &SolverConfig,
) -> Check {
    let mut c = Check::new("fold_curves");
    let delta = delta.unwrap_or(0.05 * (problem.lambda3 - problem.lambda2));
    let halvings = match level {
        Level::Smoke => 12,
        Level::Full => 16,
    };
    let curves = match fold_curves(problem, delta, halvings, cont, solver) {
        Ok(cs) => cs,
        Err(e) => return Check::failed("fold_curves", &e),
    };
    let set = LambdaSet::build(problem).ok();
    c.require(curves.len() == 2, format!("{} fold curves", curves.len()));
    for curve in &curves {
        let name = match curve.side {
            Side::Negative => "minus",
            Side::Positive => "plus",
        };
        let pts = &curve.points;
        c.see_all(problem, pts.iter().map(|p| &p.solution));
        c.require(
            pts.windows(2).all(|w| w[1].a() > w[0].a()),
            format!("{name}: a not strictly increasing"),
        );
        let sign_ok = pts.iter().all(|p| match curve.side {
            Side::Negative => p.c() < 0.0,
            Side::Positive => p.c() > 0.0,
        });
        c.require(sign_ok, format!("{name}: fold crosses c = 0"));
        c.require(
            pts.iter().all(|p| p.solution.morse_index() == 0),
            format!("{name}: index"),
        );
        if pts.len() < 3 {
            c.fail(format!("{name}: fewer than three samples"));
            continue;
        }
        let (t_ex, c_ex) = (
            aitken(pts[2].solution.t_phi, pts[1].solution.t_phi, pts[0].solution.t_phi),
            aitken(pts[2].c(), pts[1].c(), pts[0].c()),
        );
        c.measure(format!("{name}_smallest_a_offset"), pts[0].a() - problem.lambda1, None);
        c.measure(format!("{name}_t_at_smallest_a"), pts[0].solution.t_phi, None);
        c.measure(format!("{name}_c_at_smallest_a"), pts[0].c(), None);
        if problem.threshold() > 0.0 {
            if let Some(set) = &set {
                let target = match curve.side {
                    Side::Negative => set.c_star_minus,
                    Side::Positive => set.c_star_plus,
                };
                c.at_most(&format!("{name}_extrapolated_t"), t_ex.abs(), 0.02);
                c.at_most(
                    &format!("{name}_extrapolated_c_rel_err"),
                    ((c_ex - target) / target).abs(),
                    0.05,
                );
                c.at_most(
                    &format!("{name}_c_rel_err_at_smallest_a"),
                    ((pts[0].c() - target) / target).abs(),
                    0.05,
                );
            }
        } else {
            c.measure(format!("{name}_extrapolated_t"), t_ex, None);
            c.measure(format!("{name}_extrapolated_c"), c_ex, None);
        }
    }
    c
}

fn limit_errors(
    problem: &Problem,
    set: &LambdaSet,
    cont: &ContinuationConfig,
    solver: &SolverConfig,
    check: &mut Check,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let levels: Vec<f64> = (1..10)
        .map(|k| set.c_star_minus + (set.c_star_plus - set.c_star_minus) * k as f64 / 10.0)
        .collect();
    let (mut stable, mut unstable) = (Vec::new(), Vec::new());
    for eps in [0.3, 0.1, 0.03, 0.01] {
        let a = problem.lambda1 * (1.0 + eps);
        let b = trace_branch(problem, a, cont, solver)?;
        check.see_all(problem, &b.points);
        let (mut es, mut eu) = (0.0f64, 0.0f64);
        for &cc in &levels {
            let sols = continuation::solutions_at(problem, &b, cc, solver)?;
            check.see_all(problem, &sols);
            let mut kinds = (0, 0);
            for s in &sols {
                if s.morse_index() == 0 {
                    kinds.0 += 1;
                    let lim = set.profile(set.t_c_profile(cc)?, cc);
                    es = es.max(s.u.sub(&lim).norm_inf());
                } else {
                    kinds.1 += 1;
                    eu = eu.max(s.u.sub(&set.profile(0.0, cc)).norm_inf());
                }
            }
            if kinds != (1, 1) {
                return Err(Error::Assembly(format!(
                    "a = {a}, c = {cc}: found {kinds:?} (stable, unstable)"
                )));
            }
        }
        stable.push(es);
        unstable.push(eu);
    }
    Ok((stable, unstable))
}

/// Profiles of both solutions converge as `a` decreases to `lambda1`
/// (`M > 0`).
pub fn check_limit_profiles(problem: &Problem, cont: &ContinuationConfig, solver: &SolverConfig) -> Check {
    let mut c = Check::new("limit_profiles");
    let set = match LambdaSet::build(problem) {
        Ok(s) => s,
        Err(e) => return Check::failed("limit_profiles", &e),
    };
    match limit_errors(problem, &set, cont, solver, &mut c) {
        Ok((s, u)) => {
            decay_gate(&mut c, "stable_error", &s);
            decay_gate(&mut c, "unstable_error", &u);
        }
        Err(e) => c.fail(format!("error: {e}")),
    }
    c
}

/// For `M = 0` the whole branch shrinks to zero as `a` decreases to
/// `lambda1`.
pub fn check_collapse(problem: &Problem, cont: &ContinuationConfig, solver: &SolverConfig) -> Check {
    let mut c = Check::new("collapse_at_zero_threshold");
    let mut sizes = Vec::new();
    for eps in [0.3, 0.1, 0.03, 0.01] {
        match trace_branch(problem, problem.lambda1 * (1.0 + eps), cont, solver) {
            Ok(b) => {
                c.see_all(problem, &b.points);
                sizes.push(b.points.iter().map(|p| p.u.norm_inf()).fold(0.0, f64::max));
            }
            Err(e) => {
                c.fail(format!("eps = {eps}: {e}"));
                return c;
            }
        }
    }
    decay_gate(&mut c, "max_norm", &sizes);
    c
}

/// Kinds of the non-start markers in branch order.
pub fn marker_pattern(b: &Branch) -> Vec<(MarkerKind, bool)> {
    let mut ms: Vec<_> = b.markers.iter().filter(|m| m.kind != MarkerKind::Start).collect();
    ms.sort_by_key(|m| m.index);
    ms.iter().map(|m| (m.kind, b.points[m.index].c > 0.0)).collect()
}

/// `pattern` equals `expected` up to rotation.
pub fn cyclic_match<T: PartialEq>(pattern: &[T], expected: &[T]) -> bool {
    pattern.len() == expected.len()
        && (0..expected.len()).any(|r| (0..expected.len()).all(|i| pattern[(i + r) % pattern.len()] == expected[i]))
}

/// Run-length encoded Morse indices, ignoring refined and degenerate points.
pub fn index_runs(b: &Branch) -> Vec<usize> {
    let mut runs: Vec<usize> = Vec::new();
    for (p, how) in b.points.iter().zip(&b.parametrization) {
        if *how == Parametrization::Refined || p.degenerate() {
            continue;
        }
        if runs.last() != Some(&p.morse_index()) {
            runs.push(p.morse_index());
        }
    }
    runs
}

pub fn check_segment_at_lambda2(problem: &Problem, cont: &ContinuationConfig, solver: &SolverConfig) -> Check {
    let mut c = Check::new("segment_at_lambda2");
    let b = match trace_branch(problem, problem.lambda2, cont, solver) {
        Ok(b) => b,
        Err(e) => return Check::failed("segment_at_lambda2", &e),
    };
    segment_checks(problem, &b, &mut c);
    c
}

pub fn segment_checks(problem: &Problem, b: &Branch, c: &mut Check) {
    c.see_all(problem, &b.points);
    c.require(b.closed, "branch not closed");
    let (ls, le) = (b.indices_of(MarkerKind::LStart), b.indices_of(MarkerKind::LEnd));
    if ls.len() != 1 || le.len() != 1 {
        c.fail(format!("segment markers {ls:?} {le:?}"));
        return;
    }
    let (i0, i1) = (ls[0].min(le[0]), ls[0].max(le[0]));
    let m = problem.threshold();
    let ends = [b.points[i0].t_psi, b.points[i1].t_psi];
    c.measure("segment_start_t", ends[0], Some(-m / problem.beta));
    c.measure("segment_end_t", ends[1], Some(m));
    c.require(
        (ends[0] + m / problem.beta).abs() <= 1e-12 && (ends[1] - m).abs() <= 1e-12,
        "segment endpoints misplaced",
    );
    let (mut res, mut cos_err) = (0.0f64, 0.0f64);
    for p in &b.points[i0..=i1] {
        res = res.max(p.residual_norm);
        c.require(
            p.degenerate() && p.morse_index() == 1,
            format!("segment point t = {:.4} not degenerate index 1", p.t_psi),
        );
        if let Some(w) = &p.spectrum.kernel_vector {
            let cos = problem.inner(w, &problem.psi) / (problem.grid.norm(w) * problem.grid.norm(&problem.psi));
            cos_err = cos_err.max(1.0 - cos.abs());
        }
    }
    c.at_most("segment_residual", res, 1e-10);
    c.at_most("kernel_alignment_defect", cos_err, 1e-10);
    let pattern = marker_pattern(b);
    let expected = [
        (MarkerKind::LStart, false),
        (MarkerKind::LEnd, false),
        (MarkerKind::Fold0, true),
        (MarkerKind::Fold0, false),
    ];
    c.require(cyclic_match(&pattern, &expected), format!("marker pattern {pattern:?}"));
    let runs = index_runs(b);
    c.require(cyclic_runs(&runs, &[0, 1]), format!("index runs {runs:?}"));
}

/// Closed-branch index runs equal `expected` cyclically (the start point may
/// split one run in two).
fn cyclic_runs(runs: &[usize], expected: &[usize]) -> bool {
    let mut r = runs.to_vec();
    if r.len() > 1 && r.first() == r.last() {
        r.pop();
    }
    cyclic_match(&r, expected)
}

/// Marker pattern expected just above `lambda2`.
pub fn above_lambda2_pattern() -> [(MarkerKind, bool); 4] {
    [
        (MarkerKind::Transition12, true),
        (MarkerKind::Transition12, false),
        (MarkerKind::Fold0, true),
        (MarkerKind::Fold0, false),
    ]
}

/// Halves `delta` from `0.05 (lambda3 - lambda2)` until the branch at
/// `lambda2 + delta` shows the expected marker pattern.
pub fn find_delta(problem: &Problem, cont: &ContinuationConfig, solver: &SolverConfig) -> Result<(f64, Branch)> {
    let mut delta = 0.05 * (problem.lambda3 - problem.lambda2);
    let mut last_err = None;
    for _ in 0..10 {
        match trace_branch(problem, problem.lambda2 + delta, cont, solver) {
            Ok(b) if cyclic_match(&marker_pattern(&b), &above_lambda2_pattern()) => return Ok((delta, b)),
            Ok(b) => last_err = Some(Error::Assembly(format!("pattern {:?}", marker_pattern(&b)))),
            Err(e) => last_err = Some(e),
        }
        delta *= 0.5;
    }
    Err(last_err.unwrap_or_else(|| Error::Assembly("no admissible delta".into())))
}

/// `min(|c_flat|, |c_sharp|)` from the transition markers.
pub fn transition_scale(b: &Branch) -> f64 {
    b.indices_of(MarkerKind::Transition12)
        .iter()
        .map(|&i| b.points[i].c.abs())
        .fold(f64::INFINITY, f64::min)
}

pub fn check_structure_above_lambda2(problem: &Problem, delta: f64, b: &Branch, solver: &SolverConfig) -> Check {
    let mut c = Check::new("structure_above_lambda2");
    c.see_all(problem, &b.points);
    c.measure("delta", delta, None);
    c.require(b.closed, "branch not closed");
    let pattern = marker_pattern(b);
    c.require(
        cyclic_match(&pattern, &above_lambda2_pattern()),
        format!("marker pattern {pattern:?}"),
    );
    let idx2 = b.points.iter().filter(|p| p.morse_index() == 2).count();
    c.measure("index2_points", idx2 as f64, None);
    c.require(idx2 > 0, "no index-2 points");
    let a = problem.lambda2 + delta;
    let ds = 1e-3 * problem.threshold().max(0.1);
    match chart_derivative_at_zero(problem, a, ds, solver) {
        Ok(d) => {
            c.measure("chart_slope", d, Some(0.0));
            c.require(d < 0.0, "chart slope not negative");
        }
        Err(e) => c.fail(format!("chart slope: {e}")),
    }
    let flipped = problem.with_harvest(problem.h.negated());
    match flipped.and_then(|q| chart_derivative_at_zero(&q, a, ds, solver)) {
        Ok(d) => {
            c.measure("chart_slope_negated_h", d, Some(0.0));
            c.require(d > 0.0, "chart slope with negated h not positive");
        }
        Err(e) => c.fail(format!("chart slope with negated h: {e}")),
    }
    let scale = transition_scale(b);
    c.measure("transition_scale", scale, None);
    let counts: Vec<usize> = (0..=10)
        .map(|k| -0.2 * scale + 0.4 * scale * k as f64 / 10.0)
        .map(|cc| count_solutions_at(b, cc).unwrap_or(0))
        .collect();
    c.require(counts.iter().all(|&n| n >= 4), format!("counts near c = 0: {counts:?}"));
    c.measure(
        "min_count_near_zero",
        counts.iter().copied().min().unwrap_or(0) as f64,
        Some(4.0),
    );
    c
}

/// Maximal runs of same-sign nodes, with `|u| <= threshold` read as zero.
pub fn count_nodal_domains(u: &[f64], threshold: f64) -> usize {
    let mut count = 0;
    let mut prev = 0i8;
    for &v in u {
        let s = if v > threshold {
            1
        } else if v < -threshold {
            -1
        } else {
            0
        };
        if s != 0 && s != prev {
            count += 1;
        }
        prev = s;
    }
    count
}

/// Default nodal threshold `1e-8 |u|`.
pub fn nodal_threshold(u: &[f64]) -> f64 {
    1e-8 * u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// First stable point with at least two nodal domains on a branch,
/// re-solved at its `(a, c)`.
pub fn stable_two_nodal_search(problem: &Problem, b: &Branch, solver: &SolverConfig) -> Option<Solution> {
    b.points
        .iter()
        .filter(|p| p.morse_index() == 0 && !p.degenerate())
        .filter(|p| count_nodal_domains(&p.u, nodal_threshold(&p.u)) >= 2)
        .find_map(|p| {
            let s = newton_solve(problem, p.a, p.c, &p.u, solver).ok()?;
            let ok = s.residual_norm <= solver.acceptance_tolerance(problem, &s.u)
                && s.morse_index() == 0
                && count_nodal_domains(&s.u, nodal_threshold(&s.u)) >= 2;
            ok.then_some(s)
        })
}

pub fn check_two_nodal(problem: &Problem, b: &Branch, solver: &SolverConfig) -> Check {
    let mut c = Check::new("stable_two_nodal");
    c.status = Status::Flagged;
    match stable_two_nodal_search(problem, b, solver) {
        Some(s) => {
            c.see(problem, &s);
            c.measure("a", s.a, None);
            c.measure("c", s.c, None);
            c.measure("domains", count_nodal_domains(&s.u, nodal_threshold(&s.u)) as f64, None);
            c.notes.push("stable solution with two nodal domains found".into());
        }
        None => c
            .notes
            .push("no stable two-domain solution on the scanned branch".into()),
    }
    c
}

/// Harvest term without the `phi` projection, for fault injection.
pub fn unprojected_harvest(problem: &Problem) -> Result<HarvestTerm> {
    let mut v = problem.grid.sine_mode(2).scaled(-1.0);
    v.axpy(0.3, &problem.phi);
    HarvestTerm::from_raw(&problem.grid, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodal_domain_examples() {
        let p = Problem::standard(63, 1.0).unwrap();
        assert_eq!(count_nodal_domains(&p.phi, nodal_threshold(&p.phi)), 1);
        assert_eq!(count_nodal_domains(&p.psi, nodal_threshold(&p.psi)), 2);
        assert_eq!(count_nodal_domains(&p.grid.zeros(), 0.0), 0);
        assert_eq!(count_nodal_domains(&[1.0, 0.0, 1.0], 0.0), 2);
        assert_eq!(count_nodal_domains(&[1.0, 1e-12, 1.0], 1e-9), 2);
        assert_eq!(count_nodal_domains(&[-1.0, -2.0], 0.0), 1);
    }

    #[test]
    fn aitken_is_exact_for_geometric_sequences() {
        let y = |k: i32| 3.0 + 2.0 * 0.7f64.powi(k);
        assert!((aitken(y(0), y(1), y(2)) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cyclic_matching() {
        assert!(cyclic_match(&[2, 3, 1], &[1, 2, 3]));
        assert!(!cyclic_match(&[2, 1, 3], &[1, 2, 3]));
        assert!(!cyclic_match(&[1, 2], &[1, 2, 3]));
        assert!(cyclic_runs(&[0, 1, 0], &[0, 1]));
        assert!(!cyclic_runs(&[0, 1, 0, 1], &[0, 1]));
    }

    #[test]
    fn fault_injection_breaks_the_bijection() {
        let p = Problem::standard(63, 1.0).unwrap();
        let bad = p.with_harvest(unprojected_harvest(&p).unwrap()).unwrap();
        let c = check_lambda_set(&bad, 3);
        assert_eq!(c.status, Status::Fail);
        assert!(c.notes.iter().any(|n| n.contains("inside_residual")), "{:?}", c.notes);
        assert!(check_lambda_set(&p, 3).passed());
    }

    #[test]
    fn uniqueness_and_spectrum_pass() {
        let p = Problem::standard(63, 1.0).unwrap();
        assert!(check_spectrum(&p).passed());
        assert!(check_hypotheses(&p).passed());
        let c = check_uniqueness_below(&p, &SolverConfig::default(), 1, 5);
        assert!(c.passed(), "{:?}", c.notes);
        assert!(c.solutions_seen >= 15);
    }
}
