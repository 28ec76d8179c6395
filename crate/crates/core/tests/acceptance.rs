//! Acceptance criteria, one test each. Every test writes a single
//! `criterion N: PASS|FAIL ...` line straight to stdout so the verdicts show
//! up even when libtest captures output.

mod common;

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use common::{dense_eigenvalues, dense_neg_laplacian, Oracle};
use logistic_harvest::continuation::{count_solutions_at, trace_branch, Branch, ContinuationConfig, MarkerKind};
use logistic_harvest::lambda1::solve_resolvent_g;
use logistic_harvest::verify::{self, Check, Level, SuiteConfig};
use logistic_harvest::{Problem, SolverConfig};
use nalgebra::DVector;

fn report(id: u32, started: Instant, checks: &[&Check], extra: &[String]) -> bool {
    let ok = checks.iter().all(|c| c.passed()) && extra.is_empty();
    let mut why: Vec<String> = checks.iter().flat_map(|c| c.notes.iter().cloned()).collect();
    why.extend(extra.iter().cloned());
    let line = format!(
        "criterion {id}: {} ({:.1} s){}{}\n",
        if ok { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64(),
        if why.is_empty() { "" } else { " - " },
        why.join("; ")
    );
    std::io::stdout().lock().write_all(line.as_bytes()).unwrap();
    ok
}

fn problem(n: usize, m: f64) -> Problem {
    Problem::standard(n, m).unwrap()
}

fn solver() -> SolverConfig {
    SolverConfig::default()
}

fn cont() -> ContinuationConfig {
    ContinuationConfig::default()
}

/// Loop runs at n = 199, M = 1, shared by criteria 5 and 6.
fn loops() -> &'static (Check, Check) {
    static LOOPS: OnceLock<(Check, Check)> = OnceLock::new();
    LOOPS.get_or_init(|| {
        let p = problem(199, 1.0);
        verify::check_loops(&p, &verify::loop_positions(Level::Full), &cont(), &solver())
    })
}

#[test]
fn criterion_01_spectrum() {
    let t = Instant::now();
    let p = problem(199, 1.0);
    let c = verify::check_spectrum(&p);
    let mut extra = Vec::new();
    let dense = dense_eigenvalues(dense_neg_laplacian(199));
    for (k, d) in dense.iter().take(2).enumerate() {
        let rel = ((d - p.grid.eigenvalue(k + 1)) / d).abs();
        if rel > 1e-10 {
            extra.push(format!("dense eigenvalue {k} differs by {rel:.2e}"));
        }
    }
    assert!(report(1, t, &[&c], &extra));
}

#[test]
fn criterion_02_lambda_set() {
    let t = Instant::now();
    let mut extra = Vec::new();
    let mut checks = Vec::new();
    for m in [1.0, 0.0] {
        let p = problem(199, m);
        checks.push(verify::check_lambda_set(&p, 11));
        // At t = 0 the interval is cut out by max(+-g) alone.
        let g = solve_resolvent_g(&p).unwrap();
        let set = logistic_harvest::lambda1::LambdaSet::build(&p).unwrap();
        let (plus, minus) = (m / g.max(), -m / (-g.min()));
        if (set.c_star_plus - plus).abs() > 1e-9 * plus.abs().max(1.0)
            || (set.c_star_minus - minus).abs() > 1e-9 * minus.abs().max(1.0)
        {
            extra.push(format!(
                "M = {m}: c* = ({}, {}) vs ({minus}, {plus})",
                set.c_star_minus, set.c_star_plus
            ));
        }
    }
    let refs: Vec<&Check> = checks.iter().collect();
    assert!(report(2, t, &refs, &extra));
}

#[test]
fn criterion_03_uniqueness_below_lambda1() {
    let t = Instant::now();
    let p = problem(199, 1.0);
    let c = verify::check_uniqueness_below(&p, &solver(), 2024, 20);
    let mut extra = Vec::new();
    if c.solutions_seen < 60 {
        extra.push(format!("only {} solves", c.solutions_seen));
    }
    assert!(report(3, t, &[&c], &extra));
}

#[test]
fn criterion_04_convergence_below_lambda1() {
    let t = Instant::now();
    let p = problem(199, 1.0);
    let c = verify::check_convergence_below(&p, &solver());
    assert!(report(4, t, &[&c], &[]));
}

#[test]
fn criterion_05_loops_and_fold_oracle() {
    let t = Instant::now();
    let (loops, _) = loops();
    let mut extra = Vec::new();
    let coarse = problem(63, 1.0);
    let oracle = Oracle::new(&coarse);
    let dc = 0.25;
    for (k, rel) in verify::loop_positions(Level::Full).into_iter().enumerate() {
        let a = coarse.lambda1 + rel * coarse.gap();
        let b = trace_branch(&coarse, a, &cont(), &solver()).unwrap();
        let mut folds = b.fold_c_values();
        folds.sort_by(f64::total_cmp);
        let (lo, hi) = oracle.fold_scan(a, dc, 100 + k as u64);
        if folds.len() != 2 || (folds[0] - lo).abs() > 2.0 * dc || (folds[1] - hi).abs() > 2.0 * dc {
            extra.push(format!("a_rel = {rel}: folds {folds:?} vs oracle ({lo}, {hi})"));
        }
    }
    assert!(report(5, t, &[loops], &extra));
}

#[test]
fn criterion_06_fold_formulas() {
    let t = Instant::now();
    let (_, folds) = loops();
    let mut extra = Vec::new();
    if folds.solutions_seen != 10 {
        extra.push(format!("{} folds checked, expected 10", folds.solutions_seen));
    }
    assert!(report(6, t, &[folds], &extra));
}

#[test]
fn criterion_07_fold_curves() {
    let t = Instant::now();
    let p = problem(199, 1.0);
    let (delta, _) = verify::find_delta(&p, &cont(), &solver()).unwrap();
    let c = verify::check_fold_curves(&p, Some(delta), Level::Full, &cont(), &solver());
    assert!(report(7, t, &[&c], &[]));
}

#[test]
fn criterion_08_limit_profiles() {
    let t = Instant::now();
    let stable = verify::check_limit_profiles(&problem(199, 1.0), &cont(), &solver());
    let collapse = verify::check_collapse(&problem(199, 0.0), &cont(), &solver());
    assert!(report(8, t, &[&stable, &collapse], &[]));
}

#[test]
fn criterion_09_segment_at_lambda2() {
    let t = Instant::now();
    let p = problem(199, 1.0);
    let c = verify::check_segment_at_lambda2(&p, &cont(), &solver());
    assert!(report(9, t, &[&c], &[]));
}

#[test]
fn criterion_10_structure_above_lambda2() {
    let t = Instant::now();
    let p = problem(199, 1.0);
    let (delta, b) = verify::find_delta(&p, &cont(), &solver()).unwrap();
    let c = verify::check_structure_above_lambda2(&p, delta, &b, &solver());
    let mut extra = Vec::new();
    let oracle = Oracle::new(&p);
    let a = p.lambda2 + delta;
    let mut starts = oracle.random_starts(60, 10.0, 5);
    starts.push(DVector::from_column_slice(&p.phi.scaled(5.0)));
    let found = oracle.solutions(a, 0.0, &starts);
    if found.len() < 4 {
        extra.push(format!("multi-start oracle found {} solutions at c = 0", found.len()));
    }
    match count_solutions_at(&b, 0.0) {
        Ok(k) if k == found.len() => {}
        other => extra.push(format!("branch count at c = 0 {other:?} vs oracle {}", found.len())),
    }
    assert!(report(10, t, &[&c], &extra));
}

#[derive(Debug, PartialEq)]
struct Signature {
    markers: Vec<(MarkerKind, bool)>,
    index_runs: Vec<usize>,
    folds: Vec<f64>,
}

fn signature(b: &Branch) -> Signature {
    let mut folds = b.fold_c_values();
    folds.sort_by(f64::total_cmp);
    Signature {
        markers: verify::marker_pattern(b),
        index_runs: verify::index_runs(b),
        folds,
    }
}

fn signatures(n: usize) -> Vec<Signature> {
    let p = problem(n, 1.0);
    let mut out: Vec<Signature> = verify::loop_positions(Level::Full)
        .into_iter()
        .map(|rel| signature(&trace_branch(&p, p.lambda1 + rel * p.gap(), &cont(), &solver()).unwrap()))
        .collect();
    out.push(signature(&trace_branch(&p, p.lambda2, &cont(), &solver()).unwrap()));
    out.push(signature(&verify::find_delta(&p, &cont(), &solver()).unwrap().1));
    out
}

#[test]
fn criterion_11_grid_stability() {
    let t = Instant::now();
    let (coarse, fine) = rayon::join(|| signatures(199), || signatures(399));
    let mut extra = Vec::new();
    for (k, (s0, s1)) in coarse.iter().zip(&fine).enumerate() {
        if s0.markers != s1.markers || s0.index_runs != s1.index_runs || s0.folds.len() != s1.folds.len() {
            extra.push(format!("run {k}: {s0:?} vs {s1:?}"));
            continue;
        }
        for (c0, c1) in s0.folds.iter().zip(&s1.folds) {
            let rel = ((c0 - c1) / c1).abs();
            if rel > 1e-3 {
                extra.push(format!("run {k}: fold {c0} vs {c1} ({rel:.2e})"));
            }
        }
    }
    assert!(report(11, t, &[], &extra));
}

#[test]
fn criterion_12_phi_identity() {
    let t = Instant::now();
    let cfg = SuiteConfig {
        level: Level::Full,
        ..SuiteConfig::default()
    };
    let reports: Vec<_> = [1.0, 0.0]
        .iter()
        .map(|&m| verify::run_suite(&problem(199, m), &cfg))
        .collect();
    let gates: Vec<&Check> = reports.iter().map(|r| r.get("phi_identity").unwrap()).collect();
    let mut extra = Vec::new();
    for (r, m) in reports.iter().zip([1.0, 0.0]) {
        let seen: usize = r.checks.iter().map(|c| c.solutions_seen).sum();
        if seen < 1000 {
            extra.push(format!("M = {m}: only {seen} solutions"));
        }
    }
    assert!(report(12, t, &gates, &extra));
}
