//! One function per subcommand. Each returns `Ok(true)` on success and
//! `Ok(false)` when the computation ran but its checks failed.

use std::path::{Path, PathBuf};

use anyhow::Context;
use logistic_harvest::continuation::{trace_branch, Branch, Side};
use logistic_harvest::lambda1::LambdaSet;
use logistic_harvest::solver::linear_response;
use logistic_harvest::verify::{self, Level, Status, SuiteConfig, VerificationReport};
use logistic_harvest::{newton_solve, Problem, Solution};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::svg::{self, Axes, Curve, Plot};
use crate::table::{self, write_rows};

pub struct Session {
    pub config: Config,
    pub problem: Problem,
    pub out: PathBuf,
}

/// Where `a` comes from on the command line.
#[derive(Debug, Clone, Copy)]
pub enum AChoice {
    Absolute(f64),
    Relative(f64),
}

impl AChoice {
    pub fn resolve(self, p: &Problem) -> f64 {
        match self {
            AChoice::Absolute(a) => a,
            AChoice::Relative(r) => p.lambda1 + r * p.gap(),
        }
    }
}

impl Session {
    pub fn new(config: Config, out: PathBuf) -> CliResult<Self> {
        config.validate().map_err(CliError::Config)?;
        let problem = config.problem().map_err(CliError::Config)?;
        std::fs::create_dir_all(&out)
            .with_context(|| format!("creating output directory {}", out.display()))
            .map_err(CliError::Config)?;
        Ok(Self { config, problem, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, text: &str) -> CliResult<()> {
        let path = self.path(name);
        std::fs::write(&path, text)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(CliError::Config)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Compute(e.into()))?;
        self.write(name, &(text + "\n"))
    }

    fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> CliResult<()> {
        write_rows(rows, &self.path(name)).map_err(CliError::Config)
    }

    fn svg(&self, name: &str, plot: &Plot) -> CliResult<()> {
        let text = svg::render(plot).map_err(CliError::Compute)?;
        self.write(name, &text)
    }
}

#[derive(Serialize)]
struct EigSummary {
    n: usize,
    spacing: f64,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    beta: f64,
}

pub fn eig(cx: &Session) -> CliResult<bool> {
    let p = &cx.problem;
    let s = EigSummary {
        n: p.n(),
        spacing: p.grid.spacing(),
        lambda1: p.lambda1,
        lambda2: p.lambda2,
        lambda3: p.lambda3,
        beta: p.beta,
    };
    println!(
        "lambda1 = {}\nlambda2 = {}\nlambda3 = {}\nbeta = {}",
        s.lambda1, s.lambda2, s.lambda3, s.beta
    );
    cx.write_json("eig.json", &s)?;
    Ok(true)
}

#[derive(Serialize)]
struct LambdaRow {
    t: f64,
    c_minus: f64,
    c_plus: f64,
}

#[derive(Serialize)]
struct LambdaSummary {
    t_max: f64,
    c_star_minus: f64,
    c_star_plus: f64,
}

pub fn lambda1_geometry(cx: &Session) -> CliResult<bool> {
    let set = LambdaSet::build(&cx.problem).map_err(CliError::compute)?;
    let rows: Vec<LambdaRow> = set
        .t_samples
        .iter()
        .zip(set.c_minus.iter().zip(&set.c_plus))
        .map(|(&t, (&c_minus, &c_plus))| LambdaRow { t, c_minus, c_plus })
        .collect();
    cx.write_csv("lambda_set.csv", &rows)?;
    let s = LambdaSummary {
        t_max: set.t_max,
        c_star_minus: set.c_star_minus,
        c_star_plus: set.c_star_plus,
    };
    println!("T = {}\nc*- = {}\nc*+ = {}", s.t_max, s.c_star_minus, s.c_star_plus);
    cx.write_json("lambda_set.json", &s)?;
    let curve = |pick: fn(&LambdaRow) -> f64, color| Curve {
        points: rows.iter().map(|r| (pick(r), r.t)).collect(),
        color,
        dashed: false,
    };
    let plot = Plot {
        title: "boundary of the solution set at a = lambda1".into(),
        x_label: "c".into(),
        y_label: "t".into(),
        curves: vec![
            curve(|r| r.c_minus, svg::INDEX_COLORS[0]),
            curve(|r| r.c_plus, svg::INDEX_COLORS[1]),
        ],
        dots: vec![(set.c_star_minus, 0.0, "#000000"), (set.c_star_plus, 0.0, "#000000")],
    };
    cx.svg("lambda_set.svg", &plot)?;
    Ok(true)
}

/// Largest `a` the standalone solver accepts.
pub fn solve_window(p: &Problem) -> f64 {
    p.lambda2 + 0.05 * (p.lambda3 - p.lambda2)
}

#[derive(Serialize)]
struct SolutionSummary {
    a: f64,
    c: f64,
    residual_norm: f64,
    t_phi: f64,
    t_psi: f64,
    u_max: f64,
    u_min: f64,
    morse_index: usize,
    degenerate: bool,
}

impl From<&Solution> for SolutionSummary {
    fn from(s: &Solution) -> Self {
        Self {
            a: s.a,
            c: s.c,
            residual_norm: s.residual_norm,
            t_phi: s.t_phi,
            t_psi: s.t_psi,
            u_max: s.u.max(),
            u_min: s.u.min(),
            morse_index: s.morse_index(),
            degenerate: s.degenerate(),
        }
    }
}

#[derive(Serialize)]
struct ProfileRow {
    solution: usize,
    x: f64,
    u: f64,
}

pub fn solve(cx: &Session, a: f64, c: f64) -> CliResult<bool> {
    let p = &cx.problem;
    let hi = solve_window(p);
    if !a.is_finite() || !c.is_finite() || a > hi {
        return Err(CliError::Config(anyhow::anyhow!(
            "solve accepts finite a <= lambda2 + 0.05 (lambda3 - lambda2) = {hi}; got a = {a}, c = {c}"
        )));
    }
    let solver = cx.config.solver().map_err(CliError::Config)?;
    let mut guesses = vec![p.grid.zeros()];
    if let Some(g) = linear_response(p, a) {
        guesses.push(g.scaled(c));
    }
    for s in [1.0, 3.0, 6.0] {
        guesses.push(p.phi.scaled(s));
        guesses.push(p.psi.scaled(s));
        guesses.push(p.psi.scaled(-s));
    }
    let mut found: Vec<Solution> = Vec::new();
    for g in &guesses {
        if let Ok(s) = newton_solve(p, a, c, g, &solver) {
            if found.iter().all(|f| f.u.sub(&s.u).norm_inf() > 1e-6) {
                found.push(s);
            }
        }
    }
    if found.is_empty() {
        return Err(CliError::Compute(anyhow::anyhow!(
            "no start converged at a = {a}, c = {c}"
        )));
    }
    found.sort_by(|x, y| x.t_phi.total_cmp(&y.t_phi));
    let nodes = p.grid.nodes();
    let rows: Vec<ProfileRow> = found
        .iter()
        .enumerate()
        .flat_map(|(k, s)| {
            nodes
                .iter()
                .zip(s.u.iter())
                .map(move |(&x, &u)| ProfileRow { solution: k, x, u })
        })
        .collect();
    cx.write_csv("solutions.csv", &rows)?;
    let summary: Vec<SolutionSummary> = found.iter().map(SolutionSummary::from).collect();
    for (k, s) in summary.iter().enumerate() {
        println!(
            "solution {k}: t_phi = {} t_psi = {} index = {} residual = {:.3e}",
            s.t_phi, s.t_psi, s.morse_index, s.residual_norm
        );
    }
    cx.write_json("solutions.json", &summary)?;
    Ok(true)
}

#[derive(Serialize)]
struct BranchSummary {
    a: f64,
    closed: bool,
    points: usize,
    fold_c_values: Vec<f64>,
    markers: Vec<(usize, &'static str)>,
}

fn branch_summary(b: &Branch) -> BranchSummary {
    BranchSummary {
        a: b.a,
        closed: b.closed,
        points: b.len(),
        fold_c_values: b.fold_c_values(),
        markers: b.markers.iter().map(|m| (m.index, m.kind.label())).collect(),
    }
}

/// `t_psi` once `a` reaches `lambda2`, `t_phi` below it.
pub fn default_axes(p: &Problem, a: f64) -> Axes {
    if a >= p.lambda2 * (1.0 - 1e-12) {
        Axes::CVsTPsi
    } else {
        Axes::CVsTPhi
    }
}

pub fn branch(cx: &Session, a: f64, axes: Option<Axes>) -> CliResult<bool> {
    let p = &cx.problem;
    let solver = cx.config.solver().map_err(CliError::Config)?;
    let cont = cx.config.continuation().map_err(CliError::Config)?;
    let b = trace_branch(p, a, &cont, &solver).map_err(CliError::compute)?;
    table::write_branch_csv(&b, &cx.path("branch.csv")).map_err(CliError::Config)?;
    let rows = table::branch_rows(&b);
    let axes = axes.unwrap_or_else(|| default_axes(p, a));
    cx.svg(
        "diagram.svg",
        &svg::branch_plot(&rows, axes, &format!("branch at a = {a:.6}")),
    )?;
    let s = branch_summary(&b);
    println!(
        "a = {a}: {} points, closed = {}, folds at {:?}",
        s.points, s.closed, s.fold_c_values
    );
    cx.write_json("branch.json", &s)?;
    Ok(b.closed)
}

#[derive(Serialize)]
struct FoldRow {
    side: &'static str,
    a: f64,
    c: f64,
    t_phi: f64,
    t_psi: f64,
    c_second_derivative: f64,
    mu_prime: f64,
}

pub fn fold_track(cx: &Session, halvings: usize) -> CliResult<bool> {
    let p = &cx.problem;
    let solver = cx.config.solver().map_err(CliError::Config)?;
    let cont = cx.config.continuation().map_err(CliError::Config)?;
    let (delta, _) = verify::find_delta(p, &cont, &solver).map_err(CliError::compute)?;
    let curves = verify::fold_curves(p, delta, halvings, &cont, &solver).map_err(CliError::compute)?;
    let mut rows = Vec::new();
    let mut plot = Plot {
        title: "fold curves".into(),
        x_label: "a".into(),
        y_label: "c".into(),
        ..Plot::default()
    };
    for curve in &curves {
        let side = match curve.side {
            Side::Negative => "minus",
            Side::Positive => "plus",
        };
        for fp in &curve.points {
            rows.push(FoldRow {
                side,
                a: fp.a(),
                c: fp.c(),
                t_phi: fp.solution.t_phi,
                t_psi: fp.solution.t_psi,
                c_second_derivative: fp.c_second_derivative,
                mu_prime: fp.mu_prime,
            });
        }
        plot.curves.push(Curve {
            points: curve.points.iter().map(|fp| (fp.a(), fp.c())).collect(),
            color: svg::INDEX_COLORS[0],
            dashed: false,
        });
    }
    if let Ok(set) = LambdaSet::build(p) {
        plot.dots.push((p.lambda1, set.c_star_minus, "#000000"));
        plot.dots.push((p.lambda1, set.c_star_plus, "#000000"));
    }
    cx.write_csv("folds.csv", &rows)?;
    cx.svg("folds.svg", &plot)?;
    println!("delta = {delta}; {} fold points", rows.len());
    Ok(true)
}

#[derive(Serialize)]
struct SweepRow {
    a: f64,
    a_rel: f64,
    closed: bool,
    points: usize,
    folds: usize,
    fold_minus: f64,
    fold_plus: f64,
    error: String,
}

pub fn sweep(cx: &Session, steps: usize) -> CliResult<bool> {
    if steps == 0 {
        return Err(CliError::Config(anyhow::anyhow!("--steps must be positive")));
    }
    let p = &cx.problem;
    let solver = cx.config.solver().map_err(CliError::Config)?;
    let cont = cx.config.continuation().map_err(CliError::Config)?;
    let rels: Vec<f64> = (1..=steps).map(|k| k as f64 / (steps + 1) as f64).collect();
    let results: Vec<_> = rels
        .par_iter()
        .map(|&r| {
            let a = p.lambda1 + r * p.gap();
            (r, a, trace_branch(p, a, &cont, &solver))
        })
        .collect();
    let mut rows = Vec::new();
    for (k, (a_rel, a, res)) in results.iter().enumerate() {
        let row = match res {
            Ok(b) => {
                table::write_branch_csv(b, &cx.path(&format!("branch_{k:03}.csv"))).map_err(CliError::Config)?;
                let folds = b.fold_c_values();
                SweepRow {
                    a: *a,
                    a_rel: *a_rel,
                    closed: b.closed,
                    points: b.len(),
                    folds: folds.len(),
                    fold_minus: folds.iter().copied().fold(f64::NAN, f64::min),
                    fold_plus: folds.iter().copied().fold(f64::NAN, f64::max),
                    error: String::new(),
                }
            }
            Err(e) => SweepRow {
                a: *a,
                a_rel: *a_rel,
                closed: false,
                points: 0,
                folds: 0,
                fold_minus: f64::NAN,
                fold_plus: f64::NAN,
                error: e.to_string(),
            },
        };
        rows.push(row);
    }
    cx.write_csv("sweep.csv", &rows)?;
    let ok = rows.iter().all(|r| r.error.is_empty() && r.closed);
    println!(
        "{} of {} branches closed",
        rows.iter().filter(|r| r.closed).count(),
        rows.len()
    );
    Ok(ok)
}

pub fn render_report(r: &VerificationReport) -> String {
    let env = &r.environment;
    let mut s = format!(
        "verification report\nn = {}  M = {}  level = {:?}  seed = {}  config = {:016x}\n\n",
        env.n, env.threshold, env.level, env.seed, env.config_hash
    );
    for c in &r.checks {
        s += &format!("[{}] {}\n", c.status.label(), c.id);
        for m in &c.measures {
            match m.tolerance {
                Some(t) => s += &format!("    {} = {:.6e}  (bound {:.3e})\n", m.name, m.value, t),
                None => s += &format!("    {} = {:.6e}\n", m.name, m.value),
            }
        }
        for n in &c.notes {
            s += &format!("    note: {n}\n");
        }
    }
    let count = |st| r.checks.iter().filter(|c| c.status == st).count();
    s += &format!(
        "\nsummary: {} pass, {} fail, {} flagged\n",
        count(Status::Pass),
        count(Status::Fail),
        count(Status::Flagged)
    );
    s
}

pub fn verify(cx: &Session, level: Option<Level>, seed: Option<u64>) -> CliResult<bool> {
    let levels = match level {
        Some(l) => vec![l],
        None => cx.config.levels().map_err(CliError::Config)?,
    };
    let mut text = String::new();
    let mut ok = true;
    for l in levels {
        let cfg = SuiteConfig {
            level: l,
            seed: seed.unwrap_or(cx.config.verify.seed),
            solver: cx.config.solver().map_err(CliError::Config)?,
            continuation: cx.config.continuation().map_err(CliError::Config)?,
        };
        let report = verify::run_suite(&cx.problem, &cfg);
        ok &= report.all_pass();
        text += &render_report(&report);
    }
    print!("{text}");
    cx.write("report.txt", &text)?;
    Ok(ok)
}

pub fn plot(cx: &Session, input: &Path, axes: Option<Axes>) -> CliResult<bool> {
    let rows = table::read_branch_csv(input).map_err(CliError::Config)?;
    let axes = axes.unwrap_or_else(|| match rows.first() {
        Some(r) => default_axes(&cx.problem, r.a),
        None => Axes::CVsTPsi,
    });
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("branch");
    let plot = svg::branch_plot(&rows, axes, stem);
    cx.svg(&format!("{stem}.svg"), &plot)?;
    Ok(true)
}
