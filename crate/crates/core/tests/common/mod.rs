//! Dense oracles built on nalgebra, sharing nothing with the library
//! beyond the problem data.

#![allow(dead_code)]

use logistic_harvest::Problem;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense `-Δ_h`.
pub fn dense_neg_laplacian(n: usize) -> DMatrix<f64> {
    let h = 1.0 / (n + 1) as f64;
    let s = 1.0 / (h * h);
    DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0 * s,
        1 => -s,
        _ => 0.0,
    })
}

pub fn dense_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn f(m: f64, u: f64) -> (f64, f64) {
    let d = (u - m).max(0.0);
    (d * d * d, 3.0 * d * d)
}

pub struct Oracle<'a> {
    pub problem: &'a Problem,
    lap: DMatrix<f64>,
    h: DVector<f64>,
}

impl<'a> Oracle<'a> {
    /// Assumes the default competition term `((u - M)^+)^3`.
    pub fn new(problem: &'a Problem) -> Self {
        assert_eq!(problem.f.power(), 3);
        assert_eq!(problem.f.kappa(), 1.0);
        let n = problem.n();
        Self {
            problem,
            lap: -dense_neg_laplacian(n),
            h: DVector::from_column_slice(problem.h.values()),
        }
    }

    pub fn residual(&self, a: f64, u: &DVector<f64>, c: f64) -> DVector<f64> {
        let m = self.problem.threshold();
        let fu = u.map(|v| f(m, v).0);
        &self.lap * u + u * a - fu - &self.h * c
    }

    /// Damped dense Newton; `None` without convergence to `1e-9`.
    pub fn newton(&self, a: f64, c: f64, guess: &DVector<f64>) -> Option<DVector<f64>> {
        let m = self.problem.threshold();
        let mut u = guess.clone();
        let mut r = self.residual(a, &u, c);
        for _ in 0..60 {
            let rn = r.amax();
            if rn <= 1e-9 {
                return Some(u);
            }
            let mut j = self.lap.clone();
            for i in 0..u.len() {
                j[(i, i)] += a - f(m, u[i]).1;
            }
            let du = j.lu().solve(&(-&r))?;
            let mut lambda = 1.0;
            loop {
                let trial = &u + &du * lambda;
                let tr = self.residual(a, &trial, c);
                if tr.amax() < rn || lambda < 1e-3 {
                    u = trial;
                    r = tr;
                    break;
                }
                lambda *= 0.5;
            }
            if !u.amax().is_finite() || u.amax() > 1e4 {
                return None;
            }
        }
        None
    }

    /// Random smooth starts from the first four sine modes.
    pub fn random_starts(&self, count: usize, scale: f64, seed: u64) -> Vec<DVector<f64>> {
        let n = self.problem.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let coef: Vec<f64> = (0..4).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
                DVector::from_fn(n, |i, _| {
                    let x = (i + 1) as f64 / (n + 1) as f64;
                    coef.iter()
                        .enumerate()
                        .map(|(k, a)| a * ((k + 1) as f64 * std::f64::consts::PI * x).sin())
                        .sum()
                })
            })
            .collect()
    }

    /// Distinct solutions at `(a, c)` from the given starts.
    pub fn solutions(&self, a: f64, c: f64, starts: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut found: Vec<DVector<f64>> = Vec::new();
        for s in starts {
            if let Some(u) = self.newton(a, c, s) {
                if found.iter().all(|v| (v - &u).amax() > 1e-6) {
                    found.push(u);
                }
            }
        }
        found
    }

    /// Scans `c = ±k dc` outward from zero, continuing every solution found
    /// and adding random starts; returns the last `c` on each side at which
    /// a solution exists.
    pub fn fold_scan(&self, a: f64, dc: f64, seed: u64) -> (f64, f64) {
        let mut ends = [0.0; 2];
        for (side, sign) in [(0, -1.0), (1, 1.0)] {
            let mut pool: Vec<DVector<f64>> = Vec::new();
            let mut misses = 0;
            let mut k = 0usize;
            while misses < 3 && k < 100_000 {
                let c = sign * dc * k as f64;
                let mut starts = pool.clone();
                starts.extend(self.random_starts(4, 8.0, seed ^ k as u64));
                let sols = self.solutions(a, c, &starts);
                if sols.is_empty() {
                    misses += 1;
                } else {
                    misses = 0;
                    ends[side] = c;
                    pool = sols;
                }
                k += 1;
            }
        }
        (ends[0], ends[1])
    }
}
