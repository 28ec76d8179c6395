//! Eigenvalue counting and bottom eigenpairs of symmetric tridiagonal
//! operators, and the Morse index of a solution.
//!
//! Counts use the Sturm sequence (pivots of the LDLᵀ recurrence), which stays
//! well defined at shifts that sit exactly on an eigenvalue.

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::linalg::TridiagonalOperator;
use crate::model::Problem;

/// Default degeneracy band, relative to `max(1, lambda1)`.
pub const DEFAULT_TOL_DEG: f64 = 1e-8;

/// Number of eigenvalues strictly below `x`.
pub fn count_below(op: &TridiagonalOperator, x: f64) -> usize {
    let n = op.dim();
    let d = &op.diagonal;
    let e = &op.off_diagonal;
    let (glo, ghi) = op.gershgorin();
    let guard = 1e-3 * f64::EPSILON * glo.abs().max(ghi.abs()).max(1.0);
    let mut count = 0;
    let mut q = d[0] - x;
    for i in 0..n {
        if i > 0 {
            let prev = if q.abs() < guard { -guard } else { q };
            q = d[i] - x - e[i - 1] * e[i - 1] / prev;
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Inertia of `op - shift I`: eigenvalues below, within, and above the band
/// `[shift - tol, shift + tol]`.
pub fn inertia(op: &TridiagonalOperator, shift: f64, tol: f64) -> (usize, usize, usize) {
    let below = count_below(op, shift - tol);
    let upto = count_below(op, shift + tol);
    (below, upto - below, op.dim() - upto)
}

/// Eigenvalue `k` (zero based, ascending) by bisection on Sturm counts.
pub fn kth_eigenvalue(op: &TridiagonalOperator, k: usize) -> f64 {
    assert!(k < op.dim());
    let (mut lo, mut hi) = op.gershgorin();
    let pad = 1e-12 * (lo.abs().max(hi.abs()) + 1.0);
    lo -= pad;
    hi += pad;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(op, mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Eigenvector for an (already accurate) eigenvalue by inverse iteration.
pub fn inverse_iteration(op: &TridiagonalOperator, eigenvalue: f64) -> Result<Vec<f64>> {
    let n = op.dim();
    let (glo, ghi) = op.gershgorin();
    let scale = glo.abs().max(ghi.abs()).max(1.0);
    let mut offset = 1e-13 * scale;
    for _attempt in 0..6 {
        let shift = eigenvalue - offset;
        let Some(lu) = op.shifted(shift).to_band().factor() else {
            offset *= 10.0;
            continue;
        };
        // Deterministic start vector with components in every direction.
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 97) as f64 / 97.0).collect();
        let mut ok = false;
        for it in 0..8 {
            lu.solve_in_place(&mut x);
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !norm.is_finite() || norm == 0.0 {
                break;
            }
            x.iter_mut().for_each(|v| *v /= norm);
            let ax = op.apply(&x);
            let res = ax
                .iter()
                .zip(&x)
                .map(|(a, b)| (a - eigenvalue * b).abs())
                .fold(0.0, f64::max);
            if it >= 2 && res <= 1e-9 * scale {
                ok = true;
                break;
            }
        }
        if ok {
            return Ok(x);
        }
        offset *= 10.0;
    }
    Err(Error::InverseIteration { shift: eigenvalue })
}

/// Scales `w` so that `<w, w> = target_sq` under the rectangle rule with the
/// given spacing.
fn normalize(w: &mut [f64], spacing: f64, target_sq: f64) {
    let sq = spacing * w.iter().map(|v| v * v).sum::<f64>();
    let s = (target_sq / sq).sqrt();
    w.iter_mut().for_each(|v| *v *= s);
}

/// Bottom eigenpair. The eigenvector is oriented so its largest-magnitude
/// entry is positive, then scaled to `<w, w> = target_sq`.
pub fn smallest_eigenpair(op: &TridiagonalOperator, spacing: f64, target_sq: f64) -> Result<(f64, GridFunction)> {
    let lambda = kth_eigenvalue(op, 0);
    let mut w = inverse_iteration(op, lambda)?;
    let imax = (0..w.len())
        .max_by(|&i, &j| w[i].abs().total_cmp(&w[j].abs()))
        .unwrap_or(0);
    if w[imax] < 0.0 {
        w.iter_mut().for_each(|v| *v = -*v);
    }
    normalize(&mut w, spacing, target_sq);
    Ok((lambda, GridFunction(w)))
}

/// Stability data of a solution's linearization `L = -Δ_h - a + f'(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumReport {
    /// Number of eigenvalues of `L` below `-tol`.
    pub morse_index: usize,
    /// Bottom eigenvalue of `L`.
    pub smallest_eigenvalue: f64,
    /// Second eigenvalue of `L`.
    pub second_eigenvalue: f64,
    /// Eigenvalue of `L` closest to zero.
    pub nearest_zero_eigenvalue: f64,
    /// Kernel direction, present iff degenerate; `<w, w> = <phi, phi>`.
    pub kernel_vector: Option<GridFunction>,
    pub degenerate: bool,
}

/// Degeneracy band for a problem.
pub fn degeneracy_band(problem: &Problem, tol_deg: f64) -> f64 {
    tol_deg * problem.lambda1.max(1.0)
}

/// Morse index and degeneracy of `(a, u)`.
pub fn morse_index(problem: &Problem, a: f64, u: &[f64], tol_deg: f64) -> Result<SpectrumReport> {
    let op = problem.jacobian(a, u).negated();
    spectrum_of(problem, &op, tol_deg)
}

pub fn spectrum_of(problem: &Problem, op: &TridiagonalOperator, tol_deg: f64) -> Result<SpectrumReport> {
    let tol = degeneracy_band(problem, tol_deg);
    let (neg, _zero, _pos) = inertia(op, 0.0, tol);
    let smallest = kth_eigenvalue(op, 0);
    let second = if op.dim() > 1 {
        kth_eigenvalue(op, 1)
    } else {
        f64::INFINITY
    };
    // The eigenvalue nearest zero is the last negative or the first
    // non-negative one.
    let below0 = count_below(op, 0.0);
    let mut nearest = if below0 < op.dim() {
        kth_eigenvalue(op, below0)
    } else {
        f64::INFINITY
    };
    if below0 > 0 {
        let cand = kth_eigenvalue(op, below0 - 1);
        if cand.abs() < nearest.abs() {
            nearest = cand;
        }
    }
    let degenerate = nearest.abs() <= tol;
    let kernel_vector = if degenerate {
        let mut w = inverse_iteration(op, nearest)?;
        orient(problem, &mut w);
        normalize(&mut w, problem.grid.spacing(), problem.phi_sq());
        Some(GridFunction(w))
    } else {
        None
    };
    Ok(SpectrumReport {
        morse_index: neg,
        smallest_eigenvalue: smallest,
        second_eigenvalue: second,
        nearest_zero_eigenvalue: nearest,
        kernel_vector,
        degenerate,
    })
}

/// Sign convention: `<w, phi> >= 0`; when `w` is orthogonal to `phi`, the
/// first entry exceeding half the maximum magnitude is made positive.
fn orient(problem: &Problem, w: &mut [f64]) {
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot = w.iter().zip(problem.phi.iter()).map(|(a, b)| a * b).sum::<f64>();
    let phi_norm = problem.phi.iter().map(|v| v * v).sum::<f64>().sqrt();
    let flip = if dot.abs() > 1e-6 * norm * phi_norm {
        dot < 0.0
    } else {
        let m = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        w.iter().find(|v| v.abs() > 0.5 * m).is_some_and(|v| *v < 0.0)
    };
    if flip {
        w.iter_mut().for_each(|v| *v = -*v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use nalgebra::{DMatrix, SymmetricEigen};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_eigs(op: &TridiagonalOperator) -> (Vec<f64>, DMatrix<f64>) {
        let n = op.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = op.diagonal[i];
            if i + 1 < n {
                m[(i, i + 1)] = op.off_diagonal[i];
                m[(i + 1, i)] = op.off_diagonal[i];
            }
        }
        let eig = SymmetricEigen::new(m);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, idx[c])]);
        (vals, vecs)
    }

    #[test]
    fn laplacian_inertia() {
        let g = Grid::new(199).unwrap();
        let op = g.laplacian().negated();
        let mid = 0.5 * (g.eigenvalue(1) + g.eigenvalue(2));
        assert_eq!(inertia(&op, mid, 1e-8).0, 1);
        assert_eq!(inertia(&op, 0.0, 1e-8).0, 0);
    }

    #[test]
    fn diagonal_counts_match_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.gen_range(2..50);
            let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let op = TridiagonalOperator::new(d.clone(), vec![0.0; n - 1]);
            let s: f64 = rng.gen_range(-5.0..5.0);
            let neg = d.iter().filter(|&&v| v < s - 1e-9).count();
            assert_eq!(inertia(&op, s, 1e-9).0, neg);
        }
    }

    #[test]
    fn random_tridiagonal_against_dense_qr() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let n = rng.gen_range(3..=50);
            let op = TridiagonalOperator::new(
                (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect(),
                (0..n - 1).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            );
            let (vals, vecs) = dense_eigs(&op);
            for (k, v) in vals.iter().enumerate() {
                assert!((kth_eigenvalue(&op, k) - v).abs() < 1e-10);
            }
            let s = rng.gen_range(-4.0..4.0);
            let neg = vals.iter().filter(|&&v| v < s - 1e-9).count();
            assert_eq!(inertia(&op, s, 1e-9).0, neg);
            let (l0, w) = smallest_eigenpair(&op, 1.0, 1.0).unwrap();
            assert!((l0 - vals[0]).abs() < 1e-10);
            let col = vecs.column(0);
            let dot: f64 = w.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            assert!((dot.abs() - 1.0).abs() < 1e-10, "dot {dot}");
        }
    }

    #[test]
    fn bottom_of_negative_laplacian() {
        let g = Grid::new(199).unwrap();
        let op = g.laplacian().negated();
        let phi = g.eigenpair(1).unwrap().vector;
        let target = g.inner(&phi, &phi);
        let (l, w) = smallest_eigenpair(&op, g.spacing(), target).unwrap();
        assert!((l - g.eigenvalue(1)).abs() < 1e-9);
        assert!(w.sub(&phi).norm_inf() < 1e-8);
    }

    #[test]
    fn morse_index_examples() {
        let p = Problem::standard(199, 1.0).unwrap();
        let z = p.grid.zeros();
        let a = p.lambda1 + 0.5 * p.gap();
        let r = morse_index(&p, a, &z, DEFAULT_TOL_DEG).unwrap();
        assert_eq!(r.morse_index, 1);
        assert!(!r.degenerate);

        let r = morse_index(&p, 0.5 * p.lambda1, &z, DEFAULT_TOL_DEG).unwrap();
        assert_eq!(r.morse_index, 0);
        assert!(r.smallest_eigenvalue >= 0.5 * p.lambda1 - 1e-8);

        for t in [-0.9, 0.0, 0.5, 0.99] {
            let u = p.psi.scaled(t);
            let r = morse_index(&p, p.lambda2, &u, DEFAULT_TOL_DEG).unwrap();
            assert!(r.degenerate, "t={t}");
            assert_eq!(r.morse_index, 1);
            let w = r.kernel_vector.unwrap();
            let cos = p.inner(&w, &p.psi) / (p.grid.norm(&w) * p.grid.norm(&p.psi));
            assert!((cos - 1.0).abs() < 1e-10, "cos {cos}");
        }
    }

    #[test]
    fn counts_monotone_in_shift() {
        let g = Grid::new(63).unwrap();
        let op = g.laplacian().negated();
        let mut last = 0;
        for i in 0..200 {
            let s = -10.0 + i as f64 * 100.0;
            let c = inertia(&op, s, 1e-9).0;
            assert!(c >= last);
            last = c;
        }
    }
}
