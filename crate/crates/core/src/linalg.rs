//! Banded LU with partial pivoting and bordered solves.
//!
//! Every linear system in the crate is a banded block (the tridiagonal
//! linearization, or the interleaved two-field fold Jacobian) bordered by one
//! extra row and column. The border is eliminated by block elimination with
//! iterative refinement on the full system; a dense LU is the fallback when the
//! block has a zero pivot or refinement stalls.

use crate::error::{Error, Result};

/// Symmetric tridiagonal operator with one shared off-diagonal band.
#[derive(Debug, Clone, PartialEq)]
pub struct TridiagonalOperator {
    pub diagonal: Vec<f64>,
    pub off_diagonal: Vec<f64>,
}

impl TridiagonalOperator {
    pub fn new(diagonal: Vec<f64>, off_diagonal: Vec<f64>) -> Self {
        assert_eq!(diagonal.len(), off_diagonal.len() + 1);
        Self { diagonal, off_diagonal }
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diagonal[i] * x[i];
            if i > 0 {
                s += self.off_diagonal[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off_diagonal[i] * x[i + 1];
            }
            out[i] = s;
        }
        out
    }

    /// `self - shift * I`
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            diagonal: self.diagonal.iter().map(|d| d - shift).collect(),
            off_diagonal: self.off_diagonal.clone(),
        }
    }

    pub fn negated(&self) -> Self {
        Self {
            diagonal: self.diagonal.iter().map(|d| -d).collect(),
            off_diagonal: self.off_diagonal.iter().map(|d| -d).collect(),
        }
    }

    pub fn to_band(&self) -> BandMatrix {
        let n = self.dim();
        let mut b = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            b.set(i, i, self.diagonal[i]);
            if i + 1 < n {
                b.set(i, i + 1, self.off_diagonal[i]);
                b.set(i + 1, i, self.off_diagonal[i]);
            }
        }
        b
    }

    /// Gershgorin interval containing the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let n = self.dim();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let mut r = 0.0;
            if i > 0 {
                r += self.off_diagonal[i - 1].abs();
            }
            if i + 1 < n {
                r += self.off_diagonal[i].abs();
            }
            lo = lo.min(self.diagonal[i] - r);
            hi = hi.max(self.diagonal[i] + r);
        }
        (lo, hi)
    }
}

/// General band matrix in LAPACK-style column storage, with room for the
/// `kl` extra super-diagonals created by row interchanges.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ldab = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ldab,
            data: vec![0.0; ldab * n],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + self.kl + self.ku >= j && i <= j + self.kl);
        j * self.ldab + (self.kl + self.ku + i - j)
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        i <= j + self.kl && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i},{j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let j0 = i.saturating_sub(self.kl);
            let j1 = (i + self.ku).min(n - 1);
            let mut s = 0.0;
            for j in j0..=j1 {
                s += self.data[self.idx(i, j)] * x[j];
            }
            *o = s;
        }
        out
    }

    /// Infinity norm of the matrix.
    pub fn norm_inf(&self) -> f64 {
        let n = self.n;
        (0..n)
            .map(|i| {
                let j0 = i.saturating_sub(self.kl);
                let j1 = (i + self.ku).min(n - 1);
                (j0..=j1).map(|j| self.data[self.idx(i, j)].abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.n;
        let mut m = vec![vec![0.0; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            let j0 = i.saturating_sub(self.kl);
            let j1 = (i + self.ku).min(n - 1);
            for j in j0..=j1 {
                row[j] = self.get(i, j);
            }
        }
        m
    }

    /// LU factorization with partial pivoting. Returns `None` on an exactly
    /// zero pivot.
    pub fn factor(&self) -> Option<BandLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut a = self.clone();
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = a.data[a.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = a.data[a.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            piv[k] = p;
            if best == 0.0 || !best.is_finite() {
                return None;
            }
            let jmax = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let (x, y) = (a.idx(k, j), a.idx(p, j));
                    a.data.swap(x, y);
                }
            }
            let pivot = a.data[a.idx(k, k)];
            for i in k + 1..=last {
                let ik = a.idx(i, k);
                let l = a.data[ik] / pivot;
                a.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let kj = a.data[a.idx(k, j)];
                        let ij = a.idx(i, j);
                        a.data[ij] -= l * kj;
                    }
                }
            }
        }
        Some(BandLu { lu: a, piv })
    }
}

/// Factored band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let a = &self.lu;
        let n = a.n;
        let (kl, ku) = (a.kl, a.ku);
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= a.data[a.idx(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= a.data[a.idx(k, j)] * b[j];
            }
            b[k] = s / a.data[a.idx(k, k)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Dense LU with partial pivoting, used as the fallback path.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[p][k] == 0.0 || !a[p][k].is_finite() {
            return None;
        }
        a.swap(k, p);
        b.swap(k, p);
        let (top, rest) = a.split_at_mut(k + 1);
        let pivot_row = &top[k];
        for (off, row) in rest.iter_mut().enumerate() {
            let l = row[k] / pivot_row[k];
            if l != 0.0 {
                for j in k..n {
                    row[j] -= l * pivot_row[j];
                }
                b[k + 1 + off] -= l * b[k];
            }
        }
    }
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * b[j]).sum();
        b[k] = (b[k] - s) / a[k][k];
    }
    b.iter().all(|v| v.is_finite()).then_some(b)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Factored bordered system
///
/// ```text
/// [ A    col ] [x]   [f]
/// [ row' d   ] [y] = [g]
/// ```
///
/// where `row'x` is the plain (unweighted) dot product. `A` may be singular
/// as long as the full system is not.
#[derive(Debug, Clone)]
pub struct BorderedSystem {
    block: BandMatrix,
    row: Vec<f64>,
    col: Vec<f64>,
    corner: f64,
    method: BorderedMethod,
    scale: f64,
}

#[derive(Debug, Clone)]
enum BorderedMethod {
    Elimination { lu: BandLu, v: Vec<f64>, denom: f64 },
    Dense,
}

const REFINE_STEPS: usize = 4;
const REFINE_TOL: f64 = 1e-13;

impl BorderedSystem {
    pub fn new(block: BandMatrix, row: Vec<f64>, col: Vec<f64>, corner: f64) -> Self {
        let n = block.dim();
        assert_eq!(row.len(), n);
        assert_eq!(col.len(), n);
        let scale = block
            .norm_inf()
            .max(max_abs(&row))
            .max(max_abs(&col))
            .max(corner.abs())
            .max(f64::MIN_POSITIVE);
        let method = match block.factor() {
            Some(lu) => {
                let v = lu.solve(&col);
                let denom = corner - dot(&row, &v);
                if denom != 0.0 && denom.is_finite() && v.iter().all(|x| x.is_finite()) {
                    BorderedMethod::Elimination { lu, v, denom }
                } else {
                    BorderedMethod::Dense
                }
            }
            None => BorderedMethod::Dense,
        };
        Self {
            block,
            row,
            col,
            corner,
            method,
            scale,
        }
    }

    pub fn dim(&self) -> usize {
        self.block.dim()
    }

    fn residual(&self, x: &[f64], y: f64, f: &[f64], g: f64) -> (Vec<f64>, f64) {
        let ax = self.block.apply(x);
        let r: Vec<f64> = ax
            .iter()
            .zip(f)
            .zip(&self.col)
            .map(|((a, fi), c)| fi - a - c * y)
            .collect();
        let rg = g - dot(&self.row, x) - self.corner * y;
        (r, rg)
    }

    fn eliminate(lu: &BandLu, v: &[f64], denom: f64, row: &[f64], f: &[f64], g: f64) -> (Vec<f64>, f64) {
        let mut z = lu.solve(f);
        let y = (g - dot(row, &z)) / denom;
        z.iter_mut().zip(v).for_each(|(zi, vi)| *zi -= y * vi);
        (z, y)
    }

    fn dense(&self, f: &[f64], g: f64) -> Result<(Vec<f64>, f64)> {
        let n = self.dim();
        let mut m = self.block.to_dense();
        for (i, r) in m.iter_mut().enumerate() {
            r.push(self.col[i]);
        }
        let mut last = self.row.clone();
        last.push(self.corner);
        m.push(last);
        let mut rhs = f.to_vec();
        rhs.push(g);
        let sol = dense_solve(m, rhs).ok_or(Error::SingularBorderedSystem)?;
        Ok((sol[..n].to_vec(), sol[n]))
    }

    /// Solves for `(x, y)`.
    pub fn solve(&self, f: &[f64], g: f64) -> Result<(Vec<f64>, f64)> {
        match &self.method {
            BorderedMethod::Dense => self.dense(f, g),
            BorderedMethod::Elimination { lu, v, denom } => {
                let (mut x, mut y) = Self::eliminate(lu, v, *denom, &self.row, f, g);
                let rhs_scale = max_abs(f).max(g.abs());
                for _ in 0..=REFINE_STEPS {
                    let (r, rg) = self.residual(&x, y, f, g);
                    let res = max_abs(&r).max(rg.abs());
                    let bound = REFINE_TOL * (self.scale * max_abs(&x).max(y.abs()) + rhs_scale);
                    if res <= bound {
                        return Ok((x, y));
                    }
                    if !res.is_finite() {
                        break;
                    }
                    let (dx, dy) = Self::eliminate(lu, v, *denom, &self.row, &r, rg);
                    x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
                    y += dy;
                }
                // Refinement stalled: the block is too close to singular for
                // elimination; accept the dense answer instead.
                let (r, rg) = self.residual(&x, y, f, g);
                let res = max_abs(&r).max(rg.abs());
                let (xd, yd) = self.dense(f, g)?;
                let (rd, rgd) = self.residual(&xd, yd, f, g);
                if max_abs(&rd).max(rgd.abs()) <= res || !res.is_finite() {
                    Ok((xd, yd))
                } else {
                    Ok((x, y))
                }
            }
        }
    }
}

/// One-shot bordered solve with a tridiagonal block.
pub fn bordered_solve(
    op: &TridiagonalOperator,
    border_row: &[f64],
    border_col: &[f64],
    corner: f64,
    rhs_main: &[f64],
    rhs_border: f64,
) -> Result<(Vec<f64>, f64)> {
    BorderedSystem::new(op.to_band(), border_row.to_vec(), border_col.to_vec(), corner).solve(rhs_main, rhs_border)
}
