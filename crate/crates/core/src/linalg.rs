//! Sparse storage, direct factorizations (via faer), incomplete LU and
//! restarted GMRES.

use crate::{Error, Result, C64};
use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use num_complex::ComplexFloat;
use std::collections::BTreeMap;
use std::ops::{AddAssign, Mul};

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub values: Vec<T>,
}

pub trait Scalar: Copy + Default + AddAssign + Mul<Output = Self> + PartialEq + Send + Sync + 'static {}
impl Scalar for f64 {}
impl Scalar for C64 {}

impl<T: Scalar> Csr<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Csr {
            nrows,
            ncols,
            indptr: vec![0; nrows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![T::default(); triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            cols[next[r]] = c;
            vals[next[r]] = v;
            next[r] += 1;
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let (lo, hi) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(lo..hi);
            order.sort_by_key(|&i| cols[i]);
            let mut last = usize::MAX;
            for &i in &order {
                if cols[i] == last {
                    *values.last_mut().unwrap() += vals[i];
                } else {
                    indices.push(cols[i]);
                    values.push(vals[i]);
                    last = cols[i];
                }
            }
            indptr.push(indices.len());
        }
        Csr {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        self.indices[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (lo, hi) = (self.indptr[i], self.indptr[i + 1]);
        match self.indices[lo..hi].binary_search(&j) {
            Ok(p) => self.values[lo + p],
            Err(_) => T::default(),
        }
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                out.push((i, j, v));
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let t: Vec<_> = self.triplets().into_iter().map(|(i, j, v)| (j, i, v)).collect();
        Csr::from_triplets(self.ncols, self.nrows, &t)
    }

    /// `y = A x` for any vector type the entries can scale.
    pub fn matvec<U>(&self, x: &[U]) -> Vec<U>
    where
        U: Copy + Default + AddAssign + Mul<T, Output = U>,
    {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![U::default(); self.nrows];
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = U::default();
            for p in self.indptr[i]..self.indptr[i + 1] {
                acc += x[self.indices[p]] * self.values[p];
            }
            *yi = acc;
        }
        y
    }

    /// Rows and columns picked by index maps (`usize::MAX` drops an index).
    pub fn select(&self, row_map: &[usize], n_rows: usize, col_map: &[usize], n_cols: usize) -> Self {
        let mut t = Vec::new();
        for i in 0..self.nrows {
            let ri = row_map[i];
            if ri == usize::MAX {
                continue;
            }
            for (j, v) in self.row(i) {
                let cj = col_map[j];
                if cj != usize::MAX {
                    t.push((ri, cj, v));
                }
            }
        }
        Csr::from_triplets(n_rows, n_cols, &t)
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::default(); self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            d[i][j] = v;
        }
        d
    }
}

impl Csr<f64> {
    pub fn to_complex(&self) -> Csr<C64> {
        Csr {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|&v| C64::new(v, 0.0)).collect(),
        }
    }
}

fn to_faer<T>(a: &Csr<T>) -> Result<SparseColMat<usize, T>>
where
    T: Scalar + faer::traits::ComplexField,
{
    let t: Vec<Triplet<usize, usize, T>> = a.triplets().into_iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    SparseColMat::try_new_from_triplets(a.nrows, a.ncols, &t).map_err(|e| Error::Shape(format!("sparse build failed: {e:?}")))
}

/// Sparse LU with partial pivoting.
pub struct SparseLu<T: faer::traits::ComplexField> {
    n: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, T>,
}

impl<T> SparseLu<T>
where
    T: Scalar + faer::traits::ComplexField,
{
    pub fn new(a: &Csr<T>) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::Shape("LU of a non-square matrix".into()));
        }
        let m = to_faer(a)?;
        let lu = m.sp_lu().map_err(|e| Error::Singular {
            alpha: f64::NAN,
            message: format!("sparse LU failed: {e:?}"),
        })?;
        Ok(SparseLu { n: a.nrows, lu })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        assert_eq!(b.len(), self.n);
        let rhs = Mat::<T>::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve_mat(&self, b: &Mat<T>) -> Mat<T> {
        self.lu.solve(b)
    }
}

impl SparseLu<f64> {
    /// Solves a real system with a complex right-hand side.
    pub fn solve_complex(&self, b: &[C64]) -> Vec<C64> {
        let rhs = Mat::<f64>::from_fn(self.n, 2, |i, j| if j == 0 { b[i].re } else { b[i].im });
        let x = self.lu.solve(&rhs);
        (0..self.n).map(|i| C64::new(x[(i, 0)], x[(i, 1)])).collect()
    }
}

pub fn norm2(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn dotc(x: &[C64], y: &[C64]) -> C64 {
    // sum conj(x_i) y_i
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Restart length, tolerance and iteration cap of [`gmres`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmresConfig {
    pub tol: f64,
    pub restart: usize,
    pub max_iter: usize,
}

impl Default for GmresConfig {
    fn default() -> Self {
        GmresConfig {
            tol: 1e-10,
            restart: 50,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmresResult {
    pub x: Vec<C64>,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Right-preconditioned restarted GMRES. `op(x, y)` writes `y = A x`,
/// `precond(v)` returns an approximation of `A^{-1} v`. The residual
/// reported is relative to `|b|`.
pub fn gmres<F, P>(op: F, precond: P, b: &[C64], config: &GmresConfig) -> Result<GmresResult>
where
    F: Fn(&[C64], &mut [C64]),
    P: Fn(&[C64]) -> Vec<C64>,
{
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = vec![C64::new(0.0, 0.0); n];
    let mut history = Vec::new();
    if bnorm == 0.0 {
        return Ok(GmresResult {
            x,
            iterations: 0,
            residual: 0.0,
            history,
        });
    }
    let m = config.restart.max(1);
    let mut total = 0usize;
    let mut ax = vec![C64::new(0.0, 0.0); n];
    loop {
        op(&x, &mut ax);
        let r: Vec<C64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm2(&r);
        let rel = beta / bnorm;
        history.push(rel);
        if rel <= config.tol {
            return Ok(GmresResult {
                x,
                iterations: total,
                residual: rel,
                history,
            });
        }
        if total >= config.max_iter {
            return Err(Error::NonConvergence {
                iterations: total,
                residual: rel,
                history,
            });
        }
        let mut v: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        let mut z: Vec<Vec<C64>> = Vec::with_capacity(m);
        v.push(r.iter().map(|c| c / beta).collect());
        let mut h = vec![vec![C64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![C64::new(0.0, 0.0); m];
        let mut sn = vec![C64::new(0.0, 0.0); m];
        let mut g = vec![C64::new(0.0, 0.0); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut steps = 0;
        for j in 0..m {
            let zj = precond(&v[j]);
            let mut w = vec![C64::new(0.0, 0.0); n];
            op(&zj, &mut w);
            z.push(zj);
            for i in 0..=j {
                let hij = dotc(&v[i], &w);
                h[i][j] = hij;
                for (wk, vk) in w.iter_mut().zip(&v[i]) {
                    *wk -= hij * vk;
                }
            }
            let hn = norm2(&w);
            h[j + 1][j] = C64::new(hn, 0.0);
            for i in 0..j {
                let t = cs[i].conj() * h[i][j] + sn[i].conj() * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let (a, bb) = (h[j][j], h[j + 1][j]);
            let den = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if den == 0.0 {
                cs[j] = C64::new(1.0, 0.0);
                sn[j] = C64::new(0.0, 0.0);
            } else {
                cs[j] = a / den;
                sn[j] = bb / den;
            }
            h[j][j] = cs[j].conj() * a + sn[j].conj() * bb;
            h[j + 1][j] = C64::new(0.0, 0.0);
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j].conj() * g[j];
            steps = j + 1;
            total += 1;
            let est = g[j + 1].abs() / bnorm;
            if est <= config.tol || total >= config.max_iter || hn == 0.0 {
                break;
            }
            v.push(w.iter().map(|c| c / hn).collect());
        }
        // back substitution
        let mut y = vec![C64::new(0.0, 0.0); steps];
        for i in (0..steps).rev() {
            let mut s = g[i];
            for k in (i + 1)..steps {
                s -= h[i][k] * y[k];
            }
            y[i] = s / h[i][i];
        }
        for (k, yk) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[k]) {
                *xi += yk * zi;
            }
        }
    }
}

/// Fill policy for the incomplete factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IluFill {
    /// ILU(0): keep the sparsity pattern of the matrix.
    Zero,
    /// ILU(k) by level of fill.
    Level(usize),
}

/// Incomplete LU factors stored row-wise: strictly lower part of L (unit
/// diagonal) and upper part of U including the diagonal.
#[derive(Debug, Clone)]
pub struct Ilu {
    n: usize,
    lower: Vec<Vec<(usize, C64)>>,
    upper: Vec<Vec<(usize, C64)>>,
    diag: Vec<C64>,
}

impl Ilu {
    pub fn new(a: &Csr<C64>, fill: IluFill) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::Shape("ILU of a non-square matrix".into()));
        }
        let max_level = match fill {
            IluFill::Zero => 0,
            IluFill::Level(k) => k,
        };
        let n = a.nrows;
        let mut lower: Vec<Vec<(usize, C64)>> = Vec::with_capacity(n);
        let mut upper: Vec<Vec<(usize, C64)>> = Vec::with_capacity(n);
        let mut upper_level: Vec<Vec<usize>> = Vec::with_capacity(n);
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            let mut w: BTreeMap<usize, (C64, usize)> = a.row(i).map(|(j, v)| (j, (v, 0))).collect();
            w.entry(i).or_insert((C64::new(0.0, 0.0), 0));
            let mut cursor = 0usize;
            loop {
                let next = w.range(cursor..i).next().map(|(&k, &(v, l))| (k, v, l));
                let Some((k, wk, lk)) = next else { break };
                let lik = wk / diag[k];
                w.insert(k, (lik, lk));
                for (idx, &(j, ukj)) in upper[k].iter().enumerate() {
                    let lev = lk + upper_level[k][idx] + 1;
                    match w.get_mut(&j) {
                        Some(e) => {
                            e.0 -= lik * ukj;
                            e.1 = e.1.min(lev);
                        }
                        None => {
                            if lev <= max_level {
                                w.insert(j, (-lik * ukj, lev));
                            }
                        }
                    }
                }
                cursor = k + 1;
            }
            let mut lo = Vec::new();
            let mut up = Vec::new();
            let mut up_lev = Vec::new();
            let mut d = C64::new(0.0, 0.0);
            for (j, (v, l)) in w {
                if j < i {
                    lo.push((j, v));
                } else if j == i {
                    d = v;
                } else {
                    up.push((j, v));
                    up_lev.push(l);
                }
            }
            if d.norm() < 1e-300 {
                return Err(Error::Singular {
                    alpha: f64::NAN,
                    message: format!("zero pivot in incomplete factorization at row {i}"),
                });
            }
            lower.push(lo);
            upper.push(up);
            upper_level.push(up_lev);
            diag.push(d);
        }
        Ok(Ilu { n, lower, upper, diag })
    }

    pub fn apply(&self, b: &[C64]) -> Vec<C64> {
        let mut y = b.to_vec();
        for i in 0..self.n {
            let mut s = y[i];
            for &(j, l) in &self.lower[i] {
                s -= l * y[j];
            }
            y[i] = s;
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for &(j, u) in &self.upper[i] {
                s -= u * y[j];
            }
            y[i] = s / self.diag[i];
        }
        y
    }
}
