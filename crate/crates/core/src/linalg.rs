//! Sparse storage, cached factorizations and the small dense kernels used
//! throughout the solver.

use nalgebra::linalg::LU;
use nalgebra::{DMatrix, Dyn};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::CscMatrix;

use crate::error::{invalid, Error, Result};

/// Compressed-row sparse matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    /// Builds a matrix from unordered triplets; duplicate entries are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|a| (a.0, a.1));
        let mut row_offsets = vec![0usize; nrows + 1];
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(c);
                values.push(v);
                row_offsets[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self { nrows, ncols, row_offsets, col_indices, values }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_offsets: vec![0; nrows + 1], col_indices: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0)).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column ids and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let range = self.row_offsets[r]..self.row_offsets[r + 1];
        (&self.col_indices[range.clone()], &self.values[range])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_add_into(1.0, x, &mut y);
        y
    }

    /// `y += alpha * A x`
    pub fn mul_add_into(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (r, yr) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c];
            }
            *yr += alpha * acc;
        }
    }

    /// `y += alpha * Aᵀ x`
    pub fn transpose_mul_add_into(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                y[c] += alpha * v * xr;
            }
        }
    }

    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.ncols];
        self.transpose_mul_add_into(1.0, x, &mut y);
        y
    }

    /// `Y += alpha * A X` for column-major dense blocks.
    pub fn mul_dense_add_into(&self, alpha: f64, x: &DMatrix<f64>, y: &mut DMatrix<f64>) {
        debug_assert_eq!(x.nrows(), self.ncols);
        debug_assert_eq!(y.nrows(), self.nrows);
        debug_assert_eq!(x.ncols(), y.ncols());
        for col in 0..x.ncols() {
            let xc = x.column(col);
            let xs = xc.as_slice();
            let mut yc = y.column_mut(col);
            let ys = yc.as_mut_slice();
            self.mul_add_into(alpha, xs, ys);
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.ncols, self.nrows, self.triplets().map(|(r, c, v)| (c, r, v)).collect())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= factor);
        out
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, other: &Self, factor: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let triplets = self.triplets().chain(other.triplets().map(|(r, c, v)| (r, c, factor * v))).collect();
        Self::from_triplets(self.nrows, self.ncols, triplets)
    }

    /// `self · other` (sparse-sparse product).
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut triplets = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut mark = vec![false; other.ncols];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (ocols, ovals) = other.row(k);
                for (&c, &b) in ocols.iter().zip(ovals) {
                    if !mark[c] {
                        mark[c] = true;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            for &c in &touched {
                triplets.push((r, c, acc[c]));
                acc[c] = 0.0;
                mark[c] = false;
            }
            touched.clear();
        }
        Self::from_triplets(self.nrows, other.ncols, triplets)
    }

    /// Extracts the rows `rows` and columns `cols` (both given as indices of
    /// `self`), renumbered in the order they are listed.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        let mut col_map = vec![usize::MAX; self.ncols];
        for (local, &c) in cols.iter().enumerate() {
            col_map[c] = local;
        }
        let mut triplets = Vec::new();
        for (lr, &r) in rows.iter().enumerate() {
            let (cs, vs) = self.row(r);
            for (&c, &v) in cs.iter().zip(vs) {
                let lc = col_map[c];
                if lc != usize::MAX {
                    triplets.push((lr, lc, v));
                }
            }
        }
        Self::from_triplets(rows.len(), cols.len(), triplets)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            out[(r, c)] += v;
        }
        out
    }

    /// Largest `|a_ij - a_ji|` relative to the largest magnitude entry.
    pub fn relative_asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        self.triplets().map(|(r, c, v)| (v - self.get(c, r)).abs()).fold(0.0, f64::max) / scale
    }

    fn to_csc_symmetric(&self) -> Result<CscMatrix<f64>> {
        // For a symmetric matrix the CSR arrays are also valid CSC arrays.
        CscMatrix::try_from_csc_data(
            self.ncols,
            self.nrows,
            self.row_offsets.clone(),
            self.col_indices.clone(),
            self.values.clone(),
        )
        .map_err(|e| Error::NumericalFailure(format!("cannot convert matrix to CSC: {e}")))
    }
}

/// Sparse Cholesky factorization of a symmetric positive definite operator.
pub struct SpdFactor {
    n: usize,
    chol: CscCholesky<f64>,
}

impl SpdFactor {
    pub fn new(matrix: &SparseOperator) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return invalid(format!("cannot factor a {}x{} matrix", matrix.nrows(), matrix.ncols()));
        }
        let csc = matrix.to_csc_symmetric()?;
        let chol = CscCholesky::factor(&csc)
            .map_err(|e| Error::NumericalFailure(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(Self { n: matrix.nrows(), chol })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        self.chol.solve_mut(nalgebra::DMatrixViewMut::from_slice(b, self.n, 1));
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Solves for every column of `b` in place.
    pub fn solve_columns(&self, b: &mut DMatrix<f64>) {
        assert_eq!(b.nrows(), self.n);
        if b.ncols() == 0 {
            return;
        }
        self.chol.solve_mut(b);
    }
}

/// Pivoted dense LU with a singularity check on the pivots.
pub struct DenseLu {
    lu: LU<f64, Dyn, Dyn>,
    n: usize,
}

impl DenseLu {
    /// Factors `matrix`; `context` is used in the error message when the
    /// matrix is numerically singular.
    pub fn new(matrix: DMatrix<f64>, context: &str) -> Result<Self> {
        if !matrix.is_square() {
            return invalid(format!("{context}: matrix is not square"));
        }
        let n = matrix.nrows();
        let lu = matrix.lu();
        let u = lu.u();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let p = u[(i, i)].abs();
            lo = lo.min(p);
            hi = hi.max(p);
        }
        if n > 0 && (!lo.is_finite() || lo <= 1e-14 * hi || hi == 0.0) {
            return Err(Error::NumericalFailure(format!("{context}: singular matrix (pivot ratio {:.3e})", lo / hi)));
        }
        Ok(Self { lu, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = nalgebra::DVector::from_column_slice(b);
        let x = self.lu.solve(&rhs).expect("factor checked for singularity");
        x.as_slice().to_vec()
    }
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations,
/// returned in ascending order.
pub fn symmetric_eigenvalues(matrix: &DMatrix<f64>) -> Vec<f64> {
    let n = matrix.nrows();
    assert!(matrix.is_square());
    let mut a = matrix.clone();
    // symmetrize against round-off from Gram assembly
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)].powi(2))
            .sum();
        let diag: f64 = (0..n).map(|i| a[(i, i)].powi(2)).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Largest `λ` with `numerator x = λ denominator x`, both symmetric and the
/// denominator positive definite. Solved through the Cholesky-transformed
/// standard problem.
pub fn max_generalized_eigenvalue(numerator: &DMatrix<f64>, denominator: &DMatrix<f64>) -> Result<f64> {
    let n = denominator.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let den_eigs = symmetric_eigenvalues(denominator);
    let (lo, hi) = (den_eigs[0], den_eigs[n - 1]);
    if hi <= 0.0 || lo <= 1e-14 * hi {
        return Err(Error::NumericalFailure(format!(
            "degenerate denominator Gram matrix (eigenvalues {lo:.3e} .. {hi:.3e})"
        )));
    }
    let chol = denominator
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NumericalFailure("denominator Gram matrix not positive definite".into()))?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse().ok_or_else(|| Error::NumericalFailure("singular Cholesky factor".into()))?;
    let transformed = &l_inv * numerator * l_inv.transpose();
    Ok(*symmetric_eigenvalues(&transformed).last().unwrap())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}
