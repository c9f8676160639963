//! Dense row-major `f64` matrices and vectors.
//!
//! The kernels here are plain loops written so that LLVM can vectorize them
//! (independent accumulator lanes for reductions, axpy-style row updates
//! elsewhere). Summation order is fixed, so results are reproducible bit for
//! bit regardless of how callers schedule work.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pivots smaller than this in magnitude are treated as singular.
pub const SINGULAR_PIVOT: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

fn check_finite(context: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().find(|v| !v.is_finite()) {
        Some(&value) => Err(Error::NonFinite { context, value }),
        None => Ok(()),
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("Matrix::new", (rows, cols), (data.len(), 1)));
        }
        check_finite("Matrix::new", &data)?;
        Ok(Matrix { rows, cols, data })
    }

    /// Unchecked constructor for kernel outputs. Length is still asserted.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", (i, r.len()), (0, cols)));
            }
            data.extend_from_slice(r);
        }
        Matrix::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Matrix::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vector {
        Vector {
            data: (0..self.rows).map(|r| self.data[r * self.cols + c]).collect(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_range(&self, start: usize, end: usize) -> Matrix {
        Matrix::from_raw(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }

    /// Gathers the listed rows, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix::from_raw(indices.len(), self.cols, data)
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        Ok(Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    /// In-place `self += factor * I`.
    pub fn add_to_diagonal(&mut self, factor: f64) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self[(i, i)] += factor;
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn mul_vec(&self, v: &Vector) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::shape("mul_vec", self.shape(), (v.len(), 1)));
        }
        Ok(Vector {
            data: (0..self.rows).map(|r| dot(self.row(r), v.as_slice())).collect(),
        })
    }

    /// Largest absolute entrywise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Largest asymmetry `|m_ij - m_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        check_finite("Vector::new", &data)?;
        Ok(Vector { data })
    }

    pub(crate) fn from_raw(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn zeros(len: usize) -> Self {
        Vector { data: vec![0.0; len] }
    }

    /// Standard basis vector `e_index` of length `len`.
    pub fn basis(len: usize, index: usize) -> Self {
        let mut v = Vector::zeros(len);
        v.data[index] = 1.0;
        v
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(self.len(), other.len(), "dot length mismatch");
        dot(&self.data, &other.data)
    }

    pub fn scale(&self, factor: f64) -> Vector {
        Vector {
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add(&self, other: &Vector) -> Vector {
        assert_eq!(self.len(), other.len(), "add length mismatch");
        Vector {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        assert_eq!(self.len(), other.len(), "sub length mismatch");
        Vector {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &Vector) -> f64 {
        assert_eq!(self.len(), other.len(), "max_abs_diff length mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.data
    }
}

/// Dot product with eight independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    let (a_head, a_tail) = a.split_at(chunks * 8);
    let (b_head, b_tail) = b.split_at(chunks * 8);
    for (ca, cb) in a_head.chunks_exact(8).zip(b_head.chunks_exact(8)) {
        for i in 0..8 {
            acc[i] += ca[i] * cb[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a_tail.iter().zip(b_tail) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out += factor * x`
#[inline]
pub fn axpy(factor: f64, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += factor * v;
    }
}

/// `c = alpha · op(a) · op(b) + beta · c` on row-major buffers; a
/// transposed operand is expressed through swapped strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], (rsa, csa): (usize, usize), b: &[f64], (rsb, csb): (usize, usize), beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the callers check shapes, so every strided index stays inside
    // the slices; `c` is a distinct, dense m × n row-major buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Standard matrix product `a × b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(a.rows, a.cols, b.cols, &a.data, (a.cols, 1), &b.data, (b.cols, 1), 0.0, &mut out.data);
    Ok(out)
}

/// `a × bᵀ`. Used for `X · Wᵀ` with weights stored fan_out × fan_in.
pub fn matmul_transb(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(Error::shape("matmul_transb", a.shape(), b.shape()));
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    gemm(a.rows, a.cols, b.rows, &a.data, (a.cols, 1), &b.data, (1, b.cols), 0.0, &mut out.data);
    Ok(out)
}

/// `out += aᵀ × b`.
pub fn matmul_transa_acc(a: &Matrix, b: &Matrix, out: &mut Matrix) -> Result<()> {
    if a.rows != b.rows || out.shape() != (a.cols, b.cols) {
        return Err(Error::shape("matmul_transa_acc", a.shape(), b.shape()));
    }
    gemm(a.cols, a.rows, b.cols, &a.data, (1, a.cols), &b.data, (b.cols, 1), 1.0, &mut out.data);
    Ok(())
}

pub fn outer(x: &Vector, y: &Vector) -> Matrix {
    let mut out = Matrix::zeros(x.len(), y.len());
    for (i, &xi) in x.as_slice().iter().enumerate() {
        axpy(xi, y.as_slice(), out.row_mut(i));
    }
    out
}

/// LU factorization with partial pivoting, `P·M = L·U`.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn new(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::shape("lu", m.shape(), (m.cols, m.rows)));
        }
        let n = m.rows;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (pivot_row, magnitude) = (k..n)
                .map(|r| (r, lu[r * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if magnitude < SINGULAR_PIVOT {
                return Err(Error::Singular { pivot: k, magnitude });
            }
            if pivot_row != k {
                for c in 0..n {
                    lu.swap(k * n + c, pivot_row * n + c);
                }
                perm.swap(k, pivot_row);
            }
            let pivot = lu[k * n + k];
            for r in (k + 1)..n {
                let factor = lu[r * n + k] / pivot;
                lu[r * n + k] = factor;
                if factor != 0.0 {
                    let (upper, lower) = lu.split_at_mut(r * n);
                    axpy(-factor, &upper[k * n + k + 1..k * n + n], &mut lower[k + 1..n]);
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &Vector) -> Result<Vector> {
        if rhs.len() != self.n {
            return Err(Error::shape("lu_solve", (self.n, self.n), (rhs.len(), 1)));
        }
        Ok(Vector::from_raw(self.solve_slice(rhs.as_slice())))
    }

    fn solve_slice(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            let s = dot(&self.lu[i * n..i * n + i], &x[..i]);
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let s = dot(&self.lu[i * n + i + 1..(i + 1) * n], &x[i + 1..]);
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }

    pub fn inverse(&self) -> Matrix {
        let n = self.n;
        let mut out = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            let col = self.solve_slice(&e);
            for (r, v) in col.into_iter().enumerate() {
                out.data[r * n + c] = v;
            }
        }
        out
    }
}

/// Inverse by partial-pivot Gaussian elimination.
pub fn dense_inverse(m: &Matrix) -> Result<Matrix> {
    Ok(Lu::new(m)?.inverse())
}

pub fn solve(m: &Matrix, rhs: &Vector) -> Result<Vector> {
    Lu::new(m)?.solve(rhs)
}

/// `xᵀ M⁻¹ y`, computed through a linear solve.
pub fn quadratic_form(x: &Vector, m: &Matrix, y: &Vector) -> Result<f64> {
    if !m.is_square() || x.len() != m.rows || y.len() != m.rows {
        return Err(Error::shape("quadratic_form", m.shape(), (x.len(), y.len())));
    }
    Ok(x.dot(&solve(m, y)?))
}

/// Cholesky factor `L` with `M = L·Lᵀ`; fails with `NotPositiveDefinite` on a
/// non-positive pivot.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::shape("cholesky", m.shape(), (m.cols, m.rows)));
    }
    let n = m.rows;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let d = m[(j, j)] - dot(&l.row(j)[..j], &l.row(j)[..j]);
        if d <= 0.0 || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { denominator: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let s = m[(i, j)] - dot(&l.row(i)[..j], &l.row(j)[..j]);
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let b = random_matrix(rng, n, n);
        let mut m = matmul(&b, &b.transpose()).unwrap();
        m.add_to_diagonal(n as f64 * 0.5);
        m
    }

    fn triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a[(i, k)] * b[(k, j)];
                }
                out[(i, j)] = s;
            }
        }
        out
    }

    #[test]
    fn construction_rejects_bad_input() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { .. })
        ));
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn matmul_identity_and_hand_sum() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);
        let ones = Matrix::from_rows(&[&[1.0], &[1.0]]).unwrap();
        let p = matmul(&m, &ones).unwrap();
        assert_eq!(p.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_matrix(&mut rng, 5, 4);
        let b = random_matrix(&mut rng, 4, 3);
        let fast = matmul(&a, &b).unwrap();
        assert_eq!(fast.shape(), (5, 3));
        assert!(fast.max_abs_diff(&triple_loop(&a, &b)) < 1e-12);
    }

    #[test]
    fn transposed_kernels_match_plain_matmul() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 7, 19);
        let b = random_matrix(&mut rng, 11, 19);
        let expect = triple_loop(&a, &b.transpose());
        assert!(matmul_transb(&a, &b).unwrap().max_abs_diff(&expect) < 1e-12);

        let c = random_matrix(&mut rng, 7, 5);
        let mut acc = Matrix::zeros(19, 5);
        matmul_transa_acc(&a, &c, &mut acc).unwrap();
        assert!(acc.max_abs_diff(&triple_loop(&a.transpose(), &c)) < 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(dense_inverse(&Matrix::identity(3)).unwrap(), Matrix::identity(3));

        let m = Matrix::from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]).unwrap();
        let inv = dense_inverse(&m).unwrap();
        let expect = Matrix::from_rows(&[&[2.0 / 3.0, -1.0 / 3.0], &[-1.0 / 3.0, 2.0 / 3.0]]).unwrap();
        assert!(inv.max_abs_diff(&expect) < 1e-15);
        assert!(matmul(&m, &inv).unwrap().max_abs_diff(&Matrix::identity(2)) < 1e-15);

        let singular = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
        assert!(matches!(dense_inverse(&singular), Err(Error::Singular { pivot: 1, .. })));
    }

    #[test]
    fn inverse_needs_pivoting() {
        let m = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        assert_eq!(dense_inverse(&m).unwrap(), m);
    }

    #[test]
    fn quadratic_form_examples() {
        let e1 = Vector::basis(2, 0);
        assert_eq!(quadratic_form(&e1, &Matrix::identity(2), &e1).unwrap(), 1.0);
        let ones = Vector::new(vec![1.0, 1.0]).unwrap();
        let diag = Matrix::from_diagonal(&[2.0, 2.0]);
        assert_eq!(quadratic_form(&ones, &diag, &ones).unwrap(), 1.0);
    }

    #[test]
    fn quadratic_form_matches_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_spd(&mut rng, 6);
        let x = Vector::new((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = Vector::new((0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let via_inverse = x.dot(&dense_inverse(&m).unwrap().mul_vec(&y).unwrap());
        assert!((quadratic_form(&x, &m, &y).unwrap() - via_inverse).abs() < 1e-9);
    }

    #[test]
    fn cholesky_detects_indefinite() {
        let m = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&m), Err(Error::NotPositiveDefinite { .. })));
        let spd = Matrix::from_rows(&[&[4.0, 2.0], &[2.0, 3.0]]).unwrap();
        let l = cholesky(&spd).unwrap();
        assert!(matmul(&l, &l.transpose()).unwrap().max_abs_diff(&spd) < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop, prop_assert, proptest, ProptestConfig};

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn inverse_is_two_sided(seed in any::<u64>(), n in 1usize..10) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut m = random_matrix(&mut rng, n, n);
                m.add_to_diagonal(n as f64);
                let inv = dense_inverse(&m).unwrap();
                let eye = Matrix::identity(n);
                prop_assert!(matmul(&m, &inv).unwrap().max_abs_diff(&eye) < 1e-9);
                prop_assert!(matmul(&inv, &m).unwrap().max_abs_diff(&eye) < 1e-9);
            }

            #[test]
            fn matmul_is_associative(seed in any::<u64>(), dims in prop::array::uniform4(1usize..8)) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let a = random_matrix(&mut rng, dims[0], dims[1]);
                let b = random_matrix(&mut rng, dims[1], dims[2]);
                let c = random_matrix(&mut rng, dims[2], dims[3]);
                let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
                let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
                prop_assert!(left.max_abs_diff(&right) < 1e-9);
            }

            #[test]
            fn quadratic_form_agrees_with_inverse(seed in any::<u64>(), n in 1usize..10) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_spd(&mut rng, n);
                let x = Vector::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let y = Vector::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
                let direct = x.dot(&dense_inverse(&m).unwrap().mul_vec(&y).unwrap());
                prop_assert!((quadratic_form(&x, &m, &y).unwrap() - direct).abs() < 1e-9);
            }
        }
    }
}
