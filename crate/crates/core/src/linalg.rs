//! Dense kernels for symmetric and symmetric positive-definite matrices.
//!
//! Dimensions here are tiny (a handful of state coordinates), so everything
//! is plain row-major storage with cyclic Jacobi for the eigenproblem.
//! [`SpdMatrix`] keeps its lower Cholesky factor alongside the entries; that
//! factor doubles as the positive-definiteness certificate and as the solver
//! behind [`quad_form`].

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Upper bound on Jacobi sweeps before reporting non-convergence.
pub const MAX_JACOBI_SWEEPS: usize = 64;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match {rows}x{cols}");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.cols.max(1)).take(self.rows).map(<[T]>::to_vec).collect()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul inner dimensions differ");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                let rrow = rhs.row(k);
                let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * rhsᵀ`.
    pub fn matmul_t(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.cols, "matmul_t inner dimensions differ");
        Self::from_fn(self.rows, rhs.rows, |i, j| dot(self.row(i), rhs.row(j)))
    }

    pub fn mat_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(self.cols, v.len(), "mat_vec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn scale(&self, a: T) -> Self {
        self.map(|x| a * x)
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// `a * x + self`, element-wise.
    pub fn axpy(&self, a: T, x: &Self) -> Self {
        assert_eq!(self.shape(), x.shape(), "axpy shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&x.data).map(|(&y, &x)| a * x + y).collect(),
        }
    }

    pub fn axpy_in_place(&mut self, a: T, x: &Self) {
        assert_eq!(self.shape(), x.shape(), "axpy shape mismatch");
        for (y, &x) in self.data.iter_mut().zip(&x.data) {
            *y += a * x;
        }
    }

    pub fn hadamard(&self, rhs: &Self) -> Self {
        assert_eq!(self.shape(), rhs.shape(), "hadamard shape mismatch");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| a * b).collect(),
        }
    }

    /// Frobenius inner product `Tr(selfᵀ rhs)`.
    pub fn frob_dot(&self, rhs: &Self) -> T {
        assert_eq!(self.shape(), rhs.shape(), "frob_dot shape mismatch");
        dot(&self.data, &rhs.data)
    }

    pub fn frobenius_norm(&self) -> T {
        self.frob_dot(self).sqrt()
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Square matrix with exactly mirrored off-diagonal entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix<T>(Mat<T>);

impl<T: Scalar> SymMatrix<T> {
    /// Symmetrizes `m` as `(m + mᵀ)/2`; the stored entries are then exactly mirrored.
    pub fn from_mat(m: Mat<T>) -> Self {
        assert!(m.is_square(), "symmetric matrix must be square");
        let n = m.rows();
        let mut m = m;
        let half = T::lit(0.5);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = (m[(i, j)] + m[(j, i)]) * half;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    /// Wraps a matrix whose lower triangle is already the mirror of the upper.
    pub(crate) fn from_mirrored(m: Mat<T>) -> Self {
        debug_assert!(m.is_square());
        debug_assert!((0..m.rows()).all(|i| (0..i).all(|j| m[(i, j)] == m[(j, i)])));
        Self(m)
    }

    pub fn zeros(n: usize) -> Self {
        Self(Mat::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(Mat::identity(n))
    }

    pub fn from_diag(d: &[T]) -> Self {
        Self(Mat::from_diag(d))
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        Self::from_mat(Mat::from_rows(rows))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn as_mat(&self) -> &Mat<T> {
        &self.0
    }

    pub fn into_mat(self) -> Mat<T> {
        self.0
    }

    pub fn scale(&self, a: T) -> Self {
        Self(self.0.scale(a))
    }

    /// `a * x + self`; symmetry is preserved entry-for-entry.
    pub fn axpy(&self, a: T, x: &Self) -> Self {
        Self(self.0.axpy(a, &x.0))
    }

    /// `P self Pᵀ`, re-symmetrized against rounding.
    pub fn congruence(&self, p: &Mat<T>) -> Self {
        Self::from_mat(p.matmul(&self.0).matmul_t(p))
    }
}

impl<T> Index<(usize, usize)> for SymMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, idx: (usize, usize)) -> &T {
        &self.0[idx]
    }
}

/// Symmetric positive-definite matrix carrying its lower Cholesky factor `L`
/// and `L⁻¹` (packed lower-triangular, row-major).
#[derive(Clone, Debug)]
pub struct SpdMatrix<T> {
    sym: SymMatrix<T>,
    chol: Mat<T>,
    chol_inv: Vec<T>,
}

#[inline]
fn packed(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

fn invert_lower<T: Scalar>(l: &Mat<T>) -> Vec<T> {
    let n = l.rows();
    let mut inv = vec![T::zero(); n * (n + 1) / 2];
    for j in 0..n {
        inv[packed(j, j)] = T::one() / l[(j, j)];
        for i in j + 1..n {
            let mut acc = T::zero();
            for k in j..i {
                acc += l[(i, k)] * inv[packed(k, j)];
            }
            inv[packed(i, j)] = -acc / l[(i, i)];
        }
    }
    inv
}

impl<T: PartialEq> PartialEq for SpdMatrix<T> {
    fn eq(&self, other: &Self) -> bool {
        self.sym == other.sym
    }
}

impl<T: Scalar> SpdMatrix<T> {
    /// Fails with [`Error::NotPositiveDefinite`] unless every Cholesky pivot is strictly positive.
    pub fn new(sym: SymMatrix<T>) -> Result<Self> {
        let chol = cholesky(sym.as_mat())?;
        let chol_inv = invert_lower(&chol);
        Ok(Self { sym, chol, chol_inv })
    }

    pub fn from_mat(m: Mat<T>) -> Result<Self> {
        Self::new(SymMatrix::from_mat(m))
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        Self::new(SymMatrix::from_rows(rows))
    }

    pub fn identity(n: usize) -> Self {
        let chol = Mat::identity(n);
        let chol_inv = invert_lower(&chol);
        Self { sym: SymMatrix::identity(n), chol, chol_inv }
    }

    pub fn scaled_identity(n: usize, c: T) -> Result<Self> {
        Self::new(SymMatrix::from_mat(Mat::identity(n).scale(c)))
    }

    pub fn from_diag(d: &[T]) -> Result<Self> {
        Self::new(SymMatrix::from_diag(d))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.sym.dim()
    }

    #[inline]
    pub fn as_sym(&self) -> &SymMatrix<T> {
        &self.sym
    }

    #[inline]
    pub fn as_mat(&self) -> &Mat<T> {
        self.sym.as_mat()
    }

    /// Lower-triangular `L` with `L Lᵀ = self`.
    #[inline]
    pub fn cholesky_factor(&self) -> &Mat<T> {
        &self.chol
    }

    /// Solves `L y = v` in place.
    pub fn forward_solve_in_place(&self, v: &mut [T]) {
        let n = self.dim();
        assert_eq!(v.len(), n, "dimension mismatch");
        let l = &self.chol;
        for i in 0..n {
            let mut acc = v[i];
            for k in 0..i {
                acc -= l[(i, k)] * v[k];
            }
            v[i] = acc / l[(i, i)];
        }
    }

    /// Solves `Lᵀ x = y` in place.
    pub fn backward_solve_in_place(&self, v: &mut [T]) {
        let n = self.dim();
        assert_eq!(v.len(), n, "dimension mismatch");
        let l = &self.chol;
        for i in (0..n).rev() {
            let mut acc = v[i];
            for k in (i + 1)..n {
                acc -= l[(k, i)] * v[k];
            }
            v[i] = acc / l[(i, i)];
        }
    }

    /// `L⁻¹` in packed lower-triangular row-major order (`n(n+1)/2` entries).
    #[inline]
    pub fn inverse_cholesky_packed(&self) -> &[T] {
        &self.chol_inv
    }

    /// `self⁻¹ v` by two triangular solves.
    pub fn solve(&self, v: &[T]) -> Vec<T> {
        let mut x = v.to_vec();
        self.forward_solve_in_place(&mut x);
        self.backward_solve_in_place(&mut x);
        x
    }

    /// `L⁻¹ X L⁻ᵀ`, the whitened form of a symmetric matrix.
    pub fn whiten(&self, x: &SymMatrix<T>) -> SymMatrix<T> {
        let n = self.dim();
        assert_eq!(x.dim(), n, "dimension mismatch");
        let w = &self.chol_inv;
        let x = x.as_mat();
        // Y = L⁻¹ X.
        let mut y: Mat<T> = Mat::zeros(n, n);
        for i in 0..n {
            let wi = &w[packed(i, 0)..=packed(i, i)];
            for (k, &wik) in wi.iter().enumerate() {
                let xk = x.row(k);
                for j in 0..n {
                    y[(i, j)] += wik * xk[j];
                }
            }
        }
        // Z = Y L⁻ᵀ, lower triangle then mirrored.
        let mut z: Mat<T> = Mat::zeros(n, n);
        for i in 0..n {
            let yi = y.row(i);
            for j in 0..=i {
                let wj = &w[packed(j, 0)..=packed(j, j)];
                let v = yi.iter().zip(wj).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                z[(i, j)] = v;
                z[(j, i)] = v;
            }
        }
        SymMatrix::from_mirrored(z)
    }

    pub fn inverse(&self) -> SymMatrix<T> {
        let n = self.dim();
        let mut inv = Mat::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|x| *x = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        SymMatrix::from_mat(inv)
    }

    pub fn eigen(&self) -> Result<SymEigen<T>> {
        sym_eig(&self.sym)
    }
}

/// Lower Cholesky factor; errors unless every pivot is strictly positive.
pub fn cholesky<T: Scalar>(a: &Mat<T>) -> Result<Mat<T>> {
    assert!(a.is_square(), "cholesky of non-square matrix");
    let n = a.rows();
    let mut l = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Eigendecomposition `A = V diag(λ) Vᵀ` with eigenvalues ascending and
/// eigenvectors stored as the columns of `vectors`.
#[derive(Clone, Debug)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Mat<T>,
}

impl<T: Scalar> SymEigen<T> {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn map_values(&self, f: impl Fn(T) -> T) -> SymMatrix<T> {
        let n = self.values.len();
        let fv: Vec<T> = self.values.iter().map(|&l| f(l)).collect();
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut s = T::zero();
                for k in 0..n {
                    s += self.vectors[(i, k)] * fv[k] * self.vectors[(j, k)];
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        SymMatrix::from_mirrored(out)
    }

    /// `V diag(f(λ))`, i.e. each eigenvector column scaled.
    pub fn scaled_vectors(&self, f: impl Fn(T) -> T) -> Mat<T> {
        let n = self.values.len();
        let fv: Vec<T> = self.values.iter().map(|&l| f(l)).collect();
        Mat::from_fn(n, n, |i, k| self.vectors[(i, k)] * fv[k])
    }

    pub fn min_value(&self) -> T {
        self.values.first().copied().unwrap_or_else(T::zero)
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
pub fn sym_eig<T: Scalar>(a: &SymMatrix<T>) -> Result<SymEigen<T>> {
    let n = a.dim();
    let mut m = a.as_mat().clone();
    let mut v = Mat::identity(n);
    let total = m.frob_dot(&m);
    let tol = T::epsilon() * T::epsilon() * total;

    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[(i, j)] * m[(i, j)];
            }
        }
        if off <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (apq + apq);
                let t = if theta.abs() > T::lit(1e150) {
                    T::one() / (theta + theta)
                } else {
                    let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                    sign / (theta.abs() + (theta * theta + T::one()).sqrt())
                };
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                m[(p, p)] -= t * apq;
                m[(q, q)] += t * apq;
                m[(p, q)] = T::zero();
                m[(q, p)] = T::zero();
                for r in 0..n {
                    if r != p && r != q {
                        let arp = m[(r, p)];
                        let arq = m[(r, q)];
                        let nrp = c * arp - s * arq;
                        let nrq = s * arp + c * arq;
                        m[(r, p)] = nrp;
                        m[(p, r)] = nrp;
                        m[(r, q)] = nrq;
                        m[(q, r)] = nrq;
                    }
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigenNoConvergence { sweeps: MAX_JACOBI_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let vectors = Mat::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

/// Matrix exponential of a symmetric matrix.
pub fn mat_exp<T: Scalar>(x: &SymMatrix<T>) -> Result<SpdMatrix<T>> {
    let eig = sym_eig(x)?;
    let half = T::lit(0.5);
    let f = eig.scaled_vectors(|l| (l * half).exp());
    SpdMatrix::new(SymMatrix::from_mat(f.matmul_t(&f)))
}

/// Principal matrix logarithm of an SPD matrix.
pub fn mat_log<T: Scalar>(c: &SpdMatrix<T>) -> Result<SymMatrix<T>> {
    let eig = c.eigen()?;
    if !(eig.min_value() > T::zero()) {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(eig.map_values(|l| l.ln()))
}

pub fn mat_sqrt<T: Scalar>(c: &SpdMatrix<T>) -> Result<SpdMatrix<T>> {
    spd_power(c, T::lit(0.5))
}

pub fn mat_inv_sqrt<T: Scalar>(c: &SpdMatrix<T>) -> Result<SpdMatrix<T>> {
    spd_power(c, T::lit(-0.5))
}

/// `C^p` through the eigendecomposition.
pub fn spd_power<T: Scalar>(c: &SpdMatrix<T>, p: T) -> Result<SpdMatrix<T>> {
    let eig = c.eigen()?;
    if !(eig.min_value() > T::zero()) {
        return Err(Error::NotPositiveDefinite);
    }
    SpdMatrix::new(eig.map_values(|l| l.powf(p)))
}

/// `vᵀ C⁻¹ v` via the stored Cholesky factor.
pub fn quad_form<T: Scalar>(c: &SpdMatrix<T>, v: &[T]) -> T {
    assert_eq!(c.dim(), v.len(), "quad_form dimension mismatch");
    let mut y = v.to_vec();
    c.forward_solve_in_place(&mut y);
    dot(&y, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_sym(rng: &mut impl Rng, n: usize, scale: f64) -> SymMatrix<f64> {
        SymMatrix::from_mat(Mat::from_fn(n, n, |_, _| rng.gen_range(-scale..scale)))
    }

    pub(crate) fn random_spd(rng: &mut impl Rng, n: usize) -> SpdMatrix<f64> {
        let a = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let m = a.matmul_t(&a).axpy(1.0, &Mat::identity(n).scale(0.5));
        SpdMatrix::from_mat(m).unwrap()
    }

    fn rel_err(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
        a.axpy(-1.0, b).frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    fn reconstruct(e: &SymEigen<f64>) -> Mat<f64> {
        e.map_values(|l| l).into_mat()
    }

    #[test]
    fn packed_inverse_cholesky_times_factor_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for n in 1..=7 {
            let c = random_spd(&mut rng, n);
            let p = c.inverse_cholesky_packed();
            let linv = Mat::from_fn(n, n, |i, j| if j <= i { p[i * (i + 1) / 2 + j] } else { 0.0 });
            let prod = linv.matmul(c.cholesky_factor());
            assert!(prod.axpy(-1.0, &Mat::identity(n)).frobenius_norm() < 1e-12);
        }
    }

    #[test]
    fn eig_of_diagonal() {
        let e = sym_eig(&SymMatrix::from_diag(&[2.0, 3.0])).unwrap();
        assert_eq!(e.values, vec![2.0, 3.0]);
        assert_eq!(e.vectors, Mat::identity(2));
    }

    #[test]
    fn eig_of_swap_matrix() {
        let e = sym_eig(&SymMatrix::<f64>::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]])).unwrap();
        assert_relative_eq!(e.values[0], -1.0, epsilon = 1e-14);
        assert_relative_eq!(e.values[1], 1.0, epsilon = 1e-14);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // λ=-1 ↔ (1,-1)/√2, λ=1 ↔ (1,1)/√2, each up to sign.
        let v0 = e.vectors.column(0);
        let v1 = e.vectors.column(1);
        assert_relative_eq!(v0[0].abs(), r, epsilon = 1e-14);
        assert_relative_eq!(v0[0] + v0[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(v1[0] - v1[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(v1[1].abs(), r, epsilon = 1e-14);
    }

    #[test]
    fn eig_reconstruction_and_orthogonality() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..=8 {
            let a = random_sym(&mut rng, n, 3.0);
            let e = sym_eig(&a).unwrap();
            assert!(rel_err(&reconstruct(&e), a.as_mat()) < 1e-10);
            let vtv = e.vectors.transpose().matmul(&e.vectors);
            assert!(vtv.axpy(-1.0, &Mat::identity(n)).frobenius_norm() < 1e-10);
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn eig_zero_matrix() {
        let e = sym_eig(&SymMatrix::<f64>::zeros(3)).unwrap();
        assert_eq!(e.values, vec![0.0; 3]);
    }

    #[test]
    fn exp_closed_forms() {
        assert_eq!(mat_exp(&SymMatrix::<f64>::zeros(3)).unwrap().as_mat(), &Mat::identity(3));
        let e = mat_exp(&SymMatrix::from_diag(&[1.0, 2.0])).unwrap();
        assert_relative_eq!(e.as_mat()[(0, 0)], 1f64.exp(), max_relative = 1e-14);
        assert_relative_eq!(e.as_mat()[(1, 1)], 2f64.exp(), max_relative = 1e-14);
        assert_eq!(e.as_mat()[(0, 1)], 0.0);
    }

    #[test]
    fn exp_matches_power_series() {
        // Independent route: truncated Taylor series Σ Xⁿ/n!.
        for &t in &[0.3, 1.0, 2.5] {
            let x = SymMatrix::from_rows(&[vec![0.0, t], vec![t, 0.0]]);
            let mut term = Mat::identity(2);
            let mut sum = Mat::identity(2);
            for n in 1..60 {
                term = term.matmul(x.as_mat()).scale(1.0 / n as f64);
                sum = sum.axpy(1.0, &term);
            }
            let e = mat_exp(&x).unwrap();
            assert!(rel_err(e.as_mat(), &sum) < 1e-13);
            assert_relative_eq!(e.as_mat()[(0, 0)], t.cosh(), max_relative = 1e-13);
            assert_relative_eq!(e.as_mat()[(0, 1)], t.sinh(), max_relative = 1e-13);
        }
    }

    #[test]
    fn log_closed_forms_and_round_trip() {
        let l = mat_log(&SpdMatrix::<f64>::identity(3)).unwrap();
        assert!(l.as_mat().frobenius_norm() < 1e-15);
        let d = SpdMatrix::from_diag(&[1f64.exp(), 2f64.exp()]).unwrap();
        let l = mat_log(&d).unwrap();
        assert_relative_eq!(l[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(l[(1, 1)], 2.0, epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let c = random_spd(&mut rng, 4);
            let back = mat_exp(&mat_log(&c).unwrap()).unwrap();
            assert!(rel_err(back.as_mat(), c.as_mat()) < 1e-9);
        }
    }

    #[test]
    fn sqrt_and_inv_sqrt() {
        assert!(rel_err(mat_sqrt(&SpdMatrix::identity(2)).unwrap().as_mat(), &Mat::identity(2)) < 1e-15);
        let s = mat_sqrt(&SpdMatrix::from_diag(&[4.0, 9.0]).unwrap()).unwrap();
        assert_relative_eq!(s.as_mat()[(0, 0)], 2.0, epsilon = 1e-14);
        assert_relative_eq!(s.as_mat()[(1, 1)], 3.0, epsilon = 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=6 {
            let c = random_spd(&mut rng, n);
            let s = mat_sqrt(&c).unwrap();
            let is = mat_inv_sqrt(&c).unwrap();
            assert!(rel_err(&s.as_mat().matmul(s.as_mat()), c.as_mat()) < 1e-9);
            assert!(s.as_mat().matmul(is.as_mat()).axpy(-1.0, &Mat::identity(n)).frobenius_norm() < 1e-9);
        }
    }

    #[test]
    fn quad_form_cases() {
        assert_eq!(quad_form(&SpdMatrix::identity(2), &[1.0, 0.0]), 1.0);
        assert_relative_eq!(
            quad_form(&SpdMatrix::from_diag(&[2.0, 2.0]).unwrap(), &[1.0, 1.0]),
            1.0,
            epsilon = 1e-15
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..=6 {
            let c = random_spd(&mut rng, n);
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            // Oracle: explicit Gauss-Jordan inverse, independent of the Cholesky path.
            let inv = gauss_jordan_inverse(c.as_mat());
            let expected = dot(&v, &inv.mat_vec(&v));
            assert_relative_eq!(quad_form(&c, &v), expected, max_relative = 1e-10);
        }
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn quad_form_rejects_bad_dims() {
        quad_form(&SpdMatrix::<f64>::identity(2), &[1.0]);
    }

    #[test]
    fn spd_rejects_indefinite() {
        assert_eq!(SpdMatrix::from_diag(&[1.0, -1.0]).unwrap_err(), Error::NotPositiveDefinite);
        assert_eq!(SpdMatrix::from_diag(&[1.0, 0.0]).unwrap_err(), Error::NotPositiveDefinite);
        assert!(SpdMatrix::from_diag(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn sym_storage_is_mirrored() {
        let s = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![4.0, 1.0]]);
        assert_eq!(s[(0, 1)], s[(1, 0)]);
        assert_eq!(s[(0, 1)], 3.0);
    }

    #[test]
    fn whiten_matches_inverse_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = random_spd(&mut rng, 4);
        let x = random_sym(&mut rng, 4, 1.0);
        let y = random_sym(&mut rng, 4, 1.0);
        let inv = gauss_jordan_inverse(c.as_mat());
        let direct = inv.matmul(x.as_mat()).matmul(&inv).matmul(y.as_mat()).trace();
        let via = c.whiten(&x).as_mat().frob_dot(c.whiten(&y).as_mat());
        assert_relative_eq!(direct, via, max_relative = 1e-10);
    }

    #[test]
    fn works_in_single_precision() {
        let c = SpdMatrix::<f32>::from_diag(&[4.0, 9.0]).unwrap();
        let s = mat_sqrt(&c).unwrap();
        assert!((s.as_mat()[(1, 1)] - 3.0).abs() < 1e-5);
    }

    pub(crate) fn gauss_jordan_inverse(a: &Mat<f64>) -> Mat<f64> {
        let n = a.rows();
        let mut m = a.clone();
        let mut inv = Mat::identity(n);
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap()).unwrap();
            for j in 0..n {
                let (a1, a2) = (m[(col, j)], m[(piv, j)]);
                m[(col, j)] = a2;
                m[(piv, j)] = a1;
                let (b1, b2) = (inv[(col, j)], inv[(piv, j)]);
                inv[(col, j)] = b2;
                inv[(piv, j)] = b1;
            }
            let d = m[(col, col)];
            for j in 0..n {
                m[(col, j)] /= d;
                inv[(col, j)] /= d;
            }
            for i in 0..n {
                if i != col {
                    let f = m[(i, col)];
                    for j in 0..n {
                        m[(i, j)] -= f * m[(col, j)];
                        inv[(i, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
        inv
    }
}
