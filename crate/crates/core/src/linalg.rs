//! Small dense symmetric linear algebra.
//!
//! Covers exactly what the matching transforms and correlated sampling need:
//! Cholesky factorization, the symmetric positive semi-definite square root
//! and its inverse. Eigenvalues come from a cyclic Jacobi sweep, which is
//! accurate and entirely adequate at the dimensions involved (a handful of
//! assets; hard cap [`MAX_DIM`]).

use crate::error::{Error, Result};

/// Largest supported matrix dimension.
pub const MAX_DIM: usize = 64;

/// Off-diagonal tolerance for the Jacobi sweeps, relative to the largest
/// absolute entry of the input.
const JACOBI_TOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 30;

/// Dense symmetric matrix with full row-major storage.
///
/// The symmetry invariant is enforced on construction and preserved by
/// [`SymMatrix::set`], which writes both mirror entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    fn check_dim(dim: usize) -> Result<()> {
        if dim == 0 {
            return Err(Error::InvalidParams("matrix dimension must be >= 1".into()));
        }
        if dim > MAX_DIM {
            return Err(Error::DimensionTooLarge { dim, max: MAX_DIM });
        }
        Ok(())
    }

    /// Zero matrix of the given dimension.
    pub fn zeros(dim: usize) -> Result<Self> {
        Self::check_dim(dim)?;
        Ok(Self { dim, data: vec![0.0; dim * dim] })
    }

    /// Identity matrix.
    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        Ok(m)
    }

    /// Diagonal matrix from the given entries.
    pub fn diag(entries: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(entries.len())?;
        for (i, &v) in entries.iter().enumerate() {
            m.data[i * entries.len() + i] = v;
        }
        Ok(m)
    }

    /// Builds a matrix from square row data, verifying symmetry.
    ///
    /// Mirror entries may differ by floating-point noise up to
    /// `1e-9 * (1 + max |a_ij|)`; they are averaged into exact symmetry.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        Self::check_dim(dim)?;
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
            }
        }
        let mut max_abs = 0.0f64;
        for row in rows {
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::InvalidParams("matrix entries must be finite".into()));
                }
                max_abs = max_abs.max(v.abs());
            }
        }
        let tol = 1e-9 * (1.0 + max_abs);
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                if (rows[i][j] - rows[j][i]).abs() > tol {
                    return Err(Error::NotSymmetric);
                }
                data[i * dim + j] = 0.5 * (rows[i][j] + rows[j][i]);
            }
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
        self.data[j * self.dim + i] = value;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        for i in 0..self.dim {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            let mut s = 0.0;
            for (a, b) in row.iter().zip(x) {
                s += a * b;
            }
            y[i] = s;
        }
        y
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn from_flat(dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dim * dim);
        Self { dim, data }
    }
}

/// Lower-triangular Cholesky factor with full row-major storage (upper part
/// zero).
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    dim: usize,
    data: Vec<f64>,
}

impl LowerTriangular {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `L x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `L x` written into a caller-provided buffer.
    pub fn mul_vec_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..=i {
                s += self.data[i * n + j] * x[j];
            }
            out[i] = s;
        }
    }

    /// Reconstructs `L L^T`.
    pub fn mul_transpose(&self) -> SymMatrix {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in 0..=j.min(i) {
                    s += self.data[i * n + k] * self.data[j * n + k];
                }
                out[i * n + j] = s;
                out[j * n + i] = s;
            }
        }
        SymMatrix::from_flat(n, out)
    }
}

/// Cholesky factorization `a = L L^T` of a symmetric positive definite
/// matrix.
///
/// Fails with [`Error::NotPositiveDefinite`] when a pivot falls at or below
/// `dim * eps * max|a_ij|`.
pub fn cholesky(a: &SymMatrix) -> Result<LowerTriangular> {
    let n = a.dim;
    let pivot_floor = n as f64 * f64::EPSILON * a.max_abs();
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= pivot_floor {
            return Err(Error::NotPositiveDefinite { column: j, pivot: d });
        }
        let root = d.sqrt();
        l[j * n + j] = root;
        for i in (j + 1)..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / root;
        }
    }
    Ok(LowerTriangular { dim: n, data: l })
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, q)` with `a = q diag(eigenvalues) q^T`; `q` is
/// row-major with eigenvectors in columns. Eigenvalues are unsorted.
pub(crate) fn jacobi_eigen(a: &SymMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = a.dim;
    let mut m = a.data.clone();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    if n == 1 {
        return (vec![m[0]], q);
    }
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    let threshold = JACOBI_TOL * scale;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off_max = 0.0f64;
        for p in 0..n - 1 {
            for r in p + 1..n {
                off_max = off_max.max(m[p * n + r].abs());
            }
        }
        if off_max <= threshold {
            break;
        }
        for p in 0..n - 1 {
            for r in p + 1..n {
                let apq = m[p * n + r];
                if apq.abs() <= threshold {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[r * n + r];
                let theta = 0.5 * (aqq - app) / apq;
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                m[p * n + p] = app - t * apq;
                m[r * n + r] = aqq + t * apq;
                m[p * n + r] = 0.0;
                m[r * n + p] = 0.0;
                for k in 0..n {
                    if k != p && k != r {
                        let akp = m[k * n + p];
                        let akq = m[k * n + r];
                        let new_kp = akp - s * (akq + tau * akp);
                        let new_kq = akq + s * (akp - tau * akq);
                        m[k * n + p] = new_kp;
                        m[p * n + k] = new_kp;
                        m[k * n + r] = new_kq;
                        m[r * n + k] = new_kq;
                    }
                }
                for k in 0..n {
                    let qkp = q[k * n + p];
                    let qkq = q[k * n + r];
                    q[k * n + p] = qkp - s * (qkq + tau * qkp);
                    q[k * n + r] = qkq + s * (qkp - tau * qkq);
                }
            }
        }
    }
    let vals = (0..n).map(|i| m[i * n + i]).collect();
    (vals, q)
}

/// Assembles `q f(lambda) q^T` from a Jacobi decomposition.
fn assemble(n: usize, vals: &[f64], q: &[f64], f: impl Fn(f64) -> f64) -> SymMatrix {
    let mapped: Vec<f64> = vals.iter().map(|&v| f(v)).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in 0..n {
                s += q[i * n + k] * mapped[k] * q[j * n + k];
            }
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    SymMatrix::from_flat(n, out)
}

/// Unique symmetric positive semi-definite square root: `s s = a`.
///
/// Eigenvalues in `[-1e-12 * lambda_max, 0]` are treated as rounding noise
/// and clamped to zero; anything more negative is an error.
pub fn sym_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    let (vals, q) = jacobi_eigen(a);
    let lambda_max = vals.iter().fold(0.0f64, |m, &v| m.max(v));
    let neg_tol = 1e-12 * lambda_max;
    if let Some(&bad) = vals.iter().find(|&&v| v < -neg_tol) {
        return Err(Error::NotPositiveSemiDefinite { eigenvalue: bad });
    }
    Ok(assemble(a.dim, &vals, &q, |v| v.max(0.0).sqrt()))
}

/// Symmetric inverse square root: `t a t = I`.
pub fn sym_inv_sqrt(a: &SymMatrix) -> Result<SymMatrix> {
    let (vals, q) = jacobi_eigen(a);
    let lambda_max = vals.iter().fold(0.0f64, |m, &v| m.max(v));
    let lambda_min = vals.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    if lambda_min <= a.dim as f64 * f64::EPSILON * lambda_max.max(0.0) {
        return Err(Error::SingularMatrix { eigenvalue: lambda_min });
    }
    Ok(assemble(a.dim, &vals, &q, |v| 1.0 / v.sqrt()))
}

/// Solves `a x = b` for symmetric positive definite `a` via Cholesky.
pub fn solve_spd(a: &SymMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let l = cholesky(a)?;
    Ok(solve_with_factor(&l, b))
}

/// Forward/backward substitution with a precomputed Cholesky factor.
pub fn solve_with_factor(l: &LowerTriangular, b: &[f64]) -> Vec<f64> {
    let n = l.dim;
    assert_eq!(b.len(), n);
    let d = &l.data;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= d[i * n + k] * y[k];
        }
        y[i] = s / d[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= d[k * n + i] * x[k];
        }
        x[i] = s / d[i * n + i];
    }
    x
}

/// Explicit inverse of a symmetric positive definite matrix.
pub fn spd_inverse(a: &SymMatrix) -> Result<SymMatrix> {
    let n = a.dim;
    let l = cholesky(a)?;
    let mut out = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = solve_with_factor(&l, &e);
        e[j] = 0.0;
        for i in 0..n {
            out[i * n + j] = col[i];
        }
    }
    // symmetrize away substitution round-off
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (out[i * n + j] + out[j * n + i]);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(SymMatrix::from_flat(n, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_diff(a: &SymMatrix, b: &SymMatrix) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    }

    /// Deterministic pseudo-random SPD matrix for property checks.
    fn random_spd(dim: usize, seed: u64) -> SymMatrix {
        let stream = crate::sampling::RngStream::new(seed, 7);
        let g: Vec<f64> = (0..dim * dim)
            .map(|i| 2.0 * stream.uniform(i as u64) - 1.0)
            .collect();
        let mut rows = vec![vec![0.0; dim]; dim];
        for i in 0..dim {
            for j in 0..dim {
                let mut s = if i == j { 0.5 } else { 0.0 };
                for k in 0..dim {
                    s += g[i * dim + k] * g[j * dim + k];
                }
                rows[i][j] = s;
            }
        }
        SymMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn cholesky_identity() {
        let a = SymMatrix::identity(3).unwrap();
        let l = cholesky(&a).unwrap();
        assert_eq!(l.mul_transpose(), a);
        for i in 0..3 {
            assert_eq!(l.get(i, i), 1.0);
        }
    }

    #[test]
    fn cholesky_two_by_two_by_hand() {
        let a = SymMatrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky(&a).unwrap();
        assert!((l.get(0, 0) - 2.0).abs() < 1e-15);
        assert!((l.get(1, 0) - 1.0).abs() < 1e-15);
        assert!((l.get(1, 1) - 2.0f64.sqrt()).abs() < 1e-15);
        assert_eq!(l.get(0, 1), 0.0);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        // eigenvalues 3 and -1
        let a = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&a), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn cholesky_reconstruction_error_bound() {
        for seed in 0..20 {
            for dim in [1, 2, 3, 5, 8, 16] {
                let a = random_spd(dim, seed);
                let l = cholesky(&a).unwrap();
                let err = max_diff(&l.mul_transpose(), &a);
                assert!(
                    err <= 1e-12 * a.max_abs(),
                    "dim {dim} seed {seed}: err {err:e}"
                );
            }
        }
    }

    #[test]
    fn sqrt_of_diagonal() {
        let a = SymMatrix::diag(&[4.0, 9.0]).unwrap();
        let s = sym_sqrt(&a).unwrap();
        assert!(max_diff(&s, &SymMatrix::diag(&[2.0, 3.0]).unwrap()) < 1e-14);
    }

    #[test]
    fn sqrt_of_identity() {
        for dim in [1, 2, 5, 17] {
            let a = SymMatrix::identity(dim).unwrap();
            assert!(max_diff(&sym_sqrt(&a).unwrap(), &a) < 1e-13);
        }
    }

    #[test]
    fn sqrt_squares_back() {
        for seed in 0..20 {
            for dim in [1, 2, 3, 6, 12] {
                let a = random_spd(dim, 100 + seed);
                let s = sym_sqrt(&a).unwrap();
                let n = dim;
                let mut ss = vec![vec![0.0; n]; n];
                for i in 0..n {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for k in 0..n {
                            acc += s.get(i, k) * s.get(k, j);
                        }
                        ss[i][j] = acc;
                    }
                }
                let ss = SymMatrix::from_rows(&ss).unwrap();
                assert!(max_diff(&ss, &a) <= 1e-10 * a.max_abs());
            }
        }
    }

    #[test]
    fn sqrt_rejects_negative_eigenvalue() {
        let a = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(sym_sqrt(&a), Err(Error::NotPositiveSemiDefinite { .. })));
    }

    #[test]
    fn sqrt_accepts_psd_with_zero_eigenvalue() {
        // rank one: eigenvalues 2 and 0
        let a = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let s = sym_sqrt(&a).unwrap();
        let expected = 0.5f64.sqrt();
        for i in 0..2 {
            for j in 0..2 {
                assert!((s.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inv_sqrt_scalar() {
        let a = SymMatrix::diag(&[4.0]).unwrap();
        let t = sym_inv_sqrt(&a).unwrap();
        assert!((t.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn inv_sqrt_whitens_two_by_two() {
        // eigenvalues 1 and 3
        let a = SymMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let t = sym_inv_sqrt(&a).unwrap();
        let mut tat = SymMatrix::zeros(2).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut s = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        s += t.get(i, k) * a.get(k, l) * t.get(l, j);
                    }
                }
                tat.set(i, j, s);
            }
        }
        assert!(max_diff(&tat, &SymMatrix::identity(2).unwrap()) < 1e-9);
    }

    #[test]
    fn inv_sqrt_inverts_sqrt() {
        for seed in 0..10 {
            let a = random_spd(4, 300 + seed);
            let s = sym_sqrt(&a).unwrap();
            let t = sym_inv_sqrt(&a).unwrap();
            let mut st = vec![vec![0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    let mut acc = 0.0;
                    for k in 0..4 {
                        acc += s.get(i, k) * t.get(k, j);
                    }
                    st[i][j] = acc;
                }
            }
            for (i, row) in st.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((v - expect).abs() < 1e-9, "seed {seed} ({i},{j}): {v}");
                }
            }
        }
    }

    #[test]
    fn inv_sqrt_rejects_singular() {
        let a = SymMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(sym_inv_sqrt(&a), Err(Error::SingularMatrix { .. })));
    }

    #[test]
    fn sqrt_commutes_with_permutation() {
        // permutation conjugation: sqrt(P^T a P) = P^T sqrt(a) P
        let a = random_spd(4, 9);
        let perm = [2usize, 0, 3, 1];
        let mut pap = vec![vec![0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                pap[i][j] = a.get(perm[i], perm[j]);
            }
        }
        let pap = SymMatrix::from_rows(&pap).unwrap();
        let s = sym_sqrt(&a).unwrap();
        let sp = sym_sqrt(&pap).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert!((sp.get(i, j) - s.get(perm[i], perm[j])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dimension_cap_enforced() {
        assert!(matches!(
            SymMatrix::identity(MAX_DIM + 1),
            Err(Error::DimensionTooLarge { .. })
        ));
        assert!(SymMatrix::identity(MAX_DIM).is_ok());
    }

    #[test]
    fn from_rows_rejects_asymmetric() {
        let r = SymMatrix::from_rows(&[vec![1.0, 0.5], vec![0.2, 1.0]]);
        assert!(matches!(r, Err(Error::NotSymmetric)));
    }

    #[test]
    fn solve_spd_round_trip() {
        let a = random_spd(5, 77);
        let x = vec![1.0, -2.0, 0.5, 3.0, -0.25];
        let b = a.mul_vec(&x);
        let got = solve_spd(&a, &b).unwrap();
        for (u, v) in got.iter().zip(&x) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn spd_inverse_multiplies_to_identity() {
        let a = random_spd(4, 5);
        let inv = spd_inverse(&a).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.get(i, k) * inv.get(k, j);
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((s - expect).abs() < 1e-9);
            }
        }
    }
}
