//! Dense complex vectors and matrices with exactly the operations the
//! estimators need. Row-major storage, `Complex<f64>` entries.

use num_complex::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Dense complex vector.
#[derive(Debug, Clone, PartialEq)]
pub struct CVector {
    data: Vec<C64>,
}

impl CVector {
    pub fn new(data: Vec<C64>) -> Self {
        assert!(!data.is_empty(), "vector dimension must be positive");
        Self { data }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![C64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, C64> {
        self.data.iter()
    }

    /// Squared L2 norm.
    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Hermitian inner product `self^H other` (conjugate on `self`).
    pub fn hdot(&self, other: &CVector) -> C64 {
        assert_eq!(self.len(), other.len());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scale(&self, s: C64) -> CVector {
        CVector::new(self.data.iter().map(|z| z * s).collect())
    }

    pub fn add(&self, other: &CVector) -> CVector {
        assert_eq!(self.len(), other.len());
        CVector::new(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &CVector) -> CVector {
        assert_eq!(self.len(), other.len());
        CVector::new(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for CVector {
    type Output = C64;
    fn index(&self, i: usize) -> &C64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for CVector {
    fn index_mut(&mut self, i: usize) -> &mut C64 {
        &mut self.data[i]
    }
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.data[r * cols + c] = f(r, c);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| {
            if r == c {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [C64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// `self * v`.
    pub fn matvec(&self, v: &CVector) -> CVector {
        assert_eq!(self.cols, v.len(), "matvec dimension mismatch");
        let mut out = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = C64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(v.iter()) {
                acc += a * b;
            }
            out.push(acc);
        }
        CVector::new(out)
    }

    /// `self^H * v` without materializing the adjoint.
    pub fn hermitian_apply(&self, v: &CVector) -> CVector {
        assert_eq!(self.rows, v.len(), "hermitian_apply dimension mismatch");
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let vr = v[r];
            for (c, a) in row.iter().enumerate() {
                out[c] += a.conj() * vr;
            }
        }
        CVector::new(out)
    }

    /// `self * other`.
    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow.iter()) {
                    *d += a * b;
                }
            }
        }
        out
    }

    /// Conjugate transpose.
    pub fn hermitian(&self) -> CMatrix {
        CMatrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    /// `self * self^H`, Gram matrix of the rows.
    pub fn gram(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..self.rows {
                let mut acc = C64::new(0.0, 0.0);
                for (a, b) in self.row(i).iter().zip(self.row(j).iter()) {
                    acc += a * b.conj();
                }
                out.data[i * self.rows + j] = acc;
            }
        }
        out
    }

    /// Rank-one Hermitian update `self += w * v v^H`.
    pub fn add_outer_self(&mut self, v: &CVector, w: f64) {
        assert_eq!(self.rows, v.len());
        assert_eq!(self.cols, v.len());
        for r in 0..self.rows {
            let vr = v[r] * w;
            let dst = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (d, vc) in dst.iter_mut().zip(v.iter()) {
                *d += vr * vc.conj();
            }
        }
    }

    /// `self += s * I`.
    pub fn add_diag(&mut self, s: f64) {
        assert_eq!(self.rows, self.cols);
        for r in 0..self.rows {
            self.data[r * self.cols + r] += C64::new(s, 0.0);
        }
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for z in &mut self.data {
            *z *= s;
        }
    }

    /// Replace with the Hermitian part `(A + A^H) / 2`.
    pub fn symmetrize(&mut self) {
        assert_eq!(self.rows, self.cols);
        for r in 0..self.rows {
            for c in r..self.cols {
                let avg = (self[(r, c)] + self[(c, r)].conj()) * 0.5;
                self.data[r * self.cols + c] = avg;
                self.data[c * self.cols + r] = avg.conj();
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn trace(&self) -> C64 {
        assert_eq!(self.rows, self.cols);
        (0..self.rows).map(|r| self[(r, r)]).sum()
    }

    /// Max element-wise deviation from `A = A^H`.
    pub fn hermitian_deviation(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let mut dev: f64 = 0.0;
        for r in 0..self.rows {
            for c in r..self.cols {
                dev = dev.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        dev
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Pivot floor below which a Cholesky factorization is declared
/// non-positive-definite.
const PIVOT_FLOOR: f64 = 1e-14;

/// Element-wise tolerance for the `A = A^H` input check, relative to the
/// largest entry magnitude (with a floor of 1 for tiny-scale matrices).
const HERMITIAN_TOL: f64 = 1e-12;

/// True when the Cholesky factorization of `a` succeeds with every pivot at
/// or above the solver's floor (a practical positive-definiteness test).
pub fn cholesky_ok(a: &CMatrix) -> bool {
    let n = a.rows();
    if a.cols() != n {
        return false;
    }
    let mut l = a.clone();
    for j in 0..n {
        let mut diag = l[(j, j)].re;
        for k in 0..j {
            diag -= l[(j, k)].norm_sqr();
        }
        if !(diag >= PIVOT_FLOOR) {
            return false;
        }
        let ljj = diag.sqrt();
        l[(j, j)] = C64::new(ljj, 0.0);
        for i in (j + 1)..n {
            let mut sum = l[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = sum / ljj;
        }
    }
    true
}

/// Solves `A X = B` for Hermitian positive-definite `A` via Cholesky.
///
/// Rejects inputs that are visibly non-Hermitian and signals
/// non-positive-definiteness when a pivot falls below `1e-14`.
pub fn hermitian_solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dim(format!(
            "hermitian_solve: A must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if b.rows() != n {
        return Err(Error::Dim(format!(
            "hermitian_solve: B has {} rows, expected {}",
            b.rows(),
            n
        )));
    }
    let scale = a.max_abs().max(1.0);
    if a.hermitian_deviation() > HERMITIAN_TOL * scale {
        return Err(Error::Numerics(
            "hermitian_solve: input A is not Hermitian".into(),
        ));
    }

    // In-place lower Cholesky factor.
    let mut l = a.clone();
    for j in 0..n {
        let mut diag = l[(j, j)].re;
        for k in 0..j {
            diag -= l[(j, k)].norm_sqr();
        }
        if diag < PIVOT_FLOOR {
            return Err(Error::Numerics(format!(
                "hermitian_solve: non-positive-definite input (pivot {diag:.3e} at {j})"
            )));
        }
        let ljj = diag.sqrt();
        l[(j, j)] = C64::new(ljj, 0.0);
        for i in (j + 1)..n {
            let mut sum = l[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = sum / ljj;
        }
        for c in (j + 1)..n {
            l[(j, c)] = C64::new(0.0, 0.0);
        }
    }

    // Column-wise forward/backward substitution.
    let mut x = b.clone();
    let k = b.cols();
    for col in 0..k {
        // L y = b
        for i in 0..n {
            let mut sum = x[(i, col)];
            for j in 0..i {
                sum -= l[(i, j)] * x[(j, col)];
            }
            x[(i, col)] = sum / l[(i, i)].re;
        }
        // L^H x = y
        for i in (0..n).rev() {
            let mut sum = x[(i, col)];
            for j in (i + 1)..n {
                sum -= l[(j, i)].conj() * x[(j, col)];
            }
            x[(i, col)] = sum / l[(i, i)].re;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn random_hpd(n: usize, stream: &mut RngStream) -> CMatrix {
        // B B^H + n I is comfortably positive definite.
        let b = CMatrix::from_fn(n, n, |_, _| C64::new(stream.normal(), stream.normal()));
        let mut a = b.matmul(&b.hermitian());
        a.add_diag(n as f64 * 0.1);
        a.symmetrize();
        a
    }

    #[test]
    fn identity_system_returns_rhs() {
        let a = CMatrix::identity(5);
        let b = CMatrix::from_fn(5, 2, |r, c| C64::new(r as f64, c as f64 + 1.0));
        let x = hermitian_solve(&a, &b).unwrap();
        assert!(x.max_abs_diff(&b) < 1e-14);
    }

    #[test]
    fn scalar_system_halves_rhs() {
        let mut a = CMatrix::zeros(3, 3);
        a.add_diag(2.0);
        let b = CMatrix::identity(3);
        let x = hermitian_solve(&a, &b).unwrap();
        let mut expect = CMatrix::zeros(3, 3);
        expect.add_diag(0.5);
        assert!(x.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn multiply_back_residual_is_small() {
        let mut stream = RngStream::new(7, 0);
        for &n in &[4, 8, 32] {
            let a = random_hpd(n, &mut stream);
            let b = CMatrix::from_fn(n, 3, |_, _| C64::new(stream.normal(), stream.normal()));
            let x = hermitian_solve(&a, &b).unwrap();
            let residual = a.matmul(&x).max_abs_diff(&b);
            assert!(
                residual / b.max_abs() < 1e-10,
                "residual {residual:.3e} too large for n={n}"
            );
        }
    }

    #[test]
    fn multiply_back_residual_at_n256() {
        let mut stream = RngStream::new(11, 0);
        let a = random_hpd(256, &mut stream);
        let b = CMatrix::from_fn(256, 1, |_, _| C64::new(stream.normal(), stream.normal()));
        let x = hermitian_solve(&a, &b).unwrap();
        assert!(a.matmul(&x).max_abs_diff(&b) / b.max_abs() < 1e-10);
    }

    #[test]
    fn rejects_non_positive_definite() {
        let mut a = CMatrix::identity(3);
        a[(2, 2)] = C64::new(-1.0, 0.0);
        let b = CMatrix::identity(3);
        assert!(matches!(
            hermitian_solve(&a, &b),
            Err(Error::Numerics(_))
        ));
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut a = CMatrix::identity(3);
        a[(0, 1)] = C64::new(0.5, 0.0);
        let b = CMatrix::identity(3);
        assert!(matches!(hermitian_solve(&a, &b), Err(Error::Numerics(_))));
    }

    #[test]
    fn gram_of_unitary_rows_is_identity() {
        let f = crate::numerics::dft_shift_matrix(8);
        let g = f.gram();
        assert!(g.max_abs_diff(&CMatrix::identity(8)) < 1e-12);
    }
}
