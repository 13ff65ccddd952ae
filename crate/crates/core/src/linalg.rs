//! Thin helpers over `nalgebra` for the complex linear algebra used throughout.

use nalgebra::{DMatrix, DVector, Dim, Matrix, Storage};
pub use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[inline]
pub fn real(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Solves `A X = B` for Hermitian positive definite `A`, falling back to LU
/// when the Cholesky factorisation breaks down numerically.
pub fn solve_hpd(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "solve: {}x{} system with {}x{} rhs",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    solve_general(a, b)
}

/// Solves `A X = B` with partial-pivot LU.
pub fn solve_general(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "solve: {}x{} system with {}x{} rhs",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let lu = a.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{}x{} LU solve", a.nrows(), a.ncols())))?;
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Singular(format!(
            "{}x{} LU solve produced non-finite entries",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(x)
}

pub fn inverse_hpd(a: &CMatrix) -> Result<CMatrix> {
    solve_hpd(a, &CMatrix::identity(a.nrows(), a.ncols()))
}

/// Squared Frobenius norm.
pub fn energy(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

pub fn column_energy(m: &CMatrix, j: usize) -> f64 {
    m.column(j).iter().map(|z| z.norm_sqr()).sum()
}

/// Gathers the listed columns into a new matrix.
pub fn select_columns(m: &CMatrix, cols: &[usize]) -> CMatrix {
    CMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

/// Largest absolute entry-wise difference.
pub fn max_abs_diff<R1, C1, S1, R2, C2, S2>(a: &Matrix<C64, R1, C1, S1>, b: &Matrix<C64, R2, C2, S2>) -> f64
where
    R1: Dim,
    C1: Dim,
    S1: Storage<C64, R1, C1>,
    R2: Dim,
    C2: Dim,
    S2: Storage<C64, R2, C2>,
{
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}
