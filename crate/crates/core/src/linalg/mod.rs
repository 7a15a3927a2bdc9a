//! Dense complex linear algebra used by every other module.

mod eig;
mod expm;
mod norm;
mod op;

pub use eig::{eig, schur, Spectrum};
pub use expm::{expm, expm_phi1, phi1, ExpPair};
pub use norm::{POWER_RESTARTS, POWER_TOL, boyd_power, lanczos_sigma_max, operator_norm, opnorm, opnorm_between, LpNormSpec, NormEstimate, NormMethod};
pub use op::{DenseOp, LinearOperator, ScaledOp};

use crate::error::{LabError, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Condition cap beyond which a resolvent is reported as numerically singular.
pub const RESOLVENT_COND_CAP: f64 = 1e12;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn check_finite(m: &CMatrix, what: &'static str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(LabError::NonFinite(what))
    }
}

pub fn check_square(m: &CMatrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(LabError::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

pub fn from_real(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| C64::new(x, 0.0))
}

pub fn is_real(m: &CMatrix) -> bool {
    m.iter().all(|z| z.im == 0.0)
}

pub fn real_part(m: &CMatrix) -> DMatrix<f64> {
    m.map(|z| z.re)
}

/// Product through the packed complex kernel; nalgebra's own complex product is unblocked.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape");
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = CMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // Complex64 is repr(C) {re, im}, identical in layout to [f64; 2].
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            1,
            m as isize,
            b.as_ptr() as *const [f64; 2],
            1,
            k as isize,
            [0.0, 0.0],
            out.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    out
}

/// `out = m * x` on raw column-major storage.
pub fn gemv_into(m: &CMatrix, x: &[C64], out: &mut [C64]) {
    let r = m.nrows();
    debug_assert_eq!(x.len(), m.ncols());
    debug_assert_eq!(out.len(), r);
    out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
    let data = m.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        if xj.re == 0.0 && xj.im == 0.0 {
            continue;
        }
        let col = &data[j * r..(j + 1) * r];
        for (o, &a) in out.iter_mut().zip(col) {
            *o += a * xj;
        }
    }
}

/// `out = m^H * x`.
pub fn gemv_adjoint_into(m: &CMatrix, x: &[C64], out: &mut [C64]) {
    let r = m.nrows();
    debug_assert_eq!(x.len(), r);
    let data = m.as_slice();
    for (j, o) in out.iter_mut().enumerate() {
        let col = &data[j * r..(j + 1) * r];
        let mut acc = C64::new(0.0, 0.0);
        for (&a, &xi) in col.iter().zip(x) {
            acc += a.conj() * xi;
        }
        *o = acc;
    }
}

pub fn matvec(m: &CMatrix, x: &CVector) -> CVector {
    let mut out = CVector::zeros(m.nrows());
    gemv_into(m, x.as_slice(), out.as_mut_slice());
    out
}

pub fn norm1(m: &CMatrix) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return vec![];
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

pub fn sigma_max(m: &CMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn sigma_min(m: &CMatrix) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// Solves `m x = b`, failing on a numerically singular `m`.
pub fn solve(m: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_square(m, "system matrix")?;
    let lu = m.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| LabError::Singular("LU pivot is zero".into()))?;
    check_finite(&x, "solution")?;
    Ok(x)
}

/// R(lambda, A) = (lambda - A)^{-1}.
///
/// A cheap 1-norm condition estimate guards the inverse; the singular value is
/// computed only on the failure path.
pub fn resolvent(a: &CMatrix, lambda: C64) -> Result<CMatrix> {
    check_square(a, "generator")?;
    check_finite(a, "generator")?;
    let n = a.nrows();
    let m = shifted(a, lambda);
    let inv = m.clone().lu().try_inverse();
    let fail = || LabError::InSpectrum {
        lambda,
        sigma_min: sigma_min(&m),
    };
    let inv = inv.ok_or_else(fail)?;
    if inv.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(fail());
    }
    let cond = norm1(&m) * norm1(&inv);
    if n > 0 && cond > RESOLVENT_COND_CAP {
        return Err(fail());
    }
    Ok(inv)
}

/// lambda I - A.
pub fn shifted(a: &CMatrix, lambda: C64) -> CMatrix {
    let mut m = -a.clone();
    for i in 0..a.nrows() {
        m[(i, i)] += lambda;
    }
    m
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Relative Frobenius distance, `|a-b| / max(|b|, tiny)`.
pub fn rel_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

pub fn hermitian_part_defect(a: &CMatrix) -> f64 {
    (a - a.adjoint()).norm() / a.norm().max(f64::MIN_POSITIVE)
}
