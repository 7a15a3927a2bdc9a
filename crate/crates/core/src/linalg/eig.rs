use super::{check_finite, check_square, hermitian_part_defect, CMatrix, C64};
use crate::error::{LabError, Result};

#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<C64>,
    /// Unit-norm eigenvectors as columns, in the order of `values`.
    pub vectors: Option<CMatrix>,
    /// True when the input was Hermitian and `vectors` is unitary.
    pub orthogonal: bool,
}

impl Spectrum {
    pub fn abscissa(&self) -> f64 {
        self.values.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_modulus(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min)
    }
}

fn givens(x: C64, y: C64) -> (f64, C64) {
    let ax = x.norm();
    let r = (ax * ax + y.norm_sqr()).sqrt();
    if r == 0.0 {
        (1.0, C64::new(0.0, 0.0))
    } else if ax == 0.0 {
        (0.0, y.conj() / y.norm())
    } else {
        (ax / r, x * y.conj() / (ax * r))
    }
}

fn wilkinson(a: C64, b: C64, cc: C64, d: C64) -> C64 {
    let tr = a + d;
    let det = a * d - b * cc;
    let disc = (tr * tr * 0.25 - det).sqrt();
    let l1 = tr * 0.5 + disc;
    let l2 = tr * 0.5 - disc;
    if (l1 - d).norm() < (l2 - d).norm() {
        l1
    } else {
        l2
    }
}

/// Complex Schur form `A = Q T Q^H` with `T` upper triangular.
pub fn schur(a: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    check_square(a, "matrix")?;
    check_finite(a, "matrix")?;
    let n = a.nrows();
    if n == 0 {
        return Ok((CMatrix::zeros(0, 0), CMatrix::zeros(0, 0)));
    }
    let (mut q, mut h) = a.clone().hessenberg().unpack();
    let scale = h.norm().max(f64::MIN_POSITIVE);
    let eps = f64::EPSILON;
    let mut hi = n - 1;
    let mut iter = 0usize;
    let mut total = 0usize;
    while hi > 0 {
        let mut l = hi;
        while l > 0 {
            let sub = h[(l, l - 1)].norm();
            let diag = h[(l - 1, l - 1)].norm() + h[(l, l)].norm();
            if sub <= eps * diag || sub <= eps * 1e-3 * scale {
                h[(l, l - 1)] = C64::new(0.0, 0.0);
                break;
            }
            l -= 1;
        }
        if l == hi {
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if total > 60 * n.max(10) {
            return Err(LabError::NoConvergence("Schur QR iteration".into()));
        }
        let shift = if iter % 11 == 10 {
            h[(hi, hi)] + h[(hi, hi - 1)].norm() * 1.5
        } else {
            wilkinson(h[(hi - 1, hi - 1)], h[(hi - 1, hi)], h[(hi, hi - 1)], h[(hi, hi)])
        };
        let mut x = h[(l, l)] - shift;
        let mut y = h[(l + 1, l)];
        for k in l..hi {
            let (cs, sn) = givens(x, y);
            let c0 = if k > l { k - 1 } else { l };
            for j in c0..n {
                let u = h[(k, j)];
                let v = h[(k + 1, j)];
                h[(k, j)] = u * cs + sn * v;
                h[(k + 1, j)] = -sn.conj() * u + v * cs;
            }
            let rmax = (k + 2).min(hi);
            for i in 0..=rmax {
                let u = h[(i, k)];
                let v = h[(i, k + 1)];
                h[(i, k)] = u * cs + v * sn.conj();
                h[(i, k + 1)] = -u * sn + v * cs;
            }
            for i in 0..n {
                let u = q[(i, k)];
                let v = q[(i, k + 1)];
                q[(i, k)] = u * cs + v * sn.conj();
                q[(i, k + 1)] = -u * sn + v * cs;
            }
            if k + 1 < hi {
                x = h[(k + 1, k)];
                y = h[(k + 2, k)];
            }
        }
    }
    for j in 0..n {
        for i in j + 1..n {
            h[(i, j)] = C64::new(0.0, 0.0);
        }
    }
    Ok((q, h))
}

/// Eigenvalues and eigenvectors; Hermitian input takes the orthogonal route.
pub fn eig(a: &CMatrix) -> Result<Spectrum> {
    check_square(a, "matrix")?;
    check_finite(a, "matrix")?;
    let n = a.nrows();
    if n > 0 && hermitian_part_defect(a) <= 1e-14 {
        let herm = (a + a.adjoint()) * C64::new(0.5, 0.0);
        let se = herm.symmetric_eigen();
        return Ok(Spectrum {
            values: se.eigenvalues.iter().map(|&x| C64::new(x, 0.0)).collect(),
            vectors: Some(se.eigenvectors),
            orthogonal: true,
        });
    }
    let (q, t) = schur(a)?;
    let values: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();
    let tiny = f64::EPSILON * t.norm().max(f64::MIN_POSITIVE);
    let mut y = CMatrix::zeros(n, n);
    for k in 0..n {
        y[(k, k)] = C64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for j in i + 1..=k {
                acc += t[(i, j)] * y[(j, k)];
            }
            let mut den = t[(i, i)] - t[(k, k)];
            if den.norm() < tiny {
                den = C64::new(tiny, 0.0);
            }
            y[(i, k)] = -acc / den;
        }
    }
    let mut v = super::matmul(&q, &y);
    for k in 0..n {
        let nk = v.column(k).norm();
        if nk > 0.0 {
            v.column_mut(k).unscale_mut(nk);
        }
    }
    Ok(Spectrum {
        values,
        vectors: Some(v),
        orthogonal: false,
    })
}
