use super::{gemv_adjoint_into, gemv_into, CMatrix, C64};

/// A matrix known only through its action and the action of its adjoint.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[C64], out: &mut [C64]);
    fn apply_adjoint(&self, y: &[C64], out: &mut [C64]);

    /// Dense materialization, one column per unit input.
    fn to_dense(&self) -> CMatrix {
        let (m, n) = (self.nrows(), self.ncols());
        let mut out = CMatrix::zeros(m, n);
        let mut e = vec![C64::new(0.0, 0.0); n];
        let mut col = vec![C64::new(0.0, 0.0); m];
        for j in 0..n {
            e[j] = C64::new(1.0, 0.0);
            self.apply(&e, &mut col);
            out.column_mut(j).copy_from_slice(&col);
            e[j] = C64::new(0.0, 0.0);
        }
        out
    }
}

pub struct DenseOp<'a>(pub &'a CMatrix);

impl LinearOperator for DenseOp<'_> {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }
    fn ncols(&self) -> usize {
        self.0.ncols()
    }
    fn apply(&self, x: &[C64], out: &mut [C64]) {
        gemv_into(self.0, x, out)
    }
    fn apply_adjoint(&self, y: &[C64], out: &mut [C64]) {
        gemv_adjoint_into(self.0, y, out)
    }
}

/// `diag(rows) * inner * diag(cols)`.
pub struct ScaledOp<'a> {
    pub inner: &'a dyn LinearOperator,
    pub rows: Vec<f64>,
    pub cols: Vec<f64>,
}

impl LinearOperator for ScaledOp<'_> {
    fn nrows(&self) -> usize {
        self.inner.nrows()
    }
    fn ncols(&self) -> usize {
        self.inner.ncols()
    }
    fn apply(&self, x: &[C64], out: &mut [C64]) {
        let xs: Vec<C64> = x.iter().zip(&self.cols).map(|(v, s)| v * s).collect();
        self.inner.apply(&xs, out);
        out.iter_mut().zip(&self.rows).for_each(|(v, s)| *v *= s);
    }
    fn apply_adjoint(&self, y: &[C64], out: &mut [C64]) {
        let ys: Vec<C64> = y.iter().zip(&self.rows).map(|(v, s)| v * s).collect();
        self.inner.apply_adjoint(&ys, out);
        out.iter_mut().zip(&self.cols).for_each(|(v, s)| *v *= s);
    }
}
