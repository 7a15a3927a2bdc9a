//! Maximal-regularity operator `ℛf = 𝔾 ∫_0^t 𝕊(t-s) f(s) ds` on a time grid, its norm,
//! perturbation comparisons and the fixed-point identity for boundary feedback.

use crate::error::{LabError, Result};
use crate::linalg::{
    gemv_adjoint_into, gemv_into, matmul, operator_norm, opnorm_between, resolvent, CMatrix, CVector, LinearOperator,
    LpNormSpec, NormEstimate, NormMethod, C64,
};
use crate::mild::{Stepper, TimeGrid};
use serde::Serialize;
use std::io::Write;

/// Largest `steps * dim` assembled densely and sent to the SVD.
pub const DENSE_LIMIT: usize = 512;
/// Relative spread across refinements accepted as "stable".
pub const STABILITY_TOL: f64 = 0.10;
/// Scalar constant against the 10x finer grid.
pub const SCALAR_ORACLE_TOL: f64 = 0.05;
/// Contraction level required of `𝓕^μ`.
pub const CONTRACTION: f64 = 0.5;
pub const DS_TOL: f64 = 5e-3;
pub const DEFAULT_SEED: u64 = 0x4d52;

/// `f ↦ (L w_k)_k` with `w_k = E w_{k-1} + Φ f_k`: outputs at `t_{k+1}`, inputs constant on `[t_k, t_{k+1})`.
/// `L = 𝔾` gives `ℛ`, `L = I` the solution map.
#[derive(Debug, Clone)]
pub struct ConvolutionOp {
    e: CMatrix,
    phi: CMatrix,
    left: Option<CMatrix>,
    pub grid: TimeGrid,
    n: usize,
}

impl ConvolutionOp {
    pub fn regularity(a: &CMatrix, grid: TimeGrid) -> Result<Self> {
        let st = Stepper::new(a, grid.h())?;
        Ok(Self { e: st.pair.e, phi: st.pair.phi, left: Some(a.clone()), grid, n: a.nrows() })
    }

    pub fn solution(a: &CMatrix, grid: TimeGrid) -> Result<Self> {
        let st = Stepper::new(a, grid.h())?;
        Ok(Self { e: st.pair.e, phi: st.pair.phi, left: None, grid, n: a.nrows() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn apply_vec(&self, f: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); f.len()];
        self.apply(f, &mut out);
        out
    }
}

impl LinearOperator for ConvolutionOp {
    fn nrows(&self) -> usize {
        self.n * self.grid.steps
    }
    fn ncols(&self) -> usize {
        self.n * self.grid.steps
    }
    fn apply(&self, x: &[C64], out: &mut [C64]) {
        let n = self.n;
        let mut w = vec![C64::new(0.0, 0.0); n];
        let mut t1 = vec![C64::new(0.0, 0.0); n];
        let mut t2 = vec![C64::new(0.0, 0.0); n];
        for k in 0..self.grid.steps {
            gemv_into(&self.e, &w, &mut t1);
            gemv_into(&self.phi, &x[k * n..(k + 1) * n], &mut t2);
            w.iter_mut().zip(t1.iter().zip(&t2)).for_each(|(o, (a, b))| *o = a + b);
            match &self.left {
                Some(l) => gemv_into(l, &w, &mut out[k * n..(k + 1) * n]),
                None => out[k * n..(k + 1) * n].copy_from_slice(&w),
            }
        }
    }
    fn apply_adjoint(&self, y: &[C64], out: &mut [C64]) {
        let n = self.n;
        let mut v = vec![C64::new(0.0, 0.0); n];
        let mut t1 = vec![C64::new(0.0, 0.0); n];
        let mut t2 = vec![C64::new(0.0, 0.0); n];
        for k in (0..self.grid.steps).rev() {
            gemv_adjoint_into(&self.e, &v, &mut t1);
            match &self.left {
                Some(l) => gemv_adjoint_into(l, &y[k * n..(k + 1) * n], &mut t2),
                None => t2.copy_from_slice(&y[k * n..(k + 1) * n]),
            }
            v.iter_mut().zip(t1.iter().zip(&t2)).for_each(|(o, (a, b))| *o = a + b);
            gemv_adjoint_into(&self.phi, &v, &mut out[k * n..(k + 1) * n]);
        }
    }
}

/// `g ↦ ℛ(M g)` with `M` acting pointwise in time.
struct PrecomposedOp<'a> {
    r: &'a ConvolutionOp,
    m: CMatrix,
}

impl LinearOperator for PrecomposedOp<'_> {
    fn nrows(&self) -> usize {
        self.r.nrows()
    }
    fn ncols(&self) -> usize {
        self.r.ncols()
    }
    fn apply(&self, x: &[C64], out: &mut [C64]) {
        let mx = pointwise(&self.m, x, false);
        self.r.apply(&mx, out);
    }
    fn apply_adjoint(&self, y: &[C64], out: &mut [C64]) {
        let mut tmp = vec![C64::new(0.0, 0.0); y.len()];
        self.r.apply_adjoint(y, &mut tmp);
        out.copy_from_slice(&pointwise(&self.m, &tmp, true));
    }
}

fn pointwise(m: &CMatrix, x: &[C64], adjoint: bool) -> Vec<C64> {
    let (ni, no) = if adjoint { (m.nrows(), m.ncols()) } else { (m.ncols(), m.nrows()) };
    let mut out = vec![C64::new(0.0, 0.0); x.len() / ni * no];
    for (xi, oi) in x.chunks(ni).zip(out.chunks_mut(no)) {
        if adjoint {
            gemv_adjoint_into(m, xi, oi)
        } else {
            gemv_into(m, xi, oi)
        }
    }
    out
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(LabError::Config(format!("p must lie in (1, inf), got {p}")));
    }
    Ok(())
}

fn signal_spec(p: f64, grid: TimeGrid, n: usize) -> Result<LpNormSpec> {
    LpNormSpec::uniform(p, grid.steps, n, grid.h())
}

/// Dense block matrix of `ℛ` (lower block-triangular, blocks `𝔾 E^{j-k} Φ`).
pub fn assemble_r(a: &CMatrix, grid: TimeGrid) -> Result<CMatrix> {
    Ok(ConvolutionOp::regularity(a, grid)?.to_dense())
}

/// `|op|_{L^p → L^p}`: dense SVD or probes below [`DENSE_LIMIT`], Lanczos or probes above.
pub fn convolution_norm(op: &dyn LinearOperator, grid: TimeGrid, n: usize, p: f64, seed: u64) -> Result<NormEstimate> {
    let spec = signal_spec(p, grid, n)?;
    if op.ncols() <= DENSE_LIMIT {
        opnorm_between(&op.to_dense(), &spec, &spec)
    } else {
        operator_norm(op, &spec, &spec, seed)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct WitnessTerms {
    pub norm_f: f64,
    pub norm_dz: f64,
    pub norm_z: f64,
    pub norm_gz: f64,
}

impl WitnessTerms {
    pub fn ratio(&self) -> f64 {
        if self.norm_f == 0.0 {
            0.0
        } else {
            (self.norm_dz + self.norm_z + self.norm_gz) / self.norm_f
        }
    }
}

/// Term norms for one forcing; `ż` comes from the equation, `ż = 𝔾z + f`.
pub fn witness_terms(a: &CMatrix, grid: TimeGrid, p: f64, f: &[C64]) -> Result<WitnessTerms> {
    let n = a.nrows();
    if f.len() != n * grid.steps {
        return Err(LabError::Dimension("forcing must hold one sample per step".into()));
    }
    let spec = signal_spec(p, grid, n)?;
    let z = ConvolutionOp::solution(a, grid)?.apply_vec(f);
    let gz = pointwise(a, &z, false);
    let dz: Vec<C64> = gz.iter().zip(f).map(|(u, v)| u + v).collect();
    Ok(WitnessTerms { norm_f: spec.norm(f), norm_dz: spec.norm(&dz), norm_z: spec.norm(&z), norm_gz: spec.norm(&gz) })
}

#[derive(Debug, Clone, Serialize)]
pub struct MaxRegReport {
    pub p: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub steps: usize,
    /// `2|ℛ| + 1 + |f ↦ z|`.
    pub c_est: f64,
    pub r_norm: f64,
    pub z_norm: f64,
    /// Terms for the near-maximizer of `|ℛ|`.
    pub terms: WitnessTerms,
    pub method: NormMethod,
    pub converged: bool,
}

pub fn maxreg_constant(a: &CMatrix, grid: TimeGrid, p: f64) -> Result<MaxRegReport> {
    check_p(p)?;
    let n = a.nrows();
    let r = ConvolutionOp::regularity(a, grid)?;
    let zop = ConvolutionOp::solution(a, grid)?;
    let rn = convolution_norm(&r, grid, n, p, DEFAULT_SEED)?;
    let zn = convolution_norm(&zop, grid, n, p, DEFAULT_SEED)?;
    let terms = if rn.argmax.iter().any(|v| v.norm() > 0.0) {
        witness_terms(a, grid, p, &rn.argmax)?
    } else {
        WitnessTerms::default()
    };
    Ok(MaxRegReport {
        p,
        t: grid.t_end,
        steps: grid.steps,
        c_est: 2.0 * rn.value + 1.0 + zn.value,
        r_norm: rn.value,
        z_norm: zn.value,
        terms,
        method: rn.method,
        converged: rn.converged && zn.converged,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    /// Reports at `n`, `2n`, `4n` steps.
    pub reports: Vec<MaxRegReport>,
    /// Largest relative spread of `C_est` across the refinements.
    pub variation: f64,
    pub preserved: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub preserved: bool,
}

impl ComparisonTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["label", "p", "T", "n", "C_est", "method", "converged"])?;
        for row in &self.rows {
            for r in &row.reports {
                let method = serde_json::to_value(r.method)?.as_str().unwrap_or("").to_string();
                wr.write_record([
                    row.label.clone(),
                    r.p.to_string(),
                    r.t.to_string(),
                    r.steps.to_string(),
                    format!("{:.10e}", r.c_est),
                    method,
                    r.converged.to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// `C_est` for each generator at `n`, `2n`, `4n` steps; "preserved" when every one is
/// finite and varies by at most [`STABILITY_TOL`].
pub fn perturbation_comparison(gens: &[(&str, &CMatrix)], grid: TimeGrid, p: f64) -> Result<ComparisonTable> {
    let mut rows = vec![];
    for (label, a) in gens {
        let reports = [1, 2, 4]
            .iter()
            .map(|&f| maxreg_constant(a, grid.refined(f), p))
            .collect::<Result<Vec<_>>>()?;
        let cs: Vec<f64> = reports.iter().map(|r| r.c_est).collect();
        let hi = cs.iter().cloned().fold(f64::MIN, f64::max);
        let lo = cs.iter().cloned().fold(f64::MAX, f64::min);
        let variation = (hi - lo) / hi;
        let preserved = cs.iter().all(|c| c.is_finite()) && variation <= STABILITY_TOL;
        rows.push(ComparisonRow { label: label.to_string(), reports, variation, preserved });
    }
    let preserved = rows.iter().all(|r| r.preserved);
    Ok(ComparisonTable { rows, preserved })
}

#[derive(Debug, Clone, Serialize)]
pub struct DsReport {
    pub mu: f64,
    /// `|𝓕^μ|` on `L^2`, `𝓕^μ g = ℛ(𝔻_μ K g)`.
    pub contraction: f64,
    /// `(I + 𝓕^μ) ℛ^cl f = ℛ[(I - 𝔻_μK) f + μ 𝔻_μ K z] + μ 𝔻_μ K z`.
    pub residual: f64,
    /// `(I - 𝓕^μ) ℛ^cl f = ℛ g_μ` with `g_μ = (I + 𝔻_μK) f + μ 𝔻_μ K z`.
    pub residual_printed_dmu: f64,
    /// Same with `g_μ = (I + 𝔻_μK) f + μ (Kz) 𝟙`, the scalar `Kz` broadcast over the state.
    pub residual_printed_broadcast: f64,
}

/// `𝓕^μ` norm on `L^2([0,T],X)`.
pub fn contraction_norm(a: &CMatrix, b: &CMatrix, k: &CMatrix, grid: TimeGrid, mu: f64) -> Result<f64> {
    let r = ConvolutionOp::regularity(a, grid)?;
    let dk = matmul(&resolvent(a, C64::new(mu, 0.0))?, &matmul(b, k));
    let op = PrecomposedOp { r: &r, m: dk };
    Ok(convolution_norm(&op, grid, a.nrows(), 2.0, DEFAULT_SEED)?.value)
}

/// Smallest `μ` in an increasing grid with `|𝓕^μ| ≤ 1/2`, by bisection on the grid index.
pub fn choose_mu(a: &CMatrix, b: &CMatrix, k: &CMatrix, grid: TimeGrid, mus: &[f64]) -> Result<(f64, f64)> {
    let eval = |i: usize| contraction_norm(a, b, k, grid, mus[i]);
    let last = mus.len().checked_sub(1).ok_or_else(|| LabError::Config("empty mu grid".into()))?;
    let top = eval(last)?;
    if top > CONTRACTION {
        return Err(LabError::Config(format!(
            "mu too small for contraction: |F^mu| = {top:.3} > 1/2 at mu = {}",
            mus[last]
        )));
    }
    let (mut lo, mut hi, mut hi_val) = (0usize, last, top);
    let first = eval(0)?;
    if first <= CONTRACTION {
        return Ok((mus[0], first));
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let v = eval(mid)?;
        if v <= CONTRACTION {
            hi = mid;
            hi_val = v;
        } else {
            lo = mid;
        }
    }
    Ok((mus[hi], hi_val))
}

/// Fixed-point identity for `𝒜 = A + BK` at a given `μ`.
///
/// `f` is sampled at the right endpoints `t_1..t_n`, flattened.
pub fn ds_fixed_point_check(a: &CMatrix, a_cl: &CMatrix, b: &CMatrix, k: &CMatrix, f: &[C64], grid: TimeGrid, mu: f64) -> Result<DsReport> {
    let n = a.nrows();
    if f.len() != n * grid.steps || a_cl.nrows() != n || b.nrows() != n || k.ncols() != n {
        return Err(LabError::Dimension("ds check: inconsistent shapes".into()));
    }
    let r = ConvolutionOp::regularity(a, grid)?;
    let z = ConvolutionOp::solution(a_cl, grid)?.apply_vec(f);
    let rcl = pointwise(a_cl, &z, false);
    let dmu = resolvent(a, C64::new(mu, 0.0))?;
    let dk = matmul(&dmu, &matmul(b, k));
    let dkz = pointwise(&dk, &z, false);
    let dkf = pointwise(&dk, f, false);
    let f_rcl = r.apply_vec(&pointwise(&dk, &rcl, false));
    let m = C64::new(mu, 0.0);
    let spec = signal_spec(2.0, grid, n)?;
    let rel = |lhs: &[C64], rhs: &[C64]| {
        let d: Vec<C64> = lhs.iter().zip(rhs).map(|(x, y)| x - y).collect();
        spec.norm(&d) / spec.norm(lhs).max(spec.norm(rhs)).max(f64::MIN_POSITIVE)
    };

    let lhs: Vec<C64> = rcl.iter().zip(&f_rcl).map(|(x, y)| x + y).collect();
    let g: Vec<C64> = (0..f.len()).map(|i| f[i] - dkf[i] + m * dkz[i]).collect();
    let rhs: Vec<C64> = r.apply_vec(&g).iter().zip(&dkz).map(|(x, y)| x + m * y).collect();
    let residual = rel(&lhs, &rhs);

    let lhs_p: Vec<C64> = rcl.iter().zip(&f_rcl).map(|(x, y)| x - y).collect();
    let g_d: Vec<C64> = (0..f.len()).map(|i| f[i] + dkf[i] + m * dkz[i]).collect();
    let residual_printed_dmu = rel(&lhs_p, &r.apply_vec(&g_d));
    let kz = pointwise(k, &z, false);
    let g_b: Vec<C64> = (0..f.len()).map(|i| f[i] + dkf[i] + m * kz[(i / n) * k.nrows()]).collect();
    let residual_printed_broadcast = rel(&lhs_p, &r.apply_vec(&g_b));

    let contraction = {
        let op = PrecomposedOp { r: &r, m: dk };
        convolution_norm(&op, grid, n, 2.0, DEFAULT_SEED)?.value
    };
    Ok(DsReport { mu, contraction, residual, residual_printed_dmu, residual_printed_broadcast })
}

/// Samples `f(t_{k+1})` for `k = 0..n`, flattened.
pub fn sample_right(grid: TimeGrid, f: impl Fn(f64) -> CVector) -> Vec<C64> {
    (1..=grid.steps).flat_map(|k| f(grid.node(k)).iter().copied().collect::<Vec<_>>()).collect()
}
