//! Admissibility constants, the input-output operator and feedback checks.

use crate::error::{LabError, Result};
use crate::linalg::{
    c, expm, identity, matmul, norm1, opnorm_between, resolvent, sigma_max, sigma_min, singular_values, CMatrix,
    CVector, LpNormSpec, C64,
};
use crate::mild::{max_rel_diff, Stepper, TimeGrid};
use crate::quadrature::linear_fit;
use crate::semigroup::Generator;
use serde::Serialize;

/// Singular-value threshold below which `I - F` counts as not invertible.
pub const FEEDBACK_MARGIN_TOL: f64 = 1e-8;
/// Agreement of the Yosida extension with `Cx` in finite dimensions.
pub const EXTENSION_TOL: f64 = 1e-8;
pub const GRAMIAN_TOL: f64 = 1e-6;
/// Relative change of the feedback margin under time refinement.
pub const MARGIN_STABILITY_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdmissibilityMethod {
    SvdExact,
    PowerProbe,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    pub alpha: f64,
    pub p: f64,
    pub kappa: f64,
    pub method: AdmissibilityMethod,
    pub probes: usize,
    pub converged: bool,
}

/// `∫_0^t e^{sA^H} C^H C e^{sA} ds`: Van Loan's block exponential on a short
/// horizon, then `W(2t) = W(t) + e^{tA^H} W(t) e^{tA}`.
pub fn observability_gramian(a: &CMatrix, cm: &CMatrix, t: f64) -> Result<CMatrix> {
    let n = a.nrows();
    if cm.ncols() != n {
        return Err(LabError::Dimension("C must have as many columns as A has rows".into()));
    }
    if t <= 0.0 {
        return Err(LabError::Config(format!("horizon must be positive, got {t}")));
    }
    let q = matmul(&cm.adjoint(), cm);
    let scale = norm1(a) * t;
    let k = if scale > 0.5 { (scale / 0.5).log2().ceil() as i32 } else { 0 };
    let t0 = t / 2f64.powi(k);
    let mut h = CMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&(-a.adjoint()));
    h.view_mut((0, n), (n, n)).copy_from(&q);
    h.view_mut((n, n), (n, n)).copy_from(a);
    let f = expm(&h, t0)?;
    let f12 = f.view((0, n), (n, n)).into_owned();
    let mut e = f.view((n, n), (n, n)).into_owned();
    let mut w = matmul(&e.adjoint(), &f12);
    for _ in 0..k {
        w = &w + matmul(&matmul(&e.adjoint(), &w), &e);
        e = matmul(&e, &e);
    }
    Ok((&w + w.adjoint()) * c(0.5, 0.0))
}

/// Rows `C e^{t_k A}`, `k = 1..n`, stacked.
fn sampled_observation(a: &CMatrix, cm: &CMatrix, grid: TimeGrid) -> Result<CMatrix> {
    let e = expm(a, grid.h())?;
    let (ny, n) = (cm.nrows(), a.nrows());
    let mut out = CMatrix::zeros(ny * grid.steps, n);
    let mut row = cm.clone();
    for k in 0..grid.steps {
        row = matmul(&row, &e);
        out.view_mut((k * ny, 0), (ny, n)).copy_from(&row);
    }
    Ok(out)
}

/// `κ` in `∫_0^α |C e^{tA} x|^p dt ≤ κ^p |x|^p`. Exact through the Gramian for
/// `p = 2`; otherwise a power-method lower bound on a right-endpoint time grid.
pub fn obs_admissibility(cm: &CMatrix, gen: &Generator, alpha: f64, p: f64, steps: usize) -> Result<AdmissibilityReport> {
    if !(p > 1.0 && p.is_finite()) || alpha <= 0.0 {
        return Err(LabError::Config(format!("need alpha > 0 and p in (1, inf), got alpha = {alpha}, p = {p}")));
    }
    if p == 2.0 {
        let w = observability_gramian(&gen.a, cm, alpha)?;
        let kappa = if w.nrows() == 0 { 0.0 } else { sigma_max(&w).sqrt() };
        return Ok(AdmissibilityReport { alpha, p, kappa, method: AdmissibilityMethod::SvdExact, probes: 0, converged: true });
    }
    let grid = TimeGrid::new(alpha, steps)?;
    let m = sampled_observation(&gen.a, cm, grid)?;
    let est = opnorm_between(
        &m,
        &LpNormSpec::new(2.0, vec![1.0], gen.dim())?,
        &LpNormSpec::uniform(p, steps, cm.nrows(), grid.h())?,
    )?;
    Ok(AdmissibilityReport {
        alpha,
        p,
        kappa: est.value,
        method: AdmissibilityMethod::PowerProbe,
        probes: crate::linalg::POWER_RESTARTS + 1,
        converged: est.converged,
    })
}

/// `Φ_{t₀} u = Σ_k e^{(n-1-k)hA} Φ(h) B u_k` as a matrix `[E^{n-1}ΦB … ΦB]`.
pub fn control_map(a: &CMatrix, b: &CMatrix, grid: TimeGrid) -> Result<CMatrix> {
    let st = Stepper::new(a, grid.h())?;
    let (n, m) = (a.nrows(), b.ncols());
    let mut out = CMatrix::zeros(n, m * grid.steps);
    let mut blk = matmul(&st.pair.phi, b);
    for k in (0..grid.steps).rev() {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = matmul(&st.pair.e, &blk);
    }
    Ok(out)
}

/// `|Φ_{t₀}|` from `L^p([0,t₀],U)` to `X`: exact controllability Gramian for `p = 2`,
/// power method over piecewise-constant inputs otherwise.
pub fn ctrl_admissibility(b: &CMatrix, gen: &Generator, t0: f64, p: f64, steps: usize) -> Result<AdmissibilityReport> {
    if !(p > 1.0 && p.is_finite()) || t0 <= 0.0 {
        return Err(LabError::Config(format!("need t0 > 0 and p in (1, inf), got t0 = {t0}, p = {p}")));
    }
    if b.nrows() != gen.dim() {
        return Err(LabError::Dimension("B must have n rows".into()));
    }
    if p == 2.0 {
        let w = observability_gramian(&gen.a.adjoint(), &b.adjoint(), t0)?;
        let kappa = if w.nrows() == 0 { 0.0 } else { sigma_max(&w).sqrt() };
        return Ok(AdmissibilityReport { alpha: t0, p, kappa, method: AdmissibilityMethod::SvdExact, probes: 0, converged: true });
    }
    let grid = TimeGrid::new(t0, steps)?;
    let m = control_map(&gen.a, b, grid)?;
    let est = opnorm_between(
        &m,
        &LpNormSpec::uniform(p, steps, b.ncols(), grid.h())?,
        &LpNormSpec::new(2.0, vec![1.0], gen.dim())?,
    )?;
    Ok(AdmissibilityReport {
        alpha: t0,
        p,
        kappa: est.value,
        method: AdmissibilityMethod::PowerProbe,
        probes: crate::linalg::POWER_RESTARTS + 1,
        converged: est.converged,
    })
}

/// Block matrix of `u ↦ 𝔽u` on a time grid: input samples `u_0..u_{n-1}` (piecewise
/// constant), output samples at `t_1..t_n`.
#[derive(Debug, Clone)]
pub struct IoOperatorMatrix {
    pub grid: TimeGrid,
    pub blocks: CMatrix,
    pub p: f64,
    pub ny: usize,
    pub nu: usize,
}

impl IoOperatorMatrix {
    pub fn from_blocks(grid: TimeGrid, blocks: CMatrix, p: f64, ny: usize, nu: usize) -> Result<Self> {
        if blocks.nrows() != ny * grid.steps || blocks.ncols() != nu * grid.steps {
            return Err(LabError::Dimension("block matrix does not match the grid".into()));
        }
        Ok(Self { grid, blocks, p, ny, nu })
    }

    fn spec(&self, block: usize) -> Result<LpNormSpec> {
        LpNormSpec::uniform(self.p, self.grid.steps, block, self.grid.h())
    }

    /// `ϑ_α = |𝔽|_{L^p → L^p}`.
    pub fn norm(&self) -> Result<f64> {
        Ok(opnorm_between(&self.blocks, &self.spec(self.nu)?, &self.spec(self.ny)?)?.value)
    }

    /// Restriction to the first `steps` samples (a shorter horizon).
    pub fn truncated(&self, steps: usize) -> Result<Self> {
        let grid = TimeGrid::new(self.grid.node(steps), steps)?;
        let blocks = self.blocks.view((0, 0), (steps * self.ny, steps * self.nu)).into_owned();
        Self::from_blocks(grid, blocks, self.p, self.ny, self.nu)
    }

    /// Largest entry in blocks strictly above the block diagonal.
    pub fn causality_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.grid.steps {
            for k in j + 1..self.grid.steps {
                let v = self.blocks.view((j * self.ny, k * self.nu), (self.ny, self.nu));
                worst = worst.max(v.iter().map(|z| z.norm()).fold(0.0, f64::max));
            }
        }
        worst
    }

    pub fn apply(&self, u: &CVector) -> CVector {
        crate::linalg::matvec(&self.blocks, u)
    }
}

/// `(𝔽u)(t_j) = C Σ_{k<j} e^{(t_j - t_{k+1})A} Φ(h) B u_k`: a block-Toeplitz lower-triangular matrix.
pub fn io_operator(a: &CMatrix, b: &CMatrix, cm: &CMatrix, grid: TimeGrid, p: f64) -> Result<IoOperatorMatrix> {
    let n = a.nrows();
    if b.nrows() != n || cm.ncols() != n {
        return Err(LabError::Dimension("A, B, C do not fit together".into()));
    }
    let st = Stepper::new(a, grid.h())?;
    let (ny, nu, steps) = (cm.nrows(), b.ncols(), grid.steps);
    let mut taps = Vec::with_capacity(steps);
    let mut x = matmul(&st.pair.phi, b);
    for _ in 0..steps {
        taps.push(matmul(cm, &x));
        x = matmul(&st.pair.e, &x);
    }
    let mut blocks = CMatrix::zeros(ny * steps, nu * steps);
    for j in 0..steps {
        for k in 0..=j {
            blocks.view_mut((j * ny, k * nu), (ny, nu)).copy_from(&taps[j - k]);
        }
    }
    IoOperatorMatrix::from_blocks(grid, blocks, p, ny, nu)
}

#[derive(Debug, Clone, Serialize)]
pub struct FeedbackReport {
    pub invertible: bool,
    /// `σ_min(I - 𝔽)` on the full horizon.
    pub margin: f64,
    /// The same on the first half of the horizon.
    pub margin_half: f64,
}

pub fn feedback_admissible(f: &IoOperatorMatrix) -> Result<FeedbackReport> {
    if f.ny != f.nu {
        return Err(LabError::Dimension("feedback needs dim Y = dim U".into()));
    }
    let margin_of = |m: &CMatrix| sigma_min(&(identity(m.nrows()) - m));
    let margin = margin_of(&f.blocks);
    let half = (f.grid.steps / 2).max(1);
    let margin_half = margin_of(&f.truncated(half)?.blocks);
    Ok(FeedbackReport { invertible: margin > FEEDBACK_MARGIN_TOL && margin_half > FEEDBACK_MARGIN_TOL, margin, margin_half })
}

/// `u* = (I - 𝔽)^{-1} Ψ x₀` against `C z(t_{k+1})` with `z` the closed-loop trajectory
/// `e^{t A_cl} x₀`: the discrete form of `u = C_Λ x`. Returns the relative gap.
pub fn feedback_solution_gap(a: &CMatrix, b: &CMatrix, cm: &CMatrix, a_cl: &CMatrix, x0: &CVector, grid: TimeGrid) -> Result<f64> {
    let f = io_operator(a, b, cm, grid, 2.0)?;
    let obs = sampled_observation(a, cm, grid)?;
    let psi = crate::linalg::matvec(&obs, x0);
    let m = identity(f.blocks.nrows()) - &f.blocks;
    let u = crate::linalg::solve(&m, &CMatrix::from_column_slice(psi.len(), 1, psi.as_slice()))?;
    let e = expm(a_cl, grid.h())?;
    let ny = cm.nrows();
    let mut z = x0.clone();
    let mut want = vec![];
    let mut got = vec![];
    for k in 0..grid.steps {
        z = crate::linalg::matvec(&e, &z);
        want.push(crate::linalg::matvec(cm, &z));
        got.push(CVector::from_iterator(ny, (0..ny).map(|i| u[(k * ny + i, 0)])));
    }
    Ok(max_rel_diff(&want, &got))
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub taus: Vec<f64>,
    /// `(1/τ)|∫_0^τ (𝔽 z₀)(s) ds|`.
    pub values: Vec<f64>,
    /// Aitken limit of the last three values.
    pub extrapolated: f64,
    pub regular_looking: bool,
}

/// Averaged step response for `u ≡ z₀` at `τ = T, T/2, …, T/16`.
///
/// Verdict: the last three values decrease and their Aitken limit is below a
/// tenth of the largest value.
pub fn regularity_check(f: &IoOperatorMatrix, z0: &CVector) -> Result<RegularityReport> {
    if z0.len() != f.nu {
        return Err(LabError::Dimension("z0 must live in U".into()));
    }
    let steps = f.grid.steps;
    if steps % 16 != 0 {
        return Err(LabError::Config("regularity check needs a step count divisible by 16".into()));
    }
    let u = CVector::from_iterator(steps * f.nu, (0..steps).flat_map(|_| z0.iter().copied()));
    let y = f.apply(&u);
    let h = f.grid.h();
    let mut taus = vec![];
    let mut values = vec![];
    for d in [1, 2, 4, 8, 16] {
        let m = steps / d;
        let tau = f.grid.node(m);
        let mut acc = CVector::zeros(f.ny);
        for k in 0..m {
            for i in 0..f.ny {
                acc[i] += y[k * f.ny + i] * h;
            }
        }
        taus.push(tau);
        values.push(acc.norm() / tau);
    }
    let [a, b, cc] = [values[2], values[3], values[4]];
    let denom = (cc - b) - (b - a);
    let extrapolated = if denom.abs() > 1e-300 { (cc - (cc - b).powi(2) / denom).max(0.0) } else { cc };
    let vmax = values.iter().cloned().fold(0.0, f64::max);
    let decreasing = a > b && b > cc;
    let regular_looking = vmax == 0.0 || (decreasing && extrapolated <= 0.1 * vmax);
    Ok(RegularityReport { taus, values, extrapolated, regular_looking })
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtensionReport {
    pub s: Vec<f64>,
    pub values: Vec<Vec<C64>>,
    /// Two-point Richardson limit in `1/s` from the last two points.
    pub limit: Vec<C64>,
    /// `|s C R(s,A) x - C x|` per point.
    pub errors: Vec<f64>,
    /// Log-log slope of `errors`; absent when all errors vanish.
    pub slope: Option<f64>,
    pub limit_error: f64,
    pub converged: bool,
}

/// `s C R(s,A) x` along an increasing real grid and its extrapolated limit.
pub fn yosida_extension(cm: &CMatrix, gen: &Generator, x: &CVector, s_grid: &[f64]) -> Result<ExtensionReport> {
    if s_grid.len() < 2 || s_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::Config("s grid must be increasing with at least two points".into()));
    }
    let w0 = gen.omega0()?;
    if s_grid[0] <= w0 {
        return Err(LabError::Config(format!("s grid must start above the growth bound {w0}")));
    }
    let cx = crate::linalg::matvec(cm, x);
    let mut values = vec![];
    let mut errors = vec![];
    for &s in s_grid {
        let r = resolvent(&gen.a, c(s, 0.0))?;
        let v = crate::linalg::matvec(cm, &crate::linalg::matvec(&r, x)) * c(s, 0.0);
        errors.push((&v - &cx).norm());
        values.push(v.iter().copied().collect::<Vec<_>>());
    }
    let k = s_grid.len() - 1;
    let (s1, s2) = (s_grid[k - 1], s_grid[k]);
    let limit: Vec<C64> = values[k - 1]
        .iter()
        .zip(&values[k])
        .map(|(v1, v2)| (v2 * s2 - v1 * s1) / (s2 - s1))
        .collect();
    let limit_error = limit.iter().zip(cx.iter()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let nz: Vec<(f64, f64)> = s_grid.iter().zip(&errors).filter(|(_, e)| **e > 0.0).map(|(s, e)| (s.ln(), e.ln())).collect();
    let slope = if nz.len() >= 2 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = nz.into_iter().unzip();
        Some(linear_fit(&xs, &ys).0)
    } else {
        None
    };
    let scale = cx.norm().max(1.0);
    Ok(ExtensionReport {
        s: s_grid.to_vec(),
        values,
        limit,
        errors,
        slope,
        limit_error,
        converged: limit_error <= EXTENSION_TOL * scale,
    })
}

/// Default extension grid: 1e1..1e4 times `max(|A|, 1)`, 4 points per decade.
pub fn extension_grid(gen: &Generator) -> Vec<f64> {
    let base = singular_values(&gen.a).first().copied().unwrap_or(0.0).max(1.0);
    crate::quadrature::log_grid(10.0 * base, 1e4 * base, 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one() -> CMatrix {
        CMatrix::from_element(1, 1, c(1.0, 0.0))
    }

    #[test]
    fn scalar_observation_constant() {
        let g = Generator::scalar(-1.0);
        let r = obs_admissibility(&one(), &g, 20.0, 2.0, 100).unwrap();
        assert!((r.kappa - 0.5f64.sqrt()).abs() < 1e-6, "{}", r.kappa);
        let z = obs_admissibility(&CMatrix::zeros(1, 1), &g, 1.0, 2.0, 100).unwrap();
        assert_eq!(z.kappa, 0.0);
    }

    #[test]
    fn gramian_closed_form() {
        // ∫_0^t e^{-2s} ds for a = -1 and the doubling branch
        let a = CMatrix::from_element(1, 1, c(-3.0, 0.0));
        let w = observability_gramian(&a, &one(), 2.0).unwrap()[(0, 0)].re;
        assert!((w - (1.0 - (-12f64).exp()) / 6.0).abs() < 1e-13);
    }

    #[test]
    fn identity_feedthrough_is_not_invertible() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let f = IoOperatorMatrix::from_blocks(grid, identity(8), 2.0, 1, 1).unwrap();
        let r = feedback_admissible(&f).unwrap();
        assert!(!r.invertible && r.margin < 1e-12);
        let z = IoOperatorMatrix::from_blocks(grid, CMatrix::zeros(8, 8), 2.0, 1, 1).unwrap();
        let r = feedback_admissible(&z).unwrap();
        assert!(r.invertible && (r.margin - 1.0).abs() < 1e-14);
    }
}
