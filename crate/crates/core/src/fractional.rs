//! Fractional powers `(-A)^{-β}` by contour quadrature on rays at `±ψ`, the
//! operator `𝕁 = C(-A)^{-β}`, and resolvent decay fits.

use crate::error::{LabError, Result};
use crate::linalg::{c, eig, identity, is_real, matmul, shifted, sigma_max, solve, CMatrix, C64};
use crate::quadrature::{gauss_legendre, linear_fit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Terms of `R(μ,A) = Σ A^k μ^{-k-1}` integrated in closed form beyond `R_max`.
const TAIL_TERMS: usize = 3;

/// Contour against eigendecomposition, relative.
pub const CONTOUR_TOL: f64 = 1e-6;
pub const J_TOL: f64 = 1e-8;
pub const ANGLE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContourSpec {
    /// Ray angle in `(π/2, π)`.
    pub psi: f64,
    /// Arc radius; `min |eig| / 10` when absent.
    pub eps: Option<f64>,
    /// Gauss-Legendre points per unit panel in `u = ln(r/ε)`.
    pub n_per_leg: usize,
    pub arc_points: usize,
    /// Truncation radius; `1e4 |A|` when absent. The tail beyond it is added analytically.
    pub r_max: Option<f64>,
}

impl Default for ContourSpec {
    fn default() -> Self {
        Self { psi: 0.75 * PI, eps: None, n_per_leg: 16, arc_points: 24, r_max: None }
    }
}

impl ContourSpec {
    pub fn with_psi(psi: f64) -> Self {
        Self { psi, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.psi > PI / 2.0 && self.psi < PI) {
            return Err(LabError::Config(format!("psi = {} must lie in (π/2, π)", self.psi)));
        }
        if self.n_per_leg < 2 || self.arc_points < 2 {
            return Err(LabError::Config("contour needs at least two points per panel and on the arc".into()));
        }
        Ok(())
    }
}

/// Discretized `(1/2πi)∫_Γ (-μ)^{-β} R(μ,A) dμ`: nodes with weights, plus the tail
/// coefficients multiplying `A^k`.
#[derive(Debug, Clone)]
pub struct ContourRule {
    pub nodes: Vec<C64>,
    pub weights: Vec<C64>,
    pub tail: Vec<f64>,
    pub eps: f64,
    pub r_max: f64,
    /// Size of the first neglected tail term relative to the leading one.
    pub tail_remainder: f64,
}

fn check_enclosed(eigs: &[C64], psi: f64, eps: f64) -> Result<()> {
    for &l in eigs {
        let inside = l.norm() > eps && l.arg().abs() > psi;
        if !inside {
            return Err(LabError::ContourSpectrum { eigenvalue: l });
        }
    }
    Ok(())
}

pub fn contour_rule(a: &CMatrix, beta: f64, spec: &ContourSpec) -> Result<ContourRule> {
    spec.validate()?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(LabError::Config(format!("beta = {beta} must lie in (0, 1]")));
    }
    let sp = eig(a)?;
    let min_mod = sp.values.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min);
    let eps = spec.eps.unwrap_or(min_mod / 10.0);
    check_enclosed(&sp.values, spec.psi, eps)?;
    let anorm = sigma_max(a);
    let r_max = spec.r_max.unwrap_or(1e4 * anorm.max(eps));
    let psi = spec.psi;
    let u_max = (r_max / eps).ln();
    let panels = u_max.ceil().max(1.0) as usize;
    let (gx, gw) = gauss_legendre(spec.n_per_leg);
    let du = u_max / panels as f64;
    let two_pi_i = C64::new(0.0, 2.0 * PI);
    let mut nodes = vec![];
    let mut weights = vec![];
    let up = C64::from_polar(1.0, psi);
    let down = C64::from_polar(1.0, -psi);
    // principal branches on the rays: -μ = r e^{∓i(π-ψ)}
    let ph_up = C64::from_polar(1.0, -beta * (psi - PI));
    let ph_down = C64::from_polar(1.0, -beta * (PI - psi));
    for p in 0..panels {
        for (x, w) in gx.iter().zip(&gw) {
            let u = du * (p as f64 + 0.5 * (x + 1.0));
            let wu = 0.5 * du * w;
            let r = eps * u.exp();
            let scale = r.powf(-beta) * wu;
            // dμ = μ du on both rays; the lower ray runs inward
            let mu = up * r;
            nodes.push(mu);
            weights.push(ph_up * mu * scale / two_pi_i);
            let mu = down * r;
            nodes.push(mu);
            weights.push(-(ph_down * mu * scale) / two_pi_i);
        }
    }
    // arc μ = -ε e^{iθ}, θ from (π-ψ) down to -(π-ψ)
    let half = PI - psi;
    let (ax, aw) = gauss_legendre(spec.arc_points);
    for (x, w) in ax.iter().zip(&aw) {
        let th = half * x;
        let mu = -C64::from_polar(eps, th);
        let dmu = C64::new(0.0, eps) * C64::from_polar(1.0, th) * (half * w);
        nodes.push(mu);
        weights.push(C64::from_polar(eps.powf(-beta), -beta * th) * dmu / two_pi_i);
    }
    let tail: Vec<f64> = (0..TAIL_TERMS)
        .map(|k| {
            let kf = k as f64;
            r_max.powf(-beta - kf) * (beta * (PI - psi) - kf * psi).sin() / (PI * (beta + kf))
        })
        .collect();
    let tail_remainder = (anorm / r_max).powi(TAIL_TERMS as i32);
    Ok(ContourRule { nodes, weights, tail, eps, r_max, tail_remainder })
}

fn tail_matrix(a: &CMatrix, tail: &[f64]) -> CMatrix {
    let n = a.nrows();
    let mut out = CMatrix::zeros(n, n);
    let mut pow = identity(n);
    for &t in tail {
        out += &pow * c(t, 0.0);
        pow = matmul(&pow, a);
    }
    out
}

fn realify(m: CMatrix, real: bool) -> CMatrix {
    if real {
        m.map(|z| c(z.re, 0.0))
    } else {
        m
    }
}

/// `(-A)^{-β}` by contour quadrature.
pub fn frac_power_contour(a: &CMatrix, beta: f64, spec: &ContourSpec) -> Result<CMatrix> {
    let rule = contour_rule(a, beta, spec)?;
    let n = a.nrows();
    let mut acc = tail_matrix(a, &rule.tail);
    let id = identity(n);
    for (mu, w) in rule.nodes.iter().zip(&rule.weights) {
        acc += solve(&shifted(a, *mu), &id)? * *w;
    }
    Ok(realify(acc, is_real(a)))
}

/// `(1/2πi)∫_Γ (-μ)^{-β} C R(μ,A) dμ`, computed row-wise through `(μ - A)^H`.
pub fn j_operator(cm: &CMatrix, a: &CMatrix, beta: f64, spec: &ContourSpec) -> Result<CMatrix> {
    if cm.ncols() != a.nrows() {
        return Err(LabError::Dimension("C must have as many columns as A has rows".into()));
    }
    let rule = contour_rule(a, beta, spec)?;
    let ch = cm.adjoint();
    let mut acc = matmul(cm, &tail_matrix(a, &rule.tail));
    for (mu, w) in rule.nodes.iter().zip(&rule.weights) {
        let rh = solve(&shifted(a, *mu).adjoint(), &ch)?;
        acc += rh.adjoint() * *w;
    }
    Ok(realify(acc, is_real(a) && is_real(cm)))
}

/// `V f(Λ) V^{-1}` from the eigendecomposition.
pub fn matrix_function_eig(a: &CMatrix, f: impl Fn(C64) -> C64) -> Result<CMatrix> {
    let sp = eig(a)?;
    let v = sp.vectors.ok_or_else(|| LabError::NoConvergence("eigenvectors unavailable".into()))?;
    let fd = CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(sp.values.len(), sp.values.iter().map(|&l| f(l))));
    let out = if sp.orthogonal { matmul(&matmul(&v, &fd), &v.adjoint()) } else { matmul(&matmul(&v, &fd), &solve(&v, &identity(a.nrows()))?) };
    Ok(realify(out, is_real(a)))
}

/// `(-A)^{-β}` through the eigendecomposition; the oracle for the contour path.
pub fn frac_power_eig(a: &CMatrix, beta: f64) -> Result<CMatrix> {
    matrix_function_eig(a, |l| (-l).powf(-beta))
}

/// `(-A)^θ` for `θ ∈ (0, 1]` through the eigendecomposition; a zero eigenvalue maps to zero.
pub fn pos_power_eig(a: &CMatrix, theta: f64) -> Result<CMatrix> {
    let scale = sigma_max(a).max(1.0);
    matrix_function_eig(a, |l| if l.norm() <= 1e-10 * scale { c(0.0, 0.0) } else { (-l).powf(theta) })
}

/// `(-A)^θ = (-A)(-A + P₀)^{θ-1}` with `P₀` the spectral projector on a simple
/// kernel (absent when `A` is invertible); the inner power is taken by contour.
pub fn pos_power_contour(a: &CMatrix, theta: f64, spec: &ContourSpec) -> Result<CMatrix> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(LabError::Config(format!("theta = {theta} must lie in (0, 1]")));
    }
    let n = a.nrows();
    if theta == 1.0 {
        return Ok(-a.clone());
    }
    let p0 = kernel_projector(a)?;
    let shifted_a = match &p0 {
        Some(p) => a - p,
        None => a.clone(),
    };
    let inner = frac_power_contour(&shifted_a, 1.0 - theta, spec)?;
    let out = matmul(&(-a.clone()), &inner);
    debug_assert_eq!(out.nrows(), n);
    Ok(realify(out, is_real(a)))
}

/// Rank-one projector `v w^H / (w^H v)` onto the kernel, if `A` has a (simple) zero eigenvalue.
pub fn kernel_projector(a: &CMatrix) -> Result<Option<CMatrix>> {
    let scale = sigma_max(a).max(1.0);
    let sp = eig(a)?;
    let zeros: Vec<usize> = (0..sp.values.len()).filter(|&i| sp.values[i].norm() <= 1e-9 * scale).collect();
    match zeros.len() {
        0 => Ok(None),
        1 => {
            let v = sp.vectors.as_ref().unwrap().column(zeros[0]).into_owned();
            let spl = eig(&a.adjoint())?;
            let j = (0..spl.values.len())
                .min_by(|&i, &k| spl.values[i].norm().partial_cmp(&spl.values[k].norm()).unwrap())
                .unwrap();
            let w = spl.vectors.as_ref().unwrap().column(j).into_owned();
            let denom = w.dotc(&v);
            if denom.norm() < 1e-12 {
                return Err(LabError::Singular("zero eigenvalue is not semisimple".into()));
            }
            Ok(Some(&v * w.adjoint() / denom))
        }
        k => Err(LabError::Config(format!("kernel of dimension {k}: only simple kernels are projected out"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub mus: Vec<f64>,
    pub norms: Vec<f64>,
    /// Slope of `ln |C R(μ,A)|` against `ln μ`; absent when `C = 0`.
    pub slope: Option<f64>,
    /// `sup μ^{1/q} |C R(μ,A)|`.
    pub m: f64,
    pub degenerate: bool,
}

/// Log-log fit of `|C R(μ,A)|_2` along real `μ`.
pub fn resolvent_decay_fit(cm: &CMatrix, a: &CMatrix, mus: &[f64], q: f64) -> Result<DecayFit> {
    if mus.iter().any(|&m| m <= 0.0) {
        return Err(LabError::Config("decay fit needs Re μ > 0".into()));
    }
    let mut norms = vec![];
    for &m in mus {
        let rh = solve(&shifted(a, c(m, 0.0)).adjoint(), &cm.adjoint())?;
        norms.push(if rh.ncols() == 0 { 0.0 } else { sigma_max(&rh) });
    }
    let degenerate = norms.iter().all(|&v| v == 0.0);
    let slope = if degenerate {
        None
    } else {
        let lx: Vec<f64> = mus.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
        Some(linear_fit(&lx, &ly).0)
    };
    let m = mus.iter().zip(&norms).map(|(mu, n)| mu.powf(1.0 / q) * n).fold(0.0, f64::max);
    Ok(DecayFit { mus: mus.to_vec(), norms, slope, m, degenerate })
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationBound {
    /// `|P (-A)^{-β}|_2` via the contour.
    pub c: f64,
    pub probes: usize,
    /// Largest `|Px| / |(-A)^β x|` over the probes.
    pub worst_ratio: f64,
    pub holds: bool,
}

/// `|Px| ≤ c |(-A)^β x|` with `c = |𝕁|` for `𝕁 = P(-A)^{-β}`, checked on random probes.
pub fn small_perturbation_bound(p: &CMatrix, a: &CMatrix, beta: f64, spec: &ContourSpec, seed: u64) -> Result<PerturbationBound> {
    let j = j_operator(p, a, beta, spec)?;
    let cst = if j.nrows() == 0 { 0.0 } else { sigma_max(&j) };
    let pow = pos_power_contour(a, beta, spec)?;
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut holds = true;
    let probes = 100;
    for _ in 0..probes {
        let x = CMatrix::from_fn(n, 1, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let px = matmul(p, &x).norm();
        let ax = matmul(&pow, &x).norm();
        worst = worst.max(px / ax);
        if px > (cst + 1e-8) * ax {
            holds = false;
        }
    }
    Ok(PerturbationBound { c: cst, probes, worst_ratio: worst, holds })
}
