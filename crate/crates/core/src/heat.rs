//! The heat equation on (0,1) with `w'(0) = 0` and the nonlocal boundary
//! condition `w'(1) = w(1) - w(0)`, plus its Volterra extension.

use crate::boundary::{control_vector, dirichlet, BoundaryParts, BoundarySystem};
use crate::error::{LabError, Result};
use crate::linalg::{c, CMatrix, CVector, C64};
use crate::fractional::{pos_power_contour, pos_power_eig, ContourSpec};
use crate::maxreg::{maxreg_constant, witness_terms, MaxRegReport, WitnessTerms};
use crate::mild::{evolve_matrix, max_rel_diff, BochnerSignal, TimeGrid};
use crate::volterra::{companion_assemble, companion_vs_direct, direct_solve, CrossCheck, FSpec, Kernel, VolterraSpec};
use crate::quadrature::{composite_gl, linear_fit, log_grid, trapezoid_weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Three-point second differences on a vertex grid with one ghost node at each end.
///
/// Extended layout: ghost at 0, node `s_i = i/N` at `i + 1`, ghost at `N + 2`.
/// `Z` is the centered `f'(0)`, `G` the centered `f'(1)`, `K f = f(1) - f(0)`.
pub fn heat_boundary_system(n: usize) -> Result<BoundarySystem> {
    if n < 8 {
        return Err(LabError::Config(format!("heat grid needs N >= 8, got {n}")));
    }
    let ds = 1.0 / n as f64;
    let n_ext = n + 3;
    let mut am = CMatrix::zeros(n + 1, n_ext);
    let inv2 = 1.0 / (ds * ds);
    for i in 0..=n {
        am[(i, i)] = c(inv2, 0.0);
        am[(i, i + 1)] = c(-2.0 * inv2, 0.0);
        am[(i, i + 2)] = c(inv2, 0.0);
    }
    let mut z = CMatrix::zeros(1, n_ext);
    z[(0, 2)] = c(0.5 / ds, 0.0);
    z[(0, 0)] = c(-0.5 / ds, 0.0);
    let mut g = CMatrix::zeros(1, n_ext);
    g[(0, n + 2)] = c(0.5 / ds, 0.0);
    g[(0, n)] = c(-0.5 / ds, 0.0);
    let mut k = CMatrix::zeros(1, n_ext);
    k[(0, n + 1)] = c(1.0, 0.0);
    k[(0, 1)] = c(-1.0, 0.0);
    BoundarySystem::new(BoundaryParts {
        n_ext,
        state: (1..=n + 1).collect(),
        am,
        z,
        g,
        k,
        weights: trapezoid_weights(n, 1.0),
        nodes: (0..=n).map(|i| i as f64 * ds).collect(),
    })
}

/// Samples `cos(kπ s)` on the state nodes.
pub fn cos_mode(bs: &BoundarySystem, k: usize) -> CVector {
    CVector::from_iterator(bs.n_state(), bs.nodes().iter().map(|s| c((k as f64 * std::f64::consts::PI * s).cos(), 0.0)))
}

/// The row `x ↦ x(1) - x(0)` on the state grid.
pub fn k0_row(bs: &BoundarySystem) -> CMatrix {
    let n = bs.n_state();
    let mut k = CMatrix::zeros(1, n);
    k[(0, n - 1)] = c(1.0, 0.0);
    k[(0, 0)] = c(-1.0, 0.0);
    k
}

/// Bounded averaging functional `x ↦ ∫_0^1 x ds` (trapezoid), used where `K` must be bounded on `X`.
pub fn averaging_row(bs: &BoundarySystem) -> CMatrix {
    CMatrix::from_fn(1, bs.n_state(), |_, j| c(bs.weights()[j], 0.0))
}

/// The heat triple with `K` replaced by the averaging functional.
pub fn heat_with_averaging(n: usize) -> Result<BoundarySystem> {
    let bs = heat_boundary_system(n)?;
    let row = averaging_row(&bs);
    let mut k = CMatrix::zeros(1, bs.parts().n_ext);
    for (i, &s) in bs.parts().state.iter().enumerate() {
        k[(0, s)] = row[(0, i)];
    }
    bs.with_k(k)
}

/// `R(1,𝒜)² cos(πs)`, normalized: a smooth initial state in the domain of `𝒜²`.
pub fn smooth_initial(bs: &BoundarySystem) -> Result<CVector> {
    let r = crate::linalg::resolvent(bs.a_pert(), c(1.0, 0.0))?;
    let x = crate::linalg::matvec(&r, &crate::linalg::matvec(&r, &cos_mode(bs, 1)));
    let n = x.norm();
    Ok(x / c(n, 0.0))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct HeatConfig {
    #[serde(rename = "N", alias = "n_space")]
    pub n: usize,
    pub r: f64,
    pub p: f64,
    #[serde(rename = "T", alias = "t")]
    pub t: f64,
    pub steps: usize,
    pub theta_frac: f64,
    /// Exponent in the admissibility window `2r/(r+1) < p < 1/γ`.
    pub gamma: f64,
    /// Strength of the lower-order perturbation `P = eps (-𝔸₀)^{1/3}`.
    pub eps: f64,
    /// Accept `theta_frac` outside `(0, 1/p)`.
    pub allow_theta: bool,
}

impl Default for HeatConfig {
    fn default() -> Self {
        Self { n: 64, r: 2.0, p: 2.0, t: 1.0, steps: 512, theta_frac: 0.3, gamma: 5.0 / 12.0, eps: 0.1, allow_theta: false }
    }
}

impl HeatConfig {
    /// Hard errors for unusable parameters; returns warnings for points outside the
    /// admissibility window, which is advisory.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.n < 8 {
            return Err(LabError::Config(format!("N must be >= 8, got {}", self.n)));
        }
        if !(self.r > 1.0 && self.r.is_finite()) {
            return Err(LabError::Config(format!("r must lie in (1, inf), got {}", self.r)));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(LabError::Config(format!("p must lie in (1, inf), got {}", self.p)));
        }
        if !(self.t > 0.0 && self.t.is_finite()) || self.steps == 0 {
            return Err(LabError::Config("T must be positive and steps >= 1".into()));
        }
        let theta_ok = self.theta_frac > 0.0 && self.theta_frac < 1.0 / self.p;
        if !theta_ok && !self.allow_theta {
            return Err(LabError::Config(format!(
                "theta_frac = {} outside (0, 1/p) = (0, {:.4}); pass the override to explore anyway",
                self.theta_frac,
                1.0 / self.p
            )));
        }
        let mut warn = vec![];
        if !theta_ok {
            warn.push(format!("theta_frac = {} outside (0, 1/p), override active", self.theta_frac));
        }
        let (r, g, p) = (self.r, self.gamma, self.p);
        if !(g > 1.0 / 3.0 && g < 1.0 / r) {
            warn.push(format!("gamma = {g} outside (1/3, 1/r) = (0.3333, {:.4})", 1.0 / r));
        }
        if !(p > 2.0 * r / (r + 1.0) && p < 1.0 / g) {
            warn.push(format!("p = {p} outside the window ({:.4}, {:.4})", 2.0 * r / (r + 1.0), 1.0 / g));
        }
        if self.beta() + g >= 1.0 {
            warn.push(format!("beta + gamma = {:.4} is not below 1", self.beta() + g));
        }
        if r >= 3.0 {
            warn.push(format!("r = {r} outside (1, 3)"));
        }
        Ok(warn)
    }

    /// `β = (r-1)/(2r)`.
    pub fn beta(&self) -> f64 {
        (self.r - 1.0) / (2.0 * self.r)
    }
}

pub fn build_heat(cfg: &HeatConfig) -> Result<BoundarySystem> {
    cfg.validate()?;
    heat_boundary_system(cfg.n)
}

/// `d(s) = cosh(√λ s) / (√λ sinh √λ)`, the exact Dirichlet solution with unit flux at 1.
pub fn dirichlet_exact(lambda: f64, s: f64) -> f64 {
    let q = lambda.sqrt();
    // ratio written with decaying exponentials to stay finite for large λ
    let num = (-q * (1.0 - s)).exp() + (-q * (1.0 + s)).exp();
    num / (q * (1.0 - (-2.0 * q).exp()))
}

#[derive(Debug, Clone, Serialize)]
pub struct FavardReport {
    pub r: f64,
    pub lambdas: Vec<f64>,
    pub norms: Vec<f64>,
    pub slope: f64,
    pub expected: f64,
    /// `sup λ^{(r+1)/(2r)} ‖𝔻_λ‖`.
    pub sup_scaled: f64,
    pub flagged: Vec<f64>,
}

pub const FAVARD_SLOPE_TOL: f64 = 0.05;
pub const DIRICHLET_ORACLE_TOL: f64 = 0.01;
/// Share of the adjoint functional within 3 cells of s = 1.
pub const ADJOINT_CONCENTRATION: f64 = 0.95;
pub const STEADY_TOL: f64 = 1e-6;

/// Log-log slope of `‖𝔻_λ‖_{L^r}` on a real λ grid.
pub fn favard_exponent_scan(bs: &BoundarySystem, lambdas: &[f64], r: f64) -> Result<FavardReport> {
    let expected = -(r + 1.0) / (2.0 * r);
    let mut ls = vec![];
    let mut norms = vec![];
    let mut flagged = vec![];
    for &l in lambdas {
        match dirichlet(bs, c(l, 0.0)) {
            Ok(d) => {
                let col: Vec<C64> = d.d.column(0).iter().copied().collect();
                ls.push(l);
                norms.push(bs.lr_norm(&col, r));
            }
            Err(LabError::InSpectrum { .. }) | Err(LabError::Singular(_)) => flagged.push(l),
            Err(e) => return Err(e),
        }
    }
    if ls.len() < 2 {
        return Err(LabError::Config("Favard scan needs at least two usable λ".into()));
    }
    let lx: Vec<f64> = ls.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let (slope, _) = linear_fit(&lx, &ly);
    let sup_scaled = ls.iter().zip(&norms).map(|(l, n)| l.powf(-expected) * n).fold(0.0, f64::max);
    Ok(FavardReport { r, lambdas: ls, norms, slope, expected, sup_scaled, flagged })
}

/// Default Favard grid: 10 points per decade on `[10, 1e4]`.
pub fn favard_grid() -> Vec<f64> {
    log_grid(10.0, 1e4, 10)
}

/// `(∫_0^1 |d(s)|^r ds)^{1/r}` for the exact Dirichlet solution, by Gauss-Legendre.
pub fn dirichlet_exact_norm(lambda: f64, r: f64) -> f64 {
    let (xs, ws) = composite_gl(0.0, 1.0, 200, 8);
    xs.iter().zip(&ws).map(|(s, w)| w * dirichlet_exact(lambda, *s).abs().powf(r)).sum::<f64>().powf(1.0 / r)
}

/// Built-in smooth functions on [0,1] with exact derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TestFunction {
    Cos(u32),
    /// Coefficients in increasing degree.
    Poly(Vec<f64>),
}

impl TestFunction {
    /// `(f, f', f'')` at `s`.
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        match self {
            TestFunction::Cos(k) => {
                let w = *k as f64 * std::f64::consts::PI;
                ((w * s).cos(), -w * (w * s).sin(), -w * w * (w * s).cos())
            }
            TestFunction::Poly(cs) => {
                let mut out = (0.0, 0.0, 0.0);
                for (d, &a) in cs.iter().enumerate() {
                    let d = d as i32;
                    out.0 += a * s.powi(d);
                    if d >= 1 {
                        out.1 += a * d as f64 * s.powi(d - 1);
                    }
                    if d >= 2 {
                        out.2 += a * (d * (d - 1)) as f64 * s.powi(d - 2);
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InterpolationReport {
    pub norm_f: f64,
    pub norm_df: f64,
    pub norm_ddf: f64,
    /// `min_ε (9/ε ‖f‖ + ε ‖f''‖ - ‖f'‖)` over the grid.
    pub min_slack: f64,
    pub argmin_eps: f64,
    pub holds: bool,
}

/// `‖f'‖_r ≤ (9/ε)‖f‖_r + ε‖f''‖_r` for every ε in the grid.
pub fn interpolation_inequality_check(f: &TestFunction, eps_grid: &[f64], r: f64) -> InterpolationReport {
    let (xs, ws) = composite_gl(0.0, 1.0, 64, 8);
    let mut acc = [0.0f64; 3];
    for (s, w) in xs.iter().zip(&ws) {
        let (a, b, cc) = f.eval(*s);
        acc[0] += w * a.abs().powf(r);
        acc[1] += w * b.abs().powf(r);
        acc[2] += w * cc.abs().powf(r);
    }
    let [nf, ndf, nddf] = acc.map(|v| v.powf(1.0 / r));
    let mut min_slack = f64::INFINITY;
    let mut argmin_eps = f64::NAN;
    for &e in eps_grid {
        let slack = 9.0 / e * nf + e * nddf - ndf;
        if slack < min_slack {
            min_slack = slack;
            argmin_eps = e;
        }
    }
    InterpolationReport { norm_f: nf, norm_df: ndf, norm_ddf: nddf, min_slack, argmin_eps, holds: min_slack >= 0.0 }
}

#[derive(Debug, Clone, Serialize)]
pub struct AdjointBReport {
    /// `|w_i conj(B_i)|`: the adjoint functional as weights on the state nodes.
    pub functional: Vec<f64>,
    /// Share of the functional's mass within 3 cells of s = 1.
    pub concentration: f64,
    /// Distance of the adjoint functional from point evaluation at s = 1.
    pub delta_residual: f64,
    /// `|⟨Bu, v⟩ - u (B^* v)|` over random probes, relative.
    pub pairing_residual: f64,
}

/// Adjoint of `u ↦ B u` for the trapezoid inner product on the state grid.
pub fn adjoint_b_check(bs: &BoundarySystem, lambda: C64, seed: u64) -> Result<AdjointBReport> {
    let cv = control_vector(bs, lambda)?;
    let n = bs.n_state();
    let w = bs.weights();
    let row: Vec<C64> = (0..n).map(|i| cv.b[(i, 0)].conj() * w[i]).collect();
    let functional: Vec<f64> = row.iter().map(|z| z.norm()).collect();
    let total: f64 = functional.iter().sum();
    let near: f64 = (0..n).filter(|&i| bs.nodes()[i] >= bs.nodes()[n - 1] - 3.0 / (n - 1) as f64 - 1e-12).map(|i| functional[i]).sum();
    let delta_residual = (0..n).map(|i| (row[i] - if i == n - 1 { c(1.0, 0.0) } else { c(0.0, 0.0) }).norm()).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..8 {
        let u = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let v: Vec<C64> = (0..n).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        // ⟨Bu, v⟩ = Σ w_i B_i u conj(v_i); u conj(B^* v) with B^* v = Σ w_i conj(B_i) v_i
        let lhs: C64 = (0..n).map(|i| cv.b[(i, 0)] * u * v[i].conj() * w[i]).sum();
        let bstar: C64 = (0..n).map(|i| row[i] * v[i]).sum();
        let rhs = u * bstar.conj();
        let scale = (0..n).map(|i| (cv.b[(i, 0)] * w[i]).norm() * v[i].norm()).sum::<f64>() * u.norm();
        worst = worst.max((lhs - rhs).norm() / scale.max(f64::MIN_POSITIVE));
    }
    Ok(AdjointBReport {
        functional,
        concentration: if total > 0.0 { near / total } else { 0.0 },
        delta_residual,
        pairing_residual: worst,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PdeRun {
    #[serde(skip)]
    pub z: BochnerSignal,
    pub report: MaxRegReport,
    /// `|f|`, `|ż|`, `|z|`, `|𝒜 z|` for the supplied forcing.
    pub terms: WitnessTerms,
}

/// Solves `ż = 𝒜 z + f`, `z(0) = 0`, and estimates the maximal-regularity constant on the same grid.
pub fn run_pde(cfg: &HeatConfig, f: &BochnerSignal) -> Result<PdeRun> {
    let bs = build_heat(cfg)?;
    let a = bs.a_pert();
    if f.dim() != a.nrows() {
        return Err(LabError::Dimension(format!("forcing has dimension {}, state {}", f.dim(), a.nrows())));
    }
    let z = evolve_matrix(a, &CVector::zeros(a.nrows()), f)?;
    let report = maxreg_constant(a, f.grid, cfg.p)?;
    let flat: Vec<C64> = f.samples[1..].iter().flat_map(|v| v.iter().copied()).collect();
    let terms = witness_terms(a, f.grid, cfg.p, &flat)?;
    Ok(PdeRun { z, report, terms })
}

/// Memory grid and kernel for the Volterra run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PideConfig {
    pub kernel: Kernel,
    pub n_mem: usize,
    /// Memory nodes of the companion used for the (unasserted) maximal-regularity report.
    pub report_mem: usize,
    /// Cap on the time steps of that report; the dense companion makes it the expensive part.
    pub report_steps: usize,
    pub contour: ContourSpec,
}

impl Default for PideConfig {
    fn default() -> Self {
        Self { kernel: Kernel::Exp { rate: 1.0 }, n_mem: 64, report_mem: 4, report_steps: 128, contour: ContourSpec::default() }
    }
}

pub const PIDE_SPACE: &str = "surrogate space";
pub const F_PATHS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct PideRun {
    #[serde(skip)]
    pub rho: BochnerSignal,
    /// Maximal-regularity report for the companion generator on the finite-memory product space.
    pub report: MaxRegReport,
    pub space: &'static str,
    pub cross: CrossCheck,
    /// Relative gap between direct solutions with `F` from the contour and from the eigendecomposition.
    pub f_paths_gap: f64,
}

/// `ϱ' = 𝒜ϱ + ∫_0^t a(t-s) F ϱ(s) ds + f` with `F = (-𝔸₀)^θ`.
pub fn run_pide(cfg: &HeatConfig, pide: &PideConfig, f: &BochnerSignal) -> Result<PideRun> {
    let bs = build_heat(cfg)?;
    pide.kernel.validate()?;
    let a = bs.a_pert();
    if f.dim() != a.nrows() {
        return Err(LabError::Dimension(format!("forcing has dimension {}, state {}", f.dim(), a.nrows())));
    }
    let fe = pos_power_eig(bs.a(), cfg.theta_frac)?;
    let fc = pos_power_contour(bs.a(), cfg.theta_frac, &pide.contour)?;
    let rho = direct_solve(a, &fe, &pide.kernel, f)?;
    let rho_c = direct_solve(a, &fc, &pide.kernel, f)?;
    let f_paths_gap = max_rel_diff(&rho.samples, &rho_c.samples);
    let vspec = VolterraSpec { kernel: pide.kernel.clone(), f: FSpec::Matrix(fe.clone()), s_max: None, n_mem: pide.n_mem };
    let cross = companion_vs_direct(a, &vspec, f)?;
    let small = companion_assemble(a, &fe, &pide.kernel, f.grid.t_end, pide.report_mem.max(1))?;
    let rgrid = TimeGrid::new(f.grid.t_end, f.grid.steps.min(pide.report_steps.max(1)))?;
    let report = maxreg_constant(&small.to_dense(), rgrid, cfg.p)?;
    Ok(PideRun { rho, report, space: PIDE_SPACE, cross, f_paths_gap })
}

/// Long-format `t,s,w` table (real parts).
pub fn write_field_csv<W: std::io::Write>(bs: &BoundarySystem, z: &BochnerSignal, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "s", "w"])?;
    for (k, v) in z.samples.iter().enumerate() {
        let t = z.grid.node(k);
        for (s, x) in bs.nodes().iter().zip(v.iter()) {
            out.write_record([format!("{t:e}"), format!("{s:e}"), format!("{:e}", x.re)])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_in_window() {
        let w = HeatConfig::default().validate().unwrap();
        assert!(w.is_empty(), "{w:?}");
        let bad = HeatConfig { theta_frac: 0.7, ..Default::default() };
        assert!(bad.validate().is_err());
        let over = HeatConfig { theta_frac: 0.7, allow_theta: true, ..Default::default() };
        assert_eq!(over.validate().unwrap().len(), 1);
        assert!(HeatConfig { n: 4, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn exact_dirichlet_values() {
        assert!((dirichlet_exact(1.0, 1.0) - 1.0 / 1f64.tanh()).abs() < 1e-14);
        assert!((dirichlet_exact(4.0, 1.0) - 2f64.cosh() / (2.0 * 2f64.sinh())).abs() < 1e-14);
    }

    #[test]
    fn polynomial_derivatives() {
        let f = TestFunction::Poly(vec![1.0, 0.0, 3.0]);
        assert_eq!(f.eval(2.0), (13.0, 12.0, 6.0));
    }
}
