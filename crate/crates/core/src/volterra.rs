//! Bergman-space quadrature, the companion system for Volterra equations with a
//! memory term, and its cross-check against a direct convolution solver.

use crate::admissibility::obs_admissibility;
use crate::error::{LabError, Result};
use crate::fractional::pos_power_eig;
use crate::linalg::{c, expm, gemv_into, matmul, sigma_max, CMatrix, CVector, C64};
use crate::mild::{max_rel_diff, BochnerSignal, Stepper, TimeGrid};
use crate::quadrature::{composite_gl, gauss_legendre};
use crate::semigroup::Generator;
use serde::{Deserialize, Serialize};

/// Kernel tail above which a memory horizon shorter than the run is rejected.
pub const MEMORY_TAIL_TOL: f64 = 1e-10;
pub const DEFAULT_N_MEM: usize = 64;
pub const UPSILON_SLACK: f64 = 0.01;
pub const BERGMAN_TOL: f64 = 5e-3;
pub const TRACE_STABILITY_TOL: f64 = 0.05;
/// Companion against direct solver, relative.
pub const PIDE_TOL: f64 = 1e-2;

/// Built-in memory kernels, holomorphic on the right half-plane sectors used here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Kernel {
    /// `e^{-rate z}`.
    Exp { rate: f64 },
    /// `(shift + z)^{-2}`.
    Rational { shift: f64 },
    /// `e^{-(z/width)^2}`; holomorphic and decaying for opening angles below π/4.
    Gaussian { width: f64 },
    Zero,
}

impl Kernel {
    pub fn eval(&self, z: C64) -> C64 {
        match *self {
            Kernel::Exp { rate } => (-z * rate).exp(),
            Kernel::Rational { shift } => 1.0 / ((z + shift) * (z + shift)),
            Kernel::Gaussian { width } => (-(z / width) * (z / width)).exp(),
            Kernel::Zero => c(0.0, 0.0),
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        self.eval(c(t, 0.0)).re
    }

    /// `sup_{t ≥ s} |a(t)|` for the real trace.
    pub fn tail(&self, s: f64) -> f64 {
        match *self {
            Kernel::Exp { rate } => (-rate * s).exp(),
            Kernel::Rational { shift } => 1.0 / ((shift + s) * (shift + s)),
            Kernel::Gaussian { width } => (-(s / width).powi(2)).exp(),
            Kernel::Zero => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Kernel::Exp { rate } => rate > 0.0,
            Kernel::Rational { shift } => shift > 0.0,
            Kernel::Gaussian { width } => width > 0.0,
            Kernel::Zero => true,
        };
        if ok {
            Ok(())
        } else {
            Err(LabError::Config(format!("kernel parameter must be positive: {self:?}")))
        }
    }
}

/// Truncated sector `{0 < τ ≤ r_max, |σ| < tan(θ) τ}` and the exponents `q = p s / (s - 1)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SectorSpec {
    pub theta: f64,
    pub r_max: f64,
    pub n_radial: usize,
    pub n_angular: usize,
    pub p: f64,
    pub s: f64,
}

impl Default for SectorSpec {
    fn default() -> Self {
        Self { theta: std::f64::consts::FRAC_PI_4, r_max: 50.0, n_radial: 256, n_angular: 16, p: 2.0, s: 2.0 }
    }
}

impl SectorSpec {
    pub fn q(&self) -> f64 {
        self.p * self.s / (self.s - 1.0)
    }

    pub fn with_exponents(p: f64, s: f64) -> Self {
        Self { p, s, ..Self::default() }
    }

    pub fn refined(&self) -> Self {
        Self { n_radial: 2 * self.n_radial, n_angular: 2 * self.n_angular, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < std::f64::consts::FRAC_PI_2) {
            return Err(LabError::Config(format!("theta must lie in (0, pi/2), got {}", self.theta)));
        }
        if !(self.p > 1.0 && self.s > 1.0 && self.r_max > 0.0 && self.n_radial >= 8 && self.n_angular >= 2) {
            return Err(LabError::Config("sector spec needs p > 1, s > 1, r_max > 0 and enough nodes".into()));
        }
        Ok(())
    }

    /// Nodes `τ + iσ` and weights of the tensor rule.
    fn rule(&self) -> (Vec<C64>, Vec<f64>) {
        let (rx, rw) = composite_gl(0.0, self.r_max, self.n_radial / 8, 8);
        let (ux, uw) = gauss_legendre(self.n_angular);
        let tan = self.theta.tan();
        let mut nodes = Vec::with_capacity(rx.len() * ux.len());
        let mut weights = Vec::with_capacity(nodes.capacity());
        for (&tau, &wt) in rx.iter().zip(&rw) {
            for (&u, &wu) in ux.iter().zip(&uw) {
                nodes.push(c(tau, tan * tau * u));
                weights.push(wt * wu * tan * tau);
            }
        }
        (nodes, weights)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BergmanReport {
    pub norm: f64,
    /// Share of `∫|f|^q` carried by the outermost radial panel; large values mean `r_max` is short.
    pub tail_share: f64,
}

/// `(∫_Σ |f|^q)^{1/q}` for a pointwise norm evaluator.
pub fn bergman_norm(f: &dyn Fn(C64) -> f64, spec: &SectorSpec) -> Result<BergmanReport> {
    spec.validate()?;
    let q = spec.q();
    let (nodes, weights) = spec.rule();
    let per_panel = 8 * spec.n_angular;
    let mut total = 0.0;
    let mut last = 0.0;
    for (i, (z, w)) in nodes.iter().zip(&weights).enumerate() {
        let v = f(*z);
        if !v.is_finite() {
            return Err(LabError::NonFinite("Bergman integrand"));
        }
        let term = w * v.powf(q);
        total += term;
        if i >= nodes.len() - per_panel {
            last += term;
        }
    }
    let tail_share = if total > 0.0 { last / total } else { 0.0 };
    Ok(BergmanReport { norm: total.powf(1.0 / q), tail_share })
}

pub fn kernel_bergman_norm(a: &Kernel, spec: &SectorSpec) -> Result<BergmanReport> {
    bergman_norm(&|z| a.eval(z).norm(), spec)
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceReport {
    /// `∫_0^R |f(t)|^p dt`.
    pub lhs: f64,
    /// `|f|_B^p`.
    pub rhs_norm: f64,
    pub ratio: f64,
}

/// Both sides of the trace inequality on `[0, R]`.
pub fn bergman_trace_check(f: &dyn Fn(C64) -> f64, r: f64, spec: &SectorSpec) -> Result<TraceReport> {
    let b = bergman_norm(f, spec)?;
    let (xs, ws) = composite_gl(0.0, r, 16, 8);
    let lhs: f64 = xs.iter().zip(&ws).map(|(t, w)| w * f(c(*t, 0.0)).powf(spec.p)).sum();
    let rhs_norm = b.norm.powf(spec.p);
    let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs_norm };
    Ok(TraceReport { lhs, rhs_norm, ratio })
}

/// `F` as a matrix or as `scale·(-𝔸₀)^θ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FSpec {
    Matrix(#[serde(skip)] CMatrix),
    Fractional { theta: f64, scale: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VolterraSpec {
    pub kernel: Kernel,
    pub f: FSpec,
    /// Memory horizon; the run length when absent.
    pub s_max: Option<f64>,
    pub n_mem: usize,
}

impl VolterraSpec {
    pub fn resolve_f(&self, a0: &CMatrix) -> Result<CMatrix> {
        match &self.f {
            FSpec::Matrix(m) => {
                if m.ncols() != a0.nrows() || m.nrows() != a0.nrows() {
                    return Err(LabError::Dimension("F must be square of the state size".into()));
                }
                Ok(m.clone())
            }
            FSpec::Fractional { theta, scale } => {
                if !(*theta > 0.0 && *theta < 1.0) {
                    return Err(LabError::Config(format!("fractional exponent must lie in (0, 1), got {theta}")));
                }
                Ok(pos_power_eig(a0, *theta)? * c(*scale, 0.0))
            }
        }
    }

    /// Rejects a memory horizon shorter than the run unless the kernel has decayed past it.
    pub fn horizon(&self, t_end: f64) -> Result<f64> {
        let s = self.s_max.unwrap_or(t_end);
        if s <= 0.0 || self.n_mem == 0 {
            return Err(LabError::Config("memory horizon and grid must be positive".into()));
        }
        if s < t_end && self.kernel.tail(s) > MEMORY_TAIL_TOL {
            return Err(LabError::Config(format!(
                "memory horizon too short: kernel tail {:.2e} at S_max = {s} exceeds {MEMORY_TAIL_TOL:.0e}",
                self.kernel.tail(s)
            )));
        }
        Ok(s)
    }
}

/// `𝔄 = [[𝔸₀, δ₀], [Υ, d/ds]]` on `X × X^{n_mem}`: memory nodes `s_j = jΔ`, upwind
/// `d/ds` with zero inflow at `S_max`, `Υ x = (a(s_j) F x)_j`.
#[derive(Debug, Clone)]
pub struct Companion {
    pub a0: CMatrix,
    pub f: CMatrix,
    pub weights: Vec<f64>,
    pub delta: f64,
    n: usize,
}

pub fn companion_assemble(a0: &CMatrix, f: &CMatrix, kernel: &Kernel, s_max: f64, n_mem: usize) -> Result<Companion> {
    let n = a0.nrows();
    if a0.ncols() != n || f.nrows() != n || f.ncols() != n {
        return Err(LabError::Dimension("companion: A0 and F must be square of equal size".into()));
    }
    if n_mem == 0 || s_max <= 0.0 {
        return Err(LabError::Config("companion: empty memory grid".into()));
    }
    kernel.validate()?;
    let delta = s_max / n_mem as f64;
    let weights = (0..n_mem).map(|j| kernel.at(j as f64 * delta)).collect();
    Ok(Companion { a0: a0.clone(), f: f.clone(), weights, delta, n })
}

impl Companion {
    pub fn n_mem(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.n * (1 + self.n_mem())
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn apply(&self, z: &[C64], out: &mut [C64]) {
        let (n, nm) = (self.n, self.n_mem());
        let inv = 1.0 / self.delta;
        gemv_into(&self.a0, &z[..n], &mut out[..n]);
        for i in 0..n {
            out[i] += z[n + i];
        }
        let mut fx = vec![c(0.0, 0.0); n];
        gemv_into(&self.f, &z[..n], &mut fx);
        for j in 0..nm {
            let base = n * (1 + j);
            for i in 0..n {
                let next = if j + 1 < nm { z[base + n + i] } else { c(0.0, 0.0) };
                out[base + i] = (next - z[base + i]) * inv + fx[i] * self.weights[j];
            }
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        let (n, nm) = (self.n, self.n_mem());
        let d = self.dim();
        let mut m = CMatrix::zeros(d, d);
        m.view_mut((0, 0), (n, n)).copy_from(&self.a0);
        let inv = 1.0 / self.delta;
        for i in 0..n {
            m[(i, n + i)] += c(1.0, 0.0);
        }
        for j in 0..nm {
            let base = n * (1 + j);
            m.view_mut((base, 0), (n, n)).copy_from(&(&self.f * c(self.weights[j], 0.0)));
            for i in 0..n {
                m[(base + i, base + i)] = c(-inv, 0.0);
                if j + 1 < nm {
                    m[(base + i, base + n + i)] = c(inv, 0.0);
                }
            }
        }
        m
    }

    pub fn generator(&self) -> Result<Generator> {
        Generator::new(self.to_dense(), "companion")
    }

    /// Column-sum norm from the block structure.
    pub fn norm1(&self) -> f64 {
        let n = self.n;
        let wsum: f64 = self.weights.iter().map(|w| w.abs()).sum();
        let state = (0..n)
            .map(|j| {
                let a: f64 = self.a0.column(j).iter().map(|z| z.norm()).sum();
                let f: f64 = self.f.column(j).iter().map(|z| z.norm()).sum();
                a + wsum * f
            })
            .fold(0.0, f64::max);
        let inv = 1.0 / self.delta;
        state.max(1.0 + inv).max(if self.n_mem() > 1 { 2.0 * inv } else { inv })
    }

    /// `e^{h𝔄} z + h φ₁(h𝔄) ζ` by a truncated Taylor series on the augmented vector `[z; 1]`.
    fn step(&self, z: &[C64], zeta: &[C64], h: f64, substeps: usize, out: &mut [C64]) {
        let d = self.dim();
        let tau = h / substeps as f64;
        let mut v = z.to_vec();
        let mut term = vec![c(0.0, 0.0); d];
        let mut next = vec![c(0.0, 0.0); d];
        for _ in 0..substeps {
            // augmented power series: the last coordinate stays 1 in the leading term only
            term.copy_from_slice(&v);
            let mut scal = c(1.0, 0.0);
            let mut acc = v.clone();
            for k in 1..60 {
                self.apply(&term, &mut next);
                for i in 0..zeta.len() {
                    next[i] += zeta[i] * scal;
                }
                scal = c(0.0, 0.0);
                let f = tau / k as f64;
                let mut tn = 0.0;
                let mut an = 0.0;
                for i in 0..d {
                    term[i] = next[i] * f;
                    acc[i] += term[i];
                    tn += term[i].norm_sqr();
                    an += acc[i].norm_sqr();
                }
                if tn <= 1e-34 * an.max(f64::MIN_POSITIVE) {
                    break;
                }
            }
            v = acc;
        }
        out.copy_from_slice(&v);
    }

    /// Exact-exponential steps with forcing `(f_k, 0)` held constant on `[t_k, t_{k+1})`.
    pub fn evolve(&self, grid: TimeGrid, forcing: &BochnerSignal) -> Result<BochnerSignal> {
        if forcing.dim() != self.n || forcing.grid.steps != grid.steps {
            return Err(LabError::Dimension("companion forcing must live in X on the run grid".into()));
        }
        let substeps = (grid.h() * self.norm1()).ceil().max(1.0) as usize;
        let mut z = vec![c(0.0, 0.0); self.dim()];
        let mut out = vec![c(0.0, 0.0); self.dim()];
        let mut samples = vec![CVector::zeros(self.dim())];
        for k in 0..grid.steps {
            self.step(&z, forcing.samples[k].as_slice(), grid.h(), substeps, &mut out);
            std::mem::swap(&mut z, &mut out);
            samples.push(CVector::from_column_slice(&z));
        }
        Ok(BochnerSignal { grid, samples })
    }
}

/// `ϱ_{k+1} = E ϱ_k + Φ (f_k + Σ_{j<k} h a(t_k - t_j) F ϱ_j)`.
pub fn direct_solve(a0: &CMatrix, f: &CMatrix, kernel: &Kernel, forcing: &BochnerSignal) -> Result<BochnerSignal> {
    let grid = forcing.grid;
    let n = a0.nrows();
    let st = Stepper::new(a0, grid.h())?;
    let h = grid.h();
    let mut rho = vec![CVector::zeros(n)];
    let mut frho: Vec<CVector> = vec![];
    let taps: Vec<f64> = (0..=grid.steps).map(|d| h * kernel.at(d as f64 * h)).collect();
    let mut out = vec![c(0.0, 0.0); n];
    for k in 0..grid.steps {
        frho.push(crate::linalg::matvec(f, &rho[k]));
        let mut mem = forcing.samples[k].clone();
        for j in 0..k {
            mem.axpy(c(taps[k - j], 0.0), &frho[j], c(1.0, 0.0));
        }
        st.step(rho[k].as_slice(), mem.as_slice(), &mut out);
        rho.push(CVector::from_column_slice(&out));
    }
    Ok(BochnerSignal { grid, samples: rho })
}

#[derive(Debug, Clone, Serialize)]
pub struct CrossCheck {
    pub steps: usize,
    pub n_mem: usize,
    /// Max-node relative difference of the first components.
    pub error: f64,
    #[serde(skip)]
    pub direct: BochnerSignal,
    #[serde(skip)]
    pub companion: BochnerSignal,
}

/// Companion first component against the direct convolution solver.
pub fn companion_vs_direct(a0: &CMatrix, vspec: &VolterraSpec, forcing: &BochnerSignal) -> Result<CrossCheck> {
    let grid = forcing.grid;
    let s_max = vspec.horizon(grid.t_end)?;
    let f = vspec.resolve_f(a0)?;
    let comp = companion_assemble(a0, &f, &vspec.kernel, s_max, vspec.n_mem)?;
    let full = comp.evolve(grid, forcing)?;
    let n = a0.nrows();
    let first: Vec<CVector> = full.samples.iter().map(|z| z.rows(0, n).into_owned()).collect();
    let direct = direct_solve(a0, &f, &vspec.kernel, forcing)?;
    let error = max_rel_diff(&direct.samples, &first);
    Ok(CrossCheck {
        steps: grid.steps,
        n_mem: vspec.n_mem,
        error,
        direct,
        companion: BochnerSignal { grid, samples: first },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct UpsilonReport {
    pub kappa_upsilon: f64,
    /// Admissibility constant of `F` for `𝔸₀`.
    pub gamma: f64,
    pub bergman: f64,
    /// `γ |a|_B`.
    pub bound: f64,
    /// `bound / κ_Υ - 1`.
    pub slack: f64,
    pub holds: bool,
}

/// `κ_Υ` for `x ↦ a(·) F 𝕋₀(t) x` into `L^p([0,α], B^q)`, by time quadrature of the
/// vector-valued sector integrand, against `γ |a|_B` with `γ` from the Gramian.
pub fn upsilon_admissibility(a0: &Generator, f: &CMatrix, kernel: &Kernel, spec: &SectorSpec, alpha: f64) -> Result<UpsilonReport> {
    if spec.p != 2.0 {
        return Err(LabError::Config("upsilon check is implemented for p = 2".into()));
    }
    spec.validate()?;
    let q = spec.q();
    let (nodes, weights) = spec.rule();
    let n = a0.dim();
    // time quadrature graded toward t = 0, where F𝕋₀(t) varies on the stiff scale
    let mut gram = CMatrix::zeros(n, n);
    let mut hi = alpha;
    for _ in 0..40 {
        let lo = hi / 2.0;
        let (ts, ws) = composite_gl(lo, hi, 1, 8);
        for (t, w) in ts.iter().zip(&ws) {
            let ft = matmul(f, &expm(&a0.a, *t)?);
            // ‖a(·) F 𝕋₀(t) x‖_B^q = Σ_nodes w |a(z)|^q ‖F𝕋₀(t)x‖^q, assembled node by node
            let mut bq = 0.0;
            for (z, wz) in nodes.iter().zip(&weights) {
                bq += wz * kernel.eval(*z).norm().powf(q);
            }
            let scale = bq.powf(2.0 / q);
            gram += matmul(&ft.adjoint(), &ft) * c(w * scale, 0.0);
        }
        hi = lo;
    }
    let kappa_upsilon = sigma_max(&gram).sqrt();
    let gamma = obs_admissibility(f, a0, alpha, 2.0, 0)?.kappa;
    let bergman = kernel_bergman_norm(kernel, spec)?.norm;
    let bound = gamma * bergman;
    let slack = if kappa_upsilon > 0.0 { bound / kappa_upsilon - 1.0 } else { f64::INFINITY };
    Ok(UpsilonReport { kappa_upsilon, gamma, bergman, bound, slack, holds: kappa_upsilon <= bound * (1.0 + UPSILON_SLACK) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_kernel_norm_closed_form() {
        let spec = SectorSpec::default();
        let r = kernel_bergman_norm(&Kernel::Exp { rate: 1.0 }, &spec).unwrap();
        assert!((r.norm - 0.125f64.powf(0.25)).abs() < 1e-6, "{}", r.norm);
        assert!(r.tail_share < 1e-12);
    }

    #[test]
    fn delta0_wiring() {
        let a0 = CMatrix::zeros(2, 2);
        let comp = companion_assemble(&a0, &CMatrix::zeros(2, 2), &Kernel::Zero, 1.0, 4).unwrap();
        let mut z = vec![c(0.0, 0.0); comp.dim()];
        for j in 0..4 {
            z[2 + 2 * j] = c(3.0, 0.0);
            z[3 + 2 * j] = c(-1.0, 0.0);
        }
        let mut out = vec![c(0.0, 0.0); comp.dim()];
        comp.apply(&z, &mut out);
        assert_eq!((out[0], out[1]), (c(3.0, 0.0), c(-1.0, 0.0)));
        let dense = crate::linalg::matvec(&comp.to_dense(), &CVector::from_column_slice(&z));
        for (a, b) in out.iter().zip(dense.iter()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn short_horizon_is_rejected() {
        let v = VolterraSpec { kernel: Kernel::Rational { shift: 1.0 }, f: FSpec::Fractional { theta: 0.3, scale: 0.1 }, s_max: Some(0.5), n_mem: 8 };
        assert!(v.horizon(1.0).is_err());
        let v = VolterraSpec { kernel: Kernel::Exp { rate: 100.0 }, ..v };
        assert!(v.horizon(1.0).is_ok());
    }
}
