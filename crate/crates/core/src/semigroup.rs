//! Generator-level diagnostics: growth bound, resolvent scans, Yosida approximants.
//!
//! In the finite-dimensional Hilbert setting R-boundedness of a family reduces to
//! uniform boundedness, so every scan reports a supremum over an explicit grid.

use crate::boundary::{dirichlet, BoundarySystem};
use crate::error::{LabError, Result};
use crate::linalg::{
    check_finite, check_square, eig, identity, matmul, resolvent, shifted, singular_values, solve, CMatrix, C64,
};
use crate::quadrature::log_grid;
use serde::Serialize;
use std::f64::consts::FRAC_PI_2;
use std::io::Write;
use std::sync::OnceLock;

/// Default scan range and density.
pub const SCAN_LO: f64 = 1e-2;
pub const SCAN_HI: f64 = 1e4;
pub const SCAN_PER_DECADE: usize = 60;
/// A scan whose last decade outgrows its first decade by this factor is flagged.
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// ... provided it is still growing by this factor over the preceding decade.
pub const TAIL_GROWTH_FACTOR: f64 = 2.0;
/// Relative tolerance for Yosida split identities.
pub const YOSIDA_SPLIT_TOL: f64 = 1e-9;
/// Error reduction per decade of `n` for the Yosida approximants.
pub const YOSIDA_DECADE_FACTOR: f64 = 5.0;
/// Relative change of a scan supremum under grid refinement.
pub const SCAN_STABILITY_TOL: f64 = 0.02;

/// A square matrix viewed as a semigroup generator; the spectrum is computed on first use.
#[derive(Debug, Clone)]
pub struct Generator {
    pub a: CMatrix,
    pub label: String,
    spectrum: OnceLock<std::result::Result<Vec<C64>, String>>,
}

impl Generator {
    pub fn new(a: CMatrix, label: &str) -> Result<Self> {
        check_square(&a, "generator")?;
        check_finite(&a, "generator")?;
        Ok(Self { a, label: label.to_string(), spectrum: OnceLock::new() })
    }

    pub fn scalar(a: f64) -> Self {
        Self::new(CMatrix::from_element(1, 1, C64::new(a, 0.0)), "scalar").expect("finite scalar")
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn eigenvalues(&self) -> Result<&[C64]> {
        self.spectrum
            .get_or_init(|| eig(&self.a).map(|s| s.values).map_err(|e| e.to_string()))
            .as_deref()
            .map_err(|e| LabError::NoConvergence(e.clone()))
    }

    /// Growth bound: the largest real part of the spectrum.
    pub fn omega0(&self) -> Result<f64> {
        Ok(self.eigenvalues()?.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Bounded,
    UnboundedLooking,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub label: String,
    pub grid: Vec<C64>,
    /// Scan coordinate used for decade bookkeeping (|λ-ω| or |s|).
    pub radius: Vec<f64>,
    pub values: Vec<f64>,
    pub sup: f64,
    pub argmax: C64,
    /// Points skipped because they are numerically in the spectrum.
    pub flagged: Vec<C64>,
    pub verdict: Verdict,
}

impl ScanReport {
    fn build(label: &str, grid: Vec<C64>, radius: Vec<f64>, values: Vec<f64>, flagged: Vec<C64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(LabError::Config(format!("{label}: every scan point was flagged or the grid is empty")));
        }
        let (k, sup) = values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let verdict = divergence_verdict(&radius, &values);
        Ok(Self { label: label.into(), argmax: grid[k], grid, radius, values, sup, flagged, verdict })
    }

    /// Rows `(re, im, value)`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["re", "im", "value"])?;
        for (z, v) in self.grid.iter().zip(&self.values) {
            wr.write_record([z.re.to_string(), z.im.to_string(), v.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "label": self.label,
            "sup": self.sup,
            "argmax": [self.argmax.re, self.argmax.im],
            "verdict": self.verdict,
            "points": self.grid.len(),
            "flagged": self.flagged.len(),
        })
    }
}

/// Last decade against the first decade, with a still-growing tail.
///
/// The extra tail condition keeps families like `s |R(is, A)|`, which rise from
/// `O(s)` to a plateau, from being flagged.
pub fn divergence_verdict(radius: &[f64], values: &[f64]) -> Verdict {
    let lo = radius.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = radius.iter().cloned().fold(0.0, f64::max);
    if !(hi > 100.0 * lo) {
        return Verdict::Bounded;
    }
    let sup_in = |a: f64, b: f64| {
        radius
            .iter()
            .zip(values)
            .filter(|(r, _)| **r >= a && **r <= b)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max)
    };
    let first = sup_in(lo, lo * 10.0);
    let last = sup_in(hi / 10.0, hi);
    let prev = sup_in(hi / 100.0, hi / 10.0);
    if last > DIVERGENCE_FACTOR * first && last > TAIL_GROWTH_FACTOR * prev {
        Verdict::UnboundedLooking
    } else {
        Verdict::Bounded
    }
}

pub fn default_s_grid() -> Vec<f64> {
    log_grid(SCAN_LO, SCAN_HI, SCAN_PER_DECADE)
}

/// Points `ω + ρ e^{iφ}` with `ρ` on the default grid and angles spread over `(-π/2, π/2)`.
pub fn half_plane_grid(omega: f64, radii: &[f64], angles: usize) -> Vec<C64> {
    let phis: Vec<f64> = (0..angles)
        .map(|j| if angles == 1 { 0.0 } else { -FRAC_PI_2 + 1e-3 + (std::f64::consts::PI - 2e-3) * j as f64 / (angles - 1) as f64 })
        .collect();
    let mut out = Vec::with_capacity(radii.len() * phis.len());
    for &phi in &phis {
        for &rho in radii {
            out.push(C64::new(omega, 0.0) + C64::from_polar(rho, phi));
        }
    }
    out
}

/// `(|R(λ,A)|_2, in_spectrum)` from the singular values of `λ - A`.
fn resolvent_norm(a: &CMatrix, lambda: C64) -> Option<f64> {
    let sv = singular_values(&shifted(a, lambda));
    let (smax, smin) = (sv[0], sv[sv.len() - 1]);
    if smin <= 1e-12 * smax || smin == 0.0 {
        None
    } else {
        Some(1.0 / smin)
    }
}

/// `|λ-ω| |R(λ,A)|` over a grid in `{Re λ > ω}`.
pub fn analyticity_scan(gen: &Generator, omega: f64, grid: &[C64]) -> Result<ScanReport> {
    let w0 = gen.omega0()?;
    if omega <= w0 {
        return Err(LabError::Config(format!("omega = {omega} must exceed the growth bound {w0}")));
    }
    if let Some(z) = grid.iter().find(|z| z.re <= omega) {
        return Err(LabError::Config(format!("grid point {z} is not right of omega = {omega}")));
    }
    let (mut pts, mut rad, mut vals, mut flagged) = (vec![], vec![], vec![], vec![]);
    for &lam in grid {
        match resolvent_norm(&gen.a, lam) {
            Some(r) => {
                let d = (lam - omega).norm();
                pts.push(lam);
                rad.push(d);
                vals.push(d * r);
            }
            None => flagged.push(lam),
        }
    }
    ScanReport::build(&format!("analyticity:{}", gen.label), pts, rad, vals, flagged)
}

/// `|s R(is, A)|` for `s` and `-s` over the grid.
pub fn weis_scan(gen: &Generator, s_grid: &[f64]) -> Result<ScanReport> {
    let (mut pts, mut rad, mut vals, mut flagged) = (vec![], vec![], vec![], vec![]);
    for &s0 in s_grid {
        for s in [s0, -s0] {
            let lam = C64::new(0.0, s);
            match resolvent_norm(&gen.a, lam) {
                Some(r) => {
                    pts.push(lam);
                    rad.push(s.abs());
                    vals.push(s.abs() * r);
                }
                None => flagged.push(lam),
            }
        }
    }
    ScanReport::build(&format!("weis:{}", gen.label), pts, rad, vals, flagged)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub enum FracExponents {
    /// `s^{1/p}` on the control side and `s^{1/q}` on the observation side.
    Conjugate { p: f64 },
    /// `s^α` on the control side and `s^{1-α}` on the observation side.
    Alpha(f64),
}

impl FracExponents {
    fn pair(self) -> Result<(f64, f64)> {
        match self {
            FracExponents::Conjugate { p } if p > 1.0 && p.is_finite() => Ok((1.0 / p, 1.0 - 1.0 / p)),
            FracExponents::Alpha(a) if (0.0..=1.0).contains(&a) => Ok((a, 1.0 - a)),
            other => Err(LabError::Config(format!("invalid exponents {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FracScans {
    pub control: ScanReport,
    pub observation: ScanReport,
}

fn largest_sv(m: &CMatrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        0.0
    } else {
        singular_values(m)[0]
    }
}

/// `s^{e_B} |R(ω+is,A) B|` and `s^{e_C} |C R(ω+is,A)|` for `s` and `-s` over the grid.
pub fn fractional_scans(
    gen: &Generator,
    b: &CMatrix,
    c: &CMatrix,
    omega: f64,
    exps: FracExponents,
    s_grid: &[f64],
) -> Result<FracScans> {
    let (eb, ec) = exps.pair()?;
    let w0 = gen.omega0()?;
    if omega <= w0 {
        return Err(LabError::Config(format!("omega = {omega} must exceed the growth bound {w0}")));
    }
    let n = gen.dim();
    if b.nrows() != n || c.ncols() != n {
        return Err(LabError::Dimension("B must have n rows and C n columns".into()));
    }
    let mut out: [(Vec<C64>, Vec<f64>, Vec<f64>, Vec<C64>); 2] = Default::default();
    for &s0 in s_grid {
        for s in [s0, -s0] {
            let lam = C64::new(omega, s);
            let m = shifted(&gen.a, lam);
            let Ok(rb) = solve(&m, b) else {
                out[0].3.push(lam);
                out[1].3.push(lam);
                continue;
            };
            let cr = solve(&m.adjoint(), &c.adjoint())?;
            for (slot, (val, e)) in out.iter_mut().zip([(largest_sv(&rb), eb), (largest_sv(&cr), ec)]) {
                slot.0.push(lam);
                slot.1.push(s.abs());
                slot.2.push(s.abs().powf(e) * val);
            }
        }
    }
    let [o0, o1] = out;
    Ok(FracScans {
        control: ScanReport::build(&format!("fractional-control:{}", gen.label), o0.0, o0.1, o0.2, o0.3)?,
        observation: ScanReport::build(&format!("fractional-observation:{}", gen.label), o1.0, o1.1, o1.2, o1.3)?,
    })
}

/// `n² R(n,A) - n I`.
pub fn yosida_approx(gen: &Generator, n: f64) -> Result<CMatrix> {
    let w0 = gen.omega0()?;
    if n <= w0 {
        return Err(LabError::Config(format!("n = {n} must exceed the growth bound {w0}")));
    }
    let r = resolvent(&gen.a, C64::new(n, 0.0))?;
    Ok(r * C64::new(n * n, 0.0) - identity(gen.dim()) * C64::new(n, 0.0))
}

/// Residual of `n²R(n,𝒜) - n = nAR(n,A) + n²𝔻_n(I - C𝔻_n)^{-1}CR(n,A)`, relative to `|n²R(n,𝒜)|`.
pub fn yosida_split_check(bs: &BoundarySystem, n: f64) -> Result<f64> {
    let lam = C64::new(n, 0.0);
    let d = dirichlet(bs, lam)?;
    let cst = bs.k_state();
    let m = bs.m();
    let gain = identity(m) - matmul(cst, &d.d);
    let sv = singular_values(&gain);
    if sv[sv.len() - 1] <= 1e-12 * sv[0].max(1.0) {
        return Err(LabError::Singular(format!("feedback obstruction at n = {n}")));
    }
    let ra = resolvent(bs.a(), lam)?;
    let rp = resolvent(bs.a_pert(), lam)?;
    let nn = C64::new(n * n, 0.0);
    let lhs = &rp * nn - identity(bs.n_state()) * lam;
    let cr = matmul(cst, &ra);
    let inner = solve(&gain, &cr)?;
    let rhs = matmul(bs.a(), &ra) * lam + matmul(&d.d, &inner) * nn;
    Ok(singular_values(&(lhs - rhs))[0] / singular_values(&(rp * nn))[0])
}

/// Upwind left shift `n (J - I)` on `n` cells of `[0, 1]` with outflow: the
/// finite surrogate of the non-analytic shift semigroup.
pub fn shift_generator(n: usize) -> CMatrix {
    let h = n as f64;
    CMatrix::from_fn(n, n, |i, j| {
        if i == j {
            C64::new(-h, 0.0)
        } else if j == i + 1 {
            C64::new(h, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Block-diagonal damped rotations `[[-ε, ω], [-ω, -ε]]`, one per frequency.
pub fn damped_rotations(freqs: &[f64], eps: f64) -> CMatrix {
    let mut a = CMatrix::zeros(2 * freqs.len(), 2 * freqs.len());
    for (k, &w) in freqs.iter().enumerate() {
        let i = 2 * k;
        a[(i, i)] = C64::new(-eps, 0.0);
        a[(i + 1, i + 1)] = C64::new(-eps, 0.0);
        a[(i, i + 1)] = C64::new(w, 0.0);
        a[(i + 1, i)] = C64::new(-w, 0.0);
    }
    a
}
