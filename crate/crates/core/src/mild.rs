//! Mild solutions with piecewise-constant forcing and exact exponential steps,
//! plus residuals of the variation-of-constants identities.

use crate::error::{LabError, Result};
use crate::linalg::{expm_phi1, gemv_into, is_real, real_part, CMatrix, CVector, ExpPair, C64};
use crate::semigroup::Generator;
use nalgebra::DMatrix;
use serde::Serialize;
use std::io::{Read, Write};

/// Residual tolerance for first-order VCF checks at the default grid.
pub const VCF_TOL: f64 = 5e-3;
/// Minimum error reduction per grid halving for first-order convergence.
pub const ORDER_RATIO: f64 = 1.8;
/// Identities that are exact at the discrete level.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) || steps == 0 {
            return Err(LabError::Config(format!("time grid needs T > 0 and n >= 1, got T = {t_end}, n = {steps}")));
        }
        Ok(Self { t_end, steps })
    }

    pub fn h(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        self.t_end * k as f64 / self.steps as f64
    }

    pub fn refined(&self, factor: usize) -> Self {
        Self { t_end: self.t_end, steps: self.steps * factor }
    }
}

/// Samples at the nodes `t_0..t_n`, read as piecewise constant on `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct BochnerSignal {
    pub grid: TimeGrid,
    pub samples: Vec<CVector>,
}

impl BochnerSignal {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self { grid, samples: vec![CVector::zeros(dim); grid.steps + 1] }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> CVector) -> Self {
        Self { grid, samples: (0..=grid.steps).map(|k| f(grid.node(k))).collect() }
    }

    pub fn constant(grid: TimeGrid, v: &CVector) -> Self {
        Self { grid, samples: vec![v.clone(); grid.steps + 1] }
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }

    fn validate(&self) -> Result<()> {
        if self.samples.len() != self.grid.steps + 1 {
            return Err(LabError::Dimension(format!("expected {} samples, got {}", self.grid.steps + 1, self.samples.len())));
        }
        let d = self.dim();
        if self.samples.iter().any(|s| s.len() != d) {
            return Err(LabError::Dimension("samples of unequal length".into()));
        }
        if self.samples.iter().flat_map(|s| s.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(LabError::NonFinite("signal"));
        }
        Ok(())
    }

    /// `(Σ_{k<n} h |f_k|^p)^{1/p}`: the piecewise-constant reading.
    pub fn norm_left(&self, p: f64) -> f64 {
        lp_sum(self.samples[..self.grid.steps].iter(), self.grid.h(), p)
    }

    /// `(Σ_{k>=1} h |z_k|^p)^{1/p}`: right-endpoint weights for trajectories.
    pub fn norm_right(&self, p: f64) -> f64 {
        lp_sum(self.samples[1..].iter(), self.grid.h(), p)
    }

    pub fn max_norm(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    /// Time in column 0, then the real parts; imaginary parts follow when any is nonzero.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let complex = self.samples.iter().flat_map(|s| s.iter()).any(|z| z.im != 0.0);
        let mut wr = csv::Writer::from_writer(w);
        let d = self.dim();
        let mut header = vec!["t".to_string()];
        header.extend((0..d).map(|i| format!("x{i}")));
        if complex {
            header.extend((0..d).map(|i| format!("im{i}")));
        }
        wr.write_record(&header)?;
        for (k, s) in self.samples.iter().enumerate() {
            let mut row = vec![self.grid.node(k).to_string()];
            row.extend(s.iter().map(|z| z.re.to_string()));
            if complex {
                row.extend(s.iter().map(|z| z.im.to_string()));
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let complex = header.iter().any(|h| h.starts_with("im"));
        let cols = header.len() - 1;
        let d = if complex { cols / 2 } else { cols };
        let mut times = vec![];
        let mut samples = vec![];
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|v| v.parse::<f64>().map_err(|e| LabError::Config(format!("bad number `{v}`: {e}"))))
                .collect::<Result<_>>()?;
            times.push(vals[0]);
            samples.push(CVector::from_fn(d, |i, _| C64::new(vals[1 + i], if complex { vals[1 + d + i] } else { 0.0 })));
        }
        if times.len() < 2 || times[0] != 0.0 {
            return Err(LabError::Config("signal CSV needs at least two rows starting at t = 0".into()));
        }
        let grid = TimeGrid::new(*times.last().unwrap(), times.len() - 1)?;
        let s = Self { grid, samples };
        s.validate()?;
        Ok(s)
    }
}

fn lp_sum<'a>(it: impl Iterator<Item = &'a CVector>, h: f64, p: f64) -> f64 {
    it.map(|v| h * v.norm().powf(p)).sum::<f64>().powf(1.0 / p)
}

/// One exact step `z <- E z + Φ f`, with a real kernel when the generator is real.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub pair: ExpPair,
    real: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

fn gemv_real_acc(m: &DMatrix<f64>, x: &[C64], out: &mut [C64]) {
    let r = m.nrows();
    let data = m.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        if xj.re == 0.0 && xj.im == 0.0 {
            continue;
        }
        let col = &data[j * r..(j + 1) * r];
        for (o, &a) in out.iter_mut().zip(col) {
            o.re += a * xj.re;
            o.im += a * xj.im;
        }
    }
}

impl Stepper {
    pub fn new(a: &CMatrix, h: f64) -> Result<Self> {
        let pair = expm_phi1(a, h)?;
        let real = if is_real(&pair.e) && is_real(&pair.phi) { Some((real_part(&pair.e), real_part(&pair.phi))) } else { None };
        Ok(Self { pair, real })
    }

    pub fn dim(&self) -> usize {
        self.pair.e.nrows()
    }

    /// `out = E z + Φ f`.
    pub fn step(&self, z: &[C64], f: &[C64], out: &mut [C64]) {
        match &self.real {
            Some((e, phi)) => {
                out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
                gemv_real_acc(e, z, out);
                gemv_real_acc(phi, f, out);
            }
            None => {
                let mut tmp = vec![C64::new(0.0, 0.0); out.len()];
                gemv_into(&self.pair.e, z, out);
                gemv_into(&self.pair.phi, f, &mut tmp);
                out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
            }
        }
    }

    /// `out = E z`.
    pub fn propagate(&self, z: &[C64], out: &mut [C64]) {
        match &self.real {
            Some((e, _)) => {
                out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
                gemv_real_acc(e, z, out);
            }
            None => gemv_into(&self.pair.e, z, out),
        }
    }

    /// `out = Φ f`.
    pub fn weight(&self, f: &[C64], out: &mut [C64]) {
        match &self.real {
            Some((_, phi)) => {
                out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
                gemv_real_acc(phi, f, out);
            }
            None => gemv_into(&self.pair.phi, f, out),
        }
    }

    /// Trajectory from `x0` under forcing samples `f_0..f_{n-1}`.
    pub fn run(&self, grid: TimeGrid, x0: &CVector, forcing: impl Fn(usize) -> CVector) -> BochnerSignal {
        let mut samples = Vec::with_capacity(grid.steps + 1);
        samples.push(x0.clone());
        let mut next = CVector::zeros(x0.len());
        for k in 0..grid.steps {
            let f = forcing(k);
            self.step(samples[k].as_slice(), f.as_slice(), next.as_mut_slice());
            samples.push(next.clone());
        }
        BochnerSignal { grid, samples }
    }
}

fn check_dims(n: usize, x0: &CVector, f: &BochnerSignal) -> Result<()> {
    f.validate()?;
    if x0.len() != n || f.dim() != n {
        return Err(LabError::Dimension(format!("generator is {n}-dimensional, x0 has {}, f has {}", x0.len(), f.dim())));
    }
    Ok(())
}

/// `z_{k+1} = e^{hA} z_k + ∫_0^h e^{sA} ds f_k`.
pub fn evolve(gen: &Generator, x0: &CVector, f: &BochnerSignal) -> Result<BochnerSignal> {
    evolve_matrix(&gen.a, x0, f)
}

pub fn evolve_matrix(a: &CMatrix, x0: &CVector, f: &BochnerSignal) -> Result<BochnerSignal> {
    check_dims(a.nrows(), x0, f)?;
    let st = Stepper::new(a, f.grid.h())?;
    Ok(st.run(f.grid, x0, |k| f.samples[k].clone()))
}

/// Max-over-nodes distance between two trajectories, relative to the first one's size.
pub fn max_rel_diff(reference: &[CVector], other: &[CVector]) -> f64 {
    let scale = reference.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let diff = reference.iter().zip(other).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn mat_vec(m: &CMatrix, v: &CVector) -> CVector {
    let mut out = CVector::zeros(m.nrows());
    gemv_into(m, v.as_slice(), out.as_mut_slice());
    out
}

/// Convolution `Σ_{k<j} E^{j-1-k} Φ g_k` at every node, as a recurrence.
fn convolve(st: &Stepper, g: &[CVector], dim: usize) -> Vec<CVector> {
    let mut out = vec![CVector::zeros(dim)];
    let mut next = CVector::zeros(dim);
    for k in 0..g.len() {
        st.step(out[k].as_slice(), g[k].as_slice(), next.as_mut_slice());
        out.push(next.clone());
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct VcfReport {
    /// `𝕋^cl(t)x = 𝕋(t)x + ∫ 𝕋(t-s) B C 𝕋^cl(s)x ds`.
    pub residual: f64,
    /// Swapped ordering `𝕋^cl(t)x = 𝕋(t)x + ∫ 𝕋^cl(t-s) B C 𝕋(s)x ds`.
    pub residual_swapped: f64,
    /// Distance between the two right-hand sides.
    pub mv_agreement: f64,
}

/// Residuals of the closed-loop variation-of-constants formula in both orderings.
pub fn closed_loop_vcf_residual(
    a: &CMatrix,
    b: &CMatrix,
    c: &CMatrix,
    a_cl: &CMatrix,
    x0: &CVector,
    grid: TimeGrid,
) -> Result<VcfReport> {
    let n = a.nrows();
    if b.nrows() != n || c.ncols() != n || b.ncols() != c.nrows() || a_cl.nrows() != n || x0.len() != n {
        return Err(LabError::Dimension("closed-loop data do not fit together".into()));
    }
    let free = Stepper::new(a, grid.h())?;
    let cl = Stepper::new(a_cl, grid.h())?;
    let zero = |_| CVector::zeros(n);
    let z = cl.run(grid, x0, zero).samples;
    let y = free.run(grid, x0, zero).samples;
    let bc = crate::linalg::matmul(b, c);
    let g1: Vec<CVector> = z[..grid.steps].iter().map(|v| mat_vec(&bc, v)).collect();
    let conv1 = convolve(&free, &g1, n);
    let rhs1: Vec<CVector> = y.iter().zip(&conv1).map(|(a, b)| a + b).collect();
    let g2: Vec<CVector> = y[..grid.steps].iter().map(|v| mat_vec(&bc, v)).collect();
    let conv2 = convolve(&cl, &g2, n);
    let rhs2: Vec<CVector> = y.iter().zip(&conv2).map(|(a, b)| a + b).collect();
    Ok(VcfReport {
        residual: max_rel_diff(&z, &rhs1),
        residual_swapped: max_rel_diff(&z, &rhs2),
        mv_agreement: max_rel_diff(&rhs1, &rhs2),
    })
}

/// Residual of `z = 𝕋(t)x + ∫𝕋(t-s)BC z ds + ∫𝕋(t-s) f ds` with `z` the perturbed trajectory.
pub fn perturbed_vcf_residual(
    a: &CMatrix,
    b: &CMatrix,
    c: &CMatrix,
    a_pert: &CMatrix,
    x0: &CVector,
    f: &BochnerSignal,
) -> Result<f64> {
    let n = a.nrows();
    check_dims(n, x0, f)?;
    let grid = f.grid;
    let z = evolve_matrix(a_pert, x0, f)?.samples;
    let free = Stepper::new(a, grid.h())?;
    let bc = crate::linalg::matmul(b, c);
    let rhs = free.run(grid, x0, |k| mat_vec(&bc, &z[k]) + &f.samples[k]).samples;
    Ok(max_rel_diff(&z, &rhs))
}

#[derive(Debug, Clone)]
pub struct MiyaderaReport {
    pub z: BochnerSignal,
    pub residual: f64,
}

/// `z` from `evolve(𝒜+P)`, checked against `z = 𝕋^cl(t)x + ∫𝕋^cl(t-s)(P z + f) ds`.
pub fn miyadera_fixed_point(a_cl: &CMatrix, p: &CMatrix, x0: &CVector, f: &BochnerSignal) -> Result<MiyaderaReport> {
    let n = a_cl.nrows();
    check_dims(n, x0, f)?;
    if p.nrows() != n || p.ncols() != n {
        return Err(LabError::Dimension("P must be square of the state dimension".into()));
    }
    let z = evolve_matrix(&(a_cl + p), x0, f)?;
    let cl = Stepper::new(a_cl, f.grid.h())?;
    let rhs = cl.run(f.grid, x0, |k| mat_vec(p, &z.samples[k]) + &f.samples[k]).samples;
    let residual = max_rel_diff(&z.samples, &rhs);
    Ok(MiyaderaReport { z, residual })
}
