use super::{check_finite, vec_norm, CMatrix, DenseOp, LinearOperator, ScaledOp, C64};
use crate::error::{LabError, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const POWER_RESTARTS: usize = 16;
pub const POWER_TOL: f64 = 1e-6;
pub const POWER_MAX_ITER: usize = 1000;
pub const LANCZOS_TOL: f64 = 1e-7;
/// Relative change of the Ritz value over three checks treated as settled.
pub const STAGNATION_TOL: f64 = 1e-10;

/// Mixed norm `(Σ_k w_k |x_k|_2^p)^{1/p}` over consecutive blocks of length `block`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LpNormSpec {
    pub p: f64,
    pub weights: Vec<f64>,
    pub block: usize,
}

impl LpNormSpec {
    pub fn new(p: f64, weights: Vec<f64>, block: usize) -> Result<Self> {
        if !(p.is_finite() && p >= 1.0) {
            return Err(LabError::Config(format!("p must lie in [1, inf), got {p}")));
        }
        if block == 0 || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(LabError::Config("weights must be finite and nonnegative".into()));
        }
        Ok(Self { p, weights, block })
    }

    /// Piecewise-constant time grid: `steps` nodes of weight `h`, each carrying a block.
    pub fn uniform(p: f64, steps: usize, block: usize, h: f64) -> Result<Self> {
        Self::new(p, vec![h; steps], block)
    }

    /// Plain Euclidean-block l^p norm.
    pub fn plain(p: f64, dim: usize) -> Result<Self> {
        Self::new(p, vec![1.0; dim], 1)
    }

    pub fn q(&self) -> f64 {
        if self.p == 1.0 {
            f64::INFINITY
        } else {
            self.p / (self.p - 1.0)
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len() * self.block
    }

    /// Total weight, the interval length for time quadratures.
    pub fn length(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn block_norms(&self, x: &[C64]) -> Vec<f64> {
        x.chunks(self.block).map(vec_norm).collect()
    }

    pub fn norm(&self, x: &[C64]) -> f64 {
        let b = self.block_norms(x);
        if self.p == 2.0 {
            return b.iter().zip(&self.weights).map(|(v, w)| w * v * v).sum::<f64>().sqrt();
        }
        b.iter()
            .zip(&self.weights)
            .map(|(v, w)| w * v.powf(self.p))
            .sum::<f64>()
            .powf(1.0 / self.p)
    }

    /// Element `g` of the dual unit sphere with `Re<g, y> = |y|` (Euclidean pairing).
    fn dual_of(&self, y: &[C64]) -> Vec<C64> {
        let ny = self.norm(y);
        let b = self.block_norms(y);
        let mut g = vec![C64::new(0.0, 0.0); y.len()];
        if ny == 0.0 {
            return g;
        }
        for (k, chunk) in y.chunks(self.block).enumerate() {
            if b[k] == 0.0 {
                continue;
            }
            let s = self.weights[k] * b[k].powf(self.p - 2.0) / ny.powf(self.p - 1.0);
            for (i, v) in chunk.iter().enumerate() {
                g[k * self.block + i] = v * s;
            }
        }
        g
    }

    /// Unit vector `x` in this norm maximizing `Re<z, x>`.
    fn maximizer(&self, z: &[C64]) -> Vec<C64> {
        let n = z.len();
        let mut x = vec![C64::new(0.0, 0.0); n];
        let zeta: Vec<f64> = z
            .chunks(self.block)
            .enumerate()
            .map(|(k, c)| if self.weights[k] > 0.0 { vec_norm(c) * self.weights[k].powf(-1.0 / self.p) } else { 0.0 })
            .collect();
        if zeta.iter().all(|&v| v == 0.0) {
            return x;
        }
        if self.p == 1.0 {
            let (k, _) = zeta
                .iter()
                .enumerate()
                .fold((0, -1.0), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
            let bn = vec_norm(&z[k * self.block..(k + 1) * self.block]);
            for i in 0..self.block {
                x[k * self.block + i] = z[k * self.block + i] / (bn * self.weights[k]);
            }
            return x;
        }
        let q = self.q();
        let zq = zeta.iter().map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q);
        for (k, chunk) in z.chunks(self.block).enumerate() {
            if zeta[k] == 0.0 {
                continue;
            }
            let bn = vec_norm(chunk);
            let xi = (zeta[k] / zq).powf(q - 1.0);
            let s = self.weights[k].powf(-1.0 / self.p) * xi / bn;
            for (i, v) in chunk.iter().enumerate() {
                x[k * self.block + i] = v * s;
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormMethod {
    Svd,
    Lanczos,
    Power,
}

#[derive(Debug, Clone, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: NormMethod,
    /// Near-maximizing input, unit in the input norm.
    #[serde(skip)]
    pub argmax: Vec<C64>,
}

/// `|M|_{p->p}` with the same mixed norm on both sides.
pub fn opnorm(m: &CMatrix, spec: &LpNormSpec) -> Result<NormEstimate> {
    opnorm_between(m, spec, spec)
}

pub fn opnorm_between(m: &CMatrix, input: &LpNormSpec, output: &LpNormSpec) -> Result<NormEstimate> {
    check_finite(m, "operator")?;
    check_dims(m.nrows(), m.ncols(), input, output)?;
    if input.p == 2.0 && output.p == 2.0 {
        let (rs, cs) = l2_scalings(input, output)?;
        let mut scaled = m.clone();
        for j in 0..scaled.ncols() {
            for i in 0..scaled.nrows() {
                scaled[(i, j)] *= rs[i] * cs[j];
            }
        }
        if scaled.nrows() == 0 || scaled.ncols() == 0 {
            return Ok(NormEstimate { value: 0.0, iterations: 0, converged: true, method: NormMethod::Svd, argmax: vec![] });
        }
        let svd = scaled.svd(false, true);
        let (k, &s) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, &-1.0), |acc, (k, s)| if s > acc.1 { (k, s) } else { acc });
        let vt = svd.v_t.unwrap();
        let argmax: Vec<C64> = (0..vt.ncols()).map(|j| vt[(k, j)].conj() * cs[j]).collect();
        return Ok(NormEstimate { value: s, iterations: 0, converged: true, method: NormMethod::Svd, argmax });
    }
    Ok(boyd_power(&DenseOp(m), input, output, POWER_RESTARTS, POWER_MAX_ITER, POWER_TOL, 0x5eed))
}

fn check_dims(rows: usize, cols: usize, input: &LpNormSpec, output: &LpNormSpec) -> Result<()> {
    if input.dim() != cols || output.dim() != rows {
        return Err(LabError::Dimension(format!(
            "operator is {rows}x{cols} but norms expect {}x{}",
            output.dim(),
            input.dim()
        )));
    }
    Ok(())
}

fn l2_scalings(input: &LpNormSpec, output: &LpNormSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    if input.weights.iter().any(|&w| w <= 0.0) {
        return Err(LabError::Config("input weights must be positive".into()));
    }
    let rs = output.weights.iter().flat_map(|w| std::iter::repeat(w.sqrt()).take(output.block)).collect();
    let cs = input.weights.iter().flat_map(|w| std::iter::repeat(1.0 / w.sqrt()).take(input.block)).collect();
    Ok((rs, cs))
}

/// Operator norm of a matrix-free operator between mixed norms.
pub fn operator_norm(op: &dyn LinearOperator, input: &LpNormSpec, output: &LpNormSpec, seed: u64) -> Result<NormEstimate> {
    check_dims(op.nrows(), op.ncols(), input, output)?;
    if input.p == 2.0 && output.p == 2.0 {
        let (rs, cs) = l2_scalings(input, output)?;
        let scaled = ScaledOp { inner: op, rows: rs, cols: cs.clone() };
        let mut est = lanczos_sigma_max(&scaled, LANCZOS_TOL, 200, seed);
        est.argmax.iter_mut().zip(&cs).for_each(|(v, s)| *v *= s);
        return Ok(est);
    }
    Ok(boyd_power(op, input, output, POWER_RESTARTS, POWER_MAX_ITER, POWER_TOL, seed))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
}

/// Boyd's power iteration for `|op|_{in->out}`; a lower bound, best over restarts.
pub fn boyd_power(
    op: &dyn LinearOperator,
    input: &LpNormSpec,
    output: &LpNormSpec,
    restarts: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> NormEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = op.ncols();
    let mut best = NormEstimate { value: 0.0, iterations: 0, converged: true, method: NormMethod::Power, argmax: vec![C64::new(0.0, 0.0); n] };
    let mut all_converged = true;
    let mut total_iter = 0;
    let mut y = vec![C64::new(0.0, 0.0); op.nrows()];
    let mut z = vec![C64::new(0.0, 0.0); n];
    for r in 0..=restarts {
        let start = if r == 0 { vec![C64::new(1.0, 0.0); n] } else { random_vector(&mut rng, n) };
        let nx = input.norm(&start);
        if nx == 0.0 {
            continue;
        }
        let mut x: Vec<C64> = start.iter().map(|v| v / nx).collect();
        let mut prev = 0.0;
        let mut converged = false;
        let mut est = 0.0;
        let mut xbest = x.clone();
        for _ in 0..max_iter {
            total_iter += 1;
            op.apply(&x, &mut y);
            est = output.norm(&y);
            xbest.clone_from(&x);
            if est == 0.0 || (est - prev).abs() <= tol * est {
                converged = true;
                break;
            }
            prev = est;
            let g = output.dual_of(&y);
            op.apply_adjoint(&g, &mut z);
            let xn = input.maximizer(&z);
            if xn.iter().all(|v| v.norm() == 0.0) {
                converged = true;
                break;
            }
            x = xn;
        }
        all_converged &= converged;
        if est > best.value {
            best.value = est;
            best.argmax = xbest;
        }
    }
    best.iterations = total_iter;
    best.converged = all_converged;
    best
}

/// Top singular value of the upper bidiagonal `(alpha, beta)`, the last entry of its
/// left vector and its right vector.
fn bidiag_top(alpha: &[f64], beta: &[f64]) -> (f64, f64, Vec<f64>) {
    let k = alpha.len();
    let mut bd = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        bd[(i, i)] = alpha[i];
        if i + 1 < k {
            bd[(i, i + 1)] = beta[i];
        }
    }
    let svd = bd.svd(true, true);
    let (idx, &s) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, &-1.0), |acc, (i, s)| if s > acc.1 { (i, s) } else { acc });
    let left = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    (s, left[(k - 1, idx)], (0..k).map(|i| vt[(idx, i)]).collect())
}

/// Largest singular value by Golub-Kahan bidiagonalization with full reorthogonalization.
pub fn lanczos_sigma_max(op: &dyn LinearOperator, tol: f64, max_steps: usize, seed: u64) -> NormEstimate {
    let (m, n) = (op.nrows(), op.ncols());
    let zero = NormEstimate { value: 0.0, iterations: 0, converged: true, method: NormMethod::Lanczos, argmax: vec![C64::new(0.0, 0.0); n] };
    if m == 0 || n == 0 {
        return zero;
    }
    let kmax = max_steps.min(m).min(n).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = random_vector(&mut rng, n);
    let nv = vec_norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    let mut vs: Vec<Vec<C64>> = vec![v];
    let mut us: Vec<Vec<C64>> = vec![];
    let mut alpha: Vec<f64> = vec![];
    let mut beta: Vec<f64> = vec![];
    let mut u = vec![C64::new(0.0, 0.0); m];
    let mut w = vec![C64::new(0.0, 0.0); n];
    let mut best: f64 = 0.0;
    let mut coefs: Vec<f64> = vec![1.0];
    let mut history: Vec<f64> = vec![];
    let mut converged = false;
    let mut steps = 0;
    for j in 0..kmax {
        steps = j + 1;
        op.apply(&vs[j], &mut u);
        if j > 0 {
            let b = beta[j - 1];
            u.iter_mut().zip(&us[j - 1]).for_each(|(x, y)| *x -= y * b);
        }
        reorth(&mut u, &us);
        let a = vec_norm(&u);
        alpha.push(a);
        if a <= f64::EPSILON * best.max(f64::MIN_POSITIVE) * 10.0 {
            converged = true;
            if j == 0 {
                return zero;
            }
            alpha.pop();
            let (s, _, c) = bidiag_top(&alpha, &beta);
            best = s;
            coefs = c;
            break;
        }
        let un: Vec<C64> = u.iter().map(|x| x / a).collect();
        us.push(un);
        op.apply_adjoint(&us[j], &mut w);
        w.iter_mut().zip(&vs[j]).for_each(|(x, y)| *x -= y * a);
        reorth(&mut w, &vs);
        let b = vec_norm(&w);
        beta.push(b);
        let k = alpha.len();
        let last = j + 1 == kmax;
        if k > 8 && k % 4 != 0 && !last && b > f64::EPSILON * best {
            vs.push(w.iter().map(|x| x / b).collect());
            continue;
        }
        let (s, left_last, c) = bidiag_top(&alpha, &beta);
        best = s;
        coefs = c;
        history.push(s);
        let resid = b * left_last.abs();
        // a tight cluster at the top keeps the residual large while the value has settled
        let stagnant = history.len() > 4 && {
            let h = &history[history.len() - 4..];
            (h[3] - h[0]).abs() <= STAGNATION_TOL * h[3]
        };
        if resid <= tol * s || b <= f64::EPSILON * s || stagnant {
            converged = true;
            break;
        }
        let wn: Vec<C64> = w.iter().map(|x| x / b).collect();
        vs.push(wn);
    }
    let mut best_vec = vec![C64::new(0.0, 0.0); n];
    for (c, v) in coefs.iter().zip(&vs) {
        best_vec.iter_mut().zip(v).for_each(|(acc, y)| *acc += y * c);
    }
    NormEstimate { value: best, iterations: steps, converged, method: NormMethod::Lanczos, argmax: best_vec }
}

fn reorth(x: &mut [C64], basis: &[Vec<C64>]) {
    for _ in 0..2 {
        for q in basis {
            let d: C64 = q.iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum();
            x.iter_mut().zip(q).for_each(|(v, a)| *v -= a * d);
        }
    }
}
