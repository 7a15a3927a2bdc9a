use super::{check_finite, check_square, from_real, is_real, matmul, real_part, CMatrix, C64};
use crate::error::{LabError, Result};
use nalgebra::{ComplexField, DMatrix};

// Higham (2005) degree thresholds for the 1-norm of the scaled argument.
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const B9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Above this size the (E, Phi) pair is built by Taylor-plus-doubling instead of
/// the doubled-size augmented exponential.
pub(crate) const AUGMENTED_LIMIT: usize = 256;

trait Field: ComplexField<RealField = f64> + Copy {
    fn mm(a: &DMatrix<Self>, b: &DMatrix<Self>) -> DMatrix<Self>;
    fn re(x: f64) -> Self {
        Self::from_real(x)
    }
}

impl Field for f64 {
    fn mm(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a * b
    }
}

impl Field for C64 {
    fn mm(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
        matmul(a, b)
    }
}

fn norm1<T: Field>(a: &DMatrix<T>) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.modulus()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn add_scaled_identity<T: Field>(m: &mut DMatrix<T>, s: f64) {
    for i in 0..m.nrows() {
        m[(i, i)] += T::re(s);
    }
}

fn lin_comb<T: Field>(terms: &[(f64, &DMatrix<T>)], ident: f64, n: usize) -> DMatrix<T> {
    let mut out = DMatrix::<T>::zeros(n, n);
    for (c, m) in terms {
        out.zip_apply(*m, |o, x| *o += x * T::re(*c));
    }
    add_scaled_identity(&mut out, ident);
    out
}

fn pade_solve<T: Field>(u: DMatrix<T>, v: DMatrix<T>) -> Result<DMatrix<T>> {
    let p = &v + &u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| LabError::Singular("Pade denominator".into()))
}

fn pade_low<T: Field>(a: &DMatrix<T>, b: &[f64]) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let m = b.len() - 1;
    let a2 = T::mm(a, a);
    let mut pows = vec![a2.clone()];
    for _ in 1..m / 2 {
        let next = T::mm(pows.last().unwrap(), &a2);
        pows.push(next);
    }
    // pows[k] = A^{2(k+1)}
    let odd: Vec<(f64, &DMatrix<T>)> = (0..m / 2).map(|k| (b[2 * k + 3], &pows[k])).collect();
    let even: Vec<(f64, &DMatrix<T>)> = (0..m / 2).map(|k| (b[2 * k + 2], &pows[k])).collect();
    let inner = lin_comb(&odd, b[1], n);
    let u = T::mm(a, &inner);
    let v = lin_comb(&even, b[0], n);
    pade_solve(u, v)
}

fn pade13<T: Field>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = a.nrows();
    let b = &B13;
    let a2 = T::mm(a, a);
    let a4 = T::mm(&a2, &a2);
    let a6 = T::mm(&a4, &a2);
    let u_in = lin_comb(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)], 0.0, n);
    let u_tail = lin_comb(&[(b[7], &a6), (b[5], &a4), (b[3], &a2)], b[1], n);
    let u = T::mm(a, &(T::mm(&a6, &u_in) + u_tail));
    let v_in = lin_comb(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)], 0.0, n);
    let v_tail = lin_comb(&[(b[6], &a6), (b[4], &a4), (b[2], &a2)], b[0], n);
    let v = T::mm(&a6, &v_in) + v_tail;
    pade_solve(u, v)
}

fn exp_generic<T: Field>(a: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n1 = norm1(a);
    for (m, theta) in THETA {
        if n1 <= theta {
            let b: &[f64] = match m {
                3 => &B3,
                5 => &B5,
                7 => &B7,
                _ => &B9,
            };
            return pade_low(a, b);
        }
    }
    let s = ((n1 / THETA13).log2().ceil()).max(0.0) as i32;
    let scaled = a * T::re(0.5f64.powi(s));
    let mut x = pade13(&scaled)?;
    for _ in 0..s {
        x = T::mm(&x, &x);
    }
    Ok(x)
}

fn validate(a: &CMatrix, t: f64) -> Result<()> {
    check_square(a, "generator")?;
    check_finite(a, "generator")?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(LabError::Config(format!("time must be finite and nonnegative, got {t}")));
    }
    Ok(())
}

/// e^{tA} by scaling and squaring with a diagonal Pade approximant.
pub fn expm(a: &CMatrix, t: f64) -> Result<CMatrix> {
    validate(a, t)?;
    let n = a.nrows();
    if t == 0.0 || n == 0 {
        return Ok(CMatrix::identity(n, n));
    }
    let out = if is_real(a) {
        from_real(&exp_generic(&(real_part(a) * t))?)
    } else {
        exp_generic(&(a * C64::new(t, 0.0)))?
    };
    check_finite(&out, "matrix exponential")?;
    Ok(out)
}

/// `∫_0^t e^{sA} ds`, read off the top-right block of exp(t [[A, I], [0, 0]]).
pub fn phi1(a: &CMatrix, t: f64) -> Result<CMatrix> {
    validate(a, t)?;
    Ok(augmented_pair(a, t)?.phi)
}

/// Exact one-step integrator for piecewise-constant forcing.
#[derive(Debug, Clone)]
pub struct ExpPair {
    pub h: f64,
    /// e^{hA}
    pub e: CMatrix,
    /// ∫_0^h e^{sA} ds
    pub phi: CMatrix,
}

pub fn expm_phi1(a: &CMatrix, h: f64) -> Result<ExpPair> {
    validate(a, h)?;
    if a.nrows() <= AUGMENTED_LIMIT {
        augmented_pair(a, h)
    } else {
        doubling_pair(a, h)
    }
}

fn augmented_generic<T: Field>(a: &DMatrix<T>, t: f64) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let n = a.nrows();
    let mut big = DMatrix::<T>::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(&(a * T::re(t)));
    for i in 0..n {
        big[(i, n + i)] = T::re(t);
    }
    let ex = exp_generic(&big)?;
    Ok((ex.view((0, 0), (n, n)).into_owned(), ex.view((0, n), (n, n)).into_owned()))
}

pub(crate) fn augmented_pair(a: &CMatrix, h: f64) -> Result<ExpPair> {
    let n = a.nrows();
    if h == 0.0 || n == 0 {
        return Ok(ExpPair {
            h,
            e: CMatrix::identity(n, n),
            phi: CMatrix::zeros(n, n),
        });
    }
    let (e, phi) = if is_real(a) {
        let (e, p) = augmented_generic(&real_part(a), h)?;
        (from_real(&e), from_real(&p))
    } else {
        augmented_generic(a, h)?
    };
    check_finite(&e, "matrix exponential")?;
    check_finite(&phi, "phi1")?;
    Ok(ExpPair { h, e, phi })
}

fn doubling_generic<T: Field>(a: &DMatrix<T>, h: f64) -> (DMatrix<T>, DMatrix<T>) {
    let n = a.nrows();
    let nrm = norm1(a) * h;
    let s = if nrm > 0.25 { (nrm / 0.25).log2().ceil() as i32 } else { 0 };
    let tau = h * 0.5f64.powi(s);
    let m = a * T::re(tau);
    // Taylor sums of e^M and tau*phi1(M); |M| <= 1/4 makes 13 terms ample.
    let mut e = DMatrix::<T>::identity(n, n);
    let mut p = DMatrix::<T>::identity(n, n);
    let mut pow = DMatrix::<T>::identity(n, n);
    let mut fact = 1.0;
    for k in 1..=13 {
        pow = T::mm(&pow, &m);
        fact *= k as f64;
        e.zip_apply(&pow, |x, y| *x += y * T::re(1.0 / fact));
        p.zip_apply(&pow, |x, y| *x += y * T::re(1.0 / (fact * (k + 1) as f64)));
    }
    p *= T::re(tau);
    for _ in 0..s {
        // Phi(2t) = Phi(t) + E(t) Phi(t), E(2t) = E(t)^2
        p = &p + T::mm(&e, &p);
        e = T::mm(&e, &e);
    }
    (e, p)
}

pub(crate) fn doubling_pair(a: &CMatrix, h: f64) -> Result<ExpPair> {
    let n = a.nrows();
    if h == 0.0 || n == 0 {
        return augmented_pair(a, h);
    }
    let (e, phi) = if is_real(a) {
        let (e, p) = doubling_generic(&real_part(a), h);
        (from_real(&e), from_real(&p))
    } else {
        doubling_generic(a, h)
    };
    check_finite(&e, "matrix exponential")?;
    check_finite(&phi, "phi1")?;
    Ok(ExpPair { h, e, phi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, rel_diff};
    use rand::{Rng, SeedableRng};

    fn random(n: usize, seed: u64, scale: f64) -> CMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale)
    }

    fn rk4(a: &CMatrix, t: f64, steps: usize) -> CMatrix {
        let h = t / steps as f64;
        let hc = c(h, 0.0);
        let n = a.nrows();
        let mut x = CMatrix::identity(n, n);
        for _ in 0..steps {
            let k1 = a * &x;
            let k2 = a * (&x + &k1 * (hc / 2.0));
            let k3 = a * (&x + &k2 * (hc / 2.0));
            let k4 = a * (&x + &k3 * hc);
            x += (k1 + k2 * c(2.0, 0.0) + k3 * c(2.0, 0.0) + k4) * (hc / 6.0);
        }
        x
    }

    #[test]
    fn trivial_cases() {
        let z = CMatrix::zeros(3, 3);
        assert_eq!(expm(&z, 7.0).unwrap(), CMatrix::identity(3, 3));
        let m = CMatrix::from_element(1, 1, c(-1.0, 0.0));
        assert!((expm(&m, 1.0).unwrap()[(0, 0)].re - 0.36787944117144233).abs() < 1e-15);
        assert!((phi1(&m, 1.0).unwrap()[(0, 0)].re - 0.6321205588285577).abs() < 1e-15);
        let p = phi1(&CMatrix::zeros(4, 4), 2.0).unwrap();
        assert!(rel_diff(&p, &(CMatrix::identity(4, 4) * c(2.0, 0.0))) < 1e-15);
        assert_eq!(expm(&random(5, 1, 1.0), 0.0).unwrap(), CMatrix::identity(5, 5));
    }

    #[test]
    fn matches_ode_integration() {
        let a = random(8, 7, 1.0);
        let oracle = rk4(&a, 0.3, 30_000);
        assert!((expm(&a, 0.3).unwrap() - oracle).norm() < 1e-9);
    }

    #[test]
    fn phi1_identity() {
        for seed in 0..4 {
            let a = random(6, seed, 2.0);
            let t = 0.7;
            let lhs = matmul(&a, &phi1(&a, t).unwrap());
            let rhs = expm(&a, t).unwrap() - CMatrix::identity(6, 6);
            assert!((lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn semigroup_law_across_degrees() {
        for scale in [1e-3, 0.05, 0.3, 1.0, 4.0] {
            let a = random(7, 3, scale);
            for (s, t) in [(0.2, 0.5), (1.0, 2.0), (0.01, 0.03)] {
                let full = expm(&a, s + t).unwrap();
                let prod = matmul(&expm(&a, s).unwrap(), &expm(&a, t).unwrap());
                assert!((&full - prod).norm() <= 1e-10 * full.norm(), "scale {scale}");
            }
        }
    }

    #[test]
    fn doubling_route_matches_augmented() {
        // stiff dissipative tridiagonal and a random complex matrix
        let n = 40;
        let mut lap = CMatrix::zeros(n, n);
        for i in 0..n {
            lap[(i, i)] = c(-2.0 * 1600.0, 0.0);
            if i > 0 {
                lap[(i, i - 1)] = c(1600.0, 0.0);
            }
            if i + 1 < n {
                lap[(i, i + 1)] = c(1600.0, 0.0);
            }
        }
        for (a, h) in [(lap.clone(), 1e-3), (lap, 0.1), (random(12, 9, 3.0), 0.4)] {
            let x = augmented_pair(&a, h).unwrap();
            let y = doubling_pair(&a, h).unwrap();
            assert!(rel_diff(&y.e, &x.e) < 1e-11);
            assert!(rel_diff(&y.phi, &x.phi) < 1e-11);
        }
    }
}
