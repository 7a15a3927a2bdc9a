use mrlab::linalg::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(n: usize, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CMatrix::from_fn(n, n, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn neumann(n: usize) -> CMatrix {
    // vertex grid with reflected ghosts
    let ds = 1.0 / n as f64;
    let k = 1.0 / (ds * ds);
    let mut a = CMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        a[(i, i)] = c(-2.0 * k, 0.0);
        let left = if i == 0 { 1 } else { i - 1 };
        let right = if i == n { n - 1 } else { i + 1 };
        a[(i, left)] += c(k, 0.0);
        a[(i, right)] += c(k, 0.0);
    }
    a
}

#[test]
fn p3_norm_matches_probe_maximization() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = CMatrix::from_fn(10, 10, |_, _| c(rng.gen_range(-1.0..1.0), 0.0));
    let spec = LpNormSpec::plain(3.0, 10).unwrap();
    let est = opnorm(&m, &spec).unwrap();
    assert!(est.converged);
    // 10^5 complex probes: a random sweep, then an adaptive random walk around the best one
    let ratio = |x: &[C64]| {
        let y = m.clone() * DVector::from_vec(x.to_vec());
        spec.norm(y.as_slice()) / spec.norm(x)
    };
    let mut best: Vec<C64> = vec![c(1.0, 0.0); 10];
    let mut probe_best = ratio(&best);
    for _ in 0..20_000 {
        let x: Vec<C64> = (0..10).map(|_| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let r = ratio(&x);
        if r > probe_best {
            probe_best = r;
            best = x;
        }
    }
    let mut step = 0.3;
    for k in 0..80_000 {
        let x: Vec<C64> = best.iter().map(|v| v + c(rng.gen_range(-step..step), rng.gen_range(-step..step))).collect();
        let r = ratio(&x);
        if r > probe_best {
            probe_best = r;
            best = x;
        }
        if k % 2000 == 1999 {
            step *= 0.7;
        }
    }
    println!("power {} probes {}", est.value, probe_best);
    assert!((est.value - probe_best).abs() <= 0.01 * est.value);
}

#[test]
fn neumann_spectrum_converges() {
    let mut errs = vec![];
    for n in [50usize, 100, 200] {
        let s = eig(&neumann(n)).unwrap();
        let mut v: Vec<f64> = s.values.iter().map(|z| z.re).collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert!(v[0].abs() < 1e-8);
        let pi2 = std::f64::consts::PI.powi(2);
        errs.push(((v[1] + pi2).abs(), (v[2] + 4.0 * pi2).abs()));
    }
    assert!(errs[2].0 < 1e-3 && errs[2].1 < 1e-2);
    // second order: doubling N cuts the error by about four
    assert!(errs[1].0 / errs[2].0 > 3.5);
    assert!(errs[0].1 / errs[1].1 > 3.5);
}

#[test]
fn similarity_invariance() {
    let a = random(12, 1);
    let s = random(12, 2) + identity(12) * c(3.0, 0.0);
    let sinv = s.clone().try_inverse().unwrap();
    let b = matmul(&matmul(&s, &a), &sinv);
    let mut ea = eig(&a).unwrap().values;
    let mut eb = eig(&b).unwrap().values;
    let key = |z: &C64| (z.re * 1e6).round() as i64 * 1_000_000_000 + (z.im * 1e6).round() as i64;
    ea.sort_by_key(key);
    eb.sort_by_key(key);
    for (x, y) in ea.iter().zip(&eb) {
        assert!((x - y).norm() < 1e-8);
    }
}

#[test]
fn resolvent_cases_and_identity() {
    let r = resolvent(&CMatrix::zeros(3, 3), c(4.0, 0.0)).unwrap();
    assert!((r - identity(3) * c(0.25, 0.0)).norm() < 1e-15);
    let r = resolvent(&CMatrix::from_element(1, 1, c(-2.0, 0.0)), c(3.0, 0.0)).unwrap();
    assert!((r[(0, 0)].re - 0.2).abs() < 1e-15);
    let a = random(8, 4);
    let (l, m) = (c(3.0, 1.0), c(-0.5, 4.0));
    let rl = resolvent(&a, l).unwrap();
    let rm = resolvent(&a, m).unwrap();
    let lhs = &rl - &rm;
    let rhs = matmul(&rl, &rm) * (m - l);
    assert!((lhs - rhs).norm() < 1e-11);
    let x = resolvent(&a, l).unwrap();
    let res = (matmul(&shifted(&a, l), &x) - identity(8)).norm();
    assert!(res <= 1e-12 * x.norm() * shifted(&a, l).norm());
}

#[test]
fn resolvent_rejects_spectrum() {
    let a = CMatrix::from_diagonal(&DVector::from_vec(vec![c(1.0, 0.0), c(2.0, 0.0)]));
    match resolvent(&a, c(2.0, 0.0)) {
        Err(mrlab::LabError::InSpectrum { sigma_min, .. }) => assert!(sigma_min < 1e-12),
        other => panic!("expected spectrum error, got {other:?}"),
    }
    assert!(expm(&CMatrix::zeros(2, 3), 1.0).is_err());
    let mut bad = CMatrix::zeros(2, 2);
    bad[(0, 1)] = c(f64::NAN, 0.0);
    assert!(expm(&bad, 1.0).is_err());
}

#[test]
fn resolvent_is_laplace_transform() {
    let a = random(6, 8) - identity(6) * c(2.0, 0.0);
    let lam = c(1.5, 0.7);
    // Gauss-Legendre panels on [0, 40]
    let (nodes, weights) = gauss_legendre_16();
    let mut acc = CMatrix::zeros(6, 6);
    let panels = 400;
    let w = 40.0 / panels as f64;
    for p in 0..panels {
        for (x, wt) in nodes.iter().zip(&weights) {
            let t = w * (p as f64 + 0.5 * (x + 1.0));
            acc += expm(&a, t).unwrap() * ((-lam * t).exp() * wt * w * 0.5);
        }
    }
    assert!((acc - resolvent(&a, lam).unwrap()).norm() < 1e-6);
}

fn gauss_legendre_16() -> (Vec<f64>, Vec<f64>) {
    let gl = mrlab::quadrature::gauss_legendre(16);
    (gl.0, gl.1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn semigroup_law(seed in 0u64..1000, s in 0.0f64..2.0, t in 0.0f64..2.0, scale in 0.1f64..3.0) {
        let a = random(6, seed) * c(scale, 0.0);
        let full = expm(&a, s + t).unwrap();
        let prod = matmul(&expm(&a, s).unwrap(), &expm(&a, t).unwrap());
        prop_assert!((&full - prod).norm() <= 1e-10 * full.norm());
    }

    #[test]
    fn phi1_matches_identity(seed in 0u64..1000, t in 0.0f64..3.0) {
        let a = random(5, seed);
        let lhs = matmul(&a, &phi1(&a, t).unwrap());
        let rhs = expm(&a, t).unwrap() - identity(5);
        prop_assert!((lhs - rhs).norm() <= 1e-10 * (1.0 + expm(&a, t).unwrap().norm()));
    }

    #[test]
    fn opnorm_p2_adjoint_invariant(seed in 0u64..1000) {
        let a = random(7, seed);
        let s = LpNormSpec::plain(2.0, 7).unwrap();
        let x = opnorm(&a, &s).unwrap().value;
        let y = opnorm(&a.adjoint(), &s).unwrap().value;
        prop_assert!((x - y).abs() <= 1e-12 * x);
    }

    #[test]
    fn power_estimate_is_lower_bound(seed in 0u64..1000, p in 1.2f64..4.0) {
        // never exceeds the exact Riesz-Thorin-free bound max(|M|_1, |M|_inf) interpolation ceiling
        let a = random(6, seed);
        let spec = LpNormSpec::plain(p, 6).unwrap();
        let est = opnorm(&a, &spec).unwrap().value;
        let n1 = (0..6).map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
        let ninf = (0..6).map(|i| a.row(i).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max);
        let ceiling = n1.powf(1.0 / p) * ninf.powf(1.0 - 1.0 / p);
        prop_assert!(est <= ceiling * (1.0 + 1e-9));
    }
}
