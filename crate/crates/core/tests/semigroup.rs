use mrlab::boundary::realize_perturbed;
use mrlab::heat::{cos_mode, heat_boundary_system, k0_row};
use mrlab::linalg::{c, matmul, matvec, resolvent, CMatrix, CVector, C64};
use mrlab::quadrature::log_grid;
use mrlab::semigroup::*;
use proptest::prelude::*;

fn refined_s_grid() -> Vec<f64> {
    log_grid(SCAN_LO, SCAN_HI, 2 * SCAN_PER_DECADE)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

#[test]
fn weis_scan_heat_is_bounded_and_refinement_stable() {
    let bs = heat_boundary_system(64).unwrap();
    let g = realize_perturbed(&bs).unwrap();
    let a = weis_scan(&g, &default_s_grid()).unwrap();
    let b = weis_scan(&g, &refined_s_grid()).unwrap();
    assert!(a.sup.is_finite() && rel(a.sup, b.sup) <= 0.02, "{} vs {}", a.sup, b.sup);
    assert_eq!(a.verdict, Verdict::Bounded);

    let shifted_neumann = Generator::new(bs.a() - CMatrix::identity(65, 65), "neumann-1").unwrap();
    let a = weis_scan(&shifted_neumann, &default_s_grid()).unwrap();
    let b = weis_scan(&shifted_neumann, &refined_s_grid()).unwrap();
    assert!(rel(a.sup, b.sup) <= 0.02 && a.sup < 2.0, "{} vs {}", a.sup, b.sup);
}

#[test]
fn rotation_negative_control() {
    let mut sups = vec![];
    for eps in [1e-1, 1e-2, 1e-3] {
        let g = Generator::new(damped_rotations(&[1.0], eps), "rotation").unwrap();
        sups.push(weis_scan(&g, &default_s_grid()).unwrap().sup);
    }
    assert!(sups[1] > 5.0 * sups[0] && sups[2] > 5.0 * sups[1], "{sups:?}");

    // frequencies placed on grid points in every decade: the scan grows with s
    let grid = default_s_grid();
    let freqs: Vec<f64> = (0..=6).map(|k| grid[k * SCAN_PER_DECADE]).collect();
    let g = Generator::new(damped_rotations(&freqs, 1e-2), "skew").unwrap();
    let r = weis_scan(&g, &grid).unwrap();
    assert_eq!(r.verdict, Verdict::UnboundedLooking, "sup {}", r.sup);
}

#[test]
fn analyticity_neumann_vs_shift() {
    let radii = log_grid(1e-1, 1e3, 12);
    let coarse = half_plane_grid(1.0, &radii, 7);
    let fine = half_plane_grid(1.0, &log_grid(1e-1, 1e3, 24), 13);
    let bs = heat_boundary_system(64).unwrap();
    let g = Generator::new(bs.a().clone(), "neumann").unwrap();
    let a = analyticity_scan(&g, 1.0, &coarse).unwrap();
    let b = analyticity_scan(&g, 1.0, &fine).unwrap();
    assert!(rel(a.sup, b.sup) <= 0.02, "{} vs {}", a.sup, b.sup);

    let mut shift_sups = vec![];
    let mut neumann_sups = vec![];
    for n in [16, 64, 128] {
        let s = Generator::new(shift_generator(n), "shift").unwrap();
        shift_sups.push(analyticity_scan(&s, 1.0, &coarse).unwrap().sup);
        let h = Generator::new(heat_boundary_system(n).unwrap().a().clone(), "neumann").unwrap();
        neumann_sups.push(analyticity_scan(&h, 1.0, &coarse).unwrap().sup);
    }
    assert!(shift_sups[2] > 2.5 * shift_sups[0], "{shift_sups:?}");
    assert!(neumann_sups[2] < 1.05 * neumann_sups[0], "{neumann_sups:?}");
}

#[test]
fn fractional_scans_scalar_and_heat() {
    let g = Generator::scalar(-1.0);
    let one = CMatrix::from_element(1, 1, c(1.0, 0.0));
    let grid = default_s_grid();
    let omega = 0.5;
    let r = fractional_scans(&g, &one, &CMatrix::zeros(1, 1), omega, FracExponents::Conjugate { p: 2.0 }, &grid).unwrap();
    assert_eq!(r.observation.sup, 0.0);
    for (z, v) in r.control.grid.iter().zip(&r.control.values) {
        let s = z.im.abs();
        let want = s.sqrt() / ((omega + 1.0).powi(2) + s * s).sqrt();
        assert!((v - want).abs() <= 1e-8);
    }

    let bs = heat_boundary_system(64).unwrap();
    let gp = realize_perturbed(&bs).unwrap();
    let k0 = k0_row(&bs);
    let run = |grid: &[f64]| fractional_scans(&gp, bs.b_lifted(), &k0, 1.0, FracExponents::Conjugate { p: 2.0 }, grid).unwrap();
    let (a, b) = (run(&grid), run(&refined_s_grid()));
    for (x, y) in [(&a.control, &b.control), (&a.observation, &b.observation)] {
        assert!(x.sup.is_finite() && rel(x.sup, y.sup) <= 0.02, "{}: {} vs {}", x.label, x.sup, y.sup);
        assert_eq!(x.verdict, Verdict::Bounded);
    }
}

fn smooth_probes(a: &CMatrix) -> Vec<CVector> {
    let n = a.nrows();
    let r1 = resolvent(a, c(1.0, 0.0)).unwrap();
    let bs = heat_boundary_system(n - 1).unwrap();
    (0..3)
        .map(|k| {
            let y = cos_mode(&bs, k) + CVector::from_iterator(n, bs.nodes().iter().map(|s| c(s * s - 0.3 * k as f64 * s, 0.0)));
            matvec(&r1, &matvec(&r1, &y))
        })
        .collect()
}

#[test]
fn yosida_converges_per_decade() {
    let bs = heat_boundary_system(32).unwrap();
    let g = Generator::new(bs.a().clone(), "neumann").unwrap();
    let x = cos_mode(&bs, 1);
    let ax = matvec(&g.a, &x);
    let err = |n: f64| (matvec(&yosida_approx(&g, n).unwrap(), &x) - &ax).norm();
    assert!(err(1e2) >= 5.0 * err(1e3), "{} {}", err(1e2), err(1e3));

    let bs = heat_boundary_system(64).unwrap();
    let gp = realize_perturbed(&bs).unwrap();
    for x in smooth_probes(&gp.a) {
        let ax = matvec(&gp.a, &x);
        let errs: Vec<f64> = [1e1, 1e2, 1e3, 1e4].iter().map(|&n| (matvec(&yosida_approx(&gp, n).unwrap(), &x) - &ax).norm()).collect();
        // n = 10 sits below the probes' spectral content; the 1/n rate starts at 1e2
        assert!(errs[0] > errs[1], "{errs:?}");
        for w in errs[1..].windows(2) {
            assert!(w[0] >= 5.0 * w[1], "{errs:?}");
        }
    }
    // leading eigenvectors of 𝒜: the rate holds from n = 10 on
    let sp = mrlab::linalg::eig(&gp.a).unwrap();
    let vecs = sp.vectors.unwrap();
    let mut order: Vec<usize> = (0..sp.values.len()).collect();
    order.sort_by(|&i, &j| sp.values[j].re.partial_cmp(&sp.values[i].re).unwrap());
    let x = vecs.column(order[0]) + vecs.column(order[1]);
    let ax = matvec(&gp.a, &x);
    let errs: Vec<f64> = [1e1, 1e2, 1e3, 1e4].iter().map(|&n| (matvec(&yosida_approx(&gp, n).unwrap(), &x) - &ax).norm()).collect();
    for w in errs.windows(2) {
        assert!(w[0] >= 5.0 * w[1], "{errs:?}");
    }
}

#[test]
fn yosida_commutes_with_resolvent() {
    let bs = heat_boundary_system(32).unwrap();
    let gp = realize_perturbed(&bs).unwrap();
    let y = yosida_approx(&gp, 50.0).unwrap();
    let r = resolvent(&gp.a, c(3.0, 1.0)).unwrap();
    let d = matmul(&y, &r) - matmul(&r, &y);
    assert!(d.norm() <= 1e-10 * matmul(&y, &r).norm());
}

#[test]
fn generator_growth_bound() {
    let g = Generator::new(damped_rotations(&[2.0, 5.0], 0.3), "rot").unwrap();
    assert!((g.omega0().unwrap() + 0.3).abs() < 1e-8);
}

#[test]
fn scan_report_serialization() {
    let g = Generator::scalar(-1.0);
    let r = weis_scan(&g, &[1.0, 10.0]).unwrap();
    let mut buf = vec![];
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 5);
    let j = r.summary_json();
    assert_eq!(j["verdict"], "bounded");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn analyticity_scan_is_scale_covariant(scale in 0.1f64..20.0) {
        let bs = heat_boundary_system(16).unwrap();
        let a = bs.a().clone();
        let grid = half_plane_grid(1.0, &log_grid(1e-1, 1e3, 6), 5);
        let base = analyticity_scan(&Generator::new(a.clone(), "a").unwrap(), 1.0, &grid).unwrap();
        let sgrid: Vec<C64> = grid.iter().map(|z| z * scale).collect();
        let scaled = analyticity_scan(&Generator::new(a * c(scale, 0.0), "ca").unwrap(), scale, &sgrid).unwrap();
        prop_assert_eq!(base.verdict, scaled.verdict);
        prop_assert!(rel(base.sup, scaled.sup) < 1e-8);
    }
}
