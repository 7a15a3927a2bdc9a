use mrlab::admissibility::*;
use mrlab::boundary::realize_perturbed;
use mrlab::heat::{heat_boundary_system, k0_row, smooth_initial};
use mrlab::linalg::{c, eig, matmul, sigma_max, solve, CMatrix, CVector};
use mrlab::mild::TimeGrid;
use mrlab::semigroup::Generator;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

/// `∫_0^t e^{sA^H} Q e^{sA} ds` through a diagonalization of A.
fn gramian_by_eig(a: &CMatrix, cm: &CMatrix, t: f64) -> CMatrix {
    let sp = eig(a).unwrap();
    let v = sp.vectors.unwrap();
    let vinv = solve(&v, &CMatrix::identity(v.nrows(), v.nrows())).unwrap();
    let cv = matmul(cm, &v);
    let m = matmul(&cv.adjoint(), &cv);
    let l = &sp.values;
    let inner = CMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        let s = l[i].conj() + l[j];
        let w = if s.norm() * t < 1e-10 { c(t, 0.0) } else { ((s * t).exp() - 1.0) / s };
        m[(i, j)] * w
    });
    matmul(&matmul(&vinv.adjoint(), &inner), &vinv)
}

#[test]
fn scalar_constant_matches_closed_form() {
    let one = CMatrix::from_element(1, 1, c(1.0, 0.0));
    let g = Generator::scalar(-1.0);
    let r = obs_admissibility(&one, &g, 20.0, 2.0, 400).unwrap();
    assert!((r.kappa - 0.5f64.sqrt()).abs() <= 1e-6);
    // p = 3 discrete route: ∫ e^{-3t} -> 1/3, right-endpoint bias of order h
    let r3 = obs_admissibility(&one, &g, 20.0, 3.0, 4000).unwrap();
    assert!(rel(r3.kappa, (1.0f64 / 3.0).powf(1.0 / 3.0)) <= 5e-3, "{}", r3.kappa);
    assert_eq!(r3.method, AdmissibilityMethod::PowerProbe);
}

#[test]
fn heat_observation_gramian_against_eigen_oracle() {
    let bs = heat_boundary_system(64).unwrap();
    let g = Generator::new(bs.a().clone(), "neumann").unwrap();
    let k0 = k0_row(&bs);
    let r = obs_admissibility(&k0, &g, 1.0, 2.0, 512).unwrap();
    let oracle = sigma_max(&gramian_by_eig(&g.a, &k0, 1.0)).sqrt();
    assert!(rel(r.kappa, oracle) <= 1e-6, "{} vs {oracle}", r.kappa);

    let gp = realize_perturbed(&bs).unwrap();
    let r = obs_admissibility(&k0, &gp, 0.5, 2.0, 512).unwrap();
    let oracle = sigma_max(&gramian_by_eig(&gp.a, &k0, 0.5)).sqrt();
    assert!(rel(r.kappa, oracle) <= 1e-6, "{} vs {oracle}", r.kappa);
}

#[test]
fn heat_discrete_time_grid_converges_to_gramian() {
    // the sampled p = 2 constant approaches the exact one; a 4x finer grid lands within 5%
    let bs = heat_boundary_system(64).unwrap();
    let g = Generator::new(bs.a().clone(), "neumann").unwrap();
    let k0 = k0_row(&bs);
    let exact = obs_admissibility(&k0, &g, 1.0, 2.0, 0).unwrap().kappa;
    let discrete = |steps: usize| {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let e = mrlab::linalg::expm(&g.a, grid.h()).unwrap();
        let mut row = k0.clone();
        let mut w = CMatrix::zeros(65, 65);
        for _ in 0..steps {
            row = matmul(&row, &e);
            w += matmul(&row.adjoint(), &row) * c(grid.h(), 0.0);
        }
        sigma_max(&w).sqrt()
    };
    let (d1, d4) = (discrete(4096), discrete(16384));
    assert!(rel(d4, exact) < rel(d1, exact) && rel(d4, exact) <= 0.05, "{d1} {d4} {exact}");
}

#[test]
fn constants_are_monotone_in_horizon() {
    let bs = heat_boundary_system(32).unwrap();
    let g = realize_perturbed(&bs).unwrap();
    let k0 = k0_row(&bs);
    let mut last = 0.0;
    for alpha in [0.1, 0.25, 0.5, 1.0] {
        let r = obs_admissibility(&k0, &g, alpha, 2.0, 0).unwrap();
        assert!(r.kappa >= last);
        last = r.kappa;
    }
    let half = ctrl_admissibility(bs.b_lifted(), &g, 0.5, 2.0, 256).unwrap();
    let full = ctrl_admissibility(bs.b_lifted(), &g, 1.0, 2.0, 256).unwrap();
    assert!(full.kappa >= half.kappa && half.kappa > 0.0);
    let half3 = ctrl_admissibility(bs.b_lifted(), &g, 0.5, 3.0, 128).unwrap();
    let full3 = ctrl_admissibility(bs.b_lifted(), &g, 1.0, 3.0, 256).unwrap();
    assert!(full3.kappa >= 0.99 * half3.kappa, "{} {}", half3.kappa, full3.kappa);
}

#[test]
fn control_gramian_bounds_sampled_inputs() {
    // piecewise-constant inputs are a subspace of L^2: the sampled norm sits below the exact one
    let bs = heat_boundary_system(32).unwrap();
    let g = Generator::new(bs.a().clone(), "neumann").unwrap();
    let exact = ctrl_admissibility(bs.b_lifted(), &g, 1.0, 2.0, 0).unwrap().kappa;
    let mut prev = 0.0;
    for steps in [256, 1024, 4096] {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let m = control_map(&g.a, bs.b_lifted(), grid).unwrap();
        let v = sigma_max(&m) / grid.h().sqrt();
        assert!(v <= exact * (1.0 + 1e-9) && v >= prev);
        prev = v;
    }
    assert!(rel(prev, exact) <= 0.05, "{prev} vs {exact}");
}

fn heat_io(n_state: usize, steps: usize, t: f64) -> IoOperatorMatrix {
    let bs = heat_boundary_system(n_state).unwrap();
    io_operator(bs.a(), bs.b_lifted(), &k0_row(&bs), TimeGrid::new(t, steps).unwrap(), 2.0).unwrap()
}

#[test]
fn io_operator_is_causal_and_decreases_with_horizon() {
    let f = heat_io(32, 256, 1.0);
    assert_eq!(f.causality_defect(), 0.0);
    let mut norms = vec![];
    for steps in [256, 64, 16, 4] {
        norms.push(f.truncated(steps).unwrap().norm().unwrap());
    }
    for w in norms.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-9), "{norms:?}");
    }
    assert!(norms[3] < 0.5 * norms[0], "{norms:?}");
}

#[test]
fn feedback_margin_is_refinement_stable() {
    let a = feedback_admissible(&heat_io(32, 256, 1.0)).unwrap();
    let b = feedback_admissible(&heat_io(32, 512, 1.0)).unwrap();
    assert!(a.invertible && b.invertible);
    assert!(rel(a.margin, b.margin) <= 0.05 && rel(a.margin_half, b.margin_half) <= 0.05, "{a:?} {b:?}");
}

#[test]
fn feedback_solution_matches_closed_loop_output() {
    let bs = heat_boundary_system(32).unwrap();
    let x0 = smooth_initial(&bs).unwrap();
    let k0 = k0_row(&bs);
    let gaps: Vec<f64> = [128, 512]
        .iter()
        .map(|&n| feedback_solution_gap(bs.a(), bs.b_lifted(), &k0, bs.a_pert(), &x0, TimeGrid::new(0.5, n).unwrap()).unwrap())
        .collect();
    assert!(gaps[1] < gaps[0] && gaps[1] <= 2e-2, "{gaps:?}");
}

#[test]
fn regularity_heat_versus_feedthrough() {
    let f = heat_io(32, 1024, 1.0);
    let z0 = CVector::from_element(1, c(1.0, 0.0));
    let r = regularity_check(&f, &z0).unwrap();
    assert!(r.regular_looking, "{r:?}");
    // short horizon: the step response sits in its sqrt(t) regime, so the limit is sharp
    let f = heat_io(64, 1024, 1.0 / 16.0);
    let z0 = CVector::from_element(1, c(1.0, 0.0));
    let r = regularity_check(&f, &z0).unwrap();
    assert!(r.regular_looking, "{r:?}");
    let fed = IoOperatorMatrix::from_blocks(f.grid, &f.blocks + CMatrix::identity(1024, 1024), 2.0, 1, 1).unwrap();
    let r = regularity_check(&fed, &z0).unwrap();
    assert!(!r.regular_looking && (r.extrapolated - 1.0).abs() < 0.1, "{r:?}");
}

#[test]
fn yosida_extension_recovers_observation() {
    let bs = heat_boundary_system(64).unwrap();
    let g = realize_perturbed(&bs).unwrap();
    let k0 = k0_row(&bs);
    let x = smooth_initial(&bs).unwrap();
    let r = yosida_extension(&k0, &g, &x, &extension_grid(&g)).unwrap();
    assert!(r.converged, "{}", r.limit_error);
    let slope = r.slope.unwrap();
    assert!((slope + 1.0).abs() <= 0.1, "{slope}");

    let g = Generator::scalar(-2.0);
    let one = CMatrix::from_element(1, 1, c(3.0, 0.0));
    let x = CVector::from_element(1, c(0.7, 0.0));
    let r = yosida_extension(&one, &g, &x, &[10.0, 100.0, 1000.0]).unwrap();
    // s·3·0.7/(s+2) - 2.1 = -4.2/(s+2)
    for (s, e) in r.s.iter().zip(&r.errors) {
        assert!((e - 4.2 / (s + 2.0)).abs() <= 1e-12);
    }
    assert!(yosida_extension(&one, &g, &x, &[5.0, 1.0]).is_err());
}
