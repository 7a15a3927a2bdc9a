use mrlab::heat::*;
use mrlab::linalg::{c, matvec, CVector};
use mrlab::mild::{evolve_matrix, max_rel_diff, BochnerSignal, TimeGrid};
use mrlab::volterra::Kernel;

fn cfg(n: usize, t: f64, steps: usize) -> HeatConfig {
    HeatConfig { n, t, steps, ..HeatConfig::default() }
}

#[test]
fn zero_forcing_gives_zero_solution() {
    let grid = TimeGrid::new(1.0, 32).unwrap();
    let run = run_pde(&cfg(16, 1.0, 32), &BochnerSignal::zeros(grid, 17)).unwrap();
    assert!(run.z.max_norm() == 0.0);
    let t = run.terms;
    assert_eq!((t.norm_f, t.norm_dz, t.norm_z, t.norm_gz), (0.0, 0.0, 0.0, 0.0));
}

#[test]
fn steady_state_is_reached() {
    // 𝒜 has the constants in its kernel, so the forcing is taken in its range: g = -𝒜v
    let bs = heat_boundary_system(32).unwrap();
    let v = cos_mode(&bs, 1) + cos_mode(&bs, 2) * c(0.3, 0.0);
    let g = -matvec(bs.a_pert(), &v);
    let grid = TimeGrid::new(5.0, 128).unwrap();
    let run = run_pde(&cfg(32, 5.0, 128), &BochnerSignal::constant(grid, &g)).unwrap();
    let w = run.z.samples.last().unwrap();
    let res = (matvec(bs.a_pert(), w) + &g).norm() / g.norm();
    assert!(res <= 1e-8, "{res}");
    assert!(run.terms.ratio() <= run.report.c_est);
}

#[test]
fn pde_constant_is_uniform_in_space_grid() {
    let grid = TimeGrid::new(1.0, 128).unwrap();
    let est = |n: usize| {
        let bs = heat_boundary_system(n).unwrap();
        let f = BochnerSignal::from_fn(grid, |t| cos_mode(&bs, 1) * c(t, 0.0));
        run_pde(&cfg(n, 1.0, 128), &f).unwrap().report.c_est
    };
    let (a, b) = (est(32), est(64));
    assert!((a - b).abs() / b <= 0.1, "{a} {b}");
}

#[test]
fn neumann_energy_is_nonincreasing() {
    let bs = heat_boundary_system(32).unwrap();
    let x0 = CVector::from_iterator(33, bs.nodes().iter().map(|s| c(s * s * (1.0 - 0.5 * s) + (5.0 * s).sin(), 0.0)));
    let grid = TimeGrid::new(0.5, 200).unwrap();
    let z = evolve_matrix(bs.a(), &x0, &BochnerSignal::zeros(grid, 33)).unwrap();
    let e: Vec<f64> = z.samples.iter().map(|v| bs.lr_norm(v.as_slice(), 2.0)).collect();
    assert!(e.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
}

fn pide_forcing(bs: &mrlab::boundary::BoundarySystem, grid: TimeGrid) -> BochnerSignal {
    BochnerSignal::from_fn(grid, |t| cos_mode(bs, 1) * c(1.0 + t, 0.0) + cos_mode(bs, 0) * c(0.5, 0.0))
}

#[test]
fn pide_without_memory_is_the_pde() {
    let bs = heat_boundary_system(16).unwrap();
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let f = pide_forcing(&bs, grid);
    let pide = PideConfig { kernel: Kernel::Zero, n_mem: 8, ..PideConfig::default() };
    let r = run_pide(&cfg(16, 1.0, 64), &pide, &f).unwrap();
    let plain = evolve_matrix(bs.a_pert(), &CVector::zeros(17), &f).unwrap();
    assert!(max_rel_diff(&plain.samples, &r.rho.samples) <= 1e-12);
    assert!(r.cross.error <= 1e-12);
}

#[test]
fn pide_cross_check_and_f_paths() {
    let bs = heat_boundary_system(32).unwrap();
    let grid = TimeGrid::new(1.0, 1024).unwrap();
    let pide = PideConfig { kernel: Kernel::Exp { rate: 1.0 }, n_mem: 64, ..PideConfig::default() };
    let r = run_pide(&cfg(32, 1.0, 1024), &pide, &pide_forcing(&bs, grid)).unwrap();
    assert!(r.cross.error <= 1e-2, "{}", r.cross.error);
    assert!(r.f_paths_gap <= F_PATHS_TOL, "{}", r.f_paths_gap);
    assert_eq!(r.space, "surrogate space");
    assert!(r.report.c_est.is_finite());
}

#[test]
fn theta_window_is_enforced() {
    let bs = heat_boundary_system(16).unwrap();
    let grid = TimeGrid::new(1.0, 16).unwrap();
    let bad = HeatConfig { theta_frac: 0.6, ..cfg(16, 1.0, 16) };
    assert!(run_pide(&bad, &PideConfig::default(), &pide_forcing(&bs, grid)).is_err());
}

#[test]
fn field_csv_is_deterministic() {
    let bs = heat_boundary_system(8).unwrap();
    let grid = TimeGrid::new(0.1, 4).unwrap();
    let z = evolve_matrix(bs.a_pert(), &cos_mode(&bs, 1), &BochnerSignal::zeros(grid, 9)).unwrap();
    let (mut a, mut b) = (vec![], vec![]);
    write_field_csv(&bs, &z, &mut a).unwrap();
    write_field_csv(&bs, &z, &mut b).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("t,s,w\n"));
    assert_eq!(text.lines().count(), 1 + 5 * 9);
}
