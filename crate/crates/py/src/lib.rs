use mrlab::admissibility::obs_admissibility;
use mrlab::boundary::{realize_perturbed, resolvent_identity_check, BoundarySystem};
use mrlab::cli::{ExperimentConfig, Run};
use mrlab::fractional::{frac_power_contour, ContourSpec};
use mrlab::heat::{cos_mode, heat_boundary_system, k0_row};
use mrlab::linalg::{CMatrix, C64};
use mrlab::maxreg::maxreg_constant;
use mrlab::mild::{evolve_matrix, BochnerSignal, TimeGrid};
use mrlab::semigroup::Generator;
use mrlab::volterra::{companion_vs_direct, kernel_bergman_norm, FSpec, Kernel, SectorSpec, VolterraSpec};
use mrlab::LabError;
use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows = Vec<Vec<Complex64>>;

fn err(e: LabError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_rows(m: &CMatrix) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &Rows) -> PyResult<CMatrix> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(CMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Heat equation on (0,1) with `w'(0) = 0` and `w'(1) = w(1) - w(0)`, on N cells.
#[pyclass(module = "pymrlab")]
struct HeatSystem {
    bs: BoundarySystem,
}

#[pymethods]
impl HeatSystem {
    #[new]
    fn new(n: usize) -> PyResult<Self> {
        Ok(Self { bs: heat_boundary_system(n).map_err(err)? })
    }

    #[getter]
    fn n_state(&self) -> usize {
        self.bs.n_state()
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.bs.nodes().to_vec()
    }

    /// Neumann generator.
    fn a(&self) -> Rows {
        to_rows(self.bs.a())
    }

    /// Generator of the perturbed boundary condition.
    fn a_pert(&self) -> Rows {
        to_rows(self.bs.a_pert())
    }

    fn b(&self) -> Rows {
        to_rows(self.bs.b_lifted())
    }

    fn k0(&self) -> Rows {
        to_rows(&k0_row(&self.bs))
    }

    fn cos_mode(&self, k: usize) -> Vec<Complex64> {
        cos_mode(&self.bs, k).iter().copied().collect()
    }

    /// Residuals of the resolvent and generator identities at `lam`.
    fn identities<'py>(&self, py: Python<'py>, lam: Complex64) -> PyResult<Bound<'py, PyDict>> {
        let r = resolvent_identity_check(&self.bs, lam, &[]).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("resolvent_identity", r.thm32_iv)?;
        d.set_item("generator_equality", r.generator_eq)?;
        d.set_item("obstruction", r.obstruction)?;
        Ok(d)
    }

    /// Growth bound of the perturbed semigroup.
    fn omega0(&self) -> PyResult<f64> {
        realize_perturbed(&self.bs).map_err(err)?.omega0().map_err(err)
    }

    /// `z(t)` on a uniform grid for `z' = 𝒜z`, `z(0) = x0`.
    fn evolve(&self, x0: Vec<Complex64>, t_end: f64, steps: usize) -> PyResult<Vec<Vec<Complex64>>> {
        let n = self.bs.n_state();
        if x0.len() != n {
            return Err(PyValueError::new_err(format!("x0 must have length {n}")));
        }
        let grid = TimeGrid::new(t_end, steps).map_err(err)?;
        let z = evolve_matrix(self.bs.a_pert(), &x0.into(), &BochnerSignal::zeros(grid, n)).map_err(err)?;
        Ok(z.samples.iter().map(|v| v.iter().copied().collect()).collect())
    }
}

/// `C_est`, `|ℛ|`, `|f ↦ z|` for the given generator on `[0, T]`.
#[pyfunction]
#[pyo3(signature = (a, t_end=1.0, steps=128, p=2.0))]
fn maxreg<'py>(py: Python<'py>, a: Rows, t_end: f64, steps: usize, p: f64) -> PyResult<Bound<'py, PyDict>> {
    let a = from_rows(&a)?;
    let r = maxreg_constant(&a, TimeGrid::new(t_end, steps).map_err(err)?, p).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("c_est", r.c_est)?;
    d.set_item("r_norm", r.r_norm)?;
    d.set_item("z_norm", r.z_norm)?;
    d.set_item("converged", r.converged)?;
    Ok(d)
}

/// Admissibility constant of `C` for `A` on `[0, alpha]`.
#[pyfunction]
#[pyo3(signature = (c, a, alpha, p=2.0, steps=0))]
fn admissibility_constant(c: Rows, a: Rows, alpha: f64, p: f64, steps: usize) -> PyResult<f64> {
    let g = Generator::new(from_rows(&a)?, "python").map_err(err)?;
    Ok(obs_admissibility(&from_rows(&c)?, &g, alpha, p, steps).map_err(err)?.kappa)
}

/// `(-A)^{-beta}` by contour quadrature.
#[pyfunction]
fn frac_power(a: Rows, beta: f64) -> PyResult<Rows> {
    Ok(to_rows(&frac_power_contour(&from_rows(&a)?, beta, &ContourSpec::default()).map_err(err)?))
}

/// Bergman norm of `e^{-rate z}` on the sector of half-angle `theta`.
#[pyfunction]
#[pyo3(signature = (rate=1.0, theta=std::f64::consts::FRAC_PI_4, p=2.0, s=2.0))]
fn bergman_exp(rate: f64, theta: f64, p: f64, s: f64) -> PyResult<f64> {
    let spec = SectorSpec { theta, ..SectorSpec::with_exponents(p, s) };
    Ok(kernel_bergman_norm(&Kernel::Exp { rate }, &spec).map_err(err)?.norm)
}

/// Companion first component against the direct Volterra solver on the heat system.
#[pyfunction]
#[pyo3(signature = (n=32, steps=1024, n_mem=64, theta=0.3, rate=1.0))]
fn pide_cross_check(n: usize, steps: usize, n_mem: usize, theta: f64, rate: f64) -> PyResult<f64> {
    let bs = heat_boundary_system(n).map_err(err)?;
    let grid = TimeGrid::new(1.0, steps).map_err(err)?;
    let f = BochnerSignal::from_fn(grid, |t| cos_mode(&bs, 1) * C64::new(1.0 + t, 0.0));
    let spec = VolterraSpec { kernel: Kernel::Exp { rate }, f: FSpec::Fractional { theta, scale: 0.1 }, s_max: None, n_mem };
    Ok(companion_vs_direct(bs.a_pert(), &spec, &f).map_err(err)?.error)
}

/// Runs a CLI subcommand from a JSON config and returns the summary as JSON.
#[pyfunction]
fn run_json(config: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::parse(config, "json").map_err(err)?;
    let rep = Run::new(cfg).and_then(|r| r.execute()).map_err(err)?;
    rep.summary_json().map_err(err)
}

#[pymodule]
fn pymrlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<HeatSystem>()?;
    m.add_function(wrap_pyfunction!(maxreg, m)?)?;
    m.add_function(wrap_pyfunction!(admissibility_constant, m)?)?;
    m.add_function(wrap_pyfunction!(frac_power, m)?)?;
    m.add_function(wrap_pyfunction!(bergman_exp, m)?)?;
    m.add_function(wrap_pyfunction!(pide_cross_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_json, m)?)?;
    Ok(())
}
