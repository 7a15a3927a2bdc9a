//! Boundary triples `(A_m, G, K)` realized on a grid with ghost nodes.
//!
//! Domains are imposed by eliminating ghost unknowns with exact algebraic
//! constraints, so resolvent identities hold to rounding error.

use crate::error::{LabError, Result};
use crate::linalg::{
    check_finite, identity, matmul, resolvent, shifted, sigma_max, sigma_min, singular_values, solve, CMatrix, C64,
};
use crate::semigroup::Generator;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Relative tolerance for the Dirichlet defining constraints.
pub const DIRICHLET_TOL: f64 = 1e-10;
/// Relative tolerance for `R(mu, A) B = D_mu`.
pub const CONTROL_TOL: f64 = 1e-9;
/// Smallest admissible `sigma_min(lambda - A) / |A|` for Dirichlet solves.
pub const SPECTRUM_PROXIMITY: f64 = 1e-8;
/// Relative residual for the resolvent and generator identities.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Raw description of a boundary triple on an extended grid.
#[derive(Debug, Clone)]
pub struct BoundaryParts {
    pub n_ext: usize,
    /// Extended indices of the state nodes, in state order.
    pub state: Vec<usize>,
    /// `A_m` rows at the state nodes, `n_state x n_ext`.
    pub am: CMatrix,
    /// Homogeneous constraints that cut out `Z`, `z x n_ext`.
    pub z: CMatrix,
    pub g: CMatrix,
    pub k: CMatrix,
    /// Quadrature weights on the state nodes for spatial L^r norms.
    pub weights: Vec<f64>,
    /// Coordinates of the state nodes.
    pub nodes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BoundarySystem {
    parts: BoundaryParts,
    ghosts: Vec<usize>,
    e0: CMatrix,
    lift: CMatrix,
    e_pert: CMatrix,
    a: CMatrix,
    a_pert: CMatrix,
    b: CMatrix,
    k_state: CMatrix,
    a_norm: f64,
}

/// Ghost extension for constraints `c x_ext = [0; u]`: returns `(E, L)` with
/// `x_ext = E x + L u`.
fn eliminate(c: &CMatrix, state: &[usize], ghosts: &[usize], m: usize) -> Option<(CMatrix, CMatrix)> {
    let ng = ghosts.len();
    let ns = state.len();
    let n_ext = ns + ng;
    let cs = CMatrix::from_fn(ng, ns, |i, j| c[(i, state[j])]);
    let cg = CMatrix::from_fn(ng, ng, |i, j| c[(i, ghosts[j])]);
    let sv = singular_values(&cg);
    if sv.is_empty() || sv[sv.len() - 1] <= 1e-13 * sv[0] {
        return None;
    }
    let lu = cg.lu();
    let gs = lu.solve(&cs)?;
    let mut rhs = CMatrix::zeros(ng, m);
    for j in 0..m {
        rhs[(ng - m + j, j)] = C64::new(1.0, 0.0);
    }
    let gl = lu.solve(&rhs)?;
    let mut e = CMatrix::zeros(n_ext, ns);
    let mut l = CMatrix::zeros(n_ext, m);
    for (j, &s) in state.iter().enumerate() {
        e[(s, j)] = C64::new(1.0, 0.0);
    }
    for (i, &gi) in ghosts.iter().enumerate() {
        for j in 0..ns {
            e[(gi, j)] = -gs[(i, j)];
        }
        for j in 0..m {
            l[(gi, j)] = gl[(i, j)];
        }
    }
    Some((e, l))
}

fn stack(top: &CMatrix, bottom: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

impl BoundarySystem {
    pub fn new(parts: BoundaryParts) -> Result<Self> {
        let n_ext = parts.n_ext;
        let ns = parts.state.len();
        let m = parts.g.nrows();
        for (name, mat) in [("A_m", &parts.am), ("Z constraints", &parts.z), ("G", &parts.g), ("K", &parts.k)] {
            check_finite(mat, "boundary system")?;
            if mat.ncols() != n_ext {
                return Err(LabError::Dimension(format!("{name} must have {n_ext} columns")));
            }
        }
        if parts.am.nrows() != ns || parts.k.nrows() != m || parts.weights.len() != ns || parts.nodes.len() != ns {
            return Err(LabError::Dimension("state rows, K rows, weights and nodes must match".into()));
        }
        if parts.z.nrows() + m + ns != n_ext {
            return Err(LabError::Dimension(format!(
                "need one constraint per ghost node: {} state, {} constraints, {} extended",
                ns,
                parts.z.nrows() + m,
                n_ext
            )));
        }
        let mut is_state = vec![false; n_ext];
        for &s in &parts.state {
            if s >= n_ext || is_state[s] {
                return Err(LabError::Config("state indices must be distinct and in range".into()));
            }
            is_state[s] = true;
        }
        let sv = singular_values(&parts.g);
        if m == 0 || sv.len() < m || sv[m - 1] <= 1e-12 * sv[0] {
            return Err(LabError::Config("boundary functional G must have full row rank".into()));
        }
        let ghosts: Vec<usize> = (0..n_ext).filter(|i| !is_state[*i]).collect();
        let free = stack(&parts.z, &parts.g);
        let (e0, lift) = eliminate(&free, &parts.state, &ghosts, m)
            .ok_or_else(|| LabError::Config("boundary functional degenerate: ghost elimination is singular".into()))?;
        let coupled = stack(&parts.z, &(&parts.g - &parts.k));
        let (e_pert, _) = eliminate(&coupled, &parts.state, &ghosts, m)
            .ok_or_else(|| LabError::Config("ill-posed boundary coupling: G - K elimination is singular".into()))?;
        let a = matmul(&parts.am, &e0);
        let a_pert = matmul(&parts.am, &e_pert);
        let b = matmul(&parts.am, &lift);
        let kl = identity(m) - matmul(&parts.k, &lift);
        let k_state = solve(&kl, &matmul(&parts.k, &e0))?;
        let a_norm = sigma_max(&a);
        Ok(Self { parts, ghosts, e0, lift, e_pert, a, a_pert, b, k_state, a_norm })
    }

    pub fn parts(&self) -> &BoundaryParts {
        &self.parts
    }

    pub fn n_state(&self) -> usize {
        self.parts.state.len()
    }

    /// Number of boundary inputs `m = dim U`.
    pub fn m(&self) -> usize {
        self.parts.g.nrows()
    }

    pub fn weights(&self) -> &[f64] {
        &self.parts.weights
    }

    pub fn nodes(&self) -> &[f64] {
        &self.parts.nodes
    }

    pub fn ghosts(&self) -> &[usize] {
        &self.ghosts
    }

    /// Ghost extension of a state vector under `Gx = 0`.
    pub fn extension(&self) -> &CMatrix {
        &self.e0
    }

    /// Ghost extension under `Gx = Kx`.
    pub fn perturbed_extension(&self) -> &CMatrix {
        &self.e_pert
    }

    /// Ghost values realizing boundary data `u` with zero state.
    pub fn lifting(&self) -> &CMatrix {
        &self.lift
    }

    /// `K` expressed on the state grid: `𝒜 = A + B K_state`.
    pub fn k_state(&self) -> &CMatrix {
        &self.k_state
    }

    /// `K` on the free domain, `K E_0`.
    pub fn k_free(&self) -> CMatrix {
        matmul(&self.parts.k, &self.e0)
    }

    /// The free generator `A = A_m` on `ker G`.
    pub fn a(&self) -> &CMatrix {
        &self.a
    }

    /// The perturbed generator `𝒜 = A_m` on `{Gx = Kx}`.
    pub fn a_pert(&self) -> &CMatrix {
        &self.a_pert
    }

    /// `A_m` applied to the lifting; this is the λ-independent control vector.
    pub fn b_lifted(&self) -> &CMatrix {
        &self.b
    }

    /// Same triple with `K` replaced.
    pub fn with_k(&self, k: CMatrix) -> Result<Self> {
        let mut parts = self.parts.clone();
        parts.k = k;
        Self::new(parts)
    }

    /// Same triple with `K = 0`.
    pub fn unperturbed(&self) -> Result<Self> {
        self.with_k(CMatrix::zeros(self.m(), self.parts.n_ext))
    }

    fn check_resolvent_set(&self, lambda: C64) -> Result<()> {
        let s = sigma_min(&shifted(&self.a, lambda));
        if s < SPECTRUM_PROXIMITY * self.a_norm.max(f64::MIN_POSITIVE) {
            return Err(LabError::InSpectrum { lambda, sigma_min: s });
        }
        Ok(())
    }

    /// Spatial L^r norm of a state vector by the stored quadrature.
    pub fn lr_norm(&self, x: &[C64], r: f64) -> f64 {
        x.iter()
            .zip(&self.parts.weights)
            .map(|(v, w)| w * v.norm().powf(r))
            .sum::<f64>()
            .powf(1.0 / r)
    }

    pub fn write_matrix_csv(m: &CMatrix, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["row", "col", "re", "im"])?;
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let z = m[(i, j)];
                if z.re != 0.0 || z.im != 0.0 {
                    w.write_record([i.to_string(), j.to_string(), z.re.to_string(), z.im.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn realize_a(bs: &BoundarySystem) -> Result<Generator> {
    Generator::new(bs.a.clone(), "A")
}

pub fn realize_perturbed(bs: &BoundarySystem) -> Result<Generator> {
    Generator::new(bs.a_pert.clone(), "perturbed")
}

#[derive(Debug, Clone)]
pub struct DirichletOp {
    pub lambda: C64,
    /// `n_state x m`.
    pub d: CMatrix,
    /// Full extended solutions, `n_ext x m`.
    pub d_ext: CMatrix,
    /// Relative residual of `(lambda - A_m) d = 0` on the state rows.
    pub interior_residual: f64,
    /// Residual of `G d = I`.
    pub boundary_residual: f64,
}

/// `𝔻_λ`: the solution of `(λ - A_m) d = 0, Z d = 0, G d = u` for unit `u`.
pub fn dirichlet(bs: &BoundarySystem, lambda: C64) -> Result<DirichletOp> {
    bs.check_resolvent_set(lambda)?;
    let p = &bs.parts;
    let (ns, m, n_ext) = (bs.n_state(), bs.m(), p.n_ext);
    let mut sys = CMatrix::zeros(n_ext, n_ext);
    for (i, &s) in p.state.iter().enumerate() {
        for j in 0..n_ext {
            sys[(i, j)] = -p.am[(i, j)];
        }
        sys[(i, s)] += lambda;
    }
    let nz = p.z.nrows();
    sys.rows_mut(ns, nz).copy_from(&p.z);
    sys.rows_mut(ns + nz, m).copy_from(&p.g);
    let mut rhs = CMatrix::zeros(n_ext, m);
    for j in 0..m {
        rhs[(ns + nz + j, j)] = C64::new(1.0, 0.0);
    }
    let d_ext =
        solve(&sys, &rhs).map_err(|_| LabError::Singular(format!("Dirichlet solve singular at lambda = {lambda}")))?;
    let d = CMatrix::from_fn(ns, m, |i, j| d_ext[(p.state[i], j)]);
    let interior = matmul(&sys.rows(0, ns).into_owned(), &d_ext);
    let scale = (sigma_max(&p.am) + lambda.norm()) * d_ext.norm();
    let interior_residual = interior.norm() / scale.max(f64::MIN_POSITIVE);
    let boundary_residual = (matmul(&p.g, &d_ext) - identity(m)).norm() / (m as f64).sqrt();
    Ok(DirichletOp { lambda, d, d_ext, interior_residual, boundary_residual })
}

#[derive(Debug, Clone)]
pub struct ControlVector {
    pub lambda_build: C64,
    /// `n_state x m`.
    pub b: CMatrix,
    /// Worst relative gap of `R(mu, A) B` against `𝔻_mu` over the probe values.
    pub invariant_residual: f64,
    pub probes: Vec<C64>,
}

/// `B := (λ - A) 𝔻_λ`, checked against `𝔻_μ` at two further points.
pub fn control_vector(bs: &BoundarySystem, lambda: C64) -> Result<ControlVector> {
    let d = dirichlet(bs, lambda)?;
    let b = matmul(&shifted(&bs.a, lambda), &d.d);
    let base = bs.a_norm.max(1.0);
    let probes = vec![
        C64::new(lambda.norm() + 0.37 * base + 1.0, 0.0),
        C64::new(lambda.norm() + 1.0, 2.0 + 0.1 * base),
    ];
    let mut worst: f64 = 0.0;
    for &mu in &probes {
        let dm = dirichlet(bs, mu)?;
        let rb = matmul(&resolvent(&bs.a, mu)?, &b);
        worst = worst.max((rb - &dm.d).norm() / dm.d.norm().max(f64::MIN_POSITIVE));
    }
    Ok(ControlVector { lambda_build: lambda, b, invariant_residual: worst, probes })
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolventIdentityResiduals {
    pub lambda: C64,
    /// `R(λ,𝒜)` against `(I - 𝔻_λ K)^{-1} R(λ,A)`; absent under a feedback obstruction.
    pub thm32_iv: Option<f64>,
    /// Correlation of `log σ_min(λ-𝒜)` with `log σ_min(I - K𝔻_λ)` over the detector grid;
    /// absent when the second detector is constant (e.g. `K = 0`).
    pub thm32_iii: Option<f64>,
    /// `𝒜` against `A + B_λ K_state`.
    pub generator_eq: f64,
    /// `I - 𝔻_λ K` is singular although λ lies in the resolvent set of `A`.
    pub obstruction: bool,
    pub detector_points: usize,
}

pub fn resolvent_identity_check(
    bs: &BoundarySystem,
    lambda: C64,
    detector_grid: &[C64],
) -> Result<ResolventIdentityResiduals> {
    let d = dirichlet(bs, lambda)?;
    let ks = &bs.k_state;
    let m = bs.m();
    let loop_gain = identity(m) - matmul(ks, &d.d);
    let obstruction = sigma_min(&loop_gain) <= 1e-12 * sigma_max(&loop_gain).max(1.0);
    let thm32_iv = if obstruction {
        None
    } else {
        let ra = resolvent(&bs.a, lambda)?;
        let fb = identity(bs.n_state()) - matmul(&d.d, ks);
        let rhs = solve(&fb, &ra)?;
        let lhs = resolvent(&bs.a_pert, lambda)?;
        Some((&lhs - &rhs).norm() / lhs.norm())
    };
    let cv = control_vector(bs, lambda)?;
    let closed = &bs.a + matmul(&cv.b, ks);
    let generator_eq = (&bs.a_pert - closed).norm() / bs.a_pert.norm().max(f64::MIN_POSITIVE);

    let mut x = vec![];
    let mut y = vec![];
    for &mu in detector_grid {
        let Ok(dm) = dirichlet(bs, mu) else { continue };
        let s1 = sigma_min(&shifted(&bs.a_pert, mu));
        let s2 = sigma_min(&(identity(m) - matmul(ks, &dm.d)));
        if s1 > 0.0 && s2 > 0.0 {
            x.push(s1.ln());
            y.push(s2.ln());
        }
    }
    let thm32_iii = pearson(&x, &y);
    Ok(ResolventIdentityResiduals { lambda, thm32_iv, thm32_iii, generator_eq, obstruction, detector_points: x.len() })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 3 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx <= 1e-20 * n || syy <= 1e-20 * n {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Explicit matrices for a user-defined triple; real entries, row lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomBoundary {
    pub n_ext: usize,
    pub state: Vec<usize>,
    pub am: Vec<Vec<f64>>,
    #[serde(default)]
    pub z: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    #[serde(default)]
    pub k: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub nodes: Option<Vec<f64>>,
}

fn rows_to_matrix(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<CMatrix> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(LabError::Dimension(format!("every row of {what} needs {cols} entries")));
    }
    Ok(CMatrix::from_fn(rows.len(), cols, |i, j| C64::new(rows[i][j], 0.0)))
}

impl CustomBoundary {
    pub fn build(&self) -> Result<BoundarySystem> {
        let ns = self.state.len();
        let g = rows_to_matrix(&self.g, self.n_ext, "g")?;
        let k = match &self.k {
            Some(k) => rows_to_matrix(k, self.n_ext, "k")?,
            None => CMatrix::zeros(g.nrows(), self.n_ext),
        };
        BoundarySystem::new(BoundaryParts {
            n_ext: self.n_ext,
            state: self.state.clone(),
            am: rows_to_matrix(&self.am, self.n_ext, "am")?,
            z: if self.z.is_empty() { CMatrix::zeros(0, self.n_ext) } else { rows_to_matrix(&self.z, self.n_ext, "z")? },
            g,
            k,
            weights: self.weights.clone().unwrap_or_else(|| vec![1.0 / ns as f64; ns]),
            nodes: self.nodes.clone().unwrap_or_else(|| (0..ns).map(|i| i as f64).collect()),
        })
    }
}

/// `{example: "heat" | "custom", N, r, stencil_order}` as JSON or TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryConfig {
    pub example: String,
    #[serde(rename = "N", alias = "n", default = "default_n")]
    pub n: usize,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_order")]
    pub stencil_order: usize,
    #[serde(default)]
    pub custom: Option<CustomBoundary>,
}

fn default_n() -> usize {
    64
}
fn default_r() -> f64 {
    2.0
}
fn default_order() -> usize {
    2
}

impl BoundaryConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.extension().and_then(|e| e.to_str()).unwrap_or(""))
    }

    pub fn parse(text: &str, ext: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(LabError::Config("empty configuration".into()));
        }
        if ext.eq_ignore_ascii_case("toml") {
            toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
        } else {
            serde_json::from_str(text).map_err(|e| LabError::Config(e.to_string()))
        }
    }

    pub fn build(&self) -> Result<BoundarySystem> {
        if self.stencil_order != 2 {
            return Err(LabError::Config(format!("stencil order {} unsupported; only 2", self.stencil_order)));
        }
        match self.example.as_str() {
            "heat" => crate::heat::heat_boundary_system(self.n),
            "custom" => self
                .custom
                .as_ref()
                .ok_or_else(|| LabError::Config("custom example needs a `custom` table".into()))?
                .build(),
            other => Err(LabError::Config(format!("unknown example `{other}`"))),
        }
    }
}

/// Writes `A`, `𝒜`, `B` and `K_state` as sparse CSV triples into `dir`.
pub fn export_csv(bs: &BoundarySystem, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    BoundarySystem::write_matrix_csv(bs.a(), &dir.join("A.csv"))?;
    BoundarySystem::write_matrix_csv(bs.a_pert(), &dir.join("A_pert.csv"))?;
    BoundarySystem::write_matrix_csv(bs.b_lifted(), &dir.join("B.csv"))?;
    BoundarySystem::write_matrix_csv(bs.k_state(), &dir.join("K_state.csv"))?;
    let mut f = std::fs::File::create(dir.join("nodes.csv"))?;
    writeln!(f, "node,s,weight")?;
    for (i, (s, w)) in bs.nodes().iter().zip(bs.weights()).enumerate() {
        writeln!(f, "{i},{s},{w}")?;
    }
    Ok(())
}
