//! Config-driven runner: every subcommand turns module checks into a [`Report`].

use crate::admissibility::*;
use crate::boundary::{control_vector, realize_perturbed, resolvent_identity_check, BoundaryConfig, BoundarySystem, IDENTITY_TOL};
use crate::error::{LabError, Result};
use crate::fractional::{frac_power_contour, frac_power_eig, j_operator, ContourSpec, ANGLE_TOL, CONTOUR_TOL, J_TOL};
use crate::heat::*;
use crate::linalg::{c, identity, matmul, matvec, rel_diff, resolvent, CMatrix, CVector, C64};
use crate::maxreg::*;
use crate::mild::*;
use crate::quadrature::log_grid;
use crate::report::{rows_csv, Check, Report};
use crate::semigroup::*;
use crate::volterra::*;
use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Identities,
    Admissibility,
    Maxreg,
    Heat,
    Pide,
    Volterra,
    Scan,
    Suite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Example {
    Heat,
    Scalar,
    Custom,
}

/// Everything a run can be told; file values are overridden by flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub example: Option<Example>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub r: Option<f64>,
    pub p: Option<f64>,
    #[serde(rename = "T")]
    pub t: Option<f64>,
    pub steps: Option<usize>,
    pub theta: Option<f64>,
    pub eps: Option<f64>,
    pub allow_theta: Option<bool>,
    /// Spectral parameters such as `"5"` or `"10+3i"`.
    pub lambda: Vec<String>,
    pub s_grid: Option<Vec<f64>>,
    pub n_mem: Option<usize>,
    pub kernel: Option<Kernel>,
    /// Boundary-system file for `example = "custom"`.
    pub custom: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tol_scale: Option<f64>,
}

#[derive(Debug, Parser)]
#[command(name = "mrlab", version, about = "Boundary-perturbed evolution equations: identities, admissibility and maximal regularity checks")]
pub struct Cli {
    /// What to run; may also be given as `command` in the config file.
    #[arg(value_enum)]
    pub command: Option<Command>,
    /// TOML or JSON file with the same keys as the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub example: Option<Example>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long = "T")]
    pub t: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Fractional exponent of F in the Volterra term.
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Accept theta outside (0, 1/p).
    #[arg(long)]
    pub allow_theta: bool,
    /// Repeatable; complex values as `10+3i`.
    #[arg(long)]
    pub lambda: Vec<String>,
    #[arg(long)]
    pub n_mem: Option<usize>,
    #[arg(long)]
    pub custom: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Multiplies every upper-bound tolerance.
    #[arg(long)]
    pub tol_scale: Option<f64>,
}

impl ExperimentConfig {
    pub fn parse(text: &str, ext: &str) -> Result<Self> {
        if ext.eq_ignore_ascii_case("json") {
            Ok(serde_json::from_str(text)?)
        } else {
            toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
        }
    }

    /// The config file (if any) with the flags laid over it.
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                Self::parse(&text, path.extension().and_then(|e| e.to_str()).unwrap_or(""))?
            }
            None => Self::default(),
        };
        macro_rules! over {
            ($($f:ident),*) => { $( if cli.$f.is_some() { cfg.$f = cli.$f.clone(); } )* };
        }
        over!(command, example, n, r, p, t, steps, theta, eps, n_mem, custom, seed, out, tol_scale);
        if cli.allow_theta {
            cfg.allow_theta = Some(true);
        }
        if !cli.lambda.is_empty() {
            cfg.lambda = cli.lambda.clone();
        }
        Ok(cfg)
    }

    pub fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

/// Validated run parameters; unset numbers fall back to per-subcommand defaults.
#[derive(Debug, Clone)]
pub struct Run {
    pub command: Command,
    pub example: Example,
    pub cfg: ExperimentConfig,
    pub lambdas: Vec<C64>,
    pub seed: u64,
    pub tol_scale: f64,
}

fn bad(msg: String) -> LabError {
    LabError::Config(msg)
}

impl Run {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let command = cfg.command.ok_or_else(|| bad("no subcommand given".into()))?;
        let example = cfg.example.unwrap_or(Example::Heat);
        let lambdas = cfg
            .lambda
            .iter()
            .map(|s| C64::from_str(s.trim()).map_err(|_| bad(format!("lambda: cannot parse '{s}' as a complex number"))))
            .collect::<Result<Vec<_>>>()?;
        let tol_scale = cfg.tol_scale.unwrap_or(1.0);
        if !(tol_scale > 0.0 && tol_scale.is_finite()) {
            return Err(bad(format!("tol_scale must be positive, got {tol_scale}")));
        }
        if let Some(n) = cfg.n {
            if n < 8 {
                return Err(bad(format!("N must be >= 8, got {n}")));
            }
        }
        if let Some(p) = cfg.p {
            if !(p > 1.0 && p.is_finite()) {
                return Err(bad(format!("p must lie in (1, inf), got {p}")));
            }
        }
        if let Some(t) = cfg.t {
            if !(t > 0.0 && t.is_finite()) {
                return Err(bad(format!("T must be positive, got {t}")));
            }
        }
        if cfg.steps == Some(0) || cfg.n_mem == Some(0) {
            return Err(bad("steps and n_mem must be positive".into()));
        }
        if let Some(k) = &cfg.kernel {
            k.validate()?;
        }
        match (example, command) {
            (Example::Custom, _) if cfg.custom.is_none() => return Err(bad("example 'custom' needs a boundary-system file (custom)".into())),
            (Example::Custom, Command::Identities | Command::Scan) | (Example::Heat, _) => {}
            (Example::Scalar, Command::Admissibility | Command::Maxreg) => {}
            (ex, cmd) => return Err(bad(format!("subcommand {cmd:?} does not support example {ex:?}"))),
        }
        let run = Self { command, example, seed: cfg.seed.unwrap_or(DEFAULT_SEED), lambdas, tol_scale, cfg };
        if example == Example::Heat {
            run.heat_config(run.t(1.0), run.steps(1), &mut Report::default())?;
        }
        Ok(run)
    }

    fn n(&self) -> usize {
        self.cfg.n.unwrap_or(64)
    }

    fn p(&self) -> f64 {
        self.cfg.p.unwrap_or(2.0)
    }

    fn t(&self, default: f64) -> f64 {
        self.cfg.t.unwrap_or(default)
    }

    fn steps(&self, default: usize) -> usize {
        self.cfg.steps.unwrap_or(default)
    }

    fn heat_config(&self, t: f64, steps: usize, report: &mut Report) -> Result<HeatConfig> {
        let d = HeatConfig::default();
        let hc = HeatConfig {
            n: self.n(),
            r: self.cfg.r.unwrap_or(d.r),
            p: self.p(),
            t,
            steps,
            theta_frac: self.cfg.theta.unwrap_or(d.theta_frac),
            eps: self.cfg.eps.unwrap_or(d.eps),
            allow_theta: self.cfg.allow_theta.unwrap_or(false),
            ..d
        };
        for w in hc.validate()? {
            if !report.warnings.contains(&w) {
                report.warnings.push(w);
            }
        }
        Ok(hc)
    }

    fn system(&self) -> Result<BoundarySystem> {
        match self.example {
            Example::Custom => BoundaryConfig::from_path(self.cfg.custom.as_ref().expect("checked in Run::new"))?.build(),
            _ => heat_boundary_system(self.n()),
        }
    }

    pub fn execute(&self) -> Result<Report> {
        let mut rep = match self.command {
            Command::Identities => identities(self)?,
            Command::Admissibility => admissibility(self)?,
            Command::Maxreg => maxreg(self)?,
            Command::Heat => heat(self)?,
            Command::Pide => pide(self)?,
            Command::Volterra => volterra(self)?,
            Command::Scan => scan(self)?,
            Command::Suite => {
                let mut all = Report::default();
                for f in [identities, scan, admissibility, maxreg, heat, pide, volterra] {
                    all.extend(f(self)?);
                }
                all
            }
        };
        rep.checks = rep.checks.into_iter().map(|c| c.scaled(self.tol_scale)).collect();
        Ok(rep)
    }
}

fn fmt_c(z: C64) -> String {
    format!("{}{:+}i", z.re, z.im)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

fn min_ratio(v: &[f64]) -> f64 {
    v.windows(2).map(|w| w[0] / w[1]).fold(f64::INFINITY, f64::min)
}

fn identities(run: &Run) -> Result<Report> {
    let mut rep = Report::default();
    let bs = run.system()?;
    let lams = if run.lambdas.is_empty() { vec![c(5.0, 0.0), c(1.0, 1.0), c(10.0, 3.0)] } else { run.lambdas.clone() };
    let mut rows = vec![];
    let mut realizations = vec![];
    for &lam in &lams {
        let r = resolvent_identity_check(&bs, lam, &[])?;
        let iv = r.thm32_iv.unwrap_or(f64::NAN);
        rep.push(Check::at_most(format!("resolvent_identity[{}]", fmt_c(lam)), iv, IDENTITY_TOL).with("obstruction", r.obstruction));
        rep.push(Check::at_most(format!("generator_equality[{}]", fmt_c(lam)), r.generator_eq, IDENTITY_TOL));
        rows.push(vec![lam.re, lam.im, iv, r.generator_eq]);
        realizations.push(bs.a() + matmul(&control_vector(&bs, lam)?.b, bs.k_state()));
    }
    if realizations.len() > 1 {
        let worst = realizations.iter().skip(1).map(|m| rel_diff(m, &realizations[0])).fold(0.0, f64::max);
        rep.push(Check::at_most("generator_realizations_agree", worst, IDENTITY_TOL));
    }
    rep.table("identities", |b| rows_csv(b, &["re", "im", "resolvent_identity", "generator_equality"], &rows))?;

    for n in [20.0, 50.0, 100.0, 500.0] {
        rep.push(Check::at_most(format!("yosida_split[n={n}]"), yosida_split_check(&bs, n)?, YOSIDA_SPLIT_TOL));
    }
    let gp = realize_perturbed(&bs)?;
    let l0 = gp.omega0()?.max(0.0) + 1.0;
    let r1 = resolvent(&gp.a, c(l0, 0.0))?;
    let x = matvec(&r1, &matvec(&r1, &cos_mode(&bs, 1)));
    let ax = matvec(&gp.a, &x);
    let errs: Vec<f64> = [1e2, 1e3, 1e4]
        .iter()
        .map(|&n| yosida_approx(&gp, n + l0).map(|y| (matvec(&y, &x) - &ax).norm()))
        .collect::<Result<_>>()?;
    rep.push(Check::at_least("yosida_rate_per_decade", min_ratio(&errs), YOSIDA_DECADE_FACTOR).with("errors", &errs));

    let t = run.t(0.5);
    let steps = run.steps(512);
    let x0 = smooth_initial(&bs)?;
    let reps: Vec<VcfReport> = (0..4)
        .map(|k| closed_loop_vcf_residual(bs.a(), bs.b_lifted(), bs.k_state(), bs.a_pert(), &x0, TimeGrid::new(t, steps << k)?))
        .collect::<Result<_>>()?;
    rep.push(Check::at_most("closed_loop_vcf", reps[0].residual, VCF_TOL).with("T", t).with("steps", steps));
    rep.push(Check::at_most("closed_loop_vcf_swapped", reps[0].residual_swapped, VCF_TOL));
    let order = |f: fn(&VcfReport) -> f64| min_ratio(&reps.iter().map(f).collect::<Vec<_>>());
    rep.push(Check::at_least("closed_loop_vcf_order", order(|r| r.residual), ORDER_RATIO));
    rep.push(Check::at_least("mv_vcf_agreement_order", order(|r| r.mv_agreement), ORDER_RATIO));
    let rows: Vec<Vec<f64>> = reps.iter().enumerate().map(|(k, r)| vec![(steps << k) as f64, r.residual, r.residual_swapped, r.mv_agreement]).collect();
    rep.table("vcf", |b| rows_csv(b, &["steps", "residual", "residual_swapped", "mv_agreement"], &rows))?;

    if run.example == Example::Heat {
        let a = bs.a() - identity(bs.n_state());
        let s = ContourSpec::default();
        let pw = frac_power_contour(&a, 0.6, &s)?;
        rep.push(Check::at_most("contour_power[beta=0.6]", rel_diff(&pw, &frac_power_eig(&a, 0.6)?), CONTOUR_TOL));
        let k0 = k0_row(&bs);
        let j = j_operator(&k0, &a, 0.6, &s)?;
        rep.push(Check::at_most("j_operator", rel_diff(&j, &matmul(&k0, &pw)), J_TOL));
        let other = frac_power_contour(&a, 0.6, &ContourSpec::with_psi(0.6 * PI))?;
        rep.push(Check::at_most("contour_angle_independence", rel_diff(&other, &pw), ANGLE_TOL));
    }
    Ok(rep)
}

fn scan(run: &Run) -> Result<Report> {
    let mut rep = Report::default();
    let bs = run.system()?;
    let g = realize_perturbed(&bs)?;
    let grid = run.cfg.s_grid.clone().unwrap_or_else(default_s_grid);
    let fine: Vec<f64> = grid.windows(2).flat_map(|w| [w[0], (w[0] * w[1]).sqrt()]).chain(grid.last().copied()).collect();
    let (a, b) = (weis_scan(&g, &grid)?, weis_scan(&g, &fine)?);
    rep.push(Check::at_most("weis_sup_stability", rel(a.sup, b.sup), SCAN_STABILITY_TOL).with("sup", a.sup));
    rep.push(Check::holds("weis_bounded", a.verdict == Verdict::Bounded));
    rep.table("weis", |buf| a.write_csv(buf))?;

    let omega = g.omega0()?.max(0.0) + 1.0;
    let exps = FracExponents::Conjugate { p: run.p() };
    let (fa, fb) = (
        fractional_scans(&g, bs.b_lifted(), bs.k_state(), omega, exps, &grid)?,
        fractional_scans(&g, bs.b_lifted(), bs.k_state(), omega, exps, &fine)?,
    );
    for (name, x, y) in [("control", &fa.control, &fb.control), ("observation", &fa.observation, &fb.observation)] {
        rep.push(Check::at_most(format!("fractional_{name}_stability"), rel(x.sup, y.sup), SCAN_STABILITY_TOL).with("sup", x.sup));
    }

    let base = default_s_grid();
    let freqs: Vec<f64> = (0..=6).map(|k| base[k * SCAN_PER_DECADE]).collect();
    let skew = Generator::new(damped_rotations(&freqs, 1e-2), "skew")?;
    let r = weis_scan(&skew, &base)?;
    rep.push(Check::holds("skew_control_unbounded_looking", r.verdict == Verdict::UnboundedLooking).with("sup", r.sup));
    Ok(rep)
}

fn admissibility(run: &Run) -> Result<Report> {
    let mut rep = Report::default();
    let one = CMatrix::from_element(1, 1, c(1.0, 0.0));
    let s = obs_admissibility(&one, &Generator::scalar(-1.0), 20.0, 2.0, 0)?;
    rep.push(Check::at_most("scalar_kappa", (s.kappa - 0.5f64.sqrt()).abs(), GRAMIAN_TOL).with("kappa", s.kappa));
    if run.example == Example::Scalar {
        return Ok(rep);
    }
    let t = run.t(1.0);
    let steps = run.steps(256);
    let hc = run.heat_config(t, steps, &mut rep)?;
    let bs = build_heat(&hc)?;
    let g = Generator::new(bs.a().clone(), "neumann")?;
    let k0 = k0_row(&bs);
    let alphas: Vec<f64> = (0..4).map(|k| t / f64::from(1 << k)).collect();
    let kappas: Vec<f64> = alphas.iter().map(|&a| obs_admissibility(&k0, &g, a, 2.0, 0).map(|r| r.kappa)).collect::<Result<_>>()?;
    let shrinking = kappas.windows(2).all(|w| w[1] <= w[0]);
    rep.push(Check::holds("kappa_decreases_as_alpha_shrinks", shrinking).with("kappa", &kappas));
    let rows: Vec<Vec<f64>> = alphas.iter().zip(&kappas).map(|(a, k)| vec![*a, *k]).collect();
    rep.table("admissibility", |b| rows_csv(b, &["alpha", "kappa"], &rows))?;

    let io = |n: usize| io_operator(bs.a(), bs.b_lifted(), &k0, TimeGrid::new(t, n)?, 2.0);
    let (f1, f2) = (io(steps)?, io(2 * steps)?);
    let (m1, m2) = (feedback_admissible(&f1)?, feedback_admissible(&f2)?);
    rep.push(Check::holds("feedback_invertible", m1.invertible && m2.invertible).with("margin", m1.margin));
    rep.push(Check::at_most("feedback_margin_stability", rel(m1.margin, m2.margin), MARGIN_STABILITY_TOL));
    let id = IoOperatorMatrix::from_blocks(f1.grid, identity(steps), 2.0, 1, 1)?;
    rep.push(Check::holds("identity_feedback_not_invertible", !feedback_admissible(&id)?.invertible));
    if steps % 16 == 0 {
        let reg = regularity_check(&f1, &CVector::from_element(1, c(1.0, 0.0)))?;
        rep.push(Check::holds("io_regular_looking", reg.regular_looking).with("extrapolated", reg.extrapolated));
    }

    let kernel = run.cfg.kernel.clone().unwrap_or(Kernel::Exp { rate: 1.0 });
    let u = upsilon_admissibility(&g, &k0, &kernel, &SectorSpec::with_exponents(2.0, 2.0), t)?;
    rep.push(
        Check::at_most("upsilon_bound_slack", (u.kappa_upsilon - u.bound).max(0.0) / u.bound.max(f64::MIN_POSITIVE), UPSILON_SLACK)
            .with("kappa_upsilon", u.kappa_upsilon)
            .with("bound", u.bound),
    );
    Ok(rep)
}

fn maxreg(run: &Run) -> Result<Report> {
    let mut rep = Report::default();
    let p = run.p();
    let a = CMatrix::from_element(1, 1, c(-1.0, 0.0));
    let coarse = maxreg_constant(&a, TimeGrid::new(1.0, 100)?, p)?;
    let fine = maxreg_constant(&a, TimeGrid::new(1.0, 1000)?, p)?;
    rep.push(Check::at_most("scalar_c_est_vs_finer_grid", rel(coarse.c_est, fine.c_est), SCALAR_ORACLE_TOL).with("c_est", fine.c_est));
    if run.example == Example::Scalar {
        return Ok(rep);
    }
    let t = run.t(1.0);
    let steps = run.steps(128);
    let hc = run.heat_config(t, steps, &mut rep)?;
    let grid = TimeGrid::new(t, steps)?;
    let n = hc.n;
    let c_half = maxreg_constant(heat_boundary_system(n / 2)?.a_pert(), grid, p)?;
    let c_full = maxreg_constant(heat_boundary_system(n)?.a_pert(), grid, p)?;
    rep.push(
        Check::at_most("heat_c_est_space_refinement", rel(c_half.c_est, c_full.c_est), STABILITY_TOL)
            .with("c_est", [c_half.c_est, c_full.c_est])
            .with("converged", c_full.converged),
    );

    let small = heat_boundary_system(16)?;
    let pm = crate::fractional::pos_power_eig(small.a(), 1.0 / 3.0)? * c(hc.eps, 0.0);
    let (a0, acl) = (small.a().clone(), small.a_pert().clone());
    let (ap, aclp) = (&a0 + &pm, &acl + &pm);
    let table = perturbation_comparison(&[("A", &a0), ("A^P", &ap), ("calA", &acl), ("calA+P", &aclp)], TimeGrid::new(t, 32)?, p)?;
    rep.push(Check::holds("perturbation_preserved", table.preserved));
    rep.table("comparison", |b| table.write_csv(b))?;

    let ds_steps = run.steps(512);
    let avg = heat_with_averaging(n)?;
    let dgrid = TimeGrid::new(t, ds_steps)?;
    let (mu, contraction) = choose_mu(avg.a(), avg.b_lifted(), avg.k_state(), dgrid, &log_grid(1e-1, 1e6, 4))?;
    let f = sample_right(dgrid, |s| cos_mode(&avg, 1) * c(1.0 + s, 0.0) + cos_mode(&avg, 0) * c(s.sin(), 0.0));
    let ds = ds_fixed_point_check(avg.a(), avg.a_pert(), avg.b_lifted(), avg.k_state(), &f, dgrid, mu)?;
    rep.push(Check::at_most("ds_contraction", contraction, CONTRACTION).with("mu", mu));
    rep.push(
        Check::at_most("ds_fixed_point", ds.residual, DS_TOL)
            .with("steps", ds_steps)
            .with("printed_form_residuals", [ds.residual_printed_dmu, ds.residual_printed_broadcast]),
    );
    Ok(rep)
}

fn heat(run: &Run) -> Result<Report> {
    let mut rep = Report::default();
    let t = run.t(1.0);
    let steps = run.steps(128);
    let hc = run.heat_config(t, steps, &mut rep)?;
    rep.push(Check::at_most("beta_plus_gamma", hc.beta() + hc.gamma, 1.0).with("gamma", hc.gamma));

    let fav = heat_boundary_system(hc.n.max(256))?;
    let mut rows = vec![];
    let mut rs = vec![1.5, 2.0];
    if !rs.contains(&hc.r) {
        rs.push(hc.r);
    }
    for r in rs {
        let f = favard_exponent_scan(&fav, &favard_grid(), r)?;
        rep.push(Check::at_most(format!("favard_slope[r={r}]"), (f.slope - f.expected).abs(), FAVARD_SLOPE_TOL).with("slope", f.slope));
        rows.extend(f.lambdas.iter().zip(&f.norms).map(|(l, v)| vec![r, *l, *v]));
    }
    rep.table("favard", |b| rows_csv(b, &["r", "lambda", "norm"], &rows))?;
    let d = crate::boundary::dirichlet(&fav, c(100.0, 0.0))?;
    let col: Vec<C64> = d.d.column(0).iter().copied().collect();
    let exact = dirichlet_exact_norm(100.0, 2.0);
    rep.push(Check::at_most("dirichlet_oracle[lambda=100]", rel(fav.lr_norm(&col, 2.0), exact), DIRICHLET_ORACLE_TOL));

    let eps = log_grid(1e-2, 1e2, 20);
    for (name, f) in [("cos", TestFunction::Cos(1)), ("constant", TestFunction::Poly(vec![1.0])), ("square", TestFunction::Poly(vec![0.0, 0.0, 1.0]))] {
        let r = interpolation_inequality_check(&f, &eps, hc.r);
        rep.push(Check::holds(format!("interpolation_inequality[{name}]"), r.holds).with("min_slack", r.min_slack));
    }

    let bs = build_heat(&hc)?;
    let adj = adjoint_b_check(&bs, c(5.0, 0.0), run.seed)?;
    rep.push(Check::at_least("adjoint_b_concentration", adj.concentration, ADJOINT_CONCENTRATION));
    rep.push(Check::at_most("adjoint_b_pairing", adj.pairing_residual, EXACT_TOL));

    let v = cos_mode(&bs, 1) + cos_mode(&bs, 2) * c(0.3, 0.0);
    let g = -matvec(bs.a_pert(), &v);
    let sgrid = TimeGrid::new(5.0, 128)?;
    let steady = evolve_matrix(bs.a_pert(), &CVector::zeros(bs.n_state()), &BochnerSignal::constant(sgrid, &g))?;
    let w = steady.samples.last().expect("grid has nodes");
    rep.push(Check::at_most("steady_state_residual", (matvec(bs.a_pert(), w) + &g).norm() / g.norm(), STEADY_TOL));

    let grid = TimeGrid::new(t, steps)?;
    let est = |hc: &HeatConfig| -> Result<PdeRun> {
        let b = heat_boundary_system(hc.n)?;
        run_pde(hc, &BochnerSignal::from_fn(grid, |s| cos_mode(&b, 1) * c(s, 0.0)))
    };
    let half = est(&HeatConfig { n: hc.n / 2, ..hc.clone() })?;
    let full = est(&hc)?;
    rep.push(
        Check::at_most("pde_c_est_space_refinement", rel(half.report.c_est, full.report.c_est), STABILITY_TOL)
            .with("c_est", [half.report.c_est, full.report.c_est])
            .with("terms", &full.terms),
    );
    rep.push(Check::holds("pde_witness_within_c_est", full.terms.ratio() <= full.report.c_est));
    rep.table("field", |b| write_field_csv(&bs, &full.z, b))?;
    Ok(rep)
}

fn pide_forcing(bs: &BoundarySystem, grid: TimeGrid) -> BochnerSignal {
    BochnerSignal::from_fn(grid, |t| cos_mode(bs, 1) * c(1.0 + t, 0.0) + cos_mode(bs, 0) * c(0.5, 0.0))
}

fn pide(run: &Run) -> Result<Report> {
    let mut rep = Report::default();
    let t = run.t(1.0);
    let steps = run.steps(1024);
    let hc = run.heat_config(t, steps, &mut rep)?;
    let bs = build_heat(&hc)?;
    let grid = TimeGrid::new(t, steps)?;
    let f = pide_forcing(&bs, grid);
    let cfg = PideConfig {
        kernel: run.cfg.kernel.clone().unwrap_or(Kernel::Exp { rate: 1.0 }),
        n_mem: run.cfg.n_mem.unwrap_or(DEFAULT_N_MEM),
        ..PideConfig::default()
    };
    let r = run_pide(&hc, &cfg, &f)?;
    rep.push(Check::at_most("pide_cross_check", r.cross.error, PIDE_TOL).with("steps", steps).with("n_mem", cfg.n_mem));
    rep.push(Check::at_most("pide_f_paths", r.f_paths_gap, F_PATHS_TOL));
    rep.push(
        Check::holds("pide_companion_c_est_finite", r.report.c_est.is_finite())
            .with("space", r.space)
            .with("c_est", r.report.c_est)
            .with("converged", r.report.converged),
    );
    rep.table("pide_field", |b| write_field_csv(&bs, &r.rho, b))?;

    let short = TimeGrid::new(t, 64)?;
    let fs = pide_forcing(&bs, short);
    let zero = VolterraSpec { kernel: Kernel::Zero, f: FSpec::Fractional { theta: hc.theta_frac, scale: 1.0 }, s_max: None, n_mem: 8 };
    let cross = companion_vs_direct(bs.a_pert(), &zero, &fs)?;
    let plain = evolve_matrix(bs.a_pert(), &CVector::zeros(bs.n_state()), &fs)?;
    let gap = max_rel_diff(&plain.samples, &cross.direct.samples).max(cross.error);
    rep.push(Check::at_most("pide_zero_kernel_is_pde", gap, EXACT_TOL));
    Ok(rep)
}

fn volterra(run: &Run) -> Result<Report> {
    let mut rep = Report::default();
    let spec = SectorSpec::with_exponents(run.p(), 2.0);
    let q = spec.q();
    let b = kernel_bergman_norm(&Kernel::Exp { rate: 1.0 }, &spec)?;
    let closed = (2.0 * spec.theta.tan() / (q * q)).powf(1.0 / q);
    rep.push(Check::at_most("bergman_exp_closed_form", rel(b.norm, closed), BERGMAN_TOL).with("norm", b.norm));

    type Family = (&'static str, fn(C64) -> f64);
    let family: [Family; 3] = [
        ("exp(-z)", |z| (-z).exp().norm()),
        ("exp(-2z)", |z| (-2.0 * z).exp().norm()),
        ("(1+z)^-2", |z| (1.0 / ((1.0 + z) * (1.0 + z))).norm()),
    ];
    let mut rows = vec![];
    let refined = spec.refined();
    for (i, (name, f)) in family.iter().enumerate() {
        let (a, r) = (bergman_trace_check(f, 1.0, &spec)?, bergman_trace_check(f, 1.0, &refined)?);
        rep.push(Check::at_most(format!("trace_ratio_stability[{name}]"), rel(a.ratio, r.ratio), TRACE_STABILITY_TOL).with("ratio", a.ratio));
        rows.push(vec![i as f64, a.lhs, a.rhs_norm, a.ratio, r.ratio]);
    }
    rep.table("trace", |b| rows_csv(b, &["function", "lhs", "rhs_norm", "ratio", "ratio_refined"], &rows))?;

    let t = run.t(1.0);
    let hc = run.heat_config(t, 64, &mut rep)?;
    let n = run.cfg.n.unwrap_or(32);
    let bs = heat_boundary_system(n)?;
    let kernel = run.cfg.kernel.clone().unwrap_or(Kernel::Exp { rate: 1.0 });
    let vs = |k: Kernel, n_mem: usize| VolterraSpec { kernel: k, f: FSpec::Fractional { theta: hc.theta_frac, scale: 0.1 }, s_max: None, n_mem };
    let zero = companion_vs_direct(bs.a(), &vs(Kernel::Zero, 16), &pide_forcing(&bs, TimeGrid::new(t, 64)?))?;
    rep.push(Check::at_most("companion_zero_kernel_collapse", zero.error, EXACT_TOL));

    let base = run.cfg.steps.unwrap_or(512);
    let mem = run.cfg.n_mem.unwrap_or(32);
    let errs: Vec<f64> = (0..3)
        .map(|k| companion_vs_direct(bs.a(), &vs(kernel.clone(), mem << k), &pide_forcing(&bs, TimeGrid::new(t, base << k)?)).map(|r| r.error))
        .collect::<Result<_>>()?;
    rep.push(Check::at_most("companion_cross_check", errs[1], PIDE_TOL).with("steps", base * 2));
    rep.push(Check::at_least("companion_order", min_ratio(&errs), ORDER_RATIO).with("errors", &errs));

    let g = Generator::new(bs.a().clone(), "neumann")?;
    let u = upsilon_admissibility(&g, &k0_row(&bs), &kernel, &SectorSpec::with_exponents(2.0, 2.0), t)?;
    rep.push(
        Check::at_most("upsilon_bound_slack", (u.kappa_upsilon - u.bound).max(0.0) / u.bound.max(f64::MIN_POSITIVE), UPSILON_SLACK)
            .with("gap", u.slack),
    );
    Ok(rep)
}
