//! Manufactured solutions and the convergence-study driver.
//!
//! A case carries closures for the exact scalar, its gradient, the volume
//! data and the boundary data, all kept consistent by construction and
//! double-checked numerically by `self_check` before any study runs: the
//! scaled flux must equal i grad u / kappa at sample points, and a finite
//! difference Laplacian must reproduce the volume data from the scalar.

use crate::analysis;
use crate::global::{solve, GlobalOpts};
use crate::mesh::generate_structured;
use crate::refelem::build_reference_element;
use crate::{c64, C64, Error, ProblemData, Result};
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;

type ScalarFn = Box<dyn Fn([f64; 2]) -> C64 + Send + Sync>;
type VectorFn = Box<dyn Fn([f64; 2]) -> [C64; 2] + Send + Sync>;

/// An exact solution of the scaled Helmholtz system on the unit square,
/// with the matching volume and boundary data.
pub struct ManufacturedCase {
    pub name: String,
    pub kappa: f64,
    u: ScalarFn,
    grad_u: VectorFn,
    f_tilde: ScalarFn,
}

impl ProblemData for ManufacturedCase {
    fn f_tilde(&self, p: [f64; 2]) -> C64 {
        (self.f_tilde)(p)
    }

    fn g(&self, p: [f64; 2]) -> C64 {
        (self.u)(p)
    }
}

impl ManufacturedCase {
    pub fn u(&self, p: [f64; 2]) -> C64 {
        (self.u)(p)
    }

    pub fn grad_u(&self, p: [f64; 2]) -> [C64; 2] {
        (self.grad_u)(p)
    }

    /// The scaled flux i grad u / kappa.
    pub fn sigma(&self, p: [f64; 2]) -> [C64; 2] {
        let g = (self.grad_u)(p);
        let s = c64(0.0, 1.0 / self.kappa);
        [g[0] * s, g[1] * s]
    }

    /// Numerical cross-check of the case's internal consistency. The flux
    /// identity is checked exactly; the volume data is checked against a
    /// five-point finite difference Laplacian of the scalar, with the step
    /// shrunk as kappa grows so the truncation error stays in budget.
    pub fn self_check(&self) -> Result<()> {
        let kappa = self.kappa;
        let step = 1e-3 / (kappa / 5.0).max(1.0);
        let tol = 1e-5 * (1.0 + kappa * kappa);
        for i in 1..=4 {
            for j in 1..=4 {
                let p = [i as f64 / 5.0, j as f64 / 5.0];
                let g = self.grad_u(p);
                let s = self.sigma(p);
                let want = [
                    g[0] * c64(0.0, 1.0 / kappa),
                    g[1] * c64(0.0, 1.0 / kappa),
                ];
                let flux_err = (s[0] - want[0]).norm() + (s[1] - want[1]).norm();
                if flux_err > 1e-12 * (1.0 + s[0].norm() + s[1].norm()) {
                    return Err(Error::Verification(format!(
                        "case {}: flux inconsistent with gradient at ({}, {}): {flux_err:.3e}",
                        self.name, p[0], p[1]
                    )));
                }

                let u0 = self.u(p);
                let lap = (self.u([p[0] + step, p[1]])
                    + self.u([p[0] - step, p[1]])
                    + self.u([p[0], p[1] + step])
                    + self.u([p[0], p[1] - step])
                    - u0 * 4.0)
                    / (step * step);
                let resid = (lap + u0 * (kappa * kappa) - (self.f_tilde)(p)).norm();
                let scale = (1.0 + u0.norm()) * tol;
                if resid > scale {
                    return Err(Error::Verification(format!(
                        "case {}: volume data disagrees with the PDE at ({}, {}): \
                         residual {resid:.3e} exceeds {scale:.3e}",
                        self.name, p[0], p[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// u = exp(i kappa (x cos theta + y sin theta)). The volume data vanishes
/// identically; all forcing enters through the boundary.
pub fn plane_wave(kappa: f64, theta: f64) -> Result<ManufacturedCase> {
    if kappa <= 0.0 {
        return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
    }
    let (s, c) = theta.sin_cos();
    let u = move |p: [f64; 2]| -> C64 {
        let phase = kappa * (p[0] * c + p[1] * s);
        c64(phase.cos(), phase.sin())
    };
    Ok(ManufacturedCase {
        name: format!("plane_wave(theta={theta})"),
        kappa,
        u: Box::new(u),
        grad_u: Box::new(move |p| {
            let v = u(p) * c64(0.0, kappa);
            [v * c, v * s]
        }),
        f_tilde: Box::new(|_| c64(0.0, 0.0)),
    })
}

/// u = sin(pi x) sin(pi y), with volume data (kappa^2 - 2 pi^2) u and
/// homogeneous boundary data. Refuses kappa within 0.5 of a Dirichlet
/// eigenvalue of the unit square, where the continuous problem degenerates.
pub fn sine_product(kappa: f64) -> Result<ManufacturedCase> {
    if kappa <= 0.0 {
        return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
    }
    let k2 = kappa * kappa;
    let m_max = (kappa / PI).ceil() as i64 + 1;
    for m in 1..=m_max {
        for n in 1..=m_max {
            let ev = PI * PI * (m * m + n * n) as f64;
            if (k2 - ev).abs() < 0.5 {
                return Err(Error::Config(format!(
                    "kappa = {kappa} is within 0.5 of the square's eigenvalue \
                     pi^2 ({m}^2 + {n}^2) = {ev:.6}; pick a kappa away from resonance"
                )));
            }
        }
    }
    Ok(ManufacturedCase {
        name: "sine_product".into(),
        kappa,
        u: Box::new(|p| c64((PI * p[0]).sin() * (PI * p[1]).sin(), 0.0)),
        grad_u: Box::new(|p| {
            [
                c64(PI * (PI * p[0]).cos() * (PI * p[1]).sin(), 0.0),
                c64(PI * (PI * p[0]).sin() * (PI * p[1]).cos(), 0.0),
            ]
        }),
        f_tilde: Box::new(move |p| {
            c64(
                (k2 - 2.0 * PI * PI) * (PI * p[0]).sin() * (PI * p[1]).sin(),
                0.0,
            )
        }),
    })
}

/// u = (x + y/2)^p: lies in the order-p discrete spaces exactly, so a
/// method of order k >= p must reproduce it to roundoff.
pub fn polynomial_case(p: usize, kappa: f64) -> Result<ManufacturedCase> {
    if kappa <= 0.0 {
        return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
    }
    let k2 = kappa * kappa;
    let pf = p as f64;
    let base = |x: [f64; 2]| x[0] + 0.5 * x[1];
    Ok(ManufacturedCase {
        name: format!("polynomial(p={p})"),
        kappa,
        u: Box::new(move |x| c64(base(x).powi(p as i32), 0.0)),
        grad_u: Box::new(move |x| {
            if p == 0 {
                return [c64(0.0, 0.0), c64(0.0, 0.0)];
            }
            let d = pf * base(x).powi(p as i32 - 1);
            [c64(d, 0.0), c64(0.5 * d, 0.0)]
        }),
        f_tilde: Box::new(move |x| {
            let lap = if p < 2 {
                0.0
            } else {
                // (1 + 1/4) p (p-1) (x + y/2)^{p-2}
                1.25 * pf * (pf - 1.0) * base(x).powi(p as i32 - 2)
            };
            c64(lap + k2 * base(x).powi(p as i32), 0.0)
        }),
    })
}

/// A caller-supplied exact solution. The closures must be consistent with
/// each other; `self_check` verifies that numerically.
pub fn custom(
    name: &str,
    kappa: f64,
    u: impl Fn([f64; 2]) -> C64 + Send + Sync + 'static,
    grad_u: impl Fn([f64; 2]) -> [C64; 2] + Send + Sync + 'static,
    f_tilde: impl Fn([f64; 2]) -> C64 + Send + Sync + 'static,
) -> Result<ManufacturedCase> {
    if kappa <= 0.0 {
        return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
    }
    Ok(ManufacturedCase {
        name: name.into(),
        kappa,
        u: Box::new(u),
        grad_u: Box::new(grad_u),
        f_tilde: Box::new(f_tilde),
    })
}

/// Looks a case up by its command-line name: `plane_wave` (optionally
/// `plane_wave:<theta>`), `sine_product`, `polynomial`
/// (optionally `polynomial:<degree>`).
pub fn by_name(name: &str, kappa: f64) -> Result<ManufacturedCase> {
    let (head, arg) = match name.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (name, None),
    };
    match head {
        "plane_wave" => {
            let theta = match arg {
                Some(a) => a.parse::<f64>().map_err(|_| {
                    Error::Config(format!("bad plane_wave angle {a:?}"))
                })?,
                None => 0.3,
            };
            plane_wave(kappa, theta)
        }
        "sine_product" => {
            if arg.is_some() {
                return Err(Error::Config("sine_product takes no argument".into()));
            }
            sine_product(kappa)
        }
        "polynomial" => {
            let p = match arg {
                Some(a) => a.parse::<usize>().map_err(|_| {
                    Error::Config(format!("bad polynomial degree {a:?}"))
                })?,
                None => 2,
            };
            polynomial_case(p, kappa)
        }
        other => Err(Error::Config(format!(
            "unknown case {other:?}; expected plane_wave, sine_product or polynomial"
        ))),
    }
}

// ---------------------------------------------------------------------------
// convergence studies

/// One refinement level of a study.
#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub case: String,
    pub k: usize,
    pub kappa: f64,
    pub n: usize,
    pub h: f64,
    pub err_u: f64,
    pub err_sigma: f64,
    /// Energy norm of (projected exact solution - discrete solution).
    pub err_energy: f64,
    /// Observed order against the previous level; absent on the first
    /// level or when an error is at roundoff.
    pub rate_u: Option<f64>,
    pub rate_sigma: Option<f64>,
    /// Both errors at roundoff: the case lies in the discrete space.
    pub exact: bool,
    /// err_sigma / (h^{k+1} kappa^{k+1}), the kappa-scaled error constant.
    pub const_norm: f64,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
}

pub const CSV_HEADER: &str =
    "case,k,kappa,n,h,err_u,err_sigma,err_energy,rate_u,rate_sigma,const_norm";

impl ConvergenceTable {
    /// CSV rendering with 16 significant digits; rate cells are empty on
    /// the first level and say `exact` when the errors sit at roundoff.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let rate = |v: Option<f64>| -> String {
                if r.exact {
                    "exact".into()
                } else {
                    v.map(|x| format!("{x:.15e}")).unwrap_or_default()
                }
            };
            out.push_str(&format!(
                "{},{},{:.15e},{},{:.15e},{:.15e},{:.15e},{:.15e},{},{},{:.15e}\n",
                r.case,
                r.k,
                r.kappa,
                r.n,
                r.h,
                r.err_u,
                r.err_sigma,
                r.err_energy,
                rate(r.rate_u),
                rate(r.rate_sigma),
                r.const_norm,
            ));
        }
        out
    }
}

/// Roundoff floor below which rates are meaningless and a case is treated
/// as exactly representable.
pub const EXACT_TOL: f64 = 1e-12;

/// Observed orders from consecutive (error, h) pairs:
/// ln(e_i / e_{i+1}) / ln(h_i / h_{i+1}). Entries touching an error at or
/// below the roundoff floor come back as None.
pub fn compute_rate(errors: &[f64], hs: &[f64]) -> Result<Vec<Option<f64>>> {
    if errors.len() != hs.len() || errors.len() < 2 {
        return Err(Error::Config(format!(
            "rate computation needs matching lists of at least two levels, \
             got {} errors and {} mesh sizes",
            errors.len(),
            hs.len()
        )));
    }
    if errors.iter().any(|&e| e < 0.0) || hs.iter().any(|&h| h <= 0.0) {
        return Err(Error::Config(
            "rate computation needs nonnegative errors and positive mesh sizes".into(),
        ));
    }
    if hs.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config(
            "mesh sizes must decrease strictly between levels".into(),
        ));
    }
    Ok(errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| {
            if e[0] <= EXACT_TOL || e[1] <= EXACT_TOL {
                None
            } else {
                Some((e[0] / e[1]).ln() / (h[0] / h[1]).ln())
            }
        })
        .collect())
}

/// Runs a study: for each kappa, builds the case, self-checks it, solves on
/// each level and fills a table with errors, observed orders and the scaled
/// error constant. A failure stops the study but the rows gathered so far
/// are still returned alongside the error.
pub fn run_convergence(
    case_name: &str,
    k: usize,
    kappas: &[f64],
    levels: &[usize],
    opts: &GlobalOpts,
) -> (ConvergenceTable, Option<Error>) {
    let mut table = ConvergenceTable::default();
    let err = run_convergence_inner(case_name, k, kappas, levels, opts, &mut table).err();
    (table, err)
}

fn run_convergence_inner(
    case_name: &str,
    k: usize,
    kappas: &[f64],
    levels: &[usize],
    opts: &GlobalOpts,
    table: &mut ConvergenceTable,
) -> Result<()> {
    if kappas.is_empty() || levels.is_empty() {
        return Err(Error::Config(
            "a convergence study needs at least one kappa and one level".into(),
        ));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config(
            "levels must increase strictly".into(),
        ));
    }
    let re = Arc::new(build_reference_element(k)?);
    let degree = 2 * k + 8;

    for &kappa in kappas {
        let case = by_name(case_name, kappa)?;
        case.self_check()?;
        let first_row = table.rows.len();
        let mut errs_u = Vec::with_capacity(levels.len());
        let mut errs_sigma = Vec::with_capacity(levels.len());
        let mut hs = Vec::with_capacity(levels.len());
        for &n in levels {
            let mesh = Arc::new(generate_structured(n)?);
            let (sol, _stats) = solve(&mesh, &re, kappa, &case, opts)?;
            let err_u = analysis::broken_l2_error_u(&sol, &|p| case.u(p), degree);
            let err_sigma = analysis::broken_l2_error_sigma(&sol, &|p| case.sigma(p), degree);
            let proj = analysis::project_solution(&case, &mesh, &re, degree)?;
            let err_energy = analysis::energy_norm(&analysis::triple_difference(&proj, &sol));
            let h = mesh.mesh_size();
            let const_norm = err_sigma / (h.powi(k as i32 + 1) * kappa.powi(k as i32 + 1));
            table.rows.push(ConvergenceRow {
                case: case_name.into(),
                k,
                kappa,
                n,
                h,
                err_u,
                err_sigma,
                err_energy,
                rate_u: None,
                rate_sigma: None,
                exact: err_u <= EXACT_TOL && err_sigma <= EXACT_TOL,
                const_norm,
            });
            errs_u.push(err_u);
            errs_sigma.push(err_sigma);
            hs.push(h);
        }
        if levels.len() >= 2 {
            let ru = compute_rate(&errs_u, &hs)?;
            let rs = compute_rate(&errs_sigma, &hs)?;
            for (i, (u, s)) in ru.into_iter().zip(rs).enumerate() {
                table.rows[first_row + 1 + i].rate_u = u;
                table.rows[first_row + 1 + i].rate_sigma = s;
            }
        }
    }
    Ok(())
}
