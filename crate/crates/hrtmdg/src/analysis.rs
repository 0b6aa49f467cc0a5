//! Projections, norms, the variational form, and the verification probes:
//! consistency, conservation, the test-function energy identity, the local
//! flux lifting, the discrete stability constant, and the projected-error
//! bound. Each probe reports named residuals/estimates plus a pass flag and
//! serializes to JSON.
//!
//! Discrete triples (flux, scalar, multiplier) are carried in the same
//! container as solver output, `FieldSolution`; probes that need arbitrary
//! triples fill one with random coefficients.

use crate::global::{assemble_monolithic, FieldSolution, GlobalOpts};
use crate::mesh::Mesh;
use crate::mms::ManufacturedCase;
use crate::refelem::quad::{quadrature_edge, quadrature_triangle, EdgeRule, TriRule};
use crate::refelem::{edge_point, ReferenceElement, EDGE_LENGTHS};
use crate::{c64, C64, Error, ProblemData, Result};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, SVD};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;

/// One probe's outcome: named inputs, named measured quantities, verdict.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub name: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub residuals: BTreeMap<String, f64>,
    pub estimates: BTreeMap<String, f64>,
    pub pass: bool,
}

impl ProbeReport {
    pub fn new(name: &str) -> Self {
        ProbeReport {
            name: name.into(),
            parameters: BTreeMap::new(),
            residuals: BTreeMap::new(),
            estimates: BTreeMap::new(),
            pass: true,
        }
    }

    pub fn param(&mut self, key: &str, v: impl Into<serde_json::Value>) {
        self.parameters.insert(key.into(), v.into());
    }
}

// ---------------------------------------------------------------------------
// projections

/// L2 projection onto P_k of a cell: coefficients against the orthonormal
/// scalar basis, by quadrature of the given degree.
pub fn project_pk(
    f: &dyn Fn([f64; 2]) -> C64,
    mesh: &Mesh,
    cell: usize,
    re: &ReferenceElement,
    degree: usize,
) -> DVector<C64> {
    let rule = quadrature_triangle(degree);
    let geo = mesh.cell_geometry(cell);
    let sqrt_det = geo.det_b.sqrt();
    let mut coeffs = DVector::<C64>::zeros(re.n_pk());
    for (&p, &w) in rule.points.iter().zip(&rule.weights) {
        let fv = f(geo.map(p));
        for j in 0..re.n_pk() {
            coeffs[j] += fv * (w * sqrt_det * re.pk_cell[j].eval(p[0], p[1]));
        }
    }
    coeffs
}

/// L2 projection onto P_k of an edge, in the global (sorted-vertex)
/// parametrization used by the multiplier basis.
pub fn project_edge(
    f: &dyn Fn([f64; 2]) -> C64,
    mesh: &Mesh,
    edge: usize,
    re: &ReferenceElement,
    degree: usize,
) -> DVector<C64> {
    let rule = quadrature_edge(degree);
    let e = mesh.edge(edge);
    let ga = mesh.vertex(e.vertices[0]);
    let gb = mesh.vertex(e.vertices[1]);
    let sqrt_len = e.length.sqrt();
    let mut coeffs = DVector::<C64>::zeros(re.n_edge_modes());
    for (&t, &w) in rule.points.iter().zip(&rule.weights) {
        let x = [ga[0] + t * (gb[0] - ga[0]), ga[1] + t * (gb[1] - ga[1])];
        let fv = f(x);
        for m in 0..re.n_edge_modes() {
            coeffs[m] += fv * (w * sqrt_len * re.pk_edge[m].eval(t));
        }
    }
    coeffs
}

/// Flux projection onto RT_k of a cell: matches the flux's edge normal
/// moments against P_k(e) and interior moments against [P_{k-1}]^2. Solved
/// from the square moment system so the construction stands on its own
/// rather than on the dual-basis property of the reference element.
pub fn project_rt(
    f: &dyn Fn([f64; 2]) -> [C64; 2],
    mesh: &Mesh,
    cell: usize,
    re: &ReferenceElement,
    degree: usize,
) -> Result<DVector<C64>> {
    let (mat, rhs) = rt_moment_system(f, mesh, cell, re, degree);
    mat.map(|x| c64(x, 0.0)).lu().solve(&rhs).ok_or_else(|| {
        Error::Verification(format!("flux moment system singular on cell {cell}"))
    })
}

/// The square RT moment system: rows are the edge/interior moment
/// functionals applied to the basis; right-hand side applies them to the
/// given physical flux (pulled back through the Piola transform).
fn rt_moment_system(
    f: &dyn Fn([f64; 2]) -> [C64; 2],
    mesh: &Mesh,
    cell: usize,
    re: &ReferenceElement,
    degree: usize,
) -> (DMatrix<f64>, DVector<C64>) {
    let edge_rule = quadrature_edge(degree);
    let cell_rule = quadrature_triangle(degree);
    let geo = mesh.cell_geometry(cell);
    let n = re.n_rt();
    let modes = re.n_edge_modes();
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<C64>::zeros(n);

    for j in 0..3 {
        let traces = re.eval_rt_normal_trace(j, &edge_rule.points);
        let ce = mesh.cell_edges(cell)[j];
        let edge = mesh.edge(ce.edge);
        let n_phys = [ce.sign * edge.normal[0], ce.sign * edge.normal[1]];
        let len_ratio = edge.length / EDGE_LENGTHS[j];
        for m in 0..modes {
            let row = j * modes + m;
            for (q, (&t, &w)) in edge_rule.points.iter().zip(&edge_rule.weights).enumerate() {
                let chi = re.pk_edge[m].eval(t);
                for i in 0..n {
                    mat[(row, i)] += w * chi * traces[i][q];
                }
                let x = geo.map(edge_point(j, t));
                let fv = f(x);
                rhs[row] += (fv[0] * n_phys[0] + fv[1] * n_phys[1]) * (w * chi * len_ratio);
            }
        }
    }

    let base = 3 * modes;
    for (c, p) in re.pk_interior.iter().enumerate() {
        for (&pt, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let pv = p.eval(pt[0], pt[1]);
            for i in 0..n {
                let phi = re.rt[i].eval(pt[0], pt[1]);
                mat[(base + 2 * c, i)] += w * pv * phi[0];
                mat[(base + 2 * c + 1, i)] += w * pv * phi[1];
            }
            let fv = f(geo.map(pt));
            // reference pullback: det B * B^{-1} f
            let pulled = [
                geo.b[1][1] * fv[0] - geo.b[0][1] * fv[1],
                -geo.b[1][0] * fv[0] + geo.b[0][0] * fv[1],
            ];
            rhs[base + 2 * c] += pulled[0] * (w * pv);
            rhs[base + 2 * c + 1] += pulled[1] * (w * pv);
        }
    }
    (mat, rhs)
}

/// Projects a manufactured solution into the discrete spaces: flux
/// projection of sigma per cell, scalar projection of u per cell, edge
/// projection of u per interior edge.
pub fn project_solution(
    case: &ManufacturedCase,
    mesh: &Arc<Mesh>,
    re: &Arc<ReferenceElement>,
    degree: usize,
) -> Result<FieldSolution> {
    let sigma_eval = |x: [f64; 2]| case.sigma(x);
    let u_eval = |x: [f64; 2]| case.u(x);
    let mut sigma = Vec::with_capacity(mesh.n_cells());
    let mut u = Vec::with_capacity(mesh.n_cells());
    for cell in 0..mesh.n_cells() {
        sigma.push(project_rt(&sigma_eval, mesh, cell, re, degree)?);
        u.push(project_pk(&u_eval, mesh, cell, re, degree));
    }
    let mut lambda = Vec::with_capacity(mesh.n_interior_edges());
    for e in 0..mesh.n_edges() {
        if !mesh.edge(e).is_boundary() {
            lambda.push(project_edge(&u_eval, mesh, e, re, degree));
        }
    }
    Ok(FieldSolution {
        mesh: mesh.clone(),
        re: re.clone(),
        kappa: case.kappa,
        sigma,
        u,
        lambda,
    })
}

// ---------------------------------------------------------------------------
// norms and errors

/// Broken L2 distance between the discrete scalar and an exact evaluator.
pub fn broken_l2_error_u(
    sol: &FieldSolution,
    exact: &dyn Fn([f64; 2]) -> C64,
    degree: usize,
) -> f64 {
    let rule = quadrature_triangle(degree);
    let mesh = &sol.mesh;
    let mut total = 0.0;
    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let d = sol.eval_u(cell, p) - exact(geo.map(p));
            total += w * geo.det_b * d.norm_sqr();
        }
    }
    total.sqrt()
}

/// Broken L2 distance between the discrete flux and an exact evaluator.
pub fn broken_l2_error_sigma(
    sol: &FieldSolution,
    exact: &dyn Fn([f64; 2]) -> [C64; 2],
    degree: usize,
) -> f64 {
    let rule = quadrature_triangle(degree);
    let mesh = &sol.mesh;
    let mut total = 0.0;
    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let sh = sol.eval_sigma(cell, p);
            let se = exact(geo.map(p));
            total +=
                w * geo.det_b * ((sh[0] - se[0]).norm_sqr() + (sh[1] - se[1]).norm_sqr());
        }
    }
    total.sqrt()
}

/// Broken L2 distance between div of the discrete flux and an evaluator.
pub fn broken_l2_error_div_sigma(
    sol: &FieldSolution,
    exact: &dyn Fn([f64; 2]) -> C64,
    degree: usize,
) -> f64 {
    let rule = quadrature_triangle(degree);
    let mesh = &sol.mesh;
    let mut total = 0.0;
    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let d = sol.eval_div_sigma(cell, p) - exact(geo.map(p));
            total += w * geo.det_b * d.norm_sqr();
        }
    }
    total.sqrt()
}

/// Broken H1-seminorm distance between grad of the discrete scalar and an
/// exact gradient evaluator.
pub fn broken_l2_error_grad_u(
    sol: &FieldSolution,
    exact: &dyn Fn([f64; 2]) -> [C64; 2],
    degree: usize,
) -> f64 {
    let rule = quadrature_triangle(degree);
    let mesh = &sol.mesh;
    let mut total = 0.0;
    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let gh = sol.eval_grad_u(cell, p);
            let ge = exact(geo.map(p));
            total +=
                w * geo.det_b * ((gh[0] - ge[0]).norm_sqr() + (gh[1] - ge[1]).norm_sqr());
        }
    }
    total.sqrt()
}

/// Edge-trace L2 distance sum_e ||f - lambda_h||_e^2 over interior edges,
/// with lambda_h in the multiplier basis.
pub fn edge_trace_error(
    sol: &FieldSolution,
    exact: &dyn Fn([f64; 2]) -> C64,
    degree: usize,
) -> f64 {
    let rule = quadrature_edge(degree);
    let mesh = &sol.mesh;
    let mut total = 0.0;
    for e in 0..mesh.n_edges() {
        let edge = mesh.edge(e);
        let Some(ord) = mesh.interior_index(e) else {
            continue;
        };
        let ga = mesh.vertex(edge.vertices[0]);
        let gb = mesh.vertex(edge.vertices[1]);
        for (&t, &w) in rule.points.iter().zip(&rule.weights) {
            let x = [ga[0] + t * (gb[0] - ga[0]), ga[1] + t * (gb[1] - ga[1])];
            let d = sol.eval_lambda(ord, edge.length, t) - exact(x);
            total += w * edge.length * d.norm_sqr();
        }
    }
    total.sqrt()
}

/// Pointwise difference of two triples on the same mesh and degree.
pub fn triple_difference(a: &FieldSolution, b: &FieldSolution) -> FieldSolution {
    assert!(Arc::ptr_eq(&a.mesh, &b.mesh) || a.mesh.n_cells() == b.mesh.n_cells());
    FieldSolution {
        mesh: a.mesh.clone(),
        re: a.re.clone(),
        kappa: a.kappa,
        sigma: a
            .sigma
            .iter()
            .zip(&b.sigma)
            .map(|(x, y)| x - y)
            .collect(),
        u: a.u.iter().zip(&b.u).map(|(x, y)| x - y).collect(),
        lambda: a
            .lambda
            .iter()
            .zip(&b.lambda)
            .map(|(x, y)| x - y)
            .collect(),
    }
}

/// Scales every coefficient of a triple.
pub fn triple_scaled(x: &FieldSolution, factor: C64) -> FieldSolution {
    FieldSolution {
        mesh: x.mesh.clone(),
        re: x.re.clone(),
        kappa: x.kappa,
        sigma: x.sigma.iter().map(|v| v * factor).collect(),
        u: x.u.iter().map(|v| v * factor).collect(),
        lambda: x.lambda.iter().map(|v| v * factor).collect(),
    }
}

/// A triple with random coefficients; `real_coeffs` restricts the draw to
/// real coefficient vectors times one random global phase.
pub fn random_triple(
    mesh: &Arc<Mesh>,
    re: &Arc<ReferenceElement>,
    kappa: f64,
    rng: &mut ChaCha8Rng,
    real_coeffs: bool,
) -> FieldSolution {
    let phase = if real_coeffs {
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        c64(theta.cos(), theta.sin())
    } else {
        c64(1.0, 0.0)
    };
    let mut draw = |n: usize| -> DVector<C64> {
        DVector::from_fn(n, |_, _| {
            let v = if real_coeffs {
                c64(rng.random_range(-1.0..1.0), 0.0)
            } else {
                c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            };
            v * phase
        })
    };
    let sigma = (0..mesh.n_cells()).map(|_| draw(re.n_rt())).collect();
    let u = (0..mesh.n_cells()).map(|_| draw(re.n_pk())).collect();
    let lambda = (0..mesh.n_interior_edges())
        .map(|_| draw(re.n_edge_modes()))
        .collect();
    FieldSolution {
        mesh: mesh.clone(),
        re: re.clone(),
        kappa,
        sigma,
        u,
        lambda,
    }
}

/// The mesh-dependent energy norm: (kappa ||tau||^2 + kappa ||v||^2 +
/// kappa^{-1} ||grad v||^2 + (kappa h)^{-1} |mu - v|^2)^{1/2}. The trace
/// mismatch runs over element-boundary sides: interior edges see v's trace
/// from each side against mu, boundary edges see v's trace against mu = 0.
pub fn energy_norm(x: &FieldSolution) -> f64 {
    let mesh = &x.mesh;
    let re = &x.re;
    let kappa = x.kappa;
    let h = mesh.mesh_size();
    let cell_rule = quadrature_triangle(2 * re.k + 2);
    let edge_rule = quadrature_edge(2 * re.k + 2);

    let mut total = 0.0;
    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        for (&p, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let s = x.eval_sigma(cell, p);
            let u = x.eval_u(cell, p);
            let g = x.eval_grad_u(cell, p);
            total += w
                * geo.det_b
                * (kappa * (s[0].norm_sqr() + s[1].norm_sqr())
                    + kappa * u.norm_sqr()
                    + (g[0].norm_sqr() + g[1].norm_sqr()) / kappa);
        }
        for j in 0..3 {
            let ce = mesh.cell_edges(cell)[j];
            let edge = mesh.edge(ce.edge);
            let interior = mesh.interior_index(ce.edge);
            let aligned = mesh.local_edge_aligned(cell, j);
            for (&t, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                let v = x.eval_u(cell, edge_point(j, t));
                let mu = match interior {
                    Some(ord) => {
                        let tg = if aligned { t } else { 1.0 - t };
                        x.eval_lambda(ord, edge.length, tg)
                    }
                    None => c64(0.0, 0.0),
                };
                total += w * edge.length * (mu - v).norm_sqr() / (kappa * h);
            }
        }
    }
    total.sqrt()
}

// ---------------------------------------------------------------------------
// the variational form

/// Evaluates the six-term variational form on two discrete triples by
/// quadrature: volume terms i kappa (sigma, tau) - i kappa (u, v) +
/// (sigma, grad v) + (grad u, tau), and element-boundary terms
/// <lambda - u, tau . n> + <sigma . n, mu - v> with lambda, mu read as zero
/// on boundary edges. Linear in the first triple, conjugate-linear in the
/// second.
pub fn evaluate_form_a(x: &FieldSolution, y: &FieldSolution) -> C64 {
    let mesh = &x.mesh;
    let re = &x.re;
    let kappa = x.kappa;
    let ik = c64(0.0, kappa);
    let cell_rule = quadrature_triangle(2 * re.k + 4);
    let edge_rule = quadrature_edge(2 * re.k + 4);

    let mut total = c64(0.0, 0.0);
    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        for (&p, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let sx = x.eval_sigma(cell, p);
            let ux = x.eval_u(cell, p);
            let gx = x.eval_grad_u(cell, p);
            let ty = y.eval_sigma(cell, p);
            let vy = y.eval_u(cell, p);
            let gy = y.eval_grad_u(cell, p);
            let dot_st = sx[0] * ty[0].conj() + sx[1] * ty[1].conj();
            let dot_sg = sx[0] * gy[0].conj() + sx[1] * gy[1].conj();
            let dot_gt = gx[0] * ty[0].conj() + gx[1] * ty[1].conj();
            total += (ik * dot_st - ik * (ux * vy.conj()) + dot_sg + dot_gt) * (w * geo.det_b);
        }
        for j in 0..3 {
            let ce = mesh.cell_edges(cell)[j];
            let edge = mesh.edge(ce.edge);
            let n_phys = [ce.sign * edge.normal[0], ce.sign * edge.normal[1]];
            let interior = mesh.interior_index(ce.edge);
            let aligned = mesh.local_edge_aligned(cell, j);
            for (&t, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                let xhat = edge_point(j, t);
                let ux = x.eval_u(cell, xhat);
                let sx = x.eval_sigma(cell, xhat);
                let vy = y.eval_u(cell, xhat);
                let ty = y.eval_sigma(cell, xhat);
                let (lx, my) = match interior {
                    Some(ord) => {
                        let tg = if aligned { t } else { 1.0 - t };
                        (
                            x.eval_lambda(ord, edge.length, tg),
                            y.eval_lambda(ord, edge.length, tg),
                        )
                    }
                    None => (c64(0.0, 0.0), c64(0.0, 0.0)),
                };
                let tn = ty[0] * n_phys[0] + ty[1] * n_phys[1];
                let sn = sx[0] * n_phys[0] + sx[1] * n_phys[1];
                total += ((lx - ux) * tn.conj() + sn * (my - vy).conj()) * (w * edge.length);
            }
        }
    }
    total
}

/// kappa ||sigma_h||^2 + kappa ||u_h||^2 by quadrature.
fn kappa_l2_mass(x: &FieldSolution) -> f64 {
    let mesh = &x.mesh;
    let rule = quadrature_triangle(2 * x.re.k + 4);
    let mut total = 0.0;
    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let s = x.eval_sigma(cell, p);
            let u = x.eval_u(cell, p);
            total += w * geo.det_b * (s[0].norm_sqr() + s[1].norm_sqr() + u.norm_sqr());
        }
    }
    x.kappa * total
}

/// The two extra terms that appear when the energy identity's test triple
/// (i sigma, -i u, -i lambda) is applied to a genuinely complex trial
/// triple: 2 Im (div sigma, u) + 2 Im <lambda, sigma . n>. Both vanish for
/// real-coefficient triples (up to a global phase), which is the setting
/// the identity's proof manipulates.
fn energy_identity_gap(x: &FieldSolution) -> f64 {
    let mesh = &x.mesh;
    let re = &x.re;
    let cell_rule = quadrature_triangle(2 * re.k + 4);
    let edge_rule = quadrature_edge(2 * re.k + 4);
    let mut div_term = c64(0.0, 0.0);
    let mut edge_term = c64(0.0, 0.0);
    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        for (&p, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            div_term += x.eval_div_sigma(cell, p) * x.eval_u(cell, p).conj() * (w * geo.det_b);
        }
        for j in 0..3 {
            let ce = mesh.cell_edges(cell)[j];
            let edge = mesh.edge(ce.edge);
            let Some(ord) = mesh.interior_index(ce.edge) else {
                continue;
            };
            let aligned = mesh.local_edge_aligned(cell, j);
            let n_phys = [ce.sign * edge.normal[0], ce.sign * edge.normal[1]];
            for (&t, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                let xhat = edge_point(j, t);
                let s = x.eval_sigma(cell, xhat);
                let sn = s[0] * n_phys[0] + s[1] * n_phys[1];
                let tg = if aligned { t } else { 1.0 - t };
                let l = x.eval_lambda(ord, edge.length, tg);
                edge_term += l * sn.conj() * (w * edge.length);
            }
        }
    }
    2.0 * div_term.im + 2.0 * edge_term.im
}

// ---------------------------------------------------------------------------
// probes

/// Tests the energy identity A(x; (i sigma, -i u, -i lambda)) =
/// kappa ||sigma||^2 + kappa ||u||^2 over random triples. The identity is
/// exact for real coefficient triples up to a global phase, and those are
/// what the probe draws; fully complex draws pick up the two extra real
/// terms computed by `energy_identity_gap`, which the probe also measures
/// and reconciles.
pub fn energy_identity_probe(
    mesh: &Arc<Mesh>,
    re: &Arc<ReferenceElement>,
    kappa: f64,
    samples: usize,
    seed: u64,
) -> ProbeReport {
    let mut report = ProbeReport::new("energy_identity");
    report.param("kappa", kappa);
    report.param("samples", samples as u64);
    report.param("seed", seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut max_rel = 0.0f64;
    let mut max_imag = 0.0f64;
    let mut max_gap_mismatch = 0.0f64;
    for draw in 0..samples {
        let x = random_triple(mesh, re, kappa, &mut rng, true);
        let y = FieldSolution {
            mesh: x.mesh.clone(),
            re: x.re.clone(),
            kappa,
            sigma: x.sigma.iter().map(|v| v * c64(0.0, 1.0)).collect(),
            u: x.u.iter().map(|v| v * c64(0.0, -1.0)).collect(),
            lambda: x.lambda.iter().map(|v| v * c64(0.0, -1.0)).collect(),
        };
        let lhs = evaluate_form_a(&x, &y);
        let rhs = kappa_l2_mass(&x);
        max_rel = max_rel.max((lhs - c64(rhs, 0.0)).norm() / rhs);
        max_imag = max_imag.max(lhs.im.abs() / rhs);

        // reconcile the complex-draw gap against its closed form every few
        // draws; this is informational, the acceptance identity is above
        if draw % 10 == 0 {
            let xc = random_triple(mesh, re, kappa, &mut rng, false);
            let yc = FieldSolution {
                mesh: xc.mesh.clone(),
                re: xc.re.clone(),
                kappa,
                sigma: xc.sigma.iter().map(|v| v * c64(0.0, 1.0)).collect(),
                u: xc.u.iter().map(|v| v * c64(0.0, -1.0)).collect(),
                lambda: xc.lambda.iter().map(|v| v * c64(0.0, -1.0)).collect(),
            };
            let lhs_c = evaluate_form_a(&xc, &yc);
            let rhs_c = kappa_l2_mass(&xc);
            let predicted = energy_identity_gap(&xc);
            let mismatch = (lhs_c - c64(rhs_c + predicted, 0.0)).norm() / rhs_c.max(1.0);
            max_gap_mismatch = max_gap_mismatch.max(mismatch);
        }
    }

    report.residuals.insert("max_relative_error".into(), max_rel);
    report.residuals.insert("max_imaginary_part".into(), max_imag);
    report
        .residuals
        .insert("complex_draw_gap_mismatch".into(), max_gap_mismatch);
    report.pass = max_rel <= 1e-12 && max_gap_mismatch <= 1e-11;
    report
}

/// Consistency of the method: insert the projected exact solution's error
/// into the form against every discrete test basis function. Scalar- and
/// multiplier-slot residuals must vanish; flux-slot residuals must reduce
/// to the mass-weighted flux projection error. Projections and residual
/// pairings share one quadrature rule, so the projection orthogonality
/// they rely on holds to roundoff.
pub fn consistency_probe(
    case: &ManufacturedCase,
    mesh: &Arc<Mesh>,
    re: &Arc<ReferenceElement>,
) -> Result<ProbeReport> {
    let mut report = ProbeReport::new("consistency");
    report.param("case", case.name.clone());
    report.param("kappa", case.kappa);
    report.param("k", re.k as u64);
    report.param("cells", mesh.n_cells() as u64);
    let kappa = case.kappa;
    // generous rule: the scalar- and multiplier-slot cancellations hold to
    // roundoff through same-rule projection orthogonality, but the flux
    // slot also leans on integration by parts of the exact solution, which
    // only holds to quadrature accuracy
    let degree = 2 * re.k + 12;
    let cell_rule = quadrature_triangle(degree);
    let edge_rule = quadrature_edge(degree);

    let proj = project_solution_with_rules(case, mesh, re, &cell_rule, &edge_rule)?;
    // edge projections of u on boundary edges too: the multiplier error
    // pairs against tau . n over all element boundaries
    let u_eval = |x: [f64; 2]| case.u(x);
    let mut boundary_lambda: Vec<Option<DVector<C64>>> = vec![None; mesh.n_edges()];
    for e in 0..mesh.n_edges() {
        if mesh.edge(e).is_boundary() {
            boundary_lambda[e] =
                Some(project_edge_with_rule(&u_eval, mesh, e, re, &edge_rule));
        }
    }

    // error evaluators at reference points of a cell
    let e_u = |cell: usize, xhat: [f64; 2], geo_map: [f64; 2]| -> C64 {
        proj.eval_u(cell, xhat) - case.u(geo_map)
    };
    let e_sigma = |cell: usize, xhat: [f64; 2], x: [f64; 2]| -> [C64; 2] {
        let p = proj.eval_sigma(cell, xhat);
        let s = case.sigma(x);
        [p[0] - s[0], p[1] - s[1]]
    };
    let e_grad_u = |cell: usize, xhat: [f64; 2], x: [f64; 2]| -> [C64; 2] {
        let p = proj.eval_grad_u(cell, xhat);
        let g = case.grad_u(x);
        [p[0] - g[0], p[1] - g[1]]
    };
    // multiplier error on any edge, in the global parametrization
    let e_lambda = |edge_id: usize, tg: f64, x: [f64; 2]| -> C64 {
        let edge = x_edge(mesh, edge_id);
        let coeffs = match mesh.interior_index(edge_id) {
            Some(ord) => &proj.lambda[ord],
            None => boundary_lambda[edge_id].as_ref().unwrap(),
        };
        let scale = 1.0 / edge.length.sqrt();
        let val: C64 = re
            .pk_edge
            .iter()
            .zip(coeffs.iter())
            .map(|(q, &c)| c * (q.eval(tg) * scale))
            .sum();
        val - case.u(x)
    };

    let mut max_v = 0.0f64;
    let mut max_mu = 0.0f64;
    let mut max_tau = 0.0f64;

    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        let sqrt_det = geo.det_b.sqrt();

        // v-slot: -i kappa (e_u, psi) + (e_sigma, grad psi) - <e_sigma.n, psi>
        let mut rv = vec![c64(0.0, 0.0); re.n_pk()];
        // tau-slot: i kappa (e_sigma, phi) + (grad e_u, phi)
        //           + <e_lambda - e_u, phi.n>, minus the expected
        //           i kappa (e_sigma, phi)
        let mut rt = vec![c64(0.0, 0.0); re.n_rt()];

        for (&p, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let x = geo.map(p);
            let eu = e_u(cell, p, x);
            let es = e_sigma(cell, p, x);
            let eg = e_grad_u(cell, p, x);
            for jb in 0..re.n_pk() {
                let psi = re.pk_cell[jb].eval(p[0], p[1]) / sqrt_det;
                let gpsi_ref = [
                    re.pk_grad[jb][0].eval(p[0], p[1]) / sqrt_det,
                    re.pk_grad[jb][1].eval(p[0], p[1]) / sqrt_det,
                ];
                let gpsi = geo.push_gradient(gpsi_ref);
                rv[jb] += (-c64(0.0, kappa) * eu * psi + es[0] * gpsi[0] + es[1] * gpsi[1])
                    * (w * geo.det_b);
            }
            for ib in 0..re.n_rt() {
                let phi_ref = re.rt[ib].eval(p[0], p[1]);
                let phi = geo.piola(phi_ref);
                rt[ib] += (eg[0] * phi[0] + eg[1] * phi[1]) * (w * geo.det_b);
            }
        }

        for j in 0..3 {
            let ce = mesh.cell_edges(cell)[j];
            let edge = mesh.edge(ce.edge);
            let n_phys = [ce.sign * edge.normal[0], ce.sign * edge.normal[1]];
            let aligned = mesh.local_edge_aligned(cell, j);
            let traces = re.eval_rt_normal_trace(j, &edge_rule.points);
            let trace_scale = EDGE_LENGTHS[j] / edge.length;
            for (q, (&t, &w)) in edge_rule.points.iter().zip(&edge_rule.weights).enumerate() {
                let xhat = edge_point(j, t);
                let x = geo.map(xhat);
                let es = e_sigma(cell, xhat, x);
                let esn = es[0] * n_phys[0] + es[1] * n_phys[1];
                let tg = if aligned { t } else { 1.0 - t };
                let el = e_lambda(ce.edge, tg, x);
                let eu = e_u(cell, xhat, x);
                for jb in 0..re.n_pk() {
                    let psi = re.pk_cell[jb].eval(xhat[0], xhat[1]) / sqrt_det;
                    rv[jb] -= esn * psi * (w * edge.length);
                }
                for ib in 0..re.n_rt() {
                    // phi.n on the physical edge via the reference trace
                    let phin = traces[ib][q] * trace_scale;
                    rt[ib] += (el - eu) * phin * (w * edge.length);
                }
            }
        }

        for z in &rv {
            max_v = max_v.max(z.norm());
        }
        for z in &rt {
            max_tau = max_tau.max(z.norm());
        }
    }

    // mu-slot: <e_sigma.n, chi> summed over both sides of interior edges
    for e in 0..mesh.n_edges() {
        let edge = mesh.edge(e);
        if edge.is_boundary() {
            continue;
        }
        let mut moments = vec![c64(0.0, 0.0); re.n_edge_modes()];
        for &cell in edge.cells.iter().flatten() {
            let geo = mesh.cell_geometry(cell);
            let j = local_edge_of(mesh, cell, e);
            let ce = mesh.cell_edges(cell)[j];
            let n_phys = [ce.sign * edge.normal[0], ce.sign * edge.normal[1]];
            let aligned = mesh.local_edge_aligned(cell, j);
            for (&t, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                let xhat = edge_point(j, t);
                let x = geo.map(xhat);
                let es = e_sigma(cell, xhat, x);
                let esn = es[0] * n_phys[0] + es[1] * n_phys[1];
                let tg = if aligned { t } else { 1.0 - t };
                for m in 0..re.n_edge_modes() {
                    let chi = re.pk_edge[m].eval(tg) / edge.length.sqrt();
                    moments[m] += esn * chi * (w * edge.length);
                }
            }
        }
        for z in &moments {
            max_mu = max_mu.max(z.norm());
        }
    }

    let scale = data_scale(case, mesh);
    report.residuals.insert("v_slot_max".into(), max_v);
    report.residuals.insert("mu_slot_max".into(), max_mu);
    report
        .residuals
        .insert("tau_slot_identity_max".into(), max_tau);
    report.estimates.insert("data_scale".into(), scale);
    report.pass = max_v <= 1e-10 * scale && max_mu <= 1e-10 * scale && max_tau <= 1e-10 * scale;
    Ok(report)
}

fn x_edge(mesh: &Mesh, e: usize) -> &crate::mesh::Edge {
    mesh.edge(e)
}

fn local_edge_of(mesh: &Mesh, cell: usize, edge: usize) -> usize {
    mesh.cell_edges(cell)
        .iter()
        .position(|ce| ce.edge == edge)
        .expect("edge belongs to cell")
}

/// Magnitude yardstick for residual tolerances: (1 + kappa) times the
/// largest sampled |u| + |sigma| of the case.
fn data_scale(case: &ManufacturedCase, mesh: &Mesh) -> f64 {
    let mut m = 0.0f64;
    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        let x = geo.map([1.0 / 3.0, 1.0 / 3.0]);
        let s = case.sigma(x);
        m = m.max(case.u(x).norm() + (s[0].norm_sqr() + s[1].norm_sqr()).sqrt());
    }
    (1.0 + case.kappa) * m.max(1e-30)
}

fn project_edge_with_rule(
    f: &dyn Fn([f64; 2]) -> C64,
    mesh: &Mesh,
    edge: usize,
    re: &ReferenceElement,
    rule: &EdgeRule,
) -> DVector<C64> {
    let e = mesh.edge(edge);
    let ga = mesh.vertex(e.vertices[0]);
    let gb = mesh.vertex(e.vertices[1]);
    let sqrt_len = e.length.sqrt();
    let mut coeffs = DVector::<C64>::zeros(re.n_edge_modes());
    for (&t, &w) in rule.points.iter().zip(&rule.weights) {
        let x = [ga[0] + t * (gb[0] - ga[0]), ga[1] + t * (gb[1] - ga[1])];
        let fv = f(x);
        for m in 0..re.n_edge_modes() {
            coeffs[m] += fv * (w * sqrt_len * re.pk_edge[m].eval(t));
        }
    }
    coeffs
}

fn project_solution_with_rules(
    case: &ManufacturedCase,
    mesh: &Arc<Mesh>,
    re: &Arc<ReferenceElement>,
    cell_rule: &TriRule,
    edge_rule: &EdgeRule,
) -> Result<FieldSolution> {
    let u_eval = |x: [f64; 2]| case.u(x);
    let sigma_eval = |x: [f64; 2]| case.sigma(x);
    let mut sigma = Vec::with_capacity(mesh.n_cells());
    let mut u = Vec::with_capacity(mesh.n_cells());
    for cell in 0..mesh.n_cells() {
        sigma.push(project_rt_with_rules(
            &sigma_eval,
            mesh,
            cell,
            re,
            cell_rule,
            edge_rule,
        )?);
        let geo = mesh.cell_geometry(cell);
        let sqrt_det = geo.det_b.sqrt();
        let mut coeffs = DVector::<C64>::zeros(re.n_pk());
        for (&p, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let fv = case.u(geo.map(p));
            for j in 0..re.n_pk() {
                coeffs[j] += fv * (w * sqrt_det * re.pk_cell[j].eval(p[0], p[1]));
            }
        }
        u.push(coeffs);
    }
    let mut lambda = Vec::with_capacity(mesh.n_interior_edges());
    for e in 0..mesh.n_edges() {
        if !mesh.edge(e).is_boundary() {
            lambda.push(project_edge_with_rule(&u_eval, mesh, e, re, edge_rule));
        }
    }
    Ok(FieldSolution {
        mesh: mesh.clone(),
        re: re.clone(),
        kappa: case.kappa,
        sigma,
        u,
        lambda,
    })
}

fn project_rt_with_rules(
    f: &dyn Fn([f64; 2]) -> [C64; 2],
    mesh: &Mesh,
    cell: usize,
    re: &ReferenceElement,
    cell_rule: &TriRule,
    edge_rule: &EdgeRule,
) -> Result<DVector<C64>> {
    let geo = mesh.cell_geometry(cell);
    let n = re.n_rt();
    let modes = re.n_edge_modes();
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<C64>::zeros(n);
    for j in 0..3 {
        let traces = re.eval_rt_normal_trace(j, &edge_rule.points);
        let ce = mesh.cell_edges(cell)[j];
        let edge = mesh.edge(ce.edge);
        let n_phys = [ce.sign * edge.normal[0], ce.sign * edge.normal[1]];
        let len_ratio = edge.length / EDGE_LENGTHS[j];
        for m in 0..modes {
            let row = j * modes + m;
            for (q, (&t, &w)) in edge_rule.points.iter().zip(&edge_rule.weights).enumerate() {
                let chi = re.pk_edge[m].eval(t);
                for i in 0..n {
                    mat[(row, i)] += w * chi * traces[i][q];
                }
                let fv = f(geo.map(edge_point(j, t)));
                rhs[row] += (fv[0] * n_phys[0] + fv[1] * n_phys[1]) * (w * chi * len_ratio);
            }
        }
    }
    let base = 3 * modes;
    for (c, p) in re.pk_interior.iter().enumerate() {
        for (&pt, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let pv = p.eval(pt[0], pt[1]);
            for i in 0..n {
                let phi = re.rt[i].eval(pt[0], pt[1]);
                mat[(base + 2 * c, i)] += w * pv * phi[0];
                mat[(base + 2 * c + 1, i)] += w * pv * phi[1];
            }
            let fv = f(geo.map(pt));
            let pulled = [
                geo.b[1][1] * fv[0] - geo.b[0][1] * fv[1],
                -geo.b[1][0] * fv[0] + geo.b[0][0] * fv[1],
            ];
            rhs[base + 2 * c] += pulled[0] * (w * pv);
            rhs[base + 2 * c + 1] += pulled[1] * (w * pv);
        }
    }
    mat.map(|x| c64(x, 0.0)).lu().solve(&rhs).ok_or_else(|| {
        Error::Verification(format!("flux moment system singular on cell {cell}"))
    })
}

/// Local mass balance per element: r_K = -(i kappa u_h, 1)_K -
/// <sigma_h . n, 1>_{boundary of K} + (f, 1)_K with f = i f_tilde / kappa.
/// Returns (max |r_K|, |sum r_K|, data scale).
pub fn conservation_residuals(
    sol: &FieldSolution,
    data: &dyn ProblemData,
) -> (f64, f64, f64) {
    let mesh = &sol.mesh;
    let re = &sol.re;
    let kappa = sol.kappa;
    let cell_rule = quadrature_triangle(2 * re.k + 6);
    let edge_rule = quadrature_edge(2 * re.k + 6);

    let mut max_abs = 0.0f64;
    let mut total = c64(0.0, 0.0);
    let mut f_norm_sq = 0.0f64;
    let mut field_sq = 0.0f64;
    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        let mut r = c64(0.0, 0.0);
        for (&p, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let u = sol.eval_u(cell, p);
            let f = c64(0.0, 1.0 / kappa) * data.f_tilde(geo.map(p));
            r += (f - c64(0.0, kappa) * u) * (w * geo.det_b);
            f_norm_sq += w * geo.det_b * f.norm_sqr();
            let s = sol.eval_sigma(cell, p);
            field_sq += w * geo.det_b * (kappa * kappa * u.norm_sqr() + s[0].norm_sqr() + s[1].norm_sqr());
        }
        for j in 0..3 {
            let ce = mesh.cell_edges(cell)[j];
            let edge = mesh.edge(ce.edge);
            let n_phys = [ce.sign * edge.normal[0], ce.sign * edge.normal[1]];
            for (&t, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                let s = sol.eval_sigma(cell, edge_point(j, t));
                r -= (s[0] * n_phys[0] + s[1] * n_phys[1]) * (w * edge.length);
            }
        }
        max_abs = max_abs.max(r.norm());
        total += r;
    }
    let scale = (f_norm_sq.sqrt() + field_sq.sqrt()).max(1e-30);
    (max_abs, total.norm(), scale)
}

/// Element mass balance evaluated with the single-valued interface flux,
/// the average of the two side traces on each interior edge. The per-cell
/// balance of `conservation_residuals` holds structurally (it is the
/// constant-mode scalar equation of the local solve) even when the
/// interface coupling is mis-assembled; this variant agrees with it to
/// roundoff on an intact system and fails loudly when the two side traces
/// stop canceling.
pub fn shared_flux_conservation(sol: &FieldSolution, data: &dyn ProblemData) -> (f64, f64, f64) {
    let mesh = &sol.mesh;
    let re = &sol.re;
    let kappa = sol.kappa;
    let cell_rule = quadrature_triangle(2 * re.k + 6);
    let edge_rule = quadrature_edge(2 * re.k + 6);

    let mut max_abs = 0.0f64;
    let mut total = c64(0.0, 0.0);
    let mut f_norm_sq = 0.0f64;
    let mut field_sq = 0.0f64;
    for cell in 0..mesh.n_cells() {
        let geo = mesh.cell_geometry(cell);
        let mut r = c64(0.0, 0.0);
        for (&p, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let u = sol.eval_u(cell, p);
            let f = c64(0.0, 1.0 / kappa) * data.f_tilde(geo.map(p));
            r += (f - c64(0.0, kappa) * u) * (w * geo.det_b);
            f_norm_sq += w * geo.det_b * f.norm_sqr();
            let s = sol.eval_sigma(cell, p);
            field_sq +=
                w * geo.det_b * (kappa * kappa * u.norm_sqr() + s[0].norm_sqr() + s[1].norm_sqr());
        }
        for j in 0..3 {
            let ce = mesh.cell_edges(cell)[j];
            let edge = mesh.edge(ce.edge);
            let aligned = mesh.local_edge_aligned(cell, j);
            let other = edge.cells.iter().flatten().copied().find(|&c| c != cell);
            for (&tg, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                // both side traces are taken at the same physical point,
                // parametrized by the global (sorted-vertex) coordinate tg
                let t_own = if aligned { tg } else { 1.0 - tg };
                let s = sol.eval_sigma(cell, edge_point(j, t_own));
                let own = (s[0] * edge.normal[0] + s[1] * edge.normal[1]) * ce.sign;
                let flux = match other {
                    Some(c2) => {
                        let j2 = local_edge_of(mesh, c2, ce.edge);
                        let aligned2 = mesh.local_edge_aligned(c2, j2);
                        let t2 = if aligned2 { tg } else { 1.0 - tg };
                        let s2 = sol.eval_sigma(c2, edge_point(j2, t2));
                        let sign2 = mesh.cell_edges(c2)[j2].sign;
                        let out2 = (s2[0] * edge.normal[0] + s2[1] * edge.normal[1]) * sign2;
                        // the far side's outward flux is the negative of ours
                        // when the traces cancel
                        (own - out2) * 0.5
                    }
                    None => own,
                };
                r -= flux * (w * edge.length);
            }
        }
        max_abs = max_abs.max(r.norm());
        total += r;
    }
    let scale = (f_norm_sq.sqrt() + field_sq.sqrt()).max(1e-30);
    (max_abs, total.norm(), scale)
}

/// Net normal-flux moments across interior edges: for each interior edge
/// and multiplier mode, the two side contributions of <sigma_h . n, chi>
/// should cancel. Returns the largest |moment| and the flux scale.
pub fn flux_jump_moments(sol: &FieldSolution) -> (f64, f64) {
    let mesh = &sol.mesh;
    let re = &sol.re;
    let edge_rule = quadrature_edge(2 * re.k + 4);
    let mut max_jump = 0.0f64;
    for e in 0..mesh.n_edges() {
        let edge = mesh.edge(e);
        if edge.is_boundary() {
            continue;
        }
        let mut moments = vec![c64(0.0, 0.0); re.n_edge_modes()];
        for &cell in edge.cells.iter().flatten() {
            let j = local_edge_of(mesh, cell, e);
            let ce = mesh.cell_edges(cell)[j];
            let n_phys = [ce.sign * edge.normal[0], ce.sign * edge.normal[1]];
            let aligned = mesh.local_edge_aligned(cell, j);
            for (&t, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                let s = sol.eval_sigma(cell, edge_point(j, t));
                let sn = s[0] * n_phys[0] + s[1] * n_phys[1];
                let tg = if aligned { t } else { 1.0 - t };
                for m in 0..re.n_edge_modes() {
                    let chi = re.pk_edge[m].eval(tg) / edge.length.sqrt();
                    moments[m] += sn * chi * (w * edge.length);
                }
            }
        }
        for z in &moments {
            max_jump = max_jump.max(z.norm());
        }
    }
    let sigma_norm = broken_l2_error_sigma(sol, &|_| [c64(0.0, 0.0); 2], 2 * re.k + 4);
    (max_jump, sigma_norm.max(1e-30))
}

// ---------------------------------------------------------------------------
// lifting probe

/// Result of the local flux lifting on one cell: the lifted coefficients,
/// the worst residual of the two defining moment conditions, and the
/// energy ratio that estimates the lifting constant.
#[derive(Clone, Debug, Serialize)]
pub struct LiftingSample {
    pub cell: usize,
    pub moment_residual: f64,
    pub ratio: f64,
}

/// Lifts (v_h, mu_h) on one cell into RT_k: interior moments match grad
/// v_h, edge normal moments match mu_h (zero on boundary edges, matching
/// the multiplier space). Returns the coefficients.
pub fn lift_flux(
    mesh: &Mesh,
    cell: usize,
    re: &ReferenceElement,
    v_coeffs: &DVector<C64>,
    mu: &dyn Fn(usize, f64) -> C64, // (edge id, global parameter) -> value
    degree: usize,
) -> Result<DVector<C64>> {
    let geo = mesh.cell_geometry(cell);
    let sqrt_det = geo.det_b.sqrt();
    let edge_rule = quadrature_edge(degree);
    let cell_rule = quadrature_triangle(degree);
    let n = re.n_rt();
    let modes = re.n_edge_modes();
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<C64>::zeros(n);

    let grad_v = |xhat: [f64; 2]| -> [C64; 2] {
        let mut gx = c64(0.0, 0.0);
        let mut gy = c64(0.0, 0.0);
        for (g, &c) in re.pk_grad.iter().zip(v_coeffs.iter()) {
            gx += c * (g[0].eval(xhat[0], xhat[1]) / sqrt_det);
            gy += c * (g[1].eval(xhat[0], xhat[1]) / sqrt_det);
        }
        let p = geo.push_gradient([1.0, 0.0]);
        let q = geo.push_gradient([0.0, 1.0]);
        [gx * p[0] + gy * q[0], gx * p[1] + gy * q[1]]
    };

    for j in 0..3 {
        let traces = re.eval_rt_normal_trace(j, &edge_rule.points);
        let ce = mesh.cell_edges(cell)[j];
        let edge = mesh.edge(ce.edge);
        let aligned = mesh.local_edge_aligned(cell, j);
        let len_ratio = edge.length / EDGE_LENGTHS[j];
        for m in 0..modes {
            let row = j * modes + m;
            for (q, (&t, &w)) in edge_rule.points.iter().zip(&edge_rule.weights).enumerate() {
                let chi = re.pk_edge[m].eval(t);
                for i in 0..n {
                    mat[(row, i)] += w * chi * traces[i][q];
                }
                let tg = if aligned { t } else { 1.0 - t };
                rhs[row] += mu(ce.edge, tg) * (w * chi * len_ratio);
            }
        }
    }
    let base = 3 * modes;
    for (c, p) in re.pk_interior.iter().enumerate() {
        for (&pt, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let pv = p.eval(pt[0], pt[1]);
            for i in 0..n {
                let phi = re.rt[i].eval(pt[0], pt[1]);
                mat[(base + 2 * c, i)] += w * pv * phi[0];
                mat[(base + 2 * c + 1, i)] += w * pv * phi[1];
            }
            let gv = grad_v(pt);
            let pulled = [
                geo.b[1][1] * gv[0] - geo.b[0][1] * gv[1],
                -geo.b[1][0] * gv[0] + geo.b[0][0] * gv[1],
            ];
            rhs[base + 2 * c] += pulled[0] * (w * pv);
            rhs[base + 2 * c + 1] += pulled[1] * (w * pv);
        }
    }

    mat.map(|x| c64(x, 0.0)).lu().solve(&rhs).ok_or_else(|| {
        Error::Verification(format!(
            "lifting moment system singular on cell {cell}; the local flux \
             space failed unisolvence"
        ))
    })
}

/// Exhaustive (eigenvalue-based) lifting-constant estimate plus random
/// residual checks. For each cell the ratio
/// ||tau_tilde|| / (||grad v||^2 + h |mu|^2)^{1/2} is maximized exactly
/// over all (v, mu) by a generalized symmetric eigenproblem; random draws
/// then double-check the moment conditions and never beat the bound.
pub fn lifting_probe(
    mesh: &Arc<Mesh>,
    re: &Arc<ReferenceElement>,
    seed: u64,
    draws_per_cell: usize,
) -> Result<ProbeReport> {
    let mut report = ProbeReport::new("flux_lifting");
    report.param("k", re.k as u64);
    report.param("cells", mesh.n_cells() as u64);
    report.param("seed", seed);
    report.param("draws_per_cell", draws_per_cell as u64);
    let degree = 2 * re.k + 6;
    let h = mesh.mesh_size();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let modes = re.n_edge_modes();
    let mut c_i_max = 0.0f64;
    let mut max_moment_residual = 0.0f64;
    let mut max_draw_excess = 0.0f64;

    for cell in 0..mesh.n_cells() {
        // active mu slots: interior edges of this cell
        let interior_edges: Vec<usize> = mesh
            .cell_edges(cell)
            .iter()
            .filter(|ce| !mesh.edge(ce.edge).is_boundary())
            .map(|ce| ce.edge)
            .collect();
        let nv = re.n_pk();
        let nm = interior_edges.len() * modes;
        // drop the constant scalar mode: it has zero gradient and no mu,
        // so it maps to zero and would make the denominator form singular
        let dim = (nv - 1) + nm;
        if dim == 0 {
            continue;
        }

        // columns of the lifting map and the two Gram forms
        let mut lift_cols = DMatrix::<C64>::zeros(re.n_rt(), dim);
        let mut denom = DMatrix::<f64>::zeros(dim, dim);
        let geo = mesh.cell_geometry(cell);
        let cell_rule = quadrature_triangle(degree);

        let basis_inputs = |col: usize| -> (DVector<C64>, Vec<DVector<C64>>) {
            let mut v = DVector::<C64>::zeros(nv);
            let mut mu: Vec<DVector<C64>> =
                interior_edges.iter().map(|_| DVector::zeros(modes)).collect();
            if col < nv - 1 {
                v[col + 1] = c64(1.0, 0.0);
            } else {
                let mcol = col - (nv - 1);
                mu[mcol / modes][mcol % modes] = c64(1.0, 0.0);
            }
            (v, mu)
        };

        for col in 0..dim {
            let (v, mu) = basis_inputs(col);
            let mu_fn = |edge_id: usize, tg: f64| -> C64 {
                match interior_edges.iter().position(|&e| e == edge_id) {
                    Some(pos) => {
                        let edge = mesh.edge(edge_id);
                        let scale = 1.0 / edge.length.sqrt();
                        re.pk_edge
                            .iter()
                            .zip(mu[pos].iter())
                            .map(|(q, &c)| c * (q.eval(tg) * scale))
                            .sum()
                    }
                    None => c64(0.0, 0.0),
                }
            };
            let tau = lift_flux(mesh, cell, re, &v, &mu_fn, degree)?;
            lift_cols.set_column(col, &tau);
        }

        // denominator Gram: ||grad v||^2_K + h |mu|^2_{edges}
        for (&p, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let mut grads = Vec::with_capacity(nv - 1);
            for jb in 1..nv {
                let gref = [
                    re.pk_grad[jb][0].eval(p[0], p[1]) / geo.det_b.sqrt(),
                    re.pk_grad[jb][1].eval(p[0], p[1]) / geo.det_b.sqrt(),
                ];
                grads.push(geo.push_gradient(gref));
            }
            for a in 0..nv - 1 {
                for b in 0..nv - 1 {
                    denom[(a, b)] +=
                        w * geo.det_b * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                }
            }
        }
        for (pos, &e) in interior_edges.iter().enumerate() {
            // multiplier basis is orthonormal on the edge
            let _ = e;
            for m in 0..modes {
                let idx = (nv - 1) + pos * modes + m;
                denom[(idx, idx)] += h;
            }
        }

        // numerator Gram: RT mass on the lifted columns
        let mut rt_mass = DMatrix::<f64>::zeros(re.n_rt(), re.n_rt());
        for (&p, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let mapped: Vec<[f64; 2]> = (0..re.n_rt())
                .map(|i| {
                    let v = re.rt[i].eval(p[0], p[1]);
                    geo.piola(v)
                })
                .collect();
            for a in 0..re.n_rt() {
                for b in 0..re.n_rt() {
                    rt_mass[(a, b)] +=
                        w * geo.det_b * (mapped[a][0] * mapped[b][0] + mapped[a][1] * mapped[b][1]);
                }
            }
        }
        let rt_mass_c = rt_mass.map(|x| c64(x, 0.0));
        let numer_c = lift_cols.adjoint() * &rt_mass_c * &lift_cols;
        // both Gram forms are real symmetric: the lifting map has real
        // matrix entries in these bases
        let numer = numer_c.map(|z| z.re);

        let chol = Cholesky::new(denom.clone()).ok_or_else(|| {
            Error::Verification(format!("lifting denominator Gram not positive on cell {cell}"))
        })?;
        let li = chol.l().clone().try_inverse().expect("triangular inverse");
        let scaled = &li * numer * li.transpose();
        let eig = SymmetricEigen::new(scaled);
        let lam_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let c_i_cell = lam_max.max(0.0).sqrt();
        c_i_max = c_i_max.max(c_i_cell);

        // random draws: residuals of the defining moments and the ratio
        for _ in 0..draws_per_cell {
            let v = DVector::from_fn(nv, |_, _| {
                c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            let mu_coeffs: Vec<DVector<C64>> = interior_edges
                .iter()
                .map(|_| {
                    DVector::from_fn(modes, |_, _| {
                        c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                    })
                })
                .collect();
            let mu_fn = |edge_id: usize, tg: f64| -> C64 {
                match interior_edges.iter().position(|&e| e == edge_id) {
                    Some(pos) => {
                        let edge = mesh.edge(edge_id);
                        let scale = 1.0 / edge.length.sqrt();
                        re.pk_edge
                            .iter()
                            .zip(mu_coeffs[pos].iter())
                            .map(|(q, &c)| c * (q.eval(tg) * scale))
                            .sum()
                    }
                    None => c64(0.0, 0.0),
                }
            };
            let tau = lift_flux(mesh, cell, re, &v, &mu_fn, degree)?;

            // independent residual check of the two moment conditions
            let res = lifting_moment_residual(mesh, cell, re, &tau, &v, &mu_fn, degree + 2);
            let v_scale = v.norm() + 1.0;
            max_moment_residual = max_moment_residual.max(res / v_scale);

            // ratio must not exceed the eigenvalue bound
            let tau_norm_sq = (tau.adjoint() * &rt_mass_c * &tau)[(0, 0)].re;
            let mut den = 0.0;
            for (&p, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
                let mut gx = c64(0.0, 0.0);
                let mut gy = c64(0.0, 0.0);
                for (g, &c) in re.pk_grad.iter().zip(v.iter()) {
                    gx += c * (g[0].eval(p[0], p[1]) / geo.det_b.sqrt());
                    gy += c * (g[1].eval(p[0], p[1]) / geo.det_b.sqrt());
                }
                let pq = geo.push_gradient([1.0, 0.0]);
                let qq = geo.push_gradient([0.0, 1.0]);
                let gp = [gx * pq[0] + gy * qq[0], gx * pq[1] + gy * qq[1]];
                den += w * geo.det_b * (gp[0].norm_sqr() + gp[1].norm_sqr());
            }
            for mc in &mu_coeffs {
                den += h * mc.iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
            if den > 1e-28 {
                let ratio = (tau_norm_sq / den).sqrt();
                max_draw_excess = max_draw_excess.max(ratio - c_i_cell);
            }
        }
    }

    report.estimates.insert("c_I".into(), c_i_max);
    report
        .residuals
        .insert("max_moment_residual".into(), max_moment_residual);
    report
        .residuals
        .insert("draw_ratio_excess_over_bound".into(), max_draw_excess.max(0.0));
    report.pass = max_moment_residual <= 1e-11 && max_draw_excess <= 1e-8;
    Ok(report)
}

/// Quadrature residual of the lifting conditions for a given tau: worst of
/// the interior moment mismatches against [P_{k-1}]^2 and the edge moment
/// mismatches against the multiplier space.
fn lifting_moment_residual(
    mesh: &Mesh,
    cell: usize,
    re: &ReferenceElement,
    tau: &DVector<C64>,
    v_coeffs: &DVector<C64>,
    mu: &dyn Fn(usize, f64) -> C64,
    degree: usize,
) -> f64 {
    let geo = mesh.cell_geometry(cell);
    let sqrt_det = geo.det_b.sqrt();
    let cell_rule = quadrature_triangle(degree);
    let edge_rule = quadrature_edge(degree);
    let mut worst = 0.0f64;

    // interior: (tau - grad v, p)_K = 0 for p in [P_{k-1}]^2
    for p in &re.pk_interior {
        let mut rx = c64(0.0, 0.0);
        let mut ry = c64(0.0, 0.0);
        for (&pt, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let pv = p.eval(pt[0], pt[1]) / sqrt_det;
            let mut tx = c64(0.0, 0.0);
            let mut ty = c64(0.0, 0.0);
            for (phi, &c) in re.rt.iter().zip(tau.iter()) {
                let val = geo.piola(phi.eval(pt[0], pt[1]));
                tx += c * val[0];
                ty += c * val[1];
            }
            let mut gx = c64(0.0, 0.0);
            let mut gy = c64(0.0, 0.0);
            for (g, &c) in re.pk_grad.iter().zip(v_coeffs.iter()) {
                gx += c * (g[0].eval(pt[0], pt[1]) / sqrt_det);
                gy += c * (g[1].eval(pt[0], pt[1]) / sqrt_det);
            }
            let pq = geo.push_gradient([1.0, 0.0]);
            let qq = geo.push_gradient([0.0, 1.0]);
            let gp = [gx * pq[0] + gy * qq[0], gx * pq[1] + gy * qq[1]];
            rx += (tx - gp[0]) * (pv * w * geo.det_b);
            ry += (ty - gp[1]) * (pv * w * geo.det_b);
        }
        worst = worst.max(rx.norm()).max(ry.norm());
    }

    // edges: <tau.n - mu, chi>_e = 0 for the multiplier basis
    for j in 0..3 {
        let ce = mesh.cell_edges(cell)[j];
        let edge = mesh.edge(ce.edge);
        let aligned = mesh.local_edge_aligned(cell, j);
        let traces = re.eval_rt_normal_trace(j, &edge_rule.points);
        let trace_scale = EDGE_LENGTHS[j] / edge.length;
        for m in 0..re.n_edge_modes() {
            let mut r = c64(0.0, 0.0);
            for (q, (&t, &w)) in edge_rule.points.iter().zip(&edge_rule.weights).enumerate() {
                let mut tn = c64(0.0, 0.0);
                for (i, &c) in tau.iter().enumerate() {
                    tn += c * (traces[i][q] * trace_scale);
                }
                let tg = if aligned { t } else { 1.0 - t };
                let chi = re.pk_edge[m].eval(tg) / edge.length.sqrt();
                r += (tn - mu(ce.edge, tg)) * (chi * w * edge.length);
            }
            worst = worst.max(r.norm());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// stability probe

/// Spectral summary of the condensed multiplier matrix S.
#[derive(Clone, Debug, Serialize)]
pub struct SchurSpectrumSummary {
    pub n: usize,
    pub singular_min: f64,
    pub singular_max: f64,
    pub symmetry_residual: f64,
    /// Eigenvalue range of the Hermitian part of iS; positive minimum means
    /// the field of values of iS stays in the right half plane.
    pub i_s_hermitian_min: f64,
    pub i_s_hermitian_max: f64,
    /// Relative norm of the skew-Hermitian part of iS.
    pub i_s_skew_fraction: f64,
}

/// Discrete stability and boundedness of the form in the energy norm, plus
/// the spectrum summary of S.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityProbeResult {
    pub c_a_estimate: f64,
    /// Exact operator norm of the energy-scaled form matrix.
    pub form_operator_norm: f64,
    /// Random-sample estimate of the boundedness constant.
    pub c_a_upper_sampled: f64,
    pub schur: SchurSpectrumSummary,
}

struct ZeroData;
impl ProblemData for ZeroData {
    fn f_tilde(&self, _p: [f64; 2]) -> C64 {
        c64(0.0, 0.0)
    }
    fn g(&self, _p: [f64; 2]) -> C64 {
        c64(0.0, 0.0)
    }
}

/// Real symmetric Gram matrix of the energy norm on the monolithic triple
/// DOF layout: |||x|||^2 = x^H H x.
fn energy_gram(mesh: &Mesh, re: &ReferenceElement, kappa: f64) -> DMatrix<f64> {
    let layout_nrt = re.n_rt();
    let layout_npk = re.n_pk();
    let modes = re.n_edge_modes();
    let n_cells = mesh.n_cells();
    let n_int = mesh.n_interior_edges();
    let total = n_cells * (layout_nrt + layout_npk) + n_int * modes;
    let sigma_dof = |c: usize, i: usize| c * layout_nrt + i;
    let u_dof = |c: usize, j: usize| n_cells * layout_nrt + c * layout_npk + j;
    let lambda_dof =
        |ord: usize, m: usize| n_cells * (layout_nrt + layout_npk) + ord * modes + m;

    let h = mesh.mesh_size();
    let cell_rule = quadrature_triangle(2 * re.k + 2);
    let edge_rule = quadrature_edge(2 * re.k + 2);
    let mut gram = DMatrix::<f64>::zeros(total, total);

    for cell in 0..n_cells {
        let geo = mesh.cell_geometry(cell);
        // kappa * RT mass
        for (&p, &w) in cell_rule.points.iter().zip(&cell_rule.weights) {
            let mapped: Vec<[f64; 2]> = (0..layout_nrt)
                .map(|i| geo.piola(re.rt[i].eval(p[0], p[1])))
                .collect();
            for a in 0..layout_nrt {
                for b in 0..layout_nrt {
                    gram[(sigma_dof(cell, a), sigma_dof(cell, b))] += kappa
                        * w
                        * geo.det_b
                        * (mapped[a][0] * mapped[b][0] + mapped[a][1] * mapped[b][1]);
                }
            }
            // kappa^{-1} grad gram (scalar basis orthonormal handles kappa term)
            let grads: Vec<[f64; 2]> = (0..layout_npk)
                .map(|j| {
                    let gref = [
                        re.pk_grad[j][0].eval(p[0], p[1]) / geo.det_b.sqrt(),
                        re.pk_grad[j][1].eval(p[0], p[1]) / geo.det_b.sqrt(),
                    ];
                    geo.push_gradient(gref)
                })
                .collect();
            for a in 0..layout_npk {
                for b in 0..layout_npk {
                    gram[(u_dof(cell, a), u_dof(cell, b))] += w
                        * geo.det_b
                        * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1])
                        / kappa;
                }
            }
        }
        for j in 0..layout_npk {
            gram[(u_dof(cell, j), u_dof(cell, j))] += kappa;
        }

        // (kappa h)^{-1} |mu - v|^2 per element-boundary side
        let tw = 1.0 / (kappa * h);
        for j in 0..3 {
            let ce = mesh.cell_edges(cell)[j];
            let edge = mesh.edge(ce.edge);
            let interior = mesh.interior_index(ce.edge);
            let aligned = mesh.local_edge_aligned(cell, j);
            for (&t, &w) in edge_rule.points.iter().zip(&edge_rule.weights) {
                let xhat = edge_point(j, t);
                let sqrt_det = geo.det_b.sqrt();
                let psi: Vec<f64> = (0..layout_npk)
                    .map(|jb| re.pk_cell[jb].eval(xhat[0], xhat[1]) / sqrt_det)
                    .collect();
                let chi: Vec<f64> = match interior {
                    Some(_) => {
                        let tg = if aligned { t } else { 1.0 - t };
                        (0..modes)
                            .map(|m| re.pk_edge[m].eval(tg) / edge.length.sqrt())
                            .collect()
                    }
                    None => vec![0.0; modes],
                };
                let ws = tw * w * edge.length;
                for a in 0..layout_npk {
                    for b in 0..layout_npk {
                        gram[(u_dof(cell, a), u_dof(cell, b))] += ws * psi[a] * psi[b];
                    }
                }
                if let Some(ord) = interior {
                    for m in 0..modes {
                        for mm in 0..modes {
                            gram[(lambda_dof(ord, m), lambda_dof(ord, mm))] +=
                                ws * chi[m] * chi[mm];
                        }
                        for b in 0..layout_npk {
                            gram[(lambda_dof(ord, m), u_dof(cell, b))] -= ws * chi[m] * psi[b];
                            gram[(u_dof(cell, b), lambda_dof(ord, m))] -= ws * chi[m] * psi[b];
                        }
                    }
                }
            }
        }
    }
    gram
}

/// Smallest/largest singular values of the form matrix scaled by the
/// energy Gram factor on both sides, plus a sampled boundedness ratio and
/// the S spectrum summary.
pub fn stability_probe(
    mesh: &Arc<Mesh>,
    re: &Arc<ReferenceElement>,
    kappa: f64,
    seed: u64,
    dense_cap: usize,
) -> Result<StabilityProbeResult> {
    let opts = GlobalOpts::default();
    let tables = opts.tables(re.clone());
    let (a_sparse, _rhs, layout) = assemble_monolithic(mesh, &tables, kappa, &ZeroData, &opts)?;
    let total = layout.total();
    if total > dense_cap {
        return Err(Error::SizeCap {
            what: "stability probe dense system".into(),
            size: total,
            cap: dense_cap,
        });
    }
    let a_dense = a_sparse.to_dense();
    let gram = energy_gram(mesh, re, kappa);

    let chol = Cholesky::new(gram.clone())
        .ok_or_else(|| Error::Verification("energy Gram not positive definite".into()))?;
    let l = chol.l();
    let l_c = l.map(|x| c64(x, 0.0));
    // T = L^{-1} A L^{-T}
    let t1 = l_c
        .clone()
        .solve_lower_triangular(&a_dense)
        .ok_or_else(|| Error::Verification("Gram factor solve failed".into()))?;
    let t2t = l_c
        .solve_lower_triangular(&t1.transpose())
        .ok_or_else(|| Error::Verification("Gram factor solve failed".into()))?;
    let t = t2t.transpose();
    let svd = SVD::new(t, false, false);
    let s_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let s_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);

    // sampled boundedness ratio |A(x;y)| / (|||x||| |||y|||)
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gram_c = gram.map(|x| c64(x, 0.0));
    let mut sampled = 0.0f64;
    for _ in 0..50 {
        let x = DVector::<C64>::from_fn(total, |_, _| {
            c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let y = DVector::<C64>::from_fn(total, |_, _| {
            c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let axy = (y.adjoint() * &a_dense * &x)[(0, 0)];
        let nx = (x.adjoint() * &gram_c * &x)[(0, 0)].re.sqrt();
        let ny = (y.adjoint() * &gram_c * &y)[(0, 0)].re.sqrt();
        sampled = sampled.max(axy.norm() / (nx * ny));
    }

    // condensed S spectrum
    let (system, _caches) =
        crate::global::assemble_condensed(mesh, &tables, kappa, &ZeroData, &opts)?;
    let s_dense = system.matrix.to_dense();
    let n = s_dense.nrows();
    let sym_res = system.matrix.symmetry_residual();
    let svd_s = SVD::new(s_dense.clone(), false, false);
    let s_sing_min = svd_s
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let s_sing_max = svd_s.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let i_s = s_dense.map(|z| z * c64(0.0, 1.0));
    let herm = (&i_s + i_s.adjoint()) * c64(0.5, 0.0);
    let skew = (&i_s - i_s.adjoint()) * c64(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let h_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let h_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let skew_frac = skew.norm() / i_s.norm().max(1e-300);

    Ok(StabilityProbeResult {
        c_a_estimate: s_min,
        form_operator_norm: s_max,
        c_a_upper_sampled: sampled,
        schur: SchurSpectrumSummary {
            n,
            singular_min: s_sing_min,
            singular_max: s_sing_max,
            symmetry_residual: sym_res,
            i_s_hermitian_min: h_min,
            i_s_hermitian_max: h_max,
            i_s_skew_fraction: skew_frac,
        },
    })
}

/// Projected-error ratio: energy norm of (flux projection - discrete flux,
/// scalar projection - discrete scalar, edge projection - multiplier) over
/// sqrt(kappa) times the flux projection's own error. The flux error bound
/// says this ratio stays bounded as the mesh refines. `None` when both
/// sides vanish (the exact solution lies in the discrete space).
pub fn projected_error_ratio(
    case: &ManufacturedCase,
    sol: &FieldSolution,
) -> Result<Option<f64>> {
    let proj = project_solution(case, &sol.mesh, &sol.re, 2 * sol.re.k + 8)?;
    let diff = triple_difference(&proj, sol);
    let numerator = energy_norm(&diff);
    let mut proj_err = 0.0f64;
    let rule = quadrature_triangle(2 * sol.re.k + 8);
    for cell in 0..sol.mesh.n_cells() {
        let geo = sol.mesh.cell_geometry(cell);
        for (&p, &w) in rule.points.iter().zip(&rule.weights) {
            let ph = proj.eval_sigma(cell, p);
            let ex = case.sigma(geo.map(p));
            proj_err += w
                * geo.det_b
                * ((ph[0] - ex[0]).norm_sqr() + (ph[1] - ex[1]).norm_sqr());
        }
    }
    let denominator = case.kappa.sqrt() * proj_err.sqrt();
    if numerator <= 1e-11 && denominator <= 1e-11 {
        return Ok(None);
    }
    Ok(Some(numerator / denominator))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global::{solve, GlobalOpts};
    use crate::mesh::{build_mesh, generate_structured};
    use crate::mms;
    use crate::refelem::build_reference_element;

    fn setup(n: usize, k: usize) -> (Arc<Mesh>, Arc<ReferenceElement>) {
        (
            Arc::new(generate_structured(n).unwrap()),
            Arc::new(build_reference_element(k).unwrap()),
        )
    }

    #[test]
    fn scalar_projection_reproduces_polynomials_and_is_orthogonal() {
        let (mesh, re) = setup(2, 1);
        // u in P_1 must be reproduced pointwise
        let f = |x: [f64; 2]| c64(1.5 - 2.0 * x[0] + 0.5 * x[1], 3.0 * x[0]);
        for cell in 0..mesh.n_cells() {
            let coeffs = project_pk(&f, &mesh, cell, &re, 8);
            let geo = mesh.cell_geometry(cell);
            for &p in &[[0.2, 0.3], [0.5, 0.1], [0.1, 0.7]] {
                let mut v = c64(0.0, 0.0);
                for (j, poly) in re.pk_cell.iter().enumerate() {
                    v += coeffs[j] * (poly.eval(p[0], p[1]) / geo.det_b.sqrt());
                }
                assert!((v - f(geo.map(p))).norm() < 1e-12);
            }
        }
        // orthogonality against the basis for a transcendental function
        let g = |x: [f64; 2]| c64((3.0 * x[0]).sin(), (2.0 * x[1]).cos());
        let rule = quadrature_triangle(12);
        for cell in 0..mesh.n_cells() {
            let coeffs = project_pk(&g, &mesh, cell, &re, 12);
            let geo = mesh.cell_geometry(cell);
            for j in 0..re.n_pk() {
                let mut resid = c64(0.0, 0.0);
                for (&p, &w) in rule.points.iter().zip(&rule.weights) {
                    let psi = re.pk_cell[j].eval(p[0], p[1]) / geo.det_b.sqrt();
                    let mut ph = c64(0.0, 0.0);
                    for (l, poly) in re.pk_cell.iter().enumerate() {
                        ph += coeffs[l] * (poly.eval(p[0], p[1]) / geo.det_b.sqrt());
                    }
                    resid += (g(geo.map(p)) - ph) * psi * (w * geo.det_b);
                }
                assert!(resid.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_value_projection_on_reference_triangle() {
        // single reference triangle, k=0: the P0 coefficient against the
        // orthonormal constant equals sqrt(2) * integral of x^2
        let mesh = Arc::new(
            build_mesh(
                vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
                vec![[0, 1, 2]],
            )
            .unwrap(),
        );
        let re = Arc::new(build_reference_element(0).unwrap());
        let f = |x: [f64; 2]| c64(x[0] * x[0], 0.0);
        let coeffs = project_pk(&f, &mesh, 0, &re, 8);
        // integral of x^2 over the unit triangle is 1/12
        assert!((coeffs[0] - c64(2.0f64.sqrt() / 12.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn edge_projection_reproduces_and_is_orthogonal() {
        let (mesh, re) = setup(2, 1);
        let f = |x: [f64; 2]| c64(2.0 * x[0] - x[1] + 0.4, x[0]);
        for e in 0..mesh.n_edges() {
            let coeffs = project_edge(&f, &mesh, e, &re, 8);
            let edge = mesh.edge(e);
            let ga = mesh.vertex(edge.vertices[0]);
            let gb = mesh.vertex(edge.vertices[1]);
            for &t in &[0.2, 0.7] {
                let x = [ga[0] + t * (gb[0] - ga[0]), ga[1] + t * (gb[1] - ga[1])];
                let mut v = c64(0.0, 0.0);
                for (m, q) in re.pk_edge.iter().enumerate() {
                    v += coeffs[m] * (q.eval(t) / edge.length.sqrt());
                }
                assert!((v - f(x)).norm() < 1e-12, "edge {e} t {t}");
            }
        }
    }

    #[test]
    fn flux_projection_reproduces_discrete_fluxes() {
        let mesh = Arc::new(
            build_mesh(
                vec![[0.0, 0.0], [1.1, -0.05], [0.9, 1.2], [-0.1, 0.8]],
                vec![[0, 1, 2], [0, 2, 3]],
            )
            .unwrap(),
        );
        for k in 0..=2usize {
            let re = Arc::new(build_reference_element(k).unwrap());
            for cell in 0..2 {
                let geo = mesh.cell_geometry(cell);
                let coeffs =
                    DVector::<C64>::from_fn(re.n_rt(), |i, _| c64(0.3 + i as f64 * 0.17, -0.4));
                let f = |x: [f64; 2]| -> [C64; 2] {
                    // invert the affine map, evaluate the RT field, push forward
                    let rel = [x[0] - geo.p0[0], x[1] - geo.p0[1]];
                    let xr = [
                        (geo.b[1][1] * rel[0] - geo.b[0][1] * rel[1]) / geo.det_b,
                        (-geo.b[1][0] * rel[0] + geo.b[0][0] * rel[1]) / geo.det_b,
                    ];
                    let mut vx = c64(0.0, 0.0);
                    let mut vy = c64(0.0, 0.0);
                    for (phi, &c) in re.rt.iter().zip(coeffs.iter()) {
                        let v = phi.eval(xr[0], xr[1]);
                        vx += c * v[0];
                        vy += c * v[1];
                    }
                    [
                        (vx * geo.b[0][0] + vy * geo.b[0][1]) / geo.det_b,
                        (vx * geo.b[1][0] + vy * geo.b[1][1]) / geo.det_b,
                    ]
                };
                let got = project_rt(&f, &mesh, cell, &re, 2 * k + 6).unwrap();
                assert!((&got - &coeffs).norm() < 1e-11, "k {k} cell {cell}");
            }
        }
    }

    #[test]
    fn flux_projection_commutes_with_divergence() {
        let (mesh, re) = setup(2, 1);
        let f = |x: [f64; 2]| -> [C64; 2] {
            [
                c64((2.0 * x[0]).sin(), x[1]),
                c64(x[0] * x[1], (1.5 * x[1]).cos()),
            ]
        };
        let div_f = |x: [f64; 2]| -> C64 {
            c64(2.0 * (2.0 * x[0]).cos(), 0.0) + c64(x[0], 1.5 * (1.5 * x[1]).sin() * (-1.0))
        };
        let degree = 12;
        let rule = quadrature_triangle(degree);
        for cell in 0..mesh.n_cells() {
            let rt_coeffs = project_rt(&f, &mesh, cell, &re, degree).unwrap();
            let pk_coeffs = project_pk(&div_f, &mesh, cell, &re, degree);
            let geo = mesh.cell_geometry(cell);
            let mut worst: f64 = 0.0;
            for (&p, &w) in rule.points.iter().zip(&rule.weights) {
                let mut div_h = c64(0.0, 0.0);
                for (phi, &c) in re.rt.iter().zip(rt_coeffs.iter()) {
                    div_h += c * (phi.div.eval(p[0], p[1]) / geo.det_b);
                }
                let mut pi_div = c64(0.0, 0.0);
                for (j, poly) in re.pk_cell.iter().enumerate() {
                    pi_div += pk_coeffs[j] * (poly.eval(p[0], p[1]) / geo.det_b.sqrt());
                }
                worst = worst.max((div_h - pi_div).norm() * (w * geo.det_b));
            }
            assert!(worst < 1e-11, "cell {cell}: {worst:.2e}");
        }
    }

    #[test]
    fn projections_are_idempotent() {
        let (mesh, re) = setup(2, 1);
        let kappa = 3.0;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_triple(&mesh, &re, kappa, &mut rng, false);
        // project the discrete fields; must reproduce the coefficients
        for cell in 0..mesh.n_cells() {
            let xc = x.clone_for_test();
            let f = |p: [f64; 2]| -> C64 {
                let geo = mesh.cell_geometry(cell);
                let rel = [p[0] - geo.p0[0], p[1] - geo.p0[1]];
                let xr = [
                    (geo.b[1][1] * rel[0] - geo.b[0][1] * rel[1]) / geo.det_b,
                    (-geo.b[1][0] * rel[0] + geo.b[0][0] * rel[1]) / geo.det_b,
                ];
                xc.eval_u(cell, xr)
            };
            let coeffs = project_pk(&f, &mesh, cell, &re, 2 * re.k + 6);
            assert!((&coeffs - &x.u[cell]).norm() < 1e-12);
        }
    }

    #[test]
    fn energy_norm_hand_example_and_homogeneity() {
        for n in [2usize, 4] {
            let (mesh, re) = setup(n, 0);
            let h = mesh.mesh_size();
            let one = |_: [f64; 2]| c64(1.0, 0.0);
            let u: Vec<DVector<C64>> = (0..mesh.n_cells())
                .map(|c| project_pk(&one, &mesh, c, &re, 4))
                .collect();
            let lambda: Vec<DVector<C64>> = (0..mesh.n_edges())
                .filter(|&e| !mesh.edge(e).is_boundary())
                .map(|e| project_edge(&one, &mesh, e, &re, 4))
                .collect();
            let x = FieldSolution {
                mesh: mesh.clone(),
                re: re.clone(),
                kappa: 1.0,
                sigma: (0..mesh.n_cells()).map(|_| DVector::zeros(re.n_rt())).collect(),
                u,
                lambda,
            };
            let want = (1.0 + 4.0 / h).sqrt();
            let got = energy_norm(&x);
            assert!(
                (got - want).abs() < 1e-10 * want,
                "n {n}: got {got}, want {want}"
            );
            let scaled = triple_scaled(&x, c64(-2.5, 0.0));
            assert!((energy_norm(&scaled) - 2.5 * got).abs() < 1e-10 * got);
        }
    }

    #[test]
    fn form_vanishes_on_zero_and_matches_monolithic_matrix() {
        let (mesh, re) = setup(2, 1);
        let kappa = 2.0;
        let opts = GlobalOpts::default();
        let tables = opts.tables(re.clone());
        let (a, _rhs, layout) =
            assemble_monolithic(&mesh, &tables, kappa, &ZeroData, &opts).unwrap();
        let a_dense = a.to_dense();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let zero = triple_scaled(&random_triple(&mesh, &re, kappa, &mut rng, false), c64(0.0, 0.0));
        let y0 = random_triple(&mesh, &re, kappa, &mut rng, false);
        assert!(evaluate_form_a(&zero, &y0).norm() < 1e-14);

        for _ in 0..5 {
            let x = random_triple(&mesh, &re, kappa, &mut rng, false);
            let y = random_triple(&mesh, &re, kappa, &mut rng, false);
            let quad = evaluate_form_a(&x, &y);
            // matrix path: y^H (A xvec), both in the monolithic layout
            let xv = monolithic_vec(&x, &layout);
            let yv = monolithic_vec(&y, &layout);
            let matrix = (yv.adjoint() * &a_dense * &xv)[(0, 0)];
            let scale = quad.norm().max(1.0);
            assert!(
                (quad - matrix).norm() < 1e-11 * scale,
                "{quad} vs {matrix}"
            );
        }
    }

    fn monolithic_vec(
        x: &FieldSolution,
        layout: &crate::global::MonolithicLayout,
    ) -> DVector<C64> {
        let mut v = DVector::<C64>::zeros(layout.total());
        for c in 0..layout.n_cells {
            for i in 0..layout.n_rt {
                v[layout.sigma_dof(c, i)] = x.sigma[c][i];
            }
            for j in 0..layout.n_pk {
                v[layout.u_dof(c, j)] = x.u[c][j];
            }
        }
        for ord in 0..layout.n_interior {
            for m in 0..layout.modes {
                v[layout.lambda_dof(ord, m)] = x.lambda[ord][m];
            }
        }
        v
    }

    #[test]
    fn energy_identity_exact_for_phased_real_triples() {
        let (mesh, re) = setup(2, 1);
        let report = energy_identity_probe(&mesh, &re, 3.0, 30, 42);
        assert!(report.pass, "{:?}", report.residuals);
        assert!(report.residuals["max_relative_error"] <= 1e-12);
    }

    /// Frozen counterexample: on the reference triangle with kappa = 1,
    /// sigma = (x, y), u = i, lambda absent, the six-term value against the
    /// identity's test triple is kappa ||sigma||^2 + kappa ||u||^2 - 2,
    /// because 2 Im (div sigma, u) = -2. The gap formula must reproduce it.
    #[test]
    fn energy_identity_gap_closed_form() {
        let mesh = Arc::new(
            build_mesh(
                vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
                vec![[0, 1, 2]],
            )
            .unwrap(),
        );
        let re = Arc::new(build_reference_element(1).unwrap());
        let sigma_eval = |x: [f64; 2]| -> [C64; 2] { [c64(x[0], 0.0), c64(x[1], 0.0)] };
        let u_eval = |_: [f64; 2]| c64(0.0, 1.0);
        let sigma = vec![project_rt(&sigma_eval, &mesh, 0, &re, 8).unwrap()];
        let u = vec![project_pk(&u_eval, &mesh, 0, &re, 8)];
        let x = FieldSolution {
            mesh: mesh.clone(),
            re: re.clone(),
            kappa: 1.0,
            sigma,
            u,
            lambda: vec![],
        };
        let y = FieldSolution {
            mesh: mesh.clone(),
            re: re.clone(),
            kappa: 1.0,
            sigma: x.sigma.iter().map(|v| v * c64(0.0, 1.0)).collect(),
            u: x.u.iter().map(|v| v * c64(0.0, -1.0)).collect(),
            lambda: vec![],
        };
        let lhs = evaluate_form_a(&x, &y);
        let mass = kappa_l2_mass(&x); // 1/6 + 1/2
        assert!((mass - (1.0 / 6.0 + 0.5)).abs() < 1e-13);
        assert!((lhs - c64(mass - 2.0, 0.0)).norm() < 1e-12, "lhs {lhs}");
        assert!((energy_identity_gap(&x) - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn consistency_probe_passes_on_smooth_cases() {
        let (mesh, re) = setup(4, 0);
        let case = mms::plane_wave(5.0, 0.3).unwrap();
        let report = consistency_probe(&case, &mesh, &re).unwrap();
        assert!(report.pass, "{:?}", report.residuals);

        let (mesh, re) = setup(2, 1);
        let case = mms::sine_product(5.0).unwrap();
        let report = consistency_probe(&case, &mesh, &re).unwrap();
        assert!(report.pass, "{:?}", report.residuals);
    }

    #[test]
    fn conservation_zero_data_and_solved_case() {
        let (mesh, re) = setup(4, 0);
        let case = mms::sine_product(5.0).unwrap();
        let opts = GlobalOpts::default();
        let (sol, _) = solve(&mesh, &re, case.kappa, &case, &opts).unwrap();
        let (max_r, total, scale) = conservation_residuals(&sol, &case);
        assert!(max_r <= 1e-10 * scale, "max {max_r:.3e} scale {scale:.3e}");
        assert!(total <= 1e-9 * scale);
    }

    #[test]
    fn shared_flux_balance_matches_own_trace_and_flags_faulty_coupling() {
        let (mesh, re) = setup(4, 1);
        let case = mms::plane_wave(5.0, 0.3).unwrap();
        let opts = GlobalOpts::default();
        let (sol, _) = solve(&mesh, &re, case.kappa, &case, &opts).unwrap();
        let (own, _, own_scale) = conservation_residuals(&sol, &case);
        let (shared, _, scale) = shared_flux_conservation(&sol, &case);
        assert!(shared <= 1e-10 * scale, "shared {shared:.3e} scale {scale:.3e}");
        assert!((own - shared).abs() <= 1e-10 * own_scale.max(scale));

        let faulty = GlobalOpts {
            d_sign_fault: true,
            ..GlobalOpts::default()
        };
        let (bad, _) = solve(&mesh, &re, case.kappa, &case, &faulty).unwrap();
        let (bad_own, _, bad_scale) = conservation_residuals(&bad, &case);
        let (bad_shared, _, _) = shared_flux_conservation(&bad, &case);
        assert!(
            bad_own <= 1e-10 * bad_scale,
            "the constant-mode balance is structural: {bad_own:.3e}"
        );
        assert!(
            bad_shared > 1e-3 * bad_scale,
            "shared-flux balance must detect the broken coupling: {bad_shared:.3e}"
        );
    }

    #[test]
    fn jump_moments_vanish_on_healthy_solve_and_flag_faulty_assembly() {
        let (mesh, re) = setup(4, 0);
        let case = mms::plane_wave(5.0, 0.3).unwrap();
        let opts = GlobalOpts::default();
        let (sol, _) = solve(&mesh, &re, case.kappa, &case, &opts).unwrap();
        let (jump, scale) = flux_jump_moments(&sol);
        assert!(jump <= 1e-10 * scale, "jump {jump:.3e} scale {scale:.3e}");

        let faulty = GlobalOpts {
            d_sign_fault: true,
            ..GlobalOpts::default()
        };
        let (bad, _) = solve(&mesh, &re, case.kappa, &case, &faulty).unwrap();
        let (bad_jump, bad_scale) = flux_jump_moments(&bad);
        assert!(
            bad_jump > 1e-3 * bad_scale,
            "fault injection must break flux continuity: {bad_jump:.3e}"
        );
    }

    #[test]
    fn lifting_probe_residuals_and_h_stability() {
        let (mesh4, re) = setup(4, 0);
        let r4 = lifting_probe(&mesh4, &re, 42, 3).unwrap();
        assert!(r4.pass, "{:?}", r4.residuals);
        let (mesh8, _) = setup(8, 0);
        let r8 = lifting_probe(&mesh8, &re, 43, 3).unwrap();
        let c4 = r4.estimates["c_I"];
        let c8 = r8.estimates["c_I"];
        assert!(
            (c4 - c8).abs() / c4 < 0.1,
            "lifting constant drifted: {c4} vs {c8}"
        );
    }

    #[test]
    fn stability_probe_positive_and_consistent() {
        let (mesh, re) = setup(2, 0);
        let r = stability_probe(&mesh, &re, 5.0, 42, 2000).unwrap();
        assert!(r.c_a_estimate > 0.0);
        assert!(r.form_operator_norm >= r.c_a_estimate);
        // sampled ratios are bounded by the exact operator norm
        assert!(r.c_a_upper_sampled <= r.form_operator_norm * (1.0 + 1e-10));
        assert!(r.schur.symmetry_residual < 1e-11);
        assert!(r.schur.singular_min > 0.0);
    }

    #[test]
    fn projected_error_ratio_guards_exact_case() {
        let (mesh, re) = setup(2, 1);
        let case = mms::polynomial_case(1, 4.0).unwrap();
        let opts = GlobalOpts::default();
        let (sol, _) = solve(&mesh, &re, case.kappa, &case, &opts).unwrap();
        let ratio = projected_error_ratio(&case, &sol).unwrap();
        assert!(ratio.is_none(), "exact case must be guarded, got {ratio:?}");

        let case = mms::plane_wave(5.0, 0.3).unwrap();
        let (mesh, re) = setup(4, 0);
        let (sol, _) = solve(&mesh, &re, case.kappa, &case, &opts).unwrap();
        let ratio = projected_error_ratio(&case, &sol).unwrap();
        assert!(ratio.unwrap() > 0.0);
    }
}

#[cfg(test)]
impl FieldSolution {
    fn clone_for_test(&self) -> FieldSolution {
        FieldSolution {
            mesh: self.mesh.clone(),
            re: self.re.clone(),
            kappa: self.kappa,
            sigma: self.sigma.clone(),
            u: self.u.clone(),
            lambda: self.lambda.clone(),
        }
    }
}
