//! Per-element work: block assembly on one triangle and static condensation
//! down to the edge multipliers.
//!
//! For a cell K with flux basis `phi_i` (Piola-mapped RT_k), scalar basis
//! `psi_j` (mapped so it stays L2-orthonormal on K), and multiplier basis
//! `chi_m` on each interior edge (orthonormal in arc length, parametrized by
//! the global sorted-vertex direction), the element blocks are
//!
//! ```text
//! A[i][j]  =  i kappa (phi_j, phi_i)_K
//! B[i][j]  = -(psi_j, div phi_i)_K
//! D[i][m]  =  <chi_m, phi_i . n_K> over interior edges of K
//! E[j][l]  = -i kappa (psi_l, psi_j)_K          (= -i kappa I up to quadrature)
//! F1[i]    = -<g, phi_i . n_K> over boundary edges of K
//! F2[j]    = -(f, psi_j)_K with f = i f_tilde / kappa
//! ```
//!
//! Condensation eliminates (sigma, u): M = A - B E^{-1} B^T, the local Schur
//! block S = D^T M^{-1} D, and G = D^T M^{-1} (F1 - B E^{-1} F2). B and D are
//! real by construction, so their conjugate transposes are plain transposes;
//! the types make that explicit.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::refelem::quad::{quadrature_edge, quadrature_triangle, EdgeRule, TriRule};
use crate::refelem::{ReferenceElement, EDGE_LENGTHS};
use crate::{c64, C64, ProblemData};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Reference-basis values tabulated at quadrature points, shared by all
/// cells of a solve. Two rules are kept: `matrix` for the polynomial blocks
/// and a finer `rhs` rule for integrals against user data.
pub struct ReferenceTables {
    pub re: Arc<ReferenceElement>,
    pub cell_rule: TriRule,
    pub edge_rule: EdgeRule,
    pub rhs_cell_rule: TriRule,
    pub rhs_edge_rule: EdgeRule,
    /// psi_hat at cell_rule points, [basis][point].
    pk: Vec<Vec<f64>>,
    /// phi_hat at cell_rule points.
    rt: Vec<Vec<[f64; 2]>>,
    /// div phi_hat at cell_rule points.
    rt_div: Vec<Vec<f64>>,
    /// psi_hat at rhs_cell_rule points.
    pk_rhs: Vec<Vec<f64>>,
    /// Normal traces phi_hat . n_j at edge_rule points, [edge][basis][point].
    rt_trace: [Vec<Vec<f64>>; 3],
    /// Same at rhs_edge_rule points.
    rt_trace_rhs: [Vec<Vec<f64>>; 3],
    /// chi_hat at edge_rule points, and at the flipped parameter 1 - t.
    chi: Vec<Vec<f64>>,
    chi_flip: Vec<Vec<f64>>,
}

impl ReferenceTables {
    pub fn new(re: Arc<ReferenceElement>, matrix_degree: usize, rhs_degree: usize) -> Self {
        let cell_rule = quadrature_triangle(matrix_degree);
        let edge_rule = quadrature_edge(matrix_degree);
        let rhs_cell_rule = quadrature_triangle(rhs_degree);
        let rhs_edge_rule = quadrature_edge(rhs_degree);

        let eval_pk = |rule: &TriRule| {
            re.pk_cell
                .iter()
                .map(|p| rule.points.iter().map(|&[x, y]| p.eval(x, y)).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        let pk = eval_pk(&cell_rule);
        let pk_rhs = eval_pk(&rhs_cell_rule);
        let rt = re
            .rt
            .iter()
            .map(|phi| cell_rule.points.iter().map(|&[x, y]| phi.eval(x, y)).collect())
            .collect();
        let rt_div = re
            .rt
            .iter()
            .map(|phi| cell_rule.points.iter().map(|&[x, y]| phi.div.eval(x, y)).collect())
            .collect();
        let rt_trace = std::array::from_fn(|j| re.eval_rt_normal_trace(j, &edge_rule.points));
        let rt_trace_rhs =
            std::array::from_fn(|j| re.eval_rt_normal_trace(j, &rhs_edge_rule.points));
        let chi = re
            .pk_edge
            .iter()
            .map(|q| edge_rule.points.iter().map(|&t| q.eval(t)).collect())
            .collect();
        let chi_flip = re
            .pk_edge
            .iter()
            .map(|q| edge_rule.points.iter().map(|&t| q.eval(1.0 - t)).collect())
            .collect();

        ReferenceTables {
            re,
            cell_rule,
            edge_rule,
            rhs_cell_rule,
            rhs_edge_rule,
            pk,
            rt,
            rt_div,
            pk_rhs,
            rt_trace,
            rt_trace_rhs,
            chi,
            chi_flip,
        }
    }

    /// Default quadrature degrees for polynomial blocks and data integrals.
    pub fn default_degrees(k: usize) -> (usize, usize) {
        (2 * k + 2, 2 * k + 6)
    }
}

/// Element blocks of one cell, plus the interior-edge layout of `d`.
pub struct LocalBlocks {
    pub a: DMatrix<C64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<C64>,
    pub f1: DVector<C64>,
    pub f2: DVector<C64>,
    /// Global edge id behind each group of (k+1) consecutive columns of `d`,
    /// in local edge order, boundary edges skipped.
    pub lambda_edges: Vec<usize>,
}

/// Assembles the blocks of `cell`. `d_sign_fault` flips the flux continuity
/// coupling on the far side of every interior edge; it exists so the
/// verification harness can prove the conservation and jump probes actually
/// detect a broken assembly, and must stay false otherwise.
pub fn assemble_local_blocks(
    mesh: &Mesh,
    cell: usize,
    tables: &ReferenceTables,
    kappa: f64,
    data: &dyn ProblemData,
    d_sign_fault: bool,
) -> LocalBlocks {
    let re = &tables.re;
    let geo = mesh.cell_geometry(cell);
    let (n_rt, n_pk, modes) = (re.n_rt(), re.n_pk(), re.n_edge_modes());
    let det = geo.det_b;
    let sqrt_det = det.sqrt();

    // physical flux values at cell quadrature points: (B phi_hat) / det B,
    // but A only needs B phi_hat, so the 1/det factors are pulled out front
    let nq = tables.cell_rule.points.len();
    let mut mapped = vec![[0.0f64; 2]; n_rt * nq];
    for i in 0..n_rt {
        for q in 0..nq {
            let v = tables.rt[i][q];
            mapped[i * nq + q] = [
                geo.b[0][0] * v[0] + geo.b[0][1] * v[1],
                geo.b[1][0] * v[0] + geo.b[1][1] * v[1],
            ];
        }
    }

    let ik = c64(0.0, kappa);
    let mut a = DMatrix::<C64>::zeros(n_rt, n_rt);
    for i in 0..n_rt {
        for j in 0..=i {
            let mut s = 0.0;
            for q in 0..nq {
                let vi = mapped[i * nq + q];
                let vj = mapped[j * nq + q];
                s += tables.cell_rule.weights[q] * (vi[0] * vj[0] + vi[1] * vj[1]);
            }
            let val = ik * (s / det);
            a[(i, j)] = val;
            a[(j, i)] = val;
        }
    }

    let mut b = DMatrix::<f64>::zeros(n_rt, n_pk);
    for i in 0..n_rt {
        for j in 0..n_pk {
            let mut s = 0.0;
            for q in 0..nq {
                s += tables.cell_rule.weights[q] * tables.pk[j][q] * tables.rt_div[i][q];
            }
            b[(i, j)] = -s / sqrt_det;
        }
    }

    let mut e = DMatrix::<C64>::zeros(n_pk, n_pk);
    for j in 0..n_pk {
        for l in 0..=j {
            let mut s = 0.0;
            for q in 0..nq {
                s += tables.cell_rule.weights[q] * tables.pk[j][q] * tables.pk[l][q];
            }
            // the det B factors of the two mapped basis functions cancel the
            // volume element exactly
            let val = -ik * s;
            e[(j, l)] = val;
            e[(l, j)] = val;
        }
    }

    // flux continuity coupling, interior edges only
    let mut lambda_edges = Vec::new();
    for j in 0..3 {
        let ce = mesh.cell_edges(cell)[j];
        if !mesh.edge(ce.edge).is_boundary() {
            lambda_edges.push(ce.edge);
        }
    }
    let mut d = DMatrix::<f64>::zeros(n_rt, lambda_edges.len() * modes);
    let mut col0 = 0;
    for j in 0..3 {
        let ce = mesh.cell_edges(cell)[j];
        let edge = mesh.edge(ce.edge);
        if edge.is_boundary() {
            continue;
        }
        let aligned = mesh.local_edge_aligned(cell, j);
        let chi = if aligned { &tables.chi } else { &tables.chi_flip };
        let scale = EDGE_LENGTHS[j] / edge.length.sqrt();
        let fault_flip = if d_sign_fault && ce.sign < 0.0 { -1.0 } else { 1.0 };
        for m in 0..modes {
            for i in 0..n_rt {
                let mut s = 0.0;
                for (q, &w) in tables.edge_rule.weights.iter().enumerate() {
                    s += w * chi[m][q] * tables.rt_trace[j][i][q];
                }
                d[(i, col0 + m)] = fault_flip * scale * s;
            }
        }
        col0 += modes;
    }

    // Dirichlet data on boundary edges
    let mut f1 = DVector::<C64>::zeros(n_rt);
    for j in 0..3 {
        let ce = mesh.cell_edges(cell)[j];
        if !mesh.edge(ce.edge).is_boundary() {
            continue;
        }
        let ref_len = EDGE_LENGTHS[j];
        for (q, (&t, &w)) in tables
            .rhs_edge_rule
            .points
            .iter()
            .zip(&tables.rhs_edge_rule.weights)
            .enumerate()
        {
            let x = geo.map(crate::refelem::edge_point(j, t));
            let gv = data.g(x);
            for i in 0..n_rt {
                f1[i] -= gv * (w * ref_len * tables.rt_trace_rhs[j][i][q]);
            }
        }
    }

    // volume load, f = i f_tilde / kappa
    let mut f2 = DVector::<C64>::zeros(n_pk);
    let load_scale = c64(0.0, 1.0 / kappa) * sqrt_det;
    for (q, (&p, &w)) in tables
        .rhs_cell_rule
        .points
        .iter()
        .zip(&tables.rhs_cell_rule.weights)
        .enumerate()
    {
        let fv = data.f_tilde(geo.map(p));
        for j in 0..n_pk {
            f2[j] -= load_scale * fv * (w * tables.pk_rhs[j][q]);
        }
    }

    LocalBlocks {
        a,
        b,
        d,
        e,
        f1,
        f2,
        lambda_edges,
    }
}

/// Result of eliminating (sigma, u) from one element: the local multiplier
/// Schur block, its right-hand side, and everything needed to back out the
/// element fields once the multipliers are known.
pub struct CondensedLocal {
    pub s: DMatrix<C64>,
    pub g: DVector<C64>,
    pub lambda_edges: Vec<usize>,
    m_inv: DMatrix<C64>,
    e_inv: DMatrix<C64>,
    /// F1 - B E^{-1} F2.
    y0: DVector<C64>,
    d: DMatrix<C64>,
    bt: DMatrix<C64>,
    f2: DVector<C64>,
}

/// 1-norm of a complex matrix (max column sum of moduli).
fn norm1(m: &DMatrix<C64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn condense(blocks: &LocalBlocks, kappa: f64, cell: usize) -> Result<CondensedLocal> {
    let b_c = blocks.b.map(|x| c64(x, 0.0));
    let d_c = blocks.d.map(|x| c64(x, 0.0));

    let e_inv = blocks
        .e
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::LocalResonance {
            cell,
            kappa,
            rcond: 0.0,
        })?;
    let m = &blocks.a - &b_c * &e_inv * b_c.transpose();
    let m_inv = m.clone().lu().try_inverse().ok_or(Error::LocalResonance {
        cell,
        kappa,
        rcond: 0.0,
    })?;
    let rcond = 1.0 / (norm1(&m) * norm1(&m_inv));
    if rcond < 1e-12 {
        return Err(Error::LocalResonance { cell, kappa, rcond });
    }

    let y0 = &blocks.f1 - &b_c * (&e_inv * &blocks.f2);
    let s = d_c.transpose() * (&m_inv * &d_c);
    let g = d_c.transpose() * (&m_inv * &y0);

    Ok(CondensedLocal {
        s,
        g,
        lambda_edges: blocks.lambda_edges.clone(),
        m_inv,
        e_inv,
        y0,
        d: d_c,
        bt: b_c.transpose(),
        f2: blocks.f2.clone(),
    })
}

impl CondensedLocal {
    /// Recovers (sigma_K, u_K) from this element's multiplier values.
    pub fn back_substitute(&self, lambda: &DVector<C64>) -> (DVector<C64>, DVector<C64>) {
        let rhs = &self.y0 - &self.d * lambda;
        let sigma = &self.m_inv * rhs;
        let u = &self.e_inv * (&self.f2 - &self.bt * &sigma);
        (sigma, u)
    }

    pub fn n_lambda(&self) -> usize {
        self.s.nrows()
    }
}
