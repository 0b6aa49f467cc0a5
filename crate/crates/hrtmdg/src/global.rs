//! Global multiplier numbering, assembly and solution of the condensed
//! system, field recovery, and the uncondensed (monolithic) solve that
//! serves as the condensation-correctness oracle.

use crate::error::{Error, Result};
use crate::local::{assemble_local_blocks, condense, CondensedLocal, ReferenceTables};
use crate::mesh::Mesh;
use crate::refelem::ReferenceElement;
use crate::sparse::{self, CsrMatrix, SolveStats, SolverKind};
use crate::{c64, C64, ProblemData};
use nalgebra::DVector;
use rayon::prelude::*;
use std::sync::Arc;

/// Multiplier DOF numbering: interior edges in mesh order, (k+1) modes per
/// edge, index = ordinal * modes + mode.
#[derive(Clone, Copy, Debug)]
pub struct DofMap {
    modes: usize,
    n_interior: usize,
}

impl DofMap {
    pub fn new(mesh: &Mesh, k: usize) -> Self {
        DofMap {
            modes: k + 1,
            n_interior: mesh.n_interior_edges(),
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.modes * self.n_interior
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn index(&self, interior_ordinal: usize, mode: usize) -> usize {
        debug_assert!(interior_ordinal < self.n_interior && mode < self.modes);
        interior_ordinal * self.modes + mode
    }
}

/// The assembled multiplier system S lambda = G.
pub struct CondensedSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<C64>,
    pub dof_map: DofMap,
}

/// Knobs for a solve. `quad_matrix_degree` and `quad_rhs_degree` override
/// the defaults (2k+2 and 2k+6). `d_sign_fault` is the verification
/// harness's deliberate assembly defect; see assemble_local_blocks.
#[derive(Clone, Debug)]
pub struct GlobalOpts {
    pub solver: SolverKind,
    pub quad_matrix_degree: Option<usize>,
    pub quad_rhs_degree: Option<usize>,
    pub d_sign_fault: bool,
    /// Unknown cap for the monolithic oracle path.
    pub monolithic_cap: usize,
}

impl Default for GlobalOpts {
    fn default() -> Self {
        GlobalOpts {
            solver: SolverKind::Direct,
            quad_matrix_degree: None,
            quad_rhs_degree: None,
            d_sign_fault: false,
            monolithic_cap: 200_000,
        }
    }
}

impl GlobalOpts {
    pub fn tables(&self, re: Arc<ReferenceElement>) -> ReferenceTables {
        let (md, rd) = ReferenceTables::default_degrees(re.k);
        ReferenceTables::new(
            re,
            self.quad_matrix_degree.unwrap_or(md),
            self.quad_rhs_degree.unwrap_or(rd),
        )
    }
}

/// The solved fields: per-cell flux and scalar coefficients, per-interior-
/// edge multiplier coefficients, plus everything needed to evaluate them.
pub struct FieldSolution {
    pub mesh: Arc<Mesh>,
    pub re: Arc<ReferenceElement>,
    pub kappa: f64,
    /// RT_k coefficients per cell.
    pub sigma: Vec<DVector<C64>>,
    /// P_k coefficients per cell.
    pub u: Vec<DVector<C64>>,
    /// Edge-mode coefficients per interior edge (mesh interior ordering).
    pub lambda: Vec<DVector<C64>>,
}

impl FieldSolution {
    pub fn k(&self) -> usize {
        self.re.k
    }

    /// u_h at a reference point of `cell`.
    pub fn eval_u(&self, cell: usize, xhat: [f64; 2]) -> C64 {
        let scale = 1.0 / self.mesh.cell_geometry(cell).det_b.sqrt();
        self.re
            .pk_cell
            .iter()
            .zip(self.u[cell].iter())
            .map(|(p, &c)| c * (p.eval(xhat[0], xhat[1]) * scale))
            .sum()
    }

    /// sigma_h at a reference point of `cell` (physical components).
    pub fn eval_sigma(&self, cell: usize, xhat: [f64; 2]) -> [C64; 2] {
        let geo = self.mesh.cell_geometry(cell);
        let mut vx = c64(0.0, 0.0);
        let mut vy = c64(0.0, 0.0);
        for (phi, &c) in self.re.rt.iter().zip(self.sigma[cell].iter()) {
            let v = phi.eval(xhat[0], xhat[1]);
            vx += c * v[0];
            vy += c * v[1];
        }
        let d = geo.det_b;
        [
            (vx * geo.b[0][0] + vy * geo.b[0][1]) / d,
            (vx * geo.b[1][0] + vy * geo.b[1][1]) / d,
        ]
    }

    /// div sigma_h at a reference point of `cell`.
    pub fn eval_div_sigma(&self, cell: usize, xhat: [f64; 2]) -> C64 {
        let geo = self.mesh.cell_geometry(cell);
        self.re
            .rt
            .iter()
            .zip(self.sigma[cell].iter())
            .map(|(phi, &c)| c * (phi.div.eval(xhat[0], xhat[1]) / geo.det_b))
            .sum()
    }

    /// grad u_h at a reference point of `cell` (physical components).
    pub fn eval_grad_u(&self, cell: usize, xhat: [f64; 2]) -> [C64; 2] {
        let geo = self.mesh.cell_geometry(cell);
        let scale = 1.0 / geo.det_b.sqrt();
        let mut gx = c64(0.0, 0.0);
        let mut gy = c64(0.0, 0.0);
        for (g, &c) in self.re.pk_grad.iter().zip(self.u[cell].iter()) {
            gx += c * (g[0].eval(xhat[0], xhat[1]) * scale);
            gy += c * (g[1].eval(xhat[0], xhat[1]) * scale);
        }
        [
            gx * geo.b_inv_t[0][0] + gy * geo.b_inv_t[0][1],
            gx * geo.b_inv_t[1][0] + gy * geo.b_inv_t[1][1],
        ]
    }

    /// lambda_h on an interior edge at parameter t of the global
    /// (sorted-vertex) parametrization.
    pub fn eval_lambda(&self, interior_ordinal: usize, edge_length: f64, t: f64) -> C64 {
        let scale = 1.0 / edge_length.sqrt();
        self.re
            .pk_edge
            .iter()
            .zip(self.lambda[interior_ordinal].iter())
            .map(|(q, &c)| c * (q.eval(t) * scale))
            .sum()
    }

    /// All coefficients in one vector (sigma blocks, then u, then lambda),
    /// for whole-solution comparisons.
    pub fn flatten(&self) -> Vec<C64> {
        let mut out = Vec::new();
        for s in &self.sigma {
            out.extend(s.iter().copied());
        }
        for u in &self.u {
            out.extend(u.iter().copied());
        }
        for l in &self.lambda {
            out.extend(l.iter().copied());
        }
        out
    }
}

/// Relative l2 difference of two coefficient vectors.
pub fn relative_diff(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn condense_all(
    mesh: &Mesh,
    tables: &ReferenceTables,
    kappa: f64,
    data: &(dyn ProblemData + Sync),
    d_sign_fault: bool,
) -> Result<Vec<CondensedLocal>> {
    (0..mesh.n_cells())
        .into_par_iter()
        .map(|cell| {
            let blocks = assemble_local_blocks(mesh, cell, tables, kappa, data, d_sign_fault);
            condense(&blocks, kappa, cell)
        })
        .collect::<Vec<Result<CondensedLocal>>>()
        .into_iter()
        .collect()
}

/// Assembles the condensed multiplier system. Element contributions are
/// computed in parallel and scattered sequentially in cell order, so the
/// assembled system is a bit-reproducible function of the inputs.
pub fn assemble_condensed(
    mesh: &Mesh,
    tables: &ReferenceTables,
    kappa: f64,
    data: &(dyn ProblemData + Sync),
    opts: &GlobalOpts,
) -> Result<(CondensedSystem, Vec<CondensedLocal>)> {
    let caches = condense_all(mesh, tables, kappa, data, opts.d_sign_fault)?;
    let dof_map = DofMap::new(mesh, tables.re.k);
    let modes = dof_map.modes();
    let n = dof_map.n_dofs();

    let mut triplets = Vec::new();
    let mut rhs = vec![c64(0.0, 0.0); n];
    for (cell, cache) in caches.iter().enumerate() {
        let dofs: Vec<usize> = cache
            .lambda_edges
            .iter()
            .flat_map(|&e| {
                let ord = mesh.interior_index(e).unwrap_or_else(|| {
                    panic!("cell {cell} references edge {e} that is not interior")
                });
                (0..modes).map(move |m| dof_map.index(ord, m))
            })
            .collect();
        for (a, &ga) in dofs.iter().enumerate() {
            for (b, &gb) in dofs.iter().enumerate() {
                triplets.push((ga, gb, cache.s[(a, b)]));
            }
            rhs[ga] += cache.g[a];
        }
    }

    let matrix = CsrMatrix::from_triplets(n, n, &triplets);
    Ok((
        CondensedSystem {
            matrix,
            rhs,
            dof_map,
        },
        caches,
    ))
}

/// Solves S lambda = G. A zero right-hand side short-circuits to zero.
pub fn solve_multiplier(
    system: &CondensedSystem,
    solver: SolverKind,
    kappa: f64,
) -> Result<(Vec<C64>, SolveStats)> {
    if system.rhs.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
        return Ok((
            vec![c64(0.0, 0.0); system.rhs.len()],
            SolveStats {
                method: "trivial".into(),
                iterations: Some(0),
                residual: 0.0,
            },
        ));
    }
    sparse::solve(&system.matrix, &system.rhs, solver, kappa)
}

/// Recovers the per-cell fields from the multiplier vector.
pub fn recover_fields(
    mesh: &Arc<Mesh>,
    re: &Arc<ReferenceElement>,
    kappa: f64,
    caches: &[CondensedLocal],
    lambda_flat: &[C64],
    dof_map: &DofMap,
) -> FieldSolution {
    let modes = dof_map.modes();
    let per_cell: Vec<(DVector<C64>, DVector<C64>)> = caches
        .par_iter()
        .map(|cache| {
            let mut local = DVector::<C64>::zeros(cache.n_lambda());
            for (pos, &e) in cache.lambda_edges.iter().enumerate() {
                let ord = mesh.interior_index(e).expect("interior edge");
                for m in 0..modes {
                    local[pos * modes + m] = lambda_flat[dof_map.index(ord, m)];
                }
            }
            cache.back_substitute(&local)
        })
        .collect();

    let mut sigma = Vec::with_capacity(per_cell.len());
    let mut u = Vec::with_capacity(per_cell.len());
    for (s, w) in per_cell {
        sigma.push(s);
        u.push(w);
    }
    let lambda: Vec<DVector<C64>> = (0..dof_map.n_interior)
        .map(|ord| DVector::from_fn(modes, |m, _| lambda_flat[dof_map.index(ord, m)]))
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

/// End-to-end condensed pipeline: assemble, condense, solve, recover.
pub fn solve(
    mesh: &Arc<Mesh>,
    re: &Arc<ReferenceElement>,
    kappa: f64,
    data: &(dyn ProblemData + Sync),
    opts: &GlobalOpts,
) -> Result<(FieldSolution, SolveStats)> {
    if kappa <= 0.0 {
        return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
    }
    let tables = opts.tables(re.clone());
    let (system, caches) = assemble_condensed(mesh, &tables, kappa, data, opts)?;
    let (lambda_flat, stats) = solve_multiplier(&system, opts.solver, kappa)?;
    Ok((
        recover_fields(mesh, re, kappa, &caches, &lambda_flat, &system.dof_map),
        stats,
    ))
}

/// DOF layout of the uncondensed system: all sigma blocks, then all u
/// blocks, then the multipliers in dof_map order.
pub struct MonolithicLayout {
    pub n_rt: usize,
    pub n_pk: usize,
    pub modes: usize,
    pub n_cells: usize,
    pub n_interior: usize,
}

impl MonolithicLayout {
    pub fn sigma_dof(&self, cell: usize, i: usize) -> usize {
        cell * self.n_rt + i
    }

    pub fn u_dof(&self, cell: usize, j: usize) -> usize {
        self.n_cells * self.n_rt + cell * self.n_pk + j
    }

    pub fn lambda_dof(&self, interior_ordinal: usize, mode: usize) -> usize {
        self.n_cells * (self.n_rt + self.n_pk) + interior_ordinal * self.modes + mode
    }

    pub fn total(&self) -> usize {
        self.n_cells * (self.n_rt + self.n_pk) + self.n_interior * self.modes
    }
}

/// Assembles the full block system (no condensation): rows/columns ordered
/// per MonolithicLayout, entries from the per-element blocks.
pub fn assemble_monolithic(
    mesh: &Mesh,
    tables: &ReferenceTables,
    kappa: f64,
    data: &(dyn ProblemData + Sync),
    opts: &GlobalOpts,
) -> Result<(CsrMatrix, Vec<C64>, MonolithicLayout)> {
    let re = &tables.re;
    let layout = MonolithicLayout {
        n_rt: re.n_rt(),
        n_pk: re.n_pk(),
        modes: re.n_edge_modes(),
        n_cells: mesh.n_cells(),
        n_interior: mesh.n_interior_edges(),
    };
    let total = layout.total();
    if total > opts.monolithic_cap {
        return Err(Error::SizeCap {
            what: "monolithic system unknowns".into(),
            size: total,
            cap: opts.monolithic_cap,
        });
    }

    let per_cell: Vec<_> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|cell| assemble_local_blocks(mesh, cell, tables, kappa, data, opts.d_sign_fault))
        .collect();

    let mut triplets = Vec::new();
    let mut rhs = vec![c64(0.0, 0.0); total];
    for (cell, blocks) in per_cell.iter().enumerate() {
        for i in 0..layout.n_rt {
            let gi = layout.sigma_dof(cell, i);
            for j in 0..layout.n_rt {
                triplets.push((gi, layout.sigma_dof(cell, j), blocks.a[(i, j)]));
            }
            for j in 0..layout.n_pk {
                let v = c64(blocks.b[(i, j)], 0.0);
                triplets.push((gi, layout.u_dof(cell, j), v));
                triplets.push((layout.u_dof(cell, j), gi, v));
            }
            rhs[gi] += blocks.f1[i];
        }
        for j in 0..layout.n_pk {
            let gj = layout.u_dof(cell, j);
            for l in 0..layout.n_pk {
                triplets.push((gj, layout.u_dof(cell, l), blocks.e[(j, l)]));
            }
            rhs[gj] += blocks.f2[j];
        }
        for (pos, &e) in blocks.lambda_edges.iter().enumerate() {
            let ord = mesh.interior_index(e).expect("interior edge");
            for m in 0..layout.modes {
                let gl = layout.lambda_dof(ord, m);
                for i in 0..layout.n_rt {
                    let v = c64(blocks.d[(i, pos * layout.modes + m)], 0.0);
                    triplets.push((layout.sigma_dof(cell, i), gl, v));
                    triplets.push((gl, layout.sigma_dof(cell, i), v));
                }
            }
        }
    }

    Ok((CsrMatrix::from_triplets(total, total, &triplets), rhs, layout))
}

/// Solves the uncondensed system directly and splits the solution vector
/// into fields. Exists as the oracle against which the condensed pipeline
/// is checked; capped in size.
pub fn solve_monolithic(
    mesh: &Arc<Mesh>,
    re: &Arc<ReferenceElement>,
    kappa: f64,
    data: &(dyn ProblemData + Sync),
    opts: &GlobalOpts,
) -> Result<(FieldSolution, SolveStats)> {
    let tables = opts.tables(re.clone());
    let (matrix, rhs, layout) = assemble_monolithic(mesh, &tables, kappa, data, opts)?;
    let (x, stats) = sparse::solve_direct(&matrix, &rhs, kappa)?;

    let sigma = (0..layout.n_cells)
        .map(|c| DVector::from_fn(layout.n_rt, |i, _| x[layout.sigma_dof(c, i)]))
        .collect();
    let u = (0..layout.n_cells)
        .map(|c| DVector::from_fn(layout.n_pk, |j, _| x[layout.u_dof(c, j)]))
        .collect();
    let lambda = (0..layout.n_interior)
        .map(|ord| DVector::from_fn(layout.modes, |m, _| x[layout.lambda_dof(ord, m)]))
        .collect();

    Ok((
        FieldSolution {
            mesh: mesh.clone(),
            re: re.clone(),
            kappa,
            sigma,
            u,
            lambda,
        },
        stats,
    ))
}
