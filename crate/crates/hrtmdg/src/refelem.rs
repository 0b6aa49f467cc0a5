//! Reference triangle: orthonormal scalar bases, the Raviart-Thomas basis of
//! degree k, and quadrature.
//!
//! Everything here lives on the unit simplex with vertices (0,0), (1,0),
//! (0,1). Local edge j sits opposite vertex j and carries the outward unit
//! normal. The RT basis is constructed numerically as the dual basis of the
//! degree-of-freedom functionals (edge normal moments against an orthonormal
//! P_k line basis, plus interior moments against an orthonormal P_{k-1} pair
//! basis), so the coefficient matrix of the construction doubles as a
//! unisolvence certificate.

pub mod poly;
pub mod quad;

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use poly::{monomials, orthonormal_basis_edge, orthonormal_basis_tri, Poly1, Poly2};

/// Largest supported polynomial degree. Everything above is untested
/// numerically (conditioning of the monomial Gram-Schmidt) and rejected.
pub const MAX_DEGREE: usize = 3;

pub const REF_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Endpoints of local edge j (opposite vertex j), ordered counterclockwise.
pub const EDGE_VERTICES: [[usize; 2]; 3] = [[1, 2], [2, 0], [0, 1]];

pub const EDGE_NORMALS: [[f64; 2]; 3] = [
    [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
    [-1.0, 0.0],
    [0.0, -1.0],
];

pub const EDGE_LENGTHS: [f64; 3] = [std::f64::consts::SQRT_2, 1.0, 1.0];

/// Point on local edge `edge` at parameter t in [0, 1], running from the
/// first to the second entry of [`EDGE_VERTICES`].
pub fn edge_point(edge: usize, t: f64) -> [f64; 2] {
    let a = REF_VERTICES[EDGE_VERTICES[edge][0]];
    let b = REF_VERTICES[EDGE_VERTICES[edge][1]];
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// One Raviart-Thomas basis function, stored as component polynomials plus
/// its (polynomial) divergence.
#[derive(Clone, Debug)]
pub struct RtBasisFn {
    pub vx: Poly2,
    pub vy: Poly2,
    pub div: Poly2,
}

impl RtBasisFn {
    pub fn eval(&self, x: f64, y: f64) -> [f64; 2] {
        [self.vx.eval(x, y), self.vy.eval(x, y)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    PkCell,
    PkGrad,
    PkEdge,
    RtCell,
    RtDiv,
}

/// Value table from [`ReferenceElement::evaluate_basis`]: outer index basis
/// function, inner index point.
pub enum BasisValues {
    Scalar(Vec<Vec<f64>>),
    Vector(Vec<Vec<[f64; 2]>>),
}

/// Precomputed bases for one polynomial degree k.
#[derive(Clone, Debug)]
pub struct ReferenceElement {
    pub k: usize,
    /// L2-orthonormal basis of P_k on the triangle.
    pub pk_cell: Vec<Poly2>,
    /// Gradients of `pk_cell`.
    pub pk_grad: Vec<[Poly2; 2]>,
    /// L2([0,1])-orthonormal basis of P_k, used for edge multipliers and the
    /// RT edge moments.
    pub pk_edge: Vec<Poly1>,
    /// Orthonormal basis of P_{k-1} for the RT interior moments (empty at k = 0).
    pub pk_interior: Vec<Poly2>,
    /// RT_k basis, dual to the edge/interior moment functionals. Ordering:
    /// edge moments first (edge-major, mode-minor), then interior moments
    /// (P_{k-1} index major, component minor).
    pub rt: Vec<RtBasisFn>,
    /// Max deviation of the re-applied moment matrix from the identity, a
    /// certificate of unisolvence and conditioning of the construction.
    pub dof_residual: f64,
}

impl ReferenceElement {
    pub fn n_pk(&self) -> usize {
        self.pk_cell.len()
    }

    pub fn n_rt(&self) -> usize {
        self.rt.len()
    }

    /// Multiplier / edge-moment modes per edge.
    pub fn n_edge_modes(&self) -> usize {
        self.k + 1
    }

    /// Normal trace of every RT basis function on local edge `edge` at the
    /// given parameter points, table indexed [basis][point].
    pub fn eval_rt_normal_trace(&self, edge: usize, ts: &[f64]) -> Vec<Vec<f64>> {
        let n = EDGE_NORMALS[edge];
        self.rt
            .iter()
            .map(|phi| {
                ts.iter()
                    .map(|&t| {
                        let p = edge_point(edge, t);
                        let v = phi.eval(p[0], p[1]);
                        v[0] * n[0] + v[1] * n[1]
                    })
                    .collect()
            })
            .collect()
    }

    pub fn evaluate_basis(&self, which: BasisKind, points: &[[f64; 2]]) -> BasisValues {
        match which {
            BasisKind::PkCell => BasisValues::Scalar(
                self.pk_cell
                    .iter()
                    .map(|p| points.iter().map(|&[x, y]| p.eval(x, y)).collect())
                    .collect(),
            ),
            BasisKind::PkGrad => BasisValues::Vector(
                self.pk_grad
                    .iter()
                    .map(|[gx, gy]| {
                        points
                            .iter()
                            .map(|&[x, y]| [gx.eval(x, y), gy.eval(x, y)])
                            .collect()
                    })
                    .collect(),
            ),
            // 1d basis: only the first coordinate of each point is used
            BasisKind::PkEdge => BasisValues::Scalar(
                self.pk_edge
                    .iter()
                    .map(|p| points.iter().map(|&[t, _]| p.eval(t)).collect())
                    .collect(),
            ),
            BasisKind::RtCell => BasisValues::Vector(
                self.rt
                    .iter()
                    .map(|phi| points.iter().map(|&[x, y]| phi.eval(x, y)).collect())
                    .collect(),
            ),
            BasisKind::RtDiv => BasisValues::Scalar(
                self.rt
                    .iter()
                    .map(|phi| points.iter().map(|&[x, y]| phi.div.eval(x, y)).collect())
                    .collect(),
            ),
        }
    }
}

/// Build all bases for degree `k` (0 through [`MAX_DEGREE`]).
pub fn build_reference_element(k: usize) -> Result<ReferenceElement> {
    if k > MAX_DEGREE {
        return Err(Error::Config(format!(
            "polynomial degree k = {k} is not supported (max {MAX_DEGREE})"
        )));
    }
    let pk_cell = orthonormal_basis_tri(k);
    let pk_grad = pk_cell.iter().map(|p| [p.dx(), p.dy()]).collect();
    let pk_edge = orthonormal_basis_edge(k);
    let pk_interior = if k == 0 {
        Vec::new()
    } else {
        orthonormal_basis_tri(k - 1)
    };

    let span = rt_spanning_set(k);
    let n_rt = span.len();
    debug_assert_eq!(n_rt, (k + 1) * (k + 3));

    // moment matrix of the spanning set, evaluated with exact integrals
    let mut l = DMatrix::<f64>::zeros(n_rt, n_rt);
    for (col, (vx, vy)) in span.iter().enumerate() {
        for (row, value) in rt_moments(vx, vy, &pk_edge, &pk_interior).into_iter().enumerate() {
            l[(row, col)] = value;
        }
    }
    let c = l
        .clone()
        .lu()
        .try_inverse()
        .expect("RT moment matrix is singular; spanning set construction is broken");

    let mut rt = Vec::with_capacity(n_rt);
    for i in 0..n_rt {
        let mut vx = Poly2::zero(k + 1);
        let mut vy = Poly2::zero(k + 1);
        for (s, (sx, sy)) in span.iter().enumerate() {
            let w = c[(s, i)];
            if w != 0.0 {
                vx.add_scaled(w, sx);
                vy.add_scaled(w, sy);
            }
        }
        let mut div = vx.dx().promote(k);
        div.add_scaled(1.0, &vy.dy().promote(k));
        rt.push(RtBasisFn { vx, vy, div });
    }

    // re-apply the functionals to the finished basis; exact arithmetic would
    // give the identity
    let mut dof_residual = 0.0f64;
    for (col, phi) in rt.iter().enumerate() {
        for (row, value) in rt_moments(&phi.vx, &phi.vy, &pk_edge, &pk_interior)
            .into_iter()
            .enumerate()
        {
            let want = if row == col { 1.0 } else { 0.0 };
            dof_residual = dof_residual.max((value - want).abs());
        }
    }

    Ok(ReferenceElement {
        k,
        pk_cell,
        pk_grad,
        pk_edge,
        pk_interior,
        rt,
        dof_residual,
    })
}

/// Spanning set of RT_k = [P_k]^2 + x P~_k: component monomials of P_k, then
/// the homogeneous tail (x m, y m) for each degree-k monomial m.
fn rt_spanning_set(k: usize) -> Vec<(Poly2, Poly2)> {
    let deg = k + 1;
    let mut span = Vec::with_capacity((k + 1) * (k + 3));
    for (a, b) in monomials(k) {
        span.push((Poly2::monomial(a, b, deg), Poly2::zero(deg)));
        span.push((Poly2::zero(deg), Poly2::monomial(a, b, deg)));
    }
    for j in 0..=k as u32 {
        let m = (k as u32 - j, j);
        span.push((
            Poly2::monomial(m.0 + 1, m.1, deg),
            Poly2::monomial(m.0, m.1 + 1, deg),
        ));
    }
    span
}

/// All RT degree-of-freedom functionals applied to one vector polynomial,
/// with exact integration. Edge moment (j, m) is the integral over t in
/// [0, 1] of (v . n_j)(edge_point(j, t)) times the m-th orthonormal line
/// polynomial; interior moment (c, d) pairs component d against the c-th
/// orthonormal P_{k-1} polynomial over the triangle.
fn rt_moments(vx: &Poly2, vy: &Poly2, pk_edge: &[Poly1], pk_interior: &[Poly2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * pk_edge.len() + 2 * pk_interior.len());
    for j in 0..3 {
        let a = REF_VERTICES[EDGE_VERTICES[j][0]];
        let b = REF_VERTICES[EDGE_VERTICES[j][1]];
        let n = EDGE_NORMALS[j];
        let mut trace = vx.on_segment(a, b);
        trace.scale(n[0]);
        let mut ty = vy.on_segment(a, b);
        ty.scale(n[1]);
        trace.add_scaled(1.0, &ty);
        for q in pk_edge {
            out.push(trace.inner_01(q));
        }
    }
    for p in pk_interior {
        let pp = p.promote(vx.deg);
        out.push(vx.inner_tri(&pp));
        out.push(vy.inner_tri(&pp));
    }
    out
}
