//! Complex sparse matrices and the linear solvers for the multiplier system.
//!
//! The condensed system is complex symmetric (S = S^T, unconjugated), not
//! Hermitian, so the solver menu is: sparse direct LU (default), BiCGSTAB
//! with Jacobi preconditioning, and a conjugate-orthogonal CG variant that
//! exploits the symmetry but whose convergence is reported rather than
//! assumed.

use crate::error::{Error, Result};
use crate::{c64, C64};
use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

/// Compressed sparse row storage; rows sorted, columns sorted within a row,
/// duplicates merged at construction.
#[derive(Clone, Debug)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets, summing duplicates. Equal
    /// positions accumulate in triplet order, so the result is a
    /// deterministic function of the triplet sequence.
    pub fn from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, C64)]) -> Self {
        let mut counts = vec![0usize; n_rows + 1];
        for &(r, _, _) in triplets {
            assert!(r < n_rows, "triplet row {r} out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..n_rows {
            counts[i + 1] += counts[i];
        }
        let mut entries: Vec<(usize, usize, C64)> = vec![(0, 0, c64(0.0, 0.0)); triplets.len()];
        let mut next = counts.clone();
        for (pos, &(r, c, v)) in triplets.iter().enumerate() {
            assert!(c < n_cols, "triplet col {c} out of bounds");
            entries[next[r]] = (c, pos, v);
            next[r] += 1;
        }
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for r in 0..n_rows {
            let row = &mut entries[counts[r]..counts[r + 1]];
            row.sort_unstable_by_key(|&(c, pos, _)| (c, pos));
            let mut i = 0;
            while i < row.len() {
                let col = row[i].0;
                let mut sum = c64(0.0, 0.0);
                while i < row.len() && row[i].0 == col {
                    sum += row[i].2;
                    i += 1;
                }
                col_idx.push(col);
                values.push(sum);
            }
            row_ptr[r + 1] = col_idx.len();
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![c64(0.0, 0.0); self.n_rows];
        for r in 0..self.n_rows {
            let mut s = c64(0.0, 0.0);
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.values[idx] * x[self.col_idx[idx]];
            }
            y[r] = s;
        }
        y
    }

    pub fn diagonal(&self) -> Vec<C64> {
        let mut d = vec![c64(0.0, 0.0); self.n_rows.min(self.n_cols)];
        for r in 0..self.n_rows {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[idx] == r {
                    d[r] = self.values[idx];
                }
            }
        }
        d
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Frobenius norm of S - S^T relative to S (plain transpose, no
    /// conjugation).
    pub fn symmetry_residual(&self) -> f64 {
        let mut dense_diff = 0.0;
        for r in 0..self.n_rows {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[idx];
                let transposed = self.get(c, r);
                dense_diff += (self.values[idx] - transposed).norm_sqr();
            }
        }
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            0.0
        } else {
            dense_diff.sqrt() / norm
        }
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.col_idx[idx] == c {
                return self.values[idx];
            }
        }
        c64(0.0, 0.0)
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<C64> {
        let mut m = nalgebra::DMatrix::<C64>::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[idx])] = self.values[idx];
            }
        }
        m
    }

    /// Writes the matrix in Matrix Market coordinate format, complex
    /// general, 1-based indices, one "row col re im" line per stored entry.
    pub fn write_matrix_market(&self, w: &mut dyn Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate complex general")?;
        writeln!(w, "{} {} {}", self.n_rows, self.n_cols, self.nnz())?;
        for r in 0..self.n_rows {
            for idx in self.row_ptr[r]..self.row_ptr[r + 1] {
                writeln!(
                    w,
                    "{} {} {:.15e} {:.15e}",
                    r + 1,
                    self.col_idx[idx] + 1,
                    self.values[idx].re,
                    self.values[idx].im
                )?;
            }
        }
        Ok(())
    }
}

/// Which linear solver handles the condensed system.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverKind {
    Direct,
    Iterative { tol: f64, max_iter: usize },
    /// Conjugate-orthogonal CG on the complex symmetric system. Exposed for
    /// experiments only: positive definiteness of the system has not been
    /// established, so convergence is observed, not guaranteed.
    CgExperimental { tol: f64, max_iter: usize },
}

impl Default for SolverKind {
    fn default() -> Self {
        SolverKind::Direct
    }
}

/// What the solver did, for reports.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SolveStats {
    pub method: String,
    pub iterations: Option<usize>,
    /// Final relative residual of the returned solution.
    pub residual: f64,
}

fn rel_residual(a: &CsrMatrix, x: &[C64], b: &[C64]) -> f64 {
    let ax = a.matvec(x);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..b.len() {
        num += (ax[i] - b[i]).norm_sqr();
        den += b[i].norm_sqr();
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Reciprocal condition estimate from a handful of power iterations on the
/// factorization: sigma_max via A^H A, sigma_min via (A^{-1})^H A^{-1}.
/// Deterministic (fixed-seed start vectors), accurate to a small factor,
/// which is enough to separate resonant from healthy systems.
fn rcond_estimate<F: Fn(&[C64]) -> Vec<C64>>(a: &CsrMatrix, apply_inv: F) -> f64 {
    let n = a.n_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start: Vec<C64> = (0..n)
        .map(|_| c64(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let normalize = |v: &mut Vec<C64>| -> f64 {
        let n2 = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n2 > 0.0 {
            for z in v.iter_mut() {
                *z /= n2;
            }
        }
        n2
    };
    let conj_matvec = |x: &[C64]| -> Vec<C64> {
        // A^H x without forming the transpose: scatter columns
        let mut y = vec![c64(0.0, 0.0); a.n_cols];
        for r in 0..a.n_rows {
            for idx in a.row_ptr[r]..a.row_ptr[r + 1] {
                y[a.col_idx[idx]] += a.values[idx].conj() * x[r];
            }
        }
        y
    };

    let mut v = start.clone();
    normalize(&mut v);
    let mut sigma_max = 0.0;
    for _ in 0..8 {
        let mut w = conj_matvec(&a.matvec(&v));
        sigma_max = normalize(&mut w).sqrt();
        v = w;
    }

    let mut v = start;
    normalize(&mut v);
    let mut inv_sigma_min = 0.0;
    for _ in 0..8 {
        let mut w = apply_inv(&v);
        // apply (A^{-1})^H via conjugate trick: (A^{-1})^H v = conj(A^{-1} conj(v))
        let wc: Vec<C64> = w.iter().map(|z| z.conj()).collect();
        let mut w2 = apply_inv(&wc);
        for z in w2.iter_mut() {
            *z = z.conj();
        }
        w = w2;
        inv_sigma_min = normalize(&mut w).sqrt();
        if !inv_sigma_min.is_finite() {
            return 0.0;
        }
        v = w;
    }

    if sigma_max == 0.0 || inv_sigma_min == 0.0 {
        return 0.0;
    }
    1.0 / (sigma_max * inv_sigma_min)
}

/// Sparse direct LU. Fails with a resonance-flavored error when the
/// factorization breaks down or the system is numerically singular.
pub fn solve_direct(a: &CsrMatrix, b: &[C64], kappa: f64) -> Result<(Vec<C64>, SolveStats)> {
    let n = a.n_rows();
    assert_eq!(a.n_cols(), n);
    assert_eq!(b.len(), n);

    let mut triplets = Vec::with_capacity(a.nnz());
    for r in 0..n {
        for idx in a.row_ptr[r]..a.row_ptr[r + 1] {
            triplets.push(Triplet::new(r, a.col_idx[idx], a.values[idx]));
        }
    }
    let mat = SparseColMat::<usize, C64>::try_new_from_triplets(n, n, &triplets)
        .expect("CSR invariants guarantee valid triplets");
    let lu = mat.sp_lu().map_err(|e| Error::SingularSystem {
        kappa,
        message: format!("sparse LU factorization failed: {e:?}"),
    })?;

    let apply_inv = |v: &[C64]| -> Vec<C64> {
        let rhs = faer::Mat::<C64>::from_fn(n, 1, |i, _| v[i]);
        let sol = lu.solve(&rhs);
        (0..n).map(|i| sol[(i, 0)]).collect()
    };

    let x = apply_inv(b);
    let residual = rel_residual(a, &x, b);
    let rcond = rcond_estimate(a, apply_inv);
    if !residual.is_finite() || rcond < 1e-13 {
        return Err(Error::SingularSystem {
            kappa,
            message: format!(
                "multiplier system numerically singular (rcond estimate {rcond:.3e}, \
                 residual {residual:.3e})"
            ),
        });
    }

    Ok((
        x,
        SolveStats {
            method: "direct".into(),
            iterations: None,
            residual,
        },
    ))
}

fn jacobi_inverse(a: &CsrMatrix) -> Vec<C64> {
    a.diagonal()
        .iter()
        .map(|&d| if d.norm() > 1e-300 { 1.0 / d } else { c64(1.0, 0.0) })
        .collect()
}

fn dot_conj(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn dot_unconj(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn axpy(y: &mut [C64], alpha: C64, x: &[C64]) {
    for i in 0..y.len() {
        y[i] += alpha * x[i];
    }
}

/// Jacobi-preconditioned BiCGSTAB.
pub fn solve_bicgstab(
    a: &CsrMatrix,
    b: &[C64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<C64>, SolveStats)> {
    let n = a.n_rows();
    let minv = jacobi_inverse(a);
    let precond = |v: &[C64]| -> Vec<C64> { v.iter().zip(&minv).map(|(x, m)| x * m).collect() };

    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok((
            vec![c64(0.0, 0.0); n],
            SolveStats {
                method: "bicgstab".into(),
                iterations: Some(0),
                residual: 0.0,
            },
        ));
    }

    let mut x = vec![c64(0.0, 0.0); n];
    let mut r = b.to_vec();
    let r_hat = r.clone();
    let mut rho = dot_conj(&r_hat, &r);
    let mut p = r.clone();
    let fail = |it: usize, res: f64| Error::IterativeDivergence {
        method: "bicgstab".into(),
        iterations: it,
        residual: res,
        tolerance: tol,
    };

    for it in 1..=max_iter {
        let p_hat = precond(&p);
        let v = a.matvec(&p_hat);
        let denom = dot_conj(&r_hat, &v);
        if denom.norm() < 1e-290 {
            return Err(fail(it, norm2(&r) / b_norm));
        }
        let alpha = rho / denom;
        let mut s = r.clone();
        axpy(&mut s, -alpha, &v);
        if norm2(&s) / b_norm < tol {
            axpy(&mut x, alpha, &p_hat);
            let residual = rel_residual(a, &x, b);
            return Ok((
                x,
                SolveStats {
                    method: "bicgstab".into(),
                    iterations: Some(it),
                    residual,
                },
            ));
        }
        let s_hat = precond(&s);
        let t = a.matvec(&s_hat);
        let tt = dot_conj(&t, &t);
        if tt.norm() < 1e-290 {
            return Err(fail(it, norm2(&s) / b_norm));
        }
        let omega = dot_conj(&t, &s) / tt;
        axpy(&mut x, alpha, &p_hat);
        axpy(&mut x, omega, &s_hat);
        r = s;
        axpy(&mut r, -omega, &t);
        if norm2(&r) / b_norm < tol {
            let residual = rel_residual(a, &x, b);
            return Ok((
                x,
                SolveStats {
                    method: "bicgstab".into(),
                    iterations: Some(it),
                    residual,
                },
            ));
        }
        let rho_new = dot_conj(&r_hat, &r);
        if rho_new.norm() < 1e-290 || omega.norm() < 1e-290 {
            return Err(fail(it, norm2(&r) / b_norm));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        rho = rho_new;
    }
    Err(fail(max_iter, norm2(&r) / b_norm))
}

/// Conjugate-orthogonal CG for complex symmetric systems: the classical CG
/// recurrences with the unconjugated bilinear form, Jacobi-preconditioned.
pub fn solve_cocg(
    a: &CsrMatrix,
    b: &[C64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<C64>, SolveStats)> {
    let n = a.n_rows();
    let minv = jacobi_inverse(a);
    let precond = |v: &[C64]| -> Vec<C64> { v.iter().zip(&minv).map(|(x, m)| x * m).collect() };

    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok((
            vec![c64(0.0, 0.0); n],
            SolveStats {
                method: "cocg".into(),
                iterations: Some(0),
                residual: 0.0,
            },
        ));
    }

    let mut x = vec![c64(0.0, 0.0); n];
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rho = dot_unconj(&r, &z);
    let fail = |it: usize, res: f64| Error::IterativeDivergence {
        method: "cocg".into(),
        iterations: it,
        residual: res,
        tolerance: tol,
    };

    for it in 1..=max_iter {
        let q = a.matvec(&p);
        let denom = dot_unconj(&p, &q);
        if denom.norm() < 1e-290 {
            return Err(fail(it, norm2(&r) / b_norm));
        }
        let alpha = rho / denom;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &q);
        if norm2(&r) / b_norm < tol {
            let residual = rel_residual(a, &x, b);
            return Ok((
                x,
                SolveStats {
                    method: "cocg".into(),
                    iterations: Some(it),
                    residual,
                },
            ));
        }
        z = precond(&r);
        let rho_new = dot_unconj(&r, &z);
        if rho_new.norm() < 1e-290 {
            return Err(fail(it, norm2(&r) / b_norm));
        }
        let beta = rho_new / rho;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rho = rho_new;
    }
    Err(fail(max_iter, norm2(&r) / b_norm))
}

/// Dispatches on the configured solver.
pub fn solve(
    a: &CsrMatrix,
    b: &[C64],
    kind: SolverKind,
    kappa: f64,
) -> Result<(Vec<C64>, SolveStats)> {
    match kind {
        SolverKind::Direct => solve_direct(a, b, kappa),
        SolverKind::Iterative { tol, max_iter } => solve_bicgstab(a, b, tol, max_iter),
        SolverKind::CgExperimental { tol, max_iter } => solve_cocg(a, b, tol, max_iter),
    }
}
