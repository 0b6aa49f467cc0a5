//! Dense polynomials on the reference triangle and on [0, 1], with exact
//! integration, used to construct the orthonormal scalar bases and the
//! Raviart-Thomas basis.
//!
//! The reference triangle is the unit simplex with vertices (0,0), (1,0),
//! (0,1). Monomials are ordered graded-lex (by total degree, then descending
//! power of x): 1, x, y, x^2, xy, y^2, ...

/// Dimension of the polynomial space of total degree <= `deg` in 2 variables.
pub fn dim_pk(deg: usize) -> usize {
    (deg + 1) * (deg + 2) / 2
}

/// Exponent pairs (a, b) of the monomials x^a y^b spanning P_deg, graded-lex.
pub fn monomials(deg: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(dim_pk(deg));
    for d in 0..=deg as u32 {
        for b in 0..=d {
            out.push((d - b, b));
        }
    }
    out
}

/// Position of x^a y^b in the graded-lex ordering.
#[inline]
pub fn monomial_index(a: u32, b: u32) -> usize {
    let d = (a + b) as usize;
    d * (d + 1) / 2 + b as usize
}

/// Exact integral of x^a y^b over the reference triangle: a! b! / (a+b+2)!.
///
/// Evaluated as 1 / (C(a+b, a) (a+b+1) (a+b+2)) to stay in range for any
/// exponents this crate ever produces.
pub fn monomial_integral_tri(a: u32, b: u32) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    let mut binom = 1.0;
    for i in 1..=lo {
        binom *= (hi + i) as f64 / i as f64;
    }
    let n = (a + b) as f64;
    1.0 / (binom * (n + 1.0) * (n + 2.0))
}

/// Polynomial in two variables with dense graded-lex coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly2 {
    pub deg: usize,
    /// Length `dim_pk(deg)`, ordered like [`monomials`].
    pub coeffs: Vec<f64>,
}

impl Poly2 {
    pub fn zero(deg: usize) -> Self {
        Poly2 {
            deg,
            coeffs: vec![0.0; dim_pk(deg)],
        }
    }

    /// The monomial x^a y^b embedded in P_deg (deg >= a + b).
    pub fn monomial(a: u32, b: u32, deg: usize) -> Self {
        assert!((a + b) as usize <= deg);
        let mut p = Poly2::zero(deg);
        p.coeffs[monomial_index(a, b)] = 1.0;
        p
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut xp = [1.0f64; 16];
        let mut yp = [1.0f64; 16];
        for i in 1..=self.deg {
            xp[i] = xp[i - 1] * x;
            yp[i] = yp[i - 1] * y;
        }
        let mut s = 0.0;
        for (idx, &(a, b)) in monomials(self.deg).iter().enumerate() {
            let c = self.coeffs[idx];
            if c != 0.0 {
                s += c * xp[a as usize] * yp[b as usize];
            }
        }
        s
    }

    /// Same polynomial viewed in P_deg for deg >= self.deg.
    pub fn promote(&self, deg: usize) -> Poly2 {
        assert!(deg >= self.deg);
        let mut p = Poly2::zero(deg);
        p.coeffs[..self.coeffs.len()].copy_from_slice(&self.coeffs);
        p
    }

    pub fn dx(&self) -> Poly2 {
        let deg = self.deg.saturating_sub(1);
        let mut p = Poly2::zero(deg);
        for (idx, &(a, b)) in monomials(self.deg).iter().enumerate() {
            if a > 0 && self.coeffs[idx] != 0.0 {
                p.coeffs[monomial_index(a - 1, b)] += a as f64 * self.coeffs[idx];
            }
        }
        p
    }

    pub fn dy(&self) -> Poly2 {
        let deg = self.deg.saturating_sub(1);
        let mut p = Poly2::zero(deg);
        for (idx, &(a, b)) in monomials(self.deg).iter().enumerate() {
            if b > 0 && self.coeffs[idx] != 0.0 {
                p.coeffs[monomial_index(a, b - 1)] += b as f64 * self.coeffs[idx];
            }
        }
        p
    }

    pub fn mul(&self, other: &Poly2) -> Poly2 {
        let deg = self.deg + other.deg;
        let mut p = Poly2::zero(deg);
        let ma = monomials(self.deg);
        let mb = monomials(other.deg);
        for (ia, &(a1, b1)) in ma.iter().enumerate() {
            let ca = self.coeffs[ia];
            if ca == 0.0 {
                continue;
            }
            for (ib, &(a2, b2)) in mb.iter().enumerate() {
                let cb = other.coeffs[ib];
                if cb != 0.0 {
                    p.coeffs[monomial_index(a1 + a2, b1 + b2)] += ca * cb;
                }
            }
        }
        p
    }

    pub fn add_scaled(&mut self, c: f64, other: &Poly2) {
        assert_eq!(self.deg, other.deg);
        for (s, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *s += c * o;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.coeffs {
            *v *= c;
        }
    }

    /// Exact integral over the reference triangle.
    pub fn integral_tri(&self) -> f64 {
        monomials(self.deg)
            .iter()
            .enumerate()
            .map(|(idx, &(a, b))| self.coeffs[idx] * monomial_integral_tri(a, b))
            .sum()
    }

    /// Exact L2(reference triangle) inner product.
    pub fn inner_tri(&self, other: &Poly2) -> f64 {
        self.mul(other).integral_tri()
    }

    /// Restriction to the segment from `a` to `b`, as a polynomial in the
    /// parameter t in [0, 1] with x(t) = a + t (b - a).
    pub fn on_segment(&self, a: [f64; 2], b: [f64; 2]) -> Poly1 {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let mut out = Poly1::zero(self.deg);
        // (a0 + t dx)^p expanded once per needed power
        let pow_x = expand_affine_powers(a[0], dx, self.deg);
        let pow_y = expand_affine_powers(a[1], dy, self.deg);
        for (idx, &(p, q)) in monomials(self.deg).iter().enumerate() {
            let c = self.coeffs[idx];
            if c == 0.0 {
                continue;
            }
            let prod = pow_x[p as usize].mul(&pow_y[q as usize]);
            for (i, v) in prod.coeffs.iter().enumerate() {
                out.coeffs[i] += c * v;
            }
        }
        out
    }
}

/// Powers (c + t d)^0 .. (c + t d)^deg as polynomials in t.
fn expand_affine_powers(c: f64, d: f64, deg: usize) -> Vec<Poly1> {
    let base = Poly1 {
        coeffs: vec![c, d],
    };
    let mut out = Vec::with_capacity(deg + 1);
    out.push(Poly1 {
        coeffs: vec![1.0],
    });
    for i in 1..=deg {
        let next = out[i - 1].mul(&base);
        out.push(next);
    }
    out
}

/// Polynomial in one variable t, coefficient i multiplying t^i.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly1 {
    pub coeffs: Vec<f64>,
}

impl Poly1 {
    pub fn zero(deg: usize) -> Self {
        Poly1 {
            coeffs: vec![0.0; deg + 1],
        }
    }

    pub fn deg(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, t: f64) -> f64 {
        // Horner
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    pub fn mul(&self, other: &Poly1) -> Poly1 {
        let mut out = Poly1::zero(self.deg() + other.deg());
        for (i, &a) in self.coeffs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.coeffs.iter().enumerate() {
                out.coeffs[i + j] += a * b;
            }
        }
        out
    }

    pub fn add_scaled(&mut self, c: f64, other: &Poly1) {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (s, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *s += c * o;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.coeffs {
            *v *= c;
        }
    }

    /// Exact integral over [0, 1].
    pub fn integral_01(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &c)| c / (i as f64 + 1.0))
            .sum()
    }

    pub fn inner_01(&self, other: &Poly1) -> f64 {
        self.mul(other).integral_01()
    }
}

/// L2-orthonormal basis of P_deg on the reference triangle, by modified
/// Gram-Schmidt (two passes) over the graded-lex monomials, using exact
/// integrals. Deterministic.
pub fn orthonormal_basis_tri(deg: usize) -> Vec<Poly2> {
    let mono = monomials(deg);
    let mut basis: Vec<Poly2> = mono
        .iter()
        .map(|&(a, b)| Poly2::monomial(a, b, deg))
        .collect();
    for i in 0..basis.len() {
        for _ in 0..2 {
            for j in 0..i {
                let c = basis[i].inner_tri(&basis[j]);
                let bj = basis[j].clone();
                basis[i].add_scaled(-c, &bj);
            }
        }
        let nrm = basis[i].inner_tri(&basis[i]).sqrt();
        assert!(nrm > 1e-12, "monomials degenerated during Gram-Schmidt");
        basis[i].scale(1.0 / nrm);
    }
    basis
}

/// L2-orthonormal basis of P_deg on [0, 1] (normalized shifted Legendre).
pub fn orthonormal_basis_edge(deg: usize) -> Vec<Poly1> {
    let mut basis: Vec<Poly1> = (0..=deg)
        .map(|i| {
            let mut p = Poly1::zero(deg);
            p.coeffs[i] = 1.0;
            p
        })
        .collect();
    for i in 0..basis.len() {
        for _ in 0..2 {
            for j in 0..i {
                let c = basis[i].inner_01(&basis[j]);
                let bj = basis[j].clone();
                basis[i].add_scaled(-c, &bj);
            }
        }
        let nrm = basis[i].inner_01(&basis[i]).sqrt();
        basis[i].scale(1.0 / nrm);
    }
    basis
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomial_integrals_match_factorial_formula() {
        // a! b! / (a+b+2)! spot checks
        assert_eq!(monomial_integral_tri(0, 0), 0.5);
        assert!((monomial_integral_tri(1, 0) - 1.0 / 6.0).abs() < 1e-16);
        assert!((monomial_integral_tri(2, 0) - 1.0 / 12.0).abs() < 1e-16);
        assert!((monomial_integral_tri(1, 1) - 1.0 / 24.0).abs() < 1e-16);
        assert!((monomial_integral_tri(0, 3) - 1.0 / 20.0).abs() < 1e-16);
        // symmetry in (a, b)
        for a in 0..8u32 {
            for b in 0..8u32 {
                let d = (monomial_integral_tri(a, b) - monomial_integral_tri(b, a)).abs();
                assert!(d < 1e-18);
            }
        }
    }

    #[test]
    fn graded_lex_index_roundtrips() {
        for (idx, (a, b)) in monomials(6).into_iter().enumerate() {
            assert_eq!(monomial_index(a, b), idx);
        }
        assert_eq!(dim_pk(3), 10);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let p = {
            let mut p = Poly2::zero(3);
            p.coeffs[monomial_index(2, 1)] = 1.5;
            p.coeffs[monomial_index(1, 0)] = -2.0;
            p.coeffs[monomial_index(0, 3)] = 0.7;
            p
        };
        let (x, y) = (0.31, 0.47);
        let h = 1e-6;
        let fdx = (p.eval(x + h, y) - p.eval(x - h, y)) / (2.0 * h);
        let fdy = (p.eval(x, y + h) - p.eval(x, y - h)) / (2.0 * h);
        assert!((p.dx().eval(x, y) - fdx).abs() < 1e-8);
        assert!((p.dy().eval(x, y) - fdy).abs() < 1e-8);
    }

    #[test]
    fn product_evaluates_pointwise() {
        let p = Poly2::monomial(2, 1, 3);
        let mut q = Poly2::monomial(0, 2, 2);
        q.coeffs[monomial_index(1, 0)] = 3.0;
        let prod = p.mul(&q);
        for &(x, y) in &[(0.2, 0.3), (0.9, 0.05), (0.0, 1.0)] {
            let d = (prod.eval(x, y) - p.eval(x, y) * q.eval(x, y)).abs();
            assert!(d < 1e-14);
        }
    }

    #[test]
    fn segment_restriction_evaluates_pointwise() {
        let mut p = Poly2::zero(3);
        p.coeffs[monomial_index(2, 1)] = 1.0;
        p.coeffs[monomial_index(0, 2)] = -0.5;
        p.coeffs[monomial_index(1, 0)] = 2.0;
        let (a, b) = ([0.2, 0.9], [1.3, -0.4]);
        let line = p.on_segment(a, b);
        for &t in &[0.0, 0.25, 0.8, 1.0] {
            let x = a[0] + t * (b[0] - a[0]);
            let y = a[1] + t * (b[1] - a[1]);
            assert!((line.eval(t) - p.eval(x, y)).abs() < 1e-13);
        }
    }

    #[test]
    fn edge_basis_is_shifted_legendre() {
        let basis = orthonormal_basis_edge(3);
        // closed forms: 1, sqrt(3)(2t-1), sqrt(5)(6t^2-6t+1), sqrt(7)(20t^3-30t^2+12t-1)
        let expected: [&[f64]; 4] = [
            &[1.0],
            &[-1.0, 2.0],
            &[1.0, -6.0, 6.0],
            &[-1.0, 12.0, -30.0, 20.0],
        ];
        let scales = [1.0, 3f64.sqrt(), 5f64.sqrt(), 7f64.sqrt()];
        for (i, (exp, scale)) in expected.iter().zip(scales).enumerate() {
            for (j, &c) in exp.iter().enumerate() {
                let want = scale * c;
                let tol = 1e-12 * want.abs().max(1.0);
                assert!(
                    (basis[i].coeffs[j] - want).abs() < tol,
                    "legendre {i} coeff {j}: {} vs {}",
                    basis[i].coeffs[j],
                    want
                );
            }
        }
    }

    #[test]
    fn triangle_basis_starts_with_sqrt_two() {
        let basis = orthonormal_basis_tri(2);
        assert!((basis[0].eval(0.3, 0.3) - 2f64.sqrt()).abs() < 1e-14);
        // exact-arithmetic orthonormality (quadrature cross-check lives in refelem)
        for i in 0..basis.len() {
            for j in 0..=i {
                let g = basis[i].inner_tri(&basis[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-13, "gram({i},{j}) = {g}");
            }
        }
    }
}
