//! Gauss rules on [0, 1] and a conical-product rule on the reference triangle.
//!
//! The triangle rule collapses the square onto the simplex through
//! (x, y) = (xi (1 - eta), eta), whose Jacobian (1 - eta) is absorbed into the
//! weights. A polynomial of total degree d pulls back to degree d in xi and
//! d + 1 in eta, so Gauss-Legendre point counts are chosen per direction to
//! make the rule exact through the requested degree. All weights are positive
//! and sum to the triangle area 1/2.

/// Quadrature on [0, 1].
#[derive(Clone, Debug)]
pub struct EdgeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Quadrature on the reference triangle.
#[derive(Clone, Debug)]
pub struct TriRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// n-point Gauss-Legendre nodes and weights on [0, 1], exact through degree
/// 2n - 1. Computed by Newton iteration on the Legendre recurrence.
pub fn gauss_legendre_01(n: usize) -> EdgeRule {
    assert!(n >= 1);
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Tricomi-style initial guess on [-1, 1]
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..60 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-15 {
                let (_, d2) = legendre_with_derivative(n, x);
                dp = d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // x is the root on the positive half; mirror it
        points[i] = 0.5 * (1.0 - x);
        points[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    EdgeRule {
        points,
        weights,
        degree: 2 * n - 1,
    }
}

/// P_n(x) and P_n'(x) via the three-term recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Rule on [0, 1] exact for polynomials of degree <= `degree`.
pub fn quadrature_edge(degree: usize) -> EdgeRule {
    gauss_legendre_01(degree / 2 + 1)
}

/// Rule on the reference triangle exact for total degree <= `degree`.
pub fn quadrature_triangle(degree: usize) -> TriRule {
    let nx = degree / 2 + 1;
    let ny = (degree + 1) / 2 + 1;
    let gx = gauss_legendre_01(nx);
    let gy = gauss_legendre_01(ny);
    let mut points = Vec::with_capacity(nx * ny);
    let mut weights = Vec::with_capacity(nx * ny);
    for (&eta, &wy) in gy.points.iter().zip(&gy.weights) {
        for (&xi, &wx) in gx.points.iter().zip(&gx.weights) {
            points.push([xi * (1.0 - eta), eta]);
            weights.push(wx * wy * (1.0 - eta));
        }
    }
    TriRule {
        points,
        weights,
        degree,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refelem::poly::monomial_integral_tri;

    #[test]
    fn two_and_three_point_gauss_match_closed_forms() {
        let g2 = gauss_legendre_01(2);
        let off = 0.5 / 3f64.sqrt();
        assert!((g2.points[0] - (0.5 - off)).abs() < 1e-15);
        assert!((g2.points[1] - (0.5 + off)).abs() < 1e-15);
        assert!((g2.weights[0] - 0.5).abs() < 1e-15);

        let g3 = gauss_legendre_01(3);
        let off3 = 0.5 * (0.6f64).sqrt();
        assert!((g3.points[1] - 0.5).abs() < 1e-15);
        assert!((g3.points[0] - (0.5 - off3)).abs() < 1e-15);
        assert!((g3.weights[1] - 4.0 / 9.0).abs() < 1e-15);
        assert!((g3.weights[0] - 5.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn edge_rules_integrate_monomials_exactly() {
        for degree in 0..=24 {
            let rule = quadrature_edge(degree);
            for n in 0..=degree {
                let got: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&t, &w)| w * t.powi(n as i32))
                    .sum();
                let want = 1.0 / (n as f64 + 1.0);
                assert!(
                    (got - want).abs() < 1e-14,
                    "degree {degree}, t^{n}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn triangle_rules_are_positive_and_exact() {
        for degree in 0..=16 {
            let rule = quadrature_triangle(degree);
            let mut total = 0.0;
            for (&[x, y], &w) in rule.points.iter().zip(&rule.weights) {
                assert!(w > 0.0);
                assert!(x >= 0.0 && y >= 0.0 && x + y <= 1.0 + 1e-15);
                total += w;
            }
            assert!((total - 0.5).abs() < 1e-14);
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let got: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(&[x, y], &w)| w * x.powi(a as i32) * y.powi(b as i32))
                        .sum();
                    let want = monomial_integral_tri(a, b);
                    assert!(
                        (got - want).abs() < 1e-14,
                        "degree {degree}, x^{a} y^{b}: {got} vs {want}"
                    );
                }
            }
        }
    }
}
