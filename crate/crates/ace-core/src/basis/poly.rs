//! Classical orthogonal polynomial recurrences and Gauss–Legendre nodes.

use crate::scalar::Real;

/// `T_0(x) .. T_{kmax}(x)` by the three-term recurrence.
pub fn chebyshev_table<R: Real>(kmax: u32, x: R) -> Vec<R> {
    let n = kmax as usize + 1;
    let mut t = Vec::with_capacity(n);
    t.push(R::one());
    if kmax >= 1 {
        t.push(x);
    }
    for k in 2..n {
        let v = R::of(2.0) * x * t[k - 1] - t[k - 2];
        t.push(v);
    }
    t
}

/// `P_0(x) .. P_{kmax}(x)` (standard normalization, `P_k(1) = 1`).
pub fn legendre_table<R: Real>(kmax: u32, x: R) -> Vec<R> {
    let n = kmax as usize + 1;
    let mut p = Vec::with_capacity(n);
    p.push(R::one());
    if kmax >= 1 {
        p.push(x);
    }
    for k in 2..n {
        let kf = R::of(k as f64);
        let v = ((R::of(2.0) * kf - R::one()) * x * p[k - 1] - (kf - R::one()) * p[k - 2]) / kf;
        p.push(v);
    }
    p
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
///
/// Newton iteration on `P_n` starting from the Chebyshev-angle estimate; at
/// the sizes used here (a few hundred nodes) this converges in 3-4 steps to
/// machine precision.
pub fn gauss_legendre<R: Real>(n: usize) -> (Vec<R>, Vec<R>) {
    assert!(n >= 1);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let nf = n as f64;
    for i in 0..n {
        let mut x = R::of((std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos());
        let mut dp = R::one();
        for _ in 0..60 {
            let p = legendre_table(n as u32, x);
            // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
            dp = R::of(nf) * (x * p[n] - p[n - 1]) / (x * x - R::one());
            let step = p[n] / dp;
            x -= step;
            if step.abs() <= R::of(1e-16) {
                break;
            }
        }
        nodes.push(x);
        weights.push(R::of(2.0) / ((R::one() - x * x) * dp * dp));
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn chebyshev_known_values() {
        let t = chebyshev_table(3, 0.5f64);
        assert_relative_eq!(t[2], -0.5, epsilon = 1e-15); // T_2(0.5) = 2*0.25 - 1
        assert_relative_eq!(t[3], -1.0, epsilon = 1e-15); // T_3(0.5) = 4*0.125 - 3*0.5
    }

    #[test]
    fn legendre_known_values() {
        let p = legendre_table(4, 0.3f64);
        assert_relative_eq!(p[2], 0.5 * (3.0 * 0.09 - 1.0), epsilon = 1e-15);
        assert_relative_eq!(p[3], 0.5 * (5.0 * 0.027 - 3.0 * 0.3), epsilon = 1e-15);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre::<f64>(8);
        // degree <= 15 is exact; check x^14 whose integral is 2/15
        let q: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(14)).sum();
        assert_relative_eq!(q, 2.0 / 15.0, epsilon = 1e-12);
        let lin: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi).sum();
        assert!(lin.abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_orthogonality_of_legendre() {
        let (x, w) = gauss_legendre::<f64>(24);
        let mut g12 = 0.0;
        let mut g22 = 0.0;
        for (&xi, &wi) in x.iter().zip(&w) {
            let p = legendre_table(2, xi);
            g12 += wi * p[1] * p[2];
            g22 += wi * p[2] * p[2];
        }
        assert!(g12.abs() < 1e-14);
        assert_relative_eq!(g22, 2.0 / 5.0, epsilon = 1e-13);
    }
}
