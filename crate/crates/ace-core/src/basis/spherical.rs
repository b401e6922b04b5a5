//! Complex spherical harmonics and the radial bases of the ball families.
//!
//! Harmonics are scaled so that they are orthonormal with respect to the
//! *uniform probability measure* on the sphere (i.e. `sqrt(4 pi)` times the
//! usual fully normalized harmonics, Condon–Shortley phase included), so
//! `Ybar_0^0 = 1` and the constant function sits at degree zero. The plain
//! radial basis is likewise orthonormal under the uniform probability measure
//! on `[0, r_cut]`, which is exactly the measure the ball sampler draws from.

use crate::scalar::{Real, C};
use num_complex::Complex;

use super::poly::legendre_table;

/// Packed index of `(l, m)` in a table covering `l <= lmax`: `l^2 + l + m`.
#[inline]
pub fn lm_index(l: u32, m: i32) -> usize {
    (l * l) as usize + (l as i32 + m) as usize
}

/// Table of `Ybar_l^m(dir)` for all `l <= lmax`, packed by [`lm_index`].
/// `dir` must be a unit vector; the caller normalizes.
pub fn harmonics_table<R: Real>(lmax: u32, dir: [R; 3]) -> Vec<C<R>> {
    let cos_t = dir[2];
    let sin_t = (R::one() - cos_t * cos_t).max(R::zero()).sqrt();
    let phi = dir[1].atan2(dir[0]);

    let n_lm = ((lmax + 1) * (lmax + 1)) as usize;
    let mut out = vec![Complex::new(R::zero(), R::zero()); n_lm];

    // ptilde[l][m] for m >= 0, flattened; ptilde_0^0 = 1 carries the
    // sqrt(4 pi) rescaling through the standard normalized recurrence.
    let stride = (lmax + 1) as usize;
    let mut pt = vec![R::zero(); stride * stride];
    pt[0] = R::one();
    for m in 1..=lmax as usize {
        let mf = R::of(m as f64);
        pt[m * stride + m] = -((R::of(2.0) * mf + R::one()) / (R::of(2.0) * mf)).sqrt()
            * sin_t
            * pt[(m - 1) * stride + (m - 1)];
    }
    for m in 0..lmax as usize {
        let mf = R::of(m as f64);
        pt[(m + 1) * stride + m] = (R::of(2.0) * mf + R::of(3.0)).sqrt() * cos_t * pt[m * stride + m];
    }
    for m in 0..=lmax as usize {
        for l in (m + 2)..=lmax as usize {
            let lf = R::of(l as f64);
            let mf = R::of(m as f64);
            let a = ((R::of(4.0) * lf * lf - R::one()) / (lf * lf - mf * mf)).sqrt();
            let lm1 = lf - R::one();
            let b = ((lm1 * lm1 - mf * mf) / (R::of(4.0) * lm1 * lm1 - R::one())).sqrt();
            pt[l * stride + m] = a * (cos_t * pt[(l - 1) * stride + m] - b * pt[(l - 2) * stride + m]);
        }
    }

    // e^{i m phi} for m = 0..lmax, built incrementally.
    let mut eim = Vec::with_capacity(stride);
    eim.push(Complex::new(R::one(), R::zero()));
    let e1 = Complex::new(phi.cos(), phi.sin());
    for m in 1..stride {
        let prev = eim[m - 1];
        eim.push(prev * e1);
    }

    for l in 0..=lmax {
        for m in 0..=l as i32 {
            let v = eim[m as usize] * pt[l as usize * stride + m as usize];
            out[lm_index(l, m)] = v;
            if m > 0 {
                let sign = if m % 2 == 0 { R::one() } else { -R::one() };
                out[lm_index(l, -m)] = v.conj() * sign;
            }
        }
    }
    out
}

/// Normalize a point in the ball into `(r, unit direction)`; points at the
/// origin get the (arbitrary, measure-zero) direction `+z`.
pub fn split_radial<R: Real>(x: [R; 3]) -> (R, [R; 3]) {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if r <= R::zero() {
        (R::zero(), [R::zero(), R::zero(), R::one()])
    } else {
        (r, [x[0] / r, x[1] / r, x[2] / r])
    }
}

/// `y(r)`: affine map of `[0, r_cut]` onto `[-1, 1]`.
#[inline]
pub fn radial_coordinate<R: Real>(r: R, r_cut: R) -> R {
    R::of(2.0) * r / r_cut - R::one()
}

/// Cutoff envelope `f_env(y) = y^2 (y - y_cut)^2` with `y_cut = y(r_cut) = 1`;
/// a degree-4 polynomial vanishing at `y = 0` and at the boundary `y = y_cut`.
#[inline]
pub fn envelope<R: Real>(y: R) -> R {
    let d = y - R::one();
    y * y * d * d
}

/// Polynomial degree the envelope factor adds to every radial function.
pub const ENVELOPE_DEGREE: u32 = 4;

/// Radial table `R_0(r) .. R_nmax(r)`.
///
/// Plain: `R_n = sqrt(2n+1) P_n(y)`, orthonormal under the uniform
/// probability measure on `[0, r_cut]`. Envelope: `R_n = f_env(y) P_n(y)`,
/// which vanishes at the boundary and has effective polynomial degree `n + 4`.
pub fn radial_table<R: Real>(with_envelope: bool, nmax: u32, r: R, r_cut: R) -> Vec<R> {
    let y = radial_coordinate(r, r_cut);
    let p = legendre_table(nmax, y);
    if with_envelope {
        let f = envelope(y);
        p.into_iter().map(|v| f * v).collect()
    } else {
        p.into_iter()
            .enumerate()
            .map(|(n, v)| (R::of(2.0 * n as f64 + 1.0)).sqrt() * v)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).sqrt();
        [s * phi.cos(), s * phi.sin(), z]
    }

    #[test]
    fn low_order_closed_forms() {
        let dir = [0.48, -0.6, 0.64];
        let t = harmonics_table(2, dir);
        let (cos_t, phi) = (0.64f64, (-0.6f64).atan2(0.48));
        let sin_t = (1.0 - cos_t * cos_t).sqrt();
        assert_relative_eq!(t[lm_index(0, 0)].re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(t[lm_index(1, 0)].re, 3f64.sqrt() * cos_t, epsilon = 1e-14);
        let y11 = Complex::new(phi.cos(), phi.sin()) * (-(1.5f64).sqrt() * sin_t);
        assert_relative_eq!(t[lm_index(1, 1)].re, y11.re, epsilon = 1e-14);
        assert_relative_eq!(t[lm_index(1, 1)].im, y11.im, epsilon = 1e-14);
        // conjugation symmetry
        let v = t[lm_index(2, -1)];
        let w = t[lm_index(2, 1)].conj() * -1.0;
        assert_relative_eq!(v.re, w.re, epsilon = 1e-14);
        assert_relative_eq!(v.im, w.im, epsilon = 1e-14);
    }

    #[test]
    fn addition_theorem() {
        // sum_m Ybar_l^m(a) conj(Ybar_l^m(b)) = (2l+1) P_l(a . b)
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let a = random_dir(&mut rng);
            let b = random_dir(&mut rng);
            let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let ta = harmonics_table(6, a);
            let tb = harmonics_table(6, b);
            for l in 0..=6u32 {
                let mut s = Complex::new(0.0, 0.0);
                for m in -(l as i32)..=(l as i32) {
                    s += ta[lm_index(l, m)] * tb[lm_index(l, m)].conj();
                }
                let p = legendre_table(l, dot)[l as usize];
                assert_relative_eq!(s.re, (2.0 * l as f64 + 1.0) * p, epsilon = 1e-11);
                assert!(s.im.abs() < 1e-11);
            }
        }
    }

    #[test]
    fn harmonics_orthonormal_under_uniform_sphere_measure() {
        // Monte-Carlo Gram over 60k uniform directions; entries converge to
        // the identity at O(1/sqrt(n)).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let lmax = 3u32;
        let dim = ((lmax + 1) * (lmax + 1)) as usize;
        let mut gram = vec![Complex::new(0.0f64, 0.0); dim * dim];
        let n = 60_000;
        for _ in 0..n {
            let t = harmonics_table(lmax, random_dir(&mut rng));
            for i in 0..dim {
                for j in 0..dim {
                    gram[i * dim + j] += t[i] * t[j].conj();
                }
            }
        }
        for i in 0..dim {
            for j in 0..dim {
                let g = gram[i * dim + j] / n as f64;
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (g.re - expect).abs() < 0.05 && g.im.abs() < 0.05,
                    "gram[{i},{j}] = {g}"
                );
            }
        }
    }

    #[test]
    fn plain_radial_orthonormal_under_uniform_radius() {
        let r_cut = 2.5f64;
        // Gauss-Legendre in y is exact for these polynomial products.
        let (nodes, weights) = super::super::poly::gauss_legendre::<f64>(16);
        let mut g = [[0.0f64; 4]; 4];
        for (&y, &w) in nodes.iter().zip(&weights) {
            let r = 0.5 * (y + 1.0) * r_cut;
            let tab = radial_table(false, 3, r, r_cut);
            for i in 0..4 {
                for j in 0..4 {
                    g[i][j] += 0.5 * w * tab[i] * tab[j]; // dy/2 = uniform prob in r
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(g[i][j], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn envelope_vanishes_at_zero_and_cutoff() {
        assert_eq!(envelope(0.0f64), 0.0);
        assert_eq!(envelope(1.0f64), 0.0); // y_cut = 1
        assert!(envelope(0.5f64) > 0.0);
        // boundary of the ball
        let tab = radial_table(true, 3, 2.5f64, 2.5);
        for v in tab {
            assert!(v.abs() < 1e-14);
        }
    }
}
