//! Dense linear-algebra helpers shared across modules: least squares with
//! factorization reuse, null-space extraction and condition numbers.

use crate::scalar::{fabs, fmax, fmin, DenseReal};
use nalgebra::{DMatrix, DVector, Dyn};

/// Least-squares factorization of a tall design matrix, reusable across many
/// right-hand sides.
///
/// A thin QR is used when the triangular factor is safely invertible; a
/// truncated SVD (minimum-norm pseudoinverse) otherwise.
pub struct LsFactor<R: DenseReal> {
    a: DMatrix<R>,
    kind: FactorKind<R>,
}

enum FactorKind<R: DenseReal> {
    Qr { q: DMatrix<R>, r: DMatrix<R> },
    Svd { svd: nalgebra::SVD<R, Dyn, Dyn>, cutoff: R },
}

impl<R: DenseReal> LsFactor<R> {
    pub fn new(a: DMatrix<R>) -> Self {
        assert!(
            a.nrows() >= a.ncols() && a.ncols() > 0,
            "least-squares design must be tall ({} x {})",
            a.nrows(),
            a.ncols(),
        );
        let qr = a.clone().qr();
        let (q, r) = (qr.q(), qr.r());
        let mut dmax = R::zero();
        let mut dmin = R::infinity();
        for i in 0..r.nrows().min(r.ncols()) {
            let d = fabs(r[(i, i)]);
            dmax = fmax(dmax, d);
            dmin = fmin(dmin, d);
        }
        let kind = if dmin > dmax * R::of(1e-13) {
            FactorKind::Qr { q, r }
        } else {
            let svd = nalgebra::SVD::new(a.clone(), true, true);
            let smax = svd.singular_values.iter().fold(R::zero(), |m, &s| fmax(m, s));
            FactorKind::Svd { svd, cutoff: smax * R::of(1e-13) }
        };
        Self { a, kind }
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<R> {
        &self.a
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank() == self.a.ncols()
    }

    /// Numerical rank at the factorization's own cutoff.
    pub fn rank(&self) -> usize {
        match &self.kind {
            FactorKind::Qr { .. } => self.a.ncols(),
            FactorKind::Svd { svd, cutoff } => {
                svd.singular_values.iter().filter(|&&s| s > *cutoff).count()
            }
        }
    }

    /// Singular values treated as zero (empty on the QR path).
    pub fn dropped_singular_values(&self) -> Vec<R> {
        match &self.kind {
            FactorKind::Qr { .. } => Vec::new(),
            FactorKind::Svd { svd, cutoff } => svd
                .singular_values
                .iter()
                .copied()
                .filter(|&s| s <= *cutoff)
                .collect(),
        }
    }

    /// Minimizer of `|A x - b|_2` (minimum-norm one if rank-deficient).
    pub fn solve(&self, b: &DVector<R>) -> DVector<R> {
        assert_eq!(b.len(), self.nrows());
        match &self.kind {
            FactorKind::Qr { q, r } => {
                let qtb = q.transpose() * b;
                r.solve_upper_triangular(&qtb)
                    .expect("triangular solve cannot fail after the rank check")
            }
            FactorKind::Svd { svd, cutoff } => {
                svd.solve(b, *cutoff).expect("u/v_t were requested")
            }
        }
    }

    /// `|A x - b| / max(|b|, tiny)`.
    pub fn rel_residual(&self, x: &DVector<R>, b: &DVector<R>) -> R {
        let r = &self.a * x - b;
        r.norm() / fmax(b.norm(), R::of(1e-300))
    }
}

/// One-shot least squares; prefer [`LsFactor`] for repeated right-hand sides.
pub fn lstsq<R: DenseReal>(a: &DMatrix<R>, b: &DVector<R>) -> DVector<R> {
    LsFactor::new(a.clone()).solve(b)
}

/// Orthonormal basis of the right null space of a tall matrix: the singular
/// vectors whose singular values fall at or below `rel_tol * sigma_max`.
pub fn nullspace<R: DenseReal>(a: &DMatrix<R>, rel_tol: R) -> Vec<DVector<R>> {
    assert!(a.nrows() >= a.ncols(), "null-space extraction expects a tall constraint matrix");
    let svd = nalgebra::SVD::new(a.clone(), false, true);
    let vt = svd.v_t.as_ref().expect("v_t was requested");
    let smax = svd.singular_values.iter().fold(R::zero(), |m, &s| fmax(m, s));
    let cutoff = smax * rel_tol;
    let mut out = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff {
            out.push(vt.row(i).transpose());
        }
    }
    out
}

/// `sigma_max / sigma_min`; infinite when the smallest singular value is 0.
pub fn condition_number<R: DenseReal>(a: &DMatrix<R>) -> R {
    let sv = a.clone().singular_values();
    let smax = sv.iter().fold(R::zero(), |m, &s| fmax(m, s));
    let smin = sv.iter().fold(R::infinity(), |m, &s| fmin(m, s));
    if smin > R::zero() {
        smax / smin
    } else {
        R::infinity()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_solve_on_invertible_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_row_slice(&[5.0, 10.0]);
        let x = lstsq(&a, &b);
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn minimum_norm_on_rank_deficient_system() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_row_slice(&[2.0, 2.0]);
        let x = lstsq(&a, &b);
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn overdetermined_residual_is_orthogonal_projection() {
        // Fit a line through three collinear-ish points; residual must be
        // orthogonal to the column space.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let b = DVector::from_row_slice(&[0.1, 1.0, 2.2]);
        let f = LsFactor::new(a.clone());
        let x = f.solve(&b);
        let r = &a * &x - &b;
        let g = a.transpose() * r;
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn nullspace_of_rank_one_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let ns = nullspace(&a, 1e-12);
        assert_eq!(ns.len(), 1);
        let v = &ns[0];
        assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
        assert!(fabs(v[0] + v[1]) < 1e-12);
    }

    #[test]
    fn condition_number_of_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        assert_relative_eq!(condition_number(&a), 3.0, epsilon = 1e-12);
    }
}
