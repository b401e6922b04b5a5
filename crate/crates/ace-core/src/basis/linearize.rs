//! Exact product linearization `phi_k1 phi_k2 = sum_kappa c_kappa phi_kappa`.
//!
//! Monomial, trigonometric and Chebyshev products have closed-form rules.
//! Legendre and the ball families are linearized by least squares; since the
//! product lies exactly in the candidate span, any full-rank sampling
//! recovers the exact coefficients, and one cached factorization serves every
//! pair drawing on the same candidate class. Ball products factor into a
//! radial and an angular solve whose coefficient outer product is the 3-D
//! rule. All coefficients are real — the angular product coefficients are
//! Gaunt-type and real in our normalization — so complex targets are fit by
//! stacking real and imaginary sample rows.

use super::{poly, spherical, BasisError, BasisFamily, FamilyKind, OneParticleIndex, Particle};
use crate::linalg::LsFactor;
use crate::scalar::{fabs, fmax, DenseReal, Real};
use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleMode {
    Analytic,
    LeastSquares,
}

/// Sparse coefficient vector of one linearized product, sorted by index.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationRule<R> {
    terms: Vec<(OneParticleIndex, R)>,
}

impl<R: Real> LinearizationRule<R> {
    fn new(mut terms: Vec<(OneParticleIndex, R)>) -> Self {
        terms.sort_by(|a, b| a.0.cmp(&b.0));
        Self { terms }
    }

    pub fn terms(&self) -> &[(OneParticleIndex, R)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coefficient(&self, k: OneParticleIndex) -> Option<R> {
        self.terms.iter().find(|(t, _)| *t == k).map(|&(_, c)| c)
    }
}

/// Which 1-D function system a cached interval factorization columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cols1d {
    Legendre,
    RadialPlain,
    RadialEnvelope,
}

impl Cols1d {
    fn values<R: Real>(self, numax: u32, y: R) -> Vec<R> {
        let p = poly::legendre_table(numax, y);
        match self {
            Cols1d::Legendre => p,
            Cols1d::RadialPlain => p
                .into_iter()
                .enumerate()
                .map(|(n, v)| R::of(2.0 * n as f64 + 1.0).sqrt() * v)
                .collect(),
            Cols1d::RadialEnvelope => {
                let f = spherical::envelope(y);
                p.into_iter().map(|v| f * v).collect()
            }
        }
    }
}

struct Interval1d<R: DenseReal> {
    numax: u32,
    nodes: Vec<R>,
    factor: LsFactor<R>,
}

struct AngularWs<R: DenseReal> {
    lmax: u32,
    /// Column `L` values: `lo..=lmax` in steps of 2 with the key's parity.
    ls: Vec<u32>,
    grid: Vec<[R; 3]>,
    factor: LsFactor<R>,
}

/// Memoized table of linearization rules for one family.
pub struct RuleTable<R: DenseReal> {
    family: BasisFamily<R>,
    residual_tol: R,
    prune_tol: R,
    rules: HashMap<(OneParticleIndex, OneParticleIndex), LinearizationRule<R>>,
    interval: Option<Interval1d<R>>,
    angular: HashMap<(i32, u8), AngularWs<R>>,
    max_terms: usize,
}

impl<R: DenseReal> RuleTable<R> {
    pub fn new(family: BasisFamily<R>) -> Self {
        Self::with_tolerances(family, R::of(1e-9), R::of(1e-12))
    }

    /// `residual_tol`: relative least-squares residual above which a rule is
    /// rejected as not spanned. `prune_tol`: relative coefficient magnitude
    /// below which terms are dropped.
    pub fn with_tolerances(family: BasisFamily<R>, residual_tol: R, prune_tol: R) -> Self {
        Self {
            family,
            residual_tol,
            prune_tol,
            rules: HashMap::new(),
            interval: None,
            angular: HashMap::new(),
            max_terms: 0,
        }
    }

    pub fn family(&self) -> &BasisFamily<R> {
        &self.family
    }

    pub fn mode(&self) -> RuleMode {
        if self.family.has_analytic_linearization() {
            RuleMode::Analytic
        } else {
            RuleMode::LeastSquares
        }
    }

    /// Largest rule size produced so far.
    pub fn observed_max_terms(&self) -> usize {
        self.max_terms
    }

    /// Per-product term bound `K` used by sparsity estimates: exact for the
    /// analytic families, the observed maximum otherwise.
    pub fn term_bound(&self) -> usize {
        match self.family.kind() {
            FamilyKind::Monomial | FamilyKind::Trigonometric => 1,
            FamilyKind::Chebyshev => 2,
            _ => self.max_terms.max(1),
        }
    }

    /// The (memoized) rule for `phi_k1 phi_k2`; symmetric in its arguments.
    pub fn rule(
        &mut self,
        k1: OneParticleIndex,
        k2: OneParticleIndex,
    ) -> Result<LinearizationRule<R>, BasisError> {
        let key = if k2 < k1 { (k2, k1) } else { (k1, k2) };
        if let Some(r) = self.rules.get(&key) {
            return Ok(r.clone());
        }
        let rule = self.compute(key.0, key.1)?;
        self.max_terms = self.max_terms.max(rule.len());
        self.rules.insert(key, rule.clone());
        Ok(rule)
    }

    fn compute(
        &mut self,
        k1: OneParticleIndex,
        k2: OneParticleIndex,
    ) -> Result<LinearizationRule<R>, BasisError> {
        self.family.validate_index(k1)?;
        self.family.validate_index(k2)?;
        let terms = match (self.family.kind(), k1, k2) {
            (FamilyKind::Monomial, OneParticleIndex::Scalar(a), OneParticleIndex::Scalar(b)) => {
                vec![(OneParticleIndex::Scalar(a + b), R::one())]
            }
            (
                FamilyKind::Trigonometric,
                OneParticleIndex::Frequency(a),
                OneParticleIndex::Frequency(b),
            ) => vec![(OneParticleIndex::Frequency(a + b), R::one())],
            (FamilyKind::Chebyshev, OneParticleIndex::Scalar(a), OneParticleIndex::Scalar(b)) => {
                // 2 T_a T_b = T_{a+b} + T_{|a-b|}
                let (lo, hi) = (a.abs_diff(b), a + b);
                if lo == hi {
                    vec![(OneParticleIndex::Scalar(hi), R::one())]
                } else {
                    vec![
                        (OneParticleIndex::Scalar(lo), R::of(0.5)),
                        (OneParticleIndex::Scalar(hi), R::of(0.5)),
                    ]
                }
            }
            (FamilyKind::Legendre, OneParticleIndex::Scalar(a), OneParticleIndex::Scalar(b)) => {
                let coefs = self
                    .solve_1d(Cols1d::Legendre, a, b, a + b)
                    .map_err(|res| self.residual_error(res, k1, k2))?;
                coefs
                    .into_iter()
                    .map(|(nu, c)| (OneParticleIndex::Scalar(nu), c))
                    .collect()
            }
            (
                _,
                OneParticleIndex::Spherical { n: n1, l: l1, m: m1 },
                OneParticleIndex::Spherical { n: n2, l: l2, m: m2 },
            ) => {
                let (radial_cols, headroom) = if self.family.kind() == FamilyKind::Spherical {
                    (Cols1d::RadialPlain, 0)
                } else {
                    (Cols1d::RadialEnvelope, spherical::ENVELOPE_DEGREE)
                };
                let numax = n1 as u32 + n2 as u32 + headroom;
                let radial = self
                    .solve_1d(radial_cols, n1 as u32, n2 as u32, numax)
                    .map_err(|res| self.residual_error(res, k1, k2))?;
                let angular = self
                    .solve_angular(l1 as u32, m1 as i32, l2 as u32, m2 as i32)
                    .map_err(|res| self.residual_error(res, k1, k2))?;
                let mut terms = Vec::with_capacity(radial.len() * angular.len());
                let cmax = radial
                    .iter()
                    .flat_map(|&(_, a)| angular.iter().map(move |&(_, b)| fabs(a * b)))
                    .fold(R::zero(), fmax);
                let m = m1 as i32 + m2 as i32;
                for &(nu, a) in &radial {
                    for &(big_l, b) in &angular {
                        let c = a * b;
                        if fabs(c) >= self.prune_tol * cmax {
                            terms.push((
                                OneParticleIndex::Spherical {
                                    n: nu as u16,
                                    l: big_l as u16,
                                    m: m as i16,
                                },
                                c,
                            ));
                        }
                    }
                }
                terms
            }
            _ => unreachable!("index validity checked above"),
        };
        Ok(LinearizationRule::new(terms))
    }

    fn residual_error(&self, residual: R, k1: OneParticleIndex, k2: OneParticleIndex) -> BasisError {
        BasisError::LinearizationResidual {
            residual: residual.to_f64_lossy(),
            tol: self.residual_tol.to_f64_lossy(),
            k1: k1.to_string(),
            k2: k2.to_string(),
        }
    }

    /// Coefficients of `col_{n1} col_{n2} = sum_nu c_nu col_nu` on `[-1, 1]`.
    /// `Err` carries the relative residual when the candidate span fails.
    fn solve_1d(
        &mut self,
        cols: Cols1d,
        n1: u32,
        n2: u32,
        numax: u32,
    ) -> Result<Vec<(u32, R)>, R> {
        let rebuild = self.interval.as_ref().map_or(true, |w| w.numax < numax);
        if rebuild {
            let numax = numax.max(self.interval.as_ref().map_or(0, |w| w.numax));
            let ncols = numax as usize + 1;
            let nnodes = 8 * ncols;
            let (nodes, _) = poly::gauss_legendre::<R>(nnodes);
            let mut a = DMatrix::zeros(nnodes, ncols);
            for (i, &y) in nodes.iter().enumerate() {
                for (j, v) in cols.values(numax, y).into_iter().enumerate() {
                    a[(i, j)] = v;
                }
            }
            self.interval = Some(Interval1d { numax, nodes, factor: LsFactor::new(a) });
        }
        let ws = self.interval.as_ref().unwrap();
        let nmax = n1.max(n2);
        let rhs = DVector::from_iterator(
            ws.nodes.len(),
            ws.nodes.iter().map(|&y| {
                let v = cols.values(nmax, y);
                v[n1 as usize] * v[n2 as usize]
            }),
        );
        let c = ws.factor.solve(&rhs);
        let residual = ws.factor.rel_residual(&c, &rhs);
        if residual > self.residual_tol {
            return Err(residual);
        }
        let cmax = c.iter().fold(R::zero(), |m, &v| fmax(m, fabs(v)));
        Ok(c
            .iter()
            .enumerate()
            .filter(|(_, v)| fabs(**v) >= self.prune_tol * cmax)
            .map(|(nu, &v)| (nu as u32, v))
            .collect())
    }

    /// Coefficients of `Ybar_{l1}^{m1} Ybar_{l2}^{m2} = sum_L c_L Ybar_L^{M}`
    /// with `M = m1 + m2`; the factorization is shared by every pair with the
    /// same `(M, parity)` candidate class.
    fn solve_angular(&mut self, l1: u32, m1: i32, l2: u32, m2: i32) -> Result<Vec<(u32, R)>, R> {
        let m = m1 + m2;
        let parity = ((l1 + l2) % 2) as u8;
        let lmax = l1 + l2;
        let key = (m, parity);
        let rebuild = self.angular.get(&key).map_or(true, |w| w.lmax < lmax);
        if rebuild {
            let lmax = lmax.max(self.angular.get(&key).map_or(0, |w| w.lmax));
            let mut lo = m.unsigned_abs();
            if lo % 2 != parity as u32 {
                lo += 1;
            }
            let ls: Vec<u32> = (lo..=lmax).step_by(2).collect();
            let npts = 8 * ls.len();
            let grid = fibonacci_sphere::<R>(npts);
            let mut a = DMatrix::zeros(2 * npts, ls.len());
            for (i, &dir) in grid.iter().enumerate() {
                let sh = spherical::harmonics_table(lmax, dir);
                for (j, &big_l) in ls.iter().enumerate() {
                    let v = sh[spherical::lm_index(big_l, m)];
                    a[(i, j)] = v.re;
                    a[(npts + i, j)] = v.im;
                }
            }
            self.angular
                .insert(key, AngularWs { lmax, ls, grid, factor: LsFactor::new(a) });
        }
        let ws = &self.angular[&key];
        let npts = ws.grid.len();
        let mut rhs = DVector::zeros(2 * npts);
        for (i, &dir) in ws.grid.iter().enumerate() {
            let sh = spherical::harmonics_table(l1.max(l2), dir);
            let t = sh[spherical::lm_index(l1, m1)] * sh[spherical::lm_index(l2, m2)];
            rhs[i] = t.re;
            rhs[npts + i] = t.im;
        }
        let c = ws.factor.solve(&rhs);
        let residual = ws.factor.rel_residual(&c, &rhs);
        if residual > self.residual_tol {
            return Err(residual);
        }
        let cmax = c.iter().fold(R::zero(), |m, &v| fmax(m, fabs(v)));
        Ok(c
            .iter()
            .enumerate()
            .filter(|(_, v)| fabs(**v) >= self.prune_tol * cmax)
            .map(|(j, &v)| (ws.ls[j], v))
            .collect())
    }
}

/// Deterministic quasi-uniform sphere covering (golden-angle spiral).
pub(crate) fn fibonacci_sphere<R: Real>(n: usize) -> Vec<[R; 3]> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let phi = std::f64::consts::TAU * ((i as f64 / golden) % 1.0);
            let s = (1.0 - z * z).sqrt();
            [R::of(s * phi.cos()), R::of(s * phi.sin()), R::of(z)]
        })
        .collect()
}

/// Direct least-squares linearization of one product against an explicit
/// candidate set on caller-provided samples. [`RuleTable`] is the fast path;
/// this is the reference implementation and the cross-check for it.
///
/// Returns the pruned coefficient map and the relative fit residual; a
/// residual above the caller's tolerance means the candidates do not span
/// the product.
pub fn fit_linearization_ls<R: DenseReal>(
    family: &BasisFamily<R>,
    k1: OneParticleIndex,
    k2: OneParticleIndex,
    candidates: &[OneParticleIndex],
    samples: &[Particle<R>],
) -> Result<(Vec<(OneParticleIndex, R)>, R), BasisError> {
    let need = 4 * candidates.len();
    if samples.len() < need {
        return Err(BasisError::TooFewSamples {
            need,
            cols: candidates.len(),
            got: samples.len(),
        });
    }
    let m = samples.len();
    let complex = family.is_complex();
    let rows = if complex { 2 * m } else { m };
    let mut a = DMatrix::zeros(rows, candidates.len());
    let mut rhs = DVector::zeros(rows);
    let mut buf = vec![num_complex::Complex::new(R::zero(), R::zero()); candidates.len()];
    for (i, &x) in samples.iter().enumerate() {
        family.eval_batch(candidates, x, &mut buf)?;
        for (j, v) in buf.iter().enumerate() {
            a[(i, j)] = v.re;
            if complex {
                a[(m + i, j)] = v.im;
            }
        }
        let t = family.eval(k1, x)? * family.eval(k2, x)?;
        rhs[i] = t.re;
        if complex {
            rhs[m + i] = t.im;
        }
    }
    let f = LsFactor::new(a);
    if !f.is_full_rank() {
        return Err(BasisError::RankDeficientDesign { cols: candidates.len() });
    }
    let c = f.solve(&rhs);
    let residual = f.rel_residual(&c, &rhs);
    let cmax = c.iter().fold(R::zero(), |mx, &v| fmax(mx, fabs(v)));
    let mut terms: Vec<(OneParticleIndex, R)> = candidates
        .iter()
        .zip(c.iter())
        .filter(|(_, v)| fabs(**v) >= R::of(1e-12) * cmax)
        .map(|(&k, &v)| (k, v))
        .collect();
    terms.sort_by(|x, y| x.0.cmp(&y.0));
    Ok((terms, residual))
}
