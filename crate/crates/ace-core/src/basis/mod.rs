//! One-particle basis families.
//!
//! A family fixes the particle domain, an indexed set of one-particle
//! functions, a polynomial-style degree map and a product linearization
//! `phi_k1 phi_k2 = sum_kappa c_kappa phi_kappa` (see [`linearize`]). The
//! families here are the interval polynomials (monomial, Chebyshev,
//! Legendre), complex exponentials on the torus, and `R_n(r) Ybar_l^m(rhat)`
//! on a ball with either a plain or an envelope-carrying radial basis.

pub mod linearize;
pub mod poly;
pub mod spherical;

use crate::scalar::{Real, C};
use num_complex::Complex;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use thiserror::Error;

pub use linearize::{fit_linearization_ls, LinearizationRule, RuleMode, RuleTable};
pub use spherical::ENVELOPE_DEGREE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Monomial,
    Chebyshev,
    Legendre,
    Trigonometric,
    Spherical,
    SphericalEnvelope,
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FamilyKind::Monomial => "monomial",
            FamilyKind::Chebyshev => "chebyshev",
            FamilyKind::Legendre => "legendre",
            FamilyKind::Trigonometric => "trigonometric",
            FamilyKind::Spherical => "spherical",
            FamilyKind::SphericalEnvelope => "spherical_envelope",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "monomial" => FamilyKind::Monomial,
            "chebyshev" => FamilyKind::Chebyshev,
            "legendre" => FamilyKind::Legendre,
            "trigonometric" => FamilyKind::Trigonometric,
            "spherical" => FamilyKind::Spherical,
            "spherical_envelope" => FamilyKind::SphericalEnvelope,
            other => return Err(format!("unknown basis family `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParticleDomain<R> {
    /// `[-1, 1]`
    Interval,
    /// `(-pi, pi]`
    Torus,
    /// Ball of radius `r_cut` around the origin.
    Ball { r_cut: R },
}

/// A single particle state; the variant must match the family domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Particle<R> {
    Line(R),
    Angle(R),
    Point([R; 3]),
}

/// An unordered multiset of particles, stored in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration<R: Real> {
    pub particles: Vec<Particle<R>>,
}

impl<R: Real> Configuration<R> {
    pub fn from_line(xs: &[R]) -> Self {
        Self { particles: xs.iter().map(|&x| Particle::Line(x)).collect() }
    }

    pub fn from_angles(ts: &[R]) -> Self {
        Self { particles: ts.iter().map(|&t| Particle::Angle(t)).collect() }
    }

    pub fn from_points(ps: &[[R; 3]]) -> Self {
        Self { particles: ps.iter().map(|&p| Particle::Point(p)).collect() }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Scalar coordinates of a line configuration (used by target functions).
    pub fn line_coords(&self) -> Option<Vec<R>> {
        self.particles
            .iter()
            .map(|p| match p {
                Particle::Line(x) => Some(*x),
                _ => None,
            })
            .collect()
    }
}

/// Index of a one-particle function within its family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OneParticleIndex {
    /// Polynomial degree (monomial, Chebyshev, Legendre).
    Scalar(u32),
    /// Signed frequency of `e^{i k theta}`.
    Frequency(i32),
    /// Radial index `n` and spherical-harmonic indices `(l, m)`.
    Spherical { n: u16, l: u16, m: i16 },
}

impl OneParticleIndex {
    /// Family-declared degree: `k`, `|k|` or `n + l`. The envelope family
    /// shares this *bare* degree; its extra polynomial degree is exposed via
    /// [`BasisFamily::effective_degree`].
    pub fn degree(&self) -> u32 {
        match *self {
            OneParticleIndex::Scalar(k) => k,
            OneParticleIndex::Frequency(k) => k.unsigned_abs(),
            OneParticleIndex::Spherical { n, l, .. } => n as u32 + l as u32,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            OneParticleIndex::Scalar(_) => 0,
            OneParticleIndex::Frequency(_) => 1,
            OneParticleIndex::Spherical { .. } => 2,
        }
    }
}

impl Ord for OneParticleIndex {
    /// Degree first, then a lexicographic tie-break within the variant.
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then(self.rank().cmp(&other.rank()))
            .then_with(|| match (self, other) {
                (OneParticleIndex::Scalar(a), OneParticleIndex::Scalar(b)) => a.cmp(b),
                (OneParticleIndex::Frequency(a), OneParticleIndex::Frequency(b)) => a.cmp(b),
                (
                    OneParticleIndex::Spherical { n: n1, l: l1, m: m1 },
                    OneParticleIndex::Spherical { n: n2, l: l2, m: m2 },
                ) => (n1, l1, m1).cmp(&(n2, l2, m2)),
                _ => Ordering::Equal,
            })
    }
}

impl PartialOrd for OneParticleIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for OneParticleIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            OneParticleIndex::Scalar(k) => write!(f, "{k}"),
            OneParticleIndex::Frequency(k) => write!(f, "{k}"),
            OneParticleIndex::Spherical { n, l, m } => write!(f, "{n},{l},{m}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("index {index} does not belong to the {family} family")]
    IndexMismatch { family: FamilyKind, index: String },
    #[error("particle type does not match the {family} domain")]
    DomainMismatch { family: FamilyKind },
    #[error("point outside the {family} domain: {detail}")]
    OutOfDomain { family: FamilyKind, detail: String },
    #[error(
        "linearization residual {residual:.3e} above tolerance {tol:.3e} for phi_{k1} * phi_{k2}; \
         the candidate set does not span the product"
    )]
    LinearizationResidual { residual: f64, tol: f64, k1: String, k2: String },
    #[error("least-squares fit of {cols} candidates needs >= {need} samples, got {got}")]
    TooFewSamples { need: usize, cols: usize, got: usize },
    #[error("rank-deficient least-squares design for {cols} candidates; bad candidate set or sampling")]
    RankDeficientDesign { cols: usize },
}

/// A one-particle basis family over a fixed domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisFamily<R: Real> {
    kind: FamilyKind,
    r_cut: Option<R>,
}

impl<R: Real> BasisFamily<R> {
    pub fn monomial() -> Self {
        Self { kind: FamilyKind::Monomial, r_cut: None }
    }

    pub fn chebyshev() -> Self {
        Self { kind: FamilyKind::Chebyshev, r_cut: None }
    }

    pub fn legendre() -> Self {
        Self { kind: FamilyKind::Legendre, r_cut: None }
    }

    pub fn trigonometric() -> Self {
        Self { kind: FamilyKind::Trigonometric, r_cut: None }
    }

    /// Ball family `R_n(r) Ybar_l^m(rhat)` with the plain (orthonormalized)
    /// radial basis.
    pub fn spherical(r_cut: R) -> Self {
        assert!(r_cut > R::zero(), "r_cut must be positive");
        Self { kind: FamilyKind::Spherical, r_cut: Some(r_cut) }
    }

    /// Ball family whose radial functions carry the cutoff envelope
    /// `f_env(y) = y^2 (y - y_cut)^2`, so every `R_n` vanishes at the
    /// boundary and has effective polynomial degree `n + 4`. Radial products
    /// of this family only linearize against an `n`-extended candidate set,
    /// which is what makes it *not* total-degree preserving.
    pub fn spherical_envelope(r_cut: R) -> Self {
        assert!(r_cut > R::zero(), "r_cut must be positive");
        Self { kind: FamilyKind::SphericalEnvelope, r_cut: Some(r_cut) }
    }

    pub fn from_kind(kind: FamilyKind, r_cut: Option<R>) -> Self {
        match kind {
            FamilyKind::Spherical => Self::spherical(r_cut.unwrap_or_else(|| R::of(1.0))),
            FamilyKind::SphericalEnvelope => {
                Self::spherical_envelope(r_cut.unwrap_or_else(|| R::of(1.0)))
            }
            _ => Self { kind, r_cut: None },
        }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn domain(&self) -> ParticleDomain<R> {
        match self.kind {
            FamilyKind::Monomial | FamilyKind::Chebyshev | FamilyKind::Legendre => {
                ParticleDomain::Interval
            }
            FamilyKind::Trigonometric => ParticleDomain::Torus,
            FamilyKind::Spherical | FamilyKind::SphericalEnvelope => {
                ParticleDomain::Ball { r_cut: self.r_cut.unwrap() }
            }
        }
    }

    pub fn r_cut(&self) -> Option<R> {
        self.r_cut
    }

    pub fn is_complex(&self) -> bool {
        matches!(
            self.kind,
            FamilyKind::Trigonometric | FamilyKind::Spherical | FamilyKind::SphericalEnvelope
        )
    }

    fn is_ball(&self) -> bool {
        matches!(self.kind, FamilyKind::Spherical | FamilyKind::SphericalEnvelope)
    }

    fn with_envelope(&self) -> bool {
        self.kind == FamilyKind::SphericalEnvelope
    }

    /// Whether products linearize without exceeding the summed bare degree.
    pub fn is_degree_preserving(&self) -> bool {
        self.kind != FamilyKind::SphericalEnvelope
    }

    /// Families with a closed-form product rule (the rest use least squares).
    pub fn has_analytic_linearization(&self) -> bool {
        matches!(
            self.kind,
            FamilyKind::Monomial | FamilyKind::Chebyshev | FamilyKind::Trigonometric
        )
    }

    pub fn validate_index(&self, k: OneParticleIndex) -> Result<(), BasisError> {
        let ok = match (self.kind, k) {
            (
                FamilyKind::Monomial | FamilyKind::Chebyshev | FamilyKind::Legendre,
                OneParticleIndex::Scalar(_),
            ) => true,
            (FamilyKind::Trigonometric, OneParticleIndex::Frequency(_)) => true,
            (
                FamilyKind::Spherical | FamilyKind::SphericalEnvelope,
                OneParticleIndex::Spherical { l, m, .. },
            ) => (m.unsigned_abs() as u16) <= l,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(BasisError::IndexMismatch { family: self.kind, index: k.to_string() })
        }
    }

    /// Bare degree of `k` under this family's degree map.
    pub fn degree_of(&self, k: OneParticleIndex) -> Result<u32, BasisError> {
        self.validate_index(k)?;
        Ok(k.degree())
    }

    /// Polynomial degree actually realized by `phi_k`; differs from the bare
    /// degree only for the envelope family, where the cutoff factor adds
    /// [`ENVELOPE_DEGREE`].
    pub fn effective_degree(&self, k: OneParticleIndex) -> Result<u32, BasisError> {
        let d = self.degree_of(k)?;
        Ok(if self.with_envelope() { d + ENVELOPE_DEGREE } else { d })
    }

    /// All indices with bare degree `<= max_deg`, sorted ascending. The
    /// degree-0 index is included; tuple generation filters it out unless
    /// constants are requested.
    pub fn indices_up_to_degree(&self, max_deg: u32) -> Vec<OneParticleIndex> {
        match self.kind {
            FamilyKind::Monomial | FamilyKind::Chebyshev | FamilyKind::Legendre => {
                (0..=max_deg).map(OneParticleIndex::Scalar).collect()
            }
            FamilyKind::Trigonometric => {
                let mut out = vec![OneParticleIndex::Frequency(0)];
                for q in 1..=max_deg as i32 {
                    out.push(OneParticleIndex::Frequency(-q));
                    out.push(OneParticleIndex::Frequency(q));
                }
                out
            }
            FamilyKind::Spherical | FamilyKind::SphericalEnvelope => {
                let mut out = Vec::new();
                for q in 0..=max_deg {
                    for n in 0..=q {
                        let l = q - n;
                        for m in -(l as i32)..=(l as i32) {
                            out.push(OneParticleIndex::Spherical {
                                n: n as u16,
                                l: l as u16,
                                m: m as i16,
                            });
                        }
                    }
                }
                out
            }
        }
    }

    fn check_domain(&self, x: Particle<R>) -> Result<(), BasisError> {
        let slack = R::of(1.0 + 1e-12);
        match (self.kind, x) {
            (FamilyKind::Monomial | FamilyKind::Chebyshev | FamilyKind::Legendre, Particle::Line(v)) => {
                if v.abs() <= slack {
                    Ok(())
                } else {
                    Err(BasisError::OutOfDomain {
                        family: self.kind,
                        detail: format!("|x| = {} > 1", v.abs()),
                    })
                }
            }
            (FamilyKind::Trigonometric, Particle::Angle(t)) => {
                if t.abs() <= R::PI() * slack {
                    Ok(())
                } else {
                    Err(BasisError::OutOfDomain {
                        family: self.kind,
                        detail: format!("|theta| = {} > pi", t.abs()),
                    })
                }
            }
            (FamilyKind::Spherical | FamilyKind::SphericalEnvelope, Particle::Point(p)) => {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if r <= self.r_cut.unwrap() * slack {
                    Ok(())
                } else {
                    Err(BasisError::OutOfDomain {
                        family: self.kind,
                        detail: format!("r = {r} > r_cut"),
                    })
                }
            }
            _ => Err(BasisError::DomainMismatch { family: self.kind }),
        }
    }

    /// Evaluate `phi_k(x)` with a domain-membership check.
    pub fn eval(&self, k: OneParticleIndex, x: Particle<R>) -> Result<C<R>, BasisError> {
        self.check_domain(x)?;
        self.eval_unchecked(k, x)
    }

    /// Evaluate without the domain bound check (the index and particle kind
    /// are still validated). Useful for probing the bare functions.
    pub fn eval_unchecked(&self, k: OneParticleIndex, x: Particle<R>) -> Result<C<R>, BasisError> {
        self.validate_index(k)?;
        let real = |v: R| Complex::new(v, R::zero());
        match (self.kind, k, x) {
            (FamilyKind::Monomial, OneParticleIndex::Scalar(d), Particle::Line(v)) => {
                Ok(real(v.powi(d as i32)))
            }
            (FamilyKind::Chebyshev, OneParticleIndex::Scalar(d), Particle::Line(v)) => {
                Ok(real(poly::chebyshev_table(d, v)[d as usize]))
            }
            (FamilyKind::Legendre, OneParticleIndex::Scalar(d), Particle::Line(v)) => {
                Ok(real(poly::legendre_table(d, v)[d as usize]))
            }
            (FamilyKind::Trigonometric, OneParticleIndex::Frequency(q), Particle::Angle(t)) => {
                let a = R::of(q as f64) * t;
                Ok(Complex::new(a.cos(), a.sin()))
            }
            (_, OneParticleIndex::Spherical { n, l, m }, Particle::Point(p)) if self.is_ball() => {
                let (r, dir) = spherical::split_radial(p);
                let rad =
                    spherical::radial_table(self.with_envelope(), n as u32, r, self.r_cut.unwrap());
                let sh = spherical::harmonics_table(l as u32, dir);
                Ok(sh[spherical::lm_index(l as u32, m as i32)] * rad[n as usize])
            }
            _ => Err(BasisError::DomainMismatch { family: self.kind }),
        }
    }

    /// Evaluate many indices at one particle, sharing the recurrence tables.
    /// `out` must have the same length as `ks`.
    pub fn eval_batch(
        &self,
        ks: &[OneParticleIndex],
        x: Particle<R>,
        out: &mut [C<R>],
    ) -> Result<(), BasisError> {
        assert_eq!(ks.len(), out.len());
        if ks.is_empty() {
            return Ok(());
        }
        self.check_domain(x)?;
        match self.kind {
            FamilyKind::Monomial | FamilyKind::Chebyshev | FamilyKind::Legendre => {
                let v = match x {
                    Particle::Line(v) => v,
                    _ => return Err(BasisError::DomainMismatch { family: self.kind }),
                };
                let mut dmax = 0;
                for &k in ks {
                    self.validate_index(k)?;
                    dmax = dmax.max(k.degree());
                }
                let table = match self.kind {
                    FamilyKind::Monomial => {
                        let mut t = Vec::with_capacity(dmax as usize + 1);
                        let mut acc = R::one();
                        for _ in 0..=dmax {
                            t.push(acc);
                            acc *= v;
                        }
                        t
                    }
                    FamilyKind::Chebyshev => poly::chebyshev_table(dmax, v),
                    _ => poly::legendre_table(dmax, v),
                };
                for (o, &k) in out.iter_mut().zip(ks) {
                    *o = Complex::new(table[k.degree() as usize], R::zero());
                }
            }
            FamilyKind::Trigonometric => {
                let t = match x {
                    Particle::Angle(t) => t,
                    _ => return Err(BasisError::DomainMismatch { family: self.kind }),
                };
                let mut qmax = 0u32;
                for &k in ks {
                    self.validate_index(k)?;
                    qmax = qmax.max(k.degree());
                }
                let mut pos = Vec::with_capacity(qmax as usize + 1);
                pos.push(Complex::new(R::one(), R::zero()));
                let e1 = Complex::new(t.cos(), t.sin());
                for q in 1..=qmax as usize {
                    let prev = pos[q - 1];
                    pos.push(prev * e1);
                }
                for (o, &k) in out.iter_mut().zip(ks) {
                    if let OneParticleIndex::Frequency(q) = k {
                        let v = pos[q.unsigned_abs() as usize];
                        *o = if q < 0 { v.conj() } else { v };
                    }
                }
            }
            FamilyKind::Spherical | FamilyKind::SphericalEnvelope => {
                let p = match x {
                    Particle::Point(p) => p,
                    _ => return Err(BasisError::DomainMismatch { family: self.kind }),
                };
                let (mut nmax, mut lmax) = (0u32, 0u32);
                for &k in ks {
                    self.validate_index(k)?;
                    if let OneParticleIndex::Spherical { n, l, .. } = k {
                        nmax = nmax.max(n as u32);
                        lmax = lmax.max(l as u32);
                    }
                }
                let (r, dir) = spherical::split_radial(p);
                let rad = spherical::radial_table(self.with_envelope(), nmax, r, self.r_cut.unwrap());
                let sh = spherical::harmonics_table(lmax, dir);
                for (o, &k) in out.iter_mut().zip(ks) {
                    if let OneParticleIndex::Spherical { n, l, m } = k {
                        *o = sh[spherical::lm_index(l as u32, m as i32)] * rad[n as usize];
                    }
                }
            }
        }
        Ok(())
    }

    /// Candidate indices against which `phi_k1 phi_k2` linearizes; a superset
    /// of the support of the exact rule.
    pub fn product_candidates(
        &self,
        k1: OneParticleIndex,
        k2: OneParticleIndex,
    ) -> Result<Vec<OneParticleIndex>, BasisError> {
        self.validate_index(k1)?;
        self.validate_index(k2)?;
        Ok(match (self.kind, k1, k2) {
            (FamilyKind::Monomial, OneParticleIndex::Scalar(a), OneParticleIndex::Scalar(b)) => {
                vec![OneParticleIndex::Scalar(a + b)]
            }
            (FamilyKind::Chebyshev, OneParticleIndex::Scalar(a), OneParticleIndex::Scalar(b)) => {
                let mut v = vec![OneParticleIndex::Scalar(a.abs_diff(b))];
                if a + b != a.abs_diff(b) {
                    v.push(OneParticleIndex::Scalar(a + b));
                }
                v
            }
            (FamilyKind::Legendre, OneParticleIndex::Scalar(a), OneParticleIndex::Scalar(b)) => {
                // P_a P_b has the parity of a+b and lives in degrees |a-b|..a+b.
                (a.abs_diff(b)..=a + b)
                    .step_by(2)
                    .map(OneParticleIndex::Scalar)
                    .collect()
            }
            (
                FamilyKind::Trigonometric,
                OneParticleIndex::Frequency(a),
                OneParticleIndex::Frequency(b),
            ) => vec![OneParticleIndex::Frequency(a + b)],
            (
                FamilyKind::Spherical | FamilyKind::SphericalEnvelope,
                OneParticleIndex::Spherical { n: n1, l: l1, m: m1 },
                OneParticleIndex::Spherical { n: n2, l: l2, m: m2 },
            ) => {
                let nmax = n1 as u32
                    + n2 as u32
                    + if self.with_envelope() { ENVELOPE_DEGREE } else { 0 };
                let m = m1 as i32 + m2 as i32;
                let (l1, l2) = (l1 as u32, l2 as u32);
                let parity = (l1 + l2) % 2;
                let mut lo = l1.abs_diff(l2).max(m.unsigned_abs());
                if lo % 2 != parity {
                    lo += 1;
                }
                let mut v = Vec::new();
                let mut big_l = lo;
                while big_l <= l1 + l2 {
                    for n in 0..=nmax {
                        v.push(OneParticleIndex::Spherical {
                            n: n as u16,
                            l: big_l as u16,
                            m: m as i16,
                        });
                    }
                    big_l += 2;
                }
                v.sort();
                v
            }
            _ => unreachable!("validated above"),
        })
    }
}
