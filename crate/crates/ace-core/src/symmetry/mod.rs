//! Group symmetrization of cluster features.
//!
//! Three groups act on the supported domains: sign flips on the interval
//! (`O(1)`), planar rotations on the torus (`SO(2)`), and rotations plus
//! reflections on the ball (`O(3)`). For the first two, symmetrization is a
//! filter — a tuple is either invariant or useless — so the operator is a
//! 0/1 selection. For `O(3)` the invariants are genuine linear combinations
//! within `(n, l)` blocks, built numerically in [`o3`].
//!
//! A [`SymmetrizationOperator`] maps canonical features to invariants;
//! composing it with a purification operator gives a [`FusedOperator`] that
//! goes straight from self-interacting products to invariants in one sparse
//! pass.

pub mod o3;

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{Configuration, OneParticleIndex, Particle};
use crate::expansion::{DegreeCaps, IndexSet, IndexTuple};
use crate::purification::{PurificationOperator, PurifyError};
use crate::scalar::{fabs, DenseReal, Real, C};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryGroup {
    /// Sign flips of interval coordinates.
    O1,
    /// Rotations of torus angles.
    SO2,
    /// Rotations and reflections of ball points.
    O3,
}

impl fmt::Display for SymmetryGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SymmetryGroup::O1 => "o1",
            SymmetryGroup::SO2 => "so2",
            SymmetryGroup::O3 => "o3",
        })
    }
}

impl FromStr for SymmetryGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "o1" => Ok(SymmetryGroup::O1),
            "so2" => Ok(SymmetryGroup::SO2),
            "o3" => Ok(SymmetryGroup::O3),
            other => Err(format!("unknown symmetry group {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SymmetryError {
    #[error("tuple {tuple} has the wrong index kind for {group}")]
    WrongIndexKind { group: SymmetryGroup, tuple: String },
    #[error("symmetrization column {tuple} is not a purification target")]
    FuseMismatch { tuple: String },
    #[error("invariant {label} drifts under a fresh rotation: residual {residual:.3e}")]
    Validation { label: String, residual: f64 },
    #[error(
        "invariant {label} has imaginary residue {residue:.3e} above {tol:.3e}; \
         the input features do not match the operator"
    )]
    ImaginaryResidue {
        label: String,
        residue: f64,
        tol: f64,
    },
    #[error("expected {want} feature values, got {got}")]
    LengthMismatch { want: usize, got: usize },
    #[error(transparent)]
    Purify(#[from] PurifyError),
}

/// Row label of a symmetrized basis function.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum InvariantLabel {
    /// The tuple itself: `O(1)`/`SO(2)` rows select single tuples.
    Tuple(IndexTuple),
    /// An `O(3)` coupled block: the `(n, l)` pairs and the index `i` of the
    /// invariant within the block (1-based).
    Coupled {
        n: Vec<u16>,
        l: Vec<u16>,
        i: usize,
    },
}

impl fmt::Display for InvariantLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InvariantLabel::Tuple(t) => write!(f, "{t}"),
            InvariantLabel::Coupled { n, l, i } => {
                if n.is_empty() {
                    return write!(f, "()#{i}");
                }
                let pairs: Vec<String> = n
                    .iter()
                    .zip(l)
                    .map(|(a, b)| format!("{a},{b}"))
                    .collect();
                write!(f, "{}#{i}", pairs.join(";"))
            }
        }
    }
}

impl Serialize for InvariantLabel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Keeps the tuples invariant under coordinate sign flips: scalar indices
/// with an even sum. Tuples of any other index kind are dropped.
pub fn filter_parity_o1(set: &IndexSet) -> IndexSet {
    IndexSet::from_tuples(
        set.tuples()
            .iter()
            .filter(|t| {
                t.indices().iter().all(|k| matches!(k, OneParticleIndex::Scalar(_)))
                    && t.degree() % 2 == 0
            })
            .cloned()
            .collect(),
    )
}

/// Keeps the tuples invariant under global angle shifts: frequency indices
/// summing to zero. Tuples of any other index kind are dropped.
pub fn filter_rotation_so2(set: &IndexSet) -> IndexSet {
    IndexSet::from_tuples(
        set.tuples()
            .iter()
            .filter(|t| {
                let mut sum = 0i64;
                for k in t.indices() {
                    match k {
                        OneParticleIndex::Frequency(q) => sum += i64::from(*q),
                        _ => return false,
                    }
                }
                sum == 0
            })
            .cloned()
            .collect(),
    )
}

/// Linear map from canonical features over [`columns`] to invariant
/// features, one row per invariant.
///
/// [`columns`]: Self::columns
#[derive(Debug, Clone)]
pub struct SymmetrizationOperator<R> {
    group: SymmetryGroup,
    labels: Vec<InvariantLabel>,
    columns: IndexSet,
    rows: Vec<Vec<(usize, R)>>,
}

/// 0/1 rows selecting every tuple of `set` as its own invariant.
///
/// This is the `O(1)`/`SO(2)` operator shape; the caller passes the already
/// filtered set (see [`filter_parity_o1`], [`filter_rotation_so2`]). Nothing
/// is validated here, which also makes it a convenient way to build
/// deliberately wrong operators in tests.
pub fn selection_operator<R: Real>(group: SymmetryGroup, set: &IndexSet) -> SymmetrizationOperator<R> {
    SymmetrizationOperator {
        group,
        labels: set.tuples().iter().cloned().map(InvariantLabel::Tuple).collect(),
        columns: set.clone(),
        rows: (0..set.len()).map(|i| vec![(i, R::one())]).collect(),
    }
}

/// Filters `set` for `group` and builds the matching operator; the `O(3)`
/// case runs the numerical coupling construction with `seed`.
pub fn symmetrize<R: DenseReal>(
    group: SymmetryGroup,
    set: &IndexSet,
    seed: u64,
) -> Result<SymmetrizationOperator<R>, SymmetryError> {
    match group {
        SymmetryGroup::O1 => Ok(selection_operator(group, &filter_parity_o1(set))),
        SymmetryGroup::SO2 => Ok(selection_operator(group, &filter_rotation_so2(set))),
        SymmetryGroup::O3 => o3::build_o3_coupling(&o3::filter_symmetric_o3(set), seed),
    }
}

impl<R: Real> SymmetrizationOperator<R> {
    pub(crate) fn from_parts(
        group: SymmetryGroup,
        labels: Vec<InvariantLabel>,
        columns: IndexSet,
        rows: Vec<Vec<(usize, R)>>,
    ) -> Self {
        Self {
            group,
            labels,
            columns,
            rows,
        }
    }

    pub fn group(&self) -> SymmetryGroup {
        self.group
    }

    pub fn labels(&self) -> &[InvariantLabel] {
        &self.labels
    }

    /// Column label set: the admissible tuples the rows couple.
    pub fn columns(&self) -> &IndexSet {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> &[Vec<(usize, R)>] {
        &self.rows
    }

    pub fn row_support(&self, label: &InvariantLabel) -> Option<Vec<(&IndexTuple, R)>> {
        let i = self.labels.iter().position(|x| x == label)?;
        Some(
            self.rows[i]
                .iter()
                .map(|&(j, w)| (&self.columns.tuples()[j], w))
                .collect(),
        )
    }

    /// Invariant features from canonical (or self-interacting) features over
    /// [`columns`](Self::columns).
    pub fn apply(&self, features: &[C<R>]) -> Result<Vec<C<R>>, SymmetryError> {
        apply_rows(&self.rows, features, self.columns.len())
    }

    /// Like [`apply`](Self::apply), insisting the result is real.
    pub fn evaluate_real(&self, features: &[C<R>]) -> Result<Vec<R>, SymmetryError> {
        realize(self.apply(features)?, &self.labels)
    }

    pub fn write_triplets<W: Write>(&self, out: W) -> Result<(), PurifyError> {
        write_label_triplets(
            out,
            &self.group.to_string(),
            &self.labels,
            &self.columns,
            &self.rows,
        )
    }
}

/// The composition `C · P`: invariant features straight from
/// self-interacting products over the purification columns.
#[derive(Debug, Clone)]
pub struct FusedOperator<R> {
    group: SymmetryGroup,
    labels: Vec<InvariantLabel>,
    columns: IndexSet,
    rows: Vec<Vec<(usize, R)>>,
}

const FUSE_PRUNE_TOL: f64 = 1e-14;

/// Sparse product of the symmetrization and purification operators.
/// Entries below `1e-14` in magnitude are dropped (absolute: both factors
/// carry O(1) normalization).
pub fn fuse_symmetrization<R: DenseReal>(
    c: &SymmetrizationOperator<R>,
    p: &PurificationOperator<R>,
) -> Result<FusedOperator<R>, SymmetryError> {
    let tuple_to_p_row: Vec<usize> = c
        .columns
        .tuples()
        .iter()
        .map(|t| {
            p.targets()
                .position(t)
                .ok_or_else(|| SymmetryError::FuseMismatch { tuple: t.to_string() })
        })
        .collect::<Result<_, _>>()?;

    let prune = R::of(FUSE_PRUNE_TOL);
    let rows = c
        .rows
        .iter()
        .map(|crow| {
            let mut acc: HashMap<usize, R> = HashMap::new();
            for &(k, w) in crow {
                for &(j, v) in &p.rows()[tuple_to_p_row[k]] {
                    *acc.entry(j).or_insert_with(R::zero) += w * v;
                }
            }
            let mut row: Vec<(usize, R)> =
                acc.into_iter().filter(|(_, v)| fabs(*v) >= prune).collect();
            row.sort_by_key(|e| e.0);
            row
        })
        .collect();
    Ok(FusedOperator {
        group: c.group,
        labels: c.labels.clone(),
        columns: p.columns().clone(),
        rows,
    })
}

impl<R: Real> FusedOperator<R> {
    pub fn group(&self) -> SymmetryGroup {
        self.group
    }

    pub fn labels(&self) -> &[InvariantLabel] {
        &self.labels
    }

    /// Column label set: the purification closure `K'`.
    pub fn columns(&self) -> &IndexSet {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn rows(&self) -> &[Vec<(usize, R)>] {
        &self.rows
    }

    pub fn row_support(&self, label: &InvariantLabel) -> Option<Vec<(&IndexTuple, R)>> {
        let i = self.labels.iter().position(|x| x == label)?;
        Some(
            self.rows[i]
                .iter()
                .map(|&(j, w)| (&self.columns.tuples()[j], w))
                .collect(),
        )
    }

    /// Invariant features from self-interacting products over
    /// [`columns`](Self::columns).
    pub fn apply(&self, products: &[C<R>]) -> Result<Vec<C<R>>, SymmetryError> {
        apply_rows(&self.rows, products, self.columns.len())
    }

    pub fn write_triplets<W: Write>(&self, out: W) -> Result<(), PurifyError> {
        write_label_triplets(
            out,
            &self.group.to_string(),
            &self.labels,
            &self.columns,
            &self.rows,
        )
    }
}

const IMAGINARY_RESIDUE_TOL: f64 = 1e-10;

/// Invariant feature values from a fused operator and a product feature
/// vector.
///
/// For `O(1)` and `O(3)` the invariant combinations of (real or complex)
/// features are real-valued, so an imaginary residue above
/// `1e-10 * (1 + |B|)` means the inputs don't belong to the operator and is
/// reported as an error; the returned values have exactly zero imaginary
/// part. `SO(2)` invariants are genuinely complex (conjugation maps a tuple
/// to its negation) and pass through unchanged.
pub fn evaluate_invariants<R: Real>(
    op: &FusedOperator<R>,
    products: &[C<R>],
) -> Result<Vec<C<R>>, SymmetryError> {
    let values = op.apply(products)?;
    match op.group {
        SymmetryGroup::SO2 => Ok(values),
        SymmetryGroup::O1 | SymmetryGroup::O3 => Ok(realize(values, &op.labels)?
            .into_iter()
            .map(|re| C::new(re, R::zero()))
            .collect()),
    }
}

fn apply_rows<R: Real>(
    rows: &[Vec<(usize, R)>],
    features: &[C<R>],
    want: usize,
) -> Result<Vec<C<R>>, SymmetryError> {
    if features.len() != want {
        return Err(SymmetryError::LengthMismatch {
            want,
            got: features.len(),
        });
    }
    Ok(rows
        .iter()
        .map(|row| {
            let mut acc = C::new(R::zero(), R::zero());
            for &(j, w) in row {
                acc += features[j] * w;
            }
            acc
        })
        .collect())
}

fn realize<R: Real>(values: Vec<C<R>>, labels: &[InvariantLabel]) -> Result<Vec<R>, SymmetryError> {
    let tol = R::of(IMAGINARY_RESIDUE_TOL);
    values
        .into_iter()
        .zip(labels)
        .map(|(v, label)| {
            let gate = tol * (R::one() + fabs(v.re));
            if fabs(v.im) > gate {
                Err(SymmetryError::ImaginaryResidue {
                    label: label.to_string(),
                    residue: fabs(v.im).to_f64_lossy(),
                    tol: gate.to_f64_lossy(),
                })
            } else {
                Ok(v.re)
            }
        })
        .collect()
}

fn write_label_triplets<R: Real, W: Write>(
    out: W,
    tag: &str,
    labels: &[InvariantLabel],
    columns: &IndexSet,
    rows: &[Vec<(usize, R)>],
) -> Result<(), PurifyError> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    let nnz: usize = rows.iter().map(Vec::len).sum();
    let caps = DegreeCaps::Total(columns.max_degree());
    w.write_record([
        labels.len().to_string(),
        columns.len().to_string(),
        nnz.to_string(),
        tag.to_string(),
        caps.to_string(),
    ])
    .map_err(|e| PurifyError::Format(e.to_string()))?;
    for (label, row) in labels.iter().zip(rows) {
        let row_label = label.to_string();
        for &(j, v) in row {
            w.write_record([
                row_label.clone(),
                columns.tuples()[j].to_string(),
                v.to_string(),
            ])
            .map_err(|e| PurifyError::Format(e.to_string()))?;
        }
    }
    w.flush().map_err(PurifyError::Io)?;
    Ok(())
}

/// A random element of `group` applied to a configuration: a global sign
/// flip, angle shift, or rotation-with-optional-reflection.
pub fn random_group_action<R: Real>(
    group: SymmetryGroup,
    x: &Configuration<R>,
    rng: &mut ChaCha8Rng,
) -> Configuration<R> {
    use rand::Rng;
    match group {
        SymmetryGroup::O1 => {
            let flip = rng.gen_bool(0.5);
            Configuration {
                particles: x
                    .particles
                    .iter()
                    .map(|p| match p {
                        Particle::Line(v) => Particle::Line(if flip { -*v } else { *v }),
                        other => *other,
                    })
                    .collect(),
            }
        }
        SymmetryGroup::SO2 => {
            let shift = R::of(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
            Configuration {
                particles: x
                    .particles
                    .iter()
                    .map(|p| match p {
                        Particle::Angle(t) => Particle::Angle(wrap_angle(*t + shift)),
                        other => *other,
                    })
                    .collect(),
            }
        }
        SymmetryGroup::O3 => {
            let rot = o3::random_rotation::<R>(rng);
            let reflect = rng.gen_bool(0.5);
            let rotated = o3::rotate_configuration(x, &rot);
            if reflect {
                Configuration {
                    particles: rotated
                        .particles
                        .iter()
                        .map(|p| match p {
                            Particle::Point(v) => Particle::Point([-v[0], -v[1], -v[2]]),
                            other => *other,
                        })
                        .collect(),
                }
            } else {
                rotated
            }
        }
    }
}

/// Reduces an angle to `(-pi, pi]`.
pub fn wrap_angle<R: Real>(t: R) -> R {
    let two_pi = R::of(std::f64::consts::TAU);
    let pi = R::of(std::f64::consts::PI);
    let mut w = t;
    while w > pi {
        w -= two_pi;
    }
    while w <= -pi {
        w += two_pi;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisFamily;
    use crate::expansion::{generate_index_set, FeatureEvaluator};
    use crate::purification::close_index_set;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn scalar_set(tuples: &[&[u32]]) -> IndexSet {
        IndexSet::from_tuples(
            tuples
                .iter()
                .map(|ks| IndexTuple::new(ks.iter().map(|&k| OneParticleIndex::Scalar(k)).collect()))
                .collect(),
        )
    }

    fn freq_set(tuples: &[&[i32]]) -> IndexSet {
        IndexSet::from_tuples(
            tuples
                .iter()
                .map(|ks| {
                    IndexTuple::new(ks.iter().map(|&k| OneParticleIndex::Frequency(k)).collect())
                })
                .collect(),
        )
    }

    #[test]
    fn parity_filter_examples() {
        let filtered = filter_parity_o1(&scalar_set(&[&[1, 1], &[1, 2], &[2, 2]]));
        assert_eq!(filtered.tuples(), scalar_set(&[&[1, 1], &[2, 2]]).tuples());

        let with_empty = IndexSet::from_tuples(vec![IndexTuple::empty()]);
        assert_eq!(filter_parity_o1(&with_empty).len(), 1);

        let singles = filter_parity_o1(&scalar_set(&[&[1], &[2], &[3]]));
        assert_eq!(singles.tuples(), scalar_set(&[&[2]]).tuples());
    }

    #[test]
    fn rotation_filter_examples() {
        let filtered = filter_rotation_so2(&freq_set(&[&[-1, 1], &[1, 1], &[1, 1, -2]]));
        assert_eq!(filtered.tuples(), freq_set(&[&[-1, 1], &[1, 1, -2]]).tuples());

        let with_empty = IndexSet::from_tuples(vec![IndexTuple::empty()]);
        assert_eq!(filter_rotation_so2(&with_empty).len(), 1);

        assert!(filter_rotation_so2(&freq_set(&[&[2, -1]])).is_empty());
    }

    #[test]
    fn selection_rows_are_unit_selections() {
        let set = scalar_set(&[&[1, 1], &[2, 2]]);
        let op = selection_operator::<f64>(SymmetryGroup::O1, &set);
        assert_eq!(op.len(), 2);
        for (label, row) in op.labels().iter().zip(op.rows()) {
            assert_eq!(row.len(), 1);
            assert_eq!(row[0].1, 1.0);
            assert!(matches!(label, InvariantLabel::Tuple(_)));
        }
    }

    #[test]
    fn fused_pair_row_and_sign_invariance() {
        let mono = BasisFamily::<f64>::monomial();
        let k = scalar_set(&[&[1, 1]]);
        let p = PurificationOperator::build(&mono, &k).unwrap();
        let c = symmetrize::<f64>(SymmetryGroup::O1, &k, 0).unwrap();
        let fused = fuse_symmetrization(&c, &p).unwrap();
        assert_eq!(fused.len(), 1);
        let support = fused.row_support(&fused.labels()[0].clone()).unwrap();
        let as_strings: Vec<(String, f64)> =
            support.iter().map(|(t, v)| (t.to_string(), *v)).collect();
        assert!(as_strings.contains(&("1|1".to_string(), 1.0)));
        assert!(as_strings.contains(&("2".to_string(), -1.0)));

        // X = {0.3, -0.3}: the distinct-pair invariant is 2 * 0.3 * (-0.3).
        let evaluator = FeatureEvaluator::new(&mono, fused.columns());
        let eval = |xs: &[f64]| {
            let products = evaluator
                .self_interacting(&Configuration::from_line(xs))
                .unwrap();
            evaluate_invariants(&fused, &products).unwrap()[0].re
        };
        assert_relative_eq!(eval(&[0.3, -0.3]), -0.18, max_relative = 1e-14);
        let x = [0.3, -0.1, 0.7];
        assert_relative_eq!(
            eval(&x),
            eval(&x.map(|v| -v)),
            max_relative = 1e-14
        );
    }

    #[test]
    fn so2_invariants_are_shift_invariant() {
        let trig = BasisFamily::<f64>::trigonometric();
        let set = generate_index_set(&trig, 3, &DegreeCaps::Total(4), false);
        let c = symmetrize::<f64>(SymmetryGroup::SO2, &set, 0).unwrap();
        assert!(!c.is_empty());
        let (closed, _) = close_index_set(&trig, c.columns()).unwrap();
        let p = PurificationOperator::build(&trig, &closed).unwrap();
        let fused = fuse_symmetrization(&c, &p).unwrap();

        let evaluator = FeatureEvaluator::new(&trig, fused.columns());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = crate::sampling::Distribution::UniformTorus.sample_configuration::<f64>(4, &mut rng);
        let products = evaluator.self_interacting(&x).unwrap();
        let b0 = evaluate_invariants(&fused, &products).unwrap();
        for _ in 0..20 {
            let shifted = random_group_action(SymmetryGroup::SO2, &x, &mut rng);
            let products = evaluator.self_interacting(&shifted).unwrap();
            let b = evaluate_invariants(&fused, &products).unwrap();
            for (u, v) in b0.iter().zip(&b) {
                assert!((u - v).norm() <= 1e-10 * (1.0 + u.norm()), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn non_invariant_selection_has_complex_values() {
        // Bypassing the filter couples a tuple with nonzero frequency sum;
        // its value is genuinely complex and evaluate_real must refuse.
        let trig = BasisFamily::<f64>::trigonometric();
        let set = freq_set(&[&[1, 2]]);
        let c = selection_operator::<f64>(SymmetryGroup::SO2, &set);
        let evaluator = FeatureEvaluator::new(&trig, &set);
        let x = Configuration::from_angles(&[0.4, -1.1, 2.2]);
        let features = evaluator.self_interacting(&x).unwrap();
        let err = c.evaluate_real(&features).unwrap_err();
        assert!(matches!(err, SymmetryError::ImaginaryResidue { .. }), "{err}");
    }

    #[test]
    fn closure_respects_the_filters() {
        // Parity: monomial rules only ever produce k1 + k2, preserving the
        // evenness of tuple sums; likewise frequency sums for the torus.
        let mono = BasisFamily::<f64>::monomial();
        let set = filter_parity_o1(&generate_index_set(&mono, 3, &DegreeCaps::Total(6), false));
        let (closed, _) = close_index_set(&mono, &set).unwrap();
        assert_eq!(filter_parity_o1(&closed).len(), closed.len());

        let trig = BasisFamily::<f64>::trigonometric();
        let set =
            filter_rotation_so2(&generate_index_set(&trig, 3, &DegreeCaps::Total(4), false));
        let (closed, _) = close_index_set(&trig, &set).unwrap();
        assert_eq!(filter_rotation_so2(&closed).len(), closed.len());
    }

    #[test]
    fn angle_wrapping() {
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(0.25), 0.25);
    }

    #[test]
    fn label_display() {
        let t = InvariantLabel::Tuple(IndexTuple::new(vec![
            OneParticleIndex::Frequency(-1),
            OneParticleIndex::Frequency(1),
        ]));
        assert_eq!(t.to_string(), "-1|1");
        let c = InvariantLabel::Coupled {
            n: vec![0, 0],
            l: vec![1, 1],
            i: 1,
        };
        assert_eq!(c.to_string(), "0,1;0,1#1");
        let e = InvariantLabel::Coupled {
            n: vec![],
            l: vec![],
            i: 1,
        };
        assert_eq!(e.to_string(), "()#1");
    }

    #[test]
    fn triplet_export_layout() {
        let mono = BasisFamily::<f64>::monomial();
        let k = scalar_set(&[&[1, 1]]);
        let p = PurificationOperator::build(&mono, &k).unwrap();
        let c = symmetrize::<f64>(SymmetryGroup::O1, &k, 0).unwrap();
        let fused = fuse_symmetrization(&c, &p).unwrap();
        let mut buf = Vec::new();
        fused.write_triplets(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "1,2,2,o1,total:2");
        assert_eq!(lines.len(), 3);
    }
}
