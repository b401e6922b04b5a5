//! Rotation-reflection invariant couplings of spherical index tuples.
//!
//! Tuples sharing the same multiset of `(n, l)` pairs span a block that the
//! rotation group mixes internally. Within a block, the invariant
//! combinations are the joint fixed space of the tensor-product harmonic
//! representation `D(g) = W_{l_1}(g) x ... x W_{l_N}(g)` over a pool of
//! seeded random rotations, intersected with the reflection-fixed space
//! (which is all or nothing: reflections scale a block by `(-1)^{sum l}`).
//!
//! The construction is numerical throughout:
//!
//! * per-`l` matrices `W_l(g)` are least-squares fits of
//!   `Ybar_l(g u) = W_l(g) Ybar_l(u)` over a deterministic sphere covering;
//! * the fixed space is narrowed one rotation at a time by keeping the
//!   small-singular-value right vectors of `(D(g) - I)` restricted to the
//!   surviving basis;
//! * candidates are averaged over the slot permutations that fix the
//!   `(n, l)` labels, split into real and imaginary parts (the fixed space
//!   is stable under entrywise conjugation, so real spanning vectors
//!   exist), and re-orthonormalized;
//! * every surviving vector is validated against rotations never used in
//!   the narrowing; drift above `1e-8` aborts the build.
//!
//! Rows are unit-norm with the largest-magnitude entry positive, labeled
//! `(n, l, i)` with `i` counting invariants within the block.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Cholesky, DMatrix, DVector, SVD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{InvariantLabel, SymmetrizationOperator, SymmetryError, SymmetryGroup};
use crate::basis::linearize::fibonacci_sphere;
use crate::basis::spherical::{harmonics_table, lm_index};
use crate::basis::{Configuration, OneParticleIndex, Particle};
use crate::expansion::{IndexSet, IndexTuple};
use crate::scalar::{fabs, fmax, DenseReal, Real, C};

/// Singular values at or below `1e-10 * max(sigma_max, 1)` count as zero
/// when narrowing the fixed space.
const NULLSPACE_TOL: f64 = 1e-10;
/// Relative drift allowed on rotations held out of the narrowing.
const VALIDATION_TOL: f64 = 1e-8;
/// Orthonormalization drops candidates whose residual falls below this.
const GS_DROP_TOL: f64 = 1e-8;
/// Rotations used to narrow a block: `3 * dim`, capped. Two generic
/// rotations together with the grid restriction already generate a dense
/// subgroup, so the cap only trims confirmation passes on large blocks.
const MAX_BUILD_ROTATIONS: usize = 32;
/// Held-out rotations for validation, drawn after the build pool.
const VALIDATION_ROTATIONS: usize = 2;

fn build_rotations(dim: usize) -> usize {
    (3 * dim).clamp(3, MAX_BUILD_ROTATIONS)
}

/// Keeps the tuples that can carry rotation-reflection invariants:
/// spherical indices with zero total `m` and even total `l`. Tuples of any
/// other index kind are dropped.
pub fn filter_symmetric_o3(set: &IndexSet) -> IndexSet {
    IndexSet::from_tuples(
        set.tuples()
            .iter()
            .filter(|t| {
                let mut m_sum = 0i64;
                let mut l_sum = 0u64;
                for k in t.indices() {
                    match k {
                        OneParticleIndex::Spherical { l, m, .. } => {
                            m_sum += i64::from(*m);
                            l_sum += u64::from(*l);
                        }
                        _ => return false,
                    }
                }
                m_sum == 0 && l_sum % 2 == 0
            })
            .cloned()
            .collect(),
    )
}

/// A uniformly random rotation matrix (quaternion from four Gaussian
/// deviates).
pub fn random_rotation<R: Real>(rng: &mut ChaCha8Rng) -> [[R; 3]; 3] {
    let mut g = [0.0f64; 4];
    for pair in g.chunks_mut(2) {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let r = (-2.0 * u1.ln()).sqrt();
        let t = std::f64::consts::TAU * u2;
        pair[0] = r * t.cos();
        pair[1] = r * t.sin();
    }
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = if norm > 1e-12 {
        g.map(|v| v / norm)
    } else {
        [1.0, 0.0, 0.0, 0.0]
    };
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
    .map(|row| row.map(R::of))
}

pub fn rotate_point<R: Real>(rot: &[[R; 3]; 3], v: [R; 3]) -> [R; 3] {
    [
        rot[0][0] * v[0] + rot[0][1] * v[1] + rot[0][2] * v[2],
        rot[1][0] * v[0] + rot[1][1] * v[1] + rot[1][2] * v[2],
        rot[2][0] * v[0] + rot[2][1] * v[1] + rot[2][2] * v[2],
    ]
}

/// Rotates every ball particle of a configuration; other particle kinds
/// pass through unchanged.
pub fn rotate_configuration<R: Real>(x: &Configuration<R>, rot: &[[R; 3]; 3]) -> Configuration<R> {
    Configuration {
        particles: x
            .particles
            .iter()
            .map(|p| match p {
                Particle::Point(v) => Particle::Point(rotate_point(rot, *v)),
                other => *other,
            })
            .collect(),
    }
}

/// Shared rotation pool with the matrices `W_l(g)` satisfying
/// `Ybar_l(g u) = W_l(g) Ybar_l(u)`, fitted once per `(l, rotation)` and
/// immutable afterwards.
struct WignerPool<R: DenseReal> {
    #[cfg_attr(not(test), allow(dead_code))]
    rotations: Vec<[[R; 3]; 3]>,
    // mats[l][r] is (2l+1) x (2l+1)
    mats: Vec<Vec<DMatrix<C<R>>>>,
}

impl<R: DenseReal> WignerPool<R> {
    fn build(lmax: u16, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rotations: Vec<[[R; 3]; 3]> =
            (0..count).map(|_| random_rotation::<R>(&mut rng)).collect();

        let lmax = lmax as u32;
        let n_lm = ((lmax + 1) * (lmax + 1)) as usize;
        let npts = 6 * n_lm + 24;
        let dirs = fibonacci_sphere::<R>(npts);
        let tables: Vec<Vec<C<R>>> = dirs
            .iter()
            .map(|&u| harmonics_table(lmax, u))
            .collect();
        let rotated_tables: Vec<Vec<Vec<C<R>>>> = rotations
            .iter()
            .map(|rot| {
                dirs.iter()
                    .map(|&u| harmonics_table(lmax, rotate_point(rot, u)))
                    .collect()
            })
            .collect();

        let mut mats = Vec::with_capacity(lmax as usize + 1);
        for l in 0..=lmax {
            let dim = (2 * l + 1) as usize;
            let design = DMatrix::<C<R>>::from_fn(npts, dim, |i, j| {
                tables[i][lm_index(l, j as i32 - l as i32)]
            });
            let chol = Cholesky::new(design.ad_mul(&design))
                .expect("sphere covering yields a full-rank harmonic design");
            let mut per_rotation = Vec::with_capacity(count);
            for rt in &rotated_tables {
                let target = DMatrix::<C<R>>::from_fn(npts, dim, |i, j| {
                    rt[i][lm_index(l, j as i32 - l as i32)]
                });
                let x = chol.solve(&design.ad_mul(&target));
                let residual = (&design * &x - &target).norm() / fmax(target.norm(), R::one());
                assert!(
                    residual < R::of(1e-8),
                    "harmonic rotation fit failed: residual {:.3e} at l = {l}",
                    residual.to_f64_lossy()
                );
                per_rotation.push(x.transpose());
            }
            mats.push(per_rotation);
        }
        Self { rotations, mats }
    }

    fn wigner(&self, l: u16, rotation: usize) -> &DMatrix<C<R>> {
        &self.mats[l as usize][rotation]
    }
}

/// One `(n, l)` block: the tuples of the target set sharing a multiset of
/// `(n, l)` pairs, expanded into the ordered `m`-assignments with zero sum.
struct Block {
    pairs: Vec<(u16, u16)>,
    dims: Vec<usize>,
    grid: usize,
    assignments: Vec<Vec<i16>>,
    /// Position in the target set of each assignment's sorted tuple.
    tuple_pos: Vec<usize>,
}

impl Block {
    fn new(pairs: Vec<(u16, u16)>, set: &IndexSet) -> Self {
        let dims: Vec<usize> = pairs.iter().map(|&(_, l)| 2 * l as usize + 1).collect();
        let grid = dims.iter().product();
        let mut assignments = Vec::new();
        let mut tuple_pos = Vec::new();
        let mut counter = vec![0usize; pairs.len()];
        loop {
            let ms: Vec<i16> = counter
                .iter()
                .zip(&pairs)
                .map(|(&c, &(_, l))| c as i16 - l as i16)
                .collect();
            if ms.iter().map(|&m| i64::from(m)).sum::<i64>() == 0 {
                let tuple = IndexTuple::new(
                    pairs
                        .iter()
                        .zip(&ms)
                        .map(|(&(n, l), &m)| OneParticleIndex::Spherical { n, l, m })
                        .collect(),
                );
                if let Some(pos) = set.position(&tuple) {
                    assignments.push(ms);
                    tuple_pos.push(pos);
                }
            }
            // mixed-radix increment, slot 0 most significant
            let mut s = pairs.len();
            loop {
                if s == 0 {
                    return Self {
                        pairs,
                        dims,
                        grid,
                        assignments,
                        tuple_pos,
                    };
                }
                s -= 1;
                counter[s] += 1;
                if counter[s] < dims[s] {
                    break;
                }
                counter[s] = 0;
            }
        }
    }

    fn l_sum(&self) -> u64 {
        self.pairs.iter().map(|&(_, l)| u64::from(l)).sum()
    }

    fn grid_index(&self, ms: &[i16]) -> usize {
        self.pairs
            .iter()
            .zip(ms)
            .fold(0usize, |acc, (&(_, l), &m)| {
                acc * (2 * l as usize + 1) + (m + l as i16) as usize
            })
    }

    /// Slot permutations fixing the `(n, l)` labels; equal pairs are
    /// contiguous because `pairs` is sorted.
    fn stabilizer(&self) -> Vec<Vec<usize>> {
        let n = self.pairs.len();
        let mut perms: Vec<Vec<usize>> = vec![(0..n).collect()];
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && self.pairs[end] == self.pairs[start] {
                end += 1;
            }
            let run_perms = permutations(end - start);
            let mut next = Vec::with_capacity(perms.len() * run_perms.len());
            for base in &perms {
                for rp in &run_perms {
                    let mut p = base.clone();
                    for (offset, &src) in rp.iter().enumerate() {
                        p[start + offset] = base[start + src];
                    }
                    next.push(p);
                }
            }
            perms = next;
            start = end;
        }
        perms
    }
}

/// Modified Gram-Schmidt with one reorthogonalization pass; candidates
/// collapsing below `drop_tol` (duplicates, vanished imaginary parts) are
/// discarded.
fn orthonormalize<R: DenseReal>(candidates: Vec<DVector<R>>, drop_tol: R) -> Vec<DVector<R>> {
    let mut basis: Vec<DVector<R>> = Vec::new();
    for mut v in candidates {
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&v);
                v.axpy(-d, b, R::one());
            }
        }
        let norm = v.norm();
        if norm > drop_tol {
            basis.push(v / norm);
        }
    }
    basis
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for slot in 0..n {
            let mut p: Vec<usize> = rest.iter().map(|&v| v + usize::from(v >= slot)).collect();
            p.insert(0, slot);
            out.push(p);
        }
    }
    out
}

/// Applies the tensor-product matrix `mats[0] x ... x mats[last]` to a
/// full-grid vector, one mode at a time (slot 0 most significant).
fn apply_tensor<R: DenseReal>(
    mats: &[&DMatrix<C<R>>],
    dims: &[usize],
    v: &[C<R>],
) -> Vec<C<R>> {
    let g = v.len();
    let zero = C::new(R::zero(), R::zero());
    let mut cur = v.to_vec();
    let mut stride_after: usize = dims.iter().product();
    for (s, w) in mats.iter().enumerate() {
        let d = dims[s];
        stride_after /= d;
        let block = d * stride_after;
        let mut next = vec![zero; g];
        for base in (0..g).step_by(block) {
            for t in 0..stride_after {
                for a in 0..d {
                    let mut acc = zero;
                    for b in 0..d {
                        acc += w[(a, b)] * cur[base + b * stride_after + t];
                    }
                    next[base + a * stride_after + t] = acc;
                }
            }
        }
        cur = next;
    }
    cur
}

/// `(D(g) - I) B` over the full grid, columns tracking the current basis.
fn constraint_matrix<R: DenseReal>(
    block: &Block,
    mats: &[&DMatrix<C<R>>],
    basis: &DMatrix<C<R>>,
) -> DMatrix<C<R>> {
    let zero = C::new(R::zero(), R::zero());
    let mut out = DMatrix::from_element(block.grid, basis.ncols(), zero);
    for k in 0..basis.ncols() {
        let mut full = vec![zero; block.grid];
        for (j, ms) in block.assignments.iter().enumerate() {
            full[block.grid_index(ms)] = basis[(j, k)];
        }
        let rotated = apply_tensor(mats, &block.dims, &full);
        for g in 0..block.grid {
            out[(g, k)] = rotated[g] - full[g];
        }
    }
    out
}

/// Right-singular vectors of `c` with singular value at or below the
/// nullspace threshold (scaled by `scale` to keep Gram-squared thresholds
/// honest), as columns.
fn small_singular_vectors<R: DenseReal>(c: DMatrix<C<R>>, tol: R) -> DMatrix<C<R>> {
    let ncols = c.ncols();
    let svd = SVD::new(c, false, true);
    let smax = svd
        .singular_values
        .iter()
        .fold(R::zero(), |acc, &s| fmax(acc, s));
    let cut = tol * fmax(smax, R::one());
    let v_t = svd.v_t.expect("SVD with v_t requested");
    let keep: Vec<usize> = (0..v_t.nrows())
        .filter(|&i| svd.singular_values[i] <= cut)
        .collect();
    let mut out = DMatrix::from_element(ncols, keep.len(), C::new(R::zero(), R::zero()));
    for (col, &i) in keep.iter().enumerate() {
        for j in 0..ncols {
            out[(j, col)] = v_t[(i, j)].conj();
        }
    }
    out
}

/// Invariant rows of one block over the target set positions.
fn solve_block<R: DenseReal>(
    block: &Block,
    pool: &WignerPool<R>,
    set_len: usize,
) -> Result<Vec<Vec<(usize, R)>>, SymmetryError> {
    // Reflections act on the block as (-1)^(sum l): odd blocks carry no
    // invariants at all, even blocks see reflections trivially.
    if block.l_sum() % 2 == 1 || block.assignments.is_empty() {
        return Ok(Vec::new());
    }
    let dim = block.assignments.len();
    let n_build = build_rotations(dim);
    let zero = C::new(R::zero(), R::zero());

    let mut basis = DMatrix::<C<R>>::identity(dim, dim);
    for r in 0..n_build {
        if basis.ncols() == 0 {
            return Ok(Vec::new());
        }
        let mats: Vec<&DMatrix<C<R>>> = block
            .pairs
            .iter()
            .map(|&(_, l)| pool.wigner(l, r))
            .collect();
        let c = constraint_matrix(block, &mats, &basis);
        // Large first passes go through the Gram matrix: same nullspace,
        // square instead of grid-tall. Squaring halves the usable digits,
        // so the cut is deliberately loose; the later direct passes
        // re-narrow with the honest threshold.
        let null = if basis.ncols() > 96 {
            let gram = c.ad_mul(&c);
            small_singular_vectors(gram, R::of(1e-8))
        } else {
            small_singular_vectors(c, R::of(NULLSPACE_TOL))
        };
        basis = &basis * &null;
    }
    if basis.ncols() == 0 {
        return Ok(Vec::new());
    }

    // Average over the slot permutations fixing (n, l); the canonical
    // features only see the symmetric part, so nothing is lost and the
    // orbit sums below become well defined.
    let perms = block.stabilizer();
    let assignment_index: HashMap<&[i16], usize> = block
        .assignments
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_slice(), i))
        .collect();
    let perm_maps: Vec<Vec<usize>> = perms
        .iter()
        .map(|p| {
            block
                .assignments
                .iter()
                .map(|m| {
                    let q: Vec<i16> = p.iter().map(|&s| m[s]).collect();
                    assignment_index[q.as_slice()]
                })
                .collect()
        })
        .collect();
    let weight = R::of(1.0 / perms.len() as f64);
    let mut candidates: Vec<DVector<R>> = Vec::new();
    for k in 0..basis.ncols() {
        let mut sym = vec![zero; dim];
        for map in &perm_maps {
            for j in 0..dim {
                sym[j] += basis[(map[j], k)] * weight;
            }
        }
        // The fixed space is stable under entrywise conjugation, so its
        // real and imaginary parts stay inside it and span it over the
        // reals.
        candidates.push(DVector::from_iterator(dim, sym.iter().map(|v| v.re)));
        candidates.push(DVector::from_iterator(dim, sym.iter().map(|v| v.im)));
    }
    let vectors = orthonormalize(candidates, R::of(GS_DROP_TOL));
    if vectors.is_empty() {
        return Ok(Vec::new());
    }

    // Hold-out check: rotations the narrowing never saw must also fix
    // every surviving vector.
    for (i, v) in vectors.iter().enumerate() {
        let complex = DMatrix::from_fn(dim, 1, |j, _| C::new(v[j], R::zero()));
        for r in MAX_BUILD_ROTATIONS..MAX_BUILD_ROTATIONS + VALIDATION_ROTATIONS {
            let mats: Vec<&DMatrix<C<R>>> = block
                .pairs
                .iter()
                .map(|&(_, l)| pool.wigner(l, r))
                .collect();
            let c = constraint_matrix(block, &mats, &complex);
            let residual = c.norm();
            if residual > R::of(VALIDATION_TOL) {
                return Err(SymmetryError::Validation {
                    label: InvariantLabel::Coupled {
                        n: block.pairs.iter().map(|&(n, _)| n).collect(),
                        l: block.pairs.iter().map(|&(_, l)| l).collect(),
                        i: i + 1,
                    }
                    .to_string(),
                    residual: residual.to_f64_lossy(),
                });
            }
        }
    }

    // Orbit sums: distinct ordered assignments of the same sorted tuple
    // accumulate into one column coefficient.
    let rows = vectors
        .iter()
        .map(|v| {
            let mut acc = vec![R::zero(); set_len];
            for (j, &pos) in block.tuple_pos.iter().enumerate() {
                acc[pos] += v[j];
            }
            let max_abs = acc.iter().fold(R::zero(), |m, &x| fmax(m, fabs(x)));
            let floor = R::of(1e-13) * max_abs;
            let mut row: Vec<(usize, R)> = acc
                .into_iter()
                .enumerate()
                .filter(|&(_, x)| fabs(x) > floor)
                .collect();
            let norm = num_traits::Float::sqrt(
                row.iter().fold(R::zero(), |s, &(_, x)| s + x * x),
            );
            let lead = row
                .iter()
                .map(|&(_, x)| x)
                .fold((R::zero(), R::one()), |(best, sign), x| {
                    if fabs(x) > best {
                        (fabs(x), if x < R::zero() { -R::one() } else { R::one() })
                    } else {
                        (best, sign)
                    }
                })
                .1;
            let scale = lead / norm;
            for e in &mut row {
                e.1 *= scale;
            }
            row
        })
        .collect();
    Ok(rows)
}

/// Builds the invariant coupling operator for a set of spherical tuples.
///
/// The set should already be restricted to zero total `m` and even total
/// `l` (see [`filter_symmetric_o3`]); tuples outside that subspace are
/// simply absent from every row. Non-spherical tuples are an error.
/// The construction is deterministic in `seed` and parallel across blocks.
pub fn build_o3_coupling<R: DenseReal>(
    set: &IndexSet,
    seed: u64,
) -> Result<SymmetrizationOperator<R>, SymmetryError> {
    let mut lmax = 0u16;
    for t in set.tuples() {
        for k in t.indices() {
            match k {
                OneParticleIndex::Spherical { l, .. } => lmax = lmax.max(*l),
                _ => {
                    return Err(SymmetryError::WrongIndexKind {
                        group: SymmetryGroup::O3,
                        tuple: t.to_string(),
                    })
                }
            }
        }
    }

    let mut block_keys: BTreeMap<Vec<(u16, u16)>, ()> = BTreeMap::new();
    for t in set.tuples() {
        let pairs: Vec<(u16, u16)> = t
            .indices()
            .iter()
            .map(|k| match k {
                OneParticleIndex::Spherical { n, l, .. } => (*n, *l),
                _ => unreachable!(),
            })
            .collect();
        block_keys.entry(pairs).or_insert(());
    }
    let blocks: Vec<Block> = block_keys
        .into_keys()
        .map(|pairs| Block::new(pairs, set))
        .collect();

    let pool = WignerPool::<R>::build(
        lmax,
        MAX_BUILD_ROTATIONS + VALIDATION_ROTATIONS,
        seed,
    );
    let solved: Vec<Vec<Vec<(usize, R)>>> = blocks
        .par_iter()
        .map(|b| solve_block(b, &pool, set.len()))
        .collect::<Result<_, _>>()?;

    let mut labels = Vec::new();
    let mut rows = Vec::new();
    for (block, block_rows) in blocks.iter().zip(solved) {
        for (i, row) in block_rows.into_iter().enumerate() {
            labels.push(InvariantLabel::Coupled {
                n: block.pairs.iter().map(|&(n, _)| n).collect(),
                l: block.pairs.iter().map(|&(_, l)| l).collect(),
                i: i + 1,
            });
            rows.push(row);
        }
    }
    Ok(SymmetrizationOperator::from_parts(
        SymmetryGroup::O3,
        labels,
        set.clone(),
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::spherical::{radial_table, split_radial};
    use crate::basis::BasisFamily;
    use crate::expansion::{generate_index_set, DegreeCaps, FeatureEvaluator};
    use crate::purification::{close_index_set, PurificationOperator};
    use crate::sampling::Distribution;
    use crate::symmetry::{evaluate_invariants, fuse_symmetrization, random_group_action};
    use approx::assert_relative_eq;

    fn sph(parts: &[(u16, u16, i16)]) -> IndexTuple {
        IndexTuple::new(
            parts
                .iter()
                .map(|&(n, l, m)| OneParticleIndex::Spherical { n, l, m })
                .collect(),
        )
    }

    #[test]
    fn filter_keeps_zero_m_even_l() {
        let set = IndexSet::from_tuples(vec![
            sph(&[(0, 0, 0)]),
            sph(&[(0, 1, 0)]),                // l sum odd
            sph(&[(0, 1, 1), (0, 1, -1)]),    // in
            sph(&[(0, 1, 1), (0, 1, 0)]),     // m sum nonzero
            sph(&[(1, 2, -2), (0, 2, 2)]),    // in
        ]);
        let kept = filter_symmetric_o3(&set);
        assert_eq!(kept.len(), 3);
        assert!(kept.contains(&sph(&[(0, 0, 0)])));
        assert!(kept.contains(&sph(&[(0, 1, 1), (0, 1, -1)])));
        assert!(kept.contains(&sph(&[(1, 2, -2), (0, 2, 2)])));
    }

    #[test]
    fn random_rotations_are_special_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let r = random_rotation::<f64>(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-12);
                }
            }
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
                - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            assert!((det - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fitted_matrices_represent_rotations() {
        let pool = WignerPool::<f64>::build(3, 4, 99);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for r in 0..4 {
            let rot = pool.rotations[r];
            for _ in 0..5 {
                let (_, u) = split_radial::<f64>([
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]);
                let before = harmonics_table(3, u);
                let after = harmonics_table(3, rotate_point(&rot, u));
                for l in 0..=3u16 {
                    let w = pool.wigner(l, r);
                    let d = 2 * l as usize + 1;
                    for a in 0..d {
                        let mut acc = C::new(0.0, 0.0);
                        for b in 0..d {
                            acc += w[(a, b)]
                                * before[lm_index(l as u32, b as i32 - l as i32)];
                        }
                        let want = after[lm_index(l as u32, a as i32 - l as i32)];
                        assert!((acc - want).norm() < 1e-9, "l={l} a={a}");
                    }
                }
            }
        }
    }

    #[test]
    fn scalar_blocks_are_identity_rows() {
        let set = IndexSet::from_tuples(vec![
            IndexTuple::empty(),
            sph(&[(0, 0, 0)]),
            sph(&[(1, 0, 0), (2, 0, 0)]),
        ]);
        let op = build_o3_coupling::<f64>(&set, 5).unwrap();
        assert_eq!(op.len(), 3);
        for (label, row) in op.labels().iter().zip(op.rows()) {
            assert_eq!(row.len(), 1, "{label}");
            assert_relative_eq!(row[0].1, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn odd_l_blocks_have_no_rows() {
        let set = IndexSet::from_tuples(vec![sph(&[(0, 1, 0)])]);
        let op = build_o3_coupling::<f64>(&set, 5).unwrap();
        assert!(op.is_empty());
    }

    #[test]
    fn paired_l1_block_is_the_dot_product_contraction() {
        // The l = (1, 1) block carries exactly one invariant, and it must
        // be proportional to sum_{j != j'} R0(y_j) R0(y_j') u_j . u_j' --
        // a geometric oracle computed straight from coordinates.
        let set = IndexSet::from_tuples(vec![
            sph(&[(0, 1, -1), (0, 1, 1)]),
            sph(&[(0, 1, 0), (0, 1, 0)]),
        ]);
        let op = build_o3_coupling::<f64>(&set, 17).unwrap();
        assert_eq!(op.len(), 1);
        assert!(matches!(
            op.labels()[0],
            InvariantLabel::Coupled { ref l, .. } if *l == vec![1, 1]
        ));

        let r_cut = 2.5;
        let family = BasisFamily::<f64>::spherical(r_cut);
        let evaluator = FeatureEvaluator::new(&family, op.columns());
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let dist = Distribution::Ball { r_cut };
        let mut ratio = None;
        for _ in 0..5 {
            let x = dist.sample_configuration::<f64>(4, &mut rng);
            let canonical = evaluator.canonical_brute_force(&x).unwrap();
            let b = op.evaluate_real(&canonical).unwrap()[0];

            let mut oracle = 0.0;
            let points: Vec<[f64; 3]> = x
                .particles
                .iter()
                .map(|p| match p {
                    Particle::Point(v) => *v,
                    _ => unreachable!(),
                })
                .collect();
            for (j, pj) in points.iter().enumerate() {
                for (jp, pjp) in points.iter().enumerate() {
                    if j == jp {
                        continue;
                    }
                    let (rj, uj) = split_radial(*pj);
                    let (rjp, ujp) = split_radial(*pjp);
                    let r0j = radial_table(false, 0, rj, r_cut)[0];
                    let r0jp = radial_table(false, 0, rjp, r_cut)[0];
                    let dot = uj[0] * ujp[0] + uj[1] * ujp[1] + uj[2] * ujp[2];
                    oracle += r0j * r0jp * dot;
                }
            }
            let r = b / oracle;
            match ratio {
                None => ratio = Some(r),
                Some(r0) => assert_relative_eq!(r, r0, max_relative = 1e-8),
            }
        }
    }

    #[test]
    fn coupled_invariants_survive_rotations_and_reflections() {
        let r_cut = 2.0;
        let family = BasisFamily::<f64>::spherical(r_cut);
        let raw = generate_index_set(&family, 3, &DegreeCaps::Total(4), true);
        let k = filter_symmetric_o3(&raw);
        let c = build_o3_coupling::<f64>(&k, 41).unwrap();
        assert!(!c.is_empty());
        let (closed, _) = close_index_set(&family, &k).unwrap();
        let p = PurificationOperator::build(&family, &closed).unwrap();
        let fused = fuse_symmetrization(&c, &p).unwrap();

        let evaluator = FeatureEvaluator::new(&family, fused.columns());
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dist = Distribution::Ball { r_cut };
        for trial in 0..8 {
            let x = dist.sample_configuration::<f64>(3 + trial % 3, &mut rng);
            let products = evaluator.self_interacting(&x).unwrap();
            let b0 = evaluate_invariants(&fused, &products).unwrap();
            for _ in 0..4 {
                let moved = random_group_action(crate::symmetry::SymmetryGroup::O3, &x, &mut rng);
                let products = evaluator.self_interacting(&moved).unwrap();
                let b = evaluate_invariants(&fused, &products).unwrap();
                for (u, v) in b0.iter().zip(&b) {
                    assert_eq!(u.im, 0.0);
                    assert!(
                        (u.re - v.re).abs() <= 1e-10 * (1.0 + u.re.abs()),
                        "trial {trial}: {u} vs {v}"
                    );
                }
            }
        }
    }

    #[test]
    fn fused_matches_two_step_application() {
        let r_cut = 2.0;
        let family = BasisFamily::<f64>::spherical(r_cut);
        let raw = generate_index_set(&family, 2, &DegreeCaps::Total(3), true);
        let k = filter_symmetric_o3(&raw);
        let c = build_o3_coupling::<f64>(&k, 2).unwrap();
        let (closed, _) = close_index_set(&family, &k).unwrap();
        let p = PurificationOperator::build(&family, &closed).unwrap();
        let fused = fuse_symmetrization(&c, &p).unwrap();

        let evaluator = FeatureEvaluator::new(&family, fused.columns());
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let x = Distribution::Ball { r_cut }.sample_configuration::<f64>(4, &mut rng);
        let products = evaluator.self_interacting(&x).unwrap();

        let direct = fused.apply(&products).unwrap();
        let purified = p.apply(&products).unwrap();
        let restricted: Vec<C<f64>> = k
            .tuples()
            .iter()
            .map(|t| purified[closed.position(t).unwrap()])
            .collect();
        let two_step = c.apply(&restricted).unwrap();
        for (a, b) in direct.iter().zip(&two_step) {
            assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
        }
    }

    #[test]
    fn closure_of_plain_radial_set_with_constants_is_stable() {
        let family = BasisFamily::<f64>::spherical(2.0);
        let set = generate_index_set(&family, 2, &DegreeCaps::Total(3), true);
        let (closed, report) = close_index_set(&family, &set).unwrap();
        assert_eq!(closed.len(), set.len());
        assert_eq!(report.extra.len(), 0);
    }

    #[test]
    fn rows_are_unit_norm_with_positive_lead() {
        let set = filter_symmetric_o3(&IndexSet::from_tuples(vec![
            sph(&[(0, 1, -1), (0, 1, 1)]),
            sph(&[(0, 1, 0), (0, 1, 0)]),
            sph(&[(0, 2, -2), (0, 2, 2)]),
            sph(&[(0, 2, -1), (0, 2, 1)]),
            sph(&[(0, 2, 0), (0, 2, 0)]),
        ]));
        let op = build_o3_coupling::<f64>(&set, 31).unwrap();
        assert_eq!(op.len(), 2);
        for row in op.rows() {
            let norm: f64 = row.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
            assert_relative_eq!(norm, 1.0, max_relative = 1e-12);
            let lead = row
                .iter()
                .fold((0.0, 0.0), |(m, s), &(_, v)| {
                    if v.abs() > m {
                        (v.abs(), v)
                    } else {
                        (m, s)
                    }
                })
                .1;
            assert!(lead > 0.0);
        }
    }
}
