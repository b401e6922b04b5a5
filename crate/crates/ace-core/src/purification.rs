//! Change of basis from self-interacting products to canonical cluster
//! features.
//!
//! Products of pooled features contain spurious "diagonal" contributions in
//! which several slots hit the same particle. This module removes them with
//! a sparse linear operator `P`, built row by row from the one-particle
//! product linearization rules: writing a tuple as `t = (s, k)` with `k` its
//! largest entry,
//!
//! ```text
//! row(t) = extend(row(s), k)
//!          - sum_beta sum_kappa c_kappa(s_beta, k) * row(sort(s[beta -> kappa]))
//! ```
//!
//! where `extend` appends `k` to every column label of `row(s)` and the
//! `c_kappa` are the coefficients of `phi_a phi_b = sum_kappa c_kappa
//! phi_kappa`. Orders zero and one are fixed points of the recursion, and
//! the diagonal entry of every row is exactly one by construction.
//!
//! The column labels appearing along the way may leave the original tuple
//! set; [`close_index_set`] computes the enlarged set. For total-degree
//! preserving families the closure stays within the original degree budget
//! and the operator is triangular in the (degree, order, lexicographic)
//! column ordering; the envelope-weighted radial family breaks both
//! properties.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::basis::{BasisError, BasisFamily, FamilyKind, RuleTable, ENVELOPE_DEGREE};
use crate::expansion::{DegreeCaps, FeatureEvaluator, IndexSet, IndexTuple};
use crate::linalg::LsFactor;
use crate::sampling::{Distribution, JSpec};
use crate::scalar::{fabs, fmax, DenseReal, Real};
use nalgebra::DMatrix;

#[derive(Debug, Error)]
pub enum PurifyError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("recursion produced tuple {tuple} of degree {degree}, past the cap {cap}")]
    ClosureGrowth {
        tuple: String,
        degree: u32,
        cap: u32,
    },
    #[error("expected {want} product values, got {got}")]
    LengthMismatch { want: usize, got: usize },
    #[error("span check needs at least {need} samples for {columns} columns, got {got}")]
    TooFewSamples {
        need: usize,
        got: usize,
        columns: usize,
    },
    #[error("operator file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Build options; the defaults are used throughout unless stated otherwise.
#[derive(Debug, Clone)]
pub struct PurifyOptions<R> {
    /// Row entries below `prune_tol * max |entry|` are dropped. The diagonal
    /// is always kept.
    pub prune_tol: R,
    /// Hard cap on the degree of any tuple generated by the recursion.
    /// `None` derives it from the targets: their maximum degree for
    /// degree-preserving families, plus `ENVELOPE_DEGREE` per correlation
    /// order otherwise. Exceeding the cap aborts with a diagnostic rather
    /// than looping; no family shipped here can actually overrun it.
    pub degree_cap: Option<u32>,
}

impl<R: Real> Default for PurifyOptions<R> {
    fn default() -> Self {
        Self {
            prune_tol: R::of(1e-12),
            degree_cap: None,
        }
    }
}

fn default_degree_cap<R: Real>(family: &BasisFamily<R>, targets: &IndexSet) -> u32 {
    let base = targets.max_degree();
    if family.is_degree_preserving() {
        base
    } else {
        base + ENVELOPE_DEGREE * targets.max_order() as u32
    }
}

/// Sparse map from self-interacting products (columns) to canonical
/// features (rows): `canonical = P * products`.
///
/// Rows are indexed by the target set `K`, columns by the closed set
/// `K' ⊇ K` collecting every label the recursion touches; the operator is
/// square exactly when `K` is closed.
#[derive(Debug, Clone)]
pub struct PurificationOperator<R> {
    family: FamilyKind,
    caps: DegreeCaps,
    targets: IndexSet,
    columns: IndexSet,
    /// Per target row: `(column position, coefficient)`, sorted by position.
    rows: Vec<Vec<(usize, R)>>,
    /// Largest linearization rule length seen while building; `None` for an
    /// operator reloaded from file with a least-squares family, where the
    /// rules are no longer available.
    rule_term_bound: Option<usize>,
}

type TupleRow<R> = Vec<(IndexTuple, R)>;

fn build_row<R: DenseReal>(
    t: &IndexTuple,
    table: &mut RuleTable<R>,
    memo: &mut HashMap<IndexTuple, TupleRow<R>>,
    prune_tol: R,
    degree_cap: u32,
) -> Result<(), PurifyError> {
    if memo.contains_key(t) {
        return Ok(());
    }
    if t.ord() <= 1 {
        memo.insert(t.clone(), vec![(t.clone(), R::one())]);
        return Ok(());
    }
    let indices = t.indices();
    let last = indices[indices.len() - 1];
    let stem = IndexTuple::new(indices[..indices.len() - 1].to_vec());
    build_row(&stem, table, memo, prune_tol, degree_cap)?;

    let mut acc: HashMap<IndexTuple, R> = HashMap::new();
    for (col, w) in memo.get(&stem).expect("stem row built").clone() {
        let extended = col.append(last);
        if extended.degree() > degree_cap {
            return Err(PurifyError::ClosureGrowth {
                tuple: extended.to_string(),
                degree: extended.degree(),
                cap: degree_cap,
            });
        }
        *acc.entry(extended).or_insert_with(R::zero) += w;
    }
    for beta in 0..stem.ord() {
        let k_beta = stem.indices()[beta];
        let rule = table.rule(k_beta, last)?;
        for &(kappa, coeff) in rule.terms() {
            let dep = stem.replace(beta, kappa);
            if dep.degree() > degree_cap {
                return Err(PurifyError::ClosureGrowth {
                    tuple: dep.to_string(),
                    degree: dep.degree(),
                    cap: degree_cap,
                });
            }
            build_row(&dep, table, memo, prune_tol, degree_cap)?;
            for (col, w) in memo.get(&dep).expect("dependency row built").clone() {
                *acc.entry(col).or_insert_with(R::zero) -= coeff * w;
            }
        }
    }

    let cmax = acc
        .values()
        .fold(R::zero(), |m, v| fmax(m, fabs(*v)));
    let floor = prune_tol * cmax;
    let mut row: TupleRow<R> = acc
        .into_iter()
        .filter(|(col, w)| col == t || fabs(*w) >= floor)
        .collect();
    row.sort_by(|a, b| a.0.cmp(&b.0));
    memo.insert(t.clone(), row);
    Ok(())
}

impl<R: DenseReal> PurificationOperator<R> {
    pub fn build(family: &BasisFamily<R>, targets: &IndexSet) -> Result<Self, PurifyError> {
        Self::build_with(family, targets, &PurifyOptions::default())
    }

    pub fn build_with(
        family: &BasisFamily<R>,
        targets: &IndexSet,
        options: &PurifyOptions<R>,
    ) -> Result<Self, PurifyError> {
        let cap = options
            .degree_cap
            .unwrap_or_else(|| default_degree_cap(family, targets));
        let mut table = RuleTable::new(family.clone());
        let mut memo: HashMap<IndexTuple, TupleRow<R>> = HashMap::new();
        for t in targets.tuples() {
            build_row(t, &mut table, &mut memo, options.prune_tol, cap)?;
        }

        let mut col_tuples: Vec<IndexTuple> = Vec::new();
        for t in targets.tuples() {
            for (col, _) in &memo[t] {
                col_tuples.push(col.clone());
            }
        }
        let columns = IndexSet::from_tuples(col_tuples);
        let rows = targets
            .tuples()
            .iter()
            .map(|t| {
                let mut row: Vec<(usize, R)> = memo[t]
                    .iter()
                    .map(|(col, w)| (columns.position(col).expect("column indexed"), *w))
                    .collect();
                row.sort_by_key(|e| e.0);
                row
            })
            .collect();
        Ok(Self {
            family: family.kind(),
            caps: DegreeCaps::Total(targets.max_degree()),
            targets: targets.clone(),
            columns,
            rows,
            rule_term_bound: Some(table.term_bound()),
        })
    }

    pub fn family(&self) -> FamilyKind {
        self.family
    }

    /// The row label set `K`.
    pub fn targets(&self) -> &IndexSet {
        &self.targets
    }

    /// The column label set `K'`.
    pub fn columns(&self) -> &IndexSet {
        &self.columns
    }

    pub fn is_square(&self) -> bool {
        self.targets == self.columns
    }

    pub fn nonzeros(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Sparse rows as `(column position, coefficient)` lists, one per target.
    pub fn rows(&self) -> &[Vec<(usize, R)>] {
        &self.rows
    }

    /// The entries of one row, labelled by column tuple.
    pub fn row_support(&self, t: &IndexTuple) -> Option<Vec<(&IndexTuple, R)>> {
        let i = self.targets.position(t)?;
        Some(
            self.rows[i]
                .iter()
                .map(|&(j, w)| (&self.columns.tuples()[j], w))
                .collect(),
        )
    }

    pub fn coefficient(&self, row: &IndexTuple, col: &IndexTuple) -> Option<R> {
        let i = self.targets.position(row)?;
        let j = self.columns.position(col)?;
        self.rows[i]
            .iter()
            .find(|e| e.0 == j)
            .map(|e| e.1)
    }

    /// Canonical features from self-interacting products over [`columns`].
    ///
    /// [`columns`]: Self::columns
    pub fn apply<T>(&self, products: &[T]) -> Result<Vec<T>, PurifyError>
    where
        T: Copy + std::ops::Mul<R, Output = T> + std::ops::AddAssign + num_traits::Zero,
    {
        if products.len() != self.columns.len() {
            return Err(PurifyError::LengthMismatch {
                want: self.columns.len(),
                got: products.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|row| {
                let mut acc = T::zero();
                for &(j, w) in row {
                    acc += products[j] * w;
                }
                acc
            })
            .collect())
    }

    /// Dense copy, rows in target order and columns in closed-set order.
    pub fn dense(&self) -> DMatrix<R> {
        let mut m = DMatrix::zeros(self.targets.len(), self.columns.len());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }

    /// Occupancy statistics and the per-order sparsity bounds.
    pub fn sparsity_report(&self) -> SparsityReport {
        let rows = self.targets.len();
        let cols = self.columns.len();
        let nonzeros = self.nonzeros();
        let mut triangular = true;
        for (i, row) in self.rows.iter().enumerate() {
            let rt = &self.targets.tuples()[i];
            for &(j, _) in row {
                if &self.columns.tuples()[j] > rt {
                    triangular = false;
                }
            }
        }

        let max_order = self.targets.max_order();
        let mut per_order = Vec::new();
        for order in 0..=max_order {
            let mut count = 0usize;
            let mut max_nonzeros = 0usize;
            for (i, row) in self.rows.iter().enumerate() {
                if self.targets.tuples()[i].ord() == order {
                    count += 1;
                    max_nonzeros = max_nonzeros.max(row.len());
                }
            }
            if count == 0 {
                continue;
            }
            let bound = self.rule_term_bound.map(|k| {
                (1..order).fold(1usize, |acc, t| acc.saturating_mul(k * t + 1))
            });
            per_order.push(OrderSparsity {
                order,
                rows: count,
                max_nonzeros,
                bound,
            });
        }

        SparsityReport {
            rows,
            cols,
            nonzeros,
            density: nonzeros as f64 / (rows as f64 * cols as f64),
            triangular,
            per_order,
            rule_term_bound: self.rule_term_bound,
        }
    }

    /// Writes the operator as a text triplet file: one metadata record
    /// `|K|, |K'|, nnz, family, degree caps`, then one `row, col, value`
    /// record per entry, rows in target order and entries by column.
    pub fn write_triplets<W: Write>(&self, out: W) -> Result<(), PurifyError> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
        w.write_record([
            self.targets.len().to_string(),
            self.columns.len().to_string(),
            self.nonzeros().to_string(),
            self.family.to_string(),
            self.caps.to_string(),
        ])
        .map_err(|e| PurifyError::Format(e.to_string()))?;
        for (i, row) in self.rows.iter().enumerate() {
            let row_label = self.targets.tuples()[i].to_string();
            for &(j, v) in row {
                w.write_record([
                    row_label.clone(),
                    self.columns.tuples()[j].to_string(),
                    v.to_string(),
                ])
                .map_err(|e| PurifyError::Format(e.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an operator written by [`write_triplets`].
    ///
    /// The linearization rules are not stored, so for least-squares families
    /// the reloaded operator reports no per-order sparsity bounds.
    ///
    /// [`write_triplets`]: Self::write_triplets
    pub fn read_triplets<Rd: Read>(input: Rd) -> Result<Self, PurifyError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input);
        let mut records = reader.records();
        let header = records
            .next()
            .ok_or_else(|| PurifyError::Format("empty file".into()))?
            .map_err(|e| PurifyError::Format(e.to_string()))?;
        if header.len() != 5 {
            return Err(PurifyError::Format(format!(
                "metadata record has {} fields, expected 5",
                header.len()
            )));
        }
        let parse_count = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|e| PurifyError::Format(format!("bad {what} {s:?}: {e}")))
        };
        let n_rows = parse_count(&header[0], "row count")?;
        let n_cols = parse_count(&header[1], "column count")?;
        let nnz = parse_count(&header[2], "entry count")?;
        let family = FamilyKind::from_str(&header[3]).map_err(PurifyError::Format)?;
        let caps = DegreeCaps::from_str(&header[4]).map_err(PurifyError::Format)?;

        let mut triplets: Vec<(IndexTuple, IndexTuple, R)> = Vec::with_capacity(nnz);
        for record in records {
            let record = record.map_err(|e| PurifyError::Format(e.to_string()))?;
            if record.len() != 3 {
                return Err(PurifyError::Format(format!(
                    "triplet record has {} fields, expected 3",
                    record.len()
                )));
            }
            let row = IndexTuple::parse(family, &record[0]).map_err(PurifyError::Format)?;
            let col = IndexTuple::parse(family, &record[1]).map_err(PurifyError::Format)?;
            let value = record[2]
                .parse::<f64>()
                .map_err(|e| PurifyError::Format(format!("bad value {:?}: {e}", &record[2])))?;
            triplets.push((row, col, R::of(value)));
        }
        if triplets.len() != nnz {
            return Err(PurifyError::Format(format!(
                "{} triplets but header declares {nnz}",
                triplets.len()
            )));
        }

        let targets = IndexSet::from_tuples(triplets.iter().map(|t| t.0.clone()).collect());
        let columns = IndexSet::from_tuples(triplets.iter().map(|t| t.1.clone()).collect());
        if targets.len() != n_rows || columns.len() != n_cols {
            return Err(PurifyError::Format(format!(
                "label sets are {}x{} but header declares {n_rows}x{n_cols}",
                targets.len(),
                columns.len()
            )));
        }
        let mut rows: Vec<Vec<(usize, R)>> = vec![Vec::new(); targets.len()];
        for (row, col, value) in triplets {
            let i = targets.position(&row).expect("row indexed");
            let j = columns.position(&col).expect("column indexed");
            rows[i].push((j, value));
        }
        for row in &mut rows {
            row.sort_by_key(|e| e.0);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(PurifyError::Format("duplicate triplet".into()));
            }
        }
        let rule_term_bound = match family {
            FamilyKind::Monomial | FamilyKind::Trigonometric => Some(1),
            FamilyKind::Chebyshev => Some(2),
            _ => None,
        };
        Ok(Self {
            family,
            caps,
            targets,
            columns,
            rows,
            rule_term_bound,
        })
    }
}

/// What [`close_index_set`] did.
#[derive(Debug, Clone, Serialize)]
pub struct ClosureReport {
    pub original_len: usize,
    pub closed_len: usize,
    /// Tuples the closure added, sorted; empty iff the input was closed.
    pub extra: Vec<IndexTuple>,
    /// Enlargement passes until the set stopped growing; zero iff the input
    /// was closed.
    pub iterations: usize,
}

/// Least fixed point of the set under the recursion's column labels: builds
/// rows for every tuple, adds the labels they touch, and repeats until
/// stable.
pub fn close_index_set<R: DenseReal>(
    family: &BasisFamily<R>,
    set: &IndexSet,
) -> Result<(IndexSet, ClosureReport), PurifyError> {
    close_index_set_with(family, set, &PurifyOptions::default())
}

pub fn close_index_set_with<R: DenseReal>(
    family: &BasisFamily<R>,
    set: &IndexSet,
    options: &PurifyOptions<R>,
) -> Result<(IndexSet, ClosureReport), PurifyError> {
    let cap = options
        .degree_cap
        .unwrap_or_else(|| default_degree_cap(family, set));
    let mut table = RuleTable::new(family.clone());
    let mut memo: HashMap<IndexTuple, TupleRow<R>> = HashMap::new();
    let mut current = set.clone();
    let mut iterations = 0usize;
    loop {
        let mut next: Vec<IndexTuple> = current.tuples().to_vec();
        for t in current.tuples() {
            build_row(t, &mut table, &mut memo, options.prune_tol, cap)?;
            for (col, _) in &memo[t] {
                if !current.contains(col) {
                    next.push(col.clone());
                }
            }
        }
        let next = IndexSet::from_tuples(next);
        if next.len() == current.len() {
            break;
        }
        current = next;
        iterations += 1;
    }
    let extra: Vec<IndexTuple> = current
        .tuples()
        .iter()
        .filter(|t| !set.contains(t))
        .cloned()
        .collect();
    let report = ClosureReport {
        original_len: set.len(),
        closed_len: current.len(),
        extra,
        iterations,
    };
    Ok((current, report))
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderSparsity {
    pub order: usize,
    pub rows: usize,
    pub max_nonzeros: usize,
    /// `prod_{t=1}^{order-1} (K t + 1)` with `K` the rule term bound, when
    /// the rules are known.
    pub bound: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SparsityReport {
    pub rows: usize,
    pub cols: usize,
    pub nonzeros: usize,
    pub density: f64,
    /// No entry lies above its row's tuple in the (degree, order, lex)
    /// column ordering.
    pub triangular: bool,
    pub per_order: Vec<OrderSparsity>,
    pub rule_term_bound: Option<usize>,
}

/// Outcome of the sampled span-equality test between the canonical and
/// self-interacting features over one tuple set.
#[derive(Debug, Clone, Serialize)]
pub struct SpanCheck {
    pub equivalent: bool,
    pub canonical_in_self: bool,
    pub self_in_canonical: bool,
    /// `|K' \ K|`; a nonzero count is what breaks equivalence in practice.
    pub extra_columns: usize,
    pub max_residual_canonical_in_self: f64,
    pub max_residual_self_in_canonical: f64,
    pub threshold: f64,
    pub samples: usize,
}

const SPAN_RESIDUAL_THRESHOLD: f64 = 1e-8;

/// Decides mutual containment of the sampled column spans of the canonical
/// and self-interacting features over `set`.
///
/// Configurations are drawn from the family's natural measure with particle
/// counts cycling through `sizes`; varying the count is what separates the
/// spans when they differ only through pooled constants. Requires
/// `sample_count >= 3 * |set|`.
pub fn check_span_equivalence<R: DenseReal>(
    family: &BasisFamily<R>,
    set: &IndexSet,
    sample_count: usize,
    sizes: &JSpec,
    seed: u64,
) -> Result<SpanCheck, PurifyError> {
    let need = 3 * set.len();
    if sample_count < need {
        return Err(PurifyError::TooFewSamples {
            need,
            got: sample_count,
            columns: set.len(),
        });
    }
    let op = PurificationOperator::build(family, set)?;
    let evaluator = FeatureEvaluator::new(family, op.columns());
    let configs = Distribution::for_family(family).sample_many::<R>(sample_count, sizes, seed);

    // Real-embedded designs: two rows per sample (real and imaginary part).
    let n = set.len();
    let mut self_design = DMatrix::<R>::zeros(2 * sample_count, n);
    let mut canonical_design = DMatrix::<R>::zeros(2 * sample_count, n);
    for (i, x) in configs.iter().enumerate() {
        let products = evaluator.self_interacting(x)?;
        let canonical = op.apply(&products)?;
        for (c, t) in set.tuples().iter().enumerate() {
            let p = products[op.columns().position(t).expect("target is a column")];
            self_design[(2 * i, c)] = p.re;
            self_design[(2 * i + 1, c)] = p.im;
            canonical_design[(2 * i, c)] = canonical[c].re;
            canonical_design[(2 * i + 1, c)] = canonical[c].im;
        }
    }

    let residual_onto = |basis: &DMatrix<R>, targets: &DMatrix<R>| -> f64 {
        let factor = LsFactor::new(basis.clone());
        let mut worst = 0.0f64;
        for c in 0..targets.ncols() {
            let v = targets.column(c).into_owned();
            let norm = v.norm();
            if norm <= R::of(1e-300) {
                continue;
            }
            let x = factor.solve(&v);
            let r = (basis * &x - &v).norm() / norm;
            worst = worst.max(r.to_f64_lossy());
        }
        worst
    };

    let r_canon = residual_onto(&self_design, &canonical_design);
    let r_self = residual_onto(&canonical_design, &self_design);
    let canonical_in_self = r_canon < SPAN_RESIDUAL_THRESHOLD;
    let self_in_canonical = r_self < SPAN_RESIDUAL_THRESHOLD;
    Ok(SpanCheck {
        equivalent: canonical_in_self && self_in_canonical,
        canonical_in_self,
        self_in_canonical,
        extra_columns: op.columns().len() - set.len(),
        max_residual_canonical_in_self: r_canon,
        max_residual_self_in_canonical: r_self,
        threshold: SPAN_RESIDUAL_THRESHOLD,
        samples: sample_count,
    })
}
