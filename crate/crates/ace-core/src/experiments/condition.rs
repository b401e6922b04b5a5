//! Sample-Gram conditioning of the two rotation-invariant bases.
//!
//! Each table row fixes one correlation order `N`, draws `J = N`-particle
//! configurations from the orthogonality measure of the plain spherical
//! family (uniform radius times uniform direction — exactly the weight for
//! which the radial polynomials and harmonics are orthogonal), assembles the
//! canonical and self-interacting designs of the order-`N` feature block,
//! and reports the condition number of the diagonally scaled sample Gram
//! `D^{-1/2} (Psi^T Psi / m) D^{-1/2}`. All rows share the sample budget of
//! `samples_per_feature` times the full basis size.
//!
//! The canonical features of distinct tuples are orthogonal under that
//! measure, so their scaled Gram approaches the identity as the sample count
//! grows; the self-interacting products are not orthogonal and their
//! conditioning deteriorates quickly with the degree budget. An optional
//! sweep varies the particle count `J` at fixed order for the same
//! comparison.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::basis::BasisFamily;
use crate::expansion::{generate_index_set, DegreeCaps};
use crate::purification::PurificationOperator;
use crate::sampling::{Distribution, JSpec};
use crate::symmetry::{
    fuse_symmetrization, symmetrize, FusedOperator, InvariantLabel, SymmetrizationOperator,
    SymmetryGroup,
};

use super::{
    derive_seed, fmt_f64, paired_invariant_designs, ExperimentError, ExperimentReport,
    RestrictedPair, Table,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionConfig {
    /// Largest correlation order; the main table reports rows for
    /// `N = 2..=max_order` at `J = N`.
    pub max_order: usize,
    /// Total-degree budget of the index set.
    pub degree: u32,
    pub r_cut: f64,
    /// Design rows per invariant feature; at least 5, the reference studies
    /// use 70.
    pub samples_per_feature: usize,
    pub seed: u64,
    /// Optional `J`-sweep at fixed order (separate, usually higher, degree).
    pub sweep: Option<SweepConfig>,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        ConditionConfig {
            max_order: 6,
            degree: 10,
            r_cut: 1.0,
            samples_per_feature: 70,
            seed: 0,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Correlation orders swept; each gets its own basis.
    pub orders: Vec<usize>,
    pub degree: u32,
    /// `J` runs over `order..=max_j_multiple * order`.
    pub max_j_multiple: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            orders: vec![2, 3, 4],
            degree: 14,
            max_j_multiple: 4,
        }
    }
}

pub const CANONICAL: &str = "canonical";
pub const SELF_INTERACTING: &str = "self_interacting";

#[derive(Debug, Clone, Serialize)]
pub struct ConditionRow {
    pub j: usize,
    pub order: usize,
    pub basis: &'static str,
    pub features: usize,
    pub samples: usize,
    pub cond: f64,
}

#[derive(Debug)]
pub struct ConditionOutcome {
    pub report: ExperimentReport,
    /// Main table, `J = N` per row.
    pub rows: Vec<ConditionRow>,
    /// `J`-sweep rows, empty unless a sweep was configured.
    pub sweep_rows: Vec<ConditionRow>,
}

impl ConditionOutcome {
    /// The main-table condition number for one `(J, order, basis)` cell.
    pub fn lookup(&self, j: usize, order: usize, basis: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.j == j && r.order == order && r.basis == basis)
            .map(|r| r.cond)
    }
}

/// Condition number of the diagonally scaled sample Gram of `block`:
/// eigenvalue ratio of `D^{-1/2} (B^T B / m) D^{-1/2}`. Degenerate blocks
/// (non-positive diagonal or spectrum) report infinity. A single column is
/// exactly 1 — the scaled Gram is then the 1x1 identity up to the rounding
/// of `d / sqrt(d)^2`, whose eigenvalue cancels in the ratio.
pub fn scaled_gram_condition(block: &DMatrix<f64>) -> f64 {
    let m = block.nrows();
    if m == 0 || block.ncols() == 0 {
        return f64::INFINITY;
    }
    let mut gram = block.tr_mul(block);
    gram /= m as f64;
    let n = gram.nrows();
    let mut scale = vec![0.0f64; n];
    for (i, s) in scale.iter_mut().enumerate() {
        let d = gram[(i, i)];
        if !d.is_finite() || d <= 0.0 {
            return f64::INFINITY;
        }
        *s = d.sqrt();
    }
    for i in 0..n {
        for j in 0..n {
            gram[(i, j)] /= scale[i] * scale[j];
        }
    }
    let eig = SymmetricEigen::new(gram).eigenvalues;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

struct BasisBundle {
    family: BasisFamily<f64>,
    coupling: SymmetrizationOperator<f64>,
    fused: FusedOperator<f64>,
    /// Correlation order of each invariant label.
    label_orders: Vec<usize>,
}

fn label_order(label: &InvariantLabel) -> usize {
    match label {
        InvariantLabel::Tuple(t) => t.ord(),
        InvariantLabel::Coupled { n, .. } => n.len(),
    }
}

fn build_bundle(
    family: &BasisFamily<f64>,
    max_order: usize,
    degree: u32,
    seed: u64,
) -> Result<BasisBundle, ExperimentError> {
    let set = generate_index_set(family, max_order, &DegreeCaps::Total(degree), false);
    let coupling = symmetrize(SymmetryGroup::O3, &set, seed)?;
    let operator = PurificationOperator::build(family, coupling.columns())?;
    let fused = fuse_symmetrization(&coupling, &operator)?;
    let label_orders = coupling.labels().iter().map(label_order).collect();
    Ok(BasisBundle {
        family: family.clone(),
        coupling,
        fused,
        label_orders,
    })
}

impl BasisBundle {
    /// Condition numbers of the order-`order` feature block at particle
    /// count `j`, for both bases, plus the worst imaginary residue seen
    /// while realizing the designs. Every row of a table shares one sample
    /// budget sized by the whole basis of the bundle — the convention of the
    /// reference tables, and what keeps the small-block rows from being
    /// noise-dominated — while only the block's features are evaluated,
    /// which is what keeps the large-basis rows affordable. Labels of order
    /// above `j` would vanish identically on `j` particles; callers keep
    /// `order <= j`.
    fn block_rows(
        &self,
        j: usize,
        order: usize,
        samples_per_feature: usize,
        seed: u64,
    ) -> Result<(Vec<ConditionRow>, f64), ExperimentError> {
        let keep: Vec<usize> = (0..self.label_orders.len())
            .filter(|&i| self.label_orders[i] == order)
            .collect();
        if keep.is_empty() {
            return Ok((Vec::new(), 0.0));
        }
        let samples = samples_per_feature * self.label_orders.len();
        let configs = Distribution::for_family(&self.family).sample_many::<f64>(
            samples,
            &JSpec::Fixed(j),
            seed,
        );
        let pair = RestrictedPair::new(&self.fused, &self.coupling, &keep);
        let (canonical, plain, residue) =
            paired_invariant_designs(&self.family, &pair, &configs)?;

        let mut rows = Vec::new();
        for (basis, design) in [(CANONICAL, &canonical), (SELF_INTERACTING, &plain)] {
            rows.push(ConditionRow {
                j,
                order,
                basis,
                features: keep.len(),
                samples,
                cond: scaled_gram_condition(design),
            });
        }
        Ok((rows, residue))
    }
}

fn push_rows(table: &mut Table, rows: &[ConditionRow]) {
    for r in rows {
        table.push(vec![
            r.j.to_string(),
            r.order.to_string(),
            r.basis.to_string(),
            r.features.to_string(),
            r.samples.to_string(),
            fmt_f64(r.cond),
        ]);
    }
}

pub fn run_condition_experiment(
    cfg: &ConditionConfig,
) -> Result<ConditionOutcome, ExperimentError> {
    let started = Instant::now();
    if cfg.max_order < 2 {
        return Err(ExperimentError::InvalidConfig {
            reason: "conditioning needs max_order >= 2".into(),
        });
    }
    if cfg.degree == 0 {
        return Err(ExperimentError::InvalidConfig {
            reason: "degree budget must be positive".into(),
        });
    }
    if cfg.samples_per_feature < 5 {
        return Err(ExperimentError::SampleBudget {
            need: 5,
            got: cfg.samples_per_feature,
        });
    }
    if let Some(sweep) = &cfg.sweep {
        if sweep.orders.iter().any(|&n| n < 1) || sweep.max_j_multiple < 1 || sweep.degree == 0 {
            return Err(ExperimentError::InvalidConfig {
                reason: "sweep orders, degree and J multiple must be positive".into(),
            });
        }
    }

    let family = BasisFamily::spherical(cfg.r_cut);
    let bundle = build_bundle(&family, cfg.max_order, cfg.degree, cfg.seed)?;

    let mut rows = Vec::new();
    let mut residue = 0.0f64;
    for n in 2..=cfg.max_order {
        let (mut batch, r) =
            bundle.block_rows(n, n, cfg.samples_per_feature, derive_seed(cfg.seed, n as u64))?;
        rows.append(&mut batch);
        residue = residue.max(r);
    }

    let mut sweep_rows = Vec::new();
    if let Some(sweep) = &cfg.sweep {
        for &n in &sweep.orders {
            let sweep_bundle = build_bundle(
                &family,
                n,
                sweep.degree,
                derive_seed(cfg.seed, 1000 + n as u64),
            )?;
            for j in n..=sweep.max_j_multiple * n {
                let (mut batch, r) = sweep_bundle.block_rows(
                    j,
                    n,
                    cfg.samples_per_feature,
                    derive_seed(cfg.seed, (2000 + n * 100 + j) as u64),
                )?;
                sweep_rows.append(&mut batch);
                residue = residue.max(r);
            }
        }
    }

    let mut report = ExperimentReport::new("cond", cfg, cfg.seed);
    let header = ["j", "order", "basis", "features", "samples", "cond"];
    let mut main = Table::new("condition", &header);
    push_rows(&mut main, &rows);
    report.push_table(main);
    if !sweep_rows.is_empty() {
        let mut sweep_table = Table::new("condition_sweep", &header);
        push_rows(&mut sweep_table, &sweep_rows);
        report.push_table(sweep_table);
    }
    report.insert_metric("invariant_features", json!(bundle.coupling.len()));
    report.insert_metric("closure_columns", json!(bundle.fused.columns().len()));
    report.insert_metric("max_imaginary_residue", json!(residue));
    report.set_runtime(started.elapsed());

    Ok(ConditionOutcome {
        report,
        rows,
        sweep_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_column_condition_is_exactly_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = DMatrix::from_fn(40, 1, |_, _| rng.gen_range(-2.0..2.0));
        assert_eq!(scaled_gram_condition(&block), 1.0);
    }

    #[test]
    fn scaling_removes_column_weights() {
        // diagonal rescaling of orthogonal columns must not hurt conditioning
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = DMatrix::from_fn(200, 3, |_, _| rng.gen_range(-1.0..1.0));
        let scales = [1.0, 1e-3, 1e4];
        let scaled = DMatrix::from_fn(200, 3, |i, j| q[(i, j)] * scales[j]);
        let plain = scaled_gram_condition(&q);
        let rescaled = scaled_gram_condition(&scaled);
        assert!((plain - rescaled).abs() <= 1e-6 * plain);
    }

    #[test]
    fn degenerate_blocks_report_infinity() {
        let block = DMatrix::from_fn(10, 2, |i, j| if j == 0 { i as f64 } else { 2.0 * i as f64 });
        assert_eq!(scaled_gram_condition(&block), f64::INFINITY);
        let zero = DMatrix::from_element(10, 1, 0.0);
        assert_eq!(scaled_gram_condition(&zero), f64::INFINITY);
    }

    #[test]
    fn undersized_sample_budget_is_rejected() {
        let cfg = ConditionConfig {
            samples_per_feature: 4,
            ..ConditionConfig::default()
        };
        match run_condition_experiment(&cfg) {
            Err(ExperimentError::SampleBudget { need: 5, got: 4 }) => {}
            other => panic!("expected sample budget rejection, got {other:?}"),
        }
    }

    /// Degree-10 magnitudes: near-1 canonical conditioning against
    /// 10^2-and-up self-interacting conditioning, reference values 1.3 and
    /// 1.8e2 at order 2 (order-of-magnitude comparison — the estimator is
    /// stochastic).
    #[test]
    fn degree_ten_blocks_split_the_two_bases() {
        let cfg = ConditionConfig {
            max_order: 3,
            degree: 10,
            samples_per_feature: 70,
            seed: 1,
            ..ConditionConfig::default()
        };
        let outcome = run_condition_experiment(&cfg).unwrap();

        let canonical2 = outcome.lookup(2, 2, CANONICAL).unwrap();
        let plain2 = outcome.lookup(2, 2, SELF_INTERACTING).unwrap();
        assert!(
            (1.0..=5.0).contains(&canonical2),
            "canonical order-2 condition {canonical2}"
        );
        assert!(
            (18.0..=1800.0).contains(&plain2),
            "self-interacting order-2 condition {plain2} vs reference 1.8e2"
        );

        // Gram sanity at both J = N rows of the run
        for n in [2usize, 3] {
            let canonical = outcome.lookup(n, n, CANONICAL).unwrap();
            let plain = outcome.lookup(n, n, SELF_INTERACTING).unwrap();
            assert!(canonical <= 5.0, "canonical order-{n}: {canonical}");
            assert!(plain >= 50.0, "self-interacting order-{n}: {plain}");
        }
    }

    #[test]
    fn condition_reports_are_byte_deterministic() {
        let cfg = ConditionConfig {
            max_order: 2,
            degree: 6,
            samples_per_feature: 5,
            seed: 12,
            ..ConditionConfig::default()
        };
        let a = run_condition_experiment(&cfg).unwrap();
        let b = run_condition_experiment(&cfg).unwrap();
        let ta = a.report.table("condition").unwrap().to_csv_bytes();
        let tb = b.report.table("condition").unwrap().to_csv_bytes();
        assert_eq!(ta, tb);
    }

    /// Reference comparison at total degree 14, correlation order 4: 2.1
    /// canonical vs 7.1e4 self-interacting. The sample budget is trimmed to
    /// keep the design blocks inside a few GB; the bands here are
    /// order-of-magnitude anyway.
    #[test]
    #[ignore = "takes minutes; the acceptance suite exercises the reduced-scale variant"]
    fn degree_fourteen_order_four_reference_point() {
        let cfg = ConditionConfig {
            max_order: 4,
            degree: 14,
            samples_per_feature: 20,
            seed: 2,
            ..ConditionConfig::default()
        };
        let outcome = run_condition_experiment(&cfg).unwrap();
        let canonical = outcome.lookup(4, 4, CANONICAL).unwrap();
        let plain = outcome.lookup(4, 4, SELF_INTERACTING).unwrap();
        assert!((1.0..=21.0).contains(&canonical), "canonical {canonical} vs 2.1");
        assert!(
            (7.1e3..=7.1e5).contains(&plain),
            "self-interacting {plain} vs 7.1e4"
        );
    }
}
