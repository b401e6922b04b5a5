//! Operational health checks behind the CLI: invariance of symmetrized
//! features under random group actions, sampled span equality of the
//! canonical and self-interacting features, and closure/sparsity summaries
//! of the purification operator.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::basis::{BasisFamily, FamilyKind};
use crate::expansion::{generate_index_set, DegreeCaps};
use crate::purification::{
    check_span_equivalence, close_index_set, ClosureReport, PurificationOperator, SparsityReport,
    SpanCheck,
};
use crate::sampling::{Distribution, JSpec};
use crate::scalar::C;
use crate::symmetry::{fuse_symmetrization, random_group_action, symmetrize, SymmetryGroup};

use super::{
    derive_seed, family_of, fmt_f64, ExperimentError, ExperimentReport, InvariantEvaluator, Table,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct InvarianceConfig {
    /// Random `(configuration, group element)` pairs per group.
    pub trials: usize,
    /// Relative residual bound.
    pub tolerance: f64,
    /// Particles per sampled configuration.
    pub j: usize,
    /// Correlation order of every test basis.
    pub order: usize,
    /// Degree budget of the sign-flip (interval) basis.
    pub interval_degree: u32,
    /// Degree budget of the planar-rotation (torus) basis.
    pub torus_degree: u32,
    /// Degree budget of the full-rotation (spherical) basis.
    pub spherical_degree: u32,
    pub r_cut: f64,
    pub seed: u64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        InvarianceConfig {
            trials: 200,
            tolerance: 1e-10,
            j: 5,
            order: 3,
            interval_degree: 6,
            torus_degree: 4,
            spherical_degree: 4,
            r_cut: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InvarianceRow {
    pub group: SymmetryGroup,
    pub basis: &'static str,
    pub trials: usize,
    pub max_residual: f64,
    pub pass: bool,
}

#[derive(Debug)]
pub struct InvarianceOutcome {
    pub report: ExperimentReport,
    pub rows: Vec<InvarianceRow>,
    /// Every `(group, basis)` stayed below the tolerance.
    pub pass: bool,
}

fn relative_residual(reference: &[C<f64>], moved: &[C<f64>]) -> f64 {
    let scale = reference
        .iter()
        .fold(0.0f64, |m, v| m.max(v.norm()))
        .max(1e-30);
    reference
        .iter()
        .zip(moved)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()))
        / scale
}

pub fn run_invariance_check(
    cfg: &InvarianceConfig,
) -> Result<InvarianceOutcome, ExperimentError> {
    let started = Instant::now();
    if cfg.trials == 0 {
        return Err(ExperimentError::InvalidConfig {
            reason: "at least one trial is needed".into(),
        });
    }
    if cfg.j == 0 || cfg.order == 0 {
        return Err(ExperimentError::InvalidConfig {
            reason: "particle count and order must be positive".into(),
        });
    }
    if !(cfg.tolerance.is_finite() && cfg.tolerance >= 0.0) {
        return Err(ExperimentError::InvalidConfig {
            reason: "tolerance must be finite and nonnegative".into(),
        });
    }

    let cases: [(SymmetryGroup, BasisFamily<f64>, u32); 3] = [
        (
            SymmetryGroup::O1,
            BasisFamily::chebyshev(),
            cfg.interval_degree,
        ),
        (
            SymmetryGroup::SO2,
            BasisFamily::trigonometric(),
            cfg.torus_degree,
        ),
        (
            SymmetryGroup::O3,
            BasisFamily::spherical(cfg.r_cut),
            cfg.spherical_degree,
        ),
    ];

    let mut rows = Vec::new();
    for (case, (group, family, degree)) in cases.iter().enumerate() {
        let set = generate_index_set(family, cfg.order, &DegreeCaps::Total(*degree), false);
        let coupling = symmetrize(*group, &set, derive_seed(cfg.seed, case as u64))?;
        let operator = PurificationOperator::build(family, coupling.columns())?;
        let fused = fuse_symmetrization(&coupling, &operator)?;
        let evaluator = InvariantEvaluator::new(family, &fused, &coupling);

        let dist = Distribution::for_family(family);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 100 + case as u64));
        let mut worst_canonical = 0.0f64;
        let mut worst_plain = 0.0f64;
        for _ in 0..cfg.trials {
            let x = dist.sample_configuration::<f64>(cfg.j, &mut rng);
            let moved = random_group_action(*group, &x, &mut rng);
            let (c_ref, p_ref) = evaluator.evaluate(&x)?;
            let (c_mov, p_mov) = evaluator.evaluate(&moved)?;
            worst_canonical = worst_canonical.max(relative_residual(&c_ref, &c_mov));
            worst_plain = worst_plain.max(relative_residual(&p_ref, &p_mov));
        }
        for (basis, worst) in [("canonical", worst_canonical), ("self_interacting", worst_plain)]
        {
            rows.push(InvarianceRow {
                group: *group,
                basis,
                trials: cfg.trials,
                max_residual: worst,
                pass: worst < cfg.tolerance,
            });
        }
    }

    let pass = rows.iter().all(|r| r.pass);
    let mut report = ExperimentReport::new("invariance", cfg, cfg.seed);
    let mut table = Table::new(
        "invariance",
        &["group", "basis", "trials", "max_residual", "tolerance", "pass"],
    );
    for r in &rows {
        table.push(vec![
            r.group.to_string(),
            r.basis.to_string(),
            r.trials.to_string(),
            fmt_f64(r.max_residual),
            fmt_f64(cfg.tolerance),
            r.pass.to_string(),
        ]);
    }
    report.push_table(table);
    report.insert_metric("pass", json!(pass));
    report.set_runtime(started.elapsed());

    Ok(InvarianceOutcome { report, rows, pass })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SpanConfig {
    pub family: FamilyKind,
    pub order: usize,
    pub degree: u32,
    pub r_cut: f64,
    /// Close the generated set before checking; a closed set is the
    /// equivalent case for degree-preserving families.
    pub close_first: bool,
    /// Sampled rows per tuple; the residual test needs at least 3.
    pub samples_per_feature: usize,
    /// Particle counts cycle over this inclusive range — varying the count
    /// is what distinguishes the spans.
    pub min_particles: usize,
    pub max_particles: usize,
    pub seed: u64,
}

impl Default for SpanConfig {
    fn default() -> Self {
        SpanConfig {
            family: FamilyKind::Chebyshev,
            order: 3,
            degree: 8,
            r_cut: 1.0,
            close_first: true,
            samples_per_feature: 4,
            min_particles: 2,
            max_particles: 5,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct SpanOutcome {
    pub report: ExperimentReport,
    pub check: SpanCheck,
    /// Closure of the checked set; `extra` is empty exactly when the set was
    /// already closed.
    pub closure: ClosureReport,
}

pub fn run_span_check(cfg: &SpanConfig) -> Result<SpanOutcome, ExperimentError> {
    let started = Instant::now();
    if cfg.order == 0 || cfg.degree == 0 {
        return Err(ExperimentError::InvalidConfig {
            reason: "order and degree must be positive".into(),
        });
    }
    if cfg.samples_per_feature < 3 {
        return Err(ExperimentError::SampleBudget {
            need: 3,
            got: cfg.samples_per_feature,
        });
    }
    if cfg.min_particles == 0 || cfg.max_particles < cfg.min_particles {
        return Err(ExperimentError::InvalidConfig {
            reason: "particle range must be nonempty".into(),
        });
    }

    let family = family_of(cfg.family, cfg.r_cut);
    let generated = generate_index_set(&family, cfg.order, &DegreeCaps::Total(cfg.degree), false);
    let set = if cfg.close_first {
        close_index_set(&family, &generated)?.0
    } else {
        generated
    };
    let (_, closure) = close_index_set(&family, &set)?;
    let sizes = JSpec::Range {
        min: cfg.min_particles,
        max: cfg.max_particles,
    };
    let check = check_span_equivalence(
        &family,
        &set,
        cfg.samples_per_feature * set.len(),
        &sizes,
        derive_seed(cfg.seed, 1),
    )?;

    let mut report = ExperimentReport::new("span", cfg, cfg.seed);
    let mut table = Table::new(
        "span",
        &[
            "family",
            "order",
            "degree",
            "tuples",
            "extra_tuples",
            "canonical_in_self",
            "self_in_canonical",
            "equivalent",
            "residual_canonical_in_self",
            "residual_self_in_canonical",
            "threshold",
            "samples",
        ],
    );
    table.push(vec![
        cfg.family.to_string(),
        cfg.order.to_string(),
        cfg.degree.to_string(),
        set.len().to_string(),
        closure.extra.len().to_string(),
        check.canonical_in_self.to_string(),
        check.self_in_canonical.to_string(),
        check.equivalent.to_string(),
        fmt_f64(check.max_residual_canonical_in_self),
        fmt_f64(check.max_residual_self_in_canonical),
        fmt_f64(check.threshold),
        check.samples.to_string(),
    ]);
    report.push_table(table);

    let mut extra = Table::new("closure_extra", &["tuple", "order", "degree"]);
    for t in &closure.extra {
        extra.push(vec![t.to_string(), t.ord().to_string(), t.degree().to_string()]);
    }
    report.push_table(extra);
    report.insert_metric("equivalent", json!(check.equivalent));
    report.set_runtime(started.elapsed());

    Ok(SpanOutcome {
        report,
        check,
        closure,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PurifyInfoConfig {
    pub family: FamilyKind,
    pub order: usize,
    pub degree: u32,
    pub r_cut: f64,
    /// Build over the closure (a square operator) rather than the raw set.
    pub close_targets: bool,
}

impl Default for PurifyInfoConfig {
    fn default() -> Self {
        PurifyInfoConfig {
            family: FamilyKind::Chebyshev,
            order: 3,
            degree: 20,
            r_cut: 1.0,
            close_targets: true,
        }
    }
}

#[derive(Debug)]
pub struct PurifyInfoOutcome {
    pub report: ExperimentReport,
    pub operator: PurificationOperator<f64>,
    pub sparsity: SparsityReport,
    pub closure: ClosureReport,
}

pub fn run_purify_info(cfg: &PurifyInfoConfig) -> Result<PurifyInfoOutcome, ExperimentError> {
    let started = Instant::now();
    if cfg.order == 0 || cfg.degree == 0 {
        return Err(ExperimentError::InvalidConfig {
            reason: "order and degree must be positive".into(),
        });
    }
    let family = family_of(cfg.family, cfg.r_cut);
    let generated = generate_index_set(&family, cfg.order, &DegreeCaps::Total(cfg.degree), false);
    let (closed, closure) = close_index_set(&family, &generated)?;
    let targets = if cfg.close_targets { &closed } else { &generated };
    let operator = PurificationOperator::build(&family, targets)?;
    let sparsity = operator.sparsity_report();

    let mut report = ExperimentReport::new("purify", cfg, 0);
    let mut summary = Table::new(
        "sparsity",
        &[
            "targets",
            "columns",
            "nonzeros",
            "density_percent",
            "triangular",
            "square",
            "closure_added",
            "closure_iterations",
        ],
    );
    summary.push(vec![
        sparsity.rows.to_string(),
        sparsity.cols.to_string(),
        sparsity.nonzeros.to_string(),
        fmt_f64(100.0 * sparsity.density),
        sparsity.triangular.to_string(),
        operator.is_square().to_string(),
        closure.extra.len().to_string(),
        closure.iterations.to_string(),
    ]);
    report.push_table(summary);

    let mut per_order = Table::new(
        "sparsity_per_order",
        &["order", "rows", "max_nonzeros", "bound"],
    );
    for o in &sparsity.per_order {
        per_order.push(vec![
            o.order.to_string(),
            o.rows.to_string(),
            o.max_nonzeros.to_string(),
            o.bound.map_or_else(|| "-".into(), |b| b.to_string()),
        ]);
    }
    report.push_table(per_order);
    report.insert_metric("density_percent", json!(100.0 * sparsity.density));
    report.set_runtime(started.elapsed());

    Ok(PurifyInfoOutcome {
        report,
        operator,
        sparsity,
        closure,
    })
}
