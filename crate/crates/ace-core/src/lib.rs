//! Canonical (self-interaction-free) cluster expansions for multiset
//! functions: one-particle bases and their product linearization, pooled and
//! canonical many-body features, the sparse purification operator mapping one
//! to the other, group symmetrization, and regularized regression on top.

pub mod basis;
pub mod expansion;
pub mod experiments;
pub mod linalg;
pub mod purification;
pub mod regression;
pub mod sampling;
pub mod scalar;
pub mod symmetry;

pub use basis::{BasisError, BasisFamily, Configuration, FamilyKind, OneParticleIndex, Particle};
pub use expansion::{DegreeCaps, IndexSet, IndexTuple};
pub use purification::{close_index_set, check_span_equivalence, PurificationOperator};
pub use regression::{
    assemble_design, assemble_system, grid_search_lambda, scaled_tsvd_solve, smoothness_prior,
    tikhonov_solve, DesignPipeline, FitResult, RegressionProblem, Regularizer,
};
pub use sampling::{Distribution, JSpec};
pub use symmetry::{
    evaluate_invariants, fuse_symmetrization, symmetrize, FusedOperator, InvariantLabel,
    SymmetrizationOperator, SymmetryGroup,
};
pub use scalar::{Real, C};
pub use experiments::{
    run_condition_experiment, run_decay_experiment, run_invariance_check, run_purify_info,
    run_regression_experiment, run_span_check, ConditionConfig, DecayConfig, ExperimentError,
    ExperimentReport, FitConfig, InvarianceConfig, PurifyInfoConfig, SamplerSpec, SpanConfig,
    TargetFunction,
};

/// The concrete scalar used by the experiment runners and the CLI.
pub type Basis64 = basis::BasisFamily<f64>;
/// Purification operator over `f64` coefficients.
pub type Purifier64 = purification::PurificationOperator<f64>;
/// Symmetrization (coupling) operator over `f64` coefficients.
pub type Coupling64 = symmetry::SymmetrizationOperator<f64>;
