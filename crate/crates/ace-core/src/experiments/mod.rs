//! Reproducible numerical studies on top of the expansion machinery:
//! Gram-matrix conditioning of the canonical vs. self-interacting invariant
//! bases, coefficient decay against the Euclidean degree, and regularized
//! learning curves on Runge-type targets.
//!
//! Every runner takes a serde-friendly config struct, draws all randomness
//! from
//! seeded ChaCha streams, and returns an [`ExperimentReport`]: named tables
//! that serialize to CSV plus a JSON metadata blob (config echo, config
//! hash, seed, runtime). For a fixed config and seed the CSV bytes are
//! identical run to run; only the recorded runtime differs.

pub mod checks;
pub mod condition;
pub mod decay;
pub mod fit;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::basis::{BasisError, BasisFamily, Configuration, FamilyKind, Particle};
use crate::expansion::{FeatureEvaluator, IndexSet, IndexTuple};
use crate::purification::PurifyError;
use crate::regression::RegressionError;
use crate::sampling::{Distribution, JSpec};
use crate::scalar::C;
use crate::symmetry::{FusedOperator, SymmetrizationOperator, SymmetryError};

pub use checks::{
    run_invariance_check, run_purify_info, run_span_check, InvarianceConfig, InvarianceOutcome,
    PurifyInfoConfig, PurifyInfoOutcome, SpanConfig, SpanOutcome,
};
pub use condition::{run_condition_experiment, ConditionConfig, ConditionOutcome, SweepConfig};
pub use decay::{run_decay_experiment, DecayConfig, DecayOutcome};
pub use fit::{run_regression_experiment, FitConfig, FitOutcome};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },
    #[error("samples per feature {got} is below the minimum {need}")]
    SampleBudget { need: usize, got: usize },
    #[error("sub-cluster order {n} exceeds the {j} available particles")]
    OrderExceedsParticles { n: usize, j: usize },
    #[error("target functions take interval particles, got {got}")]
    NotInterval { got: &'static str },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Purify(#[from] PurifyError),
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
    #[error(transparent)]
    Regression(#[from] RegressionError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("metadata serialization: {0}")]
    Json(#[from] serde_json::Error),
}

/// One batch of i.i.d. configurations: a single-particle distribution, a
/// fixed particle count, and a seed. Draws are bit-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerSpec {
    #[serde(flatten)]
    pub distribution: Distribution,
    pub j: usize,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

pub fn sample_configurations(spec: &SamplerSpec) -> Result<Vec<Configuration<f64>>, ExperimentError> {
    if spec.j == 0 {
        return Err(ExperimentError::InvalidConfig {
            reason: "sampler needs at least one particle per configuration".into(),
        });
    }
    if spec.count == 0 {
        return Err(ExperimentError::InvalidConfig {
            reason: "sampler count must be positive".into(),
        });
    }
    Ok(spec
        .distribution
        .sample_many(spec.count, &JSpec::Fixed(spec.j), spec.seed))
}

/// Test targets for the regression studies. `Runge` is the multivariate
/// Runge function `1 / (1 + a |x|^2)`; `Multiset` sums it over every
/// `n`-particle sub-cluster and adds `epsilon` times the full product
/// `x_1 ... x_J`, mimicking a body-order contribution the model cannot
/// resolve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum TargetFunction {
    Runge { a: f64 },
    Multiset { a: f64, epsilon: f64, n: usize },
}

impl TargetFunction {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |reason: &str| ExperimentError::InvalidConfig { reason: reason.into() };
        match *self {
            TargetFunction::Runge { a } => {
                if !(a.is_finite() && a > 0.0) {
                    return Err(bad("runge parameter a must be finite and positive"));
                }
            }
            TargetFunction::Multiset { a, epsilon, n } => {
                if !(a.is_finite() && a > 0.0) {
                    return Err(bad("runge parameter a must be finite and positive"));
                }
                if !(epsilon.is_finite() && epsilon >= 0.0) {
                    return Err(bad("epsilon must be finite and nonnegative"));
                }
                if n == 0 {
                    return Err(bad("sub-cluster order must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

fn runge(a: f64, x: &[f64]) -> f64 {
    let norm2: f64 = x.iter().map(|v| v * v).sum();
    1.0 / (1.0 + a * norm2)
}

/// Evaluates a target on interval coordinates. Arguments are sorted first so
/// the summation order — and with it every rounding decision — is identical
/// under permutations of the input.
pub fn eval_target(t: &TargetFunction, x: &[f64]) -> Result<f64, ExperimentError> {
    t.validate()?;
    let mut v = x.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    match *t {
        TargetFunction::Runge { a } => Ok(runge(a, &v)),
        TargetFunction::Multiset { a, epsilon, n } => {
            let j = v.len();
            if n > j {
                return Err(ExperimentError::OrderExceedsParticles { n, j });
            }
            let mut sum = 0.0;
            let mut cluster = vec![0.0; n];
            let mut pick: Vec<usize> = (0..n).collect();
            loop {
                for (slot, &i) in pick.iter().enumerate() {
                    cluster[slot] = v[i];
                }
                sum += runge(a, &cluster);
                // advance to the next index combination, lexicographically
                let mut t = n;
                while t > 0 && pick[t - 1] == j - n + t - 1 {
                    t -= 1;
                }
                if t == 0 {
                    break;
                }
                pick[t - 1] += 1;
                for s in t..n {
                    pick[s] = pick[s - 1] + 1;
                }
            }
            sum += epsilon * v.iter().product::<f64>();
            Ok(sum)
        }
    }
}

/// The interval coordinates of a configuration of line particles.
pub fn line_coordinates(x: &Configuration<f64>) -> Result<Vec<f64>, ExperimentError> {
    x.particles
        .iter()
        .map(|p| match p {
            Particle::Line(v) => Ok(*v),
            Particle::Angle(_) => Err(ExperimentError::NotInterval { got: "an angle" }),
            Particle::Point(_) => Err(ExperimentError::NotInterval { got: "a 3d point" }),
        })
        .collect()
}

/// A named rectangular table; one CSV file on disk.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "ragged table row");
        self.rows.push(row);
    }

    pub fn to_csv_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory csv");
        for row in &self.rows {
            w.write_record(row).expect("in-memory csv");
        }
        w.into_inner().expect("in-memory csv")
    }
}

/// Everything a runner produces: tables for the CSV artifacts and a JSON
/// metadata map carrying the config echo, its SHA-256, the seed, and the
/// wall-clock runtime.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub id: String,
    pub tables: Vec<Table>,
    pub metadata: Map<String, Value>,
}

impl ExperimentReport {
    pub fn new<T: Serialize>(id: &str, config: &T, seed: u64) -> Self {
        let mut metadata = Map::new();
        metadata.insert("experiment".into(), json!(id));
        metadata.insert(
            "config".into(),
            serde_json::to_value(config).expect("config serializes"),
        );
        metadata.insert("config_sha256".into(), json!(config_digest(config)));
        metadata.insert("seed".into(), json!(seed));
        ExperimentReport {
            id: id.into(),
            tables: Vec::new(),
            metadata,
        }
    }

    pub fn insert_metric(&mut self, key: &str, value: Value) {
        self.metadata.insert(key.into(), value);
    }

    pub fn set_runtime(&mut self, elapsed: Duration) {
        self.metadata
            .insert("runtime_seconds".into(), json!(elapsed.as_secs_f64()));
    }

    pub fn push_table(&mut self, table: Table) {
        self.tables.push(table);
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes `<id>_<table>.csv` per table plus `<id>_metadata.json`,
    /// creating `dir` if needed; returns the paths written.
    pub fn write_to_dir(&self, dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for table in &self.tables {
            let path = dir.join(format!("{}_{}.csv", self.id, table.name));
            fs::write(&path, table.to_csv_bytes())?;
            written.push(path);
        }
        let meta = dir.join(format!("{}_metadata.json", self.id));
        let mut out = fs::File::create(&meta)?;
        serde_json::to_writer_pretty(&mut out, &Value::Object(self.metadata.clone()))?;
        out.write_all(b"\n")?;
        written.push(meta);
        Ok(written)
    }
}

/// Stream seed for a sub-task, decorrelated from the run seed by a
/// splitmix64 step so neighbouring tags do not produce overlapping draws.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn config_digest<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn family_of(kind: FamilyKind, r_cut: f64) -> BasisFamily<f64> {
    BasisFamily::from_kind(kind, Some(r_cut))
}

/// Evaluates the canonical (fused through purification) and self-interacting
/// invariant features of one configuration from a single pass over the
/// pooled products.
pub(crate) struct InvariantEvaluator<'a> {
    evaluator: FeatureEvaluator<'a, f64>,
    fused: &'a FusedOperator<f64>,
    coupling: &'a SymmetrizationOperator<f64>,
    /// position of each coupling column inside the fused (closure) columns
    restrict: Vec<usize>,
}

impl<'a> InvariantEvaluator<'a> {
    pub fn new(
        family: &'a BasisFamily<f64>,
        fused: &'a FusedOperator<f64>,
        coupling: &'a SymmetrizationOperator<f64>,
    ) -> Self {
        let restrict = coupling
            .columns()
            .tuples()
            .iter()
            .map(|t| {
                fused
                    .columns()
                    .position(t)
                    .expect("coupling columns are purification targets")
            })
            .collect();
        InvariantEvaluator {
            evaluator: FeatureEvaluator::new(family, fused.columns()),
            fused,
            coupling,
            restrict,
        }
    }

    pub fn evaluate(
        &self,
        x: &Configuration<f64>,
    ) -> Result<(Vec<C<f64>>, Vec<C<f64>>), ExperimentError> {
        let products = self.evaluator.self_interacting(x)?;
        let canonical = self.fused.apply(&products)?;
        let pooled: Vec<C<f64>> = self.restrict.iter().map(|&i| products[i]).collect();
        let plain = self.coupling.apply(&pooled)?;
        Ok((canonical, plain))
    }
}

/// Row-restricted view of a fused (canonical) / coupling (self-interacting)
/// operator pair: only the `keep` labels survive, over exactly the closure
/// columns those labels touch. Shrinking the column set keeps per-sample
/// product evaluation proportional to the block being measured instead of
/// the full closure — the difference between seconds and hours for the
/// low-order blocks of a large basis.
pub(crate) struct RestrictedPair {
    columns: IndexSet,
    canonical_rows: Vec<Vec<(usize, f64)>>,
    plain_rows: Vec<Vec<(usize, f64)>>,
}

impl RestrictedPair {
    pub fn new(
        fused: &FusedOperator<f64>,
        coupling: &SymmetrizationOperator<f64>,
        keep: &[usize],
    ) -> Self {
        let closure = fused.columns();
        let restrict: Vec<usize> = coupling
            .columns()
            .tuples()
            .iter()
            .map(|t| {
                closure
                    .position(t)
                    .expect("coupling columns are purification targets")
            })
            .collect();
        let mut used: Vec<IndexTuple> = Vec::new();
        for &i in keep {
            used.extend(fused.rows()[i].iter().map(|&(j, _)| closure.tuples()[j].clone()));
            used.extend(
                coupling.rows()[i]
                    .iter()
                    .map(|&(k, _)| closure.tuples()[restrict[k]].clone()),
            );
        }
        let columns = IndexSet::from_tuples(used);
        let remap = |j: usize| {
            columns
                .position(&closure.tuples()[j])
                .expect("column was just collected")
        };
        let canonical_rows = keep
            .iter()
            .map(|&i| fused.rows()[i].iter().map(|&(j, w)| (remap(j), w)).collect())
            .collect();
        let plain_rows = keep
            .iter()
            .map(|&i| {
                coupling.rows()[i]
                    .iter()
                    .map(|&(k, w)| (remap(restrict[k]), w))
                    .collect()
            })
            .collect();
        RestrictedPair {
            columns,
            canonical_rows,
            plain_rows,
        }
    }

    pub fn len(&self) -> usize {
        self.canonical_rows.len()
    }
}

fn sparse_dot(row: &[(usize, f64)], products: &[C<f64>]) -> C<f64> {
    let mut acc = C::new(0.0, 0.0);
    for &(j, w) in row {
        acc += products[j].scale(w);
    }
    acc
}

/// Fills two real design matrices (columns = the pair's kept labels, rows =
/// configurations) and reports the worst imaginary residue relative to
/// `1 + |re|`. The invariants are real analytically; what shows up in the
/// imaginary part is cancellation noise scaled by the term magnitudes, so it
/// is recorded rather than gated. Rows are written independently and the
/// residue is a max-reduce, so the result does not depend on the worker
/// count; memory stays bounded by the two outputs.
pub(crate) fn paired_invariant_designs(
    family: &BasisFamily<f64>,
    pair: &RestrictedPair,
    configs: &[Configuration<f64>],
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64), ExperimentError> {
    let p = pair.len();
    let m = configs.len();
    let evaluator = FeatureEvaluator::new(family, &pair.columns);
    let mut canonical_rm = vec![0.0f64; m * p];
    let mut plain_rm = vec![0.0f64; m * p];
    let residue = canonical_rm
        .par_chunks_mut(p)
        .zip(plain_rm.par_chunks_mut(p))
        .zip(configs.par_iter())
        .map(|((c_row, p_row), x)| -> Result<f64, ExperimentError> {
            let products = evaluator.self_interacting(x)?;
            let mut res = 0.0f64;
            for (dst, row) in c_row.iter_mut().zip(&pair.canonical_rows) {
                let v = sparse_dot(row, &products);
                res = res.max(v.im.abs() / (1.0 + v.re.abs()));
                *dst = v.re;
            }
            for (dst, row) in p_row.iter_mut().zip(&pair.plain_rows) {
                let v = sparse_dot(row, &products);
                res = res.max(v.im.abs() / (1.0 + v.re.abs()));
                *dst = v.re;
            }
            Ok(res)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;
    let canonical = DMatrix::from_row_slice(m, p, &canonical_rm);
    drop(canonical_rm);
    let plain = DMatrix::from_row_slice(m, p, &plain_rm);
    Ok((canonical, plain, residue))
}
