//! Regularized linear least squares on cluster-expansion features.
//!
//! A [`RegressionProblem`] carries a real design matrix, targets, a
//! [`Regularizer`] and a lambda grid. Solvers: [`tikhonov_solve`] (QR of the
//! stacked `[Psi; sqrt(lambda) Gamma]` system — never normal equations,
//! which would square the condition number) and [`scaled_tsvd_solve`]
//! (truncated SVD of `Psi Gamma^{-1}`). [`grid_search_lambda`] picks the
//! lambda minimizing validation RMSE, ties going to the stronger
//! regularization.
//!
//! Design matrices come from [`assemble_design`]: rows are feature vectors
//! of configurations under one of three pipelines (raw self-interacting
//! products, purified canonical features, or symmetrized invariants), with
//! complex features split into separate real and imaginary rows.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{BasisError, BasisFamily, Configuration, FamilyKind};
use crate::expansion::{FeatureEvaluator, IndexSet};
use crate::linalg::{condition_number, LsFactor};
use crate::purification::{PurificationOperator, PurifyError};
use crate::scalar::{fmax, fsqrt, DenseReal, Real, C};
use crate::symmetry::{evaluate_invariants, FusedOperator, SymmetryError, SymmetryGroup};

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("design is {rows}x{cols} but there are {targets} targets")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        targets: usize,
    },
    #[error("regularizer expects {want} columns, got {got}")]
    RegularizerShape { want: usize, got: usize },
    #[error("diagonal regularizer entries must be positive")]
    NonPositiveDiagonal,
    #[error("matrix regularizer is numerically singular (condition estimate {cond:.3e})")]
    SingularRegularizer { cond: f64 },
    #[error("lambda grid must be nonempty, strictly positive and ascending")]
    InvalidLambdaGrid,
    #[error("relative tolerance must lie in (0, 1], got {got}")]
    InvalidTolerance { got: f64 },
    #[error("operator is not square: closure added {extra} tuples beyond the model columns")]
    NotSquare { extra: usize },
    #[error("non-finite value in the {place}")]
    NonFinite { place: &'static str },
    #[error("empty {what}")]
    Empty { what: &'static str },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Purify(#[from] PurifyError),
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
}

/// Penalty operator in `|Psi c - y|^2 + lambda |Gamma c|^2`.
#[derive(Debug, Clone)]
pub enum Regularizer<R: DenseReal> {
    Identity,
    /// `Gamma = diag(gamma)`, entries strictly positive.
    Diagonal(Vec<R>),
    /// General invertible matrix.
    Matrix(DMatrix<R>),
}

const REGULARIZER_COND_LIMIT: f64 = 1e12;

impl<R: DenseReal> Regularizer<R> {
    fn validate(&self, ncols: usize) -> Result<(), RegressionError> {
        match self {
            Regularizer::Identity => Ok(()),
            Regularizer::Diagonal(g) => {
                if g.len() != ncols {
                    return Err(RegressionError::RegularizerShape {
                        want: ncols,
                        got: g.len(),
                    });
                }
                if g.iter().any(|&v| !(v > R::zero())) {
                    return Err(RegressionError::NonPositiveDiagonal);
                }
                Ok(())
            }
            Regularizer::Matrix(m) => {
                if m.nrows() != ncols || m.ncols() != ncols {
                    return Err(RegressionError::RegularizerShape {
                        want: ncols,
                        got: m.nrows().max(m.ncols()),
                    });
                }
                let cond = condition_number(m);
                if !(cond < R::of(REGULARIZER_COND_LIMIT)) {
                    return Err(RegressionError::SingularRegularizer {
                        cond: cond.to_f64_lossy(),
                    });
                }
                Ok(())
            }
        }
    }

    /// `factor * Gamma` as a dense block for the stacked system.
    fn scaled_block(&self, ncols: usize, factor: R) -> DMatrix<R> {
        match self {
            Regularizer::Identity => DMatrix::from_diagonal_element(ncols, ncols, factor),
            Regularizer::Diagonal(g) => {
                DMatrix::from_diagonal(&DVector::from_iterator(ncols, g.iter().map(|&v| v * factor)))
            }
            Regularizer::Matrix(m) => m * factor,
        }
    }

    /// `Psi Gamma^{-1}` for the scaled-TSVD solver.
    fn scale_design(&self, psi: &DMatrix<R>) -> Result<DMatrix<R>, RegressionError> {
        match self {
            Regularizer::Identity => Ok(psi.clone()),
            Regularizer::Diagonal(g) => {
                let mut out = psi.clone();
                for (j, &v) in g.iter().enumerate() {
                    for i in 0..out.nrows() {
                        out[(i, j)] /= v;
                    }
                }
                Ok(out)
            }
            Regularizer::Matrix(m) => {
                // Psi Gamma^{-1} = (Gamma^{-T} Psi^T)^T
                let solved = m
                    .transpose()
                    .lu()
                    .solve(&psi.transpose())
                    .ok_or(RegressionError::SingularRegularizer { cond: f64::INFINITY })?;
                Ok(solved.transpose())
            }
        }
    }

    /// `Gamma^{-1} b`, mapping the scaled solution back.
    fn unscale(&self, b: DVector<R>) -> Result<DVector<R>, RegressionError> {
        match self {
            Regularizer::Identity => Ok(b),
            Regularizer::Diagonal(g) => Ok(DVector::from_iterator(
                b.len(),
                b.iter().zip(g).map(|(&v, &d)| v / d),
            )),
            Regularizer::Matrix(m) => m
                .clone()
                .lu()
                .solve(&b)
                .ok_or(RegressionError::SingularRegularizer { cond: f64::INFINITY }),
        }
    }
}

/// Which solver a fit request refers to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SolverKind {
    Tikhonov,
    ScaledTsvd { rtol: f64 },
}

/// Design, targets, regularizer and lambda grid, validated once at
/// construction; solvers and the grid search borrow it read-only.
#[derive(Debug, Clone)]
pub struct RegressionProblem<R: DenseReal> {
    design: DMatrix<R>,
    targets: DVector<R>,
    regularizer: Regularizer<R>,
    lambda_grid: Vec<R>,
    solver: SolverKind,
}

/// 40 logarithmically spaced points spanning 1e-15 to 1e3.
pub fn default_lambda_grid<R: Real>() -> Vec<R> {
    let n = 40;
    (0..n)
        .map(|i| R::of(10f64.powf(-15.0 + 18.0 * i as f64 / (n - 1) as f64)))
        .collect()
}

impl<R: DenseReal> RegressionProblem<R> {
    pub fn new(
        design: DMatrix<R>,
        targets: DVector<R>,
        regularizer: Regularizer<R>,
    ) -> Result<Self, RegressionError> {
        if design.nrows() == 0 || design.ncols() == 0 {
            return Err(RegressionError::Empty { what: "design matrix" });
        }
        if targets.len() != design.nrows() {
            return Err(RegressionError::DimensionMismatch {
                rows: design.nrows(),
                cols: design.ncols(),
                targets: targets.len(),
            });
        }
        if design.iter().any(|v| !v.is_finite()) {
            return Err(RegressionError::NonFinite { place: "design matrix" });
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(RegressionError::NonFinite { place: "targets" });
        }
        regularizer.validate(design.ncols())?;
        Ok(Self {
            design,
            targets,
            regularizer,
            lambda_grid: default_lambda_grid(),
            solver: SolverKind::Tikhonov,
        })
    }

    pub fn with_lambda_grid(mut self, grid: Vec<R>) -> Result<Self, RegressionError> {
        let ascending = grid.windows(2).all(|w| w[0] < w[1]);
        if grid.is_empty() || !ascending || grid.iter().any(|&v| !(v > R::zero())) {
            return Err(RegressionError::InvalidLambdaGrid);
        }
        self.lambda_grid = grid;
        Ok(self)
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn design(&self) -> &DMatrix<R> {
        &self.design
    }

    pub fn targets(&self) -> &DVector<R> {
        &self.targets
    }

    pub fn regularizer(&self) -> &Regularizer<R> {
        &self.regularizer
    }

    pub fn lambda_grid(&self) -> &[R] {
        &self.lambda_grid
    }

    pub fn solver(&self) -> SolverKind {
        self.solver
    }
}

/// A solved fit: coefficients plus the diagnostics the experiments log.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult<R: Real> {
    pub coefficients: Vec<R>,
    /// `None` for solvers without a ridge parameter (TSVD).
    pub lambda: Option<R>,
    pub train_rmse: R,
    pub validation_rmse: Option<R>,
    pub effective_rank: usize,
    pub dropped_singular_values: Vec<R>,
}

fn rmse<R: DenseReal>(design: &DMatrix<R>, c: &DVector<R>, y: &DVector<R>) -> R {
    let r = design * c - y;
    fsqrt(r.norm_squared() / R::of(y.len() as f64))
}

/// Minimizes `|Psi c - y|^2 + lambda |Gamma c|^2` through a QR factorization
/// of the stacked augmented system. `lambda = 0` degrades to ordinary least
/// squares via the pseudoinverse (minimum-norm on rank deficiency).
pub fn tikhonov_solve<R: DenseReal>(
    problem: &RegressionProblem<R>,
    lambda: R,
) -> Result<FitResult<R>, RegressionError> {
    if !lambda.is_finite() || lambda < R::zero() {
        return Err(RegressionError::NonFinite { place: "lambda" });
    }
    let psi = &problem.design;
    let (m, p) = (psi.nrows(), psi.ncols());

    if lambda == R::zero() {
        let svd = nalgebra::SVD::new(psi.clone(), true, true);
        let smax = svd
            .singular_values
            .iter()
            .fold(R::zero(), |a, &s| fmax(a, s));
        let cutoff = smax * R::of(1e-13);
        let c = svd.solve(&problem.targets, cutoff).expect("u/v_t requested");
        let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
        let dropped = svd
            .singular_values
            .iter()
            .copied()
            .filter(|&s| s <= cutoff)
            .collect();
        let train_rmse = rmse(psi, &c, &problem.targets);
        return Ok(FitResult {
            coefficients: c.iter().copied().collect(),
            lambda: Some(lambda),
            train_rmse,
            validation_rmse: None,
            effective_rank: rank,
            dropped_singular_values: dropped,
        });
    }

    let gamma = problem.regularizer.scaled_block(p, fsqrt(lambda));
    let mut stacked = DMatrix::zeros(m + p, p);
    stacked.view_mut((0, 0), (m, p)).copy_from(psi);
    stacked.view_mut((m, 0), (p, p)).copy_from(&gamma);
    let mut rhs = DVector::zeros(m + p);
    rhs.rows_mut(0, m).copy_from(&problem.targets);

    let factor = LsFactor::new(stacked);
    let c = factor.solve(&rhs);
    let train_rmse = rmse(psi, &c, &problem.targets);
    Ok(FitResult {
        coefficients: c.iter().copied().collect(),
        lambda: Some(lambda),
        train_rmse,
        validation_rmse: None,
        effective_rank: factor.rank(),
        dropped_singular_values: factor.dropped_singular_values(),
    })
}

/// Solves `min |Psi Gamma^{-1} b - y|^2` keeping only singular values at or
/// above `rtol * sigma_max` (strictly-below drop, so `rtol = 1` keeps the
/// top value), then maps back `c = Gamma^{-1} b`.
pub fn scaled_tsvd_solve<R: DenseReal>(
    problem: &RegressionProblem<R>,
    rtol: R,
) -> Result<FitResult<R>, RegressionError> {
    if !(rtol > R::zero() && rtol <= R::one()) {
        return Err(RegressionError::InvalidTolerance {
            got: rtol.to_f64_lossy(),
        });
    }
    let scaled = problem.regularizer.scale_design(&problem.design)?;
    let svd = nalgebra::SVD::new(scaled, true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd
        .singular_values
        .iter()
        .fold(R::zero(), |a, &s| fmax(a, s));
    let cut = rtol * smax;

    let mut b = DVector::zeros(problem.design.ncols());
    let mut rank = 0usize;
    let mut dropped = Vec::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s < cut {
            dropped.push(s);
            continue;
        }
        rank += 1;
        let coeff = u.column(i).dot(&problem.targets) / s;
        for j in 0..b.len() {
            b[j] += v_t[(i, j)] * coeff;
        }
    }
    let c = problem.regularizer.unscale(b)?;
    let train_rmse = rmse(&problem.design, &c, &problem.targets);
    Ok(FitResult {
        coefficients: c.iter().copied().collect(),
        lambda: None,
        train_rmse,
        validation_rmse: None,
        effective_rank: rank,
        dropped_singular_values: dropped,
    })
}

/// Tikhonov fits across the problem's lambda grid (in parallel), returning
/// the one with the smallest validation RMSE; ties break toward the larger
/// lambda.
pub fn grid_search_lambda<R: DenseReal + Send + Sync>(
    problem: &RegressionProblem<R>,
    validation: (&DMatrix<R>, &DVector<R>),
) -> Result<FitResult<R>, RegressionError> {
    let (v_design, v_targets) = validation;
    if v_design.nrows() == 0 {
        return Err(RegressionError::Empty { what: "validation set" });
    }
    if v_design.ncols() != problem.design.ncols() || v_targets.len() != v_design.nrows() {
        return Err(RegressionError::DimensionMismatch {
            rows: v_design.nrows(),
            cols: v_design.ncols(),
            targets: v_targets.len(),
        });
    }

    let fits: Vec<(R, FitResult<R>)> = problem
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let mut fit = tikhonov_solve(problem, lambda)?;
            let c = DVector::from_iterator(
                fit.coefficients.len(),
                fit.coefficients.iter().copied(),
            );
            fit.validation_rmse = Some(rmse(v_design, &c, v_targets));
            Ok((lambda, fit))
        })
        .collect::<Result<_, RegressionError>>()?;

    let mut best: Option<FitResult<R>> = None;
    for (_, fit) in fits {
        let better = match &best {
            None => true,
            // `<=` scans ascending, so equal scores settle on the larger lambda
            Some(b) => fit.validation_rmse.unwrap() <= b.validation_rmse.unwrap(),
        };
        if better {
            best = Some(fit);
        }
    }
    Ok(best.expect("grid validated nonempty"))
}

/// Deterministic row split for holdout validation: indices shuffled by
/// `seed`, the first `ceil(fraction n)` go to validation, both halves
/// returned sorted.
pub fn holdout_split(n: usize, validation_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = ((n as f64) * validation_fraction).ceil() as usize;
    let n_val = n_val.min(n.saturating_sub(1));
    let (val, train) = idx.split_at(n_val);
    let mut val = val.to_vec();
    let mut train = train.to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

/// Extracts the given rows of a system.
pub fn select_rows<R: DenseReal>(
    design: &DMatrix<R>,
    targets: &DVector<R>,
    rows: &[usize],
) -> (DMatrix<R>, DVector<R>) {
    let mut d = DMatrix::zeros(rows.len(), design.ncols());
    let mut y = DVector::zeros(rows.len());
    for (i, &r) in rows.iter().enumerate() {
        d.row_mut(i).copy_from(&design.row(r));
        y[i] = targets[r];
    }
    (d, y)
}

/// Diagonal smoothness prior `gamma(k) = sum_t (1 + deg(k_t))^2` (the empty
/// tuple gets 1); degrees read per index, so spherical indices contribute
/// `(1 + n + l)^2`.
pub fn smoothness_prior<R: DenseReal>(set: &IndexSet) -> Regularizer<R> {
    Regularizer::Diagonal(
        set.tuples()
            .iter()
            .map(|t| {
                if t.ord() == 0 {
                    R::one()
                } else {
                    t.indices()
                        .iter()
                        .map(|k| {
                            let d = R::of(1.0 + f64::from(k.degree()));
                            d * d
                        })
                        .fold(R::zero(), |a, v| a + v)
                }
            })
            .collect(),
    )
}

/// The change-of-basis prior `Gamma = P^{-T}`: penalizing `|P^{-T} c|` on
/// self-interacting coefficients equals penalizing the canonical
/// coefficients directly. Requires the operator to be square (closed set).
pub fn purification_prior<R: DenseReal>(
    p: &PurificationOperator<R>,
) -> Result<Regularizer<R>, RegressionError> {
    if !p.is_square() {
        return Err(RegressionError::NotSquare {
            extra: p.columns().len() - p.targets().len(),
        });
    }
    let n = p.targets().len();
    let dense = p.dense();
    let inv = if p.sparsity_report().triangular {
        // unit-triangular in the tuple order: plain forward substitution
        let mut inv = DMatrix::<R>::identity(n, n);
        for col in 0..n {
            for i in 0..n {
                let mut sum = inv[(i, col)];
                for j in 0..i {
                    sum -= dense[(i, j)] * inv[(j, col)];
                }
                inv[(i, col)] = sum / dense[(i, i)];
            }
        }
        inv
    } else {
        dense
            .lu()
            .try_inverse()
            .ok_or(RegressionError::SingularRegularizer { cond: f64::INFINITY })?
    };
    Ok(Regularizer::Matrix(inv.transpose()))
}

/// How configurations become design rows.
pub enum DesignPipeline<'a, R: DenseReal> {
    /// Self-interacting products over `set`.
    Raw {
        family: &'a BasisFamily<R>,
        set: &'a IndexSet,
    },
    /// Canonical features: products over the operator columns mapped through
    /// the purification rows.
    Purified {
        family: &'a BasisFamily<R>,
        operator: &'a PurificationOperator<R>,
    },
    /// Symmetrized invariants from a fused operator.
    Invariant {
        family: &'a BasisFamily<R>,
        operator: &'a FusedOperator<R>,
    },
}

impl<'a, R: DenseReal> DesignPipeline<'a, R> {
    pub fn column_count(&self) -> usize {
        match self {
            DesignPipeline::Raw { set, .. } => set.len(),
            DesignPipeline::Purified { operator, .. } => operator.targets().len(),
            DesignPipeline::Invariant { operator, .. } => operator.len(),
        }
    }

    /// Complex features are split into two real rows per configuration.
    pub fn rows_per_config(&self) -> usize {
        if self.is_complex() {
            2
        } else {
            1
        }
    }

    fn family(&self) -> &'a BasisFamily<R> {
        match self {
            DesignPipeline::Raw { family, .. }
            | DesignPipeline::Purified { family, .. }
            | DesignPipeline::Invariant { family, .. } => family,
        }
    }

    fn is_complex(&self) -> bool {
        let complex_family = matches!(
            self.family().kind(),
            FamilyKind::Trigonometric | FamilyKind::Spherical | FamilyKind::SphericalEnvelope
        );
        match self {
            DesignPipeline::Raw { .. } | DesignPipeline::Purified { .. } => complex_family,
            // O(1)/O(3) invariants are real by construction; SO(2) rows stay
            // complex (conjugation pairs tuples with their negations).
            DesignPipeline::Invariant { operator, .. } => {
                operator.group() == SymmetryGroup::SO2
            }
        }
    }

    fn feature_rows(
        &self,
        configs: &[Configuration<R>],
    ) -> Result<Vec<Vec<C<R>>>, RegressionError> {
        match self {
            DesignPipeline::Raw { family, set } => {
                let ev = FeatureEvaluator::new(family, set);
                configs
                    .iter()
                    .map(|x| ev.self_interacting(x).map_err(RegressionError::from))
                    .collect()
            }
            DesignPipeline::Purified { family, operator } => {
                let ev = FeatureEvaluator::new(family, operator.columns());
                configs
                    .iter()
                    .map(|x| {
                        let products = ev.self_interacting(x)?;
                        operator.apply(&products).map_err(RegressionError::from)
                    })
                    .collect()
            }
            DesignPipeline::Invariant { family, operator } => {
                let ev = FeatureEvaluator::new(family, operator.columns());
                configs
                    .iter()
                    .map(|x| {
                        let products = ev.self_interacting(x)?;
                        evaluate_invariants(operator, &products).map_err(RegressionError::from)
                    })
                    .collect()
            }
        }
    }
}

/// Feature matrix for a batch of configurations; column order follows the
/// pipeline's label order, rows follow the input order (two consecutive
/// rows — real then imaginary — per configuration for complex pipelines).
pub fn assemble_design<R: DenseReal>(
    pipeline: &DesignPipeline<R>,
    configs: &[Configuration<R>],
) -> Result<DMatrix<R>, RegressionError> {
    if configs.is_empty() {
        return Err(RegressionError::Empty { what: "configuration batch" });
    }
    let rows = pipeline.feature_rows(configs)?;
    let p = pipeline.column_count();
    let per = pipeline.rows_per_config();
    let mut out = DMatrix::zeros(configs.len() * per, p);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            out[(per * i, j)] = v.re;
            if per == 2 {
                out[(per * i + 1, j)] = v.im;
            }
        }
    }
    Ok(out)
}

/// [`assemble_design`] plus the matching target vector: real targets pair
/// with the real rows, imaginary companion rows get target 0.
pub fn assemble_system<R: DenseReal>(
    pipeline: &DesignPipeline<R>,
    configs: &[Configuration<R>],
    targets: &[R],
) -> Result<(DMatrix<R>, DVector<R>), RegressionError> {
    if targets.len() != configs.len() {
        return Err(RegressionError::DimensionMismatch {
            rows: configs.len(),
            cols: pipeline.column_count(),
            targets: targets.len(),
        });
    }
    let design = assemble_design(pipeline, configs)?;
    let per = pipeline.rows_per_config();
    let mut y = DVector::zeros(configs.len() * per);
    for (i, &t) in targets.iter().enumerate() {
        y[per * i] = t;
    }
    Ok((design, y))
}
