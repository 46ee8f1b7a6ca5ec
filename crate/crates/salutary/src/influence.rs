//! Influence-function machinery.
//!
//! One context per round caches the validation gradient and its
//! inverse-Hessian solve; every pool point and every candidate label is then
//! scored with two dot products. Scores are oriented as the predicted
//! DECREASE in validation loss when the point joins training with weight
//! `1/N`, so positive means beneficial and selection takes the argmax.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelOverrides};
use crate::error::{Error, Result};
use crate::model::{
    self, argmax_lowest, resolve_features, resolve_samples, FittedModel, Sample, TrainConfig,
};
use crate::numerics::{cg_solve, dot, norm};

/// Conjugate-gradient solve parameters for the inverse-HVP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CgConfig {
    /// Relative residual threshold `||H s - b|| / ||b||`.
    pub residual_tol: f64,
    pub max_iterations: usize,
}

impl CgConfig {
    /// Defaults for a model with `param_count` parameters: tolerance 1e-8,
    /// iteration budget `10 * param_count`.
    pub fn for_param_count(param_count: usize) -> CgConfig {
        CgConfig {
            residual_tol: 1e-8,
            max_iterations: 10 * param_count.max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) {
            return Err(Error::config("cg.residual_tol", "must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("cg.max_iterations", "must be >= 1"));
        }
        Ok(())
    }
}

/// Inverse-HVP solve diagnostics: true relative residual at the returned
/// solution and CG iterations used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub relative_residual: f64,
    pub iterations: usize,
}

/// Cached per-round influence state: the fitted model, the training spec
/// that defines the Hessian's data term, the validation gradient, and the
/// solved `s = H^{-1} grad(L_v)`.
#[derive(Debug, Clone)]
pub struct InfluenceContext {
    pub model: FittedModel,
    pub train_indices: Vec<usize>,
    pub label_overrides: LabelOverrides,
    pub val_gradient: Vec<f64>,
    pub ihvp: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Gradient of the mean validation cross-entropy at the fitted parameters.
/// The regularizer is excluded: the quantity of interest is pure data loss.
pub fn validation_gradient(
    model: &FittedModel,
    ds: &Dataset,
    val_indices: &[usize],
) -> Result<Vec<f64>> {
    if val_indices.is_empty() {
        return Err(Error::invalid(
            "validation_gradient",
            "validation set must be nonempty",
        ));
    }
    model::gradient(&model.theta, ds, val_indices, None, 0.0)
}

/// Solve `H s = grad(L_v)` matrix-free and cache everything needed to score
/// pool points. One solve serves all pool points and all candidate labels.
pub fn build_context(
    model: &FittedModel,
    ds: &Dataset,
    train_indices: &[usize],
    label_overrides: &LabelOverrides,
    val_indices: &[usize],
    cg: &CgConfig,
) -> Result<InfluenceContext> {
    cg.validate()?;
    if !model.converged {
        return Err(Error::invalid(
            "build_context",
            "model must be converged before influence estimation",
        ));
    }
    if !(model.config.lambda > 0.0) {
        return Err(Error::invalid(
            "build_context",
            "lambda must be positive for a definite Hessian",
        ));
    }
    let val_gradient = validation_gradient(model, ds, val_indices)?;
    let samples = resolve_features(ds, train_indices)?;
    let dp1 = model.feature_count + 1;
    let lambda = model.config.lambda;
    let apply =
        |v: &[f64]| model::weighted_hvp(&model.theta, model.class_count, dp1, &samples, lambda, v);

    // Solve one order tighter than asked, then verify the true residual.
    let outcome = cg_solve(&apply, &val_gradient, cg.residual_tol * 0.1, cg.max_iterations);
    let b_norm = norm(&val_gradient);
    let (true_residual, iterations) = if b_norm == 0.0 {
        (0.0, outcome.iterations)
    } else {
        let hs = apply(&outcome.solution);
        let mut r = 0.0;
        for (a, b) in hs.iter().zip(&val_gradient) {
            r += (a - b) * (a - b);
        }
        (r.sqrt() / b_norm, outcome.iterations)
    };
    if true_residual > cg.residual_tol {
        return Err(Error::SolverFailure {
            residual: true_residual,
            iterations,
        });
    }
    Ok(InfluenceContext {
        model: model.clone(),
        train_indices: train_indices.to_vec(),
        label_overrides: label_overrides.clone(),
        val_gradient,
        ihvp: outcome.solution,
        diagnostics: SolveDiagnostics {
            relative_residual: true_residual,
            iterations,
        },
    })
}

impl InfluenceContext {
    /// Predicted validation-loss decrease for `x` under every label at once.
    ///
    /// With `S = H^{-1} grad(L_v)` reshaped to `C x (d+1)`, `u = S x~`, and
    /// `p = softmax(theta x~)`, the per-sample gradient `(p - e_c) (x) x~`
    /// contracts to `score_c = (p . u - u_c) / N`.
    pub fn scores_for(&self, x: &[f64], n_train: usize, out: &mut Vec<f64>) -> Result<()> {
        if x.len() != self.model.feature_count {
            return Err(Error::DimensionMismatch {
                operation: "influence_score",
                expected: self.model.feature_count,
                got: x.len(),
            });
        }
        if n_train == 0 {
            return Err(Error::invalid("influence_score", "N must be >= 1"));
        }
        let c = self.model.class_count;
        let dp1 = self.model.feature_count + 1;
        let d = dp1 - 1;
        let p = model::predict_proba(&self.model, x)?;
        out.clear();
        out.reserve(c);
        for cls in 0..c {
            let row = &self.ihvp[cls * dp1..(cls + 1) * dp1];
            out.push(dot(&row[..d], x) + row[d]);
        }
        let pu = dot(&p, out);
        let scale = 1.0 / n_train as f64;
        for v in out.iter_mut() {
            *v = (pu - *v) * scale;
        }
        Ok(())
    }
}

/// Predicted validation-loss decrease when `(x, label)` joins training with
/// weight `1/n_train`. Positive = beneficial.
pub fn influence_score(
    ctx: &InfluenceContext,
    x: &[f64],
    label: usize,
    n_train: usize,
) -> Result<f64> {
    if label >= ctx.model.class_count {
        return Err(Error::invalid(
            "influence_score",
            format!("label {label} out of range"),
        ));
    }
    let mut scores = Vec::new();
    ctx.scores_for(x, n_train, &mut scores)?;
    Ok(scores[label])
}

/// Influence scores for every pool point under every label; row order is the
/// given pool order.
#[derive(Debug, Clone)]
pub struct InfluenceMatrix {
    pub pool: Vec<usize>,
    pub class_count: usize,
    scores: Vec<f64>,
}

impl InfluenceMatrix {
    pub fn row(&self, pool_pos: usize) -> &[f64] {
        &self.scores[pool_pos * self.class_count..(pool_pos + 1) * self.class_count]
    }

    pub fn score(&self, pool_pos: usize, label: usize) -> f64 {
        self.scores[pool_pos * self.class_count + label]
    }

    /// Best (label, score) for one row; ties break to the lowest class index.
    pub fn best(&self, pool_pos: usize) -> (usize, f64) {
        let row = self.row(pool_pos);
        let label = argmax_lowest(row);
        (label, row[label])
    }
}

/// Score every pool point under every candidate label.
pub fn influence_matrix(
    ctx: &InfluenceContext,
    ds: &Dataset,
    pool: &[usize],
    n_train: usize,
) -> Result<InfluenceMatrix> {
    if pool.is_empty() {
        return Err(Error::invalid("influence_matrix", "pool must be nonempty"));
    }
    let c = ctx.model.class_count;
    let mut scores = Vec::with_capacity(pool.len() * c);
    let mut row = Vec::new();
    for &i in pool {
        ctx.scores_for(ds.row(i), n_train, &mut row)?;
        scores.extend_from_slice(&row);
    }
    Ok(InfluenceMatrix {
        pool: pool.to_vec(),
        class_count: c,
        scores,
    })
}

/// The label with the highest influence estimation, and that score.
/// Ties break to the lowest class index.
pub fn salutary_label(ctx: &InfluenceContext, x: &[f64], n_train: usize) -> Result<(usize, f64)> {
    let mut scores = Vec::new();
    ctx.scores_for(x, n_train, &mut scores)?;
    let label = argmax_lowest(&scores);
    Ok((label, scores[label]))
}

fn retrain_to_convergence(
    samples: &[Sample<'_>],
    class_count: usize,
    dp1: usize,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    let (theta, converged, grad_norm, iterations) =
        model::minimize(samples, class_count, dp1, config, None)?;
    if !converged {
        return Err(Error::NonConvergence {
            grad_norm,
            iterations,
        });
    }
    Ok(theta)
}

/// Actual validation-loss decrease from retraining with the candidate
/// appended: both models are trained from scratch, the augmented one on
/// `N + 1` points with the mean reweighted accordingly. Matches the sign
/// convention of [`influence_score`].
pub fn add_one_in_actual(
    ds: &Dataset,
    train_indices: &[usize],
    overrides: Option<&LabelOverrides>,
    val_indices: &[usize],
    candidate_x: &[f64],
    candidate_label: usize,
    config: &TrainConfig,
) -> Result<f64> {
    config.validate()?;
    if candidate_label >= ds.class_count() {
        return Err(Error::invalid(
            "add_one_in_actual",
            format!("candidate label {candidate_label} out of range"),
        ));
    }
    if candidate_x.len() != ds.feature_count() {
        return Err(Error::DimensionMismatch {
            operation: "add_one_in_actual",
            expected: ds.feature_count(),
            got: candidate_x.len(),
        });
    }
    let dp1 = ds.feature_count() + 1;
    let c = ds.class_count();
    let base = resolve_samples(ds, train_indices, overrides)?;
    let theta_base = retrain_to_convergence(&base, c, dp1, config)?;

    let w = 1.0 / (base.len() + 1) as f64;
    let mut augmented: Vec<Sample<'_>> =
        base.iter().map(|s| Sample { weight: w, ..*s }).collect();
    augmented.push(Sample {
        x: candidate_x,
        label: candidate_label,
        weight: w,
    });
    let theta_new = retrain_to_convergence(&augmented, c, dp1, config)?;

    let before = model::loss(&theta_base, ds, val_indices, None, 0.0)?;
    let after = model::loss(&theta_new, ds, val_indices, None, 0.0)?;
    Ok(before - after)
}

/// Actual validation-loss decrease from adding the candidate as an extra
/// objective term with absolute weight `weight` (the base mean is left
/// untouched). `weight = 0` retrains on the unchanged training set. Used to
/// check the first-order behavior of the influence linearization.
#[allow(clippy::too_many_arguments)]
pub fn upweighted_actual_decrease(
    ds: &Dataset,
    train_indices: &[usize],
    overrides: Option<&LabelOverrides>,
    val_indices: &[usize],
    candidate_x: &[f64],
    candidate_label: usize,
    weight: f64,
    config: &TrainConfig,
) -> Result<f64> {
    config.validate()?;
    if !(weight >= 0.0) {
        return Err(Error::invalid(
            "upweighted_actual_decrease",
            "weight must be >= 0",
        ));
    }
    let dp1 = ds.feature_count() + 1;
    let c = ds.class_count();
    let base = resolve_samples(ds, train_indices, overrides)?;
    let theta_base = retrain_to_convergence(&base, c, dp1, config)?;

    let mut augmented = base.clone();
    if weight > 0.0 {
        augmented.push(Sample {
            x: candidate_x,
            label: candidate_label,
            weight,
        });
    }
    let theta_new = retrain_to_convergence(&augmented, c, dp1, config)?;

    let before = model::loss(&theta_base, ds, val_indices, None, 0.0)?;
    let after = model::loss(&theta_new, ds, val_indices, None, 0.0)?;
    Ok(before - after)
}

/// Spearman rank correlation with fractional (average) ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            operation: "spearman",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::invalid("spearman", "need at least 2 observations"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("spearman", "values must be finite"));
    }
    let ra = fractional_ranks(a);
    let rb = fractional_ranks(b);
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        let dx = x - mean;
        let dy = y - mean;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::UndefinedCorrelation {
            message: "zero rank variance".to_string(),
        });
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// 1-based average ranks; tied values share the mean of their positions.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&x, &y| values[x].partial_cmp(&values[y]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}
