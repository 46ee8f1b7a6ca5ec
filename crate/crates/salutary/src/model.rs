//! Multinomial (softmax) logistic regression with L2 regularization.
//!
//! Parameters are a `C x (d+1)` matrix stored class-major; each class row
//! holds `d` feature weights followed by a bias. Inputs are augmented with a
//! trailing 1 so the bias participates in every product, and the bias is
//! regularized along with the weights, keeping the Hessian exactly
//! `data term + lambda * I`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelOverrides};
use crate::error::{Error, Result};
use crate::label_audit;
use crate::numerics::{axpy, cg_solve, dot, norm};

/// Training hyperparameters. `lambda > 0` makes the objective strictly
/// convex, so the optimum is unique.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub grad_tol: f64,
    pub max_iterations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-3,
            grad_tol: 1e-8,
            max_iterations: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::config("train.lambda", "must be > 0"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::config("train.grad_tol", "must be > 0"));
        }
        if self.max_iterations == 0 {
            return Err(Error::config("train.max_iterations", "must be >= 1"));
        }
        Ok(())
    }
}

/// A trained softmax-regression model.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    /// Flat `C x (d+1)` parameter matrix, class-major.
    pub theta: Vec<f64>,
    pub class_count: usize,
    pub feature_count: usize,
    pub config: TrainConfig,
    pub train_indices: Vec<usize>,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub iterations: usize,
}

impl FittedModel {
    pub fn param_count(&self) -> usize {
        self.class_count * (self.feature_count + 1)
    }
}

/// One resolved training sample: borrowed feature row, effective label, and
/// absolute objective weight.
#[derive(Clone, Copy)]
pub(crate) struct Sample<'a> {
    pub x: &'a [f64],
    pub label: usize,
    pub weight: f64,
}

/// Resolve `indices` into weighted samples, applying label overrides.
///
/// Ground-truth reads (those not satisfied by an override) pass through the
/// label audit hook. Every override key must be a member of `indices`.
pub(crate) fn resolve_samples<'a>(
    ds: &'a Dataset,
    indices: &[usize],
    overrides: Option<&LabelOverrides>,
) -> Result<Vec<Sample<'a>>> {
    if indices.is_empty() {
        return Err(Error::invalid("model", "index set must be nonempty"));
    }
    let weight = 1.0 / indices.len() as f64;
    let mut hits = 0usize;
    let mut samples = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= ds.len() {
            return Err(Error::invalid(
                "model",
                format!("index {i} out of bounds for dataset of {}", ds.len()),
            ));
        }
        let label = match overrides.and_then(|m| m.get(&i)) {
            Some(&l) => {
                if l >= ds.class_count() {
                    return Err(Error::invalid(
                        "model",
                        format!("override label {l} out of range"),
                    ));
                }
                hits += 1;
                l
            }
            None => {
                label_audit::record_ground_truth_read(ds.id(i));
                ds.label(i)
            }
        };
        samples.push(Sample {
            x: ds.row(i),
            label,
            weight,
        });
    }
    if let Some(m) = overrides {
        if hits != m.len() {
            return Err(Error::invalid(
                "model",
                "label override references indices outside the given set",
            ));
        }
    }
    Ok(samples)
}

/// Features-only resolution for label-free computations (Hessian products).
pub(crate) fn resolve_features<'a>(ds: &'a Dataset, indices: &[usize]) -> Result<Vec<Sample<'a>>> {
    if indices.is_empty() {
        return Err(Error::invalid("model", "index set must be nonempty"));
    }
    let weight = 1.0 / indices.len() as f64;
    indices
        .iter()
        .map(|&i| {
            if i >= ds.len() {
                return Err(Error::invalid(
                    "model",
                    format!("index {i} out of bounds for dataset of {}", ds.len()),
                ));
            }
            Ok(Sample {
                x: ds.row(i),
                label: 0,
                weight,
            })
        })
        .collect()
}

fn check_theta(theta: &[f64], class_count: usize, dp1: usize) -> Result<()> {
    if theta.len() != class_count * dp1 {
        return Err(Error::DimensionMismatch {
            operation: "model",
            expected: class_count * dp1,
            got: theta.len(),
        });
    }
    Ok(())
}

/// Logits for one augmented input; `out` has length `class_count`.
fn logits_into(theta: &[f64], x: &[f64], dp1: usize, out: &mut [f64]) {
    for (c, z) in out.iter_mut().enumerate() {
        let row = &theta[c * dp1..(c + 1) * dp1];
        *z = dot(&row[..x.len()], x) + row[x.len()];
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Replace logits with softmax probabilities in place.
fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

pub(crate) fn weighted_loss(
    theta: &[f64],
    class_count: usize,
    dp1: usize,
    samples: &[Sample<'_>],
    lambda: f64,
) -> f64 {
    let mut z = vec![0.0; class_count];
    let mut acc = 0.0;
    for s in samples {
        logits_into(theta, s.x, dp1, &mut z);
        acc += s.weight * (log_sum_exp(&z) - z[s.label]);
    }
    acc + 0.5 * lambda * dot(theta, theta)
}

pub(crate) fn weighted_gradient(
    theta: &[f64],
    class_count: usize,
    dp1: usize,
    samples: &[Sample<'_>],
    lambda: f64,
) -> Vec<f64> {
    let mut g = vec![0.0; class_count * dp1];
    let mut p = vec![0.0; class_count];
    let d = dp1 - 1;
    for s in samples {
        logits_into(theta, s.x, dp1, &mut p);
        softmax_in_place(&mut p);
        for c in 0..class_count {
            let coef = s.weight * (p[c] - if c == s.label { 1.0 } else { 0.0 });
            let row = &mut g[c * dp1..(c + 1) * dp1];
            for j in 0..d {
                row[j] += coef * s.x[j];
            }
            row[d] += coef;
        }
    }
    axpy(lambda, theta, &mut g);
    g
}

/// Exact Hessian-vector product. Labels never enter: each sample's block is
/// `(diag(p) - p p^T) (x~ x~^T)` regardless of its class.
pub(crate) fn weighted_hvp(
    theta: &[f64],
    class_count: usize,
    dp1: usize,
    samples: &[Sample<'_>],
    lambda: f64,
    v: &[f64],
) -> Vec<f64> {
    let d = dp1 - 1;
    let mut out = vec![0.0; class_count * dp1];
    axpy(lambda, v, &mut out);
    let mut p = vec![0.0; class_count];
    let mut u = vec![0.0; class_count];
    for s in samples {
        logits_into(theta, s.x, dp1, &mut p);
        softmax_in_place(&mut p);
        for (c, uc) in u.iter_mut().enumerate() {
            let row = &v[c * dp1..(c + 1) * dp1];
            *uc = dot(&row[..d], s.x) + row[d];
        }
        let pu = dot(&p, &u);
        for c in 0..class_count {
            let coef = s.weight * p[c] * (u[c] - pu);
            let row = &mut out[c * dp1..(c + 1) * dp1];
            for j in 0..d {
                row[j] += coef * s.x[j];
            }
            row[d] += coef;
        }
    }
    out
}

fn weighted_dense_hessian(
    theta: &[f64],
    class_count: usize,
    dp1: usize,
    samples: &[Sample<'_>],
    lambda: f64,
) -> Vec<f64> {
    let n_params = class_count * dp1;
    let d = dp1 - 1;
    let mut h = vec![0.0; n_params * n_params];
    let mut p = vec![0.0; class_count];
    let mut xt = vec![0.0; dp1];
    for s in samples {
        logits_into(theta, s.x, dp1, &mut p);
        softmax_in_place(&mut p);
        xt[..d].copy_from_slice(s.x);
        xt[d] = 1.0;
        for a in 0..class_count {
            for b in 0..class_count {
                let block = s.weight * (p[a] * if a == b { 1.0 } else { 0.0 } - p[a] * p[b]);
                if block == 0.0 {
                    continue;
                }
                for j in 0..dp1 {
                    let row = (a * dp1 + j) * n_params + b * dp1;
                    let xj = block * xt[j];
                    for k in 0..dp1 {
                        h[row + k] += xj * xt[k];
                    }
                }
            }
        }
    }
    for i in 0..n_params {
        h[i * n_params + i] += lambda;
    }
    h
}

/// Mean cross-entropy over `indices` plus `(lambda/2) * ||theta||^2`.
pub fn loss(
    theta: &[f64],
    ds: &Dataset,
    indices: &[usize],
    overrides: Option<&LabelOverrides>,
    lambda: f64,
) -> Result<f64> {
    let dp1 = ds.feature_count() + 1;
    check_theta(theta, ds.class_count(), dp1)?;
    let samples = resolve_samples(ds, indices, overrides)?;
    Ok(weighted_loss(theta, ds.class_count(), dp1, &samples, lambda))
}

/// Exact gradient of [`loss`] with respect to `theta`.
pub fn gradient(
    theta: &[f64],
    ds: &Dataset,
    indices: &[usize],
    overrides: Option<&LabelOverrides>,
    lambda: f64,
) -> Result<Vec<f64>> {
    let dp1 = ds.feature_count() + 1;
    check_theta(theta, ds.class_count(), dp1)?;
    let samples = resolve_samples(ds, indices, overrides)?;
    Ok(weighted_gradient(
        theta,
        ds.class_count(),
        dp1,
        &samples,
        lambda,
    ))
}

/// Exact Hessian-vector product `H v` of [`loss`] at `theta`.
pub fn hvp(
    theta: &[f64],
    ds: &Dataset,
    indices: &[usize],
    lambda: f64,
    v: &[f64],
) -> Result<Vec<f64>> {
    let dp1 = ds.feature_count() + 1;
    check_theta(theta, ds.class_count(), dp1)?;
    if v.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            operation: "hvp",
            expected: theta.len(),
            got: v.len(),
        });
    }
    let samples = resolve_features(ds, indices)?;
    Ok(weighted_hvp(theta, ds.class_count(), dp1, &samples, lambda, v))
}

/// Default parameter-count cap for materializing dense Hessians.
pub const DEFAULT_DENSE_CAP: usize = 512;

/// Materialize the full Hessian as a flat row-major matrix. Small-scale
/// oracle; refuses when `C * (d+1)` exceeds `cap`.
pub fn dense_hessian(
    theta: &[f64],
    ds: &Dataset,
    indices: &[usize],
    lambda: f64,
    cap: usize,
) -> Result<Vec<f64>> {
    let dp1 = ds.feature_count() + 1;
    let n_params = ds.class_count() * dp1;
    if n_params > cap {
        return Err(Error::invalid(
            "dense_hessian",
            format!("parameter count {n_params} exceeds dense cap {cap}"),
        ));
    }
    check_theta(theta, ds.class_count(), dp1)?;
    let samples = resolve_features(ds, indices)?;
    Ok(weighted_dense_hessian(
        theta,
        ds.class_count(),
        dp1,
        &samples,
        lambda,
    ))
}

/// Minimize the weighted objective by Newton's method with matrix-free CG
/// inner solves and a backtracking line search.
pub(crate) fn minimize(
    samples: &[Sample<'_>],
    class_count: usize,
    dp1: usize,
    config: &TrainConfig,
    warm_start: Option<&[f64]>,
) -> Result<(Vec<f64>, bool, f64, usize)> {
    let n_params = class_count * dp1;
    let mut theta = match warm_start {
        Some(t) => {
            if t.len() != n_params {
                return Err(Error::DimensionMismatch {
                    operation: "train",
                    expected: n_params,
                    got: t.len(),
                });
            }
            t.to_vec()
        }
        None => vec![0.0; n_params],
    };

    let lambda = config.lambda;
    let cg_cap = 20 * n_params.max(10);
    // Extra Newton steps taken after the tolerance is first met. They push
    // the gradient to the floating-point floor so that runs from different
    // starts land on indistinguishable optima.
    let mut polish = 0usize;

    for iter in 0..config.max_iterations {
        let g = weighted_gradient(&theta, class_count, dp1, samples, lambda);
        let grad_norm = norm(&g);
        if !grad_norm.is_finite() {
            return Err(Error::NonConvergence {
                grad_norm,
                iterations: iter,
            });
        }
        if grad_norm <= config.grad_tol {
            if polish >= 2 || grad_norm <= 1e-13 {
                return Ok((theta, true, grad_norm, iter));
            }
            polish += 1;
        }

        // Inexact Newton: solve H p = -g with a forcing tolerance that
        // tightens as the gradient shrinks.
        let rhs: Vec<f64> = g.iter().map(|v| -v).collect();
        let forcing = grad_norm.sqrt().min(0.1).max(1e-12);
        let solve = cg_solve(
            |v| weighted_hvp(&theta, class_count, dp1, samples, lambda, v),
            &rhs,
            forcing,
            cg_cap,
        );
        let mut direction = solve.solution;
        let mut slope = dot(&g, &direction);
        if !(slope < 0.0) {
            // CG returned a non-descent direction (numerically degenerate);
            // fall back to steepest descent scaled by the strong-convexity
            // floor.
            direction = g.iter().map(|v| -v / lambda).collect();
            slope = dot(&g, &direction);
        }

        let f0 = weighted_loss(&theta, class_count, dp1, samples, lambda);
        let noise_floor = 1e-14 * (1.0 + f0.abs());
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut candidate = theta.clone();
            axpy(step, &direction, &mut candidate);
            let f1 = weighted_loss(&candidate, class_count, dp1, samples, lambda);
            if f1 <= f0 + 1e-4 * step * slope + noise_floor {
                theta = candidate;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No representable progress; report the current iterate.
            return Ok((theta, grad_norm <= config.grad_tol, grad_norm, iter));
        }
    }

    let g = weighted_gradient(&theta, class_count, dp1, samples, lambda);
    let grad_norm = norm(&g);
    Ok((
        theta,
        grad_norm <= config.grad_tol,
        grad_norm,
        config.max_iterations,
    ))
}

/// Train to the gradient-norm tolerance. Non-convergence is reported in the
/// returned model (`converged = false`), not as an error; callers decide.
pub fn train(
    ds: &Dataset,
    indices: &[usize],
    overrides: Option<&LabelOverrides>,
    config: &TrainConfig,
    warm_start: Option<&[f64]>,
) -> Result<FittedModel> {
    config.validate()?;
    let dp1 = ds.feature_count() + 1;
    let samples = resolve_samples(ds, indices, overrides)?;
    let (theta, converged, final_grad_norm, iterations) =
        minimize(&samples, ds.class_count(), dp1, config, warm_start)?;
    Ok(FittedModel {
        theta,
        class_count: ds.class_count(),
        feature_count: ds.feature_count(),
        config: *config,
        train_indices: indices.to_vec(),
        converged,
        final_grad_norm,
        iterations,
    })
}

/// Softmax class probabilities for one input.
pub fn predict_proba(model: &FittedModel, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != model.feature_count {
        return Err(Error::DimensionMismatch {
            operation: "predict_proba",
            expected: model.feature_count,
            got: x.len(),
        });
    }
    let dp1 = model.feature_count + 1;
    let mut p = vec![0.0; model.class_count];
    logits_into(&model.theta, x, dp1, &mut p);
    softmax_in_place(&mut p);
    Ok(p)
}

/// Argmax predicted class; ties break to the lowest class index.
pub fn predict(model: &FittedModel, x: &[f64]) -> Result<usize> {
    let p = predict_proba(model, x)?;
    Ok(argmax_lowest(&p))
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax prediction equals the dataset label.
pub fn accuracy(model: &FittedModel, ds: &Dataset, indices: &[usize]) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::invalid("accuracy", "index set must be nonempty"));
    }
    let mut correct = 0usize;
    for &i in indices {
        if predict(model, ds.row(i))? == ds.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Flat plain-text model record: `C d lambda` on the first line, then one
/// parameter per line. Values use shortest round-trip decimal formatting, so
/// save/load is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub class_count: usize,
    pub feature_count: usize,
    pub lambda: f64,
    pub theta: Vec<f64>,
}

impl Checkpoint {
    pub fn of(model: &FittedModel) -> Checkpoint {
        Checkpoint {
            class_count: model.class_count,
            feature_count: model.feature_count,
            lambda: model.config.lambda,
            theta: model.theta.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = format!("{} {} {}\n", self.class_count, self.feature_count, self.lambda);
        for v in &self.theta {
            writeln!(text, "{v}").expect("string write");
        }
        std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut tokens = text.split_whitespace();
        let bad = || Error::ingestion(&path.display().to_string(), None, None, "bad checkpoint");
        let class_count: usize = tokens.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let feature_count: usize = tokens.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let lambda: f64 = tokens.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let theta: Vec<f64> = tokens
            .map(|t| t.parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if theta.len() != class_count * (feature_count + 1) {
            return Err(bad());
        }
        Ok(Checkpoint {
            class_count,
            feature_count,
            lambda,
            theta,
        })
    }
}

/// Numeric gradient of a scalar function by central differences; shared
/// test oracle.
#[doc(hidden)]
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, at: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; at.len()];
    let mut probe = at.to_vec();
    for i in 0..at.len() {
        probe[i] = at[i] + h;
        let fp = f(&probe);
        probe[i] = at[i] - h;
        let fm = f(&probe);
        probe[i] = at[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

#[doc(hidden)]
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let mut diff = 0.0;
    for (x, y) in a.iter().zip(b) {
        diff += (x - y) * (x - y);
    }
    diff.sqrt() / norm(b).max(1e-300)
}
