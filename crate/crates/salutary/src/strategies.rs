//! Pool query strategies.
//!
//! Every strategy returns a [`QueryBatch`]: the selected pool indices with
//! scores, deterministic ranks, and the labels that will annotate them. Only
//! the salutary strategy self-annotates; every baseline queries ground truth
//! (influence-ranked baselines use pseudo-labels for ranking only). All tie
//! breaks resolve by ascending sample id.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::influence::{influence_matrix, InfluenceContext};
use crate::model::{self, argmax_lowest, FittedModel};

/// Strategy identifiers as they appear in configs and on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Entropy,
    Margin,
    LeastConfidence,
    Coreset,
    Badge,
    Isal,
    Salutary,
    SalutaryGt,
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::Random,
        Strategy::Entropy,
        Strategy::Margin,
        Strategy::LeastConfidence,
        Strategy::Coreset,
        Strategy::Badge,
        Strategy::Isal,
        Strategy::Salutary,
        Strategy::SalutaryGt,
    ];

    pub fn identifier(&self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
            Strategy::Margin => "margin",
            Strategy::LeastConfidence => "least_confidence",
            Strategy::Coreset => "coreset",
            Strategy::Badge => "badge",
            Strategy::Isal => "isal",
            Strategy::Salutary => "salutary",
            Strategy::SalutaryGt => "salutary_gt",
        }
    }

    pub fn parse(s: &str) -> Result<Strategy> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.identifier() == s)
            .ok_or_else(|| Error::config("strategy", format!("unknown strategy `{s}`")))
    }

    /// Whether the strategy needs an [`InfluenceContext`] each round.
    pub fn needs_influence(&self) -> bool {
        matches!(self, Strategy::Isal | Strategy::Salutary | Strategy::SalutaryGt)
    }

    /// Whether queried points are annotated by the strategy itself instead
    /// of with ground truth.
    pub fn self_annotating(&self) -> bool {
        matches!(self, Strategy::Salutary)
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.identifier())
    }
}

/// Label that will annotate a queried point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignedLabel {
    /// Query the dataset's ground truth.
    GroundTruth,
    /// Self-assigned salutary label.
    Salutary(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryEntry {
    pub index: usize,
    pub sample_id: u64,
    pub assigned: AssignedLabel,
    pub score: f64,
    /// 1-based rank, descending by score with ties by ascending sample id.
    pub rank: usize,
}

/// One round's selection: at most `budget` distinct pool points.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    pub entries: Vec<QueryEntry>,
    pub strategy: Strategy,
    pub round: usize,
}

impl QueryBatch {
    /// Canonical construction: order by `(score desc, sample_id asc)`, keep
    /// the top `budget`, assign ranks `1..`.
    pub fn from_scored(
        strategy: Strategy,
        round: usize,
        scored: Vec<(usize, u64, AssignedLabel, f64)>,
        budget: usize,
    ) -> QueryBatch {
        let mut scored = scored;
        scored.sort_by(|a, b| {
            b.3.partial_cmp(&a.3)
                .expect("scores must be finite")
                .then(a.1.cmp(&b.1))
        });
        scored.truncate(budget.min(scored.len()));
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(pos, (index, sample_id, assigned, score))| QueryEntry {
                index,
                sample_id,
                assigned,
                score,
                rank: pos + 1,
            })
            .collect();
        QueryBatch {
            entries,
            strategy,
            round,
        }
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }
}

fn check_query_args(pool: &[usize], budget: usize, operation: &'static str) -> Result<()> {
    if pool.is_empty() {
        return Err(Error::invalid(operation, "pool must be nonempty"));
    }
    if budget == 0 {
        return Err(Error::invalid(operation, "budget must be >= 1"));
    }
    Ok(())
}

/// Uniform draws without replacement. The score records draw order (first
/// drawn highest) so ranks reproduce the stream order.
pub fn random_query(
    ds: &Dataset,
    pool: &[usize],
    budget: usize,
    round: usize,
    rng: &mut ChaCha20Rng,
) -> Result<QueryBatch> {
    check_query_args(pool, budget, "random_query")?;
    let take = budget.min(pool.len());
    // Partial Fisher-Yates: only the first `take` positions are needed.
    let mut order: Vec<usize> = pool.to_vec();
    for i in 0..take {
        let j = rng.random_range(i..order.len());
        order.swap(i, j);
    }
    let scored = order[..take]
        .iter()
        .enumerate()
        .map(|(pos, &idx)| {
            (
                idx,
                ds.id(idx),
                AssignedLabel::GroundTruth,
                (take - pos) as f64,
            )
        })
        .collect();
    Ok(QueryBatch::from_scored(
        Strategy::Random,
        round,
        scored,
        budget,
    ))
}

fn scored_by(
    ds: &Dataset,
    pool: &[usize],
    mut score: impl FnMut(usize) -> Result<f64>,
) -> Result<Vec<(usize, u64, AssignedLabel, f64)>> {
    pool.iter()
        .map(|&idx| Ok((idx, ds.id(idx), AssignedLabel::GroundTruth, score(idx)?)))
        .collect()
}

/// Shannon entropy (natural log) of the predictive distribution; highest
/// entropy queried first.
pub fn entropy_query(
    model: &FittedModel,
    ds: &Dataset,
    pool: &[usize],
    budget: usize,
    round: usize,
) -> Result<QueryBatch> {
    check_query_args(pool, budget, "entropy_query")?;
    let scored = scored_by(ds, pool, |idx| {
        let p = model::predict_proba(model, ds.row(idx))?;
        Ok(p.iter()
            .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
            .sum())
    })?;
    Ok(QueryBatch::from_scored(
        Strategy::Entropy,
        round,
        scored,
        budget,
    ))
}

/// Negated gap between the two highest class probabilities; the smallest
/// margin ranks first.
pub fn margin_query(
    model: &FittedModel,
    ds: &Dataset,
    pool: &[usize],
    budget: usize,
    round: usize,
) -> Result<QueryBatch> {
    check_query_args(pool, budget, "margin_query")?;
    let scored = scored_by(ds, pool, |idx| {
        let p = model::predict_proba(model, ds.row(idx))?;
        let mut top = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for &v in &p {
            if v > top {
                second = top;
                top = v;
            } else if v > second {
                second = v;
            }
        }
        Ok(-(top - second))
    })?;
    Ok(QueryBatch::from_scored(
        Strategy::Margin,
        round,
        scored,
        budget,
    ))
}

/// Negated probability of the predicted class; least confident first.
pub fn least_confidence_query(
    model: &FittedModel,
    ds: &Dataset,
    pool: &[usize],
    budget: usize,
    round: usize,
) -> Result<QueryBatch> {
    check_query_args(pool, budget, "least_confidence_query")?;
    let scored = scored_by(ds, pool, |idx| {
        let p = model::predict_proba(model, ds.row(idx))?;
        Ok(-p.iter().copied().fold(f64::NEG_INFINITY, f64::max))
    })?;
    Ok(QueryBatch::from_scored(
        Strategy::LeastConfidence,
        round,
        scored,
        budget,
    ))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-center greedy over raw feature slices: repeatedly pick the point
/// farthest (Euclidean) from everything already covered. Returns positions
/// into `pool` with the covering distance at selection time.
pub fn k_center_greedy(
    labeled: &[&[f64]],
    pool: &[&[f64]],
    budget: usize,
) -> Vec<(usize, f64)> {
    let take = budget.min(pool.len());
    let mut min_sq: Vec<f64> = pool
        .iter()
        .map(|x| {
            labeled
                .iter()
                .map(|l| sq_dist(x, l))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut chosen: Vec<(usize, f64)> = Vec::with_capacity(take);
    let mut used = vec![false; pool.len()];
    for _ in 0..take {
        let mut best: Option<usize> = None;
        for (pos, &d) in min_sq.iter().enumerate() {
            if used[pos] {
                continue;
            }
            // Strict > keeps the earliest (lowest-id) position on ties.
            if best.is_none_or(|b| d > min_sq[b]) {
                best = Some(pos);
            }
        }
        let pick = best.expect("pool positions remain");
        used[pick] = true;
        chosen.push((pick, min_sq[pick].sqrt()));
        for (pos, m) in min_sq.iter_mut().enumerate() {
            if !used[pos] {
                *m = m.min(sq_dist(pool[pos], pool[pick]));
            }
        }
    }
    chosen
}

/// CoreSet selection (k-center greedy in feature space); labeled set must be
/// nonempty so every pool point has a covering distance.
pub fn coreset_query(
    ds: &Dataset,
    labeled: &[usize],
    pool: &[usize],
    budget: usize,
    round: usize,
) -> Result<QueryBatch> {
    check_query_args(pool, budget, "coreset_query")?;
    if labeled.is_empty() {
        return Err(Error::invalid("coreset_query", "labeled set must be nonempty"));
    }
    let labeled_rows: Vec<&[f64]> = labeled.iter().map(|&i| ds.row(i)).collect();
    let pool_rows: Vec<&[f64]> = pool.iter().map(|&i| ds.row(i)).collect();
    let scored = k_center_greedy(&labeled_rows, &pool_rows, budget)
        .into_iter()
        .map(|(pos, dist)| {
            let idx = pool[pos];
            (idx, ds.id(idx), AssignedLabel::GroundTruth, dist)
        })
        .collect();
    Ok(QueryBatch::from_scored(
        Strategy::Coreset,
        round,
        scored,
        budget,
    ))
}

/// BADGE gradient embedding: `(p - e_yhat) (x) x~` with `yhat = argmax p`,
/// the last-layer gradient under the model's own prediction.
pub fn gradient_embedding(model: &FittedModel, x: &[f64]) -> Result<Vec<f64>> {
    let p = model::predict_proba(model, x)?;
    let predicted = argmax_lowest(&p);
    let dp1 = model.feature_count + 1;
    let mut g = vec![0.0; model.class_count * dp1];
    for (c, &pc) in p.iter().enumerate() {
        let coef = pc - if c == predicted { 1.0 } else { 0.0 };
        let row = &mut g[c * dp1..(c + 1) * dp1];
        for (j, &xj) in x.iter().enumerate() {
            row[j] = coef * xj;
        }
        row[dp1 - 1] = coef;
    }
    Ok(g)
}

/// BADGE: k-means++ seeding over gradient embeddings. The first pick is
/// sampled with probability proportional to squared embedding norm (the
/// distance-to-set recurrence initialized at the origin), each later pick
/// proportional to squared distance to the nearest selected embedding.
pub fn badge_query(
    model: &FittedModel,
    ds: &Dataset,
    pool: &[usize],
    budget: usize,
    round: usize,
    rng: &mut ChaCha20Rng,
) -> Result<QueryBatch> {
    check_query_args(pool, budget, "badge_query")?;
    let take = budget.min(pool.len());
    let embeddings: Vec<Vec<f64>> = pool
        .iter()
        .map(|&i| gradient_embedding(model, ds.row(i)))
        .collect::<Result<_>>()?;
    let mut weight: Vec<f64> = embeddings.iter().map(|g| g.iter().map(|v| v * v).sum()).collect();
    let mut used = vec![false; pool.len()];
    let mut picks: Vec<(usize, f64)> = Vec::with_capacity(take);

    for _ in 0..take {
        let total: f64 = weight
            .iter()
            .enumerate()
            .filter(|(pos, _)| !used[*pos])
            .map(|(_, w)| w)
            .sum();
        let pick = if total > 0.0 {
            let draw = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = None;
            for (pos, &w) in weight.iter().enumerate() {
                if used[pos] {
                    continue;
                }
                acc += w;
                if draw < acc {
                    chosen = Some(pos);
                    break;
                }
            }
            // Guard against trailing float accumulation error.
            chosen.unwrap_or_else(|| {
                weight
                    .iter()
                    .enumerate()
                    .rev()
                    .find(|(pos, _)| !used[*pos])
                    .map(|(pos, _)| pos)
                    .expect("unused position remains")
            })
        } else {
            // All remaining mass is zero (duplicate or one-hot embeddings);
            // fall back to the lowest-id unused point.
            used.iter().position(|u| !u).expect("unused position remains")
        };
        used[pick] = true;
        picks.push((pick, weight[pick]));
        for (pos, w) in weight.iter_mut().enumerate() {
            if !used[pos] {
                *w = w.min(sq_dist(&embeddings[pos], &embeddings[pick]));
            }
        }
    }

    let scored = picks
        .into_iter()
        .map(|(pos, w)| {
            let idx = pool[pos];
            (idx, ds.id(idx), AssignedLabel::GroundTruth, w)
        })
        .collect();
    Ok(QueryBatch::from_scored(
        Strategy::Badge,
        round,
        scored,
        budget,
    ))
}

/// ISAL baseline: rank by influence under the model's pseudo-label, but
/// annotate with ground truth (the baseline still queries a human).
pub fn isal_query(
    ctx: &InfluenceContext,
    ds: &Dataset,
    pool: &[usize],
    budget: usize,
    round: usize,
    n_train: usize,
) -> Result<QueryBatch> {
    check_query_args(pool, budget, "isal_query")?;
    let mut scores = Vec::new();
    let scored = pool
        .iter()
        .map(|&idx| {
            let p = model::predict_proba(&ctx.model, ds.row(idx))?;
            let pseudo = argmax_lowest(&p);
            ctx.scores_for(ds.row(idx), n_train, &mut scores)?;
            Ok((idx, ds.id(idx), AssignedLabel::GroundTruth, scores[pseudo]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QueryBatch::from_scored(Strategy::Isal, round, scored, budget))
}

/// Salutary selection: per-point score is the maximum influence over all
/// candidate labels. With `use_ground_truth_labels` the SAME points are
/// selected but annotated with ground truth instead of the salutary labels.
pub fn salutary_query(
    ctx: &InfluenceContext,
    ds: &Dataset,
    pool: &[usize],
    budget: usize,
    round: usize,
    n_train: usize,
    use_ground_truth_labels: bool,
) -> Result<QueryBatch> {
    check_query_args(pool, budget, "salutary_query")?;
    let matrix = influence_matrix(ctx, ds, pool, n_train)?;
    let strategy = if use_ground_truth_labels {
        Strategy::SalutaryGt
    } else {
        Strategy::Salutary
    };
    let scored = pool
        .iter()
        .enumerate()
        .map(|(pos, &idx)| {
            let (label, score) = matrix.best(pos);
            let assigned = if use_ground_truth_labels {
                AssignedLabel::GroundTruth
            } else {
                AssignedLabel::Salutary(label)
            };
            (idx, ds.id(idx), assigned, score)
        })
        .collect();
    Ok(QueryBatch::from_scored(strategy, round, scored, budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{split, synthetic_blobs, Dataset, LabelOverrides};
    use crate::influence::{build_context, salutary_label, CgConfig};
    use crate::model::{train, TrainConfig};
    use crate::rng::derive;

    fn confident_model() -> FittedModel {
        // C=2, d=1; huge weights saturate the softmax away from x = 0.
        FittedModel {
            theta: vec![500.0, 0.0, -500.0, 0.0],
            class_count: 2,
            feature_count: 1,
            config: TrainConfig::default(),
            train_indices: vec![],
            converged: true,
            final_grad_norm: 0.0,
            iterations: 0,
        }
    }

    fn line_dataset(xs: &[f64]) -> Dataset {
        let labels: Vec<usize> = xs.iter().map(|x| usize::from(*x > 0.0)).collect();
        let mut labels = labels;
        // Ensure both classes appear.
        if labels.iter().all(|&l| l == labels[0]) {
            labels[0] = 1 - labels[0];
        }
        Dataset::from_parts(xs.to_vec(), 1, labels, 2, None, None).unwrap()
    }

    fn fitted(seed: u64, c: usize, d: usize) -> (Dataset, FittedModel, Vec<usize>, Vec<usize>) {
        let ds = synthetic_blobs(30, c, d, 1.5, seed).unwrap();
        let s = split(&ds, (0.6, 0.2, 0.2), seed).unwrap();
        let model = train(&ds, &s.train, None, &TrainConfig::default(), None).unwrap();
        (ds, model, s.train, s.validation)
    }

    #[test]
    fn query_batches_satisfy_shape_invariants() {
        let (ds, model, train_idx, val) = fitted(60, 3, 3);
        let pool: Vec<usize> = train_idx.iter().copied().take(20).collect();
        let labeled: Vec<usize> = train_idx.iter().copied().skip(20).take(10).collect();
        let ctx = build_context(
            &model,
            &ds,
            &train_idx,
            &LabelOverrides::new(),
            &val,
            &CgConfig::for_param_count(model.param_count()),
        )
        .unwrap();
        let n = train_idx.len();
        let batches = vec![
            random_query(&ds, &pool, 7, 1, &mut derive(1, "q")).unwrap(),
            entropy_query(&model, &ds, &pool, 7, 1).unwrap(),
            margin_query(&model, &ds, &pool, 7, 1).unwrap(),
            least_confidence_query(&model, &ds, &pool, 7, 1).unwrap(),
            coreset_query(&ds, &labeled, &pool, 7, 1).unwrap(),
            badge_query(&model, &ds, &pool, 7, 1, &mut derive(2, "q")).unwrap(),
            isal_query(&ctx, &ds, &pool, 7, 1, n).unwrap(),
            salutary_query(&ctx, &ds, &pool, 7, 1, n, false).unwrap(),
            salutary_query(&ctx, &ds, &pool, 7, 1, n, true).unwrap(),
        ];
        for batch in batches {
            assert_eq!(batch.entries.len(), 7, "{}", batch.strategy);
            let mut seen = std::collections::BTreeSet::new();
            for (pos, e) in batch.entries.iter().enumerate() {
                assert!(pool.contains(&e.index));
                assert!(seen.insert(e.index), "duplicate in {}", batch.strategy);
                assert_eq!(e.rank, pos + 1);
                if pos > 0 {
                    let prev = &batch.entries[pos - 1];
                    assert!(
                        prev.score > e.score
                            || (prev.score == e.score && prev.sample_id < e.sample_id),
                        "rank order violated in {}",
                        batch.strategy
                    );
                }
            }
        }
    }

    #[test]
    fn random_query_exhausts_pool_and_repeats() {
        let ds = synthetic_blobs(5, 2, 2, 3.0, 1).unwrap();
        let pool: Vec<usize> = (0..10).collect();
        let all = random_query(&ds, &pool, 10, 0, &mut derive(3, "q")).unwrap();
        let mut got = all.indices();
        got.sort_unstable();
        assert_eq!(got, pool);

        let a = random_query(&ds, &pool, 4, 2, &mut derive(9, "query:2")).unwrap();
        let b = random_query(&ds, &pool, 4, 2, &mut derive(9, "query:2")).unwrap();
        assert_eq!(a, b);
        assert!(random_query(&ds, &[], 4, 0, &mut derive(9, "q")).is_err());
    }

    #[test]
    fn random_query_is_uniform_within_three_sigma() {
        let ds = synthetic_blobs(10, 2, 2, 3.0, 2).unwrap();
        let pool: Vec<usize> = (0..20).collect();
        let budget = 5;
        let reps = 10_000;
        let mut counts = vec![0usize; pool.len()];
        for i in 0..reps {
            let batch =
                random_query(&ds, &pool, budget, 0, &mut derive(7777, &format!("mc:{i}")))
                    .unwrap();
            for e in batch.entries {
                counts[e.index] += 1;
            }
        }
        let p = budget as f64 / pool.len() as f64;
        let expected = reps as f64 * p;
        let sigma = (reps as f64 * p * (1.0 - p)).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() <= 3.0 * sigma,
                "point {i}: {c} vs {expected} (sigma {sigma})"
            );
        }
    }

    #[test]
    fn entropy_extremes_and_brute_force_agreement() {
        let model = confident_model();
        // x = 0 is maximally uncertain; x = 1 is one-hot.
        let ds = line_dataset(&[0.0, 1.0, 0.4, -0.2]);
        let pool = vec![0, 1, 2, 3];
        let batch = entropy_query(&model, &ds, &pool, 4, 0).unwrap();
        assert_eq!(batch.entries[0].index, 0);
        assert!((batch.entries[0].score - 2f64.ln()).abs() < 1e-12);
        assert_eq!(batch.entries[3].index, 1);
        assert!(batch.entries[3].score.abs() < 1e-12);

        for e in &batch.entries {
            let p = model::predict_proba(&model, ds.row(e.index)).unwrap();
            let brute: f64 = p
                .iter()
                .filter(|v| **v > 0.0)
                .map(|v| -v * v.ln())
                .sum();
            assert!((e.score - brute).abs() < 1e-15);
        }
    }

    #[test]
    fn margin_extremes() {
        let model = confident_model();
        let ds = line_dataset(&[0.0, 1.0, 0.002]);
        let batch = margin_query(&model, &ds, &[0, 1, 2], 3, 0).unwrap();
        assert_eq!(batch.entries[0].index, 0);
        assert!(batch.entries[0].score.abs() < 1e-12); // margin 0 ranks first
        assert_eq!(batch.entries[2].index, 1);
        assert!((batch.entries[2].score + 1.0).abs() < 1e-12); // one-hot margin 1
    }

    #[test]
    fn least_confidence_extremes() {
        let model = confident_model();
        let ds = line_dataset(&[0.0, 1.0]);
        let batch = least_confidence_query(&model, &ds, &[0, 1], 2, 0).unwrap();
        assert_eq!(batch.entries[0].index, 0);
        assert!((batch.entries[0].score + 0.5).abs() < 1e-12);
        assert_eq!(batch.entries[1].index, 1);
    }

    #[test]
    fn binary_uncertainty_strategies_coincide() {
        for seed in 0..5 {
            let (ds, model, train_idx, _) = fitted(70 + seed, 2, 3);
            let pool: Vec<usize> = train_idx.iter().copied().take(25).collect();
            let e = entropy_query(&model, &ds, &pool, 10, 0).unwrap();
            let m = margin_query(&model, &ds, &pool, 10, 0).unwrap();
            let l = least_confidence_query(&model, &ds, &pool, 10, 0).unwrap();
            let ids = |b: &QueryBatch| b.entries.iter().map(|x| x.sample_id).collect::<Vec<_>>();
            assert_eq!(ids(&e), ids(&m), "seed {seed}");
            assert_eq!(ids(&e), ids(&l), "seed {seed}");
        }
    }

    #[test]
    fn coreset_hand_executed_example() {
        // Labeled point at 0; pool at 1, 2, 10. Greedy picks 10 (distance
        // 10), then 2 (remaining min-distances are 1 and 2).
        let ds =
            Dataset::from_parts(vec![0.0, 1.0, 2.0, 10.0], 1, vec![0, 1, 0, 1], 2, None, None)
                .unwrap();
        let batch = coreset_query(&ds, &[0], &[1, 2, 3], 2, 0).unwrap();
        assert_eq!(batch.indices(), vec![3, 2]);
        assert_eq!(batch.entries[0].score, 10.0);
        assert_eq!(batch.entries[1].score, 2.0);
    }

    #[test]
    fn coreset_greedy_max_property_and_radius_shrinks() {
        let (ds, _, train_idx, _) = fitted(61, 2, 4);
        let labeled: Vec<usize> = train_idx.iter().copied().take(5).collect();
        let pool: Vec<usize> = train_idx.iter().copied().skip(5).take(20).collect();
        let labeled_rows: Vec<&[f64]> = labeled.iter().map(|&i| ds.row(i)).collect();
        let pool_rows: Vec<&[f64]> = pool.iter().map(|&i| ds.row(i)).collect();
        let picks = k_center_greedy(&labeled_rows, &pool_rows, 6);

        // Each covering distance is the max over the then-remaining pool,
        // so the sequence is non-increasing (radius never grows).
        for w in picks.windows(2) {
            assert!(w[0].1 >= w[1].1);
        }

        // Recompute the first pick's min-distance by brute force.
        let brute: Vec<f64> = pool_rows
            .iter()
            .map(|x| {
                labeled_rows
                    .iter()
                    .map(|l| sq_dist(x, l).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let max = brute.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((picks[0].1 - max).abs() < 1e-12);
    }

    #[test]
    fn badge_embedding_matches_hand_arithmetic() {
        // C=2, d=1, theta rows (1, 0) and (-1, 0), x = 2 -> z = (2, -2),
        // p = softmax, yhat = 0, embedding = (p0 - 1, p1) (x) (x, 1).
        let model = FittedModel {
            theta: vec![1.0, 0.0, -1.0, 0.0],
            class_count: 2,
            feature_count: 1,
            config: TrainConfig::default(),
            train_indices: vec![],
            converged: true,
            final_grad_norm: 0.0,
            iterations: 0,
        };
        let g = gradient_embedding(&model, &[2.0]).unwrap();
        let p0 = (2f64).exp() / ((2f64).exp() + (-2f64).exp());
        let p1 = 1.0 - p0;
        let expected = [(p0 - 1.0) * 2.0, p0 - 1.0, p1 * 2.0, p1];
        for (a, b) in g.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn badge_never_seeds_zero_embeddings_while_nonzero_remain() {
        let model = confident_model();
        // x = 1.0 saturates to an exactly one-hot prediction -> zero embedding.
        let ds = line_dataset(&[0.0, 1.0, 0.003, -0.002, 0.001]);
        let zero_emb = gradient_embedding(&model, &[1.0]).unwrap();
        assert!(zero_emb.iter().all(|v| *v == 0.0));
        let pool = vec![0, 1, 2, 3, 4];
        for seed in 0..50 {
            let batch =
                badge_query(&model, &ds, &pool, 4, 0, &mut derive(seed, "badge")).unwrap();
            assert!(
                !batch.indices().contains(&1),
                "zero embedding seeded at seed {seed}"
            );
        }
        // Exhausting the pool must still include it, via the deterministic
        // zero-mass fallback.
        let batch = badge_query(&model, &ds, &pool, 5, 0, &mut derive(0, "badge")).unwrap();
        assert!(batch.indices().contains(&1));
    }

    #[test]
    fn badge_first_pick_proportional_to_squared_norm() {
        let model = FittedModel {
            theta: vec![0.0; 4],
            class_count: 2,
            feature_count: 1,
            config: TrainConfig::default(),
            train_indices: vec![],
            converged: true,
            final_grad_norm: 0.0,
            iterations: 0,
        };
        // Uniform predictions: embedding norm^2 = 0.5 (x^2 + 1). One point
        // carries ~99.8% of the total squared norm.
        let ds = line_dataset(&[99.0, 0.5, -0.3, 0.2, 0.1, -0.4, 0.3, -0.1, 0.25, 0.15]);
        let pool: Vec<usize> = (0..10).collect();
        let mut big = 0;
        let reps = 10_000;
        for i in 0..reps {
            let batch =
                badge_query(&model, &ds, &pool, 1, 0, &mut derive(31, &format!("b:{i}"))).unwrap();
            if batch.entries[0].index == 0 {
                big += 1;
            }
        }
        assert!(big >= reps * 95 / 100, "heavy point picked {big}/{reps}");
    }

    #[test]
    fn isal_uses_pseudo_labels_and_inherits_zero_scores() {
        let (ds, model, train_idx, val) = fitted(62, 3, 3);
        let pool: Vec<usize> = train_idx.iter().copied().take(15).collect();
        let ctx = build_context(
            &model,
            &ds,
            &train_idx,
            &LabelOverrides::new(),
            &val,
            &CgConfig::for_param_count(model.param_count()),
        )
        .unwrap();
        let n = train_idx.len();
        let batch = isal_query(&ctx, &ds, &pool, pool.len(), 0, n).unwrap();
        for e in &batch.entries {
            let p = model::predict_proba(&model, ds.row(e.index)).unwrap();
            let pseudo = argmax_lowest(&p);
            let expected =
                crate::influence::influence_score(&ctx, ds.row(e.index), pseudo, n).unwrap();
            assert_eq!(e.score, expected);
            assert_eq!(e.assigned, AssignedLabel::GroundTruth);
        }

        // Zero validation gradient -> all scores zero, inherited by ISAL.
        let zero_ctx = InfluenceContext {
            ihvp: vec![0.0; ctx.ihvp.len()],
            ..ctx.clone()
        };
        let z = isal_query(&zero_ctx, &ds, &pool, 5, 0, n).unwrap();
        assert!(z.entries.iter().all(|e| e.score == 0.0));
    }

    #[test]
    fn isal_matches_salutary_where_pseudo_label_is_salutary() {
        let (ds, model, train_idx, val) = fitted(63, 2, 2);
        let pool: Vec<usize> = train_idx.iter().copied().take(20).collect();
        let ctx = build_context(
            &model,
            &ds,
            &train_idx,
            &LabelOverrides::new(),
            &val,
            &CgConfig::for_param_count(model.param_count()),
        )
        .unwrap();
        let n = train_idx.len();
        let isal = isal_query(&ctx, &ds, &pool, pool.len(), 0, n).unwrap();
        let sal = salutary_query(&ctx, &ds, &pool, pool.len(), 0, n, false).unwrap();
        let sal_score: std::collections::BTreeMap<usize, f64> =
            sal.entries.iter().map(|e| (e.index, e.score)).collect();
        for e in &isal.entries {
            let p = model::predict_proba(&model, ds.row(e.index)).unwrap();
            let pseudo = argmax_lowest(&p);
            let (sal_label, _) = salutary_label(&ctx, ds.row(e.index), n).unwrap();
            if pseudo == sal_label {
                assert_eq!(e.score, sal_score[&e.index]);
            }
        }
    }

    #[test]
    fn salutary_selection_is_annotation_independent() {
        let (ds, model, train_idx, val) = fitted(64, 3, 2);
        let pool: Vec<usize> = train_idx.iter().copied().take(30).collect();
        let ctx = build_context(
            &model,
            &ds,
            &train_idx,
            &LabelOverrides::new(),
            &val,
            &CgConfig::for_param_count(model.param_count()),
        )
        .unwrap();
        let n = train_idx.len();
        let with_sl = salutary_query(&ctx, &ds, &pool, 8, 0, n, false).unwrap();
        let with_gt = salutary_query(&ctx, &ds, &pool, 8, 0, n, true).unwrap();
        assert_eq!(with_sl.indices(), with_gt.indices());
        assert!(with_gt
            .entries
            .iter()
            .all(|e| e.assigned == AssignedLabel::GroundTruth));

        // Every assigned salutary label dominates all alternatives.
        for e in &with_sl.entries {
            let AssignedLabel::Salutary(label) = e.assigned else {
                panic!("salutary batch must self-annotate");
            };
            let mut scores = Vec::new();
            ctx.scores_for(ds.row(e.index), n, &mut scores).unwrap();
            for s in &scores {
                assert!(scores[label] >= *s);
            }
            // Dominance over the ground-truth label specifically.
            assert!(scores[label] >= scores[ds.label(e.index)]);
        }
    }

    #[test]
    fn monotone_transforms_preserve_membership_and_ranks() {
        let scored: Vec<(usize, u64, AssignedLabel, f64)> = vec![
            (4, 4, AssignedLabel::GroundTruth, 0.25),
            (9, 9, AssignedLabel::GroundTruth, -1.5),
            (2, 2, AssignedLabel::GroundTruth, 0.25),
            (7, 7, AssignedLabel::GroundTruth, 3.0),
            (1, 1, AssignedLabel::GroundTruth, -0.75),
        ];
        let base = QueryBatch::from_scored(Strategy::Entropy, 0, scored.clone(), 3);
        for transform in [|v: f64| 3.0 * v + 10.0, |v: f64| v.atan(), |v: f64| v.exp()] {
            let mapped: Vec<_> = scored
                .iter()
                .map(|&(i, id, a, s)| (i, id, a, transform(s)))
                .collect();
            let out = QueryBatch::from_scored(Strategy::Entropy, 0, mapped, 3);
            assert_eq!(base.indices(), out.indices());
            let ranks: Vec<usize> = out.entries.iter().map(|e| e.rank).collect();
            assert_eq!(ranks, vec![1, 2, 3]);
        }
        // Tie at 0.25 resolved by ascending id: index 2 before index 4.
        assert_eq!(base.indices(), vec![7, 2, 4]);
    }
}
