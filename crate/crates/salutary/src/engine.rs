//! Experiment protocols: the active-learning loop, unbounded-budget runs,
//! influence-sorted bin analyses, the add-one-in fidelity study, and
//! disagreement accounting.
//!
//! Each seed's run is an isolated sequential state machine; seeds may
//! execute concurrently (workers > 1) because every random draw comes from a
//! stream derived from `(seed, purpose)`, never from shared state.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, LabelOverrides, PoolState, SplitIndices};
use crate::error::{Error, Result};
use crate::influence::{
    add_one_in_actual, build_context, influence_matrix, influence_score, CgConfig,
    InfluenceContext,
};
use crate::model::{self, FittedModel, TrainConfig};
use crate::rng;
use crate::strategies::{self, AssignedLabel, QueryBatch, Strategy};

fn default_true() -> bool {
    true
}

/// Where the experiment's rows come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Tabular CSV with one integer label column.
    Csv {
        path: PathBuf,
        label_column: String,
        #[serde(default = "default_true")]
        has_header: bool,
    },
    /// Seeded Gaussian blobs, optionally with uniform label noise.
    Synthetic {
        n_per_class: usize,
        classes: usize,
        dims: usize,
        separation: f64,
        seed: u64,
        #[serde(default)]
        label_noise: f64,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveLearningConfig {
    /// Initial labeled set size drawn from the train split.
    pub n_init: usize,
    /// Active rounds R.
    pub rounds: usize,
    /// Query budget b per round.
    pub budget: usize,
    pub strategies: Vec<Strategy>,
    /// Master seeds; one full run per seed.
    pub seeds: Vec<u64>,
    /// Warm-start each round's retraining from the previous parameters.
    pub warm_start: bool,
    /// Standardize features with statistics frozen on the initial labeled set.
    pub standardize: bool,
}

impl Default for ActiveLearningConfig {
    fn default() -> Self {
        ActiveLearningConfig {
            n_init: 300,
            rounds: 10,
            budget: 10,
            strategies: vec![Strategy::Salutary],
            seeds: vec![0, 1, 2, 3, 4],
            warm_start: false,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CgOptions {
    pub residual_tol: f64,
    /// CG iteration budget; omitted means `10 * parameter count`.
    pub max_iterations: Option<usize>,
    /// Largest parameter count for which dense-Hessian oracles may be built.
    pub dense_cap: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            residual_tol: 1e-8,
            max_iterations: None,
            dense_cap: model::DEFAULT_DENSE_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnboundedConfig {
    /// Fraction of the initial pool the unbounded protocol may consume.
    pub pool_fraction: f64,
}

impl Default for UnboundedConfig {
    fn default() -> Self {
        UnboundedConfig { pool_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub workers: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("runs"),
            workers: 1,
        }
    }
}

/// Full experiment configuration; mirrors the config file field-for-field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub al: ActiveLearningConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cg: CgOptions,
    #[serde(default)]
    pub unbounded: UnboundedConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Minimal valid configuration around a dataset spec; used by tests.
    pub fn for_dataset(dataset: DatasetSpec) -> ExperimentConfig {
        ExperimentConfig {
            dataset,
            split: SplitConfig::default(),
            al: ActiveLearningConfig::default(),
            train: TrainConfig::default(),
            cg: CgOptions::default(),
            unbounded: UnboundedConfig::default(),
            output: OutputConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.dataset {
            DatasetSpec::Csv { path, label_column, .. } => {
                if !path.exists() {
                    return Err(Error::config(
                        "dataset.path",
                        format!("file not found: {}", path.display()),
                    ));
                }
                if label_column.is_empty() {
                    return Err(Error::config("dataset.label_column", "must be nonempty"));
                }
            }
            DatasetSpec::Synthetic {
                n_per_class,
                classes,
                dims,
                separation,
                label_noise,
                ..
            } => {
                if *n_per_class == 0 || *dims == 0 || !(*separation > 0.0) {
                    return Err(Error::config(
                        "dataset",
                        "n_per_class, dims, and separation must be positive",
                    ));
                }
                if *classes < 2 {
                    return Err(Error::config("dataset.classes", "must be >= 2"));
                }
                if !(0.0..=1.0).contains(label_noise) {
                    return Err(Error::config("dataset.label_noise", "must be in [0, 1]"));
                }
            }
        }
        let f = (self.split.train, self.split.validation, self.split.test);
        if !(f.0 > 0.0 && f.1 > 0.0 && f.2 > 0.0) || (f.0 + f.1 + f.2 - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "split",
                "fractions must be positive and sum to 1",
            ));
        }
        if self.al.n_init == 0 {
            return Err(Error::config("al.n_init", "must be >= 1"));
        }
        if self.al.budget == 0 {
            return Err(Error::config("al.budget", "must be >= 1"));
        }
        if self.al.seeds.is_empty() {
            return Err(Error::config("al.seeds", "must list at least one seed"));
        }
        if self.al.strategies.is_empty() {
            return Err(Error::config("al.strategies", "must list at least one strategy"));
        }
        self.train.validate()?;
        if !(self.cg.residual_tol > 0.0) {
            return Err(Error::config("cg.residual_tol", "must be > 0"));
        }
        if self.cg.max_iterations == Some(0) {
            return Err(Error::config("cg.max_iterations", "must be >= 1 when set"));
        }
        if !(self.unbounded.pool_fraction > 0.0 && self.unbounded.pool_fraction <= 1.0) {
            return Err(Error::config("unbounded.pool_fraction", "must be in (0, 1]"));
        }
        if self.output.workers == 0 {
            return Err(Error::config("output.workers", "must be >= 1"));
        }
        Ok(())
    }

    pub fn fractions(&self) -> (f64, f64, f64) {
        (self.split.train, self.split.validation, self.split.test)
    }

    pub fn cg_config(&self, param_count: usize) -> CgConfig {
        CgConfig {
            residual_tol: self.cg.residual_tol,
            max_iterations: self
                .cg
                .max_iterations
                .unwrap_or_else(|| 10 * param_count.max(1)),
        }
    }
}

/// Materialize the configured dataset.
pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    match spec {
        DatasetSpec::Csv {
            path,
            label_column,
            has_header,
        } => data::load_csv(path, label_column, *has_header),
        DatasetSpec::Synthetic {
            n_per_class,
            classes,
            dims,
            separation,
            seed,
            label_noise,
        } => {
            let ds = data::synthetic_blobs(*n_per_class, *classes, *dims, *separation, *seed)?;
            if *label_noise > 0.0 {
                let all: Vec<usize> = (0..ds.len()).collect();
                data::flip_labels(&ds, &all, *label_noise, seed.wrapping_add(1))
            } else {
                Ok(ds)
            }
        }
    }
}

/// One active-learning round's bookkeeping.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    pub labeled_size: usize,
    pub pool_size: usize,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    /// None for round 0 (initial model, nothing queried).
    pub queried: Option<QueryBatch>,
    /// Queried points whose assigned label differs from ground truth.
    pub disagreements: usize,
    pub wall_time_secs: f64,
}

/// One seed's trajectory; `failure` carries the diagnostic when a training
/// or solver error aborted the seed.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    pub failure: Option<String>,
}

impl SeedRun {
    pub fn final_test_accuracy(&self) -> Option<f64> {
        if self.failure.is_some() {
            return None;
        }
        self.records.last().map(|r| r.test_accuracy)
    }
}

/// All seeds of one strategy plus summary statistics.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub strategy: Strategy,
    pub runs: Vec<SeedRun>,
    pub mean_final_test_accuracy: f64,
    /// Population standard deviation across seeds.
    pub std_final_test_accuracy: f64,
    pub total_disagreements: usize,
}

impl ExperimentResult {
    fn from_runs(strategy: Strategy, runs: Vec<SeedRun>) -> ExperimentResult {
        let finals: Vec<f64> = runs.iter().filter_map(SeedRun::final_test_accuracy).collect();
        let (mean, std) = mean_std(&finals);
        let total = runs
            .iter()
            .flat_map(|r| r.records.iter())
            .map(|rec| rec.disagreements)
            .sum();
        ExperimentResult {
            strategy,
            runs,
            mean_final_test_accuracy: mean,
            std_final_test_accuracy: std,
            total_disagreements: total,
        }
    }

    pub fn any_failure(&self) -> bool {
        self.runs.iter().any(|r| r.failure.is_some())
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Total queried points whose assigned label differs from ground truth.
pub fn count_disagreements(result: &ExperimentResult) -> usize {
    result
        .runs
        .iter()
        .flat_map(|r| r.records.iter())
        .map(|rec| rec.disagreements)
        .sum()
}

fn ensure_converged(m: &FittedModel) -> Result<()> {
    if !m.converged {
        return Err(Error::NonConvergence {
            grad_norm: m.final_grad_norm,
            iterations: m.iterations,
        });
    }
    Ok(())
}

/// Shared per-seed setup: split, initial pool, frozen standardization, and
/// the initial model.
struct RunSetup {
    work_ds: Dataset,
    splits: SplitIndices,
    state: PoolState,
    model: FittedModel,
}

fn prepare_run(ds: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<RunSetup> {
    let splits = data::split(ds, cfg.fractions(), cfg.split.seed)?;
    let state = data::init_pool_split(&splits.train, cfg.al.n_init, seed)?;
    let work_ds = if cfg.al.standardize {
        data::standardize(ds, &state.labeled_vec())?.0
    } else {
        ds.clone()
    };
    let labeled = state.labeled_vec();
    let model = model::train(&work_ds, &labeled, Some(&state.assigned_labels), &cfg.train, None)?;
    ensure_converged(&model)?;
    Ok(RunSetup {
        work_ds,
        splits,
        state,
        model,
    })
}

fn record_round(
    round: usize,
    setup_model: &FittedModel,
    work_ds: &Dataset,
    splits: &SplitIndices,
    state: &PoolState,
    queried: Option<QueryBatch>,
    disagreements: usize,
    started: Instant,
) -> Result<RoundRecord> {
    Ok(RoundRecord {
        round,
        labeled_size: state.labeled.len(),
        pool_size: state.pool.len(),
        validation_accuracy: model::accuracy(setup_model, work_ds, &splits.validation)?,
        test_accuracy: model::accuracy(setup_model, work_ds, &splits.test)?,
        queried,
        disagreements,
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

fn query_round(
    strategy: Strategy,
    cfg: &ExperimentConfig,
    work_ds: &Dataset,
    splits: &SplitIndices,
    state: &PoolState,
    model: &FittedModel,
    round: usize,
    seed: u64,
) -> Result<QueryBatch> {
    let pool = state.pool_vec();
    let labeled = state.labeled_vec();
    let budget = cfg.al.budget;
    let n_train = labeled.len();
    let context = if strategy.needs_influence() {
        Some(build_context(
            model,
            work_ds,
            &labeled,
            &state.assigned_labels,
            &splits.validation,
            &cfg.cg_config(model.param_count()),
        )?)
    } else {
        None
    };
    match strategy {
        Strategy::Random => strategies::random_query(
            work_ds,
            &pool,
            budget,
            round,
            &mut rng::derive(seed, &format!("query:{round}")),
        ),
        Strategy::Entropy => strategies::entropy_query(model, work_ds, &pool, budget, round),
        Strategy::Margin => strategies::margin_query(model, work_ds, &pool, budget, round),
        Strategy::LeastConfidence => {
            strategies::least_confidence_query(model, work_ds, &pool, budget, round)
        }
        Strategy::Coreset => strategies::coreset_query(work_ds, &labeled, &pool, budget, round),
        Strategy::Badge => strategies::badge_query(
            model,
            work_ds,
            &pool,
            budget,
            round,
            &mut rng::derive(seed, &format!("badge:{round}")),
        ),
        Strategy::Isal => {
            strategies::isal_query(&context.unwrap(), work_ds, &pool, budget, round, n_train)
        }
        Strategy::Salutary => strategies::salutary_query(
            &context.unwrap(),
            work_ds,
            &pool,
            budget,
            round,
            n_train,
            false,
        ),
        Strategy::SalutaryGt => strategies::salutary_query(
            &context.unwrap(),
            work_ds,
            &pool,
            budget,
            round,
            n_train,
            true,
        ),
    }
}

fn apply_batch(state: &mut PoolState, work_ds: &Dataset, batch: &QueryBatch) -> Result<usize> {
    let mut disagreements = 0;
    for entry in &batch.entries {
        let assigned = match entry.assigned {
            AssignedLabel::GroundTruth => None,
            AssignedLabel::Salutary(label) => {
                // Ground truth is read here only to COUNT disagreements; the
                // training objective sees the override.
                if label != work_ds.label(entry.index) {
                    disagreements += 1;
                }
                Some(label)
            }
        };
        state.acquire(entry.index, assigned)?;
    }
    Ok(disagreements)
}

/// Run one strategy for one seed: Algorithm-style loop of query, annotate,
/// move batch from pool to labeled, retrain, record.
pub fn run_active_learning(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    strategy: Strategy,
    seed: u64,
) -> Result<SeedRun> {
    let start = Instant::now();
    let RunSetup {
        work_ds,
        splits,
        mut state,
        mut model,
    } = prepare_run(ds, cfg, seed)?;

    let mut records = vec![record_round(
        0, &model, &work_ds, &splits, &state, None, 0, start,
    )?];

    for round in 1..=cfg.al.rounds {
        if state.pool.is_empty() {
            break;
        }
        let round_start = Instant::now();
        let batch = query_round(strategy, cfg, &work_ds, &splits, &state, &model, round, seed)?;
        let disagreements = apply_batch(&mut state, &work_ds, &batch)?;
        let warm = cfg.al.warm_start.then(|| model.theta.clone());
        model = model::train(
            &work_ds,
            &state.labeled_vec(),
            Some(&state.assigned_labels),
            &cfg.train,
            warm.as_deref(),
        )?;
        ensure_converged(&model)?;
        records.push(record_round(
            round,
            &model,
            &work_ds,
            &splits,
            &state,
            Some(batch),
            disagreements,
            round_start,
        )?);
    }

    Ok(SeedRun {
        seed,
        records,
        failure: None,
    })
}

fn run_seed_catching(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    strategy: Strategy,
    seed: u64,
) -> Result<SeedRun> {
    match run_active_learning(ds, cfg, strategy, seed) {
        Ok(run) => Ok(run),
        Err(e @ (Error::NonConvergence { .. } | Error::SolverFailure { .. })) => Ok(SeedRun {
            seed,
            records: Vec::new(),
            failure: Some(e.to_string()),
        }),
        Err(other) => Err(other),
    }
}

/// Run every configured strategy over every seed. Numerical failures abort
/// only the affected seed and are carried as diagnostics; result order
/// follows the configuration regardless of worker count.
pub fn run_experiment(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<ExperimentResult>> {
    cfg.validate()?;
    let tasks: Vec<(Strategy, u64)> = cfg
        .al
        .strategies
        .iter()
        .flat_map(|&s| cfg.al.seeds.iter().map(move |&seed| (s, seed)))
        .collect();

    let outcomes: Vec<Result<SeedRun>> = if cfg.output.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.output.workers)
            .build()
            .map_err(|e| Error::invalid("run_experiment", e.to_string()))?;
        pool.install(|| {
            use rayon::prelude::*;
            tasks
                .par_iter()
                .map(|&(strategy, seed)| run_seed_catching(ds, cfg, strategy, seed))
                .collect()
        })
    } else {
        tasks
            .iter()
            .map(|&(strategy, seed)| run_seed_catching(ds, cfg, strategy, seed))
            .collect()
    };

    let mut results = Vec::with_capacity(cfg.al.strategies.len());
    let mut it = outcomes.into_iter();
    for &strategy in &cfg.al.strategies {
        let mut runs = Vec::with_capacity(cfg.al.seeds.len());
        for _ in &cfg.al.seeds {
            runs.push(it.next().expect("one outcome per task")?);
        }
        results.push(ExperimentResult::from_runs(strategy, runs));
    }
    Ok(results)
}

/// Unbounded-budget salutary run outcome.
#[derive(Debug, Clone)]
pub struct UnboundedRun {
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    /// Round with the highest validation accuracy (earliest on ties).
    pub best_round: usize,
    pub best_validation_accuracy: f64,
    pub best_test_accuracy: f64,
    /// Reference model trained on the full train split with ground truth.
    pub fully_supervised_test_accuracy: f64,
}

/// Salutary-only protocol with no annotation budget: consume up to
/// `ceil(pool_fraction * |initial pool|)` pool points in b-sized batches and
/// select the round that maximizes validation accuracy.
pub fn run_unbounded(ds: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<UnboundedRun> {
    let start = Instant::now();
    let RunSetup {
        work_ds,
        splits,
        mut state,
        mut model,
    } = prepare_run(ds, cfg, seed)?;

    let initial_pool = state.pool.len();
    let target = (cfg.unbounded.pool_fraction * initial_pool as f64).ceil() as usize;
    let full_rounds = target / cfg.al.budget;

    let mut records = vec![record_round(
        0, &model, &work_ds, &splits, &state, None, 0, start,
    )?];

    for round in 1..=full_rounds {
        if state.pool.is_empty() {
            break;
        }
        let round_start = Instant::now();
        let batch = query_round(
            Strategy::Salutary,
            cfg,
            &work_ds,
            &splits,
            &state,
            &model,
            round,
            seed,
        )?;
        let disagreements = apply_batch(&mut state, &work_ds, &batch)?;
        model = model::train(
            &work_ds,
            &state.labeled_vec(),
            Some(&state.assigned_labels),
            &cfg.train,
            None,
        )?;
        ensure_converged(&model)?;
        records.push(record_round(
            round,
            &model,
            &work_ds,
            &splits,
            &state,
            Some(batch),
            disagreements,
            round_start,
        )?);
    }

    let mut best = 0;
    for (i, rec) in records.iter().enumerate() {
        if rec.validation_accuracy > records[best].validation_accuracy {
            best = i;
        }
    }

    let supervised = model::train(&work_ds, &splits.train, None, &cfg.train, None)?;
    ensure_converged(&supervised)?;
    let fully_supervised_test_accuracy =
        model::accuracy(&supervised, &work_ds, &splits.test)?;

    Ok(UnboundedRun {
        seed,
        records: records.clone(),
        best_round: records[best].round,
        best_validation_accuracy: records[best].validation_accuracy,
        best_test_accuracy: records[best].test_accuracy,
        fully_supervised_test_accuracy,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinMode {
    /// Replace one bin's labels in the full training set with salutary labels.
    TrainRelabel,
    /// Add one pool bin to the initial labeled set, under GT and salutary arms.
    PoolAdd,
}

impl BinMode {
    pub fn identifier(&self) -> &'static str {
        match self {
            BinMode::TrainRelabel => "train-relabel",
            BinMode::PoolAdd => "pool-add",
        }
    }

    pub fn parse(s: &str) -> Result<BinMode> {
        match s {
            "train-relabel" => Ok(BinMode::TrainRelabel),
            "pool-add" => Ok(BinMode::PoolAdd),
            other => Err(Error::config("mode", format!("unknown bin mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinArm {
    Gt,
    Salutary,
}

impl BinArm {
    pub fn identifier(&self) -> &'static str {
        match self {
            BinArm::Gt => "gt",
            BinArm::Salutary => "salutary",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BinRow {
    pub bin_index: usize,
    pub arm: BinArm,
    pub test_accuracy: f64,
    pub mean_influence: f64,
}

#[derive(Debug, Clone)]
pub struct BinReport {
    pub mode: BinMode,
    pub n_bins: usize,
    /// Test accuracy of the unmodified run (initial labeled set, GT labels).
    pub baseline_accuracy: f64,
    /// Per-bin arm results, bins ordered by ascending salutary influence.
    pub rows: Vec<BinRow>,
}

/// Split `count` items into `n_bins` equal bins; the remainder goes to the
/// last (highest-influence) bin.
pub fn equal_size_bins(count: usize, n_bins: usize) -> Vec<std::ops::Range<usize>> {
    let base = count / n_bins;
    let mut bins = Vec::with_capacity(n_bins);
    for b in 0..n_bins {
        let start = b * base;
        let end = if b + 1 == n_bins { count } else { start + base };
        bins.push(start..end);
    }
    bins
}

/// Influence-sorted bin study: sort the target set ascending by salutary
/// influence, cut into equal bins, and retrain per bin under the mode's
/// recipe, recording test accuracy against the unmodified baseline.
pub fn bin_analysis(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    mode: BinMode,
    n_bins: usize,
    seed: u64,
) -> Result<BinReport> {
    if n_bins < 2 {
        return Err(Error::config("n_bins", "must be >= 2"));
    }
    let RunSetup {
        work_ds,
        splits,
        state,
        model,
    } = prepare_run(ds, cfg, seed)?;
    let labeled = state.labeled_vec();
    let context = build_context(
        &model,
        &work_ds,
        &labeled,
        &state.assigned_labels,
        &splits.validation,
        &cfg.cg_config(model.param_count()),
    )?;
    let baseline_accuracy = model::accuracy(&model, &work_ds, &splits.test)?;

    let target: Vec<usize> = match mode {
        BinMode::TrainRelabel => labeled.clone(),
        BinMode::PoolAdd => state.pool_vec(),
    };
    if target.len() < n_bins {
        return Err(Error::invalid(
            "bin_analysis",
            format!("{} samples cannot fill {n_bins} bins", target.len()),
        ));
    }

    let matrix = influence_matrix(&context, &work_ds, &target, labeled.len())?;
    let mut scored: Vec<(usize, usize, f64)> = target
        .iter()
        .enumerate()
        .map(|(pos, &idx)| {
            let (label, score) = matrix.best(pos);
            (idx, label, score)
        })
        .collect();
    scored.sort_by(|a, b| a.2.partial_cmp(&b.2).expect("finite scores").then(a.0.cmp(&b.0)));

    let mut rows = Vec::new();
    for (bin_index, range) in equal_size_bins(scored.len(), n_bins).into_iter().enumerate() {
        let bin = &scored[range];
        let mean_influence = bin.iter().map(|e| e.2).sum::<f64>() / bin.len() as f64;
        let salutary_overrides: LabelOverrides =
            bin.iter().map(|&(idx, label, _)| (idx, label)).collect();

        match mode {
            BinMode::TrainRelabel => {
                let m = model::train(
                    &work_ds,
                    &labeled,
                    Some(&salutary_overrides),
                    &cfg.train,
                    None,
                )?;
                ensure_converged(&m)?;
                rows.push(BinRow {
                    bin_index,
                    arm: BinArm::Salutary,
                    test_accuracy: model::accuracy(&m, &work_ds, &splits.test)?,
                    mean_influence,
                });
            }
            BinMode::PoolAdd => {
                let mut expanded = labeled.clone();
                expanded.extend(bin.iter().map(|&(idx, _, _)| idx));
                expanded.sort_unstable();

                let gt = model::train(&work_ds, &expanded, None, &cfg.train, None)?;
                ensure_converged(&gt)?;
                rows.push(BinRow {
                    bin_index,
                    arm: BinArm::Gt,
                    test_accuracy: model::accuracy(&gt, &work_ds, &splits.test)?,
                    mean_influence,
                });

                let sal = model::train(
                    &work_ds,
                    &expanded,
                    Some(&salutary_overrides),
                    &cfg.train,
                    None,
                )?;
                ensure_converged(&sal)?;
                rows.push(BinRow {
                    bin_index,
                    arm: BinArm::Salutary,
                    test_accuracy: model::accuracy(&sal, &work_ds, &splits.test)?,
                    mean_influence,
                });
            }
        }
    }

    Ok(BinReport {
        mode,
        n_bins,
        baseline_accuracy,
        rows,
    })
}

#[derive(Debug, Clone)]
pub struct AddOneRecord {
    pub sample_id: u64,
    pub label: usize,
    pub predicted_decrease: f64,
    pub actual_decrease: f64,
}

#[derive(Debug, Clone)]
pub struct AddOneReport {
    pub records: Vec<AddOneRecord>,
    pub spearman: Option<f64>,
    pub sign_agreement: Option<f64>,
    pub requested: usize,
    /// True when `n_candidates` exceeded the pool and was clamped.
    pub clamped: bool,
}

/// Influence-versus-retraining fidelity study: for seeded-random pool
/// candidates under their ground-truth labels, record the predicted and the
/// actual validation-loss decrease and their Spearman correlation.
pub fn add_one_in_study(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    n_candidates: usize,
    seed: u64,
) -> Result<AddOneReport> {
    let RunSetup {
        work_ds,
        splits,
        state,
        model,
    } = prepare_run(ds, cfg, seed)?;
    let labeled = state.labeled_vec();
    let pool = state.pool_vec();

    let clamped = n_candidates > pool.len();
    let take = n_candidates.min(pool.len());
    let mut order = pool;
    let mut stream = rng::derive(seed, "addone");
    use rand::seq::SliceRandom;
    order.shuffle(&mut stream);
    let mut candidates: Vec<usize> = order[..take].to_vec();
    candidates.sort_unstable();

    let mut records = Vec::with_capacity(take);
    if take > 0 {
        let context = build_context(
            &model,
            &work_ds,
            &labeled,
            &state.assigned_labels,
            &splits.validation,
            &cfg.cg_config(model.param_count()),
        )?;
        for &idx in &candidates {
            let label = work_ds.label(idx);
            let predicted =
                influence_score(&context, work_ds.row(idx), label, labeled.len())?;
            let actual = add_one_in_actual(
                &work_ds,
                &labeled,
                None,
                &splits.validation,
                work_ds.row(idx),
                label,
                &cfg.train,
            )?;
            records.push(AddOneRecord {
                sample_id: work_ds.id(idx),
                label,
                predicted_decrease: predicted,
                actual_decrease: actual,
            });
        }
    }

    let (spearman, sign_agreement) = if records.len() >= 2 {
        let predicted: Vec<f64> = records.iter().map(|r| r.predicted_decrease).collect();
        let actual: Vec<f64> = records.iter().map(|r| r.actual_decrease).collect();
        let rho = match crate::influence::spearman(&predicted, &actual) {
            Ok(v) => Some(v),
            Err(Error::UndefinedCorrelation { .. }) => None,
            Err(e) => return Err(e),
        };
        let agree = records
            .iter()
            .filter(|r| r.predicted_decrease.signum() == r.actual_decrease.signum())
            .count() as f64
            / records.len() as f64;
        (rho, Some(agree))
    } else {
        (None, None)
    };

    Ok(AddOneReport {
        records,
        spearman,
        sign_agreement,
        requested: n_candidates,
        clamped,
    })
}
