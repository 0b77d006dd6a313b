//! The open-set active learning loop.
//!
//! Each round trains the query models from scratch on the current labeled
//! data, trains and evaluates the target model, runs the query strategy on
//! the unlabeled pool, asks the oracle for labels and updates the sets:
//!
//! ```text
//! D_L  ← D_L ∪ X^K        (known-class queries, oracle labels)
//! D_IQ ← D_IQ ∪ X^U       (unknown-class queries, bucket label |K|)
//! D_U  ← D_U \ D_Q
//! ```

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::RngCore;

use crate::error::{invalid, Error, Result};
use crate::model::{ModelParams, PatchInput};
use crate::numerics::{argmax, entropy_unchecked};
use crate::optim::{train, LrSchedule, Optimizer, SamHyper, TrainConfig, TrainOutcome};
use crate::scoring::{samis_p, score_pool, uncertainty_scores, PoolItem, SampleScore, UncertaintyKind};
use crate::strategies::{
    select_bucketed, select_disagreement, select_random, select_samosa, select_samosa_l, select_samosa_r,
    select_uncertainty, QueryResult, StrategyKind,
};
use crate::synthdata::{build_openset_pool, oracle_label, Example, GenConfig, OracleConfig, Subclass};
use crate::{rng_from, Rng};

/// The four disjoint index sets of an active learning run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolState {
    /// Labeled known-class samples and their observed (oracle) labels.
    pub labeled: BTreeMap<usize, usize>,
    pub unlabeled: BTreeSet<usize>,
    /// Queried samples that turned out to belong to unknown classes.
    pub invalid: BTreeSet<usize>,
    pub test: BTreeSet<usize>,
    /// Known-class samples outside the test set.
    pub n_known: usize,
}

impl PoolState {
    pub fn new(
        labeled: BTreeMap<usize, usize>,
        unlabeled: BTreeSet<usize>,
        test: BTreeSet<usize>,
        n_known: usize,
    ) -> Result<Self> {
        let state = Self { labeled, unlabeled, invalid: BTreeSet::new(), test, n_known };
        state.check_disjoint()?;
        Ok(state)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let all = self
            .labeled
            .keys()
            .chain(&self.unlabeled)
            .chain(&self.invalid)
            .chain(&self.test);
        for id in all {
            if !seen.insert(*id) {
                return Err(invalid("pool", alloc::format!("sample {id} appears in two sets")));
            }
        }
        Ok(())
    }

    /// Applies one round's annotations. Every id must currently be unlabeled.
    pub fn apply_query(&mut self, valid: &[(usize, usize)], invalid_ids: &[usize]) -> Result<()> {
        for id in valid.iter().map(|(id, _)| id).chain(invalid_ids) {
            if !self.unlabeled.contains(id) {
                return Err(invalid("query", alloc::format!("sample {id} is not in the unlabeled pool")));
            }
        }
        for (id, label) in valid {
            self.unlabeled.remove(id);
            self.labeled.insert(*id, *label);
        }
        for id in invalid_ids {
            self.unlabeled.remove(id);
            self.invalid.insert(*id);
        }
        Ok(())
    }

    /// Which set an id belongs to; ids outside every set count as unlabeled.
    pub fn split_of(&self, id: usize) -> Split {
        if self.labeled.contains_key(&id) {
            Split::Labeled
        } else if self.invalid.contains(&id) {
            Split::Invalid
        } else if self.test.contains(&id) {
            Split::Test
        } else {
            Split::Unlabeled
        }
    }

    /// `|D_L| + |D_U| + |D_IQ|`; constant across rounds.
    pub fn active_total(&self) -> usize {
        self.labeled.len() + self.unlabeled.len() + self.invalid.len()
    }
}

/// `precision = |X^K| / q`, `recall = |D_L| / n_known`.
pub fn precision_recall(
    x_k_count: usize,
    q: usize,
    labeled_known_total: usize,
    n_known: usize,
) -> Result<(f64, f64)> {
    if q < 1 {
        return Err(invalid("q", "must be at least 1"));
    }
    if n_known < 1 {
        return Err(invalid("n_known", "must be at least 1"));
    }
    if x_k_count > q {
        return Err(Error::CountExceeds { count: x_k_count, total: q });
    }
    if labeled_known_total > n_known {
        return Err(Error::CountExceeds { count: labeled_known_total, total: n_known });
    }
    Ok((x_k_count as f64 / q as f64, labeled_known_total as f64 / n_known as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub width: usize,
    /// Standard deviation of the first-layer initialization.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { width: 16, init_std: 0.05 }
    }
}

/// Optimizer hyperparameters shared by every model trained in a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub rho: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            step_size: 60,
            gamma: 0.5,
            rho: 0.05,
        }
    }
}

impl TrainSettings {
    pub fn train_config(&self, optimizer: Optimizer) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            schedule: LrSchedule { initial_lr: self.lr, step_size: self.step_size, gamma: self.gamma },
            optimizer,
            stop_at_loss: None,
        }
    }

    pub fn sgd(&self) -> TrainConfig {
        self.train_config(Optimizer::Sgd)
    }

    pub fn sam(&self) -> TrainConfig {
        self.train_config(Optimizer::Sam(SamHyper { rho: self.rho }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub rounds: usize,
    pub budget: usize,
    pub data: GenConfig,
    pub mismatch_ratio: f64,
    pub init_labeled_frac: f64,
    pub test_frac: f64,
    pub oracle: OracleConfig,
    pub model: ModelConfig,
    pub train: TrainSettings,
    pub strategy: StrategyKind,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            rounds: 8,
            budget: 40,
            data: GenConfig::default(),
            mismatch_ratio: 0.4,
            init_labeled_frac: 0.05,
            test_frac: 0.25,
            oracle: OracleConfig { flip_prob: 0.0 },
            model: ModelConfig::default(),
            train: TrainSettings::default(),
            strategy: StrategyKind::Samosa,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(invalid("rounds", "must be at least 1"));
        }
        if self.budget < 1 {
            return Err(invalid("budget", "must be at least 1"));
        }
        if self.model.width < 1 {
            return Err(invalid("width", "must be at least 1"));
        }
        if !(self.model.init_std >= 0.0 && self.model.init_std.is_finite()) {
            return Err(invalid("init_std", "must be finite and non-negative"));
        }
        self.data.validate()?;
        self.oracle.validate()?;
        self.strategy.validate()?;
        self.train.sam().validate()?;
        if self.train.epochs < 1 {
            return Err(invalid("epochs", "must be at least 1"));
        }
        Ok(())
    }
}

/// Per-query diagnostics recorded with each round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryDiagnostic {
    pub id: usize,
    /// Entropy of the SGD distinguisher when one is trained, else of the target model.
    pub entropy: f64,
    pub samis: Option<f64>,
    /// Whether the target model predicts the true class.
    pub test_correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    /// Target model accuracy on the known-class test set.
    pub accuracy: f64,
    pub precision: f64,
    /// `|D_L| / n_known` after this round's annotations.
    pub recall: f64,
    pub n_labeled: usize,
    pub n_invalid: usize,
    pub n_valid_queries: usize,
    pub n_invalid_queries: usize,
    pub loss_sgd: Option<f64>,
    pub loss_sam: Option<f64>,
    pub loss_test: f64,
    pub queries: Vec<QueryDiagnostic>,
}

/// One row of a per-round score dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub id: usize,
    pub score: f64,
    pub accepted: Option<bool>,
    pub sgd_pred: Option<usize>,
    pub sam_pred: Option<usize>,
    pub selected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Labeled,
    Unlabeled,
    Invalid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Labeled => "labeled",
            Split::Unlabeled => "unlabeled",
            Split::Invalid => "invalid",
            Split::Test => "test",
        }
    }
}

/// Target-model embedding of one sample at the start of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: usize,
    pub true_class: usize,
    pub subclass: Subclass,
    pub is_known: bool,
    pub split: Split,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundModels {
    /// SGD distinguisher (the first ensemble member for `disagree3`).
    pub sgd: Option<ModelParams>,
    pub sam: Option<ModelParams>,
    pub test: ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub metrics: RoundMetrics,
    pub query: QueryResult,
    /// Observed labels of the queried samples (the unknown bucket for invalid ones).
    pub observed: Vec<(usize, usize)>,
    pub scores: Vec<ScoreRow>,
    pub embeddings: Vec<EmbeddingRow>,
    pub models: RoundModels,
}

fn training_set<'a>(
    examples: &'a [Example],
    state: &PoolState,
    include_invalid: bool,
    unknown_label: usize,
) -> Vec<(&'a PatchInput, usize)> {
    // Sorted by id, so training depends on the sets only.
    let mut rows: Vec<(usize, usize)> = state.labeled.iter().map(|(id, l)| (*id, *l)).collect();
    if include_invalid {
        rows.extend(state.invalid.iter().map(|id| (*id, unknown_label)));
        rows.sort_unstable();
    }
    rows.into_iter().map(|(id, l)| (&examples[id].x, l)).collect()
}

fn fit(
    cfg: &ExperimentConfig,
    data: &[(&PatchInput, usize)],
    num_classes: usize,
    train_cfg: &TrainConfig,
    init_seed: u64,
    shuffle_seed: u64,
) -> Result<TrainOutcome> {
    let mut init_rng = rng_from(init_seed, 0);
    let params = ModelParams::init(cfg.model.width, cfg.data.dim, num_classes, cfg.model.init_std, &mut init_rng)?;
    train(params, data, train_cfg, &mut rng_from(shuffle_seed, 0))
}

/// Accuracy of a `|K|`-way model on the known-class test set.
pub fn test_accuracy(examples: &[Example], test: &BTreeSet<usize>, f_test: &ModelParams) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut correct = 0usize;
    for id in test {
        let ex = &examples[*id];
        if f_test.predicted_class(&ex.x)? == ex.true_class {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// Executes round `t`: train, evaluate, query, annotate, update `state`.
pub fn run_round(
    state: &mut PoolState,
    examples: &[Example],
    cfg: &ExperimentConfig,
    t: usize,
    rng: &mut Rng,
) -> Result<RoundOutput> {
    if state.labeled.is_empty() {
        return Err(Error::Empty("labeled set"));
    }
    let k = cfg.data.num_known;
    let strategy = cfg.strategy;
    let distinguisher_seed = rng.next_u64();
    let distinguisher_shuffle = rng.next_u64();
    let test_seed = rng.next_u64();
    let test_shuffle = rng.next_u64();

    // Query models on D_L ∪ D_IQ with |K| + 1 outputs.
    let dist_data = training_set(examples, state, true, k);
    let mut sgd_model = None;
    let mut sam_model = None;
    let mut ensemble = Vec::new();
    if strategy.uses_samis() {
        let sgd = fit(cfg, &dist_data, k + 1, &cfg.train.sgd(), distinguisher_seed, distinguisher_shuffle)?;
        let sam = fit(cfg, &dist_data, k + 1, &cfg.train.sam(), distinguisher_seed, distinguisher_shuffle)?;
        sgd_model = Some(sgd);
        sam_model = Some(sam);
    } else if strategy == StrategyKind::Disagree3 {
        for member in 0..3u64 {
            ensemble.push(fit(
                cfg,
                &dist_data,
                k + 1,
                &cfg.train.sgd(),
                distinguisher_seed.wrapping_add(member),
                distinguisher_shuffle.wrapping_add(member),
            )?);
        }
    }

    // Target model on D_L only, |K| outputs.
    let test_data = training_set(examples, state, false, k);
    let f_test = fit(cfg, &test_data, k, &cfg.train.sgd(), test_seed, test_shuffle)?;
    let accuracy = test_accuracy(examples, &state.test, &f_test.params)?;

    let embeddings = embedding_rows(examples, state, &f_test.params)?;

    let pool: Vec<PoolItem<'_>> = state.unlabeled.iter().map(|id| (*id, &examples[*id].x)).collect();
    let pool_ids: Vec<usize> = pool.iter().map(|(id, _)| *id).collect();
    let q = cfg.budget;
    let mut samis: Vec<SampleScore> = Vec::new();
    let mut plain_scores: Vec<(usize, f64)> = Vec::new();
    let selected = if pool.is_empty() {
        Vec::new()
    } else {
        match strategy {
            StrategyKind::Samosa
            | StrategyKind::SamosaLow
            | StrategyKind::SamosaBucket(_)
            | StrategyKind::SamosaRandomized => {
                let (sgd, sam) = (&sgd_model.as_ref().expect("trained").params, &sam_model.as_ref().expect("trained").params);
                samis = score_pool(&pool, sgd, sam, k)?;
                match strategy {
                    StrategyKind::Samosa => select_samosa(&samis, q)?,
                    StrategyKind::SamosaLow => select_samosa_l(&samis, q)?,
                    StrategyKind::SamosaBucket(b) => select_bucketed(&samis, q, b)?,
                    _ => select_samosa_r(&samis, q, rng)?,
                }
            }
            StrategyKind::Disagree3 => {
                let models: Vec<ModelParams> = ensemble.iter().map(|o| o.params.clone()).collect();
                select_disagreement(&pool, &models, k, q)?
            }
            StrategyKind::Uncertainty(kind) => {
                plain_scores = uncertainty_scores(&pool, &f_test.params, kind)?;
                select_uncertainty(&pool, &f_test.params, kind, q)?
            }
            StrategyKind::Random => select_random(&pool_ids, q, rng)?,
        }
    };

    // Ground truth enters only here, after selection.
    let mut query = QueryResult { selected: selected.clone(), ..QueryResult::default() };
    let mut valid_labels = Vec::new();
    let mut observed = Vec::with_capacity(selected.len());
    for id in &selected {
        let ex = &examples[*id];
        let label = oracle_label(ex, &cfg.oracle, k, rng);
        observed.push((*id, label));
        if ex.is_known {
            query.valid.push(*id);
            valid_labels.push((*id, label));
        } else {
            query.invalid.push(*id);
        }
    }

    let diag_model = sgd_model
        .as_ref()
        .or(ensemble.first())
        .map(|o| &o.params)
        .unwrap_or(&f_test.params);
    let score_of: BTreeMap<usize, f64> = samis.iter().map(|s| (s.id, s.score)).collect();
    let queries = selected
        .iter()
        .map(|id| {
            let ex = &examples[*id];
            let p = diag_model.predict_proba(&ex.x)?;
            let test_correct = ex.is_known && f_test.params.predicted_class(&ex.x)? == ex.true_class;
            Ok(QueryDiagnostic { id: *id, entropy: entropy_unchecked(&p), samis: score_of.get(id).copied(), test_correct })
        })
        .collect::<Result<Vec<_>>>()?;

    state.apply_query(&valid_labels, &query.invalid)?;

    let (precision, recall) = if selected.is_empty() {
        (0.0, precision_recall(0, 1, state.labeled.len(), state.n_known)?.1)
    } else {
        precision_recall(query.valid.len(), selected.len(), state.labeled.len(), state.n_known)?
    };

    let chosen: BTreeSet<usize> = selected.iter().copied().collect();
    let scores = if !samis.is_empty() {
        samis
            .iter()
            .map(|s| ScoreRow {
                id: s.id,
                score: s.score,
                accepted: Some(s.accepted),
                sgd_pred: Some(s.sgd_pred),
                sam_pred: Some(s.sam_pred),
                selected: chosen.contains(&s.id),
            })
            .collect()
    } else {
        plain_scores
            .iter()
            .map(|(id, score)| ScoreRow {
                id: *id,
                score: *score,
                accepted: None,
                sgd_pred: None,
                sam_pred: None,
                selected: chosen.contains(id),
            })
            .collect()
    };

    let metrics = RoundMetrics {
        round: t,
        accuracy,
        precision,
        recall,
        n_labeled: state.labeled.len(),
        n_invalid: state.invalid.len(),
        n_valid_queries: query.valid.len(),
        n_invalid_queries: query.invalid.len(),
        loss_sgd: sgd_model.as_ref().or(ensemble.first()).map(|o| o.final_loss),
        loss_sam: sam_model.as_ref().map(|o| o.final_loss),
        loss_test: f_test.final_loss,
        queries,
    };
    let models = RoundModels {
        sgd: sgd_model.map(|o| o.params).or_else(|| ensemble.into_iter().next().map(|o| o.params)),
        sam: sam_model.map(|o| o.params),
        test: f_test.params,
    };
    Ok(RoundOutput { metrics, query, observed, scores, embeddings, models })
}

/// Target-model embeddings of every sample, tagged with its current split.
pub fn embedding_rows(examples: &[Example], state: &PoolState, model: &ModelParams) -> Result<Vec<EmbeddingRow>> {
    examples
        .iter()
        .map(|ex| {
            let split = state.split_of(ex.id);
            Ok(EmbeddingRow {
                id: ex.id,
                true_class: ex.true_class,
                subclass: ex.subclass,
                is_known: ex.is_known,
                split,
                values: model.embed(&ex.x)?.into_inner(),
            })
        })
        .collect()
}

/// A generated pool and its evolving state, driven round by round.
#[derive(Debug, Clone)]
pub struct Experiment {
    cfg: ExperimentConfig,
    examples: Vec<Example>,
    state: PoolState,
    next_round: usize,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = build_openset_pool(
            &cfg.data,
            cfg.mismatch_ratio,
            cfg.init_labeled_frac,
            cfg.test_frac,
            &mut rng_from(cfg.seed, 0),
        )?;
        Ok(Self { cfg, examples: pool.examples, state: pool.state, next_round: 0 })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn state(&self) -> &PoolState {
        &self.state
    }

    pub fn next_round(&self) -> usize {
        self.next_round
    }

    /// Runs the next round with its own RNG stream derived from the seed.
    pub fn step(&mut self) -> Result<RoundOutput> {
        let t = self.next_round;
        let mut rng = rng_from(self.cfg.seed, t as u64 + 1);
        let out = run_round(&mut self.state, &self.examples, &self.cfg, t, &mut rng)?;
        self.next_round += 1;
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rounds: Vec<RoundOutput>,
    pub final_state: PoolState,
}

impl ExperimentOutput {
    pub fn metrics(&self) -> impl Iterator<Item = &RoundMetrics> {
        self.rounds.iter().map(|r| &r.metrics)
    }

    pub fn final_models(&self) -> Option<&RoundModels> {
        self.rounds.last().map(|r| &r.models)
    }
}

/// Runs all `cfg.rounds` rounds.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut exp = Experiment::new(*cfg)?;
    let rounds = (0..cfg.rounds).map(|_| exp.step()).collect::<Result<Vec<_>>>()?;
    Ok(ExperimentOutput { rounds, final_state: exp.state })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportRow {
    pub id: usize,
    pub entropy: f64,
    pub predicted: usize,
    pub observed: usize,
}

/// Queried known-class samples the SGD model gets wrong, with the entropy
/// of its full predictive distribution. The prediction is the argmax over
/// the known-class outputs only; samples labeled with the unknown bucket are
/// skipped.
pub fn misclassified_entropy_report(
    queried: &[(usize, &PatchInput, usize)],
    f_sgd: &ModelParams,
    num_known: usize,
) -> Result<Vec<ReportRow>> {
    let known_outputs = num_known.min(f_sgd.num_classes());
    let mut rows = Vec::new();
    for (id, x, observed) in queried {
        if *observed >= num_known {
            continue;
        }
        let p = f_sgd.predict_proba(x)?;
        let predicted = argmax(&p[..known_outputs]);
        if predicted != *observed {
            rows.push(ReportRow { id: *id, entropy: entropy_unchecked(&p), predicted, observed: *observed });
        }
    }
    Ok(rows)
}

/// SAMIS-P of every pool sample; convenience over [`score_pool`] for analyses
/// that ignore the rejection step.
pub fn samis_scores(pool: &[PoolItem<'_>], f_sgd: &ModelParams, f_sam: &ModelParams) -> Result<Vec<(usize, f64)>> {
    pool.iter()
        .map(|(id, x)| Ok((*id, samis_p(&f_sam.predict_proba(x)?, &f_sgd.predict_proba(x)?)?)))
        .collect()
}

/// Entropy ranking used by the entropy-selection counterfactual in
/// diagnostics: pool ids sorted by descending entropy under `model`.
pub fn entropy_ranking(pool: &[PoolItem<'_>], model: &ModelParams) -> Result<Vec<(usize, f64)>> {
    let mut scored = uncertainty_scores(pool, model, UncertaintyKind::Entropy)?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored)
}
