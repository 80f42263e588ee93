//! Two-stage curriculum around the GRPO step.
//!
//! Stage One draws Easy and Moderate items by tier weight. Each iteration
//! records the fraction of sparse groups (all rewards equal, hence zero
//! gradient); once the mean over the last `W` iterations reaches the
//! threshold the run moves to Stage Two for good. Stage Two mines items the
//! policy repeatedly fails, samples mostly from that pool with replay from
//! the full corpus, uses more rollouts per prompt, and re-mines every `E`
//! iterations, replacing the pool each time.

use std::collections::VecDeque;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Difficulty, QAItem};
use crate::error::{Error, Result};
use crate::grpo::{
    grpo_loss_and_grad, is_sparse, policy_step, sample_group, score_group, FeatureHasher,
    GrpoConfig, GroupResult, PolicyParams, Prompt, RolloutPolicy,
};
use crate::reward::{compute_reward, RewardWeights};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Mix {
    #[serde(rename = "Easy")]
    pub easy: f64,
    #[serde(rename = "Moderate")]
    pub moderate: f64,
}

impl Default for Stage1Mix {
    fn default() -> Self {
        Stage1Mix { easy: 0.5, moderate: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub stage1_mix: Stage1Mix,
    pub sparsity_window: usize,
    pub sparsity_threshold: f64,
    pub mining_attempts: usize,
    /// Defaults to `mining_attempts` when absent.
    pub mining_fail_min: Option<usize>,
    pub stage2_hard_fraction: f64,
    pub k_stage1: usize,
    pub k_stage2: usize,
    pub remine_every: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            stage1_mix: Stage1Mix::default(),
            sparsity_window: 50,
            sparsity_threshold: 0.7,
            mining_attempts: 8,
            mining_fail_min: None,
            stage2_hard_fraction: 0.7,
            k_stage1: 8,
            k_stage2: 16,
            remine_every: 200,
        }
    }
}

impl CurriculumConfig {
    pub fn fail_min(&self) -> usize {
        self.mining_fail_min.unwrap_or(self.mining_attempts)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        let Stage1Mix { easy, moderate } = self.stage1_mix;
        if !(easy >= 0.0 && moderate >= 0.0) || (easy + moderate - 1.0).abs() > 1e-9 {
            return bad(format!("stage1_mix weights must be nonnegative and sum to 1, got {easy} + {moderate}"));
        }
        if self.sparsity_window == 0 {
            return bad("sparsity_window must be positive".into());
        }
        if !(self.sparsity_threshold > 0.0 && self.sparsity_threshold <= 1.0) {
            return bad(format!("sparsity_threshold {} outside (0, 1]", self.sparsity_threshold));
        }
        if self.mining_attempts == 0 || self.fail_min() == 0 || self.fail_min() > self.mining_attempts {
            return bad(format!(
                "need 1 <= mining_fail_min ({}) <= mining_attempts ({})",
                self.fail_min(),
                self.mining_attempts
            ));
        }
        if !(0.0..=1.0).contains(&self.stage2_hard_fraction) {
            return bad(format!("stage2_hard_fraction {} outside [0, 1]", self.stage2_hard_fraction));
        }
        if self.k_stage1 < 2 || self.k_stage2 < self.k_stage1 {
            return bad(format!(
                "need 2 <= k_stage1 ({}) <= k_stage2 ({})",
                self.k_stage1, self.k_stage2
            ));
        }
        if self.remine_every == 0 {
            return bad("remine_every must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardEntry {
    pub id: String,
    /// Position of the item in the corpus.
    pub index: usize,
    pub failures: usize,
    pub difficulty: Option<Difficulty>,
}

fn tier_rank(d: Option<Difficulty>) -> u8 {
    match d {
        Some(Difficulty::Difficult) => 0,
        Some(Difficulty::Moderate) => 1,
        Some(Difficulty::Easy) => 2,
        None => 3,
    }
}

/// Mean of the last `W` sparse-group fractions compared against the
/// threshold; fewer than `W` entries never fires.
pub fn detect_sparsity(history: &[f64], config: &CurriculumConfig) -> bool {
    let w = config.sparsity_window;
    if history.len() < w {
        return false;
    }
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in &history[history.len() - w..] {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    (sum + comp) / w as f64 + 1e-12 >= config.sparsity_threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub stage: Stage,
    pub sparse_history: VecDeque<f64>,
    pub hard_pool: Vec<HardEntry>,
    pub iteration: usize,
    pub transition_iteration: Option<usize>,
}

impl Default for CurriculumState {
    fn default() -> Self {
        CurriculumState {
            stage: Stage::One,
            sparse_history: VecDeque::new(),
            hard_pool: Vec::new(),
            iteration: 0,
            transition_iteration: None,
        }
    }
}

impl CurriculumState {
    /// Records one iteration's sparse-group fraction. Returns true exactly
    /// once, on the iteration whose window first crosses the threshold;
    /// the stage is then Two from the next iteration on.
    pub fn record_iteration(&mut self, sparse_fraction: f64, config: &CurriculumConfig) -> bool {
        let it = self.iteration;
        self.iteration += 1;
        if self.stage == Stage::Two {
            return false;
        }
        self.sparse_history.push_back(sparse_fraction);
        while self.sparse_history.len() > config.sparsity_window {
            self.sparse_history.pop_front();
        }
        if detect_sparsity(self.sparse_history.make_contiguous(), config) {
            self.stage = Stage::Two;
            self.transition_iteration = Some(it);
            true
        } else {
            false
        }
    }

    pub fn k(&self, config: &CurriculumConfig) -> usize {
        match self.stage {
            Stage::One => config.k_stage1,
            Stage::Two => config.k_stage2,
        }
    }
}

/// Corpus indices grouped by tier.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TierIndex {
    pub easy: Vec<usize>,
    pub moderate: Vec<usize>,
    pub difficult: Vec<usize>,
}

impl TierIndex {
    pub fn new(corpus: &[QAItem]) -> Self {
        let mut ix = TierIndex::default();
        for (i, item) in corpus.iter().enumerate() {
            match item.difficulty {
                Some(Difficulty::Easy) => ix.easy.push(i),
                Some(Difficulty::Moderate) => ix.moderate.push(i),
                Some(Difficulty::Difficult) => ix.difficult.push(i),
                None => {}
            }
        }
        ix
    }
}

/// Draws a tier by weight, then an item uniformly within it. Difficult
/// items are never returned.
pub fn stage1_sample(tiers: &TierIndex, config: &CurriculumConfig, rng: &mut Rng) -> Result<usize> {
    let Stage1Mix { easy, moderate } = config.stage1_mix;
    for (w, pool, name) in [(easy, &tiers.easy, "Easy"), (moderate, &tiers.moderate, "Moderate")] {
        if w > 0.0 && pool.is_empty() {
            return Err(Error::EmptyTier(name.into()));
        }
    }
    let u: f64 = rng.gen();
    let pool = if moderate <= 0.0 || (easy > 0.0 && u < easy / (easy + moderate)) {
        &tiers.easy
    } else {
        &tiers.moderate
    };
    Ok(pool[rng.gen_range(0..pool.len())])
}

/// With probability `stage2_hard_fraction` a uniform pool entry, otherwise a
/// uniform corpus item.
pub fn stage2_sample(corpus_len: usize, hard_pool: &[HardEntry], config: &CurriculumConfig, rng: &mut Rng) -> Result<usize> {
    if hard_pool.is_empty() {
        return Err(Error::EmptyHardPool);
    }
    let u: f64 = rng.gen();
    if u < config.stage2_hard_fraction {
        Ok(hard_pool[rng.gen_range(0..hard_pool.len())].index)
    } else {
        Ok(rng.gen_range(0..corpus_len))
    }
}

/// Attempts every item `m` times with the policy; items failing at least
/// `f` times form the pool, ordered by failures (desc), tier (Difficult
/// first) and id. Each item uses its own stream derived from `rng`.
pub fn mine_hard_samples(
    policy: &dyn RolloutPolicy,
    corpus: &[QAItem],
    prompts: &[Prompt],
    config: &CurriculumConfig,
    rng: &mut Rng,
) -> Result<Vec<HardEntry>> {
    if corpus.is_empty() {
        return Err(Error::Precondition("cannot mine an empty corpus".into()));
    }
    if prompts.len() != corpus.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} prompts for {} items",
            prompts.len(),
            corpus.len()
        )));
    }
    let base: u64 = rng.gen();
    let weights = RewardWeights::default();
    let failures = (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let mut item_rng = rng::stream(base, &[i as u64]);
            let prompt = &prompts[i];
            let labels = prompt.labels();
            let mut fails = 0;
            for _ in 0..config.mining_attempts {
                let action = policy.sample_action(prompt, &mut item_rng)?;
                if !compute_reward(&action.render(), prompt.key, &labels, &weights).correct {
                    fails += 1;
                }
            }
            Ok(fails)
        })
        .collect::<Result<Vec<usize>>>()?;
    let mut pool: Vec<HardEntry> = failures
        .into_iter()
        .enumerate()
        .filter(|&(_, f)| f >= config.fail_min())
        .map(|(i, failures)| HardEntry {
            id: corpus[i].id.clone(),
            index: i,
            failures,
            difficulty: corpus[i].difficulty,
        })
        .collect();
    pool.sort_by(|a, b| {
        b.failures
            .cmp(&a.failures)
            .then(tier_rank(a.difficulty).cmp(&tier_rank(b.difficulty)))
            .then_with(|| a.id.cmp(&b.id))
    });
    for e in &pool {
        log::debug!("hard item {} failed {}/{}", e.id, e.failures, config.mining_attempts);
    }
    Ok(pool)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub curriculum: CurriculumConfig,
    pub grpo: GrpoConfig,
    pub reward: RewardWeights,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.curriculum.validate()?;
        self.grpo.validate()?;
        self.reward.validate()
    }
}

/// One line of the training trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub loss: f64,
    pub mean_reward: f64,
    pub sparse_group_fraction: f64,
    pub stage: Stage,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    #[serde(rename = "Easy")]
    pub easy: Option<f64>,
    #[serde(rename = "Moderate")]
    pub moderate: Option<f64>,
    #[serde(rename = "Difficult")]
    pub difficult: Option<f64>,
    pub overall: f64,
}

/// Greedy accuracy of `params` per tier and overall.
pub fn greedy_accuracy(params: &PolicyParams, corpus: &[QAItem], prompts: &[Prompt]) -> Result<Accuracy> {
    let weights = RewardWeights::default();
    let correct = prompts
        .par_iter()
        .map(|p| {
            let a = params.greedy_action(p)?;
            Ok(compute_reward(&a.render(), p.key, &p.labels(), &weights).correct)
        })
        .collect::<Result<Vec<bool>>>()?;
    let rate = |tier: Option<Difficulty>| {
        let hits: Vec<bool> = corpus
            .iter()
            .zip(&correct)
            .filter(|(item, _)| tier.is_none() || item.difficulty == tier)
            .map(|(_, &c)| c)
            .collect();
        (!hits.is_empty()).then(|| hits.iter().filter(|&&c| c).count() as f64 / hits.len() as f64)
    };
    Ok(Accuracy {
        easy: rate(Some(Difficulty::Easy)),
        moderate: rate(Some(Difficulty::Moderate)),
        difficult: rate(Some(Difficulty::Difficult)),
        overall: rate(None).unwrap_or(0.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemineEvent {
    pub iter: usize,
    pub pool_size: usize,
    pub added: Vec<String>,
    pub removed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub corpus_size: usize,
    pub iterations_stage1: usize,
    pub iterations_stage2: usize,
    pub transition_iteration: Option<usize>,
    pub initial_accuracy: Accuracy,
    pub final_accuracy: Accuracy,
    /// Pool in use when training stopped.
    pub training_hard_pool: Vec<HardEntry>,
    /// Pool from a closing mining pass over the final policy.
    pub final_hard_pool: Vec<HardEntry>,
    pub remines: Vec<RemineEvent>,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub trace: Vec<TraceRecord>,
    pub params: PolicyParams,
}

const TAG_BATCH: u64 = 0xba7c;
const TAG_GROUP: u64 = 0x6e0b;
const TAG_MINE: u64 = 0x3141;
const TAG_FINAL: u64 = 0xf1a1;

fn pool_diff(old: &[HardEntry], new: &[HardEntry]) -> (Vec<String>, Vec<String>) {
    let ids = |p: &[HardEntry]| p.iter().map(|e| e.id.clone()).collect::<std::collections::BTreeSet<_>>();
    let (o, n) = (ids(old), ids(new));
    (n.difference(&o).cloned().collect(), o.difference(&n).cloned().collect())
}

/// Runs the two-stage schedule from a zero-initialized policy.
pub fn run_training(corpus: &[QAItem], config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Precondition("empty training corpus".into()));
    }
    if let Some(item) = corpus.iter().find(|i| i.difficulty.is_none()) {
        return Err(Error::Precondition(format!("item {} has no difficulty tier", item.id)));
    }
    let cur = &config.curriculum;
    let g = &config.grpo;
    let hasher = FeatureHasher::new(g.feature_dim, g.hash_seed);
    let prompts: Vec<Prompt> = corpus.par_iter().map(|i| Prompt::from_item(i, &hasher)).collect();
    let n_labels = corpus.iter().map(|i| i.options.len()).max().unwrap_or(2);
    let mut params = PolicyParams::zeros(g.feature_dim, n_labels, g.temperature);
    let tiers = TierIndex::new(corpus);
    let initial_accuracy = greedy_accuracy(&params, corpus, &prompts)?;

    let mut state = CurriculumState::default();
    let mut trace = Vec::with_capacity(g.max_iterations);
    let mut remines = Vec::new();
    let (mut iters1, mut iters2) = (0, 0);

    for it in 0..g.max_iterations {
        let stage = state.stage;
        let k = state.k(cur);
        let mut batch_rng = rng::stream(seed, &[TAG_BATCH, it as u64]);
        let batch = (0..g.batch_size)
            .map(|_| match stage {
                Stage::One => stage1_sample(&tiers, cur, &mut batch_rng),
                // an empty mined pool degrades to replay-only sampling
                Stage::Two if state.hard_pool.is_empty() => Ok(batch_rng.gen_range(0..corpus.len())),
                Stage::Two => stage2_sample(corpus.len(), &state.hard_pool, cur, &mut batch_rng),
            })
            .collect::<Result<Vec<usize>>>()?;
        let groups = batch
            .par_iter()
            .enumerate()
            .map(|(b, &ix)| {
                let mut group_rng = rng::stream(seed, &[TAG_GROUP, it as u64, b as u64]);
                let cands = sample_group(&params, &prompts[ix], k, &mut group_rng)?;
                score_group(prompts[ix].clone(), cands, &config.reward, g.advantage_std_norm)
            })
            .collect::<Result<Vec<GroupResult>>>()?;

        let rewards: Vec<Vec<f64>> = groups.iter().map(|gr| gr.rewards().unwrap_or_default()).collect();
        let sparse = rewards.iter().filter(|r| is_sparse(r)).count() as f64 / groups.len() as f64;
        let n_rewards: usize = rewards.iter().map(Vec::len).sum();
        let mean_reward = rewards.iter().flatten().sum::<f64>() / n_rewards as f64;

        let (loss, grad) = grpo_loss_and_grad(&params, &groups)?;
        params = policy_step(&params, &grad, g.learning_rate)?;

        trace.push(TraceRecord {
            iter: it,
            loss,
            mean_reward,
            sparse_group_fraction: sparse,
            stage,
            k,
            seed,
        });
        match stage {
            Stage::One => iters1 += 1,
            Stage::Two => iters2 += 1,
        }

        let transitioned = state.record_iteration(sparse, cur);
        let due = match state.transition_iteration {
            Some(t) if !transitioned => (it - t) % cur.remine_every == 0,
            _ => false,
        };
        if transitioned || due {
            let mut mine_rng = rng::stream(seed, &[TAG_MINE, it as u64]);
            let pool = mine_hard_samples(&params, corpus, &prompts, cur, &mut mine_rng)?;
            let (added, removed) = pool_diff(&state.hard_pool, &pool);
            log::info!(
                "iter {it}: {} hard pool of {} items (+{} -{})",
                if transitioned { "stage two begins," } else { "re-mined" },
                pool.len(),
                added.len(),
                removed.len()
            );
            if pool.is_empty() {
                log::warn!("iter {it}: mined pool is empty; sampling replay only");
            }
            remines.push(RemineEvent {
                iter: it,
                pool_size: pool.len(),
                added,
                removed,
            });
            state.hard_pool = pool;
        }
    }

    let final_accuracy = greedy_accuracy(&params, corpus, &prompts)?;
    let mut final_rng = rng::stream(seed, &[TAG_FINAL]);
    let final_hard_pool = mine_hard_samples(&params, corpus, &prompts, cur, &mut final_rng)?;
    Ok(TrainOutcome {
        report: TrainReport {
            seed,
            corpus_size: corpus.len(),
            iterations_stage1: iters1,
            iterations_stage2: iters2,
            transition_iteration: state.transition_iteration,
            initial_accuracy,
            final_accuracy,
            training_hard_pool: state.hard_pool,
            final_hard_pool,
            remines,
            config: config.clone(),
        },
        trace,
        params,
    })
}
