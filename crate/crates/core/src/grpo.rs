//! Group Relative Policy Optimization over a two-factor linear softmax
//! policy.
//!
//! For a prompt `x` with hashed features `phi(x)`, the policy picks a format
//! (well-formed or malformed) and an answer label independently:
//!
//! ```text
//! pi(format | x) = softmax(W_fmt^T phi(x) / T)
//! pi(label  | x) = softmax(W_ans^T phi(x) / T)   over the prompt's labels
//! log pi(y | x)  = log pi(format | x) + log pi(label | x)
//! ```
//!
//! A group of `k` candidates is sampled per prompt, each is scored by the
//! verifiable reward, the group mean is the baseline, and each candidate's
//! advantage is its reward minus that mean. The minimized loss over a batch
//! `B` of groups is
//!
//! ```text
//! L = -(1/|B|) sum_groups (1/k) sum_i log pi(y_i | x) * A_i
//! ```
//!
//! with advantages held constant when differentiating. There is no ratio
//! clipping and no KL term. `advantage_std_norm` optionally divides the
//! advantages by the group standard deviation; it is off by default.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::QAItem;
use crate::error::{Error, Result};
use crate::reward::{compute_reward, labels, RewardBreakdown, RewardWeights, CLOSE_TAG, OPEN_TAG};
use crate::rng::Rng;

pub const FORMAT_CHOICES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub feature_dim: usize,
    pub hash_seed: u64,
    pub temperature: f64,
    pub learning_rate: f64,
    /// Prompts (groups) per iteration.
    pub batch_size: usize,
    pub max_iterations: usize,
    pub advantage_std_norm: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            feature_dim: 1024,
            hash_seed: 0x5EED_F00D,
            temperature: 1.0,
            learning_rate: 4.0,
            batch_size: 16,
            max_iterations: 2000,
            advantage_std_norm: false,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ConfigInvalid(m.to_string()));
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive");
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

/// L2-normalized sparse feature vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseFeatures {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseFeatures {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for (i, x) in self.iter() {
            v[i] = x;
        }
        v
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// FNV-1a over the seed bytes followed by the token bytes.
pub fn token_hash(seed: u64, token: &str) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    seed.to_le_bytes()
        .iter()
        .chain(token.as_bytes())
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Hashed bag of lowercase alphanumeric tokens. Stem tokens are used as is;
/// option tokens are prefixed with their label (`b:aspirin`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureHasher {
    pub dim: usize,
    pub seed: u64,
}

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl FeatureHasher {
    pub fn new(dim: usize, seed: u64) -> Self {
        FeatureHasher { dim, seed }
    }

    pub fn features(&self, item: &QAItem) -> SparseFeatures {
        self.features_of(&item.stem, &item.options)
    }

    pub fn features_of(&self, stem: &str, options: &std::collections::BTreeMap<String, String>) -> SparseFeatures {
        let mut counts = std::collections::BTreeMap::<usize, f64>::new();
        let mut add = |tok: &str| {
            let ix = (token_hash(self.seed, tok) % self.dim as u64) as usize;
            *counts.entry(ix).or_default() += 1.0;
        };
        for t in tokens(stem) {
            add(&t);
        }
        for (label, text) in options {
            let label = label.to_lowercase();
            for t in tokens(text) {
                add(&format!("{label}:{t}"));
            }
        }
        let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
        let (indices, values) = counts
            .into_iter()
            .map(|(i, v)| (i, if norm > 0.0 { v / norm } else { 0.0 }))
            .unzip();
        SparseFeatures { indices, values }
    }
}

/// A scored-able prompt: the item's identity and key plus its features.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub item_id: String,
    pub n_options: usize,
    pub key: char,
    pub features: SparseFeatures,
}

impl Prompt {
    pub fn from_item(item: &QAItem, hasher: &FeatureHasher) -> Self {
        Prompt {
            item_id: item.id.clone(),
            n_options: item.options.len(),
            key: item.key(),
            features: hasher.features(item),
        }
    }

    pub fn labels(&self) -> Vec<char> {
        labels(self.n_options)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FormatChoice {
    WellFormed,
    Malformed,
}

impl FormatChoice {
    fn index(self) -> usize {
        match self {
            FormatChoice::WellFormed => 0,
            FormatChoice::Malformed => 1,
        }
    }

    fn from_index(i: usize) -> Self {
        if i == 0 {
            FormatChoice::WellFormed
        } else {
            FormatChoice::Malformed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub format: FormatChoice,
    pub label: char,
}

impl Action {
    /// `<answer>X</answer>` when well formed, the bare label otherwise.
    pub fn render(&self) -> String {
        match self.format {
            FormatChoice::WellFormed => format!("{OPEN_TAG}{}{CLOSE_TAG}", self.label),
            FormatChoice::Malformed => self.label.to_string(),
        }
    }
}

/// Flat parameter vector: `W_fmt` (`F x 2`, row-major) followed by `W_ans`
/// (`F x V`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub feature_dim: usize,
    pub n_labels: usize,
    pub temperature: f64,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(feature_dim: usize, n_labels: usize, temperature: f64) -> Self {
        PolicyParams {
            feature_dim,
            n_labels,
            temperature,
            theta: vec![0.0; feature_dim * (FORMAT_CHOICES + n_labels)],
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn ans_offset(&self) -> usize {
        self.feature_dim * FORMAT_CHOICES
    }

    pub fn fmt_weight(&self, f: usize, c: usize) -> f64 {
        self.theta[f * FORMAT_CHOICES + c]
    }

    pub fn fmt_weight_mut(&mut self, f: usize, c: usize) -> &mut f64 {
        &mut self.theta[f * FORMAT_CHOICES + c]
    }

    pub fn ans_weight(&self, f: usize, c: usize) -> f64 {
        self.theta[self.ans_offset() + f * self.n_labels + c]
    }

    pub fn ans_weight_mut(&mut self, f: usize, c: usize) -> &mut f64 {
        let off = self.ans_offset();
        &mut self.theta[off + f * self.n_labels + c]
    }

    fn check(&self, prompt: &Prompt) -> Result<()> {
        if self.theta.len() != self.feature_dim * (FORMAT_CHOICES + self.n_labels) {
            return Err(Error::DimensionMismatch(format!(
                "theta has {} entries, expected {}",
                self.theta.len(),
                self.feature_dim * (FORMAT_CHOICES + self.n_labels)
            )));
        }
        if prompt.n_options > self.n_labels || prompt.n_options == 0 {
            return Err(Error::DimensionMismatch(format!(
                "prompt {} has {} options, policy supports {}",
                prompt.item_id, prompt.n_options, self.n_labels
            )));
        }
        if let Some(&last) = prompt.features.indices.last() {
            if last >= self.feature_dim {
                return Err(Error::DimensionMismatch(format!(
                    "feature index {last} >= feature_dim {}",
                    self.feature_dim
                )));
            }
        }
        Ok(())
    }

    fn logits(&self, offset: usize, width: usize, used: usize, features: &SparseFeatures) -> Vec<f64> {
        let mut z = vec![0.0; used];
        for (f, x) in features.iter() {
            let row = offset + f * width;
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += self.theta[row + c] * x;
            }
        }
        for zc in &mut z {
            *zc /= self.temperature;
        }
        z
    }

    /// Format and answer distributions as log-probabilities.
    pub fn log_probs(&self, prompt: &Prompt) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(prompt)?;
        let fmt = log_softmax(&self.logits(0, FORMAT_CHOICES, FORMAT_CHOICES, &prompt.features));
        let ans = log_softmax(&self.logits(
            self.ans_offset(),
            self.n_labels,
            prompt.n_options,
            &prompt.features,
        ));
        Ok((fmt, ans))
    }

    /// Adds `scale * d log pi(action | prompt) / d theta` into `grad` and
    /// returns the log-probability.
    fn accumulate(&self, prompt: &Prompt, action: &Action, scale: f64, grad: &mut [f64]) -> Result<f64> {
        let (fmt_lp, ans_lp) = self.log_probs(prompt)?;
        let a_fmt = action.format.index();
        let a_ans = crate::reward::label_index(action.label)
            .filter(|&i| i < prompt.n_options)
            .ok_or_else(|| {
                Error::DimensionMismatch(format!(
                    "label {} not valid for prompt {}",
                    action.label, prompt.item_id
                ))
            })?;
        let logprob = fmt_lp[a_fmt] + ans_lp[a_ans];
        if scale != 0.0 {
            let t = self.temperature;
            let off = self.ans_offset();
            for (f, x) in prompt.features.iter() {
                let g = scale * x / t;
                for (c, lp) in fmt_lp.iter().enumerate() {
                    let indicator = if c == a_fmt { 1.0 } else { 0.0 };
                    grad[f * FORMAT_CHOICES + c] += g * (indicator - lp.exp());
                }
                let row = off + f * self.n_labels;
                for (c, lp) in ans_lp.iter().enumerate() {
                    let indicator = if c == a_ans { 1.0 } else { 0.0 };
                    grad[row + c] += g * (indicator - lp.exp());
                }
            }
        }
        Ok(logprob)
    }

    /// Most probable action; ties go to the lower index.
    pub fn greedy_action(&self, prompt: &Prompt) -> Result<Action> {
        let (fmt, ans) = self.log_probs(prompt)?;
        Ok(Action {
            format: FormatChoice::from_index(argmax(&fmt)),
            label: labels(prompt.n_options)[argmax(&ans)],
        })
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - lse).collect()
}

fn sample_index(log_probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        cum += lp.exp();
        if u < cum {
            return i;
        }
    }
    // rounding left a sliver above the cumulative mass: take the last
    // index with nonzero probability
    log_probs
        .iter()
        .rposition(|lp| lp.exp() > 0.0)
        .unwrap_or(log_probs.len() - 1)
}

/// Log-probability of `action` and its exact gradient with respect to theta.
pub fn policy_logprob_and_grad(params: &PolicyParams, prompt: &Prompt, action: &Action) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let lp = params.accumulate(prompt, action, 1.0, &mut grad)?;
    Ok((lp, grad))
}

/// Anything that can produce rollouts for a prompt.
pub trait RolloutPolicy: Sync {
    fn sample_action(&self, prompt: &Prompt, rng: &mut Rng) -> Result<Action>;
}

impl RolloutPolicy for PolicyParams {
    fn sample_action(&self, prompt: &Prompt, rng: &mut Rng) -> Result<Action> {
        let (fmt, ans) = self.log_probs(prompt)?;
        let f = sample_index(&fmt, rng);
        let a = sample_index(&ans, rng);
        Ok(Action {
            format: FormatChoice::from_index(f),
            label: labels(prompt.n_options)[a],
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub action: Action,
    pub text: String,
    pub logprob: f64,
    pub reward: Option<RewardBreakdown>,
}

/// Draws `k >= 2` independent candidates from the current policy.
pub fn sample_group(params: &PolicyParams, prompt: &Prompt, k: usize, rng: &mut Rng) -> Result<Vec<Candidate>> {
    if k < 2 {
        return Err(Error::Precondition(format!("group size must be >= 2, got {k}")));
    }
    let (fmt, ans) = params.log_probs(prompt)?;
    let labels = prompt.labels();
    Ok((0..k)
        .map(|_| {
            let f = sample_index(&fmt, rng);
            let a = sample_index(&ans, rng);
            let action = Action {
                format: FormatChoice::from_index(f),
                label: labels[a],
            };
            Candidate {
                text: action.render(),
                action,
                logprob: fmt[f] + ans[a],
                reward: None,
            }
        })
        .collect())
}

/// Mean reward of a group, computed as `r_0 + mean(r_i - r_0)` so that a
/// group of identical rewards has a baseline exactly equal to them.
pub fn group_baseline(rewards: &[f64]) -> Result<f64> {
    let Some(&first) = rewards.first() else {
        return Err(Error::Precondition("empty reward group".into()));
    };
    let offset: f64 = rewards.iter().map(|r| r - first).sum();
    Ok(first + offset / rewards.len() as f64)
}

/// `A_i = r_i - mean(r)`.
pub fn advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let b = group_baseline(rewards)?;
    Ok(rewards.iter().map(|r| r - b).collect())
}

/// Advantages divided by the group's population standard deviation; an
/// all-equal group yields zeros.
pub fn std_normalized_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    let adv = advantages(rewards)?;
    let var = adv.iter().map(|a| a * a).sum::<f64>() / adv.len() as f64;
    let sd = var.sqrt();
    Ok(if sd > 0.0 {
        adv.iter().map(|a| a / sd).collect()
    } else {
        vec![0.0; adv.len()]
    })
}

/// All rewards identical: zero advantages and zero gradient.
pub fn is_sparse(rewards: &[f64]) -> bool {
    rewards.windows(2).all(|w| w[0] == w[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupResult {
    pub prompt: Prompt,
    pub candidates: Vec<Candidate>,
    pub baseline: f64,
    pub advantages: Vec<f64>,
}

impl GroupResult {
    pub fn rewards(&self) -> Option<Vec<f64>> {
        self.candidates
            .iter()
            .map(|c| c.reward.as_ref().map(|r| r.total))
            .collect()
    }

    pub fn is_sparse(&self) -> bool {
        self.rewards().is_some_and(|r| is_sparse(&r))
    }
}

/// Scores every candidate and fills in baseline and advantages.
pub fn score_group(
    prompt: Prompt,
    mut candidates: Vec<Candidate>,
    weights: &RewardWeights,
    std_norm: bool,
) -> Result<GroupResult> {
    let labels = prompt.labels();
    for c in &mut candidates {
        c.reward = Some(compute_reward(&c.text, prompt.key, &labels, weights));
    }
    let rewards: Vec<f64> = candidates
        .iter()
        .map(|c| c.reward.as_ref().map_or(0.0, |r| r.total))
        .collect();
    let baseline = group_baseline(&rewards)?;
    let advantages = if std_norm {
        std_normalized_advantages(&rewards)?
    } else {
        advantages(&rewards)?
    };
    Ok(GroupResult {
        prompt,
        candidates,
        baseline,
        advantages,
    })
}

/// Loss and gradient of the group-relative objective under the current
/// parameters, with log-probabilities recomputed and advantages frozen.
pub fn grpo_loss_and_grad(params: &PolicyParams, groups: &[GroupResult]) -> Result<(f64, Vec<f64>)> {
    if groups.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let k = groups[0].candidates.len();
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    let norm = 1.0 / (groups.len() as f64 * k as f64);
    for (g, group) in groups.iter().enumerate() {
        if group.candidates.len() != k || group.advantages.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "group {g} has {} candidates, batch uses k = {k}",
                group.candidates.len()
            )));
        }
        if group.candidates.iter().any(|c| c.reward.is_none()) {
            return Err(Error::UnscoredGroup(g));
        }
        for (cand, &adv) in group.candidates.iter().zip(&group.advantages) {
            let lp = params.accumulate(&group.prompt, &cand.action, -adv * norm, &mut grad)?;
            loss -= lp * adv * norm;
        }
    }
    Ok((loss, grad))
}

/// Plain gradient descent: `theta' = theta - lr * grad`.
pub fn policy_step(params: &PolicyParams, grad: &[f64], learning_rate: f64) -> Result<PolicyParams> {
    if grad.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient has {} entries, theta has {}",
            grad.len(),
            params.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    if !(learning_rate.is_finite() && learning_rate >= 0.0) {
        return Err(Error::Precondition(format!("learning rate {learning_rate}")));
    }
    let mut next = params.clone();
    for (t, g) in next.theta.iter_mut().zip(grad) {
        *t -= learning_rate * g;
    }
    Ok(next)
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"RLVRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Checkpoint: the flat theta plus the hash of the config that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub hash_seed: u64,
    pub config_hash: [u8; 32],
}

impl Checkpoint {
    /// Little-endian layout: magic, version (u32), feature_dim (u32),
    /// n_labels (u32), temperature (f64), hash_seed (u64), config hash
    /// (32 bytes), theta length (u64), theta (f64 each).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let p = &self.params;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(p.feature_dim as u32).to_le_bytes())?;
        w.write_all(&(p.n_labels as u32).to_le_bytes())?;
        w.write_all(&p.temperature.to_le_bytes())?;
        w.write_all(&self.hash_seed.to_le_bytes())?;
        w.write_all(&self.config_hash)?;
        w.write_all(&(p.theta.len() as u64).to_le_bytes())?;
        for t in &p.theta {
            w.write_all(&t.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf)
                .map_err(|e| Error::BadCheckpoint(e.to_string()))?;
            Ok(buf)
        }
        if &take::<8, _>(&mut r)? != CHECKPOINT_MAGIC {
            return Err(Error::BadCheckpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut r)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::BadCheckpoint(format!("unsupported version {version}")));
        }
        let feature_dim = u32::from_le_bytes(take(&mut r)?) as usize;
        let n_labels = u32::from_le_bytes(take(&mut r)?) as usize;
        let temperature = f64::from_le_bytes(take(&mut r)?);
        let hash_seed = u64::from_le_bytes(take(&mut r)?);
        let config_hash = take::<32, _>(&mut r)?;
        let n = u64::from_le_bytes(take(&mut r)?) as usize;
        if n != feature_dim * (FORMAT_CHOICES + n_labels) {
            return Err(Error::BadCheckpoint(format!("theta length {n} inconsistent with shape")));
        }
        let mut theta = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            theta.push(f64::from_le_bytes(take(&mut r)?));
        }
        Ok(Checkpoint {
            params: PolicyParams {
                feature_dim,
                n_labels,
                temperature,
                theta,
            },
            hash_seed,
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(crate::jsonl::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(crate::jsonl::open(path)?)
    }

    pub fn hasher(&self) -> FeatureHasher {
        FeatureHasher::new(self.params.feature_dim, self.hash_seed)
    }
}
