//! Chain-of-thought cold-start data from a teacher model.
//!
//! Each item gets `k` teacher samples; a sample passes when its answer tag
//! names the key. Items with no passing sample are refined by re-prompting
//! with Backtracking, PathExploration and SelfCorrection in turn. Passing
//! trajectories are filtered for length, tag format and up-front key
//! leaks, and the shortest survivor becomes the item's single record.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::QAItem;
use crate::endpoint::{EndpointConfig, JsonEndpoint};
use crate::error::{Error, Result};
use crate::reward::{check_format, extract_answer, CLOSE_TAG, OPEN_TAG};

pub trait TeacherClient: Sync {
    /// Exactly `n` completions for `prompt`.
    fn complete(&self, prompt: &str, n: usize, temperature: f64) -> Result<Vec<String>>;
}

/// Hex SHA-256 of the prompt text; the key of fixture transcripts.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Completions computed by a closure of (prompt, sample index).
pub struct ScriptedTeacher<F>(pub F);

impl<F: Fn(&str, usize) -> String + Sync> TeacherClient for ScriptedTeacher<F> {
    fn complete(&self, prompt: &str, n: usize, _temperature: f64) -> Result<Vec<String>> {
        Ok((0..n).map(|i| (self.0)(prompt, i)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_hash: String,
    pub completions: Vec<String>,
}

/// Replays recorded completions keyed by prompt hash.
#[derive(Debug, Clone, Default)]
pub struct FixtureTeacher {
    pub entries: HashMap<String, Vec<String>>,
}

impl FixtureTeacher {
    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<TranscriptEntry> = crate::jsonl::read(path)?;
        Ok(FixtureTeacher {
            entries: rows.into_iter().map(|r| (r.prompt_hash, r.completions)).collect(),
        })
    }
}

impl TeacherClient for FixtureTeacher {
    fn complete(&self, prompt: &str, n: usize, _temperature: f64) -> Result<Vec<String>> {
        let hash = prompt_hash(prompt);
        let recorded = self
            .entries
            .get(&hash)
            .ok_or_else(|| Error::TeacherUnavailable(format!("no recorded completions for prompt {hash}")))?;
        if recorded.len() < n {
            return Err(Error::TeacherUnavailable(format!(
                "prompt {hash} has {} recorded completions, {n} requested",
                recorded.len()
            )));
        }
        Ok(recorded[..n].to_vec())
    }
}

pub struct HttpTeacher {
    endpoint: JsonEndpoint,
}

impl HttpTeacher {
    pub fn new(config: EndpointConfig) -> Self {
        HttpTeacher {
            endpoint: JsonEndpoint::new(config),
        }
    }
}

#[derive(Serialize)]
struct TeacherRequest<'a> {
    prompt: &'a str,
    n: usize,
    temperature: f64,
}

#[derive(Deserialize)]
struct TeacherResponse {
    completions: Vec<String>,
}

impl TeacherClient for HttpTeacher {
    fn complete(&self, prompt: &str, n: usize, temperature: f64) -> Result<Vec<String>> {
        let resp: TeacherResponse = self
            .endpoint
            .post(&TeacherRequest { prompt, n, temperature })
            .map_err(Error::TeacherUnavailable)?;
        Ok(resp.completions)
    }
}

fn complete_exact(teacher: &dyn TeacherClient, prompt: &str, n: usize, temperature: f64) -> Result<Vec<String>> {
    let out = teacher.complete(prompt, n, temperature)?;
    if out.len() != n {
        return Err(Error::TeacherUnavailable(format!(
            "teacher returned {} completions, {n} requested",
            out.len()
        )));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    Backtracking,
    PathExploration,
    SelfCorrection,
}

impl Strategy {
    pub const CYCLE: [Strategy; 3] = [Strategy::Backtracking, Strategy::PathExploration, Strategy::SelfCorrection];

    /// Strategy used in refinement round `round` (1-based).
    pub fn for_round(round: usize) -> Strategy {
        Self::CYCLE[(round - 1) % Self::CYCLE.len()]
    }
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub version: String,
    pub body: String,
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{(stem|options|answer|previous)\}").unwrap());

impl PromptTemplate {
    /// The first line, when it starts with `# `, names the template version.
    pub fn parse(text: &str) -> Self {
        match text.split_once('\n') {
            Some((head, body)) if head.starts_with("# ") => PromptTemplate {
                version: head[2..].trim().to_string(),
                body: body.to_string(),
            },
            _ => PromptTemplate {
                version: String::new(),
                body: text.to_string(),
            },
        }
    }

    /// Substitutes placeholders in a single pass, so values containing
    /// placeholder syntax are left alone.
    pub fn render(&self, item: &QAItem, previous: Option<&str>) -> String {
        PLACEHOLDER
            .replace_all(&self.body, |c: &regex::Captures| match &c[1] {
                "stem" => item.stem.clone(),
                "options" => render_options(item),
                "answer" => item.answer.clone(),
                _ => previous.unwrap_or("").to_string(),
            })
            .into_owned()
    }
}

pub fn render_options(item: &QAItem) -> String {
    item.options
        .iter()
        .map(|(l, t)| format!("{l}. {t}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub generation_answer_visible: PromptTemplate,
    pub generation_answer_hidden: PromptTemplate,
    pub backtracking: PromptTemplate,
    pub path_exploration: PromptTemplate,
    pub self_correction: PromptTemplate,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            generation_answer_visible: PromptTemplate::parse(include_str!("../templates/generation_answer_visible.txt")),
            generation_answer_hidden: PromptTemplate::parse(include_str!("../templates/generation_answer_hidden.txt")),
            backtracking: PromptTemplate::parse(include_str!("../templates/refine_backtracking.txt")),
            path_exploration: PromptTemplate::parse(include_str!("../templates/refine_path_exploration.txt")),
            self_correction: PromptTemplate::parse(include_str!("../templates/refine_self_correction.txt")),
        }
    }
}

impl PromptTemplates {
    pub fn generation(&self, answer_visible: bool) -> &PromptTemplate {
        if answer_visible {
            &self.generation_answer_visible
        } else {
            &self.generation_answer_hidden
        }
    }

    pub fn refinement(&self, strategy: Strategy) -> &PromptTemplate {
        match strategy {
            Strategy::Backtracking => &self.backtracking,
            Strategy::PathExploration => &self.path_exploration,
            Strategy::SelfCorrection => &self.self_correction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoTCandidate {
    pub text: String,
    pub extracted_answer: Option<char>,
    pub passed: bool,
    pub refinement_round: usize,
    pub strategy_trace: Vec<Strategy>,
}

impl CoTCandidate {
    fn score(item: &QAItem, text: String, strategy_trace: Vec<Strategy>) -> Self {
        let extracted_answer = extract_answer(&text, &item.labels());
        CoTCandidate {
            passed: extracted_answer == Some(item.key()),
            text,
            extracted_answer,
            refinement_round: strategy_trace.len(),
            strategy_trace,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub k: usize,
    pub temperature: f64,
    pub max_rounds: usize,
    pub min_chars: usize,
    pub max_chars: usize,
    /// Show the key to the teacher in the generation prompt.
    pub answer_visible: bool,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            k: 4,
            temperature: 0.7,
            max_rounds: 3,
            min_chars: 40,
            max_chars: 4000,
            answer_visible: true,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.max_rounds == 0 {
            return Err(Error::ConfigInvalid("distill k and max_rounds must be positive".into()));
        }
        if self.min_chars > self.max_chars {
            return Err(Error::ConfigInvalid("distill min_chars exceeds max_chars".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::ConfigInvalid("distill temperature must be nonnegative".into()));
        }
        Ok(())
    }
}

pub fn generate_candidates(
    teacher: &dyn TeacherClient,
    item: &QAItem,
    k: usize,
    temperature: f64,
    templates: &PromptTemplates,
    answer_visible: bool,
) -> Result<Vec<CoTCandidate>> {
    if k == 0 {
        return Err(Error::Precondition("k must be >= 1".into()));
    }
    let prompt = templates.generation(answer_visible).render(item, None);
    Ok(complete_exact(teacher, &prompt, k, temperature)?
        .into_iter()
        .map(|text| CoTCandidate::score(item, text, Vec::new()))
        .collect())
}

/// Re-prompts with the cycling strategies until a candidate passes or
/// `max_rounds` are spent; each round wraps the previous attempt.
pub fn refine(
    teacher: &dyn TeacherClient,
    item: &QAItem,
    failed: &CoTCandidate,
    max_rounds: usize,
    temperature: f64,
    templates: &PromptTemplates,
) -> Result<CoTCandidate> {
    if failed.passed {
        return Err(Error::Precondition("refine called on a passing candidate".into()));
    }
    if max_rounds == 0 {
        return Err(Error::Precondition("max_rounds must be >= 1".into()));
    }
    let mut current = failed.clone();
    for round in 1..=max_rounds {
        let strategy = Strategy::for_round(round);
        let prompt = templates.refinement(strategy).render(item, Some(&current.text));
        let text = complete_exact(teacher, &prompt, 1, temperature)?.remove(0);
        let mut trace = current.strategy_trace.clone();
        trace.push(strategy);
        current = CoTCandidate::score(item, text, trace);
        if current.passed {
            break;
        }
    }
    Ok(current)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrajectoryReject {
    TooShort,
    TooLong,
    BadFormat,
    KeyLeak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryVerdict {
    Accept,
    Reject(TrajectoryReject),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LengthBounds {
    pub min_chars: usize,
    pub max_chars: usize,
}

// Statements that hand over the key before any reasoning. The label letter
// is matched case-sensitively so prose like "answer is a" is not caught.
static LEAK_PATTERNS: LazyLock<Vec<Regex>> = LazyLock::new(|| {
    [
        r"(?i:\b(?:the\s+)?(?:correct|right|true|final|best)\s+(?:answer|option|choice)\s+is)\s*:?\s*(?:option\s+)?\(?([A-Z])\b",
        r"(?i:\banswer\s*:)\s*\(?([A-Z])\b",
        r"(?i:\b(?:option|choice))\s+\(?([A-Z])\)?\s+(?i:is\s+(?:correct|right|the\s+answer))",
        r"^\s*\(?([A-Z])\)?\s*(?:\.|:|-)?\s*(?i:is\s+correct)",
    ]
    .iter()
    .map(|p| Regex::new(p).unwrap())
    .collect()
});

/// True when the reasoning before the answer tag states `key` outright in
/// one of the leak patterns.
pub fn leaks_key(text: &str, key: char) -> bool {
    let body = text.rfind(OPEN_TAG).map_or(text, |at| &text[..at]);
    LEAK_PATTERNS.iter().any(|re| {
        re.captures_iter(body)
            .any(|c| c[1].starts_with(key))
    })
}

pub fn filter_trajectory(candidate: &CoTCandidate, key: char, bounds: LengthBounds) -> Result<TrajectoryVerdict> {
    if !candidate.passed {
        return Err(Error::Precondition("only passing candidates are filtered".into()));
    }
    let len = candidate.text.chars().count();
    let verdict = if len < bounds.min_chars {
        TrajectoryVerdict::Reject(TrajectoryReject::TooShort)
    } else if len > bounds.max_chars {
        TrajectoryVerdict::Reject(TrajectoryReject::TooLong)
    } else if !check_format(&candidate.text) {
        TrajectoryVerdict::Reject(TrajectoryReject::BadFormat)
    } else if leaks_key(&candidate.text, key) {
        TrajectoryVerdict::Reject(TrajectoryReject::KeyLeak)
    } else {
        TrajectoryVerdict::Accept
    };
    Ok(verdict)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SFTRecord {
    pub id: String,
    pub stem: String,
    pub options: BTreeMap<String, String>,
    pub cot: String,
    pub answer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemOutcome {
    PassedFirst,
    PassedRefined,
    Dropped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemReport {
    pub id: String,
    pub outcome: ItemOutcome,
    pub refinement_rounds: usize,
    pub strategy_trace: Vec<Strategy>,
    pub rejections: Vec<TrajectoryReject>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub passed_first: usize,
    pub passed_refined: usize,
    pub dropped: usize,
    pub items: Vec<ItemReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftDataset {
    pub records: Vec<SFTRecord>,
    pub report: BuildReport,
}

fn select(
    item: &QAItem,
    candidates: &[CoTCandidate],
    bounds: LengthBounds,
    rejections: &mut Vec<TrajectoryReject>,
) -> Result<Option<SFTRecord>> {
    let mut best: Option<&CoTCandidate> = None;
    for c in candidates.iter().filter(|c| c.passed) {
        match filter_trajectory(c, item.key(), bounds)? {
            TrajectoryVerdict::Reject(r) => rejections.push(r),
            TrajectoryVerdict::Accept => {
                if best.is_none_or(|b| c.text.chars().count() < b.text.chars().count()) {
                    best = Some(c);
                }
            }
        }
    }
    Ok(best.map(|c| SFTRecord {
        id: item.id.clone(),
        stem: item.stem.clone(),
        options: item.options.clone(),
        cot: c.text.clone(),
        answer: item.answer.clone(),
    }))
}

fn distill_item(
    item: &QAItem,
    teacher: &dyn TeacherClient,
    config: &DistillConfig,
    templates: &PromptTemplates,
) -> Result<(Option<SFTRecord>, ItemReport)> {
    let bounds = LengthBounds {
        min_chars: config.min_chars,
        max_chars: config.max_chars,
    };
    let mut rejections = Vec::new();
    let initial = generate_candidates(teacher, item, config.k, config.temperature, templates, config.answer_visible)?;
    let (record, outcome, trace) = if initial.iter().any(|c| c.passed) {
        let rec = select(item, &initial, bounds, &mut rejections)?;
        (rec, ItemOutcome::PassedFirst, Vec::new())
    } else {
        let refined = refine(teacher, item, &initial[0], config.max_rounds, config.temperature, templates)?;
        let rec = select(item, std::slice::from_ref(&refined), bounds, &mut rejections)?;
        (rec, ItemOutcome::PassedRefined, refined.strategy_trace)
    };
    let outcome = if record.is_some() { outcome } else { ItemOutcome::Dropped };
    let report = ItemReport {
        id: item.id.clone(),
        outcome,
        refinement_rounds: trace.len(),
        strategy_trace: trace,
        rejections,
    };
    Ok((record, report))
}

/// Distills every item (in parallel) and returns records ordered by item id.
pub fn build_sft_dataset(
    items: &[QAItem],
    teacher: &dyn TeacherClient,
    config: &DistillConfig,
    templates: &PromptTemplates,
) -> Result<SftDataset> {
    config.validate()?;
    let mut results = items
        .par_iter()
        .map(|item| distill_item(item, teacher, config, templates))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| a.1.id.cmp(&b.1.id));
    let mut report = BuildReport::default();
    let mut records = Vec::new();
    for (record, item_report) in results {
        match item_report.outcome {
            ItemOutcome::PassedFirst => report.passed_first += 1,
            ItemOutcome::PassedRefined => report.passed_refined += 1,
            ItemOutcome::Dropped => report.dropped += 1,
        }
        records.extend(record);
        report.items.push(item_report);
    }
    Ok(SftDataset { records, report })
}

/// Wraps reasoning and a label the way completions are expected to end.
pub fn with_answer_tag(reasoning: &str, label: char) -> String {
    format!("{reasoning}\n{OPEN_TAG}{label}{CLOSE_TAG}")
}
