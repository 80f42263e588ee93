//! QA corpus refinement: format filtering, label verification,
//! anonymization, difficulty tiers and public/synthetic mixing.

use std::collections::{BTreeMap, HashSet};
use std::sync::LazyLock;

use rand::prelude::*;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use unicode_normalization::UnicodeNormalization;

use crate::endpoint::{EndpointConfig, JsonEndpoint};
use crate::error::{Error, Result};
use crate::kgstore::Graph;
use crate::reward::labels;
use crate::rng::Rng;
use crate::synth::{Provenance, SynthQuestion};

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Difficulty {
    Easy,
    Moderate,
    Difficult,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Difficult];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Moderate => "Moderate",
            Difficulty::Difficult => "Difficult",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[default]
    Public,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub stem: String,
    pub options: BTreeMap<String, String>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<Difficulty>,
    #[serde(default)]
    pub source: SourceKind,
    #[serde(default)]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masked_entity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl QAItem {
    /// Option labels in order (`A`, `B`, ...).
    pub fn labels(&self) -> Vec<char> {
        labels(self.options.len())
    }

    /// The answer key as a label character.
    pub fn key(&self) -> char {
        self.answer.chars().next().unwrap_or('?')
    }

    /// Reasoning depth recorded by synthesis; public items count as 1 hop.
    pub fn hops(&self) -> usize {
        self.provenance.as_ref().map_or(1, |p| p.hops.max(1))
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.options.len();
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
            return Err(Error::Precondition(format!("item {}: {n} options", self.id)));
        }
        let expected: Vec<String> = labels(n).iter().map(char::to_string).collect();
        if !self.options.keys().eq(expected.iter()) {
            return Err(Error::Precondition(format!("item {}: labels not A.. consecutive", self.id)));
        }
        if !self.options.contains_key(&self.answer) {
            return Err(Error::Precondition(format!("item {}: answer key not an option", self.id)));
        }
        Ok(())
    }
}

impl From<SynthQuestion> for QAItem {
    fn from(q: SynthQuestion) -> Self {
        QAItem {
            id: q.id,
            stem: q.stem,
            options: q.options,
            answer: q.answer,
            difficulty: None,
            source: SourceKind::Synthetic,
            flags: Vec::new(),
            masked_entity: Some(q.masked_entity),
            provenance: Some(q.provenance),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail")]
pub enum RejectReason {
    Malformed(String),
    EmptyStem,
    EmptyOption(String),
    DuplicateOptions,
    BadAnswerKey,
    NonConsecutiveLabels,
    OptionCount(usize),
    EncodingArtifact(String),
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum FilterOutcome {
    Accepted(QAItem),
    Rejected(RejectReason),
}

fn normalize_text(s: &str) -> String {
    s.nfc().collect::<String>().trim().to_string()
}

fn comparison_key(s: &str) -> String {
    normalize_text(s)
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn has_artifact(s: &str) -> bool {
    s.chars()
        .any(|c| c == '\u{FFFD}' || (c.is_control() && c != '\n' && c != '\t'))
}

/// Structural screening of one raw record. Rejection is a value, not an
/// error; accepted items come back with NFC-normalized, trimmed text.
pub fn format_filter(raw: &Value) -> FilterOutcome {
    use FilterOutcome::Rejected;
    let item: QAItem = match serde_json::from_value(raw.clone()) {
        Ok(item) => item,
        Err(e) => return Rejected(RejectReason::Malformed(e.to_string())),
    };

    let fields = std::iter::once(("id", &item.id))
        .chain(std::iter::once(("stem", &item.stem)))
        .chain(std::iter::once(("answer", &item.answer)))
        .chain(item.options.iter().map(|(k, v)| (k.as_str(), v)));
    for (name, text) in fields {
        if has_artifact(text) {
            return Rejected(RejectReason::EncodingArtifact(name.to_string()));
        }
    }
    if item.options.keys().any(|k| has_artifact(k)) {
        return Rejected(RejectReason::EncodingArtifact("option label".into()));
    }

    let stem = normalize_text(&item.stem);
    if stem.is_empty() {
        return Rejected(RejectReason::EmptyStem);
    }
    let n = item.options.len();
    if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
        return Rejected(RejectReason::OptionCount(n));
    }
    let mut options = BTreeMap::new();
    for (label, text) in &item.options {
        let label = normalize_text(label);
        let text = normalize_text(text);
        if text.is_empty() {
            return Rejected(RejectReason::EmptyOption(label));
        }
        options.insert(label, text);
    }
    let expected: Vec<String> = labels(n).iter().map(char::to_string).collect();
    if !options.keys().eq(expected.iter()) {
        return Rejected(RejectReason::NonConsecutiveLabels);
    }
    let mut seen = HashSet::new();
    if !options.values().all(|t| seen.insert(comparison_key(t))) {
        return Rejected(RejectReason::DuplicateOptions);
    }
    let answer = normalize_text(&item.answer).to_uppercase();
    if !options.contains_key(&answer) {
        return Rejected(RejectReason::BadAnswerKey);
    }

    FilterOutcome::Accepted(QAItem {
        id: normalize_text(&item.id),
        stem,
        options,
        answer,
        ..item
    })
}

/// Answers an item once per trial. Implementations must be deterministic
/// per `(item id, trial)` when used for reproducible runs.
pub trait Validator: Sync {
    fn answer(&self, item: &QAItem, trial: u32) -> Result<String>;
}

/// Closure-backed validator for tests and scripted runs.
pub struct ScriptedValidator<F>(pub F);

impl<F> Validator for ScriptedValidator<F>
where
    F: Fn(&QAItem, u32) -> String + Sync,
{
    fn answer(&self, item: &QAItem, trial: u32) -> Result<String> {
        Ok((self.0)(item, trial))
    }
}

/// Always returns the stored key.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeyEchoValidator;

impl Validator for KeyEchoValidator {
    fn answer(&self, item: &QAItem, _trial: u32) -> Result<String> {
        Ok(item.answer.clone())
    }
}

/// Answers synthetic items from the knowledge graph: picks the option whose
/// entity satisfies the most stated facts about the masked slot.
pub struct GraphOracleValidator<'g> {
    pub graph: &'g Graph,
}

impl Validator for GraphOracleValidator<'_> {
    fn answer(&self, item: &QAItem, _trial: u32) -> Result<String> {
        let (Some(mask), Some(prov)) = (&item.masked_entity, &item.provenance) else {
            return Err(Error::ValidatorUnavailable(format!(
                "item {} has no synthesis provenance",
                item.id
            )));
        };
        let scores = crate::synth::option_consistency(self.graph, prov, mask, &item.options)?;
        let best = scores
            .iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(label, _)| label.clone())
            .ok_or_else(|| Error::ValidatorUnavailable("item has no options".into()))?;
        Ok(best)
    }
}

#[derive(Serialize)]
struct ValidatorRequest<'a> {
    stem: &'a str,
    options: &'a BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct ValidatorResponse {
    answer: String,
}

/// External model validator: POST `{"stem", "options"}`, expects
/// `{"answer": "<label>"}`.
pub struct HttpValidator {
    endpoint: JsonEndpoint,
}

impl HttpValidator {
    pub fn new(config: EndpointConfig) -> Self {
        HttpValidator {
            endpoint: JsonEndpoint::new(config),
        }
    }
}

impl Validator for HttpValidator {
    fn answer(&self, item: &QAItem, _trial: u32) -> Result<String> {
        let req = ValidatorRequest {
            stem: &item.stem,
            options: &item.options,
        };
        self.endpoint
            .post::<_, ValidatorResponse>(&req)
            .map(|r| r.answer.trim().to_uppercase())
            .map_err(Error::ValidatorUnavailable)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedItem {
    #[serde(flatten)]
    pub item: QAItem,
    /// Validator answer for each trial, in trial order.
    pub transcript: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Verification {
    pub verified: Vec<QAItem>,
    pub flagged: Vec<FlaggedItem>,
}

pub const FLAG_LABEL_CHECK: &str = "label_check_failed";

/// Asks the validator up to `trials` times per item. An item is flagged iff
/// every trial disagrees with its key; trials stop at the first agreement.
pub fn verify_labels(items: &[QAItem], validator: &dyn Validator, trials: u32) -> Result<Verification> {
    if trials == 0 {
        return Err(Error::Precondition("trials must be >= 1".into()));
    }
    let outcomes: Vec<(bool, Vec<String>)> = items
        .par_iter()
        .map(|item| {
            let mut transcript = Vec::new();
            for trial in 0..trials {
                let answer = validator.answer(item, trial)?;
                let agrees = answer == item.answer;
                transcript.push(answer);
                if agrees {
                    return Ok((true, transcript));
                }
            }
            Ok((false, transcript))
        })
        .collect::<Result<_>>()?;

    let mut out = Verification::default();
    for (item, (ok, transcript)) in items.iter().zip(outcomes) {
        if ok {
            out.verified.push(item.clone());
        } else {
            let mut item = item.clone();
            item.flags.push(FLAG_LABEL_CHECK.to_string());
            item.flags.push(format!("validator_answers={}", transcript.join("|")));
            out.flagged.push(FlaggedItem { item, transcript });
        }
    }
    Ok(out)
}

const MONTH: &str = r"(?:Jan(?:uary)?|Feb(?:ruary)?|Mar(?:ch)?|Apr(?:il)?|May|June?|July?|Aug(?:ust)?|Sep(?:t(?:ember)?)?|Oct(?:ober)?|Nov(?:ember)?|Dec(?:ember)?)";

static ANON_PATTERNS: LazyLock<Vec<(Regex, &'static str)>> = LazyLock::new(|| {
    let date = [
        r"\b\d{4}-\d{1,2}-\d{1,2}\b".to_string(),
        r"\b\d{1,2}/\d{1,2}/\d{2,4}\b".to_string(),
        format!(r"\b{MONTH}\.?\s+\d{{1,2}}(?:st|nd|rd|th)?,?\s+\d{{4}}\b"),
        format!(r"\b\d{{1,2}}(?:st|nd|rd|th)?\s+{MONTH}\.?,?\s+\d{{4}}\b"),
    ]
    .join("|");
    vec![
        (Regex::new(&date).expect("date pattern"), "[DATE]"),
        (
            Regex::new(r"\b\d{3}-\d{2}-\d{4}\b|\b[A-Z]{0,3}\d{6,}\b").expect("id pattern"),
            "[ID]",
        ),
        (
            Regex::new(r"\b(?:Mr|Mrs|Ms|Miss|Mx|Dr|Prof)\.?\s+[A-Z][A-Za-z'-]+(?:\s+[A-Z][A-Za-z'-]+)?")
                .expect("name pattern"),
            "[NAME]",
        ),
    ]
});

/// Replaces full dates, ID numbers and honorific-prefixed names with
/// `[DATE]`, `[ID]` and `[NAME]`. Idempotent.
pub fn anonymize(text: &str) -> String {
    let mut out = text.to_string();
    for (re, placeholder) in ANON_PATTERNS.iter() {
        out = re.replace_all(&out, *placeholder).into_owned();
    }
    out
}

/// Pluggable difficulty classifier.
pub trait TierClassifier: Sync {
    fn classify(&self, item: &QAItem) -> Result<Difficulty>;
}

/// Points-based tiering on hop count, option count and stem length.
///
/// Each axis contributes points; the total maps to a tier:
/// `<= easy_max` Easy, `<= moderate_max` Moderate, otherwise Difficult.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicTierClassifier {
    /// Hop counts at which 1, 2 and 3 points are awarded.
    pub hop_steps: [usize; 3],
    /// Option counts at which 1 and 2 points are awarded.
    pub option_steps: [usize; 2],
    /// Stem lengths (chars) at which 1 and 2 points are awarded.
    pub stem_steps: [usize; 2],
    pub easy_max: usize,
    pub moderate_max: usize,
}

impl Default for HeuristicTierClassifier {
    fn default() -> Self {
        HeuristicTierClassifier {
            hop_steps: [2, 3, 4],
            option_steps: [5, 10],
            stem_steps: [200, 400],
            easy_max: 1,
            moderate_max: 3,
        }
    }
}

impl HeuristicTierClassifier {
    pub fn points(&self, item: &QAItem) -> usize {
        let over = |v: usize, steps: &[usize]| steps.iter().filter(|&&s| v >= s).count();
        over(item.hops(), &self.hop_steps)
            + over(item.options.len(), &self.option_steps)
            + over(item.stem.chars().count(), &self.stem_steps)
    }
}

impl TierClassifier for HeuristicTierClassifier {
    fn classify(&self, item: &QAItem) -> Result<Difficulty> {
        let p = self.points(item);
        Ok(if p <= self.easy_max {
            Difficulty::Easy
        } else if p <= self.moderate_max {
            Difficulty::Moderate
        } else {
            Difficulty::Difficult
        })
    }
}

pub fn assign_difficulty(item: &QAItem, classifier: &dyn TierClassifier, override_existing: bool) -> Result<QAItem> {
    if item.difficulty.is_some() && !override_existing {
        return Ok(item.clone());
    }
    let tier = classifier.classify(item)?;
    Ok(QAItem {
        difficulty: Some(tier),
        ..item.clone()
    })
}

/// Number of public items in a mix of `size` at `public_fraction`,
/// rounding half up. The small epsilon keeps products like `0.15 * 10`
/// (which evaluates just below 1.5) on the intended side of the tie.
pub fn public_count(size: usize, public_fraction: f64) -> usize {
    let exact = size as f64 * public_fraction;
    ((exact + 0.5 + 1e-9).floor() as usize).min(size)
}

pub fn mix_corpus(
    public: &[QAItem],
    synthetic: &[QAItem],
    public_fraction: f64,
    size: usize,
    rng: &mut Rng,
) -> Result<Vec<QAItem>> {
    if !(0.0..=1.0).contains(&public_fraction) {
        return Err(Error::ConfigInvalid(format!(
            "public_fraction must be in [0, 1], got {public_fraction}"
        )));
    }
    let n_public = public_count(size, public_fraction);
    let n_synth = size - n_public;
    if n_public > public.len() {
        return Err(Error::PoolExhausted {
            pool: "public",
            requested: n_public,
            available: public.len(),
        });
    }
    if n_synth > synthetic.len() {
        return Err(Error::PoolExhausted {
            pool: "synthetic",
            requested: n_synth,
            available: synthetic.len(),
        });
    }
    let mut out: Vec<QAItem> = public.choose_multiple(rng, n_public).cloned().collect();
    out.extend(synthetic.choose_multiple(rng, n_synth).cloned());
    out.shuffle(rng);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use serde_json::json;

    fn raw(options: Value, answer: &str) -> Value {
        json!({"id": "q1", "stem": "  Which drug?  ", "options": options, "answer": answer})
    }

    fn accepted(v: &Value) -> QAItem {
        match format_filter(v) {
            FilterOutcome::Accepted(item) => item,
            FilterOutcome::Rejected(r) => panic!("rejected: {r:?}"),
        }
    }

    fn rejected(v: &Value) -> RejectReason {
        match format_filter(v) {
            FilterOutcome::Rejected(r) => r,
            FilterOutcome::Accepted(_) => panic!("accepted"),
        }
    }

    #[test]
    fn filter_examples() {
        let v = raw(json!({"A": "aspirin", "B": "Aspirin "}), "A");
        assert_eq!(rejected(&v), RejectReason::DuplicateOptions);
        let v = raw(json!({"A": "a", "B": "b", "C": "c", "D": "d"}), "E");
        assert_eq!(rejected(&v), RejectReason::BadAnswerKey);
        let v = raw(json!({"A": " Aspirin", "B": "Heparin", "C": "Warfarin", "D": "Cafe\u{301}"}), "b");
        let item = accepted(&v);
        assert_eq!(item.stem, "Which drug?");
        assert_eq!(item.options["A"], "Aspirin");
        assert_eq!(item.options["D"], "Caf\u{e9}");
        assert_eq!(item.answer, "B");
    }

    #[test]
    fn filter_rejections() {
        let v = json!({"id": "q", "stem": " ", "options": {"A": "x", "B": "y"}, "answer": "A"});
        assert_eq!(rejected(&v), RejectReason::EmptyStem);
        let v = raw(json!({"A": "x", "B": " "}), "A");
        assert_eq!(rejected(&v), RejectReason::EmptyOption("B".into()));
        let v = raw(json!({"A": "x", "C": "y"}), "A");
        assert_eq!(rejected(&v), RejectReason::NonConsecutiveLabels);
        let v = raw(json!({"A": "x"}), "A");
        assert_eq!(rejected(&v), RejectReason::OptionCount(1));
        let v = raw(json!({"A": "x\u{FFFD}", "B": "y"}), "A");
        assert_eq!(rejected(&v), RejectReason::EncodingArtifact("A".into()));
        let v = json!({"id": "q", "stem": "bell\u{7}", "options": {"A": "x", "B": "y"}, "answer": "A"});
        assert_eq!(rejected(&v), RejectReason::EncodingArtifact("stem".into()));
        let v = json!({"stem": "no id", "options": {"A": "x", "B": "y"}, "answer": "A"});
        assert!(matches!(rejected(&v), RejectReason::Malformed(_)));
    }

    #[test]
    fn filter_is_idempotent_on_accepted_output() {
        let v = raw(json!({"A": " x ", "B": "y\u{301}"}), "a");
        let once = accepted(&v);
        let twice = accepted(&serde_json::to_value(&once).unwrap());
        assert_eq!(once, twice);
    }

    fn item(id: &str, answer: &str) -> QAItem {
        QAItem {
            id: id.into(),
            stem: "stem".into(),
            options: BTreeMap::from([("A".into(), "x".into()), ("B".into(), "y".into())]),
            answer: answer.into(),
            difficulty: None,
            source: SourceKind::Public,
            flags: vec![],
            masked_entity: None,
            provenance: None,
        }
    }

    #[test]
    fn verification_rule() {
        let items = [item("q1", "A")];
        // correct only on trial 3 of 5
        let v = ScriptedValidator(|_: &QAItem, t: u32| if t == 2 { "A".into() } else { "B".into() });
        let out = verify_labels(&items, &v, 5).unwrap();
        assert_eq!(out.verified.len(), 1);
        assert!(out.flagged.is_empty());

        let v = ScriptedValidator(|_: &QAItem, _t: u32| "B".to_string());
        let out = verify_labels(&items, &v, 5).unwrap();
        assert_eq!(out.flagged.len(), 1);
        assert_eq!(out.flagged[0].transcript, vec!["B"; 5]);
        assert!(out.flagged[0].item.flags.contains(&FLAG_LABEL_CHECK.to_string()));

        assert!(matches!(verify_labels(&items, &v, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn verification_exhaustive_over_trial_patterns() {
        let items = [item("q1", "A")];
        for pattern in 0u32..32 {
            let v = ScriptedValidator(move |_: &QAItem, t: u32| {
                if pattern >> t & 1 == 1 { "A".into() } else { "B".into() }
            });
            let out = verify_labels(&items, &v, 5).unwrap();
            assert_eq!(out.flagged.len() == 1, pattern == 0, "pattern {pattern:05b}");
        }
    }

    #[test]
    fn anonymize_example() {
        let s = "Mr. John Smith, MRN 483921, seen 2023-04-01";
        assert_eq!(anonymize(s), "[NAME], MRN [ID], seen [DATE]");
        assert_eq!(anonymize("no identifiers here"), "no identifiers here");
        assert_eq!(anonymize(&anonymize(s)), anonymize(s));
    }

    #[test]
    fn difficulty_assignment() {
        let c = HeuristicTierClassifier::default();
        let easy = item("e", "A");
        assert_eq!(assign_difficulty(&easy, &c, false).unwrap().difficulty, Some(Difficulty::Easy));

        let mut preset = item("p", "A");
        preset.difficulty = Some(Difficulty::Moderate);
        assert_eq!(assign_difficulty(&preset, &c, false).unwrap(), preset);
        assert_eq!(
            assign_difficulty(&preset, &c, true).unwrap().difficulty,
            Some(Difficulty::Easy)
        );
    }

    fn pool(prefix: &str, n: usize) -> Vec<QAItem> {
        (0..n).map(|i| item(&format!("{prefix}{i}"), "A")).collect()
    }

    #[test]
    fn mixing_counts() {
        let public = pool("p", 40);
        let synth = pool("s", 40);
        let mut rng = rng::seeded(1);
        let count = |v: &[QAItem]| v.iter().filter(|i| i.id.starts_with('p')).count();

        let m = mix_corpus(&public, &synth, 0.7, 10, &mut rng).unwrap();
        assert_eq!((count(&m), m.len()), (7, 10));
        let m = mix_corpus(&public, &synth, 0.5, 3, &mut rng).unwrap();
        assert_eq!((count(&m), m.len()), (2, 3));
        assert!(matches!(
            mix_corpus(&public, &synth, 0.7, 100, &mut rng),
            Err(Error::PoolExhausted { .. })
        ));
        assert_eq!(public_count(10, 0.15), 2);
    }
}
