use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use rlvr_forge::corpus::{
    anonymize, assign_difficulty, format_filter, mix_corpus, public_count, verify_labels, Difficulty, FilterOutcome,
    HeuristicTierClassifier, KeyEchoValidator, QAItem, RejectReason, ScriptedValidator, SourceKind, TierClassifier,
};
use rlvr_forge::error::Error;
use rlvr_forge::rng;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn fixture_lines(name: &str) -> Vec<String> {
    std::fs::read_to_string(fixture(name)).unwrap().lines().map(str::to_string).collect()
}

fn item(id: &str, answer: &str) -> QAItem {
    QAItem {
        id: id.into(),
        stem: format!("Stem of {id}?"),
        options: BTreeMap::from([
            ("A".into(), "alpha".into()),
            ("B".into(), "beta".into()),
            ("C".into(), "gamma".into()),
        ]),
        answer: answer.into(),
        difficulty: None,
        source: SourceKind::Public,
        flags: vec![],
        masked_entity: None,
        provenance: None,
    }
}

#[derive(Deserialize)]
struct AnonCase {
    input: String,
    expected: String,
}

#[test]
fn anonymization_matches_hand_labels() {
    let mut wrong = vec![];
    for line in fixture_lines("anonymize_cases.jsonl") {
        let case: AnonCase = serde_json::from_str(&line).unwrap();
        let got = anonymize(&case.input);
        if got != case.expected {
            wrong.push(format!("{:?} -> {:?}, expected {:?}", case.input, got, case.expected));
        }
        assert_eq!(anonymize(&got), got, "not idempotent on {:?}", case.input);
    }
    assert!(wrong.is_empty(), "{}", wrong.join("\n"));
}

#[derive(Deserialize)]
struct DifficultyCase {
    expected: Difficulty,
    item: QAItem,
}

#[test]
fn difficulty_matches_rubric_labels() {
    let c = HeuristicTierClassifier::default();
    let cases: Vec<DifficultyCase> = fixture_lines("difficulty_items.jsonl")
        .iter()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(cases.len(), 30);
    for tier in Difficulty::ALL {
        assert!(cases.iter().any(|c| c.expected == tier), "fixture lacks {tier:?}");
    }
    for case in &cases {
        assert_eq!(c.classify(&case.item).unwrap(), case.expected, "{}", case.item.id);
        let tiered = assign_difficulty(&case.item, &c, false).unwrap();
        assert_eq!(tiered.difficulty, Some(case.expected));
    }
    let mut preset = cases[0].item.clone();
    preset.difficulty = Some(Difficulty::Difficult);
    assert_eq!(assign_difficulty(&preset, &c, false).unwrap().difficulty, Some(Difficulty::Difficult));
    assert_ne!(assign_difficulty(&preset, &c, true).unwrap().difficulty, Some(Difficulty::Difficult));
}

#[test]
fn refine_fixture_screening() {
    let mut accepted = 0;
    let mut reasons = vec![];
    for line in fixture_lines("refine_input.jsonl") {
        match serde_json::from_str::<Value>(&line) {
            Err(_) => reasons.push("unparseable".to_string()),
            Ok(v) => match format_filter(&v) {
                FilterOutcome::Accepted(_) => accepted += 1,
                FilterOutcome::Rejected(r) => reasons.push(format!("{r:?}")),
            },
        }
    }
    assert_eq!(accepted, 10);
    assert_eq!(reasons, ["BadAnswerKey", "unparseable"]);
}

#[test]
fn filter_rejections() {
    let base = serde_json::to_value(item("q", "a")).unwrap();
    let with = |f: &dyn Fn(&mut Value)| {
        let mut v = base.clone();
        f(&mut v);
        match format_filter(&v) {
            FilterOutcome::Rejected(r) => Some(r),
            FilterOutcome::Accepted(_) => None,
        }
    };
    assert_eq!(with(&|_| {}), None);
    assert_eq!(with(&|v| v["stem"] = " \n ".into()), Some(RejectReason::EmptyStem));
    assert_eq!(with(&|v| v["options"]["B"] = "ALPHA ".into()), Some(RejectReason::DuplicateOptions));
    assert_eq!(with(&|v| v["options"]["C"] = "".into()), Some(RejectReason::EmptyOption("C".into())));
    assert_eq!(
        with(&|v| {
            v["options"].as_object_mut().unwrap().remove("B");
        }),
        Some(RejectReason::NonConsecutiveLabels)
    );
    assert_eq!(
        with(&|v| v["options"] = serde_json::json!({"A": "only"})),
        Some(RejectReason::OptionCount(1))
    );
    assert_eq!(
        with(&|v| v["stem"] = "bad \u{FFFD} byte".into()),
        Some(RejectReason::EncodingArtifact("stem".into()))
    );
    assert!(matches!(with(&|v| v["options"] = 3.into()), Some(RejectReason::Malformed(_))));
}

#[test]
fn verification_stops_at_first_agreement() {
    let calls = AtomicUsize::new(0);
    // agrees with the key only on trial 2
    let v = ScriptedValidator(|it: &QAItem, trial: u32| {
        calls.fetch_add(1, Ordering::SeqCst);
        if trial == 2 { it.answer.clone() } else { "C".to_string() }
    });
    let out = verify_labels(&[item("q1", "A")], &v, 5).unwrap();
    assert_eq!(out.verified.len(), 1);
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    let never = ScriptedValidator(|_: &QAItem, _| "C".to_string());
    let out = verify_labels(&[item("q1", "A"), item("q2", "C")], &never, 5).unwrap();
    assert_eq!(out.flagged.len(), 1);
    assert_eq!(out.flagged[0].transcript, vec!["C"; 5]);
    assert!(out.flagged[0].item.flags.iter().any(|f| f == "label_check_failed"));
    assert!(matches!(verify_labels(&[], &KeyEchoValidator, 0), Err(Error::Precondition(_))));
}

#[test]
fn mixing_respects_the_fraction() {
    let public: Vec<QAItem> = (0..20).map(|i| item(&format!("p{i}"), "A")).collect();
    let synth: Vec<QAItem> = (0..20)
        .map(|i| QAItem { source: SourceKind::Synthetic, ..item(&format!("s{i}"), "A") })
        .collect();
    let mix = mix_corpus(&public, &synth, 0.7, 20, &mut rng::seeded(3)).unwrap();
    assert_eq!(mix.len(), 20);
    assert_eq!(mix.iter().filter(|i| i.source == SourceKind::Public).count(), 14);
    let again = mix_corpus(&public, &synth, 0.7, 20, &mut rng::seeded(3)).unwrap();
    assert_eq!(mix, again);
    assert!(matches!(
        mix_corpus(&public, &synth, 0.7, 40, &mut rng::seeded(3)),
        Err(Error::PoolExhausted { pool: "public", requested: 28, available: 20 })
    ));
    assert!(matches!(mix_corpus(&public, &synth, 1.5, 4, &mut rng::seeded(3)), Err(Error::ConfigInvalid(_))));
}

#[test]
fn public_count_rounds_half_up() {
    assert_eq!(public_count(10, 0.15), 2);
    assert_eq!(public_count(10, 0.7), 7);
    assert_eq!(public_count(3, 0.5), 2);
    assert_eq!(public_count(0, 0.7), 0);
    assert_eq!(public_count(5, 1.0), 5);
}

proptest! {
    #[test]
    fn anonymize_is_idempotent(text in "[A-Za-z0-9 ,.:/'-]{0,80}") {
        let once = anonymize(&text);
        prop_assert_eq!(anonymize(&once), once);
    }

    #[test]
    fn anonymize_keeps_text_without_digits_or_titles(text in "[a-z ,.]{0,60}") {
        prop_assert_eq!(anonymize(&text), text);
    }

    #[test]
    fn public_share_is_within_half_an_item(size in 0usize..500, frac in 0.0f64..=1.0) {
        let n = public_count(size, frac) as f64;
        prop_assert!((n - size as f64 * frac).abs() <= 0.5 + 1e-9);
    }
}
