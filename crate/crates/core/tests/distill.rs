use std::path::{Path, PathBuf};

use rlvr_forge::corpus::QAItem;
use rlvr_forge::distill::{
    build_sft_dataset, generate_candidates, leaks_key, prompt_hash, DistillConfig, FixtureTeacher, ItemOutcome,
    PromptTemplates, ScriptedTeacher, Strategy, TeacherClient,
};
use rlvr_forge::error::{Error, Result};
use serde::Deserialize;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn items() -> Vec<QAItem> {
    rlvr_forge::jsonl::read(&fixture("distill_items.jsonl")).unwrap()
}

#[derive(Deserialize)]
struct Row {
    id: String,
    outcome: ItemOutcome,
    strategy_trace: Vec<Strategy>,
}

#[test]
fn recorded_transcript_reproduces_the_outcome_table() {
    let teacher = FixtureTeacher::load(&fixture("distill_transcript.jsonl")).unwrap();
    let ds = build_sft_dataset(&items(), &teacher, &DistillConfig::default(), &PromptTemplates::default()).unwrap();
    let table: Vec<Row> = rlvr_forge::jsonl::read(&fixture("distill_outcomes.jsonl")).unwrap();
    assert_eq!(ds.report.items.len(), table.len());
    for (got, want) in ds.report.items.iter().zip(&table) {
        assert_eq!(got.id, want.id);
        assert_eq!(got.outcome, want.outcome, "{}", got.id);
        assert_eq!(got.strategy_trace, want.strategy_trace, "{}", got.id);
    }
    assert_eq!((ds.report.passed_first, ds.report.passed_refined, ds.report.dropped), (3, 4, 3));
}

#[test]
fn shortest_passing_sample_is_kept() {
    let teacher = FixtureTeacher::load(&fixture("distill_transcript.jsonl")).unwrap();
    let ds = build_sft_dataset(&items(), &teacher, &DistillConfig::default(), &PromptTemplates::default()).unwrap();
    let first = ds.records.iter().find(|r| r.id == "cot-01").unwrap();
    let prompt = PromptTemplates::default().generation(true).render(&items()[0], None);
    let all = teacher.complete(&prompt, 4, 0.7).unwrap();
    let shortest = all.iter().map(|c| c.chars().count()).min().unwrap();
    assert_eq!(first.cot.chars().count(), shortest);
    assert!(ds.records.iter().all(|r| !leaks_key(&r.cot, r.answer.chars().next().unwrap())));
}

#[test]
fn missing_or_short_transcripts_are_teacher_errors() {
    let teacher = FixtureTeacher::default();
    let err = generate_candidates(&teacher, &items()[0], 2, 0.7, &PromptTemplates::default(), true).unwrap_err();
    assert!(matches!(err, Error::TeacherUnavailable(_)));

    let mut teacher = FixtureTeacher::default();
    let prompt = PromptTemplates::default().generation(true).render(&items()[0], None);
    teacher.entries.insert(prompt_hash(&prompt), vec!["one".into()]);
    let err = generate_candidates(&teacher, &items()[0], 2, 0.7, &PromptTemplates::default(), true).unwrap_err();
    assert!(matches!(err, Error::TeacherUnavailable(_)));
}

struct Stingy;
impl TeacherClient for Stingy {
    fn complete(&self, _: &str, _n: usize, _: f64) -> Result<Vec<String>> {
        Ok(vec!["only one".into()])
    }
}

#[test]
fn teachers_must_return_exactly_n() {
    let err = generate_candidates(&Stingy, &items()[0], 3, 0.7, &PromptTemplates::default(), true).unwrap_err();
    assert!(matches!(err, Error::TeacherUnavailable(_)));
}

#[test]
fn hidden_answer_prompt_does_not_show_the_key() {
    let t = PromptTemplates::default();
    let it = &items()[0];
    let hidden = t.generation(false).render(it, None);
    let visible = t.generation(true).render(it, None);
    assert!(!hidden.contains("verified correct option"));
    assert!(visible.contains(&format!("The verified correct option is {}.", it.answer)));
    assert!(hidden.contains(&it.stem) && hidden.contains("A. "));
}

#[test]
fn config_is_validated() {
    let teacher = ScriptedTeacher(|_: &str, _| String::new());
    for bad in [
        DistillConfig { k: 0, ..Default::default() },
        DistillConfig { max_rounds: 0, ..Default::default() },
        DistillConfig { min_chars: 10, max_chars: 5, ..Default::default() },
    ] {
        let err = build_sft_dataset(&items(), &teacher, &bad, &PromptTemplates::default()).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid(_)));
    }
}

#[test]
fn strategy_cycle_wraps() {
    assert_eq!(Strategy::for_round(1), Strategy::Backtracking);
    assert_eq!(Strategy::for_round(3), Strategy::SelfCorrection);
    assert_eq!(Strategy::for_round(4), Strategy::Backtracking);
}
