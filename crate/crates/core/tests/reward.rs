use proptest::prelude::*;
use rlvr_forge::reward::{check_format, compute_reward, extract_answer, labels, RewardWeights};

const ABCD: [char; 4] = ['A', 'B', 'C', 'D'];

#[test]
fn weights_are_validated() {
    assert!(RewardWeights::default().validate().is_ok());
    assert!(RewardWeights { w_correct: -1.0, w_format: 0.1 }.validate().is_err());
    assert!(RewardWeights { w_correct: 0.0, w_format: 0.0 }.validate().is_err());
    assert!(RewardWeights { w_correct: f64::NAN, w_format: 0.1 }.validate().is_err());
}

#[test]
fn custom_weights_apply() {
    let w = RewardWeights { w_correct: 2.0, w_format: 0.5 };
    assert_eq!(compute_reward("<answer>C</answer>", 'C', &ABCD, &w).total, 2.5);
    assert_eq!(compute_reward("<answer>D</answer>", 'C', &ABCD, &w).total, 0.5);
    assert_eq!(compute_reward("C", 'C', &ABCD, &w).total, 0.0);
}

#[test]
fn label_sets() {
    assert_eq!(labels(3), ['A', 'B', 'C']);
    assert_eq!(labels(21).last(), Some(&'U'));
    assert_eq!(extract_answer("<answer>U</answer>", &labels(21)), Some('U'));
    assert_eq!(extract_answer("<answer>U</answer>", &labels(20)), None);
}

proptest! {
    #[test]
    fn tagged_label_round_trips(
        prefix in "[^<>]{0,200}",
        suffix in "[^<>]{0,200}",
        ix in 0usize..4,
        lower in any::<bool>(),
        punct in prop::sample::select(vec!["", ".", ")", ":"]),
        ws in prop::sample::select(vec!["", " ", "\n", "\t "]),
    ) {
        let l = ABCD[ix];
        let shown = if lower { l.to_ascii_lowercase() } else { l };
        let text = format!("{prefix}<answer>{ws}{shown}{punct}{ws}</answer>{suffix}");
        prop_assert!(check_format(&text));
        prop_assert_eq!(extract_answer(&text, &ABCD), Some(l));
        let r = compute_reward(&text, l, &ABCD, &RewardWeights::default());
        prop_assert!(r.correct && r.format_ok);
        prop_assert_eq!(r.total, 1.0 + 0.1);
    }

    #[test]
    fn untagged_text_never_scores(text in "[^<>]{0,300}", ix in 0usize..4) {
        let r = compute_reward(&text, ABCD[ix], &ABCD, &RewardWeights::default());
        prop_assert_eq!(r.total, 0.0);
        prop_assert!(!r.format_ok && r.extracted.is_none());
    }

    #[test]
    fn a_second_tag_pair_invalidates(a in 0usize..4, b in 0usize..4, mid in "[^<>]{0,40}") {
        let text = format!("<answer>{}</answer>{mid}<answer>{}</answer>", ABCD[a], ABCD[b]);
        prop_assert!(!check_format(&text));
        prop_assert_eq!(extract_answer(&text, &ABCD), None);
    }
}
