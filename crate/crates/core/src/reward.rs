//! Verifiable reward: answer-tag format plus final-answer correctness.
//!
//! Answer-tag grammar:
//!
//! ```text
//! "<answer>" WS* CONTENT WS* "</answer>"
//! CONTENT = one option letter, optionally followed by one of "." ")" ":"
//! ```
//!
//! The open tag and the close tag must each occur exactly once in the whole
//! completion. Tag names are case-sensitive; the option letter is not.
//! Nothing else about the completion (length, wording) affects the reward.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OPEN_TAG: &str = "<answer>";
pub const CLOSE_TAG: &str = "</answer>";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_correct: f64,
    pub w_format: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_correct: 1.0,
            w_format: 0.1,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = self.w_correct.is_finite()
            && self.w_format.is_finite()
            && self.w_correct >= 0.0
            && self.w_format >= 0.0
            && self.w_correct + self.w_format > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(format!(
                "reward weights must be nonnegative with a positive sum, got {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format_ok: bool,
    pub extracted: Option<char>,
    pub correct: bool,
    pub total: f64,
}

/// Option labels `A`, `B`, ... for an `n`-option question.
pub fn labels(n: usize) -> Vec<char> {
    (0..n).map(|i| (b'A' + i as u8) as char).collect()
}

/// Index of a label letter (`'A'` -> 0).
pub fn label_index(label: char) -> Option<usize> {
    label
        .is_ascii_uppercase()
        .then(|| (label as u8 - b'A') as usize)
}

/// Content between the single open tag and the single close tag.
fn tag_content(text: &str) -> Option<&str> {
    if text.matches(OPEN_TAG).count() != 1 || text.matches(CLOSE_TAG).count() != 1 {
        return None;
    }
    let start = text.find(OPEN_TAG)? + OPEN_TAG.len();
    let end = text.find(CLOSE_TAG)?;
    (end >= start).then(|| &text[start..end])
}

/// True iff the text holds exactly one well-nested answer pair with
/// non-blank content.
pub fn check_format(text: &str) -> bool {
    tag_content(text).is_some_and(|c| !c.trim().is_empty())
}

/// The option label inside the answer tag, if the tag is well formed and its
/// content is a single letter from `valid_labels` (optionally followed by
/// one of `.`, `)` or `:`).
pub fn extract_answer(text: &str, valid_labels: &[char]) -> Option<char> {
    let content = tag_content(text)?.trim();
    let content = content
        .strip_suffix(['.', ')', ':'])
        .unwrap_or(content);
    let mut chars = content.chars();
    let letter = chars.next()?;
    if chars.next().is_some() || !letter.is_ascii_alphabetic() {
        return None;
    }
    let letter = letter.to_ascii_uppercase();
    valid_labels.contains(&letter).then_some(letter)
}

pub fn compute_reward(
    text: &str,
    key: char,
    labels: &[char],
    weights: &RewardWeights,
) -> RewardBreakdown {
    debug_assert!(labels.contains(&key), "answer key must be a valid label");
    let format_ok = check_format(text);
    let extracted = extract_answer(text, labels);
    let correct = extracted == Some(key);
    let mut total = 0.0;
    if correct {
        total += weights.w_correct;
    }
    if format_ok {
        total += weights.w_format;
    }
    RewardBreakdown {
        format_ok,
        extracted,
        correct,
        total,
    }
}
