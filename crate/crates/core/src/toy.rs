//! Synthetic corpora for exercising the training loop.
//!
//! In the linear corpus every stem carries one cue word tied to the key
//! label, plus filler words whose count grows with the difficulty tier, so
//! a linear policy over hashed tokens can realize the answer rule exactly.
//! The adversarial extension appends twin pairs: two items with identical
//! text, private to the pair, whose keys differ. No policy over the item
//! text can answer both.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Difficulty, QAItem, SourceKind};
use crate::error::{Error, Result};
use crate::reward::labels;
use crate::rng;

const CUES: [&[&str]; 4] = [
    &["pallor", "petechiae", "purpura"],
    &["wheeze", "stridor", "rhonchi"],
    &["jaundice", "ascites", "asterixis"],
    &["ataxia", "aphasia", "diplopia"],
];

const OPTION_WORDS: [&str; 24] = [
    "aspirin", "heparin", "insulin", "digoxin", "warfarin", "morphine", "atropine", "lithium",
    "albuterol", "ceftriaxone", "furosemide", "metformin", "naloxone", "prednisone", "amiodarone",
    "labetalol", "vancomycin", "clopidogrel", "haloperidol", "ondansetron", "octreotide",
    "mannitol", "nitroglycerin", "adenosine",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub n_items: usize,
    /// Fraction of Easy, Moderate and Difficult items.
    pub tier_fractions: [f64; 3],
    /// Filler words per stem by tier.
    pub filler_counts: [usize; 3],
    pub filler_vocab: usize,
    pub adversarial_pairs: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            n_items: 500,
            tier_fractions: [0.40, 0.35, 0.25],
            filler_counts: [2, 6, 14],
            filler_vocab: 300,
            adversarial_pairs: 0,
        }
    }
}

pub const TOY_OPTIONS: usize = 4;

fn options(rng: &mut rng::Rng) -> BTreeMap<String, String> {
    let words: Vec<_> = OPTION_WORDS.choose_multiple(rng, TOY_OPTIONS).collect();
    labels(TOY_OPTIONS)
        .into_iter()
        .zip(words)
        .map(|(l, w)| (l.to_string(), (*w).to_string()))
        .collect()
}

fn item(id: String, stem: String, options: BTreeMap<String, String>, key: char, tier: Difficulty) -> QAItem {
    QAItem {
        id,
        stem,
        options,
        answer: key.to_string(),
        difficulty: Some(tier),
        source: SourceKind::Synthetic,
        flags: vec![],
        masked_entity: None,
        provenance: None,
    }
}

/// Builds the linear corpus followed by any adversarial twin pairs.
pub fn toy_corpus(config: &ToyConfig, seed: u64) -> Result<Vec<QAItem>> {
    let total: f64 = config.tier_fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 || config.tier_fractions.iter().any(|f| *f < 0.0) {
        return Err(Error::ConfigInvalid("tier_fractions must be nonnegative and sum to 1".into()));
    }
    if config.filler_vocab == 0 {
        return Err(Error::ConfigInvalid("filler_vocab must be positive".into()));
    }
    let n_easy = (config.n_items as f64 * config.tier_fractions[0]).round() as usize;
    let n_mod = (config.n_items as f64 * config.tier_fractions[1]).round() as usize;
    let label_set = labels(TOY_OPTIONS);
    let mut out = Vec::with_capacity(config.n_items + 2 * config.adversarial_pairs);
    for i in 0..config.n_items {
        let mut rng = rng::stream(seed, &[0x70f, i as u64]);
        let tier_ix = if i < n_easy {
            0
        } else if i < n_easy + n_mod {
            1
        } else {
            2
        };
        let key_ix = rng.gen_range(0..TOY_OPTIONS);
        let cue = CUES[key_ix][rng.gen_range(0..CUES[key_ix].len())];
        let mut words: Vec<String> = (0..config.filler_counts[tier_ix])
            .map(|_| format!("w{}", rng.gen_range(0..config.filler_vocab)))
            .collect();
        let at = rng.gen_range(0..=words.len());
        words.insert(at, cue.to_string());
        let stem = format!("Question: patient presents with {}.", words.join(" "));
        out.push(item(
            format!("toy-{i:04}"),
            stem,
            options(&mut rng),
            label_set[key_ix],
            Difficulty::ALL[tier_ix],
        ));
    }
    for p in 0..config.adversarial_pairs {
        let mut rng = rng::stream(seed, &[0xad5, p as u64]);
        let stem = format!("Riddle t{p}x t{p}y t{p}z.");
        let opts: BTreeMap<String, String> = label_set
            .iter()
            .map(|l| (l.to_string(), format!("o{p}{}", l.to_ascii_lowercase())))
            .collect();
        let first = rng.gen_range(0..TOY_OPTIONS);
        let second = (first + rng.gen_range(1..TOY_OPTIONS)) % TOY_OPTIONS;
        for (twin, key_ix) in [first, second].into_iter().enumerate() {
            out.push(item(
                format!("adv-{p:03}-{twin}"),
                stem.clone(),
                opts.clone(),
                label_set[key_ix],
                Difficulty::Difficult,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiers_and_keys() {
        let items = toy_corpus(&ToyConfig::default(), 1).unwrap();
        assert_eq!(items.len(), 500);
        let count = |t| items.iter().filter(|i| i.difficulty == Some(t)).count();
        assert_eq!(
            [count(Difficulty::Easy), count(Difficulty::Moderate), count(Difficulty::Difficult)],
            [200, 175, 125]
        );
        for it in &items {
            it.check_invariants().unwrap();
            let k = crate::reward::label_index(it.key()).unwrap();
            assert!(CUES[k].iter().any(|c| it.stem.contains(c)));
        }
        assert_eq!(items, toy_corpus(&ToyConfig::default(), 1).unwrap());
    }

    #[test]
    fn twins_share_text_but_not_keys() {
        let cfg = ToyConfig { n_items: 10, adversarial_pairs: 3, ..Default::default() };
        let items = toy_corpus(&cfg, 2).unwrap();
        for pair in items[10..].chunks(2) {
            assert_eq!(pair[0].stem, pair[1].stem);
            assert_eq!(pair[0].options, pair[1].options);
            assert_ne!(pair[0].answer, pair[1].answer);
        }
    }
}
