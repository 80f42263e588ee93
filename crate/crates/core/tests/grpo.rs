
use proptest::prelude::*;
use rlvr_forge::corpus::QAItem;
use rlvr_forge::error::Error;
use rlvr_forge::grpo::{
    advantages, grpo_loss_and_grad, group_baseline, is_sparse, policy_logprob_and_grad, policy_step, sample_group,
    score_group, std_normalized_advantages, Action, Checkpoint, FeatureHasher, FormatChoice, PolicyParams, Prompt,
};
use rlvr_forge::reward::RewardWeights;
use rlvr_forge::rng;

fn item(stem: &str, n: usize) -> QAItem {
    QAItem {
        id: "q".into(),
        stem: stem.into(),
        options: (0..n).map(|i| (((b'A' + i as u8) as char).to_string(), format!("drug{i} tablet"))).collect(),
        answer: "B".into(),
        difficulty: None,
        source: Default::default(),
        flags: vec![],
        masked_entity: None,
        provenance: None,
    }
}

fn random_params(dim: usize, labels: usize, temperature: f64, seed: u64) -> PolicyParams {
    use rand::Rng;
    let mut r = rng::seeded(seed);
    let mut p = PolicyParams::zeros(dim, labels, temperature);
    p.theta.iter_mut().for_each(|t| *t = r.gen_range(-2.0..2.0));
    p
}

#[test]
fn features_are_unit_norm_and_sorted() {
    let h = FeatureHasher::new(64, 1);
    let f = h.features(&item("Fever, cough and fever again", 4));
    assert!((f.norm() - 1.0).abs() < 1e-12);
    assert!(f.indices.windows(2).all(|w| w[0] < w[1]));
    assert!(f.indices.iter().all(|&i| i < 64));
    // option text is tied to its label
    let mut swapped = item("Fever, cough and fever again", 4);
    let a = swapped.options["A"].clone();
    let b = swapped.options["B"].clone();
    swapped.options.insert("A".into(), b);
    swapped.options.insert("B".into(), a);
    assert_ne!(h.features(&swapped), f);
    assert_ne!(FeatureHasher::new(64, 2).features(&item("Fever", 4)), h.features(&item("Fever", 4)));
}

#[test]
fn sampling_is_seeded() {
    let p = random_params(32, 4, 1.0, 3);
    let prompt = Prompt::from_item(&item("chest pain", 4), &FeatureHasher::new(32, 9));
    let a = sample_group(&p, &prompt, 8, &mut rng::seeded(5)).unwrap();
    let b = sample_group(&p, &prompt, 8, &mut rng::seeded(5)).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|c| c.action.label < 'E'));
    assert!(matches!(sample_group(&p, &prompt, 1, &mut rng::seeded(5)), Err(Error::Precondition(_))));
}

#[test]
fn sampling_frequencies_follow_the_policy() {
    let p = random_params(16, 3, 0.7, 11);
    let prompt = Prompt::from_item(&item("dyspnea", 3), &FeatureHasher::new(16, 2));
    let (fmt, ans) = p.log_probs(&prompt).unwrap();
    let draws = sample_group(&p, &prompt, 20_000, &mut rng::seeded(1)).unwrap();
    for (i, lp) in ans.iter().enumerate() {
        let label = (b'A' + i as u8) as char;
        let freq = draws.iter().filter(|c| c.action.label == label).count() as f64 / draws.len() as f64;
        assert!((freq - lp.exp()).abs() < 0.015, "label {label}: {freq} vs {}", lp.exp());
    }
    let wf = draws.iter().filter(|c| c.action.format == FormatChoice::WellFormed).count() as f64 / draws.len() as f64;
    assert!((wf - fmt[0].exp()).abs() < 0.015);
}

#[test]
fn scoring_and_loss_errors() {
    let p = random_params(16, 4, 1.0, 4);
    let prompt = Prompt::from_item(&item("rash", 4), &FeatureHasher::new(16, 2));
    let w = RewardWeights::default();
    let cands = sample_group(&p, &prompt, 4, &mut rng::seeded(2)).unwrap();
    let scored = score_group(prompt.clone(), cands.clone(), &w, false).unwrap();
    let rewards = scored.rewards().unwrap();
    assert!(rewards.iter().all(|r| [0.0, 0.1, 1.0, 1.1].contains(r)));
    assert_eq!(scored.baseline, group_baseline(&rewards).unwrap());

    assert!(matches!(grpo_loss_and_grad(&p, &[]), Err(Error::EmptyBatch)));
    let mut unscored = scored.clone();
    unscored.candidates[0].reward = None;
    assert!(matches!(grpo_loss_and_grad(&p, &[scored.clone(), unscored]), Err(Error::UnscoredGroup(1))));
    let other = score_group(prompt.clone(), sample_group(&p, &prompt, 6, &mut rng::seeded(3)).unwrap(), &w, false).unwrap();
    assert!(matches!(grpo_loss_and_grad(&p, &[scored, other]), Err(Error::DimensionMismatch(_))));
}

#[test]
fn policy_step_guards() {
    let p = random_params(8, 2, 1.0, 1);
    assert!(matches!(policy_step(&p, &[0.0; 3], 1.0), Err(Error::DimensionMismatch(_))));
    let mut g = vec![0.0; p.len()];
    g[0] = f64::NAN;
    assert!(matches!(policy_step(&p, &g, 1.0), Err(Error::NonFiniteGradient)));
    g[0] = 1.0;
    let next = policy_step(&p, &g, 0.5).unwrap();
    assert_eq!(next.theta[0], p.theta[0] - 0.5);
    assert_eq!(next.theta[1..], p.theta[1..]);
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let ck = Checkpoint { params: random_params(8, 4, 0.9, 7), hash_seed: 42, config_hash: [7; 32] };
    let mut bytes = vec![];
    ck.write_to(&mut bytes).unwrap();
    assert_eq!(Checkpoint::read_from(bytes.as_slice()).unwrap(), ck);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);

    assert!(matches!(Checkpoint::read_from(&bytes[..bytes.len() - 1]), Err(Error::BadCheckpoint(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::read_from(bad.as_slice()), Err(Error::BadCheckpoint(_))));
    let mut bad = bytes.clone();
    bad[8] = 9;
    assert!(matches!(Checkpoint::read_from(bad.as_slice()), Err(Error::BadCheckpoint(_))));
}

#[test]
fn greedy_prefers_lower_label_on_ties() {
    let p = PolicyParams::zeros(8, 4, 1.0);
    let prompt = Prompt::from_item(&item("anything", 4), &FeatureHasher::new(8, 1));
    assert_eq!(
        p.greedy_action(&prompt).unwrap(),
        Action { format: FormatChoice::WellFormed, label: 'A' }
    );
}

proptest! {
    #[test]
    fn advantages_center_the_group(rewards in prop::collection::vec(-10.0f64..10.0, 2..32)) {
        let adv = advantages(&rewards).unwrap();
        let scale = rewards.iter().map(|r| r.abs()).fold(1.0, f64::max);
        prop_assert!(adv.iter().sum::<f64>().abs() <= 1e-12 * scale * rewards.len() as f64);
        let n = std_normalized_advantages(&rewards).unwrap();
        prop_assert!(n.iter().sum::<f64>().abs() <= 1e-9 * rewards.len() as f64);
    }

    #[test]
    fn uniform_groups_are_exactly_zero(r in -5.0f64..5.0, k in 2usize..32) {
        let rewards = vec![r; k];
        prop_assert!(is_sparse(&rewards));
        prop_assert!(advantages(&rewards).unwrap().iter().all(|&a| a == 0.0));
        prop_assert_eq!(group_baseline(&rewards).unwrap(), r);
    }

    #[test]
    fn logprob_gradient_matches_finite_differences(
        seed in any::<u64>(),
        temperature in 0.3f64..3.0,
        n in 2usize..=5,
        label in 0usize..5,
        well_formed in any::<bool>(),
    ) {
        let label = label % n;
        let p = random_params(12, 5, temperature, seed);
        let prompt = Prompt::from_item(&item(&format!("token{seed} fever"), n), &FeatureHasher::new(12, seed));
        let action = Action {
            format: if well_formed { FormatChoice::WellFormed } else { FormatChoice::Malformed },
            label: (b'A' + label as u8) as char,
        };
        let (lp, grad) = policy_logprob_and_grad(&p, &prompt, &action).unwrap();
        prop_assert!(lp <= 0.0);
        let h = 1e-6;
        for (i, &g) in grad.iter().enumerate() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.theta[i] += h;
            minus.theta[i] -= h;
            let fd = (policy_logprob_and_grad(&plus, &prompt, &action).unwrap().0
                - policy_logprob_and_grad(&minus, &prompt, &action).unwrap().0) / (2.0 * h);
            prop_assert!((fd - g).abs() <= 1e-6 * (1.0 + fd.abs()), "coord {}: {} vs {}", i, fd, g);
        }
    }

    #[test]
    fn probabilities_are_normalized_and_masked(seed in any::<u64>(), n in 2usize..=6) {
        let p = random_params(10, 6, 1.0, seed);
        let prompt = Prompt::from_item(&item("x y z", n), &FeatureHasher::new(10, 3));
        let (fmt, ans) = p.log_probs(&prompt).unwrap();
        prop_assert_eq!(ans.len(), n);
        prop_assert!((fmt.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((ans.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn too_many_options_for_the_policy() {
    let p = PolicyParams::zeros(8, 4, 1.0);
    let prompt = Prompt::from_item(&item("x", 5), &FeatureHasher::new(8, 1));
    assert!(matches!(p.log_probs(&prompt), Err(Error::DimensionMismatch(_))));
}
