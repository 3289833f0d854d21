use std::collections::BTreeSet;

use exgrpo::experience::{
    bucket_sample_with_buckets, bucket_weights, multinomial_counts, partition, record_group,
    RecordOutcome, ReplayBuffer, RetiredSet,
};
use exgrpo::grpo::{AdvantageMode, GroupRollout};
use exgrpo::snapshot::BufferSnapshot;
use exgrpo::{ClassId, QuestionId, Trajectory};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn group(id: u32, rewards: &[u8], variant: usize) -> GroupRollout {
    let trajectories = rewards
        .iter()
        .enumerate()
        .map(|(i, &r)| Trajectory {
            question_id: QuestionId(id),
            tokens: vec![(variant + i) % 3, 3],
            behavior_logprobs: vec![-0.5 - i as f64, -0.25],
            reward: Some(r),
            producer_version: variant as u64,
            cached_metric: None,
        })
        .collect();
    GroupRollout::new(
        QuestionId(id),
        ClassId(id),
        trajectories,
        AdvantageMode::default(),
        None,
    )
    .unwrap()
}

fn events() -> impl Strategy<Value = Vec<(u32, Vec<u8>, usize)>> {
    prop::collection::vec(
        (0u32..12, prop::collection::vec(0u8..2, 4), 0usize..5),
        0..60,
    )
}

fn replay(seq: &[(u32, Vec<u8>, usize)], cap: Option<usize>) -> (ReplayBuffer, RetiredSet) {
    let mut buffer = ReplayBuffer::new(4, cap);
    let mut retired = RetiredSet::new();
    for (id, rewards, variant) in seq {
        record_group(&mut buffer, &mut retired, &group(*id, rewards, *variant));
    }
    (buffer, retired)
}

proptest! {
    #[test]
    fn record_group_keeps_invariants(seq in events(), cap in prop::option::of(1usize..4)) {
        let mut buffer = ReplayBuffer::new(4, cap);
        let mut retired = RetiredSet::new();
        let mut seen_retired = BTreeSet::new();
        for (id, rewards, variant) in &seq {
            let was_retired = retired.contains(QuestionId(*id));
            let outcome = record_group(&mut buffer, &mut retired, &group(*id, rewards, *variant));
            let s = rewards.iter().filter(|&&r| r == 1).count();
            if s == 4 {
                prop_assert_eq!(outcome, RecordOutcome::Retired);
            }
            if was_retired {
                prop_assert!(!buffer.contains(QuestionId(*id)));
            }
            prop_assert!(buffer.violations(&retired).is_empty(), "{:?}", buffer.violations(&retired));
            seen_retired.extend(retired.iter());
            prop_assert_eq!(seen_retired.len(), retired.len());
        }
    }

    #[test]
    fn snapshot_round_trips(seq in events(), cap in prop::option::of(1usize..4), step: u64) {
        let (buffer, retired) = replay(&seq, cap);
        let snap = BufferSnapshot { step, buffer, retired };
        let back = BufferSnapshot::from_text(&snap.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), snap.to_text());
        prop_assert_eq!(back, snap);
    }

    #[test]
    fn bucket_sample_is_distinct_and_buffered(seq in events(), n in 0usize..16, seed: u64) {
        let (buffer, retired) = replay(&seq, None);
        prop_assume!(!buffer.is_empty());
        let part = partition(&buffer, 4).unwrap();
        let w = bucket_weights(&part.nonempty(), 4, 0.5, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if n > part.total() {
            prop_assert!(bucket_sample_with_buckets(&part, &w, n, &mut rng).is_err());
            return Ok(());
        }
        let drawn = bucket_sample_with_buckets(&part, &w, n, &mut rng).unwrap();
        prop_assert_eq!(drawn.len(), n);
        let ids: BTreeSet<_> = drawn.iter().map(|&(_, id)| id).collect();
        prop_assert_eq!(ids.len(), drawn.len());
        for (k, id) in drawn {
            prop_assert!(buffer.contains(id) && !retired.contains(id));
            prop_assert_eq!(part.bucket_of(id), Some(k));
        }
    }

    #[test]
    fn multinomial_counts_sum_to_n(n in 0usize..200, raw in prop::collection::vec(0.0f64..1.0, 1..6), seed: u64) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let p: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = multinomial_counts(n, &p, &mut rng).unwrap();
        prop_assert_eq!(c.iter().sum::<usize>(), n);
        for (ci, pi) in c.iter().zip(&p) {
            if *pi == 0.0 {
                prop_assert_eq!(*ci, 0);
            }
        }
    }

    #[test]
    fn bucket_weights_are_a_distribution(keys in prop::collection::btree_set(1usize..8, 1..7), mu in 0.0f64..1.0, sigma in 0.05f64..2.0) {
        let keys: Vec<usize> = keys.into_iter().collect();
        let w = bucket_weights(&keys, 8, mu, sigma).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x > 0.0));
    }
}
