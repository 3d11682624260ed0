mod common;

use proptest::prelude::*;
use rehab_assess::data::{
    load_sequence, make_batches, normalize_sequence, synthesize_corpus, synthesize_exercise, train_test_split,
    write_sequence, ExerciseKind, NormalizeSpec, SkeletonSequence,
};
use rehab_assess::graph::kimore;
use rehab_assess::{Error, Tensor};

fn movement(seq: &SkeletonSequence, joint: usize) -> f64 {
    let t = seq.frame_count();
    let first = seq.point(0, joint);
    (1..t)
        .map(|f| {
            let p = seq.point(f, joint);
            (0..3).map(|c| (p[c] - first[c]).powi(2)).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

#[test]
fn arm_lift_moves_the_arms_far_more_than_the_legs() {
    let s = synthesize_exercise(ExerciseKind::ArmLift, 1.0, 30, 3, (0.0, 1.0)).unwrap();
    let arm = kimore::ARM_CHAIN
        .iter()
        .map(|&j| movement(&s.sequence, j))
        .fold(0.0, f64::max);
    let leg = kimore::LEGS
        .iter()
        .map(|&j| movement(&s.sequence, j))
        .fold(0.0, f64::max);
    assert!(arm > 0.3, "{arm}");
    assert!(leg < 0.01, "{leg}");
}

#[test]
fn corpus_is_seeded_and_in_range() {
    let a = synthesize_corpus(ExerciseKind::Squat, 6, (0.2, 0.9), (10, 20), (0.0, 50.0), 11).unwrap();
    let b = synthesize_corpus(ExerciseKind::Squat, 6, (0.2, 0.9), (10, 20), (0.0, 50.0), 11).unwrap();
    assert_eq!(a, b);
    for s in &a {
        assert!((10.0..=45.0).contains(&s.score));
        assert!((10..=20).contains(&s.sequence.frame_count()));
    }
    assert!(synthesize_corpus(ExerciseKind::Squat, 0, (0.2, 0.9), (10, 20), (0.0, 50.0), 11).is_err());
}

#[test]
fn csv_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = synthesize_exercise(ExerciseKind::Squat, 0.4, 12, 2, (0.0, 1.0)).unwrap();
    let path = dir.path().join("s.csv");
    write_sequence(&path, &s.sequence).unwrap();
    let back = load_sequence(&path, 25).unwrap();
    assert_eq!(back.frames(), s.sequence.frames());
    assert!(matches!(load_sequence(&path, 24), Err(Error::Format(_))));
    assert!(load_sequence(dir.path().join("missing.csv"), 25).is_err());
}

fn sequence_strategy() -> impl Strategy<Value = SkeletonSequence> {
    (1usize..6, 2usize..6).prop_flat_map(|(t, n)| {
        proptest::collection::vec(-2.0f64..2.0, t * n * 3)
            .prop_map(move |v| SkeletonSequence::new("p", Tensor::new([t, n, 3], v).unwrap()).unwrap())
    })
}

proptest! {
    #[test]
    fn normalization_ignores_translation_and_scale(
        seq in sequence_strategy(),
        shift in proptest::array::uniform3(-5.0f64..5.0),
        scale in 0.2f64..5.0,
    ) {
        let spec = NormalizeSpec { root: 0, torso_top: 1 };
        let base = normalize_sequence(&seq, spec);
        let moved = SkeletonSequence::new(
            "q",
            Tensor::from_fn(seq.frames().shape().to_vec(), |i| scale * seq.frames().data()[i] + shift[i % 3]),
        )
        .unwrap();
        match (base, normalize_sequence(&moved, spec)) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.frames().data().iter().zip(b.frames().data()) {
                    prop_assert!((x - y).abs() < 1e-8);
                }
                for f in 0..a.frame_count() {
                    prop_assert!(a.point(f, 0).iter().all(|v| v.abs() < 1e-12));
                }
            }
            (Err(_), _) | (_, Err(_)) => {}
        }
    }

    #[test]
    fn split_is_a_seeded_partition(n in 2usize..60, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (train, test) = train_test_split(&items, frac, seed).unwrap();
        prop_assert!(!train.is_empty() && !test.is_empty());
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, items.clone());
        prop_assert_eq!(train_test_split(&items, frac, seed).unwrap(), (train, test));
    }
}

#[test]
fn batches_cover_every_sample_once() {
    let samples = synthesize_corpus(ExerciseKind::ArmLift, 11, (0.5, 1.0), (8, 14), (0.0, 1.0), 5).unwrap();
    let batches = make_batches(&samples, 4, 9).unwrap();
    assert_eq!(batches.iter().map(|b| b.len()).collect::<Vec<_>>(), vec![4, 4, 3]);
    let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..11).collect::<Vec<_>>());
    for b in &batches {
        for (row, &i) in b.indices.iter().enumerate() {
            let t = samples[i].sequence.frame_count();
            assert_eq!(b.lengths[row], t);
            let keep = &b.mask[row * b.max_frames()..(row + 1) * b.max_frames()];
            assert!(keep[..t].iter().all(|&k| k) && keep[t..].iter().all(|&k| !k));
        }
    }
}
