mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rehab_assess::data::{synthesize_exercise, ExerciseKind};
use rehab_assess::feedback::{
    extract_feedback, feedback_svg, joint_role, parse_roles_csv, render_feedback, roles_csv, summarize_roles,
    AttentionFeedback, FeedbackFormat,
};
use rehab_assess::model::ModelConfig;
use rehab_assess::{JointGraph, Model64, Tensor};

fn maps() -> impl Strategy<Value = (Tensor<f64>, Tensor<f64>)> {
    (1usize..5, 1usize..7).prop_flat_map(|(t, n)| {
        let m = move || {
            proptest::collection::vec(0.0f64..1.0, t * n * n).prop_map(move |v| Tensor::new([t, n, n], v).unwrap())
        };
        (m(), m())
    })
}

proptest! {
    #[test]
    fn roles_are_linear_in_the_map((a, b) in maps(), s in -3.0f64..3.0) {
        let combo = Tensor::from_fn(a.shape().to_vec(), |i| a.data()[i] + s * b.data()[i]);
        let (ra, rb, rc) = (joint_role(&a).unwrap(), joint_role(&b).unwrap(), joint_role(&combo).unwrap());
        for i in 0..rc.len() {
            prop_assert!((rc.data()[i] - ra.data()[i] - s * rb.data()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn roles_follow_joint_relabeling((a, _) in maps(), seed in any::<u64>()) {
        let (t, n) = (a.shape()[0], a.shape()[1]);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut common::rng(seed));
        let mut moved = Tensor::zeros([t, n, n]);
        for f in 0..t {
            for i in 0..n {
                for j in 0..n {
                    moved.set(&[f, perm[i], perm[j]], a.get(&[f, i, j]));
                }
            }
        }
        let (ra, rm) = (joint_role(&a).unwrap(), joint_role(&moved).unwrap());
        for f in 0..t {
            for j in 0..n {
                prop_assert!((ra.get(&[f, j]) - rm.get(&[f, perm[j]])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn summary_spans_unit_interval((a, _) in maps()) {
        let s = summarize_roles(&joint_role(&a).unwrap()).unwrap();
        prop_assert!(s.iter().all(|v| (0.0..=1.0).contains(v)));
        let distinct = s.iter().any(|&v| v != s[0]);
        if distinct {
            prop_assert!(s.iter().any(|&v| v == 0.0) && s.iter().any(|&v| v == 1.0));
        }
    }
}

fn model_feedback() -> (Model64, AttentionFeedback) {
    let model = Model64::new(ModelConfig::tiny(), JointGraph::kimore()).unwrap();
    let s = synthesize_exercise(ExerciseKind::ArmLift, 0.8, 14, 6, (0.0, 1.0)).unwrap();
    let fb = extract_feedback(&model, &s.sequence).unwrap();
    (model, fb)
}

#[test]
fn model_roles_sum_to_joint_count_per_frame() {
    let (model, fb) = model_feedback();
    assert_eq!(fb.joint_role.shape(), &[14, 25]);
    for frame in fb.joint_role.data().chunks(25) {
        assert!((frame.iter().sum::<f64>() - 25.0).abs() < 1e-9);
    }
    let s = synthesize_exercise(ExerciseKind::ArmLift, 0.8, 14, 6, (0.0, 1.0)).unwrap();
    assert_eq!(fb.score, model.predict_sequence(&s.sequence).unwrap());
}

#[test]
fn csv_round_trip() {
    let (_, fb) = model_feedback();
    let text = roles_csv(&fb.joint_role).unwrap();
    assert!(text.starts_with("joint_0,joint_1,"));
    assert_eq!(parse_roles_csv(&text).unwrap(), fb.joint_role);
}

#[test]
fn svg_is_well_formed() {
    let (model, fb) = model_feedback();
    let svg = feedback_svg(&fb, model.graph()).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let circles = doc.descendants().filter(|n| n.has_tag_name("circle")).count();
    let lines = doc.descendants().filter(|n| n.has_tag_name("line")).count();
    let rects = doc.descendants().filter(|n| n.has_tag_name("rect")).count();
    assert_eq!(circles, 25);
    assert_eq!(lines, 24);
    assert_eq!(rects, 1 + 14 * 25);
}

#[test]
fn flat_summary_draws_minimum_radius() {
    let (model, mut fb) = model_feedback();
    fb.summary_role = vec![0.0; 25];
    let svg = feedback_svg(&fb, model.graph()).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    for c in doc.descendants().filter(|n| n.has_tag_name("circle")) {
        assert_eq!(c.attribute("r"), Some("3.00"));
    }
}

#[test]
fn render_writes_both_formats_and_checks_graph() {
    let (model, fb) = model_feedback();
    let dir = tempfile::tempdir().unwrap();
    for format in FeedbackFormat::parse_list("csv,svg").unwrap() {
        let path = dir.path().join(format!("out.{}", format.extension()));
        render_feedback(&fb, model.graph(), &path, format).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
    }
    let small = JointGraph::new("small", 3, &[(0, 1)]).unwrap();
    assert!(feedback_svg(&fb, &small).is_err());
    assert!(FeedbackFormat::parse_list("svg,pdf").is_err());
}
