//! Synthetic exercise performances on the built-in 25-joint skeleton.
//!
//! Each sample starts from a fixed front-view rest pose, animates one
//! exercise with a smooth angle profile, and adds per-sample body scale,
//! position and sensor noise. Lower quality shrinks the movement amplitude
//! and mixes in a smooth random wobble, so the trajectory drifts further
//! from the ideal one as quality falls.

use std::f64::consts::{FRAC_PI_2, PI};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::sequence::{LabeledSample, SkeletonSequence, COORDS};
use crate::error::{Error, Result};
use crate::graph::kimore as k;
use crate::rng::{Rng, SeedStreams};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExerciseKind {
    ArmLift,
    Squat,
}

impl FromStr for ExerciseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arm_lift" => Ok(ExerciseKind::ArmLift),
            "squat" => Ok(ExerciseKind::Squat),
            other => Err(Error::Config(format!(
                "unknown exercise kind {other:?} (expected arm_lift or squat)"
            ))),
        }
    }
}

impl std::fmt::Display for ExerciseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExerciseKind::ArmLift => "arm_lift",
            ExerciseKind::Squat => "squat",
        })
    }
}

/// Full control over a generated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthOptions {
    pub kind: ExerciseKind,
    pub quality: f64,
    pub frames: usize,
    pub seed: u64,
    pub score_range: (f64, f64),
    /// Position of the movement peak as a fraction of the repetition; 0.5
    /// gives a symmetric raised cosine.
    pub peak: f64,
    /// Play the movement backwards in time.
    pub reversed: bool,
    /// Elbow flexion amplitude in radians (arm lift only).
    pub forearm_flex: f64,
    /// Delay of the elbow flexion relative to the shoulder, as a fraction of
    /// the repetition.
    pub forearm_lag: f64,
    /// Overrides the quality-derived score.
    pub score: Option<f64>,
}

impl SynthOptions {
    pub fn new(kind: ExerciseKind, quality: f64, frames: usize, seed: u64) -> Self {
        SynthOptions {
            kind,
            quality,
            frames,
            seed,
            score_range: (0.0, 50.0),
            peak: 0.5,
            reversed: false,
            forearm_flex: 0.0,
            forearm_lag: 0.0,
            score: None,
        }
    }
}

/// Rises smoothly from 0 to 1 at `peak`, then falls back to 0 at `u = 1`.
pub fn movement_profile(u: f64, peak: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else if u < peak {
        0.5 * (1.0 - (PI * u / peak).cos())
    } else {
        0.5 * (1.0 + (PI * (u - peak) / (1.0 - peak)).cos())
    }
}

/// Linear map of quality in [0, 1] onto the score range.
pub fn quality_to_score(quality: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + quality * (hi - lo)
}

/// `synthesize_with` with default shape options.
pub fn synthesize_exercise(
    kind: ExerciseKind,
    quality: f64,
    frames: usize,
    seed: u64,
    score_range: (f64, f64),
) -> Result<LabeledSample> {
    synthesize_with(&SynthOptions {
        score_range,
        ..SynthOptions::new(kind, quality, frames, seed)
    })
}

pub fn synthesize_with(opts: &SynthOptions) -> Result<LabeledSample> {
    if opts.frames < 8 {
        return Err(Error::Config(format!(
            "synthetic sequences need T >= 8, got {}",
            opts.frames
        )));
    }
    if !(0.0..=1.0).contains(&opts.quality) {
        return Err(Error::Config(format!("quality {} outside [0, 1]", opts.quality)));
    }
    if !(opts.peak > 0.0 && opts.peak < 1.0) {
        return Err(Error::Config(format!("profile peak {} outside (0, 1)", opts.peak)));
    }
    let streams = SeedStreams::new(opts.seed);
    let t_len = opts.frames;
    let q = opts.quality;
    let wobble = Wobble::new(&mut streams.rng("wobble"));
    let mut body = streams.rng("body");
    let scale = body.gen_range(0.9..1.1);
    let offset = [
        body.gen_range(-0.3..0.3),
        body.gen_range(0.8..1.1),
        body.gen_range(2.0..3.0),
    ];
    let mut sensor = streams.rng("sensor");

    let mut data = Vec::with_capacity(t_len * k::NUM_JOINTS * COORDS);
    for t in 0..t_len {
        let mut u = t as f64 / (t_len - 1) as f64;
        if opts.reversed {
            u = 1.0 - u;
        }
        let pose = match opts.kind {
            ExerciseKind::ArmLift => arm_lift_pose(opts, u, &wobble),
            ExerciseKind::Squat => squat_pose(q, opts.peak, u, &wobble),
        };
        for p in pose {
            for c in 0..COORDS {
                let noise: f64 = sensor.gen_range(-1.0..1.0) * SENSOR_NOISE;
                data.push(offset[c] + scale * p[c] + noise);
            }
        }
    }
    let frames = Tensor::new([t_len, k::NUM_JOINTS, COORDS], data)?;
    let id = format!("{}_{:016x}", opts.kind, opts.seed);
    let score = opts.score.unwrap_or_else(|| quality_to_score(q, opts.score_range));
    LabeledSample::new(SkeletonSequence::new(id, frames)?, score, opts.score_range)
}

const SENSOR_NOISE: f64 = 0.002;

/// Smooth random signal in roughly [-1, 1]: three low-frequency sinusoids.
struct Wobble {
    terms: [(f64, f64, f64); 3],
}

impl Wobble {
    fn new(rng: &mut Rng) -> Self {
        let mut term = |f: f64| {
            (
                rng.gen_range(0.5..1.0) / 3.0,
                f + rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..2.0 * PI),
            )
        };
        Wobble {
            terms: [term(1.0), term(2.0), term(3.0)],
        }
    }

    fn at(&self, u: f64, channel: usize) -> f64 {
        self.terms
            .iter()
            .map(|&(a, f, p)| a * (2.0 * PI * f * u + p + channel as f64 * 1.7).sin())
            .sum()
    }
}

fn rest_pose() -> Vec<[f64; 3]> {
    k::LAYOUT.iter().map(|&[x, y]| [x, y, 0.0]).collect()
}

/// Rotates `joints` about `pivot` within the frontal (x-y) plane.
fn rotate_frontal(pose: &mut [[f64; 3]], joints: &[usize], pivot: usize, angle: f64) {
    let [px, py, _] = pose[pivot];
    let (s, c) = angle.sin_cos();
    for &j in joints {
        let [x, y, _] = pose[j];
        let (dx, dy) = (x - px, y - py);
        pose[j][0] = px + c * dx - s * dy;
        pose[j][1] = py + s * dx + c * dy;
    }
}

const LEFT_ARM: [usize; 5] = [
    k::ELBOW_LEFT,
    k::WRIST_LEFT,
    k::HAND_LEFT,
    k::HAND_TIP_LEFT,
    k::THUMB_LEFT,
];
const RIGHT_ARM: [usize; 5] = [
    k::ELBOW_RIGHT,
    k::WRIST_RIGHT,
    k::HAND_RIGHT,
    k::HAND_TIP_RIGHT,
    k::THUMB_RIGHT,
];

fn arm_lift_pose(opts: &SynthOptions, u: f64, wobble: &Wobble) -> Vec<[f64; 3]> {
    let q = opts.quality;
    let mut pose = rest_pose();
    let amplitude = (0.4 + 0.6 * q) * FRAC_PI_2;
    let base = amplitude * movement_profile(u, opts.peak);
    let jitter = (1.0 - q) * 0.5;
    let left = base + jitter * wobble.at(u, 0);
    let right = base + jitter * wobble.at(u, 1);
    if opts.forearm_flex != 0.0 {
        let flex = opts.forearm_flex * movement_profile(u - opts.forearm_lag, opts.peak);
        rotate_frontal(&mut pose, &LEFT_ARM[1..], k::ELBOW_LEFT, flex);
        rotate_frontal(&mut pose, &RIGHT_ARM[1..], k::ELBOW_RIGHT, -flex);
    }
    rotate_frontal(&mut pose, &LEFT_ARM, k::SHOULDER_LEFT, left);
    rotate_frontal(&mut pose, &RIGHT_ARM, k::SHOULDER_RIGHT, -right);
    pose
}

fn squat_pose(q: f64, peak: f64, u: f64, wobble: &Wobble) -> Vec<[f64; 3]> {
    let mut pose = rest_pose();
    let depth = (0.4 + 0.6 * q) * 0.35 * movement_profile(u, peak) + (1.0 - q) * 0.04 * wobble.at(u, 0);
    let depth = depth.clamp(0.0, 0.6);
    // Everything above the knees drops with the hips.
    for j in 0..k::NUM_JOINTS {
        if ![
            k::KNEE_LEFT,
            k::ANKLE_LEFT,
            k::FOOT_LEFT,
            k::KNEE_RIGHT,
            k::ANKLE_RIGHT,
            k::FOOT_RIGHT,
        ]
        .contains(&j)
        {
            pose[j][1] -= depth;
        }
    }
    for (hip, knee, ankle) in [
        (k::HIP_LEFT, k::KNEE_LEFT, k::ANKLE_LEFT),
        (k::HIP_RIGHT, k::KNEE_RIGHT, k::ANKLE_RIGHT),
    ] {
        let rest = rest_pose();
        let thigh = dist(rest[hip], rest[knee]);
        let shin = dist(rest[knee], rest[ankle]);
        let h = pose[hip];
        let a = pose[ankle];
        let span = dist(h, a).min(thigh + shin - 1e-9);
        // Knee goes forward (+z) on the circle shared by both segments.
        let along = (thigh * thigh - shin * shin + span * span) / (2.0 * span);
        let out = (thigh * thigh - along * along).max(0.0).sqrt();
        let dir = [(a[0] - h[0]) / span, (a[1] - h[1]) / span, (a[2] - h[2]) / span];
        pose[knee] = [
            h[0] + along * dir[0],
            h[1] + along * dir[1],
            h[2] + along * dir[2] + out,
        ];
    }
    pose
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Convenience for tests and tools: `count` samples with qualities drawn
/// uniformly from `quality_range` and lengths from `frame_range`.
pub fn synthesize_corpus(
    kind: ExerciseKind,
    count: usize,
    quality_range: (f64, f64),
    frame_range: (usize, usize),
    score_range: (f64, f64),
    seed: u64,
) -> Result<Vec<LabeledSample>> {
    if count == 0 {
        return Err(Error::Config("corpus size must be at least 1".into()));
    }
    let (qlo, qhi) = quality_range;
    let (tlo, thi) = frame_range;
    if !(0.0 <= qlo && qlo <= qhi && qhi <= 1.0) || tlo > thi {
        return Err(Error::Config(format!(
            "bad ranges: quality {quality_range:?}, frames {frame_range:?}"
        )));
    }
    let streams = SeedStreams::new(seed);
    let mut pick = streams.rng("corpus");
    (0..count)
        .map(|i| {
            let quality = if qlo == qhi { qlo } else { pick.gen_range(qlo..=qhi) };
            let frames = pick.gen_range(tlo..=thi);
            let mut s = synthesize_exercise(
                kind,
                quality,
                frames,
                streams.indexed_seed("sample", i as u64),
                score_range,
            )?;
            s.sequence.id = format!("{kind}_{i:04}");
            Ok(s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoint_score_and_determinism() {
        let a = synthesize_exercise(ExerciseKind::ArmLift, 1.0, 20, 3, (0.0, 50.0)).unwrap();
        assert_eq!(a.score, 50.0);
        let b = synthesize_exercise(ExerciseKind::ArmLift, 1.0, 20, 3, (0.0, 50.0)).unwrap();
        assert_eq!(a, b);
        assert!(synthesize_exercise(ExerciseKind::Squat, 0.5, 7, 3, (0.0, 1.0)).is_err());
        assert!("jump".parse::<ExerciseKind>().is_err());
    }

    fn deviation(kind: ExerciseKind, q: f64, seed: u64) -> f64 {
        let ideal = synthesize_exercise(kind, 1.0, 40, seed, (0.0, 1.0)).unwrap();
        let s = synthesize_exercise(kind, q, 40, seed, (0.0, 1.0)).unwrap();
        let a = ideal.sequence.frames().data();
        let b = s.sequence.frames().data();
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn lower_quality_deviates_more() {
        for seed in 0..10 {
            for kind in [ExerciseKind::ArmLift, ExerciseKind::Squat] {
                assert!(
                    deviation(kind, 0.2, seed) > deviation(kind, 0.9, seed),
                    "{kind} seed {seed}"
                );
            }
        }
    }

    #[test]
    fn arm_lift_moves_only_arms() {
        let s = synthesize_exercise(ExerciseKind::ArmLift, 0.7, 30, 5, (0.0, 1.0)).unwrap();
        let seq = &s.sequence;
        let travel = |j: usize| -> f64 {
            (1..seq.frame_count())
                .map(|t| dist(seq.point(t, j), seq.point(0, j)))
                .fold(0.0, f64::max)
        };
        for j in k::LEGS {
            assert!(travel(j) < 10.0 * SENSOR_NOISE);
        }
        for j in [k::WRIST_LEFT, k::HAND_RIGHT] {
            assert!(travel(j) > 0.2);
        }
    }

    #[test]
    fn profile_shape() {
        assert_eq!(movement_profile(0.0, 0.5), 0.0);
        assert!((movement_profile(0.5, 0.5) - 1.0).abs() < 1e-15);
        assert!((movement_profile(0.2, 0.2) - 1.0).abs() < 1e-15);
        assert!((movement_profile(0.25, 0.5) - 0.5).abs() < 1e-12);
    }
}
