use rand::Rng as _;

use super::{parameter_layout, FrameMask, Init, Model, ModelConfig};
use crate::autodiff::{gradcheck, GradcheckOptions, GradcheckReport};
use crate::data::{synthesize_exercise, Batch, ExerciseKind};
use crate::error::Result;
use crate::graph::JointGraph;
use crate::rng::SeedStreams;
use crate::train::{LossConfig, LossKind};

/// Options suited to the whole network: a small step keeps perturbations
/// clear of ReLU kinks among thousands of pre-activations, and the floor
/// treats absolute disagreements below `1e-8` as round-off.
pub fn model_gradcheck_options() -> GradcheckOptions {
    GradcheckOptions {
        step: 1e-6,
        floor: 1e-4,
        max_entries: Some(32),
        ..GradcheckOptions::default()
    }
}

/// Central-difference check of the whole network in 64-bit.
///
/// The input is a batch of two synthetic sequences, `frames` and
/// `frames - 3` long, so the padding path is exercised; the loss is the
/// squared error against fixed targets, with dropout off. Biases and
/// gains are jittered off their constant initial values first: a zero
/// bias over the all-zero root joint would put ReLU inputs exactly on the
/// kink, where central differences are meaningless.
pub fn model_gradcheck(
    config: &ModelConfig,
    graph: &JointGraph,
    frames: usize,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport> {
    let streams = SeedStreams::new(config.seed);
    let mut model = Model::<f64>::new(config.clone(), graph.clone())?;
    let mut jitter = streams.rng("gradcheck_jitter");
    for (t, (_, _, init)) in model
        .params_mut()
        .tensors_mut()
        .iter_mut()
        .zip(parameter_layout(config, graph.num_joints()))
    {
        if init != Init::Glorot {
            t.data_mut().iter_mut().for_each(|v| *v += jitter.gen_range(-0.1..0.1));
        }
    }
    let raw = [
        synthesize_exercise(
            ExerciseKind::ArmLift,
            0.7,
            frames,
            streams.seed("gradcheck_a"),
            (0.0, 1.0),
        )?,
        synthesize_exercise(
            ExerciseKind::ArmLift,
            0.4,
            frames.saturating_sub(3).max(8),
            streams.seed("gradcheck_b"),
            (0.0, 1.0),
        )?,
    ];
    let samples = model.prepare_samples(&raw)?;
    let batch = Batch::from_samples(&samples, &[0, 1])?;
    let mask = FrameMask::new(&batch.mask, batch.len(), batch.max_frames())?;
    let loss = LossConfig {
        kind: LossKind::Mse,
        ..LossConfig::default()
    };
    let named: Vec<(String, _)> = model
        .params()
        .iter()
        .map(|(name, t)| (name.to_string(), t.clone()))
        .collect();
    let f = |tape: &mut crate::autodiff::Tape<f64>, vars: &[crate::autodiff::Var]| {
        let bound = model.params().bind_vars(vars.to_vec())?;
        let out = model.forward(tape, &bound, &batch.frames, &mask, None)?;
        loss.on_tape(tape, out.scores, &batch.scores)
    };
    gradcheck(f, &named, opts, &mut streams.rng("gradcheck_entries"))
}
