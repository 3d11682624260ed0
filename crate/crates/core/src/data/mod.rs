//! Skeleton sequences: file formats, normalization, synthesis, batching.

mod batch;
mod manifest;
mod sequence;
mod synth;

pub use batch::{make_batches, ordered_batches, train_test_split, Batch};
pub use manifest::{load_dataset, Manifest, ManifestEntry};
pub use sequence::{
    csv_header, csv_joint_count, load_sequence, normalize_sequence, write_sequence, LabeledSample, NormalizeSpec,
    SkeletonSequence, COORDS,
};
pub use synth::{
    movement_profile, quality_to_score, synthesize_corpus, synthesize_exercise, synthesize_with, ExerciseKind,
    SynthOptions,
};
