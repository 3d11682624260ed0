use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::sequence::{LabeledSample, COORDS};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Samples zero-padded to a common length, with a mask of real frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Positions of the samples in the list the batch was built from.
    pub indices: Vec<usize>,
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
    /// `B x T_max x N x 3`, zero beyond each sample's length.
    pub frames: Tensor<f64>,
    /// `B x T_max`, true for real frames.
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
}

impl Batch {
    /// Pads the selected samples in the given order.
    pub fn from_samples(samples: &[LabeledSample], indices: &[usize]) -> Result<Self> {
        let first = indices
            .first()
            .map(|&i| &samples[i])
            .ok_or_else(|| Error::Contract("a batch needs at least one sample".into()))?;
        let n = first.sequence.num_joints();
        let lengths: Vec<usize> = indices.iter().map(|&i| samples[i].sequence.frame_count()).collect();
        let t_max = *lengths.iter().max().expect("non-empty");
        let b = indices.len();
        let frame_width = n * COORDS;
        let mut data = vec![0.0; b * t_max * frame_width];
        let mut mask = vec![false; b * t_max];
        for (row, &i) in indices.iter().enumerate() {
            let seq = &samples[i].sequence;
            if seq.num_joints() != n {
                return Err(Error::Data(format!(
                    "sample {:?} has {} joints, batch expects {n}",
                    seq.id,
                    seq.num_joints()
                )));
            }
            let src = seq.frames().data();
            let dst = row * t_max * frame_width;
            data[dst..dst + src.len()].copy_from_slice(src);
            mask[row * t_max..row * t_max + seq.frame_count()].fill(true);
        }
        Ok(Batch {
            indices: indices.to_vec(),
            ids: indices.iter().map(|&i| samples[i].id().to_string()).collect(),
            scores: indices.iter().map(|&i| samples[i].score).collect(),
            frames: Tensor::new([b, t_max, n, COORDS], data)?,
            mask,
            lengths,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.frames.shape()[1]
    }
}

/// Shuffles by `seed`, then cuts consecutive batches of `batch_size`; the
/// last batch may be smaller.
pub fn make_batches(samples: &[LabeledSample], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut Rng::seed_from_u64(seed));
    order
        .chunks(batch_size)
        .map(|c| Batch::from_samples(samples, c))
        .collect()
}

/// Batches in the original order, for evaluation.
pub fn ordered_batches(samples: &[LabeledSample], batch_size: usize) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let order: Vec<usize> = (0..samples.len()).collect();
    order
        .chunks(batch_size)
        .map(|c| Batch::from_samples(samples, c))
        .collect()
}

/// Seeded disjoint partition. The test side gets `round(n * test_fraction)`
/// items, clamped so both sides are non-empty.
pub fn train_test_split<S: Clone>(items: &[S], test_fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let n = items.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 samples to split, got {n}")));
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut Rng::seed_from_u64(seed));
    let (test_idx, train_idx) = order.split_at(n_test);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((
        train_idx.iter().map(|&i| items[i].clone()).collect(),
        test_idx.iter().map(|&i| items[i].clone()).collect(),
    ))
}
