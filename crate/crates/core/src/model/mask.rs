use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Valid-frame mask of a padded batch, `[B, T]`.
#[derive(Clone, Debug)]
pub struct FrameMask<T> {
    batch: usize,
    frames: usize,
    keep: Vec<bool>,
    factor: Arc<Vec<T>>,
}

impl<T: Scalar> FrameMask<T> {
    pub fn new(keep: &[bool], batch: usize, frames: usize) -> Result<Self> {
        if keep.len() != batch * frames {
            return Err(Error::shape("frame mask", &[batch, frames], &[keep.len()]));
        }
        let factor = keep.iter().map(|&k| if k { T::one() } else { T::zero() }).collect();
        Ok(FrameMask {
            batch,
            frames,
            keep: keep.to_vec(),
            factor: Arc::new(factor),
        })
    }

    /// Every frame valid.
    pub fn full(batch: usize, frames: usize) -> Self {
        Self::new(&vec![true; batch * frames], batch, frames).expect("sizes agree")
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.keep
            .chunks(self.frames.max(1))
            .map(|r| r.iter().filter(|&&k| k).count())
            .collect()
    }

    /// Zeroes padded frames of any `[B, T, ...]` value.
    pub fn apply(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.mul_const(x, self.factor.clone(), &[self.batch, self.frames])
    }

    /// `[B, T, T]` key mask for self-attention: row `(b, i)` may attend to
    /// frame `j` iff `j` is valid.
    pub fn attention_keep(&self) -> Result<Vec<bool>> {
        if self.lengths().contains(&0) {
            return Err(Error::Contract("a sequence in the batch has no valid frames".into()));
        }
        let t = self.frames;
        let mut out = Vec::with_capacity(self.batch * t * t);
        for b in 0..self.batch {
            let row = &self.keep[b * t..(b + 1) * t];
            for _ in 0..t {
                out.extend_from_slice(row);
            }
        }
        Ok(out)
    }

    /// Weights averaging the valid frames of each sequence.
    pub fn mean_weights(&self) -> Result<Arc<Vec<T>>> {
        let lengths = self.lengths();
        if lengths.contains(&0) {
            return Err(Error::Contract("a sequence in the batch has no valid frames".into()));
        }
        let t = self.frames;
        let w = self
            .factor
            .iter()
            .enumerate()
            .map(|(i, &f)| f / T::lit(lengths[i / t] as f64))
            .collect();
        Ok(Arc::new(w))
    }

    /// Weights selecting the last valid frame of each sequence.
    pub fn last_weights(&self) -> Result<Arc<Vec<T>>> {
        let t = self.frames;
        let mut w = vec![T::zero(); self.batch * t];
        for b in 0..self.batch {
            let last = (0..t)
                .rev()
                .find(|&i| self.keep[b * t + i])
                .ok_or_else(|| Error::Contract("a sequence in the batch has no valid frames".into()))?;
            w[b * t + last] = T::one();
        }
        Ok(Arc::new(w))
    }
}
