//! The assessment network: dense STGC-GRU blocks, transformer encoder,
//! linear readout.

mod check;
mod checkpoint;
mod config;
pub mod encoder;
mod mask;
mod params;
pub mod stgc;

use std::sync::Arc;

pub use check::{model_gradcheck, model_gradcheck_options};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{GruUpdate, ModelConfig, Readout};
pub use mask::FrameMask;
pub use params::{Bound, Init, ParamStore};

use crate::autodiff::{Tape, Var};
use crate::data::{normalize_sequence, Batch, LabeledSample, NormalizeSpec, SkeletonSequence, COORDS};
use crate::error::{Error, Result};
use crate::graph::{k_hop_adjacency, normalize_adjacency, JointGraph};
use crate::rng::{Rng, SeedStreams};
use crate::scalar::Scalar;
use crate::sparse::SparseMatrix;
use crate::tensor::Tensor;
use stgc::GraphOperators;

/// Handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Predicted scores, `[B]`.
    pub scores: Var,
    /// Per-block nodes carrying the joint attention maps.
    pub attention: Vec<Var>,
}

/// Network parameters plus the fixed graph operators they run on.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    graph: JointGraph,
    ops: GraphOperators<T>,
    params: ParamStore<T>,
}

pub fn graph_operators<T: Scalar>(graph: &JointGraph, hops: &[usize]) -> GraphOperators<T> {
    let n = graph.num_joints();
    let hops = hops
        .iter()
        .map(|&k| {
            Arc::new(SparseMatrix::from_dense(
                n,
                n,
                &normalize_adjacency(&k_hop_adjacency(graph, k)),
            ))
        })
        .collect();
    let support = Arc::new(SparseMatrix::support_of(n, &k_hop_adjacency(graph, 1).matrix));
    GraphOperators { hops, support }
}

/// Parameter names and shapes in creation order.
pub fn parameter_layout(cfg: &ModelConfig, num_joints: usize) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let mut add = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));
    let g = cfg.gcn_channels;
    for i in 0..cfg.blocks {
        let cin = cfg.block_input_width(i);
        let aug = cin + cfg.augment_channels;
        add(
            format!("block{i}.augment.w"),
            vec![cfg.augment_kernel, cin, cfg.augment_channels],
            Init::Glorot,
        );
        add(format!("block{i}.augment.b"), vec![cfg.augment_channels], Init::Zeros);
        for k in 0..cfg.hops.len() {
            add(format!("block{i}.gcn.w{k}"), vec![aug, g], Init::Glorot);
        }
        for gate in ["z", "r", "o"] {
            add(format!("block{i}.gru.w_{gate}x"), vec![g, g], Init::Glorot);
            add(format!("block{i}.gru.w_{gate}h"), vec![g, g], Init::Glorot);
            add(format!("block{i}.gru.b_{gate}"), vec![g], Init::Zeros);
        }
        for (j, &kt) in cfg.bank_kernels.iter().enumerate() {
            add(
                format!("block{i}.bank{j}.w"),
                vec![kt, g, cfg.bank_filters],
                Init::Glorot,
            );
            add(format!("block{i}.bank{j}.b"), vec![cfg.bank_filters], Init::Zeros);
        }
    }
    let w = cfg.model_width;
    add("proj.w".into(), vec![num_joints * cfg.bank_width(), w], Init::Glorot);
    add("proj.b".into(), vec![w], Init::Zeros);
    for l in 0..cfg.encoder_layers {
        add(format!("enc{l}.ln1.g"), vec![w], Init::Ones);
        add(format!("enc{l}.ln1.b"), vec![w], Init::Zeros);
        for h in 0..cfg.heads {
            for m in ["wq", "wk", "wv"] {
                add(format!("enc{l}.head{h}.{m}"), vec![w, cfg.head_dim], Init::Glorot);
            }
        }
        add(format!("enc{l}.wo"), vec![cfg.attention_width(), w], Init::Glorot);
        add(format!("enc{l}.ln2.g"), vec![w], Init::Ones);
        add(format!("enc{l}.ln2.b"), vec![w], Init::Zeros);
        add(format!("enc{l}.ff1.w"), vec![w, cfg.ff_hidden], Init::Glorot);
        add(format!("enc{l}.ff1.b"), vec![cfg.ff_hidden], Init::Zeros);
        add(format!("enc{l}.ff2.w"), vec![cfg.ff_hidden, w], Init::Glorot);
        add(format!("enc{l}.ff2.b"), vec![w], Init::Zeros);
    }
    add("readout.w".into(), vec![w, 1], Init::Glorot);
    add("readout.b".into(), vec![1], Init::Zeros);
    out
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters drawn from the config seed's `init` stream.
    pub fn new(config: ModelConfig, graph: JointGraph) -> Result<Self> {
        let mut rng = SeedStreams::new(config.seed).rng("init");
        Self::with_rng(config, graph, &mut rng)
    }

    pub fn with_rng(config: ModelConfig, graph: JointGraph, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, init) in parameter_layout(&config, graph.num_joints()) {
            params.init(name, &shape, init, rng)?;
        }
        Self::from_parts(config, graph, params)
    }

    /// Assembles a model from existing parameters, checking every shape. The
    /// config's precision is set to `T`.
    pub fn from_parts(config: ModelConfig, graph: JointGraph, params: ParamStore<T>) -> Result<Self> {
        let config = ModelConfig {
            precision: T::PRECISION,
            ..config
        };
        config.validate()?;
        let n = graph.num_joints();
        if config.normalize && (config.root_joint >= n || config.torso_joint >= n) {
            return Err(Error::Config(format!(
                "normalization joints ({}, {}) out of range for {n} joints",
                config.root_joint, config.torso_joint
            )));
        }
        let layout = parameter_layout(&config, n);
        if layout.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &layout {
            let t = params
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, config implies {shape:?}",
                    t.shape()
                )));
            }
        }
        let ops = graph_operators(&graph, &config.hops);
        Ok(Model {
            config,
            graph,
            ops,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn graph(&self) -> &JointGraph {
        &self.graph
    }

    pub fn operators(&self) -> &GraphOperators<T> {
        &self.ops
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Same architecture at another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            graph: self.graph.clone(),
            ops: graph_operators(&self.graph, &self.config.hops),
            params: self.params.cast(),
        }
    }

    /// Sets the readout bias, e.g. to the mean training score.
    pub fn set_readout_bias(&mut self, value: f64) {
        if let Some(b) = self.params.get_mut("readout.b") {
            b.data_mut()[0] = T::lit(value);
        }
    }

    /// Applies the configured preprocessing to a sequence.
    pub fn prepare(&self, seq: &SkeletonSequence) -> Result<SkeletonSequence> {
        if seq.num_joints() != self.graph.num_joints() {
            return Err(Error::Config(format!(
                "sequence {:?} has {} joints, model graph has {}",
                seq.id,
                seq.num_joints(),
                self.graph.num_joints()
            )));
        }
        if self.config.normalize {
            normalize_sequence(
                seq,
                NormalizeSpec {
                    root: self.config.root_joint,
                    torso_top: self.config.torso_joint,
                },
            )
        } else {
            Ok(seq.clone())
        }
    }

    /// Preprocesses every sample's sequence, keeping ids and scores.
    pub fn prepare_samples(&self, samples: &[LabeledSample]) -> Result<Vec<LabeledSample>> {
        samples
            .iter()
            .map(|s| {
                Ok(LabeledSample {
                    sequence: self.prepare(&s.sequence)?,
                    ..s.clone()
                })
            })
            .collect()
    }

    /// Runs the network on padded frames `[B, T, N, C]`.
    ///
    /// `dropout` supplies randomness in training mode; `None` means
    /// inference (dropout off).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound<'_, T>,
        frames: &Tensor<T>,
        mask: &FrameMask<T>,
        mut dropout: Option<&mut Rng>,
    ) -> Result<Forward> {
        let s = frames.shape();
        let cfg = &self.config;
        if s.len() != 4 || s[2] != self.graph.num_joints() || s[3] != cfg.input_channels {
            return Err(Error::Config(format!(
                "input frames {s:?} do not match {} joints x {} channels",
                self.graph.num_joints(),
                cfg.input_channels
            )));
        }
        let (b, t, n) = (s[0], s[1], s[2]);
        if mask.batch() != b || mask.frames() != t {
            return Err(Error::shape("forward mask", &[b, t], &[mask.batch(), mask.frames()]));
        }
        let v = tape.constant(frames.clone());
        let blocks = stgc::dense_forward(tape, v, bound, cfg, &self.ops, mask)?;
        let last = blocks.last().expect("at least one block").features;
        let tokens = tape.reshape(last, &[b, t, n * cfg.bank_width()])?;
        let mut z = tape.affine(tokens, bound.get("proj.w")?, bound.get("proj.b")?)?;
        if cfg.positional_encoding {
            let pe = encoder::positional_encoding::<T>(t, cfg.model_width)?;
            z = tape.add_const(z, &pe)?;
        }
        for l in 0..cfg.encoder_layers {
            z = encoder::encoder_block(tape, z, bound, &format!("enc{l}"), cfg, mask, dropout.as_deref_mut())?;
        }
        let scores = encoder::readout(
            tape,
            z,
            bound.get("readout.w")?,
            bound.get("readout.b")?,
            mask,
            cfg.readout,
        )?;
        Ok(Forward {
            scores,
            attention: blocks.iter().map(|o| o.attention).collect(),
        })
    }

    /// Inference on an already prepared batch.
    pub fn predict_batch(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let mask = FrameMask::new(&batch.mask, batch.len(), batch.max_frames())?;
        let out = self.forward(&mut tape, &bound, &batch.frames.cast(), &mask, None)?;
        Ok(tape.value(out.scores).data().iter().map(|v| v.as_f64()).collect())
    }

    /// Scores one raw (unprepared) sequence.
    pub fn predict_sequence(&self, seq: &SkeletonSequence) -> Result<f64> {
        let (score, _) = self.score_with_attention(seq, self.config.feedback_block)?;
        Ok(score)
    }

    /// Scores one raw sequence and returns block `block`'s joint attention,
    /// `[T, N, N]`.
    pub fn score_with_attention(&self, seq: &SkeletonSequence, block: usize) -> Result<(f64, Tensor<T>)> {
        if block >= self.config.blocks {
            return Err(Error::Config(format!(
                "block {block} out of range for {} blocks",
                self.config.blocks
            )));
        }
        let seq = self.prepare(seq)?;
        let (t, n) = (seq.frame_count(), seq.num_joints());
        let frames: Tensor<T> = seq.frames().cast::<T>().reshape([1, t, n, COORDS])?;
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let mask = FrameMask::full(1, t);
        let out = self.forward(&mut tape, &bound, &frames, &mask, None)?;
        let map = tape
            .attention_weights(out.attention[block])
            .expect("attention node")
            .reshape([t, n, n])?;
        Ok((tape.value(out.scores).data()[0].as_f64(), map))
    }
}
