use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use super::metrics::{average_metrics, compute_metrics_lenient, Metrics};
use super::optimizer::{Adam, AdamConfig};
use crate::autodiff::Tape;
use crate::data::{make_batches, ordered_batches, train_test_split, LabeledSample};
use crate::error::{Error, Result};
use crate::graph::JointGraph;
use crate::model::{FrameMask, Model, ModelConfig};
use crate::rng::SeedStreams;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub loss: LossConfig,
    /// Share of the dataset held out for testing; 0 disables the test set.
    pub test_fraction: f64,
    /// Share of the training side held out for checkpoint selection; 0
    /// selects on the (dropout-free) training loss instead.
    pub val_fraction: f64,
    pub runs: usize,
    pub seed: u64,
    /// Start the readout bias at the mean training score.
    pub init_readout_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            batch_size: 4,
            optimizer: AdamConfig::default(),
            loss: LossConfig::default(),
            test_fraction: 0.2,
            val_fraction: 0.0,
            runs: 10,
            seed: 0,
            init_readout_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        for (name, f) in [
            ("test_fraction", self.test_fraction),
            ("val_fraction", self.val_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::Config(format!("{name} {f} outside [0, 1)")));
            }
        }
        let lr = self.optimizer.learning_rate;
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {lr} must be finite and non-negative"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean minibatch loss seen by the optimizer (dropout on).
    pub train_loss: f64,
    /// Training-set loss after the epoch with dropout off; recorded when
    /// there is no validation set.
    pub train_eval_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

/// Outcome of one training run; `model` holds the selected checkpoint.
#[derive(Clone, Debug)]
pub struct TrainedRun<T> {
    pub model: Model<T>,
    pub history: Vec<EpochRecord>,
    /// Epoch of the selected checkpoint, `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub duration: Duration,
}

/// Trains one model from `seed`. Initialization, shuffling and dropout each
/// draw from their own substream of `seed`.
pub fn train_run<T: Scalar>(
    model_config: &ModelConfig,
    graph: &JointGraph,
    cfg: &TrainConfig,
    train: &[LabeledSample],
    val: &[LabeledSample],
    seed: u64,
) -> Result<TrainedRun<T>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let start = Instant::now();
    let streams = SeedStreams::new(seed);
    let mut model = Model::<T>::new(
        ModelConfig {
            seed,
            precision: T::PRECISION,
            ..model_config.clone()
        },
        graph.clone(),
    )?;
    let train = model.prepare_samples(train)?;
    let val = model.prepare_samples(val)?;
    if cfg.init_readout_bias {
        let mean = train.iter().map(|s| s.score).sum::<f64>() / train.len() as f64;
        model.set_readout_bias(mean);
    }

    let mut adam = Adam::new(cfg.optimizer, model.params().tensors());
    let mut dropout_rng = streams.rng("dropout");
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, crate::model::ParamStore<T>)> = None;

    for epoch in 0..cfg.epochs {
        let batches = make_batches(&train, cfg.batch_size, streams.indexed_seed("shuffle", epoch as u64))?;
        let mut total = 0.0;
        for batch in &batches {
            let (loss, grads) = {
                let mut tape = Tape::new();
                let bound = model.params().bind(&mut tape, true);
                let mask = FrameMask::new(&batch.mask, batch.len(), batch.max_frames())?;
                let out = model.forward(&mut tape, &bound, &batch.frames.cast(), &mask, Some(&mut dropout_rng))?;
                let loss = cfg.loss.on_tape(&mut tape, out.scores, &batch.scores)?;
                let value = tape.value(loss).item().as_f64();
                if !value.is_finite() {
                    return Err(Error::Numeric(format!(
                        "training loss became {value} at epoch {epoch} on samples {:?}",
                        batch.ids
                    )));
                }
                tape.backward(loss)?;
                (value, bound.grads(&tape))
            };
            if let Some((i, _)) = grads.iter().enumerate().find(|(_, g)| !g.all_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient for {} at epoch {epoch}",
                    model.params().names()[i]
                )));
            }
            adam.step(model.params_mut().tensors_mut(), &grads)?;
            total += loss * batch.len() as f64;
        }
        let train_loss = total / train.len() as f64;

        let (train_eval_loss, val_loss) = if val.is_empty() {
            (Some(dataset_loss(&model, &train, cfg)?), None)
        } else {
            (None, Some(dataset_loss(&model, &val, cfg)?))
        };
        let selection = val_loss.or(train_eval_loss).expect("one loss is always computed");
        if !selection.is_finite() {
            return Err(Error::Numeric(format!(
                "evaluation loss became {selection} at epoch {epoch}"
            )));
        }
        log::debug!("epoch {epoch}: train {train_loss:.6} selection {selection:.6}");
        if best.as_ref().map_or(true, |(b, _, _)| selection < *b) {
            best = Some((selection, epoch, model.params().clone()));
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_eval_loss,
            val_loss,
        });
    }

    let best_epoch = best.map(|(_, epoch, params)| {
        *model.params_mut() = params;
        epoch
    });
    Ok(TrainedRun {
        model,
        history,
        best_epoch,
        duration: start.elapsed(),
    })
}

/// Loss of the model over a prepared dataset, dropout off.
fn dataset_loss<T: Scalar>(model: &Model<T>, samples: &[LabeledSample], cfg: &TrainConfig) -> Result<f64> {
    let preds = predict_prepared(model, samples, cfg.batch_size)?;
    let targets: Vec<f64> = samples.iter().map(|s| s.score).collect();
    cfg.loss.value(&targets, &preds)
}

fn predict_prepared<T: Scalar>(model: &Model<T>, samples: &[LabeledSample], batch_size: usize) -> Result<Vec<f64>> {
    let mut preds = Vec::with_capacity(samples.len());
    for batch in ordered_batches(samples, batch_size)? {
        preds.extend(model.predict_batch(&batch)?);
    }
    Ok(preds)
}

/// Predictions for a labelled set with their metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub ids: Vec<String>,
    pub targets: Vec<f64>,
    pub predictions: Vec<f64>,
    pub metrics: Metrics,
    #[serde(skip)]
    pub duration: Duration,
}

/// Scores raw samples (preprocessing included) and computes metrics. MAPE
/// is left out if any target is zero.
pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[LabeledSample], batch_size: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Contract("evaluation set is empty".into()));
    }
    let start = Instant::now();
    let prepared = model.prepare_samples(samples)?;
    let predictions = predict_prepared(model, &prepared, batch_size)?;
    let duration = start.elapsed();
    let targets: Vec<f64> = samples.iter().map(|s| s.score).collect();
    let metrics = compute_metrics_lenient(&targets, &predictions)?;
    Ok(Evaluation {
        ids: samples.iter().map(|s| s.id().to_string()).collect(),
        targets,
        predictions,
        metrics,
        duration,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    pub train_metrics: Metrics,
    pub test_metrics: Option<Metrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub train: Metrics,
    pub test: Option<Metrics>,
}

/// Everything about a multi-run experiment except wall-clock times, so a
/// fixed seed reproduces it byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split: SplitIds,
    pub runs: Vec<RunRecord>,
    pub average: AveragedMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub run: usize,
    pub train_seconds: f64,
    pub test_seconds: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub runs: Vec<RunTiming>,
    pub total_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct MultiRun<T> {
    pub report: TrainingReport,
    pub timings: Timings,
    /// Selected checkpoint of each run, in run order.
    pub models: Vec<Model<T>>,
}

/// Seed of run `r` under root seed `seed`.
pub fn run_seed(seed: u64, run: usize) -> u64 {
    SeedStreams::new(seed).indexed_seed("run", run as u64)
}

/// Splits `samples` once by the root seed, then trains `cfg.runs`
/// independently seeded models on the same split and averages their
/// metrics.
pub fn multi_run<T: Scalar>(
    model_config: &ModelConfig,
    graph: &JointGraph,
    cfg: &TrainConfig,
    samples: &[LabeledSample],
) -> Result<MultiRun<T>> {
    cfg.validate()?;
    let start = Instant::now();
    let streams = SeedStreams::new(cfg.seed);
    let (train, test) = if cfg.test_fraction > 0.0 {
        let (tr, te) = train_test_split(samples, cfg.test_fraction, streams.seed("split"))?;
        (tr, te)
    } else {
        (samples.to_vec(), Vec::new())
    };
    let (train, val) = if cfg.val_fraction > 0.0 {
        train_test_split(&train, cfg.val_fraction, streams.seed("val_split"))?
    } else {
        (train, Vec::new())
    };
    let ids = |s: &[LabeledSample]| s.iter().map(|x| x.id().to_string()).collect::<Vec<_>>();
    let split = SplitIds {
        train: ids(&train),
        val: ids(&val),
        test: ids(&test),
    };

    let mut runs = Vec::with_capacity(cfg.runs);
    let mut timings = Vec::with_capacity(cfg.runs);
    let mut models = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let seed = run_seed(cfg.seed, r);
        let trained = train_run::<T>(model_config, graph, cfg, &train, &val, seed)?;
        let train_eval = evaluate(&trained.model, &train, cfg.batch_size)?;
        let test_eval = if test.is_empty() {
            None
        } else {
            Some(evaluate(&trained.model, &test, cfg.batch_size)?)
        };
        log::info!(
            "run {r}: best epoch {:?}, train MAD {:.4}{}",
            trained.best_epoch,
            train_eval.metrics.mad,
            test_eval
                .as_ref()
                .map(|e| format!(", test MAD {:.4}", e.metrics.mad))
                .unwrap_or_default()
        );
        timings.push(RunTiming {
            run: r,
            train_seconds: trained.duration.as_secs_f64(),
            test_seconds: test_eval.as_ref().map(|e| e.duration.as_secs_f64()),
        });
        runs.push(RunRecord {
            run: r,
            seed,
            best_epoch: trained.best_epoch,
            history: trained.history,
            train_metrics: train_eval.metrics,
            test_metrics: test_eval.map(|e| e.metrics),
        });
        models.push(trained.model);
    }

    let train_avg = average_metrics(&runs.iter().map(|r| r.train_metrics).collect::<Vec<_>>()).expect("runs >= 1");
    let test_avg = runs
        .iter()
        .map(|r| r.test_metrics)
        .collect::<Option<Vec<_>>>()
        .and_then(|m| average_metrics(&m));
    Ok(MultiRun {
        report: TrainingReport {
            model: model_config.clone(),
            train: cfg.clone(),
            split,
            runs,
            average: AveragedMetrics {
                train: train_avg,
                test: test_avg,
            },
        },
        timings: Timings {
            runs: timings,
            total_seconds: start.elapsed().as_secs_f64(),
        },
        models,
    })
}
