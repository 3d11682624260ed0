use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use rehab_assess::autodiff::GradcheckOptions;
use rehab_assess::data::{
    csv_joint_count, load_dataset, load_sequence, synthesize_corpus, write_sequence, ExerciseKind, Manifest,
    ManifestEntry,
};
use rehab_assess::feedback::{extract_feedback, render_feedback, FeedbackFormat};
use rehab_assess::model::{model_gradcheck, model_gradcheck_options, Checkpoint, Model, ModelConfig};
use rehab_assess::train::{evaluate, multi_run, HuberForm, LossKind, TrainConfig};
use rehab_assess::{Error, JointGraph, Precision, Scalar};

#[derive(Parser)]
#[command(name = "rehab-assess", version, about = "Skeleton-based exercise quality assessment")]
struct Cli {
    /// Log more (repeat for trace output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic corpus.
    Synth(SynthArgs),
    /// Train one or more seeded models on a manifest.
    Train(TrainArgs),
    /// Score a manifest with a checkpoint and report metrics.
    Evaluate(EvaluateArgs),
    /// Export per-joint attention feedback for one sequence.
    Feedback(FeedbackArgs),
    /// Check the network's gradients against central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "arm_lift")]
    kind: ExerciseKind,
    #[arg(long, default_value_t = 16)]
    count: usize,
    /// Quality range `lo,hi` (or a single value) in [0, 1].
    #[arg(long, default_value = "0,1", value_parser = parse_range)]
    quality: (f64, f64),
    /// Frame count range `lo,hi` (or a single value).
    #[arg(long, default_value = "40,80", value_parser = parse_range)]
    frames: (f64, f64),
    /// Score range `lo,hi` that quality maps onto.
    #[arg(long, default_value = "0,50", value_parser = parse_range)]
    score_range: (f64, f64),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file with optional `preset`, `model` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    delta: Option<f64>,
    /// Use the discontinuous `delta*|e| - delta/2` Huber branch.
    #[arg(long)]
    huber_offset: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    batch: usize,
}

#[derive(Args)]
struct FeedbackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sequence CSV to explain.
    #[arg(long)]
    sequence: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated list of `svg` and `csv`.
    #[arg(long, default_value = "svg,csv")]
    format: String,
    /// Block whose attention is exported (default: from the checkpoint).
    #[arg(long)]
    block: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// JSON file with optional `preset` and `model` sections (default: tiny).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    frames: usize,
    /// Entries sampled per parameter tensor; 0 checks all.
    #[arg(long, default_value_t = 32)]
    entries: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-6)]
    step: f64,
    /// Where to write `gradcheck.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scale the sigmoid backward rule (negative control).
    #[arg(long, hide = true)]
    corrupt_sigmoid: Option<f64>,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |p: &str| p.parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
    match parts.as_slice() {
        [v] => num(v).map(|v| (v, v)),
        [a, b] => Ok((num(a)?, num(b)?)),
        _ => Err(format!("expected `lo,hi` or a single value, got {s:?}")),
    }
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    s.parse::<u32>()
        .ok()
        .and_then(Precision::from_bits)
        .ok_or_else(|| format!("precision must be 32 or 64, got {s:?}"))
}

/// Failure with the exit code it maps to.
fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Failed>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Numeric(_)) => 3,
        Some(Error::Config(_)) => 1,
        _ => 2,
    }
}

/// A check that ran to completion and did not pass.
#[derive(Debug)]
struct Failed(String);

impl std::fmt::Display for Failed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Failed {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Feedback(a) => feedback(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    if a.count == 0 {
        return Err(Error::Config("--count must be at least 1".into()).into());
    }
    let frames = (a.frames.0 as usize, a.frames.1 as usize);
    let samples = synthesize_corpus(a.kind, a.count, a.quality, frames, a.score_range, a.seed)?;
    let seq_dir = a.out.join("sequences");
    create_dir(&seq_dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let rel = format!("sequences/{}.csv", s.id());
        write_sequence(a.out.join(&rel), &s.sequence)?;
        entries.push(ManifestEntry {
            id: s.id().to_string(),
            path: rel,
            score: s.score,
        });
    }
    let manifest = Manifest {
        dataset: format!("synthetic_{}", a.kind),
        score_range: [a.score_range.0, a.score_range.1],
        samples: entries,
    };
    manifest.save(a.out.join("manifest.json"))?;
    println!(
        "wrote {} sequences and {}",
        samples.len(),
        a.out.join("manifest.json").display()
    );
    Ok(())
}

/// Reads `preset` / `model` / `train` sections. Model fields overlay the
/// preset, train fields overlay the training defaults.
fn load_config(path: Option<&Path>, default_preset: &str) -> anyhow::Result<(ModelConfig, TrainConfig)> {
    let root: Value = match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(Error::from)?
        }
        None => json!({}),
    };
    let Some(obj) = root.as_object() else {
        return Err(Error::Config("config file must hold a JSON object".into()).into());
    };
    if let Some(k) = obj.keys().find(|k| !["preset", "model", "train"].contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown config section {k:?}")).into());
    }
    let preset = obj.get("preset").and_then(Value::as_str).unwrap_or(default_preset);
    let base = match preset {
        "default" => ModelConfig::default(),
        "tiny" => ModelConfig::tiny(),
        other => return Err(Error::Config(format!("unknown preset {other:?} (expected default or tiny)")).into()),
    };
    let mut model = serde_json::to_value(base)?;
    if let Some(overlay) = obj.get("model") {
        let Some(fields) = overlay.as_object() else {
            return Err(Error::Config("`model` must be an object".into()).into());
        };
        for (k, v) in fields {
            model[k] = v.clone();
        }
    }
    let model: ModelConfig = serde_json::from_value(model).map_err(|e| Error::Config(format!("model section: {e}")))?;
    let train: TrainConfig = match obj.get("train") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("train section: {e}")))?,
        None => TrainConfig::default(),
    };
    model.validate()?;
    Ok((model, train))
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let (mut model_cfg, mut cfg) = load_config(a.config.as_deref(), "default")?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.runs {
        cfg.runs = r;
    }
    if let Some(l) = a.loss {
        cfg.loss.kind = l;
    }
    if let Some(d) = a.delta {
        cfg.loss.delta = d;
    }
    if a.huber_offset {
        cfg.loss.huber_form = HuberForm::Offset;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.optimizer.learning_rate = lr;
    }
    if let Some(p) = a.precision {
        model_cfg.precision = p;
    }
    cfg.validate()?;
    let graph = JointGraph::from_name_or_path(&model_cfg.graph)?;
    let (_, samples) =
        load_dataset(&a.manifest, graph.num_joints()).with_context(|| format!("loading {}", a.manifest.display()))?;
    create_dir(&a.out)?;
    match model_cfg.precision {
        Precision::F32 => train_at::<f32>(&model_cfg, &graph, &cfg, &samples, &a.out),
        Precision::F64 => train_at::<f64>(&model_cfg, &graph, &cfg, &samples, &a.out),
    }
}

fn train_at<T: Scalar>(
    model_cfg: &ModelConfig,
    graph: &JointGraph,
    cfg: &TrainConfig,
    samples: &[rehab_assess::data::LabeledSample],
    out: &Path,
) -> anyhow::Result<()> {
    log::info!(
        "training {} run(s) of {} epochs on {} samples",
        cfg.runs,
        cfg.epochs,
        samples.len()
    );
    let result = multi_run::<T>(model_cfg, graph, cfg, samples)?;
    result.models[0].save(out.join("checkpoint.json"))?;
    if result.models.len() > 1 {
        let dir = out.join("runs");
        create_dir(&dir)?;
        for (r, m) in result.models.iter().enumerate() {
            m.save(dir.join(format!("run_{r:02}.json")))?;
        }
    }
    write_json(&out.join("report.json"), &result.report)?;
    write_json(&out.join("timings.json"), &result.timings)?;
    let avg = &result.report.average;
    println!("train: {}", serde_json::to_string(&avg.train)?);
    if let Some(test) = &avg.test {
        println!("test:  {}", serde_json::to_string(test)?);
    }
    println!("wrote {}", out.join("report.json").display());
    Ok(())
}

/// Fails with a config error when `path` holds a different joint count.
fn check_joint_count(path: &Path, graph: &JointGraph) -> anyhow::Result<()> {
    let n = csv_joint_count(path)?;
    if n != graph.num_joints() {
        return Err(Error::Config(format!(
            "{} has {n} joints, the checkpoint's graph {:?} has {}",
            path.display(),
            graph.name(),
            graph.num_joints()
        ))
        .into());
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> anyhow::Result<()> {
    match Checkpoint::load(&a.checkpoint)? {
        Checkpoint::F32(m) => evaluate_at(&m, &a),
        Checkpoint::F64(m) => evaluate_at(&m, &a),
    }
}

fn evaluate_at<T: Scalar>(model: &Model<T>, a: &EvaluateArgs) -> anyhow::Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    if let Some(first) = manifest.samples.first() {
        check_joint_count(&base.join(&first.path), model.graph())?;
    }
    let samples = manifest.load_samples(&a.manifest, model.graph().num_joints())?;
    let start = Instant::now();
    let ev = evaluate(model, &samples, a.batch)?;
    let seconds = start.elapsed().as_secs_f64();
    create_dir(&a.out)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "target", "prediction"])?;
    for ((id, t), p) in ev.ids.iter().zip(&ev.targets).zip(&ev.predictions) {
        w.write_record([id.clone(), t.to_string(), p.to_string()])?;
    }
    let path = a.out.join("predictions.csv");
    fs::write(&path, w.into_inner()?).map_err(|e| Error::Io { path, source: e })?;
    let report = json!({
        "count": samples.len(),
        "metrics": ev.metrics,
        "inference_seconds": seconds,
    });
    write_json(&a.out.join("metrics.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn feedback(a: FeedbackArgs) -> anyhow::Result<()> {
    let formats = FeedbackFormat::parse_list(&a.format)?;
    match Checkpoint::load(&a.checkpoint)? {
        Checkpoint::F32(m) => feedback_at(m, &a, &formats),
        Checkpoint::F64(m) => feedback_at(m, &a, &formats),
    }
}

fn feedback_at<T: Scalar>(mut model: Model<T>, a: &FeedbackArgs, formats: &[FeedbackFormat]) -> anyhow::Result<()> {
    if let Some(b) = a.block {
        let mut cfg = model.config().clone();
        cfg.feedback_block = b;
        model = Model::from_parts(cfg, model.graph().clone(), model.params().clone())?;
    }
    check_joint_count(&a.sequence, model.graph())?;
    let seq = load_sequence(&a.sequence, model.graph().num_joints())?;
    let fb = extract_feedback(&model, &seq)?;
    create_dir(&a.out)?;
    for &f in formats {
        let suffix = match f {
            FeedbackFormat::Csv => "roles",
            FeedbackFormat::Svg => "feedback",
        };
        let path = a.out.join(format!("{}_{suffix}.{}", seq.id, f.extension()));
        render_feedback(&fb, model.graph(), &path, f)?;
        println!("wrote {}", path.display());
    }
    let summary: Vec<String> = fb.summary_role.iter().map(|v| format!("{v:.3}")).collect();
    println!("score {:.4}; joint roles {}", fb.score, summary.join(" "));
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> anyhow::Result<()> {
    let (mut model_cfg, _) = load_config(a.config.as_deref(), "tiny")?;
    model_cfg.seed = a.seed;
    model_cfg.precision = Precision::F64;
    let graph = JointGraph::from_name_or_path(&model_cfg.graph)?;
    let opts = GradcheckOptions {
        step: a.step,
        tolerance: a.tolerance,
        max_entries: (a.entries > 0).then_some(a.entries),
        corrupt_sigmoid: a.corrupt_sigmoid,
        ..model_gradcheck_options()
    };
    let report = model_gradcheck(&model_cfg, &graph, a.frames, &opts)?;
    println!(
        "{:<28} {:>8} {:>12} {:>12}",
        "parameter", "entries", "max rel", "max abs"
    );
    for p in &report.params {
        println!(
            "{:<28} {:>8} {:>12.3e} {:>12.3e}",
            p.name, p.entries_checked, p.max_rel_error, p.max_abs_error
        );
    }
    println!(
        "max relative error {:.3e} (tolerance {:.0e}): {}",
        report.max_rel_error,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join("gradcheck.json"), &report)?;
    }
    if !report.passed {
        bail!(Failed(format!(
            "gradient check failed: max relative error {:.3e}",
            report.max_rel_error
        )));
    }
    Ok(())
}
