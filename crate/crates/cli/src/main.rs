//! `gzrd`: simulate datasets, train and evaluate reading classifiers, run
//! the streaming detector and inspect artifacts.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 data or format,
//! 4 numeric failure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use gzrd_core::eval::{pr_curve, report, score_clips, BreakdownKey, Scored, ScoredExample};
use gzrd_core::model::{load_checkpoint, read_header, ModalitySet, Model, ModelConfig, ModelSize};
use gzrd_core::sim::{
    gen_dataset, gen_streams, read_jsonl, read_stream_jsonl, write_jsonl, write_stream_jsonl, Label, LabeledClip,
    Manifest, Task,
};
use gzrd_core::stream::{detect, stream_report, DetectorConfig};
use gzrd_core::train::{train, Augment, TrainConfig};
use gzrd_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "gzrd",
    version,
    about = "Reading recognition from egocentric gaze, RGB and head motion"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a labelled dataset (and optional alternating streams).
    Simulate(SimulateArgs),
    /// Train a model and write checkpoints plus a JSON report.
    Train(TrainArgs),
    /// Score a labelled dataset with a checkpoint.
    Eval(EvalArgs),
    /// Run the streaming detector over alternating recordings.
    Detect(DetectArgs),
    /// Summarize a checkpoint or a JSONL file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML manifest; omit to use --preset.
    manifest: Option<PathBuf>,
    /// Built-in manifest when no file is given.
    #[arg(long, value_parser = ["binary", "mode7", "medium4"])]
    preset: Option<String>,
    /// Clips per class for --preset.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, env = "GZRD_SEED")]
    seed: Option<u64>,
    /// Clip output (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Stream output (JSONL), needed when the manifest declares streams.
    #[arg(long)]
    streams_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    train: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    /// TOML file with any of the flags below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long, env = "GZRD_SEED")]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Modalities the model is built with, e.g. `gaze+imu` or `all`.
    #[arg(long)]
    modalities: Option<String>,
    #[arg(long)]
    gaze_noise: Option<f64>,
    #[arg(long)]
    no_rotate: bool,
    #[arg(long)]
    flip: bool,
    #[arg(long)]
    no_dropout: bool,
    /// Output directory for best.ckpt, last.ckpt and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    test: PathBuf,
    ckpt: PathBuf,
    /// Inference modalities (subset of the model's).
    #[arg(long)]
    modalities: Option<String>,
    /// Per-group table: scenario, medium, mode or gaze_span.
    #[arg(long)]
    breakdown: Option<String>,
    /// Precision-recall curve CSV.
    #[arg(long)]
    pr: Option<PathBuf>,
    /// Full report JSON; the summary always goes to stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    streams: PathBuf,
    ckpt: PathBuf,
    /// Window length in seconds; defaults to the model's gaze window.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    stride: f64,
    #[arg(long, default_value_t = 3)]
    hysteresis: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 5.0)]
    max_match: f64,
    #[arg(long)]
    modalities: Option<String>,
    /// Per-emission CSV (stream,t,score,state); state 1 is reading.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Per-stream reports (JSON array).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

/// Training options that may come from a file.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    model: Option<String>,
    task: Option<String>,
    seed: Option<u64>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    modalities: Option<String>,
    modality_dropout: Option<bool>,
    augment: Option<Augment>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text)?;
    toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn print_json(v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // A closed pipe (e.g. `| head`) is not a failure of the command.
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn task_for(classes: usize) -> Result<Task> {
    [Task::Binary, Task::Mode7, Task::Medium4]
        .into_iter()
        .find(|t| t.num_classes() == classes)
        .ok_or_else(|| Error::Data(format!("no task has {classes} classes")))
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    load_checkpoint(path)
}

fn keep_set(flag: Option<&str>, model: &Model<f32>) -> Result<ModalitySet> {
    let have = model.config().modalities();
    let keep = match flag {
        Some(s) => ModalitySet::parse(s)?,
        None => have,
    };
    let keep = keep.intersect(have);
    if keep.is_empty() {
        return Err(Error::Config(format!(
            "none of the requested modalities are in the model ({have})"
        )));
    }
    Ok(keep)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut manifest = match (&a.manifest, a.preset.as_deref()) {
        (Some(p), None) => read_toml::<Manifest>(p)?,
        (None, Some(preset)) => {
            let seed = a.seed.unwrap_or(0);
            match preset {
                "binary" => Manifest::binary(seed, a.per_class, a.per_class),
                "mode7" => Manifest::mode7(seed, a.per_class),
                _ => Manifest::medium4(seed, a.per_class),
            }
        }
        _ => return Err(Error::Config("give either a manifest file or --preset".into())),
    };
    if let Some(s) = a.seed {
        manifest.seed = s;
    }
    manifest.validate()?;
    if !manifest.streams.is_empty() && a.streams_out.is_none() {
        return Err(Error::Config("manifest declares streams; pass --streams-out".into()));
    }
    eprintln!("manifest: {}", serde_json::to_string(&manifest)?);
    let clips = gen_dataset(&manifest)?;
    let mut w = create(&a.out)?;
    write_jsonl(&mut w, &clips)?;
    w.flush()?;
    let mut streams = 0;
    if let Some(p) = &a.streams_out {
        let s = gen_streams(&manifest)?;
        streams = s.len();
        let mut w = create(p)?;
        write_stream_jsonl(&mut w, &s)?;
        w.flush()?;
    }
    let counts: BTreeMap<&str, BTreeMap<&str, usize>> = [
        ("binary", Task::Binary),
        ("mode7", Task::Mode7),
        ("medium4", Task::Medium4),
    ]
    .into_iter()
    .map(|(n, t)| (n, manifest.class_counts(t)))
    .collect();
    print_json(&json!({ "clips": clips.len(), "streams": streams, "class_counts": counts }))
}

fn read_clips(path: &Path) -> Result<Vec<LabeledClip>> {
    read_jsonl(open(path)?)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let file: TrainFile = match &a.config {
        Some(p) => read_toml(p)?,
        None => TrainFile::default(),
    };
    let task = Task::parse(a.task.as_deref().or(file.task.as_deref()).unwrap_or("binary"))?;
    let size = ModelSize::parse(a.model.as_deref().or(file.model.as_deref()).unwrap_or("m"))?;
    let mods = ModalitySet::parse(a.modalities.as_deref().or(file.modalities.as_deref()).unwrap_or("all"))?;
    let model_cfg = ModelConfig::new(size, task.num_classes()).restrict(mods);
    let mut cfg = TrainConfig::new(task, a.seed.or(file.seed).unwrap_or(0));
    cfg.epochs = a.epochs.or(file.epochs).unwrap_or(cfg.epochs);
    cfg.lr = a.lr.or(file.lr).unwrap_or(cfg.lr);
    cfg.batch_size = a.batch_size.or(file.batch_size).unwrap_or(cfg.batch_size);
    cfg.modality_dropout = !a.no_dropout && file.modality_dropout.unwrap_or(true);
    cfg.augment = file.augment.unwrap_or_default();
    if a.no_rotate {
        cfg.augment.rotate = false;
    }
    if a.flip {
        cfg.augment.flip = true;
    }
    if let Some(n) = a.gaze_noise {
        cfg.augment.gaze_noise = n;
    }
    cfg.validate()?;
    model_cfg.validate()?;
    eprintln!("model: {}", serde_json::to_string(&model_cfg)?);
    eprintln!("train: {}", serde_json::to_string(&cfg)?);
    let train_set = read_clips(&a.train)?;
    let val_set = match &a.val {
        Some(p) => read_clips(p)?,
        None => Vec::new(),
    };
    std::fs::create_dir_all(&a.out)?;
    let started = Instant::now();
    let out = train(&train_set, &val_set, &model_cfg, &cfg, Some(&a.out))?;
    eprintln!("trained in {:.1} s", started.elapsed().as_secs_f64());
    let mut w = create(&a.out.join("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &out.report)?;
    w.flush()?;
    print_json(&json!({
        "param_count": out.report.param_count,
        "best_epoch": out.report.best_epoch,
        "epochs": out.report.epochs,
        "checkpoint": a.out.join("best.ckpt"),
    }))
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let key = a.breakdown.as_deref().map(BreakdownKey::parse).transpose()?;
    let model = load_model(&a.ckpt)?;
    let keep = keep_set(a.modalities.as_deref(), &model)?;
    let task = task_for(model.config().classes)?;
    let clips = read_clips(&a.test)?;
    if clips.is_empty() {
        return Err(Error::Data(format!("{} holds no clips", a.test.display())));
    }
    let scored = score_clips(&model, &clips, task, keep)?;
    let rep = report(&scored, task, keep, key)?;
    if let Some(p) = &a.pr {
        let s: Vec<Scored> = scored.iter().map(ScoredExample::binary).collect();
        let mut w = create(p)?;
        pr_curve(&s)?.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = &a.report {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &rep)?;
        w.flush()?;
    }
    let b = &rep.binary;
    let mut summary = json!({
        "task": task,
        "modalities": rep.modalities,
        "n": b.n,
        "accuracy": b.accuracy,
        "f1": b.f1,
        "precision_at_recall_90": b.precision_at_recall_90,
        "auc": b.auc,
        "balanced_accuracy": rep.balanced_accuracy,
    });
    if let Some(groups) = &rep.breakdown {
        let table: BTreeMap<&String, serde_json::Value> = groups
            .iter()
            .map(|(k, m)| (k, json!({ "n": m.n, "accuracy": m.accuracy, "f1": m.f1, "auc": m.auc })))
            .collect();
        summary["breakdown"] = json!(table);
    }
    print_json(&summary)
}

fn detect_cmd(a: DetectArgs) -> Result<()> {
    let model = load_model(&a.ckpt)?;
    let mc = model.config();
    let window = a
        .window
        .or(mc.gaze.map(|g| g.duration_s))
        .or(mc.imu.map(|i| i.duration_s))
        .unwrap_or(2.0);
    let cfg = DetectorConfig {
        stride_s: a.stride,
        hysteresis: a.hysteresis,
        threshold: a.threshold,
        max_match_s: a.max_match,
        modalities: keep_set(a.modalities.as_deref(), &model)?,
        ..DetectorConfig::new(window)
    };
    cfg.validate()?;
    eprintln!("detector: {}", serde_json::to_string(&cfg)?);
    let streams = read_stream_jsonl(open(&a.streams)?)?;
    let mut trace_out = a.trace.as_deref().map(create).transpose()?;
    if let Some(w) = trace_out.as_mut() {
        writeln!(w, "stream,t,score,state")?;
    }
    let mut reports = Vec::new();
    for (i, s) in streams.iter().enumerate() {
        let trace = detect(&model, s, &cfg)?;
        if let Some(w) = trace_out.as_mut() {
            for e in &trace.emissions {
                writeln!(w, "{i},{},{},{}", e.t, e.score, (e.state == Label::Reading) as u8)?;
            }
        }
        reports.push(stream_report(s, &trace, &cfg));
    }
    if let Some(mut w) = trace_out {
        w.flush()?;
    }
    if let Some(p) = &a.report {
        let mut w = create(p)?;
        serde_json::to_writer_pretty(&mut w, &reports)?;
        w.flush()?;
    }
    let summary: Vec<_> = reports
        .iter()
        .map(|r| {
            json!({
                "scenario": r.scenario_id,
                "emissions": r.emissions,
                "matched": r.latency.matched.len(),
                "misses": r.latency.misses.len(),
                "mean_latency_s": r.latency.mean_latency,
                "accuracy": r.accuracy.accuracy,
            })
        })
        .collect();
    print_json(&summary)
}

fn inspect(a: InspectArgs) -> Result<()> {
    let mut head = [0u8; 5];
    let n = open(&a.path)?.read(&mut head)?;
    if n == 5 && &head == b"GZRD1" {
        let meta = read_header(&mut open(&a.path)?)?;
        // Full read validates the payload too.
        let model = load_model(&a.path)?;
        let shapes: BTreeMap<&String, &Vec<usize>> = meta.tensors.iter().map(|(k, t)| (k, &t.shape)).collect();
        return print_json(&json!({
            "kind": "checkpoint",
            "param_count": model.param_count(),
            "precision": meta.precision,
            "init_seed": meta.init_seed,
            "activation": meta.activation,
            "config": meta.config,
            "tensors": shapes,
        }));
    }
    let lines = BufReader::new(open(&a.path)?).lines_count()?;
    match read_jsonl(open(&a.path)?) {
        Ok(clips) => {
            let mut counts: BTreeMap<&str, BTreeMap<String, usize>> = BTreeMap::new();
            for c in &clips {
                for (k, v) in [
                    ("label", c.spec.label.name().to_string()),
                    ("mode", c.spec.mode.name().to_string()),
                    ("medium", c.spec.medium.name().to_string()),
                    ("direction", c.spec.direction.name().to_string()),
                ] {
                    *counts.entry(k).or_default().entry(v).or_default() += 1;
                }
            }
            let modal = |f: fn(&LabeledClip) -> bool| clips.iter().filter(|c| f(c)).count();
            print_json(&json!({
                "kind": "clips",
                "lines": lines,
                "clips": clips.len(),
                "with_gaze": modal(|c| c.gaze.is_some()),
                "with_rgb": modal(|c| c.rgb.is_some()),
                "with_imu": modal(|c| c.imu.is_some()),
                "counts": counts,
            }))
        }
        Err(clip_err) => match read_stream_jsonl(open(&a.path)?) {
            Ok(streams) => {
                let items: Vec<_> = streams
                    .iter()
                    .map(|s| json!({ "scenario": s.scenario_id, "total_s": s.total_s, "changes": s.change_points.len() }))
                    .collect();
                print_json(&json!({ "kind": "streams", "lines": lines, "streams": items }))
            }
            Err(_) => Err(clip_err),
        },
    }
}

trait LinesCount {
    fn lines_count(self) -> Result<usize>;
}

impl<R: std::io::BufRead> LinesCount for R {
    fn lines_count(self) -> Result<usize> {
        let mut n = 0;
        for l in self.lines() {
            if !l?.trim().is_empty() {
                n += 1;
            }
        }
        Ok(n)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Eval(a) => eval_cmd(a),
        Cmd::Detect(a) => detect_cmd(a),
        Cmd::Inspect(a) => inspect(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
