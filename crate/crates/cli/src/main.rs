//! `acl`: synthesize data, train, predict, evaluate and self-check.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use acl_core::data::synth::{self, SynthConfig};
use acl_core::data::{load_dataset, load_video, resize_map, write_frame, Dataset, Video, VIDEOS_DIR};
use acl_core::metrics::{evaluate_dataset, EvalConfig};
use acl_core::net::{ModelParams, NetConfig, SaliencyNet};
use acl_core::selfcheck::{self, SelfCheckConfig};
use acl_core::trainer::{train, TrainConfig, TrainData};
use acl_core::Error;

use manifest::RunManifest;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "acl", version, about = "Attentive CNN-convLSTM video saliency")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic moving-blob dataset.
    Synth(SynthArgs),
    /// Train a model with alternating video and image batches.
    Train(TrainArgs),
    /// Predict saliency maps for every frame of a video.
    Predict(PredictArgs),
    /// Score predicted maps against a dataset's fixations.
    Eval(EvalArgs),
    /// Run the oracle property suites.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    videos: usize,
    #[arg(long, default_value_t = 24)]
    frames: usize,
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Video dataset; its train and val splits are used.
    #[arg(long)]
    data: PathBuf,
    /// Dataset whose train-split frames form the still-image pool;
    /// defaults to `--data`.
    #[arg(long = "static")]
    statics: Option<PathBuf>,
    /// `key = value` file with model and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory of `frame_NNNNN.stns` frames.
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory with one sub-directory of maps per video.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Text report; the CSV report is written beside it with `.csv`.
    #[arg(long)]
    out: PathBuf,
    /// Dataset supplying shuffled-AUC negatives; defaults to `--gt`.
    #[arg(long)]
    shuffle_pool: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    splits: usize,
    /// Ground-truth blur width in pixels; width / 32 by default.
    #[arg(long)]
    sigma: Option<f64>,
    /// Which ground-truth videos to score: all, train, val or test.
    #[arg(long, default_value = "all")]
    split: String,
}

#[derive(Args)]
struct SelfcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// KL ε used by the implementation under test (fault injection).
    #[arg(long, default_value_t = 1e-8)]
    kl_eps: f64,
}

enum Failure {
    Usage(String),
    Core(Error),
    Checks(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Checks(n)) => {
            eprintln!("error: {n} suite(s) failed");
            ExitCode::from(EXIT_NUMERIC)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::NonFinite(_) | Error::Degenerate(_) => ExitCode::from(EXIT_NUMERIC),
                _ => ExitCode::from(EXIT_DATA),
            }
        }
    }
}

/// Creates `dir`, refusing a non-empty one unless `force`.
fn prepare_out_dir(dir: &Path, force: bool) -> CmdResult {
    if let Ok(mut entries) = fs::read_dir(dir) {
        if entries.next().is_some() && !force {
            return Err(Failure::Usage(format!(
                "{} is not empty; pass --force to write into it",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    if a.videos == 0 || a.frames == 0 || a.size == 0 {
        return Err(Failure::Usage(
            "--videos, --frames and --size must be at least 1".into(),
        ));
    }
    let started = Instant::now();
    prepare_out_dir(&a.out, a.force)?;
    // stale frames from an earlier dataset would mix with the new ones
    let videos = a.out.join(VIDEOS_DIR);
    if videos.is_dir() {
        fs::remove_dir_all(&videos).map_err(|e| Error::io(&videos, e))?;
    }
    let cfg = SynthConfig::new(a.videos, a.frames, a.size, a.seed);
    let split = synth::write_dataset(&cfg, &a.out)?;
    let mut m = RunManifest::new("synth", a.seed);
    m.config = format!(
        "synth.videos = {}\nsynth.frames = {}\nsynth.size = {}\nsynth.seed = {}\nsynth.observers = {}\n",
        cfg.videos, cfg.frames, cfg.size, cfg.seed, cfg.observers
    );
    m.output("out", &a.out);
    m.finish(started).write(&a.out)?;
    println!(
        "wrote {} videos ({} train, {} val, {} test) to {}",
        a.videos,
        split.train.len(),
        split.val.len(),
        split.test.len(),
        a.out.display()
    );
    Ok(())
}

/// Splits a config file into model and training settings. Errors carry
/// the file and 1-based line.
fn read_config(path: &Path) -> Result<(NetConfig, TrainConfig), Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut train = TrainConfig::default();
    let mut net_lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let handled = match line.split_once('=') {
            Some((k, v)) if !line.starts_with('#') => train
                .set(k.trim(), v.trim())
                .map_err(|msg| Error::format(path, i + 1, msg))?,
            _ => false,
        };
        // keep line numbers aligned for the model parser
        net_lines.push(if handled { "" } else { raw });
    }
    let net = NetConfig::from_conf(&net_lines.join("\n")).map_err(|(line, msg)| Error::format(path, line, msg))?;
    train.validate()?;
    Ok((net, train))
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let started = Instant::now();
    let (net_cfg, mut cfg) = match &a.config {
        Some(p) => read_config(p)?,
        None => (NetConfig::default(), TrainConfig::default()),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    prepare_out_dir(&a.out, a.force)?;

    let data = load_dataset(&a.data)?;
    let statics_ds = match &a.statics {
        Some(p) => Some(load_dataset(p)?),
        None => None,
    };
    let statics_ref = statics_ds.as_ref().unwrap_or(&data);
    let train_v = data.select(&data.split.train)?;
    let val_v = data.select(&data.split.val)?;
    let static_v = statics_ref.select(&statics_ref.split.train)?;

    let net = SaliencyNet::new(net_cfg.clone(), cfg.seed)?;
    let mut m = RunManifest::new("train", cfg.seed);
    m.config = format!("{}{}", net_cfg.to_conf(), cfg.to_conf());
    m.input("data", &a.data);
    if let Some(p) = &a.statics {
        m.input("static", p);
    }
    if let Some(p) = &a.config {
        m.input("config", p);
    }
    m.output("out", &a.out);

    let report = train(
        net,
        TrainData {
            train: &train_v,
            val: &val_v,
            statics: &static_v,
        },
        &cfg,
        Some(&a.out),
    );
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            m.note(&format!("aborted: {e}"));
            m.finish(started).write(&a.out)?;
            return Err(e.into());
        }
    };
    m.note(&format!(
        "best epoch {} of {}{}",
        report.best_epoch,
        report.epochs.len(),
        if report.stopped_early { ", stopped early" } else { "" }
    ));
    m.finish(started).write(&a.out)?;
    for e in &report.epochs {
        println!(
            "epoch {} lr {:e} validation loss {}",
            e.epoch,
            e.lr,
            e.val_loss.map_or_else(|| "NA".into(), |v| format!("{v:.6}"))
        );
    }
    println!(
        "best checkpoint (epoch {}) in {}",
        report.best_epoch,
        a.out.join("checkpoint").display()
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> CmdResult {
    let started = Instant::now();
    let (config, params) = ModelParams::load(&a.ckpt)?;
    let net = SaliencyNet { config, params };
    let video: Video = load_video(&a.video)?;
    prepare_out_dir(&a.out, a.force)?;
    let side = net.config.encoder.input_side;
    let inputs = (0..video.len())
        .map(|i| video.input(i, side))
        .collect::<Result<Vec<_>, _>>()?;
    let pred = net.predict(&inputs)?;
    let (h, w) = video.dims();
    for t in 0..pred.len() {
        let map = resize_map(&pred.frame(t), h, w)?;
        write_frame(&a.out, t, &map)?;
    }
    let mut m = RunManifest::new("predict", 0);
    m.config = net.config.to_conf();
    m.input("ckpt", &a.ckpt);
    m.input("video", &a.video);
    m.output("out", &a.out);
    m.finish(started).write(&a.out)?;
    println!("wrote {} maps to {}", pred.len(), a.out.display());
    Ok(())
}

fn split_ids(ds: &Dataset, split: &str) -> Result<Option<Vec<String>>, Failure> {
    Ok(match split {
        "all" => None,
        "train" => Some(ds.split.train.clone()),
        "val" => Some(ds.split.val.clone()),
        "test" => Some(ds.split.test.clone()),
        other => {
            return Err(Failure::Usage(format!(
                "--split must be all, train, val or test, got {other:?}"
            )))
        }
    })
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let started = Instant::now();
    if a.splits == 0 {
        return Err(Failure::Usage("--splits must be at least 1".into()));
    }
    let gt = load_dataset(&a.gt)?;
    let pool = match &a.shuffle_pool {
        Some(p) => Some(load_dataset(p)?),
        None => None,
    };
    let config = EvalConfig {
        sigma: a.sigma,
        shuffle_splits: a.splits,
        seed: a.seed,
        videos: split_ids(&gt, &a.split)?,
    };
    let report = evaluate_dataset(&a.pred, &gt, pool.as_ref(), &config)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = report.to_text();
    fs::write(&a.out, &text).map_err(|e| Error::io(&a.out, e))?;
    let csv = sibling(&a.out, "csv");
    fs::write(&csv, report.to_csv()).map_err(|e| Error::io(&csv, e))?;

    let mut m = RunManifest::new("eval", a.seed);
    m.config = format!(
        "eval.sigma = {}\neval.splits = {}\neval.seed = {}\neval.split = {}\n",
        a.sigma.map_or_else(|| "auto".into(), |s| s.to_string()),
        a.splits,
        a.seed,
        a.split
    );
    m.input("pred", &a.pred);
    m.input("gt", &a.gt);
    if let Some(p) = &a.shuffle_pool {
        m.input("shuffle_pool", p);
    }
    m.output("report", &a.out);
    m.output("csv", &csv);
    m.finish(started).write_file(&sibling(&a.out, "manifest.txt"))?;
    print!("{text}");
    Ok(())
}

/// `path` with `ext` appended to its file name.
fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(ext);
    path.with_file_name(name)
}

fn cmd_selfcheck(a: SelfcheckArgs) -> CmdResult {
    let cfg = SelfCheckConfig {
        seed: a.seed,
        kl_eps: a.kl_eps,
        ..SelfCheckConfig::default()
    };
    let reports = selfcheck::run_all(&cfg);
    let mut failed = 0;
    for r in &reports {
        println!("{}", r.summary());
        for f in r.failures.iter().take(10) {
            println!("    {}: {f}", r.name);
        }
        if !r.passed() {
            failed += 1;
        }
    }
    println!("{} suites, {} failed", reports.len(), failed);
    if failed > 0 {
        return Err(Failure::Checks(failed));
    }
    Ok(())
}
