//! Alternating video/image training with Adam and a step-decay schedule.
//!
//! Video batches are windows of consecutive frames trained end to end on
//! the summed sequence loss. Image batches are independent stills whose
//! attention maps are trained against their fixations; they never touch
//! the convLSTM or readout parameters.

mod adam;

pub use adam::{adam_step, OptimState};

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{default_sigma, sample_image_batch, sample_video_batch, FixationMap, FrameTarget, Video};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, kl_div, LossSummary, LossWeights};
use crate::net::{attention_forward, encode, forward_sequence, AttentionMode, ModelParams, ParamGroup, SaliencyNet};
use crate::tensor::{Tape, Tensor, Var};

pub const LOG_FILE: &str = "train_log.txt";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LAST_GOOD_DIR: &str = "last_good";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// The rate is divided by `decay_factor` every `decay_every` epochs.
    pub decay_factor: f64,
    pub decay_every: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Frames per video batch.
    pub video_len: usize,
    /// Stills per image batch.
    pub image_batch: usize,
    /// Batches (of both kinds) per epoch.
    pub steps_per_epoch: usize,
    /// The schedule repeats `video_batches` video batches followed by
    /// `image_batches` image batches.
    pub video_batches: usize,
    pub image_batches: usize,
    pub freeze_encoder: bool,
    /// Ground-truth blur width in frame pixels; width / 32 when unset.
    pub sigma: Option<f64>,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            decay_factor: 10.0,
            decay_every: 2,
            max_epochs: 10,
            patience: 2,
            seed: 0,
            video_len: 20,
            image_batch: 20,
            steps_per_epoch: 100,
            video_batches: 1,
            image_batches: 1,
            freeze_encoder: false,
            sigma: None,
            loss: LossWeights::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchKind {
    Video,
    Image,
}

impl fmt::Display for BatchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatchKind::Video => "video",
            BatchKind::Image => "image",
        })
    }
}

impl TrainConfig {
    /// `base_lr / decay_factor^⌊epoch / decay_every⌋`
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base_lr / self.decay_factor.powi((epoch / self.decay_every) as i32)
    }

    /// Kind of the batch at global step `step` (0-based).
    pub fn batch_kind(&self, step: u64) -> BatchKind {
        let cycle = (self.video_batches + self.image_batches) as u64;
        if step % cycle < self.video_batches as u64 {
            BatchKind::Video
        } else {
            BatchKind::Image
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be positive");
        }
        if !(self.decay_factor >= 1.0) || self.decay_every == 0 {
            return bad("decay_factor must be at least 1 and decay_every positive");
        }
        if self.max_epochs == 0 || self.steps_per_epoch == 0 {
            return bad("max_epochs and steps_per_epoch must be positive");
        }
        if self.video_len == 0 || self.image_batch == 0 {
            return bad("video_len and image_batch must be positive");
        }
        if self.video_batches == 0 {
            return bad("video_batches must be positive");
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0 && s.is_finite()) {
                return bad("sigma must be positive");
            }
        }
        self.loss.validate()
    }

    /// `key = value` lines, one per field.
    pub fn to_conf(&self) -> String {
        let sigma = self.sigma.map_or_else(|| "auto".to_string(), |s| s.to_string());
        format!(
            "train.base_lr = {}\ntrain.decay_factor = {}\ntrain.decay_every = {}\ntrain.max_epochs = {}\n\
             train.patience = {}\ntrain.seed = {}\ntrain.video_len = {}\ntrain.image_batch = {}\n\
             train.steps_per_epoch = {}\ntrain.video_batches = {}\ntrain.image_batches = {}\n\
             train.freeze_encoder = {}\ntrain.sigma = {sigma}\nloss.alpha_cc = {}\nloss.alpha_nss = {}\nloss.eps = {}\n",
            self.base_lr,
            self.decay_factor,
            self.decay_every,
            self.max_epochs,
            self.patience,
            self.seed,
            self.video_len,
            self.image_batch,
            self.steps_per_epoch,
            self.video_batches,
            self.image_batches,
            self.freeze_encoder,
            self.loss.alpha_cc,
            self.loss.alpha_nss,
            self.loss.eps,
        )
    }

    /// Applies one `key = value` pair; returns `false` for keys that are
    /// not training keys.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<bool, String> {
        fn parse<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse().map_err(|e| format!("{key}: {e}"))
        }
        match key {
            "train.base_lr" => self.base_lr = parse(key, value)?,
            "train.decay_factor" => self.decay_factor = parse(key, value)?,
            "train.decay_every" => self.decay_every = parse(key, value)?,
            "train.max_epochs" => self.max_epochs = parse(key, value)?,
            "train.patience" => self.patience = parse(key, value)?,
            "train.seed" => self.seed = parse(key, value)?,
            "train.video_len" => self.video_len = parse(key, value)?,
            "train.image_batch" => self.image_batch = parse(key, value)?,
            "train.steps_per_epoch" => self.steps_per_epoch = parse(key, value)?,
            "train.video_batches" => self.video_batches = parse(key, value)?,
            "train.image_batches" => self.image_batches = parse(key, value)?,
            "train.freeze_encoder" => self.freeze_encoder = parse(key, value)?,
            "train.sigma" if value == "auto" => self.sigma = None,
            "train.sigma" => self.sigma = Some(parse(key, value)?),
            "loss.alpha_cc" => self.loss.alpha_cc = parse(key, value)?,
            "loss.alpha_nss" => self.loss.alpha_nss = parse(key, value)?,
            "loss.eps" => self.loss.eps = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

/// Model-resolution inputs and targets of one video.
#[derive(Clone, Debug)]
pub struct PreparedVideo {
    pub id: String,
    /// `[S, S, 3]` frames scaled to `[0, 1]`.
    pub inputs: Vec<Tensor>,
    pub targets: Vec<FrameTarget>,
}

impl PreparedVideo {
    pub fn new(video: &Video, net: &SaliencyNet, sigma: Option<f64>) -> Result<Self> {
        let side = net.config.encoder.input_side;
        let [out, _, _] = net.config.state_shape();
        let sigma = sigma.unwrap_or_else(|| default_sigma(video.dims().1));
        Ok(PreparedVideo {
            id: video.id.clone(),
            inputs: (0..video.len()).map(|i| video.input(i, side)).collect::<Result<_>>()?,
            targets: video.targets(out, sigma)?,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// A still with fixations, at model resolution.
#[derive(Clone, Debug)]
pub struct StaticSample {
    pub input: Tensor,
    pub fixations: FixationMap,
    pub saliency: Tensor,
}

/// Every frame of `videos` that has fixations, as a still.
pub fn static_pool(videos: &[PreparedVideo]) -> Vec<StaticSample> {
    videos
        .iter()
        .flat_map(|v| v.inputs.iter().zip(&v.targets))
        .filter_map(|(input, t)| {
            t.saliency.as_ref().map(|q| StaticSample {
                input: input.clone(),
                fixations: t.fixations.clone(),
                saliency: q.clone(),
            })
        })
        .collect()
}

#[derive(Default)]
struct Accumulated {
    total: Option<Var>,
    summary: LossSummary,
    frames: usize,
}

impl Accumulated {
    /// Adds the loss of one frame. Frames without a saliency target are
    /// skipped; a constant prediction keeps only its KL term.
    fn push(&mut self, tape: &mut Tape, y: Var, p: &FixationMap, q: Option<&Tensor>, w: &LossWeights) -> Result<()> {
        let Some(q) = q else { return Ok(()) };
        let term = match combined_loss(tape, y, p, q, w) {
            Ok(terms) => {
                self.summary.kl += tape.value(terms.kl).item();
                self.summary.cc += tape.value(terms.cc).item();
                match terms.nss {
                    Some(n) => self.summary.nss += tape.value(n).item(),
                    None => self.summary.frames_without_fixations += 1,
                }
                terms.total
            }
            Err(Error::Degenerate(what)) => {
                log::warn!("{what}; using the KL term alone for this frame");
                let kl = kl_div(tape, y, q, w.eps)?;
                self.summary.kl += tape.value(kl).item();
                kl
            }
            Err(e) => return Err(e),
        };
        self.total = Some(match self.total {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
        self.frames += 1;
        Ok(())
    }

    fn finish(mut self, tape: &Tape) -> Option<(Var, LossSummary, usize)> {
        let total = self.total?;
        self.summary.total = tape.value(total).item();
        Some((total, self.summary, self.frames))
    }
}

/// Loss of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    /// 1-based global step.
    pub step: u64,
    pub epoch: usize,
    pub kind: BatchKind,
    pub lr: f64,
    /// `None` when the batch had nothing to train.
    pub loss: Option<LossSummary>,
    /// Frames (video) or stills (image) that contributed.
    pub frames: usize,
    pub source: String,
}

impl BatchRecord {
    pub fn to_log_line(&self) -> String {
        let head = format!(
            "step={} epoch={} kind={} lr={:e} frames={} source={}",
            self.step, self.epoch, self.kind, self.lr, self.frames, self.source
        );
        match &self.loss {
            Some(l) => format!(
                "{head} loss={:.8} kl={:.8} cc={:.8} nss={:.8}",
                l.total, l.kl, l.cc, l.nss
            ),
            None => format!("{head} skipped"),
        }
    }
}

/// Mean per-frame sequence loss of `video`, with the state carried across
/// all of its frames.
pub fn sequence_loss(net: &SaliencyNet, video: &PreparedVideo, weights: &LossWeights) -> Result<Option<f64>> {
    let pred = net.predict(&video.inputs)?;
    let mut tape = Tape::new();
    let mut acc = Accumulated::default();
    for (t, target) in video.targets.iter().enumerate() {
        let y = tape.constant(pred.frame(t));
        acc.push(&mut tape, y, &target.fixations, target.saliency.as_ref(), weights)?;
    }
    Ok(acc.finish(&tape).map(|(_, s, n)| s.total / n as f64))
}

/// Mean of [`sequence_loss`] over the videos that have targets.
pub fn dataset_loss(net: &SaliencyNet, videos: &[PreparedVideo], weights: &LossWeights) -> Result<Option<f64>> {
    let mut losses = Vec::new();
    for v in videos {
        losses.extend(sequence_loss(net, v, weights)?);
    }
    Ok((!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64))
}

/// A model together with its optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub net: SaliencyNet,
    pub config: TrainConfig,
    pub optim: OptimState,
}

impl Trainer {
    pub fn new(net: SaliencyNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        net.config.validate()?;
        let sizes: Vec<usize> = net.params.entries().iter().map(|(_, _, t)| t.len()).collect();
        Ok(Trainer {
            net,
            config,
            optim: OptimState::new(&sizes),
        })
    }

    fn trains(&self, group: ParamGroup, kind: BatchKind) -> bool {
        match group {
            ParamGroup::Encoder => !self.config.freeze_encoder,
            ParamGroup::Attention => self.net.config.attention_mode != AttentionMode::Off,
            ParamGroup::ConvLstm | ParamGroup::Readout => kind == BatchKind::Video,
        }
    }

    fn apply(&mut self, tape: &Tape, bound: &ModelParams<Var>, loss: Var, lr: f64) -> Result<()> {
        let grads = tape.backward(loss)?;
        let per_param: Vec<Option<&[f64]>> = bound.entries().iter().map(|(_, _, v)| grads.get(**v)).collect();
        let mut entries: Vec<(String, &mut Tensor)> = self
            .net
            .params
            .entries_mut()
            .into_iter()
            .map(|(n, _, t)| (n, t))
            .collect();
        let mut refs: Vec<(&str, &mut Tensor)> = entries.iter_mut().map(|(n, t)| (n.as_str(), &mut **t)).collect();
        adam_step(&mut refs, &per_param, &mut self.optim, lr)
    }

    /// One update on `frames` of `video` from a zero state. Returns the
    /// summed loss and the number of frames that had targets.
    pub fn video_step(
        &mut self,
        video: &PreparedVideo,
        frames: std::ops::Range<usize>,
        lr: f64,
    ) -> Result<Option<(LossSummary, usize)>> {
        if frames.end > video.len() || frames.is_empty() {
            return Err(Error::Dimension(format!(
                "frames {frames:?} outside video {} of {} frames",
                video.id,
                video.len()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.net.params.bind(&mut tape, |g| self.trains(g, BatchKind::Video));
        let inputs: Vec<Var> = video.inputs[frames.clone()]
            .iter()
            .map(|f| tape.constant(f.clone()))
            .collect();
        let out = forward_sequence(&mut tape, &self.net.config, &bound, &inputs)?;
        let mut acc = Accumulated::default();
        for (&y, target) in out.saliency.iter().zip(&video.targets[frames]) {
            acc.push(
                &mut tape,
                y,
                &target.fixations,
                target.saliency.as_ref(),
                &self.config.loss,
            )?;
        }
        let Some((loss, summary, n)) = acc.finish(&tape) else {
            return Ok(None);
        };
        if !summary.total.is_finite() {
            return Err(Error::NonFinite(format!("video loss on {}", video.id)));
        }
        self.apply(&tape, &bound, loss, lr)?;
        Ok(Some((summary, n)))
    }

    /// One update of the encoder and attention branch on stills; the loss
    /// is summed over `images`. Without an attention branch this is a
    /// no-op returning `None`.
    pub fn image_step(&mut self, images: &[&StaticSample], lr: f64) -> Result<Option<(LossSummary, usize)>> {
        if self.net.config.attention_mode == AttentionMode::Off || images.is_empty() {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let bound = self.net.params.bind(&mut tape, |g| self.trains(g, BatchKind::Image));
        let mut acc = Accumulated::default();
        for img in images {
            let frame = tape.constant(img.input.clone());
            let x = encode(&mut tape, frame, &bound.encoder, &self.net.config.encoder)?;
            let m = attention_forward(&mut tape, x, &bound.attention)?.map;
            acc.push(&mut tape, m, &img.fixations, Some(&img.saliency), &self.config.loss)?;
        }
        let Some((loss, summary, n)) = acc.finish(&tape) else {
            return Ok(None);
        };
        if !summary.total.is_finite() {
            return Err(Error::NonFinite("image loss".into()));
        }
        self.apply(&tape, &bound, loss, lr)?;
        Ok(Some((summary, n)))
    }
}

/// Videos for the three roles of training.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub train: &'a [&'a Video],
    pub val: &'a [&'a Video],
    /// Source of the stills for image batches.
    pub statics: &'a [&'a Video],
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean per-frame validation loss.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    /// The model with the lowest validation loss.
    pub best: SaliencyNet,
    pub best_epoch: usize,
    pub epochs: Vec<EpochRecord>,
    pub batches: Vec<BatchRecord>,
    pub stopped_early: bool,
}

struct Sink {
    log: Option<File>,
    dir: Option<std::path::PathBuf>,
}

impl Sink {
    fn open(out: Option<&Path>) -> Result<Sink> {
        let Some(dir) = out else {
            return Ok(Sink { log: None, dir: None });
        };
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Sink {
            log: Some(log),
            dir: Some(dir.to_path_buf()),
        })
    }

    fn line(&mut self, line: &str) -> Result<()> {
        log::info!("{line}");
        if let (Some(f), Some(dir)) = (&mut self.log, &self.dir) {
            writeln!(f, "{line}").map_err(|e| Error::io(dir.join(LOG_FILE), e))?;
        }
        Ok(())
    }

    fn save(&self, net: &SaliencyNet, name: &str) -> Result<()> {
        match &self.dir {
            Some(dir) => net.params.save(&net.config, dir.join(name)),
            None => Ok(()),
        }
    }
}

/// Runs the alternating schedule epoch by epoch, validating after each
/// and keeping the best model. With `out`, the batch log is appended to
/// `out/train_log.txt` and the best model is written to `out/checkpoint`.
///
/// When no validation videos are given, the training videos are scored
/// instead. A non-finite loss or gradient stops training with an error
/// after the last good parameters are written to `out/last_good`.
pub fn train(net: SaliencyNet, data: TrainData<'_>, config: &TrainConfig, out: Option<&Path>) -> Result<TrainReport> {
    let mut trainer = Trainer::new(net, config.clone())?;
    if data.train.is_empty() {
        return Err(Error::Empty("no training videos".into()));
    }
    let prep = |vs: &[&Video]| -> Result<Vec<PreparedVideo>> {
        vs.iter()
            .map(|v| PreparedVideo::new(v, &trainer.net, config.sigma))
            .collect()
    };
    let train_videos = prep(data.train)?;
    let val_videos = if data.val.is_empty() {
        train_videos.clone()
    } else {
        prep(data.val)?
    };
    let attention_on = trainer.net.config.attention_mode != AttentionMode::Off;
    let stills = if attention_on && config.image_batches > 0 {
        let pool = static_pool(&prep(data.statics)?);
        if pool.is_empty() {
            return Err(Error::Empty("no fixated stills for image batches".into()));
        }
        pool
    } else {
        Vec::new()
    };
    let counts: Vec<usize> = train_videos.iter().map(|v| v.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sink = Sink::open(out)?;

    let mut best = (f64::INFINITY, trainer.net.clone(), 0usize);
    let mut epochs = Vec::new();
    let mut batches = Vec::new();
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut step: u64 = 0;
    for epoch in 0..config.max_epochs {
        let lr = config.lr(epoch);
        for _ in 0..config.steps_per_epoch {
            let kind = config.batch_kind(step);
            step += 1;
            let before = trainer.net.clone();
            let outcome = match kind {
                BatchKind::Video => {
                    let b = sample_video_batch(&counts, config.video_len, &mut rng)?;
                    let v = &train_videos[b.video];
                    let src = format!("{}[{}..{}]", v.id, b.start, b.start + b.len);
                    trainer.video_step(v, b.frames(), lr).map(|r| (r, src))
                }
                BatchKind::Image if stills.is_empty() => Ok((None, "-".to_string())),
                BatchKind::Image => {
                    let b = sample_image_batch(stills.len(), config.image_batch, &mut rng)?;
                    let picked: Vec<&StaticSample> = b.indices.iter().map(|&i| &stills[i]).collect();
                    trainer
                        .image_step(&picked, lr)
                        .map(|r| (r, format!("{} stills", picked.len())))
                }
            };
            let (result, source) = match outcome {
                Ok(o) => o,
                Err(e @ Error::NonFinite(_)) => {
                    sink.line(&format!("step={step} epoch={epoch} kind={kind} diverged: {e}"))?;
                    sink.save(&before, LAST_GOOD_DIR)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let record = BatchRecord {
                step,
                epoch,
                kind,
                lr,
                frames: result.as_ref().map_or(0, |r| r.1),
                loss: result.map(|r| r.0),
                source,
            };
            sink.line(&record.to_log_line())?;
            batches.push(record);
        }

        let val_loss = dataset_loss(&trainer.net, &val_videos, &config.loss)?;
        sink.line(&format!(
            "epoch={epoch} kind=validation lr={lr:e} loss={}",
            val_loss.map_or_else(|| "NA".into(), |v| format!("{v:.8}"))
        ))?;
        epochs.push(EpochRecord { epoch, lr, val_loss });
        match val_loss {
            Some(v) if !v.is_finite() => {
                sink.save(&best.1, LAST_GOOD_DIR)?;
                return Err(Error::NonFinite(format!("validation loss after epoch {epoch}")));
            }
            Some(v) if v < best.0 => {
                best = (v, trainer.net.clone(), epoch);
                since_best = 0;
                sink.save(&trainer.net, CHECKPOINT_DIR)?;
            }
            _ => since_best += 1,
        }
        if since_best >= config.patience.max(1) && epoch + 1 < config.max_epochs {
            sink.line(&format!(
                "epoch={epoch} early stop: no improvement for {since_best} epochs"
            ))?;
            stopped_early = true;
            break;
        }
    }
    if best.0 == f64::INFINITY {
        sink.save(&best.1, CHECKPOINT_DIR)?;
    }
    Ok(TrainReport {
        best: best.1,
        best_epoch: best.2,
        epochs,
        batches,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_schedule() {
        let cfg = TrainConfig::default();
        let table = [1e-4, 1e-4, 1e-5, 1e-5, 1e-6, 1e-6, 1e-7, 1e-7, 1e-8, 1e-8];
        for (epoch, want) in table.iter().enumerate() {
            assert!((cfg.lr(epoch) - want).abs() <= 1e-12 * want, "epoch {epoch}");
        }
    }

    #[test]
    fn strict_alternation_by_default() {
        let cfg = TrainConfig::default();
        let kinds: Vec<BatchKind> = (0..4).map(|s| cfg.batch_kind(s)).collect();
        assert_eq!(
            kinds,
            [BatchKind::Video, BatchKind::Image, BatchKind::Video, BatchKind::Image]
        );
        let two_to_one = TrainConfig {
            video_batches: 2,
            ..cfg
        };
        assert_eq!(two_to_one.batch_kind(1), BatchKind::Video);
        assert_eq!(two_to_one.batch_kind(2), BatchKind::Image);
    }

    #[test]
    fn conf_round_trip() {
        let cfg = TrainConfig {
            base_lr: 3e-3,
            sigma: Some(2.5),
            freeze_encoder: true,
            ..TrainConfig::default()
        };
        let mut back = TrainConfig::default();
        for line in cfg.to_conf().lines() {
            let (k, v) = line.split_once('=').unwrap();
            assert!(back.set(k.trim(), v.trim()).unwrap(), "{line}");
        }
        assert_eq!(back, cfg);
        assert!(!back.set("lstm.hidden", "3").unwrap());
        assert!(back.set("train.seed", "x").is_err());
    }
}
