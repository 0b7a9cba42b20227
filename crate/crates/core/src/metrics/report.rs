use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{auc_judd, cc_metric, nss_metric, shuffled_auc, sim_metric, Metric};
use crate::data::{default_sigma, densify, resize_map, Dataset, FixationMap, Video};
use crate::error::{Error, Result};
use crate::tensor::stns;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Ground-truth blur width in pixels; defaults to width / 32.
    pub sigma: Option<f64>,
    pub shuffle_splits: usize,
    pub seed: u64,
    /// Videos to evaluate; all videos of the ground truth when `None`.
    pub videos: Option<Vec<String>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sigma: None,
            shuffle_splits: 100,
            seed: 0,
            videos: None,
        }
    }
}

pub type Scores = [Option<f64>; 5];

#[derive(Clone, Debug, PartialEq)]
pub struct FrameScores {
    pub video: String,
    pub frame: usize,
    pub values: Scores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkipRecord {
    pub video: String,
    pub frame: usize,
    pub metric: Metric,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    /// Sorted by video id, then frame.
    pub frames: Vec<FrameScores>,
    /// Mean over the frames where each metric is defined.
    pub videos: Vec<(String, Scores)>,
    /// Unweighted mean over the per-video means.
    pub dataset: Scores,
    /// Frames skipped per metric, indexed by [`Metric::index`].
    pub skipped: [usize; 5],
    pub skips: Vec<SkipRecord>,
    /// Ground-truth frames without a prediction.
    pub missing: Vec<(String, usize)>,
    /// Prediction videos absent from the ground truth.
    pub unexpected: Vec<String>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricReport {
    /// Builds the aggregate view; the result does not depend on the order
    /// of `frames` or `skips`.
    pub fn aggregate(
        mut frames: Vec<FrameScores>,
        mut skips: Vec<SkipRecord>,
        mut missing: Vec<(String, usize)>,
        mut unexpected: Vec<String>,
    ) -> MetricReport {
        frames.sort_by(|a, b| (&a.video, a.frame).cmp(&(&b.video, b.frame)));
        skips.sort_by(|a, b| (&a.video, a.frame, a.metric).cmp(&(&b.video, b.frame, b.metric)));
        missing.sort();
        unexpected.sort();

        let mut by_video: BTreeMap<&str, Vec<&FrameScores>> = BTreeMap::new();
        for f in &frames {
            by_video.entry(&f.video).or_default().push(f);
        }
        let videos: Vec<(String, Scores)> = by_video
            .iter()
            .map(|(id, fs)| {
                let mut s = [None; 5];
                for m in Metric::ALL {
                    s[m.index()] = mean(fs.iter().filter_map(|f| f.values[m.index()]));
                }
                (id.to_string(), s)
            })
            .collect();
        let mut dataset = [None; 5];
        for m in Metric::ALL {
            dataset[m.index()] = mean(videos.iter().filter_map(|(_, s)| s[m.index()]));
        }
        let mut skipped = [0; 5];
        for s in &skips {
            skipped[s.metric.index()] += 1;
        }
        MetricReport {
            frames,
            videos,
            dataset,
            skipped,
            skips,
            missing,
            unexpected,
        }
    }

    /// Human-readable table: one row per video, then the dataset row,
    /// then skip counts and inventory problems.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut out = String::new();
        write!(out, "{:<16} {:>6}", "video", "frames").unwrap();
        for m in Metric::ALL {
            write!(out, " {:>8}", m.name()).unwrap();
        }
        out.push('\n');
        for (id, scores) in &self.videos {
            let n = self.frames.iter().filter(|f| &f.video == id).count();
            write!(out, "{id:<16} {n:>6}").unwrap();
            for v in scores {
                write!(out, " {:>8}", fmt(*v)).unwrap();
            }
            out.push('\n');
        }
        write!(out, "{:<16} {:>6}", "ALL", self.frames.len()).unwrap();
        for v in &self.dataset {
            write!(out, " {:>8}", fmt(*v)).unwrap();
        }
        out.push('\n');
        out.push_str("skipped:");
        for m in Metric::ALL {
            write!(out, " {}={}", m.name(), self.skipped[m.index()]).unwrap();
        }
        out.push('\n');
        for (v, f) in &self.missing {
            writeln!(out, "missing prediction: {v} frame {f}").unwrap();
        }
        for v in &self.unexpected {
            writeln!(out, "prediction without ground truth: {v}").unwrap();
        }
        out
    }

    /// CSV with columns `metric,video_id,frame_idx,value`.
    ///
    /// Per-frame rows come first (`NA` when skipped), then per-video means
    /// with `frame_idx = mean`, then dataset means with `video_id = *`,
    /// then `missing` rows for absent predictions.
    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.10}"));
        let mut out = String::from("metric,video_id,frame_idx,value\n");
        for f in &self.frames {
            for m in Metric::ALL {
                writeln!(out, "{},{},{},{}", m.name(), f.video, f.frame, fmt(f.values[m.index()])).unwrap();
            }
        }
        for (id, s) in &self.videos {
            for m in Metric::ALL {
                writeln!(out, "{},{id},mean,{}", m.name(), fmt(s[m.index()])).unwrap();
            }
        }
        for m in Metric::ALL {
            writeln!(out, "{},*,mean,{}", m.name(), fmt(self.dataset[m.index()])).unwrap();
        }
        for (v, f) in &self.missing {
            writeln!(out, "missing,{v},{f},NA").unwrap();
        }
        out
    }
}

/// Union of all fixations of `others`, rescaled to `height × width`.
fn shuffle_pool<'a>(others: impl Iterator<Item = &'a Video>, height: usize, width: usize) -> Result<FixationMap> {
    let mut cells = Vec::new();
    for v in others {
        let (h, w) = v.dims();
        for p in &v.fixations {
            for i in p.fixated_indices() {
                cells.push(((i / w) * height / h, (i % w) * width / w));
            }
        }
    }
    FixationMap::from_cells(height, width, cells)
}

/// Scores every ground-truth frame against `prediction(video, frame)`.
///
/// Predictions are resized bilinearly to the ground-truth resolution.
/// The shuffled-AUC pool for a video is the union of fixations of every
/// other video in `pool` (or in `gt` when `pool` is `None`).
pub fn evaluate_predictions(
    gt: &Dataset,
    pool: Option<&Dataset>,
    config: &EvalConfig,
    prediction: &mut dyn FnMut(&str, usize) -> Result<Option<crate::Tensor>>,
) -> Result<MetricReport> {
    let pool_source = pool.unwrap_or(gt);
    let selected: Vec<&Video> = match &config.videos {
        Some(ids) => gt.select(ids)?,
        None => gt.videos.iter().collect(),
    };
    let (mut frames, mut skips, mut missing) = (Vec::new(), Vec::new(), Vec::new());
    for video in selected {
        let (h, w) = video.dims();
        let sigma = config.sigma.unwrap_or_else(|| default_sigma(w));
        let negatives = shuffle_pool(pool_source.videos.iter().filter(|v| v.id != video.id), h, w)?;
        for (t, p) in video.fixations.iter().enumerate() {
            let Some(pred) = prediction(&video.id, t)? else {
                missing.push((video.id.clone(), t));
                continue;
            };
            let y = resize_map(&pred, h, w)?;
            if !y.all_finite() {
                return Err(Error::NonFinite(format!("prediction for {} frame {t}", video.id)));
            }
            let q = densify(p, sigma).map(|q| q.into_tensor());
            let seed = config.seed.wrapping_add(t as u64);
            let results: [Result<f64>; 5] = [
                auc_judd(&y, p),
                shuffled_auc(&y, p, &negatives, config.shuffle_splits, seed),
                nss_metric(&y, p),
                q.as_ref()
                    .map_err(|_| Error::NoFixations)
                    .and_then(|q| cc_metric(&y, q)),
                q.as_ref()
                    .map_err(|_| Error::NoFixations)
                    .and_then(|q| sim_metric(&y, q)),
            ];
            let mut values = [None; 5];
            for (m, r) in Metric::ALL.into_iter().zip(results) {
                match r {
                    Ok(v) => values[m.index()] = Some(v),
                    Err(e @ (Error::NoFixations | Error::Degenerate(_) | Error::Empty(_))) => skips.push(SkipRecord {
                        video: video.id.clone(),
                        frame: t,
                        metric: m,
                        reason: e.to_string(),
                    }),
                    Err(e) => return Err(e),
                }
            }
            frames.push(FrameScores {
                video: video.id.clone(),
                frame: t,
                values,
            });
        }
    }
    Ok(MetricReport::aggregate(frames, skips, missing, Vec::new()))
}

/// Evaluates `pred_dir/<video_id>/frame_NNNNN.stns` maps against `gt`.
pub fn evaluate_dataset(
    pred_dir: &Path,
    gt: &Dataset,
    pool: Option<&Dataset>,
    config: &EvalConfig,
) -> Result<MetricReport> {
    let mut lookup = |video: &str, frame: usize| -> Result<Option<crate::Tensor>> {
        let path = pred_dir.join(video).join(crate::data::frame_file_name(frame));
        if path.exists() {
            stns::read(&path).map(Some)
        } else {
            Ok(None)
        }
    };
    let mut report = evaluate_predictions(gt, pool, config, &mut lookup)?;
    let mut unexpected = Vec::new();
    if let Ok(entries) = std::fs::read_dir(pred_dir) {
        for e in entries.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            if e.path().is_dir() && gt.video(&name).is_none() {
                unexpected.push(name);
            }
        }
    }
    unexpected.sort();
    report.unexpected = unexpected;
    Ok(report)
}
