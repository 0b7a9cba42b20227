//! Fixation data: CSV ingestion, rasterization to binary maps, Gaussian
//! densification, dataset splits, batch samplers and a synthetic dataset
//! generator.

mod dataset;
mod maps;
pub mod synth;

pub use dataset::{
    frame_file_name, load_dataset, load_video, sample_image_batch, sample_video_batch, write_frame, Dataset,
    FrameTarget, ImageBatch, StaticImage, Video, VideoBatch, FIXATIONS_FILE, SPLITS_FILE, VIDEOS_DIR,
};
pub use maps::{resize_map, FixationMap, SaliencyDistribution};

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FIXATION_HEADER: &str = "video_id,frame_idx,observer_id,x,y";

/// One gaze sample; `x` is the column and `y` the row in pixels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FixationRecord {
    pub video_id: String,
    pub frame_idx: usize,
    pub observer_id: String,
    pub x: usize,
    pub y: usize,
}

/// A row that was not turned into a record.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowDiagnostic {
    /// 1-based line number in the file.
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FixationLog {
    pub records: Vec<FixationRecord>,
    pub rejected: Vec<RowDiagnostic>,
}

fn parse_row(
    line: &str,
    resolution: &dyn Fn(&str) -> Option<(usize, usize)>,
) -> std::result::Result<FixationRecord, String> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    let [video_id, frame, observer, x, y] = cols[..] else {
        return Err(format!("expected 5 columns, found {}", cols.len()));
    };
    if video_id.is_empty() {
        return Err("empty video_id".into());
    }
    let int = |name: &str, v: &str| {
        v.parse::<usize>()
            .map_err(|_| format!("{name} {v:?} is not a non-negative integer"))
    };
    let record = FixationRecord {
        video_id: video_id.to_string(),
        frame_idx: int("frame_idx", frame)?,
        observer_id: observer.to_string(),
        x: int("x", x)?,
        y: int("y", y)?,
    };
    let (h, w) = resolution(video_id).ok_or_else(|| format!("unknown video {video_id:?}"))?;
    if record.x >= w || record.y >= h {
        return Err(format!(
            "fixation ({}, {}) outside the {w}x{h} frame",
            record.x, record.y
        ));
    }
    Ok(record)
}

/// Parses fixation CSV text. `resolution` maps a video id to its
/// `(height, width)`; rows for unknown videos or outside the frame are
/// rejected with their line number.
pub fn parse_fixations(
    text: &str,
    path: &Path,
    resolution: &dyn Fn(&str) -> Option<(usize, usize)>,
) -> Result<FixationLog> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == FIXATION_HEADER => {}
        Some((_, header)) => {
            return Err(Error::format(
                path,
                1,
                format!("header must be {FIXATION_HEADER:?}, found {:?}", header.trim()),
            ))
        }
        None => return Err(Error::format(path, 1, "missing header")),
    }
    let mut log = FixationLog::default();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(line, resolution) {
            Ok(r) => log.records.push(r),
            Err(reason) => {
                log::warn!("{}:{}: {reason}", path.display(), i + 1);
                log.rejected.push(RowDiagnostic { line: i + 1, reason });
            }
        }
    }
    Ok(log)
}

pub fn load_fixations(
    path: impl AsRef<Path>,
    resolution: &dyn Fn(&str) -> Option<(usize, usize)>,
) -> Result<FixationLog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_fixations(&text, path, resolution)
}

pub fn write_fixations(path: impl AsRef<Path>, records: &[FixationRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(32 * (records.len() + 1));
    out.push_str(FIXATION_HEADER);
    out.push('\n');
    for r in records {
        writeln!(out, "{},{},{},{},{}", r.video_id, r.frame_idx, r.observer_id, r.x, r.y).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Binary map with a one at every fixated pixel of a frame.
pub fn rasterize<'a>(
    records: impl IntoIterator<Item = &'a FixationRecord>,
    height: usize,
    width: usize,
) -> Result<FixationMap> {
    FixationMap::from_cells(height, width, records.into_iter().map(|r| (r.y, r.x)))
}

/// Conventional blur width for a frame of the given width.
pub fn default_sigma(width: usize) -> f64 {
    width as f64 / 32.0
}

/// Sums an isotropic Gaussian of width `sigma`, truncated at radius
/// `4σ`, centred on each weighted `(row, col)` point.
pub fn gaussian_splat(
    points: impl IntoIterator<Item = (usize, usize, f64)>,
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<Tensor> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("blur sigma must be positive, got {sigma}")));
    }
    let cutoff = 4.0 * sigma;
    let radius = cutoff.floor() as usize;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut out = vec![0.0; height * width];
    for (r, c, weight) in points {
        let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(height - 1));
        let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(width - 1));
        for y in r0..=r1 {
            let dy = y as f64 - r as f64;
            for x in c0..=c1 {
                let dx = x as f64 - c as f64;
                let d2 = dy * dy + dx * dx;
                if d2 <= cutoff * cutoff {
                    out[y * width + x] += weight * (-d2 * inv).exp();
                }
            }
        }
    }
    Tensor::new(&[height, width], out)
}

/// Gaussian-blurred fixation map renormalized to unit sum.
pub fn densify(p: &FixationMap, sigma: f64) -> Result<SaliencyDistribution> {
    let (h, w) = p.dims();
    if p.count() == 0 {
        return Err(Error::NoFixations);
    }
    let points = p.fixated_indices().into_iter().map(|i| (i / w, i % w, 1.0));
    SaliencyDistribution::normalize(&gaussian_splat(points, h, w, sigma)?)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    /// Deterministic 60/10/30 partition in the given order: the last 30 %
    /// (rounded down) are test, the 10 % before them validation, the rest
    /// train.
    pub fn assign(ids: &[String]) -> DatasetSplit {
        let n = ids.len();
        let n_test = n * 3 / 10;
        let n_val = n / 10;
        let n_train = n - n_test - n_val;
        DatasetSplit {
            train: ids[..n_train].to_vec(),
            val: ids[n_train..n_train + n_val].to_vec(),
            test: ids[n_train + n_val..].to_vec(),
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }

    pub fn to_manifest(&self) -> String {
        let mut out = String::new();
        for (name, ids) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            for id in ids {
                writeln!(out, "{name},{id}").unwrap();
            }
        }
        out
    }

    /// Parses `split,video_id` lines; a video may appear only once.
    pub fn parse(text: &str, path: &Path) -> Result<DatasetSplit> {
        let mut split = DatasetSplit::default();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (name, id) = line
                .split_once(',')
                .ok_or_else(|| Error::format(path, i + 1, "expected split,video_id"))?;
            let list = match name.trim() {
                "train" => &mut split.train,
                "val" => &mut split.val,
                "test" => &mut split.test,
                other => return Err(Error::format(path, i + 1, format!("unknown split {other:?}"))),
            };
            let id = id.trim().to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::format(path, i + 1, format!("video {id:?} listed twice")));
            }
            list.push(id);
        }
        Ok(split)
    }
}

/// Groups records by `(video, frame)`.
pub fn group_by_frame(records: &[FixationRecord]) -> BTreeMap<(&str, usize), Vec<&FixationRecord>> {
    let mut out: BTreeMap<(&str, usize), Vec<&FixationRecord>> = BTreeMap::new();
    for r in records {
        out.entry((r.video_id.as_str(), r.frame_idx)).or_default().push(r);
    }
    out
}
