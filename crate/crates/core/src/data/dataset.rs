//! On-disk dataset layout and batch samplers.
//!
//! ```text
//! DIR/
//!   fixations.csv            video_id,frame_idx,observer_id,x,y
//!   splits.txt               split,video_id
//!   videos/<video_id>/frame_00000.stns   [H, W, 3], values 0..=255
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;

use super::{densify, group_by_frame, load_fixations, rasterize, DatasetSplit, FixationMap, RowDiagnostic};
use crate::error::{Error, Result};
use crate::tensor::{ops, stns, Tensor};

pub const FIXATIONS_FILE: &str = "fixations.csv";
pub const SPLITS_FILE: &str = "splits.txt";
pub const VIDEOS_DIR: &str = "videos";

pub fn frame_file_name(idx: usize) -> String {
    format!("frame_{idx:05}.stns")
}

pub fn write_frame(dir: &Path, idx: usize, frame: &Tensor) -> Result<()> {
    stns::write(dir.join(frame_file_name(idx)), frame)
}

/// Training targets for one frame at model resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTarget {
    pub fixations: FixationMap,
    /// Unit-sum map; `None` for frames without fixations.
    pub saliency: Option<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    /// Raw `[H, W, 3]` frames with values in `0..=255`.
    pub frames: Vec<Tensor>,
    /// Full-resolution fixation map per frame.
    pub fixations: Vec<FixationMap>,
}

impl Video {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` of the frames.
    pub fn dims(&self) -> (usize, usize) {
        let s = self.frames[0].shape();
        (s[0], s[1])
    }

    /// Frame scaled to `[0, 1]` and resized to `side × side`.
    pub fn input(&self, idx: usize, side: usize) -> Result<Tensor> {
        let scaled = self.frames[idx].map(|v| v / 255.0);
        let (h, w) = self.dims();
        if (h, w) == (side, side) {
            Ok(scaled)
        } else {
            ops::resize_bilinear(&scaled, side, side)
        }
    }

    /// Fixation and saliency targets at `side × side`: the blurred map is
    /// built at full resolution with width `sigma`, then box-averaged.
    pub fn targets(&self, side: usize, sigma: f64) -> Result<Vec<FrameTarget>> {
        self.fixations
            .iter()
            .map(|p| {
                let fixations = p.downsample(side, side)?;
                let saliency = match densify(p, sigma) {
                    Ok(q) => Some(q.downsample(side, side)?.into_tensor()),
                    Err(Error::NoFixations) => None,
                    Err(e) => return Err(e),
                };
                Ok(FrameTarget { fixations, saliency })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub videos: Vec<Video>,
    pub split: DatasetSplit,
    /// Fixation rows that failed validation.
    pub rejected: Vec<RowDiagnostic>,
}

impl Dataset {
    pub fn video(&self, id: &str) -> Option<&Video> {
        self.videos.iter().find(|v| v.id == id)
    }

    /// Videos named in `ids`, in that order; unknown ids are an error.
    pub fn select(&self, ids: &[String]) -> Result<Vec<&Video>> {
        ids.iter()
            .map(|id| {
                self.video(id)
                    .ok_or_else(|| Error::Empty(format!("video {id:?} listed in the split but not on disk")))
            })
            .collect()
    }
}

fn read_video(dir: &Path, id: &str) -> Result<Vec<Tensor>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("frame_") && n.ends_with(".stns"))
        .collect();
    names.sort();
    let mut frames = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        if *name != frame_file_name(i) {
            return Err(Error::format(
                dir.join(name),
                0,
                format!("expected {} in video {id}", frame_file_name(i)),
            ));
        }
        let t = stns::read(dir.join(name))?;
        match t.shape() {
            [_, _, 3] => {}
            s => {
                return Err(Error::format(
                    dir.join(name),
                    0,
                    format!("frame shape {s:?} is not [H, W, 3]"),
                ))
            }
        }
        if let Some(first) = frames.first() {
            let first: &Tensor = first;
            if first.shape() != t.shape() {
                return Err(Error::format(dir.join(name), 0, "frame size changes within the video"));
            }
        }
        frames.push(t);
    }
    if frames.is_empty() {
        return Err(Error::Empty(format!("video {id} has no frames")));
    }
    Ok(frames)
}

/// Reads a directory of `frame_NNNNN.stns` files as a video without
/// fixations; the id is the directory name.
pub fn load_video(dir: impl AsRef<Path>) -> Result<Video> {
    let dir = dir.as_ref();
    let id = dir
        .file_name()
        .map_or_else(|| "video".to_string(), |n| n.to_string_lossy().into_owned());
    let frames = read_video(dir, &id)?;
    let (h, w) = (frames[0].shape()[0], frames[0].shape()[1]);
    Ok(Video {
        id,
        fixations: vec![FixationMap::empty(h, w); frames.len()],
        frames,
    })
}

/// Reads frames, fixations and the split manifest. Videos are ordered as
/// in the split manifest (train, val, test).
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let root = dir.as_ref();
    let split_path = root.join(SPLITS_FILE);
    let split_text = fs::read_to_string(&split_path).map_err(|e| Error::io(&split_path, e))?;
    let split = DatasetSplit::parse(&split_text, &split_path)?;

    let mut videos = Vec::new();
    for id in split.all() {
        let frames = read_video(&root.join(VIDEOS_DIR).join(id), id)?;
        let (h, w) = (frames[0].shape()[0], frames[0].shape()[1]);
        videos.push(Video {
            id: id.clone(),
            fixations: vec![FixationMap::empty(h, w); frames.len()],
            frames,
        });
    }

    let lookup = |id: &str| videos.iter().find(|v| v.id == id).map(|v| v.dims());
    let mut log = load_fixations(root.join(FIXATIONS_FILE), &lookup)?;
    let mut per_frame = Vec::new();
    for ((id, frame), records) in group_by_frame(&log.records) {
        let vi = videos.iter().position(|v| v.id == id).expect("lookup succeeded");
        if frame >= videos[vi].len() {
            log.rejected.push(RowDiagnostic {
                line: 0,
                reason: format!("video {id} has no frame {frame}"),
            });
            continue;
        }
        let (h, w) = videos[vi].dims();
        per_frame.push((vi, frame, rasterize(records, h, w)?));
    }
    for (vi, frame, map) in per_frame {
        videos[vi].fixations[frame] = map;
    }
    Ok(Dataset {
        root: root.to_path_buf(),
        videos,
        split,
        rejected: log.rejected,
    })
}

/// A window of consecutive frames of one video.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VideoBatch {
    pub video: usize,
    pub start: usize,
    pub len: usize,
}

impl VideoBatch {
    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Picks a video uniformly among those with at least `len` frames, then
/// a uniform start so that the window fits.
pub fn sample_video_batch(frame_counts: &[usize], len: usize, rng: &mut impl Rng) -> Result<VideoBatch> {
    let eligible: Vec<usize> = (0..frame_counts.len()).filter(|&i| frame_counts[i] >= len).collect();
    if eligible.is_empty() || len == 0 {
        return Err(Error::Empty(format!("no video with at least {len} frames")));
    }
    let video = eligible[rng.gen_range(0..eligible.len())];
    let start = rng.gen_range(0..=frame_counts[video] - len);
    Ok(VideoBatch { video, start, len })
}

/// Reference to one still image (a frame of some video).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StaticImage {
    pub video: usize,
    pub frame: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBatch {
    /// Indices into the static image pool.
    pub indices: Vec<usize>,
}

/// `size` distinct images when the pool is large enough, otherwise
/// `size` draws with replacement.
pub fn sample_image_batch(pool: usize, size: usize, rng: &mut impl Rng) -> Result<ImageBatch> {
    if pool == 0 {
        return Err(Error::Empty("static image pool".into()));
    }
    let indices = if pool >= size {
        index::sample(rng, pool, size).into_vec()
    } else {
        (0..size).map(|_| rng.gen_range(0..pool)).collect()
    };
    Ok(ImageBatch { indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_twenty_frame_video_is_taken_whole() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let b = sample_video_batch(&[20], 20, &mut rng).unwrap();
            assert_eq!(
                b,
                VideoBatch {
                    video: 0,
                    start: 0,
                    len: 20
                }
            );
        }
        assert!(sample_video_batch(&[19, 5], 20, &mut rng).is_err());
    }

    #[test]
    fn video_sampling_is_seeded() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_video_batch(&[30, 25, 60], 20, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert!(draw(5).iter().all(|b| b.start + 20 <= [30, 25, 60][b.video]));
    }

    #[test]
    fn image_sampling_falls_back_to_replacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let b = sample_image_batch(1, 20, &mut rng).unwrap();
        assert_eq!(b.indices, vec![0; 20]);
        let b = sample_image_batch(50, 20, &mut rng).unwrap();
        let mut d = b.indices.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 20);
        assert!(sample_image_batch(0, 20, &mut rng).is_err());
    }
}
