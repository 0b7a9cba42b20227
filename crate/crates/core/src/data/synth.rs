//! Synthetic videos: a bright moving blob that every observer looks at, a
//! dimmer coloured distractor blob, and a low-contrast drifting texture.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{write_frame, FIXATIONS_FILE, SPLITS_FILE, VIDEOS_DIR};
use super::{write_fixations, DatasetSplit, FixationRecord};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub videos: usize,
    pub frames: usize,
    pub size: usize,
    pub seed: u64,
    pub observers: usize,
}

impl SynthConfig {
    pub fn new(videos: usize, frames: usize, size: usize, seed: u64) -> Self {
        SynthConfig {
            videos,
            frames,
            size,
            seed,
            observers: 3,
        }
    }

    pub fn blob_sigma(&self) -> f64 {
        self.size as f64 / 12.0
    }
}

/// Position and width of a rendered blob.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Blob {
    pub row: f64,
    pub col: f64,
    pub sigma: f64,
}

impl Blob {
    /// Unit-peak Gaussian profile at a pixel.
    pub fn profile(&self, row: usize, col: usize) -> f64 {
        let (dy, dx) = (row as f64 - self.row, col as f64 - self.col);
        (-(dy * dy + dx * dx) / (2.0 * self.sigma * self.sigma)).exp()
    }
}

#[derive(Clone, Debug)]
pub struct SynthVideo {
    pub id: String,
    pub frames: Vec<Tensor>,
    /// The fixated blob per frame.
    pub target: Vec<Blob>,
    pub distractor: Vec<Blob>,
    pub records: Vec<FixationRecord>,
}

#[derive(Clone, Copy)]
struct Mover {
    row: f64,
    col: f64,
    vr: f64,
    vc: f64,
}

impl Mover {
    fn random(rng: &mut ChaCha8Rng, size: f64, margin: f64) -> Self {
        let speed = rng.gen_range(size / 64.0..size / 32.0);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        Mover {
            row: rng.gen_range(margin..size - margin),
            col: rng.gen_range(margin..size - margin),
            vr: speed * angle.sin(),
            vc: speed * angle.cos(),
        }
    }

    fn advance(&mut self, size: f64, margin: f64) {
        let (lo, hi) = (margin, size - 1.0 - margin);
        self.row += self.vr;
        self.col += self.vc;
        if self.row < lo || self.row > hi {
            self.vr = -self.vr;
            self.row = self.row.clamp(lo, hi);
        }
        if self.col < lo || self.col > hi {
            self.vc = -self.vc;
            self.col = self.col.clamp(lo, hi);
        }
    }
}

fn render_video(cfg: &SynthConfig, index: usize) -> SynthVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(index as u64));
    let size = cfg.size as f64;
    let sigma = cfg.blob_sigma();
    let margin = sigma.min(size / 4.0);
    let mut target = Mover::random(&mut rng, size, margin);
    let mut distractor = Mover::random(&mut rng, size, margin);
    let tint = rng.gen_range(0..3);
    let (fy, fx) = (rng.gen_range(1.0..3.0), rng.gen_range(1.0..3.0));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let drift = rng.gen_range(0.1..0.3);
    let jitter = (sigma / 2.0).floor() as i64;
    let id = format!("synth_{index:03}");

    let mut out = SynthVideo {
        id: id.clone(),
        frames: Vec::with_capacity(cfg.frames),
        target: Vec::with_capacity(cfg.frames),
        distractor: Vec::with_capacity(cfg.frames),
        records: Vec::new(),
    };
    for t in 0..cfg.frames {
        let tb = Blob {
            row: target.row,
            col: target.col,
            sigma,
        };
        let db = Blob {
            row: distractor.row,
            col: distractor.col,
            sigma,
        };
        let n = cfg.size;
        let mut data = Vec::with_capacity(n * n * 3);
        for r in 0..n {
            for c in 0..n {
                let wave =
                    ((r as f64 * fy + c as f64 * fx) / size * std::f64::consts::TAU + phase + drift * t as f64).sin();
                let bg = 50.0 + 20.0 * wave;
                let bright = 190.0 * tb.profile(r, c);
                let dim = 110.0 * db.profile(r, c);
                for ch in 0..3 {
                    let colour = if ch == tint { dim } else { 0.2 * dim };
                    data.push((bg + bright + colour).round().clamp(0.0, 255.0));
                }
            }
        }
        out.frames.push(Tensor::new(&[n, n, 3], data).expect("frame shape"));
        for o in 0..cfg.observers {
            let dy = rng.gen_range(-jitter..=jitter);
            let dx = rng.gen_range(-jitter..=jitter);
            let clampi = |v: f64| (v.round() as i64).clamp(0, n as i64 - 1);
            out.records.push(FixationRecord {
                video_id: id.clone(),
                frame_idx: t,
                observer_id: format!("obs{o}"),
                x: clampi(tb.col + dx as f64) as usize,
                y: clampi(tb.row + dy as f64) as usize,
            });
        }
        out.target.push(tb);
        out.distractor.push(db);
        target.advance(size, margin);
        distractor.advance(size, margin);
    }
    out
}

/// Renders every video of the configuration in memory.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthVideo>> {
    if cfg.videos == 0 || cfg.frames == 0 || cfg.size == 0 || cfg.observers == 0 {
        return Err(Error::Config(
            "videos, frames, size and observers must be at least 1".into(),
        ));
    }
    Ok((0..cfg.videos).map(|i| render_video(cfg, i)).collect())
}

/// Writes a dataset directory (frames, fixation CSV, split manifest).
/// Returns the split that was written.
pub fn write_dataset(cfg: &SynthConfig, dir: &Path) -> Result<DatasetSplit> {
    let videos = generate(cfg)?;
    let vdir = dir.join(VIDEOS_DIR);
    let mut records = Vec::new();
    for v in &videos {
        let d = vdir.join(&v.id);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        for (i, f) in v.frames.iter().enumerate() {
            write_frame(&d, i, f)?;
        }
        records.extend(v.records.iter().cloned());
    }
    write_fixations(dir.join(FIXATIONS_FILE), &records)?;
    let ids: Vec<String> = videos.iter().map(|v| v.id.clone()).collect();
    let split = DatasetSplit::assign(&ids);
    let path = dir.join(SPLITS_FILE);
    fs::write(&path, split.to_manifest()).map_err(|e| Error::io(&path, e))?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded() {
        let cfg = SynthConfig::new(2, 3, 24, 7);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.frames, y.frames);
            assert_eq!(x.records, y.records);
        }
        let c = generate(&SynthConfig::new(2, 3, 24, 8)).unwrap();
        assert_ne!(a[0].frames, c[0].frames);
    }

    #[test]
    fn frames_are_eight_bit_values() {
        let v = &generate(&SynthConfig::new(1, 2, 32, 1)).unwrap()[0];
        for f in &v.frames {
            assert_eq!(f.shape(), &[32, 32, 3]);
            assert!(f.data().iter().all(|&p| (0.0..=255.0).contains(&p) && p.fract() == 0.0));
        }
        assert_eq!(v.records.len(), 2 * 3);
    }

    #[test]
    fn rejects_empty_configs() {
        assert!(generate(&SynthConfig::new(0, 2, 32, 1)).is_err());
    }
}
