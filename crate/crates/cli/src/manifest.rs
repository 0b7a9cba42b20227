use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use acl_core::Error;

pub const MANIFEST_FILE: &str = "run_manifest.txt";

/// Record of one artifact-producing command.
///
/// Metadata lines start with `#`; the rest is the resolved configuration
/// as `key = value` lines, so a train manifest can be passed back as
/// `--config` to repeat the run.
#[derive(Clone, Debug)]
pub struct RunManifest {
    pub command: &'static str,
    pub seed: u64,
    pub config: String,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<(String, PathBuf)>,
    notes: Vec<String>,
    wall_clock: Option<f64>,
}

impl RunManifest {
    pub fn new(command: &'static str, seed: u64) -> Self {
        RunManifest {
            command,
            seed,
            config: String::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
            wall_clock: None,
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.push((name.to_string(), path.to_path_buf()));
    }

    pub fn output(&mut self, name: &str, path: &Path) {
        self.outputs.push((name.to_string(), path.to_path_buf()));
    }

    pub fn note(&mut self, text: &str) {
        self.notes.push(text.to_string());
    }

    pub fn finish(mut self, started: Instant) -> Self {
        self.wall_clock = Some(started.elapsed().as_secs_f64());
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# command = {}", self.command).unwrap();
        writeln!(out, "# version = {}", env!("CARGO_PKG_VERSION")).unwrap();
        writeln!(out, "# seed = {}", self.seed).unwrap();
        for (k, p) in &self.inputs {
            writeln!(out, "# input.{k} = {}", p.display()).unwrap();
        }
        for (k, p) in &self.outputs {
            writeln!(out, "# output.{k} = {}", p.display()).unwrap();
        }
        if let Ok(now) = SystemTime::now().duration_since(UNIX_EPOCH) {
            writeln!(out, "# finished_unix = {}", now.as_secs()).unwrap();
        }
        if let Some(s) = self.wall_clock {
            writeln!(out, "# wall_clock_seconds = {s:.3}").unwrap();
        }
        for n in &self.notes {
            writeln!(out, "# note = {n}").unwrap();
        }
        out.push_str(&self.config);
        out
    }

    /// Writes `dir/run_manifest.txt`.
    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        self.write_file(&dir.join(MANIFEST_FILE))
    }

    pub fn write_file(&self, path: &Path) -> Result<(), Error> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}
