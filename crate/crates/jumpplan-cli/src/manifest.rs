//! Run manifests and output-directory plumbing.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.txt";
/// Wall-clock figures live apart from the manifest so that every other file
/// is reproducible byte for byte.
pub const TIMING_FILE: &str = "timing.txt";

/// What a run was asked to do and what it produced.
#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command: String,
    /// Canonical `key value` lines describing every input that affects results.
    pub inputs: Vec<(String, String)>,
    pub seed: u64,
    pub status: String,
    pub stats: Vec<(String, String)>,
    pub results: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            command: command.into(),
            seed,
            ..Self::default()
        }
    }

    pub fn input(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.inputs.push((key.into(), value.to_string()));
        self
    }

    pub fn stat(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.stats.push((key.into(), value.to_string()));
        self
    }

    /// SHA-256 over the command, seed and inputs.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(self.seed.to_le_bytes());
        for (k, v) in &self.inputs {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# jumpplan run manifest v1\n");
        let _ = writeln!(s, "command {}", self.command);
        let _ = writeln!(s, "config_digest {}", self.digest());
        let _ = writeln!(s, "seed {}", self.seed);
        for (k, v) in &self.inputs {
            let _ = writeln!(s, "input {k} {}", v.replace('\n', " | "));
        }
        let _ = writeln!(s, "status {}", self.status);
        for (k, v) in &self.stats {
            let _ = writeln!(s, "stat {k} {v}");
        }
        for r in &self.results {
            let _ = writeln!(s, "result {r}");
        }
        let _ = writeln!(s, "timing {TIMING_FILE}");
        s
    }
}

/// Writer confined to one output directory; does nothing without a directory.
pub struct OutDir {
    dir: Option<PathBuf>,
    written: Vec<String>,
}

impl OutDir {
    pub fn new(dir: Option<&Path>) -> Result<Self, CliError> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        if let Some(d) = &self.dir {
            let p = d.join(name);
            std::fs::write(&p, contents).map_err(|e| CliError::io(&p, e))?;
            if name != MANIFEST_FILE && name != TIMING_FILE && !self.written.iter().any(|w| w == name) {
                self.written.push(name.into());
            }
        }
        Ok(())
    }

    /// Writes the manifest (listing everything written so far) and the timing file.
    pub fn finish(&mut self, mut manifest: RunManifest, timings: &[(&str, Duration)]) -> Result<(), CliError> {
        manifest.results = self.written.clone();
        self.write(MANIFEST_FILE, &manifest.to_text())?;
        let mut t = String::new();
        for (k, d) in timings {
            let _ = writeln!(t, "{k} {:.6}", d.as_secs_f64());
        }
        self.write(TIMING_FILE, &t)
    }
}
