//! The output directory: deterministic artifacts plus a separate run-info file.

use std::path::{Path, PathBuf};

use canopy_core::io::write_atomic;
use canopy_core::{Error, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;

pub struct OutDir {
    dir: PathBuf,
    started: chrono::DateTime<Utc>,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            started: Utc::now(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.path(name), bytes)?;
        self.written.push(name.to_owned());
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Record a file written by other means (e.g. a GeoTIFF).
    pub fn note(&mut self, name: String) {
        self.written.push(name);
    }

    /// Timestamps live here, away from the reproducible artifacts.
    pub fn finish(mut self, command: &str) -> Result<()> {
        let finished = Utc::now();
        let info = serde_json::json!({
            "command": command,
            "args": std::env::args().collect::<Vec<_>>(),
            "tool_version": env!("CARGO_PKG_VERSION"),
            "started": self.started.to_rfc3339_opts(SecondsFormat::Millis, true),
            "finished": finished.to_rfc3339_opts(SecondsFormat::Millis, true),
            "seconds": (finished - self.started).num_milliseconds() as f64 / 1000.0,
            "outputs": self.written,
        });
        self.written = Vec::new();
        self.json("run-info.json", &info)
    }
}
