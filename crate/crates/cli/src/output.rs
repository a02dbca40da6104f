//! Output directory, CSV tables and the run manifest.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub timestamp: String,
    pub files: Vec<String>,
}

/// Collects the files written by one command.
pub struct RunOutput {
    dir: PathBuf,
    files: Vec<String>,
}

impl RunOutput {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes a CSV table, then one `# note` line per note and the manifest
    /// reference line.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>], notes: &[String]) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let mut bytes = w.into_inner().map_err(|e| CliError::runtime(e.error()))?;
        for note in notes {
            write!(bytes, "# {note}\r\n")?;
        }
        write!(bytes, "# manifest={MANIFEST}\r\n")?;
        fs::write(self.path(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        fs::write(self.path(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn finish(self, command: &str, cfg: &ScenarioConfig, seed: u64) -> Result<RunManifest, CliError> {
        let manifest = RunManifest {
            command: command.to_string(),
            config_hash: cfg.hash(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
            files: self.files,
        };
        let mut f = File::create(self.dir.join(MANIFEST))?;
        serde_json::to_writer_pretty(&mut f, &manifest).map_err(CliError::runtime)?;
        writeln!(f)?;
        Ok(manifest)
    }
}

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
