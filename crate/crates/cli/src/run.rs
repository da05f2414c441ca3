//! Per-run bookkeeping: errors with exit codes and the run manifest.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad data, failed validation or a failed check: exit 2.
    Data(String),
    /// Training produced a non-finite loss: exit 3.
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Data(msg) | CliError::Divergence(msg) => f.write_str(msg),
        }
    }
}

impl From<cfx_core::Error> for CliError {
    fn from(e: cfx_core::Error) -> Self {
        match e {
            cfx_core::Error::Divergence { .. } => CliError::Divergence(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(format!("json error: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub resolved_config: serde_json::Value,
    pub input_digests: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

/// Collects inputs and outputs of one invocation and writes them next to
/// the outputs when the run succeeds.
pub struct Run {
    out_dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn new(command: &str, out_dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Data(format!("cannot create output directory {}: {e}", out_dir.display())))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest {
                command: command.to_owned(),
                version: env!("CARGO_PKG_VERSION"),
                resolved_config: serde_json::Value::Null,
                input_digests: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn config<T: Serialize>(&mut self, config: &T) -> CliResult<()> {
        self.manifest.resolved_config = serde_json::to_value(config)?;
        Ok(())
    }

    /// Hashes an input file. Call before reading it so a missing file is
    /// reported against its path.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        self.manifest.input_digests.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Writes an output file through `write` and records it.
    pub fn output<F>(&mut self, name: &str, write: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> CliResult<()>,
    {
        let path = self.path(name);
        let file = fs::File::create(&path).map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
        let mut sink = BufWriter::new(file);
        write(&mut sink)?;
        sink.flush()?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        self.output(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn finish(self) -> CliResult<()> {
        let path = self.out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        log::info!("wrote {}", path.display());
        Ok(())
    }
}
