//! CSV writers and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutDir {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Writes a CSV file with `header` and pre-formatted rows.
    pub fn csv(
        &mut self,
        name: &str,
        header: &[&str],
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> Result<(), CliError> {
        let path = self.root.join(name);
        let io = |e: csv::Error| CliError::Config(format!("cannot write {}: {e}", path.display()));
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_path(&path)
            .map_err(io)?;
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(&row).map_err(io)?;
        }
        w.flush()
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(path);
        Ok(())
    }

    pub fn manifest<C: Serialize>(
        &self,
        command: &str,
        seed: Option<u64>,
        config: &C,
        runtime_seconds: f64,
    ) -> Result<PathBuf, CliError> {
        let mut outputs = Vec::new();
        for p in &self.written {
            let bytes = fs::read(p)
                .map_err(|e| CliError::Config(format!("cannot read back {}: {e}", p.display())))?;
            outputs.push(OutputDigest {
                file: p.file_name().unwrap().to_string_lossy().into_owned(),
                sha256: hex::encode(Sha256::digest(&bytes)),
                bytes: bytes.len(),
            });
        }
        let m = Manifest {
            command,
            code_version: env!("CARGO_PKG_VERSION"),
            master_seed: seed,
            config,
            runtime_seconds,
            outputs,
        };
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        fs::write(&path, text + "\n")
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

#[derive(Serialize)]
struct OutputDigest {
    file: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    code_version: &'a str,
    master_seed: Option<u64>,
    config: &'a C,
    runtime_seconds: f64,
    outputs: Vec<OutputDigest>,
}

/// Shortest round-trip decimal form; independent of locale.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
