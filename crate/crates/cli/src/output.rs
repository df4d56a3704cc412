//! Result files. Each starts with one JSON line naming the tool version,
//! the seed and a hash of the configuration that produced it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything that determines a command's output.
#[derive(Debug, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub args: Value,
    pub inputs: Vec<InputDigest>,
}

impl RunConfig {
    pub fn new<A: Serialize>(command: &str, args: &A, inputs: &[&Path]) -> Result<Self, CliError> {
        let inputs = inputs
            .iter()
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| CliError::read(p, e))?;
                Ok(InputDigest {
                    path: p.display().to_string(),
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect::<Result<_, CliError>>()?;
        Ok(RunConfig {
            command: command.to_string(),
            args: serde_json::to_value(args).map_err(hetfx::Error::from)?,
            inputs,
        })
    }

    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

pub struct Output {
    dir: PathBuf,
    header: String,
}

impl Output {
    pub fn create(dir: &Path, config: &RunConfig, seed: u64) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let header = json!({
            "tool": "hetfx",
            "version": env!("CARGO_PKG_VERSION"),
            "command": config.command,
            "seed": seed,
            "config_hash": config.hash(),
        })
        .to_string();
        let out = Output {
            dir: dir.to_path_buf(),
            header,
        };
        out.json("config.json", config)?;
        Ok(out)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, body: &[u8]) -> Result<(), CliError> {
        let mut bytes = Vec::with_capacity(self.header.len() + 1 + body.len());
        bytes.extend_from_slice(self.header.as_bytes());
        bytes.push(b'\n');
        bytes.extend_from_slice(body);
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))
    }

    /// Write a table produced by one of the library's CSV writers.
    pub fn csv<F>(&self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> hetfx::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut body = serde_json::to_vec_pretty(value).map_err(hetfx::Error::from)?;
        body.push(b'\n');
        self.write(name, &body)
    }
}

/// Plain CSV from header and rows of already formatted fields.
pub fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>, out: &mut Vec<u8>) -> hetfx::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| hetfx::Error::Csv(e.into()))?;
    Ok(())
}
