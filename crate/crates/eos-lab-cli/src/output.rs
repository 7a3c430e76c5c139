//! Run directory: files are staged in a sibling temporary directory, hashed, and
//! moved into place by a single rename once the run succeeds.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Config, ConfigError};

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    library_version: &'a str,
    cli_version: &'a str,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    run: RunInfo<'a>,
    config: &'a Config,
    files: &'a [FileEntry],
}

pub struct RunDir {
    target: PathBuf,
    staging: PathBuf,
    command: String,
    config: Config,
    files: Vec<FileEntry>,
}

impl RunDir {
    /// Stages a run for `target`, which must be absent or an empty directory.
    /// The manifest with the resolved configuration is written first.
    pub fn create(target: &Path, command: &str, config: &Config) -> Result<Self> {
        if target.exists() {
            let empty = target.is_dir() && fs::read_dir(target)?.next().is_none();
            if !empty {
                return Err(ConfigError(format!("output directory {} exists and is not empty", target.display())).into());
            }
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
        let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging).with_context(|| format!("creating {}", staging.display()))?;
        let dir = Self { target: target.to_path_buf(), staging, command: command.into(), config: config.clone(), files: Vec::new() };
        dir.write_manifest()?;
        Ok(dir)
    }

    fn write_manifest(&self) -> Result<()> {
        let m = Manifest {
            run: RunInfo { command: &self.command, library_version: eos_lab::VERSION, cli_version: env!("CARGO_PKG_VERSION") },
            config: &self.config,
            files: &self.files,
        };
        fs::write(self.staging.join("manifest.toml"), toml::to_string(&m)?)?;
        Ok(())
    }

    pub fn write(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        if name.contains('/') || name == "manifest.toml" {
            bail!("invalid output name {name}");
        }
        fs::write(self.staging.join(name), contents)?;
        let hash = Sha256::digest(contents);
        let mut hex = String::with_capacity(64);
        for b in hash.iter() {
            write!(hex, "{b:02x}").expect("writing to a String");
        }
        self.files.push(FileEntry { path: name.into(), sha256: hex, bytes: contents.len() });
        Ok(())
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes the final manifest and moves the staging directory into place.
    pub fn finish(self) -> Result<PathBuf> {
        self.write_manifest()?;
        if self.target.exists() {
            fs::remove_dir(&self.target)?;
        }
        fs::rename(&self.staging, &self.target)
            .with_context(|| format!("moving results into {}", self.target.display()))?;
        Ok(self.target)
    }

    /// Removes the staging directory after a failed run.
    pub fn abandon(self) {
        let _ = fs::remove_dir_all(&self.staging);
    }
}

/// Shortest round-trip float text; identical inputs give identical bytes.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s.into_bytes()
}
