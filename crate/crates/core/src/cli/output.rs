// SPDX-License-Identifier: MIT OR Apache-2.0

//! Run output directories: staged writes, a manifest, and cleanup when the
//! run fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use lookahead::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";
pub const RUN_FORMAT: &str = "lookahead-run";
pub const RUN_VERSION: u32 = 1;

#[derive(Clone, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub model_hash: Option<String>,
    pub weak_model_hash: Option<String>,
    pub dataset_hash: Option<String>,
    /// Input paths as given on the command line.
    pub inputs: BTreeMap<String, String>,
    /// Extra command-specific facts.
    pub extra: BTreeMap<String, serde_json::Value>,
    /// File name to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Manifest> {
        let path = run_dir.join(MANIFEST);
        if !path.exists() {
            return Err(Error::MissingInput(path));
        }
        let m: Manifest = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(&path)?))?;
        if m.format != RUN_FORMAT || m.version != RUN_VERSION {
            return Err(Error::Dataset(format!("{} is not a v{RUN_VERSION} run manifest", path.display())));
        }
        Ok(m)
    }
}

/// Writes go to `<out>.partial` and are moved into place by [`finish`].
/// Dropping an unfinished run deletes the staging directory.
pub struct RunDir {
    final_dir: PathBuf,
    staging: PathBuf,
    files: Vec<String>,
    finished: bool,
    pub manifest: Manifest,
}

impl RunDir {
    pub fn create(out: &Path, manifest: Manifest) -> Result<RunDir> {
        if out.exists() && std::fs::read_dir(out)?.next().is_some() {
            return Err(Error::Config(format!("output directory {} exists and is not empty", out.display())));
        }
        let mut staging = out.as_os_str().to_owned();
        staging.push(".partial");
        let staging = PathBuf::from(staging);
        if staging.exists() {
            std::fs::remove_dir_all(&staging)?;
        }
        std::fs::create_dir_all(&staging)?;
        Ok(RunDir { final_dir: out.to_path_buf(), staging, files: vec![], finished: false, manifest })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    /// Registers a file written directly under the staging directory.
    pub fn register(&mut self, name: &str) {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        std::fs::write(self.path(name), text)?;
        self.register(name);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write_text(name, &s)
    }

    /// One JSON object per line.
    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(self.path(name))?);
        for r in rows {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        self.register(name);
        Ok(())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.register(name);
        Ok(())
    }

    /// Hashes every registered file, writes the manifest and moves the
    /// staging directory into place.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.files.sort();
        for f in &self.files {
            let path = self.staging.join(f);
            let digest = if path.is_dir() { hash_dir(&path)? } else { hex::encode(Sha256::digest(std::fs::read(&path)?)) };
            self.manifest.outputs.insert(f.clone(), digest);
        }
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        std::fs::write(self.staging.join(MANIFEST), text)?;
        if self.final_dir.exists() {
            std::fs::remove_dir(&self.final_dir)?;
        }
        std::fs::rename(&self.staging, &self.final_dir)?;
        self.finished = true;
        Ok(self.final_dir.clone())
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        if !self.finished {
            let _ = std::fs::remove_dir_all(&self.staging);
        }
    }
}

/// Hash over relative paths and contents, in sorted order.
fn hash_dir(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir).expect("inside dir").to_string_lossy().as_bytes());
        h.update([0]);
        h.update(std::fs::read(&f)?);
    }
    Ok(hex::encode(h.finalize()))
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}
