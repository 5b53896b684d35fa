//! Pipeline state: a JSON index (`state.json`) recording, per stage, the
//! digest of its inputs and the sha256 of every file it wrote.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const STATE_FILE: &str = "state.json";
pub const STATE_FORMAT: &str = "coreselect-state";
pub const STATE_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest over a labelled sequence of parts; lengths are mixed in so part
/// boundaries matter.
pub fn digest_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub input_digest: String,
    /// Path relative to the output directory -> sha256.
    pub outputs: BTreeMap<String, String>,
    pub summary: serde_json::Value,
}

impl StageRecord {
    /// Digest of everything the stage produced.
    pub fn output_digest(&self) -> String {
        let parts: Vec<Vec<u8>> = self
            .outputs
            .iter()
            .map(|(k, v)| format!("{k}={v}").into_bytes())
            .collect();
        digest_parts(&parts.iter().map(Vec::as_slice).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub format: String,
    pub version: u32,
    pub dataset_digest: Option<String>,
    pub stages: BTreeMap<String, StageRecord>,
}

impl Default for PipelineState {
    fn default() -> Self {
        Self {
            format: STATE_FORMAT.into(),
            version: STATE_VERSION,
            dataset_digest: None,
            stages: BTreeMap::new(),
        }
    }
}

impl PipelineState {
    pub fn path(out: &Path) -> PathBuf {
        out.join(STATE_FILE)
    }

    /// A missing file gives an empty state; anything unreadable as a
    /// version-1 state is an error.
    pub fn load(out: &Path) -> Result<Self> {
        let path = Self::path(out);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(e) => return Err(CliError::io(&path, e)),
        };
        Self::from_bytes(&bytes).map_err(|msg| CliError::State(format!("{}: {msg}", path.display())))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, String> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header = serde_json::from_slice(bytes)
            .map_err(|e| format!("not a version-{STATE_VERSION} state file ({e})"))?;
        if header.format != STATE_FORMAT {
            return Err(format!("unknown state format `{}`", header.format));
        }
        if header.version != STATE_VERSION {
            return Err(format!(
                "state version {} is not supported (expected {STATE_VERSION})",
                header.version
            ));
        }
        serde_json::from_slice(bytes).map_err(|e| format!("corrupted version-{STATE_VERSION} state ({e})"))
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("state serializes");
        text.push('\n');
        write_atomic(&Self::path(out), text.as_bytes())
    }

    /// True when `stage` ran with `input_digest` and its files are untouched.
    pub fn is_current(&self, out: &Path, stage: &str, input_digest: &str) -> bool {
        self.stages.get(stage).is_some_and(|r| {
            r.input_digest == input_digest
                && r.outputs
                    .iter()
                    .all(|(rel, d)| fs::read(out.join(rel)).is_ok_and(|b| sha256_hex(&b) == *d))
        })
    }

    /// Reads a file recorded by `stage`, checking it against its digest.
    pub fn read_output(&self, out: &Path, stage: &str, rel: &str) -> Result<Vec<u8>> {
        let record = self
            .stages
            .get(stage)
            .ok_or_else(|| CliError::State(format!("stage `{stage}` has not run")))?;
        let expected = record
            .outputs
            .get(rel)
            .ok_or_else(|| CliError::State(format!("stage `{stage}` recorded no `{rel}`")))?;
        let path = out.join(rel);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        if sha256_hex(&bytes) != *expected {
            return Err(CliError::State(format!("{} does not match its recorded digest", path.display())));
        }
        Ok(bytes)
    }
}

/// Collects the files a stage writes along with their digests.
pub struct OutputSet<'a> {
    root: &'a Path,
    pub files: BTreeMap<String, String>,
}

impl<'a> OutputSet<'a> {
    pub fn new(root: &'a Path) -> Self {
        Self {
            root,
            files: BTreeMap::new(),
        }
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        write_atomic(&path, bytes)?;
        self.files.insert(rel.to_owned(), sha256_hex(bytes));
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp-write");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}
