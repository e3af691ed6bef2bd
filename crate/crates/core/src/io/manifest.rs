//! Output directories with atomic writes and a manifest of every file.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sequence::CacheStats;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub elapsed_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheStats>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub sha256: String,
    pub bytes: u64,
    pub stage: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    #[serde(default)]
    pub config_sha256: Option<String>,
    #[serde(default)]
    pub stages: BTreeMap<String, StageRecord>,
    #[serde(default)]
    pub files: BTreeMap<String, FileRecord>,
}

impl Default for RunManifest {
    fn default() -> Self {
        Self {
            tool: "mqc".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_sha256: None,
            stages: BTreeMap::new(),
            files: BTreeMap::new(),
        }
    }
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))
    }

    /// Checks every listed file against its recorded digest.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (name, rec) in &self.files {
            let path = dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            if sha256_hex(&bytes) != rec.sha256 {
                return Err(Error::Numerical(format!("{name} does not match its manifest digest")));
            }
        }
        Ok(())
    }
}

/// Files under `dir` (recursively) that the manifest does not list.
pub fn find_orphans(dir: &Path) -> Result<Vec<String>> {
    let manifest = RunManifest::load(dir)?;
    let mut orphans = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let entry = entry.map_err(|e| Error::io(&d, e))?;
            let path = entry.path();
            if path.is_dir() {
                if path.join(MANIFEST_NAME).exists() {
                    // nested run directories carry their own manifest
                    let rel = relative(dir, &path.join(MANIFEST_NAME));
                    if !manifest.files.contains_key(&rel) {
                        orphans.push(rel);
                    }
                    orphans.extend(find_orphans(&path)?.into_iter().map(|o| relative(dir, &path.join(o))));
                } else {
                    stack.push(path);
                }
                continue;
            }
            let rel = relative(dir, &path);
            if rel != MANIFEST_NAME && !manifest.files.contains_key(&rel) {
                orphans.push(rel);
            }
        }
    }
    orphans.sort();
    Ok(orphans)
}

fn relative(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Writes one pipeline stage into a run directory. Files are written to a
/// temporary name and renamed into place; the manifest is merged with any
/// earlier stages and rewritten by [`OutputDir::finish`].
pub struct OutputDir {
    root: PathBuf,
    stage: String,
    manifest: RunManifest,
    record: StageRecord,
    started: Instant,
}

impl OutputDir {
    pub fn open(root: impl Into<PathBuf>, stage: &str) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let manifest = if root.join(MANIFEST_NAME).exists() {
            RunManifest::load(&root)?
        } else {
            RunManifest::default()
        };
        Ok(Self {
            root,
            stage: stage.into(),
            manifest,
            record: StageRecord::default(),
            started: Instant::now(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn set_config_hash(&mut self, sha: String) {
        self.manifest.config_sha256 = Some(sha);
    }

    pub fn set_cache(&mut self, stats: CacheStats) {
        self.record.cache = Some(stats);
    }

    pub fn note(&mut self, key: &str, value: impl ToString) {
        self.record.notes.insert(key.into(), value.to_string());
    }

    /// Atomically writes `name` (a path relative to the root) and records it.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        let parent = path.parent().unwrap_or(&self.root).to_path_buf();
        std::fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        write_atomic(&path, bytes)?;
        self.manifest.files.insert(
            name.to_string(),
            FileRecord {
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
                stage: self.stage.clone(),
            },
        );
        Ok(())
    }

    /// Records a file written elsewhere (for example a nested run's manifest).
    pub fn adopt(&mut self, name: &str) -> Result<()> {
        let path = self.root.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.manifest.files.insert(
            name.to_string(),
            FileRecord {
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
                stage: self.stage.clone(),
            },
        );
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunManifest> {
        self.record.elapsed_s = self.started.elapsed().as_secs_f64();
        self.manifest.stages.insert(self.stage.clone(), self.record);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| Error::Numerical(e.to_string()))?;
        write_atomic(&self.root.join(MANIFEST_NAME), text.as_bytes())?;
        Ok(self.manifest)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
