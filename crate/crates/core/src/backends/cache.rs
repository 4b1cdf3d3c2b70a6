//! Content-addressed response cache, persisted on disk and shared across runs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use dashmap::DashMap;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::Api;

/// Digest of (api, model, canonical request payload).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    pub fn new(api: Api, model: &str, payload: &Value) -> Self {
        let material = serde_json::json!({
            "api": api,
            "model": model,
            "payload": payload,
        });
        let mut canonical = String::new();
        write_canonical(&material, &mut canonical);
        CacheKey(Sha256::digest(canonical.as_bytes()).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CacheKey({})", self.to_hex())
    }
}

/// JSON with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                write_canonical(&map[k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(v, out);
            }
            out.push(']');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// In-memory map backed by one file per key under `dir` (when set).
#[derive(Debug, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
    mem: DashMap<CacheKey, Arc<Vec<u8>>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            mem: DashMap::new(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    fn path_for(&self, key: &CacheKey) -> Option<PathBuf> {
        let hex = key.to_hex();
        self.dir.as_ref().map(|d| d.join(&hex[..2]).join(hex))
    }

    pub fn get(&self, key: &CacheKey) -> Option<Arc<Vec<u8>>> {
        if let Some(v) = self.mem.get(key) {
            return Some(v.clone());
        }
        let path = self.path_for(key)?;
        let bytes = std::fs::read(path).ok()?;
        let bytes = Arc::new(bytes);
        self.mem.insert(*key, bytes.clone());
        Some(bytes)
    }

    /// Stores a value. Disk failures are logged and otherwise ignored.
    pub fn put(&self, key: &CacheKey, value: Vec<u8>) {
        if let Some(path) = self.path_for(key) {
            if let Err(e) = write_atomic(&path, &value) {
                log::warn!("cache write to {} failed: {e}", path.display());
            }
        }
        self.mem.insert(*key, Arc::new(value));
    }

    /// Returns the cached value, or runs `compute` and stores its result.
    /// The flag is `true` on a hit.
    pub fn get_or_compute<E>(
        &self,
        key: &CacheKey,
        compute: impl FnOnce() -> std::result::Result<Vec<u8>, E>,
    ) -> std::result::Result<(Arc<Vec<u8>>, bool), E> {
        if let Some(v) = self.get(key) {
            return Ok((v, true));
        }
        let value = compute()?;
        self.put(key, value.clone());
        Ok((Arc::new(value), false))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let parent = path.parent().expect("cache paths have a parent");
    std::fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
