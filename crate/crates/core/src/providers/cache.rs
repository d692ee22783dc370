use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::RequestKind;
use crate::error::{Error, Result};

/// Request fields that change between otherwise identical calls.
const VOLATILE_FIELDS: &[&str] = &["timestamp", "request_id", "requestId", "created", "user", "stream"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey {
    pub provider: String,
    pub kind: RequestKind,
    /// Hex sha256 of the canonical request body.
    pub digest: String,
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.provider, self.kind.as_str(), self.digest)
    }
}

fn strip_volatile(v: &Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.iter()
                .filter(|(k, _)| !VOLATILE_FIELDS.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), strip_volatile(v)))
                .collect(),
        ),
        Value::Array(items) => Value::Array(items.iter().map(strip_volatile).collect()),
        other => other.clone(),
    }
}

/// Canonical form of a request body: volatile fields removed, object keys
/// sorted, no insignificant whitespace.
pub fn canonical_request(body: &Value) -> String {
    // serde_json's default map is ordered by key.
    let stripped = strip_volatile(body);
    serde_json::to_string(&stripped).expect("json values always serialize")
}

impl CacheKey {
    pub fn new(provider: &str, kind: RequestKind, body: &Value) -> Self {
        let mut h = Sha256::new();
        h.update(provider.as_bytes());
        h.update([0]);
        h.update(kind.as_str().as_bytes());
        h.update([0]);
        h.update(canonical_request(body).as_bytes());
        CacheKey {
            provider: provider.to_string(),
            kind,
            digest: hex::encode(h.finalize()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub provider: String,
    pub model: String,
    pub kind: RequestKind,
    pub recorded_at: String,
    /// Decoding parameters in effect when the entry was recorded.
    #[serde(default)]
    pub decoding: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub header: CacheHeader,
    pub request: Value,
    pub response: Value,
}

/// Directory of one JSON file per key.
#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

fn filename_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Cache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, key: &CacheKey) -> PathBuf {
        self.root
            .join(filename_safe(&key.provider))
            .join(format!("{}-{}.json", key.kind.as_str(), key.digest))
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<CacheEntry>> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let entry = serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))?;
        Ok(Some(entry))
    }

    /// Writes to a temporary file in the target directory, then renames it
    /// into place, so readers never see a partial entry.
    pub fn put(&self, key: &CacheKey, entry: &CacheEntry) -> Result<PathBuf> {
        let path = self.path_for(key);
        let dir = path.parent().expect("cache paths have a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        let mut body = serde_json::to_vec_pretty(entry).map_err(|e| Error::json("cache entry", e))?;
        body.push(b'\n');
        tmp.write_all(&body).map_err(|e| Error::io(&path, e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(path)
    }
}
