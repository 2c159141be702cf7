use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::ModelError;
use crate::digest::sha256_hex;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// Response cache laid out as `<root>/<endpoint-id>/<request-hash>`.
///
/// Reads go straight to the filesystem; writes are serialized and land via
/// rename so a crash never leaves a torn entry.
#[derive(Debug)]
pub struct DiskCache {
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
    write_lock: Mutex<()>,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

impl DiskCache {
    pub fn open(root: &Path, endpoint_id: &str) -> Result<Self, ModelError> {
        let dir = root.join(sanitize(endpoint_id));
        std::fs::create_dir_all(&dir).map_err(|e| ModelError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key<R: Serialize>(request: &R) -> String {
        let canonical = serde_json::to_string(request).expect("request serializes");
        sha256_hex(canonical.as_bytes())
    }

    pub fn get<V: DeserializeOwned>(&self, key: &str) -> Option<V> {
        let found = std::fs::read(self.dir.join(key))
            .ok()
            .and_then(|bytes| serde_json::from_slice(&bytes).ok());
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn put<V: Serialize>(&self, key: &str, value: &V) -> Result<(), ModelError> {
        let bytes = serde_json::to_vec(value).map_err(|e| ModelError::Cache(e.to_string()))?;
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let tmp = self.dir.join(format!(".{key}.tmp"));
        std::fs::write(&tmp, bytes)
            .and_then(|_| std::fs::rename(&tmp, self.dir.join(key)))
            .map_err(|e| ModelError::Cache(e.to_string()))
    }

    /// Returns the cached value or computes, stores and returns it.
    pub fn get_or_insert_with<R, V>(
        &self,
        request: &R,
        compute: impl FnOnce() -> Result<V, ModelError>,
    ) -> Result<V, ModelError>
    where
        R: Serialize,
        V: Serialize + DeserializeOwned,
    {
        let key = Self::key(request);
        if let Some(v) = self.get(&key) {
            return Ok(v);
        }
        let v = compute()?;
        self.put(&key, &v)?;
        Ok(v)
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_lookup_hits() {
        let root = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(root.path(), "lm/vicuna:13b").unwrap();
        assert!(cache.dir().ends_with("lm_vicuna_13b"));
        let mut computed = 0;
        for _ in 0..3 {
            let v: f64 = cache
                .get_or_insert_with(&("phrase", 1), || {
                    computed += 1;
                    Ok(-3.5)
                })
                .unwrap();
            assert_eq!(v, -3.5);
        }
        assert_eq!(computed, 1);
        assert_eq!(cache.stats(), CacheStats { hits: 2, misses: 1 });
        let reopened = DiskCache::open(root.path(), "lm/vicuna:13b").unwrap();
        let v: Option<f64> = reopened.get(&DiskCache::key(&("phrase", 1)));
        assert_eq!(v, Some(-3.5));
    }

    #[test]
    fn errors_are_not_cached() {
        let root = tempfile::tempdir().unwrap();
        let cache = DiskCache::open(root.path(), "x").unwrap();
        let r: Result<f64, _> = cache.get_or_insert_with(&"p", || Err(ModelError::Transport("x".into())));
        assert!(r.is_err());
        let v: f64 = cache.get_or_insert_with(&"p", || Ok(-1.0)).unwrap();
        assert_eq!(v, -1.0);
    }
}
