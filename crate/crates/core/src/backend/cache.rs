//! Persistent content-addressed response cache.
//!
//! Entries are append-only JSON files named by the request digest; each
//! entry carries its own payload digest so corruption is detected on read
//! and repaired by recomputation. Writes go through a temp file plus atomic
//! rename so concurrent readers never observe partial entries.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendDescriptor, BackendError, CompletionRequest, CompletionResponse};

pub const CACHE_SCHEMA: u32 = 1;

/// Digest of (backend descriptor, request); the cache key.
pub fn request_key(descriptor: &BackendDescriptor, request: &CompletionRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(descriptor).expect("descriptor serializes"));
    hasher.update([0u8]);
    hasher.update(serde_json::to_vec(request).expect("request serializes"));
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn payload_digest(response: &CompletionResponse) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(response).expect("response serializes"));
    hex(&hasher.finalize())
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    schema: u32,
    key: String,
    payload_sha256: String,
    response: CompletionResponse,
}

/// On-disk cache rooted at a directory.
pub struct ResponseCache {
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ResponseCache {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, BackendError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)
            .map_err(|e| BackendError::CacheIo(format!("create {}: {e}", dir.display())))?;
        Ok(Self { dir, hits: AtomicU64::new(0), misses: AtomicU64::new(0) })
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Look up a response by key, or compute and persist it. Corrupt
    /// entries (payload digest mismatch, unreadable JSON) are recomputed
    /// and overwritten with a warning.
    pub fn get_or_compute(
        &self,
        descriptor: &BackendDescriptor,
        request: &CompletionRequest,
        compute: impl FnOnce() -> Result<CompletionResponse, BackendError>,
    ) -> Result<CompletionResponse, BackendError> {
        let key = request_key(descriptor, request);
        let path = self.path_for(&key);
        if let Some(response) = self.read_entry(&key, &path) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(response);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let response = compute()?;
        self.write_entry(&key, &path, &response)?;
        Ok(response)
    }

    fn read_entry(&self, key: &str, path: &Path) -> Option<CompletionResponse> {
        let text = std::fs::read_to_string(path).ok()?;
        match serde_json::from_str::<CacheEntry>(&text) {
            Ok(entry)
                if entry.schema == CACHE_SCHEMA
                    && entry.key == key
                    && entry.payload_sha256 == payload_digest(&entry.response) =>
            {
                Some(entry.response)
            }
            _ => {
                log::warn!("corrupt cache entry {}; recomputing", path.display());
                None
            }
        }
    }

    fn write_entry(
        &self,
        key: &str,
        path: &Path,
        response: &CompletionResponse,
    ) -> Result<(), BackendError> {
        let entry = CacheEntry {
            schema: CACHE_SCHEMA,
            key: key.to_string(),
            payload_sha256: payload_digest(response),
            response: response.clone(),
        };
        let text = serde_json::to_string(&entry).expect("entry serializes");
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        std::fs::write(&tmp, text)
            .map_err(|e| BackendError::CacheIo(format!("write {}: {e}", tmp.display())))?;
        std::fs::rename(&tmp, path)
            .map_err(|e| BackendError::CacheIo(format!("rename {}: {e}", path.display())))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{BackendMode, SampleOutput};

    fn descriptor() -> BackendDescriptor {
        BackendDescriptor {
            name: "mock".into(),
            mode: BackendMode::WhiteBox,
            endpoint: "mock".into(),
            model_id: "m".into(),
        }
    }

    fn response(text: &str) -> CompletionResponse {
        CompletionResponse {
            samples: vec![SampleOutput { text: text.into(), ..Default::default() }],
            prompt_logprobs: None,
        }
    }

    #[test]
    fn second_identical_call_is_a_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let request = CompletionRequest { prompt: "p".into(), ..Default::default() };
        let mut computed = 0;
        for _ in 0..2 {
            let r = cache
                .get_or_compute(&descriptor(), &request, || {
                    computed += 1;
                    Ok(response("hello"))
                })
                .unwrap();
            assert_eq!(r.samples[0].text, "hello");
        }
        assert_eq!(computed, 1);
        assert_eq!(cache.hits(), 1);
        assert_eq!(cache.misses(), 1);
    }

    #[test]
    fn changed_temperature_misses() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let a = CompletionRequest { prompt: "p".into(), temperature: 0.0, ..Default::default() };
        let b = CompletionRequest { prompt: "p".into(), temperature: 0.5, ..Default::default() };
        assert_ne!(request_key(&descriptor(), &a), request_key(&descriptor(), &b));
        cache.get_or_compute(&descriptor(), &a, || Ok(response("cold"))).unwrap();
        let r = cache.get_or_compute(&descriptor(), &b, || Ok(response("warm"))).unwrap();
        assert_eq!(r.samples[0].text, "warm");
        assert_eq!(cache.misses(), 2);
    }

    #[test]
    fn corrupt_entries_are_recomputed_and_repaired() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::open(dir.path()).unwrap();
        let request = CompletionRequest { prompt: "p".into(), ..Default::default() };
        cache.get_or_compute(&descriptor(), &request, || Ok(response("good"))).unwrap();
        let key = request_key(&descriptor(), &request);
        let path = dir.path().join(format!("{key}.json"));
        std::fs::write(&path, "{not json").unwrap();
        let r = cache
            .get_or_compute(&descriptor(), &request, || Ok(response("recomputed")))
            .unwrap();
        assert_eq!(r.samples[0].text, "recomputed");
        // The repaired entry is valid again.
        let r2 = cache
            .get_or_compute(&descriptor(), &request, || panic!("must hit cache"))
            .unwrap();
        assert_eq!(r2.samples[0].text, "recomputed");
    }
}
