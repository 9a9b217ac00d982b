use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{cache_key, sha256_hex, CompletionParams, LlmError, TextProvider};

/// Body of one cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model: String,
    /// sha256 of the prompt text.
    pub request_digest: String,
    pub params: CompletionParams,
    pub response: String,
}

/// Directory of `<hex key>.json` files, one per request.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn load(&self, key: &str) -> io::Result<Option<CacheEntry>> {
        match fs::read_to_string(self.path(key)) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Writes atomically (temp file + rename); concurrent writers of the same
    /// key leave one complete entry.
    pub fn store(&self, entry: &CacheEntry) -> io::Result<()> {
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            entry.key,
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let body = serde_json::to_string_pretty(entry).map_err(io::Error::other)?;
        fs::write(&tmp, body)?;
        fs::rename(&tmp, self.path(&entry.key))
    }

    pub fn len(&self) -> io::Result<usize> {
        Ok(fs::read_dir(&self.dir)?
            .filter_map(Result::ok)
            .filter(|e| {
                let name = e.file_name();
                let name = name.to_string_lossy();
                name.ends_with(".json") && !name.starts_with('.')
            })
            .count())
    }

    pub fn is_empty(&self) -> io::Result<bool> {
        self.len().map(|n| n == 0)
    }
}

/// Completes through the cache. Cache I/O failures are logged and bypassed.
pub fn cached_complete(
    cache: &ResponseCache,
    provider: &dyn TextProvider,
    prompt: &str,
    params: &CompletionParams,
) -> Result<String, LlmError> {
    let key = cache_key(provider.model_id(), prompt, params);
    match cache.load(&key) {
        Ok(Some(entry)) => return Ok(entry.response),
        Ok(None) => {}
        Err(e) => log::warn!("cache read failed for {key}: {e}; calling provider"),
    }
    let response = provider.complete(prompt, params)?;
    let entry = CacheEntry {
        key,
        model: provider.model_id().to_string(),
        request_digest: sha256_hex(prompt.as_bytes()),
        params: params.clone(),
        response: response.clone(),
    };
    if let Err(e) = cache.store(&entry) {
        log::warn!("cache write failed for {}: {e}", entry.key);
    }
    Ok(response)
}

/// Provider wrapper that routes every call through a [`ResponseCache`].
pub struct CachedProvider {
    inner: Arc<dyn TextProvider>,
    cache: ResponseCache,
}

impl CachedProvider {
    pub fn new(inner: Arc<dyn TextProvider>, cache: ResponseCache) -> Self {
        Self { inner, cache }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }
}

impl TextProvider for CachedProvider {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, prompt: &str, params: &CompletionParams) -> Result<String, LlmError> {
        cached_complete(&self.cache, self.inner.as_ref(), prompt, params)
    }
}
