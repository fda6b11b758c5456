use std::collections::HashMap;
use std::path::Path;

use super::cache::{cache_key, read_journal, CacheEntry};
use super::{BackendError, ChatBackend, ModelSpec, TEMPERATURE};

/// Serves recorded responses from fixture journals (same schema as the cache).
/// A prompt without a recording is a non-retryable failure.
#[derive(Debug, Default, Clone)]
pub struct ReplayBackend {
    recorded: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn from_entries(entries: impl IntoIterator<Item = CacheEntry>) -> Self {
        Self { recorded: entries.into_iter().map(|e| (e.key, e.text)).collect() }
    }

    pub fn from_files<P: AsRef<Path>>(paths: &[P]) -> std::io::Result<Self> {
        let mut entries = Vec::new();
        for p in paths {
            entries.extend(read_journal(p.as_ref())?);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.recorded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recorded.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn chat(&self, spec: &ModelSpec, prompt: &str) -> Result<String, BackendError> {
        let key = cache_key(&spec.model_id, prompt, TEMPERATURE);
        self.recorded.get(&key).cloned().ok_or_else(|| {
            BackendError::Fatal(format!("no recorded response for model {:?} (key {key})", spec.model_id))
        })
    }
}
