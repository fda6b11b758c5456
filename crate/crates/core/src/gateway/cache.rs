//! Content-addressed response cache persisted as an append-only JSONL journal.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// One journal line: `{"key", "model", "text", "ts"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model: String,
    pub text: String,
    pub ts: String,
}

/// SHA-256 over the length-prefixed model id, prompt text, and temperature.
pub fn cache_key(model_id: &str, prompt: &str, temperature: f64) -> String {
    let mut hasher = Sha256::new();
    for part in [model_id.as_bytes(), prompt.as_bytes(), &temperature.to_le_bytes()] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// Reads a journal; later lines win over earlier ones with the same key.
pub fn read_journal(path: &Path) -> std::io::Result<Vec<CacheEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<CacheEntry>(&line) {
            Ok(entry) => out.push(entry),
            // A torn final line from an interrupted writer is skipped.
            Err(e) => log::warn!("{}:{}: skipping unreadable cache line: {e}", path.display(), n + 1),
        }
    }
    Ok(out)
}

#[derive(Debug)]
pub struct ResponseCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    journal: Mutex<Option<File>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self { path: None, entries: RwLock::new(HashMap::new()), journal: Mutex::new(None) }
    }

    /// Opens (creating if needed) a journal file and loads its entries.
    pub fn open(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            for entry in read_journal(&path)? {
                entries.insert(entry.key.clone(), entry);
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path: Some(path), entries: RwLock::new(entries), journal: Mutex::new(Some(file)) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.read().expect("cache lock poisoned").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends to the journal (under an exclusive file lock) and then makes
    /// the entry visible to readers.
    pub fn put(&self, entry: CacheEntry) -> std::io::Result<()> {
        {
            let mut journal = self.journal.lock().expect("cache journal poisoned");
            if let Some(file) = journal.as_mut() {
                let mut line = serde_json::to_string(&entry)?;
                line.push('\n');
                file.lock()?;
                let written = file.write_all(line.as_bytes()).and_then(|_| file.flush());
                file.unlock()?;
                written?;
            }
        }
        self.entries.write().expect("cache lock poisoned").insert(entry.key.clone(), entry);
        Ok(())
    }
}
