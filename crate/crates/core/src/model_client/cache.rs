use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{CompletionRequest, CompletionResponse};
use crate::hashing;

/// Content-addressed response cache: always in memory, optionally mirrored to
/// one JSON file per key under a directory.
pub struct ResponseCache {
    memory: Mutex<HashMap<String, CompletionResponse>>,
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self {
            memory: Mutex::new(HashMap::new()),
            dir: None,
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            memory: Mutex::new(HashMap::new()),
            dir: Some(dir.into()),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// SHA-256 over backend id, prompt, token budget, temperature and whether
    /// logprobs were requested.
    pub fn key(backend_id: &str, request: &CompletionRequest) -> String {
        hashing::hash_parts(&[
            backend_id.as_bytes(),
            request.prompt.as_bytes(),
            &request.max_tokens.to_le_bytes(),
            &request.temperature.to_bits().to_le_bytes(),
            &[u8::from(request.logprob_request)],
        ])
    }

    fn path_for(dir: &Path, key: &str) -> PathBuf {
        dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CompletionResponse>, String> {
        if let Some(hit) = self.memory.lock().expect("cache poisoned").get(key) {
            return Ok(Some(hit.clone()));
        }
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let path = Self::path_for(dir, key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(format!("{}: {e}", path.display())),
        };
        let response: CompletionResponse =
            serde_json::from_slice(&bytes).map_err(|e| format!("{}: {e}", path.display()))?;
        self.memory
            .lock()
            .expect("cache poisoned")
            .insert(key.to_string(), response.clone());
        Ok(Some(response))
    }

    pub fn put(&self, key: &str, response: &CompletionResponse) -> Result<(), String> {
        self.memory
            .lock()
            .expect("cache poisoned")
            .insert(key.to_string(), response.clone());
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let path = Self::path_for(dir, key);
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        let body = serde_json::to_vec(response).map_err(|e| e.to_string())?;
        // Write-then-rename so concurrent readers never see a partial file.
        let tmp = path.with_extension(format!("json.{}.tmp", std::process::id()));
        fs::write(&tmp, body).map_err(|e| format!("{}: {e}", tmp.display()))?;
        fs::rename(&tmp, &path).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn len(&self) -> usize {
        self.memory.lock().expect("cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
