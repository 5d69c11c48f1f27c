use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatProvider, ChatRequest, LlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayMode {
    /// Replay known requests, forward unknown ones to the live provider and
    /// append the reply.
    Record,
    /// Replay only; unknown requests fail. Never touches the network.
    Strict,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    digest: String,
    request: ChatRequest,
    response: String,
}

/// Append-only JSONL store of `(digest, request, response)` records.
pub struct RecordReplayStore {
    path: PathBuf,
    mode: ReplayMode,
    live: Option<Box<dyn ChatProvider>>,
    inner: Mutex<Inner>,
}

struct Inner {
    replies: HashMap<String, String>,
    file: Option<File>,
}

impl RecordReplayStore {
    pub fn open(path: &Path, mode: ReplayMode, live: Option<Box<dyn ChatProvider>>) -> Result<Self, LlmError> {
        let mut replies = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(|e| LlmError::Store(e.to_string()))?);
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(|e| LlmError::Store(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: Entry = serde_json::from_str(&line)
                    .map_err(|e| LlmError::Store(format!("{}:{}: {e}", path.display(), n + 1)))?;
                replies.insert(entry.digest, entry.response);
            }
        }
        if mode == ReplayMode::Record && live.is_none() {
            return Err(LlmError::Store("record mode needs a live provider".into()));
        }
        Ok(RecordReplayStore {
            path: path.to_path_buf(),
            mode,
            live,
            inner: Mutex::new(Inner { replies, file: None }),
        })
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("store lock").replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn append(&self, inner: &mut Inner, entry: &Entry) -> Result<(), LlmError> {
        if inner.file.is_none() {
            if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| LlmError::Store(e.to_string()))?;
            }
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
                .map_err(|e| LlmError::Store(e.to_string()))?;
            inner.file = Some(f);
        }
        let mut line = serde_json::to_string(entry).map_err(|e| LlmError::Store(e.to_string()))?;
        line.push('\n');
        let file = inner.file.as_mut().expect("opened above");
        file.write_all(line.as_bytes()).map_err(|e| LlmError::Store(e.to_string()))?;
        file.flush().map_err(|e| LlmError::Store(e.to_string()))
    }
}

impl ChatProvider for RecordReplayStore {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let digest = request.digest();
        if let Some(reply) = self.inner.lock().expect("store lock").replies.get(&digest) {
            return Ok(reply.clone());
        }
        let live = match (self.mode, &self.live) {
            (ReplayMode::Record, Some(live)) => live,
            _ => return Err(LlmError::MissingRecording { digest }),
        };
        // The live call runs outside the lock so workers are not serialized
        // on network latency.
        let response = live.complete(request)?;
        let mut inner = self.inner.lock().expect("store lock");
        if let Some(existing) = inner.replies.get(&digest) {
            return Ok(existing.clone());
        }
        let entry = Entry {
            digest: digest.clone(),
            request: request.clone(),
            response: response.clone(),
        };
        self.append(&mut inner, &entry)?;
        inner.replies.insert(digest, response.clone());
        Ok(response)
    }
}
