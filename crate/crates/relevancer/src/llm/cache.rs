//! Append-only completion cache: one JSON record per line, one file per
//! (model, sampling config) pair.
//!
//! A torn final line (no trailing newline, unparseable) is the signature of
//! a process killed mid-append; it is dropped and the file truncated back to
//! the last complete record so interrupted runs can resume. Any other
//! unparseable line is reported as corruption.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use super::{CompletionRecord, LlmError};

pub struct Cache {
    inner: Mutex<CacheInner>,
}

struct CacheInner {
    map: HashMap<String, CompletionRecord>,
    writer: Option<BufWriter<File>>,
}

impl Cache {
    /// Cache with no backing file; useful for tests and one-off runs.
    pub fn in_memory() -> Cache {
        Cache {
            inner: Mutex::new(CacheInner {
                map: HashMap::new(),
                writer: None,
            }),
        }
    }

    /// Opens (or creates) a cache file and loads every record in it.
    pub fn open(path: impl AsRef<Path>) -> Result<Cache, LlmError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut map = HashMap::new();
        let mut truncate_to: Option<u64> = None;
        if path.exists() {
            let content = std::fs::read(path)?;
            let text = String::from_utf8(content).map_err(|e| LlmError::CacheCorrupt {
                line: 0,
                message: format!("not utf-8: {e}"),
            })?;
            let mut offset = 0u64;
            for (i, segment) in text.split_inclusive('\n').enumerate() {
                let line_no = i + 1;
                let complete = segment.ends_with('\n');
                let body = segment.trim_end_matches(['\n', '\r']);
                if !body.is_empty() {
                    match serde_json::from_str::<CompletionRecord>(body) {
                        Ok(record) => {
                            map.insert(record.cache_key.clone(), record);
                        }
                        Err(e) if !complete => {
                            // Torn tail from an interrupted append; drop it.
                            let _ = e;
                            truncate_to = Some(offset);
                            break;
                        }
                        Err(e) => {
                            return Err(LlmError::CacheCorrupt {
                                line: line_no,
                                message: e.to_string(),
                            });
                        }
                    }
                }
                offset += segment.len() as u64;
            }
        }
        if let Some(len) = truncate_to {
            OpenOptions::new().write(true).open(path)?.set_len(len)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Cache {
            inner: Mutex::new(CacheInner {
                map,
                writer: Some(BufWriter::new(file)),
            }),
        })
    }

    pub fn get(&self, key: &str) -> Option<CompletionRecord> {
        self.inner.lock().unwrap().map.get(key).cloned()
    }

    /// Appends a record to the file (flushing immediately, so a kill loses
    /// at most the in-flight line) and indexes it.
    pub fn insert(&self, record: &CompletionRecord) -> Result<(), LlmError> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(writer) = inner.writer.as_mut() {
            let line = serde_json::to_string(record)
                .map_err(|e| LlmError::Io(std::io::Error::other(e)))?;
            writer.write_all(line.as_bytes())?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
        inner.map.insert(record.cache_key.clone(), record.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
