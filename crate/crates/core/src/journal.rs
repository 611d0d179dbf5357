//! Hash-chained, append-only JSONL journals.
//!
//! Every service writes its state changes here before acknowledging them and
//! rebuilds its state by folding the journal on restart. Each line is one
//! canonical JSON object:
//!
//! ```text
//! {"hash":"…","kind":"…","payload":{…},"prev_hash":"…","seq":1,"ts":0}
//! ```
//!
//! `hash = sha256(prev_hash || canonical({"kind","payload","seq","ts"}))`, hex
//! encoded. The first event chains from 64 zero characters.

use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ids::Tick;

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEvent {
    pub seq: u64,
    pub ts: Tick,
    pub kind: String,
    pub payload: Value,
    pub prev_hash: String,
    pub hash: String,
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal storage failure: {0}")]
    StorageFailure(String),
    #[error("journal chain broken at seq {0}")]
    ChainBroken(u64),
    #[error("cannot encode event: {0}")]
    Encode(String),
    #[error("cannot decode event seq {seq}: {reason}")]
    Decode { seq: u64, reason: String },
}

/// Result of [`verify_chain`]. Corruption is data, not an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainStatus {
    Ok { events: u64 },
    Broken { first_bad_seq: u64 },
}

impl ChainStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainStatus::Ok { .. })
    }
}

/// Byte sink for a journal. `load` returns everything appended so far.
pub trait Storage: Send + Sync + fmt::Debug {
    fn append(&self, line: &str) -> io::Result<()>;
    fn load(&self) -> io::Result<String>;
    /// Drops bytes past `len`; used to discard a torn trailing line.
    fn truncate(&self, len: usize) -> io::Result<()>;
}

#[derive(Debug, Default)]
pub struct MemoryStorage {
    content: Mutex<String>,
}

impl MemoryStorage {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn with_content(content: impl Into<String>) -> Arc<Self> {
        Arc::new(Self {
            content: Mutex::new(content.into()),
        })
    }

    /// Overwrites the stored bytes. Test hook for tamper scenarios.
    pub fn replace(&self, content: impl Into<String>) {
        *self.content.lock().unwrap() = content.into();
    }
}

impl Storage for MemoryStorage {
    fn append(&self, line: &str) -> io::Result<()> {
        let mut c = self.content.lock().unwrap();
        c.push_str(line);
        c.push('\n');
        Ok(())
    }

    fn load(&self) -> io::Result<String> {
        Ok(self.content.lock().unwrap().clone())
    }

    fn truncate(&self, len: usize) -> io::Result<()> {
        self.content.lock().unwrap().truncate(len);
        Ok(())
    }
}

#[derive(Debug)]
pub struct FileStorage {
    path: PathBuf,
    file: Mutex<File>,
}

impl FileStorage {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Arc<Self>> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)?;
        Ok(Arc::new(Self {
            path,
            file: Mutex::new(file),
        }))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Storage for FileStorage {
    fn append(&self, line: &str) -> io::Result<()> {
        let mut f = self.file.lock().unwrap();
        let mut buf = String::with_capacity(line.len() + 1);
        buf.push_str(line);
        buf.push('\n');
        f.write_all(buf.as_bytes())?;
        f.flush()
    }

    fn load(&self) -> io::Result<String> {
        let mut f = self.file.lock().unwrap();
        f.seek(SeekFrom::Start(0))?;
        let mut s = String::new();
        f.read_to_string(&mut s)?;
        Ok(s)
    }

    fn truncate(&self, len: usize) -> io::Result<()> {
        self.file.lock().unwrap().set_len(len as u64)
    }
}

/// Serializes with object keys sorted and no insignificant whitespace,
/// regardless of how `serde_json` was compiled.
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
        scalar => out.push_str(&scalar.to_string()),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// The digest over everything except `hash` itself.
pub fn event_digest(prev_hash: &str, seq: u64, ts: Tick, kind: &str, payload: &Value) -> String {
    let mut body = Map::new();
    body.insert("kind".into(), Value::String(kind.to_string()));
    body.insert("payload".into(), payload.clone());
    body.insert("seq".into(), Value::from(seq));
    body.insert("ts".into(), Value::from(ts));
    let mut hasher = Sha256::new();
    hasher.update(prev_hash.as_bytes());
    hasher.update(canonical_json(&Value::Object(body)).as_bytes());
    hex::encode(hasher.finalize())
}

impl JournalEvent {
    pub fn to_line(&self) -> String {
        let mut obj = Map::new();
        obj.insert("seq".into(), Value::from(self.seq));
        obj.insert("ts".into(), Value::from(self.ts));
        obj.insert("kind".into(), Value::String(self.kind.clone()));
        obj.insert("payload".into(), self.payload.clone());
        obj.insert("prev_hash".into(), Value::String(self.prev_hash.clone()));
        obj.insert("hash".into(), Value::String(self.hash.clone()));
        canonical_json(&Value::Object(obj))
    }

    /// Decodes this event into a `#[serde(tag = "kind", content = "payload")]` enum.
    pub fn decode<E: DeserializeOwned>(&self) -> Result<E, JournalError> {
        let mut obj = Map::new();
        obj.insert("kind".into(), Value::String(self.kind.clone()));
        obj.insert("payload".into(), self.payload.clone());
        serde_json::from_value(Value::Object(obj)).map_err(|e| JournalError::Decode {
            seq: self.seq,
            reason: e.to_string(),
        })
    }
}

/// Complete lines of `content`. A trailing fragment without a newline is a
/// torn write and is not returned.
fn complete_lines(content: &str) -> impl Iterator<Item = &str> {
    let end = content.rfind('\n').map_or(0, |i| i + 1);
    content[..end].lines()
}

/// Recomputes every digest and reports the first event that does not verify.
pub fn verify_chain(content: &str) -> ChainStatus {
    let mut prev = GENESIS_HASH.to_string();
    let mut count = 0u64;
    for (i, line) in complete_lines(content).enumerate() {
        let expected_seq = i as u64 + 1;
        let Ok(ev) = serde_json::from_str::<JournalEvent>(line) else {
            return ChainStatus::Broken {
                first_bad_seq: expected_seq,
            };
        };
        if ev.seq != expected_seq
            || ev.prev_hash != prev
            || event_digest(&ev.prev_hash, ev.seq, ev.ts, &ev.kind, &ev.payload) != ev.hash
        {
            return ChainStatus::Broken {
                first_bad_seq: expected_seq,
            };
        }
        prev = ev.hash;
        count += 1;
    }
    ChainStatus::Ok { events: count }
}

/// Parses and verifies a journal, returning its events.
pub fn read_events(content: &str) -> Result<Vec<JournalEvent>, JournalError> {
    if let ChainStatus::Broken { first_bad_seq } = verify_chain(content) {
        return Err(JournalError::ChainBroken(first_bad_seq));
    }
    complete_lines(content)
        .map(|l| {
            serde_json::from_str(l).map_err(|e| JournalError::Decode {
                seq: 0,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Writer side of a service journal.
#[derive(Debug)]
pub struct Journal {
    storage: Arc<dyn Storage>,
    next_seq: u64,
    last_hash: String,
    poisoned: bool,
}

impl Journal {
    /// Opens a journal over `storage`, verifying what is already there and
    /// discarding a torn trailing line. Returns the existing events for replay.
    pub fn open(storage: Arc<dyn Storage>) -> Result<(Journal, Vec<JournalEvent>), JournalError> {
        let content = storage
            .load()
            .map_err(|e| JournalError::StorageFailure(e.to_string()))?;
        let complete = content.rfind('\n').map_or(0, |i| i + 1);
        if complete != content.len() {
            storage
                .truncate(complete)
                .map_err(|e| JournalError::StorageFailure(e.to_string()))?;
        }
        let events = read_events(&content[..complete])?;
        let last_hash = events
            .last()
            .map_or_else(|| GENESIS_HASH.to_string(), |e| e.hash.clone());
        let journal = Journal {
            storage,
            next_seq: events.len() as u64 + 1,
            last_hash,
            poisoned: false,
        };
        Ok((journal, events))
    }

    pub fn storage(&self) -> &Arc<dyn Storage> {
        &self.storage
    }

    pub fn head_hash(&self) -> &str {
        &self.last_hash
    }

    pub fn len(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    /// Appends and persists one event. After a storage failure the journal
    /// refuses every further append.
    pub fn append(&mut self, ts: Tick, kind: &str, payload: Value) -> Result<JournalEvent, JournalError> {
        if self.poisoned {
            return Err(JournalError::StorageFailure("journal poisoned by earlier failure".into()));
        }
        let hash = event_digest(&self.last_hash, self.next_seq, ts, kind, &payload);
        let event = JournalEvent {
            seq: self.next_seq,
            ts,
            kind: kind.to_string(),
            payload,
            prev_hash: self.last_hash.clone(),
            hash,
        };
        if let Err(e) = self.storage.append(&event.to_line()) {
            self.poisoned = true;
            return Err(JournalError::StorageFailure(e.to_string()));
        }
        self.next_seq += 1;
        self.last_hash = event.hash.clone();
        Ok(event)
    }

    /// Appends an adjacently tagged (`kind`/`payload`) event enum.
    pub fn append_typed<E: Serialize>(&mut self, ts: Tick, event: &E) -> Result<JournalEvent, JournalError> {
        let (kind, payload) = split_tagged(event)?;
        self.append(ts, &kind, payload)
    }
}

fn split_tagged<E: Serialize>(event: &E) -> Result<(String, Value), JournalError> {
    let value = serde_json::to_value(event).map_err(|e| JournalError::Encode(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(JournalError::Encode("event must serialize to an object".into()));
    };
    let kind = match obj.remove("kind") {
        Some(Value::String(k)) => k,
        _ => return Err(JournalError::Encode("event has no kind tag".into())),
    };
    let payload = obj.remove("payload").unwrap_or(Value::Null);
    Ok((kind, payload))
}
