use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::embed::{Embedder, EmbeddingVector};
use super::MemoryError;
use crate::policy::ActionMatrix;

/// One remembered interaction: instruction, scene description, the policy
/// that was executed, and the user's feedback on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub seq: u64,
    pub instruction: String,
    pub scene: String,
    pub policy: ActionMatrix,
    pub feedback: Option<String>,
    pub created_at: DateTime<Utc>,
}

/// Entry fields supplied by the caller; `seq` is assigned on insert.
#[derive(Debug, Clone, PartialEq)]
pub struct NewEntry {
    pub instruction: String,
    pub scene: String,
    pub policy: ActionMatrix,
    pub feedback: Option<String>,
    pub created_at: DateTime<Utc>,
}

impl NewEntry {
    fn validate(&self) -> Result<(), MemoryError> {
        if self.instruction.trim().is_empty() {
            return Err(MemoryError::InvalidEntry("instruction is empty".into()));
        }
        if self.scene.trim().is_empty() {
            return Err(MemoryError::InvalidEntry("scene description is empty".into()));
        }
        if matches!(&self.feedback, Some(f) if f.trim().is_empty()) {
            return Err(MemoryError::InvalidEntry("feedback is present but empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub similarity: f64,
    pub entry: MemoryEntry,
}

/// Append-only, per-user interaction store with a brute-force cosine index.
///
/// When backed by a file, each entry is appended as one JSON line and synced
/// before `insert` returns; reopening replays the file.
#[derive(Debug)]
pub struct MemoryStore {
    user_id: String,
    embedder: Embedder,
    entries: Vec<MemoryEntry>,
    index: Vec<EmbeddingVector>,
    file: Option<PathBuf>,
}

/// File name for a user's store. Ids outside `[A-Za-z0-9_-]` are hex-encoded
/// so distinct users never share a file.
pub fn store_file_name(user_id: &str) -> String {
    if !user_id.is_empty() && user_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        format!("{user_id}.jsonl")
    } else {
        format!("x-{}.jsonl", hex::encode(user_id.as_bytes()))
    }
}

impl MemoryStore {
    pub fn in_memory(user_id: impl Into<String>) -> Self {
        Self::with_embedder(user_id, Embedder::default())
    }

    pub fn with_embedder(user_id: impl Into<String>, embedder: Embedder) -> Self {
        Self {
            user_id: user_id.into(),
            embedder,
            entries: Vec::new(),
            index: Vec::new(),
            file: None,
        }
    }

    /// Opens (or creates) the store for `user_id` under `dir`.
    ///
    /// A torn final line, left by a crash mid-append, is discarded and the
    /// file truncated to its last complete entry.
    pub fn open(dir: &Path, user_id: &str, embedder: Embedder) -> Result<Self, MemoryError> {
        fs::create_dir_all(dir).map_err(storage)?;
        let path = dir.join(store_file_name(user_id));
        let mut store = Self::with_embedder(user_id, embedder);

        if path.exists() {
            let mut raw = Vec::new();
            File::open(&path).and_then(|mut f| f.read_to_end(&mut raw)).map_err(storage)?;
            let complete = raw.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
            if complete < raw.len() {
                OpenOptions::new()
                    .write(true)
                    .open(&path)
                    .and_then(|f| f.set_len(complete as u64))
                    .map_err(storage)?;
            }
            let text = std::str::from_utf8(&raw[..complete])
                .map_err(|e| MemoryError::Corrupt(format!("{}: {e}", path.display())))?;
            for (line_no, line) in text.lines().enumerate() {
                let entry: MemoryEntry = serde_json::from_str(line)
                    .map_err(|e| MemoryError::Corrupt(format!("{} line {}: {e}", path.display(), line_no + 1)))?;
                if entry.seq != store.entries.len() as u64 {
                    return Err(MemoryError::Corrupt(format!(
                        "{} line {}: expected seq {}, found {}",
                        path.display(),
                        line_no + 1,
                        store.entries.len(),
                        entry.seq
                    )));
                }
                store.push(entry);
            }
        }
        store.file = Some(path);
        Ok(store)
    }

    fn push(&mut self, entry: MemoryEntry) {
        self.index.push(self.embedder.embed(&entry.instruction));
        self.entries.push(entry);
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn embedder(&self) -> &Embedder {
        &self.embedder
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_deref()
    }

    /// Appends an entry and returns its sequence number. The write is durable
    /// before this returns; on failure the store is unchanged.
    pub fn insert(&mut self, new: NewEntry) -> Result<u64, MemoryError> {
        new.validate()?;
        let entry = MemoryEntry {
            seq: self.entries.len() as u64,
            instruction: new.instruction,
            scene: new.scene,
            policy: new.policy,
            feedback: new.feedback,
            created_at: new.created_at,
        };
        if let Some(path) = &self.file {
            let mut line = serde_json::to_vec(&entry).map_err(|e| MemoryError::Storage(e.to_string()))?;
            line.push(b'\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(storage)?;
            let before = f.metadata().map_err(storage)?.len();
            if let Err(e) = f.write_all(&line).and_then(|_| f.sync_data()) {
                // Roll back a partial append so the file matches the last
                // acknowledged state.
                let _ = f.set_len(before);
                return Err(storage(e));
            }
        }
        let seq = entry.seq;
        self.push(entry);
        Ok(seq)
    }

    /// Top-`k` entries by cosine similarity of the instruction embeddings,
    /// ties broken toward the most recent entry. A query without tokens
    /// returns the `k` most recent entries.
    pub fn retrieve(&self, instruction: &str, k: usize) -> Vec<Retrieved> {
        let query = self.embedder.embed(instruction);
        let mut scored: Vec<(f64, usize)> = if query.is_degenerate() {
            (0..self.entries.len()).map(|i| (0.0, i)).collect()
        } else {
            self.index.iter().enumerate().map(|(i, v)| (query.cosine(v), i)).collect()
        };
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        scored
            .into_iter()
            .take(k)
            .map(|(similarity, i)| Retrieved {
                similarity,
                entry: self.entries[i].clone(),
            })
            .collect()
    }
}

fn storage(e: std::io::Error) -> MemoryError {
    MemoryError::Storage(e.to_string())
}

/// Per-user stores under one directory (or purely in memory), opened lazily.
/// Each store has its own lock, so users never contend with each other.
#[derive(Debug, Default)]
pub struct MemoryRegistry {
    dir: Option<PathBuf>,
    embedder: Embedder,
    stores: Mutex<HashMap<String, Arc<RwLock<MemoryStore>>>>,
}

impl MemoryRegistry {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    pub fn store(&self, user_id: &str) -> Result<Arc<RwLock<MemoryStore>>, MemoryError> {
        let mut stores = self.stores.lock().expect("registry lock poisoned");
        if let Some(s) = stores.get(user_id) {
            return Ok(Arc::clone(s));
        }
        let store = match &self.dir {
            Some(dir) => MemoryStore::open(dir, user_id, self.embedder)?,
            None => MemoryStore::with_embedder(user_id, self.embedder),
        };
        let store = Arc::new(RwLock::new(store));
        stores.insert(user_id.to_string(), Arc::clone(&store));
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::default_baseline;

    fn entry(instruction: &str) -> NewEntry {
        NewEntry {
            instruction: instruction.into(),
            scene: "weather=sunny".into(),
            policy: default_baseline(),
            feedback: Some("fine".into()),
            created_at: DateTime::from_timestamp(1_700_000_000, 0).unwrap(),
        }
    }

    #[test]
    fn insert_assigns_sequential_seq() {
        let mut s = MemoryStore::in_memory("u");
        assert_eq!(s.insert(entry("go faster")).unwrap(), 0);
        assert_eq!(s.len(), 1);
        assert_eq!(s.insert(entry("slow down")).unwrap(), 1);
        assert_eq!(s.index.len(), 2);
    }

    #[test]
    fn rejects_empty_fields() {
        let mut s = MemoryStore::in_memory("u");
        assert!(matches!(s.insert(entry("  ")), Err(MemoryError::InvalidEntry(_))));
        let mut e = entry("x");
        e.feedback = Some(String::new());
        assert!(s.insert(e).is_err());
        let mut e = entry("x");
        e.feedback = None;
        assert!(s.insert(e).is_ok());
    }

    #[test]
    fn retrieve_small_store() {
        let mut s = MemoryStore::in_memory("u");
        s.insert(entry("turn left ahead")).unwrap();
        let r = s.retrieve("anything at all", 3);
        assert_eq!(r.len(), 1);
        s.insert(entry("go faster")).unwrap();
        s.insert(entry("slow down please")).unwrap();
        let r = s.retrieve("go faster", 2);
        assert_eq!(r[0].entry.instruction, "go faster");
        assert!((r[0].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_recent() {
        let mut s = MemoryStore::in_memory("u");
        for _ in 0..3 {
            s.insert(entry("go faster")).unwrap();
        }
        let seqs: Vec<u64> = s.retrieve("go faster", 3).iter().map(|r| r.entry.seq).collect();
        assert_eq!(seqs, vec![2, 1, 0]);
        let seqs: Vec<u64> = s.retrieve("!!", 2).iter().map(|r| r.entry.seq).collect();
        assert_eq!(seqs, vec![2, 1]);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = MemoryStore::open(dir.path(), "alice", Embedder::default()).unwrap();
        s.insert(entry("go faster")).unwrap();
        s.insert(entry("I feel uncomfortable")).unwrap();
        let reopened = MemoryStore::open(dir.path(), "alice", Embedder::default()).unwrap();
        assert_eq!(reopened.entries(), s.entries());
        for q in ["go faster", "uncomfortable", "xyz"] {
            assert_eq!(reopened.retrieve(q, 2), s.retrieve(q, 2));
        }
    }

    #[test]
    fn torn_tail_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = MemoryStore::open(dir.path(), "bob", Embedder::default()).unwrap();
        s.insert(entry("go faster")).unwrap();
        let path = s.path().unwrap().to_path_buf();
        let acknowledged = fs::read(&path).unwrap();
        // Simulate a crash halfway through the next append.
        OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"seq\":1,\"instr").unwrap();

        let mut reopened = MemoryStore::open(dir.path(), "bob", Embedder::default()).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(fs::read(&path).unwrap(), acknowledged);
        assert_eq!(reopened.insert(entry("slow down")).unwrap(), 1);
    }

    #[test]
    fn corrupt_line_reported() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("carol.jsonl"), "not json\n").unwrap();
        assert!(matches!(
            MemoryStore::open(dir.path(), "carol", Embedder::default()),
            Err(MemoryError::Corrupt(_))
        ));
    }

    #[test]
    fn file_names_are_isolated() {
        assert_eq!(store_file_name("alice"), "alice.jsonl");
        assert_ne!(store_file_name("../alice"), store_file_name("alice"));
        assert!(!store_file_name("../x").contains('/'));
    }

    #[test]
    fn registry_isolates_users() {
        let dir = tempfile::tempdir().unwrap();
        let reg = MemoryRegistry::on_disk(dir.path());
        let a = reg.store("a").unwrap();
        let b = reg.store("b").unwrap();
        a.write().unwrap().insert(entry("go faster")).unwrap();
        b.write().unwrap().insert(entry("slow down")).unwrap();
        a.write().unwrap().insert(entry("speed up")).unwrap();
        assert_eq!(a.read().unwrap().len(), 2);
        assert_eq!(b.read().unwrap().len(), 1);
        assert!(b.read().unwrap().entries().iter().all(|e| e.instruction == "slow down"));
        assert!(Arc::ptr_eq(&a, &reg.store("a").unwrap()));
    }
}
