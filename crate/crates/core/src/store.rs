//! Per-document files: an append-only `events.jsonl` and a `checkpoint.json`
//! holding the folded state after the last command.
//!
//! The checkpoint's first line is `{"seq": n, "sha256": "..."}` and the rest
//! is the session JSON the digest covers. The log is the source of truth; the
//! checkpoint only has to agree with it.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::session::{Session, SessionEvent};

const EVENTS: &str = "events.jsonl";
const CHECKPOINT: &str = "checkpoint.json";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("no document {0:?}")]
    NotFound(String),
    #[error("invalid document id {0:?}")]
    InvalidId(String),
    #[error("document {0:?} already exists")]
    Exists(String),
    #[error("store i/o: {0}")]
    Io(#[from] io::Error),
    #[error("document {id:?} is corrupt: {reason}")]
    StoreCorrupt { id: String, reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    seq: u64,
    sha256: String,
}

#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

pub fn valid_doc_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(FileStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, id: &str) -> Result<PathBuf, StoreError> {
        if !valid_doc_id(id) {
            return Err(StoreError::InvalidId(id.to_owned()));
        }
        Ok(self.root.join(id))
    }

    fn corrupt(id: &str, reason: impl Into<String>) -> StoreError {
        StoreError::StoreCorrupt {
            id: id.to_owned(),
            reason: reason.into(),
        }
    }

    pub fn exists(&self, id: &str) -> bool {
        self.dir(id).is_ok_and(|d| d.join(EVENTS).is_file())
    }

    /// Reserve a fresh `d{n}` id.
    pub fn create_id(&self) -> Result<String, StoreError> {
        let mut n = self
            .list()?
            .iter()
            .filter_map(|id| id.strip_prefix('d')?.parse::<u64>().ok())
            .max()
            .unwrap_or(0);
        loop {
            n += 1;
            let id = format!("d{n}");
            match fs::create_dir(self.root.join(&id)) {
                Ok(()) => return Ok(id),
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Ids of stored documents, sorted.
    pub fn list(&self) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if valid_doc_id(&name) && entry.path().join(EVENTS).is_file() {
                ids.push(name);
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn append(&self, id: &str, events: &[SessionEvent]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let dir = self.dir(id)?;
        fs::create_dir_all(&dir)?;
        let mut buf = Vec::new();
        for ev in events {
            serde_json::to_writer(&mut buf, ev).map_err(io::Error::other)?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(dir.join(EVENTS))?;
        f.write_all(&buf)?;
        f.sync_data()?;
        Ok(())
    }

    pub fn checkpoint(&self, id: &str, session: &Session) -> Result<(), StoreError> {
        let dir = self.dir(id)?;
        let body = serde_json::to_vec(session).map_err(io::Error::other)?;
        let header = CheckpointHeader {
            seq: session.last_seq,
            sha256: hex::encode(Sha256::digest(&body)),
        };
        let tmp = dir.join(format!("{CHECKPOINT}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(&mut f, &header).map_err(io::Error::other)?;
            f.write_all(b"\n")?;
            f.write_all(&body)?;
            f.sync_data()?;
        }
        fs::rename(tmp, dir.join(CHECKPOINT))?;
        Ok(())
    }

    /// Persist what a session has emitted since the last save.
    pub fn save(&self, id: &str, session: &mut Session) -> Result<(), StoreError> {
        let events = session.take_events();
        self.append(id, &events)?;
        self.checkpoint(id, session)
    }

    pub fn load_events(&self, id: &str) -> Result<Vec<SessionEvent>, StoreError> {
        let path = self.dir(id)?.join(EVENTS);
        let raw = match fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_owned())),
            Err(e) => return Err(e.into()),
        };
        if !raw.is_empty() && raw.last() != Some(&b'\n') {
            return Err(Self::corrupt(id, "torn final line in event log"));
        }
        raw.split(|&b| b == b'\n')
            .filter(|line| !line.is_empty())
            .enumerate()
            .map(|(n, line)| {
                serde_json::from_slice(line).map_err(|e| Self::corrupt(id, format!("event line {}: {e}", n + 1)))
            })
            .collect()
    }

    fn load_checkpoint(&self, id: &str) -> Result<Option<Session>, StoreError> {
        let path = self.dir(id)?.join(CHECKPOINT);
        let raw = match fs::read(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let split = raw
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Self::corrupt(id, "checkpoint has no header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&raw[..split])
            .map_err(|e| Self::corrupt(id, format!("checkpoint header: {e}")))?;
        let body = &raw[split + 1..];
        if hex::encode(Sha256::digest(body)) != header.sha256 {
            return Err(Self::corrupt(id, "checkpoint checksum mismatch"));
        }
        let session: Session =
            serde_json::from_slice(body).map_err(|e| Self::corrupt(id, format!("checkpoint body: {e}")))?;
        if session.last_seq != header.seq {
            return Err(Self::corrupt(id, "checkpoint header disagrees with its body"));
        }
        Ok(Some(session))
    }

    /// Replay the log and check it against the checkpoint.
    pub fn load(&self, id: &str) -> Result<Session, StoreError> {
        let events = self.load_events(id)?;
        let session = Session::replay(events.iter()).map_err(|e| Self::corrupt(id, e.to_string()))?;
        if let Some(cp) = self.load_checkpoint(id)? {
            if cp.last_seq > session.last_seq {
                return Err(Self::corrupt(
                    id,
                    format!("event log ends at {} but checkpoint is at {}", session.last_seq, cp.last_seq),
                ));
            }
            if cp.last_seq < session.last_seq {
                log::warn!(
                    "document {id}: checkpoint at {} trails the log at {}; using the log",
                    cp.last_seq,
                    session.last_seq
                );
            } else if cp != session {
                return Err(Self::corrupt(id, "checkpoint does not match the replayed log"));
            }
        }
        Ok(session)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::Timestamp;
    use crate::prompt::TemplateSet;
    use crate::provider::ScriptedProvider;
    use crate::session::{Command, Settings};

    fn saved(store: &FileStore) -> (String, Session) {
        let id = store.create_id().unwrap();
        let mut s = Session::create("hello world", Settings::default(), Timestamp(1));
        store.save(&id, &mut s).unwrap();
        let cmd = Command::ManualEdit {
            start: 0,
            end: 5,
            replacement: "goodbye".into(),
        };
        s.execute(cmd, &ScriptedProvider::new(), &TemplateSet::default(), Timestamp(2))
            .unwrap();
        store.save(&id, &mut s).unwrap();
        (id, s)
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let (id, s) = saved(&store);
        assert_eq!(id, "d1");
        assert_eq!(store.load(&id).unwrap(), s);
        assert_eq!(store.list().unwrap(), ["d1"]);
        assert_eq!(store.create_id().unwrap(), "d2");
    }

    #[test]
    fn rejects_bad_ids_and_missing_docs() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        assert!(matches!(store.load("../etc"), Err(StoreError::InvalidId(_))));
        assert!(matches!(store.load("nope"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn torn_line_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let (id, _) = saved(&store);
        let path = dir.path().join(&id).join(EVENTS);
        let mut raw = fs::read(&path).unwrap();
        raw.truncate(raw.len() - 3);
        fs::write(&path, raw).unwrap();
        assert!(matches!(store.load(&id), Err(StoreError::StoreCorrupt { .. })));
    }

    #[test]
    fn truncated_log_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let (id, _) = saved(&store);
        let path = dir.path().join(&id).join(EVENTS);
        let raw = fs::read_to_string(&path).unwrap();
        let first = raw.lines().next().unwrap();
        fs::write(&path, format!("{first}\n")).unwrap();
        let err = store.load(&id).unwrap_err();
        assert!(err.to_string().contains("checkpoint is at"), "{err}");
    }

    #[test]
    fn checksum_mismatch_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let (id, _) = saved(&store);
        let path = dir.path().join(&id).join(CHECKPOINT);
        let raw = fs::read_to_string(&path).unwrap().replace("goodbye", "goodbyf");
        fs::write(&path, raw).unwrap();
        let err = store.load(&id).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn log_ahead_of_checkpoint_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::open(dir.path()).unwrap();
        let (id, mut s) = saved(&store);
        let cmd = Command::ManualEdit {
            start: 0,
            end: 0,
            replacement: ">".into(),
        };
        s.execute(cmd, &ScriptedProvider::new(), &TemplateSet::default(), Timestamp(3))
            .unwrap();
        store.append(&id, &s.take_events()).unwrap();
        assert_eq!(store.load(&id).unwrap().content(), ">goodbye world");
    }
}
