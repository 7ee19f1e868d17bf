//! File-system persistence.
//!
//! ```text
//! <root>/sessions/<id>/session.json   {"digest": .., "session": ..}
//! <root>/sessions/<id>/events.jsonl   one EventRecord per line
//! <root>/blobs/<hh>/<sha256>          content-addressed bytes
//! ```
//!
//! A bundle is a tar archive holding the same layout for one session.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{ImageRef, Session, SessionId};
use crate::events::{canonical_digest, EventRecord, SessionEvent};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("corrupt record {path}: {reason}")]
    CorruptRecord { path: String, reason: String },
    #[error("session {0} already exists")]
    IdCollision(SessionId),
    #[error("missing blob {0}")]
    MissingBlob(String),
    #[error("storage i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    digest: String,
    session: Value,
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// MIME type sniffed from the encoded bytes.
pub fn media_type_of(bytes: &[u8]) -> &'static str {
    image::guess_format(bytes).map(|f| f.to_mime_type()).unwrap_or("application/octet-stream")
}

fn is_hash(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

fn is_safe_id(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

fn corrupt(path: &Path, reason: impl ToString) -> StoreError {
    StoreError::CorruptRecord { path: path.display().to_string(), reason: reason.to_string() }
}

/// Every blob hash a session refers to, including element snapshots kept in
/// integrated prompts.
pub fn referenced_blobs(session: &Session) -> BTreeSet<String> {
    let snapshot_cards = session.integrated_prompts.iter().flat_map(|p| p.selection_snapshot.cards());
    session
        .cards()
        .chain(snapshot_cards)
        .filter_map(|c| c.preview_ref.as_ref())
        .chain(session.history.iter().map(|a| &a.image_ref))
        .map(|r| r.content_hash.clone())
        .collect()
}

pub struct FsStore {
    root: PathBuf,
    /// Last assigned seq per session, loaded lazily from disk.
    seqs: Mutex<HashMap<SessionId, u64>>,
}

impl FsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        fs::create_dir_all(root.join("blobs"))?;
        Ok(Self { root, seqs: Mutex::new(HashMap::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_dir(&self, id: &SessionId) -> Result<PathBuf, StoreError> {
        if !is_safe_id(id.as_str()) {
            return Err(StoreError::NotFound(format!("session {id}")));
        }
        Ok(self.root.join("sessions").join(id.as_str()))
    }

    fn blob_path(&self, hash: &str) -> PathBuf {
        self.root.join("blobs").join(&hash[..2]).join(hash)
    }

    pub fn session_exists(&self, id: &SessionId) -> bool {
        self.session_dir(id).map(|d| d.join("session.json").exists()).unwrap_or(false)
    }

    pub fn list_sessions(&self) -> Result<Vec<SessionId>, StoreError> {
        let mut ids: Vec<SessionId> = fs::read_dir(self.root.join("sessions"))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("session.json").exists())
            .filter_map(|e| e.file_name().into_string().ok())
            .map(SessionId::new)
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn save_session(&self, session: &Session) -> Result<(), StoreError> {
        let dir = self.session_dir(&session.id)?;
        fs::create_dir_all(&dir)?;
        let value = serde_json::to_value(session).expect("sessions serialize");
        let envelope = Envelope { digest: canonical_digest(&value), session: value };
        let tmp = dir.join("session.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&envelope).expect("json"))?;
        fs::rename(tmp, dir.join("session.json"))?;
        Ok(())
    }

    pub fn load_session(&self, id: &SessionId) -> Result<Session, StoreError> {
        let path = self.session_dir(id)?.join("session.json");
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(format!("session {id}")))
            }
            Err(e) => return Err(e.into()),
        };
        let envelope: Envelope = serde_json::from_slice(&bytes).map_err(|e| corrupt(&path, e))?;
        if canonical_digest(&envelope.session) != envelope.digest {
            return Err(corrupt(&path, "digest mismatch"));
        }
        serde_json::from_value(envelope.session).map_err(|e| corrupt(&path, e))
    }

    fn last_seq_on_disk(&self, id: &SessionId) -> Result<u64, StoreError> {
        match self.load_events(id) {
            Ok(events) => Ok(events.last().map_or(0, |r| r.seq)),
            Err(StoreError::NotFound(_)) => Ok(0),
            Err(e) => Err(e),
        }
    }

    /// Appends `event` with the next seq for its session.
    pub fn append_event(
        &self,
        id: &SessionId,
        timestamp: DateTime<Utc>,
        event: &SessionEvent,
    ) -> Result<EventRecord, StoreError> {
        let dir = self.session_dir(id)?;
        let mut seqs = self.seqs.lock();
        let last = match seqs.get(id) {
            Some(s) => *s,
            None => self.last_seq_on_disk(id)?,
        };
        let record = EventRecord::new(last + 1, timestamp, id.clone(), event);
        fs::create_dir_all(&dir)?;
        let mut line = serde_json::to_vec(&record).expect("json");
        line.push(b'\n');
        let mut file = OpenOptions::new().create(true).append(true).open(dir.join("events.jsonl"))?;
        file.write_all(&line)?;
        seqs.insert(id.clone(), record.seq);
        Ok(record)
    }

    pub fn load_events(&self, id: &SessionId) -> Result<Vec<EventRecord>, StoreError> {
        let path = self.session_dir(id)?.join("events.jsonl");
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(format!("events for {id}")))
            }
            Err(e) => return Err(e.into()),
        };
        let mut out: Vec<EventRecord> = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: EventRecord = serde_json::from_str(&line).map_err(|e| corrupt(&path, e))?;
            if !record.digest_ok() {
                return Err(corrupt(&path, format!("digest mismatch at seq {}", record.seq)));
            }
            if out.last().is_some_and(|prev| prev.seq >= record.seq) {
                return Err(corrupt(&path, format!("seq {} not increasing", record.seq)));
            }
            out.push(record);
        }
        Ok(out)
    }

    /// Stores `bytes` under their SHA-256. Idempotent.
    pub fn put_blob(&self, bytes: &[u8]) -> Result<String, StoreError> {
        let hash = content_hash(bytes);
        let path = self.blob_path(&hash);
        if !path.exists() {
            fs::create_dir_all(path.parent().expect("blob dir"))?;
            // Unique temp name so concurrent puts of the same bytes cannot clash.
            let tmp = path.with_extension(format!("tmp{}", uuid::Uuid::new_v4().simple()));
            fs::write(&tmp, bytes)?;
            fs::rename(tmp, &path)?;
        }
        Ok(hash)
    }

    /// Stores an encoded image and reads its dimensions.
    pub fn put_image(&self, bytes: &[u8], media_type: &str) -> Result<ImageRef, StoreError> {
        let (width, height) = image::ImageReader::new(std::io::Cursor::new(bytes))
            .with_guessed_format()?
            .into_dimensions()
            .map_err(|e| StoreError::CorruptRecord { path: "image".into(), reason: e.to_string() })?;
        let content_hash = self.put_blob(bytes)?;
        Ok(ImageRef { content_hash, width, height, media_type: media_type.to_owned() })
    }

    pub fn get_blob(&self, hash: &str) -> Result<Vec<u8>, StoreError> {
        if !is_hash(hash) {
            return Err(StoreError::NotFound(format!("blob {hash}")));
        }
        match fs::read(self.blob_path(hash)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(StoreError::NotFound(format!("blob {hash}"))),
            Err(e) => Err(e.into()),
        }
    }

    pub fn export_bundle(&self, id: &SessionId, path: &Path) -> Result<(), StoreError> {
        let session = self.load_session(id)?;
        let dir = self.session_dir(id)?;
        let mut blobs = Vec::new();
        for hash in referenced_blobs(&session) {
            let p = self.blob_path(&hash);
            if !p.exists() {
                return Err(StoreError::MissingBlob(hash));
            }
            blobs.push((hash, p));
        }
        let mut builder = tar::Builder::new(File::create(path)?);
        let prefix = Path::new("sessions").join(id.as_str());
        builder.append_path_with_name(dir.join("session.json"), prefix.join("session.json"))?;
        if dir.join("events.jsonl").exists() {
            builder.append_path_with_name(dir.join("events.jsonl"), prefix.join("events.jsonl"))?;
        }
        for (hash, p) in blobs {
            builder.append_path_with_name(p, Path::new("blobs").join(&hash[..2]).join(&hash))?;
        }
        builder.into_inner()?.flush()?;
        Ok(())
    }

    /// Imports a bundle written by [`FsStore::export_bundle`]. Nothing is
    /// written unless the bundle is complete.
    pub fn import_bundle(&self, path: &Path) -> Result<Session, StoreError> {
        let bundle = path.display().to_string();
        let mut archive = tar::Archive::new(File::open(path)?);
        let mut session_doc = None;
        let mut events = None;
        let mut blobs: HashMap<String, Vec<u8>> = HashMap::new();
        let mut session_id = None;
        for entry in archive.entries()? {
            let mut entry = entry?;
            let name = entry.path()?.to_string_lossy().into_owned();
            let parts: Vec<&str> = name.split('/').collect();
            let mut bytes = Vec::new();
            entry.read_to_end(&mut bytes)?;
            match parts.as_slice() {
                ["sessions", id, file] if is_safe_id(id) => {
                    if session_id.get_or_insert_with(|| id.to_string()) != id {
                        return Err(StoreError::CorruptRecord { path: bundle, reason: "multiple sessions".into() });
                    }
                    match *file {
                        "session.json" => session_doc = Some(bytes),
                        "events.jsonl" => events = Some(bytes),
                        _ => {
                            return Err(StoreError::CorruptRecord {
                                path: bundle,
                                reason: format!("unexpected {name}"),
                            })
                        }
                    }
                }
                ["blobs", hh, hash] if is_hash(hash) && hash.starts_with(hh) => {
                    if content_hash(&bytes) != *hash {
                        return Err(StoreError::CorruptRecord {
                            path: bundle,
                            reason: format!("blob {hash} hash mismatch"),
                        });
                    }
                    blobs.insert(hash.to_string(), bytes);
                }
                _ => return Err(StoreError::CorruptRecord { path: bundle, reason: format!("unexpected {name}") }),
            }
        }
        let (Some(id), Some(doc)) = (session_id, session_doc) else {
            return Err(StoreError::CorruptRecord { path: bundle, reason: "no session document".into() });
        };
        let id = SessionId::new(id);
        let envelope: Envelope = serde_json::from_slice(&doc).map_err(|e| corrupt(path, e))?;
        if canonical_digest(&envelope.session) != envelope.digest {
            return Err(corrupt(path, "session digest mismatch"));
        }
        let session: Session = serde_json::from_value(envelope.session).map_err(|e| corrupt(path, e))?;
        if session.id != id {
            return Err(corrupt(path, "session id does not match its directory"));
        }
        if self.session_exists(&id) {
            return Err(StoreError::IdCollision(id));
        }
        if let Some(missing) = referenced_blobs(&session).into_iter().find(|h| !blobs.contains_key(h)) {
            return Err(StoreError::MissingBlob(missing));
        }
        for bytes in blobs.values() {
            self.put_blob(bytes)?;
        }
        let dir = self.session_dir(&id)?;
        fs::create_dir_all(&dir)?;
        if let Some(events) = events {
            fs::write(dir.join("events.jsonl"), events)?;
        }
        fs::write(dir.join("session.json"), doc)?;
        self.seqs.lock().remove(&id);
        self.load_session(&id)
    }
}
