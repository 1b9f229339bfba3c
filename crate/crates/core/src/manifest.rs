//! Append-only metadata log.
//!
//! Every accepted version edit is appended as one crc-framed record and
//! synced before the edit is published, so a recovered manifest always
//! describes a state the store actually reached. `CURRENT` names the
//! live `MANIFEST-<generation>` file; rewrites snapshot the whole state
//! into a fresh generation and flip `CURRENT` atomically.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, IoResultExt, Result};
use crate::sstable::RunHandle;

pub const REWRITE_THRESHOLD_BYTES: u64 = 4 << 20;

const RECORD_HEADER_LEN: usize = 8;
const MAX_RECORD_LEN: u32 = 1 << 30;

pub fn manifest_file_name(generation: u64) -> String {
    format!("MANIFEST-{generation:06}")
}

/// Serializable mirror of a version edit: what changed, plus the
/// resulting sequence horizon.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EditMeta {
    pub added: Vec<(u32, RunHandle)>,
    pub removed: Vec<u64>,
    pub new_depth: Option<u32>,
    /// Highest sequence persisted after this edit.
    pub last_seq: u64,
}

impl EditMeta {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.added.len() as u32).to_le_bytes());
        for (level, handle) in &self.added {
            out.extend_from_slice(&level.to_le_bytes());
            handle.encode_into(&mut out);
        }
        out.extend_from_slice(&(self.removed.len() as u32).to_le_bytes());
        for id in &self.removed {
            out.extend_from_slice(&id.to_le_bytes());
        }
        match self.new_depth {
            Some(d) => {
                out.push(1);
                out.extend_from_slice(&d.to_le_bytes());
            }
            None => out.push(0),
        }
        out.extend_from_slice(&self.last_seq.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<EditMeta> {
        let corrupt = |detail: &str| Error::corruption("manifest record", detail);
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|e| *e <= buf.len());
            let end = end.ok_or_else(|| corrupt("record shorter than its fields"))?;
            let s = &buf[*pos..end];
            *pos = end;
            Ok(s)
        };

        let n_added = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut added = Vec::with_capacity(n_added.min(1024));
        for _ in 0..n_added {
            let level = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
            let (handle, used) = RunHandle::decode_from(&buf[pos..])?;
            pos += used;
            added.push((level, handle));
        }
        let n_removed = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut removed = Vec::with_capacity(n_removed.min(1024));
        for _ in 0..n_removed {
            removed.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let new_depth = match take(&mut pos, 1)?[0] {
            0 => None,
            1 => Some(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap())),
            other => return Err(corrupt(&format!("bad depth flag {other}"))),
        };
        let last_seq = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        if pos != buf.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(EditMeta { added, removed, new_depth, last_seq })
    }
}

pub struct ManifestLog {
    file: File,
    path: PathBuf,
    generation: u64,
    bytes_written: u64,
}

pub struct ManifestLoad {
    pub records: Vec<EditMeta>,
    pub generation: u64,
    pub truncated: bool,
}

impl ManifestLog {
    /// Starts generation 1 in an empty directory and points CURRENT at
    /// it.
    pub fn create(dir: &Path) -> Result<ManifestLog> {
        let log = Self::start_generation(dir, 1)?;
        set_current(dir, 1)?;
        Ok(log)
    }

    fn start_generation(dir: &Path, generation: u64) -> Result<ManifestLog> {
        let path = dir.join(manifest_file_name(generation));
        let file =
            OpenOptions::new().create_new(true).write(true).open(&path).at_path(&path)?;
        Ok(ManifestLog { file, path, generation, bytes_written: 0 })
    }

    /// Reopens the manifest named by CURRENT for appending.
    pub fn reopen(dir: &Path, load: &ManifestLoad) -> Result<ManifestLog> {
        let path = dir.join(manifest_file_name(load.generation));
        let file = OpenOptions::new().append(true).open(&path).at_path(&path)?;
        let bytes_written = file.metadata().at_path(&path)?.len();
        Ok(ManifestLog { file, path, generation: load.generation, bytes_written })
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    /// Appends one record and syncs it to disk before returning.
    pub fn append(&mut self, record: &EditMeta) -> Result<()> {
        let payload = record.encode();
        let mut framed = Vec::with_capacity(RECORD_HEADER_LEN + payload.len());
        framed.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        framed.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        framed.extend_from_slice(&payload);
        self.file.write_all(&framed).at_path(&self.path)?;
        self.file.sync_data().at_path(&self.path)?;
        self.bytes_written += framed.len() as u64;
        Ok(())
    }

    pub fn needs_rewrite(&self) -> bool {
        self.bytes_written > REWRITE_THRESHOLD_BYTES
    }

    /// Replaces the log with a fresh generation holding only
    /// `snapshot`, then flips CURRENT and removes the old file.
    pub fn rewrite(&mut self, dir: &Path, snapshot: &EditMeta) -> Result<()> {
        let mut next = Self::start_generation(dir, self.generation + 1)?;
        next.append(snapshot)?;
        set_current(dir, next.generation)?;
        let old_path = std::mem::replace(&mut self.path, next.path);
        self.file = next.file;
        self.generation = next.generation;
        self.bytes_written = next.bytes_written;
        let _ = std::fs::remove_file(old_path);
        Ok(())
    }
}

/// Atomically points CURRENT at `generation`.
fn set_current(dir: &Path, generation: u64) -> Result<()> {
    let tmp = dir.join("CURRENT.tmp");
    let path = dir.join("CURRENT");
    let mut file =
        OpenOptions::new().create(true).write(true).truncate(true).open(&tmp).at_path(&tmp)?;
    file.write_all(format!("{}\n", manifest_file_name(generation)).as_bytes()).at_path(&tmp)?;
    file.sync_data().at_path(&tmp)?;
    drop(file);
    std::fs::rename(&tmp, &path).at_path(&path)?;
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_data();
    }
    Ok(())
}

/// Reads CURRENT and replays the manifest it names. `Ok(None)` means no
/// CURRENT file: a fresh store.
pub fn load(dir: &Path) -> Result<Option<ManifestLoad>> {
    let current = dir.join("CURRENT");
    let name = match std::fs::read_to_string(&current) {
        Ok(s) => s.trim().to_string(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(&current, e)),
    };
    let generation: u64 = name
        .strip_prefix("MANIFEST-")
        .and_then(|g| g.parse().ok())
        .ok_or_else(|| Error::corruption("CURRENT", format!("bad manifest name {name:?}")))?;
    let path = dir.join(&name);
    let buf = std::fs::read(&path).at_path(&path)?;

    let mut records = Vec::new();
    let mut truncated = false;
    let mut pos = 0usize;
    while pos < buf.len() {
        if buf.len() - pos < RECORD_HEADER_LEN {
            truncated = true;
            break;
        }
        let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap());
        let crc = u32::from_le_bytes(buf[pos + 4..pos + 8].try_into().unwrap());
        if len > MAX_RECORD_LEN || buf.len() - pos - RECORD_HEADER_LEN < len as usize {
            truncated = true;
            break;
        }
        let payload = &buf[pos + RECORD_HEADER_LEN..pos + RECORD_HEADER_LEN + len as usize];
        if crc32fast::hash(payload) != crc {
            truncated = true;
            break;
        }
        let Ok(record) = EditMeta::decode(payload) else {
            truncated = true;
            break;
        };
        records.push(record);
        pos += RECORD_HEADER_LEN + len as usize;
    }
    Ok(Some(ManifestLoad { records, generation, truncated }))
}
