//! Write-ahead log, one segment per memtable generation.
//!
//! Record layout: `[u32 length][u32 crc32(payload)][payload]`, with the
//! payload being one encoded internal entry. Appends go straight to the
//! file descriptor so an in-process crash loses nothing the OS already
//! has; fsync cadence is the configurable part.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::SyncPolicy;
use crate::error::{IoResultExt, Result};
use crate::types::InternalEntry;

const RECORD_HEADER_LEN: usize = 8;
const MAX_RECORD_LEN: u32 = 1 << 30;

pub fn segment_file_name(generation: u64) -> String {
    format!("{generation:06}.wal")
}

pub struct Wal {
    file: File,
    path: PathBuf,
    sync: SyncPolicy,
    last_sync: Instant,
    bytes_written: u64,
}

impl Wal {
    pub fn create(path: impl Into<PathBuf>, sync: SyncPolicy) -> Result<Self> {
        let path = path.into();
        let file = OpenOptions::new()
            .create_new(true)
            .write(true)
            .open(&path)
            .at_path(&path)?;
        Ok(Self { file, path, sync, last_sync: Instant::now(), bytes_written: 0 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn append(&mut self, entry: &InternalEntry) -> Result<()> {
        let payload_len = entry.encoded_len();
        let mut record = Vec::with_capacity(RECORD_HEADER_LEN + payload_len);
        record.extend_from_slice(&(payload_len as u32).to_le_bytes());
        record.extend_from_slice(&[0; 4]);
        entry.encode_into(&mut record);
        let crc = crc32fast::hash(&record[RECORD_HEADER_LEN..]);
        record[4..8].copy_from_slice(&crc.to_le_bytes());
        self.file.write_all(&record).at_path(&self.path)?;
        self.bytes_written += record.len() as u64;
        match self.sync {
            SyncPolicy::EveryWrite => self.sync()?,
            SyncPolicy::EveryMillis(ms) => {
                if self.last_sync.elapsed().as_millis() >= u128::from(ms) {
                    self.sync()?;
                }
            }
            SyncPolicy::Os => {}
        }
        Ok(())
    }

    pub fn sync(&mut self) -> Result<()> {
        self.file.sync_data().at_path(&self.path)?;
        self.last_sync = Instant::now();
        Ok(())
    }
}

pub struct WalReplay {
    pub entries: Vec<InternalEntry>,
    /// True when the segment ended mid-record or failed a checksum;
    /// everything before that point is still good.
    pub truncated: bool,
    pub valid_bytes: u64,
}

/// Reads back every intact record, stopping at the first torn or
/// corrupt one.
pub fn replay(path: impl AsRef<Path>) -> Result<WalReplay> {
    let path = path.as_ref();
    let data = std::fs::read(path).at_path(path)?;
    let mut entries = Vec::new();
    let mut pos = 0usize;
    let mut truncated = false;
    while pos < data.len() {
        let rest = &data[pos..];
        if rest.len() < RECORD_HEADER_LEN {
            truncated = true;
            break;
        }
        let len = u32::from_le_bytes(rest[..4].try_into().unwrap());
        let crc = u32::from_le_bytes(rest[4..8].try_into().unwrap());
        if len > MAX_RECORD_LEN || rest.len() - RECORD_HEADER_LEN < len as usize {
            truncated = true;
            break;
        }
        let payload = &rest[RECORD_HEADER_LEN..RECORD_HEADER_LEN + len as usize];
        if crc32fast::hash(payload) != crc {
            truncated = true;
            break;
        }
        match InternalEntry::decode_from(payload) {
            Ok((entry, consumed)) if consumed == payload.len() => entries.push(entry),
            _ => {
                truncated = true;
                break;
            }
        }
        pos += RECORD_HEADER_LEN + len as usize;
    }
    Ok(WalReplay { entries, truncated, valid_bytes: pos as u64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::EntryKind;

    fn sample_entries() -> Vec<InternalEntry> {
        vec![
            InternalEntry::put(b"alpha".to_vec(), 1, b"one".to_vec()),
            InternalEntry::tombstone(b"beta".to_vec(), 2),
            InternalEntry::put(b"gamma".to_vec(), 3, vec![0u8; 300]),
            InternalEntry::put(b"".to_vec(), 4, b"".to_vec()),
        ]
    }

    fn write_segment(dir: &Path, entries: &[InternalEntry]) -> PathBuf {
        let path = dir.join(segment_file_name(1));
        let mut wal = Wal::create(&path, SyncPolicy::EveryWrite).unwrap();
        for e in entries {
            wal.append(e).unwrap();
        }
        path
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = sample_entries();
        let path = write_segment(dir.path(), &entries);
        let replayed = replay(&path).unwrap();
        assert!(!replayed.truncated);
        assert_eq!(replayed.entries, entries);
        assert_eq!(replayed.valid_bytes, std::fs::metadata(&path).unwrap().len());
    }

    #[test]
    fn create_refuses_existing_segment() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_segment(dir.path(), &sample_entries());
        assert!(Wal::create(&path, SyncPolicy::Os).is_err());
    }

    #[test]
    fn empty_segment_replays_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(segment_file_name(2));
        Wal::create(&path, SyncPolicy::Os).unwrap();
        let replayed = replay(&path).unwrap();
        assert!(replayed.entries.is_empty());
        assert!(!replayed.truncated);
    }

    #[test]
    fn missing_segment_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(replay(dir.path().join("nope.wal")).is_err());
    }

    #[test]
    fn truncation_at_every_offset_keeps_a_record_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let entries = sample_entries();
        let path = write_segment(dir.path(), &entries);
        let full = std::fs::read(&path).unwrap();

        // Record boundaries for computing the expected prefix length.
        let mut boundaries = vec![0usize];
        for e in &entries {
            boundaries.push(boundaries.last().unwrap() + RECORD_HEADER_LEN + e.encoded_len());
        }
        assert_eq!(*boundaries.last().unwrap(), full.len());

        for cut in 0..=full.len() {
            let trimmed = dir.path().join("cut.wal");
            std::fs::write(&trimmed, &full[..cut]).unwrap();
            let replayed = replay(&trimmed).unwrap();
            let expect = boundaries.iter().filter(|b| **b <= cut).count() - 1;
            assert_eq!(replayed.entries.len(), expect, "cut at {cut}");
            assert_eq!(replayed.entries[..], entries[..expect]);
            assert_eq!(replayed.truncated, cut != boundaries[expect]);
            assert_eq!(replayed.valid_bytes as usize, boundaries[expect]);
        }
    }

    #[test]
    fn bit_flip_stops_replay_at_the_flip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = sample_entries();
        let path = write_segment(dir.path(), &entries);
        let full = std::fs::read(&path).unwrap();
        let second_record_payload = RECORD_HEADER_LEN
            + entries[0].encoded_len()
            + RECORD_HEADER_LEN
            + 3;
        let mut corrupt = full.clone();
        corrupt[second_record_payload] ^= 0x40;
        std::fs::write(&path, &corrupt).unwrap();
        let replayed = replay(&path).unwrap();
        assert_eq!(replayed.entries.len(), 1);
        assert_eq!(replayed.entries[0], entries[0]);
        assert!(replayed.truncated);
    }

    #[test]
    fn tombstones_round_trip_with_kind() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_segment(dir.path(), &sample_entries());
        let replayed = replay(&path).unwrap();
        assert_eq!(replayed.entries[1].key.kind, EntryKind::Tombstone);
        assert!(replayed.entries[1].value.is_empty());
    }

    #[test]
    fn periodic_sync_policy_appends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(segment_file_name(3));
        let mut wal = Wal::create(&path, SyncPolicy::EveryMillis(0)).unwrap();
        for e in sample_entries() {
            wal.append(&e).unwrap();
        }
        drop(wal);
        assert_eq!(replay(&path).unwrap().entries.len(), 4);
    }
}
