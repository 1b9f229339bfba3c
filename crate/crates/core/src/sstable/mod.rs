//! Sorted-run files: block-structured data, an in-memory block index
//! (fence pointers), an optional bloom filter, and a fixed footer.
//!
//! Layout, all little-endian:
//! ```text
//! [data block]*      each: [u32 entry_count][encoded entries][u32 crc32]
//! [filter block]     optional, filters-module encoding
//! [index block]      [u32 n] then n x [u32 key_len][first user key][u64 offset][u32 len]
//! [footer]           u64 index_offset, u32 index_len, u64 filter_offset,
//!                    u32 filter_len, 8 reserved bytes, u64 magic
//! ```
//! Data blocks hold whole user keys: every version of a key lives in
//! one block, so a point lookup reads at most one block. A block is
//! closed once its payload reaches the configured block size (minus
//! per-block overhead), which also makes flushed file sizes predictable
//! from memtable byte counts.

mod builder;
mod reader;

pub use builder::RunBuilder;
pub use reader::{ProbeOutcome, Run, RunIter, RunSource};

use crate::error::{Error, Result};

pub const MAGIC: u64 = 0x4155_5455_4D4E_4B56;
pub const FOOTER_LEN: usize = 40;
/// u32 entry count up front plus u32 crc32 at the back of each block.
pub const BLOCK_OVERHEAD: usize = 8;
/// Per index entry: u32 key_len + u64 offset + u32 len (plus the key).
pub const INDEX_ENTRY_FIXED_LEN: usize = 16;

pub fn run_file_name(file_id: u64) -> String {
    format!("{file_id:06}.sst")
}

/// Everything the tree needs to know about a run without opening it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunHandle {
    pub file_id: u64,
    pub level: u32,
    pub min_key: Vec<u8>,
    pub max_key: Vec<u8>,
    pub entry_count: u64,
    /// User key plus value bytes; the unit level capacities are
    /// expressed in.
    pub data_bytes: u64,
    pub file_bytes: u64,
    pub min_seq: u64,
    pub max_seq: u64,
    pub has_filter: bool,
}

impl RunHandle {
    pub fn key_range_contains(&self, user_key: &[u8]) -> bool {
        self.min_key.as_slice() <= user_key && user_key <= self.max_key.as_slice()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.file_id.to_le_bytes());
        out.extend_from_slice(&self.level.to_le_bytes());
        out.extend_from_slice(&(self.min_key.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.min_key);
        out.extend_from_slice(&(self.max_key.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.max_key);
        out.extend_from_slice(&self.entry_count.to_le_bytes());
        out.extend_from_slice(&self.data_bytes.to_le_bytes());
        out.extend_from_slice(&self.file_bytes.to_le_bytes());
        out.extend_from_slice(&self.min_seq.to_le_bytes());
        out.extend_from_slice(&self.max_seq.to_le_bytes());
        out.push(self.has_filter as u8);
    }

    pub fn decode_from(buf: &[u8]) -> Result<(Self, usize)> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let end = pos.checked_add(n).filter(|e| *e <= buf.len()).ok_or_else(|| {
                Error::corruption("run handle", "record shorter than its fields")
            })?;
            let slice = &buf[*pos..end];
            *pos = end;
            Ok(slice)
        };
        let file_id = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let level = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        let min_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let min_key = take(&mut pos, min_len)?.to_vec();
        let max_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let max_key = take(&mut pos, max_len)?.to_vec();
        let entry_count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let data_bytes = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let file_bytes = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let min_seq = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let max_seq = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let has_filter = match take(&mut pos, 1)?[0] {
            0 => false,
            1 => true,
            other => {
                return Err(Error::corruption("run handle", format!("bad filter flag {other}")))
            }
        };
        if min_key > max_key {
            return Err(Error::corruption("run handle", "min key above max key"));
        }
        Ok((
            Self {
                file_id,
                level,
                min_key,
                max_key,
                entry_count,
                data_bytes,
                file_bytes,
                min_seq,
                max_seq,
                has_filter,
            },
            pos,
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct IndexEntry {
    pub first_key: Vec<u8>,
    pub offset: u64,
    pub len: u32,
}

pub(crate) fn encode_index(entries: &[IndexEntry], out: &mut Vec<u8>) {
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.first_key.len() as u32).to_le_bytes());
        out.extend_from_slice(&e.first_key);
        out.extend_from_slice(&e.offset.to_le_bytes());
        out.extend_from_slice(&e.len.to_le_bytes());
    }
}

pub(crate) fn decode_index(buf: &[u8], what: &str) -> Result<Vec<IndexEntry>> {
    let corrupt = |detail: &str| Error::corruption(what, format!("index block: {detail}"));
    if buf.len() < 4 {
        return Err(corrupt("missing entry count"));
    }
    let n = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
    let mut pos = 4usize;
    let mut entries: Vec<IndexEntry> = Vec::with_capacity(n);
    for _ in 0..n {
        if buf.len() - pos < 4 {
            return Err(corrupt("truncated key length"));
        }
        let key_len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if buf.len() - pos < key_len + 12 {
            return Err(corrupt("truncated entry"));
        }
        let first_key = buf[pos..pos + key_len].to_vec();
        pos += key_len;
        let offset = u64::from_le_bytes(buf[pos..pos + 8].try_into().unwrap());
        pos += 8;
        let len = u32::from_le_bytes(buf[pos..pos + 4].try_into().unwrap());
        pos += 4;
        if let Some(prev) = entries.last() {
            if prev.first_key >= first_key {
                return Err(corrupt("first keys not strictly increasing"));
            }
            if prev.offset + u64::from(prev.len) != offset {
                return Err(corrupt("blocks do not tile the data region"));
            }
        }
        entries.push(IndexEntry { first_key, offset, len });
    }
    if pos != buf.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(entries)
}

pub(crate) struct Footer {
    pub index_offset: u64,
    pub index_len: u32,
    pub filter_offset: u64,
    pub filter_len: u32,
}

impl Footer {
    pub fn encode(&self) -> [u8; FOOTER_LEN] {
        let mut out = [0u8; FOOTER_LEN];
        out[0..8].copy_from_slice(&self.index_offset.to_le_bytes());
        out[8..12].copy_from_slice(&self.index_len.to_le_bytes());
        out[12..20].copy_from_slice(&self.filter_offset.to_le_bytes());
        out[20..24].copy_from_slice(&self.filter_len.to_le_bytes());
        out[32..40].copy_from_slice(&MAGIC.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8; FOOTER_LEN], what: &str) -> Result<Self> {
        let magic = u64::from_le_bytes(buf[32..40].try_into().unwrap());
        if magic != MAGIC {
            return Err(Error::corruption(what, format!("bad footer magic {magic:#018x}")));
        }
        Ok(Self {
            index_offset: u64::from_le_bytes(buf[0..8].try_into().unwrap()),
            index_len: u32::from_le_bytes(buf[8..12].try_into().unwrap()),
            filter_offset: u64::from_le_bytes(buf[12..20].try_into().unwrap()),
            filter_len: u32::from_le_bytes(buf[20..24].try_into().unwrap()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handle() -> RunHandle {
        RunHandle {
            file_id: 42,
            level: 3,
            min_key: b"aardvark".to_vec(),
            max_key: b"zebra".to_vec(),
            entry_count: 1000,
            data_bytes: 116_000,
            file_bytes: 120_444,
            min_seq: 17,
            max_seq: 1016,
            has_filter: true,
        }
    }

    #[test]
    fn handle_round_trip() {
        let h = handle();
        let mut buf = Vec::new();
        h.encode_into(&mut buf);
        let (decoded, used) = RunHandle::decode_from(&buf).unwrap();
        assert_eq!(decoded, h);
        assert_eq!(used, buf.len());
    }

    #[test]
    fn handle_rejects_truncation_at_every_cut() {
        let mut buf = Vec::new();
        handle().encode_into(&mut buf);
        for cut in 0..buf.len() {
            assert!(RunHandle::decode_from(&buf[..cut]).is_err(), "cut {cut}");
        }
    }

    #[test]
    fn handle_rejects_inverted_range() {
        let mut h = handle();
        h.min_key = b"zz".to_vec();
        let mut buf = Vec::new();
        h.encode_into(&mut buf);
        assert!(RunHandle::decode_from(&buf).is_err());
    }

    #[test]
    fn key_range_bounds_inclusive() {
        let h = handle();
        assert!(h.key_range_contains(b"aardvark"));
        assert!(h.key_range_contains(b"zebra"));
        assert!(h.key_range_contains(b"mongoose"));
        assert!(!h.key_range_contains(b"aa"));
        assert!(!h.key_range_contains(b"zz"));
    }

    #[test]
    fn index_round_trip_and_validation() {
        let entries = vec![
            IndexEntry { first_key: b"a".to_vec(), offset: 0, len: 100 },
            IndexEntry { first_key: b"m".to_vec(), offset: 100, len: 50 },
            IndexEntry { first_key: b"t".to_vec(), offset: 150, len: 75 },
        ];
        let mut buf = Vec::new();
        encode_index(&entries, &mut buf);
        assert_eq!(decode_index(&buf, "test").unwrap(), entries);

        let gap = vec![
            IndexEntry { first_key: b"a".to_vec(), offset: 0, len: 100 },
            IndexEntry { first_key: b"m".to_vec(), offset: 101, len: 50 },
        ];
        let mut buf = Vec::new();
        encode_index(&gap, &mut buf);
        assert!(decode_index(&buf, "test").is_err());

        let misordered = vec![
            IndexEntry { first_key: b"m".to_vec(), offset: 0, len: 100 },
            IndexEntry { first_key: b"a".to_vec(), offset: 100, len: 50 },
        ];
        let mut buf = Vec::new();
        encode_index(&misordered, &mut buf);
        assert!(decode_index(&buf, "test").is_err());
    }

    #[test]
    fn footer_fixed_width_round_trip() {
        let f = Footer { index_offset: 123_456, index_len: 789, filter_offset: 99, filter_len: 0 };
        let encoded = f.encode();
        assert_eq!(encoded.len(), FOOTER_LEN);
        assert_eq!(&encoded[24..32], &[0u8; 8]);
        let decoded = Footer::decode(&encoded, "test").unwrap();
        assert_eq!(decoded.index_offset, 123_456);
        assert_eq!(decoded.index_len, 789);
        assert_eq!(decoded.filter_offset, 99);
        assert_eq!(decoded.filter_len, 0);
    }

    #[test]
    fn footer_rejects_bad_magic() {
        let f = Footer { index_offset: 1, index_len: 2, filter_offset: 3, filter_len: 4 };
        let mut encoded = f.encode();
        encoded[39] ^= 1;
        assert!(Footer::decode(&encoded, "test").is_err());
    }
}
