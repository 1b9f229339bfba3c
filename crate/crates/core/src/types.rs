//! Internal entry model shared by the memtable, WAL, and sorted runs.
//!
//! Every user-visible mutation becomes an [`InternalEntry`]: the user key,
//! a monotonically increasing sequence number, a kind (put or tombstone),
//! and the value bytes (empty for tombstones). Entries order by user key
//! ascending, then sequence *descending*, so the newest version of a key
//! is encountered first during any ordered scan.

use std::cmp::Ordering;

use crate::error::{Error, Result};

pub const ENTRY_HEADER_LEN: usize = 8 + 1 + 4 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum EntryKind {
    Tombstone = 0,
    Put = 1,
}

impl EntryKind {
    pub fn from_u8(v: u8) -> Result<EntryKind> {
        match v {
            0 => Ok(EntryKind::Tombstone),
            1 => Ok(EntryKind::Put),
            other => Err(Error::corruption("entry", format!("bad entry kind {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InternalKey {
    pub user_key: Vec<u8>,
    pub seq: u64,
    pub kind: EntryKind,
}

impl InternalKey {
    pub fn new(user_key: impl Into<Vec<u8>>, seq: u64, kind: EntryKind) -> Self {
        InternalKey { user_key: user_key.into(), seq, kind }
    }

    /// Smallest internal key whose user key is `user_key` and whose
    /// sequence is at most `seq`; seeking to it lands on the newest
    /// version visible at `seq`.
    pub fn lookup(user_key: impl Into<Vec<u8>>, seq: u64) -> Self {
        InternalKey::new(user_key, seq, EntryKind::Tombstone)
    }
}

impl Ord for InternalKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.user_key
            .cmp(&other.user_key)
            .then_with(|| other.seq.cmp(&self.seq))
            .then_with(|| (self.kind as u8).cmp(&(other.kind as u8)))
    }
}

impl PartialOrd for InternalKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InternalEntry {
    pub key: InternalKey,
    pub value: Vec<u8>,
}

impl InternalEntry {
    pub fn put(user_key: impl Into<Vec<u8>>, seq: u64, value: impl Into<Vec<u8>>) -> Self {
        InternalEntry { key: InternalKey::new(user_key, seq, EntryKind::Put), value: value.into() }
    }

    pub fn tombstone(user_key: impl Into<Vec<u8>>, seq: u64) -> Self {
        InternalEntry { key: InternalKey::new(user_key, seq, EntryKind::Tombstone), value: Vec::new() }
    }

    /// Key plus value bytes, the unit level capacities are measured in.
    pub fn data_bytes(&self) -> u64 {
        (self.key.user_key.len() + self.value.len()) as u64
    }

    pub fn encoded_len(&self) -> usize {
        encoded_len(self.key.user_key.len(), self.value.len())
    }

    /// Wire layout, little-endian:
    /// `[u64 seq][u8 kind][u32 key_len][key][u32 val_len][val]`.
    pub fn encode_into(&self, dst: &mut Vec<u8>) {
        dst.extend_from_slice(&self.key.seq.to_le_bytes());
        dst.push(self.key.kind as u8);
        dst.extend_from_slice(&(self.key.user_key.len() as u32).to_le_bytes());
        dst.extend_from_slice(&self.key.user_key);
        dst.extend_from_slice(&(self.value.len() as u32).to_le_bytes());
        dst.extend_from_slice(&self.value);
    }

    /// Decodes one entry from the front of `src`, returning it and the
    /// number of bytes consumed.
    pub fn decode_from(src: &[u8]) -> Result<(InternalEntry, usize)> {
        let short = || Error::corruption("entry", "truncated entry");
        if src.len() < ENTRY_HEADER_LEN - 4 {
            return Err(short());
        }
        let seq = u64::from_le_bytes(src[0..8].try_into().unwrap());
        let kind = EntryKind::from_u8(src[8])?;
        let key_len = u32::from_le_bytes(src[9..13].try_into().unwrap()) as usize;
        let mut at = 13;
        if src.len() < at + key_len + 4 {
            return Err(short());
        }
        let user_key = src[at..at + key_len].to_vec();
        at += key_len;
        let val_len = u32::from_le_bytes(src[at..at + 4].try_into().unwrap()) as usize;
        at += 4;
        if src.len() < at + val_len {
            return Err(short());
        }
        let value = src[at..at + val_len].to_vec();
        at += val_len;
        Ok((InternalEntry { key: InternalKey { user_key, seq, kind }, value }, at))
    }
}

pub fn encoded_len(key_len: usize, val_len: usize) -> usize {
    ENTRY_HEADER_LEN + key_len + val_len
}

/// Outcome of probing one source for a user key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Lookup {
    Value(Vec<u8>),
    Tombstone,
    Miss,
}
