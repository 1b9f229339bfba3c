//! In-memory write buffer: a lock-free skip list keyed by internal
//! entry order, with enough byte accounting to predict the size of the
//! file a flush would produce.

use std::ops::Bound;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_skiplist::SkipMap;

use crate::sstable::{BLOCK_OVERHEAD, FOOTER_LEN, INDEX_ENTRY_FIXED_LEN};
use crate::types::{EntryKind, InternalEntry, InternalKey, Lookup};

pub struct Memtable {
    map: SkipMap<InternalKey, Vec<u8>>,
    encoded_bytes: AtomicU64,
    data_bytes: AtomicU64,
    entry_count: AtomicU64,
    max_key_len: AtomicU64,
    min_seq: AtomicU64,
    max_seq: AtomicU64,
    sealed: AtomicBool,
}

impl Default for Memtable {
    fn default() -> Self {
        Self {
            map: SkipMap::new(),
            encoded_bytes: AtomicU64::new(0),
            data_bytes: AtomicU64::new(0),
            entry_count: AtomicU64::new(0),
            max_key_len: AtomicU64::new(0),
            min_seq: AtomicU64::new(u64::MAX),
            max_seq: AtomicU64::new(0),
            sealed: AtomicBool::new(false),
        }
    }
}

impl Memtable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, entry: InternalEntry) {
        debug_assert!(!self.is_sealed());
        let encoded = entry.encoded_len() as u64;
        let data = entry.data_bytes();
        let key_len = entry.key.user_key.len() as u64;
        let seq = entry.key.seq;
        self.map.insert(entry.key, entry.value);
        self.encoded_bytes.fetch_add(encoded, Ordering::Relaxed);
        self.data_bytes.fetch_add(data, Ordering::Relaxed);
        self.entry_count.fetch_add(1, Ordering::Relaxed);
        self.max_key_len.fetch_max(key_len, Ordering::Relaxed);
        self.min_seq.fetch_min(seq, Ordering::Relaxed);
        self.max_seq.fetch_max(seq, Ordering::Relaxed);
    }

    /// Newest version of `key` visible at `at_seq`.
    pub fn get(&self, key: &[u8], at_seq: u64) -> Lookup {
        let probe = InternalKey::lookup(key.to_vec(), at_seq);
        if let Some(entry) = self.map.lower_bound(Bound::Included(&probe)) {
            if entry.key().user_key == key {
                return match entry.key().kind {
                    EntryKind::Put => Lookup::Value(entry.value().clone()),
                    EntryKind::Tombstone => Lookup::Tombstone,
                };
            }
        }
        Lookup::Miss
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn entry_count(&self) -> u64 {
        self.entry_count.load(Ordering::Relaxed)
    }

    pub fn encoded_bytes(&self) -> u64 {
        self.encoded_bytes.load(Ordering::Relaxed)
    }

    pub fn data_bytes(&self) -> u64 {
        self.data_bytes.load(Ordering::Relaxed)
    }

    pub fn seq_range(&self) -> Option<(u64, u64)> {
        if self.is_empty() {
            None
        } else {
            Some((self.min_seq.load(Ordering::Relaxed), self.max_seq.load(Ordering::Relaxed)))
        }
    }

    pub fn seal(&self) {
        self.sealed.store(true, Ordering::Release);
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed.load(Ordering::Acquire)
    }

    /// Upper bound on the file size a flush of the current contents
    /// would produce. The run builder closes a data block once its
    /// payload reaches `block_bytes` minus the block trailer, so every
    /// block but the last carries at least that much payload; level-1
    /// files carry no filter block.
    pub fn projected_file_bytes(&self, block_bytes: usize) -> u64 {
        let payload = self.encoded_bytes();
        if payload == 0 {
            return 0;
        }
        let target = (block_bytes as u64).saturating_sub(BLOCK_OVERHEAD as u64).max(1);
        let max_blocks = payload / target + 1;
        let per_block =
            BLOCK_OVERHEAD as u64 + INDEX_ENTRY_FIXED_LEN as u64 + self.max_key_len.load(Ordering::Relaxed);
        payload + max_blocks * per_block + 4 + FOOTER_LEN as u64
    }

    pub fn iter(self: &Arc<Self>) -> MemtableIter {
        MemtableIter { table: Arc::clone(self), current: None, exhausted: false }
    }
}

/// Stateless-cursor iterator: holds its position by key and re-seeks
/// the skip list for each step, so it never borrows from the table and
/// stays valid across concurrent inserts (which it may or may not
/// observe, matching snapshot-free memtable semantics; readers that
/// need stability iterate sealed memtables).
pub struct MemtableIter {
    table: Arc<Memtable>,
    current: Option<(InternalKey, Vec<u8>)>,
    exhausted: bool,
}

impl MemtableIter {
    pub fn seek_to_first(&mut self) {
        self.load(self.table.map.front().map(|e| (e.key().clone(), e.value().clone())));
    }

    pub fn seek(&mut self, target: &InternalKey) {
        let hit = self
            .table
            .map
            .lower_bound(Bound::Included(target))
            .map(|e| (e.key().clone(), e.value().clone()));
        self.load(hit);
    }

    pub fn next(&mut self) {
        let Some((key, _)) = &self.current else {
            return;
        };
        let hit = self
            .table
            .map
            .lower_bound(Bound::Excluded(key))
            .map(|e| (e.key().clone(), e.value().clone()));
        self.load(hit);
    }

    fn load(&mut self, hit: Option<(InternalKey, Vec<u8>)>) {
        self.exhausted = hit.is_none();
        self.current = hit;
    }

    pub fn valid(&self) -> bool {
        self.current.is_some()
    }

    pub fn key(&self) -> &InternalKey {
        &self.current.as_ref().expect("iterator not positioned").0
    }

    pub fn value(&self) -> &[u8] {
        &self.current.as_ref().expect("iterator not positioned").1
    }
}
