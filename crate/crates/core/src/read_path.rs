//! Point lookups and range scans with snapshot isolation.
//!
//! Every read works against a [`ReadView`]: the pair of memtables, one
//! immutable version of the level structure, and a sequence horizon.
//! The view holds reference-counted handles, so compactions publishing
//! newer versions never disturb a read in flight.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::{Arc, Mutex};

use crate::error::Result;
use crate::memtable::{Memtable, MemtableIter};
use crate::sstable::RunIter;
use crate::stats::{ReadSource, StatsRegistry};
use crate::types::{EntryKind, InternalKey, Lookup};
use crate::version::VersionState;

/// Cost accounting for a single get or scan.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReadStats {
    pub memtable_probes: u64,
    pub pinned_probes: u64,
    pub disk_level_probes: u64,
    pub disk_block_reads: u64,
    pub filter_checks: u64,
    pub filter_negatives: u64,
}

/// A consistent view of the store at one sequence horizon.
#[derive(Clone)]
pub struct ReadView {
    pub(crate) mem: Arc<Memtable>,
    pub(crate) imm: Option<Arc<Memtable>>,
    pub(crate) version: Arc<VersionState>,
    pub(crate) at_seq: u64,
    pub(crate) stats: Arc<StatsRegistry>,
}

impl ReadView {
    pub fn new(
        mem: Arc<Memtable>,
        imm: Option<Arc<Memtable>>,
        version: Arc<VersionState>,
        at_seq: u64,
        stats: Arc<StatsRegistry>,
    ) -> ReadView {
        ReadView { mem, imm, version, at_seq, stats }
    }

    pub fn at_seq(&self) -> u64 {
        self.at_seq
    }

    pub fn version(&self) -> &Arc<VersionState> {
        &self.version
    }

    /// Probes sources in recency order and stops at the first version
    /// of `key`: active memtable, immutable memtable, level-1 runs
    /// newest first, then levels 2..L.
    pub fn get(&self, key: &[u8]) -> Result<(Option<Vec<u8>>, ReadStats)> {
        let mut rs = ReadStats::default();
        let settle = |lookup: Lookup, rs: &mut ReadStats, source: ReadSource| {
            self.stats.record_read_source(source);
            self.stats.record_point_probes(rs.disk_block_reads);
            match lookup {
                Lookup::Value(v) => Some(v),
                _ => None,
            }
        };

        rs.memtable_probes += 1;
        match self.mem.get(key, self.at_seq) {
            Lookup::Miss => {}
            hit => return Ok((settle(hit, &mut rs, ReadSource::Memtable), rs)),
        }
        if let Some(imm) = &self.imm {
            rs.memtable_probes += 1;
            match imm.get(key, self.at_seq) {
                Lookup::Miss => {}
                hit => return Ok((settle(hit, &mut rs, ReadSource::Memtable), rs)),
            }
        }

        for run in &self.version.levels[0] {
            rs.pinned_probes += 1;
            let (lookup, outcome) = run.point_probe(key, self.at_seq)?;
            rs.disk_block_reads += outcome.disk_reads;
            if !matches!(lookup, Lookup::Miss) {
                return Ok((settle(lookup, &mut rs, ReadSource::PinnedLevelOne), rs));
            }
        }

        for level in self.version.levels.iter().skip(1) {
            for run in level {
                rs.disk_level_probes += 1;
                let (lookup, outcome) = run.point_probe(key, self.at_seq)?;
                rs.disk_block_reads += outcome.disk_reads;
                let hit = !matches!(lookup, Lookup::Miss);
                if outcome.filter_checked {
                    rs.filter_checks += 1;
                    rs.filter_negatives += u64::from(!outcome.filter_passed);
                    self.stats.record_filter_check(outcome.filter_passed, hit);
                }
                if hit {
                    return Ok((settle(lookup, &mut rs, ReadSource::DiskLevel), rs));
                }
            }
        }

        self.stats.record_point_probes(rs.disk_block_reads);
        Ok((None, rs))
    }

    /// Opens a merged iterator positioned at the first visible user key
    /// ≥ `start`.
    pub fn iter_from(&self, start: &[u8]) -> Result<StoreIter> {
        let mut children: Vec<Box<dyn InternalIterator>> = Vec::new();
        children.push(Box::new(MemSource { it: self.mem.iter() }));
        if let Some(imm) = &self.imm {
            children.push(Box::new(MemSource { it: imm.iter() }));
        }
        for level in &self.version.levels {
            for run in level {
                children.push(Box::new(DiskSource { it: run.iter() }));
            }
        }
        let mut iter = StoreIter {
            merged: MergingIterator::new(children),
            view: self.clone(),
            key: Vec::new(),
            value: Vec::new(),
            exhausted: false,
            reported_reads: 0,
        };
        iter.seek(start)?;
        Ok(iter)
    }
}

/// Uniform cursor over one source of internal entries.
pub(crate) trait InternalIterator {
    fn seek(&mut self, target: &InternalKey) -> Result<()>;
    fn valid(&self) -> bool;
    fn key(&self) -> &InternalKey;
    fn value(&self) -> &[u8];
    fn next(&mut self) -> Result<()>;
    /// Disk blocks fetched so far; memory-backed sources stay 0.
    fn disk_reads(&self) -> u64 {
        0
    }
}

struct MemSource {
    it: MemtableIter,
}

impl InternalIterator for MemSource {
    fn seek(&mut self, target: &InternalKey) -> Result<()> {
        self.it.seek(target);
        Ok(())
    }

    fn valid(&self) -> bool {
        self.it.valid()
    }

    fn key(&self) -> &InternalKey {
        self.it.key()
    }

    fn value(&self) -> &[u8] {
        self.it.value()
    }

    fn next(&mut self) -> Result<()> {
        self.it.next();
        Ok(())
    }
}

struct DiskSource {
    it: RunIter,
}

impl InternalIterator for DiskSource {
    fn seek(&mut self, target: &InternalKey) -> Result<()> {
        self.it.seek(target)
    }

    fn valid(&self) -> bool {
        self.it.valid()
    }

    fn key(&self) -> &InternalKey {
        self.it.key()
    }

    fn value(&self) -> &[u8] {
        self.it.value()
    }

    fn next(&mut self) -> Result<()> {
        self.it.next()
    }

    fn disk_reads(&self) -> u64 {
        self.it.disk_read_count()
    }
}

/// Heap-merge of child cursors into one stream in internal order.
pub(crate) struct MergingIterator {
    children: Vec<Box<dyn InternalIterator>>,
    heap: BinaryHeap<Reverse<(InternalKey, usize)>>,
    current: Option<usize>,
}

impl MergingIterator {
    fn new(children: Vec<Box<dyn InternalIterator>>) -> MergingIterator {
        MergingIterator { children, heap: BinaryHeap::new(), current: None }
    }

    fn seek(&mut self, target: &InternalKey) -> Result<()> {
        self.heap.clear();
        for (idx, child) in self.children.iter_mut().enumerate() {
            child.seek(target)?;
            if child.valid() {
                self.heap.push(Reverse((child.key().clone(), idx)));
            }
        }
        self.current = self.heap.pop().map(|Reverse((_, idx))| idx);
        Ok(())
    }

    fn valid(&self) -> bool {
        self.current.is_some()
    }

    fn key(&self) -> &InternalKey {
        self.children[self.current.unwrap()].key()
    }

    fn value(&self) -> &[u8] {
        self.children[self.current.unwrap()].value()
    }

    fn next(&mut self) -> Result<()> {
        let idx = self.current.expect("next on exhausted iterator");
        let child = &mut self.children[idx];
        child.next()?;
        if child.valid() {
            self.heap.push(Reverse((child.key().clone(), idx)));
        }
        self.current = self.heap.pop().map(|Reverse((_, i))| i);
        Ok(())
    }

    fn disk_reads(&self) -> u64 {
        self.children.iter().map(|c| c.disk_reads()).sum()
    }
}

/// User-facing scan cursor: one entry per visible user key, tombstones
/// and shadowed versions suppressed.
pub struct StoreIter {
    merged: MergingIterator,
    view: ReadView,
    key: Vec<u8>,
    value: Vec<u8>,
    exhausted: bool,
    reported_reads: u64,
}

impl StoreIter {
    pub fn seek(&mut self, start: &[u8]) -> Result<()> {
        self.exhausted = false;
        self.merged.seek(&InternalKey::lookup(start.to_vec(), u64::MAX))?;
        self.settle(None)
    }

    /// Advances past the current user key to the next visible one.
    pub fn next(&mut self) -> Result<()> {
        assert!(self.valid(), "next on exhausted iterator");
        let skip = std::mem::take(&mut self.key);
        self.settle(Some(skip))
    }

    /// Walks internal entries until one is visible at the horizon:
    /// newest version with seq ≤ at_seq of a key not equal to `skip`,
    /// whose kind is a put.
    fn settle(&mut self, mut skip: Option<Vec<u8>>) -> Result<()> {
        loop {
            if !self.merged.valid() {
                self.exhausted = true;
                self.flush_read_count();
                return Ok(());
            }
            let k = self.merged.key();
            if skip.as_deref() == Some(k.user_key.as_slice()) {
                self.merged.next()?;
                continue;
            }
            if k.seq > self.view.at_seq {
                self.merged.next()?;
                continue;
            }
            // Newest visible version of this key decides.
            match k.kind {
                EntryKind::Put => {
                    self.key = k.user_key.clone();
                    self.value = self.merged.value().to_vec();
                    self.flush_read_count();
                    return Ok(());
                }
                EntryKind::Tombstone => {
                    skip = Some(k.user_key.clone());
                    self.merged.next()?;
                }
            }
        }
    }

    fn flush_read_count(&mut self) {
        let total = self.merged.disk_reads();
        self.view.stats.record_range_probes(total - self.reported_reads);
        self.reported_reads = total;
    }

    pub fn valid(&self) -> bool {
        !self.exhausted
    }

    pub fn key(&self) -> &[u8] {
        debug_assert!(self.valid());
        &self.key
    }

    pub fn value(&self) -> &[u8] {
        debug_assert!(self.valid());
        &self.value
    }

    /// Total disk block reads this iterator has performed.
    pub fn disk_block_reads(&self) -> u64 {
        self.merged.disk_reads()
    }
}

/// Tracks live snapshot sequence numbers for compaction GC.
#[derive(Default)]
pub(crate) struct SnapshotRegistry {
    seqs: Mutex<BTreeMap<u64, usize>>,
}

impl SnapshotRegistry {
    pub fn register(&self, seq: u64) {
        *self.seqs.lock().unwrap().entry(seq).or_insert(0) += 1;
    }

    pub fn deregister(&self, seq: u64) {
        let mut seqs = self.seqs.lock().unwrap();
        match seqs.get_mut(&seq) {
            Some(n) if *n > 1 => *n -= 1,
            Some(_) => {
                seqs.remove(&seq);
            }
            None => debug_assert!(false, "deregistering unknown snapshot {seq}"),
        }
    }

    pub fn live(&self) -> Vec<u64> {
        self.seqs.lock().unwrap().keys().copied().collect()
    }
}

/// A pinned point in time: reads through it are repeatable for its
/// whole lifetime, regardless of concurrent writes and compactions.
pub struct Snapshot {
    view: ReadView,
    registry: Arc<SnapshotRegistry>,
}

impl Snapshot {
    pub(crate) fn new(view: ReadView, registry: Arc<SnapshotRegistry>) -> Snapshot {
        registry.register(view.at_seq);
        Snapshot { view, registry }
    }

    pub fn seq(&self) -> u64 {
        self.view.at_seq
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        Ok(self.view.get(key)?.0)
    }

    pub fn iter_from(&self, start: &[u8]) -> Result<StoreIter> {
        self.view.iter_from(start)
    }
}

impl Drop for Snapshot {
    fn drop(&mut self) {
        self.registry.deregister(self.view.at_seq);
    }
}
