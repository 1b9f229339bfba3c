//! Immutable run reader: pread-based block access for on-disk runs, or
//! slice access for runs whose file image is pinned in memory.

use std::fs::File;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, IoResultExt, Result};
use crate::filters::BloomFilter;
use crate::types::{EntryKind, InternalEntry, InternalKey, Lookup};

use super::{decode_index, run_file_name, Footer, IndexEntry, FOOTER_LEN, RunHandle};

fn mem_slice<'a>(image: &'a [u8], offset: u64, len: usize, what: &str) -> Result<&'a [u8]> {
    usize::try_from(offset)
        .ok()
        .and_then(|start| image.get(start..start.checked_add(len)?))
        .ok_or_else(|| Error::corruption(what, "block offset past end of file image"))
}

pub enum RunSource {
    File(File),
    Mem(Arc<Vec<u8>>),
}

pub struct Run {
    handle: RunHandle,
    path: PathBuf,
    index: Vec<IndexEntry>,
    filter: Option<BloomFilter>,
    source: RunSource,
    obsolete: AtomicBool,
    disk_reads: AtomicU64,
}

/// What a point probe cost and what the filter said.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProbeOutcome {
    pub disk_reads: u64,
    pub filter_checked: bool,
    pub filter_passed: bool,
}

impl Run {
    /// Opens against the on-disk file; blocks are read on demand.
    pub fn open(dir: &Path, handle: RunHandle) -> Result<Arc<Run>> {
        let path = dir.join(run_file_name(handle.file_id));
        let file = File::open(&path).at_path(&path)?;
        let meta_len = file.metadata().at_path(&path)?.len();
        let what = format!("run {:06}", handle.file_id);
        if meta_len != handle.file_bytes {
            return Err(Error::corruption(
                what,
                format!("file is {meta_len} bytes, manifest says {}", handle.file_bytes),
            ));
        }
        let read_at = |offset: u64, len: usize| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; len];
            file.read_exact_at(&mut buf, offset).at_path(&path)?;
            Ok(buf)
        };
        let (index, filter) = Self::load_meta(&what, handle.file_bytes, &read_at)?;
        Ok(Arc::new(Run {
            handle,
            path,
            index,
            filter,
            source: RunSource::File(file),
            obsolete: AtomicBool::new(false),
            disk_reads: AtomicU64::new(0),
        }))
    }

    /// Reads the whole file up front and serves every block from the
    /// in-memory image; probes cost no disk reads.
    pub fn open_pinned(dir: &Path, handle: RunHandle) -> Result<Arc<Run>> {
        let path = dir.join(run_file_name(handle.file_id));
        let image = std::fs::read(&path).at_path(&path)?;
        let what = format!("run {:06}", handle.file_id);
        if image.len() as u64 != handle.file_bytes {
            return Err(Error::corruption(
                what,
                format!("file is {} bytes, manifest says {}", image.len(), handle.file_bytes),
            ));
        }
        let image = Arc::new(image);
        let read_at = {
            let image = Arc::clone(&image);
            let what = what.clone();
            move |offset: u64, len: usize| -> Result<Vec<u8>> {
                Ok(mem_slice(&image, offset, len, &what)?.to_vec())
            }
        };
        let (index, filter) = Self::load_meta(&what, handle.file_bytes, &read_at)?;
        Ok(Arc::new(Run {
            handle,
            path,
            index,
            filter,
            source: RunSource::Mem(image),
            obsolete: AtomicBool::new(false),
            disk_reads: AtomicU64::new(0),
        }))
    }

    fn load_meta(
        what: &str,
        file_bytes: u64,
        read_at: &dyn Fn(u64, usize) -> Result<Vec<u8>>,
    ) -> Result<(Vec<IndexEntry>, Option<BloomFilter>)> {
        if file_bytes < FOOTER_LEN as u64 {
            return Err(Error::corruption(what, "shorter than the footer"));
        }
        let footer_bytes = read_at(file_bytes - FOOTER_LEN as u64, FOOTER_LEN)?;
        let footer = Footer::decode(footer_bytes.as_slice().try_into().unwrap(), what)?;
        let limit = file_bytes - FOOTER_LEN as u64;
        let in_bounds = |offset: u64, len: u32| {
            offset.checked_add(u64::from(len)).is_some_and(|end| end <= limit)
        };
        if !in_bounds(footer.index_offset, footer.index_len)
            || !in_bounds(footer.filter_offset, footer.filter_len)
        {
            return Err(Error::corruption(what, "footer offsets out of bounds"));
        }
        let index = decode_index(&read_at(footer.index_offset, footer.index_len as usize)?, what)?;
        if index.is_empty() {
            return Err(Error::corruption(what, "empty block index"));
        }
        let filter = if footer.filter_len > 0 {
            Some(BloomFilter::decode(&read_at(
                footer.filter_offset,
                footer.filter_len as usize,
            )?)?)
        } else {
            None
        };
        Ok((index, filter))
    }

    pub fn handle(&self) -> &RunHandle {
        &self.handle
    }

    pub fn is_pinned(&self) -> bool {
        matches!(self.source, RunSource::Mem(_))
    }

    pub fn pinned_bytes(&self) -> u64 {
        match &self.source {
            RunSource::Mem(image) => image.len() as u64,
            RunSource::File(_) => 0,
        }
    }

    pub fn block_count(&self) -> usize {
        self.index.len()
    }

    /// Total disk block reads served by this run since open.
    pub fn disk_read_count(&self) -> u64 {
        self.disk_reads.load(Ordering::Relaxed)
    }

    pub fn mark_obsolete(&self) {
        self.obsolete.store(true, Ordering::Release);
    }

    fn what(&self) -> String {
        format!("run {:06}", self.handle.file_id)
    }

    /// Returns the parsed entries of block `idx` and whether fetching
    /// it touched the disk.
    fn load_block(&self, idx: usize) -> Result<(Vec<InternalEntry>, bool)> {
        let entry = &self.index[idx];
        let (raw, from_disk) = match &self.source {
            RunSource::File(file) => {
                let mut buf = vec![0u8; entry.len as usize];
                file.read_exact_at(&mut buf, entry.offset).at_path(&self.path)?;
                self.disk_reads.fetch_add(1, Ordering::Relaxed);
                (buf, true)
            }
            RunSource::Mem(image) => {
                (mem_slice(image, entry.offset, entry.len as usize, &self.what())?.to_vec(), false)
            }
        };
        Ok((self.parse_block(&raw)?, from_disk))
    }

    fn parse_block(&self, raw: &[u8]) -> Result<Vec<InternalEntry>> {
        let corrupt = |detail: String| Error::corruption(self.what(), detail);
        if raw.len() < super::BLOCK_OVERHEAD {
            return Err(corrupt("block shorter than its framing".into()));
        }
        let (body, crc_bytes) = raw.split_at(raw.len() - 4);
        let want = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        let got = crc32fast::hash(body);
        if want != got {
            return Err(corrupt(format!("block crc mismatch {got:#010x} != {want:#010x}")));
        }
        let count = u32::from_le_bytes(body[..4].try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(count);
        let mut pos = 4usize;
        for _ in 0..count {
            let (entry, used) = InternalEntry::decode_from(&body[pos..])
                .map_err(|e| corrupt(format!("entry decode: {e}")))?;
            pos += used;
            entries.push(entry);
        }
        if pos != body.len() {
            return Err(corrupt("block entry count does not cover the payload".into()));
        }
        Ok(entries)
    }

    /// Index of the unique block that could contain `user_key`.
    fn block_for(&self, user_key: &[u8]) -> Option<usize> {
        let idx = self.index.partition_point(|e| e.first_key.as_slice() <= user_key);
        idx.checked_sub(1)
    }

    pub fn point_probe(&self, user_key: &[u8], at_seq: u64) -> Result<(Lookup, ProbeOutcome)> {
        let mut outcome = ProbeOutcome::default();
        if !self.handle.key_range_contains(user_key) || self.handle.min_seq > at_seq {
            return Ok((Lookup::Miss, outcome));
        }
        if let Some(filter) = &self.filter {
            outcome.filter_checked = true;
            outcome.filter_passed = filter.may_contain(user_key);
            if !outcome.filter_passed {
                return Ok((Lookup::Miss, outcome));
            }
        }
        let Some(block_idx) = self.block_for(user_key) else {
            return Ok((Lookup::Miss, outcome));
        };
        let (entries, from_disk) = self.load_block(block_idx)?;
        outcome.disk_reads += u64::from(from_disk);
        let probe = InternalKey::lookup(user_key.to_vec(), at_seq);
        let at = entries.partition_point(|e| e.key < probe);
        let lookup = match entries.get(at) {
            Some(entry) if entry.key.user_key == user_key => match entry.key.kind {
                EntryKind::Put => Lookup::Value(entry.value.clone()),
                EntryKind::Tombstone => Lookup::Tombstone,
            },
            _ => Lookup::Miss,
        };
        Ok((lookup, outcome))
    }

    pub fn iter(self: &Arc<Self>) -> RunIter {
        RunIter {
            run: Arc::clone(self),
            entries: Vec::new(),
            block_idx: 0,
            entry_idx: 0,
            disk_reads: 0,
            positioned: false,
        }
    }
}

impl Drop for Run {
    fn drop(&mut self) {
        if self.obsolete.load(Ordering::Acquire) {
            let _ = std::fs::remove_file(&self.path);
        }
    }
}

pub struct RunIter {
    run: Arc<Run>,
    entries: Vec<InternalEntry>,
    block_idx: usize,
    entry_idx: usize,
    disk_reads: u64,
    positioned: bool,
}

impl RunIter {
    /// Positions at the first entry ≥ `target` in internal order.
    pub fn seek(&mut self, target: &InternalKey) -> Result<()> {
        self.positioned = true;
        self.entries.clear();
        self.entry_idx = 0;
        if target.user_key.as_slice() > self.run.handle.max_key.as_slice() {
            self.block_idx = self.run.index.len();
            return Ok(());
        }
        self.block_idx = self.run.block_for(&target.user_key).unwrap_or(0);
        self.fill_block()?;
        while !self.entries.is_empty() {
            let at = self.entries.partition_point(|e| e.key < *target);
            if at < self.entries.len() {
                self.entry_idx = at;
                return Ok(());
            }
            self.advance_block()?;
        }
        Ok(())
    }

    pub fn seek_to_first(&mut self) -> Result<()> {
        self.positioned = true;
        self.entries.clear();
        self.entry_idx = 0;
        self.block_idx = 0;
        self.fill_block()
    }

    fn fill_block(&mut self) -> Result<()> {
        if self.block_idx >= self.run.index.len() {
            self.entries.clear();
            return Ok(());
        }
        let (entries, from_disk) = self.run.load_block(self.block_idx)?;
        self.entries = entries;
        self.entry_idx = 0;
        self.disk_reads += u64::from(from_disk);
        Ok(())
    }

    fn advance_block(&mut self) -> Result<()> {
        self.block_idx += 1;
        self.fill_block()
    }

    pub fn next(&mut self) -> Result<()> {
        debug_assert!(self.positioned);
        if self.entries.is_empty() {
            return Ok(());
        }
        self.entry_idx += 1;
        if self.entry_idx >= self.entries.len() {
            self.advance_block()?;
        }
        Ok(())
    }

    pub fn valid(&self) -> bool {
        self.entry_idx < self.entries.len()
    }

    pub fn key(&self) -> &InternalKey {
        &self.entries[self.entry_idx].key
    }

    pub fn value(&self) -> &[u8] {
        &self.entries[self.entry_idx].value
    }

    /// Disk block reads this iterator has caused so far.
    pub fn disk_read_count(&self) -> u64 {
        self.disk_reads
    }
}
