//! Streaming run writer.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, IoResultExt, Result};
use crate::filters::{hash_key, BloomFilter};
use crate::types::{InternalEntry, InternalKey};

use super::{encode_index, run_file_name, Footer, IndexEntry, BLOCK_OVERHEAD, RunHandle};

pub struct RunBuilder {
    file: BufWriter<File>,
    path: PathBuf,
    file_id: u64,
    level: u32,
    block_payload_target: usize,
    filter_bits_per_entry: Option<f64>,

    block_buf: Vec<u8>,
    block_entries: u32,
    block_first_key: Vec<u8>,
    index: Vec<IndexEntry>,
    offset: u64,

    last_key: Option<InternalKey>,
    min_key: Vec<u8>,
    entry_count: u64,
    data_bytes: u64,
    min_seq: u64,
    max_seq: u64,
    filter_hashes: Vec<u128>,
    finished: bool,
}

impl RunBuilder {
    /// `filter_bits_per_entry` of `None` (or a plan that allocates zero
    /// bits) writes no filter block.
    pub fn new(
        dir: &Path,
        file_id: u64,
        level: u32,
        block_bytes: usize,
        filter_bits_per_entry: Option<f64>,
    ) -> Result<Self> {
        let path = dir.join(run_file_name(file_id));
        let file = OpenOptions::new()
            .create_new(true)
            .write(true)
            .open(&path)
            .at_path(&path)?;
        let filter_bits_per_entry = filter_bits_per_entry.filter(|b| *b > 0.0);
        Ok(Self {
            file: BufWriter::with_capacity(256 << 10, file),
            path,
            file_id,
            level,
            block_payload_target: block_bytes.saturating_sub(BLOCK_OVERHEAD).max(1),
            filter_bits_per_entry,
            block_buf: Vec::new(),
            block_entries: 0,
            block_first_key: Vec::new(),
            index: Vec::new(),
            offset: 0,
            last_key: None,
            min_key: Vec::new(),
            entry_count: 0,
            data_bytes: 0,
            min_seq: u64::MAX,
            max_seq: 0,
            filter_hashes: Vec::new(),
            finished: false,
        })
    }

    pub fn entry_count(&self) -> u64 {
        self.entry_count
    }

    pub fn add(&mut self, entry: &InternalEntry) -> Result<()> {
        let new_user_key = match &self.last_key {
            Some(last) => {
                if *last >= entry.key {
                    return Err(Error::corruption(
                        format!("run {:06}", self.file_id),
                        "input stream not sorted",
                    ));
                }
                last.user_key != entry.key.user_key
            }
            None => {
                self.min_key = entry.key.user_key.clone();
                true
            }
        };
        if new_user_key {
            // Blocks only close between user keys, so every version of
            // a key shares its block and one probe suffices.
            if !self.block_buf.is_empty() && self.block_buf.len() >= self.block_payload_target {
                self.finish_block()?;
            }
            if self.filter_bits_per_entry.is_some() {
                self.filter_hashes.push(hash_key(&entry.key.user_key));
            }
        }
        if self.block_buf.is_empty() {
            self.block_first_key = entry.key.user_key.clone();
        }
        entry.encode_into(&mut self.block_buf);
        self.block_entries += 1;
        self.entry_count += 1;
        self.data_bytes += entry.data_bytes();
        self.min_seq = self.min_seq.min(entry.key.seq);
        self.max_seq = self.max_seq.max(entry.key.seq);
        self.last_key = Some(entry.key.clone());
        Ok(())
    }

    fn finish_block(&mut self) -> Result<()> {
        debug_assert!(!self.block_buf.is_empty());
        let mut block = Vec::with_capacity(BLOCK_OVERHEAD + self.block_buf.len());
        block.extend_from_slice(&self.block_entries.to_le_bytes());
        block.extend_from_slice(&self.block_buf);
        let crc = crc32fast::hash(&block);
        block.extend_from_slice(&crc.to_le_bytes());
        self.file.write_all(&block).at_path(&self.path)?;
        self.index.push(IndexEntry {
            first_key: std::mem::take(&mut self.block_first_key),
            offset: self.offset,
            len: block.len() as u32,
        });
        self.offset += block.len() as u64;
        self.block_buf.clear();
        self.block_entries = 0;
        Ok(())
    }

    pub fn finish(mut self) -> Result<RunHandle> {
        assert!(self.entry_count > 0, "run stream must be non-empty");
        if !self.block_buf.is_empty() {
            self.finish_block()?;
        }
        let (filter_offset, filter_len) = match self.filter_bits_per_entry {
            Some(bits) => {
                let filter = BloomFilter::from_hashes(&self.filter_hashes, bits);
                let mut encoded = Vec::with_capacity(filter.byte_len());
                filter.encode_into(&mut encoded);
                self.file.write_all(&encoded).at_path(&self.path)?;
                let at = self.offset;
                self.offset += encoded.len() as u64;
                (at, encoded.len() as u32)
            }
            None => (0, 0),
        };
        let mut index_block = Vec::new();
        encode_index(&self.index, &mut index_block);
        self.file.write_all(&index_block).at_path(&self.path)?;
        let index_offset = self.offset;
        self.offset += index_block.len() as u64;
        let footer = Footer {
            index_offset,
            index_len: index_block.len() as u32,
            filter_offset,
            filter_len,
        };
        self.file.write_all(&footer.encode()).at_path(&self.path)?;
        self.offset += super::FOOTER_LEN as u64;
        self.file.flush().at_path(&self.path)?;
        self.file.get_ref().sync_data().at_path(&self.path)?;
        self.finished = true;
        Ok(RunHandle {
            file_id: self.file_id,
            level: self.level,
            min_key: std::mem::take(&mut self.min_key),
            max_key: self.last_key.take().expect("non-empty").user_key,
            entry_count: self.entry_count,
            data_bytes: self.data_bytes,
            file_bytes: self.offset,
            min_seq: self.min_seq,
            max_seq: self.max_seq,
            has_filter: filter_len > 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Drop for RunBuilder {
    fn drop(&mut self) {
        if !self.finished {
            let _ = std::fs::remove_file(&self.path);
        }
    }
}
