//! Immutable snapshots of the level structure.
//!
//! A [`VersionState`] is the unit of MVCC for metadata: readers grab an
//! `Arc` to the current version and keep probing it while flushes and
//! compactions publish successors. Runs referenced by a superseded
//! version stay alive (and their files on disk) until the last reader
//! drops its reference.

use std::collections::HashSet;
use std::sync::Arc;

use xxhash_rust::xxh3::xxh3_64;

use crate::error::{Error, Result};
use crate::policy::LevelView;
use crate::sstable::Run;

pub struct VersionState {
    pub version_no: u64,
    /// Declared depth L; `levels` always has exactly this many lists.
    pub depth: u32,
    /// Index 0 holds level 1. Level 1 keeps its runs newest-first;
    /// levels 2.. hold at most one run.
    pub levels: Vec<Vec<Arc<Run>>>,
    /// Highest sequence number persisted in any run of this version.
    pub last_seq: u64,
}

/// One atomic change to the level structure.
#[derive(Default)]
pub struct VersionEdit {
    /// Runs to insert, each at its level. New level-1 runs go to the
    /// front of the list (they are newer than everything resident).
    pub added: Vec<(u32, Arc<Run>)>,
    /// file_ids to drop; they must exist in the base version.
    pub removed: Vec<u64>,
    /// New declared depth; must not shrink.
    pub new_depth: Option<u32>,
    /// Raises `last_seq`; never lowers it.
    pub last_seq: Option<u64>,
}

impl VersionState {
    pub fn empty(depth: u32) -> Arc<VersionState> {
        assert!(depth >= 1);
        Arc::new(VersionState {
            version_no: 0,
            depth,
            levels: vec![Vec::new(); depth as usize],
            last_seq: 0,
        })
    }

    /// Applies `edit` and returns the successor version. `self` is
    /// untouched; in-flight readers keep a consistent view.
    pub fn publish(&self, edit: &VersionEdit) -> Result<Arc<VersionState>> {
        let err = |msg: String| Err(Error::VersionEdit(msg));

        let mut added_ids = HashSet::new();
        for (_, run) in &edit.added {
            if !added_ids.insert(run.handle().file_id) {
                return err(format!("file {} added twice", run.handle().file_id));
            }
        }
        let mut removed_ids = HashSet::new();
        for id in &edit.removed {
            if !removed_ids.insert(*id) {
                return err(format!("file {id} removed twice"));
            }
            if added_ids.contains(id) {
                return err(format!("file {id} both added and removed"));
            }
        }

        let depth = match edit.new_depth {
            Some(d) if d < self.depth => {
                return err(format!("depth may not shrink ({} -> {d})", self.depth));
            }
            Some(d) => d,
            None => self.depth,
        };
        let max_added_level = edit.added.iter().map(|(l, _)| *l).max().unwrap_or(0);
        if max_added_level > depth {
            return err(format!("level {max_added_level} beyond depth {depth}"));
        }

        let mut levels = self.levels.clone();
        levels.resize(depth as usize, Vec::new());

        let mut seen = 0usize;
        for list in &mut levels {
            list.retain(|run| {
                let drop = removed_ids.contains(&run.handle().file_id);
                seen += drop as usize;
                !drop
            });
        }
        if seen != removed_ids.len() {
            return err("edit removes a file not present in the base version".into());
        }

        for (level, run) in &edit.added {
            if *level < 1 {
                return err("runs live on levels >= 1".into());
            }
            if run.handle().level != *level {
                return err(format!(
                    "file {} built for level {} placed at {level}",
                    run.handle().file_id,
                    run.handle().level
                ));
            }
            if self.find_file(run.handle().file_id).is_some() {
                return err(format!("file {} already present", run.handle().file_id));
            }
            let list = &mut levels[*level as usize - 1];
            if *level == 1 {
                list.insert(0, Arc::clone(run));
            } else {
                list.push(Arc::clone(run));
            }
        }

        for (idx, list) in levels.iter().enumerate().skip(1) {
            if list.len() > 1 {
                return err(format!("level {} would hold {} runs", idx + 1, list.len()));
            }
        }

        let last_seq = match edit.last_seq {
            Some(s) if s < self.last_seq => {
                return err(format!("last_seq may not regress ({} -> {s})", self.last_seq));
            }
            Some(s) => s,
            None => self.last_seq,
        };

        Ok(Arc::new(VersionState {
            version_no: self.version_no + 1,
            depth,
            levels,
            last_seq,
        }))
    }

    pub fn find_file(&self, file_id: u64) -> Option<&Arc<Run>> {
        self.levels.iter().flatten().find(|r| r.handle().file_id == file_id)
    }

    /// Per-level occupancy in the shape the policy module consumes;
    /// index 0 is level 1.
    pub fn level_views(&self) -> Vec<LevelView> {
        self.levels
            .iter()
            .map(|list| LevelView {
                run_count: list.len(),
                data_bytes: list.iter().map(|r| r.handle().data_bytes).sum(),
            })
            .collect()
    }

    pub fn level_one_run_count(&self) -> usize {
        self.levels[0].len()
    }

    /// Sum of run data bytes across all levels (the physical estimate
    /// of N).
    pub fn total_data_bytes(&self) -> u64 {
        self.levels.iter().flatten().map(|r| r.handle().data_bytes).sum()
    }

    pub fn total_file_bytes(&self) -> u64 {
        self.levels.iter().flatten().map(|r| r.handle().file_bytes).sum()
    }

    pub fn run_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn deepest_nonempty_level(&self) -> Option<u32> {
        (1..=self.depth).rev().find(|&l| !self.levels[l as usize - 1].is_empty())
    }

    /// Digest of everything observable about this version; used to
    /// verify published versions never mutate.
    /// Digest of what the version holds: depth, sequence horizon, and
    /// the exact run placement. Deliberately excludes `version_no`,
    /// which counts publishes rather than describing state, so a
    /// rebuilt-from-manifest version hashes the same as the one that
    /// was live when the manifest was written.
    pub fn content_hash(&self) -> u64 {
        let mut buf = Vec::new();
        buf.extend_from_slice(&self.depth.to_le_bytes());
        buf.extend_from_slice(&self.last_seq.to_le_bytes());
        for list in &self.levels {
            buf.extend_from_slice(&(list.len() as u64).to_le_bytes());
            for run in list {
                run.handle().encode_into(&mut buf);
            }
        }
        xxh3_64(&buf)
    }
}
