//! Merge executor: k-way merge of whole runs with snapshot-aware
//! version garbage collection.
//!
//! Retention rule per user key, walking versions newest to oldest: the
//! newest version always survives; an older version survives only if
//! some live snapshot sees it (its seq ≤ snapshot < seq of the previous
//! survivor). Tombstones are purged only when the output lands on the
//! deepest level and only from the old end of a key's survivor list,
//! where there is nothing left for them to mask.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::sstable::{Run, RunBuilder, RunHandle, RunIter};
use crate::types::{EntryKind, InternalEntry, InternalKey};

pub struct MergeConfig<'a> {
    pub dir: &'a Path,
    pub file_id: u64,
    pub target_level: u32,
    pub block_bytes: usize,
    pub filter_bits_per_entry: Option<f64>,
    /// Output lands on the deepest level: trailing tombstones may go.
    pub target_is_deepest: bool,
    /// Live snapshot sequence numbers, any order.
    pub snapshots: &'a [u64],
}

#[derive(Debug, Default, PartialEq, Eq)]
pub struct MergeStats {
    pub entries_in: u64,
    pub entries_out: u64,
    pub dropped_obsolete: u64,
    pub dropped_tombstones: u64,
}

pub struct MergeOutput {
    /// `None` when garbage collection consumed every input entry.
    pub handle: Option<RunHandle>,
    pub stats: MergeStats,
}

/// Merges `inputs` into a single run at `cfg.target_level`. On error or
/// cancellation the partial output file is removed and nothing is
/// published.
pub fn merge_runs(
    inputs: &[Arc<Run>],
    cfg: &MergeConfig,
    cancel: &AtomicBool,
) -> Result<MergeOutput> {
    assert!(!inputs.is_empty());
    let mut snapshots: Vec<u64> = cfg.snapshots.to_vec();
    snapshots.sort_unstable();

    let mut iters: Vec<RunIter> = Vec::with_capacity(inputs.len());
    let mut heap: BinaryHeap<Reverse<(InternalKey, usize)>> = BinaryHeap::new();
    for (idx, run) in inputs.iter().enumerate() {
        let mut it = run.iter();
        it.seek_to_first()?;
        if it.valid() {
            heap.push(Reverse((it.key().clone(), idx)));
        }
        iters.push(it);
    }

    let mut builder = RunBuilder::new(
        cfg.dir,
        cfg.file_id,
        cfg.target_level,
        cfg.block_bytes,
        cfg.filter_bits_per_entry,
    )?;
    let mut stats = MergeStats::default();
    let mut group: Vec<InternalEntry> = Vec::new();

    let emit_group = |builder: &mut RunBuilder,
                          group: &mut Vec<InternalEntry>,
                          stats: &mut MergeStats|
     -> Result<()> {
        let mut kept: Vec<&InternalEntry> = Vec::with_capacity(1);
        for entry in group.iter() {
            let needed = match kept.last() {
                None => true,
                Some(prev) => visible_to_a_snapshot(&snapshots, entry.key.seq, prev.key.seq),
            };
            if needed {
                kept.push(entry);
            } else {
                stats.dropped_obsolete += 1;
            }
        }
        if cfg.target_is_deepest {
            while kept.last().is_some_and(|e| e.key.kind == EntryKind::Tombstone) {
                kept.pop();
                stats.dropped_tombstones += 1;
            }
        }
        for entry in kept {
            builder.add(entry)?;
            stats.entries_out += 1;
        }
        group.clear();
        Ok(())
    };

    while let Some(Reverse((key, idx))) = heap.pop() {
        if cancel.load(Ordering::Relaxed) {
            return Err(Error::Cancelled);
        }
        stats.entries_in += 1;
        if group.last().is_some_and(|e| e.key.user_key != key.user_key) {
            emit_group(&mut builder, &mut group, &mut stats)?;
        }
        let it = &mut iters[idx];
        group.push(InternalEntry { key, value: it.value().to_vec() });
        it.next()?;
        if it.valid() {
            heap.push(Reverse((it.key().clone(), idx)));
        }
    }
    emit_group(&mut builder, &mut group, &mut stats)?;

    let handle = if builder.entry_count() > 0 { Some(builder.finish()?) } else { None };
    Ok(MergeOutput { handle, stats })
}

/// True when some snapshot sees this version: seq ≤ s < newer_seq.
fn visible_to_a_snapshot(sorted_snapshots: &[u64], seq: u64, newer_seq: u64) -> bool {
    debug_assert!(seq < newer_seq);
    let at = sorted_snapshots.partition_point(|&s| s < seq);
    sorted_snapshots.get(at).is_some_and(|&s| s < newer_seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refmodel::ModelStore;
    use crate::sstable::RunBuilder;
    use crate::types::Lookup;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn build(dir: &Path, file_id: u64, level: u32, entries: &[InternalEntry]) -> Arc<Run> {
        let mut b = RunBuilder::new(dir, file_id, level, 4096, None).unwrap();
        for e in entries {
            b.add(e).unwrap();
        }
        Run::open(dir, b.finish().unwrap()).unwrap()
    }

    fn merge_as(
        dir: &Path,
        file_id: u64,
        inputs: &[Arc<Run>],
        deepest: bool,
        snapshots: &[u64],
    ) -> (Option<Arc<Run>>, MergeStats) {
        let cfg = MergeConfig {
            dir,
            file_id,
            target_level: 2,
            block_bytes: 4096,
            filter_bits_per_entry: None,
            target_is_deepest: deepest,
            snapshots,
        };
        let out = merge_runs(inputs, &cfg, &AtomicBool::new(false)).unwrap();
        (out.handle.map(|h| Run::open(dir, h).unwrap()), out.stats)
    }

    fn merge(
        dir: &Path,
        inputs: &[Arc<Run>],
        deepest: bool,
        snapshots: &[u64],
    ) -> (Option<Arc<Run>>, MergeStats) {
        merge_as(dir, 900, inputs, deepest, snapshots)
    }

    fn scan(run: &Arc<Run>) -> Vec<(Vec<u8>, u64, EntryKind, Vec<u8>)> {
        let mut it = run.iter();
        it.seek_to_first().unwrap();
        let mut out = Vec::new();
        while it.valid() {
            let k = it.key();
            out.push((k.user_key.clone(), k.seq, k.kind, it.value().to_vec()));
            it.next().unwrap();
        }
        out
    }

    #[test]
    fn newest_version_wins() {
        let dir = tempdir().unwrap();
        let newer = build(dir.path(), 1, 1, &[InternalEntry::put(b"a".to_vec(), 2, b"new")]);
        let older = build(dir.path(), 2, 1, &[InternalEntry::put(b"a".to_vec(), 1, b"old")]);
        let (run, stats) = merge(dir.path(), &[newer, older], false, &[]);
        let entries = scan(&run.unwrap());
        assert_eq!(entries, vec![(b"a".to_vec(), 2, EntryKind::Put, b"new".to_vec())]);
        assert_eq!(stats.entries_in, 2);
        assert_eq!(stats.entries_out, 1);
        assert_eq!(stats.dropped_obsolete, 1);
    }

    #[test]
    fn tombstone_purged_only_at_deepest_level() {
        let dir = tempdir().unwrap();
        let entries = [
            InternalEntry::tombstone(b"x".to_vec(), 5),
            InternalEntry::put(b"y".to_vec(), 3, b"v"),
        ];
        let a = build(dir.path(), 1, 1, &entries);
        let (run, stats) = merge(dir.path(), &[Arc::clone(&a)], false, &[]);
        assert_eq!(
            scan(&run.unwrap())
                .iter()
                .map(|(k, _, kind, _)| (k.clone(), *kind))
                .collect::<Vec<_>>(),
            vec![(b"x".to_vec(), EntryKind::Tombstone), (b"y".to_vec(), EntryKind::Put)]
        );
        assert_eq!(stats.dropped_tombstones, 0);

        let (run, stats) = merge_as(dir.path(), 901, &[a], true, &[]);
        let entries = scan(&run.unwrap());
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].0, b"y".to_vec());
        assert_eq!(stats.dropped_tombstones, 1);
    }

    #[test]
    fn all_entries_collected_leaves_no_run() {
        let dir = tempdir().unwrap();
        let a = build(dir.path(), 1, 1, &[InternalEntry::tombstone(b"gone".to_vec(), 9)]);
        let (run, stats) = merge(dir.path(), &[a], true, &[]);
        assert!(run.is_none());
        assert_eq!(stats.entries_out, 0);
        assert!(!dir.path().join(crate::sstable::run_file_name(900)).exists());
    }

    #[test]
    fn snapshot_retains_shadowed_version() {
        let dir = tempdir().unwrap();
        let a = build(
            dir.path(),
            1,
            1,
            &[
                InternalEntry::put(b"k".to_vec(), 9, b"v9"),
                InternalEntry::put(b"k".to_vec(), 5, b"v5"),
                InternalEntry::put(b"k".to_vec(), 2, b"v2"),
            ],
        );
        // Snapshot at 7 sees v5; nothing sees v2.
        let (run, stats) = merge(dir.path(), &[Arc::clone(&a)], true, &[7]);
        let seqs: Vec<u64> = scan(&run.unwrap()).iter().map(|e| e.1).collect();
        assert_eq!(seqs, vec![9, 5]);
        assert_eq!(stats.dropped_obsolete, 1);

        // Without snapshots only the newest survives.
        let (run, _) = merge_as(dir.path(), 901, &[a], true, &[]);
        let seqs: Vec<u64> = scan(&run.unwrap()).iter().map(|e| e.1).collect();
        assert_eq!(seqs, vec![9]);
    }

    #[test]
    fn snapshot_pinned_tombstone_keeps_masking() {
        let dir = tempdir().unwrap();
        let a = build(
            dir.path(),
            1,
            1,
            &[
                InternalEntry::tombstone(b"k".to_vec(), 8),
                InternalEntry::put(b"k".to_vec(), 3, b"v3"),
            ],
        );
        // Snapshot 5 still needs v3, so the newer tombstone must stay
        // even on the deepest level.
        let (run, stats) = merge(dir.path(), &[a], true, &[5]);
        let entries = scan(&run.unwrap());
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].2, EntryKind::Tombstone);
        assert_eq!(entries[1].1, 3);
        assert_eq!(stats.dropped_tombstones, 0);
    }

    #[test]
    fn interleaved_runs_merge_in_key_order() {
        let dir = tempdir().unwrap();
        let a = build(
            dir.path(),
            1,
            1,
            &[
                InternalEntry::put(b"a".to_vec(), 4, b"a4"),
                InternalEntry::put(b"c".to_vec(), 2, b"c2"),
            ],
        );
        let b = build(
            dir.path(),
            2,
            1,
            &[
                InternalEntry::put(b"b".to_vec(), 3, b"b3"),
                InternalEntry::put(b"c".to_vec(), 6, b"c6"),
                InternalEntry::put(b"d".to_vec(), 1, b"d1"),
            ],
        );
        let (run, stats) = merge(dir.path(), &[a, b], true, &[]);
        let keys: Vec<(Vec<u8>, u64)> =
            scan(&run.unwrap()).iter().map(|e| (e.0.clone(), e.1)).collect();
        assert_eq!(
            keys,
            vec![
                (b"a".to_vec(), 4),
                (b"b".to_vec(), 3),
                (b"c".to_vec(), 6),
                (b"d".to_vec(), 1)
            ]
        );
        assert_eq!(stats.entries_in, 5);
        assert_eq!(stats.dropped_obsolete, 1);
    }

    #[test]
    fn cancellation_removes_partial_output() {
        let dir = tempdir().unwrap();
        let entries: Vec<InternalEntry> = (0..500)
            .map(|i| InternalEntry::put(format!("{i:08}").into_bytes(), i + 1, vec![b'v'; 100]))
            .collect();
        let a = build(dir.path(), 1, 1, &entries);
        let cfg = MergeConfig {
            dir: dir.path(),
            file_id: 901,
            target_level: 2,
            block_bytes: 4096,
            filter_bits_per_entry: None,
            target_is_deepest: true,
            snapshots: &[],
        };
        let cancelled = AtomicBool::new(true);
        let err = merge_runs(&[a], &cfg, &cancelled).err().expect("must cancel");
        assert!(matches!(err, Error::Cancelled));
        assert!(!dir.path().join(crate::sstable::run_file_name(901)).exists());
    }

    #[test]
    fn snapshot_visibility_window_logic() {
        // s in [seq, newer_seq) makes a version visible.
        assert!(visible_to_a_snapshot(&[5], 5, 9));
        assert!(visible_to_a_snapshot(&[8], 5, 9));
        assert!(!visible_to_a_snapshot(&[9], 5, 9));
        assert!(!visible_to_a_snapshot(&[4], 5, 9));
        assert!(!visible_to_a_snapshot(&[], 5, 9));
        assert!(visible_to_a_snapshot(&[1, 4, 6, 12], 5, 9));
        assert!(!visible_to_a_snapshot(&[1, 4, 9, 12], 5, 9));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// Random op histories split across runs, merged with random
        /// snapshots, must read identically to the reference model at
        /// every snapshot and at the head.
        #[test]
        fn merge_preserves_visible_history(
            ops in proptest::collection::vec(
                (proptest::collection::vec(0u8..5, 1..3), any::<bool>()),
                1..120,
            ),
            cuts in proptest::collection::vec(1usize..119, 0..3),
            snaps in proptest::collection::vec(1u64..121, 0..4),
            deepest in any::<bool>(),
        ) {
            let dir = tempdir().unwrap();
            let mut model = ModelStore::new();
            let mut entries = Vec::new();
            for (seq, (key, is_put)) in ops.iter().enumerate() {
                let seq = seq as u64 + 1;
                let entry = if *is_put {
                    model.put(key, key, seq);
                    InternalEntry::put(key.clone(), seq, key.clone())
                } else {
                    model.delete(key, seq);
                    InternalEntry::tombstone(key.clone(), seq)
                };
                entries.push(entry);
            }
            let max_seq = entries.len() as u64;

            // Split the history into seq ranges, one run per range.
            let mut bounds: Vec<usize> = cuts.iter().map(|c| c % entries.len()).collect();
            bounds.push(0);
            bounds.push(entries.len());
            bounds.sort_unstable();
            bounds.dedup();
            let mut runs = Vec::new();
            for (i, w) in bounds.windows(2).enumerate() {
                let mut slice: Vec<InternalEntry> = entries[w[0]..w[1]].to_vec();
                slice.sort_by(|a, b| a.key.cmp(&b.key));
                if !slice.is_empty() {
                    runs.push(build(dir.path(), i as u64 + 1, 1, &slice));
                }
            }
            prop_assume!(!runs.is_empty());

            let snapshots: Vec<u64> = snaps.iter().map(|s| s % (max_seq + 1)).collect();
            let (merged, stats) = merge(dir.path(), &runs, deepest, &snapshots);
            prop_assert_eq!(stats.entries_in, max_seq);

            let mut probes: Vec<u64> = snapshots.clone();
            probes.push(max_seq);
            for at in probes {
                for key_byte in 0u8..5 {
                    for key in [vec![key_byte], vec![key_byte, key_byte]] {
                        let want = match model.model_get(&key, at) {
                            Some(v) => Lookup::Value(v.to_vec()),
                            None => Lookup::Miss,
                        };
                        let got = match &merged {
                            Some(run) => match run.point_probe(&key, at).unwrap().0 {
                                Lookup::Tombstone => Lookup::Miss,
                                other => other,
                            },
                            None => Lookup::Miss,
                        };
                        prop_assert_eq!(got, want, "key {:?} at {}", key, at);
                    }
                }
            }
        }
    }
}
