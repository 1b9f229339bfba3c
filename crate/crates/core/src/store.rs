//! The assembled key-value store: durable write path, crash recovery,
//! and the maintenance loop that applies the merge policy.
//!
//! All mutable state sits behind one mutex. Writers hold it across the
//! WAL append so acknowledgement order equals sequence order. Flushes
//! and merges claim a single job slot and drop the lock for their I/O
//! phases; the version they eventually publish is the only thing
//! readers ever see change.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::compaction::{merge_runs, MergeConfig, MergeOutput};
use crate::config::{FilterMode, Options};
use crate::error::{Error, IoResultExt, Result};
use crate::filters::allocate_fprs;
use crate::manifest::{self, EditMeta, ManifestLoad, ManifestLog};
use crate::memtable::Memtable;
use crate::policy::{self, CompactionTask, LastLevelFull, LevelView};
use crate::read_path::{ReadStats, ReadView, Snapshot, SnapshotRegistry, StoreIter};
use crate::sstable::{
    run_file_name, Run, RunBuilder, RunHandle, BLOCK_OVERHEAD, INDEX_ENTRY_FIXED_LEN,
};
use crate::stats::{StatsRegistry, StatsSnapshot};
use crate::types::{InternalEntry, ENTRY_HEADER_LEN};
use crate::version::{VersionEdit, VersionState};
use crate::wal::{self, Wal};

/// What the maintenance loop did, in order. Drained by
/// [`Store::drain_maintenance_events`]; tests and the bench harness use
/// it to observe scheduling decisions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaintenanceEvent {
    Flush {
        file_id: u64,
        file_bytes: u64,
    },
    Compact {
        source_level: u32,
        target_level: u32,
        input_bytes: u64,
        output_file: Option<u64>,
        output_bytes: u64,
    },
    /// The last level filled and the declared depth grew instead of
    /// merging; no data moved.
    GrewDepth { new_depth: u32 },
}

enum Job {
    Flush,
    Grow { new_depth: u32 },
    Compact(CompactionTask),
}

struct MemState {
    mem: Arc<Memtable>,
    imm: Option<Arc<Memtable>>,
    wal: Wal,
    /// WAL segment backing `imm`; deleted once the flush is in the
    /// manifest.
    imm_wal: Option<PathBuf>,
    version: Arc<VersionState>,
    manifest: ManifestLog,
    next_seq: u64,
    next_file_id: u64,
    next_wal_gen: u64,
    job_running: bool,
    paused: bool,
    background_error: Option<String>,
    events: Vec<MaintenanceEvent>,
}

struct Inner {
    dir: PathBuf,
    opts: Options,
    stats: Arc<StatsRegistry>,
    snapshots: Arc<SnapshotRegistry>,
    state: Mutex<MemState>,
    /// Wakes the background worker.
    work_cv: Condvar,
    /// Wakes writers waiting for room and anyone waiting for idle.
    done_cv: Condvar,
    shutdown: AtomicBool,
    cancel: AtomicBool,
    pin_fallbacks: AtomicU64,
}

pub struct Store {
    inner: Arc<Inner>,
    worker: Option<JoinHandle<()>>,
    crashed: bool,
}

impl Store {
    pub fn open(dir: impl AsRef<Path>, opts: Options) -> Result<Store> {
        opts.validate()?;
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).at_path(&dir)?;

        let load = manifest::load(&dir)?;
        let mut pin_fallbacks = 0u64;
        let (version, mut max_file_id) = match &load {
            None => (VersionState::empty(1), 0),
            Some(load) => rebuild_version(&dir, load, &mut pin_fallbacks)?,
        };
        let mut manifest_log = match &load {
            None => {
                remove_stray_manifests(&dir, 0);
                ManifestLog::create(&dir)?
            }
            Some(load) => {
                let mut log = ManifestLog::reopen(&dir, load)?;
                if load.truncated {
                    log.rewrite(&dir, &full_snapshot_meta(&version))?;
                }
                log
            }
        };
        remove_stray_manifests(&dir, manifest_log.generation());

        let mut wal_segments: Vec<(u64, PathBuf)> = Vec::new();
        let mut disk_sst_ids: Vec<u64> = Vec::new();
        for entry in std::fs::read_dir(&dir).at_path(&dir)? {
            let entry = entry.at_path(&dir)?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(stem) = name.strip_suffix(".wal") {
                if let Ok(gen) = stem.parse::<u64>() {
                    wal_segments.push((gen, entry.path()));
                }
            } else if let Some(stem) = name.strip_suffix(".sst") {
                if let Ok(id) = stem.parse::<u64>() {
                    disk_sst_ids.push(id);
                }
            }
        }
        wal_segments.sort();

        // Files on disk that no live run references are leftovers from
        // an interrupted flush or merge.
        for &id in &disk_sst_ids {
            max_file_id = max_file_id.max(id);
            if version.find_file(id).is_none() {
                let _ = std::fs::remove_file(dir.join(run_file_name(id)));
            }
        }

        let mem = Arc::new(Memtable::new());
        let mut max_seq = version.last_seq;
        for (_, path) in &wal_segments {
            let replayed = wal::replay(path)?;
            for entry in replayed.entries {
                max_seq = max_seq.max(entry.key.seq);
                if entry.key.seq > version.last_seq {
                    mem.insert(entry);
                }
            }
        }

        // Entries that survived replay go straight to level 1 so the
        // old segments can be dropped; the fresh store then owns
        // exactly one WAL per memtable.
        let mut version = version;
        if !mem.is_empty() {
            max_file_id += 1;
            let (handle, run, fellback) =
                build_l1_run(&dir, &mem, max_file_id, opts.block_bytes)?;
            pin_fallbacks += u64::from(fellback);
            let last_seq = version.last_seq.max(handle.max_seq);
            manifest_log.append(&EditMeta {
                added: vec![(1, handle)],
                removed: vec![],
                new_depth: None,
                last_seq,
            })?;
            version = version.publish(&VersionEdit {
                added: vec![(1, run)],
                last_seq: Some(last_seq),
                ..Default::default()
            })?;
        }
        for (_, path) in &wal_segments {
            let _ = std::fs::remove_file(path);
        }

        let next_wal_gen = wal_segments.last().map_or(1, |(gen, _)| gen + 1);
        let wal_path = dir.join(wal::segment_file_name(next_wal_gen));
        let wal = Wal::create(wal_path, opts.sync)?;

        let stats = Arc::new(StatsRegistry::new());
        let state = MemState {
            mem: Arc::new(Memtable::new()),
            imm: None,
            wal,
            imm_wal: None,
            version,
            manifest: manifest_log,
            next_seq: max_seq + 1,
            next_file_id: max_file_id + 1,
            next_wal_gen: next_wal_gen + 1,
            job_running: false,
            paused: false,
            background_error: None,
            events: Vec::new(),
        };
        let inner = Arc::new(Inner {
            dir,
            opts,
            stats,
            snapshots: Arc::new(SnapshotRegistry::default()),
            state: Mutex::new(state),
            work_cv: Condvar::new(),
            done_cv: Condvar::new(),
            shutdown: AtomicBool::new(false),
            cancel: AtomicBool::new(false),
            pin_fallbacks: AtomicU64::new(pin_fallbacks),
        });
        let boot_version = Arc::clone(&inner.state.lock().unwrap().version);
        inner.refresh_gauges(&boot_version);

        let worker = if inner.opts.background_worker {
            let inner = Arc::clone(&inner);
            Some(std::thread::spawn(move || worker_loop(inner)))
        } else {
            None
        };
        Ok(Store { inner, worker, crashed: false })
    }

    pub fn put(&self, key: &[u8], value: &[u8]) -> Result<u64> {
        if key.is_empty() {
            return Err(Error::Config("keys must be non-empty".into()));
        }
        self.write(key, Some(value))
    }

    pub fn delete(&self, key: &[u8]) -> Result<u64> {
        if key.is_empty() {
            return Err(Error::Config("keys must be non-empty".into()));
        }
        self.write(key, None)
    }

    fn write(&self, key: &[u8], value: Option<&[u8]>) -> Result<u64> {
        let inner = &*self.inner;
        // Worst-case file growth from one more entry: its encoding plus
        // a fresh index slot and block trailer. Rotating before the
        // projection can exceed B keeps every level-1 file within the
        // memtable budget, which is what bounds the pinned bytes.
        let incoming = (ENTRY_HEADER_LEN
            + 2 * key.len()
            + value.map_or(0, <[u8]>::len)
            + INDEX_ENTRY_FIXED_LEN
            + BLOCK_OVERHEAD) as u64;
        let mut stalled = false;
        loop {
            let mut state = inner.state.lock().unwrap();
            if inner.shutdown.load(Ordering::Relaxed) {
                return Err(Error::ShutDown);
            }
            let full = !state.mem.is_empty()
                && state.mem.projected_file_bytes(inner.opts.block_bytes) + incoming
                    > inner.opts.memtable_bytes;
            if full {
                if inner.gate_closed(&state) || state.imm.is_some() {
                    if inner.gate_closed(&state) && !stalled {
                        inner.stats.record_stall();
                        stalled = true;
                    }
                    if inner.opts.background_worker {
                        inner.work_cv.notify_all();
                        drop(inner.done_cv.wait(state).unwrap());
                        continue;
                    }
                    drop(state);
                    if !inner.run_one_job()? {
                        return Err(Error::Config(
                            "write blocked: memtable full and maintenance paused".into(),
                        ));
                    }
                    continue;
                }
                inner.rotate_memtable(&mut state)?;
                inner.work_cv.notify_all();
            }

            let seq = state.next_seq;
            let entry = match value {
                Some(v) => InternalEntry::put(key.to_vec(), seq, v),
                None => InternalEntry::tombstone(key.to_vec(), seq),
            };
            state.wal.append(&entry)?;
            state.next_seq += 1;
            let bytes = entry.data_bytes();
            state.mem.insert(entry);
            inner.stats.record_user_write(bytes);
            drop(state);
            if !inner.opts.background_worker {
                inner.run_jobs_until_idle()?;
            }
            return Ok(seq);
        }
    }

    fn read_view(&self) -> ReadView {
        let state = self.inner.state.lock().unwrap();
        ReadView::new(
            Arc::clone(&state.mem),
            state.imm.clone(),
            Arc::clone(&state.version),
            state.next_seq - 1,
            Arc::clone(&self.inner.stats),
        )
    }

    pub fn get(&self, key: &[u8]) -> Result<Option<Vec<u8>>> {
        Ok(self.read_view().get(key)?.0)
    }

    /// `get` plus the per-lookup probe accounting.
    pub fn get_traced(&self, key: &[u8]) -> Result<(Option<Vec<u8>>, ReadStats)> {
        self.read_view().get(key)
    }

    pub fn iter_from(&self, start: &[u8]) -> Result<StoreIter> {
        self.read_view().iter_from(start)
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot::new(self.read_view(), Arc::clone(&self.inner.snapshots))
    }

    /// Seals the active memtable (if non-empty) and waits until both
    /// memtables have drained to level 1.
    pub fn flush_memtable(&self) -> Result<()> {
        let inner = &*self.inner;
        loop {
            let mut state = inner.state.lock().unwrap();
            if inner.shutdown.load(Ordering::Relaxed) {
                return Err(Error::ShutDown);
            }
            if state.imm.is_some() {
                if inner.opts.background_worker {
                    inner.work_cv.notify_all();
                    drop(inner.done_cv.wait(state).unwrap());
                } else {
                    drop(state);
                    inner.run_one_job()?;
                }
                continue;
            }
            if state.mem.is_empty() {
                return Ok(());
            }
            if inner.gate_closed(&state) {
                inner.stats.record_stall();
                if inner.opts.background_worker {
                    inner.work_cv.notify_all();
                    drop(inner.done_cv.wait(state).unwrap());
                } else {
                    drop(state);
                    if !inner.run_one_job()? {
                        return Err(Error::Config(
                            "flush blocked: stall gate closed and maintenance paused".into(),
                        ));
                    }
                }
                continue;
            }
            inner.rotate_memtable(&mut state)?;
            inner.work_cv.notify_all();
        }
    }

    /// Blocks until no flush or merge is pending or running.
    pub fn wait_idle(&self) -> Result<()> {
        let inner = &*self.inner;
        if !inner.opts.background_worker {
            return inner.run_jobs_until_idle();
        }
        let mut state = inner.state.lock().unwrap();
        loop {
            if inner.shutdown.load(Ordering::Relaxed) {
                return Err(Error::ShutDown);
            }
            if let Some(err) = &state.background_error {
                return Err(Error::Config(format!("background maintenance failed: {err}")));
            }
            if !state.job_running && inner.select_job(&state).is_none() {
                return Ok(());
            }
            inner.work_cv.notify_all();
            state = inner.done_cv.wait(state).unwrap();
        }
    }

    /// Runs at most one pending maintenance job on the calling thread.
    pub fn maintenance_step(&self) -> Result<bool> {
        self.inner.run_one_job()
    }

    /// Flushes everything and merges all runs into a single deepest
    /// run. Tombstones and shadowed versions not pinned by a snapshot
    /// are gone afterwards.
    pub fn compact_full(&self) -> Result<()> {
        self.flush_memtable()?;
        self.wait_idle()?;
        let inner = &*self.inner;
        let (inputs, input_ids, input_bytes, file_id, target_level) = {
            let mut state = inner.state.lock().unwrap();
            while state.job_running {
                if inner.shutdown.load(Ordering::Relaxed) {
                    return Err(Error::ShutDown);
                }
                state = inner.done_cv.wait(state).unwrap();
            }
            let version = &state.version;
            let Some(deepest) = version.deepest_nonempty_level() else {
                return Ok(());
            };
            if version.run_count() == 1 && deepest >= 2 {
                return Ok(());
            }
            let inputs: Vec<Arc<Run>> = version.levels.iter().flatten().cloned().collect();
            let input_ids: Vec<u64> = inputs.iter().map(|r| r.handle().file_id).collect();
            let input_bytes: u64 = inputs.iter().map(|r| r.handle().file_bytes).sum();
            let target = deepest.max(2);
            let file_id = state.next_file_id;
            state.next_file_id += 1;
            state.job_running = true;
            (inputs, input_ids, input_bytes, file_id, target)
        };
        let snapshots = inner.snapshots.live();
        let (grow, filter_bits) = {
            let state = inner.state.lock().unwrap();
            let grow = (target_level > state.version.depth).then_some(target_level);
            let depth_after = grow.unwrap_or(state.version.depth).max(target_level);
            // Everything merges into the target, so the other deep
            // levels will come out empty.
            let mut counts = vec![0u64; depth_after as usize - 1];
            counts[target_level as usize - 2] =
                inputs.iter().map(|r| r.handle().entry_count).sum();
            (grow, inner.filter_bits_for(&counts, target_level))
        };
        let result = (|| {
            let cfg = MergeConfig {
                dir: &inner.dir,
                file_id,
                target_level,
                block_bytes: inner.opts.block_bytes,
                filter_bits_per_entry: filter_bits,
                target_is_deepest: true,
                snapshots: &snapshots,
            };
            let out = merge_runs(&inputs, &cfg, &inner.cancel)?;
            inner.finish_merge(1, target_level, grow, &inputs, input_ids, input_bytes, out)
        })();
        inner.release_job_slot(&result);
        result
    }

    pub fn pause_compaction(&self) {
        self.inner.state.lock().unwrap().paused = true;
    }

    pub fn resume_compaction(&self) {
        self.inner.state.lock().unwrap().paused = false;
        self.inner.work_cv.notify_all();
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.inner.stats.snapshot()
    }

    /// The harness tracks live logical bytes exactly; the store only
    /// reports it.
    pub fn set_logical_bytes(&self, bytes: u64) {
        self.inner.stats.set_logical_bytes(bytes);
    }

    pub fn depth(&self) -> u32 {
        self.inner.state.lock().unwrap().version.depth
    }

    pub fn level_views(&self) -> Vec<LevelView> {
        self.inner.state.lock().unwrap().version.level_views()
    }

    pub fn pinned_bytes(&self) -> u64 {
        let state = self.inner.state.lock().unwrap();
        state.version.levels[0].iter().map(|r| r.pinned_bytes()).sum()
    }

    /// Level-1 runs serving from disk because their memory image failed
    /// to load.
    pub fn pin_fallback_count(&self) -> u64 {
        self.inner.pin_fallbacks.load(Ordering::Relaxed)
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.state.lock().unwrap().next_seq - 1
    }

    pub fn version_content_hash(&self) -> u64 {
        self.inner.state.lock().unwrap().version.content_hash()
    }

    pub fn background_error(&self) -> Option<String> {
        self.inner.state.lock().unwrap().background_error.clone()
    }

    pub fn drain_maintenance_events(&self) -> Vec<MaintenanceEvent> {
        std::mem::take(&mut self.inner.state.lock().unwrap().events)
    }

    pub fn dir(&self) -> &Path {
        &self.inner.dir
    }

    pub fn options(&self) -> &Options {
        &self.inner.opts
    }

    /// Drops the store the way a crash would: no final WAL sync, no
    /// draining. Recovery picks up from the files left behind.
    pub fn simulate_crash(mut self) {
        self.crashed = true;
    }
}

impl Drop for Store {
    fn drop(&mut self) {
        self.inner.shutdown.store(true, Ordering::SeqCst);
        self.inner.cancel.store(true, Ordering::SeqCst);
        self.inner.work_cv.notify_all();
        self.inner.done_cv.notify_all();
        if let Some(handle) = self.worker.take() {
            let _ = handle.join();
        }
        if !self.crashed {
            let mut state = self.inner.state.lock().unwrap();
            let _ = state.wal.sync();
        }
    }
}

fn worker_loop(inner: Arc<Inner>) {
    loop {
        if inner.shutdown.load(Ordering::Relaxed) {
            return;
        }
        match inner.run_one_job() {
            Ok(true) => {}
            Ok(false) => {
                let state = inner.state.lock().unwrap();
                if inner.shutdown.load(Ordering::Relaxed) {
                    return;
                }
                if inner.select_job(&state).is_some() {
                    continue;
                }
                drop(inner.work_cv.wait_timeout(state, Duration::from_millis(100)).unwrap());
            }
            Err(Error::ShutDown) | Err(Error::Cancelled) => {}
            Err(_) => std::thread::sleep(Duration::from_millis(10)),
        }
    }
}

impl Inner {
    fn gate_closed(&self, state: &MemState) -> bool {
        let pending = state.version.level_one_run_count() + usize::from(state.imm.is_some());
        policy::stalls_writes(pending, &self.opts)
    }

    fn rotate_memtable(&self, state: &mut MemState) -> Result<()> {
        debug_assert!(state.imm.is_none());
        let gen = state.next_wal_gen;
        state.next_wal_gen += 1;
        let new_wal = Wal::create(self.dir.join(wal::segment_file_name(gen)), self.opts.sync)?;
        state.wal.sync()?;
        let old_wal = std::mem::replace(&mut state.wal, new_wal);
        state.imm_wal = Some(old_wal.path().to_path_buf());
        let sealed = std::mem::replace(&mut state.mem, Arc::new(Memtable::new()));
        sealed.seal();
        state.imm = Some(sealed);
        Ok(())
    }

    fn select_job(&self, state: &MemState) -> Option<Job> {
        if state.imm.is_some() {
            return Some(Job::Flush);
        }
        let views = state.version.level_views();
        let depth = state.version.depth;
        // The last level is handled before anything else. Pausing
        // suspends data movement only; growing the declared depth is a
        // metadata edit and stays allowed.
        if let Some(full) = policy::on_last_level_full(&views, depth, &self.opts) {
            match full {
                LastLevelFull::GrewDepth { new_depth } => {
                    return Some(Job::Grow { new_depth })
                }
                LastLevelFull::CompactLast(task) if !state.paused => {
                    return Some(Job::Compact(task))
                }
                LastLevelFull::CompactLast(_) => return None,
            }
        }
        if state.paused {
            return None;
        }
        policy::pick_compaction(&views, depth, &self.opts).map(Job::Compact)
    }

    /// Claims the job slot, runs one pending job, releases the slot.
    /// Returns false when nothing was pending.
    fn run_one_job(&self) -> Result<bool> {
        let job = {
            let mut state = self.state.lock().unwrap();
            loop {
                if self.shutdown.load(Ordering::Relaxed) {
                    return Err(Error::ShutDown);
                }
                if !state.job_running {
                    break;
                }
                state = self.done_cv.wait(state).unwrap();
            }
            match self.select_job(&state) {
                None => return Ok(false),
                Some(job) => {
                    state.job_running = true;
                    job
                }
            }
        };
        let result = match job {
            Job::Flush => self.job_flush(),
            Job::Grow { new_depth } => self.job_grow(new_depth),
            Job::Compact(task) => self.job_compact(task),
        };
        self.release_job_slot(&result);
        result.map(|_| true)
    }

    fn release_job_slot(&self, result: &Result<()>) {
        let mut state = self.state.lock().unwrap();
        state.job_running = false;
        if let Err(err) = result {
            if !matches!(err, Error::Cancelled | Error::ShutDown) {
                state.background_error = Some(err.to_string());
            }
        }
        drop(state);
        self.done_cv.notify_all();
    }

    fn run_jobs_until_idle(&self) -> Result<()> {
        while self.run_one_job()? {}
        Ok(())
    }

    fn job_flush(&self) -> Result<()> {
        let (imm, wal_path, file_id) = {
            let mut state = self.state.lock().unwrap();
            let Some(imm) = state.imm.clone() else { return Ok(()) };
            let file_id = state.next_file_id;
            state.next_file_id += 1;
            (imm, state.imm_wal.take(), file_id)
        };
        if imm.is_empty() {
            self.state.lock().unwrap().imm = None;
            if let Some(path) = wal_path {
                let _ = std::fs::remove_file(path);
            }
            return Ok(());
        }
        let (handle, run, fellback) =
            build_l1_run(&self.dir, &imm, file_id, self.opts.block_bytes)?;
        if fellback {
            self.pin_fallbacks.fetch_add(1, Ordering::Relaxed);
        }
        let file_bytes = handle.file_bytes;
        {
            let mut state = self.state.lock().unwrap();
            let last_seq = state.version.last_seq.max(handle.max_seq);
            state.manifest.append(&EditMeta {
                added: vec![(1, handle)],
                removed: vec![],
                new_depth: None,
                last_seq,
            })?;
            let next = state.version.publish(&VersionEdit {
                added: vec![(1, run)],
                last_seq: Some(last_seq),
                ..Default::default()
            })?;
            self.refresh_gauges(&next);
            state.version = next;
            state.imm = None;
            state.events.push(MaintenanceEvent::Flush { file_id, file_bytes });
            self.maybe_rewrite_manifest(&mut state)?;
        }
        if let Some(path) = wal_path {
            let _ = std::fs::remove_file(path);
        }
        self.stats.record_flush(file_bytes);
        Ok(())
    }

    fn job_grow(&self, new_depth: u32) -> Result<()> {
        let mut state = self.state.lock().unwrap();
        if state.version.depth >= new_depth {
            return Ok(());
        }
        let last_seq = state.version.last_seq;
        state.manifest.append(&EditMeta {
            added: vec![],
            removed: vec![],
            new_depth: Some(new_depth),
            last_seq,
        })?;
        let next = state.version.publish(&VersionEdit {
            new_depth: Some(new_depth),
            ..Default::default()
        })?;
        self.refresh_gauges(&next);
        state.version = next;
        state.events.push(MaintenanceEvent::GrewDepth { new_depth });
        self.maybe_rewrite_manifest(&mut state)
    }

    fn job_compact(&self, task: CompactionTask) -> Result<()> {
        let (inputs, input_ids, input_bytes, file_id, deepest, filter_bits) = {
            let mut state = self.state.lock().unwrap();
            let version = &state.version;
            let mut inputs: Vec<Arc<Run>> = version
                .levels
                .get(task.source_level as usize - 1)
                .cloned()
                .unwrap_or_default();
            if inputs.is_empty() {
                return Ok(());
            }
            if let Some(target) = version.levels.get(task.target_level as usize - 1) {
                inputs.extend(target.iter().cloned());
            }
            let deepest = version
                .levels
                .iter()
                .skip(task.target_level as usize)
                .all(Vec::is_empty);
            let input_ids: Vec<u64> = inputs.iter().map(|r| r.handle().file_id).collect();
            let input_bytes: u64 = inputs.iter().map(|r| r.handle().file_bytes).sum();
            let depth_after = task
                .grow_depth_to
                .unwrap_or(version.depth)
                .max(task.target_level);
            let counts =
                post_merge_counts(version, task.source_level, task.target_level, depth_after);
            let filter_bits = self.filter_bits_for(&counts, task.target_level);
            let file_id = state.next_file_id;
            state.next_file_id += 1;
            (inputs, input_ids, input_bytes, file_id, deepest, filter_bits)
        };
        let snapshots = self.snapshots.live();
        let cfg = MergeConfig {
            dir: &self.dir,
            file_id,
            target_level: task.target_level,
            block_bytes: self.opts.block_bytes,
            filter_bits_per_entry: filter_bits,
            target_is_deepest: deepest,
            snapshots: &snapshots,
        };
        let out = merge_runs(&inputs, &cfg, &self.cancel)?;
        self.finish_merge(
            task.source_level,
            task.target_level,
            task.grow_depth_to,
            &inputs,
            input_ids,
            input_bytes,
            out,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn finish_merge(
        &self,
        source_level: u32,
        target_level: u32,
        grow_depth_to: Option<u32>,
        inputs: &[Arc<Run>],
        input_ids: Vec<u64>,
        input_bytes: u64,
        out: MergeOutput,
    ) -> Result<()> {
        let output_run = match &out.handle {
            Some(handle) => Some(Run::open(&self.dir, handle.clone())?),
            None => None,
        };
        let mut state = self.state.lock().unwrap();
        let new_depth = grow_depth_to.filter(|d| *d > state.version.depth);
        let last_seq = state.version.last_seq;
        state.manifest.append(&EditMeta {
            added: out.handle.iter().map(|h| (target_level, h.clone())).collect(),
            removed: input_ids.clone(),
            new_depth,
            last_seq,
        })?;
        let next = state.version.publish(&VersionEdit {
            added: output_run.iter().map(|r| (target_level, Arc::clone(r))).collect(),
            removed: input_ids,
            new_depth,
            last_seq: None,
        })?;
        self.refresh_gauges(&next);
        state.version = next;
        for run in inputs {
            run.mark_obsolete();
        }
        let output_bytes = out.handle.as_ref().map_or(0, |h| h.file_bytes);
        self.stats.record_compaction(source_level, output_bytes);
        state.events.push(MaintenanceEvent::Compact {
            source_level,
            target_level,
            input_bytes,
            output_file: out.handle.as_ref().map(|h| h.file_id),
            output_bytes,
        });
        self.maybe_rewrite_manifest(&mut state)
    }

    /// Bits per entry for a run about to be written to `target_level`,
    /// or None for "no filter". Level 1 never gets one, so under the
    /// optimized mode the whole budget serves the deep levels;
    /// `counts[i]` is the entry count level `i + 2` will hold once the
    /// merge lands.
    fn filter_bits_for(&self, counts: &[u64], target_level: u32) -> Option<f64> {
        if target_level < 2 {
            return None;
        }
        match self.opts.filter_mode {
            FilterMode::None => None,
            FilterMode::Uniform { bits_per_entry } => {
                (bits_per_entry > 0.0).then_some(bits_per_entry)
            }
            FilterMode::Optimized { bits_per_entry } => {
                let (c, k) = self.opts.policy.shape();
                let plan = allocate_fprs(counts, c, k, bits_per_entry);
                let bits = plan.bits_per_entry[target_level as usize - 2];
                (bits > 0.0).then_some(bits)
            }
        }
    }

    fn refresh_gauges(&self, version: &Arc<VersionState>) {
        let pinned: u64 = version.levels[0].iter().map(|r| r.pinned_bytes()).sum();
        self.stats
            .set_version_gauges(version.total_file_bytes(), pinned, version.depth);
    }

    fn maybe_rewrite_manifest(&self, state: &mut MemState) -> Result<()> {
        if state.manifest.needs_rewrite() {
            let meta = full_snapshot_meta(&state.version);
            state.manifest.rewrite(&self.dir, &meta)?;
        }
        Ok(())
    }
}

/// Writes one level-1 run from a sealed memtable and loads it pinned.
/// Falls back to on-disk probing when the image cannot be loaded.
fn build_l1_run(
    dir: &Path,
    mem: &Arc<Memtable>,
    file_id: u64,
    block_bytes: usize,
) -> Result<(RunHandle, Arc<Run>, bool)> {
    let mut builder = RunBuilder::new(dir, file_id, 1, block_bytes, None)?;
    let mut it = mem.iter();
    it.seek_to_first();
    while it.valid() {
        builder.add(&InternalEntry { key: it.key().clone(), value: it.value().to_vec() })?;
        it.next();
    }
    let handle = builder.finish()?;
    match Run::open_pinned(dir, handle.clone()) {
        Ok(run) => Ok((handle.clone(), run, false)),
        Err(Error::Io { .. }) => {
            let run = Run::open(dir, handle.clone())?;
            Ok((handle.clone(), run, true))
        }
        Err(err) => Err(err),
    }
}

/// Entry counts per deep level (index 0 is level 2) as they will stand
/// once `source_level` has merged into `target_level`.
fn post_merge_counts(
    version: &VersionState,
    source_level: u32,
    target_level: u32,
    depth: u32,
) -> Vec<u64> {
    let entries_at = |level: u32| -> u64 {
        version
            .levels
            .get(level as usize - 1)
            .map(|runs| runs.iter().map(|r| r.handle().entry_count).sum())
            .unwrap_or(0)
    };
    let mut counts = vec![0u64; depth as usize - 1];
    for level in 2..=depth {
        counts[level as usize - 2] = entries_at(level);
    }
    counts[target_level as usize - 2] += entries_at(source_level);
    if source_level >= 2 {
        counts[source_level as usize - 2] = 0;
    }
    counts
}

/// A single manifest record that reproduces `version` from scratch.
fn full_snapshot_meta(version: &VersionState) -> EditMeta {
    let mut added = Vec::new();
    for (idx, level) in version.levels.iter().enumerate() {
        let level_no = idx as u32 + 1;
        if level_no == 1 {
            // Replay inserts level-1 runs at the front one at a time,
            // so the snapshot lists them oldest first.
            for run in level.iter().rev() {
                added.push((1, run.handle().clone()));
            }
        } else {
            for run in level {
                added.push((level_no, run.handle().clone()));
            }
        }
    }
    EditMeta {
        added,
        removed: vec![],
        new_depth: Some(version.depth),
        last_seq: version.last_seq,
    }
}

/// Replays manifest records into the level layout, then opens the
/// surviving runs. Returns the rebuilt version and the largest file id
/// ever mentioned.
fn rebuild_version(
    dir: &Path,
    load: &ManifestLoad,
    pin_fallbacks: &mut u64,
) -> Result<(Arc<VersionState>, u64)> {
    let mut levels: Vec<Vec<RunHandle>> = vec![Vec::new()];
    let mut depth = 1u32;
    let mut last_seq = 0u64;
    let mut max_file_id = 0u64;
    for record in &load.records {
        if let Some(d) = record.new_depth {
            depth = depth.max(d);
            if levels.len() < depth as usize {
                levels.resize(depth as usize, Vec::new());
            }
        }
        for id in &record.removed {
            for level in &mut levels {
                level.retain(|h| h.file_id != *id);
            }
        }
        for (level_no, handle) in &record.added {
            max_file_id = max_file_id.max(handle.file_id);
            depth = depth.max(*level_no);
            if levels.len() < depth as usize {
                levels.resize(depth as usize, Vec::new());
            }
            if *level_no == 1 {
                levels[0].insert(0, handle.clone());
            } else {
                levels[*level_no as usize - 1].push(handle.clone());
            }
        }
        last_seq = last_seq.max(record.last_seq);
    }

    let mut added: Vec<(u32, Arc<Run>)> = Vec::new();
    for (idx, handles) in levels.iter().enumerate() {
        let level_no = idx as u32 + 1;
        if level_no == 1 {
            for handle in handles.iter().rev() {
                let run = match Run::open_pinned(dir, handle.clone()) {
                    Ok(run) => run,
                    Err(Error::Io { .. }) => {
                        *pin_fallbacks += 1;
                        Run::open(dir, handle.clone())?
                    }
                    Err(err) => return Err(err),
                };
                added.push((1, run));
            }
        } else {
            for handle in handles {
                added.push((level_no, Run::open(dir, handle.clone())?));
            }
        }
    }
    let version = VersionState::empty(depth).publish(&VersionEdit {
        added,
        last_seq: Some(last_seq),
        ..Default::default()
    })?;
    Ok((version, max_file_id))
}

/// Manifest generations other than `keep` are debris from an
/// interrupted rewrite, as is a stranded CURRENT.tmp.
fn remove_stray_manifests(dir: &Path, keep: u64) {
    let Ok(entries) = std::fs::read_dir(dir) else { return };
    for entry in entries.flatten() {
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_prefix("MANIFEST-") {
            if stem.parse::<u64>().is_ok_and(|gen| gen != keep) {
                let _ = std::fs::remove_file(entry.path());
            }
        } else if name == "CURRENT.tmp" {
            let _ = std::fs::remove_file(entry.path());
        }
    }
}
