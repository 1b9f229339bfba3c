use crate::error::{Error, Result};

/// How on-disk level capacities relate to each other.
///
/// `Garnering` widens the ratio between consecutive levels as depth
/// grows: `C_i / C_{i-1} = k / c^(L-i)` for shape parameters
/// `c in (0.5, 1]` and `k > 1`. With `c = 1` it degenerates to classic
/// leveling with a fixed fanout of `k`; `Leveling { t }` is that same
/// shape spelled directly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MergePolicy {
    Garnering { c: f64, k: f64 },
    Leveling { t: u32 },
}

impl MergePolicy {
    /// Both policies expressed as the `(c, k)` pair capacity math runs on.
    pub fn shape(&self) -> (f64, f64) {
        match *self {
            MergePolicy::Garnering { c, k } => (c, k),
            MergePolicy::Leveling { t } => (1.0, t as f64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MergePolicy::Garnering { c, k } => {
                if !(c > 0.5 && c <= 1.0) {
                    return Err(Error::Config(format!("garnering c must be in (0.5, 1], got {c}")));
                }
                if !(k > 1.0) || !k.is_finite() {
                    return Err(Error::Config(format!("garnering k must be > 1, got {k}")));
                }
            }
            MergePolicy::Leveling { t } => {
                if t < 2 {
                    return Err(Error::Config(format!("leveling t must be >= 2, got {t}")));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            MergePolicy::Garnering { .. } => "garnering",
            MergePolicy::Leveling { .. } => "leveling",
        }
    }
}

/// Bloom filter allocation across levels. Level 1 never carries a
/// filter: its runs are memory-resident and probing them costs no I/O.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FilterMode {
    /// No filters anywhere.
    None,
    /// The same bits-per-entry on every filtered level.
    Uniform { bits_per_entry: f64 },
    /// A total bits-per-entry budget split so deeper (bigger) levels get
    /// higher false-positive rates; see [`crate::filters::allocate_fprs`].
    Optimized { bits_per_entry: f64 },
}

/// When WAL appends reach stable storage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyncPolicy {
    /// fsync after every write.
    EveryWrite,
    /// fsync at most once per interval, piggybacked on writes.
    EveryMillis(u64),
    /// Leave flushing to the OS.
    Os,
}

#[derive(Clone, Debug)]
pub struct Options {
    pub policy: MergePolicy,
    /// Memtable budget B; also the write-buffer unit level capacities
    /// are expressed in.
    pub memtable_bytes: u64,
    /// Level-1 run count at which writes stall.
    pub stop_writes_trigger: usize,
    /// Level-1 run count that triggers compaction into level 2.
    pub l0_compaction_trigger: usize,
    /// Target size of one sorted-run data block.
    pub block_bytes: usize,
    pub filter_mode: FilterMode,
    pub sync: SyncPolicy,
    /// Run flush/compaction on a background thread. With `false`,
    /// maintenance happens inline on the writing thread, which makes
    /// scheduling fully deterministic.
    pub background_worker: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            policy: MergePolicy::Garnering { c: 0.8, k: 2.0 },
            memtable_bytes: 4 << 20,
            stop_writes_trigger: 12,
            l0_compaction_trigger: 4,
            block_bytes: 4096,
            filter_mode: FilterMode::None,
            sync: SyncPolicy::Os,
            background_worker: true,
        }
    }
}

impl Options {
    pub fn validate(&self) -> Result<()> {
        self.policy.validate()?;
        if self.memtable_bytes < 4096 {
            return Err(Error::Config("memtable_bytes must be at least 4096".into()));
        }
        if self.block_bytes < 128 {
            return Err(Error::Config("block_bytes must be at least 128".into()));
        }
        if self.l0_compaction_trigger < 1 {
            return Err(Error::Config("l0_compaction_trigger must be >= 1".into()));
        }
        if self.stop_writes_trigger < self.l0_compaction_trigger {
            return Err(Error::Config(
                "stop_writes_trigger must be >= l0_compaction_trigger".into(),
            ));
        }
        if let FilterMode::Uniform { bits_per_entry } | FilterMode::Optimized { bits_per_entry } =
            self.filter_mode
        {
            if !(bits_per_entry > 0.0) || !bits_per_entry.is_finite() {
                return Err(Error::Config(format!(
                    "filter bits_per_entry must be positive, got {bits_per_entry}"
                )));
            }
        }
        Ok(())
    }
}
