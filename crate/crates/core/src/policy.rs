//! Level sizing and compaction selection.
//!
//! On-disk levels are numbered 1 (shallowest, multiple possibly
//! overlapping runs, memory-resident) through the declared depth `L`
//! (one run each from level 2 down). Capacities come from
//! `C_i = B * k^i / c^((2L-1-i)*i/2)`, which telescopes to consecutive
//! ratios `C_i / C_{i-1} = k / c^(L-i)`: the fanout *widens* toward the
//! deep levels, keeping the level count near sqrt-of-log rather than
//! log. Every capacity depends on `L`, so growing the tree one level
//! deeper multiplies each `C_i` by `1/c^i` in place; most of the time
//! the freshly enlarged last level absorbs the overflow and no data
//! moves at all.

use crate::config::Options;

/// Capacity in data bytes of `level` when the declared depth is `depth`.
/// Levels are 1-based; `1 <= level <= depth`.
pub fn level_capacity(level: u32, depth: u32, opts: &Options) -> f64 {
    debug_assert!(level >= 1 && level <= depth);
    let (c, k) = opts.policy.shape();
    let b = opts.memtable_bytes as f64;
    let i = level as i32;
    let l = depth as i32;
    b * k.powi(i) / c.powi((2 * l - 1 - i) * i / 2)
}

/// Capacities compare against sizes as whole bytes.
pub fn capacity_floor(level: u32, depth: u32, opts: &Options) -> u64 {
    level_capacity(level, depth, opts).floor() as u64
}

pub fn cumulative_capacity(depth: u32, opts: &Options) -> f64 {
    (1..=depth).map(|i| level_capacity(i, depth, opts)).sum()
}

/// Depth the tree settles at after absorbing `total_bytes`: the smallest
/// `L` whose levels can hold that much in aggregate.
pub fn declared_depth(total_bytes: u64, opts: &Options) -> u32 {
    let mut depth = 1;
    while cumulative_capacity(depth, opts) < total_bytes as f64 {
        depth += 1;
    }
    depth
}

/// Real-valued depth estimate: the root of `C_L(L) = N`. For the
/// widening shape that is the positive root of
/// `(ln(1/c)/2) L^2 + (ln k - ln(1/c)/2) L = ln(N/B)`; for a fixed
/// fanout it collapses to `log_k(N(k-1)/(Bk) + 1)` over the geometric
/// cumulative capacity.
pub fn analytic_depth_estimate(total_bytes: u64, opts: &Options) -> f64 {
    let (c, k) = opts.policy.shape();
    let b = opts.memtable_bytes as f64;
    let n = (total_bytes as f64).max(b);
    if c >= 1.0 {
        return (n * (k - 1.0) / (b * k) + 1.0).ln() / k.ln();
    }
    let a = (1.0 / c).ln() / 2.0;
    let lin = k.ln() - a;
    let target = (n / b).ln();
    let disc = lin * lin + 4.0 * a * target;
    if disc <= 0.0 {
        return 1.0;
    }
    ((-lin + disc.sqrt()) / (2.0 * a)).max(1.0)
}

/// Size and run count of one level as seen by the scheduler;
/// index 0 of a view slice is level 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LevelView {
    pub run_count: usize,
    pub data_bytes: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompactionTask {
    pub source_level: u32,
    pub target_level: u32,
    /// Depth to declare alongside the merge, when the merge pushes past
    /// the current last level.
    pub grow_depth_to: Option<u32>,
}

/// What happens when the last level fills.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LastLevelFull {
    /// Declare one more level; the recomputed capacities absorb the
    /// overflow with no data movement.
    GrewDepth { new_depth: u32 },
    /// Even the enlarged capacity is exceeded: merge the old last level
    /// into the new one.
    CompactLast(CompactionTask),
}

/// Checks the last level against its capacity and decides between
/// growing the declared depth and compacting downward. Returns `None`
/// while the last level still fits.
pub fn on_last_level_full(levels: &[LevelView], depth: u32, opts: &Options) -> Option<LastLevelFull> {
    let last = levels.get(depth as usize - 1).copied().unwrap_or_default();
    if last.data_bytes < capacity_floor(depth, depth, opts) {
        return None;
    }
    let new_depth = depth + 1;
    if last.data_bytes < capacity_floor(depth, new_depth, opts) {
        Some(LastLevelFull::GrewDepth { new_depth })
    } else {
        Some(LastLevelFull::CompactLast(CompactionTask {
            source_level: depth,
            target_level: new_depth,
            grow_depth_to: Some(new_depth),
        }))
    }
}

/// Picks the next merge: level 1 by run count, deeper levels by size,
/// smallest over-capacity level first. The last level is not considered
/// here; [`on_last_level_full`] owns it.
pub fn pick_compaction(levels: &[LevelView], depth: u32, opts: &Options) -> Option<CompactionTask> {
    if levels.first().map_or(0, |l| l.run_count) >= opts.l0_compaction_trigger && depth >= 2 {
        return Some(CompactionTask { source_level: 1, target_level: 2, grow_depth_to: None });
    }
    for level in 2..depth {
        let view = levels.get(level as usize - 1).copied().unwrap_or_default();
        if view.data_bytes >= capacity_floor(level, depth, opts) {
            return Some(CompactionTask {
                source_level: level,
                target_level: level + 1,
                grow_depth_to: None,
            });
        }
    }
    None
}

/// Writes stall once level 1 accumulates this many runs.
pub fn stalls_writes(l1_run_count: usize, opts: &Options) -> bool {
    l1_run_count >= opts.stop_writes_trigger
}
