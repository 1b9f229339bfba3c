//! Amplification counters and latency histograms.
//!
//! Counters live in a shared registry of atomics. Multi-field updates
//! bump an epoch before and after so that [`StatsRegistry::snapshot`]
//! can retry until it observes a torn-free copy.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

pub const MAX_LEVELS: usize = 64;

pub struct StatsRegistry {
    epoch: AtomicU64,
    user_bytes_ingested: AtomicU64,
    flush_bytes_written: AtomicU64,
    compaction_bytes_written: AtomicU64,
    per_level_compaction_count: [AtomicU64; MAX_LEVELS],
    disk_probes_point: AtomicU64,
    disk_probes_range: AtomicU64,
    filter_checks: AtomicU64,
    filter_negatives: AtomicU64,
    filter_false_positives: AtomicU64,
    reads_from_memtable: AtomicU64,
    reads_from_pinned: AtomicU64,
    reads_from_disk_levels: AtomicU64,
    stall_count: AtomicU64,
    physical_bytes: AtomicU64,
    logical_bytes_estimate: AtomicU64,
    pinned_bytes: AtomicU64,
    depth: AtomicU64,
}

/// Point-in-time copy of every counter, plus the derived ratios.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub user_bytes_ingested: u64,
    pub flush_bytes_written: u64,
    pub compaction_bytes_written: u64,
    pub per_level_compaction_count: Vec<u64>,
    pub disk_probes_point: u64,
    pub disk_probes_range: u64,
    pub filter_checks: u64,
    pub filter_negatives: u64,
    pub filter_false_positives: u64,
    pub reads_from_memtable: u64,
    pub reads_from_pinned: u64,
    pub reads_from_disk_levels: u64,
    pub stall_count: u64,
    pub physical_bytes: u64,
    pub logical_bytes_estimate: u64,
    pub pinned_bytes: u64,
    pub depth: u64,
}

impl Default for StatsRegistry {
    fn default() -> Self {
        StatsRegistry {
            epoch: AtomicU64::new(0),
            user_bytes_ingested: AtomicU64::new(0),
            flush_bytes_written: AtomicU64::new(0),
            compaction_bytes_written: AtomicU64::new(0),
            per_level_compaction_count: std::array::from_fn(|_| AtomicU64::new(0)),
            disk_probes_point: AtomicU64::new(0),
            disk_probes_range: AtomicU64::new(0),
            filter_checks: AtomicU64::new(0),
            filter_negatives: AtomicU64::new(0),
            filter_false_positives: AtomicU64::new(0),
            reads_from_memtable: AtomicU64::new(0),
            reads_from_pinned: AtomicU64::new(0),
            reads_from_disk_levels: AtomicU64::new(0),
            stall_count: AtomicU64::new(0),
            physical_bytes: AtomicU64::new(0),
            logical_bytes_estimate: AtomicU64::new(0),
            pinned_bytes: AtomicU64::new(0),
            depth: AtomicU64::new(0),
        }
    }
}

impl StatsRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn begin_update(&self) {
        self.epoch.fetch_add(1, Ordering::Relaxed);
        std::sync::atomic::fence(Ordering::Release);
    }

    fn end_update(&self) {
        self.epoch.fetch_add(1, Ordering::Release);
    }

    pub fn record_user_write(&self, bytes: u64) {
        self.user_bytes_ingested.fetch_add(bytes, Ordering::Relaxed);
    }

    pub fn record_flush(&self, file_bytes: u64) {
        self.flush_bytes_written.fetch_add(file_bytes, Ordering::Relaxed);
    }

    pub fn record_compaction(&self, source_level: u32, file_bytes: u64) {
        debug_assert!(source_level >= 1);
        self.begin_update();
        self.compaction_bytes_written.fetch_add(file_bytes, Ordering::Relaxed);
        let idx = (source_level as usize).min(MAX_LEVELS) - 1;
        self.per_level_compaction_count[idx].fetch_add(1, Ordering::Relaxed);
        self.end_update();
    }

    pub fn record_point_probes(&self, disk_reads: u64) {
        self.disk_probes_point.fetch_add(disk_reads, Ordering::Relaxed);
    }

    pub fn record_range_probes(&self, disk_reads: u64) {
        self.disk_probes_range.fetch_add(disk_reads, Ordering::Relaxed);
    }

    pub fn record_filter_check(&self, passed: bool, key_was_present: bool) {
        self.filter_checks.fetch_add(1, Ordering::Relaxed);
        if !passed {
            self.filter_negatives.fetch_add(1, Ordering::Relaxed);
        } else if !key_was_present {
            self.filter_false_positives.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn record_read_source(&self, source: ReadSource) {
        let counter = match source {
            ReadSource::Memtable => &self.reads_from_memtable,
            ReadSource::PinnedLevelOne => &self.reads_from_pinned,
            ReadSource::DiskLevel => &self.reads_from_disk_levels,
        };
        counter.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_stall(&self) {
        self.stall_count.fetch_add(1, Ordering::Relaxed);
    }

    /// Gauges move together: physical bytes, pinned bytes and depth
    /// describe one published version.
    pub fn set_version_gauges(&self, physical_bytes: u64, pinned_bytes: u64, depth: u32) {
        self.begin_update();
        self.physical_bytes.store(physical_bytes, Ordering::Relaxed);
        self.pinned_bytes.store(pinned_bytes, Ordering::Relaxed);
        self.depth.store(depth as u64, Ordering::Relaxed);
        self.end_update();
    }

    pub fn set_logical_bytes(&self, bytes: u64) {
        self.logical_bytes_estimate.store(bytes, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        loop {
            let before = self.epoch.load(Ordering::Acquire);
            if before % 2 == 1 {
                std::hint::spin_loop();
                continue;
            }
            let snap = self.read_all();
            std::sync::atomic::fence(Ordering::Acquire);
            if self.epoch.load(Ordering::Relaxed) == before {
                return snap;
            }
        }
    }

    fn read_all(&self) -> StatsSnapshot {
        let mut counts: Vec<u64> = self
            .per_level_compaction_count
            .iter()
            .map(|c| c.load(Ordering::Relaxed))
            .collect();
        while counts.last() == Some(&0) {
            counts.pop();
        }
        StatsSnapshot {
            user_bytes_ingested: self.user_bytes_ingested.load(Ordering::Relaxed),
            flush_bytes_written: self.flush_bytes_written.load(Ordering::Relaxed),
            compaction_bytes_written: self.compaction_bytes_written.load(Ordering::Relaxed),
            per_level_compaction_count: counts,
            disk_probes_point: self.disk_probes_point.load(Ordering::Relaxed),
            disk_probes_range: self.disk_probes_range.load(Ordering::Relaxed),
            filter_checks: self.filter_checks.load(Ordering::Relaxed),
            filter_negatives: self.filter_negatives.load(Ordering::Relaxed),
            filter_false_positives: self.filter_false_positives.load(Ordering::Relaxed),
            reads_from_memtable: self.reads_from_memtable.load(Ordering::Relaxed),
            reads_from_pinned: self.reads_from_pinned.load(Ordering::Relaxed),
            reads_from_disk_levels: self.reads_from_disk_levels.load(Ordering::Relaxed),
            stall_count: self.stall_count.load(Ordering::Relaxed),
            physical_bytes: self.physical_bytes.load(Ordering::Relaxed),
            logical_bytes_estimate: self.logical_bytes_estimate.load(Ordering::Relaxed),
            pinned_bytes: self.pinned_bytes.load(Ordering::Relaxed),
            depth: self.depth.load(Ordering::Relaxed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadSource {
    Memtable,
    PinnedLevelOne,
    DiskLevel,
}

impl StatsSnapshot {
    /// Bytes written to files per user byte ingested; 0 before any
    /// flush has happened.
    pub fn write_amplification(&self) -> f64 {
        if self.user_bytes_ingested == 0 {
            return 0.0;
        }
        (self.flush_bytes_written + self.compaction_bytes_written) as f64
            / self.user_bytes_ingested as f64
    }

    pub fn space_amplification(&self) -> f64 {
        if self.logical_bytes_estimate == 0 {
            return 0.0;
        }
        self.physical_bytes as f64 / self.logical_bytes_estimate as f64
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("user_bytes_ingested", self.user_bytes_ingested.to_string());
        kv("flush_bytes_written", self.flush_bytes_written.to_string());
        kv("compaction_bytes_written", self.compaction_bytes_written.to_string());
        kv("write_amplification", format!("{:.4}", self.write_amplification()));
        kv("space_amplification", format!("{:.4}", self.space_amplification()));
        kv("physical_bytes", self.physical_bytes.to_string());
        kv("logical_bytes_estimate", self.logical_bytes_estimate.to_string());
        kv("pinned_bytes", self.pinned_bytes.to_string());
        kv("depth", self.depth.to_string());
        kv("disk_probes_point", self.disk_probes_point.to_string());
        kv("disk_probes_range", self.disk_probes_range.to_string());
        kv("filter_checks", self.filter_checks.to_string());
        kv("filter_negatives", self.filter_negatives.to_string());
        kv("filter_false_positives", self.filter_false_positives.to_string());
        kv("reads_from_memtable", self.reads_from_memtable.to_string());
        kv("reads_from_pinned", self.reads_from_pinned.to_string());
        kv("reads_from_disk_levels", self.reads_from_disk_levels.to_string());
        kv("stall_count", self.stall_count.to_string());
        let counts: Vec<String> =
            self.per_level_compaction_count.iter().map(|c| c.to_string()).collect();
        kv("per_level_compaction_count", counts.join(";"));
        out
    }

    pub fn csv_header() -> &'static str {
        "user_bytes,flush_bytes,compaction_bytes,write_amp,space_amp,physical_bytes,\
         logical_bytes,pinned_bytes,depth,disk_probes_point,disk_probes_range,stall_count"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:.4},{:.4},{},{},{},{},{},{},{}",
            self.user_bytes_ingested,
            self.flush_bytes_written,
            self.compaction_bytes_written,
            self.write_amplification(),
            self.space_amplification(),
            self.physical_bytes,
            self.logical_bytes_estimate,
            self.pinned_bytes,
            self.depth,
            self.disk_probes_point,
            self.disk_probes_range,
            self.stall_count
        )
    }
}

const HISTOGRAM_BASE: f64 = 1.25;
const HISTOGRAM_MIN_MICROS: f64 = 1.0;
const HISTOGRAM_MAX_MICROS: f64 = 10_000_000.0;

/// Geometric latency buckets, powers of 1.25 from 1 µs to 10 s.
#[derive(Clone, Debug)]
pub struct LatencyHistogram {
    buckets: Vec<u64>,
    count: u64,
    sum_micros: u64,
}

fn bucket_count() -> usize {
    ((HISTOGRAM_MAX_MICROS / HISTOGRAM_MIN_MICROS).ln() / HISTOGRAM_BASE.ln()).ceil() as usize + 1
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        Self { buckets: vec![0; bucket_count()], count: 0, sum_micros: 0 }
    }
}

impl LatencyHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    fn bucket_index(&self, micros: u64) -> usize {
        if micros <= 1 {
            return 0;
        }
        let idx = ((micros as f64).ln() / HISTOGRAM_BASE.ln()).floor() as usize;
        idx.min(self.buckets.len() - 1)
    }

    pub fn record(&mut self, micros: u64) {
        let idx = self.bucket_index(micros);
        self.buckets[idx] += 1;
        self.count += 1;
        self.sum_micros += micros;
    }

    pub fn merge(&mut self, other: &LatencyHistogram) {
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            *a += b;
        }
        self.count += other.count;
        self.sum_micros += other.sum_micros;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn avg_micros(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        self.sum_micros as f64 / self.count as f64
    }

    /// Upper bound of the bucket holding the q-th sample.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::Config("quantile of an empty histogram".into()));
        }
        assert!((0.0..=1.0).contains(&q), "quantile out of range: {q}");
        let rank = ((q * self.count as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (idx, n) in self.buckets.iter().enumerate() {
            seen += n;
            if seen >= rank {
                return Ok(HISTOGRAM_BASE.powi(idx as i32 + 1));
            }
        }
        Ok(HISTOGRAM_BASE.powi(self.buckets.len() as i32))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_registry_is_all_zero() {
        let stats = StatsRegistry::new().snapshot();
        assert_eq!(stats, StatsSnapshot::default());
        assert_eq!(stats.write_amplification(), 0.0);
        assert_eq!(stats.space_amplification(), 0.0);
    }

    #[test]
    fn write_amp_counts_flush_and_compaction() {
        let reg = StatsRegistry::new();
        reg.record_user_write(100);
        reg.record_flush(110);
        reg.record_compaction(1, 90);
        let snap = reg.snapshot();
        assert_eq!(snap.write_amplification(), 2.0);
        assert_eq!(snap.per_level_compaction_count, vec![1]);
    }

    #[test]
    fn per_level_counts_index_by_source() {
        let reg = StatsRegistry::new();
        reg.record_compaction(1, 10);
        reg.record_compaction(1, 10);
        reg.record_compaction(3, 10);
        assert_eq!(reg.snapshot().per_level_compaction_count, vec![2, 0, 1]);
    }

    #[test]
    fn snapshot_is_torn_free_under_writers() {
        use std::sync::Arc;
        let reg = Arc::new(StatsRegistry::new());
        let writer = {
            let reg = Arc::clone(&reg);
            std::thread::spawn(move || {
                for i in 0..20_000u64 {
                    reg.record_compaction(1 + (i % 3) as u32, 7);
                }
            })
        };
        while !writer.is_finished() {
            let snap = reg.snapshot();
            let merges: u64 = snap.per_level_compaction_count.iter().sum();
            assert_eq!(snap.compaction_bytes_written, merges * 7);
        }
        writer.join().unwrap();
        let snap = reg.snapshot();
        assert_eq!(snap.compaction_bytes_written, 20_000 * 7);
    }

    #[test]
    fn filter_accounting() {
        let reg = StatsRegistry::new();
        reg.record_filter_check(false, false);
        reg.record_filter_check(true, true);
        reg.record_filter_check(true, false);
        let snap = reg.snapshot();
        assert_eq!(snap.filter_checks, 3);
        assert_eq!(snap.filter_negatives, 1);
        assert_eq!(snap.filter_false_positives, 1);
    }

    #[test]
    fn space_amp_uses_gauges() {
        let reg = StatsRegistry::new();
        reg.set_version_gauges(150, 30, 3);
        reg.set_logical_bytes(100);
        let snap = reg.snapshot();
        assert_eq!(snap.space_amplification(), 1.5);
        assert_eq!(snap.pinned_bytes, 30);
        assert_eq!(snap.depth, 3);
    }

    #[test]
    fn text_dump_round_trips_key_values() {
        let reg = StatsRegistry::new();
        reg.record_user_write(42);
        let text = reg.snapshot().to_text();
        assert!(text.contains("user_bytes_ingested=42\n"));
        for line in text.lines() {
            assert_eq!(line.split('=').count(), 2, "malformed line {line}");
        }
        let row = reg.snapshot().to_csv_row();
        assert_eq!(row.split(',').count(), StatsSnapshot::csv_header().split(',').count());
    }

    #[test]
    fn histogram_single_sample() {
        let mut hist = LatencyHistogram::new();
        hist.record(100);
        let q = hist.quantile(0.5).unwrap();
        assert!((100.0..=125.0 + 1e-9).contains(&q), "q={q}");
        assert_eq!(hist.avg_micros(), 100.0);
    }

    #[test]
    fn histogram_uniform_quantiles() {
        let mut hist = LatencyHistogram::new();
        for us in 1..=1000u64 {
            hist.record(us);
        }
        let q90 = hist.quantile(0.9).unwrap();
        assert!((900.0 / HISTOGRAM_BASE..=900.0 * HISTOGRAM_BASE).contains(&q90), "q90={q90}");
        let q100 = hist.quantile(1.0).unwrap();
        assert!(q100 >= 1000.0);
        let mut prev = 0.0;
        for step in 0..=10 {
            let q = hist.quantile(step as f64 / 10.0).unwrap();
            assert!(q >= prev, "quantile not monotone at {step}");
            prev = q;
        }
    }

    #[test]
    fn histogram_empty_quantile_errors() {
        assert!(LatencyHistogram::new().quantile(0.5).is_err());
    }

    #[test]
    fn histogram_clamps_extremes() {
        let mut hist = LatencyHistogram::new();
        hist.record(0);
        hist.record(u64::MAX / 2);
        assert_eq!(hist.count(), 2);
        assert!(hist.quantile(0.0).unwrap() <= HISTOGRAM_BASE);
        assert!(hist.quantile(1.0).unwrap() >= HISTOGRAM_MAX_MICROS / HISTOGRAM_BASE);
    }

    #[test]
    fn histogram_merge_accumulates() {
        let mut a = LatencyHistogram::new();
        let mut b = LatencyHistogram::new();
        a.record(10);
        b.record(1000);
        b.record(2000);
        a.merge(&b);
        assert_eq!(a.count(), 3);
        assert_eq!(a.avg_micros(), (10.0 + 1000.0 + 2000.0) / 3.0);
    }
}
