//! Executes db_bench operations and YCSB workloads against one store
//! instance, timing every operation and tracking the exact logical
//! data size so amplification ratios in reports are trustworthy.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use garnerdb::config::MergePolicy;
use garnerdb::stats::LatencyHistogram;
use garnerdb::{Options, Result, StatsSnapshot, Store};
use rand::rngs::StdRng;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::workload::{
    db_bench_key, fill_value, ycsb_key, KeyDistribution, Latest, OpKind, WorkloadSpec,
    Zipfian, YCSB_ZIPFIAN_THETA,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DbBench {
    FillSeq,
    FillRandom,
    ReadRandom,
    SeekRandom,
    SeekRandomNext(u64),
}

impl DbBench {
    pub fn parse(name: &str) -> Option<DbBench> {
        Some(match name.trim().to_ascii_lowercase().as_str() {
            "fillseq" => DbBench::FillSeq,
            "fillrandom" => DbBench::FillRandom,
            "readrandom" => DbBench::ReadRandom,
            "seekrandom" => DbBench::SeekRandom,
            "seekrandomnext10" => DbBench::SeekRandomNext(10),
            "seekrandomnext100" => DbBench::SeekRandomNext(100),
            _ => return None,
        })
    }

    pub fn label(self) -> String {
        match self {
            DbBench::FillSeq => "fillseq".into(),
            DbBench::FillRandom => "fillrandom".into(),
            DbBench::ReadRandom => "readrandom".into(),
            DbBench::SeekRandom => "seekrandom".into(),
            DbBench::SeekRandomNext(n) => format!("seekrandomnext{n}"),
        }
    }
}

/// One finished benchmark phase.
#[derive(Clone, Debug)]
pub struct BenchReport {
    pub benchmark: String,
    pub policy: String,
    pub params: String,
    pub ops: u64,
    pub wall_secs: f64,
    pub avg_us: f64,
    pub p90_us: f64,
    pub p99_us: f64,
    pub p999_us: f64,
    pub throughput_kops: f64,
    pub write_amp: f64,
    pub space_amp: f64,
    /// Data-block reads performed by this phase's operations.
    pub disk_probes: u64,
    pub op_counts: Vec<(&'static str, u64)>,
    pub ending_stats: StatsSnapshot,
}

/// A store plus the bookkeeping shared by consecutive benchmark
/// phases: the op stream RNG and the exact live logical byte count.
pub struct BenchSession {
    store: Store,
    policy: String,
    params: String,
    rng: ChaCha8Rng,
    logical: HashMap<Vec<u8>, u64>,
    logical_bytes: u64,
    ycsb_records: u64,
    value_buf: Vec<u8>,
}

fn policy_labels(policy: &MergePolicy) -> (String, String) {
    match policy {
        MergePolicy::Garnering { c, k } => ("garnering".into(), format!("c={c};k={k}")),
        MergePolicy::Leveling { t } => ("leveling".into(), format!("t={t}")),
    }
}

impl BenchSession {
    /// Opens (or reopens) the store. Reopening an existing database
    /// scans it once so logical-size accounting and the YCSB record
    /// count carry across processes.
    pub fn open(dir: &Path, opts: Options, seed: u64) -> Result<BenchSession> {
        let (policy, params) = policy_labels(&opts.policy);
        let store = Store::open(dir, opts)?;
        let mut session = BenchSession {
            store,
            policy,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
            logical: HashMap::new(),
            logical_bytes: 0,
            ycsb_records: 0,
            value_buf: Vec::new(),
        };
        let mut it = session.store.iter_from(b"")?;
        while it.valid() {
            let key = it.key().to_vec();
            let bytes = (key.len() + it.value().len()) as u64;
            if key.starts_with(b"user") {
                session.ycsb_records += 1;
            }
            session.logical_bytes += bytes;
            session.logical.insert(key, bytes);
            it.next()?;
        }
        session.store.set_logical_bytes(session.logical_bytes);
        Ok(session)
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn logical_bytes(&self) -> u64 {
        self.logical_bytes
    }

    pub fn ycsb_records(&self) -> u64 {
        self.ycsb_records
    }

    pub fn refresh_logical_gauge(&self) {
        self.store.set_logical_bytes(self.logical_bytes);
    }

    fn track_write(&mut self, key: &[u8], value_len: usize) {
        let bytes = (key.len() + value_len) as u64;
        match self.logical.insert(key.to_vec(), bytes) {
            Some(old) => self.logical_bytes = self.logical_bytes - old + bytes,
            None => self.logical_bytes += bytes,
        }
    }

    fn put_random_value(&mut self, key: &[u8], value_bytes: usize) -> Result<()> {
        let mut buf = std::mem::take(&mut self.value_buf);
        fill_value(&mut self.rng, value_bytes, &mut buf);
        let res = self.store.put(key, &buf);
        self.value_buf = buf;
        res?;
        self.track_write(key, value_bytes);
        Ok(())
    }

    fn finish_report(
        &self,
        benchmark: String,
        before: &StatsSnapshot,
        hist: &LatencyHistogram,
        wall_secs: f64,
        op_counts: Vec<(&'static str, u64)>,
    ) -> BenchReport {
        self.refresh_logical_gauge();
        let after = self.store.stats();
        let ops = hist.count();
        let probes_before = before.disk_probes_point + before.disk_probes_range;
        let probes_after = after.disk_probes_point + after.disk_probes_range;
        BenchReport {
            benchmark,
            policy: self.policy.clone(),
            params: self.params.clone(),
            ops,
            wall_secs,
            avg_us: if ops == 0 { 0.0 } else { hist.avg_micros() },
            p90_us: hist.quantile(0.90).unwrap_or(0.0),
            p99_us: hist.quantile(0.99).unwrap_or(0.0),
            p999_us: hist.quantile(0.999).unwrap_or(0.0),
            throughput_kops: if wall_secs > 0.0 {
                ops as f64 / wall_secs / 1000.0
            } else {
                0.0
            },
            write_amp: after.write_amplification(),
            space_amp: after.space_amplification(),
            disk_probes: probes_after - probes_before,
            op_counts,
            ending_stats: after,
        }
    }

    /// Runs one db_bench operation type for `n` operations. Keys are
    /// drawn from `0..n`, db_bench style: reads and seeks target the
    /// same keyspace a fill of the same `n` populates.
    pub fn run_db_bench(
        &mut self,
        op: DbBench,
        n: u64,
        value_bytes: usize,
    ) -> Result<BenchReport> {
        let before = self.store.stats();
        let mut hist = LatencyHistogram::new();
        let mut writes = 0u64;
        let mut reads = 0u64;
        let mut seeks = 0u64;
        let started = Instant::now();
        for i in 0..n {
            let t0 = Instant::now();
            match op {
                DbBench::FillSeq => {
                    self.put_random_value(&db_bench_key(i), value_bytes)?;
                    writes += 1;
                }
                DbBench::FillRandom => {
                    let idx = self.rng.random_range(0..n);
                    self.put_random_value(&db_bench_key(idx), value_bytes)?;
                    writes += 1;
                }
                DbBench::ReadRandom => {
                    let idx = self.rng.random_range(0..n);
                    let _ = self.store.get(&db_bench_key(idx))?;
                    reads += 1;
                }
                DbBench::SeekRandom => {
                    let idx = self.rng.random_range(0..n);
                    let it = self.store.iter_from(&db_bench_key(idx))?;
                    if it.valid() {
                        std::hint::black_box((it.key(), it.value()));
                    }
                    seeks += 1;
                }
                DbBench::SeekRandomNext(steps) => {
                    let idx = self.rng.random_range(0..n);
                    let mut it = self.store.iter_from(&db_bench_key(idx))?;
                    let mut left = steps;
                    while it.valid() && left > 0 {
                        std::hint::black_box((it.key(), it.value()));
                        it.next()?;
                        left -= 1;
                    }
                    seeks += 1;
                }
            }
            hist.record(t0.elapsed().as_micros() as u64);
        }
        let wall = started.elapsed().as_secs_f64();
        let mut op_counts = Vec::new();
        if writes > 0 {
            op_counts.push(("write", writes));
        }
        if reads > 0 {
            op_counts.push(("read", reads));
        }
        if seeks > 0 {
            op_counts.push(("seek", seeks));
        }
        Ok(self.finish_report(op.label(), &before, &hist, wall, op_counts))
    }

    /// Runs one YCSB workload. `spec.record_count` must match the
    /// loaded population for the request distributions to make sense;
    /// the Load workload populates exactly that many records.
    pub fn run_ycsb(&mut self, spec: &WorkloadSpec) -> Result<BenchReport> {
        spec.validate().map_err(garnerdb::Error::Config)?;
        let before = self.store.stats();
        let mut hist = LatencyHistogram::new();
        let mut counts: Vec<(&'static str, u64)> = Vec::new();
        let mut bump = |kind: OpKind| {
            let name = kind.name();
            match counts.iter_mut().find(|(n, _)| *n == name) {
                Some((_, c)) => *c += 1,
                None => counts.push((name, 1)),
            }
        };

        let mut zipf = Zipfian::new(spec.record_count.max(1), YCSB_ZIPFIAN_THETA);
        let mut latest = Latest::new(spec.record_count.max(1));
        if spec.key_distribution == KeyDistribution::Sequential {
            // The load phase: straight inserts in key order.
            let started = Instant::now();
            for i in 0..spec.operation_count {
                let t0 = Instant::now();
                self.put_random_value(&ycsb_key(i), spec.value_bytes)?;
                hist.record(t0.elapsed().as_micros() as u64);
                bump(OpKind::Insert);
            }
            self.ycsb_records = self.ycsb_records.max(spec.operation_count);
            let wall = started.elapsed().as_secs_f64();
            return Ok(self.finish_report(spec.name.into(), &before, &hist, wall, counts));
        }

        if self.ycsb_records < spec.record_count {
            return Err(garnerdb::Error::Config(format!(
                "workload {} expects {} records but the store holds {}; run the load first",
                spec.name, spec.record_count, self.ycsb_records
            )));
        }

        let started = Instant::now();
        for _ in 0..spec.operation_count {
            let kind = spec.pick_op(&mut self.rng);
            let key_idx = match (kind, spec.key_distribution) {
                (OpKind::Insert, _) => self.ycsb_records,
                (_, KeyDistribution::Latest) => latest.sample(&mut self.rng),
                (_, KeyDistribution::Zipfian) => zipf.sample(&mut self.rng),
                (_, KeyDistribution::UniformRandom) => {
                    self.rng.random_range(0..self.ycsb_records)
                }
                (_, KeyDistribution::Sequential) => unreachable!(),
            };
            let key = ycsb_key(key_idx);
            let t0 = Instant::now();
            match kind {
                OpKind::Read => {
                    std::hint::black_box(self.store.get(&key)?);
                }
                OpKind::Update => {
                    self.put_random_value(&key, spec.value_bytes)?;
                }
                OpKind::Insert => {
                    self.put_random_value(&key, spec.value_bytes)?;
                    self.ycsb_records += 1;
                    zipf.extend_to(self.ycsb_records);
                    latest.extend_to(self.ycsb_records);
                }
                OpKind::Scan => {
                    let len = self.rng.random_range(1..=spec.scan_max_len);
                    let mut it = self.store.iter_from(&key)?;
                    let mut left = len;
                    while it.valid() && left > 0 {
                        std::hint::black_box((it.key(), it.value()));
                        it.next()?;
                        left -= 1;
                    }
                }
                OpKind::ReadModifyWrite => {
                    std::hint::black_box(self.store.get(&key)?);
                    self.put_random_value(&key, spec.value_bytes)?;
                }
            }
            hist.record(t0.elapsed().as_micros() as u64);
            bump(kind);
        }
        let wall = started.elapsed().as_secs_f64();
        Ok(self.finish_report(spec.name.into(), &before, &hist, wall, counts))
    }
}

/// Deterministic standalone value generator, handy for tests that need
/// values without a session.
pub fn deterministic_value(seed: u64, len: usize) -> Vec<u8> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut buf = vec![0u8; len];
    rng.fill_bytes(&mut buf);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use garnerdb::config::Options;
    use tempfile::tempdir;

    fn quick_opts() -> Options {
        Options {
            memtable_bytes: 256 << 10,
            background_worker: false,
            ..Options::default()
        }
    }

    fn scan_pairs(store: &Store) -> Vec<(Vec<u8>, Vec<u8>)> {
        let mut it = store.iter_from(b"").unwrap();
        let mut out = Vec::new();
        while it.valid() {
            out.push((it.key().to_vec(), it.value().to_vec()));
            it.next().unwrap();
        }
        out
    }

    #[test]
    fn benchmark_names_round_trip() {
        for name in [
            "fillseq",
            "fillrandom",
            "readrandom",
            "seekrandom",
            "seekrandomnext10",
            "seekrandomnext100",
        ] {
            let op = DbBench::parse(name).unwrap();
            assert_eq!(op.label(), name);
        }
        assert!(DbBench::parse("fillsequential").is_none());
    }

    #[test]
    fn fixed_seed_reproduces_identical_logical_contents() {
        let run = || {
            let dir = tempdir().unwrap();
            let mut s = BenchSession::open(dir.path(), quick_opts(), 7).unwrap();
            s.run_db_bench(DbBench::FillRandom, 4000, 64).unwrap();
            let pairs = scan_pairs(s.store());
            (pairs, s.logical_bytes())
        };
        let (a, la) = run();
        let (b, lb) = run();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn logical_accounting_matches_a_full_scan() {
        let dir = tempdir().unwrap();
        let mut s = BenchSession::open(dir.path(), quick_opts(), 3).unwrap();
        s.run_db_bench(DbBench::FillRandom, 3000, 100).unwrap();
        s.run_db_bench(DbBench::FillRandom, 3000, 100).unwrap();
        let scanned: u64 = scan_pairs(s.store())
            .iter()
            .map(|(k, v)| (k.len() + v.len()) as u64)
            .sum();
        assert_eq!(s.logical_bytes(), scanned);
        assert_eq!(s.store().stats().logical_bytes_estimate, scanned);
    }

    #[test]
    fn session_reopen_recovers_logical_state() {
        let dir = tempdir().unwrap();
        let loaded;
        {
            let mut s = BenchSession::open(dir.path(), quick_opts(), 11).unwrap();
            let spec = crate::workload::YcsbWorkload::Load.spec(500, 0);
            s.run_ycsb(&spec).unwrap();
            loaded = s.logical_bytes();
            s.store().flush_memtable().unwrap();
        }
        let s = BenchSession::open(dir.path(), quick_opts(), 11).unwrap();
        assert_eq!(s.ycsb_records(), 500);
        assert_eq!(s.logical_bytes(), loaded);
    }

    #[test]
    fn ycsb_phases_report_the_full_op_mix() {
        let dir = tempdir().unwrap();
        let mut s = BenchSession::open(dir.path(), quick_opts(), 5).unwrap();
        s.run_ycsb(&crate::workload::YcsbWorkload::Load.spec(800, 0)).unwrap();
        for w in [
            crate::workload::YcsbWorkload::A,
            crate::workload::YcsbWorkload::B,
            crate::workload::YcsbWorkload::C,
            crate::workload::YcsbWorkload::D,
            crate::workload::YcsbWorkload::E,
            crate::workload::YcsbWorkload::F,
        ] {
            let report = s.run_ycsb(&w.spec(800, 600)).unwrap();
            let total: u64 = report.op_counts.iter().map(|(_, c)| c).sum();
            assert_eq!(total, 600, "{}", report.benchmark);
            assert_eq!(report.ops, 600);
            assert!(report.throughput_kops > 0.0);
        }
    }

    #[test]
    fn zero_operation_run_mutates_nothing() {
        let dir = tempdir().unwrap();
        let mut s = BenchSession::open(dir.path(), quick_opts(), 9).unwrap();
        s.run_ycsb(&crate::workload::YcsbWorkload::Load.spec(100, 0)).unwrap();
        let before = scan_pairs(s.store());
        let spec = crate::workload::YcsbWorkload::A.spec(100, 0);
        let report = s.run_ycsb(&spec).unwrap();
        assert_eq!(report.ops, 0);
        assert_eq!(report.avg_us, 0.0);
        assert!(report.op_counts.is_empty());
        assert_eq!(scan_pairs(s.store()), before);
    }

    #[test]
    fn mixed_workload_runs_before_load_are_rejected() {
        let dir = tempdir().unwrap();
        let mut s = BenchSession::open(dir.path(), quick_opts(), 13).unwrap();
        let err = s
            .run_ycsb(&crate::workload::YcsbWorkload::C.spec(100, 10))
            .unwrap_err()
            .to_string();
        assert!(err.contains("run the load first"), "{err}");
    }

    #[test]
    fn seek_random_next_walks_forward() {
        let dir = tempdir().unwrap();
        let mut s = BenchSession::open(dir.path(), quick_opts(), 17).unwrap();
        s.run_db_bench(DbBench::FillSeq, 2000, 50).unwrap();
        // Push everything to a deep level so seeks actually touch disk;
        // memtable and pinned level-one hits cost no block reads.
        s.store().compact_full().unwrap();
        let r10 = s.run_db_bench(DbBench::SeekRandomNext(10), 300, 50).unwrap();
        let r100 = s.run_db_bench(DbBench::SeekRandomNext(100), 300, 50).unwrap();
        assert_eq!(r10.op_counts, vec![("seek", 300)]);
        // Walking 10x further reads more blocks.
        assert!(
            r100.disk_probes > r10.disk_probes,
            "next100 {} vs next10 {}",
            r100.disk_probes,
            r10.disk_probes
        );
    }
}
