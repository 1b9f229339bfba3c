//! Key and operation generators for the benchmark driver: db_bench
//! style sequential/uniform keys plus the YCSB core workload mixes
//! with zipfian and latest request distributions.

use rand::Rng;

/// Standard YCSB zipfian over ranks `0..items`, theta-parameterized.
/// Rank 0 is the most popular item.
#[derive(Clone, Debug)]
pub struct Zipfian {
    items: u64,
    theta: f64,
    zetan: f64,
    zeta2: f64,
    alpha: f64,
    eta: f64,
}

pub const YCSB_ZIPFIAN_THETA: f64 = 0.99;

pub fn zeta(n: u64, theta: f64) -> f64 {
    (1..=n).map(|i| 1.0 / (i as f64).powf(theta)).sum()
}

impl Zipfian {
    pub fn new(items: u64, theta: f64) -> Zipfian {
        assert!(items >= 1);
        assert!(theta > 0.0 && theta < 1.0);
        let mut z = Zipfian {
            items,
            theta,
            zetan: zeta(items, theta),
            zeta2: zeta(2, theta),
            alpha: 1.0 / (1.0 - theta),
            eta: 0.0,
        };
        z.refresh_eta();
        z
    }

    fn refresh_eta(&mut self) {
        let n = self.items as f64;
        self.eta = (1.0 - (2.0 / n).powf(1.0 - self.theta))
            / (1.0 - self.zeta2 / self.zetan);
    }

    pub fn items(&self) -> u64 {
        self.items
    }

    /// Extends the domain, updating my normalization incrementally so
    /// growth is O(new - old) rather than O(new).
    pub fn extend_to(&mut self, items: u64) {
        if items <= self.items {
            return;
        }
        for i in self.items + 1..=items {
            self.zetan += 1.0 / (i as f64).powf(self.theta);
        }
        self.items = items;
        self.refresh_eta();
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let uz = u * self.zetan;
        if uz < 1.0 {
            return 0;
        }
        if uz < 1.0 + 0.5f64.powf(self.theta) {
            return 1;
        }
        let raw = (self.items as f64) * (self.eta * u - self.eta + 1.0).powf(self.alpha);
        (raw as u64).min(self.items - 1)
    }
}

/// YCSB's "latest" distribution: zipfian over recency, so the most
/// recently inserted records are the hottest.
#[derive(Clone, Debug)]
pub struct Latest {
    zipf: Zipfian,
}

impl Latest {
    pub fn new(items: u64) -> Latest {
        Latest { zipf: Zipfian::new(items, YCSB_ZIPFIAN_THETA) }
    }

    pub fn extend_to(&mut self, items: u64) {
        self.zipf.extend_to(items);
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let back = self.zipf.sample(rng);
        self.zipf.items() - 1 - back
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeyDistribution {
    Sequential,
    UniformRandom,
    Zipfian,
    Latest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Read,
    Update,
    Insert,
    Scan,
    ReadModifyWrite,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Read => "read",
            OpKind::Update => "update",
            OpKind::Insert => "insert",
            OpKind::Scan => "scan",
            OpKind::ReadModifyWrite => "rmw",
        }
    }
}

#[derive(Clone, Debug)]
pub struct WorkloadSpec {
    pub name: &'static str,
    pub op_mix: Vec<(OpKind, f64)>,
    pub key_distribution: KeyDistribution,
    pub record_count: u64,
    pub operation_count: u64,
    pub value_bytes: usize,
    pub fields_per_record: usize,
    pub scan_max_len: usize,
}

pub const YCSB_FIELD_BYTES: usize = 100;
pub const YCSB_FIELDS: usize = 10;
pub const YCSB_SCAN_MAX_LEN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum YcsbWorkload {
    Load,
    A,
    B,
    C,
    D,
    E,
    F,
}

impl YcsbWorkload {
    pub fn parse(s: &str) -> Option<YcsbWorkload> {
        Some(match s.to_ascii_lowercase().as_str() {
            "load" => YcsbWorkload::Load,
            "a" => YcsbWorkload::A,
            "b" => YcsbWorkload::B,
            "c" => YcsbWorkload::C,
            "d" => YcsbWorkload::D,
            "e" => YcsbWorkload::E,
            "f" => YcsbWorkload::F,
            _ => return None,
        })
    }

    pub fn spec(self, record_count: u64, operation_count: u64) -> WorkloadSpec {
        let (name, op_mix, key_distribution): (_, Vec<(OpKind, f64)>, _) = match self {
            YcsbWorkload::Load => (
                "ycsb-load",
                vec![(OpKind::Insert, 1.0)],
                KeyDistribution::Sequential,
            ),
            YcsbWorkload::A => (
                "ycsb-a",
                vec![(OpKind::Read, 0.5), (OpKind::Update, 0.5)],
                KeyDistribution::Zipfian,
            ),
            YcsbWorkload::B => (
                "ycsb-b",
                vec![(OpKind::Read, 0.95), (OpKind::Update, 0.05)],
                KeyDistribution::Zipfian,
            ),
            YcsbWorkload::C => {
                ("ycsb-c", vec![(OpKind::Read, 1.0)], KeyDistribution::Zipfian)
            }
            YcsbWorkload::D => (
                "ycsb-d",
                vec![(OpKind::Read, 0.95), (OpKind::Insert, 0.05)],
                KeyDistribution::Latest,
            ),
            YcsbWorkload::E => (
                "ycsb-e",
                vec![(OpKind::Scan, 0.95), (OpKind::Insert, 0.05)],
                KeyDistribution::Zipfian,
            ),
            YcsbWorkload::F => (
                "ycsb-f",
                vec![(OpKind::Read, 0.5), (OpKind::ReadModifyWrite, 0.5)],
                KeyDistribution::Zipfian,
            ),
        };
        WorkloadSpec {
            name,
            op_mix,
            key_distribution,
            record_count,
            operation_count: if self == YcsbWorkload::Load {
                record_count
            } else {
                operation_count
            },
            value_bytes: YCSB_FIELDS * YCSB_FIELD_BYTES,
            fields_per_record: YCSB_FIELDS,
            scan_max_len: YCSB_SCAN_MAX_LEN,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        let total: f64 = self.op_mix.iter().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("op mix probabilities sum to {total}, want 1"));
        }
        if self.op_mix.iter().any(|(_, p)| *p < 0.0) {
            return Err("negative op probability".into());
        }
        if self.record_count == 0 {
            return Err("record_count must be positive".into());
        }
        Ok(())
    }

    pub fn pick_op<R: Rng + ?Sized>(&self, rng: &mut R) -> OpKind {
        let mut u: f64 = rng.random();
        for (kind, p) in &self.op_mix {
            if u < *p {
                return *kind;
            }
            u -= p;
        }
        self.op_mix.last().expect("non-empty op mix").0
    }
}

/// db_bench keys: 16-digit zero-padded decimal.
pub fn db_bench_key(i: u64) -> Vec<u8> {
    format!("{i:016}").into_bytes()
}

/// YCSB keys: "user" plus 20-digit zero-padded decimal, 24 bytes.
pub fn ycsb_key(i: u64) -> Vec<u8> {
    format!("user{i:020}").into_bytes()
}

/// Deterministic filler for values.
pub fn fill_value<R: Rng + ?Sized>(rng: &mut R, len: usize, buf: &mut Vec<u8>) {
    buf.clear();
    buf.resize(len, 0);
    rng.fill(&mut buf[..]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sequential_key_is_fixed_width_decimal() {
        assert_eq!(db_bench_key(7), b"0000000000000007");
        assert_eq!(ycsb_key(7).len(), 24);
        assert_eq!(ycsb_key(7), b"user00000000000000000007");
    }

    #[test]
    fn zipfian_rank_one_frequency_matches_the_normalization_constant() {
        // Direct computation of the expected rank-1 frequency:
        // p(0) = 1 / sum_{i=1..n} i^-theta.
        let n = 10_000u64;
        let mut h = 0.0f64;
        for i in 1..=n {
            h += 1.0 / (i as f64).powf(0.99);
        }
        let expect = 1.0 / h;

        let zipf = Zipfian::new(n, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws = 1_000_000u64;
        let mut hits = 0u64;
        for _ in 0..draws {
            if zipf.sample(&mut rng) == 0 {
                hits += 1;
            }
        }
        let freq = hits as f64 / draws as f64;
        assert!(
            (freq - expect).abs() / expect < 0.10,
            "rank-1 freq {freq:.5} vs expected {expect:.5}"
        );
    }

    #[test]
    fn zipfian_is_monotone_in_rank_and_in_range() {
        let zipf = Zipfian::new(1000, 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut counts = vec![0u64; 1000];
        for _ in 0..200_000 {
            counts[zipf.sample(&mut rng) as usize] += 1;
        }
        assert!(counts[0] > counts[10]);
        assert!(counts[10] > counts[200]);
        // Every draw stayed in range by construction of the index.
        assert!(counts.iter().sum::<u64>() == 200_000);
    }

    #[test]
    fn extended_domain_matches_a_fresh_generator() {
        let mut grown = Zipfian::new(100, 0.99);
        grown.extend_to(5000);
        let fresh = Zipfian::new(5000, 0.99);
        assert!((grown.zetan - fresh.zetan).abs() < 1e-9);
        assert!((grown.eta - fresh.eta).abs() < 1e-12);
        assert_eq!(grown.items(), 5000);
    }

    #[test]
    fn latest_concentrates_near_the_most_recent_insert() {
        let latest = Latest::new(100);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut newest = 0u64;
        let draws = 50_000;
        for _ in 0..draws {
            let i = latest.sample(&mut rng);
            assert!(i < 100);
            if i == 99 {
                newest += 1;
            }
        }
        // Rank 0 of the underlying zipfian maps to the newest item.
        assert!(newest as f64 / draws as f64 > 0.10, "newest drawn {newest}");
    }

    #[test]
    fn ycsb_specs_mix_to_one_and_carry_the_field_layout() {
        for w in [
            YcsbWorkload::Load,
            YcsbWorkload::A,
            YcsbWorkload::B,
            YcsbWorkload::C,
            YcsbWorkload::D,
            YcsbWorkload::E,
            YcsbWorkload::F,
        ] {
            let spec = w.spec(1000, 500);
            spec.validate().unwrap();
            assert_eq!(spec.value_bytes, 1000);
            assert_eq!(spec.fields_per_record, 10);
        }
        assert_eq!(YcsbWorkload::parse("e"), Some(YcsbWorkload::E));
        assert_eq!(YcsbWorkload::parse("LOAD"), Some(YcsbWorkload::Load));
        assert_eq!(YcsbWorkload::parse("z"), None);
        let load = YcsbWorkload::Load.spec(1234, 99);
        assert_eq!(load.operation_count, 1234);
    }

    #[test]
    fn op_mix_sampling_tracks_probabilities() {
        let spec = YcsbWorkload::B.spec(1000, 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut reads = 0u64;
        for _ in 0..100_000 {
            if spec.pick_op(&mut rng) == OpKind::Read {
                reads += 1;
            }
        }
        let frac = reads as f64 / 100_000.0;
        assert!((frac - 0.95).abs() < 0.01, "read fraction {frac}");
    }
}
