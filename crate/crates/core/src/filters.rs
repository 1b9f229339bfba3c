//! Bloom filters and the math that decides how many bits each level gets.
//!
//! A filter with `b` bits per entry has false-positive rate
//! `e^(-b * ln^2 2)` at the optimal hash count. Rather than spending the
//! same `b` everywhere, [`allocate_fprs`] skews the budget: deeper levels
//! hold more entries, so giving them *higher* false-positive rates (and
//! shallow levels lower ones) minimizes expected wasted probes for a
//! fixed total memory. With level sizes following the widening-ratio
//! shape, the optimum is `p_{L-i} = p_L * c^(i(i-1)/2) / k^i`.

use xxhash_rust::xxh3::xxh3_128;

pub const LN2_SQUARED: f64 = 0.480_453_013_918_201_4;

/// False-positive rate of a bloom filter with `bits_per_entry` bits per
/// key at the optimal number of hash functions.
pub fn fpr_model(bits_per_entry: f64) -> f64 {
    (-LN2_SQUARED * bits_per_entry).exp()
}

/// Bits per entry needed for false-positive rate `p`.
pub fn bits_for_fpr(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p <= 1.0);
    -p.ln() / LN2_SQUARED
}

/// Partial sum `S(levels) = sum_{i=0}^{levels-1} c^(i(i-1)/2) / k^i`.
///
/// This is the expected number of disk probes for a zero-result point
/// lookup, in units of the deepest level's false-positive rate, under
/// the optimal allocation. For `c < 1` the series converges; the ratio
/// between consecutive terms is `c^(i-1)/k`, which eventually shrinks
/// below any bound.
pub fn read_cost_series(c: f64, k: f64, levels: usize) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0f64;
    for i in 0..levels {
        if i > 0 {
            term *= c.powi(i as i32 - 1) / k;
        }
        sum += term;
    }
    sum
}

/// `S` iterated to machine convergence. Requires `c < 1` or `k > 1`.
pub fn read_cost_series_limit(c: f64, k: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0f64;
    let mut i = 0usize;
    while term > sum * f64::EPSILON && i < 10_000 {
        sum += term;
        i += 1;
        term *= c.powi(i as i32 - 1) / k;
    }
    sum
}

/// Per-level filter plan produced by [`allocate_fprs`].
///
/// Index 0 corresponds to level 1 (the shallowest on-disk level).
#[derive(Clone, Debug, PartialEq)]
pub struct FilterPlan {
    /// Planned false-positive rate per level; 1.0 means "no filter".
    pub fprs: Vec<f64>,
    /// Bits per entry implied by each rate.
    pub bits_per_entry: Vec<f64>,
    /// Expected disk probes for a zero-result lookup: the sum of rates
    /// over non-empty levels.
    pub expected_probes: f64,
    /// Set when the budget was so large that some solved rate fell
    /// below the 1e-9 floor and was clamped up to it.
    pub floored: bool,
}

/// Splits a total filter budget of `budget_bits_per_entry *
/// sum(level_entries)` bits across levels so the expected number of
/// wasted probes is minimal for the `(c, k)` capacity shape.
///
/// Rates follow `p_{L-i} = p_L * c^(i(i-1)/2) / k^i` with `p_L` chosen so
/// the budget is exactly exhausted over the actual entry counts. Any
/// level whose solved rate exceeds 1 is clamped to 1 (zero bits) and the
/// remainder is re-solved over the rest, to a fixed point. Levels with
/// zero entries get rate 1 and no bits.
pub fn allocate_fprs(level_entries: &[u64], c: f64, k: f64, budget_bits_per_entry: f64) -> FilterPlan {
    let depth = level_entries.len();
    let total: u64 = level_entries.iter().sum();
    let nonempty = level_entries.iter().filter(|&&n| n > 0).count();
    let mut fprs = vec![1.0f64; depth];
    let mut floored = false;
    if depth == 0 || total == 0 || budget_bits_per_entry <= 0.0 {
        let bits = vec![0.0; depth];
        return FilterPlan {
            fprs,
            bits_per_entry: bits,
            expected_probes: nonempty as f64,
            floored: false,
        };
    }

    // log of each level's rate relative to the deepest level's.
    let log_ratio: Vec<f64> = (0..depth)
        .map(|idx| {
            let i = (depth - 1 - idx) as i32;
            (i * (i - 1) / 2) as f64 * c.ln() - i as f64 * k.ln()
        })
        .collect();

    let budget_nats = budget_bits_per_entry * total as f64 * LN2_SQUARED;
    let mut unclamped: Vec<usize> = (0..depth).filter(|&i| level_entries[i] > 0).collect();
    loop {
        let n: f64 = unclamped.iter().map(|&i| level_entries[i] as f64).sum();
        if n == 0.0 {
            break;
        }
        let weighted: f64 = unclamped.iter().map(|&i| level_entries[i] as f64 * log_ratio[i]).sum();
        let ln_pl = -(budget_nats + weighted) / n;
        let mut clamped_any = false;
        for &i in &unclamped {
            if ln_pl + log_ratio[i] >= 0.0 {
                fprs[i] = 1.0;
                clamped_any = true;
            }
        }
        if clamped_any {
            unclamped.retain(|&i| ln_pl + log_ratio[i] < 0.0);
            continue;
        }
        for &i in &unclamped {
            let solved = (ln_pl + log_ratio[i]).exp();
            if solved < 1e-9 {
                floored = true;
            }
            fprs[i] = solved.max(1e-9);
        }
        break;
    }

    let bits_per_entry: Vec<f64> =
        fprs.iter().map(|&p| if p < 1.0 { bits_for_fpr(p) } else { 0.0 }).collect();
    let expected_probes = fprs
        .iter()
        .zip(level_entries)
        .filter(|(_, &n)| n > 0)
        .map(|(&p, _)| p)
        .sum();
    FilterPlan { fprs, bits_per_entry, expected_probes, floored }
}

/// Bits per entry above which the deepest level can go filterless
/// (`p_L = 1`) while the rest of the allocation stays consistent, making
/// zero-result lookups O(1) expected probes.
///
/// Uses the two-leading-term closed form of the budget at `p_L = 1`:
/// `(-1/ln^2 2) * ((1/k) ln(1/k) + (c/k^2) ln(c/k^2))`.
pub fn min_bits_for_constant_lookup(c: f64, k: f64) -> f64 {
    -((1.0 / k) * (1.0 / k).ln() + (c / (k * k)) * (c / (k * k)).ln()) / LN2_SQUARED
}

/// The worst case of [`min_bits_for_constant_lookup`] over all shape
/// parameters, found numerically; roughly 1.52 bits per entry. Budgets
/// above this admit O(1) zero-result lookups regardless of `(c, k)`.
pub fn worst_case_constant_lookup_bits() -> f64 {
    let mut best = 0.0f64;
    for ci in 1..=600 {
        let c = ci as f64 * 0.01;
        for ki in 101..=600 {
            let k = ki as f64 * 0.01;
            best = best.max(min_bits_for_constant_lookup(c, k));
        }
    }
    best
}

pub fn hash_key(key: &[u8]) -> u128 {
    xxh3_128(key)
}

fn split_hash(h: u128) -> (u64, u64) {
    (h as u64, ((h >> 64) as u64) | 1)
}

/// A plain bloom filter with double hashing over a 128-bit key hash.
#[derive(Clone, Debug, PartialEq)]
pub struct BloomFilter {
    num_hashes: u32,
    nbits: u64,
    bits: Vec<u8>,
}

impl BloomFilter {
    pub fn new(expected_entries: u64, bits_per_entry: f64) -> BloomFilter {
        let nbits = ((expected_entries as f64 * bits_per_entry).ceil() as u64).max(64);
        let num_hashes = ((bits_per_entry * std::f64::consts::LN_2).round() as u32).clamp(1, 30);
        BloomFilter { num_hashes, nbits, bits: vec![0u8; nbits.div_ceil(8) as usize] }
    }

    /// Builds from pre-computed [`hash_key`] values; lets a run writer
    /// defer sizing until the final key count is known.
    pub fn from_hashes(hashes: &[u128], bits_per_entry: f64) -> BloomFilter {
        let mut filter = BloomFilter::new(hashes.len() as u64, bits_per_entry);
        for &h in hashes {
            filter.insert_hash(h);
        }
        filter
    }

    pub fn insert(&mut self, key: &[u8]) {
        self.insert_hash(hash_key(key));
    }

    pub fn insert_hash(&mut self, hash: u128) {
        let (h1, h2) = split_hash(hash);
        let mut h = h1;
        for _ in 0..self.num_hashes {
            let bit = h % self.nbits;
            self.bits[(bit / 8) as usize] |= 1 << (bit % 8);
            h = h.wrapping_add(h2);
        }
    }

    pub fn may_contain(&self, key: &[u8]) -> bool {
        let (h1, h2) = split_hash(hash_key(key));
        let mut h = h1;
        for _ in 0..self.num_hashes {
            let bit = h % self.nbits;
            if self.bits[(bit / 8) as usize] & (1 << (bit % 8)) == 0 {
                return false;
            }
            h = h.wrapping_add(h2);
        }
        true
    }

    /// `[u32 num_hashes][u64 bit_len][bit bytes][u32 crc32]`,
    /// little-endian; the checksum covers everything before it.
    pub fn encode_into(&self, dst: &mut Vec<u8>) {
        let start = dst.len();
        dst.extend_from_slice(&self.num_hashes.to_le_bytes());
        dst.extend_from_slice(&self.nbits.to_le_bytes());
        dst.extend_from_slice(&self.bits);
        let crc = crc32fast::hash(&dst[start..]);
        dst.extend_from_slice(&crc.to_le_bytes());
    }

    pub fn decode(src: &[u8]) -> crate::error::Result<BloomFilter> {
        use crate::error::Error;
        if src.len() < 16 {
            return Err(Error::corruption("filter block", "too short"));
        }
        let (body, crc_bytes) = src.split_at(src.len() - 4);
        let want = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        let got = crc32fast::hash(body);
        if want != got {
            return Err(Error::corruption(
                "filter block",
                format!("crc mismatch {got:#010x} != {want:#010x}"),
            ));
        }
        let num_hashes = u32::from_le_bytes(body[0..4].try_into().unwrap());
        let nbits = u64::from_le_bytes(body[4..12].try_into().unwrap());
        let nbytes = nbits.div_ceil(8) as usize;
        if body.len() != 12 + nbytes || num_hashes == 0 || nbits == 0 {
            return Err(Error::corruption("filter block", "inconsistent header"));
        }
        Ok(BloomFilter { num_hashes, nbits, bits: body[12..].to_vec() })
    }

    pub fn byte_len(&self) -> usize {
        16 + self.bits.len()
    }
}
