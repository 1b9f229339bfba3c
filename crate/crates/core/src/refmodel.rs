//! Brute-force reference model the property tests compare the real
//! store against. Append-only, never garbage-collects, keeps every
//! version so any snapshot can be replayed.

use std::collections::BTreeMap;
use std::ops::Bound;

#[derive(Default)]
pub struct ModelStore {
    versions: BTreeMap<Vec<u8>, Vec<(u64, Option<Vec<u8>>)>>,
    ops: u64,
    last_seq: u64,
}

impl ModelStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: &[u8], value: &[u8], seq: u64) {
        self.apply(key, Some(value.to_vec()), seq);
    }

    pub fn delete(&mut self, key: &[u8], seq: u64) {
        self.apply(key, None, seq);
    }

    fn apply(&mut self, key: &[u8], value: Option<Vec<u8>>, seq: u64) {
        assert!(seq > self.last_seq, "sequence numbers must increase: {seq} after {}", self.last_seq);
        self.last_seq = seq;
        self.ops += 1;
        self.versions.entry(key.to_vec()).or_default().push((seq, value));
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn op_count(&self) -> u64 {
        self.ops
    }

    /// Newest value for `key` with seq ≤ `at_seq`; a tombstone or no
    /// version at all reads as absent.
    pub fn model_get(&self, key: &[u8], at_seq: u64) -> Option<&[u8]> {
        let versions = self.versions.get(key)?;
        let cut = versions.partition_point(|(seq, _)| *seq <= at_seq);
        versions[..cut].last()?.1.as_deref()
    }

    /// First `count` visible keys ≥ `start`, in key order, as of `at_seq`.
    pub fn model_scan(&self, start: &[u8], count: usize, at_seq: u64) -> Vec<(Vec<u8>, Vec<u8>)> {
        let mut out = Vec::new();
        let range = self.versions.range((Bound::Included(start.to_vec()), Bound::Unbounded));
        for (key, _) in range {
            if out.len() == count {
                break;
            }
            if let Some(value) = self.model_get(key, at_seq) {
                out.push((key.clone(), value.to_vec()));
            }
        }
        out
    }

    /// Bytes of distinct live keys and values as of `at_seq`.
    pub fn live_bytes(&self, at_seq: u64) -> u64 {
        self.versions
            .iter()
            .filter_map(|(key, _)| {
                self.model_get(key, at_seq).map(|v| (key.len() + v.len()) as u64)
            })
            .sum()
    }
}
