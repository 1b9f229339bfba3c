//! GarnerDB: an embedded log-structured merge-tree key-value store.
//!
//! The store keeps the classic LSM shape (write-ahead log, in-memory
//! memtable, immutable sorted runs on disk) but sizes its on-disk levels
//! with *widening* capacity ratios, so a lookup touches O(sqrt(log N))
//! levels instead of the O(log N) a fixed fanout gives. Three further
//! choices back that up: the first on-disk level is kept fully resident
//! in memory, bloom filter bits are skewed toward shallow levels, and
//! the deepest level grows in place instead of eagerly recompacting.

pub mod compaction;
pub mod config;
pub mod cost_model;
pub mod error;
pub mod filters;
pub mod manifest;
pub mod memtable;
pub mod policy;
pub mod read_path;
pub mod refmodel;
pub mod sstable;
pub mod stats;
pub mod store;
pub mod types;
pub mod version;
pub mod wal;

pub use config::{FilterMode, MergePolicy, Options, SyncPolicy};
pub use error::{Error, Result};
pub use read_path::{ReadStats, Snapshot, StoreIter};
pub use stats::StatsSnapshot;
pub use store::{MaintenanceEvent, Store};
pub use types::{EntryKind, InternalEntry, InternalKey, Lookup};
