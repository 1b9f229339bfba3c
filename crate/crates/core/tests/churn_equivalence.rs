//! Long mixed workloads checked operation-for-operation against the
//! in-memory reference model, with maintenance running underneath.

use garnerdb::config::{MergePolicy, Options};
use garnerdb::refmodel::ModelStore;
use garnerdb::{Snapshot, Store};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tempfile::tempdir;

fn key(i: u64) -> Vec<u8> {
    format!("{i:012}").into_bytes()
}

fn collect(it: &mut garnerdb::StoreIter, limit: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut out = Vec::new();
    while it.valid() && out.len() < limit {
        out.push((it.key().to_vec(), it.value().to_vec()));
        it.next().unwrap();
    }
    out
}

#[test]
fn mixed_ops_with_background_maintenance_match_the_model() {
    let dir = tempdir().unwrap();
    let opts = Options {
        policy: MergePolicy::Garnering { c: 0.8, k: 2.0 },
        memtable_bytes: 64 << 10,
        background_worker: true,
        ..Options::default()
    };
    let store = Store::open(dir.path(), opts).unwrap();
    let mut model = ModelStore::new();
    let mut rng = StdRng::seed_from_u64(99);
    let mut pinned: Vec<(Snapshot, u64)> = Vec::new();

    for op in 0..30_000u64 {
        let k = key(rng.random_range(0..3000u64));
        match rng.random_range(0..100u32) {
            0..=69 => {
                let v = vec![rng.random::<u8>(); rng.random_range(1..256)];
                let seq = store.put(&k, &v).unwrap();
                model.put(&k, &v, seq);
            }
            70..=84 => {
                let seq = store.delete(&k).unwrap();
                model.delete(&k, seq);
            }
            85..=94 => {
                let head = store.last_seq();
                assert_eq!(
                    store.get(&k).unwrap().as_deref(),
                    model.model_get(&k, head),
                    "op {op}"
                );
            }
            _ => {
                let head = store.last_seq();
                let mut it = store.iter_from(&k).unwrap();
                let got = collect(&mut it, 20);
                let want = model.model_scan(&k, 20, head);
                assert_eq!(got, want, "scan at op {op}");
            }
        }
        if op % 7000 == 3500 {
            pinned.push((store.snapshot(), store.last_seq()));
        }
    }

    // Snapshots taken mid-churn still read their own moment.
    for (snap, at) in &pinned {
        assert_eq!(snap.seq(), *at);
        for i in (0..3000u64).step_by(191) {
            let k = key(i);
            assert_eq!(
                snap.get(&k).unwrap().as_deref(),
                model.model_get(&k, *at),
                "snapshot at seq {at}, key {i}"
            );
        }
        let mut it = snap.iter_from(b"").unwrap();
        let got = collect(&mut it, 50);
        assert_eq!(got, model.model_scan(b"", 50, *at), "snapshot scan at {at}");
    }
    drop(pinned);

    store.flush_memtable().unwrap();
    store.wait_idle().unwrap();
    assert!(store.background_error().is_none());
    let head = store.last_seq();
    let mut it = store.iter_from(b"").unwrap();
    let got = collect(&mut it, usize::MAX);
    assert_eq!(got, model.model_scan(b"", usize::MAX, head));

    // After the pinned snapshots are gone, a full merge drops every
    // superseded version; what remains matches the model's live set.
    store.compact_full().unwrap();
    let mut it = store.iter_from(b"").unwrap();
    let got = collect(&mut it, usize::MAX);
    assert_eq!(got, model.model_scan(b"", usize::MAX, head));
}

#[test]
fn readers_race_writers_without_tearing() {
    let dir = tempdir().unwrap();
    let opts = Options {
        memtable_bytes: 32 << 10,
        background_worker: true,
        ..Options::default()
    };
    let store = Store::open(dir.path(), opts).unwrap();
    for i in 0..1000u64 {
        store.put(&key(i), &format!("v{:06}", 0).into_bytes()).unwrap();
    }

    let done = std::sync::atomic::AtomicBool::new(false);
    let finished = |later: &std::sync::atomic::AtomicBool| {
        later.load(std::sync::atomic::Ordering::Acquire)
    };
    std::thread::scope(|scope| {
        scope.spawn(|| {
            for round in 1..=40u64 {
                for i in 0..1000u64 {
                    store.put(&key(i), &format!("v{round:06}").into_bytes()).unwrap();
                }
            }
            done.store(true, std::sync::atomic::Ordering::Release);
        });

        // Point readers: a value, once written, only moves forward.
        scope.spawn(|| {
            let mut rng = StdRng::seed_from_u64(5);
            let mut floor = vec![0u64; 1000];
            while !finished(&done) {
                let i = rng.random_range(0..1000u64) as usize;
                let got = store.get(&key(i as u64)).unwrap().expect("key vanished");
                let round: u64 = std::str::from_utf8(&got[1..]).unwrap().parse().unwrap();
                assert!(round >= floor[i], "key {i} went backwards");
                floor[i] = round;
                std::thread::yield_now();
            }
        });

        // Scan readers: every scan sees all 1000 keys in order.
        scope.spawn(|| {
            while !finished(&done) {
                let mut it = store.iter_from(b"").unwrap();
                let mut count = 0u64;
                let mut prev: Option<Vec<u8>> = None;
                while it.valid() {
                    if let Some(p) = &prev {
                        assert!(p.as_slice() < it.key(), "keys out of order");
                    }
                    prev = Some(it.key().to_vec());
                    count += 1;
                    it.next().unwrap();
                }
                assert_eq!(count, 1000);
                std::thread::yield_now();
            }
        });

        // Snapshot readers: the pinned view never changes, no matter
        // how much churn and compaction happen after it.
        scope.spawn(|| {
            while !finished(&done) {
                let snap = store.snapshot();
                let mut it = snap.iter_from(&key(100)).unwrap();
                let first = collect(&mut it, 10);
                let mut it = snap.iter_from(&key(100)).unwrap();
                let second = collect(&mut it, 10);
                assert_eq!(first, second, "snapshot view tore");
                std::thread::yield_now();
            }
        });
    });

    store.wait_idle().unwrap();
    assert!(store.background_error().is_none());
    for i in (0..1000u64).step_by(83) {
        assert_eq!(store.get(&key(i)).unwrap(), Some(b"v000040".to_vec()));
    }
}
