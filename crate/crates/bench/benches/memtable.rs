use criterion::{criterion_group, criterion_main, Criterion};
use garnerdb::memtable::Memtable;
use garnerdb::types::InternalEntry;
use garnerdb_perf::{bench_key, bench_value};
use std::hint::black_box;
use std::sync::Arc;

fn memtable(c: &mut Criterion) {
    let value = bench_value(100);
    let n = 100_000u64;

    c.bench_function("memtable insert 100B", |b| {
        let table = Memtable::new();
        let mut seq = 0u64;
        b.iter(|| {
            seq += 1;
            table.insert(InternalEntry::put(bench_key(seq % n), seq, value.clone()));
        })
    });

    let table = Arc::new(Memtable::new());
    for i in 0..n {
        table.insert(InternalEntry::put(bench_key(i), i + 1, value.clone()));
    }

    c.bench_function("memtable point get", |b| {
        let key = bench_key(n / 2);
        b.iter(|| black_box(table.get(black_box(&key), u64::MAX)))
    });

    c.bench_function("memtable iter 100 entries", |b| {
        let start = garnerdb::types::InternalKey::lookup(bench_key(n / 2), u64::MAX);
        b.iter(|| {
            let mut it = table.iter();
            it.seek(&start);
            let mut walked = 0;
            while it.valid() && walked < 100 {
                black_box(it.key());
                it.next();
                walked += 1;
            }
            walked
        })
    });
}

criterion_group!(benches, memtable);
criterion_main!(benches);
