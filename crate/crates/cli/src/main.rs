use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, ValueEnum};
use garnerdb::config::{FilterMode, MergePolicy, Options, SyncPolicy};
use garnerdb_bench::driver::{BenchSession, DbBench};
use garnerdb_bench::report::{append_csv, human_table};
use garnerdb_bench::workload::YcsbWorkload;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Garnering,
    Leveling,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FilterModeArg {
    None,
    Uniform,
    Optimized,
}

/// Benchmark driver for garnerdb: db_bench style operations and the
/// YCSB core workloads.
#[derive(Parser, Debug)]
#[command(name = "garnerdb-bench", version)]
struct Args {
    /// Database directory (created if missing).
    #[arg(long)]
    db: PathBuf,

    /// Merge policy shaping on-disk level capacities.
    #[arg(long, value_enum, default_value_t = PolicyArg::Garnering)]
    policy: PolicyArg,

    /// Garnering ratio-shrink factor, in (0.5, 1].
    #[arg(long, default_value_t = 0.8)]
    c: f64,

    /// Garnering base fanout, > 1.
    #[arg(long, default_value_t = 2.0)]
    k: f64,

    /// Leveling size ratio, >= 2.
    #[arg(long, default_value_t = 2)]
    t: u32,

    /// Value size for db_bench fills.
    #[arg(long, default_value_t = 100)]
    value_bytes: usize,

    /// Operations per benchmark; for the YCSB load, the record count.
    #[arg(long, default_value_t = 200_000)]
    num: u64,

    /// Comma-separated db_bench list (fillseq, fillrandom, readrandom,
    /// seekrandom, seekrandomnext10, seekrandomnext100), run in order.
    #[arg(long)]
    benchmarks: Option<String>,

    /// One YCSB workload: load, or a through f. A-F expect a prior
    /// load into the same database.
    #[arg(long)]
    ycsb: Option<String>,

    /// Bloom bits per entry for the chosen filter mode.
    #[arg(long, default_value_t = 10.0)]
    bits_per_key: f64,

    /// Bloom filter placement across levels.
    #[arg(long, value_enum, default_value_t = FilterModeArg::None)]
    filter_mode: FilterModeArg,

    /// Seed for key/value/op generation.
    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Append result rows to this CSV (header written when new).
    #[arg(long)]
    csv: Option<PathBuf>,

    /// 1 = fsync the log on every write, 0 = leave it to the OS.
    #[arg(long, default_value_t = 0)]
    sync: u8,

    /// Accepted for compatibility; only 0 (off) is supported.
    #[arg(long, default_value_t = 0)]
    compression: u8,

    /// Accepted for compatibility; only 0 (off) is supported.
    #[arg(long, default_value_t = 0)]
    block_cache_mb: u64,
}

fn build_options(args: &Args) -> anyhow::Result<Options> {
    if args.compression != 0 {
        bail!("--compression {} is not supported; only 0 (off)", args.compression);
    }
    if args.block_cache_mb != 0 {
        bail!("--block-cache-mb {} is not supported; only 0 (off)", args.block_cache_mb);
    }
    let policy = match args.policy {
        PolicyArg::Garnering => MergePolicy::Garnering { c: args.c, k: args.k },
        PolicyArg::Leveling => MergePolicy::Leveling { t: args.t },
    };
    let filter_mode = match args.filter_mode {
        FilterModeArg::None => FilterMode::None,
        FilterModeArg::Uniform => FilterMode::Uniform { bits_per_entry: args.bits_per_key },
        FilterModeArg::Optimized => {
            FilterMode::Optimized { bits_per_entry: args.bits_per_key }
        }
    };
    let sync = match args.sync {
        0 => SyncPolicy::Os,
        1 => SyncPolicy::EveryWrite,
        other => bail!("--sync must be 0 or 1, got {other}"),
    };
    let opts = Options { policy, filter_mode, sync, ..Options::default() };
    opts.validate()?;
    Ok(opts)
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let opts = build_options(&args)?;

    let benchmarks: Vec<DbBench> = match &args.benchmarks {
        None => Vec::new(),
        Some(list) => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|name| {
                DbBench::parse(name).with_context(|| {
                    format!(
                        "unknown benchmark {name:?}; expected fillseq, fillrandom, \
                         readrandom, seekrandom, seekrandomnext10 or seekrandomnext100"
                    )
                })
            })
            .collect::<anyhow::Result<_>>()?,
    };
    let ycsb = match &args.ycsb {
        None => None,
        Some(name) => Some(YcsbWorkload::parse(name).with_context(|| {
            format!("unknown YCSB workload {name:?}; expected load or a..f")
        })?),
    };
    if benchmarks.is_empty() && ycsb.is_none() {
        bail!("nothing to run; pass --benchmarks and/or --ycsb");
    }

    std::fs::create_dir_all(&args.db)
        .with_context(|| format!("creating {}", args.db.display()))?;
    let mut session = BenchSession::open(&args.db, opts, args.seed)
        .with_context(|| format!("opening store at {}", args.db.display()))?;

    let mut reports = Vec::new();
    for op in benchmarks {
        let report = session
            .run_db_bench(op, args.num, args.value_bytes)
            .with_context(|| format!("running {}", op.label()))?;
        reports.push(report);
    }
    if let Some(workload) = ycsb {
        let spec = if workload == YcsbWorkload::Load {
            workload.spec(args.num, args.num)
        } else {
            if session.ycsb_records() == 0 {
                bail!("the database holds no YCSB records; run --ycsb load first");
            }
            workload.spec(session.ycsb_records(), args.num)
        };
        let report = session
            .run_ycsb(&spec)
            .with_context(|| format!("running {}", spec.name))?;
        reports.push(report);
    }

    let refs: Vec<&_> = reports.iter().collect();
    print!("{}", human_table(&refs));
    if let Some(path) = &args.csv {
        append_csv(path, &refs)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
