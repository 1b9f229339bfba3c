//! Report formatting: a human table on stdout and an appendable CSV.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::driver::BenchReport;

pub const CSV_HEADER: &str =
    "benchmark,policy,params,ops,avg_us,p90,p99,p999,throughput_kops,wa,sa,disk_probes";

pub fn csv_row(r: &BenchReport) -> String {
    format!(
        "{},{},{},{},{:.3},{:.3},{:.3},{:.3},{:.3},{:.4},{:.4},{}",
        r.benchmark,
        r.policy,
        r.params,
        r.ops,
        r.avg_us,
        r.p90_us,
        r.p99_us,
        r.p999_us,
        r.throughput_kops,
        r.write_amp,
        r.space_amp,
        r.disk_probes,
    )
}

/// Appends rows to `path`, writing the header first when the file is
/// new or empty.
pub fn append_csv(path: &Path, rows: &[&BenchReport]) -> std::io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    if file.metadata()?.len() == 0 {
        writeln!(file, "{CSV_HEADER}")?;
    }
    for r in rows {
        writeln!(file, "{}", csv_row(r))?;
    }
    file.sync_data()
}

pub fn human_table(rows: &[&BenchReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:<10} {:<12} {:>10} {:>10} {:>10} {:>10} {:>10} {:>12} {:>7} {:>7} {:>12}\n",
        "benchmark",
        "policy",
        "params",
        "ops",
        "avg_us",
        "p90_us",
        "p99_us",
        "p999_us",
        "kops/s",
        "wa",
        "sa",
        "disk_probes",
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:<10} {:<12} {:>10} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>12.2} {:>7.3} {:>7.3} {:>12}\n",
            r.benchmark,
            r.policy,
            r.params,
            r.ops,
            r.avg_us,
            r.p90_us,
            r.p99_us,
            r.p999_us,
            r.throughput_kops,
            r.write_amp,
            r.space_amp,
            r.disk_probes,
        ));
        if !r.op_counts.is_empty() {
            let mix = r
                .op_counts
                .iter()
                .map(|(name, c)| format!("{name}={c}"))
                .collect::<Vec<_>>()
                .join(" ");
            out.push_str(&format!("{:<16} {mix}\n", ""));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use garnerdb::StatsSnapshot;

    fn sample() -> BenchReport {
        BenchReport {
            benchmark: "fillseq".into(),
            policy: "garnering".into(),
            params: "c=0.8;k=2".into(),
            ops: 1000,
            wall_secs: 0.5,
            avg_us: 12.5,
            p90_us: 20.0,
            p99_us: 45.0,
            p999_us: 80.0,
            throughput_kops: 2.0,
            write_amp: 1.25,
            space_amp: 1.1,
            disk_probes: 42,
            op_counts: vec![("write", 1000)],
            ending_stats: StatsSnapshot::default(),
        }
    }

    #[test]
    fn csv_rows_have_one_field_per_header_column() {
        let row = csv_row(&sample());
        assert_eq!(
            row.split(',').count(),
            CSV_HEADER.split(',').count(),
            "{row}"
        );
        assert!(row.starts_with("fillseq,garnering,c=0.8;k=2,1000,"));
        assert!(row.ends_with(",42"));
    }

    #[test]
    fn appended_csv_carries_a_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let r = sample();
        append_csv(&path, &[&r]).unwrap();
        append_csv(&path, &[&r, &r]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1..].iter().all(|l| !l.starts_with("benchmark")));
    }

    #[test]
    fn table_includes_the_op_mix_line() {
        let r = sample();
        let table = human_table(&[&r]);
        assert!(table.contains("fillseq"));
        assert!(table.contains("write=1000"));
    }
}
