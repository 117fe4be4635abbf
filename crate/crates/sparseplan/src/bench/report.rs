use std::path::Path;
use std::str::FromStr;

use crate::bench::run::{BenchRecord, EpisodeRecord};
use crate::error::{Error, Result};
use crate::plan::Strategy;

/// Aligned text table of benchmark rows.
pub fn report(rows: &[BenchRecord]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::DegenerateInput("no benchmark records".into()));
    }
    let mut out = String::new();
    out.push_str(&format!(
        "{:<9} {:>5} {:>9} {:>14} {:>11} {:>14} {:>9}\n",
        "strategy", "p", "success", "plan_s/iter", "change_%", "fwd_calls", "episodes"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<9} {:>5.2} {:>9.3} {:>14.6} {:>11.1} {:>14} {:>9}\n",
            r.strategy.to_string(),
            r.p,
            r.success_rate,
            r.mean_plan_seconds,
            r.percent_change,
            r.forward_calls,
            r.episodes
        ));
    }
    Ok(out)
}

pub const BENCH_CSV_HEADER: &str =
    "strategy,p,success_rate,mean_plan_seconds,percent_change,forward_calls,episodes";

pub fn write_bench_csv(path: &Path, rows: &[BenchRecord]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::DegenerateInput("no benchmark records".into()));
    }
    let mut text = String::from(BENCH_CSV_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.strategy, r.p, r.success_rate, r.mean_plan_seconds, r.percent_change,
            r.forward_calls, r.episodes
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_bench_csv(path: &Path) -> Result<Vec<BenchRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == BENCH_CSV_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "unexpected bench CSV header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Config(format!("bench CSV line {} malformed", i + 2)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Config(format!("bench CSV line {}: {e}", i + 2)))
        };
        rows.push(BenchRecord {
            strategy: Strategy::from_str(f[0])?,
            p: parse(f[1])?,
            success_rate: parse(f[2])?,
            mean_plan_seconds: parse(f[3])?,
            percent_change: parse(f[4])?,
            forward_calls: f[5]
                .parse()
                .map_err(|e| Error::Config(format!("bench CSV line {}: {e}", i + 2)))?,
            episodes: f[6]
                .parse()
                .map_err(|e| Error::Config(format!("bench CSV line {}: {e}", i + 2)))?,
        });
    }
    Ok(rows)
}

pub const EPISODE_CSV_HEADER: &str =
    "episode,strategy,p,success,mpc_iters,plan_seconds_per_iter,forward_calls,final_distance";

pub fn write_episode_csv(path: &Path, rows: &[EpisodeRecord]) -> Result<()> {
    let mut text = String::from(EPISODE_CSV_HEADER);
    text.push('\n');
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.episode,
            r.strategy,
            r.p,
            r.success,
            r.mpc_iters,
            r.plan_seconds_per_iter,
            r.forward_calls,
            r.final_distance
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<BenchRecord> {
        vec![
            BenchRecord {
                strategy: Strategy::Full,
                p: 0.0,
                success_rate: 0.9,
                mean_plan_seconds: 2.0,
                percent_change: 0.0,
                forward_calls: 5000,
                episodes: 30,
            },
            BenchRecord {
                strategy: Strategy::Random,
                p: 0.5,
                success_rate: 0.8,
                mean_plan_seconds: 1.1,
                percent_change: -45.0,
                forward_calls: 5000,
                episodes: 30,
            },
        ]
    }

    #[test]
    fn single_record_table_has_one_data_row() {
        let t = report(&rows()[..1]).unwrap();
        assert_eq!(t.lines().count(), 2);
        assert!(t.contains("full"));
    }

    #[test]
    fn empty_records_error() {
        assert!(report(&[]).is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(write_bench_csv(&dir.path().join("x.csv"), &[]).is_err());
    }

    #[test]
    fn csv_round_trip_preserves_records() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");
        let original = rows();
        write_bench_csv(&path, &original).unwrap();
        let back = read_bench_csv(&path).unwrap();
        assert_eq!(back, original);
    }

    #[test]
    fn percent_change_recomputable_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.csv");
        write_bench_csv(&path, &rows()).unwrap();
        let back = read_bench_csv(&path).unwrap();
        let base = back
            .iter()
            .find(|r| r.strategy == Strategy::Full && r.p == 0.0)
            .unwrap()
            .mean_plan_seconds;
        for r in &back {
            let recomputed = (r.mean_plan_seconds - base) / base * 100.0;
            assert!(
                (recomputed - r.percent_change).abs() <= 0.1,
                "{} vs {}",
                recomputed,
                r.percent_change
            );
        }
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        assert!(read_bench_csv(&path).is_err());
    }
}
