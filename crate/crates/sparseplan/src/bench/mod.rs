//! Benchmark orchestration: manifest-driven (strategy, drop-ratio) grids
//! with deterministic task sets, plus table and CSV reporting.

mod config;
mod report;
mod run;

pub use config::RunConfig;
pub use report::{
    read_bench_csv, report, write_bench_csv, write_episode_csv, BENCH_CSV_HEADER,
    EPISODE_CSV_HEADER,
};
pub use run::{aggregate, fill_percent_change, run_bench, run_cell, BenchRecord, EpisodeRecord};
