//! Runs many (algorithm, seed) trainings on a worker pool and writes the
//! per-run CSVs, checkpoints, merged CSV and summary.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::policy::Algorithm;
use crate::report::{self, RunRecord};
use crate::trainer::{train, TrainStats};

pub const MERGED_CSV: &str = "merged.csv";
pub const SUMMARY: &str = "summary.txt";

pub fn run_csv_name(algorithm: Algorithm, seed: u64) -> String {
    format!("{algorithm}_seed{seed}.csv")
}

pub fn checkpoint_name(algorithm: Algorithm, seed: u64) -> String {
    format!("{algorithm}_seed{seed}.ckpt")
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub csv: PathBuf,
    /// Error message for a failed run.
    pub result: Result<TrainStats, String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub runs: Vec<RunOutcome>,
    pub merged: PathBuf,
    pub summary: String,
}

impl SweepOutcome {
    pub fn all_ok(&self) -> bool {
        self.runs.iter().all(|r| r.result.is_ok())
    }
}

fn run_one(cfg: &RunConfig, algorithm: Algorithm, seed: u64, out_dir: &Path) -> RunOutcome {
    let csv = out_dir.join(run_csv_name(algorithm, seed));
    let result = (|| -> Result<TrainStats, String> {
        let mut w = BufWriter::new(File::create(&csv).map_err(|e| e.to_string())?);
        w.write_all(report::csv_header().as_bytes()).map_err(|e| e.to_string())?;
        let mut io_error = None;
        let trained = train(algorithm, seed, &cfg.setup(), |r| {
            if io_error.is_none() {
                io_error = w.write_all(r.csv_line().as_bytes()).err();
            }
        });
        w.flush().map_err(|e| e.to_string())?;
        if let Some(e) = io_error {
            return Err(e.to_string());
        }
        let out = trained.map_err(|e| e.to_string())?;
        out.checkpoint.save(&out_dir.join(checkpoint_name(algorithm, seed))).map_err(|e| e.to_string())?;
        Ok(out.stats)
    })();
    RunOutcome { algorithm, seed, csv, result }
}

/// Trains every job, `workers` at a time, then merges whatever rows exist.
pub fn run_sweep(cfg: &RunConfig, jobs: &[(Algorithm, u64)], out_dir: &Path, workers: usize) -> std::io::Result<SweepOutcome> {
    fs::create_dir_all(out_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(std::io::Error::other)?;
    let runs: Vec<RunOutcome> = pool.install(|| jobs.par_iter().map(|&(a, s)| run_one(cfg, a, s, out_dir)).collect());

    let mut merged_rows: Vec<RunRecord> = Vec::new();
    for r in &runs {
        if let Ok(f) = File::open(&r.csv) {
            // A run that died mid-write can leave a truncated last line.
            if let Ok(rows) = report::read_records(f) {
                merged_rows.extend(rows);
            }
        }
    }
    let merged = out_dir.join(MERGED_CSV);
    let mut w = BufWriter::new(File::create(&merged)?);
    report::write_records(&mut w, &merged_rows)?;
    w.flush()?;

    let mut summary = String::from("algorithm,seed,status\n");
    for r in &runs {
        let status = match &r.result {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("failed: {e}"),
        };
        summary.push_str(&format!("{},{},{}\n", r.algorithm, r.seed, status));
    }
    if let Ok(c) = report::compare(&merged_rows) {
        summary.push('\n');
        summary.push_str(&c.render());
    }
    fs::write(out_dir.join(SUMMARY), &summary)?;
    Ok(SweepOutcome { runs, merged, summary })
}

/// Cartesian product in the given orders.
pub fn jobs(algorithms: &[Algorithm], seeds: &[u64]) -> Vec<(Algorithm, u64)> {
    algorithms.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect()
}
