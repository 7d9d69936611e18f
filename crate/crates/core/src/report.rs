//! Learning-curve CSV schema, run summaries and the SR/EE point table.
//!
//! The schema is fixed:
//!
//! ```text
//! algorithm,seed,episode,mean_reward,mean_sr_sum,mean_see_sum,expert_0,expert_1,expert_2
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, rows end
//! in `\n`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use thiserror::Error;

pub const CSV_COLUMNS: [&str; 9] = [
    "algorithm",
    "seed",
    "episode",
    "mean_reward",
    "mean_sr_sum",
    "mean_see_sum",
    "expert_0",
    "expert_1",
    "expert_2",
];

/// Number of routing-count columns in the schema.
pub const EXPERT_COLUMNS: usize = 3;

pub const SCATTER_COLUMNS: [&str; 3] = ["algorithm", "mean_sr_sum", "mean_see_sum"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("schema mismatch in column {index}: expected `{expected}`, found `{found}`")]
    Schema { index: usize, expected: String, found: String },
    #[error("row {row}: column `{column}` has unparseable value `{value}`")]
    Value { row: usize, column: &'static str, value: String },
    #[error("no rows to summarize")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One learning-curve row: episode means for one (algorithm, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algorithm: String,
    pub seed: u64,
    pub episode: usize,
    pub mean_reward: f64,
    pub mean_sr_sum: f64,
    pub mean_see_sum: f64,
    /// Policy actions routed to each expert during the episode.
    pub expert_histogram: [u64; EXPERT_COLUMNS],
}

impl RunRecord {
    pub fn csv_line(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{}",
            self.algorithm, self.seed, self.episode, self.mean_reward, self.mean_sr_sum, self.mean_see_sum
        )
        .unwrap();
        for c in self.expert_histogram {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        s
    }
}

pub fn csv_header() -> String {
    let mut s = CSV_COLUMNS.join(",");
    s.push('\n');
    s
}

pub fn write_records<W: Write>(out: &mut W, records: &[RunRecord]) -> std::io::Result<()> {
    out.write_all(csv_header().as_bytes())?;
    for r in records {
        out.write_all(r.csv_line().as_bytes())?;
    }
    Ok(())
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<(), ReportError> {
    for (index, want) in expected.iter().enumerate() {
        let got = found.get(index).unwrap_or("");
        if got != *want {
            return Err(ReportError::Schema { index, expected: want.to_string(), found: got.to_string() });
        }
    }
    if found.len() > expected.len() {
        return Err(ReportError::Schema {
            index: expected.len(),
            expected: "<end of header>".into(),
            found: found[expected.len()].to_string(),
        });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, row: usize, index: usize) -> Result<T, ReportError> {
    let raw = rec.get(index).unwrap_or("");
    raw.parse().map_err(|_| ReportError::Value { row, column: CSV_COLUMNS[index], value: raw.to_string() })
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<RunRecord>, ReportError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    check_header(rdr.headers()?, &CSV_COLUMNS)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let mut hist = [0u64; EXPERT_COLUMNS];
        for (k, slot) in hist.iter_mut().enumerate() {
            *slot = field(&rec, row, 6 + k)?;
        }
        out.push(RunRecord {
            algorithm: rec[0].to_string(),
            seed: field(&rec, row, 1)?,
            episode: field(&rec, row, 2)?,
            mean_reward: field(&rec, row, 3)?,
            mean_sr_sum: field(&rec, row, 4)?,
            mean_see_sum: field(&rec, row, 5)?,
            expert_histogram: hist,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    pub seeds: usize,
    /// Mean reward over the last tenth of each seed's episodes, averaged
    /// over seeds.
    pub final_mean: f64,
    /// Largest single-episode mean reward seen in training.
    pub max_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Greater,
    Less,
    Equal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub summaries: Vec<AlgorithmSummary>,
    /// `(a, b, verdict on a vs b)` for every pair, in first-appearance order.
    pub verdicts: Vec<(String, String, Verdict)>,
}

impl Comparison {
    pub fn get(&self, algorithm: &str) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm)
    }

    pub fn render(&self) -> String {
        let mut s = String::from("algorithm,seeds,final_mean_reward,max_episode_reward\n");
        for a in &self.summaries {
            writeln!(s, "{},{},{},{}", a.algorithm, a.seeds, a.final_mean, a.max_reward).unwrap();
        }
        for (a, b, v) in &self.verdicts {
            let op = match v {
                Verdict::Greater => ">",
                Verdict::Less => "<",
                Verdict::Equal => "=",
            };
            writeln!(s, "verdict: {a} {op} {b}").unwrap();
        }
        s
    }
}

/// Tail length used for "final" statistics: a tenth of the run, at least one.
pub fn final_window(episodes: usize) -> usize {
    episodes.div_ceil(10).max(1)
}

pub fn compare(records: &[RunRecord]) -> Result<Comparison, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut order: Vec<String> = Vec::new();
    let mut runs: BTreeMap<(String, u64), Vec<(usize, f64)>> = BTreeMap::new();
    for r in records {
        if !order.contains(&r.algorithm) {
            order.push(r.algorithm.clone());
        }
        runs.entry((r.algorithm.clone(), r.seed)).or_default().push((r.episode, r.mean_reward));
    }
    let mut summaries = Vec::new();
    for alg in &order {
        let mut finals = Vec::new();
        let mut max_reward = f64::NEG_INFINITY;
        for ((a, _), rows) in runs.iter_mut().filter(|((a, _), _)| a == alg) {
            debug_assert_eq!(a, alg);
            rows.sort_by_key(|(ep, _)| *ep);
            let w = final_window(rows.len());
            let tail = &rows[rows.len() - w..];
            finals.push(tail.iter().map(|(_, r)| r).sum::<f64>() / w as f64);
            max_reward = rows.iter().map(|(_, r)| *r).fold(max_reward, f64::max);
        }
        summaries.push(AlgorithmSummary {
            algorithm: alg.clone(),
            seeds: finals.len(),
            final_mean: finals.iter().sum::<f64>() / finals.len() as f64,
            max_reward,
        });
    }
    let mut verdicts = Vec::new();
    for i in 0..summaries.len() {
        for j in i + 1..summaries.len() {
            let (a, b) = (&summaries[i], &summaries[j]);
            let v = if a.final_mean > b.final_mean {
                Verdict::Greater
            } else if a.final_mean < b.final_mean {
                Verdict::Less
            } else {
                Verdict::Equal
            };
            verdicts.push((a.algorithm.clone(), b.algorithm.clone(), v));
        }
    }
    Ok(Comparison { summaries, verdicts })
}

/// Projects a merged CSV onto `algorithm,mean_sr_sum,mean_see_sum`, copying
/// the source text of each field verbatim.
pub fn scatter<R: Read, W: Write>(input: R, out: &mut W) -> Result<usize, ReportError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    check_header(rdr.headers()?, &CSV_COLUMNS)?;
    writeln!(out, "{}", SCATTER_COLUMNS.join(","))?;
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        // Validate numerics without reformatting them.
        field::<f64>(&rec, i + 1, 4)?;
        field::<f64>(&rec, i + 1, 5)?;
        writeln!(out, "{},{},{}", &rec[0], &rec[4], &rec[5])?;
        n += 1;
    }
    Ok(n)
}
