//! CSV output for runs, staged runs and sweeps.

use std::io::Write;
use std::path::Path;

use csv::{Terminator, WriterBuilder};

use crate::engine::RoundRecord;
use crate::error::{Error, Result};

pub const METRICS_COLUMNS: [&str; 7] = [
    "round",
    "system_throughput_bps",
    "energy_efficiency_bits_per_joule",
    "risk_level",
    "cooperation_level",
    "mean_benign_reward",
    "attackers_active",
];

pub const SEESAW_COLUMNS: [&str; 6] =
    ["round", "stage", "attackers_active", "risk_level", "cooperation_level", "mean_benign_reward"];

pub const SWEEP_COLUMNS: [&str; 9] = [
    "framework",
    "attackers",
    "replicas",
    "throughput_mean_bps",
    "throughput_stdev_bps",
    "energy_efficiency_mean",
    "energy_efficiency_stdev",
    "reward_mean",
    "reward_stdev",
];

pub fn metrics_header(clients: usize) -> Vec<String> {
    let mut header: Vec<String> = METRICS_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 0..clients {
        header.push(format!("c_{i}"));
        header.push(format!("kl_{i}"));
    }
    header
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    WriterBuilder::new().terminator(Terminator::Any(b'\n')).from_writer(out)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn finish<W: Write>(w: csv::Writer<W>) -> std::result::Result<W, csv::Error> {
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

fn into_bytes(result: std::result::Result<Vec<u8>, csv::Error>) -> Result<Vec<u8>> {
    result.map_err(|e| Error::Csv { path: "<memory>".into(), source: e })
}

/// Per-round metrics, one row per record.
pub fn metrics_csv(records: &[RoundRecord]) -> Result<Vec<u8>> {
    let clients = records.first().map_or(0, |r| r.client_cooperation.len());
    into_bytes((|| {
        let mut w = writer(Vec::new());
        w.write_record(metrics_header(clients))?;
        for r in records {
            let mut row = vec![
                r.round.to_string(),
                num(r.system_throughput),
                num(r.energy_efficiency),
                num(r.risk_level),
                num(r.cooperation_level),
                num(r.mean_benign_reward),
                r.attackers_active.to_string(),
            ];
            for (c, kl) in r.client_cooperation.iter().zip(&r.client_kl) {
                row.push(num(*c));
                row.push(num(*kl));
            }
            w.write_record(&row)?;
        }
        finish(w)
    })())
}

/// Risk and cooperation per round of a staged run.
pub fn seesaw_csv(records: &[RoundRecord], rounds_per_stage: usize, stages: usize) -> Result<Vec<u8>> {
    into_bytes((|| {
        let mut w = writer(Vec::new());
        w.write_record(SEESAW_COLUMNS)?;
        for r in records {
            let stage = (r.round / rounds_per_stage.max(1)).min(stages.saturating_sub(1));
            w.write_record([
                r.round.to_string(),
                stage.to_string(),
                r.attackers_active.to_string(),
                num(r.risk_level),
                num(r.cooperation_level),
                num(r.mean_benign_reward),
            ])?;
        }
        finish(w)
    })())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub framework: String,
    pub attackers: usize,
    pub throughput: Vec<f64>,
    pub energy_efficiency: Vec<f64>,
    pub reward: Vec<f64>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    into_bytes((|| {
        let mut w = writer(Vec::new());
        w.write_record(SWEEP_COLUMNS)?;
        for row in rows {
            w.write_record([
                row.framework.clone(),
                row.attackers.to_string(),
                row.throughput.len().to_string(),
                num(mean(&row.throughput)),
                num(stdev(&row.throughput)),
                num(mean(&row.energy_efficiency)),
                num(stdev(&row.energy_efficiency)),
                num(mean(&row.reward)),
                num(stdev(&row.reward)),
            ])?;
        }
        finish(w)
    })())
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn stdev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
