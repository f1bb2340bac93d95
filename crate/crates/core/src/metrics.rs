//! Per-round metrics and their CSV form.
//!
//! Files start with `# key=value` metadata lines, followed by a header row
//! `algorithm,seed,round,cum_local_steps,f,subopt,consensus_gap,wall_ms`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Fedmls,
    Fedavg,
    Scaffold,
    Scaffnew,
    Mopes,
}

impl Algorithm {
    pub const FEDERATED: [Algorithm; 4] = [
        Algorithm::Fedmls,
        Algorithm::Scaffold,
        Algorithm::Scaffnew,
        Algorithm::Fedavg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Fedmls => "fedmls",
            Algorithm::Fedavg => "fedavg",
            Algorithm::Scaffold => "scaffold",
            Algorithm::Scaffnew => "scaffnew",
            Algorithm::Mopes => "mopes",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedmls" => Ok(Algorithm::Fedmls),
            "fedavg" => Ok(Algorithm::Fedavg),
            "scaffold" => Ok(Algorithm::Scaffold),
            "scaffnew" => Ok(Algorithm::Scaffnew),
            "mopes" => Ok(Algorithm::Mopes),
            other => Err(Error::invalid(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// One row of a metrics file: the state after communication round `round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub round: usize,
    pub cum_local_steps: u64,
    #[serde(rename = "f")]
    pub objective: f64,
    #[serde(rename = "subopt")]
    pub suboptimality: Option<f64>,
    pub consensus_gap: f64,
    pub wall_ms: f64,
}

impl MetricsRecord {
    /// True when every field except the wall clock matches bit-for-bit.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.algorithm == other.algorithm
            && self.round == other.round
            && self.cum_local_steps == other.cum_local_steps
            && self.objective.to_bits() == other.objective.to_bits()
            && self.suboptimality.map(f64::to_bits) == other.suboptimality.map(f64::to_bits)
            && self.consensus_gap.to_bits() == other.consensus_gap.to_bits()
    }
}

pub type Metadata = Vec<(String, String)>;

fn write_metadata<W: Write>(out: &mut W, metadata: &[(String, String)]) -> Result<()> {
    for (k, v) in metadata {
        let v = v.replace('\n', " ");
        writeln!(out, "# {k}={v}").map_err(|e| Error::Io {
            path: "<metrics>".into(),
            source: e,
        })?;
    }
    Ok(())
}

fn split_metadata(text: &str) -> (Metadata, &str) {
    let mut meta = Vec::new();
    let mut rest = text;
    while let Some(line) = rest.strip_prefix('#') {
        let (line, tail) = match line.find('\n') {
            Some(i) => (&line[..i], &line[i + 1..]),
            None => (line, ""),
        };
        if let Some((k, v)) = line.trim_start().split_once('=') {
            meta.push((k.trim().to_string(), v.trim_end_matches('\r').to_string()));
        }
        rest = tail;
    }
    (meta, rest)
}

pub fn write_metrics<W: Write>(
    mut out: W,
    metadata: &[(String, String)],
    records: &[MetricsRecord],
) -> Result<()> {
    write_metadata(&mut out, metadata)?;
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    if records.is_empty() {
        w.write_record([
            "algorithm",
            "seed",
            "round",
            "cum_local_steps",
            "f",
            "subopt",
            "consensus_gap",
            "wall_ms",
        ])?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<metrics>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn read_metrics<R: Read>(mut input: R) -> Result<(Metadata, Vec<MetricsRecord>)> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(|e| Error::Io {
        path: "<metrics>".into(),
        source: e,
    })?;
    let (meta, body) = split_metadata(&text);
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let records = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<MetricsRecord>, _>>()?;
    Ok((meta, records))
}

/// Per-round summary across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: Algorithm,
    pub round: usize,
    pub seeds: usize,
    pub mean_cum_local_steps: f64,
    pub mean_f: f64,
    pub mean_subopt: Option<f64>,
    pub std_subopt: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Averages runs round by round. A round is summarized over the runs that
/// reached it; the sample standard deviation is reported.
pub fn aggregate(runs: &[Vec<MetricsRecord>]) -> Vec<AggregateRow> {
    let rounds = runs.iter().map(Vec::len).max().unwrap_or(0);
    let mut rows = Vec::with_capacity(rounds);
    for idx in 0..rounds {
        let at: Vec<&MetricsRecord> = runs.iter().filter_map(|r| r.get(idx)).collect();
        let algorithm = at[0].algorithm;
        let steps: Vec<f64> = at.iter().map(|r| r.cum_local_steps as f64).collect();
        let fs: Vec<f64> = at.iter().map(|r| r.objective).collect();
        let subs: Option<Vec<f64>> = at.iter().map(|r| r.suboptimality).collect();
        let (mean_subopt, std_subopt) = match subs {
            Some(s) => {
                let (m, sd) = mean_std(&s);
                (Some(m), Some(sd))
            }
            None => (None, None),
        };
        rows.push(AggregateRow {
            algorithm,
            round: at[0].round,
            seeds: at.len(),
            mean_cum_local_steps: mean_std(&steps).0,
            mean_f: mean_std(&fs).0,
            mean_subopt,
            std_subopt,
        });
    }
    rows
}

pub fn write_aggregate<W: Write>(
    mut out: W,
    metadata: &[(String, String)],
    rows: &[AggregateRow],
) -> Result<()> {
    write_metadata(&mut out, metadata)?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<aggregate>".into(),
        source: e,
    })?;
    Ok(())
}

pub fn read_aggregate<R: Read>(mut input: R) -> Result<(Metadata, Vec<AggregateRow>)> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(|e| Error::Io {
        path: "<aggregate>".into(),
        source: e,
    })?;
    let (meta, body) = split_metadata(&text);
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<AggregateRow>, _>>()?;
    Ok((meta, rows))
}
