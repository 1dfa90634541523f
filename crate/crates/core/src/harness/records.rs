//! Result records and their files.
//!
//! Each experiment writes `<name>.jsonl` (one [`ResultRecord`] per line),
//! `<name>.summary.txt`, optional CSV tables, and `<name>.timings.jsonl`
//! with wall-clock times. Timings live in their own file so that the other
//! files are byte-identical across runs with the same seed.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::stats::McEstimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub parameters: BTreeMap<String, Value>,
    pub estimate: f64,
    pub stderr: f64,
    /// `None` for deterministic quantities.
    pub ess: Option<f64>,
    pub count: usize,
    /// Master seed that regenerates the record.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
}

impl ResultRecord {
    pub fn new(experiment: &str, est: &McEstimate) -> Self {
        Self {
            experiment: experiment.into(),
            parameters: BTreeMap::new(),
            estimate: est.value,
            stderr: est.stderr,
            ess: est.ess.is_finite().then_some(est.ess),
            count: est.count,
            seed: est.seed,
            wall_time: None,
            pass: None,
        }
    }

    /// A record for a deterministic quantity.
    pub fn exact(experiment: &str, value: f64, seed: u64) -> Self {
        Self::new(experiment, &McEstimate::exact(value, seed))
    }

    pub fn param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.parameters.insert(key.into(), value.into());
        self
    }

    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = Some(pass);
        self
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.parameters.get(key).and_then(Value::as_str)
    }

    /// Parameters flattened to `key=value` pairs joined by `;`.
    pub fn flat_parameters(&self) -> String {
        self.parameters
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k}={s}"),
                other => format!("{k}={other}"),
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// A named CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub csv: String,
}

impl Table {
    pub fn from_rows<T: Serialize>(name: &str, rows: &[T]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(io_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Precondition(e.to_string()))?;
        Ok(Self { name: name.into(), csv: String::from_utf8(bytes).map_err(|e| Error::Precondition(e.to_string()))? })
    }
}

/// Output of one experiment.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub experiment: String,
    pub records: Vec<ResultRecord>,
    pub tables: Vec<Table>,
    /// Extra JSON documents, written as `<name>.json`.
    pub documents: Vec<(String, Value)>,
    /// Extra JSON-lines streams, written as `<name>.jsonl`.
    pub streams: Vec<(String, Vec<Value>)>,
    pub summary: Vec<String>,
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Self { experiment: experiment.into(), ..Self::default() }
    }

    /// False if any record failed its check.
    pub fn passed(&self) -> bool {
        self.records.iter().all(|r| r.pass != Some(false))
    }

    pub fn failures(&self) -> usize {
        self.records.iter().filter(|r| r.pass == Some(false)).count()
    }

    /// Pass flag of the first record whose `statistic` parameter is `name`.
    pub fn flag(&self, name: &str) -> Option<bool> {
        self.records.iter().find(|r| r.param_str("statistic") == Some(name)).and_then(|r| r.pass)
    }

    pub fn push(&mut self, r: ResultRecord) {
        self.records.push(r);
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    /// Write all files of the report into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err)?;
        let stem = &self.experiment;
        let mut timings = Vec::new();
        let clean: Vec<ResultRecord> = self
            .records
            .iter()
            .map(|r| {
                if let Some(t) = r.wall_time {
                    timings.push(serde_json::json!({ "experiment": r.experiment, "parameters": r.parameters, "wall_time": t }));
                }
                ResultRecord { wall_time: None, ..r.clone() }
            })
            .collect();
        write_jsonl(&dir.join(format!("{stem}.jsonl")), &clean)?;
        write_jsonl(&dir.join(format!("{stem}.timings.jsonl")), &timings)?;
        for t in &self.tables {
            fs::write(dir.join(format!("{}.csv", t.name)), &t.csv).map_err(io_err)?;
        }
        for (name, doc) in &self.documents {
            let text = serde_json::to_string_pretty(doc).map_err(io_err)?;
            fs::write(dir.join(format!("{name}.json")), text + "\n").map_err(io_err)?;
        }
        for (name, rows) in &self.streams {
            write_jsonl(&dir.join(format!("{name}.jsonl")), rows)?;
        }
        let mut summary = self.summary.join("\n");
        summary.push('\n');
        fs::write(dir.join(format!("{stem}.summary.txt")), summary).map_err(io_err)?;
        Ok(())
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    for r in rows {
        serde_json::to_writer(&mut f, r).map_err(io_err)?;
        f.write_all(b"\n").map_err(io_err)?;
    }
    f.flush().map_err(io_err)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(io_err)?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|(i, l)| {
            let l = l.map_err(io_err)?;
            serde_json::from_str(&l).map_err(|e| Error::Precondition(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(io_err)?;
    r.deserialize().map(|row| row.map_err(io_err)).collect()
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Precondition(format!("i/o: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_builders() {
        let r = ResultRecord::exact("x", 1.5, 7).param("n", 8).param("spec", "log").with_pass(true);
        assert_eq!(r.flat_parameters(), "n=8;spec=log");
        assert_eq!(r.seed, 7);
        assert_eq!(r.stderr, 0.0);
    }

    #[test]
    fn failures_are_counted() {
        let mut rep = Report::new("x");
        rep.push(ResultRecord::exact("x", 1.0, 0).with_pass(true));
        rep.push(ResultRecord::exact("x", 1.0, 0));
        assert!(rep.passed());
        rep.push(ResultRecord::exact("x", 1.0, 0).with_pass(false));
        assert_eq!(rep.failures(), 1);
        assert!(!rep.passed());
    }
}
