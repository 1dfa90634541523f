//! The acceptance suite: every experiment, one line per criterion, and the
//! reproducibility check across thread counts.

use std::fs;
use std::path::Path;

use serde_json::json;

use super::config::ExperimentConfig;
use super::experiments::{Criterion, Experiment};
use super::records::{Report, ResultRecord};
use crate::error::{Error, Result};

/// Aggregate of a full run.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub criteria: Vec<Criterion>,
    /// Experiments whose own checks failed.
    pub failed_experiments: Vec<String>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn lines(&self) -> Vec<String> {
        self.criteria.iter().map(Criterion::line).collect()
    }
}

/// Run every experiment, write its files into `out`, and write
/// `verify_all.jsonl` and `verify_all.summary.txt` with one row per
/// criterion.
pub fn verify_all(cfg: &ExperimentConfig, out: &Path) -> Result<Verdict> {
    cfg.validate()?;
    let mut criteria = Vec::new();
    let mut failed = Vec::new();
    for e in Experiment::ALL {
        let o = e.run(cfg)?;
        o.report.write(out)?;
        if !o.report.passed() {
            failed.push(e.name().to_string());
        }
        criteria.extend(o.criteria);
    }
    criteria.sort_by_key(|c| criterion_order(&c.id));
    let mut rep = Report::new("verify_all");
    for c in &criteria {
        rep.push(
            ResultRecord::exact("verify_all", if c.pass { 1.0 } else { 0.0 }, cfg.seed)
                .param("criterion", c.id.clone())
                .param("title", c.title.clone())
                .param("detail", c.detail.clone())
                .with_pass(c.pass),
        );
    }
    let verdict = Verdict { criteria, failed_experiments: failed };
    rep.summary = verdict.lines();
    rep.note(format!(
        "{} of {} criteria passed; experiments with failed checks: {}",
        verdict.criteria.iter().filter(|c| c.pass).count(),
        verdict.criteria.len(),
        if verdict.failed_experiments.is_empty() { "none".to_string() } else { verdict.failed_experiments.join(", ") }
    ));
    rep.documents.push(("verify_all.config".into(), json!(cfg)));
    rep.write(out)?;
    Ok(verdict)
}

fn criterion_order(id: &str) -> (u32, String) {
    let digits: String = id.chars().take_while(char::is_ascii_digit).collect();
    (digits.parse().unwrap_or(u32::MAX), id.to_string())
}

/// Run [`verify_all`] once per thread count, each in its own pool and
/// subdirectory of `base`, and compare every result file byte for byte.
/// Timing files are excluded.
pub fn reproducibility(cfg: &ExperimentConfig, base: &Path, threads: &[usize]) -> Result<Criterion> {
    let mut dirs = Vec::new();
    for &t in threads {
        let dir = base.join(format!("threads-{t}"));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Precondition(format!("cannot build a pool of {t} threads: {e}")))?;
        pool.install(|| verify_all(cfg, &dir))?;
        dirs.push(dir);
    }
    let files = result_files(&dirs[0])?;
    let mut mismatched = Vec::new();
    for d in &dirs[1..] {
        if result_files(d)? != files {
            mismatched.push(format!("file set of {}", d.display()));
            continue;
        }
        for f in &files {
            let a = fs::read(dirs[0].join(f)).map_err(|e| Error::Precondition(e.to_string()))?;
            let b = fs::read(d.join(f)).map_err(|e| Error::Precondition(e.to_string()))?;
            if a != b {
                mismatched.push(f.clone());
            }
        }
    }
    let detail = if mismatched.is_empty() {
        format!("{} files identical across {:?} threads", files.len(), threads)
    } else {
        format!("differences in {}", mismatched.join(", "))
    };
    Ok(Criterion { id: "13".into(), title: "reproducibility".into(), pass: mismatched.is_empty(), detail })
}

fn result_files(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| Error::Precondition(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !n.ends_with(".timings.jsonl"))
        .collect();
    names.sort();
    Ok(names)
}
