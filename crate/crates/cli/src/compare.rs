//! Seed sweeps over several regimes and their summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use rnc_core::data::write_atomic;

use crate::config::{ExperimentConfig, Regime};
use crate::error::{CliError, Result};
use crate::run::run_experiment;

pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";

/// Columns of the text table, in order. Metrics no run reported are left out.
const TABLE_METRICS: [&str; 6] = [
    "val_mae",
    "embedding_spearman",
    "final_encoder_rnc_loss",
    "final_encoder_supcon_loss",
    "val_mae_inband",
    "val_mae_outband",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub regime: Regime,
    pub seed: u64,
    /// Run directory relative to the comparison directory.
    pub dir: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Aggregate> {
        Some(Aggregate {
            median: median(values)?,
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            count: values.len(),
        })
    }
}

/// Middle value of the sorted values; the mean of the two middle values for
/// an even count.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub runs: Vec<RunRecord>,
    pub failed: usize,
    /// Regime, then metric, over the successful runs.
    pub regimes: BTreeMap<String, BTreeMap<String, Aggregate>>,
}

impl Summary {
    pub fn build(name: &str, runs: Vec<RunRecord>, metrics: &[Option<BTreeMap<String, f64>>]) -> Summary {
        let mut values: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
        for (run, m) in runs.iter().zip(metrics) {
            let Some(m) = m else { continue };
            let per_regime = values.entry(run.regime.to_string()).or_default();
            for (k, v) in m {
                per_regime.entry(k.clone()).or_default().push(*v);
            }
        }
        let regimes = values
            .into_iter()
            .map(|(regime, per_metric)| {
                let aggs = per_metric
                    .into_iter()
                    .filter_map(|(k, v)| Aggregate::of(&v).map(|a| (k, a)))
                    .collect();
                (regime, aggs)
            })
            .collect();
        Summary {
            name: name.to_string(),
            failed: runs.iter().filter(|r| !r.ok).count(),
            runs,
            regimes,
        }
    }

    /// Aligned text table: one row per regime, `median [min, max]` cells.
    pub fn table(&self) -> String {
        let columns: Vec<&str> = TABLE_METRICS
            .iter()
            .copied()
            .filter(|m| self.regimes.values().any(|r| r.contains_key(*m)))
            .collect();
        let mut rows = vec![{
            let mut h = vec!["regime".to_string(), "runs".to_string()];
            h.extend(columns.iter().map(|c| c.to_string()));
            h
        }];
        for (regime, aggs) in &self.regimes {
            let count = aggs.values().map(|a| a.count).max().unwrap_or(0);
            let mut row = vec![regime.clone(), count.to_string()];
            for c in &columns {
                row.push(match aggs.get(*c) {
                    Some(a) => format!("{:.4} [{:.4}, {:.4}]", a.median, a.min, a.max),
                    None => "-".to_string(),
                });
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        if self.failed > 0 {
            let _ = writeln!(out, "\n{} run(s) failed:", self.failed);
            for r in self.runs.iter().filter(|r| !r.ok) {
                let _ = writeln!(
                    out,
                    "  {} seed {}: {}",
                    r.regime,
                    r.seed,
                    r.error.as_deref().unwrap_or("unknown error")
                );
            }
        }
        out
    }
}

pub struct CompareOutput {
    pub dir: PathBuf,
    pub summary: Summary,
}

/// Runs every regime with every seed into `<root>/<name>/`, `jobs` at a time,
/// and writes `summary.json` and `summary.txt` there. Failed runs are recorded
/// in the summary; the summary is written either way and the error reports
/// how many runs failed.
pub fn compare(cfg: &ExperimentConfig, jobs: usize) -> Result<CompareOutput> {
    if cfg.regimes.len() < 2 {
        return Err(CliError::Config("compare needs at least two regimes".into()));
    }
    let dir = cfg.out_root().join(&cfg.name);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;

    let plan: Vec<(Regime, u64)> = cfg
        .regimes
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    let results: Vec<(RunRecord, Option<BTreeMap<String, f64>>)> = pool.install(|| {
        plan.par_iter()
            .map(|&(regime, seed)| run_child(cfg, &dir, regime, seed))
            .collect()
    });
    let (runs, metrics): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = Summary::build(&cfg.name, runs, &metrics);
    write_summary(&dir, &summary)?;
    if summary.failed > 0 {
        return Err(CliError::RunsFailed {
            failed: summary.failed,
            total: summary.runs.len(),
        });
    }
    Ok(CompareOutput { dir, summary })
}

fn run_child(
    cfg: &ExperimentConfig,
    dir: &Path,
    regime: Regime,
    seed: u64,
) -> (RunRecord, Option<BTreeMap<String, f64>>) {
    let name = format!("{}-seed{seed}", regime.slug());
    let result = run_experiment(cfg, regime, seed, &dir.join(&name));
    match &result {
        Ok(_) => eprintln!("finished {regime} seed {seed}"),
        Err(e) => eprintln!("failed {regime} seed {seed}: {e}"),
    }
    let record = RunRecord {
        regime,
        seed,
        dir: name,
        ok: result.is_ok(),
        error: result.as_ref().err().map(|e| e.to_string()),
    };
    (record, result.ok().map(|r| r.metrics))
}

pub fn write_summary(dir: &Path, summary: &Summary) -> Result<()> {
    let json = serde_json::to_string_pretty(summary)
        .map_err(|e| CliError::io(dir, std::io::Error::other(e)))?;
    write_atomic(&dir.join(SUMMARY_JSON), format!("{json}\n").as_bytes())?;
    write_atomic(&dir.join(SUMMARY_TXT), summary.table().as_bytes())?;
    Ok(())
}
