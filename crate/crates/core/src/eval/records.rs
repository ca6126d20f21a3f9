use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::stats::{bootstrap_ci, iqm, spread_stats, Spread};
use super::EvalError;

/// Evaluation of one instance in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub env: String,
    pub agent: String,
    pub strategy: String,
    /// Training seed of the run.
    pub seed: u64,
    pub instance: String,
    /// Whether the instance was a training instance of this run.
    pub train: bool,
    pub scores: Vec<f64>,
    pub best: f64,
    /// Per-decision action-selection times, in milliseconds.
    #[serde(default)]
    pub times_ms: Vec<f64>,
}

impl RunRecord {
    pub fn new(env: &str, agent: &str, strategy: &str, seed: u64, instance: &str, train: bool, scores: Vec<f64>, times_ms: Vec<f64>) -> Self {
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self {
            env: env.into(),
            agent: agent.into(),
            strategy: strategy.into(),
            seed,
            instance: instance.into(),
            train,
            scores,
            best,
            times_ms,
        }
    }
}

/// One row per episode. Timings are left out so the file is reproducible.
pub fn write_scores_csv(w: impl Write, records: &[RunRecord]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| EvalError::Csv(e.to_string());
    out.write_record(["env", "agent", "strategy", "seed", "instance", "split", "episode", "score", "best"]).map_err(err)?;
    for r in records {
        for (k, s) in r.scores.iter().enumerate() {
            out.write_record([
                r.env.clone(),
                r.agent.clone(),
                r.strategy.clone(),
                r.seed.to_string(),
                r.instance.clone(),
                if r.train { "train" } else { "test" }.to_string(),
                k.to_string(),
                format!("{s:.6}"),
                format!("{:.6}", r.best),
            ])
            .map_err(err)?;
        }
    }
    out.flush().map_err(|e| EvalError::Csv(e.to_string()))
}

/// Aggregate of one (env, agent, strategy) cell over all runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub env: String,
    pub agent: String,
    pub strategy: String,
    pub runs: usize,
    pub test_instances: usize,
    pub test_iqm: f64,
    pub ci: (f64, f64),
    pub spread: Spread,
    pub train_iqm: Option<f64>,
    /// test IQM - train IQM
    pub gap: Option<f64>,
}

/// IQM, 95% bootstrap CI and spreads of the best test scores per cell.
pub fn summarize(records: &[RunRecord], resamples: usize, seed: u64) -> Result<Vec<CellSummary>, EvalError> {
    let mut cells: BTreeMap<(String, String, String), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.env.clone(), r.agent.clone(), r.strategy.clone())).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((env, agent, strategy), rs) in cells {
        let test: Vec<f64> = rs.iter().filter(|r| !r.train).map(|r| r.best).collect();
        let train: Vec<f64> = rs.iter().filter(|r| r.train).map(|r| r.best).collect();
        if test.is_empty() {
            continue;
        }
        let mut seeds: Vec<u64> = rs.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let test_iqm = iqm(&test)?;
        let train_iqm = if train.is_empty() { None } else { Some(iqm(&train)?) };
        out.push(CellSummary {
            env,
            agent,
            strategy,
            runs: seeds.len(),
            test_instances: test.len(),
            test_iqm,
            ci: bootstrap_ci(&test, 0.95, resamples, seed)?,
            spread: spread_stats(&test)?,
            train_iqm,
            gap: train_iqm.map(|t| test_iqm - t),
        });
    }
    Ok(out)
}

/// Per-size result of the timing study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleRow {
    pub env: String,
    pub agent: String,
    pub size: usize,
    pub decisions: usize,
    pub median_ms: f64,
    pub mean_actions: f64,
    pub forwards_per_decision: f64,
}

pub fn write_scale_csv(w: impl Write, rows: &[ScaleRow]) -> Result<(), EvalError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(|e| EvalError::Csv(e.to_string()))?;
    }
    out.flush().map_err(|e| EvalError::Csv(e.to_string()))
}
