//! Run reports and the files written for them.

use std::fmt::Write as _;
use std::path::Path;

use jmf_core::jmfnet::{to_db, CurveRow};
use jmf_core::scenarios::ScenarioSpec;
use jmf_core::Result;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::runner::SplitMetrics;

/// Label of a sweep point (`m_q = 0.1`, `lr = 1e-4`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: String,
    pub value: f64,
}

/// One estimator run for one seed at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub point: Option<SweepPoint>,
    pub method: String,
    /// `oracle` or `agnostic` for classical filters, empty otherwise.
    pub variant: String,
    pub seed: u64,
    pub splits: Vec<SplitMetrics>,
    pub curve: Vec<CurveRow>,
    pub wall_time: f64,
    pub skipped_batches: usize,
}

impl RunRecord {
    pub fn split(&self, name: &str) -> Option<&SplitMetrics> {
        self.splits.iter().find(|s| s.split == name)
    }

    pub fn test_mse(&self) -> Option<f64> {
        self.split("test").and_then(|s| s.mse)
    }
}

/// Test-split statistics of one method variant across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub point: Option<SweepPoint>,
    pub method: String,
    pub variant: String,
    pub seeds: Vec<u64>,
    pub test_mse: Vec<Option<f64>>,
    pub mean_test_mse: Option<f64>,
    pub mean_test_mse_db: Option<f64>,
    /// `100·std/mean` of the per-seed test MSE in percent; present only with two or more seeds.
    pub covar_percent: Option<f64>,
    /// Seeds whose test MSE was undefined because every trajectory diverged.
    pub divergent_seeds: usize,
}

/// Test MSE per value of a swept hyperparameter and its CoVar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub axis: String,
    pub method: String,
    pub values: Vec<f64>,
    pub test_mse: Vec<Option<f64>>,
    pub covar_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: RunConfig,
    pub scenario: ScenarioSpec,
    pub records: Vec<RunRecord>,
    pub summaries: Vec<MethodSummary>,
    pub sweeps: Vec<SweepSummary>,
    pub wall_time: f64,
}

/// `100·s/m` with the sample standard deviation `s` (n − 1 denominator).
pub fn covar_percent(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some(100.0 * var.sqrt() / mean)
}

/// Groups records by (point, method, variant) in first-seen order.
pub fn summarize(records: &[RunRecord]) -> Vec<MethodSummary> {
    let mut out: Vec<MethodSummary> = Vec::new();
    for r in records {
        let idx = out
            .iter()
            .position(|s| s.point == r.point && s.method == r.method && s.variant == r.variant);
        let s = match idx {
            Some(i) => &mut out[i],
            None => {
                out.push(MethodSummary {
                    point: r.point.clone(),
                    method: r.method.clone(),
                    variant: r.variant.clone(),
                    seeds: vec![],
                    test_mse: vec![],
                    mean_test_mse: None,
                    mean_test_mse_db: None,
                    covar_percent: None,
                    divergent_seeds: 0,
                });
                out.last_mut().expect("just pushed")
            }
        };
        s.seeds.push(r.seed);
        s.test_mse.push(r.test_mse());
    }
    for s in &mut out {
        let finite: Vec<f64> = s.test_mse.iter().flatten().copied().collect();
        s.divergent_seeds = s.test_mse.len() - finite.len();
        if !finite.is_empty() {
            let mean = finite.iter().sum::<f64>() / finite.len() as f64;
            s.mean_test_mse = Some(mean);
            s.mean_test_mse_db = Some(to_db(mean));
        }
        s.covar_percent = covar_percent(&finite);
    }
    out
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const METRICS_HEADER: &str = "sweep_axis,sweep_value,method,variant,seed,split,mse,mse_db,loss_sum,trajectories,diverged";
pub const CURVES_HEADER: &str = "sweep_axis,sweep_value,method,variant,seed,epoch,phase,train_loss,val_loss";

fn point_cells(p: &Option<SweepPoint>) -> (String, String) {
    match p {
        Some(p) => (p.axis.clone(), p.value.to_string()),
        None => (String::new(), String::new()),
    }
}

/// One row per record and split. Contains no timings, so it is reproducible bit for bit.
pub fn metrics_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in records {
        let (axis, value) = point_cells(&r.point);
        for m in &r.splits {
            writeln!(
                s,
                "{axis},{value},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.variant,
                r.seed,
                m.split,
                num(m.mse),
                num(m.mse_db),
                num(m.loss_sum),
                m.trajectories,
                m.diverged
            )
            .expect("writing to a String");
        }
    }
    s
}

pub fn curves_csv(records: &[RunRecord]) -> String {
    let mut s = String::from(CURVES_HEADER);
    s.push('\n');
    for r in records {
        let (axis, value) = point_cells(&r.point);
        for c in &r.curve {
            writeln!(
                s,
                "{axis},{value},{},{},{},{},{},{},{}",
                r.method,
                r.variant,
                r.seed,
                c.epoch,
                c.phase,
                num(c.train_loss.is_finite().then_some(c.train_loss)),
                num(c.val_loss.is_finite().then_some(c.val_loss))
            )
            .expect("writing to a String");
        }
    }
    s
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub config_sha256: String,
    pub config: RunConfig,
    pub scenario: ScenarioSpec,
    /// `(file, sha256)` of datasets written or read.
    pub datasets: Vec<(String, String)>,
    pub checkpoints: Vec<String>,
    pub outputs: Vec<String>,
}

pub const REPORT_FILE: &str = "report.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_outputs(dir: &Path, report: &RunReport, manifest: &Manifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPORT_FILE), serde_json::to_string_pretty(report)?)?;
    std::fs::write(dir.join(METRICS_FILE), metrics_csv(&report.records))?;
    std::fs::write(dir.join(CURVES_FILE), curves_csv(&report.records))?;
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}
