//! The harness subcommands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use jmf_core::jmfnet::TrainConfig;
use jmf_core::neural::{config_hash, Checkpoint};
use jmf_core::scenarios::Scenario;
use jmf_core::{Error, Result};
use log::info;
use rayon::prelude::*;

use crate::config::{Method, RunConfig, SweepAxis};
use crate::data::{Datasets, SPLITS};
use crate::report::{
    covar_percent, summarize, write_outputs, Manifest, RunRecord, RunReport, SweepPoint, SweepSummary, CURVES_FILE,
    MANIFEST_FILE, METRICS_FILE, REPORT_FILE,
};
use crate::runner::{classical_estimators, initial_learned, split_metrics, train_learned, Estimator};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Eval,
    Sensitivity,
    Mismatch,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Sensitivity => "sensitivity",
            Command::Mismatch => "mismatch",
        }
    }
}

/// A scenario and its datasets at one sweep point.
struct PointData {
    point: Option<SweepPoint>,
    scenario: Scenario,
    data: Datasets,
}

/// Where a learned estimator comes from.
#[derive(Debug, Clone)]
enum Source {
    Train(TrainConfig),
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone)]
enum Job {
    Learned {
        point: usize,
        method: Method,
        seed: u64,
        source: Source,
    },
    Classical {
        point: usize,
        method: Method,
        seed: u64,
    },
    Observation {
        point: usize,
    },
}

struct JobOutput {
    records: Vec<RunRecord>,
    checkpoint: Option<(String, Checkpoint)>,
}

pub fn checkpoint_name(method: Method, seed: u64, point: &Option<SweepPoint>) -> String {
    match point {
        Some(p) => format!("{}-{}{}-seed{seed}.ckpt", method.name(), p.axis, p.value),
        None => format!("{}-seed{seed}.ckpt", method.name()),
    }
}

fn load_or_generate(cfg: &RunConfig, scenario: &Scenario) -> Result<Datasets> {
    match &cfg.data_dir {
        Some(dir) => Datasets::load(dir, scenario),
        None => Datasets::generate(scenario, cfg.master_seed),
    }
}

fn evaluate(
    estimator: &Estimator,
    pd: &PointData,
    cfg: &RunConfig,
    splits: &[&str],
) -> Result<Vec<crate::runner::SplitMetrics>> {
    splits
        .iter()
        .map(|&name| {
            let trajs = pd.data.split(name);
            let est = estimator.estimate(&pd.scenario, trajs, cfg.initial_estimate)?;
            Ok(split_metrics(name, &est, trajs))
        })
        .collect()
}

fn run_job(job: &Job, points: &[PointData], cfg: &RunConfig, hash: [u8; 32]) -> Result<JobOutput> {
    let start = Instant::now();
    match job {
        Job::Learned {
            point,
            method,
            seed,
            source,
        } => {
            let pd = &points[*point];
            let (estimator, curve, skipped) = match source {
                Source::Train(tc) => {
                    info!("training {} seed {seed}", method.name());
                    let t = train_learned(*method, &pd.scenario, &pd.data.train, &pd.data.val, tc, &cfg.mode_net, *seed)?;
                    (t.estimator, t.curve, t.skipped_batches)
                }
                Source::Checkpoint(path) => {
                    let ck = Checkpoint::load(path)?;
                    let est = match initial_learned(*method, &pd.scenario, &cfg.mode_net, *seed)? {
                        Estimator::Jmf(mut net) => {
                            net.load_checkpoint(&ck)?;
                            Estimator::Jmf(net)
                        }
                        Estimator::ModelFree(mut net) => {
                            net.load_checkpoint(&ck)?;
                            Estimator::ModelFree(net)
                        }
                        other => other,
                    };
                    (est, vec![], 0)
                }
            };
            let splits = evaluate(&estimator, pd, cfg, &SPLITS)?;
            let checkpoint = match source {
                Source::Train(_) => estimator
                    .checkpoint(hash)
                    .map(|c| (checkpoint_name(*method, *seed, &pd.point), c)),
                Source::Checkpoint(_) => None,
            };
            Ok(JobOutput {
                records: vec![RunRecord {
                    point: pd.point.clone(),
                    method: method.name().into(),
                    variant: String::new(),
                    seed: *seed,
                    splits,
                    curve,
                    wall_time: start.elapsed().as_secs_f64(),
                    skipped_batches: skipped,
                }],
                checkpoint,
            })
        }
        Job::Classical { point, method, seed } => {
            let pd = &points[*point];
            let splits: &[&str] = if cfg.test_only { &["test"] } else { &SPLITS };
            let mut records = Vec::new();
            for (variant, est) in classical_estimators(*method, cfg.particles, *seed)? {
                let t0 = Instant::now();
                records.push(RunRecord {
                    point: pd.point.clone(),
                    method: method.name().into(),
                    variant,
                    seed: *seed,
                    splits: evaluate(&est, pd, cfg, splits)?,
                    curve: vec![],
                    wall_time: t0.elapsed().as_secs_f64(),
                    skipped_batches: 0,
                });
            }
            Ok(JobOutput {
                records,
                checkpoint: None,
            })
        }
        Job::Observation { point } => {
            let pd = &points[*point];
            Ok(JobOutput {
                records: vec![RunRecord {
                    point: pd.point.clone(),
                    method: "observation".into(),
                    variant: String::new(),
                    seed: 0,
                    splits: evaluate(&Estimator::Observation, pd, cfg, &SPLITS)?,
                    curve: vec![],
                    wall_time: start.elapsed().as_secs_f64(),
                    skipped_batches: 0,
                }],
                checkpoint: None,
            })
        }
    }
}

/// Learned methods once per seed, the particle filter once per seed, deterministic
/// filters once, and the observation baseline when the observation map is linear.
fn standard_jobs(point: usize, pd: &PointData, cfg: &RunConfig, source: impl Fn(Method, u64) -> Source) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &method in &cfg.methods {
        if method.is_learned() {
            for &seed in &cfg.seeds {
                jobs.push(Job::Learned {
                    point,
                    method,
                    seed,
                    source: source(method, seed),
                });
            }
        } else {
            let seeds: &[u64] = if method.is_stochastic() { &cfg.seeds } else { &cfg.seeds[..1] };
            for &seed in seeds {
                jobs.push(Job::Classical { point, method, seed });
            }
        }
    }
    if jmf_core::baselines::observation_estimate(&pd.scenario, &pd.data.test[..1]).is_some() {
        jobs.push(Job::Observation { point });
    }
    jobs
}

fn execute(jobs: &[Job], points: &[PointData], cfg: &RunConfig, hash: [u8; 32]) -> Result<Vec<JobOutput>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", cfg.workers)))?;
    pool.install(|| jobs.par_iter().map(|j| run_job(j, points, cfg, hash)).collect())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs a subcommand and writes its outputs under `cfg.out`.
pub fn run_command(command: Command, cfg: &RunConfig) -> Result<RunReport> {
    let start = Instant::now();
    let scenario = cfg.validate()?;
    let cfg_text = cfg.to_json();
    let hash = config_hash(&cfg_text);
    let out = cfg.out.clone();
    let mut datasets_info = Vec::new();

    let mut points = Vec::new();
    let mut sweeps_meta: Option<(SweepAxis, Vec<f64>)> = None;
    let jobs: Vec<Job> = match command {
        Command::Generate => {
            let data = Datasets::generate(&scenario, cfg.master_seed)?;
            datasets_info = data.save(&out.join("data"), scenario.system.num_modes())?;
            points.push(PointData {
                point: None,
                scenario,
                data,
            });
            let pd = &points[0];
            if jmf_core::baselines::observation_estimate(&pd.scenario, &pd.data.test[..1]).is_some() {
                vec![Job::Observation { point: 0 }]
            } else {
                vec![]
            }
        }
        Command::Train => {
            let data = load_or_generate(cfg, &scenario)?;
            let tc = cfg.train_config(scenario.spec.segment_len);
            points.push(PointData {
                point: None,
                scenario,
                data,
            });
            standard_jobs(0, &points[0], cfg, |_, _| Source::Train(tc.clone()))
        }
        Command::Eval => {
            let data = load_or_generate(cfg, &scenario)?;
            let dir = cfg.checkpoint_dir.clone().unwrap_or_else(|| out.join("checkpoints"));
            points.push(PointData {
                point: None,
                scenario,
                data,
            });
            standard_jobs(0, &points[0], cfg, |m, s| Source::Checkpoint(dir.join(checkpoint_name(m, s, &None))))
        }
        Command::Sensitivity => {
            let sweep = cfg
                .sweep
                .clone()
                .ok_or_else(|| Error::Config("sensitivity needs a 'sweep' with an axis and values".into()))?;
            if sweep.values.len() < 2 {
                return Err(Error::Config("a sweep needs at least two values; CoVar is undefined otherwise".into()));
            }
            let method = cfg
                .methods
                .iter()
                .copied()
                .find(|m| m.is_learned())
                .ok_or_else(|| Error::Config("sensitivity needs a learned method".into()))?;
            let data = load_or_generate(cfg, &scenario)?;
            let base = cfg.train_config(scenario.spec.segment_len);
            points.push(PointData {
                point: None,
                scenario,
                data,
            });
            let mut jobs = Vec::new();
            for &v in &sweep.values {
                let mut tc = base.clone();
                let mut seed = cfg.seeds[0];
                match sweep.axis {
                    SweepAxis::Seed => {
                        if v < 0.0 || v.fract() != 0.0 {
                            return Err(Error::Config(format!("seed value {v} is not a non-negative integer")));
                        }
                        seed = v as u64;
                    }
                    SweepAxis::Lr => tc.learning_rate = v,
                    SweepAxis::Batch => {
                        if v < 1.0 || v.fract() != 0.0 {
                            return Err(Error::Config(format!("batch size {v} is not a positive integer")));
                        }
                        tc.batch_size = v as usize;
                    }
                    SweepAxis::Clip => tc.clip_norm = v,
                }
                tc.validate()?;
                jobs.push(Job::Learned {
                    point: 0,
                    method,
                    seed,
                    source: Source::Train(tc),
                });
            }
            sweeps_meta = Some((sweep.axis, sweep.values.clone()));
            jobs
        }
        Command::Mismatch => {
            if cfg.mismatch_levels.is_empty() {
                return Err(Error::Config("no mismatch levels given".into()));
            }
            let mut jobs = Vec::new();
            for &level in &cfg.mismatch_levels {
                let level_cfg = cfg.with_mismatch(level)?;
                let sc = level_cfg.validate()?;
                let data = Datasets::generate(&sc, cfg.master_seed)?;
                let tc = cfg.train_config(sc.spec.segment_len);
                let idx = points.len();
                points.push(PointData {
                    point: Some(SweepPoint {
                        axis: "m_q".into(),
                        value: level,
                    }),
                    scenario: sc,
                    data,
                });
                jobs.extend(standard_jobs(idx, &points[idx], cfg, |_, _| Source::Train(tc.clone())));
            }
            jobs
        }
    };

    let outputs = execute(&jobs, &points, cfg, hash)?;
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    for o in outputs {
        records.extend(o.records);
        if let Some((name, ck)) = o.checkpoint {
            let dir = out.join("checkpoints");
            std::fs::create_dir_all(&dir)?;
            ck.save(&dir.join(&name))?;
            checkpoints.push(name);
        }
    }
    if let Some(dir) = &cfg.data_dir {
        for name in SPLITS {
            let file = format!("{name}.bin");
            datasets_info.push((file.clone(), crate::data::file_sha256(&dir.join(&file))?));
        }
    }

    let mut sweeps = Vec::new();
    if let Some((axis, values)) = sweeps_meta {
        let test_mse: Vec<Option<f64>> = records.iter().map(|r| r.test_mse()).collect();
        let finite: Vec<f64> = test_mse.iter().flatten().copied().collect();
        sweeps.push(SweepSummary {
            axis: axis.name().into(),
            method: records.first().map(|r| r.method.clone()).unwrap_or_default(),
            values,
            test_mse,
            covar_percent: covar_percent(&finite),
        });
        // Label each run with its sweep value.
        for (r, v) in records.iter_mut().zip(&sweeps[0].values) {
            r.point = Some(SweepPoint {
                axis: axis.name().into(),
                value: *v,
            });
        }
    }

    let report = RunReport {
        command: command.name().into(),
        config: cfg.clone(),
        scenario: points[0].scenario.spec.clone(),
        summaries: summarize(&records),
        records,
        sweeps,
        wall_time: start.elapsed().as_secs_f64(),
    };
    let manifest = Manifest {
        command: command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.master_seed,
        seeds: cfg.seeds.clone(),
        config_sha256: hex(&hash),
        config: cfg.clone(),
        scenario: report.scenario.clone(),
        datasets: datasets_info,
        checkpoints,
        outputs: [REPORT_FILE, METRICS_FILE, CURVES_FILE, MANIFEST_FILE]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    };
    write_outputs(&out, &report, &manifest)?;
    Ok(report)
}

/// Reads the configuration a manifest recorded.
pub fn config_from_manifest(path: &Path) -> Result<RunConfig> {
    let m: Manifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(m.config)
}
