use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jmf_cli::commands::config_from_manifest;
use jmf_cli::{exit_code, run_command, Command, RunConfig};

#[derive(Parser)]
#[command(name = "jmf", version, about = "Filtering experiments for jump Markov systems")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Generate train/validation/test datasets.
    Generate(Common),
    /// Train the learned methods, evaluate every method, and save checkpoints.
    Train(Common),
    /// Evaluate saved checkpoints and the classical filters.
    Eval(Common),
    /// Train once per value of one hyperparameter and report the CoVar of test MSE.
    Sensitivity(Common),
    /// Train and evaluate on the quadratic scenario at each model-mismatch level.
    Mismatch(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults are used for missing fields.
    #[arg(long, conflicts_with = "manifest")]
    config: Option<PathBuf>,
    /// Re-run with the configuration recorded in a previous run's manifest.json.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Master seed for the dataset streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full dataset sizes and epoch count.
    #[arg(long)]
    paper_scale: bool,
    /// Evaluate classical filters on the test split only.
    #[arg(long)]
    test_only: bool,
    /// Worker threads for independent runs.
    #[arg(long)]
    workers: Option<usize>,
}

fn resolve(c: &Common) -> jmf_cli::Result<RunConfig> {
    let mut cfg = match (&c.config, &c.manifest) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(m)) => config_from_manifest(m)?,
        (None, None) => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if c.paper_scale {
        cfg.apply_paper_scale();
    }
    if c.test_only {
        cfg.test_only = true;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, common) = match &cli.command {
        Sub::Generate(c) => (Command::Generate, c),
        Sub::Train(c) => (Command::Train, c),
        Sub::Eval(c) => (Command::Eval, c),
        Sub::Sensitivity(c) => (Command::Sensitivity, c),
        Sub::Mismatch(c) => (Command::Mismatch, c),
    };
    let result = resolve(common).and_then(|cfg| run_command(command, &cfg));
    match result {
        Ok(report) => {
            for s in &report.summaries {
                let point = s.point.as_ref().map(|p| format!("{}={} ", p.axis, p.value)).unwrap_or_default();
                let variant = if s.variant.is_empty() { String::new() } else { format!(" ({})", s.variant) };
                let mse = s.mean_test_mse.map_or("diverged".to_string(), |m| format!("{m:.6}"));
                let covar = s.covar_percent.map(|c| format!(" covar {c:.2}%")).unwrap_or_default();
                println!("{point}{}{variant}: test mse {mse}{covar}", s.method);
            }
            for sw in &report.sweeps {
                if let Some(c) = sw.covar_percent {
                    println!("{} sweep over {:?}: covar {c:.2}%", sw.axis, sw.values);
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
