use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use semdiff::config::ExperimentConfig;
use semdiff::experiment::{self, Axis};
use semdiff::Error;

/// Split diffusion delivery simulator.
#[derive(Debug, Parser)]
#[command(name = "semdiff", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML). Defaults to the built-in configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding `out_dir` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Master seed, overriding `master_seed` from the config.
    #[arg(long, global = true, env = "SEMDIFF_SEED", value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for parallel phases; 0 uses all cores.
    #[arg(long, global = true, env = "SEMDIFF_JOBS", value_name = "N", default_value_t = 0)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the config, build every schedule and verify the reverse-step identities.
    Validate,
    /// Run every variant over a scenario axis and write transcript and aggregate CSVs.
    Sweep {
        #[arg(long, value_enum)]
        axis: AxisArg,
    },
    /// Train the step-split policy and compare it with exhaustive search.
    TrainPolicy,
    /// Train the tiny noise predictor.
    TrainDenoiser,
    /// Summarize transcript CSVs found in the output directory.
    Report,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Snr,
    Compute,
}

impl From<AxisArg> for Axis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Snr => Axis::Snr,
            AxisArg::Compute => Axis::Compute,
        }
    }
}

fn load(common: &Common) -> semdiff::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> semdiff::Result<()> {
    let cfg = load(&cli.common)?;
    let jobs = cli.common.jobs;
    let out_dir = cfg.out_dir.clone();
    match cli.command {
        Command::Validate => {
            for line in experiment::validate(&cfg)? {
                println!("ok  {line}");
            }
            println!("schedule digest {:016x}", cfg.schedule.digest());
        }
        Command::Sweep { axis } => {
            let out = experiment::sweep(&cfg, axis.into(), jobs)?;
            for e in &out.errors {
                eprintln!("run failed: {e}");
            }
            let (t, a) = experiment::write_sweep(&out, &out_dir)?;
            println!("{} runs ({} errors)", out.transcripts.len(), out.errors.len());
            println!("wrote {}", t.display());
            println!("wrote {}", a.display());
        }
        Command::TrainPolicy => {
            let out = experiment::train_policy(&cfg, jobs)?;
            let agree = out.report.iter().filter(|r| r.policy_action == r.oracle_action).count();
            let worst = out.report.iter().map(|r| r.relative_gap()).fold(0.0, f64::max);
            println!(
                "policy agrees with exhaustive search on {agree}/{} states; worst reward gap {:.2}%",
                out.report.len(),
                100.0 * worst
            );
            for p in experiment::write_policy(&cfg, &out, &out_dir)? {
                println!("wrote {}", p.display());
            }
        }
        Command::TrainDenoiser => {
            let trained = experiment::train_denoiser(&cfg)?;
            println!(
                "loss {:.6} -> {:.6} over {} epochs",
                trained.initial_loss(),
                trained.final_loss(),
                trained.curve.len() - 1
            );
            let (blob, curve) = experiment::write_denoiser(&cfg, &trained, &out_dir)?;
            println!("wrote {}", blob.display());
            println!("wrote {}", curve.display());
        }
        Command::Report => report(&out_dir)?,
    }
    Ok(())
}

fn report(dir: &Path) -> semdiff::Result<()> {
    let mut rows = Vec::new();
    for axis in [Axis::Snr, Axis::Compute] {
        let path = dir.join(format!("transcripts_{axis}.csv"));
        if path.exists() {
            rows.extend(experiment::summarize_transcripts(&path)?);
        }
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("no transcript CSVs in {}", dir.display())));
    }
    println!(
        "{:<14} {:>7} {:>8} {:>9} {:>6} {:>8} {:>10} {:>10}",
        "variant", "snr_db", "rho_edge", "rho_local", "runs", "failed", "L_mean", "mse_mean"
    );
    for r in &rows {
        println!(
            "{:<14} {:>7.2} {:>8.2} {:>9.2} {:>6} {:>8.3} {:>10.4} {:>10.5}",
            r.variant, r.snr_db, r.rho_edge, r.rho_local, r.runs, r.failure_rate, r.latency_mean, r.mse_mean
        );
    }
    let path = dir.join("report.csv");
    experiment::write_summary(&rows, std::fs::File::create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
