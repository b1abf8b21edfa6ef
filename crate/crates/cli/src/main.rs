use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use pam_core::exec::{init_threads, Execution};
use pam_core::harness::{run_command, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "pam-lab", version, about = "Monte Carlo experiments for the parabolic Anderson model with rough Gaussian noise")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 or 1 runs the sequential path).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Reduced sample counts.
    #[arg(long, global = true)]
    quick: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the noise model and config.
    Validate,
    /// Normality of A_t(R)/sqrt(2R) and its variance against the FK limit.
    Clt,
    /// Direct SPDE covariance vs. the FK forms and the chaos series.
    Covariance,
    /// Moment bounds F1, F8 and the l_R phi integral.
    Bounds,
    /// Wick normalisation, second moment and increment scaling.
    Moments,
    /// Write the Q_eps interpolation table.
    QtableDump {
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        x_max: Option<f64>,
        #[arg(long, default_value_t = 256)]
        cells: usize,
    },
}

fn load(common: &Common) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    let (mut cfg, base) = match &common.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if common.quick {
        cfg.quick = true;
    }
    Ok((cfg, base))
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, base: &Path) -> PathBuf {
    match (&common.out, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => PathBuf::from("out"),
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let (cfg, base) = load(&cli.common)?;
    let command = match cli.command {
        Cmd::Validate => Command::Validate,
        Cmd::Clt => Command::Clt,
        Cmd::Covariance => Command::Covariance,
        Cmd::Bounds => Command::Bounds,
        Cmd::Moments => Command::Moments,
        Cmd::QtableDump { eps, x_max, cells } => Command::QTableDump { eps, x_max, cells },
    };
    if !matches!(command, Command::Validate) && cfg.seed.is_none() {
        bail!("a seed is required: pass --seed or set `seed` in the config");
    }
    let execution = match cli.common.threads {
        Some(0 | 1) => Execution::Sequential,
        _ => Execution::Parallel,
    };
    init_threads(cli.common.threads);
    let outcome = run_command(command, &cfg, &base, execution)?;
    let dir = out_dir(&cli.common, &cfg, &base);
    outcome.write(&dir).with_context(|| format!("writing {}", dir.display()))?;
    println!("{}: {} rows written to {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.rows.len(), dir.display());
    Ok(outcome.pass)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
