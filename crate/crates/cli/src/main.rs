use clap::{Args, Parser, Subcommand};
use spodgt_cli::config::{Overrides, RunConfigFile};
use spodgt_cli::{commands, CliError};

/// Simulator and analytical toolkit for sporadic gradient tracking over
/// directed graphs.
#[derive(Parser)]
#[command(name = "spodgt", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: Option<String>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long)]
    out_dir: Option<String>,
    /// Edge-list graph file override.
    #[arg(long)]
    graph_file: Option<String>,
    /// Trace logging stride override.
    #[arg(long)]
    log_stride: Option<u64>,
    /// Concurrent repeats/sweep points (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured variants and write trace plus aggregate CSVs.
    Run(CommonArgs),
    /// Emit the full theory report (constants, ceilings, constraints) as JSON.
    Theory(CommonArgs),
    /// Monte-Carlo-verify the analysis inequalities on a small instance.
    Check {
        #[command(flatten)]
        common: CommonArgs,
        /// Monte-Carlo trials override.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Re-run the experiment along one parameter axis.
    Sweep(CommonArgs),
}

fn load(common: &CommonArgs, trials: Option<usize>, default_check: bool) -> Result<(RunConfigFile, Overrides), CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfigFile::from_path(path)?,
        None if default_check => RunConfigFile::default_check(),
        None => return Err(CliError::Config("--config is required".into())),
    };
    let ov = Overrides {
        seed: common.seed,
        out_dir: common.out_dir.clone(),
        graph_file: common.graph_file.clone(),
        log_stride: common.log_stride,
        trials,
        jobs: common.jobs,
    };
    cfg.apply(&ov);
    Ok((cfg, ov))
}

fn run() -> Result<(), CliError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(common) => {
            let (cfg, ov) = load(&common, None, false)?;
            commands::cmd_run(&cfg, &ov)?;
            eprintln!("run complete: outputs in {}", cfg.out_dir());
            Ok(())
        }
        Command::Theory(common) => {
            let (cfg, ov) = load(&common, None, false)?;
            let json = commands::cmd_theory(&cfg, &ov)?;
            println!("{json}");
            Ok(())
        }
        Command::Check { common, trials } => {
            let (cfg, ov) = load(&common, trials, true)?;
            let (json, all_pass) = commands::cmd_check(&cfg, &ov)?;
            println!("{json}");
            if all_pass {
                Ok(())
            } else {
                Err(CliError::CheckFailed)
            }
        }
        Command::Sweep(common) => {
            let (cfg, ov) = load(&common, None, false)?;
            commands::cmd_sweep(&cfg, &ov)?;
            eprintln!("sweep complete: outputs in {}", cfg.out_dir());
            Ok(())
        }
    }
}

fn main() {
    if let Err(err) = run() {
        eprintln!("{err}");
        std::process::exit(err.exit_code());
    }
}
