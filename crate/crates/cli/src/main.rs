use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use windosse_cli::artifacts::Layout;
use windosse_cli::config::{ExperimentConfig, Profile};
use windosse_cli::run::TrainStatus;
use windosse_cli::{data, report, run, CliError};

#[derive(Parser)]
#[command(name = "windosse", version, about = "Synthetic observing-system experiments for learned variational wind reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and buoy network.
    Generate(Common),
    /// Train every cell of the campaign that lacks checkpoints.
    Train(Common),
    /// Write test metrics and plots for the campaign.
    Evaluate(Common),
    /// Run the campaign's bias, buoy or resolution sweep.
    Sweep(Common),
    /// Collate all campaign outputs into report.md.
    Report(Common),
    /// Print the resolved configuration and its hash.
    Config(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    /// Output root; defaults to $WINDOSSE_OUT, then `windosse-out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, Layout), CliError> {
        if let Some(n) = self.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .map_err(|e| CliError::Other(e.to_string()))?;
        }
        let mut cfg = ExperimentConfig::load(self.profile, self.config.as_deref())?;
        if let Some(s) = self.seed {
            cfg = cfg.with_seed(s);
        }
        if let Some(r) = self.runs {
            cfg = cfg.with_runs(r);
        }
        cfg.validate()?;
        let root = self
            .out
            .clone()
            .or_else(|| cfg.output.dir.clone())
            .or_else(|| std::env::var_os("WINDOSSE_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("windosse-out"));
        Ok((cfg, Layout::new(root)))
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Generate(c) => {
            let (cfg, layout) = c.resolve()?;
            let m = data::generate(&cfg, &layout)?;
            println!("dataset written to {} (config {})", layout.data().display(), m.config_hash);
            println!("samples {}", m.info["samples"]);
        }
        Command::Train(c) => {
            let (cfg, layout) = c.resolve()?;
            for (cell, status) in run::train(&cfg, &layout)? {
                let s = match status {
                    TrainStatus::Trained => "trained",
                    TrainStatus::Cached => "up to date",
                    TrainStatus::NotTrainable => "nothing to train",
                };
                println!("{cell}: {s}");
            }
        }
        Command::Evaluate(c) => {
            let (cfg, layout) = c.resolve()?;
            let rows = run::evaluate(&cfg, &layout)?;
            println!("{} metrics rows written to {}", rows.len(), layout.campaign(cfg.campaign).join("metrics.csv").display());
        }
        Command::Sweep(c) => {
            let (cfg, layout) = c.resolve()?;
            let files = run::sweep(&cfg, &layout)?;
            println!("{} files in {}", files.len(), layout.campaign(cfg.campaign).display());
        }
        Command::Report(c) => {
            let (_, layout) = c.resolve()?;
            let rep = report::report(&layout)?;
            print!("{}", rep.text);
        }
        Command::Config(c) => {
            let (cfg, _) = c.resolve()?;
            println!("# config hash {}", cfg.hash());
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("windosse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
