use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pcm_snn::experiment::{
    cmd_drift_eval, cmd_gen_data, cmd_jitter_eval, cmd_sweep_devices, cmd_train, Backend,
    ExperimentConfig, SNAPSHOT_FILE,
};

#[derive(Parser)]
#[command(
    name = "pcm-snn",
    version,
    about = "Spiking network training with simulated PCM synapses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate input and target rasters plus a checksum manifest.
    GenData(Common),
    /// Train on the chosen backend; writes the log, weights and PCM snapshot.
    Train(Common),
    /// Train the PCM backend once per configured device count.
    SweepDevices(Common),
    /// Evaluate a trained snapshot at increasing times after training.
    DriftEval {
        #[command(flatten)]
        common: Common,
        /// Snapshot to evaluate (defaults to the one `train` wrote into --out).
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Compare training on original and jittered inputs.
    JitterEval(Common),
    /// Print the effective configuration as TOML.
    ShowConfig(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Derive every seed from this value.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Skip SVG figures.
    #[arg(long)]
    no_plots: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Pcm,
    Fp64,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(b) = self.backend {
            cfg.backend = match b {
                BackendArg::Pcm => Backend::Pcm,
                BackendArg::Fp64 => Backend::Fp64,
            };
        }
        if let Some(seed) = self.seed_override {
            cfg.apply_seed_override(seed);
        }
        if self.no_plots {
            cfg.output.plots = false;
        }
        let out = match &self.out {
            Some(dir) => dir.clone(),
            None => cfg.base_dir.join(&cfg.output.dir),
        };
        cfg.validate()?;
        Ok((cfg, out))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let (cfg, out) = c.resolve()?;
            let manifest = cmd_gen_data(&cfg, &out)?;
            for f in &manifest.files {
                println!(
                    "{}: {} channels, {} spikes, sha256 {}",
                    f.name, f.channels, f.spikes, f.sha256
                );
            }
        }
        Command::Train(c) => {
            let (cfg, out) = c.resolve()?;
            let report = cmd_train(&cfg, &out)?;
            let last = report.log.last();
            println!(
                "{} epochs on {}: accuracy {:.2}% / {:.2}% / {:.2}% at 5 / 10 / 25 ms",
                last.epoch,
                report.backend.name(),
                last.acc_pct(0),
                last.acc_pct(1),
                last.acc_pct(2)
            );
            if let Some(s) = report.snapshot {
                println!("snapshot: {}", s.display());
            }
        }
        Command::SweepDevices(c) => {
            let (cfg, out) = c.resolve()?;
            print!("{}", cmd_sweep_devices(&cfg, &out)?.table);
        }
        Command::DriftEval { common, snapshot } => {
            let (cfg, out) = common.resolve()?;
            let snapshot = snapshot.unwrap_or_else(|| out.join(SNAPSHOT_FILE));
            if !Path::new(&snapshot).exists() {
                anyhow::bail!(
                    "no snapshot at {}; run `train --backend pcm` first",
                    snapshot.display()
                );
            }
            print!("{}", cmd_drift_eval(&cfg, &out, &snapshot)?.table);
        }
        Command::JitterEval(c) => {
            let (cfg, out) = c.resolve()?;
            print!("{}", cmd_jitter_eval(&cfg, &out)?.table);
        }
        Command::ShowConfig(c) => {
            let (cfg, _) = c.resolve()?;
            print!("{}", cfg.to_toml().context("serializing config")?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
