use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use dtsim::config::LoadedConfig;
use dtsim::{formats, scenario};

/// Digital twin of a CMOS decay-time gamma-photon spectrometer.
#[derive(Parser)]
#[command(name = "dtsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario configuration file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run seed; every output is reproducible from (config, seed).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run the per-pixel sensitivity calibration (and optionally the
    /// clock-period energy calibration).
    Calibrate(RunArgs),
    /// Counts-per-second versus activity sweep.
    Linearity(RunArgs),
    /// Long-duration activity tracking against the decay curve.
    Decay(RunArgs),
    /// Full spectral chain: acquisition, histogram, table match, incident
    /// spectrum.
    Spectrum(RunArgs),
    /// Charge-injection characterization of the test sub-array.
    Characterize(RunArgs),
    /// Generate a deposited-to-incident energy lookup table.
    GenTable(RunArgs),
    /// Dump a binary event stream as text records.
    Decode {
        /// Event-stream file written by a spectrum run.
        #[arg(long)]
        input: PathBuf,
        /// Optional output directory; prints to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn expect_kind(loaded: &LoadedConfig, verb: &str, want: &str) -> Result<()> {
    let got = loaded.config.scenario.kind();
    anyhow::ensure!(
        got == want,
        "`dtsim {verb}` needs a `{want}` scenario block, config has `{got}`"
    );
    Ok(())
}

fn run_verb(args: &RunArgs, want: &str) -> Result<()> {
    let loaded = LoadedConfig::load(&args.config)?;
    expect_kind(&loaded, want, want)?;
    let report = scenario::run(&loaded, args.seed, &args.out)?;
    println!(
        "{} complete: seed {}, outputs in {}",
        report.scenario_kind,
        report.seed,
        args.out.display()
    );
    Ok(())
}

fn decode(input: &PathBuf, out: &Option<PathBuf>) -> Result<()> {
    let records = formats::load_event_stream(input)?;
    let mut text = String::from("flag,row,col,dt_counts\n");
    for r in &records {
        let flag = match r.flag {
            dtsim_core::readout::ConflictFlag::ConflictFree => "00",
            dtsim_core::readout::ConflictFlag::RowCoincident => "01",
            dtsim_core::readout::ConflictFlag::MissedColumn => "10",
        };
        text.push_str(&format!("{flag},{},{},{}\n", r.row, r.col, r.dt_counts));
    }
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join("records.csv");
            std::fs::write(&path, text)
                .with_context(|| format!("writing {}", path.display()))?;
            println!("decoded {} records to {}", records.len(), path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Calibrate(args) => run_verb(args, "calibrate"),
        Command::Linearity(args) => run_verb(args, "linearity"),
        Command::Decay(args) => run_verb(args, "decay"),
        Command::Spectrum(args) => run_verb(args, "spectrum"),
        Command::Characterize(args) => run_verb(args, "characterize"),
        Command::GenTable(args) => run_verb(args, "gen_table"),
        Command::Decode { input, out } => decode(input, out),
    }
}
