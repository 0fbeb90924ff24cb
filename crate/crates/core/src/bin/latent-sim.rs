use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use latent_resilience::pipeline::{self, Config, PipelineError};

/// Latent-domain loss concealment simulator.
#[derive(Parser, Debug)]
#[command(name = "latent-sim", version, about)]
struct Cli {
    /// TOML config; defaults are used when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root for relative output directories.
    #[arg(long, global = true, env = "LATENT_SIM_OUT_ROOT")]
    out_root: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Writes the synthetic training and evaluation corpora with frame labels.
    GenData,
    /// Fits the analysis transform and trains the residual quantizer.
    TrainVq,
    /// Distills stages 1+2 onto one codebook and builds the index class map.
    Distill,
    /// Trains the index predictor with teacher forcing.
    TrainPlc,
    /// Runs zero-fill, PLC and PLC+FEC over the configured channel.
    Simulate {
        /// Replay this trace instead of generating one.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Number of generated traces.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Prints one packet of a packed stream.
    InspectPacket {
        file: PathBuf,
        #[arg(long)]
        seq: u16,
    },
    /// Prints the effective config as TOML.
    PrintConfig,
}

fn load_config(cli: &Cli) -> Result<Config, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    if let Some(root) = &cli.out_root {
        if cfg.out_dir.is_relative() {
            cfg.out_dir = root.join(&cfg.out_dir);
        }
    }
    if let Cmd::Simulate { trace, runs } = &cli.cmd {
        if trace.is_some() {
            cfg.channel.trace_file = trace.clone();
        }
        if let Some(r) = runs {
            cfg.channel.runs = *r;
        }
        cfg.validate()?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if let Cmd::InspectPacket { file, seq } = &cli.cmd {
        print!("{}", pipeline::inspect_packet(file, *seq)?);
        return Ok(());
    }
    let cfg = load_config(&cli)?;
    match cli.cmd {
        Cmd::GenData => {
            let (train, eval) = pipeline::gen_data(&cfg)?;
            println!(
                "wrote {} training and {} evaluation frames to {}",
                train.generated.len(),
                eval.generated.len(),
                cfg.out_dir.display()
            );
        }
        Cmd::TrainVq => {
            for (label, mse) in pipeline::train_vq_files(&cfg)? {
                println!("{label}: final mse {mse:.6}");
            }
        }
        Cmd::Distill => println!("distillation mse {:.6}", pipeline::distill_files(&cfg)?),
        Cmd::TrainPlc => println!("final batch nll {:.4}", pipeline::train_plc_files(&cfg)?),
        Cmd::Simulate { .. } => {
            let s = pipeline::simulate_files(&cfg)?;
            let m = &s.mean_overall_snr_db;
            println!(
                "mean overall SNR over {} run(s): zero_fill {:.2} dB, plc {:.2} dB, plc_fec {:.2} dB",
                s.runs.len(),
                m.zero_fill,
                m.plc,
                m.plc_fec
            );
            println!("report: {}", cfg.out_dir.join(pipeline::REPORT_FILE).display());
        }
        Cmd::PrintConfig => print!("{}", cfg.to_toml()),
        Cmd::InspectPacket { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
