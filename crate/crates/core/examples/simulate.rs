//! Runs the whole file-based pipeline with a small configuration and prints the
//! mean SNR of each condition. Artifacts land in `target/example-simulate`.

use std::error::Error;

use latent_resilience::pipeline::{self, Config};

fn main() -> Result<(), Box<dyn Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cfg = Config::default();
    cfg.out_dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../target/example-simulate").into();
    cfg.corpus.seconds = 60.0;
    cfg.eval_seconds = 10.0;
    cfg.hidden = 64;
    cfg.vq.epochs = 10;
    cfg.vq.refine_epochs = 3;
    cfg.vq.distill_epochs = 10;
    cfg.plc.iterations = 4000;
    cfg.plc.lr = 1e-3;
    cfg.channel.runs = 5;

    pipeline::gen_data(&cfg)?;
    pipeline::train_vq_files(&cfg)?;
    pipeline::distill_files(&cfg)?;
    pipeline::train_plc_files(&cfg)?;
    let summary = pipeline::simulate_files(&cfg)?;
    let m = &summary.mean_overall_snr_db;
    println!("zero_fill {:.2} dB, plc {:.2} dB, plc_fec {:.2} dB", m.zero_fill, m.plc, m.plc_fec);
    println!("report: {}", cfg.out_dir.join(pipeline::REPORT_FILE).display());
    Ok(())
}
