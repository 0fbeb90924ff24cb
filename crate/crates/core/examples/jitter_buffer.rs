//! Replays one lossy, jittery trace through the fixed-delay jitter buffer with
//! and without redundancy.

use std::error::Error;

use latent_resilience::bitstream::{attach_redundancy, FrameIndices};
use latent_resilience::channel::{generate_trace, GilbertElliottParams};
use latent_resilience::jbm::{fec_config_warning, run_trace};

fn main() -> Result<(), Box<dyn Error>> {
    let frames: Vec<FrameIndices> = (0..3000).map(|n| FrameIndices { stages: [n as u8; 4], distilled: n as u8 }).collect();
    let params = GilbertElliottParams::ten_percent();
    let trace = generate_trace(&params, frames.len() / 2, 3)?;
    for delay in [60.0, 100.0, 160.0] {
        for k in [0u8, 2, 6] {
            let packets = attach_redundancy(&frames, k)?;
            let (_, s) = run_trace(&packets, &trace, delay)?;
            println!(
                "delay {delay:>3} ms, k={k}: received {}, fec {}, concealed {}, late drops {}",
                s.received, s.fec_recovered, s.concealed, s.late_drops
            );
            if let Some(w) = fec_config_warning(k, delay, params.base_delay_ms) {
                println!("  warning: {w}");
            }
        }
    }
    Ok(())
}
