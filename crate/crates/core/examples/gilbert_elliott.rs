//! Generates bursty loss traces and reports loss rate and burst lengths.

use std::collections::BTreeMap;
use std::error::Error;

use latent_resilience::channel::{generate_trace, loss_rate, write_trace, GilbertElliottParams, TraceFormat};

fn main() -> Result<(), Box<dyn Error>> {
    for burst in [1.0, 2.0, 4.0] {
        let p = GilbertElliottParams::with_mean_burst(0.10, burst);
        let trace = generate_trace(&p, 50_000, 42)?;
        let mut hist = BTreeMap::new();
        let mut run = 0;
        for ev in &trace {
            if ev.is_lost() {
                run += 1;
            } else if run > 0 {
                *hist.entry(run).or_insert(0usize) += 1;
                run = 0;
            }
        }
        let bursts: usize = hist.values().sum();
        let lost: usize = hist.iter().map(|(k, v)| k * v).sum();
        println!(
            "target burst {burst}: loss {:.3}, mean burst {:.2}, lengths {:?}",
            loss_rate(&trace),
            lost as f64 / bursts.max(1) as f64,
            hist.iter().take(6).collect::<Vec<_>>()
        );
    }
    let trace = generate_trace(&GilbertElliottParams::ten_percent(), 8, 1)?;
    print!("{}", write_trace(&trace, TraceFormat::DelayLoss));
    Ok(())
}
