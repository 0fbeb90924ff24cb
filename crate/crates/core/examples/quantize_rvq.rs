//! Trains a four-stage residual quantizer on synthetic latents and prints the
//! distortion after each stage.

use std::error::Error;

use latent_resilience::corpus::{self, CorpusConfig};
use latent_resilience::pipeline;
use latent_resilience::toycodec::{frames_from_signal, AnalysisTransform};
use latent_resilience::vq::{bitrate_bps, refine_rvq, train_rvq, TrainConfig};

fn main() -> Result<(), Box<dyn Error>> {
    let data = corpus::generate(&CorpusConfig { seconds: 30.0, ..CorpusConfig::default() }, 0)?;
    let transform = AnalysisTransform::fit(16, &frames_from_signal(&data.samples))?;
    let latents = pipeline::latents(&transform, &data.samples);

    let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let (rvq, curves) = train_rvq(&latents, 4, &cfg)?;
    for (s, c) in curves.iter().enumerate() {
        println!("stage {} residual mse after {} epochs: {:.5}", s + 1, c.len(), c.last().unwrap_or(&f64::NAN));
    }
    let (rvq, joint) = refine_rvq(rvq, &latents, &TrainConfig { epochs: 3, ..cfg })?;
    println!("joint refinement full-rate mse: {:.5}", joint.last().unwrap_or(&f64::NAN));

    for n in 1..=rvq.num_stages() {
        let mut err = 0.0;
        for x in &latents {
            let y = rvq.decode(&rvq.encode(x, n)?)?;
            err += x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
        }
        println!("{n} stage(s), {} bps: mse {:.5}", bitrate_bps(n as u32), err / latents.len() as f64);
    }
    Ok(())
}
