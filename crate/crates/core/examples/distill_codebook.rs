//! Distills the first two residual stages onto one 8-bit codebook and compares
//! it with stage 1 alone.

use std::error::Error;

use latent_resilience::corpus::{self, CorpusConfig};
use latent_resilience::pipeline::{self, Config};

fn main() -> Result<(), Box<dyn Error>> {
    let mut cfg = Config::default();
    cfg.corpus = CorpusConfig { seconds: 30.0, ..CorpusConfig::default() };
    cfg.vq.epochs = 10;
    cfg.vq.refine_epochs = 3;
    cfg.vq.distill_epochs = 10;

    let data = corpus::generate(&cfg.corpus, cfg.train_corpus_seed())?;
    let transform = pipeline::fit_transform(&cfg, &data)?;
    let latents = pipeline::latents(&transform, &data.samples);
    let (rvq, _) = pipeline::train_vq_step(&cfg, &latents)?;
    let (distilled, class_map, curve) = pipeline::distill_step(&cfg, &rvq, &latents, &data.labels())?;

    let stage1 = rvq.stage(0).distortion(&latents)?;
    let direct = distilled.codebook().distortion(&latents)?;
    println!("distillation fit to stage-1+2 targets: {:.5}", curve.last().unwrap_or(&f64::NAN));
    println!("latent mse, stage 1 only:          {stage1:.5}");
    println!("latent mse, distilled codebook:    {direct:.5}");
    let silence = distilled.silence_index();
    println!("silence index {silence} ({})", class_map.class_of(silence).as_str());
    Ok(())
}
