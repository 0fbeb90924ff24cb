//! Conceals a long loss burst: predicted indices up to the class limit, then
//! the silence vector.

use std::error::Error;

use latent_resilience::bitstream::{attach_redundancy, FrameIndices};
use latent_resilience::channel::TraceEvent;
use latent_resilience::conceal::{Concealer, IndexClassMap};
use latent_resilience::jbm::run_trace;
use latent_resilience::plcnet::PlcModel;
use latent_resilience::vq::{Codebook, DistilledCodebook, FrameClass, ResidualVq, CODEBOOK_SIZE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn Error>> {
    let dim = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut random_cb = |scale: f64| Codebook::from_rows(dim, (0..dim * CODEBOOK_SIZE).map(|_| rng.random_range(-scale..scale)).collect());
    let rvq = ResidualVq::new(vec![random_cb(1.0)?, random_cb(0.3)?, random_cb(0.1)?, random_cb(0.03)?])?;
    let distilled = DistilledCodebook::new(random_cb(1.0)?);
    let model = PlcModel::new(dim, 16, 0)?;

    let frames: Vec<FrameIndices> = (0..40).map(|n| FrameIndices { stages: [n as u8, 0, 0, 0], distilled: 0 }).collect();
    let packets = attach_redundancy(&frames, 0)?;
    // Packets 4..12 are lost: frames 8..24.
    let trace: Vec<TraceEvent> = (0..packets.len() as u32)
        .map(|seq| TraceEvent { seq, arrival_ms: (!(4..12).contains(&seq)).then_some(seq as f64 * 20.0 + 30.0) })
        .collect();
    let (outcomes, _) = run_trace(&packets, &trace, 100.0)?;

    for class in [FrameClass::Voiced, FrameClass::Unvoiced] {
        let map = IndexClassMap::uniform(class);
        let mut c = Concealer::new(&model, &rvq, &distilled, &map)?;
        let actions: Vec<String> = outcomes[6..26].iter().map(|o| c.process(o).map(|(a, _)| a.to_string())).collect::<Result<_, _>>()?;
        println!("{} context, frames 6..26:\n  {}", class.as_str(), actions.join(" "));
    }
    Ok(())
}
