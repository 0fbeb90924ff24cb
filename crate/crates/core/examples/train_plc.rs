//! Trains the index predictor with teacher forcing on a synthetic first-order
//! Markov source and compares its loss with the source entropy.

use std::error::Error;

use latent_resilience::plcnet::{mean_nll, train_teacher_forcing, PlcModel, TrainPlcConfig};
use latent_resilience::vq::{Codebook, CODEBOOK_SIZE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // 16 states, each with two equally likely successors: entropy ln 2.
    let succ: Vec<[u8; 2]> = (0..16u8).map(|s| [(s + 1) % 16, (s + 5) % 16]).collect();
    let mut sequences = Vec::new();
    for _ in 0..60 {
        let mut s = rng.random_range(0..16u8);
        sequences.push((0..200).map(|_| { s = succ[s as usize][rng.random_range(0..2)]; s }).collect::<Vec<_>>());
    }
    let (train, test) = sequences.split_at(50);

    let dim = 16;
    let codebook = Codebook::from_rows(dim, (0..dim * CODEBOOK_SIZE).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let mut model = PlcModel::new(dim, 32, 7)?;
    let cfg = TrainPlcConfig { iterations: 1500, batch_size: 64, lr: 1e-3, seed: 7 };
    let losses = train_teacher_forcing(&mut model, train, &codebook, &cfg)?;
    for (i, l) in losses.iter().enumerate().step_by(300) {
        println!("iteration {i:>5}: batch nll {l:.4}");
    }
    let (nll, top1) = mean_nll(&model, test, &codebook)?;
    println!("held-out nll {nll:.4} (entropy {:.4}), top-1 {top1:.3}", std::f64::consts::LN_2);
    let c = model.complexity();
    println!("{} parameters, {:.2} MFLOPS at 100 frames/s", c.param_count, c.mflops);
    Ok(())
}
