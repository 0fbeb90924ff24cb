//! Packs two frames per packet with an in-band redundant index from k frames
//! earlier, then shows the wire layout and payload bitrates.

use std::error::Error;

use latent_resilience::bitstream::{attach_redundancy, describe, pack_stream, payload_bitrates, unpack_stream, FrameIndices};

fn main() -> Result<(), Box<dyn Error>> {
    let frames: Vec<FrameIndices> = (0..100u8)
        .map(|n| FrameIndices { stages: [n, n.wrapping_mul(3), n.wrapping_mul(7), n ^ 0x55], distilled: n.wrapping_add(128) })
        .collect();
    for k in [0u8, 6] {
        let packets = attach_redundancy(&frames, k)?;
        let bytes = pack_stream(&packets)?;
        assert_eq!(unpack_stream(&bytes)?, packets);
        let (primary, redundancy) = payload_bitrates(&packets);
        println!("k={k}: {} packets, {} bytes, primary {primary:.0} bps, redundancy {redundancy:.1} bps", packets.len(), bytes.len());
        for p in &packets[2..5] {
            println!("  {}", describe(p).lines().next().unwrap_or_default());
        }
    }
    Ok(())
}
