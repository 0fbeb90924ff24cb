use latent_resilience::bitstream::{attach_redundancy, FrameIndices};
use latent_resilience::channel::{generate_trace, GilbertElliottParams, TraceEvent};
use latent_resilience::jbm::{run_trace, OutcomeKind, Payload};
use proptest::prelude::*;

fn stream(n: usize) -> Vec<FrameIndices> {
    (0..n).map(|i| FrameIndices { stages: [i as u8, 1, 2, 3], distilled: (i * 7) as u8 }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_frame_has_one_consistent_outcome(
        seed in any::<u64>(),
        loss in 0.0f64..0.5,
        burst in 1.0f64..5.0,
        jitter in 0.0f64..80.0,
        delay in 20.0f64..250.0,
        half_k in 0u8..6,
    ) {
        let frames = stream(400);
        let packets = attach_redundancy(&frames, 2 * half_k).unwrap();
        let mut p = GilbertElliottParams::with_mean_burst(loss, burst);
        p.jitter_std_ms = jitter;
        let trace = generate_trace(&p, packets.len(), seed).unwrap();
        let (out, stats) = run_trace(&packets, &trace, delay).unwrap();
        prop_assert_eq!(out.len(), frames.len());
        prop_assert_eq!(stats.frames(), frames.len());
        for (n, o) in out.iter().enumerate() {
            prop_assert_eq!(o.frame, n);
            match (o.kind, o.payload) {
                (OutcomeKind::Received, Payload::Primary(s)) => prop_assert_eq!(s, frames[n].stages),
                (OutcomeKind::FecRecovered, Payload::Redundant(d)) => prop_assert_eq!(d, frames[n].distilled),
                (OutcomeKind::Concealed, Payload::Missing) => {}
                other => prop_assert!(false, "inconsistent outcome {:?}", other),
            }
        }
        if half_k == 0 {
            prop_assert_eq!(stats.fec_recovered, 0);
        }
    }
}

#[test]
fn lossless_channel_receives_everything() {
    let frames = stream(200);
    let packets = attach_redundancy(&frames, 6).unwrap();
    let trace = generate_trace(&GilbertElliottParams::lossless(), packets.len(), 0).unwrap();
    let (out, stats) = run_trace(&packets, &trace, 100.0).unwrap();
    assert_eq!(stats.received, 200);
    assert!(out.iter().all(|o| o.kind == OutcomeKind::Received));
}

#[test]
fn late_packet_is_dropped_and_concealed() {
    let frames = stream(20);
    let packets = attach_redundancy(&frames, 0).unwrap();
    // Packet 3 (frames 6 and 7) arrives after frame 7 has played out.
    let trace: Vec<TraceEvent> = (0..10u32)
        .map(|seq| TraceEvent { seq, arrival_ms: Some(seq as f64 * 20.0 + if seq == 3 { 500.0 } else { 30.0 }) })
        .collect();
    let (out, stats) = run_trace(&packets, &trace, 100.0).unwrap();
    assert_eq!(stats.late_drops, 1);
    assert_eq!(out[6].kind, OutcomeKind::Concealed);
    assert_eq!(out[7].kind, OutcomeKind::Concealed);
    assert_eq!(stats.received, 18);
}
