//! Fixed-delay jitter buffer with in-band FEC lookup.
//!
//! Frame `n` plays out at `10·n + playout_delay_ms`. A packet counts for a
//! frame only if it arrived at or before that instant. When the packet with
//! the frame's primary indices is missing, any buffered packet carrying the
//! frame's redundant distilled index is used instead; otherwise the frame is
//! handed to concealment.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::bitstream::{Packet, FRAMES_PER_PACKET};
use crate::channel::TraceEvent;
use crate::toycodec::FRAME_MS;
use crate::vq::MAX_STAGES;

pub const DEFAULT_PLAYOUT_DELAY_MS: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum JbmError {
    #[error("frames must be pulled in order: expected {expected}, got {requested}")]
    OutOfOrder { expected: usize, requested: usize },
    #[error("trace covers packets up to {last}, stream needs {needed}")]
    TraceTooShort { last: i64, needed: usize },
    #[error("playout delay must be finite and non-negative, got {0}")]
    BadDelay(f64),
}

pub type Result<T> = std::result::Result<T, JbmError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Received,
    FecRecovered,
    Concealed,
    ZeroFilled,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutcomeKind::Received => "received",
            OutcomeKind::FecRecovered => "fec_recovered",
            OutcomeKind::Concealed => "concealed",
            OutcomeKind::ZeroFilled => "zero_filled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Payload {
    Primary([u8; MAX_STAGES]),
    Redundant(u8),
    Missing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameOutcome {
    pub frame: usize,
    pub kind: OutcomeKind,
    pub payload: Payload,
    /// Packet that supplied the payload.
    pub source_seq: Option<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BufferStats {
    pub received: usize,
    pub fec_recovered: usize,
    pub concealed: usize,
    pub late_drops: usize,
}

impl BufferStats {
    pub fn frames(&self) -> usize {
        self.received + self.fec_recovered + self.concealed
    }
}

#[derive(Debug, Clone)]
pub struct JitterBuffer {
    playout_delay_ms: f64,
    buffer: BTreeMap<u16, (Packet, f64)>,
    next_frame: usize,
    stats: BufferStats,
}

impl JitterBuffer {
    pub fn new(playout_delay_ms: f64) -> Result<Self> {
        if !(playout_delay_ms.is_finite() && playout_delay_ms >= 0.0) {
            return Err(JbmError::BadDelay(playout_delay_ms));
        }
        Ok(Self { playout_delay_ms, buffer: BTreeMap::new(), next_frame: 0, stats: BufferStats::default() })
    }

    pub fn playout_delay_ms(&self) -> f64 {
        self.playout_delay_ms
    }

    pub fn playout_ms(&self, frame: usize) -> f64 {
        frame as f64 * FRAME_MS + self.playout_delay_ms
    }

    /// Current playout clock: the playout instant of the next frame to pull.
    pub fn clock_ms(&self) -> f64 {
        self.playout_ms(self.next_frame)
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Admits a packet. Packets whose frames can no longer be played are counted and dropped.
    pub fn push_packet(&mut self, packet: Packet, arrival_ms: f64) {
        let last = packet.first_frame() + FRAMES_PER_PACKET - 1;
        if last < self.next_frame || arrival_ms > self.playout_ms(last) {
            self.stats.late_drops += 1;
            return;
        }
        self.buffer.insert(packet.seq, (packet, arrival_ms));
    }

    pub fn pull_frame(&mut self, frame: usize) -> Result<FrameOutcome> {
        if frame != self.next_frame {
            return Err(JbmError::OutOfOrder { expected: self.next_frame, requested: frame });
        }
        let deadline = self.playout_ms(frame);
        let seq = (frame / FRAMES_PER_PACKET) as u16;
        let primary = self
            .buffer
            .get(&seq)
            .filter(|(_, arrival)| *arrival <= deadline)
            .and_then(|(p, _)| p.primary_for(frame));

        let outcome = if let Some(idx) = primary {
            self.stats.received += 1;
            FrameOutcome { frame, kind: OutcomeKind::Received, payload: Payload::Primary(idx), source_seq: Some(seq) }
        } else if let Some((src, d)) = self
            .buffer
            .values()
            .filter(|(_, arrival)| *arrival <= deadline)
            .find_map(|(p, _)| p.redundancy_for(frame).map(|d| (p.seq, d)))
        {
            self.stats.fec_recovered += 1;
            FrameOutcome { frame, kind: OutcomeKind::FecRecovered, payload: Payload::Redundant(d), source_seq: Some(src) }
        } else {
            self.stats.concealed += 1;
            FrameOutcome { frame, kind: OutcomeKind::Concealed, payload: Payload::Missing, source_seq: None }
        };

        self.next_frame = frame + 1;
        let next = self.next_frame;
        self.buffer.retain(|_, (p, _)| p.first_frame() + FRAMES_PER_PACKET > next);
        Ok(outcome)
    }

    pub fn buffer_stats(&self) -> BufferStats {
        self.stats
    }
}

/// Warns when redundancy sent `k` frames later cannot arrive before playout.
pub fn fec_config_warning(k: u8, playout_delay_ms: f64, network_delay_ms: f64) -> Option<String> {
    let needed = k as f64 * FRAME_MS + network_delay_ms;
    (k > 0 && playout_delay_ms < needed).then(|| {
        format!(
            "playout delay {playout_delay_ms} ms is below {needed} ms (FEC offset {k} frames plus {network_delay_ms} ms network delay); redundancy will mostly arrive too late"
        )
    })
}

/// Replays `packets` through a fresh buffer under `trace` and pulls every frame.
///
/// Packets are admitted in arrival order (ties by sequence number) just before
/// the first frame whose playout instant is at or after their arrival.
pub fn run_trace(
    packets: &[Packet],
    trace: &[TraceEvent],
    playout_delay_ms: f64,
) -> Result<(Vec<FrameOutcome>, BufferStats)> {
    if let Some(p) = packets.last() {
        let last = trace.last().map_or(-1, |e| e.seq as i64);
        if last < p.seq as i64 {
            return Err(JbmError::TraceTooShort { last, needed: p.seq as usize });
        }
    }
    let by_seq: BTreeMap<u32, f64> = trace
        .iter()
        .filter_map(|e| e.arrival_ms.map(|a| (e.seq, a)))
        .collect();
    let mut arrivals: Vec<(f64, Packet)> = packets
        .iter()
        .filter_map(|p| by_seq.get(&(p.seq as u32)).map(|&a| (a, *p)))
        .collect();
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.seq.cmp(&b.1.seq)));

    let mut jb = JitterBuffer::new(playout_delay_ms)?;
    let n_frames = packets.len() * FRAMES_PER_PACKET;
    let mut outcomes = Vec::with_capacity(n_frames);
    let mut pending = arrivals.into_iter().peekable();
    for frame in 0..n_frames {
        let deadline = jb.playout_ms(frame);
        while let Some((a, p)) = pending.next_if(|(a, _)| *a <= deadline) {
            jb.push_packet(p, a);
        }
        outcomes.push(jb.pull_frame(frame)?);
    }
    for (a, p) in pending {
        jb.push_packet(p, a);
    }
    Ok((outcomes, jb.buffer_stats()))
}

/// CSV with header `frame_n,kind,source_seq`; missing sources are empty.
pub fn outcome_csv(outcomes: &[FrameOutcome]) -> String {
    let mut s = String::from("frame_n,kind,source_seq\n");
    for o in outcomes {
        let src = o.source_seq.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{}\n", o.frame, o.kind, src));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::{attach_redundancy, FrameIndices};

    fn stream(n_frames: usize, k: u8) -> (Vec<FrameIndices>, Vec<Packet>) {
        let frames: Vec<FrameIndices> = (0..n_frames)
            .map(|i| FrameIndices { stages: [i as u8, 1, 2, 3], distilled: (255 - i) as u8 })
            .collect();
        let packets = attach_redundancy(&frames, k).unwrap();
        (frames, packets)
    }

    fn trace(n: usize, delay: f64, lost: &[u32]) -> Vec<TraceEvent> {
        (0..n as u32)
            .map(|seq| TraceEvent { seq, arrival_ms: (!lost.contains(&seq)).then_some(seq as f64 * 20.0 + delay) })
            .collect()
    }

    #[test]
    fn lossless_trace_is_all_received() {
        let (_, packets) = stream(40, 6);
        let (out, stats) = run_trace(&packets, &trace(20, 30.0, &[]), 100.0).unwrap();
        assert!(out.iter().all(|o| o.kind == OutcomeKind::Received));
        assert_eq!(stats, BufferStats { received: 40, ..Default::default() });
    }

    #[test]
    fn single_loss_recovered_by_redundancy() {
        let (frames, packets) = stream(40, 6);
        // Packet 5 lost; packet 8 carries frames 10 and 11 and arrives 40 ms after sending.
        let (out, stats) = run_trace(&packets, &trace(20, 40.0, &[5]), 100.0).unwrap();
        for n in [10, 11] {
            assert_eq!(out[n].kind, OutcomeKind::FecRecovered);
            assert_eq!(out[n].payload, Payload::Redundant(frames[n].distilled));
            assert_eq!(out[n].source_seq, Some(8));
        }
        assert_eq!(stats.fec_recovered, 2);
        assert_eq!(stats.concealed, 0);
    }

    #[test]
    fn redundancy_just_too_late() {
        let (_, packets) = stream(40, 6);
        let (out, _) = run_trace(&packets, &trace(20, 40.1, &[5]), 100.0).unwrap();
        assert_eq!(out[10].kind, OutcomeKind::Concealed);
        // Frame 11 plays 10 ms later, so the same packet is now in time.
        assert_eq!(out[11].kind, OutcomeKind::FecRecovered);
    }

    #[test]
    fn long_burst_recovers_only_where_redundancy_survives() {
        let (_, packets) = stream(40, 6);
        // Packets 4..=8 lost. Redundancy for packets 4 and 5 rides on 7 and 8 (lost too);
        // packets 6, 7 and 8 are covered by 9, 10 and 11, which survive.
        let (out, _) = run_trace(&packets, &trace(20, 20.0, &[4, 5, 6, 7, 8]), 100.0).unwrap();
        let kinds: Vec<OutcomeKind> = (8..18).map(|n| out[n].kind).collect();
        use OutcomeKind::*;
        assert_eq!(kinds, vec![Concealed, Concealed, Concealed, Concealed, FecRecovered, FecRecovered, FecRecovered, FecRecovered, FecRecovered, FecRecovered]);
    }

    #[test]
    fn late_packets_are_dropped_and_counted() {
        let (_, packets) = stream(8, 0);
        let mut jb = JitterBuffer::new(100.0).unwrap();
        for f in 0..4 {
            jb.pull_frame(f).unwrap();
        }
        jb.push_packet(packets[1], 50.0);
        assert!(jb.is_empty());
        assert_eq!(jb.buffer_stats().late_drops, 1);
        jb.push_packet(packets[3], 500.0);
        assert_eq!(jb.buffer_stats().late_drops, 2);
        jb.push_packet(packets[2], 90.0);
        jb.push_packet(packets[2], 95.0);
        assert_eq!(jb.len(), 1);
        assert!(matches!(jb.pull_frame(7), Err(JbmError::OutOfOrder { expected: 4, requested: 7 })));
    }

    #[test]
    fn buffer_never_holds_played_packets() {
        let (_, packets) = stream(20, 4);
        let mut jb = JitterBuffer::new(200.0).unwrap();
        for p in &packets {
            jb.push_packet(*p, 0.0);
        }
        for f in 0..20 {
            jb.pull_frame(f).unwrap();
            assert!(jb.buffer.values().all(|(p, _)| p.first_frame() + 1 >= jb.next_frame));
        }
        assert!(jb.is_empty());
    }

    #[test]
    fn arrival_permutation_does_not_matter() {
        let (_, packets) = stream(20, 6);
        let mut jb_a = JitterBuffer::new(100.0).unwrap();
        let mut jb_b = JitterBuffer::new(100.0).unwrap();
        for p in &packets {
            jb_a.push_packet(*p, p.seq as f64 * 20.0 + 5.0);
        }
        for p in packets.iter().rev() {
            jb_b.push_packet(*p, p.seq as f64 * 20.0 + 5.0);
        }
        for f in 0..20 {
            assert_eq!(jb_a.pull_frame(f).unwrap(), jb_b.pull_frame(f).unwrap());
        }
    }

    #[test]
    fn fec_warning() {
        assert!(fec_config_warning(6, 100.0, 40.0).is_none());
        assert!(fec_config_warning(6, 80.0, 40.0).is_some());
        assert!(fec_config_warning(0, 0.0, 40.0).is_none());
    }

    #[test]
    fn short_trace_is_rejected() {
        let (_, packets) = stream(20, 0);
        assert!(matches!(run_trace(&packets, &trace(5, 10.0, &[]), 100.0), Err(JbmError::TraceTooShort { .. })));
    }

    #[test]
    fn csv_log() {
        let (_, packets) = stream(4, 0);
        let (out, _) = run_trace(&packets, &trace(2, 10.0, &[1]), 100.0).unwrap();
        assert_eq!(outcome_csv(&out), "frame_n,kind,source_seq\n0,received,0\n1,received,0\n2,concealed,\n3,concealed,\n");
    }
}
