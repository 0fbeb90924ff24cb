//! Packet loss/delay traces.
//!
//! Two newline-delimited text formats are accepted, both with one packet
//! (20 ms) per line:
//!
//! * loss-only: `seq,flag` where `1` means lost and `0` arrived;
//! * delay-loss: `seq,arrival_ms` where `-1` means lost.
//!
//! [`parse_trace`] tells them apart by the second column: a file whose
//! values are all the literals `0` or `1` is loss-only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitstream::PACKET_MS;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: seq {seq} does not follow {prev}")]
    OutOfOrder { line: usize, seq: u32, prev: u32 },
    #[error("line {line}: packet {seq} arrives at {arrival_ms} ms, before its send time {send_ms} ms")]
    NegativeDelay { line: usize, seq: u32, arrival_ms: f64, send_ms: f64 },
    #[error("invalid channel parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("trace must contain at least one packet")]
    Empty,
}

pub type Result<T> = std::result::Result<T, TraceError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u32,
    /// `None` when the packet was lost in the network.
    pub arrival_ms: Option<f64>,
}

impl TraceEvent {
    pub fn send_ms(&self) -> f64 {
        self.seq as f64 * PACKET_MS
    }

    pub fn is_lost(&self) -> bool {
        self.arrival_ms.is_none()
    }

    pub fn delay_ms(&self) -> Option<f64> {
        self.arrival_ms.map(|a| a - self.send_ms())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceFormat {
    LossOnly,
    DelayLoss,
}

/// Parses either trace format, auto-detected.
pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>> {
    let loss_only = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .all(|l| matches!(l.split(',').nth(1).map(str::trim), Some("0") | Some("1")));
    parse_trace_as(text, if loss_only { TraceFormat::LossOnly } else { TraceFormat::DelayLoss })
}

pub fn parse_trace_as(text: &str, format: TraceFormat) -> Result<Vec<TraceEvent>> {
    let mut events: Vec<TraceEvent> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let l = raw.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let malformed = |reason: &str| TraceError::Malformed { line, reason: reason.to_string() };
        let mut cols = l.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(malformed("expected two comma-separated columns"));
        };
        let seq: u32 = a.parse().map_err(|_| malformed("sequence number is not an unsigned integer"))?;
        if let Some(prev) = events.last() {
            if seq <= prev.seq {
                return Err(TraceError::OutOfOrder { line, seq, prev: prev.seq });
            }
        }
        let send_ms = seq as f64 * PACKET_MS;
        let arrival_ms = match format {
            TraceFormat::LossOnly => match b {
                "0" => Some(send_ms),
                "1" => None,
                _ => return Err(malformed("loss flag must be 0 or 1")),
            },
            TraceFormat::DelayLoss => {
                let v: f64 = b.parse().map_err(|_| malformed("arrival time is not a number"))?;
                if !v.is_finite() {
                    return Err(malformed("arrival time is not finite"));
                }
                if v == -1.0 {
                    None
                } else if v < send_ms {
                    return Err(TraceError::NegativeDelay { line, seq, arrival_ms: v, send_ms });
                } else {
                    Some(v)
                }
            }
        };
        events.push(TraceEvent { seq, arrival_ms });
    }
    if events.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(events)
}

pub fn write_trace(events: &[TraceEvent], format: TraceFormat) -> String {
    let mut out = String::new();
    for e in events {
        let col = match (format, e.arrival_ms) {
            (TraceFormat::LossOnly, Some(_)) => "0".to_string(),
            (TraceFormat::LossOnly, None) => "1".to_string(),
            (TraceFormat::DelayLoss, Some(a)) => format!("{a}"),
            (TraceFormat::DelayLoss, None) => "-1".to_string(),
        };
        out.push_str(&format!("{},{}\n", e.seq, col));
    }
    out
}

/// Two-state Markov loss channel with half-normal jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GilbertElliottParams {
    pub p_good_to_bad: f64,
    pub p_bad_to_good: f64,
    pub loss_in_bad: f64,
    pub jitter_std_ms: f64,
    pub base_delay_ms: f64,
}

impl GilbertElliottParams {
    /// About 10 % loss in bursts averaging two packets.
    pub fn ten_percent() -> Self {
        Self::with_mean_burst(0.10, 2.0)
    }

    /// Bad-state episodes averaging `mean_burst_packets` with stationary loss `loss_rate`.
    pub fn with_mean_burst(loss_rate: f64, mean_burst_packets: f64) -> Self {
        let p_bg = 1.0 / mean_burst_packets;
        Self {
            p_good_to_bad: p_bg * loss_rate / (1.0 - loss_rate),
            p_bad_to_good: p_bg,
            loss_in_bad: 1.0,
            jitter_std_ms: 10.0,
            base_delay_ms: 20.0,
        }
    }

    /// Named presets matching burst lengths of 120, 320 and 1000 ms at 10 % loss.
    pub fn preset(name: &str) -> Option<Self> {
        let burst_ms = match name {
            "burst120" => 120.0,
            "burst320" => 320.0,
            "burst1000" => 1000.0,
            "ten-percent" => return Some(Self::ten_percent()),
            _ => return None,
        };
        Some(Self::with_mean_burst(0.10, burst_ms / PACKET_MS))
    }

    pub fn lossless() -> Self {
        Self { p_good_to_bad: 0.0, p_bad_to_good: 1.0, loss_in_bad: 0.0, jitter_std_ms: 0.0, base_delay_ms: 20.0 }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_good_to_bad", self.p_good_to_bad),
            ("p_bad_to_good", self.p_bad_to_good),
            ("loss_in_bad", self.loss_in_bad),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TraceError::InvalidParam { name, value: v });
            }
        }
        for (name, v) in [("jitter_std_ms", self.jitter_std_ms), ("base_delay_ms", self.base_delay_ms)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TraceError::InvalidParam { name, value: v });
            }
        }
        Ok(())
    }

    /// Long-run fraction of lost packets.
    pub fn stationary_loss(&self) -> f64 {
        let denom = self.p_good_to_bad + self.p_bad_to_good;
        if denom == 0.0 {
            return 0.0;
        }
        self.loss_in_bad * self.p_good_to_bad / denom
    }
}

/// Generates `n_packets` events, starting in the good state.
pub fn generate_trace(params: &GilbertElliottParams, n_packets: usize, seed: u64) -> Result<Vec<TraceEvent>> {
    params.validate()?;
    if n_packets == 0 {
        return Err(TraceError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, params.jitter_std_ms).map_err(|_| TraceError::InvalidParam {
        name: "jitter_std_ms",
        value: params.jitter_std_ms,
    })?;
    let mut bad = false;
    let mut out = Vec::with_capacity(n_packets);
    for seq in 0..n_packets as u32 {
        let lost = bad && rng.random::<f64>() < params.loss_in_bad;
        let delay = params.base_delay_ms + jitter.sample(&mut rng).abs();
        // 0.1 ms clock granularity.
        let arrival = ((seq as f64 * PACKET_MS + delay) * 10.0).round() / 10.0;
        out.push(TraceEvent { seq, arrival_ms: (!lost).then_some(arrival) });
        let flip = if bad { params.p_bad_to_good } else { params.p_good_to_bad };
        if rng.random::<f64>() < flip {
            bad = !bad;
        }
    }
    Ok(out)
}

pub fn loss_rate(events: &[TraceEvent]) -> f64 {
    if events.is_empty() {
        return 0.0;
    }
    events.iter().filter(|e| e.is_lost()).count() as f64 / events.len() as f64
}
