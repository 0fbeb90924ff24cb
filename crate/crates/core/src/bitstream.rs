//! Packet payloads: two consecutive frames of primary residual-VQ indices,
//! optionally followed by the distilled indices of two earlier frames.
//!
//! Wire layout (big-endian where it matters):
//!
//! ```text
//! byte 0      magic 0xC5
//! byte 1      k, the FEC offset in frames (0 = no redundancy)
//! bytes 2..4  seq, u16
//! bytes 4..8  frame 2·seq,   stage indices 0..3
//! bytes 8..12 frame 2·seq+1, stage indices 0..3
//! bytes 12..14 (k > 0 only) distilled indices of frames 2·seq−k and 2·seq−k+1
//! ```
//!
//! A packet is therefore 12 bytes (96 bits) without redundancy and 14 bytes
//! with it. Packets are self-delimiting, so a stream file is simply their
//! concatenation.

use std::fmt::Write as _;

use thiserror::Error;

use crate::vq::{BITS_PER_INDEX, MAX_STAGES};

pub const MAGIC: u8 = 0xC5;
pub const FRAMES_PER_PACKET: usize = 2;
pub const PACKET_MS: f64 = 20.0;
pub const HEADER_BYTES: usize = 4;
pub const PRIMARY_BYTES: usize = FRAMES_PER_PACKET * MAX_STAGES;
pub const REDUNDANT_BYTES: usize = FRAMES_PER_PACKET;
pub const PLAIN_LEN: usize = HEADER_BYTES + PRIMARY_BYTES;
pub const FEC_LEN: usize = PLAIN_LEN + REDUNDANT_BYTES;
/// The offset used unless configured otherwise.
pub const DEFAULT_FEC_OFFSET: u8 = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PacketError {
    #[error("bad magic byte 0x{found:02x} at offset {offset}")]
    BadMagic { offset: usize, found: u8 },
    #[error("truncated packet at offset {offset}: need {needed} bytes, have {available}")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("packet at offset {offset}: {len} bytes but k = {k}")]
    InconsistentOffset { offset: usize, k: u8, len: usize },
    #[error("FEC offset {0} is odd; it must be a whole number of packets")]
    OddOffset(u8),
    #[error("packet {seq} cannot carry redundancy for frames before the stream start (k = {k})")]
    RedundancyBeforeStream { seq: u16, k: u8 },
    #[error("k = {k} but redundancy {present}")]
    RedundancyFlag { k: u8, present: &'static str },
    #[error("stream has {0} frames; packets carry exactly two")]
    OddFrameCount(usize),
    #[error("stream of {0} packets exceeds the 16-bit sequence space")]
    TooManyPackets(usize),
    #[error("dump line {line}: {reason}")]
    Dump { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, PacketError>;

/// Everything the sender knows about one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameIndices {
    pub stages: [u8; MAX_STAGES],
    pub distilled: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Packet {
    pub seq: u16,
    /// Zero exactly when `redundant` is `None`.
    pub fec_offset: u8,
    pub primary: [[u8; MAX_STAGES]; FRAMES_PER_PACKET],
    pub redundant: Option<[u8; FRAMES_PER_PACKET]>,
}

impl Packet {
    pub fn first_frame(&self) -> usize {
        FRAMES_PER_PACKET * self.seq as usize
    }

    /// Frame index of the first redundant entry, if any.
    pub fn redundant_first_frame(&self) -> Option<usize> {
        self.redundant.map(|_| self.first_frame() - self.fec_offset as usize)
    }

    /// The distilled index this packet carries for `frame`, if any.
    pub fn redundancy_for(&self, frame: usize) -> Option<u8> {
        let first = self.redundant_first_frame()?;
        let r = self.redundant?;
        (frame >= first && frame < first + FRAMES_PER_PACKET).then(|| r[frame - first])
    }

    pub fn primary_for(&self, frame: usize) -> Option<[u8; MAX_STAGES]> {
        let first = self.first_frame();
        (frame >= first && frame < first + FRAMES_PER_PACKET).then(|| self.primary[frame - first])
    }

    pub fn has_redundancy(&self) -> bool {
        self.redundant.is_some()
    }

    pub fn wire_len(&self) -> usize {
        if self.has_redundancy() {
            FEC_LEN
        } else {
            PLAIN_LEN
        }
    }

    fn validate(&self) -> Result<()> {
        match (self.fec_offset, self.redundant) {
            (0, Some(_)) => return Err(PacketError::RedundancyFlag { k: 0, present: "present" }),
            (k, None) if k != 0 => return Err(PacketError::RedundancyFlag { k, present: "absent" }),
            _ => {}
        }
        if self.fec_offset % 2 == 1 {
            return Err(PacketError::OddOffset(self.fec_offset));
        }
        if self.fec_offset as usize > self.first_frame() {
            return Err(PacketError::RedundancyBeforeStream { seq: self.seq, k: self.fec_offset });
        }
        Ok(())
    }
}

pub fn pack_packet(p: &Packet) -> Result<Vec<u8>> {
    p.validate()?;
    let mut out = Vec::with_capacity(p.wire_len());
    out.push(MAGIC);
    out.push(p.fec_offset);
    out.extend_from_slice(&p.seq.to_be_bytes());
    for frame in &p.primary {
        out.extend_from_slice(frame);
    }
    if let Some(r) = p.redundant {
        out.extend_from_slice(&r);
    }
    Ok(out)
}

/// Parses one packet starting at `bytes[0]`; `base` is only used in error offsets.
/// Returns the packet and the number of bytes consumed.
fn parse_at(bytes: &[u8], base: usize) -> Result<(Packet, usize)> {
    if bytes.len() < HEADER_BYTES {
        return Err(PacketError::Truncated { offset: base, needed: PLAIN_LEN, available: bytes.len() });
    }
    if bytes[0] != MAGIC {
        return Err(PacketError::BadMagic { offset: base, found: bytes[0] });
    }
    let k = bytes[1];
    let seq = u16::from_be_bytes([bytes[2], bytes[3]]);
    let len = if k == 0 { PLAIN_LEN } else { FEC_LEN };
    if bytes.len() < len {
        return Err(PacketError::Truncated { offset: base, needed: len, available: bytes.len() });
    }
    let mut primary = [[0u8; MAX_STAGES]; FRAMES_PER_PACKET];
    for (f, frame) in primary.iter_mut().enumerate() {
        let start = HEADER_BYTES + f * MAX_STAGES;
        frame.copy_from_slice(&bytes[start..start + MAX_STAGES]);
    }
    let redundant = (k != 0).then(|| [bytes[PLAIN_LEN], bytes[PLAIN_LEN + 1]]);
    let p = Packet { seq, fec_offset: k, primary, redundant };
    p.validate().map_err(|e| match e {
        PacketError::RedundancyBeforeStream { .. } | PacketError::OddOffset(_) => {
            PacketError::InconsistentOffset { offset: base + 1, k, len }
        }
        other => other,
    })?;
    Ok((p, len))
}

pub fn unpack_packet(bytes: &[u8]) -> Result<Packet> {
    let (p, used) = parse_at(bytes, 0)?;
    if used != bytes.len() {
        return match bytes.len() {
            PLAIN_LEN | FEC_LEN => Err(PacketError::InconsistentOffset { offset: 1, k: p.fec_offset, len: bytes.len() }),
            n if n < FEC_LEN => Err(PacketError::Truncated { offset: 0, needed: FEC_LEN, available: n }),
            n => Err(PacketError::InconsistentOffset { offset: 1, k: p.fec_offset, len: n }),
        };
    }
    Ok(p)
}

/// Concatenated packets, e.g. the contents of a stream file.
pub fn pack_stream(packets: &[Packet]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for p in packets {
        out.extend(pack_packet(p)?);
    }
    Ok(out)
}

pub fn unpack_stream(bytes: &[u8]) -> Result<Vec<Packet>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (p, used) = parse_at(&bytes[pos..], pos)?;
        out.push(p);
        pos += used;
    }
    Ok(out)
}

/// Packetizes a frame stream two frames at a time; packet `m` carries the
/// distilled indices of frames `2m−k` and `2m−k+1` when those exist.
pub fn attach_redundancy(stream: &[FrameIndices], k: u8) -> Result<Vec<Packet>> {
    if k % 2 == 1 {
        return Err(PacketError::OddOffset(k));
    }
    if !stream.len().is_multiple_of(FRAMES_PER_PACKET) {
        return Err(PacketError::OddFrameCount(stream.len()));
    }
    let n_packets = stream.len() / FRAMES_PER_PACKET;
    if n_packets > u16::MAX as usize + 1 {
        return Err(PacketError::TooManyPackets(n_packets));
    }
    let packets = (0..n_packets)
        .map(|m| {
            let first = FRAMES_PER_PACKET * m;
            let primary = [stream[first].stages, stream[first + 1].stages];
            let redundant = (k > 0 && first >= k as usize)
                .then(|| [stream[first - k as usize].distilled, stream[first - k as usize + 1].distilled]);
            Packet {
                seq: m as u16,
                fec_offset: if redundant.is_some() { k } else { 0 },
                primary,
                redundant,
            }
        })
        .collect();
    Ok(packets)
}

/// Payload bits per second for the primary indices and for the redundancy.
pub fn payload_bitrates(packets: &[Packet]) -> (f64, f64) {
    if packets.is_empty() {
        return (0.0, 0.0);
    }
    let seconds = packets.len() as f64 * PACKET_MS / 1000.0;
    let idx_bits = BITS_PER_INDEX as f64;
    let primary = packets.len() as f64 * PRIMARY_BYTES as f64 * idx_bits;
    let redundant = packets.iter().filter(|p| p.has_redundancy()).count() as f64 * REDUNDANT_BYTES as f64 * idx_bits;
    (primary / seconds, redundant / seconds)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// One-line dump: `seq,k,primary_hex,redundant_hex` with `-` for no redundancy.
pub fn dump_line(p: &Packet) -> String {
    let primary: Vec<u8> = p.primary.iter().flatten().copied().collect();
    let red = p.redundant.map(|r| hex(&r)).unwrap_or_else(|| "-".to_string());
    format!("{},{},{},{}", p.seq, p.fec_offset, hex(&primary), red)
}

fn parse_hex(s: &str, n: usize, line: usize) -> Result<Vec<u8>> {
    let bad = |reason: String| PacketError::Dump { line, reason };
    if s.len() != 2 * n {
        return Err(bad(format!("expected {} hex digits, found {}", 2 * n, s.len())));
    }
    (0..n)
        .map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16).map_err(|e| bad(e.to_string())))
        .collect()
}

pub fn parse_dump_line(text: &str, line: usize) -> Result<Packet> {
    let bad = |reason: &str| PacketError::Dump { line, reason: reason.to_string() };
    let fields: Vec<&str> = text.trim().split(',').collect();
    if fields.len() != 4 {
        return Err(bad("expected 4 comma-separated fields"));
    }
    let seq: u16 = fields[0].parse().map_err(|_| bad("bad seq"))?;
    let k: u8 = fields[1].parse().map_err(|_| bad("bad k"))?;
    let prim = parse_hex(fields[2], PRIMARY_BYTES, line)?;
    let mut primary = [[0u8; MAX_STAGES]; FRAMES_PER_PACKET];
    for (f, frame) in primary.iter_mut().enumerate() {
        frame.copy_from_slice(&prim[f * MAX_STAGES..(f + 1) * MAX_STAGES]);
    }
    let redundant = match fields[3] {
        "-" => None,
        h => {
            let r = parse_hex(h, REDUNDANT_BYTES, line)?;
            Some([r[0], r[1]])
        }
    };
    let p = Packet { seq, fec_offset: k, primary, redundant };
    p.validate().map_err(|e| PacketError::Dump { line, reason: e.to_string() })?;
    Ok(p)
}

/// Multi-line human-readable description used by the packet inspector.
pub fn describe(p: &Packet) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seq        {} (frames {}..={})", p.seq, p.first_frame(), p.first_frame() + 1);
    let _ = writeln!(s, "magic      0x{MAGIC:02x}");
    let _ = writeln!(s, "length     {} bytes", p.wire_len());
    for (f, idx) in p.primary.iter().enumerate() {
        let _ = writeln!(s, "frame {:<5} stages {}", p.first_frame() + f, hex(idx));
    }
    match (p.redundant, p.redundant_first_frame()) {
        (Some(r), Some(first)) => {
            let _ = writeln!(s, "k          {}", p.fec_offset);
            for (f, idx) in r.iter().enumerate() {
                let _ = writeln!(s, "redundant  frame {} distilled {:02x}", first + f, idx);
            }
        }
        _ => {
            let _ = writeln!(s, "k          0 (no redundancy)");
        }
    }
    s
}
