//! Concealment controller.
//!
//! Keeps the seven most recent distilled code-vectors as model input. Received
//! frames are re-quantized onto the distilled codebook, FEC-recovered frames
//! use their redundant distilled index directly, and lost frames are predicted
//! by the PLC model, which then sees its own prediction in the history on the
//! next lost frame. Prediction stops after 100 ms when the last received frame
//! was voiced and after 60 ms otherwise; the rest of the burst is silence.

use std::fmt;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::bitstream::FrameIndices;
use crate::jbm::{FrameOutcome, OutcomeKind, Payload};
use crate::plcnet::{HistoryWindow, PlcError, PlcModel};
use crate::toycodec::FrameSignal;
use crate::vq::{
    DistilledCodebook, FrameClass, ResidualVq, VqError, CODEBOOK_SIZE, DISTILLED_SOURCE_STAGES, MAX_STAGES,
};

/// Frames of prediction after a voiced frame (100 ms).
pub const VOICED_LIMIT: usize = 10;
/// Frames of prediction after an unvoiced or silent frame (60 ms).
pub const UNVOICED_LIMIT: usize = 6;
pub const SILENCE_RMS: f64 = 0.01;
pub const VOICED_MAX_ZCR: f64 = 0.15;

#[derive(Debug, Error)]
pub enum ConcealError {
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error(transparent)]
    Plc(#[from] PlcError),
    #[error("dimension mismatch between {0}")]
    Dimension(&'static str),
    #[error("empty labeled corpus")]
    EmptyCorpus,
    #[error("{0} indices but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("class map line {line}: {reason}")]
    ClassMapFormat { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ConcealError>;

/// Silence below 0.01 RMS, voiced below 0.15 zero crossings per sample, unvoiced otherwise.
pub fn classify_frame(frame: &FrameSignal) -> FrameClass {
    if frame.rms() < SILENCE_RMS {
        FrameClass::Silence
    } else if frame.zero_crossing_rate() < VOICED_MAX_ZCR {
        FrameClass::Voiced
    } else {
        FrameClass::Unvoiced
    }
}

pub fn burst_limit(class: FrameClass) -> usize {
    match class {
        FrameClass::Voiced => VOICED_LIMIT,
        FrameClass::Unvoiced | FrameClass::Silence => UNVOICED_LIMIT,
    }
}

/// A class label for every distilled index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexClassMap([FrameClass; CODEBOOK_SIZE]);

impl IndexClassMap {
    pub fn uniform(class: FrameClass) -> Self {
        Self([class; CODEBOOK_SIZE])
    }

    pub fn from_labels(labels: [FrameClass; CODEBOOK_SIZE]) -> Self {
        Self(labels)
    }

    pub fn class_of(&self, index: u8) -> FrameClass {
        self.0[index as usize]
    }

    pub fn labels(&self) -> &[FrameClass; CODEBOOK_SIZE] {
        &self.0
    }

    /// 256 lines of `index,label`.
    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (i, c) in self.0.iter().enumerate() {
            writeln!(w, "{i},{}", c.as_str())?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut labels = [None; CODEBOOK_SIZE];
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line_no = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: &str| ConcealError::ClassMapFormat { line: line_no, reason: reason.into() };
            let (i, l) = line.split_once(',').ok_or_else(|| bad("expected index,label"))?;
            let i: usize = i.trim().parse().map_err(|_| bad("bad index"))?;
            if i >= CODEBOOK_SIZE {
                return Err(bad("index out of range"));
            }
            labels[i] = Some(FrameClass::parse(l).ok_or_else(|| bad("unknown label"))?);
        }
        let mut out = [FrameClass::Silence; CODEBOOK_SIZE];
        for (i, l) in labels.iter().enumerate() {
            out[i] = l.ok_or_else(|| ConcealError::ClassMapFormat {
                line: 0,
                reason: format!("index {i} has no label"),
            })?;
        }
        Ok(Self(out))
    }
}

/// Majority vote of the labels of frames quantized to each index. Ties go to
/// the earlier class in silence, voiced, unvoiced order; unseen indices are silence.
pub fn build_class_map(indices: &[u8], labels: &[FrameClass]) -> Result<IndexClassMap> {
    if indices.is_empty() {
        return Err(ConcealError::EmptyCorpus);
    }
    if indices.len() != labels.len() {
        return Err(ConcealError::LengthMismatch(indices.len(), labels.len()));
    }
    let mut votes = [[0usize; 3]; CODEBOOK_SIZE];
    for (&i, &l) in indices.iter().zip(labels) {
        votes[i as usize][l as usize] += 1;
    }
    let mut map = [FrameClass::Silence; CODEBOOK_SIZE];
    for (m, v) in map.iter_mut().zip(&votes) {
        let mut best = 0;
        for c in 1..3 {
            if v[c] > v[best] {
                best = c;
            }
        }
        *m = FrameClass::ALL[best];
    }
    Ok(IndexClassMap(map))
}

/// Distilled index of a received frame: nearest row to the sum of its first two stage code-vectors.
pub fn requantize(stages: &[u8], rvq: &ResidualVq, distilled: &DistilledCodebook) -> Result<u8> {
    let n = DISTILLED_SOURCE_STAGES.min(stages.len());
    let sum = rvq.decode(&stages[..n])?;
    Ok(distilled.quantize(&sum)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConcealAction {
    Received(u8),
    Fec(u8),
    Predicted(u8),
    Silence,
}

impl fmt::Display for ConcealAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConcealAction::Received(_) => "received",
            ConcealAction::Fec(_) => "fec",
            ConcealAction::Predicted(_) => "predicted",
            ConcealAction::Silence => "silence",
        })
    }
}

impl ConcealAction {
    pub fn index(&self) -> Option<u8> {
        match *self {
            ConcealAction::Received(i) | ConcealAction::Fec(i) | ConcealAction::Predicted(i) => Some(i),
            ConcealAction::Silence => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcealState {
    pub history: HistoryWindow,
    pub burst_len: usize,
    pub last_class: FrameClass,
}

/// One stream's concealment state machine.
#[derive(Debug, Clone)]
pub struct Concealer<'a> {
    model: &'a PlcModel,
    rvq: &'a ResidualVq,
    distilled: &'a DistilledCodebook,
    class_map: &'a IndexClassMap,
    silence: u8,
    fade_out: bool,
    last_output: Vec<f64>,
    state: ConcealState,
}

impl<'a> Concealer<'a> {
    pub fn new(
        model: &'a PlcModel,
        rvq: &'a ResidualVq,
        distilled: &'a DistilledCodebook,
        class_map: &'a IndexClassMap,
    ) -> Result<Self> {
        if model.dim() != distilled.dim() {
            return Err(ConcealError::Dimension("PLC model and distilled codebook"));
        }
        if rvq.dim() != distilled.dim() {
            return Err(ConcealError::Dimension("residual quantizer and distilled codebook"));
        }
        let silence = distilled.silence_index();
        let sv = distilled.vector(silence).to_vec();
        Ok(Self {
            model,
            rvq,
            distilled,
            class_map,
            silence,
            fade_out: false,
            last_output: sv.clone(),
            state: ConcealState { history: HistoryWindow::filled(&sv), burst_len: 0, last_class: FrameClass::Silence },
        })
    }

    /// Blend the first post-limit frame halfway between the last output and silence.
    pub fn with_fade_out(mut self, on: bool) -> Self {
        self.fade_out = on;
        self
    }

    pub fn state(&self) -> &ConcealState {
        &self.state
    }

    pub fn silence_index(&self) -> u8 {
        self.silence
    }

    /// Re-quantizes a received frame into the history and returns its full decoded latent.
    pub fn requantize_received(&mut self, stages: &[u8]) -> Result<(u8, Vec<f64>)> {
        let idx = requantize(stages, self.rvq, self.distilled)?;
        self.state.history.push(self.distilled.vector(idx));
        self.state.burst_len = 0;
        self.state.last_class = self.class_map.class_of(idx);
        let latent = self.rvq.decode(&stages[..stages.len().min(self.rvq.num_stages())])?;
        self.last_output = latent.clone();
        Ok((idx, latent))
    }

    /// Uses a redundant distilled index for a frame whose primary payload is missing.
    pub fn apply_fec(&mut self, index: u8) -> Vec<f64> {
        let v = self.distilled.vector(index).to_vec();
        self.state.history.push(&v);
        self.state.burst_len = 0;
        self.state.last_class = self.class_map.class_of(index);
        self.last_output = v.clone();
        v
    }

    /// Predicts a lost frame, or emits silence once the burst limit is reached.
    pub fn conceal_frame(&mut self) -> Result<(ConcealAction, Vec<f64>)> {
        let limit = burst_limit(self.state.last_class);
        let (action, out) = if self.state.burst_len < limit {
            let idx = self.model.predict_index(&self.state.history)?;
            let v = self.distilled.vector(idx).to_vec();
            self.state.history.push(&v);
            (ConcealAction::Predicted(idx), v)
        } else {
            let sv = self.distilled.vector(self.silence).to_vec();
            self.state.history.push(&sv);
            let out = if self.fade_out && self.state.burst_len == limit {
                self.last_output.iter().zip(&sv).map(|(a, b)| 0.5 * (a + b)).collect()
            } else {
                sv
            };
            (ConcealAction::Silence, out)
        };
        self.state.burst_len += 1;
        self.last_output = out.clone();
        Ok((action, out))
    }

    /// Turns one jitter-buffer outcome into a decoder-ready latent.
    pub fn process(&mut self, outcome: &FrameOutcome) -> Result<(ConcealAction, Vec<f64>)> {
        match outcome.payload {
            Payload::Primary(stages) => {
                let (idx, latent) = self.requantize_received(&stages)?;
                Ok((ConcealAction::Received(idx), latent))
            }
            Payload::Redundant(d) => Ok((ConcealAction::Fec(d), self.apply_fec(d))),
            Payload::Missing => self.conceal_frame(),
        }
    }
}

/// Latents for the zero-filled baseline: lost frames decode the quantized zero latent.
pub fn zero_fill_baseline(outcomes: &[FrameOutcome], rvq: &ResidualVq) -> Result<Vec<Vec<f64>>> {
    let zero = vec![0.0; rvq.dim()];
    let silent = rvq.decode(&rvq.encode(&zero, rvq.num_stages())?)?;
    outcomes
        .iter()
        .map(|o| match o.payload {
            Payload::Primary(stages) => Ok(rvq.decode(&stages[..rvq.num_stages().min(MAX_STAGES)])?),
            _ => Ok(silent.clone()),
        })
        .collect()
}

/// Outcome kind after the baseline: every non-received frame becomes zero-filled.
pub fn zero_fill_kinds(outcomes: &[FrameOutcome]) -> Vec<OutcomeKind> {
    outcomes
        .iter()
        .map(|o| if o.kind == OutcomeKind::Received { o.kind } else { OutcomeKind::ZeroFilled })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConcealEvent {
    pub frame: usize,
    pub action: ConcealAction,
    pub burst_len: usize,
}

/// CSV with header `frame_n,action,index,burst_len`.
pub fn event_csv(events: &[ConcealEvent]) -> String {
    let mut s = String::from("frame_n,action,index,burst_len\n");
    for e in events {
        let idx = e.action.index().map(|i| i.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{}\n", e.frame, e.action, idx, e.burst_len));
    }
    s
}

/// Helper for callers holding [`FrameIndices`].
pub fn distilled_for(frame: &FrameIndices, rvq: &ResidualVq, distilled: &DistilledCodebook) -> Result<u8> {
    requantize(&frame.stages, rvq, distilled)
}
