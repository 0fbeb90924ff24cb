//! Objective evaluation and run reports.

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::jbm::{BufferStats, OutcomeKind};
use crate::plcnet::{ComplexityReport, NLL_FLOOR};
use crate::toycodec::FRAME_LEN;

/// Reported when the error energy is zero.
pub const SNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("reference signal has zero energy")]
    ZeroReference,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("outcome counts sum to {counted} but the run has {frames} frames")]
    CountMismatch { counted: usize, frames: usize },
    #[error("no samples to evaluate")]
    Empty,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// `10 log10(sum ref^2 / sum (ref - test)^2)`, capped at [`SNR_CAP_DB`].
pub fn snr_db(reference: &[f64], test: &[f64]) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), test.len()));
    }
    let signal: f64 = reference.iter().map(|r| r * r).sum();
    let noise: f64 = reference.iter().zip(test).map(|(r, t)| (r - t) * (r - t)).sum();
    if !(signal.is_finite() && noise.is_finite()) {
        return Err(MetricsError::NonFinite("signal"));
    }
    if signal == 0.0 {
        return Err(MetricsError::ZeroReference);
    }
    if noise == 0.0 {
        return Ok(SNR_CAP_DB);
    }
    Ok((10.0 * (signal / noise).log10()).min(SNR_CAP_DB))
}

/// Frames counted in the concealed region: every non-received frame plus the frame after it.
pub fn concealed_region(kinds: &[OutcomeKind]) -> Vec<bool> {
    let mut mask = vec![false; kinds.len()];
    for (n, k) in kinds.iter().enumerate() {
        if *k != OutcomeKind::Received {
            mask[n] = true;
            if n + 1 < kinds.len() {
                mask[n + 1] = true;
            }
        }
    }
    mask
}

/// SNR over the samples of masked frames; `None` when no frame is masked or
/// the reference is silent there.
pub fn region_snr_db(reference: &[f64], test: &[f64], mask: &[bool]) -> Result<Option<f64>> {
    if reference.len() != test.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), test.len()));
    }
    if reference.len() < mask.len() * FRAME_LEN {
        return Err(MetricsError::LengthMismatch(reference.len(), mask.len() * FRAME_LEN));
    }
    let (mut r, mut t) = (Vec::new(), Vec::new());
    for (n, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let span = n * FRAME_LEN..(n + 1) * FRAME_LEN;
        r.extend_from_slice(&reference[span.clone()]);
        t.extend_from_slice(&test[span]);
    }
    if r.is_empty() {
        return Ok(None);
    }
    match snr_db(&r, &t) {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::ZeroReference) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Top-1 accuracy and mean `-ln p(true)` over predicted frames.
///
/// `p_true[i]` is the model probability assigned to `truth[i]`.
pub fn prediction_metrics(predicted: &[u8], truth: &[u8], p_true: &[f64]) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(predicted.len(), truth.len()));
    }
    if p_true.len() != truth.len() {
        return Err(MetricsError::LengthMismatch(p_true.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(MetricsError::Empty);
    }
    if p_true.iter().any(|p| !p.is_finite()) {
        return Err(MetricsError::NonFinite("probabilities"));
    }
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    let nll: f64 = p_true.iter().map(|p| -p.max(NLL_FLOOR).ln()).sum();
    let n = truth.len() as f64;
    Ok((hits as f64 / n, nll / n))
}

/// Lowercase hex SHA-256.
pub fn fingerprint(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct OutcomeCounts {
    pub received: usize,
    pub fec_recovered: usize,
    pub concealed: usize,
    pub zero_filled: usize,
    pub late_drops: usize,
}

impl OutcomeCounts {
    pub fn from_kinds(kinds: &[OutcomeKind], late_drops: usize) -> Self {
        let mut c = Self { late_drops, ..Self::default() };
        for k in kinds {
            match k {
                OutcomeKind::Received => c.received += 1,
                OutcomeKind::FecRecovered => c.fec_recovered += 1,
                OutcomeKind::Concealed => c.concealed += 1,
                OutcomeKind::ZeroFilled => c.zero_filled += 1,
            }
        }
        c
    }

    pub fn frames(&self) -> usize {
        self.received + self.fec_recovered + self.concealed + self.zero_filled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FecSection {
    pub offset_frames: u8,
    pub recovered_frames: usize,
    pub primary_bps: f64,
    pub redundancy_bps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionSection {
    pub predicted_frames: usize,
    pub top1_accuracy: f64,
    pub mean_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub condition: String,
    pub frames: usize,
    pub overall_snr_db: f64,
    pub concealed_region_snr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PredictionSection>,
    pub outcome_counts: OutcomeCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fec: Option<FecSection>,
    pub complexity: ComplexityReport,
    pub config_fingerprint: String,
    pub metric_note: &'static str,
}

pub const METRIC_NOTE: &str =
    "objective SNR and index-prediction scores; no perceptual quality model is applied";

/// Everything needed to build one condition's report.
#[derive(Debug, Clone)]
pub struct ReportInputs<'a> {
    pub condition: &'a str,
    pub reference: &'a [f64],
    pub decoded: &'a [f64],
    pub kinds: &'a [OutcomeKind],
    pub buffer: BufferStats,
    /// `(predicted, true, p_true)` per model-predicted frame.
    pub predictions: &'a [(u8, u8, f64)],
    pub fec: Option<FecSection>,
    pub complexity: ComplexityReport,
    pub config_fingerprint: &'a str,
}

pub fn assemble_report(inp: &ReportInputs<'_>) -> Result<RunReport> {
    let counts = OutcomeCounts::from_kinds(inp.kinds, inp.buffer.late_drops);
    if counts.frames() != inp.kinds.len() || inp.buffer.frames() != inp.kinds.len() {
        return Err(MetricsError::CountMismatch { counted: inp.buffer.frames(), frames: inp.kinds.len() });
    }
    let overall = snr_db(inp.reference, inp.decoded)?;
    let region = region_snr_db(inp.reference, inp.decoded, &concealed_region(inp.kinds))?;
    let prediction = if inp.predictions.is_empty() {
        None
    } else {
        let p: Vec<u8> = inp.predictions.iter().map(|x| x.0).collect();
        let t: Vec<u8> = inp.predictions.iter().map(|x| x.1).collect();
        let q: Vec<f64> = inp.predictions.iter().map(|x| x.2).collect();
        let (top1_accuracy, mean_nll) = prediction_metrics(&p, &t, &q)?;
        Some(PredictionSection { predicted_frames: p.len(), top1_accuracy, mean_nll })
    };
    Ok(RunReport {
        condition: inp.condition.to_string(),
        frames: inp.kinds.len(),
        overall_snr_db: overall,
        concealed_region_snr_db: region,
        prediction,
        outcome_counts: counts,
        fec: inp.fec.filter(|f| f.offset_frames > 0),
        complexity: inp.complexity,
        config_fingerprint: inp.config_fingerprint.to_string(),
        metric_note: METRIC_NOTE,
    })
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
