//! Configuration, training steps and the three-condition loss simulation.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitstream::{self, attach_redundancy, payload_bitrates, FrameIndices, Packet, PacketError};
use crate::channel::{self, generate_trace, GilbertElliottParams, TraceError, TraceEvent, TraceFormat};
use crate::conceal::{
    build_class_map, event_csv, requantize, zero_fill_baseline, zero_fill_kinds, ConcealAction, ConcealError,
    ConcealEvent, Concealer, IndexClassMap,
};
use crate::corpus::{self, Corpus, CorpusConfig, CorpusError};
use crate::jbm::{run_trace, BufferStats, JbmError, OutcomeKind, Payload};
use crate::metrics::{self, assemble_report, FecSection, MetricsError, ReportInputs, RunReport};
use crate::plcnet::{self, train_teacher_forcing, PlcError, PlcModel, TrainPlcConfig, SEQUENCE_FRAMES};
use crate::toycodec::{self, frames_from_signal, AnalysisTransform, CodecError};
use crate::vq::{self, distill_codebook, refine_rvq, train_rvq, DistilledCodebook, ResidualVq, TrainConfig, VqError, MAX_STAGES};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Vq(#[from] VqError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Plc(#[from] PlcError),
    #[error(transparent)]
    Packet(#[from] PacketError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Jbm(#[from] JbmError),
    #[error(transparent)]
    Conceal(#[from] ConcealError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing {what} at {path}; run `{hint}` first")]
    MissingArtifact { what: &'static str, path: PathBuf, hint: &'static str },
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VqSection {
    pub epochs: usize,
    /// Joint epochs over all stages after greedy stage-by-stage training.
    pub refine_epochs: usize,
    pub distill_epochs: usize,
    pub batch_size: usize,
    pub decay: f64,
}

impl Default for VqSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { epochs: t.epochs, refine_epochs: 10, distill_epochs: 20, batch_size: t.batch_size, decay: t.decay }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlcSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for PlcSection {
    fn default() -> Self {
        let t = TrainPlcConfig::default();
        Self { iterations: t.iterations, batch_size: t.batch_size, lr: t.lr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    /// Trace file to replay; when absent a Gilbert-Elliott trace is generated.
    pub trace_file: Option<PathBuf>,
    pub loss_rate: f64,
    pub mean_burst_packets: f64,
    pub base_delay_ms: f64,
    pub jitter_std_ms: f64,
    /// Independent generated traces per simulation.
    pub runs: usize,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let p = GilbertElliottParams::ten_percent();
        Self {
            trace_file: None,
            loss_rate: 0.10,
            mean_burst_packets: 2.0,
            base_delay_ms: p.base_delay_ms,
            jitter_std_ms: p.jitter_std_ms,
            runs: 1,
        }
    }
}

impl ChannelSection {
    pub fn params(&self) -> GilbertElliottParams {
        GilbertElliottParams {
            base_delay_ms: self.base_delay_ms,
            jitter_std_ms: self.jitter_std_ms,
            ..GilbertElliottParams::with_mean_burst(self.loss_rate, self.mean_burst_packets)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub dim: usize,
    pub hidden: usize,
    pub stages: usize,
    pub fec_offset: u8,
    pub playout_delay_ms: f64,
    pub out_dir: PathBuf,
    pub eval_seconds: f64,
    /// Blend the first post-limit frame toward silence.
    pub fade_out: bool,
    pub corpus: CorpusConfig,
    pub vq: VqSection,
    pub plc: PlcSection,
    pub channel: ChannelSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: toycodec::DEFAULT_LATENT_DIM,
            hidden: plcnet::DEFAULT_HIDDEN,
            stages: MAX_STAGES,
            fec_offset: bitstream::DEFAULT_FEC_OFFSET,
            playout_delay_ms: crate::jbm::DEFAULT_PLAYOUT_DELAY_MS,
            out_dir: PathBuf::from("out"),
            eval_seconds: 20.0,
            fade_out: false,
            corpus: CorpusConfig::default(),
            vq: VqSection::default(),
            plc: PlcSection::default(),
            channel: ChannelSection::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.dim == 0 || self.dim > toycodec::FRAME_LEN {
            return bad(format!("dim must be in 1..={}", toycodec::FRAME_LEN));
        }
        if self.hidden == 0 {
            return bad("hidden must be positive".into());
        }
        if !(vq::DISTILLED_SOURCE_STAGES..=MAX_STAGES).contains(&self.stages) {
            return bad(format!("stages must be in {}..={MAX_STAGES}", vq::DISTILLED_SOURCE_STAGES));
        }
        if self.fec_offset % 2 == 1 {
            return bad(format!("fec_offset must be even, got {}", self.fec_offset));
        }
        if !(self.playout_delay_ms.is_finite() && self.playout_delay_ms >= 0.0) {
            return bad("playout_delay_ms must be finite and non-negative".into());
        }
        if !(self.eval_seconds.is_finite() && self.eval_seconds >= 0.02) {
            return bad("eval_seconds must be at least one packet (0.02 s)".into());
        }
        if self.channel.runs == 0 {
            return bad("channel.runs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.channel.loss_rate) || self.channel.mean_burst_packets < 1.0 {
            return bad("channel.loss_rate must be in [0, 1) and mean_burst_packets >= 1".into());
        }
        self.channel.params().validate()?;
        self.corpus.validate()?;
        Ok(())
    }

    /// SHA-256 of the serialized config with the output directory cleared,
    /// so identical settings written to different places share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        metrics::fingerprint(c.to_toml().as_bytes())
    }

    pub fn vq_train(&self) -> TrainConfig {
        TrainConfig { epochs: self.vq.epochs, batch_size: self.vq.batch_size, decay: self.vq.decay, seed: self.seed }
    }

    pub fn distill_train(&self) -> TrainConfig {
        TrainConfig { epochs: self.vq.distill_epochs, seed: self.seed.wrapping_add(1), ..self.vq_train() }
    }

    pub fn plc_train(&self) -> TrainPlcConfig {
        TrainPlcConfig {
            iterations: self.plc.iterations,
            batch_size: self.plc.batch_size,
            lr: self.plc.lr,
            seed: self.seed.wrapping_add(2),
        }
    }

    pub fn train_corpus_seed(&self) -> u64 {
        self.seed
    }

    pub fn eval_corpus_seed(&self) -> u64 {
        self.seed.wrapping_add(0x5eed)
    }

    pub fn trace_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(1_000_003).wrapping_add(run as u64)
    }

    pub fn eval_corpus_config(&self) -> CorpusConfig {
        CorpusConfig { seconds: self.eval_seconds, ..self.corpus }
    }
}

/// Latent of every frame of `samples`.
pub fn latents(transform: &AnalysisTransform, samples: &[f64]) -> Vec<Vec<f64>> {
    frames_from_signal(samples).iter().map(|f| transform.encode(f)).collect()
}

/// Everything the receiver and sender share after training.
#[derive(Debug, Clone)]
pub struct Models {
    pub transform: AnalysisTransform,
    pub rvq: ResidualVq,
    pub distilled: DistilledCodebook,
    pub class_map: IndexClassMap,
    pub plc: PlcModel,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingCurves {
    pub vq: Vec<Vec<f64>>,
    pub distill: Vec<f64>,
    pub plc: Vec<f64>,
}

pub fn fit_transform(cfg: &Config, corpus: &Corpus) -> Result<AnalysisTransform> {
    Ok(AnalysisTransform::fit(cfg.dim, &corpus.frames())?)
}

/// Greedy stage-wise training followed by joint refinement. The last curve
/// is the full-rate MSE of the refinement epochs.
pub fn train_vq_step(cfg: &Config, latents: &[Vec<f64>]) -> Result<(ResidualVq, Vec<Vec<f64>>)> {
    let (rvq, mut curves) = train_rvq(latents, cfg.stages, &cfg.vq_train())?;
    let refine = TrainConfig { epochs: cfg.vq.refine_epochs, seed: cfg.seed.wrapping_add(4), ..cfg.vq_train() };
    let (rvq, curve) = refine_rvq(rvq, latents, &refine)?;
    curves.push(curve);
    Ok((rvq, curves))
}

/// Distilled index of every latent, via the same two-stage route a receiver uses.
pub fn distilled_indices(rvq: &ResidualVq, distilled: &DistilledCodebook, latents: &[Vec<f64>]) -> Result<Vec<u8>> {
    latents
        .iter()
        .map(|x| Ok(requantize(&rvq.encode(x, vq::DISTILLED_SOURCE_STAGES)?, rvq, distilled)?))
        .collect()
}

pub fn distill_step(
    cfg: &Config,
    rvq: &ResidualVq,
    latents: &[Vec<f64>],
    labels: &[vq::FrameClass],
) -> Result<(DistilledCodebook, IndexClassMap, Vec<f64>)> {
    let (mut distilled, curve) = distill_codebook(rvq, latents, &cfg.distill_train())?;
    let idx = distilled_indices(rvq, &distilled, latents)?;
    let map = build_class_map(&idx, labels)?;
    distilled.set_class_map(*map.labels());
    Ok((distilled, map, curve))
}

/// Splits the index stream into consecutive 200-frame training sequences.
/// A shorter tail is kept when it still has at least one full window.
pub fn plc_sequences(indices: &[u8]) -> Vec<Vec<u8>> {
    indices
        .chunks(SEQUENCE_FRAMES)
        .filter(|c| c.len() > plcnet::WINDOW)
        .map(<[u8]>::to_vec)
        .collect()
}

pub fn train_plc_step(
    cfg: &Config,
    rvq: &ResidualVq,
    distilled: &DistilledCodebook,
    latents: &[Vec<f64>],
) -> Result<(PlcModel, Vec<f64>)> {
    let seqs = plc_sequences(&distilled_indices(rvq, distilled, latents)?);
    let mut model = PlcModel::new(cfg.dim, cfg.hidden, cfg.seed.wrapping_add(3))?;
    let curve = train_teacher_forcing(&mut model, &seqs, distilled.codebook(), &cfg.plc_train())?;
    Ok((model, curve))
}

/// Trains every model from a corpus in memory.
pub fn train_all(cfg: &Config, corpus: &Corpus) -> Result<(Models, TrainingCurves)> {
    let transform = fit_transform(cfg, corpus)?;
    let lat = latents(&transform, &corpus.samples);
    let (rvq, vq_curves) = train_vq_step(cfg, &lat)?;
    let (distilled, class_map, distill_curve) = distill_step(cfg, &rvq, &lat, &corpus.labels())?;
    let (plc, plc_curve) = train_plc_step(cfg, &rvq, &distilled, &lat)?;
    Ok((
        Models { transform, rvq, distilled, class_map, plc },
        TrainingCurves { vq: vq_curves, distill: distill_curve, plc: plc_curve },
    ))
}

/// Checks that loaded artifacts agree with the config and with each other.
pub fn check_models(cfg: &Config, m: &Models) -> Result<()> {
    let mut problems = Vec::new();
    if m.transform.dim() != cfg.dim {
        problems.push(format!("transform has D={}, config D={}", m.transform.dim(), cfg.dim));
    }
    if m.rvq.dim() != cfg.dim {
        problems.push(format!("residual quantizer has D={}, config D={}", m.rvq.dim(), cfg.dim));
    }
    if m.rvq.num_stages() != cfg.stages {
        problems.push(format!("residual quantizer has S={}, config S={}", m.rvq.num_stages(), cfg.stages));
    }
    if m.distilled.dim() != cfg.dim {
        problems.push(format!("distilled codebook has D={}, config D={}", m.distilled.dim(), cfg.dim));
    }
    if m.plc.dim() != cfg.dim || m.plc.hidden() != cfg.hidden {
        problems.push(format!(
            "PLC model has D={} H={}, config D={} H={}",
            m.plc.dim(),
            m.plc.hidden(),
            cfg.dim,
            cfg.hidden
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(PipelineError::Mismatch(problems.join("; ")))
    }
}

/// Sender side: full-rate indices plus the distilled index of each frame.
/// The frame count is rounded up to a whole number of packets with silence.
pub fn encode_stream(m: &Models, latents: &[Vec<f64>]) -> Result<Vec<FrameIndices>> {
    let mut lat = latents.to_vec();
    if !lat.len().is_multiple_of(bitstream::FRAMES_PER_PACKET) {
        lat.push(vec![0.0; m.rvq.dim()]);
    }
    lat.iter()
        .map(|x| {
            let idx = m.rvq.encode(x, m.rvq.num_stages())?;
            let mut stages = [0u8; MAX_STAGES];
            stages[..idx.len()].copy_from_slice(&idx);
            let distilled = requantize(&idx, &m.rvq, &m.distilled)?;
            Ok(FrameIndices { stages, distilled })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    ZeroFill,
    Plc,
    PlcFec,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::ZeroFill, Condition::Plc, Condition::PlcFec];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::ZeroFill => "zero_fill",
            Condition::Plc => "plc",
            Condition::PlcFec => "plc_fec",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConditionRun {
    pub condition: Condition,
    pub packets: Vec<Packet>,
    pub kinds: Vec<OutcomeKind>,
    pub stats: BufferStats,
    pub latents: Vec<Vec<f64>>,
    pub samples: Vec<f64>,
    pub events: Vec<ConcealEvent>,
    pub report: RunReport,
}

fn decode_all(t: &AnalysisTransform, latents: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(latents.len() * toycodec::FRAME_LEN);
    for l in latents {
        out.extend_from_slice(t.decode(l)?.samples());
    }
    Ok(out)
}

/// Output of the lossless decoder; the reference for every SNR.
pub fn clean_reference(m: &Models, stream: &[FrameIndices]) -> Result<Vec<f64>> {
    let lat = stream
        .iter()
        .map(|f| m.rvq.decode(&f.stages[..m.rvq.num_stages()]))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    decode_all(&m.transform, &lat)
}

/// Runs one condition end to end over a prepared frame stream and trace.
pub fn run_condition(
    cfg: &Config,
    m: &Models,
    stream: &[FrameIndices],
    reference: &[f64],
    trace: &[TraceEvent],
    condition: Condition,
) -> Result<ConditionRun> {
    let k = if condition == Condition::PlcFec { cfg.fec_offset } else { 0 };
    let packets = attach_redundancy(stream, k)?;
    let (outcomes, stats) = run_trace(&packets, trace, cfg.playout_delay_ms)?;

    let mut events = Vec::new();
    let mut predictions = Vec::new();
    let (lat, kinds) = if condition == Condition::ZeroFill {
        (zero_fill_baseline(&outcomes, &m.rvq)?, zero_fill_kinds(&outcomes))
    } else {
        let mut c = Concealer::new(&m.plc, &m.rvq, &m.distilled, &m.class_map)?.with_fade_out(cfg.fade_out);
        let mut lat = Vec::with_capacity(outcomes.len());
        for o in &outcomes {
            let probs = if o.payload == Payload::Missing { Some(m.plc.forward(&c.state().history)?) } else { None };
            let (action, l) = c.process(o)?;
            if let (ConcealAction::Predicted(p), Some(probs)) = (action, probs) {
                let truth = stream[o.frame].distilled;
                predictions.push((p, truth, probs[truth as usize]));
            }
            events.push(ConcealEvent { frame: o.frame, action, burst_len: c.state().burst_len });
            lat.push(l);
        }
        (lat, outcomes.iter().map(|o| o.kind).collect())
    };
    let samples = decode_all(&m.transform, &lat)?;

    let fec = (k > 0).then(|| {
        let (primary_bps, redundancy_bps) = payload_bitrates(&packets);
        FecSection { offset_frames: k, recovered_frames: stats.fec_recovered, primary_bps, redundancy_bps }
    });
    let fingerprint = cfg.fingerprint();
    let report = assemble_report(&ReportInputs {
        condition: condition.as_str(),
        reference,
        decoded: &samples,
        kinds: &kinds,
        buffer: stats,
        predictions: &predictions,
        fec,
        complexity: m.plc.complexity(),
        config_fingerprint: &fingerprint,
    })?;
    Ok(ConditionRun { condition, packets, kinds, stats, latents: lat, samples, events, report })
}

/// All three conditions over one trace, sharing the same encoded stream.
pub fn simulate_trace(cfg: &Config, m: &Models, eval_samples: &[f64], trace: &[TraceEvent]) -> Result<Vec<ConditionRun>> {
    check_models(cfg, m)?;
    let stream = encode_stream(m, &latents(&m.transform, eval_samples))?;
    let reference = clean_reference(m, &stream)?;
    Condition::ALL.iter().map(|&c| run_condition(cfg, m, &stream, &reference, trace, c)).collect()
}

/// Trace for `run`: the configured file, or a generated Gilbert-Elliott trace.
pub fn trace_for_run(cfg: &Config, n_packets: usize, run: usize) -> Result<Vec<TraceEvent>> {
    match &cfg.channel.trace_file {
        Some(path) => Ok(channel::parse_trace(&read_string(path)?)?),
        None => Ok(generate_trace(&cfg.channel.params(), n_packets, cfg.trace_seed(run))?),
    }
}

pub fn packets_for(samples: &[f64]) -> usize {
    frames_from_signal(samples).len().div_ceil(bitstream::FRAMES_PER_PACKET)
}

#[derive(Debug, Clone, Serialize)]
pub struct MeanSnr {
    pub zero_fill: f64,
    pub plc: f64,
    pub plc_fec: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub config_fingerprint: String,
    pub runs: Vec<Vec<RunReport>>,
    pub mean_overall_snr_db: MeanSnr,
}

pub fn summarize(cfg: &Config, runs: Vec<Vec<RunReport>>) -> SimulationSummary {
    let mean = |c: Condition| {
        let v: Vec<f64> = runs.iter().flatten().filter(|r| r.condition == c.as_str()).map(|r| r.overall_snr_db).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    SimulationSummary {
        config_fingerprint: cfg.fingerprint(),
        mean_overall_snr_db: MeanSnr {
            zero_fill: mean(Condition::ZeroFill),
            plc: mean(Condition::Plc),
            plc_fec: mean(Condition::PlcFec),
        },
        runs,
    }
}

// ---- file-backed steps ----

pub const CORPUS_WAV: &str = "corpus.wav";
pub const CORPUS_LABELS: &str = "labels.csv";
pub const EVAL_WAV: &str = "eval.wav";
pub const EVAL_LABELS: &str = "eval_labels.csv";
pub const TRANSFORM_FILE: &str = "transform.json";
pub const RVQ_FILE: &str = "rvq.lvq";
pub const VQ_CURVES: &str = "vq_curves.csv";
pub const DISTILLED_FILE: &str = "distilled.lvqd";
pub const DISTILL_CURVE: &str = "distill_curve.csv";
pub const CLASS_MAP_FILE: &str = "class_map.csv";
pub const PLC_FILE: &str = "plc.bin";
pub const PLC_CURVE: &str = "plc_loss.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PACKETS_FILE: &str = "packets.bin";
pub const TRACE_FILE: &str = "trace.csv";
pub const OUTCOMES_FILE: &str = "outcomes.csv";
pub const EVENTS_FILE: &str = "conceal_events.csv";
pub const DECODED_WAV: &str = "decoded_plc_fec.wav";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn require(path: PathBuf, what: &'static str, hint: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact { what, path, hint })
    }
}

#[derive(Serialize, Deserialize)]
struct TransformFile {
    dim: usize,
    scale: Vec<f64>,
}

fn curve_csv(header: &str, rows: impl Iterator<Item = String>) -> String {
    let mut s = format!("{header}\n");
    for r in rows {
        s.push_str(&r);
        s.push('\n');
    }
    s
}

/// Writes the training and evaluation corpora with rule-based labels.
pub fn gen_data(cfg: &Config) -> Result<(Corpus, Corpus)> {
    let train = corpus::generate(&cfg.corpus, cfg.train_corpus_seed())?;
    let eval = corpus::generate(&cfg.eval_corpus_config(), cfg.eval_corpus_seed())?;
    for (c, wav, lab) in [(&train, CORPUS_WAV, CORPUS_LABELS), (&eval, EVAL_WAV, EVAL_LABELS)] {
        let wav_path = cfg.out_dir.join(wav);
        fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
        toycodec::write_wav(&wav_path, &c.samples)?;
        let mut buf = Vec::new();
        corpus::write_labels(&mut buf, &c.labels()).expect("write to memory");
        write_file(&cfg.out_dir.join(lab), &buf)?;
    }
    Ok((train, eval))
}

fn load_corpus(cfg: &Config, wav: &str, labels: &str) -> Result<Corpus> {
    let wav_path = require(cfg.out_dir.join(wav), "corpus audio", "gen-data")?;
    let lab_path = require(cfg.out_dir.join(labels), "corpus labels", "gen-data")?;
    let samples = toycodec::read_wav(&wav_path)?;
    let f = fs::File::open(&lab_path).map_err(io_err(&lab_path))?;
    let generated = corpus::read_labels(BufReader::new(f))?;
    Ok(Corpus { samples, generated })
}

fn load_transform(cfg: &Config) -> Result<AnalysisTransform> {
    let p = require(cfg.out_dir.join(TRANSFORM_FILE), "analysis transform", "train-vq")?;
    let tf: TransformFile =
        serde_json::from_str(&read_string(&p)?).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
    Ok(AnalysisTransform::with_scale(tf.dim, tf.scale)?)
}

fn load_rvq(cfg: &Config) -> Result<ResidualVq> {
    let p = require(cfg.out_dir.join(RVQ_FILE), "residual quantizer", "train-vq")?;
    let mut f = fs::File::open(&p).map_err(io_err(&p))?;
    Ok(vq::read_rvq(&mut f)?)
}

fn load_distilled(cfg: &Config) -> Result<(DistilledCodebook, IndexClassMap)> {
    let p = require(cfg.out_dir.join(DISTILLED_FILE), "distilled codebook", "distill")?;
    let mut f = fs::File::open(&p).map_err(io_err(&p))?;
    let mut d = vq::read_distilled(&mut f)?;
    let mp = require(cfg.out_dir.join(CLASS_MAP_FILE), "class map", "distill")?;
    let mf = fs::File::open(&mp).map_err(io_err(&mp))?;
    let map = IndexClassMap::read(BufReader::new(mf))?;
    d.set_class_map(*map.labels());
    Ok((d, map))
}

fn load_plc(cfg: &Config) -> Result<PlcModel> {
    let p = require(cfg.out_dir.join(PLC_FILE), "PLC model", "train-plc")?;
    let mut f = fs::File::open(&p).map_err(io_err(&p))?;
    Ok(plcnet::read_model(&mut f)?)
}

pub fn load_models(cfg: &Config) -> Result<Models> {
    let (distilled, class_map) = load_distilled(cfg)?;
    let m = Models {
        transform: load_transform(cfg)?,
        rvq: load_rvq(cfg)?,
        distilled,
        class_map,
        plc: load_plc(cfg)?,
    };
    check_models(cfg, &m)?;
    Ok(m)
}

/// Fits the transform and trains the residual quantizer; returns the final
/// MSE of each labeled training curve.
pub fn train_vq_files(cfg: &Config) -> Result<Vec<(String, f64)>> {
    let corpus = load_corpus(cfg, CORPUS_WAV, CORPUS_LABELS)?;
    let transform = fit_transform(cfg, &corpus)?;
    let lat = latents(&transform, &corpus.samples);
    let (rvq, curves) = train_vq_step(cfg, &lat)?;
    let tf = TransformFile { dim: transform.dim(), scale: transform.scale().to_vec() };
    write_file(&cfg.out_dir.join(TRANSFORM_FILE), serde_json::to_string_pretty(&tf).expect("serializes").as_bytes())?;
    let mut buf = Vec::new();
    vq::write_rvq(&mut buf, &rvq)?;
    write_file(&cfg.out_dir.join(RVQ_FILE), &buf)?;
    let labels = curve_labels(cfg.stages);
    let rows = curves
        .iter()
        .zip(&labels)
        .flat_map(|(c, l)| c.iter().enumerate().map(move |(e, v)| format!("{l},{},{v}", e + 1)));
    write_file(&cfg.out_dir.join(VQ_CURVES), curve_csv("curve,epoch,mse", rows).as_bytes())?;
    Ok(labels.into_iter().zip(curves.iter().map(|c| c.last().copied().unwrap_or(f64::NAN))).collect())
}

/// `stage1..stageS` then `joint` for the refinement curve.
pub fn curve_labels(stages: usize) -> Vec<String> {
    (1..=stages).map(|s| format!("stage{s}")).chain(std::iter::once("joint".to_string())).collect()
}

/// Distills stages 1+2 and builds the class map; returns the final distillation MSE.
pub fn distill_files(cfg: &Config) -> Result<f64> {
    let corpus = load_corpus(cfg, CORPUS_WAV, CORPUS_LABELS)?;
    let transform = load_transform(cfg)?;
    let rvq = load_rvq(cfg)?;
    if rvq.dim() != cfg.dim || transform.dim() != cfg.dim {
        return Err(PipelineError::Mismatch(format!(
            "trained with D={}, config D={}; rerun train-vq",
            rvq.dim(),
            cfg.dim
        )));
    }
    let lat = latents(&transform, &corpus.samples);
    let (d, map, curve) = distill_step(cfg, &rvq, &lat, &corpus.labels())?;
    let mut buf = Vec::new();
    vq::write_distilled(&mut buf, &d)?;
    write_file(&cfg.out_dir.join(DISTILLED_FILE), &buf)?;
    let mut buf = Vec::new();
    map.write(&mut buf).map_err(io_err(&cfg.out_dir))?;
    write_file(&cfg.out_dir.join(CLASS_MAP_FILE), &buf)?;
    let rows = curve.iter().enumerate().map(|(e, v)| format!("{},{v}", e + 1));
    write_file(&cfg.out_dir.join(DISTILL_CURVE), curve_csv("epoch,mse", rows).as_bytes())?;
    Ok(curve.last().copied().unwrap_or(f64::NAN))
}

/// Trains the predictor; returns the final batch NLL.
pub fn train_plc_files(cfg: &Config) -> Result<f64> {
    let (distilled, _) = load_distilled(cfg)?;
    let corpus = load_corpus(cfg, CORPUS_WAV, CORPUS_LABELS)?;
    let transform = load_transform(cfg)?;
    let rvq = load_rvq(cfg)?;
    if distilled.dim() != cfg.dim || rvq.dim() != cfg.dim {
        return Err(PipelineError::Mismatch(format!(
            "codebooks have D={}, config D={}; rerun train-vq and distill",
            distilled.dim(),
            cfg.dim
        )));
    }
    let lat = latents(&transform, &corpus.samples);
    let (model, curve) = train_plc_step(cfg, &rvq, &distilled, &lat)?;
    let mut buf = Vec::new();
    plcnet::write_model(&mut buf, &model)?;
    write_file(&cfg.out_dir.join(PLC_FILE), &buf)?;
    let mut buf = Vec::new();
    plcnet::write_loss_curve(&mut buf, &curve).map_err(io_err(&cfg.out_dir))?;
    write_file(&cfg.out_dir.join(PLC_CURVE), &buf)?;
    Ok(curve.last().copied().unwrap_or(f64::NAN))
}

/// Runs every configured trace and writes the report plus logs of the first run.
pub fn simulate_files(cfg: &Config) -> Result<SimulationSummary> {
    let m = load_models(cfg)?;
    let eval = load_corpus(cfg, EVAL_WAV, EVAL_LABELS)?;
    let n_packets = packets_for(&eval.samples);
    let runs = if cfg.channel.trace_file.is_some() { 1 } else { cfg.channel.runs };
    if let Some(w) = crate::jbm::fec_config_warning(cfg.fec_offset, cfg.playout_delay_ms, cfg.channel.base_delay_ms) {
        log::warn!("{w}");
    }
    let mut all = Vec::with_capacity(runs);
    for run in 0..runs {
        let trace = trace_for_run(cfg, n_packets, run)?;
        let results = simulate_trace(cfg, &m, &eval.samples, &trace)?;
        if run == 0 {
            write_file(&cfg.out_dir.join(TRACE_FILE), channel::write_trace(&trace, TraceFormat::DelayLoss).as_bytes())?;
            let fec = &results[2];
            write_file(&cfg.out_dir.join(PACKETS_FILE), &bitstream::pack_stream(&fec.packets)?)?;
            let outcomes: Vec<String> = results
                .iter()
                .map(|r| {
                    r.kinds
                        .iter()
                        .enumerate()
                        .map(|(n, k)| format!("{},{},{}\n", r.condition.as_str(), n, k))
                        .collect::<String>()
                })
                .collect();
            write_file(
                &cfg.out_dir.join(OUTCOMES_FILE),
                format!("condition,frame_n,kind\n{}", outcomes.concat()).as_bytes(),
            )?;
            write_file(&cfg.out_dir.join(EVENTS_FILE), event_csv(&fec.events).as_bytes())?;
            toycodec::write_wav(&cfg.out_dir.join(DECODED_WAV), &fec.samples)?;
        }
        all.push(results.into_iter().map(|r| r.report).collect());
    }
    let summary = summarize(cfg, all);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&cfg.out_dir.join(REPORT_FILE), json.as_bytes())?;
    Ok(summary)
}

/// Human-readable dump of packet `seq` from a packed stream file.
pub fn inspect_packet(path: &Path, seq: u16) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let packets = bitstream::unpack_stream(&bytes)?;
    let p = packets
        .iter()
        .find(|p| p.seq == seq)
        .ok_or_else(|| PipelineError::Config(format!("seq {seq} not found ({} packets in file)", packets.len())))?;
    Ok(format!("{}{}\n", bitstream::describe(p), bitstream::dump_line(p)))
}
