//! Error-resilience stack for latent-domain speech codecs: residual vector
//! quantization with a distilled codebook, a causal index predictor for packet
//! loss concealment, in-band FEC packets, a Gilbert-Elliott channel and a
//! fixed-delay jitter buffer, all around a linear toy frame codec.

pub mod bitstream;
pub mod channel;
pub mod conceal;
pub mod jbm;
pub mod metrics;
pub mod plcnet;
pub mod toycodec;
pub mod vq;

pub mod corpus;
pub mod pipeline;
