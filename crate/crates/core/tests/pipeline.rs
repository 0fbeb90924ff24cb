use latent_resilience::channel::{generate_trace, GilbertElliottParams};
use latent_resilience::corpus;
use latent_resilience::metrics::SNR_CAP_DB;
use latent_resilience::pipeline::{self, Config, PipelineError};

fn small_config() -> Config {
    let mut cfg = Config::default();
    cfg.corpus.seconds = 10.0;
    cfg.eval_seconds = 4.0;
    cfg.hidden = 16;
    cfg.vq.epochs = 3;
    cfg.vq.refine_epochs = 1;
    cfg.vq.distill_epochs = 3;
    cfg.plc.iterations = 50;
    cfg
}

#[test]
fn lossless_channel_makes_conditions_identical() {
    let cfg = small_config();
    let train = corpus::generate(&cfg.corpus, cfg.train_corpus_seed()).unwrap();
    let (models, _) = pipeline::train_all(&cfg, &train).unwrap();
    let eval = corpus::generate(&cfg.eval_corpus_config(), cfg.eval_corpus_seed()).unwrap();
    let n = pipeline::packets_for(&eval.samples);
    let trace = generate_trace(&GilbertElliottParams::lossless(), n, 0).unwrap();
    let runs = pipeline::simulate_trace(&cfg, &models, &eval.samples, &trace).unwrap();
    assert_eq!(runs.len(), 3);
    for r in &runs {
        assert_eq!(r.samples, runs[0].samples);
        assert_eq!(r.report.overall_snr_db, SNR_CAP_DB);
        assert_eq!(r.report.concealed_region_snr_db, None);
    }
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = small_config();
    cfg.fec_offset = 4;
    cfg.channel.loss_rate = 0.2;
    let back = Config::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(back.to_toml(), cfg.to_toml());
    assert_eq!(back.fingerprint(), cfg.fingerprint());
    let mut moved = cfg.clone();
    moved.out_dir = "elsewhere".into();
    assert_eq!(moved.fingerprint(), cfg.fingerprint());
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(Config::from_toml("no_such_key = 1\n").is_err());
    assert!(Config::from_toml("fec_offset = 5\n").is_err());
    assert!(Config::from_toml("stages = 0\n").is_err());
}

#[test]
fn model_shape_mismatch_is_reported() {
    let cfg = small_config();
    let train = corpus::generate(&cfg.corpus, 1).unwrap();
    let (models, _) = pipeline::train_all(&cfg, &train).unwrap();
    let mut other = cfg.clone();
    other.hidden = 32;
    match pipeline::check_models(&other, &models) {
        Err(PipelineError::Mismatch(msg)) => assert!(msg.contains("H=16"), "{msg}"),
        r => panic!("expected mismatch, got {r:?}"),
    }
}

#[test]
fn missing_artifacts_name_the_step_to_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.out_dir = dir.path().to_path_buf();
    let err = pipeline::train_vq_files(&cfg).unwrap_err().to_string();
    assert!(err.contains("gen-data"), "{err}");
}
