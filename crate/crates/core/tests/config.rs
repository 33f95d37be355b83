use mcthfr::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use mcthfr::config::RunConfig;
use mcthfr::datasim::{collate, generate_range};
use mcthfr::hfr::{HfrConfig, Metric};
use mcthfr::mct::{ModelConfig, Network, View};
use mcthfr::trainer::Strategy;
use mcthfr::Error;

const DOC: &str = r#"
[data]
seed = 3
redundancy = 0.25

[model]
d = 16
heads = 2
d_k = 8
layers = 1
max_lens = [32, 8, 10]

[train]
seed = 9
strategy = "one_to_one"
p_miss = 0.4

[train.hfr]
metric = "jsd"

[eval]
mask_seeds = [0, 1]
rates = [0.0, 0.5]
"#;

#[test]
fn document_overrides_defaults() {
    let cfg = RunConfig::parse(DOC).unwrap();
    assert_eq!(cfg.data.seed, 3);
    assert_eq!(cfg.data.redundancy, 0.25);
    assert_eq!(cfg.model.d, 16);
    assert_eq!(cfg.model.kernel_sizes, [3, 3, 1]);
    assert_eq!(cfg.train.strategy, Strategy::OneToOne);
    assert_eq!(cfg.train.hfr.metric, Metric::Jsd);
    assert_eq!(cfg.eval.mask_seeds, vec![0, 1]);
    assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn file_loading_and_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, DOC).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::parse(DOC).unwrap());
    assert!(matches!(RunConfig::load(dir.path().join("nope.toml")), Err(Error::Io { .. })));
}

#[test]
fn shape_disagreements_are_reported() {
    let doc = DOC.replace("redundancy = 0.25", "redundancy = 0.25\nclasses = 3\ndims = [6, 4, 9]");
    match RunConfig::parse(&doc) {
        Err(Error::Config(errs)) => {
            assert_eq!(errs.len(), 2, "{errs:?}");
            assert!(errs.iter().any(|e| e.contains("classes")));
            assert!(errs.iter().any(|e| e.contains("dims")));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn bad_enum_values_are_rejected() {
    let doc = DOC.replace("\"jsd\"", "\"l2\"");
    assert!(matches!(RunConfig::parse(&doc), Err(Error::Config(_))));
}

#[test]
fn benchmark_preset_is_valid() {
    let cfg = RunConfig::benchmark();
    assert!(cfg.validate().is_empty());
    assert_eq!(cfg.model, ModelConfig::benchmark());
    assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let cfg = ModelConfig { ffn_hidden: Some(12), classifier_layers: 2, gamma_e: false, ..ModelConfig::tiny() };
    let net = Network::<f32>::new(cfg.clone(), Some(HfrConfig { metric: Metric::Cosine, cmd_order: 3, decoder_blocks: 2 }), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mctp");
    save_checkpoint(&path, &net).unwrap();
    let back: Network<f32> = load_checkpoint(&path).unwrap();
    assert_eq!(back.cfg, net.cfg);
    assert_eq!(back.hfr_cfg, net.hfr_cfg);
    assert_eq!(back.store, net.store);
    assert_eq!(encode_checkpoint(&back), std::fs::read(&path).unwrap());
    let gen = mcthfr::datasim::GenConfig { classes: 3, dims: [3, 2, 4], ..Default::default() };
    let samples = generate_range(&gen, 0, 4).unwrap();
    let batch = collate(&samples.iter().collect::<Vec<_>>(), cfg.max_lens);
    assert_eq!(net.predict_proba(&batch, View::Complete).unwrap(), back.predict_proba(&batch, View::Complete).unwrap());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let net = Network::<f32>::new(ModelConfig::tiny(), None, 0).unwrap();
    let bytes = encode_checkpoint(&net);
    assert!(matches!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 3]), Err(Error::Format { .. } | Error::Truncated { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'Z';
    assert!(matches!(decode_checkpoint::<f32>(&bad), Err(Error::Format { offset: 0, .. })));
    let mut long = bytes;
    long.push(0);
    assert!(matches!(decode_checkpoint::<f32>(&long), Err(Error::Format { .. })));
}
