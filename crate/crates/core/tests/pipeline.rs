use spikenc::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, dataset_fingerprint};
use spikenc::dataio::{read_spikes, synth_dataset, write_spikes, SpikeMeta, SynthSpec};
use spikenc::decoders::decode;
use spikenc::encoders::encode;
use spikenc::evaluation::{encode_windows, evaluate_scheme, fold_split, standard_variants, EvalOptions};
use spikenc::metrics::{robustness_sweep, snr_db, NoiseMode};
use spikenc::snn::{accuracy, classify, train, CubaNetwork, NetworkConfig, TrainConfig};
use spikenc::{EncodingConfig, Rng, Scheme};

fn small_options() -> EvalOptions {
    EvalOptions {
        network: NetworkConfig { hidden: vec![16], ..Default::default() },
        train: TrainConfig { epochs: 5, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn robustness_at_zero_error_has_no_drop() {
    let ds = synth_dataset(&SynthSpec { per_class: 10, samples: 10, ..Default::default() });
    let cfg = EncodingConfig { n_bits: 6, ..EncodingConfig::new(Scheme::Binary) };
    let samples = encode_windows(&ds.windows, &cfg).unwrap();
    let net = CubaNetwork::new(samples[0].tensor.features(), 3, &NetworkConfig { hidden: vec![8], ..Default::default() }).unwrap();
    let rows = robustness_sweep(&net, &samples, &[0.0], NoiseMode::FlipBinary, 1).unwrap();
    assert_eq!(rows[0].accuracy_drop, 0.0);
    assert_eq!(rows[0].accuracy, accuracy(&net, &samples).unwrap());
}

#[test]
fn every_variant_round_trips_through_files_and_decoders() {
    let ds = synth_dataset(&SynthSpec { per_class: 1, samples: 12, ..Default::default() });
    let dir = tempfile::tempdir().unwrap();
    for mut cfg in standard_variants() {
        cfg.steps_per_sample = 20;
        let w = &ds.windows[0];
        let tensor = encode(&w.signal, &cfg, &mut Rng::new(3)).unwrap();
        let path = dir.path().join(format!("{}.spk", cfg.label()));
        let meta = SpikeMeta {
            config: cfg.clone(),
            window_steps: tensor.window_steps(),
            label: Some(w.label),
            label_name: None,
            fold: Some(w.fold),
        };
        write_spikes(&path, &tensor, Some(&meta)).unwrap();
        let (back, meta_back) = read_spikes(&path).unwrap();
        assert_eq!(back, tensor, "{}", cfg.label());
        assert_eq!(meta_back.unwrap(), meta);
        let initial: Vec<f64> = (0..w.signal.channels()).map(|c| w.signal.get(c, 0)).collect();
        let rebuilt = decode(&back, &cfg, &initial).unwrap();
        let snr = snr_db(&w.signal, &rebuilt).unwrap();
        assert!(snr > 5.0, "{} snr {snr}", cfg.label());
    }
}

#[test]
fn evaluate_scheme_fills_every_column() {
    let ds = synth_dataset(&SynthSpec { per_class: 10, samples: 10, ..Default::default() });
    let mut cfg = EncodingConfig::new(Scheme::DeltaMod);
    cfg.seed = 4;
    let row = evaluate_scheme(&ds, &cfg, &small_options()).unwrap();
    assert_eq!(row.scheme, "delta");
    assert_eq!(row.tensor_shape, [5, 7, 45]);
    assert!((row.time_step_ms - 10.0).abs() < 1e-12);
    assert!(row.snr_db.is_some());
    assert_eq!(row.robustness.len(), 3);
    assert_eq!(row.dynamic_energy_mj, "not measured");
}

#[test]
fn checkpoint_preserves_predictions() {
    let ds = synth_dataset(&SynthSpec { per_class: 6, samples: 10, ..Default::default() });
    let cfg = EncodingConfig { n_bits: 6, ..EncodingConfig::new(Scheme::Binary) };
    let (train_w, test_w) = fold_split(&ds, None).unwrap();
    let train_set = encode_windows(train_w, &cfg).unwrap();
    let test_set = encode_windows(test_w, &cfg).unwrap();
    let mut net = CubaNetwork::new(train_set[0].tensor.features(), 3, &NetworkConfig { hidden: vec![12], ..Default::default() }).unwrap();
    let tc = TrainConfig { epochs: 3, ..Default::default() };
    train(&mut net, &train_set, &test_set, &tc).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let meta = CheckpointMeta {
        train_config: tc,
        encoding: cfg,
        class_names: ds.class_names.clone(),
        dataset_fingerprint: dataset_fingerprint(&train_set),
        tool_version: "test".into(),
    };
    save_checkpoint(&path, &net, &meta).unwrap();
    let (loaded, meta_back) = load_checkpoint(&path).unwrap();
    assert_eq!(meta_back.unwrap(), meta);
    for s in &test_set {
        assert_eq!(classify(&net, &s.tensor).unwrap().class, classify(&loaded, &s.tensor).unwrap().class);
    }
}
