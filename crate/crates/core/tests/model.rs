mod common;

use examguard::encoder::FEATURE_LEN;
use examguard::model::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, train, BaselineConfig, BaselineKind,
    CheckpointError, DenseLstmConfig, Model, ModelConfig, ModelError, TrainConfig, CHECKPOINT_MAGIC,
};
use examguard::numerics::{Coords, Prng, Tensor};

fn batch(rows: usize, seed: u64) -> Tensor {
    let mut rng = Prng::new(seed);
    let data = (0..rows * FEATURE_LEN)
        .map(|_| if rng.bernoulli(0.5) { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(vec![rows, FEATURE_LEN], data).unwrap()
}

fn small(dense: bool) -> DenseLstmConfig {
    DenseLstmConfig {
        stem_channels: 3,
        growth: 2,
        final_hidden: 4,
        dense,
        seed: 3,
        ..DenseLstmConfig::default()
    }
}

fn lstm_params(c_in: usize, h: usize) -> usize {
    c_in * 4 * h + h * 4 * h + 4 * h
}

/// Scalar count from the layer recipe, independent of the builder.
fn expected_census(c: &DenseLstmConfig) -> usize {
    let g = c.growth;
    let layer = |c_in: usize| lstm_params(c_in, g) + g * g * 2 + g;
    let mut total = c.stem_channels * 3 + c.stem_channels;
    let mut width = c.stem_channels;
    for (block, &layers) in c.block_layers.iter().enumerate() {
        for i in 0..layers {
            let c_in = if c.dense {
                width + i * g
            } else if i == 0 {
                width
            } else {
                g
            };
            total += layer(c_in);
        }
        width = if c.dense { width + layers * g } else { g };
        if block == 0 {
            let out = (width as f64 * c.compression).floor() as usize;
            total += width * out + out;
            width = out;
        }
    }
    let (_, l2) = c.lengths();
    total + lstm_params(width, c.final_hidden) + l2 * c.final_hidden * c.classes + c.classes
}

#[test]
fn default_shapes() {
    let c = DenseLstmConfig::default();
    assert_eq!(c.lengths(), (12, 6));
    assert_eq!(c.layer_input_channels(64, 3), 256);
    assert_eq!(c.block_output_channels(64, 4), 320);
    assert_eq!(c.transition_channels(), 160);
    assert_eq!(c.block_output_channels(160, 8), 672);
    assert_eq!(c.flatten_dim(), 3072);
}

#[test]
fn census_matches_the_recipe() {
    let model = Model::build(ModelConfig::DenseLstm(DenseLstmConfig::default())).unwrap();
    assert_eq!(model.params().census(), 3_733_666);
    assert_eq!(model.params().census(), expected_census(&DenseLstmConfig::default()));
    assert_eq!(model.params().len(), 69);
    let ablated = DenseLstmConfig {
        dense: false,
        ..DenseLstmConfig::default()
    };
    let model = Model::build(ModelConfig::DenseLstm(ablated.clone())).unwrap();
    assert_eq!(model.params().census(), expected_census(&ablated));
    for dense in [true, false] {
        let model = Model::build(ModelConfig::DenseLstm(small(dense))).unwrap();
        assert_eq!(model.params().census(), expected_census(&small(dense)));
    }
}

#[test]
fn parameter_names_are_unique() {
    for name in ["denselstm", "dnn", "rnn", "lstm"] {
        let model = Model::build(ModelConfig::from_name(name, 0).unwrap()).unwrap();
        let mut names: Vec<&str> = model.params().iter().map(|p| p.name.as_str()).collect();
        let n = names.len();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), n, "{name}");
    }
}

#[test]
fn initialization() {
    let model = Model::build(ModelConfig::from_name("denselstm", 0).unwrap()).unwrap();
    let bias = model
        .params()
        .by_name("block1.layer0.lstm.bias")
        .expect("named LSTM bias");
    let h = 64;
    // Gate order i, f, g, o: only the forget slice starts at one.
    assert!(bias.value.data()[h..2 * h].iter().all(|&b| b == 1.0));
    assert!(bias.value.data()[..h]
        .iter()
        .chain(&bias.value.data()[2 * h..])
        .all(|&b| b == 0.0));
    let w = model.params().by_name("head.w").expect("named head weight");
    let limit = (6.0 / (3072.0 + 2.0f64)).sqrt();
    assert!(w.value.data().iter().all(|v| v.abs() <= limit));
}

#[test]
fn outputs_are_distributions_and_batch_independent() {
    for name in ["denselstm", "dnn", "rnn", "lstm"] {
        let model = Model::build(ModelConfig::from_name(name, 1).unwrap()).unwrap();
        let x = batch(5, 2);
        let p = model.predict_proba(&x).unwrap();
        assert_eq!(p.shape(), &[5, 2]);
        for r in 0..5 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let single = Tensor::new(vec![1, FEATURE_LEN], x.row(r).to_vec()).unwrap();
            let q = model.predict_proba(&single).unwrap();
            for (a, b) in p.row(r).iter().zip(q.row(0)) {
                assert!((a - b).abs() < 1e-12, "{name}");
            }
        }
    }
}

#[test]
fn dropout_only_in_training() {
    let model = Model::build(ModelConfig::from_name("denselstm", 1).unwrap()).unwrap();
    let x = batch(3, 4);
    let a = model.forward(&x, None).unwrap();
    assert_eq!(a, model.forward(&x, None).unwrap());
    let mut rng = Prng::new(1);
    let b = model.forward(&x, Some(&mut rng)).unwrap();
    assert!(a.max_abs_diff(&b) > 0.0);
}

#[test]
fn seeds_control_initialization() {
    let build = |s| Model::build(ModelConfig::from_name("rnn", s).unwrap()).unwrap();
    assert_eq!(build(3).params().values(), build(3).params().values());
    assert_ne!(build(3).params().values(), build(4).params().values());
}

#[test]
fn bad_inputs_are_reported() {
    let model = Model::build(ModelConfig::from_name("dnn", 0).unwrap()).unwrap();
    assert!(matches!(
        model.forward(&Tensor::zeros(&[2, 22]), None),
        Err(ModelError::Input(_))
    ));
    assert!(matches!(
        model.loss_and_grad(&batch(2, 0), &[0], None),
        Err(ModelError::Input(_))
    ));
    assert!(matches!(
        model.loss_and_grad(&batch(2, 0), &[0, 2], None),
        Err(ModelError::Input(_))
    ));
    let bad = DenseLstmConfig {
        block_layers: [6, 12],
        ..DenseLstmConfig::default()
    };
    assert!(matches!(
        Model::build(ModelConfig::DenseLstm(bad)),
        Err(ModelError::Config(_))
    ));
    assert!(serde_json::from_str::<DenseLstmConfig>(r#"{"growth": 32, "width": 3}"#).is_err());
    let cfg: DenseLstmConfig = serde_json::from_str(r#"{"growth": 32}"#).unwrap();
    assert_eq!((cfg.growth, cfg.final_hidden), (32, 512));
}

#[test]
fn full_gradient_check_on_small_networks() {
    let x = batch(2, 5);
    let configs = [
        ModelConfig::DenseLstm(small(true)),
        ModelConfig::DenseLstm(small(false)),
        ModelConfig::Baseline(BaselineConfig {
            hidden: 5,
            ..BaselineConfig::new(BaselineKind::Dnn, 2, 1)
        }),
        ModelConfig::Baseline(BaselineConfig {
            hidden: 4,
            ..BaselineConfig::new(BaselineKind::Rnn, 3, 1)
        }),
        ModelConfig::Baseline(BaselineConfig {
            hidden: 3,
            ..BaselineConfig::new(BaselineKind::Lstm, 2, 1)
        }),
    ];
    for cfg in configs {
        let name = cfg.name();
        let chain = matches!(&cfg, ModelConfig::DenseLstm(d) if !d.dense);
        let mut model = Model::build(cfg).unwrap();
        if chain {
            // Without shortcuts twelve 2-channel ReLU layers die at init and sit
            // exactly on their kinks. Positive conv biases move to a live point.
            for p in model.params_mut().as_mut_slice() {
                if p.name.ends_with("conv.b") {
                    p.value.data_mut().fill(0.1);
                }
            }
            let loss = model.loss_and_grad(&x, &[1, 0], None).unwrap().0;
            assert!((loss - std::f64::consts::LN_2).abs() > 1e-5, "collapsed: {loss}");
        }
        let report = model.gradient_check(&x, &[1, 0], Coords::All, 1e-6).unwrap();
        if !chain {
            assert!(report.passed(), "{name}: {:?}", report.failures().collect::<Vec<_>>());
            continue;
        }
        // Deep in the plain chain the gradients shrink to ~1e-9, where differencing
        // a loss near ln 2 resolves only a few digits. Those tensors must agree to
        // within the rounding bound; the output side is held to 1e-6.
        for e in report.failures() {
            assert!(
                !e.name.starts_with("final.") && !e.name.starts_with("head."),
                "{name}: {e:?}"
            );
            assert!(e.abs_error() <= e.fd_noise, "{name}: {e:?}");
        }
    }
}

#[test]
fn checkpoint_round_trip_and_errors() {
    let data = common::synth(40, 0.4, 1);
    let model = Model::build(ModelConfig::DenseLstm(small(true))).unwrap();
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 2,
        ..TrainConfig::default()
    };
    let trainer = train(model, &data, Some(&data), cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ptbm");
    save_checkpoint(&path, &trainer.model, Some(&trainer.state)).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.model.params().values(), trainer.model.params().values());
    assert_eq!(ck.train.as_ref().unwrap(), &trainer.state);
    assert_eq!(
        ck.best_model().params().values(),
        trainer.best_model().params().values()
    );
    for (a, b) in ck.model.params().iter().zip(trainer.model.params().iter()) {
        assert_eq!((&a.m, &a.v), (&b.m, &b.v), "{}", a.name);
    }

    let bytes = checkpoint_to_bytes(&trainer.model, None);
    assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
    assert!(checkpoint_from_bytes(&bytes).unwrap().train.is_none());
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(matches!(checkpoint_from_bytes(&wrong), Err(CheckpointError::BadMagic)));
    let mut wrong = bytes.clone();
    wrong[4] = 9;
    assert!(matches!(
        checkpoint_from_bytes(&wrong),
        Err(CheckpointError::Version(9))
    ));
    assert!(matches!(
        checkpoint_from_bytes(&bytes[..bytes.len() - 8]),
        Err(CheckpointError::Truncated(_))
    ));
    assert!(matches!(
        checkpoint_from_bytes(&bytes[..7]),
        Err(CheckpointError::Truncated(_))
    ));
    assert!(matches!(
        load_checkpoint(dir.path().join("absent")),
        Err(CheckpointError::Io { .. })
    ));
}

#[test]
fn training_keeps_the_best_validation_snapshot() {
    let data = common::synth(60, 0.4, 2);
    let model = Model::build(ModelConfig::from_name("dnn", 0).unwrap()).unwrap();
    let cfg = TrainConfig {
        lr: 1e-2,
        epochs: 6,
        ..TrainConfig::default()
    };
    let trainer = train(model, &data, Some(&data), cfg).unwrap();
    let best = trainer.state.best.as_ref().unwrap();
    let top = trainer
        .state
        .history
        .iter()
        .map(|e| e.val_accuracy.unwrap())
        .fold(0.0, f64::max);
    assert_eq!(best.val_accuracy, top);
    assert_eq!(trainer.state.history[best.epoch].val_accuracy, Some(top));
    assert_eq!(trainer.state.epochs_done(), 6);
}
