use hornn_core::data::{generate, SequenceBatch, TaskKind, TaskSpec};
use hornn_core::engine::{
    clip_and_update, evaluate, train_epoch, GradientSet, Model, Sampling, Schedule, TrainConfig, TrainingSet,
};
use hornn_core::{Activation, CellConfig, CellKind, Error, Matrix};
use proptest::prelude::*;

fn set(model: &mut Model, name: &str, values: &[f64]) {
    let mut ts = model.tensors_mut();
    let t = ts
        .iter_mut()
        .find(|t| format!("{}", t.layer.map_or("head".into(), |i| format!("layer{i}"))) + "." + t.view.name == name)
        .unwrap_or_else(|| panic!("no tensor {name}"));
    t.view.data.copy_from_slice(values);
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn zero_model_predicts_uniformly() {
    let m = Model::zeros(&[CellConfig::new(CellKind::Rnn, 2, 3)], 5).unwrap();
    let s = m.forward(&[vec![0.3, -1.0]]).unwrap();
    let p = hornn_core::engine::softmax(s.logits(0).unwrap());
    assert!(p.iter().all(|&v| v == 0.2));
}

#[test]
fn forward_is_deterministic() {
    let cfg = CellConfig::projected(CellKind::HornnpSigmoid, 3, 5, 2);
    let frames = hornn_core::gradlab::probe_sequence(3, 9, 4);
    let a = Model::init(&[cfg], 4, 11, 0.05).unwrap().forward(&frames).unwrap();
    let b = Model::init(&[cfg], 4, 11, 0.05).unwrap().forward(&frames).unwrap();
    for t in 0..9 {
        assert_eq!(a.logits(t), b.logits(t));
    }
}

#[test]
fn scalar_high_order_states_match_hand_unrolling() {
    let cfg = CellConfig::new(CellKind::HornnSigmoid, 1, 1).with_lags(2, 1);
    let mut m = Model::zeros(&[cfg], 2).unwrap();
    set(&mut m, "layer0.W", &[0.5]);
    set(&mut m, "layer0.U_1", &[-1.0]);
    set(&mut m, "layer0.U_n", &[2.0]);
    set(&mut m, "layer0.b", &[0.25]);
    let x = [1.0, -2.0, 0.5];
    let s = m.forward(&x.iter().map(|&v| vec![v]).collect::<Vec<_>>()).unwrap();
    // The unweighted shortcut adds h_{t-1} once more on top of U_1.
    let h0 = sig(0.5 * 1.0 + 0.25);
    let h1 = sig(0.5 * -2.0 - 1.0 * h0 + h0 + 0.25);
    let h2 = sig(0.5 * 0.5 - 1.0 * h1 + 2.0 * h0 + h1 + 0.25);
    for (t, want) in [h0, h1, h2].into_iter().enumerate() {
        assert!((s.layers[0].h(t)[0] - want).abs() < 1e-15);
    }
}

#[test]
fn unfold_window_must_cover_the_lag() {
    let m = Model::init(&[CellConfig::new(CellKind::HornnRelu, 2, 3)], 2, 0, 0.05).unwrap();
    let cfg = TrainConfig {
        unfold_steps: 3,
        ..Default::default()
    };
    assert!(cfg.validate_for(&m).unwrap_err().is_config());
    assert!(TrainConfig::default().validate_for(&m).is_ok());
}

fn tiny_model() -> Model {
    Model::zeros(&[CellConfig::new(CellKind::Rnn, 1, 1)], 2).unwrap()
}

fn grads_with(model: &Model, name: &str, v: f64) -> GradientSet {
    let mut g = GradientSet::zeros_for(model);
    let mut gm = g.as_model();
    let n = gm.tensors().iter().find(|t| t.qualified_name() == name).unwrap().view.data.len();
    set(&mut gm, name, &vec![v; n]);
    g.layers = gm.layers;
    g.head = gm.head;
    g
}

#[test]
fn update_is_clipped_at_threshold() {
    let mut m = tiny_model();
    let cfg = TrainConfig::default();
    let g = grads_with(&m, "layer0.W", -0.5);
    let clipped = clip_and_update(&mut m, &g, 1.0, &cfg, 800).unwrap();
    assert_eq!(clipped, 1);
    assert_eq!(m.layers[0].tensors()[0].data, &[0.32]);
    assert_eq!(cfg.clip_bound(400), 0.16);
}

#[test]
fn zero_gradient_leaves_parameters() {
    let mut m = Model::init(&[CellConfig::new(CellKind::Lstm, 2, 3)], 3, 1, 0.05).unwrap();
    let before = m.clone();
    let g = GradientSet::zeros_for(&m);
    clip_and_update(&mut m, &g, 0.1, &TrainConfig::default(), 800).unwrap();
    assert_eq!(m, before);
}

#[test]
fn non_finite_gradient_aborts_without_change() {
    let mut m = Model::init(&[CellConfig::new(CellKind::Rnn, 2, 3)], 3, 1, 0.05).unwrap();
    let before = m.clone();
    let g = grads_with(&m, "head.b_y", f64::NAN);
    let err = clip_and_update(&mut m, &g, 0.1, &TrainConfig::default(), 800).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)));
    assert_eq!(m, before);
}

#[test]
fn weight_decay_skips_biases_and_amplitudes() {
    let cfg = CellConfig::new(CellKind::Rnn, 1, 1).with_activation(Activation::PSigmoid);
    let mut m = Model::zeros(&[cfg], 2).unwrap();
    for t in m.tensors_mut() {
        t.view.data.fill(1.0);
    }
    let g = GradientSet::zeros_for(&m);
    let tc = TrainConfig {
        weight_decay: 0.5,
        ..Default::default()
    };
    clip_and_update(&mut m, &g, 0.1, &tc, 800).unwrap();
    for t in m.tensors() {
        let want = if t.view.role == hornn_core::Role::Weight { 0.95 } else { 1.0 };
        assert_eq!(t.view.data, &[want][..].repeat(t.view.data.len())[..], "{}", t.qualified_name());
    }
}

proptest! {
    #[test]
    fn clipping_keeps_update_sign(g in -100.0f64..100.0, lr in 0.0f64..1.0, frames in 1usize..2000) {
        let mut m = tiny_model();
        let grads = grads_with(&m, "layer0.U", g);
        clip_and_update(&mut m, &grads, lr, &TrainConfig::default(), frames).unwrap();
        let applied = m.layers[0].tensors()[1].data[0];
        let raw = -lr * g;
        prop_assert_eq!(applied.signum() == raw.signum() || applied == 0.0, true);
        prop_assert!(applied.abs() <= TrainConfig::default().clip_bound(frames));
    }
}

fn recall_set(lag: usize, count: usize, seed: u64) -> Vec<SequenceBatch> {
    generate(&TaskSpec::new(TaskKind::DelayedRecall { lag, classes: 3 }, 12, count, seed)).unwrap()
}

#[test]
fn zero_learning_rate_keeps_model_bitwise() {
    let data = TrainingSet::new(&recall_set(1, 4, 0), 2).unwrap();
    let mut m = Model::init(&[CellConfig::new(CellKind::HornnSigmoid, 3, 4)], 3, 2, 0.05).unwrap();
    let before = m.clone();
    let cfg = TrainConfig {
        minibatch_frames: 10,
        ..Default::default()
    };
    let stats = train_epoch(&mut m, &data, &cfg, &Schedule::new(0.0), 0).unwrap();
    assert_eq!(m, before);
    assert_eq!(stats.frames, 48);
    assert_eq!(stats.updates, 5);
    assert!(stats.cross_entropy > 0.0);
}

#[test]
fn single_sample_loss_goes_down() {
    let frames = Matrix::from_rows(&[vec![0.5]]).unwrap();
    let one = SequenceBatch::new(frames, vec![1], 2, "u", "s").unwrap();
    let data = TrainingSet::new(&[one], 0).unwrap();
    let mut m = Model::init(&[CellConfig::new(CellKind::Rnn, 1, 1)], 2, 3, 0.05).unwrap();
    let cfg = TrainConfig {
        target_delay: 0,
        ..Default::default()
    };
    let schedule = Schedule::new(0.5);
    let first = train_epoch(&mut m, &data, &cfg, &schedule, 0).unwrap().cross_entropy;
    for e in 1..200 {
        train_epoch(&mut m, &data, &cfg, &schedule, e).unwrap();
    }
    let last = evaluate(&m, &data, &cfg).unwrap().cross_entropy;
    assert!(last < first, "{last} >= {first}");
}

#[test]
fn epochs_are_reproducible() {
    let data = TrainingSet::new(&recall_set(2, 6, 5), 1).unwrap();
    let run = |sampling| {
        let mut m = Model::init(&[CellConfig::new(CellKind::HornnRelu, 3, 5)], 3, 4, 0.1).unwrap();
        let cfg = TrainConfig {
            minibatch_frames: 16,
            sampling,
            seed: 9,
            ..Default::default()
        };
        let s = Schedule::new(0.01);
        let stats: Vec<_> = (0..3).map(|e| train_epoch(&mut m, &data, &cfg, &s, e).unwrap()).collect();
        (stats, m)
    };
    for sampling in [Sampling::Frame, Sampling::Utterance] {
        let (a, ma) = run(sampling);
        let (b, mb) = run(sampling);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
    }
}

#[test]
fn utterance_sampling_needs_full_unfolding() {
    let data = TrainingSet::new(&recall_set(2, 2, 5), 0).unwrap();
    let mut m = Model::init(&[CellConfig::new(CellKind::Rnn, 3, 2)], 3, 4, 0.1).unwrap();
    let cfg = TrainConfig {
        unfold_steps: 11,
        sampling: Sampling::Utterance,
        ..Default::default()
    };
    let err = train_epoch(&mut m, &data, &cfg, &Schedule::new(0.1), 0).unwrap_err();
    assert!(err.is_config());
}

#[test]
fn mismatched_data_is_a_config_error() {
    let data = TrainingSet::new(&recall_set(2, 2, 5), 0).unwrap();
    let m = Model::init(&[CellConfig::new(CellKind::Rnn, 4, 2)], 3, 4, 0.1).unwrap();
    assert!(evaluate(&m, &data, &TrainConfig::default()).unwrap_err().is_config());
}

#[test]
fn unlabelled_frames_are_skipped() {
    let frames = Matrix::from_rows(&[vec![0.1], vec![0.2], vec![0.3]]).unwrap();
    let b = SequenceBatch::new(frames, vec![-1, 1, -1], 2, "u", "s").unwrap();
    let data = TrainingSet::new(&[b], 0).unwrap();
    assert_eq!(data.labelled_frames(), 1);
    let m = Model::init(&[CellConfig::new(CellKind::Rnn, 1, 2)], 2, 4, 0.1).unwrap();
    assert_eq!(evaluate(&m, &data, &TrainConfig::default()).unwrap().frames, 1);
}
