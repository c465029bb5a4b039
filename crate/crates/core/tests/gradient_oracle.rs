use hornn_core::engine::{bptt_backward, bptt_backward_with, BackwardOptions, GradientSet};
use hornn_core::gradlab::{finite_diff_check, probe_sequence, GradCheckOptions};
use hornn_core::{Activation, CellConfig, CellKind, Model};

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(l: &[f64]) -> Vec<f64> {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn config(kind: CellKind, act: Option<Activation>) -> CellConfig {
    let c = if kind.is_projected() {
        CellConfig::projected(kind, 3, 4, 2)
    } else {
        CellConfig::new(kind, 3, 4)
    };
    act.map_or(c, |a| c.with_activation(a))
}

fn get(model: &Model, name: &str) -> Vec<f64> {
    model
        .tensors()
        .into_iter()
        .find(|t| t.qualified_name() == name)
        .unwrap_or_else(|| panic!("no tensor {name}"))
        .view
        .data
        .to_vec()
}

/// Scalar head: returns (direct ∂F/∂h, head grads [vh, bh, wy0, wy1, by0, by1]).
fn scalar_head(m: &Model, h: f64, y: usize) -> (f64, [f64; 6]) {
    let (vh, bh) = (get(m, "head.W_h")[0], get(m, "head.b_h")[0]);
    let (wy, by) = (get(m, "head.W_y"), get(m, "head.b_y"));
    let z = sig(vh * h + bh);
    let mut dl = softmax(&[wy[0] * z + by[0], wy[1] * z + by[1]]);
    dl[y] -= 1.0;
    let dz = wy[0] * dl[0] + wy[1] * dl[1];
    let dq = dz * z * (1.0 - z);
    (vh * dq, [dq * h, dq, dl[0] * z, dl[1] * z, dl[0], dl[1]])
}

#[test]
fn finite_differences_agree_for_every_kind() {
    let mut worst: f64 = 0.0;
    for kind in CellKind::ALL {
        for seed in 0..3 {
            let r = finite_diff_check(config(kind, None), &GradCheckOptions { seed, ..Default::default() }).unwrap();
            worst = worst.max(r.max_entry_rel_err);
            assert!(r.max_rel_err < 1e-6, "{kind} seed {seed}: {:?}", r.tensors);
        }
    }
    eprintln!("largest single-entry relative error {worst:e}");
}

#[test]
fn finite_differences_agree_with_trainable_amplitudes() {
    for kind in [CellKind::Rnn, CellKind::HornnSigmoid, CellKind::HornnpSigmoid, CellKind::HornnRelu] {
        let r = finite_diff_check(config(kind, Some(Activation::PSigmoid)), &GradCheckOptions::default()).unwrap();
        assert!(r.tensors.iter().any(|t| t.name.ends_with("beta")));
        assert!(r.max_rel_err < 1e-6, "{kind}: {:?}", r.tensors);
    }
}

#[test]
fn scalar_rnn_matches_hand_derivation() {
    let cfg = CellConfig::new(CellKind::Rnn, 1, 1);
    let m = Model::init(&[cfg], 2, 7, 0.9).unwrap();
    let (w, u, b) = (get(&m, "layer0.W")[0], get(&m, "layer0.U")[0], get(&m, "layer0.b")[0]);
    let x = [0.7, -1.3];
    let y = [1usize, 0];

    let h0 = sig(w * x[0] + b);
    let h1 = sig(w * x[1] + u * h0 + b);
    let (e0, g0) = scalar_head(&m, h0, y[0]);
    let (e1, g1) = scalar_head(&m, h1, y[1]);
    let da1 = e1 * h1 * (1.0 - h1);
    let da0 = (e0 + u * da1) * h0 * (1.0 - h0);
    let want = [
        ("layer0.W", da0 * x[0] + da1 * x[1]),
        ("layer0.U", da1 * h0),
        ("layer0.b", da0 + da1),
    ];

    let frames = vec![vec![x[0]], vec![x[1]]];
    let states = m.forward(&frames).unwrap();
    let g = bptt_backward(&m, &states, &[Some(y[0]), Some(y[1])]).unwrap().grads.as_model();
    for (name, v) in want {
        assert!((get(&g, name)[0] - v).abs() < 1e-12, "{name}");
    }
    let head = ["head.W_h", "head.b_h", "head.W_y", "head.b_y"];
    let got: Vec<f64> = head.iter().flat_map(|n| get(&g, n)).collect();
    for i in 0..6 {
        assert!((got[i] - (g0[i] + g1[i])).abs() < 1e-12, "head entry {i}");
    }
}

#[test]
fn lagged_gradient_is_the_sum_of_both_paths() {
    // Scalar high-order net with n = 2 and no shortcut; no target at t = 0
    // so ∂F/∂h_0 is exactly the two recurrent paths.
    let cfg = CellConfig::new(CellKind::HornnRelu, 1, 1)
        .with_lags(2, 1)
        .with_activation(Activation::Sigmoid);
    let m = Model::init(&[cfg], 2, 3, 0.9).unwrap();
    let (w, u1, un, b) = (
        get(&m, "layer0.W")[0],
        get(&m, "layer0.U_1")[0],
        get(&m, "layer0.U_n")[0],
        get(&m, "layer0.b")[0],
    );
    let x = [0.4, -0.9, 1.1, 0.3];
    let y = [None, Some(1), Some(0), Some(1)];
    let mut h = [0.0; 4];
    for t in 0..4 {
        let prev = if t >= 1 { h[t - 1] } else { 0.0 };
        let lag = if t >= 2 { h[t - 2] } else { 0.0 };
        h[t] = sig(w * x[t] + u1 * prev + un * lag + b);
    }
    let e = |t: usize| y[t].map_or(0.0, |c| scalar_head(&m, h[t], c).0);
    let d = |t: usize| h[t] * (1.0 - h[t]);
    let delta3 = e(3);
    let delta2 = e(2) + u1 * d(3) * delta3;
    let delta1 = e(1) + u1 * d(2) * delta2 + un * d(3) * delta3;
    let through_next = u1 * d(1) * delta1;
    let through_lag = un * d(2) * delta2;

    let frames: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
    let states = m.forward(&frames).unwrap();
    let back = bptt_backward(&m, &states, &y).unwrap();
    let got = back.hidden[0][0][0];
    assert!((got - (through_next + through_lag)).abs() < 1e-12);
    assert!(through_next.abs() > 1e-6 && through_lag.abs() > 1e-6);
}

#[test]
fn sharing_normalization_is_the_per_step_mean() {
    for kind in CellKind::ALL {
        let m = Model::init(&[config(kind, None)], 3, 5, 0.3).unwrap();
        let frames = probe_sequence(3, 20, 5);
        let targets: Vec<Option<usize>> = (0..20).map(|t| Some(t % 3)).collect();
        let states = m.forward(&frames).unwrap();
        let back = bptt_backward_with(&m, &states, &targets, BackwardOptions { record_steps: true }).unwrap();
        let steps = &back.steps.as_ref().unwrap()[0];
        assert_eq!(steps.len(), 20);
        let mut sum = m.layers[0].zeros_like();
        for s in steps {
            for (a, b) in sum.tensors_mut().into_iter().zip(s.tensors()) {
                a.data.iter_mut().zip(b.data).for_each(|(x, y)| *x += y);
            }
        }
        for t in sum.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x /= 20.0);
        }
        let normalized = back.grads.clone().normalized();
        assert_eq!(normalized.layers[0], sum, "{kind}");
        assert_eq!(normalized.head, back.grads.head);
    }
}

#[test]
fn forced_correct_predictions_give_zero_gradient() {
    let mut m = Model::init(&[config(CellKind::HornnSigmoid, None)], 3, 1, 0.3).unwrap();
    m.head.out_w.as_mut_slice().fill(0.0);
    m.head.out_b.as_mut_slice().copy_from_slice(&[0.0, 1e3, 0.0]);
    let frames = probe_sequence(3, 8, 1);
    let states = m.forward(&frames).unwrap();
    let back = bptt_backward(&m, &states, &[Some(1); 8]).unwrap();
    assert!(back.grads.flatten().iter().all(|&g| g == 0.0));
    assert_eq!(back.loss, 0.0);
    assert_eq!(back.correct, 8);
}

#[test]
fn tiny_step_along_negative_gradient_lowers_loss() {
    for kind in CellKind::ALL {
        let m = Model::init(&[config(kind, None)], 3, 9, 0.3).unwrap();
        let frames = probe_sequence(3, 10, 9);
        let targets: Vec<Option<usize>> = (0..10).map(|t| Some((t * 7) % 3)).collect();
        let states = m.forward(&frames).unwrap();
        let back = bptt_backward(&m, &states, &targets).unwrap();
        let lr = 1e-8;
        let mut stepped = m.clone();
        let mut step = GradientSet::zeros_for(&m);
        step.accumulate(&back.grads);
        let mut delta = step.as_model();
        for t in delta.tensors_mut() {
            t.view.data.iter_mut().for_each(|g| *g *= -lr);
        }
        stepped.add_assign(&delta);
        let after = bptt_backward(&stepped, &stepped.forward(&frames).unwrap(), &targets).unwrap().loss;
        let g2: f64 = back.grads.flatten().iter().map(|g| g * g).sum();
        assert!(after < back.loss, "{kind}");
        assert!((after - (back.loss - lr * g2)).abs() < 1e-10, "{kind}");
    }
}
