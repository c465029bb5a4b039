use hornn_core::cells::{CellWeights, ElmanWeights};
use hornn_core::gradlab::{decay_compare, lag_curve, probe_sequence, DecaySetup};
use hornn_core::{Activation, CellConfig, CellKind, CellParams, Matrix};
use proptest::prelude::*;

fn elman_mut(p: &mut CellParams) -> &mut ElmanWeights {
    match &mut p.weights {
        CellWeights::Elman(e) => e,
        _ => panic!("not an elman cell"),
    }
}

fn u1(p: &CellParams) -> &Matrix {
    match &p.weights {
        CellWeights::Elman(e) => &e.u1,
        _ => panic!("not an elman cell"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sigmoid_rnn_curve_obeys_the_step_bound(seed in any::<u64>(), scale in 0.05f64..2.0, dh in 2usize..10) {
        let p = CellParams::init(CellConfig::new(CellKind::Rnn, 3, dh), seed, scale).unwrap();
        let curve = lag_curve(&p, &probe_sequence(3, 30, seed), 19).unwrap();
        let factor = 0.25 * u1(&p).spectral_norm();
        for k in 0..19 {
            prop_assert!(curve.g[k + 1] <= factor * curve.g[k] + 1e-12, "k={k}");
        }
    }

    #[test]
    fn lag_curve_leaves_parameters_untouched(seed in any::<u64>(), k in 0usize..8) {
        let kind = CellKind::ALL[k];
        let cfg = if kind.is_projected() { CellConfig::projected(kind, 3, 4, 2) } else { CellConfig::new(kind, 3, 4) };
        let p = CellParams::init(cfg, seed, 0.5).unwrap();
        let before = p.clone();
        let curve = lag_curve(&p, &probe_sequence(3, 12, seed), 6).unwrap();
        prop_assert_eq!(p, before);
        prop_assert_eq!(curve.g.len(), 7);
        prop_assert!(curve.g[0] > 0.0);
    }
}

#[test]
fn zero_high_order_weight_gives_the_rnn_curve() {
    // The ReLU-kind HORNN has no shortcut, so zeroing U_n leaves the RNN.
    for seed in 0..3 {
        let cfg = CellConfig::new(CellKind::HornnRelu, 3, 5)
            .with_lags(2, 1)
            .with_activation(Activation::Sigmoid);
        let mut p = CellParams::init(cfg, seed, 0.8).unwrap();
        let e = elman_mut(&mut p);
        e.un = Some(Matrix::zeros(5, 5));
        let mut rnn = CellParams::zeros(CellConfig::new(CellKind::Rnn, 3, 5)).unwrap();
        let (src, dst) = (e.clone(), elman_mut(&mut rnn));
        dst.w = src.w;
        dst.u1 = src.u1;
        dst.b = src.b;
        let probe = probe_sequence(3, 25, seed);
        let a = lag_curve(&p, &probe, 15).unwrap();
        let b = lag_curve(&rnn, &probe, 15).unwrap();
        assert_eq!(a.g, b.g);
    }
}

#[test]
fn lag_two_only_path_reaches_even_lags() {
    let cfg = CellConfig::new(CellKind::HornnRelu, 2, 4)
        .with_lags(2, 1)
        .with_activation(Activation::Sigmoid);
    let mut p = CellParams::init(cfg, 3, 1.0).unwrap();
    elman_mut(&mut p).u1 = Matrix::zeros(4, 4);
    let curve = lag_curve(&p, &probe_sequence(2, 30, 3), 12).unwrap();
    for (k, g) in curve.g.iter().enumerate() {
        if k % 2 == 1 {
            assert_eq!(*g, 0.0, "k={k}");
        } else {
            assert!(*g > 0.0, "k={k}");
        }
    }
}

#[test]
fn identical_configs_have_equal_medians() {
    let c = CellConfig::new(CellKind::HornnSigmoid, 4, 6);
    let cmp = decay_compare(&[c, c], &[1, 2, 3], DecaySetup::default()).unwrap();
    assert_eq!(cmp.entries[0].median_rate, cmp.entries[1].median_rate);
    assert_eq!(cmp.decays_slower(0, 1), Some(false));
    assert_eq!(cmp.decays_no_faster(0, 1), Some(true));
}

#[test]
fn compare_rejects_lag_beyond_probe() {
    let c = CellConfig::new(CellKind::Rnn, 2, 3);
    let setup = DecaySetup {
        steps: 10,
        max_lag: 10,
        ..Default::default()
    };
    assert!(decay_compare(&[c], &[1, 2, 3], setup).unwrap_err().is_config());
}
