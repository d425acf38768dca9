use super::*;
use crate::models::{Mode, NdsConfig, Standardization};
use crate::systems::{generate_dataset, SystemKind, SystemSpec};

#[test]
fn loss_examples() {
    let a = vec![vec![0.5, 1.0, -2.0]; 16];
    assert_eq!(rollout_loss(&a, &a, &[1.0; 3]).unwrap(), 0.0);
    let ones = vec![vec![1.0; 3]; 16];
    let zeros = vec![vec![0.0; 3]; 16];
    assert_eq!(rollout_loss(&ones, &zeros, &[1.0; 3]).unwrap(), 48.0);
    assert!(rollout_loss(&ones[..15], &zeros, &[1.0; 3]).is_err());
    assert!(rollout_loss(&ones, &zeros, &[1.0; 2]).is_err());
}

#[test]
fn loss_gradient_is_twice_the_error() {
    let pred: Vec<Vec<f64>> = (0..16).map(|k| vec![k as f64 * 0.1, 1.0 - k as f64]).collect();
    let target: Vec<Vec<f64>> = (0..16).map(|k| vec![0.3, k as f64 * 0.2]).collect();
    let mut tape = Tape::new(&[]);
    let vars: Vec<Var> = pred.iter().map(|p| tape.input(p)).collect();
    let l = rollout_loss_tape(&mut tape, &vars, &target, &[1.0, 1.0]);
    let plain = rollout_loss(&pred, &target, &[1.0, 1.0]).unwrap();
    assert!((tape.scalar(l) - plain).abs() < 1e-12 * plain);
    let adj = tape.backward(l, &[1.0]).unwrap();
    for (k, v) in vars.iter().enumerate() {
        for i in 0..2 {
            let analytic = 2.0 * (pred[k][i] - target[k][i]);
            let mut p = pred.clone();
            p[k][i] += 1e-6;
            let mut m = pred.clone();
            m[k][i] -= 1e-6;
            let fd = (rollout_loss(&p, &target, &[1.0, 1.0]).unwrap() - rollout_loss(&m, &target, &[1.0, 1.0]).unwrap()) / 2e-6;
            assert!((adj.wrt(*v)[i] - analytic).abs() < 1e-12);
            assert!((fd - analytic).abs() < 1e-6);
        }
    }
}

fn setup(mode: Mode, n: usize) -> (NdsModel, Vec<Window>, Vec<Window>, Vec<f64>) {
    let spec = SystemSpec::new(SystemKind::Ballistic);
    let trajs = generate_dataset(&spec, 8, 0, n, 64, 0.0).unwrap();
    let (tr, va) = trajs.split_at(n - 2);
    let std = Standardization::fit(tr);
    let weights: Vec<f64> = std.state_scale.iter().map(|s| 1.0 / s).collect();
    let model = NdsModel::new(NdsConfig::new(mode, &spec), std, 1).unwrap();
    (model, windows_of(tr, WINDOW_STRIDE), windows_of(va, WINDOW_STRIDE), weights)
}

#[test]
fn windows_are_contiguous() {
    let spec = SystemSpec::new(SystemKind::Cartpole);
    let trajs = generate_dataset(&spec, 2, 0, 2, 100, 0.0).unwrap();
    for stride in [1, 7, 16] {
        let ws = windows(&trajs[0], 32, 16, stride);
        assert_eq!(ws.len(), (100 - 48) / stride + 1);
        for w in &ws {
            assert_eq!(w.times, trajs[0].times[w.start..w.start + 48]);
            assert_eq!(w.states, trajs[0].states[w.start..w.start + 48]);
            assert_eq!(w.targets().len(), 16);
            assert_eq!(w.history_states().len(), 32);
        }
    }
    assert!(windows(&trajs[0], 90, 16, 1).is_empty());
}

#[test]
fn zero_epochs_returns_initial_model() {
    let (mut m, tr, va, w) = setup(Mode::Full, 6);
    let before = m.params.clone();
    let cfg = TrainConfig {
        max_epochs: 0,
        ..TrainConfig::default()
    };
    let h = train(&mut m, &tr, &va, &w, &cfg, &Sequential).unwrap();
    assert_eq!(m.params, before);
    assert_eq!(h.epochs.len(), 1);
}

#[test]
fn leakage_is_rejected() {
    let (mut m, tr, _, w) = setup(Mode::Nds0, 6);
    let err = train(&mut m, &tr, &tr[..1], &w, &TrainConfig::default(), &Sequential);
    assert!(matches!(err, Err(TrainError::Leakage(_))));
}

#[test]
fn training_is_deterministic_and_keeps_best() {
    let cfg = TrainConfig {
        max_epochs: 3,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let (mut a, tr, va, w) = setup(Mode::Nds0, 10);
    let (mut b, ..) = setup(Mode::Nds0, 10);
    let ha = train(&mut a, &tr, &va, &w, &cfg, &Sequential).unwrap();
    let hb = train(&mut b, &tr, &va, &w, &cfg, &Sequential).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.params, b.params);
    let best = ha.best_val_loss();
    assert!(ha.epochs.iter().all(|e| best <= e.val_loss));
    let final_eval = evaluate(&a, &va, &w, &Sequential);
    assert_eq!(final_eval.rollout_l2, best);
    assert!(best < ha.epochs[0].val_loss);
}

#[test]
fn fractions_and_normalization() {
    let items: Vec<usize> = (0..1000).collect();
    assert_eq!(take_fraction(&items, 1.0), items);
    assert_eq!(take_fraction(&items, 0.25).len(), 250);
    assert_eq!(take_fraction(&items, 0.01).len(), 10);
    assert_eq!(take_fraction(&items[..10], 0.01).len(), 1);
    let n = normalize_by_min(&[3.0, 1.5, 6.0]);
    assert_eq!(n, vec![2.0, 1.0, 4.0]);
}
