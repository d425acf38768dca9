use nds_core::baselines::{gbo_predict, sparse_fit, GboConfig, SparseConfig};
use nds_core::control::{collect_dataset, evaluate_control, Controller, MpcConfig};
use nds_core::models::{Mode, NdsConfig, NdsModel, Standardization};
use nds_core::systems::{generate_dataset, trajectory_rng, SystemKind, SystemSpec};
use nds_core::training::{evaluate, rollout_loss, train, windows_of, Sequential, TrainConfig, WINDOW_STRIDE};

#[test]
fn ballistic_training_improves_every_model() {
    let spec = SystemSpec::new(SystemKind::Ballistic);
    let data = generate_dataset(&spec, 0, 0, 120, 48, 0.0).unwrap();
    let (tr, rest) = data.split_at(80);
    let (va, te) = rest.split_at(20);
    let std = Standardization::fit(tr);
    let weights: Vec<f64> = std.state_scale.iter().map(|s| 1.0 / s).collect();
    let (trw, vaw, tew) = (windows_of(tr, WINDOW_STRIDE), windows_of(va, WINDOW_STRIDE), windows_of(te, WINDOW_STRIDE));
    let cfg = TrainConfig {
        max_epochs: 4,
        batch_size: 16,
        ..TrainConfig::default()
    };
    for mode in [Mode::Full, Mode::Nds0, Mode::Node, Mode::FcDirect] {
        let mut model = NdsModel::new(NdsConfig::new(mode, &spec), std.clone(), 0).unwrap();
        let before = evaluate(&model, &tew, &weights, &Sequential);
        let history = train(&mut model, &trw, &vaw, &weights, &cfg, &Sequential).unwrap();
        let after = evaluate(&model, &tew, &weights, &Sequential);
        assert!(history.best_epoch > 0, "{mode:?} never improved");
        assert!(after.rollout_l2 < before.rollout_l2, "{mode:?}: {} -> {}", before.rollout_l2, after.rollout_l2);
        assert_eq!(after.param_l2.is_some(), mode.estimates_params());
    }
}

#[test]
fn gray_box_fit_beats_untrained_models_on_clean_data() {
    let spec = SystemSpec::new(SystemKind::Ballistic);
    let data = generate_dataset(&spec, 4, 0, 6, 48, 0.0).unwrap();
    let weights: Vec<f64> = Standardization::fit(&data).state_scale.iter().map(|s| 1.0 / s).collect();
    let model = NdsModel::new(NdsConfig::new(Mode::Nds0, &spec), Standardization::fit(&data), 0).unwrap();
    for (i, w) in windows_of(&data, WINDOW_STRIDE).iter().enumerate() {
        let (pred, _) = gbo_predict(&spec, w, &GboConfig::default(), &mut trajectory_rng(4, i as u64)).unwrap();
        let gbo = rollout_loss(&pred, w.targets(), &weights).unwrap();
        let untrained = rollout_loss(&model.rollout(w).unwrap(), w.targets(), &weights).unwrap();
        assert!(gbo < 1e-6 * untrained.max(1.0), "{gbo} vs {untrained}");
    }
}

#[test]
fn sparse_model_controls_the_cartpole() {
    let data = collect_dataset(2, 0, 60, 48);
    let model = sparse_fit(&data, &SparseConfig::default()).unwrap();
    let cfg = MpcConfig {
        n_samples: 64,
        horizon: 6,
        warmup: 8,
    };
    let (random, _) = evaluate_control(Controller::Random, 6, 3, &cfg, &Sequential).unwrap();
    let (sr, logs) = evaluate_control(Controller::Model(&model), 6, 3, &cfg, &Sequential).unwrap();
    assert_eq!(logs.len(), 6);
    assert!(sr.mean > random.mean, "{} vs {}", sr.mean, random.mean);
}
