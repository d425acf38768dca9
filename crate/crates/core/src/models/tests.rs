use super::*;
use crate::systems::{generate_dataset, lorenz_rhs};
use crate::training::{windows_of, window_loss_grad, WINDOW_STRIDE};
use rand::Rng;

fn dataset(kind: SystemKind, count: usize) -> (SystemSpec, Vec<crate::systems::Trajectory>) {
    let spec = SystemSpec::new(kind);
    let trajs = generate_dataset(&spec, 21, 0, count, 48, 0.0).unwrap();
    (spec, trajs)
}

fn model(mode: Mode, kind: SystemKind, perturb: f64) -> (NdsModel, Vec<Window>) {
    let (spec, trajs) = dataset(kind, 3);
    let std = Standardization::fit(&trajs);
    let mut m = NdsModel::new(NdsConfig::new(mode, &spec), std, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for p in m.params.iter_mut() {
        *p += perturb * rng.gen_range(-1.0..1.0);
    }
    (m, windows_of(&trajs, WINDOW_STRIDE))
}

#[test]
fn zero_final_encoder_layer_gives_midpoints() {
    for kind in SystemKind::ALL {
        let (mut m, w) = model(Mode::Nds0, kind, 0.0);
        m.history_net().unwrap().clone().zero_last(&mut m.params);
        let (phi, bh) = m.encode_history(w[0].history_states(), &w[0].controls).unwrap();
        assert!(bh.is_empty());
        for (p, r) in phi.iter().zip(&m.config.param_ranges) {
            assert!((p - r.mid()).abs() <= 1e-12 * r.mid().abs().max(1.0));
        }
    }
}

#[test]
fn squashed_parameters_stay_inside_ranges() {
    let (m, _) = model(Mode::Full, SystemKind::Lorenz, 0.0);
    for raw in [-1e3, -30.0, -1.0, 0.0, 2.0, 30.0] {
        let phi = m.squash_values(&[raw; 3]);
        for (p, r) in phi.iter().zip(&m.config.param_ranges) {
            assert!(*p >= r.lo && *p <= r.hi);
        }
    }
    let mut prev = m.squash_values(&[-5.0; 3]);
    for k in -49..50 {
        let cur = m.squash_values(&[k as f64 * 0.1; 3]);
        assert!(cur.iter().zip(&prev).all(|(a, b)| a > b));
        prev = cur;
    }
}

#[test]
fn nds0_with_true_parameters_is_the_true_rhs() {
    let (m, _) = model(Mode::Nds0, SystemKind::Lorenz, 0.3);
    let phi = [28.0, 10.0, 8.0 / 3.0];
    let x = [1.3, -0.2, 7.0];
    assert_eq!(m.nds_rhs(&phi, &[], &x, &[]).unwrap(), lorenz_rhs(&phi, &x).to_vec());
}

#[test]
fn node_with_zero_head_is_static() {
    for kind in SystemKind::ALL {
        let (mut m, w) = model(Mode::Node, kind, 0.0);
        m.residual_net().unwrap().clone().zero_last(&mut m.params);
        let x0 = w[0].last_observed().to_vec();
        let (_, bh) = m.encode_history(w[0].history_states(), &w[0].controls).unwrap();
        let u = w[0].controls[0].clone();
        assert!(m.nds_rhs(&[], &bh, &x0, &u).unwrap().iter().all(|v| *v == 0.0));
        for s in m.rollout(&w[0]).unwrap() {
            assert_eq!(s, x0);
        }
    }
}

#[test]
fn mode_algebra() {
    for kind in SystemKind::ALL {
        let (full, w) = model(Mode::Full, kind, 0.05);
        let (phi, bh) = full.encode_history(w[0].history_states(), &w[0].controls).unwrap();
        let x = w[0].states[40].clone();
        let u = w[0].controls[40].clone();
        let (g, r) = full.rhs_components(&phi, &bh, &x, &u).unwrap();
        assert!(r.iter().any(|v| *v != 0.0));
        let total = full.nds_rhs(&phi, &bh, &x, &u).unwrap();
        for i in 0..x.len() {
            assert_eq!(total[i], g[i] + r[i]);
        }
        // Full minus the residual equals NDS0 at the same parameters
        let (nds0, _) = model(Mode::Nds0, kind, 0.05);
        assert_eq!(nds0.nds_rhs(&phi, &[], &x, &u).unwrap(), g);
        // freshly initialised Full starts as its prior
        let (fresh, _) = model(Mode::Full, kind, 0.0);
        let (_, r0) = fresh.rhs_components(&phi, &bh, &x, &u).unwrap();
        assert!(r0.iter().all(|v| *v == 0.0));
        // Full without prior equals a residual-only model of the same shape
        let mut cfg = full.config.clone();
        cfg.mode = Mode::Node;
        cfg.residual_hidden = full.config.residual_hidden.clone();
        let mut node = NdsModel::new(cfg, full.standardization.clone(), 0).unwrap();
        let d_p = full.config.param_ranges.len();
        for e in node.layout.entries().to_vec() {
            let src = full.layout.get(&e.name).unwrap();
            let skip = (src.rows - e.block.rows) * src.cols;
            assert!(skip == 0 || skip == d_p * src.cols);
            let vals = full.params[src.range()][skip..].to_vec();
            node.params[e.block.range()].copy_from_slice(&vals);
        }
        let (nphi, nbh) = node.encode_history(w[0].history_states(), &w[0].controls).unwrap();
        assert!(nphi.is_empty());
        assert_eq!(nbh, bh);
        assert_eq!(node.nds_rhs(&[], &nbh, &x, &u).unwrap(), r);
    }
}

#[test]
fn partial_mode_zeroes_unknown_equations() {
    for kind in SystemKind::ALL {
        let (m, w) = model(Mode::Partial, kind, 0.05);
        let spec = m.spec();
        let (phi, bh) = m.encode_history(w[0].history_states(), &w[0].controls).unwrap();
        let x = w[0].states[35].clone();
        let u = w[0].controls[35].clone();
        let (g, _) = m.rhs_components(&phi, &bh, &x, &u).unwrap();
        let mut truth = vec![0.0; spec.state_dim];
        spec.rhs(&phi, &x, &u, &mut truth);
        for i in 0..spec.state_dim {
            if spec.partial_mask[i] {
                assert_eq!(g[i], truth[i]);
            } else {
                assert_eq!(g[i], 0.0);
            }
        }
    }
}

#[test]
fn fc_direct_shapes_and_zero_output() {
    for kind in SystemKind::ALL {
        let (mut m, w) = model(Mode::FcDirect, kind, 0.0);
        let n = m.spec().state_dim;
        let pred = m.rollout(&w[0]).unwrap();
        assert_eq!(pred.len(), 16);
        assert!(pred.iter().all(|p| p.len() == n));
        m.fc_net().unwrap().clone().zero_last(&mut m.params);
        assert!(m.rollout(&w[0]).unwrap().iter().flatten().all(|v| *v == 0.0));
        let mut short = w[0].clone();
        short.history = 31;
        assert!(matches!(m.rollout(&short), Err(ModelError::Length { .. })));
    }
}

/// With the true parameters NDS0 only carries integration error. Lorenz
/// is chaotic over the 8 s horizon, so it is compared against a plain RK4
/// integration on the same substep grid instead.
#[test]
fn nds0_oracle_rollout_matches_generator() {
    use crate::odeint::{integrate, OdeProblem, SolveConfig};
    for kind in SystemKind::ALL {
        let (m, w) = model(Mode::Nds0, kind, 0.0);
        let spec = m.spec();
        for win in &w {
            let mut tape = Tape::new(&m.params);
            let (pred, phi) = m.rollout_with(&mut tape, win, Some(&win.params)).unwrap();
            assert_eq!(phi.unwrap(), win.params);
            if kind == SystemKind::Lorenz {
                let mut p = OdeProblem {
                    rhs: |x: &[f64], u: &[f64], _t: f64, dx: &mut [f64]| spec.rhs(&win.params, x, u, dx),
                    x0: win.last_observed().to_vec(),
                    t0: win.times[31],
                    control: ZeroOrderHold::none(),
                };
                let plain = integrate(&mut p, &win.times[32..], &SolveConfig::training()).unwrap();
                for (a, b) in pred.iter().flatten().zip(plain.iter().flatten()) {
                    assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
                }
                continue;
            }
            for (p, t) in pred.iter().zip(win.targets()) {
                for (a, b) in p.iter().zip(t) {
                    assert!((a - b).abs() < 1e-3 * b.abs().max(1.0), "{kind:?}: {a} vs {b}");
                }
            }
        }
    }
}

/// Directional derivatives along random directions; single weights can
/// have gradients far below the finite-difference noise floor.
#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in SystemKind::ALL {
        for mode in Mode::ALL {
            let (mut m, w) = model(mode, kind, 0.02);
            let weights: Vec<f64> = m.standardization.state_scale.iter().map(|s| 1.0 / s).collect();
            let (_, grad) = window_loss_grad(&m, &w[0], &weights).unwrap();
            let base = m.params.clone();
            for _ in 0..3 {
                let dir: Vec<f64> = (0..base.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let h = 4e-6;
                let mut at = |s: f64| {
                    for ((p, b), d) in m.params.iter_mut().zip(&base).zip(&dir) {
                        *p = b + s * d;
                    }
                    crate::training::window_loss(&m, &w[0], &weights).unwrap()
                };
                // Richardson-extrapolated central difference
                let d1 = (at(h) - at(-h)) / (2.0 * h);
                let d2 = (at(h / 2.0) - at(-h / 2.0)) / h;
                let fd = (4.0 * d2 - d1) / 3.0;
                let ad: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
                let err = (ad - fd).abs() / fd.abs().max(1e-6);
                assert!(err < 1e-3, "{kind:?} {mode:?}: {ad} vs {fd}");
            }
            m.params.copy_from_slice(&base);
        }
    }
}

#[test]
fn artifact_round_trip_checks_layout() {
    let (m, w) = model(Mode::Full, SystemKind::Cartpole, 0.01);
    let back = NdsModel::from_parts(m.config.clone(), m.standardization.clone(), m.layout.clone(), m.params.clone()).unwrap();
    assert_eq!(back.rollout(&w[0]).unwrap(), m.rollout(&w[0]).unwrap());
    let mut short = m.params.clone();
    short.pop();
    assert!(NdsModel::from_parts(m.config.clone(), m.standardization.clone(), m.layout.clone(), short).is_err());
}
