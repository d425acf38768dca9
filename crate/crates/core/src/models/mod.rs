//! Neural dynamical systems: a history encoder infers per-trajectory
//! parameters, a known prior right-hand side uses them, and a context
//! encoder plus residual head add learned corrections.

mod standardize;

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Activation, AdError, Layout, Mlp, Tape, Var};
use crate::odeint::{integrate_tape, OdeError, Substeps, ZeroOrderHold, TRAINING_MAX_SUBSTEP};
use crate::systems::{Interval, SystemKind, SystemSpec};
use crate::training::{Window, HISTORY_LEN, HORIZON};

pub use standardize::Standardization;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Prior plus residual.
    Full,
    /// Prior with unknown equations zeroed, plus residual.
    Partial,
    /// Prior only, with encoded parameters.
    Nds0,
    /// Residual only.
    Node,
    /// Feedforward map from history to the predicted sequence.
    FcDirect,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Full, Mode::Partial, Mode::Nds0, Mode::Node, Mode::FcDirect];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::Partial => "partial",
            Mode::Nds0 => "nds0",
            Mode::Node => "node",
            Mode::FcDirect => "fc",
        }
    }

    pub fn from_name(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn has_prior(self) -> bool {
        matches!(self, Mode::Full | Mode::Partial | Mode::Nds0)
    }

    pub fn has_residual(self) -> bool {
        matches!(self, Mode::Full | Mode::Partial | Mode::Node)
    }

    /// Whether the model exposes parameter estimates.
    pub fn estimates_params(self) -> bool {
        self.has_prior()
    }

    pub fn integrates(self) -> bool {
        self != Mode::FcDirect
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NdsConfig {
    pub mode: Mode,
    pub system: SystemKind,
    pub history_len: usize,
    pub horizon: usize,
    pub d_h: usize,
    pub d_c: usize,
    pub encoder_hidden: Vec<usize>,
    pub context_hidden: Vec<usize>,
    pub residual_hidden: Vec<usize>,
    pub fc_hidden: Vec<usize>,
    pub encoder_activation: Activation,
    pub param_ranges: Vec<Interval>,
    pub known_mask: Vec<bool>,
    pub max_substep: f64,
}

impl NdsConfig {
    /// Paper-sized networks for `mode` on `spec`.
    pub fn new(mode: Mode, spec: &SystemSpec) -> Self {
        let known_mask = if mode == Mode::Partial {
            spec.partial_mask.clone()
        } else {
            vec![true; spec.state_dim]
        };
        NdsConfig {
            mode,
            system: spec.kind,
            history_len: HISTORY_LEN,
            horizon: HORIZON,
            d_h: 16,
            d_c: 16,
            encoder_hidden: vec![64, 64],
            context_hidden: vec![64, 64],
            residual_hidden: if mode == Mode::Node { vec![128; 3] } else { vec![64, 64] },
            fc_hidden: vec![128; 4],
            encoder_activation: Activation::Softplus,
            param_ranges: spec.param_ranges.clone(),
            known_mask,
            max_substep: TRAINING_MAX_SUBSTEP,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let spec = SystemSpec::new(self.system);
        if self.known_mask.len() != spec.state_dim || self.param_ranges.len() != spec.param_dim() {
            return Err(ModelError::Config("mask or parameter ranges do not match the system"));
        }
        if self.mode == Mode::Partial && self.known_mask.iter().all(|&k| k) {
            return Err(ModelError::Config("partial mode needs at least one unknown equation"));
        }
        if self.history_len == 0 || self.horizon == 0 {
            return Err(ModelError::Config("history and horizon must be >= 1"));
        }
        if self.param_ranges.iter().any(|r| !(r.lo < r.hi)) {
            return Err(ModelError::Config("parameter ranges need lo < hi"));
        }
        if !(self.max_substep > 0.0) {
            return Err(ModelError::Config("max substep must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{what} has length {got}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("rollout of window from trajectory {traj_id} diverged at t = {t}")]
    Divergence { traj_id: u64, t: f64 },
    #[error(transparent)]
    NonFinite(#[from] AdError),
    #[error("invalid model configuration: {0}")]
    Config(&'static str),
    #[error("mode {0:?} has no {1}")]
    Unsupported(Mode, &'static str),
}

/// Trainable model. Weights live in one flat vector addressed by `layout`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NdsModel {
    pub config: NdsConfig,
    pub standardization: Standardization,
    pub layout: Layout,
    pub params: Vec<f64>,
    history_net: Option<Mlp>,
    context_net: Option<Mlp>,
    residual_net: Option<Mlp>,
    fc_net: Option<Mlp>,
}

/// Taped rollout: predicted states at `times[history..]` and the encoded
/// parameters when the mode has a prior.
pub struct TapedRollout {
    pub states: Vec<Var>,
    pub phi: Option<Var>,
}

struct Networks {
    history: Option<Mlp>,
    context: Option<Mlp>,
    residual: Option<Mlp>,
    fc: Option<Mlp>,
}

fn build_networks(cfg: &NdsConfig, state_dim: usize, control_dim: usize, layout: &mut Layout) -> Networks {
    let n = state_dim;
    let m = control_dim;
    let dims = |input: usize, hidden: &[usize], output: usize| {
        let mut d = vec![input];
        d.extend_from_slice(hidden);
        d.push(output);
        d
    };
    let window = cfg.history_len + cfg.horizon;
    if cfg.mode == Mode::FcDirect {
        let input = cfg.history_len * n + window * m + window;
        let fc = Mlp::register(
            layout,
            "fc",
            &dims(input, &cfg.fc_hidden, cfg.horizon * n),
            Activation::Relu,
        );
        return Networks {
            history: None,
            context: None,
            residual: None,
            fc: Some(fc),
        };
    }
    let d_p = if cfg.mode.has_prior() { cfg.param_ranges.len() } else { 0 };
    let d_h = if cfg.mode.has_residual() { cfg.d_h } else { 0 };
    let history = Mlp::register(
        layout,
        "history",
        &dims(cfg.history_len * n + window * m, &cfg.encoder_hidden, d_p + d_h),
        cfg.encoder_activation,
    );
    let (context, residual) = if cfg.mode.has_residual() {
        let c = Mlp::register(layout, "context", &dims(n + m, &cfg.context_hidden, cfg.d_c), Activation::Softplus);
        let r = Mlp::register(
            layout,
            "residual",
            &dims(cfg.d_h + cfg.d_c, &cfg.residual_hidden, n),
            Activation::Softplus,
        );
        (Some(c), Some(r))
    } else {
        (None, None)
    };
    Networks {
        history: Some(history),
        context,
        residual,
        fc: None,
    }
}

impl NdsModel {
    /// Fresh model with seeded initial weights. The residual head of Full
    /// and Partial models starts at zero, so they begin as their prior.
    pub fn new(config: NdsConfig, standardization: Standardization, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let spec = SystemSpec::new(config.system);
        standardization.check(spec.state_dim, spec.control_dim)?;
        let mut layout = Layout::default();
        let nets = build_networks(&config, spec.state_dim, spec.control_dim, &mut layout);
        let mut params = vec![0.0; layout.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Some(h) = &nets.history {
            h.init(&mut params, &mut rng, 0.1);
        }
        if let Some(c) = &nets.context {
            c.init(&mut params, &mut rng, 1.0);
        }
        if let Some(r) = &nets.residual {
            let gain = if config.mode == Mode::Node { 0.1 } else { 0.0 };
            r.init(&mut params, &mut rng, gain);
        }
        if let Some(f) = &nets.fc {
            f.init(&mut params, &mut rng, 0.1);
        }
        Ok(NdsModel {
            config,
            standardization,
            layout,
            params,
            history_net: nets.history,
            context_net: nets.context,
            residual_net: nets.residual,
            fc_net: nets.fc,
        })
    }

    /// Rebuilds a model from stored weights, checking that they match the
    /// layout implied by the configuration.
    pub fn from_parts(
        config: NdsConfig,
        standardization: Standardization,
        layout: Layout,
        params: Vec<f64>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let spec = SystemSpec::new(config.system);
        standardization.check(spec.state_dim, spec.control_dim)?;
        let mut expected = Layout::default();
        let nets = build_networks(&config, spec.state_dim, spec.control_dim, &mut expected);
        if expected != layout {
            return Err(ModelError::Config("stored layout does not match the configuration"));
        }
        layout.validate(params.len())?;
        Ok(NdsModel {
            config,
            standardization,
            layout,
            params,
            history_net: nets.history,
            context_net: nets.context,
            residual_net: nets.residual,
            fc_net: nets.fc,
        })
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn spec(&self) -> SystemSpec {
        SystemSpec::new(self.config.system)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn history_net(&self) -> Option<&Mlp> {
        self.history_net.as_ref()
    }

    pub fn residual_net(&self) -> Option<&Mlp> {
        self.residual_net.as_ref()
    }

    pub fn fc_net(&self) -> Option<&Mlp> {
        self.fc_net.as_ref()
    }

    fn state_dim(&self) -> usize {
        self.config.known_mask.len()
    }

    fn control_dim(&self) -> usize {
        self.standardization.control_mean.len()
    }

    fn window_len(&self) -> usize {
        self.config.history_len + self.config.horizon
    }

    /// Controls padded or truncated to the full window by repeating the
    /// last sample.
    fn padded_controls<'a>(&self, controls: &'a [Vec<f64>]) -> impl Iterator<Item = &'a Vec<f64>> + 'a {
        let len = self.window_len();
        let last = controls.len().saturating_sub(1);
        (0..len).map(move |i| &controls[i.min(last)])
    }

    fn encoder_input(&self, history: &[Vec<f64>], controls: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
        let n = self.state_dim();
        if history.len() != self.config.history_len {
            return Err(ModelError::Length {
                what: "history",
                expected: self.config.history_len,
                got: history.len(),
            });
        }
        if self.control_dim() > 0 && controls.is_empty() {
            return Err(ModelError::Length {
                what: "controls",
                expected: self.window_len(),
                got: 0,
            });
        }
        let s = &self.standardization;
        let mut v = Vec::with_capacity(history.len() * n + self.window_len() * self.control_dim());
        for x in history {
            if x.len() != n {
                return Err(ModelError::Length {
                    what: "state",
                    expected: n,
                    got: x.len(),
                });
            }
            v.extend(s.state(x));
        }
        if self.control_dim() > 0 {
            for u in self.padded_controls(controls) {
                v.extend(s.control(u));
            }
        }
        Ok(v)
    }

    fn squash(&self, tape: &mut Tape, raw: Var) -> Var {
        let lo: Vec<f64> = self.config.param_ranges.iter().map(|r| r.lo).collect();
        let width: Vec<f64> = self.config.param_ranges.iter().map(Interval::width).collect();
        let s = tape.sigmoid(raw);
        let w = tape.constant(&width);
        let l = tape.constant(&lo);
        let sw = tape.mul(s, w);
        tape.add(sw, l)
    }

    /// Squashed parameters from raw encoder outputs, off the tape.
    pub fn squash_values(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.config.param_ranges)
            .map(|(&r, iv)| sigmoid(r) * iv.width() + iv.lo)
            .collect()
    }

    /// Records the history encoder. Returns `(phi_hat, b_h)` nodes for the
    /// parts this mode uses.
    pub fn encode_tape(
        &self,
        tape: &mut Tape,
        history: &[Vec<f64>],
        controls: &[Vec<f64>],
    ) -> Result<(Option<Var>, Option<Var>), ModelError> {
        let net = self
            .history_net
            .as_ref()
            .ok_or(ModelError::Unsupported(self.mode(), "history encoder"))?;
        let input = self.encoder_input(history, controls)?;
        let x = tape.constant(&input);
        let out = net.forward(tape, x);
        let d_p = if self.mode().has_prior() { self.config.param_ranges.len() } else { 0 };
        let phi = if d_p > 0 {
            let raw = tape.slice(out, 0, d_p);
            Some(self.squash(tape, raw))
        } else {
            None
        };
        let bh = if self.mode().has_residual() {
            Some(tape.slice(out, d_p, self.config.d_h))
        } else {
            None
        };
        Ok((phi, bh))
    }

    /// Encoded parameters (empty for modes without a prior) and history
    /// embedding (empty for modes without a residual).
    pub fn encode_history(&self, history: &[Vec<f64>], controls: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        let mut tape = Tape::new(&self.params);
        let (phi, bh) = self.encode_tape(&mut tape, history, controls)?;
        tape.check_finite()?;
        Ok((
            phi.map_or(Vec::new(), |v| tape.value(v).to_vec()),
            bh.map_or(Vec::new(), |v| tape.value(v).to_vec()),
        ))
    }

    /// Prior and residual contributions recorded on the tape; either may be
    /// absent depending on the mode.
    fn rhs_parts(
        &self,
        tape: &mut Tape,
        consts: &RhsConsts,
        phi: Option<Var>,
        bh: Option<Var>,
        x: Var,
        u: &[f64],
    ) -> (Option<Var>, Option<Var>) {
        let m = self.control_dim();
        let prior = phi.map(|phi| {
            let spec = &consts.spec;
            let uv = if m == 0 { tape.constant(&[0.0]) } else { tape.constant(u) };
            let g = spec.rhs_tape(tape, phi, x, uv);
            match consts.mask {
                Some(mask) => tape.mul(g, mask),
                None => g,
            }
        });
        let residual = match (&self.context_net, &self.residual_net, bh) {
            (Some(ctx), Some(res), Some(bh)) => {
                let dx = tape.sub(x, consts.state_mean);
                let xs = tape.mul(dx, consts.state_inv_scale);
                let input = if m == 0 {
                    xs
                } else {
                    let us: Vec<f64> = self.standardization.control(u).collect();
                    let uv = tape.constant(&us);
                    tape.concat(&[xs, uv])
                };
                let bc = ctx.forward(tape, input);
                let hc = tape.concat(&[bh, bc]);
                let r = res.forward(tape, hc);
                Some(tape.mul(r, consts.deriv_scale))
            }
            _ => None,
        };
        (prior, residual)
    }

    fn rhs_tape(&self, tape: &mut Tape, consts: &RhsConsts, phi: Option<Var>, bh: Option<Var>, x: Var, u: &[f64]) -> Var {
        match self.rhs_parts(tape, consts, phi, bh, x, u) {
            (Some(g), Some(r)) => tape.add(g, r),
            (Some(g), None) => g,
            (None, Some(r)) => r,
            (None, None) => unreachable!("integrating modes have a prior or a residual"),
        }
    }

    fn rhs_consts(&self, tape: &mut Tape) -> RhsConsts {
        let s = &self.standardization;
        let inv: Vec<f64> = s.state_scale.iter().map(|v| 1.0 / v).collect();
        let mask = if self.config.known_mask.iter().all(|&k| k) {
            None
        } else {
            let m: Vec<f64> = self.config.known_mask.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect();
            Some(tape.constant(&m))
        };
        RhsConsts {
            spec: self.spec(),
            mask,
            state_mean: tape.constant(&s.state_mean),
            state_inv_scale: tape.constant(&inv),
            deriv_scale: tape.constant(&s.deriv_scale),
        }
    }

    /// Model derivative at one point, split into prior and residual parts.
    /// Absent parts are returned as zeros.
    pub fn rhs_components(&self, phi: &[f64], bh: &[f64], x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        if !self.mode().integrates() {
            return Err(ModelError::Unsupported(self.mode(), "right-hand side"));
        }
        let n = self.state_dim();
        let mut tape = Tape::new(&self.params);
        let consts = self.rhs_consts(&mut tape);
        let phi = self.mode().has_prior().then(|| tape.constant(phi));
        let bh = self.mode().has_residual().then(|| tape.constant(bh));
        let xv = tape.constant(x);
        let (g, r) = self.rhs_parts(&mut tape, &consts, phi, bh, xv, u);
        tape.check_finite()?;
        let get = |v: Option<Var>| v.map_or(vec![0.0; n], |v| tape.value(v).to_vec());
        Ok((get(g), get(r)))
    }

    /// Model derivative `g + r` at one point.
    pub fn nds_rhs(&self, phi: &[f64], bh: &[f64], x: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
        let (g, r) = self.rhs_components(phi, bh, x, u)?;
        Ok(g.iter().zip(&r).map(|(a, b)| a + b).collect())
    }

    /// Records a rollout of `window` from its last observed state to every
    /// later time. `phi_override` replaces the encoded parameters.
    pub fn rollout_tape(&self, tape: &mut Tape, window: &Window, phi_override: Option<&[f64]>) -> Result<TapedRollout, ModelError> {
        let h = self.config.history_len;
        if window.history != h {
            return Err(ModelError::Length {
                what: "window history",
                expected: h,
                got: window.history,
            });
        }
        if window.controls.len() < window.times.len() && self.control_dim() > 0 {
            return Err(ModelError::Length {
                what: "window controls",
                expected: window.times.len(),
                got: window.controls.len(),
            });
        }
        if self.mode() == Mode::FcDirect {
            return self.fc_tape(tape, window).map(|states| TapedRollout { states, phi: None });
        }
        let (mut phi, bh) = self.encode_tape(tape, window.history_states(), &window.controls)?;
        if let (Some(p), Some(ov)) = (phi.as_mut(), phi_override) {
            if ov.len() != self.config.param_ranges.len() {
                return Err(ModelError::Length {
                    what: "parameter override",
                    expected: self.config.param_ranges.len(),
                    got: ov.len(),
                });
            }
            *p = tape.constant(ov);
        }
        let consts = self.rhs_consts(tape);
        let x0 = tape.constant(window.last_observed());
        let t0 = window.times[h - 1];
        let control = if self.control_dim() == 0 {
            ZeroOrderHold::none()
        } else {
            ZeroOrderHold::new(&window.times[h - 1..], &window.controls[h - 1..window.times.len()])
        };
        let mut rhs = |tape: &mut Tape, x: Var, u: &[f64], _t: f64| self.rhs_tape(tape, &consts, phi, bh, x, u);
        let states = integrate_tape(
            tape,
            &mut rhs,
            x0,
            t0,
            &window.times[h..],
            control,
            Substeps::MaxStep(self.config.max_substep),
        )
        .map_err(|e| match e {
            OdeError::Divergence { t } => ModelError::Divergence {
                traj_id: window.traj_id,
                t,
            },
            _ => ModelError::Config("window times must be strictly increasing"),
        })?;
        Ok(TapedRollout { states, phi })
    }

    fn fc_input(&self, window: &Window) -> Result<Vec<f64>, ModelError> {
        let mut v = self.encoder_input(window.history_states(), &window.controls)?;
        let dt = SystemSpec::new(self.config.system).dt_output;
        let t0 = window.times[0];
        for i in 0..self.window_len() {
            // sampling offsets relative to the nominal grid, in steps
            let t = window.times.get(i).copied().unwrap_or(t0 + i as f64 * dt);
            v.push((t - t0) / dt - i as f64);
        }
        Ok(v)
    }

    fn fc_tape(&self, tape: &mut Tape, window: &Window) -> Result<Vec<Var>, ModelError> {
        let n = self.state_dim();
        if window.horizon() != self.config.horizon {
            return Err(ModelError::Length {
                what: "prediction horizon",
                expected: self.config.horizon,
                got: window.horizon(),
            });
        }
        let net = self.fc_net.as_ref().expect("fc mode has a network");
        let input = self.fc_input(window)?;
        let x = tape.constant(&input);
        let out = net.forward(tape, x);
        let scale = tape.constant(&self.standardization.state_scale);
        Ok((0..self.config.horizon)
            .map(|k| {
                let s = tape.slice(out, k * n, n);
                tape.mul(s, scale)
            })
            .collect())
    }

    /// Predicted states at `window.times[history..]`.
    pub fn rollout(&self, window: &Window) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut tape = Tape::new(&self.params);
        self.rollout_with(&mut tape, window, None).map(|(s, _)| s)
    }

    /// Rollout on a caller-provided tape (cleared first), returning the
    /// predicted states and encoded parameters.
    pub fn rollout_with(
        &self,
        tape: &mut Tape,
        window: &Window,
        phi_override: Option<&[f64]>,
    ) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>), ModelError> {
        tape.clear();
        let r = self.rollout_tape(tape, window, phi_override)?;
        tape.check_finite()?;
        let states = r.states.iter().map(|&v| tape.value(v).to_vec()).collect();
        Ok((states, r.phi.map(|p| tape.value(p).to_vec())))
    }
}

struct RhsConsts {
    spec: SystemSpec,
    mask: Option<Var>,
    state_mean: Var,
    state_inv_scale: Var,
    deriv_scale: Var,
}

#[cfg(test)]
mod tests;
