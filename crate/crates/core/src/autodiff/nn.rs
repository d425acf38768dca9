//! Small fully connected networks evaluated on the tape.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::params::{Block, Layout};
use super::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Block,
    pub bias: Block,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    /// Registers the weights of a `dims[0] -> ... -> dims[last]` network.
    /// The activation follows every layer but the last.
    pub fn register(layout: &mut Layout, name: &str, dims: &[usize], activation: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Dense {
                weight: layout.push(&format!("{name}/{i}/w"), d[1], d[0]),
                bias: layout.push(&format!("{name}/{i}/b"), d[1], 1),
            })
            .collect();
        Mlp { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weight.rows
    }

    /// Glorot-normal weights and zero biases. `last_gain` rescales the
    /// final layer; 0 gives an exactly-zero output layer.
    pub fn init<R: Rng + ?Sized>(&self, values: &mut [f64], rng: &mut R, last_gain: f64) {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let w = layer.weight;
            let std = crate::math::sqrt(2.0 / (w.rows + w.cols) as f64);
            let gain = if i + 1 == n { last_gain } else { 1.0 };
            let normal = Normal::new(0.0, 1.0).unwrap();
            for v in &mut values[w.range()] {
                *v = gain * std * normal.sample(rng);
            }
            for v in &mut values[layer.bias.range()] {
                *v = 0.0;
            }
        }
    }

    pub fn zero_last(&self, values: &mut [f64]) {
        let last = self.layers.last().unwrap();
        values[last.weight.range()].fill(0.0);
        values[last.bias.range()].fill(0.0);
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = tape.affine(layer.weight, layer.bias, h);
            if i + 1 < n {
                h = match self.activation {
                    Activation::Softplus => tape.softplus(h),
                    Activation::Relu => tape.relu(h),
                    Activation::Tanh => tape.tanh(h),
                };
            }
        }
        h
    }
}
