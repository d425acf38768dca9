//! Reverse-mode automatic differentiation for small networks and for
//! solver arithmetic recorded step by step.

mod nn;
mod params;
mod tape;

pub use nn::{Activation, Dense, Mlp};
pub use params::{Block, Layout, LayoutEntry, ParamVector};
pub use tape::{Adjoints, Tape, Var};

pub use tape::sigmoid;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdError {
    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
    #[error("seed has length {got}, output has length {expected}")]
    SeedLength { expected: usize, got: usize },
    #[error("parameter layout does not tile the vector (gap or overlap at {at})")]
    Layout { at: usize },
}
