//! Gray-box neural dynamical systems.
//!
//! Known ODE structure with per-trajectory parameters inferred by a history
//! encoder, plus learned residual dynamics, trained by backpropagating
//! through a fixed-step Runge–Kutta solver.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;
#[cfg(all(test, not(feature = "std")))]
extern crate std;

pub mod autodiff;
pub mod baselines;
pub mod control;
pub mod linalg;
pub mod math;
pub mod odeint;
pub mod systems;
pub mod models;
pub mod training;
