//! Length maps of random fully connected networks and Monte Carlo checks of
//! the finite-width length process.
//!
//! Conventions used throughout: `sigma_w` and `sigma_b` are standard
//! deviations, pre-activations are `h = (σ_w/√N) W x + σ_b b` with standard
//! normal `W` and `b`, layers are numbered from 0 (the input), and
//! `q_ℓ = (1/N) Σ_i h_{ℓ,i}²`.

pub mod activations;
pub mod cli;
pub mod lengthmap;
pub mod quadrature;
mod simd;
pub mod simulator;
pub mod special;
pub mod stats;

pub use activations::Activation;
