//! Uplink simulation and optimization toolkit for aerial-terrestrial cell-free
//! massive MIMO under URLLC constraints.
//!
//! The crate is organized bottom-up:
//!
//! - [`numerics`]: special functions, complex linear algebra, seeded RNG
//!   streams, and a small reverse-mode differentiation tape.
//! - [`channel`]: scenario geometry, Rician/Rayleigh link synthesis and
//!   Jakes-correlated channel aging.
//! - [`uplink`]: pilots, LS estimation, two-stage MRC combining and the
//!   closed-form SINR expressions.
//! - [`fbl`]: finite-blocklength rate / error probability, SE, EE, the joint
//!   indicator and URLLC satisfaction metrics.
//! - [`predictor`]: attention-based channel predictor, Kalman and persistence
//!   baselines, NMSE evaluation.
//! - [`allocator`]: mixture-of-experts power allocation, gating, label-free
//!   training and the iterative / grid / MLP baselines.
//! - [`harness`]: config files, datasets, sweeps, evaluation and audit.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod channel;
pub mod error;
pub mod fbl;
pub mod harness;
pub mod nn;
pub mod numerics;
pub mod predictor;
pub mod uplink;

pub use error::{Error, Result};
