//! Channel prediction under aging: feature sequences, the attention-based
//! predictor with its channel-quality-aware loss, Kalman and persistence
//! baselines, and NMSE evaluation.

mod baselines;
mod cpnet;
mod features;
mod metrics;
mod train;

pub use baselines::{kalman_predict, kalman_set, persistence, KalmanParams, KalmanTrace};
pub use cpnet::{attention_weights, cp_forward, cp_forward_tape, cp_init, cp_predict, CpDims};
pub use features::{build_features, op, unop, FeatureSequence, LinkSet};
pub use metrics::{cq_loss, decile_nmse, nmse_db, DecileNmse, NMSE_FLOOR_DB};
pub use train::{cp_batch_loss, train_cp};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    /// History length `V`.
    pub seq_len: usize,
    pub heads: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `ε̂` in the quality weight `1/(Θ + ε̂)`.
    pub eps_hat: f64,
    pub cq_aware: bool,
    /// Cap on training links per sub-module; `None` uses all.
    pub max_links: Option<usize>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            seq_len: 8,
            heads: 2,
            lr: 0.01,
            epochs: 30,
            batch_size: 32,
            eps_hat: 1e-6,
            cq_aware: true,
            max_links: Some(6000),
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self, antennas: usize) -> Result<()> {
        if self.seq_len < 2 {
            return Err(Error::config("sequence length must be at least 2"));
        }
        if self.heads == 0 || !(2 * antennas).is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "model dim 2L = {} not divisible by {} heads",
                2 * antennas,
                self.heads
            )));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || !(self.eps_hat > 0.0) {
            return Err(Error::config(
                "learning rate, batch size and eps_hat must be positive",
            ));
        }
        Ok(())
    }
}
