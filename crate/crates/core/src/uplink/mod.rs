//! Pilots, LS estimation, two-stage MRC combining and closed-form SINR.

mod decompose;
mod moments;
mod pilots;
mod sinr;

pub use decompose::{decompose_received, DecomposeConfig, TermPowers};
pub use moments::{
    combine_weights, instantaneous_moments, sinr_moments, LinkStats, MomentMode, SinrMoments,
};
pub use pilots::{ls_estimate, make_pilots, rx_pilot, PilotBook};
pub use sinr::{interference_aggregate, sinr_aged, sinr_predicted};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Packet structure: `N = B·t_tr` channel uses split into `τ_p` pilot and
/// `τ_s = N − τ_p` data uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameConfig {
    pub bandwidth_hz: f64,
    pub data_bits: f64,
    /// Transmission latency budget (s).
    pub t_tr: f64,
    pub tau_p: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            bandwidth_hz: 1e7,
            data_bits: 128.0,
            t_tr: 4e-4,
            tau_p: 1500,
        }
    }
}

impl FrameConfig {
    /// Channel uses per packet.
    pub fn n_cu(&self) -> usize {
        (self.bandwidth_hz * self.t_tr).round() as usize
    }

    pub fn tau_s(&self) -> usize {
        self.n_cu().saturating_sub(self.tau_p)
    }

    /// Operating rate `R_b = D/(B·t_tr)` in bits/CU.
    pub fn rate_bits_per_cu(&self) -> f64 {
        self.data_bits / (self.bandwidth_hz * self.t_tr)
    }

    pub fn validate(&self, num_ues: usize) -> Result<()> {
        if !(self.bandwidth_hz > 0.0 && self.t_tr > 0.0 && self.data_bits > 0.0) {
            return Err(Error::config(
                "bandwidth, latency and payload must be positive",
            ));
        }
        if self.tau_p < num_ues {
            return Err(Error::config(format!(
                "tau_p = {} cannot hold {num_ues} orthogonal pilots",
                self.tau_p
            )));
        }
        let n = self.n_cu();
        if n < self.tau_p + 1 || self.tau_s() + num_ues > n {
            return Err(Error::config(format!(
                "need 1 <= tau_s <= N - K; N = {n}, tau_p = {}, K = {num_ues}",
                self.tau_p
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_frame_dimensions() {
        let f = FrameConfig::default();
        assert_eq!(f.n_cu(), 4000);
        assert_eq!(f.tau_s(), 2500);
        assert!((f.rate_bits_per_cu() - 0.032).abs() < 1e-15);
        f.validate(6).unwrap();
    }

    #[test]
    fn frame_constraints() {
        let f = FrameConfig {
            tau_p: 3,
            ..FrameConfig::default()
        };
        assert!(f.validate(4).is_err());
        let g = FrameConfig {
            tau_p: 4000,
            ..FrameConfig::default()
        };
        assert!(g.validate(4).is_err());
        let h = FrameConfig {
            tau_p: 3,
            ..FrameConfig::default()
        };
        assert!(h.validate(3).is_ok());
    }
}
