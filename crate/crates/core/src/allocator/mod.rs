//! Uplink power allocation: objective-specialized experts fused by a
//! thresholded gate, label-free training, and the iterative, grid, MLP and
//! fixed-power baselines.

mod iterative;
mod mlp;
mod moe;
mod objective;

pub use iterative::{fixed_power, grid_oracle, iterative_allocate, IterativeOptions};
pub use mlp::{mlp_allocate, mlp_forward, mlp_init, train_mlp, MLP_KIND};
pub use moe::{
    expert_forward, gate_forward, moe_allocate, moe_eval_loss, moe_forward, moe_init, moe_loss,
    moe_loss_graph, moe_loss_values, train_moe, MoeLosses, MoeOutputs, MOE_KIND,
};
pub use objective::{
    evaluate_powers, evaluate_with_moments, utility_tape, Evaluation, SinrCoeffs, UtilityContext,
};

use serde::{Deserialize, Serialize};

use crate::numerics::linalg::ComplexVec;
use crate::predictor::op;
use crate::uplink::instantaneous_moments;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    /// Multiplier on the conv widths `2M, 4M, 8M`.
    pub width: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self { width: 0.25 }
    }
}

impl ExpertConfig {
    pub fn channels(&self, num_aps: usize) -> [usize; 3] {
        [2, 4, 8].map(|c| ((c * num_aps) as f64 * self.width).round().max(1.0) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub tau_w: f64,
    /// Margin `f_m` of the contrastive gate loss.
    pub margin: f64,
    /// Append a one-hot objective tag to each UE's gate input.
    pub objective_tag: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            tau_w: 0.1,
            margin: 0.5,
            objective_tag: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocatorConfig {
    pub expert: ExpertConfig,
    pub gate: GateConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Hidden width of the MLP baseline; `None` uses `M`.
    pub mlp_hidden: Option<usize>,
    pub starts: usize,
    pub max_iters: usize,
    pub grid_points: usize,
}

impl Default for AllocatorConfig {
    fn default() -> Self {
        Self {
            expert: ExpertConfig::default(),
            gate: GateConfig::default(),
            lr: 0.01,
            epochs: 30,
            batch_size: 32,
            mlp_hidden: None,
            starts: 16,
            max_iters: 50,
            grid_points: 64,
        }
    }
}

impl AllocatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.expert.width > 0.0) {
            return Err(Error::config("expert width multiplier must be positive"));
        }
        if !(0.0..1.0).contains(&self.gate.tau_w) {
            return Err(Error::config(format!(
                "tau_w must lie in [0, 1), got {}",
                self.gate.tau_w
            )));
        }
        if !(self.gate.margin >= 0.0) {
            return Err(Error::config("gate margin must be non-negative"));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::config(
                "learning rate and batch size must be positive",
            ));
        }
        if self.starts == 0 || self.grid_points < 2 {
            return Err(Error::config("need at least one start and two grid points"));
        }
        Ok(())
    }
}

/// One allocation problem: the CSI the allocator sees and the SINR
/// coefficients it optimizes.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocInstance {
    pub num_ues: usize,
    pub num_aps: usize,
    pub antennas: usize,
    /// `[K, M, 2L]`, `op(ĥ)` per link.
    pub csi: Vec<f64>,
    pub coeffs: SinrCoeffs,
}

impl AllocInstance {
    pub fn from_channels(
        num_ues: usize,
        num_aps: usize,
        h: &[ComplexVec],
        tau_p: usize,
    ) -> Result<Self> {
        let mo = instantaneous_moments(num_ues, num_aps, h)?;
        let antennas = h.first().map_or(0, ComplexVec::len);
        Ok(Self {
            num_ues,
            num_aps,
            antennas,
            csi: h.iter().flat_map(op).collect(),
            coeffs: SinrCoeffs::from_moments(&mo, tau_p)?,
        })
    }

    /// `M × 2L` map of UE `k`.
    pub fn ue_map(&self, k: usize) -> &[f64] {
        let w = self.num_aps * 2 * self.antennas;
        &self.csi[k * w..(k + 1) * w]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub allocator: String,
    pub powers: Vec<f64>,
    /// Gate outputs per UE (MoE only).
    pub raw_weights: Option<Vec<[f64; 3]>>,
    /// Renormalized weights, zero outside the selected set (MoE only).
    pub weights: Option<Vec<[f64; 3]>>,
    pub selected: Option<Vec<Vec<usize>>>,
    pub delta: f64,
    pub eps_star: Vec<f64>,
    pub se: Vec<f64>,
    pub ee: Vec<f64>,
    pub feasible: bool,
}

impl AllocationResult {
    pub(crate) fn from_eval(allocator: &str, powers: Vec<f64>, ev: &Evaluation) -> Self {
        Self {
            allocator: allocator.to_string(),
            powers,
            raw_weights: None,
            weights: None,
            selected: None,
            delta: ev.delta,
            eps_star: ev.ue.iter().map(|u| u.eps_star).collect(),
            se: ev.ue.iter().map(|u| u.se).collect(),
            ee: ev.ue.iter().map(|u| u.ee).collect(),
            feasible: ev.feasible,
        }
    }
}

/// Keep experts whose weight exceeds `τ_w` (the largest, lowest index on
/// ties, if none does) and renormalize over the kept set.
pub fn select_renorm(w: &[f64; 3], tau_w: f64) -> (Vec<usize>, [f64; 3]) {
    let mut set: Vec<usize> = (0..3).filter(|&n| w[n] > tau_w).collect();
    if set.is_empty() {
        let mut best = 0;
        for n in 1..3 {
            if w[n] > w[best] {
                best = n;
            }
        }
        set.push(best);
    }
    let total: f64 = set.iter().map(|&n| w[n]).sum();
    let mut out = [0.0; 3];
    for &n in &set {
        out[n] = if total > 0.0 {
            w[n] / total
        } else {
            1.0 / set.len() as f64
        };
    }
    (set, out)
}

/// `Σ_n w̄_n p̂ⁿ` over renormalized weights.
pub fn fuse(powers: &[f64; 3], weights: &[f64; 3]) -> f64 {
    powers.iter().zip(weights).map(|(p, w)| p * w).sum()
}
