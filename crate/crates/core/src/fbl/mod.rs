//! Finite-blocklength rate and error probability, SE/EE, the joint
//! indicator and URLLC satisfaction metrics.

use serde::{Deserialize, Serialize};

use crate::numerics::q_inv;
use crate::numerics::special::q_tail;
use crate::{Error, Result};

const LOG2_E: f64 = std::f64::consts::LOG2_E;

/// `C(γ) = log₂(1+γ)`.
pub fn capacity(gamma: f64) -> f64 {
    gamma.ln_1p() * LOG2_E
}

/// `V(γ) = (γ² + 2γ)/(1+γ)² · log₂²(e)`.
pub fn dispersion(gamma: f64) -> f64 {
    gamma * (gamma + 2.0) / ((1.0 + gamma) * (1.0 + gamma)) * LOG2_E * LOG2_E
}

fn check_sinr(gamma: f64, tau_s: f64) -> Result<()> {
    if !(gamma >= 0.0) || gamma.is_infinite() {
        return Err(Error::domain(format!(
            "SINR must be finite and non-negative, got {gamma}"
        )));
    }
    if !(tau_s >= 1.0) || tau_s.is_infinite() {
        return Err(Error::domain(format!(
            "blocklength must be at least 1, got {tau_s}"
        )));
    }
    Ok(())
}

/// `R = C(γ) − √(V(γ)/τ_s)·Q⁻¹(ε)` in bits/CU. May be negative.
pub fn achievable_rate(gamma: f64, tau_s: f64, eps: f64) -> Result<f64> {
    check_sinr(gamma, tau_s)?;
    let qi = q_inv(eps)?;
    Ok(capacity(gamma) - (dispersion(gamma) / tau_s).sqrt() * qi)
}

/// `ε = Q((C(γ) − R)·√(τ_s/V(γ)))`, with the `V = 0` limits resolved by
/// the sign of `C − R`. Negative `R` is accepted so that any output of
/// [`achievable_rate`] round-trips.
pub fn error_prob(gamma: f64, tau_s: f64, rate: f64) -> Result<f64> {
    check_sinr(gamma, tau_s)?;
    if !rate.is_finite() {
        return Err(Error::domain(format!("rate must be finite, got {rate}")));
    }
    let gap = capacity(gamma) - rate;
    let v = dispersion(gamma);
    if v == 0.0 {
        return Ok(if gap > 0.0 {
            0.0
        } else if gap < 0.0 {
            1.0
        } else {
            0.5
        });
    }
    Ok(q_tail(gap * (tau_s / v).sqrt()))
}

/// Transmit-side power consumption `p·ξ + u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UePowerModel {
    /// Reciprocal drain efficiency of the amplifier.
    pub xi: f64,
    /// Static circuit power (W).
    pub u: f64,
}

impl Default for UePowerModel {
    fn default() -> Self {
        Self { xi: 2.5, u: 0.1 }
    }
}

impl UePowerModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi >= 1.0 && self.u >= 0.0) {
            return Err(Error::config(format!(
                "power model needs xi >= 1 and u >= 0, got xi = {}, u = {}",
                self.xi, self.u
            )));
        }
        Ok(())
    }

    pub fn consumption(&self, p: f64) -> f64 {
        p * self.xi + self.u
    }
}

/// `ω = B·R/(p·ξ + u)` in bits/J.
pub fn energy_eff(bandwidth_hz: f64, rate: f64, p: f64, model: &UePowerModel) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::domain(format!(
            "energy efficiency needs p > 0, got {p}"
        )));
    }
    Ok(bandwidth_hz * rate / model.consumption(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UrllcConstraints {
    pub eps_b: f64,
    /// End-to-end latency budget (s).
    pub t_b: f64,
    /// Transmission latency (s).
    pub t_tr: f64,
    /// Aggregate propagation, processing and fronthaul overhead (s).
    pub t_oh: f64,
    pub p_max: f64,
}

impl Default for UrllcConstraints {
    fn default() -> Self {
        Self {
            eps_b: 1e-5,
            t_b: 5e-4,
            t_tr: 4e-4,
            t_oh: 5e-5,
            p_max: 0.1,
        }
    }
}

impl UrllcConstraints {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_b > 0.0 && self.eps_b < 0.5) {
            return Err(Error::config(format!(
                "eps_b must lie in (0, 0.5), got {}",
                self.eps_b
            )));
        }
        if !(self.t_tr > 0.0 && self.t_oh >= 0.0) {
            return Err(Error::config(
                "latencies must be non-negative, t_tr positive",
            ));
        }
        if self.t_tr + self.t_oh > self.t_b {
            return Err(Error::config(format!(
                "latency budget exceeded: t_tr + t_oh = {} > t_b = {}",
                self.t_tr + self.t_oh,
                self.t_b
            )));
        }
        if !(self.p_max > 0.0) || self.p_max.is_infinite() {
            return Err(Error::config(format!(
                "p_max must be positive, got {}",
                self.p_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Se,
    Ee,
    Trade,
}

impl Objective {
    pub const ALL: [Objective; 3] = [Objective::Se, Objective::Ee, Objective::Trade];

    pub fn index(self) -> usize {
        match self {
            Objective::Se => 0,
            Objective::Ee => 1,
            Objective::Trade => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Objective::Se => "se",
            Objective::Ee => "ee",
            Objective::Trade => "trade",
        }
    }
}

/// Per-UE objective assignment with the weights and normalizers of `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveGroups {
    pub assign: Vec<Objective>,
    pub beta: [f64; 3],
    pub eta_max: f64,
    pub omega_max: f64,
}

impl ObjectiveGroups {
    /// UE `k` gets objective `k mod 3` in (SE, EE, trade) order, `β = 1/3`.
    pub fn round_robin(num_ues: usize, eta_max: f64, omega_max: f64) -> Self {
        Self {
            assign: (0..num_ues).map(|k| Objective::ALL[k % 3]).collect(),
            beta: [1.0 / 3.0; 3],
            eta_max,
            omega_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::config("objective weights must be non-negative"));
        }
        if !(self.eta_max > 0.0 && self.omega_max > 0.0) {
            return Err(Error::config("normalizers must be positive"));
        }
        Ok(())
    }

    pub fn members(&self, obj: Objective) -> Vec<usize> {
        (0..self.assign.len())
            .filter(|&k| self.assign[k] == obj)
            .collect()
    }

    /// Normalized metric of UE `k` under its own objective, unclipped.
    pub fn normalized(&self, obj: Objective, se: f64, ee: f64) -> f64 {
        let (a, b) = (se / self.eta_max, ee / self.omega_max);
        match obj {
            Objective::Se => a,
            Objective::Ee => b,
            Objective::Trade => 0.5 * (a + b),
        }
    }
}

/// Group means of the clipped normalized metrics, in (SE, EE, trade)
/// order; an empty group yields 0.
pub fn group_means(se: &[f64], ee: &[f64], groups: &ObjectiveGroups) -> Result<[f64; 3]> {
    groups.validate()?;
    let k = groups.assign.len();
    if se.len() != k || ee.len() != k {
        return Err(Error::shape(
            "metric vectors do not match the group assignment",
        ));
    }
    let mut sum = [0.0; 3];
    let mut cnt = [0usize; 3];
    for (i, obj) in groups.assign.iter().enumerate() {
        let a = (se[i] / groups.eta_max).clamp(0.0, 1.0);
        let b = (ee[i] / groups.omega_max).clamp(0.0, 1.0);
        let v = match obj {
            Objective::Se => a,
            Objective::Ee => b,
            Objective::Trade => 0.5 * (a + b),
        };
        sum[obj.index()] += v;
        cnt[obj.index()] += 1;
    }
    Ok(std::array::from_fn(|g| {
        if cnt[g] == 0 {
            0.0
        } else {
            sum[g] / cnt[g] as f64
        }
    }))
}

/// `δ = Σ_g β_g · mean_g`.
pub fn joint_delta(se: &[f64], ee: &[f64], groups: &ObjectiveGroups) -> Result<f64> {
    let m = group_means(se, ee, groups)?;
    Ok((0..3).map(|g| groups.beta[g] * m[g]).sum())
}

fn check_probs(eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(Error::domain("satisfaction metrics need at least one UE"));
    }
    if eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::domain("error probabilities must lie in [0, 1]"));
    }
    Ok(())
}

/// Fraction of UEs with `ε★_k ≤ ε_b`.
pub fn usp(eps_star: &[f64], eps_b: f64) -> Result<f64> {
    check_probs(eps_star)?;
    Ok(eps_star.iter().filter(|&&e| eps_b - e >= 0.0).count() as f64 / eps_star.len() as f64)
}

/// The `⌈fraction·K⌉` UEs with the smallest SINR, ties by index.
pub fn bottom_set(sinr: &[f64], fraction: f64) -> Result<Vec<usize>> {
    if sinr.is_empty() {
        return Err(Error::domain("bottom set of an empty UE list"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::domain(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    // Guard against ⌈0.1·10⌉ rounding up to 2 through representation error.
    let n = ((sinr.len() as f64 * fraction - 1e-9).ceil() as usize).clamp(1, sinr.len());
    let mut idx: Vec<usize> = (0..sinr.len()).collect();
    idx.sort_by(|&a, &b| sinr[a].total_cmp(&sinr[b]).then(a.cmp(&b)));
    idx.truncate(n);
    Ok(idx)
}

/// USP over the bottom `fraction` of UEs ranked by SINR.
pub fn usp_bottom(eps_star: &[f64], eps_b: f64, sinr: &[f64], fraction: f64) -> Result<f64> {
    if sinr.len() != eps_star.len() {
        return Err(Error::shape(
            "SINR and error probability vectors differ in length",
        ));
    }
    check_probs(eps_star)?;
    let set = bottom_set(sinr, fraction)?;
    let sub: Vec<f64> = set.iter().map(|&k| eps_star[k]).collect();
    usp(&sub, eps_b)
}

/// Reported per-UE metrics under the fixed evaluation convention:
/// rate at `ε = ε_b`, error probability at `R = R_b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeMetrics {
    pub sinr: f64,
    /// Finite-blocklength rate, clamped at 0.
    pub rate: f64,
    pub eps_star: f64,
    pub se: f64,
    pub ee: f64,
}

pub fn ue_metrics(
    gamma: f64,
    p: f64,
    tau_s: f64,
    eps_b: f64,
    rate_b: f64,
    bandwidth_hz: f64,
    model: &UePowerModel,
) -> Result<UeMetrics> {
    let rate = achievable_rate(gamma, tau_s, eps_b)?.max(0.0);
    Ok(UeMetrics {
        sinr: gamma,
        rate,
        eps_star: error_prob(gamma, tau_s, rate_b)?,
        se: rate,
        ee: energy_eff(bandwidth_hz, rate, p, model)?,
    })
}
