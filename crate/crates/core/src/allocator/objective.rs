use serde::{Deserialize, Serialize};

use crate::fbl::{
    joint_delta, ue_metrics, usp, ObjectiveGroups, UeMetrics, UePowerModel, UrllcConstraints,
};
use crate::numerics::q_inv;
use crate::numerics::tape::{Tape, Tensor, Var};
use crate::uplink::{interference_aggregate, FrameConfig, SinrMoments};
use crate::{Error, Result};

/// Everything besides the channel that the joint indicator depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityContext {
    pub groups: ObjectiveGroups,
    pub urllc: UrllcConstraints,
    pub power: UePowerModel,
    pub tau_p: usize,
    pub tau_s: f64,
    /// Operating rate `R_b` (bits/CU).
    pub rate_b: f64,
    pub bandwidth_hz: f64,
}

impl UtilityContext {
    pub fn new(
        groups: ObjectiveGroups,
        urllc: UrllcConstraints,
        power: UePowerModel,
        frame: &FrameConfig,
    ) -> Result<Self> {
        groups.validate()?;
        urllc.validate()?;
        power.validate()?;
        frame.validate(groups.assign.len())?;
        Ok(Self {
            groups,
            urllc,
            power,
            tau_p: frame.tau_p,
            tau_s: frame.tau_s() as f64,
            rate_b: frame.rate_bits_per_cu(),
            bandwidth_hz: frame.bandwidth_hz,
        })
    }

    pub fn num_ues(&self) -> usize {
        self.groups.assign.len()
    }

    pub fn p_min(&self) -> f64 {
        1e-4 * self.urllc.p_max
    }

    /// Per-UE coefficients of the normalized SE and EE terms in `δ`.
    fn delta_weights(&self) -> (Vec<f64>, Vec<f64>) {
        let k = self.num_ues();
        let mut count = [0usize; 3];
        for o in &self.groups.assign {
            count[o.index()] += 1;
        }
        let mut wa = vec![0.0; k];
        let mut wb = vec![0.0; k];
        for (i, o) in self.groups.assign.iter().enumerate() {
            let w = self.groups.beta[o.index()] / count[o.index()] as f64;
            match o {
                crate::fbl::Objective::Se => wa[i] = w,
                crate::fbl::Objective::Ee => wb[i] = w,
                crate::fbl::Objective::Trade => {
                    wa[i] = 0.5 * w;
                    wb[i] = 0.5 * w;
                }
            }
        }
        (wa, wb)
    }
}

/// Predicted-CSI SINR in the form `γ_k = p_k a_k / (c_k + Σ_{i≠k} b_{k,i} p_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinrCoeffs {
    pub num_ues: usize,
    pub gain: Vec<f64>,
    /// `[K, K]`, zero diagonal.
    pub cross: Vec<f64>,
    pub noise: Vec<f64>,
}

impl SinrCoeffs {
    pub fn from_moments(mo: &SinrMoments, tau_p: usize) -> Result<Self> {
        if tau_p == 0 {
            return Err(Error::domain("tau_p must be positive"));
        }
        let (kn, mn) = (mo.num_ues(), mo.num_aps());
        let c = kn as f64 / tau_p as f64 + 1.0;
        let mut gain = vec![0.0; kn];
        let mut noise = vec![0.0; kn];
        let mut cross = vec![0.0; kn * kn];
        for k in 0..kn {
            let mut g = 0.0;
            for m in 0..mn {
                let (psi, theta) = (mo.psi(k, m), mo.theta(k, m));
                g += psi * theta;
                noise[k] += psi * psi * c * theta;
                for i in 0..kn {
                    if i != k {
                        cross[k * kn + i] += psi * psi * mo.phi(k, i, m);
                    }
                }
            }
            gain[k] = g * g;
        }
        Ok(Self {
            num_ues: kn,
            gain,
            cross,
            noise,
        })
    }

    pub fn sinr(&self, p: &[f64]) -> Result<Vec<f64>> {
        let kn = self.num_ues;
        if p.len() != kn {
            return Err(Error::shape(format!("{} powers for {kn} UEs", p.len())));
        }
        Ok((0..kn)
            .map(|k| {
                let i: f64 = (0..kn).map(|j| self.cross[k * kn + j] * p[j]).sum();
                p[k] * self.gain[k] / (self.noise[k] + i)
            })
            .collect())
    }
}

/// Metrics of one power vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub sinr: Vec<f64>,
    pub ue: Vec<UeMetrics>,
    pub delta: f64,
    pub usp: f64,
    pub feasible: bool,
}

pub fn evaluate_powers(ctx: &UtilityContext, coeffs: &SinrCoeffs, p: &[f64]) -> Result<Evaluation> {
    let sinr = coeffs.sinr(p)?;
    let ue = sinr
        .iter()
        .zip(p)
        .map(|(&g, &pk)| {
            ue_metrics(
                g,
                pk,
                ctx.tau_s,
                ctx.urllc.eps_b,
                ctx.rate_b,
                ctx.bandwidth_hz,
                &ctx.power,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let se: Vec<f64> = ue.iter().map(|u| u.se).collect();
    let ee: Vec<f64> = ue.iter().map(|u| u.ee).collect();
    let eps: Vec<f64> = ue.iter().map(|u| u.eps_star).collect();
    Ok(Evaluation {
        delta: joint_delta(&se, &ee, &ctx.groups)?,
        usp: usp(&eps, ctx.urllc.eps_b)?,
        feasible: eps.iter().all(|&e| e <= ctx.urllc.eps_b),
        sinr,
        ue,
    })
}

/// Same as [`evaluate_powers`] from raw moments (checks the coefficient
/// form against the direct SINR expression).
pub fn evaluate_with_moments(
    ctx: &UtilityContext,
    mo: &SinrMoments,
    p: &[f64],
) -> Result<Evaluation> {
    interference_aggregate(mo, p)?;
    evaluate_powers(ctx, &SinrCoeffs::from_moments(mo, ctx.tau_p)?, p)
}

/// Per-sample `δ` and `Σ_k max(0, ε_k − ε_b)` on the tape for powers
/// `p[N, K]` (watts) and one coefficient set per sample.
pub fn utility_tape(
    tape: &mut Tape,
    ctx: &UtilityContext,
    coeffs: &[&SinrCoeffs],
    p: Var,
) -> Result<(Var, Var)> {
    let kn = ctx.num_ues();
    let n = coeffs.len();
    if tape.shape(p) != [n, kn] {
        return Err(Error::shape(format!(
            "powers {:?}, expected [{n}, {kn}]",
            tape.shape(p)
        )));
    }
    if coeffs.iter().any(|c| c.num_ues != kn) {
        return Err(Error::shape("coefficient sets differ in UE count"));
    }
    let gain = tape.leaf(Tensor::new(
        vec![n, kn],
        coeffs.iter().flat_map(|c| c.gain.iter().copied()).collect(),
    )?);
    let noise = tape.leaf(Tensor::new(
        vec![n, kn],
        coeffs
            .iter()
            .flat_map(|c| c.noise.iter().copied())
            .collect(),
    )?);
    let cross = tape.leaf(Tensor::new(
        vec![n, kn, kn],
        coeffs
            .iter()
            .flat_map(|c| c.cross.iter().copied())
            .collect(),
    )?);
    let log2e = std::f64::consts::LOG2_E;

    let pc = tape.reshape(p, vec![n, kn, 1])?;
    let interf = tape.bmm(cross, pc)?;
    let interf = tape.reshape(interf, vec![n, kn])?;
    let den = tape.add(noise, interf)?;
    let num = tape.mul(p, gain)?;
    let gamma = tape.div(num, den)?;

    let g1 = tape.add_scalar(gamma, 1.0);
    let cap = tape.log(g1);
    let cap = tape.scale(cap, log2e);
    // V/log₂²e = γ(γ+2)/(1+γ)², floored so that γ → 0 keeps finite
    // gradients through 1/√V.
    let g2 = tape.add_scalar(gamma, 2.0);
    let vn = tape.mul(gamma, g2)?;
    let vd = tape.square(g1);
    let v = tape.div(vn, vd)?;
    let v = tape.clamp(v, 1e-30, 1.0);
    let sqrt_v = tape.sqrt(v);
    let sqrt_v = tape.scale(sqrt_v, log2e);

    let penalty = q_inv(ctx.urllc.eps_b)? / ctx.tau_s.sqrt();
    let back = tape.scale(sqrt_v, penalty);
    let rate = tape.sub(cap, back)?;
    let rate = tape.clamp(rate, 0.0, f64::INFINITY);
    let a = tape.scale(rate, 1.0 / ctx.groups.eta_max);
    let a = tape.clamp(a, 0.0, 1.0);
    let cons = tape.scale(p, ctx.power.xi);
    let cons = tape.add_scalar(cons, ctx.power.u);
    let ee = tape.div(rate, cons)?;
    let b = tape.scale(ee, ctx.bandwidth_hz / ctx.groups.omega_max);
    let b = tape.clamp(b, 0.0, 1.0);
    let (wa, wb) = ctx.delta_weights();
    let wa = tape.leaf(Tensor::vector(wa));
    let wb = tape.leaf(Tensor::vector(wb));
    let ta = tape.mul(a, wa)?;
    let tb = tape.mul(b, wb)?;
    let terms = tape.add(ta, tb)?;
    let delta = tape.sum_axis(terms, 1)?;

    let gap = tape.add_scalar(cap, -ctx.rate_b);
    let z = tape.div(gap, sqrt_v)?;
    let z = tape.scale(z, ctx.tau_s.sqrt());
    let eps = tape.qfunc(z);
    let excess = tape.add_scalar(eps, -ctx.urllc.eps_b);
    let excess = tape.relu(excess);
    let urllc = tape.sum_axis(excess, 1)?;
    Ok((delta, urllc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbl::ObjectiveGroups;
    use crate::uplink::sinr_predicted;

    pub(crate) fn toy_moments() -> SinrMoments {
        let theta = vec![40.0, 5.0, 2.0, 30.0, 8.0, 8.0];
        let mut phi = vec![0.0; 2 * 2 * 3];
        for k in 0..2 {
            for i in 0..2 {
                for m in 0..3 {
                    let t = theta[k * 3 + m] * theta[i * 3 + m];
                    phi[(k * 2 + i) * 3 + m] = if k == i { t } else { 0.3 * t };
                }
            }
        }
        SinrMoments::new(2, 3, theta, phi, vec![0.0; 12]).unwrap()
    }

    fn ctx() -> UtilityContext {
        UtilityContext::new(
            ObjectiveGroups::round_robin(2, 3.0, 4e7),
            UrllcConstraints::default(),
            UePowerModel::default(),
            &FrameConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn coefficients_reproduce_predicted_sinr() {
        let mo = toy_moments();
        let c = SinrCoeffs::from_moments(&mo, 1500).unwrap();
        let p = [0.03, 0.08];
        let a = c.sinr(&p).unwrap();
        let b = sinr_predicted(&mo, &p, 1500).unwrap();
        for k in 0..2 {
            assert!((a[k] / b[k] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_utility_matches_direct_evaluation() {
        let cx = ctx();
        let c = SinrCoeffs::from_moments(&toy_moments(), 1500).unwrap();
        for p in [[0.03, 0.08], [1e-5, 0.1], [0.1, 0.1]] {
            let ev = evaluate_powers(&cx, &c, &p).unwrap();
            let mut tape = Tape::new();
            let pv = tape.leaf(Tensor::new(vec![1, 2], p.to_vec()).unwrap());
            let (d, u) = utility_tape(&mut tape, &cx, &[&c], pv).unwrap();
            assert!((tape.value(d).item() - ev.delta).abs() < 1e-12, "{p:?}");
            let excess: f64 = ev
                .ue
                .iter()
                .map(|m| (m.eps_star - cx.urllc.eps_b).max(0.0))
                .sum();
            assert!((tape.value(u).item() - excess).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_stay_finite_at_vanishing_power() {
        let cx = ctx();
        let c = SinrCoeffs::from_moments(&toy_moments(), 1500).unwrap();
        for p in [[0.0, 0.05], [1e-300, 1e-20]] {
            let mut tape = Tape::new();
            let pv = tape.leaf(Tensor::new(vec![1, 2], p.to_vec()).unwrap());
            let (d, u) = utility_tape(&mut tape, &cx, &[&c], pv).unwrap();
            let f = tape.sub(d, u).unwrap();
            let f = tape.sum(f);
            let g = tape.backward(f).unwrap().wrt_or_zero(pv, 2);
            assert!(g.iter().all(|v| v.is_finite()), "{p:?} -> {g:?}");
        }
    }
}
