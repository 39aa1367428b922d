use super::moments::SinrMoments;
use crate::{Error, Result};

fn check_powers(mo: &SinrMoments, powers: &[f64]) -> Result<()> {
    if powers.len() != mo.num_ues() {
        return Err(Error::shape(format!(
            "{} powers for {} UEs",
            powers.len(),
            mo.num_ues()
        )));
    }
    if let Some(p) = powers.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::domain(format!("negative transmit power {p}")));
    }
    Ok(())
}

/// `O_{k,m} = Σ_{i≠k} p_i Φ_{k,i,m}`, indexed `k·M + m`.
pub fn interference_aggregate(mo: &SinrMoments, powers: &[f64]) -> Result<Vec<f64>> {
    check_powers(mo, powers)?;
    let (kn, mn) = (mo.num_ues(), mo.num_aps());
    let mut o = vec![0.0; kn * mn];
    for k in 0..kn {
        for m in 0..mn {
            o[k * mn + m] = (0..kn)
                .filter(|&i| i != k)
                .map(|i| powers[i] * mo.phi(k, i, m))
                .sum();
        }
    }
    Ok(o)
}

/// Aged-CSI SINR with `ρ_i` the per-UE correlation over the aging lag.
pub fn sinr_aged(mo: &SinrMoments, rho: &[f64], powers: &[f64], tau_p: usize) -> Result<Vec<f64>> {
    check_powers(mo, powers)?;
    let (kn, mn) = (mo.num_ues(), mo.num_aps());
    if rho.len() != kn {
        return Err(Error::shape("one correlation per UE is required"));
    }
    if rho.iter().any(|r| !(-1.0..=1.0).contains(r)) {
        return Err(Error::domain("correlations must lie in [-1, 1]"));
    }
    if tau_p == 0 {
        return Err(Error::domain("tau_p must be positive"));
    }
    let inv_tau = 1.0 / tau_p as f64;
    let rho2: Vec<f64> = rho.iter().map(|r| r * r).collect();
    let rho_hat2: Vec<f64> = rho2.iter().map(|r| (1.0 - r).max(0.0)).collect();
    let el_coeff: f64 = rho2.iter().sum::<f64>() * inv_tau;
    Ok((0..kn)
        .map(|k| {
            let mut gain = 0.0;
            let mut den = 0.0;
            for m in 0..mn {
                let (psi, theta) = (mo.psi(k, m), mo.theta(k, m));
                gain += psi * theta;
                let mut inner = el_coeff * theta + theta;
                for i in 0..kn {
                    if i != k {
                        inner += powers[i] * rho2[i] * mo.phi(k, i, m);
                    }
                    inner += powers[i] * rho_hat2[i] * mo.mu(k, i, m);
                }
                den += psi * psi * inner;
            }
            powers[k] * rho2[k] * gain * gain / den
        })
        .collect())
}

/// Predicted-CSI SINR `p_k (Σ_m ΨΘ)² / Σ_m Ψ²((K/τ_p + 1)Θ + O)`.
pub fn sinr_predicted(mo: &SinrMoments, powers: &[f64], tau_p: usize) -> Result<Vec<f64>> {
    if tau_p == 0 {
        return Err(Error::domain("tau_p must be positive"));
    }
    let o = interference_aggregate(mo, powers)?;
    let (kn, mn) = (mo.num_ues(), mo.num_aps());
    let c = kn as f64 / tau_p as f64 + 1.0;
    Ok((0..kn)
        .map(|k| {
            let mut gain = 0.0;
            let mut den = 0.0;
            for m in 0..mn {
                let (psi, theta) = (mo.psi(k, m), mo.theta(k, m));
                gain += psi * theta;
                den += psi * psi * (c * theta + o[k * mn + m]);
            }
            powers[k] * gain * gain / den
        })
        .collect())
}
