use super::fading::{steering_vector, LinkParams};
use crate::numerics::linalg::{cholesky_real_psd, ComplexVec, C64};
use crate::numerics::rng::Sampler;
use crate::numerics::special::bessel_j0;
use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Jakes temporal correlation for one UE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgingModel {
    pub speed: f64,
    pub carrier_hz: f64,
    pub sample_interval: f64,
}

impl AgingModel {
    /// Maximum Doppler frequency `v f_c / c`.
    pub fn doppler(&self) -> f64 {
        self.speed * self.carrier_hz / SPEED_OF_LIGHT
    }

    /// `ρ(Δt)`, with `Δt` in samples (sign ignored).
    pub fn rho(&self, lag: f64) -> Result<f64> {
        temporal_corr(self.speed, self.carrier_hz, self.sample_interval, lag.abs())
    }

    /// `ρ̂(Δt) = √(1 − ρ²)`.
    pub fn rho_hat(&self, lag: f64) -> Result<f64> {
        let r = self.rho(lag)?;
        Ok((1.0 - r * r).max(0.0).sqrt())
    }
}

/// `ρ = J₀(2π · (v f_c / c) · 𝓕 · Δt)`.
pub fn temporal_corr(v: f64, f_c: f64, sample_interval: f64, lag: f64) -> Result<f64> {
    if !(v >= 0.0 && f_c >= 0.0 && sample_interval >= 0.0 && lag >= 0.0) {
        return Err(Error::domain(
            "temporal correlation inputs must be non-negative",
        ));
    }
    bessel_j0(2.0 * std::f64::consts::PI * (v * f_c / SPEED_OF_LIGHT) * sample_interval * lag)
}

/// Draw `r ~ CN(0, R)` for the link's covariance.
fn innovation(
    lp: &LinkParams,
    d: f64,
    angle: f64,
    l: usize,
    s: &mut Sampler,
) -> Result<ComplexVec> {
    let w = if lp.k_factor.is_infinite() {
        1.0
    } else {
        lp.k_factor / (lp.k_factor + 1.0)
    };
    let los = s.cnormal() * (w * lp.los_gain(d)).sqrt();
    let nlos = ((1.0 - w) * lp.nlos_gain(d)).sqrt();
    let mut r = ComplexVec::from_vec((0..l).map(|_| s.cnormal() * nlos).collect());
    if w > 0.0 {
        r.axpy(los, &steering_vector(l, angle)?);
    }
    Ok(r)
}

/// `h[t] = ρ·h0 + √(1−ρ²)·r` with `r ~ CN(0, R)`.
pub fn age_channel(
    h0: &ComplexVec,
    rho: f64,
    lp: &LinkParams,
    d: f64,
    angle: f64,
    s: &mut Sampler,
) -> Result<ComplexVec> {
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::domain(format!(
            "correlation must lie in [-1, 1], got {rho}"
        )));
    }
    if rho == 1.0 {
        return Ok(h0.clone());
    }
    let r = innovation(lp, d, angle, h0.len(), s)?;
    let mut h = h0.scale_real(rho);
    h.axpy(C64::new((1.0 - rho * rho).sqrt(), 0.0), &r);
    Ok(h)
}

/// Jointly correlated channel values at sample `offsets` relative to a
/// reference instant, with `cov(h[a], h[b]) = ρ(a − b)·R`.
///
/// `offsets[0]` must be 0 and is pinned to `h_ref`. The factorization
/// follows the order given, so the value at `offsets[1]` is exactly
/// `ρ·h_ref + ρ̂·r` for a fresh innovation `r`; later offsets are drawn
/// conditionally on both.
pub fn correlated_sequence(
    h_ref: &ComplexVec,
    offsets: &[i64],
    aging: &AgingModel,
    lp: &LinkParams,
    d: f64,
    angle: f64,
    s: &mut Sampler,
) -> Result<Vec<ComplexVec>> {
    if offsets.first() != Some(&0) {
        return Err(Error::domain(
            "sequence offsets must start at the reference instant 0",
        ));
    }
    let n = offsets.len();
    let mut corr = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            corr[i * n + j] = aging.rho((offsets[i] - offsets[j]) as f64)?;
        }
    }
    let chol = cholesky_real_psd(&corr, n)?;
    let l = h_ref.len();
    let mut basis = Vec::with_capacity(n);
    basis.push(h_ref.clone());
    for _ in 1..n {
        basis.push(innovation(lp, d, angle, l, s)?);
    }
    Ok((0..n)
        .map(|i| {
            let mut h = ComplexVec::zeros(l);
            for (j, b) in basis.iter().enumerate().take(i + 1) {
                let c = chol[i * n + j];
                if c != 0.0 {
                    h.axpy(C64::new(c, 0.0), b);
                }
            }
            h
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{link_params, synth_channel, LinkKind, ScenarioConfig};
    use crate::numerics::rng::RngStream;

    #[test]
    fn reference_correlations() {
        assert_eq!(temporal_corr(20.0, 1.9e9, 1e-4, 0.0).unwrap(), 1.0);
        assert!((temporal_corr(20.0, 1.9e9, 1e-4, 8.0).unwrap() - 0.9012).abs() < 1e-4);
        assert!((temporal_corr(10.0, 1.9e9, 1e-4, 8.0).unwrap() - 0.9748).abs() < 1e-4);
        assert!(temporal_corr(-1.0, 1.9e9, 1e-4, 8.0).is_err());
    }

    #[test]
    fn rho_identity() {
        let m = AgingModel {
            speed: 20.0,
            carrier_hz: 1.9e9,
            sample_interval: 1e-4,
        };
        for lag in 0..30 {
            let r = m.rho(lag as f64).unwrap();
            let rh = m.rho_hat(lag as f64).unwrap();
            assert!((r * r + rh * rh - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_correlation_keeps_channel() {
        let cfg = ScenarioConfig::default();
        let lp = link_params(LinkKind::Ag, &cfg);
        let mut s = RngStream::new(4).sampler();
        let h0 = synth_channel(&lp, 80.0, 0.2, 2, &mut s).unwrap();
        assert_eq!(age_channel(&h0, 1.0, &lp, 80.0, 0.2, &mut s).unwrap(), h0);
        assert!(age_channel(&h0, 1.5, &lp, 80.0, 0.2, &mut s).is_err());
    }

    #[test]
    fn sequence_pins_reference_and_matches_one_step_form() {
        let cfg = ScenarioConfig::default();
        let lp = link_params(LinkKind::Gtg, &cfg);
        let model = cfg.aging(cfg.k_a);
        let mut s = RngStream::new(4).sampler();
        let h0 = synth_channel(&lp, 80.0, 0.2, 2, &mut s).unwrap();
        let seq =
            correlated_sequence(&h0, &[0, 8, -1, -2, -3], &model, &lp, 80.0, 0.2, &mut s).unwrap();
        assert_eq!(seq[0], h0);
        assert_eq!(seq.len(), 5);
        assert!(correlated_sequence(&h0, &[1, 0], &model, &lp, 80.0, 0.2, &mut s).is_err());
    }
}
