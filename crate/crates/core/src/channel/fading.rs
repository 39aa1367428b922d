use serde::{Deserialize, Serialize};

use super::ScenarioConfig;
use crate::numerics::linalg::{ComplexMat, ComplexVec, C64};
use crate::numerics::rng::Sampler;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    /// Aerial UE to aerial AP.
    Ata,
    /// Air–ground, either direction.
    Ag,
    /// Ground UE to ground AP.
    Gtg,
}

impl LinkKind {
    pub const ALL: [LinkKind; 3] = [LinkKind::Ata, LinkKind::Ag, LinkKind::Gtg];

    pub fn name(self) -> &'static str {
        match self {
            LinkKind::Ata => "ata",
            LinkKind::Ag => "ag",
            LinkKind::Gtg => "gtg",
        }
    }

    /// Dense index in [`LinkKind::ALL`] order.
    pub fn index(self) -> usize {
        match self {
            LinkKind::Ata => 0,
            LinkKind::Ag => 1,
            LinkKind::Gtg => 2,
        }
    }
}

/// Fading statistics of one link class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub kind: LinkKind,
    /// Rician K-factor (linear); 0 is Rayleigh.
    pub k_factor: f64,
    pub a_los: f64,
    pub a_nlos: f64,
    /// Multiplier on `d^{-A}`: the reciprocal of the noise power.
    pub gain_scale: f64,
}

impl LinkParams {
    pub fn los_gain(&self, d: f64) -> f64 {
        self.gain_scale * d.powf(-self.a_los)
    }

    pub fn nlos_gain(&self, d: f64) -> f64 {
        self.gain_scale * d.powf(-self.a_nlos)
    }

    /// `K/(K+1)` with the `K → ∞` limit handled.
    fn los_weight(&self) -> f64 {
        if self.k_factor.is_infinite() {
            1.0
        } else {
            self.k_factor / (self.k_factor + 1.0)
        }
    }

    /// Average power per antenna, `E‖h‖²/L`.
    pub fn mean_gain(&self, d: f64) -> f64 {
        let w = self.los_weight();
        w * self.los_gain(d) + (1.0 - w) * self.nlos_gain(d)
    }
}

/// Class constants: ATA `K = 15, A_L = 2.0, A_N = 2.3`; AG `K = 10,
/// A_L = 2.1, A_N = 2.5`; GTG Rayleigh with `A_g = 2.7`.
pub fn link_params(kind: LinkKind, cfg: &ScenarioConfig) -> LinkParams {
    let gain_scale = 1.0 / cfg.noise_power;
    match kind {
        LinkKind::Ata => LinkParams {
            kind,
            k_factor: 15.0,
            a_los: 2.0,
            a_nlos: 2.3,
            gain_scale,
        },
        LinkKind::Ag => LinkParams {
            kind,
            k_factor: 10.0,
            a_los: 2.1,
            a_nlos: 2.5,
            gain_scale,
        },
        LinkKind::Gtg => LinkParams {
            kind,
            k_factor: 0.0,
            a_los: 2.7,
            a_nlos: 2.7,
            gain_scale,
        },
    }
}

/// Half-wavelength ULA response `e^{jπ n sinθ}/√L`, `n = 0…L−1`.
pub fn steering_vector(l: usize, angle: f64) -> Result<ComplexVec> {
    if l == 0 {
        return Err(Error::domain("steering vector needs at least one antenna"));
    }
    let norm = 1.0 / (l as f64).sqrt();
    let phase = std::f64::consts::PI * angle.sin();
    Ok(ComplexVec::from_vec(
        (0..l)
            .map(|n| C64::from_polar(norm, phase * n as f64))
            .collect(),
    ))
}

/// One fading draw: Rician mixture of a random-phase LoS term and i.i.d.
/// `CN(0,1)` scattering; Rayleigh when `K = 0`.
pub fn synth_channel(
    lp: &LinkParams,
    d: f64,
    angle: f64,
    l: usize,
    s: &mut Sampler,
) -> Result<ComplexVec> {
    if !(d > 0.0) {
        return Err(Error::domain(format!(
            "link distance must be positive, got {d}"
        )));
    }
    let w = lp.los_weight();
    let nlos = ((1.0 - w) * lp.nlos_gain(d)).sqrt();
    let mut h = ComplexVec::from_vec((0..l).map(|_| s.cnormal() * nlos).collect());
    if w > 0.0 {
        let phi = s.uniform_in(-std::f64::consts::PI, std::f64::consts::PI);
        let a = steering_vector(l, angle)?;
        h.axpy(C64::from_polar((w * lp.los_gain(d)).sqrt(), phi), &a);
    }
    Ok(h)
}

/// `R = K/(K+1)·d^{-A_L}·a aᴴ + 1/(K+1)·d^{-A_N}·I`.
pub fn link_covariance(lp: &LinkParams, d: f64, angle: f64, l: usize) -> Result<ComplexMat> {
    if !(d > 0.0) {
        return Err(Error::domain(format!(
            "link distance must be positive, got {d}"
        )));
    }
    let w = lp.los_weight();
    let mut r = ComplexMat::identity(l).scale((1.0 - w) * lp.nlos_gain(d));
    if w > 0.0 {
        let a = steering_vector(l, angle)?;
        r = r.add(&ComplexMat::outer(&a, &a).scale(w * lp.los_gain(d)))?;
    }
    Ok(r)
}

/// AG statistics with LoS (`K = 10`) drawn with probability `p_los`,
/// otherwise Rayleigh (`K = 0`).
pub fn los_nlos_switch(p_los: f64, cfg: &ScenarioConfig, s: &mut Sampler) -> Result<LinkParams> {
    if !(0.0..=1.0).contains(&p_los) {
        return Err(Error::domain(format!(
            "p_los must lie in [0, 1], got {p_los}"
        )));
    }
    let mut lp = link_params(LinkKind::Ag, cfg);
    if !s.bernoulli(p_los) {
        lp.k_factor = 0.0;
    }
    Ok(lp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;

    fn unit_cfg() -> ScenarioConfig {
        ScenarioConfig {
            noise_power: 1.0,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn class_constants() {
        let c = unit_cfg();
        let ata = link_params(LinkKind::Ata, &c);
        assert_eq!((ata.k_factor, ata.a_los, ata.a_nlos), (15.0, 2.0, 2.3));
        let ag = link_params(LinkKind::Ag, &c);
        assert_eq!((ag.k_factor, ag.a_los, ag.a_nlos), (10.0, 2.1, 2.5));
        let gtg = link_params(LinkKind::Gtg, &c);
        assert_eq!((gtg.k_factor, gtg.a_nlos), (0.0, 2.7));
    }

    #[test]
    fn steering_examples() {
        let a = steering_vector(4, 0.0).unwrap();
        assert!(a
            .as_slice()
            .iter()
            .all(|z| (z - C64::new(0.5, 0.0)).norm() < 1e-15));
        let b = steering_vector(2, std::f64::consts::FRAC_PI_2).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((b[0] - C64::new(r, 0.0)).norm() < 1e-12);
        assert!((b[1] - C64::new(-r, 0.0)).norm() < 1e-12);
        for l in 1..9 {
            for &t in &[-2.0, 0.3, 1.1] {
                assert!((steering_vector(l, t).unwrap().norm_sqr() - 1.0).abs() < 1e-12);
            }
        }
        assert!(steering_vector(0, 0.0).is_err());
    }

    #[test]
    fn los_limit_norm() {
        let mut lp = link_params(LinkKind::Ag, &unit_cfg());
        lp.k_factor = 1e12;
        let mut s = RngStream::new(3).sampler();
        let h = synth_channel(&lp, 50.0, 0.4, 4, &mut s).unwrap();
        let expect = 50f64.powf(-lp.a_los / 2.0);
        assert!((h.norm_sqr().sqrt() / expect - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_non_positive_distance() {
        let lp = link_params(LinkKind::Gtg, &unit_cfg());
        let mut s = RngStream::new(3).sampler();
        assert!(synth_channel(&lp, 0.0, 0.0, 2, &mut s).is_err());
        assert!(link_covariance(&lp, -1.0, 0.0, 2).is_err());
    }

    #[test]
    fn covariance_is_hermitian_psd() {
        let lp = link_params(LinkKind::Ata, &unit_cfg());
        let r = link_covariance(&lp, 30.0, 0.7, 4).unwrap();
        assert!(r.hermitian_defect() < 1e-15);
        // PSD: xᴴ R x >= 0 for a few probe vectors.
        let mut s = RngStream::new(9).sampler();
        for _ in 0..50 {
            let x = ComplexVec::from_vec((0..4).map(|_| s.cnormal()).collect());
            let rx = r.matvec(&x).unwrap();
            assert!(x.dot(&rx).re >= -1e-12);
        }
        let g = link_covariance(&link_params(LinkKind::Gtg, &unit_cfg()), 100.0, 0.0, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 100f64.powf(-2.7) } else { 0.0 };
                assert!((g.get(i, j).re - want).abs() < 1e-20 && g.get(i, j).im == 0.0);
            }
        }
    }

    #[test]
    fn switch_extremes() {
        let c = unit_cfg();
        let mut s = RngStream::new(1).sampler();
        for _ in 0..100 {
            assert_eq!(los_nlos_switch(1.0, &c, &mut s).unwrap().k_factor, 10.0);
            assert_eq!(los_nlos_switch(0.0, &c, &mut s).unwrap().k_factor, 0.0);
        }
        assert!(los_nlos_switch(1.5, &c, &mut s).is_err());
    }
}
