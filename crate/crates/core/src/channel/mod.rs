//! Scenario geometry, link classification, Rician/Rayleigh synthesis and
//! Jakes-correlated channel aging.

mod aging;
mod fading;
mod geometry;

pub use aging::{age_channel, correlated_sequence, temporal_corr, AgingModel, SPEED_OF_LIGHT};
pub use fading::{
    link_covariance, link_params, los_nlos_switch, steering_vector, synth_channel, LinkKind,
    LinkParams,
};
pub use geometry::{build_geometry, Geometry, Position};

use serde::{Deserialize, Serialize};

use crate::numerics::linalg::ComplexVec;
use crate::numerics::rng::RngStream;
use crate::{Error, Result};

/// Deployment and mobility parameters of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Side of the square deployment area (m).
    pub area_side: f64,
    pub m_g: usize,
    pub m_a: usize,
    pub k_g: usize,
    pub k_a: usize,
    /// Antennas per AP.
    pub antennas: usize,
    pub altitude_min: f64,
    pub altitude_max: f64,
    pub v_aerial: f64,
    pub v_ground: f64,
    pub carrier_hz: f64,
    /// Sampling interval (s).
    pub sample_interval: f64,
    /// Aging interval in samples.
    pub aging_interval: usize,
    /// Receiver noise power (W). Path gains are divided by it so that the
    /// noise is unit-variance and transmit powers stay in watts.
    pub noise_power: f64,
    /// When set, AG links switch between LoS (K = 10) and Rayleigh with this
    /// LoS probability.
    pub p_los: Option<f64>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            area_side: 200.0,
            m_g: 6,
            m_a: 2,
            k_g: 4,
            k_a: 2,
            antennas: 2,
            altitude_min: 100.0,
            altitude_max: 200.0,
            v_aerial: 20.0,
            v_ground: 10.0,
            carrier_hz: 1.9e9,
            sample_interval: 1e-4,
            aging_interval: 8,
            noise_power: 1e-7,
            p_los: None,
            seed: 42,
        }
    }
}

impl ScenarioConfig {
    pub fn num_aps(&self) -> usize {
        self.m_g + self.m_a
    }

    pub fn num_ues(&self) -> usize {
        self.k_g + self.k_a
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m.to_string()));
        if self.m_g + self.m_a == 0 || self.k_g + self.k_a == 0 {
            return fail("at least one AP and one UE are required");
        }
        if self.antennas == 0 {
            return fail("antennas per AP must be at least 1");
        }
        if !(self.area_side > 0.0) || !self.area_side.is_finite() {
            return fail("area side must be positive");
        }
        if !(self.altitude_min >= 0.0 && self.altitude_min <= self.altitude_max) {
            return fail("altitude range must satisfy 0 <= low <= high");
        }
        if !(self.v_aerial >= 0.0 && self.v_ground >= 0.0) {
            return fail("speeds must be non-negative");
        }
        if !(self.carrier_hz > 0.0 && self.sample_interval > 0.0) {
            return fail("carrier frequency and sampling interval must be positive");
        }
        if !(self.noise_power > 0.0) {
            return fail("noise power must be positive");
        }
        if let Some(p) = self.p_los {
            if !(0.0..=1.0).contains(&p) {
                return fail("p_los must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// Speed of UE `k` (aerial UEs are indexed first).
    pub fn ue_speed(&self, k: usize) -> f64 {
        if k < self.k_a {
            self.v_aerial
        } else {
            self.v_ground
        }
    }

    pub fn ue_is_aerial(&self, k: usize) -> bool {
        k < self.k_a
    }

    /// Ground APs are indexed first, then aerial APs.
    pub fn ap_is_aerial(&self, m: usize) -> bool {
        m >= self.m_g
    }

    /// Link class between UE `k` and AP `m`.
    pub fn link_kind(&self, k: usize, m: usize) -> LinkKind {
        match (self.ue_is_aerial(k), self.ap_is_aerial(m)) {
            (true, true) => LinkKind::Ata,
            (false, false) => LinkKind::Gtg,
            _ => LinkKind::Ag,
        }
    }

    pub fn aging(&self, k: usize) -> AgingModel {
        AgingModel {
            speed: self.ue_speed(k),
            carrier_hz: self.carrier_hz,
            sample_interval: self.sample_interval,
        }
    }
}

/// Per-link static description: statistics, distance and LoS direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkInfo {
    pub params: LinkParams,
    pub distance: f64,
    pub angle: f64,
}

/// Channel tensor `h[k][m] ∈ ℂ^L` at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSnapshot {
    pub num_ues: usize,
    pub num_aps: usize,
    pub antennas: usize,
    pub t: i64,
    h: Vec<ComplexVec>,
    pub distance: Vec<f64>,
    pub kinds: Vec<LinkKind>,
}

impl ChannelSnapshot {
    pub fn new(
        num_ues: usize,
        num_aps: usize,
        antennas: usize,
        t: i64,
        h: Vec<ComplexVec>,
        distance: Vec<f64>,
        kinds: Vec<LinkKind>,
    ) -> Result<Self> {
        let n = num_ues * num_aps;
        if h.len() != n
            || distance.len() != n
            || kinds.len() != n
            || h.iter().any(|v| v.len() != antennas)
        {
            return Err(Error::shape("channel snapshot dimensions inconsistent"));
        }
        Ok(Self {
            num_ues,
            num_aps,
            antennas,
            t,
            h,
            distance,
            kinds,
        })
    }

    pub fn h(&self, k: usize, m: usize) -> &ComplexVec {
        &self.h[k * self.num_aps + m]
    }

    pub fn all(&self) -> &[ComplexVec] {
        &self.h
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(ComplexVec::is_finite)
    }
}

/// One realized deployment: geometry plus per-link statistics.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    pub geometry: Geometry,
    links: Vec<LinkInfo>,
}

impl Scenario {
    /// Place nodes and classify links. AG links draw their LoS state from
    /// `cfg.p_los` when it is set.
    pub fn build(cfg: &ScenarioConfig, rng: &RngStream) -> Result<Self> {
        cfg.validate()?;
        let geometry = build_geometry(cfg, &rng.child(0))?;
        let (k_n, m_n) = (cfg.num_ues(), cfg.num_aps());
        let mut links = Vec::with_capacity(k_n * m_n);
        for k in 0..k_n {
            for m in 0..m_n {
                let kind = cfg.link_kind(k, m);
                let params = match (kind, cfg.p_los) {
                    (LinkKind::Ag, Some(p)) => {
                        let mut s = rng
                            .derive(&[
                                1,
                                ue_key(cfg, k).0,
                                ue_key(cfg, k).1,
                                ap_key(cfg, m).0,
                                ap_key(cfg, m).1,
                            ])
                            .sampler();
                        los_nlos_switch(p, cfg, &mut s)?
                    }
                    _ => link_params(kind, cfg),
                };
                let (distance, angle) = geometry.link(k, m);
                links.push(LinkInfo {
                    params,
                    distance,
                    angle,
                });
            }
        }
        Ok(Self {
            cfg: cfg.clone(),
            geometry,
            links,
        })
    }

    pub fn num_ues(&self) -> usize {
        self.cfg.num_ues()
    }

    pub fn num_aps(&self) -> usize {
        self.cfg.num_aps()
    }

    pub fn link(&self, k: usize, m: usize) -> &LinkInfo {
        &self.links[k * self.num_aps() + m]
    }

    pub fn links(&self) -> &[LinkInfo] {
        &self.links
    }

    /// Stream for link `(k, m)` keyed by entity class and class-local
    /// index, so scenarios that differ only in counts share realizations.
    pub fn link_stream(&self, rng: &RngStream, k: usize, m: usize) -> RngStream {
        let (uc, ui) = ue_key(&self.cfg, k);
        let (ac, ai) = ap_key(&self.cfg, m);
        rng.derive(&[2, uc, ui, ac, ai])
    }

    /// Draw one snapshot of independent channels at instant `t`.
    pub fn snapshot(&self, rng: &RngStream, t: i64) -> Result<ChannelSnapshot> {
        let (k_n, m_n, l) = (self.num_ues(), self.num_aps(), self.cfg.antennas);
        let mut h = Vec::with_capacity(k_n * m_n);
        for k in 0..k_n {
            for m in 0..m_n {
                let info = self.link(k, m);
                let mut s = self.link_stream(rng, k, m).sampler();
                h.push(synth_channel(
                    &info.params,
                    info.distance,
                    info.angle,
                    l,
                    &mut s,
                )?);
            }
        }
        ChannelSnapshot::new(
            k_n,
            m_n,
            l,
            t,
            h,
            self.links.iter().map(|i| i.distance).collect(),
            self.links.iter().map(|i| i.params.kind).collect(),
        )
    }
}

/// (class, class-local index) of UE `k`: class 0 ground, 1 aerial.
pub fn ue_key(cfg: &ScenarioConfig, k: usize) -> (u32, u32) {
    if cfg.ue_is_aerial(k) {
        (1, k as u32)
    } else {
        (0, (k - cfg.k_a) as u32)
    }
}

/// (class, class-local index) of AP `m`: class 0 ground, 1 aerial.
pub fn ap_key(cfg: &ScenarioConfig, m: usize) -> (u32, u32) {
    if cfg.ap_is_aerial(m) {
        (1, (m - cfg.m_g) as u32)
    } else {
        (0, m as u32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_classifies_links() {
        let cfg = ScenarioConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.link_kind(0, cfg.m_g), LinkKind::Ata);
        assert_eq!(cfg.link_kind(0, 0), LinkKind::Ag);
        assert_eq!(cfg.link_kind(cfg.k_a, cfg.m_g), LinkKind::Ag);
        assert_eq!(cfg.link_kind(cfg.k_a, 0), LinkKind::Gtg);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = ScenarioConfig {
            altitude_min: 300.0,
            ..ScenarioConfig::default()
        };
        assert!(c.validate().is_err());
        c.altitude_min = 100.0;
        c.v_ground = -1.0;
        assert!(c.validate().is_err());
        c.v_ground = 1.0;
        c.m_g = 0;
        c.m_a = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn snapshot_dimensions_and_finiteness() {
        let cfg = ScenarioConfig::default();
        let sc = Scenario::build(&cfg, &RngStream::new(1)).unwrap();
        let snap = sc.snapshot(&RngStream::new(2), 0).unwrap();
        assert_eq!(snap.all().len(), cfg.num_ues() * cfg.num_aps());
        assert!(snap.all().iter().all(|h| h.len() == cfg.antennas));
        assert!(snap.is_finite());
    }

    #[test]
    fn shared_keys_across_ue_counts() {
        let small = ScenarioConfig::default();
        let big = ScenarioConfig {
            k_g: 6,
            ..small.clone()
        };
        let a = Scenario::build(&small, &RngStream::new(5)).unwrap();
        let b = Scenario::build(&big, &RngStream::new(5)).unwrap();
        assert_eq!(a.link(0, 0), b.link(0, 0));
        assert_eq!(a.link(small.k_a, 3), b.link(big.k_a, 3));
    }
}
