use serde::{Deserialize, Serialize};

use super::{ap_key, ue_key, ScenarioConfig};
use crate::numerics::rng::RngStream;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn distance(&self, o: &Position) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2) + (self.z - o.z).powi(2)).sqrt()
    }
}

/// AP and UE coordinates. Ground APs precede aerial APs; aerial UEs precede
/// ground UEs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub aps: Vec<Position>,
    pub ues: Vec<Position>,
}

impl Geometry {
    /// Distance and azimuth (radians, AP towards UE) of link `(k, m)`.
    pub fn link(&self, k: usize, m: usize) -> (f64, f64) {
        let (u, a) = (&self.ues[k], &self.aps[m]);
        (u.distance(a), (u.y - a.y).atan2(u.x - a.x))
    }
}

fn place(cfg: &ScenarioConfig, aerial: bool, rng: &RngStream) -> Position {
    let mut s = rng.sampler();
    let x = s.uniform_in(0.0, cfg.area_side);
    let y = s.uniform_in(0.0, cfg.area_side);
    let z = if aerial {
        s.uniform_in(cfg.altitude_min, cfg.altitude_max)
    } else {
        0.0
    };
    Position { x, y, z }
}

/// Uniform placement in the square; aerial nodes get a uniform altitude.
/// A UE that coincides exactly with an AP is re-drawn.
pub fn build_geometry(cfg: &ScenarioConfig, rng: &RngStream) -> Result<Geometry> {
    cfg.validate()?;
    let aps: Vec<Position> = (0..cfg.num_aps())
        .map(|m| {
            let (c, i) = ap_key(cfg, m);
            place(cfg, cfg.ap_is_aerial(m), &rng.derive(&[0, c, i, 0]))
        })
        .collect();
    let ues = (0..cfg.num_ues())
        .map(|k| {
            let (c, i) = ue_key(cfg, k);
            let mut attempt = 0;
            loop {
                let p = place(cfg, cfg.ue_is_aerial(k), &rng.derive(&[1, c, i, attempt]));
                if aps.iter().all(|a| a.distance(&p) > 0.0) {
                    break p;
                }
                attempt += 1;
            }
        })
        .collect();
    Ok(Geometry { aps, ues })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placement_respects_bounds_and_is_deterministic() {
        let cfg = ScenarioConfig::default();
        let g = build_geometry(&cfg, &RngStream::new(11)).unwrap();
        let h = build_geometry(&cfg, &RngStream::new(11)).unwrap();
        assert_eq!(g, h);
        for (m, a) in g.aps.iter().enumerate() {
            assert!((0.0..=200.0).contains(&a.x) && (0.0..=200.0).contains(&a.y));
            if cfg.ap_is_aerial(m) {
                assert!((100.0..=200.0).contains(&a.z));
            } else {
                assert_eq!(a.z, 0.0);
            }
        }
        for (k, u) in g.ues.iter().enumerate() {
            assert!((0.0..=200.0).contains(&u.x) && (0.0..=200.0).contains(&u.y));
            if cfg.ue_is_aerial(k) {
                assert!((100.0..=200.0).contains(&u.z));
            }
            for m in 0..cfg.num_aps() {
                assert!(g.link(k, m).0 > 0.0);
            }
        }
    }
}
