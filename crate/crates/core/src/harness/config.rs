use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::allocator::AllocatorConfig;
use crate::channel::ScenarioConfig;
use crate::fbl::{UePowerModel, UrllcConstraints};
use crate::predictor::PredictorConfig;
use crate::uplink::FrameConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub samples: usize,
    pub train_fraction: f64,
    /// LS pilot power (W); `None` uses `p_max`.
    pub pilot_power: Option<f64>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            train_fraction: 0.8,
            pilot_power: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Total UE count; a third (rounded) of the UEs are aerial.
    K,
    TA,
    TauP,
    /// Transmission latency in seconds; sets both the frame and the URLLC
    /// budget.
    TTr,
    VAerial,
    PLos,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::K => "k",
            SweepAxis::TA => "t_a",
            SweepAxis::TauP => "tau_p",
            SweepAxis::TTr => "t_tr",
            SweepAxis::VAerial => "v_aerial",
            SweepAxis::PLos => "p_los",
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the allocator's CSI comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsiSource {
    /// Noise-free channel at the transmission instant.
    Perfect,
    /// Latest LS estimate, no prediction.
    Estimated,
    Kalman,
    Cpnet,
}

impl CsiSource {
    pub fn name(self) -> &'static str {
        match self {
            CsiSource::Perfect => "perfect",
            CsiSource::Estimated => "estimated",
            CsiSource::Kalman => "kalman",
            CsiSource::Cpnet => "cpnet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "perfect" => CsiSource::Perfect,
            "estimated" | "persistence" => CsiSource::Estimated,
            "kalman" => CsiSource::Kalman,
            "cpnet" => CsiSource::Cpnet,
            _ => return Err(Error::config(format!("unknown CSI source `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocatorKind {
    /// Every UE at `p_max`.
    Uniform,
    Iterative,
    Oracle,
    Moe,
    Mlp,
}

impl AllocatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AllocatorKind::Uniform => "uniform",
            AllocatorKind::Iterative => "iterative",
            AllocatorKind::Oracle => "oracle",
            AllocatorKind::Moe => "moe",
            AllocatorKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
    pub trials: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            axis: None,
            values: Vec::new(),
            trials: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub csi: CsiSource,
    pub allocators: Vec<AllocatorKind>,
    /// Record per-call wall-clock time; otherwise `wall_ms` is 0 so that
    /// outputs stay byte-reproducible.
    pub record_timing: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            csi: CsiSource::Cpnet,
            allocators: vec![
                AllocatorKind::Uniform,
                AllocatorKind::Iterative,
                AllocatorKind::Mlp,
                AllocatorKind::Moe,
            ],
            record_timing: false,
        }
    }
}

/// Complete run description. `scenario.seed` is the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub frame: FrameConfig,
    pub urllc: UrllcConstraints,
    pub power: UePowerModel,
    pub predictor: PredictorConfig,
    pub allocator: AllocatorConfig,
    pub dataset: DatasetConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("config encode: {e}")))
    }

    pub fn seed(&self) -> u64 {
        self.scenario.seed
    }

    pub fn pilot_power(&self) -> f64 {
        self.dataset.pilot_power.unwrap_or(self.urllc.p_max)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.frame.validate(self.scenario.num_ues())?;
        self.urllc.validate()?;
        self.power.validate()?;
        self.predictor.validate(self.scenario.antennas)?;
        self.allocator.validate()?;
        if self.frame.t_tr != self.urllc.t_tr {
            return Err(Error::config(format!(
                "frame t_tr = {} differs from URLLC t_tr = {}",
                self.frame.t_tr, self.urllc.t_tr
            )));
        }
        if self.scenario.aging_interval == 0 {
            return Err(Error::config("aging interval must be at least one sample"));
        }
        if !(self.pilot_power() > 0.0) {
            return Err(Error::config("pilot power must be positive"));
        }
        let d = &self.dataset;
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::config("train fraction must lie in (0, 1)"));
        }
        if self.sweep.axis.is_none() && !self.sweep.values.is_empty() {
            return Err(Error::config("sweep values given without an axis"));
        }
        Ok(())
    }

    pub fn num_train(&self) -> usize {
        ((self.dataset.samples as f64 * self.dataset.train_fraction).round() as usize)
            .min(self.dataset.samples)
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short form carried by every metrics row.
    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }

    /// Copy with `axis = value` applied.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Self> {
        let mut c = self.clone();
        let count = |v: f64, what: &str| -> Result<usize> {
            if !(v >= 0.0) || v.fract() != 0.0 {
                return Err(Error::config(format!(
                    "{what} must be a non-negative integer, got {v}"
                )));
            }
            Ok(v as usize)
        };
        match axis {
            SweepAxis::K => {
                let k = count(value, "K")?;
                c.scenario.k_a = (k as f64 / 3.0).round() as usize;
                c.scenario.k_g = k - c.scenario.k_a;
            }
            SweepAxis::TA => c.scenario.aging_interval = count(value, "t_a")?,
            SweepAxis::TauP => c.frame.tau_p = count(value, "tau_p")?,
            SweepAxis::TTr => {
                c.frame.t_tr = value;
                c.urllc.t_tr = value;
            }
            SweepAxis::VAerial => c.scenario.v_aerial = value,
            SweepAxis::PLos => c.scenario.p_los = Some(value),
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.num_train(), 1600);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("[scenario]\nm_g = 4\nbogus = 1\n").is_err());
        assert!(RunConfig::from_toml("typo = 3\n").is_err());
        let c = RunConfig::from_toml("[scenario]\nm_g = 4\n").unwrap();
        assert_eq!(c.scenario.m_g, 4);
    }

    #[test]
    fn axis_application() {
        let c = RunConfig::default();
        let k8 = c.with_axis(SweepAxis::K, 8.0).unwrap();
        assert_eq!((k8.scenario.k_a, k8.scenario.k_g), (3, 5));
        let k4 = c.with_axis(SweepAxis::K, 4.0).unwrap();
        assert_eq!((k4.scenario.k_a, k4.scenario.k_g), (1, 3));
        let t = c.with_axis(SweepAxis::TTr, 3e-4).unwrap();
        assert_eq!((t.frame.t_tr, t.urllc.t_tr), (3e-4, 3e-4));
        assert!(c.with_axis(SweepAxis::TauP, 3.0).is_err());
        assert!(c.with_axis(SweepAxis::TA, 2.5).is_err());
        assert_ne!(c.hash(), t.hash());
    }

    #[test]
    fn mismatched_latency_is_rejected() {
        let mut c = RunConfig::default();
        c.frame.t_tr = 3e-4;
        assert!(c.validate().is_err());
    }
}
