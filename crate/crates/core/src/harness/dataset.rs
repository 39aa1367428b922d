use std::ops::Range;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::allocator::SinrCoeffs;
use crate::channel::{correlated_sequence, link_covariance, synth_channel, LinkKind, Scenario};
use crate::fbl::ue_metrics;
use crate::nn::binfile;
use crate::numerics::linalg::ComplexVec;
use crate::numerics::rng::RngStream;
use crate::predictor::{op, unop, LinkSet};
use crate::uplink::instantaneous_moments;
use crate::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"CFMOEDS\0";
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Normalizers of the joint indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub eta_max: f64,
    pub omega_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
    pub num_samples: usize,
    pub num_train: usize,
    pub num_ues: usize,
    pub num_aps: usize,
    pub antennas: usize,
    pub seq_len: usize,
    pub aging_interval: usize,
    /// Per UE.
    pub est_var: Vec<f64>,
    pub rho_step: Vec<f64>,
    pub rho_ahead: Vec<f64>,
    pub normalizers: Normalizers,
}

/// Samples of `V` LS estimates per link, the LS estimate and the
/// noise-free channel `t_a` samples ahead, the statistical `E‖ĥ‖²` and
/// the link distance.
///
/// Per-link record layout: `[V·2L history | 2L label | 2L truth | Θ | d]`,
/// links UE-major within a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    data: Vec<f64>,
}

fn link_width(v: usize, l: usize) -> usize {
    (v + 2) * 2 * l + 2
}

/// Flat record block of one sample.
pub fn draw_sample(cfg: &RunConfig, rng: &RngStream) -> Result<Vec<f64>> {
    let sc = &cfg.scenario;
    let (kn, mn, l) = (sc.num_ues(), sc.num_aps(), sc.antennas);
    let v = cfg.predictor.seq_len;
    let ta = sc.aging_interval as i64;
    let est_var = 1.0 / (cfg.pilot_power() * cfg.frame.tau_p as f64);
    let sd = est_var.sqrt();
    let scenario = Scenario::build(sc, rng)?;
    let chan = rng.child(7);
    let mut offsets = vec![0, ta];
    offsets.extend((1..v as i64).map(|j| -j));
    let mut out = Vec::with_capacity(kn * mn * link_width(v, l));
    for k in 0..kn {
        let aging = sc.aging(k);
        for m in 0..mn {
            let info = scenario.link(k, m);
            let mut s = scenario.link_stream(&chan, k, m).sampler();
            let h0 = synth_channel(&info.params, info.distance, info.angle, l, &mut s)?;
            let seq = correlated_sequence(
                &h0,
                &offsets,
                &aging,
                &info.params,
                info.distance,
                info.angle,
                &mut s,
            )?;
            let mut noisy = |h: &ComplexVec| -> ComplexVec {
                ComplexVec::from_vec(h.as_slice().iter().map(|z| z + s.cnormal() * sd).collect())
            };
            // seq = [λ, λ+t_a, λ−1, …, λ−V+1]; history is written oldest first.
            let mut hist: Vec<ComplexVec> = seq[2..].iter().rev().map(&mut noisy).collect();
            hist.push(noisy(&seq[0]));
            let label = noisy(&seq[1]);
            for h in &hist {
                out.extend(op(h));
            }
            out.extend(op(&label));
            out.extend(op(&seq[1]));
            let r = link_covariance(&info.params, info.distance, info.angle, l)?;
            out.push(r.trace().re + l as f64 * est_var);
            out.push(info.distance);
        }
    }
    Ok(out)
}

/// Linear-interpolation percentile, `q ∈ [0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

impl Dataset {
    /// Build samples `0..n` of `cfg` from streams `root/[10, i]`.
    pub fn generate(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.dataset.samples;
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let root = RngStream::new(cfg.seed());
        Self::from_streams(
            cfg,
            (0..n).map(|i| root.derive(&[10, i as u32])).collect(),
            cfg.num_train(),
            None,
        )
    }

    /// Samples drawn from the given streams; the first `num_train` form the
    /// training split. Normalizers are calibrated on the training split
    /// unless given.
    pub fn from_streams(
        cfg: &RunConfig,
        streams: Vec<RngStream>,
        num_train: usize,
        normalizers: Option<Normalizers>,
    ) -> Result<Self> {
        cfg.validate()?;
        let blocks: Vec<Result<Vec<f64>>> =
            streams.par_iter().map(|r| draw_sample(cfg, r)).collect();
        let mut data = Vec::new();
        for b in blocks {
            data.extend(b?);
        }
        let sc = &cfg.scenario;
        let kn = sc.num_ues();
        let est_var = 1.0 / (cfg.pilot_power() * cfg.frame.tau_p as f64);
        let mut rho_step = Vec::with_capacity(kn);
        let mut rho_ahead = Vec::with_capacity(kn);
        for k in 0..kn {
            rho_step.push(sc.aging(k).rho(1.0)?);
            rho_ahead.push(sc.aging(k).rho(sc.aging_interval as f64)?);
        }
        let mut ds = Self {
            header: DatasetHeader {
                format_version: DATASET_FORMAT_VERSION,
                config_hash: cfg.hash(),
                seed: cfg.seed(),
                config: cfg.clone(),
                num_samples: streams.len(),
                num_train: num_train.min(streams.len()),
                num_ues: kn,
                num_aps: sc.num_aps(),
                antennas: sc.antennas,
                seq_len: cfg.predictor.seq_len,
                aging_interval: sc.aging_interval,
                est_var: vec![est_var; kn],
                rho_step,
                rho_ahead,
                normalizers: Normalizers {
                    eta_max: 1.0,
                    omega_max: 1.0,
                },
            },
            data,
        };
        ds.header.normalizers = match normalizers {
            Some(n) => n,
            None => ds.calibrate(0..ds.header.num_train.max(1).min(ds.header.num_samples))?,
        };
        Ok(ds)
    }

    pub fn config(&self) -> &RunConfig {
        &self.header.config
    }

    pub fn len(&self) -> usize {
        self.header.num_samples
    }

    pub fn is_empty(&self) -> bool {
        self.header.num_samples == 0
    }

    pub fn train_range(&self) -> Range<usize> {
        0..self.header.num_train
    }

    pub fn test_range(&self) -> Range<usize> {
        self.header.num_train..self.header.num_samples
    }

    fn width(&self) -> usize {
        link_width(self.header.seq_len, self.header.antennas)
    }

    fn record(&self, sample: usize, link: usize) -> &[f64] {
        let w = self.width();
        let per = self.header.num_ues * self.header.num_aps;
        let at = (sample * per + link) * w;
        &self.data[at..at + w]
    }

    pub fn kind(&self, k: usize, m: usize) -> LinkKind {
        self.header.config.scenario.link_kind(k, m)
    }

    pub fn history(&self, sample: usize, k: usize, m: usize) -> Result<Vec<ComplexVec>> {
        let w = 2 * self.header.antennas;
        let r = self.record(sample, k * self.header.num_aps + m);
        (0..self.header.seq_len)
            .map(|v| unop(&r[v * w..(v + 1) * w]))
            .collect()
    }

    fn part(&self, sample: usize, link: usize, slot: usize) -> &[f64] {
        let w = 2 * self.header.antennas;
        let at = (self.header.seq_len + slot) * w;
        &self.record(sample, link)[at..at + w]
    }

    pub fn label(&self, sample: usize, k: usize, m: usize) -> Result<ComplexVec> {
        unop(self.part(sample, k * self.header.num_aps + m, 0))
    }

    pub fn truth(&self, sample: usize, k: usize, m: usize) -> Result<ComplexVec> {
        unop(self.part(sample, k * self.header.num_aps + m, 1))
    }

    pub fn theta(&self, sample: usize, k: usize, m: usize) -> f64 {
        let r = self.record(sample, k * self.header.num_aps + m);
        r[r.len() - 2]
    }

    pub fn distance(&self, sample: usize, k: usize, m: usize) -> f64 {
        let r = self.record(sample, k * self.header.num_aps + m);
        r[r.len() - 1]
    }

    /// All `K·M` noise-free channels of one sample at the transmission
    /// instant.
    pub fn truth_all(&self, sample: usize) -> Result<Vec<ComplexVec>> {
        let (kn, mn) = (self.header.num_ues, self.header.num_aps);
        (0..kn * mn)
            .map(|i| self.truth(sample, i / mn, i % mn))
            .collect()
    }

    /// Links of `kind` in `samples`, with their `(sample, link)` origin.
    pub fn link_set(
        &self,
        kind: LinkKind,
        samples: Range<usize>,
    ) -> Result<(LinkSet, Vec<(usize, usize)>)> {
        let h = &self.header;
        let (v, l, mn) = (h.seq_len, h.antennas, h.num_aps);
        let w = 2 * l;
        let mut set = LinkSet::new(kind, v, l);
        let mut origin = Vec::new();
        for s in samples {
            for k in 0..h.num_ues {
                for m in 0..mn {
                    if self.kind(k, m) != kind {
                        continue;
                    }
                    let r = self.record(s, k * mn + m);
                    set.push(
                        &r[..v * w],
                        &r[v * w..(v + 1) * w],
                        &r[(v + 1) * w..(v + 2) * w],
                        r[r.len() - 2],
                        h.est_var[k],
                        h.rho_step[k],
                        h.rho_ahead[k],
                    )?;
                    origin.push((s, k * mn + m));
                }
            }
        }
        Ok((set, origin))
    }

    /// 90th percentile of single-UE, perfect-CSI, full-power SE and EE.
    pub fn calibrate(&self, samples: Range<usize>) -> Result<Normalizers> {
        let cfg = &self.header.config;
        let (kn, mn) = (self.header.num_ues, self.header.num_aps);
        let (tau_s, rate_b) = (cfg.frame.tau_s() as f64, cfg.frame.rate_bits_per_cu());
        let p = cfg.urllc.p_max;
        let mut se = Vec::new();
        let mut ee = Vec::new();
        for s in samples {
            for k in 0..kn {
                let h = (0..mn)
                    .map(|m| self.truth(s, k, m))
                    .collect::<Result<Vec<_>>>()?;
                let co =
                    SinrCoeffs::from_moments(&instantaneous_moments(1, mn, &h)?, cfg.frame.tau_p)?;
                let g = co.sinr(&[p])?[0];
                let u = ue_metrics(
                    g,
                    p,
                    tau_s,
                    cfg.urllc.eps_b,
                    rate_b,
                    cfg.frame.bandwidth_hz,
                    &cfg.power,
                )?;
                se.push(u.se);
                ee.push(u.ee);
            }
        }
        let n = Normalizers {
            eta_max: percentile(&se, 0.9)?,
            omega_max: percentile(&ee, 0.9)?,
        };
        if !(n.eta_max > 0.0 && n.omega_max > 0.0) {
            return Err(Error::DegenerateLink(
                "calibration produced zero normalizers".into(),
            ));
        }
        Ok(n)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        binfile::encode(
            DATASET_MAGIC,
            DATASET_FORMAT_VERSION,
            &self.header,
            &self.data,
        )
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let (header, data): (DatasetHeader, Vec<f64>) =
            binfile::decode(path, bytes, DATASET_MAGIC, DATASET_FORMAT_VERSION)?;
        let want = header.num_samples
            * header.num_ues
            * header.num_aps
            * link_width(header.seq_len, header.antennas);
        if data.len() != want {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("payload holds {} values, header implies {want}", data.len()),
            });
        }
        Ok(Self { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binfile::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &binfile::read_file(path)?)
    }
}
