use super::moments::{sinr_moments, LinkStats, MomentMode};
use super::pilots::{ls_estimate, rx_pilot, PilotBook};
use crate::channel::{age_channel, synth_channel, ChannelSnapshot};
use crate::numerics::linalg::{ComplexVec, C64};
use crate::numerics::ordered_par_sum;
use crate::numerics::rng::RngStream;
use crate::{Error, Result};

/// Mean powers of the combined-signal terms for each UE, averaged over
/// independent channel, pilot-noise, symbol and data-noise draws.
#[derive(Debug, Clone, PartialEq)]
pub struct TermPowers {
    pub trials: usize,
    /// `|E{DS}|²`, the coherent desired-signal power.
    pub ds: Vec<f64>,
    /// `E|DS − E{DS}|²`.
    pub ds_var: Vec<f64>,
    /// `Σ_i E|EL_{k,i}|²` (estimation error, all UEs).
    pub el: Vec<f64>,
    /// `Σ_i E|AL_{k,i}|²` (aging innovation, all UEs).
    pub al: Vec<f64>,
    /// `Σ_{i≠k} E|UI_{k,i}|²`.
    pub ui: Vec<f64>,
    /// `E|AW_k|²`.
    pub aw: Vec<f64>,
    /// Directly simulated `E|y_k|²` of the combined signal.
    pub total: Vec<f64>,
    /// Largest normalized cross-correlation between any two realized
    /// terms, over all UEs.
    pub max_cross_corr: f64,
}

impl TermPowers {
    /// `|E DS|² / (EL + AL + UI + AW)`.
    pub fn sinr(&self) -> Vec<f64> {
        (0..self.ds.len())
            .map(|k| self.ds[k] / (self.el[k] + self.al[k] + self.ui[k] + self.aw[k]))
            .collect()
    }

    /// Sum of the individual term powers (including the DS fluctuation).
    pub fn term_sum(&self) -> Vec<f64> {
        (0..self.ds.len())
            .map(|k| {
                self.ds[k] + self.ds_var[k] + self.el[k] + self.al[k] + self.ui[k] + self.aw[k]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeConfig {
    pub trials: usize,
    /// Add `CN(0,1)` noise to the received pilots.
    pub pilot_noise: bool,
}

const TERMS: usize = 5;
const PAIRS: usize = TERMS * (TERMS - 1) / 2;
// Per UE: DS coefficient (re, im), |DS|², EL, AL, UI, AW, |y|², then term
// powers of the realized terms and their pairwise products (re, im).
const PER_UE: usize = 8 + TERMS + 2 * PAIRS;

/// Split the combined signal `y_k = Σ_m Ψ_{k,m} ĥ_{k,m}ᴴ y_m[t]` into
/// desired signal, estimation leakage, aging leakage, inter-user
/// interference and noise, with `h[t] = ρ h[λ] + ρ̂ r` and LS estimates
/// `ĥ[λ]` from real pilot transmissions.
///
/// `rho` is the per-UE correlation over the aging lag. Combining weights
/// come from the analytic `Θ` of `stats`.
pub fn decompose_received(
    stats: &LinkStats,
    rho: &[f64],
    pilots: &PilotBook,
    pilot_powers: &[f64],
    powers: &[f64],
    cfg: DecomposeConfig,
    rng: &RngStream,
) -> Result<TermPowers> {
    let (kn, mn, l) = (stats.num_ues, stats.num_aps, stats.antennas);
    if rho.len() != kn || powers.len() != kn || pilot_powers.len() != kn {
        return Err(Error::shape("per-UE inputs do not match the UE count"));
    }
    if rho.iter().any(|r| !(-1.0..=1.0).contains(r)) {
        return Err(Error::domain("correlations must lie in [-1, 1]"));
    }
    if powers.iter().chain(pilot_powers).any(|p| !(*p >= 0.0)) {
        return Err(Error::domain("powers must be non-negative"));
    }
    if cfg.trials == 0 {
        return Err(Error::config("decomposition needs at least one trial"));
    }
    let psi = sinr_moments(stats, MomentMode::Analytic, None)?
        .psi_all()
        .to_vec();
    let tau = pilots.tau_p();
    let rho_hat: Vec<f64> = rho.iter().map(|r| (1.0 - r * r).max(0.0).sqrt()).collect();
    let sqrt_p: Vec<f64> = powers.iter().map(|p| p.sqrt()).collect();
    let distance: Vec<f64> = stats.links.iter().map(|x| x.distance).collect();
    let kinds = stats
        .links
        .iter()
        .map(|x| x.params.kind)
        .collect::<Vec<_>>();

    let sums = ordered_par_sum(cfg.trials, kn * PER_UE, |t| {
        let mut s = rng.child(t as u32).sampler();
        let mut h = Vec::with_capacity(kn * mn);
        let mut r = Vec::with_capacity(kn * mn);
        for k in 0..kn {
            for m in 0..mn {
                let info = stats.link(k, m);
                h.push(synth_channel(
                    &info.params,
                    info.distance,
                    info.angle,
                    l,
                    &mut s,
                )?);
                r.push(age_channel(
                    &ComplexVec::zeros(l),
                    0.0,
                    &info.params,
                    info.distance,
                    info.angle,
                    &mut s,
                )?);
            }
        }
        let snap = ChannelSnapshot::new(kn, mn, l, 0, h.clone(), distance.clone(), kinds.clone())?;
        let y_p = rx_pilot(
            &snap,
            pilots,
            pilot_powers,
            if cfg.pilot_noise { Some(&mut s) } else { None },
        )?;
        let mut hhat = Vec::with_capacity(kn * mn);
        for (k, &pk) in pilot_powers.iter().enumerate().take(kn) {
            for y in y_p.iter().take(mn) {
                hhat.push(ls_estimate(y, pilots.pilot(k), pk, tau)?);
            }
        }
        let err: Vec<ComplexVec> = hhat.iter().zip(&h).map(|(a, b)| a.sub(b)).collect();
        let sym: Vec<C64> = (0..kn).map(|_| s.cnormal()).collect();
        let noise: Vec<ComplexVec> = (0..mn)
            .map(|_| ComplexVec::from_vec((0..l).map(|_| s.cnormal()).collect()))
            .collect();
        // Received data block at t per AP.
        let mut y_d = Vec::with_capacity(mn);
        for m in 0..mn {
            let mut y = noise[m].clone();
            for i in 0..kn {
                let mut hi = h[i * mn + m].scale_real(rho[i]);
                hi.axpy(C64::new(rho_hat[i], 0.0), &r[i * mn + m]);
                y.axpy(sym[i] * sqrt_p[i], &hi);
            }
            y_d.push(y);
        }

        let mut acc = vec![0.0; kn * PER_UE];
        let zero = C64::new(0.0, 0.0);
        for k in 0..kn {
            let comb =
                |v: &dyn Fn(usize) -> C64| -> C64 { (0..mn).map(|m| psi[k * mn + m] * v(m)).sum() };
            let hk = |m: usize| &hhat[k * mn + m];
            let ds_c = comb(&|m| hk(m).dot(hk(m))) * (sqrt_p[k] * rho[k]);
            let (mut el_p, mut al_p, mut ui_p) = (0.0, 0.0, 0.0);
            let (mut el, mut al, mut ui) = (zero, zero, zero);
            for i in 0..kn {
                let e_c = -comb(&|m| hk(m).dot(&err[i * mn + m])) * (sqrt_p[i] * rho[i]);
                let a_c = comb(&|m| hk(m).dot(&r[i * mn + m])) * (sqrt_p[i] * rho_hat[i]);
                el_p += e_c.norm_sqr();
                al_p += a_c.norm_sqr();
                el += e_c * sym[i];
                al += a_c * sym[i];
                if i != k {
                    let u_c = comb(&|m| hk(m).dot(&hhat[i * mn + m])) * (sqrt_p[i] * rho[i]);
                    ui_p += u_c.norm_sqr();
                    ui += u_c * sym[i];
                }
            }
            let aw = comb(&|m| hk(m).dot(&noise[m]));
            let y_k = comb(&|m| hk(m).dot(&y_d[m]));
            let terms = [ds_c * sym[k], el, al, ui, aw];
            let o = &mut acc[k * PER_UE..(k + 1) * PER_UE];
            o[0] = ds_c.re;
            o[1] = ds_c.im;
            o[2] = ds_c.norm_sqr();
            o[3] = el_p;
            o[4] = al_p;
            o[5] = ui_p;
            o[6] = aw.norm_sqr();
            o[7] = y_k.norm_sqr();
            for (a, v) in terms.iter().enumerate() {
                o[8 + a] = v.norm_sqr();
            }
            let mut j = 8 + TERMS;
            for a in 0..TERMS {
                for b in (a + 1)..TERMS {
                    let c = terms[a] * terms[b].conj();
                    o[j] = c.re;
                    o[j + 1] = c.im;
                    j += 2;
                }
            }
        }
        Ok(acc)
    })?;

    let n = cfg.trials as f64;
    let mut out = TermPowers {
        trials: cfg.trials,
        ds: vec![0.0; kn],
        ds_var: vec![0.0; kn],
        el: vec![0.0; kn],
        al: vec![0.0; kn],
        ui: vec![0.0; kn],
        aw: vec![0.0; kn],
        total: vec![0.0; kn],
        max_cross_corr: 0.0,
    };
    for k in 0..kn {
        let o: Vec<f64> = sums[k * PER_UE..(k + 1) * PER_UE]
            .iter()
            .map(|v| v / n)
            .collect();
        out.ds[k] = o[0] * o[0] + o[1] * o[1];
        out.ds_var[k] = (o[2] - out.ds[k]).max(0.0);
        out.el[k] = o[3];
        out.al[k] = o[4];
        out.ui[k] = o[5];
        out.aw[k] = o[6];
        out.total[k] = o[7];
        let pw = &o[8..8 + TERMS];
        let mut j = 8 + TERMS;
        for a in 0..TERMS {
            for b in (a + 1)..TERMS {
                let den = (pw[a] * pw[b]).sqrt();
                if den > 0.0 {
                    let c = (o[j] * o[j] + o[j + 1] * o[j + 1]).sqrt() / den;
                    out.max_cross_corr = out.max_cross_corr.max(c);
                }
                j += 2;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{link_params, LinkInfo, LinkKind, ScenarioConfig};
    use crate::uplink::make_pilots;

    fn gtg_stats(k: usize, est_var: f64) -> LinkStats {
        let cfg = ScenarioConfig {
            noise_power: 1.0,
            ..ScenarioConfig::default()
        };
        let lp = link_params(LinkKind::Gtg, &cfg);
        let links = (0..k * 2)
            .map(|j| LinkInfo {
                params: lp,
                distance: 0.2 + 0.05 * j as f64,
                angle: 0.1 * j as f64,
            })
            .collect();
        LinkStats {
            num_ues: k,
            num_aps: 2,
            antennas: 2,
            links,
            est_var: vec![est_var; k],
        }
    }

    #[test]
    fn perfect_csi_without_aging_has_no_leakage() {
        let stats = gtg_stats(2, 0.0);
        let pb = make_pilots(2, 8).unwrap();
        let cfg = DecomposeConfig {
            trials: 200,
            pilot_noise: false,
        };
        let tp = decompose_received(
            &stats,
            &[1.0, 1.0],
            &pb,
            &[1.0, 1.0],
            &[1.0, 0.5],
            cfg,
            &RngStream::new(3),
        )
        .unwrap();
        for k in 0..2 {
            assert!(tp.el[k] < 1e-20 && tp.al[k] == 0.0);
            assert!(tp.ui[k] > 0.0);
        }
    }

    #[test]
    fn single_ue_has_no_interference_and_balances() {
        let stats = gtg_stats(1, 1.0 / 8.0);
        let pb = make_pilots(1, 8).unwrap();
        let cfg = DecomposeConfig {
            trials: 4000,
            pilot_noise: true,
        };
        let tp = decompose_received(&stats, &[0.9], &pb, &[1.0], &[1.0], cfg, &RngStream::new(5))
            .unwrap();
        assert_eq!(tp.ui[0], 0.0);
        let sum = tp.term_sum()[0];
        assert!(
            (sum / tp.total[0] - 1.0).abs() < 0.05,
            "{sum} vs {}",
            tp.total[0]
        );
    }
}
