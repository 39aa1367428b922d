use crate::channel::{age_channel, link_covariance, synth_channel, LinkInfo};
use crate::numerics::linalg::{ComplexMat, ComplexVec, C64};
use crate::numerics::ordered_par_sum;
use crate::numerics::rng::RngStream;
use crate::{Error, Result};

/// Second-order statistics feeding the SINR expressions.
///
/// Indexing: `Θ`, `Ψ` by `(k, m)`; `Φ`, `μ` by `(k, i, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrMoments {
    num_ues: usize,
    num_aps: usize,
    theta: Vec<f64>,
    phi: Vec<f64>,
    mu: Vec<f64>,
    psi: Vec<f64>,
}

impl SinrMoments {
    /// Assemble moments and derive the combining weights from `Θ`.
    pub fn new(
        num_ues: usize,
        num_aps: usize,
        theta: Vec<f64>,
        phi: Vec<f64>,
        mu: Vec<f64>,
    ) -> Result<Self> {
        let km = num_ues * num_aps;
        if theta.len() != km || phi.len() != km * num_ues || mu.len() != km * num_ues {
            return Err(Error::shape("moment arrays do not match K×M / K×K×M"));
        }
        if theta.iter().chain(&phi).chain(&mu).any(|v| !(*v >= 0.0)) {
            return Err(Error::domain("moments must be non-negative"));
        }
        let psi = combine_weights(&theta, num_aps)?;
        Ok(Self {
            num_ues,
            num_aps,
            theta,
            phi,
            mu,
            psi,
        })
    }

    pub fn num_ues(&self) -> usize {
        self.num_ues
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn theta(&self, k: usize, m: usize) -> f64 {
        self.theta[k * self.num_aps + m]
    }

    pub fn psi(&self, k: usize, m: usize) -> f64 {
        self.psi[k * self.num_aps + m]
    }

    pub fn phi(&self, k: usize, i: usize, m: usize) -> f64 {
        self.phi[(k * self.num_ues + i) * self.num_aps + m]
    }

    pub fn mu(&self, k: usize, i: usize, m: usize) -> f64 {
        self.mu[(k * self.num_ues + i) * self.num_aps + m]
    }

    pub fn theta_all(&self) -> &[f64] {
        &self.theta
    }

    pub fn phi_all(&self) -> &[f64] {
        &self.phi
    }

    pub fn mu_all(&self) -> &[f64] {
        &self.mu
    }

    pub fn psi_all(&self) -> &[f64] {
        &self.psi
    }

    /// Restrict to a subset of UEs (in the given order).
    pub fn select_ues(&self, ues: &[usize]) -> Result<Self> {
        let (kn, mn) = (ues.len(), self.num_aps);
        let mut theta = Vec::with_capacity(kn * mn);
        let mut phi = Vec::with_capacity(kn * kn * mn);
        let mut mu = Vec::with_capacity(kn * kn * mn);
        for &k in ues {
            for m in 0..mn {
                theta.push(self.theta(k, m));
            }
        }
        for &k in ues {
            for &i in ues {
                for m in 0..mn {
                    phi.push(self.phi(k, i, m));
                    mu.push(self.mu(k, i, m));
                }
            }
        }
        Self::new(kn, mn, theta, phi, mu)
    }
}

/// `Ψ_{k,m} = Θ_{k,m} / Σ_{m'} Θ_{k,m'}` over rows of length `num_aps`.
pub fn combine_weights(theta: &[f64], num_aps: usize) -> Result<Vec<f64>> {
    if num_aps == 0 || !theta.len().is_multiple_of(num_aps) {
        return Err(Error::shape(
            "theta length is not a multiple of the AP count",
        ));
    }
    let mut psi = Vec::with_capacity(theta.len());
    for (k, row) in theta.chunks(num_aps).enumerate() {
        if row.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::domain("channel powers must be non-negative"));
        }
        let s: f64 = row.iter().sum();
        if !(s > 0.0) {
            return Err(Error::DegenerateLink(format!(
                "UE {k} has zero channel power at every AP"
            )));
        }
        psi.extend(row.iter().map(|t| t / s));
    }
    Ok(psi)
}

/// Link statistics of one scenario plus the per-UE LS error variance
/// `1/(p_k τ_p)`.
#[derive(Debug, Clone)]
pub struct LinkStats {
    pub num_ues: usize,
    pub num_aps: usize,
    pub antennas: usize,
    pub links: Vec<LinkInfo>,
    pub est_var: Vec<f64>,
}

impl LinkStats {
    pub fn link(&self, k: usize, m: usize) -> &LinkInfo {
        &self.links[k * self.num_aps + m]
    }

    pub fn covariance(&self, k: usize, m: usize) -> Result<ComplexMat> {
        let info = self.link(k, m);
        link_covariance(&info.params, info.distance, info.angle, self.antennas)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentMode {
    /// Exact expressions from the link covariances.
    Analytic,
    /// Sample averages over independent realizations.
    MonteCarlo { trials: usize },
}

/// `tr(A B)` for Hermitian `A`, `B`.
fn trace_prod(a: &ComplexMat, b: &ComplexMat) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x * y.conj()).re)
        .sum()
}

/// Statistical moments of the LS estimates.
///
/// Analytic mode, with `S = R + σ²I` the second moment of `ĥ`:
/// `Θ = tr S_k`, `Φ_{k,i} = tr(S_k S_i)`, `μ_{k,i} = tr(S_k R_i)`.
/// Monte Carlo mode needs `rng`.
pub fn sinr_moments(
    stats: &LinkStats,
    mode: MomentMode,
    rng: Option<&RngStream>,
) -> Result<SinrMoments> {
    let (kn, mn, l) = (stats.num_ues, stats.num_aps, stats.antennas);
    if stats.links.len() != kn * mn || stats.est_var.len() != kn {
        return Err(Error::shape("link statistics do not match K×M"));
    }
    match mode {
        MomentMode::Analytic => {
            let mut r = Vec::with_capacity(kn * mn);
            let mut s = Vec::with_capacity(kn * mn);
            for k in 0..kn {
                for m in 0..mn {
                    let rk = stats.covariance(k, m)?;
                    s.push(rk.add(&ComplexMat::identity(l).scale(stats.est_var[k]))?);
                    r.push(rk);
                }
            }
            let theta = s.iter().map(|x| x.trace().re).collect();
            let mut phi = vec![0.0; kn * kn * mn];
            let mut mu = vec![0.0; kn * kn * mn];
            for k in 0..kn {
                for i in 0..kn {
                    for m in 0..mn {
                        phi[(k * kn + i) * mn + m] = trace_prod(&s[k * mn + m], &s[i * mn + m]);
                        mu[(k * kn + i) * mn + m] = trace_prod(&s[k * mn + m], &r[i * mn + m]);
                    }
                }
            }
            SinrMoments::new(kn, mn, theta, phi, mu)
        }
        MomentMode::MonteCarlo { trials } => {
            let rng = rng.ok_or_else(|| Error::config("Monte Carlo moments need an RNG stream"))?;
            if trials == 0 {
                return Err(Error::config("Monte Carlo moments need at least one trial"));
            }
            let width = kn * mn + 2 * kn * kn * mn;
            let sums = ordered_par_sum(trials, width, |t| {
                let mut s = rng.child(t as u32).sampler();
                let mut acc = vec![0.0; width];
                let mut hhat = Vec::with_capacity(kn * mn);
                let mut innov = Vec::with_capacity(kn * mn);
                for k in 0..kn {
                    for m in 0..mn {
                        let info = stats.link(k, m);
                        let mut h =
                            synth_channel(&info.params, info.distance, info.angle, l, &mut s)?;
                        let sd = stats.est_var[k].sqrt();
                        for a in 0..l {
                            h[a] += s.cnormal() * sd;
                        }
                        let r = age_channel(
                            &ComplexVec::zeros(l),
                            0.0,
                            &info.params,
                            info.distance,
                            info.angle,
                            &mut s,
                        )?;
                        hhat.push(h);
                        innov.push(r);
                    }
                }
                for k in 0..kn {
                    for m in 0..mn {
                        acc[k * mn + m] = hhat[k * mn + m].norm_sqr();
                        for i in 0..kn {
                            let idx = (k * kn + i) * mn + m;
                            acc[kn * mn + idx] = hhat[k * mn + m].dot(&hhat[i * mn + m]).norm_sqr();
                            acc[kn * mn + kn * kn * mn + idx] =
                                hhat[k * mn + m].dot(&innov[i * mn + m]).norm_sqr();
                        }
                    }
                }
                Ok(acc)
            })?;
            let n = trials as f64;
            let theta = sums[..kn * mn].iter().map(|v| v / n).collect();
            let mut phi: Vec<f64> = sums[kn * mn..kn * mn + kn * kn * mn]
                .iter()
                .map(|v| v / n)
                .collect();
            for k in 0..kn {
                for i in (k + 1)..kn {
                    for m in 0..mn {
                        let a = (k * kn + i) * mn + m;
                        let b = (i * kn + k) * mn + m;
                        let avg = 0.5 * (phi[a] + phi[b]);
                        phi[a] = avg;
                        phi[b] = avg;
                    }
                }
            }
            let mu = sums[kn * mn + kn * kn * mn..]
                .iter()
                .map(|v| v / n)
                .collect();
            SinrMoments::new(kn, mn, theta, phi, mu)
        }
    }
}

/// Moments of a single realization: `Θ = ‖ĥ‖²`, `Φ = |ĥ_kᴴ ĥ_i|²`, `μ = 0`.
pub fn instantaneous_moments(
    num_ues: usize,
    num_aps: usize,
    hhat: &[ComplexVec],
) -> Result<SinrMoments> {
    if hhat.len() != num_ues * num_aps {
        return Err(Error::shape("channel list does not match K×M"));
    }
    let theta = hhat.iter().map(ComplexVec::norm_sqr).collect();
    let mut phi = vec![0.0; num_ues * num_ues * num_aps];
    for k in 0..num_ues {
        for i in 0..num_ues {
            for m in 0..num_aps {
                let v: C64 = hhat[k * num_aps + m].dot(&hhat[i * num_aps + m]);
                phi[(k * num_ues + i) * num_aps + m] = v.norm_sqr();
            }
        }
    }
    let mu = vec![0.0; num_ues * num_ues * num_aps];
    SinrMoments::new(num_ues, num_aps, theta, phi, mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_examples() {
        let w = combine_weights(&[1.0, 1.0, 1.0, 1.0], 4).unwrap();
        assert!(w.iter().all(|v| (v - 0.25).abs() < 1e-15));
        let w = combine_weights(&[3.0, 1.0], 2).unwrap();
        assert_eq!(w, vec![0.75, 0.25]);
        assert!(matches!(
            combine_weights(&[0.0, 0.0], 2),
            Err(Error::DegenerateLink(_))
        ));
    }

    #[test]
    fn instantaneous_moments_are_conjugate_symmetric() {
        let h = vec![
            ComplexVec::from_vec(vec![C64::new(1.0, 0.5)]),
            ComplexVec::from_vec(vec![C64::new(-0.2, 2.0)]),
        ];
        let mo = instantaneous_moments(2, 1, &h).unwrap();
        assert!((mo.phi(0, 1, 0) - mo.phi(1, 0, 0)).abs() < 1e-15);
        assert!((mo.theta(0, 0) - 1.25).abs() < 1e-15);
        assert_eq!(mo.psi(0, 0), 1.0);
    }
}
