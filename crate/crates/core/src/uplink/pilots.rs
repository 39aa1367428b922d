use crate::channel::ChannelSnapshot;
use crate::numerics::linalg::{ComplexMat, ComplexVec, C64};
use crate::numerics::rng::Sampler;
use crate::{Error, Result};

/// Orthogonal pilot rows `φ_k ∈ ℂ^{τ_p}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    rows: ComplexMat,
}

impl PilotBook {
    pub fn num_ues(&self) -> usize {
        self.rows.rows()
    }

    pub fn tau_p(&self) -> usize {
        self.rows.cols()
    }

    pub fn pilot(&self, k: usize) -> &[C64] {
        self.rows.row(k)
    }
}

/// Rows `0..K` of the `τ_p`-point DFT matrix.
pub fn make_pilots(k: usize, tau_p: usize) -> Result<PilotBook> {
    if tau_p < k {
        return Err(Error::config(format!(
            "tau_p = {tau_p} < K = {k}: no orthogonal pilots"
        )));
    }
    let mut rows = ComplexMat::zeros(k, tau_p);
    for u in 0..k {
        for n in 0..tau_p {
            // Reduce the index product first to keep phases accurate.
            let idx = (u * n) % tau_p;
            let ang = -2.0 * std::f64::consts::PI * idx as f64 / tau_p as f64;
            rows.set(u, n, C64::from_polar(1.0, ang));
        }
    }
    Ok(PilotBook { rows })
}

/// Received pilot block per AP, `Y_m = Σ_k √p_k h_{k,m} φ_k + N_m`, with
/// `CN(0,1)` noise entries when `noise` is given.
pub fn rx_pilot(
    channels: &ChannelSnapshot,
    pilots: &PilotBook,
    powers: &[f64],
    mut noise: Option<&mut Sampler>,
) -> Result<Vec<ComplexMat>> {
    let (k_n, m_n, l) = (channels.num_ues, channels.num_aps, channels.antennas);
    if powers.len() != k_n || pilots.num_ues() < k_n {
        return Err(Error::shape(
            "pilot powers / pilot book do not match the UE count",
        ));
    }
    if let Some(p) = powers.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::domain(format!("negative transmit power {p}")));
    }
    let tau = pilots.tau_p();
    let mut out = Vec::with_capacity(m_n);
    for m in 0..m_n {
        let mut y = vec![C64::new(0.0, 0.0); l * tau];
        for (k, &p) in powers.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let h = channels.h(k, m);
            let phi = pilots.pilot(k);
            let sp = p.sqrt();
            for a in 0..l {
                let ha = h[a] * sp;
                for (n, f) in phi.iter().enumerate() {
                    y[a * tau + n] += ha * f;
                }
            }
        }
        if let Some(s) = noise.as_deref_mut() {
            for v in &mut y {
                *v += s.cnormal();
            }
        }
        out.push(ComplexMat::from_vec(l, tau, y)?);
    }
    Ok(out)
}

/// `ĥ = Y φᴴ / (√p τ_p)`.
pub fn ls_estimate(y: &ComplexMat, phi: &[C64], p: f64, tau_p: usize) -> Result<ComplexVec> {
    if !(p > 0.0) {
        return Err(Error::domain(format!(
            "LS estimation needs positive pilot power, got {p}"
        )));
    }
    if y.cols() != phi.len() || phi.len() != tau_p {
        return Err(Error::shape("pilot length does not match received block"));
    }
    let scale = 1.0 / (p.sqrt() * tau_p as f64);
    Ok(ComplexVec::from_vec(
        (0..y.rows())
            .map(|a| {
                y.row(a)
                    .iter()
                    .zip(phi)
                    .map(|(yv, f)| yv * f.conj())
                    .sum::<C64>()
                    * scale
            })
            .collect(),
    ))
}
