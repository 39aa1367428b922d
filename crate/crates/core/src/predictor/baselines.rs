use super::features::{op, unop, LinkSet};
use crate::numerics::linalg::{ComplexVec, C64};
use crate::{Error, Result};

/// Last history row, `op(ĥ[λ])`, for every record.
pub fn persistence(set: &LinkSet) -> Vec<f64> {
    let w = set.width();
    (0..set.len())
        .flat_map(|i| {
            let f = set.feature(i);
            f[(set.seq_len - 1) * w..].to_vec()
        })
        .collect()
}

/// Scalar AR(1) model per antenna: `h[n+1] = ρ h[n] + w`,
/// `Var w = (1 − ρ²)·prior_var`, observations with noise `meas_var`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanParams {
    pub rho_step: f64,
    /// Correlation over the prediction horizon.
    pub rho_ahead: f64,
    pub meas_var: f64,
    /// Stationary per-antenna channel power.
    pub prior_var: f64,
}

/// Filter gains seen during the run, per step.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanTrace {
    pub gains: Vec<f64>,
}

/// Filter the history (oldest first) and extrapolate by `ρ_ahead`.
pub fn kalman_predict(
    history: &[ComplexVec],
    kp: &KalmanParams,
) -> Result<(ComplexVec, KalmanTrace)> {
    if !(-1.0..=1.0).contains(&kp.rho_step) || !(-1.0..=1.0).contains(&kp.rho_ahead) {
        return Err(Error::domain("Kalman correlations must lie in [-1, 1]"));
    }
    if !(kp.meas_var >= 0.0 && kp.prior_var >= 0.0) {
        return Err(Error::domain("Kalman variances must be non-negative"));
    }
    let first = history.first().ok_or(Error::InsufficientHistory {
        needed: 1,
        available: 0,
    })?;
    let l = first.len();
    let q = (1.0 - kp.rho_step * kp.rho_step) * kp.prior_var;
    let mut x = vec![C64::new(0.0, 0.0); l];
    // One variance serves every antenna: same model, same noise.
    let mut p = kp.prior_var;
    let mut gains = Vec::with_capacity(history.len());
    for (n, y) in history.iter().enumerate() {
        if y.len() != l {
            return Err(Error::shape("history entries differ in antenna count"));
        }
        if n > 0 {
            p = kp.rho_step * kp.rho_step * p + q;
            x.iter_mut().for_each(|v| *v *= kp.rho_step);
        }
        let s = p + kp.meas_var;
        let k = if s > 0.0 { p / s } else { 1.0 };
        for (xa, ya) in x.iter_mut().zip(y.as_slice()) {
            *xa += (ya - *xa) * k;
        }
        p *= 1.0 - k;
        gains.push(k);
    }
    let pred = ComplexVec::from_vec(x.into_iter().map(|v| v * kp.rho_ahead).collect());
    Ok((pred, KalmanTrace { gains }))
}

/// [`kalman_predict`] on every record, with the per-antenna prior
/// `Θ/L − σ²` and measurement noise `σ²` taken from the set.
pub fn kalman_set(set: &LinkSet) -> Result<Vec<f64>> {
    let (w, l) = (set.width(), set.antennas);
    let mut out = Vec::with_capacity(set.len() * w);
    for i in 0..set.len() {
        let f = set.feature(i);
        let hist = (0..set.seq_len)
            .map(|v| unop(&f[v * w..(v + 1) * w]))
            .collect::<Result<Vec<_>>>()?;
        let kp = KalmanParams {
            rho_step: set.rho_step[i],
            rho_ahead: set.rho_ahead[i],
            meas_var: set.est_var[i],
            prior_var: (set.theta[i] / l as f64 - set.est_var[i]).max(0.0),
        };
        out.extend(op(&kalman_predict(&hist, &kp)?.0));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;

    #[test]
    fn noiseless_filter_tracks_last_state() {
        let hist: Vec<ComplexVec> = (0..6)
            .map(|t| ComplexVec::from_vec(vec![C64::new(1.0 + t as f64, -0.5)]))
            .collect();
        let kp = KalmanParams {
            rho_step: 1.0,
            rho_ahead: 1.0,
            meas_var: 0.0,
            prior_var: 1.0,
        };
        let (p, tr) = kalman_predict(&hist, &kp).unwrap();
        assert_eq!(p, hist[5]);
        assert!(tr.gains.iter().all(|&g| g == 1.0));
        let kp2 = KalmanParams {
            rho_step: 0.99,
            rho_ahead: 0.9,
            ..kp
        };
        let (p2, _) = kalman_predict(&hist, &kp2).unwrap();
        assert!((p2[0] - hist[5][0] * 0.9).norm() < 1e-12);
    }

    #[test]
    fn gains_stay_in_unit_interval() {
        let mut s = RngStream::new(2).sampler();
        let hist: Vec<ComplexVec> = (0..20)
            .map(|_| ComplexVec::from_vec(vec![s.cnormal(), s.cnormal()]))
            .collect();
        let kp = KalmanParams {
            rho_step: 0.95,
            rho_ahead: 0.7,
            meas_var: 0.3,
            prior_var: 1.0,
        };
        let (_, tr) = kalman_predict(&hist, &kp).unwrap();
        assert!(tr.gains.iter().all(|g| (0.0..=1.0).contains(g)));
        assert!(kalman_predict(&[], &kp).is_err());
    }
}
