use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Reported in place of `−∞` for an exact prediction.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// `(1/n)·Σ ω̂_i ‖pred_i − target_i‖²` over `n` links of width `dim`, with
/// `ω̂ = 1/(Θ + ε̂)` when `cq_aware`, else 1.
pub fn cq_loss(
    pred: &[f64],
    target: &[f64],
    theta: &[f64],
    dim: usize,
    eps_hat: f64,
    cq_aware: bool,
) -> Result<f64> {
    let n = theta.len();
    if n == 0 || pred.len() != n * dim || target.len() != n * dim {
        return Err(Error::shape("prediction, target and Θ do not line up"));
    }
    if theta.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::domain("Θ must be non-negative"));
    }
    let mut acc = 0.0;
    for i in 0..n {
        let e: f64 = (0..dim)
            .map(|j| (pred[i * dim + j] - target[i * dim + j]).powi(2))
            .sum();
        let w = if cq_aware {
            1.0 / (theta[i] + eps_hat)
        } else {
            1.0
        };
        acc += w * e;
    }
    Ok(acc / n as f64)
}

/// `10·log₁₀(Σ‖pred − truth‖² / Σ‖truth‖²)`.
pub fn nmse_db(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::shape("NMSE needs non-empty sets of equal size"));
    }
    let num: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    if !(den > 0.0) {
        return Err(Error::domain("NMSE reference set has zero power"));
    }
    if num == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (num / den).log10()).max(NMSE_FLOOR_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecileNmse {
    pub all_db: f64,
    pub bottom_db: f64,
    pub top_db: f64,
}

/// NMSE overall and on the weakest / strongest 10% of links ranked by `Θ`
/// (ties by index).
pub fn decile_nmse(pred: &[f64], truth: &[f64], theta: &[f64], dim: usize) -> Result<DecileNmse> {
    let n = theta.len();
    if n == 0 || pred.len() != n * dim || truth.len() != n * dim {
        return Err(Error::shape("prediction, truth and Θ do not line up"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| theta[a].total_cmp(&theta[b]).then(a.cmp(&b)));
    let take = ((n as f64 * 0.1 - 1e-9).ceil() as usize).clamp(1, n);
    let gather = |ids: &[usize]| -> Result<f64> {
        let p: Vec<f64> = ids
            .iter()
            .flat_map(|&i| pred[i * dim..(i + 1) * dim].iter().copied())
            .collect();
        let t: Vec<f64> = ids
            .iter()
            .flat_map(|&i| truth[i * dim..(i + 1) * dim].iter().copied())
            .collect();
        nmse_db(&p, &t)
    };
    Ok(DecileNmse {
        all_db: nmse_db(pred, truth)?,
        bottom_db: gather(&idx[..take])?,
        top_db: gather(&idx[n - take..])?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(
            cq_loss(&[1.0, 2.0], &[1.0, 2.0], &[3.0], 2, 1e-6, true).unwrap(),
            0.0
        );
        let l = cq_loss(&[0.2, 0.0], &[0.0, 0.0], &[1.0], 2, 1e-6, true).unwrap();
        assert!((l - 0.04 / (1.0 + 1e-6)).abs() < 1e-15);
        let full = cq_loss(&[0.2, 0.0], &[0.0, 0.0], &[1.0], 2, 1e-12, true).unwrap();
        let half = cq_loss(&[0.2, 0.0], &[0.0, 0.0], &[0.5], 2, 1e-12, true).unwrap();
        assert!((half / full - 2.0).abs() < 1e-9);
        assert!(
            (cq_loss(&[0.2, 0.0], &[0.0, 0.0], &[0.5], 2, 1e-6, false).unwrap() - 0.04).abs()
                < 1e-15
        );
    }

    #[test]
    fn nmse_examples() {
        let t = [1.0, -2.0, 0.5];
        assert_eq!(nmse_db(&t, &t).unwrap(), NMSE_FLOOR_DB);
        assert!((nmse_db(&[0.0; 3], &t).unwrap()).abs() < 1e-12);
        assert!(nmse_db(&[0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn deciles_pick_extremes() {
        let theta: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let truth = vec![1.0; 20];
        let mut pred = vec![1.0; 20];
        pred[0] = 0.0;
        pred[1] = 0.0;
        let d = decile_nmse(&pred, &truth, &theta, 1).unwrap();
        assert!(d.bottom_db.abs() < 1e-12);
        assert_eq!(d.top_db, NMSE_FLOOR_DB);
    }
}
