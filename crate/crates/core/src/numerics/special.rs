//! Special functions: Bessel J0, the Gaussian tail function and its inverse.

use std::f64::consts::{FRAC_PI_4, PI, SQRT_2};

use crate::{Error, Result};

/// Crossover between the power series and the Hankel asymptotic expansion.
const J0_SERIES_LIMIT: f64 = 12.0;

/// Zeroth-order Bessel function of the first kind.
///
/// Power series for `|x| < 12`, Hankel asymptotic expansion (optimally
/// truncated) beyond. Absolute error is below 1e-10 on `|x| <= 20`.
pub fn bessel_j0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("bessel_j0 of non-finite {x}")));
    }
    let ax = x.abs();
    Ok(if ax < J0_SERIES_LIMIT {
        j0_series(ax)
    } else {
        j0_asymptotic(ax)
    })
}

fn j0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= -q / (k * k);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) && k > q {
            break;
        }
        k += 1.0;
        if k > 200.0 {
            break;
        }
    }
    sum
}

fn j0_asymptotic(x: f64) -> f64 {
    // a_k = prod_{j<=k} -(2j-1)^2 / (8 j); P collects even k, Q odd k.
    let mut a = 1.0;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut xk = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let kf = k as f64;
        a *= -((2.0 * kf - 1.0).powi(2)) / (8.0 * kf);
        xk *= x;
        let t = a / xk;
        if t.abs() >= prev {
            break;
        }
        prev = t.abs();
        // sign pattern (-1)^{floor(k/2)} relative to a_k
        let signed = if (k / 2) % 2 == 0 { t } else { -t };
        if k % 2 == 0 {
            p += signed;
        } else {
            q += signed;
        }
        if t.abs() < 1e-17 {
            break;
        }
    }
    let w = x - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * w.cos() - q * w.sin())
}

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_func(x: f64) -> Result<f64> {
    if x.is_nan() || x.is_infinite() {
        return Err(Error::domain(format!("q_func of non-finite {x}")));
    }
    Ok(q_tail(x))
}

/// Unchecked `Q(x)` for hot loops; `Q(+inf) = 0`, `Q(-inf) = 1`, NaN propagates.
pub(crate) fn q_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Standard normal density.
pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse of [`q_func`] on the open interval `(0, 1)`.
pub fn q_inv(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain(format!(
            "q_inv requires 0 < eps < 1, got {eps}"
        )));
    }
    if eps == 0.5 {
        return Ok(0.0);
    }
    // Work in the upper tail and mirror.
    let (tail, sign) = if eps < 0.5 {
        (eps, 1.0)
    } else {
        (1.0 - eps, -1.0)
    };
    let mut x = acklam_upper(tail);
    // Newton on ln Q(x) - ln(tail): derivative is -pdf/Q.
    let target = tail.ln();
    for _ in 0..60 {
        let q = q_tail(x);
        if q <= 0.0 {
            break;
        }
        let step = (q.ln() - target) * q / normal_pdf(x);
        x += step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    // For eps > 0.5 the mirrored tail loses precision in 1 - eps; polish on
    // the original equation.
    let mut x = sign * x;
    if sign < 0.0 {
        for _ in 0..8 {
            let step = (q_tail(x) - eps) / normal_pdf(x);
            x += step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    Ok(x)
}

/// Acklam's rational approximation of the upper-tail quantile, `p <= 0.5`.
fn acklam_upper(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383_577_518_672_69e2,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    // Lower-tail quantile of p, negated.
    let lower = if p < 0.02425 {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    -lower
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn j0_reference_points() {
        assert_eq!(bessel_j0(0.0).unwrap(), 1.0);
        assert!((bessel_j0(1.0).unwrap() - 0.765_197_686_557_966_6).abs() < 1e-10);
        assert!(bessel_j0(2.404_825_557_7).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn j0_is_even_and_continuous_at_split() {
        for &x in &[0.3, 2.0, 7.999, 12.0, 13.7, 19.5] {
            assert_eq!(bessel_j0(x).unwrap(), bessel_j0(-x).unwrap());
        }
        let below = j0_series(J0_SERIES_LIMIT);
        let above = j0_asymptotic(J0_SERIES_LIMIT);
        assert!((below - above).abs() < 1e-11, "{below} vs {above}");
    }

    #[test]
    fn j0_rejects_non_finite() {
        assert!(bessel_j0(f64::NAN).is_err());
        assert!(bessel_j0(f64::INFINITY).is_err());
    }

    #[test]
    fn q_reference_points() {
        assert_eq!(q_func(0.0).unwrap(), 0.5);
        assert!((q_func(4.264_890_8).unwrap() / 1e-5 - 1.0).abs() < 1e-6);
        assert!((q_func(1.644_853_6).unwrap() / 0.05 - 1.0).abs() < 1e-6);
        assert!(q_func(f64::NAN).is_err());
    }

    #[test]
    fn q_inv_reference_points() {
        assert_eq!(q_inv(0.5).unwrap(), 0.0);
        assert!((q_inv(1e-5).unwrap() - 4.264_890_8).abs() < 1e-6);
        assert!((q_inv(0.05).unwrap() - 1.644_853_6).abs() < 1e-6);
        assert!(q_inv(0.0).is_err());
        assert!(q_inv(1.0).is_err());
        assert!(q_inv(-0.1).is_err());
    }

    #[test]
    fn q_inv_upper_half_round_trips() {
        for &e in &[0.51, 0.7, 0.95, 0.999_99] {
            let x = q_inv(e).unwrap();
            assert!(x < 0.0);
            assert!((q_tail(x) - e).abs() / e < 1e-12);
        }
    }
}
