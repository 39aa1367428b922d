//! Central finite-difference verification of tape adjoints.

use super::tape::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Base finite-difference step; scaled by `max(1, |x|)` per coordinate.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error, scaled by `max(1, |f|)` so
/// that round-off in flat directions of large losses is not reported.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordCheck {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub checked: usize,
    /// Coordinates skipped because a perturbation moved a non-smooth op
    /// to another branch.
    pub skipped: Vec<(usize, usize)>,
    pub worst: Option<CoordCheck>,
    pub tol: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst.as_ref().is_none_or(|w| w.rel_err <= self.tol)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.rel_err)
    }
}

/// Compare adjoint gradients of a scalar graph against central differences.
///
/// `build` records the graph on a fresh tape given leaf handles for
/// `params` and returns the scalar output. Coordinates where the central
/// stencil moves a non-smooth op onto another branch are skipped and listed in
/// [`GradReport::skipped`].
pub fn grad_check<F>(build: F, params: &[Tensor], tol: f64) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_coords(build, params, tol, None)
}

/// As [`grad_check`], restricted to at most `max_coords` coordinates per
/// parameter tensor (evenly strided) to bound cost on larger models.
pub fn grad_check_coords<F>(
    build: F,
    params: &[Tensor],
    tol: f64,
    max_coords: Option<usize>,
) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::shape("grad_check needs a scalar graph"));
        }
        Ok((v.item(), tape.branch_hash()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = build(&mut tape, &vars)?;
    let (f0, hash0) = (tape.value(out).item(), tape.branch_hash());
    if !f0.is_finite() {
        return Err(Error::domain(format!("graph value {f0} at check point")));
    }
    let grads = tape.backward(out)?;
    let floor = REL_FLOOR * f0.abs().max(1.0);

    let mut report = GradReport {
        tol,
        ..GradReport::default()
    };
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let g = grads.wrt_or_zero(vars[pi], p.len());
        let stride = match max_coords {
            Some(m) if m > 0 && p.len() > m => p.len().div_ceil(m),
            _ => 1,
        };
        for ci in (0..p.len()).step_by(stride) {
            let x = p.data()[ci];
            let h = FD_STEP * x.abs().max(1.0);
            work[pi].data_mut()[ci] = x + h;
            let (fp, hp) = eval(&work)?;
            work[pi].data_mut()[ci] = x - h;
            let (fm, hm) = eval(&work)?;
            work[pi].data_mut()[ci] = x;
            if hp != hash0 || hm != hash0 {
                report.skipped.push((pi, ci));
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let analytic = g[ci];
            let rel_err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if report.worst.as_ref().is_none_or(|w| rel_err > w.rel_err) {
                report.worst = Some(CoordCheck {
                    param: pi,
                    index: ci,
                    analytic,
                    numeric,
                    rel_err,
                });
            }
        }
    }
    if !report.skipped.is_empty() {
        log_skips(&report);
    }
    Ok(report)
}

fn log_skips(report: &GradReport) {
    eprintln!(
        "grad_check: skipped {} coordinate(s) at non-differentiable points",
        report.skipped.len()
    );
}
