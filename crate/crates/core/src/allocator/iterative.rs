use std::cmp::Ordering;

use rayon::prelude::*;

use super::objective::{evaluate_powers, utility_tape, SinrCoeffs, UtilityContext};
use super::AllocationResult;
use crate::numerics::rng::RngStream;
use crate::numerics::tape::{Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeOptions {
    pub starts: usize,
    pub max_iters: usize,
    /// Iterations between penalty doublings.
    pub round: usize,
    pub initial_penalty: f64,
    pub tol: f64,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            max_iters: 50,
            round: 10,
            initial_penalty: 1.0,
            tol: 1e-6,
        }
    }
}

/// `(δ − λ Σ max(0, ε − ε_b), ∇ w.r.t. ln p)`.
fn penalized(
    ctx: &UtilityContext,
    coeffs: &SinrCoeffs,
    p: &[f64],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let pv = tape.leaf(Tensor::new(vec![1, p.len()], p.to_vec())?);
    let (d, u) = utility_tape(&mut tape, ctx, &[coeffs], pv)?;
    let pen = tape.scale(u, -lambda);
    let f = tape.add(d, pen)?;
    let f = tape.sum(f);
    let g = tape.backward(f)?.wrt_or_zero(pv, p.len());
    Ok((
        tape.value(f).item(),
        g.iter().zip(p).map(|(gi, pi)| gi * pi).collect(),
    ))
}

/// Larger objective first, then lexicographically larger powers.
fn better(a: (f64, &[f64]), b: (f64, &[f64])) -> bool {
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Less) => false,
        _ => {
            a.1.iter()
                .zip(b.1)
                .find(|(x, y)| x != y)
                .is_some_and(|(x, y)| x > y)
        }
    }
}

fn ascend(
    ctx: &UtilityContext,
    coeffs: &SinrCoeffs,
    start: Vec<f64>,
    o: &IterativeOptions,
) -> Result<Vec<f64>> {
    let (lo, hi) = (ctx.p_min().ln(), ctx.urllc.p_max.ln());
    let mut z: Vec<f64> = start.iter().map(|p| p.ln().clamp(lo, hi)).collect();
    let mut lambda = o.initial_penalty;
    let mut step: f64 = 1.0;
    let mut prev_delta = f64::NAN;
    for it in 0..o.max_iters {
        if it > 0 && it % o.round.max(1) == 0 {
            lambda *= 2.0;
        }
        let p: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let (f, g) = penalized(ctx, coeffs, &p, lambda)?;
        if g.iter().all(|v| *v == 0.0) {
            break;
        }
        // Armijo backtracking along the projected path.
        let mut t = (step * 2.0).min(1e3);
        let mut moved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = z
                .iter()
                .zip(&g)
                .map(|(zi, gi)| (zi + t * gi).clamp(lo, hi))
                .collect();
            let dz: f64 = cand.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
            if dz == 0.0 {
                break;
            }
            let pc: Vec<f64> = cand.iter().map(|v| v.exp()).collect();
            let (fc, _) = penalized(ctx, coeffs, &pc, lambda)?;
            if fc >= f + 1e-4 * dz / t {
                z = cand;
                step = t;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
        let p: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let delta = evaluate_powers(ctx, coeffs, &p)?.delta;
        if (delta - prev_delta).abs() < o.tol {
            break;
        }
        prev_delta = delta;
    }
    Ok(z.iter().map(|v| v.exp().min(ctx.urllc.p_max)).collect())
}

/// Multi-start projected gradient ascent on `δ` with an exterior URLLC
/// penalty, in the log-power domain. Start 0 is `p_max` for every UE,
/// start 1 is `p_max/2`; the rest are log-uniform in `[p_min, p_max]`.
pub fn iterative_allocate(
    ctx: &UtilityContext,
    coeffs: &SinrCoeffs,
    opts: &IterativeOptions,
    rng: &RngStream,
) -> Result<AllocationResult> {
    let kn = ctx.num_ues();
    if coeffs.num_ues != kn {
        return Err(Error::shape(
            "coefficients do not match the objective groups",
        ));
    }
    if opts.starts == 0 {
        return Err(Error::config("need at least one start"));
    }
    let p_max = ctx.urllc.p_max;
    let (lo, hi) = (ctx.p_min().ln(), p_max.ln());
    let starts: Vec<Vec<f64>> = (0..opts.starts)
        .map(|s| match s {
            0 => vec![p_max; kn],
            1 => vec![0.5 * p_max; kn],
            _ => {
                let mut smp = rng.child(s as u32).sampler();
                (0..kn).map(|_| smp.uniform_in(lo, hi).exp()).collect()
            }
        })
        .collect();
    let finals: Vec<Result<(Vec<f64>, f64, bool)>> = starts
        .into_par_iter()
        .map(|s| {
            let p = ascend(ctx, coeffs, s, opts)?;
            let ev = evaluate_powers(ctx, coeffs, &p)?;
            Ok((p, ev.delta, ev.feasible))
        })
        .collect();
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for r in finals {
        let (p, d, feas) = r?;
        let take = match &best {
            None => true,
            Some((bp, bd, bf)) => match (feas, *bf) {
                (true, false) => true,
                (false, true) => false,
                _ => better((d, &p), (*bd, bp)),
            },
        };
        if take {
            best = Some((p, d, feas));
        }
    }
    let (p, _, _) = best.expect("at least one start");
    let ev = evaluate_powers(ctx, coeffs, &p)?;
    Ok(AllocationResult::from_eval("iterative", p, &ev))
}

/// Exhaustive search over `{p_max·10^{−3+3g/(G−1)}}^K`. Infeasible points
/// are excluded unless none is feasible, in which case the best-`δ` point
/// is returned flagged infeasible.
pub fn grid_oracle(
    ctx: &UtilityContext,
    coeffs: &SinrCoeffs,
    points: usize,
) -> Result<AllocationResult> {
    let kn = ctx.num_ues();
    if coeffs.num_ues != kn {
        return Err(Error::shape(
            "coefficients do not match the objective groups",
        ));
    }
    if !(1..=3).contains(&kn) {
        return Err(Error::config(format!(
            "grid oracle supports 1 to 3 UEs, got {kn}"
        )));
    }
    if points < 2 {
        return Err(Error::config("grid needs at least two points per UE"));
    }
    let p_max = ctx.urllc.p_max;
    let grid: Vec<f64> = (0..points)
        .map(|g| {
            if g + 1 == points {
                p_max
            } else {
                p_max * 10f64.powf(-3.0 + 3.0 * g as f64 / (points - 1) as f64)
            }
        })
        .collect();
    let total = points.pow(kn as u32);
    type Best = Option<(bool, f64, Vec<f64>)>;
    let pick = |a: Best, b: Best| -> Best {
        match (a, b) {
            (None, x) | (x, None) => x,
            (Some(x), Some(y)) => {
                let x_wins = match (x.0, y.0) {
                    (true, false) => true,
                    (false, true) => false,
                    _ => better((x.1, &x.2), (y.1, &y.2)),
                };
                Some(if x_wins { x } else { y })
            }
        }
    };
    let best = (0..total)
        .into_par_iter()
        .map(|idx| -> Result<Best> {
            let mut r = idx;
            let p: Vec<f64> = (0..kn)
                .map(|_| {
                    let g = r % points;
                    r /= points;
                    grid[g]
                })
                .collect();
            let ev = evaluate_powers(ctx, coeffs, &p)?;
            Ok(Some((ev.feasible, ev.delta, p)))
        })
        .try_reduce(|| None, |a, b| Ok(pick(a, b)))?;
    let (_, _, p) = best.expect("non-empty grid");
    let ev = evaluate_powers(ctx, coeffs, &p)?;
    Ok(AllocationResult::from_eval("oracle", p, &ev))
}

/// Every UE at the same power.
pub fn fixed_power(
    ctx: &UtilityContext,
    coeffs: &SinrCoeffs,
    p: f64,
    name: &str,
) -> Result<AllocationResult> {
    if !(p > 0.0 && p <= ctx.urllc.p_max) {
        return Err(Error::domain(format!("fixed power {p} outside (0, p_max]")));
    }
    let powers = vec![p; ctx.num_ues()];
    let ev = evaluate_powers(ctx, coeffs, &powers)?;
    Ok(AllocationResult::from_eval(name, powers, &ev))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbl::{ObjectiveGroups, UePowerModel, UrllcConstraints};
    use crate::uplink::FrameConfig;

    fn ctx(groups: ObjectiveGroups) -> UtilityContext {
        UtilityContext::new(
            groups,
            UrllcConstraints::default(),
            UePowerModel::default(),
            &FrameConfig::default(),
        )
        .unwrap()
    }

    fn pair() -> SinrCoeffs {
        SinrCoeffs {
            num_ues: 2,
            gain: vec![900.0, 400.0],
            cross: vec![0.0, 60.0, 90.0, 0.0],
            noise: vec![30.0, 20.0],
        }
    }

    #[test]
    fn lone_se_user_takes_full_power() {
        let c = ctx(ObjectiveGroups::round_robin(1, 10.0, 1e9));
        let co = SinrCoeffs {
            num_ues: 1,
            gain: vec![50.0],
            cross: vec![0.0],
            noise: vec![2.0],
        };
        let it =
            iterative_allocate(&c, &co, &IterativeOptions::default(), &RngStream::new(1)).unwrap();
        assert!((it.powers[0] - 0.1).abs() < 1e-4);
        let g = grid_oracle(&c, &co, 16).unwrap();
        assert_eq!(g.powers[0], 0.1);
    }

    #[test]
    fn finer_grid_never_worse_and_iterative_close() {
        let c = ctx(ObjectiveGroups::round_robin(2, 3.0, 5e7));
        let co = pair();
        // 22 points (21 steps) nest inside 64 (63 steps).
        let g22 = grid_oracle(&c, &co, 22).unwrap();
        let g64 = grid_oracle(&c, &co, 64).unwrap();
        assert!(g64.delta >= g22.delta - 1e-12);
        let it =
            iterative_allocate(&c, &co, &IterativeOptions::default(), &RngStream::new(2)).unwrap();
        assert!(
            it.delta >= 0.95 * g64.delta,
            "{} vs {}",
            it.delta,
            g64.delta
        );
        assert!(it.powers.iter().all(|&p| p > 0.0 && p <= 0.1));
    }
}
