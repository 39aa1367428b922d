use super::config::RunConfig;
use super::dataset::{Dataset, Normalizers};
use super::evaluate::{evaluate_point, Failure, Models, Report};
use crate::numerics::rng::RngStream;
use crate::Result;

/// Normalizers from `n` base-configuration draws on streams `root/[30, i]`.
pub fn sweep_normalizers(cfg: &RunConfig, n: usize) -> Result<Normalizers> {
    let root = RngStream::new(cfg.seed());
    let streams = (0..n.max(1))
        .map(|i| root.derive(&[30, i as u32]))
        .collect();
    Ok(Dataset::from_streams(cfg, streams, n.max(1), None)?
        .header
        .normalizers)
}

/// Fresh trials at every value of the configured axis.
///
/// Trial `t` of every point draws from stream `root/[20, t]`, so points
/// share their common realizations. A point whose configuration or
/// evaluation fails is recorded in the summary and skipped.
pub fn run_sweep(
    cfg: &RunConfig,
    models: &Models,
    normalizers: Option<Normalizers>,
) -> Result<Report> {
    cfg.validate()?;
    let axis = cfg.sweep.axis;
    let mut report = Report::new(cfg, axis.map_or("none", |a| a.name()));
    let trials = cfg.sweep.trials;
    if trials == 0 {
        return Ok(report);
    }
    let norm = match normalizers {
        Some(n) => n,
        None => sweep_normalizers(cfg, trials)?,
    };
    let points: Vec<(f64, Result<RunConfig>)> = match axis {
        None => vec![(0.0, Ok(cfg.clone()))],
        Some(a) => cfg
            .sweep
            .values
            .iter()
            .map(|&v| (v, cfg.with_axis(a, v)))
            .collect(),
    };
    let root = RngStream::new(cfg.seed());
    let streams: Vec<RngStream> = (0..trials).map(|t| root.derive(&[20, t as u32])).collect();
    for (i, (value, pc)) in points.into_iter().enumerate() {
        let outcome = pc.and_then(|pc| {
            let ds = Dataset::from_streams(&pc, streams.clone(), 0, Some(norm))?;
            let mut part = Report::new(cfg, &report.summary.axis);
            evaluate_point(&mut part, &ds, 0..trials, models, i, value)?;
            Ok(part)
        });
        match outcome {
            Ok(part) => {
                let base = report.trace.points.len();
                report.rows.extend(part.rows);
                report.trace.points.extend(part.trace.points);
                report
                    .trace
                    .records
                    .extend(part.trace.records.into_iter().map(|mut r| {
                        r.point += base;
                        r
                    }));
                report.summary.points.extend(part.summary.points);
                report.summary.nmse.extend(part.summary.nmse);
            }
            Err(e) => report.summary.failures.push(Failure {
                axis_value: value,
                message: e.to_string(),
            }),
        }
    }
    Ok(report)
}
