use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AllocatorKind, CsiSource, RunConfig};
use super::dataset::{Dataset, Normalizers};
use super::predict::{predict_samples, CpModels, KindNmse};
use crate::allocator::{
    evaluate_powers, fixed_power, grid_oracle, iterative_allocate, mlp_allocate, moe_allocate,
    AllocInstance, Evaluation, IterativeOptions, SinrCoeffs, UtilityContext,
};
use crate::fbl::{usp, usp_bottom, Objective, ObjectiveGroups};
use crate::nn::ModelParams;
use crate::numerics::rng::RngStream;
use crate::uplink::instantaneous_moments;
use crate::{Error, Result};

/// Trained parameters available to an evaluation.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub cp: Option<CpModels>,
    pub moe: Option<ModelParams>,
    pub mlp: Option<ModelParams>,
}

pub fn utility_context(cfg: &RunConfig, n: Normalizers) -> Result<UtilityContext> {
    UtilityContext::new(
        ObjectiveGroups::round_robin(cfg.scenario.num_ues(), n.eta_max, n.omega_max),
        cfg.urllc,
        cfg.power,
        &cfg.frame,
    )
}

pub const GROUPS: [&str; 4] = ["all", "se", "ee", "trade"];

fn group_members(groups: &ObjectiveGroups, g: &str) -> Vec<usize> {
    match g {
        "se" => groups.members(Objective::Se),
        "ee" => groups.members(Objective::Ee),
        "trade" => groups.members(Objective::Trade),
        _ => (0..groups.assign.len()).collect(),
    }
}

/// One CSV line: a (sweep point, trial, allocator, UE group) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub config_hash: String,
    pub seed: u64,
    pub axis: String,
    pub axis_value: f64,
    pub trial: usize,
    pub allocator: String,
    pub group: String,
    pub se_mean: f64,
    pub ee_mean: f64,
    pub delta: f64,
    pub usp: f64,
    pub usp_bottom10: f64,
    pub nmse_ata_db: Option<f64>,
    pub nmse_ag_db: Option<f64>,
    pub nmse_gtg_db: Option<f64>,
    pub wall_ms: f64,
}

/// Everything needed to re-derive a row's `ε★`, USP and `δ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub point: usize,
    pub trial: usize,
    pub allocator: String,
    pub powers: Vec<f64>,
    pub coeffs: SinrCoeffs,
    pub eps_star: Vec<f64>,
    pub delta: f64,
    pub usp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditPoint {
    pub axis_value: f64,
    pub ctx: UtilityContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Trace {
    pub config_hash: String,
    pub points: Vec<AuditPoint>,
    pub records: Vec<AuditRecord>,
}

/// Means over trials with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub axis_value: f64,
    pub allocator: String,
    pub group: String,
    pub trials: usize,
    pub se_mean: f64,
    pub se_stderr: f64,
    pub ee_mean: f64,
    pub ee_stderr: f64,
    pub delta_mean: f64,
    pub delta_stderr: f64,
    pub usp_mean: f64,
    pub usp_stderr: f64,
    pub usp_bottom10_mean: f64,
    /// Bottom-10% USP over all UE draws of the point pooled together.
    pub usp_bottom10_pooled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointNmse {
    pub axis_value: f64,
    pub ata: Option<KindNmse>,
    pub ag: Option<KindNmse>,
    pub gtg: Option<KindNmse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub axis_value: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub axis: String,
    pub csi: String,
    pub points: Vec<PointSummary>,
    pub nmse: Vec<PointNmse>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub rows: Vec<MetricsRow>,
    pub trace: Trace,
    pub summary: Summary,
}

impl Report {
    pub(crate) fn new(cfg: &RunConfig, axis: &str) -> Self {
        let hash = cfg.hash();
        Self {
            rows: Vec::new(),
            trace: Trace {
                config_hash: hash.clone(),
                ..Trace::default()
            },
            summary: Summary {
                config_hash: hash,
                seed: cfg.seed(),
                axis: axis.to_string(),
                csi: cfg.eval.csi.name().to_string(),
                ..Summary::default()
            },
        }
    }

    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)
                .map_err(|e| Error::config(format!("csv: {e}")))?;
        }
        w.into_inner()
            .map_err(|e| Error::config(format!("csv: {e}")))
    }

    /// `metrics.csv`, `summary.json` and `trace.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, bytes: Vec<u8>| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
        };
        put("metrics.csv", self.csv_bytes()?)?;
        put("summary.json", json_bytes(&self.summary)?)?;
        put("trace.json", json_bytes(&self.trace)?)
    }
}

pub(crate) fn json_bytes<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v).map_err(|e| Error::config(format!("json: {e}")))?;
    b.push(b'\n');
    Ok(b)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    r.deserialize()
        .map(|row| {
            row.map_err(|e| Error::Format {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Powers chosen by `kind` for one instance.
pub fn allocate(
    kind: AllocatorKind,
    models: &Models,
    cfg: &RunConfig,
    ctx: &UtilityContext,
    inst: &AllocInstance,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    let missing = |what: &str| {
        Error::StageOrder(format!(
            "{what} allocator requested without trained parameters"
        ))
    };
    Ok(match kind {
        AllocatorKind::Uniform => {
            fixed_power(ctx, &inst.coeffs, cfg.urllc.p_max, "uniform")?.powers
        }
        AllocatorKind::Iterative => {
            let opts = IterativeOptions {
                starts: cfg.allocator.starts,
                max_iters: cfg.allocator.max_iters,
                ..IterativeOptions::default()
            };
            iterative_allocate(ctx, &inst.coeffs, &opts, rng)?.powers
        }
        AllocatorKind::Oracle => grid_oracle(ctx, &inst.coeffs, cfg.allocator.grid_points)?.powers,
        AllocatorKind::Moe => {
            moe_allocate(
                models.moe.as_ref().ok_or_else(|| missing("moe"))?,
                ctx,
                inst,
            )?
            .powers
        }
        AllocatorKind::Mlp => {
            mlp_allocate(
                models.mlp.as_ref().ok_or_else(|| missing("mlp"))?,
                ctx,
                inst,
            )?
            .powers
        }
    })
}

/// Allocator inputs of every sample in `samples`.
pub fn instances(
    ds: &Dataset,
    samples: Range<usize>,
    source: CsiSource,
    models: &Models,
) -> Result<Vec<AllocInstance>> {
    let h = &ds.header;
    let pred = predict_samples(ds, samples, source, models.cp.as_ref())?;
    pred.csi
        .par_iter()
        .map(|c| AllocInstance::from_channels(h.num_ues, h.num_aps, c, h.config.frame.tau_p))
        .collect()
}

/// SINR coefficients of the noise-free channels, against which every
/// allocation is scored.
pub fn true_coeffs(ds: &Dataset, sample: usize) -> Result<SinrCoeffs> {
    let h = &ds.header;
    let mo = instantaneous_moments(h.num_ues, h.num_aps, &ds.truth_all(sample)?)?;
    SinrCoeffs::from_moments(&mo, h.config.frame.tau_p)
}

struct Outcome {
    kind: AllocatorKind,
    powers: Vec<f64>,
    eval: Evaluation,
    wall_ms: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn group_row_values(
    ctx: &UtilityContext,
    ev: &Evaluation,
    members: &[usize],
) -> Result<(f64, f64, f64, f64)> {
    let n = members.len() as f64;
    let se = members.iter().map(|&k| ev.ue[k].se).sum::<f64>() / n;
    let ee = members.iter().map(|&k| ev.ue[k].ee).sum::<f64>() / n;
    let eps: Vec<f64> = members.iter().map(|&k| ev.ue[k].eps_star).collect();
    let sinr: Vec<f64> = members.iter().map(|&k| ev.sinr[k]).collect();
    Ok((
        se,
        ee,
        usp(&eps, ctx.urllc.eps_b)?,
        usp_bottom(&eps, ctx.urllc.eps_b, &sinr, 0.1)?,
    ))
}

/// Evaluate the configured allocators on `samples` of `ds` and append the
/// rows, audit records and summaries of sweep point `point` to `report`.
pub(crate) fn evaluate_point(
    report: &mut Report,
    ds: &Dataset,
    samples: Range<usize>,
    models: &Models,
    point: usize,
    axis_value: f64,
) -> Result<()> {
    let cfg = ds.config();
    let ctx = utility_context(cfg, ds.header.normalizers)?;
    let pred = predict_samples(ds, samples.clone(), cfg.eval.csi, models.cp.as_ref())?;
    let root = RngStream::new(cfg.seed());
    let h = &ds.header;
    let trials: Vec<Result<(SinrCoeffs, Vec<Outcome>)>> = samples
        .clone()
        .into_par_iter()
        .map(|s| {
            let j = s - samples.start;
            let inst =
                AllocInstance::from_channels(h.num_ues, h.num_aps, &pred.csi[j], cfg.frame.tau_p)?;
            let truth = true_coeffs(ds, s)?;
            let rng = root.derive(&[40, point as u32, j as u32]);
            let mut out = Vec::with_capacity(cfg.eval.allocators.len());
            for &kind in &cfg.eval.allocators {
                let t0 = Instant::now();
                let powers = allocate(kind, models, cfg, &ctx, &inst, &rng)?;
                let wall_ms = if cfg.eval.record_timing {
                    t0.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                };
                let eval = evaluate_powers(&ctx, &truth, &powers)?;
                out.push(Outcome {
                    kind,
                    powers,
                    eval,
                    wall_ms,
                });
            }
            Ok((truth, out))
        })
        .collect();
    let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;

    let axis = report.summary.axis.clone();
    let hash = cfg.short_hash();
    let trace_point = report.trace.points.len();
    report.trace.points.push(AuditPoint {
        axis_value,
        ctx: ctx.clone(),
    });
    // (allocator, group) → per-trial values and pooled (sinr, ε★) pairs.
    type Acc = (Vec<[f64; 5]>, Vec<f64>, Vec<f64>);
    let mut acc: HashMap<(usize, usize), Acc> = HashMap::new();
    for (j, (truth, outs)) in trials.iter().enumerate() {
        let nm = pred.nmse_db[j];
        for (a, o) in outs.iter().enumerate() {
            report.trace.records.push(AuditRecord {
                point: trace_point,
                trial: j,
                allocator: o.kind.name().to_string(),
                powers: o.powers.clone(),
                coeffs: truth.clone(),
                eps_star: o.eval.ue.iter().map(|u| u.eps_star).collect(),
                delta: o.eval.delta,
                usp: o.eval.usp,
            });
            for (g, name) in GROUPS.iter().enumerate() {
                let members = group_members(&ctx.groups, name);
                if members.is_empty() {
                    continue;
                }
                let (se, ee, u, ub) = group_row_values(&ctx, &o.eval, &members)?;
                report.rows.push(MetricsRow {
                    config_hash: hash.clone(),
                    seed: cfg.seed(),
                    axis: axis.clone(),
                    axis_value,
                    trial: j,
                    allocator: o.kind.name().to_string(),
                    group: name.to_string(),
                    se_mean: se,
                    ee_mean: ee,
                    delta: o.eval.delta,
                    usp: u,
                    usp_bottom10: ub,
                    nmse_ata_db: nm[0],
                    nmse_ag_db: nm[1],
                    nmse_gtg_db: nm[2],
                    wall_ms: o.wall_ms,
                });
                let e = acc.entry((a, g)).or_default();
                e.0.push([se, ee, o.eval.delta, u, ub]);
                for &k in &members {
                    e.1.push(o.eval.sinr[k]);
                    e.2.push(o.eval.ue[k].eps_star);
                }
            }
        }
    }
    for (a, kind) in cfg.eval.allocators.iter().enumerate() {
        for (g, name) in GROUPS.iter().enumerate() {
            let Some((vals, sinr, eps)) = acc.get(&(a, g)) else {
                continue;
            };
            let col = |c: usize| mean_se(&vals.iter().map(|v| v[c]).collect::<Vec<_>>());
            let (se_mean, se_stderr) = col(0);
            let (ee_mean, ee_stderr) = col(1);
            let (delta_mean, delta_stderr) = col(2);
            let (usp_mean, usp_stderr) = col(3);
            report.summary.points.push(PointSummary {
                axis_value,
                allocator: kind.name().to_string(),
                group: name.to_string(),
                trials: vals.len(),
                se_mean,
                se_stderr,
                ee_mean,
                ee_stderr,
                delta_mean,
                delta_stderr,
                usp_mean,
                usp_stderr,
                usp_bottom10_mean: col(4).0,
                usp_bottom10_pooled: usp_bottom(eps, ctx.urllc.eps_b, sinr, 0.1)?,
            });
        }
    }
    report.summary.nmse.push(PointNmse {
        axis_value,
        ata: pred.overall[0],
        ag: pred.overall[1],
        gtg: pred.overall[2],
    });
    Ok(())
}

/// Score the configured allocators on the held-out split.
pub fn evaluate(ds: &Dataset, models: &Models) -> Result<Report> {
    let cfg = ds.config();
    if ds.test_range().is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut report = Report::new(cfg, "none");
    evaluate_point(&mut report, ds, ds.test_range(), models, 0, 0.0)?;
    Ok(report)
}

/// Outcome of re-deriving every record and row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub records: usize,
    pub rows: usize,
    pub max_abs_error: f64,
}

/// Recompute `ε★`, USP and `δ` from stored powers and coefficients and
/// check them, and every matching CSV row, within `tol`.
pub fn audit(trace: &Trace, rows: &[MetricsRow], tol: f64) -> Result<AuditReport> {
    let mut max_err: f64 = 0.0;
    let mut index: HashMap<(u64, usize, &str, &str), &MetricsRow> = HashMap::new();
    for r in rows {
        index.insert(
            (
                r.axis_value.to_bits(),
                r.trial,
                r.allocator.as_str(),
                r.group.as_str(),
            ),
            r,
        );
    }
    let mut checked_rows = 0;
    let mismatch = |what: String| Error::Format {
        path: "trace".into(),
        reason: what,
    };
    for rec in &trace.records {
        let pt = trace
            .points
            .get(rec.point)
            .ok_or_else(|| mismatch(format!("record refers to missing point {}", rec.point)))?;
        let ev = evaluate_powers(&pt.ctx, &rec.coeffs, &rec.powers)?;
        let mut check = |what: &str, a: f64, b: f64| -> Result<()> {
            let e = (a - b).abs();
            max_err = max_err.max(e);
            if !(e <= tol) {
                return Err(mismatch(format!(
                    "{what} of trial {} / {} differs by {e:e}",
                    rec.trial, rec.allocator
                )));
            }
            Ok(())
        };
        for (u, &e) in ev.ue.iter().zip(&rec.eps_star) {
            check("eps_star", u.eps_star, e)?;
        }
        check("delta", ev.delta, rec.delta)?;
        check("usp", ev.usp, rec.usp)?;
        for name in GROUPS {
            let Some(row) = index.get(&(
                pt.axis_value.to_bits(),
                rec.trial,
                rec.allocator.as_str(),
                name,
            )) else {
                continue;
            };
            let members = group_members(&pt.ctx.groups, name);
            let (se, ee, u, ub) = group_row_values(&pt.ctx, &ev, &members)?;
            check("row delta", ev.delta, row.delta)?;
            check("row usp", u, row.usp)?;
            check("row usp_bottom10", ub, row.usp_bottom10)?;
            check("row se", se, row.se_mean)?;
            check(
                "row ee",
                ee / pt.ctx.groups.omega_max,
                row.ee_mean / pt.ctx.groups.omega_max,
            )?;
            checked_rows += 1;
        }
    }
    if checked_rows != rows.len() {
        return Err(mismatch(format!(
            "{} rows have no matching trace record",
            rows.len() - checked_rows
        )));
    }
    Ok(AuditReport {
        records: trace.records.len(),
        rows: checked_rows,
        max_abs_error: max_err,
    })
}
