use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{AllocatorKind, CsiSource, RunConfig};
use super::dataset::Dataset;
use super::evaluate::{evaluate, instances, json_bytes, utility_context, Models, Report};
use super::predict::{train_predictors, CpModels};
use crate::allocator::{train_mlp, train_moe};
use crate::channel::LinkKind;
use crate::nn::{ModelParams, TrainLog};
use crate::numerics::rng::RngStream;
use crate::{Error, Result};

pub const DATASET_FILE: &str = "dataset.bin";
pub const MOE_FILE: &str = "moe.bin";
pub const MLP_FILE: &str = "mlp.bin";

/// Stream roots of the training stages.
const CP_STREAM: u32 = 50;
const MOE_STREAM: u32 = 51;
const MLP_STREAM: u32 = 52;

/// Train the predictor sub-modules on the training split.
pub fn stage_train_cp(ds: &Dataset) -> Result<(CpModels, Vec<(LinkKind, TrainLog)>)> {
    let cfg = ds.config();
    train_predictors(
        ds,
        &cfg.predictor,
        &RngStream::new(cfg.seed()).child(CP_STREAM),
    )
}

/// Refuse to train an allocator on predicted CSI that does not exist.
fn require_csi(csi: CsiSource, models: &Models) -> Result<()> {
    if csi == CsiSource::Cpnet && models.cp.is_none() {
        return Err(Error::StageOrder(
            "allocator training needs trained predictor parameters; run train-cp first or pass --csi=estimated".into(),
        ));
    }
    Ok(())
}

pub fn stage_train_moe(
    ds: &Dataset,
    models: &Models,
    csi: CsiSource,
) -> Result<(ModelParams, TrainLog)> {
    require_csi(csi, models)?;
    let cfg = ds.config();
    let ctx = utility_context(cfg, ds.header.normalizers)?;
    let insts = instances(ds, ds.train_range(), csi, models)?;
    train_moe(
        &insts,
        &ctx,
        &cfg.allocator,
        &RngStream::new(cfg.seed()).child(MOE_STREAM),
    )
}

pub fn stage_train_mlp(
    ds: &Dataset,
    models: &Models,
    csi: CsiSource,
) -> Result<(ModelParams, TrainLog)> {
    require_csi(csi, models)?;
    let cfg = ds.config();
    let ctx = utility_context(cfg, ds.header.normalizers)?;
    let insts = instances(ds, ds.train_range(), csi, models)?;
    train_mlp(
        &insts,
        &ctx,
        &cfg.allocator,
        &RngStream::new(cfg.seed()).child(MLP_STREAM),
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLogs {
    pub cp: Vec<(LinkKind, TrainLog)>,
    pub moe: Option<TrainLog>,
    pub mlp: Option<TrainLog>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub dataset: Dataset,
    pub models: Models,
    pub logs: TrainLogs,
    pub report: Report,
    /// Every file written, in write order.
    pub files: Vec<PathBuf>,
}

/// Dataset → predictors → allocators → evaluation, everything written
/// under `out`.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<PipelineOutputs> {
    let mut files = Vec::new();
    let ds = Dataset::generate(cfg)?;
    let p = out.join(DATASET_FILE);
    ds.save(&p)?;
    files.push(p);
    let mut models = Models::default();
    let mut logs = TrainLogs::default();
    if cfg.eval.csi == CsiSource::Cpnet {
        let (cp, l) = stage_train_cp(&ds)?;
        files.extend(cp.save(out)?);
        models.cp = Some(cp);
        logs.cp = l;
    }
    if cfg.eval.allocators.contains(&AllocatorKind::Moe) {
        let (m, l) = stage_train_moe(&ds, &models, cfg.eval.csi)?;
        let p = out.join(MOE_FILE);
        m.save(&p)?;
        files.push(p);
        models.moe = Some(m);
        logs.moe = Some(l);
    }
    if cfg.eval.allocators.contains(&AllocatorKind::Mlp) {
        let (m, l) = stage_train_mlp(&ds, &models, cfg.eval.csi)?;
        let p = out.join(MLP_FILE);
        m.save(&p)?;
        files.push(p);
        models.mlp = Some(m);
        logs.mlp = Some(l);
    }
    let p = out.join("train_log.json");
    std::fs::write(&p, json_bytes(&logs)?).map_err(|e| Error::io(&p, e))?;
    files.push(p);
    let report = evaluate(&ds, &models)?;
    report.write(out)?;
    files.extend(["metrics.csv", "summary.json", "trace.json"].map(|f| out.join(f)));
    Ok(PipelineOutputs {
        dataset: ds,
        models,
        logs,
        report,
        files,
    })
}
