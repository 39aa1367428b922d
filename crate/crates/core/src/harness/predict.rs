use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::CsiSource;
use super::dataset::Dataset;
use crate::channel::LinkKind;
use crate::nn::{ModelParams, TrainLog};
use crate::numerics::linalg::ComplexVec;
use crate::numerics::rng::RngStream;
use crate::predictor::{
    cp_predict, decile_nmse, kalman_set, nmse_db, persistence, train_cp, unop, DecileNmse,
    PredictorConfig,
};
use crate::{Error, Result};

/// One predictor sub-module per link kind present in the scenario.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CpModels {
    pub models: [Option<ModelParams>; 3],
}

impl CpModels {
    pub fn file_name(kind: LinkKind) -> String {
        format!("cp_{}.bin", kind.name())
    }

    pub fn get(&self, kind: LinkKind) -> Result<&ModelParams> {
        self.models[kind.index()].as_ref().ok_or_else(|| {
            Error::StageOrder(format!("no trained predictor for {} links", kind.name()))
        })
    }

    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for kind in LinkKind::ALL {
            if let Some(m) = &self.models[kind.index()] {
                let p = dir.join(Self::file_name(kind));
                m.save(&p)?;
                out.push(p);
            }
        }
        Ok(out)
    }

    /// Load whichever sub-modules exist in `dir`; errors if none does.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut c = CpModels::default();
        for kind in LinkKind::ALL {
            let p = dir.join(Self::file_name(kind));
            if p.exists() {
                c.models[kind.index()] = Some(ModelParams::load(&p)?);
            }
        }
        if c.models.iter().all(Option::is_none) {
            return Err(Error::StageOrder(format!(
                "no predictor parameter files in {}",
                dir.display()
            )));
        }
        Ok(c)
    }
}

/// Train a sub-module for every kind with training links. Kind `n` uses
/// stream `rng/[n]`.
pub fn train_predictors(
    ds: &Dataset,
    cfg: &PredictorConfig,
    rng: &RngStream,
) -> Result<(CpModels, Vec<(LinkKind, TrainLog)>)> {
    let mut models = CpModels::default();
    let mut logs = Vec::new();
    for kind in LinkKind::ALL {
        let (set, _) = ds.link_set(kind, ds.train_range())?;
        if set.is_empty() {
            continue;
        }
        let (p, log) = train_cp(&set, cfg, &rng.child(kind.index() as u32))?;
        models.models[kind.index()] = Some(p);
        logs.push((kind, log));
    }
    Ok((models, logs))
}

/// Predictions, link set and `(sample, link)` origins for one link kind.
pub type KindPrediction = (Vec<f64>, crate::predictor::LinkSet, Vec<(usize, usize)>);

/// Predicted `op(ĥ)` of every link of `kind` in `samples`, aligned with
/// `ds.link_set(kind, samples)`.
pub fn predict_kind(
    ds: &Dataset,
    kind: LinkKind,
    samples: Range<usize>,
    source: CsiSource,
    cp: Option<&CpModels>,
) -> Result<KindPrediction> {
    let (set, origin) = ds.link_set(kind, samples)?;
    let pred = if set.is_empty() {
        Vec::new()
    } else {
        match source {
            CsiSource::Perfect => set.truth.clone(),
            CsiSource::Estimated => persistence(&set),
            CsiSource::Kalman => kalman_set(&set)?,
            CsiSource::Cpnet => {
                let cp = cp.ok_or_else(|| {
                    Error::StageOrder("CP-Net CSI requested without predictor parameters".into())
                })?;
                cp_predict(cp.get(kind)?, &set)?
            }
        }
    };
    Ok((pred, set, origin))
}

/// Allocator-side CSI per sample plus per-kind NMSE against the noise-free
/// channel.
#[derive(Debug, Clone)]
pub struct Predictions {
    pub start: usize,
    /// `[sample][k·M + m]`.
    pub csi: Vec<Vec<ComplexVec>>,
    /// `[sample][kind]`, `None` for kinds absent from the scenario.
    pub nmse_db: Vec<[Option<f64>; 3]>,
    pub overall: [Option<KindNmse>; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KindNmse {
    /// Against the noise-free channel.
    pub truth: DecileNmse,
    /// Against the LS estimate the model is trained on.
    pub label: DecileNmse,
}

pub fn predict_samples(
    ds: &Dataset,
    samples: Range<usize>,
    source: CsiSource,
    cp: Option<&CpModels>,
) -> Result<Predictions> {
    let h = &ds.header;
    let per = h.num_ues * h.num_aps;
    let n = samples.len();
    let w = 2 * h.antennas;
    let mut csi: Vec<Vec<Option<ComplexVec>>> = vec![vec![None; per]; n];
    let mut nmse = vec![[None; 3]; n];
    let mut overall = [None; 3];
    for kind in LinkKind::ALL {
        let (pred, set, origin) = predict_kind(ds, kind, samples.clone(), source, cp)?;
        if set.is_empty() {
            continue;
        }
        overall[kind.index()] = Some(KindNmse {
            truth: decile_nmse(&pred, &set.truth, &set.theta, w)?,
            label: decile_nmse(&pred, &set.labels, &set.theta, w)?,
        });
        let mut by_sample: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); n];
        for (i, &(s, link)) in origin.iter().enumerate() {
            let p = &pred[i * w..(i + 1) * w];
            csi[s - samples.start][link] = Some(unop(p)?);
            let e = &mut by_sample[s - samples.start];
            e.0.extend_from_slice(p);
            e.1.extend_from_slice(set.truth_at(i));
        }
        for (j, (p, t)) in by_sample.iter().enumerate() {
            nmse[j][kind.index()] = Some(nmse_db(p, t)?);
        }
    }
    let csi = csi
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|h| h.ok_or_else(|| Error::shape("link left unpredicted")))
                .collect()
        })
        .collect::<Result<Vec<Vec<ComplexVec>>>>()?;
    Ok(Predictions {
        start: samples.start,
        csi,
        nmse_db: nmse,
        overall,
    })
}
