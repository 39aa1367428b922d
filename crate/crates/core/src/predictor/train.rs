use super::cpnet::{cp_forward_tape, cp_init, input_scale, CpDims};
use super::features::LinkSet;
use super::PredictorConfig;
use crate::nn::{fit, Bound, FitOptions, ModelParams, TrainLog};
use crate::numerics::rng::RngStream;
use crate::numerics::tape::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Quality-weighted loss of the records `idx` on `tape`.
///
/// The network sees each history divided by its RMS `s`; the loss is the
/// raw-scale `ω̂‖s·y − label‖²`, evaluated as `ω̂ s²‖y − label/s‖²`.
pub fn cp_batch_loss(
    tape: &mut Tape,
    p: &Bound,
    dims: CpDims,
    set: &LinkSet,
    idx: &[usize],
    eps_hat: f64,
    cq_aware: bool,
) -> Result<Var> {
    let d = dims.model_dim();
    let b = idx.len();
    let mut x = Vec::with_capacity(b * dims.seq_len * d);
    let mut t = Vec::with_capacity(b * d);
    let mut w = Vec::with_capacity(b);
    for &i in idx {
        let f = set.feature(i);
        let s = input_scale(f);
        x.extend(f.iter().map(|v| v / s));
        t.extend(set.label(i).iter().map(|v| v / s));
        let q = if cq_aware {
            1.0 / (set.theta[i] + eps_hat)
        } else {
            1.0
        };
        w.push(q * s * s);
    }
    let xv = tape.leaf(Tensor::new(vec![b, dims.seq_len, d], x)?);
    let tv = tape.leaf(Tensor::new(vec![b, d], t)?);
    let wv = tape.leaf(Tensor::vector(w));
    let (y, _) = cp_forward_tape(tape, p, xv, dims)?;
    let e = tape.sub(y, tv)?;
    let e = tape.square(e);
    let e = tape.sum_axis(e, 1)?;
    let e = tape.mul(e, wv)?;
    Ok(tape.mean(e))
}

/// Supervised training of one sub-module on the records of `set`.
pub fn train_cp(
    set: &LinkSet,
    cfg: &PredictorConfig,
    rng: &RngStream,
) -> Result<(ModelParams, TrainLog)> {
    if set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if set.seq_len != cfg.seq_len {
        return Err(Error::config(format!(
            "dataset history length {} differs from configured {}",
            set.seq_len, cfg.seq_len
        )));
    }
    let init = cp_init(set.kind, cfg, set.antennas, &mut rng.child(0).sampler())?;
    let dims = CpDims::of(&init)?;
    let mut pick = rng.child(1).sampler();
    let train: LinkSet = match cfg.max_links {
        Some(m) if m < set.len() => {
            let mut idx: Vec<usize> = (0..set.len()).collect();
            for i in 0..m {
                let j = i + pick.index(set.len() - i);
                idx.swap(i, j);
            }
            idx.truncate(m);
            idx.sort_unstable();
            set.subset(&idx)
        }
        _ => set.clone(),
    };
    let opts = FitOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        clip: None,
    };
    let (params, log) = fit(
        &init,
        train.len(),
        &opts,
        &mut rng.child(2).sampler(),
        |tape, p, idx| cp_batch_loss(tape, p, dims, &train, idx, cfg.eps_hat, cfg.cq_aware),
    )?;
    Ok((params.with_meta("seed", serde_json::json!(rng.seed())), log))
}
