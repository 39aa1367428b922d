use std::collections::BTreeMap;

use serde_json::json;

use super::moe::{check_kind, csi_scale, dense_param};
use super::objective::{evaluate_powers, utility_tape, SinrCoeffs, UtilityContext};
use super::{AllocInstance, AllocationResult, AllocatorConfig};
use crate::nn::{fit, linear, Bound, FitOptions, ModelParams, TrainLog};
use crate::numerics::rng::{RngStream, Sampler};
use crate::numerics::tape::{Tape, Tensor, Var};
use crate::{Error, Result};

pub const MLP_KIND: &str = "mlp";

pub fn mlp_init(
    num_aps: usize,
    antennas: usize,
    p_max: f64,
    input_scale: f64,
    cfg: &AllocatorConfig,
    s: &mut Sampler,
) -> Result<ModelParams> {
    cfg.validate()?;
    if num_aps == 0 || antennas == 0 || !(p_max > 0.0) || !(input_scale > 0.0) {
        return Err(Error::config(
            "allocator needs M, L, p_max and input scale positive",
        ));
    }
    let hidden = cfg.mlp_hidden.unwrap_or(num_aps).max(1);
    let mut named = Vec::new();
    dense_param(&mut named, "m_f1", num_aps * 2 * antennas, hidden, s);
    dense_param(&mut named, "m_f2", hidden, 1, s);
    let mut meta = BTreeMap::new();
    meta.insert("num_aps".into(), json!(num_aps));
    meta.insert("antennas".into(), json!(antennas));
    meta.insert("hidden".into(), json!(hidden));
    meta.insert("p_max".into(), json!(p_max));
    meta.insert("input_scale".into(), json!(input_scale));
    Ok(ModelParams::new(MLP_KIND, meta, named))
}

fn mlp_tape(
    tape: &mut Tape,
    p: &Bound,
    params: &ModelParams,
    insts: &[&AllocInstance],
) -> Result<Var> {
    let (m, l) = (
        params.meta_usize("num_aps")?,
        params.meta_usize("antennas")?,
    );
    let (p_max, scale) = (params.meta_f64("p_max")?, params.meta_f64("input_scale")?);
    let kn = insts.first().map_or(0, |i| i.num_ues);
    let mut x = Vec::new();
    for inst in insts {
        if inst.num_aps != m || inst.antennas != l || inst.num_ues != kn {
            return Err(Error::shape("instance dimensions do not match the MLP"));
        }
        x.extend(inst.csi.iter().map(|v| v / scale));
    }
    let n = insts.len();
    let xv = tape.leaf(Tensor::new(vec![n * kn, m * 2 * l], x)?);
    let h = linear(tape, xv, p.get("m_f1_w")?, p.get("m_f1_b")?)?;
    let h = tape.relu(h);
    let h = linear(tape, h, p.get("m_f2_w")?, p.get("m_f2_b")?)?;
    let h = tape.sigmoid(h);
    let h = tape.scale(h, p_max);
    tape.reshape(h, vec![n, kn])
}

/// Per-UE powers of the shared two-layer baseline.
pub fn mlp_forward(params: &ModelParams, inst: &AllocInstance) -> Result<Vec<f64>> {
    check_kind(params, MLP_KIND)?;
    let mut tape = Tape::new();
    let b = params.bind_named(&mut tape);
    let p = mlp_tape(&mut tape, &b, params, &[inst])?;
    Ok(tape.value(p).data().to_vec())
}

pub fn mlp_allocate(
    params: &ModelParams,
    ctx: &UtilityContext,
    inst: &AllocInstance,
) -> Result<AllocationResult> {
    let p = mlp_forward(params, inst)?;
    let ev = evaluate_powers(ctx, &inst.coeffs, &p)?;
    Ok(AllocationResult::from_eval("mlp", p, &ev))
}

/// `(1 − δ) + L_URLLC`, batch mean.
fn mlp_batch_loss(
    tape: &mut Tape,
    p: &Bound,
    params: &ModelParams,
    ctx: &UtilityContext,
    insts: &[&AllocInstance],
) -> Result<Var> {
    let pw = mlp_tape(tape, p, params, insts)?;
    let coeffs: Vec<&SinrCoeffs> = insts.iter().map(|i| &i.coeffs).collect();
    let (delta, urllc) = utility_tape(tape, ctx, &coeffs, pw)?;
    let d = tape.mean(delta);
    let u = tape.mean(urllc);
    let l = tape.sub(u, d)?;
    Ok(tape.add_scalar(l, 1.0))
}

pub fn train_mlp(
    insts: &[AllocInstance],
    ctx: &UtilityContext,
    cfg: &AllocatorConfig,
    rng: &RngStream,
) -> Result<(ModelParams, TrainLog)> {
    let first = insts.first().ok_or(Error::EmptyDataset)?;
    if insts.iter().any(|i| i.num_ues != ctx.num_ues()) {
        return Err(Error::shape(
            "instance UE count differs from the objective groups",
        ));
    }
    let init = mlp_init(
        first.num_aps,
        first.antennas,
        ctx.urllc.p_max,
        csi_scale(insts),
        cfg,
        &mut rng.child(0).sampler(),
    )?;
    let opts = FitOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        clip: None,
    };
    let (params, log) = fit(
        &init,
        insts.len(),
        &opts,
        &mut rng.child(1).sampler(),
        |tape, p, idx| {
            let batch: Vec<&AllocInstance> = idx.iter().map(|&i| &insts[i]).collect();
            mlp_batch_loss(tape, p, &init, ctx, &batch)
        },
    )?;
    Ok((params.with_meta("seed", json!(rng.seed())), log))
}
