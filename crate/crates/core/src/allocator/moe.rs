use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::json;

use super::objective::{evaluate_powers, utility_tape, SinrCoeffs, UtilityContext};
use super::{fuse, select_renorm, AllocInstance, AllocationResult, AllocatorConfig};
use crate::nn::{fit, glorot, linear, Bound, FitOptions, ModelParams, TrainLog};
use crate::numerics::rng::{RngStream, Sampler};
use crate::numerics::tape::{Tape, Tensor, Var};
use crate::{Error, Result};

pub const MOE_KIND: &str = "moe";

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NetDims {
    pub num_aps: usize,
    pub antennas: usize,
    pub channels: [usize; 3],
    pub p_max: f64,
    pub input_scale: f64,
    pub objective_tag: bool,
}

impl NetDims {
    pub fn width(&self) -> usize {
        2 * self.antennas
    }

    pub fn map_len(&self) -> usize {
        self.num_aps * self.width()
    }

    fn of(params: &ModelParams) -> Result<Self> {
        Ok(Self {
            num_aps: params.meta_usize("num_aps")?,
            antennas: params.meta_usize("antennas")?,
            channels: [
                params.meta_usize("c1")?,
                params.meta_usize("c2")?,
                params.meta_usize("c3")?,
            ],
            p_max: params.meta_f64("p_max")?,
            input_scale: params.meta_f64("input_scale")?,
            objective_tag: params
                .meta()
                .get("objective_tag")
                .and_then(|v| v.as_bool())
                .unwrap_or(false),
        })
    }
}

pub(crate) fn check_kind(params: &ModelParams, kind: &str) -> Result<()> {
    if params.kind() != kind {
        return Err(Error::shape(format!(
            "expected {kind} parameters, got {}",
            params.kind()
        )));
    }
    Ok(())
}

fn conv_param(
    named: &mut Vec<(String, Tensor)>,
    name: &str,
    cin: usize,
    cout: usize,
    s: &mut Sampler,
) {
    named.push((
        format!("{name}_w"),
        glorot(vec![cout, cin, 3, 3], cin * 9, cout * 9, s),
    ));
    named.push((format!("{name}_b"), Tensor::zeros(vec![cout])));
}

pub(crate) fn dense_param(
    named: &mut Vec<(String, Tensor)>,
    name: &str,
    i: usize,
    o: usize,
    s: &mut Sampler,
) {
    named.push((format!("{name}_w"), glorot(vec![i, o], i, o, s)));
    named.push((format!("{name}_b"), Tensor::zeros(vec![o])));
}

/// RMS of all CSI entries, used to normalize network inputs.
pub(crate) fn csi_scale(insts: &[AllocInstance]) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for i in insts {
        s += i.csi.iter().map(|x| x * x).sum::<f64>();
        n += i.csi.len();
    }
    if n == 0 || !(s > 0.0) {
        1.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Fresh experts and gate for `M` APs with `L` antennas.
pub fn moe_init(
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
    let ch = cfg.expert.channels(num_aps);
    let l2 = 2 * antennas;
    let mut named = Vec::new();
    for n in 1..=3 {
        conv_param(&mut named, &format!("e{n}_c1"), 1, ch[0], s);
        conv_param(&mut named, &format!("e{n}_c2"), ch[0], ch[1], s);
        conv_param(&mut named, &format!("e{n}_c3"), ch[1], ch[2], s);
        dense_param(&mut named, &format!("e{n}_f1"), l2, antennas, s);
        dense_param(&mut named, &format!("e{n}_f2"), antennas, 1, s);
    }
    let tag = if cfg.gate.objective_tag { 3 } else { 0 };
    dense_param(&mut named, "g_f1", num_aps * l2 + 3 + tag, num_aps, s);
    dense_param(&mut named, "g_f2", num_aps, 3, s);
    let mut meta = BTreeMap::new();
    meta.insert("num_aps".into(), json!(num_aps));
    meta.insert("antennas".into(), json!(antennas));
    meta.insert("c1".into(), json!(ch[0]));
    meta.insert("c2".into(), json!(ch[1]));
    meta.insert("c3".into(), json!(ch[2]));
    meta.insert("p_max".into(), json!(p_max));
    meta.insert("input_scale".into(), json!(input_scale));
    meta.insert("objective_tag".into(), json!(cfg.gate.objective_tag));
    meta.insert("tau_w".into(), json!(cfg.gate.tau_w));
    meta.insert("margin".into(), json!(cfg.gate.margin));
    Ok(ModelParams::new(MOE_KIND, meta, named))
}

/// Expert `n` (1-based) on per-UE maps `x[R, 1, M, 2L]`, giving `[R]` watts.
fn expert_tape(tape: &mut Tape, p: &Bound, n: usize, x: Var, d: &NetDims) -> Result<Var> {
    let r = tape.shape(x)[0];
    let mut h = x;
    for c in 1..=3 {
        h = tape.conv3x3(
            h,
            p.get(&format!("e{n}_c{c}_w"))?,
            p.get(&format!("e{n}_c{c}_b"))?,
        )?;
        h = tape.relu(h);
    }
    let rows = d.channels[2] * d.num_aps;
    let h = tape.reshape(h, vec![r, rows, d.width()])?;
    let h = tape.sum_axis(h, 1)?;
    let h = tape.scale(h, 1.0 / rows as f64);
    let h = linear(
        tape,
        h,
        p.get(&format!("e{n}_f1_w"))?,
        p.get(&format!("e{n}_f1_b"))?,
    )?;
    let h = tape.relu(h);
    let h = linear(
        tape,
        h,
        p.get(&format!("e{n}_f2_w"))?,
        p.get(&format!("e{n}_f2_b"))?,
    )?;
    let h = tape.sigmoid(h);
    let h = tape.scale(h, d.p_max);
    tape.reshape(h, vec![r])
}

/// Gate weights `[R, 3]` from normalized maps `[R, M·2L]`, expert powers
/// `[R, 3]` (watts) and optional objective tags `[R, 3]`.
fn gate_tape(
    tape: &mut Tape,
    p: &Bound,
    flat: Var,
    powers: Var,
    tag: Option<Var>,
    d: &NetDims,
) -> Result<Var> {
    let pw = tape.scale(powers, 1.0 / d.p_max);
    let mut parts = vec![flat, pw];
    parts.extend(tag);
    let g = tape.concat_last(&parts)?;
    let g = linear(tape, g, p.get("g_f1_w")?, p.get("g_f1_b")?)?;
    let g = tape.relu(g);
    let g = linear(tape, g, p.get("g_f2_w")?, p.get("g_f2_b")?)?;
    Ok(tape.sigmoid(g))
}

/// Expert powers `[N·K, 3]` and gate weights `[N·K, 3]` on the tape.
fn moe_tape(
    tape: &mut Tape,
    p: &Bound,
    d: &NetDims,
    insts: &[&AllocInstance],
    targets: &[usize],
) -> Result<(Var, Var)> {
    let r = insts.iter().map(|i| i.num_ues).sum::<usize>();
    if targets.len() != r {
        return Err(Error::shape("one objective index per UE row is required"));
    }
    let mut x = Vec::with_capacity(r * d.map_len());
    for inst in insts {
        if inst.num_aps != d.num_aps || inst.antennas != d.antennas {
            return Err(Error::shape(format!(
                "instance with M = {}, L = {} for a model with M = {}, L = {}",
                inst.num_aps, inst.antennas, d.num_aps, d.antennas
            )));
        }
        x.extend(inst.csi.iter().map(|v| v / d.input_scale));
    }
    let img = tape.leaf(Tensor::new(vec![r, 1, d.num_aps, d.width()], x.clone())?);
    let flat = tape.leaf(Tensor::new(vec![r, d.map_len()], x)?);
    let mut cols = Vec::with_capacity(3);
    for n in 1..=3 {
        let e = expert_tape(tape, p, n, img, d)?;
        cols.push(tape.reshape(e, vec![r, 1])?);
    }
    let powers = tape.concat_last(&cols)?;
    let tag = if d.objective_tag {
        let mut t = vec![0.0; r * 3];
        for (i, &j) in targets.iter().enumerate() {
            t[i * 3 + j] = 1.0;
        }
        Some(tape.leaf(Tensor::new(vec![r, 3], t)?))
    } else {
        None
    };
    let w = gate_tape(tape, p, flat, powers, tag, d)?;
    Ok((powers, w))
}

fn targets_for(ctx: &UtilityContext, n: usize) -> Vec<usize> {
    let t: Vec<usize> = ctx.groups.assign.iter().map(|o| o.index()).collect();
    t.iter().copied().cycle().take(n * t.len()).collect()
}

/// The individual Stage-2 loss terms.
#[derive(Debug, Clone, Copy)]
pub struct MoeLosses {
    pub obj: Var,
    pub contrastive: Var,
    pub urllc: Var,
    pub total: Var,
}

/// Batch losses for fused powers `p_out[N, K]`, gate weights `w[N·K, 3]`
/// and target expert indices per UE row.
pub fn moe_loss(
    tape: &mut Tape,
    ctx: &UtilityContext,
    coeffs: &[&SinrCoeffs],
    p_out: Var,
    w: Var,
    targets: &[usize],
    margin: f64,
) -> Result<MoeLosses> {
    let n = coeffs.len();
    let kn = ctx.num_ues();
    if tape.shape(w) != [n * kn, 3] || targets.len() != n * kn || targets.iter().any(|&t| t > 2) {
        return Err(Error::shape("gate weights or targets do not match N·K × 3"));
    }
    let (delta, urllc) = utility_tape(tape, ctx, coeffs, p_out)?;
    let d_mean = tape.mean(delta);
    let neg = tape.scale(d_mean, -1.0);
    let obj = tape.add_scalar(neg, 1.0);
    let urllc = tape.mean(urllc);

    let mut onehot = vec![0.0; n * kn * 3];
    for (i, &t) in targets.iter().enumerate() {
        onehot[i * 3 + t] = 1.0;
    }
    let mask: Vec<f64> = onehot.iter().map(|v| 1.0 - v).collect();
    let onehot = tape.leaf(Tensor::new(vec![n * kn, 3], onehot)?);
    let mask = tape.leaf(Tensor::new(vec![n * kn, 3], mask)?);
    let tw = tape.mul(w, onehot)?;
    let tw = tape.sum_axis(tw, 1)?;
    let tw = tape.expand_last(tw, 3);
    let diff = tape.sub(tw, w)?;
    let hinge = tape.scale(diff, -1.0);
    let hinge = tape.add_scalar(hinge, margin);
    let hinge = tape.relu(hinge);
    let hinge = tape.mul(hinge, mask)?;
    let con = tape.sum(hinge);
    let contrastive = tape.scale(con, 1.0 / (n * kn) as f64);

    let s = tape.add(obj, contrastive)?;
    let s = tape.add(s, urllc)?;
    let total = tape.scale(s, 1.0 / 3.0);
    Ok(MoeLosses {
        obj,
        contrastive,
        urllc,
        total,
    })
}

/// [`moe_loss`] on plain values of one sample: `(L_obj, L_con, L_URLLC, L_total)`.
pub fn moe_loss_values(
    ctx: &UtilityContext,
    coeffs: &SinrCoeffs,
    p_out: &[f64],
    w: &[[f64; 3]],
    targets: &[usize],
    margin: f64,
) -> Result<(f64, f64, f64, f64)> {
    let kn = ctx.num_ues();
    let mut tape = Tape::new();
    let pv = tape.leaf(Tensor::new(vec![1, kn], p_out.to_vec())?);
    let wv = tape.leaf(Tensor::new(
        vec![w.len(), 3],
        w.iter().flatten().copied().collect(),
    )?);
    let l = moe_loss(&mut tape, ctx, &[coeffs], pv, wv, targets, margin)?;
    let v = |x: Var| tape.value(x).item();
    Ok((v(l.obj), v(l.contrastive), v(l.urllc), v(l.total)))
}

/// Soft fusion `Σ w_n p_n / Σ w_n` reshaped to `[N, K]`.
fn soft_fuse(tape: &mut Tape, powers: Var, w: Var, n: usize, kn: usize) -> Result<Var> {
    let num = tape.mul(powers, w)?;
    let num = tape.sum_axis(num, 1)?;
    let den = tape.sum_axis(w, 1)?;
    let p = tape.div(num, den)?;
    tape.reshape(p, vec![n, kn])
}

/// Training-mode batch loss (soft fusion).
pub(crate) fn moe_batch_loss(
    tape: &mut Tape,
    p: &Bound,
    d: &NetDims,
    ctx: &UtilityContext,
    insts: &[&AllocInstance],
    margin: f64,
) -> Result<MoeLosses> {
    let n = insts.len();
    let kn = ctx.num_ues();
    let targets = targets_for(ctx, n);
    let (powers, w) = moe_tape(tape, p, d, insts, &targets)?;
    let p_out = soft_fuse(tape, powers, w, n, kn)?;
    let coeffs: Vec<&SinrCoeffs> = insts.iter().map(|i| &i.coeffs).collect();
    moe_loss(tape, ctx, &coeffs, p_out, w, &targets, margin)
}

/// Expert powers and raw gate weights per UE.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeOutputs {
    pub expert_powers: Vec<[f64; 3]>,
    pub raw_weights: Vec<[f64; 3]>,
}

fn rows3(v: &[f64]) -> Vec<[f64; 3]> {
    v.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn moe_forward(
    params: &ModelParams,
    ctx: &UtilityContext,
    inst: &AllocInstance,
) -> Result<MoeOutputs> {
    check_kind(params, MOE_KIND)?;
    let d = NetDims::of(params)?;
    if inst.num_ues != ctx.num_ues() {
        return Err(Error::shape(
            "instance UE count differs from the objective groups",
        ));
    }
    let mut tape = Tape::new();
    let b = params.bind_named(&mut tape);
    let (powers, w) = moe_tape(&mut tape, &b, &d, &[inst], &targets_for(ctx, 1))?;
    Ok(MoeOutputs {
        expert_powers: rows3(tape.value(powers).data()),
        raw_weights: rows3(tape.value(w).data()),
    })
}

/// Powers of expert `n` (1-based) for each UE of `inst`.
pub fn expert_forward(params: &ModelParams, n: usize, inst: &AllocInstance) -> Result<Vec<f64>> {
    check_kind(params, MOE_KIND)?;
    if !(1..=3).contains(&n) {
        return Err(Error::shape(format!("expert index {n} outside 1..=3")));
    }
    let d = NetDims::of(params)?;
    if inst.num_aps != d.num_aps || inst.antennas != d.antennas {
        return Err(Error::shape("instance dimensions do not match the experts"));
    }
    let mut tape = Tape::new();
    let b = params.bind_named(&mut tape);
    let x = inst.csi.iter().map(|v| v / d.input_scale).collect();
    let img = tape.leaf(Tensor::new(vec![inst.num_ues, 1, d.num_aps, d.width()], x)?);
    let e = expert_tape(&mut tape, &b, n, img, &d)?;
    Ok(tape.value(e).data().to_vec())
}

/// Gate weights for explicit per-UE inputs: row `k` is the flattened
/// `M·2L` map, three expert powers and (when the model uses it) the
/// objective index.
pub fn gate_forward(
    params: &ModelParams,
    maps: &[f64],
    expert_powers: &[[f64; 3]],
    objectives: &[usize],
) -> Result<Vec<[f64; 3]>> {
    check_kind(params, MOE_KIND)?;
    let d = NetDims::of(params)?;
    let r = expert_powers.len();
    if maps.len() != r * d.map_len() || objectives.len() != r {
        return Err(Error::shape(format!(
            "gate input width must be {} per UE",
            d.map_len() + 3
        )));
    }
    let mut tape = Tape::new();
    let b = params.bind_named(&mut tape);
    let flat = tape.leaf(Tensor::new(
        vec![r, d.map_len()],
        maps.iter().map(|v| v / d.input_scale).collect(),
    )?);
    let pw = tape.leaf(Tensor::new(
        vec![r, 3],
        expert_powers.iter().flatten().copied().collect(),
    )?);
    let tag = if d.objective_tag {
        let mut t = vec![0.0; r * 3];
        for (i, &j) in objectives.iter().enumerate() {
            t[i * 3 + j.min(2)] = 1.0;
        }
        Some(tape.leaf(Tensor::new(vec![r, 3], t)?))
    } else {
        None
    };
    let w = gate_tape(&mut tape, &b, flat, pw, tag, &d)?;
    Ok(rows3(tape.value(w).data()))
}

/// Evaluation-time allocation with hard threshold-renormalize fusion.
pub fn moe_allocate(
    params: &ModelParams,
    ctx: &UtilityContext,
    inst: &AllocInstance,
) -> Result<AllocationResult> {
    let tau_w = params.meta_f64("tau_w")?;
    let out = moe_forward(params, ctx, inst)?;
    let mut powers = Vec::with_capacity(inst.num_ues);
    let mut weights = Vec::with_capacity(inst.num_ues);
    let mut selected = Vec::with_capacity(inst.num_ues);
    for (ep, w) in out.expert_powers.iter().zip(&out.raw_weights) {
        let (set, wb) = select_renorm(w, tau_w);
        powers.push(fuse(ep, &wb));
        weights.push(wb);
        selected.push(set);
    }
    let ev = evaluate_powers(ctx, &inst.coeffs, &powers)?;
    let mut res = AllocationResult::from_eval("moe", powers, &ev);
    res.raw_weights = Some(out.raw_weights);
    res.weights = Some(weights);
    res.selected = Some(selected);
    Ok(res)
}

/// Label-free joint training of experts and gate on `L_total`.
pub fn train_moe(
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
    let init = moe_init(
        first.num_aps,
        first.antennas,
        ctx.urllc.p_max,
        csi_scale(insts),
        cfg,
        &mut rng.child(0).sampler(),
    )?;
    let d = NetDims::of(&init)?;
    let opts = FitOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        clip: None,
    };
    let margin = cfg.gate.margin;
    let (params, log) = fit(
        &init,
        insts.len(),
        &opts,
        &mut rng.child(1).sampler(),
        |tape, p, idx| {
            let batch: Vec<&AllocInstance> = idx.iter().map(|&i| &insts[i]).collect();
            Ok(moe_batch_loss(tape, p, &d, ctx, &batch, margin)?.total)
        },
    )?;
    Ok((params.with_meta("seed", json!(rng.seed())), log))
}

/// Mean soft-fusion `L_total` of `params` over `insts`.
pub fn moe_eval_loss(
    params: &ModelParams,
    ctx: &UtilityContext,
    insts: &[AllocInstance],
) -> Result<f64> {
    check_kind(params, MOE_KIND)?;
    let d = NetDims::of(params)?;
    let margin = params.meta_f64("margin")?;
    let parts: Vec<Result<(f64, usize)>> = insts
        .par_chunks(64)
        .map(|c| {
            let mut tape = Tape::new();
            let b = params.bind_named(&mut tape);
            let refs: Vec<&AllocInstance> = c.iter().collect();
            let l = moe_batch_loss(&mut tape, &b, &d, ctx, &refs, margin)?;
            Ok((tape.value(l.total).item() * c.len() as f64, c.len()))
        })
        .collect();
    let (mut s, mut n) = (0.0, 0);
    for p in parts {
        let (a, b) = p?;
        s += a;
        n += b;
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(s / n as f64)
}

/// Parameter-leaf loss builder for gradient checks.
pub fn moe_loss_graph<'a>(
    params: &'a ModelParams,
    ctx: &'a UtilityContext,
    insts: &'a [AllocInstance],
) -> Result<impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'a> {
    check_kind(params, MOE_KIND)?;
    let d = NetDims::of(params)?;
    let margin = params.meta_f64("margin")?;
    Ok(move |tape: &mut Tape, vars: &[Var]| {
        let b = params.bound_from(vars)?;
        let refs: Vec<&AllocInstance> = insts.iter().collect();
        Ok(moe_batch_loss(tape, &b, &d, ctx, &refs, margin)?.total)
    })
}
