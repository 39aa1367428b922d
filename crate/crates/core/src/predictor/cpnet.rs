use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::json;

use super::features::{FeatureSequence, LinkSet};
use super::PredictorConfig;
use crate::channel::LinkKind;
use crate::nn::{glorot, linear, Bound, ModelParams};
use crate::numerics::rng::Sampler;
use crate::numerics::tape::{Tape, Tensor, Var};
use crate::{Error, Result};

pub const CP_KIND: &str = "cpnet";

/// Dimensions recorded in a predictor's metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpDims {
    pub seq_len: usize,
    pub antennas: usize,
    pub heads: usize,
}

impl CpDims {
    pub fn model_dim(&self) -> usize {
        2 * self.antennas
    }

    pub fn of(params: &ModelParams) -> Result<Self> {
        if params.kind() != CP_KIND {
            return Err(Error::shape(format!(
                "expected {CP_KIND} parameters, got {}",
                params.kind()
            )));
        }
        Ok(Self {
            seq_len: params.meta_usize("seq_len")?,
            antennas: params.meta_usize("antennas")?,
            heads: params.meta_usize("heads")?,
        })
    }
}

/// Fresh predictor sub-module for one link kind.
pub fn cp_init(
    kind: LinkKind,
    cfg: &PredictorConfig,
    antennas: usize,
    s: &mut Sampler,
) -> Result<ModelParams> {
    cfg.validate(antennas)?;
    let d = 2 * antennas;
    let v = cfg.seq_len;
    let ff = 4 * d;
    let lv = antennas * v;
    let mut named = Vec::new();
    let mut dense = |name: &str, i: usize, o: usize, s: &mut Sampler| {
        named.push((format!("{name}_w"), glorot(vec![i, o], i, o, s)));
        named.push((format!("{name}_b"), Tensor::zeros(vec![o])));
    };
    dense("q", d, d, s);
    dense("k", d, d, s);
    dense("v", d, d, s);
    dense("o", d, d, s);
    dense("ff1", d, ff, s);
    dense("ff2", ff, d, s);
    dense("fc1", v * d, lv, s);
    dense("fc2", lv, d, s);
    for ln in ["ln1", "ln2"] {
        named.push((format!("{ln}_g"), Tensor::full(vec![d], 1.0)));
        named.push((format!("{ln}_b"), Tensor::zeros(vec![d])));
    }
    let mut meta = BTreeMap::new();
    meta.insert("link_kind".into(), json!(kind.name()));
    meta.insert("seq_len".into(), json!(v));
    meta.insert("antennas".into(), json!(antennas));
    meta.insert("heads".into(), json!(cfg.heads));
    meta.insert("cq_aware".into(), json!(cfg.cq_aware));
    Ok(ModelParams::new(CP_KIND, meta, named))
}

fn positional_encoding(v: usize, d: usize) -> Tensor {
    let mut pe = vec![0.0; v * d];
    for pos in 0..v {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * freq;
            pe[pos * d + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Tensor::new(vec![v, d], pe).expect("shape")
}

/// Encoder forward on normalized input `x[B, V, 2L]`, returning the
/// `[B, 2L]` output and the per-head attention maps `[B, V, V]`.
pub fn cp_forward_tape(
    tape: &mut Tape,
    p: &Bound,
    x: Var,
    dims: CpDims,
) -> Result<(Var, Vec<Var>)> {
    let s = tape.shape(x).to_vec();
    let d = dims.model_dim();
    if s.len() != 3 || s[1] != dims.seq_len || s[2] != d {
        return Err(Error::shape(format!(
            "predictor input {s:?}, expected [B, {}, {d}]",
            dims.seq_len
        )));
    }
    let b = s[0];
    let pe = tape.leaf(positional_encoding(dims.seq_len, d));
    let z = tape.add(x, pe)?;

    let u = tape.layer_norm_last(z, p.get("ln1_g")?, p.get("ln1_b")?)?;
    let q = linear(tape, u, p.get("q_w")?, p.get("q_b")?)?;
    let k = linear(tape, u, p.get("k_w")?, p.get("k_b")?)?;
    let v = linear(tape, u, p.get("v_w")?, p.get("v_b")?)?;
    let dh = d / dims.heads;
    let mut heads = Vec::with_capacity(dims.heads);
    let mut maps = Vec::with_capacity(dims.heads);
    for h in 0..dims.heads {
        let qh = tape.slice_last(q, h * dh, dh)?;
        let kh = tape.slice_last(k, h * dh, dh)?;
        let vh = tape.slice_last(v, h * dh, dh)?;
        let kt = tape.transpose_last2(kh)?;
        let sc = tape.bmm(qh, kt)?;
        let sc = tape.scale(sc, 1.0 / (dh as f64).sqrt());
        let a = tape.softmax_last(sc)?;
        heads.push(tape.bmm(a, vh)?);
        maps.push(a);
    }
    let cat = tape.concat_last(&heads)?;
    let att = linear(tape, cat, p.get("o_w")?, p.get("o_b")?)?;
    let z1 = tape.add(z, att)?;

    let u2 = tape.layer_norm_last(z1, p.get("ln2_g")?, p.get("ln2_b")?)?;
    let f = linear(tape, u2, p.get("ff1_w")?, p.get("ff1_b")?)?;
    let f = tape.relu(f);
    let f = linear(tape, f, p.get("ff2_w")?, p.get("ff2_b")?)?;
    let z2 = tape.add(z1, f)?;

    let flat = tape.reshape(z2, vec![b, dims.seq_len * d])?;
    let h1 = linear(tape, flat, p.get("fc1_w")?, p.get("fc1_b")?)?;
    let out = linear(tape, h1, p.get("fc2_w")?, p.get("fc2_b")?)?;
    Ok((out, maps))
}

/// Per-link input scale: RMS of the history (1 for an all-zero history).
pub(crate) fn input_scale(feats: &[f64]) -> f64 {
    let ms = feats.iter().map(|x| x * x).sum::<f64>() / feats.len() as f64;
    if ms > 0.0 && ms.is_finite() {
        ms.sqrt()
    } else {
        1.0
    }
}

fn check_seq(dims: CpDims, f: &FeatureSequence) -> Result<()> {
    if f.seq_len != dims.seq_len
        || f.antennas != dims.antennas
        || f.data.len() != f.seq_len * 2 * f.antennas
    {
        return Err(Error::shape(format!(
            "feature sequence {}×{} does not match predictor {}×{}",
            f.seq_len,
            2 * f.antennas,
            dims.seq_len,
            dims.model_dim()
        )));
    }
    Ok(())
}

fn forward_scaled(
    params: &ModelParams,
    dims: CpDims,
    rows: &[&[f64]],
) -> Result<(Vec<f64>, Tape, Vec<Var>)> {
    let d = dims.model_dim();
    let n = rows.len();
    let mut x = Vec::with_capacity(n * dims.seq_len * d);
    let mut scales = Vec::with_capacity(n);
    for r in rows {
        let s = input_scale(r);
        scales.push(s);
        x.extend(r.iter().map(|v| v / s));
    }
    let mut tape = Tape::new();
    let bound = params.bind_named(&mut tape);
    let xv = tape.leaf(Tensor::new(vec![n, dims.seq_len, d], x)?);
    let (out, maps) = cp_forward_tape(&mut tape, &bound, xv, dims)?;
    let y = tape.value(out).data();
    let pred = y
        .iter()
        .enumerate()
        .map(|(j, v)| v * scales[j / d])
        .collect();
    Ok((pred, tape, maps))
}

/// Predicted `op(ĥ[λ+t_a])` for one link.
pub fn cp_forward(params: &ModelParams, feats: &FeatureSequence) -> Result<Vec<f64>> {
    let dims = CpDims::of(params)?;
    check_seq(dims, feats)?;
    Ok(forward_scaled(params, dims, &[&feats.data])?.0)
}

/// Attention maps of every head, each `V × V` row-major.
pub fn attention_weights(params: &ModelParams, feats: &FeatureSequence) -> Result<Vec<Vec<f64>>> {
    let dims = CpDims::of(params)?;
    check_seq(dims, feats)?;
    let (_, tape, maps) = forward_scaled(params, dims, &[&feats.data])?;
    Ok(maps
        .iter()
        .map(|&m| tape.value(m).data().to_vec())
        .collect())
}

/// Predictions `[n, 2L]` for every record of `set`.
pub fn cp_predict(params: &ModelParams, set: &LinkSet) -> Result<Vec<f64>> {
    let dims = CpDims::of(params)?;
    if set.seq_len != dims.seq_len || set.antennas != dims.antennas {
        return Err(Error::shape(
            "link set dimensions do not match the predictor",
        ));
    }
    const CHUNK: usize = 256;
    let idx: Vec<usize> = (0..set.len()).collect();
    let parts: Vec<Result<Vec<f64>>> = idx
        .par_chunks(CHUNK)
        .map(|c| {
            let rows: Vec<&[f64]> = c.iter().map(|&i| set.feature(i)).collect();
            Ok(forward_scaled(params, dims, &rows)?.0)
        })
        .collect();
    let mut out = Vec::with_capacity(set.len() * dims.model_dim());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
