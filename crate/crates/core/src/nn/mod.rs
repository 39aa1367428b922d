//! Parameter records, persistence, initialization and the optimizer used by
//! the predictor and allocator networks.

pub mod binfile;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::rng::Sampler;
use crate::numerics::tape::{Tape, Tensor, Var};
use crate::{Error, Result};

const PARAM_MAGIC: &[u8; 8] = b"CFMOEPRM";
pub const PARAM_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamHeader {
    kind: String,
    meta: BTreeMap<String, serde_json::Value>,
    tensors: Vec<TensorSpec>,
}

/// Immutable, named collection of parameter tensors with free-form metadata
/// (dimensions, link kind, config hash, seed).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    kind: String,
    meta: BTreeMap<String, serde_json::Value>,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn new(
        kind: impl Into<String>,
        meta: BTreeMap<String, serde_json::Value>,
        named: Vec<(String, Tensor)>,
    ) -> Self {
        let (names, tensors) = named.into_iter().unzip();
        Self {
            kind: kind.into(),
            meta,
            names,
            tensors,
        }
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn meta(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.meta
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::config(format!("parameter metadata lacks numeric `{key}`")))
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| Error::config(format!("parameter metadata lacks integer `{key}`")))
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::shape(format!("no parameter named `{name}`")))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.tensors[self.index_of(name)?])
    }

    /// Same names, shapes and metadata with new values.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<Self> {
        if tensors.len() != self.tensors.len()
            || tensors
                .iter()
                .zip(&self.tensors)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::shape(
                "replacement tensors do not match parameter shapes",
            ));
        }
        Ok(Self {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            names: self.names.clone(),
            tensors,
        })
    }

    pub fn with_meta(&self, key: &str, value: serde_json::Value) -> Self {
        let mut out = self.clone();
        out.meta.insert(key.to_string(), value);
        out
    }

    /// Record every tensor as a leaf on `tape`, in declaration order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Like [`ModelParams::bind`], with lookup by name.
    pub fn bind_named(&self, tape: &mut Tape) -> Bound {
        Bound {
            names: self.names.clone(),
            vars: self.bind(tape),
        }
    }

    /// Name lookup over leaves already recorded in declaration order.
    pub fn bound_from(&self, vars: &[Var]) -> Result<Bound> {
        if vars.len() != self.tensors.len() {
            return Err(Error::shape(format!(
                "{} leaves for {} parameter tensors",
                vars.len(),
                self.tensors.len()
            )));
        }
        Ok(Bound {
            names: self.names.clone(),
            vars: vars.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ParamHeader {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .names
                .iter()
                .zip(&self.tensors)
                .map(|(n, t)| TensorSpec {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let payload: Vec<f64> = self
            .tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect();
        binfile::encode(PARAM_MAGIC, PARAM_FORMAT_VERSION, &header, &payload)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let (header, payload): (ParamHeader, Vec<f64>) =
            binfile::decode(path, bytes, PARAM_MAGIC, PARAM_FORMAT_VERSION)?;
        let mut off = 0;
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for spec in header.tensors {
            let n: usize = spec.shape.iter().product();
            if off + n > payload.len() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("payload too short for tensor `{}`", spec.name),
                });
            }
            tensors.push(Tensor::new(spec.shape, payload[off..off + n].to_vec())?);
            names.push(spec.name);
            off += n;
        }
        if off != payload.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: "trailing payload after last tensor".into(),
            });
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            names,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binfile::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &binfile::read_file(path)?)
    }
}

/// Parameter leaves of one model on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::shape(format!("no parameter named {name}")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Mini-batch schedule for [`fit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: Option<f64>,
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

/// Shuffled mini-batch Adam over `n` samples. `loss` records the batch loss
/// for the given sample indices on a fresh tape; parameters are bound
/// before the call.
pub fn fit<F>(
    params: &ModelParams,
    n: usize,
    opts: &FitOptions,
    s: &mut Sampler,
    mut loss: F,
) -> Result<(ModelParams, TrainLog)>
where
    F: FnMut(&mut Tape, &Bound, &[usize]) -> Result<Var>,
{
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if opts.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut tensors = params.tensors().to_vec();
    let mut opt = Adam::new(&tensors, opts.lr);
    if let Some(c) = opts.clip {
        opt = opt.with_clip(c);
    }
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..opts.epochs {
        for i in (1..n).rev() {
            order.swap(i, s.index(i + 1));
        }
        let mut total = 0.0;
        for (step, batch) in order.chunks(opts.batch_size).enumerate() {
            let current = params.with_tensors(tensors.clone())?;
            let mut tape = Tape::new();
            let bound = current.bind_named(&mut tape);
            let out = loss(&mut tape, &bound, batch)?;
            let value = tape.value(out).item();
            let grads = tape.backward(out)?;
            let g: Vec<Vec<f64>> = bound
                .vars()
                .iter()
                .zip(&tensors)
                .map(|(&v, t)| grads.wrt_or_zero(v, t.len()))
                .collect();
            if !value.is_finite() || g.iter().flatten().any(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: value,
                });
            }
            opt.step(&mut tensors, &g);
            total += value * batch.len() as f64;
        }
        log.epoch_loss.push(total / n as f64);
    }
    Ok((params.with_tensors(tensors)?, log))
}

/// Glorot-uniform tensor with the given fans.
pub fn glorot(shape: Vec<usize>, fan_in: usize, fan_out: usize, s: &mut Sampler) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| s.uniform_in(-a, a)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// `x · w + b` with `w[n, m]`, `b[m]`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

/// Adaptive-moment optimizer with optional global-norm gradient clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip: Option<f64>,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: None,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.clip = Some(max_norm);
        self
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) {
        self.t += 1;
        let mut scale = 1.0;
        if let Some(c) = self.clip {
            let norm = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|g| g * g)
                .sum::<f64>()
                .sqrt();
            if norm > c {
                scale = c / norm;
            }
        }
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (pi, p) in params.iter_mut().enumerate() {
            let g = &grads[pi];
            let m = &mut self.m[pi];
            let v = &mut self.v[pi];
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                *w -= self.lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::RngStream;

    fn sample() -> ModelParams {
        let mut meta = BTreeMap::new();
        meta.insert("seed".into(), serde_json::json!(5));
        ModelParams::new(
            "toy",
            meta,
            vec![
                (
                    "w".into(),
                    Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
                ),
                ("b".into(), Tensor::vector(vec![-1.0, 0.5])),
            ],
        )
    }

    #[test]
    fn params_round_trip_through_bytes() {
        let p = sample();
        let bytes = p.to_bytes().unwrap();
        let q = ModelParams::from_bytes(Path::new("mem"), &bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.meta_usize("seed").unwrap(), 5);
        assert_eq!(q.get("b").unwrap().data(), &[-1.0, 0.5]);
    }

    #[test]
    fn with_tensors_checks_shapes() {
        let p = sample();
        assert!(p.with_tensors(vec![Tensor::scalar(1.0)]).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![Tensor::vector(vec![3.0, -2.0])];
        let mut opt = Adam::new(&p, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p[0].data().iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &[g]);
        }
        assert!(p[0].data().iter().all(|x| x.abs() < 1e-3));
    }

    #[test]
    fn glorot_is_bounded_and_seeded() {
        let mut s1 = RngStream::new(1).sampler();
        let mut s2 = RngStream::new(1).sampler();
        let a = glorot(vec![3, 4], 3, 4, &mut s1);
        let b = glorot(vec![3, 4], 3, 4, &mut s2);
        assert_eq!(a, b);
        let lim = (6.0f64 / 7.0).sqrt();
        assert!(a.data().iter().all(|x| x.abs() <= lim));
    }
}
